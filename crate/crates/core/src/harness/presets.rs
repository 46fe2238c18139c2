//! Named environment presets and proportional down-scaling.

use crate::error::{Error, Result};

use super::config::ExperimentConfig;

pub const PRESET_NAMES: [&str; 5] = ["default-async", "heavy-delay", "sparse-straggler", "full-downlink", "ideal"];

/// `x * scale` rounded to the nearest integer, halves rounded down, and at
/// least 1.
fn scaled(x: usize, scale: f64) -> usize {
    let v = x as f64 * scale;
    ((v - 0.5).ceil() as usize).max(1)
}

/// Preset `name`, with the client count, per-group sample counts and
/// horizon multiplied by `scale`.
pub fn preset(name: &str, scale: f64) -> Result<ExperimentConfig> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::invalid(format!("scale {scale} must lie in (0, 1]")));
    }
    let mut c = ExperimentConfig::default();
    c.experiment.name = name.to_string();
    match name {
        "default-async" => {}
        "heavy-delay" => {
            c.delay.tail = 0.8;
            c.delay.l_max = 5;
        }
        "sparse-straggler" => {
            c.clients.availability = vec![0.025, 0.01, 0.0025, 0.0005];
            c.delay.step = 10;
            c.delay.tail = 0.4;
            c.delay.l_max = 60;
        }
        "full-downlink" => c.algorithms.full_downlink = true,
        "ideal" => {
            c.clients.availability = vec![1.0];
            c.delay.tail = 0.0;
            c.delay.l_max = 0;
        }
        other => {
            return Err(Error::invalid(format!(
                "unknown preset `{other}`; expected one of {}",
                PRESET_NAMES.join(", ")
            )))
        }
    }
    if scale < 1.0 {
        let groups = c.clients.group_sizes.len();
        let per_group = scaled(c.clients.count / groups, scale);
        c.clients.count = per_group * groups;
        c.clients.group_sizes = c.clients.group_sizes.iter().map(|&s| scaled(s, scale)).collect();
        c.experiment.horizon = scaled(c.experiment.horizon, scale);
        c.experiment.note = format!(
            "scaled by {scale}: clients {}, group sizes {:?}, horizon {} (nearest integer, halves rounded down)",
            c.clients.count, c.clients.group_sizes, c.experiment.horizon
        );
    }
    c.validate()?;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_presets() {
        let d = preset("default-async", 1.0).unwrap();
        assert_eq!((d.delay.tail, d.delay.l_max), (0.2, 10));
        assert_eq!(d.clients.availability, vec![0.25, 0.1, 0.025, 0.005]);
        let h = preset("heavy-delay", 1.0).unwrap();
        assert_eq!((h.delay.tail, h.delay.l_max), (0.8, 5));
        let s = preset("sparse-straggler", 1.0).unwrap();
        assert_eq!((s.delay.tail, s.delay.l_max, s.delay.step), (0.4, 60, 10));
        assert_eq!(s.clients.availability, vec![0.025, 0.01, 0.0025, 0.0005]);
        assert!(preset("full-downlink", 1.0).unwrap().algorithms.full_downlink);
        let i = preset("ideal", 1.0).unwrap();
        assert_eq!((i.delay.tail, i.clients.availability.clone()), (0.0, vec![1.0]));
        assert!(preset("nope", 1.0).is_err());
        assert!(preset("ideal", 0.0).is_err());
    }

    #[test]
    fn eighth_scale() {
        let c = preset("default-async", 1.0 / 8.0).unwrap();
        assert_eq!(c.clients.count, 32);
        assert_eq!(c.clients.group_sizes, vec![62, 125, 187, 250]);
        assert_eq!(c.experiment.horizon, 250);
        assert!(c.experiment.note.contains("halves rounded down"));
    }
}
