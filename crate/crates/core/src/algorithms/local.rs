//! Client-side LMS refinements.

use crate::error::{Error, Result};
use crate::stream::{dot, Sample};

use super::masks::SelectionMask;

/// A client's local model and learning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub model: Vec<f64>,
    pub mu: f64,
}

impl ClientState {
    pub fn new(dim: usize, mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {mu}")));
        }
        Ok(Self { model: vec![0.0; dim], mu })
    }

    /// Overwrites the `downlink` coordinates with the server's values, takes
    /// one LMS step on the merged model and returns the model at `uplink`
    /// (in increasing coordinate order).
    pub fn step_available(
        &mut self,
        server: &[f64],
        downlink: &SelectionMask,
        uplink: &SelectionMask,
        sample: &Sample,
    ) -> Result<Vec<f64>> {
        client_step_available(&mut self.model, server, downlink, sample, self.mu)?;
        Ok(uplink.indices().into_iter().map(|j| self.model[j]).collect())
    }

    pub fn step_autonomous(&mut self, sample: &Sample) -> Result<()> {
        client_step_autonomous(&mut self.model, sample, self.mu).map(|_| ())
    }
}

fn check(model: &[f64], sample: &Sample) -> Result<()> {
    if model.len() != sample.z.len() {
        return Err(Error::invalid(format!(
            "model has dimension {}, feature vector {}",
            model.len(),
            sample.z.len()
        )));
    }
    Ok(())
}

/// In-place `w_k <- M w + (I - M) w_k + mu z e`, `e` taken on the merged
/// model. Returns `e`.
pub fn client_step_available(
    local: &mut [f64],
    server: &[f64],
    downlink: &SelectionMask,
    sample: &Sample,
    mu: f64,
) -> Result<f64> {
    check(local, sample)?;
    if server.len() != local.len() || downlink.dim() != local.len() {
        return Err(Error::invalid("server model or mask dimension mismatch"));
    }
    for j in downlink.iter() {
        local[j] = server[j];
    }
    let e = sample.y - dot(local, &sample.z);
    lms_update(local, &sample.z, mu * e);
    Ok(e)
}

/// In-place `w_k <- w_k + mu z (y - w_k . z)`. Returns the error.
pub fn client_step_autonomous(local: &mut [f64], sample: &Sample, mu: f64) -> Result<f64> {
    check(local, sample)?;
    let e = sample.y - dot(local, &sample.z);
    lms_update(local, &sample.z, mu * e);
    Ok(e)
}

fn lms_update(w: &mut [f64], z: &[f64], gain: f64) {
    for (wi, zi) in w.iter_mut().zip(z) {
        *wi += gain * zi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(z: &[f64], y: f64) -> Sample {
        Sample { z: z.to_vec(), y }
    }

    #[test]
    fn zero_rate_only_merges() {
        let mut w = vec![5.0, 6.0, 7.0];
        let m = SelectionMask::new(3, 1, 1).unwrap();
        client_step_available(&mut w, &[1.0, 2.0, 3.0], &m, &sample(&[1.0, 1.0, 1.0], 9.0), 0.0).unwrap();
        assert_eq!(w, vec![5.0, 2.0, 7.0]);
    }

    #[test]
    fn full_mask_is_fedsgd_step() {
        let server = [0.5, -1.0];
        let s = sample(&[1.0, 2.0], 1.0);
        let mut w = vec![9.0, 9.0];
        client_step_available(&mut w, &server, &SelectionMask::full(2), &s, 0.1).unwrap();
        let e = 1.0 - (0.5 - 2.0);
        assert_eq!(w, vec![0.5 + 0.1 * e, -1.0 + 0.2 * e]);
    }

    #[test]
    fn hand_example() {
        let mut c = ClientState { model: vec![0.0, 1.0], mu: 0.5 };
        let m = SelectionMask::new(2, 0, 1).unwrap();
        let payload = c.step_available(&[1.0, 0.0], &m, &SelectionMask::full(2), &sample(&[1.0, 1.0], 2.0)).unwrap();
        assert_eq!(c.model, vec![1.0, 1.0]);
        assert_eq!(payload, vec![1.0, 1.0]);
    }

    #[test]
    fn autonomous_steps() {
        let mut w = vec![0.5, -0.25];
        client_step_autonomous(&mut w, &sample(&[1.0, 1.0], 5.0), 0.0).unwrap();
        assert_eq!(w, vec![0.5, -0.25]);
        client_step_autonomous(&mut w, &sample(&[2.0, 1.0], 0.75), 0.7).unwrap();
        assert_eq!(w, vec![0.5, -0.25]);
        let mut w = vec![0.0, 0.0];
        client_step_autonomous(&mut w, &sample(&[1.0, 0.0], 1.0), 0.5).unwrap();
        assert_eq!(w, vec![0.5, 0.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let mut w = vec![0.0; 3];
        assert!(client_step_autonomous(&mut w, &sample(&[1.0], 0.0), 0.1).is_err());
        assert!(ClientState::new(3, 0.0).is_err());
    }
}
