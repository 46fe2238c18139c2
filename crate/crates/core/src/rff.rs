//! Random Fourier feature map for the Gaussian kernel.
//!
//! The map `z(x)_i = sqrt(2/D) cos(w_i . x + b_i)` with `w_i ~ N(0, I/sigma^2)`
//! and `b_i ~ U[0, 2pi)` satisfies `E[z(x) . z(x')] = exp(-|x - x'|^2 / (2 sigma^2))`.
//! One map is built per experiment arm and shared by the server and every
//! client, so all models live in the same feature space.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

/// The four values from which a seeded map is rebuilt bit-for-bit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureMapDescriptor {
    pub seed: u64,
    pub dim_in: usize,
    pub dim_out: usize,
    pub kernel_width: f64,
}

/// Frozen random projection into a `dim_out`-dimensional feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    /// Row-major `dim_out x dim_in`.
    frequencies: Vec<f64>,
    phases: Vec<f64>,
    dim_in: usize,
    dim_out: usize,
    kernel_width: f64,
    scale: f64,
    seed: Option<u64>,
}

impl FeatureMap {
    /// Draws a map for the Gaussian kernel of bandwidth `kernel_width`.
    pub fn new(seed: u64, dim_in: usize, dim_out: usize, kernel_width: f64) -> Result<Self> {
        check_dims(dim_in, dim_out, kernel_width)?;
        let mut rng = substream(seed, Stream::FeatureMap);
        let frequencies = (0..dim_in * dim_out)
            .map(|_| rng.sample::<f64, _>(StandardNormal) / kernel_width)
            .collect();
        let phases = (0..dim_out).map(|_| rng.random_range(0.0..TAU)).collect();
        Ok(Self {
            frequencies,
            phases,
            dim_in,
            dim_out,
            kernel_width,
            scale: (2.0 / dim_out as f64).sqrt(),
            seed: Some(seed),
        })
    }

    /// Builds a map from explicit parameters. Such maps carry no seed and
    /// therefore have no descriptor.
    pub fn from_parts(
        frequencies: Vec<Vec<f64>>,
        phases: Vec<f64>,
        kernel_width: f64,
    ) -> Result<Self> {
        let dim_out = frequencies.len();
        let dim_in = frequencies.first().map_or(0, Vec::len);
        check_dims(dim_in, dim_out, kernel_width)?;
        if frequencies.iter().any(|row| row.len() != dim_in) {
            return Err(Error::invalid("frequency rows must all have length dim_in"));
        }
        if phases.len() != dim_out {
            return Err(Error::invalid(format!(
                "expected {dim_out} phases, got {}",
                phases.len()
            )));
        }
        if let Some(b) = phases.iter().find(|b| !(0.0..TAU).contains(*b)) {
            return Err(Error::invalid(format!("phase {b} outside [0, 2pi)")));
        }
        Ok(Self {
            frequencies: frequencies.into_iter().flatten().collect(),
            phases,
            dim_in,
            dim_out,
            kernel_width,
            scale: (2.0 / dim_out as f64).sqrt(),
            seed: None,
        })
    }

    pub fn from_descriptor(d: &FeatureMapDescriptor) -> Result<Self> {
        Self::new(d.seed, d.dim_in, d.dim_out, d.kernel_width)
    }

    pub fn descriptor(&self) -> Option<FeatureMapDescriptor> {
        self.seed.map(|seed| FeatureMapDescriptor {
            seed,
            dim_in: self.dim_in,
            dim_out: self.dim_out,
            kernel_width: self.kernel_width,
        })
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn kernel_width(&self) -> f64 {
        self.kernel_width
    }

    /// Row `i` of the frequency matrix.
    pub fn frequency(&self, i: usize) -> &[f64] {
        &self.frequencies[i * self.dim_in..(i + 1) * self.dim_in]
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    /// Maps `x` into feature space.
    pub fn map(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim_out];
        self.map_into(x, &mut out)?;
        Ok(out)
    }

    pub fn map_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.dim_in {
            return Err(Error::invalid(format!(
                "input has length {}, feature map expects {}",
                x.len(),
                self.dim_in
            )));
        }
        if out.len() != self.dim_out {
            return Err(Error::invalid("output buffer has wrong length"));
        }
        for (i, o) in out.iter_mut().enumerate() {
            let arg: f64 = self
                .frequency(i)
                .iter()
                .zip(x)
                .map(|(w, xi)| w * xi)
                .sum::<f64>()
                + self.phases[i];
            *o = self.scale * arg.cos();
        }
        Ok(())
    }

    /// Exact Gaussian kernel value this map approximates.
    pub fn kernel(&self, x: &[f64], y: &[f64]) -> f64 {
        gaussian_kernel(x, y, self.kernel_width)
    }
}

fn check_dims(dim_in: usize, dim_out: usize, kernel_width: f64) -> Result<()> {
    if dim_in == 0 {
        return Err(Error::invalid("input dimension must be at least 1"));
    }
    if dim_out == 0 {
        return Err(Error::invalid("feature dimension must be at least 1"));
    }
    if !(kernel_width > 0.0 && kernel_width.is_finite()) {
        return Err(Error::invalid(format!(
            "kernel width must be positive, got {kernel_width}"
        )));
    }
    Ok(())
}

pub fn gaussian_kernel(x: &[f64], y: &[f64], width: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (2.0 * width * width)).exp()
}

/// Median pairwise Euclidean distance of `points`.
pub fn median_heuristic(points: &[Vec<f64>]) -> Result<f64> {
    let mut dists = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            dists.push(d2.sqrt());
        }
    }
    if dists.is_empty() {
        return Err(Error::invalid("median heuristic needs at least two points"));
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 0 {
        0.5 * (dists[mid - 1] + dists[mid])
    } else {
        dists[mid]
    };
    if median > 0.0 {
        Ok(median)
    } else {
        Err(Error::invalid("probe points are degenerate (median distance 0)"))
    }
}
