//! Eigenvalue, spectral-radius and linear-solve routines.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rff::FeatureMap;
use crate::rng::{substream, Stream};

use super::dense::Mat;

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerResult {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Dominant eigenvalue magnitude of the operator `op` (writing `A x` into
/// its second argument), started from the all-ones vector.
pub fn power_iteration(
    n: usize,
    mut op: impl FnMut(&[f64], &mut [f64]),
    tol: f64,
    max_iter: usize,
) -> PowerResult {
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut y = vec![0.0; n];
    let mut prev = f64::NAN;
    for it in 1..=max_iter {
        op(&x, &mut y);
        let lambda = norm(&y);
        if lambda == 0.0 {
            return PowerResult { value: 0.0, iterations: it, converged: true };
        }
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / lambda;
        }
        if (lambda - prev).abs() <= tol * lambda.max(1.0) {
            return PowerResult { value: lambda, iterations: it, converged: true };
        }
        prev = lambda;
    }
    PowerResult { value: prev, iterations: max_iter, converged: false }
}

/// All eigenvalues of a symmetric matrix by cyclic Jacobi rotations,
/// in decreasing order.
pub fn symmetric_eigenvalues(m: &Mat) -> Vec<f64> {
    let n = m.rows();
    let mut a = m.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[(i, j)].powi(2)).sum();
        let diag: f64 = (0..n).map(|i| a[(i, i)].powi(2)).sum();
        if off <= 1e-30 * diag.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

pub fn max_eigenvalue(m: &Mat) -> f64 {
    symmetric_eigenvalues(m).first().copied().unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solve {
    pub x: Vec<f64>,
    pub relative_residual: f64,
    pub iterations: usize,
}

/// Restarted GMRES for `A x = b`, `A` given as an operator.
pub fn gmres(
    n: usize,
    mut op: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<Solve> {
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(Solve { x, relative_residual: 0.0, iterations: 0 });
    }
    let mut ax = vec![0.0; n];
    let mut total = 0;
    let mut rel = 1.0;
    while total < max_iter {
        op(&x, &mut ax);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        rel = beta / bnorm;
        if rel <= tol {
            return Ok(Solve { x, relative_residual: rel, iterations: total });
        }
        let m = restart.min(max_iter - total).max(1);
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|ri| ri / beta).collect()];
        let mut h = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for j in 0..m {
            let mut w = vec![0.0; n];
            op(&v[j], &mut w);
            for i in 0..=j {
                h[i][j] = dot(&w, &v[i]);
                for (wk, vk) in w.iter_mut().zip(&v[i]) {
                    *wk -= h[i][j] * vk;
                }
            }
            // second Gram-Schmidt pass for stability
            for i in 0..=j {
                let c = dot(&w, &v[i]);
                h[i][j] += c;
                for (wk, vk) in w.iter_mut().zip(&v[i]) {
                    *wk -= c * vk;
                }
            }
            h[j + 1][j] = norm(&w);
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let d = (h[j][j] * h[j][j] + h[j + 1][j] * h[j + 1][j]).sqrt();
            (cs[j], sn[j]) = if d == 0.0 { (1.0, 0.0) } else { (h[j][j] / d, h[j + 1][j] / d) };
            h[j][j] = d;
            let hj1 = h[j + 1][j];
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            k_used = j + 1;
            total += 1;
            if g[j + 1].abs() / bnorm <= tol * 0.5 || hj1 == 0.0 {
                break;
            }
            v.push(w.iter().map(|wk| wk / hj1).collect());
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let s: f64 = (i + 1..k_used).map(|l| h[i][l] * y[l]).sum();
            y[i] = (g[i] - s) / h[i][i];
        }
        for (i, yi) in y.iter().enumerate() {
            for (xk, vk) in x.iter_mut().zip(&v[i]) {
                *xk += yi * vk;
            }
        }
    }
    op(&x, &mut ax);
    let final_rel = norm(&b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect::<Vec<_>>()) / bnorm;
    if final_rel <= tol {
        Ok(Solve { x, relative_residual: final_rel, iterations: total })
    } else {
        Err(Error::SolverStalled(final_rel.min(rel).max(final_rel)))
    }
}

/// Sample average of `z z^T` over `samples` inputs drawn uniformly from
/// `[-1, 1]^L` and mapped through `fm`.
pub fn estimate_correlation(fm: &FeatureMap, samples: usize, seed: u64) -> Result<Mat> {
    if samples == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    let d = fm.dim_out();
    const CHUNK: usize = 4096;
    let chunks = samples.div_ceil(CHUNK);
    let partial: Vec<Result<Vec<f64>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(seed, Stream::Custom(10_000 + c as u32));
            let mut acc = vec![0.0; d * d];
            let mut z = vec![0.0; d];
            let count = CHUNK.min(samples - c * CHUNK);
            for _ in 0..count {
                let x: Vec<f64> = (0..fm.dim_in()).map(|_| rng.random_range(-1.0..=1.0)).collect();
                fm.map_into(&x, &mut z)?;
                for i in 0..d {
                    for j in i..d {
                        acc[i * d + j] += z[i] * z[j];
                    }
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = vec![0.0; d * d];
    for p in partial {
        for (t, v) in total.iter_mut().zip(p?) {
            *t += v;
        }
    }
    let mut m = Mat::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let v = total[i * d + j] / samples as f64;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_known_spectrum() {
        let m = Mat::from_rows(&[vec![2.0, 1.0, 0.0], vec![1.0, 2.0, 0.0], vec![0.0, 0.0, 5.0]]);
        let ev = symmetric_eigenvalues(&m);
        for (a, b) in ev.iter().zip([5.0, 3.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(max_eigenvalue(&Mat::identity(4)), 1.0);
    }

    #[test]
    fn power_iteration_on_diagonal() {
        let d = [0.5, -0.9, 0.3];
        let r = power_iteration(3, |x, y| y.iter_mut().zip(x).zip(d).for_each(|((yi, xi), di)| *yi = di * xi), 1e-12, 10_000);
        assert!(r.converged);
        assert!((r.value - 0.9).abs() < 1e-9);
    }

    #[test]
    fn gmres_solves_nonsymmetric_system() {
        let a = Mat::from_rows(&[vec![4.0, 1.0, 0.0], vec![-1.0, 3.0, 2.0], vec![0.5, 0.0, 2.0]]);
        let x_true = [1.0, -2.0, 0.5];
        let b = a.mul_vec(&x_true);
        let s = gmres(3, |x, y| y.copy_from_slice(&a.mul_vec(x)), &b, 1e-13, 2, 100).unwrap();
        for (u, v) in s.x.iter().zip(x_true) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn correlation_is_symmetric_with_unit_trace() {
        let fm = FeatureMap::new(3, 4, 8, 1.0).unwrap();
        let r = estimate_correlation(&fm, 20_000, 1).unwrap();
        assert_eq!(r, r.transpose());
        // trace R = E|z|^2, checked against fresh inputs
        let mut rng = substream(99, Stream::Custom(1));
        let n = 20_000;
        let direct: f64 = (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..=1.0)).collect();
                fm.map(&x).unwrap().iter().map(|v| v * v).sum::<f64>()
            })
            .sum::<f64>()
            / n as f64;
        assert!((r.trace() - direct).abs() < 0.02);
        assert!(symmetric_eigenvalues(&r).iter().all(|&l| l > -1e-12));
    }
}
