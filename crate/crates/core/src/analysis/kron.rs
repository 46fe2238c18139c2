//! Block Kronecker product and block vectorization for square blocks of
//! size `bs`.
//!
//! For `A = [A_ij]` and `B = [B_kl]`, `A (x)_b B = [[A_ij (x) B_kl]_kl]_ij`,
//! and `bvec M` stacks `vec M_ij` (column-major) with the block column `j`
//! outermost. Together they satisfy `bvec(X S Y) = (Y^T (x)_b X) bvec S`.

use crate::error::{Error, Result};

use super::dense::Mat;
use super::sparse::Csr;

/// Position of `A[ra, ca] * B[rb, cb]` in `A (x)_b B`, where `b_blocks`
/// is the number of block rows (or columns) of `B`.
#[inline]
pub fn kron_index(a: usize, b: usize, bs: usize, b_blocks: usize) -> usize {
    let (i, ra) = (a / bs, a % bs);
    let (k, rb) = (b / bs, b % bs);
    ((i * b_blocks + k) * bs + ra) * bs + rb
}

/// Position of `M[r, c]` in `bvec M` for a matrix with `blocks` block rows.
#[inline]
pub fn bvec_index(r: usize, c: usize, bs: usize, blocks: usize) -> usize {
    let (i, ri) = (r / bs, r % bs);
    let (j, cj) = (c / bs, c % bs);
    ((j * blocks + i) * bs + cj) * bs + ri
}

fn check_blocks(rows: usize, cols: usize, bs: usize) -> Result<()> {
    if bs == 0 || rows % bs != 0 || cols % bs != 0 {
        return Err(Error::invalid(format!("{rows}x{cols} matrix is not tiled by {bs}x{bs} blocks")));
    }
    Ok(())
}

pub fn block_kron(a: &Mat, b: &Mat, bs: usize) -> Result<Mat> {
    check_blocks(a.rows(), a.cols(), bs)?;
    check_blocks(b.rows(), b.cols(), bs)?;
    let (bp, bq) = (b.rows() / bs, b.cols() / bs);
    let mut out = Mat::zeros(a.rows() * b.rows(), a.cols() * b.cols());
    for ra in 0..a.rows() {
        for ca in 0..a.cols() {
            let va = a[(ra, ca)];
            if va == 0.0 {
                continue;
            }
            for rb in 0..b.rows() {
                for cb in 0..b.cols() {
                    out[(kron_index(ra, rb, bs, bp), kron_index(ca, cb, bs, bq))] += va * b[(rb, cb)];
                }
            }
        }
    }
    Ok(out)
}

pub fn block_kron_sparse(a: &Csr, b: &Csr, bs: usize) -> Result<Csr> {
    check_blocks(a.rows(), a.cols(), bs)?;
    check_blocks(b.rows(), b.cols(), bs)?;
    let (bp, bq) = (b.rows() / bs, b.cols() / bs);
    let mut t = Vec::with_capacity(a.nnz() * b.nnz());
    for ra in 0..a.rows() {
        for rb in 0..b.rows() {
            let r = kron_index(ra, rb, bs, bp);
            for (ca, va) in a.row(ra) {
                for (cb, vb) in b.row(rb) {
                    t.push((r, kron_index(ca, cb, bs, bq), va * vb));
                }
            }
        }
    }
    Ok(Csr::from_triplets(a.rows() * b.rows(), a.cols() * b.cols(), t))
}

pub fn bvec(m: &Mat, bs: usize) -> Result<Vec<f64>> {
    check_blocks(m.rows(), m.cols(), bs)?;
    if m.rows() != m.cols() {
        return Err(Error::invalid("bvec expects a square matrix"));
    }
    let blocks = m.rows() / bs;
    let mut v = vec![0.0; m.rows() * m.cols()];
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            v[bvec_index(r, c, bs, blocks)] = m[(r, c)];
        }
    }
    Ok(v)
}

/// Inverse of [`bvec`] for an `n x n` matrix.
pub fn bvec_inv(v: &[f64], n: usize, bs: usize) -> Result<Mat> {
    check_blocks(n, n, bs)?;
    if v.len() != n * n {
        return Err(Error::invalid(format!("vector of length {} is not bvec of a {n}x{n} matrix", v.len())));
    }
    let blocks = n / bs;
    let mut m = Mat::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            m[(r, c)] = v[bvec_index(r, c, bs, blocks)];
        }
    }
    Ok(m)
}
