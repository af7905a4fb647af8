//! Plain (tape-free) tensor kernels shared by the graph and by inference code.
//!
//! `gemm` accumulates every output element sequentially over the inner index,
//! starting from zero, so an entry of a product does not depend on which other
//! rows or columns were computed alongside it.

use super::tensor::{check_finite, Tensor};
use super::NumericsError;

const MR: usize = 4;
const NR: usize = 16;

/// `out[m×n] = a[m×k] · b[k×n]`, all row-major. Tiles of `MR × NR` outputs
/// stay in registers across the whole inner loop; each output still starts
/// at zero and adds its `k` products in index order.
fn gemm_kernel(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    let m_full = m - m % MR;
    let n_full = n - n % NR;
    for i0 in (0..m_full).step_by(MR) {
        for j0 in (0..n_full).step_by(NR) {
            let mut acc = [[0.0f64; NR]; MR];
            for p in 0..k {
                let bp: &[f64; NR] = b[p * n + j0..p * n + j0 + NR].try_into().expect("tile");
                for (r, acc_row) in acc.iter_mut().enumerate() {
                    let av = a[(i0 + r) * k + p];
                    for c in 0..NR {
                        acc_row[c] += av * bp[c];
                    }
                }
            }
            for (r, acc_row) in acc.iter().enumerate() {
                out[(i0 + r) * n + j0..(i0 + r) * n + j0 + NR].copy_from_slice(acc_row);
            }
        }
    }
    // Ragged edges: remaining columns of full row blocks, then remaining rows.
    if n_full < n {
        for i in 0..m_full {
            edge_row(a, b, out, i, k, n, n_full);
        }
    }
    for i in m_full..m {
        edge_row(a, b, out, i, k, n, 0);
    }
}

fn edge_row(a: &[f64], b: &[f64], out: &mut [f64], i: usize, k: usize, n: usize, j_start: usize) {
    let a_row = &a[i * k..(i + 1) * k];
    let out_row = &mut out[i * n + j_start..(i + 1) * n];
    for (p, &aip) in a_row.iter().enumerate() {
        let b_row = &b[p * n + j_start..(p + 1) * n];
        for (o, &bv) in out_row.iter_mut().zip(b_row) {
            *o += aip * bv;
        }
    }
}

/// Inner dimensions after applying the transpose flags, or a shape error.
pub(crate) fn gemm_dims(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Result<(usize, usize, usize), NumericsError> {
    if a.shape().len() != 2 || b.shape().len() != 2 {
        return Err(NumericsError::ShapeMismatch {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let (ar, ac) = a.dims2();
    let (br, bc) = b.dims2();
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    if k != k2 {
        return Err(NumericsError::ShapeMismatch {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok((m, k, n))
}

pub(crate) fn gemm(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Result<Tensor, NumericsError> {
    gemm_dims(a, ta, b, tb)?;
    let out = gemm_product(a, ta, b, tb);
    check_finite("matmul", out.data())?;
    Ok(out)
}

/// `op(a) · op(b)` for operands whose dimensions are already known to agree.
/// Transposed operands use the tensor's cached transpose.
pub(crate) fn gemm_product(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Tensor {
    let (ar, ac) = a.dims2();
    let (br, bc) = b.dims2();
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let n = if tb { br } else { bc };
    debug_assert_eq!(k, if tb { bc } else { br });
    let a_t;
    let a_rm: &[f64] = if ta {
        a_t = a.transposed_data();
        &a_t
    } else {
        a.data()
    };
    let b_t;
    let b_rm: &[f64] = if tb {
        b_t = b.transposed_data();
        &b_t
    } else {
        b.data()
    };
    let mut data = vec![0.0; m * n];
    gemm_kernel(a_rm, b_rm, &mut data, m, k, n);
    Tensor::from_parts(vec![m, n], data)
}

/// Matrix product of `a[m×k]` and `b[k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    gemm(a, false, b, false)
}

/// Numerically stable softmax of one row.
pub(crate) fn softmax_slice(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(logits) {
        *o = (x - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// `log(Σ exp(x))` with max subtraction.
pub(crate) fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Softmax over a 1-D tensor (or each row of a matrix).
pub fn softmax(logits: &Tensor) -> Result<Tensor, NumericsError> {
    if logits.is_empty() {
        return Err(NumericsError::Empty("softmax"));
    }
    let (r, c) = logits.dims2();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        softmax_slice(logits.row(i), &mut out[i * c..(i + 1) * c]);
    }
    check_finite("softmax", &out)?;
    Ok(Tensor::from_parts(logits.shape().to_vec(), out))
}

/// Tolerance on the total mass of a target distribution.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-9;

pub(crate) fn check_distribution(target: &[f64]) -> Result<(), NumericsError> {
    let sum: f64 = target.iter().sum();
    if target.iter().any(|&t| t < 0.0 || !t.is_finite()) || (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
        return Err(NumericsError::NotADistribution(sum));
    }
    Ok(())
}

/// `−Σ_l target(l) · log softmax(scores)(l)` for one score vector.
pub fn cross_entropy_soft(scores: &Tensor, target: &Tensor) -> Result<f64, NumericsError> {
    if scores.shape() != target.shape() || scores.shape().len() != 1 {
        return Err(NumericsError::ShapeMismatch {
            op: "cross_entropy_soft",
            left: scores.shape().to_vec(),
            right: target.shape().to_vec(),
        });
    }
    check_distribution(target.data())?;
    Ok(row_soft_ce(scores.data(), target.data()))
}

pub(crate) fn row_soft_ce(scores: &[f64], target: &[f64]) -> f64 {
    let lse = log_sum_exp(scores);
    let loss: f64 = scores
        .iter()
        .zip(target)
        .filter(|(_, &t)| t != 0.0)
        .map(|(&s, &t)| t * (lse - s))
        .sum();
    loss.max(0.0)
}
