//! Low-rank adapters: `W0 + ΔW = W0 + B·A`.

use rand::Rng;

use super::ModelError;
use crate::numerics::{ops, Tensor};

/// Rank-`r` residual on a frozen `d × k` matrix.
///
/// `a` is `r × k` and `b` is `d × r`. A fresh adapter has `b = 0`, so the
/// effective weight equals the frozen one.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter {
    pub a: Tensor,
    pub b: Tensor,
}

impl LoraAdapter {
    /// `A ~ N(0, std²)`, `B = 0`.
    pub fn init<R: Rng + ?Sized>(d: usize, k: usize, rank: usize, std: f64, rng: &mut R) -> Self {
        Self {
            a: Tensor::randn(&[rank, k], std, rng),
            b: Tensor::zeros(&[d, rank]),
        }
    }

    pub fn new(a: Tensor, b: Tensor) -> Result<Self, ModelError> {
        let (r, _) = a.dims2();
        let (_, rb) = b.dims2();
        if a.shape().len() != 2 || b.shape().len() != 2 || r != rb {
            return Err(ModelError::AdapterShape {
                a: a.shape().to_vec(),
                b: b.shape().to_vec(),
            });
        }
        Ok(Self { a, b })
    }

    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    /// `(d, k)` of the matrix this adapter modifies.
    pub fn owning_dims(&self) -> (usize, usize) {
        (self.b.rows(), self.a.cols())
    }

    pub fn param_count(&self) -> usize {
        self.a.len() + self.b.len()
    }

    /// Materialized `B·A`. Only used for diagnostics and product averaging.
    pub fn delta(&self) -> Tensor {
        ops::matmul(&self.b, &self.a).expect("adapter factors are shape-compatible")
    }
}

/// `x · (W0 + BA)ᵀ`, evaluated as `x·W0ᵀ + (x·Aᵀ)·Bᵀ` so that `B·A` is never
/// formed at full size.
pub fn lora_apply(x: &Tensor, w0: &Tensor, adapter: &LoraAdapter) -> Result<Tensor, ModelError> {
    let (d, k) = w0.dims2();
    if adapter.owning_dims() != (d, k) {
        return Err(ModelError::AdapterShape {
            a: adapter.a.shape().to_vec(),
            b: adapter.b.shape().to_vec(),
        });
    }
    let base = ops::gemm(x, false, w0, true)?;
    let low = ops::gemm(x, false, &adapter.a, true)?;
    let delta = ops::gemm(&low, false, &adapter.b, true)?;
    Ok(base.add(&delta)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_b_is_the_base_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w0 = Tensor::randn(&[6, 5], 1.0, &mut rng);
        let x = Tensor::randn(&[3, 5], 1.0, &mut rng);
        let adapter = LoraAdapter::init(6, 5, 2, 0.02, &mut rng);
        let base = ops::gemm(&x, false, &w0, true).unwrap();
        assert_eq!(lora_apply(&x, &w0, &adapter).unwrap(), base);
    }

    #[test]
    fn hand_computed_rank_one_update() {
        let w0 = Tensor::identity(2);
        let b = Tensor::matrix(&[&[1.0], &[0.0]]).unwrap();
        let a = Tensor::matrix(&[&[0.0, 1.0]]).unwrap();
        let x = Tensor::matrix(&[&[1.0, 1.0]]).unwrap();
        let y = lora_apply(&x, &w0, &LoraAdapter::new(a, b).unwrap()).unwrap();
        assert_eq!(y.data(), &[2.0, 1.0]);
    }

    #[test]
    fn factored_matches_explicit_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let (d, k, r) = (7, 5, 3);
            let w0 = Tensor::randn(&[d, k], 1.0, &mut rng);
            let adapter = LoraAdapter::new(
                Tensor::randn(&[r, k], 1.0, &mut rng),
                Tensor::randn(&[d, r], 1.0, &mut rng),
            )
            .unwrap();
            let x = Tensor::randn(&[4, k], 1.0, &mut rng);
            // explicit: x · (W0 + BA)ᵀ, with BA formed by brute-force loops
            let mut w = w0.data().to_vec();
            for i in 0..d {
                for j in 0..k {
                    for p in 0..r {
                        w[i * k + j] += adapter.b.get(i, p) * adapter.a.get(p, j);
                    }
                }
            }
            let mut explicit = vec![0.0; 4 * d];
            for n in 0..4 {
                for i in 0..d {
                    explicit[n * d + i] = (0..k).map(|j| x.get(n, j) * w[i * k + j]).sum();
                }
            }
            let explicit = Tensor::new(vec![4, d], explicit).unwrap();
            let factored = lora_apply(&x, &w0, &adapter).unwrap();
            assert!(factored.max_abs_diff(&explicit) < 1e-12);
        }
    }

    #[test]
    fn mismatched_adapter_is_rejected() {
        let w0 = Tensor::identity(3);
        let adapter = LoraAdapter::new(Tensor::zeros(&[1, 2]), Tensor::zeros(&[3, 1])).unwrap();
        let x = Tensor::zeros(&[1, 3]);
        assert!(lora_apply(&x, &w0, &adapter).is_err());
        assert!(LoraAdapter::new(Tensor::zeros(&[2, 3]), Tensor::zeros(&[3, 1])).is_err());
    }
}
