//! Semantic-independent encoder.
//!
//! The input `Z` is an `M×N` matrix whose `N` columns are state-like vectors
//! and whose rows hold homogeneous quantities (e.g. every column's `cx`). The
//! encoder applies a kernel-size-1 convolution along each row with weights
//! shared by all rows, a `tanh`, a mean over the `C` convolution channels
//! (leaving one value per row) and finally a dense layer mixing the rows.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, ParamId, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::uniform;

/// Default number of convolution channels.
pub const DEFAULT_CHANNELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SieConfig {
    /// Rows of the input (semantic components).
    pub m: usize,
    /// Columns of the input (stacked vectors).
    pub n: usize,
    pub channels: usize,
    pub emb_dim: usize,
}

impl SieConfig {
    /// `C = 4`, `E = M`.
    pub fn new(m: usize, n: usize) -> Self {
        SieConfig {
            m,
            n,
            channels: DEFAULT_CHANNELS,
            emb_dim: m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.channels == 0 || self.emb_dim == 0 {
            return Err(Error::domain(format!("SIE dimensions must be >= 1: {self:?}")));
        }
        Ok(())
    }
}

/// Encoder weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SieParams {
    /// `C×N`.
    pub conv_w: Mat,
    /// `C×1`.
    pub conv_b: Mat,
    /// `E×M`.
    pub fc_w: Mat,
    /// `E×1`.
    pub fc_b: Mat,
}

impl SieParams {
    pub fn check(&self, cfg: &SieConfig) -> Result<()> {
        let shapes = [
            (self.conv_w.shape(), (cfg.channels, cfg.n)),
            (self.conv_b.shape(), (cfg.channels, 1)),
            (self.fc_w.shape(), (cfg.emb_dim, cfg.m)),
            (self.fc_b.shape(), (cfg.emb_dim, 1)),
        ];
        if shapes.iter().any(|(got, want)| got != want) {
            return Err(Error::domain("SIE parameter shapes do not match config"));
        }
        let finite = [&self.conv_w, &self.conv_b, &self.fc_w, &self.fc_b]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::numeric("non-finite SIE parameter"));
        }
        Ok(())
    }
}

/// Uniform `±1/sqrt(fan_in)` per layer: `N` for the convolution, `M` for the dense layer.
pub fn sie_init(cfg: &SieConfig, seed: u64) -> Result<SieParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conv_bound = 1.0 / (cfg.n as f64).sqrt();
    let fc_bound = 1.0 / (cfg.m as f64).sqrt();
    Ok(SieParams {
        conv_w: uniform(&mut rng, cfg.channels, cfg.n, conv_bound),
        conv_b: uniform(&mut rng, cfg.channels, 1, conv_bound),
        fc_w: uniform(&mut rng, cfg.emb_dim, cfg.m, fc_bound),
        fc_b: uniform(&mut rng, cfg.emb_dim, 1, fc_bound),
    })
}

fn check_input(cfg: &SieConfig, z: &Mat) -> Result<()> {
    if z.shape() != (cfg.m, cfg.n) {
        return Err(Error::domain(format!(
            "SIE expects {}x{} input, got {}x{}",
            cfg.m,
            cfg.n,
            z.nrows(),
            z.ncols()
        )));
    }
    Ok(())
}

/// Convolution, `tanh` and channel pooling: one value per input row.
pub fn sie_pooled(params: &SieParams, cfg: &SieConfig, z: &Mat) -> Result<Mat> {
    check_input(cfg, z)?;
    params.check(cfg)?;
    let mut v = Mat::zeros(cfg.m, 1);
    for j in 0..cfg.m {
        let mut acc = 0.0;
        for c in 0..cfg.channels {
            let mut s = params.conv_b[(c, 0)];
            for k in 0..cfg.n {
                s += params.conv_w[(c, k)] * z[(j, k)];
            }
            acc += s.tanh();
        }
        v[(j, 0)] = acc / cfg.channels as f64;
    }
    Ok(v)
}

/// Full encoder forward pass; returns the `E×1` embedding.
pub fn sie_forward(params: &SieParams, cfg: &SieConfig, z: &Mat) -> Result<Mat> {
    let v = sie_pooled(params, cfg, z)?;
    Ok(&params.fc_w * v + &params.fc_b)
}

/// An encoder whose weights live in a [`ParamSet`].
#[derive(Debug, Clone, Copy)]
pub struct SieLayer {
    pub cfg: SieConfig,
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub fc_w: ParamId,
    pub fc_b: ParamId,
}

impl SieLayer {
    pub fn register(params: &mut ParamSet, name: &str, cfg: SieConfig, init: SieParams) -> Self {
        SieLayer {
            cfg,
            conv_w: params.add(format!("{name}.conv_w"), init.conv_w),
            conv_b: params.add(format!("{name}.conv_b"), init.conv_b),
            fc_w: params.add(format!("{name}.fc_w"), init.fc_w),
            fc_b: params.add(format!("{name}.fc_b"), init.fc_b),
        }
    }

    /// Copies the weights out of `params`.
    pub fn params(&self, params: &ParamSet) -> SieParams {
        SieParams {
            conv_w: params.get(self.conv_w).clone(),
            conv_b: params.get(self.conv_b).clone(),
            fc_w: params.get(self.fc_w).clone(),
            fc_b: params.get(self.fc_b).clone(),
        }
    }

    /// Same computation as [`sie_forward`], recorded on a tape.
    pub fn forward(&self, tape: &mut Tape, z: Var) -> Var {
        let conv_w = tape.param(self.conv_w);
        let conv_b = tape.param(self.conv_b);
        let fc_w = tape.param(self.fc_w);
        let fc_b = tape.param(self.fc_b);
        // Z (M×N) · W^T (N×C) gives every row's C channel responses.
        let wt = tape.transpose(conv_w);
        let u = tape.matmul(z, wt);
        let u = tape.add_row(u, conv_b);
        let u = tape.tanh(u);
        let v = tape.mean_cols(u);
        let e = tape.matmul(fc_w, v);
        tape.add(e, fc_b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Grads;
    use proptest::prelude::*;

    #[test]
    fn init_is_deterministic_and_bounded() {
        let cfg = SieConfig::new(8, 3);
        let a = sie_init(&cfg, 5).unwrap();
        assert_eq!(a, sie_init(&cfg, 5).unwrap());
        assert_ne!(a, sie_init(&cfg, 6).unwrap());
        let conv_bound = 1.0 / 3f64.sqrt();
        let fc_bound = 1.0 / 8f64.sqrt();
        assert!(a.conv_w.iter().chain(a.conv_b.iter()).all(|v| v.abs() <= conv_bound));
        assert!(a.fc_w.iter().chain(a.fc_b.iter()).all(|v| v.abs() <= fc_bound));
        assert!(sie_init(&SieConfig::new(0, 3), 1).is_err());
    }

    fn identity_fc(m: usize, n: usize) -> (SieConfig, SieParams) {
        let cfg = SieConfig {
            m,
            n,
            channels: 1,
            emb_dim: m,
        };
        let mut conv_w = Mat::zeros(1, n);
        conv_w[(0, 0)] = 1.0;
        let p = SieParams {
            conv_w,
            conv_b: Mat::zeros(1, 1),
            fc_w: Mat::identity(m, m),
            fc_b: Mat::zeros(m, 1),
        };
        (cfg, p)
    }

    #[test]
    fn forward_by_hand() {
        let (cfg, p) = identity_fc(4, 3);
        let z = Mat::from_row_slice(
            4,
            3,
            &[0.1, 9.0, 9.0, -0.4, 9.0, 9.0, 2.0, 9.0, 9.0, 0.0, 9.0, 9.0],
        );
        let out = sie_forward(&p, &cfg, &z).unwrap();
        for (j, x) in [0.1f64, -0.4, 2.0, 0.0].iter().enumerate() {
            assert!((out[(j, 0)] - x.tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_input_zero_bias_gives_zero() {
        let cfg = SieConfig::new(4, 2);
        let mut p = sie_init(&cfg, 1).unwrap();
        p.conv_b.fill(0.0);
        p.fc_b.fill(0.0);
        let out = sie_forward(&p, &cfg, &Mat::zeros(4, 2)).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let cfg = SieConfig::new(4, 2);
        let p = sie_init(&cfg, 1).unwrap();
        assert!(sie_forward(&p, &cfg, &Mat::zeros(4, 3)).is_err());
        let other = sie_init(&SieConfig::new(4, 3), 1).unwrap();
        assert!(sie_forward(&other, &cfg, &Mat::zeros(4, 2)).is_err());
    }

    #[test]
    fn swapping_rows_swaps_outputs() {
        let (cfg, p) = identity_fc(5, 2);
        let z = Mat::from_fn(5, 2, |r, c| r as f64 * 0.3 - c as f64);
        let mut swapped = z.clone();
        swapped.swap_rows(1, 3);
        let a = sie_forward(&p, &cfg, &z).unwrap();
        let b = sie_forward(&p, &cfg, &swapped).unwrap();
        assert_eq!(a[(1, 0)], b[(3, 0)]);
        assert_eq!(a[(3, 0)], b[(1, 0)]);
        assert_eq!(a[(0, 0)], b[(0, 0)]);
    }

    #[test]
    fn tape_forward_matches_direct() {
        let cfg = SieConfig::new(8, 3);
        let init = sie_init(&cfg, 9).unwrap();
        let mut ps = ParamSet::new();
        let layer = SieLayer::register(&mut ps, "sie", cfg, init.clone());
        let z = Mat::from_fn(8, 3, |r, c| (r * 3 + c) as f64 * 0.17 - 1.0);
        let mut tape = Tape::new(&ps);
        let zv = tape.leaf(z.clone());
        let out = layer.forward(&mut tape, zv);
        let direct = sie_forward(&init, &cfg, &z).unwrap();
        assert!((tape.value(out) - direct).abs().max() < 1e-14);
        assert_eq!(layer.params(&ps), init);
    }

    /// Central differences on the direct forward pass against tape gradients.
    #[test]
    fn gradients_match_finite_differences() {
        let cfg = SieConfig {
            m: 8,
            n: 3,
            channels: 4,
            emb_dim: 8,
        };
        let mut ps = ParamSet::new();
        let layer = SieLayer::register(&mut ps, "sie", cfg, sie_init(&cfg, 21).unwrap());
        let z = Mat::from_fn(8, 3, |r, c| ((r * 7 + c * 3) % 11) as f64 * 0.2 - 1.0);
        let target = Mat::from_fn(8, 1, |r, _| r as f64 * 0.1);
        let loss_direct = |ps: &ParamSet| {
            let e = sie_forward(&layer.params(ps), &cfg, &z).unwrap() - &target;
            0.5 * e.norm_squared()
        };
        let mut g = Grads::zeros_like(&ps);
        {
            let mut tape = Tape::new(&ps);
            let zv = tape.leaf(z.clone());
            let out = layer.forward(&mut tape, zv);
            let t = tape.leaf(target.clone());
            let diff = tape.sub(out, t);
            let sq = tape.mul(diff, diff);
            let ones = tape.leaf(Mat::from_element(1, 8, 0.5));
            let loss = tape.matmul(ones, sq);
            assert!((tape.scalar(loss) - loss_direct(&ps)).abs() < 1e-14);
            tape.backward(loss, 1.0, &mut g);
        }
        let analytic = g.to_flat();
        for i in 0..ps.num_scalars() {
            let x0 = ps.scalar(i);
            ps.set_scalar(i, x0 + 1e-5);
            let up = loss_direct(&ps);
            ps.set_scalar(i, x0 - 1e-5);
            let down = loss_direct(&ps);
            ps.set_scalar(i, x0);
            let num = (up - down) / 2e-5;
            let rel = (num - analytic[i]).abs() / num.abs().max(analytic[i].abs()).max(1e-8);
            assert!(rel < 1e-5, "param {i}: {num} vs {}", analytic[i]);
        }
    }

    proptest! {
        #[test]
        fn pooled_stage_is_row_equivariant_and_bounded(
            seed in 0u64..1000,
            vals in proptest::collection::vec(-50.0..50.0f64, 24),
            perm_seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            let cfg = SieConfig::new(8, 3);
            let p = sie_init(&cfg, seed).unwrap();
            let z = Mat::from_row_slice(8, 3, &vals);
            let mut order: Vec<usize> = (0..8).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
            let permuted = Mat::from_fn(8, 3, |r, c| z[(order[r], c)]);
            let a = sie_pooled(&p, &cfg, &z).unwrap();
            let b = sie_pooled(&p, &cfg, &permuted).unwrap();
            for r in 0..8 {
                prop_assert_eq!(b[(r, 0)], a[(order[r], 0)]);
                prop_assert!(a[(r, 0)].abs() <= 1.0);
            }
        }
    }
}
