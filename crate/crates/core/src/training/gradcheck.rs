use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Grads;
use crate::error::{Error, Result};
use crate::evaluation::Estimator;
use crate::geometry::BBox;

use super::trajectory_loss_grad;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Number of parameters probed, drawn without replacement.
    pub max_params: usize,
    /// Central-difference step.
    pub step: f64,
    /// Gradients smaller than this in magnitude are compared absolutely.
    /// Central differences on a loss of pixel-scale magnitude carry rounding
    /// noise near `1e-8` at the default step, so much smaller floors turn
    /// that noise into spurious relative error on near-zero gradients.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            max_params: 200,
            step: 1e-5,
            floor: 1e-3,
            seed: 0,
        }
    }
}

/// Largest relative gap between tape gradients of the full-unroll trajectory
/// loss and central finite differences, over a random parameter sample.
pub fn gradient_check(model: &Estimator, gt: &[BBox], meas: &[BBox], opts: &GradCheckOptions) -> Result<f64> {
    let Estimator::Learned(learned) = model else {
        return Err(Error::domain(format!(
            "{} has no trainable parameters",
            model.name()
        )));
    };
    if opts.max_params == 0 {
        return Err(Error::domain("gradient check needs at least one parameter"));
    }
    let mut net = learned.net.clone();
    let total = net.num_parameters();
    let mut analytic = Grads::zeros_like(net.params());
    trajectory_loss_grad(&net, gt, meas, None, 1.0, &mut analytic)?;
    let analytic = analytic.to_flat();
    let picks = sample(
        &mut ChaCha8Rng::seed_from_u64(opts.seed),
        total,
        opts.max_params.min(total),
    );
    let mut scratch = Grads::zeros_like(net.params());
    let mut worst: f64 = 0.0;
    for i in picks.iter() {
        let x0 = net.params().scalar(i);
        net.params_mut().set_scalar(i, x0 + opts.step);
        let up = trajectory_loss_grad(&net, gt, meas, None, 0.0, &mut scratch)?;
        net.params_mut().set_scalar(i, x0 - opts.step);
        let down = trajectory_loss_grad(&net, gt, meas, None, 0.0, &mut scratch)?;
        net.params_mut().set_scalar(i, x0);
        let numeric = (up - down) / (2.0 * opts.step);
        let denom = numeric.abs().max(analytic[i].abs()).max(opts.floor);
        worst = worst.max((numeric - analytic[i]).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synth::{generate, MotionKind, SynthConfig};
    use crate::geometry::StateMode;
    use crate::learned_filters::{GainNetwork, NetConfig, Variant};
    use crate::linear_models::LinearModelConfig;
    use crate::motion::{KalmanModel, LearnedModel};

    fn probe(len: usize) -> (Vec<BBox>, Vec<BBox>) {
        let gt = generate(&SynthConfig::new(MotionKind::Maneuvering, 1, len, 8)).unwrap();
        let s = crate::dataio::simulate_measurements(&gt[0], 0.1, 2).unwrap();
        (s.base.gt, s.meas)
    }

    fn learned(variant: Variant) -> Estimator {
        let mut cfg = NetConfig::new(variant, StateMode::Xyah);
        cfg.hidden_dim = 8;
        cfg.seed = 4;
        Estimator::Learned(LearnedModel::new(GainNetwork::new(cfg).unwrap()))
    }

    #[test]
    fn all_variants_pass_on_short_unrolls() {
        let (gt, meas) = probe(6);
        for v in Variant::ALL {
            let err = gradient_check(&learned(v), &gt, &meas, &GradCheckOptions::default()).unwrap();
            assert!(err < 1e-4, "{v}: {err}");
        }
    }

    #[test]
    fn guards() {
        let (gt, meas) = probe(4);
        let kf = Estimator::Kalman(KalmanModel::new(LinearModelConfig::new(StateMode::Xyah, 0.05)));
        assert!(gradient_check(&kf, &gt, &meas, &GradCheckOptions::default()).is_err());
        let none = GradCheckOptions {
            max_params: 0,
            ..GradCheckOptions::default()
        };
        assert!(gradient_check(&learned(Variant::Knet), &gt, &meas, &none).is_err());
    }
}
