use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{BBox, StateMode};
use crate::kalman_core::MIN_SIZE;
use crate::linear_models::measurement_noise_std;

use super::{SemiSimTrajectory, Trajectory};

/// Independent RNG stream for one trajectory, keyed on the global seed and
/// the trajectory's identity so generation order does not matter.
pub fn trajectory_rng(seed: u64, traj: &Trajectory) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(traj.dataset.as_bytes());
    h.update([0u8]);
    h.update(traj.sequence.as_bytes());
    h.update([0u8]);
    h.update(traj.track_id.to_le_bytes());
    h.update(traj.frames.first().copied().unwrap_or(0).to_le_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// `y_t = x_t + v_t`, `v_t ~ N(0, R_t)` with the XYAH measurement noise of
/// the ground-truth box at `t`. Aspect and height are floored at a small
/// positive value. `alpha_p = 0` returns the ground truth unchanged.
pub fn simulate_measurements(traj: &Trajectory, alpha_p: f64, seed: u64) -> Result<SemiSimTrajectory> {
    if !(alpha_p >= 0.0 && alpha_p.is_finite()) {
        return Err(Error::domain(format!("alpha_p must be >= 0, got {alpha_p}")));
    }
    traj.validate()?;
    let meas = if alpha_p == 0.0 {
        traj.gt.clone()
    } else {
        let mut rng = trajectory_rng(seed, traj);
        traj.gt
            .iter()
            .map(|b| {
                let std = measurement_noise_std(StateMode::Xyah, alpha_p, b.p3, b.h);
                let mut v = b.to_array();
                for (x, s) in v.iter_mut().zip(std) {
                    let n: f64 = rng.sample(StandardNormal);
                    *x += s * n;
                }
                v[2] = v[2].max(MIN_SIZE);
                v[3] = v[3].max(MIN_SIZE);
                BBox::from_array(v, StateMode::Xyah)
            })
            .collect::<Result<Vec<_>>>()?
    };
    Ok(SemiSimTrajectory {
        base: traj.clone(),
        meas,
        alpha_p,
        seed,
    })
}

/// [`simulate_measurements`] over many trajectories in parallel.
pub fn simulate_all(trajs: &[Trajectory], alpha_p: f64, seed: u64) -> Result<Vec<SemiSimTrajectory>> {
    trajs
        .par_iter()
        .map(|t| simulate_measurements(t, alpha_p, seed))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::toy_trajectory;

    #[test]
    fn zero_noise_is_passthrough() {
        let t = toy_trajectory(1, 6);
        let s = simulate_measurements(&t, 0.0, 9).unwrap();
        assert_eq!(s.meas, t.gt);
        assert!(simulate_measurements(&t, -0.1, 9).is_err());
    }

    #[test]
    fn identical_seeds_reproduce_bits() {
        let t = toy_trajectory(1, 20);
        let a = simulate_measurements(&t, 0.1, 3).unwrap();
        let b = simulate_measurements(&t, 0.1, 3).unwrap();
        assert_eq!(a, b);
        let c = simulate_measurements(&t, 0.1, 4).unwrap();
        assert_ne!(a.meas, c.meas);
        let mut other = t.clone();
        other.track_id = 2;
        assert_ne!(simulate_measurements(&other, 0.1, 3).unwrap().meas, a.meas);
    }

    #[test]
    fn parallel_matches_serial() {
        let ts: Vec<_> = (0..16).map(|i| toy_trajectory(i, 10)).collect();
        let par = simulate_all(&ts, 0.2, 1).unwrap();
        for (t, p) in ts.iter().zip(&par) {
            assert_eq!(&simulate_measurements(t, 0.2, 1).unwrap(), p);
        }
    }

    #[test]
    fn heavy_noise_stays_valid() {
        let mut t = toy_trajectory(1, 200);
        for b in &mut t.gt {
            b.p3 = 0.05;
        }
        let s = simulate_measurements(&t, 3.0, 0).unwrap();
        s.validate().unwrap();
    }

    /// Sample covariance of the noise at a fixed box against `R`.
    #[test]
    fn empirical_covariance_matches_r() {
        let n = 10_000;
        let mut t = toy_trajectory(1, n);
        for b in &mut t.gt {
            *b = BBox::xyah(500.0, 400.0, 0.6, 150.0).unwrap();
        }
        let alpha = 0.1;
        let s = simulate_measurements(&t, alpha, 17).unwrap();
        let want = measurement_noise_std(StateMode::Xyah, alpha, 0.6, 150.0);
        for (k, w) in want.iter().enumerate() {
            let err: Vec<f64> = s
                .meas
                .iter()
                .zip(&t.gt)
                .map(|(m, g)| m.to_array()[k] - g.to_array()[k])
                .collect();
            let mean = err.iter().sum::<f64>() / n as f64;
            let var = err.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let rel = (var - w * w).abs() / (w * w);
            assert!(rel < 0.1, "component {k}: {var} vs {}", w * w);
        }
    }
}
