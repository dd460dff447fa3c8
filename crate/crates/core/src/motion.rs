//! A common interface over the model-based and learned filters.

use crate::error::Result;
use crate::geometry::{BBox, StateMode};
use crate::kalman_core::{self, init_from_measurement, FilterState, StepEstimate};
use crate::learned_filters::{learned_step, predict_mean, GainNetwork, GainNetworkState};
use crate::linear_models::LinearModelConfig;

/// A per-track box motion estimator.
pub trait MotionModel: Sync {
    type Track: Clone + Send;

    fn mode(&self) -> StateMode;
    fn name(&self) -> String;

    fn initiate(&self, meas: &BBox) -> Result<Self::Track>;
    /// Advances one frame without a measurement.
    fn predict(&self, track: &mut Self::Track) -> Result<()>;
    /// Corrects a predicted track with `meas`.
    fn update(&self, track: &mut Self::Track, meas: &BBox) -> Result<()>;
    fn estimate(&self, track: &Self::Track) -> BBox;

    /// Init on the first measurement then predict + update on the rest.
    fn run(&self, meas_seq: &[BBox]) -> Result<Vec<StepEstimate>> {
        let Some(first) = meas_seq.first() else {
            return Ok(Vec::new());
        };
        let mut track = self.initiate(first)?;
        let mut out = Vec::with_capacity(meas_seq.len());
        out.push(StepEstimate {
            predicted: None,
            updated: self.estimate(&track),
        });
        for m in &meas_seq[1..] {
            self.predict(&mut track)?;
            let predicted = self.estimate(&track);
            self.update(&mut track, m)?;
            out.push(StepEstimate {
                predicted: Some(predicted),
                updated: self.estimate(&track),
            });
        }
        Ok(out)
    }
}

/// The constant-velocity Kalman filter.
#[derive(Debug, Clone, Copy)]
pub struct KalmanModel {
    pub cfg: LinearModelConfig,
}

impl KalmanModel {
    pub fn new(cfg: LinearModelConfig) -> Self {
        KalmanModel { cfg }
    }
}

impl MotionModel for KalmanModel {
    type Track = FilterState;

    fn mode(&self) -> StateMode {
        self.cfg.mode
    }

    fn name(&self) -> String {
        format!("kf(alpha_p={})", self.cfg.alpha_p)
    }

    fn initiate(&self, meas: &BBox) -> Result<FilterState> {
        init_from_measurement(meas, &self.cfg)
    }

    fn predict(&self, track: &mut FilterState) -> Result<()> {
        *track = kalman_core::predict(track, &self.cfg)?;
        Ok(())
    }

    fn update(&self, track: &mut FilterState, meas: &BBox) -> Result<()> {
        *track = kalman_core::update(track, meas, &self.cfg)?.0;
        Ok(())
    }

    fn estimate(&self, track: &FilterState) -> BBox {
        track.bbox(self.cfg.mode)
    }
}

/// A learned-gain filter. Coasting is predict-only; the network's hidden
/// state and lagged features stay frozen until the next update.
#[derive(Debug, Clone)]
pub struct LearnedModel {
    pub net: GainNetwork,
    pub cfg: LinearModelConfig,
}

#[derive(Debug, Clone)]
pub struct LearnedTrack {
    pub state: FilterState,
    pub rec: GainNetworkState,
}

impl LearnedModel {
    /// The filter config follows the network's mode; noise factors only
    /// matter for the initial covariance, which learned variants never read.
    pub fn new(net: GainNetwork) -> Self {
        let cfg = LinearModelConfig::new(net.mode(), crate::linear_models::DEFAULT_ALPHA_P);
        LearnedModel { net, cfg }
    }
}

impl MotionModel for LearnedModel {
    type Track = LearnedTrack;

    fn mode(&self) -> StateMode {
        self.cfg.mode
    }

    fn name(&self) -> String {
        self.net.variant().to_string()
    }

    fn initiate(&self, meas: &BBox) -> Result<LearnedTrack> {
        let state = init_from_measurement(meas, &self.cfg)?;
        let rec = self.net.start(&state, meas);
        Ok(LearnedTrack { state, rec })
    }

    fn predict(&self, track: &mut LearnedTrack) -> Result<()> {
        track.state = predict_mean(&track.state, &self.cfg)?;
        Ok(())
    }

    fn update(&self, track: &mut LearnedTrack, meas: &BBox) -> Result<()> {
        let (post, _) = learned_step(&self.net, &track.state, &mut track.rec, meas, &self.cfg)?;
        track.state = post;
        Ok(())
    }

    fn estimate(&self, track: &LearnedTrack) -> BBox {
        track.state.bbox(self.cfg.mode)
    }
}
