//! The run configuration: a TOML file merged with dotted command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lakf::dataio::synth::MotionKind;
use lakf::tracker::ByteConfig;
use lakf::training::TrainConfig;
use lakf::StateMode;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

pub const SECTIONS: [&str; 5] = ["data", "model", "train", "eval", "track"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Synthetic,
    /// A MOTChallenge-style tree: `<root>/<sequence>/gt/gt.txt`.
    Mot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: Source,
    pub mot_root: Option<PathBuf>,
    /// Name stamped on every trajectory.
    pub name: String,
    pub category: String,
    pub synth_motion: MotionKind,
    pub synth_tracks: usize,
    pub synth_len: usize,
    pub alpha_p: f64,
    pub val_fraction: f64,
    pub seed: u64,
    /// Dataset file written by `gen` and read by the other subcommands.
    pub dataset: PathBuf,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: Source::Synthetic,
            mot_root: None,
            name: "synthetic".into(),
            category: "object".into(),
            synth_motion: MotionKind::Maneuvering,
            synth_tracks: 200,
            synth_len: 100,
            alpha_p: 0.05,
            val_fraction: lakf::dataio::DEFAULT_VAL_FRACTION,
            seed: 0,
            dataset: PathBuf::from("runs/gen/dataset.jsonl"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// `kf`, `knet`, `sknet`, `siknet`, `observation` or `oracle`.
    pub kind: String,
    pub mode: StateMode,
    /// KF noise factor.
    pub alpha_p: f64,
    /// Trained network for `eval`/`track` with a learned kind.
    pub checkpoint: Option<PathBuf>,
    pub allow_mode_mismatch: bool,
    pub hidden_dim: usize,
    pub sie_channels: usize,
    pub input_scale: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let net = lakf::NetConfig::new(lakf::Variant::Siknet, StateMode::Xyah);
        ModelConfig {
            kind: "siknet".into(),
            mode: StateMode::Xyah,
            alpha_p: lakf::linear_models::DEFAULT_ALPHA_P,
            checkpoint: None,
            allow_mode_mismatch: false,
            hidden_dim: net.hidden_dim,
            sie_channels: net.sie_channels,
            input_scale: net.input_scale,
            seed: net.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// `train`, `val` or `test`.
    pub split: String,
    pub include_predicted: bool,
    /// Grid rows: `kf:<alpha>` or a checkpoint path.
    pub grid_models: Vec<String>,
    /// Grid columns: measurement noise of the re-simulated test sets.
    pub grid_alphas: Vec<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            split: "test".into(),
            include_predicted: false,
            grid_models: vec!["kf:0.05".into(), "kf:0.4".into()],
            grid_alphas: vec![0.05, 0.1, 0.2, 0.4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackSection {
    /// Directory of `<sequence>.txt` detection files.
    pub detections: Option<PathBuf>,
    /// Use ground-truth boxes from `data.mot_root` as detections.
    pub oracle: bool,
    pub high_thresh: f64,
    pub low_thresh: f64,
    pub match_iou: f64,
    pub second_match_iou: f64,
    pub unconfirmed_match_iou: f64,
    pub max_lost: u32,
    pub min_box_area: f64,
    pub fuse_score: bool,
}

impl Default for TrackSection {
    fn default() -> Self {
        let b = ByteConfig::default();
        TrackSection {
            detections: None,
            oracle: false,
            high_thresh: b.high_thresh,
            low_thresh: b.low_thresh,
            match_iou: b.match_iou,
            second_match_iou: b.second_match_iou,
            unconfirmed_match_iou: b.unconfirmed_match_iou,
            max_lost: b.max_lost,
            min_box_area: b.min_box_area,
            fuse_score: b.fuse_score,
        }
    }
}

impl TrackSection {
    pub fn byte(&self) -> ByteConfig {
        ByteConfig {
            high_thresh: self.high_thresh,
            low_thresh: self.low_thresh,
            match_iou: self.match_iou,
            second_match_iou: self.second_match_iou,
            unconfirmed_match_iou: self.unconfirmed_match_iou,
            max_lost: self.max_lost,
            min_box_area: self.min_box_area,
            fuse_score: self.fuse_score,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub track: TrackSection,
}

/// A `section.key = value` override taken from the command line.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub section: String,
    pub key: String,
    pub raw: String,
}

/// Removes `--section.key value` and `--section.key=value` pairs from `args`.
pub fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<Override>)> {
    let mut rest = Vec::with_capacity(args.len());
    let mut found = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(body) = a.strip_prefix("--") else {
            rest.push(a);
            continue;
        };
        let (name, inline) = match body.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (body.to_string(), None),
        };
        let Some((section, key)) = name.split_once('.') else {
            rest.push(a);
            continue;
        };
        if !SECTIONS.contains(&section) {
            bail!("unknown config section '{section}' in --{name}");
        }
        if key.is_empty() || key.contains('.') {
            bail!("malformed override --{name}");
        }
        let raw = match inline {
            Some(v) => v,
            None => it.next().with_context(|| format!("--{name} needs a value"))?,
        };
        found.push(Override {
            section: section.into(),
            key: key.into(),
            raw,
        });
    }
    Ok((rest, found))
}

/// Interprets an override value as TOML (number, bool, array, quoted string),
/// falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Reads `path` (if any), applies overrides in order and validates every key.
pub fn load(path: Option<&Path>, overrides: &[Override]) -> Result<RunConfig> {
    let mut root = match path {
        Some(p) => std::fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))?
            .parse::<Table>()
            .with_context(|| format!("parsing {}", p.display()))?,
        None => Table::new(),
    };
    for o in overrides {
        let section = root
            .entry(o.section.clone())
            .or_insert_with(|| Value::Table(Table::new()));
        let Value::Table(t) = section else {
            bail!("config entry '{}' is not a section", o.section);
        };
        t.insert(o.key.clone(), parse_value(&o.raw));
    }
    let cfg: RunConfig = Value::Table(root).try_into().context("invalid configuration")?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.data.val_fraction) {
            bail!("data.val_fraction must be in [0, 1]");
        }
        if !(self.data.alpha_p >= 0.0) {
            bail!("data.alpha_p must be non-negative");
        }
        if !["train", "val", "test"].contains(&self.eval.split.as_str()) {
            bail!("eval.split must be train, val or test");
        }
        self.train.validate()?;
        self.track.byte().validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}
