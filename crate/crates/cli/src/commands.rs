use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lakf::dataio::synth::{generate, SynthConfig};
use lakf::dataio::{
    dataset_aiou_report, make_splits, parse_mot_gt, read_dataset, simulate_all, write_dataset, DatasetSplit,
    SemiSimTrajectory, SequenceInfo, SplitName, Trajectory,
};
use lakf::evaluation::{evaluate, mismatch_grid, write_grid_csv, write_report_csv, EvalOptions, Estimator};
use lakf::motion::{KalmanModel, LearnedModel};
use lakf::tracker::{
    frames_from_detections, oracle_detections, parse_detections, track_sequence, write_mot_results, ByteConfig,
    Detection, FrameTracks,
};
use lakf::training::{load_checkpoint, save_checkpoint, Checkpoint};
use lakf::{LinearModelConfig, MotionModel, NetConfig, Variant};
use rayon::prelude::*;

use crate::config::{RunConfig, Source};
use crate::UsageError;

/// `imWidth`/`imHeight` from a `seqinfo.ini`, if present.
fn image_size(seq_dir: &Path) -> Option<(u32, u32)> {
    let text = std::fs::read_to_string(seq_dir.join("seqinfo.ini")).ok()?;
    let mut w = None;
    let mut h = None;
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            match k.trim() {
                "imWidth" => w = v.trim().parse().ok(),
                "imHeight" => h = v.trim().parse().ok(),
                _ => {}
            }
        }
    }
    Some((w?, h?))
}

/// Sequence directories under a MOT root that carry `gt/gt.txt`, sorted by name.
fn mot_sequences(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .with_context(|| format!("dataio: listing {}", root.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("gt").join("gt.txt").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("dataio: no <sequence>/gt/gt.txt under {}", root.display());
    }
    Ok(dirs)
}

fn seq_name(dir: &Path) -> String {
    dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn mot_root(cfg: &RunConfig) -> Result<&Path> {
    cfg.data
        .mot_root
        .as_deref()
        .ok_or_else(|| UsageError("data.mot_root is required for MOT data".into()).into())
}

fn load_gt(cfg: &RunConfig) -> Result<Vec<Trajectory>> {
    let d = &cfg.data;
    match d.source {
        Source::Synthetic => {
            let mut sc = SynthConfig::new(d.synth_motion, d.synth_tracks, d.synth_len, d.seed);
            sc.dataset = d.name.clone();
            let mut trajs = generate(&sc).context("dataio: synthetic generation")?;
            for t in &mut trajs {
                t.category = d.category.clone();
            }
            Ok(trajs)
        }
        Source::Mot => {
            let mut all = Vec::new();
            for dir in mot_sequences(mot_root(cfg)?)? {
                let (img_w, img_h) = image_size(&dir).unwrap_or_else(|| {
                    log::warn!("{}: no seqinfo.ini size, assuming 1920x1080", dir.display());
                    (1920, 1080)
                });
                let info = SequenceInfo {
                    dataset: d.name.clone(),
                    sequence: seq_name(&dir),
                    category: d.category.clone(),
                    img_w,
                    img_h,
                };
                let path = dir.join("gt").join("gt.txt");
                let f = File::open(&path).with_context(|| format!("dataio: opening {}", path.display()))?;
                all.extend(parse_mot_gt(f, &info).with_context(|| format!("dataio: {}", path.display()))?);
            }
            Ok(all)
        }
    }
}

pub fn gen(cfg: &RunConfig, out: &Path) -> Result<()> {
    let gt = load_gt(cfg)?;
    let sims = simulate_all(&gt, cfg.data.alpha_p, cfg.data.seed).context("dataio: simulation")?;
    let outcome = make_splits(&sims, cfg.data.val_fraction, cfg.data.seed).context("dataio: split")?;
    let path = out.join("dataset.jsonl");
    write_dataset(&outcome.split, &path).context("dataio: writing dataset")?;
    log::info!(
        "{} trajectories -> train {} / val {} / test {} ({} skipped) at {}",
        sims.len(),
        outcome.split.train.len(),
        outcome.split.val.len(),
        outcome.split.test.len(),
        outcome.skipped,
        path.display()
    );
    Ok(())
}

pub fn aiou(cfg: &RunConfig, out: &Path) -> Result<()> {
    let gt = load_gt(cfg)?;
    let rows = dataset_aiou_report(&gt).context("dataio: aiou")?;
    let mut w = csv::Writer::from_path(out.join("aiou.csv"))?;
    for r in &rows {
        w.serialize(r)?;
        log::info!("{} / {}: AIoU {:.4} over {} pairs", r.dataset, r.category, r.aiou, r.pairs);
    }
    w.flush()?;
    Ok(())
}

fn dataset(cfg: &RunConfig) -> Result<DatasetSplit> {
    read_dataset(&cfg.data.dataset).with_context(|| format!("dataio: reading {}", cfg.data.dataset.display()))
}

fn net_config(cfg: &RunConfig) -> Result<NetConfig> {
    let variant: Variant = cfg
        .model
        .kind
        .parse()
        .map_err(|_| UsageError(format!("model.kind '{}' is not a learned filter", cfg.model.kind)))?;
    let mut n = NetConfig::new(variant, cfg.model.mode);
    n.hidden_dim = cfg.model.hidden_dim;
    n.sie_channels = cfg.model.sie_channels;
    n.input_scale = cfg.model.input_scale;
    n.seed = cfg.model.seed;
    Ok(n)
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let split = dataset(cfg)?;
    let net_cfg = net_config(cfg)?;
    let mut log_w = csv::Writer::from_path(out.join("train_log.csv"))?;
    let mut log_err = None;
    let outcome = lakf::training::train(&split, &net_cfg, &cfg.train, |rec| {
        if let Err(e) = log_w.serialize(rec).and_then(|_| log_w.flush().map_err(Into::into)) {
            log_err.get_or_insert(e);
        }
    })
    .context("training")?;
    if let Some(e) = log_err {
        return Err(e.into());
    }
    let ckpt = Checkpoint::new(
        &outcome.net,
        Some(cfg.train.clone()),
        outcome.best_epoch,
        outcome.best_val_m_ar,
    );
    let path = out.join("model.json");
    save_checkpoint(&path, &ckpt).context("training: saving checkpoint")?;
    log::info!(
        "kept epoch {} (val mAR {:?}), checkpoint {}",
        outcome.best_epoch,
        outcome.best_val_m_ar,
        path.display()
    );
    Ok(())
}

fn learned(cfg: &RunConfig, path: &Path) -> Result<LearnedModel> {
    let ck = load_checkpoint(path).with_context(|| format!("training: loading {}", path.display()))?;
    let net = ck
        .network_for(cfg.model.mode, cfg.model.allow_mode_mismatch)
        .with_context(|| format!("learned_filters: {}", path.display()))?;
    Ok(LearnedModel::new(net))
}

fn estimator(cfg: &RunConfig) -> Result<Estimator> {
    let m = &cfg.model;
    Ok(match m.kind.to_ascii_lowercase().as_str() {
        "kf" => Estimator::Kalman(KalmanModel::new(LinearModelConfig::new(m.mode, m.alpha_p))),
        "observation" => Estimator::Observation(m.mode),
        "oracle" => Estimator::Oracle(m.mode),
        _ => {
            net_config(cfg)?;
            let path = m
                .checkpoint
                .as_deref()
                .ok_or_else(|| UsageError(format!("model.checkpoint is required for model.kind '{}'", m.kind)))?;
            Estimator::Learned(learned(cfg, path)?)
        }
    })
}

fn split_name(s: &str) -> SplitName {
    match s {
        "train" => SplitName::Train,
        "val" => SplitName::Val,
        _ => SplitName::Test,
    }
}

pub fn eval(cfg: &RunConfig, out: &Path) -> Result<()> {
    let split = dataset(cfg)?;
    let est = estimator(cfg)?;
    let opts = EvalOptions {
        include_predicted: cfg.eval.include_predicted,
        label: None,
    };
    let part = split.part(split_name(&cfg.eval.split));
    let rep = evaluate(&est, part, &opts).context("evaluation")?;
    let f = BufWriter::new(File::create(out.join("eval.csv"))?);
    write_report_csv(std::slice::from_ref(&rep), f).context("evaluation: writing report")?;
    log::info!("{} on {} {} trajectories: mAR {:.4}", est.name(), part.len(), cfg.eval.split, rep.m_ar());
    Ok(())
}

fn grid_model(cfg: &RunConfig, spec: &str) -> Result<Estimator> {
    if let Some(a) = spec.strip_prefix("kf:") {
        let alpha: f64 = a
            .parse()
            .map_err(|_| UsageError(format!("bad grid model '{spec}'")))?;
        return Ok(Estimator::Kalman(KalmanModel::new(LinearModelConfig::new(cfg.model.mode, alpha))));
    }
    Ok(Estimator::Learned(learned(cfg, Path::new(spec))?))
}

/// Re-simulates the ground truth of `part` at `alpha`.
fn resimulate(part: &[SemiSimTrajectory], alpha: f64, seed: u64) -> Result<Vec<SemiSimTrajectory>> {
    let gt: Vec<Trajectory> = part.iter().map(|s| s.base.clone()).collect();
    Ok(simulate_all(&gt, alpha, seed)?)
}

pub fn grid(cfg: &RunConfig, out: &Path) -> Result<()> {
    if cfg.eval.grid_models.is_empty() || cfg.eval.grid_alphas.is_empty() {
        return Err(UsageError("eval.grid_models and eval.grid_alphas must be non-empty".into()).into());
    }
    let split = dataset(cfg)?;
    let part = split.part(split_name(&cfg.eval.split));
    let models = cfg
        .eval
        .grid_models
        .iter()
        .map(|s| Ok((s.clone(), grid_model(cfg, s)?)))
        .collect::<Result<Vec<_>>>()?;
    let tests = cfg
        .eval
        .grid_alphas
        .iter()
        .map(|&a| Ok((a, resimulate(part, a, cfg.data.seed).context("dataio: re-simulation")?)))
        .collect::<Result<Vec<_>>>()?;
    let g = mismatch_grid(&models, &tests).context("evaluation: grid")?;
    let f = BufWriter::new(File::create(out.join("grid.csv"))?);
    write_grid_csv(&g, f).context("evaluation: writing grid")?;
    Ok(())
}

type SequenceInput = (String, Vec<(u32, Vec<Detection>)>);

fn tracking_inputs(cfg: &RunConfig) -> Result<Vec<SequenceInput>> {
    if cfg.track.oracle {
        return mot_sequences(mot_root(cfg)?)?
            .into_iter()
            .map(|dir| {
                let path = dir.join("gt").join("gt.txt");
                let dets = oracle_detections(File::open(&path)?).with_context(|| format!("tracker: {}", path.display()))?;
                Ok((seq_name(&dir), frames_from_detections(dets, None)))
            })
            .collect();
    }
    let dir = cfg
        .track
        .detections
        .as_deref()
        .ok_or_else(|| UsageError("set track.detections or track.oracle = true".into()))?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("tracker: listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let dets = parse_detections(File::open(&p)?).with_context(|| format!("tracker: {}", p.display()))?;
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, frames_from_detections(dets, None)))
        })
        .collect()
}

fn run_tracker<M: MotionModel>(inputs: &[SequenceInput], model: &M, byte: &ByteConfig) -> Result<Vec<Vec<FrameTracks>>> {
    inputs
        .par_iter()
        .map(|(name, frames)| track_sequence(frames, model, byte).with_context(|| format!("tracker: sequence {name}")))
        .collect()
}

pub fn track(cfg: &RunConfig, out: &Path) -> Result<()> {
    let inputs = tracking_inputs(cfg)?;
    let byte = cfg.track.byte();
    let results = match estimator(cfg)? {
        Estimator::Kalman(m) => run_tracker(&inputs, &m, &byte)?,
        Estimator::Learned(m) => run_tracker(&inputs, &m, &byte)?,
        other => {
            return Err(UsageError(format!("{} cannot drive a tracker", other.name())).into());
        }
    };
    for ((name, _), frames) in inputs.iter().zip(&results) {
        let path = out.join(format!("{name}.txt"));
        write_mot_results(frames, BufWriter::new(File::create(&path)?))
            .with_context(|| format!("tracker: writing {}", path.display()))?;
    }
    log::info!("wrote {} result files to {}", results.len(), out.display());
    Ok(())
}
