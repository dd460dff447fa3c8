use std::path::Path;
use std::process::{Command, Output};

fn lakf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lakf"))
        .current_dir(dir)
        .env("LAKF_NUM_THREADS", "2")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

const SMALL: [&str; 4] = ["--data.synth_tracks", "12", "--data.synth_len", "30"];

fn gen(dir: &Path, out: &str) {
    let mut args = vec!["gen", "--alpha-p", "0.05", "--seed", "1", "--out", out];
    args.extend(SMALL);
    ok(&lakf(dir, &args));
}

#[test]
fn gen_is_byte_identical_across_runs() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), "a");
    gen(d.path(), "b");
    let a = std::fs::read(d.path().join("a/dataset.jsonl")).unwrap();
    let b = std::fs::read(d.path().join("b/dataset.jsonl")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
    let cfg = std::fs::read_to_string(d.path().join("a/config.toml")).unwrap();
    assert!(cfg.contains("alpha_p = 0.05") && cfg.contains("synth_tracks = 12"), "{cfg}");
}

#[test]
fn eval_writes_recall_columns() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), "runs/gen");
    ok(&lakf(d.path(), &["eval", "--model", "kf", "--alpha-p", "0.05"]));
    let text = std::fs::read_to_string(d.path().join("runs/eval/eval.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(
        header,
        "dataset,category,model,alpha_p,mode,view,frames,re_50,re_55,re_60,re_65,re_70,re_75,re_80,re_85,re_90,re_95,ar"
    );
    assert!(text.lines().any(|l| l.starts_with("all,mean,")));
}

#[test]
fn grid_is_two_by_four() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), "runs/gen");
    ok(&lakf(d.path(), &["grid"]));
    let text = std::fs::read_to_string(d.path().join("runs/grid/grid.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "model,0.05,0.1,0.2,0.4");
    assert_eq!(lines.len(), 3);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 5 && !l.contains(",,")));
    ok(&lakf(d.path(), &["plot", "runs/grid/grid.csv"]));
    assert!(d.path().join("runs/plot/grid.svg").is_file());
}

#[test]
fn train_eval_plot_round_trip() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), "runs/gen");
    ok(&lakf(
        d.path(),
        &["train", "--model.kind", "sknet", "--model.hidden_dim", "6", "--train.epochs", "2", "--train.batch_size", "4"],
    ));
    assert!(d.path().join("runs/train/model.json").is_file());
    let log = std::fs::read_to_string(d.path().join("runs/train/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    ok(&lakf(
        d.path(),
        &["eval", "--model", "sknet", "--checkpoint", "runs/train/model.json", "--eval.include_predicted", "true"],
    ));
    ok(&lakf(d.path(), &["plot", "runs/train/train_log.csv", "runs/eval/eval.csv"]));
    assert!(d.path().join("runs/plot/eval.svg").is_file());
    assert!(d.path().join("runs/plot/train_log.svg").is_file());
}

#[test]
fn oracle_tracking_writes_mot_results() {
    let d = tempfile::tempdir().unwrap();
    let seq = d.path().join("mot/seq-01/gt");
    std::fs::create_dir_all(&seq).unwrap();
    let mut gt = String::new();
    for f in 1..=20 {
        gt.push_str(&format!("{f},1,{},50,40,90,1,1,1\n", 100 + 2 * f));
        gt.push_str(&format!("{f},2,{},300,50,100,1,1,1\n", 600 - 3 * f));
    }
    std::fs::write(seq.join("gt.txt"), gt).unwrap();
    ok(&lakf(
        d.path(),
        &["track", "--model", "kf", "--data.source", "mot", "--data.mot_root", "mot", "--track.oracle", "true"],
    ));
    let out = std::fs::read_to_string(d.path().join("runs/track/seq-01.txt")).unwrap();
    assert_eq!(out.lines().count(), 40);
    assert!(out.lines().all(|l| l.ends_with(",-1,-1,-1")));
    let ids: std::collections::BTreeSet<&str> = out.lines().map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(ids.len(), 2);

    ok(&lakf(d.path(), &["aiou", "--data.source", "mot", "--data.mot_root", "mot"]));
    let aiou = std::fs::read_to_string(d.path().join("runs/aiou/aiou.csv")).unwrap();
    assert!(aiou.starts_with("dataset,category,tracks,pairs,aiou\n"), "{aiou}");
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(lakf(d.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(lakf(d.path(), &["gen", "--data.nonsense", "1"]).status.code(), Some(2));
    assert_eq!(lakf(d.path(), &["gen", "--bogus.key", "1"]).status.code(), Some(2));
    let missing = lakf(d.path(), &["eval", "--model", "kf", "--data.dataset", "nope.jsonl"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("dataio"));
}
