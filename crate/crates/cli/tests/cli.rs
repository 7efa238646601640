// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use modepatch::intervene::Direction;
use modepatch::model::ModelWeights;
use modepatch::tensor::RngStream;
use modepatch_cli::artifacts::{list_files, sha256_file, Manifest};
use modepatch_cli::records::{InterpRow, PatchRow, TraceRecord};
use modepatch_cli::RunConfig;

const SMALL: &str = r#"
version = 1
seed = 11

[gen]
n_keys = 6
eval_keys = 4
t_in = 256

[train]
epochs = 1

[experiments.neurons]
k_grid = [1, 4, 64]
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_modepatch"))
}

fn modepatch(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).arg("--quiet").args(args).output().unwrap()
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn small_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), SMALL).unwrap();
    dir
}

/// One complete small pipeline shared by the read-only tests.
fn shared() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = small_dir();
        ok(modepatch(
            dir.path(),
            &["--config", "c.toml", "--out", "out", "run-all"],
        ));
        dir
    })
    .path()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn data<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_value(json(path)["data"].clone()).unwrap()
}

fn digest_dir(dir: &Path) -> Vec<(String, String)> {
    list_files(dir)
        .unwrap()
        .into_iter()
        .map(|f| {
            let h = sha256_file(&dir.join(&f)).unwrap();
            (f, h)
        })
        .collect()
}

#[test]
fn gen_data_is_byte_identical() {
    let dir = small_dir();
    ok(modepatch(dir.path(), &["--config", "c.toml", "--out", "a", "gen-data"]));
    ok(modepatch(dir.path(), &["--config", "c.toml", "--out", "b", "gen-data"]));
    let a = digest_dir(&dir.path().join("a"));
    assert_eq!(a, digest_dir(&dir.path().join("b")));
    assert!(a.iter().any(|(f, _)| f == "dataset/k0009.plab"));
}

#[test]
fn zero_epochs_keeps_initial_weights() {
    let dir = small_dir();
    fs::write(dir.path().join("z.toml"), SMALL.replace("epochs = 1", "epochs = 0")).unwrap();
    ok(modepatch(dir.path(), &["--config", "z.toml", "--out", "o", "gen-data"]));
    ok(modepatch(dir.path(), &["--config", "z.toml", "--out", "o", "train"]));
    let cfg = RunConfig::from_toml(SMALL).unwrap();
    let w = ModelWeights::load(&dir.path().join("o/weights.plab"), &cfg.model).unwrap();
    let init = ModelWeights::init(&cfg.model, &mut RngStream::new(cfg.seed_for("init"), 0)).unwrap();
    assert!(w.bit_eq(&init));
    assert_eq!(fs::read_to_string(dir.path().join("o/train_loss.csv")).unwrap(), "");
}

#[test]
fn missing_artifacts_exit_3_and_name_the_path() {
    let dir = small_dir();
    let out = modepatch(dir.path(), &["--config", "c.toml", "--out", "o", "train"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("dataset") && err.contains("gen-data"), "{err}");
    ok(modepatch(dir.path(), &["--config", "c.toml", "--out", "o", "gen-data"]));
    let out = modepatch(dir.path(), &["--config", "c.toml", "--out", "o", "patch"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("weights.plab"));
    let out = modepatch(dir.path(), &["--config", "c.toml", "--out", "o", "saturate"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn config_errors_exit_2() {
    let dir = small_dir();
    for (name, text) in [
        ("unknown.toml", format!("{SMALL}\nbogus = 3\n")),
        ("seed.toml", SMALL.replace("[train]", "[train]\nseed = 3")),
        (
            "mode.toml",
            format!("{SMALL}\n[experiments]\ndirections = [\"vocalized->spoken\"]\n"),
        ),
        ("version.toml", SMALL.replace("version = 1", "version = 9")),
    ] {
        fs::write(dir.path().join(name), text).unwrap();
        let out = modepatch(dir.path(), &["--config", name, "--out", "o", "gen-data"]);
        assert_eq!(out.status.code(), Some(2), "{name}");
    }
    let out = modepatch(dir.path(), &["--config", "absent.toml", "gen-data"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn self_direction_patch_is_zero() {
    let dir = small_dir();
    let text = SMALL.to_owned() + "\n[experiments]\ndirections = [\"imagined->imagined\"]\n";
    fs::write(dir.path().join("self.toml"), text).unwrap();
    let shared = shared();
    let o = dir.path().join("o");
    fs::create_dir_all(&o).unwrap();
    {
        let f = "weights.plab";
        fs::copy(shared.join("out").join(f), o.join(f)).unwrap();
    }
    ok(modepatch(
        dir.path(),
        &["--config", "self.toml", "--out", "o", "gen-data"],
    ));
    ok(modepatch(dir.path(), &["--config", "self.toml", "--out", "o", "patch"]));
    let rows: Vec<PatchRow> = data(&o.join("patch.json"));
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.delta_pcc == 0.0 && r.delta_mcd == 0.0));
    let csv = fs::read_to_string(o.join("patch.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "direction,site,key,delta_pcc,delta_mcd");
    assert_eq!(lines.clone().count(), 2 * 4);
    assert!(lines.all(|l| l.ends_with(",0.0,0.0")));
}

#[test]
fn report_cardinalities() {
    let out = shared().join("out");
    let cfg = RunConfig::from_toml(SMALL).unwrap();
    let x = &cfg.experiments;
    let patch: Vec<PatchRow> = data(&out.join("patch.json"));
    assert_eq!(patch.len(), 6 * 2);
    let interp: Vec<InterpRow> = data(&out.join("interpolate.json"));
    assert_eq!(interp.len(), x.alpha_grid.len() * x.directions.len() * x.sites.len());
    let csv = fs::read_to_string(out.join("interpolate.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + interp.len());

    let scrub = json(&out.join("scrub.json"));
    let rows = scrub["data"].as_array().unwrap();
    assert_eq!(rows.len(), 8 * 6);
    for chunk in rows.chunks(8) {
        let labels: Vec<&str> = chunk.iter().map(|r| r["variant"].as_str().unwrap()).collect();
        assert_eq!(
            labels,
            [
                "KEEP-Conv",
                "KEEP-RNN",
                "KEEP-Combo",
                "RAND-Conv",
                "RAND-RNN",
                "RAND-Combo",
                "Full-Conv",
                "Full-RNN"
            ]
        );
        assert!(chunk.iter().all(|r| r["direction"] == chunk[0]["direction"]));
    }

    let trace = json(&out.join("trace.json"));
    let rec = &trace["data"][0];
    for field in ["window", "direction", "pcc", "mcd", "seed"] {
        assert!(rec.get(field).is_some(), "{field}");
    }
    let sweep = fs::read_to_string(out.join("neuron_sweep.csv")).unwrap();
    assert_eq!(
        sweep.lines().next().unwrap(),
        "direction,layer,neuron,key,delta_pcc,delta_mcd"
    );
    assert_eq!(sweep.lines().count(), 1 + 6 * 64 * 4);
    let baseline = json(&out.join("baseline.json"));
    assert!(baseline["data"]["modes"]["vocalized"]["PCC (per-sample) mean"].is_number());

    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["data"]["patch"].as_array().unwrap().len(), 12);
    let text = fs::read_to_string(out.join("summary.txt")).unwrap();
    for title in [
        "Baseline decoding",
        "Full activation patching",
        "Causal scrubbing",
        "Winner neurons",
    ] {
        assert!(text.contains(title), "{title}");
    }
}

#[test]
fn manifest_covers_every_file() {
    let out = shared().join("out");
    let m: Manifest = serde_json::from_value(json(&out.join("manifest.json"))).unwrap();
    let files: Vec<String> = list_files(&out)
        .unwrap()
        .into_iter()
        .filter(|f| f != "manifest.json")
        .collect();
    assert_eq!(m.files.keys().cloned().collect::<Vec<_>>(), files);
    for (f, h) in &m.files {
        assert_eq!(&sha256_file(&out.join(f)).unwrap(), h, "{f}");
    }
    let cfg = RunConfig::from_toml(SMALL).unwrap();
    assert_eq!(m.config_hash, cfg.hash());
    assert_eq!(m.seed, 11);
    assert_eq!(m.sub_seeds["scrub"], cfg.seed_for("scrub"));
}

#[test]
fn report_is_idempotent_and_checks_schema() {
    let dir = tempfile::tempdir().unwrap();
    let src = shared().join("out");
    let o = dir.path().join("o");
    fs::create_dir_all(&o).unwrap();
    for f in ["baseline.json", "patch.json", "winners.json"] {
        fs::copy(src.join(f), o.join(f)).unwrap();
    }
    ok(modepatch(dir.path(), &["--out", "o", "report"]));
    let first = (
        fs::read(o.join("summary.json")).unwrap(),
        fs::read(o.join("summary.txt")).unwrap(),
    );
    ok(modepatch(dir.path(), &["--out", "o", "report"]));
    let second = (
        fs::read(o.join("summary.json")).unwrap(),
        fs::read(o.join("summary.txt")).unwrap(),
    );
    assert_eq!(first, second);

    let text = fs::read_to_string(o.join("patch.json")).unwrap();
    fs::write(
        o.join("patch.json"),
        text.replacen("\"schema_version\": 1", "\"schema_version\": 0", 1),
    )
    .unwrap();
    let out = modepatch(dir.path(), &["--out", "o", "report"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema version 0"));

    fs::create_dir_all(dir.path().join("empty")).unwrap();
    let out = modepatch(dir.path(), &["--out", "empty", "report"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    for kind in ["baseline.json", "scrub.json", "saturation.json"] {
        assert!(err.contains(kind), "{err}");
    }
}

#[test]
fn worker_count_does_not_change_outputs() {
    let dir = small_dir();
    let text = SMALL.to_owned() + "\n[experiments]\ndirections = [\"vocalized->mimed\", \"imagined->vocalized\"]\n";
    fs::write(dir.path().join("d.toml"), text).unwrap();
    ok(modepatch(
        dir.path(),
        &["--config", "d.toml", "--out", "w1", "--workers", "1", "run-all"],
    ));
    ok(modepatch(
        dir.path(),
        &["--config", "d.toml", "--out", "w4", "--workers", "4", "run-all"],
    ));
    let a = digest_dir(&dir.path().join("w1"));
    assert!(a.len() > 20);
    assert_eq!(a, digest_dir(&dir.path().join("w4")));
}

#[test]
fn seed_flag_changes_derived_seeds() {
    let dir = small_dir();
    ok(modepatch(
        dir.path(),
        &["--config", "c.toml", "--out", "a", "--seed", "12", "gen-data"],
    ));
    let m: Manifest = serde_json::from_value(json(&dir.path().join("a/manifest.json"))).unwrap();
    assert_eq!(m.seed, 12);
    let mut cfg = RunConfig::from_toml(SMALL).unwrap();
    cfg.set_seed(12);
    assert_eq!(m.config_hash, cfg.hash());
    let ds = json(&dir.path().join("a/dataset/dataset.json"));
    assert_eq!(ds["gen_config"]["seed"].as_u64(), Some(cfg.gen.seed));
}

#[test]
fn shipped_config_matches_defaults() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    let cfg = RunConfig::load(&path).unwrap();
    assert_eq!(cfg, RunConfig::resolved_default());
}

#[test]
fn default_training_loss_decreases_and_trace_peaks_early() {
    const WINDOW: usize = 200;
    let dir = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    let cfg = cfg.to_str().unwrap();
    for step in ["gen-data", "train", "trace"] {
        ok(modepatch(dir.path(), &["--config", cfg, "--out", "out", step]));
    }
    let out = dir.path().join("out");
    let mut rows = csv::Reader::from_path(out.join("train_loss.csv")).unwrap();
    let loss: Vec<f64> = rows.records().map(|r| r.unwrap()[2].parse().unwrap()).collect();
    assert!(loss.len() >= 2 * WINDOW, "{} steps", loss.len());
    let smooth: Vec<f64> = loss
        .windows(WINDOW)
        .map(|w| w.iter().sum::<f64>() / WINDOW as f64)
        .collect();
    for i in 0..smooth.len() - WINDOW {
        assert!(
            smooth[i + WINDOW] <= smooth[i],
            "window at {} rose: {} -> {}",
            i,
            smooth[i],
            smooth[i + WINDOW]
        );
    }

    let records: Vec<TraceRecord> = data(&out.join("trace.json"));
    let dir_vi: Direction = "vocalized->imagined".parse().unwrap();
    let vi: Vec<&TraceRecord> = records.iter().filter(|r| r.direction == dir_vi).collect();
    let best = vi.iter().max_by(|a, b| a.delta_pcc.total_cmp(&b.delta_pcc)).unwrap();
    let frames = vi.iter().map(|r| r.window.1).max().unwrap();
    assert!(
        2 * best.window.0 < frames,
        "best window {:?} of {frames} frames",
        best.window
    );
}
