use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use psp_core::data::{load_node_dataset, read_weight_matrix};
use psp_core::experiment::{make_split, mean_std};
use psp_core::ExperimentConfig;
use tempfile::TempDir;

fn psp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psp")).args(args).output().expect("spawn psp")
}

fn ok(args: &[&str]) -> Output {
    let out = psp(args);
    assert!(
        out.status.success(),
        "psp {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn accuracies(out: &Output) -> Vec<f64> {
    stdout(out)
        .lines()
        .skip(1)
        .map(|l| l.rsplit('\t').next().unwrap().parse().unwrap())
        .collect()
}

fn echoed_config(out: &Output) -> serde_json::Value {
    let err = String::from_utf8_lossy(&out.stderr);
    let first = err.lines().next().expect("a log line");
    let json = first.strip_prefix("config ").expect("config echoed first");
    serde_json::from_str(json).unwrap()
}

/// Homophilous synthetic graph with desk-scale pre-trained encoders.
struct Fixture {
    _dir: TempDir,
    data: PathBuf,
    ckpt: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let data = dir.path().join("sbm");
        let ckpt = dir.path().join("enc.ckpt");
        ok(&["synth", "--n", "300", "--classes", "3", "--h", "0.8", "--seed", "1", "--out", s(&data)]);
        ok(&["pretrain", "--data", s(&data), "--out", s(&ckpt), "--pretrain-lr", "5e-4", "--seed", "0"]);
        Fixture { _dir: dir, data, ckpt }
    })
}

#[test]
fn synth_then_pretrain_writes_checkpoint_and_log() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("d");
    let ckpt = dir.path().join("m.ckpt");
    ok(&["synth", "--n", "60", "--classes", "3", "--h", "0.8", "--seed", "1", "--out", s(&data)]);
    for f in ["features.tsv", "labels.tsv", "edges.tsv"] {
        assert!(data.join(f).exists(), "{f} missing");
    }
    let out = ok(&[
        "pretrain", "--data", s(&data), "--out", s(&ckpt), "--pretrain-epochs", "5", "--hidden-dim", "16",
    ]);
    assert!(ckpt.exists());
    let log = fs::read_to_string(dir.path().join("m.loss.tsv")).unwrap();
    assert_eq!(log.lines().count(), 5);
    assert_eq!(echoed_config(&out)["command"], "pretrain");
}

#[test]
fn flags_override_config_file() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("d");
    ok(&["synth", "--n", "40", "--out", s(&data)]);
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "pretrain_epochs = 3\nhidden_dim = 8\nk_shot = 2\n").unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let out = ok(&[
        "pretrain", "--config", s(&cfg), "--data", s(&data), "--out", s(&ckpt), "--pretrain-epochs", "4",
    ]);
    let echoed = echoed_config(&out);
    assert_eq!(echoed["pretrain_epochs"], 4);
    assert_eq!(echoed["hidden_dim"], 8);
    assert_eq!(echoed["k_shot"], 2);
    assert_eq!(echoed["lr"], 0.01);
    let log = fs::read_to_string(dir.path().join("m.loss.tsv")).unwrap();
    assert_eq!(log.lines().count(), 4);
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = psp(&["eval", "--bogus-flag", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--bogus-flag"));

    let out = psp(&["pretrain", "--data", "x"]);
    assert_eq!(out.status.code(), Some(2), "missing --out");

    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "learning_rate = 0.1\n").unwrap();
    let out = psp(&["synth", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn runtime_failures_exit_one() {
    let dir = TempDir::new().unwrap();
    let out = psp(&["pretrain", "--data", s(&dir.path().join("missing")), "--out", s(&dir.path().join("m"))]);
    assert_eq!(out.status.code(), Some(1));

    // An untuned checkpoint has no W to export.
    let f = fixture();
    let out = psp(&["export-w", "--checkpoint", s(&f.ckpt), "--out", s(&dir.path().join("w.tsv"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn psp_not_worse_than_psp_np_on_homophilous_task() {
    let f = fixture();
    let psp_out = ok(&["eval", "--data", s(&f.data), "--checkpoint", s(&f.ckpt), "--variant", "psp"]);
    let np_out = ok(&["eval", "--data", s(&f.data), "--checkpoint", s(&f.ckpt), "--variant", "psp-np"]);
    let (a, b) = (accuracies(&psp_out), accuracies(&np_out));
    assert_eq!(a.len(), 5);
    assert_eq!(b.len(), 5);
    assert!(mean_std(&a).0 >= mean_std(&b).0, "psp {a:?} vs psp-np {b:?}");
}

#[test]
fn zero_edge_ratio_only_touches_training_rows() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let tuned = dir.path().join("t.ckpt");
    let wfile = dir.path().join("w.tsv");
    ok(&[
        "tune", "--data", s(&f.data), "--checkpoint", s(&f.ckpt), "--out", s(&tuned), "--edge-ratio", "0", "--seed", "3",
    ]);
    ok(&["export-w", "--checkpoint", s(&tuned), "--data", s(&f.data), "--out", s(&wfile)]);
    let (w, labels) = read_weight_matrix(&wfile).unwrap();

    let g = load_node_dataset(&f.data).unwrap();
    let split = make_split(&g, &ExperimentConfig::default(), 3).unwrap();
    let mut train = split.train.clone();
    train.sort_unstable();
    let nonzero: Vec<usize> = (0..w.rows()).filter(|&r| w.row(r).iter().any(|v| *v != 0.0)).collect();
    assert_eq!(nonzero, train);
    assert_eq!(labels, g.labels().unwrap().iter().map(|&l| l as i64).collect::<Vec<_>>());

    // The initial export has the same support.
    let w0file = dir.path().join("w0.tsv");
    ok(&["export-w", "--checkpoint", s(&tuned), "--data", s(&f.data), "--out", s(&w0file), "--initial"]);
    let (w0, _) = read_weight_matrix(&w0file).unwrap();
    let nonzero0: Vec<usize> = (0..w0.rows()).filter(|&r| w0.row(r).iter().any(|v| *v != 0.0)).collect();
    assert_eq!(nonzero0, train);
    assert_ne!(w0, w);

    // Scoring the stored weights reuses the tuning split.
    let out = ok(&["eval", "--data", s(&f.data), "--checkpoint", s(&tuned)]);
    let line = stdout(&out).lines().nth(1).unwrap().to_string();
    assert!(line.starts_with("psp\t3\tnode\t3\t"), "{line}");
}

fn full_run(dir: &Path) -> (Vec<u8>, Vec<u8>, String) {
    let data = dir.join("d");
    let enc = dir.join("e.ckpt");
    let tuned = dir.join("t.ckpt");
    ok(&["synth", "--n", "90", "--seed", "4", "--out", s(&data)]);
    ok(&["pretrain", "--data", s(&data), "--out", s(&enc), "--pretrain-epochs", "15", "--hidden-dim", "16", "--seed", "2"]);
    let tune = ok(&["tune", "--data", s(&data), "--checkpoint", s(&enc), "--out", s(&tuned), "--seed", "2"]);
    let eval = ok(&["eval", "--data", s(&data), "--checkpoint", s(&enc), "--seeds", "0,1"]);
    (
        fs::read(&enc).unwrap(),
        fs::read(&tuned).unwrap(),
        stdout(&tune) + &stdout(&eval),
    )
}

#[test]
fn identical_seeds_reproduce_bitwise() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let first = full_run(a.path());
    let second = full_run(b.path());
    assert!(first.0 == second.0, "encoder checkpoints differ");
    assert!(first.1 == second.1, "tuned checkpoints differ");
    assert_eq!(first.2, second.2);
    assert_eq!(first.2.lines().filter(|l| l.starts_with("psp")).count(), 3);
}

#[test]
fn sweep_reports_selected_config() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("d");
    ok(&["synth", "--n", "60", "--out", s(&data)]);
    let out = ok(&[
        "sweep", "--data", s(&data), "--seeds", "0,1", "--pretrain-epochs", "5", "--hidden-dim", "8", "--epochs", "10",
        "--lr-grid", "0.01,0.1", "--weight-decay-grid", "0.0001", "--dropout-grid", "0.2",
    ]);
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5, "{text}");
    let id = lines[1].split('\t').next().unwrap();
    assert!(id.starts_with("psp[lr=0.1,") || id.starts_with("psp[lr=0.01,"), "{id}");
    assert!(lines[3].starts_with(&format!("{id}\tmean\t")));
    assert!(lines[4].starts_with(&format!("{id}\tstd\t")));
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.lines().filter(|l| l.contains("validation")).count(), 3);
}

/// Four ring graphs of twelve nodes, classes alternating around each ring.
fn write_tu_node_dataset(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    let (mut a, mut ind, mut attrs, mut nl) = (String::new(), String::new(), String::new(), String::new());
    for graph in 0..4 {
        for j in 0..12 {
            let node = graph * 12 + j + 1;
            let next = graph * 12 + (j + 1) % 12 + 1;
            a += &format!("{node}, {next}\n{next}, {node}\n");
            ind += &format!("{}\n", graph + 1);
            let c = j % 2;
            attrs += &format!("{}, {}, {}\n", c as f64 + 0.1 * j as f64, 1.0 - c as f64, graph as f64 * 0.25);
            nl += &format!("{c}\n");
        }
    }
    fs::write(dir.join("RING_A.txt"), a).unwrap();
    fs::write(dir.join("RING_graph_indicator.txt"), ind).unwrap();
    fs::write(dir.join("RING_graph_labels.txt"), "1\n2\n1\n2\n").unwrap();
    fs::write(dir.join("RING_node_attributes.txt"), attrs).unwrap();
    fs::write(dir.join("RING_node_labels.txt"), nl).unwrap();
}

#[test]
fn per_graph_split_on_batched_node_dataset() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("ring");
    let ckpt = dir.path().join("e.ckpt");
    let tuned = dir.path().join("t.ckpt");
    write_tu_node_dataset(&data);
    let tu = ["--data", s(&data), "--task", "node", "--tu-name", "RING"];
    ok(&[&["pretrain"][..], &tu, &["--out", s(&ckpt), "--pretrain-epochs", "5", "--hidden-dim", "8"]].concat());

    let out = ok(&[
        &["tune"][..], &tu,
        &["--checkpoint", s(&ckpt), "--out", s(&tuned), "--per-graph-split", "--k-shot", "1", "--val-k", "1", "--epochs", "5", "--edge-ratio", "0"],
    ].concat());
    assert_eq!(echoed_config(&out)["per_graph_split"], true);
    // One training node per class in every graph.
    let wfile = dir.path().join("w.tsv");
    ok(&["export-w", "--checkpoint", s(&tuned), "--out", s(&wfile)]);
    let (w, _) = read_weight_matrix(&wfile).unwrap();
    let nonzero: Vec<usize> = (0..w.rows()).filter(|&r| w.row(r).iter().any(|v| *v != 0.0)).collect();
    assert_eq!(nonzero.len(), 8);
    let per_graph = |g: usize| nonzero.iter().filter(|&&r| r / 12 == g).count();
    assert_eq!((0..4).map(per_graph).collect::<Vec<_>>(), vec![2, 2, 2, 2]);

    let eval = ok(&[
        &["eval"][..], &tu,
        &["--checkpoint", s(&ckpt), "--per-graph-split", "--k-shot", "1", "--val-k", "1", "--epochs", "5", "--seeds", "0,1"],
    ].concat());
    assert_eq!(accuracies(&eval).len(), 2);

    // Plain node datasets have no graphs to sample within.
    let f = fixture();
    let out = psp(&["eval", "--data", s(&f.data), "--checkpoint", s(&f.ckpt), "--per-graph-split"]);
    assert_eq!(out.status.code(), Some(2));
}
