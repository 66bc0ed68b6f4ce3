//! Acceptance suite. Runs every criterion with its tolerance pinned below and
//! prints one line per criterion. Exits non-zero if any criterion fails.
//!
//! Set `PSP_CORA_DIR` to a node-TSV directory holding Cora to run the
//! real-data band; without it that criterion is reported as skipped.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use psp_core::autodiff::{Tape, Var};
use psp_core::data::{encode_checkpoint, generate_sbm, load_node_dataset, Checkpoint, PromptWeights, SbmConfig};
use psp_core::encoders::{gnn_forward_projected, mlp_forward, Mode, Propagation};
use psp_core::experiment::{evaluate_split, mean_std, run_seed, SeedRun};
use psp_core::gradcheck::grad_check_tape;
use psp_core::pretrain::ntxent_pretrain_loss;
use psp_core::prompt::{init_edge_weights, node_task_views, prompt_loss, PrototypeModel};
use psp_core::prompted::AugmentedOperator;
use psp_core::{
    build_csr, gcn_normalize, predict, CsrMatrix, EncoderParams, ExperimentConfig, GraphData, LabeledSet, MetricLine,
    PretrainConfig, PromptConfig, Result, Task, Tensor, Variant,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_TOL: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-5;
const GRAD_BUDGET: Duration = Duration::from_secs(30);
const GRAD_INSTANCES: u64 = 40;
const ORACLE_TOL: f64 = 1e-9;
const EXACT_TOL: f64 = 1e-12;
const FIXTURE_MAX_NODES: usize = 10;
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const RANDOM_BASELINE: f64 = 1.0 / 3.0;
const MARGIN_OVER_NP: f64 = 0.03;
const MARGIN_HOMOPHILOUS: f64 = 0.20;
const MARGIN_HETEROPHILOUS: f64 = 0.10;
const DESK_BUDGET: Duration = Duration::from_secs(120);
const CONCENTRATION: f64 = 0.90;
const EDGE_RATIOS: [f64; 4] = [0.0, 0.01, 0.1, 1.0];
const EDGE_RATIO_GAP: f64 = 0.10;
const CORA_TARGET: f64 = 0.6865;
const CORA_BAND: f64 = 0.06;

enum Status {
    Pass,
    Fail,
    Skip,
}

struct Line {
    id: u32,
    name: &'static str,
    status: Status,
    detail: String,
}

impl Line {
    fn new(id: u32, name: &'static str, ok: bool, detail: String) -> Self {
        let status = if ok { Status::Pass } else { Status::Fail };
        Line { id, name, status, detail }
    }

    fn print(&self) {
        let tag = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        };
        println!("[{tag}] {} {}: {}", self.id, self.name, self.detail);
    }
}

// ---------------------------------------------------------------------------
// Shared fixtures

fn rand_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let m = rng.gen_range(0.1..2.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

fn random_edges(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                edges.push((i, j));
            }
        }
    }
    edges
}

fn toy_graph(n: usize, f: usize, classes: usize, rng: &mut ChaCha8Rng) -> GraphData {
    let a = build_csr(n, &random_edges(n, 0.5, rng)).unwrap();
    let labels = (0..n).map(|i| i % classes).collect();
    GraphData::new(rand_tensor(n, f, rng), a, Some(labels), None, classes).unwrap()
}

fn desk_config() -> ExperimentConfig {
    ExperimentConfig {
        k_shot: 3,
        val_k: 3,
        mask_ratio: 0.0,
        variant: Variant::Psp,
        pretrain: PretrainConfig {
            epochs: 200,
            lr: 5e-4,
            weight_decay: 1e-4,
            tau: 0.5,
            dropout: 0.2,
            hidden_dim: 128,
            seed: 0,
            include_positive_in_denominator: false,
        },
        prompt: PromptConfig {
            epochs: 200,
            lr: 1e-2,
            weight_decay: 1e-4,
            tau: 0.5,
            edge_ratio: 1.0,
            seed: 0,
            task: Task::Node,
            patience: 30,
        },
    }
}

fn sbm(homophily: f64) -> GraphData {
    generate_sbm(&SbmConfig {
        n: 300,
        classes: 3,
        homophily,
        noise: 0.5,
        ..SbmConfig::default()
    })
    .unwrap()
}

// ---------------------------------------------------------------------------
// 1. Gradient checks

fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let (r, c) = tape.shape(y);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = tape.constant(rand_tensor(r, c, &mut rng));
    let m = tape.mul(y, w)?;
    Ok(tape.sum(m))
}

fn rand_pattern(n: usize, rng: &mut ChaCha8Rng) -> CsrMatrix {
    let mut trip = Vec::new();
    for r in 0..n {
        trip.push((r, r, 0.0));
        trip.push((r, (r + 1) % n, 0.0));
        for c in 0..n {
            if c != r && rng.gen_bool(0.4) {
                trip.push((r, c, 0.0));
            }
        }
    }
    CsrMatrix::from_triplets(n, n, &trip).unwrap()
}

#[derive(Default)]
struct GradTally {
    worst: f64,
    worst_case: String,
    checks: usize,
}

impl GradTally {
    fn check<B>(&mut self, case: &str, build: B, x: &Tensor)
    where
        B: Fn(&mut Tape, Var) -> Result<Var>,
    {
        let err = grad_check_tape(build, x, GRAD_STEP).unwrap_or(f64::INFINITY);
        self.checks += 1;
        if err > self.worst || err.is_nan() {
            self.worst = if err.is_nan() { f64::INFINITY } else { err };
            self.worst_case = case.to_string();
        }
    }
}

fn gradient_instance(t: &mut GradTally, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=8);
    let d = rng.gen_range(2..=6);
    let k = rng.gen_range(1..=8);

    let a = rand_tensor(n, d, &mut rng);
    let b = rand_tensor(d, k, &mut rng);
    let other = rand_tensor(n, d, &mut rng);
    let bias = rand_tensor(1, d, &mut rng);
    let s = rng.gen_range(-3.0..3.0);
    let p = rng.gen_range(0.0..0.9);

    t.check("matmul lhs", |tp, x| { let c = tp.constant(b.clone()); let y = tp.matmul(x, c)?; project(tp, y, seed) }, &a);
    t.check("matmul rhs", |tp, x| { let c = tp.constant(a.clone()); let y = tp.matmul(c, x)?; project(tp, y, seed) }, &b);
    t.check("relu", |tp, x| { let y = tp.relu(x); project(tp, y, seed) }, &a);
    t.check("scale", |tp, x| { let y = tp.scale(x, s); project(tp, y, seed) }, &a);
    t.check("add", |tp, x| { let o = tp.constant(other.clone()); let y = tp.add(x, o)?; project(tp, y, seed) }, &a);
    t.check("mul", |tp, x| { let o = tp.constant(other.clone()); let y = tp.mul(o, x)?; project(tp, y, seed) }, &a);
    t.check("add_row input", |tp, x| { let bb = tp.constant(bias.clone()); let y = tp.add_row(x, bb)?; project(tp, y, seed) }, &a);
    t.check("add_row bias", |tp, x| { let aa = tp.constant(a.clone()); let y = tp.add_row(aa, x)?; project(tp, y, seed) }, &bias);
    t.check("dropout", |tp, x| { let y = tp.dropout(x, p, seed, 1, true)?; project(tp, y, seed) }, &a);
    t.check("cosine lhs", |tp, x| { let o = tp.constant(other.clone()); let y = tp.cosine_sim_matrix(x, o)?; project(tp, y, seed) }, &a);
    t.check("cosine rhs", |tp, x| { let o = tp.constant(a.clone()); let y = tp.cosine_sim_matrix(o, x)?; project(tp, y, seed) }, &other);
    t.check("cosine self", |tp, x| { let y = tp.cosine_sim_matrix(x, x)?; project(tp, y, seed) }, &a);

    let picks: Vec<usize> = (0..n + 2).map(|_| rng.gen_range(0..n)).collect();
    let groups: Arc<Vec<usize>> = Arc::new((0..n).map(|i| i % n.min(3)).collect());
    let n_groups = n.min(3);
    t.check("select_rows", |tp, x| { let y = tp.select_rows(x, &picks)?; project(tp, y, seed) }, &a);
    t.check("vstack", |tp, x| { let o = tp.constant(other.clone()); let y = tp.vstack(x, o)?; project(tp, y, seed) }, &a);
    t.check("segment_mean", |tp, x| { let y = tp.segment_mean(x, Arc::clone(&groups), n_groups)?; project(tp, y, seed) }, &a);
    t.check("sum", |tp, x| Ok(tp.sum(x)), &a);

    let pattern = Arc::new(rand_pattern(n, &mut rng));
    let vals = rand_tensor(1, pattern.nnz(), &mut rng);
    let fixed = Arc::new(pattern.with_values(vals.data().to_vec()).unwrap());
    t.check("spmm", |tp, x| { let y = tp.spmm(Arc::clone(&fixed), x)?; project(tp, y, seed) }, &a);
    t.check("spmm_values values", |tp, v| { let x = tp.constant(a.clone()); let y = tp.spmm_values(Arc::clone(&pattern), v, x)?; project(tp, y, seed) }, &vals);
    t.check("spmm_values dense", |tp, x| { let v = tp.constant(vals.clone()); let y = tp.spmm_values(Arc::clone(&pattern), v, x)?; project(tp, y, seed) }, &a);
    t.check("sym_normalize", |tp, v| { let y = tp.sym_normalize(Arc::clone(&pattern), v)?; project(tp, y, seed) }, &vals);
    let src = rand_tensor(2, 2, &mut rng);
    let map: Arc<Vec<Option<usize>>> = Arc::new(
        (0..pattern.nnz())
            .map(|_| if rng.gen_bool(0.6) { Some(rng.gen_range(0..4)) } else { None })
            .collect(),
    );
    let base = rand_tensor(1, pattern.nnz(), &mut rng).data().to_vec();
    t.check("gather", |tp, v| { let y = tp.gather(v, Arc::clone(&map), &base)?; project(tp, y, seed) }, &src);

    let logits = rand_tensor(n, k.max(2), &mut rng);
    let pos: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k.max(2))).collect();
    t.check("contrastive_nll", |tp, v| tp.contrastive_nll(v, &pos, false), &logits);
    t.check("contrastive_nll with positive", |tp, v| tp.contrastive_nll(v, &pos, true), &logits);

    // Pre-training loss, both directly on the views and back through the encoders.
    let tau = [0.5, 1.0][(seed % 2) as usize];
    t.check("pretrain loss z1", |tp, v| { let z2 = tp.constant(other.clone()); ntxent_pretrain_loss(tp, v, z2, tau, false) }, &a);
    t.check("pretrain loss z2", |tp, v| { let z1 = tp.constant(a.clone()); ntxent_pretrain_loss(tp, z1, v, tau, false) }, &other);

    let g = toy_graph(n, d, 2, &mut rng);
    let params = EncoderParams::init(d, 4, seed);
    let prop = Propagation::Fixed(Arc::new(gcn_normalize(g.adjacency()).unwrap()));
    let w_gnn = params.gnn[0].weight.value.clone();
    t.check(
        "pretrain loss through encoders",
        |tp, w| {
            let bound = params.bind(tp);
            let x = tp.constant(g.features().clone());
            let z1 = mlp_forward(tp, x, &bound, Mode::Eval)?;
            let xw = tp.matmul(x, w)?;
            let z2 = gnn_forward_projected(tp, xw, &prop, &bound, Mode::Eval)?;
            ntxent_pretrain_loss(tp, z1, z2, tau, false)
        },
        &w_gnn,
    );

    // Prompt loss through the augmented propagation into W.
    let mut frozen = params.clone();
    frozen.frozen = true;
    let xp = rand_tensor(2, d, &mut rng);
    let model = PrototypeModel::new(&g, &xp, &frozen, Task::Node).unwrap();
    let anchors = rand_tensor(n.min(4), 4, &mut rng);
    let labels: Vec<usize> = (0..anchors.rows()).map(|i| i % 2).collect();
    let w = rand_tensor(n, 2, &mut rng);
    t.check(
        "prompt loss through prompted graph",
        |tp, v| {
            let p = model.forward(tp, v)?;
            let an = tp.constant(anchors.clone());
            prompt_loss(tp, an, p, &labels, tau)
        },
        &w,
    );
}

fn criterion_gradients() -> Line {
    let start = Instant::now();
    let mut tally = GradTally::default();
    for seed in 0..GRAD_INSTANCES {
        gradient_instance(&mut tally, seed);
    }
    let elapsed = start.elapsed();
    let ok = tally.worst < GRAD_TOL && elapsed < GRAD_BUDGET;
    Line::new(
        1,
        "gradient correctness",
        ok,
        format!(
            "{} checks, max rel err {:.2e} ({}) < {GRAD_TOL:e}; {:.1}s < {}s",
            tally.checks,
            tally.worst,
            tally.worst_case,
            elapsed.as_secs_f64(),
            GRAD_BUDGET.as_secs()
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. Formula oracles

fn criterion_formula_oracles() -> Line {
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]));
    let l = ntxent_pretrain_loss(&mut tape, z, z, 1.0, false).unwrap();
    let two_node = tape.value(l).get(0, 0);
    let loss_err = (two_node + 1.0).abs();

    let pred = predict(&Tensor::from_rows(&[&[1.0, 0.0, 0.0]]), &Tensor::identity(3), 1.0).unwrap();
    let e = 1f64.exp();
    let want = [e / (e + 2.0), 1.0 / (e + 2.0), 1.0 / (e + 2.0)];
    let prob_err = pred
        .probs
        .row(0)
        .iter()
        .zip(want)
        .map(|(g, w)| (g - w).abs())
        .fold(0.0, f64::max);

    let mut init_err = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d, c) = (rng.gen_range(3..=12), rng.gen_range(1..=6), rng.gen_range(1..=3));
        let z2 = rand_tensor(n, d, &mut rng);
        let items: Vec<(usize, usize)> = (0..n).filter(|_| rng.gen_bool(0.6)).map(|i| (i, i % c)).collect();
        let mut items = items;
        for cls in 0..c {
            if !items.iter().any(|&(_, k)| k == cls) {
                items.push((cls, cls));
            }
        }
        let labeled = LabeledSet::new(items.clone(), 1).unwrap();
        let w = init_edge_weights(&z2, &labeled, c).unwrap();
        for i in 0..n {
            for cls in 0..c {
                let members: Vec<usize> = items.iter().filter(|&&(_, k)| k == cls).map(|&(j, _)| j).collect();
                let mut dot = 0.0;
                for f in 0..d {
                    let mut mean = 0.0;
                    for &j in &members {
                        mean += z2.get(j, f);
                    }
                    mean /= members.len() as f64;
                    dot += z2.get(i, f) * mean;
                }
                init_err = init_err.max((w.get(i, cls) - dot).abs());
            }
        }
    }

    let ok = loss_err <= ORACLE_TOL && prob_err <= ORACLE_TOL && init_err <= EXACT_TOL;
    Line::new(
        2,
        "formula oracles",
        ok,
        format!(
            "two-node loss {two_node:.12} (|err| {loss_err:.1e} <= {ORACLE_TOL:e}); softmax |err| {prob_err:.1e} <= {ORACLE_TOL:e}; edge init |err| {init_err:.1e} <= {EXACT_TOL:e}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. Structural invariants

fn fixture_graphs() -> Vec<CsrMatrix> {
    let mut out = Vec::new();
    for n in 1..=5usize {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        for bits in 0u32..(1 << pairs.len()) {
            let edges: Vec<(usize, usize)> =
                pairs.iter().enumerate().filter(|(k, _)| bits >> k & 1 == 1).map(|(_, e)| *e).collect();
            out.push(build_csr(n, &edges).unwrap());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..400 {
        let n = rng.gen_range(6..=FIXTURE_MAX_NODES);
        let p = rng.gen_range(0.05..0.9);
        out.push(build_csr(n, &random_edges(n, p, &mut rng)).unwrap());
    }
    out
}

fn dense_gcn(a: &CsrMatrix) -> Tensor {
    let n = a.rows();
    let mut m = a.to_dense();
    for i in 0..n {
        m.set(i, i, m.get(i, i) + 1.0);
    }
    let deg: Vec<f64> = (0..n).map(|i| m.row(i).iter().sum()).collect();
    let mut out = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, m.get(i, j) / (deg[i] * deg[j]).sqrt());
        }
    }
    out
}

fn criterion_structural() -> Line {
    let graphs = fixture_graphs();
    let mut gcn_err = 0.0f64;
    let mut reduce_err = 0.0f64;
    for a in &graphs {
        let n = a.rows();
        let got = gcn_normalize(a).unwrap().to_dense();
        gcn_err = gcn_err.max(got.max_abs_diff(&dense_gcn(a)));

        let op = AugmentedOperator::for_nodes(a, 3).unwrap();
        let aug = op.normalized_matrix(&Tensor::zeros(n, 3)).unwrap().to_dense();
        for i in 0..n + 3 {
            for j in 0..n + 3 {
                let want = if i < n && j < n {
                    got.get(i, j)
                } else if i == j {
                    1.0
                } else {
                    0.0
                };
                reduce_err = reduce_err.max((aug.get(i, j) - want).abs());
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut mlp_bitwise = true;
    for trial in 0..10u64 {
        let n = rng.gen_range(2..=FIXTURE_MAX_NODES);
        let g = toy_graph(n, 5, 2, &mut rng);
        let other = g.with_adjacency(build_csr(n, &random_edges(n, 0.7, &mut rng)).unwrap()).unwrap();
        let params = EncoderParams::init(5, 8, trial);
        let a = node_task_views(&g, &params).unwrap().anchors;
        let b = node_task_views(&other, &params).unwrap().anchors;
        mlp_bitwise &= a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());

        let mode = Mode::Train { dropout: 0.3, seed: trial, step: 2 };
        let train_view = |gd: &GraphData| {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let x = tape.constant(gd.features().clone());
            let z = mlp_forward(&mut tape, x, &bound, mode).unwrap();
            tape.value(z).clone()
        };
        let (ta, tb) = (train_view(&g), train_view(&other));
        mlp_bitwise &= ta.data().iter().zip(tb.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    }

    let ok = gcn_err <= EXACT_TOL && reduce_err <= EXACT_TOL && mlp_bitwise;
    Line::new(
        3,
        "structural invariants",
        ok,
        format!(
            "{} fixture graphs <= {FIXTURE_MAX_NODES} nodes: normalization |err| {gcn_err:.1e}, W=0 reduction |err| {reduce_err:.1e} (<= {EXACT_TOL:e}); MLP view bitwise invariant: {mlp_bitwise}",
            graphs.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 4-8. Desk experiments

struct DeskRuns {
    graph: GraphData,
    runs: Vec<SeedRun>,
    psp: Vec<f64>,
    np: Vec<f64>,
    elapsed: Duration,
}

fn desk_runs(homophily: f64, with_np: bool) -> DeskRuns {
    let start = Instant::now();
    let graph = sbm(homophily);
    let cfg = desk_config();
    let mut runs = Vec::new();
    let (mut psp, mut np) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let run = run_seed(&graph, &cfg, seed).unwrap();
        psp.push(run.evaluation.test_accuracy);
        if with_np {
            let prompt = PromptConfig { seed, ..cfg.prompt.clone() };
            let e = evaluate_split(&graph, &run.split, &run.encoders, Variant::PspNp, &prompt).unwrap();
            np.push(e.test_accuracy);
        }
        runs.push(run);
    }
    DeskRuns {
        graph,
        runs,
        psp,
        np,
        elapsed: start.elapsed(),
    }
}

fn criterion_homophilous(d: &DeskRuns) -> Line {
    let (psp, psp_sd) = mean_std(&d.psp);
    let (np, np_sd) = mean_std(&d.np);
    let ok = psp - np >= MARGIN_OVER_NP && psp - RANDOM_BASELINE >= MARGIN_HOMOPHILOUS && d.elapsed < DESK_BUDGET;
    Line::new(
        4,
        "homophilous desk experiment",
        ok,
        format!(
            "PSP {:.2}±{:.2} vs PSP-np {:.2}±{:.2}: gap {:+.2} pts (>= {:.0}); over random {:+.2} pts (>= {:.0}); {:.1}s < {}s",
            100.0 * psp,
            100.0 * psp_sd,
            100.0 * np,
            100.0 * np_sd,
            100.0 * (psp - np),
            100.0 * MARGIN_OVER_NP,
            100.0 * (psp - RANDOM_BASELINE),
            100.0 * MARGIN_HOMOPHILOUS,
            d.elapsed.as_secs_f64(),
            DESK_BUDGET.as_secs()
        ),
    )
}

fn criterion_heterophilous(d: &DeskRuns) -> Line {
    let (psp, psp_sd) = mean_std(&d.psp);
    let ok = psp - RANDOM_BASELINE >= MARGIN_HETEROPHILOUS;
    Line::new(
        5,
        "heterophilous desk experiment",
        ok,
        format!(
            "PSP {:.2}±{:.2}: over random {:+.2} pts (>= {:.0})",
            100.0 * psp,
            100.0 * psp_sd,
            100.0 * (psp - RANDOM_BASELINE),
            100.0 * MARGIN_HETEROPHILOUS
        ),
    )
}

fn criterion_concentration(d: &DeskRuns) -> Line {
    let labels = d.graph.labels().unwrap();
    let (mut hits, mut total) = (0usize, 0usize);
    let mut per_seed = Vec::new();
    for run in &d.runs {
        let w = &run.evaluation.tuned.as_ref().unwrap().prompted.weights;
        let arg = w.argmax_rows();
        let h = run.split.train.iter().filter(|&&i| arg[i] == labels[i]).count();
        per_seed.push(format!("{h}/{}", run.split.train.len()));
        hits += h;
        total += run.split.train.len();
    }
    let frac = hits as f64 / total as f64;
    Line::new(
        6,
        "weight concentration",
        frac >= CONCENTRATION,
        format!(
            "{hits}/{total} = {:.1}% of training rows peak at their class (>= {:.0}%); per seed [{}]",
            100.0 * frac,
            100.0 * CONCENTRATION,
            per_seed.join(", ")
        ),
    )
}

fn criterion_edge_ratio(d: &DeskRuns) -> Line {
    let cfg = desk_config();
    let labels = d.graph.labels().unwrap();
    let n = d.graph.n_nodes();
    let c = d.graph.n_classes();
    let mut counts_ok = true;
    let mut count_notes = Vec::new();
    let mut means = Vec::new();
    for r in EDGE_RATIOS {
        let mut accs = Vec::new();
        for run in &d.runs {
            let prompt = PromptConfig { seed: run.seed, edge_ratio: r, ..cfg.prompt.clone() };
            let e = evaluate_split(&d.graph, &run.split, &run.encoders, Variant::Psp, &prompt).unwrap();
            let tuned = e.tuned.as_ref().unwrap();
            let n_t = run.split.train_set(labels).unwrap().len();
            let expected = (n_t + (r * n as f64).floor() as usize) * c;
            let got = tuned.prompted.parameter_count();
            if got != expected {
                counts_ok = false;
                count_notes.push(format!("r={r} seed {}: {got} != {expected}", run.seed));
            }
            // Rows outside the mask must still hold exactly zero.
            let w = &tuned.prompted.weights;
            for (i, keep) in tuned.prompted.trainable_rows.iter().enumerate() {
                if !keep && w.row(i).iter().any(|v| *v != 0.0) {
                    counts_ok = false;
                    count_notes.push(format!("r={r} seed {}: masked row {i} nonzero", run.seed));
                }
            }
            accs.push(e.test_accuracy);
        }
        means.push(mean_std(&accs).0);
    }
    let gap = means[3] - means[0];
    let ok = counts_ok && gap.abs() <= EDGE_RATIO_GAP;
    let acc_notes: Vec<String> = EDGE_RATIOS
        .iter()
        .zip(&means)
        .map(|(r, m)| format!("r={r}: {:.2}", 100.0 * m))
        .collect();
    let counts = if counts_ok { "all exact".to_string() } else { count_notes.join("; ") };
    Line::new(
        7,
        "edge-ratio robustness",
        ok,
        format!(
            "accuracy [{}]; |r=1 - r=0| {:.2} pts (<= {:.0}); parameter counts (N_t + floor(rN))*C: {counts}",
            acc_notes.join(", "),
            100.0 * gap.abs(),
            100.0 * EDGE_RATIO_GAP
        ),
    )
}

fn seed_artifacts(run: &SeedRun, cfg: &ExperimentConfig) -> (Vec<u8>, Vec<String>) {
    let tuned = run.evaluation.tuned.as_ref().unwrap();
    let ckpt = Checkpoint {
        hidden_dim: cfg.pretrain.hidden_dim,
        tau: cfg.pretrain.tau,
        seed: run.seed,
        encoders: run.encoders.clone(),
        prompt: Some(PromptWeights {
            weights: tuned.prompted.weights.clone(),
            mask: tuned.prompted.trainable_rows.clone(),
        }),
    };
    let mut lines = vec![MetricLine::HEADER.to_string()];
    for (id, acc) in [("val", run.evaluation.val_accuracy), ("test", run.evaluation.test_accuracy)] {
        lines.push(
            MetricLine {
                run_id: format!("psp-{id}"),
                seed: run.seed,
                task: Task::Node,
                shots: cfg.k_shot,
                accuracy: acc,
            }
            .to_string(),
        );
    }
    lines.extend(run.pretrain_losses.iter().map(|l| format!("{:016x}", l.to_bits())));
    lines.extend(tuned.losses.iter().map(|l| format!("{:016x}", l.to_bits())));
    (encode_checkpoint(&ckpt), lines)
}

fn criterion_determinism(d: &DeskRuns) -> Line {
    let cfg = desk_config();
    let first = &d.runs[0];
    let second = run_seed(&d.graph, &cfg, first.seed).unwrap();
    let (bytes_a, lines_a) = seed_artifacts(first, &cfg);
    let (bytes_b, lines_b) = seed_artifacts(&second, &cfg);
    let regenerated = sbm(0.8);
    let graph_same = regenerated.features().data().iter().zip(d.graph.features().data()).all(|(a, b)| a.to_bits() == b.to_bits())
        && regenerated.adjacency() == d.graph.adjacency();
    let ok = bytes_a == bytes_b && lines_a == lines_b && graph_same;
    Line::new(
        8,
        "determinism",
        ok,
        format!(
            "checkpoint {} bytes identical: {}; {} metric/loss lines identical: {}; regenerated graph identical: {graph_same}",
            bytes_a.len(),
            bytes_a == bytes_b,
            lines_a.len(),
            lines_a == lines_b
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. Optional real-data band

fn criterion_cora() -> Line {
    let name = "Cora band";
    let Some(dir) = std::env::var_os("PSP_CORA_DIR").map(PathBuf::from) else {
        return Line {
            id: 9,
            name,
            status: Status::Skip,
            detail: "PSP_CORA_DIR not set; optional real-data criterion not run".into(),
        };
    };
    let g = match load_node_dataset(&dir) {
        Ok(g) => g,
        Err(e) => return Line::new(9, name, false, format!("cannot load {}: {e}", dir.display())),
    };
    let cfg = desk_config();
    let accs: Vec<f64> = SEEDS.iter().map(|&s| run_seed(&g, &cfg, s).unwrap().evaluation.test_accuracy).collect();
    let (mean, sd) = mean_std(&accs);
    Line::new(
        9,
        name,
        (mean - CORA_TARGET).abs() <= CORA_BAND,
        format!(
            "3-shot mean {:.2}±{:.2} vs {:.2} (within ±{:.0} pts)",
            100.0 * mean,
            100.0 * sd,
            100.0 * CORA_TARGET,
            100.0 * CORA_BAND
        ),
    )
}

fn main() {
    let mut lines = Vec::new();
    let mut emit = |line: Line| {
        line.print();
        lines.push(line);
    };
    emit(criterion_gradients());
    emit(criterion_formula_oracles());
    emit(criterion_structural());
    let homophilous = desk_runs(0.8, true);
    emit(criterion_homophilous(&homophilous));
    let heterophilous = desk_runs(0.2, false);
    emit(criterion_heterophilous(&heterophilous));
    emit(criterion_concentration(&homophilous));
    emit(criterion_edge_ratio(&homophilous));
    emit(criterion_determinism(&homophilous));
    emit(criterion_cora());

    let failed: Vec<String> = lines
        .iter()
        .filter(|l| matches!(l.status, Status::Fail))
        .map(|l| format!("{} {}", l.id, l.name))
        .collect();
    let passed = lines.iter().filter(|l| matches!(l.status, Status::Pass)).count();
    let skipped = lines.iter().filter(|l| matches!(l.status, Status::Skip)).count();
    println!("acceptance: {passed} passed, {} failed, {skipped} skipped", failed.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.join("; "));
        std::process::exit(1);
    }
}
