//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Run with `cargo test --test acceptance` (release-grade codegen
//! comes from the workspace test profile).

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use neural_atoms::gnn::{Backbone, GnnLayer, GraphOperators};
use neural_atoms::graph::{generate_lri_task, path_graph, MolecularGraph};
use neural_atoms::harness::{evaluate, fit, mrr, train, Augment, Checkpoint, TrainConfig};
use neural_atoms::neural_atoms::{enhance, neural_atom_block, NeuralAtomLayerParams};
use neural_atoms::params::{grad_check_params, ParamStore};
use neural_atoms::schedule::{compute_k_schedule, KStrategy};
use neural_atoms::tensor::{Tape, Tensor};
use neural_atoms::{ewald, EwaldSystem64};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Tensor<f64> {
    Tensor::new(vec![r, c], (0..r * c).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// Connected random graph: a random spanning tree plus extra edges.
fn random_graph(rng: &mut ChaCha8Rng, n: usize, d: usize) -> MolecularGraph {
    let mut edges = Vec::new();
    for v in 1..n {
        edges.push((rng.gen_range(0..v), v));
    }
    for _ in 0..n / 2 {
        let (u, v) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if u != v && !edges.contains(&(u.min(v), u.max(v))) {
            edges.push((u.min(v), u.max(v)));
        }
    }
    let feats = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    MolecularGraph::new(n, edges, feats, None).unwrap()
}

struct Block {
    store: ParamStore<f64>,
    gnn: GnnLayer,
    na: NeuralAtomLayerParams,
}

fn block(rng: &mut ChaCha8Rng, d: usize, k: usize, heads: usize) -> Block {
    let mut store = ParamStore::new();
    let gnn = GnnLayer::init(Backbone::Gcn, &mut store, "gnn", d, d, rng).unwrap();
    let na = NeuralAtomLayerParams::init(&mut store, "na", k, heads, d, rng).unwrap();
    // Spread the queries so attention is far from uniform.
    store.set(na.query, uniform(rng, k, d, 1.0)).unwrap();
    Block { store, gnn, na }
}

fn c1_gradient_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = random_graph(&mut rng, 6, 8);
    let b = block(&mut rng, 8, 3, 2);
    let ops = GraphOperators::new(&g);
    let weights = uniform(&mut rng, 6, 8, 1.0);
    let err = grad_check_params(
        &b.store,
        &[g.features_tensor()],
        |tape, bind, extra| {
            let (h, _) = neural_atom_block(tape, bind, extra[0], &ops, &b.gnn, &b.na)?;
            let w = tape.constant(weights.clone());
            let prod = tape.mul(h, w)?;
            tape.sum(prod)
        },
        1e-5,
    )
    .map_err(|e| e.to_string())?;
    check(err < 1e-4, format!("max relative error {err:e}"))?;
    Ok(format!("max relative error {err:.2e}"))
}

fn c2_allocation_stochasticity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut rows = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=25);
        let d = rng.gen_range(2..=8);
        let k = rng.gen_range(1..=6);
        let heads = rng.gen_range(1..=3);
        let b = block(&mut rng, d, k, heads);
        let scale = rng.gen_range(0.1..20.0);
        let h = uniform(&mut rng, n, d, scale);
        let mut tape = Tape::new();
        let bind = b.store.bind(&mut tape);
        let hv = tape.constant(h);
        let (_, vars) = enhance(&mut tape, &bind, hv, &b.na).map_err(|e| e.to_string())?;
        let trace = vars.materialize(&tape);
        check(trace.a_hat.len() == heads, "wrong number of allocation matrices")?;
        for a in &trace.a_hat {
            check(a.shape() == [k, n], format!("allocation shape {:?}", a.shape()))?;
            for r in 0..k {
                check(a.row(r).iter().all(|&x| x >= 0.0), "negative allocation weight")?;
                worst = worst.max((a.row(r).iter().sum::<f64>() - 1.0).abs());
                rows += 1;
            }
        }
    }
    check(worst <= 1e-10, format!("row sum off by {worst:e}"))?;
    Ok(format!("{rows} rows, max |sum - 1| = {worst:.1e}"))
}

fn c3_permutation_equivariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_h, mut worst_na): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let n = rng.gen_range(1..=20);
        let d = 6;
        let g = random_graph(&mut rng, n, d);
        let k = rng.gen_range(1..=5);
        let b = block(&mut rng, d, k, 2);
        let run = |g: &MolecularGraph| {
            let mut tape = Tape::new();
            let bind = b.store.bind(&mut tape);
            let x = tape.constant(g.features_tensor());
            let (h, vars) = neural_atom_block(&mut tape, &bind, x, &GraphOperators::new(g), &b.gnn, &b.na).unwrap();
            (tape.value(h).clone(), vars.materialize(&tape).h_na)
        };
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let (h, na) = run(&g);
        let (hp, nap) = run(&g.permute(&perm).map_err(|e| e.to_string())?);
        // Node i is relabelled perm[i]; check that on the features, then
        // build P·H the same way by hand.
        let xp = g.permute(&perm).unwrap().features_tensor::<f64>();
        let x = g.features_tensor::<f64>();
        let mut expect = Tensor::zeros(h.shape());
        for (i, &p) in perm.iter().enumerate() {
            check(xp.row(p) == x.row(i), "permutation convention mismatch")?;
            for c in 0..h.cols() {
                expect.set(p, c, h.get(i, c));
            }
        }
        worst_h = worst_h.max(hp.max_abs_diff(&expect).unwrap());
        worst_na = worst_na.max(nap.max_abs_diff(&na).unwrap());
    }
    check(worst_h < 1e-10, format!("block equivariance off by {worst_h:e}"))?;
    check(worst_na < 1e-10, format!("H_NA invariance off by {worst_na:e}"))?;
    Ok(format!("max diff block {worst_h:.1e}, H_NA {worst_na:.1e}"))
}

/// Full Jacobian dH[v, :] / dx[u, :] by one backward pass per output column.
fn jacobian(
    store: &ParamStore<f64>,
    g: &MolecularGraph,
    gnn: &GnnLayer,
    na: Option<&NeuralAtomLayerParams>,
    v: usize,
    u: usize,
) -> Vec<f64> {
    let mut out = Vec::new();
    let width = gnn_width(store, g, gnn);
    for j in 0..width {
        let mut tape = Tape::new();
        let bind = store.bind(&mut tape);
        let x = tape.leaf(g.features_tensor());
        let ops = GraphOperators::new(g);
        let h = match na {
            Some(p) => neural_atom_block(&mut tape, &bind, x, &ops, gnn, p).unwrap().0,
            None => gnn.forward(&mut tape, &bind, x, &ops).unwrap(),
        };
        let mut sel = Tensor::zeros(tape.value(h).shape());
        sel.set(v, j, 1.0);
        let sel = tape.constant(sel);
        let picked = tape.mul(h, sel).unwrap();
        let loss = tape.sum(picked).unwrap();
        tape.backward(loss).unwrap();
        out.extend_from_slice(tape.grad(x).unwrap().row(u));
    }
    out
}

fn gnn_width(store: &ParamStore<f64>, g: &MolecularGraph, gnn: &GnnLayer) -> usize {
    let mut tape = Tape::new();
    let bind = store.bind(&mut tape);
    let x = tape.constant(g.features_tensor());
    let h = gnn.forward(&mut tape, &bind, x, &GraphOperators::new(g)).unwrap();
    tape.value(h).cols()
}

fn c4_long_range_channel() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // Six nodes, one-hot colours at both ends; path_len counts nodes.
    let g = path_graph(6, 2, 0, 1).map_err(|e| e.to_string())?;
    let feats: Vec<Vec<f64>> = g
        .node_features()
        .iter()
        .map(|row| row.iter().map(|&x| x + rng.gen_range(-0.5..0.5)).collect())
        .collect();
    let g = g.with_features(feats).map_err(|e| e.to_string())?;
    check(g.hop_distances(0)[5] == Some(5), "nodes 0 and 5 are not 5 hops apart")?;
    let d = g.feature_dim();
    let mut store = ParamStore::new();
    let gnn = GnnLayer::init(Backbone::Gcn, &mut store, "gnn", d, 8, &mut rng).unwrap();
    let na = NeuralAtomLayerParams::init(&mut store, "na", 2, 2, 8, &mut rng).unwrap();

    let with_na = jacobian(&store, &g, &gnn, Some(&na), 5, 0);
    let plain = jacobian(&store, &g, &gnn, None, 5, 0);
    let largest = with_na.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    check(largest > 1e-8, format!("neural-atom Jacobian max |entry| {largest:e}"))?;
    check(plain.iter().all(|&x| x == 0.0), "plain GCN Jacobian is not exactly zero")?;
    Ok(format!("max |dH5/dx0| = {largest:.3e} with neural atoms, exactly 0 without"))
}

fn c5_k_schedule() -> Outcome {
    let s = compute_k_schedule(KStrategy::Fixed, 0.15, 150.94, 5).map_err(|e| e.to_string())?;
    check(s.counts == [22; 5], format!("{:?}", s.counts))?;
    Ok(format!("{:?}", s.counts))
}

/// Minimum-image squared distance.
fn min_image_sq(sys: &EwaldSystem64, i: usize, j: usize) -> f64 {
    let c = sys.cell_edge;
    (0..3)
        .map(|k| {
            let x = sys.positions[i][k] - sys.positions[j][k];
            let x = x - (x / c).round() * c;
            x * x
        })
        .sum()
}

fn c6_ewald_self_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cell = 3.0;
    let z = vec![2.0, -1.0, 1.0, -2.0];
    let positions = z.iter().map(|_| [0; 3].map(|_: i32| rng.gen_range(0.0..cell))).collect();
    let mut sys = EwaldSystem64 {
        z,
        positions,
        cell_edge: cell,
        a: 0.3,
        real_cutoff: 8,
        recip_cutoff: 10,
    };
    let e03 = ewald::ewald_energy(&sys).map_err(|e| e.to_string())?;
    sys.a = 0.5;
    let e05 = ewald::ewald_energy(&sys).map_err(|e| e.to_string())?;
    let rel = ((e03 - e05) / e05).abs();
    check(rel < 1e-4, format!("E(0.3)={e03} E(0.5)={e05} rel {rel:e}"))?;

    // Pair entries must be a-invariant too.
    sys.a = 0.3;
    let p03 = ewald::pair_interaction(&sys, &ewald::ewald_sum_matrix(&sys).map_err(|e| e.to_string())?);
    sys.a = 0.5;
    let p05 = ewald::pair_interaction(&sys, &ewald::ewald_sum_matrix(&sys).map_err(|e| e.to_string())?);
    let pair_diff = p03.max_abs_diff(&p05).unwrap();
    check(pair_diff < 1e-8, format!("pair interactions differ by {pair_diff:e}"))?;

    // A cube-ordered image sum converges to the Ewald energy plus the
    // surface term 2π/(3V)·D², with D² = -½ Σ_ij Z_i Z_j |d_ij|².
    let n = sys.z.len();
    let mut d2 = 0.0;
    for i in 0..n {
        for j in 0..n {
            d2 -= 0.5 * sys.z[i] * sys.z[j] * min_image_sq(&sys, i, j);
        }
    }
    let target = e05 + 2.0 * std::f64::consts::PI / (3.0 * cell.powi(3)) * d2;
    let mut errs = Vec::new();
    for shells in [2, 4, 8, 16] {
        let d = ewald::direct_sum_oracle(&sys, shells).map_err(|e| e.to_string())?;
        errs.push((0.5 * d.sum() - target).abs());
    }
    check(errs.windows(2).all(|w| w[1] < w[0]), format!("direct sum not monotone: {errs:?}"))?;
    check(errs[3] / target.abs() < 1e-2, format!("direct sum ends {:e} from target", errs[3]))?;
    Ok(format!(
        "E(a=0.3)={e03:.8} E(a=0.5)={e05:.8} rel {rel:.1e}; direct-sum error {:.1e} -> {:.1e}",
        errs[0], errs[3]
    ))
}

struct Lri {
    plain: f64,
    na: f64,
    vn: f64,
    times: [Duration; 3],
}

fn final_test_accuracy(history: &[neural_atoms::harness::MetricRow]) -> f64 {
    history
        .iter()
        .rev()
        .find(|r| r.split == "test" && r.metric == "accuracy")
        .map(|r| r.value)
        .unwrap_or(f64::NAN)
}

fn run_lri() -> Result<Lri, String> {
    let train_set = generate_lri_task(2000, 20, 2, 0).map_err(|e| e.to_string())?;
    let test_set = generate_lri_task(500, 20, 2, 1).map_err(|e| e.to_string())?;
    let mut acc = [0.0; 3];
    let mut times = [Duration::ZERO; 3];
    for (i, augment) in [Augment::None, Augment::NeuralAtoms, Augment::VirtualNode].into_iter().enumerate() {
        let cfg = TrainConfig {
            backbone: Backbone::Gcn,
            augment,
            layers: 3,
            hidden: 32,
            k_strategy: KStrategy::Fixed,
            proportion: 0.2,
            epochs: 50,
            seed: 0,
            ..TrainConfig::default()
        };
        let t = Instant::now();
        let out = fit(&cfg, &train_set, Some(&test_set)).map_err(|e| e.to_string())?;
        times[i] = t.elapsed();
        if augment == Augment::NeuralAtoms {
            let counts = out.model.spec.k_schedule.as_ref().map(|s| s.counts.clone());
            check(counts.as_deref() == Some(&[4, 4, 4][..]), format!("K = {counts:?}"))?;
        }
        acc[i] = final_test_accuracy(&out.history);
    }
    Ok(Lri { plain: acc[0], na: acc[1], vn: acc[2], times })
}

fn c7_synthetic_task(lri: &Result<Lri, String>) -> Outcome {
    let r = lri.as_ref().map_err(Clone::clone)?;
    let limit = Duration::from_secs(300);
    let detail = format!(
        "plain GCN {:.3} ({:.0}s), GCN+NA {:.3} ({:.0}s)",
        r.plain,
        r.times[0].as_secs_f64(),
        r.na,
        r.times[1].as_secs_f64()
    );
    check(r.plain <= 0.60, format!("plain GCN accuracy too high: {detail}"))?;
    check(r.na >= 0.90, format!("neural-atom accuracy too low: {detail}"))?;
    check(r.times[0] < limit && r.times[1] < limit, format!("over 5 minutes: {detail}"))?;
    Ok(detail)
}

fn c8_baseline_ordering(lri: &Result<Lri, String>) -> Outcome {
    let r = lri.as_ref().map_err(Clone::clone)?;
    let detail = format!("GCN+NA {:.3}, GCN+VN {:.3} ({:.0}s)", r.na, r.vn, r.times[2].as_secs_f64());
    check(r.na >= r.vn - 0.02, detail.clone())?;
    Ok(detail)
}

fn c9_determinism_and_persistence() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let train_path = dir.path().join("train.jsonl");
    let test_path = dir.path().join("test.jsonl");
    neural_atoms::graph::save_dataset(&train_path, &generate_lri_task(200, 12, 2, 0).unwrap()).unwrap();
    neural_atoms::graph::save_dataset(&test_path, &generate_lri_task(50, 12, 2, 1).unwrap()).unwrap();
    let mut csvs = Vec::new();
    let mut checkpoints = Vec::new();
    for run in ["a", "b"] {
        let cfg = TrainConfig {
            augment: Augment::NeuralAtoms,
            layers: 2,
            hidden: 16,
            epochs: 4,
            seed: 7,
            dataset: Some(train_path.clone()),
            test_dataset: Some(test_path.clone()),
            out: Some(dir.path().join(run)),
            ..TrainConfig::default()
        };
        let (_, files) = train(&cfg).map_err(|e| e.to_string())?;
        csvs.push(std::fs::read(&files.metrics).map_err(|e| e.to_string())?);
        // The checkpoint records its own output directory; blank it out.
        let mut ck = Checkpoint::load(&files.checkpoint).map_err(|e| e.to_string())?;
        ck.config.out = None;
        checkpoints.push(serde_json::to_vec(&ck).map_err(|e| e.to_string())?);
    }
    check(csvs[0] == csvs[1], "metric CSVs differ between identical runs")?;
    check(checkpoints[0] == checkpoints[1], "checkpoints differ between identical runs")?;

    // In-memory model vs. a save/load round trip.
    let train_set = neural_atoms::graph::load_dataset(&train_path).unwrap();
    let test_set = neural_atoms::graph::load_dataset(&test_path).unwrap();
    let cfg = TrainConfig { augment: Augment::VirtualNode, layers: 2, hidden: 16, epochs: 2, ..TrainConfig::default() };
    let out = fit(&cfg, &train_set, None).map_err(|e| e.to_string())?;
    let before = evaluate(&out.model, &test_set).map_err(|e| e.to_string())?;
    let path = dir.path().join("rt.json");
    Checkpoint::from_model(&out.model, 2, out.history).save(&path).map_err(|e| e.to_string())?;
    let model = Checkpoint::load(&path).and_then(|c| c.to_model()).map_err(|e| e.to_string())?;
    let after = evaluate(&model, &test_set).map_err(|e| e.to_string())?;
    check(before == after, format!("{before:?} != {after:?}"))?;
    Ok(format!("{} identical CSV bytes; reloaded metrics {after:?}", csvs[0].len()))
}

fn c10_mrr() -> Outcome {
    let m = mrr(&[1, 2, 4]).map_err(|e| e.to_string())?;
    check((m - 0.583_333_333_333_333).abs() < 1e-9, format!("mrr([1,2,4]) = {m}"))?;
    let one = mrr(&[1; 5]).map_err(|e| e.to_string())?;
    check(one == 1.0, format!("mrr(all 1) = {one}"))?;
    Ok(format!("{m:.5}, {one}"))
}

fn report(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = t.elapsed().as_secs_f64();
    match &result {
        Ok(detail) => println!("PASS {id:>2} {name} [{secs:.1}s]: {detail}"),
        Err(detail) => println!("FAIL {id:>2} {name} [{secs:.1}s]: {detail}"),
    }
    result.is_ok()
}

fn main() {
    let mut ok = true;
    ok &= report(1, "gradient fidelity", c1_gradient_fidelity);
    ok &= report(2, "allocation stochasticity", c2_allocation_stochasticity);
    ok &= report(3, "permutation equivariance", c3_permutation_equivariance);
    ok &= report(4, "single-hop long-range channel", c4_long_range_channel);
    ok &= report(5, "K schedule", c5_k_schedule);
    ok &= report(6, "Ewald self-consistency", c6_ewald_self_consistency);
    let t = Instant::now();
    let lri = catch_unwind(run_lri).unwrap_or_else(|_| Err("training panicked".into()));
    println!("     (synthetic-task training took {:.0}s in total)", t.elapsed().as_secs_f64());
    ok &= report(7, "synthetic long-range task", || c7_synthetic_task(&lri));
    ok &= report(8, "baseline ordering", || c8_baseline_ordering(&lri));
    ok &= report(9, "determinism and persistence", c9_determinism_and_persistence);
    ok &= report(10, "MRR", c10_mrr);
    if !ok {
        std::process::exit(1);
    }
}
