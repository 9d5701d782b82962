//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use deeptherm::analysis::{add_noise, input_snr, mann_whitney_u, noise_field, roc_auc, roc_curve, snr, snr_db, trapezoid_area, DEFAULT_LEVELS};
use deeptherm::embedding::sparsity;
use deeptherm::factorization::{deep_finetune, nmf, semi_nmf, semi_nmf_from_init, semi_nmf_init, sparse_nmf, IterOptions, Method, NmfSolver};
use deeptherm::hsic::{block_hsic, block_hsic_lasso, build_problem, center_normalize, gram, hsic_v, read_selection_csv, BlockParams, Kernel};
use deeptherm::phantom::{make_cohort, run_fields, snr_regions, step, PhantomParams};
use deeptherm::rng::rng_from_seed;
use deeptherm::thermomics::FeatureMatrix;
use deeptherm::{Mask, Matrix};
use deeptherm_cli::stages::{cmd_pipeline, feature_path, selection_path};
use deeptherm_cli::{Context, PipelineConfig};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_matrix(rows: usize, cols: usize, seed: u64, offset: f64) -> Matrix {
    let mut rng = rng_from_seed(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.random::<f64>() + offset)
}

/// Largest relative increase between consecutive trace entries.
fn worst_increase(trace: &[f64]) -> f64 {
    trace.windows(2).map(|w| (w[1] - w[0]) / w[0].abs().max(f64::MIN_POSITIVE)).fold(f64::NEG_INFINITY, f64::max)
}

fn pipeline_config(seed: u64, out: &Path) -> PipelineConfig {
    PipelineConfig { seed, output_dir: out.to_path_buf(), ..PipelineConfig::default() }
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut config = pipeline_config(42, dir.path());
    config.factorization.methods = vec![Method::DeepSemiNmf];
    config.factorization.layer_sizes = vec![12, 8];
    config.selection.top_k = 3;
    let p = &config.input.phantom;
    let shape_ok = p.n_cases == 60 && p.lesion_fraction == 0.5 && p.params.rows == 64 && p.params.cols == 64 && p.params.frames == 23;
    let ctx = Context::new(config).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let reports = cmd_pipeline(&ctx).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let report = &reports[0].1;
    let (fm, _) = FeatureMatrix::read_csv(&feature_path(&ctx, Method::DeepSemiNmf)).map_err(|e| e.to_string())?;
    let ranked = read_selection_csv(&selection_path(&ctx, Method::DeepSemiNmf)).map_err(|e| e.to_string())?;
    let top = &ranked.first().ok_or("empty selection")?.0;
    let col = fm.column(fm.index_of(top).ok_or("top feature missing")?);
    let (pos, neg): (Vec<_>, Vec<_>) = col.iter().copied().zip(fm.labels.iter().copied()).partition(|(_, l)| *l);
    let p_value = mann_whitney_u(&pos.iter().map(|v| v.0).collect::<Vec<_>>(), &neg.iter().map(|v| v.0).collect::<Vec<_>>())
        .map_err(|e| e.to_string())?
        .p_two_sided;
    let positives = fm.labels.iter().filter(|&&l| l).count();
    check(
        shape_ok && positives == 30 && fm.n_features() == 300 && report.accuracy >= 0.85 && p_value < 0.005 && secs < 600.0,
        format!("accuracy {:.3} (need >= 0.85), top feature {top:?} MWU p {p_value:.2e} (need < 0.005), {secs:.1}s (need < 600s)", report.accuracy),
    )
}

fn monotone_objectives() -> Outcome {
    let mut worst: f64 = f64::NEG_INFINITY;
    for seed in 0..50 {
        let x = random_matrix(100, 23, seed, 0.0);
        let opts = IterOptions { seed, ..IterOptions::default() };
        worst = worst.max(worst_increase(&nmf(&x, 8, NmfSolver::Multiplicative, &opts).map_err(|e| e.to_string())?.objective_trace));
        for lambda in [0.0, 0.1, 1.0] {
            let f = sparse_nmf(&x, 8, lambda, NmfSolver::Multiplicative, &opts).map_err(|e| e.to_string())?;
            worst = worst.max(worst_increase(&f.objective_trace));
        }
        let mixed = random_matrix(100, 23, 1000 + seed, -0.5);
        worst = worst.max(worst_increase(&semi_nmf(&mixed, 8, &opts).map_err(|e| e.to_string())?.objective_trace));
    }
    check(worst <= 1e-9, format!("250 traces, largest relative step {worst:.2e} (negative means every sweep decreased; limit +1e-9)"))
}

fn deep_shallow() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let x = random_matrix(100, 23, 200 + seed, -0.3);
        let (b0, a0) = semi_nmf_init(&x, 8, seed).map_err(|e| e.to_string())?;
        let shallow = semi_nmf_from_init(&x, b0.clone(), a0.clone(), 100, 0.0);
        let deep = deep_finetune(&x, vec![b0], a0, 100, 0.0).map_err(|e| e.to_string())?;
        if shallow.objective_trace.len() != deep.objective_trace.len() {
            return Err(format!("seed {seed}: {} vs {} sweeps", shallow.objective_trace.len(), deep.objective_trace.len()));
        }
        for (s, d) in shallow.objective_trace.iter().zip(&deep.objective_trace) {
            worst = worst.max((s - d).abs() / s.abs().max(f64::MIN_POSITIVE));
        }
    }
    check(worst <= 1e-6, format!("10 instances, largest per-sweep relative cost gap {worst:.2e} (limit 1e-6)"))
}

fn sparsity_identity() -> Outcome {
    let mut rng = rng_from_seed(5);
    for i in 0..1000 {
        let (m, n) = (rng.random_range(1..12), rng.random_range(1..12));
        let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| if rng.random::<f64>() < 0.4 { 0.0 } else { rng.random_range(0.1..1.0) }).collect() };
        let alpha = Matrix::from_vec(m, 1, draw(m));
        let beta = Matrix::from_vec(1, n, draw(n));
        let s = |q: &Matrix| sparsity(q).unwrap();
        let nnz = |q: &Matrix| ((1.0 - s(q)) * q.len() as f64).round() as usize;
        let x = &alpha * &beta;
        let lhs = 1.0 - s(&x);
        let rhs = (1.0 - s(&alpha)) * (1.0 - s(&beta));
        if nnz(&x) != nnz(&alpha) * nnz(&beta) || (lhs - rhs).abs() > 1e-15 {
            return Err(format!("pair {i}: 1 - xi(ab) = {lhs}, product = {rhs}"));
        }
    }
    Ok("1000 pairs, nonzero counts equal and values within 1e-15".into())
}

fn block_degeneration() -> Outcome {
    let mut worst_gap: f64 = 0.0;
    let mut worst_self: f64 = 0.0;
    let mut rng = rng_from_seed(6);
    for i in 0..100 {
        let n = rng.random_range(8..60);
        let x: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let mut y: Vec<f64> = (0..n).map(|j| (j % 2) as f64).collect();
        y.swap(0, rng.random_range(0..n));
        let params = BlockParams { delta: n, seed: i, ..BlockParams::default() };
        let block = block_hsic(&x, &y, &params).map_err(|e| e.to_string())?;
        let kx = center_normalize(&gram(&x, Kernel::Rbf).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let ky = center_normalize(&gram(&y, Kernel::Delta).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        worst_gap = worst_gap.max((block - hsic_v(&kx, &ky).map_err(|e| e.to_string())?).abs());
        worst_self = worst_self.max((hsic_v(&kx, &kx).map_err(|e| e.to_string())? - 1.0).abs());
    }
    check(
        worst_gap <= 4.0 * f64::EPSILON && worst_self <= 1e-9,
        format!("100 instances, |block - full| max {worst_gap:.1e}, |HSIC(K,K) - 1| max {worst_self:.1e}"),
    )
}

fn lasso_behavior() -> Outcome {
    let mut rng = rng_from_seed(7);
    let n = 60;
    let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    let rows: Vec<Vec<f64>> = labels
        .iter()
        .map(|&l| {
            let s = l as u8 as f64 + 0.3 * rng.random::<f64>();
            vec![s, s, rng.random(), rng.random()]
        })
        .collect();
    let names = ["signal", "signal-copy", "noise-a", "noise-b"].map(String::from).to_vec();
    let fm = FeatureMatrix::new(names, rows, labels, (0..n).map(|i| format!("c{i}")).collect()).map_err(|e| e.to_string())?;
    let params = BlockParams::default();
    let mut both = 0;
    let mut top_ok = true;
    for lambda in [0.0, 0.01, 0.05, 0.1, 0.2] {
        let r = block_hsic_lasso(&fm, lambda, &params).map_err(|e| e.to_string())?;
        if r.weights[0] > 1e-6 && r.weights[1] > 1e-6 {
            both += 1;
        }
        if r.nonzero() > 0 {
            top_ok &= r.ranked[0].1 == 1.0 && format!("{:.2}", r.ranked[0].1) == "1.00";
        }
    }
    let h_max = build_problem(&fm, &params).map_err(|e| e.to_string())?.h.iter().copied().fold(0.0, f64::max);
    let above = block_hsic_lasso(&fm, h_max * 1.0001, &params).map_err(|e| e.to_string())?;
    let zero = above.weights.iter().all(|&w| w == 0.0);
    check(both == 0 && zero && top_ok, format!("duplicate pair both selected in {both}/5 runs, zero vector above KKT bound: {zero}, top score 1.00: {top_ok}"))
}

/// Distribution of the pair-count U over every split of `0..n` into `na` and `n - na`.
fn brute_u_counts(na: usize, n: usize) -> BTreeMap<usize, u64> {
    let mut counts = BTreeMap::new();
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != na {
            continue;
        }
        *counts.entry(pair_count(mask, n)).or_insert(0) += 1;
    }
    counts
}

fn pair_count(mask: u32, n: usize) -> usize {
    let a: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
    let b: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 0).collect();
    a.iter().map(|x| b.iter().filter(|y| x > y).count()).sum()
}

fn exact_statistics() -> Outcome {
    let mut cases = 0;
    for n in 2..=10usize {
        for na in 1..n {
            let dist = brute_u_counts(na, n);
            let total: u64 = dist.values().sum();
            for mask in 0u32..(1 << n) {
                if mask.count_ones() as usize != na {
                    continue;
                }
                let u = pair_count(mask, n);
                let lower: u64 = dist.range(..=u).map(|(_, c)| c).sum();
                let upper: u64 = dist.range(u..).map(|(_, c)| c).sum();
                let expected = (2.0 * lower.min(upper) as f64 / total as f64).min(1.0);
                let a: Vec<f64> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| i as f64).collect();
                let b: Vec<f64> = (0..n).filter(|i| mask >> i & 1 == 0).map(|i| i as f64).collect();
                let r = mann_whitney_u(&a, &b).map_err(|e| e.to_string())?;
                if !r.exact || r.u != u as f64 || (r.p_two_sided - expected).abs() > 1e-12 {
                    return Err(format!("a = {a:?}, b = {b:?}: U {} p {} vs U {u} p {expected}", r.u, r.p_two_sided));
                }
                cases += 1;
            }
        }
    }
    let mut rng = rng_from_seed(8);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(4..80);
        let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        labels[0] = true;
        labels[1] = false;
        let auc = roc_auc(&scores, &labels).map_err(|e| e.to_string())?;
        let area = trapezoid_area(&roc_curve(&scores, &labels).map_err(|e| e.to_string())?);
        worst = worst.max((auc - area).abs());
    }
    check(worst <= 1e-12, format!("{cases} exhaustive MWU inputs match; AUC vs trapezoid max gap {worst:.1e} over 200 sets"))
}

fn snr_checks() -> Outcome {
    let worked = [snr_db(3.0, 1.0, 2.0), snr_db(21.0, 1.0, 2.0), snr_db(5.0, 1.0, 2.0)];
    let worked: Vec<f64> = worked.into_iter().collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let image = Matrix::from_fn(4, 4, |i, j| if i < 2 { 5.0 } else if (i + j) % 2 == 0 { 3.0 } else { -1.0 });
    let from_image = snr(&image, &Mask::from_fn(4, 4, |i, _| i < 2), &Mask::from_fn(4, 4, |i, _| i >= 2)).map_err(|e| e.to_string())?;
    let worked_ok = worked[0] == 0.0 && worked[1] == 20.0 && worked[2] == 10.0 * 4f64.log10() && (worked[2] - 6.0206).abs() < 1e-4 && from_image == worked[2];

    let cohort = make_cohort(4, 1.0, &PhantomParams::default(), 9).map_err(|e| e.to_string())?;
    let case = &cohort.cases[0];
    let (signal, noise) = snr_regions(&cohort.roi, &case.lesions, 2.0);
    let field = noise_field(&case.sequence, 9);
    let values: Vec<f64> = DEFAULT_LEVELS
        .iter()
        .map(|&l| input_snr(&add_noise(&case.sequence, l, &field)?, &signal, &noise))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let decreasing = values.windows(2).all(|w| w[1] < w[0]);
    check(
        worked_ok && decreasing,
        format!("worked values {:?} dB; input SNR over 3%..20%: {}", worked, values.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(" > ")),
    )
}

fn phantom_physics() -> Outcome {
    let mut p = PhantomParams { rows: 24, cols: 24, omega_b_cb: 0.0, q_m: 0.0, noise_std: 0.0, decimals: None, ..PhantomParams::default() };
    p.dt = p.stability_limit();
    let mut t = Matrix::from_fn(24, 24, |i, j| 30.0 + ((i * 31 + j * 17) % 11) as f64);
    let mut next = t.clone();
    let source = Matrix::zeros(24, 24);
    let before = t.sum();
    for _ in 0..1000 {
        step(&t, &mut next, &source, &p);
        std::mem::swap(&mut t, &mut next);
    }
    let drift = ((t.sum() - before) / before).abs();

    let q = PhantomParams { rows: 8, cols: 8, k_t: 0.0, q_m: 0.0, t_init: 33.0, dt: 0.05, steps: 1200, frames: 4, noise_std: 0.0, decimals: None, ..PhantomParams::default() };
    let fields = run_fields(&q, &q.frame_steps()).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (f, s) in fields.iter().zip(q.frame_steps()) {
        let exact = q.t_a + (q.t_init - q.t_a) * (-q.omega_b_cb * s as f64 * q.dt / q.rho_c).exp();
        worst = f.iter().fold(worst, |acc, &v| acc.max(((v - exact) / exact).abs()));
    }
    check(drift <= 1e-9 && worst <= 1e-6, format!("heat drift {drift:.1e} per 1000 steps (limit 1e-9), relaxation error {worst:.1e} (limit 1e-6)"))
}

fn collect_tree(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_tree(root, &path, out)?;
        } else {
            out.insert(path.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&path)?);
        }
    }
    Ok(())
}

fn determinism() -> Outcome {
    let mut trees = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut config = pipeline_config(11, dir.path());
        config.input.phantom.n_cases = 24;
        config.input.phantom.params.rows = 32;
        config.input.phantom.params.cols = 32;
        cmd_pipeline(&Context::new(config).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let mut files = BTreeMap::new();
        collect_tree(dir.path(), dir.path(), &mut files).map_err(|e| e.to_string())?;
        trees.push(files);
    }
    let differing: Vec<&String> = trees[0].iter().filter(|(k, v)| trees[1].get(*k) != Some(v)).map(|(k, _)| k).collect();
    let same_names = trees[0].keys().eq(trees[1].keys());
    check(
        same_names && differing.is_empty() && !trees[0].is_empty(),
        format!("{} files across all five methods, {} differ", trees[0].len(), differing.len()),
    )
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        (2, "end-to-end synthetic benchmark", end_to_end),
        (3, "objective monotonicity", monotone_objectives),
        (4, "deep/shallow consistency", deep_shallow),
        (5, "sparsity identity", sparsity_identity),
        (6, "block HSIC degeneration", block_degeneration),
        (7, "lasso behavior", lasso_behavior),
        (8, "exact small statistics", exact_statistics),
        (9, "SNR formula and input sweep", snr_checks),
        (10, "phantom physics", phantom_physics),
        (11, "pipeline determinism", determinism),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
