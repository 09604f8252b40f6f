//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use maskopt_cli::config::ExperimentConfig;
use maskopt_cli::{runner, summarize};
use maskopt_core::blackbox::{run_black_box, subset_count_loss, BlackBoxConfig};
use maskopt_core::net::{forward, he_init, loss_and_gradient};
use maskopt_core::trainer::{
    stochastic_probabilities, total_iterations, train_observed, LossTransform,
};
use maskopt_core::{
    compute_utilities, deterministic_mask, normalize_epsilon, sample_masks, synthetic_subset_task,
    unit_selection_coeffs, update_theta, weight_usage_rate, Batch, BernoulliTheta,
    ComplexityCoefficients, Dataset, MaskedTopology, PenaltyPath, Seeds, SgdConfig, StructureMask,
    TrainConfig, WeightStore,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Pinned tolerances.
const GRADIENT_REL_TOL: f64 = 1e-4;
const PRUNE_ABS_TOL: f64 = 1e-12;
const SPEARMAN_MAX: f64 = -0.9;
const ERROR_GAP_MAX: f64 = 0.02;
const ITERATION_REL_TOL: f64 = 0.02;
const TV_MAX: f64 = 0.01;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn criterion_1() -> Outcome {
    let theta = BernoulliTheta::uniform(4, 0.5).map_err(err)?;
    let masks = vec![
        StructureMask::from_bits(&[1, 1, 0, 0]).map_err(err)?,
        StructureMask::from_bits(&[0, 0, 1, 1]).map_err(err)?,
    ];
    let u = compute_utilities(&[0.1, 0.9]).map_err(err)?;
    let c = ComplexityCoefficients::new(vec![1.0; 4]).map_err(err)?;
    let plain = update_theta(&theta, &masks, &u, &c, 0.0, 0.25).map_err(err)?;
    check(
        plain.probs() == [0.625, 0.625, 0.375, 0.375],
        format!("eps=0 gave {:?}", plain.probs()),
    )?;
    let penalized = update_theta(&theta, &masks, &u, &c, 1.0, 0.25).map_err(err)?;
    check(
        penalized.probs() == [0.5625, 0.5625, 0.3125, 0.3125],
        format!("eps=1 gave {:?}", penalized.probs()),
    )?;
    let zero = compute_utilities(&[0.5, 0.5]).map_err(err)?;
    let still = update_theta(&theta, &masks, &zero, &c, 0.0, 0.25).map_err(err)?;
    check(still == theta, "null utilities moved theta")?;
    Ok("exact match for eps=0, eps=1 and null utilities".into())
}

fn criterion_2() -> Outcome {
    let d = 20;
    let (lo, hi) = (1.0 / d as f64, 1.0 - 1.0 / d as f64);
    let c = ComplexityCoefficients::new((1..=d).map(|i| i as f64).collect()).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut updates = 0;
    for eps_prime in [0.0, 0.125, -0.125, 1.0] {
        let eps = normalize_epsilon(eps_prime, &c).map_err(err)?;
        let mut theta = BernoulliTheta::uniform(d, 0.5).map_err(err)?;
        for it in 0..10_000 {
            let masks = sample_masks(&theta, 2, &mut rng).map_err(err)?;
            let losses: Vec<f64> = masks.iter().map(|_| rng.random::<f64>()).collect();
            let u = compute_utilities(&losses).map_err(err)?;
            theta = update_theta(&theta, &masks, &u, &c, eps, 0.5).map_err(err)?;
            updates += 1;
            if let Some(p) = theta.probs().iter().find(|&&p| p < lo || p > hi) {
                return Err(format!(
                    "eps'={eps_prime} iteration {it}: theta {p} outside [{lo}, {hi}]"
                ));
            }
        }
    }
    Ok(format!(
        "{updates} updates, all coordinates within [1/d, 1-1/d]"
    ))
}

fn synthetic(seed: u64, n: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    synthetic_subset_task(4, 4, n, &mut rng).expect("synthetic task")
}

fn small_config(eps_prime: f64) -> TrainConfig {
    TrainConfig {
        eps_prime,
        epochs: 3,
        batch_size: 16,
        sgd: SgdConfig {
            lr0: 0.05,
            ..Default::default()
        },
        seeds: Seeds::from_run_seed(3),
        ..Default::default()
    }
}

type Trajectory = (Vec<BernoulliTheta>, Vec<WeightStore<f64>>);

fn trajectory(
    cfg: &TrainConfig,
    topo: &MaskedTopology,
    data: &Dataset,
) -> Result<Trajectory, String> {
    let mut thetas = Vec::new();
    let mut weights = Vec::new();
    train_observed::<f64>(cfg, data, None, topo, |s| {
        thetas.push(s.theta.clone());
        weights.push(s.weights.clone());
    })
    .map_err(err)?;
    Ok((thetas, weights))
}

fn criterion_3() -> Outcome {
    let data = synthetic(30, 256);
    let mut steps = 0;
    for topo in [
        MaskedTopology::unit(8, &[10, 10], 2).map_err(err)?,
        MaskedTopology::dense_block(8, 6, 3, 2).map_err(err)?,
    ] {
        let enabled = small_config(0.0);
        let disabled = TrainConfig {
            penalty: PenaltyPath::Disabled,
            ..enabled.clone()
        };
        let a = trajectory(&enabled, &topo, &data)?;
        let b = trajectory(&disabled, &topo, &data)?;
        check(
            a.0 == b.0,
            format!("{}: theta trajectories differ", topo.describe()),
        )?;
        check(
            a.1 == b.1,
            format!("{}: weight trajectories differ", topo.describe()),
        )?;
        steps += a.0.len();
    }
    Ok(format!(
        "bit-identical theta and W over {steps} steps (unit and connection modes)"
    ))
}

fn criterion_4() -> Outcome {
    let data = synthetic(40, 256);
    let topo = MaskedTopology::unit(8, &[10, 10], 2).map_err(err)?;
    let base = small_config(0.01);
    let affine = TrainConfig {
        loss_transform: LossTransform::Affine {
            scale: 10.0,
            shift: 3.0,
        },
        ..base.clone()
    };
    let a = trajectory(&base, &topo, &data)?;
    let b = trajectory(&affine, &topo, &data)?;
    check(a.0 == b.0, "theta trajectories differ under 10L+3")?;
    Ok(format!("bit-identical theta over {} steps", a.0.len()))
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, features: usize, classes: usize) -> Batch<f64> {
    let inputs = Array2::from_shape_fn((n, features), |_| rng.random_range(-1.0..1.0));
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    Batch::new(inputs, labels).expect("batch")
}

fn criterion_5() -> Outcome {
    let topo = MaskedTopology::unit(4, &[6], 3).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for code in [0b111111u64, 0b101101, 0b010011, 0b000001] {
        let mask = StructureMask::from_code(code, topo.mask_dim());
        let weights: WeightStore<f64> = he_init(&topo, &mut rng);
        let batch = random_batch(&mut rng, 5, 4, 3);
        let (_, analytic) = loss_and_gradient(&weights, &topo, &mask, &batch).map_err(err)?;
        let numeric = common::finite_difference_gradient(&topo, &weights, &mask, &batch, 1e-6);
        for (n, a) in numeric.iter().zip(analytic.iter()) {
            worst = worst.max(common::relative_error(*n, *a));
        }
    }
    check(
        worst < GRADIENT_REL_TOL,
        format!("max relative error {worst:.3e}"),
    )?;
    Ok(format!(
        "4-6-3, 4 masks: max relative error {worst:.2e} < {GRADIENT_REL_TOL:e}"
    ))
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    let mut masks_checked = 0;
    for topo in [
        MaskedTopology::unit(5, &[4, 4], 3).map_err(err)?,
        MaskedTopology::dense_block(4, 3, 3, 2).map_err(err)?,
    ] {
        let d = topo.mask_dim();
        let weights: WeightStore<f64> = he_init(&topo, &mut rng);
        let batch = random_batch(&mut rng, 6, topo.input_dim(), topo.output_dim());
        let rows = common::rows_of(&batch);
        let total = common::prune(&topo, &weights, &StructureMask::ones(d)).weight_count() as f64;
        for code in 0..(1u64 << d) {
            let mask = StructureMask::from_code(code, d);
            let pruned = common::prune(&topo, &weights, &mask);
            let expected = pruned.forward(&rows);
            let got = forward(&weights, &topo, &mask, batch.inputs.view()).map_err(err)?;
            for (r, row) in expected.iter().enumerate() {
                for (k, v) in row.iter().enumerate() {
                    worst = worst.max((v - got[[r, k]]).abs());
                }
            }
            let usage = weight_usage_rate(&topo, &mask).map_err(err)?;
            let brute = pruned.weight_count() as f64 / total;
            check(
                usage == brute,
                format!(
                    "{} mask {code:b}: usage {usage} vs {brute}",
                    topo.describe()
                ),
            )?;
            masks_checked += 1;
        }
    }
    check(worst < PRUNE_ABS_TOL, format!("max abs diff {worst:.3e}"))?;
    Ok(format!(
        "{masks_checked} masks: max abs diff {worst:.1e}, usage exact"
    ))
}

fn black_box_hits(relevant: &[usize], eps_prime: f64) -> Result<usize, String> {
    let d = 20;
    let c = unit_selection_coeffs(d).map_err(err)?;
    let mut hits = 0;
    for seed in 0..10 {
        let run = run_black_box(
            &BlackBoxConfig::new(d, 20_000, seed),
            |m| subset_count_loss(m, relevant),
            &c,
            eps_prime,
        )
        .map_err(err)?;
        let mask = deterministic_mask(&run.theta);
        if (0..d).all(|i| mask.get(i) == relevant.contains(&i)) {
            hits += 1;
        }
    }
    Ok(hits)
}

fn criterion_7() -> Outcome {
    let all: Vec<usize> = (0..20).collect();
    let half: Vec<usize> = (0..10).collect();
    let optimum = black_box_hits(&all, 0.0)?;
    let selective = black_box_hits(&half, 0.125)?;
    check(
        optimum >= 9 && selective >= 8,
        format!("optimum {optimum}/10 (need 9), selective {selective}/10 (need 8)"),
    )?;
    Ok(format!(
        "all-relevant optimum {optimum}/10, relevant-only {selective}/10"
    ))
}

fn criterion_8() -> Outcome {
    let d = 20;
    let c = unit_selection_coeffs(d).map_err(err)?;
    for (eps_prime, bound) in [(0.125, 1.0 / d as f64), (-0.125, 1.0 - 1.0 / d as f64)] {
        let run = run_black_box(&BlackBoxConfig::new(d, 5_000, 8), |_| 1.0, &c, eps_prime)
            .map_err(err)?;
        for w in run.trajectory.windows(2) {
            let moved_wrong = w[0]
                .1
                .probs()
                .iter()
                .zip(w[1].1.probs())
                .any(|(a, b)| (b - a) * eps_prime > 0.0);
            check(
                !moved_wrong,
                format!("eps'={eps_prime}: theta moved against the penalty"),
            )?;
        }
        check(
            run.theta.probs().iter().all(|&p| p == bound),
            format!(
                "eps'={eps_prime}: final theta {:?} not at {bound}",
                run.theta.probs()
            ),
        )?;
    }
    Ok("eps'>0 reaches 1/d, eps'<0 reaches 1-1/d, monotonically".into())
}

/// Ranks with ties averaged, 1-based.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn data_root() -> PathBuf {
    std::env::var_os(maskopt_cli::config::DATA_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn criterion_9() -> Outcome {
    let root = data_root();
    let text = "task = mnist\nwidths = 784,64,64,10\nepochs = 30\nbatch = 32\n\
                eps_prime_list = 2^-4, 2^-6, 2^-8, 0\nseeds = 0..5\n";
    let cfg = ExperimentConfig::parse(text, Path::new("."), Some(&root)).map_err(err)?;
    let out = tempfile::tempdir().map_err(err)?;
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let rows = runner::run_sweep(&cfg, out.path(), jobs).map_err(|e| format!("{e:#}"))?;
    check(
        rows.len() == 20,
        format!("expected 20 runs, got {}", rows.len()),
    )?;
    let table = summarize::summarize(out.path()).map_err(err)?;
    let eps: Vec<f64> = table.iter().map(|t| t.eps_prime).collect();
    let usage: Vec<f64> = table.iter().map(|t| t.usage.median).collect();
    let rho = spearman(&eps, &usage);
    let error_of = |e: f64| {
        table
            .iter()
            .find(|t| t.eps_prime == e)
            .map(|t| t.test_error.median)
    };
    let (e8, e0) = match (error_of(2f64.powi(-8)), error_of(0.0)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err("sweep is missing eps'=2^-8 or eps'=0".into()),
    };
    let detail =
        format!(
        "median usage {:?} over eps' {:?}, rho={rho:.3}; test error {e8:.3} (2^-8) vs {e0:.3} (0)",
        usage.iter().map(|u| (u * 1e3).round() / 1e3).collect::<Vec<_>>(),
        eps
    );
    check(
        rho <= SPEARMAN_MAX && (e8 - e0).abs() <= ERROR_GAP_MAX,
        detail.clone(),
    )?;
    Ok(detail)
}

fn criterion_10() -> Outcome {
    let iterations = total_iterations(60_000, 32, 500);
    let by_hand = 500 * 60_000usize.div_ceil(32);
    let rel = (iterations as f64 - 9.5e5).abs() / 9.5e5;
    check(iterations == by_hand, format!("{iterations} != {by_hand}"))?;
    check(
        rel <= ITERATION_REL_TOL,
        format!("{iterations} is {:.2}% from 9.5e5", rel * 100.0),
    )?;
    Ok(format!(
        "{iterations} iterations, {:.2}% from 9.5e5",
        rel * 100.0
    ))
}

fn criterion_11() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for topo in [
        MaskedTopology::unit(5, &[4, 4], 3).map_err(err)?,
        MaskedTopology::dense_block(4, 3, 3, 3).map_err(err)?,
    ] {
        let d = topo.mask_dim();
        let weights: WeightStore<f64> = he_init(&topo, &mut rng);
        let theta =
            BernoulliTheta::from_probs((0..d).map(|_| rng.random_range(0.1..0.9)).collect())
                .map_err(err)?;
        let batch = random_batch(&mut rng, 4, topo.input_dim(), topo.output_dim());
        let exact = common::exact_mixture(&topo, &weights, &theta, &common::rows_of(&batch));
        let sampled = stochastic_probabilities(
            &weights,
            &topo,
            &theta,
            batch.inputs.view(),
            10_000,
            &mut rng,
        )
        .map_err(err)?;
        for (r, row) in exact.iter().enumerate() {
            let tv: f64 = row
                .iter()
                .enumerate()
                .map(|(k, p)| (p - sampled[[r, k]]).abs())
                .sum::<f64>()
                / 2.0;
            worst = worst.max(tv);
        }
    }
    check(worst < TV_MAX, format!("max total variation {worst:.4}"))?;
    Ok(format!(
        "d=8 and d=10: max total variation {worst:.4} < {TV_MAX}"
    ))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("update rule worked examples", criterion_1),
        ("clamp invariant", criterion_2),
        ("zero-penalty equivalence", criterion_3),
        ("monotone loss invariance", criterion_4),
        ("gradient fidelity", criterion_5),
        ("mask/prune equivalence", criterion_6),
        ("black-box convergence", criterion_7),
        ("penalty drift direction", criterion_8),
        ("MNIST trade-off sweep", criterion_9),
        ("iteration accounting", criterion_10),
        ("stochastic prediction", criterion_11),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail} ({secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {detail} ({secs:.1}s)", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
