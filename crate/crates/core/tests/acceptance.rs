//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use robust_domains::domains::{empirical_loss_vector, MultiDomainDataset};
use robust_domains::evaluation::{duality_gap, penalized_objective, realized_regret, worst_case_metrics};
use robust_domains::experiments::{generate_dataset, resolve_with_data, GenerateConfig, ResolvedRun, RunConfig};
use robust_domains::models::{Example, LossOracle, MlpModel, SoftmaxModel};
use robust_domains::regularizers::{reg_gradient, reg_value, sinkhorn_solve, RegularizerKind, RegularizerSpec};
use robust_domains::schedules::{optimal_shrink_c, regret_bound, ScheduleMode};
use robust_domains::simplex::{project_to_simplex, SimplexDistribution};
use robust_domains::trainer::{best_response, train, TrainingTrace};

use common::{central_difference, grid_maximize, linf, relative_error};

type Outcome = Result<String, String>;

/// Name, check, and runtime budget in seconds.
type Criterion = (&'static str, fn() -> Outcome, Option<u64>);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values[values.len() / 2]
}

fn generate(noise: &[f64], center_scale: f64, seed: u64) -> MultiDomainDataset {
    let config = GenerateConfig {
        noise: noise.to_vec(),
        center_scale,
        seed,
        ..Default::default()
    };
    generate_dataset(&config).unwrap().0
}

fn run(config: &RunConfig, data: &MultiDomainDataset) -> (ResolvedRun, TrainingTrace) {
    let resolved = resolve_with_data(config, data.clone(), None).unwrap();
    let oracle = resolved.model.build().unwrap();
    let trace = train(&resolved.train_data, oracle.as_ref(), &resolved.trainer).unwrap();
    (resolved, trace)
}

fn projection() -> Outcome {
    let mut rng = common::rng(101);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let k = 2 + i % 5;
        let scale = [0.1, 1.0, 10.0][i % 3];
        let v: Vec<f64> = (0..k).map(|_| scale * common::normal(&mut rng)).collect();
        let p = project_to_simplex(&v).unwrap();
        worst = worst.max(linf(&p, &common::projection_by_support_enumeration(&v)));
    }
    check(worst <= 1e-6, format!("max L∞ error {worst:.2e} over 1000 vectors"))
}

fn model_gradient_error(model: &dyn LossOracle, rng: &mut rand_chacha::ChaCha8Rng, d: usize, c: usize) -> f64 {
    let features: Vec<Vec<f64>> = (0..6)
        .map(|_| (0..d).map(|_| 2.0 * common::normal(rng)).collect())
        .collect();
    let batch: Vec<Example<'_>> = features
        .iter()
        .enumerate()
        .map(|(i, x)| Example {
            features: x,
            label: i % c,
        })
        .collect();
    let values: Vec<f64> = (0..model.layout().total_len()).map(|_| common::normal(rng)).collect();
    let params = model.init_params(0).with_values(values.clone());
    let (_, grad) = model.loss_gradient(&params, &batch).unwrap();
    let mut worst = 0.0f64;
    for i in 0..values.len() {
        let numeric = central_difference(values[i], |x| {
            let mut moved = values.clone();
            moved[i] = x;
            model.mean_loss(&params.with_values(moved), &batch).unwrap()
        });
        worst = worst.max(relative_error(numeric, grad[i]));
    }
    worst
}

fn gradients() -> Outcome {
    let mut rng = common::rng(102);
    let (mut softmax, mut mlp, mut ot) = (0.0f64, 0.0f64, 0.0f64);
    for point in 0..20 {
        let (d, c) = (2 + point % 4, 2 + point % 3);
        softmax = softmax.max(model_gradient_error(&SoftmaxModel::new(d, c).unwrap(), &mut rng, d, c));
        let h = 1 + point % 5;
        mlp = mlp.max(model_gradient_error(&MlpModel::new(d, h, c).unwrap(), &mut rng, d, c));

        // The OT value is only defined on the simplex; compare along e_i - e_j.
        let k = 2 + point % 4;
        let p = common::interior_simplex(&mut rng, k, 0.02);
        let q = SimplexDistribution::new(common::interior_simplex(&mut rng, k, 0.02)).unwrap();
        let spec = RegularizerSpec::ot(1.0, q, Some(common::random_cost(&mut rng, k)), 10.0).unwrap();
        let grad = reg_gradient(&spec, &SimplexDistribution::new(p.clone()).unwrap()).unwrap();
        for i in 0..k {
            for j in (0..k).filter(|&j| j != i) {
                let numeric = central_difference(0.0, |s| {
                    let mut moved = p.clone();
                    moved[i] += s;
                    moved[j] -= s;
                    reg_value(&spec, &SimplexDistribution::new(moved).unwrap()).unwrap()
                });
                ot = ot.max(relative_error(numeric, grad[i] - grad[j]));
            }
        }
    }
    check(
        softmax <= 1e-5 && mlp <= 1e-5 && ot <= 1e-4,
        format!("softmax {softmax:.2e}, mlp {mlp:.2e}, ot {ot:.2e}"),
    )
}

fn sinkhorn() -> Outcome {
    let mut rng = common::rng(103);
    let (mut marginal, mut value) = (0.0f64, 0.0f64);
    for trial in 0..20 {
        let k = 2 + trial % 4;
        let p = common::random_simplex(&mut rng, k);
        let q = common::random_simplex(&mut rng, k);
        let cost = common::random_cost(&mut rng, k);
        let sol = sinkhorn_solve(&p, &q, &cost, 100.0).unwrap();
        let l1 = |sums: Vec<f64>, target: &[f64]| sums.iter().zip(target).map(|(a, b)| (a - b).abs()).sum::<f64>();
        marginal = marginal.max(l1(sol.row_sums(), &p)).max(l1(sol.col_sums(), &q));
        value = value.max((sol.entropic_value - common::transport_lp(&p, &q, &cost)).abs());
    }
    check(
        marginal <= 1e-9 && value <= 0.05,
        format!("marginal L1 {marginal:.2e}, |entropic - LP| {value:.2e}"),
    )
}

fn shrink_constant() -> Outcome {
    let (mu, lambda, horizon) = (100.0, 1.0, 1_000_000);
    let c = optimal_shrink_c(mu, lambda, horizon).unwrap();
    let bound = regret_bound(mu, lambda, horizon, c).unwrap();
    let baseline = regret_bound(mu, lambda, horizon, 0.0).unwrap();

    // Stationarity of λc + s ln(T/c + 1) + s gives λc² + λTc - sT = 0.
    let (t, s) = (horizon as f64, mu * mu / (2.0 * lambda));
    let root = (-lambda * t + (lambda * lambda * t * t + 4.0 * lambda * s * t).sqrt()) / (2.0 * lambda);
    let by_hand = |c: f64| lambda * c + s * (t / c + 1.0).ln() + s;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    let convex = (0..100).all(|i| {
        let x = 10f64.powf(-2.0 + 8.0 * i as f64 / 99.0);
        let h = 1e-3 * x;
        let f = |c: f64| regret_bound(mu, lambda, horizon, c).unwrap();
        f(x + h) - 2.0 * f(x) + f(x - h) >= 0.0
    });
    check(
        rel(c, root) <= 1e-6
            && rel(c, 4975.2449) <= 1e-6
            && rel(bound, by_hand(root)) <= 1e-6
            && rel(baseline, s * (t.ln() + 1.0)) <= 1e-6
            && rel(baseline, 74077.55) <= 1e-6
            && bound < baseline
            && convex,
        format!("c* = {c:.6}, f(c*) = {bound:.4}, baseline = {baseline:.4}, convex at 100 points: {convex}"),
    )
}

fn convex_rate() -> Outcome {
    let mut ratios = Vec::new();
    for seed in 0..5 {
        let data = generate(&[0.0, 1.0], 1.0, seed);
        let gap = |horizon: usize| {
            let config = RunConfig {
                horizon,
                batch: 20,
                seed,
                log_every: horizon,
                schedule: Some(ScheduleMode::Convex),
                ..Default::default()
            };
            let (resolved, trace) = run(&config, &data);
            let oracle = resolved.model.build().unwrap();
            let regularizer = &resolved.trainer.regularizer;
            duality_gap(
                &resolved.train_data,
                oracle.as_ref(),
                &trace.avg_params,
                &trace.avg_p,
                regularizer,
            )
            .unwrap()
            .gap
        };
        ratios.push(gap(100) / gap(10_000));
    }
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.1}")).collect();
    let m = median(ratios);
    check(
        m >= 3.0,
        format!("median gap(T=1e2)/gap(T=1e4) = {m:.2} (per seed {})", shown.join(", ")),
    )
}

fn robustness() -> Outcome {
    let (mut worse, mut wider) = (0, 0);
    let mut shown = Vec::new();
    for seed in 0..5 {
        let data = generate(&[0.0, 4.0, 8.0, 12.0], 3.0, seed);
        let metrics = |method: &str| {
            let config = RunConfig {
                method: method.parse().unwrap(),
                horizon: 10_000,
                seed,
                log_every: 10_000,
                ..Default::default()
            };
            let (resolved, trace) = run(&config, &data);
            let oracle = resolved.model.build().unwrap();
            let (worst, _) = worst_case_metrics(&resolved.train_data, oracle.as_ref(), &trace.last_params).unwrap();
            let losses = empirical_loss_vector(&resolved.train_data, oracle.as_ref(), &trace.last_params).unwrap();
            (worst, worst - losses.iter().copied().fold(f64::INFINITY, f64::min))
        };
        let (opt_worst, opt_gap) = metrics("mixture_opt");
        let (even_worst, even_gap) = metrics("mixture_even");
        worse += usize::from(opt_worst <= even_worst);
        wider += usize::from(opt_gap < even_gap);
        shown.push(format!("{opt_worst:.3}/{even_worst:.3}"));
    }
    check(
        worse >= 4 && wider >= 4,
        format!(
            "worst loss no higher on {worse}/5, gap smaller on {wider}/5 (opt/even worst: {})",
            shown.join(", ")
        ),
    )
}

fn pinning() -> Outcome {
    let data = generate(&[0.0, 4.0, 8.0, 12.0], 3.0, 7);
    let mut config = RunConfig {
        horizon: 10_000,
        regularizer: Some(RegularizerKind::L2),
        seed: 7,
        ..Default::default()
    };
    config.constants.lambda = 1e6;
    let (_, trace) = run(&config, &data);
    let q = 0.25;
    let drift = trace
        .steps
        .iter()
        .flat_map(|s| s.p.iter().map(|x| (x - q).abs()))
        .fold(0.0, f64::max);
    check(
        trace.steps.len() == 10_000 && drift <= 1e-3,
        format!("max ‖p_t - q‖∞ = {drift:.2e} over {} iterations", trace.steps.len()),
    )
}

fn regret_improvement() -> Outcome {
    // Domains share one distribution, so minibatch loss vectors are noise
    // around a common mean.
    let mut wins = 0;
    let mut shown = Vec::new();
    for seed in 0..5 {
        let data = generate(&[0.0, 0.0, 0.0], 3.0, seed);
        let regret = |mode: ScheduleMode| {
            let config = RunConfig {
                horizon: 10_000,
                batch: 30,
                seed,
                warmup: 20,
                regularizer: Some(RegularizerKind::L2),
                schedule: Some(mode),
                ..Default::default()
            };
            let (resolved, trace) = run(&config, &data);
            realized_regret(&trace.steps, &resolved.trainer.regularizer).unwrap()
        };
        let plain = regret(ScheduleMode::Regularized);
        let shrunk = regret(ScheduleMode::RegularizedShrunk);
        wins += usize::from(shrunk <= plain);
        shown.push(format!("{shrunk:.2e}/{plain:.2e}"));
    }
    check(
        wins >= 4,
        format!("shrunk no worse on {wins}/5 (shrunk/plain: {})", shown.join(", ")),
    )
}

fn l2_oracle() -> Outcome {
    let mut rng = common::rng(109);
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let k = 2 + trial % 3;
        let q = SimplexDistribution::new(common::random_simplex(&mut rng, k)).unwrap();
        let lambda = [0.2, 1.0, 5.0][trial % 3];
        let losses: Vec<f64> = (0..k).map(|_| 3.0 * common::normal(&mut rng).abs()).collect();
        let spec = RegularizerSpec::l2(lambda, q).unwrap();
        let closed = best_response(&losses, &spec).unwrap();
        let brute = grid_maximize(k, |p| {
            penalized_objective(&spec, &SimplexDistribution::new(p.to_vec()).unwrap(), &losses).unwrap()
        });
        worst = worst.max(linf(&closed, &brute));
    }
    check(
        worst <= 1e-3,
        format!("max L∞ distance to grid maximizer {worst:.2e} over 100 instances"),
    )
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_robust-domains"))
        .args(args)
        .env("ROBUST_DOMAINS_THREADS", "1")
        .output()
        .unwrap()
}

fn train_trace(manifest: &Path, out: &Path, extra: &[&str]) -> Vec<u8> {
    let mut args = vec!["train".to_string()];
    let base = [
        format!("manifest={}", manifest.display()),
        format!("out={}", out.display()),
    ];
    for set in base.iter().map(String::as_str).chain(extra.iter().copied()) {
        args.push("--set".into());
        args.push(set.into());
    }
    let output = cli(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    fs::read(out.join("trace.csv")).unwrap()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let output = cli(&[
        "generate",
        "--out",
        data.to_str().unwrap(),
        "--size",
        "100",
        "--seed",
        "3",
    ]);
    if !output.status.success() {
        return Err(String::from_utf8_lossy(&output.stderr).into_owned());
    }
    let manifest = data.join("manifest.txt");
    let runs: [&[&str]; 4] = [
        &["method=mixture_opt", "horizon=300"],
        &[
            "method=mixture_opt",
            "regularizer=kl",
            "horizon=300",
            "sampling=without_replacement",
        ],
        &["method=mixture_ot", "horizon=100"],
        &["method=oracle_p", "model=mlp:8", "regularizer=l2", "horizon=200"],
    ];
    let mut identical = 0;
    for (i, extra) in runs.iter().enumerate() {
        let a = train_trace(&manifest, &dir.path().join(format!("a{i}")), extra);
        let b = train_trace(&manifest, &dir.path().join(format!("b{i}")), extra);
        identical += usize::from(!a.is_empty() && a == b);
    }
    check(
        identical == runs.len(),
        format!("{identical}/{} configurations byte-identical", runs.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        (
            "simplex projection matches the enumeration oracle",
            projection,
            Some(10),
        ),
        ("analytic gradients match finite differences", gradients, Some(30)),
        ("sinkhorn marginals and value", sinkhorn, Some(10)),
        ("optimal shrink constant and bound", shrink_constant, Some(1)),
        ("convex duality gap shrinks with the horizon", convex_rate, Some(300)),
        ("adversarial weights lower the worst-case loss", robustness, Some(600)),
        ("large lambda pins the weights to the prior", pinning, Some(120)),
        ("shrunk step lowers realized regret", regret_improvement, Some(300)),
        ("l2 best response matches grid search", l2_oracle, Some(30)),
        ("training traces are deterministic", determinism, None),
    ];
    let mut failed = 0;
    for (i, (name, criterion, budget)) in criteria.iter().enumerate() {
        let clock = Instant::now();
        let outcome = criterion();
        let elapsed = clock.elapsed();
        let over = budget.is_some_and(|b| elapsed > Duration::from_secs(b));
        let (pass, detail) = match outcome {
            Ok(detail) if !over => (true, detail),
            Ok(detail) => (false, format!("{detail}; over the {}s budget", budget.unwrap())),
            Err(detail) => (false, detail),
        };
        failed += usize::from(!pass);
        println!(
            "criterion {}: {} {name}: {detail} [{:.1}s]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
