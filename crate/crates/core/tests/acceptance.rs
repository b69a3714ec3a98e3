//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use synsel::controller::{sample_actions, Controller, ControllerConfig, SampleMode, Variant};
use synsel::harness::{compare_methods, ExperimentConfig, ExperimentReport};
use synsel::numkit::{Matrix, Parameterized, RngStream, StreamId};
use synsel::policy::{
    accumulate_loss_gradient, advantage, ema_update, ppo_surrogate, Algorithm, PolicyTerm, RewardTracker, Trajectory,
    TrajectoryStep,
};
use synsel::verify::grad_check_suite;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_2() -> Verdict {
    let start = Instant::now();
    let outcomes = match grad_check_suite() {
        Ok(o) => o,
        Err(e) => return verdict(false, format!("suite error: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let worst = outcomes.iter().map(|o| o.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed()).map(|o| o.name).collect();
    verdict(
        failed.is_empty() && outcomes.len() == 7 && secs < 30.0,
        format!("{} checks, worst rel err {worst:.2e}, {secs:.2}s, failed {failed:?}", outcomes.len()),
    )
}

fn small_controller(variant: Variant, use_positions: bool) -> Controller {
    let cfg = ControllerConfig {
        variant,
        input_dim: 8,
        class_count: 3,
        model_dim: 8,
        heads: 2,
        key_dim: 4,
        value_dim: 4,
        layers: 2,
        ffn_hidden: 16,
        use_positions,
        zero_policy_head: false,
        ..ControllerConfig::default()
    };
    Controller::new(cfg, &mut RngStream::new(8, StreamId::ControllerInit)).unwrap()
}

fn random_sequence(rng: &mut RngStream, n: usize) -> (Matrix, Vec<usize>) {
    (Matrix::from_fn(n, 8, |_, _| 2.0 * rng.uniform() - 1.0), (0..n).map(|i| (i * 5 + 2) % 3).collect())
}

fn trajectory(c: &Controller) -> Trajectory {
    let mut rng = RngStream::new(4, StreamId::ActionSample);
    let mut tracker = RewardTracker::new(0.8).unwrap();
    let mut steps = Vec::new();
    for (t, n) in [6usize, 5, 7].into_iter().enumerate() {
        let (seq, classes) = random_sequence(&mut rng, n);
        let out = c.forward(&seq, &classes).unwrap();
        let s = sample_actions(&out.logits, &mut rng, SampleMode::Stochastic);
        let reward = 0.55 + 0.1 * rng.uniform();
        let smoothed = ema_update(&mut tracker, reward).unwrap();
        steps.push(TrajectoryStep {
            batch: t,
            candidates: (0..n).map(|i| (classes[i], i)).collect(),
            sequence: seq,
            classes,
            actions: s.actions,
            old_log_probs: s.log_probs,
            value: out.value,
            reward,
            smoothed,
            advantage: advantage(smoothed, out.value),
        });
    }
    Trajectory { steps }
}

fn gradients(c: &Controller) -> Vec<f64> {
    c.params().iter().flat_map(|p| p.grad.data().to_vec()).collect()
}

fn criterion_3() -> Verdict {
    let mut c = small_controller(Variant::Transformer, true);
    let traj = trajectory(&c);
    let clipped = PolicyTerm::Clipped { epsilon: 0.2 };
    let sync = accumulate_loss_gradient(&mut c, &traj, clipped, 0.5, 0.01).unwrap();
    let sync_ok = sync.mean_ratio == 1.0 && sync.clip_fraction == 0.0;

    accumulate_loss_gradient(&mut c, &traj, PolicyTerm::Clipped { epsilon: 1e300 }, 0.5, 0.0).unwrap();
    let ppo = gradients(&c);
    accumulate_loss_gradient(&mut c, &traj, PolicyTerm::Reinforce, 0.5, 0.0).unwrap();
    let reinforce = gradients(&c);
    let scale = reinforce.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let diff = ppo.iter().zip(&reinforce).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let rel = diff / scale;

    let mut rng = RngStream::new(6, StreamId::Update);
    let mut violations = 0;
    for _ in 0..10_000 {
        let ratio = 3.0 * rng.uniform();
        let adv = 4.0 * rng.uniform() - 2.0;
        let eps = 0.5 * rng.uniform();
        if ppo_surrogate(ratio, adv, eps) > ratio * adv {
            violations += 1;
        }
    }
    verdict(
        sync_ok && rel <= 1e-9 && violations == 0,
        format!(
            "sync ratio {} clip {}; eps->inf rel diff {rel:.1e}; {violations} of 10^4 pairs above unclipped",
            sync.mean_ratio, sync.clip_fraction
        ),
    )
}

fn criterion_4() -> Verdict {
    let mut rng = RngStream::new(12, StreamId::Update);
    let mut mismatches = 0;
    let mut out_of_bounds = 0;
    for _ in 0..1000 {
        let len = 1 + (rng.uniform() * 30.0) as usize;
        let mut tracker = RewardTracker::new(0.8).unwrap();
        let mut expected = 0.0;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for t in 0..len {
            let q = rng.uniform();
            expected = if t == 0 { q } else { 0.8 * expected + (1.0 - 0.8) * q };
            lo = lo.min(q);
            hi = hi.max(q);
            let got = ema_update(&mut tracker, q).unwrap();
            if got != expected {
                mismatches += 1;
            }
            if got < lo || got > hi {
                out_of_bounds += 1;
            }
        }
    }
    verdict(
        mismatches == 0 && out_of_bounds == 0,
        format!("1000 streams: {mismatches} mismatches, {out_of_bounds} outside running range"),
    )
}

fn criterion_5() -> Verdict {
    let mut rng = RngStream::new(21, StreamId::DataGen);
    let (x, classes) = random_sequence(&mut rng, 6);
    let perm = [3, 5, 0, 1, 4, 2];
    let px = x.select_rows(&perm);
    let pc: Vec<usize> = perm.iter().map(|&i| classes[i]).collect();
    let deviation = |c: &Controller| {
        let a = c.forward(&x, &classes).unwrap();
        let b = c.forward(&px, &pc).unwrap();
        b.logits.max_abs_diff(&a.logits.select_rows(&perm)).max((a.value - b.value).abs())
    };
    let without = deviation(&small_controller(Variant::Transformer, false));
    let with = deviation(&small_controller(Variant::Transformer, true));

    let c = small_controller(Variant::Transformer, true);
    let out = c.forward(&x, &classes).unwrap();
    let mut row_err: f64 = 0.0;
    for layer in 0..2 {
        for head in 0..2 {
            for r in out.attention_weights(layer, head).unwrap().iter_rows() {
                row_err = row_err.max((r.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }

    let zero = Matrix::zeros(6, 2);
    let greedy = sample_actions(&zero, &mut RngStream::new(1, StreamId::ActionSample), SampleMode::Greedy);
    let zero_cfg = ControllerConfig { zero_policy_head: true, ..c.config.clone() };
    let fresh = Controller::new(zero_cfg, &mut RngStream::new(2, StreamId::ControllerInit)).unwrap();
    let fresh_out = fresh.forward(&x, &classes).unwrap();
    let fresh_greedy = sample_actions(&fresh_out.logits, &mut RngStream::new(1, StreamId::ActionSample), SampleMode::Greedy);
    let kept = greedy.kept() + fresh_greedy.kept();

    verdict(
        without <= 1e-9 && with > 1e-9 && row_err <= 1e-12 && kept == 0,
        format!("equivariance dev {without:.1e} without / {with:.1e} with positions; row-sum err {row_err:.1e}; zero-logit keeps {kept}"),
    )
}

fn criterion_6(report: &ExperimentReport, elapsed: Duration) -> Verdict {
    let acc = |m: &str| report.arm(m).map(|a| a.accuracies()).unwrap_or_default();
    let (none, random, oracle, rl) = (acc("none"), acc("random"), acc("oracle"), acc("rl-ppo-transformer"));
    let (m_none, m_random, m_oracle, m_rl) = (mean(&none), mean(&random), mean(&oracle), mean(&rl));
    let beats_none = rl.iter().zip(&none).filter(|(r, n)| r > n).count();
    let cleaner = report
        .per_seed
        .iter()
        .filter(|o| {
            let arm = o.arms.iter().find(|a| a.method == "rl-ppo-transformer");
            arm.and_then(|a| a.corrupted_fraction).is_some_and(|f| f < o.pool_corrupted_fraction)
        })
        .count();
    let n = report.seeds.len();
    let pass = n == 5
        && m_oracle >= m_rl
        && m_rl > m_random
        && m_random >= m_none
        && m_rl - m_random >= 0.02
        && beats_none >= 4
        && cleaner >= 4
        && elapsed < Duration::from_secs(600);
    verdict(
        pass,
        format!(
            "oracle {m_oracle:.4} rl {m_rl:.4} random {m_random:.4} none {m_none:.4}; rl-random {:+.4}; rl>none {beats_none}/{n}; cleaner than pool {cleaner}/{n}; {:.0}s",
            m_rl - m_random,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_7(base: &ExperimentConfig, reference: &ExperimentReport) -> Verdict {
    let mut means = Vec::new();
    let mut completed = 0;
    for variant in [Variant::Transformer, Variant::Gru, Variant::GruAttn] {
        for algorithm in [Algorithm::Ppo, Algorithm::Reinforce] {
            let name = format!("rl-{}-{}", algorithm.label(), variant.label());
            let report = if variant == Variant::Transformer && algorithm == Algorithm::Ppo {
                Ok(reference.clone())
            } else {
                let mut cfg = base.clone();
                cfg.controller.variant = variant;
                cfg.algorithm = algorithm;
                compare_methods(&cfg)
            };
            match report.ok().and_then(|r| r.arm(&name).map(|a| mean(&a.accuracies()))) {
                Some(m) => {
                    completed += 1;
                    means.push((name, m));
                }
                None => means.push((name, f64::NAN)),
            }
        }
    }
    let get = |n: &str| means.iter().find(|(m, _)| m == n).map(|(_, v)| *v).unwrap_or(f64::NAN);
    let (tp, gr) = (get("rl-ppo-transformer"), get("rl-reinforce-gru"));
    let listing: Vec<String> = means.iter().map(|(n, m)| format!("{n} {m:.4}")).collect();
    verdict(completed == 6 && tp >= gr, format!("{completed}/6 completed; {}", listing.join(", ")))
}

fn criterion_8(base: &ExperimentConfig, report: &ExperimentReport) -> Verdict {
    let one = ExperimentConfig { seeds: vec![base.seeds[0]], ..base.clone() };
    let a = compare_methods(&one).and_then(|r| r.to_json());
    let b = compare_methods(&one).and_then(|r| r.to_json());
    let identical = matches!((&a, &b), (Ok(x), Ok(y)) if x == y);

    let mut totals_ok = true;
    let mut in_range = 0;
    for o in &report.per_seed {
        let rl = o.arms.iter().find(|a| a.method == "rl-ppo-transformer").unwrap();
        totals_ok &= o.rl_histogram.total() == rl.selected_per_class.iter().sum::<usize>();
        totals_ok &= o.pool_histogram.total() == base.task.pool_per_class * base.task.classes;
        if o.rl_keep_rate > 0.1 && o.rl_keep_rate < 0.9 {
            in_range += 1;
        }
    }
    let rates: Vec<String> = report.per_seed.iter().map(|o| format!("{:.3}", o.rl_keep_rate)).collect();
    verdict(
        identical && totals_ok && in_range >= 4,
        format!(
            "byte-identical report {identical}; histogram totals {totals_ok}; keep rates [{}] in (0.1, 0.9) {in_range}/{}",
            rates.join(", "),
            report.per_seed.len()
        ),
    )
}

fn main() -> ExitCode {
    let mut results = vec![
        ("2 gradient verification", criterion_2()),
        ("3 ppo identities", criterion_3()),
        ("4 ema conformance", criterion_4()),
        ("5 controller structure", criterion_5()),
    ];

    let base = ExperimentConfig::default();
    let start = Instant::now();
    match compare_methods(&base) {
        Ok(report) => {
            results.push(("6 desk-scale end-to-end", criterion_6(&report, start.elapsed())));
            results.push(("7 ablation direction", criterion_7(&base, &report)));
            results.push(("8 reproducibility and artifacts", criterion_8(&base, &report)));
        }
        Err(e) => {
            for name in ["6 desk-scale end-to-end", "7 ablation direction", "8 reproducibility and artifacts"] {
                results.push((name, verdict(false, format!("benchmark failed: {e}"))));
            }
        }
    }

    let mut failed = 0;
    for (name, v) in &results {
        println!("{} criterion {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
