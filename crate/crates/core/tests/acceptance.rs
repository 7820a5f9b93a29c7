//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on failure.

mod common;

use std::time::{Duration, Instant};

use common::reference::{reference_apportion, reference_redistribute, RefStep};
use finepo::advantage::group_advantages;
use finepo::credit::{redistribute, CreditStep, RedistributionConfig};
use finepo::forge::{compile_dataset, synthesize_scene, ForgeSpec, SceneParams};
use finepo::oracle::{self, OracleConfig};
use finepo::regularizer::{kl_offsets, raw_offset, ActionDistribution, KlParams};
use finepo::rng;
use finepo::sim::{
    self, policy_gradient, surrogate_objective, ExperimentConfig, Mode, TabularPolicy, UpdateBatch,
    WeightedDecision,
};
use finepo::trajectory::{Action, ActionKind, QualityJudgment};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed < Duration::from_secs(limit_secs)
}

fn random_rewards(rng: &mut sim_rng::R, k: usize) -> Vec<f64> {
    match rng.random_range(0..4) {
        0 => (0..k)
            .map(|_| f64::from(rng.random_range(0..2u8)))
            .collect(),
        1 => (0..k).map(|_| rng.random_range(-1.0..1.0)).collect(),
        2 => {
            let scale = 10f64.powi(rng.random_range(-6..7));
            (0..k)
                .map(|_| scale * rng.random_range(-1.0..1.0))
                .collect()
        }
        _ => {
            let offset = rng.random_range(-1e3..1e3);
            (0..k)
                .map(|_| offset + rng.random_range(0.0..1.0))
                .collect()
        }
    }
}

mod sim_rng {
    pub type R = finepo::rng::StreamRng;
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = rng::stream("acceptance-1", 0, 0);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..10_000 {
        let k = rng.random_range(2..=32);
        let rewards = random_rewards(&mut rng, k);
        let adv = group_advantages(&rewards).expect("valid group");
        let sum: f64 = adv.advantages.iter().sum();
        let max_abs = rewards.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        let bound = 1e-12 * k as f64 * max_abs;
        if sum.abs() > bound {
            failures += 1;
        }
        if bound > 0.0 {
            worst = worst.max(sum.abs() / bound);
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures == 0 && within(elapsed, 5),
        format!(
            "10000 groups, {failures} violations, worst |sum|/bound {worst:.3e}, {elapsed:.2?}"
        ),
    )
}

/// One random response: base advantage, steps and config.
struct CreditCase {
    a: f64,
    steps: Vec<CreditStep>,
    cfg: RedistributionConfig,
}

fn random_case(rng: &mut sim_rng::R, default_cfg: bool) -> CreditCase {
    let a = match rng.random_range(0..6) {
        0 => 0.0,
        1 => rng.random_range(-1.0..-0.0),
        2 => rng.random_range(0.0..1.0),
        3 => 10f64.powi(rng.random_range(-4..3)) * if rng.random_bool(0.5) { 1.0 } else { -1.0 },
        4 => f64::from(rng.random_range(1..24u8)) / 24.0,
        _ => -f64::from(rng.random_range(1..24u8)) / 24.0,
    };
    let n = rng.random_range(1..=8);
    let steps = (0..n)
        .map(|_| {
            let kind = if rng.random_bool(0.1) {
                ActionKind::Text
            } else {
                ActionKind::CREDITABLE[rng.random_range(0..4)]
            };
            let score = if rng.random_bool(0.1) {
                None
            } else {
                let base = QualityJudgment::ALL[rng.random_range(0..4)].score();
                let offset = if rng.random_bool(0.5) {
                    rng.random_range(-0.5..=0.5)
                } else {
                    0.0
                };
                Some(base + offset)
            };
            CreditStep {
                kind,
                score,
                token_length: rng.random_range(1..=200),
            }
        })
        .collect();
    let cfg = if default_cfg {
        RedistributionConfig::default()
    } else {
        RedistributionConfig::new(rng.random_range(0.0..1.0), rng.random_range(1.0..4.0), 1e-6)
            .expect("valid config")
    };
    CreditCase { a, steps, cfg }
}

fn credit_corpus() -> Vec<CreditCase> {
    let mut rng = rng::stream("acceptance-credit", 0, 0);
    (0..10_000)
        .map(|i| random_case(&mut rng, i % 2 == 0))
        .collect()
}

fn criterion_2(corpus: &[CreditCase]) -> Outcome {
    let start = Instant::now();
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for case in corpus {
        let out = redistribute(case.a, &case.steps, &case.cfg);
        let mut drift = 0.0;
        let mut mass = 0.0;
        for (s, pre) in case.steps.iter().zip(&out.pre_clip) {
            let l = f64::from(s.token_length);
            drift += l * (pre - case.a);
            mass += l;
        }
        let bound = 1e-9 * mass * case.a.abs() + 1e-12;
        if drift.abs() > bound {
            failures += 1;
        }
        worst = worst.max(drift.abs() / bound);
    }
    let elapsed = start.elapsed();
    outcome(
        failures == 0 && within(elapsed, 10),
        format!("10000 responses, {failures} violations, worst |drift|/bound {worst:.3e}, {elapsed:.2?}"),
    )
}

fn criterion_3(corpus: &[CreditCase]) -> Outcome {
    let mut failures = 0;
    let mut zero_cases = 0;
    for case in corpus {
        let out = redistribute(case.a, &case.steps, &case.cfg);
        let beta = case.cfg.beta;
        let ok = out.advantages.iter().all(|&v| {
            if case.a > 0.0 {
                (0.0..=beta * case.a).contains(&v)
            } else if case.a < 0.0 {
                (beta * case.a..=0.0).contains(&v)
            } else {
                v == 0.0
            }
        });
        if case.a == 0.0 {
            zero_cases += 1;
        }
        if !ok {
            failures += 1;
        }
    }
    outcome(
        failures == 0,
        format!("10000 responses ({zero_cases} with A=0), {failures} out-of-band"),
    )
}

fn criterion_4() -> Outcome {
    let params = KlParams::default();
    let mut rng = rng::stream("acceptance-4", 0, 0);
    let random_dist = |rng: &mut sim_rng::R| {
        let mut w = [0.0; 4];
        for x in w.iter_mut() {
            *x = if rng.random_bool(0.15) {
                0.0
            } else {
                rng.random_range(0.0..1.0)
            };
        }
        if w.iter().sum::<f64>() == 0.0 {
            w[0] = 1.0;
        }
        let s: f64 = w.iter().sum();
        ActionDistribution::new(w.map(|x| x / s)).expect("normalized")
    };
    let mut failures = Vec::new();
    for i in 0..10_000 {
        let p = random_dist(&mut rng);
        let q = if i % 10 == 0 {
            p
        } else {
            random_dist(&mut rng)
        };
        let off = kl_offsets(&p, &q, &params);
        for t in 0..4 {
            let o = off.0[t];
            if !(-params.gamma..=params.gamma).contains(&o) {
                failures.push(format!("offset {o} outside band"));
            }
            if (o == 0.0) != (p.0[t] == q.0[t]) {
                failures.push(format!("offset {o} for p={} q={}", p.0[t], q.0[t]));
            }
        }
        let q0: f64 = rng.random_range(0.01..1.0);
        let mut last = f64::INFINITY;
        for step in 0..=100 {
            let pv = f64::from(step) / 100.0;
            let raw = raw_offset(pv, q0, params.lambda, params.epsilon);
            if raw >= last {
                failures.push(format!("raw offset not decreasing at p={pv}"));
            }
            last = raw;
        }
    }
    let offset_of = |p: f64, q: f64| {
        let others = |v: f64| [v, (1.0 - v) / 3.0, (1.0 - v) / 3.0, (1.0 - v) / 3.0];
        let dp = ActionDistribution::new(others(p)).expect("distribution");
        let dq = ActionDistribution::new(others(q)).expect("distribution");
        kl_offsets(&dp, &dq, &params).0[0]
    };
    let cases = [
        (offset_of(0.5, 0.25), -0.069315),
        (offset_of(0.9, 0.001), -0.5),
        (offset_of(0.05, 0.25), 0.160942),
    ];
    for (got, want) in cases {
        if (got - want).abs() > 1e-6 {
            failures.push(format!("numeric case {got} != {want}"));
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "10000 pairs + 3 numeric cases ({:.6}, {:.6}, {:.6}), {} violations{}",
            cases[0].0,
            cases[1].0,
            cases[2].0,
            failures.len(),
            failures
                .first()
                .map(|f| format!(": {f}"))
                .unwrap_or_default()
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = rng::stream("acceptance-5", 0, 0);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let case = random_case(&mut rng, i % 4 == 0);
        let lib = redistribute(case.a, &case.steps, &case.cfg);
        let ref_steps: Vec<RefStep> = case
            .steps
            .iter()
            .map(|s| RefStep {
                active: s.kind != ActionKind::Text && s.score.is_some(),
                score: s.score.unwrap_or(0.0),
                length: s.token_length,
            })
            .collect();
        let r = reference_redistribute(
            case.a,
            &ref_steps,
            case.cfg.alpha,
            case.cfg.beta,
            case.cfg.epsilon,
        );
        for (x, y) in lib
            .advantages
            .iter()
            .zip(&r.fin)
            .chain(lib.pre_clip.iter().zip(&r.pre_clip))
        {
            worst = worst.max((x - y).abs());
        }
    }
    outcome(
        worst <= 1e-12,
        format!("1000 cases, max |library - reference| {worst:.3e}"),
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let cfg = OracleConfig::default();
    let template = Action::Point { x: 0, y: 0 };
    let params = SceneParams {
        width: 256,
        height: 256,
        targets_per_type: 1,
    };
    let mut hits = 0;
    let mut misses = Vec::new();
    for seed in 0..50u64 {
        let scene = synthesize_scene(seed, &params);
        let target = &scene.targets[(seed % scene.targets.len() as u64) as usize];
        let h = oracle::heatmap(&scene, &target.id, &template, 32, &cfg).expect("heatmap");
        let (row, col) = h.argmax();
        let (cx, cy) = h.center_of(row, col);
        let (tx, ty) = target.primitive.center();
        if ((cx - tx).powi(2) + (cy - ty).powi(2)).sqrt() <= h.pitch() {
            hits += 1;
        } else {
            misses.push(seed);
        }
    }
    let elapsed = start.elapsed();
    outcome(
        hits == 50 && within(elapsed, 60),
        format!("{hits}/50 scenes peak within one pitch, misses {misses:?}, {elapsed:.2?}"),
    )
}

fn criterion_7() -> Outcome {
    let cfg = OracleConfig::default();
    let mut details = Vec::new();
    let mut pass = true;
    for n in [7usize, 40, 100, 473] {
        let spec = ForgeSpec {
            n,
            seed: 11,
            ..Default::default()
        };
        let data = match compile_dataset(&spec, &cfg) {
            Ok(d) => d,
            Err(e) => return outcome(false, format!("n={n}: {e}")),
        };
        let mut labels = [0usize; 4];
        let mut kinds = [0usize; 4];
        let mut rescored = 0;
        for r in &data.records {
            labels[r.label.index()] += 1;
            kinds[r
                .ground_truth
                .kind()
                .creditable_index()
                .expect("creditable")] += 1;
            let judged =
                oracle::oracle_score(&r.scene, &r.target_id, &r.perturbed, &cfg).expect("score");
            if judged == r.label {
                rescored += 1;
            }
        }
        let want_labels = reference_apportion(n, &[2, 4, 3, 1]);
        let want_kinds = reference_apportion(n, &[1, 1, 1, 1]);
        let ok = labels.to_vec() == want_labels && kinds.to_vec() == want_kinds && rescored == n;
        pass &= ok;
        details.push(format!(
            "n={n} labels {labels:?} actions {kinds:?} rescored {rescored}/{n}"
        ));
    }
    outcome(pass, details.join("; "))
}

fn median_of(runs: &[sim::SeedRun], f: impl Fn(&sim::RunSummary) -> f64) -> f64 {
    sim::median(&runs.iter().map(|r| f(&r.summary)).collect::<Vec<_>>())
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let reference = |mode| ExperimentConfig {
        mode,
        ..Default::default()
    };
    let easy = |mode| ExperimentConfig {
        mode,
        easy_action: Some((ActionKind::Point, 4.0)),
        ..Default::default()
    };
    let run = |cfg: ExperimentConfig| sim::run_experiment(&cfg).expect("experiment");
    let finepo = run(reference(Mode::Finepo));
    let grpo = run(reference(Mode::Grpo));
    let random = run(reference(Mode::RandomPrm));
    let easy_finepo = run(easy(Mode::Finepo));
    let easy_nokl = run(easy(Mode::NoKl));
    let s_f = median_of(&finepo, |s| s.final_success);
    let s_g = median_of(&grpo, |s| s.final_success);
    let s_r = median_of(&random, |s| s.final_success);
    let d_f = median_of(&easy_finepo, |s| s.final_divergence);
    let d_n = median_of(&easy_nokl, |s| s.final_divergence);
    let elapsed = start.elapsed();
    outcome(
        s_f >= s_g && s_f >= s_r && d_f < d_n && within(elapsed, 600),
        format!(
            "median success finepo {s_f:.4} grpo {s_g:.4} random-prm {s_r:.4}; \
             easy-env divergence finepo {d_f:.5} no-kl {d_n:.5}; {elapsed:.2?}"
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut checked = 0usize;
    for seed in 0..3u64 {
        let mut f = ExperimentConfig {
            mode: Mode::Finepo,
            iterations: 60,
            ..Default::default()
        };
        f.redistribution.alpha = 0.0;
        f.kl.lambda = 0.0;
        let g = ExperimentConfig {
            mode: Mode::Grpo,
            ..f.clone()
        };
        let a = sim::run_seed(&f, seed, true).expect("finepo run");
        let b = sim::run_seed(&g, seed, true).expect("grpo run");
        let (ta, tb) = (a.token_trace.expect("trace"), b.token_trace.expect("trace"));
        let bits = |t: &Vec<Vec<Vec<f64>>>| -> Vec<u64> {
            t.iter().flatten().flatten().map(|v| v.to_bits()).collect()
        };
        if bits(&ta) != bits(&tb) || a.metrics.to_csv() != b.metrics.to_csv() {
            return outcome(false, format!("seed {seed}: token advantages differ"));
        }
        checked += bits(&ta).len();
    }
    outcome(
        true,
        format!("3 seeds x 60 iterations, {checked} token advantages bit-identical"),
    )
}

fn criterion_10() -> Outcome {
    let mut rng = rng::stream("acceptance-10", 0, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let factors: Vec<usize> = (0..rng.random_range(1..=2))
            .map(|_| rng.random_range(2..=5))
            .collect();
        let states = rng.random_range(1..=3);
        let width: usize = factors.iter().sum();
        let temperature = rng.random_range(0.5..2.0);
        let logits: Vec<f64> = (0..states * width)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let reference_logits: Vec<f64> = (0..states * width)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let policy =
            TabularPolicy::from_logits(states, &factors, temperature, logits).expect("policy");
        let reference = TabularPolicy::from_logits(states, &factors, temperature, reference_logits)
            .expect("policy");
        let decisions = (0..rng.random_range(1..=6))
            .map(|_| WeightedDecision {
                state: rng.random_range(0..states),
                action: rng.random_range(0..policy.num_actions()),
                weight: rng.random_range(-2.0..2.0),
            })
            .collect();
        let batch = UpdateBatch {
            decisions,
            states: (0..states).collect(),
            norm: rng.random_range(1.0..4.0),
        };
        let ref_beta = rng.random_range(0.0..0.5);
        let analytic = policy_gradient(&policy, &reference, &batch, ref_beta);
        let h = 1e-5;
        let numeric: Vec<f64> = (0..policy.logits().len())
            .map(|i| {
                let mut up = policy.clone();
                up.logits_mut()[i] += h;
                let mut down = policy.clone();
                down.logits_mut()[i] -= h;
                (surrogate_objective(&up, &reference, &batch, ref_beta)
                    - surrogate_objective(&down, &reference, &batch, ref_beta))
                    / (2.0 * h)
            })
            .collect();
        let diff = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = analytic
            .iter()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt()
            .max(1e-12);
        worst = worst.max(diff / scale);
    }
    outcome(
        worst <= 1e-6,
        format!("100 instances, worst relative error {worst:.3e}"),
    )
}

type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn main() {
    let corpus = credit_corpus();
    let criteria: Vec<(&str, Check)> = vec![
        ("group advantages sum to zero", Box::new(criterion_1)),
        (
            "pre-clip length-weighted conservation",
            Box::new(|| criterion_2(&corpus)),
        ),
        (
            "sign-consistent clipping bounds",
            Box::new(|| criterion_3(&corpus)),
        ),
        ("action-type offsets", Box::new(criterion_4)),
        ("independent reference equivalence", Box::new(criterion_5)),
        ("heatmap peak fidelity", Box::new(criterion_6)),
        (
            "forge label/action allocation and re-scoring",
            Box::new(criterion_7),
        ),
        ("ablation directions", Box::new(criterion_8)),
        ("alpha=0, lambda=0 reproduces grpo", Box::new(criterion_9)),
        (
            "policy gradient vs finite differences",
            Box::new(criterion_10),
        ),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {}: {} ({})",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            name,
            o.detail
        );
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
