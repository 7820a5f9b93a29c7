//! Toy multi-step marking environment and tabular policy-gradient trainer.
//!
//! Each task is a short sequence of sub-goals, each bound to one target of
//! a grid-aligned scene. At every step the policy picks an action type and
//! one of `G x G` cells; the mark is the canonical shape of that type in
//! that cell. The response succeeds when its final mark is judged
//! Excellent or Acceptable against the answer target.
//!
//! Four training modes share everything except how step credit is formed:
//!
//! * `finepo`: process scores, action-type offsets, redistribution;
//! * `grpo`: every token carries the response advantage;
//! * `random-prm`: redistribution driven by uniformly random judgments;
//! * `no-kl`: redistribution without action-type offsets.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::advantage::AdvantageOptions;
use crate::credit::{self, RedistributionConfig};
use crate::oracle::{self, OracleConfig, Scene, Target};
use crate::pipeline::{
    assign_credit, group_action_counts, CreditOptions, GroupCredit, PipelineError,
};
use crate::regularizer::{
    ActionCounts, ActionDistribution, ActionRegularizer, KlParams, OffsetTable,
};
use crate::render;
use crate::rng::{self, StreamRng};
use crate::trajectory::{Action, ActionKind, QualityJudgment, Response, ResponseGroup, Step};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient for state {state}, logit {logit} at iteration {iteration}")]
    NonFiniteGradient {
        state: usize,
        logit: usize,
        iteration: usize,
    },
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error(transparent)]
    Oracle(#[from] oracle::OracleError),
    #[error(transparent)]
    Credit(#[from] credit::CreditError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Finepo,
    Grpo,
    RandomPrm,
    NoKl,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Finepo, Mode::Grpo, Mode::RandomPrm, Mode::NoKl];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Finepo => "finepo",
            Mode::Grpo => "grpo",
            Mode::RandomPrm => "random-prm",
            Mode::NoKl => "no-kl",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| SimError::InvalidConfig(format!("unknown mode `{s}`")))
    }
}

/// Grid geometry shared by targets and policy actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub size: usize,
}

impl Grid {
    pub fn pitch(&self) -> f64 {
        1000.0 / self.size as f64
    }

    pub fn cells(&self) -> usize {
        self.size * self.size
    }

    /// Canonical mark of `kind` in `cell` (row-major index).
    pub fn action(&self, kind: ActionKind, cell: usize) -> Action {
        let (row, col) = (cell / self.size, cell % self.size);
        let p = self.pitch();
        let cx = oracle::cell_center(col, self.size);
        let cy = oracle::cell_center(row, self.size);
        let c = |v: f64| v.round().clamp(0.0, 1000.0) as u16;
        match kind {
            ActionKind::Point => Action::Point { x: c(cx), y: c(cy) },
            ActionKind::Line => Action::Line {
                x1: c(cx - 0.32 * p),
                y1: c(cy),
                x2: c(cx + 0.32 * p),
                y2: c(cy),
            },
            ActionKind::Rectangle => Action::Rectangle {
                x1: c(cx - 0.42 * p),
                y1: c(cy - 0.42 * p),
                x2: c(cx + 0.42 * p),
                y2: c(cy + 0.42 * p),
            },
            ActionKind::Circle => Action::Circle {
                cx: c(cx),
                cy: c(cy),
                r: c(0.4 * p).max(1),
            },
            ActionKind::Text => Action::Text {
                x: c(cx),
                y: c(cy),
                content: "?".into(),
            },
        }
    }

    pub fn num_actions(&self) -> usize {
        ActionKind::CREDITABLE.len() * self.cells()
    }

    /// Policy factors: action type, then cell.
    pub fn factors(&self) -> [usize; 2] {
        [ActionKind::CREDITABLE.len(), self.cells()]
    }

    /// Policy action index to `(kind, cell)`.
    pub fn decode(&self, index: usize) -> (ActionKind, usize) {
        (
            ActionKind::CREDITABLE[index / self.cells()],
            index % self.cells(),
        )
    }

    pub fn encode(&self, kind: ActionKind, cell: usize) -> usize {
        kind.creditable_index().expect("creditable kind") * self.cells() + cell
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubGoal {
    pub target_id: String,
    pub intent: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkingTask {
    pub id: String,
    pub scene: Scene,
    pub subgoals: Vec<SubGoal>,
    pub answer_target: String,
}

impl MarkingTask {
    pub fn horizon(&self) -> usize {
        self.subgoals.len()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.subgoals.is_empty() {
            return Err(SimError::InvalidTask(format!(
                "task `{}` has no sub-goals",
                self.id
            )));
        }
        for g in &self.subgoals {
            self.scene.target(&g.target_id)?;
        }
        self.scene.target(&self.answer_target)?;
        Ok(())
    }
}

/// Random grid-aligned tasks: every sub-goal targets a random cell with a
/// random shape; the last sub-goal is the answer.
pub fn generate_tasks(grid: Grid, count: usize, horizon: usize, seed: u64) -> Vec<MarkingTask> {
    (0..count)
        .map(|t| {
            let mut rng = rng::stream("sim-task", seed, t as u64);
            let mut targets = Vec::new();
            let mut subgoals = Vec::new();
            for step in 0..horizon {
                let kind = ActionKind::CREDITABLE[rng.random_range(0..4)];
                let cell = rng.random_range(0..grid.cells());
                let id = format!("g{step}");
                let intent = format!("mark the {kind} for sub-goal {step}");
                targets.push(Target {
                    id: id.clone(),
                    primitive: grid.action(kind, cell),
                    intent: intent.clone(),
                });
                subgoals.push(SubGoal {
                    target_id: id,
                    intent,
                });
            }
            let answer_target = subgoals
                .last()
                .map(|g| g.target_id.clone())
                .unwrap_or_default();
            MarkingTask {
                id: format!("task-{t}"),
                scene: Scene {
                    width: 256,
                    height: 256,
                    background: render::WHITE,
                    targets,
                },
                subgoals,
                answer_target,
            }
        })
        .collect()
}

/// Softmax policy over a product action space with additive logits.
///
/// The action space of every state is the product of `factors` (for the
/// simulator: action type x grid cell). Each state owns one logit per
/// factor value and the joint logit of an action is the sum of its factor
/// logits, so `pi(a) = softmax(sum_f u_f[a_f] / T)` over the joint space,
/// which equals the product of the per-factor softmaxes. A single factor
/// gives a plain joint logit table. Action indices are mixed radix with the
/// first factor most significant.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    num_states: usize,
    factors: Vec<usize>,
    temperature: f64,
    logits: Vec<f64>,
}

fn softmax(row: &[f64], t: f64) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|l| ((l - max) / t).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

impl TabularPolicy {
    pub fn uniform(
        num_states: usize,
        factors: &[usize],
        temperature: f64,
    ) -> Result<Self, SimError> {
        let width: usize = factors.iter().sum();
        TabularPolicy::from_logits(
            num_states,
            factors,
            temperature,
            vec![0.0; num_states * width],
        )
    }

    pub fn from_logits(
        num_states: usize,
        factors: &[usize],
        temperature: f64,
        logits: Vec<f64>,
    ) -> Result<Self, SimError> {
        if num_states == 0 || factors.is_empty() || factors.contains(&0) {
            return Err(SimError::InvalidConfig(
                "policy needs states and non-empty factors".into(),
            ));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(SimError::InvalidConfig(format!(
                "temperature must be > 0, got {temperature}"
            )));
        }
        let width: usize = factors.iter().sum();
        if logits.len() != num_states * width || logits.iter().any(|l| !l.is_finite()) {
            return Err(SimError::InvalidConfig(
                "logits must be finite and fully populated".into(),
            ));
        }
        Ok(TabularPolicy {
            num_states,
            factors: factors.to_vec(),
            temperature,
            logits,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn factors(&self) -> &[usize] {
        &self.factors
    }

    pub fn num_actions(&self) -> usize {
        self.factors.iter().product()
    }

    /// Logits per state.
    pub fn width(&self) -> usize {
        self.factors.iter().sum()
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    fn offset(&self, factor: usize) -> usize {
        self.factors[..factor].iter().sum()
    }

    /// Logits of one factor at `state`.
    pub fn factor_logits(&self, state: usize, factor: usize) -> &[f64] {
        let start = state * self.width() + self.offset(factor);
        &self.logits[start..start + self.factors[factor]]
    }

    /// Marginal distribution of one factor at `state`.
    pub fn factor_probs(&self, state: usize, factor: usize) -> Vec<f64> {
        softmax(self.factor_logits(state, factor), self.temperature)
    }

    /// Per-factor values of a joint action index.
    pub fn split(&self, action: usize) -> Vec<usize> {
        let mut out = vec![0; self.factors.len()];
        let mut rest = action;
        for (f, &size) in self.factors.iter().enumerate().rev() {
            out[f] = rest % size;
            rest /= size;
        }
        out
    }

    /// Joint action probabilities.
    pub fn probs(&self, state: usize) -> Vec<f64> {
        let mut joint = vec![1.0];
        for f in 0..self.factors.len() {
            let p = self.factor_probs(state, f);
            joint = joint
                .iter()
                .flat_map(|a| p.iter().map(move |b| a * b))
                .collect();
        }
        joint
    }

    pub fn log_prob(&self, state: usize, action: usize) -> f64 {
        self.split(action)
            .iter()
            .enumerate()
            .map(|(f, &v)| self.factor_probs(state, f)[v].ln())
            .sum()
    }

    pub fn sample(&self, state: usize, rng: &mut StreamRng) -> usize {
        let mut action = 0;
        for f in 0..self.factors.len() {
            let probs = self.factor_probs(state, f);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = probs.len() - 1;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            action = action * self.factors[f] + pick;
        }
        action
    }

    /// `KL(self_s || other_s)` summed over factors (exact for product distributions).
    pub fn kl_at(&self, other: &TabularPolicy, state: usize) -> f64 {
        (0..self.factors.len())
            .map(|f| kl_divergence(&self.factor_probs(state, f), &other.factor_probs(state, f)))
            .sum()
    }
}

/// `KL(p || q)` for full-support distributions.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi.ln() - qi.ln()))
        .sum()
}

/// One sampled decision and the advantage it is credited with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedDecision {
    pub state: usize,
    pub action: usize,
    pub weight: f64,
}

/// Surrogate objective of one update:
/// `sum(weight * log pi(action | state)) / norm - ref_beta * sum_s KL(pi_s || ref_s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateBatch {
    pub decisions: Vec<WeightedDecision>,
    /// States whose reference KL is penalized.
    pub states: Vec<usize>,
    pub norm: f64,
}

pub fn surrogate_objective(
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    batch: &UpdateBatch,
    ref_beta: f64,
) -> f64 {
    let mut j = 0.0;
    for d in &batch.decisions {
        j += d.weight * policy.log_prob(d.state, d.action) / batch.norm;
    }
    for &s in &batch.states {
        j -= ref_beta * policy.kl_at(reference, s);
    }
    j
}

/// Analytic gradient of [`surrogate_objective`] with respect to the logits.
pub fn policy_gradient(
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    batch: &UpdateBatch,
    ref_beta: f64,
) -> Vec<f64> {
    let width = policy.width();
    let t = policy.temperature;
    let mut grad = vec![0.0; policy.logits.len()];
    for d in &batch.decisions {
        if d.weight == 0.0 {
            continue;
        }
        let w = d.weight / batch.norm / t;
        for (f, &v) in policy.split(d.action).iter().enumerate() {
            let start = d.state * width + policy.offset(f);
            let probs = policy.factor_probs(d.state, f);
            for (b, p) in probs.iter().enumerate() {
                let indicator = if b == v { 1.0 } else { 0.0 };
                grad[start + b] += w * (indicator - p);
            }
        }
    }
    if ref_beta != 0.0 {
        for &s in &batch.states {
            for f in 0..policy.factors.len() {
                let p = policy.factor_probs(s, f);
                let q = reference.factor_probs(s, f);
                let kl = kl_divergence(&p, &q);
                let start = s * width + policy.offset(f);
                for b in 0..p.len() {
                    grad[start + b] -= ref_beta * p[b] * (p[b].ln() - q[b].ln() - kl) / t;
                }
            }
        }
    }
    grad
}

/// Gradient-ascent step on the surrogate objective.
pub fn update(
    policy: &mut TabularPolicy,
    reference: &TabularPolicy,
    batch: &UpdateBatch,
    lr: f64,
    ref_beta: f64,
    iteration: usize,
) -> Result<(), SimError> {
    let grad = policy_gradient(policy, reference, batch, ref_beta);
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(SimError::NonFiniteGradient {
            state: i / policy.width(),
            logit: i % policy.width(),
            iteration,
        });
    }
    for (l, g) in policy.logits.iter_mut().zip(grad) {
        *l += lr * g;
    }
    Ok(())
}

/// How step scores are produced during rollouts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreSource {
    Oracle,
    Random,
}

/// A sampled group together with the decisions behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub group: ResponseGroup,
    /// Policy action index per response and step.
    pub actions: Vec<Vec<usize>>,
    /// Oracle judgment per response and step (independent of the score source).
    pub oracle_judgments: Vec<Vec<QualityJudgment>>,
}

/// Environment and scoring settings used during rollouts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutEnv<'a> {
    pub grid: Grid,
    /// Bands of the process scorer.
    pub process: &'a OracleConfig,
    /// Bands of the terminal-reward check.
    pub terminal: &'a OracleConfig,
    pub scores: ScoreSource,
}

pub fn state_index(task: usize, step: usize, horizon: usize) -> usize {
    task * horizon + step
}

pub fn rollout(
    policy: &TabularPolicy,
    task: &MarkingTask,
    task_index: usize,
    k: usize,
    env: &RolloutEnv<'_>,
    rng: &mut StreamRng,
) -> Result<Rollout, SimError> {
    let horizon = task.horizon();
    let mut responses = Vec::with_capacity(k);
    let mut actions = Vec::with_capacity(k);
    let mut judgments = Vec::with_capacity(k);
    let answer = &task.scene.target(&task.answer_target)?.primitive;
    for _ in 0..k {
        let mut steps = Vec::with_capacity(horizon);
        let mut picked = Vec::with_capacity(horizon);
        let mut judged = Vec::with_capacity(horizon);
        let mut last = None;
        for (t, goal) in task.subgoals.iter().enumerate() {
            let idx = policy.sample(state_index(task_index, t, horizon), rng);
            let (kind, cell) = env.grid.decode(idx);
            let action = env.grid.action(kind, cell);
            let truth = oracle::oracle_score(&task.scene, &goal.target_id, &action, env.process)?;
            let label = match env.scores {
                ScoreSource::Oracle => truth,
                ScoreSource::Random => QualityJudgment::ALL[rng.random_range(0..4)],
            };
            let step = Step::with_default_length(goal.intent.clone(), action.clone(), Some(label))
                .map_err(|e| SimError::InvalidTask(e.to_string()))?;
            steps.push(step);
            picked.push(idx);
            judged.push(truth);
            last = Some((action, cell));
        }
        let (reward, final_answer) = match last {
            Some((action, cell)) => {
                let j = oracle::judge(answer, &action, env.terminal)?;
                let ok = matches!(j, QualityJudgment::Excellent | QualityJudgment::Acceptable);
                (if ok { 1.0 } else { 0.0 }, format!("cell {cell}"))
            }
            None => (0.0, "none".to_string()),
        };
        let response = Response::with_default_length(task.id.clone(), steps, final_answer, reward)
            .map_err(|e| SimError::InvalidTask(e.to_string()))?;
        responses.push(response);
        actions.push(picked);
        judgments.push(judged);
    }
    let group = ResponseGroup::new(task.id.clone(), responses, k)
        .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    Ok(Rollout {
        group,
        actions,
        oracle_judgments: judgments,
    })
}

/// Decisions of a rollout, each weighted by the advantage shared by the
/// tokens of its step. A step's tokens jointly encode one tabular action,
/// so `sum_t A * grad log pi(token_t)` collapses to `A * grad log pi(action)`.
pub fn build_update_batch(
    rollout: &Rollout,
    credit: &GroupCredit,
    task_index: usize,
) -> UpdateBatch {
    let horizon = rollout.actions.first().map_or(0, Vec::len);
    let mut decisions = Vec::new();
    for (picked, tokens) in rollout.actions.iter().zip(&credit.tokens) {
        for (t, (&action, &(start, _))) in picked.iter().zip(&tokens.spans).enumerate() {
            let weight = tokens.values[start];
            decisions.push(WeightedDecision {
                state: state_index(task_index, t, horizon),
                action,
                weight,
            });
        }
    }
    let states = (0..horizon)
        .map(|t| state_index(task_index, t, horizon))
        .collect();
    UpdateBatch {
        decisions,
        states,
        norm: 1.0,
    }
}

/// Every tunable of a simulated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub k: usize,
    pub learning_rate: f64,
    pub ref_kl_beta: f64,
    pub temperature: f64,
    pub redistribution: RedistributionConfig,
    pub kl: KlParams,
    pub window_batches: usize,
    pub prior: [f64; 4],
    pub grid: usize,
    pub horizon: usize,
    pub tasks: usize,
    pub env_seed: u64,
    pub iterations: usize,
    pub seeds: Vec<u64>,
    /// Widen one type's process-score bands by this factor.
    pub easy_action: Option<(ActionKind, f64)>,
    /// Trailing iterations averaged into the run summary.
    pub summary_window: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Finepo,
            k: 24,
            learning_rate: 0.1,
            ref_kl_beta: 0.01,
            temperature: 1.0,
            redistribution: RedistributionConfig::default(),
            kl: KlParams::default(),
            window_batches: 32,
            prior: [0.25; 4],
            grid: 8,
            horizon: 3,
            tasks: 4,
            env_seed: 7,
            iterations: 200,
            seeds: (0..10).collect(),
            easy_action: None,
            summary_window: 20,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.k < 2 {
            return bad(format!("k must be >= 2, got {}", self.k));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if !(self.ref_kl_beta >= 0.0 && self.ref_kl_beta.is_finite()) {
            return bad(format!(
                "ref_kl_beta must be >= 0, got {}",
                self.ref_kl_beta
            ));
        }
        if self.grid < 2 || self.horizon < 1 || self.tasks < 1 {
            return bad("grid >= 2, horizon >= 1 and tasks >= 1 are required".into());
        }
        if self.iterations == 0 || self.summary_window == 0 {
            return bad("iterations and summary_window must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        self.redistribution.validate()?;
        self.kl
            .validate()
            .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        ActionDistribution::new(self.prior).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        if self.window_batches == 0 {
            return bad("window_batches must be >= 1".into());
        }
        TabularPolicy::uniform(1, &[1], self.temperature)?;
        self.process_oracle()?;
        Ok(())
    }

    fn process_oracle(&self) -> Result<OracleConfig, SimError> {
        let base = OracleConfig::default();
        Ok(match self.easy_action {
            Some((kind, factor)) => base.with_lenient(kind, factor)?,
            None => base,
        })
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub success_rate: f64,
    pub mean_reward: f64,
    pub mean_oracle_score: f64,
    pub action_distribution: [f64; 4],
    pub kl_to_prior: f64,
    pub ref_kl: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

pub const METRICS_HEADER: &str = "iteration,success_rate,mean_reward,mean_oracle_score,p_point,p_line,p_rectangle,p_circle,kl_to_prior,ref_kl";

impl MetricsLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.rows {
            let d = r.action_distribution;
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                r.iteration,
                r.success_rate,
                r.mean_reward,
                r.mean_oracle_score,
                d[0],
                d[1],
                d[2],
                d[3],
                r.kl_to_prior,
                r.ref_kl
            ));
        }
        out
    }
}

/// Tail statistics of one seed's run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub mode: Mode,
    pub final_success: f64,
    pub final_distribution: [f64; 4],
    pub final_divergence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub metrics: MetricsLog,
    pub summary: RunSummary,
    /// Token advantages of every iteration, kept only when requested.
    pub token_trace: Option<Vec<Vec<Vec<f64>>>>,
    pub policy: TabularPolicy,
}

/// Train one seed.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, keep_trace: bool) -> Result<SeedRun, SimError> {
    cfg.validate()?;
    let grid = Grid { size: cfg.grid };
    let tasks = generate_tasks(grid, cfg.tasks, cfg.horizon, cfg.env_seed);
    let terminal = OracleConfig::default();
    let process = cfg.process_oracle()?;
    let env = RolloutEnv {
        grid,
        process: &process,
        terminal: &terminal,
        scores: if cfg.mode == Mode::RandomPrm {
            ScoreSource::Random
        } else {
            ScoreSource::Oracle
        },
    };
    let states = cfg.tasks * cfg.horizon;
    let mut policy = TabularPolicy::uniform(states, &grid.factors(), cfg.temperature)?;
    let reference = policy.clone();
    let prior =
        ActionDistribution::new(cfg.prior).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    let mut regularizer = ActionRegularizer::new(cfg.window_batches, prior, cfg.kl)
        .map_err(|e| SimError::InvalidConfig(e.to_string()))?;

    let mut metrics = MetricsLog::default();
    let mut trace = keep_trace.then(Vec::new);
    let mut tail_counts = ActionCounts::zero();
    let mut tail_success = 0.0;
    let tail_start = cfg.iterations.saturating_sub(cfg.summary_window);

    for it in 0..cfg.iterations {
        let task_index = it % tasks.len();
        let mut rng = rng::stream("sim-rollout", seed, it as u64);
        let ro = rollout(
            &policy,
            &tasks[task_index],
            task_index,
            cfg.k,
            &env,
            &mut rng,
        )?;
        let counts = group_action_counts(&ro.group);
        let offsets = match cfg.mode {
            Mode::Finepo | Mode::RandomPrm => regularizer.observe_batch(&[counts]),
            Mode::NoKl | Mode::Grpo => OffsetTable::zero(),
        };
        let opts = CreditOptions {
            advantage: AdvantageOptions::default(),
            redistribution: cfg.redistribution,
            redistribute: cfg.mode != Mode::Grpo,
        };
        let credit = assign_credit(&ro.group, &offsets, &opts)?;
        let batch = build_update_batch(&ro, &credit, task_index);
        update(
            &mut policy,
            &reference,
            &batch,
            cfg.learning_rate,
            cfg.ref_kl_beta,
            it,
        )?;

        let rewards = ro.group.rewards();
        let k = rewards.len() as f64;
        let success = rewards.iter().filter(|&&r| r > 0.0).count() as f64 / k;
        let mean_reward = rewards.iter().sum::<f64>() / k;
        let judged: Vec<f64> = ro
            .oracle_judgments
            .iter()
            .flatten()
            .map(|j| j.score())
            .collect();
        let mean_score = judged.iter().sum::<f64>() / judged.len().max(1) as f64;
        let dist = ActionDistribution::from_counts(&counts).unwrap_or(prior);
        let ref_kl = batch
            .states
            .iter()
            .map(|&s| policy.kl_at(&reference, s))
            .sum::<f64>()
            / batch.states.len().max(1) as f64;
        metrics.rows.push(MetricsRow {
            iteration: it,
            success_rate: success,
            mean_reward,
            mean_oracle_score: mean_score,
            action_distribution: dist.0,
            kl_to_prior: dist.kl_to(&prior, cfg.kl.epsilon),
            ref_kl,
        });
        if it >= tail_start {
            tail_counts = crate::regularizer::merge_counts(&[tail_counts, counts]);
            tail_success += success;
        }
        if let Some(t) = trace.as_mut() {
            t.push(credit.tokens.iter().map(|v| v.values.clone()).collect());
        }
    }
    let window = (cfg.iterations - tail_start) as f64;
    let final_dist = ActionDistribution::from_counts(&tail_counts).unwrap_or(prior);
    Ok(SeedRun {
        seed,
        summary: RunSummary {
            seed,
            mode: cfg.mode,
            final_success: tail_success / window,
            final_distribution: final_dist.0,
            final_divergence: final_dist.kl_to(&prior, cfg.kl.epsilon),
        },
        metrics,
        token_trace: trace,
        policy,
    })
}

/// Train every configured seed; results come back in seed order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<SeedRun>, SimError> {
    cfg.validate()?;
    cfg.seeds
        .par_iter()
        .map(|&s| run_seed(cfg, s, false))
        .collect()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub const SUMMARY_HEADER: &str =
    "mode,seed,final_success,p_point,p_line,p_rectangle,p_circle,final_divergence";

/// Per-seed rows followed by a `median` row.
pub fn summary_csv(runs: &[SeedRun]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in runs {
        let s = &r.summary;
        let d = s.final_distribution;
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            s.mode, s.seed, s.final_success, d[0], d[1], d[2], d[3], s.final_divergence
        ));
    }
    if let Some(first) = runs.first() {
        let col = |f: &dyn Fn(&RunSummary) -> f64| {
            median(&runs.iter().map(|r| f(&r.summary)).collect::<Vec<_>>())
        };
        out.push_str(&format!(
            "{},median,{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            first.summary.mode,
            col(&|s| s.final_success),
            col(&|s| s.final_distribution[0]),
            col(&|s| s.final_distribution[1]),
            col(&|s| s.final_distribution[2]),
            col(&|s| s.final_distribution[3]),
            col(&|s| s.final_divergence),
        ));
    }
    out
}
