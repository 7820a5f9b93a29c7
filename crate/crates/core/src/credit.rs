//! Intra-trajectory credit redistribution.
//!
//! Given a response's coarse advantage `A` and the regularized process
//! scores `p'_j` of its creditable steps, with token lengths `L_j`:
//!
//! ```text
//! p_bar   = sum(L_j * p'_j) / sum(L_j)
//! delta_j = p'_j - p_bar
//! scale   = |A| / (max_j delta_j + eps)   if max_j delta_j > 0, else 0
//! A'_j    = A + alpha * scale * delta_j
//! A_j     = clip(A'_j, 0, beta * A)       if A > 0
//!           clip(A'_j, beta * A, 0)       otherwise
//! ```
//!
//! Before clipping the length-weighted adjustments sum to zero. Text steps
//! and steps without a score sit out of every aggregate and keep `A`.
//! Step advantages are then laid onto token positions: step spans are
//! contiguous from position 0 in step order, the trailing non-step tokens
//! keep `A`.

use serde::{Deserialize, Serialize};

use crate::trajectory::{ActionKind, Response};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CreditError {
    #[error("invalid redistribution config: {0}")]
    InvalidConfig(String),
    #[error("step spans cover {steps} tokens but the response has only {total}")]
    SpanOverflow { steps: u64, total: u64 },
    #[error("{what}: expected {expected} entries, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RedistributionConfig {
    /// Credit adjustment intensity.
    pub alpha: f64,
    /// Clip range factor.
    pub beta: f64,
    /// Stabilizer in the scaling-factor denominator.
    pub epsilon: f64,
}

impl Default for RedistributionConfig {
    fn default() -> Self {
        RedistributionConfig {
            alpha: 0.2,
            beta: 2.0,
            epsilon: 1e-6,
        }
    }
}

impl RedistributionConfig {
    pub fn new(alpha: f64, beta: f64, epsilon: f64) -> Result<Self, CreditError> {
        let cfg = RedistributionConfig {
            alpha,
            beta,
            epsilon,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CreditError> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(CreditError::InvalidConfig(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.beta >= 1.0 && self.beta.is_finite()) {
            return Err(CreditError::InvalidConfig(format!(
                "beta must be >= 1, got {}",
                self.beta
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(CreditError::InvalidConfig(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// One step as seen by the redistribution: its type, its (regularized)
/// score if it has one, and its token length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CreditStep {
    pub kind: ActionKind,
    pub score: Option<f64>,
    pub token_length: u32,
}

impl CreditStep {
    pub fn new(kind: ActionKind, score: f64, token_length: u32) -> Self {
        CreditStep {
            kind,
            score: Some(score),
            token_length,
        }
    }

    /// Whether the step enters the weighted mean, deviations and scale.
    pub fn participates(&self) -> bool {
        self.kind.is_creditable() && self.score.is_some()
    }
}

/// Length-weighted mean score. `None` for an empty input.
pub fn weighted_mean(scores: &[f64], lengths: &[u32]) -> Option<f64> {
    assert_eq!(scores.len(), lengths.len(), "scores and lengths must align");
    let total: f64 = lengths.iter().map(|&l| f64::from(l)).sum();
    if scores.is_empty() || total <= 0.0 {
        return None;
    }
    if scores.iter().all(|&p| p == scores[0]) {
        return Some(scores[0]);
    }
    let weighted = |center: f64| -> f64 {
        scores
            .iter()
            .zip(lengths)
            .map(|(p, &l)| f64::from(l) * (p - center))
            .sum::<f64>()
    };
    let first = weighted(0.0) / total;
    // refine against the first estimate so the weighted deviations cancel tightly
    Some(first + weighted(first) / total)
}

pub fn deviations(scores: &[f64], mean: f64) -> Vec<f64> {
    scores.iter().map(|p| p - mean).collect()
}

/// Dynamic scaling factor `|A| / (max delta + eps)`, zero when no deviation
/// is positive.
pub fn scaling_factor(advantage: f64, deviations: &[f64], epsilon: f64) -> f64 {
    let max = deviations.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max > 0.0 {
        advantage.abs() / (max + epsilon)
    } else {
        0.0
    }
}

/// Clip a pre-clip step advantage into the sign-consistent band.
pub fn clip_step_advantage(pre_clip: f64, advantage: f64, beta: f64) -> f64 {
    if advantage > 0.0 {
        pre_clip.clamp(0.0, beta * advantage)
    } else {
        pre_clip.clamp(beta * advantage, 0.0)
    }
}

/// Result of redistributing one response's advantage over its steps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepAdvantageVector {
    pub base: f64,
    /// Final advantage per step (every step, in order).
    pub advantages: Vec<f64>,
    /// Advantage before clipping; equals `base` for non-participating steps.
    pub pre_clip: Vec<f64>,
    /// Deviation from the weighted mean; `None` for non-participating steps.
    pub deviations: Vec<Option<f64>>,
    pub weighted_mean: Option<f64>,
    pub scale: f64,
    /// Steps whose final value differs from the pre-clip value.
    pub clip_activations: usize,
}

impl StepAdvantageVector {
    pub fn uniform(base: f64, steps: usize) -> Self {
        StepAdvantageVector {
            base,
            advantages: vec![base; steps],
            pre_clip: vec![base; steps],
            deviations: vec![None; steps],
            weighted_mean: None,
            scale: 0.0,
            clip_activations: 0,
        }
    }
}

pub fn redistribute(
    advantage: f64,
    steps: &[CreditStep],
    cfg: &RedistributionConfig,
) -> StepAdvantageVector {
    let active: Vec<usize> = (0..steps.len())
        .filter(|&i| steps[i].participates())
        .collect();
    let scores: Vec<f64> = active
        .iter()
        .map(|&i| steps[i].score.unwrap_or_default())
        .collect();
    let lengths: Vec<u32> = active.iter().map(|&i| steps[i].token_length).collect();

    let Some(mean) = weighted_mean(&scores, &lengths) else {
        return StepAdvantageVector::uniform(advantage, steps.len());
    };
    let devs = deviations(&scores, mean);
    let scale = scaling_factor(advantage, &devs, cfg.epsilon);

    let mut out = StepAdvantageVector::uniform(advantage, steps.len());
    out.weighted_mean = Some(mean);
    out.scale = scale;
    for (&i, &d) in active.iter().zip(&devs) {
        let pre = advantage + cfg.alpha * scale * d;
        let fin = clip_step_advantage(pre, advantage, cfg.beta);
        out.deviations[i] = Some(d);
        out.pre_clip[i] = pre;
        out.advantages[i] = fin;
        if fin != pre {
            out.clip_activations += 1;
        }
    }
    out
}

/// Per-token advantages plus the `[start, end)` span of every step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenAdvantageVector {
    pub values: Vec<f64>,
    pub spans: Vec<(usize, usize)>,
}

/// Lay step advantages out over `total` token positions.
pub fn layout_token_advantages(
    lengths: &[u32],
    total: u32,
    step_advantages: &[f64],
    base: f64,
) -> Result<TokenAdvantageVector, CreditError> {
    if lengths.len() != step_advantages.len() {
        return Err(CreditError::LengthMismatch {
            what: "step advantages",
            expected: lengths.len(),
            got: step_advantages.len(),
        });
    }
    let covered: u64 = lengths.iter().map(|&l| u64::from(l)).sum();
    if covered > u64::from(total) {
        return Err(CreditError::SpanOverflow {
            steps: covered,
            total: u64::from(total),
        });
    }
    let mut values = vec![base; total as usize];
    let mut spans = Vec::with_capacity(lengths.len());
    let mut start = 0usize;
    for (&len, &adv) in lengths.iter().zip(step_advantages) {
        let end = start + len as usize;
        values[start..end].fill(adv);
        spans.push((start, end));
        start = end;
    }
    Ok(TokenAdvantageVector { values, spans })
}

pub fn token_advantages(
    response: &Response,
    step_adv: &StepAdvantageVector,
    advantage: f64,
) -> Result<TokenAdvantageVector, CreditError> {
    let lengths: Vec<u32> = response.steps().iter().map(|s| s.token_length()).collect();
    layout_token_advantages(
        &lengths,
        response.total_token_length(),
        &step_adv.advantages,
        advantage,
    )
}

/// Credit steps of a response using the scores of its stored judgments.
pub fn credit_steps(response: &Response) -> Vec<CreditStep> {
    response
        .steps()
        .iter()
        .map(|s| CreditStep {
            kind: s.action().kind(),
            score: s.judgment().map(|j| j.score()),
            token_length: s.token_length(),
        })
        .collect()
}
