//! Action-type regularization of process scores.
//!
//! The policy's empirical distribution over the four creditable action
//! types is tracked over a sliding window of batches. Each type receives a
//! clipped offset
//!
//! ```text
//! offset(a) = clip(-lambda * ln((P(a) + eps) / (Q(a) + eps)), -gamma, gamma)
//! ```
//!
//! which is added to the process score of every step using that type, so
//! over-used types are penalized and under-used types are encouraged.
//! Text steps are never offset.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::trajectory::ActionKind;

/// Version tag written into window dumps.
pub const WINDOW_DUMP_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegularizerError {
    #[error("unknown creditable action type `{0}`")]
    UnknownActionType(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid window dump: {0}")]
    InvalidDump(String),
}

/// Per-type counts for point, line, rectangle, circle (in that order).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionCounts(pub [u64; 4]);

impl ActionCounts {
    pub fn zero() -> Self {
        ActionCounts([0; 4])
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn get(&self, kind: ActionKind) -> u64 {
        kind.creditable_index().map_or(0, |i| self.0[i])
    }

    /// Count one occurrence; text is ignored.
    pub fn add(&mut self, kind: ActionKind) {
        if let Some(i) = kind.creditable_index() {
            self.0[i] += 1;
        }
    }

    pub fn from_kinds<I: IntoIterator<Item = ActionKind>>(kinds: I) -> Self {
        let mut c = ActionCounts::zero();
        for k in kinds {
            c.add(k);
        }
        c
    }

    /// Build from a name-keyed table. Only the four creditable names are
    /// accepted.
    pub fn from_named(table: &BTreeMap<String, u64>) -> Result<Self, RegularizerError> {
        let mut c = ActionCounts::zero();
        for (name, &n) in table {
            let idx = name
                .parse::<ActionKind>()
                .ok()
                .and_then(ActionKind::creditable_index)
                .ok_or_else(|| RegularizerError::UnknownActionType(name.clone()))?;
            c.0[idx] += n;
        }
        Ok(c)
    }

    pub fn to_named(&self) -> BTreeMap<String, u64> {
        ActionKind::CREDITABLE
            .iter()
            .zip(self.0)
            .map(|(k, n)| (k.name().to_string(), n))
            .collect()
    }

    fn plus(self, other: ActionCounts) -> ActionCounts {
        let mut out = self;
        for (o, n) in out.0.iter_mut().zip(other.0) {
            *o += n;
        }
        out
    }

    fn minus(self, other: ActionCounts) -> ActionCounts {
        let mut out = self;
        for (o, n) in out.0.iter_mut().zip(other.0) {
            *o -= n;
        }
        out
    }
}

/// Elementwise sum of per-worker count tables.
pub fn merge_counts(tables: &[ActionCounts]) -> ActionCounts {
    tables
        .iter()
        .fold(ActionCounts::zero(), |acc, t| acc.plus(*t))
}

/// Merge name-keyed tables, rejecting unknown keys.
pub fn merge_named_counts(
    tables: &[BTreeMap<String, u64>],
) -> Result<ActionCounts, RegularizerError> {
    let parsed = tables
        .iter()
        .map(ActionCounts::from_named)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(merge_counts(&parsed))
}

/// Probability per creditable action type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution(pub [f64; 4]);

impl ActionDistribution {
    pub fn uniform() -> Self {
        ActionDistribution([0.25; 4])
    }

    pub fn new(probs: [f64; 4]) -> Result<Self, RegularizerError> {
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(RegularizerError::InvalidDistribution(format!(
                "probabilities must be finite and non-negative: {probs:?}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(RegularizerError::InvalidDistribution(format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        Ok(ActionDistribution(probs))
    }

    /// `None` when the counts are all zero.
    pub fn from_counts(counts: &ActionCounts) -> Option<Self> {
        let total = counts.total();
        if total == 0 {
            return None;
        }
        let t = total as f64;
        Some(ActionDistribution(counts.0.map(|c| c as f64 / t)))
    }

    pub fn get(&self, kind: ActionKind) -> f64 {
        kind.creditable_index().map_or(0.0, |i| self.0[i])
    }

    /// `KL(self || other)` with `eps` added to both sides.
    pub fn kl_to(&self, other: &ActionDistribution, eps: f64) -> f64 {
        self.0
            .iter()
            .zip(other.0)
            .map(|(&p, q)| {
                if p > 0.0 {
                    p * ((p + eps) / (q + eps)).ln()
                } else {
                    0.0
                }
            })
            .sum()
    }
}

/// Bounded FIFO of per-batch count tables with running totals.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedActionCounts {
    capacity: usize,
    batches: VecDeque<ActionCounts>,
    totals: ActionCounts,
}

#[derive(Serialize, Deserialize)]
struct WindowDump {
    version: u32,
    capacity: usize,
    batches: Vec<[u64; 4]>,
}

impl WindowedActionCounts {
    pub fn new(capacity: usize) -> Result<Self, RegularizerError> {
        if capacity == 0 {
            return Err(RegularizerError::InvalidParameter(
                "window capacity must be >= 1".into(),
            ));
        }
        Ok(WindowedActionCounts {
            capacity,
            batches: VecDeque::with_capacity(capacity),
            totals: ActionCounts::zero(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn totals(&self) -> ActionCounts {
        self.totals
    }

    pub fn batches(&self) -> impl Iterator<Item = &ActionCounts> {
        self.batches.iter()
    }

    /// Append one batch table, evicting the oldest when full.
    pub fn record_batch(&mut self, counts: ActionCounts) {
        if self.batches.len() == self.capacity {
            if let Some(old) = self.batches.pop_front() {
                self.totals = self.totals.minus(old);
            }
        }
        self.batches.push_back(counts);
        self.totals = self.totals.plus(counts);
    }

    /// Empirical distribution over the window, `None` if nothing was counted.
    pub fn current_distribution(&self) -> Option<ActionDistribution> {
        ActionDistribution::from_counts(&self.totals)
    }

    /// Versioned JSON dump for resumable runs.
    pub fn dump(&self) -> String {
        let d = WindowDump {
            version: WINDOW_DUMP_VERSION,
            capacity: self.capacity,
            batches: self.batches.iter().map(|b| b.0).collect(),
        };
        serde_json::to_string(&d).expect("window dump serialization is infallible")
    }

    pub fn restore(dump: &str) -> Result<Self, RegularizerError> {
        let d: WindowDump =
            serde_json::from_str(dump).map_err(|e| RegularizerError::InvalidDump(e.to_string()))?;
        if d.version != WINDOW_DUMP_VERSION {
            return Err(RegularizerError::InvalidDump(format!(
                "unsupported version {} (expected {WINDOW_DUMP_VERSION})",
                d.version
            )));
        }
        if d.batches.len() > d.capacity {
            return Err(RegularizerError::InvalidDump(format!(
                "{} batches exceed capacity {}",
                d.batches.len(),
                d.capacity
            )));
        }
        let mut w = WindowedActionCounts::new(d.capacity)?;
        for b in d.batches {
            w.record_batch(ActionCounts(b));
        }
        Ok(w)
    }
}

/// Coefficients of the clipped offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlParams {
    pub lambda: f64,
    pub gamma: f64,
    pub epsilon: f64,
}

impl Default for KlParams {
    fn default() -> Self {
        KlParams {
            lambda: 0.1,
            gamma: 0.5,
            epsilon: 1e-6,
        }
    }
}

impl KlParams {
    pub fn validate(&self) -> Result<(), RegularizerError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(RegularizerError::InvalidParameter(format!(
                "kl_lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(RegularizerError::InvalidParameter(format!(
                "kl_clip_gamma must be > 0, got {}",
                self.gamma
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(RegularizerError::InvalidParameter(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Score offset per creditable action type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OffsetTable(pub [f64; 4]);

impl OffsetTable {
    pub fn zero() -> Self {
        OffsetTable([0.0; 4])
    }

    /// Offset for `kind`; text always gets zero.
    pub fn get(&self, kind: ActionKind) -> f64 {
        kind.creditable_index().map_or(0.0, |i| self.0[i])
    }
}

/// Unclipped offset `-lambda * ln((p + eps) / (q + eps))`.
pub fn raw_offset(p: f64, q: f64, lambda: f64, eps: f64) -> f64 {
    -lambda * ((p + eps) / (q + eps)).ln()
}

pub fn kl_offsets(
    current: &ActionDistribution,
    prior: &ActionDistribution,
    params: &KlParams,
) -> OffsetTable {
    let mut out = [0.0; 4];
    for (i, o) in out.iter_mut().enumerate() {
        let raw = raw_offset(current.0[i], prior.0[i], params.lambda, params.epsilon);
        *o = raw.clamp(-params.gamma, params.gamma);
    }
    OffsetTable(out)
}

/// `p'_j = p_j + offset(type(a_j))`; text steps pass through.
pub fn regularize_scores(steps: &[(ActionKind, f64)], offsets: &OffsetTable) -> Vec<f64> {
    steps
        .iter()
        .map(|&(kind, score)| score + offsets.get(kind))
        .collect()
}

/// Window, prior and coefficients for one training loop.
#[derive(Debug, Clone)]
pub struct ActionRegularizer {
    window: WindowedActionCounts,
    prior: ActionDistribution,
    params: KlParams,
}

impl ActionRegularizer {
    pub fn new(
        window_batches: usize,
        prior: ActionDistribution,
        params: KlParams,
    ) -> Result<Self, RegularizerError> {
        params.validate()?;
        Ok(ActionRegularizer {
            window: WindowedActionCounts::new(window_batches)?,
            prior,
            params,
        })
    }

    pub fn with_window(
        window: WindowedActionCounts,
        prior: ActionDistribution,
        params: KlParams,
    ) -> Result<Self, RegularizerError> {
        params.validate()?;
        Ok(ActionRegularizer {
            window,
            prior,
            params,
        })
    }

    pub fn window(&self) -> &WindowedActionCounts {
        &self.window
    }

    pub fn prior(&self) -> &ActionDistribution {
        &self.prior
    }

    pub fn params(&self) -> &KlParams {
        &self.params
    }

    /// Record the merged global counts of one batch and return the offsets
    /// to apply to that batch. An empty window yields zero offsets.
    pub fn observe_batch(&mut self, worker_counts: &[ActionCounts]) -> OffsetTable {
        self.window.record_batch(merge_counts(worker_counts));
        match self.window.current_distribution() {
            Some(p) => kl_offsets(&p, &self.prior, &self.params),
            None => OffsetTable::zero(),
        }
    }
}
