//! Per-group credit assignment: group advantages, score offsets,
//! redistribution and token layout.

use serde::Serialize;

use crate::advantage::{group_advantages_with, AdvantageError, AdvantageOptions};
use crate::credit::{
    self, CreditError, CreditStep, RedistributionConfig, StepAdvantageVector, TokenAdvantageVector,
};
use crate::regularizer::{regularize_scores, ActionCounts, OffsetTable};
use crate::trajectory::{ActionKind, ResponseGroup};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("group `{prompt_id}`: {source}")]
    Advantage {
        prompt_id: String,
        #[source]
        source: AdvantageError,
    },
    #[error("group `{prompt_id}`: {source}")]
    Credit {
        prompt_id: String,
        #[source]
        source: CreditError,
    },
}

/// How credit is formed for a group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CreditOptions {
    pub advantage: AdvantageOptions,
    pub redistribution: RedistributionConfig,
    /// `false` gives every token the response advantage.
    pub redistribute: bool,
}

impl Default for CreditOptions {
    fn default() -> Self {
        CreditOptions {
            advantage: AdvantageOptions::default(),
            redistribution: RedistributionConfig::default(),
            redistribute: true,
        }
    }
}

/// Per-response credit of one group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupCredit {
    pub base: Vec<f64>,
    pub steps: Vec<StepAdvantageVector>,
    pub tokens: Vec<TokenAdvantageVector>,
    pub offsets: OffsetTable,
}

impl GroupCredit {
    pub fn clip_activations(&self) -> usize {
        self.steps.iter().map(|s| s.clip_activations).sum()
    }
}

/// Credit steps of every response with `offsets` added to the stored scores.
pub fn regularized_steps(group: &ResponseGroup, offsets: &OffsetTable) -> Vec<Vec<CreditStep>> {
    group
        .responses()
        .iter()
        .map(|response| {
            let raw = credit::credit_steps(response);
            let pairs: Vec<(ActionKind, f64)> = raw
                .iter()
                .map(|s| (s.kind, s.score.unwrap_or_default()))
                .collect();
            raw.iter()
                .zip(regularize_scores(&pairs, offsets))
                .map(|(s, p)| CreditStep {
                    score: s.score.map(|_| p),
                    ..*s
                })
                .collect()
        })
        .collect()
}

pub fn assign_credit(
    group: &ResponseGroup,
    offsets: &OffsetTable,
    opts: &CreditOptions,
) -> Result<GroupCredit, PipelineError> {
    let prompt_id = || group.prompt_id().to_string();
    let adv = group_advantages_with(&group.rewards(), opts.advantage).map_err(|source| {
        PipelineError::Advantage {
            prompt_id: prompt_id(),
            source,
        }
    })?;
    let inputs = opts.redistribute.then(|| regularized_steps(group, offsets));
    let mut steps = Vec::with_capacity(group.len());
    let mut tokens = Vec::with_capacity(group.len());
    for (i, (response, &a)) in group.responses().iter().zip(&adv.advantages).enumerate() {
        let step_adv = match &inputs {
            Some(inputs) => credit::redistribute(a, &inputs[i], &opts.redistribution),
            None => StepAdvantageVector::uniform(a, response.steps().len()),
        };
        let layout = credit::token_advantages(response, &step_adv, a).map_err(|source| {
            PipelineError::Credit {
                prompt_id: prompt_id(),
                source,
            }
        })?;
        tokens.push(layout);
        steps.push(step_adv);
    }
    Ok(GroupCredit {
        base: adv.advantages,
        steps,
        tokens,
        offsets: *offsets,
    })
}

/// Creditable action types used across a group.
pub fn group_action_counts(group: &ResponseGroup) -> ActionCounts {
    ActionCounts::from_kinds(
        group
            .responses()
            .iter()
            .flat_map(|r| r.steps().iter().map(|s| s.action().kind())),
    )
}
