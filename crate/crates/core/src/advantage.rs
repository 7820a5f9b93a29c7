//! Cross-trajectory (group-relative) advantages.
//!
//! `A(y_i) = R(y_i) - mean(R)` over the `k` sibling responses of a prompt.
//! There is no division by the group standard deviation unless explicitly
//! requested through [`AdvantageOptions::std_normalize`].

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdvantageError {
    #[error("invalid group: need at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("reward at index {index} is not finite ({value})")]
    NonFiniteReward { index: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvantageOptions {
    /// Divide by the population standard deviation of the group (plus
    /// `std_epsilon`). Off by default.
    pub std_normalize: bool,
    pub std_epsilon: f64,
}

impl Default for AdvantageOptions {
    fn default() -> Self {
        AdvantageOptions {
            std_normalize: false,
            std_epsilon: 1e-6,
        }
    }
}

/// Per-response advantages aligned with the group order.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupAdvantage {
    pub advantages: Vec<f64>,
    pub mean_reward: f64,
}

impl GroupAdvantage {
    pub fn len(&self) -> usize {
        self.advantages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.advantages.is_empty()
    }
}

/// Pairwise (cascade) summation; error grows as O(log n) instead of O(n).
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 8;
    if xs.len() <= BLOCK {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

pub fn group_advantages(rewards: &[f64]) -> Result<GroupAdvantage, AdvantageError> {
    group_advantages_with(rewards, AdvantageOptions::default())
}

pub fn group_advantages_with(
    rewards: &[f64],
    opts: AdvantageOptions,
) -> Result<GroupAdvantage, AdvantageError> {
    if rewards.len() < 2 {
        return Err(AdvantageError::GroupTooSmall(rewards.len()));
    }
    if let Some((index, &value)) = rewards.iter().enumerate().find(|(_, r)| !r.is_finite()) {
        return Err(AdvantageError::NonFiniteReward { index, value });
    }
    let k = rewards.len() as f64;
    let mut mean = pairwise_sum(rewards) / k;
    // one refinement pass removes most of the rounding left in the mean
    let residuals: Vec<f64> = rewards.iter().map(|r| r - mean).collect();
    mean += pairwise_sum(&residuals) / k;

    let mut advantages: Vec<f64> = rewards.iter().map(|r| r - mean).collect();
    if opts.std_normalize {
        let sq: Vec<f64> = advantages.iter().map(|a| a * a).collect();
        let std = (pairwise_sum(&sq) / k).sqrt();
        for a in &mut advantages {
            *a /= std + opts.std_epsilon;
        }
    }
    Ok(GroupAdvantage {
        advantages,
        mean_reward: mean,
    })
}
