//! Standalone step-credit redistribution used to cross-check the library.
//!
//! Deliberately shares no code with `finepo::credit`: the deviation of each
//! step is formed as a weighted average of pairwise score differences,
//! which is exactly zero whenever scores tie.

#![allow(dead_code)]

#[derive(Debug, Clone, Copy)]
pub struct RefStep {
    /// Whether the step is a scored, creditable visual action.
    pub active: bool,
    pub score: f64,
    pub length: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefOutput {
    pub pre_clip: Vec<f64>,
    pub fin: Vec<f64>,
}

pub fn reference_redistribute(
    a: f64,
    steps: &[RefStep],
    alpha: f64,
    beta: f64,
    eps: f64,
) -> RefOutput {
    let active: Vec<&RefStep> = steps.iter().filter(|s| s.active).collect();
    let total_len: f64 = active.iter().map(|s| s.length as f64).sum();

    // delta_j = sum_i L_i (p_j - p_i) / sum_i L_i
    let delta = |p: f64| -> f64 {
        let mut acc = 0.0;
        for s in &active {
            acc += s.length as f64 * (p - s.score);
        }
        acc / total_len
    };

    let mut max_delta = f64::NEG_INFINITY;
    for s in &active {
        max_delta = max_delta.max(delta(s.score));
    }
    let k = if !active.is_empty() && max_delta > 0.0 {
        a.abs() / (max_delta + eps)
    } else {
        0.0
    };

    let mut pre_clip = Vec::with_capacity(steps.len());
    let mut fin = Vec::with_capacity(steps.len());
    for s in steps {
        if !s.active {
            pre_clip.push(a);
            fin.push(a);
            continue;
        }
        let pre = a + alpha * k * delta(s.score);
        let clipped = if a > 0.0 {
            pre.max(0.0).min(beta * a)
        } else if a < 0.0 {
            pre.max(beta * a).min(0.0)
        } else {
            0.0
        };
        pre_clip.push(pre);
        fin.push(clipped);
    }
    RefOutput { pre_clip, fin }
}

/// Reference largest-remainder split (Hamilton method, ties to the lower index).
pub fn reference_apportion(n: usize, weights: &[u32]) -> Vec<usize> {
    let total: usize = weights.iter().map(|&w| w as usize).sum();
    let mut seats: Vec<usize> = weights.iter().map(|&w| n * w as usize / total).collect();
    let mut left = n - seats.iter().sum::<usize>();
    let mut taken = vec![false; weights.len()];
    while left > 0 {
        let mut best: Option<usize> = None;
        for i in 0..weights.len() {
            if taken[i] {
                continue;
            }
            let rem = n * weights[i] as usize % total;
            if best.is_none_or(|b| rem > n * weights[b] as usize % total) {
                best = Some(i);
            }
        }
        let b = best.expect("fewer leftover seats than parties");
        seats[b] += 1;
        taken[b] = true;
        left -= 1;
    }
    seats
}

#[test]
fn reference_matches_hand_examples() {
    let steps = [
        RefStep {
            active: true,
            score: 4.0,
            length: 10,
        },
        RefStep {
            active: true,
            score: 2.0,
            length: 10,
        },
    ];
    let out = reference_redistribute(0.5, &steps, 0.2, 2.0, 1e-6);
    assert!((out.fin[0] - 0.6).abs() < 1e-6);
    assert!((out.fin[1] - 0.4).abs() < 1e-6);
    assert_eq!(
        reference_apportion(100, &[2, 4, 3, 1]),
        vec![20, 40, 30, 10]
    );
    assert_eq!(reference_apportion(7, &[2, 4, 3, 1]), vec![1, 3, 2, 1]);
}
