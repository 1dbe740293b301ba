//! Realizing a joint action measure as individual actions.
//!
//! Averaging a deterministic assignment over all agent permutations gives the
//! uniform law on the action vectors `u^{1:N}` whose joint empirical measure
//! with the current states equals `θ`. Sampling from it amounts to shuffling
//! the agents in each state and cutting the shuffled list into action groups.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::measure::EmpiricalJointMeasure;

/// Largest population for [`exact_action_distribution`].
pub const EXACT_ACTION_MAX_AGENTS: usize = 8;

fn check_marginal(states: &[usize], theta: &EmpiricalJointMeasure) -> Result<()> {
    let mut counts = vec![0u32; theta.num_states()];
    for &x in states {
        if x >= counts.len() {
            return Err(Error::parameter("states", format!("state {x} out of range")));
        }
        counts[x] += 1;
    }
    let marginal = theta.state_marginal();
    if counts != marginal {
        let deviation = counts
            .iter()
            .zip(&marginal)
            .map(|(a, b)| a.abs_diff(*b))
            .max()
            .unwrap_or(0) as f64;
        return Err(Error::MarginalMismatch {
            deviation: deviation / states.len().max(1) as f64,
        });
    }
    Ok(())
}

/// Draws an action vector uniformly among those consistent with `theta`.
pub fn realize_exchangeable_action(
    states: &[usize],
    theta: &EmpiricalJointMeasure,
    seed: u64,
) -> Result<Vec<usize>> {
    realize_with_rng(states, theta, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn realize_with_rng<R: Rng + ?Sized>(
    states: &[usize],
    theta: &EmpiricalJointMeasure,
    rng: &mut R,
) -> Result<Vec<usize>> {
    check_marginal(states, theta)?;
    let mut actions = vec![0; states.len()];
    let mut members: Vec<usize> = Vec::new();
    for x in 0..theta.num_states() {
        members.clear();
        members.extend((0..states.len()).filter(|&i| states[i] == x));
        members.shuffle(rng);
        let mut slots = members.iter();
        for (u, &c) in theta.row(x).iter().enumerate() {
            for &agent in slots.by_ref().take(c as usize) {
                actions[agent] = u;
            }
        }
    }
    Ok(actions)
}

/// The exact uniform law over consistent action vectors, by enumerating all of
/// `U^N`. Entries are in lexicographic order of the action vector.
pub fn exact_action_distribution(
    states: &[usize],
    theta: &EmpiricalJointMeasure,
) -> Result<Vec<(Vec<usize>, f64)>> {
    if states.len() > EXACT_ACTION_MAX_AGENTS {
        return Err(Error::Intractable(format!(
            "{} agents, at most {EXACT_ACTION_MAX_AGENTS} supported",
            states.len()
        )));
    }
    check_marginal(states, theta)?;
    let n = states.len();
    let nu = theta.num_actions();
    let mut consistent = Vec::new();
    let mut actions = vec![0usize; n];
    let total = nu.pow(n as u32);
    for code in 0..total {
        let mut rest = code;
        for slot in actions.iter_mut().rev() {
            *slot = rest % nu;
            rest /= nu;
        }
        let joint = EmpiricalJointMeasure::from_pairs(states, &actions, theta.num_states(), nu)?;
        if joint.counts() == theta.counts() {
            consistent.push(actions.clone());
        }
    }
    let p = 1.0 / consistent.len() as f64;
    Ok(consistent.into_iter().map(|a| (a, p)).collect())
}
