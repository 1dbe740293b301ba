//! Monte Carlo rollouts of the `N`-agent team and the experiments built on them.
//!
//! Each replication draws from its own ChaCha stream, seeded by a hash of the
//! base seed and the replication index, and results are aggregated in
//! replication order. Reports are therefore identical for any number of
//! worker threads.

mod gap;
mod markov_check;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use gap::{epsilon_gap, epsilon_gap_capped, GapRow};
pub use markov_check::{verify_markov_mf, AgentPolicies, MarkovCheckReport};

use crate::error::{Error, Result};
use crate::lifted::{realize_with_rng, LiftedMdp, MeasurePolicy};
use crate::measure::{composition_rank, EmpiricalStateMeasure};
use crate::mkv::flow_trajectory;
use crate::model::{l1_distance, EnvironmentModel, SimplexPoint};
use crate::policy::{Horizon, PolicyKernel};

/// How agents choose actions in a rollout.
#[derive(Clone, Copy, Debug)]
pub enum SimPolicy<'a> {
    /// Centralized lifted policy: `θ = g_t(μ^N)`, realized exchangeably.
    Lifted {
        mdp: &'a LiftedMdp,
        policy: &'a MeasurePolicy,
    },
    /// Symmetric independent policy `π(·|x, μ̂)`.
    Kernel(&'a PolicyKernel),
}

#[derive(Clone, Debug)]
pub struct SimConfig<'a> {
    pub population: u32,
    /// For [`Horizon::Discounted`], `tolerance` is the admissible truncation
    /// error and the rollout length is chosen to meet it.
    pub horizon: Horizon,
    pub replications: usize,
    pub seed: u64,
    /// Initial agent states; defaults to the largest-remainder rounding of
    /// `N · initial_dist`, agents listed in state order.
    pub initial_states: Option<Vec<usize>>,
    pub policy: SimPolicy<'a>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub population: u32,
    pub replications: usize,
    pub seed: u64,
    /// Number of simulated decision epochs.
    pub steps: usize,
    pub mean_cost: f64,
    /// `None` for a single replication.
    pub std_error: Option<f64>,
    /// Mean of `μ^N_t / N` for `t = 0..=steps`.
    pub mean_measure: Vec<Vec<f64>>,
    /// For kernel policies: `E[max_{s≤t} ‖μ^N_s/N − μ_s‖₁]` against the
    /// deterministic flow started at `μ^N_0 / N`.
    pub chaos_gap: Option<Vec<f64>>,
    /// `β^T c_max / (1-β)` for truncated infinite horizons.
    pub truncation_error: Option<f64>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for replication `index` of a run seeded with `base`.
pub fn replication_rng(base: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(base ^ splitmix64(index)))
}

/// Pairwise (cascade) summation.
pub(crate) fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Sample mean and standard error of the mean.
pub(crate) fn mean_and_se(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = pairwise_sum(values) / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let squares: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&squares) / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

/// Rollout length and truncation bound for a horizon.
pub fn rollout_length(model: &EnvironmentModel, horizon: Horizon) -> Result<(usize, Option<f64>)> {
    horizon.validate()?;
    match horizon {
        Horizon::Finite { steps, .. } => Ok((steps, None)),
        Horizon::Discounted {
            discount,
            tolerance,
        } => {
            let c_max = model.cost_bound();
            let bound = |t: usize| discount.powi(t as i32) * c_max / (1.0 - discount);
            let mut t = 1;
            while bound(t) > tolerance {
                t += 1;
            }
            Ok((t, Some(bound(t))))
        }
    }
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let r: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if r < acc {
            return i;
        }
    }
    last
}

fn histogram(states: &[usize], num_states: usize) -> Vec<u32> {
    let mut counts = vec![0u32; num_states];
    for &x in states {
        counts[x] += 1;
    }
    counts
}

struct Rollout {
    cost: f64,
    /// `μ^N_t / N` for `t = 0..=steps`.
    measures: Vec<Vec<f64>>,
}

fn rollout<R: Rng + ?Sized>(
    model: &EnvironmentModel,
    policy: SimPolicy<'_>,
    initial: &[usize],
    steps: usize,
    discount: f64,
    rng: &mut R,
) -> Result<Rollout> {
    let nx = model.num_states();
    let nu = model.num_actions();
    let n = initial.len() as f64;
    let mut states = initial.to_vec();
    let mut actions = vec![0usize; states.len()];
    let mut measures = Vec::with_capacity(steps + 1);
    let mut laws = vec![vec![0.0; nx]; nx * nu];
    let mut cost = 0.0;
    let mut weight = 1.0;
    for t in 0..=steps {
        let counts = histogram(&states, nx);
        let mu: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
        measures.push(mu.clone());
        if t == steps {
            break;
        }
        match policy {
            SimPolicy::Lifted { mdp, policy } => {
                let ordinal = composition_rank(&counts);
                let theta = &mdp.actions(ordinal)[policy.action(t, ordinal)];
                actions = realize_with_rng(&states, theta, rng)?;
            }
            SimPolicy::Kernel(pi) => {
                let table = pi.table_for(t, &mu);
                for (a, &x) in actions.iter_mut().zip(&states) {
                    *a = sample_index(&table[x * nu..(x + 1) * nu], rng);
                }
            }
        }
        let costs = model.cost_table(&mu);
        let stage: f64 = states
            .iter()
            .zip(&actions)
            .map(|(&x, &u)| costs[x * nu + u])
            .sum::<f64>()
            / n;
        cost += weight * stage;
        weight *= discount;
        for (cell, law) in laws.iter_mut().enumerate() {
            model.kernel_into(cell / nu, cell % nu, &mu, law);
        }
        for (x, &u) in states.iter_mut().zip(&actions) {
            *x = sample_index(&laws[*x * nu + u], rng);
        }
    }
    Ok(Rollout { cost, measures })
}

/// Default initial agent states: largest-remainder rounding of `N · dist`.
pub fn initial_states(dist: &SimplexPoint, population: u32) -> Result<Vec<usize>> {
    let mu = EmpiricalStateMeasure::round_from(dist, population)?;
    Ok(mu
        .counts()
        .iter()
        .enumerate()
        .flat_map(|(x, &c)| std::iter::repeat(x).take(c as usize))
        .collect())
}

fn check_policy(model: &EnvironmentModel, population: u32, policy: SimPolicy<'_>) -> Result<()> {
    match policy {
        SimPolicy::Lifted { mdp, .. } => {
            if mdp.population() != population {
                return Err(Error::parameter(
                    "policy",
                    format!("lifted policy is for N = {}, not {population}", mdp.population()),
                ));
            }
            if mdp.model() != model {
                return Err(Error::parameter("policy", "lifted policy was built for another model"));
            }
        }
        SimPolicy::Kernel(pi) => {
            if pi.num_states() != model.num_states() || pi.num_actions() != model.num_actions() {
                return Err(Error::parameter("policy", "kernel dimensions differ from the model"));
            }
        }
    }
    Ok(())
}

pub fn simulate_n_agents(model: &EnvironmentModel, config: &SimConfig<'_>) -> Result<SimReport> {
    if config.replications == 0 {
        return Err(Error::parameter("replications", "must be at least 1"));
    }
    check_policy(model, config.population, config.policy)?;
    let (steps, truncation_error) = rollout_length(model, config.horizon)?;
    let initial = match &config.initial_states {
        Some(s) => {
            if s.len() != config.population as usize || s.iter().any(|&x| x >= model.num_states()) {
                return Err(Error::parameter("initial_states", "length or state out of range"));
            }
            s.clone()
        }
        None => initial_states(model.initial_dist(), config.population)?,
    };
    let discount = config.horizon.discount();
    let runs: Vec<Rollout> = (0..config.replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = replication_rng(config.seed, r as u64);
            rollout(model, config.policy, &initial, steps, discount, &mut rng)
        })
        .collect::<Result<_>>()?;

    let costs: Vec<f64> = runs.iter().map(|r| r.cost).collect();
    let (mean_cost, std_error) = mean_and_se(&costs);
    let mean_measure = (0..=steps)
        .map(|t| {
            (0..model.num_states())
                .map(|x| {
                    let v: Vec<f64> = runs.iter().map(|r| r.measures[t][x]).collect();
                    pairwise_sum(&v) / runs.len() as f64
                })
                .collect()
        })
        .collect();
    let chaos_gap = match config.policy {
        SimPolicy::Kernel(pi) => {
            let mu0 = SimplexPoint::from_raw(runs[0].measures[0].clone());
            let flow = flow_trajectory(model, &mu0, pi, steps)?;
            Some(running_max_gaps(&runs, &flow).0)
        }
        SimPolicy::Lifted { .. } => None,
    };
    Ok(SimReport {
        population: config.population,
        replications: config.replications,
        seed: config.seed,
        steps,
        mean_cost,
        std_error,
        mean_measure,
        chaos_gap,
        truncation_error,
    })
}

/// Per-step means of `max_{s≤t} ‖μ^N_s − μ_s‖₁` and of `‖μ^N_t − μ_t‖₁`,
/// with standard errors.
fn running_max_gaps(
    runs: &[Rollout],
    flow: &[SimplexPoint],
) -> (Vec<f64>, Vec<Option<f64>>, Vec<f64>, Vec<Option<f64>>) {
    let steps = flow.len();
    let mut max_by_t = vec![Vec::with_capacity(runs.len()); steps];
    let mut gap_by_t = vec![Vec::with_capacity(runs.len()); steps];
    for run in runs {
        let mut running = 0.0f64;
        for t in 0..steps {
            let d = l1_distance(&run.measures[t], flow[t].probs());
            running = running.max(d);
            max_by_t[t].push(running);
            gap_by_t[t].push(d);
        }
    }
    let (max_mean, max_se): (Vec<f64>, Vec<Option<f64>>) =
        max_by_t.iter().map(|v| mean_and_se(v)).unzip();
    let (gap_mean, gap_se): (Vec<f64>, Vec<Option<f64>>) =
        gap_by_t.iter().map(|v| mean_and_se(v)).unzip();
    (max_mean, max_se, gap_mean, gap_se)
}

/// Propagation-of-chaos estimate for one population size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChaosRow {
    pub population: u32,
    /// `E[max_{t≤T} ‖μ^N_t/N − μ_t‖₁]`.
    pub max_gap: f64,
    pub max_gap_se: Option<f64>,
    /// `E‖μ^N_t/N − μ_t‖₁` for each `t = 0..=T`.
    pub gap_by_step: Vec<f64>,
    pub gap_by_step_se: Vec<Option<f64>>,
}

/// Monte Carlo distance between the `N`-agent empirical measure and the
/// mean-field flow from `initial_dist`, both under the symmetric kernel `pi`.
pub fn chaos_gap(
    model: &EnvironmentModel,
    populations: &[u32],
    pi: &PolicyKernel,
    steps: usize,
    replications: usize,
    seed: u64,
) -> Result<Vec<ChaosRow>> {
    if replications == 0 {
        return Err(Error::parameter("replications", "must be at least 1"));
    }
    check_policy(model, 1, SimPolicy::Kernel(pi))?;
    let flow = flow_trajectory(model, model.initial_dist(), pi, steps)?;
    populations
        .iter()
        .map(|&n| {
            let initial = initial_states(model.initial_dist(), n)?;
            let base = splitmix64(seed ^ splitmix64(0x6368_616f_7300_0000 | n as u64));
            let runs: Vec<Rollout> = (0..replications)
                .into_par_iter()
                .map(|r| {
                    let mut rng = replication_rng(base, r as u64);
                    rollout(model, SimPolicy::Kernel(pi), &initial, steps, 1.0, &mut rng)
                })
                .collect::<Result<_>>()?;
            let (max_mean, max_se, gap_mean, gap_se) = running_max_gaps(&runs, &flow);
            Ok(ChaosRow {
                population: n,
                max_gap: max_mean[steps],
                max_gap_se: max_se[steps],
                gap_by_step: gap_mean,
                gap_by_step_se: gap_se,
            })
        })
        .collect()
}
