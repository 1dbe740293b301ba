//! The lifted MDP on empirical measures of an `N`-agent team.
//!
//! States are empirical state measures `μ^N`, actions are joint state-action
//! measures `θ^N ∈ U(μ^N)`, the running cost is `Σ c(x,u,μ) θ(x,u)` and the
//! transition law `η^N(·|μ,θ)` is the law of the next empirical measure when
//! the agents in each `(x,u)` cell move independently under `T(·|x,u,μ)`.

mod exchangeable;
pub mod multinomial;
mod symmetric;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use exchangeable::{exact_action_distribution, realize_exchangeable_action, realize_with_rng};
pub use multinomial::{multinomial_count_distribution, CountDistribution};
pub use symmetric::{
    evaluate_symmetric_policy_exact, solve_symmetric_restricted, symmetric_step, SymmetricSolution,
};

use crate::error::{Error, Result};
use crate::measure::{
    canonical_assignment, composition_rank, enumerate_empirical_capped,
    enumerate_joint_actions_capped, joint_action_count, EmpiricalJointMeasure,
    EmpiricalStateMeasure, DEFAULT_CAP,
};
use crate::model::EnvironmentModel;
use crate::policy::stopping_threshold;

/// Values closer than this are a tie; the smaller ordinal wins.
pub(crate) const ARGMIN_TIE_TOL: f64 = 1e-12;

/// Sparse probability vector over measure ordinals.
pub type SparseRow = Vec<(u32, f64)>;

/// Law of the next empirical measure given `μ^N` and an admissible `θ^N`.
pub fn eta_kernel(
    model: &EnvironmentModel,
    mu: &EmpiricalStateMeasure,
    theta: &EmpiricalJointMeasure,
) -> Result<CountDistribution> {
    if theta.num_states() != model.num_states()
        || theta.num_actions() != model.num_actions()
        || mu.num_states() != model.num_states()
    {
        return Err(Error::Inadmissible("dimensions differ from the model".into()));
    }
    if theta.state_marginal() != mu.counts() {
        return Err(Error::Inadmissible(format!(
            "theta {theta} has state marginal {:?}, expected {mu}",
            theta.state_marginal()
        )));
    }
    Ok(eta_unchecked(model, mu.to_simplex().probs(), theta))
}

fn eta_unchecked(model: &EnvironmentModel, mu: &[f64], theta: &EmpiricalJointMeasure) -> CountDistribution {
    let nx = model.num_states();
    let nu = model.num_actions();
    let laws: Vec<Vec<f64>> = (0..nx * nu)
        .map(|cell| {
            let mut law = vec![0.0; nx];
            if theta.counts()[cell] > 0 {
                model.kernel_into(cell / nu, cell % nu, mu, &mut law);
            }
            law
        })
        .collect();
    multinomial::convolve_cells(
        nx,
        laws.iter()
            .zip(theta.counts())
            .map(|(law, &m)| (law.as_slice(), m)),
    )
    .expect("support size is bounded by the state space")
}

/// `η^N` computed agent by agent along a given ordering of the canonical
/// assignment. Used to check that the law does not depend on the ordering.
pub fn eta_by_agents(
    model: &EnvironmentModel,
    mu: &EmpiricalStateMeasure,
    agents: &[(usize, usize)],
) -> Result<CountDistribution> {
    let nx = model.num_states();
    let mu_p = mu.to_simplex();
    let laws: Vec<Vec<f64>> = agents
        .iter()
        .map(|&(x, u)| {
            let mut law = vec![0.0; nx];
            model.kernel_into(x, u, mu_p.probs(), &mut law);
            law
        })
        .collect();
    multinomial::convolve_cells(nx, laws.iter().map(|l| (l.as_slice(), 1)))
}

/// The lifted MDP for a fixed population size, with all transition rows built.
#[derive(Clone, Debug)]
pub struct LiftedMdp {
    model: EnvironmentModel,
    population: u32,
    states: Vec<EmpiricalStateMeasure>,
    actions: Vec<Vec<EmpiricalJointMeasure>>,
    costs: Vec<Vec<f64>>,
    transitions: Vec<Vec<SparseRow>>,
}

impl LiftedMdp {
    pub fn build(model: &EnvironmentModel, population: u32) -> Result<Self> {
        Self::build_capped(model, population, DEFAULT_CAP)
    }

    /// Builds the MDP, refusing if the measure space or the total number of
    /// state-action pairs exceeds `cap`.
    pub fn build_capped(model: &EnvironmentModel, population: u32, cap: u64) -> Result<Self> {
        let nu = model.num_actions();
        let states = enumerate_empirical_capped(population, model.num_states(), cap)?;
        let pairs = states.iter().try_fold(0u128, |acc, mu| {
            joint_action_count(mu, nu).and_then(|n| acc.checked_add(n))
        });
        match pairs {
            Some(p) if p <= cap as u128 => {}
            p => {
                return Err(Error::CapExceeded {
                    what: "lifted state-action pairs",
                    size: p.unwrap_or(u128::MAX),
                    cap,
                })
            }
        }
        let built: Vec<(Vec<EmpiricalJointMeasure>, Vec<f64>, Vec<SparseRow>)> = states
            .par_iter()
            .map(|mu| {
                let acts = enumerate_joint_actions_capped(mu, nu, cap)?;
                let mu_p = mu.to_simplex();
                let cost_table = model.cost_table(mu_p.probs());
                let costs = acts
                    .iter()
                    .map(|theta| {
                        theta
                            .weights()
                            .iter()
                            .zip(&cost_table)
                            .map(|(w, c)| w * c)
                            .sum()
                    })
                    .collect();
                let rows = acts
                    .iter()
                    .map(|theta| eta_unchecked(model, mu_p.probs(), theta).sparse())
                    .collect();
                Ok((acts, costs, rows))
            })
            .collect::<Result<_>>()?;
        let mut actions = Vec::with_capacity(built.len());
        let mut costs = Vec::with_capacity(built.len());
        let mut transitions = Vec::with_capacity(built.len());
        for (a, c, t) in built {
            actions.push(a);
            costs.push(c);
            transitions.push(t);
        }
        Ok(LiftedMdp {
            model: model.clone(),
            population,
            states,
            actions,
            costs,
            transitions,
        })
    }

    pub fn model(&self) -> &EnvironmentModel {
        &self.model
    }

    pub fn population(&self) -> u32 {
        self.population
    }

    pub fn num_measures(&self) -> usize {
        self.states.len()
    }

    pub fn measure(&self, ordinal: usize) -> &EmpiricalStateMeasure {
        &self.states[ordinal]
    }

    pub fn measures(&self) -> &[EmpiricalStateMeasure] {
        &self.states
    }

    pub fn ordinal_of(&self, counts: &[u32]) -> Option<usize> {
        (counts.len() == self.model.num_states() && counts.iter().sum::<u32>() == self.population)
            .then(|| composition_rank(counts))
    }

    pub fn actions(&self, ordinal: usize) -> &[EmpiricalJointMeasure] {
        &self.actions[ordinal]
    }

    /// Lifted running cost of action `a` at measure `ordinal`.
    pub fn cost(&self, ordinal: usize, a: usize) -> f64 {
        self.costs[ordinal][a]
    }

    pub fn transition(&self, ordinal: usize, a: usize) -> &SparseRow {
        &self.transitions[ordinal][a]
    }

    /// Every `(measure, action)` transition row.
    pub fn rows(&self) -> impl Iterator<Item = &SparseRow> {
        self.transitions.iter().flatten()
    }

    fn q_value(&self, i: usize, a: usize, discount: f64, next: &[f64]) -> f64 {
        let future: f64 = self.transitions[i][a]
            .iter()
            .map(|&(j, p)| p * next[j as usize])
            .sum();
        self.costs[i][a] + discount * future
    }

    /// One Bellman backup: `(min_θ {c̃ + β Σ J η}, argmin)` for every measure.
    pub fn bellman(&self, discount: f64, next: &[f64]) -> (Vec<f64>, Vec<usize>) {
        (0..self.states.len())
            .into_par_iter()
            .map(|i| {
                argmin((0..self.actions[i].len()).map(|a| self.q_value(i, a, discount, next)))
            })
            .unzip()
    }
}

/// Minimum and its index; values within [`ARGMIN_TIE_TOL`] of an earlier one lose.
pub(crate) fn argmin(values: impl Iterator<Item = f64>) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for (a, q) in values.enumerate() {
        if q < best.0 - ARGMIN_TIE_TOL {
            best = (q, a);
        }
    }
    best
}

/// Whether a value table belongs to a stage of a finite horizon or is stationary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    At(usize),
    Stationary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueTable {
    pub stage: Stage,
    pub values: Vec<f64>,
}

/// Deterministic Markov policy on measures: action ordinal within `U(μ)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MeasurePolicy {
    stages: Vec<Vec<usize>>,
}

impl MeasurePolicy {
    pub fn new(stages: Vec<Vec<usize>>) -> Self {
        MeasurePolicy { stages }
    }

    pub fn is_stationary(&self) -> bool {
        self.stages.len() == 1
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    /// Action ordinal at stage `t`; stationary policies ignore `t`.
    pub fn action(&self, t: usize, ordinal: usize) -> usize {
        self.stages[t.min(self.stages.len() - 1)][ordinal]
    }

    pub fn stage(&self, t: usize) -> &[usize] {
        &self.stages[t.min(self.stages.len() - 1)]
    }
}

#[derive(Clone, Debug)]
pub struct LiftedSolution {
    /// Stage tables `0..T` for finite horizons, one stationary table otherwise.
    pub values: Vec<ValueTable>,
    pub policy: MeasurePolicy,
    /// Number of Bellman sweeps performed.
    pub iterations: usize,
}

impl LiftedSolution {
    /// Value from the initial stage.
    pub fn initial_values(&self) -> &[f64] {
        &self.values[0].values
    }

    /// `stage,ordinal,counts,value,action_ordinal`
    pub fn write_values_csv<W: Write>(&self, mdp: &LiftedMdp, mut out: W) -> std::io::Result<()> {
        writeln!(out, "stage,ordinal,counts,value,action_ordinal")?;
        for (t, table) in self.values.iter().enumerate() {
            for (i, v) in table.values.iter().enumerate() {
                writeln!(
                    out,
                    "{},{i},{},{v:.16e},{}",
                    stage_label(table.stage),
                    mdp.measure(i),
                    self.policy.action(t, i)
                )?;
            }
        }
        Ok(())
    }

    /// `stage,ordinal,counts,action_ordinal,theta` with `theta` rows separated by `|`.
    pub fn write_policy_csv<W: Write>(&self, mdp: &LiftedMdp, mut out: W) -> std::io::Result<()> {
        writeln!(out, "stage,ordinal,counts,action_ordinal,theta")?;
        for (t, table) in self.values.iter().enumerate() {
            for i in 0..mdp.num_measures() {
                let a = self.policy.action(t, i);
                writeln!(
                    out,
                    "{},{i},{},{a},{}",
                    stage_label(table.stage),
                    mdp.measure(i),
                    mdp.actions(i)[a]
                )?;
            }
        }
        Ok(())
    }
}

pub(crate) fn stage_label(stage: Stage) -> String {
    match stage {
        Stage::At(t) => t.to_string(),
        Stage::Stationary => "stationary".into(),
    }
}

/// Backward induction over `steps` stages.
pub fn value_iteration_finite(mdp: &LiftedMdp, steps: usize, discount: f64) -> Result<LiftedSolution> {
    crate::policy::Horizon::Finite { steps, discount }.validate()?;
    let mut next = vec![0.0; mdp.num_measures()];
    let mut values = Vec::with_capacity(steps);
    let mut stages = Vec::with_capacity(steps);
    for t in (0..steps).rev() {
        let (v, g) = mdp.bellman(discount, &next);
        values.push(ValueTable {
            stage: Stage::At(t),
            values: v.clone(),
        });
        stages.push(g);
        next = v;
    }
    values.reverse();
    stages.reverse();
    Ok(LiftedSolution {
        values,
        policy: MeasurePolicy::new(stages),
        iterations: steps,
    })
}

/// Successive approximation from `J ≡ 0`, stopping once the sup-norm update is
/// at most `tolerance (1-β) / (2β)`.
pub fn value_iteration_discounted(mdp: &LiftedMdp, discount: f64, tolerance: f64) -> Result<LiftedSolution> {
    crate::policy::Horizon::Discounted {
        discount,
        tolerance,
    }
    .validate()?;
    let threshold = stopping_threshold(discount, tolerance);
    let mut current = vec![0.0; mdp.num_measures()];
    let mut iterations = 0;
    loop {
        let (next, greedy) = mdp.bellman(discount, &current);
        iterations += 1;
        let delta = sup_distance(&next, &current);
        current = next;
        if delta <= threshold {
            return Ok(LiftedSolution {
                values: vec![ValueTable {
                    stage: Stage::Stationary,
                    values: current,
                }],
                policy: MeasurePolicy::new(vec![greedy]),
                iterations,
            });
        }
    }
}

pub(crate) fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `η^N` for an agent ordering given as a permutation of the canonical assignment.
pub fn eta_permuted(
    model: &EnvironmentModel,
    mu: &EmpiricalStateMeasure,
    theta: &EmpiricalJointMeasure,
    permutation: &[usize],
) -> Result<CountDistribution> {
    let canonical = canonical_assignment(theta);
    if permutation.len() != canonical.len() {
        return Err(Error::parameter("permutation", "length differs from the population"));
    }
    let agents: Vec<(usize, usize)> = permutation.iter().map(|&i| canonical[i]).collect();
    eta_by_agents(model, mu, &agents)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;
    use crate::model::ModelConfig;

    fn counts(mdp: &LiftedMdp, row: &SparseRow) -> Vec<(Vec<u32>, f64)> {
        row.iter()
            .map(|&(j, p)| (mdp.measure(j as usize).counts().to_vec(), p))
            .collect()
    }

    #[test]
    fn counterexample_eta_is_deterministic() {
        let m = bundled::counterexample();
        let mu = EmpiricalStateMeasure::new(vec![0, 2]).unwrap();
        let both_one = EmpiricalJointMeasure::new(vec![0, 0, 0, 2], 2).unwrap();
        let d = eta_kernel(&m, &mu, &both_one).unwrap();
        assert_eq!(d.support(), vec![(vec![0, 2], 1.0)]);
        let split = EmpiricalJointMeasure::new(vec![0, 0, 1, 1], 2).unwrap();
        let d = eta_kernel(&m, &mu, &split).unwrap();
        assert_eq!(d.support(), vec![(vec![1, 1], 1.0)]);
    }

    #[test]
    fn coin_flip_eta() {
        let cfg = ModelConfig {
            name: "coin".into(),
            num_states: 2,
            num_actions: 2,
            kernel_base: vec![vec![vec![0.5, 0.5]; 2]; 2],
            cost_const: vec![vec![0.0; 2]; 2],
            discount: 0.5,
            initial_dist: vec![0.5, 0.5],
            ..Default::default()
        };
        let m = EnvironmentModel::from_config(cfg).unwrap();
        let mu = EmpiricalStateMeasure::new(vec![1, 1]).unwrap();
        let theta = EmpiricalJointMeasure::new(vec![1, 0, 0, 1], 2).unwrap();
        // Four equally likely joint outcomes: (0,0), (0,1), (1,0), (1,1).
        let d = eta_kernel(&m, &mu, &theta).unwrap();
        assert_eq!(d.probs(), [0.25, 0.5, 0.25]);
    }

    #[test]
    fn inadmissible_theta_is_rejected() {
        let m = bundled::counterexample();
        let mu = EmpiricalStateMeasure::new(vec![0, 2]).unwrap();
        let theta = EmpiricalJointMeasure::new(vec![1, 0, 1, 0], 2).unwrap();
        assert!(matches!(eta_kernel(&m, &mu, &theta), Err(Error::Inadmissible(_))));
    }

    #[test]
    fn counterexample_lifted_value() {
        let m = bundled::counterexample();
        let mdp = LiftedMdp::build(&m, 2).unwrap();
        let sol = value_iteration_finite(&mdp, 2, 1.0).unwrap();
        let start = mdp.ordinal_of(&[0, 2]).unwrap();
        assert!((sol.initial_values()[start] - 0.5).abs() < 1e-12);
        let theta = &mdp.actions(start)[sol.policy.action(0, start)];
        assert_eq!(theta.counts(), [0, 0, 1, 1]);
        assert_eq!(counts(&mdp, mdp.transition(start, sol.policy.action(0, start))), vec![(vec![1, 1], 1.0)]);
    }

    #[test]
    fn single_stage_is_myopic() {
        let m = bundled::weakly_coupled();
        let mdp = LiftedMdp::build(&m, 3).unwrap();
        let sol = value_iteration_finite(&mdp, 1, 0.9).unwrap();
        for i in 0..mdp.num_measures() {
            let best = (0..mdp.actions(i).len())
                .map(|a| mdp.cost(i, a))
                .fold(f64::INFINITY, f64::min);
            assert!((sol.initial_values()[i] - best).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_cost_geometric_series() {
        let cfg = ModelConfig {
            name: "unit".into(),
            num_states: 2,
            num_actions: 2,
            kernel_base: vec![vec![vec![0.3, 0.7]; 2]; 2],
            cost_const: vec![vec![1.0; 2]; 2],
            discount: 0.5,
            initial_dist: vec![0.5, 0.5],
            ..Default::default()
        };
        let m = EnvironmentModel::from_config(cfg).unwrap();
        let mdp = LiftedMdp::build(&m, 3).unwrap();
        let sol = value_iteration_discounted(&mdp, 0.5, 1e-9).unwrap();
        for v in sol.initial_values() {
            assert!((v - 2.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn zero_cost_is_zero() {
        let mut cfg = bundled::decoupled().to_config();
        cfg.cost_const = vec![vec![0.0; 2]; 2];
        let m = EnvironmentModel::from_config(cfg).unwrap();
        let mdp = LiftedMdp::build(&m, 4).unwrap();
        let sol = value_iteration_discounted(&mdp, 0.9, 1e-8).unwrap();
        assert!(sol.initial_values().iter().all(|&v| v == 0.0));
        assert_eq!(sol.iterations, 1);
    }

    #[test]
    fn invalid_parameters() {
        let mdp = LiftedMdp::build(&bundled::decoupled(), 2).unwrap();
        assert!(value_iteration_finite(&mdp, 0, 0.9).is_err());
        assert!(value_iteration_discounted(&mdp, 1.0, 1e-6).is_err());
        assert!(matches!(
            LiftedMdp::build_capped(&bundled::decoupled(), 40, 100),
            Err(Error::CapExceeded { .. })
        ));
    }
}
