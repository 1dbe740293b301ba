//! The `μ^N` chain under symmetric independent mean-field-sharing policies.
//!
//! When every agent in state `x` draws its action from the same `π(·|x)`, the
//! agents in state `x` move independently under the mixed law
//! `q_x = Σ_u π(u|x) T(·|x,u,μ)`, so the next measure is again a multinomial
//! convolution and `μ^N` alone is a controlled Markov chain.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::multinomial::{convolve_cells, CountDistribution};
use super::{argmin, sup_distance, Stage, ValueTable};
use crate::error::{Error, Result};
use crate::measure::{enumerate_empirical_capped, EmpiricalStateMeasure, GriddedPolicySet, DEFAULT_CAP};
use crate::model::EnvironmentModel;
use crate::policy::{stopping_threshold, Horizon, PolicyKernel};

/// Expected stage cost and next-measure law when the population at `mu`
/// plays the row-major `|X| x |U|` kernel `table`.
pub fn symmetric_step(
    model: &EnvironmentModel,
    mu: &EmpiricalStateMeasure,
    table: &[f64],
) -> (f64, CountDistribution) {
    let nx = model.num_states();
    let nu = model.num_actions();
    let mu_p = mu.to_simplex();
    let mut cost = 0.0;
    let mut laws = vec![vec![0.0; nx]; nx];
    let mut row = vec![0.0; nx];
    for (x, &count) in mu.counts().iter().enumerate() {
        if count == 0 {
            continue;
        }
        let weight = count as f64 / mu.population() as f64;
        for u in 0..nu {
            let p = table[x * nu + u];
            if p == 0.0 {
                continue;
            }
            cost += weight * p * model.cost(x, u, mu_p.probs());
            model.kernel_into(x, u, mu_p.probs(), &mut row);
            for (q, r) in laws[x].iter_mut().zip(&row) {
                *q += p * r;
            }
        }
    }
    let dist = convolve_cells(
        nx,
        laws.iter()
            .zip(mu.counts())
            .map(|(law, &m)| (law.as_slice(), m)),
    )
    .expect("support size is bounded by the state space");
    (cost, dist)
}

/// Optimal values over a policy grid, per initial measure.
#[derive(Clone, Debug)]
pub struct SymmetricSolution {
    pub measures: Vec<EmpiricalStateMeasure>,
    /// Stage tables `0..T` (finite horizon) or one stationary table.
    pub values: Vec<ValueTable>,
    /// Chosen policy ordinal per measure, one vector per table.
    pub choices: Vec<Vec<usize>>,
    pub iterations: usize,
}

impl SymmetricSolution {
    pub fn initial_values(&self) -> &[f64] {
        &self.values[0].values
    }

    pub fn value_at(&self, counts: &[u32]) -> Option<f64> {
        self.measures
            .iter()
            .position(|m| m.counts() == counts)
            .map(|i| self.values[0].values[i])
    }
}

type StepTable = Vec<Vec<(f64, Vec<(u32, f64)>)>>;

fn step_table(model: &EnvironmentModel, measures: &[EmpiricalStateMeasure], policies: &GriddedPolicySet) -> StepTable {
    measures
        .par_iter()
        .map(|mu| {
            (0..policies.len())
                .map(|k| {
                    let (c, d) = symmetric_step(model, mu, &policies.kernel(k));
                    (c, d.sparse())
                })
                .collect()
        })
        .collect()
}

fn backup(steps: &StepTable, discount: f64, next: &[f64]) -> (Vec<f64>, Vec<usize>) {
    steps
        .par_iter()
        .map(|per_policy| {
            argmin(per_policy.iter().map(|(c, row)| {
                c + discount * row.iter().map(|&(j, p)| p * next[j as usize]).sum::<f64>()
            }))
        })
        .unzip()
}

/// Optimizes over symmetric policies drawn from a finite kernel grid.
pub fn solve_symmetric_restricted(
    model: &EnvironmentModel,
    population: u32,
    horizon: Horizon,
    policies: &GriddedPolicySet,
) -> Result<SymmetricSolution> {
    horizon.validate()?;
    if policies.is_empty() {
        return Err(Error::parameter("policies", "policy grid is empty"));
    }
    if policies.num_states() != model.num_states() || policies.num_actions() != model.num_actions() {
        return Err(Error::parameter("policies", "grid dimensions differ from the model"));
    }
    let measures = enumerate_empirical_capped(population, model.num_states(), DEFAULT_CAP)?;
    let steps = step_table(model, &measures, policies);
    let mut values = Vec::new();
    let mut choices = Vec::new();
    let iterations;
    match horizon {
        Horizon::Finite { steps: t_max, discount } => {
            let mut next = vec![0.0; measures.len()];
            for t in (0..t_max).rev() {
                let (v, g) = backup(&steps, discount, &next);
                values.push(ValueTable {
                    stage: Stage::At(t),
                    values: v.clone(),
                });
                choices.push(g);
                next = v;
            }
            values.reverse();
            choices.reverse();
            iterations = t_max;
        }
        Horizon::Discounted {
            discount,
            tolerance,
        } => {
            let threshold = stopping_threshold(discount, tolerance);
            let mut current = vec![0.0; measures.len()];
            let mut count = 0;
            loop {
                let (v, g) = backup(&steps, discount, &current);
                count += 1;
                let delta = sup_distance(&v, &current);
                current = v;
                if delta <= threshold {
                    values.push(ValueTable {
                        stage: Stage::Stationary,
                        values: current,
                    });
                    choices.push(g);
                    break;
                }
            }
            iterations = count;
        }
    }
    Ok(SymmetricSolution {
        measures,
        values,
        choices,
        iterations,
    })
}

/// Exact expected cost of the `N`-agent system when every agent follows `pi`,
/// looked up at the grid projection of `μ^N / N`. Discounted horizons are
/// solved as the linear system `(I - βP) V = c`.
pub fn evaluate_symmetric_policy_exact(
    model: &EnvironmentModel,
    population: u32,
    pi: &PolicyKernel,
    horizon: Horizon,
) -> Result<Vec<f64>> {
    horizon.validate()?;
    if pi.num_states() != model.num_states() || pi.num_actions() != model.num_actions() {
        return Err(Error::parameter("policy", "kernel dimensions differ from the model"));
    }
    let measures = enumerate_empirical_capped(population, model.num_states(), DEFAULT_CAP)?;
    let step_at = |t: usize| -> Vec<(f64, Vec<(u32, f64)>)> {
        measures
            .par_iter()
            .map(|mu| {
                let table = pi.table_for(t, mu.to_simplex().probs());
                let (c, d) = symmetric_step(model, mu, table);
                (c, d.sparse())
            })
            .collect()
    };
    match horizon {
        Horizon::Finite { steps, discount } => {
            let mut next = vec![0.0; measures.len()];
            for t in (0..steps).rev() {
                let step = step_at(t);
                next = step
                    .iter()
                    .map(|(c, row)| c + discount * row.iter().map(|&(j, p)| p * next[j as usize]).sum::<f64>())
                    .collect();
            }
            Ok(next)
        }
        Horizon::Discounted { discount, .. } => {
            if !pi.is_stationary() {
                return Err(Error::parameter(
                    "policy",
                    "an infinite-horizon evaluation needs a stationary kernel",
                ));
            }
            let step = step_at(0);
            let n = measures.len();
            let mut a = DMatrix::<f64>::identity(n, n);
            let mut b = DVector::<f64>::zeros(n);
            for (i, (c, row)) in step.iter().enumerate() {
                b[i] = *c;
                for &(j, p) in row {
                    a[(i, j as usize)] -= discount * p;
                }
            }
            let solution = a
                .lu()
                .solve(&b)
                .ok_or_else(|| Error::parameter("discount", "singular evaluation system"))?;
            Ok(solution.iter().copied().collect())
        }
    }
}
