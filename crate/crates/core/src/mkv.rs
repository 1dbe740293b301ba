//! The representative-agent (McKean-Vlasov) control problem.
//!
//! In the infinite-population limit the state distribution moves
//! deterministically, `μ' = Σ_{x,u} T(·|x,u,μ) θ(x,u)`. Restricting `μ` to a
//! simplex grid of mesh `1/m` and the per-state action distributions to a
//! grid of mesh `1/m_u` gives a finite MDP that is solved by value iteration.
//! After each step the exact successor is split over the vertices of its grid
//! cell with barycentric weights, so the quantized chain is mean-preserving
//! and values that are affine in `μ` are represented without error.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lifted::{argmin, stage_label, sup_distance, Stage, ValueTable};
use crate::measure::{GriddedPolicySet, SimplexGrid, DEFAULT_CAP};
use crate::model::{EnvironmentModel, SimplexPoint};
use crate::policy::{stopping_threshold, Horizon, PolicyKernel};

/// One step of the mean-field flow for a joint measure `theta` (row-major
/// over `X × U`) whose state marginal is `mu`.
pub fn mean_field_flow(model: &EnvironmentModel, mu: &SimplexPoint, theta: &[f64]) -> Result<SimplexPoint> {
    model.check_marginal(theta, mu)?;
    Ok(SimplexPoint::from_raw(flow_unchecked(model, mu.probs(), theta)))
}

pub(crate) fn flow_unchecked(model: &EnvironmentModel, mu: &[f64], theta: &[f64]) -> Vec<f64> {
    let nx = model.num_states();
    let nu = model.num_actions();
    let mut next = vec![0.0; nx];
    let mut row = vec![0.0; nx];
    for (cell, &w) in theta.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        model.kernel_into(cell / nu, cell % nu, mu, &mut row);
        for (n, r) in next.iter_mut().zip(&row) {
            *n += w * r;
        }
    }
    next
}

/// `θ(x,u) = π(u|x) μ(x)` for a row-major kernel table.
pub(crate) fn joint_from_kernel(mu: &[f64], table: &[f64], num_actions: usize) -> Vec<f64> {
    table
        .iter()
        .enumerate()
        .map(|(cell, p)| p * mu[cell / num_actions])
        .collect()
}

/// The quantized finite MDP: grid points as states, gridded kernels as actions.
#[derive(Clone, Debug)]
pub struct MkvMdp {
    model: EnvironmentModel,
    state_grid: SimplexGrid,
    policy_grid: GriddedPolicySet,
    /// `targets[offsets[i]..offsets[i + 1]]` is the successor split for pair `i`.
    offsets: Vec<u32>,
    targets: Vec<(u32, f64)>,
    costs: Vec<f64>,
}

pub fn build_mkv_mdp(model: &EnvironmentModel, mesh: u32, mesh_u: u32) -> Result<MkvMdp> {
    let state_grid = SimplexGrid::new(mesh, model.num_states())?;
    let policy_grid = GriddedPolicySet::new(mesh_u, model.num_states(), model.num_actions())?;
    let pairs = state_grid.len() as u128 * policy_grid.len() as u128;
    if pairs > DEFAULT_CAP as u128 {
        return Err(Error::CapExceeded {
            what: "quantized state-policy pairs",
            size: pairs,
            cap: DEFAULT_CAP,
        });
    }
    let nu = model.num_actions();
    let kernels: Vec<Vec<f64>> = (0..policy_grid.len()).map(|k| policy_grid.kernel(k)).collect();
    let per_point: Vec<(Vec<Vec<(u32, f64)>>, Vec<f64>)> = (0..state_grid.len())
        .into_par_iter()
        .map(|g| {
            let mu = state_grid.point(g);
            let mut targets = Vec::with_capacity(kernels.len());
            let mut costs = Vec::with_capacity(kernels.len());
            for table in &kernels {
                let theta = joint_from_kernel(mu.probs(), table, nu);
                let next = flow_unchecked(model, mu.probs(), &theta);
                targets.push(
                    state_grid
                        .barycentric(&next)
                        .into_iter()
                        .map(|(g, w)| (g as u32, w))
                        .collect(),
                );
                costs.push(model.running_cost_unchecked(&theta, mu.probs()));
            }
            (targets, costs)
        })
        .collect();
    let mut offsets = vec![0u32];
    let mut targets = Vec::new();
    let mut all_costs = Vec::with_capacity(pairs as usize);
    for (split, costs) in per_point {
        for row in split {
            targets.extend(row);
            offsets.push(targets.len() as u32);
        }
        all_costs.extend(costs);
    }
    Ok(MkvMdp {
        model: model.clone(),
        state_grid,
        policy_grid,
        offsets,
        targets,
        costs: all_costs,
    })
}

impl MkvMdp {
    pub fn model(&self) -> &EnvironmentModel {
        &self.model
    }

    pub fn state_grid(&self) -> &SimplexGrid {
        &self.state_grid
    }

    pub fn policy_grid(&self) -> &GriddedPolicySet {
        &self.policy_grid
    }

    /// Grid ordinals and weights reached from grid point `g` under gridded kernel `k`.
    pub fn target(&self, g: usize, k: usize) -> &[(u32, f64)] {
        let i = g * self.policy_grid.len() + k;
        &self.targets[self.offsets[i] as usize..self.offsets[i + 1] as usize]
    }

    pub fn cost(&self, g: usize, k: usize) -> f64 {
        self.costs[g * self.policy_grid.len() + k]
    }

    /// `(min_k {ĉ + β E J(target)}, argmin)` for every grid point.
    pub fn bellman(&self, discount: f64, next: &[f64]) -> (Vec<f64>, Vec<usize>) {
        let p = self.policy_grid.len();
        (0..self.state_grid.len())
            .into_par_iter()
            .map(|g| {
                argmin((0..p).map(|k| {
                    self.cost(g, k)
                        + discount
                            * self
                                .target(g, k)
                                .iter()
                                .map(|&(j, w)| w * next[j as usize])
                                .sum::<f64>()
                }))
            })
            .unzip()
    }
}

#[derive(Clone, Debug)]
pub struct MkvSolution {
    /// Stage tables `0..T` or one stationary table, indexed by grid ordinal.
    pub values: Vec<ValueTable>,
    /// Optimal gridded-kernel ordinal per grid point, one vector per table.
    pub policy: Vec<Vec<usize>>,
    pub iterations: usize,
}

impl MkvSolution {
    pub fn initial_values(&self) -> &[f64] {
        &self.values[0].values
    }

    /// Initial value at the projection of `mu`.
    pub fn value_at(&self, mkv: &MkvMdp, mu: &SimplexPoint) -> f64 {
        self.initial_values()[mkv.state_grid.project(mu.probs())]
    }

    /// `stage,grid_ordinal,coordinates,value,policy_ordinal`
    pub fn write_values_csv<W: Write>(&self, mkv: &MkvMdp, mut out: W) -> std::io::Result<()> {
        writeln!(out, "stage,grid_ordinal,coordinates,value,policy_ordinal")?;
        for (table, choice) in self.values.iter().zip(&self.policy) {
            for (g, v) in table.values.iter().enumerate() {
                let coords: Vec<String> = mkv
                    .state_grid
                    .point(g)
                    .probs()
                    .iter()
                    .map(|c| format!("{c:.16e}"))
                    .collect();
                writeln!(
                    out,
                    "{},{g},{},{v:.16e},{}",
                    stage_label(table.stage),
                    coords.join(";"),
                    choice[g]
                )?;
            }
        }
        Ok(())
    }
}

pub fn solve_mkv_finite(mkv: &MkvMdp, steps: usize, discount: f64) -> Result<MkvSolution> {
    Horizon::Finite { steps, discount }.validate()?;
    let mut next = vec![0.0; mkv.state_grid.len()];
    let mut values = Vec::with_capacity(steps);
    let mut policy = Vec::with_capacity(steps);
    for t in (0..steps).rev() {
        let (v, k) = mkv.bellman(discount, &next);
        values.push(ValueTable {
            stage: Stage::At(t),
            values: v.clone(),
        });
        policy.push(k);
        next = v;
    }
    values.reverse();
    policy.reverse();
    Ok(MkvSolution {
        values,
        policy,
        iterations: steps,
    })
}

pub fn solve_mkv_discounted(mkv: &MkvMdp, discount: f64, tolerance: f64) -> Result<MkvSolution> {
    Horizon::Discounted {
        discount,
        tolerance,
    }
    .validate()?;
    let threshold = stopping_threshold(discount, tolerance);
    let mut current = vec![0.0; mkv.state_grid.len()];
    let mut iterations = 0;
    loop {
        let (next, greedy) = mkv.bellman(discount, &current);
        iterations += 1;
        let delta = sup_distance(&next, &current);
        current = next;
        if delta <= threshold {
            return Ok(MkvSolution {
                values: vec![ValueTable {
                    stage: Stage::Stationary,
                    values: current,
                }],
                policy: vec![greedy],
                iterations,
            });
        }
    }
}

pub fn solve_mkv(mkv: &MkvMdp, horizon: Horizon) -> Result<MkvSolution> {
    match horizon {
        Horizon::Finite { steps, discount } => solve_mkv_finite(mkv, steps, discount),
        Horizon::Discounted {
            discount,
            tolerance,
        } => solve_mkv_discounted(mkv, discount, tolerance),
    }
}

/// The symmetric mean-field-sharing policy read off the optimal gridded kernels.
pub fn extract_mf_policy(mkv: &MkvMdp, solution: &MkvSolution) -> PolicyKernel {
    let tables = solution
        .policy
        .iter()
        .map(|choice| choice.iter().flat_map(|&k| mkv.policy_grid.kernel(k)).collect())
        .collect();
    PolicyKernel::from_tables(mkv.state_grid.clone(), mkv.model.num_actions(), tables)
}

/// Deterministic flow `μ_0, …, μ_T` under `policy`. The policy is looked up
/// at the grid projection of `μ_t` but the state itself is never projected.
pub fn flow_trajectory(
    model: &EnvironmentModel,
    mu0: &SimplexPoint,
    policy: &PolicyKernel,
    steps: usize,
) -> Result<Vec<SimplexPoint>> {
    if policy.num_states() != model.num_states() || policy.num_actions() != model.num_actions() {
        return Err(Error::parameter("policy", "kernel dimensions differ from the model"));
    }
    if mu0.len() != model.num_states() {
        return Err(Error::parameter("mu0", "length differs from num_states"));
    }
    let mut out = Vec::with_capacity(steps + 1);
    out.push(mu0.clone());
    for t in 0..steps {
        let mu = out[t].probs();
        let theta = joint_from_kernel(mu, policy.table_for(t, mu), model.num_actions());
        let next = flow_unchecked(model, mu, &theta);
        out.push(SimplexPoint::from_raw(next));
    }
    Ok(out)
}
