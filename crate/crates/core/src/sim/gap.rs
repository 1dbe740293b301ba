//! The optimality gap of the mean-field policy in the `N`-agent team.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lifted::{evaluate_symmetric_policy_exact, value_iteration_discounted, value_iteration_finite, LiftedMdp};
use crate::measure::{EmpiricalStateMeasure, DEFAULT_CAP};
use crate::mkv::{build_mkv_mdp, extract_mf_policy, solve_mkv};
use crate::model::EnvironmentModel;
use crate::policy::{Horizon, PolicyKernel};

/// Roundoff allowance below zero for an exactly computed gap.
const NEGATIVE_GAP_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub population: u32,
    /// Lifted optimum at the rounded initial measure.
    pub j_opt: Option<f64>,
    /// Exact value of the mean-field policy deployed in the `N`-agent team.
    pub j_mf: Option<f64>,
    pub eps: Option<f64>,
    /// Why the row is empty, if it is.
    pub note: Option<String>,
}

/// `ε_N = J^N(π^MF) − J^{N,*}` for each `N`, evaluated at the largest-remainder
/// rounding of the initial distribution.
pub fn epsilon_gap(
    model: &EnvironmentModel,
    populations: &[u32],
    horizon: Horizon,
    mesh: u32,
    mesh_u: u32,
) -> Result<Vec<GapRow>> {
    epsilon_gap_capped(model, populations, horizon, mesh, mesh_u, DEFAULT_CAP)
}

pub fn epsilon_gap_capped(
    model: &EnvironmentModel,
    populations: &[u32],
    horizon: Horizon,
    mesh: u32,
    mesh_u: u32,
    cap: u64,
) -> Result<Vec<GapRow>> {
    horizon.validate()?;
    let mkv = build_mkv_mdp(model, mesh, mesh_u)?;
    let solution = solve_mkv(&mkv, horizon)?;
    let pi = extract_mf_policy(&mkv, &solution);
    populations
        .iter()
        .map(|&n| gap_row(model, n, horizon, &pi, cap))
        .collect()
}

fn gap_row(model: &EnvironmentModel, n: u32, horizon: Horizon, pi: &PolicyKernel, cap: u64) -> Result<GapRow> {
    if n == 0 {
        return Err(Error::parameter("n", "population must be positive"));
    }
    let mdp = match LiftedMdp::build_capped(model, n, cap) {
        Ok(m) => m,
        Err(e @ Error::CapExceeded { .. }) => {
            return Ok(GapRow {
                population: n,
                j_opt: None,
                j_mf: None,
                eps: None,
                note: Some(format!("skipped: {e}")),
            })
        }
        Err(e) => return Err(e),
    };
    let start = EmpiricalStateMeasure::round_from(model.initial_dist(), n)?;
    let ordinal = mdp
        .ordinal_of(start.counts())
        .expect("rounded measure is enumerated");
    let (optimal, slack) = match horizon {
        Horizon::Finite { steps, discount } => (value_iteration_finite(&mdp, steps, discount)?, 0.0),
        Horizon::Discounted {
            discount,
            tolerance,
        } => (value_iteration_discounted(&mdp, discount, tolerance)?, tolerance),
    };
    let j_opt = optimal.initial_values()[ordinal];
    let j_mf = evaluate_symmetric_policy_exact(model, n, pi, horizon)?[ordinal];
    let eps = j_mf - j_opt;
    if eps < -(NEGATIVE_GAP_TOL + slack) {
        return Err(Error::Invariant(format!(
            "mean-field policy beats the lifted optimum at N = {n} by {:.3e}",
            -eps
        )));
    }
    Ok(GapRow {
        population: n,
        j_opt: Some(j_opt),
        j_mf: Some(j_mf),
        eps: Some(eps),
        note: None,
    })
}
