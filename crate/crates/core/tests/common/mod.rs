#![allow(dead_code)]

use mfteam::measure::SimplexGrid;
use mfteam::{EnvironmentModel, ModelConfig, PolicyKernel, SimplexPoint};
use proptest::prelude::*;

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

/// Entries in [0.1, 1], normalized: every probability is at least 0.1 / nx.
fn prob_row(nx: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.1f64..1.0, nx).prop_map(normalize)
}

/// A zero-sum perturbation with entries of magnitude at most `scale`.
fn zero_sum(nx: usize, scale: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, nx).prop_map(move |v| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.into_iter().map(|x| (x - mean) * scale / 2.0).collect()
    })
}

/// Random coupled models with `nx, nu` in `2..=3`. Kernel entries stay above
/// 0.01 at every vertex and costs stay above 0.5.
pub fn arb_model() -> impl Strategy<Value = EnvironmentModel> {
    (2usize..=3, 2usize..=3).prop_flat_map(|(nx, nu)| arb_model_sized(nx, nu))
}

pub fn arb_model_sized(nx: usize, nu: usize) -> impl Strategy<Value = EnvironmentModel> {
    let scale = 0.1 / nx as f64 - 0.01;
    (
        prop::collection::vec(prop::collection::vec(prob_row(nx), nu), nx),
        prop::collection::vec(prop::collection::vec(prop::collection::vec(zero_sum(nx, scale), nx), nu), nx),
        prop::collection::vec(prop::collection::vec(1.0f64..2.0, nu), nx),
        prop::collection::vec(prop::collection::vec(prop::collection::vec(-0.3f64..0.3, nx), nu), nx),
        prop::collection::vec(
            prop::collection::vec(prop::collection::vec(prop::collection::vec(-0.2f64..0.2, nx), nx), nu),
            nx,
        ),
        0.5f64..0.95,
        prob_row(nx),
    )
        .prop_map(move |(base, coupling, c0, c1, c2, discount, init)| {
            // coupling is generated as [x][u][z][x'] and stored as [x][u][x'][z]
            let kernel_coupling = coupling
                .iter()
                .map(|per_x| {
                    per_x
                        .iter()
                        .map(|per_u| (0..nx).map(|y| (0..nx).map(|z| per_u[z][y]).collect()).collect())
                        .collect()
                })
                .collect();
            EnvironmentModel::from_config(ModelConfig {
                name: "random".into(),
                description: None,
                num_states: nx,
                num_actions: nu,
                kernel_base: base,
                kernel_coupling: Some(kernel_coupling),
                cost_const: c0,
                cost_linear: Some(c1),
                cost_quad: Some(c2),
                discount,
                initial_dist: init,
            })
            .expect("generated model is valid")
        })
}

pub fn arb_simplex(n: usize) -> impl Strategy<Value = SimplexPoint> {
    prop::collection::vec(0.0f64..1.0, n).prop_map(move |v| {
        let s: f64 = v.iter().sum();
        if s == 0.0 {
            SimplexPoint::uniform(n)
        } else {
            SimplexPoint::new(v.into_iter().map(|x| x / s).collect()).unwrap()
        }
    })
}

/// A stationary kernel with independent random rows at every point of a
/// mesh-`mesh` grid.
pub fn arb_kernel(nx: usize, nu: usize, mesh: u32) -> impl Strategy<Value = PolicyKernel> {
    let grid = SimplexGrid::new(mesh, nx).unwrap();
    let points = grid.len();
    prop::collection::vec(prop::collection::vec(arb_simplex(nu), nx), points)
        .prop_map(move |stage| PolicyKernel::new(grid.clone(), nu, vec![stage]).unwrap())
}

/// Single-agent finite-horizon DP for a model whose kernel and cost do not
/// depend on `μ`. Returns `v_0` per state.
pub fn single_agent_finite(model: &EnvironmentModel, steps: usize, discount: f64) -> Vec<f64> {
    let mut v = vec![0.0; model.num_states()];
    for _ in 0..steps {
        v = single_agent_step(model, discount, &v);
    }
    v
}

/// Single-agent discounted value, iterated to machine precision.
pub fn single_agent_discounted(model: &EnvironmentModel, discount: f64) -> Vec<f64> {
    let mut v = vec![0.0; model.num_states()];
    for _ in 0..10_000 {
        let next = single_agent_step(model, discount, &v);
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if delta < 1e-15 {
            break;
        }
    }
    v
}

fn single_agent_step(model: &EnvironmentModel, discount: f64, v: &[f64]) -> Vec<f64> {
    let nx = model.num_states();
    let mu = SimplexPoint::uniform(nx);
    (0..nx)
        .map(|x| {
            (0..model.num_actions())
                .map(|u| {
                    let next = model.kernel_at(x, u, &mu);
                    model.cost_at(x, u, &mu)
                        + discount * next.probs().iter().zip(v).map(|(p, w)| p * w).sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}
