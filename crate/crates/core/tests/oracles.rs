mod common;

use common::{single_agent_discounted, single_agent_finite};
use mfteam::bundled;
use mfteam::lifted::{solve_symmetric_restricted, value_iteration_discounted, value_iteration_finite, LiftedMdp};
use mfteam::measure::{binomial, GriddedPolicySet, SimplexGrid};
use mfteam::mkv::{build_mkv_mdp, flow_trajectory, solve_mkv_finite};
use mfteam::sim::{chaos_gap, epsilon_gap, simulate_n_agents, verify_markov_mf, AgentPolicies, SimConfig, SimPolicy};
use mfteam::{EnvironmentModel, Horizon, ModelConfig, PolicyKernel, SimplexPoint};

fn half_half() -> PolicyKernel {
    PolicyKernel::constant(&[SimplexPoint::uniform(2), SimplexPoint::uniform(2)]).unwrap()
}

/// `E|Bin(n, 1/2)/n - 1/2|` by direct summation.
fn binomial_mean_abs_deviation(n: u32) -> f64 {
    (0..=n)
        .map(|k| {
            let p = binomial(n as u64, k as u64).unwrap() as f64 / 2f64.powi(n as i32);
            p * (k as f64 / n as f64 - 0.5).abs()
        })
        .sum()
}

#[test]
fn decoupled_lifted_values_average_single_agent_values() {
    let m = bundled::decoupled();
    for n in 1..=4u32 {
        let mdp = LiftedMdp::build(&m, n).unwrap();
        for t in 1..=3 {
            let v = single_agent_finite(&m, t, 0.9);
            let sol = value_iteration_finite(&mdp, t, 0.9).unwrap();
            for (i, mu) in mdp.measures().iter().enumerate() {
                let avg: f64 = mu.counts().iter().zip(&v).map(|(&c, w)| c as f64 * w).sum::<f64>() / n as f64;
                assert!((sol.initial_values()[i] - avg).abs() < 1e-10);
            }
        }
        let v = single_agent_discounted(&m, 0.9);
        let sol = value_iteration_discounted(&mdp, 0.9, 1e-11).unwrap();
        for (i, mu) in mdp.measures().iter().enumerate() {
            let avg: f64 = mu.counts().iter().zip(&v).map(|(&c, w)| c as f64 * w).sum::<f64>() / n as f64;
            assert!((sol.initial_values()[i] - avg).abs() < 1e-10);
        }
    }
}

#[test]
fn counterexample_numbers() {
    let m = bundled::counterexample();
    let mdp = LiftedMdp::build(&m, 2).unwrap();
    let opt = value_iteration_finite(&mdp, 2, 1.0).unwrap();
    let start = mdp.ordinal_of(&[0, 2]).unwrap();
    assert!((opt.initial_values()[start] - 0.5).abs() < 1e-12);
    let h = Horizon::Finite { steps: 2, discount: 1.0 };
    let sym = solve_symmetric_restricted(&m, 2, h, &GriddedPolicySet::new(2, 2, 2).unwrap()).unwrap();
    assert!((sym.value_at(&[0, 2]).unwrap() - 0.75).abs() < 1e-12);
    let det = solve_symmetric_restricted(&m, 2, h, &GriddedPolicySet::new(1, 2, 2).unwrap()).unwrap();
    assert!((det.value_at(&[0, 2]).unwrap() - 1.0).abs() < 1e-12);
    let rows = epsilon_gap(&m, &[2], h, 2, 2).unwrap();
    assert!((rows[0].eps.unwrap() - 0.25).abs() < 1e-12);
}

#[test]
fn flow_matches_matrix_powers_without_control() {
    // Both actions share the kernel, so the flow is μ P^t.
    let p = [[0.7, 0.2, 0.1], [0.3, 0.3, 0.4], [0.0, 0.5, 0.5]];
    let cfg = ModelConfig {
        name: "chain".into(),
        num_states: 3,
        num_actions: 2,
        kernel_base: p.iter().map(|row| vec![row.to_vec(); 2]).collect(),
        cost_const: vec![vec![1.0, 1.0]; 3],
        discount: 0.9,
        initial_dist: vec![0.2, 0.5, 0.3],
        ..Default::default()
    };
    let m = EnvironmentModel::from_config(cfg).unwrap();
    let flow = flow_trajectory(&m, m.initial_dist(), &PolicyKernel::uniform(3, 2), 6).unwrap();
    let mut mu = m.initial_dist().probs().to_vec();
    for point in &flow {
        for (a, b) in point.probs().iter().zip(&mu) {
            assert!((a - b).abs() < 1e-14);
        }
        mu = (0..3).map(|y| (0..3).map(|x| mu[x] * p[x][y]).sum()).collect();
    }
}

#[test]
fn vertex_grid_matches_hand_dp() {
    // Control-free two-state chain with cost 1 in state 0 and 0 in state 1.
    // On the vertex grid the uniform-kernel flow from δ_0 lands on (0.6, 0.4),
    // which splits 0.6 / 0.4 over the vertices: V_1(δ_0) = 1 + 0.6 = 1.6,
    // V_1(δ_1) = 0 + 0.3 = 0.3 (flow from δ_1 is (0.3, 0.7)).
    let cfg = ModelConfig {
        name: "two_point".into(),
        num_states: 2,
        num_actions: 2,
        kernel_base: vec![vec![vec![0.6, 0.4]; 2], vec![vec![0.3, 0.7]; 2]],
        cost_const: vec![vec![1.0, 1.0], vec![0.0, 0.0]],
        discount: 1.0,
        initial_dist: vec![1.0, 0.0],
        ..Default::default()
    };
    let m = EnvironmentModel::from_config(cfg).unwrap();
    let mkv = build_mkv_mdp(&m, 1, 1).unwrap();
    let sol = solve_mkv_finite(&mkv, 2, 1.0).unwrap();
    let at = |c: [u32; 2]| sol.initial_values()[mkv.state_grid().ordinal(&c).unwrap()];
    assert!((at([1, 0]) - 1.6).abs() < 1e-12);
    assert!((at([0, 1]) - 0.3).abs() < 1e-12);
}

#[test]
fn chaos_gap_matches_binomial_closed_form() {
    let m = bundled::counterexample();
    let rows = chaos_gap(&m, &[2, 8, 32, 128], &half_half(), 3, 20_000, 11).unwrap();
    for row in &rows {
        // Two coordinates, each off by |Bin/N - 1/2|.
        let exact = 2.0 * binomial_mean_abs_deviation(row.population);
        let se = row.gap_by_step_se[1].unwrap();
        assert!((row.gap_by_step[1] - exact).abs() <= 3.0 * se, "N = {}", row.population);
        assert_eq!(row.gap_by_step[0], 0.0);
    }
    for pair in rows.windows(2) {
        assert!(pair[1].max_gap < pair[0].max_gap);
    }
    let ratio = rows[1].max_gap / rows[2].max_gap;
    assert!((1.5..=3.0).contains(&ratio), "{ratio}");
}

#[test]
fn lifted_simulation_matches_exact_values() {
    for m in bundled::all() {
        let n = 3;
        let mdp = LiftedMdp::build(&m, n).unwrap();
        let sol = value_iteration_finite(&mdp, 4, m.discount()).unwrap();
        let cfg = SimConfig {
            population: n,
            horizon: Horizon::Finite { steps: 4, discount: m.discount() },
            replications: 20_000,
            seed: 5,
            initial_states: None,
            policy: SimPolicy::Lifted {
                mdp: &mdp,
                policy: &sol.policy,
            },
        };
        let report = simulate_n_agents(&m, &cfg).unwrap();
        let start = mfteam::measure::EmpiricalStateMeasure::round_from(m.initial_dist(), n).unwrap();
        let exact = sol.initial_values()[mdp.ordinal_of(start.counts()).unwrap()];
        let se = report.std_error.unwrap();
        assert!((report.mean_cost - exact).abs() <= 3.0 * se + 1e-12, "{}: {} vs {exact}", m.name(), report.mean_cost);
    }
}

#[test]
fn simulated_symmetric_counterexample_cost() {
    let m = bundled::counterexample();
    let pi = half_half();
    let cfg = SimConfig {
        population: 2,
        horizon: Horizon::Finite { steps: 2, discount: 1.0 },
        replications: 100_000,
        seed: 1,
        initial_states: None,
        policy: SimPolicy::Kernel(&pi),
    };
    let r = simulate_n_agents(&m, &cfg).unwrap();
    assert!((r.mean_cost - 0.75).abs() <= 3.0 * r.std_error.unwrap());
}

#[test]
fn relabeling_initial_agents_keeps_lifted_rollouts() {
    // The counterexample dynamics are deterministic given the actions, and
    // the lifted optimum splits the agents, so every rollout is identical.
    let m = bundled::counterexample().with_initial_dist(SimplexPoint::new(vec![0.5, 0.5]).unwrap()).unwrap();
    let mdp = LiftedMdp::build(&m, 4).unwrap();
    let sol = value_iteration_finite(&mdp, 3, 1.0).unwrap();
    let run = |states: Vec<usize>| {
        simulate_n_agents(
            &m,
            &SimConfig {
                population: 4,
                horizon: Horizon::Finite { steps: 3, discount: 1.0 },
                replications: 200,
                seed: 8,
                initial_states: Some(states),
                policy: SimPolicy::Lifted {
                    mdp: &mdp,
                    policy: &sol.policy,
                },
            },
        )
        .unwrap()
    };
    let a = run(vec![0, 0, 1, 1]);
    let b = run(vec![1, 0, 1, 0]);
    assert_eq!(a.mean_cost, b.mean_cost);
    assert_eq!(a.mean_measure, b.mean_measure);
    assert_eq!(a.std_error, Some(0.0));
}

#[test]
fn single_agent_is_trivially_markov() {
    let m = bundled::weakly_coupled();
    let r = verify_markov_mf(&m, 1, AgentPolicies::Symmetric(&PolicyKernel::uniform(2, 2)), 3).unwrap();
    assert!(r.max_deviation < 1e-15);
}

#[test]
fn counterexample_markov_check() {
    let m = bundled::counterexample().with_initial_dist(SimplexPoint::new(vec![0.3, 0.7]).unwrap()).unwrap();
    let r = verify_markov_mf(&m, 2, AgentPolicies::Symmetric(&half_half()), 2).unwrap();
    assert!(r.max_deviation <= 1e-12);
}

#[test]
fn decoupled_gap_vanishes() {
    let m = bundled::decoupled();
    let rows = epsilon_gap(&m, &[2, 4, 8], Horizon::Finite { steps: 3, discount: 0.9 }, 16, 8).unwrap();
    for row in rows {
        assert!(row.eps.unwrap().abs() <= 1e-9);
    }
}

#[test]
fn grid_points_are_their_own_projection() {
    let grid = SimplexGrid::new(5, 3).unwrap();
    for g in 0..grid.len() {
        assert_eq!(grid.project(grid.point(g).probs()), g);
    }
}
