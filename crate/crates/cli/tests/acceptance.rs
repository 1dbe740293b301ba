//! Acceptance checks, one line per criterion. Exits nonzero if any fails.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use mfteam::bundled;
use mfteam::lifted::{
    exact_action_distribution, realize_exchangeable_action, value_iteration_discounted, value_iteration_finite,
    LiftedMdp,
};
use mfteam::measure::{binomial, EmpiricalJointMeasure, EmpiricalStateMeasure, SimplexGrid};
use mfteam::mkv::{build_mkv_mdp, solve_mkv_finite};
use mfteam::sim::{chaos_gap, verify_markov_mf, AgentPolicies};
use mfteam::{EnvironmentModel, ModelConfig, PolicyKernel, SimplexPoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BIN: &str = env!("CARGO_BIN_EXE_mfteam");

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Check {
    Check {
        pass,
        detail: detail.into(),
    }
}

fn mfteam(args: &[&str], workers: usize) -> std::process::Output {
    Command::new(BIN)
        .args(args)
        .env("MFTEAM_WORKERS", workers.to_string())
        .output()
        .expect("binary runs")
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Non-increasing within `1e-9`, and strictly smaller at the end whenever
/// the first entry is nonzero.
fn decreasing(seq: &[f64]) -> bool {
    let steps_ok = seq.windows(2).all(|w| w[1] <= w[0] + 1e-9);
    let first = seq[0];
    let last = *seq.last().unwrap();
    steps_ok && (first <= 1e-9 || last < first)
}

fn fmt_seq(seq: &[f64]) -> String {
    seq.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(" ")
}

fn c1_counterexample() -> Check {
    let start = Instant::now();
    let out = mfteam(&["counterexample"], 1);
    let elapsed = start.elapsed().as_secs_f64();
    let text = String::from_utf8_lossy(&out.stdout);
    let values: Vec<f64> = text
        .lines()
        .next()
        .unwrap_or("")
        .split_whitespace()
        .filter_map(|v| v.parse().ok())
        .collect();
    let ok = out.status.success()
        && values.len() == 3
        && values.iter().zip([0.5, 0.75, 0.25]).all(|(v, w)| (v - w).abs() <= 1e-9)
        && elapsed < 1.0;
    check(ok, format!("printed `{}` in {elapsed:.3} s", text.trim()))
}

fn c2_stochasticity() -> Check {
    let mut worst: f64 = 0.0;
    let mut negative = false;
    for m in bundled::all() {
        for n in 1..=6 {
            let mdp = LiftedMdp::build(&m, n).unwrap();
            for row in mdp.rows() {
                negative |= row.iter().any(|&(_, p)| p < 0.0);
                worst = worst.max((row.iter().map(|&(_, p)| p).sum::<f64>() - 1.0).abs());
            }
        }
        let grid = SimplexGrid::new(8, m.num_states()).unwrap();
        for g in 0..grid.len() {
            let mu = grid.point(g);
            for x in 0..m.num_states() {
                for u in 0..m.num_actions() {
                    let row = m.kernel_at(x, u, &mu);
                    negative |= row.probs().iter().any(|&p| p < 0.0);
                    worst = worst.max((row.probs().iter().sum::<f64>() - 1.0).abs());
                }
            }
        }
    }
    check(!negative && worst <= 1e-12, format!("max |row sum - 1| = {worst:.2e}"))
}

/// Single-agent Bellman step for a model without mean-field dependence.
fn single_step(m: &EnvironmentModel, beta: f64, v: &[f64]) -> Vec<f64> {
    let mu = SimplexPoint::uniform(m.num_states());
    (0..m.num_states())
        .map(|x| {
            (0..m.num_actions())
                .map(|u| {
                    let p = m.kernel_at(x, u, &mu);
                    m.cost_at(x, u, &mu) + beta * p.probs().iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn c3_decoupled_oracle() -> Check {
    let start = Instant::now();
    let m = bundled::decoupled();
    let beta = 0.9;
    let mut worst: f64 = 0.0;
    let mut v_inf = vec![0.0; 2];
    for _ in 0..2000 {
        v_inf = single_step(&m, beta, &v_inf);
    }
    for n in 1..=4u32 {
        let mdp = LiftedMdp::build(&m, n).unwrap();
        let average = |v: &[f64], mu: &EmpiricalStateMeasure| {
            mu.counts().iter().zip(v).map(|(&c, w)| c as f64 * w).sum::<f64>() / n as f64
        };
        let mut v = vec![0.0; 2];
        for t in 1..=3 {
            v = single_step(&m, beta, &v);
            let sol = value_iteration_finite(&mdp, t, beta).unwrap();
            for (i, mu) in mdp.measures().iter().enumerate() {
                worst = worst.max((sol.initial_values()[i] - average(&v, mu)).abs());
            }
        }
        let sol = value_iteration_discounted(&mdp, beta, 1e-12).unwrap();
        for (i, mu) in mdp.measures().iter().enumerate() {
            worst = worst.max((sol.initial_values()[i] - average(&v_inf, mu)).abs());
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-10 && elapsed < 10.0,
        format!("max deviation {worst:.2e} in {elapsed:.2} s"),
    )
}

fn c4_exchangeability() -> Check {
    const DRAWS: u64 = 100_000;
    let cases: Vec<(Vec<usize>, EmpiricalJointMeasure)> = vec![
        (vec![1, 1], EmpiricalJointMeasure::new(vec![0, 0, 1, 1], 2).unwrap()),
        (vec![0, 0, 0], EmpiricalJointMeasure::new(vec![2, 1, 0, 0], 2).unwrap()),
        (vec![0, 1, 0, 1], EmpiricalJointMeasure::new(vec![1, 1, 2, 0], 2).unwrap()),
        (
            vec![2, 0, 1, 2],
            EmpiricalJointMeasure::new(vec![0, 0, 1, 0, 1, 0, 1, 0, 1], 3).unwrap(),
        ),
    ];
    let mut worst_tv: f64 = 0.0;
    let mut worst_z: f64 = 0.0;
    let mut stray = false;
    for (states, theta) in &cases {
        let law = exact_action_distribution(states, theta).unwrap();
        for perm in permutations(states.len()) {
            let permuted: Vec<usize> = perm.iter().map(|&i| states[i]).collect();
            let other: HashMap<Vec<usize>, f64> =
                exact_action_distribution(&permuted, theta).unwrap().into_iter().collect();
            let mut tv = 0.0;
            let mut matched = 0.0;
            for (a, p) in &law {
                let relabeled: Vec<usize> = perm.iter().map(|&i| a[i]).collect();
                let q = other.get(&relabeled).copied().unwrap_or(0.0);
                tv += (p - q).abs();
                matched += q;
            }
            // mass of the permuted law on actions the original law never takes
            tv += (other.values().sum::<f64>() - matched).max(0.0);
            worst_tv = worst_tv.max(0.5 * tv);
        }
        let mut counts: HashMap<Vec<usize>, u64> = HashMap::new();
        for seed in 0..DRAWS {
            *counts
                .entry(realize_exchangeable_action(states, theta, seed).unwrap())
                .or_default() += 1;
        }
        let exact: HashMap<Vec<usize>, f64> = law.into_iter().collect();
        stray |= counts.keys().any(|a| !exact.contains_key(a));
        for (a, p) in &exact {
            let freq = counts.get(a).copied().unwrap_or(0) as f64 / DRAWS as f64;
            let se = (p * (1.0 - p) / DRAWS as f64).sqrt();
            if se > 0.0 {
                worst_z = worst_z.max((freq - p).abs() / se);
            } else if (freq - p).abs() > 0.0 {
                worst_z = f64::INFINITY;
            }
        }
    }
    check(
        worst_tv <= 1e-12 && worst_z <= 3.0 && !stray,
        format!("max TV under relabeling {worst_tv:.2e}, max |freq - p| / SE = {worst_z:.2}"),
    )
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn random_row(rng: &mut ChaCha8Rng, len: usize) -> SimplexPoint {
    let v: Vec<f64> = (0..len).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = v.iter().sum();
    SimplexPoint::new(v.into_iter().map(|x| x / s).collect()).unwrap()
}

fn random_kernel(rng: &mut ChaCha8Rng, nx: usize, nu: usize) -> PolicyKernel {
    let grid = SimplexGrid::new(4, nx).unwrap();
    let stage = (0..grid.len())
        .map(|_| (0..nx).map(|_| random_row(rng, nu)).collect())
        .collect();
    PolicyKernel::new(grid, nu, vec![stage]).unwrap()
}

fn c5_markov() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for m in [bundled::weakly_coupled(), bundled::crowd_ring()] {
        for n in [2u32, 3] {
            for _ in 0..3 {
                let pi = random_kernel(&mut rng, m.num_states(), m.num_actions());
                let r = verify_markov_mf(&m, n, AgentPolicies::Symmetric(&pi), 2).unwrap();
                worst = worst.max(r.max_deviation);
                checked += r.histories_checked;
            }
        }
    }
    let m = bundled::weakly_coupled();
    let k1 = PolicyKernel::constant(&[SimplexPoint::vertex(2, 0), SimplexPoint::vertex(2, 0)]).unwrap();
    let k2 = PolicyKernel::constant(&[SimplexPoint::vertex(2, 1), SimplexPoint::vertex(2, 1)]).unwrap();
    let agents = [k1.clone(), k2, k1];
    let control = verify_markov_mf(&m, 3, AgentPolicies::PerAgent(&agents), 2).unwrap();
    check(
        worst <= 1e-12 && control.max_deviation > 1e-6,
        format!(
            "symmetric max TV {worst:.2e} over {checked} conditioning events; agent-indexed control {:.3e}",
            control.max_deviation
        ),
    )
}

fn read_gap(dir: &Path) -> Vec<Option<f64>> {
    fs::read_to_string(dir.join("gap.csv"))
        .unwrap_or_default()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(3).and_then(|v| v.parse().ok()))
        .collect()
}

fn c6_gap_trend() -> Check {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let mut eps = HashMap::new();
    for name in ["weakly_coupled", "decoupled"] {
        let dir = tmp.path().join(name);
        let out = mfteam(
            &[
                "gap-table",
                "--model",
                &format!("bundled:{name}"),
                "--n",
                "2,4,8,16",
                "--horizon",
                "3",
                "--mesh",
                "16",
                "--policy-mesh",
                "8",
                "--out",
                dir.to_str().unwrap(),
            ],
            1,
        );
        if !out.status.success() {
            return check(false, format!("gap-table failed: {}", String::from_utf8_lossy(&out.stderr)));
        }
        eps.insert(name, read_gap(&dir));
    }
    let elapsed = start.elapsed().as_secs_f64();
    let weak: Vec<f64> = eps["weakly_coupled"].iter().map(|e| e.unwrap_or(f64::NAN)).collect();
    let dec: Vec<f64> = eps["decoupled"].iter().map(|e| e.unwrap_or(f64::NAN)).collect();
    let ok = weak.len() == 4
        && dec.len() == 4
        && weak.iter().all(|&e| e >= -1e-9)
        && weak[3] <= weak[0]
        && dec.iter().all(|&e| e.abs() <= 1e-9)
        && elapsed < 60.0;
    check(
        ok,
        format!(
            "weakly_coupled eps [{}], decoupled eps [{}], {elapsed:.2} s",
            fmt_seq(&weak),
            fmt_seq(&dec)
        ),
    )
}

fn c7_population_convergence() -> Check {
    let mut ok = true;
    let mut details = Vec::new();
    for m in bundled::all() {
        let beta = m.discount();
        let mkv = build_mkv_mdp(&m, 16, 8).unwrap();
        let mf = solve_mkv_finite(&mkv, 3, beta).unwrap();
        let j_mf = mf.initial_values()[mkv.state_grid().project(m.initial_dist().probs())];
        let diffs: Vec<f64> = [2u32, 4, 8, 16]
            .iter()
            .map(|&n| {
                let mdp = LiftedMdp::build(&m, n).unwrap();
                let sol = value_iteration_finite(&mdp, 3, beta).unwrap();
                let start = EmpiricalStateMeasure::round_from(m.initial_dist(), n).unwrap();
                (sol.initial_values()[mdp.ordinal_of(start.counts()).unwrap()] - j_mf).abs()
            })
            .collect();
        ok &= decreasing(&diffs);
        details.push(format!("{} [{}]", m.name(), fmt_seq(&diffs)));
    }
    check(ok, details.join("; "))
}

fn c8_refinement() -> Check {
    let mut ok = true;
    let mut details = Vec::new();
    for m in bundled::all() {
        let values: Vec<f64> = [4u32, 8, 16, 32]
            .iter()
            .map(|&mesh| {
                let mkv = build_mkv_mdp(&m, mesh, 8).unwrap();
                let sol = solve_mkv_finite(&mkv, 3, m.discount()).unwrap();
                sol.initial_values()[mkv.state_grid().project(m.initial_dist().probs())]
            })
            .collect();
        let diffs: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        ok &= decreasing(&diffs);
        details.push(format!("{} [{}]", m.name(), fmt_seq(&diffs)));
    }
    check(ok, details.join("; "))
}

fn c9_chaos() -> Check {
    let m = bundled::counterexample();
    let pi = PolicyKernel::constant(&[SimplexPoint::uniform(2), SimplexPoint::uniform(2)]).unwrap();
    let rows = chaos_gap(&m, &[2, 8, 32, 128], &pi, 3, 20_000, 7).unwrap();
    let gaps: Vec<f64> = rows.iter().map(|r| r.max_gap).collect();
    let ratio = gaps[1] / gaps[2];
    let mut worst_z: f64 = 0.0;
    for r in &rows {
        let n = r.population;
        // Each of the two coordinates is off by |Bin(N, 1/2)/N - 1/2| at t = 1.
        let exact: f64 = 2.0
            * (0..=n)
                .map(|k| {
                    binomial(n as u64, k as u64).unwrap() as f64 / 2f64.powi(n as i32)
                        * (k as f64 / n as f64 - 0.5).abs()
                })
                .sum::<f64>();
        worst_z = worst_z.max((r.gap_by_step[1] - exact).abs() / r.gap_by_step_se[1].unwrap());
    }
    let ok = gaps.iter().all(|&g| g > 0.0)
        && gaps.windows(2).all(|w| w[1] < w[0])
        && (1.5..=3.0).contains(&ratio)
        && worst_z <= 3.0;
    check(
        ok,
        format!(
            "gaps [{}], gap(8)/gap(32) = {ratio:.3}, t=1 closed form within {worst_z:.2} SE",
            fmt_seq(&gaps)
        ),
    )
}

fn random_model(rng: &mut ChaCha8Rng) -> EnvironmentModel {
    let nx = rng.gen_range(2..=3);
    let nu = rng.gen_range(2..=3);
    let scale = 0.1 / nx as f64 - 0.01;
    let base: Vec<Vec<Vec<f64>>> = (0..nx)
        .map(|_| {
            (0..nu)
                .map(|_| {
                    let v: Vec<f64> = (0..nx).map(|_| rng.gen_range(0.1..1.0)).collect();
                    let s: f64 = v.iter().sum();
                    v.into_iter().map(|x| x / s).collect()
                })
                .collect()
        })
        .collect();
    // [x][u][x'][z], zero-sum over x' for every z
    let coupling: Vec<Vec<Vec<Vec<f64>>>> = (0..nx)
        .map(|_| {
            (0..nu)
                .map(|_| {
                    let cols: Vec<Vec<f64>> = (0..nx)
                        .map(|_| {
                            let v: Vec<f64> = (0..nx).map(|_| rng.gen_range(-1.0..1.0)).collect();
                            let mean = v.iter().sum::<f64>() / nx as f64;
                            v.into_iter().map(|x| (x - mean) * scale / 2.0).collect()
                        })
                        .collect();
                    (0..nx).map(|y| (0..nx).map(|z| cols[z][y]).collect()).collect()
                })
                .collect()
        })
        .collect();
    let c0 = (0..nx).map(|_| (0..nu).map(|_| rng.gen_range(1.0..2.0)).collect()).collect();
    let c1 = (0..nx)
        .map(|_| (0..nu).map(|_| (0..nx).map(|_| rng.gen_range(-0.3..0.3)).collect()).collect())
        .collect();
    let c2 = (0..nx)
        .map(|_| {
            (0..nu)
                .map(|_| (0..nx).map(|_| (0..nx).map(|_| rng.gen_range(-0.2..0.2)).collect()).collect())
                .collect()
        })
        .collect();
    EnvironmentModel::from_config(ModelConfig {
        name: "random".into(),
        num_states: nx,
        num_actions: nu,
        kernel_base: base,
        kernel_coupling: Some(coupling),
        cost_const: c0,
        cost_linear: Some(c1),
        cost_quad: Some(c2),
        discount: rng.gen_range(0.5..0.95),
        initial_dist: vec![1.0 / nx as f64; nx],
        ..Default::default()
    })
    .unwrap()
}

fn c10_contraction_monotonicity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst_ratio: f64 = 0.0;
    let mut worst_drop: f64 = 0.0;
    const MODELS: usize = 40;
    for _ in 0..MODELS {
        let m = random_model(&mut rng);
        let beta = m.discount();
        let mdp = LiftedMdp::build(&m, 3).unwrap();
        let mkv = build_mkv_mdp(&m, 4, 2).unwrap();
        for _ in 0..5 {
            let lens = [mdp.num_measures(), mkv.state_grid().len()];
            let pairs: Vec<(Vec<f64>, Vec<f64>)> = lens
                .iter()
                .map(|&len| {
                    (
                        (0..len).map(|_| rng.gen_range(-10.0..10.0)).collect(),
                        (0..len).map(|_| rng.gen_range(-10.0..10.0)).collect(),
                    )
                })
                .collect();
            let (tv, _) = mdp.bellman(beta, &pairs[0].0);
            let (tw, _) = mdp.bellman(beta, &pairs[0].1);
            worst_ratio = worst_ratio.max(sup(&tv, &tw) / (beta * sup(&pairs[0].0, &pairs[0].1)));
            let (tv, _) = mkv.bellman(beta, &pairs[1].0);
            let (tw, _) = mkv.bellman(beta, &pairs[1].1);
            worst_ratio = worst_ratio.max(sup(&tv, &tw) / (beta * sup(&pairs[1].0, &pairs[1].1)));
        }
        let mut prev_lifted = vec![0.0; mdp.num_measures()];
        let mut prev_mkv = vec![0.0; mkv.state_grid().len()];
        for t in 1..=5 {
            let lifted = value_iteration_finite(&mdp, t, beta).unwrap();
            let quantized = solve_mkv_finite(&mkv, t, beta).unwrap();
            for (a, b) in lifted.initial_values().iter().zip(&prev_lifted) {
                worst_drop = worst_drop.max(b - a);
            }
            for (a, b) in quantized.initial_values().iter().zip(&prev_mkv) {
                worst_drop = worst_drop.max(b - a);
            }
            prev_lifted = lifted.initial_values().to_vec();
            prev_mkv = quantized.initial_values().to_vec();
        }
    }
    check(
        worst_ratio <= 1.0 + 1e-12 && worst_drop <= 1e-12,
        format!(
            "{MODELS} random models: max ||TV - TW|| / (beta ||V - W||) = {worst_ratio:.4}, max value drop in T {worst_drop:.2e}"
        ),
    )
}

fn c11_determinism() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let d = |name: &str| root.join(name).to_str().unwrap().to_string();
    let policy = format!("{}/policy.csv", d("mf"));
    let runs: Vec<(String, Vec<String>)> = vec![
        ("n", vec!["solve-n", "--model", "bundled:weakly_coupled", "--n", "4", "--eps", "1e-8"]),
        ("mf", vec!["solve-mf", "--model", "bundled:crowd_ring", "--horizon", "4", "--mesh", "8", "--policy-mesh", "4"]),
        (
            "sim",
            vec!["simulate", "--model", "bundled:crowd_ring", "--n", "5", "--horizon", "5", "--replications", "4000", "--seed", "99", "--policy", "mf", "--policy-mesh", "4"],
        ),
        ("gap", vec!["gap-table", "--model", "bundled:weakly_coupled", "--n", "2,3,5", "--horizon", "3"]),
        ("flow", vec!["flow", "--model", "bundled:crowd_ring", "--policy", &policy, "--steps", "6"]),
        ("ce", vec!["counterexample", "--mesh-u", "1"]),
    ]
    .into_iter()
    .map(|(dir, args)| (dir.to_string(), args.into_iter().map(String::from).collect()))
    .collect();
    let mut compared = 0;
    for (dir, args) in &runs {
        let mut full = args.clone();
        full.push("--out".into());
        full.push(d(dir));
        let refs: Vec<&str> = full.iter().map(String::as_str).collect();
        let first = mfteam(&refs, 1);
        if !first.status.success() {
            return check(false, format!("`{}` failed: {}", args[0], String::from_utf8_lossy(&first.stderr)));
        }
        let replay_dir = d(&format!("{dir}-replay"));
        let manifest = format!("{}/manifest.json", d(dir));
        let second = mfteam(&["--replay", &manifest, "--out", &replay_dir], 4);
        if !second.status.success() {
            return check(false, format!("replay of `{}` failed: {}", args[0], String::from_utf8_lossy(&second.stderr)));
        }
        let mut names: Vec<String> = fs::read_dir(d(dir))
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .filter(|n| n != "manifest.json")
            .collect();
        names.sort();
        if names.is_empty() {
            return check(false, format!("`{}` wrote no result files", args[0]));
        }
        for name in names {
            let a = fs::read(root.join(dir).join(&name)).unwrap();
            let b = fs::read(Path::new(&replay_dir).join(&name)).unwrap_or_default();
            if a != b {
                return check(false, format!("{dir}/{name} differs after replay"));
            }
            compared += 1;
        }
    }
    check(
        true,
        format!("{compared} result files from 6 commands byte-identical on replay with 1 vs 4 workers"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Check); 11] = [
        ("counterexample exactness", c1_counterexample),
        ("kernel stochasticity", c2_stochasticity),
        ("decoupled single-agent oracle", c3_decoupled_oracle),
        ("exchangeable realization", c4_exchangeability),
        ("Markov property of the empirical measure", c5_markov),
        ("optimality gap trend", c6_gap_trend),
        ("finite-N optimum approaches the mean-field value", c7_population_convergence),
        ("quantization refinement", c8_refinement),
        ("propagation of chaos", c9_chaos),
        ("contraction and monotonicity", c10_contraction_monotonicity),
        ("replay determinism", c11_determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let result = run();
        if !result.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} [{}] {name}: {}",
            i + 1,
            if result.pass { "PASS" } else { "FAIL" },
            result.detail
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
