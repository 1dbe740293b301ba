use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use mfteam::lifted::{
    solve_symmetric_restricted, value_iteration_discounted, value_iteration_finite, LiftedMdp, LiftedSolution,
};
use mfteam::measure::{EmpiricalStateMeasure, GriddedPolicySet};
use mfteam::mkv::{build_mkv_mdp, extract_mf_policy, flow_trajectory, solve_mkv};
use mfteam::sim::{epsilon_gap_capped, simulate_n_agents, SimConfig, SimPolicy};
use mfteam::{bundled, EnvironmentModel, Horizon, PolicyKernel, SimplexPoint};
use serde::Serialize;
use serde_json::json;

use crate::manifest::{unix_now, write_manifest, InputFile, RunManifest};
use crate::{
    CliError, Command, CounterexampleArgs, FlowArgs, GapTableArgs, PolicyChoice, SimulateArgs, SolveMfArgs,
    SolveNArgs,
};

const BUNDLED_PREFIX: &str = "bundled:";
const SELF_CHECK_TOL: f64 = 1e-9;

struct Run {
    command: &'static str,
    args: Vec<String>,
    started: f64,
    inputs: Vec<InputFile>,
    outputs: Vec<String>,
}

impl Run {
    fn create_dir(dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
    }

    fn write_file(
        &mut self,
        dir: &Path,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    ) -> Result<(), CliError> {
        Self::create_dir(dir)?;
        let path = dir.join(name);
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        body(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| CliError::io(&path, e))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn write_json(&mut self, dir: &Path, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).expect("report serializes");
        self.write_file(dir, name, |w| writeln!(w, "{text}"))
    }

    fn finish(self, dir: &Path, params: &impl Serialize, seed: Option<u64>) -> Result<(), CliError> {
        Self::create_dir(dir)?;
        let manifest = RunManifest {
            command: self.command.to_string(),
            args: self.args,
            inputs: self.inputs,
            params: serde_json::to_value(params).expect("arguments serialize"),
            seed,
            workers: rayon::current_num_threads(),
            started_unix: self.started,
            finished_unix: unix_now(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: self.outputs,
        };
        write_manifest(dir, &manifest)?;
        Ok(())
    }
}

pub(crate) fn dispatch(command: Command, args: Vec<String>) -> Result<(), CliError> {
    let mut run = Run {
        command: command.name(),
        args,
        started: unix_now(),
        inputs: Vec::new(),
        outputs: Vec::new(),
    };
    match &command {
        Command::SolveN(a) => solve_n(a, &mut run)?,
        Command::SolveMf(a) => solve_mf(a, &mut run)?,
        Command::Simulate(a) => simulate(a, &mut run)?,
        Command::GapTable(a) => gap_table(a, &mut run)?,
        Command::Counterexample(a) => return counterexample(a, run),
        Command::Flow(a) => flow(a, &mut run)?,
    }
    let (dir, seed) = match &command {
        Command::SolveN(a) => (&a.out, None),
        Command::SolveMf(a) => (&a.out, None),
        Command::Simulate(a) => (&a.out, Some(a.seed)),
        Command::GapTable(a) => (&a.out, None),
        Command::Flow(a) => (&a.out, None),
        Command::Counterexample(_) => unreachable!(),
    };
    run.finish(dir, &command, seed)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

/// Hash of a recorded input, either a file or a bundled model.
pub(crate) fn hash_input(spec: &str) -> Result<InputFile, CliError> {
    match spec.strip_prefix(BUNDLED_PREFIX) {
        Some(name) => {
            let model = bundled::by_name(name).ok_or_else(|| CliError::new(1, format!("no bundled model `{name}`")))?;
            Ok(InputFile::from_bytes(spec, model.to_json().as_bytes()))
        }
        None => Ok(InputFile::from_bytes(spec, &read_bytes(Path::new(spec))?)),
    }
}

fn load_model_arg(spec: &str, run: &mut Run) -> Result<EnvironmentModel, CliError> {
    let model = match spec.strip_prefix(BUNDLED_PREFIX) {
        Some(name) => bundled::by_name(name).ok_or_else(|| {
            CliError::new(
                1,
                format!("no bundled model `{name}`; available: counterexample, decoupled, weakly_coupled, crowd_ring"),
            )
        })?,
        None => {
            let bytes = read_bytes(Path::new(spec))?;
            let text = String::from_utf8(bytes).map_err(|_| CliError::new(1, format!("{spec}: not UTF-8")))?;
            EnvironmentModel::from_json_str(&text)?
        }
    };
    run.inputs.push(hash_input(spec)?);
    Ok(model)
}

fn read_policy(path: &Path, run: &mut Run) -> Result<PolicyKernel, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let pi = PolicyKernel::read_csv(BufReader::new(file))?;
    run.inputs.push(hash_input(&path.display().to_string())?);
    Ok(pi)
}

fn solve_lifted(mdp: &LiftedMdp, horizon: Horizon) -> Result<LiftedSolution, CliError> {
    Ok(match horizon {
        Horizon::Finite { steps, discount } => value_iteration_finite(mdp, steps, discount)?,
        Horizon::Discounted {
            discount,
            tolerance,
        } => value_iteration_discounted(mdp, discount, tolerance)?,
    })
}

fn coords(p: &SimplexPoint) -> String {
    p.probs().iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

fn solve_n(a: &SolveNArgs, run: &mut Run) -> Result<(), CliError> {
    let model = load_model_arg(&a.model, run)?;
    let horizon = a.horizon.resolve(&model)?;
    let mdp = LiftedMdp::build_capped(&model, a.n, a.cap)?;
    let sol = solve_lifted(&mdp, horizon)?;
    let start = EmpiricalStateMeasure::round_from(model.initial_dist(), a.n)?;
    let ordinal = mdp.ordinal_of(start.counts()).expect("rounded measure is enumerated");
    let value = sol.initial_values()[ordinal];
    run.write_file(&a.out, "values.csv", |w| sol.write_values_csv(&mdp, w))?;
    run.write_file(&a.out, "policy.csv", |w| sol.write_policy_csv(&mdp, w))?;
    run.write_json(
        &a.out,
        "report.json",
        &json!({
            "population": a.n,
            "horizon": horizon,
            "initial_counts": start.counts(),
            "value": value,
            "iterations": sol.iterations,
            "num_measures": mdp.num_measures(),
        }),
    )?;
    println!("J = {value} at mu = {start}");
    Ok(())
}

fn solve_mf(a: &SolveMfArgs, run: &mut Run) -> Result<(), CliError> {
    let model = load_model_arg(&a.model, run)?;
    let horizon = a.horizon.resolve(&model)?;
    let mkv = build_mkv_mdp(&model, a.mesh, a.policy_mesh)?;
    let sol = solve_mkv(&mkv, horizon)?;
    let g = mkv.state_grid().project(model.initial_dist().probs());
    let value = sol.initial_values()[g];
    let pi = extract_mf_policy(&mkv, &sol);
    run.write_file(&a.out, "values.csv", |w| sol.write_values_csv(&mkv, w))?;
    run.write_file(&a.out, "policy.csv", |w| pi.write_csv(w))?;
    run.write_json(
        &a.out,
        "report.json",
        &json!({
            "horizon": horizon,
            "mesh": a.mesh,
            "policy_mesh": a.policy_mesh,
            "initial_grid_ordinal": g,
            "initial_grid_counts": mkv.state_grid().counts(g),
            "value": value,
            "iterations": sol.iterations,
        }),
    )?;
    println!("J = {value} at mu = {}", coords(&mkv.state_grid().point(g)));
    Ok(())
}

fn simulate(a: &SimulateArgs, run: &mut Run) -> Result<(), CliError> {
    let model = load_model_arg(&a.model, run)?;
    let horizon = a.horizon.resolve(&model)?;
    let base = SimConfig {
        population: a.n,
        horizon,
        replications: a.replications as usize,
        seed: a.seed,
        initial_states: None,
        policy: SimPolicy::Kernel(&PolicyKernel::uniform(1, 1)),
    };
    let report = if let Some(path) = &a.policy_file {
        let pi = read_policy(path, run)?;
        simulate_n_agents(&model, &SimConfig { policy: SimPolicy::Kernel(&pi), ..base })?
    } else {
        match a.policy {
            PolicyChoice::Lifted => {
                let mdp = LiftedMdp::build(&model, a.n)?;
                let sol = solve_lifted(&mdp, horizon)?;
                let policy = SimPolicy::Lifted {
                    mdp: &mdp,
                    policy: &sol.policy,
                };
                simulate_n_agents(&model, &SimConfig { policy, ..base })?
            }
            PolicyChoice::Mf => {
                let mkv = build_mkv_mdp(&model, a.mesh, a.policy_mesh)?;
                let pi = extract_mf_policy(&mkv, &solve_mkv(&mkv, horizon)?);
                simulate_n_agents(&model, &SimConfig { policy: SimPolicy::Kernel(&pi), ..base })?
            }
            PolicyChoice::Uniform => {
                let pi = PolicyKernel::uniform(model.num_states(), model.num_actions());
                simulate_n_agents(&model, &SimConfig { policy: SimPolicy::Kernel(&pi), ..base })?
            }
        }
    };
    run.write_json(&a.out, "report.json", &report)?;
    match report.std_error {
        Some(se) => println!("mean cost = {} (standard error {se})", report.mean_cost),
        None => println!("mean cost = {} (standard error undefined for one replication)", report.mean_cost),
    }
    Ok(())
}

fn gap_table(a: &GapTableArgs, run: &mut Run) -> Result<(), CliError> {
    let model = load_model_arg(&a.model, run)?;
    let horizon = a.horizon.resolve(&model)?;
    let rows = epsilon_gap_capped(&model, &a.populations, horizon, a.mesh, a.policy_mesh, a.cap)?;
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
    run.write_file(&a.out, "gap.csv", |w| {
        writeln!(w, "n,j_opt,j_mf,eps,note")?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.population,
                cell(r.j_opt),
                cell(r.j_mf),
                cell(r.eps),
                r.note.as_deref().unwrap_or("").replace(',', ";")
            )?;
        }
        Ok(())
    })?;
    for r in &rows {
        match (r.j_opt, r.j_mf, r.eps) {
            (Some(o), Some(m), Some(e)) => println!("N = {}: J_opt = {o}, J_mf = {m}, eps = {e}", r.population),
            _ => println!("N = {}: {}", r.population, r.note.as_deref().unwrap_or("skipped")),
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct CounterexampleReport {
    asymmetric: f64,
    symmetric: f64,
    gap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    mesh_u: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    symmetric_at_mesh_u: Option<f64>,
}

fn counterexample(a: &CounterexampleArgs, mut run: Run) -> Result<(), CliError> {
    let model = bundled::counterexample();
    let horizon = Horizon::Finite {
        steps: 2,
        discount: 1.0,
    };
    let start = [0u32, 2];
    let mdp = LiftedMdp::build(&model, 2)?;
    let lifted = value_iteration_finite(&mdp, 2, 1.0)?;
    let asymmetric = lifted.initial_values()[mdp.ordinal_of(&start).expect("enumerated")];
    let symmetric_at = |mesh: u32| -> Result<f64, CliError> {
        let grid = GriddedPolicySet::new(mesh, 2, 2)?;
        let sol = solve_symmetric_restricted(&model, 2, horizon, &grid)?;
        Ok(sol.value_at(&start).expect("enumerated"))
    };
    let symmetric = symmetric_at(2)?;
    let report = CounterexampleReport {
        asymmetric,
        symmetric,
        gap: symmetric - asymmetric,
        mesh_u: a.mesh_u,
        symmetric_at_mesh_u: a.mesh_u.map(symmetric_at).transpose()?,
    };
    if a.json {
        println!("{}", serde_json::to_string(&report).expect("report serializes"));
    } else {
        println!("{} {} {}", report.asymmetric, report.symmetric, report.gap);
        if let (Some(m), Some(v)) = (report.mesh_u, report.symmetric_at_mesh_u) {
            println!("symmetric optimum with policy mesh {m}: {v}");
        }
    }
    if let Some(dir) = &a.out {
        run.inputs.push(InputFile::from_bytes("bundled:counterexample", model.to_json().as_bytes()));
        run.write_json(dir, "report.json", &report)?;
        run.finish(dir, &Command::Counterexample(CounterexampleArgs { out: a.out.clone(), ..*a }), None)?;
    }
    let off = [(asymmetric, 0.5), (symmetric, 0.75), (report.gap, 0.25)]
        .iter()
        .any(|(got, want)| (got - want).abs() > SELF_CHECK_TOL);
    if off {
        return Err(CliError::new(3, "counterexample values deviate from 0.5 / 0.75 / 0.25"));
    }
    Ok(())
}

fn flow(a: &FlowArgs, run: &mut Run) -> Result<(), CliError> {
    let model = load_model_arg(&a.model, run)?;
    let pi = read_policy(&a.policy, run)?;
    let mu0 = match &a.mu0 {
        Some(v) => SimplexPoint::new(v.clone())?,
        None => model.initial_dist().clone(),
    };
    let trajectory = flow_trajectory(&model, &mu0, &pi, a.steps)?;
    run.write_file(&a.out, "trajectory.csv", |w| {
        let header: Vec<String> = (0..model.num_states()).map(|x| format!("mu_{x}")).collect();
        writeln!(w, "t,{}", header.join(","))?;
        for (t, mu) in trajectory.iter().enumerate() {
            let row: Vec<String> = mu.probs().iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(w, "{t},{}", row.join(","))?;
        }
        Ok(())
    })?;
    println!("mu_{} = {}", a.steps, coords(trajectory.last().expect("nonempty")));
    Ok(())
}
