//! Brute-force check that an agent's next state and the next empirical
//! measure depend on the joint past only through `(x^i_t, u^i_t, μ^N_t)`.
//!
//! The joint process is enumerated exactly for small populations. For every
//! agent `i` and time `t`, the law of `(x^i_{t+1}, μ^N_{t+1})` given the full
//! joint history `(x^{1:N}_{0:t}, u^{1:N}_{0:t-1})` together with `u^i_t` is
//! compared in total variation with the law given `(x^i_t, u^i_t, μ^N_t)`.
//! Under a symmetric Markov policy the two agree exactly.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{composition_count, composition_rank};
use crate::model::EnvironmentModel;
use crate::policy::PolicyKernel;

const MAX_AGENTS: u32 = 4;
const MAX_CARDINALITY: usize = 3;
const MAX_PATHS: f64 = 5e7;

#[derive(Clone, Copy, Debug)]
pub enum AgentPolicies<'a> {
    /// Every agent plays the same kernel.
    Symmetric(&'a PolicyKernel),
    /// Agent `i` plays `kernels[i]`.
    PerAgent(&'a [PolicyKernel]),
}

impl AgentPolicies<'_> {
    fn kernel(&self, agent: usize) -> &PolicyKernel {
        match self {
            AgentPolicies::Symmetric(pi) => pi,
            AgentPolicies::PerAgent(list) => &list[agent],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovCheckReport {
    /// Largest total-variation distance found.
    pub max_deviation: f64,
    /// Number of `(agent, history, action)` conditioning events with positive probability.
    pub histories_checked: usize,
    /// The conditioning event attaining the maximum.
    pub worst: Option<String>,
}

struct Tally {
    num_measures: usize,
    num_states: usize,
    full_index: HashMap<Vec<u8>, usize>,
    full: Vec<(usize, Vec<f64>)>,
    reduced_index: HashMap<(usize, usize, usize, usize, usize), usize>,
    reduced: Vec<Vec<f64>>,
}

impl Tally {
    fn outcome_len(&self) -> usize {
        self.num_states * self.num_measures
    }

    fn add(&mut self, full_key: Vec<u8>, reduced_key: (usize, usize, usize, usize, usize), outcome: usize, p: f64) {
        let len = self.outcome_len();
        let r = match self.reduced_index.get(&reduced_key) {
            Some(&r) => r,
            None => {
                self.reduced.push(vec![0.0; len]);
                self.reduced_index.insert(reduced_key, self.reduced.len() - 1);
                self.reduced.len() - 1
            }
        };
        self.reduced[r][outcome] += p;
        let f = match self.full_index.get(&full_key) {
            Some(&f) => f,
            None => {
                self.full.push((r, vec![0.0; len]));
                self.full_index.insert(full_key, self.full.len() - 1);
                self.full.len() - 1
            }
        };
        self.full[f].1[outcome] += p;
    }
}

fn decode(mut code: usize, base: usize, out: &mut [usize]) {
    for slot in out.iter_mut().rev() {
        *slot = code % base;
        code /= base;
    }
}

fn counts_of(states: &[usize], num_states: usize) -> Vec<u32> {
    let mut c = vec![0u32; num_states];
    for &x in states {
        c[x] += 1;
    }
    c
}

struct Walker<'a> {
    model: &'a EnvironmentModel,
    policies: AgentPolicies<'a>,
    n: usize,
    steps: usize,
    tally: Tally,
}

impl Walker<'_> {
    /// `states[t]` and `actions[t]` hold the joint path so far; `states` has
    /// one more entry than `actions`.
    fn visit(&mut self, states: &mut Vec<Vec<usize>>, actions: &mut Vec<Vec<usize>>, p: f64) {
        let t = actions.len();
        if t == self.steps {
            return;
        }
        let nx = self.model.num_states();
        let nu = self.model.num_actions();
        let n = self.n;
        let x_t = states[t].clone();
        let counts = counts_of(&x_t, nx);
        let rank_t = composition_rank(&counts);
        let mu: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| self.policies.kernel(i).action_probs(t, &mu, x_t[i]).to_vec())
            .collect();
        let mut laws = vec![vec![0.0; nx]; nx * nu];
        for (cell, law) in laws.iter_mut().enumerate() {
            self.model.kernel_into(cell / nu, cell % nu, &mu, law);
        }
        let mut prefix = Vec::new();
        for (xs, us) in states.iter().zip(actions.iter()) {
            prefix.extend(xs.iter().map(|&x| x as u8));
            prefix.extend(us.iter().map(|&u| u as u8));
        }
        prefix.extend(x_t.iter().map(|&x| x as u8));

        let mut a = vec![0usize; n];
        let mut y = vec![0usize; n];
        for a_code in 0..nu.pow(n as u32) {
            decode(a_code, nu, &mut a);
            let q: f64 = (0..n).map(|i| rows[i][a[i]]).product();
            if q <= 0.0 {
                continue;
            }
            for y_code in 0..nx.pow(n as u32) {
                decode(y_code, nx, &mut y);
                let r: f64 = (0..n).map(|i| laws[x_t[i] * nu + a[i]][y[i]]).product();
                if r <= 0.0 {
                    continue;
                }
                let w = p * q * r;
                let next_rank = composition_rank(&counts_of(&y, nx));
                for i in 0..n {
                    let mut key = prefix.clone();
                    key.push(i as u8);
                    key.push(a[i] as u8);
                    let outcome = y[i] * self.tally.num_measures + next_rank;
                    self.tally.add(key, (t, i, x_t[i], a[i], rank_t), outcome, w);
                }
                if t + 1 < self.steps {
                    actions.push(a.clone());
                    states.push(y.clone());
                    self.visit(states, actions, w);
                    states.pop();
                    actions.pop();
                }
            }
        }
    }
}

/// Checks the conditional-independence property for `steps` transitions,
/// starting from agents drawn i.i.d. from the model's initial distribution.
pub fn verify_markov_mf(
    model: &EnvironmentModel,
    population: u32,
    policies: AgentPolicies<'_>,
    steps: usize,
) -> Result<MarkovCheckReport> {
    let nx = model.num_states();
    let nu = model.num_actions();
    if population == 0 || population > MAX_AGENTS {
        return Err(Error::parameter("n", format!("must be in 1..={MAX_AGENTS}")));
    }
    if nx > MAX_CARDINALITY || nu > MAX_CARDINALITY {
        return Err(Error::parameter(
            "model",
            format!("brute force needs |X|, |U| <= {MAX_CARDINALITY}"),
        ));
    }
    if steps == 0 {
        return Err(Error::parameter("steps", "must be at least 1"));
    }
    let n = population as usize;
    match policies {
        AgentPolicies::PerAgent(list) if list.len() != n => {
            return Err(Error::parameter("policies", "need one kernel per agent"));
        }
        _ => {}
    }
    for i in 0..n {
        let k = policies.kernel(i);
        if k.num_states() != nx || k.num_actions() != nu {
            return Err(Error::parameter("policies", "kernel dimensions differ from the model"));
        }
    }
    let joint = (nx.pow(n as u32) * nu.pow(n as u32)) as f64;
    let paths = nx.pow(n as u32) as f64 * joint.powi(steps as i32);
    if paths > MAX_PATHS {
        return Err(Error::Intractable(format!(
            "{paths:.3e} joint paths exceed the limit of {MAX_PATHS:.0e}"
        )));
    }
    let num_measures = composition_count(population, nx).expect("small") as usize;
    let mut walker = Walker {
        model,
        policies,
        n,
        steps,
        tally: Tally {
            num_measures,
            num_states: nx,
            full_index: HashMap::new(),
            full: Vec::new(),
            reduced_index: HashMap::new(),
            reduced: Vec::new(),
        },
    };
    let init = model.initial_dist().probs();
    let mut x0 = vec![0usize; n];
    for code in 0..nx.pow(n as u32) {
        decode(code, nx, &mut x0);
        let p: f64 = x0.iter().map(|&x| init[x]).product();
        if p > 0.0 {
            walker.visit(&mut vec![x0.clone()], &mut Vec::new(), p);
        }
    }

    let tally = walker.tally;
    let mut keys: Vec<(&Vec<u8>, &usize)> = tally.full_index.iter().collect();
    keys.sort();
    let mut report = MarkovCheckReport {
        max_deviation: 0.0,
        histories_checked: 0,
        worst: None,
    };
    for (key, &f) in keys {
        let (r, dist) = &tally.full[f];
        let mass: f64 = dist.iter().sum();
        if mass <= 0.0 {
            continue;
        }
        report.histories_checked += 1;
        let reduced = &tally.reduced[*r];
        let reduced_mass: f64 = reduced.iter().sum();
        let tv = 0.5
            * dist
                .iter()
                .zip(reduced)
                .map(|(a, b)| (a / mass - b / reduced_mass).abs())
                .sum::<f64>();
        if tv > report.max_deviation {
            report.max_deviation = tv;
            report.worst = Some(format!("history {key:?}"));
        }
    }
    Ok(report)
}
