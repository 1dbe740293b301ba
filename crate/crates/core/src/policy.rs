//! Horizon specifications and symmetric mean-field-sharing policy kernels.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{join_counts, SimplexGrid};
use crate::model::SimplexPoint;

/// How costs are accumulated over time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Horizon {
    /// `Σ_{t<steps} β^t c_t`, with `0 < β ≤ 1`.
    Finite { steps: usize, discount: f64 },
    /// `Σ_t β^t c_t` with `0 < β < 1`; solvers stop once the value is within
    /// `tolerance` of optimal.
    Discounted { discount: f64, tolerance: f64 },
}

impl Horizon {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Horizon::Finite { steps, discount } => {
                if steps == 0 {
                    return Err(Error::parameter("horizon", "must be at least 1"));
                }
                if !(discount > 0.0 && discount <= 1.0) {
                    return Err(Error::parameter(
                        "discount",
                        format!("{discount} is outside (0, 1]"),
                    ));
                }
            }
            Horizon::Discounted {
                discount,
                tolerance,
            } => {
                if !(discount > 0.0 && discount < 1.0) {
                    return Err(Error::parameter(
                        "discount",
                        format!("{discount} is outside (0, 1) for an infinite horizon"),
                    ));
                }
                if !(tolerance > 0.0) {
                    return Err(Error::parameter("eps", "must be positive"));
                }
            }
        }
        Ok(())
    }

    pub fn discount(&self) -> f64 {
        match *self {
            Horizon::Finite { discount, .. } | Horizon::Discounted { discount, .. } => discount,
        }
    }
}

/// Sup-norm update size at which discounted successive approximation stops;
/// the greedy policy is then `tolerance`-optimal.
pub fn stopping_threshold(discount: f64, tolerance: f64) -> f64 {
    tolerance * (1.0 - discount) / (2.0 * discount)
}

/// A symmetric policy `π(u | x, μ̂)` looked up at the grid projection `μ̂` of
/// the current measure. Holds one table per stage; the last table is reused
/// past the end, so a single table is a stationary policy.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyKernel {
    grid: SimplexGrid,
    num_actions: usize,
    stages: Vec<Vec<f64>>,
}

impl PolicyKernel {
    /// `stages[t][g][x]` is the action distribution at grid point `g`, state `x`.
    pub fn new(grid: SimplexGrid, num_actions: usize, stages: Vec<Vec<Vec<SimplexPoint>>>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::parameter("policy", "needs at least one stage"));
        }
        let nx = grid.dim();
        let mut tables = Vec::with_capacity(stages.len());
        for stage in stages {
            if stage.len() != grid.len() {
                return Err(Error::parameter("policy", "one entry per grid point required"));
            }
            let mut table = Vec::with_capacity(grid.len() * nx * num_actions);
            for per_state in stage {
                if per_state.len() != nx {
                    return Err(Error::parameter("policy", "one row per state required"));
                }
                for row in per_state {
                    if row.len() != num_actions {
                        return Err(Error::parameter("policy", "row length differs from |U|"));
                    }
                    table.extend_from_slice(row.probs());
                }
            }
            tables.push(table);
        }
        Ok(PolicyKernel {
            grid,
            num_actions,
            stages: tables,
        })
    }

    pub(crate) fn from_tables(grid: SimplexGrid, num_actions: usize, stages: Vec<Vec<f64>>) -> Self {
        debug_assert!(stages
            .iter()
            .all(|t| t.len() == grid.len() * grid.dim() * num_actions));
        PolicyKernel {
            grid,
            num_actions,
            stages,
        }
    }

    /// The same action distributions for every measure and stage.
    pub fn constant(rows: &[SimplexPoint]) -> Result<Self> {
        let num_actions = rows.first().map(SimplexPoint::len).unwrap_or(0);
        if num_actions == 0 {
            return Err(Error::parameter("policy", "empty kernel"));
        }
        let grid = SimplexGrid::new(1, rows.len())?;
        let stage = vec![rows.to_vec(); grid.len()];
        Self::new(grid, num_actions, vec![stage])
    }

    /// Every agent plays the uniform action distribution.
    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self::constant(&vec![SimplexPoint::uniform(num_actions); num_states])
            .expect("nonempty uniform kernel")
    }

    pub fn grid(&self) -> &SimplexGrid {
        &self.grid
    }

    pub fn num_states(&self) -> usize {
        self.grid.dim()
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn is_stationary(&self) -> bool {
        self.stages.len() == 1
    }

    /// Row-major `|X| x |U|` table at grid ordinal `g` for stage `t`.
    pub fn table_at(&self, t: usize, g: usize) -> &[f64] {
        let stage = &self.stages[t.min(self.stages.len() - 1)];
        let block = self.grid.dim() * self.num_actions;
        &stage[g * block..(g + 1) * block]
    }

    /// Row-major `|X| x |U|` table for the projection of `mu`.
    pub fn table_for(&self, t: usize, mu: &[f64]) -> &[f64] {
        self.table_at(t, self.grid.project(mu))
    }

    /// `π(·|x, μ̂)` at stage `t`.
    pub fn action_probs(&self, t: usize, mu: &[f64], x: usize) -> &[f64] {
        let table = self.table_for(t, mu);
        &table[x * self.num_actions..(x + 1) * self.num_actions]
    }

    /// Writes `stage,grid_ordinal,grid_counts,state,action_probs`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "stage,grid_ordinal,grid_counts,state,action_probs")?;
        for t in 0..self.stages.len() {
            for g in 0..self.grid.len() {
                let table = self.table_at(t, g);
                for x in 0..self.grid.dim() {
                    let probs: Vec<String> = table[x * self.num_actions..(x + 1) * self.num_actions]
                        .iter()
                        .map(|p| format!("{p:.16e}"))
                        .collect();
                    writeln!(
                        out,
                        "{t},{g},{},{x},{}",
                        join_counts(self.grid.counts(g)),
                        probs.join(";")
                    )?;
                }
            }
        }
        Ok(())
    }

    /// Reads the format produced by [`PolicyKernel::write_csv`].
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::parameter("policy", format!("line {line}: {msg}"));
        let mut rows: Vec<(usize, usize, Vec<u32>, usize, Vec<f64>)> = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| bad(i + 1, &e.to_string()))?;
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(bad(i + 1, "expected 5 fields"));
            }
            let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad(i + 1, "bad integer"));
            let counts = fields[2]
                .split(';')
                .map(|s| s.trim().parse::<u32>().map_err(|_| bad(i + 1, "bad grid count")))
                .collect::<Result<Vec<_>>>()?;
            let probs = fields[4]
                .split(';')
                .map(|s| s.trim().parse::<f64>().map_err(|_| bad(i + 1, "bad probability")))
                .collect::<Result<Vec<_>>>()?;
            rows.push((num(fields[0])?, num(fields[1])?, counts, num(fields[3])?, probs));
        }
        let first = rows.first().ok_or_else(|| bad(1, "no rows"))?;
        let dim = first.2.len();
        let mesh: u32 = first.2.iter().sum();
        let num_actions = first.4.len();
        let grid = SimplexGrid::new(mesh, dim)?;
        let num_stages = rows.iter().map(|r| r.0).max().unwrap_or(0) + 1;
        let block = dim * num_actions;
        let mut stages = vec![vec![f64::NAN; grid.len() * block]; num_stages];
        for (t, g, counts, x, probs) in rows {
            if grid.ordinal(&counts) != Some(g) || x >= dim || probs.len() != num_actions {
                return Err(bad(0, &format!("inconsistent row for stage {t}, grid {g}, state {x}")));
            }
            SimplexPoint::new(probs.clone())?;
            stages[t][g * block + x * num_actions..g * block + (x + 1) * num_actions]
                .copy_from_slice(&probs);
        }
        if stages.iter().flatten().any(|p| p.is_nan()) {
            return Err(bad(0, "policy table is incomplete"));
        }
        Ok(PolicyKernel {
            grid,
            num_actions,
            stages,
        })
    }
}
