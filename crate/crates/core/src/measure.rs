//! Enumeration and indexing of the finite measure spaces.
//!
//! Count vectors (compositions of an integer total into a fixed number of
//! parts) underlie everything here: empirical state measures of an
//! `N`-agent population, joint state-action measures, simplex grids of mesh
//! `1/m` and per-state gridded action distributions. All enumerations use the
//! same order, descending in the first coordinate, then the second, and so on
//! (`(2,0), (1,1), (0,2)`), and [`composition_rank`] inverts it in `O(k)`.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SimplexPoint;

/// Default upper bound on the size of any enumeration.
pub const DEFAULT_CAP: u64 = 5_000_000;

/// Two L1 distances closer than this are treated as a tie during projection.
const PROJECTION_TIE_TOL: f64 = 1e-12;

/// Binomial coefficient, `None` on `u128` overflow.
pub fn binomial(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k as u128 {
        // acc * (n - i) is divisible by i + 1; cancel first to delay overflow.
        let g = gcd(acc, i + 1);
        acc = (acc / g).checked_mul((n as u128 - i) / ((i + 1) / g))?;
    }
    Some(acc)
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Number of compositions of `total` into `parts` nonnegative parts.
pub fn composition_count(total: u32, parts: usize) -> Option<u128> {
    if parts == 0 {
        return Some(u128::from(total == 0));
    }
    binomial(total as u64 + parts as u64 - 1, parts as u64 - 1)
}

fn checked_count(total: u32, parts: usize, what: &'static str, cap: u64) -> Result<usize> {
    match composition_count(total, parts) {
        Some(n) if n <= cap as u128 => Ok(n as usize),
        Some(n) => Err(Error::CapExceeded { what, size: n, cap }),
        None => Err(Error::CapExceeded {
            what,
            size: u128::MAX,
            cap,
        }),
    }
}

/// All compositions of `total` into `parts` parts, in enumeration order.
pub fn compositions(total: u32, parts: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    if parts == 0 {
        if total == 0 {
            out.push(Vec::new());
        }
        return out;
    }
    let mut current = vec![0u32; parts];
    fill_compositions(total, 0, &mut current, &mut out);
    out
}

fn fill_compositions(remaining: u32, pos: usize, current: &mut [u32], out: &mut Vec<Vec<u32>>) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.push(current.to_vec());
        return;
    }
    for v in (0..=remaining).rev() {
        current[pos] = v;
        fill_compositions(remaining - v, pos + 1, current, out);
    }
}

/// Ordinal of a composition within [`compositions`]`(sum, len)`.
pub fn composition_rank(counts: &[u32]) -> usize {
    let parts = counts.len();
    let mut remaining: u32 = counts.iter().sum();
    let mut rank: u128 = 0;
    for (i, &c) in counts.iter().enumerate().take(parts.saturating_sub(1)) {
        if remaining > c {
            // Compositions sharing the prefix but with a larger entry at `i`.
            rank += composition_count(remaining - c - 1, parts - i).unwrap_or(0);
        }
        remaining -= c;
    }
    rank as usize
}

/// An empirical measure of `N` agents over `|X|` states, stored as counts.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EmpiricalStateMeasure {
    counts: Vec<u32>,
}

impl EmpiricalStateMeasure {
    pub fn new(counts: Vec<u32>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::parameter("counts", "empty count vector"));
        }
        if counts.iter().sum::<u32>() == 0 {
            return Err(Error::parameter("counts", "population must be positive"));
        }
        Ok(EmpiricalStateMeasure { counts })
    }

    /// Empirical measure of a vector of agent states.
    pub fn from_states(states: &[usize], num_states: usize) -> Result<Self> {
        let mut counts = vec![0u32; num_states];
        for &x in states {
            *counts
                .get_mut(x)
                .ok_or_else(|| Error::parameter("states", format!("state {x} out of range")))? += 1;
        }
        Self::new(counts)
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn population(&self) -> u32 {
        self.counts.iter().sum()
    }

    pub fn num_states(&self) -> usize {
        self.counts.len()
    }

    /// Normalized measure `μ^N / N`.
    pub fn to_simplex(&self) -> SimplexPoint {
        counts_to_simplex(&self.counts)
    }

    pub fn ordinal(&self) -> usize {
        composition_rank(&self.counts)
    }

    /// Largest-remainder rounding of `n · dist` to a count vector summing to `n`.
    /// Remainder ties go to the smallest index.
    pub fn round_from(dist: &SimplexPoint, n: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::parameter("population", "must be at least 1"));
        }
        let scaled: Vec<f64> = dist.probs().iter().map(|p| p * n as f64).collect();
        let mut counts: Vec<u32> = scaled.iter().map(|s| s.floor() as u32).collect();
        let assigned: u32 = counts.iter().sum();
        let mut order: Vec<usize> = (0..scaled.len()).collect();
        order.sort_by(|&a, &b| {
            let ra = scaled[a] - scaled[a].floor();
            let rb = scaled[b] - scaled[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &i in order.iter().take(n.saturating_sub(assigned) as usize) {
            counts[i] += 1;
        }
        Self::new(counts)
    }
}

impl fmt::Display for EmpiricalStateMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", join_counts(&self.counts))
    }
}

pub(crate) fn join_counts(counts: &[u32]) -> String {
    counts
        .iter()
        .map(u32::to_string)
        .collect::<Vec<_>>()
        .join(";")
}

pub(crate) fn counts_to_simplex(counts: &[u32]) -> SimplexPoint {
    let total: u32 = counts.iter().sum();
    SimplexPoint::from_raw(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Joint state-action empirical measure `θ^N`, counts in row-major `(x, u)` order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EmpiricalJointMeasure {
    num_actions: usize,
    counts: Vec<u32>,
}

impl EmpiricalJointMeasure {
    pub fn new(counts: Vec<u32>, num_actions: usize) -> Result<Self> {
        if num_actions == 0 || counts.is_empty() || counts.len() % num_actions != 0 {
            return Err(Error::parameter(
                "counts",
                "joint counts must form a |X| x |U| matrix",
            ));
        }
        Ok(EmpiricalJointMeasure {
            num_actions,
            counts,
        })
    }

    /// Joint measure of paired state and action vectors.
    pub fn from_pairs(
        states: &[usize],
        actions: &[usize],
        num_states: usize,
        num_actions: usize,
    ) -> Result<Self> {
        if states.len() != actions.len() {
            return Err(Error::parameter("actions", "length differs from states"));
        }
        let mut counts = vec![0u32; num_states * num_actions];
        for (&x, &u) in states.iter().zip(actions) {
            if x >= num_states || u >= num_actions {
                return Err(Error::parameter("pairs", format!("({x},{u}) out of range")));
            }
            counts[x * num_actions + u] += 1;
        }
        Self::new(counts, num_actions)
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn count(&self, x: usize, u: usize) -> u32 {
        self.counts[x * self.num_actions + u]
    }

    pub fn num_states(&self) -> usize {
        self.counts.len() / self.num_actions
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn population(&self) -> u32 {
        self.counts.iter().sum()
    }

    pub fn row(&self, x: usize) -> &[u32] {
        &self.counts[x * self.num_actions..(x + 1) * self.num_actions]
    }

    /// State marginal `θ(· × U)` as counts.
    pub fn state_marginal(&self) -> Vec<u32> {
        self.counts
            .chunks(self.num_actions)
            .map(|row| row.iter().sum())
            .collect()
    }

    /// Normalized joint weights `θ^N / N`, row-major.
    pub fn weights(&self) -> Vec<f64> {
        let n = self.population() as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }
}

impl fmt::Display for EmpiricalJointMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<String> = self
            .counts
            .chunks(self.num_actions)
            .map(join_counts)
            .collect();
        write!(f, "{}", rows.join("|"))
    }
}

/// All empirical measures of `n` agents over `cardinality` states.
pub fn enumerate_empirical(n: u32, cardinality: usize) -> Result<Vec<EmpiricalStateMeasure>> {
    enumerate_empirical_capped(n, cardinality, DEFAULT_CAP)
}

pub fn enumerate_empirical_capped(
    n: u32,
    cardinality: usize,
    cap: u64,
) -> Result<Vec<EmpiricalStateMeasure>> {
    if n == 0 || cardinality == 0 {
        return Err(Error::parameter(
            "population",
            "population and cardinality must be at least 1",
        ));
    }
    checked_count(n, cardinality, "empirical measure space", cap)?;
    Ok(compositions(n, cardinality)
        .into_iter()
        .map(|counts| EmpiricalStateMeasure { counts })
        .collect())
}

/// Number of joint measures in `U(μ)`, `None` on overflow.
pub fn joint_action_count(mu: &EmpiricalStateMeasure, num_actions: usize) -> Option<u128> {
    mu.counts.iter().try_fold(1u128, |acc, &c| {
        acc.checked_mul(composition_count(c, num_actions)?)
    })
}

/// The admissible joint measures `U(μ)`: every per-state split of the agents
/// over actions, as a cross product with state 0 varying slowest.
pub fn enumerate_joint_actions(
    mu: &EmpiricalStateMeasure,
    num_actions: usize,
) -> Result<Vec<EmpiricalJointMeasure>> {
    enumerate_joint_actions_capped(mu, num_actions, DEFAULT_CAP)
}

pub fn enumerate_joint_actions_capped(
    mu: &EmpiricalStateMeasure,
    num_actions: usize,
    cap: u64,
) -> Result<Vec<EmpiricalJointMeasure>> {
    if num_actions == 0 {
        return Err(Error::parameter("num_actions", "must be at least 1"));
    }
    match joint_action_count(mu, num_actions) {
        Some(n) if n <= cap as u128 => {}
        size => {
            return Err(Error::CapExceeded {
                what: "joint action set",
                size: size.unwrap_or(u128::MAX),
                cap,
            })
        }
    }
    let rows: Vec<Vec<Vec<u32>>> = mu
        .counts
        .iter()
        .map(|&c| compositions(c, num_actions))
        .collect();
    let mut out = Vec::new();
    let mut counts = vec![0u32; mu.counts.len() * num_actions];
    cross_rows(&rows, 0, num_actions, &mut counts, &mut out);
    Ok(out)
}

fn cross_rows(
    rows: &[Vec<Vec<u32>>],
    x: usize,
    num_actions: usize,
    counts: &mut [u32],
    out: &mut Vec<EmpiricalJointMeasure>,
) {
    if x == rows.len() {
        out.push(EmpiricalJointMeasure {
            num_actions,
            counts: counts.to_vec(),
        });
        return;
    }
    for row in &rows[x] {
        counts[x * num_actions..(x + 1) * num_actions].copy_from_slice(row);
        cross_rows(rows, x + 1, num_actions, counts, out);
    }
}

/// Deterministic agent-to-cell assignment: cells in lexicographic `(x, u)`
/// order, each emitted as many times as its count.
pub fn canonical_assignment(theta: &EmpiricalJointMeasure) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(theta.population() as usize);
    for (cell, &c) in theta.counts.iter().enumerate() {
        let pair = (cell / theta.num_actions, cell % theta.num_actions);
        out.extend(std::iter::repeat(pair).take(c as usize));
    }
    out
}

/// Points of the probability simplex whose coordinates are multiples of `1/m`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexGrid {
    mesh: u32,
    dim: usize,
    points: Vec<Vec<u32>>,
}

impl SimplexGrid {
    pub fn new(mesh: u32, dim: usize) -> Result<Self> {
        Self::with_cap(mesh, dim, DEFAULT_CAP)
    }

    pub fn with_cap(mesh: u32, dim: usize, cap: u64) -> Result<Self> {
        if mesh == 0 || dim == 0 {
            return Err(Error::parameter("mesh", "mesh and dimension must be at least 1"));
        }
        checked_count(mesh, dim, "simplex grid", cap)?;
        Ok(SimplexGrid {
            mesh,
            dim,
            points: compositions(mesh, dim),
        })
    }

    pub fn mesh(&self) -> u32 {
        self.mesh
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn counts(&self, ordinal: usize) -> &[u32] {
        &self.points[ordinal]
    }

    pub fn point(&self, ordinal: usize) -> SimplexPoint {
        counts_to_simplex(&self.points[ordinal])
    }

    /// Ordinal of a grid point given by its counts (which must sum to the mesh).
    pub fn ordinal(&self, counts: &[u32]) -> Option<usize> {
        if counts.len() != self.dim || counts.iter().sum::<u32>() != self.mesh {
            return None;
        }
        Some(composition_rank(counts))
    }

    /// Nearest grid point in L1 distance; ties go to the smallest ordinal.
    pub fn project(&self, mu: &[f64]) -> usize {
        debug_assert_eq!(mu.len(), self.dim);
        let m = self.mesh as f64;
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d: f64 = p
                .iter()
                .zip(mu)
                .map(|(&c, &v)| (c as f64 / m - v).abs())
                .sum();
            if d < best_dist - PROJECTION_TIE_TOL {
                best = i;
                best_dist = d;
            }
        }
        best
    }

    /// Splits `mu` over the vertices of the grid cell containing it (Kuhn
    /// triangulation), with barycentric weights. The weights are
    /// nonnegative, sum to one and reproduce `mu` as their mean, so a
    /// function that is affine in `mu` is interpolated exactly. Grid points
    /// map to themselves with weight one.
    pub fn barycentric(&self, mu: &[f64]) -> Vec<(usize, f64)> {
        debug_assert_eq!(mu.len(), self.dim);
        let m = self.mesh as f64;
        let d = self.dim - 1;
        if d == 0 {
            return vec![(0, 1.0)];
        }
        // Cumulative coordinates c_k = m * (mu_0 + ... + mu_{k-1}), k = 1..dim-1,
        // which are nondecreasing and lie in [0, m].
        let mut base = Vec::with_capacity(d);
        let mut frac = Vec::with_capacity(d);
        let mut acc = 0.0;
        for &v in &mu[..d] {
            acc += v;
            let mut c = (acc * m).clamp(0.0, m);
            let r = c.round();
            if (c - r).abs() < PROJECTION_TIE_TOL * m.max(1.0) {
                c = r;
            }
            let b = c.floor();
            base.push(b as u32);
            frac.push(c - b);
        }
        // Increment coordinates in order of decreasing fractional part; equal
        // parts go to the larger index first so the path stays monotone.
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&i, &j| frac[j].total_cmp(&frac[i]).then(j.cmp(&i)));
        let to_counts = |cum: &[u32]| -> Vec<u32> {
            let mut counts = Vec::with_capacity(self.dim);
            let mut prev = 0;
            for &c in cum {
                counts.push(c - prev);
                prev = c;
            }
            counts.push(self.mesh - prev);
            counts
        };
        let mut out = Vec::with_capacity(self.dim);
        let mut vertex = base;
        let mut previous = 1.0;
        for (step, &k) in order.iter().enumerate() {
            let w = previous - frac[k];
            if w > 0.0 {
                out.push((composition_rank(&to_counts(&vertex)), w));
            }
            previous = frac[k];
            if step + 1 < d || previous > 0.0 {
                vertex[k] += 1;
            }
        }
        if previous > 0.0 {
            out.push((composition_rank(&to_counts(&vertex)), previous));
        }
        out
    }

    /// Dumps `ordinal,coordinates` rows for inspection.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "ordinal,coordinates")?;
        for i in 0..self.len() {
            let coords: Vec<String> = self
                .point(i)
                .probs()
                .iter()
                .map(|v| format!("{v:.16e}"))
                .collect();
            writeln!(out, "{i},{}", coords.join(";"))?;
        }
        Ok(())
    }
}

/// Nearest-point projection onto a simplex grid.
pub fn project_to_grid(mu: &SimplexPoint, grid: &SimplexGrid) -> usize {
    grid.project(mu.probs())
}

/// Policy kernels `x ↦ π(·|x)` whose action probabilities are multiples of
/// `1/m_u`, indexed in mixed radix with state 0 most significant.
#[derive(Clone, Debug, PartialEq)]
pub struct GriddedPolicySet {
    mesh: u32,
    num_states: usize,
    num_actions: usize,
    rows: Vec<Vec<u32>>,
    len: usize,
}

impl GriddedPolicySet {
    pub fn new(mesh: u32, num_states: usize, num_actions: usize) -> Result<Self> {
        Self::with_cap(mesh, num_states, num_actions, DEFAULT_CAP)
    }

    pub fn with_cap(mesh: u32, num_states: usize, num_actions: usize, cap: u64) -> Result<Self> {
        if mesh == 0 || num_states == 0 || num_actions == 0 {
            return Err(Error::parameter(
                "policy_mesh",
                "mesh and space sizes must be at least 1",
            ));
        }
        let per_state = checked_count(mesh, num_actions, "policy grid", cap)?;
        let total = (per_state as u128)
            .checked_pow(num_states as u32)
            .filter(|&t| t <= cap as u128)
            .ok_or(Error::CapExceeded {
                what: "policy grid",
                size: (per_state as u128)
                    .checked_pow(num_states as u32)
                    .unwrap_or(u128::MAX),
                cap,
            })?;
        Ok(GriddedPolicySet {
            mesh,
            num_states,
            num_actions,
            rows: compositions(mesh, num_actions),
            len: total as usize,
        })
    }

    pub fn mesh(&self) -> u32 {
        self.mesh
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Per-state row ordinals of a policy.
    pub fn row_indices(&self, ordinal: usize) -> Vec<usize> {
        let radix = self.rows.len();
        let mut idx = vec![0; self.num_states];
        let mut rest = ordinal;
        for slot in idx.iter_mut().rev() {
            *slot = rest % radix;
            rest /= radix;
        }
        idx
    }

    /// `π(·|x)` as counts summing to the mesh.
    pub fn row_counts(&self, ordinal: usize, x: usize) -> &[u32] {
        &self.rows[self.row_indices(ordinal)[x]]
    }

    /// The kernel as a row-major `|X| x |U|` probability table.
    pub fn kernel(&self, ordinal: usize) -> Vec<f64> {
        let m = self.mesh as f64;
        self.row_indices(ordinal)
            .into_iter()
            .flat_map(|r| self.rows[r].iter().map(move |&c| c as f64 / m))
            .collect()
    }

    pub fn kernel_rows(&self, ordinal: usize) -> Vec<SimplexPoint> {
        self.row_indices(ordinal)
            .into_iter()
            .map(|r| counts_to_simplex(&self.rows[r]))
            .collect()
    }

    /// Ordinal of the kernel with the given per-state counts.
    pub fn ordinal(&self, rows: &[Vec<u32>]) -> Option<usize> {
        if rows.len() != self.num_states {
            return None;
        }
        let radix = self.rows.len();
        let mut ord = 0;
        for row in rows {
            if row.len() != self.num_actions || row.iter().sum::<u32>() != self.mesh {
                return None;
            }
            ord = ord * radix + composition_rank(row);
        }
        Some(ord)
    }
}

pub fn enumerate_simplex_grid(mesh: u32, cardinality: usize) -> Result<SimplexGrid> {
    SimplexGrid::new(mesh, cardinality)
}

pub fn enumerate_policy_grid(
    mesh_u: u32,
    num_states: usize,
    num_actions: usize,
) -> Result<GriddedPolicySet> {
    GriddedPolicySet::new(mesh_u, num_states, num_actions)
}
