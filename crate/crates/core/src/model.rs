//! The team model: finite state and action spaces, a transition kernel that is
//! affine in the population measure, and a running cost that is quadratic in it.
//!
//! ```text
//! T(x'|x,u,μ) = A[x,u,x'] + Σ_z B[x,u,x',z] μ(z)
//! c(x,u,μ)    = c0[x,u] + Σ_z c1[x,u,z] μ(z) + Σ_{z,z'} c2[x,u,z,z'] μ(z) μ(z')
//! ```
//!
//! Because the kernel is affine in `μ`, checking that `T(·|x,u,δ_z)` is a
//! probability vector at each vertex `δ_z` certifies it on the whole simplex.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::SimplexGrid;

/// Tolerance on the total mass of a probability vector.
pub const NORMALIZATION_TOL: f64 = 1e-12;
/// Tolerance on `θ(· × U) = μ`.
pub const MARGINAL_TOL: f64 = 1e-10;
/// Mesh of the grid on which cost nonnegativity (and its maximum) is checked.
pub const COST_CHECK_MESH: u32 = 8;

/// A probability vector over a finite index set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexPoint(Vec<f64>);

impl SimplexPoint {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_probability_vector(&probs).map_err(|detail| Error::parameter("probs", detail))?;
        Ok(SimplexPoint(probs))
    }

    /// Wraps a vector already known to be a probability vector.
    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        debug_assert!(
            check_probability_vector(&probs).is_ok(),
            "not a probability vector: {probs:?}"
        );
        SimplexPoint(probs)
    }

    /// Point mass on `index`.
    pub fn vertex(len: usize, index: usize) -> Self {
        let mut probs = vec![0.0; len];
        probs[index] = 1.0;
        SimplexPoint(probs)
    }

    pub fn uniform(len: usize) -> Self {
        SimplexPoint(vec![1.0 / len as f64; len])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn l1_distance(&self, other: &SimplexPoint) -> f64 {
        l1_distance(&self.0, &other.0)
    }
}

impl TryFrom<Vec<f64>> for SimplexPoint {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        SimplexPoint::new(v)
    }
}

impl From<SimplexPoint> for Vec<f64> {
    fn from(p: SimplexPoint) -> Self {
        p.0
    }
}

pub(crate) fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn check_probability_vector(probs: &[f64]) -> std::result::Result<(), String> {
    if probs.is_empty() {
        return Err("empty probability vector".into());
    }
    if let Some((i, p)) = probs
        .iter()
        .enumerate()
        .find(|(_, p)| !p.is_finite() || **p < 0.0)
    {
        return Err(format!("entry {i} is {p}, expected a finite value >= 0"));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(format!("entries sum to {total}, expected 1"));
    }
    Ok(())
}

/// JSON document describing a model; tensors are nested arrays in row-major
/// `(x, u, x', z)` order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub num_states: usize,
    pub num_actions: usize,
    pub kernel_base: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_coupling: Option<Vec<Vec<Vec<Vec<f64>>>>>,
    pub cost_const: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_linear: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_quad: Option<Vec<Vec<Vec<Vec<f64>>>>>,
    pub discount: f64,
    pub initial_dist: Vec<f64>,
}

/// A validated team model. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentModel {
    name: String,
    description: Option<String>,
    nx: usize,
    nu: usize,
    kernel_base: Vec<f64>,
    kernel_coupling: Option<Vec<f64>>,
    cost_const: Vec<f64>,
    cost_linear: Option<Vec<f64>>,
    cost_quad: Option<Vec<f64>>,
    discount: f64,
    initial_dist: SimplexPoint,
}

fn flatten<T: Clone>(
    field: &'static str,
    nested: &[Vec<T>],
    outer: usize,
    inner: usize,
) -> Result<Vec<T>> {
    if nested.len() != outer {
        return Err(Error::validation(
            field,
            format!("expected {outer} entries, found {}", nested.len()),
        ));
    }
    let mut flat = Vec::with_capacity(outer * inner);
    for (i, row) in nested.iter().enumerate() {
        if row.len() != inner {
            return Err(Error::validation(
                field,
                format!("entry {i} has length {}, expected {inner}", row.len()),
            ));
        }
        flat.extend_from_slice(row);
    }
    Ok(flat)
}

fn flatten3(field: &'static str, t: &[Vec<Vec<f64>>], dims: [usize; 3]) -> Result<Vec<f64>> {
    let rows = flatten(field, t, dims[0], dims[1])?;
    flatten(field, &rows, dims[0] * dims[1], dims[2])
}

fn flatten4(field: &'static str, t: &[Vec<Vec<Vec<f64>>>], dims: [usize; 4]) -> Result<Vec<f64>> {
    let rows = flatten(field, t, dims[0], dims[1])?;
    let rows = flatten(field, &rows, dims[0] * dims[1], dims[2])?;
    flatten(field, &rows, dims[0] * dims[1] * dims[2], dims[3])
}

fn nest<T: Clone>(flat: &[T], inner: usize) -> Vec<Vec<T>> {
    flat.chunks(inner).map(<[T]>::to_vec).collect()
}

fn check_finite(field: &'static str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::validation(field, format!("non-finite entry at flat index {i}"))),
        None => Ok(()),
    }
}

impl EnvironmentModel {
    pub fn from_config(cfg: ModelConfig) -> Result<Self> {
        let (nx, nu) = (cfg.num_states, cfg.num_actions);
        if nx == 0 {
            return Err(Error::validation("num_states", "must be at least 1"));
        }
        if nu == 0 {
            return Err(Error::validation("num_actions", "must be at least 1"));
        }
        let kernel_base = flatten3("kernel_base", &cfg.kernel_base, [nx, nu, nx])?;
        check_finite("kernel_base", &kernel_base)?;
        let kernel_coupling = cfg
            .kernel_coupling
            .as_deref()
            .map(|b| flatten4("kernel_coupling", b, [nx, nu, nx, nx]))
            .transpose()?;
        if let Some(b) = &kernel_coupling {
            check_finite("kernel_coupling", b)?;
        }
        let cost_const = flatten("cost_const", &cfg.cost_const, nx, nu)?;
        check_finite("cost_const", &cost_const)?;
        let cost_linear = cfg
            .cost_linear
            .as_deref()
            .map(|c| flatten3("cost_linear", c, [nx, nu, nx]))
            .transpose()?;
        if let Some(c) = &cost_linear {
            check_finite("cost_linear", c)?;
        }
        let cost_quad = cfg
            .cost_quad
            .as_deref()
            .map(|c| flatten4("cost_quad", c, [nx, nu, nx, nx]))
            .transpose()?;
        if let Some(c) = &cost_quad {
            check_finite("cost_quad", c)?;
        }
        if !(cfg.discount > 0.0 && cfg.discount <= 1.0) {
            return Err(Error::validation(
                "discount",
                format!("{} is outside (0, 1]", cfg.discount),
            ));
        }
        if cfg.initial_dist.len() != nx {
            return Err(Error::validation(
                "initial_dist",
                format!("expected {nx} entries, found {}", cfg.initial_dist.len()),
            ));
        }
        let initial_dist = SimplexPoint::new(cfg.initial_dist)
            .map_err(|e| Error::validation("initial_dist", e.to_string()))?;

        let model = EnvironmentModel {
            name: cfg.name,
            description: cfg.description,
            nx,
            nu,
            kernel_base,
            kernel_coupling,
            cost_const,
            cost_linear,
            cost_quad,
            discount: cfg.discount,
            initial_dist,
        };
        model.validate_kernel()?;
        model.validate_cost()?;
        Ok(model)
    }

    fn validate_kernel(&self) -> Result<()> {
        let nx = self.nx;
        if let Some(i) = self.kernel_base.iter().position(|&a| a < 0.0) {
            let (x, u, y) = (i / (self.nu * nx), (i / nx) % self.nu, i % nx);
            return Err(Error::validation(
                "kernel_base",
                format!("negative entry {} at (x={x}, u={u}, x'={y})", self.kernel_base[i]),
            ));
        }
        let mut row = vec![0.0; nx];
        for x in 0..nx {
            for u in 0..self.nu {
                for z in 0..nx {
                    self.kernel_into(x, u, &SimplexPoint::vertex(nx, z).0, &mut row);
                    let field = if self.kernel_coupling.is_some() {
                        "kernel_coupling"
                    } else {
                        "kernel_base"
                    };
                    if let Some(y) = row.iter().position(|&p| p < -NORMALIZATION_TOL) {
                        return Err(Error::validation(
                            field,
                            format!(
                                "T(x'={y}|x={x},u={u},mu=delta_{z}) = {} is negative",
                                row[y]
                            ),
                        ));
                    }
                    let total: f64 = row.iter().sum();
                    if (total - 1.0).abs() > NORMALIZATION_TOL {
                        return Err(Error::validation(
                            field,
                            format!(
                                "T(.|x={x},u={u},mu=delta_{z}) sums to {total} at (x={x}, u={u}, z={z})"
                            ),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    fn validate_cost(&self) -> Result<()> {
        // Finite certificate only: nonnegativity is checked on the mesh-1/8 grid.
        let grid = SimplexGrid::new(COST_CHECK_MESH, self.nx)?;
        for g in 0..grid.len() {
            let mu = grid.point(g);
            for x in 0..self.nx {
                for u in 0..self.nu {
                    let c = self.cost(x, u, mu.probs());
                    if c < 0.0 {
                        return Err(Error::validation(
                            "cost",
                            format!("c(x={x},u={u},mu={:?}) = {c} is negative", mu.probs()),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Self::from_config(serde_json::from_str(text)?)
    }

    pub fn to_config(&self) -> ModelConfig {
        let (nx, nu) = (self.nx, self.nu);
        ModelConfig {
            name: self.name.clone(),
            description: self.description.clone(),
            num_states: nx,
            num_actions: nu,
            kernel_base: nest(&nest(&self.kernel_base, nx), nu),
            kernel_coupling: self
                .kernel_coupling
                .as_ref()
                .map(|b| nest(&nest(&nest(b, nx), nx), nu)),
            cost_const: nest(&self.cost_const, nu),
            cost_linear: self.cost_linear.as_ref().map(|c| nest(&nest(c, nx), nu)),
            cost_quad: self
                .cost_quad
                .as_ref()
                .map(|c| nest(&nest(&nest(c, nx), nx), nu)),
            discount: self.discount,
            initial_dist: self.initial_dist.0.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_config()).expect("model config serializes")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn description(&self) -> Option<&str> {
        self.description.as_deref()
    }

    pub fn num_states(&self) -> usize {
        self.nx
    }

    pub fn num_actions(&self) -> usize {
        self.nu
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn initial_dist(&self) -> &SimplexPoint {
        &self.initial_dist
    }

    /// Copy of the model with another initial distribution.
    pub fn with_initial_dist(&self, dist: SimplexPoint) -> Result<Self> {
        if dist.len() != self.nx {
            return Err(Error::validation("initial_dist", "length differs from num_states"));
        }
        Ok(EnvironmentModel {
            initial_dist: dist,
            ..self.clone()
        })
    }

    /// True when neither the kernel nor the cost depends on `μ`.
    pub fn is_decoupled(&self) -> bool {
        let zero = |t: &Option<Vec<f64>>| t.as_ref().is_none_or(|v| v.iter().all(|&a| a == 0.0));
        zero(&self.kernel_coupling) && zero(&self.cost_linear) && zero(&self.cost_quad)
    }

    /// Writes `T(·|x,u,μ)` into `out`. Rounding-level negatives are clamped to zero.
    pub fn kernel_into(&self, x: usize, u: usize, mu: &[f64], out: &mut [f64]) {
        let nx = self.nx;
        let base = (x * self.nu + u) * nx;
        out.copy_from_slice(&self.kernel_base[base..base + nx]);
        if let Some(b) = &self.kernel_coupling {
            for (y, o) in out.iter_mut().enumerate() {
                let row = &b[(base + y) * nx..(base + y + 1) * nx];
                *o += row.iter().zip(mu).map(|(b, m)| b * m).sum::<f64>();
            }
        }
        for o in out.iter_mut() {
            if *o < 0.0 {
                *o = 0.0;
            }
        }
    }

    pub fn kernel_at(&self, x: usize, u: usize, mu: &SimplexPoint) -> SimplexPoint {
        let mut out = vec![0.0; self.nx];
        self.kernel_into(x, u, mu.probs(), &mut out);
        SimplexPoint(out)
    }

    /// `c(x,u,μ)` for a raw probability slice.
    pub fn cost(&self, x: usize, u: usize, mu: &[f64]) -> f64 {
        let nx = self.nx;
        let cell = x * self.nu + u;
        let mut c = self.cost_const[cell];
        if let Some(c1) = &self.cost_linear {
            c += c1[cell * nx..(cell + 1) * nx]
                .iter()
                .zip(mu)
                .map(|(a, m)| a * m)
                .sum::<f64>();
        }
        if let Some(c2) = &self.cost_quad {
            let block = &c2[cell * nx * nx..(cell + 1) * nx * nx];
            for (z, mz) in mu.iter().enumerate() {
                c += mz
                    * block[z * nx..(z + 1) * nx]
                        .iter()
                        .zip(mu)
                        .map(|(a, m)| a * m)
                        .sum::<f64>();
            }
        }
        c
    }

    pub fn cost_at(&self, x: usize, u: usize, mu: &SimplexPoint) -> f64 {
        self.cost(x, u, mu.probs())
    }

    /// Row-major `|X| x |U|` table of `c(·,·,μ)`.
    pub fn cost_table(&self, mu: &[f64]) -> Vec<f64> {
        (0..self.nx)
            .flat_map(|x| (0..self.nu).map(move |u| (x, u)))
            .map(|(x, u)| self.cost(x, u, mu))
            .collect()
    }

    /// Lifted running cost `Σ_{x,u} c(x,u,μ) θ(x,u)`; `theta` is row-major over `X × U`.
    pub fn running_cost_tilde(&self, theta: &[f64], mu: &SimplexPoint) -> Result<f64> {
        self.check_marginal(theta, mu)?;
        Ok(self.running_cost_unchecked(theta, mu.probs()))
    }

    pub(crate) fn running_cost_unchecked(&self, theta: &[f64], mu: &[f64]) -> f64 {
        let nu = self.nu;
        let mut total = 0.0;
        for x in 0..self.nx {
            for u in 0..nu {
                let w = theta[x * nu + u];
                if w != 0.0 {
                    total += w * self.cost(x, u, mu);
                }
            }
        }
        total
    }

    pub(crate) fn check_marginal(&self, theta: &[f64], mu: &SimplexPoint) -> Result<()> {
        if theta.len() != self.nx * self.nu {
            return Err(Error::parameter("theta", "expected |X| x |U| weights"));
        }
        if theta.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::parameter("theta", "weights must be nonnegative"));
        }
        let deviation = theta
            .chunks(self.nu)
            .zip(mu.probs())
            .map(|(row, m)| (row.iter().sum::<f64>() - m).abs())
            .fold(0.0, f64::max);
        if deviation > MARGINAL_TOL {
            return Err(Error::MarginalMismatch { deviation });
        }
        Ok(())
    }

    /// Largest cost over all `(x,u)` and the mesh-1/8 simplex grid.
    pub fn cost_bound(&self) -> f64 {
        let grid = SimplexGrid::new(COST_CHECK_MESH, self.nx).expect("small grid");
        (0..grid.len())
            .flat_map(|g| self.cost_table(grid.point(g).probs()))
            .fold(0.0, f64::max)
    }
}

pub fn load_model(path: impl AsRef<Path>) -> Result<EnvironmentModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    EnvironmentModel::from_json_str(&text)
}

pub fn kernel_at(model: &EnvironmentModel, x: usize, u: usize, mu: &SimplexPoint) -> SimplexPoint {
    model.kernel_at(x, u, mu)
}

pub fn cost_at(model: &EnvironmentModel, x: usize, u: usize, mu: &SimplexPoint) -> f64 {
    model.cost_at(x, u, mu)
}

pub fn running_cost_tilde(
    model: &EnvironmentModel,
    theta: &[f64],
    mu: &SimplexPoint,
) -> Result<f64> {
    model.running_cost_tilde(theta, mu)
}
