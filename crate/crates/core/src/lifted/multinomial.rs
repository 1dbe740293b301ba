//! Exact laws of summed count vectors.
//!
//! A group of `m` agents that each draw their next state independently from
//! the same law `p` produces a multinomial count vector. Groups with
//! different laws are independent, so the population's count vector is the
//! convolution of the per-group multinomials.

use crate::error::{Error, Result};
use crate::measure::{composition_count, composition_rank, compositions, DEFAULT_CAP};
use crate::model::SimplexPoint;

/// Law of a count vector with a fixed total, stored densely by composition rank.
#[derive(Clone, Debug, PartialEq)]
pub struct CountDistribution {
    categories: usize,
    total: u32,
    probs: Vec<f64>,
}

impl CountDistribution {
    /// The law of the empty population (all counts zero).
    pub fn empty(categories: usize) -> Self {
        CountDistribution {
            categories,
            total: 0,
            probs: vec![1.0],
        }
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    /// Dense probabilities indexed by the rank of the count vector.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    pub fn prob(&self, counts: &[u32]) -> f64 {
        if counts.len() != self.categories || counts.iter().sum::<u32>() != self.total {
            return 0.0;
        }
        self.probs[composition_rank(counts)]
    }

    /// Nonzero entries as `(counts, probability)` in rank order.
    pub fn support(&self) -> Vec<(Vec<u32>, f64)> {
        compositions(self.total, self.categories)
            .into_iter()
            .zip(&self.probs)
            .filter(|(_, &p)| p > 0.0)
            .map(|(c, &p)| (c, p))
            .collect()
    }

    /// `(rank, probability)` for nonzero entries.
    pub fn sparse(&self) -> Vec<(u32, f64)> {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, &p)| (i as u32, p))
            .collect()
    }

    pub fn convolve(&self, other: &CountDistribution) -> Result<CountDistribution> {
        debug_assert_eq!(self.categories, other.categories);
        let total = self.total + other.total;
        let size = support_size(total, self.categories)?;
        let mut probs = vec![0.0; size];
        let left = compositions(self.total, self.categories);
        let right: Vec<(Vec<u32>, f64)> = compositions(other.total, other.categories)
            .into_iter()
            .zip(&other.probs)
            .filter(|(_, &p)| p > 0.0)
            .map(|(c, &p)| (c, p))
            .collect();
        let mut sum = vec![0u32; self.categories];
        for (a, &pa) in left.iter().zip(&self.probs) {
            if pa == 0.0 {
                continue;
            }
            for (b, pb) in &right {
                for ((s, x), y) in sum.iter_mut().zip(a).zip(b) {
                    *s = x + y;
                }
                probs[composition_rank(&sum)] += pa * pb;
            }
        }
        Ok(CountDistribution {
            categories: self.categories,
            total,
            probs,
        })
    }
}

fn support_size(total: u32, categories: usize) -> Result<usize> {
    match composition_count(total, categories) {
        Some(n) if n <= DEFAULT_CAP as u128 => Ok(n as usize),
        n => Err(Error::CapExceeded {
            what: "count distribution support",
            size: n.unwrap_or(u128::MAX),
            cap: DEFAULT_CAP,
        }),
    }
}

/// Multinomial law of `multiplicity` independent draws from `law`.
pub fn cell_multinomial(law: &[f64], multiplicity: u32) -> Result<CountDistribution> {
    let k = law.len();
    let size = support_size(multiplicity, k)?;
    let mut probs = vec![0.0; size];
    // Only categories with positive mass can receive draws.
    let active: Vec<usize> = (0..k).filter(|&i| law[i] > 0.0).collect();
    if multiplicity > 0 && active.is_empty() {
        return Err(Error::parameter("law", "has no positive mass"));
    }
    let mut counts = vec![0u32; k];
    for sub in compositions(multiplicity, active.len()) {
        let mut p = 1.0;
        let mut placed = 0u32;
        counts.iter_mut().for_each(|c| *c = 0);
        for (&i, &c) in active.iter().zip(&sub) {
            counts[i] = c;
            placed += c;
            // Multinomial coefficient built as a product of binomials.
            p *= binomial_f64(placed, c) * law[i].powi(c as i32);
        }
        probs[composition_rank(&counts)] += p;
    }
    Ok(CountDistribution {
        categories: k,
        total: multiplicity,
        probs,
    })
}

fn binomial_f64(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Law of the summed count vector when, for each `(law, m)` cell, `m` agents
/// draw independently from `law`.
pub fn multinomial_count_distribution(cells: &[(SimplexPoint, u32)]) -> Result<CountDistribution> {
    let categories = cells
        .first()
        .map(|(law, _)| law.len())
        .ok_or_else(|| Error::parameter("cells", "at least one cell required"))?;
    if cells.iter().any(|(law, _)| law.len() != categories) {
        return Err(Error::parameter("cells", "laws have different lengths"));
    }
    convolve_cells(categories, cells.iter().map(|(law, m)| (law.probs(), *m)))
}

pub(crate) fn convolve_cells<'a>(
    categories: usize,
    cells: impl IntoIterator<Item = (&'a [f64], u32)>,
) -> Result<CountDistribution> {
    let mut acc = CountDistribution::empty(categories);
    for (law, m) in cells {
        if m == 0 {
            continue;
        }
        let cell = cell_multinomial(law, m)?;
        acc = if acc.total == 0 { cell } else { acc.convolve(&cell)? };
    }
    Ok(acc)
}
