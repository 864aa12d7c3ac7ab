//! Categorical move spaces and product distributions over them.

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::error::{PdError, Result};
use crate::rng::RandomSource;

/// Normalization tolerance every public [`ProductDistribution`] satisfies.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Default probability floor keeping descent iterates off the simplex border.
pub const DEFAULT_FLOOR: f64 = 1e-9;

/// Number of agents and the size of each agent's move set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct CategoricalDomain {
    move_counts: Vec<usize>,
}

impl CategoricalDomain {
    pub fn new(move_counts: Vec<usize>) -> Result<Self> {
        if move_counts.is_empty() {
            return Err(PdError::InvalidParameter("domain needs at least one agent".into()));
        }
        if let Some(i) = move_counts.iter().position(|&n| n == 0) {
            return Err(PdError::InvalidParameter(format!("agent {i} has no moves")));
        }
        Ok(Self { move_counts })
    }

    /// `agents` agents sharing `moves` moves each.
    pub fn uniform(agents: usize, moves: usize) -> Result<Self> {
        Self::new(vec![moves; agents])
    }

    pub fn agent_count(&self) -> usize {
        self.move_counts.len()
    }

    pub fn move_counts(&self) -> &[usize] {
        &self.move_counts
    }

    pub fn moves(&self, agent: usize) -> usize {
        self.move_counts[agent]
    }

    /// Exact joint-space size, which may not fit in a machine word.
    pub fn joint_size(&self) -> BigUint {
        self.move_counts
            .iter()
            .fold(BigUint::from(1u32), |acc, &n| acc * BigUint::from(n))
    }

    /// Joint-space size if it does not exceed `limit`.
    pub fn joint_size_within(&self, limit: usize) -> Option<usize> {
        let mut size: usize = 1;
        for &n in &self.move_counts {
            size = size.checked_mul(n)?;
            if size > limit {
                return None;
            }
        }
        Some(size)
    }

    pub fn contains(&self, x: &[usize]) -> bool {
        x.len() == self.move_counts.len() && x.iter().zip(&self.move_counts).all(|(&m, &n)| m < n)
    }

    /// Row-major joint index with agent 0 varying slowest.
    pub fn encode(&self, x: &[usize]) -> usize {
        x.iter()
            .zip(&self.move_counts)
            .fold(0usize, |acc, (&m, &n)| acc * n + m)
    }

    pub fn decode(&self, mut index: usize) -> Vec<usize> {
        let mut x = vec![0; self.move_counts.len()];
        for (slot, &n) in x.iter_mut().zip(&self.move_counts).rev() {
            *slot = index % n;
            index /= n;
        }
        x
    }

    /// Advances `x` to the next joint move in row-major order. Returns `false`
    /// after wrapping past the last move.
    pub fn advance(&self, x: &mut [usize]) -> bool {
        for (slot, &n) in x.iter_mut().zip(&self.move_counts).rev() {
            *slot += 1;
            if *slot < n {
                return true;
            }
            *slot = 0;
        }
        false
    }
}

impl TryFrom<Vec<usize>> for CategoricalDomain {
    type Error = PdError;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<CategoricalDomain> for Vec<usize> {
    fn from(d: CategoricalDomain) -> Self {
        d.move_counts
    }
}

/// Independent per-agent categorical distributions, `q(x) = Π_i q_i(x_i)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ProductDistribution {
    marginals: Vec<Vec<f64>>,
}

impl ProductDistribution {
    /// Validates the marginals: finite, non-negative, each summing to one.
    pub fn from_marginals(marginals: Vec<Vec<f64>>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(PdError::InvalidDistribution("no agents".into()));
        }
        for (i, q) in marginals.iter().enumerate() {
            if q.is_empty() {
                return Err(PdError::InvalidDistribution(format!("agent {i} has no moves")));
            }
            if let Some(&bad) = q.iter().find(|p| !p.is_finite() || **p < 0.0) {
                return Err(PdError::InvalidDistribution(format!(
                    "agent {i} has component {bad}"
                )));
            }
            let total: f64 = q.iter().sum();
            if (total - 1.0).abs() > NORMALIZATION_TOL {
                return Err(PdError::InvalidDistribution(format!(
                    "agent {i} sums to {total}"
                )));
            }
        }
        Ok(Self { marginals })
    }

    /// Normalizes non-negative weights per agent.
    pub fn from_weights(weights: Vec<Vec<f64>>) -> Result<Self> {
        let mut marginals = Vec::with_capacity(weights.len());
        for (i, w) in weights.into_iter().enumerate() {
            if w.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(PdError::InvalidDistribution(format!(
                    "agent {i} has a negative or non-finite weight"
                )));
            }
            let total: f64 = w.iter().sum();
            if total <= 0.0 {
                return Err(PdError::NoPositiveMass { agent: i });
            }
            marginals.push(w.into_iter().map(|p| p / total).collect());
        }
        Self::from_marginals(marginals)
    }

    pub fn uniform(domain: &CategoricalDomain) -> Self {
        let marginals = domain
            .move_counts()
            .iter()
            .map(|&n| vec![1.0 / n as f64; n])
            .collect();
        Self { marginals }
    }

    /// Deterministic distribution concentrated on joint move `x`.
    pub fn point_mass(domain: &CategoricalDomain, x: &[usize]) -> Result<Self> {
        if !domain.contains(x) {
            return Err(PdError::InvalidParameter(format!("{x:?} outside domain")));
        }
        let marginals = domain
            .move_counts()
            .iter()
            .zip(x)
            .map(|(&n, &m)| {
                let mut q = vec![0.0; n];
                q[m] = 1.0;
                q
            })
            .collect();
        Ok(Self { marginals })
    }

    pub fn domain(&self) -> CategoricalDomain {
        CategoricalDomain {
            move_counts: self.marginals.iter().map(Vec::len).collect(),
        }
    }

    pub fn agent_count(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginal(&self, agent: usize) -> &[f64] {
        &self.marginals[agent]
    }

    pub fn marginals(&self) -> &[Vec<f64>] {
        &self.marginals
    }

    pub fn into_marginals(self) -> Vec<Vec<f64>> {
        self.marginals
    }

    /// Shannon entropy `-Σ_i Σ_j q_i(j) ln q_i(j)`.
    pub fn entropy(&self) -> f64 {
        (0..self.marginals.len()).map(|i| self.agent_entropy(i)).sum()
    }

    pub fn agent_entropy(&self, agent: usize) -> f64 {
        vector_entropy(&self.marginals[agent])
    }

    pub fn joint_probability(&self, x: &[usize]) -> f64 {
        self.marginals.iter().zip(x).map(|(q, &m)| q[m]).product()
    }

    /// Draws one joint move; agents sample independently.
    pub fn sample_joint(&self, rng: &mut RandomSource) -> Vec<usize> {
        self.marginals.iter().map(|q| rng.categorical(q)).collect()
    }

    /// True when every component is at least `floor`.
    pub fn is_interior(&self, floor: f64) -> bool {
        self.marginals.iter().flatten().all(|&p| p >= floor)
    }

    pub fn min_component(&self) -> f64 {
        self.marginals.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    /// Per-agent most probable move, lowest index on ties.
    pub fn modal_move(&self) -> Vec<usize> {
        self.marginals
            .iter()
            .map(|q| {
                q.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (j, &p)| if p > best.1 { (j, p) } else { best })
                    .0
            })
            .collect()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.marginals
            .iter()
            .flatten()
            .zip(other.marginals.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Multiplies each component by `1 + scale·(2u - 1)` and renormalizes.
    pub fn jittered(&self, scale: f64, rng: &mut RandomSource) -> Result<Self> {
        let weights = self
            .marginals
            .iter()
            .map(|q| q.iter().map(|&p| p * (1.0 + scale * (2.0 * rng.uniform() - 1.0))).collect())
            .collect();
        Self::from_weights(weights)
    }
}

pub(crate) fn vector_entropy(q: &[f64]) -> f64 {
    -q.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Shannon entropy of a product distribution.
pub fn entropy(q: &ProductDistribution) -> f64 {
    q.entropy()
}

/// `Σ p1 ln(p1/p2)` over two distributions on the same support.
pub fn kl_divergence(p1: &[f64], p2: &[f64]) -> Result<f64> {
    if p1.len() != p2.len() {
        return Err(PdError::DimensionMismatch { expected: p1.len(), found: p2.len() });
    }
    let mut total = 0.0;
    for (index, (&a, &b)) in p1.iter().zip(p2).enumerate() {
        if a > 0.0 {
            if b <= 0.0 {
                return Err(PdError::KlUndefined { index, mass: a });
            }
            total += a * (a / b).ln();
        }
    }
    Ok(total.max(0.0))
}

/// Clips one vector to `floor` and rescales the unclipped part so the whole
/// sums to one. Components that fall under the floor after rescaling are
/// clipped in turn.
pub(crate) fn clip_to_floor(raw: &[f64], floor: f64) -> Option<Vec<f64>> {
    if !raw.iter().any(|&v| v > 0.0) {
        return None;
    }
    let n = raw.len();
    let mut clipped = vec![false; n];
    loop {
        let pinned = clipped.iter().filter(|&&c| c).count();
        let free_mass = 1.0 - floor * pinned as f64;
        let free_sum: f64 = raw
            .iter()
            .zip(&clipped)
            .filter(|(_, &c)| !c)
            .map(|(&v, _)| v.max(0.0))
            .sum();
        if free_sum <= 0.0 {
            return None;
        }
        let scale = free_mass / free_sum;
        let mut changed = false;
        for j in 0..n {
            if !clipped[j] && raw[j].max(0.0) * scale < floor {
                clipped[j] = true;
                changed = true;
            }
        }
        if !changed {
            let out = raw
                .iter()
                .zip(&clipped)
                .map(|(&v, &c)| if c { floor } else if scale == 1.0 { v.max(0.0) } else { v.max(0.0) * scale })
                .collect();
            return Some(out);
        }
    }
}

/// Maps raw per-agent vectors (possibly with negative entries after a descent
/// step) back into the interior: every component at least `floor`, each agent
/// summing to one.
pub fn project_interior(raw: Vec<Vec<f64>>, floor: f64) -> Result<ProductDistribution> {
    if !(0.0..1.0).contains(&floor) || !floor.is_finite() {
        return Err(PdError::InvalidParameter(format!("floor {floor} outside [0, 1)")));
    }
    let mut marginals = Vec::with_capacity(raw.len());
    for (agent, q) in raw.iter().enumerate() {
        if floor * q.len() as f64 > 1.0 {
            return Err(PdError::InvalidParameter(format!(
                "floor {floor} infeasible for {} moves",
                q.len()
            )));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(PdError::InvalidDistribution(format!("agent {agent} has a non-finite component")));
        }
        let mut projected = clip_to_floor(q, floor).ok_or(PdError::NoPositiveMass { agent })?;
        // Rescaling leaves a few ulps of drift; the largest component absorbs it.
        let total: f64 = projected.iter().sum();
        if (total - 1.0).abs() > 4.0 * f64::EPSILON {
            let top = (0..projected.len())
                .max_by(|&a, &b| projected[a].total_cmp(&projected[b]))
                .unwrap_or(0);
            projected[top] += 1.0 - total;
        }
        marginals.push(projected);
    }
    ProductDistribution::from_marginals(marginals)
}
