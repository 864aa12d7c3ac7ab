//! The maxent Lagrangian `β·E_q(G) − S(q)`, per-agent Boltzmann responses and
//! the parallel Brouwer update.
//!
//! The expectation target `γ` never appears: it is only a constant offset in
//! the Lagrangian, and raising `β` monotonically stands in for lowering it.

use crate::domain::ProductDistribution;
use crate::error::{PdError, Result};
use crate::oracle;
use crate::utility::GameUtilities;

/// Conditional expectations `E(u_i | x_i = j)` for every agent and move,
/// together with the world expectation `E(G)`, all at one `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditionals {
    values: Vec<Vec<f64>>,
    expected_world: f64,
}

impl Conditionals {
    pub fn new(values: Vec<Vec<f64>>, expected_world: f64) -> Result<Self> {
        if let Some((agent, mv)) = values
            .iter()
            .enumerate()
            .find_map(|(i, row)| row.iter().position(|v| !v.is_finite()).map(|j| (i, j)))
        {
            return Err(PdError::EstimatorUnavailable { agent, mv });
        }
        Ok(Self { values, expected_world })
    }

    pub fn agent(&self, agent: usize) -> &[f64] {
        &self.values[agent]
    }

    pub fn value(&self, agent: usize, mv: usize) -> f64 {
        self.values[agent][mv]
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn expected_world(&self) -> f64 {
        self.expected_world
    }

    /// `Σ_j q_i(j)·E(u_i | x_i = j)`, agent `i`'s view of its expected utility.
    pub fn agent_mean(&self, agent: usize, q: &ProductDistribution) -> f64 {
        q.marginal(agent).iter().zip(&self.values[agent]).map(|(p, v)| p * v).sum()
    }

    fn check_shape(&self, q: &ProductDistribution) -> Result<()> {
        for (i, m) in q.marginals().iter().enumerate() {
            let found = self.values.get(i).map_or(0, Vec::len);
            if found != m.len() {
                return Err(PdError::DimensionMismatch { expected: m.len(), found });
            }
        }
        if self.values.len() != q.agent_count() {
            return Err(PdError::DimensionMismatch { expected: q.agent_count(), found: self.values.len() });
        }
        Ok(())
    }
}

/// Anything that can supply conditional expectations at a given `q`.
pub trait ExpectationSource {
    fn conditionals(&mut self, q: &ProductDistribution) -> Result<Conditionals>;

    /// True when results are exact and repeatable.
    fn is_exact(&self) -> bool {
        false
    }
}

/// A fixed table, independent of `q`.
impl ExpectationSource for Conditionals {
    fn conditionals(&mut self, q: &ProductDistribution) -> Result<Conditionals> {
        self.check_shape(q)?;
        Ok(self.clone())
    }
}

/// Exact conditionals by enumeration of the joint space.
#[derive(Debug, Clone)]
pub struct ExactSource {
    utilities: GameUtilities,
}

impl ExactSource {
    pub fn new(utilities: GameUtilities) -> Result<Self> {
        oracle::check_guard(utilities.domain())?;
        Ok(Self { utilities })
    }

    pub fn utilities(&self) -> &GameUtilities {
        &self.utilities
    }
}

impl ExpectationSource for ExactSource {
    fn conditionals(&mut self, q: &ProductDistribution) -> Result<Conditionals> {
        let values = oracle::game_conditionals(&self.utilities, q)?;
        let expected_world = if self.utilities.private().is_team() {
            q.marginal(0).iter().zip(&values[0]).map(|(p, v)| p * v).sum()
        } else {
            oracle::exact_expectation(self.utilities.world(), q)?
        };
        Conditionals::new(values, expected_world)
    }

    fn is_exact(&self) -> bool {
        true
    }
}

/// Schedule state carried through a run.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnealState {
    beta: f64,
    step_size: f64,
    iteration: u64,
    /// Threshold `K` for the threshold variants.
    pub threshold: f64,
    /// Percentile retained by the percentile variant, in `(0, 1]`.
    kappa_pct: f64,
    /// Exponential aging constant for Monte-Carlo estimates.
    pub kappa_age: f64,
    pub block_len: usize,
}

impl AnnealState {
    pub fn new(beta: f64, step_size: f64) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(PdError::InvalidParameter(format!("beta must be finite and >= 0, got {beta}")));
        }
        if !(step_size > 0.0 && step_size.is_finite()) {
            return Err(PdError::InvalidParameter(format!("step size must be > 0, got {step_size}")));
        }
        Ok(Self {
            beta,
            step_size,
            iteration: 0,
            threshold: f64::INFINITY,
            kappa_pct: 1.0,
            kappa_age: 0.0,
            block_len: 1,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn kappa_pct(&self) -> f64 {
        self.kappa_pct
    }

    pub fn set_kappa_pct(&mut self, kappa: f64) -> Result<()> {
        if !(kappa > 0.0 && kappa <= 1.0) {
            return Err(PdError::InvalidParameter(format!("percentile must be in (0, 1], got {kappa}")));
        }
        self.kappa_pct = kappa;
        Ok(())
    }

    /// Raises `β`; decreases are rejected.
    pub fn set_beta(&mut self, beta: f64) -> Result<()> {
        if !beta.is_finite() || beta < self.beta {
            return Err(PdError::BetaDecrease { current: self.beta, requested: beta });
        }
        self.beta = beta;
        Ok(())
    }

    pub fn scale_beta(&mut self, factor: f64) -> Result<()> {
        self.set_beta(self.beta * factor)
    }

    pub fn tick(&mut self) {
        self.iteration += 1;
    }
}

/// `β·E(G) − S(q)`, with `E(G)` taken from `src`.
pub fn maxent_lagrangian<S>(q: &ProductDistribution, src: &mut S, beta: f64) -> Result<f64>
where
    S: ExpectationSource + ?Sized,
{
    let c = src.conditionals(q)?;
    Ok(lagrangian_value(q, &c, beta))
}

pub(crate) fn lagrangian_value(q: &ProductDistribution, c: &Conditionals, beta: f64) -> f64 {
    // β = 0 must give exactly −S even if E(G) is huge.
    let energy = if beta == 0.0 { 0.0 } else { beta * c.expected_world() };
    energy - q.entropy()
}

/// Normalized `exp(−β·v_j)`, shifted by the minimum so large `β` cannot
/// overflow.
pub fn boltzmann_weights(values: &[f64], beta: f64) -> Vec<f64> {
    if beta == 0.0 {
        return vec![1.0 / values.len() as f64; values.len()];
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = values.iter().map(|&v| (-beta * (v - min)).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Mean and variance of `values` under their Boltzmann weights.
pub fn boltzmann_moments(values: &[f64], beta: f64) -> (f64, f64) {
    let w = boltzmann_weights(values, beta);
    let mean: f64 = w.iter().zip(values).map(|(p, v)| p * v).sum();
    let var = w.iter().zip(values).map(|(p, v)| p * (v - mean).powi(2)).sum();
    (mean, var)
}

/// Agent `i`'s best response with every other agent held fixed:
/// `q_i(j) ∝ exp(−β·E(u_i | x_i = j))`.
pub fn boltzmann_response<S>(q: &ProductDistribution, src: &mut S, agent: usize, beta: f64) -> Result<Vec<f64>>
where
    S: ExpectationSource + ?Sized,
{
    if agent >= q.agent_count() {
        return Err(PdError::InvalidParameter(format!("no agent {agent}")));
    }
    let c = src.conditionals(q)?;
    c.check_shape(q)?;
    Ok(boltzmann_weights(c.agent(agent), beta))
}

/// Largest gap between any agent's marginal and its Boltzmann response.
pub fn boltzmann_residual<S>(q: &ProductDistribution, src: &mut S, beta: f64) -> Result<f64>
where
    S: ExpectationSource + ?Sized,
{
    let c = src.conditionals(q)?;
    c.check_shape(q)?;
    Ok((0..q.agent_count())
        .flat_map(|i| {
            let r = boltzmann_weights(c.agent(i), beta);
            q.marginal(i).iter().zip(r).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>()
        })
        .fold(0.0, f64::max))
}

/// Default blend between old marginals and the simultaneous best responses.
pub const DEFAULT_BROUWER_MIX: f64 = 0.5;

/// Every agent moves toward its Boltzmann response computed against the same
/// pre-step `q`: `q_i ← (1 − mix)·q_i + mix·response_i`. `mix = 1` is the
/// undamped update.
pub fn brouwer_step<S>(q: &ProductDistribution, src: &mut S, beta: f64, mix: f64) -> Result<ProductDistribution>
where
    S: ExpectationSource + ?Sized,
{
    if !(mix > 0.0 && mix <= 1.0) {
        return Err(PdError::InvalidParameter(format!("mixing weight must be in (0, 1], got {mix}")));
    }
    let c = src.conditionals(q)?;
    c.check_shape(q)?;
    let weights = (0..q.agent_count())
        .map(|i| {
            let r = boltzmann_weights(c.agent(i), beta);
            q.marginal(i).iter().zip(r).map(|(&old, new)| (1.0 - mix) * old + mix * new).collect()
        })
        .collect();
    ProductDistribution::from_weights(weights)
}
