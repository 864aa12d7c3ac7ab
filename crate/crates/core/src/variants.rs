//! Alternative objectives and update rules built on the same machinery:
//! percentile restriction of the samples, monotone utility transforms,
//! a threshold objective `q(G < K)` with its gradient update, and the
//! marginal-of-θ updates that replace `q` by the product of marginals of a
//! sharpened joint distribution.

use serde::{Deserialize, Serialize};

use crate::domain::{project_interior, CategoricalDomain, ProductDistribution, DEFAULT_FLOOR};
use crate::error::{PdError, Result};
use crate::oracle;
use crate::utility::{JointSample, UtilityTransform, WorldUtility};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantKind {
    Percentile,
    Transform,
    ThresholdGradient,
    KlpqThreshold,
    KlpqExponential,
}

/// How the threshold `K` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Threshold {
    Fixed { value: f64 },
    /// Reset every block so that this fraction of the points falls below `K`.
    Percentile { fraction: f64 },
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Percentile { fraction: 0.25 }
    }
}

/// Indicator used for `Θ(K − G)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Smoothing {
    #[default]
    Heaviside,
    Logistic { scale: f64 },
}

impl Smoothing {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Smoothing::Logistic { scale } if !(scale > 0.0 && scale.is_finite()) => {
                Err(PdError::InvalidParameter(format!("logistic scale must be > 0, got {scale}")))
            }
            _ => Ok(()),
        }
    }

    /// Soft or hard indicator of `g < threshold`.
    pub fn indicator(&self, threshold: f64, g: f64) -> f64 {
        match *self {
            Smoothing::Heaviside => {
                if g < threshold {
                    1.0
                } else {
                    0.0
                }
            }
            Smoothing::Logistic { scale } => {
                let z = (threshold - g) / scale;
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    pub kind: VariantKind,
    #[serde(default = "default_kappa_pct")]
    pub kappa_pct: f64,
    #[serde(default)]
    pub threshold: Threshold,
    #[serde(default)]
    pub smoothing: Smoothing,
    #[serde(default)]
    pub transform: UtilityTransform,
    /// Steps without Lagrangian improvement before the transform engages.
    #[serde(default = "default_stall_window")]
    pub stall_window: usize,
    /// Additive smoothing on empirical frequencies in the sampled θ updates.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_kappa_pct() -> f64 {
    0.25
}

fn default_stall_window() -> usize {
    DEFAULT_STALL_WINDOW
}

fn default_epsilon() -> f64 {
    DEFAULT_FLOOR
}

impl VariantConfig {
    pub fn new(kind: VariantKind) -> Self {
        Self {
            kind,
            kappa_pct: default_kappa_pct(),
            threshold: Threshold::default(),
            smoothing: Smoothing::default(),
            transform: UtilityTransform::default(),
            stall_window: DEFAULT_STALL_WINDOW,
            epsilon: DEFAULT_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_pct > 0.0 && self.kappa_pct <= 1.0) {
            return Err(PdError::InvalidParameter(format!("kappa_pct must be in (0, 1], got {}", self.kappa_pct)));
        }
        match self.threshold {
            Threshold::Fixed { value } if value.is_nan() => {
                return Err(PdError::InvalidParameter("threshold is NaN".into()));
            }
            Threshold::Percentile { fraction } if !(fraction > 0.0 && fraction <= 1.0) => {
                return Err(PdError::InvalidParameter(format!("threshold fraction must be in (0, 1], got {fraction}")));
            }
            _ => {}
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(PdError::InvalidParameter(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.stall_window == 0 {
            return Err(PdError::InvalidParameter("stall window must be positive".into()));
        }
        self.smoothing.validate()?;
        self.transform.validate()
    }
}

fn kept_count(n: usize, kappa: f64) -> usize {
    // The slack absorbs products like 0.1·30 landing one ulp above an integer.
    let raw = kappa * n as f64;
    ((raw - raw * 1e-12).ceil() as usize).clamp(1, n)
}

/// Keeps the `⌈κ·N⌉` samples with smallest world utility, ties going to the
/// earlier sample. Retained samples keep their original order.
pub fn percentile_filter(samples: &[JointSample], kappa: f64) -> Result<Vec<JointSample>> {
    if samples.is_empty() {
        return Err(PdError::EmptyInput("percentile filter needs at least one sample"));
    }
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(PdError::InvalidParameter(format!("kappa_pct must be in (0, 1], got {kappa}")));
    }
    let keep = kept_count(samples.len(), kappa);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].world.total_cmp(&samples[b].world).then(a.cmp(&b)));
    let mut kept = order[..keep].to_vec();
    kept.sort_unstable();
    Ok(kept.into_iter().map(|k| samples[k].clone()).collect())
}

/// `f ∘ G` for a validated monotone `f`.
pub fn transform_utility(u: &WorldUtility, f: UtilityTransform) -> Result<WorldUtility> {
    f.validate()?;
    Ok(u.with_transform(f))
}

/// `q(Θ(K − G) | x_i = j)` by enumeration.
pub fn exact_bits(u: &WorldUtility, q: &ProductDistribution, threshold: f64, smoothing: Smoothing) -> Result<Vec<Vec<f64>>> {
    smoothing.validate()?;
    oracle::conditionals_with(u, q, |g| smoothing.indicator(threshold, g))
}

/// Sample average of `Θ(K − G)` per `(agent, move)` over the samples that may
/// inform that agent.
pub fn sample_bits(
    domain: &CategoricalDomain,
    samples: &[JointSample],
    threshold: f64,
    smoothing: Smoothing,
) -> Result<Vec<Vec<f64>>> {
    smoothing.validate()?;
    let mut sums: Vec<Vec<f64>> = domain.move_counts().iter().map(|&m| vec![0.0; m]).collect();
    let mut counts: Vec<Vec<usize>> = domain.move_counts().iter().map(|&m| vec![0; m]).collect();
    for s in samples {
        let b = smoothing.indicator(threshold, s.world);
        for (i, &j) in s.moves.iter().enumerate() {
            if s.informs(i) {
                sums[i][j] += b;
                counts[i][j] += 1;
            }
        }
    }
    sums.iter()
        .zip(&counts)
        .enumerate()
        .map(|(i, (row, n))| {
            row.iter()
                .zip(n)
                .enumerate()
                .map(|(j, (&s, &n))| if n == 0 { Err(PdError::NoCoverage { agent: i, mv: j }) } else { Ok(s / n as f64) })
                .collect()
        })
        .collect()
}

/// Per-agent additive terms `βb − ln q − mean_j(βb − ln q)` of the threshold
/// update; raising `q(G < K)` and the entropy together.
pub fn threshold_direction(q: &ProductDistribution, bits: &[Vec<f64>], beta: f64) -> Result<Vec<Vec<f64>>> {
    if bits.len() != q.agent_count() {
        return Err(PdError::DimensionMismatch { expected: q.agent_count(), found: bits.len() });
    }
    (0..q.agent_count())
        .map(|i| {
            let qi = q.marginal(i);
            if bits[i].len() != qi.len() {
                return Err(PdError::DimensionMismatch { expected: qi.len(), found: bits[i].len() });
            }
            let raw: Vec<f64> = qi.iter().zip(&bits[i]).map(|(&p, &b)| beta * b - p.ln()).collect();
            let mean = raw.iter().sum::<f64>() / raw.len() as f64;
            Ok(raw.into_iter().map(|v| v - mean).collect())
        })
        .collect()
}

/// `q_i += α·direction_i`, then back into the interior.
pub fn threshold_gradient_step(
    q: &ProductDistribution,
    bits: &[Vec<f64>],
    beta: f64,
    alpha: f64,
    floor: f64,
) -> Result<ProductDistribution> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(PdError::InvalidParameter(format!("step size must be >= 0, got {alpha}")));
    }
    if alpha == 0.0 {
        return Ok(q.clone());
    }
    let dir = threshold_direction(q, bits, beta)?;
    let raw = q
        .marginals()
        .iter()
        .zip(dir)
        .map(|(qi, d)| qi.iter().zip(d).map(|(p, d)| p + alpha * d).collect())
        .collect();
    project_interior(raw, floor)
}

fn finish(weights: Vec<Vec<f64>>, floor: f64) -> Result<ProductDistribution> {
    let q = ProductDistribution::from_weights(weights)?;
    if floor > 0.0 && !q.is_interior(floor) {
        return project_interior(q.into_marginals(), floor);
    }
    Ok(q)
}

/// Marginals of `θ(x) ∝ q'(x)·[G(x) < K]`, by enumeration.
pub fn klpq_threshold_exact(u: &WorldUtility, q: &ProductDistribution, threshold: f64, floor: f64) -> Result<ProductDistribution> {
    let bits = exact_bits(u, q, threshold, Smoothing::Heaviside)?;
    let mass: f64 = q.marginal(0).iter().zip(&bits[0]).map(|(p, b)| p * b).sum();
    if !(mass > 0.0) {
        return Err(PdError::EmptyTruncation { threshold });
    }
    let weights = (0..q.agent_count())
        .map(|i| q.marginal(i).iter().zip(&bits[i]).map(|(p, b)| p * b / mass).collect())
        .collect();
    finish(weights, floor)
}

fn regular(samples: &[JointSample]) -> impl Iterator<Item = &JointSample> {
    samples.iter().filter(|s| !s.is_forced())
}

fn smoothed_frequencies(domain: &CategoricalDomain, weighted: &[(&JointSample, f64)], epsilon: f64, floor: f64) -> Result<ProductDistribution> {
    let mut weights: Vec<Vec<f64>> = domain.move_counts().iter().map(|&m| vec![epsilon; m]).collect();
    for (s, w) in weighted {
        for (i, &j) in s.moves.iter().enumerate() {
            weights[i][j] += w;
        }
    }
    finish(weights, floor)
}

/// Sample version of [`klpq_threshold_exact`]: frequencies of each move among
/// the regular samples with `G < K`, with `epsilon` added to every count.
pub fn klpq_threshold_sampled(
    domain: &CategoricalDomain,
    samples: &[JointSample],
    threshold: f64,
    epsilon: f64,
    floor: f64,
) -> Result<ProductDistribution> {
    let kept: Vec<(&JointSample, f64)> = regular(samples).filter(|s| s.world < threshold).map(|s| (s, 1.0)).collect();
    if kept.is_empty() {
        return Err(PdError::EmptyTruncation { threshold });
    }
    smoothed_frequencies(domain, &kept, epsilon, floor)
}

/// Marginals of `θ(x) ∝ q'(x)·e^{−βG(x)}`, by enumeration.
pub fn klpq_exponential_exact(u: &WorldUtility, q: &ProductDistribution, beta: f64, floor: f64) -> Result<ProductDistribution> {
    check_beta(beta)?;
    if beta == 0.0 {
        return finish(q.marginals().to_vec(), floor);
    }
    let (_, g_min) = oracle::global_minimum(u)?;
    let cond = oracle::conditionals_with(u, q, |g| (-beta * (g - g_min)).exp())?;
    let weights = (0..q.agent_count())
        .map(|i| q.marginal(i).iter().zip(&cond[i]).map(|(p, c)| p * c).collect())
        .collect();
    finish(weights, floor)
}

/// Sample version of [`klpq_exponential_exact`]: each regular sample weighted
/// by `e^{−β(G − G_min)}`, with `epsilon` added to every move's weight after
/// self-normalization.
pub fn klpq_exponential_sampled(
    domain: &CategoricalDomain,
    samples: &[JointSample],
    beta: f64,
    epsilon: f64,
    floor: f64,
) -> Result<ProductDistribution> {
    check_beta(beta)?;
    let kept: Vec<&JointSample> = regular(samples).collect();
    if kept.is_empty() {
        return Err(PdError::EmptyInput("exponential update needs at least one regular sample"));
    }
    let g_min = kept.iter().map(|s| s.world).fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = kept.iter().map(|s| (-beta * (s.world - g_min)).exp()).collect();
    let total: f64 = raw.iter().sum();
    let weighted: Vec<(&JointSample, f64)> = kept.into_iter().zip(raw).map(|(s, w)| (s, w / total)).collect();
    smoothed_frequencies(domain, &weighted, epsilon, floor)
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(PdError::InvalidParameter(format!("beta must be finite and >= 0, got {beta}")));
    }
    Ok(())
}

/// Dense `θ(x) ∝ q(x)·[G(x) < K]`.
pub fn theta_truncated(u: &WorldUtility, q: &ProductDistribution, threshold: f64) -> Result<Vec<f64>> {
    sharpen(u, q, |g| if g < threshold { 1.0 } else { 0.0 }).map_err(|e| match e {
        PdError::EmptyInput(_) => PdError::EmptyTruncation { threshold },
        other => other,
    })
}

/// Dense `θ(x) ∝ q(x)·e^{−βG(x)}`.
pub fn theta_exponential(u: &WorldUtility, q: &ProductDistribution, beta: f64) -> Result<Vec<f64>> {
    check_beta(beta)?;
    let (_, g_min) = oracle::global_minimum(u)?;
    sharpen(u, q, |g| (-beta * (g - g_min)).exp())
}

/// Dense `q(x)·w(G(x))`, normalized. `w` must be non-increasing for the
/// result to be at least as peaked on the minimizers as `q`.
pub fn sharpen<W>(u: &WorldUtility, q: &ProductDistribution, w: W) -> Result<Vec<f64>>
where
    W: Fn(f64) -> f64,
{
    let mut joint = oracle::joint_distribution(q)?;
    oracle::for_each_joint(u.domain(), |index, x| {
        joint[index] *= w(u.eval_indexed(index, x)?);
        Ok(())
    })?;
    let total: f64 = joint.iter().sum();
    if !(total > 0.0) {
        return Err(PdError::EmptyInput("sharpened distribution has no mass"));
    }
    joint.iter_mut().for_each(|p| *p /= total);
    Ok(joint)
}

/// Midpoint between the value at rank `keep − 1` and the next larger distinct
/// value, so that at least `keep` of the values fall strictly below it.
fn threshold_above(sorted: &[(f64, f64)], fraction: f64) -> f64 {
    let total: f64 = sorted.iter().map(|v| v.1).sum();
    let target = fraction * total * (1.0 - 1e-12);
    let mut acc = 0.0;
    let mut cut = sorted.len() - 1;
    for (k, &(_, w)) in sorted.iter().enumerate() {
        acc += w;
        if acc >= target {
            cut = k;
            break;
        }
    }
    let v = sorted[cut].0;
    match sorted[cut..].iter().find(|s| s.0 > v) {
        Some(next) => 0.5 * (v + next.0),
        None => f64::INFINITY,
    }
}

/// `K` such that at least `fraction` of the sampled world utilities lie below
/// it. Infinite when the fraction reaches the largest sample.
pub fn threshold_from_samples(samples: &[JointSample], fraction: f64) -> Result<f64> {
    check_fraction(fraction)?;
    let mut values: Vec<(f64, f64)> = regular(samples).map(|s| (s.world, 1.0)).collect();
    if values.is_empty() {
        return Err(PdError::EmptyInput("threshold needs at least one regular sample"));
    }
    values.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(threshold_above(&values, fraction))
}

/// `K` such that `q(G < K) ≥ fraction`, by enumeration.
pub fn threshold_from_distribution(u: &WorldUtility, q: &ProductDistribution, fraction: f64) -> Result<f64> {
    check_fraction(fraction)?;
    let joint = oracle::joint_distribution(q)?;
    let mut values = Vec::with_capacity(joint.len());
    oracle::for_each_joint(u.domain(), |index, x| {
        values.push((u.eval_indexed(index, x)?, joint[index]));
        Ok(())
    })?;
    values.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(threshold_above(&values, fraction))
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(PdError::InvalidParameter(format!("fraction must be in (0, 1], got {fraction}")));
    }
    Ok(())
}

pub const DEFAULT_STALL_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StallAction {
    Continue,
    /// No improvement for a full window: switch to the transformed utility.
    Engage,
    /// The transformed utility has run for a full window: switch back.
    Revert,
}

/// Watches a Lagrangian trace and toggles the utility transform: engage after
/// `window` observations without improvement, revert after `window` more.
#[derive(Debug, Clone, PartialEq)]
pub struct StallDetector {
    window: usize,
    best: f64,
    since_best: usize,
    engaged_left: Option<usize>,
}

impl StallDetector {
    pub fn new(window: usize) -> Self {
        Self { window: window.max(1), best: f64::INFINITY, since_best: 0, engaged_left: None }
    }

    pub fn is_engaged(&self) -> bool {
        self.engaged_left.is_some()
    }

    /// Forgets the best value seen, e.g. after β changes the Lagrangian's scale.
    pub fn reset(&mut self) {
        self.best = f64::INFINITY;
        self.since_best = 0;
    }

    pub fn observe(&mut self, lagrangian: f64) -> StallAction {
        if let Some(left) = self.engaged_left {
            if left <= 1 {
                self.engaged_left = None;
                self.reset();
                return StallAction::Revert;
            }
            self.engaged_left = Some(left - 1);
            return StallAction::Continue;
        }
        if lagrangian < self.best - 1e-12 * (1.0 + self.best.abs()) || self.best == f64::INFINITY {
            self.best = lagrangian;
            self.since_best = 0;
            return StallAction::Continue;
        }
        self.since_best += 1;
        if self.since_best >= self.window {
            self.engaged_left = Some(self.window);
            self.since_best = 0;
            return StallAction::Engage;
        }
        StallAction::Continue
    }
}
