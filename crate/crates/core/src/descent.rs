//! Simplex-constrained descent of the maxent Lagrangian.
//!
//! Two update rules share one backtracking routine:
//!
//! - the projected gradient step, where each agent subtracts the mean of
//!   `u_i(j) = β·E(u_i | x_i = j) + ln q_i(j)` over its moves, and
//! - the Nearest Newton step, which jumps toward the product of marginals of
//!   the joint-space Newton point.
//!
//! With an exact source, steps are also shrunk until the Lagrangian decreases
//! sufficiently. The `ln q` curvature grows like `1/q` near the simplex border,
//! so a fixed step oscillates there.

use nalgebra::{DMatrix, DVector};

use crate::domain::{project_interior, vector_entropy, ProductDistribution, DEFAULT_FLOOR};
use crate::error::{PdError, Result};
use crate::lagrangian::{lagrangian_value, Conditionals, ExpectationSource};

/// Step-size control for both descent rules.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescentConfig {
    /// Gradient step size `α`.
    pub step_size: f64,
    /// Shrink factor for Nearest Newton partial jumps.
    pub boundary_shrink: f64,
    pub max_backtracks: usize,
    /// Minimum probability any component may take.
    pub floor: f64,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self { step_size: 0.05, boundary_shrink: 0.5, max_backtracks: 60, floor: DEFAULT_FLOOR }
    }
}

impl DescentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(PdError::InvalidParameter(format!("step size must be > 0, got {}", self.step_size)));
        }
        if !(self.boundary_shrink > 0.0 && self.boundary_shrink < 1.0) {
            return Err(PdError::InvalidParameter(format!(
                "boundary shrink must be in (0, 1), got {}",
                self.boundary_shrink
            )));
        }
        if !(0.0..1.0).contains(&self.floor) {
            return Err(PdError::InvalidParameter(format!("floor must be in [0, 1), got {}", self.floor)));
        }
        Ok(())
    }
}

/// Components closer to the floor than this multiple of it may be clipped by a
/// gradient step without forcing a smaller step.
const BOUNDARY_BAND: f64 = 1e3;

/// Armijo constant for the sufficient-decrease test.
const ARMIJO: f64 = 1e-4;
/// Relative size below which two Lagrangian values are indistinguishable.
const ROUNDOFF: f64 = 1e-12;
/// Largest accepted ratio of the slope at the end of a step to minus the
/// initial slope, used once value differences are below `ROUNDOFF`.
const OVERSHOOT: f64 = 0.5;

/// Steepest-ascent direction of `V` among vectors orthogonal to every
/// constraint gradient: `∇V + Σ λ_i ∇f_i` with `λ` fixed by `u·∇f_i = 0`.
/// The result is unnormalized.
pub fn constrained_steepest_direction(gradient: &[f64], constraints: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = gradient.len();
    if constraints.is_empty() {
        return Ok(gradient.to_vec());
    }
    if let Some(c) = constraints.iter().find(|c| c.len() != n) {
        return Err(PdError::DimensionMismatch { expected: n, found: c.len() });
    }
    let m = constraints.len();
    let f = DMatrix::from_fn(n, m, |r, c| constraints[c][r]);
    let g = DVector::from_column_slice(gradient);
    let gram = f.transpose() * &f;
    let scale = gram.diagonal().max().max(f64::MIN_POSITIVE);
    let svd = gram.clone().svd(false, false);
    if svd.rank(scale * 1e-12) < m {
        return Err(PdError::DegenerateConstraints);
    }
    let rhs = -(f.transpose() * &g);
    let lambda = gram.cholesky().ok_or(PdError::DegenerateConstraints)?.solve(&rhs);
    Ok((g + f * lambda).iter().copied().collect())
}

/// `∂L/∂q_i(j) = u_i(j) − Σ_j' u_i(j') / |ξ_i|`, the gradient restricted to
/// each agent's simplex.
pub fn projected_gradient(q: &ProductDistribution, c: &Conditionals, beta: f64) -> Vec<Vec<f64>> {
    (0..q.agent_count())
        .map(|i| {
            let u: Vec<f64> = q
                .marginal(i)
                .iter()
                .zip(c.agent(i))
                .map(|(&p, &v)| beta * v + p.ln())
                .collect();
            let mean = u.iter().sum::<f64>() / u.len() as f64;
            u.into_iter().map(|x| x - mean).collect()
        })
        .collect()
}

pub fn gradient_norm(gradient: &[Vec<f64>]) -> f64 {
    gradient.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// One projected gradient step, `q_i ← q_i − α·∂L/∂q_i`, then projection to
/// the floored interior.
pub fn gradient_step<S>(q: &ProductDistribution, src: &mut S, beta: f64, cfg: &DescentConfig) -> Result<ProductDistribution>
where
    S: ExpectationSource + ?Sized,
{
    let c = src.conditionals(q)?;
    gradient_step_with(q, &c, src, beta, cfg)
}

/// Gradient step from conditionals already evaluated at `q`. `src` is only
/// consulted for the sufficient-decrease test when it is exact.
pub fn gradient_step_with<S>(
    q: &ProductDistribution,
    c: &Conditionals,
    src: &mut S,
    beta: f64,
    cfg: &DescentConfig,
) -> Result<ProductDistribution>
where
    S: ExpectationSource + ?Sized,
{
    cfg.validate()?;
    let grad = projected_gradient(q, c, beta);
    let sq_norm: f64 = grad.iter().flatten().map(|g| g * g).sum();
    if sq_norm == 0.0 {
        return Ok(q.clone());
    }
    let direction: Vec<Vec<f64>> = grad.iter().map(|g| g.iter().map(|x| -x).collect()).collect();
    let band = BOUNDARY_BAND * cfg.floor;
    let search = LineSearch {
        q,
        c,
        direction: &direction,
        slope: -sq_norm,
        beta,
        cfg,
        initial: cfg.step_size,
        shrink: 0.5,
        admissible: &|old: f64, new: f64| new >= 0.0 || old <= band,
    };
    match search.run(src)? {
        Some(next) => Ok(next),
        None => Err(PdError::StepCollapse { attempts: cfg.max_backtracks }),
    }
}

/// Full Nearest Newton displacement `q* − q⁰`, where
/// `q*_i(j)/q⁰_i(j) = 1 − S(q⁰_i) − ln q⁰_i(j) − β[E(u_i | x_i = j) − E(u_i)]`
/// and `E(u_i)` is the `q⁰_i`-weighted mean of the conditionals.
pub fn nearest_newton_direction(q: &ProductDistribution, c: &Conditionals, beta: f64) -> Vec<Vec<f64>> {
    (0..q.agent_count())
        .map(|i| {
            let qi = q.marginal(i);
            let s = vector_entropy(qi);
            let mean = c.agent_mean(i, q);
            qi.iter()
                .zip(c.agent(i))
                .map(|(&p, &v)| {
                    let ratio = 1.0 - s - p.ln() - beta * (v - mean);
                    p * ratio - p
                })
                .collect()
        })
        .collect()
}

/// Nearest Newton step `q⁰ + η(q* − q⁰)` with the largest
/// `η ∈ {1, ρ, ρ², …}` that keeps every component at or above the floor.
pub fn nearest_newton_step<S>(q: &ProductDistribution, src: &mut S, beta: f64, cfg: &DescentConfig) -> Result<ProductDistribution>
where
    S: ExpectationSource + ?Sized,
{
    let c = src.conditionals(q)?;
    nearest_newton_step_with(q, &c, src, beta, cfg)
}

pub fn nearest_newton_step_with<S>(
    q: &ProductDistribution,
    c: &Conditionals,
    src: &mut S,
    beta: f64,
    cfg: &DescentConfig,
) -> Result<ProductDistribution>
where
    S: ExpectationSource + ?Sized,
{
    cfg.validate()?;
    let direction = nearest_newton_direction(q, c, beta);
    let grad = projected_gradient(q, c, beta);
    let slope: f64 = grad.iter().flatten().zip(direction.iter().flatten()).map(|(g, d)| g * d).sum();
    if direction.iter().flatten().all(|&d| d == 0.0) {
        return Ok(q.clone());
    }
    let floor = cfg.floor;
    let search = LineSearch {
        q,
        c,
        direction: &direction,
        slope,
        beta,
        cfg,
        initial: 1.0,
        shrink: cfg.boundary_shrink,
        admissible: &|_old: f64, new: f64| new >= floor,
    };
    match search.run(src)? {
        Some(next) => Ok(next),
        None => {
            // Even the shortest jump crosses the floor: clip it.
            let eta = cfg.boundary_shrink.powi(cfg.max_backtracks as i32);
            project_interior(displace(q, &direction, eta), floor)
        }
    }
}

fn displace(q: &ProductDistribution, direction: &[Vec<f64>], t: f64) -> Vec<Vec<f64>> {
    q.marginals()
        .iter()
        .zip(direction)
        .map(|(m, d)| m.iter().zip(d).map(|(p, x)| p + t * x).collect())
        .collect()
}

struct LineSearch<'a> {
    q: &'a ProductDistribution,
    c: &'a Conditionals,
    direction: &'a [Vec<f64>],
    /// Directional derivative of the Lagrangian along `direction`.
    slope: f64,
    beta: f64,
    cfg: &'a DescentConfig,
    initial: f64,
    shrink: f64,
    /// Whether a component may move from `old` to `new` without shrinking.
    admissible: &'a dyn Fn(f64, f64) -> bool,
}

impl LineSearch<'_> {
    /// Backtracks from `initial`; `None` when every attempt was rejected.
    fn run<S>(&self, src: &mut S) -> Result<Option<ProductDistribution>>
    where
        S: ExpectationSource + ?Sized,
    {
        let exact = src.is_exact();
        let current = if exact { Some(lagrangian_value(self.q, self.c, self.beta)) } else { None };
        let mut t = self.initial;
        for _ in 0..=self.cfg.max_backtracks {
            let raw = displace(self.q, self.direction, t);
            let inside = self
                .q
                .marginals()
                .iter()
                .flatten()
                .zip(raw.iter().flatten())
                .all(|(&old, &new)| (self.admissible)(old, new));
            if inside {
                let next = project_interior(raw, self.cfg.floor)?;
                match current {
                    None => return Ok(Some(next)),
                    Some(l0) => {
                        let cn = src.conditionals(&next)?;
                        let l1 = lagrangian_value(&next, &cn, self.beta);
                        // Near a minimum the change in L drops below its rounding
                        // error, so judge the step by the slope at its end instead:
                        // reject only steps that overshoot.
                        if (l1 - l0).abs() <= ROUNDOFF * (1.0 + l0.abs()) {
                            let g = projected_gradient(&next, &cn, self.beta);
                            let end_slope: f64 =
                                g.iter().flatten().zip(self.direction.iter().flatten()).map(|(g, d)| g * d).sum();
                            if end_slope <= -OVERSHOOT * self.slope {
                                return Ok(Some(next));
                            }
                        } else if l1 <= l0 + ARMIJO * t * self.slope {
                            return Ok(Some(next));
                        }
                    }
                }
            }
            t *= self.shrink;
        }
        Ok(None)
    }
}

/// Eigenvalues of `[[s, c], [c, t]]`, larger first: `(s + t ± √(4c² + (s − t)²)) / 2`.
pub fn hessian2x2_eigenvalues(s: f64, t: f64, coupling: f64) -> (f64, f64) {
    let root = (4.0 * coupling * coupling + (s - t).powi(2)).sqrt();
    ((s + t + root) / 2.0, (s + t - root) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::CategoricalDomain;
    use crate::lagrangian::{boltzmann_weights, maxent_lagrangian, ExactSource};
    use crate::utility::{GameUtilities, WorldUtility};
    use crate::RandomSource;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn p0_source() -> ExactSource {
        let u = WorldUtility::from_table(CategoricalDomain::uniform(2, 2).unwrap(), vec![0.0, 1.0, 1.0, 2.0]).unwrap();
        ExactSource::new(GameUtilities::team(u)).unwrap()
    }

    fn uniform2() -> ProductDistribution {
        ProductDistribution::uniform(&CategoricalDomain::uniform(2, 2).unwrap())
    }

    #[test]
    fn single_sum_constraint_subtracts_mean() {
        let g = [3.0, -1.0, 4.0, 2.0];
        let u = constrained_steepest_direction(&g, &[vec![1.0; 4]]).unwrap();
        for (a, b) in u.iter().zip(g) {
            assert_abs_diff_eq!(*a, b - 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn orthogonal_gradient_is_unchanged() {
        let g = [1.0, -1.0, 0.0];
        let u = constrained_steepest_direction(&g, &[vec![1.0, 1.0, 1.0]]).unwrap();
        for (a, b) in u.iter().zip(g) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn two_constraints_maximize_ascent() {
        let g = [1.0, 0.0, 0.0];
        let cons = vec![vec![1.0, 1.0, 1.0], vec![1.0, -1.0, 0.0]];
        let u = constrained_steepest_direction(&g, &cons).unwrap();
        for c in &cons {
            assert!(c.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>().abs() < 1e-12);
        }
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let best: f64 = u.iter().zip(g).map(|(a, b)| a * b / norm).sum();
        // Random feasible unit vectors never beat the returned direction.
        let mut rng = RandomSource::new(5, 0);
        for _ in 0..10_000 {
            let v: Vec<f64> = (0..3).map(|_| rng.uniform() - 0.5).collect();
            let mut w = v.clone();
            for c in &cons {
                let cc: f64 = c.iter().map(|x| x * x).sum();
                let dot: f64 = c.iter().zip(&w).map(|(a, b)| a * b).sum();
                // The two constraints are orthogonal, so sequential removal projects.
                w.iter_mut().zip(c).for_each(|(x, ci)| *x -= dot / cc * ci);
            }
            let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n < 1e-9 {
                continue;
            }
            let val: f64 = w.iter().zip(g).map(|(a, b)| a * b / n).sum();
            assert!(val <= best + 1e-12);
        }
    }

    #[test]
    fn dependent_constraints_are_rejected() {
        let g = [1.0, 2.0, 3.0];
        let cons = vec![vec![1.0, 1.0, 1.0], vec![2.0, 2.0, 2.0]];
        assert!(matches!(constrained_steepest_direction(&g, &cons), Err(PdError::DegenerateConstraints)));
    }

    #[test]
    fn p0_gradient_and_step() {
        let mut src = p0_source();
        let q = uniform2();
        let c = src.conditionals(&q).unwrap();
        let grad = projected_gradient(&q, &c, 1.0);
        assert_abs_diff_eq!(grad[0][0], -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(grad[0][1], 0.5, epsilon = 1e-15);
        let cfg = DescentConfig { step_size: 0.1, ..DescentConfig::default() };
        let next = gradient_step(&q, &mut src, 1.0, &cfg).unwrap();
        assert_abs_diff_eq!(next.marginal(0)[0], 0.55, epsilon = 1e-15);
        assert_abs_diff_eq!(next.marginal(0)[1], 0.45, epsilon = 1e-15);
    }

    #[test]
    fn boltzmann_point_is_stationary() {
        let mut src = p0_source();
        let c = src.conditionals(&uniform2()).unwrap();
        // For this utility the conditional gaps do not depend on the other agent.
        let q = ProductDistribution::from_marginals(vec![boltzmann_weights(c.agent(0), 1.0), boltzmann_weights(c.agent(1), 1.0)])
            .unwrap();
        let c = src.conditionals(&q).unwrap();
        assert!(gradient_norm(&projected_gradient(&q, &c, 1.0)) < 1e-8);
        let next = gradient_step(&q, &mut src, 1.0, &DescentConfig::default()).unwrap();
        assert!(next.max_abs_diff(&q) < 1e-9);
    }

    #[test]
    fn lagrangian_never_increases_on_p0() {
        let mut src = p0_source();
        let mut rng = RandomSource::new(3, 0);
        let mut q = uniform2().jittered(0.5, &mut rng).unwrap();
        let cfg = DescentConfig { step_size: 1e-2, ..DescentConfig::default() };
        let mut last = maxent_lagrangian(&q, &mut src, 1.0).unwrap();
        for _ in 0..100 {
            q = gradient_step(&q, &mut src, 1.0, &cfg).unwrap();
            let l = maxent_lagrangian(&q, &mut src, 1.0).unwrap();
            assert!(l <= last + 1e-12);
            last = l;
        }
    }

    #[test]
    fn nearest_newton_flat_fixed_point() {
        let mut src = p0_source();
        let q = uniform2();
        let next = nearest_newton_step(&q, &mut src, 0.0, &DescentConfig::default()).unwrap();
        assert!(next.max_abs_diff(&q) < 1e-12);
    }

    #[test]
    fn nearest_newton_p0_full_jump() {
        let mut src = p0_source();
        let q = uniform2();
        let c = src.conditionals(&q).unwrap();
        let d = nearest_newton_direction(&q, &c, 1.0);
        for agent in &d {
            assert_abs_diff_eq!(0.5 + agent[0], 0.75, epsilon = 1e-12);
            assert_abs_diff_eq!(0.5 + agent[1], 0.25, epsilon = 1e-12);
        }
        let next = nearest_newton_step(&q, &mut src, 1.0, &DescentConfig::default()).unwrap();
        assert_abs_diff_eq!(next.marginal(0)[0], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn nearest_newton_backs_off_at_the_floor() {
        let mut src = p0_source();
        let floor = DEFAULT_FLOOR;
        let q = ProductDistribution::from_marginals(vec![vec![1.0 - floor, floor], vec![0.5, 0.5]]).unwrap();
        let beta = 50.0;
        let c = src.conditionals(&q).unwrap();
        let d = nearest_newton_direction(&q, &c, beta);
        let full: Vec<f64> = q.marginal(1).iter().zip(&d[1]).map(|(p, x)| p + x).collect();
        assert!(full.iter().any(|&v| v < floor), "full jump should leave the interior: {full:?}");
        let next = nearest_newton_step(&q, &mut src, beta, &DescentConfig::default()).unwrap();
        assert!(next.is_interior(floor));
        assert!(next.max_abs_diff(&q) > 0.0);
    }

    #[test]
    fn gradient_descent_converges_past_lagrangian_roundoff() {
        // Stiff: at β = 8 the minimum has components near 3e-4.
        let mut src = p0_source();
        let beta = 8.0;
        let mut q = ProductDistribution::from_marginals(vec![vec![0.3, 0.7], vec![0.6, 0.4]]).unwrap();
        let cfg = DescentConfig::default();
        for _ in 0..5000 {
            q = gradient_step(&q, &mut src, beta, &cfg).unwrap();
        }
        let c = src.conditionals(&q).unwrap();
        assert!(gradient_norm(&projected_gradient(&q, &c, beta)) < 1e-10);
        let target = boltzmann_weights(c.agent(0), beta);
        assert_abs_diff_eq!(q.marginal(0)[0], target[0], epsilon = 1e-10);
    }

    #[test]
    fn eigenvalue_examples() {
        assert_eq!(hessian2x2_eigenvalues(4.0, 4.0, 0.0), (4.0, 4.0));
        assert_eq!(hessian2x2_eigenvalues(4.0, 4.0, 3.0), (7.0, 1.0));
    }

    proptest! {
        #[test]
        fn larger_eigenvalue_is_positive(s in 1e-6f64..1e6, t in 1e-6f64..1e6, c in -1e6f64..1e6) {
            let (hi, lo) = hessian2x2_eigenvalues(s, t, c);
            prop_assert!(hi > 0.0);
            prop_assert!(hi >= lo);
        }
    }
}
