//! Exhaustive computations over small joint spaces.
//!
//! Everything here enumerates the full joint space, so it is refused once the
//! space exceeds [`ORACLE_GUARD`] entries.

use crate::domain::{CategoricalDomain, ProductDistribution};
use crate::error::{PdError, Result};
use crate::utility::{GameUtilities, WorldUtility};

/// Largest joint space the oracle will enumerate.
pub const ORACLE_GUARD: usize = 10_000_000;

/// Size of the joint space, or `GuardExceeded`.
pub fn check_guard(domain: &CategoricalDomain) -> Result<usize> {
    domain.joint_size_within(ORACLE_GUARD).ok_or_else(|| PdError::GuardExceeded {
        size: domain.joint_size().to_string(),
        guard: ORACLE_GUARD,
    })
}

fn check_shape(domain: &CategoricalDomain, q: &ProductDistribution) -> Result<()> {
    let counts: Vec<usize> = q.marginals().iter().map(Vec::len).collect();
    if counts != domain.move_counts() {
        return Err(PdError::InvalidParameter(format!(
            "distribution shape {counts:?} does not match domain {:?}",
            domain.move_counts()
        )));
    }
    Ok(())
}

/// Calls `visit(index, x)` for every joint move in row-major order.
pub fn for_each_joint<F>(domain: &CategoricalDomain, mut visit: F) -> Result<()>
where
    F: FnMut(usize, &[usize]) -> Result<()>,
{
    let size = check_guard(domain)?;
    let mut x = vec![0; domain.agent_count()];
    for index in 0..size {
        visit(index, &x)?;
        domain.advance(&mut x);
    }
    Ok(())
}

/// `E_{q_(i)}(h(u) | x_i = j)` for every agent and move in one pass, where `h`
/// reshapes the utility value (identity for plain conditionals).
pub fn conditionals_with<H>(u: &WorldUtility, q: &ProductDistribution, h: H) -> Result<Vec<Vec<f64>>>
where
    H: Fn(f64) -> f64,
{
    let domain = u.domain();
    check_shape(domain, q)?;
    let n = domain.agent_count();
    let mut acc: Vec<Vec<f64>> = domain.move_counts().iter().map(|&m| vec![0.0; m]).collect();
    let mut prefix = vec![1.0; n + 1];
    let mut suffix = vec![1.0; n + 1];
    for_each_joint(domain, |index, x| {
        let v = h(u.eval_indexed(index, x)?);
        for k in 0..n {
            prefix[k + 1] = prefix[k] * q.marginal(k)[x[k]];
        }
        for k in (0..n).rev() {
            suffix[k] = suffix[k + 1] * q.marginal(k)[x[k]];
        }
        for i in 0..n {
            acc[i][x[i]] += v * prefix[i] * suffix[i + 1];
        }
        Ok(())
    })?;
    Ok(acc)
}

/// `E_{q_(i)}(u | x_i = j)` for every agent and move.
pub fn exact_conditionals(u: &WorldUtility, q: &ProductDistribution) -> Result<Vec<Vec<f64>>> {
    conditionals_with(u, q, |v| v)
}

/// Agent `i`'s effective cost `E_{q_(i)}(u | x_i = j)`.
pub fn exact_conditional(u: &WorldUtility, q: &ProductDistribution, agent: usize, mv: usize) -> Result<f64> {
    let domain = u.domain();
    check_shape(domain, q)?;
    if agent >= domain.agent_count() || mv >= domain.moves(agent) {
        return Err(PdError::InvalidParameter(format!("no move {mv} for agent {agent}")));
    }
    let mut total = 0.0;
    for_each_joint(domain, |index, x| {
        if x[agent] == mv {
            let weight: f64 = (0..x.len()).filter(|&k| k != agent).map(|k| q.marginal(k)[x[k]]).product();
            total += weight * u.eval_indexed(index, x)?;
        }
        Ok(())
    })?;
    Ok(total)
}

/// Per-agent conditionals where agent `i` uses its own private utility.
pub fn game_conditionals(utilities: &GameUtilities, q: &ProductDistribution) -> Result<Vec<Vec<f64>>> {
    if utilities.private().is_team() {
        return exact_conditionals(utilities.world(), q);
    }
    (0..utilities.domain().agent_count())
        .map(|i| Ok(exact_conditionals(utilities.for_agent(i), q)?.swap_remove(i)))
        .collect()
}

/// `E_q(u) = Σ_x q(x) u(x)`.
pub fn exact_expectation(u: &WorldUtility, q: &ProductDistribution) -> Result<f64> {
    check_shape(u.domain(), q)?;
    let mut total = 0.0;
    for_each_joint(u.domain(), |index, x| {
        total += q.joint_probability(x) * u.eval_indexed(index, x)?;
        Ok(())
    })?;
    Ok(total)
}

/// Dense `q(x)` over the joint space.
pub fn joint_distribution(q: &ProductDistribution) -> Result<Vec<f64>> {
    let domain = q.domain();
    let mut p = Vec::with_capacity(check_guard(&domain)?);
    for_each_joint(&domain, |_, x| {
        p.push(q.joint_probability(x));
        Ok(())
    })?;
    Ok(p)
}

/// Per-agent marginals of a dense joint distribution.
pub fn marginals_of(domain: &CategoricalDomain, joint: &[f64]) -> Result<Vec<Vec<f64>>> {
    let size = check_guard(domain)?;
    if joint.len() != size {
        return Err(PdError::DimensionMismatch { expected: size, found: joint.len() });
    }
    let mut out: Vec<Vec<f64>> = domain.move_counts().iter().map(|&m| vec![0.0; m]).collect();
    for_each_joint(domain, |index, x| {
        for (i, &m) in x.iter().enumerate() {
            out[i][m] += joint[index];
        }
        Ok(())
    })?;
    Ok(out)
}

/// `KL(p || q)` between a dense joint `p` and a product distribution `q`.
pub fn pq_divergence(joint: &[f64], q: &ProductDistribution) -> Result<f64> {
    let qx = joint_distribution(q)?;
    crate::domain::kl_divergence(joint, &qx)
}

/// The Boltzmann distribution `p(x) ∝ exp(-β G(x))` over the joint space.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalEnsemble {
    beta: f64,
    domain: CategoricalDomain,
    probabilities: Vec<f64>,
}

impl CanonicalEnsemble {
    pub fn new(u: &WorldUtility, beta: f64) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(PdError::InvalidParameter(format!("beta must be finite and >= 0, got {beta}")));
        }
        let domain = u.domain().clone();
        let mut values = Vec::with_capacity(check_guard(&domain)?);
        for_each_joint(&domain, |index, x| {
            values.push(u.eval_indexed(index, x)?);
            Ok(())
        })?;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let mut probabilities: Vec<f64> = values.iter().map(|&g| (-beta * (g - min)).exp()).collect();
        let z: f64 = probabilities.iter().sum();
        probabilities.iter_mut().for_each(|p| *p /= z);
        Ok(Self { beta, domain, probabilities })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// Product of the ensemble's marginals: the best product approximation in
    /// `KL(p || q)`.
    pub fn marginals(&self) -> Result<ProductDistribution> {
        let m = marginals_of(&self.domain, &self.probabilities)?;
        ProductDistribution::from_weights(m)
    }
}

/// Marginals of the canonical ensemble at inverse temperature `beta`.
pub fn canonical_marginals(u: &WorldUtility, beta: f64) -> Result<ProductDistribution> {
    if beta == 0.0 {
        check_guard(u.domain())?;
        return Ok(ProductDistribution::uniform(u.domain()));
    }
    CanonicalEnsemble::new(u, beta)?.marginals()
}

/// Exhaustive argmin; the lowest joint index wins ties.
pub fn global_minimum(u: &WorldUtility) -> Result<(Vec<usize>, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for_each_joint(u.domain(), |index, x| {
        let g = u.eval_indexed(index, x)?;
        if best.is_none_or(|(_, b)| g < b) {
            best = Some((index, g));
        }
        Ok(())
    })?;
    let (index, g) = best.expect("domains are non-empty");
    Ok((u.domain().decode(index), g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;
    use approx::assert_abs_diff_eq;

    fn p0() -> WorldUtility {
        WorldUtility::from_table(CategoricalDomain::uniform(2, 2).unwrap(), vec![0.0, 1.0, 1.0, 2.0]).unwrap()
    }

    fn random_table(agents: usize, moves: usize, seed: u64) -> WorldUtility {
        let d = CategoricalDomain::uniform(agents, moves).unwrap();
        let mut rng = RandomSource::new(seed, 0);
        let n = d.joint_size_within(usize::MAX).unwrap();
        WorldUtility::from_table(d, (0..n).map(|_| rng.uniform()).collect()).unwrap()
    }

    #[test]
    fn p0_conditionals() {
        let u = p0();
        let q = ProductDistribution::uniform(u.domain());
        assert_abs_diff_eq!(exact_conditional(&u, &q, 0, 0).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(exact_conditional(&u, &q, 0, 1).unwrap(), 1.5, epsilon = 1e-15);
        let pinned = ProductDistribution::from_marginals(vec![vec![0.5, 0.5], vec![0.0, 1.0]]).unwrap();
        assert_eq!(exact_conditional(&u, &pinned, 0, 0).unwrap(), 1.0);
    }

    #[test]
    fn p0_expectations() {
        let u = p0();
        let d = u.domain().clone();
        assert_abs_diff_eq!(exact_expectation(&u, &ProductDistribution::uniform(&d)).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(exact_expectation(&u, &ProductDistribution::point_mass(&d, &[0, 0]).unwrap()).unwrap(), 0.0);
        let q = ProductDistribution::from_marginals(vec![vec![0.75, 0.25], vec![0.5, 0.5]]).unwrap();
        assert_abs_diff_eq!(exact_expectation(&u, &q).unwrap(), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn batch_conditionals_agree_with_single() {
        let u = random_table(3, 3, 5);
        let mut rng = RandomSource::new(9, 0);
        let q = ProductDistribution::uniform(u.domain()).jittered(0.5, &mut rng).unwrap();
        let all = exact_conditionals(&u, &q).unwrap();
        let e = exact_expectation(&u, &q).unwrap();
        for i in 0..3 {
            let mut mixed = 0.0;
            for j in 0..3 {
                let single = exact_conditional(&u, &q, i, j).unwrap();
                assert_abs_diff_eq!(all[i][j], single, epsilon = 1e-12);
                mixed += q.marginal(i)[j] * single;
            }
            assert_abs_diff_eq!(mixed, e, epsilon = 1e-10);
        }
    }

    #[test]
    fn canonical_marginals_examples() {
        let u = p0();
        let flat = canonical_marginals(&u, 0.0).unwrap();
        assert_eq!(flat, ProductDistribution::uniform(u.domain()));
        let e = (-1f64).exp();
        let expected = (1.0 + e) / (1.0 + 2.0 * e + e * e);
        assert_abs_diff_eq!(expected, 0.731059, epsilon = 1e-6);
        let m = canonical_marginals(&u, 1.0).unwrap();
        assert_abs_diff_eq!(m.marginal(0)[0], expected, epsilon = 1e-12);
        assert_abs_diff_eq!(m.marginal(1)[0], expected, epsilon = 1e-12);
        let cold = canonical_marginals(&u, 200.0).unwrap();
        assert!(cold.marginal(0)[0] > 1.0 - 1e-12 && cold.marginal(1)[0] > 1.0 - 1e-12);
    }

    #[test]
    fn global_minimum_examples() {
        assert_eq!(global_minimum(&p0()).unwrap(), (vec![0, 0], 0.0));
        let flat = WorldUtility::from_table(CategoricalDomain::uniform(2, 3).unwrap(), vec![4.0; 9]).unwrap();
        assert_eq!(global_minimum(&flat).unwrap().0, vec![0, 0]);

        let u = random_table(4, 4, 7);
        let table = u.table().unwrap();
        let (mut best_idx, mut best) = (0, table[0]);
        for (idx, &v) in table.iter().enumerate().skip(1) {
            if v < best {
                best = v;
                best_idx = idx;
            }
        }
        let (x, g) = global_minimum(&u).unwrap();
        assert_eq!(x, u.domain().decode(best_idx));
        assert_eq!(g, best);
    }

    #[test]
    fn guard_refuses_huge_spaces() {
        let d = CategoricalDomain::uniform(9, 10).unwrap();
        let u = WorldUtility::from_fn(d.clone(), |_| Ok(0.0));
        let q = ProductDistribution::uniform(&d);
        assert!(matches!(exact_expectation(&u, &q), Err(PdError::GuardExceeded { .. })));
        assert!(matches!(exact_conditional(&u, &q, 0, 0), Err(PdError::GuardExceeded { .. })));
        assert!(matches!(global_minimum(&u), Err(PdError::GuardExceeded { .. })));
        assert!(matches!(canonical_marginals(&u, 1.0), Err(PdError::GuardExceeded { .. })));
    }

    #[test]
    fn canonical_marginals_beat_grid_in_pq_kl() {
        let u = p0();
        let p = CanonicalEnsemble::new(&u, 1.0).unwrap();
        let best = pq_divergence(p.probabilities(), &p.marginals().unwrap()).unwrap();
        for a in 0..=100 {
            for b in 0..=100 {
                let (x, y) = (a as f64 / 100.0, b as f64 / 100.0);
                let q = ProductDistribution::from_marginals(vec![vec![x, 1.0 - x], vec![y, 1.0 - y]]).unwrap();
                // Grid points on the border have infinite divergence.
                let d = pq_divergence(p.probabilities(), &q).unwrap_or(f64::INFINITY);
                assert!(d >= best - 1e-9);
            }
        }
    }
}
