//! Problem generators and move symmetries.

use crate::domain::{CategoricalDomain, ProductDistribution};
use crate::error::{PdError, Result};
use crate::rng::RandomSource;
use crate::utility::WorldUtility;

pub const GENERATORS: [&str; 3] = ["random-table", "congestion", "sum"];

/// Builds a named problem over `agents × moves`. `costs` only applies to
/// `congestion`, where `costs[k − 1]` is charged when some move is chosen by
/// exactly `k` agents; the default is `c_k = k(k − 1)`.
pub fn generate_problem(name: &str, agents: usize, moves: usize, seed: u64, costs: Option<&[f64]>) -> Result<WorldUtility> {
    let domain = CategoricalDomain::uniform(agents, moves)?;
    match name {
        "random-table" => {
            let size = crate::oracle::check_guard(&domain)?;
            let mut rng = RandomSource::new(seed, 0);
            let values = (0..size).map(|_| rng.uniform()).collect();
            WorldUtility::from_table(domain, values)
        }
        "congestion" => {
            let costs = match costs {
                Some(c) if c.len() == agents => c.to_vec(),
                Some(c) => return Err(PdError::DimensionMismatch { expected: agents, found: c.len() }),
                None => (1..=agents).map(|k| (k * (k - 1)) as f64).collect(),
            };
            if costs.iter().any(|c| !c.is_finite()) {
                return Err(PdError::InvalidParameter("congestion costs must be finite".into()));
            }
            Ok(WorldUtility::from_fn(domain, move |x| Ok(congestion_cost(x, moves, &costs))))
        }
        "sum" => Ok(WorldUtility::from_fn(domain, |x| Ok(x.iter().sum::<usize>() as f64))),
        other => Err(PdError::UnknownGenerator(other.to_string())),
    }
}

/// `Σ_k c_k·N(x, k)` where `N(x, k)` is 1 when some move is shared by exactly
/// `k` agents.
fn congestion_cost(x: &[usize], moves: usize, costs: &[f64]) -> f64 {
    let mut per_move = vec![0usize; moves];
    for &m in x {
        per_move[m] += 1;
    }
    let mut present = vec![false; costs.len() + 1];
    for &k in &per_move {
        present[k] = true;
    }
    (1..present.len()).filter(|&k| present[k]).map(|k| costs[k - 1]).sum()
}

/// Per-agent move permutations `T_i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymmetryMap {
    maps: Vec<Vec<usize>>,
}

impl SymmetryMap {
    pub fn new(maps: Vec<Vec<usize>>) -> Result<Self> {
        for (agent, map) in maps.iter().enumerate() {
            let mut seen = vec![false; map.len()];
            for &j in map {
                if j >= map.len() || std::mem::replace(&mut seen[j], true) {
                    return Err(PdError::NonPermutation { agent });
                }
            }
        }
        Ok(Self { maps })
    }

    pub fn identity(domain: &CategoricalDomain) -> Self {
        Self { maps: domain.move_counts().iter().map(|&m| (0..m).collect()).collect() }
    }

    /// The same permutation applied to every agent.
    pub fn shared(agents: usize, perm: Vec<usize>) -> Result<Self> {
        Self::new(vec![perm; agents])
    }

    pub fn maps(&self) -> &[Vec<usize>] {
        &self.maps
    }

    /// `T(x)`, component by component.
    pub fn apply_to_move(&self, x: &[usize]) -> Vec<usize> {
        x.iter().zip(&self.maps).map(|(&j, t)| t[j]).collect()
    }
}

/// `q'_i(j) = q_i(T_i(j))`.
pub fn apply_symmetry(q: &ProductDistribution, t: &SymmetryMap) -> Result<ProductDistribution> {
    if t.maps.len() != q.agent_count() {
        return Err(PdError::DimensionMismatch { expected: q.agent_count(), found: t.maps.len() });
    }
    let marginals = (0..q.agent_count())
        .map(|i| {
            let qi = q.marginal(i);
            if t.maps[i].len() != qi.len() {
                return Err(PdError::DimensionMismatch { expected: qi.len(), found: t.maps[i].len() });
            }
            Ok(t.maps[i].iter().map(|&j| qi[j]).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    ProductDistribution::from_marginals(marginals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::for_each_joint;

    #[test]
    fn sum_is_p0() {
        let u = generate_problem("sum", 2, 2, 0, None).unwrap();
        let vals: Vec<f64> = [[0, 0], [0, 1], [1, 0], [1, 1]].iter().map(|x| u.eval(x).unwrap()).collect();
        assert_eq!(vals, vec![0.0, 1.0, 1.0, 2.0]);
    }

    #[test]
    fn congestion_example() {
        let u = generate_problem("congestion", 2, 2, 0, Some(&[0.0, 5.0])).unwrap();
        assert_eq!(u.eval(&[0, 0]).unwrap(), 5.0);
        assert_eq!(u.eval(&[1, 1]).unwrap(), 5.0);
        assert_eq!(u.eval(&[0, 1]).unwrap(), 0.0);
        assert_eq!(u.eval(&[1, 0]).unwrap(), 0.0);
    }

    #[test]
    fn congestion_counts_each_multiplicity_once() {
        let u = generate_problem("congestion", 4, 3, 0, Some(&[1.0, 10.0, 100.0, 1000.0])).unwrap();
        // Moves 0 and 1 are each shared by two agents: N(x,2) = 1.
        assert_eq!(u.eval(&[0, 0, 1, 1]).unwrap(), 10.0);
        assert_eq!(u.eval(&[0, 0, 1, 2]).unwrap(), 11.0);
        assert_eq!(u.eval(&[2, 2, 2, 2]).unwrap(), 1000.0);
    }

    #[test]
    fn congestion_is_swap_invariant() {
        let u = generate_problem("congestion", 3, 3, 0, None).unwrap();
        for perm in [vec![1, 0, 2], vec![2, 0, 1], vec![0, 2, 1]] {
            let t = SymmetryMap::shared(3, perm).unwrap();
            for_each_joint(u.domain(), |_, x| {
                assert_eq!(u.eval(x).unwrap(), u.eval(&t.apply_to_move(x)).unwrap());
                Ok(())
            })
            .unwrap();
        }
    }

    #[test]
    fn random_table_is_seeded() {
        let a = generate_problem("random-table", 3, 3, 7, None).unwrap();
        let b = generate_problem("random-table", 3, 3, 7, None).unwrap();
        let c = generate_problem("random-table", 3, 3, 8, None).unwrap();
        assert_eq!(a.table(), b.table());
        assert_ne!(a.table(), c.table());
        assert!(a.table().unwrap().iter().all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn unknown_generator() {
        assert!(matches!(generate_problem("nope", 2, 2, 0, None), Err(PdError::UnknownGenerator(_))));
    }

    #[test]
    fn symmetry_examples() {
        let d = CategoricalDomain::uniform(2, 2).unwrap();
        let q = ProductDistribution::from_marginals(vec![vec![0.7, 0.3], vec![0.2, 0.8]]).unwrap();
        assert_eq!(apply_symmetry(&q, &SymmetryMap::identity(&d)).unwrap(), q);
        let swap = SymmetryMap::shared(2, vec![1, 0]).unwrap();
        let s = apply_symmetry(&q, &swap).unwrap();
        assert_eq!(s.marginal(0), &[0.3, 0.7]);
        let u = ProductDistribution::uniform(&d);
        assert_eq!(apply_symmetry(&u, &swap).unwrap(), u);
        assert!(matches!(SymmetryMap::new(vec![vec![0, 0]]), Err(PdError::NonPermutation { agent: 0 })));
        assert!(matches!(SymmetryMap::new(vec![vec![0, 1], vec![2, 0]]), Err(PdError::NonPermutation { agent: 1 })));
    }
}
