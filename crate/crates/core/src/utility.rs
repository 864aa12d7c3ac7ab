//! World utilities, private utilities and evaluated samples.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::CategoricalDomain;
use crate::error::{PdError, Result};

/// Signature of an externally supplied utility.
pub type UtilityFn = dyn Fn(&[usize]) -> std::result::Result<f64, String> + Send + Sync;

/// Monotone reshaping applied to utility values before they are used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UtilityTransform {
    Identity,
    /// `f(G) = -exp(-lambda·G)`: concave, increasing, bounded above.
    NegExp { lambda: f64 },
    /// `f(G) = scale·G + offset` with `scale > 0`.
    Affine { scale: f64, offset: f64 },
}

impl Default for UtilityTransform {
    fn default() -> Self {
        UtilityTransform::NegExp { lambda: 1.0 }
    }
}

impl UtilityTransform {
    pub fn validate(&self) -> Result<()> {
        match *self {
            UtilityTransform::Identity => Ok(()),
            UtilityTransform::NegExp { lambda } if lambda > 0.0 && lambda.is_finite() => Ok(()),
            UtilityTransform::NegExp { lambda } => {
                Err(PdError::InvalidParameter(format!("transform lambda must be > 0, got {lambda}")))
            }
            UtilityTransform::Affine { scale, offset } if scale > 0.0 && scale.is_finite() && offset.is_finite() => Ok(()),
            UtilityTransform::Affine { scale, .. } => {
                Err(PdError::InvalidParameter(format!("affine scale must be > 0, got {scale}")))
            }
        }
    }

    pub fn apply(&self, g: f64) -> f64 {
        match *self {
            UtilityTransform::Identity => g,
            UtilityTransform::NegExp { lambda } => -(-lambda * g).exp(),
            UtilityTransform::Affine { scale, offset } => scale * g + offset,
        }
    }
}

#[derive(Clone)]
enum Evaluator {
    Table(Arc<[f64]>),
    Callback(Arc<UtilityFn>),
}

/// A deterministic real-valued objective over joint moves; lower is better.
#[derive(Clone)]
pub struct WorldUtility {
    domain: CategoricalDomain,
    evaluator: Evaluator,
    transform: Option<UtilityTransform>,
}

impl fmt::Debug for WorldUtility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match &self.evaluator {
            Evaluator::Table(v) => format!("table[{}]", v.len()),
            Evaluator::Callback(_) => "callback".to_string(),
        };
        f.debug_struct("WorldUtility")
            .field("domain", &self.domain)
            .field("mode", &mode)
            .field("transform", &self.transform)
            .finish()
    }
}

impl WorldUtility {
    /// Dense table in row-major joint order (agent 0 slowest).
    pub fn from_table(domain: CategoricalDomain, values: Vec<f64>) -> Result<Self> {
        let expected = domain.joint_size_within(usize::MAX).ok_or_else(|| {
            PdError::InvalidParameter("joint space too large for a dense table".into())
        })?;
        if values.len() != expected {
            return Err(PdError::DimensionMismatch { expected, found: values.len() });
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            return Err(PdError::InvalidParameter(format!("table entry {idx} is not finite")));
        }
        Ok(Self { domain, evaluator: Evaluator::Table(values.into()), transform: None })
    }

    /// Utility evaluated by an external function. The function must be
    /// deterministic; non-finite results surface as evaluation errors.
    pub fn from_fn<F>(domain: CategoricalDomain, f: F) -> Self
    where
        F: Fn(&[usize]) -> std::result::Result<f64, String> + Send + Sync + 'static,
    {
        Self { domain, evaluator: Evaluator::Callback(Arc::new(f)), transform: None }
    }

    pub fn domain(&self) -> &CategoricalDomain {
        &self.domain
    }

    pub fn table(&self) -> Option<&[f64]> {
        match &self.evaluator {
            Evaluator::Table(v) => Some(v),
            Evaluator::Callback(_) => None,
        }
    }

    pub fn transform(&self) -> Option<UtilityTransform> {
        self.transform
    }

    /// Same utility seen through `f`. Replaces any previous transform.
    pub fn with_transform(&self, transform: UtilityTransform) -> Self {
        Self { transform: Some(transform), ..self.clone() }
    }

    /// The untransformed utility.
    pub fn base(&self) -> Self {
        Self { transform: None, ..self.clone() }
    }

    pub fn eval(&self, x: &[usize]) -> Result<f64> {
        if !self.domain.contains(x) {
            return Err(PdError::UtilityEvaluation(format!("joint move {x:?} outside domain")));
        }
        let raw = match &self.evaluator {
            Evaluator::Table(v) => v[self.domain.encode(x)],
            Evaluator::Callback(f) => f(x).map_err(PdError::UtilityEvaluation)?,
        };
        self.finish(raw, x)
    }

    /// Evaluation by joint index; `x` must be the decoded index.
    pub(crate) fn eval_indexed(&self, index: usize, x: &[usize]) -> Result<f64> {
        let raw = match &self.evaluator {
            Evaluator::Table(v) => v[index],
            Evaluator::Callback(f) => f(x).map_err(PdError::UtilityEvaluation)?,
        };
        self.finish(raw, x)
    }

    fn finish(&self, raw: f64, x: &[usize]) -> Result<f64> {
        let value = match self.transform {
            Some(t) => t.apply(raw),
            None => raw,
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(PdError::UtilityEvaluation(format!("non-finite value {value} at {x:?}")))
        }
    }

    pub fn load_table(path: &Path) -> Result<Self> {
        let doc: TableDocument = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        doc.into_utility()
    }
}

/// JSON form of a dense table: `{"move_counts": [...], "values": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableDocument {
    pub move_counts: Vec<usize>,
    pub values: Vec<f64>,
}

impl TableDocument {
    pub fn into_utility(self) -> Result<WorldUtility> {
        WorldUtility::from_table(CategoricalDomain::new(self.move_counts)?, self.values)
    }

    /// Dense dump of any utility whose joint space fits in `limit` entries.
    pub fn from_utility(u: &WorldUtility, limit: usize) -> Result<Self> {
        let domain = u.domain();
        let size = domain.joint_size_within(limit).ok_or_else(|| PdError::GuardExceeded {
            size: domain.joint_size().to_string(),
            guard: limit,
        })?;
        let values = (0..size)
            .map(|idx| u.eval_indexed(idx, &domain.decode(idx)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { move_counts: domain.move_counts().to_vec(), values })
    }
}

/// Per-agent private utilities; `None` means the team game where every agent
/// uses the world utility.
#[derive(Debug, Clone, Default)]
pub struct PrivateUtilitySet(Option<Vec<WorldUtility>>);

impl PrivateUtilitySet {
    pub fn team() -> Self {
        Self(None)
    }

    pub fn new(per_agent: Vec<WorldUtility>) -> Self {
        Self(Some(per_agent))
    }

    pub fn is_team(&self) -> bool {
        self.0.is_none()
    }

    pub fn get(&self, agent: usize) -> Option<&WorldUtility> {
        self.0.as_ref().map(|v| &v[agent])
    }
}

/// The world utility plus whatever private utilities the agents descend on.
#[derive(Debug, Clone)]
pub struct GameUtilities {
    world: WorldUtility,
    private: PrivateUtilitySet,
}

impl GameUtilities {
    pub fn team(world: WorldUtility) -> Self {
        Self { world, private: PrivateUtilitySet::team() }
    }

    pub fn with_private(world: WorldUtility, private: PrivateUtilitySet) -> Result<Self> {
        if let Some(v) = &private.0 {
            if v.len() != world.domain().agent_count() {
                return Err(PdError::DimensionMismatch {
                    expected: world.domain().agent_count(),
                    found: v.len(),
                });
            }
            if v.iter().any(|g| g.domain() != world.domain()) {
                return Err(PdError::InvalidParameter("private utility domain differs from world".into()));
            }
        }
        Ok(Self { world, private })
    }

    pub fn world(&self) -> &WorldUtility {
        &self.world
    }

    pub fn private(&self) -> &PrivateUtilitySet {
        &self.private
    }

    pub fn domain(&self) -> &CategoricalDomain {
        self.world.domain()
    }

    /// The utility agent `i` descends on: `g_i`, or `G` in a team game.
    pub fn for_agent(&self, agent: usize) -> &WorldUtility {
        self.private.get(agent).unwrap_or(&self.world)
    }

    /// Replaces the world utility's transform, leaving private utilities alone.
    pub fn with_world_transform(&self, transform: Option<UtilityTransform>) -> Self {
        let world = match transform {
            Some(t) => self.world.with_transform(t),
            None => self.world.base(),
        };
        Self { world, private: self.private.clone() }
    }

    /// Evaluates `G(x)` and, when present, every `g_i(x)`.
    pub fn evaluate(&self, moves: Vec<usize>, block: u64, forced_agent: Option<usize>) -> Result<JointSample> {
        let world = self.world.eval(&moves)?;
        let private = match &self.private.0 {
            Some(v) => Some(v.iter().map(|g| g.eval(&moves)).collect::<Result<Vec<_>>>()?),
            None => None,
        };
        Ok(JointSample { moves, world, private, block, forced_agent })
    }
}

/// One evaluated joint move.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSample {
    pub moves: Vec<usize>,
    pub world: f64,
    pub private: Option<Vec<f64>>,
    pub block: u64,
    /// Agent whose move was pinned when this sample was forced.
    pub forced_agent: Option<usize>,
}

impl JointSample {
    pub fn is_forced(&self) -> bool {
        self.forced_agent.is_some()
    }

    /// The value agent `i` learns from: `g_i(x)` or `G(x)`.
    pub fn agent_value(&self, agent: usize) -> f64 {
        self.private.as_ref().map_or(self.world, |v| v[agent])
    }

    /// Whether this sample may inform agent `i`'s estimates. Forced samples
    /// only inform the agent whose move was pinned.
    pub fn informs(&self, agent: usize) -> bool {
        self.forced_agent.is_none_or(|a| a == agent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p0() -> WorldUtility {
        WorldUtility::from_table(CategoricalDomain::uniform(2, 2).unwrap(), vec![0.0, 1.0, 1.0, 2.0]).unwrap()
    }

    #[test]
    fn table_lookup_is_row_major() {
        let u = WorldUtility::from_table(CategoricalDomain::new(vec![2, 3]).unwrap(), (0..6).map(f64::from).collect())
            .unwrap();
        assert_eq!(u.eval(&[1, 2]).unwrap(), 5.0);
        assert_eq!(u.eval(&[0, 1]).unwrap(), 1.0);
        assert!(u.eval(&[2, 0]).is_err());
    }

    #[test]
    fn table_rejects_wrong_length_and_nan() {
        let d = CategoricalDomain::uniform(2, 2).unwrap();
        assert!(WorldUtility::from_table(d.clone(), vec![0.0; 3]).is_err());
        assert!(WorldUtility::from_table(d, vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn callback_errors_propagate() {
        let d = CategoricalDomain::uniform(1, 2).unwrap();
        let u = WorldUtility::from_fn(d, |x| if x[0] == 0 { Ok(1.0) } else { Err("boom".into()) });
        assert_eq!(u.eval(&[0]).unwrap(), 1.0);
        assert!(matches!(u.eval(&[1]), Err(PdError::UtilityEvaluation(_))));
        let nan = WorldUtility::from_fn(CategoricalDomain::uniform(1, 1).unwrap(), |_| Ok(f64::NAN));
        assert!(nan.eval(&[0]).is_err());
    }

    #[test]
    fn team_game_resolves_to_world() {
        let g = GameUtilities::team(p0());
        assert_eq!(g.for_agent(1).eval(&[1, 1]).unwrap(), 2.0);
        let s = g.evaluate(vec![0, 1], 3, None).unwrap();
        assert_eq!(s.agent_value(0), 1.0);
        assert!(!s.is_forced());
    }

    #[test]
    fn private_utilities_are_per_agent() {
        let d = CategoricalDomain::uniform(2, 2).unwrap();
        let g0 = WorldUtility::from_fn(d.clone(), |x| Ok(x[0] as f64));
        let g1 = WorldUtility::from_fn(d, |x| Ok(10.0 * x[1] as f64));
        let g = GameUtilities::with_private(p0(), PrivateUtilitySet::new(vec![g0, g1])).unwrap();
        let s = g.evaluate(vec![1, 1], 0, Some(1)).unwrap();
        assert_eq!(s.world, 2.0);
        assert_eq!(s.agent_value(0), 1.0);
        assert_eq!(s.agent_value(1), 10.0);
        assert!(s.informs(1) && !s.informs(0));
    }

    #[test]
    fn table_document_round_trip() {
        let doc = TableDocument::from_utility(&p0(), 100).unwrap();
        let json = serde_json::to_string(&doc).unwrap();
        assert_eq!(json, r#"{"move_counts":[2,2],"values":[0.0,1.0,1.0,2.0]}"#);
        let back: TableDocument = serde_json::from_str(&json).unwrap();
        assert_eq!(back.into_utility().unwrap().table(), Some(&[0.0, 1.0, 1.0, 2.0][..]));
    }

    #[test]
    fn transforms() {
        assert!(UtilityTransform::NegExp { lambda: 0.0 }.validate().is_err());
        assert!(UtilityTransform::Affine { scale: -1.0, offset: 0.0 }.validate().is_err());
        let u = p0().with_transform(UtilityTransform::NegExp { lambda: 1.0 });
        assert_eq!(u.eval(&[0, 0]).unwrap(), -1.0);
        assert_eq!(u.base().eval(&[1, 1]).unwrap(), 2.0);
    }
}
