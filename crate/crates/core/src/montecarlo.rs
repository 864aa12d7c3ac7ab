//! Sampled estimates of the per-agent conditional utilities.
//!
//! Each block draws `L` joint moves from `q` and averages the observed
//! utilities per `(agent, move)`. Block means are combined across blocks with
//! exponential aging, so that older blocks, drawn under an older `q`, count
//! for less. A move that drew no samples in the current block gets a few
//! forced samples with that move pinned and the other agents drawn from `q`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::domain::{CategoricalDomain, ProductDistribution};
use crate::error::{PdError, Result};
use crate::lagrangian::{Conditionals, ExpectationSource};
use crate::rng::RandomSource;
use crate::utility::{GameUtilities, JointSample};
use crate::variants::percentile_filter;

/// Default number of forced samples per uncovered `(agent, move)`.
pub const DEFAULT_FORCED: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    /// Samples per block, `L`.
    pub block_len: usize,
    /// Aging constant; 0 weights all blocks equally, infinity keeps only the
    /// latest defined block.
    pub kappa_age: f64,
    /// Forced samples per uncovered move.
    pub n_force: usize,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self { block_len: 200, kappa_age: 1.0, n_force: DEFAULT_FORCED }
    }
}

impl MonteCarloConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_age >= 0.0) {
            return Err(PdError::InvalidParameter(format!("aging constant must be >= 0, got {}", self.kappa_age)));
        }
        Ok(())
    }
}

/// Per-`(agent, move)` sums for one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockStats {
    block: u64,
    total: u64,
    counts: Vec<Vec<u64>>,
    sums: Vec<Vec<f64>>,
    forced_counts: Vec<Vec<u64>>,
    forced_sums: Vec<Vec<f64>>,
}

impl BlockStats {
    pub fn new(block: u64, domain: &CategoricalDomain) -> Self {
        let zeros_u = || domain.move_counts().iter().map(|&m| vec![0u64; m]).collect::<Vec<_>>();
        let zeros_f = || domain.move_counts().iter().map(|&m| vec![0.0; m]).collect::<Vec<_>>();
        Self {
            block,
            total: 0,
            counts: zeros_u(),
            sums: zeros_f(),
            forced_counts: zeros_u(),
            forced_sums: zeros_f(),
        }
    }

    pub fn from_samples(block: u64, domain: &CategoricalDomain, samples: &[JointSample]) -> Self {
        let mut stats = Self::new(block, domain);
        for s in samples {
            if s.is_forced() {
                stats.absorb_forced(s);
            } else {
                stats.record(s);
            }
        }
        stats
    }

    /// Adds a regular sample to every agent's row.
    pub fn record(&mut self, s: &JointSample) {
        self.total += 1;
        for (i, &m) in s.moves.iter().enumerate() {
            self.counts[i][m] += 1;
            self.sums[i][m] += s.agent_value(i);
        }
    }

    /// Adds a forced sample to the pinned agent's row only.
    pub fn absorb_forced(&mut self, s: &JointSample) {
        let Some(i) = s.forced_agent else {
            return self.record(s);
        };
        let m = s.moves[i];
        self.forced_counts[i][m] += 1;
        self.forced_sums[i][m] += s.agent_value(i);
    }

    pub fn block(&self) -> u64 {
        self.block
    }

    /// Regular samples in the block.
    pub fn total(&self) -> u64 {
        self.total
    }

    /// Regular plus forced samples for `(agent, move)`.
    pub fn count(&self, agent: usize, mv: usize) -> u64 {
        self.counts[agent][mv] + self.forced_counts[agent][mv]
    }

    pub fn regular_count(&self, agent: usize, mv: usize) -> u64 {
        self.counts[agent][mv]
    }

    /// Block mean `Ĝ_{i,j}(k)`, defined only when the cell has samples.
    pub fn mean(&self, agent: usize, mv: usize) -> Option<f64> {
        let n = self.count(agent, mv);
        (n > 0).then(|| (self.sums[agent][mv] + self.forced_sums[agent][mv]) / n as f64)
    }

    /// Cells with no samples at all in this block.
    pub fn uncovered(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, row) in self.counts.iter().enumerate() {
            for j in 0..row.len() {
                if self.count(i, j) == 0 {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Draws `block_len` joint moves from `q` and evaluates them.
pub fn run_block(
    q: &ProductDistribution,
    utilities: &GameUtilities,
    block_len: usize,
    block: u64,
    rng: &mut RandomSource,
) -> Result<(BlockStats, Vec<JointSample>)> {
    let domain = utilities.domain();
    let mut stats = BlockStats::new(block, domain);
    let mut samples = Vec::with_capacity(block_len);
    for completed in 0..block_len {
        let x = q.sample_joint(rng);
        let s = utilities.evaluate(x, block, None).map_err(|e| PdError::PartialBlock {
            completed,
            requested: block_len,
            reason: e.to_string(),
        })?;
        stats.record(&s);
        samples.push(s);
    }
    Ok((stats, samples))
}

/// `n_force` samples per uncovered `(agent, move)`, with that agent pinned and
/// every other agent drawn from its own marginal.
pub fn force_samples(
    q: &ProductDistribution,
    utilities: &GameUtilities,
    uncovered: &[(usize, usize)],
    n_force: usize,
    block: u64,
    rng: &mut RandomSource,
) -> Result<Vec<JointSample>> {
    let mut out = Vec::with_capacity(uncovered.len() * n_force);
    for &(agent, mv) in uncovered {
        if agent >= q.agent_count() || mv >= q.marginal(agent).len() {
            return Err(PdError::InvalidParameter(format!("no move {mv} for agent {agent}")));
        }
        for _ in 0..n_force {
            let mut x = q.sample_joint(rng);
            x[agent] = mv;
            out.push(utilities.evaluate(x, block, Some(agent))?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct AgedCell {
    numerator: f64,
    denominator: f64,
    last_block: Option<u64>,
}

/// Online exponentially aged block means, three scalars per `(agent, move)`.
///
/// After blocks `m₁ < … < m_k` with defined means, the estimate is
/// `Σ Ĝ(m) e^{−κ(k−m)} / Σ e^{−κ(k−m)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgingAccumulator {
    cells: Vec<Vec<AgedCell>>,
    last_block: Option<u64>,
}

impl AgingAccumulator {
    pub fn new(domain: &CategoricalDomain) -> Self {
        Self {
            cells: domain.move_counts().iter().map(|&m| vec![AgedCell::default(); m]).collect(),
            last_block: None,
        }
    }

    pub fn last_block(&self) -> Option<u64> {
        self.last_block
    }

    /// Folds in one block; blocks must arrive in increasing order.
    pub fn update(&mut self, stats: &BlockStats, kappa: f64) -> Result<()> {
        if !(kappa >= 0.0) {
            return Err(PdError::InvalidParameter(format!("aging constant must be >= 0, got {kappa}")));
        }
        if let Some(last) = self.last_block {
            if stats.block() <= last {
                return Err(PdError::OutOfOrderBlock { last, got: stats.block() });
            }
        }
        for (i, row) in self.cells.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                let Some(mean) = stats.mean(i, j) else { continue };
                let decay = match cell.last_block {
                    Some(prev) => (-kappa * (stats.block() - prev) as f64).exp(),
                    None => 0.0,
                };
                cell.numerator = cell.numerator * decay + mean;
                cell.denominator = cell.denominator * decay + 1.0;
                cell.last_block = Some(stats.block());
            }
        }
        self.last_block = Some(stats.block());
        Ok(())
    }

    pub fn estimate(&self, agent: usize, mv: usize) -> Option<f64> {
        let c = &self.cells[agent][mv];
        (c.denominator > 0.0).then(|| c.numerator / c.denominator)
    }

    pub fn estimates(&self) -> Result<Vec<Vec<f64>>> {
        self.cells
            .iter()
            .enumerate()
            .map(|(i, row)| {
                (0..row.len())
                    .map(|j| self.estimate(i, j).ok_or(PdError::EstimatorUnavailable { agent: i, mv: j }))
                    .collect()
            })
            .collect()
    }
}

/// Free-function form of [`AgingAccumulator::update`].
pub fn aged_update(acc: &mut AgingAccumulator, stats: &BlockStats, kappa: f64) -> Result<()> {
    acc.update(stats, kappa)
}

/// Fraction of the samples with `x_i = j` (that may inform agent `i`) whose
/// world utility is below `threshold`: an estimate of `q(G < K | x_i = j)`.
pub fn estimate_bit(samples: &[JointSample], threshold: f64, agent: usize, mv: usize) -> Result<f64> {
    let mut n = 0usize;
    let mut below = 0usize;
    for s in samples.iter().filter(|s| s.moves[agent] == mv && s.informs(agent)) {
        n += 1;
        if s.world < threshold {
            below += 1;
        }
    }
    if n == 0 {
        return Err(PdError::NoCoverage { agent, mv });
    }
    Ok(below as f64 / n as f64)
}

#[derive(Serialize)]
struct SampleRecord<'a> {
    block: u64,
    x: &'a [usize],
    #[serde(rename = "G")]
    g: f64,
    forced: bool,
}

/// JSON-lines log with one `{block, x, G, forced}` record per sample.
pub struct SampleLog {
    out: Box<dyn Write + Send>,
}

impl SampleLog {
    pub fn new(out: Box<dyn Write + Send>) -> Self {
        Self { out }
    }

    pub fn write(&mut self, s: &JointSample) -> Result<()> {
        let rec = SampleRecord { block: s.block, x: &s.moves, g: s.world, forced: s.is_forced() };
        serde_json::to_writer(&mut self.out, &rec)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Expectation source that samples a fresh block on every query and answers
/// with the aged estimates.
pub struct MonteCarloSource {
    utilities: GameUtilities,
    config: MonteCarloConfig,
    accumulator: AgingAccumulator,
    rng: RandomSource,
    next_block: u64,
    percentile: Option<f64>,
    last_samples: Vec<JointSample>,
    log: Option<SampleLog>,
}

impl MonteCarloSource {
    pub fn new(utilities: GameUtilities, config: MonteCarloConfig, rng: RandomSource) -> Result<Self> {
        config.validate()?;
        let accumulator = AgingAccumulator::new(utilities.domain());
        Ok(Self {
            utilities,
            config,
            accumulator,
            rng,
            next_block: 0,
            percentile: None,
            last_samples: Vec::new(),
            log: None,
        })
    }

    /// Keep only the lowest `kappa` fraction of each block's samples.
    pub fn with_percentile(mut self, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa <= 1.0) {
            return Err(PdError::InvalidParameter(format!("percentile must be in (0, 1], got {kappa}")));
        }
        self.percentile = Some(kappa);
        Ok(self)
    }

    pub fn with_log(mut self, log: SampleLog) -> Self {
        self.log = Some(log);
        self
    }

    /// Swaps the utilities. Aged estimates of the old utilities are dropped.
    pub fn set_utilities(&mut self, utilities: GameUtilities) {
        self.accumulator = AgingAccumulator::new(utilities.domain());
        self.utilities = utilities;
    }

    pub fn utilities(&self) -> &GameUtilities {
        &self.utilities
    }

    pub fn accumulator(&self) -> &AgingAccumulator {
        &self.accumulator
    }

    /// Regular and forced samples from the most recent block.
    pub fn last_samples(&self) -> &[JointSample] {
        &self.last_samples
    }

    pub fn flush_log(&mut self) -> Result<()> {
        match &mut self.log {
            Some(log) => log.flush(),
            None => Ok(()),
        }
    }

    /// Samples one block at `q` and folds it into the aged estimates.
    pub fn sample_block(&mut self, q: &ProductDistribution) -> Result<()> {
        let block = self.next_block;
        self.next_block += 1;
        let domain = self.utilities.domain().clone();
        let (mut stats, mut samples) = run_block(q, &self.utilities, self.config.block_len, block, &mut self.rng)?;
        if let (Some(kappa), false) = (self.percentile, samples.is_empty()) {
            let kept = percentile_filter(&samples, kappa)?;
            stats = BlockStats::from_samples(block, &domain, &kept);
        }
        let forced = force_samples(q, &self.utilities, &stats.uncovered(), self.config.n_force, block, &mut self.rng)?;
        for s in &forced {
            stats.absorb_forced(s);
        }
        self.accumulator.update(&stats, self.config.kappa_age)?;
        samples.extend(forced);
        if let Some(log) = &mut self.log {
            for s in &samples {
                log.write(s)?;
            }
        }
        self.last_samples = samples;
        Ok(())
    }

    /// Mean world utility of the latest block's regular samples, falling back
    /// to its forced samples.
    fn block_world_mean(&self) -> Option<f64> {
        let mean = |it: &mut dyn Iterator<Item = &JointSample>| {
            let (n, sum) = it.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x.world));
            (n > 0).then(|| sum / n as f64)
        };
        mean(&mut self.last_samples.iter().filter(|s| !s.is_forced()))
            .or_else(|| mean(&mut self.last_samples.iter()))
    }

    /// Aged estimates as of the latest block, without sampling.
    pub fn current(&self) -> Result<Conditionals> {
        let values = self.accumulator.estimates()?;
        let expected_world = self.block_world_mean().ok_or(PdError::EstimatorUnavailable { agent: 0, mv: 0 })?;
        Conditionals::new(values, expected_world)
    }
}

impl ExpectationSource for MonteCarloSource {
    fn conditionals(&mut self, q: &ProductDistribution) -> Result<Conditionals> {
        self.sample_block(q)?;
        self.current()
    }
}
