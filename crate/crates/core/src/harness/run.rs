//! The annealing loop: equilibrate at fixed β, raise β, repeat.

use std::fs;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use crate::descent::{gradient_norm, gradient_step_with, nearest_newton_step_with, projected_gradient};
use crate::domain::ProductDistribution;
use crate::error::{PdError, Result};
use crate::lagrangian::{brouwer_step, Conditionals, ExactSource, ExpectationSource};
use crate::montecarlo::{MonteCarloSource, SampleLog};
use crate::oracle;
use crate::rng::RandomSource;
use crate::utility::{GameUtilities, JointSample};
use crate::variants::{self, StallAction, StallDetector, Threshold, VariantConfig, VariantKind};

use super::config::{Algorithm, ExpectationMode, RunConfig};
use super::trace::{self, Summary, TraceRow};

/// Joint spaces up to this size get exact `E(G)` and Lagrangian values in the
/// trace even in Monte-Carlo mode.
pub const TRACE_EXACT_LIMIT: usize = 1 << 20;

const INIT_STREAM: u64 = 0;
const EVAL_STREAM: u64 = 1;
const SAMPLING_STREAM: u64 = 2;

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: Vec<TraceRow>,
    pub summary: Summary,
    pub final_q: ProductDistribution,
}

/// A run that stopped on an error, with the rows written before it.
#[derive(Debug)]
pub struct RunFailure {
    pub error: PdError,
    pub trace: Vec<TraceRow>,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "run aborted after {} trace rows: {}", self.trace.len(), self.error)
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<RunFailure> for PdError {
    fn from(f: RunFailure) -> Self {
        f.error
    }
}

enum Source {
    Exact(ExactSource),
    Sampled(Box<MonteCarloSource>),
}

impl Source {
    fn set_utilities(&mut self, utilities: GameUtilities) -> Result<()> {
        match self {
            Source::Exact(s) => *s = ExactSource::new(utilities)?,
            Source::Sampled(s) => s.set_utilities(utilities),
        }
        Ok(())
    }
}

impl ExpectationSource for Source {
    fn conditionals(&mut self, q: &ProductDistribution) -> Result<Conditionals> {
        match self {
            Source::Exact(s) => s.conditionals(q),
            Source::Sampled(s) => s.conditionals(q),
        }
    }

    fn is_exact(&self) -> bool {
        matches!(self, Source::Exact(_))
    }
}

struct Runner<'a> {
    config: &'a RunConfig,
    utilities: GameUtilities,
    variant: Option<VariantConfig>,
    source: Source,
    q: ProductDistribution,
    beta: f64,
    eval_rng: RandomSource,
    best: Option<(Vec<usize>, f64)>,
    exact_trace: bool,
    detector: Option<StallDetector>,
    last_estimate: Option<f64>,
    trace: Vec<TraceRow>,
}

/// Runs `config`. Relative table paths resolve against `base_dir`.
pub fn run(config: &RunConfig, base_dir: Option<&Path>, log: Option<SampleLog>) -> std::result::Result<RunOutcome, RunFailure> {
    let started = Instant::now();
    let mut runner = Runner::new(config, base_dir, log).map_err(|error| RunFailure { error, trace: Vec::new() })?;
    match runner.execute() {
        Ok(()) => {
            if let Source::Sampled(s) = &mut runner.source {
                s.flush_log().map_err(|error| RunFailure { error, trace: runner.trace.clone() })?;
            }
            let (best_x, best_g) = runner.best.clone().unwrap_or_default();
            let summary = Summary {
                best_x,
                best_g,
                final_q: runner.q.marginals().to_vec(),
                seconds: started.elapsed().as_secs_f64(),
            };
            Ok(RunOutcome { trace: runner.trace, summary, final_q: runner.q })
        }
        Err(error) => Err(RunFailure { error, trace: runner.trace }),
    }
}

/// Runs `config` and writes `trace.jsonl` and `summary.json` into `out_dir`.
/// On failure the partial trace is still written.
pub fn run_to_dir(config: &RunConfig, base_dir: Option<&Path>, out_dir: &Path) -> std::result::Result<RunOutcome, RunFailure> {
    let wrap = |error: PdError| RunFailure { error, trace: Vec::new() };
    fs::create_dir_all(out_dir).map_err(|e| wrap(e.into()))?;
    let log = if config.log_samples && config.expectation == ExpectationMode::MonteCarlo {
        let file = fs::File::create(out_dir.join(trace::SAMPLES_FILE)).map_err(|e| wrap(e.into()))?;
        Some(SampleLog::new(Box::new(BufWriter::new(file))))
    } else {
        None
    };
    let trace_path = out_dir.join(trace::TRACE_FILE);
    match run(config, base_dir, log) {
        Ok(outcome) => {
            trace::write_trace(&trace_path, &outcome.trace).map_err(wrap)?;
            trace::write_summary(&out_dir.join(trace::SUMMARY_FILE), &outcome.summary).map_err(wrap)?;
            Ok(outcome)
        }
        Err(failure) => {
            // The original error matters more than a failure to flush.
            let _ = trace::write_trace(&trace_path, &failure.trace);
            Err(failure)
        }
    }
}

impl<'a> Runner<'a> {
    fn new(config: &'a RunConfig, base_dir: Option<&Path>, log: Option<SampleLog>) -> Result<Self> {
        config.validate()?;
        if config.eval_samples == 0 {
            return Err(PdError::InvalidParameter("eval_samples must be at least 1".into()));
        }
        let utilities = config.build_utilities(base_dir)?;
        let master = RandomSource::new(config.seed, INIT_STREAM);
        let mut q = config.initial_marginals(&utilities)?;
        if config.init.jitter > 0.0 {
            q = q.jittered(config.init.jitter, &mut master.substream(INIT_STREAM))?;
        }
        let variant = config.effective_variant();
        let source = match config.expectation {
            ExpectationMode::Exact => Source::Exact(ExactSource::new(utilities.clone())?),
            ExpectationMode::MonteCarlo => {
                let mut s = MonteCarloSource::new(utilities.clone(), config.monte_carlo, master.substream(SAMPLING_STREAM))?;
                if let Some(v) = variant.filter(|v| v.kind == VariantKind::Percentile) {
                    s = s.with_percentile(v.kappa_pct)?;
                }
                if let Some(log) = log {
                    s = s.with_log(log);
                }
                Source::Sampled(Box::new(s))
            }
        };
        let exact_trace = utilities.domain().joint_size_within(TRACE_EXACT_LIMIT).is_some();
        let detector = variant.filter(|v| v.kind == VariantKind::Transform).map(|v| StallDetector::new(v.stall_window));
        Ok(Self {
            config,
            utilities,
            variant,
            source,
            q,
            beta: config.schedule.beta0,
            eval_rng: master.substream(EVAL_STREAM),
            best: None,
            exact_trace,
            detector,
            last_estimate: None,
            trace: Vec::new(),
        })
    }

    fn execute(&mut self) -> Result<()> {
        self.sample_from_q()?;
        self.record(0, 0)?;
        let schedule = self.config.schedule;
        for round in 1..=schedule.rounds {
            if round > 1 {
                self.beta *= schedule.beta_growth;
            }
            if let Some(d) = &mut self.detector {
                d.reset();
            }
            for step in 1..=schedule.inner_steps {
                if self.step()? {
                    break;
                }
                self.track_best()?;
                self.record(round, step)?;
            }
        }
        Ok(())
    }

    /// One update at the current β. Returns true once an exact-mode round has
    /// equilibrated, in which case `q` is unchanged.
    fn step(&mut self) -> Result<bool> {
        let cfg = self.config.descent;
        let tol = self.config.schedule.tolerance;
        let exact = self.config.expectation == ExpectationMode::Exact;
        let beta = self.beta;
        let next = match self.config.algorithm {
            Algorithm::Gradient | Algorithm::NearestNewton | Algorithm::Brouwer => {
                let c = self.source.conditionals(&self.q)?;
                self.last_estimate = Some(c.expected_world());
                if exact && gradient_norm(&projected_gradient(&self.q, &c, beta)) < tol {
                    return Ok(true);
                }
                match self.config.algorithm {
                    Algorithm::Gradient => gradient_step_with(&self.q, &c, &mut self.source, beta, &cfg)?,
                    Algorithm::NearestNewton => nearest_newton_step_with(&self.q, &c, &mut self.source, beta, &cfg)?,
                    _ => brouwer_step(&self.q, &mut c.clone(), beta, self.config.brouwer_mix)?,
                }
            }
            algorithm => {
                let variant = self.variant.unwrap_or_else(|| VariantConfig::new(VariantKind::KlpqExponential));
                let next = if exact { self.exact_variant_step(algorithm, &variant)? } else { self.sampled_variant_step(algorithm, &variant)? };
                if exact && next.max_abs_diff(&self.q) < tol {
                    return Ok(true);
                }
                next
            }
        };
        self.q = next;
        Ok(false)
    }

    fn exact_variant_step(&mut self, algorithm: Algorithm, v: &VariantConfig) -> Result<ProductDistribution> {
        let world = self.utilities.world();
        let floor = self.config.descent.floor;
        let threshold = || match v.threshold {
            Threshold::Fixed { value } => Ok(value),
            Threshold::Percentile { fraction } => variants::threshold_from_distribution(world, &self.q, fraction),
        };
        match algorithm {
            Algorithm::ThresholdGradient => {
                let bits = variants::exact_bits(world, &self.q, threshold()?, v.smoothing)?;
                variants::threshold_gradient_step(&self.q, &bits, self.beta, self.config.descent.step_size, floor)
            }
            Algorithm::KlpqThreshold => variants::klpq_threshold_exact(world, &self.q, threshold()?, floor),
            _ => variants::klpq_exponential_exact(world, &self.q, self.beta, floor),
        }
    }

    fn sampled_variant_step(&mut self, algorithm: Algorithm, v: &VariantConfig) -> Result<ProductDistribution> {
        let Source::Sampled(src) = &mut self.source else {
            return Err(PdError::InvalidParameter("sampled update without a sampling source".into()));
        };
        src.sample_block(&self.q)?;
        self.last_estimate = src.current().ok().map(|c| c.expected_world());
        let samples = src.last_samples();
        let domain = self.utilities.domain();
        let floor = self.config.descent.floor;
        let threshold = || match v.threshold {
            Threshold::Fixed { value } => Ok(value),
            Threshold::Percentile { fraction } => variants::threshold_from_samples(samples, fraction),
        };
        match algorithm {
            Algorithm::ThresholdGradient => {
                let bits = variants::sample_bits(domain, samples, threshold()?, v.smoothing)?;
                variants::threshold_gradient_step(&self.q, &bits, self.beta, self.config.descent.step_size, floor)
            }
            Algorithm::KlpqThreshold => variants::klpq_threshold_sampled(domain, samples, threshold()?, v.epsilon, floor),
            _ => variants::klpq_exponential_sampled(domain, samples, self.beta, v.epsilon, floor),
        }
    }

    fn offer(&mut self, x: &[usize], g: f64) {
        if self.best.as_ref().is_none_or(|(_, b)| g < *b) {
            self.best = Some((x.to_vec(), g));
        }
    }

    /// Exact mode draws fresh joint moves from `q`; Monte-Carlo mode reuses the
    /// latest block's samples.
    fn track_best(&mut self) -> Result<()> {
        match &self.source {
            Source::Sampled(src) => {
                let engaged = self.detector.as_ref().is_some_and(|d| d.is_engaged());
                let seen: Vec<JointSample> = src.last_samples().to_vec();
                for s in &seen {
                    let g = if engaged { self.utilities.world().eval(&s.moves)? } else { s.world };
                    self.offer(&s.moves, g);
                }
                if seen.is_empty() {
                    self.sample_from_q()?;
                }
                Ok(())
            }
            Source::Exact(_) => self.sample_from_q(),
        }
    }

    fn sample_from_q(&mut self) -> Result<()> {
        for _ in 0..self.config.eval_samples {
            let x = self.q.sample_joint(&mut self.eval_rng);
            let g = self.utilities.world().eval(&x)?;
            self.offer(&x, g);
        }
        Ok(())
    }

    fn record(&mut self, round: usize, step: usize) -> Result<()> {
        let entropy = self.q.entropy();
        let expected_g = if self.exact_trace {
            oracle::exact_expectation(self.utilities.world(), &self.q)?
        } else {
            match self.last_estimate {
                Some(e) => e,
                None => self.sampled_expectation(),
            }
        };
        let lagrangian = if self.beta == 0.0 { -entropy } else { self.beta * expected_g - entropy };
        let (best_x, best_g) = self.best.clone().unwrap_or_default();
        self.trace.push(TraceRow {
            round,
            step,
            beta: self.beta,
            lagrangian,
            expected_g,
            entropy,
            best_g,
            best_x,
            modal_x: self.q.modal_move(),
        });
        if let (Some(detector), Some(v)) = (&mut self.detector, self.variant) {
            match detector.observe(lagrangian) {
                StallAction::Continue => {}
                StallAction::Engage => self.source.set_utilities(self.utilities.with_world_transform(Some(v.transform)))?,
                StallAction::Revert => self.source.set_utilities(self.utilities.clone())?,
            }
        }
        Ok(())
    }

    /// Mean world utility of a fresh draw from `q`, for traces of problems too
    /// large to enumerate before any block has been sampled.
    fn sampled_expectation(&mut self) -> f64 {
        let n = self.config.eval_samples.max(1);
        let mut total = 0.0;
        for _ in 0..n {
            let x = self.q.sample_joint(&mut self.eval_rng);
            total += self.utilities.world().eval(&x).unwrap_or(f64::NAN);
        }
        total / n as f64
    }
}
