//! Named benchmark suites. Each returns JSON records; none asserts.

use serde_json::{json, Value};

use crate::domain::ProductDistribution;
use crate::error::{PdError, Result};
use crate::montecarlo::{estimate_bit, run_block, AgingAccumulator};
use crate::oracle;
use crate::rng::RandomSource;
use crate::utility::GameUtilities;
use crate::variants::threshold_from_samples;

use super::config::{Algorithm, ExpectationMode, GeneratorSpec, ProblemSpec, RunConfig};
use super::problems::generate_problem;
use super::run::run;

pub const SUITES: [&str; 3] = ["variance", "aging", "e2e"];

pub fn run_suite(name: &str) -> Result<Vec<Value>> {
    match name {
        "variance" => variance_suite(),
        "aging" => aging_suite(),
        "e2e" => e2e_suite(),
        other => Err(PdError::InvalidParameter(format!("unknown suite {other:?}; expected one of {SUITES:?}"))),
    }
}

fn p0() -> Result<GameUtilities> {
    Ok(GameUtilities::team(generate_problem("sum", 2, 2, 0, None)?))
}

fn variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

/// Block-to-block variance of the plain estimate of `E(G | x_0 = 1)` against
/// the threshold bit estimate, at uniform `q` on the sum problem.
fn variance_suite() -> Result<Vec<Value>> {
    let g = p0()?;
    let q = ProductDistribution::uniform(g.domain());
    let mut rng = RandomSource::new(0, 0);
    let (blocks, len) = (500, 100);
    let (mut plain, mut bits) = (Vec::new(), Vec::new());
    for k in 0..blocks {
        let (stats, samples) = run_block(&q, &g, len, k, &mut rng)?;
        let median = threshold_from_samples(&samples, 0.5)?;
        plain.push(stats.mean(0, 1).ok_or(PdError::NoCoverage { agent: 0, mv: 1 })?);
        bits.push(estimate_bit(&samples, median, 0, 1)?);
    }
    let range = 2.0;
    let plain_var = variance(&plain) / (range * range);
    let bit_var = variance(&bits);
    Ok(vec![json!({
        "suite": "variance",
        "blocks": blocks,
        "block_len": len,
        "normalized_g_variance": plain_var,
        "bit_variance": bit_var,
        "bit_not_larger": bit_var <= plain_var,
    })])
}

/// RMS error of the aged estimate of `E(G | x_0 = 1)` at fixed uniform `q`,
/// for short blocks under several aging constants.
fn aging_suite() -> Result<Vec<Value>> {
    let g = p0()?;
    let q = ProductDistribution::uniform(g.domain());
    let truth = oracle::exact_conditional(g.world(), &q, 0, 1)?;
    let mut out = Vec::new();
    for len in [10usize, 100] {
        for kappa in [0.0, 0.1, 1.0, f64::INFINITY] {
            let mut rng = RandomSource::new(1, 0);
            let mut acc = AgingAccumulator::new(g.domain());
            let mut sq = 0.0;
            let mut n = 0usize;
            for k in 0..200u64 {
                let (stats, _) = run_block(&q, &g, len, k, &mut rng)?;
                acc.update(&stats, kappa)?;
                if k >= 20 {
                    if let Some(e) = acc.estimate(0, 1) {
                        sq += (e - truth).powi(2);
                        n += 1;
                    }
                }
            }
            out.push(json!({
                "suite": "aging",
                "block_len": len,
                "kappa_age": if kappa.is_finite() { json!(kappa) } else { json!("inf") },
                "rms_error": (sq / n.max(1) as f64).sqrt(),
            }));
        }
    }
    Ok(out)
}

/// Annealed run on a seeded 4×4 random table, used by the end-to-end suite.
pub fn e2e_config(problem_seed: u64, mode: ExpectationMode) -> RunConfig {
    let mut c = RunConfig::new(
        ProblemSpec::Generator(GeneratorSpec {
            name: "random-table".into(),
            agents: 4,
            moves: 4,
            seed: problem_seed,
            costs: None,
        }),
        Algorithm::Gradient,
    );
    c.expectation = mode;
    c.seed = problem_seed;
    c.schedule.beta0 = 1.0;
    c.schedule.beta_growth = 2.0;
    c.schedule.rounds = 10;
    c.schedule.inner_steps = 100;
    c.descent.step_size = 0.05;
    c.monte_carlo.block_len = 200;
    c.monte_carlo.kappa_age = 1.0;
    c
}

/// Whether the run's best sampled move is the oracle global minimum.
pub fn e2e_hit(config: &RunConfig) -> Result<bool> {
    let u = config.build_utilities(None)?;
    let (x_star, _) = oracle::global_minimum(u.world())?;
    let out = run(config, None, None)?;
    Ok(out.summary.best_x == x_star)
}

fn e2e_suite() -> Result<Vec<Value>> {
    let mut out = Vec::new();
    for mode in [ExpectationMode::Exact, ExpectationMode::MonteCarlo] {
        let mut hits = 0;
        for seed in 0..20 {
            if e2e_hit(&e2e_config(seed, mode))? {
                hits += 1;
            }
        }
        out.push(json!({ "suite": "e2e", "mode": mode, "problems": 20, "hits": hits }));
    }
    Ok(out)
}
