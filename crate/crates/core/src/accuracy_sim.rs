//! Monte-Carlo check of the sampling accuracy argument.
//!
//! Each synthetic library has a true usage frequency `p`. A trial draws `N`
//! independent Bernoulli(p) indicators, estimates `p̂` as their mean, and
//! builds the normal-approximation interval around it. Over many trials the
//! interval should contain `p` at close to the nominal rate.
//!
//! Trials use independent ChaCha streams keyed by `(seed, trial)`, so the
//! report is identical no matter how trials are scheduled across threads.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::confidence_interval;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub p_true: Vec<f64>,
    pub n_samples: u64,
    pub trials: u64,
    pub z: f64,
    pub seed: u64,
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        if let Some(p) = self.p_true.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidArgument(format!("p = {p} is outside [0, 1]")));
        }
        if self.n_samples == 0 || self.trials == 0 {
            return Err(Error::InvalidArgument("n and trials must be >= 1".into()));
        }
        if self.z.is_nan() || self.z <= 0.0 {
            return Err(Error::InvalidArgument(format!("z {} must be positive", self.z)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibrarySim {
    pub p_true: f64,
    /// Fraction of trials whose interval contains `p_true`.
    pub coverage: f64,
    pub mean_abs_error: f64,
    pub mean_width: f64,
    pub min_width: f64,
    pub max_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub spec: SimSpec,
    pub libraries: Vec<LibrarySim>,
}

fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

#[derive(Clone, Copy)]
struct TrialOutcome {
    covered: bool,
    abs_error: f64,
    width: f64,
}

pub fn simulate(spec: &SimSpec) -> Result<SimReport> {
    spec.validate()?;
    let n = spec.n_samples;
    let per_trial: Vec<Vec<TrialOutcome>> = (0..spec.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(spec.seed, trial);
            spec.p_true
                .iter()
                .map(|&p| {
                    let hits = (0..n).filter(|_| rng.gen_bool(p)).count() as f64;
                    let p_hat = hits / n as f64;
                    let (lo, hi) = confidence_interval(p_hat, n, spec.z);
                    TrialOutcome {
                        covered: lo <= p && p <= hi,
                        abs_error: (p_hat - p).abs(),
                        width: hi - lo,
                    }
                })
                .collect()
        })
        .collect();

    let trials = spec.trials as f64;
    let libraries = spec
        .p_true
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let outcomes = per_trial.iter().map(|t| t[i]);
            let (mut covered, mut err, mut width) = (0u64, 0.0, 0.0);
            let (mut min_width, mut max_width) = (f64::INFINITY, 0.0f64);
            for o in outcomes {
                covered += u64::from(o.covered);
                err += o.abs_error;
                width += o.width;
                min_width = min_width.min(o.width);
                max_width = max_width.max(o.width);
            }
            LibrarySim {
                p_true: p,
                coverage: covered as f64 / trials,
                mean_abs_error: err / trials,
                mean_width: width / trials,
                min_width,
                max_width,
            }
        })
        .collect();
    Ok(SimReport {
        spec: spec.clone(),
        libraries,
    })
}

/// Probability that a library with frequency `p` shows up at least once in `n` samples.
pub fn analytic_detection_probability(p: f64, n: u64) -> f64 {
    1.0 - (1.0 - p).powf(n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detectability {
    pub p_rare: f64,
    pub n_samples: u64,
    pub trials: u64,
    pub detected_fraction: f64,
    pub analytic: f64,
    /// Standard error of the empirical fraction under the analytic probability.
    pub std_error: f64,
}

/// Fraction of trials in which a library of frequency `p_rare` receives at
/// least one of `n` samples, next to the closed form.
pub fn check_rare_detectability(p_rare: f64, n: u64, trials: u64, seed: u64) -> Result<Detectability> {
    if !(0.0..=1.0).contains(&p_rare) {
        return Err(Error::InvalidArgument(format!("p = {p_rare} is outside [0, 1]")));
    }
    if n == 0 || trials == 0 {
        return Err(Error::InvalidArgument("n and trials must be >= 1".into()));
    }
    let detected = (0..trials)
        .into_par_iter()
        .filter(|&trial| {
            let mut rng = trial_rng(seed, trial);
            (0..n).any(|_| rng.gen_bool(p_rare))
        })
        .count();
    let analytic = analytic_detection_probability(p_rare, n);
    Ok(Detectability {
        p_rare,
        n_samples: n,
        trials,
        detected_fraction: detected as f64 / trials as f64,
        analytic,
        std_error: (analytic * (1.0 - analytic) / trials as f64).sqrt(),
    })
}
