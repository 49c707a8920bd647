//! Central-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Number of parameters to probe; all of them when `None` or larger
    /// than the parameter count.
    pub samples: Option<usize>,
    pub seed: u64,
    /// Denominator floor for the relative error, so that near-zero
    /// gradients are compared in absolute terms.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-4,
            tolerance: 1e-4,
            samples: None,
            seed: 0,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub index: usize,
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(|e| e.rel_error > self.tolerance)
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares `analytic` against central differences of `loss` at `params`.
///
/// `name` maps a flat parameter index to a readable label used in the report
/// and in errors.
pub fn grad_check<F, N>(
    loss: F,
    params: &[f64],
    analytic: &[f64],
    name: N,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> f64,
    N: Fn(usize) -> String,
{
    if analytic.len() != params.len() {
        return Err(Error::shape("analytic gradient", params.len(), analytic.len()));
    }
    if !loss(params).is_finite() {
        return Err(Error::NonFiniteLoss {
            parameter: "<unperturbed>".into(),
        });
    }
    let n = params.len();
    let mut indices: Vec<usize> = match opts.samples {
        Some(k) if k < n => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            sample(&mut rng, n, k).into_vec()
        }
        _ => (0..n).collect(),
    };
    indices.sort_unstable();

    let mut work = params.to_vec();
    let mut entries = Vec::with_capacity(indices.len());
    for i in indices {
        let orig = work[i];
        work[i] = orig + opts.step;
        let plus = loss(&work);
        work[i] = orig - opts.step;
        let minus = loss(&work);
        work[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFiniteLoss { parameter: name(i) });
        }
        let numeric = (plus - minus) / (2.0 * opts.step);
        entries.push(GradCheckEntry {
            index: i,
            name: name(i),
            analytic: analytic[i],
            numeric,
            rel_error: relative_error(analytic[i], numeric, opts.floor),
        });
    }
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        entries,
        max_rel_error,
        tolerance: opts.tolerance,
    })
}
