use serde::{Deserialize, Serialize};
use statrs::function::beta::inv_beta_reg;
use statrs::function::gamma::ln_gamma;

use super::{CaptureError, Interval, Prior};

pub const COARSE_POINTS: usize = 121;
pub const FINE_POINTS: usize = 401;
/// Support and answer clipping bound.
pub const SUPPORT_CLIP: f64 = 1e-6;
/// Coarse cells added on each side of the located mass region.
const EXPAND_CELLS: usize = 3;
/// Log-kernel drop below the maximum that still counts as mass.
const MASS_DROP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusPosterior {
    pub mean: f64,
    pub sd: f64,
    pub interval: Interval,
}

/// Unnormalized log posterior kernel over the latent probability `p`.
pub(crate) fn log_kernel(p: f64, values: &[f64], weights: &[f64], prior: Prior, kappa: f64) -> f64 {
    let mut l = if prior.is_active() {
        (prior.a0() - 1.0) * p.ln() + (prior.b0() - 1.0) * (1.0 - p).ln()
    } else {
        0.0
    };
    let a = kappa * p;
    let b = kappa * (1.0 - p);
    let norm = ln_gamma(kappa) - ln_gamma(a) - ln_gamma(b);
    for (y, w) in values.iter().zip(weights) {
        if *w == 0.0 {
            continue;
        }
        let y = y.clamp(SUPPORT_CLIP, 1.0 - SUPPORT_CLIP);
        l += w * (norm + (a - 1.0) * y.ln() + (b - 1.0) * (1.0 - y).ln());
    }
    l
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + step * i as f64).collect()
}

/// Summary of `Beta(a, b)` reported with the given mean, so that a prior
/// given as `(p0, k)` round-trips `p0` exactly.
fn beta_summary(mean: f64, a: f64, b: f64) -> ConsensusPosterior {
    let s = a + b;
    ConsensusPosterior {
        mean,
        sd: (a * b / (s * s * (s + 1.0))).sqrt(),
        interval: Interval {
            lo: inv_beta_reg(a, b, 0.025),
            hi: inv_beta_reg(a, b, 0.975),
        },
    }
}

/// Quantile from a piecewise-linear density on `xs` via the cumulative
/// trapezoid, interpolating linearly within a cell.
fn quantile(xs: &[f64], cdf: &[f64], q: f64) -> f64 {
    let i = cdf.partition_point(|c| *c < q);
    if i == 0 {
        return xs[0];
    }
    if i >= xs.len() {
        return xs[xs.len() - 1];
    }
    let (c0, c1) = (cdf[i - 1], cdf[i]);
    let t = if c1 > c0 { (q - c0) / (c1 - c0) } else { 0.0 };
    xs[i - 1] + t * (xs[i] - xs[i - 1])
}

/// Grid posterior for a latent consensus probability under Beta expert
/// noise with concentration `kappa`. Weights scale the likelihood factors.
pub fn expert_consensus(
    values: &[f64],
    weights: &[f64],
    prior: Prior,
    kappa: f64,
) -> Result<ConsensusPosterior, CaptureError> {
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(CaptureError::InvalidParameter(format!(
            "kappa must be > 0, got {kappa}"
        )));
    }
    prior.check()?;
    if values.len() != weights.len() {
        return Err(CaptureError::WeightMismatch {
            weights: weights.len(),
            answers: values.len(),
        });
    }
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(CaptureError::ValueOutOfRange(*v));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(CaptureError::InvalidParameter(format!("weight {w}")));
    }
    if weights.iter().sum::<f64>() <= 0.0 {
        return Ok(if prior.is_active() {
            beta_summary(prior.p0, prior.a0(), prior.b0())
        } else {
            beta_summary(0.5, 1.0, 1.0)
        });
    }

    let lo = SUPPORT_CLIP;
    let hi = 1.0 - SUPPORT_CLIP;
    let coarse = grid(lo, hi, COARSE_POINTS);
    let coarse_l: Vec<f64> = coarse
        .iter()
        .map(|p| log_kernel(*p, values, weights, prior, kappa))
        .collect();
    let max = coarse_l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let first = coarse_l.iter().position(|l| *l >= max - MASS_DROP).unwrap_or(0);
    let last = coarse_l
        .iter()
        .rposition(|l| *l >= max - MASS_DROP)
        .unwrap_or(COARSE_POINTS - 1);
    let region_lo = coarse[first.saturating_sub(EXPAND_CELLS)];
    let region_hi = coarse[(last + EXPAND_CELLS).min(COARSE_POINTS - 1)];

    let xs = grid(region_lo, region_hi, FINE_POINTS);
    let ls: Vec<f64> = xs
        .iter()
        .map(|p| log_kernel(*p, values, weights, prior, kappa))
        .collect();
    let peak = ls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let dens: Vec<f64> = ls.iter().map(|l| (l - peak).exp()).collect();

    let mut cdf = vec![0.0; xs.len()];
    let (mut m1, mut m2) = (0.0, 0.0);
    for i in 1..xs.len() {
        let h = xs[i] - xs[i - 1];
        cdf[i] = cdf[i - 1] + 0.5 * h * (dens[i - 1] + dens[i]);
        m1 += 0.5 * h * (xs[i - 1] * dens[i - 1] + xs[i] * dens[i]);
        m2 += 0.5 * h * (xs[i - 1].powi(2) * dens[i - 1] + xs[i].powi(2) * dens[i]);
    }
    let z = cdf[xs.len() - 1];
    for c in &mut cdf {
        *c /= z;
    }
    let mean = (m1 / z).clamp(0.0, 1.0);
    let sd = (m2 / z - mean * mean).max(0.0).sqrt();
    Ok(ConsensusPosterior {
        mean,
        sd,
        interval: Interval {
            lo: quantile(&xs, &cdf, 0.025).min(mean),
            hi: quantile(&xs, &cdf, 0.975).max(mean),
        },
    })
}
