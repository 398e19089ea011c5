use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use statrs::function::beta::inv_beta_reg;

use super::consensus::expert_consensus;
use super::{Answer, CaptureError, Estimator, EstimatorConfig, Interval, NoiseReport, Prior, QuestionId};

/// Logit clipping bound for the balanced average.
pub const LOGIT_CLIP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub values: Vec<f64>,
    /// Answers dated after `now`, whose age was clamped to zero.
    pub clamped: usize,
}

/// `w = 2^(-age / half_life)`; all ones without a half-life.
pub fn half_life_weights(
    timestamps: &[DateTime<Utc>],
    half_life: Option<f64>,
    now: DateTime<Utc>,
) -> Result<Weights, CaptureError> {
    let Some(h) = half_life else {
        return Ok(Weights {
            values: vec![1.0; timestamps.len()],
            clamped: 0,
        });
    };
    if !(h.is_finite() && h > 0.0) {
        return Err(CaptureError::InvalidParameter(format!(
            "half-life must be > 0, got {h}"
        )));
    }
    let mut clamped = 0;
    let values = timestamps
        .iter()
        .map(|t| {
            let age = (now - *t).num_milliseconds() as f64 / 1000.0;
            if age < 0.0 {
                clamped += 1;
            }
            (-age.max(0.0) / h).exp2()
        })
        .collect();
    Ok(Weights { values, clamped })
}

/// Compensated (Neumaier) summation.
pub(crate) fn stable_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = s + x;
        c += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
        s = t;
    }
    s + c
}

fn check_weights(values: &[f64], weights: &[f64]) -> Result<f64, CaptureError> {
    if values.len() != weights.len() {
        return Err(CaptureError::WeightMismatch {
            weights: weights.len(),
            answers: values.len(),
        });
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(CaptureError::InvalidParameter(format!("weight {w}")));
    }
    Ok(stable_sum(weights.iter().copied()))
}

fn check_values(values: &[f64]) -> Result<(), CaptureError> {
    match values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(CaptureError::ValueOutOfRange(*v)),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqualAverage {
    pub estimate: f64,
    pub noise: NoiseReport,
}

/// Arithmetic mean with residuals, unbiased sample sd and the clamped
/// `mean ± sd` spread bar.
pub fn equal_average(values: &[f64]) -> Result<EqualAverage, CaptureError> {
    check_values(values)?;
    if values.is_empty() {
        return Err(CaptureError::NoData);
    }
    let n = values.len();
    let mean = stable_sum(values.iter().copied()) / n as f64;
    let residuals: Vec<f64> = values.iter().map(|y| y - mean).collect();
    let sd = (n > 1).then(|| {
        let s2 = stable_sum(residuals.iter().map(|r| r * r)) / (n - 1) as f64;
        s2.sqrt()
    });
    let spread = match sd {
        Some(s) => Interval {
            lo: (mean - s).clamp(0.0, 1.0),
            hi: (mean + s).clamp(0.0, 1.0),
        },
        None => Interval::point(mean),
    };
    Ok(EqualAverage {
        estimate: mean,
        noise: NoiseReport {
            n,
            location: mean,
            residuals,
            sd,
            spread,
            anchored_interval: None,
            consensus_interval: None,
            consensus_sd: None,
        },
    })
}

/// Weighted median: the smallest value whose cumulative weight reaches half
/// of the total.
pub fn middle_value(values: &[f64], weights: &[f64]) -> Result<f64, CaptureError> {
    check_values(values)?;
    let total = check_weights(values, weights)?;
    if values.is_empty() || total <= 0.0 {
        return Err(CaptureError::NoData);
    }
    let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(weights.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let half = total / 2.0;
    let mut cumulative = 0.0;
    for (y, w) in &pairs {
        cumulative += w;
        if cumulative >= half {
            return Ok(*y);
        }
    }
    Ok(pairs.last().expect("non-empty").0)
}

/// Weighted mean in log-odds space, mapped back through the logistic.
pub fn balanced_average(values: &[f64], weights: &[f64]) -> Result<f64, CaptureError> {
    check_values(values)?;
    let total = check_weights(values, weights)?;
    if values.is_empty() || total <= 0.0 {
        return Err(CaptureError::NoData);
    }
    let mean_logit = stable_sum(values.iter().zip(weights).map(|(y, w)| {
        let y = y.clamp(LOGIT_CLIP, 1.0 - LOGIT_CLIP);
        w * (y / (1.0 - y)).ln()
    })) / total;
    Ok(1.0 / (1.0 + (-mean_logit).exp()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchoredAverage {
    pub estimate: f64,
    pub interval: Interval,
}

/// Prior-regularized weighted mean `(a0 + S) / (a0 + b0 + T)` with the
/// equal-tail 95% interval of `Beta(a0 + S, b0 + T - S)`.
pub fn anchored_average(
    values: &[f64],
    weights: &[f64],
    prior: Prior,
) -> Result<AnchoredAverage, CaptureError> {
    check_values(values)?;
    prior.check()?;
    let t = check_weights(values, weights)?;
    let s = stable_sum(values.iter().zip(weights).map(|(y, w)| y * w));
    let (a0, b0) = if prior.is_active() {
        (prior.a0(), prior.b0())
    } else {
        (0.0, 0.0)
    };
    if a0 + b0 + t <= 0.0 {
        return Err(CaptureError::NoData);
    }
    let estimate = ((a0 + s) / (a0 + b0 + t)).clamp(0.0, 1.0);
    let alpha = a0 + s;
    let beta = b0 + t - s;
    let interval = if alpha > 0.0 && beta > 0.0 {
        Interval {
            lo: inv_beta_reg(alpha, beta, 0.025).min(estimate),
            hi: inv_beta_reg(alpha, beta, 0.975).max(estimate),
        }
    } else {
        Interval::point(estimate)
    };
    Ok(AnchoredAverage { estimate, interval })
}

/// Value of the answer with the latest timestamp; later appends win ties.
pub fn latest_answer(answers: &[&Answer]) -> Result<f64, CaptureError> {
    answers
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.timestamp.cmp(&b.timestamp).then(i.cmp(j)))
        .map(|(_, a)| a.value)
        .ok_or(CaptureError::NoData)
}

/// Root mean square of the raw values, unweighted.
pub fn cautious_average(values: &[f64]) -> Result<f64, CaptureError> {
    check_values(values)?;
    if values.is_empty() {
        return Err(CaptureError::NoData);
    }
    Ok((stable_sum(values.iter().map(|y| y * y)) / values.len() as f64).sqrt())
}

/// All estimators and the noise analysis for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionEstimate {
    pub question: QuestionId,
    pub n: usize,
    pub estimator: Estimator,
    /// Value of the selected estimator; `None` when there is no data and no
    /// prior to fall back on.
    pub value: Option<f64>,
    pub equal_average: Option<f64>,
    pub middle_value: Option<f64>,
    pub balanced_average: Option<f64>,
    pub anchored_average: Option<f64>,
    pub expert_consensus: Option<f64>,
    pub latest_answer: Option<f64>,
    pub cautious_average: Option<f64>,
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl QuestionEstimate {
    pub fn get(&self, e: Estimator) -> Option<f64> {
        match e {
            Estimator::EqualAverage => self.equal_average,
            Estimator::MiddleValue => self.middle_value,
            Estimator::BalancedAverage => self.balanced_average,
            Estimator::AnchoredAverage => self.anchored_average,
            Estimator::ExpertConsensus => self.expert_consensus,
            Estimator::LatestAnswer => self.latest_answer,
            Estimator::CautiousAverage => self.cautious_average,
        }
    }
}

fn no_data<T>(r: Result<T, CaptureError>) -> Result<Option<T>, CaptureError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(CaptureError::NoData) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Runs every estimator over the answers of one question under its
/// effective configuration. Without answers, only a prior-backed estimator
/// with an active prior yields a value.
pub fn estimate_question(
    question: &QuestionId,
    answers: &[&Answer],
    config: &EstimatorConfig,
    now: DateTime<Utc>,
) -> Result<QuestionEstimate, CaptureError> {
    config.check()?;
    let values: Vec<f64> = answers.iter().map(|a| a.value).collect();
    let stamps: Vec<DateTime<Utc>> = answers.iter().map(|a| a.timestamp).collect();
    let weights = half_life_weights(&stamps, config.half_life, now)?;
    let mut warnings = Vec::new();
    if weights.clamped > 0 {
        warnings.push(format!(
            "{} answer(s) dated after the evaluation time; age clamped to 0",
            weights.clamped
        ));
    }
    let w = &weights.values;
    let prior = config.prior();

    let equal = no_data(equal_average(&values))?;
    let middle = no_data(middle_value(&values, w))?;
    let balanced = no_data(balanced_average(&values, w))?;
    let anchored = no_data(anchored_average(&values, w, prior))?;
    let consensus = expert_consensus(&values, w, prior, config.kappa)?;
    let latest = no_data(latest_answer(answers))?;
    let cautious = no_data(cautious_average(&values))?;

    let noise = equal.as_ref().map(|eq| {
        let mut noise = eq.noise.clone();
        noise.anchored_interval = anchored.map(|a| a.interval);
        noise.consensus_interval = Some(consensus.interval);
        noise.consensus_sd = Some(consensus.sd);
        noise
    });

    let mut out = QuestionEstimate {
        question: question.clone(),
        n: values.len(),
        estimator: config.estimator,
        value: None,
        equal_average: equal.map(|e| e.estimate),
        middle_value: middle,
        balanced_average: balanced,
        anchored_average: anchored.map(|a| a.estimate),
        expert_consensus: Some(consensus.mean),
        latest_answer: latest,
        cautious_average: cautious,
        weights: weights.values,
        noise,
        warnings,
    };
    out.value = if values.is_empty() {
        if config.estimator.uses_prior() && prior.is_active() {
            out.get(config.estimator)
        } else {
            None
        }
    } else {
        out.get(config.estimator)
    };
    Ok(out)
}
