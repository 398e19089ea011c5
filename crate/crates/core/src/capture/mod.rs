//! Probability capture: structure-derived questionnaires, the answer
//! ledger, aggregation estimators with noise analysis, and CPT
//! materialization.

mod consensus;
mod estimators;
mod materialize;
mod questions;
mod table;

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cpt::ParentConfig;
use crate::graph::{GraphError, NodeId};

pub use consensus::{
    expert_consensus, ConsensusPosterior, COARSE_POINTS, FINE_POINTS, SUPPORT_CLIP,
};
pub use estimators::{
    anchored_average, balanced_average, cautious_average, equal_average, estimate_question,
    half_life_weights, latest_answer, middle_value, AnchoredAverage, EqualAverage,
    QuestionEstimate, Weights, LOGIT_CLIP,
};
pub use materialize::{
    estimate_model, materialize_cpts, row_questions, InvalidRow, MaterializeReport, RowRef, SkipReason, SkippedRow,
};
pub use questions::{generate_questions, question_id, quick_set, render_question_text, QUICK_SET};
pub use table::{read_answers_csv, write_answers_csv};

/// Stable question identifier derived from structure, never from names.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QuestionId(String);

impl QuestionId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for QuestionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CaptureError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("CPT of `{0}` has a stale parent snapshot")]
    StaleCpt(NodeId),
    #[error("no data")]
    NoData,
    #[error("answer value {0} is outside [0, 1]")]
    ValueOutOfRange(f64),
    #[error("answer for `{question}` at {timestamp} is older than the previous answer")]
    NonMonotonicTimestamp {
        question: QuestionId,
        timestamp: DateTime<Utc>,
    },
    #[error("unknown quick-set label `{0}`")]
    UnknownQuickSet(String),
    #[error("unknown estimator `{0}`")]
    UnknownEstimator(String),
    #[error("invalid estimator parameter: {0}")]
    InvalidParameter(String),
    #[error("weights and answers differ in length ({weights} vs {answers})")]
    WeightMismatch { weights: usize, answers: usize },
    #[error("answer table line {line}: {message}")]
    Table { line: u64, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: QuestionId,
    pub node: NodeId,
    pub state: usize,
    pub config: ParentConfig,
    pub text: String,
    #[serde(default, skip_serializing_if = "QuestionOverride::is_empty")]
    pub overrides: QuestionOverride,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Manual,
    QuickSet,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Manual => "manual",
            Origin::QuickSet => "quick-set",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "manual" => Some(Origin::Manual),
            "quick-set" => Some(Origin::QuickSet),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub question: QuestionId,
    pub value: f64,
    pub timestamp: DateTime<Utc>,
    pub respondent: String,
    pub origin: Origin,
}

/// Append-only ledger of expert answers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnswerLedger(Vec<Answer>);

impl AnswerLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends after checking the value range and per-question timestamp
    /// monotonicity. Timestamps are truncated to whole seconds.
    pub fn append(&mut self, mut answer: Answer) -> Result<(), CaptureError> {
        if !(0.0..=1.0).contains(&answer.value) {
            return Err(CaptureError::ValueOutOfRange(answer.value));
        }
        answer.timestamp = truncate_to_seconds(answer.timestamp);
        if let Some(last) = self.0.iter().rev().find(|a| a.question == answer.question) {
            if answer.timestamp < last.timestamp {
                return Err(CaptureError::NonMonotonicTimestamp {
                    question: answer.question,
                    timestamp: answer.timestamp,
                });
            }
        }
        self.0.push(answer);
        Ok(())
    }

    pub fn answers(&self) -> &[Answer] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Answers for one question, in append order.
    pub fn for_question<'a>(&'a self, q: &'a QuestionId) -> impl Iterator<Item = &'a Answer> {
        self.0.iter().filter(move |a| &a.question == q)
    }

    /// Answers grouped by question, each group in append order.
    pub fn by_question(&self) -> BTreeMap<&QuestionId, Vec<&Answer>> {
        let mut out: BTreeMap<&QuestionId, Vec<&Answer>> = BTreeMap::new();
        for a in &self.0 {
            out.entry(&a.question).or_default().push(a);
        }
        out
    }

    pub fn latest_timestamp(&self) -> Option<DateTime<Utc>> {
        self.0.iter().map(|a| a.timestamp).max()
    }
}

pub(crate) fn truncate_to_seconds(t: DateTime<Utc>) -> DateTime<Utc> {
    DateTime::from_timestamp(t.timestamp(), 0).unwrap_or(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    EqualAverage,
    MiddleValue,
    BalancedAverage,
    AnchoredAverage,
    ExpertConsensus,
    LatestAnswer,
    CautiousAverage,
}

impl Estimator {
    pub const ALL: [Estimator; 7] = [
        Estimator::EqualAverage,
        Estimator::MiddleValue,
        Estimator::BalancedAverage,
        Estimator::AnchoredAverage,
        Estimator::ExpertConsensus,
        Estimator::LatestAnswer,
        Estimator::CautiousAverage,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::EqualAverage => "equal-average",
            Estimator::MiddleValue => "middle-value",
            Estimator::BalancedAverage => "balanced-average",
            Estimator::AnchoredAverage => "anchored-average",
            Estimator::ExpertConsensus => "expert-consensus",
            Estimator::LatestAnswer => "latest-answer",
            Estimator::CautiousAverage => "cautious-average",
        }
    }

    /// Whether the estimator can produce a value from the prior alone.
    pub fn uses_prior(self) -> bool {
        matches!(self, Estimator::AnchoredAverage | Estimator::ExpertConsensus)
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Estimator {
    type Err = CaptureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| CaptureError::UnknownEstimator(s.to_owned()))
    }
}

/// Beta prior given as mean `p0` and strength `k_prior`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub p0: f64,
    pub k_prior: f64,
}

impl Prior {
    pub const NONE: Prior = Prior {
        p0: 0.5,
        k_prior: 0.0,
    };

    pub fn new(p0: f64, k_prior: f64) -> Result<Self, CaptureError> {
        let prior = Prior { p0, k_prior };
        prior.check()?;
        Ok(prior)
    }

    pub fn check(&self) -> Result<(), CaptureError> {
        if !self.k_prior.is_finite() || self.k_prior < 0.0 {
            return Err(CaptureError::InvalidParameter(format!(
                "k_prior must be >= 0, got {}",
                self.k_prior
            )));
        }
        if self.k_prior > 0.0 && !(self.p0 > 0.0 && self.p0 < 1.0) {
            return Err(CaptureError::InvalidParameter(format!(
                "p0 must lie in (0, 1) when the prior is active, got {}",
                self.p0
            )));
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.k_prior > 0.0
    }

    pub fn a0(&self) -> f64 {
        self.p0 * self.k_prior
    }

    pub fn b0(&self) -> f64 {
        (1.0 - self.p0) * self.k_prior
    }
}

pub const DEFAULT_KAPPA: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub p0: f64,
    pub k_prior: f64,
    pub kappa: f64,
    /// Half-life in seconds; `None` disables recency weighting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_life: Option<f64>,
    pub estimator: Estimator,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            p0: 0.5,
            k_prior: 0.0,
            kappa: DEFAULT_KAPPA,
            half_life: None,
            estimator: Estimator::AnchoredAverage,
        }
    }
}

impl EstimatorConfig {
    pub fn prior(&self) -> Prior {
        Prior {
            p0: self.p0,
            k_prior: self.k_prior,
        }
    }

    pub fn check(&self) -> Result<(), CaptureError> {
        self.prior().check()?;
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(CaptureError::InvalidParameter(format!(
                "kappa must be > 0, got {}",
                self.kappa
            )));
        }
        if let Some(h) = self.half_life {
            if !(h.is_finite() && h > 0.0) {
                return Err(CaptureError::InvalidParameter(format!(
                    "half-life must be > 0, got {h}"
                )));
            }
        }
        Ok(())
    }

    /// Global settings with a per-question override applied.
    pub fn with_override(&self, o: &QuestionOverride) -> EstimatorConfig {
        let mut out = self.clone();
        if let Some(p) = o.prior {
            out.p0 = p.p0;
            out.k_prior = p.k_prior;
        }
        if let Some(k) = o.kappa {
            out.kappa = k;
        }
        if let Some(h) = o.half_life {
            out.half_life = Some(h);
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QuestionOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<Prior>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_life: Option<f64>,
}

impl QuestionOverride {
    pub fn is_empty(&self) -> bool {
        self.prior.is_none() && self.kappa.is_none() && self.half_life.is_none()
    }
}

/// Persistent capture settings: global config, per-question overrides and
/// the answer ledger.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CaptureState {
    pub config: EstimatorConfig,
    #[serde(default)]
    pub overrides: BTreeMap<QuestionId, QuestionOverride>,
    #[serde(default)]
    pub ledger: AnswerLedger,
}

impl CaptureState {
    pub fn effective_config(&self, q: &QuestionId) -> EstimatorConfig {
        match self.overrides.get(q) {
            Some(o) => self.config.with_override(o),
            None => self.config.clone(),
        }
    }
}

/// Interval in probability space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Dispersion diagnostics for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub n: usize,
    /// Arithmetic mean, the central location of the noise analysis.
    pub location: f64,
    pub residuals: Vec<f64>,
    /// Unbiased sample standard deviation; `None` for a single answer.
    pub sd: Option<f64>,
    /// `location ± sd`, clamped to `[0, 1]`.
    pub spread: Interval,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchored_interval: Option<Interval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consensus_interval: Option<Interval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consensus_sd: Option<f64>,
}
