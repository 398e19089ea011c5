//! Risk engine that turns Bowtie models into Bayesian networks with an
//! explicit safe state, elicits CPTs from experts and answers evidence and
//! intervention queries.
//!
//! The pipeline is [`bowtie::transform`] → [`capture`] (questions, answers,
//! estimators, materialization) → [`inference::posterior`] and the
//! [`causal`] queries. [`model_io`] persists the whole document as XML.

pub mod bowtie;
pub mod capture;
pub mod case_study;
pub mod causal;
pub mod cpt;
pub mod graph;
pub mod inference;
pub mod model_io;
#[cfg(feature = "server")]
pub mod api;

pub use bowtie::{transform, BowtieModel};
pub use cpt::{Cpt, CptSet};
pub use graph::{NodeId, NodeKind, RiskDag, RiskNode};
pub use inference::{posterior, Evidence, PosteriorTable};
pub use model_io::{export_xml, import_xml, ModelDocument};
