use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use riskdag::api::routes::{InterventionResult, NodePosterior, PosteriorView, ValidateResponse};
use riskdag::api::{config::ENV_CONFIG, ServerConfig};
use riskdag::capture::{
    estimate_model, generate_questions, materialize_cpts, read_answers_csv, write_answers_csv,
    Estimator,
};
use riskdag::causal::{
    backdoor_sets, d_connected_trails, d_separated, frontdoor_check, interventional_posterior,
    rank_interventions, BackdoorMode, Intervention,
};
use riskdag::{export_xml, import_xml, posterior, transform, Evidence, ModelDocument, NodeId};

/// Bowtie-derived Bayesian network risk engine.
#[derive(Parser)]
#[command(name = "riskdag", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn the bowtie section of a model file into a DAG with CPTs.
    Transform {
        input: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Report structural and CPT findings; exit 1 when any exist.
    Validate { model: PathBuf },
    /// Emit the structure-derived questionnaire.
    Questions {
        model: PathBuf,
        /// Comma-separated node ids.
        #[arg(long)]
        scope: Option<String>,
    },
    /// Move answers between a model and a CSV table.
    Answers {
        #[command(subcommand)]
        action: AnswersAction,
    },
    /// Per-question estimates and noise report.
    Estimate {
        model: PathBuf,
        #[arg(long)]
        estimator: Option<Estimator>,
        #[arg(long)]
        scope: Option<String>,
        /// Only this question id.
        #[arg(long)]
        question: Option<String>,
        /// Evaluation time for recency weights (RFC 3339).
        #[arg(long)]
        at: Option<String>,
    },
    /// Write estimates into the CPTs; prints the report.
    Materialize {
        model: PathBuf,
        #[arg(long)]
        at: Option<String>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Posterior marginals given evidence.
    Infer {
        model: PathBuf,
        /// Observation `node=state`, repeatable.
        #[arg(long = "evidence", short = 'e')]
        evidence: Vec<String>,
        /// Comma-separated node ids; all nodes by default.
        #[arg(long)]
        nodes: Option<String>,
    },
    /// d-separation test of two node sets given a third.
    Dsep(SetArgs),
    /// Active trails between two node sets given a third.
    Trails(SetArgs),
    /// Backdoor adjustment sets for an exposure and an outcome.
    Backdoor {
        model: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        #[arg(long, default_value = "minimal")]
        mode: String,
    },
    /// Frontdoor criterion check for a mediator set.
    Frontdoor {
        model: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        #[arg(long)]
        m: String,
    },
    /// Interventional probability of a target state.
    Do {
        model: PathBuf,
        /// Intervention `node=state`, repeatable.
        #[arg(long = "set", required = true)]
        set: Vec<String>,
        #[arg(long)]
        target: String,
        #[arg(long)]
        state: String,
        #[arg(long = "evidence", short = 'e')]
        evidence: Vec<String>,
    },
    /// Rank activation-node interventions on a target state.
    Rank {
        model: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long)]
        state: String,
        #[arg(long = "evidence", short = 'e')]
        evidence: Vec<String>,
        /// Comma-separated candidate ids; activation nodes by default.
        #[arg(long)]
        candidates: Option<String>,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long, env = ENV_CONFIG)]
        config: Option<PathBuf>,
        #[arg(long)]
        bind: Option<std::net::SocketAddr>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Write a model file in another representation.
    Export {
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Read a model in another representation and write canonical XML.
    Import {
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[command(flatten)]
        out: OutArgs,
    },
}

#[derive(Subcommand)]
enum AnswersAction {
    /// Append answers from a CSV table to the model ledger.
    Import {
        model: PathBuf,
        table: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Write the ledger as a CSV table.
    Export { model: PathBuf },
}

#[derive(Args)]
struct SetArgs {
    model: PathBuf,
    #[arg(long)]
    x: String,
    #[arg(long)]
    y: String,
    #[arg(long, default_value = "")]
    z: String,
}

#[derive(Args)]
struct OutArgs {
    /// Output file; standard output when omitted.
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
    /// Overwrite the input model.
    #[arg(long, conflicts_with = "output")]
    in_place: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Xml,
}

fn read_model(path: &Path) -> Result<ModelDocument> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    import_xml(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            Ok(out.flush()?)
        }
    }
}

fn write_model(out: &OutArgs, input: &Path, doc: &ModelDocument) -> Result<()> {
    let target = if out.in_place {
        Some(input)
    } else {
        out.output.as_deref()
    };
    write_text(target, &export_xml(doc))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(None, &text)
}

fn id_set(s: &str) -> BTreeSet<NodeId> {
    s.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(NodeId::new)
        .collect()
}

fn pairs(items: &[String]) -> Result<Vec<(&str, &str)>> {
    items
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(n, v)| (n.trim(), v.trim()))
                .ok_or_else(|| anyhow!("expected node=state, got `{s}`"))
        })
        .collect()
}

fn evidence(doc: &ModelDocument, items: &[String]) -> Result<Evidence> {
    Ok(Evidence::from_labels(&doc.dag, pairs(items)?)?)
}

fn state_of(doc: &ModelDocument, node: &str, label: &str) -> Result<usize> {
    let n = doc.dag.node(node)?;
    n.state_index(label)
        .ok_or_else(|| anyhow!("`{node}` has no state `{label}`; states are {:?}", n.states))
}

fn parse_at(at: Option<&str>) -> Result<Option<chrono::DateTime<chrono::Utc>>> {
    at.map(|s| {
        chrono::DateTime::parse_from_rfc3339(s)
            .map(|t| t.with_timezone(&chrono::Utc))
            .with_context(|| format!("bad timestamp `{s}`"))
    })
    .transpose()
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Transform { input, out } => {
            let mut doc = read_model(&input)?;
            let bowtie = doc
                .bowtie
                .clone()
                .ok_or_else(|| anyhow!("{} has no <bowtie> section", input.display()))?;
            let t = transform(&bowtie)?;
            for w in &t.report.warnings {
                eprintln!("warning: {w}");
            }
            doc.dag = t.dag;
            doc.cpts = t.cpts;
            doc.ui = Default::default();
            write_model(&out, &input, &doc)?;
        }
        Command::Validate { model } => {
            let doc = read_model(&model)?;
            let report = ValidateResponse::of(&doc);
            print_json(&report)?;
            if !report.structure.findings.is_empty() || !report.cpts.is_clean() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Questions { model, scope } => {
            let doc = read_model(&model)?;
            let scope = scope.as_deref().map(id_set);
            let qs = generate_questions(&doc.dag, &doc.cpts, scope.as_ref(), Some(&doc.capture))?;
            print_json(&json!({ "questions": qs }))?;
        }
        Command::Answers { action } => match action {
            AnswersAction::Import { model, table, out } => {
                let mut doc = read_model(&model)?;
                let file = std::fs::File::open(&table).with_context(|| format!("opening {}", table.display()))?;
                let answers = read_answers_csv(file)?;
                let n = answers.len();
                for a in answers {
                    doc.capture.ledger.append(a)?;
                }
                eprintln!("imported {n} answer(s); ledger now holds {}", doc.capture.ledger.len());
                write_model(&out, &model, &doc)?;
            }
            AnswersAction::Export { model } => {
                let doc = read_model(&model)?;
                let mut buf = Vec::new();
                write_answers_csv(&mut buf, doc.capture.ledger.answers())?;
                write_text(None, &String::from_utf8(buf)?)?;
            }
        },
        Command::Estimate {
            model,
            estimator,
            scope,
            question,
            at,
        } => {
            let doc = read_model(&model)?;
            let scope = scope.as_deref().map(id_set);
            let mut est = estimate_model(
                &doc.dag,
                &doc.cpts,
                &doc.capture,
                scope.as_ref(),
                estimator,
                parse_at(at.as_deref())?,
            )?;
            if let Some(q) = question {
                est.retain(|e| e.question.as_str() == q);
                if est.is_empty() {
                    bail!("unknown question `{q}`");
                }
            }
            print_json(&json!({ "estimates": est }))?;
        }
        Command::Materialize { model, at, out } => {
            let mut doc = read_model(&model)?;
            let (cpts, report) = materialize_cpts(&doc.dag, &doc.cpts, &doc.capture, parse_at(at.as_deref())?)?;
            doc.cpts = cpts;
            if out.output.is_none() && !out.in_place {
                bail!("materialize needs --output or --in-place; the report goes to standard output");
            }
            write_model(&out, &model, &doc)?;
            print_json(&report)?;
        }
        Command::Infer {
            model,
            evidence: ev,
            nodes,
        } => {
            let doc = read_model(&model)?;
            let ev = evidence(&doc, &ev)?;
            let wanted: Vec<NodeId> = nodes.as_deref().map(id_set).unwrap_or_default().into_iter().collect();
            let query = (!wanted.is_empty()).then_some(wanted.as_slice());
            let table = posterior(&doc.dag, &doc.cpts, &ev, query)?;
            let mut out = BTreeMap::new();
            for (id, probs) in table {
                let states = doc.dag.node(id.as_str())?.states.clone();
                out.insert(
                    id,
                    NodePosterior {
                        states,
                        probabilities: probs,
                    },
                );
            }
            print_json(&PosteriorView {
                evidence: ev.labels(&doc.dag),
                nodes: out,
            })?;
        }
        Command::Dsep(a) => {
            let doc = read_model(&a.model)?;
            let sep = d_separated(&doc.dag, &id_set(&a.x), &id_set(&a.y), &id_set(&a.z))?;
            print_json(&json!({ "separated": sep }))?;
        }
        Command::Trails(a) => {
            let doc = read_model(&a.model)?;
            let t = d_connected_trails(&doc.dag, &id_set(&a.x), &id_set(&a.y), &id_set(&a.z))?;
            print_json(&json!({ "trails": t }))?;
        }
        Command::Backdoor { model, x, y, mode } => {
            let doc = read_model(&model)?;
            let mode: BackdoorMode = mode.parse().map_err(|_| anyhow!("unknown mode `{mode}`"))?;
            let sets = backdoor_sets(&doc.dag, &NodeId::new(x), &NodeId::new(y), mode)?;
            print_json(&json!({ "sets": sets }))?;
        }
        Command::Frontdoor { model, x, y, m } => {
            let doc = read_model(&model)?;
            let ok = frontdoor_check(&doc.dag, &NodeId::new(x), &NodeId::new(y), &id_set(&m))?;
            print_json(&json!({ "satisfied": ok }))?;
        }
        Command::Do {
            model,
            set,
            target,
            state,
            evidence: ev,
        } => {
            let doc = read_model(&model)?;
            let ev = evidence(&doc, &ev)?;
            let mut iv = Intervention::new();
            for (n, label) in pairs(&set)? {
                iv.insert(NodeId::new(n), state_of(&doc, n, label)?);
            }
            let s = state_of(&doc, &target, &state)?;
            let t = NodeId::new(target);
            let baseline = interventional_posterior(&doc.dag, &doc.cpts, &ev, &Intervention::new(), &t, s)?;
            let probability = interventional_posterior(&doc.dag, &doc.cpts, &ev, &iv, &t, s)?;
            print_json(&InterventionResult {
                probability,
                baseline,
            })?;
        }
        Command::Rank {
            model,
            target,
            state,
            evidence: ev,
            candidates,
        } => {
            let doc = read_model(&model)?;
            let ev = evidence(&doc, &ev)?;
            let s = state_of(&doc, &target, &state)?;
            let pool = candidates.as_deref().map(id_set);
            let r = rank_interventions(&doc.dag, &doc.cpts, &ev, &NodeId::new(target), s, pool.as_ref())?;
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            print_json(&r)?;
        }
        Command::Serve {
            config,
            bind,
            data_dir,
        } => {
            let mut cfg = ServerConfig::load(config.as_deref())?;
            if let Some(b) = bind {
                cfg.bind = b;
            }
            if let Some(d) = data_dir {
                cfg.data_dir = Some(d);
            }
            tracing_subscriber::fmt()
                .with_env_filter(
                    tracing_subscriber::EnvFilter::try_from_default_env()
                        .unwrap_or_else(|_| "info".into()),
                )
                .with_writer(std::io::stderr)
                .init();
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(riskdag::api::serve(cfg)).map_err(|e| anyhow!(e))?;
        }
        Command::Export { model, format } => {
            let doc = read_model(&model)?;
            match format {
                Format::Json => print_json(&doc)?,
                Format::Xml => write_text(None, &export_xml(&doc))?,
            }
        }
        Command::Import { input, format, out } => {
            let text = std::fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let doc: ModelDocument = match format {
                Format::Json => serde_json::from_str(&text).with_context(|| format!("parsing {}", input.display()))?,
                Format::Xml => import_xml(&text)?,
            };
            if out.in_place {
                bail!("import writes a new file; use --output");
            }
            write_model(&out, &input, &doc)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    // Clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
