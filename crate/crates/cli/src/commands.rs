use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use merit_core::bank::{build_bank_from, Annotator, LlmAnnotator, MemoryBank, RuleAnnotator};
use merit_core::config::{AnnotatorKind, PredictorKind, ProviderKind};
use merit_core::eval::{evaluate_split, run_ablations, write_predictions_csv, Artifacts, EvalRun};
use merit_core::inference::{
    predict, HeuristicPredictor, LlmPredictor, MemoryHeuristicPredictor, Predictor,
};
use merit_core::ingest::{ingest, parse_corpus, IngestOutput};
use merit_core::jsonl::{read_jsonl, write_json, write_jsonl};
use merit_core::llm::HttpChatClient;
use merit_core::retrieval::{build_flat_index, build_indices, Indices};
use merit_core::schema::{fit_schema, write_plot_csv, MemberRecord, SchemaModel};
use merit_core::{Ablation, Config, Interaction, Split, StudentSequence};
use serde::Deserialize;
use serde_json::json;

use crate::{AblationArgs, Cli, Command, ProviderArg};

const TRAIN: &str = "train.jsonl";
const TEST: &str = "test.jsonl";
const INGEST_REPORT: &str = "ingest_report.json";
const DIFFICULTY: &str = "difficulty.json";
const SCHEMA: &str = "schema.json";
const MEMBERS: &str = "members.jsonl";
const PLOT: &str = "schema_plot.csv";
const BANK: &str = "bank.jsonl";
const BANK_REPORT: &str = "bank_report.json";
const INDEX: &str = "index";
const REPORT: &str = "report.json";
const PREDICTIONS: &str = "predictions.csv";
const ABLATION: &str = "ablation.json";

pub fn init_logging(quiet: bool) {
    let level = if quiet {
        tracing::Level::ERROR
    } else {
        tracing::Level::WARN
    };
    let _ = tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .with_target(false)
        .try_init();
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path).with_context(|| format!("loading config {}", path.display()))?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(p) = cli.provider {
        cfg.embedding.provider = match p {
            ProviderArg::Remote => ProviderKind::Remote,
            ProviderArg::Offline => ProviderKind::Offline,
        };
    }
    Ok(cfg)
}

fn annotator(cfg: &Config) -> Result<Box<dyn Annotator>> {
    Ok(match cfg.annotator {
        AnnotatorKind::Rules => Box::new(RuleAnnotator),
        AnnotatorKind::Llm => Box::new(LlmAnnotator::new(HttpChatClient::new(cfg.llm.clone())?, cfg.llm.max_reprompts)),
    })
}

/// Remote runs predict with the language model; offline runs use the
/// configured stand-in.
fn predictor(cfg: &Config) -> Result<Box<dyn Predictor>> {
    let kind = match cfg.embedding.provider {
        ProviderKind::Remote => PredictorKind::Llm,
        ProviderKind::Offline => cfg.inference.offline_predictor,
    };
    Ok(match kind {
        PredictorKind::Heuristic => Box::new(HeuristicPredictor),
        PredictorKind::MemoryHeuristic => Box::new(MemoryHeuristicPredictor {
            memory_weight: cfg.inference.memory_weight,
        }),
        PredictorKind::Llm => Box::new(LlmPredictor::new(
            HttpChatClient::new(cfg.llm.clone())?,
            cfg.llm.max_reprompts,
            cfg.inference.allow_fallback,
        )),
    })
}

fn ablation(base: Ablation, a: &AblationArgs) -> Ablation {
    Ablation {
        no_retrieval: base.no_retrieval || a.no_retrieval,
        no_routing: base.no_routing || a.no_routing,
        no_traces: base.no_traces || a.no_traces,
        no_logic: base.no_logic || a.no_logic,
    }
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e).context("writing stdout"),
        _ => Ok(()),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    emit(&(serde_json::to_string_pretty(value)? + "\n"))
}

fn require(dir: &Path, name: &str, producer: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    if !path.exists() {
        bail!(merit_core::Error::invalid(
            "artifacts",
            format!("{} not found; run `merit {producer}` first", path.display())
        ));
    }
    Ok(path)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn ingest_csv(input: &Path, cfg: &Config) -> Result<IngestOutput> {
    let parsed = parse_corpus(input, &cfg.ingest.format)?;
    for row in &parsed.malformed {
        tracing::warn!(line = row.line, reason = %row.reason, "skipped malformed row");
    }
    Ok(ingest(&parsed, &cfg.ingest.ingest)?)
}

fn cmd_ingest(input: &Path, dir: &Path, cfg: &Config) -> Result<()> {
    let out = ingest_csv(input, cfg)?;
    create_dir(dir)?;
    write_jsonl(&dir.join(TRAIN), &out.train)?;
    write_jsonl(&dir.join(TEST), &out.test)?;
    write_json(&dir.join(DIFFICULTY), &out.difficulty)?;
    write_json(&dir.join(INGEST_REPORT), &out.report)?;
    print_json(&out.report)
}

fn cmd_discover(dir: &Path, plot: bool, cfg: &Config) -> Result<()> {
    let train: Vec<StudentSequence> = read_jsonl(&require(dir, TRAIN, "ingest")?)?;
    let provider = cfg.embedding_provider()?;
    let fit = fit_schema(&train, &*provider, &cfg.schema, cfg.seed)?;
    fit.model.save(&dir.join(SCHEMA))?;
    write_jsonl(&dir.join(MEMBERS), &fit.members)?;
    if plot {
        let f = File::create(dir.join(PLOT)).with_context(|| format!("creating {PLOT}"))?;
        write_plot_csv(BufWriter::new(f), &fit.members, cfg.seed)?;
    }
    let mut sizes = std::collections::BTreeMap::<String, usize>::new();
    for m in &fit.members {
        *sizes.entry(m.assignment.cluster_id.to_string()).or_default() += 1;
    }
    let keywords: Vec<_> = (0..fit.model.k() as u32)
        .map(|k| json!({ "cluster": k, "keywords": fit.model.keyword_labels(k) }))
        .collect();
    print_json(&json!({
        "k": fit.model.k(),
        "members": fit.members.len(),
        "sizes": sizes,
        "keywords": keywords,
    }))
}

fn cmd_build_bank(dir: &Path, cfg: &Config) -> Result<()> {
    let train: Vec<StudentSequence> = read_jsonl(&require(dir, TRAIN, "ingest")?)?;
    let model = SchemaModel::load(&require(dir, SCHEMA, "discover-schemas")?)?;
    let members: Vec<MemberRecord> = read_jsonl(&require(dir, MEMBERS, "discover-schemas")?)?;
    let provider = cfg.embedding_provider()?;
    let annotator = annotator(cfg)?;
    let (bank, report) = build_bank_from(&train, &model, &members, &*provider, &*annotator, &cfg.bank)?;
    bank.save(&dir.join(BANK))?;
    write_json(&dir.join(BANK_REPORT), &report)?;
    print_json(&report)
}

fn cmd_index(dir: &Path, cfg: &Config) -> Result<()> {
    let model = SchemaModel::load(&require(dir, SCHEMA, "discover-schemas")?)?;
    let bank = MemoryBank::load(&require(dir, BANK, "build-bank")?, model.k())?;
    let indices = build_indices(&bank, cfg.bm25)?;
    indices.save(&dir.join(INDEX))?;
    let parts: Vec<_> = indices
        .partitions()
        .map(|(c, p)| json!({ "partition": c.to_string(), "entries": p.len() }))
        .collect();
    print_json(&json!({ "partitions": parts, "entries": bank.len() }))
}

fn load_artifacts(dir: &Path, cfg: &Config) -> Result<Artifacts> {
    let model = SchemaModel::load(&require(dir, SCHEMA, "discover-schemas")?)?;
    let bank = MemoryBank::load(&require(dir, BANK, "build-bank")?, model.k())?;
    let provider = cfg.embedding_provider()?;
    if provider.name() != model.provider_name {
        tracing::warn!(
            schema = %model.provider_name,
            configured = provider.name(),
            "embedding provider differs from the one the schema was fitted with"
        );
    }
    let index_dir = dir.join(INDEX);
    let indices = if index_dir.exists() {
        Indices::load(&index_dir)?
    } else {
        tracing::warn!("no saved index; building in memory (run `merit index` to persist)");
        build_indices(&bank, cfg.bm25)?
    };
    let flat = build_flat_index(&bank, indices.params())?;
    Ok(Artifacts {
        model,
        bank,
        indices,
        flat,
        provider,
    })
}

/// Artifacts and test split, either from disk or fitted from a CSV.
fn prepare(dir: &Path, data: Option<&Path>, cfg: &Config) -> Result<(Artifacts, Vec<StudentSequence>)> {
    match data {
        Some(csv) => {
            let splits = ingest_csv(csv, cfg)?;
            let annotator = annotator(cfg)?;
            let fit = Artifacts::fit(
                &splits.train,
                cfg.embedding_provider()?,
                &cfg.schema,
                &cfg.bank,
                cfg.bm25,
                &*annotator,
                cfg.seed,
            )?;
            Ok((fit.artifacts, splits.test))
        }
        None => {
            let test: Vec<StudentSequence> = read_jsonl(&require(dir, TEST, "ingest")?)?;
            Ok((load_artifacts(dir, cfg)?, test))
        }
    }
}

#[derive(Deserialize)]
struct PredictInput {
    student_id: String,
    interactions: Vec<Interaction>,
    /// When absent, the final interaction is the target.
    #[serde(default)]
    target: Option<Interaction>,
}

fn read_input(input: Option<&Path>) -> Result<String> {
    let mut text = String::new();
    match input {
        Some(p) if p != Path::new("-") => {
            text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        }
        _ => {
            std::io::stdin().read_to_string(&mut text).context("reading stdin")?;
        }
    }
    Ok(text)
}

fn cmd_predict(
    input: Option<&Path>,
    dir: &Path,
    ab: &AblationArgs,
    show_prompt: bool,
    cfg: &Config,
) -> Result<()> {
    let parsed: PredictInput = serde_json::from_str(&read_input(input)?).map_err(merit_core::Error::from)?;
    let mut interactions = parsed.interactions;
    let target = match parsed.target {
        Some(t) => t,
        None => {
            if interactions.len() < 2 {
                bail!(merit_core::Error::invalid(
                    "prediction input",
                    "need a history of at least one interaction before the target"
                ));
            }
            interactions.pop().expect("len >= 2")
        }
    };
    let history = StudentSequence::new(parsed.student_id, interactions, Split::Test)?;
    let arts = load_artifacts(dir, cfg)?;
    let mut icfg = cfg.inference_config();
    icfg.ablation = ablation(icfg.ablation, ab);
    let predictor = predictor(cfg)?;
    let mut p = predict(&history, &target, &arts.pipeline(), &*predictor, &icfg)?;
    p.record.outcome = Some(target.correct() as u8);
    if show_prompt {
        eprintln!("{}", p.prompt);
    }
    print_json(&p.record)
}

fn write_eval(out: &Path, run: &EvalRun) -> Result<()> {
    create_dir(out)?;
    let body = serde_json::to_string_pretty(&run.report)? + "\n";
    fs::write(out.join(REPORT), body).with_context(|| format!("writing {REPORT}"))?;
    let f = File::create(out.join(PREDICTIONS)).with_context(|| format!("creating {PREDICTIONS}"))?;
    write_predictions_csv(BufWriter::new(f), &run.records)?;
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Ingest { input, dir } => cmd_ingest(input, &dir.artifacts, &cfg),
        Command::DiscoverSchemas { dir, plot } => cmd_discover(&dir.artifacts, *plot, &cfg),
        Command::BuildBank { dir } => cmd_build_bank(&dir.artifacts, &cfg),
        Command::Index { dir } => cmd_index(&dir.artifacts, &cfg),
        Command::Predict {
            input,
            dir,
            ablation: ab,
            show_prompt,
        } => cmd_predict(input.as_deref(), &dir.artifacts, ab, *show_prompt, &cfg),
        Command::Evaluate {
            dir,
            data,
            out,
            ablation: ab,
        } => {
            let (arts, test) = prepare(&dir.artifacts, data.as_deref(), &cfg)?;
            let mut icfg = cfg.inference_config();
            icfg.ablation = ablation(icfg.ablation, ab);
            let predictor = predictor(&cfg)?;
            let run = evaluate_split(&test, &arts.pipeline(), &*predictor, &icfg, &cfg.eval)?;
            write_eval(out.as_ref().unwrap_or(&dir.artifacts), &run)?;
            print_json(&run.report)
        }
        Command::Ablate { dir, data, out } => {
            let (arts, test) = prepare(&dir.artifacts, data.as_deref(), &cfg)?;
            let predictor = predictor(&cfg)?;
            let report = run_ablations(&test, &arts.pipeline(), &*predictor, &cfg.inference_config(), &cfg.eval)?;
            let out = out.as_ref().unwrap_or(&dir.artifacts);
            create_dir(out)?;
            write_json(&out.join(ABLATION), &report)?;
            emit(&report.table())
        }
    }
}
