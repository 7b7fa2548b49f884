//! `eenr`: runs the pipeline stage by stage or as whole experiments.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eenr_core::corpus::{
    generate_synthetic, infer_schema, load_ee_corpus, load_impressions, load_news, read_json, time_split,
    write_ee_corpus, write_impressions, write_json, write_news, EventSchema, NewsItem,
};
use eenr_core::encoders::ClickHistory;
use eenr_core::experiment::{
    prepare_synthetic, run_ablation, run_fraction_study, seeds, ExperimentConfig, PreparedData,
    ResultTable, VariantRun, VariantSpec,
};
use eenr_core::extractor::{eval_ee, extract_corpus, predict_annotated, train_ee, TaggerModel};
use eenr_core::graph::{build_graph, embed_graph, event_type_histories, ETypeEmbedding, ETypeGraph};
use eenr_core::metrics::evaluate;
use eenr_core::predictor::{write_predictions, RecModel};
use eenr_core::{Error, Result};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "eenr", version, about = "Event-aware news recommendation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (JSON); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed and EENR_SEED.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with planted preferences.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the event extractor on annotated sentences.
    TrainEe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train: PathBuf,
        /// Event schema (JSON); inferred from the annotations when omitted.
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a trained extractor on annotated sentences.
    EvalEe {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Attach extracted events to every news item.
    Extract {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        news: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the event-type co-occurrence graph from training clicks.
    BuildGraph {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        news: PathBuf,
        #[arg(long)]
        impressions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed the event-type graph with node2vec.
    EmbedGraph {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        graph: PathBuf,
        /// Schema whose types missing from the graph get cold-start vectors.
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the recommender of one variant.
    TrainRec {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        news: PathBuf,
        #[arg(long)]
        impressions: PathBuf,
        #[arg(long)]
        embedding: PathBuf,
        #[arg(long, default_value = "EENR")]
        variant: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained recommender on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        news: PathBuf,
        #[arg(long)]
        impressions: PathBuf,
        /// Write ranked suggestion lists as JSON lines.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Train and evaluate every variant over the configured seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Directory with news_events.jsonl, impressions.jsonl and schema.json;
        /// generated and extracted from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// The ablation repeated on fractions of the training logs.
    FractionStudy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

const EE_PARAMS: &str = "ee.params";
const EE_META: &str = "ee.json";
const REC_PARAMS: &str = "rec.params";
const REC_META: &str = "rec.json";

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, u64)> {
        let config = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        let seed = match self.seed {
            Some(s) => s,
            None => config.effective_seed()?,
        };
        Ok((config, seed))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Data(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Data(format!("{what} not found at {}", path.display())))
    }
}

fn load_tagger(dir: &Path) -> Result<TaggerModel> {
    let (p, m) = (dir.join(EE_PARAMS), dir.join(EE_META));
    require(&p, "extractor checkpoint")?;
    TaggerModel::load(&p, &m)
}

fn load_data(dir: &Path, config: &ExperimentConfig) -> Result<PreparedData> {
    let schema: EventSchema = read_json(dir.join("schema.json"))?;
    let news = load_news(dir.join("news_events.jsonl"))?;
    let impressions = load_impressions(dir.join("impressions.jsonl"))?;
    PreparedData::new(schema, news, &impressions, config.data.split)
}

fn prepared(data: &Option<PathBuf>, config: &ExperimentConfig, seed: u64) -> Result<(PreparedData, Value)> {
    match data {
        Some(dir) => Ok((load_data(dir, config)?, json!({"source": dir}))),
        None => {
            let (_, ee, data) = prepare_synthetic(config, seed)?;
            Ok((data, json!({"source": "synthetic", "ee": ee.report})))
        }
    }
}

fn variants(config: &ExperimentConfig) -> Result<Vec<VariantSpec>> {
    config.eval.variants.iter().map(|v| VariantSpec::by_name(v)).collect()
}

fn write_table(out: &Path, stem: &str, table: &ResultTable, runs: &[VariantRun], extra: Value) -> Result<Value> {
    create_dir(out)?;
    let csv = out.join(format!("{stem}.csv"));
    write_text(&csv, &table.to_csv())?;
    let summary = json!({"table": table, "runs": runs, "data": extra, "csv": csv});
    write_json(out.join(format!("{stem}.json")), &summary)?;
    Ok(json!({"table": table, "csv": csv}))
}

fn run(cmd: Command) -> Result<Value> {
    match cmd {
        Command::GenData { common, out } => {
            let (config, seed) = common.load()?;
            let c = generate_synthetic(&config.data.synthetic, seed)?;
            create_dir(&out)?;
            write_news(out.join("news.jsonl"), &c.news)?;
            write_impressions(out.join("impressions.jsonl"), &c.impressions)?;
            write_ee_corpus(out.join("ee_train.jsonl"), &c.ee_train)?;
            write_ee_corpus(out.join("ee_test.jsonl"), &c.ee_test)?;
            write_json(out.join("schema.json"), &c.schema)?;
            write_json(out.join("truth.json"), &c.truth)?;
            Ok(json!({
                "seed": seed,
                "news": c.news.len(),
                "impressions": c.impressions.len(),
                "ee_train": c.ee_train.len(),
                "ee_test": c.ee_test.len(),
                "event_types": c.schema.len(),
                "out": out,
            }))
        }
        Command::TrainEe {
            common,
            train,
            schema,
            out,
        } => {
            let (config, seed) = common.load()?;
            let corpus = load_ee_corpus(&train)?;
            let schema = match schema {
                Some(p) => read_json(p)?,
                None => infer_schema(&corpus.sentences)?,
            };
            let (model, epochs) = train_ee(&corpus.sentences, &schema, &config.ee, seed)?;
            create_dir(&out)?;
            model.save(&out.join(EE_PARAMS), &out.join(EE_META))?;
            write_json(out.join("ee_history.json"), &epochs)?;
            Ok(json!({
                "sentences": corpus.sentences.len(),
                "skipped": corpus.skipped,
                "epochs": epochs.len(),
                "final_mean_nll": epochs.last().map(|e| e.mean_nll),
                "out": out,
            }))
        }
        Command::EvalEe { model, test } => {
            let model = load_tagger(&model)?;
            let gold = load_ee_corpus(&test)?.sentences;
            let report = eval_ee(&predict_annotated(&model, &gold)?, &gold)?;
            Ok(serde_json::to_value(report).expect("serializable report"))
        }
        Command::Extract { model, news, out } => {
            let model = load_tagger(&model)?;
            let items = extract_corpus(&model, &load_news(&news)?)?;
            write_news(&out, &items)?;
            Ok(json!({
                "news": items.len(),
                "events": items.iter().map(|n| n.events.len()).sum::<usize>(),
                "without_events": items.iter().filter(|n| n.events.is_empty()).count(),
                "out": out,
            }))
        }
        Command::BuildGraph {
            common,
            news,
            impressions,
            out,
        } => {
            let (config, _) = common.load()?;
            let news = load_news(&news)?;
            let split = time_split(&load_impressions(&impressions)?, config.data.split)?;
            let hist = event_type_histories(&news, &split.train);
            let graph = build_graph(hist.values().map(Vec::as_slice), config.graph.cooccurrence_window);
            graph.save_tsv(&out)?;
            Ok(json!({"nodes": graph.len(), "edges": graph.edges().len(), "out": out}))
        }
        Command::EmbedGraph {
            common,
            graph,
            schema,
            out,
        } => {
            let (config, seed) = common.load()?;
            let graph = ETypeGraph::load_tsv(&graph)?;
            let types = match schema {
                Some(p) => read_json::<EventSchema>(p)?.event_type_names(),
                None => Vec::new(),
            };
            let e = embed_graph(graph, types.iter().map(String::as_str), &config.graph, seed)?;
            e.embedding.save(&out)?;
            Ok(json!({
                "types": e.embedding.vectors.len(),
                "dim": e.embedding.dim(),
                "epoch_losses": e.epoch_losses,
                "out": out,
            }))
        }
        Command::TrainRec {
            common,
            news,
            impressions,
            embedding,
            variant,
            out,
        } => {
            let (config, seed) = common.load()?;
            let variant = VariantSpec::by_name(&variant)?;
            let news = load_news(&news)?;
            let logs = load_impressions(&impressions)?;
            let emb = ETypeEmbedding::load(&embedding)?;
            let split = time_split(&logs, config.data.split)?;
            let history = ClickHistory::from_logs(&logs);
            let (model, history) = train_with_embedding(&variant, &news, &split, &history, &config, &emb, seed)?;
            create_dir(&out)?;
            model.save(&out.join(REC_PARAMS), &out.join(REC_META))?;
            write_json(out.join("history.json"), &history)?;
            Ok(json!({"variant": variant.name, "seed": seed, "history": history, "out": out}))
        }
        Command::Evaluate {
            common,
            model,
            news,
            impressions,
            predictions,
        } => {
            let (config, _) = common.load()?;
            let (p, m) = (model.join(REC_PARAMS), model.join(REC_META));
            require(&p, "recommender checkpoint")?;
            let news = load_news(&news)?;
            let logs = load_impressions(&impressions)?;
            let model = RecModel::load(&p, &m, &news)?;
            let split = time_split(&logs, config.data.split)?;
            let history = ClickHistory::from_logs(&logs);
            let scores = model.score_impressions(&split.test, &history)?;
            let mut report = evaluate(&scores, &split.test, config.eval.auc_mode)?;
            if let Some(path) = &predictions {
                write_predictions(path, &model.predict(&split.test, &history)?)?;
            }
            write_json(model_dir_file(&p, "metrics.json"), &report)?;
            report.per_impression.clear();
            Ok(serde_json::to_value(report).expect("serializable report"))
        }
        Command::Ablate { common, data, out } => {
            let (config, seed) = common.load()?;
            let (data, extra) = prepared(&data, &config, seed)?;
            let (table, runs) = run_ablation(&data, &config, &variants(&config)?, &seeds(seed, config.eval.n_seeds))?;
            write_table(&out, "ablation", &table, &runs, extra)
        }
        Command::FractionStudy { common, data, out } => {
            let (config, seed) = common.load()?;
            let (data, extra) = prepared(&data, &config, seed)?;
            let (table, runs) = run_fraction_study(
                &data,
                &config,
                &config.eval.fractions,
                &variants(&config)?,
                &seeds(seed, config.eval.n_seeds),
            )?;
            write_table(&out, "fraction_study", &table, &runs, extra)
        }
    }
}

fn model_dir_file(params: &Path, name: &str) -> PathBuf {
    params.parent().unwrap_or(Path::new(".")).join(name)
}

fn train_with_embedding(
    variant: &VariantSpec,
    news: &[NewsItem],
    split: &eenr_core::corpus::Split,
    history: &ClickHistory,
    config: &ExperimentConfig,
    emb: &ETypeEmbedding,
    seed: u64,
) -> Result<(RecModel, eenr_core::predictor::TrainHistory)> {
    let mut model = RecModel::init(
        config.encoder.clone(),
        variant.channels,
        config.trainer.predictor.clone(),
        news,
        emb,
        &split.train,
        seed,
    )?;
    let history = eenr_core::predictor::train_rec(
        &mut model,
        &split.train,
        &split.val,
        history,
        &config.trainer.trainer,
        seed,
    )?;
    Ok((model, history))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(summary) => {
            let text = serde_json::to_string_pretty(&summary).expect("serializable summary");
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
