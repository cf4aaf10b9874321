//! Command-line front end.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, RwLock};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use errspan_core::dataset::{read_jsonl_file, write_jsonl};
use errspan_core::decoding::{
    generate, standard_grid, sweep, GenerateOptions, LanguageModel, NgramModel, ScoreMode,
};
use errspan_core::metrics::{GroupBy, Normalize, OverlapMode, Weighting};
use errspan_core::prediction::{
    baseline_redundancy_predictor, build_gold, export_training_data, human_one_vs_rest,
    score_predictions, scores_csv, NegativeMode, PredictedSpan, SplitSizes, TrainingData,
};
use errspan_core::rng::{derive_seed, hash_str};
use errspan_core::{Dataset, DecodingConfig, GenerationRecord};

use crate::config::Config;
use crate::http::router;
use crate::qualification::{grade, AnswerKey, QualificationResponse};
use crate::reports::{overlay, render, Format, ReportKind, ReportParams};
use crate::service::{AnnotationService, ServiceSettings};
use crate::store::{JsonlStore, Store};

#[derive(Debug, Parser)]
#[command(name = "errspan", version, about = "Span-level error annotation toolkit")]
pub struct Cli {
    /// Base seed for every random draw (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// generations.jsonl (defaults to the config file's).
    #[arg(long)]
    pub generations: Option<PathBuf>,
    /// annotations.jsonl (defaults to the config file's).
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Run even when the data has validation violations.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Keep severity-1 Grammar_Usage spans.
    #[arg(long)]
    pub keep_severity1_grammar: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WeightingArg {
    Coverage,
    CoverageXSeverity,
    Count,
}

impl From<WeightingArg> for Weighting {
    fn from(w: WeightingArg) -> Self {
        match w {
            WeightingArg::Coverage => Weighting::Coverage,
            WeightingArg::CoverageXSeverity => Weighting::CoverageTimesSeverity,
            WeightingArg::Count => Weighting::Count,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GroupByArg {
    SourceConfig,
    Topic,
    All,
}

impl From<GroupByArg> for GroupBy {
    fn from(g: GroupByArg) -> Self {
        match g {
            GroupByArg::SourceConfig => GroupBy::SourceConfig,
            GroupByArg::Topic => GroupBy::Topic,
            GroupByArg::All => GroupBy::All,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OverlapArg {
    Stack,
    Union,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MetricsView {
    Scores,
    Heatmap,
    Lengths,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NormalizeArg {
    ByTopic,
    ByErrorType,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    /// 1063 / 100 / 100 texts.
    Released,
    /// 84% / 8% / 8% of the texts.
    Proportional,
}

#[derive(Debug, Args)]
pub struct LengthArgs {
    #[arg(long, default_value_t = 80)]
    pub min_tokens: usize,
    #[arg(long, default_value_t = 145)]
    pub max_tokens: usize,
    #[arg(long, default_value_t = 10)]
    pub max_retries: usize,
    /// JSON n-gram model file; the bundled toy model when absent.
    #[arg(long)]
    pub lm: Option<PathBuf>,
    /// Let prompt tokens count toward the frequency penalty.
    #[arg(long)]
    pub count_prompt_tokens: bool,
    /// Apply the penalty to log-softmax scores instead of raw model scores.
    #[arg(long)]
    pub log_softmax: bool,
    /// Output file; stdout when absent.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check generations and annotations and print per-source totals.
    Validate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        json: bool,
    },
    /// Span coverage, coverage x severity and count statistics.
    Metrics {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        filter: FilterArgs,
        #[arg(long, value_enum, default_value = "coverage")]
        weighting: WeightingArg,
        #[arg(long, value_enum, default_value = "source-config")]
        group_by: GroupByArg,
        #[arg(long, value_enum, default_value = "stack")]
        overlap: OverlapArg,
        /// Count antecedent tokens toward coverage.
        #[arg(long)]
        include_antecedents: bool,
        /// Leave reader-issue types out of the totals.
        #[arg(long)]
        exclude_reader_issues: bool,
        /// Bootstrap resamples for confidence intervals; 0 disables them.
        #[arg(long, default_value_t = 1000)]
        resamples: usize,
        #[arg(long, default_value_t = 0.95)]
        confidence: f64,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(long, value_enum, default_value = "scores")]
        view: MetricsView,
        #[arg(long, value_enum, default_value = "by-topic")]
        normalize: NormalizeArg,
    },
    /// Krippendorff's alpha and Two-Agree per error type.
    Agreement {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        filter: FilterArgs,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Resampled span counts and their coefficient of variation.
    Bootstrap {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 50)]
        n_generations: usize,
        #[arg(long, default_value_t = 1000)]
        resamples: usize,
        #[arg(long)]
        with_replacement: bool,
        /// Emit the CoV curve for these sample sizes instead.
        #[arg(long, value_delimiter = ',')]
        cov_curve: Option<Vec<usize>>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Token-level precision, recall and F1 of predicted spans.
    EvalPredictions {
        #[command(flatten)]
        data: DataArgs,
        /// predictions.jsonl
        #[arg(long, conflicts_with = "baseline")]
        predictions: Option<PathBuf>,
        /// Score the repeated 4-gram baseline as the model.
        #[arg(long)]
        baseline: bool,
        /// Leave out the human one-vs-rest columns.
        #[arg(long)]
        no_human: bool,
    },
    /// Write train/dev/test span-classification files.
    ExportTraining {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value = "proportional")]
        split: SplitArg,
        /// Three negatives per distinct span length instead of per span.
        #[arg(long)]
        per_length: bool,
    },
    /// Generate continuations with the n-gram model.
    Generate {
        /// A single prompt.
        #[arg(long, conflicts_with = "prompts")]
        prompt: Option<String>,
        /// File with one prompt per line.
        #[arg(long)]
        prompts: Option<PathBuf>,
        /// Nucleus mass; omit for no nucleus filter.
        #[arg(long)]
        top_p: Option<f64>,
        /// 0 selects argmax decoding.
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 0.0)]
        frequency_penalty: f64,
        #[command(flatten)]
        length: LengthArgs,
    },
    /// Generate every prompt under the 14 standard decoding configurations.
    Sweep {
        #[arg(long)]
        prompts: PathBuf,
        #[command(flatten)]
        length: LengthArgs,
    },
    /// Train an n-gram model file from a text corpus.
    TrainLm {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value = "ngram")]
        name: String,
        #[arg(long, default_value_t = 0.95)]
        lambda: f64,
    },
    /// Run the annotation HTTP service.
    Serve {
        #[arg(long)]
        generations: Option<PathBuf>,
        #[arg(long)]
        store_dir: Option<PathBuf>,
        #[arg(long)]
        bind: Option<String>,
        /// 0 picks a free port.
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        annotations_per_generation: Option<usize>,
        /// Hand out tasks without a passed qualification.
        #[arg(long)]
        open_enrollment: bool,
    },
    /// Grade a qualification response file.
    Grade {
        #[arg(long)]
        response: PathBuf,
        /// Answer key; the bundled key when absent.
        #[arg(long)]
        key: Option<PathBuf>,
    },
    /// Multi-annotator overlay of one or all generations as JSON.
    AggregateView {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        generation_id: Option<String>,
    },
}

/// A command-line mistake that clap cannot see, such as a missing input.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

const VALIDATION_FAILED: u8 = 1;

struct Session {
    config: Config,
    seed: u64,
}

impl Session {
    fn path(&self, flag: &Option<PathBuf>, configured: &Option<PathBuf>, name: &str) -> anyhow::Result<PathBuf> {
        flag.clone()
            .or_else(|| configured.clone())
            .ok_or_else(|| usage(format!("--{name} is required (or set `{name}` in the config file)")))
    }

    fn load(&self, data: &DataArgs) -> anyhow::Result<Result<Dataset, ExitCode>> {
        let g = self.path(&data.generations, &self.config.generations, "generations")?;
        let a = self.path(&data.annotations, &self.config.annotations, "annotations")?;
        let dataset = Dataset::load(&g, &a)?;
        let report = dataset.validate();
        if !report.is_valid() {
            for v in report.violations.iter().take(20) {
                log::warn!("{v}");
            }
            if !data.force {
                eprintln!(
                    "{} validation violation(s); run `errspan validate` for details or pass --force",
                    report.violations.len()
                );
                return Ok(Err(ExitCode::from(VALIDATION_FAILED)));
            }
        }
        Ok(Ok(dataset))
    }
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn print(text: &str) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn load_lm(path: Option<&Path>) -> anyhow::Result<NgramModel> {
    match path {
        Some(p) => NgramModel::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(NgramModel::toy()),
    }
}

fn read_prompts(path: &Path) -> anyhow::Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn generate_options(length: &LengthArgs, seed: u64) -> GenerateOptions {
    GenerateOptions {
        min_tokens: length.min_tokens,
        max_tokens: length.max_tokens,
        max_retries: length.max_retries,
        seed,
        count_prompt_tokens: length.count_prompt_tokens,
        score_mode: if length.log_softmax {
            ScoreMode::LogSoftmax
        } else {
            ScoreMode::Raw
        },
    }
}

fn write_split_files(dir: &Path, data: &TrainingData) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, split) in [("train", &data.train), ("dev", &data.dev), ("test", &data.test)] {
        let path = dir.join(format!("{name}.jsonl"));
        let file = BufWriter::new(File::create(&path)?);
        write_jsonl(file, &split.examples)?;
        println!(
            "{name}: {} texts, {} positive spans, {} examples -> {}",
            split.generation_ids.len(),
            split.positives(),
            split.examples.len(),
            path.display()
        );
    }
    if data.missing_negatives > 0 {
        println!("{} negative(s) could not be drawn", data.missing_negatives);
    }
    Ok(())
}

pub fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let ctx = Session {
        seed: cli.seed.unwrap_or(config.seed),
        config,
    };
    macro_rules! dataset {
        ($data:expr) => {
            match ctx.load($data)? {
                Ok(d) => d,
                Err(code) => return Ok(code),
            }
        };
    }

    match cli.command {
        Command::Validate { data, json } => {
            let g = ctx.path(&data.generations, &ctx.config.generations, "generations")?;
            let a = ctx.path(&data.annotations, &ctx.config.annotations, "annotations")?;
            let report = Dataset::load(&g, &a)?.validate();
            if json {
                print(&(serde_json::to_string_pretty(&report)? + "\n"))?;
            } else {
                print(&report.to_string())?;
                for v in &report.violations {
                    eprintln!("{v}");
                }
            }
            if !report.is_valid() {
                return Ok(ExitCode::from(VALIDATION_FAILED));
            }
        }
        Command::Metrics {
            data,
            filter,
            weighting,
            group_by,
            overlap,
            include_antecedents,
            exclude_reader_issues,
            resamples,
            confidence,
            format,
            view,
            normalize,
        } => {
            let dataset = dataset!(&data);
            let kind = match view {
                MetricsView::Scores => ReportKind::Metrics,
                MetricsView::Heatmap => ReportKind::Heatmap,
                MetricsView::Lengths => ReportKind::Lengths,
            };
            let params = ReportParams {
                format: if matches!(view, MetricsView::Scores) { format } else { Format::Json },
                weighting: weighting.into(),
                group_by: group_by.into(),
                overlap: match overlap {
                    OverlapArg::Stack => OverlapMode::Stack,
                    OverlapArg::Union => OverlapMode::Union,
                },
                include_antecedents,
                keep_severity1_grammar: filter.keep_severity1_grammar,
                exclude_reader_issues,
                resamples,
                confidence,
                normalize: match normalize {
                    NormalizeArg::ByTopic => Normalize::ByTopic,
                    NormalizeArg::ByErrorType => Normalize::ByErrorType,
                },
                seed: ctx.seed,
                ..Default::default()
            };
            print(&render(kind, &dataset, &params)?)?;
        }
        Command::Agreement { data, filter, format } => {
            let dataset = dataset!(&data);
            let params = ReportParams {
                format,
                keep_severity1_grammar: filter.keep_severity1_grammar,
                ..Default::default()
            };
            print(&render(ReportKind::Agreement, &dataset, &params)?)?;
        }
        Command::Bootstrap {
            data,
            n_generations,
            resamples,
            with_replacement,
            cov_curve,
            format,
        } => {
            let dataset = dataset!(&data);
            if let Some(sizes) = cov_curve {
                let rows = errspan_core::agreement::cov_curve(
                    &dataset,
                    &sizes,
                    resamples,
                    ctx.seed,
                    with_replacement,
                )?;
                print(&(serde_json::to_string_pretty(&rows)? + "\n"))?;
            } else {
                let params = ReportParams {
                    format,
                    n_generations,
                    resamples,
                    with_replacement,
                    seed: ctx.seed,
                    ..Default::default()
                };
                if n_generations > dataset.generations().len() {
                    return Err(usage(format!(
                        "--n-generations {n_generations} exceeds the {} generations available",
                        dataset.generations().len()
                    )));
                }
                print(&render(ReportKind::Bootstrap, &dataset, &params)?)?;
            }
        }
        Command::EvalPredictions {
            data,
            predictions,
            baseline,
            no_human,
        } => {
            let dataset = dataset!(&data);
            let gold = build_gold(&dataset)?;
            let preds: Option<Vec<PredictedSpan>> = if baseline {
                Some(
                    (0..dataset.generations().len())
                        .flat_map(|pos| {
                            baseline_redundancy_predictor(
                                &dataset.generations()[pos],
                                dataset.token_map(pos),
                            )
                        })
                        .collect(),
                )
            } else {
                predictions.as_deref().map(read_jsonl_file).transpose()?
            };
            let model = preds
                .map(|p| score_predictions(&dataset, &p, &gold))
                .transpose()?;
            let human = (!no_human).then(|| human_one_vs_rest(&dataset)).transpose()?;
            print(&scores_csv(model.as_ref(), human.as_ref()))?;
        }
        Command::ExportTraining {
            data,
            out_dir,
            split,
            per_length,
        } => {
            let dataset = dataset!(&data);
            let sizes = match split {
                SplitArg::Released => SplitSizes::RELEASED,
                SplitArg::Proportional => SplitSizes::default(),
            };
            let mode = if per_length {
                NegativeMode::PerLength
            } else {
                NegativeMode::PerSpan
            };
            let exported = export_training_data(&dataset, sizes, ctx.seed, mode)?;
            write_split_files(&out_dir, &exported)?;
        }
        Command::Generate {
            prompt,
            prompts,
            top_p,
            temperature,
            frequency_penalty,
            length,
        } => {
            let prompts = match (prompt, prompts) {
                (Some(p), None) => vec![p],
                (None, Some(path)) => read_prompts(&path)?,
                _ => return Err(usage("give --prompt or --prompts")),
            };
            let config = DecodingConfig {
                top_p,
                temperature,
                frequency_penalty,
            };
            config.validate().map_err(usage)?;
            let lm = load_lm(length.lm.as_deref())?;
            let mut records: Vec<GenerationRecord> = Vec::with_capacity(prompts.len());
            for (i, p) in prompts.iter().enumerate() {
                let seed = derive_seed(ctx.seed, &[i as u64, hash_str(p)]);
                records.push(generate(&lm, p, config, &generate_options(&length, seed))?);
            }
            write_jsonl(output(length.out.as_deref())?, &records)?;
        }
        Command::Sweep { prompts, length } => {
            let prompts = read_prompts(&prompts)?;
            let lm = load_lm(length.lm.as_deref())?;
            let grid = standard_grid();
            let records = sweep(&lm, &prompts, &grid, &generate_options(&length, ctx.seed));
            let expected = prompts.len() * grid.len();
            if records.len() < expected {
                eprintln!(
                    "{} of {expected} generations failed to end within the length window",
                    expected - records.len()
                );
            }
            write_jsonl(output(length.out.as_deref())?, &records)?;
        }
        Command::TrainLm {
            corpus,
            out,
            name,
            lambda,
        } => {
            if !(0.0..=1.0).contains(&lambda) {
                return Err(usage("--lambda must be in [0, 1]"));
            }
            let text = std::fs::read_to_string(&corpus)
                .with_context(|| format!("reading {}", corpus.display()))?;
            let lm = NgramModel::train(name, &text, lambda);
            lm.save(&out)?;
            println!("{} word types -> {}", lm.vocabulary().len(), out.display());
        }
        Command::Serve {
            generations,
            store_dir,
            bind,
            port,
            annotations_per_generation,
            open_enrollment,
        } => {
            let config = &ctx.config;
            let g = ctx.path(&generations, &config.generations, "generations")?;
            let gens: Vec<GenerationRecord> = read_jsonl_file(&g)?;
            let store_dir = store_dir.unwrap_or_else(|| config.store_dir.clone());
            let store = JsonlStore::open(&store_dir, gens)?;
            let answer_key = match &config.answer_key {
                Some(p) => AnswerKey::load(p)?,
                None => AnswerKey::bundled(),
            };
            let settings = ServiceSettings {
                annotations_per_generation: annotations_per_generation
                    .unwrap_or(config.annotations_per_generation),
                answer_key,
                open_enrollment: open_enrollment || config.open_enrollment,
            };
            if settings.annotations_per_generation == 0 {
                return Err(usage("--annotations-per-generation must be positive"));
            }
            let service = AnnotationService::new(Box::new(store) as Box<dyn Store>, settings);
            let bind = bind.unwrap_or_else(|| config.bind.clone());
            let addr: SocketAddr = format!("{bind}:{}", port.unwrap_or(config.port))
                .parse()
                .map_err(|e| usage(format!("bad bind address: {e}")))?;
            serve(addr, service)?;
        }
        Command::Grade { response, key } => {
            let key = match key {
                Some(p) => AnswerKey::load(&p)?,
                None => AnswerKey::bundled(),
            };
            let text = std::fs::read_to_string(&response)
                .with_context(|| format!("reading {}", response.display()))?;
            let response: QualificationResponse = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", response.display()))?;
            let graded = grade(&response, &key)?;
            print(&(serde_json::to_string_pretty(&graded)? + "\n"))?;
        }
        Command::AggregateView {
            data,
            generation_id,
        } => {
            let dataset = dataset!(&data);
            let json = match generation_id {
                Some(id) => serde_json::to_string_pretty(&overlay(&dataset, &id)?)?,
                None => {
                    let all = dataset
                        .generations()
                        .iter()
                        .map(|g| overlay(&dataset, &g.generation_id))
                        .collect::<Result<Vec<_>, _>>()?;
                    serde_json::to_string_pretty(&all)?
                }
            };
            print(&(json + "\n"))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn serve(addr: SocketAddr, service: AnnotationService<Box<dyn Store>>) -> anyhow::Result<()> {
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        let local = listener.local_addr()?;
        println!("listening on {local}");
        std::io::stdout().flush()?;
        let app = router(Arc::new(RwLock::new(service)));
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| anyhow!(e))
    })
}
