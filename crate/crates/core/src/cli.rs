//! The `distparse` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 internal invariant violation. Every run writes its resolved settings to
//! a `run.json` sidecar next to its main output.

use std::ffi::OsString;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::distance::{dg_to_tree, dl_to_tree, read_records, write_records, DistanceRecord, TiePolicy};
use crate::error::{Error, Result};
use crate::metrics::{
    corpus_eval, improvement_table, left_branching, random_tree, right_branching, write_csv, EvalOptions,
};
use crate::predictor::{load_model, save_model, Head, Model, TrainingConfig};
use crate::selftrain::{
    collect_ensemble, read_sentences, self_train, simulate_ensemble, EnsembleSource, Recipe, SelfTrainConfig,
};
use crate::treebank::{read_trees, strip_punctuation, write_trees, Direction, Grammar, Tree, Treebank};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Parser, Serialize)]
#[command(name = "distparse", version, about = "Syntactic-distance parsing and consensus self-training")]
pub struct Cli {
    /// Worker threads for parsing, evaluation and gradient computation (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Where to write the run record (default: next to the main output).
    #[arg(long, global = true)]
    pub run_json: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Convert between trees and distance records.
    Convert(ConvertArgs),
    /// Parse sentences with a trained model.
    Parse(ParseArgs),
    /// Score predicted trees against gold trees.
    Eval(EvalArgs),
    /// Train a distance predictor on gold trees and/or silver records.
    Train(TrainArgs),
    /// Build a silver set from ensemble parses and train on it.
    Selftrain(SelfTrainArgs),
    /// Agreement and length-bucket reports.
    Analyze(AnalyzeArgs),
    /// Sample a synthetic treebank from a weighted grammar.
    GenSynthetic(GenArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvertMode {
    Tree2dl,
    Tree2dg,
    Dl2tree,
    Dg2tree,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum BinarizeArg {
    Left,
    Right,
    None,
}

impl BinarizeArg {
    fn apply(self, tb: Treebank) -> Treebank {
        match self {
            BinarizeArg::Left => tb.binarized(Direction::Left),
            BinarizeArg::Right => tb.binarized(Direction::Right),
            BinarizeArg::None => tb,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadArg {
    Dl,
    Dg,
}

impl From<HeadArg> for Head {
    fn from(h: HeadArg) -> Head {
        match h {
            HeadArg::Dl => Head::Dl,
            HeadArg::Dg => Head::Dg,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TiesArg {
    Leftmost,
    Rightmost,
}

impl From<TiesArg> for TiePolicy {
    fn from(t: TiesArg) -> TiePolicy {
        match t {
            TiesArg::Leftmost => TiePolicy::Leftmost,
            TiesArg::Rightmost => TiePolicy::Rightmost,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TrivialArg {
    Left,
    Right,
    Random,
}

#[derive(Debug, Args, Serialize)]
pub struct ConvertArgs {
    #[arg(long, value_enum)]
    pub mode: ConvertMode,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub max_depth: u32,
    #[arg(long, value_enum, default_value = "right")]
    pub binarize: BinarizeArg,
    #[arg(long, value_enum, default_value = "leftmost")]
    pub ties: TiesArg,
}

#[derive(Debug, Args, Serialize)]
pub struct ParseArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// One whitespace-tokenized sentence per line.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "dl")]
    pub head: HeadArg,
    #[arg(long, value_enum, default_value = "leftmost")]
    pub ties: TiesArg,
    /// Attach predicted constituent labels (needs a model with a label head).
    #[arg(long)]
    pub labels: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub gold: PathBuf,
    /// Predicted trees, aligned with the gold file.
    #[arg(long, required_unless_present = "trivial", conflicts_with = "trivial")]
    pub pred: Option<PathBuf>,
    /// Score a trivial baseline instead of a prediction file.
    #[arg(long, value_enum)]
    pub trivial: Option<TrivialArg>,
    /// Leave the whole-sentence span out of the bracket sets.
    #[arg(long)]
    pub no_full_span: bool,
    /// Also report labeled F1.
    #[arg(long)]
    pub labeled: bool,
    #[arg(long, value_enum, default_value = "right")]
    pub binarize: BinarizeArg,
    /// Drop punctuation tokens from gold and predicted trees before scoring.
    #[arg(long)]
    pub strip_punct: bool,
    /// Baseline predictions for the improvement column of --buckets-out.
    #[arg(long, requires = "buckets_out")]
    pub baseline: Option<PathBuf>,
    #[arg(long, requires = "baseline")]
    pub buckets_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Predictor hyperparameters; each flag overrides the config file.
#[derive(Debug, Args, Serialize, Default, Clone)]
pub struct HyperArgs {
    /// `key = value` file of training settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Preceding words seen by each convolution.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub embed: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub mix_ratio: Option<f64>,
    #[arg(long, value_enum)]
    pub head: Option<HeadArg>,
    #[arg(long, value_enum)]
    pub ties: Option<TiesArg>,
    #[arg(long)]
    pub label_weight: Option<f64>,
    #[arg(long)]
    pub max_depth: Option<u32>,
}

impl HyperArgs {
    fn resolve(&self, seed: u64, default_head: Head) -> Result<TrainingConfig> {
        let mut cfg = TrainingConfig {
            head: default_head,
            ..Default::default()
        };
        if let Some(path) = &self.config {
            cfg.apply(&read_text(path)?)?;
        }
        cfg.seed = seed;
        macro_rules! over {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { cfg.$f = v; } )* };
        }
        over!(alpha, window, embed, hidden, lr, epochs, batch_size, mix_ratio, label_weight, max_depth);
        if let Some(h) = self.head {
            cfg.head = h.into();
        }
        if let Some(t) = self.ties {
            cfg.ties = t.into();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Gold trees (binarized before training).
    #[arg(long, required_unless_present = "silver")]
    pub gold: Option<PathBuf>,
    /// Silver distance records.
    #[arg(long)]
    pub silver: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Train the label head on gold trees and decode with the gap head by default.
    #[arg(long)]
    pub low_resource: bool,
    #[arg(long, value_enum, default_value = "right")]
    pub binarize: BinarizeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SelfTrainArgs {
    /// Unlabeled sentences, one per line.
    #[arg(long)]
    pub unlabeled: PathBuf,
    /// Directory of `member_<k>.trees` files aligned with the sentences.
    #[arg(long, required_unless_present = "bootstrap_gold", conflicts_with = "bootstrap_gold")]
    pub ensemble_dir: Option<PathBuf>,
    /// Train the ensemble internally from these gold trees, one member per seed.
    #[arg(long)]
    pub bootstrap_gold: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0.6)]
    pub mu: f64,
    #[arg(long, default_value_t = 15)]
    pub nc: usize,
    /// Require more than mu·nc agreeing members instead of at least.
    #[arg(long)]
    pub strict: bool,
    #[arg(long, default_value_t = 1)]
    pub rounds: usize,
    /// Gold trees mixed into retraining (low-resource mode).
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Gold trees for the unlabeled sentences, used only for reports.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Development trees; parsed and scored after training.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "right")]
    pub binarize: BinarizeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Ensemble directory for `agreement.csv`.
    #[arg(long, requires = "unlabeled")]
    pub ensemble_dir: Option<PathBuf>,
    #[arg(long)]
    pub unlabeled: Option<PathBuf>,
    /// Baseline predictions for `buckets.csv`.
    #[arg(long, requires = "selftrained")]
    pub baseline: Option<PathBuf>,
    #[arg(long, requires = "baseline")]
    pub selftrained: Option<PathBuf>,
    #[arg(long)]
    pub no_full_span: bool,
    #[arg(long, value_enum, default_value = "right")]
    pub binarize: BinarizeArg,
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    #[arg(long)]
    pub grammar: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "none")]
    pub binarize: BinarizeArg,
    /// Also write the bare sentences, one per line.
    #[arg(long)]
    pub sentences_out: Option<PathBuf>,
    /// Also write a simulated ensemble of rotation-noised copies of the binarized trees.
    #[arg(long)]
    pub ensemble_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 15)]
    pub nc: usize,
    #[arg(long, default_value_t = 0.3)]
    pub rotation_rate: f64,
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.unwrap_or(0))
        .build();
    let result = match pool {
        Ok(pool) => pool.install(|| dispatch(&cli, &argv)),
        Err(e) => Err(Error::Config(format!("thread pool: {e}"))),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_internal() {
                EXIT_INTERNAL
            } else {
                EXIT_DATA
            }
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))
}

fn load_trees(path: &Path) -> Result<Treebank> {
    let mut tb = read_trees(&read_text(path)?).map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })?;
    tb.source = path.display().to_string();
    Ok(tb)
}

fn load_records(path: &Path) -> Result<Vec<DistanceRecord>> {
    let f = fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_records(BufReader::new(f))
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from(name), |p| p.join(name))
}

#[derive(Serialize)]
struct RunRecord<'a> {
    tool: &'static str,
    version: &'static str,
    argv: &'a [String],
    command: &'a Command,
    #[serde(skip_serializing_if = "Option::is_none")]
    training: Option<&'a TrainingConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    selftrain: Option<&'a SelfTrainConfig>,
}

fn write_run_json(cli: &Cli, argv: &[String], default: PathBuf, training: Option<&TrainingConfig>, selftrain: Option<&SelfTrainConfig>) -> Result<()> {
    let path = cli.run_json.clone().unwrap_or(default);
    let rec = RunRecord {
        tool: "distparse",
        version: env!("CARGO_PKG_VERSION"),
        argv,
        command: &cli.command,
        training,
        selftrain,
    };
    let text = serde_json::to_string_pretty(&rec).map_err(|e| Error::Model(e.to_string()))?;
    write_text(&path, &(text + "\n"))
}

fn dispatch(cli: &Cli, argv: &[String]) -> Result<()> {
    match &cli.command {
        Command::Convert(a) => {
            convert(a)?;
            write_run_json(cli, argv, sibling(&a.out, "run.json"), None, None)
        }
        Command::Parse(a) => {
            parse(a)?;
            write_run_json(cli, argv, sibling(&a.out, "run.json"), None, None)
        }
        Command::Eval(a) => {
            eval(a)?;
            let default = a.buckets_out.as_deref().map_or_else(|| PathBuf::from("run.json"), |p| sibling(p, "run.json"));
            write_run_json(cli, argv, default, None, None)
        }
        Command::Train(a) => {
            let cfg = train(a)?;
            write_run_json(cli, argv, sibling(&a.out, "run.json"), Some(&cfg), None)
        }
        Command::Selftrain(a) => {
            let cfg = selftrain(a)?;
            write_run_json(cli, argv, a.out_dir.join("run.json"), None, Some(&cfg))
        }
        Command::Analyze(a) => {
            analyze(a)?;
            write_run_json(cli, argv, a.out_dir.join("run.json"), None, None)
        }
        Command::GenSynthetic(a) => {
            generate(a)?;
            write_run_json(cli, argv, sibling(&a.out, "run.json"), None, None)
        }
    }
}

fn convert(a: &ConvertArgs) -> Result<()> {
    match a.mode {
        ConvertMode::Tree2dl | ConvertMode::Tree2dg => {
            let tb = a.binarize.apply(load_trees(&a.input)?);
            let records = tb
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    DistanceRecord::from_tree(t, a.max_depth, None).map_err(|e| Error::Parse {
                        line: i + 1,
                        msg: e.to_string(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            write_records(create(&a.out)?, &records)?;
            println!("wrote {} records to {}", records.len(), a.out.display());
        }
        ConvertMode::Dl2tree | ConvertMode::Dg2tree => {
            let records = load_records(&a.input)?;
            let trees = records
                .iter()
                .map(|r| match a.mode {
                    ConvertMode::Dl2tree => dl_to_tree(&r.dl.0, &r.tokens, a.ties.into()),
                    _ => dg_to_tree(&r.dg.0, &r.tokens, a.ties.into()),
                })
                .collect::<Result<Vec<Tree>>>()?;
            let tb = Treebank::new(trees, a.input.display().to_string())?;
            write_text(&a.out, &write_trees(&tb)?)?;
            println!("wrote {} trees to {}", tb.len(), a.out.display());
        }
    }
    Ok(())
}

fn load_model_file(path: &Path) -> Result<Model> {
    let f = fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    load_model(BufReader::new(f))
}

fn parse_sentences(model: &Model, sentences: &[Vec<String>], head: Head, ties: TiePolicy, labels: bool) -> Result<Treebank> {
    use rayon::prelude::*;
    let trees = sentences
        .par_iter()
        .map(|s| model.predict(s, head, ties, labels))
        .collect::<Result<Vec<_>>>()?;
    Treebank::new(trees, "predictions")
}

fn parse(a: &ParseArgs) -> Result<()> {
    let model = load_model_file(&a.model)?;
    let sentences = read_sentences(&read_text(&a.input)?)?;
    let tb = parse_sentences(&model, &sentences, a.head.into(), a.ties.into(), a.labels)?;
    write_text(&a.out, &write_trees(&tb)?)?;
    println!("parsed {} sentences into {}", tb.len(), a.out.display());
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let prepare = |tb: Treebank| -> Result<Treebank> {
        let tb = if a.strip_punct { without_punctuation(tb)? } else { tb };
        Ok(a.binarize.apply(tb))
    };
    let gold = prepare(load_trees(&a.gold)?)?;
    let opts = EvalOptions {
        include_full_span: !a.no_full_span,
        labeled: a.labeled,
    };
    let pred = match (&a.pred, a.trivial) {
        (Some(p), _) => prepare(load_trees(p)?)?,
        (None, Some(kind)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let trees = gold
                .iter()
                .map(|g| {
                    let toks = g.tokens();
                    match kind {
                        TrivialArg::Left => left_branching(&toks),
                        TrivialArg::Right => right_branching(&toks),
                        TrivialArg::Random => random_tree(&toks, &mut rng),
                    }
                })
                .collect();
            Treebank::new(trees, format!("{kind:?} baseline"))?
        }
        (None, None) => return Err(Error::Config("either --pred or --trivial is required".into())),
    };
    let report = corpus_eval(&pred, &gold, opts)?;
    println!(
        "convention: full_span={} labeled={} binarize={:?} single_word_spans=excluded punctuation={}",
        if opts.include_full_span { "included" } else { "excluded" },
        opts.labeled,
        a.binarize,
        if a.strip_punct { "removed" } else { "kept" }
    );
    println!("sentences: {}", gold.len());
    println!("macro_f1: {:.2}", report.macro_f1);
    if let Some(l) = report.labeled_f1 {
        println!("labeled_f1: {l:.2}");
    }
    for b in &report.buckets {
        println!("bucket {:>6}: count={} avg_f1={:.2}", b.range, b.count, b.avg_f1);
    }
    if let (Some(base), Some(out)) = (&a.baseline, &a.buckets_out) {
        let base = prepare(load_trees(base)?)?;
        let rows = improvement_table(&base, &pred, &gold, opts)?;
        write_csv(create(out)?, &rows)?;
    }
    Ok(())
}

/// Removes punctuation from every tree. A sentence made only of punctuation
/// is an error since it would leave the files misaligned.
fn without_punctuation(tb: Treebank) -> Result<Treebank> {
    let source = tb.source.clone();
    let trees = tb
        .iter()
        .enumerate()
        .map(|(i, t)| {
            strip_punctuation(t).ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("{source}: sentence is all punctuation"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Treebank::new(trees, source)
}

fn train(a: &TrainArgs) -> Result<TrainingConfig> {
    let default_head = if a.low_resource { Head::Dg } else { Head::Dl };
    let mut hyper = a.hyper.clone();
    if a.low_resource && hyper.label_weight.is_none() {
        hyper.label_weight = Some(1.0);
    }
    let cfg = hyper.resolve(a.seed, default_head)?;
    let gold = match &a.gold {
        Some(p) => a.binarize.apply(load_trees(p)?).sentences,
        None => Vec::new(),
    };
    let silver = match &a.silver {
        Some(p) => load_records(p)?,
        None => Vec::new(),
    };
    let (model, trace) = Model::fit(&gold, &silver, &cfg)?;
    for (i, l) in trace.iter().enumerate() {
        println!("epoch {} loss {:.6}", i + 1, l);
    }
    save_model(create(&a.out)?, &model)?;
    println!("saved model to {}", a.out.display());
    Ok(cfg)
}

fn selftrain(a: &SelfTrainArgs) -> Result<SelfTrainConfig> {
    let training = a.hyper.resolve(a.seed, Head::Dl)?;
    let cfg = SelfTrainConfig {
        n_c: a.nc,
        mu: a.mu,
        max_depth: training.max_depth,
        rounds: a.rounds,
        strict: a.strict,
        training,
    };
    cfg.validate()?;
    let sentences = read_sentences(&read_text(&a.unlabeled)?)?;
    let source = match (&a.ensemble_dir, &a.bootstrap_gold) {
        (Some(dir), _) => EnsembleSource::Directory(dir.clone()),
        (None, Some(path)) => EnsembleSource::Internal {
            seeds: (0..a.nc as u64).map(|k| a.seed.wrapping_add(1000 + k)).collect(),
            recipe: Recipe {
                gold: a.binarize.apply(load_trees(path)?).sentences,
                silver: Vec::new(),
                config: cfg.training.clone(),
            },
        },
        (None, None) => return Err(Error::Config("--ensemble-dir or --bootstrap-gold is required".into())),
    };
    let gold = match &a.gold {
        Some(p) => a.binarize.apply(load_trees(p)?).sentences,
        None => Vec::new(),
    };
    let reference = a.reference.as_deref().map(load_trees).transpose()?.map(|t| a.binarize.apply(t));
    let out = self_train(&sentences, &source, &gold, &cfg, reference.as_ref())?;

    ensure_dir(&a.out_dir)?;
    write_records(create(&a.out_dir.join("silver.jsonl"))?, &out.silver.records())?;
    write_csv(create(&a.out_dir.join("silver_stats.csv"))?, std::slice::from_ref(&out.stats))?;
    write_csv(create(&a.out_dir.join("agreement.csv"))?, &out.agreement)?;
    save_model(create(&a.out_dir.join("model.json"))?, &out.model)?;
    println!(
        "silver: {} of {} sentences admitted (threshold {} of {})",
        out.silver.len(),
        sentences.len(),
        out.silver.provenance.threshold,
        out.silver.provenance.n_c
    );
    for (i, l) in out.loss_trace.iter().enumerate() {
        println!("epoch {} loss {:.6}", i + 1, l);
    }
    if let Some(dev) = &a.dev {
        let dev = a.binarize.apply(load_trees(dev)?);
        let sents: Vec<Vec<String>> = dev.iter().map(Tree::tokens).collect();
        let pred = parse_sentences(&out.model, &sents, cfg.training.head, cfg.training.ties, false)?;
        write_text(&a.out_dir.join("dev_pred.trees"), &write_trees(&pred)?)?;
        let report = corpus_eval(&pred, &dev, EvalOptions::default())?;
        println!("dev macro_f1: {:.2}", report.macro_f1);
    }
    Ok(cfg)
}

fn analyze(a: &AnalyzeArgs) -> Result<()> {
    if a.ensemble_dir.is_none() && a.baseline.is_none() {
        return Err(Error::Config("nothing to analyze: give --ensemble-dir and/or --baseline".into()));
    }
    let gold = a.binarize.apply(load_trees(&a.gold)?);
    let opts = EvalOptions {
        include_full_span: !a.no_full_span,
        labeled: false,
    };
    ensure_dir(&a.out_dir)?;
    if let (Some(dir), Some(unlabeled)) = (&a.ensemble_dir, &a.unlabeled) {
        let sentences = read_sentences(&read_text(unlabeled)?)?;
        let parses = collect_ensemble(&EnsembleSource::Directory(dir.clone()), &sentences)?;
        let rows = crate::metrics::agreement_report(&parses, Some(&gold), opts)?;
        write_csv(create(&a.out_dir.join("agreement.csv"))?, &rows)?;
        println!("wrote agreement.csv ({} rows)", rows.len());
    }
    if let (Some(base), Some(st)) = (&a.baseline, &a.selftrained) {
        let base = a.binarize.apply(load_trees(base)?);
        let st = a.binarize.apply(load_trees(st)?);
        let rows = improvement_table(&base, &st, &gold, opts)?;
        for r in &rows {
            println!("{:>6}: count={} improved={:.1}%", r.range, r.count, r.pct_improved);
        }
        write_csv(create(&a.out_dir.join("buckets.csv"))?, &rows)?;
    }
    Ok(())
}

fn generate(a: &GenArgs) -> Result<()> {
    let grammar = Grammar::parse(&read_text(&a.grammar)?)?;
    let tb = a.binarize.apply(grammar.generate(a.n, a.seed)?);
    write_text(&a.out, &write_trees(&tb)?)?;
    if let Some(p) = &a.sentences_out {
        let text: String = tb.iter().map(|t| t.leaves().join(" ") + "\n").collect();
        write_text(p, &text)?;
    }
    if let Some(dir) = &a.ensemble_dir {
        if !(0.0..=1.0).contains(&a.rotation_rate) {
            return Err(Error::Config(format!("rotation rate {} outside [0, 1]", a.rotation_rate)));
        }
        ensure_dir(dir)?;
        let binary = tb.binarized(Direction::Right);
        for (k, member) in simulate_ensemble(&binary, a.nc, a.rotation_rate, a.seed)?.iter().enumerate() {
            write_text(&dir.join(format!("member_{k}.trees")), &write_trees(member)?)?;
        }
    }
    println!("wrote {} trees to {}", tb.len(), a.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["distparse", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["distparse", "eval", "--bogus"]), EXIT_USAGE);
    }

    #[test]
    fn missing_file_exits_two() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("x.jsonl");
        let code = run([
            "distparse".as_ref(),
            "convert".as_ref(),
            "--mode".as_ref(),
            "tree2dg".as_ref(),
            "--in".as_ref(),
            dir.path().join("missing.trees").as_os_str(),
            "--out".as_ref(),
            out.as_os_str(),
        ] as [&std::ffi::OsStr; 8]);
        assert_eq!(code, EXIT_DATA);
    }
}
