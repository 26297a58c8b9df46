use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{forward, gradients, label_logits, Dims, Example, LabelVocab, LossWeights, Model, Params, Vocab};
use crate::distance::{dg_to_tree, dl_to_tree, DistanceRecord, TiePolicy, DEFAULT_MAX_DEPTH};
use crate::error::{Error, Result};
use crate::treebank::Tree;

/// Which distance head is decoded into a tree.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    #[default]
    Dl,
    Dg,
}

impl FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dl" => Ok(Head::Dl),
            "dg" => Ok(Head::Dg),
            other => Err(Error::Config(format!("unknown head '{other}' (expected dl or dg)"))),
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Head::Dl => "dl",
            Head::Dg => "dg",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub alpha: f64,
    pub window: usize,
    pub embed: usize,
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Probability that a step draws its batch from the silver set.
    pub mix_ratio: f64,
    pub ties: TiePolicy,
    pub head: Head,
    /// Weight of the label loss on gold batches; 0 disables the label head.
    pub label_weight: f64,
    pub max_depth: u32,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            alpha: 0.5,
            window: 4,
            embed: 100,
            hidden: 300,
            lr: 0.1,
            epochs: 30,
            batch_size: 16,
            seed: 0,
            mix_ratio: 0.5,
            ties: TiePolicy::Leftmost,
            head: Head::Dl,
            label_weight: 0.0,
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{value}' for '{key}'")))
}

impl TrainingConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "alpha" => self.alpha = parse_value(key, value)?,
            "window" => self.window = parse_value(key, value)?,
            "embed" => self.embed = parse_value(key, value)?,
            "hidden" => self.hidden = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "mix_ratio" => self.mix_ratio = parse_value(key, value)?,
            "ties" => self.ties = value.parse()?,
            "head" => self.head = value.parse()?,
            "label_weight" => self.label_weight = parse_value(key, value)?,
            "max_depth" => self.max_depth = parse_value(key, value)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.mix_ratio) {
            return Err(Error::Config(format!("mix_ratio {} outside [0, 1]", self.mix_ratio)));
        }
        if self.batch_size == 0 || self.embed == 0 || self.hidden == 0 {
            return Err(Error::Config("batch_size, embed and hidden must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.label_weight.is_finite() && self.label_weight >= 0.0) {
            return Err(Error::Config("label_weight must be non-negative".into()));
        }
        Ok(())
    }
}

/// Reads `key = value` lines into a config starting from the defaults.
/// Blank lines and `#` comments are ignored.
pub fn parse_config(text: &str) -> Result<TrainingConfig> {
    let mut cfg = TrainingConfig::default();
    cfg.apply(text)?;
    cfg.validate()?;
    Ok(cfg)
}

impl TrainingConfig {
    /// Overrides the keys named in a `key = value` file, leaving the rest.
    pub fn apply(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key=value, got '{line}'"),
            })?;
            self.set(k.trim(), v.trim()).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: Params,
    /// Mean batch loss per epoch.
    pub loss_trace: Vec<f64>,
}

// Cycles through a shuffled permutation, reshuffling on wrap-around.
struct Stream {
    order: Vec<usize>,
    pos: usize,
}

impl Stream {
    fn new(len: usize) -> Self {
        Stream {
            order: (0..len).collect(),
            pos: len,
        }
    }

    fn next_batch<R: Rng>(&mut self, size: usize, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size.min(self.order.len()) {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Mini-batch gradient descent. Each step flips a coin weighted by
/// `mix_ratio` to pick the silver or gold stream; an empty stream is never
/// picked. Gold batches include the label loss when `label_weight > 0`.
pub fn train(mut params: Params, gold: &[Example], silver: &[Example], cfg: &TrainingConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if gold.is_empty() && silver.is_empty() {
        return Err(Error::Empty("no gold or silver training examples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gold_stream = Stream::new(gold.len());
    let mut silver_stream = Stream::new(silver.len());
    let steps = (gold.len() + silver.len()).div_ceil(cfg.batch_size);
    let gold_w = LossWeights {
        alpha: cfg.alpha,
        label: if params.dims.labels > 0 { cfg.label_weight } else { 0.0 },
    };
    let silver_w = LossWeights::distance_only(cfg.alpha);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..steps {
            let coin: f64 = rng.gen();
            let use_silver = if silver.is_empty() {
                false
            } else if gold.is_empty() {
                true
            } else {
                coin < cfg.mix_ratio
            };
            let (pool, stream, w) = if use_silver {
                (silver, &mut silver_stream, silver_w)
            } else {
                (gold, &mut gold_stream, gold_w)
            };
            let batch: Vec<Example> = stream
                .next_batch(cfg.batch_size, &mut rng)
                .into_iter()
                .map(|i| pool[i].clone())
                .collect();
            let (loss, grad) = gradients(&params, &batch, w)?;
            params.add_scaled(&grad, -cfg.lr);
            params.check_finite("parameter")?;
            epoch_loss += loss;
        }
        trace.push(epoch_loss / steps as f64);
    }
    Ok(TrainOutcome {
        params,
        loss_trace: trace,
    })
}

impl Model {
    /// Fresh, randomly initialized model over the given vocabularies.
    pub fn new(vocab: Vocab, labels: Option<LabelVocab>, cfg: &TrainingConfig) -> Model {
        let labels = labels.unwrap_or_default();
        let dims = Dims {
            vocab: vocab.len(),
            embed: cfg.embed,
            hidden: cfg.hidden,
            window: cfg.window,
            labels: if cfg.label_weight > 0.0 { labels.len() } else { 0 },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_1417);
        Model {
            vocab,
            labels,
            params: Params::init(dims, &mut rng),
        }
    }

    /// Builds vocabularies from the data, initializes and trains a model.
    /// Gold trees must be binary.
    pub fn fit(gold: &[Tree], silver: &[DistanceRecord], cfg: &TrainingConfig) -> Result<(Model, Vec<f64>)> {
        let vocab = Vocab::build(
            gold.iter()
                .map(|t| t.leaves())
                .chain(silver.iter().map(|r| r.tokens.iter().map(String::as_str).collect())),
        );
        let labels = (cfg.label_weight > 0.0).then(|| LabelVocab::build(gold));
        let mut model = Model::new(vocab, labels, cfg);
        let (gold_ex, silver_ex) = model.examples(gold, silver, cfg.max_depth)?;
        let out = train(model.params, &gold_ex, &silver_ex, cfg)?;
        model.params = out.params;
        Ok((model, out.loss_trace))
    }

    pub fn examples(&self, gold: &[Tree], silver: &[DistanceRecord], max_depth: u32) -> Result<(Vec<Example>, Vec<Example>)> {
        let mut unknown = 0;
        let labels = (self.params.dims.labels > 0).then_some(&self.labels);
        let gold_ex = gold
            .iter()
            .map(|t| Example::from_tree(t, &self.vocab, labels, max_depth, &mut unknown))
            .collect::<Result<Vec<_>>>()?;
        let silver_ex = silver.iter().map(|r| Example::from_record(r, &self.vocab)).collect();
        Ok((gold_ex, silver_ex))
    }

    pub fn predict(&self, tokens: &[String], head: Head, ties: TiePolicy, with_labels: bool) -> Result<Tree> {
        predict_tree(self, tokens, head, ties, with_labels)
    }
}

/// Runs the network and decodes the requested head. With `with_labels` and a
/// label head present, every internal node gets the highest-scoring label.
pub fn predict_tree(model: &Model, tokens: &[String], head: Head, ties: TiePolicy, with_labels: bool) -> Result<Tree> {
    if tokens.is_empty() {
        return Err(Error::Empty("cannot parse an empty sentence".into()));
    }
    if tokens.len() == 1 {
        return Ok(Tree::Leaf(tokens[0].clone()));
    }
    let act = forward(&model.params, &model.vocab.ids(tokens));
    let tree = match head {
        Head::Dl => dl_to_tree(&act.dl, tokens, ties)?,
        Head::Dg => dg_to_tree(&act.dg, tokens, ties)?,
    };
    if with_labels && model.params.dims.labels > 0 {
        Ok(annotate(&tree, 0, model, &act))
    } else {
        Ok(tree)
    }
}

fn annotate(t: &Tree, start: usize, model: &Model, act: &super::Activations) -> Tree {
    match t {
        Tree::Leaf(tok) => Tree::Leaf(tok.clone()),
        Tree::Node { children, .. } => {
            let end = start + t.leaf_count();
            let logits = label_logits(&model.params, act, start, end);
            let best = logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            let mut off = start;
            let kids = children
                .iter()
                .map(|c| {
                    let k = annotate(c, off, model, act);
                    off += c.leaf_count();
                    k
                })
                .collect();
            Tree::Node {
                label: Some(model.labels.label(best).to_owned()),
                children: kids,
            }
        }
    }
}
