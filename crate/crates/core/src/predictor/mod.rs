//! The distance predictor.
//!
//! Word embeddings feed a causal convolution over the current word and the
//! `window` words before it, giving one hidden state per word. Two heads sit
//! on top of the hidden states:
//!
//! * a linear head producing one gap distance per adjacent-word gap, read at
//!   the right word of the gap;
//! * a second causal convolution (same kernel width) producing one latent
//!   distance per word.
//!
//! A third, optional head classifies constituent labels from the mean hidden
//! state over a span. Both distance heads are trained with a pairwise hinge
//! ranking loss; gradients are computed by hand in [`backprop`].

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::{DistanceRecord, LatentDistances, GapDistances};
use crate::error::{Error, Result};
use crate::metrics::{brackets, EvalOptions};
use crate::treebank::Tree;

mod io;
mod train;

pub use io::{load_model, save_model, MODEL_FORMAT_VERSION};
pub use train::{parse_config, predict_tree, train, Head, TrainOutcome, TrainingConfig};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const UNK_LABEL: &str = "<unk-label>";

/// Token ids; `<pad>` is 0 and `<unk>` is 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    pub const PAD_ID: usize = 0;
    pub const UNK_ID: usize = 1;

    pub fn new() -> Self {
        Self::from_list(vec![PAD.to_owned(), UNK.to_owned()])
    }

    fn from_list(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }

    /// Vocabulary over every token in `sentences`, in first-seen order.
    pub fn build<'a, I, S>(sentences: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = &'a str>,
    {
        let mut v = Vocab::new();
        for s in sentences {
            for tok in s {
                v.add(tok);
            }
        }
        v
    }

    pub fn add(&mut self, tok: &str) -> usize {
        if let Some(&id) = self.index.get(tok) {
            return id;
        }
        self.tokens.push(tok.to_owned());
        self.index.insert(tok.to_owned(), self.tokens.len() - 1);
        self.tokens.len() - 1
    }

    pub fn id(&self, tok: &str) -> usize {
        self.index.get(tok).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn ids<S: AsRef<str>>(&self, toks: &[S]) -> Vec<usize> {
        toks.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub(crate) fn reindex(&mut self) {
        *self = Self::from_list(std::mem::take(&mut self.tokens));
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

/// Constituent labels; id 0 is `<unk-label>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelVocab {
    labels: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl LabelVocab {
    pub const UNK_ID: usize = 0;

    pub fn new() -> Self {
        Self::from_list(vec![UNK_LABEL.to_owned()])
    }

    fn from_list(labels: Vec<String>) -> Self {
        let index = labels.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        LabelVocab { labels, index }
    }

    /// Base labels (binarization marks removed) of every bracket in `trees`.
    pub fn build<'a>(trees: impl IntoIterator<Item = &'a Tree>) -> Self {
        let mut v = LabelVocab::new();
        let opts = EvalOptions {
            include_full_span: true,
            labeled: true,
        };
        for t in trees {
            for span in brackets(t, opts).spans {
                if let Some(l) = span.label {
                    if !v.index.contains_key(&l) {
                        v.labels.push(l.clone());
                        v.index.insert(l, v.labels.len() - 1);
                    }
                }
            }
        }
        v
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub(crate) fn reindex(&mut self) {
        *self = Self::from_list(std::mem::take(&mut self.labels));
    }
}

impl Default for LabelVocab {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    /// Number of preceding words each convolution sees.
    pub window: usize,
    pub labels: usize,
}

impl Dims {
    pub fn kernel(&self) -> usize {
        self.window + 1
    }
}

/// All trainable weights. Matrices are row-major. Gradients use the same
/// shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub dims: Dims,
    /// vocab × embed
    pub embed: Vec<f64>,
    /// hidden × (kernel · embed); column block `k` multiplies word `i - window + k`.
    pub conv_w: Vec<f64>,
    pub conv_b: Vec<f64>,
    /// kernel · hidden
    pub dl_w: Vec<f64>,
    pub dl_b: f64,
    /// hidden
    pub dg_w: Vec<f64>,
    pub dg_b: f64,
    /// labels × hidden
    pub label_w: Vec<f64>,
    pub label_b: Vec<f64>,
}

pub const BLOCK_NAMES: [&str; 9] = [
    "embed", "conv_w", "conv_b", "dl_w", "dl_b", "dg_w", "dg_b", "label_w", "label_b",
];

impl Params {
    pub fn zeros(dims: Dims) -> Self {
        let k = dims.kernel();
        Params {
            dims,
            embed: vec![0.0; dims.vocab * dims.embed],
            conv_w: vec![0.0; dims.hidden * k * dims.embed],
            conv_b: vec![0.0; dims.hidden],
            dl_w: vec![0.0; k * dims.hidden],
            dl_b: 0.0,
            dg_w: vec![0.0; dims.hidden],
            dg_b: 0.0,
            label_w: vec![0.0; dims.labels * dims.hidden],
            label_b: vec![0.0; dims.labels],
        }
    }

    /// Uniform fan-in scaled initialization. Distance-head biases start at 1
    /// so the output ReLUs are active.
    pub fn init<R: Rng>(dims: Dims, rng: &mut R) -> Self {
        let mut p = Params::zeros(dims);
        let mut fill = |v: &mut [f64], scale: f64| {
            v.iter_mut().for_each(|x| *x = rng.gen_range(-scale..scale));
        };
        fill(&mut p.embed, 1.0);
        fill(&mut p.conv_w, 1.0 / ((dims.kernel() * dims.embed) as f64).sqrt());
        fill(&mut p.dl_w, 1.0 / ((dims.kernel() * dims.hidden) as f64).sqrt());
        fill(&mut p.dg_w, 1.0 / (dims.hidden as f64).sqrt());
        fill(&mut p.label_w, 1.0 / (dims.hidden as f64).sqrt());
        p.conv_b.iter_mut().for_each(|b| *b = 0.01);
        p.dl_b = 1.0;
        p.dg_b = 1.0;
        p
    }

    pub fn zeros_like(&self) -> Self {
        Params::zeros(self.dims)
    }

    /// Parameter blocks in [`BLOCK_NAMES`] order.
    pub fn blocks(&self) -> [&[f64]; 9] {
        [
            &self.embed,
            &self.conv_w,
            &self.conv_b,
            &self.dl_w,
            std::slice::from_ref(&self.dl_b),
            &self.dg_w,
            std::slice::from_ref(&self.dg_b),
            &self.label_w,
            &self.label_b,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 9] {
        [
            &mut self.embed,
            &mut self.conv_w,
            &mut self.conv_b,
            &mut self.dl_w,
            std::slice::from_mut(&mut self.dl_b),
            &mut self.dg_w,
            std::slice::from_mut(&mut self.dg_b),
            &mut self.label_w,
            &mut self.label_b,
        ]
    }

    /// `self += scale * other`, block by block.
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += scale * s);
        }
    }

    /// Name of the first block holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.blocks()
            .iter()
            .zip(BLOCK_NAMES)
            .find(|(b, _)| b.iter().any(|x| !x.is_finite()))
            .map(|(_, name)| name)
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.first_non_finite() {
            None => Ok(()),
            Some(block) => Err(Error::NonFinite(format!("{what} block '{block}'"))),
        }
    }

    fn emb(&self, id: usize) -> &[f64] {
        let e = self.dims.embed;
        &self.embed[id * e..(id + 1) * e]
    }
}

/// A trained predictor with its vocabularies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub vocab: Vocab,
    pub labels: LabelVocab,
    pub params: Params,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct Activations {
    pub ids: Vec<usize>,
    /// n × hidden, before ReLU
    pub conv_pre: Vec<f64>,
    /// n × hidden
    pub h: Vec<f64>,
    pub dl_pre: Vec<f64>,
    pub dl: Vec<f64>,
    pub dg_pre: Vec<f64>,
    pub dg: Vec<f64>,
}

impl Activations {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn hidden(&self, i: usize, width: usize) -> &[f64] {
        &self.h[i * width..(i + 1) * width]
    }

    pub fn latent(&self) -> LatentDistances {
        LatentDistances(self.dl.clone())
    }

    pub fn gaps(&self) -> GapDistances {
        GapDistances(self.dg.clone())
    }
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

// Eight independent partial sums let the compiler vectorize the loop.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0; 8];
    let (ca, ra) = a.split_at(a.len() - a.len() % 8);
    let (cb, rb) = b.split_at(ca.len());
    for (x, y) in ca.chunks_exact(8).zip(cb.chunks_exact(8)) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    acc.iter().sum::<f64>() + tail
}

// Word index feeding kernel slot `k` at position `i`, if inside the sentence.
fn source(i: usize, k: usize, window: usize) -> Option<usize> {
    (i + k).checked_sub(window)
}

/// Runs the network over token ids. Positions before the sentence read the
/// `<pad>` embedding in the first convolution and zero hidden states in the
/// second.
pub fn forward(p: &Params, ids: &[usize]) -> Activations {
    let Dims {
        embed: e,
        hidden: hd,
        window,
        ..
    } = p.dims;
    let kernel = p.dims.kernel();
    let n = ids.len();
    let row = kernel * e;

    let mut x = vec![0.0; row];
    let mut conv_pre = vec![0.0; n * hd];
    for i in 0..n {
        for k in 0..kernel {
            let id = source(i, k, window).map_or(Vocab::PAD_ID, |j| ids[j]);
            x[k * e..(k + 1) * e].copy_from_slice(p.emb(id));
        }
        for r in 0..hd {
            conv_pre[i * hd + r] = p.conv_b[r] + dot(&p.conv_w[r * row..(r + 1) * row], &x);
        }
    }
    let h: Vec<f64> = conv_pre.iter().copied().map(relu).collect();

    let mut dl_pre = vec![0.0; n];
    for (i, out) in dl_pre.iter_mut().enumerate() {
        let mut z = p.dl_b;
        for k in 0..kernel {
            if let Some(j) = source(i, k, window) {
                z += dot(&p.dl_w[k * hd..(k + 1) * hd], &h[j * hd..(j + 1) * hd]);
            }
        }
        *out = z;
    }
    let dg_pre: Vec<f64> = (1..n)
        .map(|i| p.dg_b + dot(&p.dg_w, &h[i * hd..(i + 1) * hd]))
        .collect();

    Activations {
        ids: ids.to_vec(),
        dl: dl_pre.iter().copied().map(relu).collect(),
        dg: dg_pre.iter().copied().map(relu).collect(),
        conv_pre,
        h,
        dl_pre,
        dg_pre,
    }
}

/// Pairwise hinge ranking loss averaged over pairs with distinct gold values.
pub fn rank_loss(pred: &[f64], gold: &[f64]) -> Result<f64> {
    rank_loss_and_grad(pred, gold, None)
}

fn rank_loss_and_grad(pred: &[f64], gold: &[f64], mut grad: Option<&mut [f64]>) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predictions for {} gold distances",
            pred.len(),
            gold.len()
        )));
    }
    let n = pred.len();
    let pairs = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| gold[i] != gold[j])
        .count();
    if pairs == 0 {
        return Ok(0.0);
    }
    let norm = pairs as f64;
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            if gold[i] == gold[j] {
                continue;
            }
            let s = if gold[i] > gold[j] { 1.0 } else { -1.0 };
            let margin = 1.0 - s * (pred[i] - pred[j]);
            if margin > 0.0 {
                total += margin;
                if let Some(g) = grad.as_deref_mut() {
                    g[i] -= s / norm;
                    g[j] += s / norm;
                }
            }
        }
    }
    Ok(total / norm)
}

/// A training sentence: token ids, gold distances and optional labeled
/// constituents `(start, end, label id)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub ids: Vec<usize>,
    pub dl: Vec<f64>,
    pub dg: Vec<f64>,
    pub spans: Vec<(usize, usize, usize)>,
}

impl Example {
    pub fn from_record(rec: &DistanceRecord, vocab: &Vocab) -> Self {
        Example {
            ids: vocab.ids(&rec.tokens),
            dl: rec.dl.0.clone(),
            dg: rec.dg.0.clone(),
            spans: Vec::new(),
        }
    }

    /// Builds an example from a binary gold tree. Labels missing from
    /// `labels` map to `<unk-label>` and are counted in `unknown_labels`.
    pub fn from_tree(
        t: &Tree,
        vocab: &Vocab,
        labels: Option<&LabelVocab>,
        max_depth: u32,
        unknown_labels: &mut usize,
    ) -> Result<Self> {
        let rec = DistanceRecord::from_tree(t, max_depth, None)?;
        let mut ex = Example::from_record(&rec, vocab);
        if let Some(lv) = labels {
            let opts = EvalOptions {
                include_full_span: true,
                labeled: true,
            };
            for span in brackets(t, opts).spans {
                if let Some(l) = span.label {
                    let id = lv.id(&l).unwrap_or_else(|| {
                        *unknown_labels += 1;
                        LabelVocab::UNK_ID
                    });
                    ex.spans.push((span.start, span.end, id));
                }
            }
        }
        Ok(ex)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// `alpha · L(gap) + (1 − alpha) · L(latent)`.
pub fn distance_loss(p: &Params, ex: &Example, alpha: f64) -> Result<f64> {
    let act = forward(p, &ex.ids);
    combine(alpha, rank_loss(&act.dg, &ex.dg)?, rank_loss(&act.dl, &ex.dl)?)
}

fn combine(alpha: f64, gap: f64, latent: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(alpha * gap + (1.0 - alpha) * latent)
}

fn span_mean(act: &Activations, hd: usize, start: usize, end: usize) -> Vec<f64> {
    let mut m = vec![0.0; hd];
    for t in start..end {
        m.iter_mut().zip(act.hidden(t, hd)).for_each(|(a, b)| *a += b);
    }
    let w = (end - start) as f64;
    m.iter_mut().for_each(|a| *a /= w);
    m
}

/// Label scores for the span `[start, end)`.
pub fn label_logits(p: &Params, act: &Activations, start: usize, end: usize) -> Vec<f64> {
    let hd = p.dims.hidden;
    let m = span_mean(act, hd, start, end);
    (0..p.dims.labels)
        .map(|c| p.label_b[c] + dot(&p.label_w[c * hd..(c + 1) * hd], &m))
        .collect()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mean cross-entropy of the label head over the example's constituents.
pub fn label_loss(p: &Params, ex: &Example) -> Result<f64> {
    let act = forward(p, &ex.ids);
    label_loss_from(p, ex, &act)
}

fn label_loss_from(p: &Params, ex: &Example, act: &Activations) -> Result<f64> {
    if ex.spans.is_empty() {
        return Ok(0.0);
    }
    if p.dims.labels == 0 {
        return Err(Error::Config("model has no label head".into()));
    }
    let mut total = 0.0;
    for &(s, e, lab) in &ex.spans {
        let probs = softmax(&label_logits(p, act, s, e));
        total -= probs[lab].ln();
    }
    Ok(total / ex.spans.len() as f64)
}

/// Loss weights for one example.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    /// Multiplier on the label loss; 0 disables it.
    pub label: f64,
}

impl LossWeights {
    pub fn distance_only(alpha: f64) -> Self {
        LossWeights { alpha, label: 0.0 }
    }
}

/// Total loss of one example.
pub fn example_loss(p: &Params, ex: &Example, w: LossWeights) -> Result<f64> {
    let act = forward(p, &ex.ids);
    let mut loss = combine(w.alpha, rank_loss(&act.dg, &ex.dg)?, rank_loss(&act.dl, &ex.dl)?)?;
    if w.label != 0.0 {
        loss += w.label * label_loss_from(p, ex, &act)?;
    }
    Ok(loss)
}

/// Loss and exact gradient of one example.
pub fn backprop(p: &Params, ex: &Example, w: LossWeights) -> Result<(f64, Params)> {
    let Dims {
        embed: e,
        hidden: hd,
        window,
        labels,
        ..
    } = p.dims;
    let kernel = p.dims.kernel();
    let row = kernel * e;
    let n = ex.len();
    let act = forward(p, &ex.ids);
    let mut g = p.zeros_like();

    let mut d_dg = vec![0.0; act.dg.len()];
    let mut d_dl = vec![0.0; n];
    let gap_loss = rank_loss_and_grad(&act.dg, &ex.dg, Some(&mut d_dg))?;
    let latent_loss = rank_loss_and_grad(&act.dl, &ex.dl, Some(&mut d_dl))?;
    let mut loss = combine(w.alpha, gap_loss, latent_loss)?;
    d_dg.iter_mut().for_each(|d| *d *= w.alpha);
    d_dl.iter_mut().for_each(|d| *d *= 1.0 - w.alpha);

    let mut dh = vec![0.0; n * hd];

    if w.label != 0.0 && !ex.spans.is_empty() {
        if labels == 0 {
            return Err(Error::Config("model has no label head".into()));
        }
        let scale = w.label / ex.spans.len() as f64;
        let mut ce = 0.0;
        for &(s, end, lab) in &ex.spans {
            let m = span_mean(&act, hd, s, end);
            let logits: Vec<f64> = (0..labels)
                .map(|c| p.label_b[c] + dot(&p.label_w[c * hd..(c + 1) * hd], &m))
                .collect();
            let probs = softmax(&logits);
            ce -= probs[lab].ln();
            let mut dm = vec![0.0; hd];
            for c in 0..labels {
                let dz = scale * (probs[c] - if c == lab { 1.0 } else { 0.0 });
                g.label_b[c] += dz;
                let wrow = &p.label_w[c * hd..(c + 1) * hd];
                let grow = &mut g.label_w[c * hd..(c + 1) * hd];
                for j in 0..hd {
                    grow[j] += dz * m[j];
                    dm[j] += dz * wrow[j];
                }
            }
            let width = (end - s) as f64;
            for t in s..end {
                dh[t * hd..(t + 1) * hd]
                    .iter_mut()
                    .zip(&dm)
                    .for_each(|(a, b)| *a += b / width);
            }
        }
        loss += w.label * ce / ex.spans.len() as f64;
    }

    // Gap head, read at the right word of each gap.
    for (gi, (&d, &z)) in d_dg.iter().zip(&act.dg_pre).enumerate() {
        if d == 0.0 || z <= 0.0 {
            continue;
        }
        let i = gi + 1;
        g.dg_b += d;
        let hi = act.hidden(i, hd);
        for j in 0..hd {
            g.dg_w[j] += d * hi[j];
            dh[i * hd + j] += d * p.dg_w[j];
        }
    }

    // Latent head: second convolution over hidden states.
    for i in 0..n {
        let d = d_dl[i];
        if d == 0.0 || act.dl_pre[i] <= 0.0 {
            continue;
        }
        g.dl_b += d;
        for k in 0..kernel {
            if let Some(src) = source(i, k, window) {
                let hs = act.hidden(src, hd);
                for j in 0..hd {
                    g.dl_w[k * hd + j] += d * hs[j];
                    dh[src * hd + j] += d * p.dl_w[k * hd + j];
                }
            }
        }
    }

    // First convolution and embeddings.
    let mut x = vec![0.0; row];
    let mut dx = vec![0.0; row];
    for i in 0..n {
        let mut any = false;
        for k in 0..kernel {
            let id = source(i, k, window).map_or(Vocab::PAD_ID, |j| ex.ids[j]);
            x[k * e..(k + 1) * e].copy_from_slice(p.emb(id));
        }
        dx.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..hd {
            let idx = i * hd + r;
            if act.conv_pre[idx] <= 0.0 || dh[idx] == 0.0 {
                continue;
            }
            any = true;
            let d = dh[idx];
            g.conv_b[r] += d;
            let wrow = &p.conv_w[r * row..(r + 1) * row];
            let grow = &mut g.conv_w[r * row..(r + 1) * row];
            for c in 0..row {
                grow[c] += d * x[c];
                dx[c] += d * wrow[c];
            }
        }
        if !any {
            continue;
        }
        for k in 0..kernel {
            let id = source(i, k, window).map_or(Vocab::PAD_ID, |j| ex.ids[j]);
            g.embed[id * e..(id + 1) * e]
                .iter_mut()
                .zip(&dx[k * e..(k + 1) * e])
                .for_each(|(a, b)| *a += b);
        }
    }

    Ok((loss, g))
}

/// Mean loss and gradient over a batch. Per-example gradients may be computed
/// in parallel; they are summed in batch order, so the result does not
/// depend on scheduling.
pub fn gradients(p: &Params, batch: &[Example], w: LossWeights) -> Result<(f64, Params)> {
    if batch.is_empty() {
        return Err(Error::Empty("empty batch".into()));
    }
    let parts: Vec<(f64, Params)> = batch
        .par_iter()
        .map(|ex| backprop(p, ex, w))
        .collect::<Result<_>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut total = p.zeros_like();
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        total.add_scaled(g, scale);
    }
    total.check_finite("gradient")?;
    Ok((loss * scale, total))
}

/// Smallest distance from a ReLU or hinge kink over one example's forward
/// pass. Finite differences are only meaningful when this is comfortably
/// larger than the perturbation.
pub fn kink_distance(p: &Params, ex: &Example) -> f64 {
    let act = forward(p, &ex.ids);
    let mut min = f64::INFINITY;
    for v in act.conv_pre.iter().chain(&act.dl_pre).chain(&act.dg_pre) {
        min = min.min(v.abs());
    }
    for (pred, gold) in [(&act.dl, &ex.dl), (&act.dg, &ex.dg)] {
        for i in 0..pred.len() {
            for j in i + 1..pred.len() {
                if gold[i] != gold[j] {
                    let s = if gold[i] > gold[j] { 1.0 } else { -1.0 };
                    min = min.min((1.0 - s * (pred[i] - pred[j])).abs());
                }
            }
        }
    }
    min
}
