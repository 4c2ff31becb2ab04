//! A small log-bilinear language model with a learned output-embedding switch.
//!
//! The base model predicts the next token from a fixed window of previous
//! tokens:
//!
//! ```text
//! h        = tanh(C · mean(E_in[ctx]))
//! logit[v] = h · E_out[v] + b[v]
//! ```
//!
//! The switch is a `d × d` matrix `W` applied to output embeddings and scaled
//! by a scalar `ε`: `E_out[v] ↦ (I + εW) E_out[v]`. With the base frozen, `W`
//! is fit so that texts of each stance are likely at that stance's ε. Scoring a
//! text means evaluating its likelihood at each stance's ε and taking the best.
//!
//! Matrices are stored row-major in flat `Vec<f64>`s.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::StanceLabel;
use crate::tokenize::tokenize;

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
const RESERVED: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum LmError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("vocabulary has {0} tokens; at least 4 are required")]
    VocabularyTooSmall(usize),
    #[error("text has no tokens")]
    EmptyText,
    #[error("text has no in-vocabulary tokens")]
    OutOfVocabulary,
    #[error("no labeled examples")]
    NoLabeledExamples,
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
}

/// ε assigned to each stance by default: Left −1, LeanLeft −0.5, Neutral 0,
/// LeanRight +0.5, Right +1.
pub fn default_epsilon(label: StanceLabel) -> f64 {
    match label {
        StanceLabel::Left => -1.0,
        StanceLabel::LeanLeft => -0.5,
        StanceLabel::Neutral => 0.0,
        StanceLabel::LeanRight => 0.5,
        StanceLabel::Right => 1.0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Reserved tokens followed by `tokens` (deduplicated, in the given order).
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self, LmError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = vec![UNK.into(), BOS.into(), EOS.into()];
        for t in tokens {
            let t = t.into();
            if !all.contains(&t) {
                all.push(t);
            }
        }
        Self::from_list(all)
    }

    /// Takes a full token list that must start with the reserved tokens.
    pub fn from_list(tokens: Vec<String>) -> Result<Self, LmError> {
        if tokens.len() < RESERVED || tokens[UNK_ID] != UNK || tokens[BOS_ID] != BOS || tokens[EOS_ID] != EOS {
            return Err(LmError::InvalidModel(
                "vocabulary must start with <unk>, <bos>, <eos>".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(LmError::InvalidModel(format!("duplicate vocabulary token \"{t}\"")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    /// Tokens seen at least `min_count` times, sorted lexicographically after the reserved ones.
    pub fn build<S: AsRef<str>>(texts: &[S], min_count: usize) -> Result<Self, LmError> {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            for tok in tokenize(t.as_ref()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let kept = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count.max(1) && ![UNK, BOS, EOS].contains(&t.as_str()))
            .map(|(t, _)| t);
        Self::from_tokens(kept)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Token ids, out-of-vocabulary tokens mapped to `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text)
            .iter()
            .map(|t| self.id(t).unwrap_or(UNK_ID))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseTrainConfig {
    pub dim: usize,
    pub window: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub min_count: usize,
    pub seed: u64,
}

impl Default for BaseTrainConfig {
    fn default() -> Self {
        BaseTrainConfig {
            dim: 32,
            window: 3,
            epochs: 20,
            lr: 0.1,
            batch_size: 16,
            min_count: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SwitchTrainConfig {
    fn default() -> Self {
        SwitchTrainConfig {
            epochs: 200,
            lr: 0.1,
            seed: 0,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// The frozen base model.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseLM {
    vocab: Vocabulary,
    dim: usize,
    window: usize,
    e_in: Vec<f64>,
    e_out: Vec<f64>,
    context: Vec<f64>,
    bias: Vec<f64>,
}

/// Context activations for one position.
#[derive(Debug, Clone)]
struct Hidden {
    x: Vec<f64>,
    h: Vec<f64>,
}

impl BaseLM {
    /// Assembles a model from parameter matrices (row-major `Vec<Vec<f64>>`).
    pub fn from_parts(
        vocab: Vocabulary,
        window: usize,
        e_in: Vec<Vec<f64>>,
        e_out: Vec<Vec<f64>>,
        context: Vec<Vec<f64>>,
        bias: Vec<f64>,
    ) -> Result<Self, LmError> {
        let v = vocab.len();
        let dim = context.len();
        if dim == 0 || window == 0 {
            return Err(LmError::InvalidModel("dimension and window must be positive".into()));
        }
        let check = |name: &str, m: &[Vec<f64>], rows: usize, cols: usize| -> Result<Vec<f64>, LmError> {
            if m.len() != rows || m.iter().any(|r| r.len() != cols) {
                return Err(LmError::InvalidModel(format!("{name} must be {rows}x{cols}")));
            }
            let flat: Vec<f64> = m.iter().flatten().copied().collect();
            if flat.iter().any(|x| !x.is_finite()) {
                return Err(LmError::InvalidModel(format!("{name} has non-finite entries")));
            }
            Ok(flat)
        };
        let e_in = check("E_in", &e_in, v, dim)?;
        let e_out = check("E_out", &e_out, v, dim)?;
        let context = check("C", &context, dim, dim)?;
        let bias = check("b", &[bias], 1, v)?;
        Ok(BaseLM {
            vocab,
            dim,
            window,
            e_in,
            e_out,
            context,
            bias,
        })
    }

    /// Randomly initialized, untrained model.
    pub fn init(vocab: Vocabulary, dim: usize, window: usize, seed: u64) -> Self {
        let v = vocab.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |n: usize, scale: f64| -> Vec<f64> {
            (0..n).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale).collect()
        };
        let e_in = uniform(v * dim, 1.0);
        let context = uniform(dim * dim, (3.0 / dim as f64).sqrt());
        let e_out = uniform(v * dim, 0.1);
        BaseLM {
            vocab,
            dim,
            window,
            e_in,
            e_out,
            context,
            bias: vec![0.0; v],
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn window(&self) -> usize {
        self.window
    }

    fn rows(flat: &[f64], cols: usize) -> Vec<Vec<f64>> {
        flat.chunks(cols).map(<[f64]>::to_vec).collect()
    }

    pub fn input_embeddings(&self) -> Vec<Vec<f64>> {
        Self::rows(&self.e_in, self.dim)
    }

    pub fn output_embeddings(&self) -> Vec<Vec<f64>> {
        Self::rows(&self.e_out, self.dim)
    }

    pub fn context_matrix(&self) -> Vec<Vec<f64>> {
        Self::rows(&self.context, self.dim)
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn out_row(&self, v: usize) -> &[f64] {
        &self.e_out[v * self.dim..(v + 1) * self.dim]
    }

    /// The `window` ids preceding position `history.len()`, left-padded with `<bos>`.
    pub fn context_ids(&self, history: &[usize]) -> Vec<usize> {
        let w = self.window;
        let mut ctx = vec![BOS_ID; w.saturating_sub(history.len())];
        ctx.extend_from_slice(&history[history.len().saturating_sub(w)..]);
        ctx
    }

    fn hidden(&self, ctx: &[usize]) -> Hidden {
        let d = self.dim;
        let mut x = vec![0.0; d];
        for &t in ctx {
            for (xi, e) in x.iter_mut().zip(&self.e_in[t * d..(t + 1) * d]) {
                *xi += e;
            }
        }
        let n = ctx.len() as f64;
        x.iter_mut().for_each(|xi| *xi /= n);
        let h = (0..d)
            .map(|i| dot(&self.context[i * d..(i + 1) * d], &x).tanh())
            .collect();
        Hidden { x, h }
    }

    fn logits_from_hidden(&self, h: &[f64]) -> Vec<f64> {
        (0..self.vocab.len())
            .map(|v| dot(h, self.out_row(v)) + self.bias[v])
            .collect()
    }

    /// Base logits for the next token after `history`.
    pub fn logits(&self, history: &[usize]) -> Vec<f64> {
        let hid = self.hidden(&self.context_ids(history));
        self.logits_from_hidden(&hid.h)
    }

    pub fn next_token_distribution(&self, history: &[usize]) -> Vec<f64> {
        softmax(&self.logits(history))
    }

    /// Average per-position log-probability of `text` followed by `<eos>`.
    pub fn log_likelihood(&self, text: &str) -> Result<f64, LmError> {
        let tokens = self.vocab.encode(text);
        if tokens.is_empty() {
            return Err(LmError::EmptyText);
        }
        Ok(self.sequence_log_likelihood(&tokens))
    }

    fn sequence_log_likelihood(&self, tokens: &[usize]) -> f64 {
        let mut total = 0.0;
        for (i, target) in targets(tokens).enumerate() {
            total += log_softmax(&self.logits(&tokens[..i]))[target];
        }
        total / (tokens.len() + 1) as f64
    }

    /// Samples from the base model; see [`SwitchedLM::generate`].
    pub fn generate(&self, prompt: &str, length: usize, seed: u64, temperature: f64) -> String {
        let history = self.vocab.encode(prompt);
        let ids = sample_sequence(history, length, seed, temperature, |h| self.logits(h));
        self.decode(&ids)
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.vocab.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Mean NLL over all positions of `data`.
    pub fn dataset_loss(&self, data: &[Vec<usize>]) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for tokens in data {
            for (i, target) in targets(tokens).enumerate() {
                total -= log_softmax(&self.logits(&tokens[..i]))[target];
                count += 1;
            }
        }
        total / count.max(1) as f64
    }
}

/// Prediction targets of a sequence: its tokens followed by `<eos>`.
fn targets(tokens: &[usize]) -> impl Iterator<Item = usize> + '_ {
    tokens.iter().copied().chain(std::iter::once(EOS_ID))
}

/// Gradient of the mean NLL over a set of positions w.r.t. all base parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseGradient {
    pub e_in: Vec<f64>,
    pub e_out: Vec<f64>,
    pub context: Vec<f64>,
    pub bias: Vec<f64>,
}

/// (sequence index, position) pairs addressing a prediction.
type Position = (usize, usize);

fn all_positions(data: &[Vec<usize>]) -> Vec<Position> {
    data.iter()
        .enumerate()
        .flat_map(|(s, toks)| (0..=toks.len()).map(move |i| (s, i)))
        .collect()
}

fn target_at(tokens: &[usize], i: usize) -> usize {
    tokens.get(i).copied().unwrap_or(EOS_ID)
}

/// Mean NLL and its gradient over `positions`.
pub fn base_loss_and_gradient(model: &BaseLM, data: &[Vec<usize>], positions: &[(usize, usize)]) -> (f64, BaseGradient) {
    let d = model.dim;
    let v = model.vocab.len();
    let mut g = BaseGradient {
        e_in: vec![0.0; v * d],
        e_out: vec![0.0; v * d],
        context: vec![0.0; d * d],
        bias: vec![0.0; v],
    };
    let mut loss = 0.0;
    let scale = 1.0 / positions.len().max(1) as f64;
    for &(s, i) in positions {
        let tokens = &data[s];
        let target = target_at(tokens, i);
        let ctx = model.context_ids(&tokens[..i]);
        let hid = model.hidden(&ctx);
        let logits = model.logits_from_hidden(&hid.h);
        let mut p = softmax(&logits);
        loss -= log_softmax(&logits)[target];
        p[target] -= 1.0;
        let mut dh = vec![0.0; d];
        for (u, &gu) in p.iter().enumerate() {
            let gu = gu * scale;
            g.bias[u] += gu;
            let row = model.out_row(u);
            for k in 0..d {
                g.e_out[u * d + k] += gu * hid.h[k];
                dh[k] += gu * row[k];
            }
        }
        let dz: Vec<f64> = dh.iter().zip(&hid.h).map(|(g, h)| g * (1.0 - h * h)).collect();
        let mut dx = vec![0.0; d];
        for r in 0..d {
            for c in 0..d {
                g.context[r * d + c] += dz[r] * hid.x[c];
                dx[c] += model.context[r * d + c] * dz[r];
            }
        }
        let share = 1.0 / ctx.len() as f64;
        for &t in &ctx {
            for k in 0..d {
                g.e_in[t * d + k] += dx[k] * share;
            }
        }
    }
    (loss * scale, g)
}

fn apply_base_step(model: &mut BaseLM, g: &BaseGradient, lr: f64) {
    let step = |p: &mut [f64], g: &[f64]| p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
    step(&mut model.e_in, &g.e_in);
    step(&mut model.e_out, &g.e_out);
    step(&mut model.context, &g.context);
    step(&mut model.bias, &g.bias);
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Loss before training, then after each accepted or rejected epoch.
    pub loss_history: Vec<f64>,
    /// Learning rate in effect at the end.
    pub final_lr: f64,
    pub warnings: Vec<String>,
}

/// Trains the base model by mini-batch gradient descent with seeded shuffling.
///
/// An epoch that raises the full-data loss is rolled back and the learning
/// rate halved, so the recorded loss never increases.
pub fn train_base_lm<S: AsRef<str>>(texts: &[S], config: BaseTrainConfig) -> Result<(BaseLM, TrainReport), LmError> {
    let texts: Vec<&str> = texts
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| !tokenize(t).is_empty())
        .collect();
    if texts.is_empty() {
        return Err(LmError::EmptyCorpus);
    }
    if config.dim == 0 || config.window == 0 || config.batch_size == 0 || !(config.lr > 0.0) {
        return Err(LmError::InvalidArgument(
            "dim, window, batch_size and lr must be positive".into(),
        ));
    }
    let vocab = Vocabulary::build(&texts, config.min_count)?;
    if vocab.len() < 4 {
        return Err(LmError::VocabularyTooSmall(vocab.len()));
    }
    let data: Vec<Vec<usize>> = texts.iter().map(|t| vocab.encode(t)).collect();
    let mut model = BaseLM::init(vocab, config.dim, config.window, config.seed);
    let report = fit_base(&mut model, &data, config)?;
    Ok((model, report))
}

/// Continues training `model` on already-encoded sequences.
pub fn fit_base(model: &mut BaseLM, data: &[Vec<usize>], config: BaseTrainConfig) -> Result<TrainReport, LmError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_ba5e);
    let mut positions = all_positions(data);
    let mut lr = config.lr;
    let mut loss = model.dataset_loss(data);
    let mut history = vec![loss];
    for _ in 0..config.epochs {
        positions.shuffle(&mut rng);
        let snapshot = model.clone();
        for batch in positions.chunks(config.batch_size) {
            let (_, g) = base_loss_and_gradient(model, data, batch);
            apply_base_step(model, &g, lr);
        }
        let new_loss = model.dataset_loss(data);
        if new_loss.is_finite() && new_loss <= loss {
            loss = new_loss;
        } else {
            *model = snapshot;
            lr *= 0.5;
        }
        history.push(loss);
    }
    Ok(TrainReport {
        loss_history: history,
        final_lr: lr,
        warnings: Vec::new(),
    })
}

/// ε per stance label, strictly increasing from Left to Right.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonMap([f64; 5]);

impl Default for EpsilonMap {
    fn default() -> Self {
        EpsilonMap(StanceLabel::ALL.map(default_epsilon))
    }
}

impl EpsilonMap {
    pub fn new(values: [f64; 5]) -> Result<Self, LmError> {
        if values.iter().any(|v| !v.is_finite()) || values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LmError::InvalidModel(
                "epsilon_map must be finite and strictly increasing from left to right".into(),
            ));
        }
        Ok(EpsilonMap(values))
    }

    pub fn get(&self, label: StanceLabel) -> f64 {
        self.0[label.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (StanceLabel, f64)> + '_ {
        StanceLabel::ALL.into_iter().map(|l| (l, self.get(l)))
    }
}

impl Serialize for EpsilonMap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let map: BTreeMap<StanceLabel, f64> = self.iter().collect();
        map.serialize(s)
    }
}

impl<'de> Deserialize<'de> for EpsilonMap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let map: BTreeMap<StanceLabel, f64> = BTreeMap::deserialize(d)?;
        let mut values = [0.0; 5];
        for label in StanceLabel::ALL {
            values[label.index()] = *map
                .get(&label)
                .ok_or_else(|| serde::de::Error::custom(format!("epsilon_map is missing \"{label}\"")))?;
        }
        EpsilonMap::new(values).map_err(serde::de::Error::custom)
    }
}

/// Base model plus switch matrix `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchedLM {
    base: BaseLM,
    switch: Vec<f64>,
    epsilon_map: EpsilonMap,
}

/// Stance prediction with the average log-likelihood at each stance's ε.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StanceScore {
    pub label: StanceLabel,
    pub scores: BTreeMap<StanceLabel, f64>,
}

/// Tie preference: Neutral first, then outward.
const TIE_ORDER: [StanceLabel; 5] = [
    StanceLabel::Neutral,
    StanceLabel::LeanLeft,
    StanceLabel::LeanRight,
    StanceLabel::Left,
    StanceLabel::Right,
];

impl SwitchedLM {
    /// Wraps a base model with `W = 0`.
    pub fn new(base: BaseLM) -> Self {
        let d = base.dim;
        SwitchedLM {
            base,
            switch: vec![0.0; d * d],
            epsilon_map: EpsilonMap::default(),
        }
    }

    pub fn with_switch(base: BaseLM, switch: Vec<Vec<f64>>, epsilon_map: EpsilonMap) -> Result<Self, LmError> {
        let d = base.dim;
        if switch.len() != d || switch.iter().any(|r| r.len() != d) {
            return Err(LmError::InvalidModel(format!("W must be {d}x{d}")));
        }
        let switch: Vec<f64> = switch.into_iter().flatten().collect();
        if switch.iter().any(|x| !x.is_finite()) {
            return Err(LmError::InvalidModel("W has non-finite entries".into()));
        }
        Ok(SwitchedLM {
            base,
            switch,
            epsilon_map,
        })
    }

    pub fn base(&self) -> &BaseLM {
        &self.base
    }

    pub fn epsilon_map(&self) -> &EpsilonMap {
        &self.epsilon_map
    }

    pub fn switch_matrix(&self) -> Vec<Vec<f64>> {
        BaseLM::rows(&self.switch, self.base.dim)
    }

    /// `Wᵀh`, so that `h · (W e) = (Wᵀh) · e`.
    fn switch_direction(&self, h: &[f64]) -> Vec<f64> {
        transpose_apply(&self.switch, h, self.base.dim)
    }

    fn switched_from_hidden(&self, h: &[f64], epsilon: f64) -> Vec<f64> {
        let u = self.switch_direction(h);
        (0..self.base.vocab.len())
            .map(|v| {
                let e = self.base.out_row(v);
                // Base logit plus the switch term; exactly the base logit at ε = 0.
                (dot(h, e) + self.base.bias[v]) + epsilon * dot(&u, e)
            })
            .collect()
    }

    /// Logits with output embeddings replaced by `(I + εW) e_v`.
    pub fn switched_logits(&self, history: &[usize], epsilon: f64) -> Vec<f64> {
        let hid = self.base.hidden(&self.base.context_ids(history));
        self.switched_from_hidden(&hid.h, epsilon)
    }

    pub fn next_token_distribution(&self, history: &[usize], epsilon: f64) -> Vec<f64> {
        softmax(&self.switched_logits(history, epsilon))
    }

    /// Average per-position log-probability of `text` (plus `<eos>`) at `epsilon`.
    pub fn log_likelihood(&self, text: &str, epsilon: f64) -> Result<f64, LmError> {
        let tokens = self.base.vocab.encode(text);
        if tokens.is_empty() {
            return Err(LmError::EmptyText);
        }
        Ok(self.sequence_log_likelihood(&tokens, epsilon))
    }

    pub fn sequence_log_likelihood(&self, tokens: &[usize], epsilon: f64) -> f64 {
        let mut total = 0.0;
        for (i, target) in targets(tokens).enumerate() {
            total += log_softmax(&self.switched_logits(&tokens[..i], epsilon))[target];
        }
        total / (tokens.len() + 1) as f64
    }

    /// Likelihood at each stance's ε; the best label wins, ties go to Neutral
    /// and then to the label nearer Neutral.
    pub fn stance_score(&self, text: &str) -> Result<StanceScore, LmError> {
        let tokens = self.base.vocab.encode(text);
        if tokens.is_empty() {
            return Err(LmError::EmptyText);
        }
        if tokens.iter().all(|&t| t == UNK_ID) {
            return Err(LmError::OutOfVocabulary);
        }
        let scores: BTreeMap<StanceLabel, f64> = self
            .epsilon_map
            .iter()
            .map(|(label, eps)| (label, self.sequence_log_likelihood(&tokens, eps)))
            .collect();
        let mut label = TIE_ORDER[0];
        for candidate in TIE_ORDER {
            if scores[&candidate] > scores[&label] {
                label = candidate;
            }
        }
        Ok(StanceScore { label, scores })
    }

    /// Autoregressive sampling of up to `length` tokens after `prompt`.
    ///
    /// Temperature 0 is greedy decoding (ties to the smaller token id).
    /// Sampling stops early at `<eos>`, which is not included in the output.
    pub fn generate(&self, prompt: &str, epsilon: f64, length: usize, seed: u64, temperature: f64) -> String {
        let ids = self.generate_ids(prompt, epsilon, length, seed, temperature);
        self.base.decode(&ids)
    }

    pub fn generate_ids(&self, prompt: &str, epsilon: f64, length: usize, seed: u64, temperature: f64) -> Vec<usize> {
        let history = self.base.vocab.encode(prompt);
        sample_sequence(history, length, seed, temperature, |h| self.switched_logits(h, epsilon))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ModelFile::from(self)).expect("model serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, LmError> {
        let file: ModelFile = serde_json::from_str(json)?;
        file.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LmError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LmError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

fn transpose_apply(m: &[f64], h: &[f64], d: usize) -> Vec<f64> {
    let mut u = vec![0.0; d];
    for (i, &hi) in h.iter().enumerate() {
        for (j, uj) in u.iter_mut().enumerate() {
            *uj += m[i * d + j] * hi;
        }
    }
    u
}

fn sample_sequence(
    mut history: Vec<usize>,
    length: usize,
    seed: u64,
    temperature: f64,
    logits_for: impl Fn(&[usize]) -> Vec<f64>,
) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = history.len();
    for _ in 0..length {
        let logits = logits_for(&history);
        let next = if temperature <= 0.0 {
            let mut best = 0;
            for (i, &l) in logits.iter().enumerate() {
                if l > logits[best] {
                    best = i;
                }
            }
            best
        } else {
            let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
            let probs = softmax(&scaled);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = None;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| probs.iter().rposition(|&p| p > 0.0).unwrap_or(0))
        };
        if next == EOS_ID {
            break;
        }
        history.push(next);
    }
    history.split_off(start)
}

/// One labeled training example with its frozen per-position hidden states.
struct SwitchExample {
    epsilon: f64,
    /// (h, target) per position
    positions: Vec<(Vec<f64>, usize)>,
}

/// The switch-training objective: mean over examples of per-token NLL at the
/// example's ε, as a function of `W` alone.
pub struct SwitchObjective<'a> {
    base: &'a BaseLM,
    examples: Vec<SwitchExample>,
}

impl<'a> SwitchObjective<'a> {
    pub fn new(base: &'a BaseLM, labeled: &[(String, StanceLabel)], epsilon_map: &EpsilonMap) -> Self {
        let examples = labeled
            .iter()
            .filter_map(|(text, label)| {
                let tokens = base.vocab.encode(text);
                if tokens.is_empty() {
                    return None;
                }
                Some(Self::prepare(base, &tokens, epsilon_map.get(*label)))
            })
            .collect();
        SwitchObjective { base, examples }
    }

    /// Builds the objective from already-encoded sequences and explicit ε values.
    pub fn from_sequences(base: &'a BaseLM, sequences: &[(Vec<usize>, f64)]) -> Self {
        let examples = sequences
            .iter()
            .map(|(tokens, eps)| Self::prepare(base, tokens, *eps))
            .collect();
        SwitchObjective { base, examples }
    }

    fn prepare(base: &BaseLM, tokens: &[usize], epsilon: f64) -> SwitchExample {
        let positions = targets(tokens)
            .enumerate()
            .map(|(i, target)| (base.hidden(&base.context_ids(&tokens[..i])).h, target))
            .collect();
        SwitchExample { epsilon, positions }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    fn example_terms(&self, w: &[f64], ex: &SwitchExample, grad: Option<&mut [f64]>) -> f64 {
        let d = self.base.dim;
        let v = self.base.vocab.len();
        let mut nll = 0.0;
        let scale = 1.0 / ex.positions.len() as f64;
        let mut grad = grad;
        for (h, target) in &ex.positions {
            let u = transpose_apply(w, h, d);
            let logits: Vec<f64> = (0..v)
                .map(|t| {
                    let e = self.base.out_row(t);
                    (dot(h, e) + self.base.bias[t]) + ex.epsilon * dot(&u, e)
                })
                .collect();
            nll -= log_softmax(&logits)[*target];
            if let Some(g) = grad.as_deref_mut() {
                let mut p = softmax(&logits);
                p[*target] -= 1.0;
                // ∂/∂W = ε · h ⊗ (E_outᵀ (p − onehot))
                let mut r = vec![0.0; d];
                for (t, pt) in p.iter().enumerate() {
                    for (rk, ek) in r.iter_mut().zip(self.base.out_row(t)) {
                        *rk += pt * ek;
                    }
                }
                let coef = ex.epsilon * scale;
                for i in 0..d {
                    for j in 0..d {
                        g[i * d + j] += coef * h[i] * r[j];
                    }
                }
            }
        }
        nll * scale
    }

    /// Objective value at `w` (flat row-major `d × d`).
    pub fn loss(&self, w: &[f64]) -> f64 {
        let n = self.examples.len().max(1) as f64;
        self.examples.iter().map(|ex| self.example_terms(w, ex, None)).sum::<f64>() / n
    }

    pub fn loss_and_gradient(&self, w: &[f64]) -> (f64, Vec<f64>) {
        let d = self.base.dim;
        let n = self.examples.len().max(1) as f64;
        let mut grad = vec![0.0; d * d];
        let mut loss = 0.0;
        for ex in &self.examples {
            loss += self.example_terms(w, ex, Some(&mut grad));
        }
        grad.iter_mut().for_each(|g| *g /= n);
        (loss / n, grad)
    }
}

/// Fits the switch matrix with the base frozen, starting from `W = 0`.
///
/// Full-batch gradient descent; a step that would raise the loss is rejected
/// and the learning rate halved.
pub fn train_switch(
    base: BaseLM,
    labeled: &[(String, StanceLabel)],
    epsilon_map: EpsilonMap,
    config: SwitchTrainConfig,
) -> Result<(SwitchedLM, TrainReport), LmError> {
    if !(config.lr > 0.0) {
        return Err(LmError::InvalidArgument("lr must be positive".into()));
    }
    let objective = SwitchObjective::new(&base, labeled, &epsilon_map);
    if objective.is_empty() {
        return Err(LmError::NoLabeledExamples);
    }
    let mut warnings = Vec::new();
    let mut present = [false; 5];
    for (text, label) in labeled {
        if !tokenize(text).is_empty() {
            present[label.index()] = true;
        }
    }
    for label in StanceLabel::ALL {
        if !present[label.index()] {
            warnings.push(format!("no training examples for stance {label}"));
        }
    }
    let distinct = present.iter().filter(|&&p| p).count();
    if distinct < 2 {
        warnings.push("all examples share one stance; the switch cannot learn a direction".into());
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    let d = base.dim;
    let mut w = vec![0.0; d * d];
    let mut lr = config.lr;
    let (mut loss, mut grad) = objective.loss_and_gradient(&w);
    let mut history = vec![loss];
    for _ in 0..config.epochs {
        let candidate: Vec<f64> = w.iter().zip(&grad).map(|(wi, gi)| wi - lr * gi).collect();
        let (new_loss, new_grad) = objective.loss_and_gradient(&candidate);
        if new_loss.is_finite() && new_loss <= loss {
            w = candidate;
            loss = new_loss;
            grad = new_grad;
        } else {
            lr *= 0.5;
        }
        history.push(loss);
    }
    let model = SwitchedLM {
        base,
        switch: w,
        epsilon_map,
    };
    Ok((
        model,
        TrainReport {
            loss_history: history,
            final_lr: lr,
            warnings,
        },
    ))
}

/// On-disk model layout.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    vocab: Vec<String>,
    d: usize,
    w: usize,
    #[serde(rename = "E_in")]
    e_in: Vec<Vec<f64>>,
    #[serde(rename = "E_out")]
    e_out: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    b: Vec<f64>,
    #[serde(rename = "W")]
    switch: Vec<Vec<f64>>,
    epsilon_map: EpsilonMap,
}

impl From<&SwitchedLM> for ModelFile {
    fn from(m: &SwitchedLM) -> Self {
        ModelFile {
            vocab: m.base.vocab.tokens.clone(),
            d: m.base.dim,
            w: m.base.window,
            e_in: m.base.input_embeddings(),
            e_out: m.base.output_embeddings(),
            c: m.base.context_matrix(),
            b: m.base.bias.clone(),
            switch: m.switch_matrix(),
            epsilon_map: m.epsilon_map,
        }
    }
}

impl TryFrom<ModelFile> for SwitchedLM {
    type Error = LmError;

    fn try_from(f: ModelFile) -> Result<Self, LmError> {
        if f.c.len() != f.d {
            return Err(LmError::InvalidModel(format!("C has {} rows but d = {}", f.c.len(), f.d)));
        }
        let vocab = Vocabulary::from_list(f.vocab)?;
        let base = BaseLM::from_parts(vocab, f.w, f.e_in, f.e_out, f.c, f.b)?;
        SwitchedLM::with_switch(base, f.switch, f.epsilon_map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_vocab() -> Vocabulary {
        Vocabulary::from_tokens(["a", "b", "c"]).unwrap()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Vec<Vec<f64>> {
        (0..rows)
            .map(|_| (0..cols).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale).collect())
            .collect()
    }

    fn random_base(seed: u64, d: usize) -> BaseLM {
        let vocab = toy_vocab();
        let v = vocab.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e_in = random_matrix(&mut rng, v, d, 1.0);
        let e_out = random_matrix(&mut rng, v, d, 1.0);
        let c = random_matrix(&mut rng, d, d, 1.0);
        let b = random_matrix(&mut rng, 1, v, 0.5).remove(0);
        BaseLM::from_parts(vocab, 2, e_in, e_out, c, b).unwrap()
    }

    #[test]
    fn vocabulary_min_count() {
        let vocab = Vocabulary::build(&["x y y", "z y x"], 2).unwrap();
        assert_eq!(vocab.tokens(), ["<unk>", "<bos>", "<eos>", "x", "y"]);
        assert_eq!(vocab.encode("x z q"), vec![3, UNK_ID, UNK_ID]);
    }

    #[test]
    fn context_padding() {
        let m = random_base(1, 3);
        assert_eq!(m.context_ids(&[]), vec![BOS_ID, BOS_ID]);
        assert_eq!(m.context_ids(&[5]), vec![BOS_ID, 5]);
        assert_eq!(m.context_ids(&[3, 4, 5]), vec![4, 5]);
    }

    #[test]
    fn zero_output_layer_is_uniform() {
        let vocab = toy_vocab();
        let v = vocab.len();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e_in = random_matrix(&mut rng, v, 4, 1.0);
        let c = random_matrix(&mut rng, 4, 4, 1.0);
        let base = BaseLM::from_parts(vocab, 3, e_in, vec![vec![0.0; 4]; v], c, vec![0.0; v]).unwrap();
        let ll = base.log_likelihood("a b c a").unwrap();
        assert!((ll + (v as f64).ln()).abs() < 1e-12);
        let dist = base.next_token_distribution(&[3, 4]);
        assert!(dist.iter().all(|p| (p - 1.0 / v as f64).abs() < 1e-15));
    }

    #[test]
    fn distributions_sum_to_one() {
        let base = random_base(5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = random_matrix(&mut rng, 4, 4, 2.0);
        let model = SwitchedLM::with_switch(base, w, EpsilonMap::default()).unwrap();
        for eps in [-1.0, -0.3, 0.0, 0.5, 1.0, 3.0] {
            for hist in [vec![], vec![3], vec![4, 5, 3]] {
                let s: f64 = model.next_token_distribution(&hist, eps).iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn identity_cases() {
        let base = random_base(7, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = random_matrix(&mut rng, 4, 4, 1.0);
        let switched = SwitchedLM::with_switch(base.clone(), w, EpsilonMap::default()).unwrap();
        let zero_w = SwitchedLM::new(base.clone());
        for hist in [vec![], vec![3, 4], vec![5, 5, 5, 3]] {
            assert_eq!(switched.switched_logits(&hist, 0.0), base.logits(&hist));
            assert_eq!(zero_w.switched_logits(&hist, 0.7), base.logits(&hist));
        }
        assert_eq!(switched.log_likelihood("a b c", 0.0).unwrap(), base.log_likelihood("a b c").unwrap());
    }

    #[test]
    fn hand_computed_logits_d2() {
        // |V| = 3 requires a custom vocabulary without reserved tokens being
        // special; use the reserved ones as the three tokens.
        let vocab = Vocabulary::from_list(vec![UNK.into(), BOS.into(), EOS.into()]).unwrap();
        let e_in = vec![vec![0.5, -0.25], vec![1.0, 0.5], vec![0.0, 0.0]];
        // C = I, window 1, context <bos> → x = E_in[1] = [1, 0.5]
        let c = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let e_out = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, -1.0]];
        let b = vec![0.1, -0.2, 0.3];
        let base = BaseLM::from_parts(vocab, 1, e_in, e_out, c, b).unwrap();
        let w = vec![vec![0.0, 1.0], vec![2.0, 0.0]];
        let model = SwitchedLM::with_switch(base, w, EpsilonMap::default()).unwrap();
        let h = [1.0f64.tanh(), 0.5f64.tanh()];
        let eps = 0.5;
        // (I + εW) e:  e0=[1,0] → [1, 1];  e1=[0,1] → [0.5, 1];  e2=[1,-1] → [0.5, 0]
        let expected = [
            h[0] * 1.0 + h[1] * 1.0 + 0.1,
            h[0] * 0.5 + h[1] * 1.0 - 0.2,
            h[0] * 0.5 + h[1] * 0.0 + 0.3,
        ];
        let got = model.switched_logits(&[], eps);
        for (g, e) in got.iter().zip(expected) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }

    #[test]
    fn hand_computed_likelihood_chain() {
        let vocab = Vocabulary::from_list(vec![UNK.into(), BOS.into(), EOS.into()]).unwrap();
        // E_out rows depend only on their own coordinate, C = I, window 1.
        let e_in = vec![vec![0.2, 0.0], vec![0.0, 0.4], vec![0.0, 0.0]];
        let c = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let e_out = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]];
        let base = BaseLM::from_parts(vocab, 1, e_in, e_out, c, vec![0.0; 3]).unwrap();
        // Text "<unk>" (an OOV word) then <eos>.
        // pos 0: ctx <bos> → h = [0, tanh .4] → logits [0, tanh .4, 0], target unk(0)
        // pos 1: ctx <unk> → h = [tanh .2, 0] → logits [tanh .2, 0, 0], target eos(2)
        let lp = |logits: [f64; 3], t: usize| logits[t] - logits.iter().map(|l| l.exp()).sum::<f64>().ln();
        let a = 0.4f64.tanh();
        let b = 0.2f64.tanh();
        let expected = (lp([0.0, a, 0.0], 0) + lp([b, 0.0, 0.0], 2)) / 2.0;
        let got = base.log_likelihood("zzz").unwrap();
        assert!((got - expected).abs() < 1e-14);
    }

    #[test]
    fn base_gradient_matches_finite_differences() {
        let base = random_base(11, 3);
        let data = vec![vec![3, 4, 5, 3], vec![5, 5, 4]];
        let positions = all_positions(&data);
        let (_, g) = base_loss_and_gradient(&base, &data, &positions);
        let delta = 1e-5;
        let numeric = |perturb: &dyn Fn(&mut BaseLM, f64)| {
            let mut plus = base.clone();
            perturb(&mut plus, delta);
            let mut minus = base.clone();
            perturb(&mut minus, -delta);
            (plus.dataset_loss(&data) - minus.dataset_loss(&data)) / (2.0 * delta)
        };
        let close = |a: f64, n: f64| (a - n).abs() <= 1e-6 + 1e-4 * n.abs().max(a.abs());
        for i in 0..base.e_in.len() {
            let n = numeric(&|m, d| m.e_in[i] += d);
            assert!(close(g.e_in[i], n), "E_in[{i}]: {} vs {n}", g.e_in[i]);
        }
        for i in 0..base.e_out.len() {
            let n = numeric(&|m, d| m.e_out[i] += d);
            assert!(close(g.e_out[i], n), "E_out[{i}]");
        }
        for i in 0..base.context.len() {
            let n = numeric(&|m, d| m.context[i] += d);
            assert!(close(g.context[i], n), "C[{i}]");
        }
        for i in 0..base.bias.len() {
            let n = numeric(&|m, d| m.bias[i] += d);
            assert!(close(g.bias[i], n), "b[{i}]");
        }
    }

    #[test]
    fn bigram_is_learned() {
        let text = vec!["a b"; 30].join(" ");
        let config = BaseTrainConfig {
            dim: 8,
            window: 3,
            epochs: 60,
            lr: 0.5,
            batch_size: 8,
            min_count: 2,
            seed: 4,
        };
        let (model, report) = train_base_lm(&[text], config).unwrap();
        for w in report.loss_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-6);
        }
        let a = model.vocab().id("a").unwrap();
        let b = model.vocab().id("b").unwrap();
        let p = model.next_token_distribution(&[a, b, a]);
        assert!(p[b] > 0.9, "P(b | a) = {}", p[b]);
    }

    #[test]
    fn training_is_deterministic() {
        let texts = ["the cat sat on the mat", "the dog sat on the log", "a cat and a dog"];
        let config = BaseTrainConfig {
            dim: 6,
            epochs: 5,
            ..Default::default()
        };
        let (m1, _) = train_base_lm(&texts, config).unwrap();
        let (m2, _) = train_base_lm(&texts, config).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn training_errors() {
        let empty: [&str; 0] = [];
        assert!(matches!(train_base_lm(&empty, BaseTrainConfig::default()), Err(LmError::EmptyCorpus)));
        assert!(matches!(
            train_base_lm(&["one two three"], BaseTrainConfig::default()),
            Err(LmError::VocabularyTooSmall(3))
        ));
    }

    #[test]
    fn switch_gradient_matches_finite_differences() {
        let base = random_base(21, 4);
        let seqs = vec![(vec![3, 4, 5], -1.0), (vec![5, 3], 1.0), (vec![4, 4, 3, 5], 0.5)];
        let objective = SwitchObjective::from_sequences(&base, &seqs);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w: Vec<f64> = (0..16).map(|_| rng.random::<f64>() - 0.5).collect();
        let (_, g) = objective.loss_and_gradient(&w);
        for i in 0..16 {
            let mut p = w.clone();
            p[i] += 1e-5;
            let mut m = w.clone();
            m[i] -= 1e-5;
            let n = (objective.loss(&p) - objective.loss(&m)) / 2e-5;
            assert!((g[i] - n).abs() <= 1e-4 * n.abs().max(1e-6), "{i}: {} vs {n}", g[i]);
        }
    }

    #[test]
    fn switch_training_starts_at_base_loss() {
        let base = random_base(4, 3);
        let labeled = vec![("a b c".to_string(), StanceLabel::Left), ("c c a".to_string(), StanceLabel::Neutral)];
        let (_, report) = train_switch(base.clone(), &labeled, EpsilonMap::default(), SwitchTrainConfig::default()).unwrap();
        let base_nll = (-base.log_likelihood("a b c").unwrap() - base.log_likelihood("c c a").unwrap()) / 2.0;
        assert!((report.loss_history[0] - base_nll).abs() < 1e-12);
        for w in report.loss_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-6);
        }
        assert!(report.warnings.iter().any(|w| w.contains("right")));
    }

    #[test]
    fn single_label_warns() {
        let base = random_base(4, 3);
        let labeled = vec![("a b".to_string(), StanceLabel::Neutral)];
        let (model, report) = train_switch(base, &labeled, EpsilonMap::default(), SwitchTrainConfig::default()).unwrap();
        assert!(report.warnings.iter().any(|w| w.contains("one stance")));
        // ε = 0 examples carry no gradient.
        assert!(model.switch_matrix().iter().flatten().all(|&x| x == 0.0));
        assert!(matches!(
            train_switch(random_base(4, 3), &[], EpsilonMap::default(), SwitchTrainConfig::default()),
            Err(LmError::NoLabeledExamples)
        ));
    }

    #[test]
    fn zero_switch_scores_neutral() {
        let model = SwitchedLM::new(random_base(3, 4));
        let s = model.stance_score("a b c").unwrap();
        assert_eq!(s.label, StanceLabel::Neutral);
        assert_eq!(s.scores.len(), 5);
        assert!(s.scores.values().all(|v| v.is_finite()));
        assert!(matches!(model.stance_score("   "), Err(LmError::EmptyText)));
        assert!(matches!(model.stance_score("qq zz"), Err(LmError::OutOfVocabulary)));
    }

    #[test]
    fn generation_determinism_and_identity() {
        let base = random_base(13, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random_matrix(&mut rng, 4, 4, 1.0);
        let model = SwitchedLM::with_switch(base.clone(), w, EpsilonMap::default()).unwrap();
        let g1 = model.generate("a", 1.0, 20, 5, 0.0);
        let g2 = model.generate("a", 1.0, 20, 99, 0.0);
        assert_eq!(g1, g2);
        for seed in 0..10 {
            assert_eq!(model.generate("a b", 0.0, 15, seed, 1.0), base.generate("a b", 15, seed, 1.0));
        }
        assert!(model.generate_ids("", 0.5, 7, 3, 1.0).len() <= 7);
    }

    #[test]
    fn model_json_round_trip_is_bit_exact() {
        let base = random_base(17, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = random_matrix(&mut rng, 4, 4, 1.0 / 3.0);
        let model = SwitchedLM::with_switch(base, w, EpsilonMap::default()).unwrap();
        let json = model.to_json();
        let back = SwitchedLM::from_json(&json).unwrap();
        assert_eq!(back, model);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        for key in ["vocab", "d", "w", "E_in", "E_out", "C", "b", "W", "epsilon_map"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["epsilon_map"]["lean_left"], -0.5);
    }

    #[test]
    fn epsilon_map_must_increase() {
        assert!(EpsilonMap::new([-1.0, -0.5, 0.0, 0.5, 1.0]).is_ok());
        assert!(EpsilonMap::new([-1.0, -0.5, -0.5, 0.5, 1.0]).is_err());
        assert!(EpsilonMap::new([1.0, 0.5, 0.0, -0.5, -1.0]).is_err());
    }
}
