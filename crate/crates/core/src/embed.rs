//! Self-supervised band embeddings.
//!
//! Tokens are vegetation-index bands; the regression target for a token pair
//! is the Jaccard similarity of the (tree, segment) context sets in which the
//! two tokens appear. The network looks up both tokens in a shared embedding
//! matrix, concatenates the columns, passes them through one leaky-ReLU
//! hidden layer (dropout at train time), and emits a scalar via a linear
//! output. Training is full-batch Adam over all strict upper-triangular
//! pairs, bit-reproducible for a fixed seed.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::banding::{BandCell, BandTable, TokenId};
use crate::config::{derive_seed, EmbedConfig};
use crate::error::{Error, Result};
use crate::vegindex::ALL_INDICES;

// ---------------------------------------------------------------------------
// Co-occurrence targets
// ---------------------------------------------------------------------------

/// Context sets per token and the symmetric Jaccard matrix over token pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceTable {
    context_count: usize,
    sets: Vec<BTreeSet<u32>>,
    /// Row-major vocab x vocab.
    jaccard: Vec<f64>,
}

impl CooccurrenceTable {
    /// Computes the Jaccard matrix from explicit context sets. Two empty
    /// sets have similarity 0 (the 0/0 case carries no signal).
    pub fn from_context_sets(context_count: usize, sets: Vec<BTreeSet<u32>>) -> Self {
        let vocab = sets.len();
        let mut jaccard = vec![0.0; vocab * vocab];
        for i in 0..vocab {
            for j in i..vocab {
                let inter = sets[i].intersection(&sets[j]).count();
                let union = sets[i].union(&sets[j]).count();
                let value = if union == 0 {
                    0.0
                } else {
                    inter as f64 / union as f64
                };
                jaccard[i * vocab + j] = value;
                jaccard[j * vocab + i] = value;
            }
        }
        Self {
            context_count,
            sets,
            jaccard,
        }
    }

    /// Builds the token/context incidence from a band table: token v appears
    /// in context (tree, segment) iff that cell carries v's band. Outlier
    /// cells contribute to no token.
    pub fn from_band_table(table: &BandTable) -> Self {
        let mut sets = vec![BTreeSet::new(); table.vocab_size()];
        for tree_pos in 0..table.tree_ids().len() {
            for segment in 1..=table.n_segments() {
                let context = table.context_id(tree_pos, segment);
                for index in ALL_INDICES {
                    if let BandCell::Band(b) = table.cell(tree_pos, segment, index) {
                        let token = TokenId::from_parts(index, b);
                        sets[token.position()].insert(context);
                    }
                }
            }
        }
        Self::from_context_sets(table.context_count(), sets)
    }

    pub fn vocab(&self) -> usize {
        self.sets.len()
    }

    pub fn context_count(&self) -> usize {
        self.context_count
    }

    /// Number of strict upper-triangular token pairs.
    pub fn pair_count(&self) -> usize {
        self.vocab() * (self.vocab() - 1) / 2
    }

    pub fn contexts_of(&self, token: TokenId) -> &BTreeSet<u32> {
        &self.sets[token.position()]
    }

    pub fn jaccard(&self, i: TokenId, j: TokenId) -> f64 {
        self.jaccard[i.position() * self.vocab() + j.position()]
    }
}

/// Spec-facing alias for building the co-occurrence table.
pub fn band_contexts(table: &BandTable) -> CooccurrenceTable {
    CooccurrenceTable::from_band_table(table)
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

const MODEL_FORMAT: &str = "crownvec-embedding-model";
const MODEL_VERSION: u32 = 1;

/// Pair-input embedding network. Weight layout:
/// `embedding[t * embed_dim + r]` (token-major columns),
/// `hidden[h * 2 * embed_dim + r]` (column h = weights into hidden node h),
/// `output[h]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    vocab: usize,
    embed_dim: usize,
    hidden_dim: usize,
    seed: u64,
    hyper: EmbedConfig,
    embedding: Vec<f64>,
    hidden: Vec<f64>,
    output: Vec<f64>,
    hidden_bias: Option<Vec<f64>>,
    output_bias: Option<f64>,
}

/// Gradient of one squared pair loss with respect to every parameter group.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub embedding: Vec<f64>,
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
    pub hidden_bias: Option<Vec<f64>>,
    pub output_bias: Option<f64>,
}

impl EmbeddingModel {
    /// Initializes all weights uniformly in [-init_range, init_range] from a
    /// stream derived from `seed`. Draw order: embedding, hidden, output,
    /// then biases.
    pub fn init(vocab: usize, cfg: &EmbedConfig, seed: u64) -> Self {
        assert!(vocab >= 1, "vocabulary must be nonempty");
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "embed:init"));
        let r = cfg.init_range;
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-r..=r)).collect()
        };
        let embedding = draw(vocab * cfg.embed_dim);
        let hidden = draw(2 * cfg.embed_dim * cfg.hidden_dim);
        let output = draw(cfg.hidden_dim);
        let hidden_bias = cfg.use_bias.then(|| draw(cfg.hidden_dim));
        let output_bias = cfg.use_bias.then(|| draw(1)[0]);
        Self {
            vocab,
            embed_dim: cfg.embed_dim,
            hidden_dim: cfg.hidden_dim,
            seed,
            hyper: cfg.clone(),
            embedding,
            hidden,
            output,
            hidden_bias,
            output_bias,
        }
    }

    /// All-zero weights; useful in tests.
    pub fn zeros(vocab: usize, embed_dim: usize, hidden_dim: usize) -> Self {
        let cfg = EmbedConfig {
            embed_dim,
            hidden_dim,
            ..EmbedConfig::default()
        };
        Self {
            vocab,
            embed_dim,
            hidden_dim,
            seed: 0,
            hyper: cfg,
            embedding: vec![0.0; vocab * embed_dim],
            hidden: vec![0.0; 2 * embed_dim * hidden_dim],
            output: vec![0.0; hidden_dim],
            hidden_bias: None,
            output_bias: None,
        }
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn hyperparams(&self) -> &EmbedConfig {
        &self.hyper
    }

    fn check_token(&self, t: TokenId) -> Result<usize> {
        let pos = t.0 as usize;
        if pos == 0 || pos > self.vocab {
            return Err(Error::TokenOutOfRange {
                token: pos,
                vocab: self.vocab,
            });
        }
        Ok(pos - 1)
    }

    /// Embedding column of one token.
    pub fn embedding_column(&self, t: TokenId) -> Result<&[f64]> {
        let pos = self.check_token(t)?;
        Ok(&self.embedding[pos * self.embed_dim..(pos + 1) * self.embed_dim])
    }

    /// Overwrites one embedding column.
    pub fn set_embedding_column(&mut self, t: TokenId, values: &[f64]) -> Result<()> {
        let pos = self.check_token(t)?;
        if values.len() != self.embed_dim {
            return Err(Error::InvalidInput(format!(
                "embedding column needs {} values, got {}",
                self.embed_dim,
                values.len()
            )));
        }
        self.embedding[pos * self.embed_dim..(pos + 1) * self.embed_dim].copy_from_slice(values);
        Ok(())
    }

    fn leaky(&self, x: f64) -> f64 {
        if x > 0.0 {
            x
        } else {
            self.hyper.leaky_slope * x
        }
    }

    fn leaky_grad(&self, x: f64) -> f64 {
        if x > 0.0 {
            1.0
        } else {
            self.hyper.leaky_slope
        }
    }

    /// Hidden pre-activations split by input slot:
    /// `first[h]` = contribution of token t through the first 64 rows,
    /// `second[h]` = through the last 64 rows.
    fn token_activations(&self, position: usize) -> (Vec<f64>, Vec<f64>) {
        let d = self.embed_dim;
        let column = &self.embedding[position * d..(position + 1) * d];
        let mut first = vec![0.0; self.hidden_dim];
        let mut second = vec![0.0; self.hidden_dim];
        for h in 0..self.hidden_dim {
            let weights = &self.hidden[h * 2 * d..(h + 1) * 2 * d];
            let mut sf = 0.0;
            let mut ss = 0.0;
            for r in 0..d {
                sf += weights[r] * column[r];
                ss += weights[d + r] * column[r];
            }
            first[h] = sf;
            second[h] = ss;
        }
        (first, second)
    }

    fn pre_activations(&self, i_pos: usize, j_pos: usize) -> Vec<f64> {
        let (a, _) = self.token_activations(i_pos);
        let (_, b) = self.token_activations(j_pos);
        let mut pre: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        if let Some(bias) = &self.hidden_bias {
            for (p, b) in pre.iter_mut().zip(bias) {
                *p += b;
            }
        }
        pre
    }

    /// Hidden-layer pre-activations for a token pair; gradient-check tests
    /// use this to keep the finite-difference probe away from the
    /// leaky-ReLU kink.
    pub fn hidden_preactivations(&self, i: TokenId, j: TokenId) -> Result<Vec<f64>> {
        let i_pos = self.check_token(i)?;
        let j_pos = self.check_token(j)?;
        Ok(self.pre_activations(i_pos, j_pos))
    }

    /// Predicted similarity for a token pair, dropout disabled.
    pub fn forward(&self, i: TokenId, j: TokenId) -> Result<f64> {
        let i_pos = self.check_token(i)?;
        let j_pos = self.check_token(j)?;
        let pre = self.pre_activations(i_pos, j_pos);
        let mut out = 0.0;
        for (p, w) in pre.iter().zip(&self.output) {
            out += self.leaky(*p) * w;
        }
        Ok(out + self.output_bias.unwrap_or(0.0))
    }

    /// Mean of squared pair losses over all strict upper-triangular pairs,
    /// dropout disabled.
    pub fn final_loss(&self, pairs: &CooccurrenceTable) -> f64 {
        assert_eq!(pairs.vocab(), self.vocab, "vocabulary mismatch");
        let acts: Vec<(Vec<f64>, Vec<f64>)> =
            (0..self.vocab).map(|t| self.token_activations(t)).collect();
        let mut total = 0.0;
        let zero_bias = vec![0.0; if self.hidden_bias.is_some() { 0 } else { self.hidden_dim }];
        let bias = self.hidden_bias.as_deref().unwrap_or(&zero_bias);
        for i in 0..self.vocab {
            for j in (i + 1)..self.vocab {
                let mut out = self.output_bias.unwrap_or(0.0);
                for (((a, b), w), hb) in acts[i]
                    .0
                    .iter()
                    .zip(&acts[j].1)
                    .zip(&self.output)
                    .zip(bias)
                {
                    out += self.leaky(a + b + hb) * w;
                }
                let err = out - pairs.jaccard[i * self.vocab + j];
                total += err * err;
            }
        }
        total / pairs.pair_count() as f64
    }

    /// Analytic gradient of the single-pair squared loss
    /// `(forward(i, j) - target)^2`, dropout disabled.
    pub fn pair_gradients(&self, i: TokenId, j: TokenId, target: f64) -> Result<Gradients> {
        let i_pos = self.check_token(i)?;
        let j_pos = self.check_token(j)?;
        let mut accum = BatchAccum::new(self.vocab, self.hidden_dim, self.hyper.use_bias);
        let pre = self.pre_activations(i_pos, j_pos);
        let mut out = self.output_bias.unwrap_or(0.0);
        for (p, w) in pre.iter().zip(&self.output) {
            out += self.leaky(*p) * w;
        }
        let dout = 2.0 * (out - target);
        self.accumulate_pair(&mut accum, i_pos, j_pos, &pre, None, dout);
        Ok(self.finalize_gradients(&accum))
    }

    /// Backward pass for one pair given its pre-activations, an optional
    /// dropout mask, and the loss gradient at the output.
    fn accumulate_pair(
        &self,
        accum: &mut BatchAccum,
        i_pos: usize,
        j_pos: usize,
        pre: &[f64],
        mask: Option<&[bool]>,
        dout: f64,
    ) {
        let keep_scale = 1.0 - self.hyper.dropout_rate;
        for h in 0..self.hidden_dim {
            let act = self.leaky(pre[h]);
            let (value, dact) = match mask {
                Some(mask) => {
                    if mask[h] {
                        (act / keep_scale, dout * self.output[h] / keep_scale)
                    } else {
                        (0.0, 0.0)
                    }
                }
                None => (act, dout * self.output[h]),
            };
            accum.d_output[h] += dout * value;
            let dpre = dact * self.leaky_grad(pre[h]);
            accum.sa[i_pos * self.hidden_dim + h] += dpre;
            accum.sb[j_pos * self.hidden_dim + h] += dpre;
            if let Some(db) = &mut accum.d_hidden_bias {
                db[h] += dpre;
            }
        }
        if accum.d_output_bias.is_some() {
            accum.d_output_bias = Some(accum.d_output_bias.unwrap() + dout);
        }
        accum.touched[i_pos] = true;
        accum.touched[j_pos] = true;
    }

    /// Folds the per-token pre-activation gradients into weight gradients:
    /// grad W_h rows come from embedding columns x accumulated dpre sums,
    /// grad E columns from W_h x the same sums.
    fn finalize_gradients(&self, accum: &BatchAccum) -> Gradients {
        let d = self.embed_dim;
        let mut g_embedding = vec![0.0; self.embedding.len()];
        let mut g_hidden = vec![0.0; self.hidden.len()];
        for t in 0..self.vocab {
            if !accum.touched[t] {
                continue;
            }
            let column = &self.embedding[t * d..(t + 1) * d];
            let sa = &accum.sa[t * self.hidden_dim..(t + 1) * self.hidden_dim];
            let sb = &accum.sb[t * self.hidden_dim..(t + 1) * self.hidden_dim];
            let g_col = &mut g_embedding[t * d..(t + 1) * d];
            for h in 0..self.hidden_dim {
                let weights = &self.hidden[h * 2 * d..(h + 1) * 2 * d];
                let g_weights = &mut g_hidden[h * 2 * d..(h + 1) * 2 * d];
                let (sa_h, sb_h) = (sa[h], sb[h]);
                if sa_h != 0.0 {
                    for r in 0..d {
                        g_weights[r] += column[r] * sa_h;
                        g_col[r] += weights[r] * sa_h;
                    }
                }
                if sb_h != 0.0 {
                    for r in 0..d {
                        g_weights[d + r] += column[r] * sb_h;
                        g_col[r] += weights[d + r] * sb_h;
                    }
                }
            }
        }
        Gradients {
            embedding: g_embedding,
            hidden: g_hidden,
            output: accum.d_output.clone(),
            hidden_bias: accum.d_hidden_bias.clone(),
            output_bias: accum.d_output_bias,
        }
    }

    /// Full-batch Adam over the mean squared pair loss. Deterministic for a
    /// fixed seed: init, dropout masks, and accumulation order are all
    /// seeded and sequential. Returns the dropout-free loss per epoch, entry
    /// 0 holding the pre-training loss.
    pub fn train(&mut self, pairs: &CooccurrenceTable) -> Result<Vec<f64>> {
        if self.hyper.epochs == 0 {
            return Err(Error::InvalidInput("epochs must be at least 1".into()));
        }
        if pairs.vocab() != self.vocab {
            return Err(Error::InvalidInput(format!(
                "model vocabulary {} does not match table vocabulary {}",
                self.vocab,
                pairs.vocab()
            )));
        }
        if self.vocab < 2 {
            return Err(Error::InvalidInput(
                "training needs at least 2 tokens".into(),
            ));
        }

        let mut dropout_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "embed:dropout"));
        let dropout = self.hyper.dropout_rate;
        assert!((0.0..1.0).contains(&dropout), "dropout rate must be in [0, 1)");

        let n = pairs.pair_count() as f64;
        let mut adam = AdamState::new(self.param_count(), &self.hyper);
        let mut history = Vec::with_capacity(self.hyper.epochs + 1);
        history.push(self.final_loss(pairs));

        let mut mask = vec![true; self.hidden_dim];
        for epoch in 0..self.hyper.epochs {
            let acts: Vec<(Vec<f64>, Vec<f64>)> =
                (0..self.vocab).map(|t| self.token_activations(t)).collect();
            let mut accum = BatchAccum::new(self.vocab, self.hidden_dim, self.hyper.use_bias);
            let mut pre = vec![0.0; self.hidden_dim];
            for i in 0..self.vocab {
                for j in (i + 1)..self.vocab {
                    for h in 0..self.hidden_dim {
                        pre[h] = acts[i].0[h] + acts[j].1[h];
                        if let Some(bias) = &self.hidden_bias {
                            pre[h] += bias[h];
                        }
                    }
                    let mask_ref = if dropout > 0.0 {
                        for m in mask.iter_mut() {
                            *m = dropout_rng.gen::<f64>() >= dropout;
                        }
                        Some(mask.as_slice())
                    } else {
                        None
                    };
                    // Dropout-adjusted forward value for the pair loss.
                    let mut out = self.output_bias.unwrap_or(0.0);
                    match mask_ref {
                        Some(mask) => {
                            let keep = 1.0 - dropout;
                            for ((p, w), kept) in pre.iter().zip(&self.output).zip(mask) {
                                if *kept {
                                    out += self.leaky(*p) / keep * w;
                                }
                            }
                        }
                        None => {
                            for (p, w) in pre.iter().zip(&self.output) {
                                out += self.leaky(*p) * w;
                            }
                        }
                    }
                    let err = out - pairs.jaccard[i * self.vocab + j];
                    let dout = 2.0 * err / n;
                    self.accumulate_pair(&mut accum, i, j, &pre, mask_ref, dout);
                }
            }
            let gradients = self.finalize_gradients(&accum);
            adam.apply(self, &gradients);

            let loss = self.final_loss(pairs);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch, loss });
            }
            history.push(loss);
        }
        Ok(history)
    }

    // -- flat parameter view (order: embedding, hidden, output, biases) ----

    fn param_count(&self) -> usize {
        self.embedding.len()
            + self.hidden.len()
            + self.output.len()
            + self.hidden_bias.as_ref().map_or(0, |b| b.len())
            + usize::from(self.output_bias.is_some())
    }

    fn param(&self, idx: usize) -> f64 {
        let mut idx = idx;
        for slice in [&self.embedding, &self.hidden, &self.output] {
            if idx < slice.len() {
                return slice[idx];
            }
            idx -= slice.len();
        }
        if let Some(bias) = &self.hidden_bias {
            if idx < bias.len() {
                return bias[idx];
            }
            idx -= bias.len();
        }
        debug_assert_eq!(idx, 0);
        self.output_bias.expect("flat index within parameters")
    }

    fn param_mut(&mut self, idx: usize) -> &mut f64 {
        let mut idx = idx;
        if idx < self.embedding.len() {
            return &mut self.embedding[idx];
        }
        idx -= self.embedding.len();
        if idx < self.hidden.len() {
            return &mut self.hidden[idx];
        }
        idx -= self.hidden.len();
        if idx < self.output.len() {
            return &mut self.output[idx];
        }
        idx -= self.output.len();
        if let Some(bias) = &mut self.hidden_bias {
            if idx < bias.len() {
                return &mut bias[idx];
            }
            idx -= bias.len();
        }
        debug_assert_eq!(idx, 0);
        self.output_bias.as_mut().expect("flat index within parameters")
    }

    fn gradient_at(gradients: &Gradients, idx: usize) -> f64 {
        let mut idx = idx;
        for slice in [&gradients.embedding, &gradients.hidden, &gradients.output] {
            if idx < slice.len() {
                return slice[idx];
            }
            idx -= slice.len();
        }
        if let Some(bias) = &gradients.hidden_bias {
            if idx < bias.len() {
                return bias[idx];
            }
            idx -= bias.len();
        }
        debug_assert_eq!(idx, 0);
        gradients.output_bias.expect("flat index within gradients")
    }

    // -- persistence --------------------------------------------------------

    pub fn save(&self, path: &Path) -> Result<()> {
        let d = self.embed_dim;
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            vocab: self.vocab,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            seed: self.seed,
            hyperparams: self.hyper.clone(),
            embedding: (0..self.vocab)
                .map(|t| self.embedding[t * d..(t + 1) * d].to_vec())
                .collect(),
            hidden: (0..2 * d)
                .map(|r| {
                    (0..self.hidden_dim)
                        .map(|h| self.hidden[h * 2 * d + r])
                        .collect()
                })
                .collect(),
            output: self.output.clone(),
            hidden_bias: self.hidden_bias.clone(),
            output_bias: self.output_bias,
        };
        let json = serde_json::to_string_pretty(&file)
            .map_err(|e| Error::artifact(path, format!("serialize: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text)
            .map_err(|e| Error::artifact(path, format!("parse: {e}")))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::artifact(
                path,
                format!("unsupported model format {}/{}", file.format, file.version),
            ));
        }
        let d = file.embed_dim;
        if file.embedding.len() != file.vocab
            || file.embedding.iter().any(|c| c.len() != d)
            || file.hidden.len() != 2 * d
            || file.hidden.iter().any(|r| r.len() != file.hidden_dim)
            || file.output.len() != file.hidden_dim
        {
            return Err(Error::artifact(path, "weight shapes disagree with header"));
        }
        let mut hidden = vec![0.0; 2 * d * file.hidden_dim];
        for (r, row) in file.hidden.iter().enumerate() {
            for (h, v) in row.iter().enumerate() {
                hidden[h * 2 * d + r] = *v;
            }
        }
        Ok(Self {
            vocab: file.vocab,
            embed_dim: file.embed_dim,
            hidden_dim: file.hidden_dim,
            seed: file.seed,
            hyper: file.hyperparams,
            embedding: file.embedding.into_iter().flatten().collect(),
            hidden,
            output: file.output,
            hidden_bias: file.hidden_bias,
            output_bias: file.output_bias,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    vocab: usize,
    embed_dim: usize,
    hidden_dim: usize,
    seed: u64,
    hyperparams: EmbedConfig,
    /// Token-major: one embedding column per token.
    embedding: Vec<Vec<f64>>,
    /// Row-major: row r holds the weights from input r to every hidden node.
    hidden: Vec<Vec<f64>>,
    output: Vec<f64>,
    hidden_bias: Option<Vec<f64>>,
    output_bias: Option<f64>,
}

/// Per-epoch gradient accumulator: dpre sums per token and slot plus the
/// output-layer pieces.
struct BatchAccum {
    sa: Vec<f64>,
    sb: Vec<f64>,
    d_output: Vec<f64>,
    d_hidden_bias: Option<Vec<f64>>,
    d_output_bias: Option<f64>,
    touched: Vec<bool>,
}

impl BatchAccum {
    fn new(vocab: usize, hidden_dim: usize, use_bias: bool) -> Self {
        Self {
            sa: vec![0.0; vocab * hidden_dim],
            sb: vec![0.0; vocab * hidden_dim],
            d_output: vec![0.0; hidden_dim],
            d_hidden_bias: use_bias.then(|| vec![0.0; hidden_dim]),
            d_output_bias: use_bias.then_some(0.0),
            touched: vec![false; vocab],
        }
    }
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl AdamState {
    fn new(params: usize, cfg: &EmbedConfig) -> Self {
        Self {
            m: vec![0.0; params],
            v: vec![0.0; params],
            step: 0,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
        }
    }

    fn apply(&mut self, model: &mut EmbeddingModel, gradients: &Gradients) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for idx in 0..self.m.len() {
            let g = EmbeddingModel::gradient_at(gradients, idx);
            self.m[idx] = self.beta1 * self.m[idx] + (1.0 - self.beta1) * g;
            self.v[idx] = self.beta2 * self.v[idx] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[idx] / bc1;
            let v_hat = self.v[idx] / bc2;
            *model.param_mut(idx) -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Compares the analytic gradient of `(forward(i, j) - target)^2` against
/// central finite differences (step 1e-5) over every parameter; returns the
/// maximum relative error. Dropout is disabled throughout.
pub fn gradient_check(
    model: &EmbeddingModel,
    i: TokenId,
    j: TokenId,
    target: f64,
) -> Result<f64> {
    const STEP: f64 = 1e-5;
    let analytic = model.pair_gradients(i, j, target)?;
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for idx in 0..model.param_count() {
        let original = probe.param(idx);
        *probe.param_mut(idx) = original + STEP;
        let up = probe.forward(i, j)?;
        *probe.param_mut(idx) = original - STEP;
        let down = probe.forward(i, j)?;
        *probe.param_mut(idx) = original;
        let loss_up = (up - target) * (up - target);
        let loss_down = (down - target) * (down - target);
        let numeric = (loss_up - loss_down) / (2.0 * STEP);
        let ga = EmbeddingModel::gradient_at(&analytic, idx);
        // The 1e-6 floor keeps finite-difference cancellation noise from
        // dominating parameters whose true gradient is ~0.
        let rel = (ga - numeric).abs() / (ga.abs() + numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}
