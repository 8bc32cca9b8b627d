//! Bag-of-tokens document encoder trained with a triplet margin loss.
//!
//! A document is tokenized as `title <sep> abstract`, its token embedding
//! rows are mean-pooled into an `h`-vector `m`, and the output is the affine
//! map `y = m P + b` with `P` of shape `h x out`.
//!
//! Checkpoint layout (little-endian): magic `NBE1`, `u32` vocab size, `u32` h,
//! `u8` 0, `u32` out, then `f64` token table, projection and bias, then the
//! vocabulary as `u32` length-prefixed UTF-8 strings.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus_graph::Document;
use crate::embedding::{self, EmbeddingTable, Measure, MAGIC};
use crate::error::{Error, Result};
use crate::seed;
use crate::triple_miner::Triple;

pub const UNK: &str = "<unk>";
pub const SEP: &str = "<sep>";
pub const UNK_ID: usize = 0;
pub const SEP_ID: usize = 1;

/// Lowercased alphanumeric runs.
pub fn tokenize_text(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Title tokens, the separator, then abstract tokens.
pub fn tokenize(doc: &Document) -> Vec<String> {
    let mut tokens = tokenize_text(&doc.title);
    tokens.push(SEP.to_string());
    tokens.extend(tokenize_text(&doc.abstract_text));
    tokens
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// `<unk>` and `<sep>` first, then every corpus token in sorted order.
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a Document>) -> Self {
        let mut seen = BTreeSet::new();
        for d in docs {
            seen.extend(tokenize_text(&d.title));
            seen.extend(tokenize_text(&d.abstract_text));
        }
        seen.remove(UNK);
        seen.remove(SEP);
        Self::from_tokens([UNK.to_string(), SEP.to_string()].into_iter().chain(seen).collect())
            .expect("reserved tokens lead")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[UNK_ID] != UNK || tokens[SEP_ID] != SEP {
            return Err(Error::Data("vocabulary must start with <unk>, <sep>".into()));
        }
        let index: HashMap<String, usize> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != tokens.len() {
            return Err(Error::Data("duplicate vocabulary entry".into()));
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn ids(&self, doc: &Document) -> Vec<usize> {
        tokenize(doc).iter().map(|t| self.id(t)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub vocab: Vocab,
    pub h: usize,
    pub out_dim: usize,
    /// `vocab.len() x h`, row-major.
    pub token_table: Vec<f64>,
    /// `h x out_dim`, row-major.
    pub projection: Vec<f64>,
    pub projection_bias: Vec<f64>,
}

impl EncoderParams {
    pub fn from_parts(
        vocab: Vocab,
        h: usize,
        out_dim: usize,
        token_table: Vec<f64>,
        projection: Vec<f64>,
        projection_bias: Vec<f64>,
    ) -> Result<Self> {
        if h == 0 || out_dim == 0 {
            return Err(Error::Argument("encoder dims must be positive".into()));
        }
        if token_table.len() != vocab.len() * h || projection.len() != h * out_dim || projection_bias.len() != out_dim {
            return Err(Error::Data("encoder parameter shapes do not match dims".into()));
        }
        let p = EncoderParams {
            vocab,
            h,
            out_dim,
            token_table,
            projection,
            projection_bias,
        };
        if !p.is_finite() {
            return Err(Error::Data("non-finite encoder parameter".into()));
        }
        Ok(p)
    }

    /// Token rows ~ N(0, 1), projection ~ N(0, 1/h), zero bias.
    pub fn init(vocab: Vocab, h: usize, out_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = seed::rng_for(seed, "encoder_init");
        let tok = Normal::new(0.0, 1.0).expect("valid normal");
        let proj = Normal::new(0.0, 1.0 / (h.max(1) as f64).sqrt()).expect("valid normal");
        let token_table = (0..vocab.len() * h).map(|_| tok.sample(&mut rng)).collect();
        let projection = (0..h * out_dim).map(|_| proj.sample(&mut rng)).collect();
        Self::from_parts(vocab, h, out_dim, token_table, projection, vec![0.0; out_dim])
    }

    pub fn is_finite(&self) -> bool {
        self.token_table
            .iter()
            .chain(&self.projection)
            .chain(&self.projection_bias)
            .all(|v| v.is_finite())
    }

    pub fn parameter_count(&self) -> usize {
        self.token_table.len() + self.projection.len() + self.projection_bias.len()
    }

    /// Parameter `k` in flattened order: token table, projection, bias.
    fn param_mut(&mut self, k: usize) -> &mut f64 {
        let (t, p) = (self.token_table.len(), self.projection.len());
        if k < t {
            &mut self.token_table[k]
        } else if k < t + p {
            &mut self.projection[k - t]
        } else {
            &mut self.projection_bias[k - t - p]
        }
    }

    fn pool(&self, ids: &[usize]) -> Vec<f64> {
        let mut m = vec![0.0; self.h];
        for &t in ids {
            for (acc, v) in m.iter_mut().zip(&self.token_table[t * self.h..(t + 1) * self.h]) {
                *acc += v;
            }
        }
        let inv = 1.0 / ids.len() as f64;
        m.iter_mut().for_each(|v| *v *= inv);
        m
    }

    fn project(&self, m: &[f64]) -> Vec<f64> {
        let mut y = self.projection_bias.clone();
        for (i, &mi) in m.iter().enumerate() {
            for (yj, pij) in y
                .iter_mut()
                .zip(&self.projection[i * self.out_dim..(i + 1) * self.out_dim])
            {
                *yj += mi * pij;
            }
        }
        y
    }

    pub fn encode_ids(&self, ids: &[usize]) -> Result<Vec<f64>> {
        if ids.is_empty() {
            return Err(Error::Argument("cannot encode an empty token list".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&t| t >= self.vocab.len()) {
            return Err(Error::Argument(format!("token id {bad} outside vocabulary")));
        }
        Ok(self.project(&self.pool(ids)))
    }

    pub fn encode(&self, doc: &Document) -> Result<Vec<f64>> {
        self.encode_ids(&self.vocab.ids(doc))
    }

    /// Accumulates `d loss / d params` for one document given `g = d loss / d y`.
    fn backward(&self, ids: &[usize], g: &[f64], grad: &mut Gradient) {
        let m = self.pool(ids);
        for (b, gj) in grad.projection_bias.iter_mut().zip(g) {
            *b += gj;
        }
        if grad.bias_only {
            return;
        }
        let mut dm = vec![0.0; self.h];
        for (i, (&mi, dmi)) in m.iter().zip(dm.iter_mut()).enumerate() {
            let row = i * self.out_dim..(i + 1) * self.out_dim;
            for ((dp, &p), &gj) in grad.projection[row.clone()]
                .iter_mut()
                .zip(&self.projection[row])
                .zip(g)
            {
                *dp += mi * gj;
                *dmi += p * gj;
            }
        }
        let inv = 1.0 / ids.len() as f64;
        for &t in ids {
            let row = grad.tokens.entry(t).or_insert_with(|| vec![0.0; self.h]);
            for (r, d) in row.iter_mut().zip(&dm) {
                *r += d * inv;
            }
        }
    }

    fn apply(&mut self, grad: &Gradient, step: f64) {
        for (b, g) in self.projection_bias.iter_mut().zip(&grad.projection_bias) {
            *b -= step * g;
        }
        if grad.bias_only {
            return;
        }
        for (p, g) in self.projection.iter_mut().zip(&grad.projection) {
            *p -= step * g;
        }
        for (&t, row) in &grad.tokens {
            for (w, g) in self.token_table[t * self.h..(t + 1) * self.h].iter_mut().zip(row) {
                *w -= step * g;
            }
        }
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.vocab.len() as u32).to_le_bytes())?;
        w.write_all(&(self.h as u32).to_le_bytes())?;
        w.write_all(&[0])?;
        w.write_all(&(self.out_dim as u32).to_le_bytes())?;
        for v in self
            .token_table
            .iter()
            .chain(&self.projection)
            .chain(&self.projection_bias)
        {
            w.write_all(&v.to_le_bytes())?;
        }
        for t in self.vocab.tokens() {
            w.write_all(&(t.len() as u32).to_le_bytes())?;
            w.write_all(t.as_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let (v, h, _) = embedding::read_header(&mut r)?;
        let out_dim = embedding::read_u32(&mut r)? as usize;
        let mut read_f64s = |n: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; n * 8];
            embedding::read_exact(&mut r, &mut buf)?;
            Ok(buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect())
        };
        let token_table = read_f64s(v * h)?;
        let projection = read_f64s(h * out_dim)?;
        let bias = read_f64s(out_dim)?;
        let mut tokens = Vec::with_capacity(v);
        for _ in 0..v {
            let len = embedding::read_u32(&mut r)? as usize;
            let mut bytes = vec![0u8; len];
            embedding::read_exact(&mut r, &mut bytes)?;
            tokens.push(String::from_utf8(bytes).map_err(|e| Error::Data(format!("vocabulary entry: {e}")))?);
        }
        Self::from_parts(Vocab::from_tokens(tokens)?, h, out_dim, token_table, projection, bias)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_checkpoint(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(BufReader::new(file))
    }
}

#[derive(Debug, Clone)]
struct Gradient {
    bias_only: bool,
    tokens: BTreeMap<usize, Vec<f64>>,
    projection: Vec<f64>,
    projection_bias: Vec<f64>,
}

impl Gradient {
    fn zeros(p: &EncoderParams, bias_only: bool) -> Self {
        Gradient {
            bias_only,
            tokens: BTreeMap::new(),
            projection: if bias_only {
                Vec::new()
            } else {
                vec![0.0; p.projection.len()]
            },
            projection_bias: vec![0.0; p.out_dim],
        }
    }

    /// Dense view in parameter order: token table, projection, bias.
    fn flatten(&self, p: &EncoderParams) -> Vec<f64> {
        let mut tokens = vec![0.0; p.token_table.len()];
        for (&t, row) in &self.tokens {
            tokens[t * p.h..(t + 1) * p.h].copy_from_slice(row);
        }
        let projection = if self.bias_only {
            vec![0.0; p.projection.len()]
        } else {
            self.projection.clone()
        };
        tokens
            .into_iter()
            .chain(projection)
            .chain(self.projection_bias.clone())
            .collect()
    }
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `max(|q - p| - |q - n| + xi, 0)` with unsquared L2 distances.
pub fn triplet_loss(q: &[f64], p: &[f64], n: &[f64], xi: f64) -> Result<f64> {
    if q.len() != p.len() || q.len() != n.len() {
        return Err(Error::Argument(format!(
            "triplet dimensions differ: {}, {}, {}",
            q.len(),
            p.len(),
            n.len()
        )));
    }
    Ok((l2(q, p) - l2(q, n) + xi).max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletGrad {
    pub loss: f64,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub n: Vec<f64>,
}

/// Loss and subgradients; zero at the hinge and at zero-distance kinks.
pub fn triplet_loss_grad(q: &[f64], p: &[f64], n: &[f64], xi: f64) -> Result<TripletGrad> {
    let loss = triplet_loss(q, p, n, xi)?;
    let dim = q.len();
    let mut g = TripletGrad {
        loss,
        q: vec![0.0; dim],
        p: vec![0.0; dim],
        n: vec![0.0; dim],
    };
    if loss <= 0.0 {
        return Ok(g);
    }
    let (dp, dn) = (l2(q, p), l2(q, n));
    for i in 0..dim {
        if dp > 0.0 {
            let u = (q[i] - p[i]) / dp;
            g.q[i] += u;
            g.p[i] -= u;
        }
        if dn > 0.0 {
            let u = (q[i] - n[i]) / dn;
            g.q[i] -= u;
            g.n[i] += u;
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub effective_batch: usize,
    pub slack: f64,
    pub bias_only: bool,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub seed: u64,
}

impl Default for EncoderTrainConfig {
    fn default() -> Self {
        EncoderTrainConfig {
            epochs: 2,
            learning_rate: 0.5,
            batch_size: 8,
            effective_batch: 32,
            slack: 1.0,
            bias_only: false,
            hidden_dim: 64,
            out_dim: 32,
            seed: 0,
        }
    }
}

impl EncoderTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.slack >= 0.0 && self.slack.is_finite()) {
            problems.push(format!("slack {} must be >= 0", self.slack));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            problems.push(format!("learning_rate {} must be >= 0", self.learning_rate));
        }
        if self.batch_size == 0 || self.effective_batch == 0 || !self.effective_batch.is_multiple_of(self.batch_size) {
            problems.push(format!(
                "effective_batch ({}) must be a positive multiple of batch_size ({})",
                self.effective_batch, self.batch_size
            ));
        }
        if self.hidden_dim == 0 || self.out_dim == 0 {
            problems.push("hidden_dim and out_dim must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("encoder: {}", problems.join("; "))))
        }
    }
}

fn triple_token_ids(
    triples: &[Triple],
    docs: &HashMap<String, Document>,
    vocab: &Vocab,
) -> Result<Vec<[Vec<usize>; 3]>> {
    let mut cache: HashMap<&str, Vec<usize>> = HashMap::new();
    let mut lookup = |id: &crate::corpus_graph::PaperId| -> Result<Vec<usize>> {
        if let Some(ids) = cache.get(id.external_id.as_str()) {
            return Ok(ids.clone());
        }
        let doc = docs
            .get(&id.external_id)
            .ok_or_else(|| Error::Data(format!("no document for paper {}", id.external_id)))?;
        let ids = vocab.ids(doc);
        cache.insert(&doc.id, ids.clone());
        Ok(ids)
    };
    triples
        .iter()
        .map(|t| Ok([lookup(&t.query)?, lookup(&t.positive)?, lookup(&t.negative)?]))
        .collect()
}

fn accumulate(p: &EncoderParams, ids: &[Vec<usize>; 3], xi: f64, grad: &mut Gradient) -> Result<f64> {
    let q = p.encode_ids(&ids[0])?;
    let pos = p.encode_ids(&ids[1])?;
    let neg = p.encode_ids(&ids[2])?;
    let g = triplet_loss_grad(&q, &pos, &neg, xi)?;
    if g.loss > 0.0 {
        p.backward(&ids[0], &g.q, grad);
        p.backward(&ids[1], &g.p, grad);
        p.backward(&ids[2], &g.n, grad);
    }
    Ok(g.loss)
}

/// Minibatch SGD on the mean triplet loss. Gradients of consecutive
/// minibatches are summed until `effective_batch` triples have been seen (or
/// the epoch ends), then one step of size `learning_rate` is taken on their
/// mean. Returns the per-epoch mean loss, measured before each update.
pub fn train(
    triples: &[Triple],
    docs: &HashMap<String, Document>,
    p0: &EncoderParams,
    cfg: &EncoderTrainConfig,
) -> Result<(EncoderParams, Vec<f64>)> {
    cfg.validate()?;
    let ids = triple_token_ids(triples, docs, &p0.vocab)?;
    let mut params = p0.clone();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.shuffle(&mut seed::rng_for(cfg.seed, &format!("encoder_epoch_{epoch}")));
        let mut total = 0.0;
        for step in order.chunks(cfg.effective_batch) {
            let mut grad = Gradient::zeros(&params, cfg.bias_only);
            for batch in step.chunks(cfg.batch_size) {
                for &i in batch {
                    total += accumulate(&params, &ids[i], cfg.slack, &mut grad)?;
                }
            }
            params.apply(&grad, cfg.learning_rate / step.len() as f64);
        }
        if !params.is_finite() {
            return Err(Error::Data(format!("encoder diverged in epoch {epoch}")));
        }
        trace.push(if ids.is_empty() { 0.0 } else { total / ids.len() as f64 });
    }
    Ok((params, trace))
}

fn loss_of(p: &EncoderParams, ids: &[Vec<usize>; 3], xi: f64) -> Result<f64> {
    triplet_loss(
        &p.encode_ids(&ids[0])?,
        &p.encode_ids(&ids[1])?,
        &p.encode_ids(&ids[2])?,
        xi,
    )
}

/// Max relative error between the analytic gradient and central finite
/// differences over every parameter (only the bias when `bias_only`).
/// Relative error is `|a - f| / max(|a|, |f|, 1e-6)`.
pub fn grad_check(p: &EncoderParams, docs: [&Document; 3], xi: f64, eps: f64, bias_only: bool) -> Result<f64> {
    let ids = docs.map(|d| p.vocab.ids(d));
    let q = p.encode_ids(&ids[0])?;
    let pos = p.encode_ids(&ids[1])?;
    let neg = p.encode_ids(&ids[2])?;
    let loss = triplet_loss(&q, &pos, &neg, xi)?;
    let (dp, dn) = (l2(&q, &pos), l2(&q, &neg));
    if loss <= 1e-6 || dp <= 1e-6 || dn <= 1e-6 {
        return Err(Error::RejectedFixture(format!(
            "loss {loss:.3e}, distances {dp:.3e} / {dn:.3e} too close to a kink"
        )));
    }
    let mut grad = Gradient::zeros(p, bias_only);
    accumulate(p, &ids, xi, &mut grad)?;
    let analytic = grad.flatten(p);

    let bias_start = p.token_table.len() + p.projection.len();
    let range = if bias_only {
        bias_start..analytic.len()
    } else {
        0..analytic.len()
    };
    let mut worst: f64 = 0.0;
    let mut probe = p.clone();
    for k in range {
        let orig = *probe.param_mut(k);
        *probe.param_mut(k) = orig + eps;
        let up = loss_of(&probe, &ids, xi)?;
        *probe.param_mut(k) = orig - eps;
        let down = loss_of(&probe, &ids, xi)?;
        *probe.param_mut(k) = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[k];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
    }
    Ok(worst)
}

/// Encodes every document into an f32 table (row `i` = `docs[i]`).
pub fn encode_corpus(docs: &[Document], p: &EncoderParams) -> Result<EmbeddingTable> {
    let mut values = Vec::with_capacity(docs.len() * p.out_dim);
    for d in docs {
        values.extend(p.encode(d)?.into_iter().map(|v| v as f32));
    }
    EmbeddingTable::from_values(docs.len(), p.out_dim, values, Measure::Dot)
}
