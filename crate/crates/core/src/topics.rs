//! Latent Dirichlet allocation by collapsed Gibbs sampling, fold-in
//! inference of document mixtures, and topical assignment of unlocated
//! records.
//!
//! Training resamples every token's topic given all other assignments:
//!
//! ```text
//! p(z = k | rest) ∝ (n_dk + α) · (n_kw + β) / (n_k + V·β)
//! ```
//!
//! and reports `(n_kw + β) / (n_k + V·β)` from the final state as the
//! topic-word matrix. Inference holds that matrix fixed and samples only the
//! document's assignments, averaging `(n_dk + α) / (n_d + K·α)` over the last
//! quarter of sweeps.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Vocabulary;
use crate::seeds;

#[derive(Debug, Error)]
pub enum TopicError {
    #[error("topic count must be at least 1")]
    NoTopics,
    #[error("corpus contains no tokens")]
    EmptyCorpus,
    #[error("alpha and beta must be positive, got alpha={alpha}, beta={beta}")]
    BadPrior { alpha: f64, beta: f64 },
    #[error("token index {index} outside vocabulary of size {size}")]
    TokenOutOfRange { index: usize, size: usize },
    #[error("vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("cosine similarity undefined for a zero vector")]
    ZeroVector,
    #[error("no candidate regions to assign to")]
    NoRegions,
    #[error("model vocabulary hash {model} does not match supplied vocabulary {supplied}")]
    VocabMismatch { model: String, supplied: String },
    #[error("model file: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdaConfig {
    pub k: usize,
    /// Symmetric document-topic prior; `None` means `50 / K`.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub sweeps: usize,
    pub seed: u64,
}

impl LdaConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            alpha: None,
            beta: 0.01,
            sweeps: 500,
            seed: 0,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.k.max(1) as f64)
    }
}

pub const DEFAULT_INFER_SWEEPS: usize = 100;

/// A trained topic model. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    k: usize,
    alpha: f64,
    beta: f64,
    seed: u64,
    sweeps: usize,
    vocab_hash: String,
    topic_word: Vec<Vec<f64>>,
    // word-major copy of topic_word for inference
    word_topic: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SavedModel {
    format: u32,
    k: usize,
    alpha: f64,
    beta: f64,
    seed: u64,
    sweeps: usize,
    vocab_hash: String,
    topic_word: Vec<Vec<f64>>,
}

impl LdaModel {
    /// Builds a model from explicit parameters. Rows of `topic_word` must be
    /// probability vectors of equal length.
    pub fn from_parts(topic_word: Vec<Vec<f64>>, alpha: f64, beta: f64) -> Result<Self, TopicError> {
        if topic_word.is_empty() {
            return Err(TopicError::NoTopics);
        }
        if !(alpha > 0.0 && beta > 0.0) {
            return Err(TopicError::BadPrior { alpha, beta });
        }
        let v = topic_word[0].len();
        if let Some(row) = topic_word.iter().find(|r| r.len() != v) {
            return Err(TopicError::LengthMismatch(v, row.len()));
        }
        Ok(Self::assemble(topic_word, alpha, beta, 0, 0, String::new()))
    }

    fn assemble(topic_word: Vec<Vec<f64>>, alpha: f64, beta: f64, seed: u64, sweeps: usize, vocab_hash: String) -> Self {
        let k = topic_word.len();
        let v = topic_word[0].len();
        let mut word_topic = vec![0.0; v * k];
        for (t, row) in topic_word.iter().enumerate() {
            for (w, &p) in row.iter().enumerate() {
                word_topic[w * k + t] = p;
            }
        }
        Self {
            k,
            alpha,
            beta,
            seed,
            sweeps,
            vocab_hash,
            topic_word,
            word_topic,
        }
    }

    pub fn with_vocab_hash(mut self, hash: String) -> Self {
        self.vocab_hash = hash;
        self
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn vocab_size(&self) -> usize {
        self.topic_word[0].len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    pub fn topic_word(&self) -> &[Vec<f64>] {
        &self.topic_word
    }

    fn phi(&self, word: usize) -> &[f64] {
        &self.word_topic[word * self.k..(word + 1) * self.k]
    }

    pub fn save<W: Write>(&self, writer: W) -> Result<(), TopicError> {
        let saved = SavedModel {
            format: 1,
            k: self.k,
            alpha: self.alpha,
            beta: self.beta,
            seed: self.seed,
            sweeps: self.sweeps,
            vocab_hash: self.vocab_hash.clone(),
            topic_word: self.topic_word.clone(),
        };
        serde_json::to_writer(writer, &saved)?;
        Ok(())
    }

    /// Loads a saved model and checks it was trained on `vocab`.
    pub fn load<R: Read>(reader: R, vocab: &Vocabulary) -> Result<Self, TopicError> {
        let saved: SavedModel = serde_json::from_reader(reader)?;
        let supplied = vocab.hash();
        if saved.vocab_hash != supplied {
            return Err(TopicError::VocabMismatch {
                model: saved.vocab_hash,
                supplied,
            });
        }
        if saved.topic_word.is_empty() || saved.topic_word.len() != saved.k {
            return Err(TopicError::NoTopics);
        }
        Ok(Self::assemble(
            saved.topic_word,
            saved.alpha,
            saved.beta,
            saved.seed,
            saved.sweeps,
            saved.vocab_hash,
        ))
    }

    /// Stable hash of the parameters, for train/test isolation checks.
    pub fn fingerprint(&self) -> String {
        let mut buf = Vec::new();
        self.save(&mut buf).expect("in-memory serialization");
        seeds::fingerprint(&buf)
    }
}

fn sample_index<R: Rng>(rng: &mut R, cumulative: &[f64]) -> usize {
    let total = *cumulative.last().unwrap();
    let u = rng.random::<f64>() * total;
    cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1)
}

/// Trains a topic model on documents given as vocabulary indices.
///
/// Empty documents are ignored; the corpus as a whole must contain tokens.
pub fn train_lda(docs: &[Vec<usize>], vocab_size: usize, config: &LdaConfig) -> Result<LdaModel, TopicError> {
    let k = config.k;
    if k < 1 {
        return Err(TopicError::NoTopics);
    }
    let (alpha, beta) = (config.alpha(), config.beta);
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(TopicError::BadPrior { alpha, beta });
    }
    let docs: Vec<&Vec<usize>> = docs.iter().filter(|d| !d.is_empty()).collect();
    if docs.is_empty() {
        return Err(TopicError::EmptyCorpus);
    }
    if let Some(&index) = docs.iter().flat_map(|d| d.iter()).find(|&&w| w >= vocab_size) {
        return Err(TopicError::TokenOutOfRange { index, size: vocab_size });
    }

    let mut rng = seeds::rng(config.seed, "lda-train");
    let v_beta = vocab_size as f64 * beta;
    let mut n_wk = vec![0u32; vocab_size * k];
    let mut n_k = vec![0u32; k];
    let mut n_dk = vec![0u32; docs.len() * k];
    let mut z: Vec<Vec<usize>> = Vec::with_capacity(docs.len());

    for (d, doc) in docs.iter().enumerate() {
        let zd: Vec<usize> = doc.iter().map(|_| rng.random_range(0..k)).collect();
        for (&w, &t) in doc.iter().zip(&zd) {
            n_wk[w * k + t] += 1;
            n_k[t] += 1;
            n_dk[d * k + t] += 1;
        }
        z.push(zd);
    }

    let mut cumulative = vec![0.0; k];
    for _ in 0..config.sweeps {
        for (d, doc) in docs.iter().enumerate() {
            let ndk = &mut n_dk[d * k..(d + 1) * k];
            for (i, &w) in doc.iter().enumerate() {
                let old = z[d][i];
                n_wk[w * k + old] -= 1;
                n_k[old] -= 1;
                ndk[old] -= 1;

                let nwk = &n_wk[w * k..(w + 1) * k];
                let mut acc = 0.0;
                for t in 0..k {
                    acc += (ndk[t] as f64 + alpha) * (nwk[t] as f64 + beta) / (n_k[t] as f64 + v_beta);
                    cumulative[t] = acc;
                }
                let new = sample_index(&mut rng, &cumulative);

                z[d][i] = new;
                n_wk[w * k + new] += 1;
                n_k[new] += 1;
                ndk[new] += 1;
            }
        }
    }

    let topic_word = (0..k)
        .map(|t| {
            let denom = n_k[t] as f64 + v_beta;
            (0..vocab_size).map(|w| (n_wk[w * k + t] as f64 + beta) / denom).collect()
        })
        .collect();
    Ok(LdaModel::assemble(topic_word, alpha, beta, config.seed, config.sweeps, String::new()))
}

/// Result of folding a document into a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct Inferred {
    pub theta: Vec<f64>,
    /// True when the document had no in-vocabulary tokens and `theta` is the
    /// uniform prior.
    pub empty: bool,
}

/// Estimates a document's topic mixture with the topic-word matrix held
/// fixed. Token indices outside the model vocabulary are dropped.
pub fn infer_theta(model: &LdaModel, doc: &[usize], sweeps: usize, seed: u64) -> Inferred {
    let k = model.k;
    let v = model.vocab_size();
    let doc: Vec<usize> = doc.iter().copied().filter(|&w| w < v).collect();
    if doc.is_empty() {
        return Inferred {
            theta: vec![1.0 / k as f64; k],
            empty: true,
        };
    }
    let sweeps = sweeps.max(1);
    let burn = sweeps - sweeps.div_ceil(4);
    let alpha = model.alpha;
    let denom = doc.len() as f64 + k as f64 * alpha;

    let mut rng = seeds::rng(seed, "lda-infer");
    let mut n_dk = vec![0u32; k];
    let mut z: Vec<usize> = doc
        .iter()
        .map(|_| {
            let t = rng.random_range(0..k);
            n_dk[t] += 1;
            t
        })
        .collect();

    let mut sum = vec![0.0; k];
    let mut kept = 0usize;
    let mut cumulative = vec![0.0; k];
    for s in 0..sweeps {
        for (i, &w) in doc.iter().enumerate() {
            n_dk[z[i]] -= 1;
            let phi = model.phi(w);
            let mut acc = 0.0;
            for t in 0..k {
                acc += (n_dk[t] as f64 + alpha) * phi[t];
                cumulative[t] = acc;
            }
            let new = sample_index(&mut rng, &cumulative);
            z[i] = new;
            n_dk[new] += 1;
        }
        if s >= burn {
            for t in 0..k {
                sum[t] += (n_dk[t] as f64 + alpha) / denom;
            }
            kept += 1;
        }
    }
    let mut theta: Vec<f64> = sum.into_iter().map(|x| x / kept as f64).collect();
    let total: f64 = theta.iter().sum();
    theta.iter_mut().for_each(|x| *x /= total);
    Inferred { theta, empty: false }
}

/// Per-id seed for inference so results do not depend on iteration order.
pub fn doc_seed(seed: u64, id: &str) -> u64 {
    seeds::derive(seed, id)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, TopicError> {
    if a.len() != b.len() {
        return Err(TopicError::LengthMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(TopicError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(0.0, 1.0))
}

/// Picks the region whose mixture is most cosine-similar to the record's
/// inferred mixture. Ties go to the smallest region id. Returns `None` when
/// the record has no in-vocabulary tokens.
pub fn assign_unlocated(
    model: &LdaModel,
    doc: &[usize],
    region_thetas: &BTreeMap<String, Vec<f64>>,
    sweeps: usize,
    seed: u64,
) -> Result<Option<String>, TopicError> {
    if region_thetas.is_empty() {
        return Err(TopicError::NoRegions);
    }
    let inferred = infer_theta(model, doc, sweeps, seed);
    if inferred.empty {
        return Ok(None);
    }
    let mut best: Option<(&String, f64)> = None;
    for (id, theta) in region_thetas {
        let s = cosine_similarity(&inferred.theta, theta)?;
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((id, s));
        }
    }
    Ok(best.map(|(id, _)| id.clone()))
}

/// `exp(-log-likelihood / tokens)` of held-out documents, each scored under
/// its own inferred mixture.
pub fn perplexity(model: &LdaModel, docs: &[Vec<usize>], sweeps: usize, seed: u64) -> Result<f64, TopicError> {
    let v = model.vocab_size();
    let mut ll = 0.0;
    let mut n = 0usize;
    for (i, doc) in docs.iter().enumerate() {
        let doc: Vec<usize> = doc.iter().copied().filter(|&w| w < v).collect();
        if doc.is_empty() {
            continue;
        }
        let theta = infer_theta(model, &doc, sweeps, doc_seed(seed, &i.to_string())).theta;
        for &w in &doc {
            let p: f64 = model.phi(w).iter().zip(&theta).map(|(p, t)| p * t).sum();
            ll += p.ln();
        }
        n += doc.len();
    }
    if n == 0 {
        return Err(TopicError::EmptyCorpus);
    }
    Ok((-ll / n as f64).exp())
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Greedy one-to-one matching of recovered topics to reference topics by
/// ascending total-variation distance. Returns `(recovered, reference, tv)`
/// triples ordered by reference index.
pub fn greedy_match(recovered: &[Vec<f64>], reference: &[Vec<f64>]) -> Vec<(usize, usize, f64)> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, r) in recovered.iter().enumerate() {
        for (j, p) in reference.iter().enumerate() {
            pairs.push((total_variation(r, p), i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_r = vec![false; recovered.len()];
    let mut used_p = vec![false; reference.len()];
    let mut out = Vec::new();
    for (tv, i, j) in pairs {
        if !used_r[i] && !used_p[j] {
            used_r[i] = true;
            used_p[j] = true;
            out.push((i, j, tv));
        }
    }
    out.sort_by_key(|&(_, j, _)| j);
    out
}

/// A mixture labelled with the region or document it describes.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicDistribution {
    pub id: String,
    pub theta: Vec<f64>,
}

pub fn write_theta_csv<W: Write>(writer: W, rows: &[TopicDistribution]) -> Result<(), TopicError> {
    let k = rows.first().map_or(0, |r| r.theta.len());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["region_id".to_string()];
    header.extend((0..k).map(|i| format!("theta_{i}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.id.clone()];
        rec.extend(r.theta.iter().map(|x| format!("{x}")));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| TopicError::Csv(e.into()))?;
    Ok(())
}
