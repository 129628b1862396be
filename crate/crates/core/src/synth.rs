//! Synthetic worlds with planted structure: a grid of regions, topic-word
//! distributions, a spatially autocorrelated field of region mixtures, a
//! slang vocabulary with its own topics, and outcome rates driven by one
//! "risk" topic.
//!
//! Output uses the same file formats the pipeline ingests, so every stage can
//! be tested end to end against known parameters.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use chrono::{TimeZone, Utc};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{write_jsonl, RawRecord};
use crate::geo::{Region, RegionRegistry};
use crate::labels::{RateRow, RateTable, MIN_COUNT};
use crate::seeds;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("geo: {0}")]
    Geo(#[from] crate::geo::GeoError),
    #[error("labels: {0}")]
    Labels(#[from] crate::labels::LabelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub rows: usize,
    pub cols: usize,
    pub spacing_deg: f64,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub k: usize,
    pub vocab_size: usize,
    /// Fraction of each topic's mass spread uniformly over the whole
    /// vocabulary; 0 gives disjoint word blocks.
    pub topic_overlap: f64,
    /// Dirichlet concentration of the raw per-cell mixtures.
    pub theta_concentration: f64,
    /// Gaussian kernel bandwidth in grid cells; 0 disables smoothing.
    pub kernel_bandwidth: f64,
    /// Upper bound on the L1 distance between edge-adjacent cells' mixtures.
    pub smoothness_bound: Option<f64>,
    pub risk_topic: usize,
    pub slang_k: usize,
    pub slang_vocab_size: usize,
    pub slang_concentration: f64,
    pub slang_rate_min: f64,
    pub slang_rate_max: f64,
    pub population_min: u64,
    pub population_max: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            rows: 10,
            cols: 10,
            spacing_deg: 0.25,
            origin_lat: 39.0,
            origin_lon: -80.0,
            k: 5,
            vocab_size: 200,
            topic_overlap: 0.05,
            theta_concentration: 0.5,
            kernel_bandwidth: 1.5,
            smoothness_bound: None,
            risk_topic: 0,
            slang_k: 3,
            slang_vocab_size: 30,
            slang_concentration: 0.5,
            slang_rate_min: 0.0,
            slang_rate_max: 0.2,
            population_min: 5_000,
            population_max: 200_000,
        }
    }
}

impl WorldConfig {
    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.k < 2 {
            return bad("k must be at least 2");
        }
        if self.vocab_size < 2 * self.k {
            return bad("vocab_size must be at least 2k");
        }
        if self.rows < 2 || self.cols < 2 {
            return bad("grid must be at least 2x2");
        }
        if self.risk_topic >= self.k {
            return bad("risk_topic must be < k");
        }
        if !(0.0..=1.0).contains(&self.topic_overlap) {
            return bad("topic_overlap must be in [0, 1]");
        }
        if self.theta_concentration <= 0.0 || self.slang_concentration <= 0.0 {
            return bad("concentrations must be positive");
        }
        if self.kernel_bandwidth < 0.0 || self.smoothness_bound.is_some_and(|b| b < 0.0) {
            return bad("kernel bandwidth and smoothness bound must be non-negative");
        }
        if self.slang_k < 1 || self.slang_vocab_size < self.slang_k {
            return bad("slang vocabulary must have at least slang_k terms");
        }
        if !(0.0 <= self.slang_rate_min && self.slang_rate_min <= self.slang_rate_max && self.slang_rate_max <= 1.0) {
            return bad("slang rates must satisfy 0 <= min <= max <= 1");
        }
        if self.population_min < 100 || self.population_min > self.population_max {
            return bad("population range must satisfy 100 <= min <= max");
        }
        let max_lat = self.origin_lat + self.spacing_deg * (self.rows - 1) as f64;
        let max_lon = self.origin_lon + self.spacing_deg * (self.cols - 1) as f64;
        if !(self.spacing_deg > 0.0) || !(-90.0..=90.0).contains(&self.origin_lat) || max_lat > 90.0 || max_lon > 180.0 || self.origin_lon < -180.0 {
            return bad("grid leaves the valid coordinate range");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedWorld {
    pub config: WorldConfig,
    pub seed: u64,
    /// Row-major over the grid; region `i` sits at `(i / cols, i % cols)`.
    pub regions: Vec<Region>,
    pub words: Vec<String>,
    pub topic_word: Vec<Vec<f64>>,
    pub thetas: Vec<Vec<f64>>,
    pub slang_terms: Vec<String>,
    pub slang_topic_word: Vec<Vec<f64>>,
    pub slang_thetas: Vec<Vec<f64>>,
    pub slang_rates: Vec<f64>,
}

fn dirichlet<R: Rng>(rng: &mut R, alpha: f64, k: usize) -> Vec<f64> {
    let g = Gamma::new(alpha, 1.0).expect("positive shape");
    loop {
        let v: Vec<f64> = (0..k).map(|_| g.sample(rng)).collect();
        let s: f64 = v.iter().sum();
        if s > 0.0 {
            return v.into_iter().map(|x| x / s).collect();
        }
    }
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub fn region_id(index: usize) -> String {
    format!("{:05}", index + 1)
}

fn block_topics<R: Rng>(rng: &mut R, k: usize, v: usize, overlap: f64) -> Vec<Vec<f64>> {
    let block = v / k;
    (0..k)
        .map(|t| {
            let start = t * block;
            let end = if t == k - 1 { v } else { start + block };
            let inner = dirichlet(rng, 1.0, end - start);
            (0..v)
                .map(|w| {
                    let own = if (start..end).contains(&w) { inner[w - start] } else { 0.0 };
                    (1.0 - overlap) * own + overlap / v as f64
                })
                .collect()
        })
        .collect()
}

/// Builds a planted world. Deterministic in `(config, seed)`.
pub fn generate_world(config: &WorldConfig, seed: u64) -> Result<PlantedWorld, SynthError> {
    config.validate()?;
    let (rows, cols, k) = (config.rows, config.cols, config.k);
    let n = rows * cols;

    let mut rng = seeds::rng(seed, "world/topics");
    let topic_word = block_topics(&mut rng, k, config.vocab_size, config.topic_overlap);
    let words = (0..config.vocab_size).map(|i| format!("w{i:04}")).collect();

    let mut rng = seeds::rng(seed, "world/thetas");
    let raw: Vec<Vec<f64>> = (0..n).map(|_| dirichlet(&mut rng, config.theta_concentration, k)).collect();
    let cell = |i: usize| ((i / cols) as f64, (i % cols) as f64);
    let mut thetas: Vec<Vec<f64>> = if config.kernel_bandwidth > 0.0 {
        let h2 = 2.0 * config.kernel_bandwidth * config.kernel_bandwidth;
        (0..n)
            .map(|i| {
                let (ri, ci) = cell(i);
                let mut acc = vec![0.0; k];
                let mut wsum = 0.0;
                for (j, r) in raw.iter().enumerate() {
                    let (rj, cj) = cell(j);
                    let w = (-((ri - rj).powi(2) + (ci - cj).powi(2)) / h2).exp();
                    wsum += w;
                    for (a, x) in acc.iter_mut().zip(r) {
                        *a += w * x;
                    }
                }
                acc.into_iter().map(|a| a / wsum).collect()
            })
            .collect()
    } else {
        raw
    };

    if let Some(bound) = config.smoothness_bound {
        let max_adj = adjacent_pairs(rows, cols)
            .map(|(a, b)| l1(&thetas[a], &thetas[b]))
            .fold(0.0, f64::max);
        if max_adj > bound {
            let lambda = bound / max_adj;
            let mean: Vec<f64> = (0..k).map(|t| thetas.iter().map(|th| th[t]).sum::<f64>() / n as f64).collect();
            for th in &mut thetas {
                for (x, m) in th.iter_mut().zip(&mean) {
                    *x = m + lambda * (*x - m);
                }
            }
        }
    }

    let mut rng = seeds::rng(seed, "world/regions");
    let regions = (0..n)
        .map(|i| {
            let (r, c) = cell(i);
            Region {
                id: region_id(i),
                lat: config.origin_lat + r * config.spacing_deg,
                lon: config.origin_lon + c * config.spacing_deg,
                population: rng.random_range(config.population_min..=config.population_max),
            }
        })
        .collect();

    let mut rng = seeds::rng(seed, "world/slang");
    let slang_topic_word = block_topics(&mut rng, config.slang_k, config.slang_vocab_size, 0.0);
    let slang_terms = (0..config.slang_vocab_size).map(|i| format!("s{i:04}")).collect();
    let slang_thetas = (0..n).map(|_| dirichlet(&mut rng, config.slang_concentration, config.slang_k)).collect();
    let slang_rates = (0..n)
        .map(|_| {
            if config.slang_rate_max > config.slang_rate_min {
                rng.random_range(config.slang_rate_min..config.slang_rate_max)
            } else {
                config.slang_rate_min
            }
        })
        .collect();

    Ok(PlantedWorld {
        config: config.clone(),
        seed,
        regions,
        words,
        topic_word,
        thetas,
        slang_terms,
        slang_topic_word,
        slang_thetas,
        slang_rates,
    })
}

/// Edge-adjacent cell pairs `(a, b)` with `a < b`.
pub fn adjacent_pairs(rows: usize, cols: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..rows * cols).flat_map(move |i| {
        let (r, c) = (i / cols, i % cols);
        let right = (c + 1 < cols).then_some((i, i + 1));
        let down = (r + 1 < rows).then_some((i, i + cols));
        right.into_iter().chain(down)
    })
}

impl PlantedWorld {
    pub fn registry(&self) -> RegionRegistry {
        RegionRegistry::new(self.regions.clone()).expect("generated regions are valid")
    }

    pub fn theta_of(&self, region: &str) -> Option<&[f64]> {
        self.regions.iter().position(|r| r.id == region).map(|i| self.thetas[i].as_slice())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub years: Vec<i32>,
    pub docs_per_region: usize,
    /// Fraction of regions that only get `sparse_docs_per_region` records
    /// per year.
    pub sparse_fraction: f64,
    pub sparse_docs_per_region: usize,
    pub tokens_per_doc: usize,
    /// Probability that a record is emitted without its region.
    pub unlocated_fraction: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            years: vec![2014, 2015, 2016],
            docs_per_region: 60,
            sparse_fraction: 0.0,
            sparse_docs_per_region: 10,
            tokens_per_doc: 12,
            unlocated_fraction: 0.0,
        }
    }
}

/// Region indices that receive sparse corpora under `config`.
pub fn sparse_regions(world: &PlantedWorld, config: &CorpusConfig, seed: u64) -> Vec<bool> {
    let n = world.regions.len();
    let n_sparse = (config.sparse_fraction.clamp(0.0, 1.0) * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeds::rng(seed, "corpus/sparse"));
    let mut flags = vec![false; n];
    for &i in &order[..n_sparse] {
        flags[i] = true;
    }
    flags
}

/// Samples records from the standard topic-model generative process under
/// each region's planted mixture. A fixed share of every record's tokens,
/// `round(slang_rate · tokens_per_doc)`, is replaced by slang drawn from the
/// region's slang mixture.
pub fn generate_corpus(world: &PlantedWorld, config: &CorpusConfig, seed: u64) -> Vec<RawRecord> {
    let sparse = sparse_regions(world, config, seed);
    let topic_dists: Vec<WeightedIndex<f64>> = world.topic_word.iter().map(|r| WeightedIndex::new(r).expect("valid topic")).collect();
    let slang_dists: Vec<WeightedIndex<f64>> =
        world.slang_topic_word.iter().map(|r| WeightedIndex::new(r).expect("valid slang topic")).collect();
    let len = config.tokens_per_doc;

    world
        .regions
        .par_iter()
        .enumerate()
        .flat_map_iter(|(ri, region)| {
            let theta = WeightedIndex::new(&world.thetas[ri]).expect("valid theta");
            let slang_theta = WeightedIndex::new(&world.slang_thetas[ri]).expect("valid slang theta");
            let n_slang = (world.slang_rates[ri] * len as f64).round() as usize;
            let n_docs = if sparse[ri] { config.sparse_docs_per_region } else { config.docs_per_region };
            let mut out = Vec::with_capacity(n_docs * config.years.len());
            for &year in &config.years {
                let mut rng = seeds::rng(seed, &format!("corpus/{}/{year}", region.id));
                for d in 0..n_docs {
                    let mut tokens: Vec<&str> = (0..len)
                        .map(|_| world.words[topic_dists[theta.sample(&mut rng)].sample(&mut rng)].as_str())
                        .collect();
                    for pos in index::sample(&mut rng, len, n_slang.min(len)) {
                        tokens[pos] = world.slang_terms[slang_dists[slang_theta.sample(&mut rng)].sample(&mut rng)].as_str();
                    }
                    let located = rng.random::<f64>() >= config.unlocated_fraction;
                    let ts = Utc.with_ymd_and_hms(year, 6, 1, 0, 0, 0).unwrap() + chrono::Duration::minutes(d as i64);
                    out.push(RawRecord {
                        id: format!("{}-{year}-{d}", region.id),
                        text: tokens.join(" "),
                        region: located.then(|| region.id.clone()),
                        timestamp: ts,
                    });
                }
            }
            out
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateConfig {
    pub years: Vec<i32>,
    pub outcome: String,
    pub base: f64,
    pub gain: f64,
    pub noise_sd: f64,
    /// Probability that a region-year is forced under the case-count
    /// suppression threshold.
    pub suppressed_fraction: f64,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self {
            years: vec![2014, 2015, 2016],
            outcome: "outcome".into(),
            base: 10.0,
            gain: 100.0,
            noise_sd: 5.0,
            suppressed_fraction: 0.0,
        }
    }
}

/// `rate = max(0, base + gain · θ[risk] + N(0, noise_sd))` per region-year.
pub fn generate_rates(world: &PlantedWorld, config: &RateConfig, seed: u64) -> Result<RateTable, SynthError> {
    if !(config.noise_sd >= 0.0) {
        return Err(SynthError::Config("noise_sd must be non-negative".into()));
    }
    let risk = world.config.risk_topic;
    let normal = Normal::new(0.0, config.noise_sd).map_err(|e| SynthError::Config(e.to_string()))?;
    let mut rows = Vec::new();
    for (ri, region) in world.regions.iter().enumerate() {
        for &year in &config.years {
            let mut rng = seeds::rng(seed, &format!("rates/{}/{year}", region.id));
            let noise = if config.noise_sd > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            let rate = (config.base + config.gain * world.thetas[ri][risk] + noise).max(0.0);
            let expected = (rate * region.population as f64 / 1e5).round() as u64;
            let count = if rng.random::<f64>() < config.suppressed_fraction {
                rng.random_range(0..MIN_COUNT)
            } else {
                expected.max(MIN_COUNT)
            };
            rows.push(RateRow {
                region_id: region.id.clone(),
                year,
                outcome: config.outcome.clone(),
                rate,
                count,
                population: region.population,
                suppressed: false,
            });
        }
    }
    Ok(RateTable::new(rows)?)
}

/// Writes `records.jsonl`, `regions.csv`, `rates.csv`, `slang.txt` and
/// `world_truth.json` into `dir`.
pub fn write_all(dir: &Path, world: &PlantedWorld, records: &[RawRecord], rates: &RateTable) -> Result<(), SynthError> {
    std::fs::create_dir_all(dir)?;
    write_jsonl(BufWriter::new(File::create(dir.join("records.jsonl"))?), records)?;
    world.registry().write_csv(File::create(dir.join("regions.csv"))?)?;
    rates.write_csv(File::create(dir.join("rates.csv"))?)?;
    std::fs::write(dir.join("slang.txt"), world.slang_terms.join("\n") + "\n")?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join("world_truth.json"))?), world)?;
    Ok(())
}
