//! Region feature blocks and their assembly into a feature matrix.
//!
//! Blocks:
//! - `baseline`: the region's topic mixture.
//! - `smooth_avg`: `(θ_r + m·mean(θ_neighbors)) / (1 + m)`.
//! - `smooth_concat`: `[θ_r ; m·mean(θ_neighbors)]`, twice the topic count.
//! - `slang_topics`: mixture under a slang-only topic model, plus a
//!   zero-mass indicator column.
//! - `slang_ratio`: mean and population standard deviation of per-record
//!   slang ratios.
//! - `tfidf`: tf-idf weights over the vocabulary.
//!
//! Neighbor means only use neighbors that have a mixture of their own. A
//! region with no such neighbor falls back to itself.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::corpus::{slang_ratio, TokenizedRecord};
use crate::geo::AdjacencyGraph;
use crate::topics::Inferred;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("multiplier must be non-negative and finite, got {0}")]
    BadMultiplier(f64),
    #[error("vector length {got} does not match expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("block {block} is missing regions: {missing:?}")]
    RegionMismatch { block: BlockKind, missing: Vec<String> },
    #[error("block {block} has regions absent from the first block: {extra:?}")]
    ExtraRegions { block: BlockKind, extra: Vec<String> },
    #[error("no feature blocks to assemble")]
    NoBlocks,
    #[error("unknown block kind {0:?}")]
    UnknownBlock(String),
    #[error("feature csv: {0}")]
    Format(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockKind {
    Baseline,
    SlangTopics,
    SlangRatio,
    SmoothAvg,
    SmoothConcat,
    Tfidf,
}

impl BlockKind {
    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Baseline => "baseline",
            BlockKind::SlangTopics => "slang_topics",
            BlockKind::SlangRatio => "slang_ratio",
            BlockKind::SmoothAvg => "smooth_avg",
            BlockKind::SmoothConcat => "smooth_concat",
            BlockKind::Tfidf => "tfidf",
        }
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BlockKind {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "baseline" => BlockKind::Baseline,
            "slang_topics" => BlockKind::SlangTopics,
            "slang_ratio" => BlockKind::SlangRatio,
            "smooth_avg" => BlockKind::SmoothAvg,
            "smooth_concat" => BlockKind::SmoothConcat,
            "tfidf" => BlockKind::Tfidf,
            other => return Err(FeatureError::UnknownBlock(other.to_string())),
        })
    }
}

/// A named group of columns with one equal-width row per region.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock {
    pub kind: BlockKind,
    pub labels: Vec<String>,
    pub rows: BTreeMap<String, Vec<f64>>,
}

impl FeatureBlock {
    fn new(kind: BlockKind, labels: Vec<String>, rows: BTreeMap<String, Vec<f64>>) -> Result<Self, FeatureError> {
        let expected = labels.len();
        if let Some(row) = rows.values().find(|r| r.len() != expected) {
            return Err(FeatureError::LengthMismatch { expected, got: row.len() });
        }
        Ok(Self { kind, labels, rows })
    }

    pub fn width(&self) -> usize {
        self.labels.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn topic_labels(prefix: &str, k: usize) -> Vec<String> {
    (0..k).map(|i| format!("{prefix}t{i}")).collect()
}

fn common_width(rows: &BTreeMap<String, Vec<f64>>) -> usize {
    rows.values().next().map_or(0, Vec::len)
}

pub fn baseline_block(thetas: &BTreeMap<String, Vec<f64>>) -> Result<FeatureBlock, FeatureError> {
    let k = common_width(thetas);
    FeatureBlock::new(BlockKind::Baseline, topic_labels("", k), thetas.clone())
}

fn check_multiplier(m: f64) -> Result<(), FeatureError> {
    if m >= 0.0 && m.is_finite() {
        Ok(())
    } else {
        Err(FeatureError::BadMultiplier(m))
    }
}

fn mean_of(vectors: &[&[f64]], k: usize) -> Result<Vec<f64>, FeatureError> {
    let mut mean = vec![0.0; k];
    for v in vectors {
        if v.len() != k {
            return Err(FeatureError::LengthMismatch { expected: k, got: v.len() });
        }
        for (m, x) in mean.iter_mut().zip(v.iter()) {
            *m += x;
        }
    }
    let n = vectors.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// Weighted-average smoothing of one mixture toward its neighbors' mean.
/// With no neighbors, or `m = 0`, returns `theta` unchanged.
pub fn smooth_weighted(theta: &[f64], neighbors: &[&[f64]], m: f64) -> Result<Vec<f64>, FeatureError> {
    check_multiplier(m)?;
    if m == 0.0 || neighbors.is_empty() {
        return Ok(theta.to_vec());
    }
    let mean = mean_of(neighbors, theta.len())?;
    Ok(theta.iter().zip(&mean).map(|(t, n)| (t + m * n) / (1.0 + m)).collect())
}

fn neighbor_rows<'a>(thetas: &'a BTreeMap<String, Vec<f64>>, adjacency: &AdjacencyGraph, region: &str) -> Vec<&'a [f64]> {
    adjacency
        .neighbors(region)
        .into_iter()
        .flatten()
        .filter_map(|n| thetas.get(n).map(Vec::as_slice))
        .collect()
}

pub fn smooth_avg_block(
    thetas: &BTreeMap<String, Vec<f64>>,
    adjacency: &AdjacencyGraph,
    m: f64,
) -> Result<FeatureBlock, FeatureError> {
    check_multiplier(m)?;
    let k = common_width(thetas);
    let mut rows = BTreeMap::new();
    for (id, theta) in thetas {
        let ns = neighbor_rows(thetas, adjacency, id);
        rows.insert(id.clone(), smooth_weighted(theta, &ns, m)?);
    }
    FeatureBlock::new(BlockKind::SmoothAvg, topic_labels("", k), rows)
}

/// Appends `m · mean(θ_neighbors)` to each region's mixture.
pub fn smooth_concat_block(
    thetas: &BTreeMap<String, Vec<f64>>,
    adjacency: &AdjacencyGraph,
    m: f64,
) -> Result<FeatureBlock, FeatureError> {
    check_multiplier(m)?;
    let k = common_width(thetas);
    let mut rows = BTreeMap::new();
    for (id, theta) in thetas {
        let ns = neighbor_rows(thetas, adjacency, id);
        let mean = if ns.is_empty() { theta.clone() } else { mean_of(&ns, k)? };
        let mut row = theta.clone();
        row.extend(mean.iter().map(|x| m * x));
        rows.insert(id.clone(), row);
    }
    let mut labels = topic_labels("", k);
    labels.extend(topic_labels("n_", k));
    FeatureBlock::new(BlockKind::SmoothConcat, labels, rows)
}

/// Slang-model mixtures plus a `zero_mass` indicator; regions whose slang
/// document was empty carry the uniform mixture and indicator 1.
pub fn slang_topic_block(slang: &BTreeMap<String, Inferred>) -> Result<FeatureBlock, FeatureError> {
    let k = slang.values().next().map_or(0, |i| i.theta.len());
    let rows = slang
        .iter()
        .map(|(id, inf)| {
            let mut row = if inf.empty { vec![1.0 / k as f64; k] } else { inf.theta.clone() };
            row.push(if inf.empty { 1.0 } else { 0.0 });
            (id.clone(), row)
        })
        .collect();
    let mut labels = topic_labels("s", k);
    labels.push("zero_mass".into());
    FeatureBlock::new(BlockKind::SlangTopics, labels, rows)
}

pub fn slang_ratio_block(records_by_region: &BTreeMap<String, Vec<&TokenizedRecord>>) -> Result<FeatureBlock, FeatureError> {
    let rows = records_by_region
        .iter()
        .filter(|(_, recs)| !recs.is_empty())
        .map(|(id, recs)| {
            let ratios: Vec<f64> = recs.iter().map(|r| slang_ratio(r)).collect();
            let n = ratios.len() as f64;
            let mean = ratios.iter().sum::<f64>() / n;
            let var = ratios.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            (id.clone(), vec![mean, var.sqrt()])
        })
        .collect();
    FeatureBlock::new(BlockKind::SlangRatio, vec!["mean".into(), "std".into()], rows)
}

pub fn tfidf_block(rows: Vec<(String, Vec<f64>)>, tokens: &[String]) -> Result<FeatureBlock, FeatureError> {
    FeatureBlock::new(BlockKind::Tfidf, tokens.to_vec(), rows.into_iter().collect())
}

/// Column range and weight of one block inside a matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpan {
    pub kind: BlockKind,
    pub weight: f64,
    pub start: usize,
    pub width: usize,
}

/// Region × feature matrix with rows in sorted region order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub spans: Vec<BlockSpan>,
    pub columns: Vec<String>,
    pub region_ids: Vec<String>,
    pub data: Vec<Vec<f64>>,
}

/// Concatenates blocks column-wise, scaling each by its weight. All blocks
/// must cover the same set of regions.
pub fn assemble(blocks: &[(FeatureBlock, f64)]) -> Result<FeatureMatrix, FeatureError> {
    let (first, _) = blocks.first().ok_or(FeatureError::NoBlocks)?;
    let region_ids: Vec<String> = first.rows.keys().cloned().collect();
    let universe: BTreeSet<&String> = first.rows.keys().collect();
    for (b, _) in &blocks[1..] {
        let missing: Vec<String> = universe.iter().filter(|r| !b.rows.contains_key(**r)).map(|r| r.to_string()).collect();
        if !missing.is_empty() {
            return Err(FeatureError::RegionMismatch { block: b.kind, missing });
        }
        let extra: Vec<String> = b.rows.keys().filter(|r| !universe.contains(r)).cloned().collect();
        if !extra.is_empty() {
            return Err(FeatureError::ExtraRegions { block: b.kind, extra });
        }
    }

    let mut spans = Vec::new();
    let mut columns = Vec::new();
    for (b, w) in blocks {
        spans.push(BlockSpan {
            kind: b.kind,
            weight: *w,
            start: columns.len(),
            width: b.width(),
        });
        columns.extend(b.labels.iter().map(|l| format!("{}.{l}", b.kind)));
    }
    let data = region_ids
        .iter()
        .map(|id| {
            blocks
                .iter()
                .flat_map(|(b, w)| b.rows[id].iter().map(move |x| x * w))
                .collect()
        })
        .collect();
    Ok(FeatureMatrix {
        spans,
        columns,
        region_ids,
        data,
    })
}

impl FeatureMatrix {
    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, region: &str) -> Option<&[f64]> {
        self.region_ids
            .binary_search_by(|r| r.as_str().cmp(region))
            .ok()
            .map(|i| self.data[i].as_slice())
    }

    /// Keeps only the listed regions (in this matrix's order).
    pub fn retain_regions<F: Fn(&str) -> bool>(&self, keep: F) -> FeatureMatrix {
        let (ids, data) = self
            .region_ids
            .iter()
            .zip(&self.data)
            .filter(|(id, _)| keep(id))
            .map(|(id, row)| (id.clone(), row.clone()))
            .unzip();
        FeatureMatrix {
            spans: self.spans.clone(),
            columns: self.columns.clone(),
            region_ids: ids,
            data,
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), FeatureError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["region_id".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for (id, row) in self.region_ids.iter().zip(&self.data) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|x| format!("{x}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| FeatureError::Csv(e.into()))?;
        Ok(())
    }

    /// Reads a matrix written by [`FeatureMatrix::write_csv`]. Block spans
    /// are recovered from the `block.column` header prefixes; weights are
    /// not stored and read back as 1.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, FeatureError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.get(0) != Some("region_id") {
            return Err(FeatureError::Format("first column must be region_id".into()));
        }
        let columns: Vec<String> = header.iter().skip(1).map(String::from).collect();
        let mut spans: Vec<BlockSpan> = Vec::new();
        for (i, c) in columns.iter().enumerate() {
            let kind: BlockKind = c
                .split_once('.')
                .ok_or_else(|| FeatureError::Format(format!("column {c:?} lacks a block prefix")))?
                .0
                .parse()?;
            match spans.last_mut() {
                Some(s) if s.kind == kind => s.width += 1,
                _ => spans.push(BlockSpan {
                    kind,
                    weight: 1.0,
                    start: i,
                    width: 1,
                }),
            }
        }
        let mut region_ids = Vec::new();
        let mut data = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            region_ids.push(rec[0].to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|s| s.parse::<f64>().map_err(|e| FeatureError::Format(format!("{s:?}: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            data.push(row);
        }
        Ok(Self {
            spans,
            columns,
            region_ids,
            data,
        })
    }
}
