//! Classifier roster: Bernoulli, Gaussian and multinomial naive Bayes,
//! k-nearest neighbors, and random forest.
//!
//! Each algorithm is a [`Trainer`] that produces a boxed [`Classifier`]. The
//! [`ClassifierRegistry`] maps names to trainer constructors and model
//! loaders so the harness can pick algorithms from configuration.

mod forest;
mod knn;
mod naive_bayes;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::labels::Label;

pub use forest::{RandomForest, RandomForestModel};
pub use knn::{Knn, KnnModel};
pub use naive_bayes::{BernoulliNb, BernoulliNbModel, GaussianNb, GaussianNbModel, MultinomialNb, MultinomialNbModel};

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("dataset is empty")]
    Empty,
    #[error("{rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("row {row} has width {got}, expected {expected}")]
    WidthMismatch { row: usize, expected: usize, got: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("classes absent from training data: {0:?}")]
    MissingClasses(Vec<Label>),
    #[error("class {class} has {n} samples, need at least 2")]
    TooFewSamples { class: Label, n: usize },
    #[error("negative feature {value} at row {row}, column {col}")]
    NegativeFeature { row: usize, col: usize, value: f64 },
    #[error("k = {k} invalid for {n} training rows")]
    BadK { k: usize, n: usize },
    #[error("invalid parameter: {0}")]
    BadParam(String),
    #[error("unknown classifier {0:?}")]
    UnknownKind(String),
    #[error("model file: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Feature rows with ordinal labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Label>,
    pub ids: Vec<String>,
    classes: Vec<Label>,
}

impl Dataset {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<Label>) -> Result<Self, ClassifyError> {
        let ids = (0..x.len()).map(|i| i.to_string()).collect();
        Self::with_ids(x, y, ids)
    }

    pub fn with_ids(x: Vec<Vec<f64>>, y: Vec<Label>, ids: Vec<String>) -> Result<Self, ClassifyError> {
        if x.len() != y.len() || ids.len() != y.len() {
            return Err(ClassifyError::LengthMismatch { rows: x.len(), labels: y.len() });
        }
        let width = x.first().map_or(0, Vec::len);
        for (row, r) in x.iter().enumerate() {
            if r.len() != width {
                return Err(ClassifyError::WidthMismatch { row, expected: width, got: r.len() });
            }
            if let Some(col) = r.iter().position(|v| !v.is_finite()) {
                return Err(ClassifyError::NonFinite { row, col });
            }
        }
        let classes = y.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        Ok(Self { x, y, ids, classes })
    }

    /// Declares the class set a model must cover; training fails if any of
    /// them has no rows.
    pub fn require_classes(mut self, classes: &[Label]) -> Self {
        let mut all: BTreeSet<Label> = self.classes.iter().copied().collect();
        all.extend(classes.iter().copied());
        self.classes = all.into_iter().collect();
        self
    }

    pub fn classes(&self) -> &[Label] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn width(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    pub(crate) fn class_rows(&self) -> BTreeMap<Label, Vec<usize>> {
        let mut m: BTreeMap<Label, Vec<usize>> = self.classes.iter().map(|&c| (c, Vec::new())).collect();
        for (i, &l) in self.y.iter().enumerate() {
            m.entry(l).or_default().push(i);
        }
        m
    }

    pub(crate) fn check_all_classes_present(&self) -> Result<(), ClassifyError> {
        let missing: Vec<Label> = self.class_rows().into_iter().filter(|(_, r)| r.is_empty()).map(|(c, _)| c).collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(ClassifyError::MissingClasses(missing))
        }
    }
}

/// A trained model. Prediction is read-only and reentrant.
pub trait Classifier: Send + Sync + fmt::Debug {
    fn kind(&self) -> &'static str;

    fn n_features(&self) -> usize;

    fn predict_row(&self, row: &[f64]) -> Result<Label, ClassifyError>;

    fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<Label>, ClassifyError> {
        rows.iter().map(|r| self.predict_row(r)).collect()
    }

    /// Model parameters for persistence.
    fn to_json(&self) -> Value;
}

/// One algorithm with its hyperparameters bound.
pub trait Trainer: Send + Sync {
    fn name(&self) -> &'static str;

    /// Fewest rows any present class may have.
    fn min_class_size(&self) -> usize {
        1
    }

    fn fit(&self, data: &Dataset) -> Result<Box<dyn Classifier>, ClassifyError>;
}

pub(crate) fn check_width(expected: usize, row: &[f64]) -> Result<(), ClassifyError> {
    if row.len() == expected {
        Ok(())
    } else {
        Err(ClassifyError::WidthMismatch { row: 0, expected, got: row.len() })
    }
}

/// Index of the largest score; the first one wins ties.
pub(crate) fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Most frequent label; ties go to the smaller label.
pub(crate) fn majority<I: IntoIterator<Item = Label>>(labels: I) -> Label {
    let mut counts: BTreeMap<Label, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_insert(0) += 1;
    }
    let mut best: Option<(Label, usize)> = None;
    for (l, c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((l, c));
        }
    }
    best.map_or(0, |(l, _)| l)
}

/// Hyperparameters for every registered algorithm. Each trainer reads the
/// fields it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    /// Bernoulli NB cut point; `None` means `1 / n_features`.
    pub binarize_threshold: Option<f64>,
    /// Multinomial NB multiplier turning proportions into pseudo-counts.
    pub count_scale: f64,
    pub knn_k: usize,
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for ClassifierParams {
    fn default() -> Self {
        Self {
            binarize_threshold: None,
            count_scale: 1000.0,
            knn_k: 5,
            n_trees: 100,
            max_depth: None,
            min_leaf: 1,
            seed: 0,
        }
    }
}

type TrainerCtor = fn(&ClassifierParams) -> Box<dyn Trainer>;
type ModelLoader = fn(Value) -> Result<Box<dyn Classifier>, ClassifyError>;

struct Entry {
    build: TrainerCtor,
    load: ModelLoader,
}

#[derive(Serialize, Deserialize)]
struct SavedClassifier {
    format: u32,
    kind: String,
    model: Value,
}

/// Name → algorithm table.
pub struct ClassifierRegistry {
    entries: BTreeMap<&'static str, Entry>,
}

impl Default for ClassifierRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(naive_bayes::BERNOULLI, |p| Box::new(BernoulliNb::from_params(p)), naive_bayes::load_bernoulli);
        r.register(naive_bayes::GAUSSIAN, |_| Box::new(GaussianNb), naive_bayes::load_gaussian);
        r.register(naive_bayes::MULTINOMIAL, |p| Box::new(MultinomialNb::from_params(p)), naive_bayes::load_multinomial);
        r.register(knn::NAME, |p| Box::new(Knn::from_params(p)), knn::load);
        r.register(forest::NAME, |p| Box::new(RandomForest::from_params(p)), forest::load);
        r
    }
}

impl ClassifierRegistry {
    pub fn empty() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn register(&mut self, name: &'static str, build: TrainerCtor, load: ModelLoader) {
        self.entries.insert(name, Entry { build, load });
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn trainer(&self, name: &str, params: &ClassifierParams) -> Result<Box<dyn Trainer>, ClassifyError> {
        let e = self.entries.get(name).ok_or_else(|| ClassifyError::UnknownKind(name.to_string()))?;
        Ok((e.build)(params))
    }

    pub fn save<W: Write>(&self, model: &dyn Classifier, writer: W) -> Result<(), ClassifyError> {
        let saved = SavedClassifier {
            format: 1,
            kind: model.kind().to_string(),
            model: model.to_json(),
        };
        serde_json::to_writer_pretty(writer, &saved)?;
        Ok(())
    }

    pub fn load<R: Read>(&self, reader: R) -> Result<Box<dyn Classifier>, ClassifyError> {
        let saved: SavedClassifier = serde_json::from_reader(reader)?;
        let e = self
            .entries
            .get(saved.kind.as_str())
            .ok_or_else(|| ClassifyError::UnknownKind(saved.kind.clone()))?;
        (e.load)(saved.model)
    }
}

/// Fraction of exact matches.
pub fn accuracy(predicted: &[Label], truth: &[Label]) -> Result<f64, ClassifyError> {
    if predicted.len() != truth.len() {
        return Err(ClassifyError::LengthMismatch { rows: predicted.len(), labels: truth.len() });
    }
    if truth.is_empty() {
        return Err(ClassifyError::Empty);
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Writes `region_id,true_label,predicted_label`.
pub fn write_predictions_csv<W: Write>(writer: W, ids: &[String], truth: &[Label], predicted: &[Label]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["region_id", "true_label", "predicted_label"])?;
    for ((id, t), p) in ids.iter().zip(truth).zip(predicted) {
        w.write_record([id.as_str(), &t.to_string(), &p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
