//! Bagged CART trees with Gini splits and per-split feature subsampling.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{check_width, majority, Classifier, ClassifierParams, ClassifyError, Dataset, Trainer};
use crate::labels::{Label, NUM_LABELS};
use crate::seeds;

pub(super) const NAME: &str = "random_forest";

#[derive(Debug, Clone)]
pub struct RandomForest {
    pub n_trees: usize,
    /// `Some(0)` yields single-leaf trees; `None` grows until pure.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub seed: u64,
}

impl RandomForest {
    pub fn from_params(p: &ClassifierParams) -> Self {
        Self {
            n_trees: p.n_trees,
            max_depth: p.max_depth,
            min_leaf: p.min_leaf,
            seed: p.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf(Label),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Flat node arena; node 0 is the root. Rows with `x[feature] <= threshold`
/// go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> Label {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf(l) => return *l,
                Node::Split { feature, threshold, left, right } => {
                    i = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

fn gini(counts: &[usize; NUM_LABELS], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

struct Builder<'a, R: Rng> {
    data: &'a Dataset,
    max_depth: Option<usize>,
    min_leaf: usize,
    mtry: usize,
    rng: R,
    nodes: Vec<Node>,
}

struct BestSplit {
    score: f64,
    feature: usize,
    threshold: f64,
}

impl<R: Rng> Builder<'_, R> {
    fn label_counts(&self, rows: &[usize]) -> [usize; NUM_LABELS] {
        let mut c = [0usize; NUM_LABELS];
        for &i in rows {
            c[self.data.y[i] as usize] += 1;
        }
        c
    }

    fn best_split_on(&self, rows: &[usize], feature: usize) -> Option<BestSplit> {
        let mut sorted: Vec<(f64, Label)> = rows.iter().map(|&i| (self.data.x[i][feature], self.data.y[i])).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = sorted.len();
        let mut right = [0usize; NUM_LABELS];
        for &(_, l) in &sorted {
            right[l as usize] += 1;
        }
        let mut left = [0usize; NUM_LABELS];
        let mut best: Option<BestSplit> = None;
        for i in 0..n - 1 {
            let l = sorted[i].1 as usize;
            left[l] += 1;
            right[l] -= 1;
            let n_left = i + 1;
            if sorted[i].0 == sorted[i + 1].0 || n_left < self.min_leaf || n - n_left < self.min_leaf {
                continue;
            }
            let score = (n_left as f64 * gini(&left, n_left) + (n - n_left) as f64 * gini(&right, n - n_left)) / n as f64;
            if best.as_ref().is_none_or(|b| score < b.score) {
                best = Some(BestSplit {
                    score,
                    feature,
                    threshold: 0.5 * (sorted[i].0 + sorted[i + 1].0),
                });
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let counts = self.label_counts(&rows);
        let id = self.nodes.len();
        let leaf = majority(rows.iter().map(|&i| self.data.y[i]));
        self.nodes.push(Node::Leaf(leaf));
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || self.max_depth.is_some_and(|d| depth >= d) || rows.len() < 2 * self.min_leaf {
            return id;
        }

        // Examine `mtry` random features; keep drawing past that only while
        // no valid split has been found.
        let mut features: Vec<usize> = (0..self.data.width()).collect();
        features.shuffle(&mut self.rng);
        let mut best: Option<BestSplit> = None;
        for (tried, &f) in features.iter().enumerate() {
            if tried >= self.mtry && best.is_some() {
                break;
            }
            if let Some(s) = self.best_split_on(&rows, f) {
                if best.as_ref().is_none_or(|b| s.score < b.score) {
                    best = Some(s);
                }
            }
        }
        let Some(split) = best else { return id };
        let (l_rows, r_rows): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&i| self.data.x[i][split.feature] <= split.threshold);
        let left = self.grow(l_rows, depth + 1);
        let right = self.grow(r_rows, depth + 1);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

impl Trainer for RandomForest {
    fn name(&self) -> &'static str {
        NAME
    }

    fn fit(&self, data: &Dataset) -> Result<Box<dyn Classifier>, ClassifyError> {
        if data.is_empty() {
            return Err(ClassifyError::Empty);
        }
        if self.n_trees == 0 {
            return Err(ClassifyError::BadParam("n_trees must be at least 1".into()));
        }
        if let Some(&bad) = data.y.iter().find(|&&l| l as usize >= NUM_LABELS) {
            return Err(ClassifyError::BadParam(format!("label {bad} outside 0..{NUM_LABELS}")));
        }
        let width = data.width();
        let mtry = ((width as f64).sqrt().floor() as usize).max(1);
        let n = data.len();
        let trees = (0..self.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = seeds::rng(self.seed, &format!("tree-{t}"));
                let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let mut b = Builder {
                    data,
                    max_depth: self.max_depth,
                    min_leaf: self.min_leaf.max(1),
                    mtry,
                    rng,
                    nodes: Vec::new(),
                };
                b.grow(sample, 0);
                Tree { nodes: b.nodes }
            })
            .collect();
        Ok(Box::new(RandomForestModel { n_features: width, trees }))
    }
}

impl Classifier for RandomForestModel {
    fn kind(&self) -> &'static str {
        NAME
    }

    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_row(&self, row: &[f64]) -> Result<Label, ClassifyError> {
        check_width(self.n_features, row)?;
        Ok(majority(self.trees.iter().map(|t| t.predict(row))))
    }

    fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("serializable")
    }
}

pub(super) fn load(v: Value) -> Result<Box<dyn Classifier>, ClassifyError> {
    Ok(Box::new(serde_json::from_value::<RandomForestModel>(v)?))
}
