//! Brute-force k-nearest neighbors under Euclidean distance.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{check_width, Classifier, ClassifierParams, ClassifyError, Dataset, Trainer};
use crate::labels::Label;

pub(super) const NAME: &str = "knn";

#[derive(Debug, Clone)]
pub struct Knn {
    pub k: usize,
}

impl Knn {
    pub fn from_params(p: &ClassifierParams) -> Self {
        Self { k: p.knn_k }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Label>,
}

impl Trainer for Knn {
    fn name(&self) -> &'static str {
        NAME
    }

    fn fit(&self, data: &Dataset) -> Result<Box<dyn Classifier>, ClassifyError> {
        if self.k == 0 || self.k > data.len() {
            return Err(ClassifyError::BadK { k: self.k, n: data.len() });
        }
        Ok(Box::new(KnnModel {
            k: self.k,
            x: data.x.clone(),
            y: data.y.clone(),
        }))
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KnnModel {
    /// Training-row indices of the k nearest rows, closest first; equal
    /// distances keep the lower index first.
    pub fn neighbors(&self, row: &[f64]) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = self.x.iter().enumerate().map(|(i, r)| (squared_distance(r, row), i)).collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.into_iter().take(self.k).map(|(_, i)| i).collect()
    }
}

impl Classifier for KnnModel {
    fn kind(&self) -> &'static str {
        NAME
    }

    fn n_features(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    fn predict_row(&self, row: &[f64]) -> Result<Label, ClassifyError> {
        check_width(self.n_features(), row)?;
        Ok(super::majority(self.neighbors(row).into_iter().map(|i| self.y[i])))
    }

    fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("serializable")
    }
}

pub(super) fn load(v: Value) -> Result<Box<dyn Classifier>, ClassifyError> {
    Ok(Box::new(serde_json::from_value::<KnnModel>(v)?))
}
