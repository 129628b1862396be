//! Naive Bayes variants over continuous topic features.
//!
//! Topic proportions are not naturally binary or count-valued. The Bernoulli
//! variant binarizes at a threshold (default `1 / n_features`, the uniform
//! level); the multinomial variant rounds `x · count_scale` to pseudo-counts.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{argmax, check_width, Classifier, ClassifierParams, ClassifyError, Dataset, Trainer};
use crate::labels::Label;

pub(super) const BERNOULLI: &str = "bernoulli_nb";
pub(super) const GAUSSIAN: &str = "gaussian_nb";
pub(super) const MULTINOMIAL: &str = "multinomial_nb";

fn log_priors(data: &Dataset) -> Vec<f64> {
    let n = data.len() as f64;
    data.class_rows().values().map(|rows| (rows.len() as f64 / n).ln()).collect()
}

#[derive(Debug, Clone, Default)]
pub struct BernoulliNb {
    pub threshold: Option<f64>,
}

impl BernoulliNb {
    pub fn from_params(p: &ClassifierParams) -> Self {
        Self { threshold: p.binarize_threshold }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernoulliNbModel {
    pub classes: Vec<Label>,
    pub threshold: f64,
    pub log_prior: Vec<f64>,
    /// P(feature = 1 | class), add-one smoothed.
    pub p_on: Vec<Vec<f64>>,
}

impl Trainer for BernoulliNb {
    fn name(&self) -> &'static str {
        BERNOULLI
    }

    fn fit(&self, data: &Dataset) -> Result<Box<dyn Classifier>, ClassifyError> {
        if data.is_empty() {
            return Err(ClassifyError::Empty);
        }
        data.check_all_classes_present()?;
        let f = data.width();
        let threshold = self.threshold.unwrap_or(1.0 / f.max(1) as f64);
        if !threshold.is_finite() {
            return Err(ClassifyError::BadParam(format!("binarize threshold {threshold}")));
        }
        let p_on = data
            .class_rows()
            .values()
            .map(|rows| {
                (0..f)
                    .map(|j| {
                        let on = rows.iter().filter(|&&i| data.x[i][j] > threshold).count();
                        (on as f64 + 1.0) / (rows.len() as f64 + 2.0)
                    })
                    .collect()
            })
            .collect();
        Ok(Box::new(BernoulliNbModel {
            classes: data.classes().to_vec(),
            threshold,
            log_prior: log_priors(data),
            p_on,
        }))
    }
}

impl BernoulliNbModel {
    pub fn log_posteriors(&self, row: &[f64]) -> Vec<f64> {
        self.p_on
            .iter()
            .zip(&self.log_prior)
            .map(|(p, lp)| {
                lp + row
                    .iter()
                    .zip(p)
                    .map(|(&x, &p)| if x > self.threshold { p.ln() } else { (1.0 - p).ln() })
                    .sum::<f64>()
            })
            .collect()
    }
}

impl Classifier for BernoulliNbModel {
    fn kind(&self) -> &'static str {
        BERNOULLI
    }

    fn n_features(&self) -> usize {
        self.p_on.first().map_or(0, Vec::len)
    }

    fn predict_row(&self, row: &[f64]) -> Result<Label, ClassifyError> {
        check_width(self.n_features(), row)?;
        Ok(self.classes[argmax(&self.log_posteriors(row))])
    }

    fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("serializable")
    }
}

pub(super) fn load_bernoulli(v: Value) -> Result<Box<dyn Classifier>, ClassifyError> {
    Ok(Box::new(serde_json::from_value::<BernoulliNbModel>(v)?))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GaussianNb;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNbModel {
    pub classes: Vec<Label>,
    pub log_prior: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub vars: Vec<Vec<f64>>,
}

fn mean_var(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

impl Trainer for GaussianNb {
    fn name(&self) -> &'static str {
        GAUSSIAN
    }

    fn min_class_size(&self) -> usize {
        2
    }

    fn fit(&self, data: &Dataset) -> Result<Box<dyn Classifier>, ClassifyError> {
        if data.is_empty() {
            return Err(ClassifyError::Empty);
        }
        let by_class = data.class_rows();
        if let Some((&class, rows)) = by_class.iter().find(|(_, rows)| rows.len() < 2) {
            return Err(ClassifyError::TooFewSamples { class, n: rows.len() });
        }
        let f = data.width();
        let max_var = (0..f)
            .map(|j| mean_var(data.x.iter().map(|r| r[j])).1)
            .fold(0.0, f64::max);
        // Variance floor; an all-constant dataset gets an absolute floor.
        let floor = if max_var > 0.0 { 1e-9 * max_var } else { 1e-9 };
        let mut means = Vec::new();
        let mut vars = Vec::new();
        for rows in by_class.values() {
            let (m, v): (Vec<f64>, Vec<f64>) = (0..f)
                .map(|j| {
                    let (m, v) = mean_var(rows.iter().map(|&i| data.x[i][j]));
                    (m, v.max(floor))
                })
                .unzip();
            means.push(m);
            vars.push(v);
        }
        Ok(Box::new(GaussianNbModel {
            classes: data.classes().to_vec(),
            log_prior: log_priors(data),
            means,
            vars,
        }))
    }
}

impl GaussianNbModel {
    pub fn log_posteriors(&self, row: &[f64]) -> Vec<f64> {
        (0..self.classes.len())
            .map(|c| {
                self.log_prior[c]
                    + row
                        .iter()
                        .zip(self.means[c].iter().zip(&self.vars[c]))
                        .map(|(&x, (&m, &v))| -0.5 * (2.0 * std::f64::consts::PI * v).ln() - (x - m).powi(2) / (2.0 * v))
                        .sum::<f64>()
            })
            .collect()
    }
}

impl Classifier for GaussianNbModel {
    fn kind(&self) -> &'static str {
        GAUSSIAN
    }

    fn n_features(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    fn predict_row(&self, row: &[f64]) -> Result<Label, ClassifyError> {
        check_width(self.n_features(), row)?;
        Ok(self.classes[argmax(&self.log_posteriors(row))])
    }

    fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("serializable")
    }
}

pub(super) fn load_gaussian(v: Value) -> Result<Box<dyn Classifier>, ClassifyError> {
    Ok(Box::new(serde_json::from_value::<GaussianNbModel>(v)?))
}

#[derive(Debug, Clone)]
pub struct MultinomialNb {
    pub count_scale: f64,
}

impl Default for MultinomialNb {
    fn default() -> Self {
        Self { count_scale: 1000.0 }
    }
}

impl MultinomialNb {
    pub fn from_params(p: &ClassifierParams) -> Self {
        Self { count_scale: p.count_scale }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultinomialNbModel {
    pub classes: Vec<Label>,
    pub count_scale: f64,
    pub log_prior: Vec<f64>,
    /// log P(feature | class), add-one smoothed.
    pub log_prob: Vec<Vec<f64>>,
}

fn pseudo_counts(row: &[f64], scale: f64) -> impl Iterator<Item = f64> + '_ {
    row.iter().map(move |x| (x * scale).round())
}

impl Trainer for MultinomialNb {
    fn name(&self) -> &'static str {
        MULTINOMIAL
    }

    fn fit(&self, data: &Dataset) -> Result<Box<dyn Classifier>, ClassifyError> {
        if data.is_empty() {
            return Err(ClassifyError::Empty);
        }
        if !(self.count_scale > 0.0 && self.count_scale.is_finite()) {
            return Err(ClassifyError::BadParam(format!("count scale {}", self.count_scale)));
        }
        for (row, r) in data.x.iter().enumerate() {
            if let Some((col, &value)) = r.iter().enumerate().find(|(_, &v)| v < 0.0) {
                return Err(ClassifyError::NegativeFeature { row, col, value });
            }
        }
        let f = data.width();
        let log_prob = data
            .class_rows()
            .values()
            .map(|rows| {
                let mut counts = vec![0.0; f];
                for &i in rows {
                    for (c, x) in counts.iter_mut().zip(pseudo_counts(&data.x[i], self.count_scale)) {
                        *c += x;
                    }
                }
                let total: f64 = counts.iter().sum::<f64>() + f as f64;
                counts.iter().map(|c| ((c + 1.0) / total).ln()).collect()
            })
            .collect();
        Ok(Box::new(MultinomialNbModel {
            classes: data.classes().to_vec(),
            count_scale: self.count_scale,
            log_prior: log_priors(data),
            log_prob,
        }))
    }
}

impl MultinomialNbModel {
    /// Negative inputs count as zero at prediction time.
    pub fn log_posteriors(&self, row: &[f64]) -> Vec<f64> {
        self.log_prob
            .iter()
            .zip(&self.log_prior)
            .map(|(lp_f, lp)| {
                lp + pseudo_counts(row, self.count_scale)
                    .zip(lp_f)
                    .map(|(n, l)| n.max(0.0) * l)
                    .sum::<f64>()
            })
            .collect()
    }
}

impl Classifier for MultinomialNbModel {
    fn kind(&self) -> &'static str {
        MULTINOMIAL
    }

    fn n_features(&self) -> usize {
        self.log_prob.first().map_or(0, Vec::len)
    }

    fn predict_row(&self, row: &[f64]) -> Result<Label, ClassifyError> {
        check_width(self.n_features(), row)?;
        Ok(self.classes[argmax(&self.log_posteriors(row))])
    }

    fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("serializable")
    }
}

pub(super) fn load_multinomial(v: Value) -> Result<Box<dyn Classifier>, ClassifyError> {
    Ok(Box::new(serde_json::from_value::<MultinomialNbModel>(v)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bernoulli_hand_example() {
        let mut x = vec![vec![1.0]; 5];
        x.extend(vec![vec![0.0]; 5]);
        let y = [vec![1; 5], vec![0; 5]].concat();
        let d = Dataset::new(x, y).unwrap();
        let nb = BernoulliNb { threshold: Some(0.5) };
        let m = nb.fit(&d).unwrap();
        assert_eq!(m.predict_row(&[1.0]).unwrap(), 1);
        assert_eq!(m.predict_row(&[0.0]).unwrap(), 0);
        let json = m.to_json();
        let model: BernoulliNbModel = serde_json::from_value(json).unwrap();
        assert!((model.p_on[1][0] - 6.0 / 7.0).abs() < 1e-15);
        assert!((model.p_on[0][0] - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn bernoulli_prior_dominates_uniform_features() {
        let x = vec![vec![0.5, 0.5]; 7];
        let y = vec![2, 2, 2, 2, 2, 4, 4];
        let m = BernoulliNb::default().fit(&Dataset::new(x, y).unwrap()).unwrap();
        assert_eq!(m.predict_row(&[0.9, 0.1]).unwrap(), 2);
    }

    #[test]
    fn bernoulli_feature_permutation_invariant() {
        let x = vec![vec![0.9, 0.0, 0.2], vec![0.8, 0.1, 0.6], vec![0.1, 0.7, 0.9], vec![0.0, 0.9, 0.1], vec![0.6, 0.6, 0.0]];
        let y = vec![0, 0, 1, 1, 0];
        let perm = |r: &Vec<f64>| vec![r[2], r[0], r[1]];
        let nb = BernoulliNb { threshold: Some(0.5) };
        let a = nb.fit(&Dataset::new(x.clone(), y.clone()).unwrap()).unwrap();
        let b = nb.fit(&Dataset::new(x.iter().map(perm).collect(), y).unwrap()).unwrap();
        for r in &x {
            assert_eq!(a.predict_row(r).unwrap(), b.predict_row(&perm(r)).unwrap());
        }
    }

    #[test]
    fn bernoulli_missing_class() {
        let d = Dataset::new(vec![vec![1.0], vec![0.0]], vec![0, 1]).unwrap().require_classes(&[5]);
        assert!(matches!(BernoulliNb::default().fit(&d), Err(ClassifyError::MissingClasses(m)) if m == vec![5]));
    }

    #[test]
    fn gaussian_midpoint_and_hand_density() {
        let x = vec![vec![-1.0], vec![1.0], vec![9.0], vec![11.0]];
        let y = vec![0, 0, 1, 1];
        let d = Dataset::new(x, y).unwrap();
        let m = GaussianNb.fit(&d).unwrap();
        assert_eq!(m.predict_row(&[4.9]).unwrap(), 0);
        assert_eq!(m.predict_row(&[5.1]).unwrap(), 1);
        let model: GaussianNbModel = serde_json::from_value(m.to_json()).unwrap();
        // class 0: mean 0, var 1; N(2; 0, 1) with prior 1/2
        let hand = 0.5f64.ln() + (-(2.0f64 * 2.0) / 2.0).exp().ln() - (2.0 * std::f64::consts::PI).sqrt().ln();
        assert!((model.log_posteriors(&[2.0])[0] - hand).abs() < 1e-12);
        // class 1: mean 10, var 1
        let hand1 = 0.5f64.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - 64.0 / 2.0;
        assert!((model.log_posteriors(&[2.0])[1] - hand1).abs() < 1e-12);
    }

    #[test]
    fn gaussian_scale_invariant() {
        let x = vec![vec![0.1, 2.0], vec![0.3, 1.0], vec![0.2, 1.5], vec![0.9, 0.2], vec![0.7, 0.1], vec![0.8, 0.4]];
        let y = vec![1, 1, 1, 3, 3, 3];
        let tests = vec![vec![0.5, 1.0], vec![0.4, 0.3], vec![0.6, 1.9], vec![0.15, 0.0]];
        let a = GaussianNb.fit(&Dataset::new(x.clone(), y.clone()).unwrap()).unwrap();
        for c in [0.01, 3.0, 250.0] {
            let scaled: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| v * c).collect()).collect();
            let b = GaussianNb.fit(&Dataset::new(scaled, y.clone()).unwrap()).unwrap();
            for t in &tests {
                let ts: Vec<f64> = t.iter().map(|v| v * c).collect();
                assert_eq!(a.predict_row(t).unwrap(), b.predict_row(&ts).unwrap());
            }
        }
    }

    #[test]
    fn gaussian_needs_two_per_class() {
        let d = Dataset::new(vec![vec![0.0], vec![1.0], vec![2.0]], vec![0, 0, 1]).unwrap();
        assert!(matches!(GaussianNb.fit(&d), Err(ClassifyError::TooFewSamples { class: 1, n: 1 })));
    }

    #[test]
    fn multinomial_examples() {
        let x = vec![vec![0.9, 0.1], vec![1.0, 0.0], vec![0.1, 0.9], vec![0.0, 1.0]];
        let y = vec![0, 0, 1, 1];
        let d = Dataset::new(x, y).unwrap();
        for scale in [1000.0, 2000.0] {
            let m = MultinomialNb { count_scale: scale }.fit(&d).unwrap();
            assert_eq!(m.predict_row(&[1.0, 0.0]).unwrap(), 0);
            assert_eq!(m.predict_row(&[0.0, 1.0]).unwrap(), 1);
        }
        // zero row falls back to the prior
        let skew = Dataset::new(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]], vec![0, 2, 2]).unwrap();
        let m = MultinomialNb::default().fit(&skew).unwrap();
        assert_eq!(m.predict_row(&[0.0, 0.0]).unwrap(), 2);
        let neg = Dataset::new(vec![vec![0.5, -0.1]], vec![0]).unwrap();
        assert!(matches!(MultinomialNb::default().fit(&neg), Err(ClassifyError::NegativeFeature { row: 0, col: 1, .. })));
    }
}
