//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use super::HarnessError;
use crate::classify::ClassifierParams;
use crate::corpus::VocabConfig;
use crate::seeds;
use crate::synth::{CorpusConfig, RateConfig, WorldConfig};
use crate::topics::DEFAULT_INFER_SWEEPS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum FeatureSet {
    Baseline,
    Slang,
    Smooth,
    SmoothSlang,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 4] = [FeatureSet::Baseline, FeatureSet::Smooth, FeatureSet::Slang, FeatureSet::SmoothSlang];

    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::Baseline => "baseline",
            FeatureSet::Slang => "slang",
            FeatureSet::Smooth => "smooth",
            FeatureSet::SmoothSlang => "smooth+slang",
        }
    }

    pub fn uses_slang(self) -> bool {
        matches!(self, FeatureSet::Slang | FeatureSet::SmoothSlang)
    }

    pub fn uses_smoothing(self) -> bool {
        matches!(self, FeatureSet::Smooth | FeatureSet::SmoothSlang)
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        FeatureSet::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown feature set {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SmoothMethod {
    /// `(θ + m·mean) / (1 + m)`, width K.
    Average,
    /// `[θ ; m·mean]`, width 2K.
    Concat,
}

impl FromStr for SmoothMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "average" => Ok(SmoothMethod::Average),
            "concat" => Ok(SmoothMethod::Concat),
            _ => Err(format!("unknown smooth_method {s:?}")),
        }
    }
}

/// Parameters for `synth`: world, corpus and rates. Years and outcome come
/// from the experiment itself.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthConfig {
    pub world: WorldConfig,
    pub corpus: CorpusConfig,
    pub rates: RateConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub records: PathBuf,
    pub regions: PathBuf,
    pub rates: PathBuf,
    pub lexicon: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub outcome: String,
    pub train_years: Vec<i32>,
    pub test_years: Vec<i32>,
    pub k: Vec<usize>,
    pub radius_km: Vec<f64>,
    pub multiplier: Vec<f64>,
    pub feature_sets: Vec<FeatureSet>,
    pub classifiers: Vec<String>,
    pub params: ClassifierParams,
    pub seed: u64,
    pub smooth_method: SmoothMethod,
    pub slang_weight: f64,
    pub slang_k: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: f64,
    pub lda_sweeps: usize,
    pub infer_sweeps: usize,
    pub min_df: u32,
    pub max_df_fraction: f64,
    pub assign_unlocated: bool,
    /// Drop training classes smaller than a classifier's minimum instead of
    /// failing the row.
    pub drop_small_classes: bool,
    pub min_regions: usize,
    pub report_timing: bool,
    pub synth: SynthConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut cfg = Self {
            records: "records.jsonl".into(),
            regions: "regions.csv".into(),
            rates: "rates.csv".into(),
            lexicon: None,
            stopwords: None,
            outcome: String::new(),
            train_years: Vec::new(),
            test_years: Vec::new(),
            k: vec![5, 10, 20, 50, 100, 200],
            radius_km: vec![25.0, 50.0, 100.0],
            multiplier: vec![0.0, 0.25, 0.5, 1.0, 2.0, 4.0],
            feature_sets: FeatureSet::ALL.to_vec(),
            classifiers: vec!["gaussian_nb".into()],
            params: ClassifierParams::default(),
            seed: 0,
            smooth_method: SmoothMethod::Average,
            slang_weight: 1.0,
            slang_k: None,
            alpha: None,
            beta: 0.01,
            lda_sweeps: 500,
            infer_sweeps: DEFAULT_INFER_SWEEPS,
            min_df: VocabConfig::default().min_df,
            max_df_fraction: VocabConfig::default().max_df_fraction,
            assign_unlocated: true,
            drop_small_classes: true,
            min_regions: 10,
            report_timing: false,
            synth: SynthConfig {
                world: WorldConfig::default(),
                corpus: CorpusConfig::default(),
                rates: RateConfig::default(),
            },
        };
        cfg.apply_preset("mortality").expect("built-in preset");
        cfg
    }
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, HarnessError>
where
    T::Err: fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| HarnessError::Config(format!("{key}: {s:?}: {e}"))))
        .collect()
}

fn one<T: FromStr>(key: &str, v: &str) -> Result<T, HarnessError>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| HarnessError::Config(format!("{key}: {v:?}: {e}")))
}

fn opt<T: FromStr>(key: &str, v: &str) -> Result<Option<T>, HarnessError>
where
    T::Err: fmt::Display,
{
    if v.is_empty() || v == "none" {
        Ok(None)
    } else {
        one(key, v).map(Some)
    }
}

/// Inclusive year ranges such as `2009-2013` are accepted alongside lists.
fn years(key: &str, v: &str) -> Result<Vec<i32>, HarnessError> {
    let mut out = Vec::new();
    for part in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (i32, i32) = (one(key, a.trim())?, one(key, b.trim())?);
                if a > b {
                    return Err(HarnessError::Config(format!("{key}: empty range {part}")));
                }
                out.extend(a..=b);
            }
            None => out.push(one(key, part)?),
        }
    }
    Ok(out)
}

impl ExperimentConfig {
    /// Year windows and outcome names for the two study designs.
    pub fn apply_preset(&mut self, name: &str) -> Result<(), HarnessError> {
        let (outcome, train, test) = match name {
            "mortality" => ("mortality", vec![2014, 2015], vec![2016]),
            "hiv" => ("hiv", (2009..=2014).collect(), vec![2015]),
            _ => return Err(HarnessError::Config(format!("unknown preset {name:?}"))),
        };
        self.outcome = outcome.into();
        self.train_years = train;
        self.test_years = test;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut pairs: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected key = value", i + 1)))?;
            let key = k.trim().to_string();
            if pairs.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err(HarnessError::Config(format!("line {}: duplicate key {key:?}", i + 1)));
            }
        }
        let mut cfg = Self::default();
        if let Some((_, p)) = pairs.remove("preset") {
            cfg.apply_preset(&p)?;
        }
        for (key, (line, v)) in &pairs {
            cfg.set(key, v).map_err(|e| match e {
                HarnessError::Config(m) => HarnessError::Config(format!("line {line}: {m}")),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.records);
        fix(&mut self.regions);
        fix(&mut self.rates);
        if let Some(p) = self.lexicon.as_mut() {
            fix(p);
        }
        if let Some(p) = self.stopwords.as_mut() {
            fix(p);
        }
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), HarnessError> {
        let w = &mut self.synth.world;
        let c = &mut self.synth.corpus;
        let r = &mut self.synth.rates;
        match key {
            "preset" => self.apply_preset(v)?,
            "records" => self.records = v.into(),
            "regions" => self.regions = v.into(),
            "rates" => self.rates = v.into(),
            "lexicon" => self.lexicon = opt(key, v)?,
            "stopwords" => self.stopwords = opt(key, v)?,
            "outcome" => self.outcome = v.into(),
            "train_years" => self.train_years = years(key, v)?,
            "test_years" => self.test_years = years(key, v)?,
            "k" => self.k = list(key, v)?,
            "radius_km" => self.radius_km = list(key, v)?,
            "multiplier" => self.multiplier = list(key, v)?,
            "feature_sets" => self.feature_sets = list(key, v)?,
            "classifiers" => self.classifiers = list(key, v)?,
            "seed" => self.seed = one(key, v)?,
            "smooth_method" => self.smooth_method = one(key, v)?,
            "slang_weight" => self.slang_weight = one(key, v)?,
            "slang_k" => self.slang_k = opt(key, v)?,
            "alpha" => self.alpha = opt(key, v)?,
            "beta" => self.beta = one(key, v)?,
            "lda_sweeps" => self.lda_sweeps = one(key, v)?,
            "infer_sweeps" => self.infer_sweeps = one(key, v)?,
            "min_df" => self.min_df = one(key, v)?,
            "max_df_fraction" => self.max_df_fraction = one(key, v)?,
            "assign_unlocated" => self.assign_unlocated = one(key, v)?,
            "drop_small_classes" => self.drop_small_classes = one(key, v)?,
            "min_regions" => self.min_regions = one(key, v)?,
            "report_timing" => self.report_timing = one(key, v)?,
            "binarize_threshold" => self.params.binarize_threshold = opt(key, v)?,
            "count_scale" => self.params.count_scale = one(key, v)?,
            "knn_k" => self.params.knn_k = one(key, v)?,
            "n_trees" => self.params.n_trees = one(key, v)?,
            "max_depth" => self.params.max_depth = opt(key, v)?,
            "min_leaf" => self.params.min_leaf = one(key, v)?,
            "synth.rows" => w.rows = one(key, v)?,
            "synth.cols" => w.cols = one(key, v)?,
            "synth.spacing_deg" => w.spacing_deg = one(key, v)?,
            "synth.origin_lat" => w.origin_lat = one(key, v)?,
            "synth.origin_lon" => w.origin_lon = one(key, v)?,
            "synth.k" => w.k = one(key, v)?,
            "synth.vocab_size" => w.vocab_size = one(key, v)?,
            "synth.topic_overlap" => w.topic_overlap = one(key, v)?,
            "synth.theta_concentration" => w.theta_concentration = one(key, v)?,
            "synth.kernel_bandwidth" => w.kernel_bandwidth = one(key, v)?,
            "synth.smoothness_bound" => w.smoothness_bound = opt(key, v)?,
            "synth.risk_topic" => w.risk_topic = one(key, v)?,
            "synth.slang_k" => w.slang_k = one(key, v)?,
            "synth.slang_vocab_size" => w.slang_vocab_size = one(key, v)?,
            "synth.slang_concentration" => w.slang_concentration = one(key, v)?,
            "synth.slang_rate_min" => w.slang_rate_min = one(key, v)?,
            "synth.slang_rate_max" => w.slang_rate_max = one(key, v)?,
            "synth.population_min" => w.population_min = one(key, v)?,
            "synth.population_max" => w.population_max = one(key, v)?,
            "synth.docs_per_region" => c.docs_per_region = one(key, v)?,
            "synth.tokens_per_doc" => c.tokens_per_doc = one(key, v)?,
            "synth.sparse_fraction" => c.sparse_fraction = one(key, v)?,
            "synth.sparse_docs_per_region" => c.sparse_docs_per_region = one(key, v)?,
            "synth.unlocated_fraction" => c.unlocated_fraction = one(key, v)?,
            "synth.base" => r.base = one(key, v)?,
            "synth.gain" => r.gain = one(key, v)?,
            "synth.noise_sd" => r.noise_sd = one(key, v)?,
            "synth.suppressed_fraction" => r.suppressed_fraction = one(key, v)?,
            _ => return Err(HarnessError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.train_years.is_empty() || self.test_years.is_empty() {
            return bad("train_years and test_years must be non-empty".into());
        }
        if let Some(y) = self.train_years.iter().find(|y| self.test_years.contains(y)) {
            return bad(format!("year {y} is in both train_years and test_years"));
        }
        for (name, empty) in [
            ("k", self.k.is_empty()),
            ("radius_km", self.radius_km.is_empty()),
            ("multiplier", self.multiplier.is_empty()),
            ("feature_sets", self.feature_sets.is_empty()),
            ("classifiers", self.classifiers.is_empty()),
        ] {
            if empty {
                return bad(format!("{name} must be non-empty"));
            }
        }
        if self.k.contains(&0) || self.slang_k == Some(0) {
            return bad("topic counts must be at least 1".into());
        }
        if self.radius_km.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return bad("radius_km values must be positive".into());
        }
        if self.multiplier.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return bad("multiplier values must be non-negative".into());
        }
        if !(self.slang_weight.is_finite() && self.slang_weight >= 0.0) {
            return bad("slang_weight must be non-negative".into());
        }
        if self.alpha.is_some_and(|a| !(a > 0.0)) || !(self.beta > 0.0) {
            return bad("alpha and beta must be positive".into());
        }
        if self.lda_sweeps == 0 || self.infer_sweeps == 0 {
            return bad("sweep counts must be at least 1".into());
        }
        if !(self.max_df_fraction > 0.0 && self.max_df_fraction <= 1.0) {
            return bad("max_df_fraction must be in (0, 1]".into());
        }
        if self.outcome.is_empty() {
            return bad("outcome must be set".into());
        }
        if self.feature_sets.iter().any(|f| f.uses_slang()) && self.lexicon.is_none() {
            return bad("slang feature sets need a lexicon".into());
        }
        Ok(())
    }

    /// Stable hash of every setting, including the seed.
    pub fn hash(&self) -> String {
        seeds::fingerprint(&serde_json::to_vec(self).expect("serializable"))
    }

    pub fn classifier_params(&self) -> ClassifierParams {
        ClassifierParams {
            seed: seeds::derive(self.seed, "classifier"),
            ..self.params.clone()
        }
    }

    pub fn vocab_config(&self) -> VocabConfig {
        VocabConfig {
            min_df: self.min_df,
            max_df_fraction: self.max_df_fraction,
        }
    }

    /// Synthetic-generation settings with the experiment's years and outcome
    /// filled in.
    pub fn synth_config(&self) -> SynthConfig {
        let mut s = self.synth.clone();
        let mut years: Vec<i32> = self.train_years.iter().chain(&self.test_years).copied().collect();
        years.sort_unstable();
        years.dedup();
        s.corpus.years = years.clone();
        s.rates.years = years;
        s.rates.outcome = self.outcome.clone();
        s
    }

    /// Number of rows a sweep over this config produces.
    pub fn grid_size(&self) -> usize {
        self.feature_sets.len() * self.k.len() * self.radius_km.len() * self.multiplier.len() * self.classifiers.len()
    }
}
