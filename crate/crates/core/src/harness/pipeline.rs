//! Ingest → LDA → unlocated assignment → features → labels → classifier →
//! evaluation, with the K-dependent stages shared across sweep rows.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::time::Instant;

use rayon::prelude::*;

use super::config::{ExperimentConfig, FeatureSet, SmoothMethod};
use super::report::{ExperimentReport, Failure, ReportRow};
use super::{stage_err, HarnessError};
use crate::classify::{accuracy, ClassifierRegistry, Dataset};
use crate::corpus::{
    assemble_with, read_jsonl, strip_to_slang, RawRecord, RegionDocument, SlangLexicon, TokenizedRecord, Tokenizer,
    VocabConfig, Vocabulary,
};
use crate::features::{
    assemble, baseline_block, slang_ratio_block, slang_topic_block, smooth_avg_block, smooth_concat_block, FeatureBlock,
    FeatureMatrix,
};
use crate::geo::{AdjacencyGraph, RegionRegistry};
use crate::labels::{apply_suppression, ordinal_mse, Binning, Label, LabelVector, RateTable};
use crate::seeds;
use crate::synth::{generate_corpus, generate_rates, generate_world, PlantedWorld};
use crate::topics::{assign_unlocated, doc_seed, infer_theta, train_lda, Inferred, LdaConfig, LdaModel};

/// Raw inputs as loaded from disk.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub records: Vec<RawRecord>,
    pub registry: RegionRegistry,
    pub rates: RateTable,
    pub lexicon: Option<SlangLexicon>,
    pub tokenizer: Tokenizer,
}

impl Inputs {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        let open = |p: &std::path::Path| File::open(p).map_err(|source| HarnessError::Io { path: p.to_path_buf(), source });
        let records = read_jsonl(&cfg.records).map_err(stage_err("ingest"))?;
        let registry = RegionRegistry::read_csv(open(&cfg.regions)?).map_err(stage_err("regions"))?;
        let rates = RateTable::read_csv(open(&cfg.rates)?).map_err(stage_err("rates"))?;
        let lexicon = cfg
            .lexicon
            .as_deref()
            .map(SlangLexicon::load)
            .transpose()
            .map_err(stage_err("lexicon"))?;
        let tokenizer = match &cfg.stopwords {
            Some(p) => Tokenizer::with_stopword_file(p, Tokenizer::default().min_len).map_err(stage_err("ingest"))?,
            None => Tokenizer::default(),
        };
        Ok(Self {
            records,
            registry,
            rates,
            lexicon,
            tokenizer,
        })
    }

    /// Generates a planted world from the config's `synth.*` settings and
    /// returns it with in-memory inputs equivalent to its written files.
    pub fn synthetic(cfg: &ExperimentConfig) -> Result<(PlantedWorld, Self), HarnessError> {
        let s = cfg.synth_config();
        let world = generate_world(&s.world, seeds::derive(cfg.seed, "synth/world")).map_err(|e| HarnessError::Config(e.to_string()))?;
        let records = generate_corpus(&world, &s.corpus, seeds::derive(cfg.seed, "synth/corpus"));
        let rates = generate_rates(&world, &s.rates, seeds::derive(cfg.seed, "synth/rates")).map_err(|e| HarnessError::Config(e.to_string()))?;
        let inputs = Self {
            records,
            registry: world.registry(),
            rates,
            lexicon: Some(SlangLexicon::from_terms(&world.slang_terms)),
            tokenizer: Tokenizer::default(),
        };
        Ok((world, inputs))
    }
}

/// Tokenized records of one year set, split by whether their region is known.
#[derive(Debug, Clone, Default)]
pub struct Split {
    pub located: Vec<TokenizedRecord>,
    pub unlocated: Vec<TokenizedRecord>,
}

/// Everything that does not depend on K, radius, multiplier or classifier.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub registry: RegionRegistry,
    pub lexicon: Option<SlangLexicon>,
    pub train: Split,
    pub test: Split,
    pub vocab: Vocabulary,
    pub slang_vocab: Option<Vocabulary>,
    pub rates: RateTable,
    pub binning: Binning,
    pub train_labels: LabelVector,
    pub test_labels: LabelVector,
}

/// Mean retained rate per region over `years`.
fn mean_rates(rates: &RateTable, outcome: &str, years: &[i32]) -> Vec<(String, f64)> {
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for r in rates.retained(outcome).filter(|r| years.contains(&r.year)) {
        let e = acc.entry(r.region_id.as_str()).or_insert((0.0, 0));
        e.0 += r.rate;
        e.1 += 1;
    }
    acc.into_iter().map(|(id, (s, n))| (id.to_string(), s / n as f64)).collect()
}

fn split_records(tokenized: &[TokenizedRecord], years: &[i32], registry: &RegionRegistry) -> Split {
    let mut s = Split::default();
    for r in tokenized.iter().filter(|r| years.contains(&r.year)) {
        if r.region.as_deref().is_some_and(|id| registry.contains(id)) {
            s.located.push(r.clone());
        } else {
            s.unlocated.push(r.clone());
        }
    }
    s
}

impl Prepared {
    pub fn new(config: &ExperimentConfig, inputs: Inputs) -> Result<Self, HarnessError> {
        config.validate()?;
        let Inputs {
            records,
            registry,
            rates,
            lexicon,
            tokenizer,
        } = inputs;
        let tokenized = tokenizer.tokenize_all(&records, lexicon.as_ref());
        let train = split_records(&tokenized, &config.train_years, &registry);
        let test = split_records(&tokenized, &config.test_years, &registry);
        if train.located.is_empty() {
            return Err(HarnessError::data("ingest", "no located records in the training years"));
        }

        let vocab = Vocabulary::build(train.located.iter().map(|r| r.tokens.iter()), config.vocab_config());
        if vocab.is_empty() {
            return Err(HarnessError::data("vocabulary", "empty after document-frequency pruning"));
        }
        let slang_vocab = lexicon
            .as_ref()
            .map(|lex| Vocabulary::build(train.located.iter().map(|r| strip_to_slang(r, lex)), VocabConfig::unpruned()));

        let rates = apply_suppression(rates);
        let train_values: Vec<f64> = rates
            .retained(&config.outcome)
            .filter(|r| config.train_years.contains(&r.year))
            .map(|r| r.rate)
            .collect();
        let binning = Binning::fit(&train_values).map_err(stage_err("labels"))?;
        let train_labels = LabelVector::with_binning(&mean_rates(&rates, &config.outcome, &config.train_years), binning);
        let test_labels = LabelVector::with_binning(&mean_rates(&rates, &config.outcome, &config.test_years), binning);
        if train_labels.labels.len() < config.min_regions {
            return Err(HarnessError::data(
                "labels",
                format!(
                    "{} training regions remain after suppression, need at least {}",
                    train_labels.labels.len(),
                    config.min_regions
                ),
            ));
        }
        Ok(Self {
            config: config.clone(),
            registry,
            lexicon,
            train,
            test,
            vocab,
            slang_vocab,
            rates,
            binning,
            train_labels,
            test_labels,
        })
    }

    pub fn load(config: &ExperimentConfig) -> Result<Self, HarnessError> {
        Self::new(config, Inputs::load(config)?)
    }

    fn lda_config(&self, k: usize, purpose: &str) -> LdaConfig {
        LdaConfig {
            k,
            alpha: self.config.alpha,
            beta: self.config.beta,
            sweeps: self.config.lda_sweeps,
            seed: seeds::derive(self.config.seed, purpose),
        }
    }

    fn infer_all(&self, model: &LdaModel, vocab: &Vocabulary, docs: &BTreeMap<String, RegionDocument>, tag: &str) -> BTreeMap<String, Inferred> {
        let seed = seeds::derive(self.config.seed, tag);
        let out: Vec<(String, Inferred)> = docs
            .par_iter()
            .map(|(id, d)| (id.clone(), infer_theta(model, &vocab.encode_bag(d), self.config.infer_sweeps, doc_seed(seed, id))))
            .collect();
        out.into_iter().collect()
    }

    /// Attaches each unlocated record to its most similar region, or drops
    /// it when it has no in-vocabulary tokens.
    fn assign<'a>(
        &self,
        model: &LdaModel,
        split: &'a Split,
        reference: &BTreeMap<String, Vec<f64>>,
        tag: &str,
    ) -> Result<Vec<(String, &'a TokenizedRecord)>, HarnessError> {
        let mut pairs: Vec<(String, &TokenizedRecord)> =
            split.located.iter().map(|r| (r.region.clone().expect("located"), r)).collect();
        if !self.config.assign_unlocated || split.unlocated.is_empty() || reference.is_empty() {
            return Ok(pairs);
        }
        let seed = seeds::derive(self.config.seed, tag);
        let assigned: Vec<Option<String>> = split
            .unlocated
            .par_iter()
            .map(|r| {
                assign_unlocated(model, &self.vocab.encode(&r.tokens), reference, self.config.infer_sweeps, doc_seed(seed, &r.id))
                    .map_err(|e| HarnessError::data("assignment", format!("record {}: {e}", r.id)))
            })
            .collect::<Result<_, _>>()?;
        pairs.extend(split.unlocated.iter().zip(assigned).filter_map(|(r, a)| a.map(|id| (id, r))));
        Ok(pairs)
    }

    /// Trains the topic model for `k` and derives every per-region quantity
    /// that depends on it.
    pub fn topic_stage(&self, k: usize, need_slang: bool) -> Result<TopicStage, HarnessError> {
        let located_docs = assemble_with(self.train.located.iter().map(|r| (r.region.as_deref().expect("located"), r.tokens.as_slice())));
        let encoded: Vec<Vec<usize>> = located_docs.values().map(|d| self.vocab.encode_bag(d)).collect();
        let model = train_lda(&encoded, self.vocab.len(), &self.lda_config(k, &format!("lda/{k}")))
            .map_err(|e| HarnessError::data("lda", format!("k = {k}: {e}")))?
            .with_vocab_hash(self.vocab.hash());
        let thetas = |inf: BTreeMap<String, Inferred>| -> BTreeMap<String, Vec<f64>> { inf.into_iter().map(|(id, i)| (id, i.theta)).collect() };

        let located_thetas = thetas(self.infer_all(&model, &self.vocab, &located_docs, &format!("infer/train/{k}")));
        let train_pairs = self.assign(&model, &self.train, &located_thetas, &format!("assign/train/{k}"))?;
        let train_docs = assemble_with(train_pairs.iter().map(|(id, r)| (id.as_str(), r.tokens.as_slice())));
        let train_thetas = if train_pairs.len() == self.train.located.len() {
            located_thetas
        } else {
            thetas(self.infer_all(&model, &self.vocab, &train_docs, &format!("infer/train-assigned/{k}")))
        };

        let test_pairs = self.assign(&model, &self.test, &train_thetas, &format!("assign/test/{k}"))?;
        let test_docs = assemble_with(test_pairs.iter().map(|(id, r)| (id.as_str(), r.tokens.as_slice())));
        let test_thetas = thetas(self.infer_all(&model, &self.vocab, &test_docs, &format!("infer/test/{k}")));

        let slang = if need_slang { Some(self.slang_stage(k, &train_docs, &test_docs, &train_pairs, &test_pairs)?) } else { None };
        Ok(TopicStage {
            k,
            model,
            train_thetas,
            test_thetas,
            slang,
        })
    }

    fn slang_stage(
        &self,
        k: usize,
        train_docs: &BTreeMap<String, RegionDocument>,
        test_docs: &BTreeMap<String, RegionDocument>,
        train_pairs: &[(String, &TokenizedRecord)],
        test_pairs: &[(String, &TokenizedRecord)],
    ) -> Result<SlangStage, HarnessError> {
        let (Some(lex), Some(svocab)) = (&self.lexicon, &self.slang_vocab) else {
            return Err(HarnessError::Config("slang features need a lexicon".into()));
        };
        if svocab.is_empty() {
            return Err(HarnessError::data("slang", "no lexicon terms occur in the training corpus"));
        }
        let strip = |docs: &BTreeMap<String, RegionDocument>| -> BTreeMap<String, RegionDocument> {
            docs.iter()
                .map(|(id, d)| {
                    let bag = d.bag.iter().filter(|(t, _)| lex.contains(t)).map(|(t, c)| (t.clone(), *c)).collect();
                    (id.clone(), RegionDocument { region_id: id.clone(), bag, record_count: d.record_count })
                })
                .collect()
        };
        let (train_sdocs, test_sdocs) = (strip(train_docs), strip(test_docs));
        let encoded: Vec<Vec<usize>> = train_sdocs.values().map(|d| svocab.encode_bag(d)).collect();
        let ks = self.config.slang_k.unwrap_or(k);
        let model = train_lda(&encoded, svocab.len(), &self.lda_config(ks, &format!("slang-lda/{k}")))
            .map_err(|e| HarnessError::data("slang lda", format!("k = {ks}: {e}")))?
            .with_vocab_hash(svocab.hash());

        let ratio = |pairs: &[(String, &TokenizedRecord)]| {
            let mut by: BTreeMap<String, Vec<&TokenizedRecord>> = BTreeMap::new();
            for (id, r) in pairs {
                by.entry(id.clone()).or_default().push(*r);
            }
            slang_ratio_block(&by).map_err(stage_err("slang ratio"))
        };
        Ok(SlangStage {
            train_topics: slang_topic_block(&self.infer_all(&model, svocab, &train_sdocs, &format!("infer/slang-train/{k}")))
                .map_err(stage_err("slang features"))?,
            test_topics: slang_topic_block(&self.infer_all(&model, svocab, &test_sdocs, &format!("infer/slang-test/{k}")))
                .map_err(stage_err("slang features"))?,
            train_ratio: ratio(train_pairs)?,
            test_ratio: ratio(test_pairs)?,
            model,
        })
    }

    pub fn graph(&self, radius_km: f64) -> Result<AdjacencyGraph, HarnessError> {
        AdjacencyGraph::build(&self.registry, radius_km).map_err(stage_err("adjacency"))
    }

    /// Train and test feature matrices for one configuration.
    pub fn features(&self, stage: &TopicStage, graph: &AdjacencyGraph, set: FeatureSet, m: f64) -> Result<(FeatureMatrix, FeatureMatrix), HarnessError> {
        let build = |thetas: &BTreeMap<String, Vec<f64>>, slang: Option<(&FeatureBlock, &FeatureBlock)>| -> Result<FeatureMatrix, HarnessError> {
            let err = stage_err("features");
            let mut blocks: Vec<(FeatureBlock, f64)> = Vec::new();
            if set.uses_smoothing() {
                let b = match self.config.smooth_method {
                    SmoothMethod::Average => smooth_avg_block(thetas, graph, m),
                    SmoothMethod::Concat => smooth_concat_block(thetas, graph, m),
                };
                blocks.push((b.map_err(err)?, 1.0));
            } else {
                blocks.push((baseline_block(thetas).map_err(err)?, 1.0));
            }
            if let Some((topics, ratio)) = slang {
                blocks.push((topics.clone(), self.config.slang_weight));
                blocks.push((ratio.clone(), self.config.slang_weight));
            }
            assemble(&blocks).map_err(stage_err("features"))
        };
        let slang = if set.uses_slang() {
            let s = stage.slang.as_ref().ok_or_else(|| HarnessError::data("features", "slang stage was not computed"))?;
            Some(((&s.train_topics, &s.train_ratio), (&s.test_topics, &s.test_ratio)))
        } else {
            None
        };
        Ok((build(&stage.train_thetas, slang.map(|s| s.0))?, build(&stage.test_thetas, slang.map(|s| s.1))?))
    }

    /// Runs one configuration against a precomputed topic stage.
    pub fn evaluate(&self, stage: &TopicStage, graph: &AdjacencyGraph, spec: &RowSpec, registry: &ClassifierRegistry) -> Result<RowOutcome, HarnessError> {
        let start = Instant::now();
        let (train_m, test_m) = self.features(stage, graph, spec.feature_set, spec.multiplier)?;
        let trainer = registry
            .trainer(&spec.classifier, &self.config.classifier_params())
            .map_err(|e| HarnessError::Config(e.to_string()))?;

        let mut train = labelled(&train_m, &self.train_labels);
        if self.config.drop_small_classes {
            let mut counts: BTreeMap<Label, usize> = BTreeMap::new();
            for (_, _, l) in &train {
                *counts.entry(*l).or_default() += 1;
            }
            train.retain(|(_, _, l)| counts[l] >= trainer.min_class_size());
        }
        let (ids, x, y) = unzip3(train);
        let data = Dataset::with_ids(x, y, ids).map_err(stage_err("classifier"))?;
        let model = trainer.fit(&data).map_err(stage_err("classifier"))?;

        let test = labelled(&test_m, &self.test_labels);
        if test.is_empty() {
            return Err(HarnessError::data("evaluation", "no test-year region has both text and a retained rate"));
        }
        let (test_ids, test_x, truth) = unzip3(test);
        let predicted = model.predict(&test_x).map_err(stage_err("evaluation"))?;
        let acc = accuracy(&predicted, &truth).map_err(stage_err("evaluation"))?;
        let mse = ordinal_mse(&predicted, &truth).map_err(stage_err("evaluation"))?;
        let model_json = model.to_json();
        Ok(RowOutcome {
            row: ReportRow {
                feature_set: spec.feature_set,
                k: spec.k,
                radius_km: spec.radius_km,
                multiplier: spec.multiplier,
                classifier: spec.classifier.clone(),
                accuracy: acc,
                mse,
                n_regions: truth.len(),
                runtime_ms: start.elapsed().as_millis() as u64,
            },
            lda_fingerprint: stage.model.fingerprint(),
            model_fingerprint: seeds::fingerprint(&serde_json::to_vec(&model_json).expect("serializable")),
            train_regions: data.ids.clone(),
            binning: self.binning,
            test_ids,
            truth,
            predicted,
        })
    }
}

/// Rows of `m` whose region has a label, in region order.
pub fn labelled(m: &FeatureMatrix, labels: &LabelVector) -> Vec<(String, Vec<f64>, Label)> {
    m.region_ids
        .iter()
        .zip(&m.data)
        .filter_map(|(id, row)| labels.labels.get(id).map(|&l| (id.clone(), row.clone(), l)))
        .collect()
}

fn unzip3(rows: Vec<(String, Vec<f64>, Label)>) -> (Vec<String>, Vec<Vec<f64>>, Vec<Label>) {
    let mut out = (Vec::new(), Vec::new(), Vec::new());
    for (a, b, c) in rows {
        out.0.push(a);
        out.1.push(b);
        out.2.push(c);
    }
    out
}

/// Slang-model outputs for one K.
#[derive(Debug, Clone)]
pub struct SlangStage {
    pub model: LdaModel,
    pub train_topics: FeatureBlock,
    pub test_topics: FeatureBlock,
    pub train_ratio: FeatureBlock,
    pub test_ratio: FeatureBlock,
}

#[derive(Debug, Clone)]
pub struct TopicStage {
    pub k: usize,
    pub model: LdaModel,
    pub train_thetas: BTreeMap<String, Vec<f64>>,
    pub test_thetas: BTreeMap<String, Vec<f64>>,
    pub slang: Option<SlangStage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowSpec {
    pub feature_set: FeatureSet,
    pub k: usize,
    pub radius_km: f64,
    pub multiplier: f64,
    pub classifier: String,
}

impl RowSpec {
    /// The Cartesian product of the config's lists, feature set outermost.
    pub fn grid(cfg: &ExperimentConfig) -> Vec<RowSpec> {
        let mut out = Vec::with_capacity(cfg.grid_size());
        for &feature_set in &cfg.feature_sets {
            for &k in &cfg.k {
                for &radius_km in &cfg.radius_km {
                    for &multiplier in &cfg.multiplier {
                        for classifier in &cfg.classifiers {
                            out.push(RowSpec { feature_set, k, radius_km, multiplier, classifier: classifier.clone() });
                        }
                    }
                }
            }
        }
        out
    }

    /// The first value of every list.
    pub fn first(cfg: &ExperimentConfig) -> RowSpec {
        RowSpec {
            feature_set: cfg.feature_sets[0],
            k: cfg.k[0],
            radius_km: cfg.radius_km[0],
            multiplier: cfg.multiplier[0],
            classifier: cfg.classifiers[0].clone(),
        }
    }
}

/// One evaluated configuration plus the artifacts tests inspect.
#[derive(Debug, Clone)]
pub struct RowOutcome {
    pub row: ReportRow,
    pub lda_fingerprint: String,
    pub model_fingerprint: String,
    pub train_regions: Vec<String>,
    pub binning: Binning,
    pub test_ids: Vec<String>,
    pub truth: Vec<Label>,
    pub predicted: Vec<Label>,
}

/// Runs the configuration formed by the first value of every list.
pub fn run_pipeline(cfg: &ExperimentConfig, inputs: Inputs) -> Result<RowOutcome, HarnessError> {
    let prep = Prepared::new(cfg, inputs)?;
    let spec = RowSpec::first(cfg);
    let stage = prep.topic_stage(spec.k, spec.feature_set.uses_slang())?;
    let graph = prep.graph(spec.radius_km)?;
    prep.evaluate(&stage, &graph, &spec, &ClassifierRegistry::default())
}

/// Evaluates every configuration in the grid. Topic models are trained once
/// per K and adjacency graphs built once per radius; row failures are
/// recorded and the sweep continues.
pub fn sweep(cfg: &ExperimentConfig, inputs: Inputs) -> Result<ExperimentReport, HarnessError> {
    let started = Instant::now();
    let registry = ClassifierRegistry::default();
    if let Some(unknown) = cfg.classifiers.iter().find(|c| !registry.contains(c)) {
        return Err(HarnessError::Config(format!("unknown classifier {unknown:?}")));
    }
    let prep = Prepared::new(cfg, inputs)?;
    let need_slang = cfg.feature_sets.iter().any(|f| f.uses_slang());

    let ks: Vec<usize> = cfg.k.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let stages: BTreeMap<usize, Result<TopicStage, String>> = ks
        .par_iter()
        .map(|&k| (k, prep.topic_stage(k, need_slang).map_err(|e| e.to_string())))
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    let graphs: Vec<(f64, Result<AdjacencyGraph, String>)> = cfg.radius_km.iter().map(|&r| (r, prep.graph(r).map_err(|e| e.to_string()))).collect();
    let graph_for = |r: f64| &graphs.iter().find(|(x, _)| *x == r).expect("radius in grid").1;

    let results: Vec<Result<RowOutcome, (RowSpec, String)>> = RowSpec::grid(cfg)
        .into_par_iter()
        .map(|spec| {
            let stage = stages[&spec.k].as_ref().map_err(|e| (spec.clone(), e.clone()))?;
            let graph = graph_for(spec.radius_km).as_ref().map_err(|e| (spec.clone(), e.clone()))?;
            prep.evaluate(stage, graph, &spec, &registry).map_err(|e| (spec, e.to_string()))
        })
        .collect();

    let mut report = ExperimentReport::new(cfg);
    for r in results {
        match r {
            Ok(o) => report.rows.push(o.row),
            Err((spec, error)) => report.failures.push(Failure::new(&spec, error)),
        }
    }
    report.runtime_ms = started.elapsed().as_millis() as u64;
    Ok(report)
}
