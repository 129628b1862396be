use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde_json::json;

use geotopic::classify::{accuracy, write_predictions_csv, ClassifierRegistry, Dataset};
use geotopic::features::FeatureMatrix;
use geotopic::harness::pipeline::labelled;
use geotopic::harness::{emit_plot, sweep, ExperimentConfig, ExperimentReport, HarnessError, Inputs, Prepared, RowSpec, EXIT_PARTIAL};
use geotopic::labels::{ordinal_mse, Binning, Label, LabelVector};
use geotopic::synth::write_all;
use geotopic::topics::{write_theta_csv, TopicDistribution};

#[derive(Parser)]
#[command(name = "geotopic", version, about = "Regional topic features and health-outcome classification")]
struct Cli {
    /// Experiment config file (flat key = value)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world: records, regions, rates, lexicon, truth
    Synth,
    /// Tokenize, split by year and build the vocabulary
    Ingest,
    /// Train a topic model per configured K and write region mixtures
    Lda,
    /// Write train/test feature matrices for the first configuration
    Featurize,
    /// Apply suppression and bin rates into labels
    Label,
    /// Fit the first configured classifier on features_train.csv
    Train,
    /// Score model.json on features_test.csv
    Eval,
    /// Run every configuration in the grid and write the report
    Sweep,
    /// Chart a report as MSE against multiplier
    Plot {
        /// Report CSV; defaults to <out>/report.csv
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn open(path: &Path) -> anyhow::Result<File> {
    File::open(path).with_context(|| format!("opening {}", path.display()))
}

fn write_json(path: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    serde_json::to_writer_pretty(create(path)?, value)?;
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<i32> {
    let cfg = load_config(cli)?;
    let out = &cli.out;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    match &cli.command {
        Command::Synth => {
            let (world, inputs) = Inputs::synthetic(&cfg)?;
            write_all(out, &world, &inputs.records, &inputs.rates)?;
            eprintln!("wrote {} records for {} regions to {}", inputs.records.len(), world.regions.len(), out.display());
        }
        Command::Ingest => {
            let prep = Prepared::load(&cfg)?;
            prep.vocab.write_csv(create(&out.join("vocab.csv"))?)?;
            let graph = prep.graph(cfg.radius_km[0])?;
            graph.write_csv(&prep.registry, create(&out.join("adjacency.csv"))?)?;
            write_json(
                &out.join("ingest.json"),
                &json!({
                    "train_located": prep.train.located.len(),
                    "train_unlocated": prep.train.unlocated.len(),
                    "test_located": prep.test.located.len(),
                    "test_unlocated": prep.test.unlocated.len(),
                    "vocab_size": prep.vocab.len(),
                    "vocab_hash": prep.vocab.hash(),
                    "slang_vocab_size": prep.slang_vocab.as_ref().map(|v| v.len()),
                    "regions": prep.registry.len(),
                }),
            )?;
        }
        Command::Lda => {
            let prep = Prepared::load(&cfg)?;
            for &k in &cfg.k {
                let stage = prep.topic_stage(k, false)?;
                stage.model.save(create(&out.join(format!("lda_k{k}.json")))?)?;
                for (name, thetas) in [("train", &stage.train_thetas), ("test", &stage.test_thetas)] {
                    let rows: Vec<TopicDistribution> =
                        thetas.iter().map(|(id, t)| TopicDistribution { id: id.clone(), theta: t.clone() }).collect();
                    write_theta_csv(create(&out.join(format!("theta_{name}_k{k}.csv")))?, &rows)?;
                }
            }
        }
        Command::Featurize => {
            let prep = Prepared::load(&cfg)?;
            let spec = RowSpec::first(&cfg);
            let stage = prep.topic_stage(spec.k, spec.feature_set.uses_slang())?;
            let (train, test) = prep.features(&stage, &prep.graph(spec.radius_km)?, spec.feature_set, spec.multiplier)?;
            train.write_csv(create(&out.join("features_train.csv"))?)?;
            test.write_csv(create(&out.join("features_test.csv"))?)?;
        }
        Command::Label => {
            let prep = Prepared::load(&cfg)?;
            prep.train_labels.write_csv(create(&out.join("labels_train.csv"))?)?;
            prep.test_labels.write_csv(create(&out.join("labels_test.csv"))?)?;
            prep.rates.write_diagnostics_csv(create(&out.join("rates_diagnostics.csv"))?)?;
            write_json(&out.join("binning.json"), &serde_json::to_value(prep.binning)?)?;
        }
        Command::Train => {
            let binning: Binning = serde_json::from_reader(open(&out.join("binning.json"))?)?;
            let features = FeatureMatrix::read_csv(open(&out.join("features_train.csv"))?)?;
            let labels = LabelVector::read_csv(open(&out.join("labels_train.csv"))?, binning)?;
            let registry = ClassifierRegistry::default();
            let trainer = registry
                .trainer(&cfg.classifiers[0], &cfg.classifier_params())
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            let mut rows = labelled(&features, &labels);
            if cfg.drop_small_classes {
                let count = |l: Label| rows.iter().filter(|r| r.2 == l).count();
                let keep: Vec<bool> = rows.iter().map(|r| count(r.2) >= trainer.min_class_size()).collect();
                let mut it = keep.into_iter();
                rows.retain(|_| it.next().unwrap_or(false));
            }
            let (ids, x, y) = split3(rows);
            let model = trainer.fit(&Dataset::with_ids(x, y, ids)?)?;
            registry.save(model.as_ref(), create(&out.join("model.json"))?)?;
        }
        Command::Eval => {
            let binning: Binning = serde_json::from_reader(open(&out.join("binning.json"))?)?;
            let model = ClassifierRegistry::default().load(open(&out.join("model.json"))?)?;
            let features = FeatureMatrix::read_csv(open(&out.join("features_test.csv"))?)?;
            let labels = LabelVector::read_csv(open(&out.join("labels_test.csv"))?, binning)?;
            let (ids, x, truth) = split3(labelled(&features, &labels));
            if ids.is_empty() {
                return Err(HarnessError::data("evaluation", "no labelled test regions").into());
            }
            let predicted = model.predict(&x)?;
            write_predictions_csv(create(&out.join("predictions.csv"))?, &ids, &truth, &predicted)?;
            let metrics = json!({
                "classifier": model.kind(),
                "accuracy": accuracy(&predicted, &truth)?,
                "mse": ordinal_mse(&predicted, &truth)?,
                "n_regions": ids.len(),
            });
            write_json(&out.join("metrics.json"), &metrics)?;
            println!("{metrics}");
        }
        Command::Sweep => {
            let report = sweep(&cfg, Inputs::load(&cfg)?)?;
            report.write_csv(create(&out.join("report.csv"))?)?;
            report.write_sidecar(&cfg, create(&out.join("report.json"))?)?;
            for f in &report.failures {
                eprintln!("failed: {} k={} radius={} m={} {}: {}", f.feature_set, f.k, f.radius_km, f.multiplier, f.classifier, f.error);
            }
            eprintln!("{} rows, {} failures", report.rows.len(), report.failures.len());
            if report.is_partial() {
                return Ok(EXIT_PARTIAL);
            }
        }
        Command::Plot { report } => {
            let path = report.clone().unwrap_or_else(|| out.join("report.csv"));
            let report = ExperimentReport::read_csv(open(&path)?)?;
            let (csv, svg) = emit_plot(&report, out)?;
            eprintln!("wrote {} and {}", csv.display(), svg.display());
        }
    }
    Ok(0)
}

fn split3(rows: Vec<(String, Vec<f64>, Label)>) -> (Vec<String>, Vec<Vec<f64>>, Vec<Label>) {
    let mut out = (Vec::new(), Vec::new(), Vec::new());
    for (a, b, c) in rows {
        out.0.push(a);
        out.1.push(b);
        out.2.push(c);
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<HarnessError>().map_or(2, HarnessError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
