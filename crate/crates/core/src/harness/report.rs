//! Sweep reports: a CSV with one row per configuration and a JSON sidecar.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, FeatureSet};
use super::pipeline::RowSpec;
use super::HarnessError;

pub const REPORT_HEADER: [&str; 9] = [
    "feature_set",
    "k",
    "radius_km",
    "multiplier",
    "classifier",
    "accuracy",
    "mse",
    "n_regions",
    "runtime_ms",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub feature_set: FeatureSet,
    pub k: usize,
    pub radius_km: f64,
    pub multiplier: f64,
    pub classifier: String,
    pub accuracy: f64,
    pub mse: f64,
    pub n_regions: usize,
    pub runtime_ms: u64,
}

/// Metrics are written with six decimals.
pub fn fmt_metric(x: f64) -> String {
    format!("{x:.6}")
}

impl ReportRow {
    fn record(&self, timing: bool) -> [String; 9] {
        [
            self.feature_set.to_string(),
            self.k.to_string(),
            self.radius_km.to_string(),
            self.multiplier.to_string(),
            self.classifier.clone(),
            fmt_metric(self.accuracy),
            fmt_metric(self.mse),
            self.n_regions.to_string(),
            if timing { self.runtime_ms.to_string() } else { "0".into() },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub feature_set: FeatureSet,
    pub k: usize,
    pub radius_km: f64,
    pub multiplier: f64,
    pub classifier: String,
    pub error: String,
}

impl Failure {
    pub fn new(spec: &RowSpec, error: String) -> Self {
        Self {
            feature_set: spec.feature_set,
            k: spec.k,
            radius_km: spec.radius_km,
            multiplier: spec.multiplier,
            classifier: spec.classifier.clone(),
            error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub seed: u64,
    /// Wall-clock runtimes go to the CSV only when enabled, so that reruns
    /// stay byte-identical by default.
    pub report_timing: bool,
    pub runtime_ms: u64,
    pub rows: Vec<ReportRow>,
    pub failures: Vec<Failure>,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    config: &'a ExperimentConfig,
    config_hash: &'a str,
    seed: u64,
    runtime_ms: u64,
    row_runtime_ms: Vec<u64>,
    failures: &'a [Failure],
}

#[derive(Deserialize)]
struct CsvRow {
    feature_set: String,
    k: usize,
    radius_km: f64,
    multiplier: f64,
    classifier: String,
    accuracy: f64,
    mse: f64,
    n_regions: usize,
    runtime_ms: u64,
}

impl ExperimentReport {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            report_timing: cfg.report_timing,
            runtime_ms: 0,
            rows: Vec::new(),
            failures: Vec::new(),
        }
    }

    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| HarnessError::data("report", e.to_string());
        w.write_record(REPORT_HEADER).map_err(err)?;
        for r in &self.rows {
            w.write_record(r.record(self.report_timing)).map_err(err)?;
        }
        w.flush().map_err(|e| HarnessError::data("report", e.to_string()))
    }

    /// Reads rows back from a report CSV. Config hash and failures are not
    /// part of the CSV and come back empty.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, HarnessError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers().map_err(|e| HarnessError::data("report", e.to_string()))?;
        if header.iter().ne(REPORT_HEADER) {
            return Err(HarnessError::data("report", format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
        }
        let mut rows = Vec::new();
        for (i, r) in rdr.deserialize::<CsvRow>().enumerate() {
            let r = r.map_err(|e| HarnessError::data("report", e.to_string()))?;
            let feature_set = r.feature_set.parse().map_err(|e| HarnessError::data("report", format!("row {}: {e}", i + 1)))?;
            rows.push(ReportRow {
                feature_set,
                k: r.k,
                radius_km: r.radius_km,
                multiplier: r.multiplier,
                classifier: r.classifier,
                accuracy: r.accuracy,
                mse: r.mse,
                n_regions: r.n_regions,
                runtime_ms: r.runtime_ms,
            });
        }
        Ok(Self {
            config_hash: String::new(),
            seed: 0,
            report_timing: true,
            runtime_ms: 0,
            rows,
            failures: Vec::new(),
        })
    }

    pub fn write_sidecar<W: Write>(&self, cfg: &ExperimentConfig, writer: W) -> Result<(), HarnessError> {
        let s = Sidecar {
            config: cfg,
            config_hash: &self.config_hash,
            seed: self.seed,
            runtime_ms: self.runtime_ms,
            row_runtime_ms: self.rows.iter().map(|r| r.runtime_ms).collect(),
            failures: &self.failures,
        };
        serde_json::to_writer_pretty(writer, &s).map_err(|e| HarnessError::data("report", e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(fs: FeatureSet, m: f64, mse: f64) -> ReportRow {
        ReportRow {
            feature_set: fs,
            k: 5,
            radius_km: 50.0,
            multiplier: m,
            classifier: "knn".into(),
            accuracy: 1.0 / 3.0,
            mse,
            n_regions: 30,
            runtime_ms: 17,
        }
    }

    #[test]
    fn csv_layout_and_roundtrip() {
        let cfg = ExperimentConfig::parse("feature_sets = baseline").unwrap();
        let mut rep = ExperimentReport::new(&cfg);
        rep.rows = vec![row(FeatureSet::Baseline, 0.0, 1.25), row(FeatureSet::SmoothSlang, 0.25, 0.1234567)];
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "feature_set,k,radius_km,multiplier,classifier,accuracy,mse,n_regions,runtime_ms");
        assert_eq!(lines[1], "baseline,5,50,0,knn,0.333333,1.250000,30,0");
        assert_eq!(lines[2], "smooth+slang,5,50,0.25,knn,0.333333,0.123457,30,0");

        let back = ExperimentReport::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.rows.len(), 2);
        assert_eq!(back.rows[1].feature_set, FeatureSet::SmoothSlang);
        assert_eq!(fmt_metric(back.rows[1].mse), "0.123457");

        rep.report_timing = true;
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().lines().nth(1).unwrap().ends_with(",17"));
    }

    #[test]
    fn rejects_foreign_csv() {
        assert!(ExperimentReport::read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn sidecar_carries_config_and_failures() {
        let cfg = ExperimentConfig::parse("feature_sets = baseline\nseed = 9").unwrap();
        let mut rep = ExperimentReport::new(&cfg);
        let spec = RowSpec::first(&cfg);
        rep.failures.push(Failure::new(&spec, "boom".into()));
        let mut buf = Vec::new();
        rep.write_sidecar(&cfg, &mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["seed"], 9);
        assert_eq!(v["config_hash"], cfg.hash());
        assert_eq!(v["failures"][0]["error"], "boom");
        assert_eq!(v["config"]["seed"], 9);
        assert!(rep.is_partial());
    }
}
