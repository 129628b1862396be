//! Crude-rate tables, disclosure suppression, and six-way ordinal binning by
//! distance from the mean in standard deviations.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Label = u8;

pub const NUM_LABELS: usize = 6;

/// Rows with fewer cases than this are suppressed.
pub const MIN_COUNT: u64 = 5;
/// Rows with fewer inhabitants than this are suppressed.
pub const MIN_POPULATION: u64 = 100;

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("binning needs at least 2 values, got {0}")]
    TooFewValues(usize),
    #[error("non-finite rate {0}")]
    NonFinite(f64),
    #[error("length mismatch: {0} predictions vs {1} truths")]
    LengthMismatch(usize, usize),
    #[error("rate table row {region}/{year}/{outcome}: {msg}")]
    BadRow {
        region: String,
        year: i32,
        outcome: String,
        msg: String,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub region_id: String,
    pub year: i32,
    pub outcome: String,
    /// Cases per 100,000 population.
    pub rate: f64,
    pub count: u64,
    pub population: u64,
    #[serde(skip)]
    pub suppressed: bool,
}

impl RateRow {
    pub fn trips_suppression(&self) -> bool {
        self.count < MIN_COUNT || self.population < MIN_POPULATION
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
}

impl RateTable {
    pub fn new(rows: Vec<RateRow>) -> Result<Self, LabelError> {
        let mut seen = BTreeSet::new();
        for r in &rows {
            let bad = |msg: &str| LabelError::BadRow {
                region: r.region_id.clone(),
                year: r.year,
                outcome: r.outcome.clone(),
                msg: msg.to_string(),
            };
            if !(r.rate >= 0.0 && r.rate.is_finite()) {
                return Err(bad("rate must be finite and non-negative"));
            }
            if !seen.insert((r.region_id.as_str(), r.year, r.outcome.as_str())) {
                return Err(bad("duplicate (region, year, outcome)"));
            }
        }
        Ok(Self { rows })
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, LabelError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let rows = rdr.deserialize().collect::<Result<Vec<RateRow>, _>>()?;
        Self::new(rows)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), LabelError> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| LabelError::Csv(e.into()))?;
        Ok(())
    }

    /// Every row with its suppression flag, as `...,suppressed` 0/1.
    pub fn write_diagnostics_csv<W: Write>(&self, writer: W) -> Result<(), LabelError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["region_id", "year", "outcome", "rate", "count", "population", "suppressed"])?;
        for r in &self.rows {
            w.write_record([
                r.region_id.clone(),
                r.year.to_string(),
                r.outcome.clone(),
                r.rate.to_string(),
                r.count.to_string(),
                r.population.to_string(),
                u8::from(r.suppressed).to_string(),
            ])?;
        }
        w.flush().map_err(|e| LabelError::Csv(e.into()))?;
        Ok(())
    }

    /// Non-suppressed rows for one outcome.
    pub fn retained<'a>(&'a self, outcome: &'a str) -> impl Iterator<Item = &'a RateRow> + 'a {
        self.rows.iter().filter(move |r| !r.suppressed && r.outcome == outcome)
    }
}

/// Flags rows with fewer than 5 cases or fewer than 100 inhabitants.
/// Returns the flagged table; use [`RateTable::retained`] for modeling.
pub fn apply_suppression(mut table: RateTable) -> RateTable {
    for r in &mut table.rows {
        r.suppressed = r.trips_suppression();
    }
    table
}

/// Mean and population standard deviation fitted on training rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub mean: f64,
    pub std: f64,
}

impl Binning {
    pub fn fit(values: &[f64]) -> Result<Self, LabelError> {
        if values.len() < 2 {
            return Err(LabelError::TooFewValues(values.len()));
        }
        if let Some(&x) = values.iter().find(|x| !x.is_finite()) {
            return Err(LabelError::NonFinite(x));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Ok(Self { mean, std: var.sqrt() })
    }

    /// Bands: z < -2, [-2,-1), [-1,0), [0,1), [1,2), z ≥ 2.
    pub fn label(&self, x: f64) -> Label {
        if self.std == 0.0 {
            return 3;
        }
        let z = (x - self.mean) / self.std;
        match z {
            z if z < -2.0 => 0,
            z if z < -1.0 => 1,
            z if z < 0.0 => 2,
            z if z < 1.0 => 3,
            z if z < 2.0 => 4,
            _ => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelVector {
    pub labels: BTreeMap<String, Label>,
    pub binning: Binning,
}

impl LabelVector {
    /// Labels `rates` using an already fitted binning (e.g. from training
    /// years).
    pub fn with_binning(rates: &[(String, f64)], binning: Binning) -> Self {
        Self {
            labels: rates.iter().map(|(id, x)| (id.clone(), binning.label(*x))).collect(),
            binning,
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), LabelError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["region_id", "label"])?;
        for (id, l) in &self.labels {
            w.write_record([id.as_str(), &l.to_string()])?;
        }
        w.flush().map_err(|e| LabelError::Csv(e.into()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, binning: Binning) -> Result<Self, LabelError> {
        #[derive(Deserialize)]
        struct Row {
            region_id: String,
            label: Label,
        }
        let mut rdr = csv::Reader::from_reader(reader);
        let mut labels = BTreeMap::new();
        for row in rdr.deserialize::<Row>() {
            let row = row?;
            labels.insert(row.region_id, row.label);
        }
        Ok(Self { labels, binning })
    }
}

/// Fits the binning on `rates` and labels them.
pub fn bin_by_stddev(rates: &[(String, f64)]) -> Result<LabelVector, LabelError> {
    let values: Vec<f64> = rates.iter().map(|(_, x)| *x).collect();
    Ok(LabelVector::with_binning(rates, Binning::fit(&values)?))
}

/// Mean squared difference of label indices.
pub fn ordinal_mse(predicted: &[Label], truth: &[Label]) -> Result<f64, LabelError> {
    if predicted.len() != truth.len() {
        return Err(LabelError::LengthMismatch(predicted.len(), truth.len()));
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    let sse: f64 = predicted
        .iter()
        .zip(truth)
        .map(|(&p, &t)| (p as f64 - t as f64).powi(2))
        .sum();
    Ok(sse / truth.len() as f64)
}

/// Mean squared error on raw rates.
pub fn rate_mse(predicted: &[f64], truth: &[f64]) -> Result<f64, LabelError> {
    if predicted.len() != truth.len() {
        return Err(LabelError::LengthMismatch(predicted.len(), truth.len()));
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    Ok(predicted.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / truth.len() as f64)
}
