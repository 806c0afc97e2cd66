//! Count-level evaluation: mean absolute and root-mean-square error.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub image_id: String,
    pub y_true: f64,
    pub y_pred: f64,
}

impl EvalRecord {
    pub fn new(image_id: impl Into<String>, y_true: f64, y_pred: f64) -> Self {
        Self {
            image_id: image_id.into(),
            y_true,
            y_pred,
        }
    }

    pub fn abs_err(&self) -> f64 {
        (self.y_true - self.y_pred).abs()
    }
}

pub fn mae(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    Ok(records.iter().map(EvalRecord::abs_err).sum::<f64>() / records.len() as f64)
}

pub fn rmse(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let mse = records.iter().map(|r| r.abs_err().powi(2)).sum::<f64>() / records.len() as f64;
    Ok(mse.sqrt())
}

/// Anything that can estimate a head count for an image.
pub trait CountPredictor<Input> {
    fn predict(&self, input: &Input) -> Result<f64>;
}

impl<I, F> CountPredictor<I> for F
where
    F: Fn(&I) -> Result<f64>,
{
    fn predict(&self, input: &I) -> Result<f64> {
        self(input)
    }
}

/// Per-image rows plus aggregates. Failed images are listed separately and
/// excluded from the aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub records: Vec<EvalRecord>,
    pub failures: Vec<(String, f64, String)>,
    pub mae: f64,
    pub rmse: f64,
}

/// Evaluates `predictor` on `(image_id, y_true, input)` items, where inputs
/// may already have failed to load.
pub fn evaluate<I, P>(predictor: &P, items: Vec<(String, f64, Result<I>)>, method: &str) -> Result<EvalReport>
where
    P: CountPredictor<I> + ?Sized,
{
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (id, y_true, input) in items {
        match input.and_then(|i| predictor.predict(&i)) {
            Ok(y_pred) => records.push(EvalRecord::new(id, y_true, y_pred)),
            Err(e) => {
                log::warn!("skipping {id}: {e}");
                failures.push((id, y_true, e.to_string()));
            }
        }
    }
    Ok(EvalReport {
        method: method.to_string(),
        mae: mae(&records)?,
        rmse: rmse(&records)?,
        records,
        failures,
    })
}

impl EvalReport {
    /// `image_id,y_true,y_pred,abs_err` rows, failed images with empty
    /// prediction fields, then `MAE,<v>` and `RMSE,<v>`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("image_id,y_true,y_pred,abs_err\n");
        for r in &self.records {
            writeln!(s, "{},{},{},{}", r.image_id, r.y_true, r.y_pred, r.abs_err()).unwrap();
        }
        for (id, y_true, _) in &self.failures {
            writeln!(s, "{id},{y_true},,").unwrap();
        }
        writeln!(s, "MAE,{}", self.mae).unwrap();
        writeln!(s, "RMSE,{}", self.rmse).unwrap();
        s
    }
}
