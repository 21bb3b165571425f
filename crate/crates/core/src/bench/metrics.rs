use serde::Serialize;

use crate::data::Label;
use crate::error::{Error, Result};

/// Confusion counts with "support" as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
}

impl Confusion {
    pub fn from_pairs(gold: &[Label], pred: &[Label]) -> Result<Self> {
        if gold.len() != pred.len() {
            return Err(Error::Metric(format!("{} labels vs {} predictions", gold.len(), pred.len())));
        }
        let mut c = Confusion::default();
        for (g, p) in gold.iter().zip(pred) {
            match (g, p) {
                (Label::Support, Label::Support) => c.tp += 1,
                (Label::Support, Label::Unsupport) => c.fn_ += 1,
                (Label::Unsupport, Label::Unsupport) => c.tn += 1,
                (Label::Unsupport, Label::Support) => c.fp += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.tn + self.fp
    }

    pub fn tpr(&self) -> f64 {
        self.tp as f64 / (self.tp + self.fn_) as f64
    }

    pub fn tnr(&self) -> f64 {
        self.tn as f64 / (self.tn + self.fp) as f64
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// Mean of the two per-class recalls; undefined unless both classes occur.
    pub fn balanced_accuracy(&self) -> Result<f64> {
        if self.tp + self.fn_ == 0 || self.tn + self.fp == 0 {
            return Err(Error::Metric("balanced accuracy needs both classes in the gold labels".into()));
        }
        Ok((self.tpr() + self.tnr()) / 2.0)
    }
}

pub fn balanced_accuracy(gold: &[Label], pred: &[Label]) -> Result<f64> {
    Confusion::from_pairs(gold, pred)?.balanced_accuracy()
}
