//! Evaluation metrics: confusion matrix, precision/recall/F1, MAE, Pearson
//! correlation, binary and class-averaged accuracies, and the linear map from
//! confidence to sentiment intensity.

use std::fmt::Write as _;

use serde::Serialize;

use crate::corpus::BinaryLabel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Rows are actual classes, columns predicted classes.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<18}{:>12}{:>12}", "actual \\ predicted", "positive", "negative").unwrap();
        writeln!(s, "{:<18}{:>12}{:>12}", "positive", self.tp, self.fn_).unwrap();
        writeln!(s, "{:<18}{:>12}{:>12}", "negative", self.fp, self.tn).unwrap();
        s
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { left: a, right: b });
    }
    if a == 0 {
        return Err(Error::Empty("metric input"));
    }
    Ok(())
}

pub fn confusion(pred: &[BinaryLabel], truth: &[BinaryLabel]) -> Result<ConfusionMatrix> {
    check_lengths(pred.len(), truth.len())?;
    let mut cm = ConfusionMatrix::default();
    for (p, t) in pred.iter().zip(truth) {
        match (t.is_positive(), p.is_positive()) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fn_ += 1,
            (false, true) => cm.fp += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Some quantity had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

pub fn prf1(cm: &ConfusionMatrix) -> Prf1 {
    let ratio = |num: u64, den: u64| if den == 0 { None } else { Some(num as f64 / den as f64) };
    let p = ratio(cm.tp, cm.tp + cm.fp);
    let r = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = match (p, r) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    Prf1 {
        precision: p.unwrap_or(0.0),
        recall: r.unwrap_or(0.0),
        f1: f1.unwrap_or(0.0),
        degenerate: p.is_none() || r.is_none() || f1.is_none(),
    }
}

/// Maps a confidence in `[0, 1]` linearly onto sentiment `[-3, 3]`.
pub fn scale_confidence(c: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::OutOfRange {
            value: c,
            range: "[0, 1]",
        });
    }
    Ok(6.0 * c - 3.0)
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred.len(), truth.len())?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Correlation {
    pub value: f64,
    /// An input was constant; `value` is reported as 0.
    pub degenerate: bool,
}

pub fn pearson(pred: &[f64], truth: &[f64]) -> Result<Correlation> {
    check_lengths(pred.len(), truth.len())?;
    if pred.len() < 2 {
        return Err(Error::InsufficientData("correlation needs two samples".into()));
    }
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mt = truth.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let (dp, dt) = (p - mp, t - mt);
        sxy += dp * dt;
        sxx += dp * dp;
        syy += dt * dt;
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return Ok(Correlation {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Correlation {
        value: (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// Integer class of a sentiment value: 7 classes round then clamp to
/// `[-3, 3]`; 5 classes clamp to `[-2, 2]` then round.
pub fn sentiment_class(s: f64, classes: u32) -> Result<i32> {
    match classes {
        7 => Ok(s.round().clamp(-3.0, 3.0) as i32),
        5 => Ok(s.clamp(-2.0, 2.0).round() as i32),
        other => Err(Error::Config(format!("unsupported class count {other}"))),
    }
}

/// Mean per-class recall over the classes present in `truth`.
pub fn multiclass_accuracy(pred: &[f64], truth: &[f64], classes: u32) -> Result<f64> {
    check_lengths(pred.len(), truth.len())?;
    let offset = (classes / 2) as i32;
    let mut counts = vec![(0u64, 0u64); classes as usize];
    for (p, t) in pred.iter().zip(truth) {
        let tc = sentiment_class(*t, classes)?;
        let pc = sentiment_class(*p, classes)?;
        let slot = &mut counts[(tc + offset) as usize];
        slot.0 += 1;
        slot.1 += (tc == pc) as u64;
    }
    let recalls: Vec<f64> = counts
        .iter()
        .filter(|(n, _)| *n > 0)
        .map(|(n, c)| *c as f64 / *n as f64)
        .collect();
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// `(plain accuracy, mean per-class recall)` over the classes present.
pub fn binary_accuracies(pred: &[BinaryLabel], truth: &[BinaryLabel]) -> Result<(f64, f64)> {
    let cm = confusion(pred, truth)?;
    Ok(accuracies_from(&cm))
}

fn accuracies_from(cm: &ConfusionMatrix) -> (f64, f64) {
    let plain = (cm.tp + cm.tn) as f64 / cm.total() as f64;
    let mut recalls = Vec::new();
    if cm.tp + cm.fn_ > 0 {
        recalls.push(cm.tp as f64 / (cm.tp + cm.fn_) as f64);
    }
    if cm.tn + cm.fp > 0 {
        recalls.push(cm.tn as f64 / (cm.tn + cm.fp) as f64);
    }
    (plain, recalls.iter().sum::<f64>() / recalls.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub name: String,
    pub segments: usize,
    pub confusion: ConfusionMatrix,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub prf1_degenerate: bool,
    pub mae: f64,
    pub correlation: f64,
    pub correlation_degenerate: bool,
    pub binary_accuracy: f64,
    pub weighted_binary_accuracy: f64,
    pub acc5: f64,
    pub acc7: f64,
}

impl MetricReport {
    /// Builds a report from predicted labels and predicted/true sentiment.
    pub fn compute(
        name: &str,
        pred_labels: &[BinaryLabel],
        pred_sentiment: &[f64],
        truth_sentiment: &[f64],
    ) -> Result<Self> {
        check_lengths(pred_labels.len(), truth_sentiment.len())?;
        check_lengths(pred_sentiment.len(), truth_sentiment.len())?;
        let truth: Vec<BinaryLabel> = truth_sentiment.iter().map(|&s| crate::corpus::binarize(s)).collect();
        let cm = confusion(pred_labels, &truth)?;
        let p = prf1(&cm);
        let (binary_accuracy, weighted_binary_accuracy) = accuracies_from(&cm);
        let corr = if pred_sentiment.len() >= 2 {
            pearson(pred_sentiment, truth_sentiment)?
        } else {
            Correlation {
                value: 0.0,
                degenerate: true,
            }
        };
        Ok(MetricReport {
            name: name.to_string(),
            segments: truth.len(),
            confusion: cm,
            precision: p.precision,
            recall: p.recall,
            f1: p.f1,
            prf1_degenerate: p.degenerate,
            mae: mae(pred_sentiment, truth_sentiment)?,
            correlation: corr.value,
            correlation_degenerate: corr.degenerate,
            binary_accuracy,
            weighted_binary_accuracy,
            acc5: multiclass_accuracy(pred_sentiment, truth_sentiment, 5)?,
            acc7: multiclass_accuracy(pred_sentiment, truth_sentiment, 7)?,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "[{}]", self.name).unwrap();
        let rows: [(&str, String); 13] = [
            ("segments", self.segments.to_string()),
            ("precision", format!("{:.4}", self.precision)),
            ("recall", format!("{:.4}", self.recall)),
            ("f1", format!("{:.4}", self.f1)),
            ("prf1_degenerate", self.prf1_degenerate.to_string()),
            ("mae", format!("{:.4}", self.mae)),
            ("correlation", format!("{:.4}", self.correlation)),
            ("correlation_degenerate", self.correlation_degenerate.to_string()),
            ("binary_accuracy", format!("{:.4}", self.binary_accuracy)),
            ("weighted_binary_accuracy", format!("{:.4}", self.weighted_binary_accuracy)),
            ("acc5", format!("{:.4}", self.acc5)),
            ("acc7", format!("{:.4}", self.acc7)),
            ("class_binning", "acc7 round-then-clamp, acc5 clamp-then-round (convention)".into()),
        ];
        for (k, v) in rows {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s.push_str(&self.confusion.to_table());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use BinaryLabel::{Negative as N, Positive as P};

    fn cm(tp: u64, fn_: u64, fp: u64, tn: u64) -> ConfusionMatrix {
        ConfusionMatrix { tp, fp, fn_, tn }
    }

    #[test]
    fn confusion_counts() {
        assert_eq!(confusion(&[P, N], &[P, N]).unwrap(), cm(1, 0, 0, 1));
        assert_eq!(confusion(&[P, P, N], &[N, P, P]).unwrap(), cm(1, 1, 1, 0));
        assert!(confusion(&[P], &[]).is_err());
        assert!(confusion(&[], &[]).is_err());
    }

    #[test]
    fn degenerate_prf1() {
        let r = prf1(&cm(0, 0, 0, 10));
        assert!(r.degenerate);
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn published_video_row() {
        let r = prf1(&cm(884, 344, 231, 240));
        assert!((r.precision - 0.7928).abs() < 5e-4);
        assert!((r.recall - 0.7198).abs() < 5e-4);
        assert!((r.f1 - 0.7545).abs() < 5e-4);
    }

    #[test]
    fn scaling() {
        assert_eq!(scale_confidence(0.5).unwrap(), 0.0);
        assert_eq!(scale_confidence(1.0).unwrap(), 3.0);
        assert_eq!(scale_confidence(0.0).unwrap(), -3.0);
        assert!(scale_confidence(1.1).is_err());
    }

    #[test]
    fn mae_and_pearson_examples() {
        assert_eq!(mae(&[1.0, -1.0], &[0.0, 0.0]).unwrap(), 1.0);
        let x = [1.0, 2.0, 3.0];
        assert!((pearson(&x, &x).unwrap().value - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &[-1.0, -2.0, -3.0]).unwrap().value + 1.0).abs() < 1e-12);
        // Sxy = 3, Sxx = 2, Syy = 14/3.
        let r = pearson(&x, &[1.0, 2.0, 4.0]).unwrap().value;
        assert!((r - 3.0 * (3.0f64 / 28.0).sqrt()).abs() < 1e-12);
        assert!(pearson(&x, &[2.0, 2.0, 2.0]).unwrap().degenerate);
    }

    #[test]
    fn multiclass_examples() {
        let grid: Vec<f64> = (-3..=3).map(|v| v as f64).collect();
        assert_eq!(multiclass_accuracy(&grid, &grid, 7).unwrap(), 1.0);
        let zeros = vec![0.0; 7];
        assert!((multiclass_accuracy(&zeros, &grid, 7).unwrap() - 1.0 / 7.0).abs() < 1e-12);
        assert_eq!(sentiment_class(2.6, 7).unwrap(), sentiment_class(3.0, 7).unwrap());
        assert_eq!(sentiment_class(2.6, 5).unwrap(), 2);
        assert_eq!(sentiment_class(3.0, 5).unwrap(), 2);
    }

    #[test]
    fn binary_accuracy_examples() {
        let truth = [P, P, P, N];
        assert_eq!(binary_accuracies(&truth, &truth).unwrap(), (1.0, 1.0));
        assert_eq!(binary_accuracies(&[P; 4], &truth).unwrap(), (0.75, 0.5));
        let (plain, _) = accuracies_from(&cm(1031, 197, 303, 168));
        assert!((plain - 0.7057).abs() < 1e-4);
    }

    #[test]
    fn report_text_has_axes() {
        let r = MetricReport::compute("fused", &[P, N], &[1.0, -1.0], &[2.0, -2.0]).unwrap();
        assert_eq!(r.f1, 1.0);
        let t = r.to_text();
        assert!(t.contains("actual \\ predicted"));
        assert!(t.contains("f1 = 1.0000"));
    }
}
