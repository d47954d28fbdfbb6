//! Late fusion of per-modality confidences: weighted score averaging with a
//! grid-searched weight, and ternary output-level voting. Also the text
//! formats for score and fused-prediction files.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{BinaryLabel, Modality};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    #[default]
    Score,
    Output,
}

impl FusionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Score => "score",
            FusionMode::Output => "output",
        }
    }
}

impl std::str::FromStr for FusionMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "score" => Ok(FusionMode::Score),
            "output" => Ok(FusionMode::Output),
            other => Err(format!("unknown fusion mode `{other}` (expected score or output)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScorePair {
    pub segment_id: String,
    pub video: f64,
    pub audio: f64,
    pub truth: Option<BinaryLabel>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedPrediction {
    pub fused_score: f64,
    pub label: BinaryLabel,
}

/// Decision threshold paired with weight `theta`.
pub fn threshold(theta: f64) -> f64 {
    1.0 - theta
}

fn check_theta(theta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::OutOfRange {
            value: theta,
            range: "[0, 1]",
        });
    }
    Ok(())
}

/// `theta * video + (1 - theta) * audio`, positive iff strictly above
/// `1 - theta`.
pub fn score_level_fuse(pair: &ScorePair, theta: f64) -> FusedPrediction {
    let fused_score = theta * pair.video + (1.0 - theta) * pair.audio;
    FusedPrediction {
        fused_score,
        label: BinaryLabel::from_bool(fused_score > threshold(theta)),
    }
}

/// Uniform three-way binning of a confidence into {-1, 0, 1}.
pub fn ternary(score: f64) -> i32 {
    if score < 1.0 / 3.0 {
        -1
    } else if score < 2.0 / 3.0 {
        0
    } else {
        1
    }
}

pub fn output_level_fuse(pair: &ScorePair) -> FusedPrediction {
    let fused_score = (ternary(pair.video) + ternary(pair.audio) + 2) as f64 / 4.0;
    FusedPrediction {
        fused_score,
        label: BinaryLabel::from_bool(fused_score > 0.5),
    }
}

/// Mean of the per-class error rates over `(truth, predicted)` pairs.
pub fn classification_error(predictions: &[(BinaryLabel, BinaryLabel)]) -> Result<f64> {
    let mut rates = Vec::with_capacity(2);
    for class in [BinaryLabel::Positive, BinaryLabel::Negative] {
        let (n, wrong) = predictions
            .iter()
            .filter(|(y, _)| *y == class)
            .fold((0usize, 0usize), |(n, w), (y, p)| (n + 1, w + (y != p) as usize));
        if n == 0 {
            return Err(Error::MissingClass(class.as_str()));
        }
        rates.push(wrong as f64 / n as f64);
    }
    Ok(rates.iter().sum::<f64>() / rates.len() as f64)
}

/// `{0, step, 2 step, ..., 1}`; `step` must divide 1.
pub fn theta_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::OutOfRange {
            value: step,
            range: "(0, 1]",
        });
    }
    let n = (1.0 / step).round() as usize;
    if ((n as f64) * step - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("theta step {step} does not divide [0, 1]")));
    }
    Ok((0..=n).map(|i| i as f64 / n as f64).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaSearch {
    pub theta: f64,
    /// `(theta, error)` for every grid point, in grid order.
    pub trace: Vec<(f64, f64)>,
}

/// Picks the grid weight with the lowest classification error. Ties go to the
/// weight closest to 0.5, then to the larger weight.
pub fn grid_search_theta(pairs: &[ScorePair], grid: &[f64]) -> Result<ThetaSearch> {
    if grid.is_empty() {
        return Err(Error::Empty("theta grid"));
    }
    let truth: Vec<BinaryLabel> = pairs
        .iter()
        .map(|p| {
            p.truth.ok_or_else(|| {
                Error::InsufficientData(format!("segment {} has no ground truth", p.segment_id))
            })
        })
        .collect::<Result<_>>()?;
    let mut trace = Vec::with_capacity(grid.len());
    for &theta in grid {
        check_theta(theta)?;
        let preds: Vec<(BinaryLabel, BinaryLabel)> = pairs
            .iter()
            .zip(&truth)
            .map(|(p, &y)| (y, score_level_fuse(p, theta).label))
            .collect();
        trace.push((theta, classification_error(&preds)?));
    }
    let better = |a: (f64, f64), b: (f64, f64)| {
        if a.1 != b.1 {
            return a.1 < b.1;
        }
        let (da, db) = ((a.0 - 0.5).abs(), (b.0 - 0.5).abs());
        if da != db {
            return da < db;
        }
        a.0 > b.0
    };
    let mut best = trace[0];
    for &cand in &trace[1..] {
        if better(cand, best) {
            best = cand;
        }
    }
    Ok(ThetaSearch {
        theta: best.0,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub segment_id: String,
    pub modality: Modality,
    pub score: f64,
}

fn split_fields(line: &str, expected: usize, lineno: usize, format: &'static str) -> Result<Vec<String>> {
    let fields: Vec<String> = line.split('\t').map(|f| f.trim().to_string()).collect();
    if fields.len() != expected || fields.iter().any(|f| f.is_empty()) {
        return Err(Error::format(
            format,
            format!("line {lineno}: expected {expected} tab-separated fields"),
        ));
    }
    Ok(fields)
}

fn parse_unit(field: &str, lineno: usize, format: &'static str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| Error::format(format, format!("line {lineno}: bad number `{field}`")))?;
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::format(format, format!("line {lineno}: score {v} outside [0, 1]")));
    }
    Ok(v)
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

/// Parses `segment_id<TAB>modality<TAB>score` lines; `#` starts a comment.
pub fn parse_scores(text: &str) -> Result<Vec<ScoreRecord>> {
    content_lines(text)
        .map(|(n, line)| {
            let f = split_fields(line, 3, n, "scores")?;
            let modality = f[1]
                .parse()
                .map_err(|e: String| Error::format("scores", format!("line {n}: {e}")))?;
            Ok(ScoreRecord {
                segment_id: f[0].clone(),
                modality,
                score: parse_unit(&f[2], n, "scores")?,
            })
        })
        .collect()
}

pub fn format_scores(records: &[ScoreRecord]) -> String {
    let mut out = String::from("# segment_id\tmodality\tscore\n");
    for r in records {
        writeln!(out, "{}\t{}\t{}", r.segment_id, r.modality, r.score).unwrap();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedRecord {
    pub segment_id: String,
    pub prediction: FusedPrediction,
}

/// Parses `segment_id<TAB>fused_score<TAB>label` lines.
pub fn parse_fused(text: &str) -> Result<Vec<FusedRecord>> {
    content_lines(text)
        .map(|(n, line)| {
            let f = split_fields(line, 3, n, "fused")?;
            let label = f[2]
                .parse()
                .map_err(|e: String| Error::format("fused", format!("line {n}: {e}")))?;
            Ok(FusedRecord {
                segment_id: f[0].clone(),
                prediction: FusedPrediction {
                    fused_score: parse_unit(&f[1], n, "fused")?,
                    label,
                },
            })
        })
        .collect()
}

pub fn format_fused(records: &[FusedRecord]) -> String {
    let mut out = String::from("# segment_id\tfused_score\tlabel\n");
    for r in records {
        writeln!(
            out,
            "{}\t{}\t{}",
            r.segment_id, r.prediction.fused_score, r.prediction.label
        )
        .unwrap();
    }
    out
}

/// Joins per-modality score records into pairs, in order of first
/// appearance. Every segment must have exactly one score per modality.
pub fn pair_scores(records: &[ScoreRecord]) -> Result<Vec<ScorePair>> {
    let mut order: Vec<String> = Vec::new();
    let mut map: std::collections::HashMap<&str, (Option<f64>, Option<f64>)> = Default::default();
    for r in records {
        let entry = map.entry(&r.segment_id).or_insert_with(|| {
            order.push(r.segment_id.clone());
            (None, None)
        });
        let slot = match r.modality {
            Modality::Video => &mut entry.0,
            Modality::Audio => &mut entry.1,
        };
        if slot.replace(r.score).is_some() {
            return Err(Error::format(
                "scores",
                format!("duplicate {} score for {}", r.modality, r.segment_id),
            ));
        }
    }
    order
        .into_iter()
        .map(|id| match map[id.as_str()] {
            (Some(video), Some(audio)) => Ok(ScorePair {
                segment_id: id,
                video,
                audio,
                truth: None,
            }),
            _ => Err(Error::format("scores", format!("segment {id} lacks a modality score"))),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use BinaryLabel::{Negative as N, Positive as P};

    fn pair(v: f64, a: f64) -> ScorePair {
        ScorePair {
            segment_id: "s".into(),
            video: v,
            audio: a,
            truth: None,
        }
    }

    #[test]
    fn score_level_examples() {
        let f = score_level_fuse(&pair(0.9, 0.5), 0.5);
        assert!((f.fused_score - 0.7).abs() < 1e-12);
        assert_eq!(f.label, P);
        assert_eq!(score_level_fuse(&pair(0.4, 0.4), 0.5).label, N);
        // Video only at theta = 1.
        assert_eq!(score_level_fuse(&pair(0.01, 1.0), 1.0).label, P);
        assert_eq!(score_level_fuse(&pair(0.0, 1.0), 1.0).label, N);
    }

    #[test]
    fn output_level_examples() {
        let f = output_level_fuse(&pair(0.9, 0.8));
        assert_eq!((f.fused_score, f.label), (1.0, P));
        let f = output_level_fuse(&pair(0.9, 0.1));
        assert_eq!((f.fused_score, f.label), (0.5, N));
        let f = output_level_fuse(&pair(0.0, 0.0));
        assert_eq!((f.fused_score, f.label), (0.0, N));
        assert_eq!(ternary(1.0 / 3.0), 0);
        assert_eq!(ternary(2.0 / 3.0), 1);
    }

    #[test]
    fn error_examples() {
        assert_eq!(classification_error(&[(P, P), (N, N)]).unwrap(), 0.0);
        assert_eq!(classification_error(&[(P, N), (P, N), (N, N)]).unwrap(), 0.5);
        assert_eq!(classification_error(&[(P, P), (P, N), (N, N), (N, P)]).unwrap(), 0.5);
        assert!(classification_error(&[(P, P)]).is_err());
    }

    #[test]
    fn grid_values() {
        assert_eq!(theta_grid(0.2).unwrap(), vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]);
        assert!(theta_grid(0.3).is_err());
        assert!(theta_grid(0.0).is_err());
    }

    #[test]
    fn perfect_video_selects_one() {
        let mut pairs = Vec::new();
        for i in 0..40 {
            let pos = i % 2 == 0;
            let audio = ((i * 37) % 100) as f64 / 100.0;
            // Barely above zero: only the video-only threshold separates them.
            let video = if pos { 0.05 } else { 0.0 };
            pairs.push(ScorePair {
                segment_id: format!("s{i}"),
                video,
                audio,
                truth: Some(BinaryLabel::from_bool(pos)),
            });
        }
        let search = grid_search_theta(&pairs, &theta_grid(0.2).unwrap()).unwrap();
        assert_eq!(search.theta, 1.0);
        assert_eq!(search.trace.len(), 6);
        assert_eq!(search.trace[5].1, 0.0);
    }

    #[test]
    fn ties_prefer_middle_then_larger() {
        // Zero scores are negative under every threshold, so all weights tie.
        let pairs = vec![
            ScorePair { segment_id: "a".into(), video: 0.0, audio: 0.0, truth: Some(P) },
            ScorePair { segment_id: "b".into(), video: 0.0, audio: 0.0, truth: Some(N) },
        ];
        let grid = theta_grid(0.2).unwrap();
        let s = grid_search_theta(&pairs, &grid).unwrap();
        assert!(s.trace.iter().all(|t| t.1 == s.trace[0].1));
        assert_eq!(s.theta, 0.6);
        let s = grid_search_theta(&pairs, &theta_grid(0.25).unwrap()).unwrap();
        assert_eq!(s.theta, 0.5);
    }

    #[test]
    fn score_file_round_trip() {
        let recs = vec![
            ScoreRecord { segment_id: "a".into(), modality: Modality::Audio, score: 0.1 + 0.2 },
            ScoreRecord { segment_id: "a".into(), modality: Modality::Video, score: 1.0 },
        ];
        let text = format_scores(&recs);
        assert_eq!(parse_scores(&text).unwrap(), recs);
        let pairs = pair_scores(&recs).unwrap();
        assert_eq!((pairs[0].video, pairs[0].audio), (1.0, 0.1 + 0.2));
        assert!(parse_scores("a\taudio\t1.5\n").is_err());
        assert!(parse_scores("a\tsmell\t0.5\n").is_err());
        assert!(parse_scores("a\taudio\n").is_err());
        assert!(pair_scores(&recs[..1]).is_err());
    }

    #[test]
    fn fused_file_round_trip() {
        let recs = vec![FusedRecord {
            segment_id: "x".into(),
            prediction: FusedPrediction { fused_score: 0.75, label: P },
        }];
        assert_eq!(parse_fused(&format_fused(&recs)).unwrap(), recs);
        assert!(parse_fused("x\t0.5\tmaybe\n").is_err());
    }
}
