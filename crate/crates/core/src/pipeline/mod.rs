//! File-based stage runner: extraction, codebook and SVM training,
//! evaluation and prediction. Every stage reads its inputs from and writes
//! its outputs to an output directory; `run.json` records the config hashes
//! and seeds that produced the current artifacts.

pub mod config;
pub mod synth;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{derive_seed, CodebookConfig, FusionConfig, PathsConfig, PipelineConfig};
pub use synth::{write_synth_corpus, SynthConfig};

use crate::audio::{extract_prosody, read_pcm, AUDIO_DESCRIPTOR_DIM};
use crate::classifier::{
    cross_validate_c, decision_distance, normalize_score, train_svm_with, LinearSvmModel,
};
use crate::codebook::{encode_with, fit_gmm, sample_balanced, GmmCodebook};
use crate::corpus::{BinaryLabel, Manifest, Modality, SegmentRecord, Split};
use crate::descriptor::DescriptorSet;
use crate::error::{Error, Result};
use crate::fusion::{
    format_fused, format_scores, grid_search_theta, output_level_fuse, score_level_fuse,
    theta_grid, FusedRecord, FusionMode, ScorePair, ScoreRecord,
};
use crate::metrics::{scale_confidence, MetricReport};
use crate::video::{extract_video_descriptors, read_fvl, SURF_DIM};

pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelRecord {
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub selected_c: f64,
    pub training_segments: usize,
}

/// Contents of `run.json`. Deliberately free of timestamps.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunRecord {
    pub root_seed: u64,
    /// Descriptor config hash per modality.
    pub descriptors: BTreeMap<String, String>,
    pub models: BTreeMap<String, ModelRecord>,
    /// Fusion weight chosen by the last score-level evaluation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExtractSummary {
    pub written: usize,
    pub skipped: usize,
    /// `(segment id, error message)` in manifest order.
    pub failed: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModalityScore {
    /// Normalized confidence in `[0, 1]`.
    pub score: f64,
    /// Signed boundary distance; 0 for segments without descriptors.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentScores {
    pub segment_id: String,
    pub audio: ModalityScore,
    pub video: ModalityScore,
    pub sentiment: Option<f64>,
}

impl SegmentScores {
    pub fn pair(&self) -> ScorePair {
        ScorePair {
            segment_id: self.segment_id.clone(),
            video: self.video.score,
            audio: self.audio.score,
            truth: self.sentiment.map(crate::corpus::binarize),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub mode: FusionMode,
    pub theta: Option<f64>,
    pub audio: MetricReport,
    pub video: MetricReport,
    pub fused: MetricReport,
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub out_dir: PathBuf,
    pub force: bool,
}

fn ensure_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_text(p: &Path, text: &str) -> Result<()> {
    if let Some(parent) = p.parent() {
        ensure_dir(parent)?;
    }
    std::fs::write(p, text).map_err(|e| Error::io(p, e))
}

fn check_id(id: &str) -> Result<()> {
    if id.contains(['/', '\\']) || id == "." || id == ".." || id.contains(['\t', '\n']) {
        return Err(Error::Config(format!("segment id {id:?} cannot name a file")));
    }
    Ok(())
}

impl Pipeline {
    pub fn new(config: PipelineConfig, out_dir: impl Into<PathBuf>, force: bool) -> Result<Self> {
        config.validate()?;
        Ok(Pipeline {
            config,
            out_dir: out_dir.into(),
            force,
        })
    }

    pub fn run_path(&self) -> PathBuf {
        self.out_dir.join(RUN_FILE)
    }

    pub fn descriptor_path(&self, modality: Modality, id: &str) -> PathBuf {
        self.out_dir
            .join("descriptors")
            .join(modality.as_str())
            .join(format!("{id}.dsc"))
    }

    pub fn codebook_path(&self, modality: Modality) -> PathBuf {
        self.out_dir.join("models").join(format!("{modality}.gmm"))
    }

    pub fn model_path(&self, modality: Modality) -> PathBuf {
        self.out_dir.join("models").join(format!("{modality}.svm"))
    }

    pub fn eval_dir(&self, split: Split) -> PathBuf {
        self.out_dir.join("eval").join(split.as_str())
    }

    pub fn predictions_path(&self) -> PathBuf {
        self.out_dir.join("predict").join("predictions.txt")
    }

    pub fn load_run(&self) -> Result<RunRecord> {
        let path = self.run_path();
        if !path.exists() {
            return Ok(RunRecord {
                root_seed: self.config.seed,
                ..RunRecord::default()
            });
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format("run.json", e.to_string()))
    }

    fn save_run(&self, run: &RunRecord) -> Result<()> {
        let mut text = serde_json::to_string_pretty(run).expect("run record serializes");
        text.push('\n');
        write_text(&self.run_path(), &text)
    }

    fn guard(&self, artifact: String, recorded: Option<&String>, current: &str) -> Result<()> {
        match recorded {
            Some(r) if r == current => Ok(()),
            _ if self.force => {
                log::warn!("{artifact}: config hash differs from recorded run; continuing (forced)");
                Ok(())
            }
            Some(r) => Err(Error::HashMismatch {
                artifact,
                recorded: r.clone(),
                current: current.to_string(),
            }),
            None => Err(Error::MissingArtifact(self.run_path())),
        }
    }

    fn extract_one(&self, modality: Modality, seg: &SegmentRecord) -> Result<DescriptorSet> {
        check_id(&seg.id)?;
        match modality {
            Modality::Audio => {
                let signal = read_pcm(&seg.audio_path, seg.sample_rate)?;
                let track = extract_prosody(&signal, &self.config.prosody)?;
                let rows = track.descriptors(self.config.prosody.f0_max);
                DescriptorSet::from_rows(&seg.id, AUDIO_DESCRIPTOR_DIM, &rows)
            }
            Modality::Video => {
                let volume = read_fvl(&seg.video_path)?;
                extract_video_descriptors(&seg.id, &volume, &self.config.video)
            }
        }
    }

    /// Writes one descriptor file per segment and modality. Files already
    /// produced under the current config are left alone.
    pub fn extract(&self, manifest: &Manifest, modalities: &[Modality]) -> Result<ExtractSummary> {
        let mut run = self.load_run()?;
        let mut summary = ExtractSummary::default();
        for &m in modalities {
            let current = self.config.descriptor_hash(m);
            let recorded = run.descriptors.get(m.as_str()).cloned();
            let dir = self.out_dir.join("descriptors").join(m.as_str());
            let has_files = dir.exists()
                && std::fs::read_dir(&dir)
                    .map_err(|e| Error::io(&dir, e))?
                    .next()
                    .is_some();
            if let Some(r) = &recorded {
                if *r != current && has_files && !self.force {
                    return Err(Error::HashMismatch {
                        artifact: format!("{m} descriptors"),
                        recorded: r.clone(),
                        current,
                    });
                }
            }
            let up_to_date = recorded.as_deref() == Some(current.as_str());
            ensure_dir(&dir)?;
            let outcomes: Vec<Result<bool>> = manifest
                .segments
                .par_iter()
                .map(|seg| {
                    let path = self.descriptor_path(m, &seg.id);
                    if up_to_date && path.exists() {
                        return Ok(false);
                    }
                    self.extract_one(m, seg)?.write(&path)?;
                    Ok(true)
                })
                .collect();
            for (seg, outcome) in manifest.segments.iter().zip(outcomes) {
                match outcome {
                    Ok(true) => summary.written += 1,
                    Ok(false) => summary.skipped += 1,
                    Err(e) => {
                        log::error!("{m} extraction failed for {}: {e}", seg.id);
                        summary.failed.push((seg.id.clone(), format!("{m}: {e}")));
                    }
                }
            }
            run.descriptors.insert(m.as_str().to_string(), current);
            // A changed descriptor config invalidates the models built on it.
            if !up_to_date {
                run.models.remove(m.as_str());
            }
        }
        run.root_seed = self.config.seed;
        self.save_run(&run)?;
        Ok(summary)
    }

    fn load_descriptors(&self, modality: Modality, segments: &[&SegmentRecord]) -> Result<Vec<DescriptorSet>> {
        segments
            .par_iter()
            .map(|seg| {
                check_id(&seg.id)?;
                let path = self.descriptor_path(modality, &seg.id);
                if !path.exists() {
                    return Err(Error::MissingArtifact(path));
                }
                let set = DescriptorSet::read(&path)?;
                let dim = match modality {
                    Modality::Audio => AUDIO_DESCRIPTOR_DIM,
                    Modality::Video => SURF_DIM,
                };
                if set.dim() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        actual: set.dim(),
                    });
                }
                Ok(set)
            })
            .collect()
    }

    /// Trains a codebook and SVM per modality on the training split.
    pub fn train(&self, manifest: &Manifest, modalities: &[Modality]) -> Result<()> {
        let segments: Vec<&SegmentRecord> = manifest.iter().filter(|s| s.split == Split::Train).collect();
        if segments.is_empty() {
            return Err(Error::Empty("training split"));
        }
        let labels: Vec<BinaryLabel> = segments
            .iter()
            .map(|s| {
                s.label().ok_or_else(|| {
                    Error::InsufficientData(format!("training segment {} has no sentiment", s.id))
                })
            })
            .collect::<Result<_>>()?;
        for class in [BinaryLabel::Positive, BinaryLabel::Negative] {
            if !labels.contains(&class) {
                return Err(Error::InsufficientData(format!(
                    "training split has no {class} segments; both classes are required"
                )));
            }
        }

        let mut run = self.load_run()?;
        ensure_dir(&self.out_dir.join("models"))?;
        for &m in modalities {
            self.guard(
                format!("{m} descriptors"),
                run.descriptors.get(m.as_str()),
                &self.config.descriptor_hash(m),
            )?;
            let sets = self.load_descriptors(m, &segments)?;
            let labelled: Vec<(&DescriptorSet, BinaryLabel)> = sets.iter().zip(labels.iter().copied()).collect();

            let cb = &self.config.codebook;
            let seeds: BTreeMap<String, u64> = ["sample", "gmm", "cv", "svm"]
                .iter()
                .map(|s| (s.to_string(), self.config.stage_seed(&format!("{s}/{m}"))))
                .collect();
            let data = sample_balanced(&labelled, cb.budget, seeds["sample"])?;
            let fit = fit_gmm(&data, m, &cb.gmm_params(), seeds["gmm"])?;
            log::info!(
                "{m} codebook: {} EM passes, final log-likelihood {:.6e}",
                fit.loglik_trace.len(),
                fit.loglik_trace.last().copied().unwrap_or(f64::NAN)
            );
            let codebook = fit.codebook;

            let mut x = Vec::new();
            let mut y = Vec::new();
            for (set, label) in &labelled {
                let v = encode_with(&codebook, set, cb.pooling)?;
                if v.empty {
                    log::warn!("{m}: segment {} has no descriptors; left out of SVM training", set.segment_id());
                    continue;
                }
                x.push(v.values);
                y.push(*label);
            }
            let svm_cfg = &self.config.classifier;
            let cv = cross_validate_c(&x, &y, &svm_cfg.c_grid(), seeds["cv"], svm_cfg)?;
            let model = train_svm_with(&x, &y, cv.selected_c, seeds["svm"], svm_cfg)?;
            log::info!("{m} SVM: C = {} ({} segments)", cv.selected_c, x.len());

            codebook.write(&self.codebook_path(m))?;
            model.write(&self.model_path(m))?;
            let mut trace = String::from("# C\tmean_fold_accuracy\n");
            for (c, acc) in &cv.scores {
                writeln!(trace, "{c}\t{acc}").unwrap();
            }
            write_text(&self.out_dir.join("models").join(format!("{m}.cv.txt")), &trace)?;
            let mut ll = String::from("# em_pass\tloglik\n");
            for (i, v) in fit.loglik_trace.iter().enumerate() {
                writeln!(ll, "{i}\t{v}").unwrap();
            }
            write_text(&self.out_dir.join("models").join(format!("{m}.em.txt")), &ll)?;

            run.models.insert(
                m.as_str().to_string(),
                ModelRecord {
                    config_hash: self.config.model_hash(m),
                    seeds,
                    selected_c: cv.selected_c,
                    training_segments: x.len(),
                },
            );
        }
        run.root_seed = self.config.seed;
        self.save_run(&run)
    }

    fn load_models(&self, run: &RunRecord, m: Modality) -> Result<(GmmCodebook, LinearSvmModel)> {
        self.guard(
            format!("{m} model"),
            run.models.get(m.as_str()).map(|r| &r.config_hash),
            &self.config.model_hash(m),
        )?;
        let (gp, sp) = (self.codebook_path(m), self.model_path(m));
        for p in [&gp, &sp] {
            if !p.exists() {
                return Err(Error::MissingArtifact(p.clone()));
            }
        }
        let codebook = GmmCodebook::read(&gp)?;
        let model = LinearSvmModel::read(&sp)?;
        if codebook.modality != m || model.dim() != codebook.k {
            return Err(Error::Format {
                format: "model",
                message: format!("{m} codebook and SVM do not belong together"),
            });
        }
        Ok((codebook, model))
    }

    /// Confidence scores for both modalities.
    pub fn score_segments(&self, segments: &[&SegmentRecord]) -> Result<Vec<SegmentScores>> {
        let run = self.load_run()?;
        let mut per_modality = BTreeMap::new();
        for m in Modality::ALL {
            let (codebook, model) = self.load_models(&run, m)?;
            let sets = self.load_descriptors(m, segments)?;
            let scores: Vec<ModalityScore> = sets
                .par_iter()
                .map(|set| {
                    let v = encode_with(&codebook, set, self.config.codebook.pooling)?;
                    if v.empty {
                        // No evidence either way.
                        return Ok(ModalityScore {
                            score: 0.5,
                            distance: 0.0,
                        });
                    }
                    let distance = decision_distance(&model, &v.values)?;
                    Ok(ModalityScore {
                        score: normalize_score(&model, distance).value(),
                        distance,
                    })
                })
                .collect::<Result<_>>()?;
            per_modality.insert(m.as_str(), scores);
        }
        Ok(segments
            .iter()
            .enumerate()
            .map(|(i, s)| SegmentScores {
                segment_id: s.id.clone(),
                audio: per_modality["audio"][i],
                video: per_modality["video"][i],
                sentiment: s.sentiment,
            })
            .collect())
    }

    fn fuse(&self, scores: &[SegmentScores], mode: FusionMode, theta: Option<f64>) -> Vec<FusedRecord> {
        scores
            .iter()
            .map(|s| {
                let pair = s.pair();
                let prediction = match mode {
                    FusionMode::Score => score_level_fuse(&pair, theta.unwrap_or(0.5)),
                    FusionMode::Output => output_level_fuse(&pair),
                };
                FusedRecord {
                    segment_id: s.segment_id.clone(),
                    prediction,
                }
            })
            .collect()
    }

    /// Scores a split, picks or applies the fusion weight and writes
    /// score files, fused predictions and metric reports.
    pub fn evaluate(
        &self,
        manifest: &Manifest,
        split: Split,
        mode: FusionMode,
        theta_override: Option<f64>,
    ) -> Result<Evaluation> {
        let segments: Vec<&SegmentRecord> = manifest.iter().filter(|s| s.split == split).collect();
        if segments.is_empty() {
            return Err(Error::InsufficientData(format!("no segments in the {split} split")));
        }
        let truth: Vec<f64> = segments
            .iter()
            .map(|s| {
                s.sentiment.ok_or_else(|| {
                    Error::InsufficientData(format!("segment {} has no sentiment to evaluate against", s.id))
                })
            })
            .collect::<Result<_>>()?;
        let scores = self.score_segments(&segments)?;
        let dir = self.eval_dir(split);
        ensure_dir(&dir)?;

        let mut theta = None;
        if mode == FusionMode::Score {
            theta = match theta_override.or(self.config.fusion.theta) {
                Some(t) => {
                    if !(0.0..=1.0).contains(&t) {
                        return Err(Error::OutOfRange { value: t, range: "[0, 1]" });
                    }
                    write_text(&dir.join("theta_trace.txt"), &format!("# fixed\nselected\t{t}\n"))?;
                    Some(t)
                }
                None => {
                    let tuning_split = self.config.fusion.theta_split;
                    let tuning = if tuning_split == split {
                        scores.clone()
                    } else {
                        let segs: Vec<&SegmentRecord> =
                            manifest.iter().filter(|s| s.split == tuning_split).collect();
                        self.score_segments(&segs)?
                    };
                    let pairs: Vec<ScorePair> = tuning.iter().map(|s| s.pair()).collect();
                    let search = grid_search_theta(&pairs, &theta_grid(self.config.fusion.theta_step)?)?;
                    let mut text = format!("# grid search on {tuning_split}\n# theta\terror\n");
                    for (t, e) in &search.trace {
                        writeln!(text, "{t}\t{e}").unwrap();
                    }
                    writeln!(text, "selected\t{}", search.theta).unwrap();
                    write_text(&dir.join("theta_trace.txt"), &text)?;
                    let mut run = self.load_run()?;
                    run.theta = Some(search.theta);
                    self.save_run(&run)?;
                    Some(search.theta)
                }
            };
        }

        let mut records = Vec::with_capacity(2 * scores.len());
        for s in &scores {
            for (m, ms) in [(Modality::Audio, s.audio), (Modality::Video, s.video)] {
                records.push(ScoreRecord {
                    segment_id: s.segment_id.clone(),
                    modality: m,
                    score: ms.score,
                });
            }
        }
        write_text(&dir.join("scores.txt"), &format_scores(&records))?;
        let fused = self.fuse(&scores, mode, theta);
        write_text(&dir.join("fused.txt"), &format_fused(&fused))?;

        let unimodal = |name: &str, pick: fn(&SegmentScores) -> ModalityScore| -> Result<MetricReport> {
            let labels: Vec<BinaryLabel> = scores.iter().map(|s| BinaryLabel::from_bool(pick(s).distance > 0.0)).collect();
            let sent: Vec<f64> = scores.iter().map(|s| scale_confidence(pick(s).score)).collect::<Result<_>>()?;
            MetricReport::compute(name, &labels, &sent, &truth)
        };
        let audio = unimodal("audio", |s| s.audio)?;
        let video = unimodal("video", |s| s.video)?;
        let labels: Vec<BinaryLabel> = fused.iter().map(|f| f.prediction.label).collect();
        let sent: Vec<f64> = fused
            .iter()
            .map(|f| scale_confidence(f.prediction.fused_score))
            .collect::<Result<_>>()?;
        let fused_report = MetricReport::compute("fused", &labels, &sent, &truth)?;

        let mut text = format!("split = {split}\nfusion = {}\n", mode.as_str());
        if let Some(t) = theta {
            writeln!(text, "theta = {t}").unwrap();
        }
        for r in [&audio, &video, &fused_report] {
            text.push('\n');
            text.push_str(&r.to_text());
        }
        write_text(&dir.join("report.txt"), &text)?;
        let json = serde_json::json!({
            "split": split,
            "fusion": mode,
            "theta": theta,
            "reports": [&audio, &video, &fused_report],
        });
        let mut js = serde_json::to_string_pretty(&json).expect("report serializes");
        js.push('\n');
        write_text(&dir.join("report.json"), &js)?;

        Ok(Evaluation {
            mode,
            theta,
            audio,
            video,
            fused: fused_report,
        })
    }

    /// Writes fused predictions for every segment of `split` (all segments
    /// when `None`). Ground truth is not needed.
    pub fn predict(
        &self,
        manifest: &Manifest,
        split: Option<Split>,
        mode: FusionMode,
        theta_override: Option<f64>,
    ) -> Result<PathBuf> {
        let segments: Vec<&SegmentRecord> = manifest
            .iter()
            .filter(|s| split.is_none_or(|sp| s.split == sp))
            .collect();
        if segments.is_empty() {
            return Err(Error::Empty("prediction segments"));
        }
        let scores = self.score_segments(&segments)?;
        let theta = match mode {
            FusionMode::Output => None,
            FusionMode::Score => Some(
                theta_override
                    .or(self.config.fusion.theta)
                    .or(self.load_run()?.theta)
                    .unwrap_or_else(|| {
                        log::warn!("no fusion weight selected yet; using 0.5");
                        0.5
                    }),
            ),
        };
        let fused = self.fuse(&scores, mode, theta);
        let mut text = String::from("# segment_id\taudio_score\tvideo_score\tfused_score\tlabel\tsentiment\n");
        for (s, f) in scores.iter().zip(&fused) {
            writeln!(
                text,
                "{}\t{}\t{}\t{}\t{}\t{}",
                s.segment_id,
                s.audio.score,
                s.video.score,
                f.prediction.fused_score,
                f.prediction.label,
                scale_confidence(f.prediction.fused_score)?
            )
            .unwrap();
        }
        let path = self.predictions_path();
        write_text(&path, &text)?;
        Ok(path)
    }
}
