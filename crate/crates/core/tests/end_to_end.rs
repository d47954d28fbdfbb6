use std::path::Path;

use sentibof::corpus::{load_manifest, Manifest, Modality, Split};
use sentibof::descriptor::DescriptorSet;
use sentibof::fusion::{parse_fused, parse_scores, pair_scores, score_level_fuse, FusionMode};
use sentibof::pipeline::{write_synth_corpus, Pipeline, PipelineConfig, SynthConfig};
use sentibof::Error;

fn small_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.codebook.components = 4;
    // More than the audio descriptors of either class: exercises resampling.
    cfg.codebook.budget = 4000;
    cfg.codebook.max_iters = 30;
    cfg
}

fn corpus(dir: &Path, segments: usize, train: usize) -> Manifest {
    let cfg = SynthConfig {
        segments,
        train,
        ..SynthConfig::default()
    };
    write_synth_corpus(dir, &cfg, 5).unwrap();
    load_manifest(&dir.join("manifest.jsonl")).unwrap()
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn extract_writes_one_file_per_segment_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(&dir.path().join("c"), 3, 3);
    let p = Pipeline::new(small_config(), dir.path().join("out"), false).unwrap();
    let s = p.extract(&manifest, &[Modality::Audio]).unwrap();
    assert_eq!((s.written, s.skipped, s.failed.len()), (3, 0, 0));
    for seg in manifest.iter() {
        let path = p.descriptor_path(Modality::Audio, &seg.id);
        assert_eq!(&read(&path)[..4], b"DSC1");
        assert_eq!(DescriptorSet::read(&path).unwrap().dim(), 3);
    }
    let again = p.extract(&manifest, &[Modality::Audio]).unwrap();
    assert_eq!((again.written, again.skipped), (0, 3));
}

#[test]
fn missing_media_is_reported_per_segment() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = corpus(&dir.path().join("c"), 3, 3);
    manifest.segments[1].audio_path = dir.path().join("nope.pcm");
    let p = Pipeline::new(small_config(), dir.path().join("out"), false).unwrap();
    let s = p.extract(&manifest, &[Modality::Audio]).unwrap();
    assert_eq!(s.written, 2);
    assert_eq!(s.failed.len(), 1);
    assert_eq!(s.failed[0].0, manifest.segments[1].id);
}

#[test]
fn single_class_training_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = corpus(&dir.path().join("c"), 6, 6);
    manifest.segments.retain(|s| s.sentiment.unwrap() > 0.0);
    let p = Pipeline::new(small_config(), dir.path().join("out"), false).unwrap();
    p.extract(&manifest, &Modality::ALL).unwrap();
    let err = p.train(&manifest, &Modality::ALL).unwrap_err();
    assert!(err.to_string().contains("negative"), "{err}");
}

#[test]
fn staged_run_evaluates_predicts_and_guards_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(&dir.path().join("c"), 40, 30);
    let out = dir.path().join("out");
    let p = Pipeline::new(small_config(), &out, false).unwrap();
    assert!(p.extract(&manifest, &Modality::ALL).unwrap().failed.is_empty());
    p.train(&manifest, &Modality::ALL).unwrap();

    // Output-level fusion lands on the five-point grid.
    let e = p.evaluate(&manifest, Split::Validation, FusionMode::Output, None).unwrap();
    assert!(e.theta.is_none());
    let fused = parse_fused(&String::from_utf8(read(out.join("eval/validation/fused.txt"))).unwrap()).unwrap();
    assert_eq!(fused.len(), 10);
    for f in &fused {
        assert!([0.0, 0.25, 0.5, 0.75, 1.0].contains(&f.prediction.fused_score));
    }

    // Fixed equal weighting matches fusing the written score file by hand.
    let e = p.evaluate(&manifest, Split::Validation, FusionMode::Score, Some(0.5)).unwrap();
    assert_eq!(e.theta, Some(0.5));
    let dir_v = out.join("eval/validation");
    let scores = parse_scores(&String::from_utf8(read(dir_v.join("scores.txt"))).unwrap()).unwrap();
    let fused = parse_fused(&String::from_utf8(read(dir_v.join("fused.txt"))).unwrap()).unwrap();
    for (pair, f) in pair_scores(&scores).unwrap().iter().zip(&fused) {
        let hand = score_level_fuse(pair, 0.5);
        assert_eq!(pair.segment_id, f.segment_id);
        assert_eq!(hand.fused_score, f.prediction.fused_score);
        assert_eq!(hand.label, f.prediction.label);
    }
    let report = String::from_utf8(read(dir_v.join("report.txt"))).unwrap();
    assert!(report.contains("[fused]") && report.contains("actual \\ predicted"));
    assert!(dir_v.join("report.json").exists());

    // Grid search records its trace and the chosen weight.
    let e = p.evaluate(&manifest, Split::Validation, FusionMode::Score, None).unwrap();
    let trace = String::from_utf8(read(dir_v.join("theta_trace.txt"))).unwrap();
    assert!(trace.contains(&format!("selected\t{}", e.theta.unwrap())));

    // Prediction needs no labels and is reproducible.
    let mut unlabeled = manifest.clone();
    for s in &mut unlabeled.segments {
        s.sentiment = None;
    }
    let path = p.predict(&unlabeled, None, FusionMode::Score, None).unwrap();
    let first = read(&path);
    let text = String::from_utf8(first.clone()).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 40);
    p.predict(&unlabeled, None, FusionMode::Score, None).unwrap();
    assert_eq!(read(&path), first);

    // Deleting models and retraining reproduces them exactly.
    let gmm = read(p.codebook_path(Modality::Video));
    let svm = read(p.model_path(Modality::Audio));
    std::fs::remove_dir_all(out.join("models")).unwrap();
    p.train(&manifest, &Modality::ALL).unwrap();
    assert_eq!(read(p.codebook_path(Modality::Video)), gmm);
    assert_eq!(read(p.model_path(Modality::Audio)), svm);

    // A different descriptor config no longer matches the trained models.
    let mut changed = small_config();
    changed.video.threshold = 5e-4;
    let q = Pipeline::new(changed.clone(), &out, false).unwrap();
    let err = q.evaluate(&manifest, Split::Validation, FusionMode::Output, None).unwrap_err();
    assert!(matches!(err, Error::HashMismatch { .. }), "{err}");
    assert!(matches!(q.extract(&manifest, &[Modality::Video]), Err(Error::HashMismatch { .. })));
    let forced = Pipeline::new(changed, &out, true).unwrap();
    forced.evaluate(&manifest, Split::Validation, FusionMode::Output, None).unwrap();
}
