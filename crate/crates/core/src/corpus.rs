//! Segment records, manifest ingestion and label binarization.
//!
//! A manifest is a UTF-8 file with one JSON object per line:
//!
//! ```text
//! # comment
//! {"id":"seg-001","audio":"a/seg-001.pcm","video":"v/seg-001.fvl","sentiment":1.5,"split":"train"}
//! ```
//!
//! `sentiment` may be omitted for unlabeled segments (prediction only) and
//! `sample_rate` may be given for headerless PCM audio. Relative media paths
//! are resolved against the manifest's directory by [`load_manifest`].

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SENTIMENT_MIN: f64 = -3.0;
pub const SENTIMENT_MAX: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split token {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Video,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Audio, Modality::Video];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Video => "video",
        }
    }

    /// Single-byte tag used in binary model files.
    pub fn tag(self) -> u8 {
        match self {
            Modality::Audio => 0,
            Modality::Video => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Modality::Audio),
            1 => Some(Modality::Video),
            _ => None,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "audio" => Ok(Modality::Audio),
            "video" => Ok(Modality::Video),
            other => Err(format!("unknown modality {other:?}")),
        }
    }
}

/// Binary sentiment polarity. Zero sentiment is negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryLabel {
    Positive,
    Negative,
}

impl BinaryLabel {
    /// `+1.0` for positive, `-1.0` for negative.
    pub fn sign(self) -> f64 {
        match self {
            BinaryLabel::Positive => 1.0,
            BinaryLabel::Negative => -1.0,
        }
    }

    pub fn is_positive(self) -> bool {
        self == BinaryLabel::Positive
    }

    pub fn from_bool(positive: bool) -> Self {
        if positive {
            BinaryLabel::Positive
        } else {
            BinaryLabel::Negative
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BinaryLabel::Positive => "positive",
            BinaryLabel::Negative => "negative",
        }
    }
}

impl fmt::Display for BinaryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BinaryLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "positive" => Ok(BinaryLabel::Positive),
            "negative" => Ok(BinaryLabel::Negative),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

/// Thresholds a sentiment score: strictly greater than zero is positive,
/// everything else (including exactly zero) is negative.
pub fn binarize(sentiment: f64) -> BinaryLabel {
    BinaryLabel::from_bool(sentiment > 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub id: String,
    #[serde(rename = "audio")]
    pub audio_path: PathBuf,
    #[serde(rename = "video")]
    pub video_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentiment: Option<f64>,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_rate: Option<u32>,
}

impl SegmentRecord {
    pub fn label(&self) -> Option<BinaryLabel> {
        self.sentiment.map(binarize)
    }
}

// Wire form: split kept as a string so unknown tokens get a dedicated error.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    audio: PathBuf,
    video: PathBuf,
    #[serde(default)]
    sentiment: Option<f64>,
    split: String,
    #[serde(default)]
    sample_rate: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub segments: Vec<SegmentRecord>,
}

impl Manifest {
    pub fn new(segments: Vec<SegmentRecord>) -> Self {
        Manifest { segments }
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, SegmentRecord> {
        self.segments.iter()
    }

    /// Serializes back to the line-delimited text form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            out.push_str(&serde_json::to_string(seg).expect("segment serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Parses manifest text. Paths are kept exactly as written.
pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let mut segments = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(trimmed).map_err(|e| Error::Manifest {
            line: line_no,
            message: e.to_string(),
        })?;
        let split = raw.split.parse::<Split>().map_err(|message| Error::Manifest {
            line: line_no,
            message,
        })?;
        if let Some(s) = raw.sentiment {
            if !(SENTIMENT_MIN..=SENTIMENT_MAX).contains(&s) {
                return Err(Error::Manifest {
                    line: line_no,
                    message: format!("sentiment {s} outside [-3, 3]"),
                });
            }
        }
        if raw.id.is_empty() {
            return Err(Error::Manifest {
                line: line_no,
                message: "empty id".into(),
            });
        }
        if !seen.insert(raw.id.clone()) {
            return Err(Error::Manifest {
                line: line_no,
                message: format!("duplicate id {:?}", raw.id),
            });
        }
        segments.push(SegmentRecord {
            id: raw.id,
            audio_path: raw.audio,
            video_path: raw.video,
            sentiment: raw.sentiment,
            split,
            sample_rate: raw.sample_rate,
        });
    }
    Ok(Manifest { segments })
}

/// Loads a manifest file, resolving relative media paths against the
/// manifest's own directory.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest = parse_manifest(&text)?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    for seg in &mut manifest.segments {
        if seg.audio_path.is_relative() {
            seg.audio_path = base.join(&seg.audio_path);
        }
        if seg.video_path.is_relative() {
            seg.video_path = base.join(&seg.video_path);
        }
    }
    Ok(manifest)
}

/// Order-preserving subsequence of the records assigned to `split`.
pub fn filter_split(manifest: &Manifest, split: Split) -> Manifest {
    Manifest {
        segments: manifest
            .segments
            .iter()
            .filter(|s| s.split == split)
            .cloned()
            .collect(),
    }
}
