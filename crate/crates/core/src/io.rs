//! File formats.
//!
//! Detections are JSON lines, one object per detection:
//!
//! ```text
//! {"image_id": 7, "bbox": [x1, y1, x2, y2], "class_id": 2,
//!  "class_scores": [..] | "class_logits": [..], "confidence": 0.91,
//!  "sigma_al_loc": [4 values], "sigma_ep_loc": [4 values], "sigma_ep_cls": [C values]}
//! ```
//!
//! `confidence`, `sigma_ep_loc` and `sigma_ep_cls` are optional; logits are
//! converted with a softmax at load time. Ground truth is either native JSON
//! lines (`image_id`, `bbox` in corner form, `class_id`) or a COCO annotation
//! document (`bbox` as x, y, width, height).
//!
//! Profiles, reports and calibrator sets are JSON documents carrying a
//! `schema_version`; loaders reject unknown major versions.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::warn;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::calibration::CalibratorSet;
use crate::error::{Error, Result};
use crate::model::{BoundingBox, DetectionRecord, GroundTruthRecord, ImageId, PROB_TOLERANCE};
use crate::optimizer::ThresholdProfile;
use crate::uncertainty::softmax;

pub const SCHEMA_MAJOR: &str = "1";

const DETECTION_KEYS: [&str; 9] = [
    "image_id",
    "bbox",
    "class_id",
    "confidence",
    "class_scores",
    "class_logits",
    "sigma_al_loc",
    "sigma_ep_loc",
    "sigma_ep_cls",
];

const GROUND_TRUTH_KEYS: [&str; 3] = ["image_id", "bbox", "class_id"];

#[derive(Deserialize)]
struct RawDetection {
    image_id: ImageId,
    bbox: Vec<f64>,
    class_id: usize,
    confidence: Option<f64>,
    class_scores: Option<Vec<f64>>,
    class_logits: Option<Vec<f64>>,
    sigma_al_loc: Vec<f64>,
    sigma_ep_loc: Option<Vec<f64>>,
    sigma_ep_cls: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct DetectionLine<'a> {
    image_id: &'a ImageId,
    bbox: [f64; 4],
    class_id: usize,
    confidence: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    class_scores: Option<&'a Vec<f64>>,
    sigma_al_loc: [f64; 4],
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma_ep_loc: Option<[f64; 4]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma_ep_cls: Option<&'a Vec<f64>>,
}

#[derive(Deserialize)]
struct RawGroundTruth {
    image_id: ImageId,
    bbox: Vec<f64>,
    class_id: usize,
}

fn four(values: Vec<f64>, field: &str) -> std::result::Result<[f64; 4], String> {
    <[f64; 4]>::try_from(values).map_err(|v| format!("{field} must have 4 entries, found {}", v.len()))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn parse_object_line(line: &str, known: &[&str], path: &Path, lineno: usize) -> Result<Option<Value>> {
    let trimmed = line.trim();
    if trimmed.is_empty() {
        return Ok(None);
    }
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line: lineno,
        message,
    };
    let value: Value = serde_json::from_str(trimmed).map_err(|e| parse_err(e.to_string()))?;
    let Value::Object(map) = &value else {
        return Err(parse_err("expected a JSON object".into()));
    };
    for key in map.keys().filter(|k| !known.contains(&k.as_str())) {
        warn!("{}:{lineno}: ignoring unknown key {key:?}", path.display());
    }
    Ok(Some(value))
}

fn detection_from_raw(raw: RawDetection) -> std::result::Result<DetectionRecord, String> {
    let bbox = BoundingBox::from(four(raw.bbox, "bbox")?);
    let class_scores = match (raw.class_scores, raw.class_logits) {
        (Some(_), Some(_)) => return Err("class_scores and class_logits are mutually exclusive".into()),
        (Some(p), None) => Some(p),
        (None, Some(logits)) => Some(softmax(&logits).map_err(|e| e.to_string())?),
        (None, None) => None,
    };
    let max_score = class_scores
        .as_ref()
        .map(|p| p.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let confidence = match (raw.confidence, max_score) {
        (Some(c), _) => c,
        (None, Some(m)) => m,
        (None, None) => return Err("need confidence, class_scores or class_logits".into()),
    };
    if let Some(m) = max_score {
        if (m - confidence).abs() > PROB_TOLERANCE {
            warn!("confidence {confidence} differs from max class score {m}");
        }
    }
    Ok(DetectionRecord {
        image_id: raw.image_id,
        bbox,
        class_id: raw.class_id,
        confidence,
        class_scores,
        sigma_al_loc: four(raw.sigma_al_loc, "sigma_al_loc")?,
        sigma_ep_loc: raw.sigma_ep_loc.map(|s| four(s, "sigma_ep_loc")).transpose()?,
        sigma_ep_cls: raw.sigma_ep_cls,
    })
}

/// Parses detection JSON lines; `path` is only used in error messages.
pub fn parse_detections<R: BufRead>(reader: R, path: &Path) -> Result<Vec<DetectionRecord>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let Some(value) = parse_object_line(&line, &DETECTION_KEYS, path, lineno)? else {
            continue;
        };
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let raw: RawDetection = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
        out.push(detection_from_raw(raw).map_err(parse_err)?);
    }
    Ok(out)
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<DetectionRecord>> {
    let path = path.as_ref();
    parse_detections(BufReader::new(open(path)?), path)
}

pub fn write_detections<W: Write>(mut out: W, detections: &[DetectionRecord]) -> Result<()> {
    for d in detections {
        let line = DetectionLine {
            image_id: &d.image_id,
            bbox: d.bbox.coords(),
            class_id: d.class_id,
            confidence: d.confidence,
            class_scores: d.class_scores.as_ref(),
            sigma_al_loc: d.sigma_al_loc,
            sigma_ep_loc: d.sigma_ep_loc,
            sigma_ep_cls: d.sigma_ep_cls.as_ref(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(|e| Error::io("<detections>", e))?;
    }
    Ok(())
}

pub fn save_detections(path: impl AsRef<Path>, detections: &[DetectionRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_detections(&mut w, detections)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// COCO category id → class id table.
pub type CategoryMap = BTreeMap<i64, usize>;

#[derive(Deserialize)]
struct CocoDocument {
    annotations: Vec<CocoAnnotation>,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    image_id: ImageId,
    bbox: Vec<f64>,
    category_id: i64,
}

fn map_category(id: i64, map: Option<&CategoryMap>) -> std::result::Result<usize, String> {
    match map {
        Some(table) => table
            .get(&id)
            .copied()
            .ok_or_else(|| format!("category_id {id} missing from the remapping table")),
        None => usize::try_from(id).map_err(|_| format!("negative category_id {id}")),
    }
}

/// Parses a COCO annotation document.
pub fn parse_coco_ground_truth(text: &str, path: &Path, map: Option<&CategoryMap>) -> Result<Vec<GroundTruthRecord>> {
    let doc: CocoDocument = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    doc.annotations
        .into_iter()
        .enumerate()
        .map(|(k, a)| {
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: format!("annotation {k}: {message}"),
            };
            let [x, y, w, h] = four(a.bbox, "bbox").map_err(err)?;
            Ok(GroundTruthRecord {
                image_id: a.image_id,
                bbox: BoundingBox::from_xywh(x, y, w, h),
                class_id: map_category(a.category_id, map).map_err(err)?,
            })
        })
        .collect()
}

/// Parses native ground-truth JSON lines.
pub fn parse_ground_truth_lines<R: BufRead>(
    reader: R,
    path: &Path,
    map: Option<&CategoryMap>,
) -> Result<Vec<GroundTruthRecord>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let Some(value) = parse_object_line(&line, &GROUND_TRUTH_KEYS, path, lineno)? else {
            continue;
        };
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let raw: RawGroundTruth = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
        let class_id = match map {
            Some(_) => map_category(raw.class_id as i64, map).map_err(parse_err)?,
            None => raw.class_id,
        };
        out.push(GroundTruthRecord {
            image_id: raw.image_id,
            bbox: four(raw.bbox, "bbox").map_err(parse_err)?.into(),
            class_id,
        });
    }
    Ok(out)
}

fn is_coco_document(text: &str) -> bool {
    matches!(
        serde_json::from_str::<Map<String, Value>>(text),
        Ok(map) if map.contains_key("annotations")
    )
}

/// Loads ground truth, detecting COCO documents by their top-level `annotations` key.
pub fn load_ground_truth(path: impl AsRef<Path>, map: Option<&CategoryMap>) -> Result<Vec<GroundTruthRecord>> {
    let path = path.as_ref();
    let mut text = String::new();
    open(path)?
        .read_to_string(&mut text)
        .map_err(|e| Error::io(path, e))?;
    if is_coco_document(&text) {
        parse_coco_ground_truth(&text, path, map)
    } else {
        parse_ground_truth_lines(text.as_bytes(), path, map)
    }
}

pub fn save_ground_truth(path: impl AsRef<Path>, records: &[GroundTruthRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Rejects documents whose major schema version differs from ours.
pub fn check_schema_version(found: &str, what: &'static str) -> Result<()> {
    if found.split('.').next() == Some(SCHEMA_MAJOR) {
        Ok(())
    } else {
        Err(Error::SchemaVersion {
            what,
            found: found.to_owned(),
            supported: format!("{SCHEMA_MAJOR}.x"),
        })
    }
}

fn schema_of(value: &Value) -> Option<&str> {
    value.get("schema_version").and_then(Value::as_str)
}

/// Reads a versioned JSON document, checking `schema_version` before decoding.
pub fn load_versioned<T: DeserializeOwned>(path: impl AsRef<Path>, what: &'static str) -> Result<T> {
    let path = path.as_ref();
    let mut text = String::new();
    open(path)?
        .read_to_string(&mut text)
        .map_err(|e| Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let version = schema_of(&value).ok_or_else(|| Error::SchemaVersion {
        what,
        found: "<missing>".into(),
        supported: format!("{SCHEMA_MAJOR}.x"),
    })?;
    check_schema_version(version, what)?;
    serde_json::from_value(value).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })
}

/// Writes pretty-printed JSON with a trailing newline.
pub fn save_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn save_profile(path: impl AsRef<Path>, profile: &ThresholdProfile) -> Result<()> {
    save_json(path, profile)
}

pub fn load_profile(path: impl AsRef<Path>) -> Result<ThresholdProfile> {
    load_versioned(path, "profile")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratorDocument {
    pub schema_version: String,
    pub calibrators: CalibratorSet,
}

pub fn save_calibrators(path: impl AsRef<Path>, calibrators: &CalibratorSet) -> Result<()> {
    save_json(
        path,
        &CalibratorDocument {
            schema_version: crate::optimizer::PROFILE_SCHEMA_VERSION.to_owned(),
            calibrators: calibrators.clone(),
        },
    )
}

pub fn load_calibrators(path: impl AsRef<Path>) -> Result<CalibratorSet> {
    load_versioned::<CalibratorDocument>(path, "calibrators").map(|d| d.calibrators)
}
