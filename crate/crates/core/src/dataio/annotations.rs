use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{DataError, GroupSpec, Result};
use crate::perturb::PerturbSpec;
use crate::{LandmarkSet, Point};

pub const ANNOTATION_FORMAT: &str = "lmconf-annotations";
pub const ANNOTATION_VERSION: u32 = 1;

/// Head pose in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

/// Where a landmark set came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Source {
    GroundTruth,
    Detector(String),
    Synthetic,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::GroundTruth => f.write_str("ground_truth"),
            Source::Detector(name) => write!(f, "detector:{name}"),
            Source::Synthetic => f.write_str("synthetic"),
        }
    }
}

impl std::str::FromStr for Source {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ground_truth" => Ok(Source::GroundTruth),
            "synthetic" => Ok(Source::Synthetic),
            _ => match s.strip_prefix("detector:") {
                Some(name) if !name.is_empty() => Ok(Source::Detector(name.to_string())),
                _ => Err(format!("unknown annotation source `{s}`")),
            },
        }
    }
}

impl Serialize for Source {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Source {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    /// +1 for male, −1 for female.
    pub fn label(self) -> f64 {
        match self {
            Gender::Male => 1.0,
            Gender::Female => -1.0,
        }
    }
}

/// One annotated face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub face_id: String,
    pub image_path: String,
    pub landmarks: LandmarkSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<Pose>,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<Gender>,
}

/// Whether "left" in a file means image-left or the subject's left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EyeConvention {
    #[default]
    ImageLeft,
    SubjectLeft,
}

/// The canonical JSON annotation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub eye_convention: EyeConvention,
    #[serde(default)]
    pub synthetic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturb_spec: Option<PerturbSpec>,
    pub records: Vec<AnnotationRecord>,
}

impl AnnotationFile {
    pub fn new(records: Vec<AnnotationRecord>) -> Self {
        Self {
            format: ANNOTATION_FORMAT.into(),
            version: ANNOTATION_VERSION,
            eye_convention: EyeConvention::ImageLeft,
            synthetic: false,
            perturb_spec: None,
            records,
        }
    }
}

/// Input format for [`load_annotations`].
#[derive(Debug, Clone, PartialEq)]
pub enum Schema {
    CanonicalJson,
    /// `face_id,image_path,x0,y0,x1,y1,...`; empty coordinates mark missing
    /// points. A first line whose third field is not numeric is a header.
    PointsCsv(GroupSpec),
}

fn check_unique(records: &[AnnotationRecord]) -> Result<()> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.face_id.as_str()) {
            return Err(DataError::DuplicateFaceId(r.face_id.clone()));
        }
    }
    Ok(())
}

/// Parses a canonical JSON document. Subject-left files are converted to
/// image-left.
pub fn parse_annotations_json(text: &str, path: &Path) -> Result<AnnotationFile> {
    let mut file: AnnotationFile = serde_json::from_str(text).map_err(|e| DataError::Parse {
        path: path.into(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let bad = |message: String| DataError::Parse {
        path: path.into(),
        line: 1,
        column: 1,
        message,
    };
    if file.format != ANNOTATION_FORMAT {
        return Err(bad(format!("unknown format `{}`", file.format)));
    }
    if file.version != ANNOTATION_VERSION {
        return Err(bad(format!("unsupported annotation version {}", file.version)));
    }
    if file.eye_convention == EyeConvention::SubjectLeft {
        for r in &mut file.records {
            r.landmarks = r.landmarks.mirrored_names();
        }
        file.eye_convention = EyeConvention::ImageLeft;
    }
    check_unique(&file.records)?;
    Ok(file)
}

/// Parses a raw multi-point CSV and averages groups into canonical landmarks.
pub fn parse_points_csv(text: &str, path: &Path, groups: &GroupSpec, source: Source) -> Result<Vec<AnnotationRecord>> {
    groups.validate()?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line_no = ln + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let err = |column: usize, message: String| DataError::Parse {
            path: path.into(),
            line: line_no,
            column,
            message,
        };
        if ln == 0 && fields.get(2).is_some_and(|f| !f.is_empty() && f.parse::<f64>().is_err()) {
            continue;
        }
        if fields.len() < 2 {
            return Err(err(1, "expected face_id,image_path,coordinates...".into()));
        }
        let coords = &fields[2..];
        if coords.len() != 2 * groups.n_points {
            return Err(err(
                1,
                format!("expected {} coordinates, found {}", 2 * groups.n_points, coords.len()),
            ));
        }
        let mut points = Vec::with_capacity(groups.n_points);
        let mut col = fields[0].len() + fields[1].len() + 3;
        for pair in coords.chunks_exact(2) {
            let parse = |s: &str, col: usize| -> Result<Option<f64>> {
                if s.is_empty() {
                    return Ok(None);
                }
                match s.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(Some(v)),
                    _ => Err(err(col, format!("invalid coordinate `{s}`"))),
                }
            };
            let x = parse(pair[0], col)?;
            col += pair[0].len() + 1;
            let y = parse(pair[1], col)?;
            col += pair[1].len() + 1;
            points.push(match (x, y) {
                (Some(x), Some(y)) => Some(Point::new(x, y)),
                _ => None,
            });
        }
        out.push(AnnotationRecord {
            face_id: fields[0].to_string(),
            image_path: fields[1].to_string(),
            landmarks: groups.apply(&points),
            pose: None,
            source: source.clone(),
            gender: None,
        });
    }
    check_unique(&out)?;
    Ok(out)
}

/// Loads annotation records from disk.
pub fn load_annotations(path: &Path, schema: &Schema) -> Result<Vec<AnnotationRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    match schema {
        Schema::CanonicalJson => Ok(parse_annotations_json(&text, path)?.records),
        Schema::PointsCsv(groups) => parse_points_csv(&text, path, groups, Source::GroundTruth),
    }
}

pub fn write_annotations(path: &Path, file: &AnnotationFile) -> Result<()> {
    check_unique(&file.records)?;
    let text = serde_json::to_string_pretty(file).expect("annotations serialise");
    std::fs::write(path, text).map_err(|e| DataError::io(path, e))
}
