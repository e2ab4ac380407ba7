//! Labeled instances and the feature-table CSV format.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::error::{self, Error, Result};
use crate::imaging::{load_grayscale, DatasetManifest};
use crate::texture::{FeatureOptions, FeatureVector};

/// Number of points on the scoring scale (0 through 3).
pub const NUM_CLASSES: usize = 4;

/// Severity score on the 0-3 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Score(u8);

impl Score {
    pub fn new(v: i64) -> Result<Self> {
        if (0..NUM_CLASSES as i64).contains(&v) {
            Ok(Score(v as u8))
        } else {
            error::validation(format!("score {v} is outside 0..=3"))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        usize::from(self.0)
    }

    pub fn all() -> impl Iterator<Item = Score> {
        (0..NUM_CLASSES as u8).map(Score)
    }
}

impl TryFrom<u8> for Score {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        Score::new(i64::from(v))
    }
}

impl From<Score> for u8 {
    fn from(s: Score) -> u8 {
        s.0
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One image's features with its score and the set it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledInstance {
    /// Identity of the image, normally its manifest path. Used to keep
    /// train, test and transferred sets disjoint.
    pub id: String,
    pub features: FeatureVector,
    pub label: Score,
    pub source: String,
}

impl LabeledInstance {
    pub fn new(id: impl Into<String>, features: impl Into<FeatureVector>, label: Score, source: impl Into<String>) -> Self {
        LabeledInstance {
            id: id.into(),
            features: features.into(),
            label,
            source: source.into(),
        }
    }
}

/// Checks that instances are non-empty and share one dimension, returning it.
pub fn common_dimension(data: &[LabeledInstance]) -> Result<usize> {
    let Some(first) = data.first() else {
        return error::validation("no instances");
    };
    let p = first.features.len();
    if p == 0 {
        return error::validation("feature vectors are empty");
    }
    if let Some((i, bad)) = data.iter().enumerate().find(|(_, x)| x.features.len() != p) {
        return error::validation(format!(
            "instance {i} (`{}`) has {} features, expected {p}",
            bad.id,
            bad.features.len()
        ));
    }
    Ok(p)
}

/// Feature matrix as stored on disk: `path,label,source,f0..f{p-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub instances: Vec<LabeledInstance>,
}

impl FeatureTable {
    pub fn dimension(&self) -> usize {
        self.instances.first().map_or(0, |x| x.features.len())
    }

    pub fn to_csv(&self) -> String {
        let p = self.dimension();
        let mut out = String::with_capacity(self.instances.len() * p * 8 + 64);
        out.push_str("path,label,source");
        for k in 0..p {
            out.push_str(&format!(",f{k}"));
        }
        out.push('\n');
        for x in &self.instances {
            out.push_str(&csv_field(&x.id));
            out.push_str(&format!(",{},", x.label));
            out.push_str(&csv_field(&x.source));
            for v in x.features.iter() {
                // `{}` on f64 is the shortest representation that round-trips.
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let headers = rdr
            .headers()
            .map_err(|e| Error::Validation(format!("unreadable header: {e}")))?
            .clone();
        if headers.len() < 4 || &headers[0] != "path" || &headers[1] != "label" || &headers[2] != "source" {
            return error::validation("feature table header must start with `path,label,source,f0`");
        }
        for (k, name) in headers.iter().skip(3).enumerate() {
            if name != format!("f{k}") {
                return error::validation(format!("feature column {k} is named `{name}`, expected `f{k}`"));
            }
        }
        let p = headers.len() - 3;
        let mut instances = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Validation(e.to_string()))?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let label: i64 = rec[1]
                .trim()
                .parse()
                .map_err(|_| Error::Validation(format!("line {line}: bad label `{}`", &rec[1])))?;
            let label = Score::new(label).map_err(|e| Error::Validation(format!("line {line}: {e}")))?;
            let features = rec
                .iter()
                .skip(3)
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::Validation(format!("line {line}: bad feature value `{v}`")))
                })
                .collect::<Result<Vec<f64>>>()?;
            debug_assert_eq!(features.len(), p);
            instances.push(LabeledInstance::new(&rec[0], features, label, &rec[2]));
        }
        if instances.is_empty() {
            return error::validation("no entries");
        }
        Ok(FeatureTable { instances })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Loads every manifest image and extracts its features, in parallel,
/// keeping manifest order. Instance ids are the image paths.
pub fn extract_manifest(manifest: &DatasetManifest, opts: &FeatureOptions) -> Result<FeatureTable> {
    let instances = manifest
        .entries
        .par_iter()
        .map(|e| {
            let img = load_grayscale(&e.path)?;
            Ok(LabeledInstance::new(e.path.display().to_string(), opts.extract(&img)?, e.label, &e.source))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureTable { instances })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
