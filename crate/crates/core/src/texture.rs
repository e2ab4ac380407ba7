//! Spatial histograms (gray-level co-occurrence matrices) and the flattened
//! feature vectors built from them.

use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{self, Result};
use crate::imaging::{quantize, GrayImage, QuantizedImage};

/// Neighbor direction, measured counter-clockwise from the positive column
/// axis. Rows grow downward, so "up" is a negative row offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "0")]
    Deg0,
    #[serde(rename = "45")]
    Deg45,
    #[serde(rename = "90")]
    Deg90,
    #[serde(rename = "135")]
    Deg135,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Deg0, Direction::Deg45, Direction::Deg90, Direction::Deg135];

    /// `(dx, dy)` in (column, row) units: the neighbor of pixel `(c, r)` is
    /// `(c + dx, r + dy)`.
    pub fn offset(self, distance: usize) -> (isize, isize) {
        let d = distance as isize;
        match self {
            Direction::Deg0 => (d, 0),
            Direction::Deg45 => (d, -d),
            Direction::Deg90 => (0, -d),
            Direction::Deg135 => (-d, -d),
        }
    }

    pub fn degrees(self) -> u32 {
        match self {
            Direction::Deg0 => 0,
            Direction::Deg45 => 45,
            Direction::Deg90 => 90,
            Direction::Deg135 => 135,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.degrees())
    }
}

impl FromStr for Direction {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "0" => Ok(Direction::Deg0),
            "45" => Ok(Direction::Deg45),
            "90" => Ok(Direction::Deg90),
            "135" => Ok(Direction::Deg135),
            other => error::parameter(format!("direction must be one of 0, 45, 90, 135; got `{other}`")),
        }
    }
}

/// `levels x levels` matrix of ordered pair counts for one pixel offset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatialHistogram {
    levels: usize,
    offset: (isize, isize),
    counts: Vec<u64>,
}

impl SpatialHistogram {
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn offset(&self) -> (isize, isize) {
        self.offset
    }

    /// Row-major counts; entry `(i, j)` counts pairs whose first pixel has
    /// level `i` and whose offset neighbor has level `j`.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.levels + j]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn transpose(&self) -> SpatialHistogram {
        let g = self.levels;
        let mut counts = vec![0; g * g];
        for i in 0..g {
            for j in 0..g {
                counts[j * g + i] = self.counts[i * g + j];
            }
        }
        SpatialHistogram {
            levels: g,
            offset: (-self.offset.0, -self.offset.1),
            counts,
        }
    }

    fn accumulate(&mut self, other: &SpatialHistogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

/// Number of pixel pairs an image of the given size yields for an offset.
pub fn pair_count(width: usize, height: usize, (dx, dy): (isize, isize)) -> usize {
    width.saturating_sub(dx.unsigned_abs()) * height.saturating_sub(dy.unsigned_abs())
}

/// Co-occurrence counts for an arbitrary `(dx, dy)` offset.
pub fn cooccurrence(img: &QuantizedImage, (dx, dy): (isize, isize)) -> Result<SpatialHistogram> {
    let (w, h) = (img.width(), img.height());
    if dx == 0 && dy == 0 {
        return error::parameter("offset (0, 0) pairs every pixel with itself");
    }
    if dx.unsigned_abs() >= w || dy.unsigned_abs() >= h {
        return error::parameter(format!(
            "offset ({dx}, {dy}) does not fit in a {w}x{h} image"
        ));
    }
    let g = img.levels();
    let mut counts = vec![0u64; g * g];
    // Range of first-pixel coordinates whose neighbor stays inside.
    let (c0, c1) = if dx >= 0 { (0, w - dx as usize) } else { (dx.unsigned_abs(), w) };
    let (r0, r1) = if dy >= 0 { (0, h - dy as usize) } else { (dy.unsigned_abs(), h) };
    let px = img.pixels();
    for r in r0..r1 {
        let row = &px[r * w..(r + 1) * w];
        let nrow_start = (r as isize + dy) as usize * w;
        let nrow = &px[nrow_start..nrow_start + w];
        for c in c0..c1 {
            let a = usize::from(row[c]);
            let b = usize::from(nrow[(c as isize + dx) as usize]);
            counts[a * g + b] += 1;
        }
    }
    Ok(SpatialHistogram {
        levels: g,
        offset: (dx, dy),
        counts,
    })
}

pub fn spatial_histogram(img: &QuantizedImage, direction: Direction, distance: usize) -> Result<SpatialHistogram> {
    if distance == 0 {
        return error::parameter("distance must be at least 1");
    }
    cooccurrence(img, direction.offset(distance))
}

/// Flattened histogram handed to the classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        FeatureVector(values)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for FeatureVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for FeatureVector {
    fn from(v: Vec<f64>) -> Self {
        FeatureVector(v)
    }
}

/// Row-major flattening, optionally divided by the total pair count.
pub fn to_feature_vector(h: &SpatialHistogram, normalize: bool) -> FeatureVector {
    let total = h.total();
    let values = if normalize && total > 0 {
        let t = total as f64;
        h.counts.iter().map(|&c| c as f64 / t).collect()
    } else {
        h.counts.iter().map(|&c| c as f64).collect()
    };
    FeatureVector(values)
}

/// Feature extraction settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureOptions {
    pub levels: usize,
    pub direction: Direction,
    pub distance: usize,
    pub normalize: bool,
    /// Sum the histograms of all four directions instead of using
    /// `direction` alone.
    pub pool_directions: bool,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        FeatureOptions {
            levels: 51,
            direction: Direction::Deg45,
            distance: 1,
            normalize: true,
            pool_directions: false,
        }
    }
}

impl FeatureOptions {
    pub fn dimension(&self) -> usize {
        self.levels * self.levels
    }

    pub fn histogram(&self, img: &QuantizedImage) -> Result<SpatialHistogram> {
        if !self.pool_directions {
            return spatial_histogram(img, self.direction, self.distance);
        }
        let mut acc = spatial_histogram(img, Direction::ALL[0], self.distance)?;
        for &d in &Direction::ALL[1..] {
            acc.accumulate(&spatial_histogram(img, d, self.distance)?);
        }
        Ok(acc)
    }

    pub fn extract(&self, img: &GrayImage) -> Result<FeatureVector> {
        let q = quantize(img, self.levels)?;
        Ok(to_feature_vector(&self.histogram(&q)?, self.normalize))
    }
}
