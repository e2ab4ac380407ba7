//! Seeded synthetic texture corpora.
//!
//! Every image is a two-state texture: smoothed white noise is thresholded
//! so that a target fraction of the image is "stained", stained pixels take
//! a darker gray than the background, and pixel noise is added on top.
//! Higher scores mean denser, darker staining.
//!
//! Texture parameters are interpolated along a continuous latent score. An
//! image of class `c` draws its latent from `c + N(0, spread)`. Auxiliary
//! sources mark a `1 - conforming_fraction` share of their images as
//! shifted: their latent moves by `shift` toward the middle of the scale,
//! so they resemble a neighboring class while keeping their own label.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledInstance, Score, NUM_CLASSES};
use crate::error::{self, Error, Result};
use crate::imaging::{DatasetManifest, GrayImage, ManifestEntry};
use crate::seed;
use crate::texture::FeatureOptions;
use crate::transfer::AuxSet;

/// In-repo benchmark corpus definition.
pub const DEFAULT_BENCHMARK: &str = include_str!("../data/benchmark_spec.json");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextureParams {
    /// Fraction of stained pixels.
    pub density: f64,
    /// Gray value of stained pixels.
    pub stain_gray: f64,
    /// Gray value of unstained pixels.
    pub background_gray: f64,
    /// Box-blur radius of the noise field, in pixels; sets blob size.
    pub blob_radius: f64,
}

impl TextureParams {
    fn lerp(a: &TextureParams, b: &TextureParams, t: f64) -> TextureParams {
        let l = |x: f64, y: f64| x + (y - x) * t;
        TextureParams {
            density: l(a.density, b.density),
            stain_gray: l(a.stain_gray, b.stain_gray),
            background_gray: l(a.background_gray, b.background_gray),
            blob_radius: l(a.blob_radius, b.blob_radius),
        }
    }
}

/// Image count per class: one number for every class, or one per score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerClass {
    Uniform(usize),
    Each([usize; NUM_CLASSES]),
}

impl PerClass {
    pub fn count(&self, class: usize) -> usize {
        match self {
            PerClass::Uniform(n) => *n,
            PerClass::Each(v) => v[class],
        }
    }

    pub fn total(&self) -> usize {
        (0..NUM_CLASSES).map(|c| self.count(c)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub name: String,
    pub images_per_class: PerClass,
    /// Latent displacement applied to non-conforming images.
    pub shift: f64,
    /// Share of images generated without shift.
    pub conforming_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// One parameter tuple per score, 0 through 3.
    pub classes: [TextureParams; NUM_CLASSES],
    /// Standard deviation of an image's latent score around its class.
    pub latent_spread: f64,
    /// Standard deviation of additive per-pixel noise, in gray units.
    pub pixel_noise: f64,
    /// Standard deviation of a per-image gray offset applied to stain and
    /// background alike.
    #[serde(default)]
    pub illumination_jitter: f64,
    pub image_size: usize,
    /// Name of the primary source.
    pub primary: String,
    pub images_per_class: PerClass,
    pub sources: Vec<SourceSpec>,
    #[serde(default)]
    pub seed: u64,
}

impl SynthSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SynthSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// The frozen benchmark definition shipped with the crate.
    pub fn benchmark() -> Self {
        Self::from_json(DEFAULT_BENCHMARK).expect("bundled benchmark spec is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 2 {
            return error::parameter("image_size must be at least 2");
        }
        if !(self.latent_spread.is_finite() && self.latent_spread >= 0.0) {
            return error::parameter("latent_spread must be finite and non-negative");
        }
        if !(self.pixel_noise.is_finite() && self.pixel_noise >= 0.0) {
            return error::parameter("pixel_noise must be finite and non-negative");
        }
        if !(self.illumination_jitter.is_finite() && self.illumination_jitter >= 0.0) {
            return error::parameter("illumination_jitter must be finite and non-negative");
        }
        for (c, t) in self.classes.iter().enumerate() {
            if !(0.0..=1.0).contains(&t.density) || !(t.blob_radius >= 0.0 && t.blob_radius.is_finite()) {
                return error::parameter(format!("class {c}: density must lie in [0, 1] and blob_radius be finite"));
            }
        }
        let mut names = vec![self.primary.as_str()];
        for s in &self.sources {
            if !s.shift.is_finite() || s.shift < 0.0 {
                return error::parameter(format!("source `{}`: shift must be finite and non-negative", s.name));
            }
            if !(0.0..=1.0).contains(&s.conforming_fraction) {
                return error::parameter(format!("source `{}`: conforming_fraction must lie in [0, 1]", s.name));
            }
            names.push(&s.name);
        }
        for (i, n) in names.iter().enumerate() {
            let valid = !n.is_empty() && n.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
            if !valid {
                return error::parameter(format!("source name `{n}` must be non-empty and use only [A-Za-z0-9_-]"));
            }
            if names[..i].contains(n) {
                return error::parameter(format!("source name `{n}` is used twice"));
            }
        }
        Ok(())
    }

    /// Texture parameters at a continuous latent score; linear between the
    /// class tuples and clamped outside `[0, 3]`.
    pub fn params_at(&self, latent: f64) -> TextureParams {
        let top = (NUM_CLASSES - 1) as f64;
        let s = latent.clamp(0.0, top);
        let lo = (s.floor() as usize).min(NUM_CLASSES - 2);
        TextureParams::lerp(&self.classes[lo], &self.classes[lo + 1], s - lo as f64)
    }

    /// Latent centre for class `c` of a source, shifted or not.
    pub fn latent_centre(c: usize, shift: f64, shifted: bool) -> f64 {
        if !shifted {
            return c as f64;
        }
        // Toward the middle of the scale, so the result stays in range.
        let dir = if c < NUM_CLASSES / 2 { 1.0 } else { -1.0 };
        c as f64 + dir * shift
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    /// Relative file name, `<source>/<source>_c<label>_<index>.pgm`.
    pub id: String,
    pub label: Score,
    pub shifted: bool,
    pub latent: f64,
    pub image: GrayImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSource {
    pub name: String,
    pub images: Vec<SynthImage>,
}

/// All generated images, primary source first.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub sources: Vec<SynthSource>,
}

impl SynthCorpus {
    /// Feature vectors for every image: the primary source's instances and
    /// one auxiliary set per remaining source.
    pub fn features(&self, opts: &FeatureOptions) -> Result<(Vec<LabeledInstance>, Vec<AuxSet>)> {
        let mut sets = self
            .sources
            .iter()
            .map(|src| {
                let instances = src
                    .images
                    .par_iter()
                    .map(|img| Ok(LabeledInstance::new(&img.id, opts.extract(&img.image)?, img.label, &src.name)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(AuxSet::new(&src.name, instances))
            })
            .collect::<Result<Vec<_>>>()?;
        let primary = sets.remove(0).instances;
        Ok((primary, sets))
    }
}

struct Plan {
    source: usize,
    name: String,
    label: usize,
    index: usize,
    shift: f64,
    shifted: bool,
}

/// Generates the corpus in memory. Images are produced in parallel, each
/// from its own RNG stream.
pub fn generate_corpus(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut plans = Vec::new();
    let mut sources = vec![SynthSource {
        name: spec.primary.clone(),
        images: Vec::new(),
    }];
    for c in 0..NUM_CLASSES {
        for i in 0..spec.images_per_class.count(c) {
            plans.push(Plan {
                source: 0,
                name: spec.primary.clone(),
                label: c,
                index: i,
                shift: 0.0,
                shifted: false,
            });
        }
    }
    for (k, s) in spec.sources.iter().enumerate() {
        sources.push(SynthSource {
            name: s.name.clone(),
            images: Vec::new(),
        });
        for c in 0..NUM_CLASSES {
            let n = s.images_per_class.count(c);
            let conforming = (n as f64 * s.conforming_fraction).round() as usize;
            for i in 0..n {
                plans.push(Plan {
                    source: k + 1,
                    name: s.name.clone(),
                    label: c,
                    index: i,
                    shift: s.shift,
                    shifted: i >= conforming,
                });
            }
        }
    }
    let images: Vec<(usize, SynthImage)> = plans
        .par_iter()
        .map(|p| {
            let stream = seed::derive(
                seed::derive(seed::derive_tag(spec.seed, &p.name), p.label as u64),
                p.index as u64,
            );
            let mut rng = seed::rng(stream);
            let centre = SynthSpec::latent_centre(p.label, p.shift, p.shifted);
            let latent = if spec.latent_spread > 0.0 {
                Normal::new(centre, spec.latent_spread).unwrap().sample(&mut rng)
            } else {
                centre
            };
            let mut params = spec.params_at(latent);
            if spec.illumination_jitter > 0.0 {
                let offset = Normal::new(0.0, spec.illumination_jitter).unwrap().sample(&mut rng);
                params.stain_gray += offset;
                params.background_gray += offset;
            }
            let image = render(&params, spec.image_size, spec.pixel_noise, &mut rng);
            let img = SynthImage {
                id: format!("{0}/{0}_c{1}_{2:04}.pgm", p.name, p.label, p.index),
                label: Score::new(p.label as i64).unwrap(),
                shifted: p.shifted,
                latent,
                image,
            };
            (p.source, img)
        })
        .collect();
    for (k, img) in images {
        sources[k].images.push(img);
    }
    Ok(SynthCorpus { sources })
}

/// Renders one texture image.
pub fn render(params: &TextureParams, size: usize, pixel_noise: f64, rng: &mut impl Rng) -> GrayImage {
    let n = size * size;
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let mut field: Vec<f64> = (0..n).map(|_| std_normal.sample(rng)).collect();
    let radius = params.blob_radius.round() as usize;
    // Two box passes approximate a Gaussian kernel.
    for _ in 0..2 {
        box_blur(&mut field, size, radius);
    }
    let mut sorted = field.clone();
    sorted.sort_unstable_by(f64::total_cmp);
    let stained = ((params.density * n as f64).round() as usize).min(n);
    // Pixels at or above the cut are stained.
    let cut = if stained == 0 { f64::INFINITY } else { sorted[n - stained] };
    let pixels = field
        .iter()
        .map(|&v| {
            let base = if v >= cut { params.stain_gray } else { params.background_gray };
            let noisy = base + pixel_noise * std_normal.sample(rng);
            noisy.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage::new(size, size, pixels).expect("size >= 2")
}

/// Separable box blur with clamped borders.
fn box_blur(field: &mut [f64], size: usize, radius: usize) {
    if radius == 0 {
        return;
    }
    let mut tmp = vec![0.0; field.len()];
    let width = (2 * radius + 1) as f64;
    let at = |i: isize| i.clamp(0, size as isize - 1) as usize;
    for r in 0..size {
        for c in 0..size {
            let mut acc = 0.0;
            for k in -(radius as isize)..=radius as isize {
                acc += field[r * size + at(c as isize + k)];
            }
            tmp[r * size + c] = acc / width;
        }
    }
    for r in 0..size {
        for c in 0..size {
            let mut acc = 0.0;
            for k in -(radius as isize)..=radius as isize {
                acc += tmp[at(r as isize + k) * size + c];
            }
            field[r * size + c] = acc / width;
        }
    }
}

/// Writes every image as PGM under `out_dir` plus one `<source>.csv`
/// manifest per source. Returns the manifest paths, primary first.
pub fn write_corpus(corpus: &SynthCorpus, out_dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut written = Vec::new();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for src in &corpus.sources {
        let dir = out_dir.join(&src.name);
        if !src.images.is_empty() {
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        src.images
            .par_iter()
            .map(|img| img.image.save_pgm(&out_dir.join(&img.id)))
            .collect::<Result<()>>()?;
        let manifest_path = out_dir.join(format!("{}.csv", src.name));
        let manifest = DatasetManifest {
            entries: src
                .images
                .iter()
                .map(|img| ManifestEntry {
                    path: out_dir.join(&img.id),
                    label: img.label,
                    source: src.name.clone(),
                })
                .collect(),
        };
        manifest.write_csv(&manifest_path)?;
        written.push((src.name.clone(), manifest_path));
    }
    Ok(written)
}

pub fn generate(spec: &SynthSpec, out_dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    write_corpus(&generate_corpus(spec)?, out_dir)
}
