//! Image decoding, gray-level quantization and dataset manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageReader};
use serde::Serialize;

use crate::dataset::Score;
use crate::error::{self, Error, Result};

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width < 2 || height < 2 {
            return error::validation(format!(
                "image is {width}x{height}; at least 2x2 is needed to form neighbor pairs"
            ));
        }
        if pixels.len() != width * height {
            return error::validation(format!(
                "{} pixels supplied for a {width}x{height} image",
                pixels.len()
            ));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Encodes as binary PGM (P5, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_pgm()).map_err(|e| Error::io(path, e))
    }
}

/// Image whose pixels are gray levels in `[0, levels)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedImage {
    width: usize,
    height: usize,
    levels: usize,
    pixels: Vec<u16>,
}

impl QuantizedImage {
    /// Builds a quantized image directly from level values, e.g. for toy
    /// examples. Unlike [`GrayImage`] this allows 1-pixel-wide images; the
    /// histogram rejects offsets that do not fit.
    pub fn from_levels(width: usize, height: usize, levels: usize, pixels: Vec<u16>) -> Result<Self> {
        if !(2..=256).contains(&levels) {
            return error::parameter(format!("levels must be in 2..=256, got {levels}"));
        }
        if width == 0 || height == 0 || pixels.len() != width * height {
            return error::validation(format!(
                "{} pixels supplied for a {width}x{height} image",
                pixels.len()
            ));
        }
        if let Some(bad) = pixels.iter().find(|&&v| usize::from(v) >= levels) {
            return error::validation(format!("pixel level {bad} is not below {levels}"));
        }
        Ok(QuantizedImage {
            width,
            height,
            levels,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> u16 {
        self.pixels[row * self.width + col]
    }
}

/// Gray level for a raw 8-bit value: `floor(raw * levels / 256)`.
#[inline]
pub fn quantize_value(raw: u8, levels: usize) -> u16 {
    ((usize::from(raw) * levels) >> 8) as u16
}

pub fn quantize(img: &GrayImage, levels: usize) -> Result<QuantizedImage> {
    if !(2..=256).contains(&levels) {
        return error::parameter(format!("levels must be in 2..=256, got {levels}"));
    }
    let lut: Vec<u16> = (0..=255u8).map(|v| quantize_value(v, levels)).collect();
    Ok(QuantizedImage {
        width: img.width,
        height: img.height,
        levels,
        pixels: img.pixels.iter().map(|&v| lut[usize::from(v)]).collect(),
    })
}

/// ITU-R BT.601 luma, rounded to nearest, in exact integer arithmetic.
#[inline]
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    let sum = 299 * u32::from(r) + 587 * u32::from(g) + 114 * u32::from(b);
    ((sum + 500) / 1000) as u8
}

/// Decodes an 8-bit PNG or binary PGM. Color images are reduced to luma.
pub fn load_grayscale(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let reader = ImageReader::new(std::io::Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(image::ImageFormat::Png) | Some(image::ImageFormat::Pnm) => {}
        Some(other) => return Err(Error::format(path, format!("format {other:?} is not PNG or PGM"))),
        None => return Err(Error::format(path, "unrecognized file signature")),
    }
    let decoded = reader
        .decode()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    let pixels = match decoded {
        DynamicImage::ImageLuma8(buf) => buf.into_raw(),
        DynamicImage::ImageLumaA8(buf) => buf.pixels().map(|p| p.0[0]).collect(),
        DynamicImage::ImageRgb8(buf) => buf.pixels().map(|p| luma(p.0[0], p.0[1], p.0[2])).collect(),
        DynamicImage::ImageRgba8(buf) => buf.pixels().map(|p| luma(p.0[0], p.0[1], p.0[2])).collect(),
        other => {
            return Err(Error::format(
                path,
                format!("bit depth {} per channel is not supported; expected 8", other.color().bits_per_pixel() / u16::from(other.color().channel_count())),
            ))
        }
    };
    GrayImage::new(width, height, pixels).map_err(|e| match e {
        Error::Validation(msg) => Error::Validation(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: Score,
    pub source: String,
}

/// List of labeled images, possibly from several sources.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Writes a manifest whose paths are made relative to `dir` when possible.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or(Path::new(""));
        let mut out = String::from("path,label,source\n");
        for e in &self.entries {
            let p = e.path.strip_prefix(dir).unwrap_or(&e.path);
            out.push_str(&format!("{},{},{}\n", p.display(), e.label, e.source));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Reads a `path,label,source` CSV. Relative paths are resolved against the
/// manifest's directory; image existence is not checked here.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new("")))
        .map_err(|e| match e {
            Error::Validation(msg) => Error::Validation(format!("{}: {msg}", path.display())),
            other => other,
        })
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<DatasetManifest> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::Validation(format!("unreadable header: {e}")))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["path", "label", "source"] {
        return error::validation(format!(
            "expected header `path,label,source`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        ));
    }
    let mut entries = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Validation(e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let raw_path = &rec[0];
        if raw_path.is_empty() {
            return error::validation(format!("line {line}: empty path"));
        }
        let label: i64 = rec[1]
            .parse()
            .map_err(|_| Error::Validation(format!("line {line}: label `{}` is not an integer", &rec[1])))?;
        let label = Score::new(label)
            .map_err(|_| Error::Validation(format!("line {line}: label {label} is outside 0..=3")))?;
        let source = rec[2].to_string();
        if source.is_empty() {
            return error::validation(format!("line {line}: empty source tag"));
        }
        let p = PathBuf::from(raw_path);
        let p = if p.is_absolute() { p } else { base.join(p) };
        entries.push(ManifestEntry {
            path: p,
            label,
            source,
        });
    }
    if entries.is_empty() {
        return error::validation("no entries");
    }
    Ok(DatasetManifest { entries })
}
