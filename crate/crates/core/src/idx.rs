//! IDX image/label files and a synthetic stand-in generator.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{domain, stream};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImages {
    pub rows: usize,
    pub cols: usize,
    /// Row-major pixels, `rows * cols` per image.
    pub pixels: Vec<u8>,
}

impl RawImages {
    pub fn len(&self) -> usize {
        if self.rows * self.cols == 0 {
            0
        } else {
            self.pixels.len() / (self.rows * self.cols)
        }
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let d = self.rows * self.cols;
        &self.pixels[i * d..(i + 1) * d]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawData {
    pub images: RawImages,
    pub labels: Vec<u8>,
}

impl RawData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

pub fn parse_images(bytes: &[u8]) -> Result<RawImages> {
    let magic = read_u32(bytes, 0, "images")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "images: magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"
        )));
    }
    let count = read_u32(bytes, 4, "images")? as usize;
    let rows = read_u32(bytes, 8, "images")? as usize;
    let cols = read_u32(bytes, 12, "images")? as usize;
    let need = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Format("images: header sizes overflow".into()))?;
    let payload = &bytes[16..];
    if payload.len() != need {
        return Err(Error::Format(format!(
            "images: length mismatch, header promises {need} pixel bytes, file has {}",
            payload.len()
        )));
    }
    Ok(RawImages {
        rows,
        cols,
        pixels: payload.to_vec(),
    })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0, "labels")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!(
            "labels: magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"
        )));
    }
    let count = read_u32(bytes, 4, "labels")? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(Error::Format(format!(
            "labels: length mismatch, header promises {count} labels, file has {}",
            payload.len()
        )));
    }
    Ok(payload.to_vec())
}

pub fn parse_idx_bytes(images: &[u8], labels: &[u8]) -> Result<RawData> {
    let images = parse_images(images)?;
    let labels = parse_labels(labels)?;
    let count = if images.rows * images.cols == 0 {
        labels.len()
    } else {
        images.len()
    };
    if count != labels.len() {
        return Err(Error::Data(format!(
            "{count} images but {} labels",
            labels.len()
        )));
    }
    Ok(RawData { images, labels })
}

pub fn parse_idx(images: &Path, labels: &Path) -> Result<RawData> {
    parse_idx_bytes(&read_file(images)?, &read_file(labels)?)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn images_to_bytes(images: &RawImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(images.rows as u32).to_be_bytes());
    out.extend_from_slice(&(images.cols as u32).to_be_bytes());
    out.extend_from_slice(&images.pixels);
    out
}

pub fn labels_to_bytes(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Garment-like 28x28 silhouettes for ten classes with per-image jitter and
/// pixel noise. Classes are balanced and interleaved.
pub fn synthetic_fashion(per_class: usize, seed: u64) -> RawData {
    const SIDE: usize = 28;
    let mut pixels = Vec::with_capacity(per_class * 10 * SIDE * SIDE);
    let mut labels = Vec::with_capacity(per_class * 10);
    let noise = Normal::new(0.0, 18.0).expect("valid normal");
    for i in 0..per_class {
        for class in 0..10u8 {
            let mut rng = stream(seed, domain::DATA, (i * 10 + class as usize) as u64);
            let shape = Silhouette::jittered(class, &mut rng);
            for r in 0..SIDE {
                for c in 0..SIDE {
                    let v = shape.intensity(r as f64, c as f64) + noise.sample(&mut rng);
                    pixels.push(v.clamp(0.0, 255.0) as u8);
                }
            }
            labels.push(class);
        }
    }
    RawData {
        images: RawImages {
            rows: SIDE,
            cols: SIDE,
            pixels,
        },
        labels,
    }
}

/// Largest share of a garment outline taken from another class.
const STYLE_MIX: f64 = 0.9;

/// (top, bottom, half width, flare)
fn template(class: u8) -> [f64; 4] {
    match class {
        0 => [5.0, 22.0, 7.0, 0.0],    // top
        1 => [2.0, 26.0, 3.0, 0.5],    // trouser
        2 => [4.0, 23.0, 8.0, 0.5],    // pullover
        3 => [2.0, 26.0, 4.0, 4.5],    // dress
        4 => [3.0, 25.0, 8.5, 1.0],    // coat
        5 => [15.0, 22.0, 10.0, 0.0],  // sandal
        6 => [4.0, 23.0, 7.5, 0.0],    // shirt
        7 => [13.0, 23.0, 11.0, -1.0], // sneaker
        8 => [8.0, 24.0, 9.0, -2.0],   // bag
        _ => [6.0, 25.0, 9.0, 1.5],    // boot
    }
}

struct Silhouette {
    class: u8,
    top: f64,
    bottom: f64,
    half_width: f64,
    flare: f64,
    shift: f64,
    brightness: f64,
}

impl Silhouette {
    fn jittered<R: Rng + ?Sized>(class: u8, rng: &mut R) -> Self {
        // each garment borrows part of its outline from another class
        let other = (class + rng.random_range(1..10u8)) % 10;
        let mix = STYLE_MIX * rng.random::<f64>().powi(2);
        let (a, b) = (template(class), template(other));
        let lerp = |i: usize| a[i] + mix * (b[i] - a[i]);
        let j = |rng: &mut R, s: f64| rng.random_range(-s..s);
        Self {
            class,
            top: lerp(0) + j(rng, 2.5),
            bottom: lerp(1) + j(rng, 2.5),
            half_width: (lerp(2) + j(rng, 2.0)).max(1.5),
            flare: lerp(3) + j(rng, 2.0),
            shift: j(rng, 2.5),
            brightness: rng.random_range(110.0..230.0),
        }
    }

    fn intensity(&self, r: f64, c: f64) -> f64 {
        if r < self.top || r > self.bottom {
            return 0.0;
        }
        let t = (r - self.top) / (self.bottom - self.top).max(1.0);
        let width = self.half_width + self.flare * t;
        let d = (c - 13.5 - self.shift).abs();
        let mut inside = d <= width;
        match self.class {
            0 | 2 | 4 | 6 => {
                // sleeves near the shoulders
                if r < self.top + 6.0 && d <= width + 4.0 {
                    inside = true;
                }
            }
            1 => {
                // gap between the legs below the waist
                if t > 0.3 && d < 1.0 {
                    inside = false;
                }
            }
            _ => {}
        }
        if inside {
            self.brightness * (1.0 - 0.3 * t)
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let raw = synthetic_fashion(3, 1);
        assert_eq!(raw.len(), 30);
        let back = parse_idx_bytes(&images_to_bytes(&raw.images), &labels_to_bytes(&raw.labels)).unwrap();
        assert_eq!(back, raw);
    }

    #[test]
    fn header_errors() {
        let raw = synthetic_fashion(1, 1);
        let mut img = images_to_bytes(&raw.images);
        let lab = labels_to_bytes(&raw.labels);
        assert!(matches!(parse_idx_bytes(&lab, &lab), Err(Error::Format(_))));
        img.pop();
        assert!(matches!(parse_idx_bytes(&img, &lab), Err(Error::Format(_))));
        let short = labels_to_bytes(&raw.labels[..5]);
        assert!(matches!(
            parse_idx_bytes(&images_to_bytes(&raw.images), &short),
            Err(Error::Data(_))
        ));
        assert!(parse_images(&[0, 0, 8]).is_err());
    }

    #[test]
    fn empty_files_are_valid() {
        let images = RawImages {
            rows: 28,
            cols: 28,
            pixels: vec![],
        };
        let data = parse_idx_bytes(&images_to_bytes(&images), &labels_to_bytes(&[])).unwrap();
        assert!(data.is_empty());
    }

    #[test]
    fn synthetic_is_deterministic() {
        assert_eq!(synthetic_fashion(2, 5), synthetic_fashion(2, 5));
        assert_ne!(synthetic_fashion(2, 5), synthetic_fashion(2, 6));
    }
}
