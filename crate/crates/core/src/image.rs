//! Detector image container and its binary file format.
//!
//! File layout (all integers little-endian):
//!
//! | bytes     | content                                   |
//! |-----------|-------------------------------------------|
//! | 0..8      | magic `PRSANSIM`                          |
//! | 8..12     | format version (`u32`, currently 1)       |
//! | 12..16    | metadata length in bytes (`u32`)          |
//! | 16..16+m  | JSON metadata                             |
//! | rest      | `f32` pixel payload, row-major            |
//!
//! The metadata carries dimensions, beam center, optional acquisition time,
//! the run-length encoded mask and the optional intensity rescale.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PRSANSIM";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Width/height of a 2-D field. Plain vectors are `n × 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
}

impl Dims {
    pub fn new(width: usize, height: usize) -> Self {
        Dims { width, height }
    }

    pub fn flat(n: usize) -> Self {
        Dims {
            width: n,
            height: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Linear map applied on ingestion: `normalized = (raw - offset) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rescale {
    pub offset: f64,
    pub scale: f64,
}

impl Rescale {
    pub fn identity() -> Self {
        Rescale {
            offset: 0.0,
            scale: 1.0,
        }
    }

    pub fn forward(&self, v: f64) -> f64 {
        (v - self.offset) / self.scale
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.scale + self.offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
    /// Fractional pixel coordinates `(cx, cy)`; pixel `(i, j)` has its center at `(i + 0.5, j + 0.5)`.
    pub beam_center: (f64, f64),
    /// `true` marks a valid pixel.
    pub mask: Vec<bool>,
    pub acq_time: Option<f64>,
    pub rescale: Option<Rescale>,
}

impl DetectorImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Contract("image dimensions must be at least 1".into()));
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                declared: width * height,
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(DetectorImage {
            width,
            height,
            mask: vec![true; data.len()],
            data,
            beam_center: (width as f64 / 2.0, height as f64 / 2.0),
            acq_time: None,
            rescale: None,
        })
    }

    pub fn from_f64(width: usize, height: usize, data: &[f64]) -> Result<Self> {
        Self::new(width, height, data.iter().map(|&v| v as f32).collect())
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// Same metadata, new pixel values.
    pub fn with_data_f64(&self, data: &[f64]) -> Result<Self> {
        let mut out = Self::from_f64(self.width, self.height, data)?;
        out.beam_center = self.beam_center;
        out.mask = self.mask.clone();
        out.acq_time = self.acq_time;
        out.rescale = self.rescale;
        Ok(out)
    }

    pub fn with_beam_center(mut self, cx: f64, cy: f64) -> Self {
        self.beam_center = (cx, cy);
        self
    }

    pub fn with_acq_time(mut self, t: f64) -> Self {
        self.acq_time = Some(t);
        self
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.data.len() {
            return Err(Error::Shape {
                expected: self.data.len(),
                actual: mask.len(),
            });
        }
        self.mask = mask;
        Ok(self)
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Linearly rescales valid pixels into `[0, 1]`. A constant image maps to zero.
    /// The applied map is stored so that [`DetectorImage::denormalized`] can undo it.
    pub fn normalized(&self) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (&v, &m) in self.data.iter().zip(&self.mask) {
            if m {
                lo = lo.min(v as f64);
                hi = hi.max(v as f64);
            }
        }
        if !lo.is_finite() {
            lo = 0.0;
            hi = 1.0;
        }
        let span = if hi > lo { hi - lo } else { 1.0 };
        let map = Rescale {
            offset: lo,
            scale: span,
        };
        let mut out = self.clone();
        for v in &mut out.data {
            *v = map.forward(*v as f64) as f32;
        }
        out.rescale = Some(map);
        out
    }

    pub fn denormalized(&self) -> Self {
        let mut out = self.clone();
        if let Some(map) = self.rescale {
            for v in &mut out.data {
                *v = map.invert(*v as f64) as f32;
            }
            out.rescale = None;
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.encode()?;
        fs::write(path.as_ref(), bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path.as_ref()).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let meta = Metadata {
            width: self.width,
            height: self.height,
            beam_center: [self.beam_center.0, self.beam_center.1],
            acq_time: self.acq_time,
            mask_rle: encode_mask(&self.mask),
            rescale: self.rescale,
        };
        let meta = serde_json::to_vec(&meta)?;
        let mut out = Vec::with_capacity(HEADER_LEN + meta.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::PayloadSize(format!(
                "{} bytes is shorter than the {HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let meta_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let meta_end = HEADER_LEN + meta_len;
        if bytes.len() < meta_end {
            return Err(Error::PayloadSize(format!(
                "metadata block declares {meta_len} bytes but only {} remain",
                bytes.len() - HEADER_LEN
            )));
        }
        let meta: Metadata = serde_json::from_slice(&bytes[HEADER_LEN..meta_end])
            .map_err(|e| Error::Metadata(e.to_string()))?;
        let payload = &bytes[meta_end..];
        if payload.len() % 4 != 0 {
            return Err(Error::PayloadSize(format!(
                "payload of {} bytes is not a whole number of f32 values",
                payload.len()
            )));
        }
        let declared = meta.width * meta.height;
        let actual = payload.len() / 4;
        if declared != actual {
            return Err(Error::DimensionMismatch { declared, actual });
        }
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mask = decode_mask(&meta.mask_rle, declared)?;
        let mut img = DetectorImage::new(meta.width, meta.height, data)?;
        img.mask = mask;
        img.beam_center = (meta.beam_center[0], meta.beam_center[1]);
        if let Some(t) = meta.acq_time {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Metadata(format!("acq_time must be > 0, got {t}")));
            }
        }
        img.acq_time = meta.acq_time;
        img.rescale = meta.rescale;
        Ok(img)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    width: usize,
    height: usize,
    beam_center: [f64; 2],
    acq_time: Option<f64>,
    /// Alternating run lengths starting with a run of valid pixels (possibly zero).
    mask_rle: Vec<usize>,
    rescale: Option<Rescale>,
}

fn encode_mask(mask: &[bool]) -> Vec<usize> {
    let mut runs = Vec::new();
    let mut current = true;
    let mut len = 0;
    for &m in mask {
        if m == current {
            len += 1;
        } else {
            runs.push(len);
            current = m;
            len = 1;
        }
    }
    runs.push(len);
    runs
}

fn decode_mask(runs: &[usize], n: usize) -> Result<Vec<bool>> {
    let mut mask = Vec::with_capacity(n);
    let mut value = true;
    for &r in runs {
        mask.extend(std::iter::repeat_n(value, r));
        value = !value;
    }
    if mask.len() != n {
        return Err(Error::Metadata(format!(
            "mask runs cover {} pixels, image has {n}",
            mask.len()
        )));
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, w: usize, h: usize) -> DetectorImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h).map(|_| rng.random::<f32>()).collect();
        let mask = (0..w * h).map(|_| rng.random_bool(0.8)).collect();
        DetectorImage::new(w, h, data)
            .unwrap()
            .with_mask(mask)
            .unwrap()
            .with_beam_center(1.25, 2.5)
            .with_acq_time(300.0)
    }

    #[test]
    fn round_trip_4x4() {
        let img = random_image(7, 4, 4);
        let back = DetectorImage::decode(&img.encode().unwrap()).unwrap();
        assert_eq!(back, img);
        for (a, b) in img.data.iter().zip(&back.data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_payload_is_a_size_error() {
        let bytes = random_image(1, 4, 4).encode().unwrap();
        let err = DetectorImage::decode(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::PayloadSize(_)), "{err}");
    }

    #[test]
    fn header_and_payload_disagree() {
        // 3x3 metadata followed by 8 floats
        let mut bytes = DetectorImage::filled(3, 3, 0.5).unwrap().encode().unwrap();
        bytes.truncate(bytes.len() - 4);
        let err = DetectorImage::decode(&bytes).unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionMismatch {
                declared: 9,
                actual: 8
            }
        ));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = random_image(2, 2, 2).encode().unwrap();
        bytes[0] = b'X';
        assert!(matches!(DetectorImage::decode(&bytes), Err(Error::BadMagic)));
        let mut bytes = random_image(2, 2, 2).encode().unwrap();
        bytes[8] = 9;
        assert!(matches!(
            DetectorImage::decode(&bytes),
            Err(Error::UnsupportedVersion(9))
        ));
    }

    #[test]
    fn non_finite_payload_rejected() {
        let mut bytes = DetectorImage::filled(2, 2, 1.0).unwrap().encode().unwrap();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            DetectorImage::decode(&bytes),
            Err(Error::NonFinite(3))
        ));
        assert!(DetectorImage::new(1, 1, vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn normalization_inverts() {
        let img = DetectorImage::new(2, 2, vec![2.0, 4.0, 6.0, 10.0]).unwrap();
        let n = img.normalized();
        assert_eq!(n.data, vec![0.0, 0.25, 0.5, 1.0]);
        assert_eq!(n.denormalized().data, img.data);
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            w in 1usize..12,
            h in 1usize..12,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..w * h)
                .map(|_| f32::from_bits(rng.random::<u32>()))
                .map(|v| if v.is_finite() { v } else { 0.0 })
                .collect();
            let mask = (0..w * h).map(|_| rng.random_bool(0.5)).collect();
            let img = DetectorImage::new(w, h, data).unwrap().with_mask(mask).unwrap();
            let back = DetectorImage::decode(&img.encode().unwrap()).unwrap();
            let a: Vec<u32> = img.data.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.data.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(img.mask, back.mask);
        }
    }
}
