//! Training pairs for the learned denoiser.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{DetectorImage, Dims};
use crate::priors::gaussian_blur;
use crate::rng::{stream, substream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub clean: Vec<f64>,
    pub noisy: Vec<f64>,
}

/// Square `patch × patch` (clean, noisy) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    pub patch: usize,
    pub pairs: Vec<Pair>,
    pub role: Role,
    /// Noise level used when the noisy patches were synthesized here.
    pub noise_sigma: Option<f64>,
}

impl PairDataset {
    pub fn new(patch: usize, role: Role) -> Self {
        PairDataset {
            patch,
            pairs: Vec::new(),
            role,
            noise_sigma: None,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.patch, self.patch)
    }

    pub fn push(&mut self, pair: Pair) -> Result<()> {
        let n = self.patch * self.patch;
        if pair.clean.len() != n || pair.noisy.len() != n {
            return Err(Error::Shape {
                expected: n,
                actual: pair.clean.len().max(pair.noisy.len()),
            });
        }
        self.pairs.push(pair);
        Ok(())
    }

    /// Deterministically splits off the last `fraction` of a seeded permutation.
    pub fn split(&self, fraction: f64, seed: u64) -> (PairDataset, PairDataset) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut stream(seed, Stream::Split));
        let n_val = ((self.len() as f64 * fraction).round() as usize).min(self.len().saturating_sub(1));
        let (train_idx, val_idx) = idx.split_at(self.len() - n_val);
        let pick = |ids: &[usize]| PairDataset {
            patch: self.patch,
            pairs: ids.iter().map(|&i| self.pairs[i].clone()).collect(),
            role: self.role,
            noise_sigma: self.noise_sigma,
        };
        (pick(train_idx), pick(val_idx))
    }

    /// Procedural grayscale textures in `[0, 1]` with additive white Gaussian noise.
    pub fn synthetic_textures(count: usize, patch: usize, sigma: f64, seed: u64) -> Self {
        let mut ds = PairDataset::new(patch, Role::Source);
        ds.noise_sigma = Some(sigma);
        for i in 0..count {
            let mut rng = substream(seed, Stream::Synthesis, i as u64);
            let clean = texture(&mut rng, patch);
            let mut noise_rng = substream(seed, Stream::Noise, i as u64);
            let noisy = clean
                .iter()
                .map(|c| c + sigma * noise_rng.sample::<f64, _>(StandardNormal))
                .collect();
            ds.pairs.push(Pair { clean, noisy });
        }
        ds
    }

    /// Patches cut from full (clean, noisy) image pairs on a regular grid,
    /// each with a seeded random dihedral transform.
    pub fn from_image_pairs(
        images: &[(DetectorImage, DetectorImage)],
        patch: usize,
        stride: usize,
        role: Role,
        seed: u64,
    ) -> Result<Self> {
        let mut ds = PairDataset::new(patch, role);
        let mut rng = stream(seed, Stream::Sampling);
        for (clean, noisy) in images {
            if clean.dims() != noisy.dims() {
                return Err(Error::Contract("pair images differ in shape".into()));
            }
            let (w, h) = (clean.width, clean.height);
            if w < patch || h < patch {
                return Err(Error::Contract(format!(
                    "patch {patch} does not fit a {w}x{h} image"
                )));
            }
            let (c, n) = (clean.to_f64(), noisy.to_f64());
            for y0 in grid(h, patch, stride) {
                for x0 in grid(w, patch, stride) {
                    let t = rng.random_range(0..8u8);
                    ds.pairs.push(Pair {
                        clean: dihedral(&crop(&c, w, x0, y0, patch), patch, t),
                        noisy: dihedral(&crop(&n, w, x0, y0, patch), patch, t),
                    });
                }
            }
        }
        Ok(ds)
    }
}

fn grid(extent: usize, patch: usize, stride: usize) -> Vec<usize> {
    let stride = stride.max(1);
    let mut v: Vec<usize> = (0..=extent - patch).step_by(stride).collect();
    if *v.last().unwrap() != extent - patch {
        v.push(extent - patch);
    }
    v
}

fn crop(data: &[f64], width: usize, x0: usize, y0: usize, patch: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(patch * patch);
    for y in y0..y0 + patch {
        out.extend_from_slice(&data[y * width + x0..y * width + x0 + patch]);
    }
    out
}

/// One of the eight symmetries of the square: `t & 3` quarter turns, then a flip if `t & 4`.
pub fn dihedral(p: &[f64], n: usize, t: u8) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let (mut sx, mut sy) = (x, y);
            if t & 4 != 0 {
                sx = n - 1 - sx;
            }
            for _ in 0..(t & 3) {
                let (nx, ny) = (sy, n - 1 - sx);
                sx = nx;
                sy = ny;
            }
            out[y * n + x] = p[sy * n + sx];
        }
    }
    out
}

/// One procedural texture: a random blend of smooth fields, shapes, blobs,
/// gratings and radial profiles.
fn texture(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut img = vec![0.0; n * n];
    let layers = rng.random_range(2..5);
    for _ in 0..layers {
        let amp = rng.random_range(0.2..1.0);
        let layer = match rng.random_range(0..5u8) {
            0 => smooth_field(rng, n),
            1 => shapes(rng, n),
            2 => blobs(rng, n),
            3 => grating(rng, n),
            _ => radial(rng, n),
        };
        for (a, b) in img.iter_mut().zip(&layer) {
            *a += amp * b;
        }
    }
    let (lo, hi) = img
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let span = (hi - lo).max(1e-9);
    let top = rng.random_range(0.5..1.0);
    img.iter().map(|v| top * (v - lo) / span).collect()
}

fn smooth_field(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let white: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
    gaussian_blur(&white, Dims::new(n, n), rng.random_range(1.0..5.0))
}

fn shapes(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut img = vec![0.0; n * n];
    for _ in 0..rng.random_range(1..6) {
        let v = rng.random_range(-1.0..1.0);
        let (cx, cy) = (rng.random_range(0.0..n as f64), rng.random_range(0.0..n as f64));
        let r = rng.random_range(2.0..n as f64 / 2.0);
        let disc = rng.random_bool(0.5);
        for y in 0..n {
            for x in 0..n {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let inside = if disc {
                    dx * dx + dy * dy < r * r
                } else {
                    dx.abs() < r && dy.abs() < 0.6 * r
                };
                if inside {
                    img[y * n + x] = v;
                }
            }
        }
    }
    img
}

fn blobs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut img = vec![0.0; n * n];
    for _ in 0..rng.random_range(1..8) {
        let v = rng.random_range(0.2..1.0);
        let (cx, cy) = (rng.random_range(0.0..n as f64), rng.random_range(0.0..n as f64));
        let s = rng.random_range(1.5..n as f64 / 3.0);
        for y in 0..n {
            for x in 0..n {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                img[y * n + x] += v * (-d2 / (2.0 * s * s)).exp();
            }
        }
    }
    img
}

fn grating(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let theta = rng.random_range(0.0..std::f64::consts::PI);
    let freq = rng.random_range(0.05..0.6);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let (c, s) = (theta.cos(), theta.sin());
    (0..n * n)
        .map(|i| {
            let (x, y) = ((i % n) as f64, (i / n) as f64);
            (freq * (c * x + s * y) + phase).sin()
        })
        .collect()
}

fn radial(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let (cx, cy) = (rng.random_range(0.0..n as f64), rng.random_range(0.0..n as f64));
    let decay = rng.random_range(1.0..4.0);
    let ring = rng.random_range(0.0..0.8);
    let scale = rng.random_range(2.0..n as f64);
    (0..n * n)
        .map(|i| {
            let r = (((i % n) as f64 - cx).powi(2) + ((i / n) as f64 - cy).powi(2)).sqrt() / scale;
            (1.0 + r * r).powf(-decay / 2.0) * (1.0 + ring * (6.0 * r).cos())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dihedral_group_closes() {
        let n = 5;
        let p: Vec<f64> = (0..n * n).map(|i| i as f64).collect();
        // four quarter turns is the identity
        let mut q = p.clone();
        for _ in 0..4 {
            q = dihedral(&q, n, 1);
        }
        assert_eq!(q, p);
        // a flip is an involution
        assert_eq!(dihedral(&dihedral(&p, n, 4), n, 4), p);
        // all eight images are distinct permutations of the same values
        let mut seen = std::collections::HashSet::new();
        for t in 0..8 {
            let d = dihedral(&p, n, t);
            let mut s = d.clone();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(s, p);
            seen.insert(d.iter().map(|v| *v as i64).collect::<Vec<_>>());
        }
        assert_eq!(seen.len(), 8);
    }

    #[test]
    fn textures_are_in_unit_range_and_reproducible() {
        let a = PairDataset::synthetic_textures(6, 16, 5.0 / 255.0, 3);
        let b = PairDataset::synthetic_textures(6, 16, 5.0 / 255.0, 3);
        assert_eq!(a, b);
        for p in &a.pairs {
            assert!(p.clean.iter().all(|&v| (0.0..=1.0).contains(&v)));
            let noise: f64 = p.clean.iter().zip(&p.noisy).map(|(c, n)| (n - c).powi(2)).sum::<f64>();
            assert!(noise > 0.0);
        }
    }

    #[test]
    fn grid_patches_cover_the_image() {
        let img = DetectorImage::from_f64(10, 8, &(0..80).map(|i| i as f64).collect::<Vec<_>>()).unwrap();
        let ds = PairDataset::from_image_pairs(&[(img.clone(), img)], 4, 3, Role::Target, 1).unwrap();
        // x offsets {0,3,6}, y offsets {0,3,4}
        assert_eq!(ds.len(), 9);
        assert!(ds.pairs.iter().all(|p| p.clean == p.noisy));
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let ds = PairDataset::synthetic_textures(20, 8, 0.02, 1);
        let (a, b) = ds.split(0.25, 4);
        let (c, d) = ds.split(0.25, 4);
        assert_eq!((a.len(), b.len()), (15, 5));
        assert_eq!(a, c);
        assert_eq!(b, d);
    }
}
