//! Small-angle scattering geometry, synthetic detector patterns, counting
//! noise and azimuthal reduction to `I(Q)`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::DetectorImage;
use crate::metrics::fmt_sig;
use crate::rng::{stream, Stream};

/// Flat main detector perpendicular to the beam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScatteringGeometry {
    pub width: usize,
    pub height: usize,
    /// Metres.
    pub pixel_pitch: f64,
    /// Ångström.
    pub wavelength: f64,
    /// Metres.
    pub sample_detector_distance: f64,
    /// Fractional pixel coordinates; pixel `(i, j)` has its centre at `(i, j)`.
    pub beam_center: (f64, f64),
}

impl Default for ScatteringGeometry {
    fn default() -> Self {
        ScatteringGeometry::centered(256, 256)
    }
}

impl ScatteringGeometry {
    /// 5.5 mm pixels, 6 Å neutrons, 15.5 m flight path, beam at the detector centre.
    pub fn centered(width: usize, height: usize) -> Self {
        ScatteringGeometry {
            width,
            height,
            pixel_pitch: 5.5e-3,
            wavelength: 6.0,
            sample_detector_distance: 15.5,
            beam_center: ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("width", "detector needs at least one pixel"));
        }
        for (field, v) in [
            ("pixel_pitch", self.pixel_pitch),
            ("wavelength", self.wavelength),
            ("sample_detector_distance", self.sample_detector_distance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be > 0, got {v}")));
            }
        }
        let (cx, cy) = self.beam_center;
        let (w, h) = (self.width as f64, self.height as f64);
        if !(cx >= -w && cx <= 2.0 * w && cy >= -h && cy <= 2.0 * h) {
            return Err(Error::config("beam_center", "too far outside the detector"));
        }
        Ok(())
    }

    /// `Q = (4π/λ) sin(½ atan(r/d))` in Å⁻¹ for pixel `(x, y)`.
    pub fn q_at(&self, x: usize, y: usize) -> f64 {
        let dx = (x as f64 - self.beam_center.0) * self.pixel_pitch;
        let dy = (y as f64 - self.beam_center.1) * self.pixel_pitch;
        let two_theta = dx.hypot(dy).atan2(self.sample_detector_distance);
        4.0 * PI / self.wavelength * (0.5 * two_theta).sin()
    }

    /// The beam centre in image-metadata convention, where pixel centres sit at half-integers.
    pub fn image_beam_center(&self) -> (f64, f64) {
        (self.beam_center.0 + 0.5, self.beam_center.1 + 0.5)
    }

    /// Default instrument on `image`'s detector, centred where the image says the beam is.
    pub fn for_image(image: &DetectorImage) -> Self {
        let mut g = ScatteringGeometry::centered(image.width, image.height);
        g.beam_center = (image.beam_center.0 - 0.5, image.beam_center.1 - 0.5);
        g
    }

    pub fn max_q(&self) -> f64 {
        q_map(self).into_iter().fold(0.0, f64::max)
    }
}

/// Per-pixel `Q`, row-major.
pub fn q_map(geometry: &ScatteringGeometry) -> Vec<f64> {
    let mut out = Vec::with_capacity(geometry.width * geometry.height);
    for y in 0..geometry.height {
        for x in 0..geometry.width {
            out.push(geometry.q_at(x, y));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FormFactor {
    /// Homogeneous sphere, radius in Å.
    Sphere { radius: f64 },
    /// Guinier knee joined smoothly to a power-law tail.
    GuinierPorod { rg: f64, porod_exponent: f64 },
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormFactorModel {
    pub form: FormFactor,
    pub scale: f64,
    pub background: f64,
}

impl FormFactorModel {
    pub fn sphere(radius: f64, scale: f64, background: f64) -> Self {
        FormFactorModel {
            form: FormFactor::Sphere { radius },
            scale,
            background,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.form {
            FormFactor::Sphere { radius } if !(radius > 0.0) => {
                return Err(Error::config("radius", "must be > 0"));
            }
            FormFactor::GuinierPorod { rg, porod_exponent } => {
                if !(rg > 0.0) {
                    return Err(Error::config("rg", "must be > 0"));
                }
                if !(porod_exponent > 0.0) {
                    return Err(Error::config("porod_exponent", "must be > 0"));
                }
            }
            _ => {}
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::config("scale", "must be > 0"));
        }
        if !(self.background >= 0.0 && self.background.is_finite()) {
            return Err(Error::config("background", "must be ≥ 0"));
        }
        Ok(())
    }

    /// Normalized profile `P(Q)` with `P(0) = 1`.
    pub fn profile(&self, q: f64) -> f64 {
        match self.form {
            FormFactor::Sphere { radius } => sphere_form_factor(q * radius),
            FormFactor::GuinierPorod { rg, porod_exponent } => guinier_porod(q, rg, porod_exponent),
            FormFactor::Flat => 1.0,
        }
    }

    pub fn intensity(&self, q: f64) -> f64 {
        self.scale * self.profile(q) + self.background
    }
}

/// `[3(sin u − u cos u)/u³]²`, with the series used near `u = 0`.
pub fn sphere_form_factor(u: f64) -> f64 {
    let amp = if u.abs() < 1e-3 {
        let u2 = u * u;
        1.0 - u2 / 10.0 + u2 * u2 / 280.0
    } else {
        3.0 * (u.sin() - u * u.cos()) / (u * u * u)
    };
    amp * amp
}

/// `exp(−Q²Rg²/3)` up to `Q₁ = √(3d/2)/Rg`, then `D/Q^d` continuous in value and slope.
pub fn guinier_porod(q: f64, rg: f64, d: f64) -> f64 {
    let q1 = (1.5 * d).sqrt() / rg;
    if q <= q1 {
        (-q * q * rg * rg / 3.0).exp()
    } else {
        (-q1 * q1 * rg * rg / 3.0).exp() * (q1 / q).powf(d)
    }
}

/// Noise-free pattern `scale·P(Q) + background` on the geometry's detector.
pub fn synth_clean_pattern(model: &FormFactorModel, geometry: &ScatteringGeometry) -> Result<DetectorImage> {
    model.validate()?;
    geometry.validate()?;
    let data: Vec<f64> = q_map(geometry).into_iter().map(|q| model.intensity(q)).collect();
    let (cx, cy) = geometry.image_beam_center();
    Ok(DetectorImage::from_f64(geometry.width, geometry.height, &data)?.with_beam_center(cx, cy))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModel {
    /// `counts ~ Poisson(t·F·x)`, reported as `counts/(t·F)`.
    #[default]
    Poisson,
    /// Additive white Gaussian noise of variance `sigma²/t`.
    Gaussian { sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Acquisition {
    /// Relative exposure `t`.
    pub time_factor: f64,
    /// Expected counts per unit intensity at `t = 1`.
    pub flux_scale: f64,
    pub noise: NoiseModel,
    /// Seconds represented by `t = 1`, recorded in the image metadata.
    pub unit_time_s: f64,
}

impl Default for Acquisition {
    fn default() -> Self {
        Acquisition {
            time_factor: 1.0,
            flux_scale: 1.0,
            noise: NoiseModel::Poisson,
            unit_time_s: 300.0,
        }
    }
}

impl Acquisition {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("time_factor", self.time_factor),
            ("flux_scale", self.flux_scale),
            ("unit_time_s", self.unit_time_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be > 0, got {v}")));
            }
        }
        if let NoiseModel::Gaussian { sigma } = self.noise {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(Error::config("sigma", "must be ≥ 0"));
            }
        }
        Ok(())
    }
}

/// Poisson acquisition with exposure `time_factor` and `flux_scale` counts per unit intensity.
pub fn simulate_acquisition(clean: &DetectorImage, time_factor: f64, flux_scale: f64, seed: u64) -> Result<DetectorImage> {
    simulate(
        clean,
        &Acquisition {
            time_factor,
            flux_scale,
            ..Acquisition::default()
        },
        seed,
    )
}

pub fn simulate(clean: &DetectorImage, acq: &Acquisition, seed: u64) -> Result<DetectorImage> {
    acq.validate()?;
    let mut rng = stream(seed, Stream::Noise);
    let t = acq.time_factor;
    let data: Vec<f64> = match acq.noise {
        NoiseModel::Poisson => {
            let rate = t * acq.flux_scale;
            clean
                .data
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let lambda = rate * x as f64;
                    if lambda < 0.0 {
                        return Err(Error::Contract(format!("negative intensity at pixel {i}")));
                    }
                    if lambda == 0.0 {
                        return Ok(0.0);
                    }
                    let dist = Poisson::new(lambda).map_err(|e| Error::Contract(format!("pixel {i}: {e}")))?;
                    Ok(rng.sample(dist) / rate)
                })
                .collect::<Result<_>>()?
        }
        NoiseModel::Gaussian { sigma } => {
            let sd = sigma / t.sqrt();
            clean
                .data
                .iter()
                .map(|&x| x as f64 + sd * rng.sample::<f64, _>(StandardNormal))
                .collect()
        }
    };
    Ok(clean.with_data_f64(&data)?.with_acq_time(t * acq.unit_time_s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    Linear,
    #[default]
    Log,
}

/// Azimuthally averaged intensity. Bins with `pixel_count == 0` are empty and
/// carry intensity 0; they are never interpolated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IQCurve {
    pub q: Vec<f64>,
    pub intensity: Vec<f64>,
    pub pixel_count: Vec<usize>,
    /// `n_bins + 1` increasing bin edges.
    pub edges: Vec<f64>,
}

impl IQCurve {
    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn bin_width(&self, i: usize) -> f64 {
        self.edges[i + 1] - self.edges[i]
    }

    pub fn non_empty(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.pixel_count[i] > 0)
    }

    /// Header `q,intensity,pixel_count`; empty bins leave `intensity` blank.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("q,intensity,pixel_count\n");
        for i in 0..self.len() {
            let intensity = if self.pixel_count[i] > 0 {
                fmt_sig(self.intensity[i], 10)
            } else {
                String::new()
            };
            let _ = writeln!(out, "{},{},{}", fmt_sig(self.q[i], 10), intensity, self.pixel_count[i]);
        }
        out
    }
}

/// Bins valid pixels by `Q` and averages each bin. Linear bins span
/// `[0, Q_max]`; log bins span `[Q_min, Q_max]` over pixels with `Q > 0`, and a
/// pixel exactly at the beam centre is dropped.
pub fn azimuthal_average(
    image: &DetectorImage,
    geometry: &ScatteringGeometry,
    n_bins: usize,
    binning: Binning,
) -> Result<IQCurve> {
    geometry.validate()?;
    if n_bins < 2 {
        return Err(Error::Contract(format!("need at least 2 bins, got {n_bins}")));
    }
    if (image.width, image.height) != (geometry.width, geometry.height) {
        return Err(Error::Contract(format!(
            "image is {}x{} but geometry is {}x{}",
            image.width, image.height, geometry.width, geometry.height
        )));
    }
    let qs = q_map(geometry);
    let members: Vec<usize> = (0..qs.len())
        .filter(|&i| image.mask[i] && (binning == Binning::Linear || qs[i] > 0.0))
        .collect();
    if members.is_empty() {
        return Err(Error::Contract("no valid pixels to average".into()));
    }
    let q_max = members.iter().map(|&i| qs[i]).fold(0.0, f64::max);
    let edges: Vec<f64> = match binning {
        Binning::Linear => {
            let top = if q_max > 0.0 { q_max } else { 1.0 };
            (0..=n_bins).map(|b| top * b as f64 / n_bins as f64).collect()
        }
        Binning::Log => {
            let q_min = members.iter().map(|&i| qs[i]).fold(f64::INFINITY, f64::min);
            let (lo, hi) = (q_min.ln(), q_max.ln().max(q_min.ln() + 1e-12));
            (0..=n_bins)
                .map(|b| (lo + (hi - lo) * b as f64 / n_bins as f64).exp())
                .collect()
        }
    };
    let locate = |q: f64| -> usize {
        // first edge strictly greater than q, minus one; the top edge closes the last bin
        let b = edges.partition_point(|e| *e <= q);
        b.saturating_sub(1).min(n_bins - 1)
    };
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for &i in &members {
        let b = locate(qs[i]);
        sums[b] += image.data[i] as f64;
        counts[b] += 1;
    }
    let q: Vec<f64> = (0..n_bins)
        .map(|b| match binning {
            Binning::Linear => 0.5 * (edges[b] + edges[b + 1]),
            Binning::Log => (edges[b] * edges[b + 1]).sqrt(),
        })
        .collect();
    let intensity = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    Ok(IQCurve {
        q,
        intensity,
        pixel_count: counts,
        edges,
    })
}
