//! Reconstruction quality metrics over mask-valid pixels.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::DetectorImage;

/// Reported for exact reconstructions, where the SNR ratio is infinite.
pub const SNR_CAP: f64 = 300.0;

pub const CSV_HEADER: &str = "snr_db,rmse,nmse,mae";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub snr_db: f64,
    pub rmse: f64,
    pub nmse: f64,
    pub mae: f64,
}

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        [self.snr_db, self.rmse, self.nmse, self.mae]
            .iter()
            .map(|&v| fmt_sig(v, 6))
            .collect::<Vec<_>>()
            .join(",")
    }
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

/// Metrics over two plain vectors, every entry valid.
pub fn compute_metrics_slices(reference: &[f64], estimate: &[f64]) -> Result<MetricsRecord> {
    if reference.len() != estimate.len() {
        return Err(Error::Shape {
            expected: reference.len(),
            actual: estimate.len(),
        });
    }
    metrics_masked(reference.iter().copied().zip(estimate.iter().copied()))
}

/// Metrics between two detector images. Shapes and masks must agree.
pub fn compute_metrics(reference: &DetectorImage, estimate: &DetectorImage) -> Result<MetricsRecord> {
    if reference.dims() != estimate.dims() {
        return Err(Error::Contract(format!(
            "image shapes differ: {}x{} vs {}x{}",
            reference.width, reference.height, estimate.width, estimate.height
        )));
    }
    if reference.mask != estimate.mask {
        return Err(Error::Contract("image masks differ".into()));
    }
    metrics_masked(
        reference
            .data
            .iter()
            .zip(&estimate.data)
            .zip(&reference.mask)
            .filter(|(_, &m)| m)
            .map(|((&r, &e), _)| (r as f64, e as f64)),
    )
}

fn metrics_masked(pairs: impl Iterator<Item = (f64, f64)>) -> Result<MetricsRecord> {
    let (mut ref_sq, mut err_sq, mut abs, mut m) = (0.0, 0.0, 0.0, 0usize);
    for (r, e) in pairs {
        let d = r - e;
        ref_sq += r * r;
        err_sq += d * d;
        abs += d.abs();
        m += 1;
    }
    if m == 0 {
        return Err(Error::Contract("no valid pixels".into()));
    }
    if ref_sq == 0.0 {
        return Err(Error::ZeroReference("nmse"));
    }
    let snr_db = if err_sq == 0.0 {
        SNR_CAP
    } else {
        (10.0 * (ref_sq / err_sq).log10()).min(SNR_CAP)
    };
    Ok(MetricsRecord {
        snr_db,
        rmse: (err_sq / m as f64).sqrt(),
        nmse: err_sq / ref_sq,
        mae: abs / m as f64,
    })
}

/// `%g`-style formatting with `sig` significant digits.
pub fn fmt_sig(v: f64, sig: usize) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    // rounding may bump the exponent (e.g. 9.9999996 -> 10.0000)
    let sci = format!("{:.*e}", sig - 1, v);
    let exp = sci
        .rsplit_once('e')
        .and_then(|(_, e)| e.parse::<i32>().ok())
        .unwrap_or(exp);
    if exp < -4 || exp >= sig as i32 {
        let (mant, _) = sci.rsplit_once('e').unwrap();
        let mant = trim_zeros(mant);
        format!("{mant}e{exp}")
    } else {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn three_four_example() {
        let m = compute_metrics_slices(&[3.0, 4.0], &[3.0, 3.0]).unwrap();
        assert!(close(m.snr_db, 20.0 * 5f64.log10(), 1e-12));
        assert!(close(m.snr_db, 13.9794, 1e-4));
        assert!(close(m.rmse, 1.0 / 2f64.sqrt(), 1e-12));
        assert!(close(m.nmse, 0.04, 1e-15));
        assert!(close(m.mae, 0.5, 1e-15));
    }

    #[test]
    fn identical_inputs_hit_the_cap() {
        let v = [0.1, 0.7, 0.3];
        let m = compute_metrics_slices(&v, &v).unwrap();
        assert_eq!(m.rmse, 0.0);
        assert_eq!(m.mae, 0.0);
        assert_eq!(m.nmse, 0.0);
        assert_eq!(m.snr_db, SNR_CAP);
    }

    #[test]
    fn zero_reference_is_an_error() {
        assert!(matches!(
            compute_metrics_slices(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroReference(_))
        ));
    }

    #[test]
    fn masked_pixels_are_ignored() {
        let r = DetectorImage::new(2, 1, vec![1.0, 5.0])
            .unwrap()
            .with_mask(vec![true, false])
            .unwrap();
        let e = r.with_data_f64(&[1.0, -100.0]).unwrap();
        assert_eq!(compute_metrics(&r, &e).unwrap().rmse, 0.0);
        let other_mask = e.clone().with_mask(vec![true, true]).unwrap();
        assert!(compute_metrics(&r, &other_mask).is_err());
    }

    #[test]
    fn nmse_and_snr_are_asymmetric() {
        let a = [1.0, 0.0];
        let b = [3.0, 0.0];
        let ab = compute_metrics_slices(&a, &b).unwrap();
        let ba = compute_metrics_slices(&b, &a).unwrap();
        assert_eq!(ab.rmse, ba.rmse);
        assert_eq!(ab.mae, ba.mae);
        assert!(close(ab.nmse, 4.0, 1e-12));
        assert!(close(ba.nmse, 4.0 / 9.0, 1e-12));
        assert!(ab.snr_db < ba.snr_db);
    }

    #[test]
    fn csv_uses_six_significant_digits() {
        let m = compute_metrics_slices(&[3.0, 4.0], &[3.0, 3.0]).unwrap();
        assert_eq!(metrics_csv(&[m]), "snr_db,rmse,nmse,mae\n13.9794,0.707107,0.04,0.5\n");
        assert_eq!(fmt_sig(0.0000123456789, 6), "1.23457e-5");
        assert_eq!(fmt_sig(1234567.0, 6), "1.23457e6");
        assert_eq!(fmt_sig(9.9999996, 6), "10");
        assert_eq!(fmt_sig(-0.5, 6), "-0.5");
    }

    proptest! {
        #[test]
        fn permutation_equivariant(
            vals in prop::collection::vec((0.1f64..2.0, -1.0f64..1.0), 2..40),
            rot in 0usize..40,
        ) {
            let r: Vec<f64> = vals.iter().map(|v| v.0).collect();
            let e: Vec<f64> = vals.iter().map(|v| v.0 + v.1).collect();
            let k = rot % r.len();
            let mut rp = r.clone();
            let mut ep = e.clone();
            rp.rotate_left(k);
            ep.rotate_left(k);
            rp.reverse();
            ep.reverse();
            let a = compute_metrics_slices(&r, &e).unwrap();
            let b = compute_metrics_slices(&rp, &ep).unwrap();
            prop_assert!(close(a.snr_db, b.snr_db, 1e-9));
            prop_assert!(close(a.rmse, b.rmse, 1e-12));
            prop_assert!(close(a.nmse, b.nmse, 1e-12));
            prop_assert!(close(a.mae, b.mae, 1e-12));
        }

        #[test]
        fn rmse_and_mae_symmetric(
            vals in prop::collection::vec((0.1f64..2.0, 0.1f64..2.0), 1..30),
        ) {
            let a: Vec<f64> = vals.iter().map(|v| v.0).collect();
            let b: Vec<f64> = vals.iter().map(|v| v.1).collect();
            let ab = compute_metrics_slices(&a, &b).unwrap();
            let ba = compute_metrics_slices(&b, &a).unwrap();
            prop_assert!(close(ab.rmse, ba.rmse, 1e-12));
            prop_assert!(close(ab.mae, ba.mae, 1e-12));
        }

        #[test]
        fn snr_decreases_along_a_ray(
            r in prop::collection::vec(0.1f64..2.0, 3..20),
            dir in prop::collection::vec(-1.0f64..1.0, 20),
            c in 1e-3f64..1.0,
        ) {
            let mut u: Vec<f64> = dir[..r.len()].to_vec();
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assume!(norm > 1e-3);
            u.iter_mut().for_each(|v| *v /= norm);
            let at = |c: f64| {
                let e: Vec<f64> = r.iter().zip(&u).map(|(a, b)| a + c * b).collect();
                compute_metrics_slices(&r, &e).unwrap().snr_db
            };
            prop_assert!(at(c) > at(c * 1.5));
        }
    }
}
