//! Anisotropic total-variation denoising by projected gradient on the dual.
//!
//! Solves `min_x ½‖x − z‖² + λ(‖D_h x‖₁ + ‖D_v x‖₁)` with forward differences
//! and Neumann (symmetric) boundaries. The primal iterate is recovered from
//! the dual as `x = z − λ Dᵀp` with `‖p‖∞ ≤ 1`.

use crate::image::Dims;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for TvConfig {
    fn default() -> Self {
        TvConfig {
            tol: 1e-6,
            max_iter: 500,
        }
    }
}

/// Dual step in units of `1/λ`; `‖D‖² ≤ 8` for the 2-D forward-difference operator.
const DUAL_STEP: f64 = 1.0 / 8.0;

pub fn tv_denoise(z: &[f64], dims: Dims, strength: f64, cfg: TvConfig) -> Vec<f64> {
    assert_eq!(z.len(), dims.len(), "tv_denoise: data length does not match dims");
    assert!(strength >= 0.0, "tv strength must be non-negative");
    if strength == 0.0 {
        return z.to_vec();
    }
    let n = z.len();
    let mut ph = vec![0.0; n];
    let mut pv = vec![0.0; n];
    let mut x = z.to_vec();
    let mut gh = vec![0.0; n];
    let mut gv = vec![0.0; n];
    let scale = DUAL_STEP / strength;
    for _ in 0..cfg.max_iter {
        gradient(&x, dims, &mut gh, &mut gv);
        let (mut change, mut norm) = (0.0, 0.0);
        for (p, g) in ph.iter_mut().zip(&gh).chain(pv.iter_mut().zip(&gv)) {
            let next = (*p + scale * g).clamp(-1.0, 1.0);
            change += (next - *p) * (next - *p);
            norm += next * next;
            *p = next;
        }
        primal(z, dims, strength, &ph, &pv, &mut x);
        if change.sqrt() <= cfg.tol * norm.sqrt().max(1e-12) {
            break;
        }
    }
    x
}

/// Anisotropic total variation `‖D_h x‖₁ + ‖D_v x‖₁`.
pub fn total_variation(x: &[f64], dims: Dims) -> f64 {
    let mut gh = vec![0.0; x.len()];
    let mut gv = vec![0.0; x.len()];
    gradient(x, dims, &mut gh, &mut gv);
    gh.iter().chain(&gv).map(|v| v.abs()).sum()
}

pub fn tv_objective(x: &[f64], z: &[f64], dims: Dims, strength: f64) -> f64 {
    let data: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
    0.5 * data + strength * total_variation(x, dims)
}

fn gradient(x: &[f64], dims: Dims, gh: &mut [f64], gv: &mut [f64]) {
    let (w, h) = (dims.width, dims.height);
    for r in 0..h {
        let row = &x[r * w..(r + 1) * w];
        let out = &mut gh[r * w..(r + 1) * w];
        for c in 0..w - 1 {
            out[c] = row[c + 1] - row[c];
        }
        out[w - 1] = 0.0;
    }
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            gv[i] = if r + 1 < h { x[i + w] - x[i] } else { 0.0 };
        }
    }
}

// x = z − λ Dᵀp, with Dᵀ = −div under the same boundary convention
fn primal(z: &[f64], dims: Dims, strength: f64, ph: &[f64], pv: &[f64], x: &mut [f64]) {
    let (w, h) = (dims.width, dims.height);
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let mut div = 0.0;
            if c + 1 < w {
                div += ph[i];
            }
            if c > 0 {
                div -= ph[i - 1];
            }
            if r + 1 < h {
                div += pv[i];
            }
            if r > 0 {
                div -= pv[i - w];
            }
            x[i] = z[i] + strength * div;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exact 1-D TV prox by enumerating dual active sets and checking KKT.
    ///
    /// Dual: `min_u ½‖z − Dᵀu‖²` with `|uᵢ| ≤ λ`; primal `x = z − Dᵀu`.
    /// Free coordinates satisfy `(Dx)ᵢ = 0`; `uᵢ = +λ` needs `(Dx)ᵢ ≥ 0`,
    /// `uᵢ = −λ` needs `(Dx)ᵢ ≤ 0`.
    fn tv1d_active_set_oracle(z: &[f64], lam: f64) -> Vec<f64> {
        let n = z.len();
        let m = n - 1;
        let primal_of = |u: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let dtu = if i < m { -u[i] } else { 0.0 } + if i > 0 { u[i - 1] } else { 0.0 };
                    z[i] - dtu
                })
                .collect()
        };
        let combos = 3usize.pow(m as u32);
        for code in 0..combos {
            let mut state = vec![0i8; m];
            let mut c = code;
            for s in state.iter_mut() {
                *s = (c % 3) as i8 - 1; // -1, 0 (free), +1
                c /= 3;
            }
            let free: Vec<usize> = (0..m).filter(|&i| state[i] == 0).collect();
            let mut u: Vec<f64> = state.iter().map(|&s| s as f64 * lam).collect();
            if !free.is_empty() {
                // (D Dᵀ)_{FF} u_F = (D z)_F − (D Dᵀ)_{F,B} u_B; D Dᵀ is tridiag(−1, 2, −1)
                let k = free.len();
                let mut a = vec![0.0; k * k];
                let mut b = vec![0.0; k];
                for (ri, &i) in free.iter().enumerate() {
                    b[ri] = z[i + 1] - z[i];
                    for j in [i.wrapping_sub(1), i, i + 1] {
                        if j >= m {
                            continue;
                        }
                        let v = if j == i { 2.0 } else { -1.0 };
                        if let Some(cj) = free.iter().position(|&f| f == j) {
                            a[ri * k + cj] = v;
                        } else {
                            b[ri] -= v * u[j];
                        }
                    }
                }
                let sol = solve_dense(a, b, k);
                for (ri, &i) in free.iter().enumerate() {
                    u[i] = sol[ri];
                }
            }
            if u.iter().any(|v| v.abs() > lam + 1e-12) {
                continue;
            }
            let x = primal_of(&u);
            let ok = (0..m).all(|i| {
                let dx = x[i + 1] - x[i];
                match state[i] {
                    0 => dx.abs() < 1e-10,
                    1 => dx >= -1e-12,
                    _ => dx <= 1e-12,
                }
            });
            if ok {
                return x;
            }
        }
        panic!("no KKT point found");
    }

    fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Vec<f64> {
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().partial_cmp(&a[j * n + col].abs()).unwrap()).unwrap();
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            b.swap(col, piv);
            for r in col + 1..n {
                let f = a[r * n + col] / a[col * n + col];
                for k in col..n {
                    a[r * n + k] -= f * a[col * n + k];
                }
                b[r] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|k| a[r * n + k] * x[k]).sum();
            x[r] = (b[r] - s) / a[r * n + r];
        }
        x
    }

    const TIGHT: TvConfig = TvConfig {
        tol: 1e-14,
        max_iter: 200_000,
    };

    #[test]
    fn step_signal_matches_exact_solution() {
        let z = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let oracle = tv1d_active_set_oracle(&z, 0.25);
        let hand = [1.0 / 12.0, 1.0 / 12.0, 1.0 / 12.0, 11.0 / 12.0, 11.0 / 12.0, 11.0 / 12.0];
        for (a, b) in oracle.iter().zip(&hand) {
            assert!((a - b).abs() < 1e-12);
        }
        let got = tv_denoise(&z, Dims::flat(6), 0.25, TIGHT);
        for (a, b) in got.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6, "{got:?}");
        }
    }

    #[test]
    fn random_1d_signals_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let n = rng.random_range(3..9);
            let z: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lam = rng.random_range(0.01..0.5);
            let oracle = tv1d_active_set_oracle(&z, lam);
            let got = tv_denoise(&z, Dims::flat(n), lam, TIGHT);
            for (a, b) in got.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-6, "z={z:?} lam={lam}");
            }
        }
    }

    #[test]
    fn constant_image_is_fixed() {
        let z = vec![0.37; 20];
        assert_eq!(tv_denoise(&z, Dims::new(5, 4), 0.8, TvConfig::default()), z);
    }

    #[test]
    fn zero_strength_short_circuits() {
        let z: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        assert_eq!(tv_denoise(&z, Dims::new(4, 3), 0.0, TvConfig::default()), z);
    }

    #[test]
    fn transposition_symmetry() {
        // anisotropic TV commutes with transposing the image
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (w, h) = (5, 3);
        let z: Vec<f64> = (0..w * h).map(|_| rng.random::<f64>()).collect();
        let zt: Vec<f64> = (0..w * h).map(|i| z[(i % h) * w + i / h]).collect();
        let a = tv_denoise(&z, Dims::new(w, h), 0.1, TIGHT);
        let b = tv_denoise(&zt, Dims::new(h, w), 0.1, TIGHT);
        for i in 0..w * h {
            assert!((b[i] - a[(i % h) * w + i / h]).abs() < 1e-6);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn objective_never_exceeds_the_input(
            seed in any::<u64>(),
            w in 2usize..10,
            h in 1usize..10,
            strength in 0.001f64..1.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z: Vec<f64> = (0..w * h).map(|_| rng.random::<f64>()).collect();
            let dims = Dims::new(w, h);
            let x = tv_denoise(&z, dims, strength, TvConfig::default());
            let lhs = tv_objective(&x, &z, dims, strength);
            let rhs = strength * total_variation(&z, dims);
            prop_assert!(lhs <= rhs + 1e-12, "{lhs} > {rhs}");
        }
    }
}
