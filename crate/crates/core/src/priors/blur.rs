use crate::image::Dims;

/// Separable Gaussian smoothing with symmetric (mirror) boundaries.
/// A width of zero is the identity.
pub fn gaussian_blur(z: &[f64], dims: Dims, width: f64) -> Vec<f64> {
    assert_eq!(z.len(), dims.len());
    if width <= 0.0 {
        return z.to_vec();
    }
    let radius = (3.0 * width).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * width * width)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (w, h) = (dims.width, dims.height);
    let mut tmp = vec![0.0; z.len()];
    for r in 0..h {
        for c in 0..w {
            tmp[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * z[r * w + mirror(c as isize + k as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; z.len()];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[mirror(r as isize + k as isize - radius, h) * w + c])
                .sum();
        }
    }
    out
}

/// Half-sample symmetric reflection: `-1 → 0`, `n → n-1`.
pub(crate) fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}
