//! Reduce a clean sphere pattern to I(Q) and locate its first minimum,
//! which sits at QR ≈ 4.4934.

use prsans::sans::{azimuthal_average, synth_clean_pattern, Binning, FormFactorModel, ScatteringGeometry};

fn main() -> prsans::Result<()> {
    let radius = 150.0;
    let geometry = ScatteringGeometry::default();
    let image = synth_clean_pattern(&FormFactorModel::sphere(radius, 1.0, 0.0), &geometry)?;
    let curve = azimuthal_average(&image, &geometry, 100, Binning::Log)?;

    let bins: Vec<usize> = curve.non_empty().collect();
    let first_min = bins
        .windows(3)
        .find(|w| curve.intensity[w[1]] < curve.intensity[w[0]] && curve.intensity[w[1]] < curve.intensity[w[2]])
        .map(|w| w[1]);
    match first_min {
        Some(b) => println!(
            "first minimum at Q = {:.5} 1/Å (QR = {:.3}); expected Q = {:.5}",
            curve.q[b],
            curve.q[b] * radius,
            4.4934 / radius
        ),
        None => println!("no minimum in range"),
    }
    print!("{}", curve.to_csv());
    Ok(())
}
