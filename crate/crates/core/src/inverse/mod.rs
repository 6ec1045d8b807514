//! Gradient-based reconstruction from electrode measurements.

pub mod conductivity;
pub mod electrodes;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::forward::Measurements;

/// `½‖U − U_meas‖²_F`.
pub fn misfit(computed: &Measurements, measured: &Measurements) -> Result<f64> {
    check_shape(computed, measured)?;
    Ok(0.5 * computed.distance(measured).powi(2))
}

pub(crate) fn check_shape(a: &Measurements, b: &Measurements) -> Result<()> {
    if a.electrodes() != b.electrodes() || a.patterns() != b.patterns() {
        return Err(Error::Dimension(format!(
            "measurements are {}x{}, expected {}x{}",
            b.electrodes(),
            b.patterns(),
            a.electrodes(),
            a.patterns()
        )));
    }
    Ok(())
}

/// Currents of the adjoint problems for the grounded misfit: with
/// `r = U − U_meas` (both grounded at electrode 1), `Ĩ = r − (Σ r)·e₁` is
/// mean-free and `Ĩᵀ δU = rᵀ (δU − δU₁ 𝟙)` for every perturbation `δU`.
pub fn adjoint_currents(computed: &Measurements, measured: &Measurements) -> Result<Vec<Vec<f64>>> {
    check_shape(computed, measured)?;
    Ok(computed
        .columns
        .iter()
        .zip(&measured.columns)
        .map(|(u, m)| {
            let mut r: Vec<f64> = u.iter().zip(m).map(|(a, b)| a - b).collect();
            let total: f64 = r.iter().sum();
            r[0] -= total;
            r
        })
        .collect())
}

/// `U + δ·(‖U‖_F/‖G‖_F)·G` with `G` standard Gaussian except on the first
/// (ground) row, which stays zero.
pub fn add_noise(clean: &Measurements, delta: f64, seed: u64) -> Result<Measurements> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::Config(format!("noise level must be non-negative, got {delta}")));
    }
    if delta == 0.0 {
        return Ok(clean.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g: Vec<Vec<f64>> = clean
        .columns
        .iter()
        .map(|c| {
            (0..c.len())
                .map(|m| if m == 0 { 0.0 } else { StandardNormal.sample(&mut rng) })
                .collect()
        })
        .collect();
    let gn = g.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    if gn == 0.0 {
        return Err(Error::Dimension("noise needs at least two electrodes".into()));
    }
    let scale = delta * clean.frobenius() / gn;
    let columns = clean
        .columns
        .iter()
        .zip(&g)
        .map(|(c, n)| c.iter().zip(n).map(|(a, b)| a + scale * b).collect())
        .collect();
    Ok(Measurements { columns })
}

/// Golden-section minimization of `f` on `(0, t_max)` down to an interval of
/// width `rtol·t_max`. Returns the best probe `(t, f(t))`, or `(0, f0)` when
/// no probe improves on `f0 = f(0)`.
pub fn golden_section<F>(mut f: F, f0: f64, t_max: f64, rtol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, t_max);
    let mut best = (0.0, f0);
    let record = |t: f64, v: f64, best: &mut (f64, f64)| {
        if v < best.1 {
            *best = (t, v);
        }
    };
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    record(c, fc, &mut best);
    let mut fd = f(d)?;
    record(d, fd, &mut best);
    while b - a > rtol * t_max {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
            record(c, fc, &mut best);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
            record(d, fd, &mut best);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meas(columns: Vec<Vec<f64>>) -> Measurements {
        Measurements { columns }
    }

    #[test]
    fn golden_section_on_a_parabola() {
        let (t, v) = golden_section(|t| Ok((t - 0.3) * (t - 0.3)), 0.09, 1.0, 1e-3).unwrap();
        assert!((t - 0.3).abs() < 1e-3 && v < 1e-6);
        let (t, v) = golden_section(|t| Ok(1.0 + t), 1.0, 1.0, 1e-3).unwrap();
        assert_eq!((t, v), (0.0, 1.0));
    }

    #[test]
    fn adjoint_currents_are_mean_free() {
        let u = meas(vec![vec![0.0, 1.0, 2.0, -0.5]]);
        let m = meas(vec![vec![0.0, 0.5, 2.5, 0.0]]);
        let a = adjoint_currents(&u, &m).unwrap();
        assert!(a[0].iter().sum::<f64>().abs() < 1e-15);
        assert_eq!(&a[0][1..], &[0.5, -0.5, -0.5]);
        assert!(adjoint_currents(&u, &meas(vec![vec![0.0; 3]])).is_err());
    }

    #[test]
    fn noise_has_the_requested_level() {
        let clean = meas(vec![vec![0.0, 1.0, -2.0, 0.5], vec![0.0, 0.3, 0.2, -1.0]]);
        let noisy = add_noise(&clean, 0.02, 11).unwrap();
        let rel = noisy.distance(&clean) / clean.frobenius();
        assert!((rel - 0.02).abs() < 1e-12);
        assert!(noisy.columns.iter().all(|c| c[0] == 0.0));
        assert_eq!(noisy, add_noise(&clean, 0.02, 11).unwrap());
        assert_eq!(add_noise(&clean, 0.0, 11).unwrap(), clean);
        assert_eq!(misfit(&clean, &clean).unwrap(), 0.0);
    }
}
