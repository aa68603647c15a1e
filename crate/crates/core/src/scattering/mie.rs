//! Electric-dipole Mie coefficient and the matching point-dipole polarizability.
//!
//! Only order one is needed, so the Riccati-Bessel functions are evaluated in
//! closed form; short power series replace the closed forms near the origin
//! where `sin z / z - cos z` cancels catastrophically.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::ScatteringError;

/// Largest size parameter `2πr/λ` accepted.
pub const MAX_SIZE_PARAMETER: f64 = 50.0;

const SERIES_CUTOFF: f64 = 0.5;
const SERIES_TERMS: usize = 12;

/// `ψ₁(z) = z j₁(z)` and its derivative.
fn riccati_psi1(z: f64) -> (f64, f64) {
    if z.abs() < SERIES_CUTOFF {
        // ψ₁(z) = Σ_k (-1)^k z^{2k+2} / (2^k k! (2k+3)!!)
        let z2 = z * z;
        let mut coeff = 1.0 / 3.0;
        let mut power = z; // z^{2k+1}
        let (mut psi, mut dpsi) = (0.0, 0.0);
        for k in 0..SERIES_TERMS {
            psi += coeff * power * z;
            dpsi += coeff * (2 * k + 2) as f64 * power;
            let k1 = (k + 1) as f64;
            coeff *= -1.0 / (2.0 * k1 * (2.0 * k1 + 3.0));
            power *= z2;
        }
        (psi, dpsi)
    } else {
        let (s, c) = z.sin_cos();
        (s / z - c, c / z - s / (z * z) + s)
    }
}

/// `η₁(x) = x y₁(x)` and its derivative.
fn riccati_eta1(x: f64) -> (f64, f64) {
    let (s, c) = x.sin_cos();
    (-c / x - s, s / x + c / (x * x) - c)
}

fn check_inputs(radius: f64, refractive_index: f64, wavelength: f64) -> Result<f64, ScatteringError> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(ScatteringError::InvalidInput(format!(
            "radius must be positive, got {radius}"
        )));
    }
    if !(wavelength.is_finite() && wavelength > 0.0) {
        return Err(ScatteringError::InvalidInput(format!(
            "wavelength must be positive, got {wavelength}"
        )));
    }
    if !(refractive_index.is_finite() && refractive_index > 1.0) {
        return Err(ScatteringError::InvalidInput(format!(
            "refractive index must exceed 1, got {refractive_index}"
        )));
    }
    let x = 2.0 * PI * radius / wavelength;
    if x > MAX_SIZE_PARAMETER {
        return Err(ScatteringError::SizeParameter(x));
    }
    Ok(x)
}

/// Mie coefficient `a₁` for a lossless sphere of relative index `refractive_index`.
pub fn mie_a1(radius: f64, refractive_index: f64, wavelength: f64) -> Result<Complex64, ScatteringError> {
    let x = check_inputs(radius, refractive_index, wavelength)?;
    let m = refractive_index;
    let (psi_mx, dpsi_mx) = riccati_psi1(m * x);
    let (psi_x, dpsi_x) = riccati_psi1(x);
    let (eta_x, deta_x) = riccati_eta1(x);
    let num = m * psi_mx * dpsi_x - psi_x * dpsi_mx;
    let imag = m * psi_mx * deta_x - eta_x * dpsi_mx;
    let a1 = Complex64::new(num, 0.0) / Complex64::new(num, imag);
    if !(a1.re.is_finite() && a1.im.is_finite()) {
        return Err(ScatteringError::SizeParameter(x));
    }
    Ok(a1)
}

/// Point-dipole polarizability `α = i (6π / k³) a₁` (vacuum permittivity 1).
pub fn polarizability(radius: f64, refractive_index: f64, wavelength: f64) -> Result<Complex64, ScatteringError> {
    let k = 2.0 * PI / wavelength;
    let a1 = mie_a1(radius, refractive_index, wavelength)?;
    Ok(Complex64::i() * (6.0 * PI / (k * k * k)) * a1)
}
