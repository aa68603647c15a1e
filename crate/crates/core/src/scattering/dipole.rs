//! Coupled-dipole system: each sphere is a point electric dipole driven by the
//! incident wave plus the fields radiated by every other dipole.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{Illumination, ScatteringError};

pub type Vec3 = [f64; 3];
pub type CVec3 = [Complex64; 3];

/// Solved dipole system. `moments[j]` is the self-consistent moment of dipole `j`.
#[derive(Debug, Clone)]
pub struct DipoleSystem {
    pub positions: Vec<Vec3>,
    pub polarizabilities: Vec<Complex64>,
    pub wavenumber: f64,
    pub moments: Vec<CVec3>,
    /// `‖A p − b‖ / ‖b‖` of the solved interaction system.
    pub residual: f64,
}

/// Free-space dyadic Green's tensor mapping a dipole moment at the origin to
/// the electric field at `r` (vacuum permittivity 1).
pub fn green_tensor(r: Vec3, k: f64) -> [[Complex64; 3]; 3] {
    let dist = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    let u = [r[0] / dist, r[1] / dist, r[2] / dist];
    let phase = Complex64::from_polar(1.0 / (4.0 * PI * dist), k * dist);
    let transverse = Complex64::new(k * k, 0.0);
    let near = Complex64::new(-1.0, k * dist) / (dist * dist);
    let mut g = [[Complex64::new(0.0, 0.0); 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let delta = if a == b { 1.0 } else { 0.0 };
            let uu = u[a] * u[b];
            g[a][b] = phase * (transverse * (delta - uu) + near * (delta - 3.0 * uu));
        }
    }
    g
}

pub fn incident_field(ill: &Illumination, r: Vec3) -> CVec3 {
    let k = ill.wavenumber();
    let kr = k * (ill.propagation[0] * r[0] + ill.propagation[1] * r[1] + ill.propagation[2] * r[2]);
    let phase = Complex64::from_polar(ill.amplitude, kr);
    ill.polarization.map(|e| phase * e)
}

impl DipoleSystem {
    /// Solves `p_j = α_j [E_inc(r_j) + Σ_{k≠j} G(r_j − r_k) p_k]`.
    pub fn solve(
        positions: Vec<Vec3>,
        polarizabilities: Vec<Complex64>,
        ill: &Illumination,
    ) -> Result<Self, ScatteringError> {
        let n = positions.len();
        if polarizabilities.len() != n {
            return Err(ScatteringError::InvalidInput(format!(
                "{} positions but {} polarizabilities",
                n,
                polarizabilities.len()
            )));
        }
        for i in 0..n {
            for j in i + 1..n {
                if positions[i] == positions[j] {
                    return Err(ScatteringError::Singular(format!("dipoles {i} and {j} coincide")));
                }
            }
        }
        let k = ill.wavenumber();
        let dim = 3 * n;
        let mut a = DMatrix::<Complex64>::identity(dim, dim);
        let mut b = DVector::<Complex64>::zeros(dim);
        for j in 0..n {
            let e = incident_field(ill, positions[j]);
            for c in 0..3 {
                b[3 * j + c] = polarizabilities[j] * e[c];
            }
            for l in 0..n {
                if l == j {
                    continue;
                }
                let d = [
                    positions[j][0] - positions[l][0],
                    positions[j][1] - positions[l][1],
                    positions[j][2] - positions[l][2],
                ];
                let g = green_tensor(d, k);
                for r in 0..3 {
                    for c in 0..3 {
                        a[(3 * j + r, 3 * l + c)] = -polarizabilities[j] * g[r][c];
                    }
                }
            }
        }
        let p = a
            .clone()
            .lu()
            .solve(&b)
            .ok_or_else(|| ScatteringError::Singular("interaction matrix is singular".into()))?;
        let residual = (&a * &p - &b).norm() / b.norm().max(f64::MIN_POSITIVE);
        if !residual.is_finite() {
            return Err(ScatteringError::Singular("non-finite solution".into()));
        }
        let moments = (0..n).map(|j| [p[3 * j], p[3 * j + 1], p[3 * j + 2]]).collect();
        Ok(Self {
            positions,
            polarizabilities,
            wavenumber: k,
            moments,
            residual,
        })
    }

    /// Far-field amplitude `F(n̂)` with `E_sca → F e^{ikr}/r`.
    pub fn scattering_amplitude(&self, dir: Vec3) -> CVec3 {
        let k = self.wavenumber;
        let mut sum = [Complex64::new(0.0, 0.0); 3];
        for (p, r) in self.moments.iter().zip(&self.positions) {
            let phase = Complex64::from_polar(1.0, -k * (dir[0] * r[0] + dir[1] * r[1] + dir[2] * r[2]));
            for c in 0..3 {
                sum[c] += p[c] * phase;
            }
        }
        let radial = dir[0] * sum[0] + dir[1] * sum[1] + dir[2] * sum[2];
        let scale = k * k / (4.0 * PI);
        [0, 1, 2].map(|c| (sum[c] - radial * dir[c]) * scale)
    }

    /// Radiant intensity `r² |E_sca|²` toward `dir` (not normalized by the incident intensity).
    pub fn radiant_intensity(&self, dir: Vec3) -> f64 {
        self.scattering_amplitude(dir).iter().map(|c| c.norm_sqr()).sum()
    }

    /// Extinction cross-section from the optical theorem.
    pub fn extinction(&self, ill: &Illumination) -> f64 {
        let f = self.scattering_amplitude(ill.propagation);
        let proj: Complex64 = (0..3).map(|c| f[c] * ill.polarization[c]).sum();
        4.0 * PI * proj.im / (self.wavenumber * ill.amplitude * ill.amplitude)
    }
}
