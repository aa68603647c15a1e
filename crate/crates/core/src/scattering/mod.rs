//! Forward solver: azimuth-averaged differential scattering cross-section of a
//! decoded metasurface under plane-wave illumination.
//!
//! Spheres are modeled as coupled electric dipoles whose polarizabilities come
//! from the first Mie coefficient. Lengths are in wavelengths and the vacuum
//! permittivity is 1, so DSCS values are in wavelength² per steradian.

mod dipole;
pub mod mie;
mod quadrature;

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{decode, GeometryVector, MetasurfaceGeometry};

pub use dipole::{green_tensor, incident_field, CVec3, DipoleSystem, Vec3};
pub use mie::{mie_a1, polarizability, MAX_SIZE_PARAMETER};
pub use quadrature::gauss_legendre;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScatteringError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("size parameter {0} outside the supported range (x <= 50)")]
    SizeParameter(f64),
    #[error("singular interaction system: {0}")]
    Singular(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Illumination {
    pub wavelength: f64,
    pub propagation: [f64; 3],
    pub polarization: [f64; 3],
    pub amplitude: f64,
}

impl Default for Illumination {
    /// Normal incidence along `+z`, polarized along `x`, unit amplitude.
    fn default() -> Self {
        Self {
            wavelength: 1.0,
            propagation: [0.0, 0.0, 1.0],
            polarization: [1.0, 0.0, 0.0],
            amplitude: 1.0,
        }
    }
}

impl Illumination {
    pub fn check(&self) -> Result<(), ScatteringError> {
        let norm = |v: &[f64; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let dot: f64 = (0..3).map(|i| self.propagation[i] * self.polarization[i]).sum();
        if !(self.wavelength.is_finite() && self.wavelength > 0.0) {
            return Err(ScatteringError::InvalidInput("wavelength must be positive".into()));
        }
        if !(self.amplitude.is_finite() && self.amplitude > 0.0) {
            return Err(ScatteringError::InvalidInput("amplitude must be positive".into()));
        }
        if (norm(&self.propagation) - 1.0).abs() > 1e-12 || (norm(&self.polarization) - 1.0).abs() > 1e-12 {
            return Err(ScatteringError::InvalidInput(
                "propagation and polarization must be unit vectors".into(),
            ));
        }
        if dot.abs() > 1e-12 {
            return Err(ScatteringError::InvalidInput(
                "polarization must be orthogonal to propagation".into(),
            ));
        }
        Ok(())
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }
}

/// Observation polar angles plus the number of uniform azimuth samples
/// averaged at each of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleGrid {
    pub polar_angles: Vec<f64>,
    pub azimuth_samples: usize,
}

impl Default for AngleGrid {
    /// Ten bin-midpoint angles `(2k+1)π/20` with 36 azimuth samples.
    fn default() -> Self {
        Self::midpoints(10, 36)
    }
}

impl AngleGrid {
    pub fn new(polar_angles: Vec<f64>, azimuth_samples: usize) -> Result<Self, ScatteringError> {
        let grid = Self {
            polar_angles,
            azimuth_samples,
        };
        grid.check()?;
        Ok(grid)
    }

    /// `count` angles at the midpoints of equal bins over `(0, π)`.
    pub fn midpoints(count: usize, azimuth_samples: usize) -> Self {
        let polar_angles = (0..count)
            .map(|k| (2 * k + 1) as f64 * PI / (2 * count) as f64)
            .collect();
        Self {
            polar_angles,
            azimuth_samples,
        }
    }

    /// `count` uniformly spaced angles covering `[0, π]` inclusive.
    pub fn full_range(count: usize, azimuth_samples: usize) -> Self {
        let polar_angles = (0..count).map(|i| PI * i as f64 / (count - 1).max(1) as f64).collect();
        Self {
            polar_angles,
            azimuth_samples,
        }
    }

    pub fn check(&self) -> Result<(), ScatteringError> {
        if self.polar_angles.is_empty() || self.azimuth_samples == 0 {
            return Err(ScatteringError::InvalidInput(
                "angle grid needs at least one polar angle and one azimuth sample".into(),
            ));
        }
        if self.polar_angles.iter().any(|t| !(0.0..=PI).contains(t)) {
            return Err(ScatteringError::InvalidInput("polar angles must lie in [0, π]".into()));
        }
        if self.polar_angles.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ScatteringError::InvalidInput(
                "polar angles must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.polar_angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polar_angles.is_empty()
    }

    fn azimuths(&self) -> Vec<(f64, f64)> {
        (0..self.azimuth_samples)
            .map(|j| (2.0 * PI * j as f64 / self.azimuth_samples as f64).sin_cos())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DscsProfile {
    pub values: Vec<f64>,
    pub angles: AngleGrid,
}

impl DscsProfile {
    pub fn new(values: Vec<f64>, angles: AngleGrid) -> Result<Self, ScatteringError> {
        if values.len() != angles.len() {
            return Err(ScatteringError::InvalidInput(format!(
                "{} values for {} angles",
                values.len(),
                angles.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(ScatteringError::InvalidInput(
                "DSCS values must be finite and non-negative".into(),
            ));
        }
        Ok(Self { values, angles })
    }
}

pub fn direction(theta: f64, phi_sin_cos: (f64, f64)) -> Vec3 {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi_sin_cos;
    [st * cp, st * sp, ct]
}

/// Solves the coupled-dipole system of a geometry, one dipole per sphere in
/// the plane `z = 0`, in the geometry's sphere order.
pub fn solve_dipoles(g: &MetasurfaceGeometry, ill: &Illumination) -> Result<DipoleSystem, ScatteringError> {
    ill.check()?;
    let positions = g.spheres.iter().map(|s| [s.center_x, s.center_y, 0.0]).collect();
    let alphas = g
        .spheres
        .iter()
        .map(|s| polarizability(s.radius, g.grid.refractive_index, ill.wavelength))
        .collect::<Result<Vec<_>, _>>()?;
    DipoleSystem::solve(positions, alphas, ill)
}

/// Sphere order used by [`dscs`]: sorted by position then radius, so any
/// permutation of the same physical structure gives bit-identical results.
fn canonical(g: &MetasurfaceGeometry) -> MetasurfaceGeometry {
    let mut spheres = g.spheres.clone();
    spheres.sort_by(|a, b| {
        a.center_x
            .total_cmp(&b.center_x)
            .then(a.center_y.total_cmp(&b.center_y))
            .then(a.radius.total_cmp(&b.radius))
    });
    MetasurfaceGeometry { spheres, grid: g.grid }
}

/// Azimuth-averaged radiant intensity at each polar angle (unnormalized).
pub fn azimuth_averaged_intensity(sys: &DipoleSystem, angles: &AngleGrid) -> Vec<f64> {
    let azimuths = angles.azimuths();
    angles
        .polar_angles
        .iter()
        .map(|&theta| {
            let total: f64 = azimuths
                .iter()
                .map(|&phi| sys.radiant_intensity(direction(theta, phi)))
                .sum();
            total / azimuths.len() as f64
        })
        .collect()
}

/// Differential scattering cross-section at every polar angle of `angles`,
/// averaged over uniform azimuth samples.
pub fn dscs(g: &MetasurfaceGeometry, ill: &Illumination, angles: &AngleGrid) -> Result<DscsProfile, ScatteringError> {
    angles.check()?;
    let sys = solve_dipoles(&canonical(g), ill)?;
    let norm = ill.amplitude * ill.amplitude;
    let values = azimuth_averaged_intensity(&sys, angles)
        .into_iter()
        .map(|v| v / norm)
        .collect();
    Ok(DscsProfile {
        values,
        angles: angles.clone(),
    })
}

/// Decodes and solves every vector in parallel; output order follows input order.
pub fn dscs_batch(
    vectors: &[GeometryVector],
    ill: &Illumination,
    angles: &AngleGrid,
) -> Vec<Result<DscsProfile, ScatteringError>> {
    vectors.par_iter().map(|v| dscs(&decode(v), ill, angles)).collect()
}

/// Total scattering cross-section by Gauss–Legendre quadrature in `cos θ`
/// times a uniform azimuth rule.
pub fn scattering_cross_section(
    sys: &DipoleSystem,
    ill: &Illumination,
    polar_nodes: usize,
    azimuth_nodes: usize,
) -> f64 {
    let (nodes, weights) = gauss_legendre(polar_nodes);
    let dphi = 2.0 * PI / azimuth_nodes as f64;
    let azimuths: Vec<(f64, f64)> = (0..azimuth_nodes).map(|j| (dphi * j as f64).sin_cos()).collect();
    let mut total = 0.0;
    for (&u, &w) in nodes.iter().zip(&weights) {
        let theta = u.clamp(-1.0, 1.0).acos();
        let ring: f64 = azimuths
            .iter()
            .map(|&phi| sys.radiant_intensity(direction(theta, phi)))
            .sum();
        total += w * ring * dphi;
    }
    total / (ill.amplitude * ill.amplitude)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{mirror_columns, mirror_rows, GridSpec, Sphere};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vector(rng: &mut ChaCha8Rng) -> GeometryVector {
        let values = (0..12).map(|_| rng.random::<f64>()).collect();
        GeometryVector::new(values, GridSpec::default()).unwrap()
    }

    fn single_sphere(radius: f64) -> MetasurfaceGeometry {
        let grid = GridSpec::new(1, 5.0, 2.0).unwrap();
        MetasurfaceGeometry {
            spheres: vec![Sphere {
                center_x: 2.5,
                center_y: 2.5,
                radius,
            }],
            grid,
        }
    }

    #[test]
    fn single_sphere_moment_is_alpha_x() {
        let g = single_sphere(0.7);
        let ill = Illumination::default();
        let sys = solve_dipoles(&g, &ill).unwrap();
        let alpha = polarizability(0.7, 2.0, 1.0).unwrap();
        assert_eq!(sys.moments[0][0], alpha);
        assert_eq!(sys.moments[0][1].norm(), 0.0);
        assert_eq!(sys.moments[0][2].norm(), 0.0);
    }

    #[test]
    fn distant_pair_decouples() {
        let ill = Illumination::default();
        let r = 0.02;
        let alpha = polarizability(r, 2.0, 1.0).unwrap();
        let sys = DipoleSystem::solve(vec![[0.0; 3], [1000.0, 0.0, 0.0]], vec![alpha; 2], &ill).unwrap();
        for p in &sys.moments {
            let isolated = alpha; // x̂ component of α E_inc at z = 0
            assert!((p[0] - isolated).norm() / isolated.norm() < 1e-6);
        }
    }

    #[test]
    fn coincident_dipoles_are_singular() {
        let ill = Illumination::default();
        let alpha = polarizability(0.2, 2.0, 1.0).unwrap();
        let err = DipoleSystem::solve(vec![[1.0; 3], [1.0; 3]], vec![alpha; 2], &ill).unwrap_err();
        assert!(matches!(err, ScatteringError::Singular(_)));
    }

    #[test]
    fn decoded_geometry_residual_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ill = Illumination::default();
        for _ in 0..50 {
            let sys = solve_dipoles(&decode(&random_vector(&mut rng)), &ill).unwrap();
            assert!(sys.residual < 1e-10, "residual {}", sys.residual);
        }
    }

    #[test]
    fn small_sphere_dipole_pattern() {
        let r = 0.01 / (2.0 * PI);
        let g = single_sphere(r);
        let angles = AngleGrid::new(vec![1e-4, PI / 2.0], 36).unwrap();
        let s = dscs(&g, &Illumination::default(), &angles).unwrap();
        let ratio = s.values[1] / s.values[0];
        assert!((ratio - 0.5).abs() / 0.5 < 0.005, "ratio {ratio}");
        // (1 + cos²θ)/2 shape at every default angle
        let s = dscs(&g, &Illumination::default(), &AngleGrid::default()).unwrap();
        for (v, t) in s.values.iter().zip(&s.angles.polar_angles) {
            let shape = (1.0 + t.cos().powi(2)) / 2.0;
            assert!((v / s.values[0] - shape / ((1.0 + (PI / 20.0).cos().powi(2)) / 2.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn mirror_images_share_dscs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ill = Illumination::default();
        let angles = AngleGrid::default();
        for _ in 0..20 {
            let v = random_vector(&mut rng);
            let base = dscs(&decode(&v), &ill, &angles).unwrap();
            for mirrored in [mirror_columns(&v), mirror_rows(&v)] {
                let m = dscs(&decode(&mirrored), &ill, &angles).unwrap();
                for (a, b) in base.values.iter().zip(&m.values) {
                    assert!((a - b).abs() <= 1e-10 * a.abs());
                }
            }
        }
    }

    #[test]
    fn amplitude_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = decode(&random_vector(&mut rng));
        let unit = Illumination::default();
        let doubled = Illumination {
            amplitude: 2.0,
            ..unit.clone()
        };
        let angles = AngleGrid::default();
        let a = azimuth_averaged_intensity(&solve_dipoles(&g, &unit).unwrap(), &angles);
        let b = azimuth_averaged_intensity(&solve_dipoles(&g, &doubled).unwrap(), &angles);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(4.0 * x, *y);
        }
        assert_eq!(dscs(&g, &unit, &angles).unwrap(), dscs(&g, &doubled, &angles).unwrap());
    }

    #[test]
    fn sphere_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = decode(&random_vector(&mut rng));
        let mut shuffled = g.clone();
        shuffled.spheres.swap(0, 3);
        shuffled.spheres.swap(1, 2);
        let angles = AngleGrid::default();
        let ill = Illumination::default();
        assert_eq!(
            dscs(&g, &ill, &angles).unwrap(),
            dscs(&shuffled, &ill, &angles).unwrap()
        );
    }

    #[test]
    fn optical_theorem_on_random_geometries() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let ill = Illumination::default();
        for _ in 0..10 {
            let sys = solve_dipoles(&decode(&random_vector(&mut rng)), &ill).unwrap();
            let sca = scattering_cross_section(&sys, &ill, 64, 64);
            let ext = sys.extinction(&ill);
            assert!(((sca - ext) / ext).abs() < 0.01, "sca {sca} ext {ext}");
        }
    }

    #[test]
    fn profiles_are_finite_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vs: Vec<_> = (0..32).map(|_| random_vector(&mut rng)).collect();
        let ill = Illumination::default();
        let angles = AngleGrid::default();
        let a = dscs_batch(&vs, &ill, &angles);
        let b = dscs_batch(&vs, &ill, &angles);
        for (x, y) in a.iter().zip(&b) {
            let (x, y) = (x.as_ref().unwrap(), y.as_ref().unwrap());
            assert_eq!(x, y);
            assert!(x.values.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }

    #[test]
    fn illumination_checks() {
        let ill = Illumination {
            polarization: [0.0, 0.0, 1.0],
            ..Illumination::default()
        };
        assert!(ill.check().is_err());
        assert!(AngleGrid::new(vec![0.5, 0.4], 3).is_err());
        assert!(AngleGrid::new(vec![], 3).is_err());
        assert_eq!(AngleGrid::full_range(181, 36).polar_angles[180], PI);
    }
}
