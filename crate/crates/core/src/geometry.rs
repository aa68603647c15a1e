//! Codec between the normalized `3n²` design vector and physical sphere
//! placements on an `n × n` grid of square cells.
//!
//! Each cell holds one sphere described by a triplet `(p_x, p_y, p_r)` in
//! `[0, 1]`. The radius maps linearly onto `[r_min, r_max]` and the center
//! moves inside a box shrunk by the radius, so every point of the unit cube
//! decodes to a sphere contained in its own cell. Cells are ordered
//! row-major from the substrate's minimum corner.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fraction of the cell length used for the smallest admissible radius.
pub const RADIUS_MIN_FRACTION: f64 = 0.05;
/// Fraction of the cell length used for the largest admissible radius.
pub const RADIUS_MAX_FRACTION: f64 = 0.45;

/// Slack (relative to the cell length) allowed by [`validate`] on contact tests.
const CONTACT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("vector has length {got}, expected {expected}")]
    Length { expected: usize, got: usize },
    #[error("entry {index} = {value} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("structure cannot be encoded: {0:?}")]
    Unencodable(Vec<Violation>),
    #[error("malformed geometry file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub cell_length: f64,
    pub refractive_index: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n: 2,
            cell_length: 5.0,
            refractive_index: 2.0,
        }
    }
}

impl GridSpec {
    pub fn new(n: usize, cell_length: f64, refractive_index: f64) -> Result<Self, GeometryError> {
        let grid = Self {
            n,
            cell_length,
            refractive_index,
        };
        grid.check()?;
        Ok(grid)
    }

    pub fn check(&self) -> Result<(), GeometryError> {
        if self.n == 0 {
            return Err(GeometryError::InvalidGrid("n must be at least 1".into()));
        }
        if !(self.cell_length.is_finite() && self.cell_length > 0.0) {
            return Err(GeometryError::InvalidGrid(format!(
                "cell_length must be positive, got {}",
                self.cell_length
            )));
        }
        if !(self.refractive_index.is_finite() && self.refractive_index > 1.0) {
            return Err(GeometryError::InvalidGrid(format!(
                "refractive_index must exceed 1, got {}",
                self.refractive_index
            )));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.n * self.n
    }

    /// Length of the design vector, `3n²`.
    pub fn dimension(&self) -> usize {
        3 * self.cells()
    }

    pub fn r_min(&self) -> f64 {
        RADIUS_MIN_FRACTION * self.cell_length
    }

    pub fn r_max(&self) -> f64 {
        RADIUS_MAX_FRACTION * self.cell_length
    }

    /// Side length of the whole substrate.
    pub fn extent(&self) -> f64 {
        self.n as f64 * self.cell_length
    }

    /// Minimum corner of cell `index` (row-major: `index = row * n + col`).
    pub fn cell_origin(&self, index: usize) -> (f64, f64) {
        let row = index / self.n;
        let col = index % self.n;
        (col as f64 * self.cell_length, row as f64 * self.cell_length)
    }
}

/// Normalized design vector: consecutive `(p_x, p_y, p_r)` triplets in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryVector {
    values: Vec<f64>,
    grid: GridSpec,
}

impl GeometryVector {
    pub fn new(values: Vec<f64>, grid: GridSpec) -> Result<Self, GeometryError> {
        grid.check()?;
        if values.len() != grid.dimension() {
            return Err(GeometryError::Length {
                expected: grid.dimension(),
                got: values.len(),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(GeometryError::OutOfRange { index, value });
        }
        Ok(Self { values, grid })
    }

    /// Builds a vector after clamping every entry into `[0, 1]`. NaN maps to 0.
    pub fn clamped(values: &[f64], grid: GridSpec) -> Result<Self, GeometryError> {
        let values = values
            .iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Self::new(values, grid)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn triplet(&self, cell: usize) -> [f64; 3] {
        let t = &self.values[3 * cell..3 * cell + 3];
        [t[0], t[1], t[2]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center_x: f64,
    pub center_y: f64,
    pub radius: f64,
}

/// Decoded structure. `spheres[i]` belongs to cell `i` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct MetasurfaceGeometry {
    pub spheres: Vec<Sphere>,
    pub grid: GridSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    SphereCount { expected: usize, got: usize },
    NonFinite { sphere: usize },
    RadiusOutOfRange { sphere: usize, radius: f64 },
    OutsideCell { sphere: usize },
    Overlap { first: usize, second: usize },
}

pub fn decode(v: &GeometryVector) -> MetasurfaceGeometry {
    let grid = *v.grid();
    let (r_min, r_max) = (grid.r_min(), grid.r_max());
    let spheres = (0..grid.cells())
        .map(|cell| {
            let [px, py, pr] = v.triplet(cell);
            let radius = r_min + pr * (r_max - r_min);
            let free = grid.cell_length - 2.0 * radius;
            let (ox, oy) = grid.cell_origin(cell);
            Sphere {
                center_x: ox + radius + px * free,
                center_y: oy + radius + py * free,
                radius,
            }
        })
        .collect();
    MetasurfaceGeometry { spheres, grid }
}

pub fn encode(g: &MetasurfaceGeometry) -> Result<GeometryVector, GeometryError> {
    let blocking: Vec<Violation> = validate(g)
        .into_iter()
        .filter(|v| !matches!(v, Violation::Overlap { .. }))
        .collect();
    if !blocking.is_empty() {
        return Err(GeometryError::Unencodable(blocking));
    }
    let grid = g.grid;
    let (r_min, r_max) = (grid.r_min(), grid.r_max());
    let mut values = Vec::with_capacity(grid.dimension());
    for (cell, s) in g.spheres.iter().enumerate() {
        let (ox, oy) = grid.cell_origin(cell);
        let free = grid.cell_length - 2.0 * s.radius;
        let px = (s.center_x - ox - s.radius) / free;
        let py = (s.center_y - oy - s.radius) / free;
        let pr = (s.radius - r_min) / (r_max - r_min);
        // validate() allows contact slack, so snap rounding residue back in.
        values.extend([px, py, pr].map(|p| p.clamp(0.0, 1.0)));
    }
    GeometryVector::new(values, grid)
}

/// Lists every violated structural invariant. Empty means the geometry is valid.
pub fn validate(g: &MetasurfaceGeometry) -> Vec<Violation> {
    let grid = g.grid;
    let mut out = Vec::new();
    if g.spheres.len() != grid.cells() {
        out.push(Violation::SphereCount {
            expected: grid.cells(),
            got: g.spheres.len(),
        });
    }
    let slack = CONTACT_TOLERANCE * grid.cell_length;
    let mut finite = vec![true; g.spheres.len()];
    for (i, s) in g.spheres.iter().enumerate() {
        if !(s.center_x.is_finite() && s.center_y.is_finite() && s.radius.is_finite()) {
            finite[i] = false;
            out.push(Violation::NonFinite { sphere: i });
            continue;
        }
        if s.radius < grid.r_min() - slack || s.radius > grid.r_max() + slack {
            out.push(Violation::RadiusOutOfRange {
                sphere: i,
                radius: s.radius,
            });
        }
        if i < grid.cells() {
            let (ox, oy) = grid.cell_origin(i);
            let inside = |c: f64, o: f64| c - s.radius >= o - slack && c + s.radius <= o + grid.cell_length + slack;
            if !(s.radius > 0.0 && inside(s.center_x, ox) && inside(s.center_y, oy)) {
                out.push(Violation::OutsideCell { sphere: i });
            }
        }
    }
    for i in 0..g.spheres.len() {
        for j in i + 1..g.spheres.len() {
            if !(finite[i] && finite[j]) {
                continue;
            }
            let (a, b) = (&g.spheres[i], &g.spheres[j]);
            let d = (a.center_x - b.center_x).hypot(a.center_y - b.center_y);
            if d < a.radius + b.radius - slack {
                out.push(Violation::Overlap { first: i, second: j });
            }
        }
    }
    out
}

/// Swaps left/right cell columns and reflects `p_x`, mirroring the decoded
/// structure about the substrate's vertical midline.
pub fn mirror_columns(v: &GeometryVector) -> GeometryVector {
    mirror(v, |row, col, n| row * n + (n - 1 - col), 0)
}

/// Swaps top/bottom cell rows and reflects `p_y` (mirror about the horizontal midline).
pub fn mirror_rows(v: &GeometryVector) -> GeometryVector {
    mirror(v, |row, col, n| (n - 1 - row) * n + col, 1)
}

fn mirror(v: &GeometryVector, target: impl Fn(usize, usize, usize) -> usize, flipped: usize) -> GeometryVector {
    let n = v.grid().n;
    let mut values = vec![0.0; v.values().len()];
    for cell in 0..v.grid().cells() {
        let mut t = v.triplet(cell);
        t[flipped] = 1.0 - t[flipped];
        let dst = target(cell / n, cell % n, n);
        values[3 * dst..3 * dst + 3].copy_from_slice(&t);
    }
    GeometryVector {
        values,
        grid: *v.grid(),
    }
}

impl MetasurfaceGeometry {
    /// Reflection `x -> extent - x` of every sphere, keeping the cell assignment
    /// consistent with the mirrored positions.
    pub fn mirrored_x(&self) -> Self {
        let n = self.grid.n;
        let extent = self.grid.extent();
        let mut spheres = self.spheres.clone();
        for (cell, s) in self.spheres.iter().enumerate() {
            let dst = (cell / n) * n + (n - 1 - cell % n);
            spheres[dst] = Sphere {
                center_x: extent - s.center_x,
                ..*s
            };
        }
        Self {
            spheres,
            grid: self.grid,
        }
    }
}

/// Canonical interchange form: `{"grid": {...}, "vector": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryFile {
    pub grid: GridSpec,
    pub vector: Vec<f64>,
}

impl GeometryFile {
    pub fn from_vector(v: &GeometryVector) -> Self {
        Self {
            grid: *v.grid(),
            vector: v.values().to_vec(),
        }
    }

    pub fn parse(text: &str) -> Result<GeometryVector, GeometryError> {
        let file: GeometryFile = serde_json::from_str(text).map_err(|e| GeometryError::Parse(e.to_string()))?;
        file.into_vector()
    }

    pub fn into_vector(self) -> Result<GeometryVector, GeometryError> {
        GeometryVector::new(self.vector, self.grid)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("geometry serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> GridSpec {
        GridSpec::default()
    }

    fn vector(values: Vec<f64>) -> GeometryVector {
        GeometryVector::new(values, grid()).unwrap()
    }

    #[test]
    fn centered_max_radius_triplet() {
        let v = vector([0.5, 0.5, 1.0].repeat(4));
        let g = decode(&v);
        let s = g.spheres[0];
        assert!((s.radius - 2.25).abs() < 1e-12);
        assert!((s.center_x - 2.5).abs() < 1e-12);
        assert!((s.center_y - 2.5).abs() < 1e-12);
        let s = g.spheres[3];
        assert!((s.center_x - 7.5).abs() < 1e-12);
        assert!((s.center_y - 7.5).abs() < 1e-12);
    }

    #[test]
    fn all_zeros_vector() {
        let g = decode(&vector(vec![0.0; 12]));
        assert_eq!(g.spheres.len(), 4);
        for (cell, s) in g.spheres.iter().enumerate() {
            let (ox, oy) = g.grid.cell_origin(cell);
            assert!((s.radius - 0.25).abs() < 1e-12);
            assert!((s.center_x - ox - 0.25).abs() < 1e-12);
            assert!((s.center_y - oy - 0.25).abs() < 1e-12);
        }
        assert!(validate(&g).is_empty());
    }

    #[test]
    fn random_vectors_always_decode_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let values: Vec<f64> = (0..12).map(|_| rng.random::<f64>()).collect();
            let g = decode(&vector(values));
            assert_eq!(validate(&g), vec![]);
        }
    }

    #[test]
    fn rejects_out_of_range_entries() {
        let mut values = vec![0.5; 12];
        values[4] = 1.5;
        assert_eq!(
            GeometryVector::new(values, grid()),
            Err(GeometryError::OutOfRange { index: 4, value: 1.5 })
        );
        assert!(GeometryVector::new(vec![f64::NAN; 12], grid()).is_err());
        assert!(matches!(
            GeometryVector::new(vec![0.5; 11], grid()),
            Err(GeometryError::Length { .. })
        ));
    }

    #[test]
    fn centered_sphere_encodes_to_half_half_one() {
        let g = decode(&vector([0.5, 0.5, 1.0].repeat(4)));
        let v = encode(&g).unwrap();
        for (a, b) in v.values().iter().zip([0.5, 0.5, 1.0].repeat(4)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn encode_rejects_small_radius() {
        let mut g = decode(&vector(vec![0.5; 12]));
        g.spheres[2].radius = 0.1;
        let err = encode(&g).unwrap_err();
        assert!(matches!(err, GeometryError::Unencodable(ref v)
            if v.contains(&Violation::RadiusOutOfRange { sphere: 2, radius: 0.1 })));
    }

    #[test]
    fn identical_centers_overlap() {
        let mut g = decode(&vector(vec![0.5; 12]));
        g.spheres[1] = g.spheres[0];
        let violations = validate(&g);
        assert!(violations.contains(&Violation::Overlap { first: 0, second: 1 }));
    }

    #[test]
    fn center_on_cell_edge_is_outside() {
        let mut g = decode(&vector(vec![0.5; 12]));
        g.spheres[0].center_x = 0.0;
        assert_eq!(validate(&g), vec![Violation::OutsideCell { sphere: 0 }]);
    }

    #[test]
    fn wrong_sphere_count() {
        let mut g = decode(&vector(vec![0.5; 12]));
        g.spheres.pop();
        assert!(validate(&g).contains(&Violation::SphereCount { expected: 4, got: 3 }));
    }

    #[test]
    fn geometry_file_roundtrip() {
        let v = vector(vec![0.25; 12]);
        let text = GeometryFile::from_vector(&v).to_json();
        assert!(text.starts_with("{\"grid\":{\"n\":2"));
        assert_eq!(GeometryFile::parse(&text).unwrap(), v);
        assert!(
            GeometryFile::parse("{\"grid\":{\"n\":0,\"cell_length\":5,\"refractive_index\":2},\"vector\":[]}").is_err()
        );
    }

    #[test]
    fn larger_grids_decode_valid() {
        let grid = GridSpec::new(3, 2.0, 1.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let values: Vec<f64> = (0..27).map(|_| rng.random::<f64>()).collect();
            let g = decode(&GeometryVector::new(values, grid).unwrap());
            assert!(validate(&g).is_empty());
        }
    }

    fn unit_vector() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..=1.0, 12)
    }

    fn dyadic_vector() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec((0u32..=1024).prop_map(|k| k as f64 / 1024.0), 12)
    }

    proptest! {
        #[test]
        fn decode_is_total_onto_valid(values in unit_vector()) {
            prop_assert!(validate(&decode(&vector(values))).is_empty());
        }

        #[test]
        fn encode_decode_roundtrip(values in unit_vector()) {
            let v = vector(values);
            let g = decode(&v);
            let back = encode(&g).unwrap();
            for (a, b) in back.values().iter().zip(v.values()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let again = decode(&back);
            for (a, b) in again.spheres.iter().zip(&g.spheres) {
                prop_assert!((a.center_x - b.center_x).abs() < 1e-12);
                prop_assert!((a.center_y - b.center_y).abs() < 1e-12);
                prop_assert!((a.radius - b.radius).abs() < 1e-12);
            }
        }

        #[test]
        fn radius_strictly_monotone_in_pr(values in unit_vector(), cell in 0usize..4, bump in 1e-9f64..0.5) {
            let v = vector(values.clone());
            let mut raised = values;
            let idx = 3 * cell + 2;
            if raised[idx] + bump <= 1.0 {
                raised[idx] += bump;
                let lo = decode(&v).spheres[cell].radius;
                let hi = decode(&vector(raised)).spheres[cell].radius;
                prop_assert!(hi > lo);
            }
        }

        #[test]
        fn column_mirror_is_exact_on_dyadic_inputs(values in dyadic_vector()) {
            let v = vector(values);
            prop_assert_eq!(decode(&mirror_columns(&v)), decode(&v).mirrored_x());
        }

        #[test]
        fn column_mirror_matches_reflection(values in unit_vector()) {
            let v = vector(values);
            let lhs = decode(&mirror_columns(&v));
            let rhs = decode(&v).mirrored_x();
            for (a, b) in lhs.spheres.iter().zip(&rhs.spheres) {
                prop_assert!((a.center_x - b.center_x).abs() < 1e-12);
                prop_assert_eq!(a.center_y, b.center_y);
                prop_assert_eq!(a.radius, b.radius);
            }
        }
    }
}
