use nalgebra::Point3;

/// Default lower bound on the range used by [`WeightingScheme::InverseSquare`].
pub const DEFAULT_MIN_RANGE: f64 = 0.1;

/// Per-measurement weight model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightingScheme {
    /// Every measurement weighs 1.
    Constant,
    /// `1 / z²` with `z` the measured range, floored at `min_range`.
    InverseSquare { min_range: f64 },
}

impl Default for WeightingScheme {
    fn default() -> Self {
        Self::Constant
    }
}

impl WeightingScheme {
    pub fn inverse_square() -> Self {
        Self::InverseSquare {
            min_range: DEFAULT_MIN_RANGE,
        }
    }

    #[inline]
    pub fn weight(&self, range: f64) -> f64 {
        match *self {
            Self::Constant => 1.0,
            Self::InverseSquare { min_range } => {
                let z = range.max(min_range);
                1.0 / (z * z)
            }
        }
    }
}

/// Signed distance and weight that one ray contributes to a voxel.
///
/// The distance is the projection of `surface - voxel_center` onto the ray
/// direction: positive between sensor and surface, negative behind it,
/// clamped to `±truncation`. `surface` must differ from `origin`.
#[inline]
pub fn compute_sdf_and_weight(
    origin: &Point3<f64>,
    surface: &Point3<f64>,
    voxel_center: &Point3<f64>,
    truncation: f64,
    scheme: &WeightingScheme,
) -> (f64, f64) {
    let ray = surface - origin;
    let range = ray.norm();
    let sdf = (surface - voxel_center).dot(&ray) / range;
    (sdf.clamp(-truncation, truncation), scheme.weight(range))
}
