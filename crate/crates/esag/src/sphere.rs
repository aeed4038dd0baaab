//! Transforms between the simplex and the unit hypersphere, and uniform
//! sampling on the sphere and its non-negative orthant.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Absolute tolerance for validating simplex sums and unit norms.
pub const VALIDATION_TOL: f64 = 1e-10;

/// Tolerance for sqrt/square round trips (double-precision accumulation over d ≤ 25).
pub const ROUND_TRIP_TOL: f64 = 1e-12;

/// Compositions whose sum deviates from 1 by at most this much are renormalized
/// on ingestion; larger deviations are rejected.
pub const RENORMALIZE_WINDOW: f64 = 1e-6;

/// A point on the simplex: non-negative entries summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Composition {
    values: DVector<f64>,
}

impl Composition {
    /// Validates entries (non-negative, finite, sum within [`VALIDATION_TOL`] of 1).
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Validation("composition must be non-empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("composition contains non-finite entries".into()));
        }
        if let Some(v) = values.iter().find(|v| **v < 0.0) {
            return Err(Error::Validation(format!("composition has negative entry {v}")));
        }
        let sum: f64 = values.sum();
        if (sum - 1.0).abs() > VALIDATION_TOL {
            return Err(Error::Validation(format!(
                "composition sums to {sum}, outside tolerance {VALIDATION_TOL}"
            )));
        }
        Ok(Self { values })
    }

    /// Lenient construction for ingested data: sums within [`RENORMALIZE_WINDOW`]
    /// of 1 are renormalized. Returns the composition and whether an adjustment
    /// was applied, so callers can warn.
    pub fn ingest(values: DVector<f64>) -> Result<(Self, bool)> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("composition contains non-finite entries".into()));
        }
        if let Some(v) = values.iter().find(|v| **v < 0.0) {
            return Err(Error::Validation(format!("composition has negative entry {v}")));
        }
        let sum: f64 = values.sum();
        if (sum - 1.0).abs() <= VALIDATION_TOL {
            return Ok((Self { values }, false));
        }
        if (sum - 1.0).abs() <= RENORMALIZE_WINDOW {
            return Ok((Self { values: values / sum }, true));
        }
        Err(Error::Validation(format!(
            "composition sums to {sum}, beyond the renormalization window {RENORMALIZE_WINDOW}"
        )))
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A unit vector on the hypersphere S^{d−1}. `in_orthant` records whether every
/// entry is non-negative (membership in the non-negative orthant).
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    values: DVector<f64>,
    in_orthant: bool,
}

impl Direction {
    /// Validates the unit norm within [`VALIDATION_TOL`]; the orthant flag is
    /// derived from the entries.
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Validation("direction must be non-empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("direction contains non-finite entries".into()));
        }
        let norm = values.norm();
        if (norm - 1.0).abs() > VALIDATION_TOL {
            return Err(Error::Validation(format!(
                "direction has norm {norm}, outside tolerance {VALIDATION_TOL}"
            )));
        }
        let in_orthant = values.iter().all(|v| *v >= 0.0);
        Ok(Self { values, in_orthant })
    }

    /// Normalizes an arbitrary nonzero vector onto the sphere.
    pub fn from_unnormalized(values: DVector<f64>) -> Result<Self> {
        let norm = values.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Validation(format!("cannot normalize vector with norm {norm}")));
        }
        let unit = values / norm;
        let in_orthant = unit.iter().all(|v| *v >= 0.0);
        Ok(Self { values: unit, in_orthant })
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn in_orthant(&self) -> bool {
        self.in_orthant
    }
}

/// Element-wise square root: maps the simplex onto the non-negative orthant of
/// the sphere.
pub fn sqrt_transform(u: &Composition) -> Direction {
    let values = u.values().map(|v| v.sqrt());
    // Unit norm holds by construction: Σ (√u)² = Σ u = 1.
    Direction { values, in_orthant: true }
}

/// Element-wise square: maps the non-negative orthant of the sphere back onto
/// the simplex. Fails for directions with negative entries.
pub fn square_transform(y: &Direction) -> Result<Composition> {
    if !y.in_orthant() {
        return Err(Error::Validation(
            "direction is not in the non-negative orthant; squares would not invert".into(),
        ));
    }
    Ok(Composition { values: y.values().map(|v| v * v) })
}

/// Uniform draw on the full sphere S^{d−1}: a normalized standard Gaussian.
pub fn sample_uniform_sphere<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<Direction> {
    if d < 2 {
        return Err(Error::Dimension(format!("sphere sampling needs d ≥ 2, got {d}")));
    }
    loop {
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = z.norm();
        if norm > 0.0 {
            return Direction::from_unnormalized(z);
        }
        // Measure-zero event: resample.
    }
}

/// Uniform draw on the non-negative orthant S^{d−1}_+: |z|/‖z‖₂ with z standard Gaussian.
pub fn sample_uniform_orthant<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<Direction> {
    if d < 2 {
        return Err(Error::Dimension(format!("orthant sampling needs d ≥ 2, got {d}")));
    }
    loop {
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal).abs());
        let norm = z.norm();
        if norm > 0.0 {
            return Ok(Direction { values: z / norm, in_orthant: true });
        }
    }
}

/// Surface area of the unit sphere S^{d−1} in ℝ^d.
pub fn sphere_area(d: usize) -> f64 {
    let half_d = d as f64 / 2.0;
    2.0 * std::f64::consts::PI.powf(half_d) / statrs::function::gamma::gamma(half_d)
}

/// Surface area of the non-negative orthant of S^{d−1}: total area / 2^d.
pub fn orthant_area(d: usize) -> f64 {
    sphere_area(d) / 2f64.powi(d as i32)
}
