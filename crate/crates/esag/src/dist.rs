//! The elliptically symmetric angular Gaussian distribution ESAG_{d−1}.
//!
//! An angular Gaussian is the radial projection y = z/‖z‖₂ of z ~ N_d(μ, V).
//! Identifiability is imposed through Vμ = μ and det(V) = 1, which leaves
//! 𝒫 = (d−1)(d+2)/2 free parameters. This module implements the unconstrained
//! parameterization (μ, γ) ∈ ℝ^𝒫: the shape matrix V is assembled
//! deterministically from μ and the shape vector γ via radial/angular
//! parameters, an orthonormal basis built from μ, and a product of plane
//! rotations. The density requires the moment integral
//! M_{d−1}(t) = (2π)^{−1/2} ∫₀^∞ x^{d−1} exp(−(x−t)²/2) dx,
//! evaluated here with adaptive Gauss–Kronrod quadrature.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::quad::adaptive_kronrod_segmented;
use crate::sphere::Direction;

/// Default relative tolerance for the M_{d−1} quadrature.
pub const DEFAULT_QUAD_TOL: f64 = 1e-8;

/// Locations with norm below this are rejected: the orthonormal basis needs a direction.
pub const MIN_LOCATION_NORM: f64 = 1e-12;

const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Location vector μ and unconstrained shape vector γ of ESAG_{d−1}.
#[derive(Debug, Clone, PartialEq)]
pub struct EsagParams {
    pub mu: DVector<f64>,
    pub gamma: DVector<f64>,
}

impl EsagParams {
    pub fn new(mu: DVector<f64>, gamma: DVector<f64>) -> Result<Self> {
        let d = mu.len();
        if d < 2 {
            return Err(Error::Dimension(format!("ESAG needs d ≥ 2, got {d}")));
        }
        if gamma.len() != gamma_len(d) {
            return Err(Error::Dimension(format!(
                "gamma has length {}, expected {} for d = {d}",
                gamma.len(),
                gamma_len(d)
            )));
        }
        if mu.iter().chain(gamma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Validation("parameters contain non-finite entries".into()));
        }
        Ok(Self { mu, gamma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Number of shape parameters for dimension `d`: (d−2)(d+1)/2.
pub fn gamma_len(d: usize) -> usize {
    if d < 3 {
        0
    } else {
        (d - 2) * (d + 1) / 2
    }
}

/// Radial and angular equivalents of γ: per group j, a radius r_j ≥ 0, a
/// longitude θ_j ∈ [−π, π), and j−1 latitudes φ̃_{j,k} ∈ [0, π].
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaParams {
    pub r: Vec<f64>,
    pub theta: Vec<f64>,
    pub phi_lat: Vec<f64>,
}

impl OmegaParams {
    /// Latitude angles of group `j` (1-based, j ≥ 2).
    pub fn phi_group(&self, j: usize) -> &[f64] {
        let start = (j - 2) * (j - 1) / 2;
        &self.phi_lat[start..start + (j - 1)]
    }
}

fn gamma_group_start(j: usize) -> usize {
    (j - 1) * (j + 2) / 2
}

/// Converts the flat shape vector γ into radial/angular form. Group j of γ
/// (length j+1) is a Cartesian point whose spherical coordinates are
/// (r_j, θ_j, φ̃_j); zero norms map to zero angles.
pub fn gamma_to_omega(gamma: &[f64], d: usize) -> Result<OmegaParams> {
    if gamma.len() != gamma_len(d) {
        return Err(Error::Dimension(format!(
            "gamma has length {}, expected {} for d = {d}",
            gamma.len(),
            gamma_len(d)
        )));
    }
    let groups = d.saturating_sub(2);
    let mut r = Vec::with_capacity(groups);
    let mut theta = Vec::with_capacity(groups);
    let mut phi_lat = Vec::new();

    for j in 1..=groups {
        let g = &gamma[gamma_group_start(j)..gamma_group_start(j) + j + 1];
        r.push(g.iter().map(|v| v * v).sum::<f64>().sqrt());

        // Longitude from the final coordinate pair; atan2(0, 0) = 0 matches the
        // zero-guard branch exactly.
        let (x, y) = (g[j - 1], g[j]);
        theta.push(if x == 0.0 && y == 0.0 { 0.0 } else { y.atan2(x) });

        for k in 1..j {
            let tail: f64 = g[k - 1..].iter().map(|v| v * v).sum();
            if tail == 0.0 {
                phi_lat.push(0.0);
            } else {
                phi_lat.push((g[k - 1] / tail.sqrt()).clamp(-1.0, 1.0).acos());
            }
        }
    }
    Ok(OmegaParams { r, theta, phi_lat })
}

/// Rebuilds γ from radial/angular parameters; inverse of [`gamma_to_omega`]
/// wherever all r_j > 0.
pub fn omega_to_gamma(omega: &OmegaParams, d: usize) -> Result<DVector<f64>> {
    let groups = d.saturating_sub(2);
    if omega.r.len() != groups || omega.theta.len() != groups {
        return Err(Error::Dimension(format!(
            "omega has {} groups, expected {} for d = {d}",
            omega.r.len(),
            groups
        )));
    }
    if omega.phi_lat.len() != groups.saturating_sub(1) * groups / 2 {
        return Err(Error::Dimension("latitude angle count does not match dimension".into()));
    }
    let mut gamma = Vec::with_capacity(gamma_len(d));
    for j in 1..=groups {
        let mut prefix = omega.r[j - 1];
        if j >= 2 {
            for &phi in omega.phi_group(j) {
                gamma.push(prefix * phi.cos());
                prefix *= phi.sin();
            }
        }
        gamma.push(prefix * omega.theta[j - 1].cos());
        gamma.push(prefix * omega.theta[j - 1].sin());
    }
    Ok(DVector::from_vec(gamma))
}

/// Orthonormal basis (ξ̃_1, …, ξ̃_d) determined by μ, with ξ̃_d = μ/‖μ‖₂.
/// A zero intermediate vector u_j falls back to the unit vector e_j.
pub fn build_basis(mu: &DVector<f64>) -> Result<DMatrix<f64>> {
    let d = mu.len();
    let norm = mu.norm();
    if !norm.is_finite() || norm < MIN_LOCATION_NORM {
        return Err(Error::DegenerateLocation(format!(
            "location norm {norm} is below {MIN_LOCATION_NORM}"
        )));
    }
    let mut basis = DMatrix::zeros(d, d);

    for j in 1..d {
        let mut u = DVector::zeros(d);
        if j == 1 {
            u[0] = -mu[1];
            u[1] = mu[0];
        } else {
            let head: f64 = mu.iter().take(j).map(|v| v * v).sum();
            for k in 0..j {
                u[k] = mu[k] * mu[j];
            }
            u[j] = -head;
        }
        let un = u.norm();
        if un == 0.0 {
            u[j - 1] = 1.0; // u_j = e_j (1-based)
            basis.set_column(j - 1, &u);
        } else {
            basis.set_column(j - 1, &(u / un));
        }
    }
    basis.set_column(d - 1, &(mu / norm));
    Ok(basis)
}

/// In-place left-multiplication by the plane rotation R*_{jk}(angle)
/// (1-based plane indices).
fn rotate_rows(m: &mut DMatrix<f64>, j: usize, k: usize, angle: f64) {
    let (c, s) = (angle.cos(), angle.sin());
    let (j, k) = (j - 1, k - 1);
    for col in 0..m.ncols() {
        let a = m[(j, col)];
        let b = m[(k, col)];
        m[(j, col)] = c * a - s * b;
        m[(k, col)] = s * a + c * b;
    }
}

/// The (d−1)×(d−1) rotation 𝓡_{d−1}: a product of (d−2)(d−1)/2 plane
/// rotations over the longitude and latitude angles, assembled in the fixed
/// group order. Always a proper rotation (det = +1).
pub fn rotation_matrix(omega: &OmegaParams, d: usize) -> Result<DMatrix<f64>> {
    if d < 2 {
        return Err(Error::Dimension(format!("rotation needs d ≥ 2, got {d}")));
    }
    let groups = d.saturating_sub(2);
    if omega.r.len() != groups {
        return Err(Error::Dimension("omega group count does not match dimension".into()));
    }
    let mut m = DMatrix::identity(d - 1, d - 1);
    if groups == 0 {
        return Ok(m);
    }
    rotate_rows(&mut m, 1, 2, omega.theta[0]);
    for g in 2..=groups {
        // Group g contributes R*_{12}(θ_g) · R*_{23}(φ_{g,g−1}) ⋯ R*_{g,g+1}(φ_{g,1});
        // innermost factor applies first.
        let phis = omega.phi_group(g);
        for j in (1..g).rev() {
            rotate_rows(&mut m, j + 1, j + 2, phis[g - j - 1]);
        }
        rotate_rows(&mut m, 1, 2, omega.theta[g - 1]);
    }
    Ok(m)
}

/// Spectral form of the shape matrix V: eigenvalues and eigenvectors stored in
/// the column order Ξ = (ξ_d, ξ_{d−1}, …, ξ_1), so `lambda[0] = 1` and
/// `xi` column 0 is μ/‖μ‖₂.
#[derive(Debug, Clone)]
pub struct EsagShape {
    pub lambda: Vec<f64>,
    pub xi: DMatrix<f64>,
}

impl EsagShape {
    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    /// Dense V = Σ_j λ_j ξ_j ξ_j'.
    pub fn v(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut v = DMatrix::zeros(d, d);
        for c in 0..d {
            let xi = self.xi.column(c);
            for a in 0..d {
                for b in 0..d {
                    v[(a, b)] += self.lambda[c] * xi[a] * xi[b];
                }
            }
        }
        v
    }

    /// Quadratic form y'V⁻¹y through the spectral inverse Σ_j λ_j⁻¹ ξ_j ξ_j'.
    pub fn inv_quadratic(&self, y: &DVector<f64>) -> f64 {
        let mut q = 0.0;
        for c in 0..self.dim() {
            let proj = self.xi.column(c).dot(y);
            q += proj * proj / self.lambda[c];
        }
        q
    }

    /// Factor F = Ξ diag(√λ) with FF' = V, for Gaussian sampling.
    pub fn sqrt_factor(&self) -> DMatrix<f64> {
        let mut f = self.xi.clone();
        for c in 0..self.dim() {
            let s = self.lambda[c].sqrt();
            f.column_mut(c).scale_mut(s);
        }
        f
    }
}

/// Assembles the spectral shape from (μ, γ): eigenvalues from the radial
/// parameters, eigenvectors by rotating the μ-basis. The result satisfies
/// Vμ = μ, det(V) = ∏λ_j = 1, and λ paired with ξ_d equal to 1.
pub fn assemble_shape(params: &EsagParams) -> Result<EsagShape> {
    let d = params.dim();
    let omega = gamma_to_omega(params.gamma.as_slice(), d)?;
    let basis = build_basis(&params.mu)?;

    // ln λ_1 = −(d−1)⁻¹ Σ_j (d−j−1) ln(r_j + 1); λ_{j+1}/λ_j = r_j + 1.
    let mut lambda_asc = vec![1.0; d - 1];
    if d >= 3 {
        let ln1p: Vec<f64> = omega.r.iter().map(|r| r.ln_1p()).collect();
        let ln_lambda1 = -ln1p
            .iter()
            .enumerate()
            .map(|(i, l)| (d - i - 2) as f64 * l)
            .sum::<f64>()
            / (d - 1) as f64;
        let mut acc = ln_lambda1;
        lambda_asc[0] = acc.exp();
        for j in 1..d - 1 {
            acc += ln1p[j - 1];
            lambda_asc[j] = acc.exp();
        }
    }

    let rot = rotation_matrix(&omega, d)?;
    let rotated = basis.columns(0, d - 1) * &rot;

    let mut xi = DMatrix::zeros(d, d);
    let mut lambda = vec![0.0; d];
    xi.set_column(0, &basis.column(d - 1));
    lambda[0] = 1.0;
    for j in 1..d {
        // Column j holds ξ_{d−j} with eigenvalue λ_{d−j}.
        xi.set_column(j, &rotated.column(d - 1 - j));
        lambda[j] = lambda_asc[d - 1 - j];
    }
    Ok(EsagShape { lambda, xi })
}

/// log M_{d−1}(t): the angular Gaussian moment integral in log space, finite
/// for any t. For t < 0 the Gaussian factor is tilted out of the integrand to
/// avoid underflow.
pub fn log_m_function(t: f64, d: usize, tol: f64) -> Result<f64> {
    if d < 2 {
        return Err(Error::Dimension(format!("M_{{d−1}} needs d ≥ 2, got {d}")));
    }
    if !(tol > 0.0) {
        return Err(Error::Validation(format!("quadrature tolerance must be positive, got {tol}")));
    }
    let p = (d - 1) as i32;
    let value = if t >= 0.0 {
        // Seed segment boundaries around the Gaussian bump at x = t so the
        // refinement starts where the mass is.
        let breaks = [0.0, (t - 8.0).max(0.0), t + 8.0, t + 40.0];
        let f = |x: f64| x.powi(p) * (-(x - t) * (x - t) / 2.0).exp();
        adaptive_kronrod_segmented(f, &breaks, tol, 1e-300, 512)?.value
    } else {
        // M = (2π)^{−1/2} e^{−t²/2} ∫₀^∞ x^{d−1} e^{−x²/2 + tx} dx; the tilted
        // integrand is bounded by x^{d−1}e^{−x²/2}, negligible beyond 40.
        let f = |x: f64| x.powi(p) * (-x * x / 2.0 + t * x).exp();
        adaptive_kronrod_segmented(f, &[0.0, 8.0, 40.0], tol, 1e-300, 512)?.value
    };
    if !(value > 0.0 && value.is_finite()) {
        return Err(Error::Numerical(format!(
            "moment integral evaluated to {value} at t = {t}, d = {d}"
        )));
    }
    let mut log_m = value.ln() - 0.5 * LN_2PI;
    if t < 0.0 {
        log_m -= t * t / 2.0;
    }
    Ok(log_m)
}

/// M_{d−1}(t) itself. May underflow to zero for very negative t; use
/// [`log_m_function`] inside log-density computations.
pub fn m_function(t: f64, d: usize, tol: f64) -> Result<f64> {
    Ok(log_m_function(t, d, tol)?.exp())
}

/// Log-density of ESAG_{d−1}(μ, V) at a point on the sphere, given the
/// assembled shape. Hot path shared by the truncated density and the
/// likelihood.
pub fn esag_logpdf_with_shape(
    y: &DVector<f64>,
    mu: &DVector<f64>,
    shape: &EsagShape,
    tol: f64,
) -> Result<f64> {
    let d = mu.len();
    if y.len() != d {
        return Err(Error::Dimension(format!(
            "direction has dimension {}, parameters have {d}",
            y.len()
        )));
    }
    let q = shape.inv_quadratic(y);
    if !(q > 0.0) {
        return Err(Error::Numerical(format!("quadratic form y'V⁻¹y = {q} is not positive")));
    }
    let t = y.dot(mu) / q.sqrt();
    let log_m = log_m_function(t, d, tol)?;
    Ok(-0.5 * (d - 1) as f64 * LN_2PI - 0.5 * d as f64 * q.ln()
        + 0.5 * (t * t - mu.norm_squared())
        + log_m)
}

/// Log-density of ESAG_{d−1} at `y` under `params`.
pub fn esag_logpdf(y: &Direction, params: &EsagParams) -> Result<f64> {
    let shape = assemble_shape(params)?;
    esag_logpdf_with_shape(y.values(), &params.mu, &shape, DEFAULT_QUAD_TOL)
}

/// Draws `n` directions: each is z/‖z‖₂ with z ~ N_d(μ, V). The shape is
/// factorized once per call.
pub fn esag_sample<R: Rng + ?Sized>(
    params: &EsagParams,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Direction>> {
    let shape = assemble_shape(params)?;
    let factor = shape.sqrt_factor();
    let d = params.dim();
    let mut out = Vec::with_capacity(n);
    let mut w = DVector::zeros(d);
    for _ in 0..n {
        loop {
            for k in 0..d {
                w[k] = rng.sample::<f64, _>(StandardNormal);
            }
            let z = &params.mu + &factor * &w;
            if z.norm() > 0.0 {
                out.push(Direction::from_unnormalized(z)?);
                break;
            }
        }
    }
    Ok(out)
}
