//! Matérn 3/2 correlation and the matrix-variate linear model of
//! coregionalization (LMC) for d correlated spatial fields.
//!
//! H is the d×n matrix of latent effects (column i belongs to site i). The LMC
//! writes H = C G' for d independent fields g_j ~ N(0, R_j), so the density is
//! evaluated through rows of C⁻¹ and Cholesky solves against the per-component
//! correlation matrices — R_j⁻¹ is never formed explicitly.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use crate::error::{Error, Result};
use crate::truncated::fill_standard_normal;

const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Base diagonal jitter for correlation factorizations.
pub const DEFAULT_JITTER: f64 = 1e-10;

/// Jitter ceiling: escalation stops here and factorization failure is reported.
pub const MAX_JITTER: f64 = 1e-6;

/// Determinant threshold below which a coregionalization matrix is treated as singular.
pub const SINGULAR_DET_TOL: f64 = 1e-12;

/// Planar locations with a cached pairwise distance matrix.
#[derive(Debug, Clone)]
pub struct SiteSet {
    coords: Vec<[f64; 2]>,
    distances: DMatrix<f64>,
}

impl SiteSet {
    pub fn new(coords: Vec<[f64; 2]>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Validation("site set must be non-empty".into()));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("site coordinates contain non-finite values".into()));
        }
        let n = coords.len();
        let distances = DMatrix::from_fn(n, n, |i, k| dist(coords[i], coords[k]));
        Ok(Self { coords, distances })
    }

    pub fn n(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn distances(&self) -> &DMatrix<f64> {
        &self.distances
    }

    /// Cross distances: rows are `self` sites, columns are `other` sites.
    pub fn cross_distances(&self, other: &SiteSet) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), other.n(), |i, k| dist(self.coords[i], other.coords[k]))
    }

    pub fn max_distance(&self) -> f64 {
        self.distances.iter().fold(0.0, |acc, v| acc.max(*v))
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Matérn 3/2 correlation: (1 + √3 h/φ) · exp(−√3 h/φ).
pub fn matern32(h: f64, phi: f64) -> f64 {
    let x = 3f64.sqrt() * h / phi;
    (1.0 + x) * (-x).exp()
}

/// Coregionalization coefficients C (d×d, invertible) and positive spatial
/// ranges φ, one per component field.
#[derive(Debug, Clone, PartialEq)]
pub struct LmcParams {
    pub c: DMatrix<f64>,
    pub phi: DVector<f64>,
}

impl LmcParams {
    pub fn new(c: DMatrix<f64>, phi: DVector<f64>) -> Result<Self> {
        if !c.is_square() || c.nrows() != phi.len() {
            return Err(Error::Dimension(format!(
                "C is {}×{} with {} ranges; expected square d×d and d ranges",
                c.nrows(),
                c.ncols(),
                phi.len()
            )));
        }
        if phi.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::Validation("all spatial ranges must be positive".into()));
        }
        if c.determinant().abs() <= SINGULAR_DET_TOL {
            return Err(Error::Validation(
                "coregionalization matrix is singular (|det C| below tolerance)".into(),
            ));
        }
        Ok(Self { c, phi })
    }

    pub fn dim(&self) -> usize {
        self.phi.len()
    }
}

/// Latent field matrix: d rows (components), one column per site.
pub type LatentField = DMatrix<f64>;

/// A factorized spatial correlation matrix with the jitter that made the
/// Cholesky succeed.
#[derive(Debug, Clone)]
pub struct CorrelationFactor {
    pub corr: DMatrix<f64>,
    pub chol: Cholesky<f64, Dyn>,
    pub lower: DMatrix<f64>,
    pub log_det: f64,
    pub jitter: f64,
}

/// Builds R[i,k] = matern32(|s_i − s_k|, φ) + jitter·1{i=k} and factorizes it,
/// escalating the jitter ×10 up to [`MAX_JITTER`] on failure.
pub fn correlation_matrix(sites: &SiteSet, phi: f64, jitter: f64) -> Result<CorrelationFactor> {
    if !(phi > 0.0) {
        return Err(Error::Validation(format!("spatial range must be positive, got {phi}")));
    }
    let n = sites.n();
    let base = DMatrix::from_fn(n, n, |i, k| matern32(sites.distances()[(i, k)], phi));
    let mut jit = jitter.max(0.0);
    loop {
        let mut r = base.clone();
        for i in 0..n {
            r[(i, i)] += jit;
        }
        if let Some(chol) = Cholesky::new(r.clone()) {
            let lower = chol.l();
            let log_det = 2.0 * lower.diagonal().iter().map(|v| v.ln()).sum::<f64>();
            return Ok(CorrelationFactor { corr: r, chol, lower, log_det, jitter: jit });
        }
        jit = if jit == 0.0 { DEFAULT_JITTER } else { jit * 10.0 };
        if jit > MAX_JITTER {
            return Err(Error::Numerical(format!(
                "correlation matrix factorization failed for range {phi} even with jitter {MAX_JITTER}"
            )));
        }
    }
}

/// Factors for all d component fields.
pub fn component_factors(
    sites: &SiteSet,
    phi: &DVector<f64>,
    jitter: f64,
) -> Result<Vec<CorrelationFactor>> {
    phi.iter().map(|p| correlation_matrix(sites, *p, jitter)).collect()
}

/// Log-density of the matrix-variate LMC at H, using rows of C⁻¹ and cached
/// Cholesky solves.
pub fn lmc_logpdf(h: &LatentField, params: &LmcParams, factors: &[CorrelationFactor]) -> Result<f64> {
    let d = params.dim();
    let n = h.ncols();
    if h.nrows() != d || factors.len() != d {
        return Err(Error::Dimension(format!(
            "H is {}×{}, expected {d} rows and {d} correlation factors",
            h.nrows(),
            n
        )));
    }
    if factors.iter().any(|f| f.corr.nrows() != n) {
        return Err(Error::Dimension("correlation factor size does not match H columns".into()));
    }
    let det_c = params.c.determinant().abs();
    if det_c <= SINGULAR_DET_TOL {
        return Err(Error::Validation("coregionalization matrix is singular".into()));
    }
    let c_inv = params
        .c
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Validation("coregionalization matrix is singular".into()))?;

    let mut quad = 0.0;
    for j in 0..d {
        // a_j = (row j of C⁻¹) · H, the recovered component field g_j'.
        let a = DVector::from_fn(n, |i, _| (0..d).map(|k| c_inv[(j, k)] * h[(k, i)]).sum());
        let solved = factors[j].chol.solve(&a);
        quad += a.dot(&solved);
    }
    let log_det_r: f64 = factors.iter().map(|f| f.log_det).sum();
    Ok(-0.5 * quad - 0.5 * (n * d) as f64 * LN_2PI - n as f64 * det_c.ln() - 0.5 * log_det_r)
}

/// Convenience wrapper that builds the correlation factors from the sites.
pub fn lmc_logpdf_at(h: &LatentField, params: &LmcParams, sites: &SiteSet) -> Result<f64> {
    let factors = component_factors(sites, &params.phi, DEFAULT_JITTER)?;
    lmc_logpdf(h, params, &factors)
}

/// Draws H = Σ_j c_j g_j' with g_j ~ N(0, R_j) independent across components.
pub fn lmc_sample<R: Rng + ?Sized>(
    params: &LmcParams,
    factors: &[CorrelationFactor],
    rng: &mut R,
) -> Result<LatentField> {
    let d = params.dim();
    if factors.len() != d {
        return Err(Error::Dimension("one correlation factor per component is required".into()));
    }
    let n = factors[0].corr.nrows();
    let mut h = DMatrix::zeros(d, n);
    let mut w = vec![0.0; n];
    for j in 0..d {
        fill_standard_normal(&mut w, rng);
        let g = &factors[j].lower * DVector::from_column_slice(&w);
        for l in 0..d {
            let c_lj = params.c[(l, j)];
            for i in 0..n {
                h[(l, i)] += c_lj * g[i];
            }
        }
    }
    Ok(h)
}

/// Conditional mean E[η(s*) | H] of the jointly Gaussian stacked field at new
/// sites. Because C is invertible, the component fields are recovered exactly
/// (g_j' = row j of C⁻¹H) and kriged independently.
pub fn predict_field(
    h: &LatentField,
    params: &LmcParams,
    sites: &SiteSet,
    factors: &[CorrelationFactor],
    new_sites: &SiteSet,
) -> Result<LatentField> {
    let d = params.dim();
    let n = sites.n();
    if h.nrows() != d || h.ncols() != n || factors.len() != d {
        return Err(Error::Dimension("field, sites, and factors are inconsistent".into()));
    }
    let c_inv = params
        .c
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Validation("coregionalization matrix is singular".into()))?;
    let cross = new_sites.cross_distances(sites);
    let mut out = DMatrix::zeros(d, new_sites.n());
    for j in 0..d {
        let g = DVector::from_fn(n, |i, _| (0..d).map(|k| c_inv[(j, k)] * h[(k, i)]).sum());
        let u = factors[j].chol.solve(&g);
        let k_j = cross.map(|hd| matern32(hd, params.phi[j]));
        let pred = &k_j * &u;
        for l in 0..d {
            let c_lj = params.c[(l, j)];
            for i in 0..new_sites.n() {
                out[(l, i)] += c_lj * pred[i];
            }
        }
    }
    Ok(out)
}

/// Dense covariance of the stacked vector vec(H): Σ_j R_j ⊗ c_j c_j'. Used by
/// tests and the brute-force oracles; quadratic in nd.
pub fn stacked_covariance(params: &LmcParams, factors: &[CorrelationFactor]) -> DMatrix<f64> {
    let d = params.dim();
    let n = factors[0].corr.nrows();
    let mut sigma = DMatrix::zeros(n * d, n * d);
    for j in 0..d {
        let cj = params.c.column(j);
        for i in 0..n {
            for k in 0..n {
                let r = factors[j].corr[(i, k)];
                for l in 0..d {
                    for m in 0..d {
                        sigma[(i * d + l, k * d + m)] += r * cj[l] * cj[m];
                    }
                }
            }
        }
    }
    sigma
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_sites(n: usize, rng: &mut ChaCha8Rng) -> SiteSet {
        SiteSet::new((0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect()).unwrap()
    }

    fn random_lmc(d: usize, rng: &mut ChaCha8Rng) -> LmcParams {
        loop {
            let c = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let phi = DVector::from_fn(d, |_, _| 0.1 + 0.3 * rng.gen::<f64>());
            if let Ok(p) = LmcParams::new(c, phi) {
                return p;
            }
        }
    }

    #[test]
    fn matern_values() {
        assert_eq!(matern32(0.0, 0.5), 1.0);
        let s3 = 3f64.sqrt();
        assert_relative_eq!(matern32(1.0, 1.0), (1.0 + s3) * (-s3).exp(), epsilon = 1e-15);
        assert!((matern32(1.0, 1.0) - 0.48335).abs() < 1e-5);
        let mut prev = 1.0;
        for i in 1..200 {
            let v = matern32(i as f64 * 0.1, 0.7);
            assert!(v < prev && v > 0.0);
            prev = v;
        }
        assert!(matern32(1e6, 0.7) < 1e-12);
    }

    #[test]
    fn correlation_matrix_edge_cases() {
        let single = SiteSet::new(vec![[0.3, 0.4]]).unwrap();
        let f = correlation_matrix(&single, 0.2, 1e-10).unwrap();
        assert_abs_diff_eq!(f.corr[(0, 0)], 1.0 + 1e-10, epsilon = 1e-16);

        // Coincident sites: off-diagonal exactly 1, factorizable through jitter.
        let dup = SiteSet::new(vec![[0.1, 0.1], [0.1, 0.1]]).unwrap();
        let f = correlation_matrix(&dup, 0.2, 1e-10).unwrap();
        assert_eq!(f.corr[(0, 1)], 1.0);
        assert!(f.jitter >= 1e-10);
    }

    #[test]
    fn log_det_matches_eigenvalue_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let sites = random_sites(20, &mut rng);
        let f = correlation_matrix(&sites, 0.3, 1e-10).unwrap();
        let eig = f.corr.clone().symmetric_eigen();
        let oracle: f64 = eig.eigenvalues.iter().map(|v| v.ln()).sum();
        assert_abs_diff_eq!(f.log_det, oracle, epsilon = 1e-8);
    }

    #[test]
    fn lmc_collapses_to_univariate_standard_normal() {
        let sites = SiteSet::new(vec![[0.0, 0.0]]).unwrap();
        let params =
            LmcParams::new(DMatrix::identity(1, 1), DVector::from_row_slice(&[1.0])).unwrap();
        let factors = component_factors(&sites, &params.phi, 0.0).unwrap();
        let h = DMatrix::from_row_slice(1, 1, &[0.7]);
        let lp = lmc_logpdf(&h, &params, &factors).unwrap();
        let expected = -0.5 * LN_2PI - 0.5 * 0.7 * 0.7;
        assert_abs_diff_eq!(lp, expected, epsilon = 1e-12);
    }

    #[test]
    fn lmc_zero_field_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let sites = random_sites(6, &mut rng);
        let params = random_lmc(3, &mut rng);
        let factors = component_factors(&sites, &params.phi, DEFAULT_JITTER).unwrap();
        let h = DMatrix::zeros(3, 6);
        let lp = lmc_logpdf(&h, &params, &factors).unwrap();
        let expected = -0.5 * 18.0 * LN_2PI - 6.0 * params.c.determinant().abs().ln()
            - 0.5 * factors.iter().map(|f| f.log_det).sum::<f64>();
        assert_abs_diff_eq!(lp, expected, epsilon = 1e-10);
    }

    #[test]
    fn matrix_variate_density_matches_stacked_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let n = 2 + (rng.gen::<u32>() % 5) as usize;
            let d = 2 + (rng.gen::<u32>() % 2) as usize;
            let sites = random_sites(n, &mut rng);
            let params = random_lmc(d, &mut rng);
            let factors = component_factors(&sites, &params.phi, DEFAULT_JITTER).unwrap();
            let h = DMatrix::from_fn(d, n, |_, _| rng.sample::<f64, _>(StandardNormal));

            let lp = lmc_logpdf(&h, &params, &factors).unwrap();

            // Dense oracle on the stacked vector.
            let sigma = stacked_covariance(&params, &factors);
            let chol = Cholesky::new(sigma).unwrap();
            let stacked = DVector::from_column_slice(h.as_slice());
            let solved = chol.solve(&stacked);
            let log_det =
                2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let oracle = -0.5 * stacked.dot(&solved)
                - 0.5 * (n * d) as f64 * LN_2PI
                - 0.5 * log_det;
            assert_abs_diff_eq!(lp, oracle, epsilon = 1e-8);
        }
    }

    #[test]
    fn diagonal_coregionalization_gives_independent_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let sites = random_sites(4, &mut rng);
        let c = DMatrix::from_diagonal(&DVector::from_row_slice(&[1.5, 0.4]));
        let params = LmcParams::new(c, DVector::from_row_slice(&[0.2, 0.3])).unwrap();
        let factors = component_factors(&sites, &params.phi, DEFAULT_JITTER).unwrap();

        let reps = 20_000;
        let mut sum11 = 0.0;
        let mut sum22 = 0.0;
        let mut cross = 0.0;
        for _ in 0..reps {
            let h = lmc_sample(&params, &factors, &mut rng).unwrap();
            sum11 += h[(0, 0)] * h[(0, 0)];
            sum22 += h[(1, 0)] * h[(1, 0)];
            cross += h[(0, 0)] * h[(1, 0)];
        }
        assert!((sum11 / reps as f64 - 1.5f64.powi(2)).abs() < 0.1);
        assert!((sum22 / reps as f64 - 0.4f64.powi(2)).abs() < 0.01);
        assert!((cross / reps as f64).abs() < 0.02);
    }

    #[test]
    fn sample_covariance_matches_kronecker_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let sites = random_sites(4, &mut rng);
        let params = random_lmc(2, &mut rng);
        let factors = component_factors(&sites, &params.phi, DEFAULT_JITTER).unwrap();
        let sigma = stacked_covariance(&params, &factors);

        let reps = 10_000;
        let nd = 8;
        let mut acc = DMatrix::zeros(nd, nd);
        for _ in 0..reps {
            let h = lmc_sample(&params, &factors, &mut rng).unwrap();
            let v = DVector::from_column_slice(h.as_slice());
            acc += &v * v.transpose();
        }
        acc /= reps as f64;
        let rel = (&acc - &sigma).norm() / sigma.norm();
        assert!(rel < 0.05, "relative Frobenius error {rel}");
    }

    #[test]
    fn tiny_range_decorrelates_sites() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let sites = random_sites(5, &mut rng);
        let min_dist = (0..5)
            .flat_map(|i| (0..5).filter(move |k| *k != i).map(move |k| (i, k)))
            .map(|(i, k)| sites.distances()[(i, k)])
            .fold(f64::INFINITY, f64::min);
        let phi = 1e-6 * min_dist;
        let f = correlation_matrix(&sites, phi, DEFAULT_JITTER).unwrap();
        for i in 0..5 {
            for k in 0..5 {
                if i != k {
                    assert!(f.corr[(i, k)].abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn prediction_interpolates_and_decays() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let sites = random_sites(6, &mut rng);
        let params = random_lmc(2, &mut rng);
        let factors = component_factors(&sites, &params.phi, DEFAULT_JITTER).unwrap();
        let h = lmc_sample(&params, &factors, &mut rng).unwrap();

        // Coincident site: reproduces the observed column.
        let at_obs = SiteSet::new(vec![sites.coords()[2]]).unwrap();
        let pred = predict_field(&h, &params, &sites, &factors, &at_obs).unwrap();
        for l in 0..2 {
            assert_abs_diff_eq!(pred[(l, 0)], h[(l, 2)], epsilon = 1e-8);
        }

        // Far site: prior mean.
        let far = SiteSet::new(vec![[1e6, 1e6]]).unwrap();
        let pred = predict_field(&h, &params, &sites, &factors, &far).unwrap();
        assert!(pred.amax() < 1e-10);
    }

    #[test]
    fn prediction_matches_dense_conditional_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let sites = random_sites(5, &mut rng);
        let new_sites = random_sites(3, &mut rng);
        let params = random_lmc(2, &mut rng);
        let factors = component_factors(&sites, &params.phi, DEFAULT_JITTER).unwrap();
        let h = lmc_sample(&params, &factors, &mut rng).unwrap();

        let pred = predict_field(&h, &params, &sites, &factors, &new_sites).unwrap();

        // Dense joint-Gaussian oracle: cross-covariance (no jitter) against the
        // jittered observed covariance.
        let d = 2;
        let (n, q) = (5, 3);
        let sigma_oo = stacked_covariance(&params, &factors);
        let cross_d = new_sites.cross_distances(&sites);
        let mut sigma_no: DMatrix<f64> = DMatrix::zeros(q * d, n * d);
        for j in 0..d {
            let cj = params.c.column(j);
            for i in 0..q {
                for k in 0..n {
                    let r = matern32(cross_d[(i, k)], params.phi[j]);
                    for l in 0..d {
                        for m in 0..d {
                            sigma_no[(i * d + l, k * d + m)] += r * cj[l] * cj[m];
                        }
                    }
                }
            }
        }
        let stacked = DVector::from_column_slice(h.as_slice());
        let solved = Cholesky::new(sigma_oo).unwrap().solve(&stacked);
        let cond: DVector<f64> = &sigma_no * solved;
        for i in 0..q {
            for l in 0..d {
                assert_abs_diff_eq!(pred[(l, i)], cond[i * d + l], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn density_depends_on_c_only_through_cct_in_separable_case() {
        // With equal ranges the component correlation matrices coincide and the
        // density is a function of CC'.
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let sites = random_sites(5, &mut rng);
        let c = DMatrix::from_fn(3, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let phi = DVector::from_row_slice(&[0.25, 0.25, 0.25]);
        let params = LmcParams::new(c.clone(), phi.clone()).unwrap();
        let factors = component_factors(&sites, &params.phi, DEFAULT_JITTER).unwrap();
        let h = lmc_sample(&params, &factors, &mut rng).unwrap();

        // Orthogonal right-multiplication preserves CC'.
        let raw = DMatrix::from_fn(3, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let qmat = raw.qr().q();
        let rotated = LmcParams::new(&c * &qmat, phi).unwrap();

        let lp1 = lmc_logpdf(&h, &params, &factors).unwrap();
        let lp2 = lmc_logpdf(&h, &rotated, &factors).unwrap();
        assert_abs_diff_eq!(lp1, lp2, epsilon = 1e-8);
    }

    #[test]
    fn mean_log_density_matches_gaussian_expectation() {
        // E[log p(H)] = −(nd/2)·ln 2π − n·ln|det C| − ½Σ log det R_j − nd/2.
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let sites = random_sites(4, &mut rng);
        let params = random_lmc(2, &mut rng);
        let factors = component_factors(&sites, &params.phi, DEFAULT_JITTER).unwrap();
        let nd = 8.0;
        let expected = -0.5 * nd * LN_2PI
            - 4.0 * params.c.determinant().abs().ln()
            - 0.5 * factors.iter().map(|f| f.log_det).sum::<f64>()
            - 0.5 * nd;

        let reps = 10_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..reps {
            let h = lmc_sample(&params, &factors, &mut rng).unwrap();
            let lp = lmc_logpdf(&h, &params, &factors).unwrap();
            sum += lp;
            sumsq += lp * lp;
        }
        let mean = sum / reps as f64;
        let se = ((sumsq / reps as f64 - mean * mean) / reps as f64).sqrt();
        assert!((mean - expected).abs() < 3.0 * se, "mean {mean}, expected {expected}, se {se}");
    }
}
