//! Compositional prediction and model scoring.
//!
//! A composition prediction is E(y²) under the fitted directional law. Two
//! estimators are provided: Monte Carlo integration of y²·pdf over uniform
//! orthant draws (renormalized onto the simplex, which absorbs the orthant
//! surface-area constant and the truncation constant), and the spectral
//! estimator Ξ̂²·mean(K̂²) built from posterior samples. Scoring uses the
//! logarithmic score (negative log predictive density, lower is better) and
//! the chi-square compositional distance.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};

use crate::dist::{assemble_shape, esag_logpdf_with_shape, EsagParams, DEFAULT_QUAD_TOL};
use crate::error::{Error, Result};
use crate::mcmc::{ChainOutput, StateLayout};
use crate::model::{linear_predictor, softplus, DataModel, Dataset, ModelState};
use crate::spatial::{component_factors, predict_field, LmcParams, SiteSet, DEFAULT_JITTER};
use crate::sphere::{sample_uniform_orthant, square_transform, Composition, Direction};
use crate::truncated::{esagplus_logpdf_with_constant, orthant_mass_with, substream_seed, LOG_ZERO};

/// A predicted composition with its Monte Carlo precision.
#[derive(Debug, Clone)]
pub struct CompositionPrediction {
    pub mean_composition: Composition,
    pub normalized_mean_direction: Direction,
    pub mc_draws: usize,
    pub std_error: Vec<f64>,
}

fn composition_from_weighted<R: Rng + ?Sized>(
    params: &EsagParams,
    m: usize,
    rng: &mut R,
    log_constant: f64,
) -> Result<CompositionPrediction> {
    if m == 0 {
        return Err(Error::Validation("composition prediction needs at least one draw".into()));
    }
    let d = params.dim();
    let shape = assemble_shape(params)?;
    let mut raw = vec![0.0; d];
    let mut raw_sq = vec![0.0; d];
    for _ in 0..m {
        let y = sample_uniform_orthant(d, rng)?;
        let w = (esag_logpdf_with_shape(y.values(), &params.mu, &shape, DEFAULT_QUAD_TOL)?
            - log_constant)
            .exp();
        for k in 0..d {
            let v = y.values()[k] * y.values()[k] * w;
            raw[k] += v;
            raw_sq[k] += v * v;
        }
    }
    let total: f64 = raw.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Numerical(format!(
            "all composition weights vanished (total {total}); parameters place no mass \
             near the orthant"
        )));
    }
    let std_error = (0..d)
        .map(|k| {
            let mean_k = raw[k] / m as f64;
            let var_k = (raw_sq[k] / m as f64 - mean_k * mean_k).max(0.0);
            (var_k / m as f64).sqrt() * m as f64 / total
        })
        .collect();
    let mean_composition =
        Composition::new(DVector::from_iterator(d, raw.iter().map(|v| v / total)))?;
    let normalized_mean_direction = Direction::from_unnormalized(params.mu.clone())?;
    Ok(CompositionPrediction { mean_composition, normalized_mean_direction, mc_draws: m, std_error })
}

/// Monte Carlo estimator of E(y²) under ESAG⁺: average y²·pdf⁺ over uniform
/// orthant draws, renormalized to the simplex. The truncation constant is
/// estimated from the same stream and cancels in the renormalization; its
/// degenerate case still surfaces as an error.
pub fn predict_composition_mc<R: Rng + ?Sized>(
    params: &EsagParams,
    m: usize,
    rng: &mut R,
) -> Result<CompositionPrediction> {
    let shape = assemble_shape(params)?;
    let mass = orthant_mass_with(&params.mu.as_slice().to_vec(), &shape, m.max(1), rng)?;
    composition_from_weighted(params, m, rng, mass.constant.ln())
}

/// Same estimator with the plain (non-truncated) density, for predictions from
/// an ESAG fit whose location may sit far outside the orthant. Renormalization
/// makes the mean composition identical to the truncated variant wherever both
/// are defined.
pub fn predict_composition_plain<R: Rng + ?Sized>(
    params: &EsagParams,
    m: usize,
    rng: &mut R,
) -> Result<CompositionPrediction> {
    composition_from_weighted(params, m, rng, 0.0)
}

/// Spectral estimator: E(y²) = Ξ̂²·E(K̂²) with K̂ = Ξ̂'y over provided samples.
/// The output sums to one automatically because Ξ̂ is orthonormal and the
/// samples are unit vectors.
pub fn predict_composition_xi(
    params: &EsagParams,
    samples: &[Direction],
) -> Result<CompositionPrediction> {
    if samples.is_empty() {
        return Err(Error::Validation("spectral estimator needs a non-empty sample set".into()));
    }
    let d = params.dim();
    let shape = assemble_shape(params)?;
    let m = samples.len();
    let mut mean_k2 = DVector::zeros(d);
    let mut mean_k2_sq = DVector::zeros(d);
    for y in samples {
        if y.len() != d {
            return Err(Error::Dimension("sample dimension does not match parameters".into()));
        }
        for c in 0..d {
            let k = shape.xi.column(c).dot(y.values());
            let k2 = k * k;
            mean_k2[c] += k2;
            mean_k2_sq[c] += k2 * k2;
        }
    }
    mean_k2 /= m as f64;
    mean_k2_sq /= m as f64;

    let xi2 = shape.xi.map(|v| v * v);
    let pred = &xi2 * &mean_k2;
    let var_k2 = DVector::from_fn(d, |c, _| (mean_k2_sq[c] - mean_k2[c] * mean_k2[c]).max(0.0));
    let std_error: Vec<f64> = (0..d)
        .map(|l| {
            let var: f64 = (0..d).map(|c| xi2[(l, c)] * xi2[(l, c)] * var_k2[c]).sum();
            (var / m as f64).sqrt()
        })
        .collect();

    Ok(CompositionPrediction {
        mean_composition: Composition::new(pred)?,
        normalized_mean_direction: Direction::from_unnormalized(params.mu.clone())?,
        mc_draws: m,
        std_error,
    })
}

/// Logarithmic score of one observation: the negative log density, lower is
/// better. Outside-orthant observations under the truncated model score the
/// negated log-zero sentinel.
pub fn log_score<R: Rng + ?Sized>(
    y: &Direction,
    params: &EsagParams,
    mode: DataModel,
    mc_draws: usize,
    rng: &mut R,
) -> Result<f64> {
    let lp = match mode {
        DataModel::Esag => crate::dist::esag_logpdf(y, params)?,
        DataModel::EsagPlus => crate::truncated::esagplus_logpdf(y, params, mc_draws, rng)?,
    };
    Ok(-lp)
}

/// Chi-square compositional distance: sqrt(Σ (u−v)²/(u+v)), with 0/0 terms
/// contributing zero. Symmetric, zero iff u = v, permutation invariant.
pub fn csd(u: &Composition, v: &Composition) -> f64 {
    u.values()
        .iter()
        .zip(v.values().iter())
        .map(|(a, b)| {
            let denom = a + b;
            if denom == 0.0 {
                0.0
            } else {
                (a - b) * (a - b) / denom
            }
        })
        .sum::<f64>()
        .sqrt()
}

/// Retained draws, possibly merged across chains.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub layout: StateLayout,
    pub states: Vec<ModelState>,
}

impl PosteriorDraws {
    pub fn from_outputs(outputs: &[&ChainOutput]) -> Result<Self> {
        let first = outputs
            .first()
            .ok_or_else(|| Error::Validation("need at least one fitted chain".into()))?;
        let layout = first.layout.clone();
        if outputs.iter().any(|o| o.layout != layout) {
            return Err(Error::Dimension("chains have different state layouts".into()));
        }
        let mut states = Vec::new();
        for o in outputs {
            for row in &o.draws {
                states.push(layout.unflatten(row)?);
            }
        }
        if states.is_empty() {
            return Err(Error::Validation("chains hold no retained draws (unfitted?)".into()));
        }
        Ok(Self { layout, states })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Element-wise posterior mean of every block.
    pub fn mean_state(&self) -> ModelState {
        let k = self.states.len() as f64;
        let mut acc = self.states[0].clone();
        acc.b.fill(0.0);
        acc.alpha.fill(0.0);
        acc.gamma.fill(0.0);
        acc.c.fill(0.0);
        acc.phi.fill(0.0);
        acc.h.fill(0.0);
        for s in &self.states {
            acc.b += &s.b;
            acc.alpha += &s.alpha;
            acc.gamma += &s.gamma;
            acc.c += &s.c;
            acc.phi += &s.phi;
            acc.h += &s.h;
        }
        acc.b /= k;
        acc.alpha /= k;
        acc.gamma /= k;
        acc.c /= k;
        acc.phi /= k;
        acc.h /= k;
        acc
    }
}

/// Settings for posterior prediction at new sites.
#[derive(Debug, Clone, Copy)]
pub struct SitePredictionConfig {
    pub mode: DataModel,
    pub spatial: bool,
    pub mc_draws: usize,
    pub seed: u64,
    pub jitter: f64,
}

impl SitePredictionConfig {
    pub fn new(mode: DataModel, spatial: bool) -> Self {
        Self {
            mode,
            spatial,
            mc_draws: crate::truncated::DEFAULT_MC_DRAWS,
            seed: 0,
            jitter: DEFAULT_JITTER,
        }
    }
}

/// Posterior-mean location at each new site: μ̂(s*) = K⁻¹ Σ_k softplus(B⁽ᵏ⁾x* +
/// η⁽ᵏ⁾(s*)), with η⁽ᵏ⁾(s*) the conditional-mean field of draw k. The
/// uncertainty term is excluded: it calibrates observation noise, not the
/// field.
pub fn posterior_mean_location(
    draws: &PosteriorDraws,
    train_sites: &SiteSet,
    new_sites: &SiteSet,
    x_new: &DMatrix<f64>,
    spatial: bool,
    jitter: f64,
) -> Result<DMatrix<f64>> {
    let d = draws.layout.d;
    let p = draws.layout.p;
    if x_new.ncols() != p {
        return Err(Error::Dimension(format!(
            "prediction covariates have {} columns, the fit used {p}",
            x_new.ncols()
        )));
    }
    if x_new.nrows() != new_sites.n() {
        return Err(Error::Dimension("covariate rows do not match prediction sites".into()));
    }
    let n_new = new_sites.n();
    let mut acc = DMatrix::zeros(d, n_new);
    for state in &draws.states {
        let eta_new = if spatial {
            let params = LmcParams::new(state.c.clone(), state.phi.clone())?;
            let factors = component_factors(train_sites, &state.phi, jitter)?;
            predict_field(&state.h, &params, train_sites, &factors, new_sites)?
        } else {
            DMatrix::zeros(d, n_new)
        };
        for i in 0..n_new {
            for l in 0..d {
                let bx: f64 = (0..p).map(|k| state.b[(l, k)] * x_new[(i, k)]).sum();
                acc[(l, i)] += softplus(bx + eta_new[(l, i)]);
            }
        }
    }
    acc /= draws.states.len() as f64;
    Ok(acc)
}

/// Composition predictions at new sites from a fitted chain: the posterior-mean
/// location feeds the Monte Carlo composition estimator with the posterior-mean
/// shape vector.
pub fn predict_at_sites(
    draws: &PosteriorDraws,
    train_sites: &SiteSet,
    new_coords: &[[f64; 2]],
    x_new: &DMatrix<f64>,
    cfg: &SitePredictionConfig,
) -> Result<Vec<CompositionPrediction>> {
    let new_sites = SiteSet::new(new_coords.to_vec())?;
    let mu_hat =
        posterior_mean_location(draws, train_sites, &new_sites, x_new, cfg.spatial, cfg.jitter)?;
    let gamma_hat = draws.mean_state().gamma;

    let mut out = Vec::with_capacity(new_sites.n());
    for i in 0..new_sites.n() {
        let mu = DVector::from_fn(draws.layout.d, |l, _| mu_hat[(l, i)]);
        let params = EsagParams::new(mu, gamma_hat.clone())?;
        let mut rng = rand::rngs::SmallRng::seed_from_u64(substream_seed(cfg.seed, i as u64));
        let pred = match cfg.mode {
            DataModel::EsagPlus => predict_composition_mc(&params, cfg.mc_draws, &mut rng)?,
            DataModel::Esag => predict_composition_plain(&params, cfg.mc_draws, &mut rng)?,
        };
        out.push(pred);
    }
    Ok(out)
}

/// Prediction at a single site.
pub fn predict_at_site(
    draws: &PosteriorDraws,
    train_sites: &SiteSet,
    coord: [f64; 2],
    x_star: &DVector<f64>,
    cfg: &SitePredictionConfig,
) -> Result<CompositionPrediction> {
    let x_new = DMatrix::from_fn(1, x_star.len(), |_, k| x_star[k]);
    Ok(predict_at_sites(draws, train_sites, &[coord], &x_new, cfg)?.remove(0))
}

/// Mean logarithmic score of a dataset at fixed (typically posterior-mean)
/// parameters. Truncation constants come from per-observation sub-streams of
/// `seed`, so the score is deterministic.
pub fn mean_log_score(
    state: &ModelState,
    data: &Dataset,
    mode: DataModel,
    baseline: Option<usize>,
    mc_draws: usize,
    seed: u64,
) -> Result<f64> {
    let baseline = if mode == DataModel::EsagPlus { baseline } else { None };
    let mut total = 0.0;
    for i in 0..data.n() {
        let mu = linear_predictor(state, data, i, baseline);
        let params = EsagParams::new(mu, state.gamma.clone())?;
        let shape = assemble_shape(&params)?;
        let lp = match mode {
            DataModel::Esag => esag_logpdf_with_shape(
                data.y[i].values(),
                &params.mu,
                &shape,
                DEFAULT_QUAD_TOL,
            )?,
            DataModel::EsagPlus => {
                let mut rng =
                    rand::rngs::SmallRng::seed_from_u64(substream_seed(seed, i as u64));
                let mass = orthant_mass_with(
                    &params.mu.as_slice().to_vec(),
                    &shape,
                    mc_draws,
                    &mut rng,
                )?;
                esagplus_logpdf_with_constant(&data.y[i], &params, &shape, mass.constant)?
            }
        };
        if lp <= LOG_ZERO {
            return Err(Error::Validation(format!(
                "observation {i} has zero predictive density under the truncated model"
            )));
        }
        total -= lp;
    }
    Ok(total / data.n() as f64)
}

/// Mean chi-square compositional distance between observed compositions (the
/// squared responses) and per-observation predicted compositions at fixed
/// parameters. The renormalized estimator is shared by both data models; the
/// truncation constant cancels.
pub fn mean_csd(
    state: &ModelState,
    data: &Dataset,
    mode: DataModel,
    baseline: Option<usize>,
    mc_draws: usize,
    seed: u64,
) -> Result<f64> {
    let baseline = if mode == DataModel::EsagPlus { baseline } else { None };
    let mut total = 0.0;
    for i in 0..data.n() {
        let mu = linear_predictor(state, data, i, baseline);
        let params = EsagParams::new(mu, state.gamma.clone())?;
        let mut rng = rand::rngs::SmallRng::seed_from_u64(substream_seed(seed, i as u64));
        let pred = predict_composition_plain(&params, mc_draws, &mut rng)?;
        let observed = square_transform(&data.y[i])?;
        total += csd(&observed, &pred.mean_composition);
    }
    Ok(total / data.n() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn params(mu: &[f64], gamma: &[f64]) -> EsagParams {
        EsagParams::new(DVector::from_row_slice(mu), DVector::from_row_slice(gamma)).unwrap()
    }

    fn comp(v: &[f64]) -> Composition {
        Composition::new(DVector::from_row_slice(v)).unwrap()
    }

    #[test]
    fn symmetric_parameters_predict_uniform_composition() {
        let p = params(&[1.2, 1.2, 1.2], &[0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pred = predict_composition_mc(&p, 100_000, &mut rng).unwrap();
        for (k, v) in pred.mean_composition.values().iter().enumerate() {
            assert!(
                (v - 1.0 / 3.0).abs() < 3.0 * pred.std_error[k].max(1e-3),
                "component {k}: {v}"
            );
        }
    }

    #[test]
    fn concentrated_parameters_predict_vertex() {
        let p = params(&[50.0, 0.0, 0.0], &[0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pred = predict_composition_mc(&p, 50_000, &mut rng).unwrap();
        assert!((pred.mean_composition.values()[0] - 1.0).abs() < 0.01);

        // Cross-check against empirical squared-coordinate means of samples.
        let draws = crate::truncated::esagplus_sample(&p, 20_000, 1000, &mut rng).unwrap();
        let mut emp = DVector::zeros(3);
        for y in &draws {
            emp += y.values().map(|v| v * v);
        }
        emp /= draws.len() as f64;
        for k in 0..3 {
            assert!((pred.mean_composition.values()[k] - emp[k]).abs() < 0.01);
        }
    }

    #[test]
    fn estimators_agree_within_monte_carlo_error() {
        // The spectral estimator drops cross-moments of K, which vanish under
        // the full ESAG but not under truncation; the two estimators coincide
        // in the mild-truncation regime of locations interior to the orthant.
        let mut prng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..5 {
            let mu = DVector::from_fn(3, |_, _| 2.0 + prng.gen::<f64>() * 1.5);
            let gamma = DVector::from_fn(2, |_, _| 0.3 * prng.sample::<f64, _>(StandardNormal));
            let p = EsagParams::new(mu, gamma).unwrap();

            let mut rng = ChaCha8Rng::seed_from_u64(100 + trial);
            let mc = predict_composition_mc(&p, 100_000, &mut rng).unwrap();
            let samples = crate::truncated::esagplus_sample(&p, 50_000, 1000, &mut rng).unwrap();
            let xi = predict_composition_xi(&p, &samples).unwrap();

            for k in 0..3 {
                let joint = (mc.std_error[k].powi(2) + xi.std_error[k].powi(2)).sqrt();
                let diff =
                    (mc.mean_composition.values()[k] - xi.mean_composition.values()[k]).abs();
                assert!(diff < 3.0 * joint + 0.01, "trial {trial}, k={k}: diff {diff}");
            }
        }
    }

    #[test]
    fn spectral_estimator_degenerate_sample() {
        // All samples at ξ_d = μ̂ make K the first coordinate indicator, so the
        // prediction is μ̂² element-wise.
        let p = params(&[2.0, 1.0, 2.0], &[0.3, -0.1]);
        let mu_hat = Direction::from_unnormalized(p.mu.clone()).unwrap();
        let pred = predict_composition_xi(&p, &[mu_hat.clone()]).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(
                pred.mean_composition.values()[k],
                mu_hat.values()[k] * mu_hat.values()[k],
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn csd_properties() {
        let u = comp(&[1.0, 0.0, 0.0]);
        let v = comp(&[0.0, 1.0, 0.0]);
        assert_eq!(csd(&u, &u), 0.0);
        assert_abs_diff_eq!(csd(&u, &v), 2f64.sqrt(), epsilon = 1e-15);

        let a = comp(&[0.5, 0.3, 0.2]);
        let b = comp(&[0.1, 0.6, 0.3]);
        assert_abs_diff_eq!(csd(&a, &b), csd(&b, &a), epsilon = 1e-15);
        assert!(csd(&a, &b) > 0.0);

        // Permutation applied to both arguments leaves the value unchanged.
        let ap = comp(&[0.2, 0.5, 0.3]);
        let bp = comp(&[0.3, 0.1, 0.6]);
        assert_abs_diff_eq!(csd(&a, &b), csd(&ap, &bp), epsilon = 1e-15);
    }

    #[test]
    fn log_score_is_negative_log_density() {
        let p = params(&[1.0, 2.0, 1.5], &[0.2, 0.4]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = crate::truncated::esagplus_sample(&p, 1, 1000, &mut rng).unwrap().remove(0);
        let s = log_score(&y, &p, DataModel::Esag, 0, &mut rng).unwrap();
        let lp = crate::dist::esag_logpdf(&y, &p).unwrap();
        assert_abs_diff_eq!(s, -lp, epsilon = 1e-12);
        // Scaling the density down by e adds exactly one to the score.
        assert_abs_diff_eq!(-(lp - 1.0), s + 1.0, epsilon = 1e-12);
    }
}
