//! Generic Markov transition primitives: symmetric random walks, the
//! below-zero-truncated random walk with its Hastings correction, and the
//! elliptical slice sampler. The model-specific block updates are thin
//! wrappers over these, which is what makes the stub-target tests meaningful.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::Result;

/// Metropolis accept test; NaN ratios reject.
pub fn mh_accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    log_ratio >= 0.0 || rng.gen::<f64>().ln() < log_ratio
}

/// Symmetric scalar random walk. Returns (state, log-target, accepted).
pub fn rw_scalar<R, F>(x: f64, lp: f64, scale: f64, target: &mut F, rng: &mut R) -> (f64, f64, bool)
where
    R: Rng + ?Sized,
    F: FnMut(f64) -> f64,
{
    let prop = x + scale * rng.sample::<f64, _>(StandardNormal);
    let prop_lp = target(prop);
    if mh_accept(prop_lp - lp, rng) {
        (prop, prop_lp, true)
    } else {
        (x, lp, false)
    }
}

/// Joint isotropic Gaussian random walk on a vector block.
pub fn rw_vector<R, F>(
    x: &DVector<f64>,
    lp: f64,
    scale: f64,
    target: &mut F,
    rng: &mut R,
) -> (DVector<f64>, f64, bool)
where
    R: Rng + ?Sized,
    F: FnMut(&DVector<f64>) -> f64,
{
    let prop = DVector::from_fn(x.len(), |i, _| x[i] + scale * rng.sample::<f64, _>(StandardNormal));
    let prop_lp = target(&prop);
    if mh_accept(prop_lp - lp, rng) {
        (prop, prop_lp, true)
    } else {
        (x.clone(), lp, false)
    }
}

/// Draw from N(cur, scale²) truncated below zero by resampling; the acceptance
/// probability is at least 1/2 for cur > 0.
pub fn propose_truncated_positive<R: Rng + ?Sized>(cur: f64, scale: f64, rng: &mut R) -> f64 {
    loop {
        let prop = cur + scale * rng.sample::<f64, _>(StandardNormal);
        if prop > 0.0 {
            return prop;
        }
    }
}

/// Hastings correction for the truncated proposal:
/// log Φ(cur/scale) − log Φ(prop/scale). The truncated kernel is asymmetric;
/// without this term the walk oversamples the region near zero.
pub fn truncated_positive_log_correction(cur: f64, prop: f64, scale: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    normal.cdf(cur / scale).ln() - normal.cdf(prop / scale).ln()
}

/// Random walk on (0, ∞) with the truncation correction included.
pub fn rw_truncated_positive<R, F>(
    x: f64,
    lp: f64,
    scale: f64,
    target: &mut F,
    rng: &mut R,
) -> (f64, f64, bool)
where
    R: Rng + ?Sized,
    F: FnMut(f64) -> f64,
{
    let prop = propose_truncated_positive(x, scale, rng);
    let prop_lp = target(prop);
    let ratio = prop_lp - lp + truncated_positive_log_correction(x, prop, scale);
    if mh_accept(ratio, rng) {
        (prop, prop_lp, true)
    } else {
        (x, lp, false)
    }
}

/// Outcome of one elliptical slice move.
#[derive(Debug, Clone)]
pub struct EssMove {
    pub state: DMatrix<f64>,
    pub loglik: f64,
    /// Likelihood evaluations spent in the shrinkage loop.
    pub evaluations: usize,
    pub moved: bool,
}

/// One elliptical slice move for a Gaussian-prior latent block: propose along
/// the ellipse through the current state and the auxiliary prior draw `nu`,
/// shrinking the angle bracket until the likelihood clears the slice level.
/// The loop terminates because the bracket collapses onto angle 0 (the
/// current state); `max_shrink` guards against a likelihood evaluator whose
/// noise keeps rejecting near-identical states, in which case the move is
/// given up and the current state returned.
pub fn elliptical_slice<R, F>(
    current: &DMatrix<f64>,
    nu: &DMatrix<f64>,
    cur_loglik: f64,
    loglik: &mut F,
    max_shrink: usize,
    rng: &mut R,
) -> Result<EssMove>
where
    R: Rng + ?Sized,
    F: FnMut(&DMatrix<f64>) -> Result<f64>,
{
    let level = cur_loglik + rng.gen::<f64>().ln();
    let mut theta = rng.gen::<f64>() * std::f64::consts::TAU;
    let mut lo = theta - std::f64::consts::TAU;
    let mut hi = theta;
    let mut evaluations = 0;

    while evaluations < max_shrink {
        let prop = current * theta.cos() + nu * theta.sin();
        let lp = loglik(&prop)?;
        evaluations += 1;
        if lp > level {
            return Ok(EssMove { state: prop, loglik: lp, evaluations, moved: true });
        }
        if theta < 0.0 {
            lo = theta;
        } else {
            hi = theta;
        }
        theta = lo + rng.gen::<f64>() * (hi - lo);
    }
    Ok(EssMove { state: current.clone(), loglik: cur_loglik, evaluations, moved: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_walk_matches_unit_gaussian_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut target = |x: f64| -0.5 * x * x;
        let mut x = 0.0;
        let mut lp = target(x);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let (nx, nlp, _) = rw_scalar(x, lp, 2.4, &mut target, &mut rng);
            x = nx;
            lp = nlp;
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        // Autocorrelated chain: allow ~3 effective standard errors.
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.08, "var {var}");
    }

    #[test]
    fn truncated_walk_matches_half_normal_target() {
        // Exactness check: the corrected kernel must keep the half-normal
        // invariant; an uncorrected one piles mass near zero.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut target = |x: f64| -0.5 * x * x; // half-normal up to a constant on x > 0
        let mut x = 0.5;
        let mut lp = target(x);
        let n = 200_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let (nx, nlp, _) = rw_truncated_positive(x, lp, 1.0, &mut target, &mut rng);
            x = nx;
            lp = nlp;
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        let expect_mean = (2.0 / std::f64::consts::PI).sqrt();
        let expect_var = 1.0 - 2.0 / std::f64::consts::PI;
        assert!((mean - expect_mean).abs() < 0.01, "mean {mean} vs {expect_mean}");
        assert!((var - expect_var).abs() < 0.01, "var {var} vs {expect_var}");
    }

    #[test]
    fn truncated_walk_accepts_everything_on_flat_target() {
        // Away from zero both truncation factors are ≈ 1, so a flat target
        // accepts every proposal once corrected.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut target = |_x: f64| 0.0;
        let mut x = 2.0;
        let mut lp = 0.0;
        let mut accepted = 0;
        let n = 10_000;
        for _ in 0..n {
            let (nx, nlp, acc) = rw_truncated_positive(x, lp, 0.1, &mut target, &mut rng);
            x = nx;
            lp = nlp;
            accepted += usize::from(acc);
        }
        let rate = accepted as f64 / n as f64;
        assert!(rate > 0.995, "acceptance {rate}");
    }

    #[test]
    fn slice_sampler_with_constant_likelihood_draws_from_prior() {
        // Constant likelihood: the first angle always clears the slice level,
        // and the stationary law is the prior.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut cur = DMatrix::from_element(1, 1, 0.0);
        let mut ll = 0.0;
        let n = 50_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let nu = DMatrix::from_fn(1, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
            let mv = elliptical_slice(&cur, &nu, ll, &mut |_h| Ok(0.0), 100, &mut rng).unwrap();
            assert_eq!(mv.evaluations, 1);
            assert!(mv.moved);
            cur = mv.state;
            ll = mv.loglik;
            sum += cur[(0, 0)];
            sumsq += cur[(0, 0)] * cur[(0, 0)];
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn slice_sampler_recovers_conjugate_gaussian_posterior() {
        // Prior x ~ N(0, 1), likelihood y | x ~ N(x, 0.25) with y = 0.7:
        // posterior mean 0.56, variance 0.2.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = 0.7;
        let mut loglik = |h: &DMatrix<f64>| Ok(-0.5 * (y - h[(0, 0)]).powi(2) / 0.25);
        let mut cur = DMatrix::from_element(1, 1, 0.0);
        let mut ll = -0.5 * y * y / 0.25;
        let n = 50_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let nu = DMatrix::from_fn(1, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
            let mv = elliptical_slice(&cur, &nu, ll, &mut loglik, 100, &mut rng).unwrap();
            cur = mv.state;
            ll = mv.loglik;
            sum += cur[(0, 0)];
            sumsq += cur[(0, 0)] * cur[(0, 0)];
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!((mean - 0.56).abs() < 0.02, "mean {mean}");
        assert!((var - 0.2).abs() < 0.02, "var {var}");
    }
}
