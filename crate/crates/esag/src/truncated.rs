//! The ESAG⁺ distribution: ESAG truncated to the non-negative orthant.
//!
//! The truncated density divides the ESAG density by the orthant mass
//! ∫_{S^{d−1}_+} [y | μ, V] dy, which is approximated by the fraction of ESAG
//! draws that land in the orthant. Simulation from the ESAG is cheap (normalize
//! a Gaussian draw), so the Monte Carlo constant is practical inside MCMC.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use crate::dist::{assemble_shape, esag_logpdf_with_shape, EsagParams, EsagShape, DEFAULT_QUAD_TOL};
use crate::error::{Error, Result};
use crate::sphere::Direction;

/// Sentinel for log-density zero: the most negative finite value, so sums of
/// log terms stay NaN-free.
pub const LOG_ZERO: f64 = f64::MIN;

/// Default Monte Carlo draw count for the normalizing constant.
pub const DEFAULT_MC_DRAWS: usize = 5000;

/// Default per-sample proposal budget for rejection sampling.
pub const DEFAULT_MAX_TRIES: usize = 1000;

/// Monte Carlo estimate of the orthant mass, with its binomial standard error.
#[derive(Debug, Clone, Copy)]
pub struct TruncationEstimate {
    pub constant: f64,
    pub mc_draws: usize,
    pub std_error: f64,
}

impl TruncationEstimate {
    fn from_hits(hits: usize, m: usize) -> Result<Self> {
        if hits == 0 {
            return Err(Error::TruncationDegenerate(format!(
                "0 of {m} draws landed in the non-negative orthant; the truncated \
                 log-density is undefined at these parameters"
            )));
        }
        let constant = hits as f64 / m as f64;
        Ok(Self { constant, mc_draws: m, std_error: (constant * (1.0 - constant) / m as f64).sqrt() })
    }
}

/// Mixes an index into a base seed (splitmix64 finalizer); used to derive
/// independent sub-streams deterministically.
pub(crate) fn substream_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Counts draws of z = μ + F·w with every coordinate ≥ 0. The standard-normal
/// block is laid out column-major (`w_block[c·m + i]` is component c of draw i)
/// so the d = 3 fast path vectorizes over draws. Hot path shared by the
/// likelihood, which reuses one block across observations.
pub(crate) fn count_orthant_hits(mu: &[f64], factor: &DMatrix<f64>, w_block: &[f64]) -> usize {
    let d = mu.len();
    debug_assert_eq!(w_block.len() % d, 0);
    let m = w_block.len() / d;
    let f = factor.as_slice(); // column-major d×d
    if d == 3 {
        let (w0, rest) = w_block.split_at(m);
        let (w1, w2) = rest.split_at(m);
        let mut hits = 0usize;
        for i in 0..m {
            let z0 = mu[0] + f[0] * w0[i] + f[3] * w1[i] + f[6] * w2[i];
            let z1 = mu[1] + f[1] * w0[i] + f[4] * w1[i] + f[7] * w2[i];
            let z2 = mu[2] + f[2] * w0[i] + f[5] * w1[i] + f[8] * w2[i];
            hits += usize::from((z0 >= 0.0) & (z1 >= 0.0) & (z2 >= 0.0));
        }
        return hits;
    }
    let mut hits = 0usize;
    for i in 0..m {
        let mut inside = true;
        for k in 0..d {
            let mut z = mu[k];
            for c in 0..d {
                z += f[c * d + k] * w_block[c * m + i];
            }
            if z < 0.0 {
                inside = false;
                break;
            }
        }
        if inside {
            hits += 1;
        }
    }
    hits
}

pub(crate) fn fill_standard_normal<R: Rng + ?Sized>(buf: &mut [f64], rng: &mut R) {
    for v in buf.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

/// Estimates the orthant mass of ESAG(μ, V) as the fraction of `m` draws with
/// all coordinates non-negative, drawing from the caller's stream.
pub fn orthant_mass<R: Rng + ?Sized>(
    params: &EsagParams,
    m: usize,
    rng: &mut R,
) -> Result<TruncationEstimate> {
    let shape = assemble_shape(params)?;
    orthant_mass_with(&params.mu.as_slice().to_vec(), &shape, m, rng)
}

/// Orthant mass for a pre-assembled shape.
pub fn orthant_mass_with<R: Rng + ?Sized>(
    mu: &[f64],
    shape: &EsagShape,
    m: usize,
    rng: &mut R,
) -> Result<TruncationEstimate> {
    if m == 0 {
        return Err(Error::Validation("orthant mass needs at least one draw".into()));
    }
    let factor = shape.sqrt_factor();
    let d = mu.len();
    let mut w = vec![0.0; d * m.min(4096)];
    let mut hits = 0;
    let mut remaining = m;
    while remaining > 0 {
        let take = remaining.min(4096);
        let block = &mut w[..take * d];
        fill_standard_normal(block, rng);
        hits += count_orthant_hits(mu, &factor, block);
        remaining -= take;
    }
    TruncationEstimate::from_hits(hits, m)
}

/// Deterministic orthant mass: the `m` draws are split across `workers`
/// independently seeded sub-streams, so the result depends only on
/// (parameters, m, seed, workers).
pub fn orthant_mass_seeded(
    params: &EsagParams,
    m: usize,
    seed: u64,
    workers: usize,
) -> Result<TruncationEstimate> {
    if m == 0 {
        return Err(Error::Validation("orthant mass needs at least one draw".into()));
    }
    let shape = assemble_shape(params)?;
    let factor = shape.sqrt_factor();
    let d = params.dim();
    let mu = params.mu.as_slice();
    let workers = workers.max(1).min(m);
    let base = m / workers;
    let extra = m % workers;
    let chunk_len = |c: usize| base + usize::from(c < extra);

    let count_chunk = |c: usize| -> usize {
        let mut rng = rand::rngs::SmallRng::seed_from_u64(substream_seed(seed, c as u64));
        let mut w = vec![0.0; d * chunk_len(c)];
        fill_standard_normal(&mut w, &mut rng);
        count_orthant_hits(mu, &factor, &w)
    };

    let hits: usize = if workers == 1 {
        count_chunk(0)
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers).map(|c| scope.spawn(move || count_chunk(c))).collect();
            handles.into_iter().map(|h| h.join().expect("orthant mass worker panicked")).sum()
        })
    };
    TruncationEstimate::from_hits(hits, m)
}

/// Log-density of ESAG⁺ at `y`: the ESAG log-density minus the log orthant
/// mass. Points outside the orthant get [`LOG_ZERO`], matching the truncation
/// indicator.
pub fn esagplus_logpdf<R: Rng + ?Sized>(
    y: &Direction,
    params: &EsagParams,
    m: usize,
    rng: &mut R,
) -> Result<f64> {
    if !y.in_orthant() {
        return Ok(LOG_ZERO);
    }
    let shape = assemble_shape(params)?;
    let mass = orthant_mass_with(&params.mu.as_slice().to_vec(), &shape, m, rng)?;
    let base = esag_logpdf_with_shape(y.values(), &params.mu, &shape, DEFAULT_QUAD_TOL)?;
    Ok(base - mass.constant.ln())
}

/// Truncated log-density with a previously estimated normalizing constant.
pub fn esagplus_logpdf_with_constant(
    y: &Direction,
    params: &EsagParams,
    shape: &EsagShape,
    constant: f64,
) -> Result<f64> {
    if !(constant > 0.0 && constant <= 1.0) {
        return Err(Error::Validation(format!("orthant mass {constant} outside (0, 1]")));
    }
    if !y.in_orthant() {
        return Ok(LOG_ZERO);
    }
    let base = esag_logpdf_with_shape(y.values(), &params.mu, shape, DEFAULT_QUAD_TOL)?;
    Ok(base - constant.ln())
}

/// Rejection sampler for ESAG⁺: draw from the ESAG, accept draws inside the
/// orthant. Fails once `max_tries · n` proposals are spent, reporting the
/// empirical acceptance rate.
pub fn esagplus_sample<R: Rng + ?Sized>(
    params: &EsagParams,
    n: usize,
    max_tries: usize,
    rng: &mut R,
) -> Result<Vec<Direction>> {
    let shape = assemble_shape(params)?;
    let factor = shape.sqrt_factor();
    let d = params.dim();
    let budget = max_tries.saturating_mul(n.max(1));
    let mut out = Vec::with_capacity(n);
    let mut w = vec![0.0; d];
    let mut z = vec![0.0; d];
    let f = factor.as_slice();
    let mut proposals = 0usize;
    while out.len() < n {
        if proposals >= budget {
            return Err(Error::RejectionExhausted(format!(
                "accepted {} of {n} samples in {proposals} proposals \
                 (empirical acceptance rate {:.2e})",
                out.len(),
                out.len() as f64 / proposals as f64
            )));
        }
        proposals += 1;
        fill_standard_normal(&mut w, rng);
        let mut inside = true;
        for k in 0..d {
            let mut zk = params.mu[k];
            for c in 0..d {
                zk += f[c * d + k] * w[c];
            }
            if zk < 0.0 {
                inside = false;
                break;
            }
            z[k] = zk;
        }
        if inside {
            let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                out.push(Direction::new(nalgebra::DVector::from_iterator(
                    d,
                    z.iter().map(|v| v / norm),
                ))?);
            }
        }
    }
    Ok(out)
}

/// Empirical acceptance rate of the rejection sampler over a fixed proposal
/// count; used to cross-check against [`orthant_mass`].
pub fn rejection_acceptance_rate<R: Rng + ?Sized>(
    params: &EsagParams,
    proposals: usize,
    rng: &mut R,
) -> Result<f64> {
    let shape = assemble_shape(params)?;
    let factor = shape.sqrt_factor();
    let mu = params.mu.as_slice().to_vec();
    let d = mu.len();
    let mut w = vec![0.0; d * proposals.min(4096)];
    let mut hits = 0;
    let mut remaining = proposals;
    while remaining > 0 {
        let take = remaining.min(4096);
        let block = &mut w[..take * d];
        fill_standard_normal(block, rng);
        hits += count_orthant_hits(&mu, &factor, block);
        remaining -= take;
    }
    Ok(hits as f64 / proposals as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(mu: &[f64], gamma: &[f64]) -> EsagParams {
        EsagParams::new(DVector::from_row_slice(mu), DVector::from_row_slice(gamma)).unwrap()
    }

    #[test]
    fn deep_interior_mass_is_one() {
        let s = 100.0 / 3f64.sqrt();
        let p = params(&[s, s, s], &[0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let est = orthant_mass(&p, 20_000, &mut rng).unwrap();
        assert!(est.constant > 1.0 - 2.0 * est.std_error - 1e-4, "constant {}", est.constant);
    }

    #[test]
    fn near_zero_location_gives_one_eighth() {
        // Isotropic Gaussian with μ ≈ 0: each orthant carries 2^{−3} of the mass.
        let p = params(&[1e-7, 1e-7, 1e-7], &[0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let est = orthant_mass(&p, 100_000, &mut rng).unwrap();
        assert!((est.constant - 0.125).abs() < 3.0 * est.std_error, "constant {}", est.constant);
    }

    #[test]
    fn half_truncated_scenario() {
        // μ = (0.1, d^{5/2}, …, d^{5/2}) leaves roughly half the mass in the orthant.
        let v = 3f64.powf(2.5);
        let mut grng = ChaCha8Rng::seed_from_u64(3);
        let gamma: Vec<f64> = (0..2)
            .map(|_| {
                let g: f64 = grng.sample(StandardNormal);
                g.abs() * 0.5f64.sqrt()
            })
            .collect();
        let p = params(&[0.1, v, v], &gamma);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let est = orthant_mass(&p, 100_000, &mut rng).unwrap();
        assert!((0.40..0.65).contains(&est.constant), "constant {}", est.constant);
    }

    #[test]
    fn seeded_mass_is_deterministic_across_worker_splits() {
        let p = params(&[0.4, 1.0, 0.6], &[0.3, -0.2]);
        let a = orthant_mass_seeded(&p, 10_000, 99, 1).unwrap();
        let b = orthant_mass_seeded(&p, 10_000, 99, 1).unwrap();
        assert_eq!(a.constant, b.constant);
        // Different worker counts repartition the same total draw count.
        let c = orthant_mass_seeded(&p, 10_000, 99, 4).unwrap();
        assert_eq!(c.mc_draws, 10_000);
        assert!((a.constant - c.constant).abs() < 4.0 * a.std_error);
    }

    #[test]
    fn logpdf_outside_orthant_is_sentinel() {
        let p = params(&[1.0, 1.0, 1.0], &[0.0, 0.0]);
        let y = Direction::new(DVector::from_row_slice(&[-1.0, 0.0, 0.0])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(esagplus_logpdf(&y, &p, 1000, &mut rng).unwrap(), LOG_ZERO);
    }

    #[test]
    fn logpdf_matches_untruncated_when_mass_is_one() {
        let s = 100.0 / 3f64.sqrt();
        let p = params(&[s, s, s], &[0.1, -0.3]);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let draws = esagplus_sample(&p, 5, 1000, &mut rng).unwrap();
        for y in &draws {
            let plus = esagplus_logpdf(&y, &p, 20_000, &mut rng).unwrap();
            let plain = crate::dist::esag_logpdf(&y, &p).unwrap();
            assert!((plus - plain).abs() < 1e-3, "{plus} vs {plain}");
            // constant ≤ 1 ⇒ truncated density dominates pointwise.
            assert!(plus >= plain);
        }
    }

    #[test]
    fn truncated_density_normalizes_over_orthant() {
        // Importance sampling with the uniform orthant density (area π/2 on S²).
        let p = params(&[0.3, 1.2, 0.8], &[0.4, 0.2]);
        let shape = assemble_shape(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mass = orthant_mass_with(&p.mu.as_slice().to_vec(), &shape, 400_000, &mut rng).unwrap();
        let area = crate::sphere::orthant_area(3);
        let n = 200_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let y = crate::sphere::sample_uniform_orthant(3, &mut rng).unwrap();
            let lp = esagplus_logpdf_with_constant(&y, &p, &shape, mass.constant).unwrap();
            sum += lp.exp();
        }
        let integral = area * sum / n as f64;
        assert!((integral - 1.0).abs() < 0.01, "integral {integral}");
    }

    #[test]
    fn rejection_rate_matches_orthant_mass() {
        let p = params(&[1e-7, 1e-7, 1e-7], &[0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rate = rejection_acceptance_rate(&p, 100_000, &mut rng).unwrap();
        let se = (0.125f64 * 0.875 / 100_000.0).sqrt();
        assert!((rate - 0.125).abs() < 3.0 * se, "rate {rate}");
    }

    #[test]
    fn rejection_sampler_flags_and_exhaustion() {
        let p = params(&[0.5, 0.8, 1.1], &[0.2, 0.1]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draws = esagplus_sample(&p, 200, 1000, &mut rng).unwrap();
        for y in &draws {
            assert!(y.in_orthant());
            let lp = esagplus_logpdf(y, &p, 2000, &mut rng).unwrap();
            assert!(lp.is_finite() && lp > LOG_ZERO);
        }

        // A location pointing away from the orthant exhausts a tiny budget.
        let bad = params(&[-40.0, -40.0, -40.0], &[0.0, 0.0]);
        let err = esagplus_sample(&bad, 5, 2, &mut rng);
        assert!(matches!(err, Err(Error::RejectionExhausted(_))));
    }

    #[test]
    fn mass_invariant_under_coordinate_permutation() {
        // Permuting μ and the shape factor together permutes z, which preserves
        // orthant membership.
        let p = params(&[0.2, 0.9, 0.5], &[0.6, -0.4]);
        let shape = assemble_shape(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let m = 200_000;
        let base = orthant_mass_with(&p.mu.as_slice().to_vec(), &shape, m, &mut rng).unwrap();

        let perm = [2usize, 0, 1];
        let mut xi = DMatrix::zeros(3, 3);
        for c in 0..3 {
            for r in 0..3 {
                xi[(r, c)] = shape.xi[(perm[r], c)];
            }
        }
        let permuted = EsagShape { lambda: shape.lambda.clone(), xi };
        let mu_p: Vec<f64> = perm.iter().map(|&i| p.mu[i]).collect();
        let est = orthant_mass_with(&mu_p, &permuted, m, &mut rng).unwrap();
        let joint = (base.std_error.powi(2) + est.std_error.powi(2)).sqrt();
        assert!((base.constant - est.constant).abs() < 3.0 * joint);
    }
}
