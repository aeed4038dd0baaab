//! Convergence diagnostics: split R-hat and autocorrelation-based effective
//! sample size with Geyer's initial monotone sequence truncation.

/// Diagnostics for one scalar parameter across chains. Degenerate (constant)
/// series report R-hat as NaN and ESS as the total draw count, flagged.
#[derive(Debug, Clone)]
pub struct ParamDiagnostics {
    pub name: String,
    pub rhat: f64,
    pub ess: f64,
    pub degenerate: bool,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64], m: f64) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Split R-hat: each chain is halved, and the usual between/within variance
/// ratio is computed over the half-chains.
pub fn split_rhat(chains: &[&[f64]]) -> f64 {
    let mut halves: Vec<&[f64]> = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let t = c.len() / 2;
        if t < 2 {
            return f64::NAN;
        }
        halves.push(&c[..t]);
        halves.push(&c[c.len() - t..]);
    }
    let t = halves[0].len() as f64;
    let m = halves.len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let vars: Vec<f64> = halves.iter().zip(&means).map(|(h, mu)| sample_var(h, *mu)).collect();
    let w = mean(&vars);
    if w <= 0.0 {
        return f64::NAN;
    }
    let grand = mean(&means);
    let b_over_t = means.iter().map(|mu| (mu - grand) * (mu - grand)).sum::<f64>() / (m - 1.0);
    let var_plus = (t - 1.0) / t * w + b_over_t;
    (var_plus / w).sqrt()
}

/// Effective sample size across chains. Chain-averaged autocovariances feed
/// the combined autocorrelation ρ_t; paired sums Γ_k = ρ_{2k} + ρ_{2k+1} are
/// truncated at the first non-positive pair and forced monotone non-increasing.
pub fn ess(chains: &[&[f64]]) -> f64 {
    let m = chains.len();
    let t = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if t < 4 {
        return f64::NAN;
    }
    let total = (m * t) as f64;

    let means: Vec<f64> = chains.iter().map(|c| mean(&c[..t])).collect();
    let vars: Vec<f64> = chains.iter().zip(&means).map(|(c, mu)| sample_var(&c[..t], *mu)).collect();
    let w = mean(&vars);
    if w <= 0.0 {
        return total;
    }
    let grand = mean(&means);
    let b_over_t = if m > 1 {
        means.iter().map(|mu| (mu - grand) * (mu - grand)).sum::<f64>() / (m - 1) as f64
    } else {
        0.0
    };
    let var_plus = (t as f64 - 1.0) / t as f64 * w + b_over_t;

    // Chain-averaged autocovariance at each lag (biased 1/T normalization).
    let acov = |lag: usize| -> f64 {
        let mut acc = 0.0;
        for (c, mu) in chains.iter().zip(&means) {
            let mut s = 0.0;
            for i in 0..t - lag {
                s += (c[i] - mu) * (c[i + lag] - mu);
            }
            acc += s / t as f64;
        }
        acc / m as f64
    };

    let rho = |lag: usize| 1.0 - (w - acov(lag)) / var_plus;

    let mut tau = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0usize;
    while lag + 1 < t {
        let pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair.min(prev_pair);
        prev_pair = pair.min(prev_pair);
        lag += 2;
    }
    tau -= 1.0; // ρ_0 = 1 was double-counted inside the first pair sum.
    if tau < 1.0 {
        tau = 1.0;
    }
    total / tau
}

/// Per-parameter diagnostics over equal-length series from one or more chains.
/// `series[chain][param]` are the draws.
pub fn diagnose_series(names: &[String], series: &[Vec<Vec<f64>>]) -> Vec<ParamDiagnostics> {
    let mut out = Vec::with_capacity(names.len());
    for (pi, name) in names.iter().enumerate() {
        let per_chain: Vec<&[f64]> = series.iter().map(|s| s[pi].as_slice()).collect();
        let degenerate = per_chain
            .iter()
            .all(|c| c.windows(2).all(|w| (w[0] - w[1]).abs() < f64::EPSILON * w[0].abs().max(1.0)));
        if degenerate {
            let len: usize = per_chain.iter().map(|c| c.len()).sum();
            out.push(ParamDiagnostics {
                name: name.clone(),
                rhat: f64::NAN,
                ess: len as f64,
                degenerate: true,
            });
        } else {
            out.push(ParamDiagnostics {
                name: name.clone(),
                rhat: split_rhat(&per_chain),
                ess: ess(&per_chain),
                degenerate: false,
            });
        }
    }
    out
}
