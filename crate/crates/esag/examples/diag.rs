// Scratch benchmark for the sampler hot path at simulation-study scale.
use esag::mcmc::{run_chain, ChainConfig, ProposalScales};
use esag::model::{DataModel, Dataset, Hyperparams, LikelihoodConfig, ModelState};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let n = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut y = Vec::new();
    for _ in 0..n {
        let p = esag::dist::EsagParams::new(
            DVector::from_row_slice(&[1.5, 2.5, 2.0]),
            DVector::from_row_slice(&[0.728, 0.346]),
        )
        .unwrap();
        y.push(esag::truncated::esagplus_sample(&p, 1, 1000, &mut rng).unwrap().remove(0));
    }
    let x = DMatrix::from_fn(n, 3, |_, c| if c == 0 { 1.0 } else { 1.0 + rng.gen::<f64>() });
    let z = DMatrix::from_fn(n, 1, |_, _| rng.gen::<f64>().round());
    let coords: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen(), rng.gen()]).collect();
    let data = Dataset::new(y, x, z, coords).unwrap();

    let hyper = Hyperparams {
        baseline: Some(0),
        spatial: true,
        mc_draws: 5000,
        phi_shape: 6.25,
        phi_scale: 0.04,
        ..Default::default()
    };
    let state = ModelState::initial(3, 3, 1, data.sites.n(), &hyper);

    // Single likelihood evaluation cost.
    let cfg = LikelihoodConfig { mc_draws: 5000, ..LikelihoodConfig::new(DataModel::EsagPlus, &hyper) };
    let t0 = Instant::now();
    let reps = 50;
    let mut acc = 0.0;
    for s in 0..reps {
        acc += esag::model::log_likelihood(&state, &data, &cfg, s).unwrap();
    }
    println!("esag+ loglik eval: {:.3} ms (acc {acc:.1})", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    let cfg_plain = LikelihoodConfig::new(DataModel::Esag, &hyper);
    let t0 = Instant::now();
    for s in 0..reps {
        acc += esag::model::log_likelihood(&state, &data, &cfg_plain, s).unwrap();
    }
    println!("esag  loglik eval: {:.3} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    // Short chains, both modes.
    let t0 = Instant::now();
    let iters = 150;
    let mut chain_cfg = ChainConfig::new(iters, 50, 10, 3, DataModel::EsagPlus);
    chain_cfg.noise = esag::mcmc::TruncationNoise::CommonRandom(77);
    let out = run_chain(state.clone(), &data, &hyper, &ProposalScales::default(), &chain_cfg).unwrap();
    let per_it = t0.elapsed().as_secs_f64() * 1000.0 / iters as f64;
    println!(
        "esag+ chain: {per_it:.1} ms/it ({:.1} it/s), mean ESS evals {:.1}",
        1000.0 / per_it,
        out.mean_ess_iterations()
    );

    let t0 = Instant::now();
    let chain_cfg = ChainConfig::new(iters, 50, 10, 3, DataModel::Esag);
    let hyper_plain = Hyperparams { baseline: None, ..hyper.clone() };
    let state_plain = ModelState::initial(3, 3, 1, data.sites.n(), &hyper_plain);
    let out = run_chain(state_plain, &data, &hyper_plain, &ProposalScales::default(), &chain_cfg).unwrap();
    let per_it = t0.elapsed().as_secs_f64() * 1000.0 / iters as f64;
    println!(
        "esag  chain: {per_it:.1} ms/it ({:.1} it/s), mean ESS evals {:.1}",
        1000.0 / per_it,
        out.mean_ess_iterations()
    );
}
