// Pilot runs for calibrating the acceptance-suite configurations.
use esag::model::DataModel;
use esag::predict::{mean_csd, mean_log_score, PosteriorDraws};
use esag_cli::config::{fixtures, Mode, NoiseSpec, RunConfig};
use esag_cli::fitrun::{fit_dataset, summarize};
use esag_cli::sim::simulate;
use std::time::Instant;

fn replicate_config(mode: Mode, spatial: bool, iterations: usize, chains: usize) -> RunConfig {
    let mut cfg = fixtures::sim_study_config(mode, spatial);
    cfg.iterations = iterations;
    cfg.burn_in = iterations / 4;
    cfg.thin = 5;
    cfg.chains = chains;
    cfg.mc_draws = if mode == Mode::EsagPlus { 2000 } else { 0 }.max(1);
    cfg.truncation_noise = NoiseSpec::CommonRandom(9000 + iterations as u64);
    cfg
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("pilot");

    match which {
        "pilot" => pilot(args.get(2).and_then(|s| s.parse().ok()).unwrap_or(4000)),
        "replicates" => replicates(),
        "appf" => appf(),
        other => eprintln!("unknown pilot command {other}"),
    }
}

fn pilot(iterations: usize) {
    // Desk-scale version of the main simulation-study fit.
    let spec = fixtures::sim_study_spec();
    let sim = simulate(&spec, 601).unwrap();
    let truth_b = sim.truth.b.clone();

    for (label, mode) in [("esag_plus", Mode::EsagPlus), ("esag", Mode::Esag)] {
        let mut cfg = replicate_config(mode, true, iterations, 4);
        cfg.seed = 40;
        cfg.mc_draws = 5000;
        let t0 = Instant::now();
        let fit = fit_dataset(sim.dataset.clone(), &cfg, false).unwrap();
        let wall = t0.elapsed().as_secs_f64();
        let s = &fit.summary;
        println!(
            "[{label}] {iterations} its x4: {wall:.0}s, max_rhat {:.4}, min_ess {:.0}",
            s.max_rhat, s.min_ess
        );
        let mut worst: Vec<(String, f64)> = s
            .params
            .iter()
            .filter(|p| p.rhat.is_finite())
            .map(|p| (p.name.clone(), p.rhat))
            .collect();
        worst.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        println!("  worst rhat: {:?}", &worst[..worst.len().min(6)]);
        for (k, v) in &s.acceptance {
            print!("  acc[{k}]={v:.2}");
        }
        println!();

        // Coverage of true B entries.
        let mut covered = 0;
        let mut total = 0;
        for (j, row) in truth_b.iter().enumerate() {
            for (k, truev) in row.iter().enumerate() {
                total += 1;
                let name = format!("b[{j},{k}]");
                let p = s.params.iter().find(|p| p.name == name);
                let ok = match p {
                    Some(p) => *truev >= p.q025 && *truev <= p.q975,
                    None => *truev == 0.0, // pinned baseline entry
                };
                covered += i32::from(ok);
                print!("  B[{j}{k}]={truev}:{}", if ok { "Y" } else { "N" });
            }
        }
        println!("\n  coverage {covered}/{total}");

        // Key parameter means.
        for name in ["alpha[0]", "gamma[0]", "gamma[1]", "phi[0]", "phi[1]", "phi[2]"] {
            if let Some(p) = s.params.iter().find(|p| p.name == name) {
                print!("  {name}={:.3}±{:.3}", p.mean, p.sd);
            }
        }
        println!();
    }
}

fn replicates() {
    // Criterion 6(c)-style ordering check at replicate scale.
    let spec = fixtures::sim_study_spec();
    let mut plus_wins_logs = 0;
    let mut plus_wins_csd = 0;
    let reps = 4;
    for r in 0..reps {
        let sim = simulate(&spec, 610 + r).unwrap();
        let raw = sim.dataset.clone();
        let mut scores = Vec::new();
        for mode in [Mode::EsagPlus, Mode::Esag] {
            let mut cfg = replicate_config(mode, true, 4000, 1);
            cfg.seed = 50 + r;
            let t0 = Instant::now();
            let fit = fit_dataset(raw.clone(), &cfg, false).unwrap();
            let outputs: Vec<&_> = fit.outputs.iter().collect();
            let draws = PosteriorDraws::from_outputs(&outputs).unwrap();
            let state = draws.mean_state();
            let (data, _, _) = raw.clone().into_model_dataset(false).unwrap();
            let dm: DataModel = mode.into();
            let baseline = fit.meta.layout.baseline;
            let logs = mean_log_score(&state, &data, dm, baseline, 20_000, 777).unwrap();
            let csd = mean_csd(&state, &data, dm, baseline, 4_000, 778).unwrap();
            println!(
                "rep {r} {:?}: logS {logs:.4} csd {csd:.4} ({:.0}s, rhat {:.3})",
                mode,
                t0.elapsed().as_secs_f64(),
                fit.summary.max_rhat
            );
            scores.push((logs, csd));
        }
        plus_wins_logs += i32::from(scores[0].0 < scores[1].0);
        plus_wins_csd += i32::from(scores[0].1 < scores[1].1);
    }
    println!("ESAG+ wins: logS {plus_wins_logs}/{reps}, CSD {plus_wins_csd}/{reps}");
}

fn appf() {
    // Appendix-F-style comparison: spatial vs non-spatial on eta-active and
    // eta-zero data.
    for (label, eta_active, seed) in [("eta-active", true, 701), ("eta-zero", false, 702)] {
        let spec = fixtures::second_sim_spec(eta_active);
        let sim = simulate(&spec, seed).unwrap();
        let raw = sim.dataset.clone();
        let mut scores = Vec::new();
        for spatial in [true, false] {
            let mut cfg = replicate_config(Mode::EsagPlus, spatial, 4000, 1);
            cfg.seed = 60;
            let t0 = Instant::now();
            let fit = fit_dataset(raw.clone(), &cfg, false).unwrap();
            let outputs: Vec<&_> = fit.outputs.iter().collect();
            let draws = PosteriorDraws::from_outputs(&outputs).unwrap();
            let state = draws.mean_state();
            let (data, _, _) = raw.clone().into_model_dataset(false).unwrap();
            let logs =
                mean_log_score(&state, &data, DataModel::EsagPlus, Some(0), 20_000, 777).unwrap();
            println!(
                "{label} spatial={spatial}: logS {logs:.4} ({:.0}s, rhat {:.3})",
                t0.elapsed().as_secs_f64(),
                fit.summary.max_rhat
            );
            scores.push(logs);
        }
        println!("{label}: spatial − nonspatial = {:.4}", scores[0] - scores[1]);
    }
}
