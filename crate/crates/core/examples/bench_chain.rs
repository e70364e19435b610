use scurve_core::model::{ConstraintMode, Model, ModelConfig};
use scurve_core::sampler::{run_chain, SamplerConfig};
use scurve_core::simulation::{evaluate_fit, simulate_dataset, SimTruth};
use scurve_core::summary::{make_grid, milestones};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let iters: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    let mode: ConstraintMode = args
        .get(2)
        .map(|s| s.parse().unwrap())
        .unwrap_or(ConstraintMode::SShaped);
    let n_mc: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(4096);
    let truth: SimTruth = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(SimTruth::Asymmetric);
    let seed: u64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(11);
    let ds = simulate_dataset(truth, seed).unwrap();
    let model = Model::build(&ModelConfig::new(mode), &ds).unwrap();
    let cfg = SamplerConfig {
        n_iter: iters,
        burn_in: iters / 2,
        seed: 5,
        n_mc,
        ..Default::default()
    };
    let t0 = Instant::now();
    let s = run_chain(&cfg, &model).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!("{iters} iterations in {dt:.2}s ({:.4} s/iter)", dt / iters as f64);
    for t in s.trace.iter().step_by((iters / 20).max(1)) {
        println!(
            "{} ll={:.1} acc={} step={:.3} obs={:.3} rnd={:.3} s={:.3e} v={:.3e} peaks={:?}",
            t.iteration,
            t.log_likelihood,
            t.accepted,
            t.proposal_step,
            t.sigma2_obs,
            t.sigma2_rnd,
            t.sigma2_s,
            t.sigma2_v,
            t.peaks
        );
    }
    println!("acceptance {:.3}", s.acceptance_rate());
    println!("{:?}", milestones(&model, &s).unwrap());
    println!(
        "{:?}",
        evaluate_fit(&model, &s, truth, &make_grid(30.0, 90.0, 0.2).unwrap()).unwrap()
    );
}
