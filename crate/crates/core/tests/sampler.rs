use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use scurve_core::constrained_gaussian::GaussianParams;
use scurve_core::model::{ConstraintMode, Model, ModelConfig};
use scurve_core::sampler::{
    region_log_probabilities, run_chain, sample_categorical, substream, PosteriorSamples, SamplerConfig,
};
use scurve_core::shape_constraints::region_membership;
use scurve_core::simulation::{simulate_with, SimSettings, SimTruth};
use statrs::function::factorial::ln_binomial;
use statrs::function::gamma::ln_gamma;

fn small_model(mode: ConstraintMode, n_basis: usize) -> Model {
    let settings = SimSettings {
        n_subjects: 30,
        ..SimSettings::default()
    };
    let ds = simulate_with(SimTruth::Logistic, &settings, 17).unwrap();
    let mut cfg = ModelConfig::new(mode);
    cfg.n_basis = n_basis;
    Model::build(&cfg, &ds).unwrap()
}

/// For iid N(0,1) coordinates every ordering is equally likely, so
/// `P(γ ≥ 0, unimodal with peak at free position j) = 2^{-d} C(d−1, j−1) / d!`.
fn isotropic_log_probability(d: usize, j: usize) -> f64 {
    -(d as f64) * std::f64::consts::LN_2 + ln_binomial((d - 1) as u64, (j - 1) as u64) - ln_gamma(d as f64 + 1.0)
}

#[test]
fn isotropic_index_law_is_binomial() {
    let model = small_model(ConstraintMode::SShaped, 24);
    let d = model.n_free();
    let g = GaussianParams::new(DVector::zeros(d), DMatrix::identity(d, d)).unwrap();
    let lp = region_log_probabilities(&model, &g, 4096, 3, &[1]);
    let exact: Vec<f64> = (1..=d).map(|j| isotropic_log_probability(d, j)).collect();
    for (j, (a, b)) in lp.iter().zip(&exact).enumerate() {
        assert!((a - b).abs() < 0.15, "position {}: {a} vs {b}", j + 1);
    }
    // categorical draws under the exact law
    let mut rng = substream(11, &[]);
    let n = 100_000;
    let mut counts = vec![0usize; d];
    for _ in 0..n {
        counts[sample_categorical(&exact, &mut rng).unwrap()] += 1;
    }
    let total: f64 = exact.iter().map(|l| l.exp()).sum();
    for j in 0..d {
        let p = exact[j].exp() / total;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let f = counts[j] as f64 / n as f64;
        assert!((f - p).abs() <= 4.0 * se + 1e-4, "position {}: {f} vs {p}", j + 1);
    }
}

#[test]
fn concentrated_conditional_selects_its_region() {
    let model = small_model(ConstraintMode::SShaped, 24);
    let d = model.n_free();
    // tent peaking at M-index 10, i.e. free position 8
    let mean = DVector::from_fn(d, |i, _| 1.0 - (i as f64 - 7.0).abs() / d as f64);
    let g = GaussianParams::new(mean, DMatrix::identity(d, d) * 1e-6).unwrap();
    let lp = region_log_probabilities(&model, &g, 1024, 1, &[]);
    let top = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = lp.iter().map(|l| (l - top).exp()).sum();
    assert!((lp[10 - 3] - top).exp() / total > 0.99);
}

fn check_invariants(model: &Model, samples: &PosteriorSamples) {
    let basis = model.basis.as_ref().unwrap();
    let (lo, hi) = (basis.lower(), basis.upper());
    for s in &samples.states {
        for k in 0..model.n_biomarkers() {
            let g = &s.gamma[k];
            match model.mode() {
                ConstraintMode::SShaped => {
                    let peak = s.peaks[model.group_of[k]];
                    assert!(region_membership(g, peak).unwrap());
                    let n = g.len();
                    assert_eq!([g[0], g[1], g[n - 2], g[n - 1]], [0.0; 4]);
                }
                _ => assert!(g.iter().all(|v| *v >= 0.0)),
            }
            for i in 0..500 {
                let t = lo + (hi - lo) * i as f64 / 499.0;
                assert!(basis.derivative(g, t) >= -1e-10);
            }
        }
    }
}

#[test]
fn chain_is_deterministic_and_keeps_constraints() {
    for mode in [ConstraintMode::SShaped, ConstraintMode::MonotoneOnly] {
        let model = small_model(mode, 12);
        let cfg = SamplerConfig {
            n_iter: 60,
            burn_in: 20,
            seed: 42,
            n_mc: 256,
            ..SamplerConfig::default()
        };
        let a = run_chain(&cfg, &model).unwrap();
        let b = run_chain(&cfg, &model).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 40);
        check_invariants(&model, &a);
        let other = run_chain(&SamplerConfig { seed: 43, ..cfg }, &model).unwrap();
        assert_ne!(a.states, other.states);
    }
}

#[test]
fn logistic_chain_is_deterministic() {
    let model = small_model(ConstraintMode::LogisticParametric, 24);
    let cfg = SamplerConfig {
        n_iter: 100,
        burn_in: 50,
        seed: 5,
        ..SamplerConfig::default()
    };
    let a = run_chain(&cfg, &model).unwrap();
    assert_eq!(a, run_chain(&cfg, &model).unwrap());
    assert!(a
        .states
        .iter()
        .all(|s| s.logistic.iter().all(|c| c.c > 0.0 && c.s > 0.0 && c.h > 0.0)));
}

#[test]
fn binary_roundtrip_preserves_states() {
    let model = small_model(ConstraintMode::SShaped, 10);
    let cfg = SamplerConfig {
        n_iter: 30,
        burn_in: 10,
        seed: 1,
        n_mc: 128,
        ..SamplerConfig::default()
    };
    let s = run_chain(&cfg, &model).unwrap();
    let mut buf = Vec::new();
    s.write_binary(&mut buf).unwrap();
    let back = PosteriorSamples::read_binary(buf.as_slice()).unwrap();
    assert_eq!(back.states, s.states);
    assert_eq!(back.iterations, s.iterations);
    assert!(PosteriorSamples::read_binary(&buf[..buf.len() - 3]).is_err());
}

/// With the data removed the chain targets the joint prior. At M = 8 the
/// prior is simulated directly: hyperparameters from their exponential
/// hyperprior, coefficients by rejection from the Gaussian restricted to
/// the union of cones.
#[test]
fn prior_only_chain_matches_direct_prior_simulation() {
    let mut model = small_model(ConstraintMode::SShaped, 8);
    for obs in model.design.obs.iter_mut() {
        obs.clear();
    }
    for g in model.design.gram.iter_mut() {
        g.fill(0.0);
    }
    for c in model.design.counts.iter_mut() {
        c.fill(0);
    }
    let cfg = SamplerConfig {
        n_iter: 42_000,
        burn_in: 2_000,
        thin: 4,
        seed: 8,
        n_mc: 1024,
        ..SamplerConfig::default()
    };
    let chain = run_chain(&cfg, &model).unwrap();
    // 1-based
    let free = model.free_indices().to_vec();
    let d = free.len();

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let rate = 1.0 / (2.0 * model.config.hyper_scale.powi(2));
    let exp = Exp::new(rate).unwrap();
    let n_direct = 20_000;
    let mut direct_s = Vec::with_capacity(n_direct);
    let mut direct_gamma = vec![Vec::with_capacity(n_direct); d];
    let mut direct_peak = vec![0usize; model.regions.len()];
    while direct_s.len() < n_direct {
        let (s2s, s2v) = (exp.sample(&mut rng), exp.sample(&mut rng));
        let prec = model.prior_precision(s2s, s2v).unwrap();
        let l = prec.covariance().cholesky().unwrap().l();
        loop {
            let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let g = (&l * z).iter().copied().collect::<Vec<_>>();
            if let Some(r) = model.regions.iter().position(|reg| reg.contains_free(&g)) {
                direct_s.push(s2s);
                for j in 0..d {
                    direct_gamma[j].push(g[j]);
                }
                direct_peak[r] += 1;
                break;
            }
        }
    }

    let chain_s: Vec<f64> = chain.states.iter().map(|s| s.sigma2_s).collect();
    let ks = ks_distance(chain_s, direct_s);
    assert!(ks < 0.05, "sigma2_s KS {ks}");
    for j in 0..d {
        let c: Vec<f64> = chain.states.iter().map(|s| s.gamma[0][free[j] - 1]).collect();
        let (m, se) = batch_mean_se(&c, 50);
        let r = &direct_gamma[j];
        let mr = r.iter().sum::<f64>() / r.len() as f64;
        let ser = (r.iter().map(|x| (x - mr).powi(2)).sum::<f64>() / (r.len() * r.len()) as f64).sqrt();
        let tol = 4.0 * (se * se + ser * ser).sqrt();
        assert!((m - mr).abs() < tol, "gamma[{}]: {m} vs {mr} (tol {tol})", free[j]);
    }
    for (r, count) in direct_peak.iter().enumerate() {
        let p = *count as f64 / n_direct as f64;
        let ind: Vec<f64> = chain
            .states
            .iter()
            .map(|s| (s.peaks[0] == r + 3) as u8 as f64)
            .collect();
        let (m, se) = batch_mean_se(&ind, 50);
        let tol = 4.0 * (se * se + p * (1.0 - p) / n_direct as f64).sqrt() + 0.005;
        assert!((m - p).abs() < tol, "peak {}: {m} vs {p}", r + 3);
    }
}

fn ks_distance(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0_f64);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

fn batch_mean_se(xs: &[f64], batches: usize) -> (f64, f64) {
    let size = xs.len() / batches;
    let means: Vec<f64> = xs
        .chunks(size)
        .take(batches)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let v = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (batches as f64 - 1.0);
    (m, (v / batches as f64).sqrt())
}
