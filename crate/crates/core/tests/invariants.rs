//! Cross-module properties on concrete records.

use std::sync::Arc;

use forgetting::bounds::{auto_coupling_width, default_beta_tilde, gaussian_constants, index_drift};
use forgetting::coupling::{estimate_tail, simulate_coupled, CouplingSetSpec};
use forgetting::model::sample_path;
use forgetting::{make_preset, PresetParams, PriorSpec, SmoothingPipeline};

fn gaussian_pipeline(n: usize, seed: u64) -> SmoothingPipeline {
    let model = make_preset("gaussian-ar", &PresetParams::new()).unwrap();
    let grid = Arc::new(model.default_grid().unwrap());
    let ys = sample_path(&model, &PriorSpec::Gaussian { mean: 0.0, sd: 1.0 }, n, seed).unwrap().observations;
    SmoothingPipeline::new(&model, grid, ys).unwrap()
}

#[test]
fn residual_drift_stays_below_closed_form_rho() {
    for seed in [11, 12, 13] {
        let pipe = gaussian_pipeline(6, seed);
        let p = pipe.model().gaussian_params().unwrap();
        let bt = default_beta_tilde(&p);
        let c = auto_coupling_width(&p, bt).unwrap();
        let g = gaussian_constants(&p, c, bt).unwrap();
        let set = CouplingSetSpec::Tube { c };
        // The last index has no backward factor and is outside the closed form.
        for k in 0..pipe.n() - 1 {
            let d = index_drift(&pipe.forward_kernel(k).unwrap(), pipe.grid(), &set).unwrap();
            assert!(d.rho() <= g.rho + 1e-6, "seed {seed} k {k}: rho {} > {}", d.rho(), g.rho);
            assert!(d.epsilon >= g.epsilon - 1e-6, "seed {seed} k {k}: eps {} < {}", d.epsilon, g.epsilon);
        }
    }
}

#[test]
fn coupled_runs_are_reproducible() {
    let pipe = gaussian_pipeline(8, 5);
    let grid = pipe.grid().clone();
    let xi = PriorSpec::Gaussian { mean: -3.0, sd: 1.0 }.to_prob_vector(grid.clone()).unwrap();
    let xi2 = PriorSpec::Gaussian { mean: 3.0, sd: 1.0 }.to_prob_vector(grid).unwrap();
    let set = CouplingSetSpec::Tube { c: 2.5 };
    let a = simulate_coupled(&pipe, &xi, &xi2, 1, &set, 64, 9).unwrap();
    let b = simulate_coupled(&pipe, &xi, &xi2, 1, &set, 64, 9).unwrap();
    let c = simulate_coupled(&pipe, &xi, &xi2, 1, &set, 64, 10).unwrap();
    let key = |r: &forgetting::coupling::CoupledRun| -> Vec<(Vec<usize>, Vec<usize>, Option<usize>)> {
        r.traces.iter().map(|t| (t.x.clone(), t.x_prime.clone(), t.coupling_time)).collect()
    };
    assert_eq!(key(&a), key(&b));
    assert_ne!(key(&a), key(&c));
    // Coupled chains stay together.
    for t in &a.traces {
        if let Some(tc) = t.coupling_time {
            assert!(t.x[tc..].iter().zip(&t.x_prime[tc..]).all(|(x, y)| x == y));
        }
    }
}

#[test]
fn tail_estimate_is_non_increasing_in_horizon() {
    let pipe = gaussian_pipeline(12, 21);
    let grid = pipe.grid().clone();
    let xi = PriorSpec::Gaussian { mean: -3.0, sd: 1.0 }.to_prob_vector(grid.clone()).unwrap();
    let xi2 = PriorSpec::Gaussian { mean: 3.0, sd: 1.0 }.to_prob_vector(grid).unwrap();
    let run = simulate_coupled(&pipe, &xi, &xi2, 1, &CouplingSetSpec::FullSpace, 200, 4).unwrap();
    let tails: Vec<f64> = (1..=12).map(|n| estimate_tail(&run.traces, n, 1).unwrap().p_hat).collect();
    assert!(tails.windows(2).all(|w| w[1] <= w[0]), "{tails:?}");
}
