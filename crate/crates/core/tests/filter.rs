mod common;

use common::{mean_var, tv_distance};
use paris_rml::filter::{init_cloud, propagate, weight_cloud, ParticleCloud, Resampling};
use paris_rml::kalman::{self, kalman_step, KalmanState, LgssmSpec};
use paris_rml::sampling::WeightVector;
use paris_rml::{LgssmModel, ParameterVector, Streams, SvModel};

const SEED: u64 = 5;

/// Root mean squared error of the particle predictive mean against the
/// Kalman predictive mean, averaged over steps and seeds.
fn predictive_rmse(n: usize, seeds: usize) -> f64 {
    let spec = LgssmSpec::new(0.9, 0.3, 1.0, 0.5).unwrap();
    let theta = ParameterVector::new(spec.theta().to_vec()).unwrap();
    let m = LgssmModel::new(1.0);
    let (_, y) = kalman::simulate(&spec, 60, SEED).unwrap();
    let mut exact = Vec::new();
    let mut ks = KalmanState::stationary(&spec);
    for &v in &y {
        ks = kalman_step(&ks, v, &spec).unwrap().0;
        exact.push(ks.mean);
    }
    let mut se = 0.0;
    let mut count = 0.0;
    for s in 0..seeds {
        let streams = Streams::new(Streams::new(SEED).child_seed(s));
        let mut cloud = init_cloud(&m, &theta, n, &streams).unwrap();
        for (t, &v) in y.iter().enumerate() {
            let w = weight_cloud(&cloud, v, &theta, &m).unwrap();
            cloud = propagate(&w, &theta, &m, &streams, Resampling::Multinomial).unwrap().0;
            let est = cloud.positions().iter().sum::<f64>() / n as f64;
            se += (est - exact[t]).powi(2);
            count += 1.0;
        }
    }
    (se / count).sqrt()
}

#[test]
fn predictive_mean_error_shrinks_at_monte_carlo_rate() {
    let ns = [100usize, 400, 1600];
    let r: Vec<f64> = ns.iter().map(|&n| predictive_rmse(n, 20)).collect();
    let slope = (r[2] / r[0]).ln() / (16f64).ln();
    eprintln!("seed {SEED}: rmse {r:?}, slope {slope}");
    assert!(r[0] > r[1] && r[1] > r[2]);
    assert!((-0.7..-0.3).contains(&slope), "slope {slope}");
}

#[test]
fn multinomial_ancestors_follow_weights() {
    let w = vec![0.05, 0.4, 0.0, 0.25, 0.3];
    let cloud = ParticleCloud::with_weights(vec![0.0; 5], WeightVector::new(w.clone()).unwrap(), 3).unwrap();
    let theta = ParameterVector::new(vec![0.8, 0.1, 1.0]).unwrap();
    let mut counts = vec![0u64; 5];
    for s in 0..4000 {
        let (_, anc) =
            propagate(&cloud, &theta, &SvModel::default(), &Streams::new(s), Resampling::Multinomial).unwrap();
        anc.into_iter().for_each(|a| counts[a] += 1);
    }
    assert_eq!(counts[2], 0);
    assert!(tv_distance(&counts, &w) < 0.01);
}

#[test]
fn systematic_offspring_counts_are_floor_or_ceil() {
    let w = vec![0.05, 0.4, 0.0, 0.25, 0.3];
    let cloud = ParticleCloud::with_weights(vec![0.0; 5], WeightVector::new(w.clone()).unwrap(), 0).unwrap();
    let theta = ParameterVector::new(vec![0.8, 0.1, 1.0]).unwrap();
    for s in 0..200 {
        let (_, anc) =
            propagate(&cloud, &theta, &SvModel::default(), &Streams::new(s), Resampling::Systematic).unwrap();
        for (j, &wj) in w.iter().enumerate() {
            let c = anc.iter().filter(|&&a| a == j).count() as f64;
            assert!(c >= (5.0 * wj).floor() && c <= (5.0 * wj).ceil());
        }
    }
}

#[test]
fn propagation_draws_from_transition_kernel() {
    let theta = ParameterVector::new(vec![0.8, 0.1, 1.0]).unwrap();
    let cloud = ParticleCloud::from_positions(vec![1.5; 20_000], 0).unwrap();
    let (next, _) =
        propagate(&cloud, &theta, &SvModel::default(), &Streams::new(SEED), Resampling::Multinomial).unwrap();
    assert!(next.weights().is_uniform());
    let (m, v) = mean_var(next.positions());
    assert!((m - 1.2).abs() < 4.0 * (0.1f64 / 20_000.0).sqrt(), "mean {m}");
    assert!((v - 0.1).abs() < 0.005, "var {v}");
}
