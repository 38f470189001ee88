use nalgebra::{DMatrix, DVector};
use paris_rml::kalman::{self, fd_score, kalman_score_step, log_likelihood, total_score, KalmanState, LgssmSpec};
use paris_rml::{Purpose, Streams};
use rand::Rng;

const SEED: u64 = 77;

fn random_spec(k: usize) -> LgssmSpec {
    let mut rng = Streams::new(SEED).stream(0, k, Purpose::Test);
    let mut u = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
    LgssmSpec::new(u(-0.9, 0.9), u(0.1, 2.0), u(0.3, 2.0), u(0.1, 2.0)).unwrap()
}

fn dense_loglik(spec: &LgssmSpec, y: &[f64]) -> f64 {
    let n = y.len();
    let p0 = spec.sigma2 / (1.0 - spec.phi * spec.phi);
    let c2 = spec.obs_coef * spec.obs_coef;
    let cov = DMatrix::from_fn(n, n, |i, j| {
        c2 * p0 * spec.phi.powi(i.abs_diff(j) as i32) + if i == j { spec.beta2 } else { 0.0 }
    });
    let chol = cov.cholesky().expect("covariance is positive definite");
    let yv = DVector::from_column_slice(y);
    let z = chol.l().solve_lower_triangular(&yv).unwrap();
    let logdet: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + z.norm_squared())
}

#[test]
fn loglik_matches_dense_gaussian() {
    for k in 0..8 {
        let spec = random_spec(k);
        let (_, y) = kalman::simulate(&spec, 49, SEED + k as u64).unwrap();
        let diff = (log_likelihood(&spec, &y).unwrap() - dense_loglik(&spec, &y)).abs();
        assert!(diff < 1e-8, "seed {SEED} instance {k}: {diff}");
    }
}

#[test]
fn score_matches_central_differences_of_dense_loglik() {
    for k in 0..5 {
        let spec = random_spec(100 + k);
        let (_, y) = kalman::simulate(&spec, 99, SEED + 100 + k as u64).unwrap();
        let s = total_score(&spec, &y).unwrap();
        let h = 1e-5;
        let base = [spec.phi, spec.sigma2, spec.beta2];
        for a in 0..3 {
            let shift = |d: f64| {
                let mut v = base;
                v[a] += d;
                LgssmSpec::new(v[0], v[1], spec.obs_coef, v[2]).unwrap()
            };
            let fd = (dense_loglik(&shift(h), &y) - dense_loglik(&shift(-h), &y)) / (2.0 * h);
            let rel = (s[a] - fd).abs() / s[a].abs().max(fd.abs()).max(1e-6);
            assert!(rel < 1e-4, "seed {SEED} instance {k} component {a}: {} vs {fd}", s[a]);
        }
        let f = fd_score(&spec, &y, 1e-5).unwrap();
        for a in 0..3 {
            assert!((s[a] - f[a]).abs() / s[a].abs().max(1e-6) < 1e-4);
        }
    }
}

#[test]
fn decoupled_observation_score() {
    let spec = LgssmSpec::new(0.5, 0.7, 0.0, 0.4).unwrap();
    let st = KalmanState::stationary(&spec);
    let y = 1.3;
    let step = kalman_score_step(&st, y, &spec).unwrap();
    let want = -1.0 / (2.0 * 0.4) + y * y / (2.0 * 0.4 * 0.4);
    assert!((step.score[2] - want).abs() < 1e-14);
    assert!((step.loglik - (-0.5 * ((2.0 * std::f64::consts::PI * 0.4).ln() + y * y / 0.4))).abs() < 1e-14);
    assert_eq!(step.score[0], 0.0);
    assert_eq!(step.score[1], 0.0);
}

#[test]
fn fd_rejects_zero_step() {
    let spec = LgssmSpec::new(0.5, 0.7, 1.0, 0.4).unwrap();
    assert!(fd_score(&spec, &[0.1, 0.2], 0.0).is_err());
}
