mod common;

use common::{sv_grad_log_g, sv_grad_log_q};
use paris_rml::oracle::gradient_checks;
use paris_rml::{ConstraintSet, LgssmModel, ParameterVector, StateSpaceModel, SvModel};
use proptest::prelude::*;
use rand::Rng;

fn theta(v: [f64; 3]) -> ParameterVector {
    ParameterVector::new(v.to_vec()).unwrap()
}

proptest! {
    #[test]
    fn sv_gradients_match_closed_form(
        phi in -0.95f64..0.95, s2 in 0.05f64..2.0, b2 in 0.1f64..3.0,
        x in -3.0f64..3.0, xn in -3.0f64..3.0, y in -4.0f64..4.0,
    ) {
        let m = SvModel::default();
        let th = theta([phi, s2, b2]);
        let mut out = [0.0; 3];
        m.grad_log_transition(&th, x, xn, &mut out);
        let want = sv_grad_log_q(th.as_slice(), x, xn);
        for k in 0..3 {
            prop_assert!((out[k] - want[k]).abs() <= 1e-12 * want[k].abs().max(1.0));
        }
        m.grad_log_emission(&th, x, y, &mut out);
        let want = sv_grad_log_g(th.as_slice(), x, y);
        for k in 0..3 {
            prop_assert!((out[k] - want[k]).abs() <= 1e-12 * want[k].abs().max(1.0));
        }
    }

    #[test]
    fn lgssm_emission_gradient_matches_fd(
        phi in -0.95f64..0.95, s2 in 0.05f64..2.0, b2 in 0.1f64..3.0,
        c in 0.2f64..2.0, x in -3.0f64..3.0, y in -4.0f64..4.0,
    ) {
        let m = LgssmModel::new(c);
        let th = [phi, s2, b2];
        let mut out = [0.0; 3];
        m.grad_log_emission(&theta(th), x, y, &mut out);
        let h = 1e-6;
        for k in 0..3 {
            let (mut a, mut b) = (th, th);
            a[k] += h;
            b[k] -= h;
            let fd = (m.log_emission_density(&theta(a), x, y) - m.log_emission_density(&theta(b), x, y)) / (2.0 * h);
            prop_assert!((out[k] - fd).abs() / out[k].abs().max(fd.abs()).max(1e-3) < 1e-4);
        }
    }
}

#[test]
fn oracle_gradient_suites_pass() {
    for c in gradient_checks(&SvModel::default(), "sv", 300, 17).into_iter().chain(gradient_checks(
        &LgssmModel::new(0.7),
        "lgssm",
        300,
        17,
    )) {
        assert!(c.pass, "{c:?}");
    }
}

/// SV model whose transition score has the wrong sign in the `phi` component.
struct SignFlipped(SvModel);

impl StateSpaceModel for SignFlipped {
    fn id(&self) -> &'static str {
        "sv-flipped"
    }
    fn param_names(&self) -> &'static [&'static str] {
        self.0.param_names()
    }
    fn constraints(&self) -> &ConstraintSet {
        self.0.constraints()
    }
    fn validate(&self, theta: &ParameterVector) -> paris_rml::Result<()> {
        self.0.validate(theta)
    }
    fn sample_initial<R: Rng + ?Sized>(&self, theta: &ParameterVector, rng: &mut R) -> f64 {
        self.0.sample_initial(theta, rng)
    }
    fn sample_transition<R: Rng + ?Sized>(&self, theta: &ParameterVector, x: f64, rng: &mut R) -> f64 {
        self.0.sample_transition(theta, x, rng)
    }
    fn transition_density(&self, theta: &ParameterVector, x: f64, x_next: f64) -> f64 {
        self.0.transition_density(theta, x, x_next)
    }
    fn transition_sup(&self, theta: &ParameterVector) -> f64 {
        self.0.transition_sup(theta)
    }
    fn emission_density(&self, theta: &ParameterVector, x: f64, y: f64) -> f64 {
        self.0.emission_density(theta, x, y)
    }
    fn grad_log_emission(&self, theta: &ParameterVector, x: f64, y: f64, out: &mut [f64]) {
        self.0.grad_log_emission(theta, x, y, out)
    }
    fn grad_log_transition(&self, theta: &ParameterVector, x: f64, x_next: f64, out: &mut [f64]) {
        self.0.grad_log_transition(theta, x, x_next, out);
        out[0] = -out[0];
    }
}

#[test]
fn sign_flip_fails_the_matching_check_only() {
    let checks = gradient_checks(&SignFlipped(SvModel::default()), "flipped", 100, 3);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    assert_eq!(failed, vec!["flipped_grad_log_transition_vs_fd"]);
}
