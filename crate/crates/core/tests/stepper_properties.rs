use std::f64::consts::PI;
use std::sync::Arc;

use chemofv::field::ScalarField;
use chemofv::grid::Grid;
use chemofv::motility::{builtin_motility, Motility};
use chemofv::stepper::{
    self, CgSettings, ModelParams, Observer, OutputSchedule, State, StepControl, StepRecord,
};
use proptest::prelude::*;

fn grid1(n: usize, l: f64) -> Arc<Grid> {
    Arc::new(Grid::new(&[n], &[l]).unwrap())
}

#[derive(Default)]
struct Steps(Vec<(f64, f64, f64)>);

impl Observer for Steps {
    fn on_step(&mut self, prev: &State, next: &State, r: &StepRecord) {
        self.0.push((r.dt, prev.mass(), next.mass()));
    }
}

#[test]
fn heat_regime_follows_the_discrete_decay_factor() {
    let (n, len, dt) = (64usize, 1.0, 2e-4);
    let g = grid1(n, len);
    let h = len / n as f64;
    let lambda = 4.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
    let state = State::new(
        ScalarField::zeros(g.clone()),
        ScalarField::from_fn(g.clone(), |x| 1.0 + 0.5 * (PI * x[0]).cos()),
        0.0,
    )
    .unwrap();
    let params = ModelParams::new(2.0, 0.0, 1).unwrap();
    let phi = builtin_motility("exp_decay", &[1.0]).unwrap();
    let mut control = StepControl::for_initial(&state.u, dt, 1e-12);
    control.cg.tol = 1e-14;
    let mut traj = stepper::Trajectory::default();
    let t_end = 0.05;
    let fin = stepper::advance(state, &params, &phi, &mut control, OutputSchedule { dt_out: 0.01 }, t_end, &mut traj)
        .unwrap();
    let expected_amp = 0.5 * traj.steps.iter().map(|r| 1.0 / (1.0 + r.dt * lambda)).product::<f64>();
    for i in 0..n {
        let exact = 1.0 + expected_amp * (PI * g.center(i)[0]).cos();
        assert!((fin.v.values()[i] - exact).abs() < 1e-9);
    }
    assert!(fin.u.values().iter().all(|&u| u == 0.0));
    let continuous = 0.5 * (-PI * PI * t_end).exp();
    assert!((expected_amp - continuous).abs() / continuous < 0.01);
}

fn barenblatt(x: f64, t: f64) -> f64 {
    (t.powf(-1.0 / 3.0) * (1.0 - x * x / (12.0 * t.powf(2.0 / 3.0)))).max(0.0)
}

#[test]
fn porous_medium_regime_tracks_barenblatt() {
    let (n, len) = (128usize, 16.0);
    let g = grid1(n, len);
    let u0 = ScalarField::from_fn(g.clone(), |x| barenblatt(x[0] - 8.0, 1.0));
    let state = State::new(u0.clone(), ScalarField::zeros(g.clone()), 1.0).unwrap();
    let params = ModelParams::new(2.0, 0.0, 1).unwrap();
    let phi = builtin_motility("constant", &[1.0]).unwrap();
    let mut control = StepControl::for_initial(&u0, 0.1, 1e-14);
    let mut steps = Steps::default();
    let fin = stepper::advance(state, &params, &phi, &mut control, OutputSchedule { dt_out: 1.0 }, 2.0, &mut steps)
        .unwrap();
    let h = len / n as f64;
    let err: f64 = (0..n).map(|i| (fin.u.values()[i] - barenblatt(g.center(i)[0] - 8.0, 2.0)).abs()).sum::<f64>() * h;
    assert!(err / u0.integral() < 0.01, "relative L1 error {err}");
    let drift = (fin.mass() - u0.integral()).abs() / u0.integral();
    assert!(drift < 1e-13);
    assert!(fin.u.min() >= 0.0);
}

fn random_state(n: usize, u: Vec<f64>, v: Vec<f64>) -> State {
    let g = grid1(n, 1.0);
    State::new(ScalarField::new(g.clone(), u).unwrap(), ScalarField::new(g, v).unwrap(), 0.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn one_step_conserves_mass_and_respects_bounds(
        u in proptest::collection::vec(0.05f64..2.0, 24),
        v in proptest::collection::vec(0.0f64..3.0, 24),
        m in 1.2f64..3.5,
        eps in prop_oneof![Just(0.0), 1e-4f64..1e-2],
    ) {
        let state = random_state(24, u, v);
        let params = ModelParams::new(m, eps, 1).unwrap();
        let phi = builtin_motility("exp_decay", &[0.7]).unwrap();
        let control = StepControl::for_initial(&state.u, 1.0, 1e-14);
        let dt = stepper::stable_dt(&state, &params, &phi, &control);
        let u1 = stepper::step_u_explicit(&state, &params, &phi, dt, f64::INFINITY).unwrap();
        let (v1, _) = stepper::step_v_implicit(&state, &params, dt, &CgSettings { tol: 1e-14, max_iter: None }).unwrap();
        let m0 = state.mass();
        prop_assert!((u1.integral() - m0).abs() <= 1e-13 * m0);
        prop_assert!(v1.max() <= state.v.max() * (1.0 + 1e-12));
        prop_assert!(v1.min() >= -1e-14 * state.v.max());
        // Under the stable step the update is a convex combination at ε = 0.
        if eps == 0.0 {
            prop_assert!(u1.min() >= -1e-12 * state.u.max());
        }
    }

    #[test]
    fn mirror_image_evolves_as_the_mirror_image(
        u in proptest::collection::vec(0.05f64..2.0, 20),
        v in proptest::collection::vec(0.1f64..3.0, 20),
    ) {
        let mut ur = u.clone();
        ur.reverse();
        let mut vr = v.clone();
        vr.reverse();
        let a = random_state(20, u, v);
        let b = random_state(20, ur, vr);
        let params = ModelParams::new(2.0, 1e-3, 1).unwrap();
        let phi = builtin_motility("exp_decay", &[1.0]).unwrap();
        let settings = CgSettings { tol: 1e-14, max_iter: None };
        let control = StepControl::for_initial(&a.u, 1.0, 1e-14);
        let dt = stepper::stable_dt(&a, &params, &phi, &control);
        let ua = stepper::step_u_explicit(&a, &params, &phi, dt, f64::INFINITY).unwrap();
        let ub = stepper::step_u_explicit(&b, &params, &phi, dt, f64::INFINITY).unwrap();
        let (va, _) = stepper::step_v_implicit(&a, &params, dt, &settings).unwrap();
        let (vb, _) = stepper::step_v_implicit(&b, &params, dt, &settings).unwrap();
        for i in 0..20 {
            prop_assert!((ua.values()[i] - ub.values()[19 - i]).abs() <= 1e-12);
            prop_assert!((va.values()[i] - vb.values()[19 - i]).abs() <= 1e-10);
        }
    }
}

#[test]
fn spatially_uniform_state_only_consumes_signal() {
    let g = Arc::new(Grid::new(&[6, 5], &[1.0, 1.0]).unwrap());
    let state = State::new(ScalarField::constant(g.clone(), 0.5), ScalarField::constant(g, 2.0), 0.0).unwrap();
    let params = ModelParams::new(2.0, 0.0, 2).unwrap();
    let phi = builtin_motility("exp_decay", &[1.0]).unwrap();
    let dt = 0.01;
    let u1 = stepper::step_u_explicit(&state, &params, &phi, dt, 0.0).unwrap();
    let (v1, _) = stepper::step_v_implicit(&state, &params, dt, &CgSettings { tol: 1e-14, max_iter: None }).unwrap();
    assert!(u1.values().iter().all(|&x| x == 0.5));
    let expected = 2.0 / (1.0 + dt * 0.5);
    assert!(v1.values().iter().all(|&x| (x - expected).abs() < 1e-13));
}

#[test]
fn undershooting_below_dt_min_is_nonconvergence() {
    // A sharp bump in v with ε > 0 pushes u below zero wherever u = 0.
    let g = grid1(32, 1.0);
    let u0 = ScalarField::from_fn(g.clone(), |x| if x[0] < 0.5 { 1.0 } else { 0.0 });
    let v0 = ScalarField::from_fn(g.clone(), |x| 1.0 + (-(x[0] - 0.75).powi(2) / 0.002).exp());
    let state = State::new(u0.clone(), v0, 0.0).unwrap();
    let params = ModelParams::new(2.0, 0.5, 1).unwrap();
    let phi: Motility = builtin_motility("exp_decay", &[4.0]).unwrap();
    let mut control = StepControl::for_initial(&u0, 1e-3, 1e-3);
    control.tol_neg = 0.0;
    let err = stepper::simulate(state, &params, &phi, &mut control, OutputSchedule { dt_out: 0.1 }, 0.1).unwrap_err();
    assert!(matches!(err, chemofv::StepError::NonConvergence { .. }), "{err}");
}
