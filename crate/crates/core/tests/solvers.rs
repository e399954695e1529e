use nalgebra::DVector;

use zobilevel::problems::{make_quadratic, QuadraticFamily};
use zobilevel::solver_jh::{jh_schedule, run_jh, DeskCaps, JhConfig, JhTuning};
use zobilevel::solver_penalty::{penalty_schedule, run_penalty, PenaltyTuning};
use zobilevel::{BilevelProblem, Point, RngStream};

fn setup() -> (BilevelProblem, Point, DeskCaps) {
    let spec = QuadraticFamily::new(4, 4, 3).with_noise(0.01).generate().unwrap();
    let (p, _) = make_quadratic(&spec).unwrap();
    let start = Point::new(DVector::from_element(4, 1.0), DVector::zeros(4)).unwrap();
    let caps = DeskCaps {
        inner_iterations: Some(128),
        batch_size: Some(50),
        hessinv_iterations: Some(300),
        outer_iterations: Some(400),
    };
    (p, start, caps)
}

#[test]
fn penalty_run_shrinks_hypergradient_and_is_reproducible() {
    let (p, start, caps) = setup();
    let mut cfg = penalty_schedule(4, 4, 0.1, p.constants.as_ref(), &PenaltyTuning::default(), &caps, None).unwrap();
    cfg.outer_iterations = 300;
    let a = run_penalty(&p, &cfg, &start, &RngStream::new(9)).unwrap();
    let b = run_penalty(&p, &cfg, &start, &RngStream::new(9)).unwrap();
    assert_eq!(a.trace.records, b.trace.records);
    let (g0, g1) = (a.trace.initial_hypergrad_norm().unwrap(), a.trace.final_hypergrad_norm().unwrap());
    assert!(g1 < 0.3 * g0, "{g0} -> {g1}");
}

#[test]
fn jh_run_shrinks_hypergradient() {
    let (p, start, caps) = setup();
    let mut cfg = jh_schedule(4, 4, 0.1, p.constants.as_ref().unwrap(), &JhTuning::default(), &caps).unwrap();
    cfg.outer_iterations = 300;
    let out = run_jh(&p, &cfg, &start, &RngStream::new(9)).unwrap();
    let (g0, g1) = (out.trace.initial_hypergrad_norm().unwrap(), out.trace.final_hypergrad_norm().unwrap());
    assert!(g1 < 0.5 * g0, "{g0} -> {g1}");
}

#[test]
fn solver_config_survives_json() {
    let (p, _, caps) = setup();
    let cfg = jh_schedule(4, 4, 0.1, p.constants.as_ref().unwrap(), &JhTuning::default(), &caps).unwrap();
    let back: JhConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(back, cfg);
}
