use stlbnn::bnn::{from_logspace, init_params, to_logspace};
use stlbnn::experiments::{build_experiment, ControlMode, ExperimentConfig, Problem, Split, Task};
use stlbnn::trainer::{condition_gradient, eval_satisfaction, loss_gradient, to_logspace_gradient, train};

fn small_static() -> ExperimentConfig {
    let mut cfg = build_experiment("static").unwrap();
    if let Task::Static { axis, .. } = &mut cfg.task {
        axis.count = 2;
    }
    cfg.solver = cfg.solver.clone().with_tolerances(1e-11, 1e-13);
    cfg
}

#[test]
fn loss_gradient_matches_central_differences() {
    let cfg = small_static();
    let problem = Problem::new(cfg.clone(), Split::Train).unwrap();
    let mut params = init_params(&cfg.network.shape().unwrap(), 5).unwrap();
    params.globals = cfg.network.globals;
    let theta = params.trainable(false);
    let lg = loss_gradient(&problem, &params, false).unwrap();
    assert!(lg.eval.loss() > 0.0, "needs violated conditions to be meaningful");

    let analytic = to_logspace_gradient(&lg.grad, &theta);
    let base = to_logspace(&theta).unwrap();
    let loss = |x: &[f64]| {
        let mut p = params.clone();
        p.set_trainable(&from_logspace(x).unwrap(), false).unwrap();
        eval_satisfaction(&p, &problem, ControlMode::Closed).unwrap().loss()
    };
    let h = 1e-4;
    for i in 0..base.len() {
        let mut x = base.clone();
        x[i] += h;
        let up = loss(&x);
        x[i] -= 2.0 * h;
        let down = loss(&x);
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-4);
        assert!(
            (analytic[i] - numeric).abs() / scale < 1e-4,
            "coordinate {i}: analytic {} numeric {numeric}",
            analytic[i]
        );
    }
}

#[test]
fn satisfied_conditions_have_zero_loss_gradient() {
    let cfg = small_static();
    let problem = Problem::new(cfg.clone(), Split::Train).unwrap();
    let params = init_params(&cfg.network.shape().unwrap(), 5).unwrap();
    let theta = params.trainable(false);
    let eval = eval_satisfaction(&params, &problem, ControlMode::Closed).unwrap();
    let lg = loss_gradient(&problem, &params, false).unwrap();
    let mut expect = vec![0.0; theta.len()];
    for c in (0..problem.len()).filter(|&c| eval.rhos[c] <= 0.0) {
        let (rho, g) = condition_gradient(&problem, &params, &theta, false, c, ControlMode::Closed).unwrap();
        assert!((rho - eval.rhos[c]).abs() < 1e-9);
        for (e, v) in expect.iter_mut().zip(g) {
            *e -= v;
        }
    }
    assert_eq!(lg.grad, expect);
}

#[test]
fn short_training_reduces_loss() {
    let mut cfg = small_static();
    cfg.solver = build_experiment("static").unwrap().solver;
    cfg.optimizer.iterations = 40;
    let report = train(&cfg, 5).unwrap();
    let first = report.history[0].loss;
    assert!(report.final_loss < first, "{} -> {}", first, report.final_loss);
    assert!(report.params.trainable(false).iter().all(|&p| p > -1e-5));
}
