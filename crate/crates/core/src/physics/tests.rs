use approx::assert_relative_eq;

use super::*;
use crate::opnet::{init_model, InverseSpec, OperatorSpec, Variant};

fn tiny_spec(inverse: Option<InverseSpec>) -> OperatorSpec {
    OperatorSpec {
        branch_layers: vec![3, 3, 2],
        trunk_layers: vec![2, 3, 2],
        latent_p: 2,
        use_fourier: true,
        fourier_modes: 2,
        variant: Variant::Morephy,
        inverse,
    }
}

fn zero_model(problem: &Problem) -> (OperatorModel, Vec<f64>) {
    let spec = OperatorSpec {
        branch_layers: vec![3, 3, 2],
        trunk_layers: vec![2, 3, 2],
        latent_p: 2,
        use_fourier: false,
        fourier_modes: 1,
        variant: Variant::PiDon,
        inverse: None,
    };
    let mut m = init_model(&spec, 1).unwrap();
    m.params.values_mut().fill(0.0);
    let (lo, hi) = problem.x_domain();
    let kappa: Vec<f64> =
        (0..3).map(|i| problem.initial_value(lo + (hi - lo) * i as f64 / 2.0)).collect();
    (m, kappa)
}

fn small_colloc(problem: &Problem, n_int: usize) -> CollocationSet {
    let (lo, hi) = problem.x_domain();
    let interior: Vec<(f64, f64)> = (0..n_int)
        .map(|i| {
            let f = (i as f64 + 0.5) / n_int as f64;
            (lo + (hi - lo) * f, 0.15 + 0.8 * ((i * 7 % n_int) as f64 / n_int as f64))
        })
        .collect();
    let boundary: Vec<(f64, f64)> = (0..6)
        .flat_map(|i| {
            let t = (i as f64 + 0.5) / 6.0;
            [(lo, t), (hi, t)]
        })
        .collect();
    let initial: Vec<f64> = (0..8).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / 8.0).collect();
    CollocationSet { interior, boundary, initial, history_divisions: 8 }
}

#[test]
fn forcing_vanishes_on_the_axes() {
    for t in [0.0, 0.3, 1.0] {
        assert_relative_eq!(forcing_tfmdwe(0.0, t, 0.5).unwrap(), 0.0, epsilon = 1e-14);
    }
    for x in [0.0, 1.0, 3.0] {
        assert_relative_eq!(forcing_tfmdwe(x, 0.0, 0.7).unwrap(), 0.0, epsilon = 1e-14);
    }
}

#[test]
fn forcing_at_midpoint() {
    // x = pi/2, t = 1, alpha = 1/2 -> 6/Gamma(3.5) + 1.
    let expected = 6.0 / gamma_fn(3.5).unwrap() + 1.0;
    let got = forcing_tfmdwe(std::f64::consts::FRAC_PI_2, 1.0, 0.5).unwrap();
    assert_relative_eq!(got, expected, max_relative = 1e-12);
    assert_relative_eq!(got, 2.8054, max_relative = 1e-3);
    assert!(forcing_tfmdwe(4.0, 0.5, 0.5).is_err());
    assert!(forcing_tfmdwe(1.0, 2.0, 0.5).is_err());
}

#[test]
fn data_loss_examples() {
    let problem = Problem::Burgers { nu: 0.01 / std::f64::consts::PI };
    let (model, kappa) = zero_model(&problem);

    // Perfect fit: labels equal predictions.
    let pts = [(0.2, 0.3), (-0.5, 0.7)];
    let labels: Vec<f64> = pts.iter().map(|&(x, t)| model.predict(&kappa, &[x, t]).unwrap()).collect();
    let l = data_loss(&model, &kappa, DataBatch { points: &pts, labels: &labels }).unwrap();
    assert_relative_eq!(l, 0.0, epsilon = 1e-14);

    // Single point: prediction 1 (b0 = 1), label 3 -> squared error 4.
    let mut one = model.clone();
    let b0_off = one.params.layout().segment("b0").unwrap().offset;
    one.params.values_mut()[b0_off] = 1.0;
    let l = data_loss(&one, &kappa, DataBatch { points: &[(0.1, 0.1)], labels: &[3.0] }).unwrap();
    assert_relative_eq!(l, 4.0, epsilon = 1e-14);

    // Four points against a brute-force sum.
    let model = init_model(&tiny_spec(None), 5).unwrap();
    let kappa = vec![0.4, -0.2, 0.9];
    let pts = [(0.1, 0.2), (0.5, 0.8), (-0.3, 0.4), (0.9, 0.9)];
    let labels = [0.5, -1.0, 0.25, 2.0];
    let mut acc = 0.0;
    for (p, l) in pts.iter().zip(&labels) {
        let u = model.predict(&kappa, &[p.0, p.1]).unwrap();
        acc += (u - l) * (u - l);
    }
    let want = acc / 4.0;
    let got = data_loss(&model, &kappa, DataBatch { points: &pts, labels: &labels }).unwrap();
    assert_relative_eq!(got, want, max_relative = 1e-13);

    assert!(data_loss(&model, &kappa, DataBatch { points: &[], labels: &[] }).is_err());
}

#[test]
fn burgers_residual_on_analytic_fields() {
    let nu = 0.01 / std::f64::consts::PI;
    // Constant field: all derivatives vanish.
    let c = ClosureField(|_x: Jet2, _t: Jet2| Jet2::constant(2.5));
    assert_eq!(residual_burgers(&c, (0.3, 0.6), nu).unwrap(), 0.0);
    // u(x, t) = x: residual reduces to u u_x = x.
    let lin = ClosureField(|x: Jet2, _t: Jet2| x);
    for xv in [-0.7, 0.0, 0.4] {
        assert_relative_eq!(residual_burgers(&lin, (xv, 0.5), nu).unwrap(), xv, epsilon = 1e-14);
    }
}

#[test]
fn burgers_residual_of_constant_model_is_exactly_zero() {
    let problem = Problem::Burgers { nu: 0.01 / std::f64::consts::PI };
    let (mut model, kappa) = zero_model(&problem);
    let b0_off = model.params.layout().segment("b0").unwrap().offset;
    model.params.values_mut()[b0_off] = 0.75;
    let bound = BoundModel { model: &model, kappa: &kappa };
    for &(x, t) in &[(0.1, 0.2), (-0.6, 0.9), (0.5, 0.55)] {
        assert_eq!(residual_burgers(&bound, (x, t), problem.pde_param()).unwrap(), 0.0);
    }
}

#[test]
fn tfmdwe_residual_on_analytic_fields() {
    let alpha = 0.5;
    // Zero field: residual is -f.
    let zero = ClosureField(|_x: Jet2, _t: Jet2| Jet2::constant(0.0));
    let (x, t) = (1.1, 0.8);
    let r = residual_tfmdwe(&zero, (x, t), alpha, t / 32.0).unwrap();
    assert_relative_eq!(r, -forcing_tfmdwe(x, t, alpha).unwrap(), epsilon = 1e-12);

    // Time-independent u = sin(x): Caputo term 0, u_xx = -sin x,
    // so the residual is sin(x) - f(x, t).
    let sinx = ClosureField(|x: Jet2, _t: Jet2| x.sin());
    let r = residual_tfmdwe(&sinx, (x, t), alpha, t / 32.0).unwrap();
    assert_relative_eq!(
        r,
        x.sin() - forcing_tfmdwe(x, t, alpha).unwrap(),
        epsilon = 1e-10
    );
}

#[test]
fn tfmdwe_exact_solution_has_small_residual() {
    // u = t^3 sin x solves the PDE with the stated forcing for every alpha;
    // the leftover is the L1 discretization error, O(dt^{2 - alpha}).
    let exact = ClosureField(|x: Jet2, t: Jet2| t.powi(3) * x.sin());
    for alpha in [0.25, 0.5, 0.75] {
        for &(x, t) in &[(0.8, 0.4), (2.0, 0.9), (1.4, 1.0)] {
            let r = residual_tfmdwe(&exact, (x, t), alpha, 1.0 / 512.0).unwrap();
            assert!(r.abs() < 5e-3, "alpha {alpha} at ({x},{t}): residual {r}");
        }
    }
}

#[test]
fn ibc_loss_examples() {
    // Zero model on the fractional problem satisfies both conditions exactly.
    let tf = Problem::Tfmdwe { alpha: 0.5 };
    let (mz, kz) = zero_model(&tf);
    let col = small_colloc(&tf, 4);
    let l = ibc_loss(&mz, &kz, &col.boundary, &col.initial, &tf).unwrap();
    assert_relative_eq!(l, 0.0, epsilon = 1e-14);

    // Zero model on Burgers: boundary exact, initial misses -sin(pi x), so
    // the loss tends to the dense-grid average of sin^2(pi x) = 1/2.
    let bu = Problem::Burgers { nu: 0.01 / std::f64::consts::PI };
    let (mz, kz) = zero_model(&bu);
    let initial: Vec<f64> = (0..400).map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / 400.0).collect();
    let boundary: Vec<(f64, f64)> = (0..10).map(|i| (1.0, 0.1 * i as f64)).collect();
    let l = ibc_loss(&mz, &kz, &boundary, &initial, &bu).unwrap();
    assert_relative_eq!(l, 0.5, max_relative = 1e-2);

    assert!(ibc_loss(&mz, &kz, &[], &initial, &bu).is_err());
}

#[test]
fn composite_loss_examples_and_properties() {
    let obj = ObjectiveVector { l_data: 0.1, l_pde: 0.2, l_bc: 0.3 };
    assert_relative_eq!(composite_loss(&obj, &LossWeights::unit()), 0.6);
    assert_relative_eq!(composite_loss(&obj, &LossWeights::data_only()), 0.1);
    let obj1 = ObjectiveVector { l_data: 1.0, l_pde: 1.0, l_bc: 1.0 };
    let w = LossWeights { w_data: 2.0, w_pde: 3.0, w_bc: 4.0 };
    assert_relative_eq!(composite_loss(&obj1, &w), 9.0);

    // Linear in weights, monotone in each component.
    let wa = LossWeights { w_data: 0.5, w_pde: 1.5, w_bc: 2.5 };
    let wb = LossWeights { w_data: 1.5, w_pde: 0.5, w_bc: 0.5 };
    let wsum = LossWeights {
        w_data: wa.w_data + wb.w_data,
        w_pde: wa.w_pde + wb.w_pde,
        w_bc: wa.w_bc + wb.w_bc,
    };
    assert_relative_eq!(
        composite_loss(&obj, &wsum),
        composite_loss(&obj, &wa) + composite_loss(&obj, &wb),
        max_relative = 1e-14
    );
    let bumped = ObjectiveVector { l_data: obj.l_data + 0.05, ..obj };
    assert!(composite_loss(&bumped, &wa) > composite_loss(&obj, &wa));
}

#[test]
fn objective_vector_of_zero_model_on_tfmdwe() {
    let tf = Problem::Tfmdwe { alpha: 0.5 };
    let (mz, kz) = zero_model(&tf);
    let col = small_colloc(&tf, 12);
    let pts: Vec<(f64, f64)> = (0..10).map(|i| (0.3 + 0.25 * i as f64 % 2.8, 0.5)).collect();
    let labels: Vec<f64> = pts.iter().map(|&(x, t)| t * t * t * x.sin()).collect();
    let obj = objective_vector(
        &mz,
        &kz,
        DataBatch { points: &pts, labels: &labels },
        &col,
        &tf,
        None,
    )
    .unwrap();
    assert_relative_eq!(obj.l_bc, 0.0, epsilon = 1e-14);
    let mean_f2: f64 = col
        .interior
        .iter()
        .map(|&(x, t)| forcing_tfmdwe(x, t, 0.5).unwrap().powi(2))
        .sum::<f64>()
        / col.interior.len() as f64;
    assert_relative_eq!(obj.l_pde, mean_f2, max_relative = 1e-10);
    let mean_u2: f64 = labels.iter().map(|l| l * l).sum::<f64>() / labels.len() as f64;
    assert_relative_eq!(obj.l_data, mean_u2, max_relative = 1e-12);
}

#[test]
fn objective_vector_determinism_and_seeded_batches() {
    let bu = Problem::Burgers { nu: 0.01 / std::f64::consts::PI };
    let model = init_model(&tiny_spec(None), 11).unwrap();
    let kappa = vec![0.1, -0.5, 0.8];
    let col = small_colloc(&bu, 16);
    let pts: Vec<(f64, f64)> = (0..12).map(|i| (-0.9 + 0.15 * i as f64, 0.4)).collect();
    let labels: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
    let data = DataBatch { points: &pts, labels: &labels };

    let a = objective_vector(&model, &kappa, data, &col, &bu, None).unwrap();
    let b = objective_vector(&model, &kappa, data, &col, &bu, None).unwrap();
    assert_eq!(a, b);

    let bs = BatchSpec { n_data: 6, n_interior: 8, n_boundary: 4, n_initial: 4, seed: 99 };
    let a = objective_vector(&model, &kappa, data, &col, &bu, Some(&bs)).unwrap();
    let b = objective_vector(&model, &kappa, data, &col, &bu, Some(&bs)).unwrap();
    assert_eq!(a, b);
    let c = objective_vector(
        &model,
        &kappa,
        data,
        &col,
        &bu,
        Some(&BatchSpec { seed: 100, ..bs }),
    )
    .unwrap();
    assert_ne!(a, c, "different batch seeds should draw different subsets");
}

/// Central-difference check of the full composite gradient on toy models for
/// all four scenario shapes (both problems, forward and inverse).
#[test]
fn composite_gradient_matches_finite_differences() {
    let scenarios: Vec<(Problem, Option<InverseSpec>)> = vec![
        (Problem::Burgers { nu: 0.01 / std::f64::consts::PI }, None),
        (
            Problem::Burgers { nu: 0.01 / std::f64::consts::PI },
            Some(InverseSpec { prior_lo: 1e-3, prior_hi: 1e-2 }),
        ),
        (Problem::Tfmdwe { alpha: 0.5 }, None),
        (Problem::Tfmdwe { alpha: 0.5 }, Some(InverseSpec { prior_lo: 0.1, prior_hi: 0.9 })),
    ];
    for (problem, inverse) in scenarios {
        let model = init_model(&tiny_spec(inverse), 13).unwrap();
        let (lo, hi) = problem.x_domain();
        let kappa: Vec<f64> =
            (0..3).map(|i| problem.initial_value(lo + (hi - lo) * i as f64 / 2.0)).collect();
        let col = small_colloc(&problem, 6);
        let pts: Vec<(f64, f64)> =
            (0..5).map(|i| (lo + (hi - lo) * (i as f64 + 0.5) / 5.0, 0.6)).collect();
        let labels: Vec<f64> = (0..5).map(|i| 0.2 * (i as f64).cos()).collect();
        let data = DataBatch { points: &pts, labels: &labels };
        let w = LossWeights { w_data: 1.0, w_pde: 0.7, w_bc: 1.3 };

        let (_, grad) =
            grad_composite(&model, &kappa, data, &col, &problem, &w, None).unwrap();
        let eval = |params: &crate::diffkit::ParamVector| {
            let m = model.with_params(params.clone());
            let obj = objective_vector(&m, &kappa, data, &col, &problem, None).unwrap();
            composite_loss(&obj, &w)
        };
        let h = 1e-6;
        for i in 0..model.params.len() {
            let mut pl = model.params.clone();
            let mut ph = model.params.clone();
            pl.values_mut()[i] -= h;
            ph.values_mut()[i] += h;
            let fd = (eval(&ph) - eval(&pl)) / (2.0 * h);
            let tol = 1e-5 * (1.0 + grad[i].abs().max(fd.abs()));
            assert!(
                (grad[i] - fd).abs() <= tol,
                "{} inverse={} param {i}: analytic {} vs fd {}",
                problem.name(),
                model.params.layout().inverse_slot().is_some(),
                grad[i],
                fd
            );
        }
    }
}

#[test]
fn data_only_weights_skip_residual_machinery() {
    // A collocation set with an interior point outside the domain would make
    // residual construction fail; pure data weights must never touch it.
    let bu = Problem::Burgers { nu: 0.01 };
    let model = init_model(&tiny_spec(None), 3).unwrap();
    let kappa = vec![0.0, 0.1, 0.2];
    let col = CollocationSet {
        interior: vec![(f64::NAN, f64::NAN)],
        boundary: vec![(1.0, 0.5)],
        initial: vec![0.0],
        history_divisions: 4,
    };
    let pts = [(0.0, 0.5)];
    let labels = [0.3];
    let data = DataBatch { points: &pts, labels: &labels };
    let w = LossWeights::data_only();
    assert!(grad_composite(&model, &kappa, data, &col, &bu, &w, None).is_ok());
}

#[test]
fn collocation_validation() {
    let bu = Problem::Burgers { nu: 0.01 };
    let bad = CollocationSet {
        interior: vec![(1.5, 0.5)],
        boundary: vec![],
        initial: vec![],
        history_divisions: 4,
    };
    assert!(bad.validate(&bu).is_err());
    let ok = small_colloc(&bu, 4);
    assert!(ok.validate(&bu).is_ok());
    let grid = ok.history_grid(0.8);
    assert_eq!(grid.len(), ok.history_divisions + 1);
    assert_relative_eq!(grid[0], 0.0);
    assert_relative_eq!(*grid.last().unwrap(), 0.8);
}
