use kbarrier::config::{CaseStudyConfig, BUILTIN_NAMES};
use kbarrier::dynamics::{collect_trajectory, DataDrivenModel, Dictionary, LinearDataModel, TruthModel};
use kbarrier::expr::Expr;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(rng: &mut impl Rng, cfg: &CaseStudyConfig) -> Vec<f64> {
    cfg.spec
        .state_space()
        .dims()
        .iter()
        .map(|d| rng.gen_range(d.lo()..=d.hi()))
        .collect()
}

fn inf_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn model_reproduces_truth_on_state_space() {
    for name in BUILTIN_NAMES {
        let cfg = CaseStudyConfig::builtin(name).unwrap();
        let truth = cfg.truth_model().unwrap();
        let (_, model) = cfg.build_model().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let worst = (0..1000)
            .map(|_| {
                let x = uniform(&mut rng, &cfg);
                inf_norm(&model.step(&x).unwrap(), &truth.step(&x).unwrap())
            })
            .fold(0.0, f64::max);
        assert!(worst <= 1e-8, "{name}: {worst:e}");
    }
}

#[test]
fn trajectory_columns_shift() {
    let cfg = CaseStudyConfig::builtin("polynomial").unwrap();
    let (traj, _) = cfg.build_model().unwrap();
    assert_eq!(traj.samples(), 6);
    assert_eq!(traj.x0.column(0).as_slice(), &[0.5, -2.0]);
    for i in 0..5 {
        assert_eq!(traj.x1.column(i), traj.x0.column(i + 1));
    }
    let dict = cfg.dictionary().unwrap();
    for (j, col) in traj.x0.column_iter().enumerate() {
        let x: Vec<f64> = col.iter().copied().collect();
        assert_eq!(traj.d0.column(j), dict.eval(&x).unwrap());
    }
}

#[test]
fn first_column_is_truth_step() {
    let cfg = CaseStudyConfig::builtin("highly-nonlinear").unwrap();
    let (traj, model) = cfg.build_model().unwrap();
    let truth = cfg.truth_model().unwrap();
    assert_eq!(traj.x0.column(0).as_slice(), &[0.5, -1.0]);
    let want = truth.step(&[0.5, -1.0]).unwrap();
    assert_eq!(traj.x1.column(0).as_slice(), want.as_slice());
    assert!(inf_norm(&model.step(&[0.5, -1.0]).unwrap(), &want) <= 1e-10);
}

#[test]
fn polynomial_right_inverse_residual() {
    let cfg = CaseStudyConfig::builtin("polynomial").unwrap();
    let (traj, model) = cfg.build_model().unwrap();
    let r = (&traj.d0 * model.q() - DMatrix::identity(5, 5)).amax();
    assert!(r <= 1e-8, "{r:e}");
}

#[test]
fn random_wide_matrices_have_right_inverses() {
    // four generic terms sampled at nine states
    let x = Expr::var(0);
    let y = Expr::var(1);
    let dict = Dictionary::new(vec![x.clone(), y.clone(), x.mul(&y), x.sin()], 2).unwrap();
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let states: Vec<Vec<f64>> = (0..10)
            .map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)])
            .collect();
        let traj = kbarrier::dynamics::TrajectoryData::from_states(&states, &dict).unwrap();
        assert_eq!(traj.d0.shape(), (4, 9));
        let model = DataDrivenModel::build(&traj, &dict).unwrap();
        let r = (&traj.d0 * model.q() - DMatrix::identity(4, 4)).amax();
        assert!(r <= 1e-8, "seed {seed}: {r:e}");
    }
}

#[test]
fn polynomial_origin_is_fixed() {
    let (_, model) = CaseStudyConfig::builtin("polynomial").unwrap().build_model().unwrap();
    let y = model.step(&[0.0, 0.0]).unwrap();
    assert!(y.iter().all(|v| v.abs() <= 1e-12), "{y:?}");
}

#[test]
fn three_steps_match_truth() {
    let cfg = CaseStudyConfig::builtin("polynomial").unwrap();
    let truth = cfg.truth_model().unwrap();
    let (_, model) = cfg.build_model().unwrap();
    let f3 = model.symbolic_k_step(3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let x = uniform(&mut rng, &cfg);
        let want = truth.iterate(&x, 3).unwrap();
        assert!(inf_norm(&model.k_step(&x, 3).unwrap(), &want) <= 1e-7);
        let sym: Vec<f64> = f3.iter().map(|e| e.eval_point(&x).unwrap()).collect();
        assert!(inf_norm(&sym, &want) <= 1e-7);
    }
}

#[test]
fn two_steps_are_bitwise_repeated_steps() {
    let (_, model) = CaseStudyConfig::builtin("pendulum").unwrap().build_model().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let twice = model.step(&model.step(&x).unwrap()).unwrap();
        assert_eq!(model.k_step(&x, 2).unwrap(), twice);
    }
}

#[test]
fn symbolic_composition_matches_two_steps() {
    for name in BUILTIN_NAMES {
        let (_, model) = CaseStudyConfig::builtin(name).unwrap().build_model().unwrap();
        let f1 = model.symbolic_step();
        let f2 = kbarrier::expr::substitute_all(&f1, &f1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let sym: Vec<f64> = f2.iter().map(|e| e.eval_point(&x).unwrap()).collect();
            let num = model.k_step(&x, 2).unwrap();
            let scale = num.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            assert!(inf_norm(&sym, &num) <= 1e-10 * scale, "{name}: {sym:?} vs {num:?}");
        }
    }
}

#[test]
fn symbolic_step_of_polynomial_is_quadratic() {
    let (_, model) = CaseStudyConfig::builtin("polynomial").unwrap().build_model().unwrap();
    for e in model.symbolic_step() {
        let p = kbarrier::poly::Polynomial::from_expr(&e, 2, 100).unwrap();
        assert!(p.degree() <= 2);
    }
}

#[test]
fn random_stable_two_by_two_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let a = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-0.7..0.7));
        let mut states = vec![vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]];
        for _ in 0..3 {
            let x = nalgebra::DVector::from_column_slice(states.last().unwrap());
            states.push((&a * x).iter().copied().collect());
        }
        let x0 = DMatrix::from_fn(2, 3, |i, j| states[j][i]);
        let x1 = DMatrix::from_fn(2, 3, |i, j| states[j + 1][i]);
        match LinearDataModel::build(&x0, &x1) {
            Ok(m) => assert!((m.a_hat() - &a).amax() <= 1e-8),
            // a start on an eigenvector does not excite both modes
            Err(kbarrier::Error::PersistencyOfExcitation { .. }) => {}
            Err(e) => panic!("{e}"),
        }
    }
}

#[test]
fn linear_model_agrees_with_state_dictionary() {
    let a = DMatrix::from_row_slice(2, 2, &[0.8, 0.3, -0.2, 0.9]);
    let step = vec![
        Expr::var(0).mul(&Expr::constant(0.8)).add(&Expr::var(1).mul(&Expr::constant(0.3))),
        Expr::var(0).mul(&Expr::constant(-0.2)).add(&Expr::var(1).mul(&Expr::constant(0.9))),
    ];
    let truth = TruthModel::new("linear", step, 1.0).unwrap();
    let dict = Dictionary::identity(2);
    let traj = collect_trajectory(&truth, &dict, &[1.0, 0.5], 4).unwrap();
    let general = DataDrivenModel::build(&traj, &dict).unwrap();
    let linear = LinearDataModel::build(&traj.x0, &traj.x1).unwrap();
    assert!((general.transition() - linear.a_hat()).amax() <= 1e-10);
    assert!((linear.a_hat() - &a).amax() <= 1e-10);
}

#[test]
fn linear_powers() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
    let m = LinearDataModel::from_matrix(a.clone());
    let x = [0.3, -0.7];
    let v = nalgebra::DVector::from_column_slice(&x);
    let one: Vec<f64> = (&a * &v).iter().copied().collect();
    assert_eq!(m.k_step(&x, 1).unwrap(), one);
    let four = &a * (&a * (&a * (&a * &v)));
    let got = m.k_step(&x, 4).unwrap();
    assert!(got.iter().zip(four.iter()).all(|(g, w)| (g - w).abs() <= 1e-12));
}

#[test]
#[should_panic(expected = "k must be >= 1")]
fn zero_step_power_rejected() {
    LinearDataModel::from_matrix(DMatrix::identity(2, 2)).power(0);
}

#[test]
fn zero_trajectory_is_rank_deficient() {
    let x0 = DMatrix::zeros(2, 3);
    let err = LinearDataModel::build(&x0, &x0).unwrap_err();
    assert!(matches!(err, kbarrier::Error::PersistencyOfExcitation { .. }), "{err}");
}
