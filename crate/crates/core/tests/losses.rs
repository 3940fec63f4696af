use activepinn::autodiff::{loss_gradient, ScalarObjective};
use activepinn::datagen::{
    sample_collocation, sample_faces, sample_observations, stream, Face, Layout, ManufacturedCase,
};
use activepinn::exec::ExecMode;
use activepinn::losses::*;
use activepinn::networks::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model(dim: usize, field: bool, lift: bool) -> Model {
    let window = (dim == 4).then_some((0.16, 0.35));
    let u = DisplacementNet {
        mlp: Mlp::new(MlpSpec {
            input_dim: dim,
            hidden: vec![8, 6],
            output_dim: 3,
            residual_input_to_output: false,
            init_seed: 0,
        })
        .unwrap(),
        scaling: InputScaling::cube(window),
        lift: lift.then_some(Lift::Zero),
    };
    let sa = if field {
        let f = FourierEmbedding::new(3, 1.0, 4).unwrap();
        SaModel::Field(ParameterNet {
            mlp: Mlp::new(MlpSpec {
                input_dim: f.output_dim(),
                hidden: vec![5],
                output_dim: 1,
                residual_input_to_output: false,
                init_seed: 0,
            })
            .unwrap(),
            scaling: InputScaling::cube(None),
            fourier: Some(f),
            constraint: OutputConstraint::Interval {
                min: 0.1,
                max: 200.0,
                alpha: 1.0,
            },
        })
    } else {
        SaModel::Scalar { initial: 90.0 }
    };
    Model { u, sa }
}

fn small_params(m: &Model, seed: u64) -> Vec<f64> {
    let mut p = m.init(seed);
    for v in &mut p[..m.n_u()] {
        *v *= 0.3;
    }
    p
}

fn case_sets(
    case: &ManufacturedCase,
    n_obs: usize,
    n_pde: usize,
    n_bcn: usize,
    strain: bool,
    seed: u64,
) -> PointSets {
    let data = sample_observations(case, n_obs, Layout::Random, 0.02, strain, seed).unwrap();
    let col = sample_collocation(n_pde, n_bcn, case.window(), seed).unwrap();
    PointSets {
        obs: data.obs,
        pde: case.pde_set(col.pde).unwrap(),
        bcn: case.bcn_set(col.bcn, col.normals),
        bcd: None,
        robin: None,
    }
}

fn weights() -> LossWeights {
    LossWeights {
        lambda_obs: 3.0,
        lambda_strain: 0.7,
        lambda_pde: 0.2,
        lambda_bcn: 0.05,
        lambda_bcd: 2.0,
        lambda_robin: 0.3,
        lambda_w: 1e-3,
        lambda_reg: 0.01,
        ..LossWeights::default()
    }
}

fn physics(case: &ManufacturedCase) -> Physics {
    Physics {
        mat: case.mat.clone(),
        rho: case.rho(),
        activation: case.time.as_ref().map(|t| t.curve.clone()),
    }
}

fn compare(
    problem: &Problem,
    sets: &PointSets,
    w: &LossWeights,
    mult: Option<&[f64]>,
    params: &[f64],
) {
    let fast = problem.evaluate(params, sets, w, mult, true).unwrap();
    let obj = Objective {
        model: &problem.model,
        physics: &problem.physics,
        sets,
        weights: w,
        multipliers: mult,
    };
    let reference = obj.eval(params);
    assert!(
        (fast.loss - reference).abs() <= 1e-10 * reference.abs().max(1.0),
        "loss {} vs {}",
        fast.loss,
        reference
    );
    let g = loss_gradient(&obj, params).unwrap();
    let scale = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    assert!(scale > 0.0 && fast.grad[problem.model.n_u()..].iter().any(|v| *v != 0.0));
    for (i, (a, b)) in fast.grad.iter().zip(&g).enumerate() {
        assert!((a - b).abs() <= 1e-8 * scale, "component {i}: {a} vs {b}");
    }
}

#[test]
fn batched_gradient_matches_tape_scalar_quasi_static() {
    let case = ManufacturedCase::homogeneous(118.08).unwrap();
    let sets = case_sets(&case, 20, 7, 11, true, 1);
    let m = model(3, false, true);
    let problem = Problem::new(m.clone(), physics(&case));
    compare(&problem, &sets, &weights(), None, &small_params(&m, 5));
}

#[test]
fn batched_gradient_matches_tape_field_with_attention() {
    let case =
        ManufacturedCase::scar("one-scar", activepinn::datagen::ScarProfile::one_scar()).unwrap();
    let sets = case_sets(&case, 9, 6, 10, true, 2);
    let m = model(3, true, true);
    let mut problem = Problem::new(m.clone(), physics(&case));
    problem.chunk = 4;
    let mult: Vec<f64> = (0..6).map(|i| 0.1 * i as f64).collect();
    compare(
        &problem,
        &sets,
        &weights(),
        Some(&mult),
        &small_params(&m, 6),
    );
}

#[test]
fn batched_gradient_matches_tape_time_dependent() {
    let case = ManufacturedCase::time_dependent(
        &activepinn::activation::BcsParams::default(),
        activepinn::datagen::AmplitudeField::Constant { value: 200.0 },
        (0.16, 0.35),
    )
    .unwrap();
    let sets = case_sets(&case, 8, 5, 10, false, 3);
    for field in [false, true] {
        let m = model(4, field, true);
        let problem = Problem::new(m.clone(), physics(&case));
        compare(&problem, &sets, &weights(), None, &small_params(&m, 7));
    }
}

#[test]
fn batched_gradient_matches_tape_weak_and_spring_boundaries() {
    let case = ManufacturedCase::robin_support(118.08).unwrap();
    let mut sets = case_sets(&case, 6, 4, 5, false, 4);
    let (pts, normals) = sample_faces(6, &[Face::YMinus], None, 4, stream::ROBIN);
    sets.robin = Some(case.robin_set(pts.clone(), normals, 1.0, 0.5));
    sets.bcd = Some(case.bcd_set(pts));
    let m = model(3, true, false);
    let problem = Problem::new(m.clone(), physics(&case));
    compare(&problem, &sets, &weights(), None, &small_params(&m, 8));
}

#[test]
fn parallel_and_sequential_agree_bitwise() {
    let case = ManufacturedCase::homogeneous(118.08).unwrap();
    let sets = case_sets(&case, 200, 64, 40, true, 5);
    let m = model(3, true, true);
    let p = small_params(&m, 9);
    let par = Problem::new(m.clone(), physics(&case)).with_exec(ExecMode::Parallel);
    let seq = Problem::new(m, physics(&case)).with_exec(ExecMode::Sequential);
    let a = par.evaluate(&p, &sets, &weights(), None, true).unwrap();
    let b = seq.evaluate(&p, &sets, &weights(), None, true).unwrap();
    assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    assert!(a
        .grad
        .iter()
        .zip(&b.grad)
        .all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(a.residuals, b.residuals);
}

#[test]
fn total_equals_sum_of_independent_terms() {
    let case = ManufacturedCase::homogeneous(118.08).unwrap();
    let mut sets = case_sets(&case, 30, 12, 15, true, 6);
    let (pts, normals) = sample_faces(5, &[Face::YMinus], None, 6, stream::ROBIN);
    sets.robin = Some(case.robin_set(pts.clone(), normals, 1.0, 1.0));
    sets.bcd = Some(case.bcd_set(pts));
    let m = model(3, true, true);
    let p = small_params(&m, 10);
    let w = weights();
    let phys = physics(&case);
    let ev = Problem::new(m.clone(), phys.clone())
        .evaluate(&p, &sets, &w, None, false)
        .unwrap();
    let parts = loss_obs(&m, &p, &sets.obs, w.lambda_obs).unwrap()
        + loss_strain(&m, &p, &sets.obs, w.lambda_strain).unwrap()
        + loss_pde(&m, &phys, &p, &sets.pde, None, w.lambda_pde).unwrap()
        + loss_bcn(&m, &phys, &p, &sets.bcn, w.lambda_bcn).unwrap()
        + loss_bcd(&m, &p, sets.bcd.as_ref().unwrap(), w.lambda_bcd).unwrap()
        + loss_robin(&m, &phys, &p, sets.robin.as_ref().unwrap(), w.lambda_robin).unwrap()
        + w.lambda_reg * reg_parameter_gradient(&m, &p, &sets.bcn)
        + reg_weight_decay(&p, w.lambda_w);
    assert!(
        (ev.loss - parts).abs() < 1e-12 * parts.abs().max(1.0),
        "{} vs {}",
        ev.loss,
        parts
    );
}

#[test]
fn observation_loss_hand_values_and_naive_oracle() {
    // Zero network output: the loss is the mean squared target norm.
    let m = model(3, false, false);
    let mut p = m.init(1);
    for v in &mut p[..m.n_u()] {
        *v = 0.0;
    }
    let n = 7;
    let obs = ObsSet {
        points: (0..n).map(|i| vec![0.1 * i as f64, 0.0, 0.0]).collect(),
        u: vec![[1.0, 0.0, 0.0]; n],
        strain: None,
    };
    assert_eq!(loss_obs(&m, &p, &obs, 1.0).unwrap(), 1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = m.init(3);
    let obs = ObsSet {
        points: (0..25)
            .map(|_| (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect())
            .collect(),
        u: (0..25)
            .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
            .collect(),
        strain: None,
    };
    let mut naive = 0.0;
    for (x, t) in obs.points.iter().zip(&obs.u) {
        let u = forward_displacement(&m, &p, x);
        for a in 0..3 {
            naive += (u[a] - t[a]) * (u[a] - t[a]);
        }
    }
    naive /= 25.0;
    assert!((loss_obs(&m, &p, &obs, 1.0).unwrap() - naive).abs() < 1e-12);
    assert_eq!(
        loss_obs(&m, &p, &ObsSet::default(), 1.0),
        Err(LossError::Empty("obs"))
    );
}

#[test]
fn strain_loss_vanishes_for_matching_targets_and_requires_channel() {
    let m = model(3, false, true);
    let p = small_params(&m, 4);
    let pts: Vec<Vec<f64>> = vec![vec![1.0, 2.0, -1.0], vec![-3.0, 0.5, 4.0]];
    let strain = pts
        .iter()
        .map(|x| {
            let j = activepinn::autodiff::spatial_jacobian(&UMap(&m, &p), x).unwrap();
            let f: [f64; 9] = std::array::from_fn(|k| {
                j.grad[k / 3][k % 3] + if k / 3 == k % 3 { 1.0 } else { 0.0 }
            });
            let c =
                |i: usize, jj: usize| f[i] * f[jj] + f[3 + i] * f[3 + jj] + f[6 + i] * f[6 + jj];
            [
                0.5 * (c(0, 0) - 1.0),
                0.5 * (c(1, 1) - 1.0),
                0.5 * (c(2, 2) - 1.0),
                0.5 * c(0, 1),
                0.5 * c(0, 2),
                0.5 * c(1, 2),
            ]
        })
        .collect();
    let obs = ObsSet {
        u: pts
            .iter()
            .map(|x| forward_displacement(&m, &p, x))
            .collect(),
        points: pts,
        strain: Some(strain),
    };
    assert!(loss_strain(&m, &p, &obs, 1.0).unwrap() < 1e-28);
    let bare = ObsSet {
        strain: None,
        ..obs
    };
    assert_eq!(
        loss_strain(&m, &p, &bare, 1.0),
        Err(LossError::MissingStrain)
    );
}

struct UMap<'a>(&'a Model, &'a [f64]);

impl activepinn::autodiff::SpatialMap for UMap<'_> {
    fn input_dim(&self) -> usize {
        3
    }
    fn eval<R: activepinn::autodiff::Real>(&self, x: &[R]) -> Vec<R> {
        let lifted: Vec<R> = self.0.split(self.1).0.iter().map(|&v| R::cst(v)).collect();
        self.0.u.eval_generic::<R, R>(&lifted, x).to_vec()
    }
}

#[test]
fn zero_attention_silences_the_residual() {
    let case = ManufacturedCase::homogeneous(118.08).unwrap();
    let sets = case_sets(&case, 10, 8, 5, false, 7);
    let m = model(3, false, true);
    let p = small_params(&m, 2);
    let w = LossWeights::only(Term::Pde);
    let ev = Problem::new(m, physics(&case))
        .evaluate(&p, &sets, &w, Some(&[0.0; 8]), true)
        .unwrap();
    assert_eq!(ev.loss, 0.0);
    assert!(ev.terms.pde > 0.0);
    assert!(ev.grad.iter().all(|&g| g == 0.0));
}

#[test]
fn zero_state_zero_force_gives_zero_residual() {
    let m = model(3, false, false);
    let mut p = m.init(0);
    p.iter_mut().for_each(|v| *v = 0.0);
    let pde = PdeSet {
        points: vec![vec![0.5, -2.0, 1.0]],
        body: vec![[0.0; 3]],
    };
    let phys = Physics::quasi_static(Default::default());
    assert_eq!(loss_pde(&m, &phys, &p, &pde, None, 1.0).unwrap(), 0.0);
    let bcn = BcnSet {
        points: vec![vec![5.0, 0.0, 0.0]],
        normals: vec![[1.0, 0.0, 0.0]],
        pressure: vec![0.0],
        traction: vec![[0.0; 3]],
        omega: vec![1.0],
    };
    assert_eq!(loss_bcn(&m, &phys, &p, &bcn, 1.0).unwrap(), 0.0);
    let silenced = BcnSet {
        omega: vec![0.0],
        traction: vec![[3.0, 1.0, 0.0]],
        ..bcn
    };
    assert_eq!(loss_bcn(&m, &phys, &p, &silenced, 1.0).unwrap(), 0.0);
}

#[test]
fn gradient_regularizer_constant_and_linear_fields() {
    // One-layer parameter network `σ(α (w·x̂ + b))` with no hidden units:
    // the gradient is α σ' w / 5 by the chain rule.
    let mut m = model(3, true, false);
    let spec = MlpSpec {
        input_dim: 3,
        hidden: vec![],
        output_dim: 1,
        residual_input_to_output: false,
        init_seed: 0,
    };
    let (min, max, alpha) = (0.0, 100.0, 0.5);
    m.sa = SaModel::Field(ParameterNet {
        mlp: Mlp::new(spec).unwrap(),
        scaling: InputScaling::cube(None),
        fourier: None,
        constraint: OutputConstraint::Interval { min, max, alpha },
    });
    let n_u = m.n_u();
    let mut p = m.init(0);
    let w = [0.3, -0.2, 0.1];
    let b = 0.05;
    p[n_u..n_u + 3].copy_from_slice(&w);
    p[n_u + 3] = b;
    let x = vec![5.0, 1.0, -2.0];
    let bcn = BcnSet {
        points: vec![x.clone()],
        normals: vec![[1.0, 0.0, 0.0]],
        pressure: vec![0.0],
        traction: vec![[0.0; 3]],
        omega: vec![0.25],
    };
    let z = (w[0] * x[0] + w[1] * x[1] + w[2] * x[2]) / 5.0 + b;
    let s = 1.0 / (1.0 + (-alpha * z).exp());
    let slope = (max - min) * alpha * s * (1.0 - s) / 5.0;
    let expected = 0.75 * slope * slope * (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]);
    assert!((reg_parameter_gradient(&m, &p, &bcn) - expected).abs() < 1e-8 * expected);

    p[n_u..n_u + 3].copy_from_slice(&[0.0; 3]);
    assert_eq!(reg_parameter_gradient(&m, &p, &bcn), 0.0);
}

#[test]
fn weight_decay_values() {
    assert_eq!(reg_weight_decay(&[0.0; 4], 1.0), 0.0);
    assert_eq!(reg_weight_decay(&[0.0, 1.0, 0.0], 1.0), 1.0);
    let v: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
    let naive: f64 = v.iter().map(|x| x * x).sum::<f64>() * 0.3;
    assert!((reg_weight_decay(&v, 0.3) - naive).abs() < 1e-12);
}

#[test]
fn attention_converges_to_geometric_fixed_point() {
    let cfg = RbaConfig {
        enabled: true,
        gamma: 0.9,
        eta_star: 0.05,
        lambda0: 0.01,
        update_interval: 5,
    };
    let e = [0.2, 1.0, 0.5, 0.0];
    let mut s = RbaState::new(4, &cfg);
    for _ in 0..2000 {
        s.update(&e);
    }
    for (l, ei) in s.multipliers.iter().zip(e) {
        let fixed = (cfg.eta_star * ei / 1.0 + cfg.lambda0) / (1.0 - cfg.gamma);
        assert!((l - fixed).abs() < 1e-10, "{l} vs {fixed}");
    }
    let mut z = RbaState::new(3, &RbaConfig::default());
    z.update(&[0.0; 3]);
    assert_eq!(z.multipliers, vec![0.0; 3]);
    let fires: Vec<usize> = (0..20).filter(|&k| s.due(k)).collect();
    assert_eq!(fires, vec![0, 5, 10, 15]);
}

#[test]
fn point_set_validation_catches_bad_normals() {
    let case = ManufacturedCase::homogeneous(118.08).unwrap();
    let mut sets = case_sets(&case, 5, 5, 5, false, 8);
    assert!(sets.validate(3).is_ok());
    sets.bcn.normals[0] = [1.0, 1.0, 0.0];
    assert!(matches!(sets.validate(3), Err(LossError::InvalidSet(_))));
}

proptest! {
    #[test]
    fn rebalance_equalizes_weighted_norms(norms in prop::collection::vec(1e-3f64..1e3, 2..6), prev in 0.0f64..10.0) {
        let current = vec![prev; norms.len()];
        let l = adaptive_rebalance(&norms, &current, 1.0);
        let prod: Vec<f64> = l.iter().zip(&norms).map(|(a, b)| a * b).collect();
        let lo = prod.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = prod.iter().cloned().fold(0.0, f64::max);
        prop_assert!((hi - lo) / hi < 1e-12);
    }

    #[test]
    fn loss_scales_linearly_in_its_weight(c in 0.0f64..50.0) {
        let m = model(3, false, false);
        let p = m.init(4);
        let obs = ObsSet { points: vec![vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 4.0]], u: vec![[0.1, 0.2, 0.3]; 2], strain: None };
        let base = loss_obs(&m, &p, &obs, 1.0).unwrap();
        let scaled = loss_obs(&m, &p, &obs, c).unwrap();
        prop_assert!(base >= 0.0);
        prop_assert!((scaled - c * base).abs() <= 1e-12 * (1.0 + c * base));
    }

    #[test]
    fn omega_is_a_monotone_ramp(y1 in -5.0f64..5.0, y2 in -5.0f64..5.0) {
        let (a, b) = if y1 <= y2 { (y1, y2) } else { (y2, y1) };
        let wa = boundary_weight_omega(&[0.0, a, 0.0]);
        let wb = boundary_weight_omega(&[0.0, b, 0.0]);
        prop_assert!((0.0..=1.0).contains(&wa) && wa <= wb);
    }
}
