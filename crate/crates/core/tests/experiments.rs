use activepinn::activation::reconstruct_sigma0;
use activepinn::datagen::{AmplitudeField, ScarProfile, SA_HEALTHY, TD_WINDOW};
use activepinn::exec::ExecMode;
use activepinn::experiments::{
    best_threshold, build, classify_values, run_case, sweep_pareto, threshold_sweep, truth_labels,
    voxel_centers, weight_grid, Ablation, BcMode, CaseKind, ExperimentError, Label, Marker,
    PointCounts, ProblemSpec, WeightCell, PRESETS,
};
use activepinn::networks::HALF_SIDE;
use activepinn::training::Schedule;
use proptest::prelude::*;

fn tiny(id: &str) -> ProblemSpec {
    let mut s = ProblemSpec::preset(id).unwrap();
    s.u_hidden = vec![6];
    s.points = PointCounts {
        obs: 48,
        pde: 12,
        bcn: 12,
        bcd: 12,
        robin: 12,
        test_obs: 8,
        test_pde: 4,
        eval: 40,
        ..PointCounts::default()
    };
    s.schedule = Schedule {
        pretrain_adam: 5,
        pretrain_bfgs: 5,
        full_adam: 15,
        full_bfgs: 10,
        ..Schedule::default()
    };
    s
}

#[test]
fn perfect_prediction_has_zero_rates() {
    let field = AmplitudeField::Scar(ScarProfile::one_scar());
    let pts = voxel_centers(12);
    let pred: Vec<f64> = pts.iter().map(|p| field.sharp(p)).collect();
    let truth = truth_labels(&field, &pts);
    let r = classify_values(&pred, &truth, 50.0);
    assert_eq!((r.fpr, r.fnr, r.total), (0.0, 0.0, 0.0));
    assert!(r.tp > 0 && r.tn > 0);
    assert_eq!(r.tp + r.tn + r.fp + r.fn_, 12 * 12 * 12);
}

#[test]
fn healthy_prediction_misses_every_scar_voxel() {
    let field = AmplitudeField::Scar(ScarProfile::two_scar());
    let pts = voxel_centers(16);
    let truth = truth_labels(&field, &pts);
    let r = classify_values(&vec![SA_HEALTHY; pts.len()], &truth, 50.0);
    assert_eq!(r.fnr, 1.0);
    assert_eq!(r.fpr, 0.0);
    assert!(r
        .labels
        .iter()
        .all(|l| matches!(l, Label::FalseNegative | Label::TrueNegative)));
}

#[test]
fn labels_follow_the_confusion_table() {
    let r = classify_values(&[10.0, 10.0, 90.0, 90.0], &[true, false, true, false], 50.0);
    assert_eq!(
        r.labels,
        vec![
            Label::TruePositive,
            Label::FalsePositive,
            Label::FalseNegative,
            Label::TrueNegative
        ]
    );
    assert_eq!((r.fpr, r.fnr), (0.5, 0.5));
}

#[test]
fn voxel_grid_is_centered_in_the_cube() {
    let pts = voxel_centers(5);
    assert_eq!(pts.len(), 125);
    let h = 2.0 * HALF_SIDE / 5.0;
    assert!((pts[0][0] + HALF_SIDE - 0.5 * h).abs() < 1e-12);
    let mean: f64 = pts.iter().map(|p| p[0] + p[1] + p[2]).sum::<f64>() / 125.0;
    assert!(mean.abs() < 1e-12);
    assert!(pts.iter().flatten().all(|v| v.abs() < HALF_SIDE));
}

#[test]
fn best_threshold_takes_the_first_minimum() {
    let sweep = vec![
        (10.0, 0.0, 0.5),
        (20.0, 0.1, 0.1),
        (30.0, 0.2, 0.0),
        (40.0, 0.3, 0.0),
    ];
    assert_eq!(best_threshold(&sweep), Some(20.0));
    assert_eq!(best_threshold(&[]), None);
}

proptest! {
    #[test]
    fn sweep_is_monotone_in_each_rate(
        data in prop::collection::vec((0.0..150.0f64, any::<bool>()), 1..200),
    ) {
        let (pred, truth): (Vec<f64>, Vec<bool>) = data.into_iter().unzip();
        let ts: Vec<f64> = (1..=118).map(f64::from).collect();
        let sweep = threshold_sweep(&pred, &truth, &ts);
        for w in sweep.windows(2) {
            prop_assert!(w[1].1 >= w[0].1, "FPR decreased");
            prop_assert!(w[1].2 <= w[0].2, "FNR increased");
        }
        for &(_, a, b) in &sweep {
            prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
        }
        let r = classify_values(&pred, &truth, 50.0);
        prop_assert_eq!(r.tp + r.tn + r.fp + r.fn_, pred.len());
    }

    #[test]
    fn weight_fractions_sum_to_one(o in 1e-6..1e3f64, p in 1e-6..1e3f64, b in 0.0..1e3f64) {
        let c = WeightCell { lambda_obs: o, lambda_pde: p, lambda_bcn: b };
        let f = c.fractions();
        prop_assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(f.iter().all(|v| *v >= 0.0));
    }
}

#[test]
fn weight_grid_is_row_major() {
    let g = weight_grid(&[1.0, 10.0], &[0.1, 1.0, 10.0], 0.5);
    assert_eq!(g.len(), 6);
    assert_eq!((g[0].lambda_obs, g[0].lambda_pde), (1.0, 0.1));
    assert_eq!((g[2].lambda_obs, g[2].lambda_pde), (1.0, 10.0));
    assert_eq!((g[3].lambda_obs, g[3].lambda_pde), (10.0, 0.1));
    assert!(g.iter().all(|c| c.lambda_bcn == 0.5));
}

#[test]
fn end_markers() {
    assert_eq!(Marker::of(0.0), Marker::Star);
    assert_eq!(Marker::of(0.0499), Marker::Star);
    assert_eq!(Marker::of(0.05), Marker::Circle);
    assert_eq!(Marker::of(0.0999), Marker::Circle);
    assert_eq!(Marker::of(0.1), Marker::Cross);
    assert_eq!(Marker::of(f64::NAN), Marker::Cross);
}

#[test]
fn presets_validate_and_have_ground_truth() {
    for id in PRESETS {
        let s = ProblemSpec::preset(id).unwrap();
        s.validate().unwrap_or_else(|e| panic!("{id}: {e}"));
        let case = s.manufactured().unwrap();
        let dim = if s.case == CaseKind::Td { 4 } else { 3 };
        assert_eq!(case.input_dim(), dim, "{id}");
    }
}

#[test]
fn unknown_preset_lists_valid_ids() {
    let err = ProblemSpec::preset("three-scar").unwrap_err();
    assert!(matches!(err, ExperimentError::Unknown { .. }));
    let msg = err.to_string();
    for id in PRESETS {
        assert!(msg.contains(id), "{msg}");
    }
}

#[test]
fn spec_json_round_trip_and_unknown_keys() {
    for id in PRESETS {
        let s = ProblemSpec::preset(id).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<ProblemSpec>(&json).unwrap(), s);
    }
    let bad = r#"{"case":"hom-qs","sa":{"kind":"scalar","initial":100.0},"noise":0.1}"#;
    assert!(serde_json::from_str::<ProblemSpec>(bad).is_err());
    let nested =
        r#"{"case":"hom-qs","sa":{"kind":"scalar","initial":100.0},"points":{"obs":10,"pdf":3}}"#;
    assert!(serde_json::from_str::<ProblemSpec>(nested).is_err());
    let minimal = r#"{"case":"hom-qs","sa":{"kind":"scalar","initial":100.0}}"#;
    let s: ProblemSpec = serde_json::from_str(minimal).unwrap();
    assert_eq!(s.bc, BcMode::ExactDirichlet);
    assert_eq!(s.seeds, vec![0]);
}

#[test]
fn invalid_specs_are_rejected() {
    let mut s = tiny("hom-qs");
    s.seeds.clear();
    assert!(matches!(s.validate(), Err(ExperimentError::InvalidSpec(_))));
    let mut s = tiny("hom-qs");
    s.bc = BcMode::Robin {
        k_model: 1.0,
        k_true: 1.0,
    };
    assert!(s.validate().is_err(), "Robin needs the robin case");
    let mut s = tiny("hom-qs");
    s.noise_ld = f64::NAN;
    assert!(s.validate().is_err());
    let mut s = tiny("hom-qs");
    s.points.pde = 0;
    assert!(s.validate().is_err());
}

#[test]
fn time_dependent_truth_hits_the_healthy_value_at_the_reference_time() {
    let case = ProblemSpec::preset("td-scalar")
        .unwrap()
        .manufactured()
        .unwrap();
    let t_ref = TD_WINDOW.1;
    for x in [[0.0, 0.0, 0.0], [1.0, -2.0, 3.0]] {
        let v = case.amplitude_at(&[x[0], x[1], x[2], t_ref]);
        assert!((v - SA_HEALTHY).abs() < 1e-8, "{v}");
    }
}

#[test]
fn quotient_recovers_sigma0_from_exact_amplitudes() {
    let case = ProblemSpec::preset("td-scalar")
        .unwrap()
        .manufactured()
        .unwrap();
    let td = case.time.as_ref().unwrap();
    let x = [0.5, 1.0, -1.5];
    let sigma0 = case.sigma0(&x);
    let times: Vec<f64> = (0..=20)
        .map(|i| TD_WINDOW.0 + (TD_WINDOW.1 - TD_WINDOW.0) * i as f64 / 20.0)
        .filter(|&t| td.curve.eval(t) > 1e-3)
        .collect();
    assert!(times.len() >= 5);
    for t in times {
        let sa = case.amplitude_at(&[x[0], x[1], x[2], t]);
        let rec = reconstruct_sigma0(sa, t, &td.curve).unwrap();
        assert!(
            (rec - sigma0).abs() <= 1e-8 * sigma0,
            "t = {t}: {rec} vs {sigma0}"
        );
    }
}

#[test]
fn build_sizes_match_the_spec() {
    let s = tiny("td-scalar");
    let b = build(&s).unwrap();
    assert_eq!(b.setup.train.obs.points.len(), 48);
    assert_eq!(b.setup.train.pde.points.len(), 12);
    assert_eq!(b.setup.test.obs.points.len(), 8);
    assert_eq!(b.setup.truth.param_points.len(), 40);
    assert!(b.setup.truth.u_points.iter().all(|p| p.len() == 4));
    assert!(b.setup.truth.param_points.iter().all(|p| p.len() == 3));
    assert!(b.setup.train.bcd.is_none() && b.setup.train.robin.is_none());

    let mut w = tiny("hom-qs");
    w.bc = BcMode::WeakDirichlet;
    let b = build(&w).unwrap();
    assert_eq!(b.setup.train.bcd.as_ref().unwrap().points.len(), 12);
    assert!(b.setup.problem.model.u.lift.is_none());
}

#[test]
fn single_cell_sweep_equals_run_case() {
    let mut s = tiny("hom-qs");
    s.seeds = vec![0, 1];
    let run = run_case(&s).unwrap();
    let cell = WeightCell {
        lambda_obs: s.weights.lambda_obs,
        lambda_pde: s.weights.lambda_pde,
        lambda_bcn: s.weights.lambda_bcn,
    };
    let sweep = sweep_pareto(&s, &[cell], &s.seeds).unwrap();
    let c = &sweep.cells[0];
    let mean = run.ensemble.mean_errors().unwrap();
    assert_eq!(c.final_eps.to_bits(), mean.err_param.to_bits());
    assert_eq!(c.final_j_pde.to_bits(), mean.j_pde.to_bits());
    assert_eq!(c.trajectory, run.ensemble.aggregate);
    assert_eq!(c.n_success, run.ensemble.n_success);
}

#[test]
fn sweep_csv_is_deterministic_across_exec_modes() {
    let mut s = tiny("hom-qs");
    s.seeds = vec![0, 1];
    let grid = weight_grid(&[1.0, 10.0], &[0.1, 1.0], 1.0);
    let csv = |mode: ExecMode| {
        let mut spec = s.clone();
        spec.exec = mode;
        let sw = sweep_pareto(&spec, &grid, &spec.seeds).unwrap();
        let mut front = Vec::new();
        sw.write_front_csv(&mut front).unwrap();
        let mut traj = Vec::new();
        for i in 0..grid.len() {
            sw.write_trajectory_csv(i, &mut traj).unwrap();
        }
        (front, traj)
    };
    let a = csv(ExecMode::Parallel);
    assert_eq!(a, csv(ExecMode::Parallel));
    assert_eq!(a, csv(ExecMode::Sequential));
    assert_eq!(
        String::from_utf8(a.0).unwrap().lines().count(),
        1 + grid.len()
    );
}

#[test]
fn empty_or_negative_grid_is_rejected() {
    let s = tiny("hom-qs");
    assert!(sweep_pareto(&s, &[], &[0]).is_err());
    let neg = WeightCell {
        lambda_obs: -1.0,
        lambda_pde: 1.0,
        lambda_bcn: 1.0,
    };
    assert!(sweep_pareto(&s, &[neg], &[0]).is_err());
}

/// Reset the ablated mechanism so the arms can be compared field by field.
fn strip(which: Ablation, mut s: ProblemSpec) -> ProblemSpec {
    match which {
        Ablation::AdaptiveVsRba => {
            s.weights.adaptive_alpha = None;
            s.rba.enabled = false;
        }
        Ablation::RegOnOff => s.weights.lambda_reg = 0.0,
        Ablation::WeakVsExactBcd | Ablation::RobinMismatch => {
            s.bc = BcMode::ExactDirichlet;
            s.case = CaseKind::Robin;
        }
    }
    s
}

#[test]
fn ablation_arms_differ_only_in_the_mechanism() {
    for which in Ablation::ALL {
        let base = which.default_base();
        let arms = which.arms(&base);
        assert!(arms.len() >= 2);
        let names: Vec<&str> = arms.iter().map(|(n, _)| n.as_str()).collect();
        let mut uniq = names.clone();
        uniq.dedup();
        assert_eq!(uniq.len(), names.len(), "{names:?}");
        let reference = strip(which, base.clone());
        for (name, spec) in &arms {
            spec.validate()
                .unwrap_or_else(|e| panic!("{}/{name}: {e}", which.as_str()));
            assert_eq!(
                strip(which, spec.clone()),
                reference,
                "{}/{name}",
                which.as_str()
            );
        }
        for w in arms.windows(2) {
            assert_ne!(w[0].1, w[1].1);
        }
        assert_eq!(which.as_str().parse::<Ablation>().unwrap(), which);
    }
    let names: Vec<String> = Ablation::RobinMismatch
        .arms(&Ablation::RobinMismatch.default_base())
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    assert_eq!(names, ["robin-k1", "robin-k0.5", "dirichlet"]);
    assert!("dropout".parse::<Ablation>().is_err());
}
