//! Named test cases, scar classification, loss-weight sweeps and paired
//! ablation runs.

use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activation::{solve_bcs, ActivationError, BcsParams};
use crate::datagen::{
    sample_collocation, sample_faces, sample_interior, sample_observations,
    sample_observations_stream, stream, AmplitudeField, DatagenError, Dataset, Face, Layout,
    ManufacturedCase, ScarProfile, SA_HEALTHY, TD_WINDOW,
};
use crate::exec::{map_indexed, ExecMode};
use crate::losses::{LossError, LossWeights, Physics, PointSets, Problem, RbaConfig};
use crate::networks::{
    DisplacementNet, FourierEmbedding, InputScaling, Lift, Mlp, MlpSpec, Model, NetworkError,
    OutputConstraint, ParameterNet, SaModel, HALF_SIDE,
};
use crate::training::{
    predict_amplitude, run_ensemble, Aggregate, Ensemble, ErrorSummary, PretrainSummary, Schedule,
    SeedStatus, TrainError, TrainSetup, Truth,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("unknown {what} `{id}`; valid: {valid}")]
    Unknown {
        what: &'static str,
        id: String,
        valid: String,
    },
    #[error("invalid problem spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Activation(#[from] ActivationError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ground-truth family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseKind {
    /// Constant `S_a` = 118.08 kPa, quasi-static.
    HomQs,
    /// Space-time case with constant `σ0`.
    Td,
    OneScar,
    TwoScar,
    /// Constant `S_a` with a spring-supported bottom face.
    Robin,
}

/// Treatment of the bottom face `y = -5`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BcMode {
    /// `u = φ NN + g` with `g = 0`.
    #[default]
    ExactDirichlet,
    WeakDirichlet,
    /// Springs of stiffness `k_model` (kPa/mm); the data come from `k_true`.
    Robin {
        k_model: f64,
        k_true: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierSpec {
    pub m: usize,
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Parametrization of `S_a` (or `σ0` in the time-dependent case).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SaSpec {
    Scalar {
        initial: f64,
    },
    Field {
        hidden: Vec<usize>,
        #[serde(default)]
        fourier: Option<FourierSpec>,
        min: f64,
        max: f64,
        #[serde(default = "one")]
        alpha: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PointCounts {
    pub obs: usize,
    pub layout: Layout,
    /// Strain observations alongside the displacements.
    pub strain: bool,
    pub pde: usize,
    pub bcn: usize,
    /// Weak Dirichlet points (weak mode only).
    pub bcd: usize,
    /// Spring-supported points (Robin mode only).
    pub robin: usize,
    pub test_obs: usize,
    pub test_pde: usize,
    /// Points for the reported errors.
    pub eval: usize,
}

impl Default for PointCounts {
    fn default() -> Self {
        PointCounts {
            obs: 256,
            layout: Layout::Random,
            strain: false,
            pde: 48,
            bcn: 30,
            bcd: 30,
            robin: 30,
            test_obs: 64,
            test_pde: 16,
            eval: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifySpec {
    /// kPa.
    pub threshold: f64,
    /// Voxels per axis.
    pub grid: usize,
}

impl Default for ClassifySpec {
    fn default() -> Self {
        ClassifySpec {
            threshold: 50.0,
            grid: 24,
        }
    }
}

fn default_hidden() -> Vec<usize> {
    vec![20, 20]
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// One experiment, fully specified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub case: CaseKind,
    #[serde(default)]
    pub bc: BcMode,
    pub sa: SaSpec,
    /// Hidden widths of the displacement network.
    #[serde(default = "default_hidden")]
    pub u_hidden: Vec<usize>,
    #[serde(default)]
    pub points: PointCounts,
    /// Limiting dispersion of the observation noise.
    #[serde(default)]
    pub noise_ld: f64,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub rba: RbaConfig,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Seed of every sampled point set and of the noise.
    #[serde(default)]
    pub data_seed: u64,
    /// Activation model of the time-dependent case.
    #[serde(default)]
    pub bcs: BcsParams,
    #[serde(default)]
    pub classify: ClassifySpec,
    #[serde(default)]
    pub exec: ExecMode,
}

pub const PRESETS: [&str; 7] = [
    "hom-qs",
    "hom-qs-field",
    "td-scalar",
    "td-field",
    "one-scar",
    "two-scar",
    "robin",
];

fn field(hidden: Vec<usize>, fourier: Option<FourierSpec>, max: f64) -> SaSpec {
    SaSpec::Field {
        hidden,
        fourier,
        min: 0.0,
        max,
        alpha: 1.0,
    }
}

impl ProblemSpec {
    /// Shipped desk-scale configurations.
    pub fn preset(id: &str) -> Result<Self, ExperimentError> {
        let base = ProblemSpec {
            case: CaseKind::HomQs,
            bc: BcMode::ExactDirichlet,
            sa: SaSpec::Scalar { initial: 100.0 },
            u_hidden: default_hidden(),
            points: PointCounts::default(),
            noise_ld: 0.0,
            weights: LossWeights::default(),
            rba: RbaConfig::default(),
            schedule: Schedule::default(),
            seeds: default_seeds(),
            data_seed: 0,
            bcs: BcsParams::default(),
            classify: ClassifySpec::default(),
            exec: ExecMode::default(),
        };
        let spec = match id {
            "hom-qs" => base,
            "hom-qs-field" => ProblemSpec {
                sa: field(vec![10], None, 200.0),
                ..base
            },
            "td-scalar" => ProblemSpec {
                case: CaseKind::Td,
                ..base
            },
            "td-field" => ProblemSpec {
                case: CaseKind::Td,
                sa: field(vec![10], None, 400.0),
                ..base
            },
            "one-scar" | "two-scar" => {
                let two = id == "two-scar";
                ProblemSpec {
                    case: if two {
                        CaseKind::TwoScar
                    } else {
                        CaseKind::OneScar
                    },
                    sa: field(
                        vec![32, 32],
                        Some(FourierSpec {
                            m: 16,
                            sigma: 2.0,
                            seed: 0,
                        }),
                        150.0,
                    ),
                    points: PointCounts {
                        obs: 1024,
                        strain: true,
                        pde: 1024,
                        bcn: 400,
                        test_obs: 32,
                        test_pde: 8,
                        ..PointCounts::default()
                    },
                    noise_ld: 0.05,
                    weights: LossWeights {
                        lambda_obs: 1e2,
                        lambda_strain: 1e2,
                        // Two separated scars need the momentum balance held tighter.
                        lambda_pde: if two { 1.0 } else { 1e-1 },
                        lambda_bcn: 1e-1,
                        lambda_reg: 1e-4,
                        ..LossWeights::default()
                    },
                    schedule: Schedule {
                        full_bfgs: if two { 4000 } else { 2000 },
                        ..Schedule::default()
                    },
                    ..base
                }
            }
            "robin" => ProblemSpec {
                case: CaseKind::Robin,
                bc: BcMode::Robin {
                    k_model: 1.0,
                    k_true: 1.0,
                },
                u_hidden: default_hidden(),
                ..base
            },
            other => {
                return Err(ExperimentError::Unknown {
                    what: "case",
                    id: other.into(),
                    valid: PRESETS.join(", "),
                })
            }
        };
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::InvalidSpec(m));
        self.weights.validate()?;
        self.schedule.validate()?;
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        let p = &self.points;
        if p.obs == 0 || p.pde == 0 || p.bcn == 0 || p.eval == 0 {
            return bad("obs, pde, bcn and eval counts must be positive".into());
        }
        if !(self.noise_ld >= 0.0 && self.noise_ld.is_finite()) {
            return bad(format!(
                "noise_ld {} must be finite and non-negative",
                self.noise_ld
            ));
        }
        match self.bc {
            BcMode::Robin { k_model, k_true } => {
                if self.case != CaseKind::Robin {
                    return bad("Robin boundary conditions need the robin case".into());
                }
                if !(k_model >= 0.0 && k_true >= 0.0 && k_model.is_finite() && k_true.is_finite()) {
                    return bad("spring stiffnesses must be finite and non-negative".into());
                }
                if p.robin == 0 {
                    return bad("robin point count must be positive".into());
                }
            }
            BcMode::WeakDirichlet if p.bcd == 0 => {
                return bad("bcd point count must be positive".into())
            }
            _ => {}
        }
        match &self.sa {
            SaSpec::Scalar { initial } if !(*initial > 0.0 && initial.is_finite()) => {
                return bad(format!("scalar initial value {initial} must be positive"));
            }
            SaSpec::Field {
                min, max, alpha, ..
            } if !(min < max && *alpha > 0.0) => {
                return bad(format!(
                    "field bounds need min < max and alpha > 0 (got {min}, {max}, {alpha})"
                ));
            }
            _ => {}
        }
        if !(self.classify.threshold > 0.0) || self.classify.grid == 0 {
            return bad("classification threshold and grid must be positive".into());
        }
        Ok(())
    }

    /// The manufactured ground truth of this spec.
    pub fn manufactured(&self) -> Result<ManufacturedCase, ExperimentError> {
        let case = match self.case {
            CaseKind::HomQs => ManufacturedCase::homogeneous(SA_HEALTHY)?,
            CaseKind::OneScar => ManufacturedCase::scar("one-scar", ScarProfile::one_scar())?,
            CaseKind::TwoScar => ManufacturedCase::scar("two-scar", ScarProfile::two_scar())?,
            CaseKind::Robin => ManufacturedCase::robin_support(SA_HEALTHY)?,
            CaseKind::Td => {
                // σ0* puts the amplitude at the reference time at the
                // healthy value.
                let unit = solve_bcs(
                    &BcsParams {
                        sigma0: 1.0,
                        ..self.bcs.clone()
                    },
                    TD_WINDOW.1,
                    1e-9,
                )?;
                let sigma0 = SA_HEALTHY / unit.eval(TD_WINDOW.1);
                ManufacturedCase::time_dependent(
                    &self.bcs,
                    AmplitudeField::Constant { value: sigma0 },
                    TD_WINDOW,
                )?
            }
        };
        Ok(case)
    }

    fn model(
        &self,
        input_dim: usize,
        window: Option<(f64, f64)>,
    ) -> Result<Model, ExperimentError> {
        let u = DisplacementNet {
            mlp: Mlp::new(MlpSpec {
                input_dim,
                hidden: self.u_hidden.clone(),
                output_dim: 3,
                residual_input_to_output: false,
                init_seed: 0,
            })?,
            scaling: InputScaling::cube(window),
            lift: matches!(self.bc, BcMode::ExactDirichlet).then_some(Lift::Zero),
        };
        let sa = match &self.sa {
            SaSpec::Scalar { initial } => SaModel::Scalar { initial: *initial },
            SaSpec::Field {
                hidden,
                fourier,
                min,
                max,
                alpha,
            } => {
                let fourier = fourier
                    .as_ref()
                    .map(|f| FourierEmbedding::new(f.m, f.sigma, f.seed))
                    .transpose()?;
                let input_dim = fourier.as_ref().map_or(3, |f| f.output_dim());
                SaModel::Field(ParameterNet {
                    mlp: Mlp::new(MlpSpec {
                        input_dim,
                        hidden: hidden.clone(),
                        output_dim: 1,
                        residual_input_to_output: false,
                        init_seed: 0,
                    })?,
                    scaling: InputScaling::cube(None),
                    fourier,
                    constraint: OutputConstraint::Interval {
                        min: *min,
                        max: *max,
                        alpha: *alpha,
                    },
                })
            }
        };
        Ok(Model { u, sa })
    }
}

/// A spec turned into data, point sets and a model.
#[derive(Debug, Clone)]
pub struct Built {
    pub case: ManufacturedCase,
    pub dataset: Dataset,
    pub setup: TrainSetup,
}

/// Sample every point set of `spec` and assemble the training setup.
pub fn build(spec: &ProblemSpec) -> Result<Built, ExperimentError> {
    spec.validate()?;
    let case = spec.manufactured()?;
    let dataset = build_dataset(spec, &case)?;
    build_with_data(spec, case, dataset)
}

/// Observations of `spec` (also written by the generator).
pub fn build_dataset(
    spec: &ProblemSpec,
    case: &ManufacturedCase,
) -> Result<Dataset, ExperimentError> {
    let p = &spec.points;
    Ok(sample_observations(
        case,
        p.obs,
        p.layout,
        spec.noise_ld,
        p.strain,
        spec.data_seed,
    )?)
}

/// As [`build`] with given observations.
pub fn build_with_data(
    spec: &ProblemSpec,
    case: ManufacturedCase,
    dataset: Dataset,
) -> Result<Built, ExperimentError> {
    spec.validate()?;
    let p = &spec.points;
    let seed = spec.data_seed;
    let window = case.window();
    let dim = case.input_dim();
    if dataset.obs.points.iter().any(|x| x.len() != dim) {
        return Err(ExperimentError::InvalidSpec(format!(
            "observations do not match case `{}` (expected {dim} coordinates)",
            case.name
        )));
    }
    let col = sample_collocation(p.pde, p.bcn, window, seed)?;
    let mut train = PointSets {
        obs: dataset.obs.clone(),
        pde: case.pde_set(col.pde)?,
        bcn: case.bcn_set(col.bcn, col.normals),
        bcd: None,
        robin: None,
    };
    match spec.bc {
        BcMode::ExactDirichlet => {}
        BcMode::WeakDirichlet => {
            let (pts, _) = sample_faces(p.bcd, &[Face::YMinus], window, seed, stream::BCD);
            train.bcd = Some(case.bcd_set(pts));
        }
        BcMode::Robin { k_model, k_true } => {
            let (pts, normals) =
                sample_faces(p.robin, &[Face::YMinus], window, seed, stream::ROBIN);
            train.robin = Some(case.robin_set(pts, normals, k_true, k_model));
        }
    }
    let test_obs = if p.test_obs > 0 {
        sample_observations_stream(
            &case,
            p.test_obs,
            p.layout,
            spec.noise_ld,
            false,
            seed,
            stream::TEST_OBS,
        )?
        .obs
    } else {
        Default::default()
    };
    let test_pde = if p.test_pde > 0 {
        case.pde_set(sample_interior(p.test_pde, window, seed, stream::TEST_PDE))?
    } else {
        Default::default()
    };
    let test = PointSets {
        obs: test_obs,
        pde: test_pde,
        ..PointSets::default()
    };
    let param_points = sample_interior(p.eval, None, seed, stream::EVAL);
    let u_points = match window {
        Some(_) => sample_interior(p.eval, window, seed, stream::EVAL),
        None => param_points.clone(),
    };
    let truth = Truth {
        param: param_points.iter().map(|x| case.sigma0(x)).collect(),
        param_points,
        u: u_points.iter().map(|x| case.displacement(x)).collect(),
        u_points,
    };
    let model = spec.model(dim, window)?;
    let physics = Physics {
        mat: case.mat.clone(),
        rho: case.rho(),
        activation: case.time.as_ref().map(|t| t.curve.clone()),
    };
    let problem = Problem::new(model, physics).with_exec(spec.exec);
    let setup = TrainSetup {
        problem,
        train,
        test,
        weights: spec.weights.clone(),
        rba: spec.rba.clone(),
        schedule: spec.schedule,
        truth,
    };
    Ok(Built {
        case,
        dataset,
        setup,
    })
}

/// Per-seed line of a run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub status: SeedStatus,
    pub successful: bool,
    pub tail: Option<ErrorSummary>,
    pub pretrain: Option<PretrainSummary>,
    pub iterations: usize,
    pub evaluations: usize,
}

/// Seed count and errors in the layout of the result tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub case: String,
    pub n_seeds: usize,
    pub n_success: usize,
    /// Geometric mean over successful seeds of the tail averages.
    pub mean: Option<ErrorSummary>,
    pub diagnostic: Option<String>,
    pub seeds: Vec<SeedSummary>,
}

pub struct CaseRun {
    pub built: Built,
    pub ensemble: Ensemble,
}

impl CaseRun {
    pub fn summary(&self) -> RunSummary {
        let seeds = self
            .ensemble
            .outcomes
            .iter()
            .map(|o| SeedSummary {
                seed: o.record.seed,
                status: o.record.status.clone(),
                successful: o.record.successful(),
                tail: crate::training::report_errors(&o.record),
                pretrain: o.record.pretrain.clone(),
                iterations: o.record.rows.len(),
                evaluations: o.record.evaluations,
            })
            .collect();
        RunSummary {
            case: self.built.case.name.clone(),
            n_seeds: self.ensemble.outcomes.len(),
            n_success: self.ensemble.n_success,
            mean: self.ensemble.mean_errors(),
            diagnostic: self.ensemble.diagnostic.clone(),
            seeds,
        }
    }
}

/// Pretraining and full training of every seed of `spec`.
pub fn run_case(spec: &ProblemSpec) -> Result<CaseRun, ExperimentError> {
    let built = build(spec)?;
    run_built(spec, built)
}

pub fn run_built(spec: &ProblemSpec, built: Built) -> Result<CaseRun, ExperimentError> {
    let ensemble = run_ensemble(&built.setup, &spec.seeds)?;
    Ok(CaseRun { built, ensemble })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    TruePositive,
    TrueNegative,
    /// Healthy tissue flagged as scar.
    FalsePositive,
    /// Scar missed.
    FalseNegative,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::TruePositive => "tp",
            Label::TrueNegative => "tn",
            Label::FalsePositive => "fp",
            Label::FalseNegative => "fn",
        }
    }
}

/// Thresholding result; "positive" means scar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub threshold: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub total: f64,
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
    #[serde(skip)]
    pub labels: Vec<Label>,
}

/// Centers of a `res³` voxel grid over the cube.
pub fn voxel_centers(res: usize) -> Vec<Vec<f64>> {
    let h = 2.0 * HALF_SIDE / res as f64;
    let c = |i: usize| -HALF_SIDE + (i as f64 + 0.5) * h;
    let mut out = Vec::with_capacity(res * res * res);
    for i in 0..res {
        for j in 0..res {
            for k in 0..res {
                out.push(vec![c(i), c(j), c(k)]);
            }
        }
    }
    out
}

fn rate(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Predicted scar where `pred < threshold`, compared against `truth_scar`.
pub fn classify_values(pred: &[f64], truth_scar: &[bool], threshold: f64) -> ClassificationReport {
    assert_eq!(pred.len(), truth_scar.len());
    let labels: Vec<Label> = pred
        .iter()
        .zip(truth_scar)
        .map(|(&p, &t)| match (p < threshold, t) {
            (true, true) => Label::TruePositive,
            (false, false) => Label::TrueNegative,
            (true, false) => Label::FalsePositive,
            (false, true) => Label::FalseNegative,
        })
        .collect();
    let count = |l: Label| labels.iter().filter(|&&x| x == l).count();
    let (tp, tn, fp, fn_) = (
        count(Label::TruePositive),
        count(Label::TrueNegative),
        count(Label::FalsePositive),
        count(Label::FalseNegative),
    );
    let fpr = rate(fp, fp + tn);
    let fnr = rate(fn_, fn_ + tp);
    ClassificationReport {
        threshold,
        fpr,
        fnr,
        total: fpr + fnr,
        tp,
        tn,
        fp,
        fn_,
        labels,
    }
}

/// Truth labels: scar wherever the sharp field is below the healthy value.
pub fn truth_labels(truth: &AmplitudeField, points: &[Vec<f64>]) -> Vec<bool> {
    points.iter().map(|p| truth.is_scar(p)).collect()
}

/// Threshold the learned field on a `grid³` voxel grid.
pub fn classify_scar(
    model: &Model,
    params: &[f64],
    truth: &AmplitudeField,
    threshold: f64,
    grid: usize,
) -> Result<ClassificationReport, ExperimentError> {
    if !(threshold > 0.0) {
        return Err(ExperimentError::InvalidSpec(format!(
            "threshold {threshold} must be positive"
        )));
    }
    let pts = voxel_centers(grid);
    let pred = predict_amplitude(model, params, &pts);
    Ok(classify_values(
        &pred,
        &truth_labels(truth, &pts),
        threshold,
    ))
}

/// `(T, FPR, FNR)` for each threshold.
pub fn threshold_sweep(
    pred: &[f64],
    truth_scar: &[bool],
    thresholds: &[f64],
) -> Vec<(f64, f64, f64)> {
    thresholds
        .iter()
        .map(|&t| {
            let r = classify_values(pred, truth_scar, t);
            (t, r.fpr, r.fnr)
        })
        .collect()
}

/// Threshold with the smallest `FPR + FNR` (first one on ties).
pub fn best_threshold(sweep: &[(f64, f64, f64)]) -> Option<f64> {
    sweep
        .iter()
        .fold(None, |best: Option<(f64, f64)>, &(t, a, b)| match best {
            Some((_, s)) if s <= a + b => best,
            _ => Some((t, a + b)),
        })
        .map(|(t, _)| t)
}

/// Voxel table `x,y,z,predicted,label`.
pub fn write_labels_csv<W: Write>(
    mut w: W,
    points: &[Vec<f64>],
    pred: &[f64],
    report: &ClassificationReport,
) -> Result<(), ExperimentError> {
    writeln!(w, "x,y,z,predicted,label")?;
    for ((p, v), l) in points.iter().zip(pred).zip(&report.labels) {
        writeln!(w, "{},{},{},{v:e},{}", p[0], p[1], p[2], l.as_str())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightCell {
    pub lambda_obs: f64,
    pub lambda_pde: f64,
    pub lambda_bcn: f64,
}

impl WeightCell {
    /// `λ_i / (λ_OBS + λ_PDE + λ_BCN)`.
    pub fn fractions(&self) -> [f64; 3] {
        let s = self.lambda_obs + self.lambda_pde + self.lambda_bcn;
        [
            self.lambda_obs / s,
            self.lambda_pde / s,
            self.lambda_bcn / s,
        ]
    }
}

/// Every combination of the given `λ_OBS` and `λ_PDE` values at fixed `λ_BCN`.
pub fn weight_grid(obs: &[f64], pde: &[f64], bcn: f64) -> Vec<WeightCell> {
    obs.iter()
        .flat_map(|&o| {
            pde.iter().map(move |&p| WeightCell {
                lambda_obs: o,
                lambda_pde: p,
                lambda_bcn: bcn,
            })
        })
        .collect()
}

/// End marker of a trajectory by final parameter error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Marker {
    /// `ε < 0.05`
    Star,
    /// `0.05 ≤ ε < 0.1`
    Circle,
    Cross,
}

impl Marker {
    pub fn of(eps: f64) -> Self {
        if eps < 0.05 {
            Marker::Star
        } else if eps < 0.1 {
            Marker::Circle
        } else {
            Marker::Cross
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Marker::Star => "star",
            Marker::Circle => "circle",
            Marker::Cross => "cross",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoCell {
    pub index: usize,
    pub weights: WeightCell,
    pub fractions: [f64; 3],
    pub n_success: usize,
    /// Seed-averaged trajectory, absent when every seed failed.
    pub trajectory: Option<Aggregate>,
    pub final_j_obs: f64,
    pub final_j_pde: f64,
    pub final_eps: f64,
    pub marker: Option<Marker>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoSweep {
    pub cells: Vec<ParetoCell>,
}

impl ParetoSweep {
    /// One line per cell.
    pub fn write_front_csv<W: Write>(&self, mut w: W) -> Result<(), ExperimentError> {
        writeln!(
            w,
            "cell,lambda_obs,lambda_pde,lambda_bcn,frac_obs,frac_pde,frac_bcn,n_success,final_j_obs,final_j_pde,final_eps,marker"
        )?;
        for c in &self.cells {
            let f = c.fractions;
            writeln!(
                w,
                "{},{:e},{:e},{:e},{},{},{},{},{:e},{:e},{:e},{}",
                c.index,
                c.weights.lambda_obs,
                c.weights.lambda_pde,
                c.weights.lambda_bcn,
                f[0],
                f[1],
                f[2],
                c.n_success,
                c.final_j_obs,
                c.final_j_pde,
                c.final_eps,
                c.marker.map_or("none", Marker::as_str)
            )?;
        }
        Ok(())
    }

    /// `iter,j_obs,j_pde,err_param` of one cell (seed geometric means).
    pub fn write_trajectory_csv<W: Write>(
        &self,
        cell: usize,
        mut w: W,
    ) -> Result<(), ExperimentError> {
        writeln!(w, "iter,j_obs,j_pde,err_param")?;
        if let Some(a) = &self.cells[cell].trajectory {
            for (i, g) in a.iters.iter().zip(&a.geo_mean) {
                writeln!(w, "{i},{:e},{:e},{:e}", g[1], g[2], g[6])?;
            }
        }
        Ok(())
    }
}

/// Train `base` once per weight cell with shared data and seeds.
pub fn sweep_pareto(
    base: &ProblemSpec,
    grid: &[WeightCell],
    seeds: &[u64],
) -> Result<ParetoSweep, ExperimentError> {
    if grid.is_empty() {
        return Err(ExperimentError::InvalidSpec("empty weight grid".into()));
    }
    if grid
        .iter()
        .any(|c| !(c.lambda_obs >= 0.0 && c.lambda_pde >= 0.0 && c.lambda_bcn >= 0.0))
    {
        return Err(ExperimentError::InvalidSpec(
            "weights must be non-negative".into(),
        ));
    }
    let built = build(base)?;
    let cells = map_indexed(
        grid.len(),
        base.exec,
        |i| -> Result<ParetoCell, ExperimentError> {
            let w = grid[i];
            let mut setup = built.setup.clone();
            setup.weights = LossWeights {
                lambda_obs: w.lambda_obs,
                lambda_pde: w.lambda_pde,
                lambda_bcn: w.lambda_bcn,
                ..base.weights.clone()
            };
            let ens = run_ensemble(&setup, seeds)?;
            let mean = ens.mean_errors();
            Ok(ParetoCell {
                index: i,
                weights: w,
                fractions: w.fractions(),
                n_success: ens.n_success,
                trajectory: ens.aggregate.clone(),
                final_j_obs: mean.map_or(f64::NAN, |m| m.j_obs),
                final_j_pde: mean.map_or(f64::NAN, |m| m.j_pde),
                final_eps: mean.map_or(f64::NAN, |m| m.err_param),
                marker: mean.map(|m| Marker::of(m.err_param)),
            })
        },
    );
    Ok(ParetoSweep {
        cells: cells.into_iter().collect::<Result<_, _>>()?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    AdaptiveVsRba,
    RegOnOff,
    WeakVsExactBcd,
    RobinMismatch,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::AdaptiveVsRba,
        Ablation::RegOnOff,
        Ablation::WeakVsExactBcd,
        Ablation::RobinMismatch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::AdaptiveVsRba => "adaptive-vs-rba",
            Ablation::RegOnOff => "reg-on-off",
            Ablation::WeakVsExactBcd => "weak-vs-exact-bcd",
            Ablation::RobinMismatch => "robin-mismatch",
        }
    }

    /// The case each comparison runs on by default.
    pub fn default_base(self) -> ProblemSpec {
        let id = match self {
            Ablation::AdaptiveVsRba | Ablation::WeakVsExactBcd => "hom-qs",
            Ablation::RegOnOff => "hom-qs-field",
            Ablation::RobinMismatch => "robin",
        };
        ProblemSpec::preset(id).expect("shipped preset")
    }

    /// Named variants of `base` that differ only in the ablated mechanism.
    pub fn arms(self, base: &ProblemSpec) -> Vec<(String, ProblemSpec)> {
        let with = |f: &dyn Fn(&mut ProblemSpec)| {
            let mut s = base.clone();
            f(&mut s);
            s
        };
        match self {
            Ablation::AdaptiveVsRba => vec![
                (
                    "fixed".into(),
                    with(&|s| {
                        s.weights.adaptive_alpha = None;
                        s.rba.enabled = false;
                    }),
                ),
                (
                    "adaptive".into(),
                    with(&|s| {
                        s.weights.adaptive_alpha = Some(s.weights.adaptive_alpha.unwrap_or(0.1));
                        s.rba.enabled = false;
                    }),
                ),
                (
                    "rba".into(),
                    with(&|s| {
                        s.weights.adaptive_alpha = None;
                        s.rba.enabled = true;
                    }),
                ),
            ],
            Ablation::RegOnOff => vec![
                ("reg-off".into(), with(&|s| s.weights.lambda_reg = 0.0)),
                (
                    "reg-on".into(),
                    with(&|s| {
                        if s.weights.lambda_reg == 0.0 {
                            s.weights.lambda_reg = 1e-3;
                        }
                    }),
                ),
            ],
            Ablation::WeakVsExactBcd => vec![
                ("exact".into(), with(&|s| s.bc = BcMode::ExactDirichlet)),
                ("weak".into(), with(&|s| s.bc = BcMode::WeakDirichlet)),
            ],
            Ablation::RobinMismatch => {
                let k_true = match base.bc {
                    BcMode::Robin { k_true, .. } => k_true,
                    _ => 1.0,
                };
                vec![
                    (
                        format!("robin-k{k_true}"),
                        with(&|s| {
                            s.case = CaseKind::Robin;
                            s.bc = BcMode::Robin {
                                k_model: k_true,
                                k_true,
                            };
                        }),
                    ),
                    (
                        format!("robin-k{}", 0.5 * k_true),
                        with(&|s| {
                            s.case = CaseKind::Robin;
                            s.bc = BcMode::Robin {
                                k_model: 0.5 * k_true,
                                k_true,
                            };
                        }),
                    ),
                    (
                        "dirichlet".into(),
                        with(&|s| {
                            s.case = CaseKind::Robin;
                            s.bc = BcMode::ExactDirichlet;
                        }),
                    ),
                ]
            }
        }
    }
}

impl FromStr for Ablation {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| ExperimentError::Unknown {
                what: "ablation",
                id: s.into(),
                valid: Ablation::ALL.map(Ablation::as_str).join(", "),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: String,
    pub n_seeds: usize,
    pub n_success: usize,
    /// Geometric mean over successful seeds of the tail errors.
    pub err_param: f64,
    pub err_u: f64,
    pub j_obs: f64,
    pub j_pde: f64,
    /// Per-seed tail parameter errors (NaN for failed seeds).
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub which: Ablation,
    pub rows: Vec<ArmResult>,
    #[serde(skip)]
    pub trajectories: Vec<Option<Aggregate>>,
}

impl ComparisonTable {
    pub fn row(&self, arm: &str) -> Option<&ArmResult> {
        self.rows.iter().find(|r| r.arm == arm)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), ExperimentError> {
        writeln!(w, "arm,n_seeds,n_success,err_param,err_u,j_obs,j_pde")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{:e},{:e},{:e},{:e}",
                r.arm, r.n_seeds, r.n_success, r.err_param, r.err_u, r.j_obs, r.j_pde
            )?;
        }
        Ok(())
    }

    /// `iter,<arm>...` with the seed-mean parameter error per arm.
    pub fn write_trajectories_csv<W: Write>(&self, mut w: W) -> Result<(), ExperimentError> {
        let names: Vec<&str> = self.rows.iter().map(|r| r.arm.as_str()).collect();
        writeln!(w, "iter,{}", names.join(","))?;
        let len = self
            .trajectories
            .iter()
            .flatten()
            .map(|a| a.iters.len())
            .max()
            .unwrap_or(0);
        for i in 0..len {
            let vals: Vec<String> = self
                .trajectories
                .iter()
                .map(|a| match a {
                    Some(a) if i < a.iters.len() => format!("{:e}", a.geo_mean[i][6]),
                    _ => String::new(),
                })
                .collect();
            writeln!(w, "{i},{}", vals.join(","))?;
        }
        Ok(())
    }
}

/// Run every arm of `which` on `base` (same data and seeds) and tabulate.
pub fn ablation_suite(
    which: Ablation,
    base: &ProblemSpec,
) -> Result<ComparisonTable, ExperimentError> {
    let arms = which.arms(base);
    let mut rows = Vec::with_capacity(arms.len());
    let mut trajectories = Vec::with_capacity(arms.len());
    for (name, spec) in arms {
        let run = run_case(&spec)?;
        let mean = run.ensemble.mean_errors();
        let nan = f64::NAN;
        rows.push(ArmResult {
            arm: name,
            n_seeds: run.ensemble.outcomes.len(),
            n_success: run.ensemble.n_success,
            err_param: mean.map_or(nan, |m| m.err_param),
            err_u: mean.map_or(nan, |m| m.err_u),
            j_obs: mean.map_or(nan, |m| m.j_obs),
            j_pde: mean.map_or(nan, |m| m.j_pde),
            per_seed: run
                .ensemble
                .outcomes
                .iter()
                .map(|o| {
                    if o.record.successful() {
                        crate::training::report_errors(&o.record).map_or(nan, |s| s.err_param)
                    } else {
                        nan
                    }
                })
                .collect(),
        });
        trajectories.push(run.ensemble.aggregate);
    }
    Ok(ComparisonTable {
        which,
        rows,
        trajectories,
    })
}
