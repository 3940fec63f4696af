//! Two-stage optimization: data-only pretraining, then the full objective
//! with Adam followed by L-BFGS.

mod adam;
mod lbfgs;
mod record;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use lbfgs::{lbfgs_minimize, LbfgsConfig, LbfgsOutcome, StopReason};
pub use record::{
    aggregate, l1_relative_error, l2_relative_error, report_errors, Aggregate, ErrorSummary,
    PretrainSummary, RecordRow, SeedStatus, Stage, TrainingRecord, FAILURE_ERROR, TAIL,
};

use crate::exec::{chunks, map_indexed, ExecMode};
use crate::losses::{
    adaptive_rebalance, Evaluation, LossError, LossWeights, ObsSet, PointSets, Problem, RbaConfig,
    RbaState, Term, TermValues,
};
use crate::networks::{JetLayout, Model, SaModel};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid training setup: {0}")]
    InvalidSetup(String),
    #[error("no seeds given")]
    NoSeeds,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub pretrain_adam: usize,
    /// Iteration cap of the pretraining L-BFGS stage.
    pub pretrain_bfgs: usize,
    pub pretrain_grad_tol: f64,
    pub full_adam: usize,
    pub full_bfgs: usize,
    pub adam: AdamConfig,
    pub bfgs: LbfgsConfig,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            pretrain_adam: 600,
            pretrain_bfgs: 2000,
            pretrain_grad_tol: 1e-7,
            full_adam: 1000,
            full_bfgs: 10000,
            adam: AdamConfig::default(),
            bfgs: LbfgsConfig::default(),
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.bfgs.validate().map_err(TrainError::InvalidSchedule)?;
        let a = &self.adam;
        if !(a.lr > 0.0
            && a.eps > 0.0
            && (0.0..1.0).contains(&a.beta1)
            && (0.0..1.0).contains(&a.beta2))
        {
            return Err(TrainError::InvalidSchedule(format!(
                "bad Adam settings {a:?}"
            )));
        }
        if !(self.pretrain_grad_tol >= 0.0) {
            return Err(TrainError::InvalidSchedule(
                "pretrain_grad_tol must be non-negative".into(),
            ));
        }
        Ok(())
    }

    fn pretrains(&self) -> bool {
        self.pretrain_adam > 0 || self.pretrain_bfgs > 0
    }
}

/// Ground truth at the evaluation points.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    /// Spatial points for the amplitude (or `σ0`) error.
    pub param_points: Vec<Vec<f64>>,
    pub param: Vec<f64>,
    /// Points (with time, if any) for the displacement error.
    pub u_points: Vec<Vec<f64>>,
    pub u: Vec<[f64; 3]>,
}

/// Everything one seed needs.
#[derive(Debug, Clone)]
pub struct TrainSetup {
    pub problem: Problem,
    pub train: PointSets,
    /// Held-out observations and collocation points.
    pub test: PointSets,
    pub weights: LossWeights,
    pub rba: RbaConfig,
    pub schedule: Schedule,
    pub truth: Truth,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub record: TrainingRecord,
    pub params: Vec<f64>,
    /// Loss weights at the end (differ from the start when adaptive).
    pub weights: LossWeights,
}

const PREDICT_CHUNK: usize = 256;

/// `NN_u` at many points.
pub fn predict_displacement(model: &Model, params: &[f64], points: &[Vec<f64>]) -> Vec<[f64; 3]> {
    let pu = model.split(params).0;
    let layout = JetLayout::value();
    let mut out = Vec::with_capacity(points.len());
    for r in chunks(points.len(), PREDICT_CHUNK) {
        let (u, _) = model.u.forward_jets(pu, &points[r.clone()], &layout);
        out.extend((0..r.len()).map(|p| [u[[0, p]], u[[1, p]], u[[2, p]]]));
    }
    out
}

/// The amplitude model at many points (spatial part only).
pub fn predict_amplitude(model: &Model, params: &[f64], points: &[Vec<f64>]) -> Vec<f64> {
    let ps = model.split(params).1;
    match &model.sa {
        SaModel::Scalar { .. } => vec![ps[0] * ps[0]; points.len()],
        SaModel::Field(net) => {
            let layout = JetLayout::value();
            let mut out = Vec::with_capacity(points.len());
            for r in chunks(points.len(), PREDICT_CHUNK) {
                let (z, _) = net.forward_jets(ps, &points[r.clone()], &layout);
                out.extend((0..r.len()).map(|p| z[[0, p]]));
            }
            out
        }
    }
}

fn data_weights(w: &LossWeights, obs: &ObsSet) -> LossWeights {
    LossWeights {
        lambda_obs: w.lambda_obs,
        lambda_strain: if obs.strain.is_some() {
            w.lambda_strain
        } else {
            0.0
        },
        lambda_pde: 0.0,
        lambda_bcd: 0.0,
        lambda_bcn: 0.0,
        lambda_robin: 0.0,
        lambda_w: 0.0,
        lambda_reg: 0.0,
        adaptive_alpha: None,
        adaptive_interval: w.adaptive_interval,
    }
}

/// Fit the displacement network to the observations alone: Adam for the
/// scheduled count, then L-BFGS to the pretraining tolerance. The amplitude
/// part of `params` is not touched.
pub fn pretrain(
    problem: &Problem,
    params: &mut [f64],
    obs: &ObsSet,
    weights: &LossWeights,
    schedule: &Schedule,
) -> Result<PretrainSummary, TrainError> {
    if obs.points.is_empty() {
        return Err(TrainError::InvalidSetup(
            "pretraining needs observations".into(),
        ));
    }
    let sets = PointSets {
        obs: obs.clone(),
        ..PointSets::default()
    };
    let w = data_weights(weights, obs);
    let n_u = problem.model.n_u();
    let frozen = params[n_u..].to_vec();
    let eval = |u: &[f64]| -> Result<(f64, Vec<f64>, f64), TrainError> {
        let mut full = u.to_vec();
        full.extend_from_slice(&frozen);
        let ev = problem.evaluate(&full, &sets, &w, None, true)?;
        let mut g = ev.grad;
        g.truncate(n_u);
        Ok((ev.loss, g, ev.terms.obs))
    };
    let mut u = params[..n_u].to_vec();
    let mut state = AdamState::new(n_u);
    let mut j_obs = f64::NAN;
    for _ in 0..schedule.pretrain_adam {
        let (_, g, j) = eval(&u)?;
        j_obs = j;
        adam_step(&mut u, &g, &mut state, &schedule.adam);
    }
    let cfg = LbfgsConfig {
        grad_tol: schedule.pretrain_grad_tol,
        ..schedule.bfgs
    };
    let out = lbfgs_minimize(eval, u, &cfg, schedule.pretrain_bfgs, |_, _, _, _| Ok(()))?;
    j_obs = if out.payload.is_finite() {
        out.payload
    } else {
        j_obs
    };
    params[..n_u].copy_from_slice(&out.x);
    Ok(PretrainSummary {
        adam_iterations: schedule.pretrain_adam,
        bfgs_iterations: out.iterations,
        j_obs,
        stop: Some(out.stop),
    })
}

/// Terms that take part in adaptive balancing.
fn active_terms(sets: &PointSets, w: &LossWeights) -> Vec<Term> {
    let mut t = vec![Term::Obs];
    if sets.obs.strain.is_some() && w.lambda_strain > 0.0 {
        t.push(Term::Strain);
    }
    if !sets.pde.points.is_empty() && w.lambda_pde > 0.0 {
        t.push(Term::Pde);
    }
    if !sets.bcn.points.is_empty() && w.lambda_bcn > 0.0 {
        t.push(Term::Bcn);
    }
    if sets.bcd.is_some() && w.lambda_bcd > 0.0 {
        t.push(Term::Bcd);
    }
    if sets.robin.is_some() && w.lambda_robin > 0.0 {
        t.push(Term::Robin);
    }
    t
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct Runner<'a> {
    setup: &'a TrainSetup,
    test_w: LossWeights,
}

impl<'a> Runner<'a> {
    fn new(setup: &'a TrainSetup) -> Self {
        let test_w = LossWeights {
            lambda_strain: 0.0,
            lambda_bcd: 0.0,
            lambda_bcn: 0.0,
            lambda_robin: 0.0,
            lambda_w: 0.0,
            lambda_reg: 0.0,
            adaptive_alpha: None,
            ..LossWeights::default()
        };
        Runner { setup, test_w }
    }

    fn row(
        &self,
        iter: usize,
        stage: Stage,
        params: &[f64],
        loss: f64,
        terms: &TermValues,
    ) -> Result<RecordRow, TrainError> {
        let s = self.setup;
        let test = s
            .problem
            .evaluate(params, &s.test, &self.test_w, None, false)?;
        let model = &s.problem.model;
        let err_param = if s.truth.param.is_empty() {
            f64::NAN
        } else {
            l1_relative_error(
                &predict_amplitude(model, params, &s.truth.param_points),
                &s.truth.param,
            )
        };
        let err_u = if s.truth.u.is_empty() {
            f64::NAN
        } else {
            l2_relative_error(
                &predict_displacement(model, params, &s.truth.u_points),
                &s.truth.u,
            )
        };
        Ok(RecordRow {
            iter,
            stage,
            loss,
            j_obs: terms.obs,
            j_pde: terms.pde,
            j_bcn: terms.bcn,
            j_obs_test: test.terms.obs,
            j_pde_test: test.terms.pde,
            err_param,
            err_u,
        })
    }

    fn rebalance(
        &self,
        params: &[f64],
        w: &mut LossWeights,
        mult: Option<&[f64]>,
        alpha: f64,
    ) -> Result<usize, TrainError> {
        let s = self.setup;
        let terms = active_terms(&s.train, w);
        let mut norms = Vec::with_capacity(terms.len());
        for &t in &terms {
            let ev = s
                .problem
                .evaluate(params, &s.train, &LossWeights::only(t), mult, true)?;
            norms.push(norm(&ev.grad));
        }
        let current: Vec<f64> = terms.iter().map(|&t| w.get(t)).collect();
        for (&t, v) in terms
            .iter()
            .zip(adaptive_rebalance(&norms, &current, alpha))
        {
            w.set(t, v);
        }
        Ok(terms.len())
    }
}

/// Train one seed from its own initialization.
pub fn train_seed(setup: &TrainSetup, seed: u64) -> TrainOutcome {
    let params = setup.problem.model.init(seed);
    train_from(setup, seed, params)
}

/// Pretraining (if scheduled), then Adam with attention and adaptive
/// updates, then L-BFGS with weights and multipliers frozen. Failures end
/// the run with a diverged status instead of an error.
pub fn train_from(setup: &TrainSetup, seed: u64, mut params: Vec<f64>) -> TrainOutcome {
    let start = Instant::now();
    let runner = Runner::new(setup);
    let mut record = TrainingRecord {
        seed,
        pretrain: None,
        rows: Vec::new(),
        status: SeedStatus::Completed,
        evaluations: 0,
        wall_time_s: 0.0,
    };
    let mut weights = setup.weights.clone();
    let result = run_stages(setup, &runner, &mut params, &mut weights, &mut record);
    if let Err(e) = result {
        record.status = SeedStatus::Diverged {
            reason: e.to_string(),
        };
    }
    record.wall_time_s = start.elapsed().as_secs_f64();
    TrainOutcome {
        record,
        params,
        weights,
    }
}

fn run_stages(
    setup: &TrainSetup,
    runner: &Runner<'_>,
    params: &mut Vec<f64>,
    w: &mut LossWeights,
    record: &mut TrainingRecord,
) -> Result<(), TrainError> {
    setup.schedule.validate()?;
    w.validate()?;
    let dim = setup.problem.model.u.input_dim();
    setup.train.validate(dim)?;
    setup.test.validate(dim)?;
    let problem = &setup.problem;
    let sched = &setup.schedule;
    if sched.pretrains() {
        let summary = pretrain(problem, params, &setup.train.obs, w, sched)?;
        record.pretrain = Some(summary);
    }

    let mut rba = setup
        .rba
        .enabled
        .then(|| RbaState::new(setup.train.pde.points.len(), &setup.rba));
    let mut state = AdamState::new(params.len());
    for k in 0..sched.full_adam {
        if let Some(alpha) = w.adaptive_alpha {
            if k % w.adaptive_interval.max(1) == 0 {
                let mult = rba.as_ref().map(|r| r.multipliers.as_slice());
                record.evaluations += runner.rebalance(params, w, mult, alpha)?;
            }
        }
        let ev = problem.evaluate(
            params,
            &setup.train,
            w,
            rba.as_ref().map(|r| r.multipliers.as_slice()),
            true,
        )?;
        record.evaluations += 1;
        record
            .rows
            .push(runner.row(k, Stage::Adam, params, ev.loss, &ev.terms)?);
        if let Some(r) = rba.as_mut() {
            if r.due(k) {
                let e: Vec<f64> = ev.residuals.iter().map(|v| v.sqrt()).collect();
                r.update(&e);
            }
        }
        adam_step(params, &ev.grad, &mut state, &sched.adam);
    }

    let mult = rba.as_ref().map(|r| r.multipliers.clone());
    let frozen = w.clone();
    let eval = |x: &[f64]| -> Result<(f64, Vec<f64>, TermValues), TrainError> {
        let Evaluation {
            loss, grad, terms, ..
        } = problem.evaluate(x, &setup.train, &frozen, mult.as_deref(), true)?;
        Ok((loss, grad, terms))
    };
    let base = sched.full_adam;
    let mut rows = Vec::new();
    let out = lbfgs_minimize(
        eval,
        params.clone(),
        &sched.bfgs,
        sched.full_bfgs,
        |it, x, f, terms| {
            rows.push(runner.row(base + it - 1, Stage::Bfgs, x, f, terms)?);
            Ok(())
        },
    );
    record.rows.append(&mut rows);
    let out = out?;
    record.evaluations += out.evaluations;
    *params = out.x;
    record.status = match out.stop {
        StopReason::GradTol => SeedStatus::Converged,
        StopReason::MaxIter => SeedStatus::Completed,
        StopReason::LineSearch => SeedStatus::StoppedEarly {
            at: base + out.iterations,
        },
    };
    Ok(())
}

/// Independent seeds, their records and the aggregate over the successful
/// ones.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub outcomes: Vec<TrainOutcome>,
    pub aggregate: Option<Aggregate>,
    pub n_success: usize,
    /// Set when no seed succeeded.
    pub diagnostic: Option<String>,
}

impl Ensemble {
    pub fn records(&self) -> Vec<TrainingRecord> {
        self.outcomes.iter().map(|o| o.record.clone()).collect()
    }

    /// Geometric mean over successful seeds of their tail errors.
    pub fn mean_errors(&self) -> Option<ErrorSummary> {
        let ok: Vec<ErrorSummary> = self
            .outcomes
            .iter()
            .filter(|o| o.record.successful())
            .filter_map(|o| report_errors(&o.record))
            .collect();
        if ok.is_empty() {
            return None;
        }
        let m = ok.len() as f64;
        let gm =
            |f: fn(&ErrorSummary) -> f64| (ok.iter().map(|s| f(s).ln()).sum::<f64>() / m).exp();
        Some(ErrorSummary {
            err_param: gm(|s| s.err_param),
            err_u: gm(|s| s.err_u),
            j_obs: gm(|s| s.j_obs),
            j_pde: gm(|s| s.j_pde),
            window: ok[0].window,
        })
    }
}

/// Run `seeds` through `run` (seeds spread over workers) and aggregate.
pub fn run_seeds<F>(seeds: &[u64], exec: ExecMode, run: F) -> Result<Ensemble, TrainError>
where
    F: Fn(u64) -> TrainOutcome + Sync + Send,
{
    if seeds.is_empty() {
        return Err(TrainError::NoSeeds);
    }
    let outcomes = map_indexed(seeds.len(), exec, |i| run(seeds[i]));
    let records: Vec<TrainingRecord> = outcomes.iter().map(|o| o.record.clone()).collect();
    let aggregate = aggregate(&records);
    let n_success = records.iter().filter(|r| r.successful()).count();
    let diagnostic = (n_success == 0).then(|| {
        let reasons: Vec<String> = records
            .iter()
            .map(|r| match &r.status {
                SeedStatus::Diverged { reason } => format!("seed {}: {reason}", r.seed),
                _ => format!("seed {}: tail error above {FAILURE_ERROR}", r.seed),
            })
            .collect();
        format!("all seeds failed ({})", reasons.join("; "))
    });
    Ok(Ensemble {
        outcomes,
        aggregate,
        n_success,
        diagnostic,
    })
}

/// [`train_seed`] over every seed of `seeds`.
pub fn run_ensemble(setup: &TrainSetup, seeds: &[u64]) -> Result<Ensemble, TrainError> {
    run_seeds(seeds, setup.problem.exec, |s| train_seed(setup, s))
}
