use std::io::Write;

use serde::{Deserialize, Serialize};

use super::TrainError;

/// Tail window for reported errors.
pub const TAIL: usize = 100;

/// Seeds whose tail parameter error exceeds this count as failed.
pub const FAILURE_ERROR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Adam,
    Bfgs,
}

/// State after one iteration of the full training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub iter: usize,
    pub stage: Stage,
    pub loss: f64,
    pub j_obs: f64,
    pub j_pde: f64,
    pub j_bcn: f64,
    pub j_obs_test: f64,
    pub j_pde_test: f64,
    /// Relative error of the amplitude (or `σ0`) model.
    pub err_param: f64,
    /// Relative L² displacement error.
    pub err_u: f64,
}

impl RecordRow {
    pub const COLUMNS: [&'static str; 8] = [
        "loss",
        "j_obs",
        "j_pde",
        "j_bcn",
        "j_obs_test",
        "j_pde_test",
        "err_param",
        "err_u",
    ];

    pub fn values(&self) -> [f64; 8] {
        [
            self.loss,
            self.j_obs,
            self.j_pde,
            self.j_bcn,
            self.j_obs_test,
            self.j_pde_test,
            self.err_param,
            self.err_u,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SeedStatus {
    /// Every scheduled iteration ran.
    Completed,
    /// The gradient tolerance was met.
    Converged,
    /// The line search gave up before the iteration cap.
    StoppedEarly {
        at: usize,
    },
    Diverged {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub adam_iterations: usize,
    pub bfgs_iterations: usize,
    pub j_obs: f64,
    pub stop: Option<super::StopReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub seed: u64,
    pub pretrain: Option<PretrainSummary>,
    pub rows: Vec<RecordRow>,
    pub status: SeedStatus,
    pub evaluations: usize,
    /// Not part of the deterministic content.
    pub wall_time_s: f64,
}

/// Tail averages of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub err_param: f64,
    pub err_u: f64,
    pub j_obs: f64,
    pub j_pde: f64,
    pub window: usize,
}

impl TrainingRecord {
    /// Non-diverged, finite rows and a tail parameter error within bounds.
    pub fn successful(&self) -> bool {
        if matches!(self.status, SeedStatus::Diverged { .. }) || self.rows.is_empty() {
            return false;
        }
        if self
            .rows
            .iter()
            .any(|r| r.values().iter().any(|v| !v.is_finite()))
        {
            return false;
        }
        report_errors(self).is_some_and(|s| s.err_param <= FAILURE_ERROR)
    }

    /// Equality of everything but the wall time.
    pub fn same_content(&self, other: &TrainingRecord) -> bool {
        self.seed == other.seed
            && self.pretrain == other.pretrain
            && self.status == other.status
            && self.evaluations == other.evaluations
            && self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| {
                a.stage == b.stage
                    && a.iter == b.iter
                    && a.values().map(f64::to_bits) == b.values().map(f64::to_bits)
            })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), TrainError> {
        writeln!(w, "iter,stage,{}", RecordRow::COLUMNS.join(","))?;
        for r in &self.rows {
            let stage = match r.stage {
                Stage::Adam => "adam",
                Stage::Bfgs => "bfgs",
            };
            let vals: Vec<String> = r.values().iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{},{stage},{}", r.iter, vals.join(","))?;
        }
        Ok(())
    }
}

/// Mean of the last [`TAIL`] rows (all rows if fewer).
pub fn report_errors(record: &TrainingRecord) -> Option<ErrorSummary> {
    let n = record.rows.len();
    if n == 0 {
        return None;
    }
    let tail = &record.rows[n.saturating_sub(TAIL)..];
    let m = tail.len() as f64;
    let mean = |f: fn(&RecordRow) -> f64| tail.iter().map(f).sum::<f64>() / m;
    Some(ErrorSummary {
        err_param: mean(|r| r.err_param),
        err_u: mean(|r| r.err_u),
        j_obs: mean(|r| r.j_obs),
        j_pde: mean(|r| r.j_pde),
        window: tail.len(),
    })
}

/// `Σ |p - t| / Σ |t|`.
pub fn l1_relative_error(pred: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(pred.len(), truth.len());
    let num: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum();
    let den: f64 = truth.iter().map(|t| t.abs()).sum();
    num / den
}

/// `‖u - u*‖₂ / ‖u*‖₂` over all components.
pub fn l2_relative_error(pred: &[[f64; 3]], truth: &[[f64; 3]]) -> f64 {
    assert_eq!(pred.len(), truth.len());
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        for k in 0..3 {
            num += (p[k] - t[k]).powi(2);
            den += t[k] * t[k];
        }
    }
    (num / den).sqrt()
}

/// Per-row geometric mean and envelope over the successful seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub iters: Vec<usize>,
    pub geo_mean: Vec<[f64; 8]>,
    pub min: Vec<[f64; 8]>,
    pub max: Vec<[f64; 8]>,
    pub n_seeds: usize,
}

impl Aggregate {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), TrainError> {
        let mut head = vec!["iter".to_string()];
        for stat in ["gmean", "min", "max"] {
            head.extend(RecordRow::COLUMNS.iter().map(|c| format!("{c}_{stat}")));
        }
        writeln!(w, "{}", head.join(","))?;
        for i in 0..self.iters.len() {
            let mut row = vec![self.iters[i].to_string()];
            for block in [&self.geo_mean[i], &self.min[i], &self.max[i]] {
                row.extend(block.iter().map(|v| format!("{v:e}")));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Aggregate the successful records. Shorter runs (stopped early) hold
/// their last row. `None` when no record qualifies.
pub fn aggregate(records: &[TrainingRecord]) -> Option<Aggregate> {
    let ok: Vec<&TrainingRecord> = records.iter().filter(|r| r.successful()).collect();
    let len = ok.iter().map(|r| r.rows.len()).max()?;
    let m = ok.len() as f64;
    let mut agg = Aggregate {
        iters: Vec::with_capacity(len),
        geo_mean: Vec::with_capacity(len),
        min: Vec::with_capacity(len),
        max: Vec::with_capacity(len),
        n_seeds: ok.len(),
    };
    for i in 0..len {
        let rows: Vec<&RecordRow> = ok
            .iter()
            .map(|r| &r.rows[i.min(r.rows.len() - 1)])
            .collect();
        agg.iters.push(i);
        let mut g = [0.0; 8];
        let mut lo = [f64::INFINITY; 8];
        let mut hi = [f64::NEG_INFINITY; 8];
        for r in &rows {
            for (c, v) in r.values().iter().enumerate() {
                g[c] += v.ln() / m;
                lo[c] = lo[c].min(*v);
                hi[c] = hi[c].max(*v);
            }
        }
        // A lone seed reproduces its own values exactly.
        agg.geo_mean.push(if rows.len() == 1 {
            rows[0].values()
        } else {
            g.map(f64::exp)
        });
        agg.min.push(lo);
        agg.max.push(hi);
    }
    Some(agg)
}
