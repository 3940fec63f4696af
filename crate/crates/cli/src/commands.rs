use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use activepinn::datagen::{Dataset, DatasetMeta};
use activepinn::exec::set_threads;
use activepinn::experiments::{
    ablation_suite, best_threshold, build, build_dataset, build_with_data, classify_values,
    run_built, sweep_pareto, threshold_sweep, truth_labels, voxel_centers, weight_grid,
    write_labels_csv, Ablation, ProblemSpec,
};
use activepinn::networks::{read_network, write_network};
use activepinn::training::predict_amplitude;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, SweepConfig};
use crate::error::CliError;
use crate::{Cli, Command, Global};

struct Log {
    quiet: bool,
}

impl Log {
    fn info(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }
}

/// What was run, with enough to rerun it.
#[derive(Serialize)]
struct Manifest<'a> {
    version: &'a str,
    command: &'a str,
    config: Option<String>,
    config_sha256: Option<String>,
    spec_sha256: String,
    spec: &'a ProblemSpec,
    data_seed: u64,
    seeds: &'a [u64],
    outputs: Vec<String>,
}

struct Context {
    global: Global,
    config: RunConfig,
    config_hash: Option<String>,
    log: Log,
    outputs: Vec<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Context {
    fn spec(&self, fallback: &str) -> Result<ProblemSpec, CliError> {
        let spec = self.config.spec(fallback)?;
        Ok(self.with_overrides(spec))
    }

    fn with_overrides(&self, mut spec: ProblemSpec) -> ProblemSpec {
        if let Some(s) = self.global.seed {
            spec.data_seed = s;
        }
        if let Some(s) = &self.global.seeds {
            spec.seeds = s.0.clone();
        }
        spec
    }

    fn path(&self, name: &str) -> PathBuf {
        self.global.out.join(name)
    }

    /// Create `name` in the output directory and remember it.
    fn create(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        self.outputs.push(name.to_string());
        Ok(BufWriter::new(File::create(self.path(name))?))
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn finish(&mut self, command: &str, spec: &ProblemSpec) -> Result<(), CliError> {
        let spec_json = serde_json::to_vec(spec)?;
        let mut outputs = self.outputs.clone();
        outputs.sort();
        let manifest = Manifest {
            version: env!("ACTIVEPINN_VERSION"),
            command,
            config: self.global.config.as_ref().map(|p| p.display().to_string()),
            config_sha256: self.config_hash.clone(),
            spec_sha256: sha256_hex(&spec_json),
            spec,
            data_seed: spec.data_seed,
            seeds: &spec.seeds,
            outputs,
        };
        let mut w = BufWriter::new(File::create(self.path("manifest.json"))?);
        serde_json::to_writer_pretty(&mut w, &manifest)?;
        writeln!(w)?;
        w.flush()?;
        self.log
            .info(format!("wrote {}", self.global.out.display()));
        Ok(())
    }
}

/// Refuse to mix outputs of different runs unless asked to.
fn prepare_out(dir: &Path, overwrite: bool) -> Result<(), CliError> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(CliError::Config(format!(
                "{} is not a directory",
                dir.display()
            )));
        }
        let used = fs::read_dir(dir)?.next().is_some();
        if used && !overwrite {
            return Err(CliError::Config(format!(
                "{} already contains outputs; pass --overwrite to replace them",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<(RunConfig, Option<String>), CliError> {
    let Some(path) = path else {
        return Ok((RunConfig::default(), None));
    };
    let bytes = fs::read(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::Config(format!("{}: not UTF-8", path.display())))?;
    let config = RunConfig::parse(&text, &path.display().to_string())?;
    Ok((config, Some(sha256_hex(&bytes))))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        set_threads(n).map_err(CliError::Config)?;
    }
    let (config, config_hash) = load_config(cli.global.config.as_deref())?;
    let mut ctx = Context {
        log: Log {
            quiet: cli.global.quiet,
        },
        global: cli.global,
        config,
        config_hash,
        outputs: Vec::new(),
    };
    match cli.command {
        Command::Generate { case } => generate(&mut ctx, &case),
        Command::Train { case, dataset } => train(&mut ctx, &case, dataset.as_deref()),
        Command::Sweep { case, grid } => sweep(&mut ctx, &case, grid),
        Command::Classify {
            model,
            truth,
            threshold,
            grid_res,
        } => classify(&mut ctx, &model, &truth, threshold, grid_res),
        Command::Ablate { which } => ablate(&mut ctx, &which),
    }
}

fn generate(ctx: &mut Context, case: &str) -> Result<(), CliError> {
    let spec = ctx.spec(case)?;
    prepare_out(&ctx.global.out, ctx.global.overwrite)?;
    let truth = spec.manufactured()?;
    let dataset = build_dataset(&spec, &truth)?;
    ctx.log.info(format!(
        "{}: {} observations, sigma = {:e}, max |u| = {:e}",
        dataset.meta.case, dataset.meta.n, dataset.meta.sigma, dataset.meta.max_u
    ));
    let mut w = ctx.create("observations.csv")?;
    dataset
        .write_csv(&mut w)
        .map_err(|e| CliError::Datagen(e.to_string()))?;
    w.flush()?;
    let mut w = ctx.create("observations.json")?;
    dataset
        .write_sidecar(&mut w)
        .map_err(|e| CliError::Datagen(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    ctx.finish("generate", &spec)
}

fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    let bad = |e: String| CliError::Config(format!("{}: {e}", path.display()));
    let file = File::open(path).map_err(|e| bad(e.to_string()))?;
    let obs = Dataset::read_csv(BufReader::new(file)).map_err(|e| bad(e.to_string()))?;
    let side = path.with_extension("json");
    let file =
        File::open(&side).map_err(|e| CliError::Config(format!("{}: {e}", side.display())))?;
    let meta: DatasetMeta = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CliError::Config(format!("{}: {e}", side.display())))?;
    if meta.n != obs.points.len() {
        return Err(bad(format!(
            "sidecar lists {} rows, file has {}",
            meta.n,
            obs.points.len()
        )));
    }
    Ok(Dataset { meta, obs })
}

fn train(ctx: &mut Context, case: &str, dataset: Option<&Path>) -> Result<(), CliError> {
    let spec = ctx.spec(case)?;
    prepare_out(&ctx.global.out, ctx.global.overwrite)?;
    let built = match dataset {
        Some(path) => {
            let data = read_dataset(path)?;
            let truth = spec.manufactured()?;
            if data.meta.case != truth.name {
                return Err(CliError::Config(format!(
                    "dataset is for case `{}`, the config trains `{}`",
                    data.meta.case, truth.name
                )));
            }
            build_with_data(&spec, truth, data)?
        }
        None => build(&spec)?,
    };
    ctx.log.info(format!(
        "training {} on {} seed(s), {} parameters",
        built.case.name,
        spec.seeds.len(),
        built.setup.problem.model.n_params()
    ));
    let run = run_built(&spec, built)?;
    let mut timing = Vec::new();
    for o in &run.ensemble.outcomes {
        let r = &o.record;
        let mut w = ctx.create(&format!("trajectory_seed{}.csv", r.seed))?;
        r.write_csv(&mut w)
            .map_err(|e| CliError::Train(e.to_string()))?;
        w.flush()?;
        let mut w = ctx.create(&format!("network_seed{}.apnn", r.seed))?;
        write_network(&mut w, &run.built.setup.problem.model, r.seed, &o.params)
            .map_err(|e| CliError::Train(e.to_string()))?;
        w.flush()?;
        timing.push(serde_json::json!({ "seed": r.seed, "wall_time_s": r.wall_time_s }));
        ctx.log.info(format!(
            "seed {}: {:?}, {} rows",
            r.seed,
            r.status,
            r.rows.len()
        ));
    }
    if let Some(agg) = &run.ensemble.aggregate {
        let mut w = ctx.create("aggregate.csv")?;
        agg.write_csv(&mut w)
            .map_err(|e| CliError::Train(e.to_string()))?;
        w.flush()?;
    }
    let summary = run.summary();
    ctx.write_json("summary.json", &summary)?;
    // Wall times vary between runs; keep them out of the summary.
    ctx.write_json("timing.json", &timing)?;
    if let Some(m) = summary.mean {
        ctx.log.info(format!(
            "{}/{} seeds successful; tail err_param {:e}, err_u {:e}",
            summary.n_success, summary.n_seeds, m.err_param, m.err_u
        ));
    }
    ctx.finish("train", &spec)?;
    match summary.diagnostic {
        Some(d) if summary.n_success == 0 => Err(CliError::Train(d)),
        _ => Ok(()),
    }
}

fn sweep(ctx: &mut Context, case: &str, grid: Option<SweepConfig>) -> Result<(), CliError> {
    let spec = ctx.spec(case)?;
    let g = grid.unwrap_or_else(|| ctx.config.sweep.clone());
    prepare_out(&ctx.global.out, ctx.global.overwrite)?;
    let grid = weight_grid(&g.obs, &g.pde, g.bcn);
    ctx.log.info(format!(
        "sweeping {} weight cells over {} seed(s)",
        grid.len(),
        spec.seeds.len()
    ));
    let result = sweep_pareto(&spec, &grid, &spec.seeds)?;
    let mut w = ctx.create("front.csv")?;
    result.write_front_csv(&mut w)?;
    w.flush()?;
    for c in 0..result.cells.len() {
        let mut w = ctx.create(&format!("cell{c}.csv"))?;
        result.write_trajectory_csv(c, &mut w)?;
        w.flush()?;
    }
    ctx.finish("sweep", &spec)
}

#[derive(Serialize)]
struct ClassifyOutput<'a> {
    model: String,
    grid: usize,
    report: &'a activepinn::experiments::ClassificationReport,
    best_threshold: Option<f64>,
}

fn classify(
    ctx: &mut Context,
    model: &Path,
    case: &str,
    threshold: Option<f64>,
    grid: Option<usize>,
) -> Result<(), CliError> {
    let spec = ctx.spec(case)?;
    let threshold = threshold.unwrap_or(spec.classify.threshold);
    let grid = grid.unwrap_or(spec.classify.grid);
    if !(threshold > 0.0) || grid == 0 {
        return Err(CliError::Config(
            "threshold and grid must be positive".into(),
        ));
    }
    let file =
        File::open(model).map_err(|e| CliError::Config(format!("{}: {e}", model.display())))?;
    let (header, params) = read_network(BufReader::new(file))
        .map_err(|e| CliError::Config(format!("{}: {e}", model.display())))?;
    let truth = spec.manufactured()?;
    if truth.time.is_some() {
        return Err(CliError::Config(
            "classification needs a quasi-static case".into(),
        ));
    }
    prepare_out(&ctx.global.out, ctx.global.overwrite)?;
    let points = voxel_centers(grid);
    let pred = predict_amplitude(&header.model, &params, &points);
    let labels = truth_labels(&truth.field, &points);
    let report = classify_values(&pred, &labels, threshold);
    let ts: Vec<f64> = (1..=118).map(f64::from).collect();
    let curve = threshold_sweep(&pred, &labels, &ts);
    let best = best_threshold(&curve);
    ctx.log.info(format!(
        "T = {threshold}: FPR {:.4}, FNR {:.4}, total {:.4}; best T {:?}",
        report.fpr, report.fnr, report.total, best
    ));
    let mut w = ctx.create("voxels.csv")?;
    write_labels_csv(&mut w, &points, &pred, &report)?;
    w.flush()?;
    let mut w = ctx.create("threshold_sweep.csv")?;
    writeln!(w, "threshold,fpr,fnr,total")?;
    for (t, a, b) in &curve {
        writeln!(w, "{t},{a},{b},{}", a + b)?;
    }
    w.flush()?;
    let out = ClassifyOutput {
        model: model.display().to_string(),
        grid,
        report: &report,
        best_threshold: best,
    };
    ctx.write_json("classification.json", &out)?;
    ctx.finish("classify", &spec)
}

fn ablate(ctx: &mut Context, which: &str) -> Result<(), CliError> {
    let which: Ablation = which.parse()?;
    let base = match &ctx.config.preset {
        Some(id) => ProblemSpec::preset(id)?,
        None => which.default_base(),
    };
    let spec = ctx.with_overrides(ctx.config.problem.clone().apply(base));
    spec.validate()?;
    prepare_out(&ctx.global.out, ctx.global.overwrite)?;
    ctx.log.info(format!(
        "ablation {} on {} seed(s)",
        which.as_str(),
        spec.seeds.len()
    ));
    let table = ablation_suite(which, &spec)?;
    for r in &table.rows {
        ctx.log.info(format!(
            "{}: {}/{} ok, err_param {:e}",
            r.arm, r.n_success, r.n_seeds, r.err_param
        ));
    }
    let mut w = ctx.create("table.csv")?;
    table.write_csv(&mut w)?;
    w.flush()?;
    let mut w = ctx.create("trajectories.csv")?;
    table.write_trajectories_csv(&mut w)?;
    w.flush()?;
    ctx.write_json("table.json", &table)?;
    ctx.finish("ablate", &spec)
}
