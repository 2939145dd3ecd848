use std::collections::BTreeMap;
use std::time::Instant;

use manifold_gcnn::GcnnError;

use crate::config::ExperimentConfig;
use crate::context::Context;
use crate::error::{LabError, LabResult};
use crate::report::{write_csv, write_json, Environment, Failure, RunReport, StageRecord};
use crate::seed::MIXING_RULE;
use crate::stage::Stage;
use crate::stages::gap::GapOutput;
use crate::stages::ops::OpsRow;
use crate::stages::response::ResponseOutput;
use crate::stages::spectra::SpectraOutput;
use crate::stages::training::TrainingOutput;
use crate::stages::{gap, ops, response, spectra, training};

pub const THREADS_ENV: &str = "CONSISTENCY_LAB_THREADS";

/// `--threads`, else `CONSISTENCY_LAB_THREADS`, else the available parallelism.
pub fn resolve_threads(flag: Option<usize>) -> LabResult<usize> {
    let t = match flag {
        Some(t) => t,
        None => match std::env::var(THREADS_ENV) {
            Ok(s) => s
                .trim()
                .parse::<usize>()
                .map_err(|_| LabError::config(THREADS_ENV, format!("expected a positive integer, got `{s}`")))?,
            Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
    };
    if t == 0 {
        return Err(LabError::config("--threads", "must be at least 1"));
    }
    Ok(t)
}

#[derive(Debug, Default)]
pub struct Outputs {
    pub spectra: Option<SpectraOutput>,
    pub ops: Option<Vec<OpsRow>>,
    pub response: Option<ResponseOutput>,
    pub training: Option<TrainingOutput>,
    pub gap: Option<GapOutput>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub outputs: Outputs,
}

fn file_name(path: &std::path::Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn run_stage(ctx: &mut Context, stage: Stage, outputs: &mut Outputs) -> LabResult<Vec<String>> {
    let dir = ctx.cfg.output.clone();
    let fail = |source: GcnnError| LabError::Stage { stage, source };
    let mut files = Vec::new();
    match stage {
        Stage::Spectra => {
            let out = spectra::run(ctx).map_err(fail)?;
            let mut by_n: BTreeMap<usize, Vec<_>> = BTreeMap::new();
            for row in &out.eigen {
                by_n.entry(row.n).or_default().push(row.clone());
            }
            for (n, rows) in &by_n {
                files.push(write_csv(&dir, &format!("spectra_n{n}.csv"), rows)?);
            }
            files.push(write_csv(&dir, "levels.csv", &out.levels)?);
            outputs.spectra = Some(out);
        }
        Stage::OpsCheck => {
            let out = ops::run(ctx).map_err(fail)?;
            files.push(write_csv(&dir, "ops_check.csv", &out)?);
            outputs.ops = Some(out);
        }
        Stage::ResponseConv => {
            let out = response::run(ctx).map_err(fail)?;
            files.push(write_csv(&dir, "response_conv.csv", &out.rows)?);
            files.push(write_csv(&dir, "hf_insensitivity.csv", &out.hf)?);
            outputs.response = Some(out);
        }
        Stage::TrainLadder => {
            let out = training::run(ctx).map_err(fail)?;
            files.push(write_csv(&dir, "train_ladder.csv", &out.rows)?);
            files.push(write_json(&dir, "train_ladder.json", &out)?);
            outputs.training = Some(out);
        }
        Stage::GapDemo => {
            let out = gap::scan(&ctx.cfg.gap.a_sq_inv, ctx.cfg.gap.lambda_max, ctx.cfg.master_seed).map_err(fail)?;
            files.push(write_csv(&dir, "gap_demo.csv", &out.rows)?);
            files.push(write_json(&dir, "gap_demo.json", &out.reports)?);
            outputs.gap = Some(out);
        }
    }
    Ok(files.iter().map(|p| file_name(p)).collect())
}

/// Runs `stages` in dependency order on a pool of `threads` workers and
/// writes `manifest.json`, also after a failing stage.
pub fn run(cfg: &ExperimentConfig, stages: &[Stage], threads: usize) -> LabResult<RunOutcome> {
    cfg.validate()?;
    let mut stages = stages.to_vec();
    stages.sort();
    stages.dedup();
    std::fs::create_dir_all(&cfg.output).map_err(|e| LabError::io(&cfg.output, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| LabError::config("--threads", e.to_string()))?;
    pool.install(|| {
        let mut ctx = Context::new(cfg.clone()).map_err(|e| LabError::config("manifold", e.to_string()))?;
        let mut report = RunReport {
            config: cfg.clone(),
            seed_mixing: MIXING_RULE,
            stages: Vec::new(),
            warnings: Vec::new(),
            environment: Environment::capture(threads),
            failure: None,
        };
        let mut outputs = Outputs::default();
        let mut result = Ok(());
        for stage in stages {
            let start = Instant::now();
            match run_stage(&mut ctx, stage, &mut outputs) {
                Ok(files) => report.stages.push(StageRecord {
                    stage,
                    files,
                    wall_clock_s: start.elapsed().as_secs_f64(),
                }),
                Err(e) => {
                    report.failure = Some(Failure { stage, message: e.to_string() });
                    result = Err(e);
                    break;
                }
            }
        }
        report.warnings = ctx.warnings();
        write_json(&cfg.output, "manifest.json", &report)?;
        result.map(|_| RunOutcome { report, outputs })
    })
}
