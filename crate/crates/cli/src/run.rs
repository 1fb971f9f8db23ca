use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use tsfb_core::evalproto::{
    run_model, to_date_forecasts, write_forecast_csv, write_metric_csv, yearly_average_report, ForecastRecord, Inputs,
    ModelRun,
};
use tsfb_core::portfolio::{
    apply_costs, build_ledger, spread_table, write_ledger_csv, write_perf_csv, write_spread_csv, yearly_sharpe_series,
    PerfStats,
};

use crate::config::{Job, RunConfig};
use crate::manifest::{bundle_digest, sha256_hex, JobEntry, JobStatus, Manifest, MANIFEST_FILE};
use crate::report::{build_report, print_digest};

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub dry_run: bool,
    pub raw_kurtosis: bool,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub complete: bool,
    pub bundle_sha256: Option<String>,
}

#[derive(Serialize)]
struct PerfFile<'a> {
    gross: PerfStats,
    net: BTreeMap<String, PerfStats>,
    skipped_dates: &'a [(chrono::NaiveDate, String)],
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// The config as written into the bundle: the output location is left out
/// so that reruns elsewhere hash the same.
fn bundle_config(cfg: &RunConfig) -> RunConfig {
    RunConfig {
        output_dir: ".".into(),
        ..cfg.clone()
    }
}

fn prepare_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)?.next().is_some();
        if non_empty && !dir.join(MANIFEST_FILE).exists() {
            bail!("{} exists, is not empty and holds no {MANIFEST_FILE}", dir.display());
        }
        for sub in ["jobs", "report"] {
            let p = dir.join(sub);
            if p.exists() {
                fs::remove_dir_all(&p)?;
            }
        }
    }
    fs::create_dir_all(dir.join("jobs"))?;
    Ok(())
}

fn write_job(root: &Path, job: &Job, run: &ModelRun, cfg: &RunConfig, raw_kurtosis: bool) -> Result<()> {
    let dir = root.join(&job.dir);
    fs::create_dir_all(dir.join("checkpoints"))?;
    let records = run.records();
    write_forecast_csv(create(&dir.join("forecasts.csv"))?, &records)?;
    fs::write(dir.join("tuning.json"), serde_json::to_vec_pretty(&run.tuning)?)?;
    for v in &run.vintages {
        if let Some(bytes) = &v.checkpoint {
            fs::write(
                dir.join("checkpoints").join(format!("{}.{}", v.vintage.cutoff_year, v.checkpoint_ext)),
                bytes,
            )?;
        }
    }

    let keyed: Vec<ForecastRecord> = records
        .iter()
        .map(|r| ForecastRecord {
            model_id: job.key.clone(),
            ..r.clone()
        })
        .collect();
    let metrics = yearly_average_report(&keyed, cfg.plan.direction_rule);
    write_metric_csv(create(&dir.join("metrics.csv"))?, &metrics)?;
    fs::write(dir.join("metrics.json"), serde_json::to_vec_pretty(&metrics)?)?;

    let ledger = build_ledger(&to_date_forecasts(&records));
    write_ledger_csv(create(&dir.join("ledger.csv"))?, &ledger, &cfg.costs)?;
    if ledger.rows.is_empty() {
        log::warn!("{}: no portfolio dates, performance skipped", job.key);
        return Ok(());
    }
    let adjust = |p: PerfStats| if raw_kurtosis { p.with_raw_kurtosis() } else { p };
    let gross = adjust(PerfStats::gross(&ledger)?);
    write_perf_csv(create(&dir.join("perf_gross.csv"))?, &gross)?;
    let mut net = BTreeMap::new();
    for sc in &cfg.costs {
        let p = adjust(PerfStats::net(&apply_costs(&ledger, *sc))?);
        write_perf_csv(create(&dir.join(format!("perf_net_{}.csv", sc.name())))?, &p)?;
        net.insert(sc.name(), p);
    }
    let perf = PerfFile {
        gross,
        net,
        skipped_dates: &ledger.skipped,
    };
    fs::write(dir.join("perf.json"), serde_json::to_vec_pretty(&perf)?)?;
    write_spread_csv(create(&dir.join("spread.csv"))?, &spread_table(&ledger))?;

    let yearly = yearly_sharpe_series(&ledger.dates(), &ledger.ls_gross())?;
    let mut wr = csv::Writer::from_writer(create(&dir.join("yearly_sharpe.csv"))?);
    wr.write_record(["year", "sharpe", "n_days", "low_sample"])?;
    for y in yearly {
        wr.write_record([
            y.year.to_string(),
            y.sharpe.map(|s| s.to_string()).unwrap_or_default(),
            y.n_days.to_string(),
            y.low_sample.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

fn print_plan(cfg: &RunConfig, panel: &tsfb_core::panel::ReturnPanel, jobs: &[Job]) -> Result<()> {
    println!(
        "panel: {} dates x {} assets ({} .. {})",
        panel.n_dates(),
        panel.n_assets(),
        panel.dates().first().map(|d| d.to_string()).unwrap_or_default(),
        panel.dates().last().map(|d| d.to_string()).unwrap_or_default()
    );
    println!("vintage  cutoff      eval_year  train_rows  eval_rows");
    for v in cfg.vintages(panel)? {
        println!(
            "{:<8} {:<11} {:<10} {:<11} {}",
            v.index,
            v.cutoff.to_string(),
            v.eval_year,
            format!("{}..{}", v.train_rows.start, v.train_rows.end),
            format!("{}..{}", v.eval_rows.start, v.eval_rows.end)
        );
    }
    println!("job  model                                    window  grid  dir");
    for (k, j) in jobs.iter().enumerate() {
        let spec = cfg.models.iter().find(|m| m.name == j.model).expect("job from config");
        println!(
            "{:<4} {:<40} {:<7} {:<5} {}",
            k,
            j.key,
            j.window,
            spec.grid_for(j.window)?.len(),
            j.dir
        );
    }
    Ok(())
}

/// Validates, loads data and runs every job, writing artifacts under the
/// configured output directory. A failed job is recorded in the manifest
/// and the remaining jobs still run.
pub fn cmd_run(cfg: &RunConfig, opts: RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let panel = cfg.load_panel()?;
    cfg.vintages(&panel)?;
    let auxiliary = cfg.load_auxiliary()?;
    let bases = cfg.load_bases()?;
    let jobs = cfg.jobs()?;
    if opts.dry_run {
        print_plan(cfg, &panel, &jobs)?;
        return Ok(RunOutcome {
            complete: false,
            bundle_sha256: None,
        });
    }
    let raw_kurtosis = opts.raw_kurtosis || cfg.raw_kurtosis;
    let root = cfg.output_dir.as_path();
    prepare_dir(root)?;
    let stored = bundle_config(&RunConfig {
        raw_kurtosis,
        ..cfg.clone()
    });
    let config_bytes = serde_json::to_vec_pretty(&stored)?;
    fs::write(root.join("config.json"), &config_bytes)?;

    let mut manifest = Manifest {
        schema_version: crate::config::SCHEMA_VERSION,
        seed: cfg.seed,
        config_sha256: sha256_hex(&config_bytes),
        jobs: jobs
            .iter()
            .map(|j| JobEntry {
                job: j.clone(),
                status: JobStatus::Pending,
                error: None,
            })
            .collect(),
        complete: false,
        bundle_sha256: None,
    };
    manifest.write(root)?;

    for (k, job) in jobs.iter().enumerate() {
        let spec = cfg.models.iter().find(|m| m.name == job.model).expect("job from config");
        let inputs = Inputs {
            panel: &panel,
            auxiliary: &auxiliary,
            base: bases.get(&job.model),
            seed: cfg.seed,
        };
        let t0 = Instant::now();
        let result = run_model(&cfg.plan, spec, job.window, &inputs)
            .map_err(anyhow::Error::from)
            .and_then(|run| write_job(root, job, &run, cfg, raw_kurtosis));
        let entry = &mut manifest.jobs[k];
        match result {
            Ok(()) => {
                entry.status = JobStatus::Complete;
                eprintln!(
                    "[{}/{}] {} w{} done in {:.1}s",
                    k + 1,
                    jobs.len(),
                    job.key,
                    job.window,
                    t0.elapsed().as_secs_f64()
                );
            }
            Err(e) => {
                entry.status = JobStatus::Failed;
                entry.error = Some(format!("{e:#}"));
                eprintln!("[{}/{}] {} w{} failed: {e:#}", k + 1, jobs.len(), job.key, job.window);
            }
        }
        manifest.write(root)?;
    }

    if manifest.jobs.iter().any(|j| j.status == JobStatus::Complete) {
        let digest = build_report(root, raw_kurtosis)?;
        print_digest(&digest);
    }
    let bundle = bundle_digest(root)?;
    manifest.complete = manifest.all_complete();
    manifest.bundle_sha256 = Some(bundle.clone());
    manifest.write(root)?;
    println!("bundle sha256 {bundle}");
    Ok(RunOutcome {
        complete: manifest.complete,
        bundle_sha256: Some(bundle),
    })
}
