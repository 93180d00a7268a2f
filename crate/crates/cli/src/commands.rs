//! Pipeline commands. Each reads its upstream artifacts, writes its
//! outputs under the run directory and keeps the manifest current.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array3, Axis};
use unetkf_core::cov::CovPatch;
use unetkf_core::da::Method;
use unetkf_core::harness::{
    capture_samples, center_ratio, day_of, nature_run, observation_stream, report_csv, report_rows, run_experiment,
    Assets, ControlRun, Metrics, RunSummary, SkillAccumulator, StoredEnsemble, Truth,
};
use unetkf_core::qg::{Snapshot, SECONDS_PER_DAY};
use unetkf_core::unet::{predict_records, train, PatchDataset};
use unetkf_core::{io, Error, GridSpec, Result};

use crate::config::{load_config, Config};
use crate::manifest::{RunManifest, MANIFEST_FILE};

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Truth,
    Observe,
    DaRun,
    Extract,
    Train,
    EvalCov,
    /// Summarize the given run directories.
    Report(Vec<PathBuf>),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Truth => "truth",
            Command::Observe => "observe",
            Command::DaRun => "da-run",
            Command::Extract => "extract",
            Command::Train => "train",
            Command::EvalCov => "eval-cov",
            Command::Report(_) => "report",
        }
    }
}

fn artifact(p: &Option<PathBuf>) -> &Path {
    p.as_deref().expect("artifact paths are resolved before dispatch")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    io::write_bytes(path, text.as_bytes())
}

/// Run one command with outputs under `out`. Returns the final manifest,
/// which is also written to `out/manifest.ini`.
pub fn run_command(cmd: &Command, mut cfg: Config, out: &Path) -> Result<RunManifest> {
    cfg.resolve_artifacts(out);
    cfg.validate()?;
    let mut m = RunManifest::new(cmd.name(), &cfg);
    match cmd {
        Command::Truth => truth_cmd(&cfg, &mut m, out)?,
        Command::Observe => observe_cmd(&cfg, &mut m, out)?,
        Command::DaRun => da_run_cmd(&cfg, &mut m, out)?,
        Command::Extract => extract_cmd(&cfg, &mut m, out)?,
        Command::Train => train_cmd(&cfg, &mut m, out)?,
        Command::EvalCov => eval_cov_cmd(&cfg, &mut m, out)?,
        Command::Report(dirs) => report_cmd(&cfg, dirs, &mut m, out)?,
    }
    m.status = "complete".into();
    m.write(out)?;
    Ok(m)
}

/// Record an input in the manifest after checking it exists.
fn input(m: &mut RunManifest, out: &Path, role: &str, path: &Path) -> Result<PathBuf> {
    m.record(role, path);
    io::require(path, role).inspect_err(|_| {
        m.status = "failed".into();
        let _ = m.write(out);
    })
}

/// Record an output and persist the manifest before producing it.
fn output(m: &mut RunManifest, out: &Path, role: &str, path: &Path) -> Result<PathBuf> {
    m.record(role, path);
    m.write(out)?;
    Ok(path.to_path_buf())
}

pub fn load_truth(path: &Path) -> Result<Truth> {
    Truth::from_snapshots(io::read_trajectory(path)?).map_err(|e| match e {
        Error::Config(detail) => Error::Format {
            path: path.to_path_buf(),
            detail,
        },
        e => e,
    })
}

fn truth_cmd(cfg: &Config, m: &mut RunManifest, out: &Path) -> Result<()> {
    let path = output(m, out, "truth", artifact(&cfg.artifacts.truth))?;
    let truth = nature_run(&cfg.truth, &cfg.seeds())?;
    io::write_trajectory(&path, &truth.snapshots)
}

fn observe_cmd(cfg: &Config, m: &mut RunManifest, out: &Path) -> Result<()> {
    let truth = load_truth(&input(m, out, "truth", artifact(&cfg.artifacts.truth))?)?;
    let path = output(m, out, "observations", &cfg.artifacts.observations.clone().unwrap_or_else(|| out.join("obs.qgob")))?;
    io::write_observations(&path, &observation_stream(&cfg.experiment, &truth)?)
}

fn control_snapshots(run: &ControlRun) -> Vec<Snapshot> {
    let n = run.grid.n();
    run.states
        .iter()
        .enumerate()
        .map(|(k, s)| Snapshot {
            time: (k * run.config.stride_days) as f64 * SECONDS_PER_DAY,
            q: Array3::from_shape_vec((2, n, n), s.clone()).expect("state length"),
        })
        .collect()
}

/// The forecast-grid control run, read from its cache file when present
/// and generated (then cached) otherwise.
pub fn load_or_generate_control(cfg: &Config, path: &Path) -> Result<ControlRun> {
    let n = cfg.experiment.n;
    let c = &cfg.control;
    if path.exists() {
        let snaps = io::read_trajectory(path)?;
        let expect = c.years * 365 / c.stride_days + 1;
        let ok = snaps.len() == expect
            && snaps.iter().enumerate().all(|(k, s)| {
                s.n() == n && (s.time - (k * c.stride_days) as f64 * SECONDS_PER_DAY).abs() < 1.0
            });
        if !ok {
            return Err(Error::Format {
                path: path.to_path_buf(),
                detail: format!(
                    "cached control run does not match the configuration ({expect} states of {n}×{n}, {} days apart)",
                    c.stride_days
                ),
            });
        }
        return Ok(ControlRun {
            grid: GridSpec::square(n)?,
            config: c.clone(),
            states: snaps.into_iter().map(|s| s.as_slice().to_vec()).collect(),
        });
    }
    let run = ControlRun::generate(n, c, &cfg.seeds())?;
    io::write_trajectory(path, &control_snapshots(&run))?;
    Ok(run)
}

fn ensemble_snapshots(ensembles: &[StoredEnsemble], n: usize) -> Vec<Snapshot> {
    ensembles
        .iter()
        .flat_map(|e| {
            e.members.iter().map(move |x| Snapshot {
                time: e.day as f64 * SECONDS_PER_DAY,
                q: Array3::from_shape_vec((2, n, n), x.clone()).expect("state length"),
            })
        })
        .collect()
}

/// Stored ensembles, grouped by analysis day.
pub fn read_ensembles(path: &Path) -> Result<Vec<StoredEnsemble>> {
    let mut days: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    let mut n = None;
    for s in io::read_trajectory(path)? {
        if *n.get_or_insert(s.n()) != s.n() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                detail: "ensemble members on different grids".into(),
            });
        }
        days.entry(day_of(s.time)).or_default().push(s.as_slice().to_vec());
    }
    Ok(days.into_iter().map(|(day, members)| StoredEnsemble { day, members }).collect())
}

fn da_run_cmd(cfg: &Config, m: &mut RunManifest, out: &Path) -> Result<()> {
    let a = &cfg.artifacts;
    let e = &cfg.experiment;
    let truth = load_truth(&input(m, out, "truth", artifact(&a.truth))?)?;
    let observations = match &a.observations {
        Some(p) => Some(io::read_observations(&input(m, out, "observations", p)?)?),
        None => None,
    };
    let checkpoint = match e.da.method {
        Method::UNetKF => Some(io::read_checkpoint(&input(m, out, "checkpoint", artifact(&a.checkpoint))?)?),
        _ => None,
    };
    let control_path = artifact(&a.control);
    m.record("control", control_path);
    m.write(out)?;
    let control = load_or_generate_control(cfg, control_path)?;

    let metrics_path = output(m, out, "metrics", &out.join("metrics.csv"))?;
    if e.capture_stride.is_some() {
        output(m, out, "dataset", artifact(&a.dataset))?;
    }
    if e.store_ensembles {
        output(m, out, "ensembles", artifact(&a.ensembles))?;
    }
    let record = run_experiment(
        e,
        &Assets {
            truth: &truth,
            control: &control,
            checkpoint: checkpoint.as_ref(),
            observations: observations.as_deref(),
        },
    )?;
    write_text(&metrics_path, &Metrics::from(&record).to_csv())?;
    if let Some(ds) = &record.dataset {
        io::write_dataset(artifact(&a.dataset), ds)?;
    }
    if e.store_ensembles {
        io::write_trajectory(artifact(&a.ensembles), &ensemble_snapshots(&record.ensembles, e.n))?;
    }
    Ok(())
}

fn extract_cmd(cfg: &Config, m: &mut RunManifest, out: &Path) -> Result<()> {
    let a = &cfg.artifacts;
    let ensembles = read_ensembles(&input(m, out, "ensembles", artifact(&a.ensembles))?)?;
    let path = output(m, out, "dataset", artifact(&a.dataset))?;
    let grid = GridSpec::square(cfg.experiment.n)?;
    let stride = cfg.experiment.capture_stride.unwrap_or(1);
    let mut ds = PatchDataset::new(cfg.experiment.patch);
    for e in &ensembles {
        if e.members.first().is_some_and(|x| x.len() != grid.state_len()) {
            return Err(Error::config(format!(
                "stored ensembles are not on the configured {0}×{0} grid",
                grid.n()
            )));
        }
        ds.samples.extend(capture_samples(&e.members, &grid, ds.p, stride, e.day)?);
    }
    io::write_dataset(&path, &ds)
}

fn train_cmd(cfg: &Config, m: &mut RunManifest, out: &Path) -> Result<()> {
    let a = &cfg.artifacts;
    let ds = io::read_dataset(&input(m, out, "dataset", artifact(&a.dataset))?)?;
    let ck_path = output(m, out, "checkpoint", artifact(&a.checkpoint))?;
    let loss_path = output(m, out, "loss", &out.join("loss.csv"))?;
    let outcome = train(&ds, cfg.net, &cfg.train)?;
    io::write_checkpoint(&ck_path, &outcome.best)?;
    let mut s = String::from("epoch,train_rmse,val_rmse\n");
    for h in &outcome.history {
        writeln!(s, "{},{:e},{:e}", h.epoch, h.train_rmse, h.val_rmse).unwrap();
    }
    write_text(&loss_path, &s)
}

/// Ratio maps of the network's patches against the dataset's own
/// covariances, relative to the dataset's climatological (mean) patch.
fn eval_cov_cmd(cfg: &Config, m: &mut RunManifest, out: &Path) -> Result<()> {
    let a = &cfg.artifacts;
    let ds = io::read_dataset(&input(m, out, "dataset", artifact(&a.dataset))?)?;
    let ck = io::read_checkpoint(&input(m, out, "checkpoint", artifact(&a.checkpoint))?)?;
    if ds.is_empty() {
        return Err(Error::config("eval-cov needs a non-empty dataset"));
    }
    if ck.p != ds.p {
        return Err(Error::config(format!(
            "checkpoint patch side {} does not match dataset patch side {}",
            ck.p, ds.p
        )));
    }
    let paths: Vec<PathBuf> = (0..3)
        .map(|ch| output(m, out, &format!("cov_skill_ch{ch}"), &out.join(format!("cov_skill_ch{ch}.csv"))))
        .collect::<Result<_>>()?;
    let p = ds.p;
    let to_patch = |center: u32, v: &[f32]| CovPatch {
        center: center as usize,
        data: Array3::from_shape_fn((3, p, p), |(c, i, j)| v[(c * p + i) * p + j] as f64),
    };
    let count = ds.len() as f64;
    let mut clim = Array3::<f64>::zeros((3, p, p));
    for r in &ds.samples {
        clim += &to_patch(0, &r.output).data;
    }
    clim /= count;

    let mut acc = SkillAccumulator::new(p);
    for chunk in ds.samples.chunks(256) {
        let refs: Vec<_> = chunk.iter().collect();
        for (r, test) in chunk.iter().zip(predict_records(&ck, &refs)?) {
            let reference = to_patch(r.center, &r.output);
            let c = CovPatch {
                center: reference.center,
                data: clim.clone(),
            };
            acc.add(&test, &reference, &c)?;
        }
    }
    let ratio = acc.ratio();
    for (ch, path) in paths.iter().enumerate() {
        let mut s = String::new();
        for row in ratio.index_axis(Axis(0), ch).rows() {
            let cells: Vec<String> = row.iter().map(|v| v.map(|x| format!("{x:.6}")).unwrap_or_default()).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        write_text(path, &s)?;
        if let Some(r) = center_ratio(&ratio, ch) {
            println!("channel {ch}: centre ratio {r:.4}");
        }
    }
    Ok(())
}

fn report_cmd(cfg: &Config, dirs: &[PathBuf], m: &mut RunManifest, out: &Path) -> Result<()> {
    let mut runs = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let run_cfg = load_config(&input(m, out, "run", &dir.join(MANIFEST_FILE))?)?;
        let metrics_path = input(m, out, "metrics", &dir.join("metrics.csv"))?;
        let text = std::fs::read_to_string(&metrics_path).map_err(|source| Error::Io {
            path: metrics_path.clone(),
            source,
        })?;
        let metrics = Metrics::from_csv(&text).map_err(|e| Error::Format {
            path: metrics_path.clone(),
            detail: e.to_string(),
        })?;
        let e = &run_cfg.experiment;
        runs.push(RunSummary {
            name: e.name.clone(),
            method: e.da.method,
            ensemble_size: e.da.ensemble_size,
            relaxation: e.da.relaxation,
            localization_m: e.da.localization_m,
            metrics,
        });
    }
    let path = output(m, out, "report", &out.join("report.csv"))?;
    let rows = if runs.is_empty() { Vec::new() } else { report_rows(&runs, cfg.skip_days)? };
    let csv = report_csv(&rows);
    print!("{csv}");
    write_text(&path, &csv)
}
