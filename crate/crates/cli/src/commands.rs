use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use gns_core::datagen::{generate_dataset, CaseSpec, Dataset};
use gns_core::evaluation::{evaluate_suite, rollout, sample_fields_csv, snapshot_indices, RolloutResult};
use gns_core::graphs::build_topology;
use gns_core::io::{read_checkpoint, read_dataset, write_atomic, write_checkpoint, write_dataset, RunConfig, SelectionManifest};
use gns_core::selection::select_training_set;
use gns_core::training::{init_training, resume_training, TrainState};
use gns_core::GnsError;

use crate::ConfigArgs;

/// Times at which one test trajectory's fields are saved for heat maps.
const SAMPLE_TIMES: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

pub fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut overrides = Vec::new();
    if let Some(case) = &args.case {
        overrides.push(format!("case=\"{case}\""));
    }
    overrides.extend(args.set.iter().cloned());
    let cfg = match &args.config {
        Some(path) => RunConfig::load(path, &overrides)?,
        None if args.case.is_some() => RunConfig::from_toml("", &overrides)?,
        None => return Err(GnsError::Config("pass --config FILE or --case NAME".into()).into()),
    };
    Ok(cfg)
}

/// Fail before any work if an output would be clobbered.
fn ensure_writable(paths: &[&Path], overwrite: bool) -> Result<()> {
    for p in paths {
        if !overwrite && p.exists() {
            return Err(GnsError::Exists(p.to_path_buf()).into());
        }
    }
    Ok(())
}

fn snapshot_path(dir: &Path, command: &str) -> PathBuf {
    dir.join(format!("{command}.config.toml"))
}

fn write_snapshot(cfg: &RunConfig, dir: &Path, command: &str, overwrite: bool) -> Result<()> {
    write_atomic(&snapshot_path(dir, command), cfg.to_toml().as_bytes(), overwrite)?;
    Ok(())
}

fn parent(p: &Path) -> PathBuf {
    p.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn load_dataset(cfg: &RunConfig, path: Option<PathBuf>) -> Result<Dataset> {
    let path = path.unwrap_or_else(|| cfg.paths.dataset());
    let ds = read_dataset(&path).with_context(|| format!("reading dataset {}", path.display()))?;
    if ds.case() != cfg.case {
        return Err(GnsError::Input(format!("dataset holds {}, config is for {}", ds.case(), cfg.case)).into());
    }
    Ok(ds)
}

fn load_selection(cfg: &RunConfig, path: Option<PathBuf>, ds: &Dataset) -> Result<SelectionManifest> {
    let path = path.unwrap_or_else(|| cfg.paths.selection());
    let m = SelectionManifest::read(&path).with_context(|| format!("reading selection {}", path.display()))?;
    if m.case != ds.case() || m.n_samples != ds.len() {
        return Err(GnsError::Input(format!(
            "selection was made for {} trajectories of {}, dataset has {} of {}",
            m.n_samples,
            m.case,
            ds.len(),
            ds.case()
        ))
        .into());
    }
    Ok(m)
}

pub fn generate(args: &ConfigArgs, out: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(args)?;
    let out = out.unwrap_or_else(|| cfg.paths.dataset());
    let dir = parent(&out);
    ensure_writable(&[&out, &snapshot_path(&dir, "generate")], args.overwrite)?;
    let spec: &CaseSpec = &cfg.data;
    let start = Instant::now();
    log::info!("generating {} {} trajectories on {}x{}", cfg.n_samples, cfg.case, spec.grid.nx, spec.grid.ny);
    let ds = generate_dataset(spec, cfg.n_samples, cfg.data_seed)?;
    write_dataset(&out, &ds, args.overwrite)?;
    write_snapshot(&cfg, &dir, "generate", args.overwrite)?;
    log::info!("wrote {} in {:.1?}", out.display(), start.elapsed());
    Ok(())
}

pub fn select(args: &ConfigArgs, dataset: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(args)?;
    let out = out.unwrap_or_else(|| cfg.paths.selection());
    let dir = parent(&out);
    ensure_writable(&[&out, &snapshot_path(&dir, "select")], args.overwrite)?;
    let ds = load_dataset(&cfg, dataset)?;
    let sel = select_training_set(&ds, &cfg.selection)?;
    for w in &sel.warnings {
        log::warn!("{w}");
    }
    log::info!("selected {:?}", sel.ids);
    SelectionManifest::new(ds.case(), ds.len(), cfg.selection.clone(), sel).write(&out, args.overwrite)?;
    write_snapshot(&cfg, &dir, "select", args.overwrite)?;
    Ok(())
}

fn loss_csv(state: &TrainState) -> String {
    let rows = state.history.iter().map(|r| {
        vec![
            r.epoch.to_string(),
            format!("{:e}", r.mean_loss),
            format!("{:e}", r.lr),
            format!("{:e}", r.wall_seconds),
        ]
    });
    gns_core::io::csv(&["epoch", "mean_loss", "lr", "wall_seconds"], rows)
}

pub fn train(
    args: &ConfigArgs,
    dataset: Option<PathBuf>,
    selection: Option<PathBuf>,
    out: Option<PathBuf>,
    resume: Option<PathBuf>,
) -> Result<()> {
    let cfg = load_config(args)?;
    let out = out.unwrap_or_else(|| cfg.paths.checkpoint());
    let dir = parent(&out);
    let loss_path = dir.join("loss.csv");
    ensure_writable(&[&out, &loss_path, &snapshot_path(&dir, "train")], args.overwrite)?;
    let ds = load_dataset(&cfg, dataset)?;
    let manifest = load_selection(&cfg, selection, &ds)?;
    let state = match resume {
        Some(p) => {
            let s = read_checkpoint(&p).with_context(|| format!("reading checkpoint {}", p.display()))?;
            log::info!("resuming after epoch {}", s.epochs_done);
            s
        }
        None => init_training(&ds, &manifest.ids, &cfg.train, &cfg.model)?,
    };
    log::info!(
        "training {} parameters on {} trajectories for {} epochs",
        state.params.count(),
        manifest.ids.len(),
        state.config.epochs
    );
    let state = resume_training(&ds, &manifest.ids, state, &mut |s| {
        // Periodic checkpoints replace the ones written earlier in this run.
        write_checkpoint(&out, s, true)?;
        log::debug!("checkpoint after epoch {} written to {}", s.epochs_done, out.display());
        Ok(())
    })?;
    write_atomic(&loss_path, loss_csv(&state).as_bytes(), true)?;
    write_snapshot(&cfg, &dir, "train", true)?;
    log::info!("wrote {}", out.display());
    Ok(())
}

pub fn evaluate(
    args: &ConfigArgs,
    dataset: Option<PathBuf>,
    selection: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let cfg = load_config(args)?;
    let dir = out.unwrap_or_else(|| cfg.paths.eval_dir());
    let files = ["per_trajectory.csv", "error_curve.csv", "summary.csv", "sample_fields.csv", "evaluate.config.toml"];
    let paths: Vec<PathBuf> = files.iter().map(|f| dir.join(f)).collect();
    ensure_writable(&paths.iter().map(PathBuf::as_path).collect::<Vec<_>>(), args.overwrite)?;
    let ds = load_dataset(&cfg, dataset)?;
    let manifest = load_selection(&cfg, selection, &ds)?;
    let ckpt = checkpoint.unwrap_or_else(|| cfg.paths.checkpoint());
    let state = read_checkpoint(&ckpt).with_context(|| format!("reading checkpoint {}", ckpt.display()))?;
    if state.params.config().out_channels != ds.channels() {
        return Err(GnsError::Input("checkpoint and dataset disagree on the channel count".into()).into());
    }
    let ids = cfg.test_ids(ds.len(), &manifest.ids);
    if ids.is_empty() {
        return Err(GnsError::Config("no test trajectories remain after the selection".into()).into());
    }
    log::info!("rolling out {} test trajectories", ids.len());
    let report = evaluate_suite(&ds, &ids, &state.params, &state.normalizer)?;
    for (c, name) in report.channel_names.iter().enumerate() {
        log::info!(
            "{name}: mean relative L2 {:.4e}, pooled {:.4e}",
            report.mean_overall[c],
            report.pooled_overall[c]
        );
    }
    if !report.diverged.is_empty() {
        log::warn!("{} rollouts diverged: {:?}", report.diverged.len(), report.diverged);
    }
    let sample = sample_rollout(&ds, &state, &report.results, ids[0])?;
    let contents = [
        report.per_trajectory_csv(),
        report.error_curve_csv(),
        report.summary_csv(),
        sample,
        cfg.to_toml(),
    ];
    for (p, text) in paths.iter().zip(&contents) {
        write_atomic(p, text.as_bytes(), args.overwrite)?;
    }
    if report.results.is_empty() {
        let step = report.diverged[0].1;
        return Err(GnsError::RolloutDivergence { step }.into());
    }
    Ok(())
}

/// Fields of the first test trajectory; a diverged rollout is padded with NaN.
fn sample_rollout(ds: &Dataset, state: &TrainState, results: &[RolloutResult], id: usize) -> Result<String> {
    let traj = &ds.trajectories[id];
    let len = traj.n_nodes * traj.channels;
    let result = match results.iter().find(|r| r.trajectory == id) {
        Some(r) => r.clone(),
        None => {
            let topo = build_topology(ds.grid)?;
            let r = rollout(traj.snapshot(0), &topo, &state.params, &state.normalizer, traj.dt, traj.n_snapshots() - 1);
            let mut predicted = r.fields;
            predicted.resize(traj.fields().len(), f64::NAN);
            RolloutResult {
                trajectory: id,
                predicted,
                per_step: Vec::new(),
                overall: Vec::new(),
                sums: Vec::new(),
            }
        }
    };
    debug_assert_eq!(result.predicted.len(), traj.n_snapshots() * len);
    let snaps = snapshot_indices(&SAMPLE_TIMES, traj.dt, traj.n_snapshots());
    Ok(sample_fields_csv(&result, traj.fields(), ds.grid, traj.channels, traj.dt, &snaps))
}
