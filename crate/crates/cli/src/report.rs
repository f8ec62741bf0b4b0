//! SVG figures from the evaluation and training CSVs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gns_core::io::svg::{heatmap_row, line_chart, Series};
use gns_core::io::write_atomic;
use gns_core::GnsError;

use crate::commands::load_config;
use crate::ConfigArgs;

struct Csv {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_csv(path: &Path) -> Result<Csv> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| GnsError::Input(format!("{} is empty", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect::<Vec<_>>();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    Ok(Csv { header, rows })
}

fn cell(s: &str) -> Option<f64> {
    s.parse().ok()
}

fn number(s: &str, path: &Path) -> Result<f64> {
    cell(s).ok_or_else(|| GnsError::Input(format!("{}: `{s}` is not a number", path.display())).into())
}

pub fn run(args: &ConfigArgs, eval_dir: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let (eval_dir, run_dir, out) = match (&eval_dir, args.config.is_some() || args.case.is_some()) {
        (Some(e), false) => {
            let run = e.parent().map(Path::to_path_buf).unwrap_or_default();
            (e.clone(), run.clone(), out.unwrap_or_else(|| run.join("figures")))
        }
        _ => {
            let cfg = load_config(args)?;
            let e = eval_dir.unwrap_or_else(|| cfg.paths.eval_dir());
            (e, cfg.paths.out_dir.clone(), out.unwrap_or_else(|| cfg.paths.figures_dir()))
        }
    };
    let mut figures: Vec<(PathBuf, String)> = Vec::new();

    let curve_path = eval_dir.join("error_curve.csv");
    let curve = read_csv(&curve_path)?;
    let times = curve.rows.iter().map(|r| number(&r[0], &curve_path)).collect::<Result<Vec<_>>>()?;
    let series: Vec<Series<'_>> = curve.header[1..]
        .iter()
        .enumerate()
        .map(|(c, name)| Series {
            label: name.strip_prefix("mean_eps_").unwrap_or(name),
            points: times.iter().zip(&curve.rows).map(|(t, r)| (*t, r.get(c + 1).and_then(|v| cell(v)))).collect(),
        })
        .collect();
    figures.push((
        out.join("error_accumulation.svg"),
        line_chart("Error accumulation over the rollout", "t", "mean relative L2", &series, true),
    ));

    let loss_path = run_dir.join("loss.csv");
    if loss_path.exists() {
        let loss = read_csv(&loss_path)?;
        let points = loss
            .rows
            .iter()
            .map(|r| Ok((number(&r[0], &loss_path)?, cell(&r[1]))))
            .collect::<Result<Vec<_>>>()?;
        let s = [Series { label: "train", points }];
        figures.push((out.join("loss.svg"), line_chart("Training loss", "epoch", "mean MSE", &s, true)));
    }

    let fields_path = eval_dir.join("sample_fields.csv");
    if fields_path.exists() {
        figures.extend(field_maps(&fields_path, &out)?);
    }

    for (path, svg) in &figures {
        write_atomic(path, svg.as_bytes(), args.overwrite)?;
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

/// One figure per channel with rows of truth, prediction and absolute error.
fn field_maps(path: &Path, out: &Path) -> Result<Vec<(PathBuf, String)>> {
    let csv = read_csv(path)?;
    // (channel, time bits) -> (ix, iy, truth, pred)
    let mut panels: BTreeMap<(usize, u64), Vec<(usize, usize, f64, f64)>> = BTreeMap::new();
    let (mut nx, mut ny) = (0, 0);
    for r in &csv.rows {
        if r.len() != 6 {
            return Err(GnsError::Input(format!("{}: expected 6 columns", path.display())).into());
        }
        let t = number(&r[0], path)?;
        let ix = number(&r[1], path)? as usize;
        let iy = number(&r[2], path)? as usize;
        let c = number(&r[3], path)? as usize;
        let truth = number(&r[4], path)?;
        let pred = cell(&r[5]).unwrap_or(f64::NAN);
        nx = nx.max(ix + 1);
        ny = ny.max(iy + 1);
        panels.entry((c, t.to_bits())).or_default().push((ix, iy, truth, pred));
    }
    let mut by_channel: BTreeMap<usize, Vec<(f64, Vec<f64>, Vec<f64>)>> = BTreeMap::new();
    for ((c, tb), cells) in panels {
        let (mut truth, mut pred) = (vec![f64::NAN; nx * ny], vec![f64::NAN; nx * ny]);
        for (ix, iy, t, p) in cells {
            truth[iy * nx + ix] = t;
            pred[iy * nx + ix] = p;
        }
        by_channel.entry(c).or_default().push((f64::from_bits(tb), truth, pred));
    }
    let mut figures = Vec::new();
    for (c, mut snaps) in by_channel {
        snaps.sort_by(|a, b| a.0.total_cmp(&b.0));
        let label = |t: f64| format!("t={t:.2}");
        let truth: Vec<(String, &[f64])> = snaps.iter().map(|s| (label(s.0), s.1.as_slice())).collect();
        let pred: Vec<(String, &[f64])> = snaps.iter().map(|s| (label(s.0), s.2.as_slice())).collect();
        let errs: Vec<Vec<f64>> = snaps.iter().map(|s| s.1.iter().zip(&s.2).map(|(a, b)| (a - b).abs()).collect()).collect();
        let err: Vec<(String, &[f64])> = snaps.iter().zip(&errs).map(|(s, e)| (label(s.0), e.as_slice())).collect();
        for (kind, row) in [("truth", truth), ("prediction", pred), ("abs_error", err)] {
            let title = format!("channel {c}: {kind}");
            figures.push((out.join(format!("fields_c{c}_{kind}.svg")), heatmap_row(&title, &row, nx, ny)));
        }
    }
    Ok(figures)
}
