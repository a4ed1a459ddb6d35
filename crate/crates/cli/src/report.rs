//! `report`: turns the CSV artifacts found under a run directory into static
//! tables and SVG plots. Inputs are recognized by their header line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;
use stpn_core::eval::MAP_ROW;
use stpn_core::train::EpochStats;
use walkdir::WalkDir;

use crate::commands::{write_file, write_metadata, TRACE_HEADER};
use crate::svg::{Plot, Series};
use crate::ReportArgs;

const EVAL_HEADER: &str = "iou,class,ap";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Loss,
    Eval,
    Trace,
}

fn classify(header: &str) -> Option<Kind> {
    match header.trim_end() {
        h if h == EpochStats::CSV_HEADER => Some(Kind::Loss),
        EVAL_HEADER => Some(Kind::Eval),
        TRACE_HEADER => Some(Kind::Trace),
        _ => None,
    }
}

fn read_rows(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    reader
        .records()
        .collect::<Result<_, _>>()
        .with_context(|| format!("parsing {}", path.display()))
}

fn column(record: &csv::StringRecord, i: usize) -> String {
    record.get(i).unwrap_or_default().to_string()
}

/// Finds recognizable CSVs under `run_dir`, skipping `exclude`, in path order.
fn discover(run_dir: &Path, exclude: &Path) -> Result<Vec<(PathBuf, Kind)>> {
    let mut found = Vec::new();
    for entry in WalkDir::new(run_dir).sort_by_file_name() {
        let entry = entry.with_context(|| format!("scanning {}", run_dir.display()))?;
        let path = entry.path();
        if path.starts_with(exclude) || !entry.file_type().is_file() {
            continue;
        }
        if path.extension().and_then(|e| e.to_str()) != Some("csv") {
            continue;
        }
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        if let Some(kind) = classify(text.lines().next().unwrap_or_default()) {
            found.push((path.to_path_buf(), kind));
        }
    }
    Ok(found)
}

/// Output stem for an input: its path relative to the run dir, minus `.csv`,
/// with separators flattened.
fn stem(run_dir: &Path, input: &Path) -> String {
    let rel = input.strip_prefix(run_dir).unwrap_or(input).with_extension("");
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("_")
}

fn loss_plot(path: &Path, name: &str) -> Result<String> {
    let rows = read_rows(path)?;
    let series = [(1, "loss_class"), (2, "loss_sparsity"), (3, "loss_total")]
        .into_iter()
        .map(|(i, label)| Series {
            name: label.to_string(),
            points: rows.iter().map(|r| (column(r, 0), column(r, i))).collect(),
        })
        .collect();
    Ok(Plot {
        title: format!("training loss: {name}"),
        x_label: "epoch".into(),
        y_label: "loss".into(),
        series,
        y_range: None,
    }
    .render())
}

/// Returns the `iou,map` table and the mAP/AP-vs-IoU plot.
fn map_outputs(path: &Path, name: &str) -> Result<(String, String)> {
    let rows = read_rows(path)?;
    let mut table = String::from("iou,map\n");
    let mut series: Vec<Series> = Vec::new();
    for r in &rows {
        let (iou, class, ap) = (column(r, 0), column(r, 1), column(r, 2));
        if class == MAP_ROW {
            table.push_str(&format!("{iou},{ap}\n"));
        }
        let label = if class == MAP_ROW { "mAP".to_string() } else { class };
        match series.iter_mut().find(|s| s.name == label) {
            Some(s) => s.points.push((iou, ap)),
            None => series.push(Series {
                name: label,
                points: vec![(iou, ap)],
            }),
        }
    }
    if table.lines().count() == 1 {
        bail!("{} has no {MAP_ROW} rows", path.display());
    }
    // mAP drawn last so it sits on top
    series.sort_by_key(|s| s.name == "mAP");
    let plot = Plot {
        title: format!("AP vs IoU threshold: {name}"),
        x_label: "IoU threshold".into(),
        y_label: "average precision".into(),
        series,
        y_range: Some((0.0, 1.0)),
    };
    Ok((table, plot.render()))
}

fn trace_plot(path: &Path) -> Result<String> {
    let rows = read_rows(path)?;
    let video = rows.first().map(|r| column(r, 0)).unwrap_or_default();
    let mut series: Vec<Series> = Vec::new();
    for r in &rows {
        let label = format!("{} {}", column(r, 1), column(r, 2));
        let point = (column(r, 3), column(r, 4));
        match series.iter_mut().find(|s| s.name == label) {
            Some(s) => s.points.push(point),
            None => series.push(Series {
                name: label,
                points: vec![point],
            }),
        }
    }
    Ok(Plot {
        title: format!("weighted T-CAM: {video}"),
        x_label: "dense segment index".into(),
        y_label: "psi".into(),
        series,
        y_range: Some((0.0, 1.0)),
    }
    .render())
}

pub fn run(args: &ReportArgs) -> Result<()> {
    let out_dir = args.out.clone().unwrap_or_else(|| args.run_dir.join("report"));
    if !args.run_dir.is_dir() {
        bail!("run directory {} does not exist", args.run_dir.display());
    }
    let inputs = discover(&args.run_dir, &out_dir)?;
    if inputs.is_empty() {
        bail!(
            "no training logs, eval reports or traces found under {}",
            args.run_dir.display()
        );
    }

    let mut outputs = Vec::new();
    for (path, kind) in &inputs {
        let stem = stem(&args.run_dir, path);
        match kind {
            Kind::Loss => {
                let name = format!("{stem}.loss.svg");
                write_file(&out_dir.join(&name), loss_plot(path, &stem)?)?;
                outputs.push(name);
            }
            Kind::Eval => {
                let (table, svg) = map_outputs(path, &stem)?;
                let csv_name = format!("{stem}.map.csv");
                let svg_name = format!("{stem}.map.svg");
                write_file(&out_dir.join(&csv_name), table)?;
                write_file(&out_dir.join(&svg_name), svg)?;
                outputs.extend([csv_name, svg_name]);
            }
            Kind::Trace => {
                let name = format!("{stem}.svg");
                write_file(&out_dir.join(&name), trace_plot(path)?)?;
                outputs.push(name);
            }
        }
    }
    let input_names: Vec<String> = inputs.iter().map(|(p, _)| stem(&args.run_dir, p) + ".csv").collect();
    write_metadata(
        &out_dir.join("report.meta.json"),
        "report",
        json!({
            "run_dir": args.run_dir.display().to_string(),
            "out": out_dir.display().to_string(),
            "inputs": input_names,
            "outputs": outputs,
        }),
    )?;
    eprintln!("wrote {} files to {}", outputs.len(), out_dir.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn headers_classify() {
        assert_eq!(classify(EpochStats::CSV_HEADER), Some(Kind::Loss));
        assert_eq!(classify("iou,class,ap\r"), Some(Kind::Eval));
        assert_eq!(classify(TRACE_HEADER), Some(Kind::Trace));
        assert_eq!(classify("video_id,class,start_s,end_s,score"), None);
    }

    #[test]
    fn stems_flatten_subdirectories() {
        let run = Path::new("/runs/a");
        assert_eq!(stem(run, Path::new("/runs/a/traces/v1.psi.csv")), "traces_v1.psi");
        assert_eq!(stem(run, Path::new("/runs/a/report.csv")), "report");
    }
}
