use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::{json, Value};
use stpn_core::data::{synth_dataset, Dataset, Stream, SynthConfig};
use stpn_core::eval::{evaluate, parse_thresholds, read_detections};
use stpn_core::localize::{detections_to_csv, localize_dataset, LocalizeConfig, VideoLocalization};
use stpn_core::model::{load_checkpoint, save_checkpoint};
use stpn_core::train::{self, EpochStats, Hyperparams};

use crate::{EvalArgs, LocalizeArgs, SynthArgs, TrainArgs};

/// Bad flag combination detected by the CLI itself.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(stpn_core::Error::Config(_)) = cause.downcast_ref::<stpn_core::Error>() {
            return 1;
        }
    }
    2
}

pub const TRACE_HEADER: &str = "video_id,stream,class,t,psi";

/// `<path>.meta.json`
pub fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn write_metadata(path: &Path, command: &str, config: Value) -> Result<()> {
    let doc = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
    });
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    write_file(path, text)
}

fn show(path: &Path) -> String {
    path.display().to_string()
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let config = SynthConfig {
        num_videos: args.videos,
        num_classes: args.classes,
        dim: args.dim,
        raw_t: args.raw_t,
        actions_per_video: args.actions_per_video,
        noise_scale: args.noise,
    };
    let dataset = synth_dataset(&config, args.seed)?;
    let manifest = dataset.write(&args.out)?;
    write_metadata(
        &args.out.join("synth.meta.json"),
        "synth",
        json!({ "out": show(&args.out), "seed": args.seed, "synth": config }),
    )?;
    eprintln!(
        "wrote {} videos, {} classes to {}",
        config.num_videos,
        config.num_classes,
        manifest.display()
    );
    Ok(())
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let hyper = Hyperparams {
        beta: args.beta,
        lr: args.lr,
        t_out: args.t_out,
        epochs: args.epochs,
        hidden: args.hidden,
        seed: args.seed,
        ..Hyperparams::default()
    };
    hyper.validate()?;
    let dataset = Dataset::load(&args.manifest)?;

    let mut log = format!("{}\n", EpochStats::CSV_HEADER);
    let stdout = std::io::stdout();
    writeln!(stdout.lock(), "{}", EpochStats::CSV_HEADER)?;
    let outcome = train::train(&dataset, args.stream, &hyper, |stats| {
        let row = stats.csv_row();
        let _ = writeln!(stdout.lock(), "{row}");
        log.push_str(&row);
        log.push('\n');
    })?;

    save_checkpoint(&args.out, &outcome.params)?;
    if let Some(path) = &args.log {
        write_file(path, &log)?;
    }
    write_metadata(
        &meta_path(&args.out),
        "train",
        json!({
            "manifest": show(&args.manifest),
            "stream": args.stream,
            "out": show(&args.out),
            "log": args.log.as_deref().map(show),
            "hyperparams": hyper,
        }),
    )
}

pub fn localize_config(args: &LocalizeArgs) -> LocalizeConfig {
    LocalizeConfig {
        alpha: args.alpha,
        class_reject_p: args.class_reject,
        tau: args.tau,
        nms_iou: args.nms_iou,
        interp: args.interp,
        t_out: args.t_out,
    }
}

pub fn localize(args: &LocalizeArgs) -> Result<()> {
    let cfg = localize_config(args);
    cfg.validate()?;
    if args.threads == 0 {
        return Err(UsageError("--threads must be >= 1".into()).into());
    }
    let rgb = load_checkpoint(&args.rgb)?;
    let flow = load_checkpoint(&args.flow)?;
    let dataset = Dataset::load(&args.manifest)?;
    let videos = localize_dataset(&rgb, &flow, &dataset, &cfg, args.threads)?;

    let dets: Vec<_> = videos.iter().flat_map(|v| v.detections.iter().cloned()).collect();
    write_file(&args.out, detections_to_csv(&dets, &dataset.manifest))?;
    if let Some(dir) = &args.traces {
        for video in &videos {
            let path = dir.join(format!("{}.psi.csv", file_stem_for(&video.video_id)));
            write_file(&path, trace_csv(video, &dataset.manifest.class_names))?;
        }
    }
    write_metadata(
        &meta_path(&args.out),
        "localize",
        json!({
            "manifest": show(&args.manifest),
            "rgb": show(&args.rgb),
            "flow": show(&args.flow),
            "out": show(&args.out),
            "traces": args.traces.as_deref().map(show),
            "localize": cfg,
        }),
    )?;
    eprintln!("{} detections over {} videos", dets.len(), videos.len());
    Ok(())
}

/// Video ids are free-form; keep file names portable.
pub fn file_stem_for(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Weighted T-CAM of the kept classes, both streams, on the dense grid.
pub fn trace_csv(video: &VideoLocalization, class_names: &[String]) -> String {
    let mut out = format!("{TRACE_HEADER}\n");
    for (stream, psi) in [(Stream::Rgb, &video.psi_rgb), (Stream::Flow, &video.psi_flow)] {
        for &c in &video.kept_classes {
            for (t, v) in psi.values.column(c).iter().enumerate() {
                writeln!(out, "{},{stream},{},{t},{v}", video.video_id, class_names[c]).unwrap();
            }
        }
    }
    out
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let thresholds = parse_thresholds(&args.iou)?;
    if args.threads == 0 {
        return Err(UsageError("--threads must be >= 1".into()).into());
    }
    let manifest = stpn_core::data::load_manifest(&args.manifest)?;
    let dets = read_detections(&args.detections, &manifest)?;
    let report = evaluate(&dets, &manifest, &thresholds, args.threads)?;
    write_file(&args.out, report.to_csv())?;
    write_metadata(
        &meta_path(&args.out),
        "eval",
        json!({
            "manifest": show(&args.manifest),
            "detections": show(&args.detections),
            "iou": thresholds,
            "out": show(&args.out),
        }),
    )?;
    for (t, m) in report.thresholds.iter().zip(&report.map) {
        eprintln!("mAP@{t} = {m:.4}");
    }
    Ok(())
}
