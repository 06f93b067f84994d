//! End-to-end orchestration over an artifact directory, and the
//! particle-noise sweep.
//!
//! Layout written under the output directory:
//!
//! ```text
//! config.txt          canonical config (input to every later stage)
//! scene.txt           scene manifest
//! luminance.elum      linear float frames
//! previews/NNNN.pgm   8-bit tone-mapped frames
//! masks/NNNN.pgm      16-bit rock instance masks
//! events.csv          event stream, text
//! events.erev         event stream, binary
//! dvs/NNNN.pgm        accumulated event frames ("DVS video")
//! yolo/               images/, labels/, manifest.txt
//! detections.txt      blob detector output
//! eval.txt            AP report
//! metrics.txt         event count, clutter ratio, mAP
//! run.txt             config hash and per-stage wall time
//! ```
//!
//! Every stage reads its inputs back from disk, so running the stages one by
//! one produces the same files as [`run_pipeline`].

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::PipelineConfig;
use crate::detect::{
    blob_detect, detections_to_text, evaluate_map, export_yolo, BBox, EvalReport, ImageEval,
    YoloSample,
};
use crate::error::{Error, Result};
use crate::events::{frames_to_events, inject_noise, EventStream};
use crate::imageio::{mask_from_pgm, mask_to_pgm, read_elum, write_elum, write_pgm8};
use crate::par;
use crate::render::{
    frame_times, mask_to_boxes, render_sequence, seconds_to_us, tone_map, LabelMask,
};
use crate::scene::{generate_scene, parse_scene_dump, scene_dump};
use crate::streamio::{
    accumulate_windows, event_frame_to_image, read_binary, write_binary, write_csv, EventFrame,
};

pub const CONFIG_FILE: &str = "config.txt";
pub const SCENE_FILE: &str = "scene.txt";
pub const ELUM_FILE: &str = "luminance.elum";
pub const PREVIEW_DIR: &str = "previews";
pub const MASK_DIR: &str = "masks";
pub const CSV_FILE: &str = "events.csv";
pub const EREV_FILE: &str = "events.erev";
pub const DVS_DIR: &str = "dvs";
pub const YOLO_DIR: &str = "yolo";
pub const DETECTIONS_FILE: &str = "detections.txt";
pub const EVAL_FILE: &str = "eval.txt";
pub const METRICS_FILE: &str = "metrics.txt";
pub const RUN_FILE: &str = "run.txt";
pub const SWEEP_FILE: &str = "sweep.tsv";

/// Per-invocation overrides that are not part of the config file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub window_us: Option<u64>,
    /// Worker threads; `None` uses the default pool.
    pub workers: Option<usize>,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingInput(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read(path)?)
        .map_err(|_| Error::Format(format!("{} is not UTF-8", path.display())))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn make_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn numbered(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("{k:04}.pgm"))
}

pub fn load_config(out: &Path) -> Result<PipelineConfig> {
    PipelineConfig::parse(&read_text(&out.join(CONFIG_FILE))?)
}

fn frame_times_us(cfg: &PipelineConfig) -> Vec<u64> {
    frame_times(&cfg.scene)
        .into_iter()
        .map(seconds_to_us)
        .collect()
}

fn load_masks(out: &Path, cfg: &PipelineConfig) -> Result<Vec<LabelMask>> {
    let dir = out.join(MASK_DIR);
    frame_times(&cfg.scene)
        .into_iter()
        .enumerate()
        .map(|(k, t)| {
            let m = mask_from_pgm(&read(&numbered(&dir, k))?, t)?;
            if (m.width, m.height) != (cfg.scene.width, cfg.scene.height) {
                return Err(Error::DimensionMismatch {
                    expected: (cfg.scene.width, cfg.scene.height),
                    actual: (m.width, m.height),
                });
            }
            Ok(m)
        })
        .collect()
}

fn load_events(out: &Path) -> Result<EventStream> {
    read_binary(&read(&out.join(EREV_FILE))?)
}

/// Writes the canonical config and the scene manifest.
pub fn stage_scene(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    if cfg.scene.frame_count() < 2 {
        return Err(Error::TooFewFrames(cfg.scene.frame_count()));
    }
    make_dir(out)?;
    let scene = generate_scene(&cfg.scene)?;
    write(&out.join(CONFIG_FILE), cfg.to_canonical_string())?;
    write(&out.join(SCENE_FILE), scene_dump(&scene))
}

/// Renders all frames: float luminance, previews and masks.
pub fn stage_render(out: &Path) -> Result<()> {
    let cfg = load_config(out)?;
    let scene = parse_scene_dump(&read_text(&out.join(SCENE_FILE))?, &cfg.scene)?;
    let seq = render_sequence(&scene)?;
    let previews = out.join(PREVIEW_DIR);
    let masks = out.join(MASK_DIR);
    make_dir(&previews)?;
    make_dir(&masks)?;
    for (k, (frame, mask)) in seq.iter().enumerate() {
        write(
            &numbered(&previews, k),
            write_pgm8(frame.width, frame.height, &tone_map(frame, cfg.exposure)),
        )?;
        write(&numbered(&masks, k), mask_to_pgm(mask))?;
    }
    let frames: Vec<_> = seq.into_iter().map(|(f, _)| f).collect();
    write(&out.join(ELUM_FILE), write_elum(&frames))
}

/// Converts the luminance frames into the event stream (CSV and EREV).
pub fn stage_events(out: &Path) -> Result<EventStream> {
    let cfg = load_config(out)?;
    let fps = cfg.scene.fps;
    let frames = read_elum(&read(&out.join(ELUM_FILE))?, |k| k as f64 / fps)?;
    if (frames.first().map(|f| (f.width, f.height))) != Some((cfg.scene.width, cfg.scene.height)) {
        return Err(Error::DimensionMismatch {
            expected: (cfg.scene.width, cfg.scene.height),
            actual: frames.first().map_or((0, 0), |f| (f.width, f.height)),
        });
    }
    let mut stream = frames_to_events(&frames, &cfg.dvs)?;
    if cfg.dvs.noise_enabled {
        let t0 = frames[0].timestamp_us();
        let t1 = frames[frames.len() - 1].timestamp_us();
        stream = inject_noise(&stream, &cfg.dvs, t0, t1);
    }
    write(&out.join(CSV_FILE), write_csv(&stream))?;
    write(&out.join(EREV_FILE), write_binary(&stream))?;
    Ok(stream)
}

fn window(cfg: &PipelineConfig, opts: &RunOptions) -> Result<u64> {
    match opts.window_us.unwrap_or(cfg.window_us) {
        0 => Err(Error::InvalidConfig {
            field: "window_us",
            reason: "must be > 0".into(),
        }),
        w => Ok(w),
    }
}

/// Accumulates the stream into event frames and writes them as images.
/// Returns the number of frames.
pub fn stage_frames(out: &Path, opts: &RunOptions) -> Result<usize> {
    let cfg = load_config(out)?;
    let stream = load_events(out)?;
    let frames = accumulate_windows(&stream, window(&cfg, opts)?);
    let dir = out.join(DVS_DIR);
    make_dir(&dir)?;
    for (j, f) in frames.iter().enumerate() {
        write(
            &numbered(&dir, j),
            write_pgm8(f.width, f.height, &event_frame_to_image(f, cfg.event_gain)),
        )?;
    }
    Ok(frames.len())
}

/// Mask paired with the event window ending at `end_us`: the first frame at
/// or after the window end.
pub fn mask_index_for_window(times_us: &[u64], end_us: u64) -> usize {
    times_us
        .partition_point(|&t| t < end_us)
        .min(times_us.len() - 1)
}

/// Mask of the frame pair that produced an event at `t_us`: the later frame
/// of the pair `(k, k + 1)` with `t_k < t <= t_{k+1}`.
pub fn mask_index_for_event(times_us: &[u64], t_us: u64) -> usize {
    let k = times_us.partition_point(|&t| t < t_us).saturating_sub(1);
    (k + 1).min(times_us.len() - 1)
}

/// Fraction of events that land on background (label 0) pixels of the mask
/// of the frame pair that produced them. Zero for an empty stream.
pub fn clutter_ratio(stream: &EventStream, masks: &[LabelMask], times_us: &[u64]) -> f64 {
    if stream.is_empty() {
        return 0.0;
    }
    let background = stream
        .events
        .iter()
        .filter(|e| {
            masks[mask_index_for_event(times_us, e.t)].get(e.x as usize, e.y as usize) == 0
        })
        .count();
    background as f64 / stream.len() as f64
}

struct Labeled {
    frames: Vec<EventFrame>,
    boxes: Vec<Vec<BBox>>,
}

fn frame_name(j: usize) -> String {
    format!("frame_{j:04}")
}

fn labeled_windows(cfg: &PipelineConfig, stream: &EventStream, masks: &[LabelMask], window_us: u64) -> Labeled {
    let times = frame_times_us(cfg);
    let min_area = cfg.min_visible_area();
    let frames = accumulate_windows(stream, window_us);
    let boxes = frames
        .iter()
        .map(|f| {
            let m = &masks[mask_index_for_window(&times, f.t_end_us)];
            mask_to_boxes(m, min_area).iter().map(BBox::from).collect()
        })
        .collect();
    Labeled { frames, boxes }
}

/// Writes the YOLO dataset built from event frames and mask boxes.
pub fn stage_export(out: &Path, opts: &RunOptions) -> Result<usize> {
    let cfg = load_config(out)?;
    let stream = load_events(out)?;
    let masks = load_masks(out, &cfg)?;
    let lab = labeled_windows(&cfg, &stream, &masks, window(&cfg, opts)?);
    let samples: Vec<YoloSample> = lab
        .frames
        .iter()
        .zip(lab.boxes)
        .enumerate()
        .map(|(j, (f, boxes))| YoloSample {
            name: frame_name(j),
            width: f.width,
            height: f.height,
            image: event_frame_to_image(f, cfg.event_gain),
            boxes,
        })
        .collect();
    export_yolo(&out.join(YOLO_DIR), &samples, cfg.split_ratio, cfg.scene.seed)?;
    Ok(samples.len())
}

/// Headline numbers of one pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub total_events: usize,
    pub clutter_ratio: f64,
    pub map: f64,
}

/// Runs the blob detector on every event frame and scores it against the
/// mask boxes; also writes the clutter metrics.
pub fn stage_eval(out: &Path, opts: &RunOptions) -> Result<(EvalReport, Metrics)> {
    let cfg = load_config(out)?;
    let stream = load_events(out)?;
    let masks = load_masks(out, &cfg)?;
    let lab = labeled_windows(&cfg, &stream, &masks, window(&cfg, opts)?);
    let images: Vec<ImageEval> = par::map_indexed(lab.frames.len(), |j| ImageEval {
        name: frame_name(j),
        detections: blob_detect(&lab.frames[j], cfg.density_threshold, cfg.blob_min_area),
        ground_truths: lab.boxes[j].clone(),
    });
    let report = evaluate_map(&images, cfg.iou_threshold);
    let metrics = Metrics {
        total_events: stream.len(),
        clutter_ratio: clutter_ratio(&stream, &masks, &frame_times_us(&cfg)),
        map: report.map,
    };
    write(&out.join(DETECTIONS_FILE), detections_to_text(&images))?;
    write(&out.join(EVAL_FILE), report.to_text())?;
    write(
        &out.join(METRICS_FILE),
        format!(
            "events {}\nclutter {:.6}\nmap {:.6}\n",
            metrics.total_events, metrics.clutter_ratio, metrics.map
        ),
    )?;
    Ok((report, metrics))
}

/// Runs every stage in order into `out` and records `run.txt`.
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path, opts: &RunOptions) -> Result<Metrics> {
    par::with_workers(opts.workers, || {
        let mut timings: Vec<(&str, f64)> = Vec::new();
        let mut timed = |name: &'static str, f: &mut dyn FnMut() -> Result<()>| -> Result<()> {
            let start = Instant::now();
            f()?;
            timings.push((name, start.elapsed().as_secs_f64()));
            Ok(())
        };
        let mut metrics = None;
        timed("scene", &mut || stage_scene(cfg, out))?;
        timed("render", &mut || stage_render(out))?;
        timed("events", &mut || stage_events(out).map(|_| ()))?;
        timed("frames", &mut || stage_frames(out, opts).map(|_| ()))?;
        timed("export", &mut || match stage_export(out, opts) {
            Ok(_) | Err(Error::EmptyDataset) => Ok(()),
            Err(e) => Err(e),
        })?;
        timed("eval", &mut || {
            metrics = Some(stage_eval(out, opts)?.1);
            Ok(())
        })?;
        let mut run = format!("config_hash {}\nworkers {}\n", cfg.hash(), par::current_workers());
        for (name, secs) in &timings {
            let _ = writeln!(run, "stage {name} {secs:.6}");
        }
        write(&out.join(RUN_FILE), run)?;
        Ok(metrics.expect("eval stage ran"))
    })
}

/// Which particle knob a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Multiply particle radii (`particle_scale`).
    Size,
    /// Multiply `particle_count`.
    Count,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub scale: f64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("scale\tevents\tclutter\tmap\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{:.6}\t{:.6}",
                r.scale, r.metrics.total_events, r.metrics.clutter_ratio, r.metrics.map
            );
        }
        out
    }
}

/// The config a sweep uses at `scale`.
pub fn scaled_config(cfg: &PipelineConfig, axis: SweepAxis, scale: f64) -> PipelineConfig {
    let mut c = cfg.clone();
    match axis {
        SweepAxis::Size => c.scene.particle_scale = cfg.scene.particle_scale * scale,
        SweepAxis::Count => {
            c.scene.particle_count = (cfg.scene.particle_count as f64 * scale).round() as usize
        }
    }
    c
}

/// Runs the full pipeline once per scale into `out/scale_<s>/` and writes
/// `out/sweep.tsv`.
pub fn sweep_particles(
    cfg: &PipelineConfig,
    scales: &[f64],
    axis: SweepAxis,
    out: &Path,
    opts: &RunOptions,
) -> Result<SweepReport> {
    if scales.is_empty() {
        return Err(Error::InvalidConfig {
            field: "scales",
            reason: "at least one scale required".into(),
        });
    }
    if let Some(&s) = scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::InvalidConfig {
            field: "scales",
            reason: format!("scales must be positive, got {s}"),
        });
    }
    make_dir(out)?;
    let mut rows = Vec::with_capacity(scales.len());
    for &scale in scales {
        let c = scaled_config(cfg, axis, scale);
        let dir = out.join(format!("scale_{scale}"));
        let metrics = run_pipeline(&c, &dir, opts).map_err(|e| Error::Sweep {
            scale,
            source: Box::new(e),
        })?;
        rows.push(SweepRow { scale, metrics });
    }
    let report = SweepReport { rows };
    write(&out.join(SWEEP_FILE), report.to_tsv())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_mask_alignment() {
        let times: Vec<u64> = (0..5).map(|k| seconds_to_us(k as f64 / 30.0)).collect();
        assert_eq!(times, vec![0, 33333, 66667, 100000, 133333]);
        assert_eq!(mask_index_for_window(&times, 33333), 1);
        assert_eq!(mask_index_for_window(&times, 66666), 2);
        assert_eq!(mask_index_for_window(&times, 99999), 3);
        assert_eq!(mask_index_for_window(&times, 10_000_000), 4);
        assert_eq!(mask_index_for_event(&times, 0), 1);
        assert_eq!(mask_index_for_event(&times, 33333), 1);
        assert_eq!(mask_index_for_event(&times, 33334), 2);
        assert_eq!(mask_index_for_event(&times, 133333), 4);
    }

    #[test]
    fn sweep_rejects_bad_scales() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig::default();
        let opts = RunOptions::default();
        assert!(sweep_particles(&cfg, &[], SweepAxis::Size, dir.path(), &opts).is_err());
        assert!(sweep_particles(&cfg, &[1.0, -2.0], SweepAxis::Size, dir.path(), &opts).is_err());
    }

    #[test]
    fn tsv_header() {
        let r = SweepReport {
            rows: vec![SweepRow {
                scale: 2.0,
                metrics: Metrics {
                    total_events: 10,
                    clutter_ratio: 0.25,
                    map: 0.5,
                },
            }],
        };
        assert_eq!(r.to_tsv(), "scale\tevents\tclutter\tmap\n2\t10\t0.250000\t0.500000\n");
    }
}
