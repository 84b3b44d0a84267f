//! Subcommand implementations. Each takes its parsed arguments, writes its
//! artifacts plus a `config.toml` snapshot under `--out`, and returns the
//! rows it wrote so callers (and tests) need not re-read the CSVs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ccgan_core::container::{read_frame, write_frame};
use ccgan_core::dataset::{Manifest, ManifestRecord, UnpairedDataset};
use ccgan_core::error::{Error, Result};
use ccgan_core::losses::pearson;
use ccgan_core::metrics::{
    mean_std, measure_target, nakagami_m, psnr, read_rois, ssim, write_nakagami_csv, write_resolution_csv,
    write_rows, write_similarity_csv, NakagamiRow, ResolutionRow, SimilarityRow,
};
use ccgan_core::networks::load_generator;
use ccgan_core::tracking::{track_sequence, write_field, RoiMask, TrackingRow, TRACKING_HEADER};
use ccgan_core::training::{self, RunLayout, TrainOutcome};
use ccgan_core::{DomainTag, EnvelopeImage};
use serde::{Deserialize, Serialize};

use crate::cli::*;
use crate::config::{preset, RunConfig};
use crate::plot;
use crate::synth::{read_targets, synthesize, SynthSummary, TargetRow};

pub const TRANSLATION_HEADER: &str = "frame,source_domain,pearson_cc";
pub const EPOCH_HEADER: &str = "epoch,steps,adv_g,adv_d,cyc,idt,cc,total,lr_last,val_total";

pub fn resolve_config(args: &ConfigArgs) -> Result<RunConfig> {
    match &args.config {
        Some(path) => RunConfig::load(path),
        None => {
            let cfg = preset(&args.preset)?;
            cfg.validate()?;
            Ok(cfg)
        }
    }
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Frames listed in `manifest`, in manifest order, with the manifest's
/// domain and index applied.
pub fn load_frames(manifest: &Path, domain: Option<DomainTag>) -> Result<Vec<EnvelopeImage>> {
    let m = Manifest::load(manifest)?;
    let frames = m
        .records
        .iter()
        .filter(|r| domain.is_none_or(|d| d == r.domain))
        .map(|r| {
            let mut img = read_frame(&r.path)?;
            img.domain = r.domain;
            img.frame_index = r.frame_index;
            Ok(img)
        })
        .collect::<Result<Vec<_>>>()?;
    if frames.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} lists no frames{}",
            manifest.display(),
            domain.map(|d| format!(" of domain {d}")).unwrap_or_default()
        )));
    }
    Ok(frames)
}

/// Frame-indexed metrics need one domain; a mixed manifest would repeat
/// frame indices.
fn load_single_domain(src: &FrameSource) -> Result<Vec<EnvelopeImage>> {
    let frames = load_frames(&src.data, src.domain)?;
    let first = frames[0].domain;
    if frames.iter().any(|f| f.domain != first) {
        return Err(Error::InvalidInput(format!(
            "{} mixes domains; select one with --domain",
            src.data.display()
        )));
    }
    Ok(frames)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<SynthSummary> {
    run_synth(&resolve_config(&args.config)?, args)
}

pub fn run_synth(cfg: &RunConfig, args: &SynthArgs) -> Result<SynthSummary> {
    let mut cfg = cfg.clone();
    if let Some(seed) = args.seed {
        cfg.synth.seed = seed;
    }
    let summary = synthesize(&cfg.synth, &args.out, args.force)?;
    cfg.snapshot(&args.out)?;
    log::info!("synth: {} frames under {}", summary.frames_written, args.out.display());
    Ok(summary)
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutcome<f32>> {
    run_train(&resolve_config(&args.config)?, args)
}

pub fn run_train(cfg: &RunConfig, args: &TrainArgs) -> Result<TrainOutcome<f32>> {
    let mut cfg = cfg.clone();
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    let manifest = Manifest::load(&args.data)?;
    let dataset = UnpairedDataset::from_manifest(&manifest)?;
    create_dir(&args.out)?;
    cfg.snapshot(&args.out)?;
    let outcome = training::train::<f32>(&dataset, &cfg.train, &args.out, args.resume.as_deref())?;
    if let (Some(first), Some(last)) = (outcome.epoch_means.first(), outcome.epoch_means.last()) {
        log::info!("train: total objective {:.4} (epoch 1) -> {:.4} (epoch {})", first.total, last.total, outcome.epoch_means.len());
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationRow {
    pub frame: u32,
    pub source_domain: String,
    /// Pearson correlation between the input and its translation.
    pub pearson_cc: f64,
}

/// Writes `frames/`, `translated.manifest` and `translation.csv`.
pub fn cmd_translate(args: &TranslateArgs) -> Result<Vec<TranslationRow>> {
    run_translate(&resolve_config(&args.config)?, args)
}

pub fn run_translate(cfg: &RunConfig, args: &TranslateArgs) -> Result<Vec<TranslationRow>> {
    let generator = load_generator::<f32>(&args.generator)?;
    let inputs = load_frames(&args.source.data, args.source.domain)?;
    let outputs = training::translate(&generator, &inputs, args.batch)?;

    let frame_dir = args.out.join("frames");
    create_dir(&frame_dir)?;
    let mut manifest = Manifest::default();
    let mut rows = Vec::with_capacity(inputs.len());
    for (k, (x, y)) in inputs.iter().zip(&outputs).enumerate() {
        // numbering by position keeps names unique for mixed-domain input
        let path = frame_dir.join(format!("frame-{k:04}-{}.usef", x.domain));
        write_frame(&path, y)?;
        manifest.records.push(ManifestRecord {
            path,
            domain: DomainTag::Generated,
            frame_index: y.frame_index,
        });
        rows.push(TranslationRow {
            frame: x.frame_index,
            source_domain: x.domain.to_string(),
            pearson_cc: pearson(x.samples().as_slice(), y.samples().as_slice()).unwrap_or(f64::NAN),
        });
    }
    manifest.save(&args.out.join("translated.manifest"))?;
    write_rows(&args.out.join("translation.csv"), TRANSLATION_HEADER, &rows)?;
    cfg.snapshot(&args.out)?;
    Ok(rows)
}

/// Target rows for `frame`, one per target id. Paired test sets list the
/// same positions once per domain; the first listing wins.
fn targets_by_frame(rows: &[TargetRow]) -> BTreeMap<u32, Vec<&TargetRow>> {
    let mut map: BTreeMap<u32, Vec<&TargetRow>> = BTreeMap::new();
    for r in rows {
        let list = map.entry(r.frame).or_default();
        if !list.iter().any(|t| t.target_id == r.target_id) {
            list.push(r);
        }
    }
    map
}

/// One row per point target in each frame. A target whose FWHM cannot be
/// measured (clipped or ambiguous peak) is reported with NaN widths.
pub fn cmd_eval_resolution(args: &ResolutionArgs) -> Result<Vec<ResolutionRow>> {
    run_eval_resolution(&resolve_config(&args.config)?, args)
}

pub fn run_eval_resolution(cfg: &RunConfig, args: &ResolutionArgs) -> Result<Vec<ResolutionRow>> {
    let target_path = args
        .targets
        .clone()
        .or(cfg.eval.targets.clone())
        .ok_or_else(|| Error::Config("no point-target list (--targets or eval.targets)".into()))?;
    let targets = read_targets(&target_path)?;
    let by_frame = targets_by_frame(&targets);
    let frames = load_single_domain(&args.source)?;
    let size = (cfg.eval.roi_mm[0], cfg.eval.roi_mm[1]);

    let mut rows = Vec::new();
    for f in &frames {
        for t in by_frame.get(&f.frame_index).map(Vec::as_slice).unwrap_or(&[]) {
            let row = match measure_target(f, &t.target_id, (t.axial_mm, t.lateral_mm), size) {
                Ok(m) => ResolutionRow {
                    frame: f.frame_index,
                    target_id: t.target_id.clone(),
                    depth_mm: t.axial_mm,
                    peak_axial_mm: m.peak_location.0,
                    peak_lateral_mm: m.peak_location.1,
                    axial_fwhm_mm: m.axial_fwhm,
                    lateral_fwhm_mm: m.lateral_fwhm,
                },
                Err(e) => {
                    log::warn!("frame {} target {}: {e}", f.frame_index, t.target_id);
                    ResolutionRow {
                        frame: f.frame_index,
                        target_id: t.target_id.clone(),
                        depth_mm: t.axial_mm,
                        peak_axial_mm: f64::NAN,
                        peak_lateral_mm: f64::NAN,
                        axial_fwhm_mm: f64::NAN,
                        lateral_fwhm_mm: f64::NAN,
                    }
                }
            };
            rows.push(row);
        }
    }
    create_dir(&args.out)?;
    write_resolution_csv(&args.out.join("resolution.csv"), &rows)?;
    if args.plot {
        let mut groups: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.lateral_fwhm_mm.is_finite()) {
            let g = groups.entry(r.target_id.as_str()).or_default();
            g.0.push(r.axial_fwhm_mm);
            g.1.push(r.lateral_fwhm_mm);
        }
        let avg = |v: &[f64]| mean_std(v).map(|m| m.0).unwrap_or(f64::NAN);
        let labels: Vec<String> = groups.keys().map(|k| k.to_string()).collect();
        let axial = groups.values().map(|g| avg(&g.0)).collect();
        let lateral = groups.values().map(|g| avg(&g.1)).collect();
        plot::bar_plot(
            &args.out.join("resolution.svg"),
            "Mean FWHM per target",
            "FWHM (mm)",
            &labels,
            &[("axial".into(), axial), ("lateral".into(), lateral)],
        )?;
    }
    cfg.snapshot(&args.out)?;
    Ok(rows)
}

/// One row per ROI: mean and spread of the per-frame estimate.
pub fn cmd_eval_nakagami(args: &NakagamiArgs) -> Result<Vec<NakagamiRow>> {
    run_eval_nakagami(&resolve_config(&args.config)?, args)
}

pub fn run_eval_nakagami(cfg: &RunConfig, args: &NakagamiArgs) -> Result<Vec<NakagamiRow>> {
    let roi_path = args
        .rois
        .clone()
        .or(cfg.eval.rois.clone())
        .ok_or_else(|| Error::Config("no ROI list (--rois or eval.rois)".into()))?;
    let rois = read_rois(&roi_path)?;
    let frames = load_frames(&args.source.data, args.source.domain)?;
    let mut rows = Vec::with_capacity(rois.len());
    for roi in &rois {
        let mut ms = Vec::with_capacity(frames.len());
        let mut samples = 0;
        for f in &frames {
            let crop = roi.crop(f)?;
            samples = crop.len();
            ms.push(nakagami_m(crop.as_slice())?.m);
        }
        let (m_mean, m_std) = mean_std(&ms)?;
        rows.push(NakagamiRow {
            roi: roi.name.clone(),
            frames: frames.len(),
            m_mean,
            m_std,
            samples_per_frame: samples,
        });
    }
    create_dir(&args.out)?;
    write_nakagami_csv(&args.out.join("nakagami.csv"), &rows)?;
    cfg.snapshot(&args.out)?;
    Ok(rows)
}

/// SSIM and PSNR of each frame against the reference frame with the same
/// index.
pub fn cmd_eval_image_quality(args: &QualityArgs) -> Result<Vec<SimilarityRow>> {
    run_eval_image_quality(&resolve_config(&args.config)?, args)
}

pub fn run_eval_image_quality(cfg: &RunConfig, args: &QualityArgs) -> Result<Vec<SimilarityRow>> {
    let frames = load_single_domain(&args.source)?;
    let reference = load_single_domain(&FrameSource {
        data: args.reference.clone(),
        domain: args.reference_domain,
    })?;
    let by_index: BTreeMap<u32, &EnvelopeImage> = reference.iter().map(|f| (f.frame_index, f)).collect();
    let rows = frames
        .iter()
        .map(|f| {
            let r = by_index.get(&f.frame_index).ok_or_else(|| {
                Error::InvalidInput(format!("no reference frame with index {}", f.frame_index))
            })?;
            Ok(SimilarityRow {
                frame: f.frame_index,
                ssim: ssim(f, r)?,
                psnr_db: psnr(f, r)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    create_dir(&args.out)?;
    write_similarity_csv(&args.out.join("similarity.csv"), &rows)?;
    if args.plot {
        let series = |f: fn(&SimilarityRow) -> f64| rows.iter().map(|r| (r.frame as f64, f(r))).collect();
        plot::line_plot(&args.out.join("ssim.svg"), "SSIM per frame", "frame", "SSIM", &[("ssim".into(), series(|r| r.ssim))])?;
        plot::line_plot(&args.out.join("psnr.svg"), "PSNR per frame", "frame", "PSNR (dB)", &[("psnr".into(), series(|r| r.psnr_db))])?;
    }
    cfg.snapshot(&args.out)?;
    Ok(rows)
}

/// Writes `tracking.csv` and one displacement container per frame pair
/// under `fields/`.
pub fn cmd_track(args: &TrackArgs) -> Result<Vec<TrackingRow>> {
    run_track(&resolve_config(&args.config)?, args)
}

pub fn run_track(cfg: &RunConfig, args: &TrackArgs) -> Result<Vec<TrackingRow>> {
    let frames = load_single_domain(&args.source)?;
    let (rows_px, cols_px) = frames[0].shape();
    cfg.track.config.validate(rows_px, cols_px)?;
    let mask = match args.mask.as_ref().or(cfg.track.mask.as_ref()) {
        Some(p) => RoiMask::read(p)?,
        None => RoiMask::full(rows_px, cols_px),
    };
    let (fields, rows) = track_sequence(&frames, &cfg.track.config, &mask)?;
    let field_dir = args.out.join("fields");
    create_dir(&field_dir)?;
    for (k, f) in fields.iter().enumerate() {
        write_field(&field_dir.join(format!("pair-{k:04}.usef")), f, frames[k].frame_index)?;
    }
    write_rows(&args.out.join("tracking.csv"), TRACKING_HEADER, &rows)?;
    if args.plot {
        let series = |name: &str, f: fn(&TrackingRow) -> f64| (name.to_string(), rows.iter().map(|r| (r.pair as f64, f(r))).collect());
        plot::line_plot(
            &args.out.join("tracking.svg"),
            "Motion correction",
            "frame pair",
            "RMSD",
            &[series("uncorrected", |r| r.rmsd_uncorrected), series("corrected", |r| r.rmsd_corrected)],
        )?;
    }
    cfg.snapshot(&args.out)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub steps: usize,
    pub adv_g: f64,
    pub adv_d: f64,
    pub cyc: f64,
    pub idt: f64,
    pub cc: f64,
    pub total: f64,
    pub lr_last: f64,
    /// NaN without a validation split.
    pub val_total: f64,
}

#[derive(Debug, Deserialize)]
struct LossLine {
    #[allow(dead_code)]
    step: usize,
    epoch: usize,
    adv_g: f64,
    adv_d: f64,
    cyc: f64,
    idt: f64,
    cc: f64,
    total: f64,
    lr: f64,
}

#[derive(Debug, Deserialize)]
struct ValidationLine {
    epoch: usize,
    total: f64,
}

fn read_csv<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    rdr.deserialize()
        .collect::<std::result::Result<Vec<R>, _>>()
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Per-epoch means of a run's step log, joined with its validation log.
pub fn summarize_run(run: &Path) -> Result<Vec<EpochRow>> {
    let layout = RunLayout::new(run);
    let lines: Vec<LossLine> = read_csv(&layout.losses())?;
    let val: Vec<ValidationLine> = if layout.validation().exists() {
        read_csv(&layout.validation())?
    } else {
        Vec::new()
    };
    let mut by_epoch: BTreeMap<usize, Vec<&LossLine>> = BTreeMap::new();
    for l in &lines {
        by_epoch.entry(l.epoch).or_default().push(l);
    }
    Ok(by_epoch
        .into_iter()
        .map(|(epoch, ls)| {
            let n = ls.len() as f64;
            let avg = |f: fn(&LossLine) -> f64| ls.iter().map(|l| f(l)).sum::<f64>() / n;
            EpochRow {
                epoch,
                steps: ls.len(),
                adv_g: avg(|l| l.adv_g),
                adv_d: avg(|l| l.adv_d),
                cyc: avg(|l| l.cyc),
                idt: avg(|l| l.idt),
                cc: avg(|l| l.cc),
                total: avg(|l| l.total),
                lr_last: ls.last().map_or(f64::NAN, |l| l.lr),
                val_total: val.iter().find(|v| v.epoch == epoch).map_or(f64::NAN, |v| v.total),
            }
        })
        .collect())
}

/// Writes `epochs.csv` (and `losses.svg` with `--plot`).
pub fn cmd_report(args: &ReportArgs) -> Result<Vec<EpochRow>> {
    let rows = summarize_run(&args.run)?;
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!("{} has no logged steps", args.run.display())));
    }
    create_dir(&args.out)?;
    write_rows(&args.out.join("epochs.csv"), EPOCH_HEADER, &rows)?;
    if args.plot {
        let series = |name: &str, f: fn(&EpochRow) -> f64| (name.to_string(), rows.iter().map(|r| (r.epoch as f64, f(r))).collect());
        plot::line_plot(
            &args.out.join("losses.svg"),
            "Training losses",
            "epoch",
            "loss",
            &[
                series("total", |r| r.total),
                series("adv_g", |r| r.adv_g),
                series("adv_d", |r| r.adv_d),
                series("val total", |r| r.val_total),
            ],
        )?;
    }
    Ok(rows)
}

/// Paths inside a directory written by `synth`.
pub struct SynthLayout {
    pub root: PathBuf,
}

impl SynthLayout {
    pub fn train_manifest(&self) -> PathBuf {
        self.root.join("train.manifest")
    }
    pub fn test_manifest(&self) -> PathBuf {
        self.root.join("test.manifest")
    }
    pub fn targets(&self) -> PathBuf {
        self.root.join("test").join("targets.csv")
    }
    pub fn rois(&self) -> PathBuf {
        self.root.join("rois.csv")
    }
}
