//! Synthetic dataset generation.
//!
//! ```text
//! <out>/
//!   train.manifest         unpaired: phased and linear frames from different phantoms
//!   train/{phased,linear}/frame-NNNN.usef
//!   test.manifest          paired: frame i of both domains images the same phantom
//!   test/{phased,linear}/frame-NNNN.usef
//!   test/targets.csv       point-target truth for the test frames
//!   rois.csv               target-free speckle ROI for the Nakagami estimate
//!   sequence/{phased,linear}.manifest, sequence/{phased,linear}/…, truth.json
//!   sequence/mask.usef     tracking ROI (frame interior)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use ccgan_core::container::write_frame;
use ccgan_core::dataset::{Manifest, ManifestRecord};
use ccgan_core::error::{Error, Result};
use ccgan_core::image::normalize;
use ccgan_core::metrics::Roi;
use ccgan_core::par::*;
use ccgan_core::phantom::{preset, render_phantom, render_sequence, MotionField, PhantomSpec, PointTarget, TruthFile};
use ccgan_core::tracking::RoiMask;
use ccgan_core::{DomainTag, EnvelopeImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const TARGETS_HEADER: &str = "domain,frame,target_id,axial_mm,lateral_mm,lateral_fwhm_mm";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    /// Training frames per domain.
    pub train_frames: usize,
    /// Paired test frames per domain.
    pub test_frames: usize,
    /// Frames in each motion sequence (0 skips the sequences).
    pub sequence_frames: usize,
    pub rows: usize,
    pub cols: usize,
    /// Nominal target depths; each frame jitters them by up to ±0.5 mm.
    pub target_depths_mm: Vec<f64>,
    /// Lateral band targets are drawn from; the rest of the frame is left
    /// target-free for speckle statistics.
    pub target_lateral_mm: [f64; 2],
    /// Target amplitude relative to the RMS background (10 = 20 dB).
    pub target_amplitude: f64,
    /// Per-frame axial translation of the motion sequences (mm).
    pub sequence_axial_mm: f64,
    /// Lateral shear rate of the motion sequences (mm per mm of depth).
    pub sequence_shear: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl SynthConfig {
    /// 200 + 200 training frames at 64×64 (0.2 mm pitch, 12.6 mm deep).
    pub fn desk() -> Self {
        Self {
            seed: 0,
            train_frames: 200,
            test_frames: 20,
            sequence_frames: 8,
            rows: 64,
            cols: 64,
            target_depths_mm: vec![3.0, 6.5, 10.0],
            target_lateral_mm: [2.0, 5.5],
            target_amplitude: 10.0,
            sequence_axial_mm: 0.2,
            sequence_shear: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_frames == 0 && self.test_frames == 0 && self.sequence_frames == 0 {
            return Err(Error::Config("zero frames requested".into()));
        }
        if self.sequence_frames == 1 {
            return Err(Error::Config("a motion sequence needs at least two frames".into()));
        }
        if self.rows < 16 || self.cols < 16 {
            return Err(Error::Config(format!("frame {}x{} is too small", self.rows, self.cols)));
        }
        let [lo, hi] = self.target_lateral_mm;
        if !(lo >= 0.0 && hi >= lo) || !(self.target_amplitude > 0.0) {
            return Err(Error::Config("bad point-target placement".into()));
        }
        Ok(())
    }

    fn targets(&self, rng: &mut ChaCha8Rng, spec: &PhantomSpec) -> Vec<PointTarget> {
        let [lo, hi] = self.target_lateral_mm;
        let hi = hi.min(spec.lateral_extent());
        let depth_max = spec.depth_extent();
        self.target_depths_mm
            .iter()
            .map(|&d| {
                let z = (d + rng.random_range(-0.5..=0.5)).clamp(0.0, depth_max);
                let x = if hi > lo { rng.random_range(lo..hi) } else { lo };
                PointTarget {
                    amplitude: self.target_amplitude,
                    ..PointTarget::new(z, x)
                }
            })
            .collect()
    }

    /// Speckle ROI to the right of the target band.
    pub fn speckle_roi(&self) -> Roi {
        let pitch = 0.2;
        let width = self.cols as f64 * pitch;
        let left = (self.target_lateral_mm[1] + 2.5).min(width * 0.6);
        Roi {
            name: "speckle".into(),
            axial_mm: 1.0,
            lateral_mm: left,
            height_mm: self.rows as f64 * pitch - 2.0,
            width_mm: width - left - 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRow {
    pub domain: String,
    pub frame: u32,
    pub target_id: String,
    pub axial_mm: f64,
    pub lateral_mm: f64,
    pub lateral_fwhm_mm: f64,
}

pub fn read_targets(path: &Path) -> Result<Vec<TargetRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    rdr.deserialize()
        .collect::<std::result::Result<Vec<TargetRow>, _>>()
        .map_err(|e| Error::format(path, e.to_string()))
}

/// What `synthesize` wrote.
#[derive(Debug, Clone)]
pub struct SynthSummary {
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
    pub targets: PathBuf,
    pub rois: PathBuf,
    pub sequences: Vec<PathBuf>,
    pub frames_written: usize,
}

fn domain_preset(domain: DomainTag) -> &'static str {
    match domain {
        DomainTag::Linear => "linear-like",
        _ => "phased-like",
    }
}

/// Seed for frame `i` of a set; `pair` makes both domains share it.
fn frame_seed(base: u64, set: u64, i: usize) -> u64 {
    base.wrapping_mul(1_000_003).wrapping_add(set * 100_000 + i as u64)
}

struct Rendered {
    image: EnvelopeImage,
    targets: Vec<PointTarget>,
    fwhm: Vec<f64>,
}

fn render_frame(cfg: &SynthConfig, domain: DomainTag, seed: u64, index: u32) -> Result<Rendered> {
    let mut spec = preset(domain_preset(domain), cfg.rows, cfg.cols, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    spec.point_targets = cfg.targets(&mut rng, &spec);
    let mut image = normalize(&render_phantom(&spec)?)?;
    image.frame_index = index;
    let fwhm = spec.point_targets.iter().map(|t| spec.psf.lateral_fwhm(t.axial_mm)).collect();
    Ok(Rendered {
        image,
        targets: spec.point_targets,
        fwhm,
    })
}

fn write_set(dir: &Path, frames: &[Rendered]) -> Result<Vec<ManifestRecord>> {
    fs::create_dir_all(dir).map_err(|e| Error::Config(format!("{}: {e}", dir.display())))?;
    frames
        .iter()
        .map(|f| {
            let path = dir.join(format!("frame-{:04}.usef", f.image.frame_index));
            write_frame(&path, &f.image)?;
            Ok(ManifestRecord {
                path,
                domain: f.image.domain,
                frame_index: f.image.frame_index,
            })
        })
        .collect()
}

fn render_set(cfg: &SynthConfig, domain: DomainTag, n: usize, set: u64, paired: bool) -> Result<Vec<Rendered>> {
    // unpaired sets give each domain its own phantoms
    let set = if paired { set } else { set + domain.code() as u64 * 10 };
    (0..n)
        .into_par_iter()
        .map(|i| render_frame(cfg, domain, frame_seed(cfg.seed, set, i), i as u32))
        .collect()
}

/// Renders every set under `out`. An existing, non-empty `out` is an error
/// unless `force` is set, in which case it is replaced.
pub fn synthesize(cfg: &SynthConfig, out: &Path, force: bool) -> Result<SynthSummary> {
    cfg.validate()?;
    if out.exists() && fs::read_dir(out).map(|mut d| d.next().is_some()).unwrap_or(true) {
        if !force {
            return Err(Error::Config(format!(
                "{} already exists; pass --force to overwrite",
                out.display()
            )));
        }
        fs::remove_dir_all(out).map_err(|e| Error::Config(format!("{}: {e}", out.display())))?;
    }
    fs::create_dir_all(out).map_err(|e| Error::Config(format!("{}: {e}", out.display())))?;
    let mut written = 0;

    let mut train = Manifest::default();
    for domain in [DomainTag::Phased, DomainTag::Linear] {
        let frames = render_set(cfg, domain, cfg.train_frames, 1, false)?;
        train.records.extend(write_set(&out.join("train").join(domain.as_str()), &frames)?);
        written += frames.len();
    }
    let train_manifest = out.join("train.manifest");
    train.save(&train_manifest)?;

    let mut test = Manifest::default();
    let mut target_rows = Vec::new();
    for domain in [DomainTag::Phased, DomainTag::Linear] {
        let frames = render_set(cfg, domain, cfg.test_frames, 2, true)?;
        for f in &frames {
            for (k, (t, w)) in f.targets.iter().zip(&f.fwhm).enumerate() {
                target_rows.push(TargetRow {
                    domain: domain.as_str().into(),
                    frame: f.image.frame_index,
                    target_id: format!("t{k}"),
                    axial_mm: t.axial_mm,
                    lateral_mm: t.lateral_mm,
                    lateral_fwhm_mm: *w,
                });
            }
        }
        test.records.extend(write_set(&out.join("test").join(domain.as_str()), &frames)?);
        written += frames.len();
    }
    let test_manifest = out.join("test.manifest");
    test.save(&test_manifest)?;
    let targets = out.join("test").join("targets.csv");
    fs::create_dir_all(out.join("test")).map_err(|e| Error::Config(e.to_string()))?;
    ccgan_core::metrics::write_rows(&targets, TARGETS_HEADER, &target_rows)?;

    let rois = out.join("rois.csv");
    ccgan_core::metrics::write_rows(
        &rois,
        "name,axial_mm,lateral_mm,height_mm,width_mm",
        &[cfg.speckle_roi()],
    )?;

    let mut sequences = Vec::new();
    if cfg.sequence_frames >= 2 {
        let seq_dir = out.join("sequence");
        let motion = MotionField {
            translation: [cfg.sequence_axial_mm, 0.0],
            ..MotionField::lateral_shear(cfg.sequence_shear, 0.0)
        };
        for domain in [DomainTag::Phased, DomainTag::Linear] {
            let spec = preset(domain_preset(domain), cfg.rows, cfg.cols, frame_seed(cfg.seed, 3, 0))?;
            let seq = render_sequence(&spec, &motion, cfg.sequence_frames)?;
            let frames: Vec<Rendered> = seq
                .frames
                .iter()
                .map(|f| Ok(Rendered {
                    image: normalize(f)?,
                    targets: Vec::new(),
                    fwhm: Vec::new(),
                }))
                .collect::<Result<_>>()?;
            let dir = seq_dir.join(domain.as_str());
            let manifest = Manifest {
                records: write_set(&dir, &frames)?,
                cycle: None,
            };
            let path = seq_dir.join(format!("{}.manifest", domain.as_str()));
            manifest.save(&path)?;
            TruthFile::new(&spec, &motion, &seq).write(&dir.join("truth.json"))?;
            written += frames.len();
            sequences.push(path);
        }
        let margin = (cfg.rows / 8, cfg.cols / 8);
        RoiMask::interior(cfg.rows, cfg.cols, margin)?.write(&seq_dir.join("mask.usef"), ccgan_core::Spacing::new(0.2, 0.2)?)?;
    }

    Ok(SynthSummary {
        train_manifest,
        test_manifest,
        targets,
        rois,
        sequences,
        frames_written: written,
    })
}
