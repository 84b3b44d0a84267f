use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::UnpairedDataset;
use crate::error::{Error, Result};
use crate::image::EnvelopeImage;
use crate::losses::LossReport;
use crate::networks::save_generator;
use crate::nn::{Real, Tensor};

use super::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use super::step::{batch_tensor, train_step, validation_report, TrainState};
use super::{derive_seed, lr_at, TrainConfig};

pub const LOSS_HEADER: &str = "step,epoch,adv_g,adv_d,cyc,idt,cc,total,lr";
pub const VALIDATION_HEADER: &str = "epoch,adv_g,adv_d,cyc,idt,cc,total";

/// File layout of a training run directory.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn losses(&self) -> PathBuf {
        self.root.join("losses.csv")
    }

    pub fn validation(&self) -> PathBuf {
        self.root.join("validation.csv")
    }

    pub fn log(&self) -> PathBuf {
        self.root.join("train.log")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    /// Deployment export: generators only.
    pub fn exported(&self) -> PathBuf {
        self.root.join("exported-generators")
    }
}

pub struct TrainOutcome<T> {
    pub state: TrainState<T>,
    /// Checkpoints written by this call, oldest first.
    pub checkpoints: Vec<PathBuf>,
    /// Mean training-step report per epoch; index 0 is epoch 1. Includes
    /// epochs replayed from the log when resuming.
    pub epoch_means: Vec<LossReport>,
    /// Inference-mode validation report per epoch (empty without a
    /// validation split).
    pub validation: Vec<LossReport>,
}

fn report_fields(r: &LossReport) -> [f64; 6] {
    [r.adv_g, r.adv_d, r.cyc, r.idt, r.cc, r.total]
}

fn mean_report(rs: &[LossReport]) -> LossReport {
    let n = rs.len().max(1) as f64;
    let mut acc = [0.0; 6];
    for r in rs {
        for (a, v) in acc.iter_mut().zip(report_fields(r)) {
            *a += v;
        }
    }
    LossReport {
        adv_g: acc[0] / n,
        adv_d: acc[1] / n,
        cyc: acc[2] / n,
        idt: acc[3] / n,
        cc: acc[4] / n,
        total: acc[5] / n,
    }
}

fn join_fields(r: &LossReport) -> String {
    report_fields(r).iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn check_unit_range(frames: &[EnvelopeImage], what: &str) -> Result<()> {
    for f in frames {
        let hi = f.samples().max();
        if hi > 1.0 {
            return Err(Error::InvalidInput(format!(
                "{what} frame {} exceeds 1 (max {hi}); normalize frames before training",
                f.frame_index
            )));
        }
    }
    Ok(())
}

/// Per-epoch permutation of one domain, reproducible from the seed alone so
/// a resumed run sees the same order as an uninterrupted one.
fn epoch_order(len: usize, seed: u64, epoch: usize, salt: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(seed, salt), epoch as u64));
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut rng);
    idx
}

fn gather<T: Real>(frames: &[EnvelopeImage], idx: &[usize]) -> Result<Tensor<T>> {
    let refs: Vec<&EnvelopeImage> = idx.iter().map(|&i| &frames[i]).collect();
    batch_tensor(&refs)
}

fn validate_epoch<T: Real>(state: &TrainState<T>, cfg: &TrainConfig, val: &UnpairedDataset) -> Result<Option<LossReport>> {
    let n = val.domain_a.len().min(val.domain_b.len());
    if n == 0 {
        return Ok(None);
    }
    // frame-weighted mean over the (possibly ragged) batches
    let mut acc = [0.0; 6];
    for start in (0..n).step_by(cfg.batch_size) {
        let idx: Vec<usize> = (start..(start + cfg.batch_size).min(n)).collect();
        let a = gather::<T>(&val.domain_a, &idx)?;
        let b = gather::<T>(&val.domain_b, &idx)?;
        let r = validation_report(state, &cfg.weights, &a, &b)?;
        for (a, v) in acc.iter_mut().zip(report_fields(&r)) {
            *a += v * idx.len() as f64 / n as f64;
        }
    }
    Ok(Some(LossReport {
        adv_g: acc[0],
        adv_d: acc[1],
        cyc: acc[2],
        idt: acc[3],
        cc: acc[4],
        total: acc[5],
    }))
}

fn open_append(path: &Path) -> Result<File> {
    OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))
}

fn truncate(path: &Path, len: u64) -> Result<()> {
    let f = OpenOptions::new().write(true).open(path).map_err(|e| Error::io(path, e))?;
    f.set_len(len).map_err(|e| Error::io(path, e))
}

fn file_len(path: &Path) -> Result<u64> {
    Ok(fs::metadata(path).map_err(|e| Error::io(path, e))?.len())
}

/// Re-reads per-step rows so a resumed run can report full-history epoch means.
fn replay_epoch_means(path: &Path) -> Result<Vec<LossReport>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut per_epoch: Vec<Vec<LossReport>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::format(path, format!("bad field {i} in row {rec:?}")))
        };
        let epoch = num(1)? as usize;
        if epoch == 0 {
            return Err(Error::format(path, "epoch numbers start at 1"));
        }
        if per_epoch.len() < epoch {
            per_epoch.resize(epoch, Vec::new());
        }
        per_epoch[epoch - 1].push(LossReport {
            adv_g: num(2)?,
            adv_d: num(3)?,
            cyc: num(4)?,
            idt: num(5)?,
            cc: num(6)?,
            total: num(7)?,
        });
    }
    Ok(per_epoch.iter().map(|rs| mean_report(rs)).collect())
}

fn replay_validation(path: &Path) -> Result<Vec<LossReport>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let v: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|s| s.parse().map_err(|_| Error::format(path, format!("bad row {rec:?}"))))
            .collect::<Result<_>>()?;
        if v.len() != 6 {
            return Err(Error::format(path, format!("bad row {rec:?}")));
        }
        out.push(LossReport {
            adv_g: v[0],
            adv_d: v[1],
            cyc: v[2],
            idt: v[3],
            cc: v[4],
            total: v[5],
        });
    }
    Ok(out)
}

fn header_lines(cfg: &TrainConfig, train: &UnpairedDataset, val: &UnpairedDataset) -> String {
    let w = &cfg.weights;
    let mut s = String::new();
    if w.is_vanilla() {
        s.push_str("baseline: vanilla CycleGAN\n");
    }
    s.push_str(&format!(
        "weights: lambda1={} lambda2={} lambda3={}\n",
        w.lambda1, w.lambda2, w.lambda3
    ));
    s.push_str(&format!(
        "schedule: epochs={} lr={} decay_start={} batch={} seed={}\n",
        cfg.epochs, cfg.lr_initial, cfg.lr_decay_start_epoch, cfg.batch_size, cfg.seed
    ));
    s.push_str(&format!(
        "generator: {:?}\ndiscriminator: {:?}\n",
        cfg.generator, cfg.discriminator
    ));
    s.push_str(&format!(
        "frames: train A={} B={}, validation A={} B={}\n",
        train.domain_a.len(),
        train.domain_b.len(),
        val.domain_a.len(),
        val.domain_b.len()
    ));
    s
}

/// Full training protocol. Writes `losses.csv`, `validation.csv`,
/// `train.log`, periodic checkpoints and the exported generators under
/// `run_dir`. With `resume`, training continues from that checkpoint (which
/// must echo the same config) and the logs are cut back to its offsets.
pub fn train<T: Real>(
    dataset: &UnpairedDataset,
    cfg: &TrainConfig,
    run_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if dataset.domain_a.is_empty() || dataset.domain_b.is_empty() {
        return Err(Error::InvalidInput(format!(
            "both domains need frames (A: {}, B: {})",
            dataset.domain_a.len(),
            dataset.domain_b.len()
        )));
    }
    check_unit_range(&dataset.domain_a, "domain A")?;
    check_unit_range(&dataset.domain_b, "domain B")?;
    let (train_set, val_set) = dataset.split_validation(cfg.validation_fraction, derive_seed(cfg.seed, 5))?;
    let pool = train_set.domain_a.len().min(train_set.domain_b.len());
    let steps_per_epoch = pool / cfg.batch_size;
    if steps_per_epoch == 0 && cfg.epochs > 0 {
        return Err(Error::Config(format!(
            "batch size {} exceeds the smaller training domain ({pool} frames)",
            cfg.batch_size
        )));
    }

    let layout = RunLayout::new(run_dir);
    fs::create_dir_all(&layout.root).map_err(|e| Error::io(&layout.root, e))?;

    let (mut state, mut epoch_means, mut validation) = match resume {
        Some(ckpt) => {
            let (state, meta) = load_checkpoint::<T>(ckpt)?;
            if meta.config != *cfg {
                return Err(Error::Config(format!(
                    "checkpoint {} was written under a different config",
                    ckpt.display()
                )));
            }
            truncate(&layout.losses(), meta.loss_log_offset)?;
            truncate(&layout.validation(), meta.validation_log_offset)?;
            let means = replay_epoch_means(&layout.losses())?;
            let val = replay_validation(&layout.validation())?;
            if means.len() != meta.epoch {
                return Err(Error::format(
                    layout.losses(),
                    format!("log holds {} epochs, checkpoint is at {}", means.len(), meta.epoch),
                ));
            }
            let mut log = open_append(&layout.log())?;
            writeln!(log, "resumed from {} at epoch {}", ckpt.display(), meta.epoch).map_err(|e| Error::io(layout.log(), e))?;
            (state, means, val)
        }
        None => {
            fs::write(layout.losses(), format!("{LOSS_HEADER}\n")).map_err(|e| Error::io(layout.losses(), e))?;
            fs::write(layout.validation(), format!("{VALIDATION_HEADER}\n"))
                .map_err(|e| Error::io(layout.validation(), e))?;
            fs::write(layout.log(), header_lines(cfg, &train_set, &val_set)).map_err(|e| Error::io(layout.log(), e))?;
            (TrainState::<T>::new(cfg)?, Vec::new(), Vec::new())
        }
    };

    let mut checkpoints = Vec::new();
    let checkpoint = |state: &TrainState<T>| -> Result<PathBuf> {
        let meta = CheckpointMeta {
            epoch: state.epoch,
            step: state.step,
            loss_log_offset: file_len(&layout.losses())?,
            validation_log_offset: file_len(&layout.validation())?,
            adam_steps: [state.opt_g_a.step, state.opt_g_b.step, state.opt_d_a.step, state.opt_d_b.step],
            config: cfg.clone(),
        };
        save_checkpoint(&layout.checkpoints(), state, &meta)
    };

    if cfg.epochs == 0 {
        checkpoints.push(checkpoint(&state)?);
    }

    let mut losses = open_append(&layout.losses())?;
    let mut val_log = open_append(&layout.validation())?;
    let mut text_log = open_append(&layout.log())?;
    let io_err = |p: PathBuf| move |e: std::io::Error| Error::io(p, e);

    for epoch in state.epoch..cfg.epochs {
        let started = Instant::now();
        let lr = lr_at(cfg, epoch)?;
        let order_a = epoch_order(train_set.domain_a.len(), cfg.seed, epoch, 10);
        let order_b = epoch_order(train_set.domain_b.len(), cfg.seed, epoch, 11);
        let mut reports = Vec::with_capacity(steps_per_epoch);
        let mut rows = String::new();
        for s in 0..steps_per_epoch {
            let idx_a = &order_a[s * cfg.batch_size..(s + 1) * cfg.batch_size];
            let idx_b = &order_b[s * cfg.batch_size..(s + 1) * cfg.batch_size];
            let a = gather::<T>(&train_set.domain_a, idx_a)?;
            let b = gather::<T>(&train_set.domain_b, idx_b)?;
            let out = train_step(&mut state, cfg, &a, &b, idx_a, idx_b)?;
            rows.push_str(&format!("{},{},{},{lr}\n", state.step, epoch + 1, join_fields(&out.report)));
            reports.push(out.report);
        }
        state.epoch = epoch + 1;
        losses.write_all(rows.as_bytes()).map_err(io_err(layout.losses()))?;
        let mean = mean_report(&reports);
        epoch_means.push(mean);

        let val = validate_epoch(&state, cfg, &val_set)?;
        if let Some(v) = &val {
            writeln!(val_log, "{},{}", epoch + 1, join_fields(v)).map_err(io_err(layout.validation()))?;
            validation.push(*v);
        }
        let line = format!(
            "epoch {}/{} lr={lr:.3e} total={:.5} adv_g={:.4} adv_d={:.4} cyc={:.4} idt={:.4} cc={:.4}{} ({:.1}s)",
            epoch + 1,
            cfg.epochs,
            mean.total,
            mean.adv_g,
            mean.adv_d,
            mean.cyc,
            mean.idt,
            mean.cc,
            val.map(|v| format!(" val_total={:.5}", v.total)).unwrap_or_default(),
            started.elapsed().as_secs_f64()
        );
        log::info!("{line}");
        writeln!(text_log, "{line}").map_err(io_err(layout.log()))?;

        if state.epoch % cfg.checkpoint_every == 0 || state.epoch == cfg.epochs {
            losses.flush().map_err(io_err(layout.losses()))?;
            val_log.flush().map_err(io_err(layout.validation()))?;
            checkpoints.push(checkpoint(&state)?);
        }
    }

    let export = layout.exported();
    fs::create_dir_all(&export).map_err(|e| Error::io(&export, e))?;
    save_generator(&export.join("g_a.ccgw"), &state.g_a)?;
    save_generator(&export.join("g_b.ccgw"), &state.g_b)?;

    Ok(TrainOutcome {
        state,
        checkpoints,
        epoch_means,
        validation,
    })
}
