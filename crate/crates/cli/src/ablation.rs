//! Loss-term ablation: the same data and seed trained under each of the
//! four {identity, correlation} on/off combinations, then scored with the
//! resolution and speckle metrics on the paired test set.

use std::path::{Path, PathBuf};

use ccgan_core::error::Result;
use ccgan_core::losses::LossWeights;
use ccgan_core::metrics::{write_rows, ResolutionRow};
use ccgan_core::DomainTag;
use serde::{Deserialize, Serialize};

use crate::cli::*;
use crate::commands::{
    create_dir, resolve_config, run_eval_nakagami, run_eval_resolution, run_train, run_translate, SynthLayout,
};
use crate::config::RunConfig;

pub const ABLATION_HEADER: &str = "config,lambda1,lambda2,lambda3,seed,final_total,frames,mean_pearson_cc,\
lateral_fwhm_mm,deep_lateral_fwhm_mm,axial_fwhm_mm,nakagami_m,\
input_lateral_fwhm_mm,input_deep_lateral_fwhm_mm,input_axial_fwhm_mm,input_nakagami_m";

/// Weight used for a switched-on term when the base config has it at 0.
const DEFAULT_ON: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: String,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub seed: u64,
    /// Mean total generator objective over the last epoch.
    pub final_total: f64,
    pub frames: usize,
    pub mean_pearson_cc: f64,
    pub lateral_fwhm_mm: f64,
    pub deep_lateral_fwhm_mm: f64,
    pub axial_fwhm_mm: f64,
    pub nakagami_m: f64,
    pub input_lateral_fwhm_mm: f64,
    pub input_deep_lateral_fwhm_mm: f64,
    pub input_axial_fwhm_mm: f64,
    pub input_nakagami_m: f64,
}

/// `(name, λ2, λ3)` for the four configurations, in table order.
pub fn configurations(base: &LossWeights) -> [(&'static str, f64, f64); 4] {
    let idt = if base.lambda2 > 0.0 { base.lambda2 } else { DEFAULT_ON };
    let cc = if base.lambda3 > 0.0 { base.lambda3 } else { DEFAULT_ON };
    [("none", 0.0, 0.0), ("idt", idt, 0.0), ("cc", 0.0, cc), ("idt+cc", idt, cc)]
}

fn finite_mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values.filter(|v| v.is_finite()) {
        sum += v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

struct Scores {
    lateral: f64,
    deep_lateral: f64,
    axial: f64,
    m: f64,
}

fn score(cfg: &RunConfig, layout: &SynthLayout, source: FrameSource, out: &Path) -> Result<Scores> {
    let res = run_eval_resolution(
        cfg,
        &ResolutionArgs {
            config: ConfigArgs::default(),
            source: source.clone(),
            targets: Some(layout.targets()),
            out: out.to_path_buf(),
            plot: false,
        },
    )?;
    let nak = run_eval_nakagami(
        cfg,
        &NakagamiArgs {
            config: ConfigArgs::default(),
            source,
            rois: Some(layout.rois()),
            out: out.to_path_buf(),
        },
    )?;
    let deep = cfg.eval.deep_threshold_mm;
    Ok(Scores {
        lateral: finite_mean(res.iter().map(|r| r.lateral_fwhm_mm)),
        deep_lateral: finite_mean(res.iter().filter(|r| r.depth_mm >= deep).map(|r: &ResolutionRow| r.lateral_fwhm_mm)),
        axial: finite_mean(res.iter().map(|r| r.axial_fwhm_mm)),
        m: finite_mean(nak.iter().map(|r| r.m_mean)),
    })
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<Vec<AblationRow>> {
    run_ablate(&resolve_config(&args.config)?, args)
}

/// Writes `input/`, `runs/<config>/{train,translated,eval}/` and
/// `ablation.csv` under `--out`.
pub fn run_ablate(cfg: &RunConfig, args: &AblateArgs) -> Result<Vec<AblationRow>> {
    let mut cfg = cfg.clone();
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    let layout = SynthLayout { root: args.data.clone() };
    create_dir(&args.out)?;
    cfg.snapshot(&args.out)?;

    let input = score(
        &cfg,
        &layout,
        FrameSource {
            data: layout.test_manifest(),
            domain: Some(DomainTag::Phased),
        },
        &args.out.join("input"),
    )?;

    let mut rows = Vec::with_capacity(4);
    for (name, lambda2, lambda3) in configurations(&cfg.train.weights) {
        let mut run_cfg = cfg.clone();
        run_cfg.train.weights = LossWeights {
            lambda2,
            lambda3,
            ..cfg.train.weights
        };
        let dir = args.out.join("runs").join(name.replace('+', "_"));
        log::info!("ablate: {name} (λ2 = {lambda2}, λ3 = {lambda3})");
        let outcome = run_train(
            &run_cfg,
            &TrainArgs {
                config: ConfigArgs::default(),
                data: layout.train_manifest(),
                out: dir.join("train"),
                resume: None,
                seed: None,
            },
        )?;
        let translated = dir.join("translated");
        let tr = run_translate(
            &run_cfg,
            &TranslateArgs {
                config: ConfigArgs::default(),
                generator: dir.join("train").join("exported-generators").join("g_a.ccgw"),
                source: FrameSource {
                    data: layout.test_manifest(),
                    domain: Some(DomainTag::Phased),
                },
                out: translated.clone(),
                batch: run_cfg.train.batch_size,
            },
        )?;
        let s = score(
            &run_cfg,
            &layout,
            FrameSource {
                data: translated.join("translated.manifest"),
                domain: None,
            },
            &dir.join("eval"),
        )?;
        rows.push(AblationRow {
            config: name.to_string(),
            lambda1: run_cfg.train.weights.lambda1,
            lambda2,
            lambda3,
            seed: run_cfg.train.seed,
            final_total: outcome.epoch_means.last().map_or(f64::NAN, |r| r.total),
            frames: tr.len(),
            mean_pearson_cc: finite_mean(tr.iter().map(|r| r.pearson_cc)),
            lateral_fwhm_mm: s.lateral,
            deep_lateral_fwhm_mm: s.deep_lateral,
            axial_fwhm_mm: s.axial,
            nakagami_m: s.m,
            input_lateral_fwhm_mm: input.lateral,
            input_deep_lateral_fwhm_mm: input.deep_lateral,
            input_axial_fwhm_mm: input.axial,
            input_nakagami_m: input.m,
        });
    }
    write_rows(&ablation_csv(&args.out), ABLATION_HEADER, &rows)?;
    Ok(rows)
}

pub fn ablation_csv(out: &Path) -> PathBuf {
    out.join("ablation.csv")
}
