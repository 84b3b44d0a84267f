//! End-to-end runs of every subcommand on a tiny configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;
use std::sync::OnceLock;

use ccgan_cli::ablation::{cmd_ablate, ABLATION_HEADER};
use ccgan_cli::cli::*;
use ccgan_cli::commands::*;
use ccgan_cli::config::RunConfig;
use ccgan_cli::synth::TARGETS_HEADER;
use ccgan_core::DomainTag;

const TINY: &str = r#"
version = 1
[synth]
train_frames = 20
test_frames = 4
sequence_frames = 4
[train]
epochs = 2
lr_decay_start_epoch = 1
batch_size = 5
[train.generator]
base_channels = 4
n_modules = 2
[train.discriminator]
channels = [1, 2, 4, 8, 1]
"#;

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("pipeline").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn config_args(path: &Path) -> ConfigArgs {
    ConfigArgs {
        config: Some(path.to_path_buf()),
        preset: "desk".into(),
    }
}

/// Shared tiny pipeline: synth → train → translate.
struct Fixture {
    root: PathBuf,
    cfg: ConfigArgs,
}

impl Fixture {
    fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    fn run(&self) -> PathBuf {
        self.root.join("run")
    }
    fn translated(&self) -> PathBuf {
        self.root.join("translated")
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let root = scratch("fixture");
        let cfg_path = root.join("tiny.toml");
        fs::write(&cfg_path, TINY).unwrap();
        let cfg = config_args(&cfg_path);
        let f = Fixture { root, cfg };
        cmd_synth(&SynthArgs {
            config: f.cfg.clone(),
            out: f.data(),
            force: false,
            seed: None,
        })
        .unwrap();
        cmd_train(&TrainArgs {
            config: f.cfg.clone(),
            data: f.data().join("train.manifest"),
            out: f.run(),
            resume: None,
            seed: None,
        })
        .unwrap();
        cmd_translate(&TranslateArgs {
            config: f.cfg.clone(),
            generator: f.run().join("exported-generators/g_a.ccgw"),
            source: FrameSource {
                data: f.data().join("test.manifest"),
                domain: Some(DomainTag::Phased),
            },
            out: f.translated(),
            batch: 4,
        })
        .unwrap();
        f
    })
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

fn golden(name: &str) -> String {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    fs::read_to_string(p).unwrap().trim_end().to_string()
}

fn read_dir_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_deterministic_and_guarded() {
    let f = fixture();
    let again = scratch("synth-again");
    let out = again.join("data");
    cmd_synth(&SynthArgs {
        config: f.cfg.clone(),
        out: out.clone(),
        force: false,
        seed: None,
    })
    .unwrap();
    assert_eq!(read_dir_bytes(&out), read_dir_bytes(&f.data()), "same seed must give a byte-identical dataset");

    // existing directory without --force
    let err = cmd_synth(&SynthArgs {
        config: f.cfg.clone(),
        out: out.clone(),
        force: false,
        seed: None,
    })
    .unwrap_err();
    assert_eq!(ccgan_cli::exit_code(&err), 2);
    cmd_synth(&SynthArgs {
        config: f.cfg.clone(),
        out: out.clone(),
        force: true,
        seed: Some(9),
    })
    .unwrap();
    assert_ne!(read_dir_bytes(&out), read_dir_bytes(&f.data()));
}

#[test]
fn zero_frames_is_a_config_error() {
    let dir = scratch("zero");
    let p = dir.join("zero.toml");
    fs::write(&p, "version = 1\n[synth]\ntrain_frames = 0\ntest_frames = 0\nsequence_frames = 0\n").unwrap();
    let err = cmd_synth(&SynthArgs {
        config: config_args(&p),
        out: dir.join("out"),
        force: false,
        seed: None,
    })
    .unwrap_err();
    assert_eq!(ccgan_cli::exit_code(&err), 2);
}

#[test]
fn desk_preset_census() {
    let dir = scratch("desk");
    let s = cmd_synth(&SynthArgs {
        config: ConfigArgs {
            config: None,
            preset: "desk".into(),
        },
        out: dir.join("data"),
        force: false,
        seed: None,
    })
    .unwrap();
    for domain in [DomainTag::Phased, DomainTag::Linear] {
        let frames = load_frames(&s.train_manifest, Some(domain)).unwrap();
        assert_eq!(frames.len(), 200);
        assert!(frames.iter().all(|f| f.shape() == (64, 64)));
    }
    let cfg = RunConfig::load(&dir.join("data/config.toml")).unwrap();
    assert_eq!(cfg.train.generator.base_channels, 4);
    assert_eq!(cfg.train.epochs, 20);
}

#[test]
fn every_csv_header_matches_its_golden_file() {
    let f = fixture();
    let out = f.root.join("evals");
    cmd_eval_resolution(&ResolutionArgs {
        config: f.cfg.clone(),
        source: FrameSource {
            data: f.translated().join("translated.manifest"),
            domain: None,
        },
        targets: Some(f.data().join("test/targets.csv")),
        out: out.join("res"),
        plot: true,
    })
    .unwrap();
    cmd_eval_nakagami(&NakagamiArgs {
        config: f.cfg.clone(),
        source: FrameSource {
            data: f.translated().join("translated.manifest"),
            domain: None,
        },
        rois: Some(f.data().join("rois.csv")),
        out: out.join("nak"),
    })
    .unwrap();
    cmd_eval_image_quality(&QualityArgs {
        config: f.cfg.clone(),
        source: FrameSource {
            data: f.translated().join("translated.manifest"),
            domain: None,
        },
        reference: f.data().join("test.manifest"),
        reference_domain: Some(DomainTag::Linear),
        out: out.join("iq"),
        plot: true,
    })
    .unwrap();
    cmd_track(&TrackArgs {
        config: f.cfg.clone(),
        source: FrameSource {
            data: f.data().join("sequence/phased.manifest"),
            domain: None,
        },
        mask: Some(f.data().join("sequence/mask.usef")),
        out: out.join("track"),
        plot: true,
    })
    .unwrap();
    cmd_report(&ReportArgs {
        run: f.run(),
        out: out.join("report"),
        plot: true,
    })
    .unwrap();

    let cases = [
        (f.run().join("losses.csv"), "losses.csv"),
        (f.run().join("validation.csv"), "validation.csv"),
        (f.translated().join("translation.csv"), "translation.csv"),
        (out.join("res/resolution.csv"), "resolution.csv"),
        (out.join("nak/nakagami.csv"), "nakagami.csv"),
        (out.join("iq/similarity.csv"), "similarity.csv"),
        (out.join("track/tracking.csv"), "tracking.csv"),
        (out.join("report/epochs.csv"), "epochs.csv"),
        (f.data().join("test/targets.csv"), "targets.csv"),
        (f.data().join("rois.csv"), "rois.csv"),
    ];
    for (path, name) in cases {
        assert_eq!(header(&path), golden(name), "{name}");
    }
    assert_eq!(golden("targets.csv"), TARGETS_HEADER);
    assert_eq!(golden("translation.csv"), TRANSLATION_HEADER);
    assert_eq!(golden("epochs.csv"), EPOCH_HEADER);
    assert_eq!(golden("ablation.csv"), ABLATION_HEADER);
    for svg in ["res/resolution.svg", "iq/ssim.svg", "iq/psnr.svg", "track/tracking.svg", "report/losses.svg"] {
        assert!(fs::read_to_string(out.join(svg)).unwrap().starts_with("<svg"), "{svg}");
    }
    // every run directory carries its resolved config
    for d in ["res", "nak", "iq", "track"] {
        RunConfig::load(&out.join(d).join("config.toml")).unwrap();
    }
    RunConfig::load(&f.run().join("config.toml")).unwrap();
}

#[test]
fn resolution_has_one_row_per_target() {
    let f = fixture();
    let rows = cmd_eval_resolution(&ResolutionArgs {
        config: f.cfg.clone(),
        source: FrameSource {
            data: f.data().join("test.manifest"),
            domain: Some(DomainTag::Phased),
        },
        targets: Some(f.data().join("test/targets.csv")),
        out: f.root.join("res-input"),
        plot: false,
    })
    .unwrap();
    // 4 frames × 3 targets
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.lateral_fwhm_mm.is_finite()));
    // the phased PSF widens with depth
    let mean = |id: &str| {
        let v: Vec<f64> = rows.iter().filter(|r| r.target_id == id).map(|r| r.lateral_fwhm_mm).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean("t2") > mean("t0"));

    // a mixed manifest is ambiguous
    let err = cmd_eval_resolution(&ResolutionArgs {
        config: f.cfg.clone(),
        source: FrameSource {
            data: f.data().join("test.manifest"),
            domain: None,
        },
        targets: Some(f.data().join("test/targets.csv")),
        out: f.root.join("res-mixed"),
        plot: false,
    })
    .unwrap_err();
    assert_eq!(ccgan_cli::exit_code(&err), 3);
}

#[test]
fn translation_preserves_structure() {
    let f = fixture();
    let text = fs::read_to_string(f.translated().join("translation.csv")).unwrap();
    let ccs: Vec<f64> = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(ccs.len(), 4);
    assert!(ccs.iter().all(|&c| c > 0.8), "{ccs:?}");
}

#[test]
fn vanilla_run_is_labelled_in_the_log() {
    let f = fixture();
    let dir = scratch("vanilla");
    let p = dir.join("vanilla.toml");
    fs::write(&p, format!("{TINY}[train.weights]\nlambda1 = 10.0\nlambda2 = 0.0\nlambda3 = 0.0\n")).unwrap();
    cmd_train(&TrainArgs {
        config: config_args(&p),
        data: f.data().join("train.manifest"),
        out: dir.join("run"),
        resume: None,
        seed: None,
    })
    .unwrap();
    let log = fs::read_to_string(dir.join("run/train.log")).unwrap();
    assert!(log.starts_with("baseline: vanilla CycleGAN"));
    let constrained = fs::read_to_string(f.run().join("train.log")).unwrap();
    assert!(!constrained.contains("vanilla"));
}

#[test]
fn tracking_recovers_the_synthetic_axial_motion() {
    let f = fixture();
    let rows = cmd_track(&TrackArgs {
        config: f.cfg.clone(),
        source: FrameSource {
            data: f.data().join("sequence/linear.manifest"),
            domain: None,
        },
        mask: Some(f.data().join("sequence/mask.usef")),
        out: f.root.join("track-linear"),
        plot: false,
    })
    .unwrap();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert!((r.mean_axial_mm - 0.2).abs() < 0.02, "{r:?}");
        assert!(r.rmsd_corrected < r.rmsd_uncorrected);
    }
}

#[test]
fn ablation_covers_four_configurations() {
    let f = fixture();
    let out = scratch("ablate");
    let rows = cmd_ablate(&AblateArgs {
        config: f.cfg.clone(),
        data: f.data(),
        out: out.clone(),
        seed: Some(3),
    })
    .unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r.config.as_str()).collect();
    assert_eq!(names, ["none", "idt", "cc", "idt+cc"]);
    let lambdas: Vec<(f64, f64)> = rows.iter().map(|r| (r.lambda2, r.lambda3)).collect();
    assert_eq!(lambdas, [(0.0, 0.0), (5.0, 0.0), (0.0, 5.0), (5.0, 5.0)]);
    assert!(rows.iter().all(|r| r.seed == 3 && r.frames == 4));
    assert!(rows.iter().all(|r| r.lateral_fwhm_mm.is_finite() && r.nakagami_m.is_finite()));
    // identical input reference for every row
    assert!(rows.windows(2).all(|w| w[0].input_lateral_fwhm_mm == w[1].input_lateral_fwhm_mm));
    assert_eq!(header(&out.join("ablation.csv")), golden("ablation.csv"));
    let log = fs::read_to_string(out.join("runs/none/train/train.log")).unwrap();
    assert!(log.starts_with("baseline: vanilla CycleGAN"));
}

fn bin() -> Process {
    Process::new(env!("CARGO_BIN_EXE_ccgan"))
}

#[test]
fn exit_codes_follow_failure_class() {
    let f = fixture();
    let dir = scratch("exit");
    // config: unknown key
    let bad = dir.join("bad.toml");
    fs::write(&bad, "version = 1\nfoo = 1\n").unwrap();
    let st = bin().args(["synth", "--out"]).arg(dir.join("x")).arg("--config").arg(&bad).status().unwrap();
    assert_eq!(st.code(), Some(2));
    // data: missing manifest
    let st = bin()
        .args(["eval-nakagami", "--data"])
        .arg(dir.join("missing.manifest"))
        .arg("--rois")
        .arg(f.data().join("rois.csv"))
        .arg("--out")
        .arg(dir.join("n"))
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(3));
    // metric: ROI outside the frame
    let rois = dir.join("far.csv");
    fs::write(&rois, "name,axial_mm,lateral_mm,height_mm,width_mm\nfar,100.0,100.0,4.0,4.0\n").unwrap();
    let st = bin()
        .args(["eval-nakagami", "--data"])
        .arg(f.data().join("test.manifest"))
        .arg("--rois")
        .arg(&rois)
        .arg("--out")
        .arg(dir.join("n2"))
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(5));
    // ok, with the worker count taken from the environment
    let st = bin()
        .env("CCGAN_WORKERS", "1")
        .args(["report", "--run"])
        .arg(f.run())
        .arg("--out")
        .arg(dir.join("rep"))
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
}

#[test]
fn divergence_maps_to_exit_code_four() {
    let err = ccgan_core::Error::Divergence {
        epoch: 1,
        step: 2,
        detail: "nan".into(),
        batch_a: vec![],
        batch_b: vec![],
    };
    assert_eq!(ccgan_cli::exit_code(&err), 4);
}
