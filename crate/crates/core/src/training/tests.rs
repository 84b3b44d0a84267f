use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dataset::{held_out_count, UnpairedDataset};
use crate::image::{DomainTag, EnvelopeImage, Grid, Spacing};
use crate::losses::lsgan_grad;
use crate::networks::{build_generator, Discriminator};
use crate::nn::{Gradients, Real, Tensor};

fn tiny_disc() -> DiscriminatorSpec {
    DiscriminatorSpec {
        channels: vec![4, 8, 1],
        strides: vec![2, 1, 1],
        min_input: 8,
        ..DiscriminatorSpec::default()
    }
}

fn tiny_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 4,
        lr_decay_start_epoch: 2,
        batch_size: 2,
        validation_fraction: 0.2,
        seed,
        checkpoint_every: 2,
        generator: GeneratorSpec {
            base_channels: 2,
            n_modules: 1,
            ..GeneratorSpec::default()
        },
        discriminator: tiny_disc(),
        ..TrainConfig::default()
    }
}

fn random_batch<T: Real>(n: usize, side: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(
        [n, 1, side, side],
        (0..n * side * side).map(|_| T::of(rng.random_range(0.05..0.95))).collect(),
    )
    .unwrap()
}

fn random_frames(n: usize, side: usize, domain: DomainTag, seed: u64) -> Vec<EnvelopeImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let g = Grid::from_fn(side, side, |_, _| rng.random_range(0.0..1.0));
            EnvelopeImage::new(g, Spacing::new(0.2, 0.2).unwrap(), domain, i as u32).unwrap()
        })
        .collect()
}

fn tiny_dataset(n: usize) -> UnpairedDataset {
    UnpairedDataset::new(
        random_frames(n, 16, DomainTag::Phased, 1),
        random_frames(n, 16, DomainTag::Linear, 2),
    )
    .unwrap()
}

#[test]
fn lr_schedule_examples() {
    let cfg = TrainConfig::default();
    assert_eq!(lr_at(&cfg, 0).unwrap(), 2e-4);
    assert_eq!(lr_at(&cfg, 99).unwrap(), 2e-4);
    assert_eq!(lr_at(&cfg, 100).unwrap(), 2e-4);
    assert!((lr_at(&cfg, 150).unwrap() - 1e-4).abs() < 1e-18);
    assert_eq!(lr_at(&cfg, 200).unwrap(), 0.0);
    assert!(lr_at(&cfg, 201).is_err());
    let lrs: Vec<f64> = (0..=200).map(|e| lr_at(&cfg, e).unwrap()).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    // continuity: no jump larger than one decay increment
    assert!(lrs.windows(2).all(|w| w[0] - w[1] <= 2e-4 / 100.0 + 1e-18));
}

#[test]
fn lr_decay_start_at_end_drops_to_zero_only_at_end() {
    let cfg = TrainConfig {
        epochs: 5,
        lr_decay_start_epoch: 5,
        ..TrainConfig::default()
    };
    assert_eq!(lr_at(&cfg, 4).unwrap(), 2e-4);
    assert_eq!(lr_at(&cfg, 5).unwrap(), 0.0);
}

#[test]
fn config_rejects_bad_values() {
    let bad = [
        TrainConfig {
            lr_decay_start_epoch: 300,
            ..TrainConfig::default()
        },
        TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            validation_fraction: 1.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            lr_initial: -1.0,
            ..TrainConfig::default()
        },
    ];
    for cfg in bad {
        assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
    }
    TrainConfig::default().validate().unwrap();
    TrainConfig::desk(3).validate().unwrap();
}

#[test]
fn validation_split_holds_out_213_of_2135() {
    assert_eq!(held_out_count(2135, 0.10), 213);
}

#[test]
fn identical_steps_give_identical_reports() {
    let cfg = tiny_config(5);
    let a = random_batch::<f32>(2, 16, 1);
    let b = random_batch::<f32>(2, 16, 2);
    let mut s1 = TrainState::<f32>::new(&cfg).unwrap();
    let mut s2 = s1.clone();
    let r1 = train_step(&mut s1, &cfg, &a, &b, &[0, 1], &[0, 1]).unwrap().report;
    let r2 = train_step(&mut s2, &cfg, &a, &b, &[0, 1], &[0, 1]).unwrap().report;
    assert_eq!(r1, r2);
    assert_eq!(s1, s2);
    assert!(r1.is_finite() && r1.adv_d > 0.0);
}

#[test]
fn discriminators_see_only_this_steps_generated_frames() {
    let cfg = tiny_config(6);
    let a = random_batch::<f64>(2, 16, 3);
    let b = random_batch::<f64>(2, 16, 4);
    let mut st = TrainState::<f64>::new(&cfg).unwrap();
    for _ in 0..3 {
        let expect_b = st.g_a.forward_train(&a).unwrap().0;
        let expect_a = st.g_b.forward_train(&b).unwrap().0;
        let out = train_step(&mut st, &cfg, &a, &b, &[0, 1], &[0, 1]).unwrap();
        assert_eq!(out.d_a_fake_input, expect_b);
        assert_eq!(out.d_b_fake_input, expect_a);
    }
}

/// One Adam step from zero moments: `w ← w − lr · g / (|g| + ε)`.
fn first_adam_step(d: &mut Discriminator<f64>, g: &Gradients<f64>, lr: f64) {
    for (i, p) in d.weights.params.iter_mut().enumerate() {
        if p.trainable {
            for (w, &gi) in p.data.iter_mut().zip(&g.grads[i]) {
                // bias-corrected m̂ = g, v̂ = g²
                *w -= lr * gi / ((gi * gi).sqrt() + 1e-8);
            }
        }
    }
}

#[test]
fn lsgan_only_step_matches_hand_computation() {
    let mut cfg = tiny_config(7);
    cfg.weights = LossWeights::new(0.0, 0.0, 0.0).unwrap();
    let a = random_batch::<f64>(2, 16, 5);
    let b = random_batch::<f64>(2, 16, 6);
    let mut st = TrainState::<f64>::new(&cfg).unwrap();
    st.g_a.zero_residual();
    st.g_b.zero_residual();
    let (d_a0, d_b0) = (st.d_a.clone(), st.d_b.clone());

    let out = train_step(&mut st, &cfg, &a, &b, &[0, 1], &[0, 1]).unwrap();
    // identity generators: the generated batches are the inputs themselves
    assert_eq!(out.d_a_fake_input, a);
    assert_eq!(out.d_b_fake_input, b);

    let sq = |xs: &[f64], t: f64| xs.iter().map(|v| (v - t) * (v - t)).sum::<f64>() / xs.len() as f64;
    let mut expect_d = 0.0;
    let mut updated = Vec::new();
    for (d0, real, fake) in [(&d_a0, &b, &a), (&d_b0, &a, &b)] {
        let (s_real, t_real) = d0.forward_train(real).unwrap();
        let (s_fake, t_fake) = d0.forward_train(fake).unwrap();
        expect_d += sq(s_real.data(), 1.0) + sq(s_fake.data(), 0.0);
        let mut g = Gradients::zeros_like(&d0.weights);
        d0.backward(&t_real, &lsgan_grad(&s_real, 1.0), &mut g, false);
        d0.backward(&t_fake, &lsgan_grad(&s_fake, 0.0), &mut g, false);
        let mut d1 = d0.clone();
        first_adam_step(&mut d1, &g, cfg.lr_initial);
        updated.push(d1);
    }
    let expect_g = sq(updated[0].forward(&a).unwrap().data(), 1.0) + sq(updated[1].forward(&b).unwrap().data(), 1.0);

    assert!((out.report.adv_d - expect_d).abs() < 1e-12, "{} vs {expect_d}", out.report.adv_d);
    assert!((out.report.adv_g - expect_g).abs() < 1e-12, "{} vs {expect_g}", out.report.adv_g);
    assert_eq!(out.report.cyc, 0.0);
    assert_eq!(out.report.idt, 0.0);
    assert!(out.report.cc.abs() < 1e-12);
    assert_eq!(out.report.total, out.report.adv_g);
    for (got, want) in [(&st.d_a, &updated[0]), (&st.d_b, &updated[1])] {
        for (p, q) in got.weights.params.iter().zip(&want.weights.params) {
            for (x, y) in p.data.iter().zip(&q.data) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }
}

struct Probe {
    net: usize,
    param: usize,
    index: usize,
}

/// Largest-gradient entry of every trainable grid of both generators.
fn probes(ga: &Gradients<f64>, gb: &Gradients<f64>, st: &TrainState<f64>) -> Vec<Probe> {
    let mut out = Vec::new();
    for (net, (g, gen)) in [(ga, &st.g_a), (gb, &st.g_b)].into_iter().enumerate() {
        for (param, p) in gen.weights.params.iter().enumerate() {
            if !p.trainable {
                continue;
            }
            let (index, _) = g.grads[param]
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.abs().total_cmp(&y.1.abs()))
                .unwrap();
            out.push(Probe { net, param, index });
        }
    }
    out
}

fn objective_at(st: &TrainState<f64>, w: &LossWeights, a: &Tensor<f64>, b: &Tensor<f64>, probe: &Probe, delta: f64) -> f64 {
    let mut g_a = st.g_a.clone();
    let mut g_b = st.g_b.clone();
    let target = if probe.net == 0 { &mut g_a } else { &mut g_b };
    target.weights.params[probe.param].data[probe.index] += delta;
    generator_objective(&g_a, &g_b, &st.d_a, &st.d_b, a, b, w, false)
        .unwrap()
        .report
        .total
}

/// Best relative agreement between `analytic` and central differences over
/// a ladder of steps. ReLU kinks within `h` of a pre-activation spoil the
/// larger steps on tiny networks; a wrong gradient disagrees at every step.
fn fd_relative_error(st: &TrainState<f64>, w: &LossWeights, a: &Tensor<f64>, b: &Tensor<f64>, p: &Probe, analytic: f64) -> f64 {
    [1e-5, 1e-6, 1e-7, 1e-8]
        .iter()
        .map(|&h| {
            let fd = (objective_at(st, w, a, b, p, h) - objective_at(st, w, a, b, p, -h)) / (2.0 * h);
            (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-8)
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn generator_objective_gradient_matches_finite_differences() {
    let mut cfg = tiny_config(8);
    cfg.generator = GeneratorSpec::reduced(2);
    let a = random_batch::<f64>(2, 8, 9);
    let b = random_batch::<f64>(2, 8, 10);
    let st = TrainState::<f64>::new(&cfg).unwrap();
    let pass = generator_objective(&st.g_a, &st.g_b, &st.d_a, &st.d_b, &a, &b, &cfg.weights, true).unwrap();
    let (ga, gb) = pass.grads.unwrap();
    let mut worst = 0.0f64;
    for p in probes(&ga, &gb, &st) {
        let analytic = if p.net == 0 { &ga } else { &gb }.grads[p.param][p.index];
        worst = worst.max(fd_relative_error(&st, &cfg.weights, &a, &b, &p, analytic));
    }
    assert!(worst <= 1e-5, "worst relative error {worst}");
}

#[test]
fn f32_gradient_agrees_with_f64_finite_differences() {
    let mut cfg = tiny_config(11);
    cfg.generator = GeneratorSpec::reduced(2);
    let a = random_batch::<f64>(2, 8, 12);
    let b = random_batch::<f64>(2, 8, 13);
    let st = TrainState::<f64>::new(&cfg).unwrap();
    let st32 = TrainState::<f32> {
        g_a: st.g_a.cast(),
        g_b: st.g_b.cast(),
        d_a: st.d_a.cast(),
        d_b: st.d_b.cast(),
        ..TrainState::<f32>::new(&cfg).unwrap()
    };
    let pass = generator_objective(
        &st32.g_a,
        &st32.g_b,
        &st32.d_a,
        &st32.d_b,
        &a.cast::<f32>(),
        &b.cast::<f32>(),
        &cfg.weights,
        true,
    )
    .unwrap();
    let (ga32, gb32) = pass.grads.unwrap();
    let ref64 = generator_objective(&st.g_a, &st.g_b, &st.d_a, &st.d_b, &a, &b, &cfg.weights, true).unwrap();
    let (ga, gb) = ref64.grads.unwrap();
    let mut worst = 0.0f64;
    for p in probes(&ga, &gb, &st) {
        let analytic = f64::from(if p.net == 0 { &ga32 } else { &gb32 }.grads[p.param][p.index]);
        worst = worst.max(fd_relative_error(&st, &cfg.weights, &a, &b, &p, analytic));
    }
    assert!(worst <= 1e-3, "worst relative error {worst}");
}

#[test]
fn non_finite_input_reports_divergence_with_batch_indices() {
    let cfg = tiny_config(12);
    let mut a = random_batch::<f32>(2, 16, 1);
    a.data_mut()[7] = f32::NAN;
    let b = random_batch::<f32>(2, 16, 2);
    let mut st = TrainState::<f32>::new(&cfg).unwrap();
    match train_step(&mut st, &cfg, &a, &b, &[4, 9], &[1, 3]) {
        Err(Error::Divergence { batch_a, batch_b, .. }) => {
            assert_eq!(batch_a, vec![4, 9]);
            assert_eq!(batch_b, vec![1, 3]);
        }
        Err(other) => panic!("unexpected error {other}"),
        Ok(_) => panic!("NaN input trained"),
    }
}

#[test]
fn zero_epochs_returns_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        epochs: 0,
        lr_decay_start_epoch: 0,
        ..tiny_config(13)
    };
    let out = train::<f32>(&tiny_dataset(10), &cfg, dir.path(), None).unwrap();
    assert_eq!(out.checkpoints.len(), 1);
    assert!(out.epoch_means.is_empty());
    let initial = TrainState::<f32>::new(&cfg).unwrap();
    assert_eq!(out.state, initial);
    let (loaded, meta) = load_checkpoint::<f32>(&out.checkpoints[0]).unwrap();
    assert_eq!(meta.epoch, 0);
    assert_eq!(loaded, initial);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(14);
    let data = tiny_dataset(10);
    let full = train::<f32>(&data, &cfg, dir.path(), None).unwrap();
    assert_eq!(full.epoch_means.len(), 4);
    assert_eq!(full.checkpoints.len(), 2);
    let full_log = std::fs::read_to_string(dir.path().join("losses.csv")).unwrap();

    let resumed = train::<f32>(&data, &cfg, dir.path(), Some(&full.checkpoints[0])).unwrap();
    for (x, y) in full.epoch_means.iter().zip(&resumed.epoch_means) {
        assert!((x.total - y.total).abs() <= 1e-5);
    }
    assert_eq!(full.epoch_means, resumed.epoch_means);
    assert_eq!(full.state, resumed.state);
    assert_eq!(full_log, std::fs::read_to_string(dir.path().join("losses.csv")).unwrap());
}

#[test]
fn training_writes_logs_and_exports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        weights: LossWeights::new(10.0, 0.0, 0.0).unwrap(),
        epochs: 1,
        lr_decay_start_epoch: 1,
        ..tiny_config(15)
    };
    let out = train::<f32>(&tiny_dataset(10), &cfg, dir.path(), None).unwrap();
    let layout = RunLayout::new(dir.path());
    let log = std::fs::read_to_string(layout.log()).unwrap();
    assert!(log.starts_with("baseline: vanilla CycleGAN\n"));
    let losses = std::fs::read_to_string(layout.losses()).unwrap();
    let mut lines = losses.lines();
    assert_eq!(lines.next(), Some(LOSS_HEADER));
    // 8 training frames per domain, batch 2
    assert_eq!(lines.count(), 4);
    let val = std::fs::read_to_string(layout.validation()).unwrap();
    assert_eq!(val.lines().next(), Some(VALIDATION_HEADER));
    assert_eq!(out.validation.len(), 1);
    let g = crate::networks::load_generator::<f32>(&layout.exported().join("g_a.ccgw")).unwrap();
    assert_eq!(g, out.state.g_a);
}

#[test]
fn training_rejects_empty_domain_and_unnormalized_frames() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(16);
    let empty = UnpairedDataset::new(random_frames(4, 16, DomainTag::Phased, 1), Vec::new()).unwrap();
    assert!(matches!(train::<f32>(&empty, &cfg, dir.path(), None), Err(Error::InvalidInput(_))));
    let mut data = tiny_dataset(10);
    data.domain_b[3] = data.domain_b[3].with_samples(Grid::filled(16, 16, 2.0)).unwrap();
    assert!(matches!(train::<f32>(&data, &cfg, dir.path(), None), Err(Error::InvalidInput(_))));
}

#[test]
fn resume_rejects_a_different_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(17);
    let full = train::<f32>(&tiny_dataset(10), &cfg, dir.path(), None).unwrap();
    let other = TrainConfig { seed: 18, ..cfg };
    assert!(matches!(
        train::<f32>(&tiny_dataset(10), &other, dir.path(), Some(&full.checkpoints[0])),
        Err(Error::Config(_))
    ));
}

#[test]
fn identity_generator_translation_is_exact_and_ordered() {
    let mut g = build_generator::<f32>(GeneratorSpec::reduced(2), 3).unwrap();
    g.zero_residual();
    let frames = random_frames(5, 12, DomainTag::Phased, 20);
    let out = translate(&g, &frames, 2).unwrap();
    assert_eq!(out.len(), 5);
    for (x, y) in frames.iter().zip(&out) {
        assert_eq!(y.domain, DomainTag::Generated);
        assert_eq!(y.frame_index, x.frame_index);
        for (p, q) in x.samples().as_slice().iter().zip(y.samples().as_slice()) {
            assert!((p - q).abs() <= 1e-6);
        }
    }
}

#[test]
fn translation_rejects_unnormalized_frames() {
    let g = build_generator::<f32>(GeneratorSpec::reduced(2), 3).unwrap();
    let mut frames = random_frames(2, 12, DomainTag::Phased, 21);
    frames[1] = frames[1].with_samples(Grid::filled(12, 12, 1.5)).unwrap();
    assert!(matches!(translate(&g, &frames, 4), Err(Error::InvalidInput(_))));
}

#[test]
fn translation_output_is_clamped() {
    let mut g = build_generator::<f64>(GeneratorSpec::reduced(2), 3).unwrap();
    g.zero_residual();
    // push the residual to a large positive constant
    let out_bias = g.weights.index_of("out.bias").expect("output bias");
    g.weights.get_mut(out_bias)[0] = 5.0;
    let frames = random_frames(1, 12, DomainTag::Phased, 22);
    let y = translate(&g, &frames, 1).unwrap();
    assert!(y[0].samples().as_slice().iter().all(|&v| v == 1.0));
}

