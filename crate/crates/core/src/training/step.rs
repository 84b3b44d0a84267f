use crate::error::{Error, Result};
use crate::image::EnvelopeImage;
use crate::losses::{
    adversarial_losses, correlation_term, lsgan_grad, mean_abs_diff, mean_abs_diff_grad, total_generator_objective,
    LossReport, LossWeights,
};
use crate::networks::{build_discriminator, build_generator, Discriminator, Generator, GeneratorTrace};
use crate::nn::{AdamState, Gradients, Real, Tensor};

use super::{derive_seed, lr_at, TrainConfig};

/// Networks, optimizer moments and position in the schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    /// Phased → linear.
    pub g_a: Generator<T>,
    /// Linear → phased.
    pub g_b: Generator<T>,
    /// Judges linear-domain frames.
    pub d_a: Discriminator<T>,
    /// Judges phased-domain frames.
    pub d_b: Discriminator<T>,
    pub opt_g_a: AdamState<T>,
    pub opt_g_b: AdamState<T>,
    pub opt_d_a: AdamState<T>,
    pub opt_d_b: AdamState<T>,
    /// Optimizer steps taken so far.
    pub step: usize,
    /// Epochs completed so far.
    pub epoch: usize,
}

impl<T: Real> TrainState<T> {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let g_a = build_generator(cfg.generator, derive_seed(cfg.seed, 1))?;
        let g_b = build_generator(cfg.generator, derive_seed(cfg.seed, 2))?;
        let d_a = build_discriminator(cfg.discriminator.clone(), derive_seed(cfg.seed, 3))?;
        let d_b = build_discriminator(cfg.discriminator.clone(), derive_seed(cfg.seed, 4))?;
        Ok(Self::from_networks(g_a, g_b, d_a, d_b))
    }

    /// Fresh optimizer state around existing networks.
    pub fn from_networks(g_a: Generator<T>, g_b: Generator<T>, d_a: Discriminator<T>, d_b: Discriminator<T>) -> Self {
        Self {
            opt_g_a: AdamState::new(&g_a.weights),
            opt_g_b: AdamState::new(&g_b.weights),
            opt_d_a: AdamState::new(&d_a.weights),
            opt_d_b: AdamState::new(&d_b.weights),
            g_a,
            g_b,
            d_a,
            d_b,
            step: 0,
            epoch: 0,
        }
    }
}

/// Stacks equally shaped frames into an `N×1×H×W` tensor.
pub fn batch_tensor<T: Real>(frames: &[&EnvelopeImage]) -> Result<Tensor<T>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
    let (h, w) = first.shape();
    let mut data = Vec::with_capacity(frames.len() * h * w);
    for f in frames {
        if f.shape() != (h, w) {
            return Err(Error::shape((h, w), f.shape()));
        }
        data.extend(f.samples().as_slice().iter().map(|&v| T::of(v)));
    }
    Tensor::from_vec([frames.len(), 1, h, w], data)
}

/// Everything the generator half of a step computes.
pub struct GeneratorPass<T> {
    /// `adv_g`, `cyc`, `idt`, `cc` and `total`; `adv_d` is left at 0.
    pub report: LossReport,
    /// `G_A(a)`.
    pub fake_b: Tensor<T>,
    /// `G_B(b)`.
    pub fake_a: Tensor<T>,
    /// Gradients of `total` for `G_A` / `G_B` (when requested).
    pub grads: Option<(Gradients<T>, Gradients<T>)>,
    // source-domain passes (g_a on a, g_b on b); the only ones folded into
    // the running normalization statistics
    source_a: GeneratorTrace<T>,
    source_b: GeneratorTrace<T>,
}

/// Total generator objective on one batch pair, in training mode (batch
/// normalization statistics), with the discriminators frozen. With
/// `with_grads` the analytic gradients for both generators are returned.
///
/// The identity passes are always evaluated for the report; they only
/// contribute gradients when `λ₂ > 0`.
#[allow(clippy::too_many_arguments)]
pub fn generator_objective<T: Real>(
    g_a: &Generator<T>,
    g_b: &Generator<T>,
    d_a: &Discriminator<T>,
    d_b: &Discriminator<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    w: &LossWeights,
    with_grads: bool,
) -> Result<GeneratorPass<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(a.shape(), b.shape()));
    }
    let fwd_a = g_a.forward_train(a)?;
    let fwd_b = g_b.forward_train(b)?;
    objective_from(g_a, g_b, d_a, d_b, a, b, w, with_grads, fwd_a, fwd_b)
}

type Forward<T> = (Tensor<T>, GeneratorTrace<T>);

/// [`generator_objective`] continuing from already computed `G_A(a)` and
/// `G_B(b)` passes.
#[allow(clippy::too_many_arguments)]
fn objective_from<T: Real>(
    g_a: &Generator<T>,
    g_b: &Generator<T>,
    d_a: &Discriminator<T>,
    d_b: &Discriminator<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    w: &LossWeights,
    with_grads: bool,
    (fake_b, t_a_fwd): Forward<T>,
    (fake_a, t_b_fwd): Forward<T>,
) -> Result<GeneratorPass<T>> {
    let (rec_a, t_b_cyc) = g_b.forward_train(&fake_b)?;
    let (rec_b, t_a_cyc) = g_a.forward_train(&fake_a)?;
    let (idt_b, t_a_idt) = g_a.forward_train(b)?;
    let (idt_a, t_b_idt) = g_b.forward_train(a)?;

    let (s_fake_b, td_a) = d_a.forward_train(&fake_b)?;
    let (s_fake_a, td_b) = d_b.forward_train(&fake_a)?;
    let (adv_ga, _) = adversarial_losses(s_fake_b.data(), s_fake_b.data())?;
    let (adv_gb, _) = adversarial_losses(s_fake_a.data(), s_fake_a.data())?;

    let cyc = mean_abs_diff(&rec_a, a)? + mean_abs_diff(&rec_b, b)?;
    let idt = mean_abs_diff(&idt_b, b)? + mean_abs_diff(&idt_a, a)?;
    let (cc_a, dcc_fake_b) = correlation_term(a, &fake_b)?;
    let (cc_b, dcc_fake_a) = correlation_term(b, &fake_a)?;

    let mut report = LossReport {
        adv_g: adv_ga + adv_gb,
        adv_d: 0.0,
        cyc,
        idt,
        cc: cc_a + cc_b,
        total: 0.0,
    };
    report.total = total_generator_objective(&report, w);

    let use_idt = w.lambda2 > 0.0;
    let grads = with_grads.then(|| {
        let mut ga = Gradients::zeros_like(&g_a.weights);
        let mut gb = Gradients::zeros_like(&g_b.weights);
        let mut scratch_a = Gradients::zeros_like(&d_a.weights);
        let mut scratch_b = Gradients::zeros_like(&d_b.weights);

        // G_A(a) feeds D_A, the cycle through G_B and the correlation term.
        let mut d_fake_b = d_a
            .backward(&td_a, &lsgan_grad(&s_fake_b, 1.0), &mut scratch_a, true)
            .expect("input gradient requested");
        let d_rec_a = mean_abs_diff_grad(&rec_a, a, w.lambda1);
        d_fake_b.add_assign(&g_b.backward(&t_b_cyc, &d_rec_a, &mut gb, true).expect("input gradient requested"));
        if w.lambda3 != 0.0 {
            d_fake_b.add_assign(&dcc_fake_b.map(|v| v * T::of(w.lambda3)));
        }
        g_a.backward(&t_a_fwd, &d_fake_b, &mut ga, false);

        let mut d_fake_a = d_b
            .backward(&td_b, &lsgan_grad(&s_fake_a, 1.0), &mut scratch_b, true)
            .expect("input gradient requested");
        let d_rec_b = mean_abs_diff_grad(&rec_b, b, w.lambda1);
        d_fake_a.add_assign(&g_a.backward(&t_a_cyc, &d_rec_b, &mut ga, true).expect("input gradient requested"));
        if w.lambda3 != 0.0 {
            d_fake_a.add_assign(&dcc_fake_a.map(|v| v * T::of(w.lambda3)));
        }
        g_b.backward(&t_b_fwd, &d_fake_a, &mut gb, false);

        if use_idt {
            g_a.backward(&t_a_idt, &mean_abs_diff_grad(&idt_b, b, w.lambda2), &mut ga, false);
            g_b.backward(&t_b_idt, &mean_abs_diff_grad(&idt_a, a, w.lambda2), &mut gb, false);
        }
        (ga, gb)
    });

    Ok(GeneratorPass {
        report,
        fake_b,
        fake_a,
        grads,
        source_a: t_a_fwd,
        source_b: t_b_fwd,
    })
}

/// What one step produced, including the exact tensors each discriminator
/// saw as "generated" input (there is no history buffer).
pub struct StepOutcome<T> {
    pub report: LossReport,
    pub d_a_fake_input: Tensor<T>,
    pub d_b_fake_input: Tensor<T>,
}

fn diverged(state: &TrainState<impl Real>, detail: String, idx_a: &[usize], idx_b: &[usize]) -> Error {
    Error::Divergence {
        epoch: state.epoch,
        step: state.step,
        detail,
        batch_a: idx_a.to_vec(),
        batch_b: idx_b.to_vec(),
    }
}

/// Least-squares discriminator update on one (real, generated) pair.
/// Returns the pre-update discriminator loss.
fn discriminator_update<T: Real>(
    d: &mut Discriminator<T>,
    opt: &mut AdamState<T>,
    cfg: &TrainConfig,
    lr: f64,
    real: &Tensor<T>,
    fake: &Tensor<T>,
) -> Result<(f64, bool)> {
    let (s_real, t_real) = d.forward_train(real)?;
    let (s_fake, t_fake) = d.forward_train(fake)?;
    let (_, loss) = adversarial_losses(s_real.data(), s_fake.data())?;
    let mut grads = Gradients::zeros_like(&d.weights);
    d.backward(&t_real, &lsgan_grad(&s_real, 1.0), &mut grads, false);
    d.backward(&t_fake, &lsgan_grad(&s_fake, 0.0), &mut grads, false);
    if !grads.is_finite() {
        return Ok((loss, false));
    }
    opt.update(&cfg.adam(), lr, &mut d.weights, &grads);
    Ok((loss, true))
}

/// One alternating update: both discriminators against the current
/// generators' output, then both generators against the updated
/// discriminators. `idx_a` / `idx_b` identify the batch frames in error
/// reports.
pub fn train_step<T: Real>(
    state: &mut TrainState<T>,
    cfg: &TrainConfig,
    a: &Tensor<T>,
    b: &Tensor<T>,
    idx_a: &[usize],
    idx_b: &[usize],
) -> Result<StepOutcome<T>> {
    let lr = lr_at(cfg, state.epoch)?;
    let wrap = |state: &TrainState<T>, e: Error| match e {
        Error::NonFinite(d) => diverged(state, d, idx_a, idx_b),
        Error::ConstantFrame => diverged(state, "constant frame in correlation term".into(), idx_a, idx_b),
        other => other,
    };

    if a.shape() != b.shape() {
        return Err(Error::shape(a.shape(), b.shape()));
    }
    // The generated batches the discriminators see are exactly this step's.
    let fwd_a = state.g_a.forward_train(a).map_err(|e| wrap(state, e))?;
    let fwd_b = state.g_b.forward_train(b).map_err(|e| wrap(state, e))?;
    let (fake_b, fake_a) = (fwd_a.0.clone(), fwd_b.0.clone());
    if !fake_b.is_finite() || !fake_a.is_finite() {
        return Err(diverged(state, "generator produced non-finite output".into(), idx_a, idx_b));
    }

    let (adv_d_a, ok_a) = discriminator_update(&mut state.d_a, &mut state.opt_d_a, cfg, lr, b, &fake_b)
        .map_err(|e| wrap(state, e))?;
    let (adv_d_b, ok_b) = discriminator_update(&mut state.d_b, &mut state.opt_d_b, cfg, lr, a, &fake_a)
        .map_err(|e| wrap(state, e))?;
    if !(ok_a && ok_b) {
        return Err(diverged(state, "non-finite discriminator gradient".into(), idx_a, idx_b));
    }

    let (g_a, g_b, d_a, d_b) = (&state.g_a, &state.g_b, &state.d_a, &state.d_b);
    let pass = objective_from(g_a, g_b, d_a, d_b, a, b, &cfg.weights, true, fwd_a, fwd_b).map_err(|e| wrap(state, e))?;
    let mut report = pass.report;
    report.adv_d = adv_d_a + adv_d_b;
    if !report.is_finite() {
        return Err(diverged(state, format!("non-finite loss {report:?}"), idx_a, idx_b));
    }
    let (ga, gb) = pass.grads.expect("gradients requested");
    if !(ga.is_finite() && gb.is_finite()) {
        return Err(diverged(state, "non-finite generator gradient".into(), idx_a, idx_b));
    }
    let adam = cfg.adam();
    state.opt_g_a.update(&adam, lr, &mut state.g_a.weights, &ga);
    state.opt_g_b.update(&adam, lr, &mut state.g_b.weights, &gb);
    // Reconstruction and identity passes see generated or other-domain
    // inputs; averaging their statistics in skews inference on real input.
    state.g_a.update_running_stats(&pass.source_a);
    state.g_b.update_running_stats(&pass.source_b);
    state.step += 1;
    Ok(StepOutcome {
        report,
        d_a_fake_input: fake_b,
        d_b_fake_input: fake_a,
    })
}

/// Loss report in inference mode (running statistics, no updates).
pub fn validation_report<T: Real>(state: &TrainState<T>, w: &LossWeights, a: &Tensor<T>, b: &Tensor<T>) -> Result<LossReport> {
    if a.shape() != b.shape() {
        return Err(Error::shape(a.shape(), b.shape()));
    }
    let fake_b = state.g_a.forward(a)?;
    let fake_a = state.g_b.forward(b)?;
    let rec_a = state.g_b.forward(&fake_b)?;
    let rec_b = state.g_a.forward(&fake_a)?;
    let idt_b = state.g_a.forward(b)?;
    let idt_a = state.g_b.forward(a)?;
    let (ga, da) = adversarial_losses(state.d_a.forward(b)?.data(), state.d_a.forward(&fake_b)?.data())?;
    let (gb, db) = adversarial_losses(state.d_b.forward(a)?.data(), state.d_b.forward(&fake_a)?.data())?;
    let mut report = LossReport {
        adv_g: ga + gb,
        adv_d: da + db,
        cyc: mean_abs_diff(&rec_a, a)? + mean_abs_diff(&rec_b, b)?,
        idt: mean_abs_diff(&idt_b, b)? + mean_abs_diff(&idt_a, a)?,
        cc: correlation_term(a, &fake_b)?.0 + correlation_term(b, &fake_a)?.0,
        total: 0.0,
    };
    report.total = total_generator_objective(&report, w);
    Ok(report)
}

