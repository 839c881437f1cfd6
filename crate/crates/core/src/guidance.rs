//! Classifier-guidance rules for rehearsal sampling.
//!
//! All rules modify the ε prediction at every denoising step by the gradient
//! of a classifier loss evaluated on the clean prediction ẑ0:
//!
//!   ε̂ = ε + sign·s·√(1−ᾱ_t)·∇_{ẑ0} ℓ(f(ẑ0), y)
//!
//! The gradient is taken with the ε estimate held fixed and mapped into
//! ε-space with the bounded coefficient √(1−ᾱ_t). (The raw Jacobian of the
//! clean-prediction map w.r.t. x_t is 1/√ᾱ_t — see [`xt_loss_gradient`] —
//! but that factor grows without bound as ᾱ_t → 0 and a shift carrying it
//! destroys the trajectory at the noisy end of the chain; the bounded form
//! is the standard ε-space convention for clean-sample guidance.) The raw
//! gradient is never normalized, and the scale multiplies last, which makes
//! the ε-shift exactly linear in s.
//!
//! An escape hatch (`backprop_through_denoiser`) instead differentiates the
//! full composition including the denoiser network on the tape.

use serde::{Deserialize, Serialize};

use crate::classifier::{input_gradient, ClassifierModel};
use crate::diffusion::{
    sample, sample_unconditional, DenoiserModel, NoiseSchedule, SamplerConfig,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, Reduction};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GuidanceVariant {
    None,
    Guide,
    PrevPlus,
    PrevMinus,
    CurrMinus,
}

impl GuidanceVariant {
    /// Names as they appear verbatim in CLI configs and output files.
    pub fn as_str(&self) -> &'static str {
        match self {
            GuidanceVariant::None => "NONE",
            GuidanceVariant::Guide => "GUIDE",
            GuidanceVariant::PrevPlus => "PREV_PLUS",
            GuidanceVariant::PrevMinus => "PREV_MINUS",
            GuidanceVariant::CurrMinus => "CURR_MINUS",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "NONE" => Ok(GuidanceVariant::None),
            "GUIDE" => Ok(GuidanceVariant::Guide),
            "PREV_PLUS" => Ok(GuidanceVariant::PrevPlus),
            "PREV_MINUS" => Ok(GuidanceVariant::PrevMinus),
            "CURR_MINUS" => Ok(GuidanceVariant::CurrMinus),
            other => Err(Error::config(format!(
                "unknown guidance variant `{other}` (expected NONE, GUIDE, PREV_PLUS, PREV_MINUS or CURR_MINUS)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub variant: GuidanceVariant,
    /// Gradient scale s; ignored for NONE.
    pub scale: f64,
    /// Differentiate ℓ(f(ẑ0(x_t)), y) through the denoiser network (the
    /// default: the denoiser Jacobian attenuates the gradient where the
    /// clean prediction is insensitive to x_t, which keeps useful scales in
    /// the 0.1–1 range). Setting this false holds the ε estimate fixed and
    /// maps ∇_{ẑ0}ℓ into ε-space with the bounded coefficient √(1−ᾱ_t).
    pub backprop_through_denoiser: bool,
}

impl GuidanceConfig {
    pub fn none() -> Self {
        GuidanceConfig {
            variant: GuidanceVariant::None,
            scale: 0.0,
            backprop_through_denoiser: true,
        }
    }

    pub fn new(variant: GuidanceVariant, scale: f64) -> Self {
        GuidanceConfig {
            variant,
            scale,
            backprop_through_denoiser: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale < 0.0 {
            return Err(Error::config(format!(
                "guidance scale must be nonnegative, got {}",
                self.scale
            )));
        }
        Ok(())
    }
}

/// Dual guidance toward an in-distribution class c1 and an out-of-distribution
/// class c2 from the same classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualGuidanceConfig {
    pub c1: usize,
    pub c2: usize,
    pub s1: f64,
    pub s2: f64,
}

impl DualGuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c1 == self.c2 {
            return Err(Error::config("dual guidance requires c1 != c2"));
        }
        if self.s1 < 0.0 || self.s2 < 0.0 {
            return Err(Error::config("dual guidance scales must be nonnegative"));
        }
        Ok(())
    }
}

fn check_sign(sign: f64) -> Result<()> {
    if sign != 1.0 && sign != -1.0 {
        return Err(Error::contract(format!(
            "guidance sign must be +1 or -1, got {sign}"
        )));
    }
    Ok(())
}

/// ε-shift for guiding toward (+1) or away from (−1) per-row target classes.
/// Computed as scale × (sign·√(1−ᾱ_t)·∇_{ẑ0}ℓ); the scale multiplies last so
/// the shift is exactly linear in it.
pub fn guidance_delta(
    t: usize,
    z0_hat: &Tensor,
    classifier: &ClassifierModel,
    targets: &[usize],
    scale: f64,
    sign: f64,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    check_sign(sign)?;
    if targets.len() != z0_hat.rows() {
        return Err(Error::contract(format!(
            "guidance_delta: {} targets for {} rows",
            targets.len(),
            z0_hat.rows()
        )));
    }
    if let Some(&bad) = targets.iter().find(|&&c| c >= classifier.num_classes) {
        return Err(Error::contract(format!(
            "guidance target class {bad} out of range ({})",
            classifier.num_classes
        )));
    }
    let grad = input_gradient(classifier, z0_hat, targets)?;
    let k = sign * (1.0 - schedule.alpha_bar(t)).sqrt();
    Ok(grad.map(|g| scale * (k * g)))
}

/// Stopped-gradient ∇_{x_t} ℓ(f(ẑ0(x_t)), y): backprop to ẑ0, then the
/// analytic Jacobian of the clean-prediction map, which contributes the
/// constant 1/√ᾱ_t when the ε estimate is held fixed.
pub fn xt_loss_gradient(
    t: usize,
    z0_hat: &Tensor,
    classifier: &ClassifierModel,
    targets: &[usize],
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    let grad = input_gradient(classifier, z0_hat, targets)?;
    Ok(grad.scale(1.0 / schedule.alpha_bar(t).sqrt()))
}

/// Clean-prediction classifier guidance: ε̂ = ε + sign·s·∇_{x_t}ℓ(f(ẑ0), y).
#[allow(clippy::too_many_arguments)]
pub fn guide_epsilon(
    eps: &Tensor,
    _x_t: &Tensor,
    t: usize,
    z0_hat: &Tensor,
    classifier: &ClassifierModel,
    targets: &[usize],
    scale: f64,
    sign: f64,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    let delta = guidance_delta(t, z0_hat, classifier, targets, scale, sign, schedule)?;
    eps.add(&delta)
}

/// Full-backprop ε-shift: differentiate ℓ(f(ẑ0(x_t)), y) through the frozen
/// denoiser itself. The scale multiplies last, so the shift is exactly
/// linear in it.
#[allow(clippy::too_many_arguments)]
pub fn guidance_delta_through_model(
    x_t: &Tensor,
    t: usize,
    denoiser: &DenoiserModel,
    labels: Option<&[usize]>,
    classifier: &ClassifierModel,
    targets: &[usize],
    scale: f64,
    sign: f64,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    check_sign(sign)?;
    let mut g = Graph::new();
    let x = g.input(x_t.clone());
    let eps = denoiser.forward_frozen_var(&mut g, x, t, labels)?;
    let ab = schedule.alpha_bar(t);
    let scaled_eps = g.scale(eps, (1.0 - ab).sqrt());
    let centered = g.sub(x, scaled_eps)?;
    let z0 = g.scale(centered, 1.0 / ab.sqrt());
    let logits = classifier.mlp.forward_frozen(&mut g, z0)?;
    let loss = g.cross_entropy_with(logits, targets, Reduction::Sum)?;
    g.backward(loss)?;
    let grad = g.grad(x).expect("input grad populated");
    Ok(Tensor::new(
        x_t.shape().to_vec(),
        grad.iter().map(|&d| scale * (sign * d)).collect(),
    )?)
}

/// Per-step target re-selection for GUIDE: the current-task class the
/// classifier currently rates highest on the clean prediction.
pub fn select_target_class(
    classifier: &ClassifierModel,
    z0_hat: &Tensor,
    current_task_classes: &[usize],
) -> Result<Vec<usize>> {
    classifier.predict_restricted(z0_hat, current_task_classes)
}

/// Frozen previous-task generator plus the classifier snapshots a variant
/// may consult.
pub struct RehearsalSetup<'a> {
    pub prev_diffusion: &'a DenoiserModel,
    pub prev_classifier: &'a ClassifierModel,
    pub curr_classifier: &'a ClassifierModel,
    pub current_task_classes: &'a [usize],
    pub schedule: &'a NoiseSchedule,
}

/// Generate rehearsal samples for the given previous-task source labels.
/// The emitted pair is always (samples, source_labels): guidance never
/// relabels a rehearsal sample.
pub fn sample_rehearsal(
    setup: &RehearsalSetup,
    source_labels: &[usize],
    guidance: &GuidanceConfig,
    sampler: &SamplerConfig,
) -> Result<Tensor> {
    guidance.validate()?;
    let scale = guidance.scale;
    let through = guidance.backprop_through_denoiser;
    match guidance.variant {
        GuidanceVariant::None => sample(
            setup.prev_diffusion,
            source_labels,
            sampler,
            setup.schedule,
            None,
        ),
        GuidanceVariant::Guide => {
            let mut hook = |eps: &Tensor, x_t: &Tensor, t: usize, z0: &Tensor| {
                let targets =
                    select_target_class(setup.curr_classifier, z0, setup.current_task_classes)?;
                apply_delta(
                    eps, x_t, t, z0, setup, &targets, scale, 1.0, through, source_labels,
                    setup.curr_classifier,
                )
            };
            sample(
                setup.prev_diffusion,
                source_labels,
                sampler,
                setup.schedule,
                Some(&mut hook),
            )
        }
        GuidanceVariant::PrevPlus => {
            let mut hook = |eps: &Tensor, x_t: &Tensor, t: usize, z0: &Tensor| {
                apply_delta(
                    eps, x_t, t, z0, setup, source_labels, scale, 1.0, through, source_labels,
                    setup.prev_classifier,
                )
            };
            sample(
                setup.prev_diffusion,
                source_labels,
                sampler,
                setup.schedule,
                Some(&mut hook),
            )
        }
        GuidanceVariant::PrevMinus => {
            let mut hook = |eps: &Tensor, x_t: &Tensor, t: usize, z0: &Tensor| {
                apply_delta(
                    eps, x_t, t, z0, setup, source_labels, scale, -1.0, through, source_labels,
                    setup.prev_classifier,
                )
            };
            sample(
                setup.prev_diffusion,
                source_labels,
                sampler,
                setup.schedule,
                Some(&mut hook),
            )
        }
        GuidanceVariant::CurrMinus => {
            let mut hook = |eps: &Tensor, x_t: &Tensor, t: usize, z0: &Tensor| {
                apply_delta(
                    eps, x_t, t, z0, setup, source_labels, scale, -1.0, through, source_labels,
                    setup.curr_classifier,
                )
            };
            sample(
                setup.prev_diffusion,
                source_labels,
                sampler,
                setup.schedule,
                Some(&mut hook),
            )
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn apply_delta(
    eps: &Tensor,
    x_t: &Tensor,
    t: usize,
    z0: &Tensor,
    setup: &RehearsalSetup,
    targets: &[usize],
    scale: f64,
    sign: f64,
    through_denoiser: bool,
    source_labels: &[usize],
    classifier: &ClassifierModel,
) -> Result<Tensor> {
    let delta = if through_denoiser {
        guidance_delta_through_model(
            x_t,
            t,
            setup.prev_diffusion,
            Some(source_labels),
            classifier,
            targets,
            scale,
            sign,
            setup.schedule,
        )?
    } else {
        guidance_delta(t, z0, classifier, targets, scale, sign, setup.schedule)?
    };
    eps.add(&delta)
}

/// Unconditional sampling guided simultaneously toward c1 and c2:
/// ε̂ = ε + s1·∇ℓ(·,c1) + s2·∇ℓ(·,c2), gradients taken through the denoiser.
pub fn dual_guided_sample(
    uncond_diffusion: &DenoiserModel,
    classifier: &ClassifierModel,
    config: &DualGuidanceConfig,
    num: usize,
    sampler: &SamplerConfig,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    config.validate()?;
    let mut hook = |eps: &Tensor, x_t: &Tensor, t: usize, z0: &Tensor| {
        let d1 = guidance_delta_through_model(
            x_t,
            t,
            uncond_diffusion,
            None,
            classifier,
            &vec![config.c1; z0.rows()],
            config.s1,
            1.0,
            schedule,
        )?;
        let d2 = guidance_delta_through_model(
            x_t,
            t,
            uncond_diffusion,
            None,
            classifier,
            &vec![config.c2; z0.rows()],
            config.s2,
            1.0,
            schedule,
        )?;
        let both = d1.add(&d2)?;
        eps.add(&both)
    };
    sample_unconditional(uncond_diffusion, num, sampler, schedule, Some(&mut hook))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{ddim_step, predict_z0, randn};
    use crate::rng;

    fn setup_models(seed: u64) -> (DenoiserModel, ClassifierModel, NoiseSchedule) {
        let mut r = rng::from_seed(seed);
        let den = DenoiserModel::new(2, 4, &[16], 8, 4, &mut r);
        let clf = ClassifierModel::new(2, 4, &[16], &mut r);
        (den, clf, NoiseSchedule::desk())
    }

    #[test]
    fn zero_scale_returns_eps_unchanged() {
        let (_, clf, sched) = setup_models(1);
        let mut r = rng::from_seed(2);
        let eps = randn(3, 2, &mut r);
        let x_t = randn(3, 2, &mut r);
        let z0 = randn(3, 2, &mut r);
        let out = guide_epsilon(&eps, &x_t, 50, &z0, &clf, &[1, 2, 0], 0.0, 1.0, &sched).unwrap();
        assert_eq!(out.values(), eps.values());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // FD oracle on l(f(z0(x_t)), y) w.r.t. x_t with the ε estimate fixed:
        // z0 = (x_t − √(1−ᾱ)·ε)/√ᾱ.
        let (_, clf, sched) = setup_models(3);
        let mut r = rng::from_seed(4);
        let x_t = randn(1, 2, &mut r);
        let eps = randn(1, 2, &mut r);
        let t = 37;
        let y = 2usize;

        let loss_at = |xv: &Tensor| -> f64 {
            let z0 = predict_z0(xv, t, &eps, &sched).unwrap();
            let mut g = Graph::new();
            let zv = g.constant(z0);
            let logits = clf.mlp.forward_frozen(&mut g, zv).unwrap();
            let l = g.cross_entropy(logits, &[y]).unwrap();
            g.value(l)[0]
        };

        let z0 = predict_z0(&x_t, t, &eps, &sched).unwrap();
        let analytic = xt_loss_gradient(t, &z0, &clf, &[y], &sched).unwrap();

        let h = 1e-5;
        for i in 0..2 {
            let mut plus = x_t.clone();
            plus.values_mut()[i] += h;
            let mut minus = x_t.clone();
            minus.values_mut()[i] -= h;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            let got = analytic.values()[i];
            let rel = (got - fd).abs() / fd.abs().max(1e-8);
            assert!(rel < 1e-4, "coord {i}: analytic {got}, fd {fd}");
        }
    }

    #[test]
    fn small_positive_scale_descends_loss_after_step() {
        // Fixed linear classifier; sign=+1 must strictly decrease
        // l(f(z0(x_{t-1})), target) vs the unguided step.
        let mut r = rng::from_seed(5);
        let mut clf = ClassifierModel::new(2, 2, &[], &mut r);
        clf.mlp.layers[0]
            .weight
            .tensor
            .values_mut()
            .copy_from_slice(&[1.5, -1.5, -0.5, 0.5]);
        let sched = NoiseSchedule::desk();
        let (t, t_prev) = (120, 80);
        let x_t = randn(1, 2, &mut r);
        let eps = randn(1, 2, &mut r);
        let eps_next = randn(1, 2, &mut r);
        let target = 0usize;

        let loss_of = |x_prev: &Tensor| -> f64 {
            let z0 = predict_z0(x_prev, t_prev, &eps_next, &sched).unwrap();
            let mut g = Graph::new();
            let zv = g.constant(z0);
            let logits = clf.mlp.forward_frozen(&mut g, zv).unwrap();
            let l = g.cross_entropy(logits, &[target]).unwrap();
            g.value(l)[0]
        };

        let z0 = predict_z0(&x_t, t, &eps, &sched).unwrap();
        let unguided = ddim_step(&x_t, t, t_prev, &eps, &sched).unwrap();
        let eps_hat =
            guide_epsilon(&eps, &x_t, t, &z0, &clf, &[target], 0.01, 1.0, &sched).unwrap();
        let guided = ddim_step(&x_t, t, t_prev, &eps_hat, &sched).unwrap();
        assert!(
            loss_of(&guided) < loss_of(&unguided),
            "guided {} vs unguided {}",
            loss_of(&guided),
            loss_of(&unguided)
        );
    }

    #[test]
    fn delta_is_exactly_linear_in_scale() {
        let (_, clf, sched) = setup_models(6);
        let mut r = rng::from_seed(7);
        let z0 = randn(4, 2, &mut r);
        let targets = [0, 1, 2, 3];
        let base = guidance_delta(55, &z0, &clf, &targets, 1.0, 1.0, &sched).unwrap();
        for s in [0.0, 0.2, 0.5, 2.0, 10.0] {
            let d = guidance_delta(55, &z0, &clf, &targets, s, 1.0, &sched).unwrap();
            for (a, &b) in d.values().iter().zip(base.values()) {
                assert_eq!(a.to_bits(), (s * b).to_bits());
            }
        }
    }

    #[test]
    fn rehearsal_none_equals_plain_sample_bitwise() {
        let (den, clf, sched) = setup_models(8);
        let setup = RehearsalSetup {
            prev_diffusion: &den,
            prev_classifier: &clf,
            curr_classifier: &clf,
            current_task_classes: &[2, 3],
            schedule: &sched,
        };
        let cfg = SamplerConfig::new(10, 77);
        let labels = [0usize, 1, 0];
        let a = sample_rehearsal(&setup, &labels, &GuidanceConfig::none(), &cfg).unwrap();
        let b = sample(&den, &labels, &cfg, &sched, None).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn zero_scale_guide_matches_unguided_sample_bitwise() {
        let (den, clf, sched) = setup_models(9);
        let setup = RehearsalSetup {
            prev_diffusion: &den,
            prev_classifier: &clf,
            curr_classifier: &clf,
            current_task_classes: &[2, 3],
            schedule: &sched,
        };
        let cfg = SamplerConfig::new(10, 78);
        let labels = [1usize, 0];
        let guided = sample_rehearsal(
            &setup,
            &labels,
            &GuidanceConfig::new(GuidanceVariant::Guide, 0.0),
            &cfg,
        )
        .unwrap();
        let plain = sample(&den, &labels, &cfg, &sched, None).unwrap();
        for (x, y) in guided.values().iter().zip(plain.values()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn variants_stay_finite_across_scale_range() {
        let (den, clf, sched) = setup_models(10);
        let setup = RehearsalSetup {
            prev_diffusion: &den,
            prev_classifier: &clf,
            curr_classifier: &clf,
            current_task_classes: &[2, 3],
            schedule: &sched,
        };
        let cfg = SamplerConfig::new(8, 79);
        let labels = [0usize, 1];
        for variant in [
            GuidanceVariant::Guide,
            GuidanceVariant::PrevPlus,
            GuidanceVariant::PrevMinus,
            GuidanceVariant::CurrMinus,
        ] {
            for scale in [0.0, 0.3, 1.0] {
                let out = sample_rehearsal(
                    &setup,
                    &labels,
                    &GuidanceConfig::new(variant, scale),
                    &cfg,
                )
                .unwrap();
                assert_eq!(out.shape(), &[2, 2]);
                assert!(out.all_finite(), "{variant:?} at scale {scale}");
            }
        }
    }

    #[test]
    fn stopped_gradient_path_runs_and_stays_finite() {
        let (den, clf, sched) = setup_models(11);
        let setup = RehearsalSetup {
            prev_diffusion: &den,
            prev_classifier: &clf,
            curr_classifier: &clf,
            current_task_classes: &[2, 3],
            schedule: &sched,
        };
        let cfg = SamplerConfig::new(6, 80);
        let mut gcfg = GuidanceConfig::new(GuidanceVariant::Guide, 0.3);
        gcfg.backprop_through_denoiser = false;
        let out = sample_rehearsal(&setup, &[0, 1], &gcfg, &cfg).unwrap();
        assert!(out.all_finite());
    }

    #[test]
    fn through_model_gradient_matches_finite_differences() {
        // FD oracle over the full composition: perturb x_t, rerun the frozen
        // denoiser, rebuild z0, evaluate the classifier loss.
        let (den, clf, sched) = setup_models(21);
        let mut r = rng::from_seed(22);
        let x_t = randn(1, 2, &mut r);
        let t = 120;
        let y = 1usize;
        let labels = [0usize];

        let loss_at = |xv: &Tensor| -> f64 {
            let eps = den.infer_eps(xv, t, Some(&labels)).unwrap();
            let z0 = predict_z0(xv, t, &eps, &sched).unwrap();
            let mut g = Graph::new();
            let zv = g.constant(z0);
            let logits = clf.mlp.forward_frozen(&mut g, zv).unwrap();
            let l = g.cross_entropy(logits, &[y]).unwrap();
            g.value(l)[0]
        };

        let analytic = guidance_delta_through_model(
            &x_t, t, &den, Some(&labels), &clf, &[y], 1.0, 1.0, &sched,
        )
        .unwrap();
        let h = 1e-5;
        for i in 0..2 {
            let mut plus = x_t.clone();
            plus.values_mut()[i] += h;
            let mut minus = x_t.clone();
            minus.values_mut()[i] -= h;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            let got = analytic.values()[i];
            let denom = fd.abs().max(got.abs()).max(1e-8);
            assert!(
                (got - fd).abs() / denom < 1e-4,
                "coord {i}: analytic {got}, fd {fd}"
            );
        }
    }

    #[test]
    fn through_model_delta_is_exactly_linear_in_scale() {
        let (den, clf, sched) = setup_models(23);
        let mut r = rng::from_seed(24);
        let x_t = randn(3, 2, &mut r);
        let labels = [0usize, 1, 0];
        let targets = [2usize, 3, 2];
        let base = guidance_delta_through_model(
            &x_t, 90, &den, Some(&labels), &clf, &targets, 1.0, 1.0, &sched,
        )
        .unwrap();
        for s in [0.0, 0.2, 0.5, 2.0, 10.0] {
            let d = guidance_delta_through_model(
                &x_t, 90, &den, Some(&labels), &clf, &targets, s, 1.0, &sched,
            )
            .unwrap();
            for (a, &b) in d.values().iter().zip(base.values()) {
                assert_eq!(a.to_bits(), (s * b).to_bits());
            }
        }
    }

    #[test]
    fn dual_guidance_degenerate_cases() {
        let mut r = rng::from_seed(12);
        let den = DenoiserModel::new(2, 4, &[16], 8, 4, &mut r);
        let clf = ClassifierModel::new(2, 4, &[16], &mut r);
        let sched = NoiseSchedule::desk();
        let cfg = SamplerConfig::new(10, 81);

        // s1 = s2 = 0 reduces to unguided sampling.
        let dual0 = DualGuidanceConfig {
            c1: 0,
            c2: 2,
            s1: 0.0,
            s2: 0.0,
        };
        let a = dual_guided_sample(&den, &clf, &dual0, 3, &cfg, &sched).unwrap();
        let b = sample_unconditional(&den, 3, &cfg, &sched, None).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }

        // s2 = 0 reduces to single-class guidance toward c1.
        let dual1 = DualGuidanceConfig {
            c1: 0,
            c2: 2,
            s1: 0.4,
            s2: 0.0,
        };
        let a = dual_guided_sample(&den, &clf, &dual1, 3, &cfg, &sched).unwrap();
        let mut hook = |eps: &Tensor, x: &Tensor, t: usize, z0: &Tensor| {
            let d = guidance_delta_through_model(
                x,
                t,
                &den,
                None,
                &clf,
                &vec![0; z0.rows()],
                0.4,
                1.0,
                &sched,
            )?;
            eps.add(&d)
        };
        let b = sample_unconditional(&den, 3, &cfg, &sched, Some(&mut hook)).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn dual_guidance_rejects_equal_classes() {
        let cfg = DualGuidanceConfig {
            c1: 1,
            c2: 1,
            s1: 1.0,
            s2: 1.0,
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn out_of_range_target_is_contract_error() {
        let (_, clf, sched) = setup_models(13);
        let mut r = rng::from_seed(14);
        let z0 = randn(1, 2, &mut r);
        let err = guidance_delta(10, &z0, &clf, &[9], 1.0, 1.0, &sched).unwrap_err();
        assert!(err.to_string().contains("out of range"));
    }
}
