use std::str::FromStr;

use super::provider::{GuidanceProvider, IdentityEncoder, LatentEncoder};
use super::schedule::TimestepSchedule;
use crate::error::{Error, Result};
use crate::field::{CameraPose, RenderedView};
use crate::raster::Image;

/// What the denoiser output is regressed against in the fine-tuning loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TargetKind {
    /// Clean image (`x`, `x_o`).
    #[default]
    Data,
    /// Injected noise (`eps`, `eps'`).
    Noise,
}

impl FromStr for TargetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "data" => Ok(TargetKind::Data),
            "noise" => Ok(TargetKind::Noise),
            other => Err(Error::InvalidInput(format!("unknown target kind `{other}`"))),
        }
    }
}

/// One term of the fine-tuning objective: a clean image, its prompt, a timestep
/// and the noise drawn for it.
#[derive(Debug, Clone, Copy)]
pub struct DenoiseTerm<'a> {
    pub image: &'a Image,
    pub prompt: &'a str,
    pub t: usize,
    pub noise: &'a Image,
}

fn denoise_term(
    denoiser: &dyn GuidanceProvider,
    term: &DenoiseTerm<'_>,
    schedule: &TimestepSchedule,
    target_kind: TargetKind,
) -> Result<f64> {
    schedule.check(term.t)?;
    term.image.check_same_shape(term.noise, "dreambooth_loss noise")?;
    let (a, s) = (schedule.alpha(term.t), schedule.sigma(term.t));
    let noisy = term.image.zip_map(term.noise, |x, e| a * x + s * e)?;
    let pred = denoiser.predict_noise(&noisy, term.prompt, term.t, None)?;
    pred.check_same_shape(term.image, "dreambooth_loss prediction")?;
    let target = match target_kind {
        TargetKind::Data => term.image,
        TargetKind::Noise => term.noise,
    };
    let n = pred.data().len().max(1) as f64;
    let sq: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, q)| (p - q) * (p - q))
        .sum();
    Ok(schedule.weight(term.t) * sq / n)
}

/// Subject fine-tuning loss with prior preservation:
/// `w_t |eps(a_t x + s_t e, c) - tgt|^2 + lambda w_t' |eps(a_t' x_o + s_t' e', c_o) - tgt_o|^2`,
/// each squared norm averaged over entries.
pub fn dreambooth_loss(
    denoiser: &dyn GuidanceProvider,
    subject: DenoiseTerm<'_>,
    prior: DenoiseTerm<'_>,
    lambda: f64,
    schedule: &TimestepSchedule,
    target_kind: TargetKind,
) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "prior-preservation weight must be >= 0, got {lambda}"
        )));
    }
    let first = denoise_term(denoiser, &subject, schedule, target_kind)?;
    if lambda == 0.0 {
        return Ok(first);
    }
    Ok(first + lambda * denoise_term(denoiser, &prior, schedule, target_kind)?)
}

fn noisy_latent(
    encoder: &dyn LatentEncoder,
    image: &Image,
    t: usize,
    noise: &Image,
    schedule: &TimestepSchedule,
) -> Result<Image> {
    schedule.check(t)?;
    let latent = encoder.encode(image)?;
    latent.check_same_shape(noise, "sds noise")?;
    let (a, s) = (schedule.alpha(t), schedule.sigma(t));
    latent.zip_map(noise, |z, e| a * z + s * e)
}

fn residual_grad(
    encoder: &dyn LatentEncoder,
    image: &Image,
    predicted: &Image,
    noise: &Image,
    weight: f64,
) -> Result<Image> {
    predicted.check_same_shape(noise, "sds prediction")?;
    let latent_grad = predicted.zip_map(noise, |p, e| weight * (p - e))?;
    encoder.pullback(image, &latent_grad)
}

/// Text-conditioned score-distillation gradient on the rendered rgb image:
/// `w(t) (eps_phi(z_t; prompt, t) - eps) dz/dI`.
pub fn sds_2d_grad(
    provider: &dyn GuidanceProvider,
    rendered: &RenderedView,
    prompt: &str,
    camera: Option<&CameraPose>,
    t: usize,
    noise: &Image,
    schedule: &TimestepSchedule,
) -> Result<Image> {
    sds_2d_grad_encoded(&IdentityEncoder, provider, rendered, prompt, camera, t, noise, schedule)
}

#[allow(clippy::too_many_arguments)]
pub fn sds_2d_grad_encoded(
    encoder: &dyn LatentEncoder,
    provider: &dyn GuidanceProvider,
    rendered: &RenderedView,
    prompt: &str,
    camera: Option<&CameraPose>,
    t: usize,
    noise: &Image,
    schedule: &TimestepSchedule,
) -> Result<Image> {
    let z = noisy_latent(encoder, &rendered.rgb, t, noise, schedule)?;
    let pred = provider.predict_noise(&z, prompt, t, camera)?;
    residual_grad(encoder, &rendered.rgb, &pred, noise, schedule.weight(t))
}

/// Reference-image and pose conditioned variant of [`sds_2d_grad`].
pub fn sds_3d_grad(
    provider: &dyn GuidanceProvider,
    rendered: &RenderedView,
    reference: &Image,
    camera: &CameraPose,
    t: usize,
    noise: &Image,
    schedule: &TimestepSchedule,
) -> Result<Image> {
    let encoder = IdentityEncoder;
    let z = noisy_latent(&encoder, &rendered.rgb, t, noise, schedule)?;
    let pred = provider.predict_noise_3d(&z, reference, camera, t)?;
    residual_grad(&encoder, &rendered.rgb, &pred, noise, schedule.weight(t))
}

pub fn combine_guidance(g2d: &Image, g3d: &Image, lambda_2d: f64, lambda_3d: f64) -> Result<Image> {
    g2d.zip_map(g3d, |a, b| lambda_2d * a + lambda_3d * b)
}
