use super::renderer::{DeferredRenderer, FEATURES};
use super::splat::{splat_render, splat_render_backward, FeatureCloud, SplatPlan};
use crate::error::{Error, Result};
use crate::field::CameraPose;
use crate::raster::Image;

/// A camera with the image the splat render should match.
#[derive(Debug, Clone)]
pub struct RefineTarget {
    pub camera: CameraPose,
    pub image: Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineConfig {
    pub steps: usize,
    pub lr_features: f64,
    pub lr_renderer: f64,
    /// Gaussian footprint in pixels.
    pub rho: f64,
    /// Full objective is evaluated every this many steps.
    pub eval_every: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            lr_features: 0.01,
            lr_renderer: 1e-3,
            rho: 1.0,
            eval_every: 100,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Error::InvalidInput(format!("refine {what} must be positive, got {v}"));
        if !(self.lr_features >= 0.0) {
            return Err(bad("feature learning rate", self.lr_features));
        }
        if !(self.lr_renderer >= 0.0) {
            return Err(bad("renderer learning rate", self.lr_renderer));
        }
        if !(self.rho > 0.0) {
            return Err(bad("footprint", self.rho));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidInput("refine eval interval must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RefineLog {
    /// Reference plus one novel-view loss per step.
    pub step_losses: Vec<f64>,
    /// `(step, reference loss + sum of novel-view losses)` at each evaluation.
    pub objective: Vec<(usize, f64)>,
}

/// Mean absolute error and its gradient with respect to `rendered`.
pub fn l1_loss(rendered: &Image, target: &Image) -> Result<(f64, Image)> {
    rendered.check_same_shape(target, "refine l1 target")?;
    let n = rendered.data().len().max(1) as f64;
    let loss = rendered.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let grad = rendered.zip_map(target, |a, b| {
        if a > b {
            1.0 / n
        } else if a < b {
            -1.0 / n
        } else {
            0.0
        }
    })?;
    Ok((loss, grad))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], frozen: impl Fn(usize) -> bool) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (i, (p, &g)) in params.iter_mut().zip(grad).enumerate() {
            if frozen(i) {
                continue;
            }
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g;
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g * g;
            *p -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

fn view_loss(cloud: &FeatureCloud, plan: &SplatPlan, renderer: &DeferredRenderer, target: &Image) -> Result<f64> {
    Ok(l1_loss(&splat_render(cloud, plan, renderer)?.rgb, target)?.0)
}

/// Jointly fits per-point features and renderer parameters with Adam. Each
/// step uses the reference view plus one novel view in round-robin order.
/// Color channels of reference-sourced points never change.
pub fn optimize_refine(
    mut cloud: FeatureCloud,
    mut renderer: DeferredRenderer,
    reference: &RefineTarget,
    views: &[RefineTarget],
    config: &RefineConfig,
) -> Result<(FeatureCloud, DeferredRenderer, RefineLog)> {
    config.validate()?;
    let plan_for = |t: &RefineTarget| {
        t.image.check_dims(t.camera.width, t.camera.height, "refine target")?;
        SplatPlan::build(&cloud.cloud, &t.camera, config.rho)
    };
    let ref_plan = plan_for(reference)?;
    let plans: Vec<SplatPlan> = views.iter().map(plan_for).collect::<Result<_>>()?;
    let frozen: Vec<bool> = (0..cloud.len()).map(|i| cloud.is_frozen(i)).collect();
    let mut feat_opt = Adam::new(cloud.features().len(), config.lr_features);
    let mut rend_opt = Adam::new(DeferredRenderer::param_count(), config.lr_renderer);
    let mut log = RefineLog::default();

    let objective = |cloud: &FeatureCloud, renderer: &DeferredRenderer| -> Result<f64> {
        let mut total = view_loss(cloud, &ref_plan, renderer, &reference.image)?;
        for (plan, t) in plans.iter().zip(views) {
            total += view_loss(cloud, plan, renderer, &t.image)?;
        }
        Ok(total)
    };

    for step in 0..config.steps {
        if step % config.eval_every == 0 {
            log.objective.push((step, objective(&cloud, &renderer)?));
        }
        let mut batch = vec![(&ref_plan, &reference.image)];
        if !views.is_empty() {
            let k = step % views.len();
            batch.push((&plans[k], &views[k].image));
        }
        let mut d_feat = vec![0.0; cloud.features().len()];
        let mut d_params = vec![0.0; DeferredRenderer::param_count()];
        let mut loss = 0.0;
        for (plan, target) in batch {
            let render = splat_render(&cloud, plan, &renderer)?;
            let (l, grad) = l1_loss(&render.rgb, target)?;
            loss += l;
            let (df, dp) = splat_render_backward(&cloud, plan, &renderer, &render, &grad)?;
            for (a, b) in d_feat.iter_mut().zip(df) {
                *a += b;
            }
            for (a, b) in d_params.iter_mut().zip(dp) {
                *a += b;
            }
        }
        log.step_losses.push(loss);
        feat_opt.step(cloud.features_mut(), &d_feat, |i| frozen[i / FEATURES] && i % FEATURES < 3);
        rend_opt.step(renderer.params_mut(), &d_params, |_| false);
        if (step + 1) % 100 == 0 {
            log::info!("refine step {}: loss {loss:.5}", step + 1);
        }
    }
    if config.steps > 0 {
        log.objective.push((config.steps, objective(&cloud, &renderer)?));
    }
    Ok((cloud, renderer, log))
}
