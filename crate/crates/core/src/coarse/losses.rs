use crate::error::{Error, Result};
use crate::field::RenderedView;
use crate::raster::Image;

/// Reference-view supervision: image, binary foreground mask, monocular depth
/// and normal map, all at the reference camera's resolution.
#[derive(Debug, Clone)]
pub struct ReferenceBundle {
    pub image: Image,
    pub mask: Image,
    pub depth: Image,
    pub normal: Image,
}

impl ReferenceBundle {
    pub fn new(image: Image, mask: Image, depth: Image, normal: Image) -> Result<Self> {
        let (w, h) = (image.width(), image.height());
        if image.channels() != 3 {
            return Err(Error::dimension("reference image channels", 3, image.channels()));
        }
        for (name, img, ch) in [("mask", &mask, 1), ("depth", &depth, 1), ("normal", &normal, 3)] {
            img.check_dims(w, h, "reference bundle")?;
            if img.channels() != ch {
                return Err(Error::InvalidInput(format!(
                    "reference {name} must have {ch} channel(s), got {}",
                    img.channels()
                )));
            }
        }
        if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::InvalidInput("reference mask must be binary".into()));
        }
        for (m, d) in mask.data().iter().zip(depth.data()) {
            if *m == 1.0 && !(d.is_finite() && *d > 0.0) {
                return Err(Error::InvalidInput(
                    "reference depth must be finite and positive inside the mask".into(),
                ));
            }
        }
        Ok(Self {
            image,
            mask,
            depth,
            normal,
        })
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn mask_pixels(&self) -> usize {
        self.mask.data().iter().filter(|&&m| m == 1.0).count()
    }
}

/// Masked L1 between the reference image and the render, averaged over every
/// pixel and channel. Returns the loss and its gradient w.r.t. `rendered.rgb`.
pub fn reference_loss(rendered: &RenderedView, bundle: &ReferenceBundle) -> Result<(f64, Image)> {
    let (w, h) = (bundle.width(), bundle.height());
    rendered.rgb.check_same_shape(&bundle.image, "reference_loss")?;
    let n = (w * h * 3) as f64;
    let mut grad = Image::new(w, h, 3);
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            let m = bundle.mask.get(x, y, 0);
            for c in 0..3 {
                let diff = rendered.rgb.get(x, y, c) * m - bundle.image.get(x, y, c) * m;
                sum += diff.abs();
                let s = if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                grad.set(x, y, c, s * m / n);
            }
        }
    }
    Ok((sum / n, grad))
}

struct MaskedMoments {
    idx: Vec<usize>,
    a_centered: Vec<f64>,
    b_centered: Vec<f64>,
    saa: f64,
    sbb: f64,
    sab: f64,
}

fn masked_moments(d_ref: &Image, d: &Image, mask: &Image) -> Result<MaskedMoments> {
    d_ref.check_same_shape(d, "depth_pearson_loss")?;
    d_ref.check_same_shape(mask, "depth_pearson_loss mask")?;
    let idx: Vec<usize> = mask
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m > 0.5)
        .map(|(i, _)| i)
        .collect();
    if idx.len() < 2 {
        return Err(Error::DegenerateVariance(format!(
            "need at least 2 masked pixels, found {}",
            idx.len()
        )));
    }
    let n = idx.len() as f64;
    let (a, b) = (d_ref.data(), d.data());
    if idx.iter().any(|&i| !(a[i].is_finite() && b[i].is_finite())) {
        return Err(Error::InvalidInput("depth must be finite on the mask".into()));
    }
    let ma = idx.iter().map(|&i| a[i]).sum::<f64>() / n;
    let mb = idx.iter().map(|&i| b[i]).sum::<f64>() / n;
    let a_centered: Vec<f64> = idx.iter().map(|&i| a[i] - ma).collect();
    let b_centered: Vec<f64> = idx.iter().map(|&i| b[i] - mb).collect();
    let saa: f64 = a_centered.iter().map(|v| v * v).sum();
    let sbb: f64 = b_centered.iter().map(|v| v * v).sum();
    let sab: f64 = a_centered.iter().zip(&b_centered).map(|(x, y)| x * y).sum();
    for (name, s) in [("reference", saa), ("rendered", sbb)] {
        if (s / n).sqrt() < 1e-12 {
            return Err(Error::DegenerateVariance(format!(
                "{name} depth is constant on the mask"
            )));
        }
    }
    Ok(MaskedMoments {
        idx,
        a_centered,
        b_centered,
        saa,
        sbb,
        sab,
    })
}

/// Negative Pearson correlation between reference and rendered depth over the
/// masked pixels. Invariant to positive affine rescaling of either depth.
pub fn depth_pearson_loss(d_ref: &Image, d: &Image, mask: &Image) -> Result<f64> {
    let m = masked_moments(d_ref, d, mask)?;
    Ok(-m.sab / (m.saa * m.sbb).sqrt())
}

/// [`depth_pearson_loss`] together with its gradient w.r.t. the rendered depth.
pub fn depth_pearson_loss_grad(d_ref: &Image, d: &Image, mask: &Image) -> Result<(f64, Image)> {
    let m = masked_moments(d_ref, d, mask)?;
    let denom = (m.saa * m.sbb).sqrt();
    let r = m.sab / denom;
    let mut grad = Image::new(d.width(), d.height(), 1);
    // centering terms drop out because the centered values sum to zero
    for ((&i, a), b) in m.idx.iter().zip(&m.a_centered).zip(&m.b_centered) {
        grad.data_mut()[i] = -(a / denom - r * b / m.sbb);
    }
    Ok((-r, grad))
}
