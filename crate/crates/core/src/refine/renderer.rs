use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{sigmoid, Reader};
use crate::raster::Image;

/// Feature channels per point: rgb, coverage, then free channels.
pub const FEATURES: usize = 8;
const HIDDEN: usize = 16;
const LAYERS: [(usize, usize); 3] = [(FEATURES, HIDDEN), (HIDDEN, HIDDEN), (HIDDEN, 3)];
const BASE_EPS: f64 = 1e-7;

/// Learnable image-space decoder from splatted features to rgb.
///
/// The first three feature channels are a base color and the fourth a coverage
/// value; uncovered pixels blend toward `background`. Three 3x3 convolutions
/// predict a residual in logit space:
/// `rgb = sigmoid(logit(base) + residual)`. The last layer starts at zero, so a
/// fresh renderer reproduces the splatted colors.
#[derive(Debug, Clone, PartialEq)]
pub struct DeferredRenderer {
    params: Vec<f64>,
    pub background: [f64; 3],
}

/// Intermediate buffers kept by [`DeferredRenderer::forward`] for the backward pass.
pub struct RendererTape {
    width: usize,
    height: usize,
    features: Vec<f64>,
    hidden1: Vec<f64>,
    hidden2: Vec<f64>,
    base: Vec<f64>,
    out: Vec<f64>,
}

fn layer_size(cin: usize, cout: usize) -> usize {
    9 * cin * cout + cout
}

fn layer_offsets() -> [usize; 4] {
    let mut o = [0; 4];
    for (i, &(cin, cout)) in LAYERS.iter().enumerate() {
        o[i + 1] = o[i] + layer_size(cin, cout);
    }
    o
}

/// Same-size 3x3 convolution with zero padding. `params` holds weights laid
/// out `[tap][cin][cout]` followed by `cout` biases.
fn conv3x3(input: &[f64], w: usize, h: usize, cin: usize, cout: usize, params: &[f64]) -> Vec<f64> {
    let (weights, bias) = params.split_at(9 * cin * cout);
    let mut out = vec![0.0; w * h * cout];
    out.par_chunks_mut(w * cout).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let o = &mut row[x * cout..(x + 1) * cout];
            o.copy_from_slice(bias);
            for ky in 0..3 {
                let Some(yy) = (y + ky).checked_sub(1).filter(|&v| v < h) else { continue };
                for kx in 0..3 {
                    let Some(xx) = (x + kx).checked_sub(1).filter(|&v| v < w) else { continue };
                    let inp = &input[(yy * w + xx) * cin..(yy * w + xx + 1) * cin];
                    let tap = &weights[(ky * 3 + kx) * cin * cout..(ky * 3 + kx + 1) * cin * cout];
                    for (ci, &v) in inp.iter().enumerate() {
                        if v == 0.0 {
                            continue;
                        }
                        for (oc, &wt) in o.iter_mut().zip(&tap[ci * cout..(ci + 1) * cout]) {
                            *oc += v * wt;
                        }
                    }
                }
            }
        }
    });
    out
}

/// Returns the input gradient and accumulates parameter gradients into `dparams`.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    input: &[f64],
    dout: &[f64],
    w: usize,
    h: usize,
    cin: usize,
    cout: usize,
    params: &[f64],
    dparams: &mut [f64],
) -> Vec<f64> {
    let weights = &params[..9 * cin * cout];
    let mut din = vec![0.0; w * h * cin];
    din.par_chunks_mut(w * cin).enumerate().for_each(|(yy, row)| {
        for xx in 0..w {
            let d = &mut row[xx * cin..(xx + 1) * cin];
            for ky in 0..3 {
                // output pixel y reads input yy through tap ky when y = yy + 1 - ky
                let Some(y) = (yy + 1).checked_sub(ky).filter(|&v| v < h) else { continue };
                for kx in 0..3 {
                    let Some(x) = (xx + 1).checked_sub(kx).filter(|&v| v < w) else { continue };
                    let g = &dout[(y * w + x) * cout..(y * w + x + 1) * cout];
                    let tap = &weights[(ky * 3 + kx) * cin * cout..(ky * 3 + kx + 1) * cin * cout];
                    for (ci, dc) in d.iter_mut().enumerate() {
                        let wrow = &tap[ci * cout..(ci + 1) * cout];
                        *dc += g.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
        }
    });
    let n = layer_size(cin, cout);
    let partials: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut acc = vec![0.0; n];
            for x in 0..w {
                let g = &dout[(y * w + x) * cout..(y * w + x + 1) * cout];
                if g.iter().all(|&v| v == 0.0) {
                    continue;
                }
                for (b, gv) in acc[9 * cin * cout..].iter_mut().zip(g) {
                    *b += gv;
                }
                for ky in 0..3 {
                    let Some(yy) = (y + ky).checked_sub(1).filter(|&v| v < h) else { continue };
                    for kx in 0..3 {
                        let Some(xx) = (x + kx).checked_sub(1).filter(|&v| v < w) else { continue };
                        let inp = &input[(yy * w + xx) * cin..(yy * w + xx + 1) * cin];
                        let tap = &mut acc[(ky * 3 + kx) * cin * cout..(ky * 3 + kx + 1) * cin * cout];
                        for (ci, &v) in inp.iter().enumerate() {
                            if v == 0.0 {
                                continue;
                            }
                            for (a, gv) in tap[ci * cout..(ci + 1) * cout].iter_mut().zip(g) {
                                *a += v * gv;
                            }
                        }
                    }
                }
            }
            acc
        })
        .collect();
    for p in &partials {
        for (d, v) in dparams.iter_mut().zip(p) {
            *d += v;
        }
    }
    din
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl DeferredRenderer {
    /// Hidden layers get He-normal weights from `seed`; the output layer is zero.
    pub fn new(seed: u64, background: [f64; 3]) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let off = layer_offsets();
        let mut params = vec![0.0; off[3]];
        for (l, &(cin, cout)) in LAYERS.iter().enumerate().take(2) {
            let normal = Normal::new(0.0, (2.0 / (9 * cin) as f64).sqrt()).unwrap();
            for p in &mut params[off[l]..off[l] + 9 * cin * cout] {
                *p = normal.sample(&mut rng);
            }
        }
        Self { params, background }
    }

    pub fn param_count() -> usize {
        layer_offsets()[3]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer(&self, l: usize) -> &[f64] {
        let off = layer_offsets();
        &self.params[off[l]..off[l + 1]]
    }

    pub fn forward(&self, features: &Image) -> Result<(Image, RendererTape)> {
        if features.channels() != FEATURES {
            return Err(Error::dimension("deferred renderer input channels", FEATURES, features.channels()));
        }
        let (w, h) = (features.width(), features.height());
        let f = features.data();
        let relu = |v: Vec<f64>| v.into_iter().map(|x| x.max(0.0)).collect::<Vec<_>>();
        let hidden1 = relu(conv3x3(f, w, h, FEATURES, HIDDEN, self.layer(0)));
        let hidden2 = relu(conv3x3(&hidden1, w, h, HIDDEN, HIDDEN, self.layer(1)));
        let residual = conv3x3(&hidden2, w, h, HIDDEN, 3, self.layer(2));
        let mut base = vec![0.0; w * h * 3];
        let mut out = vec![0.0; w * h * 3];
        for p in 0..w * h {
            let fp = &f[p * FEATURES..(p + 1) * FEATURES];
            for c in 0..3 {
                let b = fp[c] + (1.0 - fp[3]) * self.background[c];
                base[p * 3 + c] = b;
                let bc = b.clamp(BASE_EPS, 1.0 - BASE_EPS);
                out[p * 3 + c] = sigmoid(logit(bc) + residual[p * 3 + c]);
            }
        }
        let image = Image::from_vec(w, h, 3, out.clone())?;
        Ok((
            image,
            RendererTape {
                width: w,
                height: h,
                features: f.to_vec(),
                hidden1,
                hidden2,
                base,
                out,
            },
        ))
    }

    /// Gradients of `<d_out, rgb>` with respect to the feature image and the
    /// renderer parameters.
    pub fn backward(&self, tape: &RendererTape, d_out: &Image) -> Result<(Image, Vec<f64>)> {
        let (w, h) = (tape.width, tape.height);
        d_out.check_dims(w, h, "deferred renderer upstream")?;
        if d_out.channels() != 3 {
            return Err(Error::dimension("deferred renderer upstream channels", 3, d_out.channels()));
        }
        let off = layer_offsets();
        let mut dparams = vec![0.0; off[3]];
        let mut dres = vec![0.0; w * h * 3];
        let mut dfeat = vec![0.0; w * h * FEATURES];
        for p in 0..w * h {
            for c in 0..3 {
                let i = p * 3 + c;
                let o = tape.out[i];
                let dz = d_out.data()[i] * o * (1.0 - o);
                dres[i] = dz;
                let b = tape.base[i];
                if b > BASE_EPS && b < 1.0 - BASE_EPS {
                    let db = dz / (b * (1.0 - b));
                    dfeat[p * FEATURES + c] += db;
                    dfeat[p * FEATURES + 3] -= db * self.background[c];
                }
            }
        }
        let (d0, rest) = dparams.split_at_mut(off[1]);
        let (d1, d2) = rest.split_at_mut(off[2] - off[1]);
        let mut dh2 = conv3x3_backward(&tape.hidden2, &dres, w, h, HIDDEN, 3, self.layer(2), d2);
        for (g, &a) in dh2.iter_mut().zip(&tape.hidden2) {
            if a <= 0.0 {
                *g = 0.0;
            }
        }
        let mut dh1 = conv3x3_backward(&tape.hidden1, &dh2, w, h, HIDDEN, HIDDEN, self.layer(1), d1);
        for (g, &a) in dh1.iter_mut().zip(&tape.hidden1) {
            if a <= 0.0 {
                *g = 0.0;
            }
        }
        let df = conv3x3_backward(&tape.features, &dh1, w, h, FEATURES, HIDDEN, self.layer(0), d0);
        for (a, b) in dfeat.iter_mut().zip(df) {
            *a += b;
        }
        Ok((Image::from_vec(w, h, FEATURES, dfeat)?, dparams))
    }

    /// Little-endian payload: u32 feature count, u32 hidden width, 3 x f32
    /// background, u32 parameter count, f32 parameters.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 4 * self.params.len());
        out.extend_from_slice(&(FEATURES as u32).to_le_bytes());
        out.extend_from_slice(&(HIDDEN as u32).to_le_bytes());
        for v in self.background {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for &p in &self.params {
            out.extend_from_slice(&(p as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let (k, hidden) = (r.u32()? as usize, r.u32()? as usize);
        if k != FEATURES || hidden != HIDDEN {
            return Err(Error::format(
                "renderer",
                format!("expected {FEATURES} features and {HIDDEN} hidden channels, got {k} and {hidden}"),
            ));
        }
        let bg = r.f32s(3)?;
        let n = r.u32()? as usize;
        if n != Self::param_count() {
            return Err(Error::format("renderer", format!("expected {} parameters, got {n}", Self::param_count())));
        }
        let params = r.f32s(n)?;
        if r.pos != bytes.len() {
            return Err(Error::format("renderer", "trailing bytes"));
        }
        Ok(Self {
            params,
            background: [bg[0], bg[1], bg[2]],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_features(w: usize, h: usize, seed: u64) -> Image {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h * FEATURES)
            .map(|i| {
                if i % FEATURES == 3 {
                    rng.random_range(0.3..1.0)
                } else if i % FEATURES < 3 {
                    rng.random_range(0.1..0.6)
                } else {
                    rng.random_range(-1.0..1.0)
                }
            })
            .collect();
        Image::from_vec(w, h, FEATURES, data).unwrap()
    }

    fn perturbed(seed: u64) -> DeferredRenderer {
        use rand::Rng;
        let mut r = DeferredRenderer::new(seed, [1.0, 0.9, 0.8]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        for p in r.params_mut() {
            *p += rng.random_range(-0.1..0.1);
        }
        r
    }

    #[test]
    fn parameter_budget() {
        let n = DeferredRenderer::param_count();
        assert_eq!(n, 9 * 8 * 16 + 16 + 9 * 16 * 16 + 16 + 9 * 16 * 3 + 3);
        assert!(n <= 10_000);
    }

    #[test]
    fn fresh_renderer_passes_base_through() {
        let bg = [0.2, 0.3, 0.4];
        let r = DeferredRenderer::new(3, bg);
        let f = random_features(6, 5, 1);
        let (img, _) = r.forward(&f).unwrap();
        for p in 0..30 {
            let fp = &f.data()[p * FEATURES..(p + 1) * FEATURES];
            for c in 0..3 {
                let want = fp[c] + (1.0 - fp[3]) * bg[c];
                assert!((img.data()[p * 3 + c] - want).abs() < 1e-9);
            }
        }
        let (empty, _) = r.forward(&Image::new(4, 4, FEATURES)).unwrap();
        for px in empty.data().chunks(3) {
            assert!(px.iter().zip(bg).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let r = perturbed(5);
        let f = random_features(5, 4, 2);
        let up = Image::from_vec(5, 4, 3, (0..60).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect()).unwrap();
        let loss = |r: &DeferredRenderer, f: &Image| {
            let (o, _) = r.forward(f).unwrap();
            o.data().iter().zip(up.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, tape) = r.forward(&f).unwrap();
        let (df, dp) = r.backward(&tape, &up).unwrap();
        let h = 1e-6;
        let check = |analytic: f64, numeric: f64, what: &str| {
            let scale = analytic.abs().max(numeric.abs()).max(1e-3);
            assert!((analytic - numeric).abs() / scale < 1e-2, "{what}: {analytic} vs {numeric}");
        };
        for i in (0..f.data().len()).step_by(7) {
            let mut a = f.clone();
            a.data_mut()[i] += h;
            let mut b = f.clone();
            b.data_mut()[i] -= h;
            check(df.data()[i], (loss(&r, &a) - loss(&r, &b)) / (2.0 * h), "feature");
        }
        for i in (0..DeferredRenderer::param_count()).step_by(13) {
            let mut a = r.clone();
            a.params_mut()[i] += h;
            let mut b = r.clone();
            b.params_mut()[i] -= h;
            check(dp[i], (loss(&a, &f) - loss(&b, &f)) / (2.0 * h), "param");
        }
    }

    #[test]
    fn bytes_round_trip() {
        let r = perturbed(9);
        let bytes = r.to_bytes();
        let back = DeferredRenderer::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert!(back.params().iter().zip(r.params()).all(|(a, b)| (a - b).abs() < 1e-6));
        assert!(DeferredRenderer::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
