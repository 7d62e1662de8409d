//! The γ-weighted SSIM loss and its exact gradient w.r.t. the fused image.
//!
//! `loss = 1 - 1/(C·|W|) Σ_c Σ_w [γ_w ssim(under_c, fused_c; w) + (1-γ_w) ssim(over_c, fused_c; w)]`
//!
//! γ depends only on the inputs, so it carries no gradient.

use crate::error::{ensure_shape, Error, Result};
use crate::gamma::{gamma_map, AttributeKind, GammaMap, DEFAULT_GAMMA_FLOOR};
use crate::image::{ExposurePair, Image};
use crate::metrics::{mean, SsimWindowSpec, WindowGrid};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub gamma_kind: AttributeKind,
    pub window: SsimWindowSpec,
    pub sigma_e: f64,
    pub gamma_floor: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma_kind: AttributeKind::VarGrad,
            window: SsimWindowSpec::loss_default(),
            sigma_e: 0.2,
            gamma_floor: DEFAULT_GAMMA_FLOOR,
        }
    }
}

impl LossConfig {
    pub fn with_kind(gamma_kind: AttributeKind) -> Self {
        LossConfig {
            gamma_kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        if self.sigma_e <= 0.0 || self.gamma_floor <= 0.0 {
            return Err(Error::InvalidArgument("sigma_e and gamma_floor must be positive".into()));
        }
        Ok(())
    }

    /// γ map of a pair on this configuration's window grid.
    pub fn gamma(&self, pair: &ExposurePair) -> Result<GammaMap> {
        gamma_map(pair, self.gamma_kind, &self.window, self.sigma_e, self.gamma_floor)
    }
}

/// Loss value and `d loss / d fused`, laid out like the fused image.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// SSIM of windows `x` (reference) and `y`, plus `dSSIM/dy` added into
/// `grad` scaled by `weight`.
fn ssim_with_grad(x: &[f64], y: &[f64], spec: &SsimWindowSpec, weight: f64, grad: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let (mu_x, mu_y) = (mean(x), mean(y));
    let (mut var_x, mut var_y, mut cov) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        var_x += (a - mu_x) * (a - mu_x);
        var_y += (b - mu_y) * (b - mu_y);
        cov += (a - mu_x) * (b - mu_y);
    }
    let (var_x, var_y, cov) = (var_x / n, var_y / n, cov / n);
    let a1 = 2.0 * mu_x * mu_y + spec.c1;
    let a2 = 2.0 * cov + spec.c2;
    let b1 = mu_x * mu_x + mu_y * mu_y + spec.c1;
    let b2 = var_x + var_y + spec.c2;
    let ssim = a1 * a2 / (b1 * b2);
    if weight != 0.0 {
        // d/dy_j of the four factors:
        //   a1: 2 mu_x / n, a2: 2 (x_j - mu_x) / n, b1: 2 mu_y / n, b2: 2 (y_j - mu_y) / n
        let denom = b1 * b2;
        for (j, g) in grad.iter_mut().enumerate() {
            let da1 = 2.0 * mu_x / n;
            let da2 = 2.0 * (x[j] - mu_x) / n;
            let db1 = 2.0 * mu_y / n;
            let db2 = 2.0 * (y[j] - mu_y) / n;
            let d = (da1 * a2 + a1 * da2) / denom - ssim * (db1 / b1 + db2 / b2);
            *g += weight * d;
        }
    }
    ssim
}

/// Loss against a precomputed γ map whose grid matches `window` on these
/// images.
pub fn weighted_ssim_loss_with_gamma(
    under: &Image,
    over: &Image,
    fused: &Image,
    gamma: &GammaMap,
    window: &SsimWindowSpec,
) -> Result<LossValue> {
    ensure_shape!(
        under.same_dims(over) && under.same_dims(fused),
        "loss inputs differ in size or channel count"
    );
    let grid: WindowGrid = window.grid(fused.height(), fused.width())?;
    ensure_shape!(
        gamma.height == grid.rows.len() && gamma.width == grid.cols.len(),
        "gamma map {}x{} does not match window grid {}x{}",
        gamma.height,
        gamma.width,
        grid.rows.len(),
        grid.cols.len()
    );
    let ch = fused.channels();
    let scale = 1.0 / (ch * grid.len()) as f64;
    let mut grad = vec![0.0; fused.data().len()];
    let mut total = 0.0;
    let (mut xu, mut xo, mut y) = (Vec::new(), Vec::new(), Vec::new());
    let mut wgrad = vec![0.0; window.pixels()];
    for c in 0..ch {
        let (uc, oc, fc) = (under.channel(c), over.channel(c), fused.channel(c));
        for i in 0..grid.len() {
            grid.gather(uc.data(), i, &mut xu);
            grid.gather(oc.data(), i, &mut xo);
            grid.gather(fc.data(), i, &mut y);
            wgrad.iter_mut().for_each(|g| *g = 0.0);
            let (gu, go) = (gamma.under(i), gamma.over(i));
            total += gu * ssim_with_grad(&xu, &y, window, gu, &mut wgrad);
            total += go * ssim_with_grad(&xo, &y, window, go, &mut wgrad);
            for (pix, g) in grid.pixel_indices(i).zip(&wgrad) {
                grad[pix * ch + c] -= scale * g;
            }
        }
    }
    Ok(LossValue {
        loss: 1.0 - scale * total,
        grad,
    })
}

/// Loss of `fused` against the color pair, with γ from the grayscale pair.
pub fn weighted_ssim_loss(pair: &ExposurePair, fused: &Image, cfg: &LossConfig) -> Result<LossValue> {
    cfg.validate()?;
    ensure_shape!(pair.under().same_dims(fused), "fused image does not match the exposures");
    let gamma = cfg.gamma(pair)?;
    weighted_ssim_loss_with_gamma(pair.under(), pair.over(), fused, &gamma, &cfg.window)
}
