//! Differentiable soft precision/recall, the adaptive balance loss with
//! exponent γ, the per-network training losses, and the jury's binary
//! cross entropy.

use crate::Tensor;

/// Loss hyperparameters. γ = 0 disables the adaptive scaling factors,
/// which is the ablation form −log Pr − log Re.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub gamma: u32,
    pub abl_weight: f64,
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 3,
            abl_weight: 10.0,
            epsilon: 1e-6,
        }
    }
}

/// Soft precision Σ(y·ŷ)/Σy with ε smoothing, clamped into [ε, 1] so a
/// log can follow. `y` is the prediction, `y_hat` the ground truth.
pub fn soft_pr(y: &Tensor, y_hat: &Tensor, eps: f64) -> Tensor {
    assert_eq!(y.shape(), y_hat.shape(), "soft_pr shape mismatch");
    y.mul(y_hat)
        .sum_all()
        .add_scalar(eps)
        .div(&y.sum_all().add_scalar(eps))
        .clamp(eps, 1.0)
}

/// Soft recall Σ(y·ŷ)/Σŷ, smoothed and clamped like [`soft_pr`].
pub fn soft_re(y: &Tensor, y_hat: &Tensor, eps: f64) -> Tensor {
    assert_eq!(y.shape(), y_hat.shape(), "soft_re shape mismatch");
    y.mul(y_hat)
        .sum_all()
        .add_scalar(eps)
        .div(&y_hat.sum_all().add_scalar(eps))
        .clamp(eps, 1.0)
}

/// −(1−Pr)^γ·log(Pr) − (1−Re)^γ·log(Re). Inputs must lie in (0, 1]
/// (callers clamp); differentiable through both arguments.
pub fn adaptive_balance_loss(pr: &Tensor, re: &Tensor, gamma: u32) -> Tensor {
    let g = gamma as f64;
    let term = |x: &Tensor| -> Tensor {
        Tensor::scalar(1.0)
            .sub(x)
            .pow_scalar(g)
            .mul(&x.log())
            .neg()
    };
    term(pr).add(&term(re))
}

fn abl_of(y: &Tensor, y_hat: &Tensor, cfg: &LossConfig) -> Tensor {
    let pr = soft_pr(y, y_hat, cfg.epsilon);
    let re = soft_re(y, y_hat, cfg.epsilon);
    adaptive_balance_loss(&pr, &re, cfg.gamma)
}

/// abl_weight·L_abl(y_p vs ŷ) − log C(Y_P), confidence term averaged
/// over the batch.
pub fn prosecution_loss(y_p: &Tensor, y_hat: &Tensor, c_p: &Tensor, cfg: &LossConfig) -> Tensor {
    abl_of(y_p, y_hat, cfg)
        .scale(cfg.abl_weight)
        .add(&c_p.clamp(cfg.epsilon, 1.0).log().neg().mean_all())
}

/// Structural mirror of [`prosecution_loss`] for the defendant network.
pub fn defendant_loss(y_d: &Tensor, y_hat: &Tensor, c_d: &Tensor, cfg: &LossConfig) -> Tensor {
    prosecution_loss(y_d, y_hat, c_d, cfg)
}

/// Binary cross entropy on the jury's confidence: label 1 when the
/// candidate is the ground-truth mask, 0 when it is a network output.
/// Averaged over the batch.
pub fn jury_loss(confidence: &Tensor, y_star: f64, eps: f64) -> Tensor {
    assert!(y_star == 0.0 || y_star == 1.0, "jury label must be 0 or 1");
    let c = confidence.clamp(eps, 1.0 - eps);
    let pos = c.log().scale(-y_star);
    let neg = Tensor::scalar(1.0).sub(&c).log().scale(-(1.0 - y_star));
    pos.add(&neg).mean_all()
}
