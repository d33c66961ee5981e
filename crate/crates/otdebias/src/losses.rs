//! Multi-task loss stack: adaptive focal classification loss, color-aware
//! weighted redshift loss, VIB KL and its LSI enhancement, and the unified
//! objective. Every loss returns its analytic gradient; the test suite checks
//! each one against central finite differences.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::schedule::{hk_curriculum, CurriculumMode};
use serde::{Deserialize, Serialize};

/// Loss weights and curriculum gates.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda_red: f64,
    pub lambda_vib: f64,
    pub lsi_weight: f64,
    pub lambda_hk: f64,
    pub hk_start_epoch: usize,
    pub hk_ramp_epochs: usize,
    pub hk_curriculum: CurriculumMode,
    /// Focal baseline exponent and adaptation span.
    pub gamma0: f64,
    pub gamma_eta: f64,
    /// Per-class focal weights; empty means uniform 1.
    pub alpha: Vec<f64>,
    pub color_bands: ColorBands,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_red: 0.5,
            lambda_vib: 0.25,
            lsi_weight: 0.12,
            lambda_hk: 0.035,
            hk_start_epoch: 2,
            hk_ramp_epochs: 10,
            hk_curriculum: CurriculumMode::Ramp,
            gamma0: 2.0,
            gamma_eta: 1.0,
            alpha: Vec::new(),
            color_bands: ColorBands::default(),
        }
    }
}

/// g-r color bands for the quality tiers. Boundaries belong to the
/// higher-quality tier.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ColorBands {
    pub high: (f64, f64),
    pub medium: (f64, f64),
}

impl Default for ColorBands {
    fn default() -> Self {
        ColorBands {
            high: (0.6, 1.2),
            medium: (0.3, 1.5),
        }
    }
}

/// Loss value with gradient and bookkeeping flags.
#[derive(Debug, Clone)]
pub struct FocalOutcome {
    pub loss: f64,
    pub grad_logits: Vec<f64>,
    /// True when a probability was clamped at 1e-12 to evaluate the log.
    pub clamped: bool,
}

const PROB_FLOOR: f64 = 1e-12;

fn check_distribution(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::data("empty probability vector"));
    }
    if probs.iter().any(|&p| !(0.0..=1.0 + 1e-12).contains(&p)) {
        return Err(Error::data("probabilities must lie in [0, 1]"));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::data(format!("probabilities sum to {total}")));
    }
    Ok(())
}

/// d/dp of `-alpha * (1 - p)^gamma * ln p` with the p -> 1 limits handled.
fn focal_dp(p: f64, alpha: f64, gamma: f64) -> f64 {
    if p >= 1.0 {
        return if gamma == 0.0 { -alpha } else { 0.0 };
    }
    let one_m = 1.0 - p;
    let term_log = if gamma == 0.0 {
        0.0
    } else {
        alpha * gamma * one_m.powf(gamma - 1.0) * p.ln()
    };
    term_log - alpha * one_m.powf(gamma) / p
}

/// True-class focal loss `-alpha_y (1 - p_y)^gamma ln p_y` with gradient
/// with respect to the logits that produced `probs` via softmax.
pub fn focal_loss(probs: &[f64], label: usize, alpha: &[f64], gamma: f64) -> Result<FocalOutcome> {
    check_distribution(probs)?;
    if label >= probs.len() {
        return Err(Error::data(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    if gamma < 0.0 {
        return Err(Error::param(format!("gamma {gamma} must be >= 0")));
    }
    let a = class_alpha(alpha, label, probs.len())?;
    let raw_p = probs[label];
    let clamped = raw_p < PROB_FLOOR;
    let p = raw_p.max(PROB_FLOOR);
    let loss = -a * (1.0 - p).powf(gamma) * p.ln();
    let dp = focal_dp(p, a, gamma);
    // Chain through softmax: d p_y / d logit_k = p_y (delta_yk - p_k).
    let grad_logits = probs
        .iter()
        .enumerate()
        .map(|(k, &pk)| {
            let indicator = if k == label { 1.0 } else { 0.0 };
            dp * p * (indicator - pk)
        })
        .collect();
    Ok(FocalOutcome {
        loss,
        grad_logits,
        clamped,
    })
}

/// The literal all-class sum `-sum_i alpha_i (1 - p_i)^gamma ln p_i`.
///
/// Retained for comparison only: as each off-target probability approaches 0
/// its `-ln p_i` term diverges, which rewards degenerate predictions. The
/// true-class form above is the production path.
pub fn focal_loss_all_class(probs: &[f64], alpha: &[f64], gamma: f64) -> Result<FocalOutcome> {
    check_distribution(probs)?;
    if gamma < 0.0 {
        return Err(Error::param(format!("gamma {gamma} must be >= 0")));
    }
    let n = probs.len();
    let mut loss = 0.0;
    let mut clamped = false;
    let mut dps = vec![0.0; n];
    for (i, &raw_p) in probs.iter().enumerate() {
        let a = class_alpha(alpha, i, n)?;
        clamped |= raw_p < PROB_FLOOR;
        let p = raw_p.max(PROB_FLOOR);
        loss += -a * (1.0 - p).powf(gamma) * p.ln();
        dps[i] = focal_dp(p, a, gamma);
    }
    let mut grad_logits = vec![0.0; n];
    for (k, slot) in grad_logits.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (i, &dp) in dps.iter().enumerate() {
            let indicator = if i == k { 1.0 } else { 0.0 };
            acc += dp * probs[i] * (indicator - probs[k]);
        }
        *slot = acc;
    }
    Ok(FocalOutcome {
        loss,
        grad_logits,
        clamped,
    })
}

fn class_alpha(alpha: &[f64], class: usize, n_classes: usize) -> Result<f64> {
    if alpha.is_empty() {
        return Ok(1.0);
    }
    if alpha.len() != n_classes {
        return Err(Error::shape(format!(
            "{} alpha weights for {} classes",
            alpha.len(),
            n_classes
        )));
    }
    Ok(alpha[class])
}

/// Difficulty-adapted focal exponent, bounded in [gamma0 - eta, gamma0 + eta].
pub fn adaptive_gamma(l_current: f64, l_baseline: f64, gamma0: f64, eta: f64) -> Result<f64> {
    if l_baseline <= 0.0 {
        return Err(Error::param(format!(
            "baseline loss {l_baseline} must be positive"
        )));
    }
    Ok(gamma0 + eta * ((l_current - l_baseline) / l_baseline).tanh())
}

/// Quality-tier weight for a g-r color. Boundaries go to the higher tier.
pub fn color_weight(g_r: f64, bands: &ColorBands) -> Result<f64> {
    if !g_r.is_finite() {
        return Err(Error::data(format!("non-finite color {g_r}")));
    }
    if (bands.high.0..=bands.high.1).contains(&g_r) {
        Ok(1.0)
    } else if (bands.medium.0..=bands.medium.1).contains(&g_r) {
        Ok(0.7)
    } else {
        Ok(0.3)
    }
}

/// Weighted squared log-redshift residual with per-sample gradient in the
/// predictions: `sum_i w_i (log(1+zhat_i) - log(1+z_i))^2`.
pub fn redshift_loss(z_hat: &[f64], z: &[f64], weights: &[f64]) -> Result<(f64, Vec<f64>)> {
    if z_hat.len() != z.len() || z.len() != weights.len() {
        return Err(Error::shape(format!(
            "lengths differ: pred {} true {} weights {}",
            z_hat.len(),
            z.len(),
            weights.len()
        )));
    }
    if z_hat.iter().chain(z).any(|&v| v <= -1.0 || !v.is_finite()) {
        return Err(Error::data("redshifts must satisfy 1 + z > 0"));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; z.len()];
    for i in 0..z.len() {
        let resid = (1.0 + z_hat[i]).ln() - (1.0 + z[i]).ln();
        loss += weights[i] * resid * resid;
        grad[i] = 2.0 * weights[i] * resid / (1.0 + z_hat[i]);
    }
    Ok((loss, grad))
}

/// Gaussian posterior state for the variational bottleneck.
#[derive(Debug, Clone)]
pub struct VIBState {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub c_raw: f64,
}

impl VIBState {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>, c_raw: f64) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(Error::shape(format!(
                "mu length {} vs sigma length {}",
                mu.len(),
                sigma.len()
            )));
        }
        if sigma.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
            return Err(Error::param("sigma must be elementwise positive"));
        }
        Ok(VIBState { mu, sigma, c_raw })
    }

    /// LSI constant `softplus(c_raw)`, always positive.
    pub fn c(&self) -> f64 {
        crate::ssm::softplus(self.c_raw)
    }
}

/// Closed-form KL(q || N(0, I)) with gradients in mu and sigma.
pub fn vib_kl(state: &VIBState) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if state.sigma.iter().any(|&s| s <= 0.0) {
        return Err(Error::param("sigma must be positive"));
    }
    let mut kl = 0.0;
    let mut grad_mu = vec![0.0; state.mu.len()];
    let mut grad_sigma = vec![0.0; state.sigma.len()];
    for i in 0..state.mu.len() {
        let (m, s) = (state.mu[i], state.sigma[i]);
        kl += 0.5 * (m * m + s * s - 1.0 - 2.0 * s.ln());
        grad_mu[i] = m;
        grad_sigma[i] = s - 1.0 / s;
    }
    Ok((kl, grad_mu, grad_sigma))
}

/// Reparameterized sample `z = mu + sigma * eps`, `eps ~ N(0, I)`.
pub fn reparameterize(state: &VIBState, rng: &mut Rng) -> Vec<f64> {
    state
        .mu
        .iter()
        .zip(&state.sigma)
        .map(|(&m, &s)| m + s * rng.normal())
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct LsiOutcome {
    pub value: f64,
    pub grad_kl: f64,
    pub grad_c_raw: f64,
}

/// Log-Sobolev enhancement `sqrt(softplus(c_raw) * kl)`.
///
/// At kl = 0 the square root is not differentiable; the subgradient 0 is used.
pub fn lsi_term(kl: f64, c_raw: f64) -> Result<LsiOutcome> {
    if kl < 0.0 {
        return Err(Error::param(format!("kl {kl} must be nonnegative")));
    }
    let c = crate::ssm::softplus(c_raw);
    let value = (c * kl).sqrt();
    if kl == 0.0 {
        return Ok(LsiOutcome {
            value: 0.0,
            grad_kl: 0.0,
            grad_c_raw: 0.0,
        });
    }
    let sigmoid = 1.0 / (1.0 + (-c_raw).exp());
    Ok(LsiOutcome {
        value,
        grad_kl: c / (2.0 * value),
        grad_c_raw: kl / (2.0 * value) * sigmoid,
    })
}

/// Individual terms entering the unified objective.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossParts {
    pub l_cls: f64,
    pub l_red: f64,
    pub kl: f64,
    pub lsi: f64,
    pub l_hk: f64,
}

/// Unified objective
/// `L_cls + lambda_red L_red + lambda_vib KL + lsi_weight LSI + lambda_hk(epoch) L_HK`.
pub fn total_loss(parts: &LossParts, cfg: &LossConfig, epoch: usize) -> Result<f64> {
    for (name, v) in [
        ("l_cls", parts.l_cls),
        ("l_red", parts.l_red),
        ("kl", parts.kl),
        ("lsi", parts.lsi),
        ("l_hk", parts.l_hk),
    ] {
        if !v.is_finite() {
            return Err(Error::data(format!("non-finite loss part {name}")));
        }
    }
    let lambda_hk = hk_curriculum(
        epoch,
        cfg.hk_start_epoch,
        cfg.hk_ramp_epochs,
        cfg.lambda_hk,
        cfg.hk_curriculum,
    );
    Ok(parts.l_cls
        + cfg.lambda_red * parts.l_red
        + cfg.lambda_vib * parts.kl
        + cfg.lsi_weight * parts.lsi
        + lambda_hk * parts.l_hk)
}
