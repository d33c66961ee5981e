//! Synthetic selection-function bias laboratory.
//!
//! A known true redshift/color distribution is pushed through a selection
//! function by rejection sampling, producing a biased "observed" catalog with
//! its true counterpart on record. HK-based recovery then pulls the observed
//! distribution (or a toy predictor's outputs) back toward the truth, which
//! is what the distribution-level loss is for.

use crate::catalog::CatalogRow;
use crate::error::{Error, Result};
use crate::losses::{color_weight, ColorBands};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::rng::Rng;
use crate::transport::{HKConfig, Histogram, HkLossContext};
use serde::{Deserialize, Serialize};

/// Probability that a galaxy at redshift `z` with color `c` enters the
/// observed sample. All variants stay within (0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SelectionFn {
    /// No selection; every draw is accepted (the control).
    Unit,
    /// Logistic suppression of high redshifts: `1 / (1 + exp(k (z - z0)))`.
    LogisticZ { z0: f64, k: f64 },
    /// Logistic preference for red colors: `1 / (1 + exp(-k (c - c0)))`.
    ColorGated { c0: f64, k: f64 },
    /// Product of the two.
    Product { z0: f64, kz: f64, c0: f64, kc: f64 },
}

impl SelectionFn {
    pub fn eval(&self, z: f64, c: f64) -> f64 {
        match *self {
            SelectionFn::Unit => 1.0,
            SelectionFn::LogisticZ { z0, k } => logistic(-(k * (z - z0))),
            SelectionFn::ColorGated { c0, k } => logistic(k * (c - c0)),
            SelectionFn::Product { z0, kz, c0, kc } => {
                logistic(-(kz * (z - z0))) * logistic(kc * (c - c0))
            }
        }
    }

    /// Parse CLI syntax like `logistic:z0=0.8,k=6`, `color:c0=0.5,k=3`,
    /// `product:z0=0.8,kz=6,c0=0.5,kc=3`, or `unit`.
    pub fn parse(text: &str) -> Result<Self> {
        let (kind, args) = match text.split_once(':') {
            Some((k, a)) => (k, a),
            None => (text, ""),
        };
        let mut map = std::collections::BTreeMap::new();
        for part in args.split(',').filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Param(format!("bad selection argument `{part}`")))?;
            let value: f64 = value
                .parse()
                .map_err(|_| Error::Param(format!("non-numeric selection value `{value}`")))?;
            map.insert(key.to_string(), value);
        }
        let get = |key: &str| -> Result<f64> {
            map.get(key)
                .copied()
                .ok_or_else(|| Error::Param(format!("selection `{kind}` needs `{key}`")))
        };
        match kind {
            "unit" => Ok(SelectionFn::Unit),
            "logistic" => Ok(SelectionFn::LogisticZ {
                z0: get("z0")?,
                k: get("k")?,
            }),
            "color" => Ok(SelectionFn::ColorGated {
                c0: get("c0")?,
                k: get("k")?,
            }),
            "product" => Ok(SelectionFn::Product {
                z0: get("z0")?,
                kz: get("kz")?,
                c0: get("c0")?,
                kc: get("kc")?,
            }),
            other => Err(Error::Param(format!("unknown selection kind `{other}`"))),
        }
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

/// True joint distribution: a Gaussian mixture in redshift truncated to
/// [0, 2], with color following a linear color-redshift relation plus
/// Gaussian scatter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueDistribution {
    pub components: Vec<MixtureComponent>,
    pub color_intercept: f64,
    pub color_slope: f64,
    pub color_scatter: f64,
}

impl TrueDistribution {
    /// Two-population scenario: a low-z bump and a broader high-z tail, with
    /// colors spanning all three quality tiers.
    pub fn default_scenario() -> Self {
        TrueDistribution {
            components: vec![
                MixtureComponent {
                    weight: 0.6,
                    mean: 0.45,
                    std: 0.18,
                },
                MixtureComponent {
                    weight: 0.4,
                    mean: 1.15,
                    std: 0.30,
                },
            ],
            color_intercept: 0.20,
            color_slope: 0.55,
            color_scatter: 0.12,
        }
    }

    fn sample(&self, rng: &mut Rng) -> (f64, f64) {
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        let z = loop {
            let mut pick = rng.uniform() * total;
            let mut chosen = &self.components[0];
            for comp in &self.components {
                if pick < comp.weight {
                    chosen = comp;
                    break;
                }
                pick -= comp.weight;
            }
            let z = chosen.mean + chosen.std * rng.normal();
            if (0.0..=2.0).contains(&z) {
                break z;
            }
        };
        let c = self.color_intercept + self.color_slope * z + self.color_scatter * rng.normal();
        (z, c)
    }
}

/// Rejection-sampled catalog with its generating ingredients on record.
#[derive(Debug, Clone)]
pub struct SyntheticCatalog {
    /// Accepted (observed) rows.
    pub rows: Vec<CatalogRow>,
    /// Empirical histogram of every pre-selection draw.
    pub true_dist: Histogram,
    /// Histogram of the accepted redshifts.
    pub observed_dist: Histogram,
    pub seed: u64,
    pub truth: TrueDistribution,
    pub selection: SelectionFn,
    pub acceptance_rate: f64,
}

/// Draw `n` observed galaxies: sample (z, c) from the truth, accept with
/// probability S(z, c).
pub fn sample_catalog(
    truth: &TrueDistribution,
    selection: &SelectionFn,
    n: usize,
    seed: u64,
    cfg: &HKConfig,
) -> Result<SyntheticCatalog> {
    if n == 0 {
        return Err(Error::param("need at least one sample"));
    }
    let mut rng = Rng::new(seed);
    let mut rows = Vec::with_capacity(n);
    let mut all_z = Vec::new();
    let mut accepted_z = Vec::new();
    let max_attempts = n.saturating_mul(2000).max(10_000);
    let mut attempts = 0usize;
    while rows.len() < n {
        if attempts >= max_attempts {
            return Err(Error::DegenerateSelection(format!(
                "acceptance rate {:.2e} after {attempts} draws",
                rows.len() as f64 / attempts as f64
            )));
        }
        attempts += 1;
        let (z, c) = truth.sample(&mut rng);
        all_z.push(z);
        let s = selection.eval(z, c);
        if rng.uniform() <= s {
            accepted_z.push(z);
            rows.push(CatalogRow {
                id: format!("sim{:06}", rows.len()),
                z_true: z,
                z_pred: None,
                g_r: Some(c),
                class_true: None,
                class_pred: None,
            });
        }
    }
    Ok(SyntheticCatalog {
        true_dist: Histogram::from_values(&all_z, cfg)?,
        observed_dist: Histogram::from_values(&accepted_z, cfg)?,
        rows,
        seed,
        truth: truth.clone(),
        selection: selection.clone(),
        acceptance_rate: n as f64 / attempts as f64,
    })
}

/// Kolmogorov-Smirnov statistic between two histograms on shared bins.
pub fn ks_statistic(a: &Histogram, b: &Histogram) -> Result<f64> {
    a.check_same_binning(b)?;
    let mut cdf_a = 0.0;
    let mut cdf_b = 0.0;
    let mut worst = 0.0f64;
    for (&ma, &mb) in a.mass().iter().zip(b.mass()) {
        cdf_a += ma;
        cdf_b += mb;
        worst = worst.max((cdf_a - cdf_b).abs());
    }
    Ok(worst)
}

/// Result of projected gradient descent on the histogram simplex.
#[derive(Debug, Clone)]
pub struct Recalibration {
    pub recovered: Histogram,
    pub loss_trace: Vec<f64>,
    /// False when the loss rose for 10 consecutive steps and descent stopped.
    pub converged: bool,
}

/// Minimize the debiased HK objective toward `target`, starting from
/// `observed`, via gradient descent on softmax logits (so every iterate is
/// exactly on the simplex).
pub fn hk_recalibrate(
    observed: &Histogram,
    target: &Histogram,
    cfg: &HKConfig,
    steps: usize,
    lr: f64,
) -> Result<Recalibration> {
    observed.check_same_binning(target)?;
    if lr <= 0.0 {
        return Err(Error::param(format!("learning rate {lr} must be positive")));
    }
    let mut ctx = HkLossContext::new(target, cfg)?;
    let n = observed.n_bins();
    // The 1e-3 floor keeps empty bins reachable (softmax mass grows like
    // 1/p per step, so a much smaller floor stalls the descent); occupied
    // bins keep their exact log-mass.
    let mut logits: Vec<f64> = observed.mass().iter().map(|&m| m.max(1e-3).ln()).collect();
    let mut loss_trace = Vec::with_capacity(steps);
    let mut rising = 0usize;
    let mut best = f64::INFINITY;
    for _ in 0..steps {
        let probs = softmax(&logits);
        let (loss, grad_p) = ctx.eval_hist(&probs)?;
        loss_trace.push(loss);
        if loss > best {
            rising += 1;
            if rising >= 10 {
                let recovered = Histogram::from_mass(target.edges().to_vec(), probs)?;
                return Ok(Recalibration {
                    recovered,
                    loss_trace,
                    converged: false,
                });
            }
        } else {
            best = loss;
            rising = 0;
        }
        // d loss / d logit_k for p = softmax(logits)
        let dot: f64 = probs.iter().zip(&grad_p).map(|(p, g)| p * g).sum();
        for k in 0..n {
            logits[k] -= lr * probs[k] * (grad_p[k] - dot);
        }
    }
    let probs = softmax(&logits);
    let recovered = Histogram::from_mass(target.edges().to_vec(), probs)?;
    Ok(Recalibration {
        recovered,
        loss_trace,
        converged: true,
    })
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// Loss composition of one ablation arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    MseOnly,
    ColorAware,
    HkDistance,
    ColorAwareHk,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [
        AblationMode::MseOnly,
        AblationMode::ColorAware,
        AblationMode::HkDistance,
        AblationMode::ColorAwareHk,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            AblationMode::MseOnly => "mse_only",
            AblationMode::ColorAware => "color_aware",
            AblationMode::HkDistance => "hk_distance",
            AblationMode::ColorAwareHk => "color_aware_hk",
        }
    }

    fn uses_color(&self) -> bool {
        matches!(self, AblationMode::ColorAware | AblationMode::ColorAwareHk)
    }

    fn uses_hk(&self) -> bool {
        matches!(self, AblationMode::HkDistance | AblationMode::ColorAwareHk)
    }
}

/// Tuning for the deliberately weak ablation predictor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationConfig {
    pub color_bins: usize,
    pub steps: usize,
    pub lr: f64,
    /// Weight of the HK term relative to the per-sample redshift loss.
    pub lambda_hk: f64,
    /// Soft-histogram bandwidth for the HK term. Wide enough to absorb the
    /// narrowing a deterministic predictor's pushforward suffers relative to
    /// the full redshift scatter, while keeping distribution shifts visible.
    pub bandwidth: f64,
    pub bootstrap_resamples: usize,
    pub outlier_thresh: f64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            color_bins: 12,
            steps: 250,
            lr: 0.08,
            lambda_hk: 0.1,
            bandwidth: 0.6,
            bootstrap_resamples: 200,
            outlier_thresh: 0.15,
        }
    }
}

/// One arm's fitted predictor and evaluation.
#[derive(Debug, Clone)]
pub struct AblationArm {
    pub mode: AblationMode,
    pub report: MetricsReport,
    /// Per-eval-row squared log residuals, kept for paired bootstraps.
    pub sq_log_residuals: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub arms: Vec<AblationArm>,
    pub eval_rows: usize,
}

impl AblationOutcome {
    pub fn arm(&self, mode: AblationMode) -> &AblationArm {
        self.arms
            .iter()
            .find(|a| a.mode == mode)
            .expect("all modes present")
    }

    /// Mean and bootstrap std of the per-row squared-log-residual difference
    /// between two arms (paired over eval rows).
    pub fn paired_bootstrap(
        &self,
        a: AblationMode,
        b: AblationMode,
        resamples: usize,
        seed: u64,
    ) -> (f64, f64) {
        let ra = &self.arm(a).sq_log_residuals;
        let rb = &self.arm(b).sq_log_residuals;
        let n = ra.len();
        let mut rng = Rng::new(seed);
        let mut diffs = Vec::with_capacity(resamples);
        for _ in 0..resamples {
            let mut acc = 0.0;
            for _ in 0..n {
                let idx = rng.range(n);
                acc += ra[idx] - rb[idx];
            }
            diffs.push(acc / n as f64);
        }
        let mean = diffs.iter().sum::<f64>() / resamples as f64;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
            / resamples as f64;
        (mean, var.sqrt())
    }
}

/// Piecewise-constant isotonic-in-color regressor fitted under each loss
/// mode, evaluated on an unbiased draw from the same truth.
///
/// The predictor is intentionally weak and identical across modes so metric
/// differences isolate the loss, not model capacity.
pub fn ablation_run(
    catalog: &SyntheticCatalog,
    cfg: &AblationConfig,
    hk_cfg: &HKConfig,
) -> Result<AblationOutcome> {
    if catalog.rows.iter().any(|r| r.g_r.is_none()) {
        return Err(Error::data("ablation needs a color column"));
    }
    if catalog.rows.is_empty() {
        return Err(Error::data("empty catalog"));
    }
    let colors: Vec<f64> = catalog.rows.iter().map(|r| r.g_r.unwrap()).collect();
    let z_obs: Vec<f64> = catalog.rows.iter().map(|r| r.z_true).collect();
    let (c_lo, c_hi) = colors
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &c| {
            (lo.min(c), hi.max(c))
        });
    let bin_of = |c: f64| -> usize {
        if c_hi == c_lo {
            return 0;
        }
        (((c - c_lo) / (c_hi - c_lo) * cfg.color_bins as f64) as usize).min(cfg.color_bins - 1)
    };
    let train_bins: Vec<usize> = colors.iter().map(|&c| bin_of(c)).collect();

    // per-bin counts and initial values (mean observed z per bin)
    let mut counts = vec![0.0f64; cfg.color_bins];
    let mut sums = vec![0.0f64; cfg.color_bins];
    for (bin, &z) in train_bins.iter().zip(&z_obs) {
        counts[*bin] += 1.0;
        sums[*bin] += z;
    }
    let global_mean = z_obs.iter().sum::<f64>() / z_obs.len() as f64;
    let init: Vec<f64> = counts
        .iter()
        .zip(&sums)
        .map(|(&n, &s)| if n > 0.0 { s / n } else { global_mean })
        .collect();

    // unbiased evaluation catalog from the same truth
    let eval = sample_catalog(
        &catalog.truth,
        &SelectionFn::Unit,
        catalog.rows.len(),
        catalog.seed.wrapping_add(1),
        hk_cfg,
    )?;
    let bands = ColorBands::default();
    let weights: Vec<f64> = colors
        .iter()
        .map(|&c| color_weight(c, &bands))
        .collect::<Result<_>>()?;

    let mut hk_ctx =
        HkLossContext::with_smoothed_target(&catalog.true_dist, hk_cfg, cfg.bandwidth)?;

    let mut arms = Vec::new();
    for mode in AblationMode::ALL {
        let mut values = init.clone();
        for _ in 0..cfg.steps {
            let preds: Vec<f64> = train_bins.iter().map(|&b| values[b]).collect();
            let w: Vec<f64> = if mode.uses_color() {
                weights.clone()
            } else {
                vec![1.0; preds.len()]
            };
            let (_, grad_pred) = crate::losses::redshift_loss(&preds, &z_obs, &w)?;
            let mut grad_bins = vec![0.0f64; cfg.color_bins];
            let norm = preds.len() as f64;
            for (i, &b) in train_bins.iter().enumerate() {
                grad_bins[b] += grad_pred[i] / norm;
            }
            if mode.uses_hk() {
                let hk = hk_ctx.eval_predictions(&preds, cfg.bandwidth)?;
                for (i, &b) in train_bins.iter().enumerate() {
                    grad_bins[b] += cfg.lambda_hk * hk.grad[i];
                }
            }
            for (v, g) in values.iter_mut().zip(&grad_bins) {
                *v = (*v - cfg.lr * g).clamp(0.0, 2.0);
            }
            isotonic_projection(&mut values, &counts);
        }

        // evaluate on the unbiased set
        let mut eval_rows = Vec::with_capacity(eval.rows.len());
        let mut sq_log_residuals = Vec::with_capacity(eval.rows.len());
        for row in &eval.rows {
            let pred = values[bin_of(row.g_r.unwrap())];
            let resid = (1.0 + pred).ln() - (1.0 + row.z_true).ln();
            sq_log_residuals.push(resid * resid);
            eval_rows.push(CatalogRow {
                z_pred: Some(pred),
                ..row.clone()
            });
        }
        let report = compute_metrics(&eval_rows, cfg.outlier_thresh)?;
        arms.push(AblationArm {
            mode,
            report,
            sq_log_residuals,
        });
    }
    Ok(AblationOutcome {
        eval_rows: eval.rows.len(),
        arms,
    })
}

/// Weighted pool-adjacent-violators: project onto non-decreasing sequences.
fn isotonic_projection(values: &mut [f64], weights: &[f64]) {
    let n = values.len();
    // (value, weight, run length) blocks
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        let w = weights[i].max(1e-12);
        blocks.push((values[i], w, 1));
        while blocks.len() > 1 {
            let last = blocks[blocks.len() - 1];
            let prev = blocks[blocks.len() - 2];
            if prev.0 <= last.0 {
                break;
            }
            let merged_w = prev.1 + last.1;
            let merged_v = (prev.0 * prev.1 + last.0 * last.1) / merged_w;
            blocks.truncate(blocks.len() - 2);
            blocks.push((merged_v, merged_w, prev.2 + last.2));
        }
    }
    let mut idx = 0;
    for (v, _, len) in blocks {
        for _ in 0..len {
            values[idx] = v;
            idx += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> HKConfig {
        HKConfig::default()
    }

    #[test]
    fn selection_parse_round_trips() {
        let s = SelectionFn::parse("logistic:z0=0.8,k=6").unwrap();
        assert_eq!(s, SelectionFn::LogisticZ { z0: 0.8, k: 6.0 });
        assert!((s.eval(0.8, 0.0) - 0.5).abs() < 1e-12);
        assert!(s.eval(1.8, 0.0) < s.eval(0.2, 0.0));
        assert_eq!(SelectionFn::parse("unit").unwrap(), SelectionFn::Unit);
        assert!(SelectionFn::parse("logistic:z0=0.8").is_err());
        assert!(SelectionFn::parse("warp:x=1").is_err());
        let p = SelectionFn::parse("product:z0=0.8,kz=6,c0=0.5,kc=3").unwrap();
        let v = p.eval(0.5, 0.9);
        assert!(v > 0.0 && v <= 1.0);
    }

    #[test]
    fn unit_selection_observes_everything() {
        let truth = TrueDistribution::default_scenario();
        let cat = sample_catalog(&truth, &SelectionFn::Unit, 2000, 7, &cfg()).unwrap();
        assert_eq!(cat.rows.len(), 2000);
        assert_eq!(cat.acceptance_rate, 1.0);
        // same accepted set: observed and true histograms coincide
        for (a, b) in cat.true_dist.mass().iter().zip(cat.observed_dist.mass()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn hard_cutoff_removes_high_z_mass() {
        let truth = TrueDistribution::default_scenario();
        // steep logistic approximates a step at z = 1
        let sel = SelectionFn::LogisticZ { z0: 1.0, k: 200.0 };
        let cat = sample_catalog(&truth, &sel, 4000, 7, &cfg()).unwrap();
        let centers = cat.observed_dist.centers();
        let above: f64 = cat
            .observed_dist
            .mass()
            .iter()
            .zip(&centers)
            .filter(|(_, &c)| c > 1.05)
            .map(|(m, _)| m)
            .sum();
        assert!(above < 2e-3, "mass above cutoff: {above}");
    }

    #[test]
    fn catalog_determinism() {
        let truth = TrueDistribution::default_scenario();
        let sel = SelectionFn::LogisticZ { z0: 0.8, k: 6.0 };
        let a = sample_catalog(&truth, &sel, 500, 42, &cfg()).unwrap();
        let b = sample_catalog(&truth, &sel, 500, 42, &cfg()).unwrap();
        assert_eq!(a.rows, b.rows);
        let c = sample_catalog(&truth, &sel, 500, 43, &cfg()).unwrap();
        assert_ne!(a.rows, c.rows);
    }

    #[test]
    fn degenerate_selection_detected() {
        let truth = TrueDistribution::default_scenario();
        // essentially zero acceptance everywhere
        let sel = SelectionFn::LogisticZ { z0: -50.0, k: 10.0 };
        let err = sample_catalog(&truth, &sel, 100, 7, &cfg());
        assert!(matches!(err, Err(Error::DegenerateSelection(_))));
    }

    #[test]
    fn selection_bias_shows_in_ks_statistic() {
        let truth = TrueDistribution::default_scenario();
        let sel = SelectionFn::LogisticZ { z0: 0.8, k: 6.0 };
        let biased = sample_catalog(&truth, &sel, 10_000, 7, &cfg()).unwrap();
        let control = sample_catalog(&truth, &SelectionFn::Unit, 10_000, 7, &cfg()).unwrap();
        let ks_biased = ks_statistic(&biased.observed_dist, &biased.true_dist).unwrap();
        let ks_control = ks_statistic(&control.observed_dist, &control.true_dist).unwrap();
        assert!(
            ks_biased > ks_control,
            "biased {ks_biased} vs control {ks_control}"
        );
        assert!(ks_biased > 0.1);
        assert_eq!(ks_control, 0.0);
    }

    #[test]
    fn observed_matches_product_of_truth_and_selection() {
        let truth = TrueDistribution::default_scenario();
        let sel = SelectionFn::LogisticZ { z0: 0.8, k: 6.0 };
        let cat = sample_catalog(&truth, &sel, 50_000, 11, &cfg()).unwrap();
        // p_obs ~ p_true * S, renormalized (selection is color-independent)
        let centers = cat.true_dist.centers();
        let mut expected: Vec<f64> = cat
            .true_dist
            .mass()
            .iter()
            .zip(&centers)
            .map(|(m, &z)| m * sel.eval(z, 0.0))
            .collect();
        let total: f64 = expected.iter().sum();
        for e in expected.iter_mut() {
            *e /= total;
        }
        for (obs, exp) in cat.observed_dist.mass().iter().zip(&expected) {
            assert!((obs - exp).abs() < 0.01, "{obs} vs {exp}");
        }
    }

    #[test]
    fn recalibrate_fixed_point_at_target() {
        let truth = TrueDistribution::default_scenario();
        let cat = sample_catalog(&truth, &SelectionFn::Unit, 3000, 5, &cfg()).unwrap();
        let out = hk_recalibrate(&cat.true_dist, &cat.true_dist, &cfg(), 50, 0.05).unwrap();
        assert!(out.converged);
        // starting at the target there is nothing to improve beyond the
        // tiny empty-bin floor perturbation of the initial logits
        let first = out.loss_trace.first().unwrap();
        let last = out.loss_trace.last().unwrap();
        assert!(last <= first);
        for (r, t) in out.recovered.mass().iter().zip(cat.true_dist.mass()) {
            assert!((r - t).abs() < 0.01, "moved away from target: {r} vs {t}");
        }
    }

    #[test]
    fn recalibrate_moves_one_hot_to_adjacent_target() {
        let small = HKConfig {
            n_bins: 8,
            z_range: (0.0, 2.0),
            ..HKConfig::default()
        };
        let edges = crate::transport::uniform_edges(8, 0.0, 2.0);
        let mut obs_mass = vec![0.0; 8];
        obs_mass[2] = 1.0;
        let mut tgt_mass = vec![0.0; 8];
        tgt_mass[3] = 1.0;
        let observed = Histogram::from_mass(edges.clone(), obs_mass).unwrap();
        let target = Histogram::from_mass(edges, tgt_mass).unwrap();
        let out = hk_recalibrate(&observed, &target, &small, 500, 0.05).unwrap();
        assert!(
            out.recovered.mass()[3] >= 0.9,
            "target bin mass {}",
            out.recovered.mass()[3]
        );
    }

    #[test]
    fn recalibrate_output_stays_on_simplex() {
        let truth = TrueDistribution::default_scenario();
        let sel = SelectionFn::LogisticZ { z0: 0.8, k: 6.0 };
        let cat = sample_catalog(&truth, &sel, 5000, 7, &cfg()).unwrap();
        let out = hk_recalibrate(&cat.observed_dist, &cat.true_dist, &cfg(), 120, 0.05).unwrap();
        let total: f64 = out.recovered.mass().iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(out.recovered.mass().iter().all(|&m| m >= 0.0));
    }

    #[test]
    fn recalibrate_halves_distance_on_logistic_scenario() {
        let truth = TrueDistribution::default_scenario();
        let sel = SelectionFn::LogisticZ { z0: 0.8, k: 6.0 };
        let cat = sample_catalog(&truth, &sel, 10_000, 7, &cfg()).unwrap();
        let hk_cfg = cfg();
        let before = crate::transport::hk_distance_sq(&cat.observed_dist, &cat.true_dist, &hk_cfg)
            .unwrap()
            .max(0.0)
            .sqrt();
        let out = hk_recalibrate(&cat.observed_dist, &cat.true_dist, &hk_cfg, 600, 0.2).unwrap();
        let after = crate::transport::hk_distance_sq(&out.recovered, &cat.true_dist, &hk_cfg)
            .unwrap()
            .max(0.0)
            .sqrt();
        assert!(
            after <= 0.5 * before,
            "recovered {after} vs observed {before}"
        );
    }

    #[test]
    fn isotonic_projection_sorts_violators() {
        let mut v = vec![1.0, 3.0, 2.0, 4.0];
        let w = vec![1.0, 1.0, 1.0, 1.0];
        isotonic_projection(&mut v, &w);
        assert_eq!(v, vec![1.0, 2.5, 2.5, 4.0]);
        for pair in v.windows(2) {
            assert!(pair[0] <= pair[1]);
        }
        let mut already = vec![0.1, 0.5, 0.9];
        isotonic_projection(&mut already, &[1.0, 2.0, 1.0]);
        assert_eq!(already, vec![0.1, 0.5, 0.9]);
    }

    #[test]
    fn ablation_rejects_colorless_catalog() {
        let truth = TrueDistribution::default_scenario();
        let mut cat = sample_catalog(&truth, &SelectionFn::Unit, 100, 7, &cfg()).unwrap();
        for row in cat.rows.iter_mut() {
            row.g_r = None;
        }
        assert!(ablation_run(&cat, &AblationConfig::default(), &cfg()).is_err());
    }

    #[test]
    fn ablation_hk_mode_beats_mse_under_bias() {
        let truth = TrueDistribution::default_scenario();
        let sel = SelectionFn::LogisticZ { z0: 0.8, k: 6.0 };
        let cat = sample_catalog(&truth, &sel, 10_000, 7, &cfg()).unwrap();
        let out = ablation_run(&cat, &AblationConfig::default(), &cfg()).unwrap();
        let mse = out.arm(AblationMode::MseOnly).report.overall.log_mse;
        let hk = out.arm(AblationMode::HkDistance).report.overall.log_mse;
        assert!(hk < mse, "hk {hk} vs mse {mse}");
    }

    #[test]
    fn ablation_control_shows_no_separation() {
        let truth = TrueDistribution::default_scenario();
        let cat = sample_catalog(&truth, &SelectionFn::Unit, 10_000, 7, &cfg()).unwrap();
        let out = ablation_run(&cat, &AblationConfig::default(), &cfg()).unwrap();
        let base = AblationMode::MseOnly;
        for mode in [
            AblationMode::ColorAware,
            AblationMode::HkDistance,
            AblationMode::ColorAwareHk,
        ] {
            let (mean, std) = out.paired_bootstrap(base, mode, 200, 99);
            assert!(
                mean.abs() < 2.0 * std.max(1e-9),
                "{}: diff {mean} vs 2*std {}",
                mode.label(),
                2.0 * std
            );
        }
    }
}
