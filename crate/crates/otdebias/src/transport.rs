//! Histogram transport: log-domain entropic Sinkhorn, the Hellinger term,
//! the Hellinger-Kantorovich (HK) distance, and a differentiable HK training
//! loss built on a Gaussian soft histogram.
//!
//! Conventions used throughout:
//!
//! - Histograms are normalized probability vectors over bins of a closed
//!   interval; bin positions are bin centers.
//! - The transport cost between bins is the squared center distance.
//! - Raw entropic transport carries an entropic bias (`OT_eps(p, p) > 0`), so
//!   every HK quantity reported here is debiased:
//!   `S(p, q) = OT(p, q) - (OT(p, p) + OT(q, q)) / 2`, which is zero for
//!   identical inputs. Raw costs remain available on [`TransportPlan`].

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Configuration for histogramming and the HK solver.
///
/// Defaults follow the training configuration this crate verifies: 40 bins on
/// `[0, 2]`, entropic regularization 0.1, stopping tolerance 1e-4, at most 50
/// iterations, and Hellinger coupling weight 1.0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HKConfig {
    pub n_bins: usize,
    pub z_range: (f64, f64),
    pub eps_entropic: f64,
    pub stop_tol: f64,
    pub max_iter: usize,
    pub delta: f64,
}

impl Default for HKConfig {
    fn default() -> Self {
        HKConfig {
            n_bins: 40,
            z_range: (0.0, 2.0),
            eps_entropic: 0.1,
            stop_tol: 1e-4,
            max_iter: 50,
            delta: 1.0,
        }
    }
}

impl HKConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bins < 2 {
            return Err(Error::param(format!("n_bins {} < 2", self.n_bins)));
        }
        if !(self.z_range.1 > self.z_range.0) {
            return Err(Error::param(format!(
                "z_range ({}, {}) not increasing",
                self.z_range.0, self.z_range.1
            )));
        }
        if self.eps_entropic <= 0.0 || self.stop_tol <= 0.0 || self.delta < 0.0 {
            return Err(Error::param("eps, stop_tol must be > 0 and delta >= 0"));
        }
        if self.max_iter == 0 {
            return Err(Error::param("max_iter must be >= 1"));
        }
        Ok(())
    }

    /// Bin width implied by the range and count.
    pub fn bin_width(&self) -> f64 {
        (self.z_range.1 - self.z_range.0) / self.n_bins as f64
    }
}

/// Binned probability mass over a closed interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Histogram {
    edges: Vec<f64>,
    mass: Vec<f64>,
    /// Number of input values that fell outside the range and were clamped
    /// into the end bins.
    clamped: usize,
}

impl Histogram {
    /// Bin a list of values. Bins are left-closed right-open, the last bin is
    /// right-closed; out-of-range values are clamped into the end bins and
    /// counted in [`clamped`](Self::clamped).
    pub fn from_values(values: &[f64], cfg: &HKConfig) -> Result<Histogram> {
        cfg.validate()?;
        if values.is_empty() {
            return Err(Error::data("cannot histogram an empty value list"));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::data(format!("non-finite value {bad}")));
        }
        let edges = uniform_edges(cfg.n_bins, cfg.z_range.0, cfg.z_range.1);
        let mut counts = vec![0usize; cfg.n_bins];
        let mut clamped = 0usize;
        for &v in values {
            let idx = if v < edges[0] {
                clamped += 1;
                0
            } else if v > edges[cfg.n_bins] {
                clamped += 1;
                cfg.n_bins - 1
            } else {
                // partition_point gives the count of edges <= v, so the bin of
                // v is that count minus one; v == top edge lands in the last bin.
                (edges.partition_point(|e| *e <= v) - 1).min(cfg.n_bins - 1)
            };
            counts[idx] += 1;
        }
        let n = values.len() as f64;
        let mass = counts.iter().map(|&c| c as f64 / n).collect();
        Ok(Histogram {
            edges,
            mass,
            clamped,
        })
    }

    /// Wrap an existing mass vector. Mass must be nonnegative and sum to
    /// 1 within 1e-9; it is renormalized exactly afterwards.
    pub fn from_mass(edges: Vec<f64>, mass: Vec<f64>) -> Result<Histogram> {
        if edges.len() != mass.len() + 1 || mass.is_empty() {
            return Err(Error::shape(format!(
                "{} edges vs {} mass entries",
                edges.len(),
                mass.len()
            )));
        }
        if edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::data("edges not strictly increasing"));
        }
        if mass.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
            return Err(Error::data("negative or non-finite mass"));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::data(format!("mass sums to {total}, not 1")));
        }
        let mass = mass.iter().map(|m| m / total).collect();
        Ok(Histogram {
            edges,
            mass,
            clamped: 0,
        })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn n_bins(&self) -> usize {
        self.mass.len()
    }

    pub fn clamped(&self) -> usize {
        self.clamped
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]))
            .collect()
    }

    pub(crate) fn check_same_binning(&self, other: &Histogram) -> Result<()> {
        if self.edges.len() != other.edges.len()
            || self
                .edges
                .iter()
                .zip(&other.edges)
                .any(|(a, b)| (a - b).abs() > 1e-12)
        {
            return Err(Error::data("histograms are binned differently"));
        }
        Ok(())
    }
}

pub fn uniform_edges(n_bins: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..=n_bins)
        .map(|k| lo + k as f64 * (hi - lo) / n_bins as f64)
        .collect()
}

/// Squared center-distance cost matrix between two sets of bin positions.
pub fn squared_distance_cost(from: &[f64], to: &[f64]) -> Tensor {
    let mut data = Vec::with_capacity(from.len() * to.len());
    for &x in from {
        for &y in to {
            data.push((x - y) * (x - y));
        }
    }
    Tensor::from_vec_unchecked(vec![from.len(), to.len()], data)
}

/// Entropic transport plan with diagnostics.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    /// Coupling matrix, row marginal `a`, column marginal `b`.
    pub plan: Tensor,
    /// Cost matrix the plan was solved against.
    pub cost: Tensor,
    /// Sharp transport cost `<T, C>` of the entropic plan.
    pub transport_cost: f64,
    /// Dual objective `<f, a> + <g, b>`; its gradient in `a` is exactly `f`.
    pub dual_value: f64,
    /// Converged dual potentials (`-inf` on zero-mass bins).
    pub potential_a: Vec<f64>,
    pub potential_b: Vec<f64>,
    pub eps_entropic: f64,
    pub iterations_used: usize,
    /// Max marginal constraint violation of the returned plan.
    pub marginal_err: f64,
    /// Marginal violation after each iteration.
    pub err_trace: Vec<f64>,
}

/// Log-domain Sinkhorn between two normalized histograms.
///
/// Iterates until the largest marginal violation drops below `stop_tol` or
/// `max_iter` sweeps have run; non-convergence is not an error, the plan is
/// returned with the achieved `marginal_err` recorded.
pub fn sinkhorn(
    a: &Histogram,
    b: &Histogram,
    cost: &Tensor,
    eps: f64,
    stop_tol: f64,
    max_iter: usize,
) -> Result<TransportPlan> {
    sinkhorn_warm(a.mass(), b.mass(), cost, eps, stop_tol, max_iter, None)
}

/// Sinkhorn on raw mass vectors, optionally warm-started from previous
/// potentials (used by the HK loss's repeated nearby solves).
pub fn sinkhorn_warm(
    a: &[f64],
    b: &[f64],
    cost: &Tensor,
    eps: f64,
    stop_tol: f64,
    max_iter: usize,
    warm: Option<(&[f64], &[f64])>,
) -> Result<TransportPlan> {
    let n = a.len();
    let m = b.len();
    if cost.shape() != [n, m] {
        return Err(Error::shape(format!(
            "cost shape {:?} vs marginals {}x{}",
            cost.shape(),
            n,
            m
        )));
    }
    for (name, v) in [("a", a), ("b", b)] {
        let total: f64 = v.iter().sum();
        if (total - 1.0).abs() > 1e-9 || v.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::data(format!(
                "marginal {name} is not a normalized probability vector (sum {total})"
            )));
        }
    }
    if cost.data().iter().any(|&c| c < 0.0 || !c.is_finite()) {
        return Err(Error::data("cost matrix must be finite and nonnegative"));
    }
    if eps <= 0.0 || stop_tol <= 0.0 {
        return Err(Error::param("eps and stop_tol must be positive"));
    }

    let log_a: Vec<f64> = a.iter().map(|&x| safe_ln(x)).collect();
    let log_b: Vec<f64> = b.iter().map(|&x| safe_ln(x)).collect();
    // Cost pre-scaled by 1/eps; potentials are also kept scaled by 1/eps so
    // the inner loops are pure additions.
    let csc: Vec<f64> = cost.data().iter().map(|&c| c / eps).collect();
    let (mut fs, mut gs): (Vec<f64>, Vec<f64>) = match warm {
        Some((f0, g0)) if f0.len() == n && g0.len() == m => (
            f0.iter().map(|&f| f / eps).collect(),
            g0.iter().map(|&g| g / eps).collect(),
        ),
        _ => (vec![0.0; n], vec![0.0; m]),
    };
    for (fi, &la) in fs.iter_mut().zip(&log_a) {
        if la == f64::NEG_INFINITY {
            *fi = f64::NEG_INFINITY;
        }
    }
    for (gj, &lb) in gs.iter_mut().zip(&log_b) {
        if lb == f64::NEG_INFINITY {
            *gj = f64::NEG_INFINITY;
        }
    }

    let mut err_trace = Vec::new();
    let mut iterations_used = 0;
    let mut marginal_err = f64::INFINITY;
    for _ in 0..max_iter {
        for i in 0..n {
            if log_a[i] == f64::NEG_INFINITY {
                continue;
            }
            let row = &csc[i * m..(i + 1) * m];
            fs[i] = log_a[i] - lse_shifted(&gs, row);
        }
        for j in 0..m {
            if log_b[j] == f64::NEG_INFINITY {
                continue;
            }
            gs[j] = log_b[j] - lse_col(&fs, &csc, j, m);
        }
        iterations_used += 1;

        // After the column update, column marginals hold exactly; the row
        // violation measures remaining progress.
        let mut err = 0.0f64;
        for i in 0..n {
            let mut row_sum = 0.0;
            if log_a[i] != f64::NEG_INFINITY {
                let row = &csc[i * m..(i + 1) * m];
                for j in 0..m {
                    if gs[j] != f64::NEG_INFINITY {
                        row_sum += (fs[i] + gs[j] - row[j]).exp();
                    }
                }
            }
            err = err.max((row_sum - a[i]).abs());
        }
        err_trace.push(err);
        marginal_err = err;
        if err < stop_tol {
            break;
        }
    }

    // Assemble plan and costs.
    let mut plan = vec![0.0f64; n * m];
    let mut transport_cost = 0.0;
    for i in 0..n {
        if log_a[i] == f64::NEG_INFINITY {
            continue;
        }
        for j in 0..m {
            if log_b[j] == f64::NEG_INFINITY {
                continue;
            }
            let t = (fs[i] + gs[j] - csc[i * m + j]).exp();
            plan[i * m + j] = t;
            transport_cost += t * cost.data()[i * m + j];
        }
    }
    let potential_a: Vec<f64> = fs.iter().map(|&f| f * eps).collect();
    let potential_b: Vec<f64> = gs.iter().map(|&g| g * eps).collect();
    let mut dual_value = 0.0;
    for (f, &ai) in potential_a.iter().zip(a) {
        if ai > 0.0 {
            dual_value += f * ai;
        }
    }
    for (g, &bj) in potential_b.iter().zip(b) {
        if bj > 0.0 {
            dual_value += g * bj;
        }
    }

    Ok(TransportPlan {
        plan: Tensor::from_vec_unchecked(vec![n, m], plan),
        cost: cost.clone(),
        transport_cost,
        dual_value,
        potential_a,
        potential_b,
        eps_entropic: eps,
        iterations_used,
        marginal_err,
        err_trace,
    })
}

fn safe_ln(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// log sum_j exp(g[j] - row[j]) with max-shift; -inf when empty.
fn lse_shifted(gs: &[f64], row: &[f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (g, c) in gs.iter().zip(row) {
        let v = g - c;
        if v > max {
            max = v;
        }
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut sum = 0.0;
    for (g, c) in gs.iter().zip(row) {
        let v = g - c;
        if v != f64::NEG_INFINITY {
            sum += (v - max).exp();
        }
    }
    max + sum.ln()
}

fn lse_col(fs: &[f64], csc: &[f64], j: usize, m: usize) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (i, f) in fs.iter().enumerate() {
        let v = f - csc[i * m + j];
        if v > max {
            max = v;
        }
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut sum = 0.0;
    for (i, f) in fs.iter().enumerate() {
        let v = f - csc[i * m + j];
        if v != f64::NEG_INFINITY {
            sum += (v - max).exp();
        }
    }
    max + sum.ln()
}

/// Squared Hellinger-style discrepancy `2 * sum_i (sqrt(p_i) - sqrt(q_i))^2`.
pub fn hellinger_sq(p: &Histogram, q: &Histogram) -> Result<f64> {
    p.check_same_binning(q)?;
    Ok(hellinger_sq_mass(p.mass(), q.mass()))
}

pub(crate) fn hellinger_sq_mass(p: &[f64], q: &[f64]) -> f64 {
    2.0 * p
        .iter()
        .zip(q)
        .map(|(&a, &b)| {
            let d = a.sqrt() - b.sqrt();
            d * d
        })
        .sum::<f64>()
}

/// Which marginals enter the transport term of the HK distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransportMarginals {
    /// Transport the densities themselves (primary form).
    Densities,
    /// Transport the renormalized square-root densities (Fisher-Rao flavored
    /// variant). The square roots are not probability vectors, so they are
    /// renormalized before solving; the two forms are NOT asserted equal.
    SqrtDensities,
}

/// Itemized HK computation.
#[derive(Debug, Clone, Serialize)]
pub struct HKBreakdown {
    /// Debiased squared HK distance: transport + delta * hellinger.
    pub hk2: f64,
    /// Debiased sharp transport cost.
    pub transport: f64,
    /// Raw (biased) sharp transport cost of the (p, q) solve.
    pub transport_raw: f64,
    pub hellinger: f64,
    pub iterations: usize,
    pub marginal_err: f64,
}

/// Debiased squared HK distance between two histograms on shared bins.
pub fn hk_distance_sq(p: &Histogram, q: &Histogram, cfg: &HKConfig) -> Result<f64> {
    Ok(hk_breakdown(p, q, cfg, TransportMarginals::Densities)?.hk2)
}

pub fn hk_breakdown(
    p: &Histogram,
    q: &Histogram,
    cfg: &HKConfig,
    marginals: TransportMarginals,
) -> Result<HKBreakdown> {
    cfg.validate()?;
    p.check_same_binning(q)?;
    // The debiased cost is symmetric in exact arithmetic; running the solver
    // on a canonical argument order makes it symmetric in floating point too.
    let (p, q) = if lex_le(p.mass(), q.mass()) {
        (p, q)
    } else {
        (q, p)
    };
    let hell = hellinger_sq_mass(p.mass(), q.mass());
    let centers = p.centers();
    let cost = squared_distance_cost(&centers, &centers);

    let (pm, qm): (Vec<f64>, Vec<f64>) = match marginals {
        TransportMarginals::Densities => (p.mass().to_vec(), q.mass().to_vec()),
        TransportMarginals::SqrtDensities => (renorm_sqrt(p.mass()), renorm_sqrt(q.mass())),
    };
    let pq = sinkhorn_warm(&pm, &qm, &cost, cfg.eps_entropic, cfg.stop_tol, cfg.max_iter, None)?;
    let pp = sinkhorn_warm(&pm, &pm, &cost, cfg.eps_entropic, cfg.stop_tol, cfg.max_iter, None)?;
    let qq = sinkhorn_warm(&qm, &qm, &cost, cfg.eps_entropic, cfg.stop_tol, cfg.max_iter, None)?;
    let transport = pq.transport_cost - 0.5 * (pp.transport_cost + qq.transport_cost);
    Ok(HKBreakdown {
        hk2: transport + cfg.delta * hell,
        transport,
        transport_raw: pq.transport_cost,
        hellinger: hell,
        iterations: pq.iterations_used,
        marginal_err: pq.marginal_err,
    })
}

fn renorm_sqrt(mass: &[f64]) -> Vec<f64> {
    let roots: Vec<f64> = mass.iter().map(|&m| m.sqrt()).collect();
    let total: f64 = roots.iter().sum();
    roots.iter().map(|r| r / total).collect()
}

fn lex_le(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    true
}

/// Result of evaluating the differentiable HK loss.
#[derive(Debug, Clone)]
pub struct HkLoss {
    pub loss: f64,
    /// Analytic d loss / d pred_z, one entry per sample.
    pub grad: Vec<f64>,
    /// Gaussian soft histogram of the predictions.
    pub soft_hist: Histogram,
    pub transport: f64,
    pub hellinger: f64,
}

/// Target-bound HK loss evaluator.
///
/// Holds everything that depends only on the target histogram (cost matrix,
/// target self-transport) and warm-starts successive solves, which makes
/// gradient-descent loops and finite-difference sweeps cheap.
pub struct HkLossContext {
    cfg: HKConfig,
    centers: Vec<f64>,
    cost: Tensor,
    target: Histogram,
    qq_dual: f64,
    tol: f64,
    max_iter: usize,
    last_pq: Option<(Vec<f64>, Vec<f64>)>,
    last_pp: Option<(Vec<f64>, Vec<f64>)>,
}

impl HkLossContext {
    /// The solver tolerance here is far below `cfg.stop_tol`: the envelope
    /// gradient (dual potentials) is only exact at convergence.
    pub fn new(target: &Histogram, cfg: &HKConfig) -> Result<Self> {
        cfg.validate()?;
        let centers = target.centers();
        Self::build(target.clone(), cfg, centers)
    }

    /// Context whose target is smoothed with the same Gaussian kernel the
    /// soft histogram uses. Predictions that exactly reproduce the target's
    /// sample set then score ~0 instead of paying the smoothing bias.
    pub fn with_smoothed_target(
        target: &Histogram,
        cfg: &HKConfig,
        bandwidth: f64,
    ) -> Result<Self> {
        cfg.validate()?;
        if bandwidth <= 0.0 {
            return Err(Error::param(format!("bandwidth {bandwidth} must be > 0")));
        }
        let centers = target.centers();
        let inv = 1.0 / (2.0 * bandwidth * bandwidth);
        let mut smoothed = vec![0.0; centers.len()];
        for (j, &qj) in target.mass().iter().enumerate() {
            if qj == 0.0 {
                continue;
            }
            let mut kernel: Vec<f64> = centers
                .iter()
                .map(|&c| (-(c - centers[j]) * (c - centers[j]) * inv).exp())
                .collect();
            let total: f64 = kernel.iter().sum();
            for (s, k) in smoothed.iter_mut().zip(&kernel) {
                *s += qj * k / total;
            }
            kernel.clear();
        }
        let target = Histogram::from_mass(target.edges().to_vec(), smoothed)?;
        Self::build(target, cfg, centers)
    }

    fn build(target: Histogram, cfg: &HKConfig, centers: Vec<f64>) -> Result<Self> {
        let cost = squared_distance_cost(&centers, &centers);
        let tol = cfg.stop_tol.min(1e-12);
        let max_iter = cfg.max_iter.max(5_000);
        let qq = sinkhorn_warm(
            target.mass(),
            target.mass(),
            &cost,
            cfg.eps_entropic,
            tol,
            max_iter,
            None,
        )?;
        Ok(HkLossContext {
            cfg: cfg.clone(),
            centers,
            cost,
            qq_dual: qq.dual_value,
            target,
            tol,
            max_iter,
            last_pq: None,
            last_pp: None,
        })
    }

    pub fn target(&self) -> &Histogram {
        &self.target
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    /// Debiased HK objective and its gradient with respect to the histogram
    /// mass vector `p` (which must lie on the simplex).
    ///
    /// The transport term is the debiased dual objective, whose exact
    /// gradient is the difference of dual potentials; the Hellinger term is
    /// differentiated in closed form.
    pub fn eval_hist(&mut self, p: &[f64]) -> Result<(f64, Vec<f64>)> {
        let q = self.target.mass();
        let eps = self.cfg.eps_entropic;
        let pq = sinkhorn_warm(
            p,
            q,
            &self.cost,
            eps,
            self.tol,
            self.max_iter,
            self.last_pq.as_ref().map(|(f, g)| (f.as_slice(), g.as_slice())),
        )?;
        let pp = sinkhorn_warm(
            p,
            p,
            &self.cost,
            eps,
            self.tol,
            self.max_iter,
            self.last_pp.as_ref().map(|(f, g)| (f.as_slice(), g.as_slice())),
        )?;
        let transport = pq.dual_value - 0.5 * (pp.dual_value + self.qq_dual);
        let hell = hellinger_sq_mass(p, q);
        let loss = transport + self.cfg.delta * hell;

        let mut grad = vec![0.0; p.len()];
        for i in 0..p.len() {
            let f_pq = finite_or(pq.potential_a[i], 0.0);
            // Self-transport contributes through both marginals.
            let f_pp = 0.5 * (finite_or(pp.potential_a[i], 0.0) + finite_or(pp.potential_b[i], 0.0));
            let hell_grad = if p[i] > 1e-300 {
                2.0 * (1.0 - (q[i] / p[i]).sqrt())
            } else if q[i] == 0.0 {
                2.0
            } else {
                -1e18
            };
            grad[i] = f_pq - f_pp + self.cfg.delta * hell_grad;
        }
        self.last_pq = Some((pq.potential_a, pq.potential_b));
        self.last_pp = Some((pp.potential_a, pp.potential_b));
        Ok((loss, grad))
    }

    /// Loss and per-sample gradient for raw redshift predictions, chained
    /// through the Gaussian soft histogram.
    pub fn eval_predictions(&mut self, pred_z: &[f64], bandwidth: f64) -> Result<HkLoss> {
        if bandwidth <= 0.0 {
            return Err(Error::param(format!("bandwidth {bandwidth} must be > 0")));
        }
        if pred_z.is_empty() {
            return Err(Error::data("no predictions"));
        }
        let (p, rows) = soft_histogram_rows(pred_z, &self.centers, bandwidth);
        let (loss, grad_p) = self.eval_hist(&p)?;
        let hell = hellinger_sq_mass(&p, self.target.mass());
        let transport = loss - self.cfg.delta * hell;

        let n_samples = pred_z.len() as f64;
        let inv_bw2 = 1.0 / (bandwidth * bandwidth);
        let mut grad = vec![0.0; pred_z.len()];
        for (s, row) in rows.iter().enumerate() {
            let center_mean: f64 = row.iter().zip(&self.centers).map(|(r, c)| r * c).sum();
            let mut acc = 0.0;
            for i in 0..row.len() {
                // d p_i / d z_s = row_s(i) * (c_i - mean_c(row_s)) / bw^2 / n
                acc += grad_p[i] * row[i] * (self.centers[i] - center_mean);
            }
            grad[s] = acc * inv_bw2 / n_samples;
        }
        let soft_hist = Histogram::from_mass(self.target.edges().to_vec(), p)?;
        Ok(HkLoss {
            loss,
            grad,
            soft_hist,
            transport,
            hellinger: hell,
        })
    }
}

fn finite_or(x: f64, fallback: f64) -> f64 {
    if x.is_finite() {
        x
    } else {
        fallback
    }
}

/// Gaussian soft histogram: each sample contributes a normalized kernel row.
/// Returns the pooled histogram mass and the per-sample rows.
pub fn soft_histogram_rows(
    pred_z: &[f64],
    centers: &[f64],
    bandwidth: f64,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    let mut pooled = vec![0.0; centers.len()];
    let mut rows = Vec::with_capacity(pred_z.len());
    for &z in pred_z {
        let mut row: Vec<f64> = centers
            .iter()
            .map(|&c| (-(z - c) * (z - c) * inv).exp())
            .collect();
        let total: f64 = row.iter().sum();
        for r in row.iter_mut() {
            *r /= total;
        }
        for (p, r) in pooled.iter_mut().zip(&row) {
            *p += r;
        }
        rows.push(row);
    }
    let n = pred_z.len() as f64;
    for p in pooled.iter_mut() {
        *p /= n;
    }
    (pooled, rows)
}

/// One-shot HK loss evaluation (builds a smoothed-target context internally).
pub fn hk_loss(
    pred_z: &[f64],
    target: &Histogram,
    cfg: &HKConfig,
    bandwidth: f64,
) -> Result<HkLoss> {
    HkLossContext::with_smoothed_target(target, cfg, bandwidth)?.eval_predictions(pred_z, bandwidth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn hist2(mass: [f64; 2]) -> Histogram {
        Histogram::from_mass(vec![0.0, 1.0, 2.0], mass.to_vec()).unwrap()
    }

    fn random_hist(rng: &mut Rng, cfg: &HKConfig) -> Histogram {
        let mass: Vec<f64> = (0..cfg.n_bins).map(|_| rng.uniform()).collect();
        let total: f64 = mass.iter().sum();
        Histogram::from_mass(
            uniform_edges(cfg.n_bins, cfg.z_range.0, cfg.z_range.1),
            mass.iter().map(|m| m / total).collect(),
        )
        .unwrap()
    }

    #[test]
    fn histogram_boundary_goes_to_upper_bin() {
        let cfg = HKConfig::default();
        let h = Histogram::from_values(&[1.0], &cfg).unwrap();
        let expected: Vec<f64> = (0..40).map(|i| if i == 20 { 1.0 } else { 0.0 }).collect();
        assert_eq!(h.mass(), expected.as_slice());
    }

    #[test]
    fn histogram_uniform_grid_fills_evenly() {
        let cfg = HKConfig::default();
        let values: Vec<f64> = (0..4000).map(|j| (j as f64 + 0.5) * 2.0 / 4000.0).collect();
        let h = Histogram::from_values(&values, &cfg).unwrap();
        for &m in h.mass() {
            assert!((m - 0.025).abs() < 1e-12);
        }
        assert_eq!(h.clamped(), 0);
    }

    #[test]
    fn histogram_concentrates_equal_values() {
        let cfg = HKConfig::default();
        let h = Histogram::from_values(&[0.42; 17], &cfg).unwrap();
        assert_eq!(h.mass().iter().filter(|&&m| m > 0.0).count(), 1);
        assert!((h.mass().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_clamps_and_counts_out_of_range() {
        let cfg = HKConfig::default();
        let h = Histogram::from_values(&[-0.5, 0.1, 2.5], &cfg).unwrap();
        assert_eq!(h.clamped(), 2);
        assert!(h.mass()[0] > 0.0 && h.mass()[39] > 0.0);
    }

    #[test]
    fn histogram_rejects_empty() {
        assert!(Histogram::from_values(&[], &HKConfig::default()).is_err());
    }

    #[test]
    fn sinkhorn_forced_coupling() {
        // a=[1,0], b=[0,1] admits exactly one coupling; cost must be C_01 = 1.
        let a = hist2([1.0, 0.0]);
        let b = hist2([0.0, 1.0]);
        let cost = Tensor::from_vec(&[2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let plan = sinkhorn(&a, &b, &cost, 0.01, 1e-10, 500).unwrap();
        assert!((plan.transport_cost - 1.0).abs() < 1e-9);
        assert!((plan.plan.get(&[0, 1]).unwrap() - 1.0).abs() < 1e-9);
        assert!(plan.plan.get(&[0, 0]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn sinkhorn_identity_marginals_near_zero_cost() {
        let a = hist2([0.5, 0.5]);
        let cost = Tensor::from_vec(&[2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let plan = sinkhorn(&a, &a, &cost, 1e-3, 1e-12, 2000).unwrap();
        assert!(plan.transport_cost < 1e-6, "cost {}", plan.transport_cost);
    }

    #[test]
    fn sinkhorn_rejects_unnormalized() {
        let bad = Histogram {
            edges: vec![0.0, 1.0, 2.0],
            mass: vec![0.7, 0.7],
            clamped: 0,
        };
        let a = hist2([0.5, 0.5]);
        let cost = Tensor::from_vec(&[2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!(sinkhorn(&bad, &a, &cost, 0.1, 1e-4, 50).is_err());
    }

    #[test]
    fn sinkhorn_paper_configuration_converges() {
        let cfg = HKConfig::default();
        let mut rng = Rng::new(11);
        let mut iters = Vec::new();
        for _ in 0..20 {
            let a = random_hist(&mut rng, &cfg);
            let b = random_hist(&mut rng, &cfg);
            let centers = a.centers();
            let cost = squared_distance_cost(&centers, &centers);
            let plan = sinkhorn(&a, &b, &cost, cfg.eps_entropic, cfg.stop_tol, cfg.max_iter)
                .unwrap();
            assert!(
                plan.marginal_err < cfg.stop_tol,
                "did not converge: {}",
                plan.marginal_err
            );
            iters.push(plan.iterations_used);
        }
        assert!(iters.iter().all(|&k| k <= 50));
    }

    #[test]
    fn sinkhorn_marginal_error_non_increasing() {
        let cfg = HKConfig::default();
        let mut rng = Rng::new(23);
        for _ in 0..10 {
            let a = random_hist(&mut rng, &cfg);
            let b = random_hist(&mut rng, &cfg);
            let centers = a.centers();
            let cost = squared_distance_cost(&centers, &centers);
            let plan = sinkhorn(&a, &b, &cost, 0.1, 1e-12, 300).unwrap();
            for w in plan.err_trace.windows(2) {
                assert!(
                    w[1] <= w[0] + 1e-12,
                    "marginal error increased: {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn hellinger_values() {
        let p = hist2([1.0, 0.0]);
        let q = hist2([0.0, 1.0]);
        assert_eq!(hellinger_sq(&p, &p).unwrap(), 0.0);
        assert!((hellinger_sq(&p, &q).unwrap() - 4.0).abs() < 1e-12);
        let r = hist2([0.5, 0.5]);
        let expected = 2.0 * ((0.5f64.sqrt() - 1.0).powi(2) + 0.5);
        assert!((hellinger_sq(&r, &p).unwrap() - expected).abs() < 1e-9);
        assert!((expected - 1.171573).abs() < 1e-6);
    }

    #[test]
    fn hellinger_rejects_binning_mismatch() {
        let p = hist2([1.0, 0.0]);
        let q = Histogram::from_mass(vec![0.0, 0.5, 2.0], vec![1.0, 0.0]).unwrap();
        assert!(hellinger_sq(&p, &q).is_err());
    }

    #[test]
    fn hk_identity_is_zero_after_debias() {
        let cfg = HKConfig::default();
        let mut rng = Rng::new(5);
        let p = random_hist(&mut rng, &cfg);
        let d2 = hk_distance_sq(&p, &p, &cfg).unwrap();
        assert!(d2.abs() < 1e-6, "identity hk2 {d2}");
    }

    #[test]
    fn hk_adjacent_one_hots() {
        // Unit-spaced one-hot bins; forced coupling gives transport 1 and the
        // Hellinger term contributes 4, so hk2 = 5 at delta = 1.
        let cfg = HKConfig {
            n_bins: 2,
            z_range: (0.0, 2.0),
            eps_entropic: 0.1,
            stop_tol: 1e-9,
            max_iter: 500,
            delta: 1.0,
        };
        let p = hist2([1.0, 0.0]);
        let q = hist2([0.0, 1.0]);
        let b = hk_breakdown(&p, &q, &cfg, TransportMarginals::Densities).unwrap();
        assert!((b.transport - 1.0).abs() < 1e-9, "transport {}", b.transport);
        assert!((b.hellinger - 4.0).abs() < 1e-12);
        assert!((b.hk2 - 5.0).abs() < 1e-9);
    }

    #[test]
    fn hk_symmetry_is_exact() {
        let cfg = HKConfig::default();
        let mut rng = Rng::new(77);
        for _ in 0..20 {
            let p = random_hist(&mut rng, &cfg);
            let q = random_hist(&mut rng, &cfg);
            let d_pq = hk_distance_sq(&p, &q, &cfg).unwrap();
            let d_qp = hk_distance_sq(&q, &p, &cfg).unwrap();
            assert_eq!(d_pq.to_bits(), d_qp.to_bits());
        }
    }

    #[test]
    fn hk_loss_matched_predictions_near_zero() {
        let cfg = HKConfig::default();
        let mut rng = Rng::new(3);
        let samples: Vec<f64> = (0..64).map(|_| 0.2 + 1.6 * rng.uniform()).collect();
        let target = Histogram::from_values(&samples, &cfg).unwrap();
        let out = hk_loss(&samples, &target, &cfg, cfg.bin_width()).unwrap();
        // Soft histogram vs hard histogram of the same samples: small but not
        // exactly zero.
        assert!(out.loss.abs() < 0.05, "loss {}", out.loss);
        let gnorm = out.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(gnorm < 1.0, "grad norm {gnorm}");
    }

    #[test]
    fn hk_loss_gradient_matches_finite_differences() {
        let cfg = HKConfig::default();
        let mut rng = Rng::new(9);
        let target_samples: Vec<f64> = (0..256).map(|_| 0.3 + 1.2 * rng.uniform()).collect();
        let target = Histogram::from_values(&target_samples, &cfg).unwrap();
        let pred: Vec<f64> = (0..32).map(|_| 0.1 + 1.8 * rng.uniform()).collect();
        let bw = cfg.bin_width();

        let mut ctx = HkLossContext::with_smoothed_target(&target, &cfg, bw).unwrap();
        let out = ctx.eval_predictions(&pred, bw).unwrap();
        let h = 1e-5;
        let mut max_rel = 0.0f64;
        for s in 0..pred.len() {
            let mut plus = pred.clone();
            plus[s] += h;
            let mut minus = pred.clone();
            minus[s] -= h;
            let lp = ctx.eval_predictions(&plus, bw).unwrap().loss;
            let lm = ctx.eval_predictions(&minus, bw).unwrap().loss;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (out.grad[s] - fd).abs() / fd.abs().max(1e-8);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn hk_loss_pushes_low_predictions_up() {
        let cfg = HKConfig::default();
        let target = Histogram::from_values(&[1.4, 1.5, 1.6, 1.5, 1.45], &cfg).unwrap();
        let pred = vec![0.2, 0.3, 0.25, 0.35];
        let out = hk_loss(&pred, &target, &cfg, cfg.bin_width()).unwrap();
        // All predictions sit below the target support: every gradient entry
        // must push the prediction upward (negative sign decreases the loss
        // when stepping against it).
        for &g in &out.grad {
            assert!(g < 0.0, "gradient {g} does not push up");
        }
    }

    #[test]
    fn hk_loss_rejects_bad_bandwidth() {
        let cfg = HKConfig::default();
        let target = Histogram::from_values(&[0.5, 1.0], &cfg).unwrap();
        assert!(hk_loss(&[0.5], &target, &cfg, 0.0).is_err());
        assert!(hk_loss(&[0.5], &target, &cfg, -1.0).is_err());
    }

    #[test]
    fn sqrt_variant_differs_but_agrees_at_identity() {
        let cfg = HKConfig::default();
        let mut rng = Rng::new(13);
        let p = random_hist(&mut rng, &cfg);
        let q = random_hist(&mut rng, &cfg);
        let prim = hk_breakdown(&p, &q, &cfg, TransportMarginals::Densities).unwrap();
        let sqrt = hk_breakdown(&p, &q, &cfg, TransportMarginals::SqrtDensities).unwrap();
        assert!((prim.hellinger - sqrt.hellinger).abs() < 1e-12);
        let sqrt_id = hk_breakdown(&p, &p, &cfg, TransportMarginals::SqrtDensities).unwrap();
        assert!(sqrt_id.hk2.abs() < 1e-6);
    }
}
