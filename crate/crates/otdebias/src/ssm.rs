//! Selective state-space recurrence over sequences and 8x8 feature grids.
//!
//! The recurrence is the diagonal form
//! `h_t = Abar(dt) * h_{t-1} + Bbar(dt) * x_t`, `y_t = C h_t + D x_t`,
//! with a per-step, input-dependent step size `dt` (the selective mechanism)
//! and a numerically stable discretization of `(A, B)`.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Per-channel diagonal state-space parameters.
///
/// `a` must be nonpositive so the discretized decay `exp(dt * a)` stays in
/// `(0, 1]` for any positive step.
#[derive(Debug, Clone)]
pub struct SSMParams {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    /// Switch point for the Taylor branch of the discretization.
    pub taylor_eps: f64,
}

impl SSMParams {
    pub fn new(a: Vec<f64>, b: Vec<f64>, c: Vec<f64>, d: Vec<f64>) -> Result<Self> {
        let dim = a.len();
        if b.len() != dim || c.len() != dim || d.len() != dim {
            return Err(Error::shape(format!(
                "parameter lengths differ: a={} b={} c={} d={}",
                a.len(),
                b.len(),
                c.len(),
                d.len()
            )));
        }
        if a.iter().any(|&v| v > 0.0 || !v.is_finite()) {
            return Err(Error::param("A must be elementwise <= 0 and finite"));
        }
        Ok(SSMParams {
            a,
            b,
            c,
            d,
            taylor_eps: 1e-6,
        })
    }

    /// Stable random instance: `a` in [-1, 0], others in [-1, 1].
    pub fn random(dim: usize, rng: &mut Rng) -> Self {
        SSMParams {
            a: (0..dim).map(|_| -rng.uniform()).collect(),
            b: (0..dim).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
            c: (0..dim).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
            d: (0..dim).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
            taylor_eps: 1e-6,
        }
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }
}

/// Zero-order-hold discretization of a diagonal channel.
///
/// `Abar = exp(dt * a)`; `Bbar = ((exp(dt * a) - 1) / (dt * a)) * b`, with the
/// first-order expansion `(1 + dt * a / 2) * b` of the same ratio below the
/// `eps` switch so the two branches agree to O(eps^2) at the boundary.
pub fn discretize(a: f64, b: f64, dt: f64, eps: f64) -> Result<(f64, f64)> {
    if dt <= 0.0 {
        return Err(Error::param(format!("step size {dt} must be positive")));
    }
    let da = dt * a;
    let abar = da.exp();
    let ratio = if da.abs() >= eps {
        (da.exp() - 1.0) / da
    } else {
        1.0 + 0.5 * da
    };
    Ok((abar, ratio * b))
}

/// Selective step sizes from raw positive inputs: each row is normalized to
/// geometric mean 1 via `exp(log d - mean(log d))`.
pub fn normalize_delta(delta_raw: &Tensor) -> Result<Tensor> {
    if delta_raw.shape().len() != 2 {
        return Err(Error::shape(format!(
            "expected T x D, got {:?}",
            delta_raw.shape()
        )));
    }
    if delta_raw.data().iter().any(|&v| v <= 0.0) {
        return Err(Error::data("raw step sizes must be positive"));
    }
    let (t_len, dim) = (delta_raw.shape()[0], delta_raw.shape()[1]);
    let mut out = vec![0.0; t_len * dim];
    for t in 0..t_len {
        let row = &delta_raw.data()[t * dim..(t + 1) * dim];
        let mean_log: f64 = row.iter().map(|v| v.ln()).sum::<f64>() / dim as f64;
        for (slot, &v) in out[t * dim..(t + 1) * dim].iter_mut().zip(row) {
            *slot = (v.ln() - mean_log).exp();
        }
    }
    Ok(Tensor::from_vec_unchecked(vec![t_len, dim], out))
}

/// Learned projection producing the raw step sizes.
#[derive(Debug, Clone)]
pub struct DeltaProjection {
    pub weight: LinearMap,
}

impl DeltaProjection {
    pub fn seeded(dim: usize, seed: u64) -> Self {
        DeltaProjection {
            weight: LinearMap::seeded(dim, dim, seed),
        }
    }
}

/// Full selective step computation: `softplus(linear(x_t))` per feature, then
/// per-row geometric-mean normalization.
pub fn selective_delta(x_seq: &Tensor, proj: &DeltaProjection) -> Result<Tensor> {
    if x_seq.shape().len() != 2 {
        return Err(Error::shape(format!("expected T x D, got {:?}", x_seq.shape())));
    }
    let (t_len, dim) = (x_seq.shape()[0], x_seq.shape()[1]);
    let mut raw = vec![0.0; t_len * dim];
    for t in 0..t_len {
        let row = &x_seq.data()[t * dim..(t + 1) * dim];
        let projected = proj.weight.apply(row)?;
        for (slot, v) in raw[t * dim..(t + 1) * dim].iter_mut().zip(projected) {
            *slot = softplus(v);
        }
    }
    normalize_delta(&Tensor::from_vec_unchecked(vec![t_len, dim], raw))
}

pub fn softplus(x: f64) -> f64 {
    // ln(1 + e^x) without overflow for large |x|.
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Outputs and final state of a scan.
#[derive(Debug, Clone)]
pub struct ScanResult {
    pub outputs: Tensor,
    pub final_state: Vec<f64>,
}

/// Left-to-right selective scan, O(T * D) work, zero initial state.
pub fn scan(x_seq: &Tensor, params: &SSMParams, dt_seq: &Tensor) -> Result<ScanResult> {
    if x_seq.shape().len() != 2 {
        return Err(Error::shape(format!("expected T x D, got {:?}", x_seq.shape())));
    }
    if x_seq.shape() != dt_seq.shape() {
        return Err(Error::shape(format!(
            "input shape {:?} vs step shape {:?}",
            x_seq.shape(),
            dt_seq.shape()
        )));
    }
    let (t_len, dim) = (x_seq.shape()[0], x_seq.shape()[1]);
    if dim != params.dim() {
        return Err(Error::shape(format!(
            "feature dim {} vs parameter dim {}",
            dim,
            params.dim()
        )));
    }
    let mut state = vec![0.0f64; dim];
    let mut outputs = vec![0.0f64; t_len * dim];
    for t in 0..t_len {
        let x_row = &x_seq.data()[t * dim..(t + 1) * dim];
        let dt_row = &dt_seq.data()[t * dim..(t + 1) * dim];
        for k in 0..dim {
            let (abar, bbar) = discretize(params.a[k], params.b[k], dt_row[k], params.taylor_eps)?;
            state[k] = abar * state[k] + bbar * x_row[k];
            outputs[t * dim + k] = params.c[k] * state[k] + params.d[k] * x_row[k];
        }
    }
    Ok(ScanResult {
        outputs: Tensor::from_vec_unchecked(vec![t_len, dim], outputs),
        final_state: state,
    })
}

const GRID_SIDE: usize = 8;

fn direction_order(direction: usize) -> Vec<(usize, usize)> {
    let mut cells = Vec::with_capacity(GRID_SIDE * GRID_SIDE);
    match direction {
        // row-major
        0 => {
            for r in 0..GRID_SIDE {
                for c in 0..GRID_SIDE {
                    cells.push((r, c));
                }
            }
        }
        // reverse row-major
        1 => {
            for r in (0..GRID_SIDE).rev() {
                for c in (0..GRID_SIDE).rev() {
                    cells.push((r, c));
                }
            }
        }
        // column-major
        2 => {
            for c in 0..GRID_SIDE {
                for r in 0..GRID_SIDE {
                    cells.push((r, c));
                }
            }
        }
        // reverse column-major
        _ => {
            for c in (0..GRID_SIDE).rev() {
                for r in (0..GRID_SIDE).rev() {
                    cells.push((r, c));
                }
            }
        }
    }
    cells
}

/// Scan an 8x8 feature grid along 4 flattening orders and concatenate the
/// per-direction outputs along the feature axis (D becomes 4D). A fixed
/// directional bias vector is added to every sequence element before its scan.
pub fn scan_4dir(
    grid: &Tensor,
    params: &SSMParams,
    dt_proj: &DeltaProjection,
    directional_bias: &[Vec<f64>; 4],
) -> Result<Tensor> {
    if grid.shape().len() != 3 || grid.shape()[0] != GRID_SIDE || grid.shape()[1] != GRID_SIDE {
        return Err(Error::shape(format!(
            "expected {GRID_SIDE}x{GRID_SIDE}xD grid, got {:?}",
            grid.shape()
        )));
    }
    let dim = grid.shape()[2];
    if directional_bias.iter().any(|b| b.len() != dim) {
        return Err(Error::shape("directional bias length must match feature dim"));
    }
    let mut out = vec![0.0f64; GRID_SIDE * GRID_SIDE * 4 * dim];
    for (dir, bias) in directional_bias.iter().enumerate() {
        let order = direction_order(dir);
        let mut seq = vec![0.0f64; order.len() * dim];
        for (t, &(r, c)) in order.iter().enumerate() {
            for k in 0..dim {
                seq[t * dim + k] = grid.get(&[r, c, k])? + bias[k];
            }
        }
        let seq = Tensor::from_vec_unchecked(vec![order.len(), dim], seq);
        let dt = selective_delta(&seq, dt_proj)?;
        let scanned = scan(&seq, params, &dt)?;
        for (t, &(r, c)) in order.iter().enumerate() {
            for k in 0..dim {
                let flat = (r * GRID_SIDE + c) * 4 * dim + dir * dim + k;
                out[flat] = scanned.outputs.get(&[t, k])?;
            }
        }
    }
    Ok(Tensor::from_vec_unchecked(
        vec![GRID_SIDE, GRID_SIDE, 4 * dim],
        out,
    ))
}

/// Dense linear map with seeded uniform(-1/sqrt(n), 1/sqrt(n)) init.
#[derive(Debug, Clone)]
pub struct LinearMap {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weight: Vec<f64>,
}

impl LinearMap {
    pub fn seeded(out_dim: usize, in_dim: usize, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = (0..out_dim * in_dim)
            .map(|_| rng.uniform_in(-bound, bound))
            .collect();
        LinearMap {
            out_dim,
            in_dim,
            weight,
        }
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        LinearMap {
            out_dim,
            in_dim,
            weight: vec![0.0; out_dim * in_dim],
        }
    }

    pub fn apply(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.in_dim {
            return Err(Error::shape(format!(
                "input length {} vs in_dim {}",
                input.len(),
                self.in_dim
            )));
        }
        let mut out = vec![0.0; self.out_dim];
        for (o, row) in out.iter_mut().zip(self.weight.chunks(self.in_dim)) {
            *o = row.iter().zip(input).map(|(w, x)| w * x).sum();
        }
        Ok(out)
    }
}

/// Gated aggregation of four equally shaped directional streams:
/// `g = sigmoid(Wg . concat)`, `y = (Wc . concat) * g` elementwise.
///
/// The maps act on the concatenated feature vector at each position (the
/// leading axes of the inputs are treated as positions).
pub fn gated_aggregate(streams: [&Tensor; 4], wg: &LinearMap, wc: &LinearMap) -> Result<Tensor> {
    let shape = streams[0].shape().to_vec();
    if streams.iter().any(|s| s.shape() != shape.as_slice()) {
        return Err(Error::shape("directional streams must share a shape"));
    }
    let dim = *shape.last().expect("nonempty shape");
    if wg.in_dim != 4 * dim || wc.in_dim != 4 * dim || wg.out_dim != wc.out_dim {
        return Err(Error::shape(format!(
            "gate maps must take {} inputs and agree on outputs",
            4 * dim
        )));
    }
    let positions = streams[0].len() / dim;
    let mut out = vec![0.0f64; positions * wc.out_dim];
    let mut concat = vec![0.0f64; 4 * dim];
    for pos in 0..positions {
        for (part, stream) in streams.iter().enumerate() {
            let row = &stream.data()[pos * dim..(pos + 1) * dim];
            concat[part * dim..(part + 1) * dim].copy_from_slice(row);
        }
        let gate_pre = wg.apply(&concat)?;
        let content = wc.apply(&concat)?;
        for k in 0..wc.out_dim {
            let g = 1.0 / (1.0 + (-gate_pre[k]).exp());
            out[pos * wc.out_dim + k] = content[k] * g;
        }
    }
    let mut out_shape = shape;
    *out_shape.last_mut().expect("nonempty") = wc.out_dim;
    Ok(Tensor::from_vec_unchecked(out_shape, out))
}

/// Gated residual blend `out = g * y + (1 - g) * x`.
pub fn residual_fuse(x: &Tensor, y: &Tensor, gate: f64) -> Result<Tensor> {
    if x.shape() != y.shape() {
        return Err(Error::shape(format!(
            "residual shapes differ: {:?} vs {:?}",
            x.shape(),
            y.shape()
        )));
    }
    if !(0.0..=1.0).contains(&gate) {
        return Err(Error::param(format!("gate {gate} outside [0, 1]")));
    }
    let data = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&xv, &yv)| gate * yv + (1.0 - gate) * xv)
        .collect();
    Ok(Tensor::from_vec_unchecked(x.shape().to_vec(), data))
}
