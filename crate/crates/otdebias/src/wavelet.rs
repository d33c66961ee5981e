//! Oriented Gabor kernel bank, dual-tree directional decomposition, and the
//! fixed 8x8 feature bottleneck.
//!
//! The four kernels sit at orientations {pi/2, pi, 3pi/2, 0}. Each complex
//! kernel is evaluated on the centered pixel grid, made DC-free (so constant
//! images produce no response), and L2-normalized. The real and imaginary
//! responses play the role of the two filter trees of a dual-tree transform:
//! they form an approximate Hilbert pair, so the per-orientation magnitude
//! `sqrt(g^2 + h^2)` is far less shift-sensitive than either tree alone.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rayon::prelude::*;

/// One oriented complex kernel.
#[derive(Debug, Clone)]
pub struct GaborKernel {
    pub orientation: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub size: usize,
    pub real_part: Tensor,
    pub imag_part: Tensor,
}

/// The four bank orientations, in bank order.
pub const BANK_ORIENTATIONS: [f64; 4] = [
    std::f64::consts::FRAC_PI_2,
    std::f64::consts::PI,
    3.0 * std::f64::consts::FRAC_PI_2,
    0.0,
];

/// Raw kernel evaluation on the centered grid, before DC removal and
/// normalization: isotropic Gaussian envelope times the oriented complex
/// carrier. At the center pixel this is exactly 1 + 0i.
///
/// `aspect`, when given, squeezes the envelope across the carrier direction
/// (anisotropic variant; no default is supplied).
pub fn eval_gabor(
    orientation: f64,
    sigma: f64,
    lambda: f64,
    size: usize,
    aspect: Option<f64>,
) -> Result<(Tensor, Tensor)> {
    if size % 2 == 0 || size == 0 {
        return Err(Error::param(format!("kernel size {size} must be odd")));
    }
    if sigma <= 0.0 || lambda <= 0.0 {
        return Err(Error::param("sigma and lambda must be positive"));
    }
    if let Some(g) = aspect {
        if g <= 0.0 {
            return Err(Error::param(format!("aspect ratio {g} must be positive")));
        }
    }
    let half = (size / 2) as isize;
    let mut re = Vec::with_capacity(size * size);
    let mut im = Vec::with_capacity(size * size);
    let (sin_t, cos_t) = orientation.sin_cos();
    for row in -half..=half {
        for col in -half..=half {
            let (x, y) = (col as f64, row as f64);
            let u = x * cos_t + y * sin_t;
            let v = -x * sin_t + y * cos_t;
            let env_arg = match aspect {
                // as printed, the envelope is isotropic: u^2 + v^2 = x^2 + y^2
                None => u * u + v * v,
                Some(g) => u * u + g * g * v * v,
            };
            let envelope = (-env_arg / (2.0 * sigma * sigma)).exp();
            let phase = std::f64::consts::TAU * u / lambda;
            re.push(envelope * phase.cos());
            im.push(envelope * phase.sin());
        }
    }
    Ok((
        Tensor::from_vec_unchecked(vec![size, size], re),
        Tensor::from_vec_unchecked(vec![size, size], im),
    ))
}

/// Build the four-orientation bank: evaluate, remove the DC component, and
/// L2-normalize each complex kernel to unit norm.
pub fn make_gabor_bank(size: usize, sigma: f64, lambda: f64) -> Result<[GaborKernel; 4]> {
    make_gabor_bank_with(size, sigma, lambda, None)
}

pub fn make_gabor_bank_with(
    size: usize,
    sigma: f64,
    lambda: f64,
    aspect: Option<f64>,
) -> Result<[GaborKernel; 4]> {
    let mut kernels = Vec::with_capacity(4);
    for &theta in &BANK_ORIENTATIONS {
        let (mut re, mut im) = eval_gabor(theta, sigma, lambda, size, aspect)?;
        let n = re.len() as f64;
        let mean_re = re.data().iter().sum::<f64>() / n;
        let mean_im = im.data().iter().sum::<f64>() / n;
        for v in re.data_mut() {
            *v -= mean_re;
        }
        for v in im.data_mut() {
            *v -= mean_im;
        }
        let norm = re
            .data()
            .iter()
            .chain(im.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 {
            return Err(Error::param("degenerate kernel with zero norm"));
        }
        for v in re.data_mut() {
            *v /= norm;
        }
        for v in im.data_mut() {
            *v /= norm;
        }
        kernels.push(GaborKernel {
            orientation: theta,
            sigma,
            lambda,
            size,
            real_part: re,
            imag_part: im,
        });
    }
    Ok(kernels.try_into().expect("four orientations"))
}

/// Which filter tree a directional map belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tree {
    /// Real-part tree.
    G,
    /// Imaginary-part (Hilbert partner) tree.
    H,
}

/// Eight directional feature maps: per orientation, the g-tree (real) and
/// h-tree (imaginary) responses, in bank orientation order.
#[derive(Debug, Clone)]
pub struct DirectionalStack {
    /// Shape `[8, H, W]`; map `2k` is the g-tree and `2k + 1` the h-tree of
    /// orientation `k`.
    pub maps: Tensor,
    pub tree_labels: [Tree; 8],
    pub orientation_labels: [f64; 8],
}

impl DirectionalStack {
    pub fn height(&self) -> usize {
        self.maps.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.maps.shape()[2]
    }

    pub fn map(&self, index: usize) -> &[f64] {
        let hw = self.height() * self.width();
        &self.maps.data()[index * hw..(index + 1) * hw]
    }

    /// Per-orientation magnitude maps `sqrt(g^2 + h^2)`, shape `[4, H, W]`.
    pub fn magnitude_maps(&self) -> Tensor {
        let hw = self.height() * self.width();
        let mut out = vec![0.0; 4 * hw];
        for k in 0..4 {
            let g = self.map(2 * k);
            let h = self.map(2 * k + 1);
            for (slot, (gv, hv)) in out[k * hw..(k + 1) * hw].iter_mut().zip(g.iter().zip(h)) {
                *slot = (gv * gv + hv * hv).sqrt();
            }
        }
        Tensor::from_vec_unchecked(vec![4, self.height(), self.width()], out)
    }

    /// Sum of squares of one map.
    pub fn energy(&self, index: usize) -> f64 {
        self.map(index).iter().map(|v| v * v).sum()
    }
}

fn reflect_index(mut t: isize, n: isize) -> usize {
    // mirror about the edge pixels without repeating them
    loop {
        if t < 0 {
            t = -t;
        } else if t >= n {
            t = 2 * (n - 1) - t;
        } else {
            return t as usize;
        }
    }
}

/// Cross-correlate one image with one kernel, "same" output size, reflection
/// padding. An impulse image therefore reproduces the reflected kernel around
/// the impulse position.
fn correlate_same(image: &Tensor, kernel: &Tensor) -> Tensor {
    let (h, w) = (image.shape()[0] as isize, image.shape()[1] as isize);
    let ks = kernel.shape()[0] as isize;
    let half = ks / 2;
    let img = image.data();
    let ker = kernel.data();
    let mut out = vec![0.0; (h * w) as usize];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for di in -half..=half {
                let src_i = reflect_index(i + di, h);
                let krow = ((di + half) * ks) as usize;
                let irow = src_i * w as usize;
                for dj in -half..=half {
                    let src_j = reflect_index(j + dj, w);
                    acc += img[irow + src_j] * ker[krow + (dj + half) as usize];
                }
            }
            out[(i * w + j) as usize] = acc;
        }
    }
    Tensor::from_vec_unchecked(vec![h as usize, w as usize], out)
}

/// Dual-tree directional decomposition into 8 feature maps.
pub fn decompose(image: &Tensor, bank: &[GaborKernel; 4]) -> Result<DirectionalStack> {
    if image.shape().len() != 2 {
        return Err(Error::shape(format!("expected HxW image, got {:?}", image.shape())));
    }
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let size = bank[0].size;
    if h < size || w < size {
        return Err(Error::shape(format!(
            "image {h}x{w} smaller than kernel {size}x{size}"
        )));
    }
    // the four orientations are independent; run them in parallel with a
    // deterministic collect order
    let per_orientation: Vec<(Tensor, Tensor)> = bank
        .par_iter()
        .map(|k| {
            (
                correlate_same(image, &k.real_part),
                correlate_same(image, &k.imag_part),
            )
        })
        .collect();
    let hw = h * w;
    let mut maps = vec![0.0; 8 * hw];
    let mut tree_labels = [Tree::G; 8];
    let mut orientation_labels = [0.0; 8];
    for (k, (g_map, h_map)) in per_orientation.iter().enumerate() {
        maps[2 * k * hw..(2 * k + 1) * hw].copy_from_slice(g_map.data());
        maps[(2 * k + 1) * hw..(2 * k + 2) * hw].copy_from_slice(h_map.data());
        tree_labels[2 * k] = Tree::G;
        tree_labels[2 * k + 1] = Tree::H;
        orientation_labels[2 * k] = bank[k].orientation;
        orientation_labels[2 * k + 1] = bank[k].orientation;
    }
    Ok(DirectionalStack {
        maps: Tensor::from_vec_unchecked(vec![8, h, w], maps),
        tree_labels,
        orientation_labels,
    })
}

pub const BOTTLENECK_SIDE: usize = 8;

/// Fixed-size bottleneck features.
#[derive(Debug, Clone)]
pub struct BottleneckFeatures {
    /// Shape `[8, 8, D]` with D the number of directional maps.
    pub grid: Tensor,
    pub source_resolution: usize,
    /// `source_resolution / 64`.
    pub compression_factor: f64,
}

fn adaptive_pool_map(map: &[f64], h: usize, w: usize, side: usize) -> Vec<f64> {
    let mut out = vec![0.0; side * side];
    for oi in 0..side {
        let i0 = oi * h / side;
        let i1 = ((oi + 1) * h).div_ceil(side);
        for oj in 0..side {
            let j0 = oj * w / side;
            let j1 = ((oj + 1) * w).div_ceil(side);
            let mut acc = 0.0;
            for i in i0..i1 {
                for j in j0..j1 {
                    acc += map[i * w + j];
                }
            }
            out[oi * side + oj] = acc / ((i1 - i0) * (j1 - j0)) as f64;
        }
    }
    out
}

/// Adaptive average pooling of every directional map to the fixed 8x8 grid.
/// Already-8x8 inputs pass through unchanged.
pub fn bottleneck(stack: &DirectionalStack, source_resolution: usize) -> Result<BottleneckFeatures> {
    let (h, w) = (stack.height(), stack.width());
    if h < BOTTLENECK_SIDE || w < BOTTLENECK_SIDE {
        return Err(Error::shape(format!(
            "stack extent {h}x{w} below bottleneck size {BOTTLENECK_SIDE}"
        )));
    }
    let n_maps = stack.maps.shape()[0];
    let mut grid = vec![0.0; BOTTLENECK_SIDE * BOTTLENECK_SIDE * n_maps];
    for m in 0..n_maps {
        let pooled = adaptive_pool_map(stack.map(m), h, w, BOTTLENECK_SIDE);
        for (cell, value) in pooled.iter().enumerate() {
            grid[cell * n_maps + m] = *value;
        }
    }
    Ok(BottleneckFeatures {
        grid: Tensor::from_vec_unchecked(
            vec![BOTTLENECK_SIDE, BOTTLENECK_SIDE, n_maps],
            grid,
        ),
        source_resolution,
        compression_factor: source_resolution as f64 / 64.0,
    })
}

/// Bank parameters pinned at a reference resolution.
///
/// The pipeline analyzes every resolution with the same *physical* filter:
/// for an image of resolution R the kernel support, sigma, and wavelength all
/// scale by `R / reference_resolution`, mirroring how a continuous wavelet is
/// discretized at different sampling rates.
#[derive(Debug, Clone)]
pub struct BankSpec {
    pub kernel_size: usize,
    pub sigma: f64,
    pub lambda: f64,
    pub reference_resolution: usize,
}

impl Default for BankSpec {
    fn default() -> Self {
        BankSpec {
            kernel_size: 9,
            sigma: 2.0,
            lambda: 4.0,
            reference_resolution: 64,
        }
    }
}

impl BankSpec {
    pub fn scale_for(&self, resolution: usize) -> f64 {
        resolution as f64 / self.reference_resolution as f64
    }

    /// Bank scaled for one resolution; size is rounded to the nearest odd.
    pub fn bank_for(&self, resolution: usize) -> Result<[GaborKernel; 4]> {
        let scale = self.scale_for(resolution);
        let mut size = (self.kernel_size as f64 * scale).round() as usize;
        if size % 2 == 0 {
            size += 1;
        }
        make_gabor_bank(size, self.sigma * scale, self.lambda * scale)
    }

    /// Fixed-pixel-scale bank, independent of the image resolution (the
    /// single-scale baseline).
    pub fn fixed_bank(&self) -> Result<[GaborKernel; 4]> {
        make_gabor_bank(self.kernel_size, self.sigma, self.lambda)
    }
}

/// Scale-normalized mean absolute bottleneck activation of one image.
///
/// The division by the scale factor is the discrete analogue of the
/// continuous transform's 1/a amplitude convention: unit-L2 kernels grow
/// their response linearly with scale, and removing that factor makes
/// activations comparable across resolutions.
pub fn mean_abs_bottleneck(image: &Tensor, spec: &BankSpec) -> Result<f64> {
    let resolution = image.shape()[0];
    let bank = spec.bank_for(resolution)?;
    let stack = decompose(image, &bank)?;
    let features = bottleneck(&stack, resolution)?;
    Ok(mean_abs(features.grid.data()) / spec.scale_for(resolution))
}

/// No-bottleneck baseline: a fixed single-scale bank, with each directional
/// map decimated to 8x8 by point sampling (raw resize) instead of area
/// averaging, then the same mean absolute activation.
pub fn mean_abs_decimated(image: &Tensor, spec: &BankSpec) -> Result<f64> {
    let bank = spec.fixed_bank()?;
    let stack = decompose(image, &bank)?;
    let (h, w) = (stack.height(), stack.width());
    let mut total = 0.0;
    let mut count = 0usize;
    for m in 0..stack.maps.shape()[0] {
        let map = stack.map(m);
        for oi in 0..BOTTLENECK_SIDE {
            let i = (oi * 2 + 1) * h / (2 * BOTTLENECK_SIDE);
            for oj in 0..BOTTLENECK_SIDE {
                let j = (oj * 2 + 1) * w / (2 * BOTTLENECK_SIDE);
                total += map[i * w + j].abs();
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

fn mean_abs(values: &[f64]) -> f64 {
    values.iter().map(|v| v.abs()).sum::<f64>() / values.len() as f64
}

fn cv_of<F: Fn(&Tensor) -> Result<f64>>(images: &[Tensor], stat: F) -> Result<f64> {
    if images.len() < 2 {
        return Err(Error::param(format!(
            "need at least 2 resolutions, got {}",
            images.len()
        )));
    }
    let activations: Vec<f64> = images.iter().map(stat).collect::<Result<_>>()?;
    crate::metrics::coefficient_of_variation(&activations)
}

/// Coefficient of variation (population std over mean, in percent) of the
/// per-resolution mean absolute bottleneck activation of the same scene.
pub fn cross_resolution_cv(images: &[Tensor], spec: &BankSpec) -> Result<f64> {
    cv_of(images, |img| mean_abs_bottleneck(img, spec))
}

/// The same statistic through the single-scale decimation baseline.
pub fn cross_resolution_cv_decimated(images: &[Tensor], spec: &BankSpec) -> Result<f64> {
    cv_of(images, |img| mean_abs_decimated(img, spec))
}

/// Translate an image by (dy, dx) pixels with reflected borders.
pub fn translate(image: &Tensor, dy: isize, dx: isize) -> Result<Tensor> {
    if image.shape().len() != 2 {
        return Err(Error::shape("translate expects an HxW image"));
    }
    let (h, w) = (image.shape()[0] as isize, image.shape()[1] as isize);
    let mut out = vec![0.0; (h * w) as usize];
    for i in 0..h {
        for j in 0..w {
            let src_i = reflect_index(i + dy, h);
            let src_j = reflect_index(j + dx, w);
            out[(i * w + j) as usize] = image.data()[src_i * w as usize + src_j];
        }
    }
    Ok(Tensor::from_vec_unchecked(
        vec![h as usize, w as usize],
        out,
    ))
}

/// Relative L2 change of dual-tree magnitude features vs single-tree real
/// features under a 1-pixel shift, measured on the interior (a margin of one
/// kernel width is dropped so padding plays no role).
pub fn shift_sensitivity(image: &Tensor, bank: &[GaborKernel; 4]) -> Result<(f64, f64)> {
    let shifted = translate(image, 0, 1)?;
    let stack_a = decompose(image, bank)?;
    let stack_b = decompose(&shifted, bank)?;
    let margin = bank[0].size + 1;
    let (h, w) = (stack_a.height(), stack_a.width());
    if h <= 2 * margin || w <= 2 * margin {
        return Err(Error::shape("image too small for interior comparison"));
    }

    let rel_change = |a: &Tensor, b: &Tensor, n_maps: usize| -> f64 {
        let hw = h * w;
        let mut num = 0.0;
        let mut den = 0.0;
        for m in 0..n_maps {
            for i in margin..h - margin {
                for j in margin..w - margin {
                    let idx = m * hw + i * w + j;
                    let d = b.data()[idx] - a.data()[idx];
                    num += d * d;
                    den += a.data()[idx] * a.data()[idx];
                }
            }
        }
        (num / den).sqrt()
    };

    let mag_rel = rel_change(&stack_a.magnitude_maps(), &stack_b.magnitude_maps(), 4);
    // single-tree baseline: the g-tree (real) maps alone
    let real_a = extract_tree(&stack_a, Tree::G);
    let real_b = extract_tree(&stack_b, Tree::G);
    let real_rel = rel_change(&real_a, &real_b, 4);
    Ok((mag_rel, real_rel))
}

fn extract_tree(stack: &DirectionalStack, tree: Tree) -> Tensor {
    let hw = stack.height() * stack.width();
    let mut out = vec![0.0; 4 * hw];
    let mut filled = 0;
    for m in 0..8 {
        if stack.tree_labels[m] == tree {
            out[filled * hw..(filled + 1) * hw].copy_from_slice(stack.map(m));
            filled += 1;
        }
    }
    Tensor::from_vec_unchecked(vec![4, stack.height(), stack.width()], out)
}
