//! Sinusoidal coordinate encoding and the 2x2 task-relationship matrix.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Log-spaced frequency table for the sinusoidal encoding.
///
/// Defaults cover full-sky to sub-degree periods for coordinates expressed in
/// degrees: K = 16 frequencies from 1/360 to 1 cycles per unit.
#[derive(Debug, Clone)]
pub struct CoordEncoding {
    pub frequencies: Vec<f64>,
}

impl CoordEncoding {
    pub fn new(k: usize, omega_min: f64, omega_max: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::param("frequency count K must be >= 1"));
        }
        if !(omega_min > 0.0) || omega_max < omega_min {
            return Err(Error::param(format!(
                "need 0 < omega_min <= omega_max, got ({omega_min}, {omega_max})"
            )));
        }
        let frequencies = if k == 1 {
            vec![omega_min]
        } else {
            let (lo, hi) = (omega_min.ln(), omega_max.ln());
            (0..k)
                .map(|i| (lo + i as f64 * (hi - lo) / (k - 1) as f64).exp())
                .collect()
        };
        Ok(CoordEncoding { frequencies })
    }

    pub fn k(&self) -> usize {
        self.frequencies.len()
    }

    /// Encode one scalar coordinate as `[sin(2 pi theta w_k)] ++ [cos(...)]`,
    /// 2K outputs.
    pub fn encode(&self, theta: f64) -> Tensor {
        let k = self.k();
        let mut out = vec![0.0; 2 * k];
        for (i, &w) in self.frequencies.iter().enumerate() {
            let arg = std::f64::consts::TAU * theta * w;
            out[i] = arg.sin();
            out[k + i] = arg.cos();
        }
        Tensor::from_vec_unchecked(vec![2 * k], out)
    }
}

impl Default for CoordEncoding {
    fn default() -> Self {
        CoordEncoding::new(16, 1.0 / 360.0, 1.0).expect("default parameters are valid")
    }
}

/// Encode a scalar coordinate with explicit parameters.
///
/// `normalize` maps the input into [0, 1) by dividing by `period` first; both
/// conventions are documented because the choice changes which frequencies
/// complete full cycles over the sky.
pub fn encode_coord(
    theta: f64,
    k: usize,
    omega_min: f64,
    omega_max: f64,
    normalize: Option<f64>,
) -> Result<Tensor> {
    let enc = CoordEncoding::new(k, omega_min, omega_max)?;
    let theta = match normalize {
        Some(period) if period > 0.0 => theta / period,
        Some(period) => {
            return Err(Error::param(format!("normalization period {period} must be > 0")))
        }
        None => theta,
    };
    Ok(enc.encode(theta))
}

/// Learnable 2x2 task-relationship matrix, stored raw and exposed row-softmaxed.
#[derive(Debug, Clone)]
pub struct TaskRelation {
    pub raw: [[f64; 2]; 2],
}

impl TaskRelation {
    pub fn new(raw: [[f64; 2]; 2]) -> Self {
        TaskRelation { raw }
    }

    /// Build a relation whose softmaxed rows equal the given stochastic rows.
    pub fn from_rows(rows: [[f64; 2]; 2]) -> Result<Self> {
        for row in rows {
            if row.iter().any(|&v| v <= 0.0) || (row[0] + row[1] - 1.0).abs() > 1e-9 {
                return Err(Error::param(format!("row {row:?} is not stochastic")));
            }
        }
        Ok(TaskRelation {
            raw: [
                [rows[0][0].ln(), rows[0][1].ln()],
                [rows[1][0].ln(), rows[1][1].ln()],
            ],
        })
    }

    /// Row-softmax of the raw matrix; each row sums to one.
    pub fn normalized(&self) -> [[f64; 2]; 2] {
        let mut out = [[0.0; 2]; 2];
        for (r, row) in self.raw.iter().enumerate() {
            let m = row[0].max(row[1]);
            let e0 = (row[0] - m).exp();
            let e1 = (row[1] - m).exp();
            let z = e0 + e1;
            out[r] = [e0 / z, e1 / z];
        }
        out
    }
}

/// Mix classification and redshift feature vectors through the softmaxed
/// relation: `f'_cls = R11 f_cls + R12 f_red`, `f'_red = R21 f_cls + R22 f_red`.
pub fn relate_tasks(
    f_cls: &Tensor,
    f_red: &Tensor,
    rel: &TaskRelation,
) -> Result<(Tensor, Tensor)> {
    if f_cls.shape() != f_red.shape() {
        return Err(Error::shape(format!(
            "feature shapes differ: {:?} vs {:?}",
            f_cls.shape(),
            f_red.shape()
        )));
    }
    let r = rel.normalized();
    let cls: Vec<f64> = f_cls
        .data()
        .iter()
        .zip(f_red.data())
        .map(|(&c, &z)| r[0][0] * c + r[0][1] * z)
        .collect();
    let red: Vec<f64> = f_cls
        .data()
        .iter()
        .zip(f_red.data())
        .map(|(&c, &z)| r[1][0] * c + r[1][1] * z)
        .collect();
    Ok((
        Tensor::from_vec_unchecked(f_cls.shape().to_vec(), cls),
        Tensor::from_vec_unchecked(f_red.shape().to_vec(), red),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn encode_zero_angle() {
        let enc = CoordEncoding::default();
        let v = enc.encode(0.0);
        let k = enc.k();
        for i in 0..k {
            assert_eq!(v.data()[i], 0.0);
            assert_eq!(v.data()[k + i], 1.0);
        }
    }

    #[test]
    fn encode_periodicity_per_frequency() {
        let enc = CoordEncoding::new(3, 1.0, 100.0).unwrap();
        let theta = 0.37;
        let base = enc.encode(theta);
        for (i, &w) in enc.frequencies.iter().enumerate() {
            let shifted = enc.encode(theta + 1.0 / w);
            assert!((base.data()[i] - shifted.data()[i]).abs() < 1e-9);
            assert!((base.data()[3 + i] - shifted.data()[3 + i]).abs() < 1e-9);
        }
    }

    #[test]
    fn log_spacing_endpoints() {
        let enc = CoordEncoding::new(3, 1.0, 100.0).unwrap();
        let w = &enc.frequencies;
        assert!((w[0] - 1.0).abs() < 1e-12);
        assert!((w[1] - 10.0).abs() < 1e-12);
        assert!((w[2] - 100.0).abs() < 1e-12);
    }

    #[test]
    fn encode_rejects_zero_k() {
        assert!(encode_coord(1.0, 0, 0.1, 1.0, None).is_err());
    }

    #[test]
    fn encode_bounded_and_injective_on_grid() {
        let enc = CoordEncoding::default();
        let mut prev: Option<Tensor> = None;
        for step in 0..720 {
            let theta = step as f64 * 0.5;
            let v = enc.encode(theta);
            assert!(v.data().iter().all(|x| (-1.0..=1.0).contains(x)));
            if let Some(p) = prev {
                let dist: f64 = p
                    .data()
                    .iter()
                    .zip(v.data())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                assert!(dist > 0.0, "adjacent encodings collide at {theta}");
            }
            prev = Some(v);
        }
    }

    #[test]
    fn relate_tasks_symmetric_softmax_averages() {
        let rel = TaskRelation::new([[0.0; 2]; 2]);
        let a = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let b = Tensor::from_vec(&[3], vec![3.0, 2.0, 1.0]).unwrap();
        let (c, r) = relate_tasks(&a, &b, &rel).unwrap();
        assert_eq!(c.data(), &[2.0, 2.0, 2.0]);
        assert_eq!(r.data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn relate_tasks_reported_influence_regime() {
        // Cross-task rows with 55% redshift-to-classification and 32%
        // classification-to-redshift influence.
        let rel = TaskRelation::from_rows([[0.45, 0.55], [0.32, 0.68]]).unwrap();
        let r = rel.normalized();
        assert!((r[0][1] - 0.55).abs() < 1e-9);
        assert!((r[1][0] - 0.32).abs() < 1e-9);
        let cls = Tensor::from_vec(&[2], vec![1.0, 0.0]).unwrap();
        let red = Tensor::from_vec(&[2], vec![0.0, 1.0]).unwrap();
        let (c, z) = relate_tasks(&cls, &red, &rel).unwrap();
        assert!((c.data()[0] - 0.45).abs() < 1e-9 && (c.data()[1] - 0.55).abs() < 1e-9);
        assert!((z.data()[0] - 0.32).abs() < 1e-9 && (z.data()[1] - 0.68).abs() < 1e-9);
    }

    #[test]
    fn relate_tasks_fixed_point_on_equal_features() {
        let mut rng = Rng::new(6);
        for _ in 0..50 {
            let rel = TaskRelation::new([
                [rng.uniform_in(-5.0, 5.0), rng.uniform_in(-5.0, 5.0)],
                [rng.uniform_in(-5.0, 5.0), rng.uniform_in(-5.0, 5.0)],
            ]);
            let v = Tensor::from_vec(&[4], (0..4).map(|_| rng.uniform_in(-2.0, 2.0)).collect())
                .unwrap();
            let (c, r) = relate_tasks(&v, &v, &rel).unwrap();
            for ((cv, rv), vv) in c.data().iter().zip(r.data()).zip(v.data()) {
                assert!((cv - vv).abs() < 1e-12);
                assert!((rv - vv).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_rows_always_stochastic() {
        let mut rng = Rng::new(14);
        for _ in 0..200 {
            // spreads beyond ~36 saturate f64 so strict (0, 1) bounds only
            // hold mathematically; test within the representable regime
            let rel = TaskRelation::new([
                [rng.uniform_in(-15.0, 15.0), rng.uniform_in(-15.0, 15.0)],
                [rng.uniform_in(-15.0, 15.0), rng.uniform_in(-15.0, 15.0)],
            ]);
            for row in rel.normalized() {
                assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
                assert!(row[0] > 0.0 && row[0] < 1.0);
                assert!(row[1] > 0.0 && row[1] < 1.0);
            }
        }
    }

    #[test]
    fn relate_tasks_rejects_length_mismatch() {
        let rel = TaskRelation::new([[0.0; 2]; 2]);
        let a = Tensor::zeros(&[3]).unwrap();
        let b = Tensor::zeros(&[4]).unwrap();
        assert!(relate_tasks(&a, &b, &rel).is_err());
    }
}
