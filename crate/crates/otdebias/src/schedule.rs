//! Learning-rate schedule (linear warmup then partial cosine annealing) and
//! the HK-loss curriculum weight.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Schedule constants: 10 warmup epochs out of 120 total, learning rate
/// ramping 1e-4 -> 1e-3 then annealing toward 5e-6 with depth factor 0.70.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleState {
    pub epoch: usize,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub eta_min: f64,
    pub eta_max: f64,
    pub eta_init: f64,
    /// Annealing depth: the cosine argument sweeps [0, pi * phi] instead of a
    /// full half-period, so the final rate sits above eta_min.
    pub phi: f64,
}

impl Default for ScheduleState {
    fn default() -> Self {
        ScheduleState {
            epoch: 0,
            warmup_epochs: 10,
            total_epochs: 120,
            eta_min: 5e-6,
            eta_max: 1e-3,
            eta_init: 1e-4,
            phi: 0.70,
        }
    }
}

impl ScheduleState {
    pub fn at(&self, epoch: usize) -> ScheduleState {
        ScheduleState {
            epoch,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.warmup_epochs >= self.total_epochs {
            return Err(Error::param(format!(
                "warmup {} must be below total {}",
                self.warmup_epochs, self.total_epochs
            )));
        }
        if !(self.eta_min < self.eta_init && self.eta_init <= self.eta_max) {
            return Err(Error::param(
                "need eta_min < eta_init <= eta_max".to_string(),
            ));
        }
        if self.epoch > self.total_epochs {
            return Err(Error::param(format!(
                "epoch {} beyond total {}",
                self.epoch, self.total_epochs
            )));
        }
        Ok(())
    }
}

/// Learning rate at the state's epoch.
///
/// Warmup is linear from `eta_init` to `eta_max` over `warmup_epochs`; from
/// there the rate follows
/// `eta_min + (eta_max - eta_min)/2 * (1 + cos(pi * phi * (t - t_w)/(T - t_w)))`.
pub fn uba_lr(state: &ScheduleState) -> Result<f64> {
    state.validate()?;
    let t = state.epoch as f64;
    let t_w = state.warmup_epochs as f64;
    if state.epoch < state.warmup_epochs {
        return Ok(state.eta_init + (state.eta_max - state.eta_init) * t / t_w);
    }
    let progress = (t - t_w) / (state.total_epochs as f64 - t_w);
    let angle = progress * std::f64::consts::PI * state.phi;
    Ok(state.eta_min + 0.5 * (state.eta_max - state.eta_min) * (1.0 + angle.cos()))
}

/// How the HK weight enters the objective over epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurriculumMode {
    /// 0 before the start epoch, full weight after.
    Step,
    /// 0 before the start epoch, then linear to full weight over the ramp.
    Ramp,
}

/// HK-loss weight at an epoch. Zero before `start_epoch`; `Ramp` interpolates
/// linearly to `lambda_hk` over `ramp_epochs`, `Step` jumps immediately.
pub fn hk_curriculum(
    epoch: usize,
    start_epoch: usize,
    ramp_epochs: usize,
    lambda_hk: f64,
    mode: CurriculumMode,
) -> f64 {
    if epoch < start_epoch {
        return 0.0;
    }
    match mode {
        CurriculumMode::Step => lambda_hk,
        CurriculumMode::Ramp => {
            if ramp_epochs == 0 || epoch >= start_epoch + ramp_epochs {
                lambda_hk
            } else {
                lambda_hk * (epoch - start_epoch) as f64 / ramp_epochs as f64
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_endpoints() {
        let s = ScheduleState::default();
        assert_eq!(uba_lr(&s.at(0)).unwrap(), 1e-4);
        // cos(0) = 1 at the warmup boundary
        assert_eq!(uba_lr(&s.at(10)).unwrap(), 1e-3);
    }

    #[test]
    fn final_epoch_value() {
        let s = ScheduleState::default();
        let eta = uba_lr(&s.at(120)).unwrap();
        let expected = 5e-6 + 0.5 * (1e-3 - 5e-6) * (1.0 + (0.7 * std::f64::consts::PI).cos());
        assert!((eta - expected).abs() < 1e-15);
        assert!((eta - 2.1008e-4).abs() < 5e-8, "eta {eta}");
    }

    #[test]
    fn non_increasing_after_warmup_and_max_at_tw() {
        let s = ScheduleState::default();
        let mut prev = f64::INFINITY;
        let mut max = 0.0f64;
        for t in 0..=120 {
            let eta = uba_lr(&s.at(t)).unwrap();
            max = max.max(eta);
            if t >= 10 {
                assert!(eta <= prev + 1e-18, "rate rose at {t}");
                prev = eta;
            }
        }
        assert_eq!(max, 1e-3);
    }

    #[test]
    fn epoch_past_total_rejected() {
        let s = ScheduleState::default();
        assert!(uba_lr(&s.at(121)).is_err());
    }

    #[test]
    fn curriculum_modes() {
        // ramp over [2, 12]
        assert_eq!(hk_curriculum(0, 2, 10, 0.035, CurriculumMode::Ramp), 0.0);
        assert_eq!(hk_curriculum(1, 2, 10, 0.035, CurriculumMode::Ramp), 0.0);
        assert!((hk_curriculum(7, 2, 10, 0.035, CurriculumMode::Ramp) - 0.0175).abs() < 1e-15);
        assert_eq!(hk_curriculum(12, 2, 10, 0.035, CurriculumMode::Ramp), 0.035);
        assert_eq!(hk_curriculum(80, 2, 10, 0.035, CurriculumMode::Ramp), 0.035);
        // step mode jumps straight to full weight
        assert_eq!(hk_curriculum(1, 2, 10, 0.035, CurriculumMode::Step), 0.0);
        assert_eq!(hk_curriculum(2, 2, 10, 0.035, CurriculumMode::Step), 0.035);
    }
}
