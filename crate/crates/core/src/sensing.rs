//! Arm-length sensor, recursive filter, Hooke's-law force estimate and the
//! collision detectors.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vehicle::{ArmParams, Variant, GRAVITY};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorModel {
    /// Sample rate, Hz.
    pub rate: f64,
    /// Quantization step, m. Zero disables quantization.
    pub precision: f64,
    /// Half-width of the uniform noise, m.
    pub accuracy: f64,
    /// Filter weight on the newest reading.
    pub w: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            rate: 25.0,
            precision: 0.001,
            accuracy: 0.005,
            w: 0.6,
        }
    }
}

impl SensorModel {
    pub fn noiseless() -> Self {
        Self {
            precision: 0.0,
            accuracy: 0.0,
            ..Default::default()
        }
    }

    pub fn period(&self) -> f64 {
        1.0 / self.rate
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0) {
            return Err(Error::validation("rate", "must be > 0"));
        }
        if !(self.w > 0.0 && self.w <= 1.0) {
            return Err(Error::validation("w", "must lie in (0, 1]"));
        }
        if !(self.precision >= 0.0) || !(self.accuracy >= 0.0) {
            return Err(Error::validation(
                "accuracy",
                "precision and accuracy must be >= 0",
            ));
        }
        Ok(())
    }
}

/// One noisy, quantized reading of the arm length.
pub fn sample_sensor<R: Rng + ?Sized>(true_l: f64, model: &SensorModel, rng: &mut R) -> f64 {
    let noise = if model.accuracy > 0.0 {
        rng.gen_range(-model.accuracy..=model.accuracy)
    } else {
        0.0
    };
    let raw = true_l + noise;
    if model.precision > 0.0 {
        (raw / model.precision).round() * model.precision
    } else {
        raw
    }
}

/// `w h + (1 - w) prev`, written so that `h == prev` is an exact fixed point.
pub fn filter_update(l_hat_prev: f64, h: f64, w: f64) -> f64 {
    l_hat_prev + w * (h - l_hat_prev)
}

/// Contact force magnitude from the filtered length, `k_l (l_max - l + l_0)`.
pub fn estimate_force(l_hat: f64, arm: &ArmParams) -> f64 {
    let l = l_hat.clamp(arm.l_min, arm.l_max);
    arm.k_l * ((arm.l_max - l) + arm.l_0)
}

/// Rigid-robot rule on the gravity-compensated inertial acceleration.
pub fn detect_rigid(a_inertial: &Vector3<f64>) -> bool {
    a_inertial.norm() >= 2.0 * GRAVITY
}

/// Sensor at a fixed rate with a zero-order hold between samples.
#[derive(Debug, Clone)]
pub struct ArmSensor {
    model: SensorModel,
    next_t: f64,
    held: f64,
    rng: ChaCha8Rng,
}

impl ArmSensor {
    /// `phase` in `[0, 1)` offsets the first sample within one period.
    pub fn new(model: SensorModel, initial: f64, phase: f64, seed: u64) -> Self {
        let next_t = phase.rem_euclid(1.0) * model.period();
        Self {
            model,
            next_t,
            held: initial,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Feed the true length at time `t`. Returns a new reading when one is due.
    pub fn poll(&mut self, t: f64, true_l: f64) -> Option<f64> {
        if t + 1e-12 < self.next_t {
            return None;
        }
        let period = self.model.period();
        while self.next_t <= t + 1e-12 {
            self.next_t += period;
        }
        self.held = sample_sensor(true_l, &self.model, &mut self.rng);
        Some(self.held)
    }

    pub fn held(&self) -> f64 {
        self.held
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    InContact,
    AwaitingRecovery,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetectorEvent {
    CollisionDetected { f_hat: f64 },
    HandlingStart { f_max: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForceEstimatorState {
    pub l_hat: f64,
    pub f_hat: f64,
    pub f_hat_max: f64,
    pub phase: Phase,
}

impl ForceEstimatorState {
    pub fn new(arm: &ArmParams) -> Self {
        Self {
            l_hat: arm.l_max,
            f_hat: estimate_force(arm.l_max, arm),
            f_hat_max: 0.0,
            phase: Phase::Idle,
        }
    }

    /// Filter a new reading and refresh the force estimate.
    pub fn ingest(&mut self, h: f64, w: f64, arm: &ArmParams) {
        self.l_hat = filter_update(self.l_hat, h, w);
        self.f_hat = estimate_force(self.l_hat, arm);
    }

    /// Executor acknowledges a pending recovery.
    pub fn acknowledge(&mut self) {
        if self.phase == Phase::AwaitingRecovery {
            self.phase = Phase::Idle;
        }
    }
}

/// Threshold state machine for the compliant arm.
pub fn detect_compliant(est: &mut ForceEstimatorState, f_threshold: f64) -> Option<DetectorEvent> {
    match est.phase {
        Phase::Idle if est.f_hat >= f_threshold => {
            est.phase = Phase::InContact;
            est.f_hat_max = est.f_hat;
            Some(DetectorEvent::CollisionDetected { f_hat: est.f_hat })
        }
        Phase::InContact => {
            est.f_hat_max = est.f_hat_max.max(est.f_hat);
            if est.f_hat < f_threshold {
                est.phase = Phase::AwaitingRecovery;
                Some(DetectorEvent::HandlingStart {
                    f_max: est.f_hat_max,
                })
            } else {
                None
            }
        }
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorParams {
    /// Compliant detection threshold, N.
    pub f_threshold: f64,
    /// Constant f_max reported by the rigid robot, N.
    pub rigid_f_max: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            f_threshold: 25.0,
            rigid_f_max: 80.0,
        }
    }
}

/// Sensor, filter and detector bundled for one simulated robot.
#[derive(Debug, Clone)]
pub struct ContactEstimator {
    variant: Variant,
    arm: ArmParams,
    model: SensorModel,
    detector: DetectorParams,
    sensor: ArmSensor,
    pub state: ForceEstimatorState,
}

impl ContactEstimator {
    pub fn new(
        variant: Variant,
        arm: &ArmParams,
        model: &SensorModel,
        detector: &DetectorParams,
        phase: f64,
        seed: u64,
    ) -> Self {
        Self {
            variant,
            arm: arm.clone(),
            model: model.clone(),
            detector: detector.clone(),
            sensor: ArmSensor::new(model.clone(), arm.l_max, phase, seed),
            state: ForceEstimatorState::new(arm),
        }
    }

    /// Latest force estimate (held between sensor samples).
    pub fn f_hat(&self) -> f64 {
        match self.variant {
            Variant::Compliant => self.state.f_hat,
            Variant::Rigid => 0.0,
        }
    }

    pub fn acknowledge(&mut self) {
        self.state.acknowledge();
    }

    /// Advance to time `t` with the true arm length and the
    /// gravity-compensated acceleration of the last step.
    pub fn update(&mut self, t: f64, true_l: f64, accel: &Vector3<f64>) -> Vec<DetectorEvent> {
        match self.variant {
            Variant::Compliant => {
                let Some(h) = self.sensor.poll(t, true_l) else {
                    return Vec::new();
                };
                self.state.ingest(h, self.model.w, &self.arm);
                detect_compliant(&mut self.state, self.detector.f_threshold)
                    .into_iter()
                    .collect()
            }
            Variant::Rigid => {
                if self.state.phase == Phase::Idle && detect_rigid(accel) {
                    self.state.phase = Phase::AwaitingRecovery;
                    self.state.f_hat_max = self.detector.rigid_f_max;
                    vec![
                        DetectorEvent::CollisionDetected { f_hat: 0.0 },
                        DetectorEvent::HandlingStart {
                            f_max: self.detector.rigid_f_max,
                        },
                    ]
                } else {
                    Vec::new()
                }
            }
        }
    }
}
