//! Constant-velocity Kalman filter over a 10-dim box state
//! `(cx, cy, cz, yaw, l, w, h, vx, vy, vz)`.

use std::f64::consts::PI;

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_yaw, Box7};

pub type StateVec = SVector<f64, 10>;
pub type StateCov = SMatrix<f64, 10, 10>;
type ObsVec = SVector<f64, 7>;
type ObsMat = SMatrix<f64, 7, 10>;

/// Noise diagonals, per frame. Values are standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub process_pos: f64,
    pub process_yaw: f64,
    pub process_size: f64,
    pub process_vel: f64,
    pub meas_pos: f64,
    pub meas_yaw: f64,
    pub meas_size: f64,
    /// Initial covariance = this × measurement variance on observed components.
    pub init_scale: f64,
    /// Initial velocity variance = this × process velocity variance.
    pub init_vel_scale: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            process_pos: 0.05,
            process_yaw: 0.05,
            process_size: 0.01,
            process_vel: 0.03,
            meas_pos: 0.1,
            meas_yaw: 0.1,
            meas_size: 0.05,
            init_scale: 10.0,
            init_vel_scale: 10.0,
        }
    }
}

impl NoiseConfig {
    fn process(&self) -> StateCov {
        let p = self.process_pos.powi(2);
        let y = self.process_yaw.powi(2);
        let s = self.process_size.powi(2);
        let v = self.process_vel.powi(2);
        StateCov::from_diagonal(&StateVec::from_column_slice(&[p, p, p, y, s, s, s, v, v, v]))
    }

    fn measurement(&self) -> SMatrix<f64, 7, 7> {
        let p = self.meas_pos.powi(2);
        let y = self.meas_yaw.powi(2);
        let s = self.meas_size.powi(2);
        SMatrix::<f64, 7, 7>::from_diagonal(&ObsVec::from_column_slice(&[p, p, p, y, s, s, s]))
    }
}

/// Mean and covariance of the box state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState {
    pub mean: StateVec,
    pub covariance: StateCov,
}

fn obs_matrix() -> ObsMat {
    let mut h = ObsMat::zeros();
    for i in 0..7 {
        h[(i, i)] = 1.0;
    }
    h
}

fn box_to_obs(b: &Box7) -> ObsVec {
    ObsVec::from_column_slice(&[b.cx, b.cy, b.cz, b.yaw, b.l, b.w, b.h])
}

impl KalmanState {
    /// Cold start at `b` with zero velocity and inflated covariance.
    pub fn from_box(b: &Box7, noise: &NoiseConfig) -> Self {
        let mut mean = StateVec::zeros();
        mean.fixed_rows_mut::<7>(0).copy_from(&box_to_obs(b));
        let r = noise.measurement();
        let mut cov = StateCov::zeros();
        for i in 0..7 {
            cov[(i, i)] = noise.init_scale * r[(i, i)];
        }
        let v = noise.init_vel_scale * noise.process_vel.powi(2);
        for i in 7..10 {
            cov[(i, i)] = v;
        }
        Self {
            mean,
            covariance: cov,
        }
    }

    /// Box at the current mean. Sizes are floored at 1 cm.
    pub fn to_box(&self) -> Box7 {
        let m = &self.mean;
        Box7::new(m[0], m[1], m[2], m[4].max(0.01), m[5].max(0.01), m[6].max(0.01), m[3])
    }

    pub fn velocity(&self) -> nalgebra::Vector3<f64> {
        nalgebra::Vector3::new(self.mean[7], self.mean[8], self.mean[9])
    }

    /// Same state with velocity negated, for running the model backwards in time.
    pub fn reversed(&self) -> Self {
        let mut s = *self;
        for i in 7..10 {
            s.mean[i] = -s.mean[i];
        }
        // flipping the velocity sign flips its cross-covariance with the rest
        for i in 7..10 {
            for j in 0..7 {
                s.covariance[(i, j)] = -s.covariance[(i, j)];
                s.covariance[(j, i)] = -s.covariance[(j, i)];
            }
        }
        s
    }

    pub fn is_spd(&self) -> bool {
        let sym = (self.covariance - self.covariance.transpose()).amax() <= 1e-9;
        sym && self.covariance.cholesky().is_some()
    }
}

/// One-frame constant-velocity prediction.
pub fn kf_predict(state: &KalmanState, noise: &NoiseConfig) -> KalmanState {
    let mut f = StateCov::identity();
    f[(0, 7)] = 1.0;
    f[(1, 8)] = 1.0;
    f[(2, 9)] = 1.0;
    let mean = f * state.mean;
    let cov = f * state.covariance * f.transpose() + noise.process();
    KalmanState {
        mean,
        covariance: symmetrize(cov),
    }
}

/// Linear measurement update on `(cx, cy, cz, yaw, l, w, h)`.
///
/// The observation heading is flipped by π when it points into the opposite
/// hemisphere of the state heading.
pub fn kf_update(state: &KalmanState, obs: &Box7, noise: &NoiseConfig) -> Result<KalmanState> {
    let h = obs_matrix();
    let r = noise.measurement();
    let mut z = box_to_obs(obs);
    let mut dyaw = normalize_yaw(z[3] - state.mean[3]);
    if dyaw.abs() > PI / 2.0 {
        dyaw = normalize_yaw(dyaw + PI);
    }
    z[3] = state.mean[3] + dyaw;

    let s = h * state.covariance * h.transpose() + r;
    let chol = s.cholesky().ok_or(Error::DegenerateInnovation)?;
    let s_inv = chol.inverse();
    let k = state.covariance * h.transpose() * s_inv;
    let innovation = z - h * state.mean;
    let mut mean = state.mean + k * innovation;
    mean[3] = normalize_yaw(mean[3]);

    // Joseph form keeps the posterior symmetric positive definite
    let i_kh = StateCov::identity() - k * h;
    let cov = i_kh * state.covariance * i_kh.transpose() + k * r * k.transpose();
    Ok(KalmanState {
        mean,
        covariance: symmetrize(cov),
    })
}

fn symmetrize(m: StateCov) -> StateCov {
    (m + m.transpose()) * 0.5
}
