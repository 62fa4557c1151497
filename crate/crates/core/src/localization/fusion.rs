//! Loosely coupled Kalman fusion over `[x, y, vx, vy, yaw]`. Wheel or body
//! odometry and the IMU drive a unicycle prediction; UWB fixes arrive as 2D
//! position measurements.
//!
//! The velocity states are re-derived from the odometry speed and the
//! predicted heading on every predict, so their covariance comes entirely
//! from the input noise and Q.

use nalgebra::{Matrix2, Matrix5, Matrix5x2, SymmetricEigen, Vector2, Vector5};
use serde::{Deserialize, Serialize};

use super::LocError;
use crate::kinematics::normalize_angle;

pub const LIDAR_MAX_RANGE: f64 = 12.0;

const SYM_TOL: f64 = 1e-9;
const PSD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Odometry speed noise as a fraction of |v|.
    pub odom_speed_frac: f64,
    pub odom_yaw_rate_sigma: f64,
    pub imu_yaw_rate_sigma: f64,
    /// Continuous process noise densities; Q·dt is added each predict.
    pub q_pos: f64,
    pub q_vel: f64,
    pub q_yaw: f64,
    /// Mahalanobis gate for UWB updates.
    pub gate_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            odom_speed_frac: 0.02,
            odom_yaw_rate_sigma: 0.05,
            imu_yaw_rate_sigma: 0.01,
            q_pos: 1e-4,
            q_vel: 1e-3,
            q_yaw: 1e-4,
            gate_sigma: 5.0,
        }
    }
}

impl NoiseConfig {
    pub fn q(&self) -> Matrix5<f64> {
        Matrix5::from_diagonal(&Vector5::new(
            self.q_pos, self.q_pos, self.q_vel, self.q_vel, self.q_yaw,
        ))
    }

    /// Inverse-variance blend of the two yaw-rate sources.
    pub fn blend_yaw_rate(&self, odom: f64, imu: f64) -> (f64, f64) {
        let wo = 1.0 / self.odom_yaw_rate_sigma.powi(2);
        let wi = 1.0 / self.imu_yaw_rate_sigma.powi(2);
        ((wo * odom + wi * imu) / (wo + wi), 1.0 / (wo + wi))
    }

    fn validate(&self) -> Result<(), LocError> {
        let all = [
            self.odom_speed_frac,
            self.q_pos,
            self.q_vel,
            self.q_yaw,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0))
            || !(self.odom_yaw_rate_sigma > 0.0 && self.imu_yaw_rate_sigma > 0.0)
            || !(self.gate_sigma > 0.0)
        {
            return Err(LocError::InvalidInput("noise parameters must be >= 0 (rate sigmas > 0)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Odometry {
    pub v: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedEstimate {
    pub state: Vector5<f64>,
    pub covariance: Matrix5<f64>,
    pub t: f64,
}

impl FusedEstimate {
    pub fn new(x: f64, y: f64, yaw: f64, covariance: Matrix5<f64>, t: f64) -> Self {
        Self {
            state: Vector5::new(x, y, 0.0, 0.0, normalize_angle(yaw)),
            covariance,
            t,
        }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.state[0], self.state[1])
    }

    pub fn yaw(&self) -> f64 {
        self.state[4]
    }

    pub fn position_covariance(&self) -> Matrix2<f64> {
        self.covariance.fixed_view::<2, 2>(0, 0).into_owned()
    }
}

/// Symmetric to within 1e-9 (infinity norm) and no eigenvalue below -1e-9.
pub fn check_covariance(p: &Matrix5<f64>) -> Result<(), LocError> {
    if p.iter().any(|v| !v.is_finite()) {
        return Err(LocError::ContractViolation("covariance has non-finite entries"));
    }
    let asym = p - p.transpose();
    let inf_norm = asym
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if inf_norm >= SYM_TOL {
        return Err(LocError::ContractViolation("covariance is not symmetric"));
    }
    let eig = SymmetricEigen::new(0.5 * (p + p.transpose()));
    if eig.eigenvalues.min() <= -PSD_TOL {
        return Err(LocError::ContractViolation("covariance is not positive semidefinite"));
    }
    Ok(())
}

fn symmetrize<const N: usize>(
    m: nalgebra::SMatrix<f64, N, N>,
) -> nalgebra::SMatrix<f64, N, N> {
    0.5 * (m + m.transpose())
}

pub fn kf_predict(
    est: &FusedEstimate,
    odom: Odometry,
    imu_yaw_rate: f64,
    dt: f64,
    noise: &NoiseConfig,
) -> Result<FusedEstimate, LocError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(LocError::InvalidInput("dt must be > 0"));
    }
    if !(odom.v.is_finite() && odom.omega.is_finite() && imu_yaw_rate.is_finite()) {
        return Err(LocError::InvalidInput("odometry and IMU inputs must be finite"));
    }
    noise.validate()?;
    check_covariance(&est.covariance)?;

    let (omega, omega_var) = noise.blend_yaw_rate(odom.omega, imu_yaw_rate);
    let v = odom.v;
    let s = &est.state;
    let yaw0 = s[4];
    let mid = yaw0 + 0.5 * omega * dt;
    let yaw1 = yaw0 + omega * dt;
    let (sm, cm) = mid.sin_cos();
    let (s1, c1) = yaw1.sin_cos();

    let state = Vector5::new(
        s[0] + v * cm * dt,
        s[1] + v * sm * dt,
        v * c1,
        v * s1,
        normalize_angle(yaw1),
    );

    let mut f = Matrix5::identity();
    f[(0, 4)] = -v * sm * dt;
    f[(1, 4)] = v * cm * dt;
    f[(2, 2)] = 0.0;
    f[(3, 3)] = 0.0;
    f[(2, 4)] = -v * s1;
    f[(3, 4)] = v * c1;

    let g = Matrix5x2::new(
        cm * dt,
        -0.5 * v * sm * dt * dt,
        sm * dt,
        0.5 * v * cm * dt * dt,
        c1,
        -v * s1 * dt,
        s1,
        v * c1 * dt,
        0.0,
        dt,
    );
    let sigma_v = noise.odom_speed_frac * v.abs();
    let u = Matrix2::new(sigma_v * sigma_v, 0.0, 0.0, omega_var);

    let p = f * est.covariance * f.transpose() + g * u * g.transpose() + noise.q() * dt;
    Ok(FusedEstimate {
        state,
        covariance: symmetrize(p),
        t: est.t + dt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateOutcome {
    Applied { innovation: Vector2<f64>, nis: f64 },
    /// Innovation beyond the Mahalanobis gate; estimate left unchanged.
    Gated { innovation: Vector2<f64>, nis: f64 },
    /// Innovation covariance could not be inverted.
    Skipped,
}

impl UpdateOutcome {
    pub fn applied(&self) -> bool {
        matches!(self, UpdateOutcome::Applied { .. })
    }
}

pub fn kf_update_uwb(
    est: &FusedEstimate,
    meas_xy: Vector2<f64>,
    r: &Matrix2<f64>,
    gate_sigma: f64,
) -> Result<(FusedEstimate, UpdateOutcome), LocError> {
    if !(meas_xy.x.is_finite() && meas_xy.y.is_finite()) {
        return Err(LocError::InvalidInput("measurement must be finite"));
    }
    if r.iter().any(|v| !v.is_finite())
        || (r[(0, 1)] - r[(1, 0)]).abs() > SYM_TOL * r.abs().max().max(1.0)
    {
        return Err(LocError::ContractViolation("R must be symmetric"));
    }
    let re = SymmetricEigen::new(symmetrize(*r));
    if re.eigenvalues.min() < -PSD_TOL * re.eigenvalues.max().abs().max(1.0) {
        return Err(LocError::ContractViolation("R must be positive semidefinite"));
    }
    check_covariance(&est.covariance)?;

    let p = &est.covariance;
    let innovation = meas_xy - est.position();
    let s = p.fixed_view::<2, 2>(0, 0).into_owned() + r;
    let Some(s_inv) = s.try_inverse().filter(|_| s.determinant() > 1e-18) else {
        log::warn!("uwb update skipped: singular innovation covariance");
        return Ok((*est, UpdateOutcome::Skipped));
    };
    let nis = (innovation.transpose() * s_inv * innovation)[0];
    if nis.sqrt() > gate_sigma {
        return Ok((*est, UpdateOutcome::Gated { innovation, nis }));
    }

    let p_ht = p.fixed_view::<5, 2>(0, 0).into_owned();
    let k = p_ht * s_inv;
    let mut state = est.state + k * innovation;
    state[4] = normalize_angle(state[4]);
    let mut i_kh = Matrix5::identity();
    let mut left = i_kh.fixed_view_mut::<5, 2>(0, 0);
    left -= k;
    let joseph = i_kh * p * i_kh.transpose() + k * r * k.transpose();
    Ok((
        FusedEstimate {
            state,
            covariance: symmetrize(joseph),
            t: est.t,
        },
        UpdateOutcome::Applied { innovation, nis },
    ))
}

/// Height above ground from a downward lidar range and the body tilt.
/// `Ok(None)` when the range is beyond `max_range`.
pub fn altitude_from_lidar_with(
    range: f64,
    roll: f64,
    pitch: f64,
    max_range: f64,
) -> Result<Option<f64>, LocError> {
    if !(range >= 0.0) || !roll.is_finite() || !pitch.is_finite() {
        return Err(LocError::InvalidInput("lidar range must be >= 0 and tilt finite"));
    }
    if range > max_range {
        return Ok(None);
    }
    Ok(Some((range * roll.cos() * pitch.cos()).max(0.0)))
}

pub fn altitude_from_lidar(range: f64, roll: f64, pitch: f64) -> Result<Option<f64>, LocError> {
    altitude_from_lidar_with(range, roll, pitch, LIDAR_MAX_RANGE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn diag(v: [f64; 5]) -> Matrix5<f64> {
        Matrix5::from_diagonal(&Vector5::from(v))
    }

    #[test]
    fn standing_still_grows_by_process_noise() {
        let noise = NoiseConfig::default();
        let p0 = diag([0.04, 0.04, 0.0, 0.0, 0.01]);
        let est = FusedEstimate::new(1.0, 2.0, 0.3, p0, 0.0);
        let dt = 0.05;
        let out = kf_predict(&est, Odometry { v: 0.0, omega: 0.0 }, 0.0, dt, &noise).unwrap();
        assert_eq!(out.state, est.state);
        let (_, var) = noise.blend_yaw_rate(0.0, 0.0);
        let mut want = p0 + noise.q() * dt;
        // the blended yaw-rate noise integrates into yaw
        want[(4, 4)] += var * dt * dt;
        assert!((out.covariance - want).abs().max() < 1e-15);
    }

    #[test]
    fn straight_line() {
        let est = FusedEstimate::new(0.0, 0.0, 0.0, diag([0.01; 5]), 0.0);
        let out = kf_predict(
            &est,
            Odometry { v: 1.0, omega: 0.0 },
            0.0,
            1.0,
            &NoiseConfig::default(),
        )
        .unwrap();
        assert!((out.state[0] - 1.0).abs() < 1e-15);
        assert_eq!(out.state[1], 0.0);
        assert!((out.state[2] - 1.0).abs() < 1e-15);
        assert_eq!(out.t, 1.0);
    }

    #[test]
    fn blend_is_precision_weighted() {
        let n = NoiseConfig {
            odom_yaw_rate_sigma: 0.1,
            imu_yaw_rate_sigma: 0.1,
            ..Default::default()
        };
        let (w, var) = n.blend_yaw_rate(1.0, 0.0);
        assert!((w - 0.5).abs() < 1e-15);
        assert!((var - 0.005).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_covariance() {
        let mut p = diag([0.01; 5]);
        p[(0, 0)] = -1.0;
        let est = FusedEstimate::new(0.0, 0.0, 0.0, p, 0.0);
        let n = NoiseConfig::default();
        assert!(matches!(
            kf_predict(&est, Odometry { v: 0.0, omega: 0.0 }, 0.0, 0.1, &n),
            Err(LocError::ContractViolation(_))
        ));
        let mut p = diag([0.01; 5]);
        p[(0, 1)] = 1e-3;
        let est = FusedEstimate::new(0.0, 0.0, 0.0, p, 0.0);
        assert!(kf_predict(&est, Odometry { v: 0.0, omega: 0.0 }, 0.0, 0.1, &n).is_err());
        let est = FusedEstimate::new(0.0, 0.0, 0.0, diag([0.01; 5]), 0.0);
        assert!(kf_predict(&est, Odometry { v: 0.0, omega: 0.0 }, 0.0, 0.0, &n).is_err());
    }

    #[test]
    fn update_at_predicted_position() {
        let p0 = diag([0.1, 0.1, 0.05, 0.05, 0.02]);
        let est = FusedEstimate::new(2.0, 3.0, 0.5, p0, 1.0);
        let r = Matrix2::identity() * 0.04;
        let (out, o) = kf_update_uwb(&est, Vector2::new(2.0, 3.0), &r, 5.0).unwrap();
        assert!(o.applied());
        assert_eq!(out.state, est.state);
        assert!(out.covariance.trace() < est.covariance.trace());
        assert!(out.position_covariance().trace() < est.position_covariance().trace());
    }

    #[test]
    fn huge_r_is_uninformative() {
        let est = FusedEstimate::new(2.0, 3.0, 0.5, diag([0.1; 5]), 0.0);
        let r = Matrix2::identity() * 0.04e9;
        let (out, _) = kf_update_uwb(&est, Vector2::new(3.0, 2.0), &r, 5.0).unwrap();
        assert!((out.state - est.state).abs().max() < 1e-6);
    }

    #[test]
    fn scalar_gain() {
        // decoupled axes make each one a scalar filter with k = P / (P + R)
        let (px, py, rx, ry) = (0.3, 0.7, 0.1, 0.2);
        let est = FusedEstimate::new(0.0, 0.0, 0.0, diag([px, py, 0.1, 0.1, 0.1]), 0.0);
        let r = Matrix2::new(rx, 0.0, 0.0, ry);
        let (out, _) = kf_update_uwb(&est, Vector2::new(1.0, 1.0), &r, f64::INFINITY).unwrap();
        let (kx, ky) = (px / (px + rx), py / (py + ry));
        assert!((out.state[0] - kx).abs() < 1e-12);
        assert!((out.state[1] - ky).abs() < 1e-12);
        assert!((out.covariance[(0, 0)] - (1.0 - kx) * px).abs() < 1e-12);
        assert!((out.covariance[(1, 1)] - (1.0 - ky) * py).abs() < 1e-12);
    }

    #[test]
    fn gate_and_skip() {
        let est = FusedEstimate::new(0.0, 0.0, 0.0, diag([0.01; 5]), 0.0);
        let r = Matrix2::identity() * 0.01;
        let (out, o) = kf_update_uwb(&est, Vector2::new(5.0, 0.0), &r, 5.0).unwrap();
        assert!(matches!(o, UpdateOutcome::Gated { .. }));
        assert_eq!(out, est);
        let zero = FusedEstimate::new(0.0, 0.0, 0.0, Matrix5::zeros(), 0.0);
        let (_, o) = kf_update_uwb(&zero, Vector2::new(0.1, 0.0), &Matrix2::zeros(), 5.0).unwrap();
        assert_eq!(o, UpdateOutcome::Skipped);
        let bad_r = Matrix2::new(1.0, 0.5, 0.0, 1.0);
        assert!(kf_update_uwb(&est, Vector2::zeros(), &bad_r, 5.0).is_err());
    }

    #[test]
    fn lidar() {
        assert_eq!(altitude_from_lidar(1.5, 0.0, 0.0).unwrap(), Some(1.5));
        let z = altitude_from_lidar(2.0, 0.0, 60f64.to_radians()).unwrap().unwrap();
        assert!((z - 1.0).abs() < 1e-12);
        assert_eq!(altitude_from_lidar(20.0, 0.0, 0.0).unwrap(), None);
        assert!(altitude_from_lidar(-1.0, 0.0, 0.0).is_err());
        assert_eq!(altitude_from_lidar(1.0, 0.0, 2.0).unwrap(), Some(0.0));
    }

    fn arb_cov() -> impl Strategy<Value = Matrix5<f64>> {
        proptest::collection::vec(-1.0..1.0f64, 25).prop_map(|v| {
            let a = Matrix5::from_vec(v);
            a * a.transpose() * 0.1 + Matrix5::identity() * 1e-4
        })
    }

    proptest! {
        #[test]
        fn predict_update_keep_covariance_healthy(
            p in arb_cov(),
            v in -1.5..1.5f64,
            w in -2.0..2.0f64,
            imu in -2.0..2.0f64,
            dt in 0.001..0.5f64,
            z in (-1.0..1.0f64, -1.0..1.0f64),
            rd in 0.001..1.0f64,
        ) {
            let est = FusedEstimate::new(1.0, 1.0, 0.2, p, 0.0);
            let n = NoiseConfig::default();
            let pred = kf_predict(&est, Odometry { v, omega: w }, imu, dt, &n).unwrap();
            check_covariance(&pred.covariance).unwrap();
            let r = Matrix2::identity() * rd;
            let (upd, _) = kf_update_uwb(&pred, pred.position() + Vector2::new(z.0, z.1), &r, f64::INFINITY).unwrap();
            check_covariance(&upd.covariance).unwrap();
            prop_assert!(upd.position_covariance().trace() <= pred.position_covariance().trace() + 1e-12);
        }

        #[test]
        fn predict_grows_pose_block_from_diagonal(
            d in proptest::collection::vec(1e-4..1.0f64, 5),
            v in -1.5..1.5f64,
            w in -2.0..2.0f64,
            dt in 0.001..0.5f64,
        ) {
            let p = diag([d[0], d[1], d[2], d[3], d[4]]);
            let est = FusedEstimate::new(0.0, 0.0, 1.0, p, 0.0);
            let out = kf_predict(&est, Odometry { v, omega: w }, w, dt, &NoiseConfig::default()).unwrap();
            let pose = |m: &Matrix5<f64>| m[(0, 0)] + m[(1, 1)] + m[(4, 4)];
            prop_assert!(pose(&out.covariance) > pose(&p));
        }
    }
}
