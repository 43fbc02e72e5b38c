//! Nonlinear single-rigid-body dynamics: the simulation ground truth.
//!
//! The plant is a lumped rigid body driven by ground reaction forces at up
//! to four point feet. Swing feet carry zero force. Payloads attach rigidly
//! to the trunk and are folded into the body's mass and inertia.

use crate::error::{Error, Result};
use nalgebra::{Matrix3, Vector3};

pub const NUM_FEET: usize = 4;

/// Skew-symmetric matrix S(v) such that S(v) w = v x w.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues formula: exp(S(phi)) for a rotation vector phi.
pub fn exp_so3(phi: &Vector3<f64>) -> Matrix3<f64> {
    let angle = phi.norm();
    let s = skew(phi);
    if angle < 1e-8 {
        // second-order Taylor expansion, exact to machine precision here
        Matrix3::identity() + s + s * s * 0.5
    } else {
        Matrix3::identity() + s * (angle.sin() / angle)
            + s * s * ((1.0 - angle.cos()) / (angle * angle))
    }
}

/// Rotation-vector logarithm of R in SO(3). Errors only within 1e-12 of pi.
pub fn log_so3(rot: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let trace = rot.trace();
    let cos_angle = ((trace - 1.0) * 0.5).clamp(-1.0, 1.0);
    let angle = cos_angle.acos();
    if angle < 1e-10 {
        // near identity: vee of the skew part is already first order exact
        return Ok(Vector3::new(
            (rot[(2, 1)] - rot[(1, 2)]) * 0.5,
            (rot[(0, 2)] - rot[(2, 0)]) * 0.5,
            (rot[(1, 0)] - rot[(0, 1)]) * 0.5,
        ));
    }
    if (std::f64::consts::PI - angle).abs() < 1e-12 {
        return Err(Error::RotationLogAtPi);
    }
    if angle > 3.0 {
        // stable branch near pi: axis from the symmetric part
        let b = (rot + rot.transpose()) * 0.5 - Matrix3::identity() * cos_angle;
        // columns of b are (1 - cos) * axis * axis^T; pick the largest
        let diag = Vector3::new(b[(0, 0)], b[(1, 1)], b[(2, 2)]);
        let k = diag.imax();
        let mut axis = b.column(k) / (diag[k] * (1.0 - cos_angle)).sqrt().max(1e-300);
        axis /= axis.norm();
        // sign from the skew part
        let w = Vector3::new(
            rot[(2, 1)] - rot[(1, 2)],
            rot[(0, 2)] - rot[(2, 0)],
            rot[(1, 0)] - rot[(0, 1)],
        );
        if w.dot(&axis) < 0.0 {
            axis = -axis;
        }
        return Ok(axis * angle);
    }
    let factor = angle / (2.0 * angle.sin());
    Ok(Vector3::new(
        rot[(2, 1)] - rot[(1, 2)],
        rot[(0, 2)] - rot[(2, 0)],
        rot[(1, 0)] - rot[(0, 1)],
    ) * factor)
}

/// Project a near-rotation matrix back onto SO(3) (polar factor via SVD).
pub fn polar_orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        // flip the weakest singular direction to stay in SO(3)
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * vt;
    }
    r
}

/// Ground-truth state of the single rigid body.
#[derive(Clone, Debug)]
pub struct RigidBodyState {
    /// COM position, world frame (m).
    pub r: Vector3<f64>,
    /// COM velocity, world frame (m/s).
    pub v: Vector3<f64>,
    /// Rotation body -> world.
    pub rot: Matrix3<f64>,
    /// Angular velocity, body frame (rad/s).
    pub omega: Vector3<f64>,
}

impl RigidBodyState {
    pub fn is_finite(&self) -> bool {
        self.r.iter().all(|x| x.is_finite())
            && self.v.iter().all(|x| x.is_finite())
            && self.rot.iter().all(|x| x.is_finite())
            && self.omega.iter().all(|x| x.is_finite())
    }

    /// Frobenius deviation of R^T R from identity.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rot.transpose() * self.rot - Matrix3::identity()).norm()
    }

    /// Roll, pitch, yaw of the body (ZYX convention), for fall detection and logs.
    pub fn roll_pitch_yaw(&self) -> Vector3<f64> {
        let r = &self.rot;
        let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
        let roll = r[(2, 1)].atan2(r[(2, 2)]);
        let yaw = r[(1, 0)].atan2(r[(0, 0)]);
        Vector3::new(roll, pitch, yaw)
    }
}

/// Mass and body-frame inertia: the quantities the estimator chases.
#[derive(Clone, Debug)]
pub struct InertialParams {
    pub mass: f64,
    pub inertia: Matrix3<f64>,
}

impl InertialParams {
    pub fn new(mass: f64, inertia: Matrix3<f64>) -> Result<Self> {
        let p = Self { mass, inertia };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) || !self.mass.is_finite() {
            return Err(Error::InvalidParameter("mass must be positive and finite"));
        }
        if (self.inertia - self.inertia.transpose()).norm() > 1e-12 {
            return Err(Error::InvalidParameter("inertia must be symmetric"));
        }
        let eig = self.inertia.symmetric_eigenvalues();
        if eig.iter().any(|&e| e <= 0.0) {
            return Err(Error::SingularInertia);
        }
        Ok(())
    }

    pub fn inertia_inverse(&self) -> Result<Matrix3<f64>> {
        self.inertia.try_inverse().ok_or(Error::SingularInertia)
    }

    /// Random well-conditioned parameters at quadruped scale, for the
    /// oracle suites.
    pub fn random<R: rand::Rng>(rng: &mut R) -> Self {
        let mass = rng.gen_range(5.0..30.0);
        let mut m = Matrix3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                m[(r, c)] = rng.gen_range(-0.1..0.1);
            }
        }
        let inertia = m * m.transpose()
            + Matrix3::from_diagonal(&Vector3::new(
                rng.gen_range(0.05..0.5),
                rng.gen_range(0.05..0.5),
                rng.gen_range(0.05..0.5),
            ));
        Self::new(mass, inertia).unwrap()
    }
}

/// Foot positions and the stance set.
#[derive(Clone, Debug)]
pub struct FootSet {
    /// Foot locations, world frame (m).
    pub positions: [Vector3<f64>; NUM_FEET],
    /// True for feet in ground contact.
    pub stance: [bool; NUM_FEET],
}

impl FootSet {
    pub fn num_stance(&self) -> usize {
        self.stance.iter().filter(|&&s| s).count()
    }
}

/// A rigidly attached payload, described about its own COM.
#[derive(Clone, Debug)]
pub struct PayloadSpec {
    pub mass: f64,
    /// Offset of the payload COM from the trunk COM, body frame (m).
    pub offset: Vector3<f64>,
    /// Payload inertia about its own COM (kg m^2).
    pub own_inertia: Matrix3<f64>,
}

impl PayloadSpec {
    pub fn point_mass(mass: f64, offset: Vector3<f64>) -> Self {
        Self { mass, offset, own_inertia: Matrix3::zeros() }
    }
}

/// Time derivative of the rigid-body state.
#[derive(Clone, Debug)]
pub struct StateDerivative {
    pub r_dot: Vector3<f64>,
    pub v_dot: Vector3<f64>,
    /// Body angular velocity (Rdot = R S(omega)).
    pub omega: Vector3<f64>,
    pub omega_dot: Vector3<f64>,
}

fn net_wrench(
    r_com: &Vector3<f64>,
    grfs: &[Vector3<f64>; NUM_FEET],
    feet: &FootSet,
) -> (Vector3<f64>, Vector3<f64>) {
    let mut f_net = Vector3::zeros();
    let mut tau_net = Vector3::zeros();
    for j in 0..NUM_FEET {
        if feet.stance[j] {
            f_net += grfs[j];
            tau_net += (feet.positions[j] - r_com).cross(&grfs[j]);
        }
    }
    (f_net, tau_net)
}

/// Continuous-time SRB dynamics. Moment arms are taken about the current COM.
pub fn srb_derivative(
    state: &RigidBodyState,
    grfs: &[Vector3<f64>; NUM_FEET],
    feet: &FootSet,
    params: &InertialParams,
    gravity: &Vector3<f64>,
) -> Result<StateDerivative> {
    srb_derivative_ext(state, grfs, feet, params, gravity, &Vector3::zeros())
}

/// SRB dynamics with an additional external force applied at the COM
/// (push disturbances in the simulation harness).
pub fn srb_derivative_ext(
    state: &RigidBodyState,
    grfs: &[Vector3<f64>; NUM_FEET],
    feet: &FootSet,
    params: &InertialParams,
    gravity: &Vector3<f64>,
    external_force: &Vector3<f64>,
) -> Result<StateDerivative> {
    if !state.is_finite() || grfs.iter().any(|f| !f.iter().all(|x| x.is_finite())) {
        return Err(Error::NonFinite("srb_derivative input"));
    }
    params.validate()?;
    for j in 0..NUM_FEET {
        if !feet.stance[j] && grfs[j].norm() > 0.0 {
            return Err(Error::ForceOnSwingFoot(j));
        }
    }
    let (f_net, tau_net) = net_wrench(&state.r, grfs, feet);
    let inertia_inv = params.inertia_inverse()?;
    let v_dot = (f_net + external_force) / params.mass - gravity;
    let gyroscopic = state.omega.cross(&(params.inertia * state.omega));
    let omega_dot = inertia_inv * (state.rot.transpose() * tau_net - gyroscopic);
    Ok(StateDerivative { r_dot: state.v, v_dot, omega: state.omega, omega_dot })
}

/// One classical RK4 step under zero-order-hold forces.
///
/// Rotation is integrated on a local exponential chart: the stage attitude is
/// R exp(S(phi)) with phi driven by the inverse right trivialized tangent, and
/// the step ends with a single Rodrigues update. Polar re-orthonormalization
/// kicks in if drift exceeds 1e-9.
pub fn integrate_step(
    state: &RigidBodyState,
    grfs: &[Vector3<f64>; NUM_FEET],
    feet: &FootSet,
    params: &InertialParams,
    gravity: &Vector3<f64>,
    dt: f64,
) -> Result<RigidBodyState> {
    integrate_step_ext(state, grfs, feet, params, gravity, &Vector3::zeros(), dt)
}

pub fn integrate_step_ext(
    state: &RigidBodyState,
    grfs: &[Vector3<f64>; NUM_FEET],
    feet: &FootSet,
    params: &InertialParams,
    gravity: &Vector3<f64>,
    external_force: &Vector3<f64>,
    dt: f64,
) -> Result<RigidBodyState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter("dt must be positive"));
    }
    // chart state: (r, v, phi, omega) with attitude R0 exp(S(phi))
    type Chart = (Vector3<f64>, Vector3<f64>, Vector3<f64>, Vector3<f64>);

    let deriv = |y: &Chart| -> Result<Chart> {
        let (r, v, phi, omega) = y;
        let rot = state.rot * exp_so3(phi);
        let stage = RigidBodyState { r: *r, v: *v, rot, omega: *omega };
        let d = srb_derivative_ext(&stage, grfs, feet, params, gravity, external_force)?;
        // for R = R0 exp(S(phi)) and body-frame omega:
        // phi_dot = dexp^{-1}_{-phi}(omega), truncated at second order
        let phi_dot = omega + 0.5 * phi.cross(omega)
            + phi.cross(&phi.cross(omega)) / 12.0;
        Ok((*v, d.v_dot, phi_dot, d.omega_dot))
    };

    let add = |a: &Chart, b: &Chart, s: f64| -> Chart {
        (a.0 + b.0 * s, a.1 + b.1 * s, a.2 + b.2 * s, a.3 + b.3 * s)
    };

    let y0: Chart = (state.r, state.v, Vector3::zeros(), state.omega);
    let k1 = deriv(&y0)?;
    let k2 = deriv(&add(&y0, &k1, dt * 0.5))?;
    let k3 = deriv(&add(&y0, &k2, dt * 0.5))?;
    let k4 = deriv(&add(&y0, &k3, dt))?;
    let combine = |i: fn(&Chart) -> Vector3<f64>| -> Vector3<f64> {
        i(&y0) + (i(&k1) + 2.0 * i(&k2) + 2.0 * i(&k3) + i(&k4)) * (dt / 6.0)
    };
    let r = combine(|y| y.0);
    let v = combine(|y| y.1);
    let phi = (k1.2 + 2.0 * k2.2 + 2.0 * k3.2 + k4.2) * (dt / 6.0);
    let omega = combine(|y| y.3);

    let mut rot = state.rot * exp_so3(&phi);
    let next = RigidBodyState { r, v, rot, omega };
    if next.orthonormality_error() > 1e-9 {
        rot = polar_orthonormalize(&rot);
    }
    Ok(RigidBodyState { r, v, rot, omega })
}

/// Fold a payload into the body: combined mass, COM shift (body frame), and
/// inertia transferred to the combined COM via the parallel-axis theorem.
pub fn combine_payload(
    base: &InertialParams,
    payload: &PayloadSpec,
) -> Result<(InertialParams, Vector3<f64>)> {
    if payload.mass < 0.0 {
        return Err(Error::InvalidParameter("payload mass must be nonnegative"));
    }
    if (payload.own_inertia - payload.own_inertia.transpose()).norm() > 1e-12 {
        return Err(Error::InvalidParameter("payload inertia must be symmetric"));
    }
    let total = base.mass + payload.mass;
    let shift = payload.offset * (payload.mass / total);
    let parallel_axis = |m: f64, d: &Vector3<f64>| -> Matrix3<f64> {
        Matrix3::identity() * (m * d.norm_squared()) - d * d.transpose() * m
    };
    let d_base = -shift;
    let d_payload = payload.offset - shift;
    let inertia = base.inertia
        + parallel_axis(base.mass, &d_base)
        + payload.own_inertia
        + parallel_axis(payload.mass, &d_payload);
    // symmetrize away roundoff
    let inertia = (inertia + inertia.transpose()) * 0.5;
    Ok((InertialParams::new(total, inertia)?, shift))
}
