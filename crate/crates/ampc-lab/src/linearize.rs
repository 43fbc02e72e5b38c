//! Discrete LTV model of the SRB dynamics about an operating point.
//!
//! The reduced state is augmented with a self-reproducing constant slot so
//! that gravity and the gyroscopic drift stay inside the linear-regression
//! form x(t+1) = Gamma(z) theta.

use crate::error::{Error, Result};
use crate::srb::{log_so3, skew, InertialParams, RigidBodyState, NUM_FEET};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

/// Reduced-state dimension: p(3), v(3), xi(3), omega(3), constant slot.
pub const N_STATES: usize = 13;
/// Input dimension: four feet times three force components.
pub const N_INPUTS: usize = 12;
/// Stacked regression variable z = col(x_a, u).
pub const N_Z: usize = N_STATES + N_INPUTS;

/// Index of the constant slot inside the reduced state.
pub const CONST_SLOT: usize = 12;

/// Linearization point: attitude, body rate, nominal GRFs, and frozen
/// moment arms of the stance feet.
#[derive(Clone, Debug)]
pub struct OperatingPoint {
    /// Attitude body -> world at the linearization point.
    pub rot: Matrix3<f64>,
    /// Body angular velocity (rad/s).
    pub omega: Vector3<f64>,
    /// Nominal GRFs (N, world frame).
    pub grfs: [Vector3<f64>; NUM_FEET],
    /// Moment arms r_j: foot position relative to the COM (m, world frame).
    pub feet_rel: [Vector3<f64>; NUM_FEET],
    pub stance: [bool; NUM_FEET],
    /// Net torque in the body frame, R^T sum S(r_j) f_j.
    pub tau_body: Vector3<f64>,
}

impl OperatingPoint {
    pub fn new(
        rot: Matrix3<f64>,
        omega: Vector3<f64>,
        grfs: [Vector3<f64>; NUM_FEET],
        feet_rel: [Vector3<f64>; NUM_FEET],
        stance: [bool; NUM_FEET],
    ) -> Self {
        let mut tau_world = Vector3::zeros();
        for j in 0..NUM_FEET {
            if stance[j] {
                tau_world += feet_rel[j].cross(&grfs[j]);
            }
        }
        Self { rot, omega, grfs, feet_rel, stance, tau_body: rot.transpose() * tau_world }
    }

    /// Consistency of tau_body with grfs and feet_rel.
    pub fn torque_residual(&self) -> f64 {
        let mut tau_world = Vector3::zeros();
        for j in 0..NUM_FEET {
            if self.stance[j] {
                tau_world += self.feet_rel[j].cross(&self.grfs[j]);
            }
        }
        (self.rot.transpose() * tau_world - self.tau_body).norm()
    }

    /// Random operating point, used by the oracle suites.
    pub fn random<R: rand::Rng>(rng: &mut R) -> Self {
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-0.5..0.5),
        );
        let rot = crate::srb::exp_so3(&axis);
        let omega = Vector3::new(
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        );
        let mut grfs = [Vector3::zeros(); NUM_FEET];
        let mut feet_rel = [Vector3::zeros(); NUM_FEET];
        let mut stance = [false; NUM_FEET];
        for j in 0..NUM_FEET {
            stance[j] = rng.gen_bool(0.7);
            feet_rel[j] = Vector3::new(
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.35..-0.15),
            );
            if stance[j] {
                grfs[j] = Vector3::new(
                    rng.gen_range(-20.0..20.0),
                    rng.gen_range(-20.0..20.0),
                    rng.gen_range(0.0..80.0),
                );
            }
        }
        Self::new(rot, omega, grfs, feet_rel, stance)
    }
}

/// Reduced state in the receding local frame.
#[derive(Clone, Debug)]
pub struct ReducedState {
    /// Position relative to the local anchor (m).
    pub p: Vector3<f64>,
    /// COM velocity (m/s, world frame).
    pub v: Vector3<f64>,
    /// Attitude error vee(log(R_ref^T R)) (rad).
    pub xi: Vector3<f64>,
    /// Body angular velocity (rad/s).
    pub omega: Vector3<f64>,
}

impl ReducedState {
    pub fn zero() -> Self {
        Self {
            p: Vector3::zeros(),
            v: Vector3::zeros(),
            xi: Vector3::zeros(),
            omega: Vector3::zeros(),
        }
    }

    /// 13-vector with the constant slot pinned at exactly 1.
    pub fn to_vector(&self) -> DVector<f64> {
        let mut x = DVector::zeros(N_STATES);
        for i in 0..3 {
            x[i] = self.p[i];
            x[3 + i] = self.v[i];
            x[6 + i] = self.xi[i];
            x[9 + i] = self.omega[i];
        }
        x[CONST_SLOT] = 1.0;
        x
    }

    pub fn from_vector(x: &DVector<f64>) -> Self {
        Self {
            p: Vector3::new(x[0], x[1], x[2]),
            v: Vector3::new(x[3], x[4], x[5]),
            xi: Vector3::new(x[6], x[7], x[8]),
            omega: Vector3::new(x[9], x[10], x[11]),
        }
    }
}

/// Discrete LTV model x(t+1) = A x(t) + B u(t) in augmented coordinates.
#[derive(Clone, Debug)]
pub struct LtvModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub ts: f64,
}

/// Explicit-Euler discretization of the SRB linearization.
///
/// Affine terms (gravity, gyroscopic drift, nominal-input offsets) ride the
/// constant slot so the model is strictly linear in the augmented state.
pub fn build_ltv(
    op: &OperatingPoint,
    params: &InertialParams,
    ts: f64,
    gravity: &Vector3<f64>,
) -> Result<LtvModel> {
    if !(ts > 0.0) {
        return Err(Error::InvalidParameter("ts must be positive"));
    }
    params.validate()?;
    let inertia_inv = params.inertia_inverse()?;
    let inertia = params.inertia;
    let omega_bar = op.omega;

    let mut a = DMatrix::zeros(N_STATES, N_STATES);
    let mut b = DMatrix::zeros(N_STATES, N_INPUTS);

    // p row: p + Ts v
    for i in 0..3 {
        a[(i, i)] = 1.0;
        a[(i, 3 + i)] = ts;
    }
    // v row: v + Ts/m sum f_j - Ts g c
    for i in 0..3 {
        a[(3 + i, 3 + i)] = 1.0;
        a[(3 + i, CONST_SLOT)] = -ts * gravity[i];
        for j in 0..NUM_FEET {
            if op.stance[j] {
                b[(3 + i, 3 * j + i)] = ts / params.mass;
            }
        }
    }
    // xi row: xi + Ts omega
    for i in 0..3 {
        a[(6 + i, 6 + i)] = 1.0;
        a[(6 + i, 9 + i)] = ts;
    }
    // omega row
    let gyro_jac = skew(&(inertia * omega_bar)) - skew(&omega_bar) * inertia;
    let omega_omega = Matrix3::identity() + inertia_inv * gyro_jac * ts;
    let omega_xi = inertia_inv * skew(&op.tau_body) * ts;
    let mut force_offset = Vector3::zeros();
    for j in 0..NUM_FEET {
        if op.stance[j] {
            let arm: Matrix3<f64> = op.rot.transpose() * skew(&op.feet_rel[j]);
            let block = inertia_inv * arm * ts;
            for r in 0..3 {
                for c in 0..3 {
                    b[(9 + r, 3 * j + c)] = block[(r, c)];
                }
            }
            force_offset += arm * op.grfs[j];
        }
    }
    let drift = inertia_inv
        * (-gyro_jac * omega_bar - force_offset + op.tau_body
            - omega_bar.cross(&(inertia * omega_bar)))
        * ts;
    for r in 0..3 {
        a[(9 + r, CONST_SLOT)] = drift[r];
        for c in 0..3 {
            a[(9 + r, 9 + c)] = omega_omega[(r, c)];
            a[(9 + r, 6 + c)] = omega_xi[(r, c)];
        }
    }
    // constant slot reproduces itself
    a[(CONST_SLOT, CONST_SLOT)] = 1.0;

    Ok(LtvModel { a, b, ts })
}

/// Express the plant state in the receding local frame.
///
/// The anchor carries the COM (x, y) and the nominal standing height, so the
/// position block stays bounded during travel.
pub fn to_local_frame(
    state: &RigidBodyState,
    reference_yaw: f64,
    anchor: &Vector3<f64>,
) -> Result<ReducedState> {
    let rot_ref = yaw_rotation(reference_yaw);
    let xi = log_so3(&(rot_ref.transpose() * state.rot))?;
    Ok(ReducedState { p: state.r - anchor, v: state.v, xi, omega: state.omega })
}

pub fn yaw_rotation(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}
