//! The 65-entry parameter vector, the coefficient matrices H_i, and the
//! regressor Gamma(z) that make the LTV step linear in the unknowns.
//!
//! Layout of theta (fixed, versioned; telemetry refers to entries by index):
//!
//! | index   | content                                                    |
//! |---------|------------------------------------------------------------|
//! | 0       | constant 1                                                 |
//! | 1       | 1/m (1/kg)                                                 |
//! | 2..=10  | row-major entries of I^-1                                  |
//! | 11..=64 | kappa products: (I^-1 entry a, row-major, a in 0..9) times |
//! |         | (unique symmetric entry s of I, s in {xx,yy,zz,xy,xz,yz}); |
//! |         | index = 11 + 6a + s                                        |

use crate::error::{Error, Result};
use crate::linearize::{LtvModel, OperatingPoint, CONST_SLOT, N_INPUTS, N_STATES, N_Z};
use crate::srb::{skew, InertialParams, NUM_FEET};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

pub const N_THETA: usize = 65;

/// Index of the kappa product of I^-1 entry `a` (row-major) and the unique
/// symmetric inertia entry `s`.
pub fn kappa_index(a: usize, s: usize) -> usize {
    debug_assert!(a < 9 && s < 6);
    11 + 6 * a + s
}

/// Unique-entry index of the symmetric inertia matrix for position (r, c).
pub fn sym_index(r: usize, c: usize) -> usize {
    match (r.min(c), r.max(c)) {
        (0, 0) => 0,
        (1, 1) => 1,
        (2, 2) => 2,
        (0, 1) => 3,
        (0, 2) => 4,
        (1, 2) => 5,
        _ => unreachable!(),
    }
}

/// The uncertain-parameter vector of the regression model.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaVector(pub [f64; N_THETA]);

impl ThetaVector {
    pub fn zeros() -> Self {
        Self([0.0; N_THETA])
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.0)
    }

    pub fn from_dvector(v: &DVector<f64>) -> Self {
        let mut out = [0.0; N_THETA];
        out.copy_from_slice(v.as_slice());
        Self(out)
    }

    /// The I^-1 block, symmetrized.
    pub fn inv_inertia(&self) -> Matrix3<f64> {
        let raw = Matrix3::new(
            self.0[2], self.0[3], self.0[4], self.0[5], self.0[6], self.0[7], self.0[8],
            self.0[9], self.0[10],
        );
        (raw + raw.transpose()) * 0.5
    }
}

impl std::ops::Index<usize> for ThetaVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Exact theta for known inertial parameters.
pub fn theta_from_params(params: &InertialParams) -> Result<ThetaVector> {
    params.validate()?;
    let inv = params.inertia_inverse()?;
    let mut theta = [0.0; N_THETA];
    theta[0] = 1.0;
    theta[1] = 1.0 / params.mass;
    let sym_entries = [
        params.inertia[(0, 0)],
        params.inertia[(1, 1)],
        params.inertia[(2, 2)],
        params.inertia[(0, 1)],
        params.inertia[(0, 2)],
        params.inertia[(1, 2)],
    ];
    for r in 0..3 {
        for c in 0..3 {
            let a = 3 * r + c;
            theta[2 + a] = inv[(r, c)];
            for s in 0..6 {
                theta[kappa_index(a, s)] = inv[(r, c)] * sym_entries[s];
            }
        }
    }
    Ok(ThetaVector(theta))
}

/// Coefficient matrices H_i, one per state row, valid for a single operating
/// point and stance set: Gamma_i(z) = z^T H_i.
#[derive(Clone, Debug)]
pub struct HStack {
    pub h: Vec<DMatrix<f64>>,
    pub ts: f64,
}

impl HStack {
    /// max_i of the maximum absolute row sum of H_i (the norm used by the
    /// convex stability bound).
    pub fn max_row_sum_norm(&self) -> f64 {
        self.h
            .iter()
            .map(|hi| {
                (0..N_Z)
                    .map(|r| hi.row(r).iter().map(|v| v.abs()).sum::<f64>())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

fn levi_civita(a: usize, b: usize, d: usize) -> f64 {
    match (a, b, d) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

/// Build the H stack for one operating point.
///
/// Deterministic coefficients (Ts, omega_bar, R_bar, tau_bar, moment arms,
/// gravity) live in H; the uncertain factors live in theta. The omega rows'
/// identity block rides the kappa entries through I^-1 I = 1, which keeps
/// those rows free of theta[0].
pub fn build_h_stack(op: &OperatingPoint, ts: f64, gravity: &Vector3<f64>) -> Result<HStack> {
    if !(ts > 0.0) {
        return Err(Error::InvalidParameter("ts must be positive"));
    }
    let z_u = |j: usize, l: usize| N_STATES + 3 * j + l;
    let mut h: Vec<DMatrix<f64>> = (0..N_STATES).map(|_| DMatrix::zeros(N_Z, N_THETA)).collect();

    // position rows: p + Ts v, deterministic
    for i in 0..3 {
        h[i][(i, 0)] += 1.0;
        h[i][(3 + i, 0)] += ts;
    }
    // velocity rows: v + Ts/m sum f - Ts g c
    for i in 0..3 {
        let row = 3 + i;
        h[row][(row, 0)] += 1.0;
        h[row][(CONST_SLOT, 0)] += -ts * gravity[i];
        for j in 0..NUM_FEET {
            if op.stance[j] {
                h[row][(z_u(j, i), 1)] += ts;
            }
        }
    }
    // attitude-error rows: xi + Ts omega, deterministic
    for i in 0..3 {
        let row = 6 + i;
        h[row][(row, 0)] += 1.0;
        h[row][(9 + i, 0)] += ts;
    }
    // omega rows
    let omega_bar = op.omega;
    let s_omega_bar = skew(&omega_bar);
    let s_tau = skew(&op.tau_body);
    for r in 0..3 {
        let row = 9 + r;
        let hi = &mut h[row];
        // identity block via kappa: sum_a (I^-1)_{r,a} I_{a,c} = delta_{r,c}
        for a in 0..3 {
            for c in 0..3 {
                hi[(9 + c, kappa_index(3 * r + a, sym_index(a, c)))] += 1.0;
            }
        }
        // Ts I^-1 S(tau_body) xi
        for a in 0..3 {
            for l in 0..3 {
                hi[(6 + l, 2 + 3 * r + a)] += ts * s_tau[(a, l)];
            }
        }
        // Ts I^-1 S(I omega_bar) (omega - omega_bar c)
        //   = -Ts I^-1 S(delta omega) I omega_bar, expanded through kappa
        for a in 0..3 {
            for b in 0..3 {
                for d in 0..3 {
                    let eps = levi_civita(a, b, d);
                    if eps == 0.0 {
                        continue;
                    }
                    for c in 0..3 {
                        let k = kappa_index(3 * r + a, sym_index(b, c));
                        hi[(9 + d, k)] += ts * eps * omega_bar[c];
                        hi[(CONST_SLOT, k)] -= ts * eps * omega_bar[c] * omega_bar[d];
                    }
                }
            }
        }
        // -Ts I^-1 S(omega_bar) I (omega - omega_bar c)
        for a in 0..3 {
            for b in 0..3 {
                if s_omega_bar[(a, b)] == 0.0 {
                    continue;
                }
                for c in 0..3 {
                    let k = kappa_index(3 * r + a, sym_index(b, c));
                    hi[(9 + c, k)] -= ts * s_omega_bar[(a, b)];
                    hi[(CONST_SLOT, k)] += ts * s_omega_bar[(a, b)] * omega_bar[c];
                }
            }
        }
        // Ts I^-1 R^T sum_j S(r_j)(f_j - fbar_j c) and the drift
        // Ts I^-1 (tau_body - S(omega_bar) I omega_bar) c
        for j in 0..NUM_FEET {
            if !op.stance[j] {
                continue;
            }
            let arm: Matrix3<f64> = op.rot.transpose() * skew(&op.feet_rel[j]);
            for a in 0..3 {
                for l in 0..3 {
                    hi[(z_u(j, l), 2 + 3 * r + a)] += ts * arm[(a, l)];
                    hi[(CONST_SLOT, 2 + 3 * r + a)] -= ts * arm[(a, l)] * op.grfs[j][l];
                }
            }
        }
        for a in 0..3 {
            hi[(CONST_SLOT, 2 + 3 * r + a)] += ts * op.tau_body[a];
        }
        for a in 0..3 {
            for b in 0..3 {
                if s_omega_bar[(a, b)] == 0.0 {
                    continue;
                }
                for c in 0..3 {
                    let k = kappa_index(3 * r + a, sym_index(b, c));
                    hi[(CONST_SLOT, k)] -= ts * s_omega_bar[(a, b)] * omega_bar[c];
                }
            }
        }
    }
    // constant-slot row: c' = c * theta[0]
    h[CONST_SLOT][(CONST_SLOT, 0)] = 1.0;

    Ok(HStack { h, ts })
}

/// Regressor matrix: row i = z^T H_i.
pub fn build_gamma(z: &DVector<f64>, h: &HStack) -> DMatrix<f64> {
    debug_assert_eq!(z.len(), N_Z);
    debug_assert!((z[CONST_SLOT] - 1.0).abs() < 1e-12, "z constant slot must be 1");
    let mut gamma = DMatrix::zeros(N_STATES, N_THETA);
    for i in 0..N_STATES {
        gamma.set_row(i, &(z.transpose() * &h.h[i]));
    }
    gamma
}

/// Stack the reduced state and input into z = col(x_a, u).
pub fn stack_z(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    debug_assert_eq!(x.len(), N_STATES);
    debug_assert_eq!(u.len(), N_INPUTS);
    let mut z = DVector::zeros(N_Z);
    z.rows_mut(0, N_STATES).copy_from(x);
    z.rows_mut(N_STATES, N_INPUTS).copy_from(u);
    z
}

/// Recover the (A, B) pair implied by a parameter estimate: row i of
/// [A B] is (H_i theta)^T.
pub fn model_from_theta(h: &HStack, theta: &ThetaVector) -> LtvModel {
    let th = theta.to_dvector();
    let mut a = DMatrix::zeros(N_STATES, N_STATES);
    let mut b = DMatrix::zeros(N_STATES, N_INPUTS);
    for i in 0..N_STATES {
        let row = &h.h[i] * &th; // length N_Z
        for c in 0..N_STATES {
            a[(i, c)] = row[c];
        }
        for c in 0..N_INPUTS {
            b[(i, c)] = row[N_STATES + c];
        }
    }
    LtvModel { a, b, ts: h.ts }
}
