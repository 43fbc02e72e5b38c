//! Condensed QP-based MPC over the identified model: tracking costs,
//! friction pyramid and unilateral contact, optional convex stability
//! constraints, and the non-adaptive baseline variant.

use crate::adapt::{convex_input_bound, extract_estimates, InputBound};
use crate::error::Result;
use crate::linearize::{N_INPUTS, N_STATES};
use crate::qp::{solve, QpProblem, QpSolution, QpStatus};
use crate::regressor::{model_from_theta, HStack, ThetaVector};
use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use std::time::Duration;

pub const GRAVITY: f64 = 9.81;
pub const NUM_FEET: usize = 4;

/// Controller weights and limits. Everything the QP assembly needs besides
/// the per-tick model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MpcConfig {
    pub horizon: usize,
    pub ts: f64,
    pub q_r: [f64; 3],
    pub q_v: [f64; 3],
    pub q_xi: [f64; 3],
    pub q_omega: [f64; 3],
    /// Weight on the constant slot; keeps Q positive definite.
    pub q_const: f64,
    /// Terminal weight scale: P = p_scale * Q.
    pub p_scale: f64,
    /// Input weight scale: R = r_scale * I.
    pub r_scale: f64,
    pub lambda: f64,
    pub eps_x: f64,
    /// 1 reproduces the published bound; 13 is the certified variant.
    pub n_eff: usize,
    pub mu: f64,
    pub f_z_max: f64,
    pub f_z_min: f64,
    pub adaptation_enabled: bool,
    /// Off by default: at physical force scales the input bound sits below
    /// gravity support, so enabling it surfaces infeasibility every tick.
    pub stability_bound_enabled: bool,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 7,
            ts: 6.25e-3,
            q_r: [1e5, 2e5, 1e6],
            q_v: [1e5, 1e5, 1e5],
            q_xi: [1e3, 1e3, 1e3],
            q_omega: [5e3, 5e3, 5e3],
            q_const: 1.0,
            p_scale: 10.0,
            r_scale: 1.0,
            lambda: 0.2,
            eps_x: 4.0,
            n_eff: N_STATES,
            mu: 0.6,
            f_z_max: 250.0,
            f_z_min: 0.5,
            adaptation_enabled: true,
            stability_bound_enabled: false,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        use crate::error::Error::InvalidParameter;
        if self.horizon < 1 {
            return Err(InvalidParameter("horizon must be >= 1"));
        }
        if !(self.ts > 0.0) {
            return Err(InvalidParameter("ts must be positive"));
        }
        let weights = self
            .q_r
            .iter()
            .chain(&self.q_v)
            .chain(&self.q_xi)
            .chain(&self.q_omega)
            .chain([&self.q_const, &self.p_scale, &self.r_scale]);
        for w in weights {
            if !(w.is_finite() && *w > 0.0) {
                return Err(InvalidParameter("cost weights must be positive"));
            }
        }
        if !(self.mu >= 0.0) {
            return Err(InvalidParameter("mu must be nonnegative"));
        }
        if !(self.f_z_min >= 0.0 && self.f_z_max > self.f_z_min) {
            return Err(InvalidParameter("need 0 <= f_z_min < f_z_max"));
        }
        if !(self.lambda > 0.0) {
            return Err(InvalidParameter("lambda must be positive"));
        }
        Ok(())
    }

    pub fn q_diagonal(&self) -> DVector<f64> {
        let mut q = DVector::zeros(N_STATES);
        for i in 0..3 {
            q[i] = self.q_r[i];
            q[3 + i] = self.q_v[i];
            q[6 + i] = self.q_xi[i];
            q[9 + i] = self.q_omega[i];
        }
        q[12] = self.q_const;
        q
    }
}

/// Same pipeline with adaptation off; theta_hat stays pinned at nominal.
pub fn baseline_mode(cfg: &MpcConfig) -> MpcConfig {
    let mut out = cfg.clone();
    out.adaptation_enabled = false;
    out
}

/// Velocity/yaw-rate/height command in the local frame.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Command {
    pub v_des: [f64; 3],
    pub yaw_rate_des: f64,
    pub height_des: f64,
}

impl Command {
    pub fn stand(height_des: f64) -> Self {
        Self { v_des: [0.0; 3], yaw_rate_des: 0.0, height_des }
    }
}

/// Desired states x_des_1..x_des_N in the local frame whose anchor sits at
/// `anchor_z`: positions ramp with the commanded velocity, the z target is
/// height_des - anchor_z, yaw integrates the commanded rate.
pub fn build_reference(cmd: &Command, anchor_z: f64, n: usize, ts: f64) -> Vec<DVector<f64>> {
    (1..=n)
        .map(|k| {
            let t = k as f64 * ts;
            let mut x = DVector::zeros(N_STATES);
            x[0] = cmd.v_des[0] * t;
            x[1] = cmd.v_des[1] * t;
            x[2] = cmd.height_des - anchor_z + cmd.v_des[2] * t;
            x[3] = cmd.v_des[0];
            x[4] = cmd.v_des[1];
            x[5] = cmd.v_des[2];
            x[8] = cmd.yaw_rate_des * t;
            x[11] = cmd.yaw_rate_des;
            x[12] = 1.0;
            x
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MpcStatus {
    Optimal,
    Infeasible,
    MaxIterations,
    /// The convex input bound itself admits no feasible input.
    BoundInfeasible,
}

#[derive(Clone, Debug)]
pub struct MpcSolution {
    /// GRFs to apply now, one 3-vector per foot.
    pub u0: [Vector3<f64>; NUM_FEET],
    /// Full stacked input plan (horizon * 12), for warm starts and fallback.
    pub plan: DVector<f64>,
    pub predicted_states: Vec<DVector<f64>>,
    pub status: MpcStatus,
    pub qp_iterations: usize,
    pub solve_time: Duration,
    pub active_constraints: usize,
}

fn count_active(sol: &QpSolution, p: &QpProblem) -> usize {
    let cy = &p.constraints * &sol.y;
    (0..p.lb.len())
        .filter(|&i| (cy[i] - p.lb[i]).abs() < 1e-7 || (cy[i] - p.ub[i]).abs() < 1e-7)
        .count()
}

/// Assemble the condensed QP and solve it.
///
/// States are eliminated through the frozen model (A, B) implied by
/// theta_hat at the current operating point: x_k = A^k x0 + sum A^(k-1-j) B u_j.
/// The decision vector stacks the horizon inputs (N * 12 entries).
pub fn build_and_solve(
    x0: &DVector<f64>,
    theta_hat: &ThetaVector,
    h: &HStack,
    stance: &[bool; NUM_FEET],
    x_ref: &[DVector<f64>],
    cfg: &MpcConfig,
    warm_start: Option<&DVector<f64>>,
) -> Result<MpcSolution> {
    cfg.validate()?;
    let n = cfg.horizon;
    assert_eq!(x_ref.len(), n, "reference length must equal the horizon");
    let nu = n * N_INPUTS;
    let model = model_from_theta(h, theta_hat);
    let n_stance = stance.iter().filter(|&&s| s).count();

    // input reference: estimated gravity support split across stance feet
    let mass_hat = extract_estimates(theta_hat).map(|(m, _)| m).unwrap_or(0.0);
    let fz_ref = if n_stance > 0 { mass_hat * GRAVITY / n_stance as f64 } else { 0.0 };
    let mut u_ref = DVector::zeros(nu);
    for k in 0..n {
        for j in 0..NUM_FEET {
            if stance[j] {
                u_ref[k * N_INPUTS + 3 * j + 2] = fz_ref.clamp(cfg.f_z_min, cfg.f_z_max);
            }
        }
    }

    // prediction operators: x_k = a_pow[k] x0 + s[k] U, k = 1..N
    let mut a_pow: Vec<DMatrix<f64>> = Vec::with_capacity(n + 1);
    a_pow.push(DMatrix::identity(N_STATES, N_STATES));
    for k in 0..n {
        let next = &model.a * &a_pow[k];
        a_pow.push(next);
    }
    let mut s_ops: Vec<DMatrix<f64>> = Vec::with_capacity(n);
    for k in 1..=n {
        let mut s = DMatrix::zeros(N_STATES, nu);
        for j in 0..k {
            let block = &a_pow[k - 1 - j] * &model.b;
            s.view_mut((0, j * N_INPUTS), (N_STATES, N_INPUTS)).copy_from(&block);
        }
        s_ops.push(s);
    }

    // cost: sum ||x_k - ref_k||_Qk + ||U - u_ref||_R
    let q_diag = cfg.q_diagonal();
    let mut m = DMatrix::from_diagonal(&DVector::from_element(nu, cfg.r_scale));
    let mut g = -cfg.r_scale * &u_ref;
    for k in 1..=n {
        let scale = if k == n { cfg.p_scale } else { 1.0 };
        let s = &s_ops[k - 1];
        let d = &a_pow[k] * x0 - &x_ref[k - 1];
        // accumulate S' Q S and S' Q d row by row (Q diagonal)
        for i in 0..N_STATES {
            let w = scale * q_diag[i];
            let row = s.row(i);
            for r in 0..nu {
                let sr = row[r];
                if sr == 0.0 {
                    continue;
                }
                g[r] += w * sr * d[i];
                for c in 0..nu {
                    m[(r, c)] += w * sr * row[c];
                }
            }
        }
    }
    let hessian = 2.0 * m;
    let linear = 2.0 * g;

    // constraints in box form lb <= C U <= ub
    let mut rows: Vec<(Vec<(usize, f64)>, f64, f64)> = Vec::new();
    let mut bound = None;
    if cfg.stability_bound_enabled {
        match convex_input_bound(h, cfg.lambda, cfg.eps_x, cfg.n_eff)? {
            InputBound::Feasible(b) => bound = Some(b),
            InputBound::Infeasible => {
                return Ok(MpcSolution {
                    u0: [Vector3::zeros(); NUM_FEET],
                    plan: DVector::zeros(nu),
                    predicted_states: Vec::new(),
                    status: MpcStatus::BoundInfeasible,
                    qp_iterations: 0,
                    solve_time: Duration::ZERO,
                    active_constraints: 0,
                });
            }
        }
    }
    for k in 0..n {
        let base = k * N_INPUTS;
        for j in 0..NUM_FEET {
            let (fx, fy, fz) = (base + 3 * j, base + 3 * j + 1, base + 3 * j + 2);
            if stance[j] {
                rows.push((vec![(fz, 1.0)], cfg.f_z_min, cfg.f_z_max));
                rows.push((vec![(fx, 1.0), (fz, -cfg.mu)], f64::NEG_INFINITY, 0.0));
                rows.push((vec![(fx, 1.0), (fz, cfg.mu)], 0.0, f64::INFINITY));
                rows.push((vec![(fy, 1.0), (fz, -cfg.mu)], f64::NEG_INFINITY, 0.0));
                rows.push((vec![(fy, 1.0), (fz, cfg.mu)], 0.0, f64::INFINITY));
            } else {
                for idx in [fx, fy, fz] {
                    rows.push((vec![(idx, 1.0)], 0.0, 0.0));
                }
            }
            if let Some(b) = bound {
                for idx in [fx, fy, fz] {
                    rows.push((vec![(idx, 1.0)], -b, b));
                }
            }
        }
    }
    if bound.is_some() {
        // per-component surrogate for ||x_k||_1 <= eps_x: the constant slot
        // is pinned at 1, so the 12 physical entries share eps_x - 1
        let box_x = (cfg.eps_x - 1.0) / 12.0;
        for k in 1..=n {
            let s = &s_ops[k - 1];
            let d = &a_pow[k] * x0;
            for i in 0..N_STATES - 1 {
                let coeffs: Vec<(usize, f64)> = (0..nu)
                    .filter(|&c| s[(i, c)] != 0.0)
                    .map(|c| (c, s[(i, c)]))
                    .collect();
                rows.push((coeffs, -box_x - d[i], box_x - d[i]));
            }
        }
    }

    let mut constraints = DMatrix::zeros(rows.len(), nu);
    let mut lb = DVector::zeros(rows.len());
    let mut ub = DVector::zeros(rows.len());
    for (r, (coeffs, lo, hi)) in rows.iter().enumerate() {
        for &(c, v) in coeffs {
            constraints[(r, c)] = v;
        }
        lb[r] = *lo;
        ub[r] = *hi;
    }

    let problem = QpProblem { hessian, linear, constraints, lb, ub };
    let qp = solve(&problem, warm_start)?;
    let status = match qp.status {
        QpStatus::Optimal => MpcStatus::Optimal,
        QpStatus::Infeasible => MpcStatus::Infeasible,
        QpStatus::MaxIterations => MpcStatus::MaxIterations,
    };
    let mut u0 = [Vector3::zeros(); NUM_FEET];
    for j in 0..NUM_FEET {
        u0[j] = Vector3::new(qp.y[3 * j], qp.y[3 * j + 1], qp.y[3 * j + 2]);
    }
    let predicted_states = (1..=n)
        .map(|k| &a_pow[k] * x0 + &s_ops[k - 1] * &qp.y)
        .collect();
    Ok(MpcSolution {
        u0,
        plan: qp.y.clone(),
        predicted_states,
        status,
        qp_iterations: qp.iterations,
        solve_time: qp.solve_time,
        active_constraints: count_active(&qp, &problem),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linearize::OperatingPoint;
    use crate::regressor::{build_h_stack, theta_from_params};
    use crate::srb::InertialParams;
    use approx::assert_abs_diff_eq;
    use nalgebra::Matrix3;

    fn standing_feet() -> [Vector3<f64>; NUM_FEET] {
        [
            Vector3::new(0.183, 0.13, -0.26),
            Vector3::new(0.183, -0.13, -0.26),
            Vector3::new(-0.183, 0.13, -0.26),
            Vector3::new(-0.183, -0.13, -0.26),
        ]
    }

    fn standing_setup(mass: f64) -> (OperatingPoint, ThetaVector, HStack) {
        let params = InertialParams::new(
            mass,
            Matrix3::from_diagonal(&Vector3::new(0.17, 0.7, 0.8)),
        )
        .unwrap();
        let fz = mass * GRAVITY / 4.0;
        let grfs = [Vector3::new(0.0, 0.0, fz); NUM_FEET];
        let op = OperatingPoint::new(
            Matrix3::identity(),
            Vector3::zeros(),
            grfs,
            standing_feet(),
            [true; NUM_FEET],
        );
        let theta = theta_from_params(&params).unwrap();
        let h = build_h_stack(&op, 6.25e-3, &Vector3::new(0.0, 0.0, GRAVITY)).unwrap();
        (op, theta, h)
    }

    fn x0_standing() -> DVector<f64> {
        let mut x = DVector::zeros(N_STATES);
        x[12] = 1.0;
        x
    }

    #[test]
    fn reference_zero_command_is_origin() {
        let cfg = MpcConfig::default();
        let refs = build_reference(&Command::stand(0.26), 0.26, cfg.horizon, cfg.ts);
        for r in &refs {
            for i in 0..12 {
                assert_eq!(r[i], 0.0);
            }
            assert_eq!(r[12], 1.0);
        }
    }

    #[test]
    fn reference_ramps_with_commanded_velocity() {
        let cmd = Command { v_des: [0.5, 0.0, 0.0], yaw_rate_des: 0.0, height_des: 0.26 };
        let refs = build_reference(&cmd, 0.26, 7, 6.25e-3);
        // k = 4 -> 0.5 * 4 * 6.25e-3 = 0.0125
        assert_abs_diff_eq!(refs[3][0], 0.0125, epsilon = 1e-12);
        assert_abs_diff_eq!(refs[3][3], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn standing_forces_match_static_equilibrium() {
        let total_mass = 18.95; // robot plus payload
        let (_, theta, h) = standing_setup(total_mass);
        let cfg = MpcConfig::default();
        let refs = build_reference(&Command::stand(0.26), 0.26, cfg.horizon, cfg.ts);
        let sol = build_and_solve(
            &x0_standing(),
            &theta,
            &h,
            &[true; NUM_FEET],
            &refs,
            &cfg,
            None,
        )
        .unwrap();
        assert_eq!(sol.status, MpcStatus::Optimal);
        let expected = total_mass * GRAVITY / 4.0;
        for j in 0..NUM_FEET {
            assert!((sol.u0[j].z - expected).abs() < 0.5, "foot {j}: {}", sol.u0[j].z);
            assert!(sol.u0[j].x.abs() < 0.5);
            assert!(sol.u0[j].y.abs() < 0.5);
        }
    }

    #[test]
    fn flight_forces_are_zero_and_motion_ballistic() {
        let (op, theta, _) = standing_setup(12.45);
        let op = OperatingPoint::new(op.rot, op.omega, op.grfs, op.feet_rel, [false; 4]);
        let h = build_h_stack(&op, 6.25e-3, &Vector3::new(0.0, 0.0, GRAVITY)).unwrap();
        let cfg = MpcConfig::default();
        let refs = build_reference(&Command::stand(0.26), 0.26, cfg.horizon, cfg.ts);
        let sol =
            build_and_solve(&x0_standing(), &theta, &h, &[false; 4], &refs, &cfg, None).unwrap();
        assert_eq!(sol.status, MpcStatus::Optimal);
        for j in 0..NUM_FEET {
            assert!(sol.u0[j].norm() < 1e-8);
        }
        // v_z after k steps: -k g Ts
        for (k, x) in sol.predicted_states.iter().enumerate() {
            assert_abs_diff_eq!(x[5], -((k + 1) as f64) * GRAVITY * cfg.ts, epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_friction_kills_lateral_forces() {
        let (_, theta, h) = standing_setup(12.45);
        let mut cfg = MpcConfig::default();
        cfg.mu = 0.0;
        // offset reference so the solver wants lateral motion
        let cmd = Command { v_des: [0.4, 0.2, 0.0], yaw_rate_des: 0.0, height_des: 0.26 };
        let refs = build_reference(&cmd, 0.26, cfg.horizon, cfg.ts);
        let sol =
            build_and_solve(&x0_standing(), &theta, &h, &[true; 4], &refs, &cfg, None).unwrap();
        assert_eq!(sol.status, MpcStatus::Optimal);
        for j in 0..NUM_FEET {
            assert!(sol.u0[j].x.abs() < 1e-6, "foot {j} fx {}", sol.u0[j].x);
            assert!(sol.u0[j].y.abs() < 1e-6, "foot {j} fy {}", sol.u0[j].y);
        }
    }

    #[test]
    fn friction_pyramid_respected_under_hard_lateral_command() {
        let (_, theta, h) = standing_setup(12.45);
        let cfg = MpcConfig::default();
        let cmd = Command { v_des: [2.0, -1.5, 0.0], yaw_rate_des: 0.0, height_des: 0.26 };
        let refs = build_reference(&cmd, 0.26, cfg.horizon, cfg.ts);
        let sol =
            build_and_solve(&x0_standing(), &theta, &h, &[true; 4], &refs, &cfg, None).unwrap();
        assert_eq!(sol.status, MpcStatus::Optimal);
        for j in 0..NUM_FEET {
            let u = sol.u0[j];
            assert!(u.x.abs() <= cfg.mu * u.z + 1e-7);
            assert!(u.y.abs() <= cfg.mu * u.z + 1e-7);
            assert!(u.z >= cfg.f_z_min - 1e-7 && u.z <= cfg.f_z_max + 1e-7);
        }
    }

    #[test]
    fn stability_bound_constrains_inputs_when_enabled() {
        let (_, theta, h) = standing_setup(12.45);
        let mut cfg = MpcConfig::default();
        cfg.stability_bound_enabled = true;
        // physical H stacks have row-sum norm >= 1, so the bound needs a tiny
        // lambda to clear gravity support; pick one where b ~ 60 N
        let c = h.max_row_sum_norm();
        let target_b = 60.0;
        cfg.lambda = 2.0 / (cfg.n_eff as f64 * (c * (12.0 * target_b + cfg.eps_x)).powi(2));
        let refs = build_reference(&Command::stand(0.26), 0.26, cfg.horizon, cfg.ts);
        let sol =
            build_and_solve(&x0_standing(), &theta, &h, &[true; 4], &refs, &cfg, None).unwrap();
        assert_eq!(sol.status, MpcStatus::Optimal);
        for v in sol.plan.iter() {
            assert!(v.abs() <= target_b + 1e-6);
        }
    }

    #[test]
    fn stability_bound_surfaces_infeasibility() {
        let (_, theta, h) = standing_setup(12.45);
        let mut cfg = MpcConfig::default();
        cfg.stability_bound_enabled = true;
        // default lambda at physical scale: bound is negative -> infeasible
        let refs = build_reference(&Command::stand(0.26), 0.26, cfg.horizon, cfg.ts);
        let sol =
            build_and_solve(&x0_standing(), &theta, &h, &[true; 4], &refs, &cfg, None).unwrap();
        assert_eq!(sol.status, MpcStatus::BoundInfeasible);
    }

    #[test]
    fn doubling_position_weight_tightens_tracking() {
        let (_, theta, h) = standing_setup(12.45);
        let cfg = MpcConfig::default();
        // start displaced from the reference
        let mut x0 = x0_standing();
        x0[2] = -0.03;
        let refs = build_reference(&Command::stand(0.26), 0.26, cfg.horizon, cfg.ts);
        let run = |cfg: &MpcConfig| {
            let sol = build_and_solve(&x0, &theta, &h, &[true; 4], &refs, cfg, None).unwrap();
            assert_eq!(sol.status, MpcStatus::Optimal);
            sol.predicted_states.last().unwrap()[2].abs()
        };
        let base_err = run(&cfg);
        let mut heavy = cfg.clone();
        for w in heavy.q_r.iter_mut() {
            *w *= 2.0;
        }
        let heavy_err = run(&heavy);
        assert!(heavy_err < base_err, "{heavy_err} !< {base_err}");
    }

    #[test]
    fn baseline_mode_only_toggles_adaptation() {
        let cfg = MpcConfig::default();
        let base = baseline_mode(&cfg);
        assert!(!base.adaptation_enabled);
        assert_eq!(base.horizon, cfg.horizon);
        assert_eq!(base.mu, cfg.mu);
        assert_eq!(base.q_r, cfg.q_r);
    }

    #[test]
    fn warm_start_agrees_with_cold() {
        let (_, theta, h) = standing_setup(15.0);
        let cfg = MpcConfig::default();
        let mut x0 = x0_standing();
        x0[3] = 0.2;
        let cmd = Command { v_des: [0.3, 0.0, 0.0], yaw_rate_des: 0.1, height_des: 0.26 };
        let refs = build_reference(&cmd, 0.26, cfg.horizon, cfg.ts);
        let cold = build_and_solve(&x0, &theta, &h, &[true; 4], &refs, &cfg, None).unwrap();
        let warm =
            build_and_solve(&x0, &theta, &h, &[true; 4], &refs, &cfg, Some(&cold.plan)).unwrap();
        assert_eq!(cold.status, MpcStatus::Optimal);
        assert_eq!(warm.status, MpcStatus::Optimal);
        for j in 0..NUM_FEET {
            assert_abs_diff_eq!(cold.u0[j], warm.u0[j], epsilon = 1e-5);
        }
    }
}
