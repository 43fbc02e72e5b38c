//! Dense strictly-convex QP solver for small real-time problems: a
//! primal-dual interior point method with a Mehrotra predictor-corrector
//! step. Everything is deterministic: no randomized pivoting, no timing
//! dependence in the iteration.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::time::{Duration, Instant};

/// minimize 0.5 y' H y + f' y  subject to  lb <= C y <= ub.
///
/// Equality rows are encoded as lb = ub. Use f64::INFINITY / NEG_INFINITY
/// for one-sided rows.
#[derive(Clone, Debug)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constraints: DMatrix<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub y: DVector<f64>,
    pub status: QpStatus,
    pub kkt_residuals: KktResiduals,
    pub iterations: usize,
    pub solve_time: Duration,
}

const MAX_ITER: usize = 100;
const STAGNATION_WINDOW: usize = 50;
const TOL: f64 = 1e-9;
/// Static regularization of the reduced KKT system; keeps the factorization
/// alive when equality rows are nearly dependent. Residuals are always
/// measured against the unregularized problem.
const KKT_REG: f64 = 1e-11;

impl QpProblem {
    fn validate(&self) -> Result<()> {
        let d = self.hessian.nrows();
        if self.hessian.ncols() != d
            || self.linear.len() != d
            || self.constraints.ncols() != d && self.constraints.nrows() > 0
            || self.constraints.nrows() != self.lb.len()
            || self.constraints.nrows() != self.ub.len()
        {
            return Err(Error::InvalidParameter("QP dimension mismatch"));
        }
        let asym = (&self.hessian - self.hessian.transpose()).abs().max();
        if !asym.is_finite() || asym > 1e-10 {
            return Err(Error::IndefiniteHessian);
        }
        if self.hessian.clone().cholesky().is_none() {
            return Err(Error::IndefiniteHessian);
        }
        for i in 0..self.lb.len() {
            if !(self.lb[i] <= self.ub[i]) {
                return Err(Error::BadBounds(i));
            }
        }
        Ok(())
    }
}

/// One-sided canonical form: A y = b (equalities), G y <= h (inequalities).
struct Canonical {
    a: DMatrix<f64>,
    b: DVector<f64>,
    g: DMatrix<f64>,
    h: DVector<f64>,
}

fn canonicalize(p: &QpProblem) -> Canonical {
    let d = p.hessian.nrows();
    let mut eq_rows: Vec<usize> = Vec::new();
    let mut ineq: Vec<(usize, f64, f64)> = Vec::new(); // (row, sign, bound)
    for i in 0..p.constraints.nrows() {
        if p.lb[i] == p.ub[i] {
            eq_rows.push(i);
        } else {
            if p.ub[i].is_finite() {
                ineq.push((i, 1.0, p.ub[i]));
            }
            if p.lb[i].is_finite() {
                ineq.push((i, -1.0, -p.lb[i]));
            }
        }
    }
    let a = DMatrix::from_fn(eq_rows.len(), d, |r, c| p.constraints[(eq_rows[r], c)]);
    let b = DVector::from_fn(eq_rows.len(), |r, _| p.lb[eq_rows[r]]);
    let g = DMatrix::from_fn(ineq.len(), d, |r, c| ineq[r].1 * p.constraints[(ineq[r].0, c)]);
    let h = DVector::from_fn(ineq.len(), |r, _| ineq[r].2);
    Canonical { a, b, g, h }
}

fn residuals(
    p: &QpProblem,
    can: &Canonical,
    y: &DVector<f64>,
    v: &DVector<f64>,
    z: &DVector<f64>,
    s: &DVector<f64>,
) -> KktResiduals {
    let rd = &p.hessian * y + &p.linear + can.a.transpose() * v + can.g.transpose() * z;
    let rp_eq = &can.a * y - &can.b;
    let rp_in = &can.g * y + s - &can.h;
    let mi = can.g.nrows();
    let comp = if mi == 0 { 0.0 } else { z.dot(s) / mi as f64 };
    KktResiduals {
        stationarity: rd.abs().max(),
        primal: rp_eq.abs().max().max(rp_in.abs().max()),
        complementarity: comp,
    }
}

/// Active-set polish: pin the inequalities the interior point method says
/// are tight (z > s), solve the equality-constrained KKT system exactly, and
/// accept the result if it is feasible with nonnegative multipliers. Rescues
/// the O(sqrt(mu)) error on degenerate active constraints.
fn polish(
    p: &QpProblem,
    can: &Canonical,
    z: &DVector<f64>,
    s: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
    let d = p.hessian.nrows();
    let me = can.a.nrows();
    let active: Vec<usize> = (0..can.g.nrows()).filter(|&i| z[i] > s[i]).collect();
    let ma = active.len();
    let n = d + me + ma;
    let mut kkt = DMatrix::zeros(n, n);
    kkt.view_mut((0, 0), (d, d)).copy_from(&p.hessian);
    kkt.view_mut((0, d), (d, me)).copy_from(&can.a.transpose());
    kkt.view_mut((d, 0), (me, d)).copy_from(&can.a);
    for (r, &i) in active.iter().enumerate() {
        for c in 0..d {
            kkt[(c, d + me + r)] = can.g[(i, c)];
            kkt[(d + me + r, c)] = can.g[(i, c)];
        }
    }
    let mut rhs = DVector::zeros(n);
    rhs.rows_mut(0, d).copy_from(&(-&p.linear));
    rhs.rows_mut(d, me).copy_from(&can.b);
    for (r, &i) in active.iter().enumerate() {
        rhs[d + me + r] = can.h[i];
    }
    let sol = kkt.lu().solve(&rhs)?;
    let y = sol.rows(0, d).into_owned();
    let v = sol.rows(d, me).into_owned();
    let mut z_out = DVector::zeros(can.g.nrows());
    for (r, &i) in active.iter().enumerate() {
        let mult = sol[d + me + r];
        if mult < -1e-9 {
            return None;
        }
        z_out[i] = mult.max(0.0);
    }
    let gy = &can.g * &y;
    let mut s_out = DVector::zeros(can.g.nrows());
    for i in 0..can.g.nrows() {
        let slack = can.h[i] - gy[i];
        if slack < -1e-9 {
            return None;
        }
        s_out[i] = slack.max(0.0);
    }
    Some((y, v, z_out, s_out))
}

/// Solve the QP. Deterministic for identical inputs. `warm_start` seeds the
/// primal iterate only; it changes the path, not the answer.
pub fn solve(problem: &QpProblem, warm_start: Option<&DVector<f64>>) -> Result<QpSolution> {
    let start = Instant::now();
    problem.validate()?;
    let d = problem.hessian.nrows();
    let can = canonicalize(problem);
    let me = can.a.nrows();
    let mi = can.g.nrows();

    let mut y = match warm_start {
        Some(w) if w.len() == d && w.iter().all(|x| x.is_finite()) => w.clone(),
        _ => DVector::zeros(d),
    };
    let mut v = DVector::zeros(me);

    // No inequalities: one exact KKT solve.
    if mi == 0 {
        let n = d + me;
        let mut kkt = DMatrix::zeros(n, n);
        kkt.view_mut((0, 0), (d, d)).copy_from(&problem.hessian);
        kkt.view_mut((0, d), (d, me)).copy_from(&can.a.transpose());
        kkt.view_mut((d, 0), (me, d)).copy_from(&can.a);
        let mut rhs = DVector::zeros(n);
        rhs.rows_mut(0, d).copy_from(&(-&problem.linear));
        rhs.rows_mut(d, me).copy_from(&can.b);
        // least-squares solve tolerates redundant (consistent) equality rows;
        // inconsistency shows up as a large primal residual below
        let sol = kkt.svd(true, true).solve(&rhs, 1e-12).ok();
        return match sol {
            Some(sol) => {
                let y = sol.rows(0, d).into_owned();
                let v = sol.rows(d, me).into_owned();
                let res = residuals(problem, &can, &y, &v, &DVector::zeros(0), &DVector::zeros(0));
                let status = if res.stationarity < TOL && res.primal < TOL {
                    QpStatus::Optimal
                } else {
                    QpStatus::Infeasible
                };
                Ok(QpSolution {
                    y,
                    status,
                    kkt_residuals: res,
                    iterations: 1,
                    solve_time: start.elapsed(),
                })
            }
            None => Ok(QpSolution {
                y,
                status: QpStatus::Infeasible,
                kkt_residuals: KktResiduals::default(),
                iterations: 1,
                solve_time: start.elapsed(),
            }),
        };
    }

    // Sparse row view of G: MPC constraint rows touch at most two variables,
    // so the normal-matrix accumulation below is linear, not cubic, in mi.
    let g_rows: Vec<Vec<(usize, f64)>> = (0..mi)
        .map(|i| {
            (0..d).filter(|&c| can.g[(i, c)] != 0.0).map(|c| (c, can.g[(i, c)])).collect()
        })
        .collect();

    // Interior point iterates: s > 0 slacks for G y + s = h, z > 0 duals.
    let mut s = DVector::from_fn(mi, |i, _| (can.h[i] - (can.g.row(i) * &y)[0]).max(1.0));
    let mut z = DVector::from_element(mi, 1.0);

    let mut primal_history: Vec<f64> = Vec::with_capacity(MAX_ITER);
    let mut best = QpSolution {
        y: y.clone(),
        status: QpStatus::MaxIterations,
        kkt_residuals: residuals(problem, &can, &y, &v, &z, &s),
        iterations: 0,
        solve_time: Duration::ZERO,
    };

    for iter in 0..MAX_ITER {
        let res = residuals(problem, &can, &y, &v, &z, &s);
        if res.primal <= best.kkt_residuals.primal.max(TOL)
            && res.stationarity + res.complementarity
                < best.kkt_residuals.stationarity + best.kkt_residuals.complementarity
        {
            best.y = y.clone();
            best.kkt_residuals = res;
        }
        if res.complementarity < 1e-7 && res.primal < 1e-6 {
            if let Some((yp, vp, zp, sp)) = polish(problem, &can, &z, &s) {
                let resp = residuals(problem, &can, &yp, &vp, &zp, &sp);
                if resp.stationarity < TOL && resp.primal < TOL && resp.complementarity < TOL {
                    return Ok(QpSolution {
                        y: yp,
                        status: QpStatus::Optimal,
                        kkt_residuals: resp,
                        iterations: iter,
                        solve_time: start.elapsed(),
                    });
                }
            }
        }
        if res.stationarity < TOL && res.primal < TOL && res.complementarity < TOL {
            return Ok(QpSolution {
                y,
                status: QpStatus::Optimal,
                kkt_residuals: res,
                iterations: iter,
                solve_time: start.elapsed(),
            });
        }
        primal_history.push(res.primal);
        if iter >= STAGNATION_WINDOW {
            let old = primal_history[iter - STAGNATION_WINDOW];
            if res.primal > 1e-6 && res.primal > 0.9 * old {
                return Ok(QpSolution {
                    y,
                    status: QpStatus::Infeasible,
                    kkt_residuals: res,
                    iterations: iter,
                    solve_time: start.elapsed(),
                });
            }
        }

        // residual vectors (recomputed densely; problems are small)
        let rd = &problem.hessian * &y
            + &problem.linear
            + can.a.transpose() * &v
            + can.g.transpose() * &z;
        let rp = &can.a * &y - &can.b;
        let rg = &can.g * &y + &s - &can.h;
        let mu = z.dot(&s) / mi as f64;

        // reduced KKT: [H + G' S^-1 Z G, A'; A, -reg I]
        let sz: DVector<f64> = DVector::from_fn(mi, |i, _| z[i] / s[i]);
        let mut hbar = problem.hessian.clone();
        for (i, row) in g_rows.iter().enumerate() {
            for &(r, gr) in row {
                for &(c, gc) in row {
                    hbar[(r, c)] += sz[i] * gr * gc;
                }
            }
        }
        let n = d + me;
        let mut kkt = DMatrix::zeros(n, n);
        kkt.view_mut((0, 0), (d, d)).copy_from(&hbar);
        for i in 0..d {
            kkt[(i, i)] += KKT_REG;
        }
        kkt.view_mut((0, d), (d, me)).copy_from(&can.a.transpose());
        kkt.view_mut((d, 0), (me, d)).copy_from(&can.a);
        for i in 0..me {
            kkt[(d + i, d + i)] = -KKT_REG;
        }
        let lu = kkt.lu();

        let solve_dir = |rc: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
            // dz = S^-1 (Z rg - rc) + S^-1 Z G dy; substitute into stationarity
            let mut rhs = DVector::zeros(n);
            for r in 0..d {
                rhs[r] = -rd[r];
            }
            for (i, row) in g_rows.iter().enumerate() {
                let w = (z[i] * rg[i] - rc[i]) / s[i];
                for &(r, gr) in row {
                    rhs[r] -= gr * w;
                }
            }
            for i in 0..me {
                rhs[d + i] = -rp[i];
            }
            let sol = lu.solve(&rhs)?;
            let dy = sol.rows(0, d).into_owned();
            let dv = sol.rows(d, me).into_owned();
            let gdy = &can.g * &dy;
            let dz = DVector::from_fn(mi, |i, _| (z[i] * (rg[i] + gdy[i]) - rc[i]) / s[i]);
            let ds = DVector::from_fn(mi, |i, _| -rg[i] - gdy[i]);
            Some((dy, dv, dz, ds))
        };

        let step_len = |w: &DVector<f64>, dw: &DVector<f64>| -> f64 {
            let mut alpha = 1.0_f64;
            for i in 0..mi {
                if dw[i] < 0.0 {
                    alpha = alpha.min(-w[i] / dw[i]);
                }
            }
            alpha
        };

        // predictor
        let rc_aff = DVector::from_fn(mi, |i, _| z[i] * s[i]);
        let aff = match solve_dir(&rc_aff) {
            Some(dir) => dir,
            None => {
                return Ok(QpSolution {
                    y,
                    status: QpStatus::Infeasible,
                    kkt_residuals: res,
                    iterations: iter,
                    solve_time: start.elapsed(),
                })
            }
        };
        let alpha_aff = step_len(&s, &aff.3).min(step_len(&z, &aff.2));
        let mu_aff = {
            let snew = &s + alpha_aff * &aff.3;
            let znew = &z + alpha_aff * &aff.2;
            znew.dot(&snew) / mi as f64
        };
        let sigma = if mu > 0.0 { (mu_aff / mu).powi(3).clamp(0.0, 1.0) } else { 0.0 };

        // corrector
        let rc = DVector::from_fn(mi, |i, _| z[i] * s[i] + aff.2[i] * aff.3[i] - sigma * mu);
        let (dy, dv, dz, ds) = match solve_dir(&rc) {
            Some(dir) => dir,
            None => {
                return Ok(QpSolution {
                    y,
                    status: QpStatus::Infeasible,
                    kkt_residuals: res,
                    iterations: iter,
                    solve_time: start.elapsed(),
                })
            }
        };
        let tau = 0.995;
        let alpha_p = (tau * step_len(&s, &ds)).min(1.0);
        let alpha_d = (tau * step_len(&z, &dz)).min(1.0);
        y += alpha_p * dy;
        s += alpha_p * ds;
        v += alpha_d * dv;
        z += alpha_d * dz;
    }

    best.iterations = MAX_ITER;
    best.solve_time = start.elapsed();
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn objective(p: &QpProblem, y: &DVector<f64>) -> f64 {
        0.5 * (y.transpose() * &p.hessian * y)[0] + p.linear.dot(y)
    }

    #[test]
    fn unconstrained_norm_min_is_zero() {
        let d = 5;
        let p = QpProblem {
            hessian: DMatrix::identity(d, d) * 2.0,
            linear: DVector::zeros(d),
            constraints: DMatrix::zeros(0, d),
            lb: DVector::zeros(0),
            ub: DVector::zeros(0),
        };
        let sol = solve(&p, None).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!(sol.y.abs().max() < 1e-9);
    }

    #[test]
    fn box_bounds_are_a_projection() {
        // minimize ||y - c||^2 with lb <= y <= ub
        let c: DVector<f64> = DVector::from_vec(vec![3.0, -2.0, 0.3, 1.0]);
        let lb = DVector::from_vec(vec![-1.0, -1.0, -1.0, -1.0]);
        let ub = DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0]);
        let p = QpProblem {
            hessian: DMatrix::identity(4, 4) * 2.0,
            linear: -2.0 * &c,
            constraints: DMatrix::identity(4, 4),
            lb: lb.clone(),
            ub: ub.clone(),
        };
        let sol = solve(&p, None).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        for i in 0..4 {
            assert_abs_diff_eq!(sol.y[i], c[i].clamp(lb[i], ub[i]), epsilon = 1e-7);
        }
    }

    #[test]
    fn equality_rows_are_respected() {
        // minimize ||y||^2 subject to y0 + y1 = 2 -> y = (1, 1)
        let mut c = DMatrix::zeros(1, 2);
        c[(0, 0)] = 1.0;
        c[(0, 1)] = 1.0;
        let p = QpProblem {
            hessian: DMatrix::identity(2, 2),
            linear: DVector::zeros(2),
            constraints: c,
            lb: DVector::from_element(1, 2.0),
            ub: DVector::from_element(1, 2.0),
        };
        let sol = solve(&p, None).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_abs_diff_eq!(sol.y[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(sol.y[1], 1.0, epsilon = 1e-8);
    }

    #[test]
    fn rejects_indefinite_and_bad_bounds() {
        let p = QpProblem {
            hessian: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0])),
            linear: DVector::zeros(2),
            constraints: DMatrix::zeros(0, 2),
            lb: DVector::zeros(0),
            ub: DVector::zeros(0),
        };
        assert!(matches!(solve(&p, None), Err(Error::IndefiniteHessian)));

        let p = QpProblem {
            hessian: DMatrix::identity(2, 2),
            linear: DVector::zeros(2),
            constraints: DMatrix::identity(2, 2),
            lb: DVector::from_vec(vec![0.0, 1.0]),
            ub: DVector::from_vec(vec![1.0, 0.0]),
        };
        assert!(matches!(solve(&p, None), Err(Error::BadBounds(1))));
    }

    #[test]
    fn detects_infeasible_bounds_pair() {
        // y <= -1 and y >= 1 via two rows
        let mut c = DMatrix::zeros(2, 1);
        c[(0, 0)] = 1.0;
        c[(1, 0)] = 1.0;
        let p = QpProblem {
            hessian: DMatrix::identity(1, 1),
            linear: DVector::zeros(1),
            constraints: c,
            lb: DVector::from_vec(vec![f64::NEG_INFINITY, 1.0]),
            ub: DVector::from_vec(vec![-1.0, f64::INFINITY]),
        };
        let sol = solve(&p, None).unwrap();
        assert_ne!(sol.status, QpStatus::Optimal);
    }

    /// Exhaustive oracle: each inequality row is inactive, at lb, or at ub;
    /// solve every choice's equality-constrained system, keep the feasible
    /// optimum.
    fn enumeration_oracle(p: &QpProblem) -> Option<(DVector<f64>, f64)> {
        let d = p.hessian.nrows();
        let k = p.constraints.nrows();
        let mut best: Option<(DVector<f64>, f64)> = None;
        let mut pattern = vec![0u8; k];
        loop {
            // assemble active rows
            let mut rows: Vec<(usize, f64)> = Vec::new();
            let mut ok = true;
            for i in 0..k {
                match pattern[i] {
                    0 => {}
                    1 => {
                        if p.lb[i].is_finite() {
                            rows.push((i, p.lb[i]));
                        } else {
                            ok = false;
                        }
                    }
                    2 => {
                        if p.ub[i].is_finite() && p.ub[i] != p.lb[i] {
                            rows.push((i, p.ub[i]));
                        } else {
                            ok = false;
                        }
                    }
                    _ => unreachable!(),
                }
                // equality rows must always be active
                if p.lb[i] == p.ub[i] && pattern[i] != 1 {
                    ok = false;
                }
            }
            if ok {
                let me = rows.len();
                let n = d + me;
                let mut kkt = DMatrix::zeros(n, n);
                kkt.view_mut((0, 0), (d, d)).copy_from(&p.hessian);
                for (r, (row, _)) in rows.iter().enumerate() {
                    for c in 0..d {
                        kkt[(c, d + r)] = p.constraints[(*row, c)];
                        kkt[(d + r, c)] = p.constraints[(*row, c)];
                    }
                }
                let mut rhs = DVector::zeros(n);
                for i in 0..d {
                    rhs[i] = -p.linear[i];
                }
                for (r, (_, bval)) in rows.iter().enumerate() {
                    rhs[d + r] = *bval;
                }
                // SVD least-squares tolerates redundant active rows
                if let Ok(sol) = kkt.svd(true, true).solve(&rhs, 1e-10) {
                    let y = sol.rows(0, d).into_owned();
                    let cy = &p.constraints * &y;
                    let feasible = (0..k)
                        .all(|i| cy[i] >= p.lb[i] - 1e-8 && cy[i] <= p.ub[i] + 1e-8);
                    if feasible {
                        let obj = objective(p, &y);
                        if best.as_ref().map_or(true, |(_, b)| obj < *b) {
                            best = Some((y, obj));
                        }
                    }
                }
            }
            // next pattern in base 3
            let mut i = 0;
            loop {
                if i == k {
                    return best;
                }
                pattern[i] += 1;
                if pattern[i] < 3 {
                    break;
                }
                pattern[i] = 0;
                i += 1;
            }
        }
    }

    fn random_problem(rng: &mut ChaCha8Rng) -> QpProblem {
        let d = rng.gen_range(1..=6);
        let k = rng.gen_range(0..=8);
        let m = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let hessian = &m * m.transpose() + DMatrix::identity(d, d) * rng.gen_range(0.1..1.0);
        let linear = DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0));
        let constraints = DMatrix::from_fn(k, d, |_, _| rng.gen_range(-1.0..1.0));
        // anchor bounds around a feasible point so the problem is solvable
        let y_feas = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
        let cy = &constraints * &y_feas;
        let mut lb = DVector::zeros(k);
        let mut ub = DVector::zeros(k);
        for i in 0..k {
            match rng.gen_range(0..4) {
                0 => {
                    // equality
                    lb[i] = cy[i];
                    ub[i] = cy[i];
                }
                1 => {
                    lb[i] = f64::NEG_INFINITY;
                    ub[i] = cy[i] + rng.gen_range(0.0..1.5);
                }
                2 => {
                    lb[i] = cy[i] - rng.gen_range(0.0..1.5);
                    ub[i] = f64::INFINITY;
                }
                _ => {
                    lb[i] = cy[i] - rng.gen_range(0.0..1.5);
                    ub[i] = cy[i] + rng.gen_range(0.0..1.5);
                }
            }
        }
        QpProblem { hessian, linear, constraints, lb, ub }
    }

    #[test]
    fn matches_enumeration_oracle_on_random_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut solved = 0;
        for trial in 0..1000 {
            let p = random_problem(&mut rng);
            let sol = solve(&p, None).unwrap();
            assert_eq!(sol.status, QpStatus::Optimal, "trial {trial}");
            let (_, obj_oracle) = enumeration_oracle(&p).expect("oracle found no optimum");
            let obj = objective(&p, &sol.y);
            assert!(
                (obj - obj_oracle).abs() < 1e-7,
                "trial {trial}: solver {obj} vs oracle {obj_oracle}"
            );
            solved += 1;
        }
        assert_eq!(solved, 1000);
    }

    #[test]
    fn warm_and_cold_starts_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let p = random_problem(&mut rng);
            let cold = solve(&p, None).unwrap();
            let warm_point = DVector::from_fn(p.hessian.nrows(), |_, _| rng.gen_range(-3.0..3.0));
            let warm = solve(&p, Some(&warm_point)).unwrap();
            assert_eq!(cold.status, QpStatus::Optimal);
            assert_eq!(warm.status, QpStatus::Optimal);
            assert!((objective(&p, &cold.y) - objective(&p, &warm.y)).abs() < 1e-8);
        }
    }

    #[test]
    fn determinism_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_problem(&mut rng);
        let a = solve(&p, None).unwrap();
        let b = solve(&p, None).unwrap();
        assert_eq!(a.y.as_slice(), b.y.as_slice());
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn optimal_status_implies_tight_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let p = random_problem(&mut rng);
            let sol = solve(&p, None).unwrap();
            if sol.status == QpStatus::Optimal {
                assert!(sol.kkt_residuals.stationarity < 1e-8);
                assert!(sol.kkt_residuals.primal < 1e-8);
                assert!(sol.kkt_residuals.complementarity < 1e-8);
            }
        }
    }
}
