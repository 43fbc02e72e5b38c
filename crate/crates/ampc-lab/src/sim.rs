//! Closed-loop episodes: nonlinear plant at ~1 kHz, estimator and MPC at
//! 160 Hz, scenario events (payloads, pushes), batch running, and metrics.

use crate::adapt::{spectral_check, AdaptiveState};
use crate::ampc::{build_and_solve, build_reference, Command, MpcConfig, MpcSolution, MpcStatus};
use crate::error::{Error, Result};
use crate::gait::{contact_schedule, generate_terrain, raibert_foothold, GaitConfig, Terrain};
use crate::linearize::{to_local_frame, OperatingPoint, N_INPUTS};
use crate::regressor::{build_gamma, build_h_stack, stack_z, theta_from_params, ThetaVector};
use crate::srb::{
    combine_payload, exp_so3, integrate_step_ext, FootSet, InertialParams, PayloadSpec,
    RigidBodyState, NUM_FEET,
};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const GRAVITY: f64 = 9.81;
/// Plant substeps per controller tick: 6.25 ms / 6 ~ 1.04 ms (~1 kHz).
pub const PLANT_SUBSTEPS: usize = 6;
/// Steady-state metrics skip this initial transient.
pub const METRIC_WARMUP: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Ampc,
    Baseline,
}

/// Trunk parameters of the simulated robot (defaults at small-quadruped scale).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RobotSpec {
    pub mass: f64,
    pub inertia_diag: [f64; 3],
    pub hip_x: f64,
    pub hip_y: f64,
}

impl Default for RobotSpec {
    fn default() -> Self {
        Self { mass: 12.45, inertia_diag: [0.17, 0.7, 0.8], hip_x: 0.183, hip_y: 0.13 }
    }
}

impl RobotSpec {
    pub fn params(&self) -> Result<InertialParams> {
        InertialParams::new(
            self.mass,
            Matrix3::from_diagonal(&Vector3::new(
                self.inertia_diag[0],
                self.inertia_diag[1],
                self.inertia_diag[2],
            )),
        )
    }

    /// Hip offset of foot j in the body frame (z = 0).
    pub fn hip_offset(&self, j: usize) -> Vector3<f64> {
        let sx = if j < 2 { 1.0 } else { -1.0 };
        let sy = if j % 2 == 0 { 1.0 } else { -1.0 };
        Vector3::new(sx * self.hip_x, sy * self.hip_y, 0.0)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TerrainSpec {
    Flat,
    Blocks { length: f64, block_height: f64, density: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CommandSegment {
    pub start_time: f64,
    pub v_x: f64,
    #[serde(default)]
    pub v_y: f64,
    #[serde(default)]
    pub yaw_rate: f64,
    pub height: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PayloadEvent {
    /// Attachment time in seconds; 0 means present from the start.
    pub time: f64,
    pub mass: f64,
    /// Payload COM offset from the trunk COM, body frame.
    #[serde(default)]
    pub offset: [f64; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PushEvent {
    pub time: f64,
    pub duration: f64,
    /// World-frame force in newtons, applied at the COM.
    pub force: [f64; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub duration: f64,
    pub seed: u64,
    pub mode: Mode,
    #[serde(default)]
    pub gait: GaitConfig,
    pub terrain: TerrainSpec,
    pub commands: Vec<CommandSegment>,
    #[serde(default)]
    pub payloads: Vec<PayloadEvent>,
    #[serde(default)]
    pub pushes: Vec<PushEvent>,
    #[serde(default)]
    pub distance_target: Option<f64>,
    /// Standard deviation of additive Gaussian noise on the measured state
    /// (position m, velocity m/s, attitude rad, rates rad/s). 0 = ideal
    /// state feedback, the default.
    #[serde(default)]
    pub sensor_noise: f64,
    #[serde(default)]
    pub mpc: MpcConfig,
    #[serde(default)]
    pub robot: RobotSpec,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::Scenario("duration must be positive".into()));
        }
        if self.commands.is_empty() {
            return Err(Error::Scenario("at least one command segment required".into()));
        }
        if self.commands[0].start_time > 0.0 {
            return Err(Error::Scenario("first command segment must start at 0".into()));
        }
        for w in self.commands.windows(2) {
            if w[1].start_time <= w[0].start_time {
                return Err(Error::Scenario("command segments must be time-ordered".into()));
            }
        }
        for e in &self.payloads {
            if e.time < 0.0 || e.time > self.duration {
                return Err(Error::Scenario(format!("payload event at {} outside episode", e.time)));
            }
            if !(e.mass > 0.0) {
                return Err(Error::Scenario("payload mass must be positive".into()));
            }
        }
        for p in &self.pushes {
            if p.time < 0.0 || p.time > self.duration || p.duration < 0.0 {
                return Err(Error::Scenario("push event outside episode".into()));
            }
        }
        if !self.sensor_noise.is_finite() || self.sensor_noise < 0.0 {
            return Err(Error::Scenario("sensor_noise must be finite and nonnegative".into()));
        }
        self.gait.validate()?;
        self.mpc.validate()?;
        self.robot.params()?;
        Ok(())
    }

    pub fn terrain(&self) -> Result<Terrain> {
        match &self.terrain {
            TerrainSpec::Flat => Ok(Terrain::flat()),
            TerrainSpec::Blocks { length, block_height, density } => {
                generate_terrain(self.seed, *length, *block_height, *density)
            }
        }
    }

    pub fn command_at(&self, t: f64) -> &CommandSegment {
        self.commands
            .iter()
            .rev()
            .find(|c| c.start_time <= t)
            .unwrap_or(&self.commands[0])
    }
}

/// One controller tick of telemetry. Fixed column order, no wall-clock
/// fields, so artifacts are bitwise reproducible.
#[derive(Clone, Debug)]
pub struct TelemetryRow {
    pub t: f64,
    pub r: [f64; 3],
    pub v: [f64; 3],
    pub rpy: [f64; 3],
    pub omega: [f64; 3],
    pub u0: [f64; 12],
    pub x_tilde_norm: f64,
    pub mass_hat: f64,
    pub mass_true: f64,
    pub theta_inv_mass: f64,
    pub theta_inv_ixx: f64,
    pub theta_inv_iyy: f64,
    pub theta_inv_izz: f64,
    pub lambda_max: f64,
    pub spectral_margin: f64,
    pub qp_status: u8,
    pub qp_iterations: usize,
    pub active_constraints: usize,
    pub stance: [bool; NUM_FEET],
    pub payload_event: bool,
    pub push_active: bool,
    pub fallback: bool,
    pub fall: bool,
}

pub const TELEMETRY_SCHEMA_VERSION: u32 = 1;

pub fn telemetry_header() -> String {
    let mut cols: Vec<String> = vec!["t".into()];
    for a in ["r", "v", "rpy", "omega"] {
        for c in ["x", "y", "z"] {
            cols.push(format!("{a}_{c}"));
        }
    }
    for j in 0..NUM_FEET {
        for c in ["x", "y", "z"] {
            cols.push(format!("u{j}_{c}"));
        }
    }
    for name in [
        "x_tilde_norm",
        "mass_hat",
        "mass_true",
        "theta_inv_mass",
        "theta_inv_ixx",
        "theta_inv_iyy",
        "theta_inv_izz",
        "lambda_max",
        "spectral_margin",
        "qp_status",
        "qp_iterations",
        "active_constraints",
    ] {
        cols.push(name.into());
    }
    for j in 0..NUM_FEET {
        cols.push(format!("stance{j}"));
    }
    for name in ["payload_event", "push_active", "fallback", "fall"] {
        cols.push(name.into());
    }
    cols.join(",")
}

impl TelemetryRow {
    pub fn to_csv(&self) -> String {
        let mut f: Vec<String> = vec![format!("{}", self.t)];
        for block in [&self.r, &self.v, &self.rpy, &self.omega] {
            for v in block.iter() {
                f.push(format!("{v}"));
            }
        }
        for v in self.u0.iter() {
            f.push(format!("{v}"));
        }
        for v in [
            self.x_tilde_norm,
            self.mass_hat,
            self.mass_true,
            self.theta_inv_mass,
            self.theta_inv_ixx,
            self.theta_inv_iyy,
            self.theta_inv_izz,
            self.lambda_max,
            self.spectral_margin,
        ] {
            f.push(format!("{v}"));
        }
        f.push(format!("{}", self.qp_status));
        f.push(format!("{}", self.qp_iterations));
        f.push(format!("{}", self.active_constraints));
        for s in self.stance {
            f.push(format!("{}", s as u8));
        }
        for b in [self.payload_event, self.push_active, self.fallback, self.fall] {
            f.push(format!("{}", b as u8));
        }
        f.join(",")
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success: bool,
    pub distance: f64,
    pub mean_speed: f64,
    pub mean_height: f64,
    pub fall_time: Option<f64>,
    pub final_mass_error: f64,
}

fn status_code(s: MpcStatus) -> u8 {
    match s {
        MpcStatus::Optimal => 0,
        MpcStatus::Infeasible => 1,
        MpcStatus::MaxIterations => 2,
        MpcStatus::BoundInfeasible => 3,
    }
}

/// Clamp a force plan block to the friction pyramid and stance set so that
/// fallback inputs stay physically admissible.
fn clamp_to_pyramid(u: &mut [Vector3<f64>; NUM_FEET], stance: &[bool; NUM_FEET], cfg: &MpcConfig) {
    for j in 0..NUM_FEET {
        if !stance[j] {
            u[j] = Vector3::zeros();
            continue;
        }
        u[j].z = u[j].z.clamp(cfg.f_z_min, cfg.f_z_max);
        let lim = cfg.mu * u[j].z;
        u[j].x = u[j].x.clamp(-lim, lim);
        u[j].y = u[j].y.clamp(-lim, lim);
    }
}

/// Run one closed-loop episode. Deterministic given the scenario.
/// Zero-mean Gaussian measurement noise: additive on position, velocity,
/// and body rates, right-multiplicative on the rotation through a random
/// small-angle exponential.
fn perturb_state<R: Rng>(state: &RigidBodyState, sigma: f64, rng: &mut R) -> RigidBodyState {
    let gauss = |rng: &mut R| {
        Vector3::new(
            sigma * rng.sample::<f64, _>(StandardNormal),
            sigma * rng.sample::<f64, _>(StandardNormal),
            sigma * rng.sample::<f64, _>(StandardNormal),
        )
    };
    RigidBodyState {
        r: state.r + gauss(rng),
        v: state.v + gauss(rng),
        rot: state.rot * exp_so3(&gauss(rng)),
        omega: state.omega + gauss(rng),
    }
}

pub fn run_episode(scenario: &Scenario) -> Result<(Vec<TelemetryRow>, EpisodeResult)> {
    scenario.validate()?;
    let terrain = scenario.terrain()?;
    let gravity = Vector3::new(0.0, 0.0, GRAVITY);
    let cfg = &scenario.mpc;
    let ts = cfg.ts;
    let n_ticks = (scenario.duration / ts).ceil() as usize;
    let adaptation = scenario.mode == Mode::Ampc && cfg.adaptation_enabled;

    let nominal = scenario.robot.params()?;
    let theta_nominal = theta_from_params(&nominal)?;
    let mut adaptive = AdaptiveState::new(theta_nominal.clone(), cfg.lambda)?;
    adaptive.pin_constant = true;

    // true plant parameters; payloads with time = 0 are present at start
    let mut true_params = nominal.clone();
    let mut payload_queue: Vec<&PayloadEvent> = scenario.payloads.iter().collect();
    payload_queue.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
    let mut next_payload = 0usize;

    // initial pose: standing at the commanded height over the terrain origin
    let cmd0 = scenario.command_at(0.0);
    let h0 = terrain.height(0.0, 0.0);
    let mut state = RigidBodyState {
        r: Vector3::new(0.0, 0.0, h0 + cmd0.height),
        v: Vector3::zeros(),
        rot: Matrix3::identity(),
        omega: Vector3::zeros(),
    };
    let mut feet = FootSet {
        positions: std::array::from_fn(|j| {
            let hip = state.r + scenario.robot.hip_offset(j);
            Vector3::new(hip.x, hip.y, terrain.height(hip.x, hip.y))
        }),
        stance: [true; NUM_FEET],
    };

    // sensor noise hook, off by default; the stream is independent of the
    // terrain seed so flat and rough runs draw identical noise
    let mut noise_rng = (scenario.sensor_noise > 0.0)
        .then(|| ChaCha8Rng::seed_from_u64(scenario.seed ^ 0xA5A5_5A5A_DEAD_BEEF));

    let mut gamma_prev: Option<DMatrix<f64>> = None;
    let mut anchor_prev = Vector3::zeros();
    let mut yaw_prev = 0.0;
    let mut u_prev = [Vector3::zeros(); NUM_FEET];
    let mut plan_prev: Option<DVector<f64>> = None;
    let mut stance_prev = [true; NUM_FEET];

    let mut rows: Vec<TelemetryRow> = Vec::with_capacity(n_ticks);
    let mut fall_time: Option<f64> = None;
    let mut max_distance: f64 = 0.0;
    let start_xy = Vector3::new(state.r.x, state.r.y, 0.0);
    let mut speed_acc = 0.0;
    let mut height_acc = 0.0;
    let mut metric_samples = 0usize;
    // command direction for the speed metric
    let cmd_dir = scenario
        .commands
        .iter()
        .find(|c| c.v_x != 0.0 || c.v_y != 0.0)
        .map(|c| {
            let n = (c.v_x * c.v_x + c.v_y * c.v_y).sqrt();
            (c.v_x / n, c.v_y / n)
        });

    for k in 0..n_ticks {
        let t = k as f64 * ts;
        let cmd = scenario.command_at(t);

        // payload attachments due by this tick
        let mut payload_event = false;
        while next_payload < payload_queue.len() && payload_queue[next_payload].time <= t {
            let e = payload_queue[next_payload];
            let spec = PayloadSpec::point_mass(
                e.mass,
                Vector3::new(e.offset[0], e.offset[1], e.offset[2]),
            );
            let (combined, shift) = combine_payload(&true_params, &spec)?;
            // the state tracks the combined COM; velocity is preserved
            // (payload assumed to land matching the trunk's velocity)
            state.r += state.rot * shift;
            true_params = combined;
            next_payload += 1;
            payload_event = true;
        }

        // estimator and controller see the measured state; the plant, gait
        // teleport, and telemetry stay on the true state
        let meas = match noise_rng.as_mut() {
            Some(rng) => perturb_state(&state, scenario.sensor_noise, rng),
            None => state.clone(),
        };

        // estimator: measurement expressed in the previous tick's frame
        let mut x_tilde_norm = 0.0;
        if let Some(gamma) = gamma_prev.take() {
            if adaptation {
                adaptive.gamma_prev = Some(gamma);
                let x_meas = to_local_frame(&meas, yaw_prev, &anchor_prev)?.to_vector();
                let outcome = adaptive.update(&x_meas);
                x_tilde_norm = outcome.x_tilde.norm();
            }
        }
        let theta_used: &ThetaVector =
            if adaptation { &adaptive.theta_hat } else { &theta_nominal };

        // receding local frame for this tick, built from the measured state
        let rpy = state.roll_pitch_yaw();
        let yaw = meas.roll_pitch_yaw().z;
        let terrain_h = terrain.height(meas.r.x, meas.r.y);
        let anchor = Vector3::new(meas.r.x, meas.r.y, terrain_h + cmd.height);
        let x0 = to_local_frame(&meas, yaw, &anchor)?.to_vector();

        // gait: stance set now; feet entering swing lift, feet touching down
        // teleport to their Raibert target (the SRB plant has no legs)
        let stance = contact_schedule(t, &scenario.gait);
        let v_des_world = crate::linearize::yaw_rotation(yaw)
            * Vector3::new(cmd.v_x, cmd.v_y, 0.0);
        for j in 0..NUM_FEET {
            if stance[j] && !stance_prev[j] {
                let hip = state.r + state.rot * scenario.robot.hip_offset(j);
                feet.positions[j] = raibert_foothold(
                    &hip,
                    &state.v,
                    &v_des_world,
                    scenario.gait.t_stance(),
                    scenario.gait.k_v,
                    &terrain,
                );
            }
        }
        feet.stance = stance;

        // operating point: current attitude/rate, previous applied forces
        let feet_rel = std::array::from_fn(|j| feet.positions[j] - meas.r);
        let grfs_bar = std::array::from_fn(|j| if stance[j] { u_prev[j] } else { Vector3::zeros() });
        let op = OperatingPoint::new(meas.rot, meas.omega, grfs_bar, feet_rel, stance);
        let h = build_h_stack(&op, ts, &gravity)?;

        // reference and solve
        let command = Command {
            v_des: [v_des_world.x, v_des_world.y, 0.0],
            yaw_rate_des: cmd.yaw_rate,
            height_des: cmd.height,
        };
        let refs = build_reference(&command, cmd.height, cfg.horizon, ts);
        let sol: MpcSolution = build_and_solve(
            &x0,
            theta_used,
            &h,
            &stance,
            &refs,
            cfg,
            plan_prev.as_ref(),
        )?;

        let mut fallback = false;
        let mut u_applied: [Vector3<f64>; NUM_FEET];
        if sol.status == MpcStatus::Optimal {
            u_applied = sol.u0;
            plan_prev = Some(sol.plan.clone());
        } else {
            // reuse the previous plan, shifted one block
            fallback = true;
            u_applied = [Vector3::zeros(); NUM_FEET];
            if let Some(plan) = plan_prev.as_mut() {
                let n = cfg.horizon;
                for b in 0..n - 1 {
                    let next = plan.rows((b + 1) * N_INPUTS, N_INPUTS).into_owned();
                    plan.rows_mut(b * N_INPUTS, N_INPUTS).copy_from(&next);
                }
                for j in 0..NUM_FEET {
                    u_applied[j] =
                        Vector3::new(plan[3 * j], plan[3 * j + 1], plan[3 * j + 2]);
                }
            }
            clamp_to_pyramid(&mut u_applied, &stance, cfg);
        }
        for j in 0..NUM_FEET {
            if !stance[j] {
                u_applied[j] = Vector3::zeros();
            }
        }

        // spectral monitor on the realized regressor
        let mut u_stack = DVector::zeros(N_INPUTS);
        for j in 0..NUM_FEET {
            for c in 0..3 {
                u_stack[3 * j + c] = u_applied[j][c];
            }
        }
        let gamma_now = build_gamma(&stack_z(&x0, &u_stack), &h);
        let report = spectral_check(&gamma_now, cfg.lambda);
        gamma_prev = Some(gamma_now);
        anchor_prev = anchor;
        yaw_prev = yaw;

        // push disturbances active during the upcoming tick
        let push = scenario
            .pushes
            .iter()
            .filter(|p| t >= p.time && t < p.time + p.duration)
            .fold(Vector3::zeros(), |acc, p| {
                acc + Vector3::new(p.force[0], p.force[1], p.force[2])
            });

        // telemetry before integration (state at tick start, input applied)
        let mass_hat = if adaptive.theta_hat[1] > 0.0 { 1.0 / adaptive.theta_hat[1] } else { f64::NAN };
        let mut u0_flat = [0.0; 12];
        for j in 0..NUM_FEET {
            for c in 0..3 {
                u0_flat[3 * j + c] = u_applied[j][c];
            }
        }
        rows.push(TelemetryRow {
            t,
            r: [state.r.x, state.r.y, state.r.z],
            v: [state.v.x, state.v.y, state.v.z],
            rpy: [rpy.x, rpy.y, rpy.z],
            omega: [state.omega.x, state.omega.y, state.omega.z],
            u0: u0_flat,
            x_tilde_norm,
            mass_hat,
            mass_true: true_params.mass,
            theta_inv_mass: adaptive.theta_hat[1],
            theta_inv_ixx: adaptive.theta_hat[2],
            theta_inv_iyy: adaptive.theta_hat[6],
            theta_inv_izz: adaptive.theta_hat[10],
            lambda_max: report.lambda_max,
            spectral_margin: report.margin,
            qp_status: status_code(sol.status),
            qp_iterations: sol.qp_iterations,
            active_constraints: sol.active_constraints,
            stance,
            payload_event,
            push_active: push.norm() > 0.0,
            fallback,
            fall: false,
        });

        // plant integration with zero-order-hold forces
        let grfs: [Vector3<f64>; NUM_FEET] =
            std::array::from_fn(|j| if stance[j] { u_applied[j] } else { Vector3::zeros() });
        let dt = ts / PLANT_SUBSTEPS as f64;
        for _ in 0..PLANT_SUBSTEPS {
            state = integrate_step_ext(&state, &grfs, &feet, &true_params, &gravity, &push, dt)?;
        }
        u_prev = u_applied;
        stance_prev = stance;

        // metrics
        let planar = Vector3::new(state.r.x, state.r.y, 0.0) - start_xy;
        max_distance = max_distance.max(planar.norm());
        if t >= METRIC_WARMUP {
            let speed = match cmd_dir {
                Some((dx, dy)) => state.v.x * dx + state.v.y * dy,
                None => (state.v.x * state.v.x + state.v.y * state.v.y).sqrt(),
            };
            speed_acc += speed;
            height_acc += state.r.z - terrain.height(state.r.x, state.r.y);
            metric_samples += 1;
        }

        // fall detection ends the episode
        let rpy_now = state.roll_pitch_yaw();
        let clearance = state.r.z - terrain.height(state.r.x, state.r.y);
        if rpy_now.x.abs() > 0.5 || rpy_now.y.abs() > 0.5 || clearance < 0.12 {
            fall_time = Some(t + ts);
            if let Some(last) = rows.last_mut() {
                last.fall = true;
            }
            break;
        }
    }

    let mean_speed = if metric_samples > 0 { speed_acc / metric_samples as f64 } else { 0.0 };
    let mean_height = if metric_samples > 0 { height_acc / metric_samples as f64 } else { 0.0 };
    let final_mass_error = rows
        .last()
        .map(|r| (r.mass_hat - r.mass_true).abs())
        .unwrap_or(f64::NAN);
    let success = fall_time.is_none()
        && scenario.distance_target.map_or(true, |d| max_distance >= d);
    Ok((
        rows,
        EpisodeResult {
            success,
            distance: max_distance,
            mean_speed,
            mean_height,
            fall_time,
            final_mass_error,
        },
    ))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BatchResult {
    /// Per-seed results in ascending seed order.
    pub per_seed: Vec<(u64, EpisodeResult)>,
    /// Distance grid for the success-vs-distance curve.
    pub distance_grid: Vec<f64>,
    /// Fraction of episodes that traveled at least each grid distance.
    pub success_rate: Vec<f64>,
}

impl BatchResult {
    pub fn overall_success_rate(&self) -> f64 {
        if self.per_seed.is_empty() {
            return 0.0;
        }
        self.per_seed.iter().filter(|(_, r)| r.success).count() as f64
            / self.per_seed.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "seed,success,distance,mean_speed,mean_height,fall_time,final_mass_error\n",
        );
        for (seed, r) in &self.per_seed {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                seed,
                r.success as u8,
                r.distance,
                r.mean_speed,
                r.mean_height,
                r.fall_time.map_or(String::from(""), |t| format!("{t}")),
                r.final_mass_error
            ));
        }
        out
    }

    pub fn curve_csv(&self) -> String {
        let mut out = String::from("distance,success_rate\n");
        for (d, s) in self.distance_grid.iter().zip(&self.success_rate) {
            out.push_str(&format!("{d},{s}\n"));
        }
        out
    }
}

/// Resolve the effective worker count: explicit request capped by the
/// AMPC_LAB_THREADS environment variable when set.
pub fn effective_parallelism(requested: usize) -> usize {
    let cap = std::env::var("AMPC_LAB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(usize::MAX);
    requested.max(1).min(cap.max(1))
}

/// Run the scenario template once per seed. Episodes are independent; the
/// aggregate is sorted by seed, so results do not depend on parallelism.
pub fn run_batch(template: &Scenario, seeds: &[u64], parallelism: usize) -> Result<BatchResult> {
    if seeds.is_empty() {
        return Err(Error::Scenario("seed list is empty".into()));
    }
    let mut unique = seeds.to_vec();
    unique.sort_unstable();
    unique.dedup();
    if unique.len() != seeds.len() {
        return Err(Error::Scenario("seeds must be distinct".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(effective_parallelism(parallelism))
        .build()
        .map_err(|e| Error::Scenario(format!("thread pool: {e}")))?;
    let mut per_seed: Vec<(u64, EpisodeResult)> = pool.install(|| {
        unique
            .par_iter()
            .map(|&seed| {
                let mut s = template.clone();
                s.seed = seed;
                let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
                    run_episode(&s)
                }));
                let result = match outcome {
                    Ok(Ok((_, r))) => r,
                    // a panicking or erroring episode counts as a failure
                    _ => EpisodeResult {
                        success: false,
                        distance: 0.0,
                        mean_speed: 0.0,
                        mean_height: 0.0,
                        fall_time: Some(0.0),
                        final_mass_error: f64::NAN,
                    },
                };
                (seed, result)
            })
            .collect()
    });
    per_seed.sort_by_key(|(seed, _)| *seed);

    let max_d = per_seed.iter().map(|(_, r)| r.distance).fold(0.0, f64::max);
    let grid_max = template.distance_target.unwrap_or(max_d).max(1.0);
    let steps = 20usize;
    let distance_grid: Vec<f64> =
        (0..=steps).map(|i| grid_max * i as f64 / steps as f64).collect();
    let success_rate = distance_grid
        .iter()
        .map(|&d| {
            per_seed.iter().filter(|(_, r)| r.distance >= d).count() as f64
                / per_seed.len() as f64
        })
        .collect();
    Ok(BatchResult { per_seed, distance_grid, success_rate })
}

/// Sweep static payload mass and report the largest mass each mode sustains.
pub fn max_sustained_payload(
    template: &Scenario,
    mode: Mode,
    from: f64,
    to: f64,
    step: f64,
) -> Result<Vec<(f64, bool)>> {
    if !(step > 0.0) || to < from {
        return Err(Error::Scenario("bad sweep range".into()));
    }
    let mut out = Vec::new();
    let mut mass = from;
    while mass <= to + 1e-9 {
        let mut s = template.clone();
        s.mode = mode;
        s.payloads.retain(|p| p.time > 0.0);
        if mass > 0.0 {
            s.payloads.push(PayloadEvent { time: 0.0, mass, offset: [0.0, 0.0, 0.05] });
        }
        let ok = match run_episode(&s) {
            Ok((_, r)) => r.success,
            Err(_) => false,
        };
        out.push((mass, ok));
        mass += step;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn standing_scenario(duration: f64) -> Scenario {
        Scenario {
            name: "standing".into(),
            duration,
            seed: 1,
            mode: Mode::Ampc,
            gait: GaitConfig::standing(),
            terrain: TerrainSpec::Flat,
            commands: vec![CommandSegment {
                start_time: 0.0,
                v_x: 0.0,
                v_y: 0.0,
                yaw_rate: 0.0,
                height: 0.26,
            }],
            payloads: vec![],
            pushes: vec![],
            distance_target: None,
            sensor_noise: 0.0,
            mpc: MpcConfig::default(),
            robot: RobotSpec::default(),
        }
    }

    pub fn trot_scenario(duration: f64, v_x: f64) -> Scenario {
        let mut s = standing_scenario(duration);
        s.name = "trot".into();
        // Faster phases and a stiffer attitude weight keep pitch drift bounded
        // on the raw SRB plant, which lacks a whole-body tracking layer.
        s.gait = GaitConfig { phase_duration: 0.15, duty: 0.5, k_v: 0.03 };
        s.mpc.q_xi = [1e4; 3];
        s.commands = vec![
            CommandSegment { start_time: 0.0, v_x: 0.0, v_y: 0.0, yaw_rate: 0.0, height: 0.26 },
            CommandSegment { start_time: 1.0, v_x, v_y: 0.0, yaw_rate: 0.0, height: 0.26 },
        ];
        s
    }

    #[test]
    fn standing_holds_height() {
        let (rows, result) = run_episode(&standing_scenario(4.0)).unwrap();
        assert!(result.success);
        assert!(result.fall_time.is_none());
        assert!(
            (result.mean_height - 0.26).abs() < 0.005,
            "mean height {}",
            result.mean_height
        );
        assert!(!rows.is_empty());
    }

    #[test]
    fn standing_with_payload_adapts_mass() {
        let mut s = standing_scenario(4.0);
        s.payloads.push(PayloadEvent { time: 0.0, mass: 6.5, offset: [0.0, 0.0, 0.05] });
        let (rows, result) = run_episode(&s).unwrap();
        assert!(result.success, "fell at {:?}", result.fall_time);
        let last = rows.last().unwrap();
        let err = (last.mass_hat - last.mass_true).abs() / last.mass_true;
        assert!(err < 0.05, "mass_hat {} vs true {}", last.mass_hat, last.mass_true);
    }

    #[test]
    fn trot_tracks_commanded_speed() {
        let (_, result) = run_episode(&trot_scenario(8.0, 0.5)).unwrap();
        assert!(result.success, "fell at {:?}", result.fall_time);
        assert!(
            (result.mean_speed - 0.5).abs() < 0.05,
            "mean speed {}",
            result.mean_speed
        );
        assert!((result.mean_height - 0.26).abs() < 0.02, "height {}", result.mean_height);
    }

    #[test]
    fn baseline_never_updates_theta() {
        let mut s = trot_scenario(3.0, 0.5);
        s.mode = Mode::Baseline;
        s.payloads.push(PayloadEvent { time: 0.0, mass: 4.0, offset: [0.0, 0.0, 0.05] });
        let (rows, _) = run_episode(&s).unwrap();
        let nominal = s.robot.mass;
        for row in &rows {
            assert_eq!(row.mass_hat, nominal);
        }
    }

    #[test]
    fn telemetry_deterministic() {
        let s = trot_scenario(2.0, 0.4);
        let (rows_a, _) = run_episode(&s).unwrap();
        let (rows_b, _) = run_episode(&s).unwrap();
        let csv_a: Vec<String> = rows_a.iter().map(|r| r.to_csv()).collect();
        let csv_b: Vec<String> = rows_b.iter().map(|r| r.to_csv()).collect();
        assert_eq!(csv_a, csv_b);
    }

    #[test]
    fn applied_forces_always_admissible() {
        let mut s = trot_scenario(4.0, 0.5);
        s.payloads.push(PayloadEvent { time: 0.0, mass: 6.5, offset: [0.0, 0.0, 0.05] });
        let (rows, _) = run_episode(&s).unwrap();
        let cfg = &s.mpc;
        for row in &rows {
            for j in 0..NUM_FEET {
                let (fx, fy, fz) = (row.u0[3 * j], row.u0[3 * j + 1], row.u0[3 * j + 2]);
                if row.stance[j] {
                    assert!(fz >= cfg.f_z_min - 1e-8 && fz <= cfg.f_z_max + 1e-8);
                    assert!(fx.abs() <= cfg.mu * fz + 1e-8);
                    assert!(fy.abs() <= cfg.mu * fz + 1e-8);
                } else {
                    assert_eq!((fx, fy, fz), (0.0, 0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn push_disturbance_is_logged_and_survived() {
        let mut s = standing_scenario(4.0);
        s.pushes.push(PushEvent { time: 2.0, duration: 0.2, force: [0.0, 60.0, 0.0] });
        let (rows, result) = run_episode(&s).unwrap();
        assert!(result.success, "fell at {:?}", result.fall_time);
        assert!(rows.iter().any(|r| r.push_active));
    }

    #[test]
    fn batch_is_deterministic_and_sorted() {
        let mut s = trot_scenario(2.0, 0.4);
        s.terrain = TerrainSpec::Blocks { length: 5.0, block_height: 0.05, density: 0.2 };
        let seeds = [5, 3, 8];
        let a = run_batch(&s, &seeds, 3).unwrap();
        let b = run_batch(&s, &seeds, 1).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.curve_csv(), b.curve_csv());
        let order: Vec<u64> = a.per_seed.iter().map(|(s, _)| *s).collect();
        assert_eq!(order, vec![3, 5, 8]);
    }

    #[test]
    fn batch_rejects_duplicate_seeds() {
        let s = trot_scenario(1.0, 0.3);
        assert!(run_batch(&s, &[1, 1], 1).is_err());
    }

    #[test]
    fn scenario_validation_catches_bad_events() {
        let mut s = standing_scenario(2.0);
        s.payloads.push(PayloadEvent { time: 5.0, mass: 1.0, offset: [0.0; 3] });
        assert!(s.validate().is_err());
        let mut s = standing_scenario(2.0);
        s.commands.clear();
        assert!(s.validate().is_err());
    }

    #[test]
    fn sensor_noise_is_deterministic_and_survivable() {
        let mut s = standing_scenario(3.0);
        s.sensor_noise = 1e-3;
        let (rows_a, result) = run_episode(&s).unwrap();
        assert!(result.success, "fell at {:?}", result.fall_time);
        let (rows_b, _) = run_episode(&s).unwrap();
        let csv = |rows: &[TelemetryRow]| rows.iter().map(|r| r.to_csv()).collect::<Vec<_>>();
        assert_eq!(csv(&rows_a), csv(&rows_b));
        // noise actually reaches the controller: inputs differ from the
        // ideal-feedback run
        let mut clean = standing_scenario(3.0);
        clean.sensor_noise = 0.0;
        let (rows_c, _) = run_episode(&clean).unwrap();
        assert_ne!(csv(&rows_a), csv(&rows_c));
        // negative or non-finite values are rejected
        let mut bad = standing_scenario(1.0);
        bad.sensor_noise = -0.1;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn scenario_round_trips_through_json() {
        let s = trot_scenario(2.0, 0.5);
        let json = serde_json::to_string_pretty(&s).unwrap();
        let back: Scenario = serde_json::from_str(&json).unwrap();
        assert_eq!(back.duration, s.duration);
        assert_eq!(back.mode, s.mode);
        assert_eq!(back.commands.len(), s.commands.len());
    }
}
