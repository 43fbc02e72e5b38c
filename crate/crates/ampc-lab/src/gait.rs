//! Trot scheduling, Raibert foothold placement, and block terrain.
//!
//! Foot order everywhere: 0 = front-left, 1 = front-right, 2 = rear-left,
//! 3 = rear-right. Trot pairs: A = {FL, RR}, B = {FR, RL}.

use crate::error::{Error, Result};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const NUM_FEET: usize = 4;
/// Offset phase (0 = pair A, 1 = pair B) per foot.
const PAIR: [usize; NUM_FEET] = [0, 1, 1, 0];

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GaitConfig {
    /// Duration of one trot phase in seconds; the full cycle is twice this.
    pub phase_duration: f64,
    /// Stance fraction of the cycle per foot; 1 means standing.
    pub duty: f64,
    /// Raibert velocity-feedback gain in seconds.
    pub k_v: f64,
}

impl Default for GaitConfig {
    fn default() -> Self {
        Self { phase_duration: 0.3, duty: 0.5, k_v: 0.03 }
    }
}

impl GaitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.phase_duration > 0.0) {
            return Err(Error::InvalidParameter("phase_duration must be positive"));
        }
        if !(self.duty > 0.0 && self.duty <= 1.0) {
            return Err(Error::InvalidParameter("duty must be in (0, 1]"));
        }
        Ok(())
    }

    /// Standing variant: every foot always in stance.
    pub fn standing() -> Self {
        Self { duty: 1.0, ..Self::default() }
    }

    /// Stance duration of one foot.
    pub fn t_stance(&self) -> f64 {
        self.duty * 2.0 * self.phase_duration
    }
}

/// Stance flags at time t. Pair A leads: at t = 0 pair A is in stance.
pub fn contact_schedule(t: f64, cfg: &GaitConfig) -> [bool; NUM_FEET] {
    let cycle = 2.0 * cfg.phase_duration;
    let mut stance = [false; NUM_FEET];
    for j in 0..NUM_FEET {
        let offset = PAIR[j] as f64 * cfg.phase_duration;
        let mut m = (t + offset) % cycle;
        if m < 0.0 {
            m += cycle;
        }
        stance[j] = cfg.duty >= 1.0 || m / cycle < cfg.duty;
    }
    stance
}

/// Raibert touchdown target: hip position shifted by half the stance travel
/// plus velocity-error feedback; z snaps to the terrain surface.
pub fn raibert_foothold(
    hip_pos: &Vector3<f64>,
    v: &Vector3<f64>,
    v_des: &Vector3<f64>,
    t_stance: f64,
    k_v: f64,
    terrain: &Terrain,
) -> Vector3<f64> {
    let x = hip_pos.x + 0.5 * t_stance * v.x + k_v * (v.x - v_des.x);
    let y = hip_pos.y + 0.5 * t_stance * v.y + k_v * (v.y - v_des.y);
    Vector3::new(x, y, terrain.height(x, y))
}

/// Regular grid of cell heights. Queries outside the extent return the
/// nearest boundary cell's height.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Terrain {
    pub cell_size: f64,
    pub nx: usize,
    pub ny: usize,
    /// Grid origin (corner of cell (0, 0)) in world coordinates.
    pub origin_x: f64,
    pub origin_y: f64,
    /// Row-major heights, ny rows of nx cells.
    pub heights: Vec<f64>,
}

impl Terrain {
    pub fn flat() -> Self {
        Self { cell_size: 1.0, nx: 1, ny: 1, origin_x: 0.0, origin_y: 0.0, heights: vec![0.0] }
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        let ix = (((x - self.origin_x) / self.cell_size).floor() as i64)
            .clamp(0, self.nx as i64 - 1) as usize;
        let iy = (((y - self.origin_y) / self.cell_size).floor() as i64)
            .clamp(0, self.ny as i64 - 1) as usize;
        self.heights[iy * self.nx + ix]
    }

    pub fn max_height(&self) -> f64 {
        self.heights.iter().cloned().fold(0.0, f64::max)
    }

    /// CSV grid: one row per y index, comma-separated heights.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for iy in 0..self.ny {
            let row: Vec<String> = (0..self.nx)
                .map(|ix| format!("{}", self.heights[iy * self.nx + ix]))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Scatter blocks of `block_height` over a course of the given length:
/// each cell is raised with probability `density`. Reproducible from seed.
pub fn generate_terrain(seed: u64, length: f64, block_height: f64, density: f64) -> Result<Terrain> {
    if !(length > 0.0) {
        return Err(Error::InvalidParameter("terrain length must be positive"));
    }
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::InvalidParameter("density must be in [0, 1]"));
    }
    if !block_height.is_finite() || block_height < 0.0 {
        return Err(Error::InvalidParameter("block height must be finite and nonnegative"));
    }
    let cell_size = 0.2;
    let width = 3.0;
    // flat apron of one metre before the course so the robot starts level
    let nx = ((length + 1.0) / cell_size).ceil() as usize;
    let ny = (width / cell_size).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut heights = vec![0.0; nx * ny];
    let apron_cells = (1.0 / cell_size).ceil() as usize;
    for iy in 0..ny {
        for ix in 0..nx {
            if ix >= apron_cells && rng.gen_range(0.0..1.0) < density {
                heights[iy * nx + ix] = block_height;
            }
        }
    }
    Ok(Terrain {
        cell_size,
        nx,
        ny,
        origin_x: -1.0,
        origin_y: -width / 2.0,
        heights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pair_a_leads_then_pairs_swap() {
        let cfg = GaitConfig::default();
        assert_eq!(contact_schedule(0.0, &cfg), [true, false, false, true]);
        let eps = 1e-6;
        assert_eq!(
            contact_schedule(cfg.phase_duration + eps, &cfg),
            [false, true, true, false]
        );
    }

    #[test]
    fn duty_one_is_standing() {
        let cfg = GaitConfig::standing();
        for i in 0..100 {
            let t = i as f64 * 0.017;
            assert_eq!(contact_schedule(t, &cfg), [true; 4]);
        }
    }

    #[test]
    fn no_starved_leg_over_a_cycle() {
        for duty in [0.3, 0.5, 0.8] {
            let cfg = GaitConfig { duty, ..GaitConfig::default() };
            for start in 0..50 {
                let t0 = start as f64 * 0.077;
                let mut seen = [false; 4];
                let cycle = 2.0 * cfg.phase_duration;
                let mut t = t0;
                while t < t0 + cycle {
                    let s = contact_schedule(t, &cfg);
                    for j in 0..4 {
                        seen[j] |= s[j];
                    }
                    t += 1e-3;
                }
                assert_eq!(seen, [true; 4], "starved leg at window start {t0}");
            }
        }
    }

    #[test]
    fn raibert_under_hip_at_rest() {
        let terrain = Terrain::flat();
        let hip = Vector3::new(0.3, -0.1, 0.26);
        let target = raibert_foothold(
            &hip,
            &Vector3::zeros(),
            &Vector3::zeros(),
            0.3,
            0.03,
            &terrain,
        );
        assert_abs_diff_eq!(target.x, 0.3);
        assert_abs_diff_eq!(target.y, -0.1);
        assert_abs_diff_eq!(target.z, 0.0);
    }

    #[test]
    fn raibert_offset_arithmetic() {
        let terrain = Terrain::flat();
        let v = Vector3::new(0.5, 0.0, 0.0);
        let target =
            raibert_foothold(&Vector3::zeros(), &v, &v, 0.3, 0.03, &terrain);
        assert_abs_diff_eq!(target.x, 0.075, epsilon = 1e-12);
        assert_abs_diff_eq!(target.y, 0.0);
    }

    #[test]
    fn raibert_velocity_feedback() {
        let terrain = Terrain::flat();
        let v = Vector3::new(0.6, 0.0, 0.0);
        let v_des = Vector3::new(0.5, 0.0, 0.0);
        let target =
            raibert_foothold(&Vector3::zeros(), &v, &v_des, 0.3, 0.03, &terrain);
        assert_abs_diff_eq!(target.x, 0.5 * 0.3 * 0.6 + 0.03 * 0.1, epsilon = 1e-12);
    }

    #[test]
    fn zero_density_is_flat() {
        let t = generate_terrain(9, 10.0, 0.05, 0.0).unwrap();
        assert!(t.heights.iter().all(|&h| h == 0.0));
    }

    #[test]
    fn terrain_deterministic_from_seed() {
        let a = generate_terrain(42, 10.0, 0.05, 0.35).unwrap();
        let b = generate_terrain(42, 10.0, 0.05, 0.35).unwrap();
        assert_eq!(a.heights, b.heights);
        let c = generate_terrain(43, 10.0, 0.05, 0.35).unwrap();
        assert_ne!(a.heights, c.heights);
    }

    #[test]
    fn adjacent_cells_differ_by_zero_or_block_height() {
        let t = generate_terrain(7, 10.0, 0.05, 0.4).unwrap();
        for iy in 0..t.ny {
            for ix in 0..t.nx - 1 {
                let d = (t.heights[iy * t.nx + ix + 1] - t.heights[iy * t.nx + ix]).abs();
                assert!(d == 0.0 || (d - 0.05).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn queries_outside_extent_clamp_to_boundary() {
        let mut t = generate_terrain(3, 5.0, 0.05, 0.5).unwrap();
        // force known corner heights
        let nx = t.nx;
        t.heights[0] = 0.05;
        assert_eq!(t.height(-100.0, -100.0), 0.05);
        t.heights[nx - 1] = 0.0;
        assert_eq!(t.height(1e6, -1e6), 0.0);
    }

    #[test]
    fn foothold_lands_on_surface() {
        let t = generate_terrain(5, 8.0, 0.05, 0.5).unwrap();
        for i in 0..200 {
            let x = -1.0 + i as f64 * 0.045;
            let y = -1.4 + i as f64 * 0.013;
            let hip = Vector3::new(x, y, 0.3);
            let tgt = raibert_foothold(
                &hip,
                &Vector3::new(0.4, 0.1, 0.0),
                &Vector3::new(0.5, 0.0, 0.0),
                0.3,
                0.03,
                &t,
            );
            assert_eq!(tgt.z, t.height(tgt.x, tgt.y));
        }
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(GaitConfig { duty: 0.0, ..GaitConfig::default() }.validate().is_err());
        assert!(GaitConfig { duty: 1.1, ..GaitConfig::default() }.validate().is_err());
        assert!(GaitConfig { phase_duration: 0.0, ..GaitConfig::default() }
            .validate()
            .is_err());
        assert!(generate_terrain(0, -1.0, 0.05, 0.5).is_err());
        assert!(generate_terrain(0, 10.0, 0.05, 1.5).is_err());
    }

    #[test]
    fn csv_round_shape() {
        let t = generate_terrain(1, 3.0, 0.05, 0.5).unwrap();
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.trim_end().split('\n').collect();
        assert_eq!(lines.len(), t.ny);
        assert_eq!(lines[0].split(',').count(), t.nx);
    }
}
