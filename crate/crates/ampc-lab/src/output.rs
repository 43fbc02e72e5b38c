//! File outputs: telemetry CSV and self-contained SVG 1.1 line plots.
//!
//! Plots are deliberately hand-rendered markup with fixed geometry so the
//! artifacts are bitwise reproducible; no styling depends on the environment.

use crate::error::{Error, Result};
use crate::sim::{telemetry_header, BatchResult, Scenario, TelemetryRow};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// One named polyline of a plot.
#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: &str, points: Vec<(f64, f64)>) -> Self {
        Self { name: name.into(), points }
    }
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 30.0;
const MARGIN_T: f64 = 50.0;
const MARGIN_B: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Data range covering all finite points with a 5% margin on each side.
fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    let span = hi - lo;
    if span <= 0.0 {
        // degenerate extent: pad around the single value
        let pad = lo.abs().max(1.0) * 0.05;
        return (lo - pad, hi + pad);
    }
    (lo - 0.05 * span, hi + 0.05 * span)
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return String::from("0");
    }
    let a = v.abs();
    if a >= 1000.0 || a < 0.01 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Render a line plot as a standalone SVG 1.1 document with axes, tick
/// labels, axis titles, and a legend.
pub fn render_line_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
) -> String {
    let (x0, x1) = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let px = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * (WIDTH - MARGIN_L - MARGIN_R);
    let py = |y: f64| HEIGHT - MARGIN_B - (y - y0) / (y1 - y0) * (HEIGHT - MARGIN_T - MARGIN_B);

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" \
         width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    );
    let _ = write!(svg, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n");
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"28\" font-family=\"sans-serif\" font-size=\"18\" \
         text-anchor=\"middle\">{}</text>\n",
        WIDTH / 2.0,
        escape_xml(title)
    );

    // gridlines and ticks, 6 divisions per axis
    for i in 0..=6 {
        let f = i as f64 / 6.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let xp = px(xv);
        let yp = py(yv);
        let _ = write!(
            svg,
            "<line x1=\"{xp:.2}\" y1=\"{}\" x2=\"{xp:.2}\" y2=\"{}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
            MARGIN_T,
            HEIGHT - MARGIN_B
        );
        let _ = write!(
            svg,
            "<line x1=\"{}\" y1=\"{yp:.2}\" x2=\"{}\" y2=\"{yp:.2}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
            MARGIN_L,
            WIDTH - MARGIN_R
        );
        let _ = write!(
            svg,
            "<text x=\"{xp:.2}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
             text-anchor=\"middle\">{}</text>\n",
            HEIGHT - MARGIN_B + 18.0,
            fmt_tick(xv)
        );
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" \
             text-anchor=\"end\">{}</text>\n",
            MARGIN_L - 6.0,
            yp + 4.0,
            fmt_tick(yv)
        );
    }

    // axes frame
    let _ = write!(
        svg,
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" \
         stroke=\"black\" stroke-width=\"1.5\"/>\n",
        MARGIN_L,
        MARGIN_T,
        WIDTH - MARGIN_L - MARGIN_R,
        HEIGHT - MARGIN_T - MARGIN_B
    );
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"14\" \
         text-anchor=\"middle\">{}</text>\n",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 14.0,
        escape_xml(x_label)
    );
    let _ = write!(
        svg,
        "<text x=\"18\" y=\"{}\" font-family=\"sans-serif\" font-size=\"14\" \
         text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>\n",
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        escape_xml(y_label)
    );

    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        if !pts.is_empty() {
            let _ = write!(
                svg,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" \
                 stroke-width=\"1.8\"/>\n",
                pts.join(" ")
            );
        }
        // legend entry
        let ly = MARGIN_T + 16.0 + 18.0 * k as f64;
        let lx = WIDTH - MARGIN_R - 170.0;
        let _ = write!(
            svg,
            "<line x1=\"{lx}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" \
             stroke-width=\"2.5\"/>\n",
            lx + 24.0
        );
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            lx + 30.0,
            ly + 4.0,
            escape_xml(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Full telemetry CSV: header row plus one row per tick. Empty telemetry
/// yields a header-only document.
pub fn telemetry_csv(rows: &[TelemetryRow]) -> String {
    let mut out = telemetry_header();
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

/// Parse a telemetry CSV produced by [`telemetry_csv`] back into rows.
pub fn parse_telemetry_csv(text: &str) -> Result<Vec<TelemetryRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Scenario("empty telemetry file".into()))?;
    if header != telemetry_header() {
        return Err(Error::Scenario("telemetry header does not match schema".into()));
    }
    let n_cols = telemetry_header().split(',').count();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != n_cols {
            return Err(Error::Scenario(format!(
                "telemetry row {} has {} columns, expected {n_cols}",
                i + 2,
                f.len()
            )));
        }
        let num = |k: usize| -> Result<f64> {
            f[k].parse().map_err(|_| Error::Scenario(format!("bad number in row {}", i + 2)))
        };
        let vec3 = |k: usize| -> Result<[f64; 3]> { Ok([num(k)?, num(k + 1)?, num(k + 2)?]) };
        let mut u0 = [0.0; 12];
        for (j, u) in u0.iter_mut().enumerate() {
            *u = num(13 + j)?;
        }
        let flag = |k: usize| -> Result<bool> { Ok(num(k)? != 0.0) };
        rows.push(TelemetryRow {
            t: num(0)?,
            r: vec3(1)?,
            v: vec3(4)?,
            rpy: vec3(7)?,
            omega: vec3(10)?,
            u0,
            x_tilde_norm: num(25)?,
            mass_hat: num(26)?,
            mass_true: num(27)?,
            theta_inv_mass: num(28)?,
            theta_inv_ixx: num(29)?,
            theta_inv_iyy: num(30)?,
            theta_inv_izz: num(31)?,
            lambda_max: num(32)?,
            spectral_margin: num(33)?,
            qp_status: num(34)? as u8,
            qp_iterations: num(35)? as usize,
            active_constraints: num(36)? as usize,
            stance: [flag(37)?, flag(38)?, flag(39)?, flag(40)?],
            payload_event: flag(41)?,
            push_active: flag(42)?,
            fallback: flag(43)?,
            fall: flag(44)?,
        });
    }
    Ok(rows)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(Error::Io)
}

/// Commanded planar speed and height at time t per the scenario's segments.
fn command_traces(scenario: &Scenario, t: f64) -> (f64, f64) {
    let cmd = scenario.command_at(t);
    let speed = (cmd.v_x.powi(2) + cmd.v_y.powi(2)).sqrt();
    (speed, cmd.height)
}

/// Write episode artifacts: telemetry CSV plus the four standard plots.
/// Returns the paths written.
pub fn write_episode_outputs(
    dir: &Path,
    prefix: &str,
    scenario: &Scenario,
    rows: &[TelemetryRow],
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(Error::Io)?;
    let mut written = Vec::new();

    let csv_path = dir.join(format!("{prefix}_telemetry.csv"));
    write_file(&csv_path, &telemetry_csv(rows))?;
    written.push(csv_path);

    let speed: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r.t, (r.v[0].powi(2) + r.v[1].powi(2)).sqrt()))
        .collect();
    let speed_des: Vec<(f64, f64)> =
        rows.iter().map(|r| (r.t, command_traces(scenario, r.t).0)).collect();
    let height: Vec<(f64, f64)> = rows.iter().map(|r| (r.t, r.r[2])).collect();
    let height_des: Vec<(f64, f64)> =
        rows.iter().map(|r| (r.t, command_traces(scenario, r.t).1)).collect();
    let speed_plot = render_line_plot(
        "Speed tracking",
        "time [s]",
        "speed [m/s]",
        &[Series::new("planar speed", speed), Series::new("commanded speed", speed_des)],
    );
    let p = dir.join(format!("{prefix}_speed.svg"));
    write_file(&p, &speed_plot)?;
    written.push(p);

    let height_plot = render_line_plot(
        "Height tracking",
        "time [s]",
        "height [m]",
        &[Series::new("COM height", height), Series::new("commanded height", height_des)],
    );
    let p = dir.join(format!("{prefix}_height.svg"));
    write_file(&p, &height_plot)?;
    written.push(p);

    let grf: Vec<(f64, f64)> = rows.iter().map(|r| (r.t, r.u0[2])).collect();
    let grf_plot = render_line_plot(
        "Front-left vertical ground reaction force",
        "time [s]",
        "f_z [N]",
        &[Series::new("FL f_z", grf)],
    );
    let p = dir.join(format!("{prefix}_grf.svg"));
    write_file(&p, &grf_plot)?;
    written.push(p);

    let mass_hat: Vec<(f64, f64)> = rows.iter().map(|r| (r.t, r.mass_hat)).collect();
    let mass_true: Vec<(f64, f64)> = rows.iter().map(|r| (r.t, r.mass_true)).collect();
    let mass_plot = render_line_plot(
        "Mass estimate",
        "time [s]",
        "mass [kg]",
        &[Series::new("estimated mass", mass_hat), Series::new("true mass", mass_true)],
    );
    let p = dir.join(format!("{prefix}_mass.svg"));
    write_file(&p, &mass_plot)?;
    written.push(p);

    Ok(written)
}

/// Write batch artifacts: per-seed CSV, success-vs-distance CSV, and one
/// curve plot over all labelled batches (e.g. both controller modes).
pub fn write_batch_outputs(
    dir: &Path,
    prefix: &str,
    batches: &[(&str, &BatchResult)],
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(Error::Io)?;
    let mut written = Vec::new();
    let mut series = Vec::new();
    for (label, batch) in batches {
        let p = dir.join(format!("{prefix}_{label}_per_seed.csv"));
        write_file(&p, &batch.to_csv())?;
        written.push(p);
        let p = dir.join(format!("{prefix}_{label}_curve.csv"));
        write_file(&p, &batch.curve_csv())?;
        written.push(p);
        series.push(Series::new(
            label,
            batch
                .distance_grid
                .iter()
                .zip(&batch.success_rate)
                .map(|(&d, &s)| (d, s))
                .collect(),
        ));
    }
    let plot = render_line_plot(
        "Success rate over traveled distance",
        "distance [m]",
        "success rate",
        &series,
    );
    let p = dir.join(format!("{prefix}_success_vs_distance.svg"));
    write_file(&p, &plot)?;
    written.push(p);
    Ok(written)
}
