use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::semi_auto::ControlMode;

/// Floor applied to curvature and dimensionless jerk before the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// Default smoothness window, seconds.
pub const DEFAULT_SIGMA: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub collision: bool,
    pub mode: ControlMode,
}

/// Timestamped path in micrometres.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<TrajSample>,
    /// Micrometres per pixel of the source log.
    pub scale: f64,
}

impl Trajectory {
    /// Samples already in micrometres.
    pub fn new(samples: Vec<TrajSample>, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidInput("scale must be positive".into()));
        }
        for s in &samples {
            if !(s.t.is_finite() && s.x.is_finite() && s.y.is_finite()) {
                return Err(Error::InvalidInput("non-finite trajectory sample".into()));
            }
        }
        if samples.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(Error::InvalidInput("sample times must be strictly increasing".into()));
        }
        Ok(Self { samples, scale })
    }

    /// Samples in pixels, converted with `scale` µm/px.
    pub fn from_pixels(mut samples: Vec<TrajSample>, scale: f64) -> Result<Self> {
        for s in samples.iter_mut() {
            s.x *= scale;
            s.y *= scale;
        }
        Self::new(samples, scale)
    }

    /// Parses a session log (`tick,t_ms,mode,x,y,event`, pixels). A sample is
    /// flagged as a collision when its event field mentions one.
    pub fn from_session_log(text: &str, scale: f64) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == SESSION_LOG_HEADER => {}
            _ => return Err(Error::Parse("missing session log header".into())),
        }
        let mut samples = Vec::new();
        for (n, line) in lines.enumerate() {
            let bad = |what: &str| Error::Parse(format!("line {}: {what}", n + 2));
            let f: Vec<&str> = line.splitn(6, ',').collect();
            if f.len() != 6 {
                return Err(bad("expected 6 fields"));
            }
            let t_ms: u64 = f[1].trim().parse().map_err(|_| bad("t_ms"))?;
            let mode: ControlMode = f[2].trim().parse().map_err(|_| bad("mode"))?;
            let x: f64 = f[3].trim().parse().map_err(|_| bad("x"))?;
            let y: f64 = f[4].trim().parse().map_err(|_| bad("y"))?;
            samples.push(TrajSample {
                t: t_ms as f64 / 1000.0,
                x,
                y,
                collision: f[5].split(';').any(|e| e.trim() == "collision"),
                mode,
            });
        }
        Self::from_pixels(samples, scale)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn require(&self, n: usize, what: &str) -> Result<()> {
        if self.samples.len() < n {
            Err(Error::Insufficient(format!("{what} needs at least {n} samples")))
        } else {
            Ok(())
        }
    }

    fn duration(&self) -> f64 {
        self.samples.last().map_or(0.0, |l| l.t) - self.samples.first().map_or(0.0, |f| f.t)
    }
}

pub const SESSION_LOG_HEADER: &str = "tick,t_ms,mode,x,y,event";

/// One session-log row (pixels).
pub fn session_log_row(out: &mut String, tick: u64, t_ms: u64, mode: ControlMode, x: f64, y: f64, event: &str) {
    let _ = writeln!(out, "{tick},{t_ms},{mode},{x},{y},{event}");
}

/// Path length over elapsed time, µm/s.
pub fn average_speed(traj: &Trajectory) -> Result<f64> {
    traj.require(2, "average speed")?;
    let duration = traj.duration();
    if duration <= 0.0 {
        return Err(Error::Degenerate("zero duration".into()));
    }
    let length: f64 = traj
        .samples
        .windows(2)
        .map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y))
        .sum();
    Ok(length / duration)
}

/// Elapsed time from first to last sample, seconds.
pub fn time_of_completion(traj: &Trajectory) -> Result<f64> {
    traj.require(2, "time of completion")?;
    Ok(traj.duration())
}

/// Three-point first and second derivatives at the middle of a stencil with
/// spacings `h1`, `h2`.
fn central(p0: f64, p1: f64, p2: f64, h1: f64, h2: f64) -> (f64, f64) {
    let s = h1 + h2;
    let d1 = -h2 / (h1 * s) * p0 + (h2 - h1) / (h1 * h2) * p1 + h1 / (h2 * s) * p2;
    let d2 = 2.0 * (p0 / (h1 * s) - p1 / (h1 * h2) + p2 / (h2 * s));
    (d1, d2)
}

/// One-sided three-point first derivative at `t0` from samples at `t0`,
/// `t0 + h1`, `t0 + h1 + h2`.
fn one_sided(p0: f64, p1: f64, p2: f64, h1: f64, h2: f64) -> f64 {
    let s = h1 + h2;
    -(2.0 * h1 + h2) / (h1 * s) * p0 + s / (h1 * h2) * p1 - h1 / (h2 * s) * p2
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median over interior samples of `log₁₀ max(κ, floor)` with
/// `κ = |λ̇ × λ̈| / |λ̇|³`. Stationary samples have no defined curvature and
/// are left out.
pub fn gracefulness(traj: &Trajectory) -> Result<f64> {
    traj.require(3, "gracefulness")?;
    let s = &traj.samples;
    let mut logs = Vec::with_capacity(s.len() - 2);
    for i in 1..s.len() - 1 {
        let (h1, h2) = (s[i].t - s[i - 1].t, s[i + 1].t - s[i].t);
        let (vx, ax) = central(s[i - 1].x, s[i].x, s[i + 1].x, h1, h2);
        let (vy, ay) = central(s[i - 1].y, s[i].y, s[i + 1].y, h1, h2);
        let speed = vx.hypot(vy);
        if speed == 0.0 {
            continue;
        }
        let kappa = (vx * ay - vy * ax).abs() / speed.powi(3);
        logs.push(kappa.max(LOG_FLOOR).log10());
    }
    if logs.is_empty() {
        return Err(Error::Degenerate("stationary trajectory has no curvature".into()));
    }
    Ok(median(logs))
}

/// Speed at every sample: central differences inside, one-sided at the ends.
fn speeds(s: &[TrajSample]) -> Vec<f64> {
    let n = s.len();
    let mut out = vec![0.0; n];
    if n < 3 {
        if n == 2 {
            let dt = s[1].t - s[0].t;
            let v = (s[1].x - s[0].x).hypot(s[1].y - s[0].y) / dt;
            out.fill(v);
        }
        return out;
    }
    for i in 1..n - 1 {
        let (h1, h2) = (s[i].t - s[i - 1].t, s[i + 1].t - s[i].t);
        let vx = central(s[i - 1].x, s[i].x, s[i + 1].x, h1, h2).0;
        let vy = central(s[i - 1].y, s[i].y, s[i + 1].y, h1, h2).0;
        out[i] = vx.hypot(vy);
    }
    let (h1, h2) = (s[1].t - s[0].t, s[2].t - s[1].t);
    out[0] = one_sided(s[0].x, s[1].x, s[2].x, h1, h2).hypot(one_sided(s[0].y, s[1].y, s[2].y, h1, h2));
    let (h1, h2) = (s[n - 1].t - s[n - 2].t, s[n - 2].t - s[n - 3].t);
    out[n - 1] = one_sided(s[n - 1].x, s[n - 2].x, s[n - 3].x, -h1, -h2)
        .hypot(one_sided(s[n - 1].y, s[n - 2].y, s[n - 3].y, -h1, -h2));
    out
}

/// Third derivative from four samples (six times the third divided
/// difference), placed at the middle of the inner pair.
fn jerk(w: &[TrajSample]) -> (f64, f64, f64) {
    let dd = |f: &dyn Fn(&TrajSample) -> f64| {
        let d1: Vec<f64> = (0..3).map(|i| (f(&w[i + 1]) - f(&w[i])) / (w[i + 1].t - w[i].t)).collect();
        let d2: Vec<f64> = (0..2).map(|i| (d1[i + 1] - d1[i]) / (w[i + 2].t - w[i].t)).collect();
        6.0 * (d2[1] - d2[0]) / (w[3].t - w[0].t)
    };
    (0.5 * (w[1].t + w[2].t), dd(&|s| s.x), dd(&|s| s.y))
}

/// Median over consecutive windows of length `sigma` of
/// `log₁₀ max(φ, floor)`, `φ = σ⁵/v_p² · ∫|d³λ/dt³|² dt`. Windows with fewer
/// than four samples or no motion are left out; a trailing partial window
/// is dropped.
pub fn smoothness(traj: &Trajectory, sigma: f64) -> Result<f64> {
    traj.require(4, "smoothness")?;
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidInput("sigma must be positive".into()));
    }
    let s = &traj.samples;
    let t0 = s[0].t;
    let duration = traj.duration();
    let tol = 1e-9 * sigma.max(1.0);
    if sigma > duration + tol {
        return Err(Error::InvalidInput(format!(
            "sigma {sigma} s exceeds trajectory duration {duration} s"
        )));
    }
    let speed = speeds(s);
    let mut logs = Vec::new();
    let mut k = 0usize;
    loop {
        let a = t0 + k as f64 * sigma;
        let b = a + sigma;
        if b > s[s.len() - 1].t + tol {
            break;
        }
        k += 1;
        let lo = s.partition_point(|p| p.t < a - tol);
        let hi = s.partition_point(|p| p.t <= b + tol);
        let win = &s[lo..hi];
        if win.len() < 4 {
            continue;
        }
        let v_peak = speed[lo..hi].iter().cloned().fold(0.0, f64::max);
        if v_peak == 0.0 {
            continue;
        }
        let jerks: Vec<(f64, f64)> = win
            .windows(4)
            .map(|w| {
                let (tm, jx, jy) = jerk(w);
                (tm, jx * jx + jy * jy)
            })
            .collect();
        let (first, last) = (jerks[0], jerks[jerks.len() - 1]);
        let mut integral = (first.0 - a).max(0.0) * first.1 + (b - last.0).max(0.0) * last.1;
        for pair in jerks.windows(2) {
            integral += 0.5 * (pair[1].0 - pair[0].0) * (pair[0].1 + pair[1].1);
        }
        let phi = sigma.powi(5) / (v_peak * v_peak) * integral;
        logs.push(phi.max(LOG_FLOOR).log10());
    }
    if logs.is_empty() {
        return Err(Error::Degenerate("no window with motion and at least 4 samples".into()));
    }
    Ok(median(logs))
}

/// Number of maximal runs of consecutive collision-flagged samples.
pub fn collision_count(traj: &Trajectory) -> u32 {
    let mut count = 0;
    let mut prev = false;
    for s in &traj.samples {
        if s.collision && !prev {
            count += 1;
        }
        prev = s.collision;
    }
    count
}
