//! Point-dipole actuation model: driver field and its Jacobian, gradient
//! force on the robot magnet, the adsorption-critical separation, and an
//! overdamped magnet-following step.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vacuum permeability, T·m/A.
pub const MU0: f64 = 4.0e-7 * std::f64::consts::PI;
/// Standard gravity, m/s².
pub const G: f64 = 9.80665;

const K: f64 = MU0 / (4.0 * std::f64::consts::PI);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dipole {
    /// Moment, A·m².
    pub moment: Vector3<f64>,
    /// Position, m.
    pub position: Vector3<f64>,
}

/// Anything with a differentiable magnetic field.
pub trait FieldSource {
    /// Flux density at `r`, T.
    fn field(&self, r: &Vector3<f64>) -> Result<Vector3<f64>>;
    /// `J[i][j] = ∂B_i/∂r_j`, T/m.
    fn jacobian(&self, r: &Vector3<f64>) -> Result<Matrix3<f64>>;
}

impl Dipole {
    pub fn new(moment: Vector3<f64>, position: Vector3<f64>) -> Result<Self> {
        if !(moment.iter().all(|v| v.is_finite()) && position.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("dipole".into()));
        }
        Ok(Self { moment, position })
    }

    fn offset(&self, r: &Vector3<f64>) -> Result<(Vector3<f64>, f64)> {
        let d = r - self.position;
        let n = d.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Degenerate("field evaluated at the dipole location".into()));
        }
        Ok((d, n))
    }
}

impl FieldSource for Dipole {
    /// `(μ₀/4π)·(3(m·r̂)r̂ − m)/|r|³`.
    fn field(&self, r: &Vector3<f64>) -> Result<Vector3<f64>> {
        let (d, n) = self.offset(r)?;
        let u = d / n;
        Ok((3.0 * self.moment.dot(&u) * u - self.moment) * (K / n.powi(3)))
    }

    fn jacobian(&self, r: &Vector3<f64>) -> Result<Matrix3<f64>> {
        let (d, n) = self.offset(r)?;
        let m = &self.moment;
        let md = m.dot(&d);
        let n5 = n.powi(5);
        let n7 = n5 * n * n;
        let mut j = Matrix3::zeros();
        for i in 0..3 {
            for k in 0..3 {
                let delta = if i == k { 1.0 } else { 0.0 };
                j[(i, k)] = K
                    * (3.0 * (m[k] * d[i] + md * delta + m[i] * d[k]) / n5
                        - 15.0 * md * d[i] * d[k] / n7);
            }
        }
        Ok(j)
    }
}

/// Spatially constant field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UniformField(pub Vector3<f64>);

impl FieldSource for UniformField {
    fn field(&self, _r: &Vector3<f64>) -> Result<Vector3<f64>> {
        Ok(self.0)
    }

    fn jacobian(&self, _r: &Vector3<f64>) -> Result<Matrix3<f64>> {
        Ok(Matrix3::zeros())
    }
}

pub fn dipole_field(dipole: &Dipole, r: &Vector3<f64>) -> Result<Vector3<f64>> {
    dipole.field(r)
}

/// `F = (M·∇)B`, i.e. `F_i = Σ_j M_j ∂B_i/∂r_j`, N.
pub fn dipole_force<S: FieldSource + ?Sized>(robot_moment: &Vector3<f64>, source: &S, r: &Vector3<f64>) -> Result<Vector3<f64>> {
    Ok(source.jacobian(r)? * robot_moment)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MagnetConfig {
    /// Driver flux density at its pole face, T.
    pub surface_field: f64,
    /// Driver diameter, m.
    pub driver_diameter: f64,
    /// Robot sphere diameter, m.
    pub robot_diameter: f64,
    /// Robot density, kg/m³.
    pub robot_density: f64,
    /// Robot magnetization, A/m.
    pub robot_magnetization: f64,
    /// Linear drag coefficient, N·s/m.
    pub drag: f64,
    /// Height of the driver above the vessel plane in following mode, m.
    pub driver_height: f64,
    /// Closest allowed robot–driver separation, m.
    pub safety_floor: f64,
    /// Upper end of the critical-distance bracket, m.
    pub max_separation: f64,
}

impl Default for MagnetConfig {
    fn default() -> Self {
        Self {
            surface_field: 0.1,
            driver_diameter: 1e-3,
            robot_diameter: 1e-3,
            // Sintered NdFeB.
            robot_density: 7500.0,
            robot_magnetization: 9.0e5,
            // Stokes drag of a 1 mm sphere in water.
            drag: 6.0 * std::f64::consts::PI * 1e-3 * 0.5e-3,
            driver_height: 8e-3,
            safety_floor: 1e-3,
            max_separation: 1.0,
        }
    }
}

impl MagnetConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("surface_field", self.surface_field),
            ("driver_diameter", self.driver_diameter),
            ("robot_diameter", self.robot_diameter),
            ("robot_density", self.robot_density),
            ("robot_magnetization", self.robot_magnetization),
            ("drag", self.drag),
            ("driver_height", self.driver_height),
            ("safety_floor", self.safety_floor),
            ("max_separation", self.max_separation),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("magnet.{name} must be positive")));
            }
        }
        if self.max_separation <= self.contact_distance() {
            return Err(Error::Config("magnet.max_separation must exceed the contact distance".into()));
        }
        Ok(())
    }

    /// Driver moment magnitude whose on-axis field at the pole face equals
    /// `surface_field`: `m = B·2π·z³/μ₀` with `z` the driver radius.
    pub fn driver_moment(&self) -> f64 {
        let z = self.driver_diameter / 2.0;
        self.surface_field * 2.0 * std::f64::consts::PI * z.powi(3) / MU0
    }

    pub fn robot_volume(&self) -> f64 {
        std::f64::consts::PI * self.robot_diameter.powi(3) / 6.0
    }

    pub fn robot_moment(&self) -> f64 {
        self.robot_magnetization * self.robot_volume()
    }

    pub fn robot_weight(&self) -> f64 {
        self.robot_density * self.robot_volume() * G
    }

    /// Centre separation at which the two bodies touch.
    pub fn contact_distance(&self) -> f64 {
        (self.driver_diameter + self.robot_diameter) / 2.0
    }
}

/// Force on the robot along the shared axis with both moments co-aligned
/// on it; negative values attract.
pub fn axial_force(config: &MagnetConfig, separation: f64) -> Result<f64> {
    let driver = Dipole::new(Vector3::new(0.0, 0.0, config.driver_moment()), Vector3::zeros())?;
    let m = Vector3::new(0.0, 0.0, config.robot_moment());
    Ok(dipole_force(&m, &driver, &Vector3::new(0.0, 0.0, separation))?.z)
}

/// Separation where the axial attraction equals the robot weight, by
/// bisection between contact and `max_separation`. Closer than this the
/// robot adsorbs onto the driver side.
pub fn critical_distance(config: &MagnetConfig) -> Result<f64> {
    config.validate()?;
    let weight = config.robot_weight();
    let excess = |d: f64| -> Result<f64> { Ok(axial_force(config, d)?.abs() - weight) };
    let (mut lo, mut hi) = (config.contact_distance(), config.max_separation);
    if excess(lo)? <= 0.0 {
        return Err(Error::NoRoot(format!(
            "attraction at contact is below the robot weight {weight:.3e} N"
        )));
    }
    if excess(hi)? > 0.0 {
        return Err(Error::NoRoot(format!(
            "attraction still exceeds the robot weight at {} m",
            config.max_separation
        )));
    }
    // Run to float resolution; the force slope makes 1e-9 m far too coarse
    // for a sub-piconewton residual.
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if excess(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(if excess(lo)?.abs() <= excess(hi)?.abs() { lo } else { hi })
}

/// Result of one following step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FollowStep {
    pub position: [f64; 2],
    pub force: [f64; 2],
    pub blocked: bool,
}

/// Overdamped step of a robot lying in the vessel plane (z = 0) under a
/// driver held `driver_height` above `magnet`, moment pointing down. The
/// robot moment aligns with the local field, so `F = |M|·∇|B|`. `free` is
/// the collision test for the proposed move, in metres.
pub fn follow_step(
    robot: [f64; 2],
    magnet: [f64; 2],
    config: &MagnetConfig,
    dt: f64,
    free: impl Fn([f64; 2], [f64; 2]) -> bool,
) -> Result<FollowStep> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidInput("dt must be positive".into()));
    }
    let driver = Dipole::new(
        Vector3::new(0.0, 0.0, -config.driver_moment()),
        Vector3::new(magnet[0], magnet[1], config.driver_height),
    )?;
    let r = Vector3::new(robot[0], robot[1], 0.0);
    let separation = (r - driver.position).norm();
    if separation < config.safety_floor {
        return Err(Error::Adsorption {
            separation,
            floor: config.safety_floor,
        });
    }
    let b = driver.field(&r)?;
    let bn = b.norm();
    let m = if bn > 0.0 { b * (config.robot_moment() / bn) } else { Vector3::zeros() };
    let f = dipole_force(&m, &driver, &r)?;
    let proposed = [robot[0] + f.x / config.drag * dt, robot[1] + f.y / config.drag * dt];
    let blocked = !free(robot, proposed);
    Ok(FollowStep {
        position: if blocked { robot } else { proposed },
        force: [f.x, f.y],
        blocked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
        (a - b).norm() / a.norm().max(b.norm())
    }

    fn fd_force(m: &Vector3<f64>, d: &Dipole, r: &Vector3<f64>, h: f64) -> Vector3<f64> {
        let mut f = Vector3::zeros();
        for j in 0..3 {
            let mut e = Vector3::zeros();
            e[j] = h;
            let db = (d.field(&(r + e)).unwrap() - d.field(&(r - e)).unwrap()) / (2.0 * h);
            f += db * m[j];
        }
        f
    }

    #[test]
    fn zero_moment_has_zero_field() {
        let d = Dipole::new(Vector3::zeros(), Vector3::new(1.0, 2.0, 3.0)).unwrap();
        assert_eq!(d.field(&Vector3::new(0.3, 0.0, 0.0)).unwrap(), Vector3::zeros());
    }

    #[test]
    fn on_axis_field_closed_form() {
        let m = 2.5e-3;
        let d = Dipole::new(Vector3::new(0.0, 0.0, m), Vector3::zeros()).unwrap();
        for z in [1e-3, 5e-3, 0.02] {
            let b = d.field(&Vector3::new(0.0, 0.0, z)).unwrap();
            let expect = 2e-7 * m / z.powi(3);
            assert!((b.z - expect).abs() < 1e-12 * expect);
            assert!(b.x.abs() < 1e-18 && b.y.abs() < 1e-18);
            let b2 = d.field(&Vector3::new(0.0, 0.0, 2.0 * z)).unwrap();
            assert!((b2.norm() / b.norm() - 0.125).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluation_at_dipole_fails() {
        let d = Dipole::new(Vector3::new(0.0, 0.0, 1.0), Vector3::new(1.0, 1.0, 1.0)).unwrap();
        assert!(d.field(&Vector3::new(1.0, 1.0, 1.0)).is_err());
        assert!(d.jacobian(&Vector3::new(1.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn force_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let mut v = || Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let d = Dipole::new(v() * 1e-3, v() * 1e-3).unwrap();
            let m = v() * 1e-3;
            let mut dir = v();
            dir /= dir.norm();
            let r = d.position + dir * (2e-3 + 8e-3 * rng.random::<f64>());
            let f = dipole_force(&m, &d, &r).unwrap();
            let e = rel_err(&f, &fd_force(&m, &d, &r, 1e-7));
            assert!(e < 1e-6, "rel err {e}");
        }
    }

    #[test]
    fn zero_robot_moment_or_uniform_field_gives_no_force() {
        let d = Dipole::new(Vector3::new(0.0, 0.0, 1e-3), Vector3::zeros()).unwrap();
        let r = Vector3::new(3e-3, 0.0, 2e-3);
        assert_eq!(dipole_force(&Vector3::zeros(), &d, &r).unwrap(), Vector3::zeros());
        let u = UniformField(Vector3::new(0.0, 0.1, 0.0));
        assert_eq!(dipole_force(&Vector3::new(1.0, 2.0, 3.0), &u, &r).unwrap(), Vector3::zeros());
    }

    #[test]
    fn axial_force_is_attractive_inverse_fourth() {
        let c = MagnetConfig::default();
        let ds: Vec<f64> = (0..=20).map(|k| 1e-3 * 10f64.powf(k as f64 / 10.0)).collect();
        let pts: Vec<(f64, f64)> = ds
            .iter()
            .map(|&d| {
                let f = axial_force(&c, d).unwrap();
                assert!(f < 0.0);
                (d.ln(), f.abs().ln())
            })
            .collect();
        let n = pts.len() as f64;
        let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        assert!((sxy / sxx + 4.0).abs() < 0.01);
    }

    #[test]
    fn driver_moment_reproduces_surface_field() {
        let c = MagnetConfig::default();
        let d = Dipole::new(Vector3::new(0.0, 0.0, c.driver_moment()), Vector3::zeros()).unwrap();
        let b = d.field(&Vector3::new(0.0, 0.0, c.driver_diameter / 2.0)).unwrap();
        assert!((b.z - c.surface_field).abs() < 1e-12);
    }

    #[test]
    fn critical_distance_balances_weight() {
        let c = MagnetConfig::default();
        let d = critical_distance(&c).unwrap();
        let residual = (axial_force(&c, d).unwrap().abs() - c.robot_weight()).abs();
        assert!(residual < 1e-12, "{residual}");
        // Closed form for co-aligned axial dipoles: |F| = 3μ₀mM/(2πd⁴).
        let closed = (3.0 * MU0 * c.driver_moment() * c.robot_moment() / (2.0 * std::f64::consts::PI * c.robot_weight())).powf(0.25);
        assert!((d - closed).abs() < 1e-9);
        // Dense scan for the sign change.
        let step = 1e-7;
        let mut x = c.contact_distance();
        while axial_force(&c, x + step).unwrap().abs() > c.robot_weight() {
            x += step;
        }
        assert!(d >= x && d <= x + step + 1e-15);
    }

    #[test]
    fn heavier_robot_has_smaller_critical_distance() {
        let c = MagnetConfig::default();
        let heavy = MagnetConfig { robot_density: 2.0 * c.robot_density, ..c };
        assert!(critical_distance(&heavy).unwrap() < critical_distance(&c).unwrap());
    }

    #[test]
    fn weightless_robot_exceeds_bracket() {
        let c = MagnetConfig { robot_density: 1e-12, ..MagnetConfig::default() };
        assert!(matches!(critical_distance(&c), Err(Error::NoRoot(_))));
    }

    #[test]
    fn invalid_config_rejected() {
        let c = MagnetConfig { drag: 0.0, ..MagnetConfig::default() };
        assert!(c.validate().is_err());
        let c: MagnetConfig = toml::from_str("surface_field = 0.2").unwrap();
        assert_eq!(c.surface_field, 0.2);
        assert_eq!(c.robot_diameter, 1e-3);
    }

    #[test]
    fn robot_beneath_magnet_stays_put() {
        let c = MagnetConfig::default();
        let s = follow_step([0.0, 0.0], [0.0, 0.0], &c, 1.0 / 60.0, |_, _| true).unwrap();
        assert_eq!(s.position, [0.0, 0.0]);
        assert!(!s.blocked);
    }

    #[test]
    fn robot_approaches_stationary_magnet() {
        let c = MagnetConfig::default();
        let mut p = [6e-3, 0.0];
        let mut d = p[0];
        for _ in 0..30 {
            p = follow_step(p, [0.0, 0.0], &c, 1.0 / 60.0, |_, _| true).unwrap().position;
            assert!(p[0].abs() < d);
            assert!(p[1].abs() < 1e-15);
            d = p[0].abs();
        }
    }

    #[test]
    fn blocked_step_keeps_position() {
        let c = MagnetConfig::default();
        let s = follow_step([3e-3, 0.0], [0.0, 0.0], &c, 1.0 / 60.0, |_, _| false).unwrap();
        assert!(s.blocked);
        assert_eq!(s.position, [3e-3, 0.0]);
    }

    #[test]
    fn too_close_is_adsorption_fault() {
        let c = MagnetConfig { driver_height: 0.5e-3, ..MagnetConfig::default() };
        assert!(matches!(
            follow_step([0.0, 0.0], [0.0, 0.0], &c, 0.01, |_, _| true),
            Err(Error::Adsorption { .. })
        ));
    }

    #[test]
    fn following_tracks_fine_step_reference() {
        let c = MagnetConfig::default();
        let dt = 1.0 / 60.0;
        let speed = 2e-3;
        let magnet = |t: f64| [speed * t, 0.0];
        let mut coarse = [0.0, 0.0];
        let mut fine = [0.0, 0.0];
        let mut worst: f64 = 0.0;
        for k in 0..100 {
            let t = k as f64 * dt;
            coarse = follow_step(coarse, magnet(t), &c, dt, |_, _| true).unwrap().position;
            for j in 0..100 {
                let tj = t + j as f64 * dt / 100.0;
                fine = follow_step(fine, magnet(tj), &c, dt / 100.0, |_, _| true).unwrap().position;
            }
            worst = worst.max((coarse[0] - fine[0]).hypot(coarse[1] - fine[1]));
        }
        // Against the distance the magnet travelled.
        assert!(worst < 0.1 * speed * 100.0 * dt, "{worst}");
        assert!(fine[0] > 0.5 * magnet(100.0 * dt)[0]);
    }
}
