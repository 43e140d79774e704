//! Magnetostatic forward model of the sensing skin.
//!
//! The magnetized film is a grid of point dipoles sitting above a plane of
//! eight three-axis Hall sensors. Deformations push dipoles toward the
//! sensors and tilt their moments along the local surface normal; the
//! sensors report the superposed dipole field.
//!
//! Coordinates: the sensor plane is `z = 0`, the film mid-plane sits at
//! `z = sensor_plane_gap` and `+z` points away from the circuit board.
//! Positions are millimetres and fields are microtesla at the public
//! surface; everything is SI internally.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Point2 = Vector2<f64>;

/// µ0 / 4π in T·m/A.
pub const MU0_OVER_4PI: f64 = 1e-7;

pub const SENSOR_COUNT: usize = 8;
pub const MOTOR_COUNT: usize = 8;
pub const AXES: usize = 3;
/// Scalars per full array reading (8 sensors × 3 axes).
pub const CHANNELS: usize = SENSOR_COUNT * AXES;

const MM: f64 = 1e-3;
const TESLA_TO_MICROTESLA: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkinError {
    #[error("field evaluated at the dipole location (zero displacement)")]
    Singularity,
    #[error("invalid deformation: {0}")]
    InvalidDeformation(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("film footprint {film:?} does not match geometry footprint {geometry:?}")]
    FootprintMismatch { film: (f64, f64), geometry: (f64, f64) },
    #[error("magnetization calibration failed: {0}")]
    Calibration(String),
}

/// Field of a point dipole.
///
/// `moment` in A·m², `displacement` (from dipole to probe) in metres, result
/// in tesla.
pub fn dipole_field(moment: Vec3, displacement: Vec3) -> Result<Vec3, SkinError> {
    let r2 = displacement.norm_squared();
    if r2 == 0.0 || !r2.is_finite() {
        return Err(SkinError::Singularity);
    }
    let r = r2.sqrt();
    let r_hat = displacement / r;
    let m_dot = moment.dot(&r_hat);
    Ok((r_hat * (3.0 * m_dot) - moment) * (MU0_OVER_4PI / (r2 * r)))
}

/// Physical layout of the skin: a 4×4 grid whose cells alternate between
/// Hall sensors and vibration motors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkinGeometry {
    pub width: f64,
    pub height: f64,
    pub sensor_positions: Vec<Point2>,
    pub motor_positions: Vec<Point2>,
    pub film_thickness: f64,
    pub elastomer_thickness: f64,
    /// Thickness reserved for the flexible circuit board and components.
    pub circuit_allowance: f64,
    pub sensor_plane_gap: f64,
}

impl Default for SkinGeometry {
    fn default() -> Self {
        Self::staggered(40.0, 65.0, 1.5, 4.5)
    }
}

impl SkinGeometry {
    /// Checkerboard layout: sensors on cells with even `col + row`, motors on
    /// odd cells. Both lists are ordered row-major (row first, then column).
    pub fn staggered(width: f64, height: f64, film_thickness: f64, elastomer_thickness: f64) -> Self {
        let cell_w = width / 4.0;
        let cell_h = height / 4.0;
        let mut sensors = Vec::with_capacity(SENSOR_COUNT);
        let mut motors = Vec::with_capacity(MOTOR_COUNT);
        for row in 0..4 {
            for col in 0..4 {
                let p = Point2::new((col as f64 + 0.5) * cell_w, (row as f64 + 0.5) * cell_h);
                if (row + col) % 2 == 0 {
                    sensors.push(p);
                } else {
                    motors.push(p);
                }
            }
        }
        Self {
            width,
            height,
            sensor_positions: sensors,
            motor_positions: motors,
            film_thickness,
            elastomer_thickness,
            circuit_allowance: 1.0,
            sensor_plane_gap: elastomer_thickness + film_thickness / 2.0,
        }
    }

    pub fn center(&self) -> Point2 {
        Point2::new(self.width / 2.0, self.height / 2.0)
    }

    pub fn total_thickness(&self) -> f64 {
        self.film_thickness + self.elastomer_thickness + self.circuit_allowance
    }

    /// Index of the sensor paired with `sensor` under a half-turn about the
    /// footprint centre.
    pub fn point_mirror_sensor(&self, sensor: usize) -> usize {
        SENSOR_COUNT - 1 - sensor
    }

    pub fn nearest_sensor(&self, p: Point2) -> usize {
        nearest(&self.sensor_positions, p)
    }

    pub fn validate(&self) -> Result<(), SkinError> {
        let bad = |m: String| Err(SkinError::InvalidGeometry(m));
        if self.sensor_positions.len() != SENSOR_COUNT || self.motor_positions.len() != MOTOR_COUNT {
            return bad(format!(
                "expected {SENSOR_COUNT} sensors and {MOTOR_COUNT} motors, got {} and {}",
                self.sensor_positions.len(),
                self.motor_positions.len()
            ));
        }
        if !(self.width > 0.0 && self.height > 0.0) {
            return bad("footprint must be positive".into());
        }
        if self.total_thickness() > 7.0 + 1e-9 {
            return bad(format!("stack is {} mm thick, limit is 7 mm", self.total_thickness()));
        }
        if self.sensor_plane_gap <= 0.0 {
            return bad("sensor plane gap must be positive".into());
        }
        let cell_w = self.width / 4.0;
        let cell_h = self.height / 4.0;
        let mut occupied = [[None::<bool>; 4]; 4];
        let all = self
            .sensor_positions
            .iter()
            .map(|p| (p, true))
            .chain(self.motor_positions.iter().map(|p| (p, false)));
        for (p, is_sensor) in all {
            if !(p.x > 0.0 && p.x < self.width && p.y > 0.0 && p.y < self.height) {
                return bad(format!("position ({}, {}) outside footprint", p.x, p.y));
            }
            let col = (p.x / cell_w) as usize;
            let row = (p.y / cell_h) as usize;
            if occupied[row][col].is_some() {
                return bad(format!("cell ({col}, {row}) used twice"));
            }
            occupied[row][col] = Some(is_sensor);
        }
        for (row, cells) in occupied.iter().enumerate() {
            for (col, cell) in cells.iter().enumerate() {
                if cell.is_none() {
                    return bad(format!("cell ({col}, {row}) empty"));
                }
            }
        }
        // checkerboard alternation: every pair of edge-adjacent cells differs
        for row in 0..4 {
            for col in 0..4 {
                if col + 1 < 4 && occupied[row][col] == occupied[row][col + 1] {
                    return bad("sensor/motor cells do not alternate".into());
                }
                if row + 1 < 4 && occupied[row][col] == occupied[row + 1][col] {
                    return bad("sensor/motor cells do not alternate".into());
                }
            }
        }
        Ok(())
    }
}

fn nearest(points: &[Point2], p: Point2) -> usize {
    points
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - p).norm_squared().total_cmp(&(b.1 - p).norm_squared()))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// The magnetized film as a grid of point dipoles.
#[derive(Debug, Clone, PartialEq)]
pub struct MagneticFilm {
    pub grid_nx: usize,
    pub grid_ny: usize,
    pub footprint: (f64, f64),
    /// Rest positions in mm, row-major over (iy, ix).
    pub rest_positions: Vec<Vec3>,
    /// Current (possibly deformed) positions in mm.
    pub positions: Vec<Vec3>,
    /// Moments in A·m².
    pub moments: Vec<Vec3>,
    pub surface_field_target_mt: f64,
    /// Largest admissible indentation (the elastomer thickness), mm.
    pub max_depth: f64,
}

pub const DEFAULT_GRID: (usize, usize) = (20, 26);
pub const DEFAULT_SURFACE_FIELD_MT: f64 = 2.0;

impl MagneticFilm {
    /// Film with the default 20×26 grid magnetized to 2 mT.
    pub fn new(geom: &SkinGeometry) -> Result<Self, SkinError> {
        Self::uniform(geom, DEFAULT_GRID.0, DEFAULT_GRID.1, DEFAULT_SURFACE_FIELD_MT)
    }

    /// Uniformly magnetized film (moments along +z) whose field at the
    /// canonical surface probe equals `surface_field_mt`.
    pub fn uniform(
        geom: &SkinGeometry,
        nx: usize,
        ny: usize,
        surface_field_mt: f64,
    ) -> Result<Self, SkinError> {
        if nx == 0 || ny == 0 {
            return Err(SkinError::InvalidGeometry("dipole grid must be non-empty".into()));
        }
        let pitch_x = geom.width / nx as f64;
        let pitch_y = geom.height / ny as f64;
        let mut rest = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                rest.push(Vec3::new(
                    (ix as f64 + 0.5) * pitch_x,
                    (iy as f64 + 0.5) * pitch_y,
                    geom.sensor_plane_gap,
                ));
            }
        }
        let mut film = Self {
            grid_nx: nx,
            grid_ny: ny,
            footprint: (geom.width, geom.height),
            positions: rest.clone(),
            rest_positions: rest,
            moments: vec![Vec3::z(); nx * ny],
            surface_field_target_mt: surface_field_mt,
            max_depth: geom.elastomer_thickness,
        };
        let probe = film.surface_probe(geom);
        let unit = film.field_at(probe)?.z;
        if !(unit > 0.0) {
            return Err(SkinError::Calibration(format!(
                "unit-moment probe field {unit} T is not positive"
            )));
        }
        let scale = surface_field_mt * 1e-3 / unit;
        for m in &mut film.moments {
            *m *= scale;
        }
        Ok(film)
    }

    /// Probe point on the film's top surface directly above the dipole
    /// nearest the footprint centre.
    pub fn surface_probe(&self, geom: &SkinGeometry) -> Vec3 {
        let c = geom.center();
        let idx = self
            .rest_positions
            .iter()
            .enumerate()
            .min_by(|a, b| {
                let da = (a.1.x - c.x).powi(2) + (a.1.y - c.y).powi(2);
                let db = (b.1.x - c.x).powi(2) + (b.1.y - c.y).powi(2);
                da.total_cmp(&db)
            })
            .map(|(i, _)| i)
            .unwrap_or(0);
        let p = self.rest_positions[idx];
        Vec3::new(p.x, p.y, p.z + geom.film_thickness / 2.0)
    }

    /// Superposed field (tesla) at `probe` (mm).
    pub fn field_at(&self, probe: Vec3) -> Result<Vec3, SkinError> {
        let mut b = Vec3::zeros();
        for (pos, m) in self.positions.iter().zip(&self.moments) {
            b += dipole_field(*m, (probe - pos) * MM)?;
        }
        Ok(b)
    }

    pub fn moment_magnitude(&self) -> f64 {
        self.moments.first().map(|m| m.norm()).unwrap_or(0.0)
    }

    /// Copy of the film with every moment multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for m in &mut out.moments {
            *m *= factor;
        }
        out.surface_field_target_mt *= factor;
        out
    }
}

/// Indentation applied to the film surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Deformation {
    Press { center: Point2, depth: f64, radius: f64 },
    Slide { center: Point2, depth: f64, radius: f64, offset: Point2 },
    #[default]
    None,
}

impl Deformation {
    pub fn press(x: f64, y: f64, depth: f64, radius: f64) -> Self {
        Self::Press { center: Point2::new(x, y), depth, radius }
    }

    /// Effective bump centre, depth and radius, or `None` for no contact.
    fn bump(&self) -> Option<(Point2, f64, f64)> {
        match *self {
            Self::Press { center, depth, radius } => Some((center, depth, radius)),
            Self::Slide { center, depth, radius, offset } => Some((center + offset, depth, radius)),
            Self::None => None,
        }
    }

    pub fn validate(&self, max_depth: f64) -> Result<(), SkinError> {
        let Some((center, depth, radius)) = self.bump() else {
            return Ok(());
        };
        let err = |m: String| Err(SkinError::InvalidDeformation(m));
        if !center.iter().all(|v| v.is_finite()) {
            return err("non-finite centre".into());
        }
        if !(depth >= 0.0) {
            return err(format!("depth {depth} is negative"));
        }
        if depth > max_depth + 1e-12 {
            return err(format!("depth {depth} mm exceeds elastomer thickness {max_depth} mm"));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return err(format!("radius {radius} must be positive"));
        }
        Ok(())
    }

    /// Surface displacement and its gradient at `(x, y)`.
    fn profile(&self, x: f64, y: f64) -> (f64, f64, f64) {
        match self.bump() {
            None => (0.0, 0.0, 0.0),
            Some((c, depth, radius)) => {
                let dx = x - c.x;
                let dy = y - c.y;
                let s2 = radius * radius;
                let w = depth * (-(dx * dx + dy * dy) / (2.0 * s2)).exp();
                (w, -w * dx / s2, -w * dy / s2)
            }
        }
    }
}

/// Apply a single deformation.
pub fn deform(film: &MagneticFilm, d: &Deformation) -> Result<MagneticFilm, SkinError> {
    deform_all(film, std::slice::from_ref(d))
}

/// Apply several simultaneous contacts. The surface profile is the sum of
/// the individual bumps, capped at the elastomer thickness.
pub fn deform_all(film: &MagneticFilm, contacts: &[Deformation]) -> Result<MagneticFilm, SkinError> {
    for d in contacts {
        d.validate(film.max_depth)?;
    }
    let mut out = film.clone();
    if contacts.iter().all(|d| matches!(d, Deformation::None)) {
        return Ok(out);
    }
    for (i, rest) in film.rest_positions.iter().enumerate() {
        let (mut w, mut gx, mut gy) = (0.0, 0.0, 0.0);
        for d in contacts {
            let (wi, gxi, gyi) = d.profile(rest.x, rest.y);
            w += wi;
            gx += gxi;
            gy += gyi;
        }
        if w > film.max_depth {
            // bottomed out: flat plateau
            w = film.max_depth;
            gx = 0.0;
            gy = 0.0;
        }
        out.positions[i] = Vec3::new(rest.x, rest.y, rest.z - w);
        let magnitude = film.moments[i].norm();
        // surface z = z0 - w  =>  normal ∝ (∂w/∂x, ∂w/∂y, 1)
        out.moments[i] = Vec3::new(gx, gy, 1.0).normalize() * magnitude;
    }
    Ok(out)
}

/// Flux density at the eight sensors, µT, sensor-major / axis-minor.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldReading(pub [Vec3; SENSOR_COUNT]);

impl FieldReading {
    pub fn zero() -> Self {
        Self([Vec3::zeros(); SENSOR_COUNT])
    }

    pub fn sensor(&self, i: usize) -> Vec3 {
        self.0[i]
    }

    /// Flattened `(s0x, s0y, s0z, s1x, …)` layout.
    pub fn to_channels(&self) -> [f64; CHANNELS] {
        let mut out = [0.0; CHANNELS];
        for (s, v) in self.0.iter().enumerate() {
            out[s * AXES..s * AXES + AXES].copy_from_slice(v.as_slice());
        }
        out
    }

    pub fn from_channels(ch: &[f64; CHANNELS]) -> Self {
        let mut out = Self::zero();
        for s in 0..SENSOR_COUNT {
            out.0[s] = Vec3::new(ch[s * AXES], ch[s * AXES + 1], ch[s * AXES + 2]);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn max_abs_component(&self, sensor: usize) -> f64 {
        self.0[sensor].amax()
    }
}

impl std::ops::Add for FieldReading {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a += b;
        }
        self
    }
}

impl std::ops::Sub for FieldReading {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a -= b;
        }
        self
    }
}

impl std::ops::Mul<f64> for FieldReading {
    type Output = Self;
    fn mul(mut self, k: f64) -> Self {
        for a in &mut self.0 {
            *a *= k;
        }
        self
    }
}

/// Field seen by each Hall sensor, µT.
pub fn sensor_field(film: &MagneticFilm, geom: &SkinGeometry) -> Result<FieldReading, SkinError> {
    let (fw, fh) = film.footprint;
    if (fw - geom.width).abs() > 1e-9 || (fh - geom.height).abs() > 1e-9 {
        return Err(SkinError::FootprintMismatch { film: film.footprint, geometry: (geom.width, geom.height) });
    }
    let mut out = FieldReading::zero();
    for (slot, p) in out.0.iter_mut().zip(&geom.sensor_positions) {
        *slot = film.field_at(Vec3::new(p.x, p.y, 0.0))? * TESLA_TO_MICROTESLA;
    }
    Ok(out)
}

/// Default elastomer stiffness, N/mm (4 N ≈ 3 mm).
pub const DEFAULT_STIFFNESS: f64 = 1.33;
/// Contact radius of the reference fingertip press, mm.
pub const REFERENCE_PRESS_RADIUS: f64 = 4.0;

/// Kinematic force→depth map, saturating at the elastomer thickness.
pub fn force_to_depth(force_n: f64, stiffness: f64, geom: &SkinGeometry) -> f64 {
    (force_n.max(0.0) / stiffness).min(geom.elastomer_thickness)
}

/// Each vibration motor modeled as a small dipole just above its cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotorModel {
    /// Peak moment of a motor at full amplitude, A·m².
    pub moment: f64,
    /// Height of the motor's magnetic centre above the sensor plane, mm.
    pub height: f64,
    /// Rate of the oscillating stray field, Hz.
    pub ripple_hz: f64,
}

/// Calibrated so a full-amplitude array perturbs sensor 2 by about a fifth
/// of a 4 N press at 2 mT magnetization.
pub const DEFAULT_MOTOR_MOMENT: f64 = 1.44e-5;

impl Default for MotorModel {
    fn default() -> Self {
        Self { moment: DEFAULT_MOTOR_MOMENT, height: 1.5, ripple_hz: 23.0 }
    }
}

/// Peak additive field from the motors (µT), scaled by per-motor amplitude.
pub fn motor_interference(
    amplitudes: &[f64; MOTOR_COUNT],
    geom: &SkinGeometry,
    motor: &MotorModel,
) -> Result<FieldReading, SkinError> {
    if let Some(a) = amplitudes.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(SkinError::InvalidDeformation(format!("motor amplitude {a} outside [0, 1]")));
    }
    let mut out = FieldReading::zero();
    for (slot, s) in out.0.iter_mut().zip(&geom.sensor_positions) {
        let probe = Vec3::new(s.x, s.y, 0.0);
        for (a, m) in amplitudes.iter().zip(&geom.motor_positions) {
            if *a == 0.0 {
                continue;
            }
            let src = Vec3::new(m.x, m.y, motor.height);
            *slot += dipole_field(Vec3::z() * (motor.moment * a), (probe - src) * MM)? * TESLA_TO_MICROTESLA;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn dipole_closed_forms() {
        let b = dipole_field(Vec3::z(), Vec3::new(0.0, 0.0, 0.1)).unwrap();
        assert_relative_eq!(b.z, 2.0e-4, max_relative = 1e-12);
        assert_eq!((b.x, b.y), (0.0, 0.0));
        let b = dipole_field(Vec3::z(), Vec3::new(0.1, 0.0, 0.0)).unwrap();
        assert_relative_eq!(b.z, -1.0e-4, max_relative = 1e-12);
        assert_eq!(dipole_field(Vec3::zeros(), Vec3::new(0.3, -0.2, 1.0)).unwrap(), Vec3::zeros());
        assert_eq!(dipole_field(Vec3::z(), Vec3::zeros()), Err(SkinError::Singularity));
    }

    #[test]
    fn default_geometry_is_valid_checkerboard() {
        let g = SkinGeometry::default();
        g.validate().unwrap();
        assert_eq!(g.total_thickness(), 7.0);
        assert_eq!(g.sensor_positions[0], Point2::new(5.0, 8.125));
        assert_eq!(g.sensor_positions[3], Point2::new(35.0, 24.375));
        assert_eq!(g.motor_positions[0], Point2::new(15.0, 8.125));
        for i in 0..SENSOR_COUNT {
            let j = g.point_mirror_sensor(i);
            let c = g.center() * 2.0;
            assert_relative_eq!((c - g.sensor_positions[i] - g.sensor_positions[j]).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn geometry_rejects_broken_layouts() {
        let mut g = SkinGeometry::default();
        g.sensor_positions.pop();
        assert!(g.validate().is_err());
        let mut g = SkinGeometry::default();
        g.sensor_positions.swap(0, 0);
        let m = g.motor_positions[0];
        g.motor_positions[0] = g.sensor_positions[1];
        g.sensor_positions[1] = m;
        assert!(g.validate().is_err(), "non-alternating layout must fail");
        let mut g = SkinGeometry::default();
        g.sensor_positions[0].x = 40.0;
        assert!(g.validate().is_err());
        let mut g = SkinGeometry::default();
        g.elastomer_thickness = 6.0;
        assert!(g.validate().is_err());
    }

    #[test]
    fn film_calibrated_to_surface_target() {
        let g = SkinGeometry::default();
        let film = MagneticFilm::new(&g).unwrap();
        let b = film.field_at(film.surface_probe(&g)).unwrap();
        assert_relative_eq!(b.z * 1e3, 2.0, max_relative = 1e-9);
        let m0 = film.moments[0];
        assert!(film.moments.iter().all(|m| *m == m0));
        assert_eq!((m0.x, m0.y), (0.0, 0.0));
        assert!(film.rest_positions.iter().all(|p| p.z == g.sensor_plane_gap));
    }

    #[test]
    fn deform_none_and_peak() {
        let g = SkinGeometry::default();
        let film = MagneticFilm::new(&g).unwrap();
        assert_eq!(deform(&film, &Deformation::None).unwrap(), film);
        let target = film.rest_positions[123];
        let d = Deformation::press(target.x, target.y, 2.0, 3.0);
        let bent = deform(&film, &d).unwrap();
        assert_eq!(bent.positions[123] - film.rest_positions[123], Vec3::new(0.0, 0.0, -2.0));
        assert_eq!(bent.moments[123], film.moments[123]);
        for (a, b) in bent.moments.iter().zip(&film.moments) {
            assert_relative_eq!(a.norm(), b.norm(), max_relative = 1e-12);
        }
    }

    #[test]
    fn deformation_preconditions() {
        let g = SkinGeometry::default();
        let film = MagneticFilm::new(&g).unwrap();
        for d in [
            Deformation::press(10.0, 10.0, -0.1, 2.0),
            Deformation::press(10.0, 10.0, 4.6, 2.0),
            Deformation::press(10.0, 10.0, 1.0, 0.0),
        ] {
            assert!(matches!(deform(&film, &d), Err(SkinError::InvalidDeformation(_))), "{d:?}");
        }
    }

    #[test]
    fn slide_is_press_at_offset_center() {
        let g = SkinGeometry::default();
        let film = MagneticFilm::new(&g).unwrap();
        let slide = Deformation::Slide {
            center: Point2::new(10.0, 20.0),
            depth: 1.5,
            radius: 3.0,
            offset: Point2::new(4.0, -2.0),
        };
        let press = Deformation::press(14.0, 18.0, 1.5, 3.0);
        assert_eq!(deform(&film, &slide).unwrap(), deform(&film, &press).unwrap());
    }

    #[test]
    fn undeformed_symmetric_pairs_and_linearity() {
        let g = SkinGeometry::default();
        let film = MagneticFilm::new(&g).unwrap();
        let r = sensor_field(&film, &g).unwrap();
        for i in 0..4 {
            let j = g.point_mirror_sensor(i);
            assert_relative_eq!(r.sensor(i).norm(), r.sensor(j).norm(), max_relative = 1e-9);
        }
        let r2 = sensor_field(&film.scaled(2.0), &g).unwrap();
        for (a, b) in r2.to_channels().iter().zip(r.to_channels()) {
            assert_relative_eq!(*a, 2.0 * b, max_relative = 1e-12, epsilon = 1e-15);
        }
    }

    #[test]
    fn sensor_at_dipole_is_singular() {
        let g = SkinGeometry::default();
        let mut film = MagneticFilm::new(&g).unwrap();
        let s = g.sensor_positions[0];
        film.positions[0] = Vec3::new(s.x, s.y, 0.0);
        assert_eq!(sensor_field(&film, &g), Err(SkinError::Singularity));
    }

    #[test]
    fn footprint_mismatch() {
        let g = SkinGeometry::default();
        let film = MagneticFilm::new(&g).unwrap();
        let other = SkinGeometry::staggered(30.0, 65.0, 1.5, 4.5);
        assert!(matches!(sensor_field(&film, &other), Err(SkinError::FootprintMismatch { .. })));
    }

    #[test]
    fn motor_interference_basics() {
        let g = SkinGeometry::default();
        let m = MotorModel::default();
        assert_eq!(motor_interference(&[0.0; 8], &g, &m).unwrap(), FieldReading::zero());
        let full = motor_interference(&[1.0; 8], &g, &m).unwrap();
        let half = motor_interference(&[0.5; 8], &g, &m).unwrap();
        for (a, b) in full.to_channels().iter().zip(half.to_channels()) {
            assert_relative_eq!(*a, 2.0 * b, max_relative = 1e-12);
        }
        assert!(motor_interference(&[1.5; 8], &g, &m).is_err());
    }

    #[test]
    fn force_to_depth_saturates() {
        let g = SkinGeometry::default();
        assert_relative_eq!(force_to_depth(4.0, DEFAULT_STIFFNESS, &g), 4.0 / 1.33);
        assert_eq!(force_to_depth(100.0, DEFAULT_STIFFNESS, &g), 4.5);
        assert_eq!(force_to_depth(-1.0, DEFAULT_STIFFNESS, &g), 0.0);
    }
}
