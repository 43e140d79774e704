//! Forward model against an independent brute-force dipole sum.

use eskin_core::skin::{self, Deformation, MagneticFilm, SkinGeometry, Vec3};

/// Point dipole field written out component-wise, SI units.
fn dipole(m: [f64; 3], r: [f64; 3]) -> [f64; 3] {
    let r2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
    let rn = r2.sqrt();
    let mdotr = m[0] * r[0] + m[1] * r[1] + m[2] * r[2];
    let k = 1e-7 / (rn * r2);
    std::array::from_fn(|i| k * (3.0 * mdotr * r[i] / r2 - m[i]))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn closed_form_axial_and_equatorial() {
    for (m, d) in [(1.0, 0.1), (3.5e-3, 0.02), (2e-6, 5e-4)] {
        let axial = skin::dipole_field(Vec3::new(0.0, 0.0, m), Vec3::new(0.0, 0.0, d)).unwrap();
        let expect = 4e-7 * std::f64::consts::PI * m / (2.0 * std::f64::consts::PI * d.powi(3));
        assert!(rel(axial.z, expect) <= 1e-9);
        assert_eq!((axial.x, axial.y), (0.0, 0.0));
        let eq = skin::dipole_field(Vec3::new(0.0, 0.0, m), Vec3::new(d, 0.0, 0.0)).unwrap();
        assert!(rel(eq.z, -expect / 2.0) <= 1e-9);
    }
}

#[test]
fn sensor_field_equals_brute_force_sum() {
    let geom = SkinGeometry::default();
    let film = MagneticFilm::new(&geom).unwrap();
    let pressed = skin::deform(&film, &Deformation::press(13.0, 30.0, 2.5, 5.0)).unwrap();
    for f in [&film, &pressed] {
        let reading = skin::sensor_field(f, &geom).unwrap();
        for (i, s) in geom.sensor_positions.iter().enumerate() {
            let mut b = [0.0; 3];
            for (p, m) in f.positions.iter().zip(&f.moments) {
                let r = [(s.x - p.x) * 1e-3, (s.y - p.y) * 1e-3, (0.0 - p.z) * 1e-3];
                let d = dipole([m.x, m.y, m.z], r);
                (0..3).for_each(|k| b[k] += d[k]);
            }
            let got = reading.sensor(i);
            let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max) * 1e6;
            for k in 0..3 {
                assert!((got[k] - b[k] * 1e6).abs() <= 1e-9 * scale, "sensor {i} axis {k}");
            }
        }
    }
}

#[test]
fn superposition_of_two_films() {
    let geom = SkinGeometry::default();
    let a = MagneticFilm::new(&geom).unwrap();
    let b = a.scaled(-0.3);
    let mut both = a.clone();
    both.positions.extend(b.positions.iter().map(|p| p + Vec3::new(0.0, 0.0, 0.7)));
    both.moments.extend(b.moments.iter().copied());
    let mut shifted = b.clone();
    shifted.positions.iter_mut().for_each(|p| p.z += 0.7);
    let ra = skin::sensor_field(&a, &geom).unwrap().to_channels();
    let rb = skin::sensor_field(&shifted, &geom).unwrap().to_channels();
    let rs = skin::sensor_field(&both, &geom).unwrap().to_channels();
    for k in 0..ra.len() {
        assert!((rs[k] - ra[k] - rb[k]).abs() <= 1e-6 * ra[k].abs().max(1.0));
    }
}

#[test]
fn centred_press_is_point_symmetric() {
    let geom = SkinGeometry::default();
    let film = MagneticFilm::new(&geom).unwrap();
    let c = geom.center();
    let f = skin::deform(&film, &Deformation::press(c.x, c.y, 3.0, 6.0)).unwrap();
    let r = skin::sensor_field(&f, &geom).unwrap();
    for i in 0..8 {
        let j = geom.point_mirror_sensor(i);
        let (a, b) = (r.sensor(i), r.sensor(j));
        // 180° rotation about the centre flips x and y, keeps z
        assert!((a.x + b.x).abs() <= 1e-6 * a.norm());
        assert!((a.y + b.y).abs() <= 1e-6 * a.norm());
        assert!((a.z - b.z).abs() <= 1e-6 * a.norm());
    }
}

#[test]
fn nearer_press_moves_nearer_sensor_more() {
    let geom = SkinGeometry::default();
    let film = MagneticFilm::new(&geom).unwrap();
    let base = skin::sensor_field(&film, &geom).unwrap();
    for (a, b) in [(0, 1), (2, 3), (4, 7), (6, 1)] {
        let (pa, pb) = (geom.sensor_positions[a], geom.sensor_positions[b]);
        let x = pa.x + 0.25 * (pb.x - pa.x);
        let y = pa.y + 0.25 * (pb.y - pa.y);
        let r = skin::sensor_field(&skin::deform(&film, &Deformation::press(x, y, 3.0, 4.0)).unwrap(), &geom).unwrap();
        let d = |i: usize| (r.sensor(i) - base.sensor(i)).norm();
        assert!(d(a) > d(b), "{a} vs {b}");
    }
}
