//! Gestures synthesized through the skin forward model.

use eskin_core::sensing::{self, NoiseModel, SensorSample};
use eskin_core::skin::{self, Deformation, MagneticFilm, SkinGeometry};
use eskin_protocol::gesture::{classify_gesture, Direction, Gesture, GestureConfig};

const DT_MS: f64 = 5.0;
/// About 2.7 N at the default stiffness.
const DEPTH: f64 = 2.0;

/// Zeroed, noisy stream for a finger whose position and depth follow
/// `path(t)`; `None` means not touching.
fn synthesize(duration_ms: f64, seed: u64, path: impl Fn(f64) -> Option<(f64, f64, f64)>) -> Vec<SensorSample> {
    let geom = SkinGeometry::default();
    let film = MagneticFilm::new(&geom).unwrap();
    let base = skin::sensor_field(&film, &geom).unwrap();
    let noise = NoiseModel { rng_seed: seed, ..Default::default() };
    let steps = (duration_ms / DT_MS) as usize;
    let raw: Vec<SensorSample> = (0..steps)
        .map(|k| {
            let t = k as f64 * DT_MS;
            let reading = match path(t) {
                Some((x, y, depth)) => {
                    let f = skin::deform(&film, &Deformation::press(x, y, depth, 4.0)).unwrap();
                    skin::sensor_field(&f, &geom).unwrap()
                }
                None => base,
            };
            sensing::apply_noise(&SensorSample::new(t, reading.to_channels()), &noise, k as u64)
        })
        .collect();
    let calib = sensing::calibrate_zero(&raw, 20).unwrap();
    raw.iter().map(|s| calib.zero(s)).collect()
}

fn classify(stream: &[SensorSample]) -> Gesture {
    classify_gesture(stream, &GestureConfig::default(), &SkinGeometry::default())
}

#[test]
fn quiescent_stream() {
    assert_eq!(classify(&synthesize(600.0, 1, |_| None)), Gesture::None);
}

#[test]
fn press_over_each_sensor() {
    let geom = SkinGeometry::default();
    for (i, p) in geom.sensor_positions.iter().enumerate() {
        let (x, y) = (p.x, p.y);
        let s = synthesize(500.0, i as u64, |t| (150.0..350.0).contains(&t).then_some((x, y, DEPTH)));
        match classify(&s) {
            Gesture::PressAt { region, strength } => {
                assert_eq!(region as usize, i);
                assert!(strength > GestureConfig::default().threshold_ut);
            }
            other => panic!("sensor {i}: {other:?}"),
        }
    }
}

#[test]
fn long_press() {
    let p = SkinGeometry::default().sensor_positions[6];
    let s = synthesize(1300.0, 2, |t| (150.0..1150.0).contains(&t).then_some((p.x, p.y, DEPTH)));
    assert_eq!(classify(&s), Gesture::LongPress { region: 6 });
}

#[test]
fn slides_in_four_directions() {
    let g = SkinGeometry::default();
    let (s2, s3, s0, s5) = (g.sensor_positions[2], g.sensor_positions[3], g.sensor_positions[0], g.sensor_positions[5]);
    let lerp = |a: (f64, f64), b: (f64, f64)| {
        move |t: f64| {
            let u = (t - 150.0) / 300.0;
            (0.0..=1.0).contains(&u).then_some((a.0 + u * (b.0 - a.0), a.1 + u * (b.1 - a.1), DEPTH))
        }
    };
    let cases = [
        ((s2.x, s2.y), (s3.x, s3.y), Direction::Xp),
        ((s3.x, s3.y), (s2.x, s2.y), Direction::Xn),
        ((s0.x, s0.y), (s5.x - 8.0, s5.y), Direction::Yp),
        ((s5.x, s5.y), (s0.x + 8.0, s0.y), Direction::Yn),
    ];
    for (k, (a, b, dir)) in cases.into_iter().enumerate() {
        let s = synthesize(600.0, 10 + k as u64, lerp(a, b));
        assert_eq!(classify(&s), Gesture::Slide { direction: dir }, "case {k}");
    }
}

#[test]
fn noise_alone_never_triggers() {
    for seed in 100..130 {
        assert_eq!(classify(&synthesize(1000.0, seed, |_| None)), Gesture::None, "seed {seed}");
    }
}
