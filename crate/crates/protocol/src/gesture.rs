//! Touch gestures on the operator skin and their stage-dependent commands.

use eskin_core::sensing::SensorSample;
use std::collections::VecDeque;

use eskin_core::skin::{SkinGeometry, CHANNELS, SENSOR_COUNT};
use serde::{Deserialize, Serialize};

use crate::session::Stage;
use crate::wire::ControlCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Xp,
    Xn,
    Yp,
    Yn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Gesture {
    /// Region is the sensor index; strength is the peak |ΔB| in µT.
    PressAt { region: u8, strength: f64 },
    Slide { direction: Direction },
    LongPress { region: u8 },
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GestureConfig {
    /// Per-sensor |ΔB| above which the skin counts as touched, µT.
    pub threshold_ut: f64,
    pub press_ms: f64,
    pub long_press_ms: f64,
    /// Slides must complete their region crossings within this span.
    pub slide_window_ms: f64,
    /// Minimum time the peak must stay on a region for it to count.
    pub dwell_ms: f64,
    /// Fraction of a press the peak must spend on its main region.
    pub stability: f64,
    /// Moving-average length applied to the raw channels before thresholding.
    pub smoothing_samples: usize,
}

impl Default for GestureConfig {
    fn default() -> Self {
        Self {
            threshold_ut: 0.4,
            press_ms: 100.0,
            long_press_ms: 800.0,
            slide_window_ms: 400.0,
            dwell_ms: 20.0,
            stability: 0.8,
            smoothing_samples: 4,
        }
    }
}

/// Streaming recognizer. Feed zeroed samples in time order; at most one
/// gesture is reported per contact.
#[derive(Debug, Clone)]
pub struct GestureTracker {
    cfg: GestureConfig,
    positions: Vec<[f64; 2]>,
    adjacent: [[bool; SENSOR_COUNT]; SENSOR_COUNT],
    /// (timestamp, argmax sensor, peak) of the current contact.
    contact: Vec<(f64, usize, f64)>,
    reported: bool,
    recent: VecDeque<[f64; CHANNELS]>,
}

impl GestureTracker {
    pub fn new(cfg: GestureConfig, geom: &SkinGeometry) -> Self {
        let positions: Vec<[f64; 2]> = geom.sensor_positions.iter().map(|p| [p.x, p.y]).collect();
        let dist = |a: usize, b: usize| {
            ((positions[a][0] - positions[b][0]).powi(2) + (positions[a][1] - positions[b][1]).powi(2)).sqrt()
        };
        let nearest = (0..SENSOR_COUNT)
            .flat_map(|a| (0..SENSOR_COUNT).filter(move |b| *b != a).map(move |b| (a, b)))
            .map(|(a, b)| dist(a, b))
            .fold(f64::INFINITY, f64::min);
        let mut adjacent = [[false; SENSOR_COUNT]; SENSOR_COUNT];
        for (a, row) in adjacent.iter_mut().enumerate() {
            for (b, cell) in row.iter_mut().enumerate() {
                *cell = a != b && dist(a, b) <= 1.1 * nearest;
            }
        }
        Self { cfg, positions, adjacent, contact: Vec::new(), reported: false, recent: VecDeque::new() }
    }

    pub fn is_adjacent(&self, a: usize, b: usize) -> bool {
        self.adjacent[a][b]
    }

    pub fn push(&mut self, sample: &SensorSample) -> Option<Gesture> {
        self.recent.push_back(sample.values);
        while self.recent.len() > self.cfg.smoothing_samples.max(1) {
            self.recent.pop_front();
        }
        let mut mean = [0.0; CHANNELS];
        for v in &self.recent {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x / self.recent.len() as f64;
            }
        }
        let mags = SensorSample::new(sample.timestamp_ms, mean).sensor_magnitudes();
        let (arg, peak) = mags.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, m)| if *m > b.1 { (i, *m) } else { b });
        if peak > self.cfg.threshold_ut {
            self.contact.push((sample.timestamp_ms, arg, peak));
            if self.reported {
                return None;
            }
            let g = self.slide().or_else(|| self.long_press());
            self.reported = g.is_some();
            g
        } else {
            self.release()
        }
    }

    /// Ends the current contact as if the finger lifted.
    pub fn release(&mut self) -> Option<Gesture> {
        let g = if self.reported { None } else { self.press() };
        self.contact.clear();
        self.reported = false;
        g
    }

    fn duration(&self) -> f64 {
        match (self.contact.first(), self.contact.last()) {
            (Some(a), Some(b)) => b.0 - a.0,
            _ => 0.0,
        }
    }

    /// Most frequent peak region and its share of the contact.
    fn main_region(&self) -> (usize, f64) {
        let mut counts = [0usize; SENSOR_COUNT];
        for (_, r, _) in &self.contact {
            counts[*r] += 1;
        }
        let (r, n) = counts.iter().enumerate().fold((0, 0), |b, (i, c)| if *c > b.1 { (i, *c) } else { b });
        (r, n as f64 / self.contact.len().max(1) as f64)
    }

    fn press(&self) -> Option<Gesture> {
        if self.contact.is_empty() || self.duration() < self.cfg.press_ms {
            return None;
        }
        let (region, share) = self.main_region();
        if share < self.cfg.stability {
            return None;
        }
        let strength = self.contact.iter().map(|c| c.2).fold(0.0, f64::max);
        Some(Gesture::PressAt { region: region as u8, strength })
    }

    fn long_press(&self) -> Option<Gesture> {
        if self.duration() < self.cfg.long_press_ms {
            return None;
        }
        let (region, share) = self.main_region();
        (share >= self.cfg.stability).then_some(Gesture::LongPress { region: region as u8 })
    }

    /// Regions held for at least the dwell time, in visiting order, with the
    /// time each was entered.
    fn dwell_path(&self) -> Vec<(usize, f64)> {
        let mut path: Vec<(usize, f64)> = Vec::new();
        let mut i = 0;
        while i < self.contact.len() {
            let (t0, r, _) = self.contact[i];
            let mut j = i;
            while j + 1 < self.contact.len() && self.contact[j + 1].1 == r {
                j += 1;
            }
            let held = self.contact.get(j + 1).map_or(self.contact[j].0, |c| c.0) - t0;
            if held >= self.cfg.dwell_ms && path.last().map(|p| p.0) != Some(r) {
                path.push((r, t0));
            }
            i = j + 1;
        }
        path
    }

    fn slide(&self) -> Option<Gesture> {
        let path = self.dwell_path();
        if path.len() < 2 || !path.windows(2).all(|w| self.adjacent[w[0].0][w[1].0]) {
            return None;
        }
        if path.last()?.1 - path[0].1 > self.cfg.slide_window_ms {
            return None;
        }
        let (a, b) = (self.positions[path[0].0], self.positions[path.last()?.0]);
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let direction = if dx.abs() >= dy.abs() {
            if dx > 0.0 { Direction::Xp } else { Direction::Xn }
        } else if dy > 0.0 {
            Direction::Yp
        } else {
            Direction::Yn
        };
        Some(Gesture::Slide { direction })
    }
}

/// Classifies a recorded window: the last gesture a tracker reports, with
/// a contact still open at the end treated as released.
pub fn classify_gesture(stream: &[SensorSample], cfg: &GestureConfig, geom: &SkinGeometry) -> Gesture {
    let mut t = GestureTracker::new(*cfg, geom);
    let mut last = Gesture::None;
    for s in stream {
        if let Some(g) = t.push(s) {
            last = g;
        }
    }
    if let Some(g) = t.release() {
        last = g;
    }
    last
}

/// Stage-dependent mapping. Regions are sensor indices:
///
/// | stage    | gesture                 | command            |
/// |----------|-------------------------|--------------------|
/// | Approach | Slide ±x/±y             | MOVE_XP/XN/YP/YN   |
/// | Approach | PressAt 0 / 1           | MOVE_ZN / MOVE_ZP  |
/// | Approach | PressAt 7               | GRASP              |
/// | Grasp    | PressAt 0 / 1           | MOVE_ZN / MOVE_ZP  |
/// | Grasp    | PressAt 6 / 7           | RELEASE / GRASP    |
/// | Position | Slide ±x/±y             | MOVE_XP/XN/YP/YN   |
/// | Position | PressAt 2 / 3           | TILT_UP / TILT_DOWN|
/// | Dispense | PressAt 0               | VIB_START          |
/// | Dispense | LongPress (any)         | VIB_STOP           |
/// | Dispense | PressAt 2 / 3           | TILT_UP / TILT_DOWN|
/// | Dispense | PressAt 7               | CONFIRM            |
///
/// Everything else maps to no command.
pub fn gesture_to_command(g: &Gesture, stage: Stage) -> Option<ControlCode> {
    use ControlCode::*;
    let slide = |d: &Direction| match d {
        Direction::Xp => MoveXp,
        Direction::Xn => MoveXn,
        Direction::Yp => MoveYp,
        Direction::Yn => MoveYn,
    };
    match (stage, g) {
        (Stage::Approach | Stage::Position, Gesture::Slide { direction }) => Some(slide(direction)),
        (Stage::Approach | Stage::Grasp, Gesture::PressAt { region: 0, .. }) => Some(MoveZn),
        (Stage::Approach | Stage::Grasp, Gesture::PressAt { region: 1, .. }) => Some(MoveZp),
        (Stage::Approach | Stage::Grasp, Gesture::PressAt { region: 7, .. }) => Some(Grasp),
        (Stage::Grasp, Gesture::PressAt { region: 6, .. }) => Some(Release),
        (Stage::Position | Stage::Dispense, Gesture::PressAt { region: 2, .. }) => Some(TiltUp),
        (Stage::Position | Stage::Dispense, Gesture::PressAt { region: 3, .. }) => Some(TiltDown),
        (Stage::Dispense, Gesture::PressAt { region: 0, .. }) => Some(VibStart),
        (Stage::Dispense, Gesture::LongPress { .. }) => Some(VibStop),
        (Stage::Dispense, Gesture::PressAt { region: 7, .. }) => Some(Confirm),
        _ => None,
    }
}
