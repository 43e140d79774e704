//! Robot-side simulator: gripper with an e-skin, a vibrating spoon and a
//! scale. Consumes ControlCmds, emits SensorFrames, CollisionEvents and
//! scale readings.

use eskin_core::actuation::RISE_TAU_MS;
use eskin_core::sensing::{self, NoiseModel, SensorSample};
use eskin_core::skin::{self, Deformation, FieldReading, MagneticFilm, SkinGeometry, CHANNELS, MOTOR_COUNT};
use eskin_core::weighing::{self, Material, SpoonState, DEFAULT_COUPLING};
use eskin_protocol::{ControlCode, Message};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotConfig {
    pub material: String,
    pub load_g: f64,
    /// Tilt change per TILT_UP / TILT_DOWN, degrees.
    pub tilt_step_deg: f64,
    /// Wrist servo speed, degrees per second.
    pub tilt_rate_deg_s: f64,
    /// Duty applied to all spoon motors on VIB_START.
    pub vib_duty: f64,
    pub coupling: f64,
    pub move_step_mm: f64,
    /// Chance that a MOVE command bumps into something.
    pub collision_probability: f64,
    pub frame_hz: f64,
    pub scale_resolution_g: f64,
    /// Gripper skin indentation while holding the spoon, mm.
    pub grip_depth_mm: f64,
}

impl Default for RobotConfig {
    fn default() -> Self {
        Self {
            material: "flour".into(),
            load_g: 5.0,
            tilt_step_deg: 5.0,
            tilt_rate_deg_s: 60.0,
            vib_duty: 1.0,
            coupling: DEFAULT_COUPLING,
            move_step_mm: 10.0,
            collision_probability: 0.2,
            frame_hz: 10.0,
            scale_resolution_g: 0.01,
            grip_depth_mm: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RobotOutput {
    Msg(Message),
    /// Scale reading, grams.
    Mass(f64),
}

const COLLISION_MS: f64 = 200.0;

pub struct RobotSim {
    cfg: RobotConfig,
    material: Material,
    rng: ChaCha8Rng,
    geom: SkinGeometry,
    film: MagneticFilm,
    base: FieldReading,
    noise: NoiseModel,
    initial_ug: u64,
    spoon: SpoonState,
    target_tilt: f64,
    vib_on: bool,
    motor_amp: f64,
    gripper_mm: [f64; 3],
    grasped: bool,
    collision_until_s: f64,
    t_s: f64,
    next_frame_s: f64,
    frame_seq: u32,
}

impl RobotSim {
    pub fn new(cfg: RobotConfig, material: Material, geom: SkinGeometry, noise: NoiseModel, seed: u64) -> Result<Self, CliError> {
        material.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !(cfg.load_g >= 0.0) || !(cfg.frame_hz > 0.0) || !(cfg.tilt_rate_deg_s > 0.0) || !(cfg.scale_resolution_g > 0.0) {
            return Err(CliError::Config("robot: load, frame rate, tilt rate and scale resolution must be positive".into()));
        }
        if !(0.0..=1.0).contains(&cfg.vib_duty) || !(0.0..=1.0).contains(&cfg.collision_probability) {
            return Err(CliError::Config("robot: vib_duty and collision_probability must lie in [0, 1]".into()));
        }
        let film = MagneticFilm::new(&geom).map_err(|e| CliError::Config(e.to_string()))?;
        let base = skin::sensor_field(&film, &geom).map_err(|e| CliError::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(7);
        let noise = NoiseModel { rng_seed: rng.random(), ..noise };
        let first_frame_s = 1.0 / cfg.frame_hz;
        Ok(Self {
            next_frame_s: first_frame_s,
            initial_ug: weighing::grams_to_ug(cfg.load_g),
            spoon: SpoonState::new(0.0, cfg.load_g),
            cfg,
            material,
            rng,
            geom,
            film,
            base,
            noise,
            target_tilt: 0.0,
            vib_on: false,
            motor_amp: 0.0,
            gripper_mm: [0.0, 0.0, 100.0],
            grasped: false,
            collision_until_s: f64::NEG_INFINITY,
            t_s: 0.0,
            frame_seq: 0,
        })
    }

    pub fn tilt(&self) -> f64 {
        self.spoon.tilt
    }

    pub fn vibrating(&self) -> bool {
        self.vib_on
    }

    /// True dispensed mass, grams.
    pub fn mass(&self) -> f64 {
        (self.initial_ug - self.spoon.load_remaining_ug()) as f64 / 1e6
    }

    pub fn scale_reading(&self) -> f64 {
        let r = self.cfg.scale_resolution_g;
        (self.mass() / r).round() * r
    }

    pub fn collision(&mut self, magnitude: u8) -> Message {
        self.collision_until_s = self.t_s + COLLISION_MS / 1000.0;
        Message::CollisionEvent { magnitude }
    }

    fn maybe_collide(&mut self) -> Option<Message> {
        if self.rng.random_bool(self.cfg.collision_probability) {
            let m = self.rng.random_range(64..=255u8);
            Some(self.collision(m))
        } else {
            None
        }
    }

    pub fn handle(&mut self, msg: &Message) -> Vec<RobotOutput> {
        use ControlCode::*;
        let Message::ControlCmd(code) = msg else {
            return Vec::new();
        };
        let step = self.cfg.move_step_mm;
        let mut out = Vec::new();
        let mut moved = |axis: usize, d: f64, sim: &mut Self| {
            sim.gripper_mm[axis] += d;
            if axis == 2 && sim.gripper_mm[2] < 0.0 {
                // table contact
                sim.gripper_mm[2] = 0.0;
                out.push(RobotOutput::Msg(sim.collision(255)));
            } else if let Some(m) = sim.maybe_collide() {
                out.push(RobotOutput::Msg(m));
            }
        };
        match code {
            MoveXp => moved(0, step, self),
            MoveXn => moved(0, -step, self),
            MoveYp => moved(1, step, self),
            MoveYn => moved(1, -step, self),
            MoveZp => moved(2, step, self),
            MoveZn => moved(2, -step, self),
            Grasp => self.grasped = true,
            Release => self.grasped = false,
            TiltUp => self.target_tilt = (self.target_tilt + self.cfg.tilt_step_deg).min(90.0),
            TiltDown => self.target_tilt = (self.target_tilt - self.cfg.tilt_step_deg).max(0.0),
            VibStart => self.vib_on = true,
            VibStop | Confirm => {
                // halt: motors off, spoon levelled
                self.vib_on = false;
                self.target_tilt = 0.0;
            }
        }
        out
    }

    /// Advance by one scale interval.
    pub fn tick(&mut self) -> Vec<RobotOutput> {
        let dt = weighing::DT_S;
        let max_turn = self.cfg.tilt_rate_deg_s * dt;
        let tilt = self.spoon.tilt + (self.target_tilt - self.spoon.tilt).clamp(-max_turn, max_turn);
        let goal = if self.vib_on { self.cfg.vib_duty } else { 0.0 };
        self.motor_amp += (goal - self.motor_amp) * (1.0 - (-dt * 1000.0 / RISE_TAU_MS).exp());
        let vib = weighing::spoon_amplitude(&[self.motor_amp; MOTOR_COUNT], self.cfg.coupling);
        let (_, next) = weighing::step_ug(&self.spoon.with_tilt(tilt), &self.material, vib, dt, &mut self.rng);
        self.spoon = next;
        self.t_s += dt;

        let mut out = vec![RobotOutput::Mass(self.scale_reading())];
        if self.t_s + 1e-9 >= self.next_frame_s {
            self.next_frame_s += 1.0 / self.cfg.frame_hz;
            out.push(RobotOutput::Msg(self.sensor_frame()));
        }
        out
    }

    fn sensor_frame(&mut self) -> Message {
        let mut contacts = Vec::new();
        let c = self.geom.center();
        if self.grasped {
            contacts.push(Deformation::press(c.x, c.y, self.cfg.grip_depth_mm, 6.0));
        }
        if self.t_s < self.collision_until_s {
            let p = self.geom.sensor_positions[7];
            contacts.push(Deformation::press(p.x, p.y, 3.0, 4.0));
        }
        let reading = if contacts.is_empty() {
            self.base
        } else {
            skin::deform_all(&self.film, &contacts)
                .and_then(|f| skin::sensor_field(&f, &self.geom))
                .unwrap_or(self.base)
        };
        let zeroed = reading - self.base;
        let noisy = sensing::apply_noise(&SensorSample::new(self.t_s * 1000.0, zeroed.to_channels()), &self.noise, self.frame_seq as u64);
        let values: [f64; CHANNELS] = noisy.values;
        let m = Message::sensor_frame(self.frame_seq, &values);
        self.frame_seq += 1;
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim(cfg: RobotConfig) -> RobotSim {
        RobotSim::new(cfg, Material::flour(), SkinGeometry::default(), NoiseModel::default(), 1).unwrap()
    }

    fn run(sim: &mut RobotSim, s: f64) {
        for _ in 0..(s / weighing::DT_S).round() as usize {
            sim.tick();
        }
    }

    #[test]
    fn level_spoon_holds_its_load() {
        let mut r = sim(RobotConfig::default());
        r.handle(&Message::ControlCmd(ControlCode::VibStart));
        run(&mut r, 5.0);
        assert_eq!(r.mass(), 0.0);
    }

    #[test]
    fn tilt_and_vibration_pour_then_stop_levels() {
        let mut r = sim(RobotConfig::default());
        for _ in 0..10 {
            r.handle(&Message::ControlCmd(ControlCode::TiltUp));
        }
        r.handle(&Message::ControlCmd(ControlCode::VibStart));
        run(&mut r, 3.0);
        assert_eq!(r.tilt(), 50.0);
        assert!(r.mass() > 0.1);
        r.handle(&Message::ControlCmd(ControlCode::VibStop));
        run(&mut r, 1.0);
        let m = r.mass();
        run(&mut r, 3.0);
        assert_eq!(r.mass(), m);
        assert_eq!(r.tilt(), 0.0);
    }

    #[test]
    fn table_contact_always_collides() {
        let mut r = sim(RobotConfig { collision_probability: 0.0, ..Default::default() });
        let mut hits = 0;
        for _ in 0..12 {
            hits += r.handle(&Message::ControlCmd(ControlCode::MoveZn)).len();
        }
        // 100 mm above the table, 10 mm per step
        assert_eq!(hits, 2);
    }

    #[test]
    fn frames_at_configured_rate_with_increasing_seq() {
        let mut r = sim(RobotConfig::default());
        let mut seqs = Vec::new();
        for _ in 0..40 {
            for o in r.tick() {
                if let RobotOutput::Msg(Message::SensorFrame { seq, .. }) = o {
                    seqs.push(seq);
                }
            }
        }
        assert_eq!(seqs, (0..20).collect::<Vec<_>>());
    }
}
