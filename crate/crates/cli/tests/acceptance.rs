//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::time::{Duration, Instant};

use eskin_cli::script::{self, HAPPY_PATH};
use eskin_cli::{weigh, ScenarioConfig};
use eskin_core::classifier::{self, cnn, gradcheck, tsne, CnnModel, TrainConfig};
use eskin_core::interference::{self, InterferenceConfig};
use eskin_core::sensing::{self, AcquisitionConfig, ObjectClass, TactileWindow, WINDOW_LEN};
use eskin_core::skin::{self, Deformation, MagneticFilm, MotorModel, SkinGeometry, Vec3};
use eskin_core::weighing::{self, Material, WeighTrace};
use eskin_protocol::session::{session_step, Endpoint, SessionEvent, SessionState, Stage};
use eskin_protocol::wire::{self, ControlCode, FrameDecoder, Message, RejectReason};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(limit: Duration, t: Duration) -> bool {
    t <= limit
}

// ---------------------------------------------------------------- oracles

/// µ0/4π · (3(m·r̂)r̂ − m)/|r|³, written out without the library.
fn dipole_oracle(m: [f64; 3], r: [f64; 3]) -> [f64; 3] {
    let r2: f64 = r.iter().map(|v| v * v).sum();
    let mr: f64 = m.iter().zip(&r).map(|(a, b)| a * b).sum();
    std::array::from_fn(|i| 1e-7 * (3.0 * mr * r[i] / r2 - m[i]) / (r2 * r2.sqrt()))
}

/// Bitwise reflected CRC-32 (IEEE).
fn crc32_oracle(bytes: &[u8]) -> u32 {
    let mut c = !0u32;
    for &b in bytes {
        c ^= b as u32;
        for _ in 0..8 {
            c = if c & 1 != 0 { (c >> 1) ^ 0xEDB8_8320 } else { c >> 1 };
        }
    }
    !c
}

fn silhouette_oracle(p: &[[f64; 2]], l: &[usize]) -> f64 {
    let d = |a: usize, b: usize| ((p[a][0] - p[b][0]).powi(2) + (p[a][1] - p[b][1]).powi(2)).sqrt();
    let k = l.iter().max().unwrap() + 1;
    let mut total = 0.0;
    for i in 0..p.len() {
        let mut sum = vec![0.0; k];
        let mut n = vec![0usize; k];
        for j in (0..p.len()).filter(|j| *j != i) {
            sum[l[j]] += d(i, j);
            n[l[j]] += 1;
        }
        let a = sum[l[i]] / n[l[i]] as f64;
        let b = (0..k).filter(|c| *c != l[i]).map(|c| sum[c] / n[c] as f64).fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / p.len() as f64
}

// ------------------------------------------------------------- criteria

fn magnetostatics() -> Outcome {
    let t0 = Instant::now();
    let mu0 = 4e-7 * std::f64::consts::PI;
    let mut worst_closed = 0.0f64;
    for (m, d) in [(1.0, 0.1), (0.37, 0.013), (5e-6, 2e-3)] {
        let axial = skin::dipole_field(Vec3::new(0.0, 0.0, m), Vec3::new(0.0, 0.0, d)).unwrap();
        let eq = skin::dipole_field(Vec3::new(0.0, 0.0, m), Vec3::new(d, 0.0, 0.0)).unwrap();
        let ax_ref = mu0 * m / (2.0 * std::f64::consts::PI * d.powi(3));
        worst_closed = worst_closed.max(((axial.z - ax_ref) / ax_ref).abs()).max(((eq.z + ax_ref / 2.0) / ax_ref).abs() * 2.0);
    }
    let geom = SkinGeometry::default();
    let film = MagneticFilm::new(&geom).unwrap();
    // superposition: library readings versus the oracle's dipole-by-dipole sum
    let pressed = skin::deform(&film, &Deformation::press(17.0, 33.0, 2.0, 5.0)).unwrap();
    let reading = skin::sensor_field(&pressed, &geom).unwrap();
    let mut worst_sum = 0.0f64;
    for (i, s) in geom.sensor_positions.iter().enumerate() {
        let mut b = [0.0; 3];
        for (p, m) in pressed.positions.iter().zip(&pressed.moments) {
            let d = dipole_oracle([m.x, m.y, m.z], [(s.x - p.x) * 1e-3, (s.y - p.y) * 1e-3, -p.z * 1e-3]);
            (0..3).for_each(|k| b[k] += d[k] * 1e6);
        }
        let scale = b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        (0..3).for_each(|k| worst_sum = worst_sum.max((reading.sensor(i)[k] - b[k]).abs() / scale));
    }
    // symmetry: centred press, point-mirrored sensor pairs
    let c = geom.center();
    let r = skin::sensor_field(&skin::deform(&film, &Deformation::press(c.x, c.y, 3.0, 6.0)).unwrap(), &geom).unwrap();
    let mut worst_sym = 0.0f64;
    for i in 0..8 {
        let (a, b) = (r.sensor(i), r.sensor(geom.point_mirror_sensor(i)));
        let e = ((a.x + b.x).abs()).max((a.y + b.y).abs()).max((a.z - b.z).abs()) / a.norm();
        worst_sym = worst_sym.max(e);
    }
    let t = t0.elapsed();
    outcome(
        worst_closed <= 1e-9 && worst_sum <= 1e-6 && worst_sym <= 1e-6 && within(Duration::from_secs(1), t),
        format!("closed-form {worst_closed:.1e}, superposition {worst_sum:.1e}, symmetry {worst_sym:.1e}, {:.2?}", t),
    )
}

fn interference_ordering() -> Outcome {
    let t0 = Instant::now();
    let geom = SkinGeometry::default();
    let film = MagneticFilm::new(&geom).unwrap();
    let tr = interference::interference_experiment(&geom, &film, &MotorModel::default(), 4.0, &InterferenceConfig::default()).unwrap();
    let t = t0.elapsed();
    let ratio = tr.ratio();
    outcome(
        tr.stage_max[1] < tr.stage_max[2] && ratio < 0.5 && within(Duration::from_secs(5), t),
        format!(
            "motors {:.3} uT < 4 N press {:.3} uT at sensor {}, ratio {ratio:.3}, {:.2?}",
            tr.stage_max[1], tr.stage_max[2], tr.probed_sensor, t
        ),
    )
}

fn default_dataset() -> sensing::Dataset {
    let geom = SkinGeometry::default();
    let film = MagneticFilm::new(&geom).unwrap();
    sensing::build_dataset(&ObjectClass::defaults(), sensing::DEFAULT_PER_CLASS, 42, &geom, &film, &AcquisitionConfig::default()).unwrap()
}

fn dataset_shape(ds: &sensing::Dataset) -> Outcome {
    let bytes = |w: &[TactileWindow]| {
        let mut b = Vec::new();
        sensing::write_dataset(&mut b, w).unwrap();
        b
    };
    let again = default_dataset();
    let same = bytes(&ds.windows) == bytes(&again.windows);
    let shapes = ds.windows.iter().all(|w| w.data.len() == WINDOW_LEN && WINDOW_LEN == 24 * 60);
    let (n, tr, te) = (ds.len(), ds.train().len(), ds.test().len());
    outcome(
        n == 2400 && tr == 1680 && te == 720 && shapes && same,
        format!("{n} windows of 24x60, split {tr}/{te}, rerun byte-identical: {same}"),
    )
}

fn classifier(ds: &sensing::Dataset) -> Outcome {
    let t0 = Instant::now();
    let (model, hist) = cnn::train(ds.train(), Some(ds.test()), &TrainConfig::default()).unwrap();
    let train5 = hist.train_acc[4];
    let test = classifier::evaluate(&model, ds.test()).unwrap().accuracy;
    let mut m64 = CnnModel::<f64>::init(7);
    let gc = gradcheck::grad_check(&mut m64, &ds.train()[..8], 1e-6, 240, 7).unwrap();
    let t = t0.elapsed();
    outcome(
        train5 >= 0.98 && test >= 0.95 && gc.max_relative_error <= 1e-4 && within(Duration::from_secs(600), t),
        format!(
            "epoch-5 train {train5:.4}, test {test:.4}, grad check {:.2e} over {} params, {:.1?}",
            gc.max_relative_error, gc.checked, t
        ),
    )
}

fn tsne_criterion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise = Normal::new(0.0, 0.01).unwrap();
    let centres = [[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [5.0, 10.0, 0.0]];
    let mut x = Vec::new();
    let mut labels = Vec::new();
    for (c, centre) in centres.iter().enumerate() {
        for _ in 0..150 {
            x.push(centre.iter().map(|v| v + noise.sample(&mut rng)).collect::<Vec<f64>>());
            labels.push(c);
        }
    }
    let cfg = tsne::TsneConfig::default();
    let t0 = Instant::now();
    let a = tsne::tsne_embed(&x, &cfg).unwrap();
    let t = t0.elapsed();
    let b = tsne::tsne_embed(&x, &cfg).unwrap();
    let perp_err = a.perplexities.iter().map(|p| (p - cfg.perplexity).abs()).fold(0.0, f64::max);
    let sil = silhouette_oracle(&a.embedding, &labels);
    let det = a.embedding == b.embedding;
    outcome(
        perp_err <= 1e-3 && sil >= 0.8 && det && within(Duration::from_secs(60), t),
        format!("N=450 perplexity error {perp_err:.1e}, silhouette {sil:.3}, deterministic {det}, {:.1?}", t),
    )
}

fn epsilon_fixtures() -> Outcome {
    let cases: [(&[f64], usize, f64); 4] = [
        (&[0.0, 0.1, 0.1, 0.4, 0.6], 1, (0.1 + 0.3 + 0.2) / 3.0),
        (&[0.0, 0.1, 0.1, 0.4, 0.6], 2, (0.1 + 0.3 + 0.5) / 3.0),
        (&[1.0, 0.5, 0.5, 1.5], 1, (0.5 + 1.0) / 2.0),
        (&[0.0, 0.25, 0.5, 0.75, 1.0, 1.25], 3, 0.75),
    ];
    let worst = cases
        .iter()
        .map(|(m, a, want)| (weighing::epsilon_of(m, *a).unwrap() - want).abs())
        .fold(0.0, f64::max);
    let constant = weighing::epsilon(&WeighTrace { dt: 0.05, masses: vec![2.0; 40] }, Default::default()).is_err();
    outcome(worst <= 1e-12 && constant, format!("max fixture error {worst:.1e}, constant trace rejected: {constant}"))
}

fn weighing_resolution() -> Outcome {
    let t0 = Instant::now();
    let r = weigh::epsilon_comparison(&Material::flour(), 20, 0).unwrap();
    let t = t0.elapsed();
    outcome(
        r.ratio >= 5.0 && within(Duration::from_secs(60), t),
        format!("flour eps {:.4} g -> {:.4} g, ratio {:.2} over 20 seeds, {:.1?}", r.no_vibration, r.vibration, r.ratio, t),
    )
}

fn nine_combinations() -> Outcome {
    let t0 = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for m in [Material::sugar(), Material::sesame()] {
        let (r, _) = weigh::nine_combo(&m, 20, 0).unwrap();
        let broken: Vec<String> = r.pairs.iter().filter(|p| !p.holds).map(|p| format!("{}>{}", p.faster, p.slower)).collect();
        ok &= r.all_hold;
        parts.push(format!("{} {}", m.name, if broken.is_empty() { "12/12 pairs".into() } else { format!("broken {}", broken.join(",")) }));
    }
    let t = t0.elapsed();
    outcome(ok && within(Duration::from_secs(120), t), format!("{}, {:.1?}", parts.join("; "), t))
}

fn random_message(rng: &mut ChaCha8Rng) -> Message {
    match rng.random_range(0..10) {
        0 => Message::Hello { version: rng.random() },
        1 => Message::SensorFrame { seq: rng.random(), values: std::array::from_fn(|_| rng.random()) },
        2 => Message::VibrationCmd { duty: rng.random(), duration_ms: rng.random() },
        3 => Message::ControlCmd(ControlCode::ALL[rng.random_range(0..13)]),
        4 => Message::TargetWeight { centigrams: rng.random() },
        5 => Message::StageTransition { stage: rng.random_range(1..=6) },
        6 => Message::CollisionEvent { magnitude: rng.random() },
        7 => Message::Ack { seq: rng.random() },
        8 => Message::Heartbeat,
        _ => Message::Error { rejected_type: rng.random(), reason: RejectReason::ALL[rng.random_range(0..6)] },
    }
}

fn protocol() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let msgs: Vec<Message> = (0..100_000).map(|_| random_message(&mut rng)).collect();
    let round = msgs.iter().all(|m| {
        let f = wire::encode(m);
        let n = f.len();
        wire::decode(&f).as_ref() == Ok(m) && u32::from_le_bytes(f[n - 4..].try_into().unwrap()) == crc32_oracle(&f[..n - 4])
    });

    let frame = wire::encode(&Message::SensorFrame { seq: 77, values: std::array::from_fn(|i| i as i16 * 311 - 4000) });
    let mut corrupt_ok = true;
    for pos in 0..frame.len() {
        for v in (0..=255u8).filter(|v| *v != frame[pos]) {
            let mut bad = frame.clone();
            bad[pos] = v;
            corrupt_ok &= wire::decode(&bad).is_err() && FrameDecoder::new().feed(&bad).iter().all(|r| r.is_err());
        }
    }

    let stream: Vec<u8> = msgs[..2000].iter().flat_map(wire::encode).collect();
    let whole = FrameDecoder::new().feed(&stream);
    let mut d = FrameDecoder::new();
    let single: Vec<_> = stream.iter().flat_map(|b| d.feed(&[*b])).collect();
    let frag = whole == single && whole.len() == 2000;

    // enumerated transition matrix against an independent edge list
    let legal = [(1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (5, 4), (1, 6), (2, 6), (3, 6), (4, 6)];
    let op = |msg| SessionEvent::Inbound { from: Endpoint::Operator, msg };
    let mut illegal = 0;
    let mut matrix_ok = true;
    for from in 1..=6u8 {
        let mut s = SessionState::default();
        s = session_step(&s, &op(Message::target_weight(1.0))).state;
        for k in 2..=from {
            s = session_step(&s, &op(Message::StageTransition { stage: k })).state;
        }
        matrix_ok &= s.stage == Stage::from_u8(from).unwrap();
        for to in 0..=255u8 {
            let r = session_step(&s, &op(Message::StageTransition { stage: to }));
            if legal.contains(&(from, to)) {
                matrix_ok &= r.rejected.is_none() && r.state.stage.number() == to;
            } else {
                illegal += 1;
                matrix_ok &= r.rejected.is_some() && r.state == s;
            }
        }
    }
    outcome(
        round && corrupt_ok && frag && matrix_ok,
        format!(
            "1e5 round-trips {round}, {} corruptions rejected {corrupt_ok}, 1-byte fragmentation {frag}, {illegal} illegal transitions rejected {matrix_ok}",
            frame.len() * 255
        ),
    )
}

fn duplex_run() -> Outcome {
    let t0 = Instant::now();
    let steps = script::parse_script(HAPPY_PATH).unwrap();
    let cfg = ScenarioConfig::default();
    let mut hits = 0;
    let mut collisions = 0;
    let mut relayed = 0;
    let mut spurious = 0;
    let mut worst = 0.0f64;
    for seed in 0..50 {
        let r = script::run_script(&cfg, &steps, seed).unwrap().report;
        let err = (r.final_mass_g - 1.0).abs();
        worst = worst.max(err);
        hits += usize::from(r.completed && r.final_stage == 6 && err <= 0.05);
        collisions += r.collisions.total;
        relayed += r.collisions.relayed_once;
        spurious += r.collisions.spurious;
    }
    let t = t0.elapsed();
    outcome(
        hits >= 45 && relayed == collisions && spurious == 0 && collisions > 0,
        format!("{hits}/50 seeds within 0.05 g of 1.00 g (worst {worst:.3} g), {relayed}/{collisions} collisions relayed once, {:.1?}", t),
    )
}

fn main() {
    let ds = default_dataset();
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Outcome + '_>)> = vec![
        ("magnetostatics oracle", Box::new(magnetostatics)),
        ("interference ordering", Box::new(interference_ordering)),
        ("dataset shape", Box::new(|| dataset_shape(&ds))),
        ("classifier", Box::new(|| classifier(&ds))),
        ("t-SNE", Box::new(tsne_criterion)),
        ("epsilon metric", Box::new(epsilon_fixtures)),
        ("weighing resolution", Box::new(weighing_resolution)),
        ("nine-combination trends", Box::new(nine_combinations)),
        ("protocol", Box::new(protocol)),
        ("scripted duplex run", Box::new(duplex_run)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        let o = f();
        failed += usize::from(!o.pass);
        println!("{} [{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("acceptance: {} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
