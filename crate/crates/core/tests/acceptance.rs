//! Acceptance checks. Each test prints one `PASS`/`FAIL` line with the
//! measured value, then asserts it.
//!
//! Run with `cargo test -p agentmark-core --test acceptance -- --nocapture`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use chrono::{DateTime, TimeZone, Utc};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use agentmark_core::attack::{jpeg_roundtrip, run_bench, standard_grid, AttackSpec, BenchMode};
use agentmark_core::attack::{BenchCell, RobustnessReport};
use agentmark_core::generator::Component;
use agentmark_core::integrator::{
    blend_channel, coherence_loss, harmonize, integrate, resolve_layout, scene_coherence,
    seam_band, FeatureVector, FEATURE_DIM, SEAM_RADIUS,
};
use agentmark_core::orchestrator::corpus::{corpus_prompt, scene_corpus};
use agentmark_core::orchestrator::{Backends, Engine, MemorySink};
use agentmark_core::planner::Subtask;
use agentmark_core::protector::{
    dct8, derive_key, embed, extract, idct8, Block, WatermarkKey, WatermarkSalt,
};
use agentmark_core::reviewer::{review_loss, AlignmentScore, ReviewError, Scorer, ScorerKind};
use agentmark_core::session::{
    deserialize_session, next_state, EventKind, EventPayload, Intervention, InterventionKind,
    SessionRecord, SessionState,
};
use agentmark_core::{
    content_hash, psnr, FixedClock, Image, MetricsReport, PipelineConfig, PromptText,
    ProtectionParams,
};

const CORPUS_N: usize = 100;
const CORPUS_SEED: u64 = 1;
const CORPUS_SIZE: usize = 256;
const GRID_SEED: u64 = 7;

fn verdict(name: &str, pass: bool, detail: impl std::fmt::Display) -> bool {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn epoch() -> DateTime<Utc> {
    Utc.timestamp_opt(0, 0).unwrap()
}

fn salt() -> WatermarkSalt {
    WatermarkSalt::new("acceptance")
}

fn corpus() -> &'static (Vec<Image>, Vec<WatermarkKey>) {
    static C: OnceLock<(Vec<Image>, Vec<WatermarkKey>)> = OnceLock::new();
    C.get_or_init(|| {
        let images = scene_corpus(CORPUS_N, CORPUS_SEED, CORPUS_SIZE).unwrap();
        let keys = images
            .iter()
            .map(|img| {
                derive_key(
                    &content_hash(img),
                    &epoch(),
                    &salt(),
                    &ProtectionParams::default(),
                    img.dims(),
                )
                .unwrap()
            })
            .collect();
        (images, keys)
    })
}

struct Reports {
    integrated: RobustnessReport,
    posthoc: RobustnessReport,
    integrated_time: Duration,
}

/// Full grid in both modes on a single worker thread.
fn reports() -> &'static Reports {
    static R: OnceLock<Reports> = OnceLock::new();
    R.get_or_init(|| {
        let (images, keys) = corpus();
        let grid = standard_grid(GRID_SEED);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let t = Instant::now();
        let integrated = pool
            .install(|| run_bench(images, keys, &grid, BenchMode::Integrated))
            .unwrap();
        let integrated_time = t.elapsed();
        let posthoc = pool
            .install(|| run_bench(images, keys, &grid, BenchMode::Posthoc))
            .unwrap();
        let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
        std::fs::write(dir.join("robustness_integrated.csv"), integrated.to_csv()).unwrap();
        std::fs::write(dir.join("robustness_posthoc.csv"), posthoc.to_csv()).unwrap();
        Reports {
            integrated,
            posthoc,
            integrated_time,
        }
    })
}

fn find(report: &RobustnessReport, want: impl Fn(&AttackSpec) -> bool) -> &BenchCell {
    report.cells.iter().find(|c| want(&c.attack)).unwrap()
}

// ---------------------------------------------------------------- watermark

#[test]
fn watermark_round_trip_on_corpus() {
    let (images, keys) = corpus();
    let t = Instant::now();
    let accuracies: Vec<f64> = images
        .iter()
        .zip(keys)
        .map(|(img, key)| {
            extract(&embed(img, key).unwrap(), key)
                .unwrap()
                .bit_accuracy
        })
        .collect();
    let elapsed = t.elapsed();
    let perfect = accuracies.iter().filter(|&&a| a == 1.0).count();
    let pass = verdict(
        "watermark round trip",
        perfect == CORPUS_N && elapsed < Duration::from_secs(30),
        format!(
            "{perfect}/{CORPUS_N} images at bit accuracy 1.0 in {:.2} s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn robustness_cells_meet_floor() {
    let r = reports();
    let cells = [
        find(&r.integrated, |a| {
            matches!(a, AttackSpec::Jpeg { quality: 70 })
        }),
        find(
            &r.integrated,
            |a| matches!(a, AttackSpec::GaussianNoise { sigma, .. } if *sigma == 0.03),
        ),
        find(
            &r.integrated,
            |a| matches!(a, AttackSpec::Crop { fraction, .. } if *fraction == 0.25),
        ),
    ];
    let mut pass = r.integrated_time < Duration::from_secs(600);
    let mut detail = Vec::new();
    for c in cells {
        pass &= c.corpus_n == CORPUS_N && c.errors.is_empty() && c.recovery_rate >= 0.90;
        detail.push(format!("{} {} {:.2}", c.label, c.param, c.recovery_rate));
    }
    let pass = verdict(
        "robustness",
        pass,
        format!(
            "{} (single thread, {:.1} s)",
            detail.join(", "),
            r.integrated_time.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn integrated_at_least_posthoc_at_jpeg_70() {
    let r = reports();
    let q70 = |a: &AttackSpec| matches!(a, AttackSpec::Jpeg { quality: 70 });
    let (i, p) = (find(&r.integrated, q70), find(&r.posthoc, q70));
    let pass = verdict(
        "integrated vs posthoc",
        i.recovery_rate >= p.recovery_rate,
        format!(
            "jpeg 70 integrated {:.2}, posthoc {:.2}",
            i.recovery_rate, p.recovery_rate
        ),
    );
    assert!(pass);
}

#[test]
fn embedding_psnr_floor() {
    let (images, keys) = corpus();
    let worst = images
        .iter()
        .zip(keys)
        .map(|(img, key)| {
            psnr(img, &embed(img, key).unwrap())
                .unwrap()
                .unwrap_or(f64::INFINITY)
        })
        .fold(f64::INFINITY, f64::min);
    let pass = verdict(
        "psnr",
        worst >= 40.0,
        format!("worst {worst:.2} dB over {CORPUS_N} images"),
    );
    assert!(pass);
}

// ------------------------------------------------------------------ kernels

fn random_block(rng: &mut impl Rng) -> Block {
    let mut b = [[0.0; 8]; 8];
    for row in &mut b {
        for v in row {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    b
}

/// Direct double sum of the orthonormal type-II transform.
fn dct_by_definition(x: &Block) -> Block {
    let alpha = |k: usize| if k == 0 { (0.125f64).sqrt() } else { 0.5 };
    let mut out = [[0.0; 8]; 8];
    for (u, row) in out.iter_mut().enumerate() {
        for (v, o) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for (m, xr) in x.iter().enumerate() {
                for (n, xv) in xr.iter().enumerate() {
                    s += xv
                        * (std::f64::consts::PI * (2 * m + 1) as f64 * u as f64 / 16.0).cos()
                        * (std::f64::consts::PI * (2 * n + 1) as f64 * v as f64 / 16.0).cos();
                }
            }
            *o = alpha(u) * alpha(v) * s;
        }
    }
    out
}

fn max_diff(a: &Block, b: &Block) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn energy(b: &Block) -> f64 {
    b.iter().flatten().map(|v| v * v).sum()
}

fn dct_kernel_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let x = random_block(&mut rng);
        let y = dct8(&x);
        worst = worst
            .max(max_diff(&idct8(&y), &x))
            .max((energy(&y) - energy(&x)).abs())
            .max(max_diff(&y, &dct_by_definition(&x)));
    }
    worst
}

/// Dense solve of the seam system, assembled from scratch.
fn poisson_oracle(f: &[f64], labels: &[u32], band: &[bool], w: usize, h: usize) -> Vec<f64> {
    let val = |x: isize, y: isize| -> Option<f64> {
        (x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h)
            .then(|| f[y as usize * w + x as usize])
    };
    let lab = |x: isize, y: isize| labels[y as usize * w + x as usize];
    let unknowns: Vec<usize> = (0..w * h).filter(|&i| band[i]).collect();
    let index: BTreeMap<usize, usize> = unknowns.iter().enumerate().map(|(k, &i)| (i, k)).collect();
    let n = unknowns.len();
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for (row, &i) in unknowns.iter().enumerate() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for (dx, dy) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
            let (qx, qy) = (x + dx, y + dy);
            let Some(fq) = val(qx, qy) else { continue };
            let fp = f[i];
            let v = if lab(x, y) == lab(qx, qy) {
                fp - fq
            } else {
                let before = val(x - dx, y - dy).map(|fb| fb - fp);
                let after = val(qx + dx, qy + dy).map(|fa| fq - fa);
                match (before, after) {
                    (Some(p), Some(q)) => 0.5 * (p + q),
                    (Some(p), None) | (None, Some(p)) => p,
                    (None, None) => 0.0,
                }
            };
            a[(row, row)] += 1.0;
            b[row] += v;
            let q = qy as usize * w + qx as usize;
            match index.get(&q) {
                Some(&col) => a[(row, col)] -= 1.0,
                None => b[row] += fq,
            }
        }
    }
    let u = a.lu().solve(&b).expect("nonsingular");
    let mut out = f.to_vec();
    for (k, &i) in unknowns.iter().enumerate() {
        out[i] = u[k];
    }
    out
}

fn poisson_fixtures() -> Vec<(&'static str, Vec<u32>)> {
    let (w, h) = (16usize, 16usize);
    let grid = |g: &dyn Fn(usize, usize) -> u32| -> Vec<u32> {
        (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .map(|(x, y)| g(x, y))
            .collect()
    };
    vec![
        ("vertical split", grid(&|x, _| u32::from(x >= 7))),
        (
            "inset square",
            grid(&|x, y| u32::from((4..11).contains(&x) && (5..12).contains(&y))),
        ),
        ("diagonal", grid(&|x, y| u32::from(x + y > 15))),
        (
            "three regions",
            grid(&|x, y| match (x < 6, y < 9) {
                (true, _) => 0,
                (false, true) => 1,
                (false, false) => 2,
            }),
        ),
    ]
}

fn poisson_kernel_error() -> f64 {
    let (w, h) = (16, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for (_, labels) in poisson_fixtures() {
        let f: Vec<f64> = (0..w * h)
            .map(|i| 0.3 * labels[i] as f64 + rng.random_range(0.0..0.5))
            .collect();
        let band = seam_band(&labels, w, h, SEAM_RADIUS);
        assert!(band.iter().any(|&b| b));
        let ours = blend_channel(&f, &labels, &band, w, h).unwrap();
        let oracle = poisson_oracle(&f, &labels, &band, w, h);
        for (a, b) in ours.iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

fn jpeg_fixture_error() -> f64 {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/jpeg");
    let load = |name: String| Image::from_ppm(&std::fs::read(dir.join(name)).unwrap()).unwrap();
    let mut worst = 0.0f64;
    for name in ["gradient", "waves", "noisy", "odd"] {
        let ours = jpeg_roundtrip(&load(format!("input_{name}.ppm")), 70);
        let reference = load(format!("q70_{name}.ppm"));
        assert_eq!(ours.dims(), reference.dims());
        for (a, b) in ours.samples().iter().zip(reference.samples()) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

#[test]
fn kernels_match_oracles() {
    let dct = dct_kernel_error();
    let poisson = poisson_kernel_error();
    let jpeg = jpeg_fixture_error();
    let a = verdict(
        "dct kernel",
        dct <= 1e-9,
        format!("max error {dct:.2e} over 1000 blocks"),
    );
    let b = verdict(
        "seam solver",
        poisson <= 1e-5,
        format!("max error {poisson:.2e} against dense solve"),
    );
    let c = verdict(
        "jpeg codec",
        jpeg <= 2.0 / 255.0 + 1e-12,
        format!("max deviation {:.3}/255 at quality 70", jpeg * 255.0),
    );
    assert!(a && b && c);
}

// ------------------------------------------------------------- loss algebra

#[test]
fn loss_algebra() {
    let rev = review_loss(&[0.30, 0.20, 0.25], 0.25);
    let rev_ok = (rev - 0.05).abs() <= 1e-12;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut v: FeatureVector = [0.0; FEATURE_DIM];
    for x in v.iter_mut() {
        *x = rng.random_range(0.0..1.0);
    }
    let adjacency: BTreeSet<(u32, u32)> = [(1, 2), (2, 3)].into_iter().collect();
    let same: BTreeMap<u32, FeatureVector> = [(1, v), (2, v), (3, v)].into_iter().collect();
    let zero = coherence_loss(&same, &adjacency);
    let mut e1: FeatureVector = [0.0; FEATURE_DIM];
    let mut e2: FeatureVector = [0.0; FEATURE_DIM];
    e1[0] = 1.0;
    e2[FEATURE_DIM - 1] = 1.0;
    let ortho: BTreeMap<u32, FeatureVector> = [(1, e1), (2, e2)].into_iter().collect();
    let one_pair: BTreeSet<(u32, u32)> = [(1, 2)].into_iter().collect();
    let two = coherence_loss(&ortho, &one_pair);
    let coh_ok = zero.abs() <= 1e-12 && (two - 2.0).abs() <= 1e-12;

    let mut joint_ok = true;
    for _ in 0..1000 {
        let p: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..5.0));
        let m = MetricsReport::new(p[0], p[1], p[2], p[3]);
        joint_ok &= (m.l_joint - (((p[0] + p[1]) + p[2]) + p[3])).abs() <= 1e-12;
    }
    let mut e = engine(PROMPT, config(128, 5), fixed_backends(), None);
    e.run_to_end().unwrap();
    let m = e.metrics_report().unwrap();
    joint_ok &= (m.l_joint - (m.l_plan + m.l_rev + m.l_int + m.l_prot)).abs() <= 1e-12;

    let a = verdict("review loss", rev_ok, format!("{rev:.15}"));
    let b = verdict(
        "coherence loss",
        coh_ok,
        format!("identical {zero:e}, orthonormal {two}"),
    );
    let c = verdict(
        "joint loss",
        joint_ok,
        "exact sum on 1000 draws and one session",
    );
    assert!(a && b && c);
}

// ------------------------------------------------------------------ review

const PROMPT: &str = "a red dragon flying above a medieval castle at sunset";

/// Scores by attempt: `table[attempt]`, last entry repeating.
struct Scripted(Vec<f64>);

impl Scorer for Scripted {
    fn score(
        &self,
        c: &Component,
        _: &PromptText,
        _: &Subtask,
    ) -> Result<AlignmentScore, ReviewError> {
        let i = (c.attempt as usize).min(self.0.len() - 1);
        Ok(AlignmentScore {
            value: self.0[i],
            scorer: ScorerKind::Stub,
            details: None,
        })
    }

    fn model_id(&self) -> String {
        "scripted".into()
    }
}

fn fixed_backends() -> Backends {
    let t = Utc.with_ymd_and_hms(2025, 6, 1, 8, 0, 0).unwrap();
    Backends::local(salt()).with_clock(Arc::new(FixedClock(t)))
}

fn config(size: usize, seed: u64) -> PipelineConfig {
    PipelineConfig {
        seed,
        scene_size: size,
        ..PipelineConfig::default()
    }
}

fn engine(prompt: &str, config: PipelineConfig, b: Backends, sink: Option<MemorySink>) -> Engine {
    Engine::create(
        "acceptance".into(),
        PromptText::new(prompt).unwrap(),
        config,
        "tester",
        b,
        sink.map(|s| Box::new(s) as _),
    )
    .unwrap()
}

fn count(e: &Engine, kind: EventKind) -> usize {
    e.record()
        .events
        .iter()
        .filter(|ev| ev.kind() == kind)
        .count()
}

fn regen_per_subtask(e: &Engine) -> BTreeMap<u32, u32> {
    let mut m = BTreeMap::new();
    for ev in &e.record().events {
        if let EventPayload::RegenerationTriggered { subtask_id, .. } = ev.payload {
            *m.entry(subtask_id).or_insert(0) += 1;
        }
    }
    m
}

fn gate_case(scores: Vec<f64>, no_reviewer: bool) -> (Engine, PipelineConfig) {
    let mut b = fixed_backends();
    b.scorer = Arc::new(Scripted(scores));
    let mut cfg = config(128, 2);
    cfg.ablations.no_reviewer = no_reviewer;
    let mut e = engine(PROMPT, cfg.clone(), b, None);
    e.run_to_end().unwrap();
    (e, cfg)
}

#[test]
fn review_gate_behaviour() {
    // below tau on the first draw, above it afterwards
    let (recovers, cfg) = gate_case(vec![0.05, 0.95], false);
    let regen = count(&recovers, EventKind::RegenerationTriggered);
    let recover_ok = recovers.state() == SessionState::Done
        && regen >= 1
        && regen_per_subtask(&recovers)
            .values()
            .all(|&n| n <= cfg.max_retries);

    // never passes: stops after max_retries per component
    let (stuck, cfg) = gate_case(vec![0.05], false);
    let per = regen_per_subtask(&stuck);
    let k = stuck.plan().unwrap().subtasks.len();
    let stuck_ok = stuck.state() == SessionState::Done
        && per.len() == k
        && per.values().all(|&n| n == cfg.max_retries);

    let (ablated, _) = gate_case(vec![0.05], true);
    let ablated_regen = count(&ablated, EventKind::RegenerationTriggered);

    let mut increases = 0;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..100 {
        let prompt = corpus_prompt(23, i);
        let mut e = engine(prompt.text(), config(96, i as u64), fixed_backends(), None);
        while e.state() != SessionState::Reviewing {
            e.advance().unwrap();
        }
        let layout = resolve_layout(e.plan().unwrap(), 96, 96).unwrap();
        let (pasted, _) = integrate(e.components(), &layout, true).unwrap();
        let (harmonized, _) = harmonize(&pasted).unwrap();
        let delta = scene_coherence(&harmonized) - scene_coherence(&pasted);
        worst = worst.max(delta);
        increases += usize::from(delta > 0.0);
    }

    let a = verdict(
        "review regenerates",
        recover_ok && stuck_ok,
        format!("{regen} regenerations, capped at max_retries when scores stay low"),
    );
    let b = verdict(
        "no reviewer ablation",
        ablated_regen == 0,
        format!("{ablated_regen} regenerations"),
    );
    let c = verdict(
        "harmonize is monotone",
        increases == 0,
        format!("{increases}/100 scenes got worse, largest change {worst:.3e}"),
    );
    assert!(a && b && c);
}

// ------------------------------------------------------------- conformance

/// The stage table written out by hand.
fn oracle_step(state: SessionState, payload: &EventPayload) -> Option<SessionState> {
    use EventKind as K;
    use SessionState::*;
    Some(match (state, payload.kind()) {
        (Created, K::PlanProduced) => Planned,
        (Planned | Generating, K::ComponentGenerated) => Generating,
        (Generating | Reviewing, K::ReviewScored) => Reviewing,
        (Reviewing, K::RegenerationTriggered) => Generating,
        (Generating | Reviewing, K::SceneIntegrated) => Integrating,
        (Integrating, K::WatermarkEmbedded) => Protecting,
        (Protecting, K::StateChanged) => match payload {
            EventPayload::StateChanged {
                from: Protecting,
                to: Done,
            } => Done,
            _ => return None,
        },
        _ => return None,
    })
}

#[test]
fn event_sequences_follow_the_stage_table() {
    let mut failures = Vec::new();
    let mut events = 0;
    for i in 0..50 {
        let prompt = corpus_prompt(31, i);
        let mut e = engine(prompt.text(), config(128, i as u64), fixed_backends(), None);
        let mut after_advance = Vec::new();
        while !e.state().is_terminal() {
            after_advance.push((e.record().events.len(), e.advance().unwrap()));
        }
        let evs = &e.record().events;
        events += evs.len();
        let mut state = SessionState::Created;
        let mut states = vec![state];
        for ev in evs {
            let ours = oracle_step(state, &ev.payload);
            let theirs = next_state(state, &ev.payload).ok();
            if ours.is_none() || ours != theirs {
                failures.push(format!("prompt {i}: {} in {state}", ev.kind()));
                break;
            }
            state = ours.unwrap();
            states.push(state);
        }
        let k = e.plan().unwrap().subtasks.len();
        let leading = evs[1..]
            .iter()
            .take_while(|ev| ev.kind() == EventKind::ComponentGenerated)
            .count();
        if leading != k {
            failures.push(format!(
                "prompt {i}: {leading} initial components for {k} subtasks"
            ));
        }
        for (n, (_, reported)) in after_advance.iter().enumerate() {
            let logged = after_advance.get(n + 1).map_or(evs.len(), |(len, _)| *len);
            if states[logged] != *reported {
                failures.push(format!("prompt {i}: advance reported {reported}"));
            }
        }
        if state != SessionState::Done {
            failures.push(format!("prompt {i}: ended in {state}"));
        }
    }
    let pass = verdict(
        "event order",
        failures.is_empty(),
        format!(
            "50 sessions, {events} events, {} violations {failures:?}",
            failures.len()
        ),
    );
    assert!(pass);
}

fn script() -> Vec<Intervention> {
    let actor = "reviewer-7".to_string();
    vec![
        Intervention {
            kind: InterventionKind::SetProtectionParams {
                amplitude: 0.024,
                chips_per_bit: None,
            },
            actor: actor.clone(),
        },
        Intervention {
            kind: InterventionKind::OverrideReview {
                subtask_id: 0,
                accept: false,
            },
            actor,
        },
    ]
}

/// Finishes the pipeline, applying each scripted intervention not yet in
/// the log in the first state that allows it.
fn drive(e: &mut Engine) {
    let done = count(e, EventKind::InterventionApplied);
    let mut pending: Vec<Intervention> = script().into_iter().skip(done).collect();
    while !e.state().is_terminal() {
        while let Some(iv) = pending.first() {
            if !iv.kind.allowed_in(e.state()) {
                break;
            }
            let mut iv = pending.remove(0);
            if let InterventionKind::OverrideReview { subtask_id, .. } = &mut iv.kind {
                *subtask_id = e.plan().unwrap().subtasks[0].id;
            }
            e.intervene(iv).unwrap();
        }
        e.advance().unwrap();
    }
    assert!(pending.is_empty(), "script not fully applied");
}

fn scripted_run(sink: Option<MemorySink>) -> Engine {
    let mut e = engine(PROMPT, config(256, 11), fixed_backends(), sink);
    drive(&mut e);
    e
}

fn outputs(e: &Engine) -> (Vec<u8>, String) {
    let a = e.artifact().unwrap();
    (a.ppm(), a.provenance.to_canonical_json())
}

#[test]
fn runs_are_deterministic_and_replayable() {
    let sink = MemorySink::default();
    let first = scripted_run(Some(sink.clone()));
    let second = scripted_run(None);
    let same = outputs(&first) == outputs(&second);
    let has_interventions = count(&first, EventKind::InterventionApplied) == 2;

    // replay the full log
    let logged = deserialize_session(&sink.bytes()).unwrap();
    let replayed = Engine::resume(logged, fixed_backends(), None).unwrap();
    let replay_same = outputs(&replayed) == outputs(&first);

    // kill after every prefix and finish from the log
    let lines = sink.0.lock().unwrap().clone();
    let mut resumed_same = 0;
    let cuts = 1..lines.len();
    for cut in cuts.clone() {
        let bytes: Vec<u8> = lines[..cut]
            .iter()
            .flat_map(|l| l.bytes().chain(Some(b'\n')))
            .collect();
        let record: SessionRecord = deserialize_session(&bytes).unwrap();
        let mut e = Engine::resume(record, fixed_backends(), None).unwrap();
        drive(&mut e);
        resumed_same += usize::from(outputs(&e) == outputs(&first));
    }
    let total_cuts = cuts.len();

    let a = verdict(
        "determinism",
        same && has_interventions,
        "two runs with the same inputs and script give identical image and provenance bytes",
    );
    let b = verdict(
        "replay",
        replay_same && resumed_same == total_cuts,
        format!("full replay matches, {resumed_same}/{total_cuts} resumed prefixes match"),
    );
    assert!(a && b);
}
