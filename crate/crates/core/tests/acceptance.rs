//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset: `cargo test -p alstm-core --test acceptance -- 1 4 9`.

mod common;

use alstm_core::acoustic::forward_utterance;
use alstm_core::attend::{attend_step, AttentionMatrix};
use alstm_core::features::{CandidateBuilder, Featurizer, FFT_SIZE};
use alstm_core::harness::experiment::{attention_mass_from_traces, CHECKPOINT_FILE, HISTORY_FILE};
use alstm_core::harness::{compare, run_experiment, Checkpoint, CheckpointError, ExperimentConfig, Variant};
use alstm_core::learn::backward;
use alstm_core::params::{AttentionMode, ModelShape};
use alstm_core::scene::{constant_schedule, delay_and_sum, mean_power, render_scene, SceneConfig};
use alstm_core::MultiChannelWaveform;
use common::{finite_difference_check, random_input, random_params, tiny_shape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn repo_config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn work_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn gradient_correctness() -> Outcome {
    let started = Instant::now();
    let shape = tiny_shape();
    let frames = 5;
    let params = random_params(shape, 0.5, 11);
    let input = random_input(&shape, frames, 12);
    let labels: Vec<usize> = (0..frames).map(|t| (3 * t + 1) % shape.num_classes).collect();
    let (_, grads) = backward(&input, &labels, &params).map_err(|e| e.to_string())?;
    let errors = finite_difference_check(&input, &labels, &params, &grads, 1e-5);
    let names: Vec<&str> = errors.iter().map(|(n, _)| *n).collect();
    ensure(names.len() == 15, || format!("expected 15 parameter blocks, got {names:?}"))?;
    let (worst_name, worst) = errors
        .iter()
        .copied()
        .fold(("", 0.0f64), |acc, e| if e.1 > acc.1 { e } else { acc });
    let secs = started.elapsed().as_secs_f64();
    ensure(worst <= 1e-4, || format!("{worst_name}: relative error {worst:e}"))?;
    ensure(secs < 30.0, || format!("took {secs:.1}s"))?;
    Ok(format!("15 blocks, worst {worst:.2e} ({worst_name}), {secs:.1}s"))
}

fn attention_invariants() -> Outcome {
    let lo = 1.0 / (1.0 + 34.0 * 1f64.exp().powi(2));
    let hi = 1.0 / (1.0 + 34.0 * (-2f64).exp());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut steps = 0usize;
    let (mut min_seen, mut max_seen, mut worst_sum) = (1.0f64, 0.0f64, 0.0f64);
    let mut check = |a: &AttentionMatrix| -> Result<(), String> {
        let v = a.values();
        let sum: f64 = v.iter().sum();
        let (mn, mx) = v.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
        worst_sum = worst_sum.max((sum - 1.0).abs());
        min_seen = min_seen.min(mn);
        max_seen = max_seen.max(mx);
        ensure((sum - 1.0).abs() <= 1e-12, || format!("sum {sum}"))?;
        ensure(mn >= 0.0, || format!("negative entry {mn}"))?;
        ensure(mn >= lo * (1.0 - 1e-12) && mx <= hi * (1.0 + 1e-12), || {
            format!("entry outside [{lo}, {hi}]: {mn} .. {mx}")
        })
    };
    let shape = ModelShape {
        num_channels: 5,
        window_len: 7,
        feat_dim: 40,
        num_bands: 40,
        hidden: 16,
        num_classes: 10,
        attention: AttentionMode::Learned { phase: true },
    };
    // whole utterances through the model, weights large enough to saturate
    for u in 0..10 {
        let params = random_params(shape, 0.2 + 0.3 * u as f64, 100 + u);
        let input = random_input(&shape, 50, 200 + u);
        let trace = forward_utterance(&input, &params).map_err(|e| e.to_string())?;
        for a in &trace.attention {
            check(a)?;
            steps += 1;
        }
    }
    // isolated steps with arbitrary state and previous attention
    let params = random_params(shape, 1.0, 7);
    let input = random_input(&shape, 40, 8);
    let builder = CandidateBuilder::with_pooled(&input.features, input.phase.as_ref(), 7)
        .map_err(|e| e.to_string())?;
    let att = params.attention.as_ref().unwrap();
    while steps < 1000 {
        let t = rng.random_range(0..40);
        let window = builder.window(t).map_err(|e| e.to_string())?;
        let s: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let raw: Vec<f64> = (0..35).map(|_| rng.random_range(0.0..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let prev = AttentionMatrix::from_values(5, 7, raw.iter().map(|v| v / total).collect());
        let (a, _) = attend_step(&s, &prev, &window, att);
        check(&a)?;
        steps += 1;
    }
    Ok(format!(
        "{steps} steps, |sum-1| <= {worst_sum:.1e}, entries in [{min_seen:.5}, {max_seen:.5}]"
    ))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Plain LSTM over `x_t` read straight from the weight matrices.
fn plain_lstm(x: &[Vec<f64>], p: &alstm_core::LstmParams) -> Vec<Vec<f64>> {
    let h = p.hidden();
    let k = p.num_classes();
    let mut c = vec![0.0; h];
    let mut s = vec![0.0; h];
    let mut out = Vec::new();
    for xt in x {
        let pre = |wx: &alstm_core::Matrix, wh: &alstm_core::Matrix, j: usize| {
            let a: f64 = xt.iter().enumerate().map(|(r, v)| v * wx.get(r, j)).sum();
            let b: f64 = s.iter().enumerate().map(|(r, v)| v * wh.get(r, j)).sum();
            a + b
        };
        let mut next_c = vec![0.0; h];
        let mut next_s = vec![0.0; h];
        for j in 0..h {
            let i = sigmoid(pre(&p.w_xi, &p.w_hi, j));
            let f = sigmoid(pre(&p.w_xf, &p.w_hf, j));
            let g = pre(&p.w_xc, &p.w_hc, j).tanh();
            let o = sigmoid(pre(&p.w_xo, &p.w_ho, j));
            next_c[j] = f * c[j] + i * g;
            next_s[j] = o * next_c[j].tanh();
        }
        c = next_c;
        s = next_s;
        let logits: Vec<f64> = (0..k)
            .map(|j| p.b_out[j] + s.iter().enumerate().map(|(r, v)| v * p.w_out.get(r, j)).sum::<f64>())
            .collect();
        let m = logits.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        out.push(e.iter().map(|v| v / z).collect());
    }
    out
}

fn degeneration_equivalence() -> Outcome {
    let shape = ModelShape {
        num_channels: 1,
        window_len: 1,
        feat_dim: 40,
        num_bands: 40,
        hidden: 12,
        num_classes: 6,
        attention: AttentionMode::Learned { phase: false },
    };
    let mut worst = 0.0f64;
    for u in 0..10u64 {
        let params = random_params(shape, 0.3, 300 + u);
        let frames = 20 + 3 * u as usize;
        let input = random_input(&shape, frames, 400 + u);
        let trace = forward_utterance(&input, &params).map_err(|e| e.to_string())?;
        for a in &trace.attention {
            ensure(a.values() == [1.0], || format!("1x1 attention is {:?}", a.values()))?;
        }
        let x: Vec<Vec<f64>> = (0..frames).map(|t| input.features.frame(t, 0).to_vec()).collect();
        let reference = plain_lstm(&x, &params.lstm);
        for (t, r) in reference.iter().enumerate() {
            for (k, v) in r.iter().enumerate() {
                worst = worst.max((trace.probs.get(t, k) - v).abs());
            }
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("10 utterances, max |diff| {worst:.1e}"))
}

fn phase_difference_oracle() -> Outcome {
    let sr = 16_000u32;
    let featurizer = Featurizer::new(sr).map_err(|e| e.to_string())?;
    let len = 3200;
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..20usize {
        // bins at multiples of 16 see no window leakage from the mirror image
        let k = 16 * (1 + i % 15);
        let delay = 1 + (7 * i) % 23;
        let w = 2.0 * PI * k as f64 / FFT_SIZE as f64;
        let phi = rng.random_range(0.0..2.0 * PI);
        let a: Vec<f64> = (0..len).map(|n| (w * n as f64 + phi).cos()).collect();
        let b: Vec<f64> = (0..len).map(|n| (w * (n as f64 - delay as f64) + phi).cos()).collect();
        let wave = MultiChannelWaveform::new(vec![a, b], sr, vec![], vec![]).map_err(|e| e.to_string())?;
        let (_, pd) = featurizer.featurize(&wave).map_err(|e| e.to_string())?;
        let wrapped = (w * delay as f64).rem_euclid(2.0 * PI);
        let expected = if wrapped > PI { 2.0 * PI - wrapped } else { wrapped };
        for t in 0..pd.num_frames() {
            let row = pd.frame(t, 0);
            worst = worst.max((row[k - 1] - expected).abs());
            ensure(row.iter().all(|v| (0.0..=PI).contains(v)), || format!("pd outside [0, pi] at frame {t}"))?;
        }
    }
    ensure(worst <= 1e-6, || format!("worst tone-bin error {worst:e}"))?;
    // arbitrary signals stay in range too
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chans = (0..3).map(|_| (0..1600).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let wave = MultiChannelWaveform::new(chans, sr, vec![], vec![]).map_err(|e| e.to_string())?;
        let (_, pd) = featurizer.featurize(&wave).map_err(|e| e.to_string())?;
        ensure(pd.values().iter().all(|v| (0.0..=PI).contains(v)), || "noise pd outside [0, pi]".into())?;
    }
    Ok(format!("20 (bin, delay) pairs, worst error {worst:.1e}; all values in [0, pi]"))
}

fn delay_and_sum_gain() -> Outcome {
    let started = Instant::now();
    let delays = vec![0, 13, 29, 41, 57];
    let max_delay = 57;
    let trials = 120;
    let mut gains = Vec::with_capacity(trials);
    for trial in 0..trials as u64 {
        let cfg = SceneConfig {
            num_channels: 5,
            utterance_length: 0.5,
            channel_delays: delays.clone(),
            noise_schedule: constant_schedule(&[0.0; 5], 0.5),
            seed: 1000 + trial,
            ..SceneConfig::default()
        };
        let render = render_scene(&cfg).map_err(|e| e.to_string())?;
        let len = render.clean.len();
        let as_wave = |chans: &[Vec<f64>]| MultiChannelWaveform::new(chans.to_vec(), cfg.sample_rate, vec![], vec![]);
        let sig = delay_and_sum(&as_wave(&render.delayed).map_err(|e| e.to_string())?, &delays)
            .map_err(|e| e.to_string())?;
        let noise = delay_and_sum(&as_wave(&render.noise).map_err(|e| e.to_string())?, &delays)
            .map_err(|e| e.to_string())?;
        let valid = len - max_delay;
        let out_snr = mean_power(&sig[..valid]) / mean_power(&noise[..valid]);
        let in_snr: f64 = (0..5)
            .map(|c| {
                let d = delays[c];
                10.0 * (mean_power(&render.delayed[c][d..d + valid]) / mean_power(&render.noise[c][d..d + valid])).log10()
            })
            .sum::<f64>()
            / 5.0;
        gains.push(10.0 * out_snr.log10() - in_snr);
    }
    let mean = gains.iter().sum::<f64>() / gains.len() as f64;
    let secs = started.elapsed().as_secs_f64();
    ensure((mean - 10.0 * 5f64.log10()).abs() <= 0.5, || format!("mean gain {mean:.3} dB"))?;
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{trials} trials, mean gain {mean:.3} dB, {secs:.1}s"))
}

const LINEUP: [Variant; 5] = [
    Variant::SingleChannel,
    Variant::Concat,
    Variant::Beamformed,
    Variant::Alstm,
    Variant::AlstmPhase,
];

fn ordering_replication() -> Outcome {
    let mut alstm_wins = 0;
    let mut phase_wins = 0;
    let mut notes = Vec::new();
    let mut slowest = 0.0f64;
    for seed in 1..=3u64 {
        let base = repo_config("reliability.cfg").with_seed(seed);
        let mut configs = Vec::new();
        for v in LINEUP {
            let mut cfg = base.clone();
            cfg.model.variant = v;
            cfg.output = work_dir(&format!("reliability-seed{seed}"));
            run_experiment(&cfg).map_err(|e| format!("seed {seed} {v}: {e}"))?;
            configs.push(cfg);
        }
        let table = compare(&configs).map_err(|e| e.to_string())?;
        let csv = table.to_csv();
        let csv_path = configs[0].output.join("compare.csv");
        std::fs::write(&csv_path, &csv).map_err(|e| e.to_string())?;
        println!("seed {seed} compare table ({}):\n{csv}", csv_path.display());
        let acc = |v: Variant| table.row(v.name()).unwrap().summary.test_frame_accuracy;
        for r in &table.rows {
            slowest = slowest.max(r.train_seconds);
        }
        let (concat, alstm, phase) = (acc(Variant::Concat), acc(Variant::Alstm), acc(Variant::AlstmPhase));
        alstm_wins += (alstm > concat) as usize;
        phase_wins += (phase >= alstm) as usize;
        notes.push(format!("s{seed}: concat {concat:.4} alstm {alstm:.4} phase {phase:.4}"));
    }
    let detail = format!("{}; slowest variant {slowest:.0}s", notes.join(", "));
    ensure(alstm_wins == 3, || format!("alstm > concat on {alstm_wins}/3 seeds ({detail})"))?;
    ensure(phase_wins >= 2, || format!("alstm_phase >= alstm on {phase_wins}/3 seeds ({detail})"))?;
    ensure(slowest <= 300.0, || format!("a variant trained for {slowest:.0}s"))?;
    Ok(detail)
}

fn attention_localization() -> Outcome {
    let mut notes = Vec::new();
    let mut failures = Vec::new();
    for seed in 1..=3u64 {
        let mut cfg = repo_config("localization.cfg").with_seed(seed);
        cfg.model.variant = Variant::Alstm;
        cfg.output = work_dir(&format!("localization-seed{seed}"));
        let summary = run_experiment(&cfg).map_err(|e| format!("seed {seed}: {e}"))?;
        let mass = summary.clean_channel_mass.ok_or("no attention mass reported")?;
        let recomputed = attention_mass_from_traces(&cfg.run_dir()).map_err(|e| e.to_string())?;
        ensure((mass - recomputed).abs() <= 1e-12, || {
            format!("seed {seed}: summary mass {mass} vs traces {recomputed}")
        })?;
        let target = 2.0 / cfg.scene.num_channels as f64;
        if mass < target {
            failures.push(seed);
        }
        notes.push(format!("s{seed}: {mass:.3}"));
    }
    let detail = format!("clean-channel mass {} (need >= 0.400)", notes.join(", "));
    ensure(failures.is_empty(), || format!("below 2/N on seeds {failures:?}: {detail}"))?;
    Ok(detail)
}

fn determinism() -> Outcome {
    let mut cfg = repo_config("smoke.cfg");
    cfg.output = work_dir("determinism");
    let run = |cfg: &ExperimentConfig| -> Result<(Vec<u8>, Vec<u8>), String> {
        run_experiment(cfg).map_err(|e| e.to_string())?;
        let read = |f: &str| std::fs::read(cfg.run_dir().join(f)).map_err(|e| e.to_string());
        Ok((read(HISTORY_FILE)?, read(CHECKPOINT_FILE)?))
    };
    let first = run(&cfg)?;
    let second = run(&cfg)?;
    ensure(first.0 == second.0, || "history CSVs differ".into())?;
    ensure(first.1 == second.1, || "checkpoints differ".into())?;
    let mut reseeded = cfg.clone().with_seed(cfg.train.seed + 1);
    reseeded.output = work_dir("determinism-reseeded");
    let third = run(&reseeded)?;
    ensure(third.1 != first.1, || "a different seed produced the same checkpoint".into())?;
    Ok(format!(
        "history {} B and checkpoint {} B identical across reruns",
        first.0.len(),
        first.1.len()
    ))
}

fn checkpoint_round_trip() -> Outcome {
    let mut cfg = repo_config("smoke.cfg");
    cfg.output = work_dir("checkpoint");
    run_experiment(&cfg).map_err(|e| e.to_string())?;
    let path = cfg.run_dir().join(CHECKPOINT_FILE);
    let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    let loaded = alstm_core::harness::load_checkpoint(&path).map_err(|e| e.to_string())?;
    let copy = path.with_extension("copy.amck");
    alstm_core::harness::save_checkpoint(&copy, &loaded).map_err(|e| e.to_string())?;
    ensure(std::fs::read(&copy).map_err(|e| e.to_string())? == bytes, || "save(load(x)) != x".into())?;
    let params = loaded.to_params(cfg.model_shape()).map_err(|e| e.to_string())?;
    let again = Checkpoint::new(&params, loaded.config.clone(), loaded.epoch, loaded.rng);
    ensure(again.encode() == bytes, || "re-encoding parameters changed bytes".into())?;

    let mut rejected = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut corrupt = |mutate: &dyn Fn(&mut Vec<u8>, &mut ChaCha8Rng)| -> Result<(), String> {
        let mut b = bytes.clone();
        mutate(&mut b, &mut rng);
        match catch_unwind(|| Checkpoint::decode(&b)) {
            Ok(Err(_)) => {
                rejected += 1;
                Ok(())
            }
            Ok(Ok(_)) => Err("corrupted checkpoint accepted".into()),
            Err(_) => Err("decoder panicked".into()),
        }
    };
    corrupt(&|b, _| b[0] = b'Z')?;
    corrupt(&|b, _| b[4] = 9)?;
    corrupt(&|b, _| b.truncate(b.len() / 2))?;
    corrupt(&|b, _| b.truncate(3))?;
    corrupt(&|b, _| b.push(0))?;
    for _ in 0..50 {
        corrupt(&|b, rng| {
            let i = rng.random_range(0..b.len());
            b[i] ^= 1 << rng.random_range(0..8);
        })?;
    }
    for _ in 0..50 {
        corrupt(&|b, rng| {
            let n = rng.random_range(0..b.len());
            b.truncate(n);
        })?;
    }
    let mut bigger = cfg.model_shape();
    bigger.hidden *= 2;
    let err = loaded.to_params(bigger).unwrap_err();
    ensure(matches!(err, CheckpointError::ShapeMismatch { .. }), || format!("unexpected {err}"))?;
    Ok(format!("{} B round trip identical; {rejected} corruptions rejected; {err}", bytes.len()))
}

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "gradient correctness", gradient_correctness),
        (2, "attention invariants", attention_invariants),
        (3, "degeneration equivalence", degeneration_equivalence),
        (4, "phase-difference oracle", phase_difference_oracle),
        (5, "delay-and-sum gain", delay_and_sum_gain),
        (6, "lineup ordering", ordering_replication),
        (7, "attention localization", attention_localization),
        (8, "determinism", determinism),
        (9, "checkpoint round trip", checkpoint_round_trip),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id} {name}: PASS [{secs:.1}s] {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} {name}: FAIL [{secs:.1}s] {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
