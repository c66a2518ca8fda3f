use alstm_core::features::{BandPooling, CandidateBuilder, Featurizer, NUM_BINS};
use alstm_core::learn::{backward, init_params, TrainConfig};
use alstm_core::scene::{generate_scene, switching_schedule, SceneConfig};
use alstm_core::{attend_step, AttentionMatrix, AttentionMode, LstmState, ModelInput, ModelShape};
use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use std::hint::black_box;

fn scene() -> alstm_core::MultiChannelWaveform {
    let cfg = SceneConfig {
        channel_delays: vec![0, 40, 80, 120, 160],
        noise_schedule: switching_schedule(5, 2.0, 20.0, -5.0, (0.3, 0.8), 1),
        utterance_length: 2.0,
        ..SceneConfig::default()
    };
    generate_scene(&cfg).unwrap()
}

fn shape() -> ModelShape {
    ModelShape {
        num_channels: 5,
        window_len: 7,
        feat_dim: 40,
        num_bands: 40,
        hidden: 32,
        num_classes: 10,
        attention: AttentionMode::Learned { phase: true },
    }
}

fn input(wave: &alstm_core::MultiChannelWaveform) -> ModelInput {
    let f = Featurizer::new(wave.sample_rate).unwrap();
    let (features, pd) = f.featurize(wave).unwrap();
    let pooling = BandPooling::mel(NUM_BINS, 40, wave.sample_rate).unwrap();
    ModelInput {
        features,
        phase: Some(pd.pool(&pooling).unwrap()),
    }
}

fn features(c: &mut Criterion) {
    let wave = scene();
    let f = Featurizer::new(wave.sample_rate).unwrap();
    let mut g = c.benchmark_group("features");
    g.throughput(Throughput::Elements(wave.num_frames() as u64));
    g.bench_function("stft_1ch_2s", |b| b.iter(|| f.stft(black_box(&wave.samples[0])).unwrap()));
    g.bench_function("featurize_5ch_2s", |b| b.iter(|| f.featurize(black_box(&wave)).unwrap()));
    g.finish();
}

fn attention(c: &mut Criterion) {
    let wave = scene();
    let input = input(&wave);
    let params = init_params(shape(), &TrainConfig::default());
    let builder = CandidateBuilder::with_pooled(&input.features, input.phase.as_ref(), 7).unwrap();
    let window = builder.window(100).unwrap();
    let state = LstmState::zeros(32);
    let prev = AttentionMatrix::uniform(5, 7);
    let att = params.attention.as_ref().unwrap();
    c.bench_function("attend_step_5x7", |b| {
        b.iter(|| attend_step(black_box(&state.s), &prev, &window, att))
    });
}

fn model(c: &mut Criterion) {
    let wave = scene();
    let input = input(&wave);
    let params = init_params(shape(), &TrainConfig::default());
    let labels = wave.frame_labels.clone();
    let mut g = c.benchmark_group("model");
    g.throughput(Throughput::Elements(labels.len() as u64));
    g.sample_size(20);
    g.bench_function("forward_2s", |b| {
        b.iter(|| alstm_core::forward_utterance(black_box(&input), &params).unwrap())
    });
    g.bench_function("forward_backward_2s", |b| {
        b.iter(|| backward(black_box(&input), &labels, &params).unwrap())
    });
    g.finish();
}

criterion_group!(benches, features, attention, model);
criterion_main!(benches);
