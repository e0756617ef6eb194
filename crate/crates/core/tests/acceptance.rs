//! Acceptance suite: one test per criterion, each printing a PASS line
//! with the measured values (visible with `--nocapture`).
//!
//! The desk-scale criteria share trained models through `OnceLock` so the
//! expensive trainings run once per suite invocation.

use std::sync::OnceLock;

use fcse_core::audio_io::AudioClip;
use fcse_core::dsp::{
    compute_norm_stats, frame_signal, mix_at_snr, overlap_add, FramingConfig, NormStats,
};
use fcse_core::metrics::{aligned_snr_improvement_db, snr_db};
use fcse_core::nn::{
    build_model, conv1d_fft, conv1d_same, reference_arch_text, LayerSpec, ModelSpec,
};
use fcse_core::pipeline::{denoise, Checkpoint};
use fcse_core::synth::{am_harmonics, filtered_noise};
use fcse_core::train::{
    finetune, gradient_check, train, validation_mse, EarlyStopping, StopDecision, TrainConfig,
};
use ndarray::{Array, Array1, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn criterion_01_parameter_count_oracle() {
    let spec =
        ModelSpec::from_arch_text(reference_arch_text(), 320, 16000).expect("reference arch");
    let expected_layers: [usize; 16] = [
        972, 48, 3840, 24_025, 100, 8000, 100_050, 200, 16_000, 400_100, 400, 32_000, 1_600_200,
        800, 64_000, 16_001,
    ];
    assert_eq!(spec.layer_param_counts(), expected_layers, "per-layer parameter counts");
    assert_eq!(spec.param_count(), 2_266_736, "total parameter count");

    let model = build_model::<f32>(&spec, 0).unwrap();
    assert_eq!(model.param_count(), 2_266_736, "instantiated parameter count");
    println!("[PASS] criterion 1: parameter counts exact (total 2,266,736)");
}

#[test]
fn criterion_02_gradient_correctness() {
    // Two conv layers around batchnorm + PReLU cover every parameter class.
    let spec = ModelSpec::new(
        16,
        vec![
            LayerSpec::Conv1d { in_channels: 1, out_channels: 3, kernel_len: 5 },
            LayerSpec::BatchNorm { channels: 3 },
            LayerSpec::PRelu { channels: 3 },
            LayerSpec::Conv1d { in_channels: 3, out_channels: 1, kernel_len: 3 },
        ],
    )
    .unwrap();
    let mut model = build_model::<f64>(&spec, 42).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let input: Array3<f64> = Array::from_shape_fn((4, 1, 16), |_| rng.random_range(-1.0..1.0));
    let target: Array3<f64> = Array::from_shape_fn((4, 1, 16), |_| rng.random_range(-1.0..1.0));

    let max_rel = gradient_check(&mut model, &input, &target, 1e-5).unwrap();
    assert!(max_rel <= 1e-4, "max relative error {max_rel} exceeds 1e-4");
    println!("[PASS] criterion 2: gradients match finite differences (max rel err {max_rel:.2e})");
}

#[test]
fn criterion_03_cola_round_trip() {
    let cfg = FramingConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let len = rng.random_range(800..4000);
        let samples: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let clip = AudioClip::new(samples, 16000).unwrap();
        let stats = compute_norm_stats(&clip).unwrap();
        let batch = frame_signal(&clip, &cfg, &stats).unwrap();
        let rec = overlap_add(&batch, &stats).unwrap();
        let peak = clip.samples.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        for (i, &r) in rec.samples.iter().enumerate() {
            let rel = (r - clip.samples[cfg.hop + i]).abs() / peak;
            worst = worst.max(rel);
            assert!(rel <= 1e-6, "trial {trial}, sample {i}: relative error {rel}");
        }
    }
    println!("[PASS] criterion 3: COLA round trip on 100 signals (worst rel err {worst:.2e})");
}

#[test]
fn criterion_04_snr_mixing() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let len = rng.random_range(500..3000);
        let clean = AudioClip::new(
            (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
            16000,
        )
        .unwrap();
        let noise = AudioClip::new(
            (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
            16000,
        )
        .unwrap();
        for target in [-5.0, 0.0, 5.0] {
            let (mix, _) = mix_at_snr(&clean, &noise, target).unwrap();
            let measured = snr_db(&clean, &mix).unwrap();
            let err = (measured - target).abs();
            worst = worst.max(err);
            assert!(err < 1e-9, "trial {trial} at {target} dB: measured {measured}");
        }
    }
    println!("[PASS] criterion 4: mixture SNR within 1e-9 dB on 300 mixes (worst {worst:.2e} dB)");
}

#[test]
fn criterion_05_fft_direct_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for trial in 0..1000 {
        let b = rng.random_range(1..3);
        let ic = rng.random_range(1..4);
        let oc = rng.random_range(1..4);
        let t = rng.random_range(8..64);
        let k = rng.random_range(1..10);
        let input: Array3<f64> =
            Array::from_shape_fn((b, ic, t), |_| rng.random_range(-1.0..1.0));
        let weight: Array3<f64> =
            Array::from_shape_fn((oc, ic, k), |_| rng.random_range(-1.0..1.0));
        let bias: Array1<f64> = Array::from_shape_fn(oc, |_| rng.random_range(-1.0..1.0));

        let direct = conv1d_same(&input, &weight, &bias).unwrap();
        let fft = conv1d_fft(&input, &weight, &bias).unwrap();
        let peak = direct.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        for (a, d) in fft.iter().zip(direct.iter()) {
            let rel = (a - d).abs() / (1.0 + peak);
            worst = worst.max(rel);
            assert!(rel <= 1e-9, "trial {trial}: {a} vs {d}");
        }
    }
    println!("[PASS] criterion 5: FFT and direct convolution agree on 1000 pairs (worst rel {worst:.2e})");
}

#[test]
fn criterion_06_identity_task_training_sanity() {
    // Three hidden layers of 16 filters; clean = noisy frames.
    let framing = FramingConfig::default();
    let signal = filtered_noise(4.0, 16000, 6000.0, 66);
    let stats = compute_norm_stats(&signal).unwrap();
    let frames = frame_signal(&signal, &framing, &stats).unwrap();

    let arch = "conv 16 1\nconv 16 1\nconv 16 1\noutput 1\n";
    let spec = ModelSpec::from_arch_text(arch, framing.frame_len, framing.sample_rate_hz).unwrap();
    let model = build_model::<f32>(&spec, 6).unwrap();

    let cfg = TrainConfig {
        max_epochs: 50,
        batch_size: 32,
        learning_rate: 2e-3,
        ..TrainConfig::default()
    };
    let (_, report) = train(model, (&frames, &frames), (&frames, &frames), &cfg, None).unwrap();
    let initial = report.epochs.first().unwrap().train_mse;
    let final_mse = report.epochs.last().unwrap().train_mse;
    assert!(
        final_mse < 0.01 * initial,
        "identity task: initial {initial}, final {final_mse} ({}%)",
        100.0 * final_mse / initial
    );
    println!(
        "[PASS] criterion 6: identity task MSE fell to {:.3}% of epoch 0 in {} epochs",
        100.0 * final_mse / initial,
        report.epochs.len()
    );
}

/// Shared desk-scale setup: synthetic speaker + babble, one trained model
/// per training SNR.
struct DeskSetup {
    framing: FramingConfig,
    checkpoint: Checkpoint,
    test_speech: AudioClip,
    test_noise: AudioClip,
}

fn train_desk_model(train_snr_db: f64) -> DeskSetup {
    let framing = FramingConfig::default();
    let train_speech = am_harmonics(8.0, 16000, 155.0, 5, 101);
    let train_noise = filtered_noise(8.0, 16000, 6000.0, 201);
    let val_speech = am_harmonics(3.0, 16000, 155.0, 5, 102);
    let val_noise = filtered_noise(3.0, 16000, 6000.0, 202);
    let test_speech = am_harmonics(3.0, 16000, 155.0, 5, 103);
    let test_noise = filtered_noise(3.0, 16000, 6000.0, 203);

    let (train_mix, _) = mix_at_snr(&train_speech, &train_noise, train_snr_db).unwrap();
    let (val_mix, _) = mix_at_snr(&val_speech, &val_noise, train_snr_db).unwrap();

    let stats = compute_norm_stats(&train_speech).unwrap();
    let frames = |clip: &AudioClip| frame_signal(clip, &framing, &stats).unwrap();

    // Four hidden layers of 12 filters with 2 ms kernels.
    let arch = "conv 12 2\nconv 12 2\nconv 12 2\nconv 12 2\noutput 2\n";
    let spec = ModelSpec::from_arch_text(arch, framing.frame_len, framing.sample_rate_hz).unwrap();
    let model = build_model::<f32>(&spec, 7).unwrap();

    let cfg = TrainConfig { max_epochs: 40, batch_size: 64, ..TrainConfig::default() };
    let (trained, _) = train(
        model,
        (&frames(&train_mix), &frames(&train_speech)),
        (&frames(&val_mix), &frames(&val_speech)),
        &cfg,
        None,
    )
    .unwrap();

    DeskSetup {
        framing,
        checkpoint: Checkpoint::new(trained, stats, framing, train_snr_db, 7).unwrap(),
        test_speech,
        test_noise,
    }
}

fn desk_5db() -> &'static DeskSetup {
    static SETUP: OnceLock<DeskSetup> = OnceLock::new();
    SETUP.get_or_init(|| train_desk_model(5.0))
}

fn desk_0db() -> &'static DeskSetup {
    static SETUP: OnceLock<DeskSetup> = OnceLock::new();
    SETUP.get_or_init(|| train_desk_model(0.0))
}

#[test]
fn criterion_07_desk_scale_denoising() {
    let setup = desk_5db();
    let (test_mix, _) = mix_at_snr(&setup.test_speech, &setup.test_noise, 5.0).unwrap();
    let denoised = denoise(&setup.checkpoint, &test_mix).unwrap();
    let (input_snr, output_snr) =
        aligned_snr_improvement_db(&setup.test_speech, &test_mix, &denoised, setup.framing.hop)
            .unwrap();
    let gain = output_snr - input_snr;
    assert!(gain >= 5.0, "SNR improvement {gain:.2} dB below 5 dB");
    println!(
        "[PASS] criterion 7: held-out mixture improved {input_snr:.2} -> {output_snr:.2} dB ({gain:+.2} dB >= +5)"
    );
}

#[test]
fn criterion_08_cross_snr_robustness() {
    let setup = desk_0db();
    let mut report = Vec::new();
    for test_snr in [-5.0, 0.0, 5.0] {
        let (test_mix, _) = mix_at_snr(&setup.test_speech, &setup.test_noise, test_snr).unwrap();
        let denoised = denoise(&setup.checkpoint, &test_mix).unwrap();
        let (input_snr, output_snr) = aligned_snr_improvement_db(
            &setup.test_speech,
            &test_mix,
            &denoised,
            setup.framing.hop,
        )
        .unwrap();
        let gain = output_snr - input_snr;
        assert!(
            gain >= 2.0,
            "trained at 0 dB, tested at {test_snr} dB: improvement {gain:.2} dB below 2 dB"
        );
        report.push(format!("{test_snr} dB: {gain:+.2}"));
    }
    println!(
        "[PASS] criterion 8: 0 dB model improves every test point ({})",
        report.join(", ")
    );
}

#[test]
fn criterion_09_finetuning_protocol() {
    let setup = desk_5db();
    // A pitch-shifted synthetic speaker; pairs use the ORIGINAL stats.
    let tune_speech = am_harmonics(4.0, 16000, 210.0, 5, 301);
    let tune_noise = filtered_noise(4.0, 16000, 6000.0, 302);
    let held_speech = am_harmonics(3.0, 16000, 210.0, 5, 303);
    let held_noise = filtered_noise(3.0, 16000, 6000.0, 304);
    let (tune_mix, _) = mix_at_snr(&tune_speech, &tune_noise, 5.0).unwrap();
    let (held_mix, _) = mix_at_snr(&held_speech, &held_noise, 5.0).unwrap();

    let stats = &setup.checkpoint.stats;
    let frames = |clip: &AudioClip| frame_signal(clip, &setup.framing, stats).unwrap();
    let tune_pairs = (frames(&tune_mix), frames(&tune_speech));
    let held_pairs = (frames(&held_mix), frames(&held_speech));

    let before = validation_mse(&setup.checkpoint.model, (&held_pairs.0, &held_pairs.1)).unwrap();
    let cfg = TrainConfig { batch_size: 64, ..TrainConfig::default() };
    let tuned = finetune(
        setup.checkpoint.model.clone(),
        (&tune_pairs.0, &tune_pairs.1),
        5,
        &cfg,
    )
    .unwrap();
    let after = validation_mse(&tuned, (&held_pairs.0, &held_pairs.1)).unwrap();

    assert!(
        after < before,
        "held-out MSE did not strictly decrease: {before} -> {after}"
    );
    println!(
        "[PASS] criterion 9: 5-epoch fine-tune cut held-out MSE {before:.5} -> {after:.5} ({:.1}%)",
        100.0 * after / before
    );
}

#[test]
fn criterion_10_early_stopping_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for case in 0..20 {
        let patience = rng.random_range(1..15usize);
        let max_epochs = rng.random_range(10..80usize);
        let losses: Vec<f64> = (0..max_epochs).map(|_| rng.random_range(0.0..10.0)).collect();

        // Independent simulation of the contract.
        let mut best = f64::INFINITY;
        let mut best_epoch = 0usize;
        let mut expected_stop = None;
        for (e, &l) in losses.iter().enumerate() {
            if l < best {
                best = l;
                best_epoch = e;
            } else if e - best_epoch >= patience {
                expected_stop = Some(e);
                break;
            }
        }
        let expected_epochs_run = expected_stop.map(|e| e + 1).unwrap_or(max_epochs);
        let expected_argmin = losses[..expected_epochs_run]
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();

        let mut es = EarlyStopping::new(patience);
        let mut run = 0usize;
        for (e, &l) in losses.iter().enumerate().take(max_epochs) {
            run += 1;
            if es.observe(e, l) == StopDecision::Stop {
                break;
            }
        }
        assert_eq!(run, expected_epochs_run, "case {case}: epochs run");
        assert_eq!(es.best_epoch(), Some(expected_argmin), "case {case}: argmin snapshot");
    }
    println!("[PASS] criterion 10: early stopping matched the argmin/patience contract on 20 sequences");
}

#[test]
fn criterion_11_checkpoint_round_trip() {
    let framing = FramingConfig::default();
    let spec =
        ModelSpec::from_arch_text(reference_arch_text(), framing.frame_len, framing.sample_rate_hz)
            .unwrap();
    let model = build_model::<f32>(&spec, 11).unwrap();
    let ckpt =
        Checkpoint::new(model, NormStats::new(0.002, 0.11).unwrap(), framing, 5.0, 11).unwrap();
    assert_eq!(ckpt.param_count(), 2_266_736);

    let bytes = ckpt.to_bytes();
    let loaded = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(loaded.param_count(), 2_266_736);
    let bytes2 = loaded.to_bytes();
    assert_eq!(bytes, bytes2, "save -> load -> save must be byte-identical");

    let mut corrupted = bytes.clone();
    let idx = bytes.len() / 2;
    corrupted[idx] ^= 0x40;
    assert!(Checkpoint::from_bytes(&corrupted).is_err(), "corruption must be detected");
    println!("[PASS] criterion 11: checkpoint round trip byte-identical, corruption detected");
}
