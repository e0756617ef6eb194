//! Train a small denoiser on synthetic data and report SNR improvement.
//!
//! The clean "speech" is a sum of amplitude-modulated harmonics; the
//! "babble" is low-passed white noise. The two are mixed at 5 dB, a
//! four-hidden-layer network is trained on the frames, and a held-out
//! mixture is denoised and scored.
//!
//! Run with: cargo run --release -p fcse-core --example synthetic_denoiser

use fcse_core::dsp::{compute_norm_stats, frame_signal, mix_at_snr, FramingConfig};
use fcse_core::metrics::aligned_snr_improvement_db;
use fcse_core::nn::{build_model, ModelSpec};
use fcse_core::pipeline::{denoise, Checkpoint};
use fcse_core::synth::{am_harmonics, filtered_noise};
use fcse_core::train::{train, TrainConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let snr_db: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(5.0);
    let max_epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(40);
    let framing = FramingConfig::default();

    let train_speech = am_harmonics(8.0, 16000, 155.0, 5, 101);
    let train_noise = filtered_noise(8.0, 16000, 6000.0, 201);
    let val_speech = am_harmonics(3.0, 16000, 155.0, 5, 102);
    let val_noise = filtered_noise(3.0, 16000, 6000.0, 202);
    let test_speech = am_harmonics(3.0, 16000, 155.0, 5, 103);
    let test_noise = filtered_noise(3.0, 16000, 6000.0, 203);

    let (train_mix, _) = mix_at_snr(&train_speech, &train_noise, snr_db).unwrap();
    let (val_mix, _) = mix_at_snr(&val_speech, &val_noise, snr_db).unwrap();

    let stats = compute_norm_stats(&train_speech).unwrap();
    let pairs = |mix, clean| {
        (
            frame_signal(mix, &framing, &stats).unwrap(),
            frame_signal(clean, &framing, &stats).unwrap(),
        )
    };
    let (train_noisy, train_clean) = pairs(&train_mix, &train_speech);
    let (val_noisy, val_clean) = pairs(&val_mix, &val_speech);

    let arch = "conv 12 2\nconv 12 2\nconv 12 2\nconv 12 2\noutput 2\n";
    let spec = ModelSpec::from_arch_text(arch, framing.frame_len, framing.sample_rate_hz).unwrap();
    let model = build_model::<f32>(&spec, 7).unwrap();
    println!("architecture: 4 hidden layers, {} parameters", spec.param_count());

    let cfg = TrainConfig { max_epochs, batch_size: 64, ..TrainConfig::default() };
    let start = std::time::Instant::now();
    let (trained, report) = train(
        model,
        (&train_noisy, &train_clean),
        (&val_noisy, &val_clean),
        &cfg,
        Some(&mut std::io::stdout()),
    )
    .unwrap();
    println!(
        "trained {} epochs in {:.1} s (best val MSE {:.6})",
        report.epochs.len(),
        start.elapsed().as_secs_f64(),
        report.best_val_mse().unwrap()
    );

    let ckpt = Checkpoint::new(trained, stats, framing, snr_db, 7).unwrap();
    for test_snr in [-5.0, 0.0, 5.0] {
        let (test_mix, _) = mix_at_snr(&test_speech, &test_noise, test_snr).unwrap();
        let denoised = denoise(&ckpt, &test_mix).unwrap();
        let (input_snr, output_snr) =
            aligned_snr_improvement_db(&test_speech, &test_mix, &denoised, framing.hop).unwrap();
        println!(
            "held-out mixture at {test_snr} dB: input {input_snr:.2} dB -> output {output_snr:.2} dB ({:+.2} dB)",
            output_snr - input_snr
        );
    }
}
