//! Command implementations behind the `fcse` binary.
//!
//! Every command is deterministic given explicit seeds, never mutates its
//! inputs, and writes outputs atomically (temp file + rename).

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use fcse_core::audio_io::{read_wav, write_wav};
use fcse_core::dsp::{
    compute_norm_stats, frame_signal, mix_at_snr, mix_at_snr_seeded, FramingConfig,
};
use fcse_core::metrics::{aligned_snr_improvement_db, segmental_snr_db, si_sdr_db, snr_db};
use fcse_core::nn::{build_model, ModelSpec};
use fcse_core::pipeline::{
    denoise, finetune_from_manifest, load_clip_at_rate, prepare_clips, prepare_pairs,
    train_from_manifests, Checkpoint, DatasetManifest,
};
use fcse_core::train::{train, validation_mse, TrainConfig};
use fcse_core::{Error, Result};

pub const SWEEP_DEFAULT_MAX_EPOCHS: usize = 30;
pub const SWEEP_DEFAULT_PATIENCE: usize = 5;

#[derive(Parser)]
#[command(
    name = "fcse",
    about = "Fully convolutional speech enhancement: mix, train, fine-tune, denoise, and evaluate",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Additively combine clean speech with noise at a target SNR.
    Mix(MixArgs),
    /// Train a model from scratch on manifest-described data.
    Train(TrainArgs),
    /// Fine-tune a trained checkpoint on a new speaker's data.
    Finetune(FinetuneArgs),
    /// Denoise a WAV file with a trained checkpoint.
    Denoise(DenoiseArgs),
    /// Score a degraded clip against its reference.
    Eval(EvalArgs),
    /// Denoise across a grid of test SNRs and report SNR improvements.
    EvalMatrix(EvalMatrixArgs),
    /// Train every architecture in a grid file under a shared budget.
    Sweep(SweepArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Mix(args) => cmd_mix(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Finetune(args) => cmd_finetune(&args),
        Command::Denoise(args) => cmd_denoise(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::EvalMatrix(args) => cmd_eval_matrix(&args),
        Command::Sweep(args) => cmd_sweep(&args),
    }
}

/// Write a fully assembled text file through a temp file + rename.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn group_thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn fmt_db(v: f64) -> String {
    if v == f64::INFINITY {
        "+inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}

#[derive(Args)]
pub struct MixArgs {
    /// Clean speech WAV.
    #[arg(long)]
    pub clean: PathBuf,
    /// Noise WAV (at least as long as the clean clip).
    #[arg(long)]
    pub noise: PathBuf,
    /// Target SNR in dB.
    #[arg(long)]
    pub snr_db: f64,
    /// Output WAV path.
    #[arg(long)]
    pub out: PathBuf,
    /// Pick a seeded random offset into the noise instead of its start.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn cmd_mix(args: &MixArgs) -> Result<()> {
    let clean = read_wav(&args.clean)?;
    let noise = read_wav(&args.noise)?;
    let (mixture, scale) = match args.seed {
        Some(seed) => mix_at_snr_seeded(&clean, &noise, args.snr_db, seed)?,
        None => mix_at_snr(&clean, &noise, args.snr_db)?,
    };
    write_wav(&mixture, &args.out)?;
    println!("noise scale: {scale}");
    Ok(())
}

#[derive(Args)]
pub struct TrainArgs {
    /// Manifest of the training mixture.
    #[arg(long)]
    pub train_manifest: PathBuf,
    /// Manifest of the validation mixture.
    #[arg(long)]
    pub val_manifest: PathBuf,
    /// Architecture file: `conv <filters> <kernel_ms>` lines plus a final
    /// `output <kernel_ms>` line.
    #[arg(long)]
    pub arch: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 100)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the per-epoch CSV log here instead of stdout.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let framing = FramingConfig::default();
    let arch_text = std::fs::read_to_string(&args.arch)?;
    let spec = ModelSpec::from_arch_text(&arch_text, framing.frame_len, framing.sample_rate_hz)?;
    println!(
        "model: {} layers, {} parameters",
        spec.layers.len(),
        group_thousands(spec.param_count())
    );

    let train_manifest = DatasetManifest::load(&args.train_manifest)?;
    let val_manifest = DatasetManifest::load(&args.val_manifest)?;
    let cfg = TrainConfig {
        learning_rate: args.lr,
        batch_size: args.batch,
        max_epochs: args.max_epochs,
        patience: args.patience,
        shuffle_seed: args.seed,
        ..TrainConfig::default()
    };

    let mut log_buf = Vec::new();
    let mut stdout = std::io::stdout();
    let sink: &mut dyn Write = if args.log.is_some() { &mut log_buf } else { &mut stdout };
    let (checkpoint, report) = train_from_manifests(
        &spec,
        &framing,
        &train_manifest,
        &val_manifest,
        &cfg,
        args.seed,
        Some(sink),
    )?;
    if let Some(log_path) = &args.log {
        write_atomic(log_path, &String::from_utf8_lossy(&log_buf))?;
    }
    checkpoint.save(&args.out)?;

    match report.best_epoch {
        Some(best) => println!(
            "trained {} epochs; best val MSE {} at epoch {best}",
            report.epochs.len(),
            report.epochs[best].val_mse
        ),
        None => println!("trained 0 epochs; checkpoint holds the initialized model"),
    }
    println!("checkpoint: {}", args.out.display());
    Ok(())
}

#[derive(Args)]
pub struct FinetuneArgs {
    /// Trained checkpoint to start from.
    #[arg(long)]
    pub model: PathBuf,
    /// Manifest of the new speaker's data.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn cmd_finetune(args: &FinetuneArgs) -> Result<()> {
    let checkpoint = Checkpoint::load(&args.model)?;
    let manifest = DatasetManifest::load(&args.manifest)?;
    let cfg = TrainConfig {
        learning_rate: args.lr,
        batch_size: args.batch,
        shuffle_seed: args.seed,
        ..TrainConfig::default()
    };
    let tuned = finetune_from_manifest(&checkpoint, &manifest, args.epochs, &cfg)?;
    tuned.save(&args.out)?;
    println!("fine-tuned {} epochs; checkpoint: {}", args.epochs, args.out.display());
    Ok(())
}

#[derive(Args)]
pub struct DenoiseArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Noisy input WAV.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Denoised output WAV (one hop shorter on each side).
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_denoise(args: &DenoiseArgs) -> Result<()> {
    let checkpoint = Checkpoint::load(&args.model)?;
    let noisy = read_wav(&args.input)?;
    let cleaned = denoise(&checkpoint, &noisy)?;
    write_wav(&cleaned, &args.out)?;
    println!(
        "denoised {:.3} s -> {:.3} s: {}",
        noisy.duration_seconds(),
        cleaned.duration_seconds(),
        args.out.display()
    );
    Ok(())
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum MetricKind {
    /// Global SNR of the reference against the estimate.
    Snr,
    /// Scale-invariant SDR.
    SiSdr,
    /// Mean per-frame SNR, clamped to [-10, 35] dB.
    SegSnr,
}

impl MetricKind {
    fn name(self) -> &'static str {
        match self {
            MetricKind::Snr => "snr_db",
            MetricKind::SiSdr => "si_sdr_db",
            MetricKind::SegSnr => "segmental_snr_db",
        }
    }
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let flag = match self {
            MetricKind::Snr => "snr",
            MetricKind::SiSdr => "si-sdr",
            MetricKind::SegSnr => "seg-snr",
        };
        f.write_str(flag)
    }
}

#[derive(Args)]
pub struct EvalArgs {
    /// Reference (clean) WAV.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Degraded/estimated WAV.
    #[arg(long)]
    pub deg: PathBuf,
    /// Metrics to compute.
    #[arg(long, value_delimiter = ',', default_values_t = [MetricKind::Snr, MetricKind::SiSdr, MetricKind::SegSnr])]
    pub metrics: Vec<MetricKind>,
    /// Also write the CSV rows to this file.
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let reference = read_wav(&args.reference)?;
    let degraded = read_wav(&args.deg)?;
    let mut csv = String::from("metric,value,ref,est\n");
    for metric in &args.metrics {
        let value = match metric {
            MetricKind::Snr => snr_db(&reference, &degraded)?,
            MetricKind::SiSdr => si_sdr_db(&reference, &degraded)?,
            MetricKind::SegSnr => {
                let cfg = FramingConfig::new(320, 160, reference.sample_rate_hz)?;
                segmental_snr_db(&reference, &degraded, &cfg)?
            }
        };
        csv.push_str(&format!(
            "{},{},{},{}\n",
            metric.name(),
            fmt_db(value),
            args.reference.display(),
            args.deg.display()
        ));
    }
    print!("{csv}");
    if let Some(path) = &args.out_csv {
        write_atomic(path, &csv)?;
    }
    Ok(())
}

#[derive(Args)]
pub struct EvalMatrixArgs {
    /// Trained checkpoint(s); repeat the flag for one row per model.
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    /// Clean test speech WAV.
    #[arg(long)]
    pub clean: PathBuf,
    /// Test noise WAV.
    #[arg(long)]
    pub noise: PathBuf,
    /// Test SNRs in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [-5.0, 0.0, 5.0])]
    pub snrs: Vec<f64>,
    /// Output CSV path.
    #[arg(long)]
    pub out_csv: PathBuf,
    /// Seeded random offset into the noise.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn cmd_eval_matrix(args: &EvalMatrixArgs) -> Result<()> {
    let mut csv =
        String::from("model,train_snr_db,test_snr_db,input_snr_db,output_snr_db,improvement_db\n");
    for model_path in &args.models {
        let checkpoint = Checkpoint::load(model_path)?;
        let rate = checkpoint.framing.sample_rate_hz;
        let clean = load_clip_at_rate(&args.clean, rate)?;
        let noise = load_clip_at_rate(&args.noise, rate)?;
        for &snr in &args.snrs {
            let (mixture, _) = match args.seed {
                Some(seed) => mix_at_snr_seeded(&clean, &noise, snr, seed)?,
                None => mix_at_snr(&clean, &noise, snr)?,
            };
            let denoised = denoise(&checkpoint, &mixture)?;
            let (input_snr, output_snr) =
                aligned_snr_improvement_db(&clean, &mixture, &denoised, checkpoint.framing.hop)?;
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                model_path.display(),
                fmt_db(checkpoint.snr_tag_db),
                snr,
                fmt_db(input_snr),
                fmt_db(output_snr),
                fmt_db(output_snr - input_snr)
            ));
        }
    }
    print!("{csv}");
    write_atomic(&args.out_csv, &csv)?;
    Ok(())
}

#[derive(Args)]
pub struct SweepArgs {
    /// Grid file: one `depth filters kernel_ms activation` line per cell.
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub train_manifest: PathBuf,
    #[arg(long)]
    pub val_manifest: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    pub out_csv: PathBuf,
    #[arg(long, default_value_t = SWEEP_DEFAULT_MAX_EPOCHS)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = SWEEP_DEFAULT_PATIENCE)]
    pub patience: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub depth: usize,
    pub filters: usize,
    pub kernel_ms: f64,
    pub activation: String,
}

impl SweepCell {
    pub fn id(&self) -> String {
        format!("d{}_f{}_k{}_{}", self.depth, self.filters, self.kernel_ms, self.activation)
    }

    pub fn arch_text(&self) -> Result<String> {
        // The network's hidden blocks are conv + batchnorm + PReLU; no
        // other activation is available.
        if self.activation != "prelu" {
            return Err(Error::Spec(format!(
                "unsupported activation '{}' (only prelu)",
                self.activation
            )));
        }
        if self.depth == 0 {
            return Err(Error::Spec("depth must be >= 1".into()));
        }
        let mut text = String::new();
        for _ in 0..self.depth {
            text.push_str(&format!("conv {} {}\n", self.filters, self.kernel_ms));
        }
        text.push_str(&format!("output {}\n", self.kernel_ms));
        Ok(text)
    }
}

pub fn parse_grid(text: &str) -> Result<Vec<SweepCell>> {
    let mut cells = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 4 {
            return Err(Error::Spec(format!(
                "grid line {}: expected 'depth filters kernel_ms activation'",
                lineno + 1
            )));
        }
        cells.push(SweepCell {
            depth: tok[0]
                .parse()
                .map_err(|_| Error::Spec(format!("grid line {}: bad depth", lineno + 1)))?,
            filters: tok[1]
                .parse()
                .map_err(|_| Error::Spec(format!("grid line {}: bad filters", lineno + 1)))?,
            kernel_ms: tok[2]
                .parse()
                .map_err(|_| Error::Spec(format!("grid line {}: bad kernel_ms", lineno + 1)))?,
            activation: tok[3].to_string(),
        });
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub arch_id: String,
    pub param_count: Option<usize>,
    pub train_mse: Option<f64>,
    pub val_mse: Option<f64>,
    pub status: String,
}

/// Train every cell under the shared budget; a failing cell is recorded
/// and the sweep continues. Rows come back in grid order.
pub fn run_sweep(
    cells: &[SweepCell],
    train_manifest: &DatasetManifest,
    val_manifest: &DatasetManifest,
    framing: &FramingConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    // The data is shared by every cell; prepare it once.
    let train_clips = prepare_clips(train_manifest, framing)?;
    let stats = compute_norm_stats(&train_clips.clean)?;
    let train_noisy = frame_signal(&train_clips.mixture, framing, &stats)?;
    let train_clean = frame_signal(&train_clips.clean, framing, &stats)?;
    let (val_noisy, val_clean) = prepare_pairs(val_manifest, framing, &stats)?;

    let mut rows = Vec::with_capacity(cells.len());
    for cell in cells {
        let outcome = (|| -> Result<SweepRow> {
            let arch = cell.arch_text()?;
            let spec = ModelSpec::from_arch_text(&arch, framing.frame_len, framing.sample_rate_hz)?;
            let param_count = spec.param_count();
            let model = build_model::<f32>(&spec, seed)?;
            let (trained, report) = train(
                model,
                (&train_noisy, &train_clean),
                (&val_noisy, &val_clean),
                cfg,
                None,
            )?;
            let (train_mse, val_mse) = match report.best_epoch {
                Some(best) => (report.epochs[best].train_mse, report.epochs[best].val_mse),
                // Budget of zero epochs: score the initialized model.
                None => (
                    validation_mse(&trained, (&train_noisy, &train_clean))?,
                    validation_mse(&trained, (&val_noisy, &val_clean))?,
                ),
            };
            Ok(SweepRow {
                arch_id: cell.id(),
                param_count: Some(param_count),
                train_mse: Some(train_mse),
                val_mse: Some(val_mse),
                status: "ok".to_string(),
            })
        })();
        rows.push(outcome.unwrap_or_else(|e| SweepRow {
            arch_id: cell.id(),
            param_count: None,
            train_mse: None,
            val_mse: None,
            status: format!("failed: {}", e.to_string().replace(',', ";")),
        }));
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow], cfg: &TrainConfig) -> String {
    let mut csv = format!(
        "# sweep budget: max_epochs={} patience={} lr={} batch={}\n",
        cfg.max_epochs, cfg.patience, cfg.learning_rate, cfg.batch_size
    );
    csv.push_str("arch_id,param_count,train_mse,val_mse,status\n");
    for row in rows {
        let opt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.arch_id,
            row.param_count.map(|c| c.to_string()).unwrap_or_default(),
            opt(&row.train_mse),
            opt(&row.val_mse),
            row.status
        ));
    }
    csv
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let framing = FramingConfig::default();
    let cells = parse_grid(&std::fs::read_to_string(&args.grid)?)?;
    let train_manifest = DatasetManifest::load(&args.train_manifest)?;
    let val_manifest = DatasetManifest::load(&args.val_manifest)?;
    let cfg = TrainConfig {
        learning_rate: args.lr,
        batch_size: args.batch,
        max_epochs: args.max_epochs,
        patience: args.patience,
        shuffle_seed: args.seed,
        ..TrainConfig::default()
    };
    let rows = run_sweep(&cells, &train_manifest, &val_manifest, &framing, &cfg, args.seed)?;
    let csv = sweep_csv(&rows, &cfg);
    print!("{csv}");
    write_atomic(&args.out_csv, &csv)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thousands_grouping() {
        assert_eq!(group_thousands(0), "0");
        assert_eq!(group_thousands(999), "999");
        assert_eq!(group_thousands(2_266_736), "2,266,736");
    }

    #[test]
    fn grid_parsing() {
        let cells = parse_grid("# comment\n1 50 5 prelu\n5 200 2.5 prelu\n").unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].id(), "d1_f50_k5_prelu");
        assert_eq!(cells[1].kernel_ms, 2.5);
        assert!(parse_grid("1 50 5\n").is_err());
        assert!(parse_grid("x 50 5 prelu\n").is_err());
    }

    #[test]
    fn cell_arch_text_expands_depth() {
        let cell = SweepCell { depth: 2, filters: 8, kernel_ms: 1.0, activation: "prelu".into() };
        assert_eq!(cell.arch_text().unwrap(), "conv 8 1\nconv 8 1\noutput 1\n");
        let bad = SweepCell { depth: 2, filters: 8, kernel_ms: 1.0, activation: "relu".into() };
        assert!(bad.arch_text().is_err());
    }

    #[test]
    fn db_formatting_sentinels() {
        assert_eq!(fmt_db(f64::INFINITY), "+inf");
        assert_eq!(fmt_db(f64::NEG_INFINITY), "-inf");
        assert_eq!(fmt_db(2.5), "2.5");
    }
}
