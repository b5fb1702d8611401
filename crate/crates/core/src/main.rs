use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use livemix::bleedsim::{apply_bleed, BleedConfig};
use livemix::dsp::{normalize_peak, AudioBuffer, FrameClock, RateMode, SpectralConfig};
use livemix::eval::{evaluate_with_timelines, parse_policies};
use livemix::model::{DmcBaseline, GainModel};
use livemix::scheduler::{run_offline, StreamConfig};
use livemix::session::{find_manifests, load_session, save_session, Channel, MultitrackSession};
use livemix::synth::{gen_synth, SynthSpec};
use livemix::training::{write_loss_csv, Head, TrainConfig, Trainer};
use livemix::wav::{write_wav, WavFormat};
use livemix::{Error, Result};

#[derive(Parser)]
#[command(name = "livemix", version, about = "Zero-latency multitrack gain mixing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a session through a trained model.
    Mix {
        #[arg(long)]
        session: PathBuf,
        #[arg(long, default_value = "mr")]
        mode: RateMode,
        #[arg(long)]
        weights: PathBuf,
        /// Gain head: alm or dmc.
        #[arg(long, default_value = "alm", value_parser = parse_head)]
        head: Head,
        #[arg(long)]
        out: PathBuf,
        /// Gains CSV; defaults to the output path with a `.gains.csv` suffix.
        #[arg(long)]
        gains: Option<PathBuf>,
    },
    /// Train on every manifest in a directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Start from these weights instead of a seeded initialization.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Loss log; defaults to the output path with a `.loss.csv` suffix.
        #[arg(long)]
        loss_log: Option<PathBuf>,
    },
    /// Corrupt a session's stems with simulated room bleed.
    SimulateBleed {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score gain policies against a session's reference mix.
    Eval {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value = "alm-mr,alm-sr,dmc,raw")]
        policies: String,
        #[arg(long)]
        out: PathBuf,
        /// CSV report; defaults to the output path with a `.csv` extension.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Generate a synthetic session with a known reference mix.
    GenSynth {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec duration in seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Write freshly initialized weights.
    InitWeights {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_head(s: &str) -> std::result::Result<Head, String> {
    match s {
        "alm" => Ok(Head::Alm),
        "dmc" => Ok(Head::Dmc),
        other => Err(format!("unknown head {other:?}")),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let mut w = create(path)?;
    f(&mut w).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn mix(session: &Path, mode: RateMode, weights: &Path, head: Head, out: &Path, gains: Option<PathBuf>) -> Result<()> {
    let s = load_session(session)?;
    let model = Arc::new(GainModel::load(weights)?);
    let clock = FrameClock::for_mode(mode, s.sample_rate)?;
    let cfg = StreamConfig::default();
    let (mix, timeline) = match head {
        Head::Alm => run_offline(&s.buffers(), &clock, &model, &cfg)?,
        Head::Dmc => run_offline(&s.buffers(), &clock, &DmcBaseline(model), &cfg)?,
    };
    write_wav(out, &mix, WavFormat::Float32)?;
    let gains = gains.unwrap_or_else(|| with_suffix(out, ".gains.csv"));
    write_with(&gains, |w| timeline.write_csv(w))?;
    log::info!("wrote {} and {}", out.display(), gains.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    data: &Path,
    config: Option<PathBuf>,
    out: &Path,
    init: Option<PathBuf>,
    epochs: Option<usize>,
    seed: Option<u64>,
    loss_log: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = match config {
        Some(p) => TrainConfig::load(&p)?,
        None => TrainConfig::default(),
    };
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let songs = find_manifests(data)?
        .iter()
        .map(|m| load_session(m)?.to_song())
        .collect::<Result<Vec<_>>>()?;
    if songs.is_empty() {
        return Err(Error::InvalidConfig(format!("no manifests under {}", data.display())));
    }
    let model = match init {
        Some(p) => GainModel::load(&p)?,
        None => GainModel::init(cfg.seed),
    };
    let every = cfg.checkpoint_every;
    let mut trainer = Trainer::new(model, cfg)?;
    trainer.run(&songs, |t, rec| {
        log::info!("epoch {} loss {:.6} lr {}", rec.epoch, rec.loss, rec.lr);
        if every > 0 && (rec.epoch + 1) % every == 0 {
            let ext = out.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
            t.model().save(&with_suffix(out, &format!(".epoch{:05}{ext}", rec.epoch + 1)))?;
        }
        Ok(())
    })?;
    trainer.model().save(out)?;
    let log_path = loss_log.unwrap_or_else(|| with_suffix(out, ".loss.csv"));
    write_with(&log_path, |w| write_loss_csv(w, trainer.history()))?;
    Ok(())
}

fn simulate_bleed(session: &Path, config: Option<PathBuf>, seed: u64, out: &Path) -> Result<()> {
    let s = load_session(session)?;
    let mut cfg = match config {
        Some(p) => {
            if !p.exists() {
                return Err(Error::MissingFile(p));
            }
            let text = std::fs::read_to_string(&p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
            serde_json::from_str::<BleedConfig>(&text)?
        }
        None => BleedConfig::default(),
    };
    cfg.seed = seed;
    cfg.validate()?;
    let stems = s.buffers();
    let (bled, meta) = apply_bleed(&stems, &cfg)?;
    // the ground truth stays the clean mix
    let clean = match &s.reference_mix {
        Some(r) => r.clone(),
        None => {
            let sum = (0..s.len()).map(|i| stems.iter().map(|b| b.samples()[i]).sum()).collect();
            AudioBuffer::new(sum, s.sample_rate)?
        }
    };
    let reference = if clean.peak() > 0.0 { normalize_peak(&clean, -6.0)? } else { clean };
    let channels = s
        .channels
        .iter()
        .zip(bled)
        .map(|(c, audio)| Channel {
            name: c.name.clone(),
            instrument: c.instrument.clone(),
            audio,
        })
        .collect();
    let out_session = MultitrackSession::new(channels, Some(reference), s.sample_rate)?;
    save_session(&out_session, out)?;
    let meta_path = out.join("bleed.json");
    write_with(&meta_path, |w| {
        serde_json::to_writer_pretty(&mut *w, &meta)?;
        Ok(())
    })?;
    Ok(())
}

fn eval(session: &Path, weights: Option<PathBuf>, policies: &str, out: &Path, csv: Option<PathBuf>) -> Result<()> {
    let s = load_session(session)?;
    let policies = parse_policies(policies)?;
    let model = weights.map(|p| GainModel::load(&p)).transpose()?.map(Arc::new);
    let (report, _) = evaluate_with_timelines(&s, model, &policies, &SpectralConfig::default())?;
    write_with(out, |w| {
        serde_json::to_writer_pretty(&mut *w, &report)?;
        Ok(())
    })?;
    let csv = csv.unwrap_or_else(|| out.with_extension("csv"));
    write_with(&csv, |w| report.write_csv(w))?;
    for p in &report.policies {
        println!(
            "{:<7} stft {:.4} clipped {} max_step {:.4}",
            p.policy, p.stft_distance, p.clipped_samples, p.max_gain_step
        );
    }
    Ok(())
}

fn gen(spec: Option<PathBuf>, seed: u64, out: &Path, duration: Option<f64>) -> Result<()> {
    let mut spec = match spec {
        Some(p) => SynthSpec::load(&p)?,
        None => SynthSpec::attenuate_second(10.0),
    };
    if let Some(d) = duration {
        spec.duration_secs = d;
    }
    let s = gen_synth(&spec, seed)?;
    save_session(&s, out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Mix {
            session,
            mode,
            weights,
            head,
            out,
            gains,
        } => mix(&session, mode, &weights, head, &out, gains),
        Command::Train {
            data,
            config,
            out,
            init,
            epochs,
            seed,
            loss_log,
        } => train(&data, config, &out, init, epochs, seed, loss_log),
        Command::SimulateBleed {
            session,
            config,
            seed,
            out,
        } => simulate_bleed(&session, config, seed, &out),
        Command::Eval {
            session,
            weights,
            policies,
            out,
            csv,
        } => eval(&session, weights, &policies, &out, csv),
        Command::GenSynth {
            spec,
            seed,
            out,
            duration,
        } => gen(spec, seed, &out, duration),
        Command::InitWeights { seed, out } => GainModel::init(seed).save(&out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
