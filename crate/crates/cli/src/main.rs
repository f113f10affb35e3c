use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use diarize_core::audio::load_wav;
use diarize_core::config::{PipelineConfig, CONFIG_KEYS};
use diarize_core::embedding::write_embeddings;
use diarize_core::pipeline::{dump_files, run, Input, OracleOptions};
use diarize_core::plda::{write_plda, PldaGenerator};
use diarize_core::rttm::{self, der};
use diarize_core::scoring::write_scores;
use diarize_core::synthgen::{self, MeetingSpec};

#[derive(Parser)]
#[command(name = "diarize", version, about = "Speaker diarization with powerset segmentation and VBx clustering")]
struct Cli {
    /// More log output (repeat for debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` configuration file
    #[arg(long, env = "DIARIZE_CONFIG")]
    config: Option<PathBuf>,

    /// Override one configuration key, e.g. `--set ahc_threshold=0.5`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("override `{kv}` is not KEY=VALUE"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct OracleArgs {
    /// Probability mass the oracle scorer puts on the true class
    #[arg(long, default_value_t = 0.95)]
    p_correct: f64,

    /// Between/within speaker variance ratio of the synthetic PLDA model
    #[arg(long, default_value_t = 100.0)]
    separation: f64,

    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl OracleArgs {
    fn options(&self) -> OracleOptions {
        OracleOptions {
            p_correct: self.p_correct,
            separation: self.separation,
            seed: self.seed,
            ..Default::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Diarize a recording and write `<session>.rttm`
    Diarize {
        /// WAV file; may be omitted with --oracle to run on the script alone
        wav: Option<PathBuf>,

        /// Frame scores to replay instead of a segmentation model
        #[arg(long, requires = "embeddings", conflicts_with = "oracle")]
        scores: Option<PathBuf>,

        /// Embeddings to replay instead of a speaker embedding model
        #[arg(long, requires = "scores")]
        embeddings: Option<PathBuf>,

        /// PLDA model for imported embeddings (default: synthetic, seeded)
        #[arg(long, requires = "scores")]
        plda: Option<PathBuf>,

        /// Reference script driving the oracle scorer and embedder
        #[arg(long, value_name = "SCRIPT")]
        oracle: Option<PathBuf>,

        #[arg(long, default_value = ".")]
        out: PathBuf,

        /// Also write every intermediate into `<out>/<session>.dump/`
        #[arg(long)]
        dump: bool,

        #[command(flatten)]
        config: ConfigArgs,

        #[command(flatten)]
        oracle_args: OracleArgs,
    },
    /// Diarization error rate of a hypothesis against a reference
    Score {
        reference: PathBuf,
        hypothesis: PathBuf,

        /// Seconds forgiven on both sides of every reference boundary
        #[arg(long, default_value_t = 0.0)]
        collar: f64,

        /// Leave out regions where the reference has overlapping speech
        #[arg(long)]
        skip_overlap: bool,
    },
    /// Generate a synthetic meeting script and optional oracle outputs
    Synth {
        #[arg(long, default_value_t = 4)]
        speakers: usize,

        #[arg(long, default_value_t = 60.0)]
        duration: f64,

        #[arg(long, default_value_t = 2.5)]
        mean_turn: f64,

        #[arg(long, default_value_t = 0.1)]
        overlap: f64,

        #[arg(long, default_value_t = 0.1)]
        silence: f64,

        /// Recording id, also the output file stem
        #[arg(long, default_value = "synth")]
        id: String,

        #[arg(long, default_value = ".")]
        out: PathBuf,

        /// Also write oracle frame scores
        #[arg(long)]
        scores: bool,

        /// Also write oracle embeddings and the PLDA model behind them
        #[arg(long)]
        embeddings: bool,

        #[command(flatten)]
        config: ConfigArgs,

        #[command(flatten)]
        oracle_args: OracleArgs,
    },
    /// Print a dump written by `diarize --dump`
    Inspect {
        dir: PathBuf,

        /// Pipeline block whose output to print (1, 3, 4, 5, 6 or 7)
        #[arg(long)]
        block: Option<usize>,
    },
    /// Write a synthetic PLDA model
    PldaGen {
        #[arg(long, default_value_t = 256)]
        dim: usize,

        #[arg(long, default_value_t = 128)]
        lda: usize,

        #[arg(long, default_value_t = 100.0)]
        separation: f64,

        #[arg(long, default_value_t = 0)]
        seed: u64,

        #[arg(long, default_value = "plda.txt")]
        out: PathBuf,
    },
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

#[allow(clippy::too_many_arguments)]
fn diarize(
    wav: Option<PathBuf>,
    scores: Option<PathBuf>,
    embeddings: Option<PathBuf>,
    plda: Option<PathBuf>,
    oracle: Option<PathBuf>,
    out: PathBuf,
    dump: bool,
    cfg: PipelineConfig,
    opts: OracleOptions,
) -> Result<()> {
    let input = match (wav, scores, embeddings, oracle) {
        (Some(wav), Some(scores), Some(embeddings), None) => Input::Imported {
            audio: load_wav(&wav)?,
            scores,
            embeddings,
            plda,
        },
        (Some(wav), None, None, Some(script)) => Input::Oracle {
            audio: load_wav(&wav)?,
            script: synthgen::load_script(&script)?,
        },
        (None, None, None, Some(script)) => Input::Script(synthgen::load_script(&script)?),
        (None, Some(_), _, _) => bail!("--scores and --embeddings replay model outputs for a WAV file; give the WAV path"),
        _ => bail!("give a WAV file with --scores/--embeddings, or an --oracle script (with or without a WAV file)"),
    };
    let result = run(&input, &cfg, &opts)?;
    for t in &result.timings {
        log::info!("block {} {:<14} {:.3}s", t.block, t.name, t.seconds);
    }
    create_dir(&out)?;
    let session = if result.recording_id.is_empty() { "session" } else { &result.recording_id };
    let path = out.join(format!("{session}.rttm"));
    result.write_rttm(&path)?;
    if dump {
        result.dump(&out.join(format!("{session}.dump")))?;
    }
    println!(
        "{}: {} speakers, {} segments ({:.2}s)",
        path.display(),
        result.num_speakers(),
        result.annotation.len(),
        result.total_seconds()
    );
    Ok(())
}

fn score(reference: &Path, hypothesis: &Path, collar: f64, skip_overlap: bool) -> Result<()> {
    let r = rttm::read_rttm(reference)?;
    let h = rttm::read_rttm(hypothesis)?;
    let d = der(&r, &h, collar, skip_overlap).with_context(|| format!("scoring against {}", reference.display()))?;
    println!("reference   {:>10.3} s", d.t_ref);
    println!("missed      {:>10.3} s", d.t_miss);
    println!("false alarm {:>10.3} s", d.t_fa);
    println!("confusion   {:>10.3} s", d.t_conf);
    println!("DER {:.2}%", 100.0 * d.der);
    Ok(())
}

fn inspect(dir: &Path, block: Option<usize>) -> Result<()> {
    if !dir.is_dir() {
        bail!("{}: not a dump directory", dir.display());
    }
    let Some(block) = block else {
        for b in 1..=7 {
            for name in dump_files(b) {
                let p = dir.join(name);
                let lines = std::fs::read_to_string(&p).map(|t| t.lines().count()).unwrap_or(0);
                println!("block {b}  {name:<18} {lines:>6} lines");
            }
        }
        return Ok(());
    };
    let files = dump_files(block);
    if files.is_empty() {
        bail!("block {block} has no dump; choose one of 1, 3, 4, 5, 6, 7");
    }
    for name in files {
        let p = dir.join(name);
        let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        if files.len() > 1 {
            println!("# {name}");
        }
        print!("{text}");
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Diarize {
            wav,
            scores,
            embeddings,
            plda,
            oracle,
            out,
            dump,
            config,
            oracle_args,
        } => diarize(wav, scores, embeddings, plda, oracle, out, dump, config.resolve()?, oracle_args.options()),
        Command::Score {
            reference,
            hypothesis,
            collar,
            skip_overlap,
        } => score(&reference, &hypothesis, collar, skip_overlap),
        Command::Synth {
            speakers,
            duration,
            mean_turn,
            overlap,
            silence,
            id,
            out,
            scores,
            embeddings,
            config,
            oracle_args,
        } => {
            let cfg = config.resolve()?;
            let opts = oracle_args.options();
            let spec = MeetingSpec {
                recording_id: id.clone(),
                duration_s: duration,
                n_speakers: speakers,
                mean_turn_s: mean_turn,
                overlap_fraction: overlap,
                silence_fraction: silence,
                rng_seed: opts.seed,
            };
            let script = synthgen::generate(&spec)?;
            create_dir(&out)?;
            let path = out.join(format!("{id}.rttm"));
            synthgen::save_script(&script, &path)?;
            let f = synthgen::measure_fractions(&script, synthgen::RASTER_S);
            println!(
                "{}: {} turns, silence {:.3}, overlap {:.3}",
                path.display(),
                script.turns.len(),
                f.silence,
                f.overlap
            );
            if scores || embeddings {
                let result = run(&Input::Script(script), &cfg, &opts)?;
                if scores {
                    write_scores(&out.join(format!("{id}.scores.txt")), &result.scores)?;
                }
                if embeddings {
                    write_embeddings(&out.join(format!("{id}.embeddings.txt")), &result.embeddings)?;
                    let g = PldaGenerator::synthetic(cfg.embedding_dim, cfg.lda_dim, opts.separation, opts.seed)?;
                    write_plda(&out.join(format!("{id}.plda.txt")), &g.model)?;
                }
            }
            Ok(())
        }
        Command::Inspect { dir, block } => inspect(&dir, block),
        Command::PldaGen {
            dim,
            lda,
            separation,
            seed,
            out,
        } => {
            let g = PldaGenerator::synthetic(dim, lda, separation, seed)?;
            write_plda(&out, &g.model)?;
            println!("{}: {dim} -> {lda} PLDA model", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let keys = CONFIG_KEYS.join(", ");
    let defaults = PipelineConfig::default().to_toml();
    let matches = Cli::command()
        .after_long_help(format!("Configuration keys (for --config files and --set):\n  {keys}\n\nDefaults:\n{defaults}"))
        .after_help(format!("Configuration keys: {keys}"))
        .get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
