//! Command-line entry point: dataset generation, training pipelines, and
//! representation analyses as reproducible subcommands.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pgn::analysis::{
    classify_transfer, dataset_features, decode_latents, dump_frames, eval_prediction_error,
    extrapolate_component, project_features, write_classification_csv, write_decoding_csv,
    write_projection_csv, FeatureExtractor, Predictor, StateKind, EVAL_WINDOW, LATENT_NAMES,
};
use pgn::data::{
    copy_baseline, gen_balls_dataset, gen_classification_set, gen_object_dataset,
    io::{read_labeled_images, write_labeled_images},
    read_dataset, write_dataset, VideoDataset,
};
use pgn::error::{PgnError, Result};
use pgn::models::{ControlModel, GeneratorModel};
use pgn::probe::{ridge_fit_validated, ALPHA_GRID};
use pgn::tensor::TensorData;
use pgn::train::{
    load_checkpoint, pretrain_discriminator, train_adversarial, train_mse, Checkpoint,
    TrainConfig,
};

#[derive(Parser)]
#[command(name = "pgn", version, about = "Predictive generative network toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate bouncing-balls video datasets (train split at --out;
    /// optional -val/-test siblings)
    GenBalls {
        /// training sequences
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        n_val: usize,
        #[arg(long, default_value_t = 0)]
        n_test: usize,
        /// frames per sequence
        #[arg(long, default_value_t = 20)]
        t: usize,
        #[arg(long, default_value_t = 30)]
        height: usize,
        #[arg(long, default_value_t = 30)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Generate rotating-object video datasets (with latents sidecars)
    GenObjects {
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        n_val: usize,
        #[arg(long, default_value_t = 0)]
        n_test: usize,
        #[arg(long, default_value_t = 6)]
        t: usize,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Generate the identity × angle classification image grid
    GenClasses {
        #[arg(long, default_value_t = 50)]
        ids: usize,
        #[arg(long, default_value_t = 12)]
        angles: usize,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Train a model (PGN or an autoencoder control) with the MSE objective
    Train {
        /// key=value config file
        #[arg(long)]
        config: Option<PathBuf>,
        /// config overrides, e.g. --set epochs=10
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Pretrain a discriminator against a frozen generator checkpoint
    PretrainD {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// generator checkpoint
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Adversarial fine-tuning from generator + discriminator checkpoints
    TrainAdv {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        disc: PathBuf,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// One-step prediction error of a checkpoint vs. the copy baseline
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = EVAL_WINDOW)]
        window: usize,
        #[arg(long, default_value_t = 16)]
        batch: usize,
    },
    /// Ridge-decode generative latents from features across checkpoints
    Decode {
        /// checkpoint paths, one report per checkpoint
        #[arg(long, required = true)]
        ckpt: Vec<PathBuf>,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// LSTM state to read features from: h or c
        #[arg(long, default_value = "h")]
        state: String,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Project features onto two fitted latent coefficient directions
    Project {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        /// dataset whose sequences are projected
        #[arg(long)]
        target: PathBuf,
        /// latent index pair, e.g. 0,1 (theta0, omega)
        #[arg(long, default_value = "0,1")]
        latents: String,
        #[arg(long, default_value = "h")]
        state: String,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Decode images along one latent's coefficient direction
    Extrapolate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        /// dataset providing the seed sequence
        #[arg(long)]
        data: PathBuf,
        /// sequence index within --data
        #[arg(long, default_value_t = 0)]
        seq: usize,
        /// latent component index (0..6)
        #[arg(long, default_value_t = 0)]
        latent: usize,
        /// comma-separated shifts of the decoded latent
        #[arg(long, default_value = "-2,-1,0,1,2", allow_hyphen_values = true)]
        deltas: String,
        #[arg(long, default_value = "h")]
        state: String,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        /// output PGM path prefix
        #[arg(short, long)]
        out: String,
    },
    /// Identity classification transfer across viewing angles
    Classify {
        /// classification set (written by gen-classes)
        #[arg(long)]
        classes: PathBuf,
        /// model checkpoints as name=path, repeatable
        #[arg(long = "model", required = true, value_name = "NAME=CKPT")]
        models: Vec<String>,
        /// comma-separated training-angle counts
        #[arg(long, default_value = "2,4,6,8,10")]
        ks: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Finite-difference gradient check of the full generator graph
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help/version requests succeed; any other parse problem is a
            // usage error (exit 1)
            use clap::error::ErrorKind;
            let help = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            if help {
                print!("{}", e);
                return ExitCode::SUCCESS;
            }
            eprint!("{}", e);
            return ExitCode::from(1);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(2)
        }
    }
}

/// Worker cap from PGN_THREADS (default 1 for reproducibility).
fn threads() -> usize {
    std::env::var("PGN_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1)
        .max(1)
}

fn echo(cmd: &str, kv: &[(&str, String)]) {
    let rest: Vec<String> = kv.iter().map(|(k, v)| format!("{}={}", k, v)).collect();
    println!("resolved-config: cmd={} threads={} {}", cmd, threads(), rest.join(" "));
}

fn split_paths(out: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
    (
        out.to_path_buf(),
        dir.join(format!("{}-val.pgnv", stem)),
        dir.join(format!("{}-test.pgnv", stem)),
    )
}

fn write_splits(
    out: &Path,
    splits: (VideoDataset, VideoDataset, VideoDataset),
) -> Result<()> {
    let (p_tr, p_va, p_te) = split_paths(out);
    write_dataset(&p_tr, &splits.0)?;
    println!("wrote {} ({} sequences)", p_tr.display(), splits.0.n_seq);
    if splits.1.n_seq > 0 {
        write_dataset(&p_va, &splits.1)?;
        println!("wrote {} ({} sequences)", p_va.display(), splits.1.n_seq);
    }
    if splits.2.n_seq > 0 {
        write_dataset(&p_te, &splits.2)?;
        println!("wrote {} ({} sequences)", p_te.display(), splits.2.n_seq);
    }
    Ok(())
}

fn load_config(
    config: Option<&Path>,
    sets: &[String],
    train: Option<&Path>,
    val: Option<&Path>,
    out: Option<&Path>,
    seed: Option<u64>,
) -> Result<TrainConfig> {
    let mut cfg = match config {
        Some(p) => TrainConfig::from_kv(&std::fs::read_to_string(p)?)?,
        None => TrainConfig::default(),
    };
    for kv in sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| PgnError::Arg(format!("--set expects KEY=VALUE, got {:?}", kv)))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(p) = train {
        cfg.train_path = p.to_path_buf();
    }
    if let Some(p) = val {
        cfg.val_path = p.to_path_buf();
    }
    if let Some(p) = out {
        cfg.out_dir = p.to_path_buf();
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    for line in cfg.to_kv().lines() {
        println!("resolved-config: {}", line);
    }
    Ok(cfg)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| PgnError::Arg(format!("bad {} entry {:?}", what, v)))
        })
        .collect()
}

fn seed_frames(ds: &VideoDataset, seq: usize, n: usize) -> Result<Vec<TensorData<f32>>> {
    if seq >= ds.n_seq || ds.t < n {
        return Err(PgnError::Arg(format!(
            "sequence {} / first {} frames not available in {}x{} dataset",
            seq, n, ds.n_seq, ds.t
        )));
    }
    (0..n)
        .map(|t| TensorData::new(vec![ds.channels, ds.h, ds.w], ds.frame(seq, t).to_vec()))
        .collect()
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenBalls { n, n_val, n_test, t, height, width, seed, out } => {
            echo("gen-balls", &[
                ("n", n.to_string()), ("n_val", n_val.to_string()), ("n_test", n_test.to_string()),
                ("t", t.to_string()), ("height", height.to_string()), ("width", width.to_string()),
                ("seed", seed.to_string()), ("out", out.display().to_string()),
            ]);
            write_splits(&out, gen_balls_dataset(n, n_val, n_test, t, height, width, seed)?)
        }
        Cmd::GenObjects { n, n_val, n_test, t, height, width, seed, out } => {
            echo("gen-objects", &[
                ("n", n.to_string()), ("n_val", n_val.to_string()), ("n_test", n_test.to_string()),
                ("t", t.to_string()), ("height", height.to_string()), ("width", width.to_string()),
                ("seed", seed.to_string()), ("out", out.display().to_string()),
            ]);
            write_splits(&out, gen_object_dataset(n, n_val, n_test, t, height, width, seed)?)
        }
        Cmd::GenClasses { ids, angles, height, width, seed, out } => {
            echo("gen-classes", &[
                ("ids", ids.to_string()), ("angles", angles.to_string()),
                ("height", height.to_string()), ("width", width.to_string()),
                ("seed", seed.to_string()), ("out", out.display().to_string()),
            ]);
            let set = gen_classification_set(ids, angles, height, width, seed)?;
            write_labeled_images(&out, &set)?;
            println!("wrote {} ({} images)", out.display(), set.ids.len());
            Ok(())
        }
        Cmd::Train { config, sets, train, val, out, seed } => {
            let cfg = load_config(
                config.as_deref(), &sets, train.as_deref(), val.as_deref(), out.as_deref(), seed,
            )?;
            let tr = read_dataset(&cfg.train_path)?;
            let va = read_dataset(&cfg.val_path)?;
            let outcome = train_mse(&cfg, &tr, &va)?;
            println!(
                "best epoch {} val mse {:.6}; wrote {} checkpoints under {}",
                outcome.best_epoch,
                outcome.best_val,
                outcome.checkpoint_paths.len(),
                cfg.out_dir.display()
            );
            Ok(())
        }
        Cmd::PretrainD { config, sets, gen, train, val, out, seed } => {
            let cfg = load_config(
                config.as_deref(), &sets, train.as_deref(), val.as_deref(), out.as_deref(), seed,
            )?;
            let g = load_checkpoint(&gen)?.to_generator()?;
            let tr = read_dataset(&cfg.train_path)?;
            let va = read_dataset(&cfg.val_path)?;
            let outcome = pretrain_discriminator(&cfg, &g, &tr, &va)?;
            println!(
                "discriminator held-out accuracy {:.3} (threshold reached: {})",
                outcome.final_accuracy, outcome.reached_threshold
            );
            Ok(())
        }
        Cmd::TrainAdv { config, sets, gen, disc, train, val, out, seed } => {
            let cfg = load_config(
                config.as_deref(), &sets, train.as_deref(), val.as_deref(), out.as_deref(), seed,
            )?;
            let g = load_checkpoint(&gen)?.to_generator()?;
            let d = load_checkpoint(&disc)?.to_discriminator()?;
            let tr = read_dataset(&cfg.train_path)?;
            let va = read_dataset(&cfg.val_path)?;
            let outcome = train_adversarial(&cfg, g, d, &tr, &va)?;
            println!(
                "adversarial run finished; {} saturation events; metrics under {}",
                outcome.saturation_events,
                cfg.out_dir.display()
            );
            Ok(())
        }
        Cmd::Eval { ckpt, data, window, batch } => {
            echo("eval", &[
                ("ckpt", ckpt.display().to_string()), ("data", data.display().to_string()),
                ("window", window.to_string()), ("batch", batch.to_string()),
            ]);
            let m = load_checkpoint(&ckpt)?.to_generator()?;
            let ds = read_dataset(&data)?;
            let (mm, ms) = eval_prediction_error(&Predictor::Generator(&m), &ds, window, batch)?;
            let (cm, cs) = copy_baseline(&ds, window)?;
            println!("model {:.6} ± {:.6}", mm, ms);
            println!("copy  {:.6} ± {:.6}", cm, cs);
            println!("ratio {:.4}", mm / cm);
            Ok(())
        }
        Cmd::Decode { ckpt, train, val, test, state, batch, out } => {
            echo("decode", &[
                ("ckpts", ckpt.len().to_string()), ("state", state.clone()),
                ("out", out.display().to_string()),
            ]);
            let kind = StateKind::parse(&state)?;
            let tr = read_dataset(&train)?;
            let va = read_dataset(&val)?;
            let te = read_dataset(&test)?;
            let ckpts: Vec<Checkpoint> =
                ckpt.iter().map(|p| load_checkpoint(p)).collect::<Result<_>>()?;
            // checkpoint-parallel, capped by PGN_THREADS
            let workers = threads().min(ckpts.len().max(1));
            let chunk = ckpts.len().div_ceil(workers);
            let mut reports = Vec::with_capacity(ckpts.len());
            std::thread::scope(|s| -> Result<()> {
                let mut handles = Vec::new();
                for part in ckpts.chunks(chunk) {
                    let (tr, va, te) = (&tr, &va, &te);
                    handles.push(
                        s.spawn(move || decode_latents(part, tr, va, te, kind, batch)),
                    );
                }
                for h in handles {
                    reports.extend(h.join().expect("decode worker panicked")?);
                }
                Ok(())
            })?;
            write_decoding_csv(&out, &reports)?;
            for r in &reports {
                let line: Vec<String> = r
                    .r2
                    .iter()
                    .map(|(n, v, _)| format!("{}={:.4}", n, v))
                    .collect();
                println!("epoch {:4} [{}] {}", r.epoch, r.state.tag(), line.join(" "));
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Cmd::Project { ckpt, train, val, target, latents, state, batch, out } => {
            echo("project", &[
                ("ckpt", ckpt.display().to_string()), ("latents", latents.clone()),
                ("state", state.clone()), ("out", out.display().to_string()),
            ]);
            let pair: Vec<usize> = parse_list(&latents, "latent index")?;
            if pair.len() != 2 {
                return Err(PgnError::Arg("--latents expects two indices".into()));
            }
            let kind = StateKind::parse(&state)?;
            let ck = load_checkpoint(&ckpt)?;
            let tr = read_dataset(&train)?;
            let va = read_dataset(&val)?;
            let tg = read_dataset(&target)?;
            let coords =
                project_features(&ck, &tr, &va, &tg, (pair[0], pair[1]), kind, batch)?;
            write_projection_csv(&out, &coords)?;
            println!("wrote {} ({} points)", out.display(), coords.len());
            Ok(())
        }
        Cmd::Extrapolate { ckpt, train, val, data, seq, latent, deltas, state, batch, out } => {
            echo("extrapolate", &[
                ("ckpt", ckpt.display().to_string()), ("latent", latent.to_string()),
                ("seq", seq.to_string()), ("deltas", deltas.clone()), ("out", out.clone()),
            ]);
            if latent >= LATENT_NAMES.len() {
                return Err(PgnError::Arg(format!("latent index {} out of range", latent)));
            }
            let kind = StateKind::parse(&state)?;
            let dl: Vec<f64> = parse_list(&deltas, "delta")?;
            let m = load_checkpoint(&ckpt)?.to_generator()?;
            let tr = read_dataset(&train)?;
            let va = read_dataset(&val)?;
            let x_tr = dataset_features(&m, &tr, kind, batch)?;
            let x_va = dataset_features(&m, &va, kind, batch)?;
            let y = |ds: &VideoDataset| -> Result<Vec<f64>> {
                ds.latents
                    .as_ref()
                    .ok_or_else(|| PgnError::Arg("dataset has no latents sidecar".into()))
                    .map(|l| l.iter().map(|r| r.as_vec()[latent]).collect())
            };
            let (coef, _) = ridge_fit_validated(&x_tr, &y(&tr)?, &x_va, &y(&va)?, &ALPHA_GRID)?;
            let seed_ds = read_dataset(&data)?;
            let frames = seed_frames(&seed_ds, seq, pgn::models::FEATURE_STEP)?;
            let images = extrapolate_component(&m, &frames, &coef, &dl)?;
            let paths = dump_frames(&images, &out)?;
            for (p, d) in paths.iter().zip(&dl) {
                println!("delta {:+.3} -> {}", d, p.display());
            }
            Ok(())
        }
        Cmd::Classify { classes, models, ks, seed, out } => {
            echo("classify", &[
                ("classes", classes.display().to_string()), ("ks", ks.clone()),
                ("seed", seed.to_string()), ("out", out.display().to_string()),
            ]);
            let set = read_labeled_images(&classes)?;
            let counts: Vec<usize> = parse_list(&ks, "k")?;
            enum Owned {
                Gen(GeneratorModel<f32>),
                Control(ControlModel<f32>),
            }
            let mut owned: Vec<(String, Owned)> = Vec::with_capacity(models.len());
            for spec in &models {
                let (name, path) = spec.split_once('=').ok_or_else(|| {
                    PgnError::Arg(format!("--model expects NAME=CKPT, got {:?}", spec))
                })?;
                let ck = load_checkpoint(Path::new(path))?;
                let model = match ck.to_generator() {
                    Ok(g) => Owned::Gen(g),
                    Err(_) => Owned::Control(ck.to_control()?),
                };
                owned.push((name.to_string(), model));
            }
            let extractors: Vec<(String, FeatureExtractor)> = owned
                .iter()
                .map(|(n, m)| {
                    let fx = match m {
                        Owned::Gen(g) => FeatureExtractor::Generator(g),
                        Owned::Control(c) => FeatureExtractor::Control(c),
                    };
                    (n.clone(), fx)
                })
                .collect();
            let reports = classify_transfer(&extractors, &set, &counts, seed)?;
            write_classification_csv(&out, &reports)?;
            for r in &reports {
                println!("k={:2} {:16} accuracy {:.4}", r.k, r.model, r.accuracy);
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Cmd::Gradcheck { seed } => {
            echo("gradcheck", &[("seed", seed.to_string())]);
            let report = pgn::models::gradcheck_generator(seed)?;
            println!(
                "max relative error {:.3e} over {} coordinates (worst: param {} coord {})",
                report.max_rel_err, report.n_coords, report.worst.0, report.worst.1
            );
            if report.max_rel_err >= 1e-4 {
                return Err(PgnError::Numeric(format!(
                    "gradient check failed: {:.3e} >= 1e-4",
                    report.max_rel_err
                )));
            }
            println!("gradient check passed");
            Ok(())
        }
    }
}
