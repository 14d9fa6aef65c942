//! Command-line front end: `gen-data`, `train`, `sample`, `eval`, `ablate`.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::TrainConfig;
use crate::data::{list_images, read_hr_dir, read_pnm, upsample_lr, write_hr_dir, write_lr_cache, write_pnm};
use crate::error::{Error, Result};
use crate::experiment::{
    evaluate, initial_state, make_pairs, runs_root, sample_seed, save_state, split_holdout, super_resolve,
    synth_corpus, train, RunDir, TrainLog,
};
use crate::training::{load_checkpoint, Checkpoint};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "diwa", version, about = "Wavelet-domain diffusion super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the procedural HR corpus and its LR cache.
    GenData(ConfigArgs),
    /// Train both networks and write checkpoints.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Continue from the run's latest checkpoint if one exists.
        #[arg(long)]
        resume: bool,
        /// Load a checkpoint whose config hash differs, with a warning.
        #[arg(long)]
        allow_config_mismatch: bool,
        /// Also checkpoint every N steps (0 = only at the end).
        #[arg(long, default_value_t = 0)]
        ckpt_every: u64,
    },
    /// Super-resolve a directory of LR images.
    Sample {
        #[command(flatten)]
        ckpt: CheckpointArgs,
        /// Directory of LR .ppm/.pgm images.
        #[arg(long)]
        input: PathBuf,
        /// Output directory (default: the run's samples/).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score the held-out images and write eval.csv.
    Eval {
        #[command(flatten)]
        ckpt: CheckpointArgs,
        /// Also write the SR images to the run's samples/.
        #[arg(long)]
        save_samples: bool,
    },
    /// Train and evaluate the four ablation configurations.
    Ablate(ConfigArgs),
}

/// Settings layered as defaults < `--config` file < individual flags.
#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run name under the runs root.
    #[arg(long)]
    run: Option<String>,
    /// Number of corpus images.
    #[arg(long)]
    n: Option<String>,
    /// HR image side length.
    #[arg(long)]
    size: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    scale: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    data_dir: Option<String>,
    #[arg(long)]
    n_eval: Option<String>,
    #[arg(long)]
    t_train: Option<String>,
    #[arg(long)]
    t_eval: Option<String>,
    #[arg(long)]
    beta_start: Option<String>,
    #[arg(long)]
    beta_end: Option<String>,
    #[arg(long)]
    base_width: Option<String>,
    /// Comma-separated, e.g. `1,2,2`.
    #[arg(long)]
    channel_mults: Option<String>,
    #[arg(long)]
    n_blocks: Option<String>,
    #[arg(long)]
    dropout: Option<String>,
    #[arg(long)]
    predictor_hidden: Option<String>,
    #[arg(long)]
    predictor_layers: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    use_dwt: Option<String>,
    #[arg(long)]
    use_init_predictor: Option<String>,
    #[arg(long)]
    final_noise: Option<String>,
}

impl ConfigArgs {
    fn overrides(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("run_name", &self.run),
            ("n_images", &self.n),
            ("hr_size", &self.size),
            ("seed", &self.seed),
            ("scale", &self.scale),
            ("steps", &self.steps),
            ("data_dir", &self.data_dir),
            ("n_eval", &self.n_eval),
            ("t_train", &self.t_train),
            ("t_eval", &self.t_eval),
            ("beta_start", &self.beta_start),
            ("beta_end", &self.beta_end),
            ("base_width", &self.base_width),
            ("channel_mults", &self.channel_mults),
            ("n_blocks", &self.n_blocks),
            ("dropout", &self.dropout),
            ("predictor_hidden", &self.predictor_hidden),
            ("predictor_layers", &self.predictor_layers),
            ("lr", &self.lr),
            ("weight_decay", &self.weight_decay),
            ("batch_size", &self.batch_size),
            ("use_dwt", &self.use_dwt),
            ("use_init_predictor", &self.use_init_predictor),
            ("final_noise", &self.final_noise),
        ]
    }

    fn apply(&self, cfg: &mut TrainConfig) -> Result<()> {
        if let Some(path) = &self.config {
            cfg.apply_text(&fs::read_to_string(path)?)?;
        }
        for (key, value) in self.overrides() {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        Ok(())
    }

    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        self.apply(&mut cfg)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Selects a trained model: the run's latest checkpoint or an explicit file.
/// Sampling settings (`--t-eval`, `--final-noise`, `--seed`, ...) override the
/// stored config.
#[derive(Args, Debug)]
struct CheckpointArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Checkpoint file (default: `<run>/ckpt/latest.ckpt`).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

impl CheckpointArgs {
    fn load(&self) -> Result<(TrainConfig, Checkpoint, RunDir)> {
        let mut cfg = TrainConfig::default();
        if let Some(run) = &self.cfg.run {
            cfg.run_name = run.clone();
        }
        let run = RunDir::new(&runs_root(), &cfg.run_name);
        let path = self.checkpoint.clone().unwrap_or_else(|| run.latest_checkpoint());
        if !path.exists() {
            return Err(Error::Checkpoint(format!("missing checkpoint {}", path.display())));
        }
        let ck = load_checkpoint(&path, None, true)?;
        cfg.apply_text(&ck.config_text)?;
        // the run directory's echo carries the paths the checkpoint omits
        if run.config_path().exists() {
            let mut echoed = TrainConfig::default();
            echoed.apply_text(&fs::read_to_string(run.config_path())?)?;
            cfg.data_dir = echoed.data_dir;
            cfg.n_eval = echoed.n_eval;
        }
        self.cfg.apply(&mut cfg)?;
        cfg.validate()?;
        if cfg.hash() != ck.config_hash() {
            log::warn!("sampling settings differ from the checkpoint's training config");
        }
        Ok((cfg, ck, run))
    }
}

fn gen_data(cfg: &TrainConfig) -> Result<String> {
    let images = synth_corpus(cfg)?;
    write_hr_dir(&cfg.data_dir, &images)?;
    write_lr_cache(&cfg.data_dir, &make_pairs(&images, cfg.scale)?)?;
    Ok(format!(
        "wrote {} images ({}x{}, LR x{}) to {}\n",
        images.len(),
        cfg.hr_size,
        cfg.hr_size,
        cfg.scale,
        cfg.data_dir.display()
    ))
}

fn load_pairs(cfg: &TrainConfig) -> Result<Vec<crate::data::ImageSample>> {
    if !cfg.data_dir.join("hr").is_dir() {
        return Err(Error::InvalidArgument(format!(
            "no dataset at {} (run gen-data first)",
            cfg.data_dir.display()
        )));
    }
    make_pairs(&read_hr_dir(&cfg.data_dir)?, cfg.scale)
}

fn run_train(cfg: &TrainConfig, resume: bool, allow_mismatch: bool, ckpt_every: u64) -> Result<String> {
    let run = RunDir::new(&runs_root(), &cfg.run_name);
    run.create()?;
    fs::write(run.config_path(), cfg.to_text())?;
    let (train_set, _) = split_holdout(load_pairs(cfg)?, cfg.n_eval)?;

    let latest = run.latest_checkpoint();
    let resuming = resume && latest.exists();
    let mut state = if resuming {
        let ck = load_checkpoint(&latest, Some(cfg.hash()), allow_mismatch)?;
        log::info!("resuming {} at step {}", latest.display(), ck.state.step);
        ck.state
    } else {
        initial_state(cfg)?
    };
    let mut log_file = TrainLog::open(&run.train_log(), resuming)?;
    let every = (cfg.steps / 20).max(1);
    train(cfg, &mut state, &train_set, |s, rec| {
        log_file.record(rec)?;
        if rec.step % every == 0 {
            log::info!(
                "step {} loss {:.5} ({:.1} s)",
                rec.step,
                s.loss_stats.last,
                rec.elapsed_s
            );
        }
        if ckpt_every > 0 && rec.step % ckpt_every == 0 {
            save_state(cfg, s, &run.ckpt_dir().join(format!("step{:06}.ckpt", rec.step)))?;
        }
        Ok(())
    })?;
    log_file.flush()?;
    save_state(cfg, &state, &latest)?;
    Ok(format!(
        "trained {} to step {} (mean loss {:.5}); checkpoint {}\n",
        cfg.run_name,
        state.step,
        state.loss_stats.mean(),
        latest.display()
    ))
}

fn run_sample(args: &CheckpointArgs, input: &Path, output: Option<&Path>) -> Result<String> {
    let (cfg, ck, run) = args.load()?;
    let paths = list_images(input)?;
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no .ppm/.pgm images in {}",
            input.display()
        )));
    }
    let lr_up = paths
        .iter()
        .map(|p| upsample_lr(&read_pnm(p)?, cfg.scale))
        .collect::<Result<Vec<_>>>()?;
    let outputs = super_resolve(&cfg, &ck.state.params, &lr_up, sample_seed(&cfg))?;
    let out_dir = output.map(Path::to_path_buf).unwrap_or_else(|| run.samples_dir());
    fs::create_dir_all(&out_dir)?;
    for (p, img) in paths.iter().zip(&outputs) {
        write_pnm(out_dir.join(p.file_name().expect("listed file")), img)?;
    }
    Ok(format!("wrote {} images to {}\n", outputs.len(), out_dir.display()))
}

fn run_eval(args: &CheckpointArgs, save_samples: bool) -> Result<String> {
    let (cfg, ck, run) = args.load()?;
    let (_, eval_set) = split_holdout(load_pairs(&cfg)?, cfg.n_eval)?;
    let ev = evaluate(&cfg, &ck.state.params, &eval_set)?;
    fs::create_dir_all(&run.root)?;
    ev.model.write_csv(run.eval_csv())?;
    if save_samples {
        fs::create_dir_all(run.samples_dir())?;
        for (i, img) in ev.outputs.iter().enumerate() {
            write_pnm(run.samples_dir().join(format!("{i:04}.ppm")), img)?;
        }
    }
    Ok(format!(
        "{} images: model {:.3} dB / SSIM {:.4}; bicubic {:.3} dB / SSIM {:.4}; wrote {}\n",
        ev.model.len(),
        ev.model.mean_psnr(),
        ev.model.mean_ssim(),
        ev.bicubic.mean_psnr(),
        ev.bicubic.mean_ssim(),
        run.eval_csv().display()
    ))
}

/// Row label, `use_dwt`, `use_init_predictor`.
pub const ABLATION_ROWS: [(&str, bool, bool); 4] = [
    ("baseline (image space)", false, false),
    ("+DWT", true, false),
    ("+init predictor", false, true),
    ("+DWT +init predictor", true, true),
];

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub use_dwt: bool,
    pub use_init_predictor: bool,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Trains and evaluates every ablation row on the same corpus and split.
/// Returns the rows and the bicubic reference `(psnr, ssim)`.
pub fn ablate(base: &TrainConfig) -> Result<(Vec<AblationRow>, (f64, f64))> {
    let pairs = make_pairs(&synth_corpus(base)?, base.scale)?;
    let (train_set, eval_set) = split_holdout(pairs, base.n_eval)?;
    let mut rows = Vec::new();
    let mut reference = (f64::NAN, f64::NAN);
    for (i, &(label, use_dwt, use_init_predictor)) in ABLATION_ROWS.iter().enumerate() {
        let cfg = TrainConfig {
            use_dwt,
            use_init_predictor,
            run_name: format!("{}-ablate{i}", base.run_name),
            ..base.clone()
        };
        cfg.validate()?;
        log::info!("ablation row {label}: training {} steps", cfg.steps);
        let mut state = initial_state(&cfg)?;
        train(&cfg, &mut state, &train_set, |_, _| Ok(()))?;
        let ev = evaluate(&cfg, &state.params, &eval_set)?;
        reference = (ev.bicubic.mean_psnr(), ev.bicubic.mean_ssim());
        rows.push(AblationRow {
            label: label.into(),
            use_dwt,
            use_init_predictor,
            psnr_db: ev.model.mean_psnr(),
            ssim: ev.model.mean_ssim(),
        });
    }
    Ok((rows, reference))
}

pub fn format_ablation_table(rows: &[AblationRow], bicubic: (f64, f64)) -> String {
    let mut out = String::new();
    let mark = |b: bool| if b { "yes" } else { "no" };
    writeln!(
        out,
        "| {:<22} | {:>3} | {:>4} | {:>9} | {:>6} |",
        "method", "dwt", "init", "PSNR (dB)", "SSIM"
    )
    .unwrap();
    writeln!(out, "|{:-<24}|{:-<5}|{:-<6}|{:-<11}|{:-<8}|", "", "", "", "", "").unwrap();
    for r in rows {
        writeln!(
            out,
            "| {:<22} | {:>3} | {:>4} | {:>9.3} | {:>6.4} |",
            r.label,
            mark(r.use_dwt),
            mark(r.use_init_predictor),
            r.psnr_db,
            r.ssim
        )
        .unwrap();
    }
    writeln!(out, "bicubic reference: {:.3} dB / SSIM {:.4}", bicubic.0, bicubic.1).unwrap();
    out
}

fn run_ablate(cfg: &TrainConfig) -> Result<String> {
    let (rows, bicubic) = ablate(cfg)?;
    let table = format_ablation_table(&rows, bicubic);
    let root = runs_root();
    fs::create_dir_all(&root)?;
    fs::write(root.join(format!("{}-ablation.md", cfg.run_name)), &table)?;
    Ok(table)
}

fn dispatch(cli: Cli) -> Result<String> {
    match cli.command {
        Command::GenData(args) => gen_data(&args.resolve()?),
        Command::Train {
            cfg,
            resume,
            allow_config_mismatch,
            ckpt_every,
        } => run_train(&cfg.resolve()?, resume, allow_config_mismatch, ckpt_every),
        Command::Sample { ckpt, input, output } => run_sample(&ckpt, &input, output.as_deref()),
        Command::Eval { ckpt, save_samples } => run_eval(&ckpt, save_samples),
        Command::Ablate(args) => run_ablate(&args.resolve()?),
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code. Results go to stdout, diagnostics to stderr.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(msg) => {
            print!("{msg}");
            EXIT_OK
        }
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
