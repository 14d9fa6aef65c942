//! The train-then-evaluate pipeline shared by the command-line tools and the
//! end-to-end tests, plus the run directory layout.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::TrainConfig;
use crate::data::{make_lr_hr_pair, quantize_tensor, synth_dataset, ImageSample};
use crate::diffusion::{sample, SamplerOptions};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::models::ModelParams;
use crate::rng::derive_seed;
use crate::tensor::Tensor;
use crate::training::{save_checkpoint, stack_images, train_until, Checkpoint, StepRecord, TrainState};

/// Sub-seed streams derived from the configured seed.
const STREAM_INIT: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_SAMPLE: u64 = 3;

/// Images per sampling call during evaluation.
pub const EVAL_CHUNK: usize = 8;

/// The procedural corpus at 8-bit precision, identical to what `gen-data`
/// writes and reads back.
pub fn synth_corpus(cfg: &TrainConfig) -> Result<Vec<Tensor>> {
    Ok(synth_dataset(cfg.n_images, cfg.hr_size, cfg.hr_size, cfg.seed)?
        .iter()
        .map(quantize_tensor)
        .collect())
}

pub fn make_pairs(images: &[Tensor], scale: usize) -> Result<Vec<ImageSample>> {
    images.iter().map(|hr| make_lr_hr_pair(hr, scale)).collect()
}

/// Training images first, the last `n_eval` held out.
pub fn split_holdout(samples: Vec<ImageSample>, n_eval: usize) -> Result<(Vec<ImageSample>, Vec<ImageSample>)> {
    if n_eval >= samples.len() {
        return Err(Error::Config(format!(
            "cannot hold out {n_eval} of {} images",
            samples.len()
        )));
    }
    let mut train = samples;
    let eval = train.split_off(train.len() - n_eval);
    Ok((train, eval))
}

pub fn initial_state(cfg: &TrainConfig) -> Result<TrainState> {
    let params = ModelParams::init(&cfg.model_config(), derive_seed(cfg.seed, STREAM_INIT))?;
    Ok(TrainState::new(params, derive_seed(cfg.seed, STREAM_TRAIN)))
}

/// Trains `state` up to `cfg.steps`, reporting each step.
pub fn train(
    cfg: &TrainConfig,
    state: &mut TrainState,
    train_set: &[ImageSample],
    on_step: impl FnMut(&TrainState, &StepRecord) -> Result<()>,
) -> Result<()> {
    train_until(
        state,
        &cfg.model_config(),
        train_set,
        &cfg.train_schedule()?,
        &cfg.optimizer(),
        cfg.batch_size,
        cfg.steps,
        on_step,
    )
}

/// Super-resolves the `lr_up` images in chunks of [`EVAL_CHUNK`]; chunk `k`
/// samples with seed `derive_seed(seed, k)`. Outputs are clamped to `[0, 1]`.
pub fn super_resolve(cfg: &TrainConfig, params: &ModelParams, lr_up: &[Tensor], seed: u64) -> Result<Vec<Tensor>> {
    let model = cfg.model_config();
    let schedule = cfg.eval_schedule()?;
    let opts = SamplerOptions {
        final_noise: cfg.final_noise,
    };
    let mut out = Vec::with_capacity(lr_up.len());
    for (k, chunk) in lr_up.chunks(EVAL_CHUNK).enumerate() {
        let x = stack_images(chunk)?;
        let y = sample(params, &model, &x, &schedule, derive_seed(seed, k as u64), opts)?;
        let [_, c, h, w] = y.dims4("super_resolve")?;
        for i in 0..chunk.len() {
            out.push(y.batch_item(i).reshape(&[c, h, w])?.clamp(0.0, 1.0));
        }
    }
    Ok(out)
}

pub fn sample_seed(cfg: &TrainConfig) -> u64 {
    derive_seed(cfg.seed, STREAM_SAMPLE)
}

pub struct Evaluation {
    pub model: EvalReport,
    pub bicubic: EvalReport,
    pub outputs: Vec<Tensor>,
}

/// Scores the model's samples and the bicubic upsampling against the HR images.
pub fn evaluate(cfg: &TrainConfig, params: &ModelParams, eval_set: &[ImageSample]) -> Result<Evaluation> {
    let lr_up: Vec<Tensor> = eval_set.iter().map(|s| s.lr_up.clone()).collect();
    let outputs = super_resolve(cfg, params, &lr_up, sample_seed(cfg))?;
    let mut model = EvalReport::new(cfg.run_name.clone());
    let mut bicubic = EvalReport::new("bicubic");
    for (i, (s, out)) in eval_set.iter().zip(&outputs).enumerate() {
        let id = format!("{i:04}");
        model.add(id.clone(), out, &s.hr)?;
        bicubic.add(id, &s.lr_up, &s.hr)?;
    }
    Ok(Evaluation {
        model,
        bicubic,
        outputs,
    })
}

/// Root for run directories: `$DIWA_RUNS_DIR`, else `runs`.
pub fn runs_root() -> PathBuf {
    std::env::var_os("DIWA_RUNS_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// `runs/<name>/{config.txt, ckpt/, samples/, eval.csv, train.log}`.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(runs_root: &Path, name: &str) -> Self {
        Self {
            root: runs_root.join(name),
        }
    }

    pub fn create(&self) -> Result<()> {
        fs::create_dir_all(self.ckpt_dir())?;
        fs::create_dir_all(self.samples_dir())?;
        Ok(())
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.txt")
    }

    pub fn ckpt_dir(&self) -> PathBuf {
        self.root.join("ckpt")
    }

    pub fn latest_checkpoint(&self) -> PathBuf {
        self.ckpt_dir().join("latest.ckpt")
    }

    pub fn samples_dir(&self) -> PathBuf {
        self.root.join("samples")
    }

    pub fn eval_csv(&self) -> PathBuf {
        self.root.join("eval.csv")
    }

    pub fn train_log(&self) -> PathBuf {
        self.root.join("train.log")
    }
}

/// Appends `step,loss,lr,elapsed_s` lines; writes the header for a new file.
pub struct TrainLog {
    out: BufWriter<File>,
}

impl TrainLog {
    pub fn open(path: &Path, append: bool) -> Result<Self> {
        let fresh = !append || !path.exists();
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)?;
        let mut out = BufWriter::new(file);
        if fresh {
            writeln!(out, "{}", StepRecord::HEADER)?;
        }
        Ok(Self { out })
    }

    pub fn record(&mut self, r: &StepRecord) -> Result<()> {
        writeln!(self.out, "{r}")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

pub fn checkpoint_of(cfg: &TrainConfig, state: &TrainState) -> Checkpoint {
    Checkpoint {
        state: state.clone(),
        config_text: cfg.canonical_text(),
    }
}

pub fn save_state(cfg: &TrainConfig, state: &TrainState, path: &Path) -> Result<()> {
    save_checkpoint(path, &checkpoint_of(cfg, state))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TrainConfig {
        TrainConfig::parse(
            "n_images = 6\nn_eval = 2\nhr_size = 16\nscale = 2\nt_train = 6\nt_eval = 3\n\
             base_width = 8\nchannel_mults = 1,2\nn_blocks = 1\npredictor_hidden = 8\n\
             predictor_layers = 2\nbatch_size = 2\nsteps = 2\n",
        )
        .unwrap()
    }

    #[test]
    fn pipeline_runs_and_is_deterministic() {
        let cfg = small();
        let pairs = make_pairs(&synth_corpus(&cfg).unwrap(), cfg.scale).unwrap();
        let (train_set, eval_set) = split_holdout(pairs, cfg.n_eval).unwrap();
        assert_eq!((train_set.len(), eval_set.len()), (4, 2));
        let run = || {
            let mut state = initial_state(&cfg).unwrap();
            train(&cfg, &mut state, &train_set, |_, _| Ok(())).unwrap();
            let ev = evaluate(&cfg, &state.params, &eval_set).unwrap();
            (state, ev.outputs, ev.model.to_csv())
        };
        let (s1, o1, c1) = run();
        let (s2, o2, c2) = run();
        assert_eq!(s1.step, 2);
        assert_eq!((s1, o1.clone(), c1), (s2, o2, c2));
        assert_eq!(o1[0].shape(), &[3, 16, 16]);
    }

    #[test]
    fn train_log_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.log");
        let rec = StepRecord {
            step: 1,
            loss: 0.25,
            lr: 1e-4,
            elapsed_s: 0.5,
        };
        let mut log = TrainLog::open(&path, false).unwrap();
        log.record(&rec).unwrap();
        drop(log);
        let mut log = TrainLog::open(&path, true).unwrap();
        log.record(&StepRecord { step: 2, ..rec }).unwrap();
        log.flush().unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "step,loss,lr,elapsed_s\n1,0.25000000,1e-4,0.500\n2,0.25000000,1e-4,0.500\n"
        );
    }
}
