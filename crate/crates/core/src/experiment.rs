//! End-to-end runs from a JSON configuration: data, bank, training, evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::frontend::{parse_program, Program, QueryFlavor};
use crate::grounder::{ground, GroundProgram};
use crate::harness::{self, AttributeSample, LabeledImage, Split, WorldSpec};
use crate::npp::{BankSpec, NppBank};
use crate::par::Execution;
use crate::trainer::{Example, TrainConfig, TrainReport, Trainer};
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    MnistAddition {
        /// Defaults to [`harness::mnist_dir`].
        #[serde(default)]
        mnist_dir: Option<PathBuf>,
        /// Keep only the first `pairs` training pairs.
        #[serde(default)]
        pairs: Option<usize>,
        /// Evaluate on the first `eval_images` test images.
        #[serde(default)]
        eval_images: Option<usize>,
        /// Area-downscale images to `[h, w]`.
        #[serde(default)]
        downscale: Option<[usize; 2]>,
    },
    AttributeWorld {
        train: usize,
        test: usize,
        sigma: f64,
        #[serde(default)]
        world: WorldSpec,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Program path, relative to the configuration file.
    pub program: PathBuf,
    pub bank: BankSpec,
    pub train: TrainConfig,
    pub task: Task,
}

impl ExperimentConfig {
    /// Read a configuration and resolve relative paths against its directory.
    pub fn load(path: &Path) -> Result<ExperimentConfig, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.program = base.join(&cfg.program);
        if let Task::MnistAddition {
            mnist_dir: Some(d), ..
        } = &mut cfg.task
        {
            *d = base.join(&*d);
        }
        Ok(cfg)
    }
}

/// Held-out data for the task metric.
pub enum EvalSet {
    Digits(Vec<LabeledImage>),
    Attributes(Vec<AttributeSample>),
}

pub struct Experiment {
    pub config: ExperimentConfig,
    pub program: Program,
    pub ground: GroundProgram,
    pub bank: NppBank,
    pub train: Vec<Example>,
    pub eval: EvalSet,
}

fn prepare(img: LabeledImage, downscale: Option<[usize; 2]>) -> LabeledImage {
    match downscale {
        Some([h, w]) => LabeledImage {
            pixels: harness::downscale(&img.pixels, h, w),
            label: img.label,
        },
        None => img,
    }
}

impl Experiment {
    /// Load data and build the bank. All randomness derives from `config.train.seed`.
    pub fn new(config: ExperimentConfig) -> Result<Experiment, Error> {
        let text =
            fs::read_to_string(&config.program).map_err(|source| harness::HarnessError::Io {
                path: config.program.clone(),
                source,
            })?;
        let program = parse_program(&text)?;
        let ground = ground(&program)?;
        let seed = config.train.seed;
        let bank = NppBank::build(&program, &config.bank, seed)?;
        let (train, eval) = match &config.task {
            Task::MnistAddition {
                mnist_dir,
                pairs,
                eval_images,
                downscale,
            } => {
                let dir = mnist_dir.clone().unwrap_or_else(harness::mnist_dir);
                let images: Vec<LabeledImage> = harness::load_mnist(&dir, Split::Train)?
                    .into_iter()
                    .map(|i| prepare(i, *downscale))
                    .collect();
                let mut examples = harness::make_addition_pairs(images, seed);
                if let Some(n) = pairs {
                    examples.truncate(*n);
                }
                let train = examples.into_iter().map(|e| e.into_example()).collect();
                let mut test = harness::load_mnist(&dir, Split::Test)?;
                if let Some(n) = eval_images {
                    test.truncate(*n);
                }
                let test = test.into_iter().map(|i| prepare(i, *downscale)).collect();
                (train, EvalSet::Digits(test))
            }
            Task::AttributeWorld {
                train,
                test,
                sigma,
                world,
            } => {
                let tr = harness::gen_attribute_world(*train, seed, *sigma, world);
                let te = harness::gen_attribute_world(*test, seed ^ 0x7e57, *sigma, world);
                (
                    tr.iter().map(AttributeSample::to_example).collect(),
                    EvalSet::Attributes(te),
                )
            }
        };
        Ok(Experiment {
            config,
            program,
            ground,
            bank,
            train,
            eval,
        })
    }

    pub fn execution(&self) -> Execution {
        if self.config.train.threads == 1 {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }

    /// Test digit accuracy or attribute average precision.
    pub fn evaluate(&self, bank: &NppBank) -> Result<f64, Error> {
        evaluate(bank, &self.eval, self.execution())
    }

    pub fn run(
        &mut self,
        metrics: Option<PathBuf>,
        checkpoint: Option<PathBuf>,
    ) -> Result<TrainReport, Error> {
        let mut trainer = Trainer::new(
            &self.program,
            &self.ground,
            &self.bank,
            self.config.train.clone(),
        )?;
        trainer.metrics_path = metrics;
        trainer.checkpoint_path = checkpoint;
        let eval = &self.eval;
        let exec = self.execution();
        let metric = |b: &NppBank| evaluate(b, eval, exec).unwrap_or(f64::NAN);
        Ok(trainer.train(&mut self.bank, &self.train, Some(&metric))?)
    }
}

pub fn evaluate(bank: &NppBank, eval: &EvalSet, exec: Execution) -> Result<f64, Error> {
    match eval {
        EvalSet::Digits(images) => {
            let model = bank.model_of("digit")?;
            Ok(harness::digit_accuracy(bank, model, images, exec)?)
        }
        EvalSet::Attributes(samples) => {
            let models = harness::CATEGORIES
                .iter()
                .map(|(name, _)| bank.model_of(name))
                .collect::<Result<Vec<_>, _>>()?;
            let per_sample = crate::par::map_indexed(samples.len(), exec, |i| {
                let probs = samples[i]
                    .features
                    .iter()
                    .map(|f| {
                        let x = crate::npp::Tensor::vector(f.clone());
                        models
                            .iter()
                            .map(|&m| bank.forward(m, &x, QueryFlavor::Conditional).map(|fw| fw.p))
                            .collect::<Result<Vec<_>, _>>()
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok::<_, Error>(harness::slot_predictions(i, &probs))
            });
            let mut preds = Vec::new();
            for p in per_sample {
                preds.extend(p?);
            }
            let truth: Vec<Vec<harness::Attrs>> = samples
                .iter()
                .map(|s| s.objects().copied().collect())
                .collect();
            Ok(harness::average_precision(&preds, &truth))
        }
    }
}

/// The evaluation images with a fraction `m` of pixels missing.
pub fn with_missing(eval: &EvalSet, m: f64, seed: u64) -> Result<EvalSet, Error> {
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    match eval {
        EvalSet::Digits(images) => Ok(EvalSet::Digits(
            images
                .iter()
                .map(|i| {
                    Ok(LabeledImage {
                        pixels: harness::mask_missing(&i.pixels, m, &mut rng)?,
                        label: i.label,
                    })
                })
                .collect::<Result<_, harness::HarnessError>>()?,
        )),
        EvalSet::Attributes(_) => Err(harness::HarnessError::Fraction(m).into()),
    }
}
