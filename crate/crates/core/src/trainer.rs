//! Joint training of `N` weight sets against `M` images.
//!
//! Every step renders each image with its combined weights, takes the per-image
//! MSE gradient, folds the `M` gradients back onto the `N` trainable sets and
//! applies one optimizer update to each set.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{coord_grid, psnr_from_mse, CoordGrid, ImageDims, ImageTensor, ValueRange};
use crate::siren::{self, init_weights, GradientSet, NetworkArch};
use crate::weight_space::{aggregate_grads, aggregate_grads_scaled, combine, CombinerSpec, ThetaBank};

/// Training aborts once the total loss exceeds this multiple of its first value.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Optimizer {
    PlainGd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub seed: u64,
    /// Record history every this many epochs; the final state is always recorded.
    pub log_every: usize,
    /// Start every weight set from the same initialization instead of `seed + j`.
    pub identical_init: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5000,
            optimizer: Optimizer::adam(),
            learning_rate: 1e-3,
            seed: 0,
            log_every: 100,
            identical_init: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidConfig("log_every must be at least 1".into()));
        }
        if let Optimizer::Adam { beta1, beta2, epsilon } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || epsilon.is_nan() || epsilon <= 0.0 {
                return Err(Error::InvalidConfig(
                    "adam needs betas in [0, 1) and epsilon > 0".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Optimizer memory; one slot per trainable weight set.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    PlainGd,
    Adam {
        step: i32,
        first: Vec<Vec<f64>>,
        second: Vec<Vec<f64>>,
    },
}

impl OptimizerState {
    pub fn new(optimizer: &Optimizer, bank: &ThetaBank) -> Self {
        match optimizer {
            Optimizer::PlainGd => OptimizerState::PlainGd,
            Optimizer::Adam { .. } => {
                let zeros: Vec<Vec<f64>> = bank.sets().iter().map(|s| vec![0.0; s.len()]).collect();
                OptimizerState::Adam {
                    step: 0,
                    first: zeros.clone(),
                    second: zeros,
                }
            }
        }
    }
}

/// Per-image quantities at one evaluation of the bank.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub total_loss: f64,
    pub per_image_loss: Vec<f64>,
    pub per_image_psnr: Vec<f64>,
    /// `|grad_w L_i(w_i)|` for each combined weight set.
    pub grad_norms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total_loss: f64,
    pub per_image_loss: Vec<f64>,
    pub per_image_psnr: Vec<f64>,
    /// Running maximum of each combined image's gradient norm.
    pub grad_norm_max: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn first(&self) -> Option<&EpochRecord> {
        self.records.first()
    }

    /// One JSON object per line.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }
}

/// Images in signed range on a shared coordinate grid.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub dims: ImageDims,
    pub coords: CoordGrid,
    pub targets: Vec<ImageTensor>,
}

impl TrainingSet {
    /// Gray images are expanded to RGB; all images must share one size.
    pub fn new(images: &[ImageTensor]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidImage("no training images".into()))?;
        let (h, w) = (first.height(), first.width());
        for (i, img) in images.iter().enumerate() {
            if (img.height(), img.width()) != (h, w) {
                return Err(Error::ShapeMismatch(format!(
                    "image {} is {}x{}, image 1 is {h}x{w}",
                    i + 1,
                    img.height(),
                    img.width()
                )));
            }
        }
        let targets: Vec<ImageTensor> = images.iter().map(|i| i.to_rgb().to_signed()).collect();
        Ok(TrainingSet {
            dims: targets[0].dims(),
            coords: coord_grid(h, w),
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

fn check_problem(bank: &ThetaBank, spec: &CombinerSpec, images: &[ImageTensor], coords: &CoordGrid) -> Result<()> {
    if spec.n() != bank.len() {
        return Err(Error::ShapeMismatch(format!(
            "combiner has N={}, bank has {} sets",
            spec.n(),
            bank.len()
        )));
    }
    if spec.m() != images.len() {
        return Err(Error::ShapeMismatch(format!(
            "combiner has M={}, got {} images",
            spec.m(),
            images.len()
        )));
    }
    for img in images {
        if img.dims().pixels() != coords.len() {
            return Err(Error::ShapeMismatch(format!(
                "image has {} pixels, grid has {}",
                img.dims().pixels(),
                coords.len()
            )));
        }
    }
    Ok(())
}

/// `sum_i gamma_i L_i(w_i)` and the individual `L_i`.
pub fn total_loss(
    bank: &ThetaBank,
    spec: &CombinerSpec,
    images: &[ImageTensor],
    coords: &CoordGrid,
) -> Result<(f64, Vec<f64>)> {
    let metrics = evaluate_bank(bank, spec, images, coords)?;
    Ok((metrics.total_loss, metrics.per_image_loss))
}

fn unit_psnr(pred: &ndarray::Array2<f64>, target: &ImageTensor) -> f64 {
    let sum: f64 = ndarray::Zip::from(pred).and(&target.pixels()).fold(0.0, |acc, &p, &t| {
        let d = ((p + 1.0) / 2.0).clamp(0.0, 1.0) - (t + 1.0) / 2.0;
        acc + d * d
    });
    psnr_from_mse(sum / pred.len() as f64)
}

fn require_signed(images: &[ImageTensor]) -> Result<()> {
    if images.iter().any(|i| i.range() != ValueRange::Signed) {
        return Err(Error::InvalidImage(
            "training targets must be in the signed [-1, 1] range".into(),
        ));
    }
    Ok(())
}

/// Forward-only evaluation; gradient norms are reported as NaN.
pub fn evaluate_bank(
    bank: &ThetaBank,
    spec: &CombinerSpec,
    images: &[ImageTensor],
    coords: &CoordGrid,
) -> Result<StepMetrics> {
    check_problem(bank, spec, images, coords)?;
    require_signed(images)?;
    let per: Vec<(f64, f64)> = (0..spec.m())
        .into_par_iter()
        .map(|i| -> Result<(f64, f64)> {
            let w = combine(bank, spec.alpha_row(i))?;
            let pred = siren::forward(&w, coords)?;
            let loss = siren::loss(&w, coords.points(), images[i].pixels())?;
            Ok((loss, unit_psnr(&pred, &images[i])))
        })
        .collect::<Result<_>>()?;
    let per_image_loss: Vec<f64> = per.iter().map(|p| p.0).collect();
    let total = per_image_loss.iter().zip(spec.gamma()).map(|(l, g)| g * l).sum();
    Ok(StepMetrics {
        total_loss: total,
        per_image_loss,
        per_image_psnr: per.iter().map(|p| p.1).collect(),
        grad_norms: vec![f64::NAN; spec.m()],
    })
}

/// Per-image losses and gradients at the combined weights, in image order.
pub fn per_image_gradients(
    bank: &ThetaBank,
    spec: &CombinerSpec,
    images: &[ImageTensor],
    coords: &CoordGrid,
) -> Result<Vec<siren::Evaluation>> {
    check_problem(bank, spec, images, coords)?;
    (0..spec.m())
        .into_par_iter()
        .map(|i| {
            let w = combine(bank, spec.alpha_row(i))?;
            siren::evaluate(&w, coords, &images[i])
        })
        .collect()
}

/// Gradient of the collection loss with respect to every trainable set.
pub fn bank_gradient(
    bank: &ThetaBank,
    spec: &CombinerSpec,
    images: &[ImageTensor],
    coords: &CoordGrid,
) -> Result<Vec<GradientSet>> {
    let evals = per_image_gradients(bank, spec, images, coords)?;
    let grads: Vec<GradientSet> = evals.into_iter().map(|e| e.grad).collect();
    aggregate_grads(&grads, spec)
}

/// One optimizer update of every weight set. `epoch` is only used in diagnostics.
pub fn train_step(
    bank: &mut ThetaBank,
    spec: &CombinerSpec,
    images: &[ImageTensor],
    coords: &CoordGrid,
    state: &mut OptimizerState,
    config: &TrainConfig,
    epoch: usize,
) -> Result<StepMetrics> {
    let evals = per_image_gradients(bank, spec, images, coords)?;
    for (i, e) in evals.iter().enumerate() {
        if !e.loss.is_finite() {
            return Err(Error::NonFinite {
                what: "loss",
                image: i + 1,
                epoch,
            });
        }
        if !e.grad.is_finite() {
            return Err(Error::NonFinite {
                what: "gradient",
                image: i + 1,
                epoch,
            });
        }
    }
    let per_image_loss: Vec<f64> = evals.iter().map(|e| e.loss).collect();
    let total_loss = per_image_loss.iter().zip(spec.gamma()).map(|(l, g)| g * l).sum();
    let per_image_psnr = evals
        .iter()
        .zip(images)
        .map(|(e, t)| unit_psnr(&e.prediction, t))
        .collect();
    let grad_norms = evals.iter().map(|e| e.grad.norm()).collect();
    let grads: Vec<GradientSet> = evals.into_iter().map(|e| e.grad).collect();

    match (state, config.optimizer) {
        (OptimizerState::PlainGd, Optimizer::PlainGd) => {
            let steps = aggregate_grads_scaled(&grads, spec, config.learning_rate)?;
            for (theta, step) in bank.sets_mut().iter_mut().zip(&steps) {
                for (t, s) in theta.values_mut().iter_mut().zip(step.values()) {
                    *t -= s;
                }
            }
        }
        (OptimizerState::Adam { step, first, second }, Optimizer::Adam { beta1, beta2, epsilon }) => {
            let agg = aggregate_grads(&grads, spec)?;
            *step += 1;
            let c1 = 1.0 - beta1.powi(*step);
            let c2 = 1.0 - beta2.powi(*step);
            let lr = config.learning_rate;
            for (j, (theta, g)) in bank.sets_mut().iter_mut().zip(&agg).enumerate() {
                let (m, v) = (&mut first[j], &mut second[j]);
                for (k, (t, &g)) in theta.values_mut().iter_mut().zip(g.values()).enumerate() {
                    m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                    v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                    let m_hat = m[k] / c1;
                    let v_hat = v[k] / c2;
                    *t -= lr * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
        }
        _ => {
            return Err(Error::InvalidConfig(
                "optimizer state does not match the configured optimizer".into(),
            ))
        }
    }

    Ok(StepMetrics {
        total_loss,
        per_image_loss,
        per_image_psnr,
        grad_norms,
    })
}

/// Starting bank: `init_weights(arch, seed + j)` for set `j`, or `seed` for all.
pub fn initial_bank(arch: &NetworkArch, n: usize, seed: u64, identical: bool) -> Result<ThetaBank> {
    let sets = (0..n)
        .map(|j| {
            let s = if identical { seed } else { seed.wrapping_add(j as u64) };
            init_weights(arch, s)
        })
        .collect();
    ThetaBank::new(sets)
}

/// Train from scratch on unit- or signed-range images.
pub fn train(
    images: &[ImageTensor],
    arch: &NetworkArch,
    spec: &CombinerSpec,
    config: &TrainConfig,
) -> Result<(ThetaBank, TrainHistory)> {
    train_with_observer(images, arch, spec, config, |_| {})
}

/// [`train`], calling `observe` with each history record as it is produced.
pub fn train_with_observer(
    images: &[ImageTensor],
    arch: &NetworkArch,
    spec: &CombinerSpec,
    config: &TrainConfig,
    mut observe: impl FnMut(&EpochRecord),
) -> Result<(ThetaBank, TrainHistory)> {
    arch.validate()?;
    config.validate()?;
    let set = TrainingSet::new(images)?;
    let mut bank = initial_bank(arch, spec.n(), config.seed, config.identical_init)?;
    check_problem(&bank, spec, &set.targets, &set.coords)?;

    let mut state = OptimizerState::new(&config.optimizer, &bank);
    let mut history = TrainHistory::default();
    let mut grad_max = vec![0.0f64; spec.m()];
    let mut initial_loss = None;
    for epoch in 0..config.epochs {
        let metrics = train_step(&mut bank, spec, &set.targets, &set.coords, &mut state, config, epoch)?;
        let initial = *initial_loss.get_or_insert(metrics.total_loss);
        let limit = DIVERGENCE_FACTOR * initial;
        if metrics.total_loss > limit {
            return Err(Error::Diverged {
                epoch,
                loss: metrics.total_loss,
                limit,
            });
        }
        for (m, g) in grad_max.iter_mut().zip(&metrics.grad_norms) {
            *m = m.max(*g);
        }
        if epoch % config.log_every == 0 {
            let record = EpochRecord {
                epoch,
                total_loss: metrics.total_loss,
                per_image_loss: metrics.per_image_loss,
                per_image_psnr: metrics.per_image_psnr,
                grad_norm_max: grad_max.clone(),
            };
            observe(&record);
            history.records.push(record);
        }
    }

    let last = evaluate_bank(&bank, spec, &set.targets, &set.coords)?;
    let record = EpochRecord {
        epoch: config.epochs,
        total_loss: last.total_loss,
        per_image_loss: last.per_image_loss,
        per_image_psnr: last.per_image_psnr,
        grad_norm_max: grad_max,
    };
    observe(&record);
    history.records.push(record);
    Ok((bank, history))
}
