//! Training on real planes only and evaluation on both parts.
//!
//! The loss of a batch of `T` planes is `(1/T) Σ ||x̂ - x||²`, minimized with
//! Adam at a constant learning rate. Validation runs every epoch with the
//! running batch-norm statistics and the parameters with the lowest
//! validation loss are returned.
//!
//! NMSE `E[||x̂ - x||² / ||x||²]` is reported in two domains: on the `[0, 1]`
//! planes the network sees, and on the centered planes `x - 1/2`, which is
//! the NMSE of the denormalized channel (the normalization scale cancels).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::codec::{mse_loss, EnetConfig, EnetParams};
use crate::error::{Error, Result};
use crate::matrix::ComplexMatrix;
use crate::optim::{adam_step, AdamHyper, AdamState};
use crate::tensor::Tensor4;
use crate::transform::{split_normalize, AngularDelayPlanes, NormPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatio {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitRatio {
    fn default() -> Self {
        Self { train: 10, val: 3, test: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamHyper,
    pub seed: u64,
    pub split: SplitRatio,
    /// Stop after this many epochs without a new best validation loss.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 100,
            adam: AdamHyper::default(),
            seed: 0,
            split: SplitRatio::default(),
            patience: Some(50),
        }
    }
}

/// Indices of the three splits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffle `0..n` with `seed` and cut it by `ratio`, rounding the training and
/// validation sizes down.
pub fn split_dataset(n: usize, ratio: SplitRatio, seed: u64) -> Result<Split> {
    let total = ratio.train + ratio.val + ratio.test;
    if total == 0 {
        return Err(Error::config("split ratio is all zeros"));
    }
    let n_train = n * ratio.train / total;
    let n_val = n * ratio.val / total;
    let n_test = n - n_train - n_val;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::config(format!(
            "{n} samples split {}:{}:{} leaves an empty split",
            ratio.train, ratio.val, ratio.test
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Ok(Split { train: idx, val, test })
}

/// Normalized planes for each split, with the policy fit on the training
/// split only.
pub struct PreparedPlanes {
    pub policy: NormPolicy,
    pub train: Vec<AngularDelayPlanes>,
    pub val: Vec<AngularDelayPlanes>,
    pub test: Vec<AngularDelayPlanes>,
}

pub fn prepare_planes(h_s: &[ComplexMatrix], split: &Split) -> Result<PreparedPlanes> {
    let policy = NormPolicy::fit(split.train.iter().map(|&i| &h_s[i]))?;
    let pick = |ix: &[usize]| ix.iter().map(|&i| split_normalize(&h_s[i], &policy)).collect::<Result<Vec<_>>>();
    Ok(PreparedPlanes { policy, train: pick(&split.train)?, val: pick(&split.val)?, test: pick(&split.test)? })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training-mode batch loss over the epoch.
    pub train_loss: f64,
    /// Inference-mode loss on the validation split.
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: EnetParams<f32>,
    pub best_epoch: usize,
    /// Training-mode loss of the initial model before any update.
    pub initial_loss: f64,
    pub history: Vec<EpochLog>,
    pub stopped_early: bool,
}

fn real_tensor(samples: &[&AngularDelayPlanes], config: &EnetConfig) -> Result<Tensor4<f32>> {
    let data: Vec<f32> = samples.iter().flat_map(|p| p.real_plane().iter().map(|&v| v as f32)).collect();
    Tensor4::from_vec([samples.len(), 1, config.n_cc, config.n_t], data)
}

fn check_dims(planes: &[AngularDelayPlanes], config: &EnetConfig, what: &str) -> Result<()> {
    match planes.iter().position(|p| (p.n_cc(), p.n_t()) != (config.n_cc, config.n_t)) {
        Some(i) => Err(Error::shape(format!(
            "{what} sample {i} is {}x{}, model expects {}x{}",
            planes[i].n_cc(),
            planes[i].n_t(),
            config.n_cc,
            config.n_t
        ))),
        None => Ok(()),
    }
}

/// Batches of `size` over `order`; a trailing batch of one is dropped since
/// batch statistics need two items.
fn batches(order: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(size).filter(|c| c.len() >= 2)
}

/// Mean inference-mode loss over `samples`, in chunks of `chunk`.
fn infer_loss(model: &EnetParams<f32>, samples: &[AngularDelayPlanes], chunk: usize) -> Result<f64> {
    let refs: Vec<&AngularDelayPlanes> = samples.iter().collect();
    let mut total = 0.0;
    for c in refs.chunks(chunk.max(1)) {
        let x = real_tensor(c, model.config())?;
        let y = model.reconstruct_batch(&x)?;
        total += mse_loss(&y, &x)?.0 * c.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

pub fn train(model: EnetParams<f32>, train: &[AngularDelayPlanes], val: &[AngularDelayPlanes], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, train, val, cfg, &mut |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    mut model: EnetParams<f32>,
    train: &[AngularDelayPlanes],
    val: &[AngularDelayPlanes],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let config = *model.config();
    check_dims(train, &config, "training")?;
    check_dims(val, &config, "validation")?;
    if cfg.batch_size < 2 || cfg.batch_size > train.len() {
        return Err(Error::config(format!(
            "batch size {} must lie in 2..={} (training split size)",
            cfg.batch_size,
            train.len()
        )));
    }
    if val.is_empty() {
        return Err(Error::config("validation split is empty"));
    }
    let mut states: Vec<(AdamState<f32>, AdamState<f32>)> = model
        .layers()
        .iter()
        .map(|l| Ok((AdamState::new(l.weights.len(), cfg.adam)?, AdamState::new(l.biases.len(), cfg.adam)?)))
        .collect::<Result<_>>()?;
    let data: Vec<&AngularDelayPlanes> = train.iter().collect();
    let gather = |ix: &[usize]| real_tensor(&ix.iter().map(|&i| data[i]).collect::<Vec<_>>(), &config);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut initial = 0.0;
    let mut seen = 0;
    for b in batches(&order, cfg.batch_size) {
        let x = gather(b)?;
        let (y, _) = model.forward_train(&x)?;
        initial += mse_loss(&y, &x)?.0 * b.len() as f64;
        seen += b.len();
    }
    let initial_loss = initial / seen as f64;

    let mut best = model.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut stopped_early = false;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0);
        for (bi, b) in batches(&order, cfg.batch_size).enumerate() {
            let abort = |reason: String| Error::TrainingAborted { epoch, batch: bi, reason };
            let x = gather(b)?;
            let (y, mut trace) = model.forward_train(&x)?;
            let (loss, grad) = mse_loss(&y, &x)?;
            if !loss.is_finite() {
                return Err(abort(format!("loss is {loss}; learning rate too high or bad data")));
            }
            let grads = model.backward(&mut trace, grad)?;
            for ((layer, g), (sw, sb)) in model.layers_mut().iter_mut().zip(&grads).zip(&mut states) {
                adam_step(&mut layer.weights, &g.weights, sw).map_err(|e| abort(e.to_string()))?;
                adam_step(&mut layer.biases, &g.biases, sb).map_err(|e| abort(e.to_string()))?;
            }
            model.apply_bn_updates(trace);
            sum += loss * b.len() as f64;
            count += b.len();
        }
        let val_loss = infer_loss(&model, val, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::TrainingAborted { epoch, batch: 0, reason: format!("validation loss is {val_loss}") });
        }
        let log = EpochLog { epoch, train_loss: sum / count as f64, val_loss };
        on_epoch(&log);
        history.push(log);
        if val_loss < best_loss {
            best_loss = val_loss;
            best_epoch = epoch;
            best = model.clone();
        } else if cfg.patience.is_some_and(|p| epoch - best_epoch >= p) {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome { best, best_epoch, initial_loss, history, stopped_early })
}

/// A decibel value that serializes `-inf` as the string `"-inf"`.
#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
pub struct Db(pub f64);

impl Db {
    pub fn from_linear(x: f64) -> Self {
        Db(10.0 * x.log10())
    }

    pub fn is_neg_infinite(&self) -> bool {
        self.0 == f64::NEG_INFINITY
    }
}

impl Serialize for Db {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else {
            s.serialize_str(if self.0 > 0.0 { "inf" } else if self.0 < 0.0 { "-inf" } else { "nan" })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NmseStats {
    /// Samples that entered the mean.
    pub count: usize,
    /// Samples excluded for a zero-norm target.
    pub excluded: usize,
    pub mean: f64,
    pub db: Db,
    pub median_db: Db,
    pub p10_db: Db,
    pub p90_db: Db,
    pub max_db: Db,
}

impl NmseStats {
    fn from_samples(values: &[Option<f64>]) -> Self {
        let mut v: Vec<f64> = values.iter().flatten().copied().collect();
        let excluded = values.len() - v.len();
        let mean = if v.is_empty() { f64::NAN } else { crate::correlation::pairwise_sum(&v) / v.len() as f64 };
        v.sort_by(f64::total_cmp);
        let q = |p: f64| -> Db {
            if v.is_empty() {
                return Db(f64::NAN);
            }
            Db::from_linear(v[((v.len() - 1) as f64 * p).round() as usize])
        };
        Self { count: v.len(), excluded, mean, db: Db::from_linear(mean), median_db: q(0.5), p10_db: q(0.1), p90_db: q(0.9), max_db: q(1.0) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PartNmse {
    pub real: NmseStats,
    pub imag: NmseStats,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub samples: usize,
    /// On the `[0, 1]` planes.
    pub normalized: PartNmse,
    /// On the centered planes, equal to the NMSE of the denormalized parts.
    pub centered: PartNmse,
    /// Of the reassembled complex `H_s`.
    pub complex: NmseStats,
    pub model_fingerprint: String,
    pub data_fingerprint: String,
}

/// `||a - b||² / ||b||²`, `None` when `b` is all zeros.
pub fn nmse(estimate: &[f64], target: &[f64]) -> Option<f64> {
    let den: f64 = target.iter().map(|t| t * t).sum();
    (den > 0.0).then(|| estimate.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / den)
}

/// SHA-256 of every plane entry, real parts then imaginary parts per sample.
pub fn planes_fingerprint(samples: &[AngularDelayPlanes]) -> String {
    let mut h = Sha256::new();
    for s in samples {
        for x in s.real_plane().iter().chain(s.imag_plane()) {
            h.update(x.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Inference-mode reconstruction of both parts of every sample with the same
/// parameters. Per-sample results do not depend on batching or order.
pub fn evaluate(model: &EnetParams<f32>, test: &[AngularDelayPlanes]) -> Result<EvalReport> {
    let config = *model.config();
    check_dims(test, &config, "test")?;
    if test.is_empty() {
        return Err(Error::config("test set is empty"));
    }
    let recon = |plane: fn(&AngularDelayPlanes) -> &[f64]| -> Result<Vec<Vec<f64>>> {
        let xs: Vec<f32> = test.iter().flat_map(|p| plane(p).iter().map(|&v| v as f32)).collect();
        let n = config.n();
        xs.par_chunks(64 * n)
            .map(|c| {
                let x = Tensor4::from_vec([c.len() / n, 1, config.n_cc, config.n_t], c.to_vec())?;
                let y = model.reconstruct_batch(&x)?;
                Ok(y.data().chunks(n).map(|s| s.iter().map(|&v| v as f64).collect()).collect::<Vec<Vec<f64>>>())
            })
            .collect::<Result<Vec<_>>>()
            .map(|v| v.into_iter().flatten().collect())
    };
    let real_hat = recon(|p| p.real_plane())?;
    let imag_hat = recon(|p| p.imag_plane())?;

    let center = |v: &[f64], off: f64| v.iter().map(|x| x - off).collect::<Vec<f64>>();
    let mut per = [vec![], vec![], vec![], vec![], vec![]];
    for (s, (rh, ih)) in test.iter().zip(real_hat.iter().zip(&imag_hat)) {
        let (r, i) = (s.real_plane(), s.imag_plane());
        let off = s.norm().offset;
        per[0].push(nmse(rh, r));
        per[1].push(nmse(ih, i));
        let (rc, ic) = (center(r, off), center(i, off));
        let (rhc, ihc) = (center(rh, off), center(ih, off));
        per[2].push(nmse(&rhc, &rc));
        per[3].push(nmse(&ihc, &ic));
        per[4].push(nmse(&[rhc, ihc].concat(), &[rc, ic].concat()));
    }
    let stats = |k: usize| NmseStats::from_samples(&per[k]);
    Ok(EvalReport {
        samples: test.len(),
        normalized: PartNmse { real: stats(0), imag: stats(1) },
        centered: PartNmse { real: stats(2), imag: stats(3) },
        complex: stats(4),
        model_fingerprint: model.fingerprint(),
        data_fingerprint: planes_fingerprint(test),
    })
}

/// Everything needed to audit one training run.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub model: EnetConfig,
    pub train: TrainConfig,
    pub model_seed: u64,
    pub policy: NormPolicy,
    pub split_sizes: [usize; 3],
    pub train_fingerprint: String,
    pub initial_loss: f64,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub history: Vec<EpochLog>,
    pub eval: EvalReport,
}
