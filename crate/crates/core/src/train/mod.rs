//! Training, evaluation, tracking, inference timing and experiment runs.

pub mod experiment;
pub mod metrics;

pub use experiment::{run_experiment, CellConfig, CellResult, ExperimentConfig};
pub use metrics::{compute_metrics, ComponentMetrics, Metrics, PooledMetrics, COMPONENT_NAMES};

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::arch::{build_f32, ArchitectureSpec, FilterMode, NetworkGraph};
use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::depth::{shifted_channel_volume, variant_channels};
use crate::error::{CoreError, Result};
use crate::rng::rng_for;
use crate::sim::{
    pose_to_matrix, relative_transform, Dataset, Pose, Split, TransformMatrix, Volume,
};
use crate::tensor::{adam_step, AdamHyper, AdamState, BackwardMode, BnMode, Tape, Tensor};

/// Which pose components one network learns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelMode {
    Full6D,
    Position,
    Orientation,
    /// A single pose component (0..6).
    Component(u8),
}

impl LabelMode {
    pub fn indices(&self) -> Vec<usize> {
        match self {
            LabelMode::Full6D => (0..6).collect(),
            LabelMode::Position => vec![0, 1, 2],
            LabelMode::Orientation => vec![3, 4, 5],
            LabelMode::Component(i) => vec![*i as usize],
        }
    }

    pub fn output_dim(&self) -> usize {
        self.indices().len()
    }

    pub fn name(&self) -> String {
        match self {
            LabelMode::Full6D => "6d".into(),
            LabelMode::Position => "position".into(),
            LabelMode::Orientation => "orientation".into(),
            LabelMode::Component(i) => format!("component_{}", i),
        }
    }
}

impl std::str::FromStr for LabelMode {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "6d" | "full_6d" => Ok(LabelMode::Full6D),
            "position" => Ok(LabelMode::Position),
            "orientation" => Ok(LabelMode::Orientation),
            other => {
                if let Some(i) = other.strip_prefix("component_") {
                    let i: u8 = i.parse().map_err(|_| CoreError::InvalidArg {
                        ctx: "label mode",
                        msg: format!("bad component in {:?}", other),
                    })?;
                    if i < 6 {
                        return Ok(LabelMode::Component(i));
                    }
                }
                Err(CoreError::InvalidArg {
                    ctx: "label mode",
                    msg: format!("expected 6d|position|orientation|component_<0..5>, got {:?}", other),
                })
            }
        }
    }
}

impl Serialize for LabelMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for LabelMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// What the network consumes from each record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Representation {
    Volume,
    /// One of the five flat depth representations.
    Variant(u8),
    /// Volume with z-shifted copies in the channel axis, shifts -k..=+k.
    ShiftedChannels(u8),
}

impl Representation {
    pub fn name(&self) -> String {
        match self {
            Representation::Volume => "volume".into(),
            Representation::Variant(v) => format!("var{}", v),
            Representation::ShiftedChannels(k) => format!("shift{}", k),
        }
    }

    /// Blob the raw data comes from.
    pub fn blob_name(&self) -> String {
        match self {
            Representation::Volume | Representation::ShiftedChannels(_) => "volume".into(),
            Representation::Variant(v) => format!("var{}", v),
        }
    }

    /// Flat-kernel networks for everything that is not a raw volume.
    pub fn filter_mode(&self) -> FilterMode {
        match self {
            Representation::Volume => FilterMode::Volumetric,
            _ => FilterMode::Planar,
        }
    }

    pub fn channels(&self) -> Result<usize> {
        match self {
            Representation::Volume => Ok(1),
            Representation::Variant(v) => variant_channels(*v),
            Representation::ShiftedChannels(k) => Ok(2 * *k as usize + 1),
        }
    }
}

impl std::str::FromStr for Representation {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        if s == "volume" {
            return Ok(Representation::Volume);
        }
        if let Some(v) = s.strip_prefix("var") {
            let v: u8 = v.parse().map_err(|_| bad_repr(s))?;
            variant_channels(v)?;
            return Ok(Representation::Variant(v));
        }
        if let Some(k) = s.strip_prefix("shift") {
            let k: u8 = k.parse().map_err(|_| bad_repr(s))?;
            return Ok(Representation::ShiftedChannels(k));
        }
        Err(bad_repr(s))
    }
}

fn bad_repr(s: &str) -> CoreError {
    CoreError::InvalidArg {
        ctx: "representation",
        msg: format!("expected volume|var<1..5>|shift<k>, got {:?}", s),
    }
}

impl Serialize for Representation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for Representation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Per-component affine map of training labels onto [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelScaler {
    pub y_min: Vec<f64>,
    pub y_max: Vec<f64>,
}

impl LabelScaler {
    /// Fit on the training split only.
    pub fn fit(labels: &[Vec<f64>]) -> Result<LabelScaler> {
        let d = labels.first().map(|l| l.len()).unwrap_or(0);
        if d == 0 {
            return Err(CoreError::InvalidArg {
                ctx: "LabelScaler::fit",
                msg: "no labels".into(),
            });
        }
        let mut y_min = vec![f64::INFINITY; d];
        let mut y_max = vec![f64::NEG_INFINITY; d];
        for l in labels {
            for (i, &v) in l.iter().enumerate() {
                y_min[i] = y_min[i].min(v);
                y_max[i] = y_max[i].max(v);
            }
        }
        for i in 0..d {
            if !(y_max[i] > y_min[i]) {
                return Err(CoreError::InvalidArg {
                    ctx: "LabelScaler::fit",
                    msg: format!("component {} has no spread: [{}, {}]", i, y_min[i], y_max[i]),
                });
            }
        }
        Ok(LabelScaler { y_min, y_max })
    }

    pub fn scale(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .enumerate()
            .map(|(i, &v)| (v - self.y_min[i]) / (self.y_max[i] - self.y_min[i]))
            .collect()
    }

    pub fn unscale(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .enumerate()
            .map(|(i, &v)| v * (self.y_max[i] - self.y_min[i]) + self.y_min[i])
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_plateau_factor")]
    pub plateau_factor: f64,
    #[serde(default = "d_patience")]
    pub plateau_patience: usize,
    /// Relative validation improvement that counts as progress.
    #[serde(default = "d_improvement")]
    pub improvement_rel: f64,
    pub max_epochs: usize,
    pub label_mode: LabelMode,
    #[serde(default = "d_repr")]
    pub representation: Representation,
    pub seed: u64,
}

fn d_lr() -> f64 {
    1e-4
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_batch() -> usize {
    15
}
fn d_plateau_factor() -> f64 {
    5.0
}
fn d_patience() -> usize {
    5
}
fn d_improvement() -> f64 {
    0.01
}
fn d_repr() -> Representation {
    Representation::Volume
}

impl TrainingConfig {
    pub fn new(label_mode: LabelMode, max_epochs: usize, seed: u64) -> Self {
        TrainingConfig {
            lr: d_lr(),
            beta1: d_beta1(),
            beta2: d_beta2(),
            batch_size: d_batch(),
            plateau_factor: d_plateau_factor(),
            plateau_patience: d_patience(),
            improvement_rel: d_improvement(),
            max_epochs,
            label_mode,
            representation: Representation::Volume,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CoreError::InvalidArg {
                ctx: "training config",
                msg: "batch_size must be >= 1".into(),
            });
        }
        if !(self.plateau_factor > 1.0) {
            return Err(CoreError::InvalidArg {
                ctx: "training config",
                msg: format!("plateau_factor must exceed 1, got {}", self.plateau_factor),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub lr: f64,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochStats>,
}

/// One split loaded into memory, mean already subtracted.
pub struct PreparedSplit {
    pub input_dims: [usize; 4],
    pub inputs: Vec<Vec<f32>>,
    /// Selected label components, unscaled physical units.
    pub labels: Vec<Vec<f64>>,
    pub record_ids: Vec<usize>,
}

/// Network-input mean for a representation (shifting happens here too, so
/// the subtraction matches what the inputs went through).
pub fn input_mean(dataset: &Dataset, repr: Representation) -> Result<(Vec<usize>, Vec<f32>)> {
    let (dims, data) = dataset.mean(&repr.blob_name())?;
    Ok(to_input_layout(repr, &dims, data)?)
}

/// Raw blob layout -> network input layout `[c, x, y, z]`.
fn to_input_layout(
    repr: Representation,
    dims: &[usize],
    data: Vec<f32>,
) -> Result<(Vec<usize>, Vec<f32>)> {
    match repr {
        Representation::Volume => {
            let [x, y, z] = three(dims)?;
            Ok((vec![1, x, y, z], data))
        }
        Representation::Variant(_) => {
            let [c, h, w] = three(dims)?;
            Ok((vec![c, h, w, 1], data))
        }
        Representation::ShiftedChannels(k) => {
            let [x, y, z] = three(dims)?;
            let vol = Volume { dims: [x, y, z], data };
            let (c, shifted) = shifted_channel_volume(&vol, k as usize);
            Ok((vec![c, x, y, z], shifted))
        }
    }
}

fn three(dims: &[usize]) -> Result<[usize; 3]> {
    if dims.len() != 3 {
        return Err(CoreError::ShapeMismatch {
            ctx: "representation blob",
            expected: "rank 3".into(),
            got: format!("{:?}", dims),
        });
    }
    Ok([dims[0], dims[1], dims[2]])
}

pub fn prepare_split(
    dataset: &Dataset,
    split: Split,
    repr: Representation,
    label_mode: LabelMode,
    mean: &[f32],
) -> Result<PreparedSplit> {
    let ids = dataset.manifest.split_ids(split);
    let comp = label_mode.indices();
    let mut inputs = Vec::with_capacity(ids.len());
    let mut labels = Vec::with_capacity(ids.len());
    let mut input_dims: Option<[usize; 4]> = None;
    for &id in &ids {
        let (dims, data) = dataset.load_representation(id, &repr.blob_name())?;
        let (idims, mut input) = to_input_layout(repr, &dims, data)?;
        if input.len() != mean.len() {
            return Err(CoreError::ShapeMismatch {
                ctx: "mean subtraction",
                expected: format!("{} values", input.len()),
                got: format!("{}", mean.len()),
            });
        }
        for (v, &m) in input.iter_mut().zip(mean) {
            *v -= m;
        }
        let d4 = [idims[0], idims[1], idims[2], idims[3]];
        if let Some(prev) = input_dims {
            if prev != d4 {
                return Err(CoreError::ShapeMismatch {
                    ctx: "prepare_split",
                    expected: format!("{:?}", prev),
                    got: format!("{:?}", d4),
                });
            }
        } else {
            input_dims = Some(d4);
        }
        inputs.push(input);
        let pose = dataset.meta(id)?.pose;
        labels.push(comp.iter().map(|&i| pose[i]).collect());
    }
    Ok(PreparedSplit {
        input_dims: input_dims.ok_or_else(|| CoreError::InvalidArg {
            ctx: "prepare_split",
            msg: format!("split {:?} is empty", split),
        })?,
        inputs,
        labels,
        record_ids: ids,
    })
}

fn batch_tensor(split: &PreparedSplit, idx: &[usize]) -> Tensor<f32> {
    let [c, x, y, z] = split.input_dims;
    let per = c * x * y * z;
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        data.extend_from_slice(&split.inputs[i]);
    }
    Tensor::new(&[idx.len(), c, x, y, z], data).expect("batch shape")
}

fn scaled_targets(split: &PreparedSplit, idx: &[usize], scaler: &LabelScaler) -> Tensor<f32> {
    let d = scaler.y_min.len();
    let mut data = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        data.extend(scaler.scale(&split.labels[i]).iter().map(|&v| v as f32));
    }
    Tensor::new(&[idx.len(), d], data).expect("target shape")
}

/// Mean squared error of the scaled predictions over a whole split, in
/// inference mode.
fn split_mse(
    net: &mut NetworkGraph<f32>,
    split: &PreparedSplit,
    scaler: &LabelScaler,
    batch_size: usize,
) -> Result<f64> {
    let n = split.inputs.len();
    let idx: Vec<usize> = (0..n).collect();
    let mut acc = 0.0f64;
    for chunk in idx.chunks(batch_size) {
        let input = batch_tensor(split, chunk);
        let target = scaled_targets(split, chunk, scaler);
        let mut tape = Tape::new();
        let pass = net.forward(&mut tape, input, BnMode::Infer, false, false)?;
        let tgt = tape.constant(target);
        let loss = tape.mse_loss(pass.output, tgt)?;
        acc += tape.value(loss).data()[0] as f64 * chunk.len() as f64;
    }
    Ok(acc / n as f64)
}

/// Train a network on a dataset. The architecture's output width, input
/// channels and filter mode are derived from the label mode and the
/// representation.
pub fn train(
    arch_base: &ArchitectureSpec,
    dataset: &Dataset,
    config: &TrainingConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let repr = config.representation;

    let mut arch = arch_base.clone();
    arch.output_dim = config.label_mode.output_dim();
    arch.input_channels = repr.channels()?;
    arch.filter_mode = repr.filter_mode();
    if arch.filter_mode == FilterMode::Planar && arch.long_range == crate::arch::LongRange::Concat
    {
        // pooled concat needs even spatial dims, which flat inputs lack
        arch.long_range = crate::arch::LongRange::Residual;
    }
    arch.validate()?;

    let (mean_dims, mean) = input_mean(dataset, repr)?;
    let train_split = prepare_split(dataset, Split::Train, repr, config.label_mode, &mean)?;
    let val_split = prepare_split(dataset, Split::Val, repr, config.label_mode, &mean)?;
    let scaler = LabelScaler::fit(&train_split.labels)?;

    let mut net = build_f32(&arch, config.seed)?;
    let param_lens: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
    let mut adam = AdamState::<f32>::new(
        &param_lens,
        AdamHyper {
            lr: config.lr,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: 1e-8,
        },
    );

    let n_train = train_split.inputs.len();
    let mut history = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut stall_epochs = 0usize;
    let mut plateaus = 0usize;

    for epoch in 0..config.max_epochs {
        let mut order: Vec<usize> = (0..n_train).collect();
        let mut shuffle_rng = rng_for(config.seed, "shuffle", epoch as u64);
        order.shuffle(&mut shuffle_rng);

        let mut train_acc = 0.0f64;
        for chunk in order.chunks(config.batch_size) {
            let input = batch_tensor(&train_split, chunk);
            let target = scaled_targets(&train_split, chunk, &scaler);
            let mut tape = Tape::new();
            let pass = net.forward(&mut tape, input, BnMode::Train, true, false)?;
            let tgt = tape.constant(target);
            let loss = tape.mse_loss(pass.output, tgt)?;
            let loss_v = tape.value(loss).data()[0] as f64;
            if !loss_v.is_finite() {
                return Err(CoreError::Diverged(format!(
                    "training loss became {} at epoch {}",
                    loss_v, epoch
                )));
            }
            train_acc += loss_v * chunk.len() as f64;
            tape.backward(loss, BackwardMode::Standard)?;

            let grads: Vec<Option<Vec<f32>>> = pass
                .param_ids
                .iter()
                .map(|&id| tape.take_grad(id))
                .collect();
            drop(tape);
            let grad_refs: Vec<Option<&[f32]>> = grads.iter().map(|g| g.as_deref()).collect();
            let mut param_refs: Vec<&mut [f32]> = net
                .params_mut()
                .iter_mut()
                .map(|p| p.data.as_mut_slice())
                .collect();
            adam_step(&mut param_refs, &grad_refs, &mut adam)?;
        }
        let train_mse = train_acc / n_train as f64;
        let val_mse = split_mse(&mut net, &val_split, &scaler, config.batch_size)?;
        if !val_mse.is_finite() {
            return Err(CoreError::Diverged(format!(
                "validation loss became {} at epoch {}",
                val_mse, epoch
            )));
        }
        history.push(EpochStats {
            epoch,
            train_mse,
            val_mse,
            lr: adam.hyper.lr,
        });

        if val_mse < best_val * (1.0 - config.improvement_rel) {
            best_val = val_mse;
            stall_epochs = 0;
            plateaus = 0;
        } else {
            stall_epochs += 1;
            if stall_epochs >= config.plateau_patience {
                adam.hyper.lr /= config.plateau_factor;
                plateaus += 1;
                stall_epochs = 0;
                if plateaus >= 2 {
                    break;
                }
            }
        }
    }

    let meta = CheckpointMeta {
        arch,
        label_mode: config.label_mode,
        representation: repr,
        scaler,
        mean_name: repr.blob_name(),
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint::from_network(&net, meta, mean_dims, mean, Some(adam)),
        history,
    })
}

/// A checkpoint reassembled into a runnable predictor.
pub struct TrainedModel {
    pub meta: CheckpointMeta,
    net: NetworkGraph<f32>,
    mean: Vec<f32>,
    mean_dims: Vec<usize>,
}

impl TrainedModel {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<TrainedModel> {
        Ok(TrainedModel {
            meta: ckpt.meta.clone(),
            net: ckpt.to_network()?,
            mean: ckpt.mean.clone(),
            mean_dims: ckpt.mean_dims.clone(),
        })
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.mean_dims
    }

    /// Predict unscaled labels for raw (not mean-subtracted) inputs in
    /// network layout.
    pub fn predict_raw(&mut self, inputs: &[Vec<f32>]) -> Result<Vec<Vec<f64>>> {
        let d: Vec<usize> = self.mean_dims.clone();
        let per: usize = d.iter().product();
        let mut out = Vec::with_capacity(inputs.len());
        for input in inputs {
            if input.len() != per {
                return Err(CoreError::ShapeMismatch {
                    ctx: "predict input",
                    expected: format!("{} values {:?}", per, d),
                    got: format!("{}", input.len()),
                });
            }
            let centered: Vec<f32> = input.iter().zip(&self.mean).map(|(&v, &m)| v - m).collect();
            let t = Tensor::new(&[1, d[0], d[1], d[2], d[3]], centered)?;
            let y = self.net.infer(t)?;
            let scaled: Vec<f64> = y.data().iter().map(|&v| v as f64).collect();
            out.push(self.meta.scaler.unscale(&scaled));
        }
        Ok(out)
    }

    /// Predict from a record's stored blobs, picking this model's
    /// representation. Returns (component index, value) pairs.
    pub fn predict_components(&mut self, blobs: &[crate::blob::Blob]) -> Result<Vec<(usize, f64)>> {
        let b = crate::blob::find(blobs, &self.meta.representation.blob_name())?;
        let (_, input) = to_input_layout(self.meta.representation, &b.dims, b.data.clone())?;
        let pred = self.predict_raw(std::slice::from_ref(&input))?;
        Ok(self
            .meta
            .label_mode
            .indices()
            .into_iter()
            .zip(pred[0].iter().copied())
            .collect())
    }

    pub fn network_mut(&mut self) -> &mut NetworkGraph<f32> {
        &mut self.net
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }
}

/// Evaluate a model on one split of a dataset.
pub fn evaluate(model: &mut TrainedModel, dataset: &Dataset, split: Split) -> Result<Metrics> {
    let repr = model.meta.representation;
    let label_mode = model.meta.label_mode;
    let prepared = prepare_split(dataset, split, repr, label_mode, &model.mean.clone())?;
    let mut preds = Vec::with_capacity(prepared.inputs.len());
    let [c, x, y, z] = prepared.input_dims;
    for input in &prepared.inputs {
        // inputs are already mean-subtracted here
        let t = Tensor::new(&[1, c, x, y, z], input.clone())?;
        let yv = model.net.infer(t)?;
        let scaled: Vec<f64> = yv.data().iter().map(|&v| v as f64).collect();
        preds.push(model.meta.scaler.unscale(&scaled));
    }
    Ok(compute_metrics(&preds, &prepared.labels, &label_mode.indices()))
}

/// Predict both poses with the given models (either one 6-output model or a
/// complementary split) and return the relative transform between them.
pub fn track(
    models: &mut [&mut TrainedModel],
    first: &[crate::blob::Blob],
    second: &[crate::blob::Blob],
    rotation_center_z: f64,
) -> Result<TransformMatrix> {
    let assemble = |models: &mut [&mut TrainedModel], blobs: &[crate::blob::Blob]| -> Result<Pose> {
        let mut have = [false; 6];
        let mut pose = [0.0f64; 6];
        for m in models.iter_mut() {
            for (idx, v) in m.predict_components(blobs)? {
                have[idx] = true;
                pose[idx] = v;
            }
        }
        if !have.iter().all(|&b| b) {
            return Err(CoreError::InvalidArg {
                ctx: "track",
                msg: "models do not cover all six pose components".into(),
            });
        }
        Ok(Pose::from_array(pose))
    };
    let p1 = assemble(models, first)?;
    let p2 = assemble(models, second)?;
    let t1 = pose_to_matrix(&p1, rotation_center_z)?;
    let t2 = pose_to_matrix(&p2, rotation_center_z)?;
    Ok(relative_transform(&t1, &t2))
}

#[derive(Clone, Copy, Debug)]
pub struct BenchStats {
    pub passes: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    /// All passes produced bit-identical outputs.
    pub deterministic: bool,
}

/// Wall-clock timing of single-sample forward passes; `warmup` extra passes
/// run first and are discarded.
pub fn benchmark_inference(
    model: &mut TrainedModel,
    input: &[f32],
    passes: usize,
    warmup: usize,
) -> Result<BenchStats> {
    let d = model.mean_dims.clone();
    let centered: Vec<f32> = input.iter().zip(&model.mean).map(|(&v, &m)| v - m).collect();
    let tensor = Tensor::new(&[1, d[0], d[1], d[2], d[3]], centered)?;

    for _ in 0..warmup {
        model.net.infer(tensor.clone())?;
    }
    let mut times = Vec::with_capacity(passes);
    let mut reference: Option<Vec<u32>> = None;
    let mut deterministic = true;
    for _ in 0..passes {
        let t0 = Instant::now();
        let out = model.net.infer(tensor.clone())?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
        let bits: Vec<u32> = out.data().iter().map(|v| v.to_bits()).collect();
        match &reference {
            None => reference = Some(bits),
            Some(r) => deterministic &= *r == bits,
        }
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (times.len() as f64 - 1.0);
    Ok(BenchStats {
        passes,
        mean_ms: mean,
        std_ms: var.sqrt(),
        deterministic,
    })
}
