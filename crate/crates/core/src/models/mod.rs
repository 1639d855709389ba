//! The two pair-activity classifiers: a stacked LSTM trained end to end, and
//! a graph-convolutional VAE whose frozen encoder feeds a softmax head.

mod lstm;
mod vae;

pub use lstm::{train_lstm_classifier, LstmClassifier, LstmConfig};
pub use vae::{extract_transfer_classifier, train_vae, PoolMode, TransferClassifier, Vae, VaeConfig, VaeTrainReport};

use crate::dataset::{DatasetManifest, PAIR_JOINTS};
use crate::nn::{
    decode_checkpoint, encode_checkpoint, Adam, AdamConfig, AdjacencyMatrix, Bound, Checkpoint, CheckpointError,
    Graph, NnError, ParamSet, RngState, Tensor, Var,
};
use crate::skeleton::{pose_joint, COORDS, NUM_CLASSES, POSE_JOINTS};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("checkpoint does not match its model description: {0}")]
    Meta(String),
}

/// Anatomical tree over the ten pose joints.
pub const SKELETON_EDGES: [(usize, usize); 9] = [
    (pose_joint::PELVIS, pose_joint::SPINE_CHEST),
    (pose_joint::SPINE_CHEST, pose_joint::NECK),
    (pose_joint::NECK, pose_joint::HEAD),
    (pose_joint::SPINE_CHEST, pose_joint::SHOULDER_LEFT),
    (pose_joint::SHOULDER_LEFT, pose_joint::ELBOW_LEFT),
    (pose_joint::ELBOW_LEFT, pose_joint::WRIST_LEFT),
    (pose_joint::SPINE_CHEST, pose_joint::SHOULDER_RIGHT),
    (pose_joint::SHOULDER_RIGHT, pose_joint::ELBOW_RIGHT),
    (pose_joint::ELBOW_RIGHT, pose_joint::WRIST_RIGHT),
];

/// Edges of two copies of a ten-node skeleton, the second offset by ten.
/// There are no edges between the two people.
pub fn two_skeleton_edges(skeleton: &[(usize, usize)]) -> Vec<(usize, usize)> {
    skeleton
        .iter()
        .copied()
        .chain(skeleton.iter().map(|&(u, v)| (u + POSE_JOINTS, v + POSE_JOINTS)))
        .collect()
}

/// Block-diagonal normalized adjacency over both users' 20 joints.
pub fn build_adjacency_two_skeletons() -> AdjacencyMatrix {
    AdjacencyMatrix::from_edges(PAIR_JOINTS, &two_skeleton_edges(&SKELETON_EDGES)).expect("static edge list is valid")
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Exchanges the two users of a flattened `T×20×3` sample.
pub fn swap_users(sample: &[f64]) -> Vec<f64> {
    let half = POSE_JOINTS * COORDS;
    sample
        .chunks_exact(2 * half)
        .flat_map(|f| f[half..].iter().chain(&f[..half]).copied())
        .collect()
}

/// Labeled, equally shaped `T×V×C` samples held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub frames: usize,
    pub nodes: usize,
    pub channels: usize,
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl SampleSet {
    pub fn new(frames: usize, nodes: usize, channels: usize) -> Self {
        Self {
            frames,
            nodes,
            channels,
            inputs: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn sample_len(&self) -> usize {
        self.frames * self.nodes * self.channels
    }

    pub fn push(&mut self, x: Vec<f64>, label: usize) -> Result<(), ModelError> {
        if x.len() != self.sample_len() {
            return Err(ModelError::Shape(format!(
                "sample of {} values, expected {}×{}×{}",
                x.len(),
                self.frames,
                self.nodes,
                self.channels
            )));
        }
        if label >= NUM_CLASSES {
            return Err(ModelError::Shape(format!("label {label} out of range")));
        }
        self.inputs.push(x);
        self.labels.push(label);
        Ok(())
    }

    /// Materializes the given samples of a dataset. Also returns how many
    /// coordinates fell outside the min-max source range.
    pub fn from_manifest(manifest: &DatasetManifest, indices: &[usize]) -> Result<(Self, usize), ModelError> {
        let frames = indices
            .first()
            .map_or(manifest.params.window.length, |&i| manifest.windows[manifest.samples[i].left].frames());
        let mut set = Self::new(frames, PAIR_JOINTS, COORDS);
        let mut out_of_range = 0;
        for &i in indices {
            let (s, oor) = manifest.materialize(i);
            out_of_range += oor;
            set.push(s.tensor, s.label.class_index())?;
        }
        Ok((set, out_of_range))
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// `[B, T, V, C]` tensor of the selected samples.
    pub fn batch(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.sample_len());
        for &i in idx {
            data.extend_from_slice(&self.inputs[i]);
        }
        Tensor::new(&[idx.len(), self.frames, self.nodes, self.channels], data).expect("samples have checked length")
    }

    /// `[B, 9]` one-hot targets of the selected samples.
    pub fn targets(&self, idx: &[usize]) -> Tensor {
        let mut data = vec![0.0; idx.len() * NUM_CLASSES];
        for (row, &i) in idx.iter().enumerate() {
            data[row * NUM_CLASSES + self.labels[i]] = 1.0;
        }
        Tensor::new(&[idx.len(), NUM_CLASSES], data).expect("nonempty batch")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Rescale the gradient when its global L2 norm exceeds this.
    pub clip_norm: Option<f64>,
    /// Learning-rate multiplier reached at the last epoch, decaying
    /// linearly from 1. Unset keeps the rate constant.
    pub lr_decay_to: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            optimizer: AdamConfig::default(),
            clip_norm: None,
            lr_decay_to: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let o = &self.optimizer;
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch size must be positive".into()));
        }
        if !(o.lr > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0) {
            return Err(ModelError::Config(format!("invalid optimizer settings {o:?}")));
        }
        if self.clip_norm.is_some_and(|c| c.is_nan() || c <= 0.0) {
            return Err(ModelError::Config("clip norm must be positive".into()));
        }
        if self.lr_decay_to.is_some_and(|f| !(f > 0.0 && f <= 1.0)) {
            return Err(ModelError::Config("lr_decay_to must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Learning rate of a zero-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let base = self.optimizer.lr;
        match self.lr_decay_to {
            Some(f) if self.epochs > 1 => base * (1.0 + (f - 1.0) * epoch as f64 / (self.epochs - 1) as f64),
            _ => base,
        }
    }
}

/// Mean training loss before the first update and after every epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
}

/// Optimizer and generator state at the end of training.
#[derive(Debug, Clone, PartialEq)]
pub struct ResumeState {
    pub optimizer: Adam,
    pub rng: RngState,
}

/// Mini-batch training loop shared by every model. `loss` builds the batch
/// loss on a fresh graph; epoch losses are sample-weighted means.
pub(crate) fn fit<F>(
    params: &mut ParamSet,
    n: usize,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
    mut loss: F,
) -> Result<(TrainReport, Adam), ModelError>
where
    F: FnMut(&mut Graph, &Bound, &[usize], &mut ChaCha8Rng) -> Result<Var, ModelError>,
{
    if n == 0 {
        return Err(ModelError::EmptyTrainSet);
    }
    config.validate()?;
    let mut adam = Adam::new(config.optimizer, params);
    let mut order: Vec<usize> = (0..n).collect();

    // measured with a private generator so it does not shift the training stream
    let mut probe_rng = ChaCha8Rng::seed_from_u64(0);
    let mut initial = 0.0;
    for chunk in order.chunks(config.batch_size) {
        let mut g = Graph::new();
        let bound = params.bind(&mut g)?;
        let l = loss(&mut g, &bound, chunk, &mut probe_rng)?;
        initial += g.value(l).item() * chunk.len() as f64;
    }

    let mut report = TrainReport {
        initial_loss: initial / n as f64,
        epoch_losses: Vec::with_capacity(config.epochs),
    };
    for epoch in 0..config.epochs {
        adam.config.lr = config.lr_at(epoch);
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut g = Graph::new();
            let bound = params.bind(&mut g)?;
            let l = loss(&mut g, &bound, chunk, rng)?;
            total += g.value(l).item() * chunk.len() as f64;
            let grads = g.backward(l)?;
            params.zero_grad();
            params.accumulate(&bound, &grads);
            if let Some(max) = config.clip_norm {
                let norm = params.grad_norm();
                if norm > max {
                    params.scale_grads(max / norm);
                }
            }
            adam.step(params);
        }
        let mean = total / n as f64;
        log::debug!("epoch {}: loss {mean:.6}", epoch + 1);
        report.epoch_losses.push(mean);
    }
    adam.config.lr = config.optimizer.lr;
    Ok((report, adam))
}

/// Copies parameter values by name. Every parameter of `to` must be present
/// in `from` with the same shape.
pub(crate) fn copy_values(to: &mut ParamSet, from: &ParamSet) -> Result<(), ModelError> {
    for p in to.iter_mut() {
        let id = from
            .id_of(&p.name)
            .ok_or_else(|| ModelError::Meta(format!("missing parameter {}", p.name)))?;
        let src = &from.get(id).value;
        if src.shape() != p.value.shape() {
            return Err(ModelError::Meta(format!(
                "parameter {} has shape {:?}, expected {:?}",
                p.name,
                src.shape(),
                p.value.shape()
            )));
        }
        p.value = src.clone();
    }
    Ok(())
}

/// Anything that maps samples to 9-class distributions.
pub trait Classifier {
    /// One probability vector per sample of `set`, in order.
    fn predict_set(&self, set: &SampleSet) -> Result<Vec<[f64; NUM_CLASSES]>, ModelError>;

    fn predict(&self, sample: &[f64], frames: usize) -> Result<[f64; NUM_CLASSES], ModelError> {
        let mut set = SampleSet::new(frames, PAIR_JOINTS, COORDS);
        set.push(sample.to_vec(), 0)?;
        Ok(self.predict_set(&set)?[0])
    }

    fn classify_set(&self, set: &SampleSet) -> Result<Vec<usize>, ModelError> {
        Ok(self.predict_set(set)?.iter().map(|p| argmax(p)).collect())
    }
}

pub(crate) const PREDICT_BATCH: usize = 64;

pub(crate) fn softmax_rows(logits: &Tensor) -> Vec<[f64; NUM_CLASSES]> {
    logits
        .data()
        .chunks_exact(NUM_CLASSES)
        .map(|row| {
            let p = crate::nn::loss::softmax(row);
            let mut out = [0.0; NUM_CLASSES];
            out.copy_from_slice(&p);
            out
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ModelMeta {
    Lstm {
        frames: usize,
        config: LstmConfig,
    },
    VaeTransfer {
        frames: usize,
        nodes: usize,
        channels: usize,
        edges: Vec<(usize, usize)>,
        config: VaeConfig,
    },
}

/// A trained classifier of either family.
#[derive(Debug, Clone)]
pub enum TrainedModel {
    Lstm(LstmClassifier),
    Transfer(TransferClassifier),
}

impl Classifier for TrainedModel {
    fn predict_set(&self, set: &SampleSet) -> Result<Vec<[f64; NUM_CLASSES]>, ModelError> {
        match self {
            TrainedModel::Lstm(m) => m.predict_set(set),
            TrainedModel::Transfer(m) => m.predict_set(set),
        }
    }
}

fn unseeded() -> RngState {
    RngState::capture(&ChaCha8Rng::from_seed([0; 32]))
}

impl TrainedModel {
    pub fn kind(&self) -> &'static str {
        match self {
            TrainedModel::Lstm(_) => "lstm",
            TrainedModel::Transfer(_) => "vae",
        }
    }

    /// Serializes the model, with its optimizer and generator state when
    /// known. Values are stored at `f32` precision.
    pub fn to_checkpoint_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let (meta, params, resume) = match self {
            TrainedModel::Lstm(m) => (
                ModelMeta::Lstm {
                    frames: m.frames,
                    config: m.config.clone(),
                },
                m.params.clone(),
                m.resume.clone(),
            ),
            TrainedModel::Transfer(m) => {
                let vae = m.vae();
                let mut all = vae.params.clone();
                for p in m.head_params().iter() {
                    all.add(p.name.clone(), p.value.clone(), p.trainable)?;
                }
                (
                    ModelMeta::VaeTransfer {
                        frames: vae.frames,
                        nodes: vae.adjacency.nodes(),
                        channels: vae.in_channels,
                        edges: vae.adjacency.edges().to_vec(),
                        config: vae.config.clone(),
                    },
                    all,
                    m.resume.clone().map(|mut r| {
                        // frozen parameters carry zero moments so every parameter has one
                        let zeros: Vec<Tensor> = vae.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
                        r.optimizer.m.splice(0..0, zeros.iter().cloned());
                        r.optimizer.v.splice(0..0, zeros);
                        r
                    }),
                )
            }
        };
        let meta = serde_json::to_string(&meta).map_err(|e| ModelError::Meta(e.to_string()))?;
        let (optimizer, rng) = match resume {
            Some(r) => (Some(r.optimizer), r.rng),
            None => (None, unseeded()),
        };
        Ok(encode_checkpoint(&Checkpoint {
            meta,
            params,
            optimizer,
            rng,
        }))
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let ckpt = decode_checkpoint(bytes)?;
        let meta: ModelMeta = serde_json::from_str(&ckpt.meta).map_err(|e| ModelError::Meta(e.to_string()))?;
        let mut rng = ChaCha8Rng::from_seed([0; 32]);
        match meta {
            ModelMeta::Lstm { frames, config } => {
                let mut m = LstmClassifier::new(config, frames, &mut rng)?;
                if m.params.len() != ckpt.params.len() {
                    return Err(ModelError::Meta("unexpected parameter count".into()));
                }
                copy_values(&mut m.params, &ckpt.params)?;
                m.resume = resume_from(&ckpt, &m.params);
                Ok(TrainedModel::Lstm(m))
            }
            ModelMeta::VaeTransfer {
                frames,
                nodes,
                channels,
                edges,
                config,
            } => {
                let adjacency = AdjacencyMatrix::from_edges(nodes, &edges)?;
                let mut vae = Vae::new(config, frames, adjacency, channels, &mut rng)?;
                copy_values(&mut vae.params, &ckpt.params)?;
                let mut m = TransferClassifier::new(vae, &mut rng)?;
                copy_values(m.head_params_mut(), &ckpt.params)?;
                if m.vae().params.len() + m.head_params().len() != ckpt.params.len() {
                    return Err(ModelError::Meta("unexpected parameter count".into()));
                }
                m.resume = resume_from(&ckpt, m.head_params());
                Ok(TrainedModel::Transfer(m))
            }
        }
    }
}

fn resume_from(ckpt: &Checkpoint, trained: &ParamSet) -> Option<ResumeState> {
    let adam = ckpt.optimizer.as_ref()?;
    // moments are stored for the full parameter list; keep the trained tail
    let skip = ckpt.params.len().checked_sub(trained.len())?;
    Some(ResumeState {
        optimizer: Adam {
            config: adam.config,
            t: adam.t,
            m: adam.m.get(skip..)?.to_vec(),
            v: adam.v.get(skip..)?.to_vec(),
        },
        rng: ckpt.rng,
    })
}
