use super::{
    fit, softmax_rows, two_skeleton_edges, Classifier, ModelError, ResumeState, SampleSet, TrainConfig, TrainReport,
    PREDICT_BATCH, SKELETON_EDGES,
};
use crate::dataset::PAIR_JOINTS;
use crate::nn::loss::{elbo_loss, reparameterize};
use crate::nn::{AdjacencyMatrix, Bound, Dense, Graph, ParamSet, RngState, StgcnLayer, Tensor, Var};
use crate::skeleton::{COORDS, NUM_CLASSES};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Axes averaged by the pooling layer after the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    /// Average over frames, keeping one feature vector per joint.
    Frames,
    /// Average over frames and joints.
    FramesAndNodes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeConfig {
    /// Output channels of each encoder layer; the decoder runs them in reverse.
    pub channels: Vec<usize>,
    pub latent: usize,
    /// Temporal kernel width, odd.
    pub kernel: usize,
    /// Edges of one ten-joint skeleton.
    pub skeleton_edges: Vec<(usize, usize)>,
    pub pool: PoolMode,
    /// Posterior draws per sample when estimating the reconstruction term.
    pub posterior_samples: usize,
    /// Subtracted from every input value before encoding; reconstructions
    /// target the shifted values.
    pub input_offset: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            channels: vec![16, 32],
            latent: 32,
            kernel: 9,
            skeleton_edges: SKELETON_EDGES.to_vec(),
            pool: PoolMode::Frames,
            posterior_samples: 1,
            input_offset: 0.0,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(ModelError::Config("encoder channels must be a nonempty list of positive sizes".into()));
        }
        if self.latent == 0 {
            return Err(ModelError::Config("latent size must be at least 1".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(ModelError::Config(format!("temporal kernel must be odd, got {}", self.kernel)));
        }
        if self.posterior_samples == 0 {
            return Err(ModelError::Config("posterior samples must be at least 1".into()));
        }
        if !self.input_offset.is_finite() {
            return Err(ModelError::Config("input_offset must be finite".into()));
        }
        Ok(())
    }

    /// Adjacency over both users' joints.
    pub fn pair_adjacency(&self) -> Result<AdjacencyMatrix, ModelError> {
        Ok(AdjacencyMatrix::from_edges(
            PAIR_JOINTS,
            &two_skeleton_edges(&self.skeleton_edges),
        )?)
    }
}

/// Graph-convolutional variational autoencoder over `T×V×C` samples.
/// Parameter names: `enc.*` for the convolution stack, `latent.*` for the
/// posterior heads, `dec.*` for the decoder.
#[derive(Debug, Clone)]
pub struct Vae {
    pub config: VaeConfig,
    pub frames: usize,
    pub in_channels: usize,
    pub adjacency: AdjacencyMatrix,
    pub params: ParamSet,
    encoder: Vec<StgcnLayer>,
    mu: Dense,
    logvar: Dense,
    expand: Dense,
    decoder: Vec<StgcnLayer>,
}

impl Vae {
    pub fn new(
        config: VaeConfig,
        frames: usize,
        adjacency: AdjacencyMatrix,
        in_channels: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        if frames == 0 || in_channels == 0 {
            return Err(ModelError::Config("frames and channels must be positive".into()));
        }
        let nodes = adjacency.nodes();
        let mut params = ParamSet::new();
        let mut encoder = Vec::new();
        let mut c_in = in_channels;
        for (i, &c) in config.channels.iter().enumerate() {
            encoder.push(StgcnLayer::new(&mut params, &format!("enc.{i}"), c_in, c, config.kernel, true, rng)?);
            c_in = c;
        }
        let top = c_in;
        let features = match config.pool {
            PoolMode::Frames => nodes * top,
            PoolMode::FramesAndNodes => top,
        };
        let mu = Dense::new(&mut params, "latent.mu", features, config.latent, rng)?;
        let logvar = Dense::new(&mut params, "latent.logvar", features, config.latent, rng)?;
        let expand = Dense::new(&mut params, "dec.expand", config.latent, frames * nodes * top, rng)?;
        let mut decoder = Vec::new();
        let outs: Vec<usize> = config.channels.iter().rev().skip(1).copied().chain([in_channels]).collect();
        let mut c_in = top;
        for (i, &c) in outs.iter().enumerate() {
            let last = i + 1 == outs.len();
            decoder.push(StgcnLayer::new(&mut params, &format!("dec.{i}"), c_in, c, config.kernel, !last, rng)?);
            c_in = c;
        }
        Ok(Self {
            config,
            frames,
            in_channels,
            adjacency,
            params,
            encoder,
            mu,
            logvar,
            expand,
            decoder,
        })
    }

    /// A VAE over both users' skeletons.
    pub fn for_pairs(config: VaeConfig, frames: usize, rng: &mut ChaCha8Rng) -> Result<Self, ModelError> {
        let adjacency = config.pair_adjacency()?;
        Self::new(config, frames, adjacency, COORDS, rng)
    }

    fn top_channels(&self) -> usize {
        *self.config.channels.last().expect("validated nonempty")
    }

    /// Width of the pooled feature vector.
    pub fn feature_size(&self) -> usize {
        match self.config.pool {
            PoolMode::Frames => self.adjacency.nodes() * self.top_channels(),
            PoolMode::FramesAndNodes => self.top_channels(),
        }
    }

    fn check_input(&self, g: &Graph, x: Var) -> Result<(), ModelError> {
        let s = g.value(x).shape();
        if s.len() != 4 || s[1] != self.frames || s[2] != self.adjacency.nodes() || s[3] != self.in_channels {
            return Err(ModelError::Shape(format!(
                "input {s:?} for {}×{}×{} samples",
                self.frames,
                self.adjacency.nodes(),
                self.in_channels
            )));
        }
        Ok(())
    }

    /// Encoder convolutions followed by average pooling: `[B, features]`.
    pub fn features(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var, ModelError> {
        self.check_input(g, x)?;
        let batch = g.value(x).shape()[0];
        let mut h = x;
        for layer in &self.encoder {
            h = layer.forward(g, p, h, &self.adjacency)?;
        }
        let pooled = match self.config.pool {
            PoolMode::Frames => g.mean_over(h, &[1])?,
            PoolMode::FramesAndNodes => g.mean_over(h, &[1, 2])?,
        };
        Ok(g.reshape(pooled, &[batch, self.feature_size()])?)
    }

    /// Posterior mean and log-variance, each `[B, latent]`.
    pub fn encode(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<(Var, Var), ModelError> {
        let f = self.features(g, p, x)?;
        Ok((self.mu.forward(g, p, f)?, self.logvar.forward(g, p, f)?))
    }

    /// Reconstruction `[B, T, V, C]` from latent codes `[B, latent]`.
    pub fn decode(&self, g: &mut Graph, p: &Bound, z: Var) -> Result<Var, ModelError> {
        let batch = g.value(z).shape()[0];
        let h = self.expand.forward(g, p, z)?;
        let mut h = g.reshape(h, &[batch, self.frames, self.adjacency.nodes(), self.top_channels()])?;
        for layer in &self.decoder {
            h = layer.forward(g, p, h, &self.adjacency)?;
        }
        Ok(h)
    }

    /// Negative ELBO of a batch using the given standard-normal draws, one
    /// `[B, latent]` tensor per posterior sample. Returns `(loss, kl)`.
    pub fn loss_with_noise(&self, g: &mut Graph, p: &Bound, x: Tensor, noise: &[Tensor]) -> Result<(Var, Var), ModelError> {
        if noise.is_empty() {
            return Err(ModelError::Config("need at least one posterior draw".into()));
        }
        let x = g.constant(self.prepare(x))?;
        let (mu, logvar) = self.encode(g, p, x)?;
        let mut total: Option<Var> = None;
        let mut kl = None;
        for eps in noise {
            let lat = reparameterize(g, mu, logvar, eps.clone())?;
            let recon = self.decode(g, p, lat.z)?;
            let terms = elbo_loss(g, recon, x, mu, logvar)?;
            kl = Some(terms.kl);
            total = Some(match total {
                None => terms.loss,
                Some(t) => g.add(t, terms.loss)?,
            });
        }
        let loss = g.scale(total.expect("nonempty"), 1.0 / noise.len() as f64)?;
        Ok((loss, kl.expect("nonempty")))
    }

    /// Applies the configured input offset to a raw batch.
    pub fn prepare(&self, mut x: Tensor) -> Tensor {
        if self.config.input_offset != 0.0 {
            x.data_mut().iter_mut().for_each(|v| *v -= self.config.input_offset);
        }
        x
    }

    fn draw_noise(&self, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
        (0..self.config.posterior_samples)
            .map(|_| {
                let data = (0..batch * self.config.latent)
                    .map(|_| StandardNormal.sample(rng))
                    .collect();
                Tensor::new(&[batch, self.config.latent], data).expect("nonempty")
            })
            .collect()
    }

    /// Mean squared error of reconstructing the samples through the
    /// posterior means.
    pub fn reconstruction_mse(&self, set: &SampleSet, idx: &[usize]) -> Result<f64, ModelError> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g)?;
        let x = g.constant(self.prepare(set.batch(idx)))?;
        let (mu, _) = self.encode(&mut g, &bound, x)?;
        let recon = self.decode(&mut g, &bound, mu)?;
        let (r, x) = (g.value(recon).data(), g.value(x).data());
        Ok(r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / r.len() as f64)
    }
}

/// Per-epoch KL terms alongside the usual loss curve.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VaeTrainReport {
    pub loss: TrainReport,
    /// Smallest batch KL term seen in each epoch.
    pub min_kl: Vec<f64>,
}

/// Self-supervised training on the samples of `train`; labels are ignored.
pub fn train_vae(
    train: &SampleSet,
    config: &VaeConfig,
    train_config: &TrainConfig,
    seed: u64,
) -> Result<(Vae, VaeTrainReport), ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyTrainSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let adjacency = if train.nodes == PAIR_JOINTS {
        config.pair_adjacency()?
    } else {
        AdjacencyMatrix::identity(train.nodes)?
    };
    let mut vae = Vae::new(config.clone(), train.frames, adjacency, train.channels, &mut rng)?;
    let mut params = std::mem::take(&mut vae.params);
    let mut min_kl = Vec::new();
    let mut epoch_min = f64::INFINITY;
    let mut seen = 0;
    let batches_per_epoch = train.len().div_ceil(train_config.batch_size.max(1));
    let (report, _) = fit(&mut params, train.len(), train_config, &mut rng, |g, p, idx, rng| {
        let noise = vae.draw_noise(idx.len(), rng);
        let (loss, kl) = vae.loss_with_noise(g, p, train.batch(idx), &noise)?;
        seen += 1;
        // the first pass over the data only measures the initial loss
        if seen > batches_per_epoch {
            epoch_min = epoch_min.min(g.value(kl).item());
            if (seen - batches_per_epoch) % batches_per_epoch == 0 {
                min_kl.push(epoch_min);
                epoch_min = f64::INFINITY;
            }
        }
        Ok(loss)
    })?;
    vae.params = params;
    Ok((vae, VaeTrainReport { loss: report, min_kl }))
}

/// Frozen VAE encoder and pooling capped with a trainable softmax layer
/// (`head.*`).
#[derive(Debug, Clone)]
pub struct TransferClassifier {
    vae: Vae,
    head_params: ParamSet,
    head: Dense,
    pub resume: Option<ResumeState>,
}

impl TransferClassifier {
    /// Freezes every VAE parameter and attaches a fresh head.
    pub fn new(mut vae: Vae, rng: &mut ChaCha8Rng) -> Result<Self, ModelError> {
        vae.params.set_trainable("", false);
        let mut head_params = ParamSet::new();
        let head = Dense::new(&mut head_params, "head", vae.feature_size(), NUM_CLASSES, rng)?;
        Ok(Self {
            vae,
            head_params,
            head,
            resume: None,
        })
    }

    pub fn vae(&self) -> &Vae {
        &self.vae
    }

    pub fn head_params(&self) -> &ParamSet {
        &self.head_params
    }

    pub(crate) fn head_params_mut(&mut self) -> &mut ParamSet {
        &mut self.head_params
    }

    /// SHA-256 of the encoder convolution weights.
    pub fn encoder_fingerprint(&self) -> String {
        self.vae.params.fingerprint("enc.")
    }

    /// Pooled encoder features `[N, F]` of every sample, computed once.
    pub fn features_of(&self, set: &SampleSet) -> Result<Tensor, ModelError> {
        let idx: Vec<usize> = (0..set.len()).collect();
        let mut data = Vec::with_capacity(set.len() * self.vae.feature_size());
        for chunk in idx.chunks(PREDICT_BATCH) {
            let mut g = Graph::new();
            let bound = self.vae.params.bind(&mut g)?;
            let x = g.constant(self.vae.prepare(set.batch(chunk)))?;
            let f = self.vae.features(&mut g, &bound, x)?;
            data.extend_from_slice(g.value(f).data());
        }
        Ok(Tensor::new(&[set.len(), self.vae.feature_size()], data)?)
    }

    /// Trains the head only. With `cache_features` the frozen encoder runs
    /// once per sample; otherwise every step runs the full network with the
    /// encoder bound as constants.
    pub fn train_head(
        &mut self,
        train: &SampleSet,
        train_config: &TrainConfig,
        rng: &mut ChaCha8Rng,
        cache_features: bool,
    ) -> Result<TrainReport, ModelError> {
        if train.is_empty() {
            return Err(ModelError::EmptyTrainSet);
        }
        let cached = if cache_features {
            Some(self.features_of(train)?)
        } else {
            None
        };
        let width = self.vae.feature_size();
        let mut head_params = std::mem::take(&mut self.head_params);
        let vae = &self.vae;
        let head = self.head;
        let result = fit(&mut head_params, train.len(), train_config, rng, |g, p, idx, _| {
            let f = match &cached {
                Some(all) => {
                    let mut data = Vec::with_capacity(idx.len() * width);
                    for &i in idx {
                        data.extend_from_slice(&all.data()[i * width..(i + 1) * width]);
                    }
                    g.constant(Tensor::new(&[idx.len(), width], data)?)?
                }
                None => {
                    let frozen = vae.params.bind(g)?;
                    let x = g.constant(self.vae.prepare(train.batch(idx)))?;
                    vae.features(g, &frozen, x)?
                }
            };
            let logits = head.forward(g, p, f)?;
            Ok(g.softmax_cross_entropy(logits, train.targets(idx))?)
        });
        self.head_params = head_params;
        let (report, adam) = result?;
        self.resume = Some(ResumeState {
            optimizer: adam,
            rng: RngState::capture(rng),
        });
        Ok(report)
    }
}

impl Classifier for TransferClassifier {
    fn predict_set(&self, set: &SampleSet) -> Result<Vec<[f64; NUM_CLASSES]>, ModelError> {
        let idx: Vec<usize> = (0..set.len()).collect();
        let mut out = Vec::with_capacity(set.len());
        for chunk in idx.chunks(PREDICT_BATCH) {
            let mut g = Graph::new();
            let frozen = self.vae.params.bind(&mut g)?;
            let head = self.head_params.bind(&mut g)?;
            let x = g.constant(self.vae.prepare(set.batch(chunk)))?;
            let f = self.vae.features(&mut g, &frozen, x)?;
            let logits = self.head.forward(&mut g, &head, f)?;
            out.extend(softmax_rows(g.value(logits)));
        }
        Ok(out)
    }
}

/// Freezes a trained VAE's encoder and trains a softmax head on labeled data.
pub fn extract_transfer_classifier(
    vae: &Vae,
    train: &SampleSet,
    train_config: &TrainConfig,
    seed: u64,
) -> Result<(TransferClassifier, TrainReport), ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clf = TransferClassifier::new(vae.clone(), &mut rng)?;
    let report = clf.train_head(train, train_config, &mut rng, true)?;
    Ok((clf, report))
}
