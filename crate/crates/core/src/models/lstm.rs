use super::{fit, softmax_rows, Classifier, ModelError, ResumeState, SampleSet, TrainConfig, TrainReport, PREDICT_BATCH};
use crate::nn::{Bound, Dense, Graph, LstmLayer, ParamSet, RngState, Tensor, Var};
use crate::skeleton::NUM_CLASSES;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LstmConfig {
    pub layers: usize,
    pub hidden: usize,
    /// Values per frame: 20 joints × 3 coordinates.
    pub input: usize,
    pub classes: usize,
    /// Subtracted from every input value before the first layer. Min-max
    /// scaled coordinates all sit near 0.59, which slows Adam down badly.
    pub input_offset: f64,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden: 128,
            input: 60,
            classes: NUM_CLASSES,
            input_offset: 0.0,
        }
    }
}

impl LstmConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.classes != NUM_CLASSES {
            return Err(ModelError::Config(format!("classes must be {NUM_CLASSES}, got {}", self.classes)));
        }
        if self.layers == 0 || self.hidden == 0 || self.input == 0 {
            return Err(ModelError::Config("layers, hidden and input must be positive".into()));
        }
        if !self.input_offset.is_finite() {
            return Err(ModelError::Config("input_offset must be finite".into()));
        }
        Ok(())
    }
}

/// Stacked LSTM over frames; the last hidden state of the top layer feeds a
/// dense softmax layer.
#[derive(Debug, Clone)]
pub struct LstmClassifier {
    pub config: LstmConfig,
    pub frames: usize,
    pub params: ParamSet,
    layers: Vec<LstmLayer>,
    head: Dense,
    pub resume: Option<ResumeState>,
}

impl LstmClassifier {
    pub fn new(config: LstmConfig, frames: usize, rng: &mut ChaCha8Rng) -> Result<Self, ModelError> {
        config.validate()?;
        if frames == 0 {
            return Err(ModelError::Config("frames must be positive".into()));
        }
        let mut params = ParamSet::new();
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let inputs = if l == 0 { config.input } else { config.hidden };
            layers.push(LstmLayer::new(&mut params, &format!("lstm{l}"), inputs, config.hidden, rng)?);
        }
        let head = Dense::new(&mut params, "head", config.hidden, config.classes, rng)?;
        Ok(Self {
            config,
            frames,
            params,
            layers,
            head,
            resume: None,
        })
    }

    fn check_input(&self, x: &Tensor) -> Result<(), ModelError> {
        let s = x.shape();
        let per_frame: usize = s.get(2..).map_or(0, |r| r.iter().product());
        if s.len() < 3 || s[1] != self.frames || per_frame != self.config.input {
            return Err(ModelError::Shape(format!(
                "input {s:?} for {} frames of {} values",
                self.frames, self.config.input
            )));
        }
        Ok(())
    }

    /// Logits `[B, classes]` for an input of shape `[B, T, ...]`.
    pub fn logits(&self, g: &mut Graph, p: &Bound, x: Tensor) -> Result<Var, ModelError> {
        self.check_input(&x)?;
        let batch = x.shape()[0];
        let mut x = x.reshaped(&[batch, self.frames, self.config.input])?;
        if self.config.input_offset != 0.0 {
            x.data_mut().iter_mut().for_each(|v| *v -= self.config.input_offset);
        }
        let x = g.constant(x)?;
        let mut seq: Vec<Var> = (0..self.frames)
            .map(|t| g.select_time(x, t))
            .collect::<Result<_, _>>()?;
        for layer in &self.layers {
            seq = layer.forward(g, p, &seq)?;
        }
        let last = *seq.last().expect("frames > 0");
        Ok(self.head.forward(g, p, last)?)
    }

    /// Mean cross-entropy of a labeled batch.
    pub fn loss(&self, g: &mut Graph, p: &Bound, set: &SampleSet, idx: &[usize]) -> Result<Var, ModelError> {
        let logits = self.logits(g, p, set.batch(idx))?;
        Ok(g.softmax_cross_entropy(logits, set.targets(idx))?)
    }
}

impl Classifier for LstmClassifier {
    fn predict_set(&self, set: &SampleSet) -> Result<Vec<[f64; NUM_CLASSES]>, ModelError> {
        let idx: Vec<usize> = (0..set.len()).collect();
        let mut out = Vec::with_capacity(set.len());
        for chunk in idx.chunks(PREDICT_BATCH) {
            let mut g = Graph::new();
            let bound = self.params.bind(&mut g)?;
            let logits = self.logits(&mut g, &bound, set.batch(chunk))?;
            out.extend(softmax_rows(g.value(logits)));
        }
        Ok(out)
    }
}

/// Supervised training with cross-entropy through time. Initialization,
/// shuffling and therefore the final parameters depend only on `seed`.
pub fn train_lstm_classifier(
    train: &SampleSet,
    config: &LstmConfig,
    train_config: &TrainConfig,
    seed: u64,
) -> Result<(LstmClassifier, TrainReport), ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyTrainSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = LstmClassifier::new(config.clone(), train.frames, &mut rng)?;
    if train.nodes * train.channels != config.input {
        return Err(ModelError::Shape(format!(
            "samples carry {} values per frame, model expects {}",
            train.nodes * train.channels,
            config.input
        )));
    }
    let mut params = std::mem::take(&mut model.params);
    let (report, adam) = fit(&mut params, train.len(), train_config, &mut rng, |g, p, idx, _| {
        model.loss(g, p, train, idx)
    })?;
    model.params = params;
    model.resume = Some(ResumeState {
        optimizer: adam,
        rng: RngState::capture(&rng),
    });
    Ok((model, report))
}
