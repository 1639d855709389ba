//! Independent reference implementations used by tests: finite-difference
//! gradient checks and brute-force enumerators for windowing, pairing,
//! transition filtering and metrics.

use crate::dataset::PAIR_JOINTS;
use crate::models::{LstmClassifier, LstmConfig, ModelError, SampleSet, Vae, VaeConfig};
use crate::nn::{AdjacencyMatrix, Bound, Graph, NnError, ParamSet, Tensor, Var};
use crate::nn::graph::SparseAdjacency;
use crate::nn::loss::{elbo_loss, kl_gaussian, reparameterize};
use crate::skeleton::{Joint3D, RawFrame, SubjectId, COORDS, NUM_CLASSES, RAW_JOINTS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::sync::Arc;

/// Central-difference step for gradient checks.
pub const FD_STEP: f64 = 1e-5;

/// Minimum distance of ReLU inputs from zero in model gradient checks.
pub const RELU_MARGIN: f64 = 1e-3;

/// `max |a - n| / max(max |n|, 1e-8)` between analytic and numeric gradients.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = numeric.iter().map(|n| n.abs()).fold(0.0, f64::max).max(1e-8);
    diff / scale
}

/// Checks the gradient of a scalar function of several tensors. Returns one
/// relative error per input.
pub fn check_gradients<F>(inputs: &[Tensor], f: F) -> Result<Vec<f64>, NnError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NnError>,
{
    let eval = |vals: &[Tensor]| -> Result<f64, NnError> {
        let mut g = Graph::new();
        let vars = vals.iter().map(|t| g.constant(t.clone())).collect::<Result<Vec<_>, _>>()?;
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new();
    let vars = inputs.iter().map(|t| g.param(t.clone())).collect::<Result<Vec<_>, _>>()?;
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut errors = Vec::with_capacity(inputs.len());
    let mut vals = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads.get(v).map_or_else(|| vec![0.0; inputs[i].len()], |t| t.data().to_vec());
        let mut numeric = Vec::with_capacity(inputs[i].len());
        for k in 0..inputs[i].len() {
            let x0 = vals[i].data()[k];
            vals[i].data_mut()[k] = x0 + FD_STEP;
            let plus = eval(&vals)?;
            vals[i].data_mut()[k] = x0 - FD_STEP;
            let minus = eval(&vals)?;
            vals[i].data_mut()[k] = x0;
            numeric.push((plus - minus) / (2.0 * FD_STEP));
        }
        errors.push(relative_error(&analytic, &numeric));
    }
    Ok(errors)
}

/// Checks the gradient of a model loss against every trainable parameter.
/// Returns `(parameter name, relative error)` pairs.
pub fn check_param_gradients<F, E>(params: &mut ParamSet, loss: F) -> Result<Vec<(String, f64)>, E>
where
    F: Fn(&mut Graph, &Bound) -> Result<Var, E>,
    E: From<NnError>,
{
    let eval = |ps: &ParamSet| -> Result<f64, E> {
        let mut g = Graph::new();
        let b = ps.bind(&mut g)?;
        let l = loss(&mut g, &b)?;
        Ok(g.value(l).item())
    };
    let mut g = Graph::new();
    let bound = params.bind(&mut g)?;
    let l = loss(&mut g, &bound)?;
    let grads = g.backward(l)?;
    params.zero_grad();
    params.accumulate(&bound, &grads);

    let ids: Vec<_> = params.ids().collect();
    let mut out = Vec::new();
    for id in ids {
        if !params.get(id).trainable {
            continue;
        }
        let analytic = params.get(id).grad.data().to_vec();
        let mut numeric = Vec::with_capacity(analytic.len());
        for k in 0..analytic.len() {
            let x0 = params.get(id).value.data()[k];
            params.get_mut(id).value.data_mut()[k] = x0 + FD_STEP;
            let plus = eval(params)?;
            params.get_mut(id).value.data_mut()[k] = x0 - FD_STEP;
            let minus = eval(params)?;
            params.get_mut(id).value.data_mut()[k] = x0;
            numeric.push((plus - minus) / (2.0 * FD_STEP));
        }
        out.push((params.get(id).name.clone(), relative_error(&analytic, &numeric)));
    }
    Ok(out)
}

/// Tensor of standard-normal values.
pub fn randn<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape, data).expect("nonempty shape")
}

/// Like [`randn`] but bounded away from zero, so kinks such as ReLU's are
/// not straddled by a finite-difference step.
pub fn randn_off_zero<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    randn(rng, shape).map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 })
}

fn weighted_sum(g: &mut Graph, y: Var, w: Tensor) -> Result<Var, NnError> {
    let w = g.constant(w)?;
    let p = g.mul(y, w)?;
    g.sum_all(p)
}

/// Relative gradient errors of every differentiable graph operation and of
/// the variational loss helpers, on random inputs drawn from `rng`. Each
/// output is reduced to a scalar through random weights.
pub fn check_all_ops<R: Rng>(rng: &mut R) -> Result<Vec<(&'static str, f64)>, NnError> {
    type Case = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var, NnError>>);
    let w23 = randn(rng, &[2, 3]);
    let w24 = randn(rng, &[2, 4]);
    let w2x5 = randn(rng, &[2, 5]);
    let w_conv = randn(rng, &[2, 5, 3, 2]);
    let w_mix = randn(rng, &[2, 4, 3, 2]);
    let w_t = randn(rng, &[2, 3, 2]);
    let w_mean = randn(rng, &[2, 2]);
    let w_rs = randn(rng, &[3, 2]);
    let targets = {
        let mut t = vec![0.0; 2 * NUM_CLASSES];
        t[3] = 1.0;
        t[NUM_CLASSES + 7] = 1.0;
        Tensor::new(&[2, NUM_CLASSES], t).expect("shape")
    };
    let noise = randn(rng, &[2, 3]);
    let adj = Arc::new(SparseAdjacency::from_dense(
        AdjacencyMatrix::from_edges(3, &[(0, 1), (1, 2)])?.dense(),
    )?);

    let cases: Vec<Case> = vec![
        ("matmul", vec![randn(rng, &[2, 3]), randn(rng, &[3, 4])], {
            let w = w24.clone();
            Box::new(move |g, v| {
                let y = g.matmul(v[0], v[1])?;
                weighted_sum(g, y, w.clone())
            })
        }),
        ("add", vec![randn(rng, &[2, 3]), randn(rng, &[2, 3])], {
            let w = w23.clone();
            Box::new(move |g, v| {
                let y = g.add(v[0], v[1])?;
                weighted_sum(g, y, w.clone())
            })
        }),
        ("sub", vec![randn(rng, &[2, 3]), randn(rng, &[2, 3])], {
            let w = w23.clone();
            Box::new(move |g, v| {
                let y = g.sub(v[0], v[1])?;
                weighted_sum(g, y, w.clone())
            })
        }),
        ("mul", vec![randn(rng, &[2, 3]), randn(rng, &[2, 3])], {
            let w = w23.clone();
            Box::new(move |g, v| {
                let y = g.mul(v[0], v[1])?;
                weighted_sum(g, y, w.clone())
            })
        }),
        ("add_bias", vec![randn(rng, &[2, 3]), randn(rng, &[3])], {
            let w = w23.clone();
            Box::new(move |g, v| {
                let y = g.add_bias(v[0], v[1])?;
                weighted_sum(g, y, w.clone())
            })
        }),
        ("scale", vec![randn(rng, &[2, 3])], {
            let w = w23.clone();
            Box::new(move |g, v| {
                let y = g.scale(v[0], -1.7)?;
                weighted_sum(g, y, w.clone())
            })
        }),
        ("add_scalar", vec![randn(rng, &[2, 3])], {
            let w = w23.clone();
            Box::new(move |g, v| {
                let y = g.add_scalar(v[0], 0.3)?;
                let y = g.mul(y, y)?;
                weighted_sum(g, y, w.clone())
            })
        }),
        ("sigmoid", vec![randn(rng, &[2, 3])], {
            let w = w23.clone();
            Box::new(move |g, v| {
                let y = g.sigmoid(v[0])?;
                weighted_sum(g, y, w.clone())
            })
        }),
        ("tanh", vec![randn(rng, &[2, 3])], {
            let w = w23.clone();
            Box::new(move |g, v| {
                let y = g.tanh(v[0])?;
                weighted_sum(g, y, w.clone())
            })
        }),
        ("relu", vec![randn_off_zero(rng, &[2, 3])], {
            let w = w23.clone();
            Box::new(move |g, v| {
                let y = g.relu(v[0])?;
                weighted_sum(g, y, w.clone())
            })
        }),
        ("exp", vec![randn(rng, &[2, 3])], {
            let w = w23.clone();
            Box::new(move |g, v| {
                let y = g.exp(v[0])?;
                weighted_sum(g, y, w.clone())
            })
        }),
        ("concat", vec![randn(rng, &[2, 2]), randn(rng, &[2, 3])], {
            let w = w2x5.clone();
            Box::new(move |g, v| {
                let y = g.concat(&[v[0], v[1]])?;
                weighted_sum(g, y, w.clone())
            })
        }),
        ("slice_last", vec![randn(rng, &[2, 5])], {
            let w = w23.clone();
            Box::new(move |g, v| {
                let y = g.slice_last(v[0], 1, 3)?;
                weighted_sum(g, y, w.clone())
            })
        }),
        ("reshape", vec![randn(rng, &[2, 3])], {
            let w = w_rs.clone();
            Box::new(move |g, v| {
                let y = g.reshape(v[0], &[3, 2])?;
                weighted_sum(g, y, w.clone())
            })
        }),
        ("select_time", vec![randn(rng, &[2, 4, 3, 2])], {
            let w = w_t.clone();
            Box::new(move |g, v| {
                let y = g.select_time(v[0], 2)?;
                weighted_sum(g, y, w.clone())
            })
        }),
        ("mean_over", vec![randn(rng, &[2, 4, 3, 2])], {
            let w = w_mean.clone();
            Box::new(move |g, v| {
                let y = g.mean_over(v[0], &[1, 2])?;
                weighted_sum(g, y, w.clone())
            })
        }),
        ("sum_all", vec![randn(rng, &[2, 3])], {
            Box::new(move |g, v| {
                let y = g.mul(v[0], v[0])?;
                g.sum_all(y)
            })
        }),
        ("graph_mix", vec![randn(rng, &[2, 4, 3, 2])], {
            let w = w_mix.clone();
            let adj = Arc::clone(&adj);
            Box::new(move |g, v| {
                let y = g.graph_mix(v[0], &adj)?;
                weighted_sum(g, y, w.clone())
            })
        }),
        ("temporal_conv", vec![randn(rng, &[2, 5, 3, 4]), randn(rng, &[3, 4, 2])], {
            let w = w_conv.clone();
            Box::new(move |g, v| {
                let y = g.temporal_conv(v[0], v[1])?;
                weighted_sum(g, y, w.clone())
            })
        }),
        ("softmax_cross_entropy", vec![randn(rng, &[2, NUM_CLASSES])], {
            let t = targets.clone();
            Box::new(move |g, v| g.softmax_cross_entropy(v[0], t.clone()))
        }),
        ("kl_gaussian", vec![randn(rng, &[2, 3]), randn(rng, &[2, 3])], {
            Box::new(move |g, v| kl_gaussian(g, v[0], v[1]))
        }),
        ("reparameterize", vec![randn(rng, &[2, 3]), randn(rng, &[2, 3])], {
            let (w, noise) = (w23.clone(), noise.clone());
            Box::new(move |g, v| {
                let z = reparameterize(g, v[0], v[1], noise.clone())?;
                weighted_sum(g, z.z, w.clone())
            })
        }),
        (
            "elbo_loss",
            vec![randn(rng, &[2, 4]), randn(rng, &[2, 4]), randn(rng, &[2, 3]), randn(rng, &[2, 3])],
            Box::new(move |g, v| Ok(elbo_loss(g, v[0], v[1], v[2], v[3])?.loss)),
        ),
    ];

    let mut out = Vec::with_capacity(cases.len());
    for (name, inputs, f) in cases {
        let errs = check_gradients(&inputs, |g, v| f(g, v))?;
        out.push((name, errs.into_iter().fold(0.0, f64::max)));
    }
    Ok(out)
}

/// A raw 32-joint frame with coordinates uniform in ±`extent` meters.
pub fn random_raw_frame<R: Rng>(rng: &mut R, extent: f64) -> RawFrame {
    RawFrame {
        joints: (0..RAW_JOINTS)
            .map(|_| {
                Joint3D::new(
                    rng.random_range(-extent..extent),
                    rng.random_range(-extent..extent),
                    rng.random_range(-extent..extent),
                )
            })
            .collect(),
        timestamp_ns: 0,
        subject: SubjectId::new("S"),
    }
}

/// Window start frames found by testing every offset.
pub fn brute_window_starts(total: usize, length: usize, stride: usize) -> Vec<usize> {
    (0..total)
        .filter(|&s| s % stride == 0 && s + length <= total)
        .collect()
}

/// Cross-subject ordered pairs, counted by visiting every pair of windows.
/// `subject_of[i]` names the subject of window `i`.
pub fn brute_pair_count(subject_of: &[usize]) -> usize {
    let mut n = 0;
    for a in subject_of {
        for b in subject_of {
            if a != b {
                n += 1;
            }
        }
    }
    n
}

/// Whether a window ending at `end` survives: no change frame `k` with
/// `end` in `[k - margin, k + margin]`.
pub fn brute_keep(end: usize, changes: &[usize], margin: usize) -> bool {
    let end = end as i64;
    let margin = margin as i64;
    changes.iter().all(|&k| {
        let k = k as i64;
        !(k - margin..=k + margin).contains(&end)
    })
}

/// Confusion counts, accuracy and macro F1 over present classes, computed
/// from per-class true positive, false positive and false negative counts.
pub fn brute_metrics(preds: &[usize], truths: &[usize]) -> ([[usize; NUM_CLASSES]; NUM_CLASSES], f64, f64) {
    let mut counts = [[0usize; NUM_CLASSES]; NUM_CLASSES];
    for (&p, &t) in preds.iter().zip(truths) {
        counts[t][p] += 1;
    }
    let correct = preds.iter().zip(truths).filter(|(p, t)| p == t).count();
    let accuracy = correct as f64 / truths.len() as f64;
    let mut f_sum = 0.0;
    let mut present = 0;
    for c in 0..NUM_CLASSES {
        if !truths.contains(&c) {
            continue;
        }
        present += 1;
        let tp = preds.iter().zip(truths).filter(|&(&p, &t)| p == c && t == c).count();
        let fp = preds.iter().zip(truths).filter(|&(&p, &t)| p == c && t != c).count();
        let fneg = preds.iter().zip(truths).filter(|&(&p, &t)| p != c && t == c).count();
        if tp > 0 {
            f_sum += 2.0 * tp as f64 / (2 * tp + fp + fneg) as f64;
        }
    }
    let f = if present == 0 { 0.0 } else { f_sum / present as f64 };
    (counts, accuracy, f)
}

/// Labeled samples with random values and labels.
pub fn random_set<R: Rng>(rng: &mut R, n: usize, frames: usize, nodes: usize, channels: usize) -> SampleSet {
    let mut set = SampleSet::new(frames, nodes, channels);
    for _ in 0..n {
        let x = randn(rng, &[frames * nodes * channels]).into_data();
        set.push(x, rng.random_range(0..NUM_CLASSES)).expect("shape matches");
    }
    set
}

/// Two-person samples whose class can be read from any single frame. Each
/// single-user state has a fixed ten-joint prototype pose with values in
/// `[0.2, 0.8]`; a sample of class `(a, b)` shows prototype `a` on the left
/// and `b` on the right, plus Gaussian noise of scale `noise`.
pub fn separable_set<R: Rng>(rng: &mut R, frames: usize, per_class: usize, noise: f64) -> SampleSet {
    let half = PAIR_JOINTS / 2 * COORDS;
    let mut proto_rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let protos: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..half).map(|_| proto_rng.random_range(0.2..0.8)).collect())
        .collect();
    let mut set = SampleSet::new(frames, PAIR_JOINTS, COORDS);
    for _ in 0..per_class {
        for class in 0..NUM_CLASSES {
            let frame: Vec<f64> = protos[class / 3].iter().chain(&protos[class % 3]).copied().collect();
            let x = (0..frames)
                .flat_map(|_| frame.iter())
                .map(|&v| v + noise * Distribution::<f64>::sample(&StandardNormal, rng))
                .collect::<Vec<f64>>();
            set.push(x, class).expect("shape matches");
        }
    }
    set
}

/// Gradient errors of every parameter of a two-layer LSTM classifier with
/// hidden size 4 on random 3-step sequences.
pub fn check_lstm_model(seed: u64) -> Result<Vec<(String, f64)>, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = LstmConfig {
        layers: 2,
        hidden: 4,
        input: 4,
        ..LstmConfig::default()
    };
    let mut model = LstmClassifier::new(config, 3, &mut rng)?;
    let set = random_set(&mut rng, 3, 3, 2, 2);
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut params = std::mem::take(&mut model.params);
    check_param_gradients(&mut params, |g, p| model.loss(g, p, &set, &idx))
}

/// Gradient errors of the negative ELBO with respect to every encoder and
/// decoder parameter of a VAE over 5 frames of a 4-node graph with 2
/// channels and a 3-dimensional latent space.
pub fn check_vae_model(seed: u64) -> Result<Vec<(String, f64)>, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = VaeConfig {
        channels: vec![3, 2],
        latent: 3,
        kernel: 3,
        ..VaeConfig::default()
    };
    let adjacency = AdjacencyMatrix::from_edges(4, &[(0, 1), (1, 2), (1, 3)])?;
    let mut vae = Vae::new(config, 5, adjacency, 2, &mut rng)?;
    // redraw inputs until no ReLU sits within reach of a perturbation
    let (x, noise) = loop {
        let x = randn(&mut rng, &[2, 5, 4, 2]);
        let noise = [randn(&mut rng, &[2, 3])];
        let mut g = Graph::new();
        let p = vae.params.bind(&mut g)?;
        vae.loss_with_noise(&mut g, &p, x.clone(), &noise)?;
        if g.relu_margin() > RELU_MARGIN {
            break (x, noise);
        }
    };
    let mut params = std::mem::take(&mut vae.params);
    check_param_gradients(&mut params, |g, p| Ok(vae.loss_with_noise(g, p, x.clone(), &noise)?.0))
}

/// Monte-Carlo estimate of `KL(N(mu, exp(logvar)) || N(0, I))` as the mean
/// of `log q(z) - log p(z)` over `samples` posterior draws.
pub fn kl_monte_carlo<R: Rng>(rng: &mut R, mu: &[f64], logvar: &[f64], samples: usize) -> f64 {
    let mut total = 0.0;
    for _ in 0..samples {
        for (&m, &lv) in mu.iter().zip(logvar) {
            let eps: f64 = StandardNormal.sample(rng);
            let z = m + (0.5 * lv).exp() * eps;
            // the normalizing constants cancel
            total += -0.5 * lv - 0.5 * eps * eps + 0.5 * z * z;
        }
    }
    total / samples as f64
}
