//! Residual CNN front end, bidirectional GRU stack and softmax classifier.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::features::{Mfcc, MfccConfig};
use crate::nn::{self, GruVars, ParamStore, Tape, Tensor, Var};
use crate::rng::Rng;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub in_coeffs: usize,
    pub in_frames: usize,
    pub cnn_channels: usize,
    pub kernel: usize,
    pub first_stride: usize,
    pub n_res_blocks: usize,
    pub bridge_out: usize,
    pub rnn_hidden: usize,
    pub n_rnn_blocks: usize,
    pub classifier_hidden: usize,
    pub n_classes: usize,
    pub dropout_p: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_coeffs: 40,
            in_frames: 80,
            cnn_channels: 32,
            kernel: 3,
            first_stride: 2,
            n_res_blocks: 3,
            bridge_out: 512,
            rnn_hidden: 512,
            n_rnn_blocks: 5,
            classifier_hidden: 512,
            n_classes: 10,
            dropout_p: 0.2,
        }
    }
}

impl ModelConfig {
    /// Same topology with narrow layers, small enough to train on one core.
    pub fn compact() -> Self {
        Self {
            cnn_channels: 8,
            n_res_blocks: 1,
            bridge_out: 48,
            rnn_hidden: 48,
            n_rnn_blocks: 1,
            classifier_hidden: 48,
            ..Self::default()
        }
    }

    fn padding(&self) -> usize {
        self.kernel / 2
    }

    /// Rows and columns after the first convolution.
    pub fn conv_out(&self) -> (usize, usize) {
        let f = |n: usize| (n + 2 * self.padding() - self.kernel) / self.first_stride + 1;
        (f(self.in_coeffs), f(self.in_frames))
    }

    /// Features per time step entering the bridge.
    pub fn seq_features(&self) -> usize {
        self.cnn_channels * self.conv_out().0
    }

    pub fn seq_len(&self) -> usize {
        self.conv_out().1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let dims = [
            self.in_coeffs,
            self.in_frames,
            self.cnn_channels,
            self.kernel,
            self.first_stride,
            self.bridge_out,
            self.rnn_hidden,
            self.n_rnn_blocks,
            self.classifier_hidden,
            self.n_classes,
        ];
        if dims.contains(&0) {
            return bad(format!("model dimensions must be positive: {self:?}"));
        }
        if self.kernel.is_multiple_of(2) {
            return bad(format!("kernel {} must be odd", self.kernel));
        }
        if self.kernel > self.in_coeffs + 2 * self.padding() || self.kernel > self.in_frames + 2 * self.padding() {
            return bad(format!("kernel {} larger than padded input", self.kernel));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        Ok(())
    }

    fn rnn_input(&self, block: usize) -> usize {
        if block == 0 {
            self.bridge_out
        } else {
            2 * self.rnn_hidden
        }
    }

    /// Names and shapes of every parameter, in registry order.
    pub fn parameter_layout(&self) -> Vec<(String, Vec<usize>)> {
        let (c, k) = (self.cnn_channels, self.kernel);
        let (rows, _) = self.conv_out();
        let h = self.rnn_hidden;
        let mut v: Vec<(String, Vec<usize>)> = vec![
            ("conv_in.weight".into(), vec![c, 1, k, k]),
            ("conv_in.bias".into(), vec![c]),
        ];
        for i in 0..self.n_res_blocks {
            for j in 0..2 {
                v.push((format!("res{i}.ln{j}.gamma"), vec![rows]));
                v.push((format!("res{i}.ln{j}.beta"), vec![rows]));
                v.push((format!("res{i}.conv{j}.weight"), vec![c, c, k, k]));
                v.push((format!("res{i}.conv{j}.bias"), vec![c]));
            }
        }
        v.push(("bridge.weight".into(), vec![self.bridge_out, self.seq_features()]));
        v.push(("bridge.bias".into(), vec![self.bridge_out]));
        for i in 0..self.n_rnn_blocks {
            let n_in = self.rnn_input(i);
            v.push((format!("rnn{i}.ln.gamma"), vec![n_in]));
            v.push((format!("rnn{i}.ln.beta"), vec![n_in]));
            for dir in ["fwd", "bwd"] {
                v.push((format!("rnn{i}.{dir}.w_ih"), vec![3 * h, n_in]));
                v.push((format!("rnn{i}.{dir}.w_hh"), vec![3 * h, h]));
                v.push((format!("rnn{i}.{dir}.b_ih"), vec![3 * h]));
                v.push((format!("rnn{i}.{dir}.b_hh"), vec![3 * h]));
            }
        }
        v.push(("fc1.weight".into(), vec![self.classifier_hidden, 2 * h]));
        v.push(("fc1.bias".into(), vec![self.classifier_hidden]));
        v.push(("fc2.weight".into(), vec![self.n_classes, self.classifier_hidden]));
        v.push(("fc2.bias".into(), vec![self.n_classes]));
        v
    }
}

/// Conv/linear weights: Kaiming-uniform on fan-in. GRU weights: U(±1/√H).
/// Biases 0, layer-norm gamma 1 and beta 0.
pub fn init_model(cfg: &ModelConfig, rng: &mut Rng) -> Result<ParamStore> {
    cfg.validate()?;
    let gru_bound = 1.0 / (cfg.rnn_hidden as f64).sqrt();
    let mut store = ParamStore::new();
    for (name, shape) in cfg.parameter_layout() {
        let n: usize = shape.iter().product();
        let data = if name.ends_with(".gamma") {
            vec![1.0; n]
        } else if name.ends_with(".beta") || name.ends_with("bias") || name.ends_with(".b_ih") || name.ends_with(".b_hh") {
            vec![0.0; n]
        } else {
            let bound = if name.contains(".w_") {
                gru_bound
            } else {
                let fan_in: usize = shape[1..].iter().product();
                (6.0 / fan_in as f64).sqrt()
            };
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        };
        store.add(name, Tensor::new(shape, data)?)?;
    }
    Ok(store)
}

pub struct Forward<'t> {
    pub logits: Var<'t>,
    /// Activation after the first convolution, `B×C×H'×W'`.
    pub post_conv: Var<'t>,
}

fn param<'t>(tape: &'t Tape, store: &ParamStore, name: &str) -> Result<Var<'t>> {
    let id = store
        .id(name)
        .ok_or_else(|| Error::InvalidConfig(format!("missing parameter {name}")))?;
    Ok(tape.param(store, id))
}

/// Runs the network on `x: B×1×in_coeffs×in_frames` and returns logits `B×n_classes`.
/// `training` only switches dropout on.
pub fn forward<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    x: Var<'t>,
    training: bool,
    rng: &mut Rng,
) -> Result<Forward<'t>> {
    let xs = x.shape();
    if xs.len() != 4 || xs[1] != 1 || xs[2] != cfg.in_coeffs || xs[3] != cfg.in_frames {
        return Err(Error::shape(
            "forward",
            format!("input {xs:?}, expected [B, 1, {}, {}]", cfg.in_coeffs, cfg.in_frames),
        ));
    }
    forward_from(cfg, x, |name| param(tape, store, name), training, rng)
}

/// [`forward`] with parameters supplied by `p`, so any tape variable can stand in.
pub fn forward_from<'t>(
    cfg: &ModelConfig,
    x: Var<'t>,
    p: impl Fn(&str) -> Result<Var<'t>>,
    training: bool,
    rng: &mut Rng,
) -> Result<Forward<'t>> {
    let batch = x.shape()[0];
    let pad = cfg.padding();

    let post_conv = nn::conv2d(x, p("conv_in.weight")?, p("conv_in.bias")?, cfg.first_stride, pad)?;
    let mut h = post_conv;
    for i in 0..cfg.n_res_blocks {
        let input = h;
        for j in 0..2 {
            // Normalize over the coefficient axis, which must be trailing.
            let t = nn::permute(h, &[0, 1, 3, 2])?;
            let t = nn::layer_norm(t, p(&format!("res{i}.ln{j}.gamma"))?, p(&format!("res{i}.ln{j}.beta"))?, 1e-5)?;
            let t = nn::gelu(nn::permute(t, &[0, 1, 3, 2])?);
            h = nn::conv2d(
                t,
                p(&format!("res{i}.conv{j}.weight"))?,
                p(&format!("res{i}.conv{j}.bias"))?,
                1,
                pad,
            )?;
        }
        h = nn::add(h, input)?;
    }

    // (B, C, H, W) -> (W, B, C·H): one step per frame column.
    let seq = nn::permute(h, &[3, 0, 1, 2])?;
    let seq = nn::reshape(seq, &[cfg.seq_len(), batch, cfg.seq_features()])?;
    let mut s = nn::linear(seq, p("bridge.weight")?, p("bridge.bias")?)?;
    for i in 0..cfg.n_rnn_blocks {
        let t = nn::layer_norm(s, p(&format!("rnn{i}.ln.gamma"))?, p(&format!("rnn{i}.ln.beta"))?, 1e-5)?;
        let t = nn::gelu(t);
        let dir = |d: &str| -> Result<GruVars<'t>> {
            Ok(GruVars {
                w_ih: p(&format!("rnn{i}.{d}.w_ih"))?,
                w_hh: p(&format!("rnn{i}.{d}.w_hh"))?,
                b_ih: p(&format!("rnn{i}.{d}.b_ih"))?,
                b_hh: p(&format!("rnn{i}.{d}.b_hh"))?,
            })
        };
        s = nn::bigru(t, dir("fwd")?, dir("bwd")?)?;
    }
    let pooled = nn::mean_axis0(s)?;
    let z = nn::gelu(nn::linear(pooled, p("fc1.weight")?, p("fc1.bias")?)?);
    let z = nn::dropout(z, cfg.dropout_p, training, rng)?;
    let logits = nn::linear(z, p("fc2.weight")?, p("fc2.bias")?)?;
    Ok(Forward { logits, post_conv })
}

/// Evaluation-mode class probabilities for a batch `B×1×H×W`.
pub fn predict_batch(store: &ParamStore, cfg: &ModelConfig, x: Tensor) -> Result<Tensor> {
    let tape = Tape::inference();
    // Dropout is off, so this generator is never drawn from.
    let mut rng = crate::rng::rng_from_seed(0);
    let out = forward(&tape, store, cfg, tape.constant(x), false, &mut rng)?;
    let logits = out.logits.value();
    Ok(nn::softmax_rows(&logits))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub digit: usize,
    pub probs: Vec<f64>,
}

/// Resample, featurize and classify one clip.
pub fn predict(store: &ParamStore, cfg: &ModelConfig, mfcc: &Mfcc, clip: &AudioClip) -> Result<Prediction> {
    let x = mfcc.model_input(clip)?;
    let x = x.reshaped([1, 1, cfg.in_coeffs, cfg.in_frames])?;
    let probs = predict_batch(store, cfg, x)?;
    Ok(Prediction {
        digit: probs.argmax_rows()[0],
        probs: probs.into_data(),
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub seed: u64,
    pub split_ratios: [f64; 3],
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamIndexEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: usize,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    version: u32,
    config: ModelConfig,
    mfcc: MfccConfig,
    meta: CheckpointMeta,
    params: Vec<ParamIndexEntry>,
}

pub struct Checkpoint {
    pub params: ParamStore,
    pub config: ModelConfig,
    pub mfcc: MfccConfig,
    pub meta: CheckpointMeta,
}

/// Writes `model.json` and `params.bin` (little-endian f64) into `dir`.
pub fn save_checkpoint(
    dir: impl AsRef<Path>,
    store: &ParamStore,
    config: &ModelConfig,
    mfcc: &MfccConfig,
    meta: &CheckpointMeta,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut bytes = Vec::with_capacity(8 * store.num_values());
    let mut index = Vec::with_capacity(store.len());
    for p in store.iter() {
        let offset = bytes.len();
        for v in p.value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        index.push(ParamIndexEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            dtype: "f64".into(),
            offset,
            length: bytes.len() - offset,
        });
    }
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        config: config.clone(),
        mfcc: mfcc.clone(),
        meta: meta.clone(),
        params: index,
    };
    let json_path = dir.join("model.json");
    let mut json = serde_json::to_string_pretty(&header)?;
    json.push('\n');
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    let bin_path = dir.join("params.bin");
    fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let json_path = dir.join("model.json");
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    let version = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnknownVersion(version));
    }
    let header: CheckpointHeader = serde_json::from_value(raw)?;
    header.config.validate()?;
    let bin_path = dir.join("params.bin");
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let corrupt = |m: String| Error::CorruptCheckpoint(m);

    let expected = header.config.parameter_layout();
    if expected.len() != header.params.len() {
        return Err(corrupt(format!(
            "index lists {} parameters, config needs {}",
            header.params.len(),
            expected.len()
        )));
    }
    let mut store = ParamStore::new();
    let mut cursor = 0;
    for (entry, (name, shape)) in header.params.iter().zip(&expected) {
        if &entry.name != name || &entry.shape != shape {
            return Err(corrupt(format!(
                "index entry {} {:?} does not match expected {name} {shape:?}",
                entry.name, entry.shape
            )));
        }
        let n: usize = shape.iter().product();
        if entry.dtype != "f64" || entry.length != 8 * n || entry.offset != cursor {
            return Err(corrupt(format!(
                "{}: dtype {} offset {} length {} (expected f64 at {cursor}, {} bytes)",
                entry.name,
                entry.dtype,
                entry.offset,
                entry.length,
                8 * n
            )));
        }
        let end = cursor + entry.length;
        if end > bytes.len() {
            return Err(corrupt(format!(
                "params.bin holds {} bytes, {} needs {end}",
                bytes.len(),
                entry.name
            )));
        }
        let data = bytes[cursor..end]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        store.add(name.clone(), Tensor::new(shape.clone(), data)?)?;
        cursor = end;
    }
    if cursor != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes in params.bin", bytes.len() - cursor)));
    }
    Ok(Checkpoint {
        params: store,
        config: header.config,
        mfcc: header.mfcc,
        meta: header.meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, softmax_cross_entropy};
    use crate::rng::rng_from_seed;

    fn tiny() -> ModelConfig {
        ModelConfig {
            in_coeffs: 4,
            in_frames: 6,
            cnn_channels: 2,
            n_res_blocks: 1,
            bridge_out: 5,
            rnn_hidden: 3,
            n_rnn_blocks: 2,
            classifier_hidden: 4,
            n_classes: 3,
            ..ModelConfig::default()
        }
    }

    fn random_input(cfg: &ModelConfig, batch: usize, seed: u64) -> Tensor {
        let mut rng = rng_from_seed(seed);
        Tensor::from_fn([batch, 1, cfg.in_coeffs, cfg.in_frames], |_| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn default_shape_chain_and_counts() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.conv_out(), (20, 40));
        assert_eq!(cfg.seq_features(), 640);
        assert_eq!(cfg.seq_features() * cfg.seq_len(), 25_600);
        let layout = cfg.parameter_layout();
        let shape = |n: &str| layout.iter().find(|(name, _)| name == n).unwrap().1.clone();
        assert_eq!(shape("conv_in.weight"), vec![32, 1, 3, 3]);
        assert_eq!(shape("bridge.weight"), vec![512, 640]);
        assert_eq!(shape("rnn0.fwd.w_ih"), vec![1536, 512]);
        assert_eq!(shape("rnn4.bwd.w_ih"), vec![1536, 1024]);
        assert_eq!(shape("fc1.weight"), vec![512, 1024]);
        assert_eq!(shape("fc2.weight"), vec![10, 512]);
        let mut names: Vec<_> = layout.iter().map(|(n, _)| n.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), layout.len());
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = tiny();
        let a = init_model(&cfg, &mut rng_from_seed(5)).unwrap();
        let b = init_model(&cfg, &mut rng_from_seed(5)).unwrap();
        let c = init_model(&cfg, &mut rng_from_seed(6)).unwrap();
        let flat = |s: &ParamStore| s.iter().flat_map(|p| p.value.data().to_vec()).collect::<Vec<_>>();
        assert_eq!(flat(&a), flat(&b));
        assert_ne!(flat(&a), flat(&c));
        for p in a.iter() {
            if p.name.ends_with(".gamma") {
                assert!(p.value.data().iter().all(|&v| v == 1.0));
            }
            if p.name.ends_with(".w_hh") {
                assert!(p.value.data().iter().all(|v| v.abs() <= 1.0 / 3f64.sqrt()));
            }
        }
    }

    #[test]
    fn forward_shapes_and_eval_determinism() {
        let cfg = tiny();
        let store = init_model(&cfg, &mut rng_from_seed(1)).unwrap();
        let x = random_input(&cfg, 3, 2);
        let tape = Tape::inference();
        let out = forward(&tape, &store, &cfg, tape.constant(x.clone()), false, &mut rng_from_seed(0)).unwrap();
        assert_eq!(out.post_conv.shape(), vec![3, 2, 2, 3]);
        assert_eq!(out.logits.shape(), vec![3, 3]);
        let p1 = predict_batch(&store, &cfg, x.clone()).unwrap();
        let p2 = predict_batch(&store, &cfg, x).unwrap();
        assert_eq!(p1, p2);
        for row in p1.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let wrong = tape.constant(Tensor::zeros([1, 1, 5, 6]));
        assert!(forward(&tape, &store, &cfg, wrong, false, &mut rng_from_seed(0)).is_err());
    }

    #[test]
    fn zeroed_residual_branch_is_identity() {
        let cfg = ModelConfig {
            n_rnn_blocks: 1,
            ..tiny()
        };
        let mut store = init_model(&cfg, &mut rng_from_seed(3)).unwrap();
        for j in 0..2 {
            for part in ["weight", "bias"] {
                let id = store.id(&format!("res0.conv{j}.{part}")).unwrap();
                store.value_mut(id).fill(0.0);
            }
        }
        let x = random_input(&cfg, 2, 4);
        let tape = Tape::inference();
        let xv = tape.constant(x);
        let conv = nn::conv2d(
            xv,
            tape.param(&store, store.id("conv_in.weight").unwrap()),
            tape.param(&store, store.id("conv_in.bias").unwrap()),
            2,
            1,
        )
        .unwrap();
        // Rebuild the block by hand: with zero convolutions the sum is the input.
        let t = nn::permute(conv, &[0, 1, 3, 2]).unwrap();
        let g = tape.param(&store, store.id("res0.ln0.gamma").unwrap());
        let b = tape.param(&store, store.id("res0.ln0.beta").unwrap());
        let t = nn::gelu(nn::permute(nn::layer_norm(t, g, b, 1e-5).unwrap(), &[0, 1, 3, 2]).unwrap());
        let w = tape.param(&store, store.id("res0.conv0.weight").unwrap());
        let bias = tape.param(&store, store.id("res0.conv0.bias").unwrap());
        let branch = nn::conv2d(t, w, bias, 1, 1).unwrap();
        let out = nn::add(branch, conv).unwrap();
        assert_eq!(*out.value(), *conv.value());
    }

    #[test]
    fn tiny_model_end_to_end_gradients() {
        let cfg = ModelConfig {
            in_coeffs: 4,
            in_frames: 8,
            n_rnn_blocks: 1,
            rnn_hidden: 8,
            ..tiny()
        };
        let mut store = init_model(&cfg, &mut rng_from_seed(11)).unwrap();
        // Move norms and biases off their neutral init so every path carries gradient.
        let mut rng = rng_from_seed(12);
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.2..0.2));
        }
        let x = random_input(&cfg, 2, 13);
        let labels = [1, 2];

        // The bias of the first convolution in a residual block feeds a layer norm
        // over the axis it is constant along, so its gradient is exactly zero and
        // central differences only see rounding noise. Check it directly.
        let structural_zero = |name: &str| name.starts_with("res") && name.ends_with("conv0.bias");
        let tape = Tape::new();
        let out = forward(&tape, &store, &cfg, tape.constant(x.clone()), false, &mut rng_from_seed(0)).unwrap();
        let (loss, _) = softmax_cross_entropy(out.logits, &labels).unwrap();
        store.accumulate(&tape.backward(loss).unwrap());
        for p in store.iter().filter(|p| structural_zero(&p.name)) {
            assert!(p.grad.data().iter().all(|g| g.abs() < 1e-12), "{}: {:?}", p.name, p.grad);
        }

        let names: Vec<String> = store.iter().map(|p| p.name.clone()).filter(|n| !structural_zero(n)).collect();
        let mut inputs: Vec<Tensor> = names.iter().map(|n| (*store.by_name(n).unwrap().value).clone()).collect();
        inputs.push(x);
        let report = grad_check("model", &inputs, 1e-5, 14, |tape, vars| {
            let n = vars.len() - 1;
            let lookup = |name: &str| match names.iter().position(|m| m == name) {
                Some(i) => Ok(vars[i]),
                None => Ok(tape.constant((*store.by_name(name).unwrap().value).clone())),
            };
            let out = forward_from(&cfg, vars[n], lookup, false, &mut rng_from_seed(0))?;
            Ok(softmax_cross_entropy(out.logits, &labels)?.0)
        })
        .unwrap();
        assert!(report.passes(1e-4), "{report:?}");
        assert_eq!(report.coordinates, store.num_values() - 2 + 64);
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let cfg = tiny();
        let store = init_model(&cfg, &mut rng_from_seed(21)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run");
        let meta = CheckpointMeta {
            epoch: 7,
            seed: 21,
            split_ratios: [0.8, 0.1, 0.1],
            metrics: BTreeMap::from([("val_acc".to_string(), 0.5)]),
        };
        save_checkpoint(&path, &store, &cfg, &MfccConfig::default(), &meta).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.config, cfg);
        assert_eq!(ck.meta, meta);
        let x = random_input(&cfg, 4, 22);
        assert_eq!(
            predict_batch(&store, &cfg, x.clone()).unwrap(),
            predict_batch(&ck.params, &cfg, x).unwrap()
        );
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(path.join("model.json")).unwrap()).unwrap();
        assert_eq!(json["params"].as_array().unwrap().len(), store.len());

        let bin = fs::read(path.join("params.bin")).unwrap();
        fs::write(path.join("params.bin"), &bin[..bin.len() - 8]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::CorruptCheckpoint(_))));
        fs::write(path.join("params.bin"), &bin).unwrap();

        let text = fs::read_to_string(path.join("model.json")).unwrap();
        fs::write(path.join("model.json"), text.replacen("\"version\": 1", "\"version\": 9", 1)).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::UnknownVersion(9))));
    }
}
