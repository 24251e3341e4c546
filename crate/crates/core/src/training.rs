//! Splitting, optimization, the training loop, evaluation and noise sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::ops::ControlFlow;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, AudioClip};
use crate::augmentation::{mix_noise_at_snr, NoiseBank, NoiseCategory};
use crate::config::RunConfig;
use crate::data::{Manifest, ManifestEntry, Split, N_CLASSES};
use crate::error::{Error, Result};
use crate::features::Mfcc;
use crate::model::{forward, init_model, predict_batch, ModelConfig};
use crate::nn::{softmax_cross_entropy, ParamStore, Tape, Tensor};
use crate::rng::{derive_seed, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub split_ratios: [f64; 3],
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            epochs: 25,
            seed: 0,
            split_ratios: [0.8, 0.1, 0.1],
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.split_ratios.iter().any(|&r| !(r > 0.0)) || (self.split_ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("split ratios {:?} must be positive and sum to 1", self.split_ratios));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1".into());
        }
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad(format!(
                "invalid Adam settings lr {} betas ({}, {}) eps {}",
                self.lr, self.beta1, self.beta2, self.eps
            ));
        }
        Ok(())
    }
}

/// Assigns every entry a split. Entries sharing a `source_id` form one group,
/// and groups are shuffled and cut per class, so augmented copies always land
/// beside their original.
pub fn assign_splits(manifest: &Manifest, ratios: [f64; 3], seed: u64) -> Result<Manifest> {
    let mut groups: [Vec<&str>; N_CLASSES] = Default::default();
    for e in &manifest.entries {
        let g = &mut groups[e.label as usize];
        if !g.contains(&e.source_id.as_str()) {
            g.push(&e.source_id);
        }
    }
    let mut assignment: BTreeMap<(u8, &str), Split> = BTreeMap::new();
    for (class, ids) in groups.iter_mut().enumerate() {
        if ids.is_empty() {
            continue;
        }
        if ids.len() < 3 {
            return Err(Error::TooFewSamples {
                label: class as u8,
                count: ids.len(),
            });
        }
        ids.sort_unstable();
        ids.shuffle(&mut stream(seed, "split", class as u64));
        let n = ids.len() as f64;
        let n_val = ((n * ratios[1]).round() as usize).max(1);
        let n_test = ((n * ratios[2]).round() as usize).max(1);
        let n_train = ids.len().saturating_sub(n_val + n_test).max(1);
        for (i, id) in ids.iter().enumerate() {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            assignment.insert((class as u8, id), split);
        }
    }
    let mut out = manifest.clone();
    for e in out.entries.iter_mut() {
        e.split = Some(assignment[&(e.label, e.source_id.as_str())]);
    }
    Ok(out)
}

/// Train, validation and test manifests.
pub fn stratified_split(manifest: &Manifest, ratios: [f64; 3], seed: u64) -> Result<(Manifest, Manifest, Manifest)> {
    let m = assign_splits(manifest, ratios, seed)?;
    Ok((m.filter_split(Split::Train), m.filter_split(Split::Val), m.filter_split(Split::Test)))
}

/// One Adam update with bias correction; `t` counts steps from 1.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    hyper: &Hyperparams,
    t: u64,
) -> Result<()> {
    if grads.len() != params.len() || m.len() != params.len() || v.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            format!("params {}, grads {}, m {}, v {}", params.len(), grads.len(), m.len(), v.len()),
        ));
    }
    if t == 0 {
        return Err(Error::InvalidConfig("Adam step index starts at 1".into()));
    }
    let (b1, b2) = (hyper.beta1, hyper.beta2);
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
    }
    Ok(())
}

/// Moment buffers for every parameter of a store.
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self { m: zeros(), v: zeros(), t: 0 }
    }

    pub fn step(&mut self, store: &mut ParamStore, hyper: &Hyperparams) -> Result<()> {
        self.t += 1;
        for (((value, grad), m), v) in store.values_and_grads_mut().zip(&mut self.m).zip(&mut self.v) {
            adam_step(value.data_mut(), grad.data(), m, v, hyper, self.t)?;
        }
        Ok(())
    }
}

/// Model inputs (`1×H×W` each) with labels.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, input: Tensor, label: usize) {
        self.inputs.push(input);
        self.labels.push(label);
    }

    pub fn from_clips<'a>(clips: impl IntoIterator<Item = (&'a AudioClip, usize)>, mfcc: &Mfcc) -> Result<Self> {
        let mut d = Self::default();
        for (clip, label) in clips {
            d.push(mfcc.model_input(clip)?, label);
        }
        Ok(d)
    }

    /// Reads and featurizes every entry of `manifest`.
    pub fn from_manifest(manifest: &Manifest, mfcc: &Mfcc) -> Result<Self> {
        let mut d = Self::default();
        for e in &manifest.entries {
            let path = manifest.resolve(e);
            let input = read_wav(&path)
                .and_then(|c| mfcc.model_input(&c))
                .map_err(|err| err.in_entry(path.display().to_string()))?;
            d.push(input, e.label as usize);
        }
        Ok(d)
    }

    /// Stacks the items at `idx` into a `B×1×H×W` batch.
    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let items: Vec<&Tensor> = idx.iter().map(|&i| &self.inputs[i]).collect();
        Ok((Tensor::stack(&items)?, idx.iter().map(|&i| self.labels[i]).collect()))
    }
}

pub struct Datasets<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub test: Option<&'a Dataset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: usize,
    pub test_acc: Option<f64>,
    pub seed: u64,
    pub config: RunConfig,
    /// Kept out of `report.json` so reports stay byte-identical across runs.
    #[serde(skip)]
    pub wall_clock_s: f64,
}

pub struct TrainOutcome {
    pub params: ParamStore,
    pub report: TrainReport,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    /// `counts[true][predicted]`.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; n_classes]; n_classes],
        }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.trace() as f64 / n as f64,
        }
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Header row of class labels, then one row of counts per true class.
    pub fn to_csv(&self) -> String {
        let n = self.counts.len();
        let mut s = (0..n).map(|c| c.to_string()).collect::<Vec<_>>().join(",");
        s.push('\n');
        for row in &self.counts {
            s.push_str(&row.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","));
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

const EVAL_BATCH: usize = 64;

/// Evaluation-mode loss, accuracy and confusion matrix.
pub fn evaluate(store: &ParamStore, cfg: &ModelConfig, data: &Dataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::InvalidConfig("cannot evaluate an empty dataset".into()));
    }
    let mut confusion = ConfusionMatrix::new(cfg.n_classes);
    let mut nll = 0.0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, labels) = data.batch(chunk)?;
        let probs = predict_batch(store, cfg, x)?;
        for ((row, &label), pred) in probs.data().chunks(cfg.n_classes).zip(&labels).zip(probs.argmax_rows()) {
            if label >= cfg.n_classes {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: cfg.n_classes,
                });
            }
            nll -= row[label].max(f64::MIN_POSITIVE).ln();
            confusion.record(label, pred);
        }
    }
    Ok(Evaluation {
        loss: nll / data.len() as f64,
        accuracy: confusion.accuracy(),
        confusion,
    })
}

/// Loss of a fresh model on the first training batch.
pub fn first_batch_loss(cfg: &ModelConfig, hyper: &Hyperparams, train: &Dataset) -> Result<f64> {
    let store = init_model(cfg, &mut stream(hyper.seed, "init", 0))?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut stream(hyper.seed, "shuffle", 0));
    let (x, labels) = train.batch(&order[..hyper.batch_size.min(order.len())])?;
    let tape = Tape::new();
    let out = forward(&tape, &store, cfg, tape.constant(x), true, &mut stream(hyper.seed, "dropout", 0))?;
    let (loss, _) = softmax_cross_entropy(out.logits, &labels)?;
    let v = loss.value().data()[0];
    Ok(v)
}

/// Trains for `config.hyper.epochs` epochs and keeps the best-validation parameters.
pub fn train(config: &RunConfig, data: &Datasets) -> Result<TrainOutcome> {
    train_with(config, data, |_| ControlFlow::Continue(()))
}

/// [`train`] with a per-epoch callback that may stop early.
pub fn train_with(
    config: &RunConfig,
    data: &Datasets,
    mut on_epoch: impl FnMut(&EpochMetrics) -> ControlFlow<()>,
) -> Result<TrainOutcome> {
    let (cfg, hyper) = (&config.model, &config.hyper);
    hyper.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::InvalidConfig("training and validation sets must be non-empty".into()));
    }
    let started = Instant::now();
    let mut store = init_model(cfg, &mut stream(hyper.seed, "init", 0))?;
    let mut adam = Adam::new(&store);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut rows = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut stream(hyper.seed, "shuffle", epoch as u64));
        for (b, idx) in order.chunks(hyper.batch_size).enumerate() {
            let (x, labels) = data.train.batch(idx)?;
            let mut rng = stream(hyper.seed, "dropout", derive_seed(epoch as u64, "batch", b as u64));
            let tape = Tape::new();
            let out = forward(&tape, &store, cfg, tape.constant(x), true, &mut rng)?;
            let (loss, _) = softmax_cross_entropy(out.logits, &labels)?;
            if !loss.value().data()[0].is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            let grads = tape.backward(loss)?;
            drop(tape);
            store.zero_grad();
            store.accumulate(&grads);
            drop(grads);
            adam.step(&mut store, hyper)?;
        }
        let tr = evaluate(&store, cfg, data.train)?;
        let va = evaluate(&store, cfg, data.val)?;
        let row = EpochMetrics {
            epoch: epoch + 1,
            train_loss: tr.loss,
            train_acc: tr.accuracy,
            val_loss: va.loss,
            val_acc: va.accuracy,
        };
        if best.as_ref().is_none_or(|(acc, _, _)| va.accuracy >= *acc) {
            best = Some((va.accuracy, epoch + 1, store.clone()));
        }
        let flow = on_epoch(&row);
        rows.push(row);
        if flow.is_break() {
            break;
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    let test_acc = match data.test {
        Some(t) if !t.is_empty() => Some(evaluate(&params, cfg, t)?.accuracy),
        _ => None,
    };
    Ok(TrainOutcome {
        params,
        report: TrainReport {
            epochs: rows,
            best_epoch,
            test_acc,
            seed: hyper.seed,
            config: config.clone(),
            wall_clock_s: started.elapsed().as_secs_f64(),
        },
    })
}

/// Writes `report.json`, `epochs.csv` and `timing.json`.
pub fn write_report(dir: impl AsRef<Path>, report: &TrainReport) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("report.json", serde_json::to_string_pretty(report)? + "\n")?;
    let mut csv = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
    for r in &report.epochs {
        writeln!(csv, "{},{},{},{},{}", r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc).unwrap();
    }
    write("epochs.csv", csv)?;
    write(
        "timing.json",
        serde_json::to_string_pretty(&serde_json::json!({ "wall_clock_s": report.wall_clock_s }))? + "\n",
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub category: NoiseCategory,
    pub snr_db: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepTable {
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    pub fn get(&self, category: NoiseCategory, snr_db: f64) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.category == category && c.snr_db == snr_db)
            .map(|c| c.accuracy)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("category,snr_db,accuracy\n");
        for c in &self.cells {
            writeln!(s, "{},{},{}", c.category, c.snr_db, c.accuracy).unwrap();
        }
        s
    }
}

/// Accuracy on `clean` with noise of each category mixed in at each level.
/// The noise for clip `i` of a category depends only on `(seed, category, i)`,
/// so levels differ only in the mixing gain.
pub fn snr_sweep(
    store: &ParamStore,
    cfg: &ModelConfig,
    mfcc: &Mfcc,
    clean: &[(AudioClip, usize)],
    categories: &[NoiseCategory],
    snr_levels: &[f64],
    bank: &NoiseBank,
    seed: u64,
) -> Result<SweepTable> {
    if clean.is_empty() {
        return Err(Error::InvalidConfig("snr sweep needs at least one clean clip".into()));
    }
    let mut table = SweepTable::default();
    for &category in categories {
        let noises = clean
            .iter()
            .enumerate()
            .map(|(i, (c, _))| bank.noise(category, c.len(), c.rate, derive_seed(seed, category.name(), i as u64)))
            .collect::<Result<Vec<_>>>()?;
        for &snr_db in snr_levels {
            let mut data = Dataset::default();
            for ((clip, label), noise) in clean.iter().zip(&noises) {
                data.push(mfcc.model_input(&mix_noise_at_snr(clip, noise, snr_db)?)?, *label);
            }
            table.cells.push(SweepCell {
                category,
                snr_db,
                accuracy: evaluate(store, cfg, &data)?.accuracy,
            });
        }
    }
    Ok(table)
}

/// Reads the clean clips of a manifest with their labels.
pub fn load_clips(manifest: &Manifest) -> Result<Vec<(AudioClip, usize)>> {
    manifest
        .entries
        .iter()
        .map(|e: &ManifestEntry| {
            let path = manifest.resolve(e);
            read_wav(&path)
                .map(|c| (c, e.label as usize))
                .map_err(|err| err.in_entry(path.display().to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn manifest(per_class: usize, copies: usize) -> Manifest {
        let mut m = Manifest::new("/tmp");
        for c in 0..10u8 {
            for i in 0..per_class {
                for k in 0..copies {
                    m.entries.push(ManifestEntry {
                        path: format!("{c}/{c}_{i}_{k}.wav"),
                        label: c,
                        source_id: format!("{c}/{c}_{i}"),
                        augmentation: None,
                        split: None,
                    });
                }
            }
        }
        m
    }

    #[test]
    fn split_counts_and_determinism() {
        let m = manifest(100, 1);
        let (tr, va, te) = stratified_split(&m, [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!(tr.class_counts(), [80; 10]);
        assert_eq!(va.class_counts(), [10; 10]);
        assert_eq!(te.class_counts(), [10; 10]);
        let again = stratified_split(&m, [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!(again.1.entries, va.entries);
        let other = stratified_split(&m, [0.8, 0.1, 0.1], 4).unwrap();
        assert_ne!(other.1.entries, va.entries);
        let mut all: Vec<_> = tr.entries.iter().chain(&va.entries).chain(&te.entries).map(|e| &e.path).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 1000);
    }

    #[test]
    fn augmented_copies_follow_their_source() {
        let m = manifest(12, 5);
        let assigned = assign_splits(&m, [0.8, 0.1, 0.1], 9).unwrap();
        let mut seen: BTreeMap<&str, Split> = BTreeMap::new();
        for e in &assigned.entries {
            let s = e.split.unwrap();
            assert_eq!(*seen.entry(&e.source_id).or_insert(s), s);
        }
    }

    #[test]
    fn too_few_groups() {
        let mut m = manifest(3, 1);
        m.entries.retain(|e| !(e.label == 4 && e.source_id.ends_with("_2")));
        assert!(matches!(
            stratified_split(&m, [0.8, 0.1, 0.1], 0),
            Err(Error::TooFewSamples { label: 4, count: 2 })
        ));
    }

    #[test]
    fn adam_examples() {
        let h = Hyperparams::default();
        let (mut p, mut m, mut v) = (vec![0.5], vec![0.0], vec![0.0]);
        adam_step(&mut p, &[1.0], &mut m, &mut v, &h, 1).unwrap();
        assert!((0.5 - p[0] - h.lr / (1.0 + h.eps)).abs() < 1e-15);

        let (mut p, mut m, mut v) = (vec![0.5, -2.0], vec![0.0; 2], vec![0.0; 2]);
        for t in 1..5 {
            adam_step(&mut p, &[0.0, 0.0], &mut m, &mut v, &h, t).unwrap();
        }
        assert_eq!(p, vec![0.5, -2.0]);

        let (mut p, mut m, mut v) = (vec![1.0, 1.0], vec![0.0; 2], vec![0.0; 2]);
        for t in 1..6 {
            let g = 0.3 * t as f64;
            adam_step(&mut p, &[g, g], &mut m, &mut v, &h, t).unwrap();
        }
        assert_eq!(p[0], p[1]);
        assert!(adam_step(&mut p, &[1.0], &mut m, &mut v, &h, 6).is_err());
    }

    #[test]
    fn confusion_matrix_bookkeeping() {
        let mut c = ConfusionMatrix::new(10);
        for t in 0..10 {
            for _ in 0..3 {
                c.record(t, t);
            }
        }
        assert_eq!(c.accuracy(), 1.0);
        c.record(2, 5);
        assert_eq!(c.total(), 31);
        assert_eq!(c.accuracy(), 30.0 / 31.0);
        assert_eq!(c.row_sums()[2], 4);
        let csv = c.to_csv();
        assert_eq!(csv.lines().count(), 11);
        assert_eq!(csv.lines().next().unwrap(), "0,1,2,3,4,5,6,7,8,9");
        assert_eq!(csv.lines().nth(3).unwrap(), "0,0,3,0,0,1,0,0,0,0");
    }

    fn toy_data(n_per_class: usize, seed: u64) -> Dataset {
        // Class c lights up coefficient row c; no audio needed.
        let cfg = ModelConfig::compact();
        let mut rng = rng_from_seed(seed);
        let mut d = Dataset::default();
        use rand::Rng as _;
        for c in 0..10 {
            for _ in 0..n_per_class {
                let t = Tensor::from_fn([1, cfg.in_coeffs, cfg.in_frames], |i| {
                    let row = i / cfg.in_frames;
                    let base = if row / 4 == c { 1.5 } else { 0.0 };
                    base + 0.3 * rng.random_range(-1.0..1.0)
                });
                d.push(t, c);
            }
        }
        d
    }

    fn tiny_run() -> RunConfig {
        RunConfig {
            model: ModelConfig {
                cnn_channels: 2,
                bridge_out: 8,
                rnn_hidden: 8,
                classifier_hidden: 8,
                ..ModelConfig::compact()
            },
            hyper: Hyperparams {
                epochs: 2,
                batch_size: 8,
                seed: 5,
                lr: 3e-3,
                ..Hyperparams::default()
            },
            ..RunConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic_and_keeps_best_epoch() {
        let (train_set, val) = (toy_data(3, 1), toy_data(1, 2));
        let data = Datasets {
            train: &train_set,
            val: &val,
            test: Some(&val),
        };
        let run = tiny_run();
        let a = train(&run, &data).unwrap();
        let b = train(&run, &data).unwrap();
        assert_eq!(a.report.epochs.len(), 2);
        assert_eq!(serde_json::to_string(&a.report).unwrap(), serde_json::to_string(&b.report).unwrap());
        let best = &a.report.epochs[a.report.best_epoch - 1];
        assert!(a.report.epochs.iter().all(|r| r.val_acc <= best.val_acc));
        assert_eq!(a.report.test_acc, Some(evaluate(&a.params, &run.model, &val).unwrap().accuracy));
        for r in &a.report.epochs {
            assert!((0.0..=1.0).contains(&r.train_acc) && (0.0..=1.0).contains(&r.val_acc));
        }
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let (train_set, val) = (toy_data(2, 3), toy_data(1, 4));
        let mut run = tiny_run();
        run.hyper.lr = 0.0;
        run.hyper.epochs = 1;
        let out = train(&run, &Datasets { train: &train_set, val: &val, test: None }).unwrap();
        let fresh = init_model(&run.model, &mut stream(run.hyper.seed, "init", 0)).unwrap();
        for (a, b) in out.params.iter().zip(fresh.iter()) {
            assert_eq!(a.value, b.value, "{}", a.name);
        }
        assert_eq!(out.report.test_acc, None);
    }

    #[test]
    fn report_files() {
        let dir = tempfile::tempdir().unwrap();
        let report = TrainReport {
            epochs: vec![EpochMetrics {
                epoch: 1,
                train_loss: 2.0,
                train_acc: 0.25,
                val_loss: 2.1,
                val_acc: 0.2,
            }],
            best_epoch: 1,
            test_acc: Some(0.3),
            seed: 1,
            config: RunConfig::default(),
            wall_clock_s: 12.5,
        };
        write_report(dir.path(), &report).unwrap();
        let csv = fs::read_to_string(dir.path().join("epochs.csv")).unwrap();
        assert_eq!(csv, "epoch,train_loss,train_acc,val_loss,val_acc\n1,2,0.25,2.1,0.2\n");
        let json = fs::read_to_string(dir.path().join("report.json")).unwrap();
        assert!(!json.contains("wall_clock"));
        let back: TrainReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.epochs, report.epochs);
        assert!(fs::read_to_string(dir.path().join("timing.json")).unwrap().contains("12.5"));
    }
}
