//! Probabilistic audio augmentation: additive noise at a target SNR, speed
//! perturbation, synthetic reverb and hall impulse responses, plus the
//! fivefold dataset expansion built on them.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng as _, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio::{self, convolve_full, mean_power, read_wav, write_wav, AudioClip};
use crate::data::{Manifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseCategory {
    Horn,
    Nature,
    Vehicle,
    Hum,
    Factory,
}

impl NoiseCategory {
    pub const ALL: [NoiseCategory; 5] = [
        NoiseCategory::Horn,
        NoiseCategory::Nature,
        NoiseCategory::Vehicle,
        NoiseCategory::Hum,
        NoiseCategory::Factory,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseCategory::Horn => "horn",
            NoiseCategory::Nature => "nature",
            NoiseCategory::Vehicle => "vehicle",
            NoiseCategory::Hum => "hum",
            NoiseCategory::Factory => "factory",
        }
    }
}

impl fmt::Display for NoiseCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NoiseCategory::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown noise category `{s}`")))
    }
}

/// One sampled transform. Serialized flat, e.g.
/// `{"kind":"noise","category":"hum","snr_db":5.0,"seed":42}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AugmentationKind {
    Noise { category: NoiseCategory, snr_db: f64 },
    Speed { factor: f64 },
    Reverb { rt60_s: f64 },
    Hall { rt60_s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    #[serde(flatten)]
    pub kind: AugmentationKind,
    /// Seeds the transform's own randomness (noise texture, IR, tile offset).
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KindTag {
    Noise,
    Speed,
    Reverb,
    Hall,
}

impl AugmentationKind {
    pub fn tag(&self) -> KindTag {
        match self {
            AugmentationKind::Noise { .. } => KindTag::Noise,
            AugmentationKind::Speed { .. } => KindTag::Speed,
            AugmentationKind::Reverb { .. } => KindTag::Reverb,
            AugmentationKind::Hall { .. } => KindTag::Hall,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationPolicy {
    pub p_noise: f64,
    pub p_speed: f64,
    pub p_reverb: f64,
    pub p_hall: f64,
    pub snr_levels: Vec<f64>,
    pub speed_range: (f64, f64),
    pub noise_categories: Vec<NoiseCategory>,
    pub reverb_rt60: (f64, f64),
    pub hall_rt60: (f64, f64),
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            p_noise: 0.70,
            p_speed: 0.15,
            p_reverb: 0.075,
            p_hall: 0.075,
            snr_levels: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            speed_range: (0.9, 1.1),
            noise_categories: NoiseCategory::ALL.to_vec(),
            reverb_rt60: (0.2, 0.6),
            hall_rt60: (1.0, 2.5),
        }
    }
}

impl AugmentationPolicy {
    pub fn validate(&self) -> Result<()> {
        let probs = [self.p_noise, self.p_speed, self.p_reverb, self.p_hall];
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidConfig("augmentation probabilities must be non-negative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "augmentation probabilities sum to {total}, expected 1"
            )));
        }
        if self.snr_levels.is_empty() || self.snr_levels.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig("snr_levels must be a non-empty list of finite values".into()));
        }
        let (lo, hi) = self.speed_range;
        if !(lo > 0.5 && lo <= hi && hi <= 2.0) {
            return Err(Error::InvalidConfig(format!(
                "speed_range [{lo}, {hi}] must lie within (0.5, 2.0]"
            )));
        }
        if self.p_noise > 0.0 && self.noise_categories.is_empty() {
            return Err(Error::InvalidConfig("noise_categories is empty".into()));
        }
        for (name, (lo, hi)) in [("reverb_rt60", self.reverb_rt60), ("hall_rt60", self.hall_rt60)] {
            if !(lo > 0.0 && lo <= hi) {
                return Err(Error::InvalidConfig(format!("{name} [{lo}, {hi}] is not a positive interval")));
            }
        }
        Ok(())
    }
}

fn uniform(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Draws one transform from the policy's categorical distribution.
pub fn sample_spec(policy: &AugmentationPolicy, rng: &mut Rng) -> AugmentationSpec {
    let u: f64 = rng.random();
    let noise_edge = policy.p_noise;
    let speed_edge = noise_edge + policy.p_speed;
    let reverb_edge = speed_edge + policy.p_reverb;
    let kind = if u < noise_edge {
        let category = policy.noise_categories[rng.random_range(0..policy.noise_categories.len())];
        let snr_db = policy.snr_levels[rng.random_range(0..policy.snr_levels.len())];
        AugmentationKind::Noise { category, snr_db }
    } else if u < speed_edge {
        AugmentationKind::Speed {
            factor: uniform(rng, policy.speed_range),
        }
    } else if u < reverb_edge || policy.p_hall == 0.0 {
        AugmentationKind::Reverb {
            rt60_s: uniform(rng, policy.reverb_rt60),
        }
    } else {
        AugmentationKind::Hall {
            rt60_s: uniform(rng, policy.hall_rt60),
        }
    };
    AugmentationSpec {
        kind,
        seed: rng.next_u64(),
    }
}

/// Noise gain that places `noise` at `snr_db` below `clean`.
pub fn snr_gain(clean_power: f64, noise_power: f64, snr_db: f64) -> f64 {
    (clean_power / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt()
}

pub fn snr_db(signal: &[f64], noise: &[f64]) -> Result<f64> {
    Ok(10.0 * (mean_power(signal)? / mean_power(noise)?).log10())
}

/// Repeats `noise` from `offset` until `len` samples are filled.
pub fn tile(noise: &[f64], len: usize, offset: usize) -> Vec<f64> {
    if noise.is_empty() {
        return vec![0.0; len];
    }
    noise.iter().cycle().skip(offset % noise.len()).take(len).copied().collect()
}

/// Adds `noise` scaled to the requested SNR. Noise longer than the clean clip
/// is cut; shorter noise is tiled from its start.
pub fn mix_noise_at_snr(clean: &AudioClip, noise: &AudioClip, snr_db: f64) -> Result<AudioClip> {
    if clean.rate != noise.rate {
        return Err(Error::RateMismatch {
            expected: clean.rate,
            found: noise.rate,
        });
    }
    let p_clean = mean_power(&clean.samples)?;
    if p_clean == 0.0 {
        return Err(Error::SilentClean);
    }
    let overlap = if noise.len() >= clean.len() {
        noise.samples[..clean.len()].to_vec()
    } else {
        tile(&noise.samples, clean.len(), 0)
    };
    let p_noise = mean_power(&overlap).map_err(|_| Error::SilentNoise)?;
    if p_noise == 0.0 {
        return Err(Error::SilentNoise);
    }
    let g = snr_gain(p_clean, p_noise, snr_db);
    let samples = clean.samples.iter().zip(&overlap).map(|(c, n)| c + g * n).collect();
    AudioClip::new(samples, clean.rate)
}

pub fn change_speed(clip: &AudioClip, factor: f64) -> Result<AudioClip> {
    if !(factor > 0.5 && factor <= 2.0) {
        return Err(Error::InvalidConfig(format!("speed factor {factor} outside (0.5, 2.0]")));
    }
    if factor == 1.0 {
        return Ok(clip.clone());
    }
    AudioClip::new(audio::speed_resample(&clip.samples, factor), clip.rate)
}

/// ln(1000): an amplitude envelope `exp(-RT60_DECAY * t / rt60)` has fallen by
/// 60 dB at `t = rt60`.
pub const RT60_DECAY: f64 = 6.9078;

pub fn decay_envelope(n: usize, rt60_s: f64, rate: u32) -> f64 {
    (-RT60_DECAY * n as f64 / (rt60_s * f64::from(rate))).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoomKind {
    Reverb,
    Hall,
}

/// Exponentially decaying Gaussian tail after a unit direct path, peak 1.
/// The hall variant adds five sparse early reflections within 50 ms.
pub fn synth_impulse_response(kind: RoomKind, rt60_s: f64, rate: u32, rng: &mut Rng) -> Result<AudioClip> {
    if !(rt60_s > 0.0 && rt60_s.is_finite()) {
        return Err(Error::InvalidConfig(format!("rt60 {rt60_s} must be positive")));
    }
    let len = ((rt60_s * f64::from(rate) - 1e-9).ceil() as usize).max(1);
    let mut h: Vec<f64> = (0..len)
        .map(|n| {
            let w: f64 = StandardNormal.sample(rng);
            decay_envelope(n, rt60_s, rate) * w
        })
        .collect();
    h[0] = 1.0;
    if kind == RoomKind::Hall {
        let lo = (0.005 * f64::from(rate)) as usize;
        let hi = ((0.050 * f64::from(rate)) as usize).min(len);
        if hi > lo.max(1) {
            for _ in 0..5 {
                let at = rng.random_range(lo.max(1)..hi);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                h[at] += sign * rng.random_range(0.4..0.8);
            }
        }
    }
    let peak = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    h.iter_mut().for_each(|v| *v /= peak);
    AudioClip::new(h, rate)
}

/// Convolves with `ir`, keeps the first `len(clip)` samples and restores the
/// input's peak level.
pub fn apply_ir(clip: &AudioClip, ir: &AudioClip) -> Result<AudioClip> {
    if clip.rate != ir.rate {
        return Err(Error::RateMismatch {
            expected: clip.rate,
            found: ir.rate,
        });
    }
    let mut y = convolve_full(&clip.samples, &ir.samples)?;
    y.truncate(clip.len());
    let (peak_in, peak_out) = (clip.peak(), y.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    if peak_out > 0.0 {
        let g = peak_in / peak_out;
        y.iter_mut().for_each(|v| *v *= g);
    }
    AudioClip::new(y, clip.rate)
}

const NOISE_RMS: f64 = 0.1;

/// Synthetic stand-in for a recorded background of the given category,
/// normalized to RMS 0.1.
pub fn synth_noise(category: NoiseCategory, duration_s: f64, rate: u32, rng: &mut Rng) -> Result<AudioClip> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::InvalidConfig(format!("noise duration {duration_s} must be positive")));
    }
    let len = ((duration_s * f64::from(rate)).round() as usize).max(1);
    synth_noise_len(category, len, rate, rng)
}

pub fn synth_noise_len(category: NoiseCategory, len: usize, rate: u32, rng: &mut Rng) -> Result<AudioClip> {
    let fs = f64::from(rate);
    let mut x = match category {
        NoiseCategory::Horn => horn(len, fs, rng),
        NoiseCategory::Nature => nature(len, fs, rng),
        NoiseCategory::Vehicle => vehicle(len, rng),
        NoiseCategory::Hum => hum(len, fs, rng),
        NoiseCategory::Factory => factory(len, fs, rng),
    };
    let power = x.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64;
    if power > 0.0 {
        let g = NOISE_RMS / power.sqrt();
        x.iter_mut().for_each(|v| *v *= g);
    }
    AudioClip::new(x, rate)
}

fn white(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn horn(len: usize, fs: f64, rng: &mut Rng) -> Vec<f64> {
    let phases: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let am_rate = rng.random_range(0.3..1.0);
    let am_phase = rng.random_range(0.0..2.0 * PI);
    (0..len)
        .map(|n| {
            let t = n as f64 / fs;
            let am = 1.0 + 0.3 * (2.0 * PI * am_rate * t + am_phase).sin();
            let stack: f64 = phases
                .iter()
                .enumerate()
                .filter(|(k, _)| 400.0 * ((k + 1) as f64) < 0.45 * fs)
                .map(|(k, ph)| {
                    let h = (k + 1) as f64;
                    (2.0 * PI * 400.0 * h * t + ph).sin() / h
                })
                .sum();
            am * stack
        })
        .collect()
}

fn nature(len: usize, fs: f64, rng: &mut Rng) -> Vec<f64> {
    // Paul Kellet's pink filter
    let mut b = [0.0f64; 7];
    let mut x: Vec<f64> = (0..len)
        .map(|_| {
            let w = white(rng);
            b[0] = 0.99886 * b[0] + w * 0.0555179;
            b[1] = 0.99332 * b[1] + w * 0.0750759;
            b[2] = 0.96900 * b[2] + w * 0.1538520;
            b[3] = 0.86650 * b[3] + w * 0.3104856;
            b[4] = 0.55000 * b[4] + w * 0.5329522;
            b[5] = -0.7616 * b[5] - w * 0.0168980;
            let pink = b.iter().sum::<f64>() + w * 0.5362;
            b[6] = w * 0.115926;
            pink * 0.11
        })
        .collect();
    // bird-like chirps
    let n_chirps = ((len as f64 / fs) * 3.0).ceil() as usize;
    let top = 0.45 * fs;
    for _ in 0..n_chirps {
        let dur = (rng.random_range(0.05..0.15) * fs) as usize;
        if dur < 2 || dur >= len {
            continue;
        }
        let start = rng.random_range(0..len - dur);
        let f0 = rng.random_range(2000.0..4000.0f64).min(top);
        let f1 = (f0 + rng.random_range(-1000.0..1000.0)).clamp(200.0, top);
        let amp = rng.random_range(0.3..0.8);
        let mut phase = 0.0;
        for i in 0..dur {
            let frac = i as f64 / dur as f64;
            phase += 2.0 * PI * (f0 + (f1 - f0) * frac) / fs;
            let env = (PI * frac).sin().powi(2);
            x[start + i] += amp * env * phase.sin();
        }
    }
    x
}

fn vehicle(len: usize, rng: &mut Rng) -> Vec<f64> {
    let mut brown = 0.0;
    let mut raw: Vec<f64> = (0..len)
        .map(|_| {
            brown = 0.995 * brown + 0.05 * white(rng);
            brown
        })
        .collect();
    let mean = raw.iter().sum::<f64>() / len.max(1) as f64;
    raw.iter_mut().for_each(|v| *v -= mean);
    // two one-pole low-pass stages
    for _ in 0..2 {
        let mut y = 0.0;
        for v in raw.iter_mut() {
            y += 0.1 * (*v - y);
            *v = y;
        }
    }
    raw
}

fn hum(len: usize, fs: f64, rng: &mut Rng) -> Vec<f64> {
    const AMPS: [f64; 5] = [1.0, 0.5, 0.3, 0.2, 0.1];
    let phases: Vec<f64> = (0..AMPS.len()).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    (0..len)
        .map(|n| {
            let t = n as f64 / fs;
            AMPS.iter()
                .zip(&phases)
                .enumerate()
                .map(|(k, (a, ph))| a * (2.0 * PI * 50.0 * (k + 1) as f64 * t + ph).sin())
                .sum::<f64>()
                + 0.01 * white(rng)
        })
        .collect()
}

fn factory(len: usize, fs: f64, rng: &mut Rng) -> Vec<f64> {
    let mut x = vec![0.0; len];
    // white-noise bursts
    let mut i = 0;
    while i < len {
        let on = (rng.random_range(0.05..0.2) * fs) as usize + 1;
        let off = (rng.random_range(0.02..0.15) * fs) as usize + 1;
        let amp = rng.random_range(0.3..1.0);
        for v in x.iter_mut().skip(i).take(on) {
            *v += amp * white(rng);
        }
        i += on + off;
    }
    // periodic impacts: decaying ringing clicks
    let period = (rng.random_range(0.2..0.5) * fs) as usize + 1;
    let ring = rng.random_range(1000.0..2000.0f64).min(0.45 * fs);
    let tau = 0.01 * fs;
    let mut at = rng.random_range(0..period);
    while at < len {
        for (k, v) in x.iter_mut().skip(at).take((6.0 * tau) as usize).enumerate() {
            *v += 3.0 * (-(k as f64) / tau).exp() * (2.0 * PI * ring * k as f64 / fs).sin();
        }
        at += period;
    }
    x
}

/// Recorded noise clips per category; categories without recordings fall
/// back to the synthetic generators.
#[derive(Debug, Clone, Default)]
pub struct NoiseBank {
    recordings: HashMap<NoiseCategory, Vec<AudioClip>>,
}

impl NoiseBank {
    pub fn synthetic() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, category: NoiseCategory, clip: AudioClip) {
        self.recordings.entry(category).or_default().push(clip);
    }

    pub fn recordings(&self, category: NoiseCategory) -> &[AudioClip] {
        self.recordings.get(&category).map_or(&[], Vec::as_slice)
    }

    /// `len` samples of noise at `rate`, deterministic in `seed`.
    pub fn noise(&self, category: NoiseCategory, len: usize, rate: u32, seed: u64) -> Result<AudioClip> {
        let mut rng = rng::rng_from_seed(seed);
        let clips = self.recordings(category);
        if clips.is_empty() {
            return synth_noise_len(category, len, rate, &mut rng);
        }
        let pick = &clips[rng.random_range(0..clips.len())];
        let pick = audio::resample(pick, rate)?;
        if pick.is_empty() {
            return Err(Error::SilentNoise);
        }
        let offset = rng.random_range(0..pick.len());
        AudioClip::new(tile(&pick.samples, len, offset), rate)
    }
}

/// Applies one sampled transform.
pub fn apply_spec(clip: &AudioClip, spec: &AugmentationSpec, bank: &NoiseBank) -> Result<AudioClip> {
    match spec.kind {
        AugmentationKind::Noise { category, snr_db } => {
            let noise = bank.noise(category, clip.len(), clip.rate, spec.seed)?;
            mix_noise_at_snr(clip, &noise, snr_db)
        }
        AugmentationKind::Speed { factor } => change_speed(clip, factor),
        AugmentationKind::Reverb { rt60_s } | AugmentationKind::Hall { rt60_s } => {
            let room = if spec.kind.tag() == KindTag::Hall {
                RoomKind::Hall
            } else {
                RoomKind::Reverb
            };
            let ir = synth_impulse_response(room, rt60_s, clip.rate, &mut rng::rng_from_seed(spec.seed))?;
            apply_ir(clip, &ir)
        }
    }
}

/// Scales a clip down to peak 0.99 when it would clip on write. A global gain
/// leaves the SNR untouched.
fn headroom(mut clip: AudioClip) -> AudioClip {
    let peak = clip.peak();
    if peak > 0.99 {
        let g = 0.99 / peak;
        clip.samples.iter_mut().for_each(|v| *v *= g);
    }
    clip
}

fn augmented_path(rel: &str, k: usize) -> String {
    let stem = rel.strip_suffix(".wav").or_else(|| rel.strip_suffix(".WAV")).unwrap_or(rel);
    format!("{stem}_aug{k}.wav")
}

/// Emits every entry's original plus `factor - 1` augmented copies into
/// `out_dir` and returns the manifest describing them (rooted at `out_dir`).
/// Entry `i` draws from its own stream derived from `(seed, i)`.
pub fn expand_dataset(
    manifest: &Manifest,
    policy: &AugmentationPolicy,
    factor: usize,
    out_dir: &Path,
    seed: u64,
    bank: &NoiseBank,
) -> Result<Manifest> {
    if factor == 0 {
        return Err(Error::InvalidConfig("expansion factor must be at least 1".into()));
    }
    policy.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut out = Manifest::new(out_dir);
    for (i, entry) in manifest.entries.iter().enumerate() {
        let src = manifest.resolve(entry);
        let copy_to = out_dir.join(&entry.path);
        ensure_parent(&copy_to)?;
        if src != copy_to {
            std::fs::copy(&src, &copy_to).map_err(|e| Error::io(&src, e).in_entry(&entry.path))?;
        }
        out.entries.push(ManifestEntry {
            augmentation: None,
            split: None,
            ..entry.clone()
        });
        if factor == 1 {
            continue;
        }
        let clip = read_wav(&src).map_err(|e| e.in_entry(&entry.path))?;
        let mut stream = rng::stream(seed, "expand", i as u64);
        for k in 1..factor {
            let spec = sample_spec(policy, &mut stream);
            let aug = apply_spec(&clip, &spec, bank).map_err(|e| e.in_entry(&entry.path))?;
            let rel = augmented_path(&entry.path, k);
            let dest: PathBuf = out_dir.join(&rel);
            write_wav(&dest, &headroom(aug)).map_err(|e| e.in_entry(&entry.path))?;
            out.entries.push(ManifestEntry {
                path: rel,
                label: entry.label,
                source_id: entry.source_id.clone(),
                augmentation: Some(spec),
                split: None,
            });
        }
    }
    Ok(out)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn tone(freq: f64, rate: u32, len: usize) -> AudioClip {
        let s = (0..len)
            .map(|n| 0.5 * (2.0 * PI * freq * n as f64 / f64::from(rate)).sin())
            .collect();
        AudioClip::new(s, rate).unwrap()
    }

    /// Frequency of the largest zero-padded FFT bin in `[lo, hi]`.
    fn fft_peak(x: &[f64], rate: u32, lo: f64, hi: f64) -> f64 {
        let n = (x.len() * 8).next_power_of_two();
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        buf.resize(n, Complex::new(0.0, 0.0));
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let df = f64::from(rate) / n as f64;
        (0..n / 2)
            .filter(|&k| (lo..=hi).contains(&(k as f64 * df)))
            .max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()))
            .map(|k| k as f64 * df)
            .unwrap()
    }

    #[test]
    fn policy_defaults_are_valid() {
        let p = AugmentationPolicy::default();
        p.validate().unwrap();
        assert_eq!(p.snr_levels, vec![0.0, 5.0, 10.0, 15.0, 20.0]);
        let bad = AugmentationPolicy {
            p_noise: 0.8,
            ..AugmentationPolicy::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn degenerate_policy_always_draws_noise() {
        let p = AugmentationPolicy {
            p_noise: 1.0,
            p_speed: 0.0,
            p_reverb: 0.0,
            p_hall: 0.0,
            ..AugmentationPolicy::default()
        };
        let mut rng = rng::rng_from_seed(5);
        for _ in 0..500 {
            let s = sample_spec(&p, &mut rng);
            let AugmentationKind::Noise { snr_db, .. } = s.kind else {
                panic!("expected noise, got {s:?}")
            };
            assert!(p.snr_levels.contains(&snr_db));
        }
    }

    #[test]
    fn sampled_specs_respect_ranges_and_seed() {
        let p = AugmentationPolicy::default();
        let draw = |seed| {
            let mut rng = rng::rng_from_seed(seed);
            (0..200).map(|_| sample_spec(&p, &mut rng)).collect::<Vec<_>>()
        };
        let a = draw(9);
        assert_eq!(a, draw(9));
        for s in &a {
            match s.kind {
                AugmentationKind::Speed { factor } => assert!((0.9..=1.1).contains(&factor)),
                AugmentationKind::Reverb { rt60_s } => assert!((0.2..=0.6).contains(&rt60_s)),
                AugmentationKind::Hall { rt60_s } => assert!((1.0..=2.5).contains(&rt60_s)),
                AugmentationKind::Noise { snr_db, .. } => assert!(p.snr_levels.contains(&snr_db)),
            }
        }
    }

    #[test]
    fn spec_json_is_flat() {
        let s = AugmentationSpec {
            kind: AugmentationKind::Noise {
                category: NoiseCategory::Hum,
                snr_db: 5.0,
            },
            seed: 42,
        };
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"kind":"noise","category":"hum","snr_db":5.0,"seed":42}"#);
        assert_eq!(serde_json::from_str::<AugmentationSpec>(&json).unwrap(), s);
    }

    #[test]
    fn snr_gain_examples() {
        assert!((snr_gain(0.5, 0.5, 0.0) - 1.0).abs() < 1e-15);
        assert!((snr_gain(0.5, 0.5, 20.0) - 0.1).abs() < 1e-15);
        assert!((snr_gain(0.04, 0.01, 10.0) - 0.4f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn mixing_hits_requested_snr() {
        // P_clean = 0.04 (constant 0.2), P_noise = 0.01 (alternating ±0.1)
        let clean = AudioClip::new(vec![0.2; 1000], 8000).unwrap();
        let noise = AudioClip::new((0..1000).map(|i| if i % 2 == 0 { 0.1 } else { -0.1 }).collect(), 8000).unwrap();
        let mixed = mix_noise_at_snr(&clean, &noise, 10.0).unwrap();
        let scaled: Vec<f64> = mixed.samples.iter().zip(&clean.samples).map(|(m, c)| m - c).collect();
        assert!((scaled[0] - 0.1 * 0.4f64.sqrt()).abs() < 1e-12);
        assert!((snr_db(&clean.samples, &scaled).unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn mixing_tiles_short_noise_and_checks_inputs() {
        let clean = tone(300.0, 8000, 1000);
        let short = AudioClip::new(vec![0.1, -0.2, 0.3], 8000).unwrap();
        let mixed = mix_noise_at_snr(&clean, &short, 5.0).unwrap();
        assert_eq!(mixed.len(), 1000);
        let resid: Vec<f64> = mixed.samples.iter().zip(&clean.samples).map(|(m, c)| m - c).collect();
        assert!((snr_db(&clean.samples, &resid).unwrap() - 5.0).abs() < 1e-9);

        let silent = AudioClip::silence(1000, 8000).unwrap();
        assert!(matches!(mix_noise_at_snr(&silent, &short, 0.0), Err(Error::SilentClean)));
        assert!(matches!(mix_noise_at_snr(&clean, &silent, 0.0), Err(Error::SilentNoise)));
        let other_rate = AudioClip::new(vec![0.1; 1000], 16000).unwrap();
        assert!(matches!(mix_noise_at_snr(&clean, &other_rate, 0.0), Err(Error::RateMismatch { .. })));
    }

    #[test]
    fn speed_change_examples() {
        let clip = tone(440.0, 16000, 16000);
        let same = change_speed(&clip, 1.0).unwrap();
        assert_eq!(same, clip);
        assert_eq!(change_speed(&clip, 2.0).unwrap().len(), 8000);
        let fast = change_speed(&clip, 1.1).unwrap();
        let peak = fft_peak(&fast.samples, 16000, 300.0, 700.0);
        assert!((peak - 484.0).abs() <= 2.0, "peak {peak}");
        assert!(change_speed(&clip, 0.5).is_err());
        assert!(change_speed(&clip, 2.5).is_err());
    }

    #[test]
    fn speed_there_and_back_keeps_length() {
        let clip = tone(200.0, 16000, 12345);
        for f in [0.9, 0.95, 1.07, 1.1, 1.9] {
            let back = change_speed(&change_speed(&clip, f).unwrap(), 1.0 / f).unwrap();
            assert!((back.len() as i64 - clip.len() as i64).abs() <= 2, "factor {f}");
        }
    }

    #[test]
    fn impulse_response_shape() {
        let env = decay_envelope(4800, 0.3, 16000) / decay_envelope(0, 0.3, 16000);
        assert!((env - 1e-3).abs() < 1e-6);
        let ir = synth_impulse_response(RoomKind::Reverb, 0.3, 16000, &mut rng::rng_from_seed(1)).unwrap();
        assert_eq!(ir.len(), 4800);
        assert!((ir.peak() - 1.0).abs() < 1e-12);
        let again = synth_impulse_response(RoomKind::Reverb, 0.3, 16000, &mut rng::rng_from_seed(1)).unwrap();
        assert_eq!(ir, again);
        let hall = synth_impulse_response(RoomKind::Hall, 1.5, 16000, &mut rng::rng_from_seed(1)).unwrap();
        assert_eq!(hall.len(), 24000);
        assert!(synth_impulse_response(RoomKind::Hall, 0.0, 16000, &mut rng::rng_from_seed(1)).is_err());
    }

    #[test]
    fn measured_tail_decay_follows_rt60() {
        // RMS over 20 ms windows at t and t + rt60/2 should differ by ~30 dB
        let rate = 16000;
        let rt60 = 0.4;
        let ir = synth_impulse_response(RoomKind::Reverb, rt60, rate, &mut rng::rng_from_seed(2)).unwrap();
        let win = |start: usize| audio::rms(&ir.samples[start..start + 320]).unwrap();
        let drop = 20.0 * (win(400) / win(400 + 3200)).log10();
        assert!((drop - 30.0).abs() < 4.0, "drop {drop} dB");
    }

    #[test]
    fn apply_ir_contract() {
        let clip = tone(300.0, 16000, 4000);
        let unit = AudioClip::new(vec![1.0], 16000).unwrap();
        let same = apply_ir(&clip, &unit).unwrap();
        for (a, b) in same.samples.iter().zip(&clip.samples) {
            assert!((a - b).abs() < 1e-9);
        }
        let ir = synth_impulse_response(RoomKind::Reverb, 0.3, 16000, &mut rng::rng_from_seed(4)).unwrap();
        let wet = apply_ir(&clip, &ir).unwrap();
        assert_eq!(wet.len(), clip.len());
        assert!((wet.peak() - clip.peak()).abs() < 1e-12);
        let other = AudioClip::new(vec![1.0], 8000).unwrap();
        assert!(matches!(apply_ir(&clip, &other), Err(Error::RateMismatch { .. })));
    }

    #[test]
    fn hall_tail_outlasts_reverb_tail() {
        let rate = 16000;
        let mut clap = vec![0.0; rate as usize];
        let mut r = rng::rng_from_seed(8);
        for v in clap.iter_mut().take(160) {
            *v = 0.5 * white(&mut r);
        }
        let clap = AudioClip::new(clap, rate).unwrap();
        let tail_energy = |kind, rt60| {
            let ir = synth_impulse_response(kind, rt60, rate, &mut rng::rng_from_seed(3)).unwrap();
            let y = apply_ir(&clap, &ir).unwrap();
            y.samples[y.len() - 1600..].iter().map(|v| v * v).sum::<f64>()
        };
        let hall = tail_energy(RoomKind::Hall, 2.0);
        let reverb = tail_energy(RoomKind::Reverb, 0.3);
        assert!(hall > reverb * 1e3, "hall {hall} reverb {reverb}");
    }

    #[test]
    fn noise_generators() {
        for cat in NoiseCategory::ALL {
            let a = synth_noise(cat, 1.0, 16000, &mut rng::rng_from_seed(21)).unwrap();
            assert_eq!(a.len(), 16000);
            let r = audio::rms(&a.samples).unwrap();
            assert!((r - 0.1).abs() < 1e-6, "{cat}: rms {r}");
            let b = synth_noise(cat, 1.0, 16000, &mut rng::rng_from_seed(21)).unwrap();
            assert_eq!(a, b);
            let c = synth_noise(cat, 1.0, 16000, &mut rng::rng_from_seed(22)).unwrap();
            assert_ne!(a, c);
        }
        let hum = synth_noise(NoiseCategory::Hum, 2.0, 16000, &mut rng::rng_from_seed(1)).unwrap();
        let peak = fft_peak(&hum.samples, 16000, 20.0, 4000.0);
        assert!((peak - 50.0).abs() <= 2.0, "hum peak {peak}");
        let horn = synth_noise(NoiseCategory::Horn, 2.0, 16000, &mut rng::rng_from_seed(1)).unwrap();
        let peak = fft_peak(&horn.samples, 16000, 20.0, 4000.0);
        assert!((peak - 400.0).abs() <= 2.0, "horn peak {peak}");
        assert!(synth_noise(NoiseCategory::Hum, 0.0, 16000, &mut rng::rng_from_seed(1)).is_err());
    }

    #[test]
    fn category_names_roundtrip() {
        for c in NoiseCategory::ALL {
            assert_eq!(c.name().parse::<NoiseCategory>().unwrap(), c);
        }
        assert!("ten".parse::<NoiseCategory>().is_err());
    }

    #[test]
    fn recorded_noise_is_tiled() {
        let mut bank = NoiseBank::synthetic();
        bank.insert(NoiseCategory::Factory, AudioClip::new(vec![0.1, -0.1, 0.2], 8000).unwrap());
        let n = bank.noise(NoiseCategory::Factory, 10, 8000, 1).unwrap();
        assert_eq!(n.len(), 10);
        assert!(n.samples.iter().all(|v| [0.1, -0.1, 0.2].contains(v)));
        assert_eq!(n, bank.noise(NoiseCategory::Factory, 10, 8000, 1).unwrap());
    }

    proptest::proptest! {
        #[test]
        fn remeasured_snr_matches_request(
            seed in 0u64..10_000,
            level in proptest::sample::select(vec![0.0, 5.0, 10.0, 15.0, 20.0]),
            amp in 0.01f64..1.0,
        ) {
            let mut r = rng::rng_from_seed(seed);
            let clean: Vec<f64> = (0..800).map(|_| amp * white(&mut r)).collect();
            let clean = AudioClip::new(clean, 8000).unwrap();
            let cat = NoiseCategory::ALL[(seed % 5) as usize];
            let noise = synth_noise_len(cat, 800, 8000, &mut r).unwrap();
            let mixed = mix_noise_at_snr(&clean, &noise, level).unwrap();
            let resid: Vec<f64> = mixed.samples.iter().zip(&clean.samples).map(|(m, c)| m - c).collect();
            proptest::prop_assert!((snr_db(&clean.samples, &resid).unwrap() - level).abs() < 0.01);
        }
    }
}
