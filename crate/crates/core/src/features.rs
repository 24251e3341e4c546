//! MFCC extraction, delta features and fixed-size model inputs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::{resample, AudioClip};
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Rows of the model input: 13 cepstra + Δ + ΔΔ, zero-padded by one row.
pub const MODEL_COEFFS: usize = 40;
/// Frames of the model input.
pub const MODEL_FRAMES: usize = 80;
/// Coefficients produced by [`add_deltas`] on the default cepstra.
pub const STACKED_COEFFS: usize = 39;

const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hamming,
    Hann,
    Rectangular,
}

impl Window {
    fn coefficients(self, n: usize) -> Vec<f64> {
        let denom = (n.max(2) - 1) as f64;
        (0..n)
            .map(|i| {
                let phase = 2.0 * std::f64::consts::PI * i as f64 / denom;
                match self {
                    Window::Hamming => 0.54 - 0.46 * phase.cos(),
                    Window::Hann => 0.5 - 0.5 * phase.cos(),
                    Window::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfccConfig {
    pub alpha: f64,
    pub rate: u32,
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub nfft: usize,
    pub n_mels: usize,
    pub n_ceps: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub window: Window,
    pub cmn: bool,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            alpha: 0.97,
            rate: 16_000,
            frame_ms: 25.0,
            hop_ms: 10.0,
            nfft: 512,
            n_mels: 40,
            n_ceps: 13,
            fmin: 0.0,
            fmax: 8_000.0,
            window: Window::Hamming,
            cmn: true,
        }
    }
}

impl MfccConfig {
    pub fn frame_len(&self) -> usize {
        (self.frame_ms * self.rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.hop_ms * self.rate as f64 / 1000.0).round() as usize
    }

    pub fn n_bins(&self) -> usize {
        self.nfft / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.rate == 0 || self.frame_len() == 0 || self.hop_len() == 0 {
            return bad(format!(
                "rate {} with frame {} ms and hop {} ms gives an empty frame or hop",
                self.rate, self.frame_ms, self.hop_ms
            ));
        }
        if self.nfft < self.frame_len() {
            return bad(format!("nfft {} shorter than frame of {} samples", self.nfft, self.frame_len()));
        }
        if self.n_ceps == 0 || self.n_ceps > self.n_mels {
            return bad(format!("n_ceps {} must be in 1..={}", self.n_ceps, self.n_mels));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.rate as f64 / 2.0) {
            return bad(format!(
                "need 0 <= fmin < fmax <= rate/2, got fmin {} fmax {} rate {}",
                self.fmin, self.fmax, self.rate
            ));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return bad(format!("pre-emphasis alpha {} outside [0, 1)", self.alpha));
        }
        Ok(())
    }

    /// Frames produced for a clip of `n` samples, or `None` when shorter than a frame.
    pub fn n_frames(&self, n: usize) -> Option<usize> {
        (n >= self.frame_len()).then(|| 1 + (n - self.frame_len()) / self.hop_len())
    }
}

/// Row-major `n_frames × n_coeffs` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Vec<f64>,
    pub n_frames: usize,
    pub n_coeffs: usize,
}

impl FeatureMatrix {
    pub fn new(values: Vec<f64>, n_frames: usize, n_coeffs: usize) -> Result<Self> {
        if n_frames == 0 || n_coeffs == 0 || values.len() != n_frames * n_coeffs {
            return Err(Error::shape(
                "feature_matrix",
                format!("{} values for {n_frames}×{n_coeffs}", values.len()),
            ));
        }
        Ok(Self {
            values,
            n_frames,
            n_coeffs,
        })
    }

    pub fn get(&self, frame: usize, coeff: usize) -> f64 {
        self.values[frame * self.n_coeffs + coeff]
    }

    pub fn row(&self, frame: usize) -> &[f64] {
        &self.values[frame * self.n_coeffs..(frame + 1) * self.n_coeffs]
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.n_coeffs];
        for row in self.values.chunks(self.n_coeffs) {
            means.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        means.iter_mut().for_each(|m| *m /= self.n_frames as f64);
        means
    }

    /// Subtracts each coefficient's mean over frames.
    pub fn subtract_column_means(&mut self) {
        let means = self.column_means();
        for row in self.values.chunks_mut(self.n_coeffs) {
            row.iter_mut().zip(&means).for_each(|(v, m)| *v -= m);
        }
    }
}

pub fn pre_emphasis(x: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::EmptySignal);
    }
    let mut y = Vec::with_capacity(x.len());
    y.push(x[0]);
    y.extend(x.windows(2).map(|w| w[1] - alpha * w[0]));
    Ok(y)
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters, row-major `n_mels × (nfft/2 + 1)`. Each triangle spans
/// the neighbouring mel-spaced edge frequencies and is scaled so its largest
/// sampled value is 1.
pub fn mel_filterbank(cfg: &MfccConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let n_bins = cfg.n_bins();
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = cfg.rate as f64 / cfg.nfft as f64;
    let mut bank = Vec::with_capacity(cfg.n_mels);
    for m in 0..cfg.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let mut row: Vec<f64> = (0..n_bins)
            .map(|k| {
                let f = k as f64 * bin_hz;
                if f <= left || f >= right {
                    0.0
                } else if f <= center {
                    (f - left) / (center - left)
                } else {
                    (right - f) / (right - center)
                }
            })
            .collect();
        let peak = row.iter().cloned().fold(0.0, f64::max);
        if peak == 0.0 {
            // Narrower than a bin: fall back to the nearest bin.
            let k = ((center / bin_hz).round() as usize).min(n_bins - 1);
            row[k] = 1.0;
        } else {
            row.iter_mut().for_each(|v| *v /= peak);
        }
        bank.push(row);
    }
    Ok(bank)
}

/// Orthonormal DCT-II basis, `n_out × n_in`.
fn dct_matrix(n_in: usize, n_out: usize) -> Vec<f64> {
    let mut m = Vec::with_capacity(n_in * n_out);
    for k in 0..n_out {
        let scale = if k == 0 { (1.0 / n_in as f64).sqrt() } else { (2.0 / n_in as f64).sqrt() };
        for n in 0..n_in {
            m.push(scale * (std::f64::consts::PI * k as f64 * (2 * n + 1) as f64 / (2 * n_in) as f64).cos());
        }
    }
    m
}

/// Precomputed window, filterbank, DCT basis and FFT plan for one config.
pub struct Mfcc {
    cfg: MfccConfig,
    window: Vec<f64>,
    bank: Vec<Vec<f64>>,
    /// First and one-past-last nonzero bin of each filter.
    support: Vec<(usize, usize)>,
    dct: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Mfcc {
    pub fn new(cfg: &MfccConfig) -> Result<Self> {
        let bank = mel_filterbank(cfg)?;
        let support = bank
            .iter()
            .map(|row| {
                let first = row.iter().position(|&v| v > 0.0).unwrap_or(0);
                let last = row.iter().rposition(|&v| v > 0.0).map_or(0, |i| i + 1);
                (first, last)
            })
            .collect();
        Ok(Self {
            window: cfg.window.coefficients(cfg.frame_len()),
            dct: dct_matrix(cfg.n_mels, cfg.n_ceps),
            fft: FftPlanner::new().plan_fft_forward(cfg.nfft),
            bank,
            support,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &[Vec<f64>] {
        &self.bank
    }

    /// Log mel energies, `n_frames × n_mels`.
    pub fn log_mel(&self, clip: &AudioClip) -> Result<FeatureMatrix> {
        let cfg = &self.cfg;
        if clip.rate != cfg.rate {
            return Err(Error::RateMismatch {
                expected: cfg.rate,
                found: clip.rate,
            });
        }
        let frame = cfg.frame_len();
        let n_frames = cfg.n_frames(clip.len()).ok_or(Error::TooShort {
            samples: clip.len(),
            frame,
        })?;
        let hop = cfg.hop_len();
        let x = pre_emphasis(&clip.samples, cfg.alpha)?;
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.nfft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; cfg.n_bins()];
        let mut out = Vec::with_capacity(n_frames * cfg.n_mels);
        for t in 0..n_frames {
            let seg = &x[t * hop..t * hop + frame];
            for (i, c) in buf.iter_mut().enumerate() {
                *c = Complex::new(if i < frame { seg[i] * self.window[i] } else { 0.0 }, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr() / cfg.nfft as f64;
            }
            for (row, &(a, b)) in self.bank.iter().zip(&self.support) {
                let e: f64 = row[a..b].iter().zip(&power[a..b]).map(|(w, p)| w * p).sum();
                out.push(e.max(LOG_FLOOR).ln());
            }
        }
        FeatureMatrix::new(out, n_frames, cfg.n_mels)
    }

    pub fn compute(&self, clip: &AudioClip) -> Result<FeatureMatrix> {
        let mel = self.log_mel(clip)?;
        let (n_mels, n_ceps) = (self.cfg.n_mels, self.cfg.n_ceps);
        let mut out = Vec::with_capacity(mel.n_frames * n_ceps);
        for row in mel.values.chunks(n_mels) {
            for basis in self.dct.chunks(n_mels) {
                out.push(basis.iter().zip(row).map(|(a, b)| a * b).sum());
            }
        }
        let mut f = FeatureMatrix::new(out, mel.n_frames, n_ceps)?;
        if self.cfg.cmn {
            f.subtract_column_means();
        }
        Ok(f)
    }

    /// Resample, extract, stack deltas and shape into a `1×40×80` tensor.
    pub fn model_input(&self, clip: &AudioClip) -> Result<Tensor> {
        let clip = if clip.rate == self.cfg.rate {
            std::borrow::Cow::Borrowed(clip)
        } else {
            std::borrow::Cow::Owned(resample(clip, self.cfg.rate)?)
        };
        let f = add_deltas(&self.compute(&clip)?);
        to_model_input(&f, MODEL_COEFFS, MODEL_FRAMES)
    }
}

pub fn mfcc(clip: &AudioClip, cfg: &MfccConfig) -> Result<FeatureMatrix> {
    Mfcc::new(cfg)?.compute(clip)
}

fn regression_delta(f: &FeatureMatrix) -> Vec<f64> {
    let (t_max, c) = (f.n_frames as isize - 1, f.n_coeffs);
    let at = |t: isize, k: usize| f.get(t.clamp(0, t_max) as usize, k);
    let mut d = Vec::with_capacity(f.values.len());
    for t in 0..f.n_frames as isize {
        for k in 0..c {
            let s: f64 = (1..=2).map(|n| n as f64 * (at(t + n, k) - at(t - n, k))).sum();
            d.push(s / 10.0);
        }
    }
    d
}

/// Appends Δ and ΔΔ (regression window 2, edge frames replicated).
pub fn add_deltas(f: &FeatureMatrix) -> FeatureMatrix {
    let d1 = FeatureMatrix {
        values: regression_delta(f),
        ..*f
    };
    let d2 = regression_delta(&d1);
    let c = f.n_coeffs;
    let mut values = Vec::with_capacity(3 * f.values.len());
    for t in 0..f.n_frames {
        values.extend_from_slice(f.row(t));
        values.extend_from_slice(d1.row(t));
        values.extend_from_slice(&d2[t * c..(t + 1) * c]);
    }
    FeatureMatrix {
        values,
        n_frames: f.n_frames,
        n_coeffs: 3 * c,
    }
}

/// Lays a 39-coefficient stack out as `(1, coeffs, frames)`, zero-padding the
/// coefficient axis and padding or truncating frames at the end.
pub fn to_model_input(f: &FeatureMatrix, target_coeffs: usize, target_frames: usize) -> Result<Tensor> {
    if f.n_coeffs != STACKED_COEFFS || target_coeffs < STACKED_COEFFS {
        return Err(Error::WrongCoeffCount {
            expected: STACKED_COEFFS,
            found: f.n_coeffs,
        });
    }
    let mut data = vec![0.0; target_coeffs * target_frames];
    for t in 0..f.n_frames.min(target_frames) {
        for (k, &v) in f.row(t).iter().enumerate() {
            data[k * target_frames + t] = v;
        }
    }
    Tensor::new(vec![1, target_coeffs, target_frames], data)
}

const FEATURE_MAGIC: &[u8; 4] = b"MFCC";

/// Writes the 16-byte header and little-endian `f32` values.
pub fn write_features(path: impl AsRef<Path>, f: &FeatureMatrix) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let mut bytes = Vec::with_capacity(16 + 4 * f.values.len());
    bytes.extend_from_slice(FEATURE_MAGIC);
    bytes.extend_from_slice(&(f.n_frames as u32).to_le_bytes());
    bytes.extend_from_slice(&(f.n_coeffs as u32).to_le_bytes());
    bytes.extend_from_slice(&0u32.to_le_bytes());
    for &v in &f.values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&bytes).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let corrupt = |m: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: m.to_string(),
    };
    if bytes.len() < 16 || &bytes[..4] != FEATURE_MAGIC {
        return Err(corrupt("missing MFCC header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (n_frames, n_coeffs) = (word(4), word(8));
    if bytes.len() != 16 + 4 * n_frames * n_coeffs {
        return Err(corrupt("payload size does not match header"));
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    FeatureMatrix::new(values, n_frames, n_coeffs).map_err(|_| corrupt("empty feature matrix"))
}
