//! Audio clips, WAV I/O, resampling and the DSP primitives shared by the
//! augmentation and feature stages.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Mono audio with its sample rate. Samples are nominally in [-1, 1]; only the
/// WAV writer clamps.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, rate: u32) -> Result<Self> {
        if rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        Ok(Self { samples, rate })
    }

    pub fn silence(len: usize, rate: u32) -> Result<Self> {
        Self::new(vec![0.0; len], rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.rate)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.channels > 2 {
        return Err(Error::UnsupportedEncoding(format!(
            "{} channels in {}",
            spec.channels,
            path.display()
        )));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (fmt, bits) => {
            return Err(Error::UnsupportedEncoding(format!(
                "{bits}-bit {fmt:?} samples in {}",
                path.display()
            )))
        }
    };
    let samples = if spec.channels == 2 {
        interleaved
            .chunks_exact(2)
            .map(|pair| 0.5 * (pair[0] + pair[1]))
            .collect()
    } else {
        interleaved
    };
    AudioClip::new(samples, spec.sample_rate)
}

fn map_hound(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(source) => Error::io(path, source),
        hound::Error::Unsupported => {
            Error::UnsupportedEncoding(format!("compressed or unknown format in {}", path.display()))
        }
        other => Error::MalformedWav(format!("{}: {other}", path.display())),
    }
}

/// Quantizes one sample to 16-bit PCM. The scale matches the reader's 1/32768
/// so that a read/write cycle is exact after the first quantization; the
/// positive end saturates at 32767.
pub fn quantize_pcm16(x: f64) -> i16 {
    let v = (x.clamp(-1.0, 1.0) * 32768.0).round();
    v.clamp(-32768.0, 32767.0) as i16
}

/// Writes 16-bit PCM mono, little-endian.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    if clip.is_empty() {
        return Err(Error::EmptySignal);
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in &clip.samples {
        writer
            .write_sample(quantize_pcm16(s))
            .map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

pub fn mean_power(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::EmptySignal);
    }
    Ok(x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64)
}

pub fn rms(x: &[f64]) -> Result<f64> {
    mean_power(x).map(f64::sqrt)
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

const TAPS: usize = 64;
const HALF_TAPS: i64 = (TAPS / 2) as i64;
const KAISER_BETA: f64 = 8.6;
/// Phase count used when the rate ratio has no small rational form.
const FRACTIONAL_PHASES: usize = 2048;
const MAX_EXACT_PHASES: u64 = 4096;

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Kaiser-windowed sinc kernel table, one row of `TAPS` weights per phase.
/// Row `p` holds the weights for input offsets `-31..=32` around `floor(t)`
/// when the fractional position is `p / phases`.
struct Polyphase {
    table: Vec<f64>,
}

impl Polyphase {
    /// `cutoff` is in cycles per input sample.
    fn new(phases: usize, cutoff: f64) -> Self {
        let i0_beta = bessel_i0(KAISER_BETA);
        let half = HALF_TAPS as f64;
        let mut table = vec![0.0; phases * TAPS];
        for p in 0..phases {
            let frac = p as f64 / phases as f64;
            let row = &mut table[p * TAPS..(p + 1) * TAPS];
            for (slot, j) in row.iter_mut().zip(1 - HALF_TAPS..=HALF_TAPS) {
                let d = j as f64 - frac;
                let u = d / half;
                let window = if u.abs() >= 1.0 {
                    0.0
                } else {
                    bessel_i0(KAISER_BETA * (1.0 - u * u).sqrt()) / i0_beta
                };
                *slot = 2.0 * cutoff * sinc(2.0 * cutoff * d) * window;
            }
            // unit DC gain per phase
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|w| *w /= sum);
        }
        Self { table }
    }

    fn apply(&self, input: &[f64], base: i64, phase: usize) -> f64 {
        let row = &self.table[phase * TAPS..(phase + 1) * TAPS];
        let n = input.len() as i64;
        let start = base + 1 - HALF_TAPS;
        let mut acc = 0.0;
        if start >= 0 && start + TAPS as i64 <= n {
            let s = &input[start as usize..start as usize + TAPS];
            for (w, x) in row.iter().zip(s) {
                acc += w * x;
            }
        } else {
            for (k, w) in row.iter().enumerate() {
                let idx = start + k as i64;
                if idx >= 0 && idx < n {
                    acc += w * input[idx as usize];
                }
            }
        }
        acc
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Windowed-sinc resampling to `target_rate`. Output length is
/// `round(len * target_rate / rate)`.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::InvalidConfig("target rate must be positive".into()));
    }
    if target_rate == clip.rate {
        return Ok(clip.clone());
    }
    let (from, to) = (u64::from(clip.rate), u64::from(target_rate));
    let out_len = ((clip.len() as u64 * to + from / 2) / from) as usize;
    let cutoff = 0.475 * (to as f64 / from as f64).min(1.0);
    let g = gcd(from, to);
    let (up, down) = (to / g, from / g);
    let samples = if up <= MAX_EXACT_PHASES {
        // output n sits at input position n * down / up exactly
        let bank = Polyphase::new(up as usize, cutoff);
        (0..out_len as u64)
            .map(|n| {
                let pos = n * down;
                bank.apply(&clip.samples, (pos / up) as i64, (pos % up) as usize)
            })
            .collect()
    } else {
        fractional_resample(&clip.samples, from as f64 / to as f64, out_len, cutoff)
    };
    AudioClip::new(samples, target_rate)
}

/// Reads the input at positions `n * step` for `n < out_len`.
fn fractional_resample(input: &[f64], step: f64, out_len: usize, cutoff: f64) -> Vec<f64> {
    let bank = Polyphase::new(FRACTIONAL_PHASES, cutoff);
    (0..out_len)
        .map(|n| {
            let t = n as f64 * step;
            let mut base = t.floor() as i64;
            let mut phase = ((t - base as f64) * FRACTIONAL_PHASES as f64).round() as usize;
            if phase == FRACTIONAL_PHASES {
                base += 1;
                phase = 0;
            }
            bank.apply(input, base, phase)
        })
        .collect()
}

/// Plays `samples` back `factor` times faster at the same rate: the length
/// becomes `round(len / factor)` and every frequency is multiplied by `factor`.
pub(crate) fn speed_resample(samples: &[f64], factor: f64) -> Vec<f64> {
    let out_len = (samples.len() as f64 / factor).round() as usize;
    let cutoff = 0.475 * (1.0 / factor).min(1.0);
    fractional_resample(samples, factor, out_len, cutoff)
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// Above this many multiply-adds the FFT path is used.
const DIRECT_CONV_LIMIT: usize = 1 << 16;

pub fn convolve_direct(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let mut y = vec![0.0; x.len() + h.len() - 1];
    for (i, &xi) in x.iter().enumerate() {
        for (yj, &hj) in y[i..i + h.len()].iter_mut().zip(h) {
            *yj += xi * hj;
        }
    }
    y
}

pub fn convolve_fft(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let out_len = x.len() + h.len() - 1;
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let spectrum = |s: &[f64], fft: &Arc<dyn rustfft::Fft<f64>>| {
        let mut buf: Vec<Complex<f64>> = s.iter().map(|&v| Complex::new(v, 0.0)).collect();
        buf.resize(n, Complex::new(0.0, 0.0));
        fft.process(&mut buf);
        buf
    };
    let mut a = spectrum(x, &fwd);
    let b = spectrum(h, &fwd);
    a.iter_mut().zip(&b).for_each(|(p, q)| *p *= q);
    inv.process(&mut a);
    a[..out_len].iter().map(|c| c.re / n as f64).collect()
}

/// Full linear convolution, length `len(x) + len(h) - 1`.
pub fn convolve_full(x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() || h.is_empty() {
        return Err(Error::EmptySignal);
    }
    if x.len().saturating_mul(h.len()) <= DIRECT_CONV_LIMIT {
        Ok(convolve_direct(x, h))
    } else {
        Ok(convolve_fft(x, h))
    }
}
