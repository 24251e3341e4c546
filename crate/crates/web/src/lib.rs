//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each exported function has a plain Rust counterpart in [`demo`] so the
//! logic is testable natively.

use wasm_bindgen::prelude::*;

pub mod demo {
    use digitrec::audio::AudioClip;
    use digitrec::augmentation::{apply_spec, AugmentationKind, AugmentationSpec, NoiseBank, NoiseCategory};
    use digitrec::data::synth_digit_clip;
    use digitrec::features::{mel_filterbank, mfcc, MfccConfig};
    use digitrec::rng::stream;
    use digitrec::{Error, Result};

    pub const RATE: u32 = 16_000;

    pub fn digit_clip(digit: u8, seed: u64) -> Result<AudioClip> {
        if digit > 9 {
            return Err(Error::LabelOutOfRange {
                label: digit as usize,
                classes: 10,
            });
        }
        synth_digit_clip(digit, RATE, &mut stream(seed, "demo", digit as u64))
    }

    /// Parses the demo's transform selector. `amount` is the SNR in dB for
    /// noise categories, the factor for `speed` and RT60 seconds for rooms.
    pub fn spec(kind: &str, amount: f64, seed: u64) -> Result<AugmentationSpec> {
        let kind = match kind {
            "speed" => AugmentationKind::Speed { factor: amount },
            "reverb" => AugmentationKind::Reverb { rt60_s: amount },
            "hall" => AugmentationKind::Hall { rt60_s: amount },
            other => AugmentationKind::Noise {
                category: other.parse::<NoiseCategory>()?,
                snr_db: amount,
            },
        };
        Ok(AugmentationSpec { kind, seed })
    }

    pub struct Augmented {
        pub original: Vec<f64>,
        pub augmented: Vec<f64>,
    }

    pub fn augment(digit: u8, seed: u64, kind: &str, amount: f64) -> Result<Augmented> {
        let clip = digit_clip(digit, seed)?;
        let out = apply_spec(&clip, &spec(kind, amount, seed)?, &NoiseBank::synthetic())?;
        Ok(Augmented {
            original: clip.samples,
            augmented: out.samples,
        })
    }

    pub struct Heatmap {
        pub frames: usize,
        pub coeffs: usize,
        /// Row-major `frames × coeffs`.
        pub values: Vec<f64>,
        pub samples: Vec<f64>,
    }

    /// MFCCs of a synthetic digit, optionally after an augmentation (`kind`
    /// of `"clean"` skips it).
    pub fn heatmap(digit: u8, seed: u64, kind: &str, amount: f64) -> Result<Heatmap> {
        let clip = match kind {
            "clean" => digit_clip(digit, seed)?,
            _ => AudioClip::new(augment(digit, seed, kind, amount)?.augmented, RATE)?,
        };
        let f = mfcc(&clip, &MfccConfig::default())?;
        Ok(Heatmap {
            frames: f.n_frames,
            coeffs: f.n_coeffs,
            values: f.values,
            samples: clip.samples,
        })
    }

    /// Row-major `n_mels × (nfft/2 + 1)` triangular filters.
    pub fn filterbank(n_mels: usize, nfft: usize, fmax: f64) -> Result<Vec<f64>> {
        let cfg = MfccConfig {
            n_mels,
            nfft,
            fmax,
            n_ceps: n_mels.min(13),
            ..MfccConfig::default()
        };
        Ok(mel_filterbank(&cfg)?.concat())
    }
}

fn js(e: digitrec::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct MfccView {
    inner: demo::Heatmap,
}

#[wasm_bindgen]
impl MfccView {
    #[wasm_bindgen(getter)]
    pub fn frames(&self) -> usize {
        self.inner.frames
    }

    #[wasm_bindgen(getter)]
    pub fn coeffs(&self) -> usize {
        self.inner.coeffs
    }

    pub fn values(&self) -> Vec<f64> {
        self.inner.values.clone()
    }

    pub fn samples(&self) -> Vec<f64> {
        self.inner.samples.clone()
    }
}

#[wasm_bindgen(js_name = mfccHeatmap)]
pub fn mfcc_heatmap(digit: u8, seed: u32, kind: &str, amount: f64) -> Result<MfccView, JsError> {
    demo::heatmap(digit, seed as u64, kind, amount)
        .map(|inner| MfccView { inner })
        .map_err(js)
}

#[wasm_bindgen]
pub struct AugmentView {
    inner: demo::Augmented,
}

#[wasm_bindgen]
impl AugmentView {
    pub fn original(&self) -> Vec<f64> {
        self.inner.original.clone()
    }

    pub fn augmented(&self) -> Vec<f64> {
        self.inner.augmented.clone()
    }
}

#[wasm_bindgen(js_name = augmentWaveform)]
pub fn augment_waveform(digit: u8, seed: u32, kind: &str, amount: f64) -> Result<AugmentView, JsError> {
    demo::augment(digit, seed as u64, kind, amount)
        .map(|inner| AugmentView { inner })
        .map_err(js)
}

#[wasm_bindgen(js_name = melFilterbank)]
pub fn mel_filterbank(n_mels: usize, nfft: usize, fmax: f64) -> Result<Vec<f64>, JsError> {
    demo::filterbank(n_mels, nfft, fmax).map_err(js)
}
