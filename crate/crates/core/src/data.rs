//! Dataset manifests, directory ingestion and the synthetic digit corpus.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::audio::{self, write_wav, AudioClip};
use crate::augmentation::{AugmentationSpec, NoiseBank, NoiseCategory};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub const N_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("unknown split `{other}`"))),
        }
    }
}

/// One line of a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Relative to the manifest root, `/`-separated.
    pub path: String,
    pub label: u8,
    /// Identifies the original utterance; augmented copies share it.
    pub source_id: String,
    #[serde(default)]
    pub augmentation: Option<AugmentationSpec>,
    #[serde(default)]
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn class_counts(&self) -> [usize; N_CLASSES] {
        let mut counts = [0; N_CLASSES];
        for e in &self.entries {
            counts[usize::from(e.label)] += 1;
        }
        counts
    }

    /// Entries assigned to `split`, same root.
    pub fn filter_split(&self, split: Split) -> Manifest {
        Manifest {
            root: self.root.clone(),
            entries: self.entries.iter().filter(|e| e.split == Some(split)).cloned().collect(),
        }
    }

    pub fn has_splits(&self) -> bool {
        self.entries.iter().any(|e| e.split.is_some())
    }

    /// Checks labels, path uniqueness and file existence.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if usize::from(e.label) >= N_CLASSES {
                return Err(Error::LabelOutOfRange {
                    label: usize::from(e.label),
                    classes: N_CLASSES,
                }
                .in_entry(&e.path));
            }
            if !seen.insert(e.path.as_str()) {
                return Err(Error::InvalidConfig(format!("duplicate manifest path {}", e.path)));
            }
            let p = self.resolve(e);
            if !p.is_file() {
                return Err(Error::io(p, std::io::Error::from(std::io::ErrorKind::NotFound)));
            }
        }
        Ok(())
    }
}

pub fn save_manifest(path: impl AsRef<Path>, manifest: &Manifest) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for entry in &manifest.entries {
        serde_json::to_writer(&mut w, entry)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a JSONL manifest; entry paths resolve against the file's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut manifest = Manifest::new(root);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if usize::from(entry.label) >= N_CLASSES {
            return Err(parse_err(format!("label {} is not a digit", entry.label)));
        }
        manifest.entries.push(entry);
    }
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelRule {
    /// `…/7/take1.wav` → 7
    ParentFolder,
    /// `7_speaker3_rep2.wav` → 7
    FilenamePrefix,
}

fn label_for(path: &Path, rule: LabelRule) -> Option<u8> {
    let token = match rule {
        LabelRule::ParentFolder => path.parent()?.file_name()?.to_str()?.to_string(),
        LabelRule::FilenamePrefix => {
            let stem = path.file_stem()?.to_str()?;
            stem.split(['_', '-', '.', ' ']).next()?.to_string()
        }
    };
    match token.as_bytes() {
        [d @ b'0'..=b'9'] => Some(d - b'0'),
        _ => None,
    }
}

fn is_wav(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

fn relative_string(path: &Path, root: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Finds every `.wav` under `dir` (sorted) and labels it by `rule`.
pub fn scan_directory(dir: impl AsRef<Path>, rule: LabelRule) -> Result<Manifest> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::io(dir, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    let mut manifest = Manifest::new(dir);
    let mut unlabeled = Vec::new();
    for item in WalkDir::new(dir).sort_by_file_name() {
        let item = item.map_err(|e| {
            let path = e.path().unwrap_or(dir).to_path_buf();
            Error::io(path, e.into())
        })?;
        let path = item.path();
        if !item.file_type().is_file() || !is_wav(path) {
            continue;
        }
        let rel = relative_string(path, dir);
        match label_for(path, rule) {
            Some(label) => {
                let source_id = rel.rsplit_once('.').map_or(rel.as_str(), |(s, _)| s).to_string();
                manifest.entries.push(ManifestEntry {
                    path: rel,
                    label,
                    source_id,
                    augmentation: None,
                    split: None,
                });
            }
            None => unlabeled.push(rel),
        }
    }
    if !unlabeled.is_empty() {
        return Err(Error::UnlabeledFile(unlabeled));
    }
    if manifest.is_empty() {
        return Err(Error::NoFilesFound(dir.to_path_buf()));
    }
    Ok(manifest)
}

/// Loads user-supplied noise recordings from `dir/<category>/*.wav`.
pub fn load_noise_dir(dir: impl AsRef<Path>) -> Result<NoiseBank> {
    let dir = dir.as_ref();
    let mut bank = NoiseBank::synthetic();
    for category in NoiseCategory::ALL {
        let sub = dir.join(category.name());
        if !sub.is_dir() {
            continue;
        }
        for item in WalkDir::new(&sub).sort_by_file_name() {
            let item = item.map_err(|e| Error::io(&sub, e.into()))?;
            if item.file_type().is_file() && is_wav(item.path()) {
                let clip = audio::read_wav(item.path())?;
                if !clip.is_empty() {
                    bank.insert(category, clip);
                }
            }
        }
    }
    Ok(bank)
}

// ---------------------------------------------------------------------------
// Synthetic digits
// ---------------------------------------------------------------------------

pub const SYNTH_F0_HZ: f64 = 120.0;

/// Nominal formants (F1, F2) of the synthetic token for `class`.
pub fn formants(class: u8) -> (f64, f64) {
    let c = f64::from(class);
    (300.0 + 60.0 * c, 900.0 + 120.0 * c)
}

/// Two-pole resonator with unit gain at its centre frequency.
struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bandwidth: f64, fs: f64) -> Self {
        let r = (-PI * bandwidth / fs).exp();
        let theta = 2.0 * PI * freq / fs;
        let a1 = 2.0 * r * theta.cos();
        let a2 = -r * r;
        // |1 - a1 e^{-jθ} - a2 e^{-2jθ}| at the centre
        let re = 1.0 - a1 * theta.cos() - a2 * (2.0 * theta).cos();
        let im = a1 * theta.sin() + a2 * (2.0 * theta).sin();
        Self {
            a1,
            a2,
            gain: (re * re + im * im).sqrt(),
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// A vowel-like token for `class`: a 120 Hz pulse train through parallel
/// resonators at the class formants, with per-token jitter drawn from `rng`.
pub fn synth_digit_clip(class: u8, rate: u32, rng: &mut Rng) -> Result<AudioClip> {
    if usize::from(class) >= N_CLASSES {
        return Err(Error::LabelOutOfRange {
            label: usize::from(class),
            classes: N_CLASSES,
        });
    }
    let fs = f64::from(rate);
    let duration = rng.random_range(0.4..=0.7);
    let (f1, f2) = formants(class);
    let f1 = f1 * (1.0 + rng.random_range(-0.03..=0.03));
    let f2 = f2 * (1.0 + rng.random_range(-0.03..=0.03));
    let amp = 0.5 * (1.0 + rng.random_range(-0.1..=0.1));
    let len = (duration * fs).round() as usize;

    let mut r1 = Resonator::new(f1, 80.0, fs);
    let mut r2 = Resonator::new(f2, 100.0, fs);
    let period = fs / SYNTH_F0_HZ;
    let mut phase = period;
    let attack = 0.03 * fs;
    let release = 0.05 * fs;
    let mut samples: Vec<f64> = (0..len)
        .map(|n| {
            phase += 1.0;
            let pulse = if phase >= period {
                phase -= period;
                1.0
            } else {
                0.0
            };
            let v = r1.step(pulse) + r2.step(pulse);
            let t = n as f64;
            let env = if t < attack {
                0.5 - 0.5 * (PI * t / attack).cos()
            } else if t > len as f64 - release {
                0.5 - 0.5 * (PI * (len as f64 - t) / release).cos()
            } else {
                1.0
            };
            v * env
        })
        .collect();
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    samples.iter_mut().for_each(|v| *v *= amp / peak);
    AudioClip::new(samples, rate)
}

/// Writes `n_per_class` tokens per digit to `out_dir/<digit>/<digit>_<i>.wav`
/// and saves `out_dir/manifest.jsonl`.
pub fn synth_digit_dataset(n_per_class: usize, rate: u32, seed: u64, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    if n_per_class == 0 {
        return Err(Error::InvalidConfig("n_per_class must be at least 1".into()));
    }
    let out_dir = out_dir.as_ref();
    let mut manifest = Manifest::new(out_dir);
    for class in 0..N_CLASSES as u8 {
        let class_dir = out_dir.join(class.to_string());
        std::fs::create_dir_all(&class_dir).map_err(|e| Error::io(&class_dir, e))?;
        for i in 0..n_per_class {
            let mut rng = rng::stream(seed, "synth-digit", (u64::from(class) << 32) | i as u64);
            let clip = synth_digit_clip(class, rate, &mut rng)?;
            let source_id = format!("{class}_{i:04}");
            let path = format!("{class}/{source_id}.wav");
            write_wav(out_dir.join(&path), &clip)?;
            manifest.entries.push(ManifestEntry {
                path,
                label: class,
                source_id,
                augmentation: None,
                split: None,
            });
        }
    }
    save_manifest(out_dir.join("manifest.jsonl"), &manifest)?;
    Ok(manifest)
}
