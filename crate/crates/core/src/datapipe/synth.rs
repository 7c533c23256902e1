//! Synthetic multi-source images with a planted spurious cue.
//!
//! Every image starts as clamped Gaussian noise. Positives carry a smooth
//! blob at the image center whose strength varies per image (the causal
//! signal). Independently, a square watermark is stamped in a corner with
//! probability `stamp_s · (1 + ρ_s·(2y − 1)) / 2`, so with `ρ_s > 0` the
//! watermark predicts the label inside source `s`. Sources with different
//! stamp rates carry the watermark at different overall frequencies, which
//! is what lets a source discriminator latch onto it.
//!
//! By default all sources stamp the same corner. With per-source corners a
//! network can tell the corners apart through border effects, and an
//! adversary then reshapes each corner's response separately instead of
//! dropping the watermark.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::pgm::{self, GrayImage};
use super::{Dataset, Manifest, SourcedExample};
use crate::error::{Error, Result};

pub const BLOB_SIZE: usize = 8;
pub const WATERMARK_SIZE: usize = 6;
const BLOB_WIDTH: f64 = 2.5;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub sources: usize,
    /// Examples per source in each of the train and test splits.
    pub n: usize,
    pub size: usize,
    /// Peak amplitude of the causal blob at full severity.
    pub causal_amplitude: f64,
    pub spurious_amplitude: f64,
    /// Watermark–label correlation per source, each in `[-1, 1]`.
    pub rho: Vec<f64>,
    /// Fraction of a source's images eligible for its watermark, each in `[0, 1]`.
    pub stamp: Vec<f64>,
    /// Positive-case blob strength is drawn uniformly from `[severity_min, 1]`.
    pub severity_min: f64,
    /// Corner shared by every source's watermark; `None` gives source `s`
    /// corner `s mod 4`.
    pub corner: Option<usize>,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            sources: 4,
            n: 1000,
            size: 32,
            causal_amplitude: 0.35,
            spurious_amplitude: 0.6,
            rho: vec![0.95, 0.95, 0.95, 0.0],
            stamp: vec![1.0, 0.5, 0.0, 1.0],
            severity_min: 0.2,
            corner: Some(0),
            sigma: 0.1,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.sources == 0 || self.n == 0 {
            return bad("sources and n must be positive".into());
        }
        if self.size % 8 != 0 || self.size < BLOB_SIZE.max(2 * WATERMARK_SIZE) {
            return bad(format!("size {} must be a multiple of 8 and at least 16", self.size));
        }
        if self.rho.len() != self.sources || self.stamp.len() != self.sources {
            return bad(format!(
                "rho and stamp need one entry per source ({}), got {} and {}",
                self.sources,
                self.rho.len(),
                self.stamp.len()
            ));
        }
        if let Some(r) = self.rho.iter().find(|r| !(r.abs() <= 1.0)) {
            return bad(format!("rho {r} outside [-1, 1]"));
        }
        if let Some(s) = self.stamp.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return bad(format!("stamp {s} outside [0, 1]"));
        }
        if !(self.causal_amplitude >= 0.0 && self.spurious_amplitude >= 0.0) {
            return bad("amplitudes must be >= 0".into());
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma {} must be finite and >= 0", self.sigma));
        }
        if let Some(c) = self.corner.filter(|&c| c > 3) {
            return bad(format!("corner {c} outside 0..=3"));
        }
        if !(0.0..=1.0).contains(&self.severity_min) {
            return bad(format!("severity_min {} outside [0, 1]", self.severity_min));
        }
        Ok(())
    }

    /// Corner index used for source `s`'s watermark.
    pub fn corner_of(&self, s: usize) -> usize {
        self.corner.unwrap_or(s % 4)
    }

    pub fn source_name(s: usize) -> String {
        format!("src{s}")
    }

    pub fn source_names(&self) -> Vec<String> {
        (0..self.sources).map(Self::source_name).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_spec(&text).map_err(|(line, msg)| Error::Parse { path: path.to_path_buf(), line, msg })
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse {v:?}"))
        }
        fn list(v: &str) -> std::result::Result<Vec<f64>, String> {
            v.split(',').map(|x| num(x.trim())).collect()
        }
        match key {
            "sources" => self.sources = num(value)?,
            "n" => self.n = num(value)?,
            "size" => self.size = num(value)?,
            "a_c" => self.causal_amplitude = num(value)?,
            "a_sp" => self.spurious_amplitude = num(value)?,
            "rho" => self.rho = list(value)?,
            "stamp" => self.stamp = list(value)?,
            "severity_min" => self.severity_min = num(value)?,
            "corner" if value == "per_source" => self.corner = None,
            "corner" => self.corner = Some(num(value)?),
            "sigma" => self.sigma = num(value)?,
            "seed" => self.seed = num(value)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }
}

fn parse_spec(text: &str) -> std::result::Result<SynthSpec, (usize, String)> {
    let mut spec = SynthSpec::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or((i + 1, format!("expected key=value, got {line:?}")))?;
        spec.set(k.trim(), v.trim()).map_err(|m| (i + 1, m))?;
    }
    spec.validate().map_err(|e| (0, e.to_string()))?;
    Ok(spec)
}

impl fmt::Display for SynthSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        writeln!(f, "sources={}", self.sources)?;
        writeln!(f, "n={}", self.n)?;
        writeln!(f, "size={}", self.size)?;
        writeln!(f, "a_c={}", self.causal_amplitude)?;
        writeln!(f, "a_sp={}", self.spurious_amplitude)?;
        writeln!(f, "rho={}", join(&self.rho))?;
        writeln!(f, "stamp={}", join(&self.stamp))?;
        writeln!(f, "severity_min={}", self.severity_min)?;
        match self.corner {
            Some(c) => writeln!(f, "corner={c}")?,
            None => writeln!(f, "corner=per_source")?,
        }
        writeln!(f, "sigma={}", self.sigma)?;
        writeln!(f, "seed={}", self.seed)
    }
}

/// Half-open pixel rectangle `rows × cols`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Region {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl Region {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y0..self.y1).contains(&y) && (self.x0..self.x1).contains(&x)
    }
}

/// Center square holding the causal blob.
pub fn causal_region(size: usize) -> Region {
    let o = (size - BLOB_SIZE) / 2;
    Region { y0: o, y1: o + BLOB_SIZE, x0: o, x1: o + BLOB_SIZE }
}

/// Watermark square in corner `c`: top-left, top-right, bottom-left, bottom-right for `c mod 4`.
pub fn watermark_region(size: usize, corner: usize) -> Region {
    let far = size - WATERMARK_SIZE;
    let (y0, x0) = match corner % 4 {
        0 => (0, 0),
        1 => (0, far),
        2 => (far, 0),
        _ => (far, far),
    };
    Region { y0, y1: y0 + WATERMARK_SIZE, x0, x1: x0 + WATERMARK_SIZE }
}

/// What to draw in one image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scene {
    pub source: usize,
    /// Causal blob strength in `[0, 1]`; zero for negatives.
    pub severity: f64,
    pub watermark: bool,
}

/// Renders a scene with fresh noise from `rng`.
pub fn render(spec: &SynthSpec, scene: Scene, rng: &mut impl Rng) -> GrayImage {
    let size = spec.size;
    let noise = Normal::new(0.0, spec.sigma).expect("sigma validated");
    let mut px: Vec<f64> = (0..size * size).map(|_| noise.sample(rng)).collect();
    if scene.severity > 0.0 {
        let r = causal_region(size);
        let c = (size as f64 - 1.0) / 2.0;
        let amp = spec.causal_amplitude * scene.severity;
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                let d2 = (y as f64 - c).powi(2) + (x as f64 - c).powi(2);
                px[y * size + x] += amp * (-d2 / (2.0 * BLOB_WIDTH * BLOB_WIDTH)).exp();
            }
        }
    }
    if scene.watermark {
        let r = watermark_region(size, spec.corner_of(scene.source));
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                px[y * size + x] += spec.spurious_amplitude;
            }
        }
    }
    GrayImage::from_unit(size, size, &px)
}

/// Draws the label-dependent parts of an example.
fn draw_scene(spec: &SynthSpec, source: usize, label: u8, rng: &mut impl Rng) -> Scene {
    let severity = if label == 1 { rng.random_range(spec.severity_min..=1.0) } else { 0.0 };
    let sign = if label == 1 { 1.0 } else { -1.0 };
    let p = spec.stamp[source] * (1.0 + spec.rho[source] * sign) / 2.0;
    let watermark = rng.random::<f64>() < p;
    Scene { source, severity, watermark }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One generated image with its bookkeeping.
#[derive(Clone, Debug)]
pub struct SynthItem {
    pub split: Split,
    pub source: usize,
    pub label: u8,
    pub scene: Scene,
    /// Relative path under the output directory.
    pub path: PathBuf,
    pub image: GrayImage,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generates every image of every source and split. Labels alternate so each
/// split is balanced; each (source, split) pair has its own random stream.
pub fn generate_items(spec: &SynthSpec) -> Result<Vec<SynthItem>> {
    spec.validate()?;
    let mut items = Vec::with_capacity(spec.sources * spec.n * 2);
    for s in 0..spec.sources {
        let (mut pos, mut neg) = (0usize, 0usize);
        for (k, split) in [Split::Train, Split::Test].into_iter().enumerate() {
            let mut rng = rng_for(spec.seed, 1 + 2 * s as u64 + k as u64);
            for i in 0..spec.n {
                let label = (i % 2 == 0) as u8;
                let scene = draw_scene(spec, s, label, &mut rng);
                let image = render(spec, scene, &mut rng);
                let counter = if label == 1 { &mut pos } else { &mut neg };
                *counter += 1;
                let stem = if label == 1 { "pos" } else { "neg" };
                let path = PathBuf::from(SynthSpec::source_name(s)).join(format!("{stem}_{:04}.pgm", *counter));
                items.push(SynthItem { split, source: s, label, scene, path, image });
            }
        }
    }
    Ok(items)
}

/// In-memory train and test sets, identical to what [`write_synth`] puts on disk.
pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    let mut set = Dataset { source_names: spec.source_names(), train: Vec::new(), test: Vec::new() };
    for it in generate_items(spec)? {
        let ex = SourcedExample { image: it.image.to_tensor(), label: it.label, source: it.source };
        match it.split {
            Split::Train => set.train.push(ex),
            Split::Test => set.test.push(ex),
        }
    }
    Ok(set)
}

/// Paths written by [`write_synth`].
#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
    pub spec_file: PathBuf,
}

/// Writes `train.csv`, `test.csv`, `spec.txt` and `src<k>/{pos,neg}_NNNN.pgm` under `out`.
pub fn write_synth(spec: &SynthSpec, out: impl AsRef<Path>) -> Result<SynthOutput> {
    let out = out.as_ref();
    let items = generate_items(spec)?;
    for s in 0..spec.sources {
        let dir = out.join(SynthSpec::source_name(s));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for it in &items {
        pgm::write_pgm(out.join(&it.path), &it.image)?;
        let row = (it.path.clone(), it.label, SynthSpec::source_name(it.source));
        match it.split {
            Split::Train => train.push(row),
            Split::Test => test.push(row),
        }
    }
    let result = SynthOutput {
        train_manifest: out.join("train.csv"),
        test_manifest: out.join("test.csv"),
        spec_file: out.join("spec.txt"),
    };
    Manifest::from_rows(out, train)?.write(&result.train_manifest)?;
    Manifest::from_rows(out, test)?.write(&result.test_manifest)?;
    fs::write(&result.spec_file, spec.to_string()).map_err(|e| Error::io(&result.spec_file, e))?;
    Ok(result)
}
