//! Synthetic infrared scenes: Gaussian point targets on smooth clutter, plus
//! binary PGM (P5) I/O and the on-disk dataset layout.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub num_targets: usize,
    pub target_sigma_range: [f64; 2],
    pub target_amplitude_range: [f64; 2],
    /// Box blur radius of the clutter field in pixels.
    pub clutter_smoothness: usize,
    /// Peak-to-peak clutter level after rescaling.
    pub clutter_level: f64,
    pub noise_std: f64,
    pub seed: u64,
    /// Fixed `(x, y)` target centers; overrides random placement.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub centers: Option<Vec<(usize, usize)>>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 64,
            height: 64,
            num_targets: 3,
            target_sigma_range: [0.5, 2.0],
            target_amplitude_range: [0.3, 1.0],
            clutter_smoothness: 3,
            clutter_level: 0.3,
            noise_std: 0.02,
            seed: 0,
            centers: None,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let [s0, s1] = self.target_sigma_range;
        let [a0, a1] = self.target_amplitude_range;
        if self.width == 0 || self.height == 0 {
            return Err(Error::contract("scene extents must be positive"));
        }
        if !(s0 > 0.0 && s0 <= s1) || !(a0 > 0.0 && a0 <= a1) {
            return Err(Error::contract("sigma and amplitude ranges must be positive and ordered"));
        }
        if !(self.noise_std >= 0.0) || !(self.clutter_level >= 0.0) {
            return Err(Error::contract("noise and clutter levels must be ≥ 0"));
        }
        if let Some(c) = &self.centers {
            if c.len() != self.num_targets {
                return Err(Error::contract(format!(
                    "{} centers for {} targets",
                    c.len(),
                    self.num_targets
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub x: usize,
    pub y: usize,
    pub sigma: f64,
    pub amplitude: f64,
}

impl Target {
    fn value(&self, x: usize, y: usize) -> f64 {
        let dx = x as f64 - self.x as f64;
        let dy = y as f64 - self.y as f64;
        self.amplitude * (-(dx * dx + dy * dy) / (2.0 * self.sigma * self.sigma)).exp()
    }

    /// Pixels farther than this from the center are below 1% of the peak.
    fn margin(&self) -> usize {
        (3.0 * self.sigma).ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// `1×H×W`, values in `[0, 1]`.
    pub image: Tensor<f64>,
    /// `1×H×W`, values in `{0, 1}`.
    pub mask: Tensor<f64>,
    pub targets: Vec<Target>,
}

impl Scene {
    /// `(row, col)` centers of the generating Gaussians.
    pub fn target_centroids(&self) -> Vec<(f64, f64)> {
        self.targets.iter().map(|t| (t.y as f64, t.x as f64)).collect()
    }

    /// Image and mask with a leading batch axis: `1×1×H×W`.
    pub fn batched(&self) -> (Tensor<f64>, Tensor<f64>) {
        let [_, h, w] = self.image.shape()[..] else { unreachable!() };
        (
            self.image.clone().reshape(&[1, 1, h, w]).expect("same size"),
            self.mask.clone().reshape(&[1, 1, h, w]).expect("same size"),
        )
    }
}

fn box_blur(src: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    if r == 0 {
        return src.to_vec();
    }
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                let (c, len) = if horizontal { (x, w) } else { (y, h) };
                let lo = c.saturating_sub(r);
                let hi = (c + r).min(len - 1);
                let s: f64 = (lo..=hi)
                    .map(|i| if horizontal { src[y * w + i] } else { src[i * w + x] })
                    .sum();
                out[y * w + x] = s / (hi - lo + 1) as f64;
            }
        }
        out
    };
    pass(&pass(src, true), false)
}

fn place<R: Rng>(spec: &SceneSpec, rng: &mut R) -> Result<Vec<Target>> {
    let [s0, s1] = spec.target_sigma_range;
    let [a0, a1] = spec.target_amplitude_range;
    let mut targets: Vec<Target> = Vec::with_capacity(spec.num_targets);
    for i in 0..spec.num_targets {
        let sigma = rng.random_range(s0..=s1);
        let amplitude = rng.random_range(a0..=a1);
        let probe = Target { x: 0, y: 0, sigma, amplitude };
        let m = probe.margin();
        if let Some(centers) = &spec.centers {
            let (x, y) = centers[i];
            if x < m || y < m || x + m >= spec.width || y + m >= spec.height {
                return Err(Error::Generation(format!(
                    "forced center ({x}, {y}) is too close to the border"
                )));
            }
            targets.push(Target { x, y, ..probe });
            continue;
        }
        if 2 * m >= spec.width || 2 * m >= spec.height {
            return Err(Error::Generation(format!(
                "a target with sigma {sigma:.2} does not fit in {}×{}",
                spec.width, spec.height
            )));
        }
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS {
            let x = rng.random_range(m..spec.width - m);
            let y = rng.random_range(m..spec.height - m);
            let clear = targets.iter().all(|t| {
                let d = (t.x as f64 - x as f64).hypot(t.y as f64 - y as f64);
                d >= 3.0 * (t.sigma + sigma) + 2.0
            });
            if clear {
                targets.push(Target { x, y, ..probe });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not place target {} of {} after {MAX_ATTEMPTS} attempts",
                i + 1,
                spec.num_targets
            )));
        }
    }
    Ok(targets)
}

/// Renders a scene; identical specs give bit-identical scenes.
pub fn generate(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let targets = place(spec, &mut rng)?;

    let raw: Vec<f64> = (0..w * h).map(|_| rng.random::<f64>()).collect();
    let mut clutter = box_blur(&raw, w, h, spec.clutter_smoothness);
    let lo = clutter.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = clutter.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    for v in &mut clutter {
        *v = (*v - lo) / span * spec.clutter_level;
    }

    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::contract(e.to_string()))?;
    let mut image = vec![0.0; w * h];
    let mut mask = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut v = clutter[i];
            for t in &targets {
                let g = t.value(x, y);
                v += g;
                if g > 0.5 * t.amplitude {
                    mask[i] = 1.0;
                }
            }
            v += noise.sample(&mut rng);
            image[i] = v.clamp(0.0, 1.0);
        }
    }
    Ok(Scene {
        image: Tensor::new(&[1, h, w], image)?,
        mask: Tensor::new(&[1, h, w], mask)?,
        targets,
    })
}

/// A P5 grayscale image with raw samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

impl Pgm {
    /// Quantizes values in `[0, 1]` (clamped) to `maxval` levels.
    pub fn from_unit(width: usize, height: usize, values: &[f64], maxval: u16) -> Result<Self> {
        if values.len() != width * height || maxval == 0 {
            return Err(Error::contract(format!(
                "{} values for {width}×{height} at maxval {maxval}",
                values.len()
            )));
        }
        let m = maxval as f64;
        let samples = values.iter().map(|v| (v.clamp(0.0, 1.0) * m).round() as u16).collect();
        Ok(Pgm {
            width,
            height,
            maxval,
            samples,
        })
    }

    /// Samples divided by `maxval`.
    pub fn to_unit(&self) -> Vec<f64> {
        let m = self.maxval as f64;
        self.samples.iter().map(|&s| s as f64 / m).collect()
    }

    pub fn to_tensor(&self) -> Tensor<f64> {
        Tensor::new(&[1, 1, self.height, self.width], self.to_unit()).expect("size checked on parse")
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        if self.maxval > 255 {
            for s in &self.samples {
                out.extend_from_slice(&s.to_be_bytes());
            }
        } else {
            out.extend(self.samples.iter().map(|&s| s as u8));
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let fmt = |offset: usize, msg: String| Error::Format { offset, msg };
        if bytes.len() < 2 || &bytes[..2] != b"P5" {
            return Err(fmt(0, "not a binary PGM (expected magic P5)".into()));
        }
        let mut pos = 2;
        let mut fields = [0usize; 3];
        for (n, field) in fields.iter_mut().enumerate() {
            // whitespace and comments before each number
            loop {
                match bytes.get(pos) {
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(b'#') => {
                        while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                            pos += 1;
                        }
                    }
                    _ => break,
                }
            }
            let start = pos;
            while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
                pos += 1;
            }
            if start == pos {
                return Err(fmt(start, format!("expected header field {}", n + 1)));
            }
            *field = std::str::from_utf8(&bytes[start..pos])
                .expect("ascii digits")
                .parse()
                .map_err(|_| fmt(start, "header number out of range".into()))?;
        }
        let [width, height, maxval] = fields;
        if width == 0 || height == 0 {
            return Err(fmt(pos, "zero image extent".into()));
        }
        if maxval == 0 || maxval > 65535 {
            return Err(fmt(pos, format!("maxval {maxval} outside 1..=65535")));
        }
        if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(fmt(pos, "missing whitespace after maxval".into()));
        }
        pos += 1;
        let bpp = if maxval > 255 { 2 } else { 1 };
        let need = width * height * bpp;
        let payload = &bytes[pos..];
        if payload.len() < need {
            return Err(fmt(
                bytes.len(),
                format!("truncated payload: {} of {need} bytes", payload.len()),
            ));
        }
        let samples: Vec<u16> = if bpp == 2 {
            payload[..need].chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
        } else {
            payload[..need].iter().map(|&b| b as u16).collect()
        };
        if let Some(i) = samples.iter().position(|&s| s as usize > maxval) {
            return Err(fmt(pos + i * bpp, format!("sample exceeds maxval {maxval}")));
        }
        Ok(Pgm {
            width,
            height,
            maxval: maxval as u16,
            samples,
        })
    }
}

pub fn read_pgm(path: &Path) -> Result<Pgm> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Pgm::decode(&bytes)
}

pub fn write_pgm(path: &Path, img: &Pgm) -> Result<()> {
    std::fs::write(path, img.encode()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub image: String,
    pub mask: String,
    pub seed: u64,
    pub targets: Vec<Target>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: SceneSpec,
    pub items: Vec<ManifestItem>,
}

/// Seed of scene `i` in a dataset generated from `seed`.
pub fn item_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add(i as u64)
}

/// Writes `images/NNNN.pgm` (16-bit), `masks/NNNN.pgm` (8-bit) and
/// `manifest.json` under `dir`.
pub fn write_dataset(dir: &Path, spec: &SceneSpec, count: usize) -> Result<Manifest> {
    let images = dir.join("images");
    let masks = dir.join("masks");
    for d in [&images, &masks] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut items = Vec::with_capacity(count);
    for i in 0..count {
        let seed = item_seed(spec.seed, i);
        let scene = generate(&SceneSpec { seed, ..spec.clone() })?;
        let name = format!("{i:04}.pgm");
        let (w, h) = (spec.width, spec.height);
        write_pgm(&images.join(&name), &Pgm::from_unit(w, h, scene.image.data(), 65535)?)?;
        write_pgm(&masks.join(&name), &Pgm::from_unit(w, h, scene.mask.data(), 255)?)?;
        items.push(ManifestItem {
            image: format!("images/{name}"),
            mask: format!("masks/{name}"),
            seed,
            targets: scene.targets,
        });
    }
    let manifest = Manifest {
        spec: spec.clone(),
        items,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads every `(image, mask)` pair listed in the manifest as `1×1×H×W`
/// tensors; masks are binarized at half scale.
pub fn read_dataset(dir: &Path) -> Result<Vec<(Tensor<f64>, Tensor<f64>)>> {
    let manifest = read_manifest(dir)?;
    manifest
        .items
        .iter()
        .map(|it| {
            let img = read_pgm(&dir.join(&it.image))?.to_tensor();
            let mask = read_pgm(&dir.join(&it.mask))?.to_tensor().map(|v| if v > 0.5 { 1.0 } else { 0.0 });
            if img.shape() != mask.shape() {
                return Err(Error::dim(format!("{} and {} differ in size", it.image, it.mask)));
            }
            Ok((img, mask))
        })
        .collect()
}
