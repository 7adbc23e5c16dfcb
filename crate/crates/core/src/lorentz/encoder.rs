//! The hyperbolic encoder branch: input lifting, Lorentz convolution,
//! normalization and activation, geometric attention and the GA-LRCM
//! residual block.
//!
//! Every operation here works on the spatial channels only and then rebuilds
//! the temporal channel from them, so outputs satisfy the manifold
//! constraint by construction (up to rounding of the stored time value).

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{Conv, InstanceNorm, LEAKY_SLOPE};
use crate::lorentz::geometry::{residual, Curvature, LorentzFeatureMap};
use crate::numerics::{Bound, ParamStore, Real, Tape, Var};

/// A Lorentz feature map living on a tape: `B×(1+C)×H×W`, channel 0
/// temporal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorentzVar {
    pub var: Var,
    pub k: Curvature,
}

impl LorentzVar {
    pub fn spatial_channels<T: Real>(&self, tape: &Tape<T>) -> usize {
        tape.shape(self.var)[1] - 1
    }

    pub fn time<T: Real>(&self, tape: &mut Tape<T>) -> Result<Var> {
        tape.narrow(self.var, 1, 0, 1)
    }

    pub fn space<T: Real>(&self, tape: &mut Tape<T>) -> Result<Var> {
        let c = self.spatial_channels(tape);
        tape.narrow(self.var, 1, 1, c)
    }

    /// Rebuilds the temporal channel for spatial channels `s`.
    pub fn from_spatial<T: Real>(tape: &mut Tape<T>, s: Var, k: Curvature) -> Result<Self> {
        Ok(LorentzVar {
            var: tape.reconstruct_time(s, k.k())?,
            k,
        })
    }

    /// Largest `|⟨x,x⟩_L + k|` over all pixels of the current value.
    pub fn max_residual<T: Real>(&self, tape: &Tape<T>) -> f64 {
        let v = tape.value(self.var);
        let [_, c1, h, w] = v.dims4();
        let hw = h * w;
        let k = self.k.k();
        let mut worst = 0.0f64;
        for plane in v.data().chunks(c1 * hw) {
            for p in 0..hw {
                let s = (1..c1).map(|ch| plane[ch * hw + p].f64());
                worst = worst.max(residual(plane[p].f64(), s, k));
            }
        }
        worst
    }

    pub fn min_time<T: Real>(&self, tape: &Tape<T>) -> f64 {
        let v = tape.value(self.var);
        let [_, c1, h, w] = v.dims4();
        v.data()
            .chunks(c1 * h * w)
            .flat_map(|b| b[..h * w].iter())
            .map(|x| x.f64())
            .fold(f64::INFINITY, f64::min)
    }

    /// Copies the value off the tape, validating the manifold constraint.
    pub fn to_map<T: Real>(&self, tape: &Tape<T>) -> Result<LorentzFeatureMap<T>> {
        LorentzFeatureMap::new(tape.value(self.var).clone(), self.k)
    }
}

/// Euclidean convolution over all `1+C` input channels producing spatial
/// channels, followed by temporal reconstruction.
pub fn lorentz_conv<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound,
    conv: &Conv,
    x: LorentzVar,
) -> Result<LorentzVar> {
    if tape.shape(x.var)[1] != conv.in_ch {
        return Err(Error::dim(format!(
            "lorentz_conv expects {} input channels (time + space), got {}",
            conv.in_ch,
            tape.shape(x.var)[1]
        )));
    }
    let s = conv.forward(tape, p, x.var)?;
    LorentzVar::from_spatial(tape, s, x.k)
}

/// Instance normalization of the spatial channels, then temporal
/// reconstruction.
pub fn lorentz_norm<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound,
    norm: &InstanceNorm,
    x: LorentzVar,
) -> Result<LorentzVar> {
    let s = x.space(tape)?;
    let s = norm.forward(tape, p, s)?;
    LorentzVar::from_spatial(tape, s, x.k)
}

/// Leaky ReLU (slope 0.1) on the spatial channels, then temporal
/// reconstruction.
pub fn manifold_activation<T: Real>(tape: &mut Tape<T>, x: LorentzVar) -> Result<LorentzVar> {
    let s = x.space(tape)?;
    let s = tape.leaky_relu(s, LEAKY_SLOPE)?;
    LorentzVar::from_spatial(tape, s, x.k)
}

/// Lorentz input block: a learned 3×3 lift of the image into spatial
/// channels plus a reconstructed time channel.
#[derive(Debug, Clone)]
pub struct Lib {
    pub conv: Conv,
}

impl Lib {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if in_ch == 0 || width == 0 {
            return Err(Error::dim("input lifting needs at least one channel in and out"));
        }
        Ok(Lib {
            conv: Conv::new(store, name, in_ch, width, 3, 1, 1.0, rng),
        })
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
        k: Curvature,
    ) -> Result<LorentzVar> {
        let c = tape.shape(x).get(1).copied().unwrap_or(0);
        if c != self.conv.in_ch {
            return Err(Error::dim(format!(
                "input lifting expects {} channels, got {c}",
                self.conv.in_ch
            )));
        }
        let s = self.conv.forward(tape, p, x)?;
        LorentzVar::from_spatial(tape, s, k)
    }
}

/// Channel attention from temporal and spatial statistics:
/// `α = σ(W₂ ReLU(W₁ [GAP(t), GAP(s)]))`.
#[derive(Debug, Clone)]
pub struct GeometricAttention {
    pub w1: Conv,
    pub w2: Conv,
}

impl GeometricAttention {
    /// `channels` is the spatial width of the map being attended; the
    /// hidden width is `max(1, channels / ratio)`.
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        ratio: usize,
        rng: &mut R,
    ) -> Self {
        let hidden = (channels / ratio.max(1)).max(1);
        GeometricAttention {
            w1: Conv::new(store, &format!("{name}.w1"), 1 + channels, hidden, 1, 1, 2f64.sqrt(), rng),
            w2: Conv::new(store, &format!("{name}.w2"), hidden, channels, 1, 1, 1.0, rng),
        }
    }

    /// Returns `α` with shape `B×C×1×1`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: LorentzVar) -> Result<Var> {
        if tape.shape(x.var)[1] != self.w1.in_ch {
            return Err(Error::dim(format!(
                "attention sized for {} spatial channels, map has {}",
                self.w1.in_ch - 1,
                tape.shape(x.var)[1] - 1
            )));
        }
        let t = x.time(tape)?;
        let s = x.space(tape)?;
        let gt = tape.gap(t)?;
        let gs = tape.gap(s)?;
        let stats = tape.concat(&[gt, gs], 1)?;
        let h = self.w1.forward(tape, p, stats)?;
        let h = tape.relu(h)?;
        let a = self.w2.forward(tape, p, h)?;
        tape.sigmoid(a)
    }
}

/// Intermediate values of one GA-LRCM pass.
#[derive(Debug, Clone, Copy)]
pub struct GaLrcmTrace {
    pub main: LorentzVar,
    pub shortcut: LorentzVar,
    pub alpha: Var,
    pub out: LorentzVar,
}

/// Geometric-attention-guided Lorentz residual block. Halves the spatial
/// extent and maps `C_in` to `C_out` spatial channels.
#[derive(Debug, Clone)]
pub struct GaLrcm {
    pub conv1: Conv,
    pub norm: InstanceNorm,
    pub conv2: Conv,
    pub attention: GeometricAttention,
    pub shortcut: Conv,
}

impl GaLrcm {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        ratio: usize,
        rng: &mut R,
    ) -> Self {
        GaLrcm {
            conv1: Conv::new(store, &format!("{name}.conv1"), 1 + c_in, c_in, 3, 1, 1.0, rng),
            norm: InstanceNorm::new(store, &format!("{name}.norm"), c_in),
            conv2: Conv::new(store, &format!("{name}.conv2"), 1 + c_in, c_out, 3, 2, 1.0, rng),
            attention: GeometricAttention::new(store, &format!("{name}.attn"), c_out, ratio, rng),
            shortcut: Conv::new(
                store,
                &format!("{name}.shortcut"),
                1 + c_in,
                c_out,
                1,
                2,
                0.5f64.sqrt(),
                rng,
            ),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: LorentzVar) -> Result<LorentzVar> {
        Ok(self.trace(tape, p, x)?.out)
    }

    pub fn trace<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: LorentzVar) -> Result<GaLrcmTrace> {
        let m = lorentz_conv(tape, p, &self.conv1, x)?;
        let m = lorentz_norm(tape, p, &self.norm, m)?;
        let m = manifold_activation(tape, m)?;
        let main = lorentz_conv(tape, p, &self.conv2, m)?;
        let shortcut = lorentz_conv(tape, p, &self.shortcut, x)?;
        if tape.shape(main.var) != tape.shape(shortcut.var) {
            return Err(Error::dim(format!(
                "shortcut {:?} not aligned with main branch {:?}",
                tape.shape(shortcut.var),
                tape.shape(main.var)
            )));
        }
        let alpha = self.attention.forward(tape, p, main)?;
        let out = fuse_spatial(tape, main, shortcut, alpha)?;
        Ok(GaLrcmTrace {
            main,
            shortcut,
            alpha,
            out,
        })
    }
}

/// `s_f = α ⊙ s_m + s_p`, `t_f = √(k + ‖s_f‖²)`.
pub fn fuse_spatial<T: Real>(
    tape: &mut Tape<T>,
    main: LorentzVar,
    shortcut: LorentzVar,
    alpha: Var,
) -> Result<LorentzVar> {
    let sm = main.space(tape)?;
    let sp = shortcut.space(tape)?;
    let weighted = tape.mul(sm, alpha)?;
    let sf = tape.add(weighted, sp)?;
    LorentzVar::from_spatial(tape, sf, main.k)
}

/// Input lifting followed by four GA-LRCM blocks, producing five scales.
#[derive(Debug, Clone)]
pub struct LorentzEncoder {
    pub lib: Lib,
    pub blocks: Vec<GaLrcm>,
    pub k: Curvature,
}

impl LorentzEncoder {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        widths: &[usize; 5],
        ratio: usize,
        k: Curvature,
        rng: &mut R,
    ) -> Result<Self> {
        let lib = Lib::new(store, "lorentz.lib", 1, widths[0], rng)?;
        let blocks = (0..4)
            .map(|i| {
                GaLrcm::new(
                    store,
                    &format!("lorentz.block{}", i + 1),
                    widths[i],
                    widths[i + 1],
                    ratio,
                    rng,
                )
            })
            .collect();
        Ok(LorentzEncoder { lib, blocks, k })
    }

    /// `x` is `B×1×H×W` with `H` and `W` divisible by 16.
    pub fn encode<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Vec<LorentzVar>> {
        check_divisible(tape.shape(x))?;
        let mut out = Vec::with_capacity(5);
        let mut cur = self.lib.forward(tape, p, x, self.k)?;
        out.push(cur);
        for block in &self.blocks {
            cur = block.forward(tape, p, cur)?;
            out.push(cur);
        }
        Ok(out)
    }
}

pub(crate) fn check_divisible(shape: &[usize]) -> Result<()> {
    match shape {
        [_, _, h, w] if h % 16 == 0 && w % 16 == 0 => Ok(()),
        [_, _, h, w] => Err(Error::dim(format!(
            "input extents {h}x{w} must be divisible by 16"
        ))),
        _ => Err(Error::dim(format!("expected B×C×H×W input, got {shape:?}"))),
    }
}
