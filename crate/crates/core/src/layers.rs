//! Small parameterised building blocks shared by the encoders, HORL and the
//! decoder.

use rand::Rng;

use crate::error::Result;
use crate::numerics::{Bound, ParamId, ParamStore, Real, Tape, Tensor, Var};

pub const LEAKY_SLOPE: f64 = 0.1;
pub const NORM_EPS: f64 = 1e-5;
/// Init gain of convolutions that feed an instance norm. The norm makes
/// the output invariant to the weight scale, so a small scale only raises
/// the effective SGD step size.
pub const UNIT_GAIN: f64 = 0.05;

/// 2-D convolution with bias and "same"-style padding `k / 2`.
#[derive(Debug, Clone)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    /// Weights are drawn from `N(0, gain² / fan_in)`; the bias starts at 0.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_ch * kernel * kernel) as f64;
        let w = store.add(
            format!("{name}.weight"),
            Tensor::randn(&[out_ch, in_ch, kernel, kernel], gain / fan_in.sqrt(), rng),
        );
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[out_ch]));
        Conv {
            w,
            b,
            in_ch,
            out_ch,
            kernel,
            stride,
            pad: kernel / 2,
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        tape.conv2d(x, p[self.w], Some(p[self.b]), self.stride, self.pad)
    }
}

/// Per-channel instance normalization with a learnable affine map.
#[derive(Debug, Clone)]
pub struct InstanceNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl InstanceNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, ch: usize) -> Self {
        InstanceNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[ch], T::one())),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[ch])),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        tape.instance_norm(x, p[self.gamma], p[self.beta], NORM_EPS)
    }
}

/// conv3×3 → instance norm → leaky ReLU.
#[derive(Debug, Clone)]
pub struct ConvUnit {
    pub conv: Conv,
    pub norm: InstanceNorm,
}

impl ConvUnit {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        rng: &mut R,
    ) -> Self {
        ConvUnit {
            conv: Conv::new(store, &format!("{name}.conv"), in_ch, out_ch, 3, 1, UNIT_GAIN, rng),
            norm: InstanceNorm::new(store, &format!("{name}.norm"), out_ch),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = self.conv.forward(tape, p, x)?;
        let y = self.norm.forward(tape, p, y)?;
        tape.leaky_relu(y, LEAKY_SLOPE)
    }
}
