//! Finite-difference sweeps over the differentiable pieces of the network,
//! grouped the way the `gradcheck` command reports them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::NetworkConfig;
use crate::error::Result;
use crate::euclid::EuclideanEncoder;
use crate::horl::Horl;
use crate::lorentz::encoder::{lorentz_norm, manifold_activation, GaLrcm, Lib};
use crate::lorentz::{Curvature, LorentzVar};
use crate::layers::InstanceNorm;
use crate::model::{normalize_input, soft_iou_loss, LohgNet};
use crate::numerics::{gradcheck, Bound, GradcheckConfig, GradcheckReport, ParamStore, Tape, Tensor, Var};

pub const PRIMITIVE_TOL: f64 = 1e-6;
pub const BLOCK_TOL: f64 = 1e-5;
pub const E2E_TOL: f64 = 1e-4;
/// Difference step for graphs with instance-normalized conv units. Their
/// small init gain magnifies a weight step by `1/σ` at the norm output, and
/// with `h = 1e-5` some leaky ReLU input regularly lands within one step of
/// its kink.
pub const NORMALIZED_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Primitives,
    Lorentz,
    Euclid,
    Horl,
    E2e,
}

#[derive(Debug, Clone, Serialize)]
pub struct Case {
    pub suite: Suite,
    pub name: String,
    pub report: GradcheckReport,
}

/// `Σ y ⊙ w` with fixed pseudo-random weights, so every output element
/// contributes a distinct amount to the scalar.
pub fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = Tensor::randn(tape.shape(y), 1.0, &mut rng);
    let w = tape.constant(w);
    let yw = tape.mul(y, w)?;
    tape.sum(yw)
}

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Random values kept at least `gap` away from zero, for ops with a kink
/// there.
fn away_from_zero(shape: &[usize], seed: u64, gap: f64) -> Tensor<f64> {
    randn(shape, seed).map(|v| v + gap * v.signum())
}

fn positive(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::rand_uniform(shape, 0.3, 2.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn case<F>(suite: Suite, name: &str, tol: f64, inputs: &[Tensor<f64>], f: F) -> Result<Case>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let report = gradcheck(f, inputs, &GradcheckConfig::with_tol(tol))?;
    Ok(Case {
        suite,
        name: name.to_string(),
        report,
    })
}

/// Every tape primitive at `1e-6`. With `inject_fault` the square op's
/// corrupted backward rule is used instead of the real one.
pub fn primitives(inject_fault: bool) -> Result<Vec<Case>> {
    use Suite::Primitives as P;
    let tol = PRIMITIVE_TOL;
    let s = [2, 3, 3, 2];
    let mut out = vec![
        case(P, "relu", tol, &[away_from_zero(&s, 1, 0.1)], |t, v| {
            let y = t.relu(v[0])?;
            weighted_sum(t, y, 1)
        })?,
        case(P, "leaky_relu", tol, &[away_from_zero(&s, 2, 0.1)], |t, v| {
            let y = t.leaky_relu(v[0], 0.1)?;
            weighted_sum(t, y, 2)
        })?,
        case(P, "sigmoid", tol, &[randn(&s, 3)], |t, v| {
            let y = t.sigmoid(v[0])?;
            weighted_sum(t, y, 3)
        })?,
        case(P, "abs", tol, &[away_from_zero(&s, 4, 0.1)], |t, v| {
            let y = t.abs(v[0])?;
            weighted_sum(t, y, 4)
        })?,
        case(P, "sqrt", tol, &[positive(&s, 5)], |t, v| {
            let y = t.sqrt(v[0])?;
            weighted_sum(t, y, 5)
        })?,
        case(P, "powf", tol, &[positive(&s, 6)], |t, v| {
            let y = t.powf(v[0], -0.5)?;
            weighted_sum(t, y, 6)
        })?,
        case(P, "scale_add_scalar", tol, &[randn(&s, 7)], |t, v| {
            let y = t.scale(v[0], -1.7)?;
            let y = t.add_scalar(y, 0.3)?;
            weighted_sum(t, y, 7)
        })?,
        case(P, "add_sub_broadcast", tol, &[randn(&s, 8), randn(&[2, 3, 1, 1], 9)], |t, v| {
            let a = t.add(v[0], v[1])?;
            let y = t.sub(a, v[1])?;
            let y = t.sub(y, v[1])?;
            weighted_sum(t, y, 8)
        })?,
        case(P, "mul_div_broadcast", tol, &[randn(&s, 10), positive(&[2, 3, 1, 1], 11)], |t, v| {
            let a = t.mul(v[0], v[1])?;
            let y = t.div(a, v[1])?;
            let y = t.div(y, v[1])?;
            weighted_sum(t, y, 10)
        })?,
        case(P, "mul_scalar", tol, &[randn(&s, 12), randn(&[], 13)], |t, v| {
            let y = t.mul(v[0], v[1])?;
            weighted_sum(t, y, 12)
        })?,
        case(P, "matmul", tol, &[randn(&[3, 4], 14), randn(&[4, 2], 15)], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted_sum(t, y, 14)
        })?,
        case(P, "transpose_reshape", tol, &[randn(&[3, 4], 16)], |t, v| {
            let y = t.transpose(v[0])?;
            let y = t.reshape(y, &[2, 6])?;
            weighted_sum(t, y, 16)
        })?,
        case(
            P,
            "conv2d_stride1",
            tol,
            &[randn(&[2, 2, 5, 5], 17), randn(&[3, 2, 3, 3], 18), randn(&[3], 19)],
            |t, v| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
                weighted_sum(t, y, 17)
            },
        )?,
        case(
            P,
            "conv2d_stride2",
            tol,
            &[randn(&[1, 3, 6, 6], 20), randn(&[2, 3, 3, 3], 21), randn(&[2], 22)],
            |t, v| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
                weighted_sum(t, y, 20)
            },
        )?,
        case(P, "gap", tol, &[randn(&s, 23)], |t, v| {
            let y = t.gap(v[0])?;
            weighted_sum(t, y, 23)
        })?,
        case(P, "upsample2x", tol, &[randn(&[1, 2, 3, 4], 24)], |t, v| {
            let y = t.upsample2x(v[0])?;
            weighted_sum(t, y, 24)
        })?,
        case(P, "sum_mean", tol, &[randn(&s, 25)], |t, v| {
            let a = t.sum(v[0])?;
            let b = t.mean(v[0])?;
            let ab = t.mul(a, b)?;
            t.add(ab, b)
        })?,
        case(P, "sum_axis", tol, &[randn(&[4, 3], 26)], |t, v| {
            let a = t.sum_axis(v[0], 0)?;
            let b = t.sum_axis(v[0], 1)?;
            let a = weighted_sum(t, a, 26)?;
            let b = weighted_sum(t, b, 27)?;
            let ab = t.mul(a, b)?;
            t.add(ab, a)
        })?,
        case(P, "narrow_concat", tol, &[randn(&s, 28)], |t, v| {
            let a = t.narrow(v[0], 1, 0, 1)?;
            let b = t.narrow(v[0], 1, 1, 2)?;
            let sq = t.square(a)?;
            let y = t.concat(&[b, sq], 1)?;
            weighted_sum(t, y, 28)
        })?,
        case(
            P,
            "instance_norm",
            tol,
            &[randn(&s, 29), positive(&[3], 30), randn(&[3], 31)],
            |t, v| {
                let y = t.instance_norm(v[0], v[1], v[2], 1e-5)?;
                weighted_sum(t, y, 29)
            },
        )?,
        case(P, "reconstruct_time", tol, &[randn(&s, 32)], |t, v| {
            let y = t.reconstruct_time(v[0], 1.3)?;
            weighted_sum(t, y, 32)
        })?,
        case(P, "log_map_origin", tol, &[randn(&[1, 4, 2, 3], 33)], |t, v| {
            let s = t.narrow(v[0], 1, 1, 3)?;
            let x = t.reconstruct_time(s, 0.7)?;
            // perturbing the raw tensor directly also moves the point off
            // the manifold; the map must still be differentiable there
            let raw = t.add(x, v[0])?;
            let y = t.log_map_origin(raw, 0.7)?;
            weighted_sum(t, y, 33)
        })?,
        case(P, "log_map_origin_small", tol, &[randn(&[1, 3, 2, 2], 34).map(|v| v * 1e-4)], |t, v| {
            let x = t.reconstruct_time(v[0], 1.0)?;
            let y = t.log_map_origin(x, 1.0)?;
            weighted_sum(t, y, 34)
        })?,
    ];
    let fault_input = [randn(&s, 35)];
    out.push(if inject_fault {
        case(P, "square", tol, &fault_input, |t, v| {
            let y = t.faulty_square(v[0])?;
            weighted_sum(t, y, 35)
        })?
    } else {
        case(P, "square", tol, &fault_input, |t, v| {
            let y = t.square(v[0])?;
            weighted_sum(t, y, 35)
        })?
    });
    Ok(out)
}

/// `conv → relu → gap` with a coarse step `h = 1e-3`; the graph is
/// piecewise linear, so central differences are exact away from kinks.
pub fn composite_conv_relu_gap() -> Result<GradcheckReport> {
    let x = randn(&[1, 2, 5, 5], 40);
    let w = randn(&[3, 2, 3, 3], 41);
    let cfg = GradcheckConfig {
        step: 1e-3,
        ..GradcheckConfig::with_tol(PRIMITIVE_TOL)
    };
    gradcheck(
        |t, v| {
            let y = t.conv2d(v[0], v[1], None, 1, 1)?;
            let y = t.relu(y)?;
            let y = t.gap(y)?;
            weighted_sum(t, y, 40)
        },
        &[x, w],
        &cfg,
    )
}

/// Adds `N(0, std²)` noise to every bias and norm shift.
pub fn jitter_offsets(params: &mut ParamStore<f64>, std: f64, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = params
        .iter()
        .enumerate()
        .filter(|(_, (name, _))| name.ends_with(".bias") || name.ends_with(".beta"))
        .map(|(i, _)| i)
        .collect();
    for i in ids {
        let t = &mut params.tensors_mut()[i];
        let noise = Tensor::<f64>::randn(t.shape(), std, rng);
        for (v, n) in t.data_mut().iter_mut().zip(noise.data()) {
            *v += n;
        }
    }
}

fn bound(vars: &[Var]) -> Bound {
    Bound::from_vars(vars.to_vec())
}

/// Lorentz input block, norm/activation and a GA-LRCM block
/// `1×(1+4)×8×8 → 1×(1+8)×4×4`, at `1e-5`.
pub fn lorentz() -> Result<Vec<Case>> {
    use Suite::Lorentz as L;
    let k = Curvature::new(1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut out = Vec::new();

    let mut store = ParamStore::<f64>::new();
    let lib = Lib::new(&mut store, "lib", 1, 4, &mut rng)?;
    let mut inputs = vec![randn(&[1, 1, 8, 8], 51)];
    inputs.extend(store.tensors().iter().cloned());
    out.push(case(L, "lib", BLOCK_TOL, &inputs, |t, v| {
        let y = lib.forward(t, &bound(&v[1..]), v[0], k)?;
        weighted_sum(t, y.var, 51)
    })?);

    let mut store = ParamStore::<f64>::new();
    let norm = InstanceNorm::new(&mut store, "norm", 4);
    let mut inputs = vec![randn(&[1, 4, 4, 4], 52)];
    inputs.extend(store.tensors().iter().cloned());
    out.push(case(L, "norm_activation", BLOCK_TOL, &inputs, |t, v| {
        let x = LorentzVar::from_spatial(t, v[0], k)?;
        let y = lorentz_norm(t, &bound(&v[1..]), &norm, x)?;
        let y = manifold_activation(t, y)?;
        weighted_sum(t, y.var, 52)
    })?);

    let mut store = ParamStore::<f64>::new();
    let block = GaLrcm::new(&mut store, "block", 4, 8, 4, &mut rng);
    let mut inputs = vec![randn(&[1, 4, 8, 8], 53)];
    inputs.extend(store.tensors().iter().cloned());
    out.push(case(L, "ga_lrcm", BLOCK_TOL, &inputs, |t, v| {
        let x = LorentzVar::from_spatial(t, v[0], k)?;
        let y = block.forward(t, &bound(&v[1..]), x)?;
        weighted_sum(t, y.var, 53)
    })?);
    Ok(out)
}

/// Euclidean branch on a `1×1×16×16` input through scale 2, at `1e-5`,
/// with respect to the input and a sample of every parameter tensor it uses.
pub fn euclid(samples_per_tensor: usize) -> Result<Vec<Case>> {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut store = ParamStore::<f64>::new();
    let enc = EuclideanEncoder::new(&mut store, &NetworkConfig::tiny().widths(), &mut rng);
    jitter_offsets(&mut store, 0.1, &mut rng);
    let mut inputs = vec![randn(&[1, 1, 16, 16], 56)];
    inputs.extend(store.tensors().iter().cloned());
    let cfg = GradcheckConfig {
        step: NORMALIZED_STEP,
        max_per_input: Some(samples_per_tensor),
        seed: 57,
        ..GradcheckConfig::with_tol(BLOCK_TOL)
    };
    let report = gradcheck(
        |t, v| {
            let feats = enc.encode_until(t, &bound(&v[1..]), v[0], 2)?;
            weighted_sum(t, feats[1], 56)
        },
        &inputs,
        &cfg,
    )?;
    Ok(vec![Case {
        suite: Suite::Euclid,
        name: "scale2_16x16".into(),
        report,
    }])
}

/// HORL with respect to `F`, `Θ`, `W_v`, `W_g` and `W_e`, with the
/// sparsification mask frozen at its value for the unperturbed input.
pub fn horl() -> Result<Vec<Case>> {
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let mut store = ParamStore::<f64>::new();
    let h = Horl::new(&mut store, 4, None, 6, 0.5, 1e-6, &mut rng)?;
    *store.get_mut(h.theta) = randn(&[4, 4], 61);
    for (i, id) in [h.w_v.b, h.w_g.b, h.w_e.b].into_iter().enumerate() {
        let n = store.get(id).numel();
        *store.get_mut(id) = randn(&[n], 62 + i as u64).map(|v| 0.3 * v);
    }
    let f = randn(&[2, 4, 4, 4], 65);
    let masks = {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let x = tape.constant(f.clone());
        h.forward(&mut tape, &p, x, None)?.masks
    };
    let mut inputs = vec![f];
    inputs.extend(store.tensors().iter().cloned());
    let c = case(Suite::Horl, "propagate", BLOCK_TOL, &inputs, |t, v| {
        let y = h.forward(t, &bound(&v[1..]), v[0], Some(&masks))?;
        weighted_sum(t, y.out, 65)
    })?;
    Ok(vec![c])
}

/// The whole tiny network on a `16×16` input, Soft-IoU loss, with respect
/// to the input and a sample of every parameter tensor.
///
/// At `16×16` the deepest scale is a single pixel, so a freshly initialized
/// instance norm there outputs exactly its zero shift and the following
/// leaky ReLU sits on its kink. Biases and norm shifts are therefore
/// jittered first so the check runs at a differentiable point.
pub fn e2e(samples_per_tensor: usize) -> Result<Vec<Case>> {
    let cfg = NetworkConfig {
        input_size: Some(16),
        seed: 70,
        ..NetworkConfig::tiny()
    };
    let mut net = LohgNet::<f64>::new(&cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    jitter_offsets(&mut net.params, 0.1, &mut rng);
    let image = normalize_input(&Tensor::rand_uniform(&[1, 1, 16, 16], 0.0, 1.0, &mut rng));
    let mut mask = Tensor::zeros(&[1, 1, 16, 16]);
    for i in [67, 68, 83, 84, 180] {
        mask.data_mut()[i] = 1.0;
    }
    let masks = {
        let mut tape = Tape::new();
        let p = net.params.bind(&mut tape);
        let x = tape.constant(image.clone());
        net.forward(&mut tape, &p, x, None)?.horl.masks
    };
    let mut inputs = vec![image];
    inputs.extend(net.params.tensors().iter().cloned());
    let gc = GradcheckConfig {
        step: NORMALIZED_STEP,
        max_per_input: Some(samples_per_tensor),
        seed: 72,
        ..GradcheckConfig::with_tol(E2E_TOL)
    };
    let report = gradcheck(
        |t, v| {
            let fwd = net.forward(t, &bound(&v[1..]), v[0], Some(&masks))?;
            let gt = t.constant(mask.clone());
            soft_iou_loss(t, fwd.probs, gt)
        },
        &inputs,
        &gc,
    )?;
    Ok(vec![Case {
        suite: Suite::E2e,
        name: "tiny_16x16".into(),
        report,
    }])
}
