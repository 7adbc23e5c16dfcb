//! Branch fusion, the progressive decoder, the Soft-IoU loss and the toy
//! training loop.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::euclid::EuclideanEncoder;
use crate::horl::{Horl, HorlOutput};
use crate::layers::{Conv, ConvUnit};
use crate::lorentz::{LorentzEncoder, LorentzVar};
use crate::numerics::{Bound, ParamStore, Real, Tape, Tensor, Var};

pub const SOFT_IOU_EPS: f64 = 1.0;
/// Initial bias of the prediction head: `σ(−2) ≈ 0.12`.
pub const HEAD_BIAS_INIT: f64 = -2.0;

/// `F_i = log_o(L_i)_space + E_i` for every scale.
pub fn fuse<T: Real>(tape: &mut Tape<T>, lorentz: &[LorentzVar], euclid: &[Var]) -> Result<Vec<Var>> {
    if lorentz.len() != euclid.len() {
        return Err(Error::dim(format!(
            "{} Lorentz scales but {} Euclidean scales",
            lorentz.len(),
            euclid.len()
        )));
    }
    lorentz
        .iter()
        .zip(euclid)
        .map(|(l, &e)| {
            let lh = tape.log_map_origin(l.var, l.k.k())?;
            if tape.shape(lh) != tape.shape(e) {
                return Err(Error::dim(format!(
                    "cannot fuse {:?} with {:?}",
                    tape.shape(lh),
                    tape.shape(e)
                )));
            }
            tape.add(lh, e)
        })
        .collect()
}

/// Additive-skip U-shaped decoder.
#[derive(Debug, Clone)]
pub struct Decoder {
    /// `align[i]` maps scale `i+2` channels to scale `i+1` channels.
    pub align: Vec<Conv>,
    pub units: Vec<ConvUnit>,
    pub head: Conv,
}

impl Decoder {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, widths: &[usize; 5], rng: &mut R) -> Self {
        let mut align = Vec::with_capacity(4);
        let mut units = Vec::with_capacity(4);
        for i in 0..4 {
            let name = format!("decoder.scale{}", i + 1);
            align.push(Conv::new(store, &format!("{name}.align"), widths[i + 1], widths[i], 1, 1, 1.0, rng));
            units.push(ConvUnit::new(store, &format!("{name}.unit"), widths[i], widths[i], rng));
        }
        let head = Conv::new(store, "decoder.head", widths[0], 1, 1, 1, 1.0, rng);
        store.get_mut(head.b).data_mut()[0] = T::of(HEAD_BIAS_INIT);
        Decoder { align, units, head }
    }

    /// Returns the head logits `B×1×H×W`.
    pub fn decode<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, fused: &[Var]) -> Result<Var> {
        if fused.len() != 5 {
            return Err(Error::dim(format!("decoder needs 5 scales, got {}", fused.len())));
        }
        let mut cur = fused[4];
        for i in (0..4).rev() {
            let up = tape.upsample2x(cur)?;
            let up = self.align[i].forward(tape, p, up)?;
            let x = tape.add(up, fused[i])?;
            cur = self.units[i].forward(tape, p, x)?;
        }
        self.head.forward(tape, p, cur)
    }
}

/// `1 − (Σpg + ε)/(Σp + Σg − Σpg + ε)`.
pub fn soft_iou_loss<T: Real>(tape: &mut Tape<T>, pred: Var, gt: Var) -> Result<Var> {
    if tape.shape(pred) != tape.shape(gt) {
        return Err(Error::dim(format!(
            "prediction {:?} vs mask {:?}",
            tape.shape(pred),
            tape.shape(gt)
        )));
    }
    if tape.value(gt).data().iter().any(|&v| v != T::zero() && v != T::one()) {
        return Err(Error::contract("ground-truth mask must be binary"));
    }
    let pg = tape.mul(pred, gt)?;
    let inter = tape.sum(pg)?;
    let sp = tape.sum(pred)?;
    let sg = tape.sum(gt)?;
    let num = tape.add_scalar(inter, SOFT_IOU_EPS)?;
    let union = tape.add(sp, sg)?;
    let union = tape.sub(union, inter)?;
    let den = tape.add_scalar(union, SOFT_IOU_EPS)?;
    let ratio = tape.div(num, den)?;
    let neg = tape.scale(ratio, -1.0)?;
    tape.add_scalar(neg, 1.0)
}

/// Zero mean, unit standard deviation per batch item.
pub fn normalize_input<T: Real>(image: &Tensor<T>) -> Tensor<T> {
    let b = image.shape()[0];
    let per = image.numel() / b;
    let mut out = image.clone();
    for item in out.data_mut().chunks_mut(per) {
        let mean = item.iter().map(|v| v.f64()).sum::<f64>() / per as f64;
        let var = item.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / per as f64;
        let inv = 1.0 / var.sqrt().max(1e-6);
        for v in item.iter_mut() {
            *v = T::of((v.f64() - mean) * inv);
        }
    }
    out
}

/// Intermediate results of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward<T: Real> {
    pub lorentz: Vec<LorentzVar>,
    pub euclid: Vec<Var>,
    /// `F_1..F_5` with `F_5` after HORL.
    pub fused: Vec<Var>,
    pub horl: HorlOutput<T>,
    pub logits: Var,
    pub probs: Var,
}

#[derive(Debug, Clone)]
pub struct LohgNet<T: Real> {
    pub config: NetworkConfig,
    pub params: ParamStore<T>,
    pub lorentz: LorentzEncoder,
    pub euclid: EuclideanEncoder,
    pub horl: Horl,
    pub decoder: Decoder,
}

impl<T: Real> LohgNet<T> {
    /// Builds and initializes a network; the same config always yields the
    /// same parameters.
    pub fn new(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let widths = config.widths();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let lorentz = LorentzEncoder::new(&mut params, &widths, config.attention_ratio, config.curvature, &mut rng)?;
        let euclid = EuclideanEncoder::new(&mut params, &widths, &mut rng);
        let horl = Horl::new(
            &mut params,
            widths[4],
            None,
            config.hyperedges(),
            config.lambda,
            config.eps_deg,
            &mut rng,
        )?;
        let decoder = Decoder::new(&mut params, &widths, &mut rng);
        Ok(LohgNet {
            config: config.clone(),
            params,
            lorentz,
            euclid,
            horl,
            decoder,
        })
    }

    /// Runs the network on an already normalized `B×1×H×W` input.
    pub fn forward(&self, tape: &mut Tape<T>, p: &Bound, x: Var, frozen: Option<&[Tensor<T>]>) -> Result<Forward<T>> {
        let lorentz = self.lorentz.encode(tape, p, x)?;
        let euclid = self.euclid.encode(tape, p, x)?;
        let mut fused = fuse(tape, &lorentz, &euclid)?;
        let horl = self.horl.forward(tape, p, fused[4], frozen)?;
        fused[4] = horl.out;
        let logits = self.decoder.decode(tape, p, &fused)?;
        let probs = tape.sigmoid(logits)?;
        Ok(Forward {
            lorentz,
            euclid,
            fused,
            horl,
            logits,
            probs,
        })
    }

    /// Probability map for a raw `B×1×H×W` image.
    pub fn predict(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let x = tape.constant(normalize_input(image));
        let fwd = self.forward(&mut tape, &p, x, None)?;
        Ok(tape.value(fwd.probs).clone())
    }

    /// One plain SGD step on the Soft-IoU loss. Returns the loss before the
    /// update.
    pub fn train_step(&mut self, image: &Tensor<T>, mask: &Tensor<T>, lr: f64) -> Result<f64> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let x = tape.constant(normalize_input(image));
        let gt = tape.constant(mask.clone());
        let fwd = self.forward(&mut tape, &p, x, None)?;
        let loss = soft_iou_loss(&mut tape, fwd.probs, gt)?;
        let value = tape.value(loss).item().f64();
        if !value.is_finite() {
            return Err(Error::Numeric {
                op: "soft_iou_loss",
                detail: format!("loss is {value}"),
            });
        }
        tape.backward(loss)?;
        self.params.sgd_step(&tape, &p, lr);
        Ok(value)
    }

    /// Repeated [`train_step`](Self::train_step) on one image; returns the
    /// loss of every step.
    pub fn train_overfit(&mut self, image: &Tensor<T>, mask: &Tensor<T>, steps: usize, lr: f64) -> Result<Vec<f64>> {
        (0..steps).map(|_| self.train_step(image, mask, lr)).collect()
    }

    /// Copies parameters from a loaded store with matching names and shapes.
    pub fn load_params(&mut self, store: &ParamStore<T>) -> Result<()> {
        self.params.load_from(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lorentz::Curvature;

    #[test]
    fn soft_iou_examples() {
        let mut tape = Tape::<f64>::new();
        let m = Tensor::from_f64(&[1, 1, 2, 2], &[1.0, 0.0, 0.0, 0.0]).unwrap();
        let gt = tape.constant(m.clone());
        let same = tape.constant(m.clone());
        let l = soft_iou_loss(&mut tape, same, gt).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);

        let zero = tape.constant(Tensor::zeros(&[1, 1, 2, 2]));
        let l = soft_iou_loss(&mut tape, zero, gt).unwrap();
        assert!((tape.value(l).item() - 0.5).abs() < 1e-12);

        let half = tape.constant(Tensor::full(&[1, 1, 2, 2], 0.5));
        let l = soft_iou_loss(&mut tape, half, gt).unwrap();
        assert!((tape.value(l).item() - (1.0 - 1.5 / 3.5)).abs() < 1e-12);

        let bad = tape.constant(Tensor::full(&[1, 1, 2, 2], 0.3));
        assert!(soft_iou_loss(&mut tape, half, bad).is_err());
    }

    #[test]
    fn fuse_origin_is_identity() {
        let mut tape = Tape::<f64>::new();
        let k = Curvature::new(2.0).unwrap();
        let s = tape.constant(Tensor::zeros(&[1, 3, 2, 2]));
        let l = LorentzVar::from_spatial(&mut tape, s, k).unwrap();
        let ev = Tensor::from_f64(&[1, 3, 2, 2], &(0..12).map(|i| i as f64 * 0.1).collect::<Vec<_>>()).unwrap();
        let e = tape.constant(ev.clone());
        let f = fuse(&mut tape, &[l], &[e]).unwrap();
        assert_eq!(tape.value(f[0]), &ev);

        let short = tape.constant(Tensor::zeros(&[1, 2, 2, 2]));
        assert!(fuse(&mut tape, &[l], &[short]).is_err());
    }

    #[test]
    fn tiny_network_shapes_and_range() {
        let cfg = NetworkConfig {
            input_size: Some(32),
            ..NetworkConfig::tiny()
        };
        let net = LohgNet::<f32>::new(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = Tensor::rand_uniform(&[1, 1, 32, 32], 0.0, 1.0, &mut rng);
        let probs = net.predict(&img).unwrap();
        assert_eq!(probs.shape(), &[1, 1, 32, 32]);
        assert!(probs.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let cfg = NetworkConfig {
            input_size: Some(16),
            ..NetworkConfig::tiny()
        };
        let mut net = LohgNet::<f64>::new(&cfg).unwrap();
        let before = net.params.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let img = Tensor::rand_uniform(&[1, 1, 16, 16], 0.0, 1.0, &mut rng);
        let mut mask = Tensor::zeros(&[1, 1, 16, 16]);
        mask.data_mut()[40] = 1.0;
        net.train_step(&img, &mask, 0.0).unwrap();
        for (a, b) in before.tensors().iter().zip(net.params.tensors()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn normalization_statistics() {
        let t = Tensor::<f64>::from_f64(&[2, 1, 1, 2], &[1.0, 3.0, 5.0, 5.0]).unwrap();
        let n = normalize_input(&t);
        assert_eq!(n.data(), &[-1.0, 1.0, 0.0, 0.0]);
    }
}
