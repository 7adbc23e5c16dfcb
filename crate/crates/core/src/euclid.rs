//! The parallel Euclidean encoder.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{Conv, ConvUnit};
use crate::lorentz::encoder::check_divisible;
use crate::numerics::{Bound, ParamStore, Real, Tape, Var};

/// One scale: optional stride-2 downsampling conv, then two conv units.
#[derive(Debug, Clone)]
pub struct EuclidStage {
    pub down: Option<Conv>,
    pub units: [ConvUnit; 2],
}

#[derive(Debug, Clone)]
pub struct EuclideanEncoder {
    pub stages: Vec<EuclidStage>,
    pub widths: [usize; 5],
}

impl EuclideanEncoder {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        widths: &[usize; 5],
        rng: &mut R,
    ) -> Self {
        let mut stages = Vec::with_capacity(5);
        for i in 0..5 {
            let name = format!("euclid.scale{}", i + 1);
            let (down, c_in) = if i == 0 {
                (None, 1)
            } else {
                let d = Conv::new(
                    store,
                    &format!("{name}.down"),
                    widths[i - 1],
                    widths[i],
                    3,
                    2,
                    1.0,
                    rng,
                );
                (Some(d), widths[i])
            };
            let units = [
                ConvUnit::new(store, &format!("{name}.unit1"), c_in, widths[i], rng),
                ConvUnit::new(store, &format!("{name}.unit2"), widths[i], widths[i], rng),
            ];
            stages.push(EuclidStage { down, units });
        }
        EuclideanEncoder {
            stages,
            widths: *widths,
        }
    }

    /// Returns the five scale features `E_1..E_5`, finest first.
    pub fn encode<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Vec<Var>> {
        self.encode_until(tape, p, x, 5)
    }

    /// Like [`encode`](Self::encode) but stops after `scales` scales.
    pub fn encode_until<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
        scales: usize,
    ) -> Result<Vec<Var>> {
        check_divisible(tape.shape(x))?;
        if tape.shape(x)[1] != 1 {
            return Err(Error::dim(format!(
                "Euclidean branch expects a single-channel image, got {:?}",
                tape.shape(x)
            )));
        }
        let mut out = Vec::with_capacity(scales);
        let mut cur = x;
        for stage in self.stages.iter().take(scales) {
            if let Some(d) = &stage.down {
                cur = d.forward(tape, p, cur)?;
            }
            for u in &stage.units {
                cur = u.forward(tape, p, cur)?;
            }
            out.push(cur);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn desk_preset_shapes() {
        let widths = [8, 16, 32, 64, 128];
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = EuclideanEncoder::new(&mut store, &widths, &mut rng);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let x = tape.constant(Tensor::randn(&[1, 1, 64, 64], 1.0, &mut rng));
        let e = enc.encode(&mut tape, &p, x).unwrap();
        for (i, v) in e.iter().enumerate() {
            let ext = 64 >> i;
            assert_eq!(tape.shape(*v), &[1, widths[i], ext, ext]);
        }
    }

    #[test]
    fn zero_weights_give_zero_features() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = EuclideanEncoder::new(&mut store, &[2, 2, 3, 3, 4], &mut rng);
        for t in store.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let x = tape.constant(Tensor::randn(&[1, 1, 32, 32], 1.0, &mut rng));
        for v in enc.encode(&mut tape, &p, x).unwrap() {
            assert!(tape.value(v).data().iter().all(|&z| z == 0.0));
        }
    }

    #[test]
    fn rejects_indivisible_input() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = EuclideanEncoder::new(&mut store, &[2, 2, 2, 2, 2], &mut rng);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let x = tape.constant(Tensor::zeros(&[1, 1, 20, 32]));
        assert!(enc.encode(&mut tape, &p, x).is_err());
    }
}
