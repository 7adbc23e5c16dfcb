//! Exponential and logarithmic maps at the Lorentz origin, and the
//! encoder keeping every feature on the hyperboloid.

use lohgnet::config::NetworkConfig;
use lohgnet::lorentz::{
    exp_map_origin, geodesic_distance, log_map_origin, Curvature, LorentzEncoder, Origin, TangentVector,
};
use lohgnet::numerics::{ParamStore, Tape, Tensor};
use rand::SeedableRng;

fn main() -> lohgnet::Result<()> {
    let k = Curvature::new(1.0)?;
    for v in [vec![1e-3, 0.0], vec![0.3, -0.4], vec![3.0, 4.0]] {
        let x = exp_map_origin(&TangentVector::from_spatial(&v, k))?;
        let back = log_map_origin(&x)?;
        let d = geodesic_distance(&Origin::new(k, v.len()), &x)?;
        println!(
            "v = {v:?}  ->  t = {:.6}, s = {:?}  residual {:.1e}  distance {d:.6}  log = {:?}",
            x.t,
            x.s,
            x.residual(),
            back.spatial()
        );
    }

    let cfg = NetworkConfig::tiny();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f32>::new();
    let enc = LorentzEncoder::new(&mut store, &cfg.widths(), cfg.attention_ratio, cfg.curvature, &mut rng)?;
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let x = tape.constant(Tensor::randn(&[1, 1, 64, 64], 1.0, &mut rng));
    for (i, s) in enc.encode(&mut tape, &p, x)?.iter().enumerate() {
        println!("scale {i}: shape {:?}  max residual {:.2e}", tape.shape(s.var), s.max_residual(&tape));
    }
    Ok(())
}
