//! Builds a hypergraph from random vertex features, sweeps the
//! sparsification threshold and dumps the matrices as CSV.

use lohgnet::horl::{self, HypergraphState};
use lohgnet::numerics::{Tape, Tensor};
use rand::SeedableRng;

fn main() -> lohgnet::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let (n, d, m) = (16, 3, 8);
    let mut tape = Tape::<f64>::new();
    let v = tape.constant(Tensor::randn(&[n, d], 1.0, &mut rng));
    let g = tape.constant(Tensor::randn(&[d, 1], 1.0, &mut rng));
    let e = tape.constant(Tensor::randn(&[n, m], 1.0, &mut rng));
    let h = horl::build_incidence(&mut tape, v, g, e)?;

    for lambda in [0.0, 0.25, 0.5, 1.0, 2.0] {
        let s = HypergraphState::from_incidence(tape.value(h), lambda, horl::DEFAULT_EPS_DEG)?;
        println!("lambda {lambda:<4}  kept {:>3} of {}", s.nonzeros(), n * m);
    }

    let state = HypergraphState::from_incidence(tape.value(h), horl::DEFAULT_LAMBDA, horl::DEFAULT_EPS_DEG)?;
    let dir = std::env::temp_dir().join("lohgnet-hypergraph");
    std::fs::create_dir_all(&dir).map_err(|e| lohgnet::Error::io(&dir, e))?;
    state.write_csv(&dir)?;
    println!("vertex degrees {:.3?}", state.dv);
    println!("CSV dump in {}", dir.display());
    Ok(())
}
