//! Generates one scene, prints where its targets are, then writes a small
//! dataset and reads it back.

use lohgnet::metrics::{self, BinaryMask};
use lohgnet::synth::{self, SceneSpec};

fn main() -> lohgnet::Result<()> {
    let scene = synth::generate(&SceneSpec::default())?;
    for t in &scene.targets {
        println!("target at ({}, {})  sigma {:.2}  amplitude {:.2}", t.x, t.y, t.sigma, t.amplitude);
    }
    let comps = metrics::components(&BinaryMask::from_tensor(&scene.mask)?);
    println!("{} mask components, {} mask pixels", comps.len(), comps.iter().map(|c| c.pixels).sum::<usize>());

    let dir = std::env::temp_dir().join("lohgnet-dataset");
    let manifest = synth::write_dataset(&dir, &SceneSpec { seed: 7, ..SceneSpec::default() }, 4)?;
    let pairs = synth::read_dataset(&dir)?;
    println!("wrote {} items to {}, read back {}", manifest.items.len(), dir.display(), pairs.len());
    Ok(())
}
