//! Saves a network to the weight container and loads it into a fresh one.

use lohgnet::config::NetworkConfig;
use lohgnet::model::LohgNet;
use lohgnet::numerics::weights;
use lohgnet::synth::{self, SceneSpec};

fn main() -> lohgnet::Result<()> {
    let cfg = NetworkConfig::tiny();
    let net = LohgNet::<f32>::new(&cfg)?;
    let path = std::env::temp_dir().join("lohgnet-example.bin");
    weights::save(&path, &net.params, serde_json::json!({"note": "fresh init"}))?;
    let size = std::fs::metadata(&path).map_err(|e| lohgnet::Error::io(&path, e))?.len();
    println!("{} tensors, {} scalars, {size} bytes", net.params.len(), net.params.num_scalars());

    let (store, meta) = weights::load::<f32>(&path)?;
    let mut other = LohgNet::<f32>::new(&NetworkConfig { seed: 99, ..cfg })?;
    other.load_params(&store)?;
    let (image, _) = synth::generate(&SceneSpec::default())?.batched();
    let image = image.cast::<f32>();
    let diff = net.predict(&image)?.max_abs_diff(&other.predict(&image)?);
    println!("metadata {meta}, prediction difference after reload {diff:e}");
    Ok(())
}
