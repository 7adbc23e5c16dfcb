//! Trains the tiny network on one synthetic scene until it segments it.

use lohgnet::config::NetworkConfig;
use lohgnet::metrics::{self, BinaryMask, DEFAULT_THRESHOLD};
use lohgnet::model::LohgNet;
use lohgnet::synth::{self, SceneSpec};

fn main() -> lohgnet::Result<()> {
    let scene = synth::generate(&SceneSpec::default())?;
    let (image, mask) = scene.batched();
    let gt = BinaryMask::from_tensor(&mask)?;
    let (image, mask) = (image.cast::<f32>(), mask.cast::<f32>());
    let cfg = NetworkConfig::tiny();
    let mut net = LohgNet::<f32>::new(&cfg)?;
    for step in 1..=300 {
        let loss = net.train_step(&image, &mask, cfg.learning_rate)?;
        if step % 25 == 0 {
            let pred = metrics::binarize(&net.predict(&image)?, DEFAULT_THRESHOLD)?;
            let iou = metrics::pixel_metrics(&pred, &gt)?.iou;
            println!("step {step:>3}  loss {loss:.4}  IoU {iou:.3}");
        }
    }
    Ok(())
}
