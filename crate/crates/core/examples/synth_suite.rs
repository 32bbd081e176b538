//! Generates a synthetic suite and writes it to disk as scene manifests.
use vlseg3d::synth::{generate, write_suite, SynthSpec};

fn main() -> vlseg3d::Result<()> {
    let spec = SynthSpec { train_scenes: 2, test_scenes: 1, ..Default::default() };
    let suite = generate(&spec)?;
    println!("bank: {:?}", suite.bank.class_names());
    for s in suite.train.iter().chain(&suite.test) {
        println!(
            "{}: {} points, {} views, {} boxes, labels {:?}",
            s.scene.name,
            s.scene.cloud.len(),
            s.scene.views.len(),
            s.layout.boxes.len(),
            s.scene.scene_labels
        );
    }
    let dir = std::env::temp_dir().join("vlseg3d_synth_example");
    let index = write_suite(&dir, &suite)?;
    println!("index at {}", index.display());
    Ok(())
}
