//! Scene-masked and unmasked pseudo labels on a generated scene.
use vlseg3d::fusion::fuse;
use vlseg3d::labeling::{label_accuracy, label_points, SceneMask};
use vlseg3d::synth::{generate, SynthSpec};

fn main() -> vlseg3d::Result<()> {
    let suite = generate(&SynthSpec { train_scenes: 1, test_scenes: 0, ..Default::default() })?;
    let scene = &suite.train[0].scene;
    let gt = scene.cloud.gt_labels.as_ref().unwrap();

    let fused = fuse(&scene.cloud, &scene.views, 0.05)?;
    let mask = SceneMask::from_scene_labels(&suite.bank, &scene.scene_labels)?;
    let masked = label_points(&fused, &suite.bank, Some(&mask))?;
    let unmasked = label_points(&fused, &suite.bank, None)?;

    println!("scene labels {:?}", scene.scene_labels);
    println!("labeled {} of {} points", masked.labeled_count(), scene.cloud.len());
    println!("masked accuracy   {:.4}", label_accuracy(&masked.labels, gt));
    println!("unmasked accuracy {:.4}", label_accuracy(&unmasked.labels, gt));
    Ok(())
}
