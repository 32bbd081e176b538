//! Distills a 3D encoder with soft guidance and segments held-out scenes.
use vlseg3d::config::PipelineConfig;
use vlseg3d::distill::DistillMode;
use vlseg3d::pipeline::run_suite;
use vlseg3d::synth::{generate, SynthSpec};
use vlseg3d::tensorio::Scene;

fn main() -> vlseg3d::Result<()> {
    let suite = generate(&SynthSpec { train_scenes: 4, test_scenes: 1, points: 2048, ..Default::default() })?;
    let train: Vec<Scene> = suite.train.iter().map(|s| s.scene.clone()).collect();
    let test: Vec<Scene> = suite.test.iter().map(|s| s.scene.clone()).collect();

    let out = run_suite(&train, &test, &suite.bank, &PipelineConfig::synthetic(), &[DistillMode::SoftGuidanceAdapter], 1)?;
    let m = &out.modes[0];
    println!("loss {:.4} -> {:.4}", m.losses[0], m.losses[m.losses.len() - 1]);
    for (name, iou) in m.metrics.class_names.iter().zip(&m.metrics.per_class_iou) {
        if let Some(iou) = iou {
            println!("{name:>10} {iou:.4}");
        }
    }
    println!("mIoU {:.4}", m.metrics.miou);
    Ok(())
}
