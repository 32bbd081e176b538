//! Trains the residual adapter on pseudo labels and reports the loss curve.
use vlseg3d::config::PipelineConfig;
use vlseg3d::pipeline::{prepare_scenes, train_adapter_on};
use vlseg3d::synth::{generate, SynthSpec};
use vlseg3d::tensorio::Scene;

fn main() -> vlseg3d::Result<()> {
    let suite = generate(&SynthSpec { train_scenes: 4, test_scenes: 0, ..Default::default() })?;
    let scenes: Vec<Scene> = suite.train.iter().map(|s| s.scene.clone()).collect();
    let config = PipelineConfig::synthetic();

    let prepared = prepare_scenes(&scenes, &suite.bank, config.geometry.tau)?;
    let trained = train_adapter_on(&prepared, &suite.bank, &config, 1)?;
    let l = &trained.losses;
    println!("alpha {} hidden {}", trained.params.alpha, trained.params.hidden());
    println!("{} steps, loss {:.4} -> {:.4}", l.len(), l[0], l[l.len() - 1]);
    Ok(())
}
