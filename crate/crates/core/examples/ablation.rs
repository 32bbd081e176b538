//! A reduced ablation over the four training modes; prints the markdown table.
use vlseg3d::config::PipelineConfig;
use vlseg3d::evalkit::run_ablation;

fn main() -> vlseg3d::Result<()> {
    let mut config = PipelineConfig::synthetic();
    config.synth.train_scenes = 4;
    config.synth.test_scenes = 1;
    config.synth.points = 2048;
    config.distill.iters = 40;
    let report = run_ablation(&config, &[1, 2], None)?;
    print!("{}", report.to_markdown());
    Ok(())
}
