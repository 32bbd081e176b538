//! Confusion-based metrics on hand-written predictions.
use vlseg3d::evalkit::compute_metrics;
use vlseg3d::IGNORE;

fn main() -> vlseg3d::Result<()> {
    let gt = [0, 0, 1, 1, 2, IGNORE];
    let pred = [0, 1, 1, 1, 2, 0];
    let m = compute_metrics(&pred, &gt, 4)?;
    println!("per-class IoU {:?}", m.per_class_iou);
    println!("mIoU {:.4}  mAcc {:.4}  scored {}", m.miou, m.macc, m.scored_points);
    Ok(())
}
