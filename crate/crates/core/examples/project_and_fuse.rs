//! Projects points through two cameras and fuses per-pixel embeddings.
use ndarray::{array, Array2, Array3};
use vlseg3d::fusion::{fuse, fuse_stats};
use vlseg3d::geometry::{project_point, visible_views, CameraPose};
use vlseg3d::tensorio::{PointCloud, View, ViewSet};

fn main() -> vlseg3d::Result<()> {
    let (w, h) = (64, 48);
    let front = CameraPose::look_at([0.0, 0.0, -3.0], [0.0, 0.0, 0.0], [0.0, -1.0, 0.0], 50.0, 50.0, w, h)?;
    let side = CameraPose::look_at([3.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, -1.0, 0.0], 50.0, 50.0, w, h)?;

    // Two constant embedding images with flat depth 3 m; the side camera sees a
    // wall in front of the first point, so depth rejects it there.
    let view = |pose: CameraPose, e: [f32; 2], depth: f32| View {
        pose,
        embeddings: Array3::from_shape_fn((h, w, 2), |(_, _, c)| e[c]),
        depth: Some(Array2::from_elem((h, w), depth)),
    };
    let views = ViewSet::new(vec![view(front, [1.0, 0.0], 3.0), view(side, [0.0, 1.0], 2.0)])?;

    let points = array![[0.0f32, 0.0, 0.0, 0.5, 0.5, 0.5], [1.0, 0.0, 0.0, 0.5, 0.5, 0.5], [0.0, 0.0, 9.0, 0.5, 0.5, 0.5]];
    let cloud = PointCloud::new(points, None)?;

    for i in 0..cloud.len() {
        let p = cloud.position(i);
        let proj = project_point(p, &views.views[0].pose);
        let seen: Vec<usize> = visible_views(p, &views, 0.05).iter().map(|c| c.view).collect();
        println!("point {i}: front pixel ({:.1}, {:.1}) depth {:.2}, visible in {seen:?}", proj.u, proj.v, proj.depth);
    }

    let fused = fuse(&cloud, &views, 0.05)?;
    println!("fused {:?}", fused.embeddings);
    println!("{:?}", fuse_stats(&fused));
    Ok(())
}
