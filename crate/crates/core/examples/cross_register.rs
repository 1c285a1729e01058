//! Point-to-point correspondence between two instances through their fitted
//! latent vectors: both deformed canonical clouds share the canonical indexing.

use morphfield::completion::cross_instance_correspondence;
use morphfield::cpd::CpdConfig;
use morphfield::geometry::Intrinsics;
use morphfield::oracle::OracleSpec;
use morphfield::pipeline::{Model, PipelineConfig, Registrar};
use morphfield::shape_space::build_shape_space;
use morphfield::synthetic::{SyntheticCategory, SyntheticConfig};
use morphfield::evaluation::registration_error;
use morphfield::{viewpoint_sphere, PointCloud, Pose};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let category = SyntheticCategory::generate(SyntheticConfig::default(), 8)?;
    let clouds: Vec<PointCloud> = category.instances.iter().map(|i| i.cloud.clone()).collect();
    let (space, fields) = build_shape_space(&category.canonical, &clouds, &CpdConfig::default(), 3)?;
    let registrar = Registrar::new(&space, Model::Mesh(category.canonical_mesh.clone()), PipelineConfig::default())?;
    let views = viewpoint_sphere(20, 5.0, Intrinsics::with_vertical_fov(320, 240, 45.0))?;

    // observe instance 0 from one side and instance 1 from another
    let mut latents = Vec::new();
    for (k, view) in [(0usize, &views[3]), (1, &views[15])] {
        let model = Model::Mesh(category.instances[k].mesh.clone());
        let image = model.render(&Pose::identity(), view, &registrar.config().splat, k as u64)?;
        let truth = registrar.ground_truth(&fields[k])?;
        let outcome = registrar.register_view(&image, view, &Pose::identity(), &OracleSpec::ground_truth(), Some(&truth), 7)?;
        println!(
            "instance {k}: {} visible canonical points, error {:.3e}",
            outcome.completion.visible_points,
            registration_error(category.instances[k].cloud.points(), &outcome.reconstruction)
        );
        latents.push(outcome.completion.latent);
    }

    let (a, b) = cross_instance_correspondence(&space, &latents[0], &latents[1])?;
    let dist: Vec<f64> = a.points().iter().zip(b.points()).map(|(p, q)| (p - q).norm()).collect();
    println!(
        "{} corresponding pairs, mean distance {:.4} m, max {:.4} m",
        dist.len(),
        dist.iter().sum::<f64>() / dist.len() as f64,
        dist.iter().cloned().fold(0.0, f64::max)
    );
    for i in (0..a.len()).step_by(a.len() / 5) {
        println!("  point {i}: {:.3?} <-> {:.3?}", a.points()[i].coords.as_slice(), b.points()[i].coords.as_slice());
    }
    Ok(())
}
