//! Viewpoint sweep over a held-out synthetic instance with the ground-truth
//! oracle, against the undeformed canonical model and CPD on each partial view.

use morphfield::cpd::CpdConfig;
use morphfield::evaluation::{evaluate_instance, EvalConfig, EvalReport, Subject};
use morphfield::geometry::Intrinsics;
use morphfield::oracle::OracleSpec;
use morphfield::pipeline::{Model, PipelineConfig, Registrar};
use morphfield::shape_space::build_shape_space;
use morphfield::synthetic::{SyntheticCategory, SyntheticConfig};
use morphfield::{viewpoint_sphere, PointCloud, Pose};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let category = SyntheticCategory::generate(SyntheticConfig::default(), 8)?;
    let clouds: Vec<PointCloud> = category.instances.iter().map(|i| i.cloud.clone()).collect();
    let (space, _) = build_shape_space(&category.canonical, &clouds, &CpdConfig::default(), 3)?;

    let held = category.instance(&[0.9, -0.7, 0.6], 1000)?;
    let subject = Subject {
        name: "held-out".into(),
        model: Model::Mesh(held.mesh),
        cloud: held.cloud,
        pose: Pose::identity(),
    };
    let registrar = Registrar::new(&space, Model::Mesh(category.canonical_mesh.clone()), PipelineConfig::default())?;
    let views = viewpoint_sphere(12, 5.0, Intrinsics::with_vertical_fov(320, 240, 45.0))?;
    let rows = evaluate_instance(&registrar, &subject, &views, &OracleSpec::ground_truth(), &EvalConfig::default())?;
    print!("{}", EvalReport { rows }.to_csv(1.0));
    Ok(())
}
