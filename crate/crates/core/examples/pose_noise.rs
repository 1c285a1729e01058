//! Effect of translation noise on the believed object pose.

use morphfield::cpd::CpdConfig;
use morphfield::evaluation::{pose_noise_experiment, Condition, EvalConfig, Subject};
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
    let held = category.instance(&[-0.8, 0.6, 0.9], 2000)?;
    let subject = Subject {
        name: "held-out".into(),
        model: Model::Mesh(held.mesh),
        cloud: held.cloud,
        pose: Pose::identity(),
    };
    let registrar = Registrar::new(&space, Model::Mesh(category.canonical_mesh.clone()), PipelineConfig::default())?;
    let views = viewpoint_sphere(10, 5.0, Intrinsics::with_vertical_fov(320, 240, 45.0))?;
    let config = EvalConfig {
        cpd_baseline: false,
        ..EvalConfig::default()
    };

    for range in [0.0, 0.01, 0.025, 0.05, 0.1] {
        let rows = pose_noise_experiment(&registrar, &subject, &views, &OracleSpec::ground_truth(), &config, range, 5)?;
        let get = |c| rows.iter().find(|r| r.condition == c).expect("row present");
        let (p, c) = (get(Condition::OraclePipeline), get(Condition::CanonicalBaseline));
        println!(
            "noise +-{range:<5} m: pipeline {:.4e} (sd {:.1e}), canonical {:.4e}, {} view-draws",
            p.mean, p.std, c.mean, p.n_views
        );
    }
    Ok(())
}
