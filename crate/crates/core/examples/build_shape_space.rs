//! Register a synthetic category's training instances to the canonical cloud,
//! build the PCA deformation space and round-trip it through a file.

use morphfield::cpd::CpdConfig;
use morphfield::shape_space::{build_shape_space, ShapeSpace};
use morphfield::synthetic::{SyntheticCategory, SyntheticConfig};
use morphfield::PointCloud;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let category = SyntheticCategory::generate(SyntheticConfig::default(), 8)?;
    let clouds: Vec<PointCloud> = category.instances.iter().map(|i| i.cloud.clone()).collect();
    println!("canonical cloud: {} points, {} instances", category.canonical.len(), clouds.len());

    let (space, fields) = build_shape_space(&category.canonical, &clouds, &CpdConfig::default(), 3)?;
    for (i, f) in fields.iter().enumerate() {
        let x = space.project_field(f)?;
        println!("instance {i}: latent {:?}", x.as_slice().iter().map(|v| format!("{v:+.4}")).collect::<Vec<_>>());
    }

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("space.mfss");
    space.save(&path)?;
    let loaded = ShapeSpace::load(&path)?;
    println!("saved {} ({} bytes), reloads equal: {}", path.display(), std::fs::metadata(&path)?.len(), loaded == space);
    Ok(())
}
