//! Render the canonical model and a deformed instance, zoom both to the
//! oracle resolution and rasterize the ground-truth deformation target.

use morphfield::imaging::{rasterize_target, render_mesh, zoom, SplatConfig};
use morphfield::io::{write_pgm, write_tensor};
use morphfield::synthetic::{SyntheticCategory, SyntheticConfig};
use morphfield::geometry::Intrinsics;
use morphfield::{viewpoint_sphere, Pose};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let category = SyntheticCategory::generate(SyntheticConfig::default(), 1)?;
    let instance = &category.instances[0];
    let view = &viewpoint_sphere(74, 5.0, Intrinsics::with_vertical_fov(320, 240, 45.0))?[10];
    let splat = SplatConfig::default();

    let canonical = render_mesh(&category.canonical_mesh, &Pose::identity(), view, &splat, 1)?;
    let observed = render_mesh(&instance.mesh, &Pose::identity(), view, &splat, 2)?;
    println!("foreground pixels: canonical {}, observed {}", canonical.foreground_count(), observed.foreground_count());

    let z = zoom(&observed, &canonical, (256, 192))?;
    println!("crop box: {:?} (padded: {})", z.crop, z.padded);
    let deltas = instance.field.displacements(category.canonical.points())?;
    let target = rasterize_target(&z.canonical, category.canonical.points(), &deltas)?.with_scale(1000.0);
    let peak = target.data().iter().map(|d| d.norm()).fold(0.0, f64::max);
    println!("largest target deformation: {peak:.4} m");

    let out = std::env::args().nth(1).map(std::path::PathBuf::from);
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        write_tensor(&dir.join("canon.pos.f32"), &z.canonical.to_tensor())?;
        write_pgm(&dir.join("canon.mask.pgm"), 256, 192, &z.canonical_mask.to_bytes())?;
        write_tensor(&dir.join("obs.pos.f32"), &z.observed.to_tensor())?;
        write_pgm(&dir.join("obs.mask.pgm"), 256, 192, &z.observed_mask.to_bytes())?;
        write_tensor(&dir.join("target.f32"), &target.to_tensor())?;
        println!("wrote oracle inputs and target to {}", dir.display());
    }
    Ok(())
}
