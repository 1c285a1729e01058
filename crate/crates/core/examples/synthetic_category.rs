//! Writes a synthetic category as PLY files for trying the command line:
//!
//! ```text
//! cargo run --release --example synthetic_category -- demo
//! ```
//!
//! produces `demo/canonical.ply`, `demo/instances/inst_<k>.ply`,
//! `demo/held_out/held_<k>.ply` and an identity `demo/pose.json`.

use std::path::PathBuf;

use morphfield::io::{write_mesh, write_pose};
use morphfield::synthetic::{SyntheticCategory, SyntheticConfig};
use morphfield::Pose;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "demo".into()));
    let category = SyntheticCategory::generate(SyntheticConfig::default(), 9)?;
    std::fs::create_dir_all(out.join("instances"))?;
    std::fs::create_dir_all(out.join("held_out"))?;
    write_mesh(&out.join("canonical.ply"), &category.canonical_mesh)?;
    for (k, inst) in category.instances.iter().enumerate() {
        write_mesh(&out.join("instances").join(format!("inst_{k}.ply")), &inst.mesh)?;
    }
    for (k, coeffs) in [[0.9, -0.6, 0.4], [-0.5, 0.8, -0.7]].iter().enumerate() {
        let inst = category.instance(coeffs, 500 + k as u64)?;
        write_mesh(&out.join("held_out").join(format!("held_{k}.ply")), &inst.mesh)?;
    }
    write_pose(&out.join("pose.json"), &Pose::identity())?;
    println!(
        "wrote {} training and 2 held-out instances to {} (canonical cloud: {} points at leaf {})",
        category.instances.len(),
        out.display(),
        category.canonical.len(),
        category.config.leaf
    );
    Ok(())
}
