#![allow(dead_code)]

use std::path::Path;

use morphfield::io::write_mesh;
use morphfield::synthetic::{SyntheticCategory, SyntheticConfig};

/// Small category: coarse canonical cloud so CPD runs are quick.
pub fn category(count: usize) -> SyntheticCategory {
    let config = SyntheticConfig {
        rings: 10,
        segments: 14,
        leaf: 0.4,
        surface_samples: 4000,
        amplitude: 0.25,
        seed: 21,
        ..SyntheticConfig::default()
    };
    SyntheticCategory::generate(config, count).unwrap()
}

/// Writes `canonical.ply`, `instances/inst_<k>.ply` and `held_out.ply`.
pub fn write_category(dir: &Path, category: &SyntheticCategory) {
    std::fs::create_dir_all(dir.join("instances")).unwrap();
    write_mesh(&dir.join("canonical.ply"), &category.canonical_mesh).unwrap();
    for (k, inst) in category.instances.iter().enumerate() {
        write_mesh(&dir.join("instances").join(format!("inst_{k}.ply")), &inst.mesh).unwrap();
    }
    let held = category.instance(&[0.7, -0.6, 0.5], 404).unwrap();
    write_mesh(&dir.join("held_out.ply"), &held.mesh).unwrap();
}
