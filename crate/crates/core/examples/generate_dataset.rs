//! Render a small training corpus for a synthetic category and regenerate
//! one sample from its manifest record.
//!
//! `cargo run --release --example generate_dataset -- [OUT_DIR]`

use morphfield::dataset::{generate_dataset, read_manifest, regenerate_sample, CategorySpec, DatasetConfig};
use morphfield::synthetic::{SyntheticCategory, SyntheticConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let category = SyntheticCategory::generate(SyntheticConfig::default(), 4)?;
    let spec = CategorySpec::new(
        category.canonical_mesh.clone(),
        category.canonical.clone(),
        category.instances.iter().map(|i| i.mesh.clone()).collect(),
        category.instances.iter().map(|i| i.cloud.clone()).collect(),
        category.instances.iter().map(|i| i.field.clone()).collect(),
    )?;
    let config = DatasetConfig {
        views: 6,
        ..DatasetConfig::default()
    };
    let tmp = tempfile::tempdir()?;
    let out = match std::env::args().nth(1) {
        Some(p) => std::path::PathBuf::from(p),
        None => tmp.path().join("dataset"),
    };
    println!("expected samples: {}", config.sample_count(spec.len()));
    let summary = generate_dataset(&spec, &config, &out)?;
    println!("wrote {} samples ({} skipped) to {}", summary.samples, summary.skipped, out.display());

    let records = read_manifest(&out.join("manifest.jsonl"))?;
    let record = &records[records.len() / 2];
    let again = tmp.path().join("again");
    regenerate_sample(&spec, &config, record, &again)?;
    let same = std::fs::read(out.join(&record.files.target))? == std::fs::read(again.join(&record.files.target))?;
    println!(
        "sample {}/{}/{} ({:?}) regenerates byte-identically: {same}",
        record.instance_index, record.rho, record.view_index, record.split
    );
    Ok(())
}
