mod common;

use std::fs;

use morphfield::dataset::{generate_dataset, read_manifest, regenerate_sample, CategorySpec, DatasetConfig, DatasetSummary, Split};
use morphfield::geometry::Intrinsics;
use morphfield::imaging::SplatConfig;
use morphfield::io::{read_pgm, read_tensor};

fn spec() -> CategorySpec {
    let category = common::category(3);
    CategorySpec::new(
        category.canonical_mesh.clone(),
        category.canonical.clone(),
        category.instances.iter().map(|i| i.mesh.clone()).collect(),
        category.instances.iter().map(|i| i.cloud.clone()).collect(),
        category.instances.iter().map(|i| i.field.clone()).collect(),
    )
    .unwrap()
}

fn config() -> DatasetConfig {
    DatasetConfig {
        rhos: vec![0.0, 0.5],
        views: 3,
        intrinsics: Intrinsics::with_vertical_fov(80, 60, 45.0),
        zoom: (40, 30),
        splat: SplatConfig {
            density: 6.0,
            ..SplatConfig::default()
        },
        seed: 5,
        ..DatasetConfig::default()
    }
}

#[test]
fn layout_manifest_and_regeneration() {
    let spec = spec();
    let cfg = config();
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("data");
    let summary = generate_dataset(&spec, &cfg, &out).unwrap();
    assert_eq!(summary.samples, 3 * 2 * 3);
    assert_eq!(summary.skipped, 0);
    assert!(!root.path().join("data.partial").exists());

    let on_disk: DatasetSummary = serde_json::from_slice(&fs::read(out.join("dataset.json")).unwrap()).unwrap();
    assert_eq!(on_disk, summary);

    let records = read_manifest(&out.join("manifest.jsonl")).unwrap();
    assert_eq!(records.len(), 18);
    let mut keys: Vec<_> = records.iter().map(|r| (r.instance_index, r.rho_index, r.view_index)).collect();
    keys.sort();
    keys.dedup();
    assert_eq!(keys.len(), 18);
    assert!(records.iter().any(|r| r.split == Split::Train));

    for r in &records {
        assert!(r.files.target.starts_with(&format!("{}/{}/{}/", r.instance_index, r.rho, r.view_index)));
        let target = read_tensor(&out.join(&r.files.target)).unwrap();
        assert_eq!(target.header.shape, vec![30, 40, 3]);
        let (w, h, _) = read_pgm(&out.join(&r.files.canonical_mask)).unwrap();
        assert_eq!((w, h), (40, 30));
        // targets vanish where the zoomed canonical render is background
        let canon = read_tensor(&out.join(&r.files.canonical_render)).unwrap();
        for (p, t) in canon.data.chunks(3).zip(target.data.chunks(3)) {
            if p == [0.0, 0.0, 0.0] {
                assert_eq!(t, &[0.0, 0.0, 0.0]);
            }
        }
        assert!(r.crop.is_some());
    }

    let again = tempfile::tempdir().unwrap();
    for r in records.iter().step_by(5) {
        regenerate_sample(&spec, &cfg, r, again.path()).unwrap();
        for rel in [&r.files.canonical_render, &r.files.canonical_mask, &r.files.observed_render, &r.files.observed_mask, &r.files.target] {
            assert_eq!(fs::read(out.join(rel)).unwrap(), fs::read(again.path().join(rel)).unwrap(), "{rel}");
        }
        let side = format!("{}.json", r.files.target);
        assert_eq!(fs::read(out.join(&side)).unwrap(), fs::read(again.path().join(&side)).unwrap());
    }
}

#[test]
fn existing_output_is_refused() {
    let root = tempfile::tempdir().unwrap();
    assert!(generate_dataset(&spec(), &config(), root.path()).is_err());
}

#[test]
fn identical_runs_produce_identical_manifests() {
    let spec = spec();
    let cfg = DatasetConfig {
        rhos: vec![0.25],
        views: 2,
        ..config()
    };
    let root = tempfile::tempdir().unwrap();
    generate_dataset(&spec, &cfg, &root.path().join("a")).unwrap();
    generate_dataset(&spec, &cfg, &root.path().join("b")).unwrap();
    assert_eq!(
        fs::read(root.path().join("a/manifest.jsonl")).unwrap(),
        fs::read(root.path().join("b/manifest.jsonl")).unwrap()
    );
}
