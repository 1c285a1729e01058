//! Recover a full deformation field from the deltas of a random half of the
//! canonical points.

use morphfield::completion::{Completer, SparseDeltas};
use morphfield::shape_space::{LatentVector, ShapeSpace};
use morphfield::synthetic::{SyntheticCategory, SyntheticConfig};
use morphfield::geometry::flatten_rows;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let category = SyntheticCategory::generate(SyntheticConfig::default(), 0)?;
    // the category's own modes span the space exactly
    let fields: Vec<DMatrix<f64>> = category.modes.iter().flat_map(|m| [m.clone(), -m.clone()]).collect();
    let space = ShapeSpace::from_fields(category.canonical.clone(), category.params(), &fields, category.modes.len())?;
    let truth = category.instance(&[0.8, -0.3, 0.5], 1)?;
    let x0 = LatentVector(space.basis().transpose() * (flatten_rows(truth.field.weights()) - space.mean()));

    let completer = Completer::new(&space)?;
    let deltas = completer.deltas_of(&truth.field)?;
    let mut visible: Vec<usize> = (0..deltas.nrows()).collect();
    visible.shuffle(&mut ChaCha8Rng::seed_from_u64(2));
    for fraction in [1.0, 0.5, 0.1, 0.02] {
        let keep = ((visible.len() as f64 * fraction).ceil() as usize).max(1);
        let sparse = SparseDeltas::subset(&deltas, visible[..keep].to_vec())?;
        let fit = completer.fit(&sparse, 0.0)?;
        let rel = (&fit.latent.0 - &x0.0).norm() / x0.0.norm();
        let full = completer.deltas_of_latent(&fit.latent)?;
        let worst = (&full - &deltas).amax();
        println!(
            "{:>5} visible points: latent relative error {rel:.2e}, worst delta error {worst:.2e} m, rank deficient: {}",
            keep, fit.rank_deficient
        );
    }
    Ok(())
}
