//! Non-rigid CPD: warp a sphere by a smooth random field and register the
//! original back onto it.

use morphfield::cpd::{cpd_nonrigid, CpdConfig};
use morphfield::evaluation::registration_error;
use morphfield::{apply_deformation, DeformationField, KernelParams, Point, PointCloud};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let n = 200;
    let y = PointCloud::new(
        (0..n)
            .map(|k| {
                let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                Point::new(r * (golden * k as f64).cos(), r * (golden * k as f64).sin(), z)
            })
            .collect(),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-0.02..0.02));
    let truth = DeformationField::new(y.clone(), w, KernelParams::new(2.0)?)?;
    let x = PointCloud::new(apply_deformation(y.points(), &truth)?)?;

    let result = cpd_nonrigid(&x, &y, &CpdConfig::default())?;
    let t = result.transformed()?;
    println!("iterations: {} (converged: {})", result.iterations, result.converged);
    println!("final sigma^2: {:.3e}", result.sigma2);
    println!("error before: {:.3e}", registration_error(x.points(), y.points()));
    println!("error after:  {:.3e}", registration_error(x.points(), t.points()));
    Ok(())
}
