//! Deformation oracles: the component that maps a pair of zoomed renders to
//! a per-pixel deformation image.
//!
//! `GroundTruth` returns the rasterized target, `Noisy` perturbs it with
//! seeded Gaussian noise, and `External` hands the inputs to a child process
//! through files so that a trained network can be plugged in.
//!
//! External protocol: the command is run as `sh -c '<command> "$1"' sh <dir>`
//! where `<dir>` contains `canon.pos.f32`, `canon.mask.pgm`, `obs.pos.f32`,
//! `obs.mask.pgm` (tensors with `.json` sidecars) and `request.json`. The
//! process must write `output.f32` plus `output.f32.json`, an H x W x 3 tensor
//! holding deformations multiplied by the request's `scale`.

use std::path::Path;
use std::process::Command;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{DeformationImage, ZoomResult};
use crate::io::{read_tensor, write_pgm, write_tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    GroundTruth,
    Noisy,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub kind: OracleKind,
    /// Standard deviation in meters, for `Noisy`.
    pub noise_sigma: f64,
    /// Shell command, for `External`.
    pub command: Option<String>,
}

impl OracleSpec {
    pub fn ground_truth() -> Self {
        Self {
            kind: OracleKind::GroundTruth,
            noise_sigma: 0.0,
            command: None,
        }
    }

    pub fn noisy(sigma: f64) -> Self {
        Self {
            kind: OracleKind::Noisy,
            noise_sigma: sigma,
            command: None,
        }
    }

    pub fn external(command: impl Into<String>) -> Self {
        Self {
            kind: OracleKind::External,
            noise_sigma: 0.0,
            command: Some(command.into()),
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            out.push(format!("oracle noise sigma must be nonnegative, got {}", self.noise_sigma));
        }
        if self.kind == OracleKind::External && self.command.as_deref().is_none_or(|c| c.trim().is_empty()) {
            out.push("external oracle needs a non-empty command".into());
        }
        out
    }

    /// Whether inference consumes the ground-truth target.
    pub fn needs_target(&self) -> bool {
        self.kind != OracleKind::External
    }
}

/// Everything an oracle may look at for one view.
pub struct OracleInput<'a> {
    pub zoom: &'a ZoomResult,
    /// Rasterized ground truth on the zoomed canonical render.
    pub target: Option<&'a DeformationImage>,
    /// Factor applied to deformations crossing the process boundary.
    pub scale: f64,
}

#[derive(Serialize)]
struct Request<'a> {
    resolution: [usize; 2],
    scale: f64,
    canonical_render: &'a str,
    canonical_mask: &'a str,
    observed_render: &'a str,
    observed_mask: &'a str,
    output: &'a str,
}

/// Deformation image on the zoomed canonical render, in meters with zero
/// background. Deterministic given `(spec, input, seed)`.
pub fn infer(spec: &OracleSpec, input: &OracleInput, seed: u64) -> Result<DeformationImage> {
    if let Some(v) = spec.violations().first() {
        return Err(Error::InvalidConfig(v.clone()));
    }
    match spec.kind {
        OracleKind::GroundTruth => target(input).cloned(),
        OracleKind::Noisy => {
            let mut out = target(input)?.clone();
            if spec.noise_sigma > 0.0 {
                let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mask = out.mask().to_vec();
                for (d, m) in out.data_mut().iter_mut().zip(mask) {
                    if m {
                        for k in 0..3 {
                            d[k] += normal.sample(&mut rng);
                        }
                    }
                }
            }
            Ok(out)
        }
        OracleKind::External => run_external(spec.command.as_deref().unwrap_or_default(), input),
    }
}

fn target<'a>(input: &OracleInput<'a>) -> Result<&'a DeformationImage> {
    input
        .target
        .ok_or_else(|| Error::Oracle("ground-truth target unavailable for this sample".into()))
}

fn run_external(command: &str, input: &OracleInput) -> Result<DeformationImage> {
    let dir = tempfile::Builder::new()
        .prefix("morphfield-oracle-")
        .tempdir()
        .map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let zoom = input.zoom;
    let (w, h) = (zoom.canonical.width(), zoom.canonical.height());
    write_request(dir.path(), input)?;

    let output = Command::new("sh")
        .arg("-c")
        .arg(format!("{command} \"$1\""))
        .arg("sh")
        .arg(dir.path())
        .output()
        .map_err(|e| Error::Oracle(format!("cannot start `{command}`: {e}")))?;
    if !output.status.success() {
        return Err(Error::Oracle(format!(
            "`{command}` exited with {}: {}",
            output.status,
            String::from_utf8_lossy(&output.stderr).trim()
        )));
    }
    let tensor = read_tensor(&dir.path().join("output.f32")).map_err(|e| Error::Oracle(format!("bad output from `{command}`: {e}")))?;
    if tensor.header.shape != [h, w, 3] {
        return Err(Error::Oracle(format!(
            "`{command}` produced shape {:?}, expected [{h}, {w}, 3]",
            tensor.header.shape
        )));
    }
    if tensor.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Oracle(format!("`{command}` produced non-finite values")));
    }
    DeformationImage::from_tensor(&tensor, zoom.canonical.mask().to_vec(), input.scale).map(|d| d.with_scale(1.0))
}

/// Writes the four inputs and `request.json` into `dir`.
pub fn write_request(dir: &Path, input: &OracleInput) -> Result<()> {
    let zoom = input.zoom;
    let (w, h) = (zoom.canonical.width(), zoom.canonical.height());
    write_tensor(&dir.join("canon.pos.f32"), &zoom.canonical.to_tensor())?;
    write_pgm(&dir.join("canon.mask.pgm"), w, h, &zoom.canonical_mask.to_bytes())?;
    write_tensor(&dir.join("obs.pos.f32"), &zoom.observed.to_tensor())?;
    write_pgm(&dir.join("obs.mask.pgm"), w, h, &zoom.observed_mask.to_bytes())?;
    let request = Request {
        resolution: [w, h],
        scale: input.scale,
        canonical_render: "canon.pos.f32",
        canonical_mask: "canon.mask.pgm",
        observed_render: "obs.pos.f32",
        observed_mask: "obs.mask.pgm",
        output: "output.f32",
    };
    let path = dir.join("request.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&request).expect("request serializes")).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{zoom, PositionImage};
    use crate::geometry::Point;
    use nalgebra::Vector3;

    fn fixture() -> (ZoomResult, DeformationImage) {
        let mut obs = PositionImage::empty(160, 120);
        let mut can = PositionImage::empty(160, 120);
        for y in 10..110 {
            for x in 10..150 {
                obs.set(x, y, Point::new(x as f64, y as f64, 1.0));
                can.set(x, y, Point::new(x as f64, y as f64, 2.0));
            }
        }
        let z = zoom(&obs, &can, (140, 100)).unwrap();
        let data = z
            .canonical
            .data()
            .iter()
            .map(|p| Vector3::new(0.001 * p.x, -0.002, 0.0005 * p.y))
            .collect();
        let t = DeformationImage::new(140, 100, data, z.canonical.mask().to_vec(), 1.0).unwrap();
        (z, t)
    }

    #[test]
    fn ground_truth_and_zero_noise_return_target() {
        let (z, t) = fixture();
        let input = OracleInput {
            zoom: &z,
            target: Some(&t),
            scale: 1000.0,
        };
        assert_eq!(infer(&OracleSpec::ground_truth(), &input, 0).unwrap(), t);
        assert_eq!(infer(&OracleSpec::noisy(0.0), &input, 5).unwrap(), t);
    }

    #[test]
    fn noise_statistics_and_determinism() {
        let (z, t) = fixture();
        let input = OracleInput {
            zoom: &z,
            target: Some(&t),
            scale: 1000.0,
        };
        let s = 0.003;
        let a = infer(&OracleSpec::noisy(s), &input, 11).unwrap();
        assert_eq!(a, infer(&OracleSpec::noisy(s), &input, 11).unwrap());
        assert_ne!(a, infer(&OracleSpec::noisy(s), &input, 12).unwrap());
        let dev: Vec<f64> = a
            .data()
            .iter()
            .zip(t.data())
            .zip(a.mask())
            .filter(|(_, &m)| m)
            .map(|((x, y), _)| x.x - y.x)
            .collect();
        assert!(dev.len() >= 10_000);
        let mean = dev.iter().sum::<f64>() / dev.len() as f64;
        let sd = (dev.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (dev.len() - 1) as f64).sqrt();
        assert!(sd > 0.9 * s && sd < 1.1 * s, "sd {sd}");
        for (d, m) in a.data().iter().zip(a.mask()) {
            if !m {
                assert_eq!(*d, Vector3::zeros());
            }
        }
    }

    #[test]
    fn missing_target_is_an_oracle_error() {
        let (z, _) = fixture();
        let input = OracleInput {
            zoom: &z,
            target: None,
            scale: 1000.0,
        };
        assert!(matches!(infer(&OracleSpec::ground_truth(), &input, 0), Err(Error::Oracle(_))));
    }

    #[test]
    fn spec_validation() {
        assert!(OracleSpec::noisy(-1.0).violations().len() == 1);
        assert!(OracleSpec::external("  ").violations().len() == 1);
        assert!(OracleSpec::ground_truth().violations().is_empty());
    }

    #[test]
    fn failing_command_reports_stderr() {
        let (z, t) = fixture();
        let input = OracleInput {
            zoom: &z,
            target: Some(&t),
            scale: 1000.0,
        };
        match infer(&OracleSpec::external("echo broken >&2; exit 3; true"), &input, 0) {
            Err(Error::Oracle(msg)) => assert!(msg.contains("broken"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(infer(&OracleSpec::external("true"), &input, 0), Err(Error::Oracle(_))));
    }
}
