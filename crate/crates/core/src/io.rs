//! File formats: ASCII PLY, raw little-endian tensors with JSON sidecars,
//! binary PGM masks and pose files.
//!
//! Writers go through [`write_atomic`]: the payload lands in a `.partial`
//! sibling first and is renamed into place, so a failed run never leaves a
//! truncated file under the final name.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, Quaternion, Translation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mesh, Point, PointCloud, Pose};

pub(crate) fn partial_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

/// Writes `bytes` to `path.partial`, then renames it to `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = partial_path(path);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- PLY

#[derive(Debug, Clone)]
enum Property {
    Scalar(String),
    List(String),
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

fn parse_ply_header<'a>(path: &Path, lines: &mut impl Iterator<Item = &'a str>) -> Result<Vec<Element>> {
    let bad = |reason: String| Error::format(path, reason);
    match lines.next().map(str::trim) {
        Some("ply") => {}
        _ => return Err(bad("missing 'ply' magic".into())),
    }
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let line = lines.next().ok_or_else(|| bad("header ends before end_header".into()))?.trim();
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => {}
            ["format", other, ..] => return Err(bad(format!("unsupported PLY format '{other}', only ascii"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| bad(format!("bad element count '{count}'")))?,
                properties: Vec::new(),
            }),
            ["property", "list", _, _, name] => elements
                .last_mut()
                .ok_or_else(|| bad("property before element".into()))?
                .properties
                .push(Property::List(name.to_string())),
            ["property", _, name] => elements
                .last_mut()
                .ok_or_else(|| bad("property before element".into()))?
                .properties
                .push(Property::Scalar(name.to_string())),
            _ => return Err(bad(format!("unrecognized header line '{line}'"))),
        }
    }
    Ok(elements)
}

/// Reads an ASCII PLY. Faces with more than three vertices are fan-triangulated.
pub fn read_ply(path: &Path) -> Result<(Vec<Point>, Vec<[usize; 3]>, Option<Vec<[u8; 3]>>)> {
    let bytes = read(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::format(path, "not valid UTF-8 (binary PLY?)"))?;
    let mut lines = text.lines();
    let elements = parse_ply_header(path, &mut lines)?;
    let bad = |reason: String| Error::format(path, reason);

    let mut vertices = Vec::new();
    let mut colors: Vec<[u8; 3]> = Vec::new();
    let mut has_colors = false;
    let mut faces = Vec::new();
    for element in &elements {
        for row in 0..element.count {
            let line = lines.next().ok_or_else(|| bad(format!("missing {} row {row}", element.name)))?;
            let mut tokens = line.split_whitespace();
            let mut xyz = [None; 3];
            let mut rgb = [None; 3];
            for prop in &element.properties {
                match prop {
                    Property::Scalar(name) => {
                        let tok = tokens.next().ok_or_else(|| bad(format!("short {} row {row}", element.name)))?;
                        let value: f64 = tok.parse().map_err(|_| bad(format!("bad number '{tok}'")))?;
                        match name.as_str() {
                            "x" => xyz[0] = Some(value),
                            "y" => xyz[1] = Some(value),
                            "z" => xyz[2] = Some(value),
                            "red" => rgb[0] = Some(value as u8),
                            "green" => rgb[1] = Some(value as u8),
                            "blue" => rgb[2] = Some(value as u8),
                            _ => {}
                        }
                    }
                    Property::List(name) => {
                        let tok = tokens.next().ok_or_else(|| bad(format!("short {} row {row}", element.name)))?;
                        let len: usize = tok.parse().map_err(|_| bad(format!("bad list length '{tok}'")))?;
                        let mut items = Vec::with_capacity(len);
                        for _ in 0..len {
                            let tok = tokens.next().ok_or_else(|| bad(format!("short list in row {row}")))?;
                            items.push(tok.parse::<usize>().map_err(|_| bad(format!("bad index '{tok}'")))?);
                        }
                        if element.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                            if items.len() < 3 {
                                return Err(bad(format!("face {row} has {} vertices", items.len())));
                            }
                            for k in 1..items.len() - 1 {
                                faces.push([items[0], items[k], items[k + 1]]);
                            }
                        }
                    }
                }
            }
            if element.name == "vertex" {
                match xyz {
                    [Some(x), Some(y), Some(z)] => vertices.push(Point::new(x, y, z)),
                    _ => return Err(bad("vertex element lacks x, y or z".into())),
                }
                if let [Some(r), Some(g), Some(b)] = rgb {
                    has_colors = true;
                    colors.push([r, g, b]);
                }
            }
        }
    }
    let colors = (has_colors && colors.len() == vertices.len()).then_some(colors);
    Ok((vertices, faces, colors))
}

pub fn read_point_cloud(path: &Path) -> Result<PointCloud> {
    let (vertices, _, _) = read_ply(path)?;
    PointCloud::new(vertices).map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_mesh(path: &Path) -> Result<Mesh> {
    let (vertices, faces, colors) = read_ply(path)?;
    Mesh::new(vertices, faces, colors).map_err(|e| Error::format(path, e.to_string()))
}

fn ply_text(points: &[Point], faces: &[[usize; 3]], colors: Option<&[[u8; 3]]>) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\ncomment written by morphfield\n");
    let _ = writeln!(s, "element vertex {}", points.len());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    if colors.is_some() {
        s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    if !faces.is_empty() {
        let _ = writeln!(s, "element face {}", faces.len());
        s.push_str("property list uchar int vertex_indices\n");
    }
    s.push_str("end_header\n");
    for (i, p) in points.iter().enumerate() {
        let _ = write!(s, "{} {} {}", p.x, p.y, p.z);
        if let Some(c) = colors {
            let _ = write!(s, " {} {} {}", c[i][0], c[i][1], c[i][2]);
        }
        s.push('\n');
    }
    for f in faces {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}

pub fn write_point_cloud(path: &Path, cloud: &[Point]) -> Result<()> {
    write_atomic(path, ply_text(cloud, &[], None).as_bytes())
}

pub fn write_mesh(path: &Path, mesh: &Mesh) -> Result<()> {
    write_atomic(path, ply_text(mesh.vertices(), mesh.faces(), mesh.colors()).as_bytes())
}

// ---------------------------------------------------------------- tensors

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Sidecar describing a raw tensor file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub semantic: String,
}

/// Dense row-major tensor. Values are held as `f64`; the dtype decides the
/// on-disk width.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub header: TensorHeader,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, dtype: DType, semantic: impl Into<String>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidInput(format!(
                "tensor shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            header: TensorHeader {
                shape,
                dtype,
                semantic: semantic.into(),
            },
            data,
        })
    }

    /// Row-major `rows x cols` tensor from a matrix.
    pub fn from_matrix(m: &DMatrix<f64>, dtype: DType, semantic: impl Into<String>) -> Self {
        let data = (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect();
        Self {
            header: TensorHeader {
                shape: vec![m.nrows(), m.ncols()],
                dtype,
                semantic: semantic.into(),
            },
            data,
        }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        match self.header.shape.as_slice() {
            &[r, c] => Ok(DMatrix::from_row_slice(r, c, &self.data)),
            s => Err(Error::InvalidInput(format!("tensor of shape {s:?} is not a matrix"))),
        }
    }
}

pub fn encode_values(values: &[f64], dtype: DType) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * dtype.size());
    for &v in values {
        match dtype {
            DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

pub fn decode_values(bytes: &[u8], dtype: DType) -> Vec<f64> {
    match dtype {
        DType::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        DType::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
    }
}

/// `data.f32` gets the sidecar `data.f32.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    write_atomic(path, &encode_values(&tensor.data, tensor.header.dtype))?;
    let json = serde_json::to_vec_pretty(&tensor.header).expect("tensor header serializes");
    write_atomic(&sidecar_path(path), &json)
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let side = sidecar_path(path);
    let header: TensorHeader =
        serde_json::from_slice(&read(&side)?).map_err(|e| Error::format(&side, e.to_string()))?;
    let bytes = read(path)?;
    let expected = header.shape.iter().product::<usize>() * header.dtype.size();
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("shape {:?} needs {expected} bytes, file has {}", header.shape, bytes.len()),
        ));
    }
    let data = decode_values(&bytes, header.dtype);
    Ok(Tensor { header, data })
}

// ---------------------------------------------------------------- PGM

/// Binary 8-bit PGM (P5).
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    assert_eq!(pixels.len(), width * height, "pixel count does not match resolution");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    write_atomic(path, &out)
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = read(path)?;
    let bad = |reason: &str| Error::format(path, reason);
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let width: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let height: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    if fields[3] != "255" {
        return Err(bad("only 8-bit PGM is supported"));
    }
    let data = bytes.get(pos..pos + width * height).ok_or_else(|| bad("truncated PGM payload"))?;
    Ok((width, height, data.to_vec()))
}

// ---------------------------------------------------------------- poses

/// On-disk pose: unit quaternion `[w, x, y, z]` and translation in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseFile {
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

impl PoseFile {
    pub fn to_pose(&self) -> Result<Pose> {
        let [w, x, y, z] = self.rotation;
        let q = Quaternion::new(w, x, y, z);
        if !(q.norm() > 1e-12) || !self.translation.iter().all(|t| t.is_finite()) {
            return Err(Error::InvalidInput("pose quaternion must be non-zero and finite".into()));
        }
        Ok(Pose::from_parts(
            Translation3::new(self.translation[0], self.translation[1], self.translation[2]),
            UnitQuaternion::from_quaternion(q),
        ))
    }

    pub fn from_pose(pose: &Pose) -> Self {
        let q = pose.rotation.quaternion();
        PoseFile {
            rotation: [q.w, q.i, q.j, q.k],
            translation: pose.translation.vector.into(),
        }
    }
}

pub fn read_pose(path: &Path) -> Result<Pose> {
    let file: PoseFile = serde_json::from_slice(&read(path)?).map_err(|e| Error::format(path, e.to_string()))?;
    file.to_pose().map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_pose(path: &Path, pose: &Pose) -> Result<()> {
    let json = serde_json::to_vec_pretty(&PoseFile::from_pose(pose)).expect("pose serializes");
    write_atomic(path, &json)
}
