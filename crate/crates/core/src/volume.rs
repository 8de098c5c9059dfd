//! MetaImage (`.mhd` + `.raw`) volumes and plain-text bounding-box files.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Axis-aligned scalar volume, x fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume3D {
    dims: [usize; 3],
    spacing: [f64; 3],
    voxels: Vec<f32>,
}

impl Volume3D {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], voxels: Vec<f32>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("volume dims {dims:?} must be positive")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid(format!("volume spacing {spacing:?} must be positive")));
        }
        if voxels.len() != dims.iter().product::<usize>() {
            return Err(Error::invalid(format!(
                "{} voxels for dims {dims:?}",
                voxels.len()
            )));
        }
        Ok(Volume3D { dims, spacing, voxels })
    }

    pub fn filled(dims: [usize; 3], spacing: [f64; 3], value: f32) -> Result<Self> {
        Self::new(dims, spacing, vec![value; dims.iter().product()])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn voxels_mut(&mut self) -> &mut [f32] {
        &mut self.voxels
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.voxels[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f32) {
        let i = self.index(x, y, z);
        self.voxels[i] = v;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ElementType {
    Short,
    Float,
}

fn parse_header(text: &str, origin: &str) -> Result<HashMap<String, String>> {
    let mut keys = HashMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(origin, format!("malformed header line {line:?}")))?;
        keys.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(keys)
}

fn required<'a>(keys: &'a HashMap<String, String>, key: &str, origin: &str) -> Result<&'a str> {
    keys.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::format(origin, format!("missing key {key}")))
}

fn parse_triple<T: std::str::FromStr>(value: &str, key: &str, origin: &str) -> Result<[T; 3]> {
    let parts: Vec<T> = value
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::format(origin, format!("bad {key} value {t:?}"))))
        .collect::<Result<_>>()?;
    parts
        .try_into()
        .map_err(|_| Error::format(origin, format!("{key} must have exactly 3 values")))
}

/// Reads a MetaImage volume. Supports `MET_SHORT` and `MET_FLOAT` elements,
/// little-endian, with an external `ElementDataFile` relative to the header.
pub fn load_volume(header_path: impl AsRef<Path>) -> Result<Volume3D> {
    let header_path = header_path.as_ref();
    let origin = header_path.display().to_string();
    let text = fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let keys = parse_header(&text, &origin)?;

    let object = required(&keys, "ObjectType", &origin)?;
    if object != "Image" {
        return Err(Error::format(&origin, format!("ObjectType {object:?} is not Image")));
    }
    let ndims = required(&keys, "NDims", &origin)?;
    if ndims != "3" {
        return Err(Error::format(&origin, format!("NDims must be 3, got {ndims}")));
    }
    let dims: [usize; 3] = parse_triple(required(&keys, "DimSize", &origin)?, "DimSize", &origin)?;
    let spacing: [f64; 3] = parse_triple(
        required(&keys, "ElementSpacing", &origin)?,
        "ElementSpacing",
        &origin,
    )?;
    let etype = match required(&keys, "ElementType", &origin)? {
        "MET_SHORT" => ElementType::Short,
        "MET_FLOAT" => ElementType::Float,
        other => {
            return Err(Error::format(&origin, format!("unsupported ElementType {other}")));
        }
    };
    for key in ["BinaryDataByteOrderMSB", "ElementByteOrderMSB"] {
        if keys.get(key).is_some_and(|v| v.eq_ignore_ascii_case("true")) {
            return Err(Error::format(&origin, format!("{key} = True is not supported")));
        }
    }
    if keys.get("CompressedData").is_some_and(|v| v.eq_ignore_ascii_case("true")) {
        return Err(Error::format(&origin, "CompressedData = True is not supported"));
    }
    let data_file = required(&keys, "ElementDataFile", &origin)?;
    if data_file.eq_ignore_ascii_case("LOCAL") {
        return Err(Error::format(&origin, "ElementDataFile = LOCAL is not supported"));
    }
    let raw_path = header_path.parent().unwrap_or(Path::new(".")).join(data_file);
    let raw = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;

    let count: usize = dims.iter().product();
    let width = match etype {
        ElementType::Short => 2,
        ElementType::Float => 4,
    };
    if raw.len() != count * width {
        return Err(Error::format(
            &origin,
            format!(
                "ElementDataFile holds {} bytes but DimSize needs {}",
                raw.len(),
                count * width
            ),
        ));
    }
    let voxels = match etype {
        ElementType::Short => raw
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32)
            .collect(),
        ElementType::Float => raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    };
    Volume3D::new(dims, spacing, voxels).map_err(|e| Error::format(&origin, e.to_string()))
}

/// Raw file written next to a header: same stem, `.raw` extension.
pub fn raw_path_for(header_path: &Path) -> PathBuf {
    header_path.with_extension("raw")
}

/// Writes `header_path` and its `MET_FLOAT` raw companion.
pub fn write_volume(volume: &Volume3D, header_path: impl AsRef<Path>) -> Result<()> {
    let header_path = header_path.as_ref();
    let raw_path = raw_path_for(header_path);
    let raw_name = raw_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::invalid(format!("bad header path {}", header_path.display())))?;
    let [x, y, z] = volume.dims;
    let [sx, sy, sz] = volume.spacing;
    let header = format!(
        "ObjectType = Image\nNDims = 3\nBinaryData = True\nBinaryDataByteOrderMSB = False\n\
         DimSize = {x} {y} {z}\nElementSpacing = {sx} {sy} {sz}\nElementType = MET_FLOAT\n\
         ElementDataFile = {raw_name}\n"
    );
    let mut raw = Vec::with_capacity(volume.voxels.len() * 4);
    for v in &volume.voxels {
        raw.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&raw_path, raw).map_err(|e| Error::io(&raw_path, e))?;
    fs::write(header_path, header).map_err(|e| Error::io(header_path, e))
}

/// Bounding box with inclusive voxel extents.
#[derive(Clone, Debug, PartialEq)]
pub struct BBox3D {
    pub name: String,
    pub lo: [usize; 3],
    pub hi: [usize; 3],
    pub spacing: [f64; 3],
}

impl BBox3D {
    pub fn new(name: impl Into<String>, lo: [usize; 3], hi: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        let b = BBox3D {
            name: name.into(),
            lo,
            hi,
            spacing,
        };
        if let Some(axis) = (0..3).find(|&d| hi[d] < lo[d]) {
            return Err(Error::invalid(format!(
                "box {}: hi < lo on {}",
                b.name,
                AXIS_NAMES[axis]
            )));
        }
        Ok(b)
    }

    /// Box center in voxel coordinates.
    pub fn center(&self) -> [f64; 3] {
        std::array::from_fn(|d| (self.lo[d] + self.hi[d]) as f64 / 2.0)
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|d| self.lo[d] <= p[d] && p[d] <= self.hi[d])
    }

    /// Checks the box against `volume` and copies its spacing.
    pub fn attach(&mut self, volume: &Volume3D) -> Result<()> {
        let dims = volume.dims();
        if let Some(axis) = (0..3).find(|&d| self.hi[d] >= dims[d]) {
            return Err(Error::invalid(format!(
                "box {} exceeds volume extent {} on {}",
                self.name, dims[axis], AXIS_NAMES[axis]
            )));
        }
        self.spacing = volume.spacing();
        Ok(())
    }
}

const AXIS_NAMES: [&str; 3] = ["x", "y", "z"];

/// Parses `name x_lo x_hi y_lo y_hi z_lo z_hi` lines; `#` starts a comment.
/// Spacing is left at 1 mm until [`BBox3D::attach`] is called.
pub fn parse_boxes(text: &str, origin: &str) -> Result<Vec<BBox3D>> {
    let mut boxes = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let at = |msg: String| Error::format(origin, format!("line {}: {msg}", lineno + 1));
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 7 {
            return Err(at(format!("expected 7 fields, found {}", tokens.len())));
        }
        let mut v = [0usize; 6];
        for (slot, tok) in v.iter_mut().zip(&tokens[1..]) {
            *slot = tok
                .parse()
                .map_err(|_| at(format!("bad index {tok:?}")))?;
        }
        let b = BBox3D::new(tokens[0], [v[0], v[2], v[4]], [v[1], v[3], v[5]], [1.0; 3])
            .map_err(|e| at(e.to_string()))?;
        boxes.push(b);
    }
    Ok(boxes)
}

pub fn load_boxes(path: impl AsRef<Path>) -> Result<Vec<BBox3D>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_boxes(&text, &path.display().to_string())
}

pub fn format_boxes(boxes: &[BBox3D]) -> Result<String> {
    let mut out = String::new();
    for b in boxes {
        if b.name.is_empty() || b.name.contains(char::is_whitespace) || b.name.contains('#') {
            return Err(Error::invalid(format!("structure name {:?} cannot be written", b.name)));
        }
        writeln!(
            out,
            "{} {} {} {} {} {} {}",
            b.name, b.lo[0], b.hi[0], b.lo[1], b.hi[1], b.lo[2], b.hi[2]
        )
        .expect("write to string");
    }
    Ok(out)
}

pub fn write_boxes(path: impl AsRef<Path>, boxes: &[BBox3D]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_boxes(boxes)?).map_err(|e| Error::io(path, e))
}
