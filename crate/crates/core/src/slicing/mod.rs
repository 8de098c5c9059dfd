//! Slices from the three orthogonal planes, their resampling and labels,
//! plus the training-time augmentation and minibatch assembly.

mod augment;
mod batch;
mod dataset;

use std::fmt;
use std::str::FromStr;

pub use augment::{rotate_augment, rotate_slice, MAX_ROTATION_DEG};
pub use batch::{make_minibatch, nearest_rank, plan_minibatch, Minibatch, MinibatchPlan};
pub use dataset::{
    split_dataset, write_split, Case, Dataset, Split, SplitRole, BOXES_FILE, SPLIT_FILE, VOLUME_HEADER,
};

use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};
use crate::volume::{BBox3D, Volume3D};

/// Fill value for padding and rotation gaps: normalized air.
pub const FILL_VALUE: f32 = -1.0;

/// Intensity window mapped onto [-1, 1].
pub const INTENSITY_WINDOW: (f32, f32) = (-1000.0, 1000.0);

/// Viewing plane, named by its normal axis: sagittal ⟂ x, coronal ⟂ y,
/// axial ⟂ z.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Plane {
    Sagittal,
    Coronal,
    Axial,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Sagittal, Plane::Coronal, Plane::Axial];

    /// Volume axis along the plane normal (0 = x, 1 = y, 2 = z).
    pub fn normal_axis(self) -> usize {
        match self {
            Plane::Sagittal => 0,
            Plane::Coronal => 1,
            Plane::Axial => 2,
        }
    }

    /// Volume axes spanning the slice: (column axis u, row axis v).
    pub fn in_plane_axes(self) -> (usize, usize) {
        match self {
            Plane::Sagittal => (1, 2),
            Plane::Coronal => (0, 2),
            Plane::Axial => (0, 1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Plane::Sagittal => "sagittal",
            Plane::Coronal => "coronal",
            Plane::Axial => "axial",
        }
    }
}

impl fmt::Display for Plane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Plane {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Plane::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown plane {s:?}")))
    }
}

/// One 2D plane of a volume. Pixel `(u, v)` is stored at `v·width + u`.
#[derive(Clone, Debug, PartialEq)]
pub struct Slice2D {
    pub plane: Plane,
    pub index: usize,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
    /// (row, column) spacing in mm, i.e. along v and u.
    pub pixel_spacing_mm: (f64, f64),
}

impl Slice2D {
    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.pixels[v * self.width + u]
    }

    /// `[1, height, width]` network input.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn(&[1, self.height, self.width], |i| T::of(self.pixels[i] as f64))
    }

    /// Pads with [`FILL_VALUE`] so both extents are at least `min`, keeping
    /// the content centered.
    pub fn pad_to_min(&self, min: usize) -> Slice2D {
        let (w, h) = (self.width.max(min), self.height.max(min));
        if (w, h) == (self.width, self.height) {
            return self.clone();
        }
        let (ou, ov) = ((w - self.width) / 2, (h - self.height) / 2);
        let mut pixels = vec![FILL_VALUE; w * h];
        for v in 0..self.height {
            let dst = (v + ov) * w + ou;
            pixels[dst..dst + self.width].copy_from_slice(&self.pixels[v * self.width..(v + 1) * self.width]);
        }
        Slice2D {
            width: w,
            height: h,
            pixels,
            ..self.clone()
        }
    }
}

/// Presence flags, one per structure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SliceLabel {
    pub presence: Vec<bool>,
}

/// Slice `index` of `volume` along `plane`.
pub fn extract_slice(volume: &Volume3D, plane: Plane, index: usize) -> Slice2D {
    let dims = volume.dims();
    let sp = volume.spacing();
    let (ua, va) = plane.in_plane_axes();
    let n = plane.normal_axis();
    let (width, height) = (dims[ua], dims[va]);
    let mut pixels = Vec::with_capacity(width * height);
    let mut p = [0usize; 3];
    p[n] = index;
    for v in 0..height {
        p[va] = v;
        for u in 0..width {
            p[ua] = u;
            pixels.push(volume.get(p[0], p[1], p[2]));
        }
    }
    Slice2D {
        plane,
        index,
        width,
        height,
        pixels,
        pixel_spacing_mm: (sp[va], sp[ua]),
    }
}

/// Every slice along `plane`, in index order.
pub fn extract_slices(volume: &Volume3D, plane: Plane) -> Vec<Slice2D> {
    (0..volume.dims()[plane.normal_axis()])
        .map(|i| extract_slice(volume, plane, i))
        .collect()
}

/// Bilinear sample at continuous pixel coordinates, clamped to the edge.
fn sample_clamped(s: &Slice2D, u: f64, v: f64) -> f32 {
    let u = u.clamp(0.0, (s.width - 1) as f64);
    let v = v.clamp(0.0, (s.height - 1) as f64);
    bilinear(s, u, v)
}

/// Bilinear interpolation at in-range coordinates.
pub(crate) fn bilinear(s: &Slice2D, u: f64, v: f64) -> f32 {
    let u0 = u.floor() as usize;
    let v0 = v.floor() as usize;
    let u1 = (u0 + 1).min(s.width - 1);
    let v1 = (v0 + 1).min(s.height - 1);
    let fu = (u - u0 as f64) as f32;
    let fv = (v - v0 as f64) as f32;
    let top = s.get(u0, v0) * (1.0 - fu) + s.get(u1, v0) * fu;
    let bottom = s.get(u0, v1) * (1.0 - fu) + s.get(u1, v1) * fu;
    top * (1.0 - fv) + bottom * fv
}

/// Resamples a slice to isotropic `target_mm` pixels with bilinear
/// interpolation. Extents become `round(extent · spacing / target_mm)`;
/// pixel centers are aligned.
pub fn resample_slice(slice: &Slice2D, target_mm: f64) -> Result<Slice2D> {
    if !(target_mm > 0.0 && target_mm.is_finite()) {
        return Err(Error::invalid(format!("target spacing {target_mm} must be positive")));
    }
    let (sv, su) = slice.pixel_spacing_mm;
    let width = (slice.width as f64 * su / target_mm).round() as usize;
    let height = (slice.height as f64 * sv / target_mm).round() as usize;
    if width < 1 || height < 1 {
        return Err(Error::invalid(format!(
            "resampling {}x{} to {target_mm} mm leaves an empty slice",
            slice.width, slice.height
        )));
    }
    let (ru, rv) = (target_mm / su, target_mm / sv);
    let mut pixels = Vec::with_capacity(width * height);
    for v in 0..height {
        let sv = (v as f64 + 0.5) * rv - 0.5;
        for u in 0..width {
            let su = (u as f64 + 0.5) * ru - 0.5;
            pixels.push(sample_clamped(slice, su, sv));
        }
    }
    Ok(Slice2D {
        width,
        height,
        pixels,
        pixel_spacing_mm: (target_mm, target_mm),
        ..slice.clone()
    })
}

/// Clamps to [-1000, 1000] and maps affinely onto [-1, 1].
pub fn normalize_intensity(slice: &Slice2D) -> Slice2D {
    let (lo, hi) = INTENSITY_WINDOW;
    let half = (hi - lo) / 2.0;
    let mid = (hi + lo) / 2.0;
    Slice2D {
        pixels: slice.pixels.iter().map(|&v| (v.clamp(lo, hi) - mid) / half).collect(),
        ..slice.clone()
    }
}

/// Extract → resample → normalize: the form in which slices reach the network.
pub fn prepare_slice(volume: &Volume3D, plane: Plane, index: usize, target_mm: f64) -> Result<Slice2D> {
    Ok(normalize_intensity(&resample_slice(&extract_slice(volume, plane, index), target_mm)?))
}

/// Presence of structure `n` iff the slice index lies within box `n`'s
/// inclusive extent along the plane normal.
pub fn label_slice(slice: &Slice2D, boxes: &[BBox3D]) -> SliceLabel {
    let refs: Vec<Option<&BBox3D>> = boxes.iter().map(Some).collect();
    label_position(slice.plane, slice.index, &refs)
}

/// [`label_slice`] for structures that may be missing from a volume.
pub fn label_position(plane: Plane, index: usize, boxes: &[Option<&BBox3D>]) -> SliceLabel {
    let axis = plane.normal_axis();
    SliceLabel {
        presence: boxes
            .iter()
            .map(|b| b.is_some_and(|b| b.lo[axis] <= index && index <= b.hi[axis]))
            .collect(),
    }
}
