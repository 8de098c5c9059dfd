//! Per-slice probabilities to 3D bounding boxes.
//!
//! For each structure the mask `B[i,j,k] = s[i] ≥ t ∧ c[j] ≥ t ∧ a[k] ≥ t`
//! is built from the sagittal, coronal and axial profiles, reduced to its
//! largest 6-connected component, and the component's extents form the box.

use std::fs;
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::model::{BobNet, MIN_SLICE_EXTENT};
use crate::slicing::{prepare_slice, Plane};
use crate::volume::{BBox3D, Volume3D};

/// Default presence threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionConfig {
    /// Presence threshold `t`, in (0, 1). Components use 6-connectivity.
    pub threshold: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl FusionConfig {
    pub fn new(threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::invalid(format!("threshold {threshold} outside (0, 1)")));
        }
        Ok(FusionConfig { threshold })
    }
}

/// Presence probabilities of one structure along each plane normal:
/// `sagittal[i]`, `coronal[j]`, `axial[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureProfile {
    pub name: String,
    pub sagittal: Vec<f64>,
    pub coronal: Vec<f64>,
    pub axial: Vec<f64>,
}

impl StructureProfile {
    pub fn plane(&self, plane: Plane) -> &[f64] {
        match plane {
            Plane::Sagittal => &self.sagittal,
            Plane::Coronal => &self.coronal,
            Plane::Axial => &self.axial,
        }
    }

    fn plane_mut(&mut self, plane: Plane) -> &mut Vec<f64> {
        match plane {
            Plane::Sagittal => &mut self.sagittal,
            Plane::Coronal => &mut self.coronal,
            Plane::Axial => &mut self.axial,
        }
    }
}

/// Profiles of all structures for one volume.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionProfile {
    pub dims: [usize; 3],
    pub structures: Vec<StructureProfile>,
}

impl DetectionProfile {
    fn empty(dims: [usize; 3], names: &[String]) -> Self {
        DetectionProfile {
            dims,
            structures: names
                .iter()
                .map(|n| StructureProfile {
                    name: n.clone(),
                    sagittal: vec![0.0; dims[0]],
                    coronal: vec![0.0; dims[1]],
                    axial: vec![0.0; dims[2]],
                })
                .collect(),
        }
    }

    /// Indicator profiles of reference boxes: 1 inside the box extent along
    /// each normal, 0 elsewhere.
    pub fn ideal(dims: [usize; 3], boxes: &[BBox3D]) -> Self {
        let names: Vec<String> = boxes.iter().map(|b| b.name.clone()).collect();
        let mut p = Self::empty(dims, &names);
        for (sp, b) in p.structures.iter_mut().zip(boxes) {
            for plane in Plane::ALL {
                let axis = plane.normal_axis();
                for (i, v) in sp.plane_mut(plane).iter_mut().enumerate() {
                    *v = if b.lo[axis] <= i && i <= b.hi[axis] { 1.0 } else { 0.0 };
                }
            }
        }
        p
    }

    /// `plane,slice_index,structure,probability` rows, six decimals.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["plane", "slice_index", "structure", "probability"])
            .map_err(csv_err)?;
        for plane in Plane::ALL {
            for i in 0..self.dims[plane.normal_axis()] {
                for s in &self.structures {
                    w.write_record([
                        plane.name(),
                        &i.to_string(),
                        &s.name,
                        &format!("{:.6}", s.plane(plane)[i]),
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}

/// One row of a profile CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileRow {
    pub plane: Plane,
    pub slice_index: usize,
    pub structure: String,
    pub probability: f64,
}

/// Parses a profile CSV (header `plane,slice_index,structure,probability`).
pub fn parse_profile_csv(text: &str, origin: &str) -> Result<Vec<ProfileRow>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| Error::format(origin, e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != ["plane", "slice_index", "structure", "probability"] {
        return Err(Error::format(
            origin,
            "header must be plane,slice_index,structure,probability",
        ));
    }
    let mut rows = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(origin, e.to_string()))?;
        let at = |what: &str| Error::format(origin, format!("row {}: bad {what}", n + 2));
        let plane = rec[0].parse().map_err(|_| at("plane"))?;
        let slice_index = rec[1].parse().map_err(|_| at("slice_index"))?;
        let probability: f64 = rec[3].parse().map_err(|_| at("probability"))?;
        if !(0.0..=1.0).contains(&probability) {
            return Err(at("probability"));
        }
        rows.push(ProfileRow {
            plane,
            slice_index,
            structure: rec[2].to_string(),
            probability,
        });
    }
    Ok(rows)
}

pub fn read_profile_csv(path: impl AsRef<Path>) -> Result<Vec<ProfileRow>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_profile_csv(&text, &path.display().to_string())
}

/// Binary voxel mask, x fastest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FusionMask {
    dims: [usize; 3],
    bits: Vec<bool>,
}

impl FusionMask {
    pub fn empty(dims: [usize; 3]) -> Self {
        FusionMask {
            dims,
            bits: vec![false; dims.iter().product()],
        }
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut m = Self::empty(dims);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let idx = m.index(i, j, k);
                    m.bits[idx] = f(i, j, k);
                }
            }
        }
        m
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.bits[self.index(i, j, k)]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    /// Set voxels as `(i, j, k)`, in storage order.
    pub fn voxels(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(idx, _)| self.coords(idx))
    }
}

/// Outer-product thresholding of one structure's profile over `dims`.
pub fn build_mask(profile: &StructureProfile, dims: [usize; 3], config: &FusionConfig) -> Result<FusionMask> {
    for plane in Plane::ALL {
        let n = dims[plane.normal_axis()];
        if profile.plane(plane).len() != n {
            return Err(Error::invalid(format!(
                "{} profile of {} has {} entries, volume has {n} slices",
                plane,
                profile.name,
                profile.plane(plane).len()
            )));
        }
    }
    let t = config.threshold;
    let s: Vec<bool> = profile.sagittal.iter().map(|&p| p >= t).collect();
    let c: Vec<bool> = profile.coronal.iter().map(|&p| p >= t).collect();
    let a: Vec<bool> = profile.axial.iter().map(|&p| p >= t).collect();
    Ok(FusionMask::from_fn(dims, |i, j, k| s[i] && c[j] && a[k]))
}

struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
    }
}

/// Keeps the 6-connected component with the most voxels. Equal sizes are
/// resolved in favor of the component whose lexicographically smallest
/// `(i, j, k)` voxel is smallest.
pub fn largest_component(mask: &FusionMask) -> FusionMask {
    let [nx, ny, _] = mask.dims;
    let n = mask.bits.len();
    let mut ds = DisjointSet::new(n);
    for idx in 0..n {
        if !mask.bits[idx] {
            continue;
        }
        let [i, j, k] = mask.coords(idx);
        if i > 0 && mask.bits[idx - 1] {
            ds.union(idx, idx - 1);
        }
        if j > 0 && mask.bits[idx - nx] {
            ds.union(idx, idx - nx);
        }
        if k > 0 && mask.bits[idx - nx * ny] {
            ds.union(idx, idx - nx * ny);
        }
    }
    // Per root: (voxel count, smallest (i, j, k)).
    let mut stats: std::collections::HashMap<usize, (usize, [usize; 3])> = Default::default();
    for idx in (0..n).filter(|&i| mask.bits[i]) {
        let root = ds.find(idx);
        let p = mask.coords(idx);
        let e = stats.entry(root).or_insert((0, p));
        e.0 += 1;
        e.1 = e.1.min(p);
    }
    let best = stats
        .into_iter()
        .min_by(|(_, (ca, pa)), (_, (cb, pb))| cb.cmp(ca).then(pa.cmp(pb)))
        .map(|(root, _)| root);
    let mut out = FusionMask::empty(mask.dims);
    if let Some(root) = best {
        for idx in 0..n {
            if mask.bits[idx] && ds.find(idx) == root {
                out.bits[idx] = true;
            }
        }
    }
    out
}

/// Inclusive extents of the set voxels, or `None` for an empty mask.
pub fn mask_to_bbox(mask: &FusionMask, name: &str, spacing: [f64; 3]) -> Option<BBox3D> {
    let mut it = mask.voxels();
    let first = it.next()?;
    let (mut lo, mut hi) = (first, first);
    for p in it {
        for d in 0..3 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    Some(BBox3D {
        name: name.to_string(),
        lo,
        hi,
        spacing,
    })
}

/// Mask, largest component and box for one structure.
pub fn fuse_structure(
    profile: &StructureProfile,
    dims: [usize; 3],
    spacing: [f64; 3],
    config: &FusionConfig,
) -> Result<Option<BBox3D>> {
    let mask = build_mask(profile, dims, config)?;
    Ok(mask_to_bbox(&largest_component(&mask), &profile.name, spacing))
}

/// Settings for running the network over a whole volume.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalizeConfig {
    pub target_spacing_mm: f64,
    pub fusion: FusionConfig,
    /// Threads used for slice prediction; results do not depend on it.
    pub workers: usize,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        LocalizeConfig {
            target_spacing_mm: 1.5,
            fusion: FusionConfig::default(),
            workers: 1,
        }
    }
}

/// Result of [`localize`].
#[derive(Clone, Debug)]
pub struct Localization {
    /// One entry per structure, `None` where no voxel passed the threshold.
    pub boxes: Vec<(String, Option<BBox3D>)>,
    pub profile: DetectionProfile,
    pub slices: usize,
    pub elapsed: Duration,
}

impl Localization {
    pub fn ms_per_slice(&self) -> f64 {
        self.elapsed.as_secs_f64() * 1e3 / self.slices.max(1) as f64
    }
}

/// Runs the network on every sagittal, coronal and axial slice of `volume`
/// (resampled, normalized, padded to the minimum network input) and
/// collects the presence probabilities by original slice index.
pub fn predict_profile(
    model: &BobNet<f32>,
    volume: &Volume3D,
    names: &[String],
    target_spacing_mm: f64,
    workers: usize,
) -> Result<DetectionProfile> {
    if names.len() != model.num_structures() {
        return Err(Error::invalid(format!(
            "{} structure names for a model with {} outputs",
            names.len(),
            model.num_structures()
        )));
    }
    let dims = volume.dims();
    let tasks: Vec<(Plane, usize)> = Plane::ALL
        .into_iter()
        .flat_map(|p| (0..dims[p.normal_axis()]).map(move |i| (p, i)))
        .collect();
    let run = |chunk: &[(Plane, usize)]| -> Result<Vec<Vec<f64>>> {
        chunk
            .iter()
            .map(|&(plane, i)| {
                let s = prepare_slice(volume, plane, i, target_spacing_mm)?.pad_to_min(MIN_SLICE_EXTENT);
                model.predict_slice(&s.to_tensor())
            })
            .collect()
    };
    let workers = workers.clamp(1, tasks.len().max(1));
    let results: Vec<Vec<f64>> = if workers == 1 {
        run(&tasks)?
    } else {
        let chunk = tasks.len().div_ceil(workers);
        thread::scope(|scope| {
            let handles: Vec<_> = tasks.chunks(chunk).map(|c| scope.spawn(move || run(c))).collect();
            let mut all = Vec::with_capacity(tasks.len());
            for h in handles {
                all.extend(h.join().expect("prediction worker panicked")?);
            }
            Ok::<_, Error>(all)
        })?
    };
    let mut profile = DetectionProfile::empty(dims, names);
    for (&(plane, i), probs) in tasks.iter().zip(results) {
        for (sp, p) in profile.structures.iter_mut().zip(probs) {
            sp.plane_mut(plane)[i] = p;
        }
    }
    Ok(profile)
}

/// Predicts the detection profile of `volume` and fuses it into one box per
/// structure.
pub fn localize(
    model: &BobNet<f32>,
    volume: &Volume3D,
    names: &[String],
    config: &LocalizeConfig,
) -> Result<Localization> {
    let start = Instant::now();
    let profile = predict_profile(model, volume, names, config.target_spacing_mm, config.workers)?;
    let elapsed = start.elapsed();
    let boxes = profile
        .structures
        .iter()
        .map(|sp| {
            fuse_structure(sp, volume.dims(), volume.spacing(), &config.fusion).map(|b| (sp.name.clone(), b))
        })
        .collect::<Result<_>>()?;
    Ok(Localization {
        boxes,
        slices: volume.dims().iter().sum(),
        profile,
        elapsed,
    })
}
