//! Synthetic volumes with geometric structures and exact reference boxes.
//!
//! Shapes are defined on integer voxel coordinates, so the reference box
//! `center ± radii` is always tight against the rasterized shape.

use std::fs;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::slicing::{split_dataset, write_split, Split, BOXES_FILE, SPLIT_FILE, VOLUME_HEADER};
use crate::volume::{write_boxes, write_volume, BBox3D, Volume3D};

/// Structures the randomizer knows how to place.
pub const KNOWN_STRUCTURES: [&str; 2] = ["heart", "aorta"];

/// Shapes are rasterized at voxel centers with half a voxel added to each
/// radius, so the outermost layer `center ± r` is a cross-section rather
/// than a single voxel, while `center ± (r + 1)` stays outside.
#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    /// Voxel `p` is inside iff `Σ ((p − center) / (radii + ½))² ≤ 1`.
    Ellipsoid { center: [usize; 3], radii: [usize; 3] },
    /// Cylinder along `axis`: inside iff the in-plane distance to `center`
    /// is at most `radius + ½` and `|p_axis − center_axis| ≤ half_length`.
    Tube {
        axis: usize,
        center: [usize; 3],
        radius: usize,
        half_length: usize,
    },
}

impl Shape {
    pub fn contains(&self, p: [usize; 3]) -> bool {
        let off = |c: &[usize; 3], d: usize| p[d] as f64 - c[d] as f64;
        match self {
            Shape::Ellipsoid { center, radii } => {
                (0..3).map(|d| (off(center, d) / (radii[d] as f64 + 0.5)).powi(2)).sum::<f64>() <= 1.0
            }
            Shape::Tube {
                axis,
                center,
                radius,
                half_length,
            } => {
                let r2: f64 = (0..3).filter(|d| d != axis).map(|d| off(center, d).powi(2)).sum();
                r2 <= (*radius as f64 + 0.5).powi(2) && off(center, *axis).abs() <= *half_length as f64
            }
        }
    }

    /// Inclusive `(lo, hi)` of the shape; may exceed `dims` if invalid.
    pub fn extent(&self) -> ([i64; 3], [i64; 3]) {
        let (center, half) = match self {
            Shape::Ellipsoid { center, radii } => (*center, *radii),
            Shape::Tube {
                axis,
                center,
                radius,
                half_length,
            } => {
                let mut h = [*radius; 3];
                h[*axis] = *half_length;
                (*center, h)
            }
        };
        let lo = std::array::from_fn(|d| center[d] as i64 - half[d] as i64);
        let hi = std::array::from_fn(|d| center[d] as i64 + half[d] as i64);
        (lo, hi)
    }

    fn validate(&self, dims: [usize; 3]) -> Result<()> {
        if let Shape::Ellipsoid { radii, .. } = self {
            if radii.contains(&0) {
                return Err(Error::invalid("ellipsoid radii must be positive"));
            }
        }
        if let Shape::Tube { axis, .. } = self {
            if *axis > 2 {
                return Err(Error::invalid(format!("tube axis {axis} out of range")));
            }
        }
        let (lo, hi) = self.extent();
        for d in 0..3 {
            if lo[d] < 0 || hi[d] >= dims[d] as i64 {
                return Err(Error::invalid(format!(
                    "shape {self:?} exceeds volume dims {dims:?} on axis {d}"
                )));
            }
        }
        Ok(())
    }
}

/// Elliptic cross-section in x/y running through every z slice.
#[derive(Clone, Debug, PartialEq)]
pub struct Body {
    pub center: [usize; 2],
    pub radii: [usize; 2],
    pub intensity: f32,
}

impl Body {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        let t = |p: usize, d: usize| (p as f64 - self.center[d] as f64) / self.radii[d] as f64;
        t(x, 0).powi(2) + t(y, 1).powi(2) <= 1.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StructureSpec {
    pub name: String,
    pub shape: Shape,
    pub intensity: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Value outside the body, or everywhere when there is none.
    pub background: f32,
    pub body: Option<Body>,
    pub noise_sigma: f32,
    /// Target structures, painted in order (later ones win on overlap).
    pub structures: Vec<StructureSpec>,
    /// Unlabeled shapes, painted before the targets.
    pub distractors: Vec<(Shape, f32)>,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::invalid(format!("empty phantom dims {:?}", self.dims)));
        }
        if !self.spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::invalid(format!("bad spacing {:?}", self.spacing)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid(format!("bad noise sigma {}", self.noise_sigma)));
        }
        if let Some(b) = &self.body {
            if b.radii.contains(&0) {
                return Err(Error::invalid("body radii must be positive"));
            }
        }
        for s in &self.structures {
            s.shape.validate(self.dims)?;
        }
        for (d, _) in &self.distractors {
            d.validate(self.dims)?;
        }
        Ok(())
    }
}

/// Rasterizes `spec`, adds Gaussian noise and returns the reference boxes
/// of the target structures.
pub fn gen_phantom(spec: &PhantomSpec, seed: u64) -> Result<(Volume3D, Vec<BBox3D>)> {
    spec.validate()?;
    let mut vol = Volume3D::filled(spec.dims, spec.spacing, spec.background)?;
    if let Some(body) = &spec.body {
        let [nx, ny, nz] = spec.dims;
        for y in 0..ny {
            for x in 0..nx {
                if body.contains(x, y) {
                    (0..nz).for_each(|z| vol.set(x, y, z, body.intensity));
                }
            }
        }
    }
    let painted = spec
        .distractors
        .iter()
        .map(|(s, v)| (s, *v))
        .chain(spec.structures.iter().map(|s| (&s.shape, s.intensity)));
    for (shape, value) in painted {
        let (lo, hi) = shape.extent();
        for z in lo[2] as usize..=hi[2] as usize {
            for y in lo[1] as usize..=hi[1] as usize {
                for x in lo[0] as usize..=hi[0] as usize {
                    if shape.contains([x, y, z]) {
                        vol.set(x, y, z, value);
                    }
                }
            }
        }
    }
    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0f32, spec.noise_sigma).expect("sigma validated");
        for v in vol.voxels_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    let boxes = spec
        .structures
        .iter()
        .map(|s| {
            let (lo, hi) = s.shape.extent();
            BBox3D::new(s.name.clone(), lo.map(|v| v as usize), hi.map(|v| v as usize), spec.spacing)
        })
        .collect::<Result<_>>()?;
    Ok((vol, boxes))
}

/// Draws phantom specs: a soft-tissue body surrounded by air holding an
/// ellipsoid "heart", a z-aligned tube "aorta" and a few darker unlabeled
/// blobs.
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomRandomizer {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Subset of [`KNOWN_STRUCTURES`] to place.
    pub structures: Vec<String>,
    pub max_distractors: usize,
    /// Noise sigma as a fraction of the smallest target/background contrast.
    pub noise_fraction: f32,
}

impl Default for PhantomRandomizer {
    fn default() -> Self {
        PhantomRandomizer {
            dims: [64, 64, 64],
            spacing: [1.0, 1.0, 2.5],
            structures: KNOWN_STRUCTURES.iter().map(|s| s.to_string()).collect(),
            max_distractors: 2,
            noise_fraction: 0.2,
        }
    }
}

fn frac<R: Rng + ?Sized>(rng: &mut R, n: usize, lo: f64, hi: f64) -> usize {
    ((n as f64 * rng.random_range(lo..=hi)).round() as usize).max(1)
}

/// Clamps `c` so that `[c − half, c + half]` lies in `[0, n)`.
fn fit(c: usize, half: usize, n: usize) -> usize {
    c.clamp(half, n.saturating_sub(half + 1).max(half))
}

impl PhantomRandomizer {
    pub fn validate(&self) -> Result<()> {
        if self.structures.is_empty() {
            return Err(Error::invalid("no structures requested"));
        }
        for s in &self.structures {
            if !KNOWN_STRUCTURES.contains(&s.as_str()) {
                return Err(Error::invalid(format!(
                    "unknown structure {s:?} (known: {})",
                    KNOWN_STRUCTURES.join(", ")
                )));
            }
        }
        if self.dims.iter().any(|&d| d < 16) {
            return Err(Error::invalid(format!("phantom dims {:?} below 16", self.dims)));
        }
        if !(0.0..=1.0).contains(&self.noise_fraction) {
            return Err(Error::invalid(format!("noise fraction {} outside [0, 1]", self.noise_fraction)));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PhantomSpec> {
        self.validate()?;
        let [nx, ny, nz] = self.dims;
        let tissue = rng.random_range(-150.0f32..=-50.0);
        let body = Body {
            center: [nx / 2, ny / 2],
            radii: [frac(rng, nx, 0.44, 0.49), frac(rng, ny, 0.40, 0.47)],
            intensity: tissue,
        };

        let heart_radii = [
            frac(rng, nx, 0.12, 0.19),
            frac(rng, ny, 0.12, 0.19),
            frac(rng, nz, 0.08, 0.14),
        ];
        let heart_center: [usize; 3] =
            std::array::from_fn(|d| fit(frac(rng, self.dims[d], 0.38, 0.62), heart_radii[d], self.dims[d]));

        let radius = frac(rng, nx.min(ny), 0.045, 0.07);
        let half_length = frac(rng, nz, 0.15, 0.25);
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let ax = heart_center[0] as f64 + side * nx as f64 * rng.random_range(0.2..=0.3);
        let aorta_center = [
            fit(ax.max(0.0).round() as usize, radius, nx),
            fit(frac(rng, ny, 0.3, 0.7), radius, ny),
            fit(frac(rng, nz, 0.4, 0.6), half_length, nz),
        ];

        let mut structures = Vec::new();
        for name in &self.structures {
            let (shape, intensity) = match name.as_str() {
                "heart" => (
                    Shape::Ellipsoid {
                        center: heart_center,
                        radii: heart_radii,
                    },
                    rng.random_range(450.0f32..=550.0),
                ),
                _ => (
                    Shape::Tube {
                        axis: 2,
                        center: aorta_center,
                        radius,
                        half_length,
                    },
                    rng.random_range(750.0f32..=850.0),
                ),
            };
            structures.push(StructureSpec {
                name: name.clone(),
                shape,
                intensity,
            });
        }

        let n_distractors = rng.random_range(0..=self.max_distractors);
        let distractors = (0..n_distractors)
            .map(|_| {
                let radii: [usize; 3] = std::array::from_fn(|d| frac(rng, self.dims[d], 0.04, 0.08));
                let center = std::array::from_fn(|d| fit(frac(rng, self.dims[d], 0.1, 0.9), radii[d], self.dims[d]));
                (Shape::Ellipsoid { center, radii }, rng.random_range(-600.0f32..=-500.0))
            })
            .collect();

        let contrast = structures
            .iter()
            .map(|s| (s.intensity - tissue).abs())
            .fold(f32::INFINITY, f32::min);
        Ok(PhantomSpec {
            dims: self.dims,
            spacing: self.spacing,
            background: rng.random_range(-1020.0f32..=-980.0),
            body: Some(body),
            noise_sigma: self.noise_fraction * contrast,
            structures,
            distractors,
        })
    }
}

/// Writes `count` phantoms named `case000`, `case001`, ... under `root`,
/// each with `volume.mhd`, `volume.raw` and `boxes.txt`, plus `split.txt`.
pub fn gen_dataset(root: impl AsRef<Path>, count: usize, randomizer: &PhantomRandomizer, seed: u64) -> Result<Split> {
    let root = root.as_ref();
    if count < 10 {
        return Err(Error::invalid(format!("need at least 10 phantoms, got {count}")));
    }
    randomizer.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<String> = (0..count).map(|i| format!("case{i:03}")).collect();
    let split = split_dataset(&ids, &mut rng)?;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for id in &ids {
        let spec = randomizer.sample(&mut rng)?;
        let (volume, boxes) = gen_phantom(&spec, rng.next_u64())?;
        let dir = root.join(id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_volume(&volume, dir.join(VOLUME_HEADER))?;
        write_boxes(dir.join(BOXES_FILE), &boxes)?;
    }
    write_split(root.join(SPLIT_FILE), &ids, &split)?;
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(shape: Shape) -> PhantomSpec {
        PhantomSpec {
            dims: [64; 3],
            spacing: [1.0; 3],
            background: 0.0,
            body: None,
            noise_sigma: 0.0,
            structures: vec![StructureSpec {
                name: "heart".into(),
                shape,
                intensity: 1.0,
            }],
            distractors: vec![],
        }
    }

    #[test]
    fn ellipsoid_box_and_values() {
        let spec = single(Shape::Ellipsoid {
            center: [32, 32, 32],
            radii: [10, 8, 6],
        });
        let (vol, boxes) = gen_phantom(&spec, 1).unwrap();
        assert_eq!((boxes[0].lo, boxes[0].hi), ([22, 24, 26], [42, 40, 38]));
        assert!(vol.voxels().iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(vol.get(42, 32, 32), 1.0);
        assert_eq!(vol.get(43, 32, 32), 0.0);
        // The end layer is a disc, not a point.
        assert_eq!(vol.get(42, 33, 31), 1.0);
        assert_eq!(vol.get(43, 33, 31), 0.0);
    }

    #[test]
    fn shape_outside_rejected() {
        let spec = single(Shape::Tube {
            axis: 2,
            center: [2, 32, 32],
            radius: 3,
            half_length: 5,
        });
        assert!(gen_phantom(&spec, 1).is_err());
    }

    #[test]
    fn seeded_noise_is_deterministic() {
        let mut spec = single(Shape::Ellipsoid {
            center: [32, 32, 32],
            radii: [5, 5, 5],
        });
        spec.noise_sigma = 0.3;
        let a = gen_phantom(&spec, 9).unwrap().0;
        let b = gen_phantom(&spec, 9).unwrap().0;
        let c = gen_phantom(&spec, 10).unwrap().0;
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn randomizer_specs_are_valid() {
        let r = PhantomRandomizer::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let spec = r.sample(&mut rng).unwrap();
            spec.validate().unwrap();
            assert_eq!(spec.structures.len(), 2);
        }
        let bad = PhantomRandomizer {
            structures: vec!["liver".into()],
            ..PhantomRandomizer::default()
        };
        assert!(bad.sample(&mut rng).is_err());
    }
}
