use rand::Rng;

use super::{bilinear, Slice2D, FILL_VALUE};

/// Largest augmentation angle, either direction.
pub const MAX_ROTATION_DEG: f64 = 10.0;

/// Rotates about the slice center by `angle_deg` (counter-clockwise for
/// positive angles with v pointing down the rows), sampling bilinearly.
/// Pixels whose source falls outside the frame are set to [`FILL_VALUE`].
pub fn rotate_slice(slice: &Slice2D, angle_deg: f64) -> Slice2D {
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let cu = (slice.width - 1) as f64 / 2.0;
    let cv = (slice.height - 1) as f64 / 2.0;
    let (max_u, max_v) = ((slice.width - 1) as f64, (slice.height - 1) as f64);
    let mut pixels = Vec::with_capacity(slice.pixels.len());
    for v in 0..slice.height {
        let dv = v as f64 - cv;
        for u in 0..slice.width {
            let du = u as f64 - cu;
            // Inverse map: rotate the output offset by -angle.
            let su = cos * du + sin * dv + cu;
            let sv = -sin * du + cos * dv + cv;
            let inside = (0.0..=max_u).contains(&su) && (0.0..=max_v).contains(&sv);
            pixels.push(if inside { bilinear(slice, su, sv) } else { FILL_VALUE });
        }
    }
    Slice2D {
        pixels,
        ..slice.clone()
    }
}

/// Rotation by an angle drawn uniformly from ±[`MAX_ROTATION_DEG`].
pub fn rotate_augment<R: Rng + ?Sized>(slice: &Slice2D, rng: &mut R) -> Slice2D {
    rotate_slice(slice, rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slicing::Plane;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn make(w: usize, h: usize, f: impl Fn(f64, f64) -> f32) -> Slice2D {
        Slice2D {
            plane: Plane::Coronal,
            index: 3,
            width: w,
            height: h,
            pixels: (0..w * h).map(|i| f((i % w) as f64, (i / w) as f64)).collect(),
            pixel_spacing_mm: (1.0, 1.0),
        }
    }

    fn blob(w: usize, h: usize) -> Slice2D {
        let (cu, cv) = ((w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0);
        make(w, h, |u, v| {
            let r2 = (u - cu).powi(2) + (v - cv).powi(2);
            (-1.0 + 2.0 * (-r2 / (2.0 * 8.0f64.powi(2))).exp()) as f32
        })
    }

    #[test]
    fn zero_angle_is_identity() {
        let s = make(13, 9, |u, v| (u * 0.3 - v * 0.7) as f32);
        let r = rotate_slice(&s, 0.0);
        for (a, b) in r.pixels.iter().zip(&s.pixels) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn forward_and_back_is_nearly_invertible() {
        let s = blob(64, 48);
        let back = rotate_slice(&rotate_slice(&s, 10.0), -10.0);
        let mad: f64 = back
            .pixels
            .iter()
            .zip(&s.pixels)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / s.pixels.len() as f64;
        assert!(mad < 0.05, "mean abs difference {mad}");
    }

    #[test]
    fn constant_slice_keeps_constant_interior() {
        let s = make(40, 30, |_, _| 0.25);
        let r = rotate_slice(&s, 7.0);
        assert!(r.pixels.iter().all(|&v| (v - 0.25).abs() < 1e-6 || v == FILL_VALUE));
        // Center is always in frame; a corner is not for a nonzero angle.
        assert!((r.get(20, 15) - 0.25).abs() < 1e-6);
        assert_eq!(r.get(0, 0), FILL_VALUE);
        assert_eq!((r.width, r.height, r.index), (40, 30, 3));
    }

    #[test]
    fn augment_stays_within_ten_degrees() {
        let s = blob(32, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let r = rotate_augment(&s, &mut rng);
            let edge_fill = r.pixels.iter().filter(|&&v| v == FILL_VALUE).count();
            // A rotation of at most 10° never clips more than the corners.
            assert!(edge_fill < 32 * 32 / 8, "{edge_fill}");
        }
    }
}
