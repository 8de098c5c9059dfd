use rand::Rng;

use super::{Slice2D, SliceLabel, FILL_VALUE};
use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

/// Nearest-rank quantile: the value at 1-based position `ceil(q·n)` of the
/// sorted values.
pub fn nearest_rank(values: &[usize], q: f64) -> usize {
    assert!(!values.is_empty(), "quantile of an empty set");
    let mut v = values.to_vec();
    v.sort_unstable();
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// Input size chosen for one minibatch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MinibatchPlan {
    /// First and third quartile of heights.
    pub heights: (usize, usize),
    /// First and third quartile of widths.
    pub widths: (usize, usize),
    /// Chosen (height, width), each at least the minimum input size.
    pub target: (usize, usize),
}

/// Picks the batch input size uniformly among the four quartile
/// combinations of the slice sizes `(height, width)`.
pub fn plan_minibatch<R: Rng + ?Sized>(sizes: &[(usize, usize)], min_input: usize, rng: &mut R) -> MinibatchPlan {
    let hs: Vec<usize> = sizes.iter().map(|s| s.0).collect();
    let ws: Vec<usize> = sizes.iter().map(|s| s.1).collect();
    let heights = (nearest_rank(&hs, 0.25), nearest_rank(&hs, 0.75));
    let widths = (nearest_rank(&ws, 0.25), nearest_rank(&ws, 0.75));
    let h = if rng.random_bool(0.5) { heights.0 } else { heights.1 };
    let w = if rng.random_bool(0.5) { widths.0 } else { widths.1 };
    MinibatchPlan {
        heights,
        widths,
        target: (h.max(min_input), w.max(min_input)),
    }
}

/// A `[B, 1, H, W]` batch with its labels.
#[derive(Clone, Debug)]
pub struct Minibatch<T> {
    pub tensor: Tensor<T>,
    pub labels: Vec<Vec<bool>>,
    pub plan: MinibatchPlan,
}

/// Source and destination start along one axis when fitting `len` into
/// `target` by random crop or random pad.
fn fit_offsets<R: Rng + ?Sized>(len: usize, target: usize, rng: &mut R) -> (usize, usize) {
    if len >= target {
        (rng.random_range(0..=len - target), 0)
    } else {
        (0, rng.random_range(0..=target - len))
    }
}

/// Crops or pads every slice to the planned size at a uniformly random
/// offset. Padding uses [`FILL_VALUE`]. Since targets are at least the first
/// quartile, no slice loses more than `extent − Q1` pixels per axis.
pub fn make_minibatch<T: Scalar, R: Rng + ?Sized>(
    slices: &[Slice2D],
    labels: &[SliceLabel],
    min_input: usize,
    rng: &mut R,
) -> Result<Minibatch<T>> {
    if slices.is_empty() || slices.len() != labels.len() {
        return Err(Error::invalid(format!(
            "minibatch of {} slices with {} labels",
            slices.len(),
            labels.len()
        )));
    }
    let sizes: Vec<(usize, usize)> = slices.iter().map(|s| (s.height, s.width)).collect();
    let plan = plan_minibatch(&sizes, min_input, rng);
    let (th, tw) = plan.target;
    let mut data = vec![T::of(FILL_VALUE as f64); slices.len() * th * tw];
    for (s, out) in slices.iter().zip(data.chunks_exact_mut(th * tw)) {
        let (sv, dv) = fit_offsets(s.height, th, rng);
        let (su, du) = fit_offsets(s.width, tw, rng);
        let rows = s.height.min(th);
        let cols = s.width.min(tw);
        for r in 0..rows {
            let src = &s.pixels[(sv + r) * s.width + su..][..cols];
            let dst = &mut out[(dv + r) * tw + du..][..cols];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = T::of(v as f64);
            }
        }
    }
    Ok(Minibatch {
        tensor: Tensor::new(vec![slices.len(), 1, th, tw], data)?,
        labels: labels.iter().map(|l| l.presence.clone()).collect(),
        plan,
    })
}
