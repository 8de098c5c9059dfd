//! The BoBNet architecture, single-slice prediction and the binary
//! checkpoint format.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{LayerParams, LayerSpec, Mode, Network, ParameterSet, Scalar, Tensor, SPP_CELLS};

/// Convolution widths at full scale.
pub const CONV_CHANNELS: [usize; 8] = [16, 32, 64, 64, 128, 128, 128, 128];
/// 1-based conv layers followed by 2×2 max pooling.
pub const POOL_AFTER: [usize; 4] = [1, 2, 4, 6];
/// Width of each hidden fully-connected layer at full scale.
pub const FC_UNITS: usize = 128;
/// Smallest slice extent whose pre-pyramid feature map is still 4×4.
pub const MIN_SLICE_EXTENT: usize = 64;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BOBN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Rational multiplier applied to every layer width.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChannelScale {
    pub numerator: u32,
    pub denominator: u32,
}

impl ChannelScale {
    pub const FULL: ChannelScale = ChannelScale {
        numerator: 1,
        denominator: 1,
    };

    pub fn new(numerator: u32, denominator: u32) -> Result<Self> {
        if numerator == 0 || denominator == 0 {
            return Err(Error::invalid(format!(
                "channel scale {numerator}/{denominator} must be positive"
            )));
        }
        Ok(ChannelScale {
            numerator,
            denominator,
        })
    }

    /// Scaled width; must come out as a positive integer.
    pub fn apply(&self, base: usize) -> Result<usize> {
        let num = base * self.numerator as usize;
        let den = self.denominator as usize;
        if num % den != 0 || num / den == 0 {
            return Err(Error::invalid(format!(
                "channel scale {self} does not give an integral width for {base}"
            )));
        }
        Ok(num / den)
    }
}

impl fmt::Display for ChannelScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.denominator == 1 {
            write!(f, "{}", self.numerator)
        } else {
            write!(f, "{}/{}", self.numerator, self.denominator)
        }
    }
}

impl FromStr for ChannelScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("cannot parse channel scale {s:?}"));
        let (n, d) = match s.trim().split_once('/') {
            Some((n, d)) => (n.trim(), d.trim()),
            None => (s.trim(), "1"),
        };
        ChannelScale::new(n.parse().map_err(|_| bad())?, d.parse().map_err(|_| bad())?)
    }
}

/// Declarative description of a BoBNet instance.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub num_structures: usize,
    pub channel_scale: ChannelScale,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// Eight 3×3 conv layers with ReLU, pooling after conv 1, 2, 4 and 6,
    /// pyramid pooling after conv 8, then FC → ReLU → dropout twice and a
    /// `2N`-wide paired-softmax output.
    pub fn new(num_structures: usize, channel_scale: ChannelScale, dropout_rate: f64) -> Result<Self> {
        if num_structures < 1 {
            return Err(Error::invalid("BoBNet needs at least one target structure"));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::invalid(format!("dropout rate {dropout_rate} outside [0,1)")));
        }
        let mut layers = Vec::new();
        let mut cin = 1;
        for (i, &base) in CONV_CHANNELS.iter().enumerate() {
            let cout = channel_scale.apply(base)?;
            layers.push(LayerSpec::Conv3x3 {
                in_channels: cin,
                out_channels: cout,
            });
            layers.push(LayerSpec::Relu);
            if POOL_AFTER.contains(&(i + 1)) {
                layers.push(LayerSpec::MaxPool2x2);
            }
            cin = cout;
        }
        layers.push(LayerSpec::Spp);
        let hidden = channel_scale.apply(FC_UNITS)?;
        let mut units = cin * SPP_CELLS;
        for _ in 0..2 {
            layers.push(LayerSpec::FullyConnected {
                in_units: units,
                out_units: hidden,
            });
            layers.push(LayerSpec::Relu);
            layers.push(LayerSpec::Dropout { rate: dropout_rate });
            units = hidden;
        }
        layers.push(LayerSpec::FullyConnected {
            in_units: units,
            out_units: 2 * num_structures,
        });
        layers.push(LayerSpec::PairedSoftmax);
        Ok(ModelSpec {
            num_structures,
            channel_scale,
            layers,
        })
    }

    pub fn output_width(&self) -> usize {
        2 * self.num_structures
    }

    /// Length of the pyramid-pooled feature vector.
    pub fn spp_len(&self) -> usize {
        self.layers
            .iter()
            .find_map(|l| match l {
                LayerSpec::FullyConnected { in_units, .. } => Some(*in_units),
                _ => None,
            })
            .unwrap_or(0)
    }
}

/// A BoBNet: architecture plus weights.
#[derive(Clone, Debug, PartialEq)]
pub struct BobNet<T> {
    spec: ModelSpec,
    net: Network<T>,
}

/// Builds a Glorot-initialized BoBNet with the default 50% dropout.
pub fn build_bobnet<T: Scalar, R: Rng + ?Sized>(
    num_structures: usize,
    channel_scale: ChannelScale,
    rng: &mut R,
) -> Result<BobNet<T>> {
    BobNet::initialize(ModelSpec::new(num_structures, channel_scale, 0.5)?, rng)
}

impl<T: Scalar> BobNet<T> {
    pub fn initialize<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        let net = Network::initialize(spec.layers.clone(), rng)?;
        Ok(BobNet { spec, net })
    }

    pub fn from_params(spec: ModelSpec, params: ParameterSet<T>) -> Result<Self> {
        let net = Network::with_params(spec.layers.clone(), params)?;
        Ok(BobNet { spec, net })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn num_structures(&self) -> usize {
        self.spec.num_structures
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network<T> {
        &mut self.net
    }

    pub fn params(&self) -> &ParameterSet<T> {
        self.net.params()
    }

    /// Presence probability of each structure in a `[1, H, W]` slice, in
    /// inference mode.
    pub fn predict_slice(&self, slice: &Tensor<T>) -> Result<Vec<f64>> {
        match *slice.shape() {
            [1, h, w] if h >= MIN_SLICE_EXTENT && w >= MIN_SLICE_EXTENT => {}
            _ => {
                return Err(Error::invalid(format!(
                    "slice tensor {:?} must be [1, H, W] with H, W >= {MIN_SLICE_EXTENT}",
                    slice.shape()
                )))
            }
        }
        let probs = self.net.forward(slice, Mode::Eval, None)?;
        Ok(probs.data().iter().step_by(2).map(|p| p.f64()).collect())
    }

    /// Converts weights to another precision; velocities are reset.
    pub fn cast<U: Scalar>(&self) -> BobNet<U> {
        let layers = self
            .params()
            .layers
            .iter()
            .map(|p| LayerParams {
                weights: p.weights.cast(),
                biases: p.biases.cast(),
            })
            .collect();
        BobNet::from_params(self.spec.clone(), ParameterSet::new(layers)).expect("same spec, same shapes")
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(buf: &mut Vec<u8>, t: &Tensor<f32>) {
    put_u32(buf, t.rank() as u32);
    for &d in t.shape() {
        put_u32(buf, d as u32);
    }
    for &v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes weights (not velocities) in the `BOBN` checkpoint layout:
/// magic, version, N, scale numerator, scale denominator and parameterized
/// layer count as `u32` LE, then for each layer its weight and bias tensors,
/// each as rank, extents (`u32` LE) and raw `f32` LE values.
pub fn checkpoint_bytes(model: &BobNet<f32>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION);
    put_u32(&mut buf, model.spec.num_structures as u32);
    put_u32(&mut buf, model.spec.channel_scale.numerator);
    put_u32(&mut buf, model.spec.channel_scale.denominator);
    let params = &model.params().layers;
    put_u32(&mut buf, params.len() as u32);
    for p in params {
        put_tensor(&mut buf, &p.weights);
        put_tensor(&mut buf, &p.biases);
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.origin, format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn tensor(&mut self, what: &str) -> Result<Tensor<f32>> {
        let rank = self.u32(what)? as usize;
        if rank == 0 || rank > 4 {
            return Err(Error::format(self.origin, format!("{what}: unsupported rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32(what)? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = self.take(n * 4, what)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Tensor::new(shape, data).map_err(|e| Error::format(self.origin, format!("{what}: {e}")))
    }
}

/// Parses a checkpoint produced by [`checkpoint_bytes`]; `origin` names the
/// source in error messages.
pub fn parse_checkpoint(bytes: &[u8], origin: &str) -> Result<BobNet<f32>> {
    let mut r = Reader { bytes, pos: 0, origin };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format(origin, "missing BOBN magic"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(origin, format!("unsupported version {version}")));
    }
    let n = r.u32("structure count")? as usize;
    let num = r.u32("scale numerator")?;
    let den = r.u32("scale denominator")?;
    let scale = ChannelScale::new(num, den).map_err(|e| Error::format(origin, e.to_string()))?;
    let spec = ModelSpec::new(n, scale, 0.5).map_err(|e| Error::format(origin, e.to_string()))?;
    let count = r.u32("layer count")? as usize;
    let mut layers = Vec::with_capacity(count.min(64));
    for i in 0..count {
        let weights = r.tensor(&format!("layer {i} weights"))?;
        let biases = r.tensor(&format!("layer {i} biases"))?;
        layers.push(LayerParams { weights, biases });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(origin, "trailing bytes after last tensor"));
    }
    BobNet::from_params(spec, ParameterSet::new(layers)).map_err(|e| Error::format(origin, e.to_string()))
}

pub fn save_checkpoint(model: &BobNet<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<BobNet<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes, &path.display().to_string())
}
