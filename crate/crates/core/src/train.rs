//! Run configuration and the training loop.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::DetectionReport;
use crate::model::{BobNet, ChannelScale, ModelSpec, MIN_SLICE_EXTENT};
use crate::nn::{nesterov_step, Mode, OptimizerConfig};
use crate::slicing::{label_position, make_minibatch, prepare_slice, rotate_augment, Dataset, Plane, Slice2D, SliceLabel, SplitRole};

/// Settings read from a `key = value` file.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub target_spacing_mm: f64,
    pub epochs: usize,
    pub base_lr: f64,
    pub decay_every: usize,
    pub decay_factor: f64,
    pub momentum: f64,
    pub l2: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub min_input: usize,
    pub threshold: f64,
    pub channel_scale: ChannelScale,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            target_spacing_mm: 1.5,
            epochs: 30,
            base_lr: 0.01,
            decay_every: 10,
            decay_factor: 10.0,
            momentum: 0.9,
            l2: 5e-4,
            dropout: 0.5,
            batch_size: 64,
            min_input: 224,
            threshold: 0.5,
            channel_scale: ChannelScale::FULL,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub const KEYS: [&'static str; 13] = [
        "target_spacing_mm",
        "epochs",
        "base_lr",
        "decay_every",
        "decay_factor",
        "momentum",
        "l2",
        "dropout",
        "batch_size",
        "min_input",
        "threshold",
        "channel_scale",
        "seed",
    ];

    /// Parses `key = value` lines; `#` starts a comment. Keys not present
    /// keep their defaults; unknown or repeated keys are errors.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| Error::format(origin, format!("line {}: {msg}", n + 1));
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| at("expected key = value".into()))?;
            if !Self::KEYS.contains(&key) {
                return Err(at(format!("unknown key {key:?}")));
            }
            if seen.contains(&key) {
                return Err(at(format!("duplicate key {key:?}")));
            }
            seen.push(key);
            cfg.set(key, value).map_err(|_| at(format!("bad value {value:?} for {key}")))?;
        }
        cfg.validate().map_err(|e| Error::format(origin, e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), ()> {
        fn p<T: std::str::FromStr>(v: &str) -> std::result::Result<T, ()> {
            v.parse().map_err(|_| ())
        }
        match key {
            "target_spacing_mm" => self.target_spacing_mm = p(value)?,
            "epochs" => self.epochs = p(value)?,
            "base_lr" => self.base_lr = p(value)?,
            "decay_every" => self.decay_every = p(value)?,
            "decay_factor" => self.decay_factor = p(value)?,
            "momentum" => self.momentum = p(value)?,
            "l2" => self.l2 = p(value)?,
            "dropout" => self.dropout = p(value)?,
            "batch_size" => self.batch_size = p(value)?,
            "min_input" => self.min_input = p(value)?,
            "threshold" => self.threshold = p(value)?,
            "channel_scale" => self.channel_scale = p(value)?,
            "seed" => self.seed = p(value)?,
            _ => return Err(()),
        }
        Ok(())
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            base_lr: self.base_lr,
            decay_factor: self.decay_factor,
            decay_every_epochs: self.decay_every,
            momentum: self.momentum,
            l2_weight: self.l2,
            epochs: self.epochs,
            dropout_rate: self.dropout,
            batch_size: self.batch_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer().validate()?;
        if !(self.target_spacing_mm.is_finite() && self.target_spacing_mm > 0.0) {
            return Err(Error::invalid(format!("target_spacing_mm {} must be positive", self.target_spacing_mm)));
        }
        if self.min_input < MIN_SLICE_EXTENT {
            return Err(Error::invalid(format!(
                "min_input {} below the network minimum {MIN_SLICE_EXTENT}",
                self.min_input
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::invalid(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        Ok(())
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "target_spacing_mm = {}", self.target_spacing_mm)?;
        writeln!(f, "epochs = {}", self.epochs)?;
        writeln!(f, "base_lr = {}", self.base_lr)?;
        writeln!(f, "decay_every = {}", self.decay_every)?;
        writeln!(f, "decay_factor = {}", self.decay_factor)?;
        writeln!(f, "momentum = {}", self.momentum)?;
        writeln!(f, "l2 = {}", self.l2)?;
        writeln!(f, "dropout = {}", self.dropout)?;
        writeln!(f, "batch_size = {}", self.batch_size)?;
        writeln!(f, "min_input = {}", self.min_input)?;
        writeln!(f, "threshold = {}", self.threshold)?;
        writeln!(f, "channel_scale = {}", self.channel_scale)?;
        writeln!(f, "seed = {}", self.seed)
    }
}

/// A prepared (resampled, normalized) slice with its labels.
#[derive(Clone, Debug)]
pub struct Sample {
    pub slice: Slice2D,
    pub label: SliceLabel,
}

/// Every sagittal, coronal and axial slice of the volumes with `role`.
pub fn prepare_samples(dataset: &Dataset, role: SplitRole, names: &[String], target_mm: f64) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for id in dataset.ids(role) {
        let case = dataset.load_case(id)?;
        let boxes = case.boxes_for(names);
        let dims = case.volume.dims();
        for plane in Plane::ALL {
            for i in 0..dims[plane.normal_axis()] {
                out.push(Sample {
                    slice: prepare_slice(&case.volume, plane, i, target_mm)?,
                    label: label_position(plane, i, &boxes),
                });
            }
        }
    }
    Ok(out)
}

/// Slice-level detection counts per plane (sagittal, coronal, axial),
/// pooled over structures. Slices are evaluated at native size, padded to
/// the network minimum.
pub fn evaluate_samples(model: &BobNet<f32>, samples: &[Sample], threshold: f64) -> Result<[DetectionReport; 3]> {
    let mut reports = [DetectionReport::default(); 3];
    for s in samples {
        let probs = model.predict_slice(&s.slice.pad_to_min(MIN_SLICE_EXTENT).to_tensor())?;
        let r = &mut reports[s.slice.plane as usize];
        for (p, &actual) in probs.iter().zip(&s.label.presence) {
            r.add(*p >= threshold, actual);
        }
    }
    Ok(reports)
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    /// F1 on validation slices per plane.
    pub val_plane_f1: [f64; 3],
    /// F1 on validation slices pooled over planes.
    pub val_f1: f64,
}

impl fmt::Display for EpochStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch {:>3} lr {:.6} loss {:.5} val_f1 {:.4} (sagittal {:.4} coronal {:.4} axial {:.4})",
            self.epoch,
            self.learning_rate,
            self.train_loss,
            self.val_f1,
            self.val_plane_f1[0],
            self.val_plane_f1[1],
            self.val_plane_f1[2]
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: BobNet<f32>,
    pub structures: Vec<String>,
    pub history: Vec<EpochStats>,
}

/// Trains one network on the slices of all three planes of the training
/// volumes, presented once per epoch in shuffled order, each slice rotated
/// by a random angle and cropped or padded into a variable-size minibatch.
/// `on_epoch` is called after each epoch's validation pass.
pub fn train(
    dataset: &Dataset,
    structures: &[String],
    config: &RunConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    config.validate()?;
    if structures.is_empty() {
        return Err(Error::invalid("no structures to train on"));
    }
    let opt = config.optimizer();
    let train_set = prepare_samples(dataset, SplitRole::Train, structures, config.target_spacing_mm)?;
    let val_set = prepare_samples(dataset, SplitRole::Val, structures, config.target_spacing_mm)?;
    if train_set.is_empty() {
        return Err(Error::invalid("dataset has no training volumes"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let spec = ModelSpec::new(structures.len(), config.channel_scale, config.dropout)?;
    let mut model = BobNet::<f32>::initialize(spec, &mut rng)?;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(opt.epochs);

    for epoch in 1..=opt.epochs {
        let lr = opt.learning_rate(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(opt.batch_size).enumerate() {
            let slices: Vec<Slice2D> = chunk.iter().map(|&i| rotate_augment(&train_set[i].slice, &mut rng)).collect();
            let labels: Vec<SliceLabel> = chunk.iter().map(|&i| train_set[i].label.clone()).collect();
            let batch = make_minibatch::<f32, _>(&slices, &labels, config.min_input, &mut rng)?;
            let (loss, grads) =
                model
                    .network()
                    .batch_gradients(&batch.tensor, &batch.labels, opt.l2_weight, Mode::Train(&mut rng))?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFinite(format!("epoch {epoch}, batch {}: loss {loss}", b + 1)));
            }
            nesterov_step(model.network_mut().params_mut(), &grads, lr, opt.momentum)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, batch {}: {e}", b + 1)))?;
            loss_sum += loss;
            batches += 1;
        }

        let planes = evaluate_samples(&model, &val_set, config.threshold)?;
        let mut pooled = DetectionReport::default();
        planes.iter().for_each(|r| pooled.merge(r));
        let stats = EpochStats {
            epoch,
            learning_rate: lr,
            train_loss: loss_sum / batches as f64,
            val_plane_f1: planes.map(|r| r.f1()),
            val_f1: pooled.f1(),
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(TrainOutcome {
        model,
        structures: structures.to_vec(),
        history,
    })
}
