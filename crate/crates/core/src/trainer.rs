//! Segmentation model contract, the reference network's training loop,
//! checkpoints and evaluation.
//!
//! A checkpoint is a directory holding `weights.bin` (little-endian f32
//! tensors in parameter order) and a `checkpoint.json` sidecar with the class
//! set, trainer config and training log.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use image::{imageops, GrayImage, RgbImage};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{ClassSet, DatasetManifest, SampleRecord};
use crate::error::{Error, Result};
use crate::irb::{IterationOutcome, IterationRunner};
use crate::metrics::{ConfusionMatrix, IoUReport};
use crate::nn::{self, Adam, Tensor, UNetLite, DOWNSAMPLE_FACTOR};
use crate::util;

pub const REFERENCE_MODEL: &str = "unet-lite";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeviceHint {
    #[default]
    Auto,
    CpuOnly,
}

fn default_model_name() -> String {
    REFERENCE_MODEL.to_string()
}

fn default_base_channels() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    #[serde(default)]
    pub seed: u64,
    /// (height, width) every image is resized to.
    pub image_size: (u32, u32),
    #[serde(default = "default_model_name")]
    pub model_name: String,
    /// Width of the first encoder stage; doubles per stage.
    #[serde(default = "default_base_channels")]
    pub base_channels: usize,
    #[serde(default)]
    pub device_hint: DeviceHint,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 8,
            learning_rate: 2e-3,
            seed: 0,
            image_size: (64, 64),
            model_name: default_model_name(),
            base_channels: default_base_channels(),
            device_hint: DeviceHint::Auto,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("trainer.batch_size", "must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("trainer.learning_rate", "must be a positive number"));
        }
        let (h, w) = self.image_size;
        let f = DOWNSAMPLE_FACTOR as u32;
        if h == 0 || w == 0 || h % f != 0 || w % f != 0 {
            return Err(Error::config(
                "trainer.image_size",
                format!("({h}, {w}) must be positive multiples of {f}"),
            ));
        }
        if self.model_name != REFERENCE_MODEL {
            return Err(Error::config(
                "trainer.model_name",
                format!("unknown model `{}` (available: {REFERENCE_MODEL})", self.model_name),
            ));
        }
        if self.base_channels == 0 {
            return Err(Error::config("trainer.base_channels", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Mean pixel-wise cross-entropy per epoch.
    pub epoch_losses: Vec<f32>,
}

/// The behaviour every segmentation backend offers to the pipeline.
pub trait SegmentationModel {
    fn num_classes(&self) -> usize;

    fn fit(&mut self, data: &TrainingData, config: &TrainerConfig) -> Result<TrainingLog>;

    /// Label raster of the image's own size.
    fn predict(&self, image: &RgbImage) -> Result<GrayImage>;

    fn save(&self, dir: &Path) -> Result<()>;
}

/// Decoded, resized and normalized training samples.
pub struct TrainingData {
    pub height: usize,
    pub width: usize,
    pub samples: Vec<(Tensor, Vec<u8>)>,
}

pub fn image_to_tensor(image: &RgbImage) -> Tensor {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut t = Tensor::zeros(3, h, w);
    for (i, px) in image.pixels().enumerate() {
        for c in 0..3 {
            t.data[c * h * w + i] = f32::from(px.0[c]) / 255.0;
        }
    }
    t
}

fn load_sample(sample: &SampleRecord, size: (u32, u32)) -> Result<(RgbImage, GrayImage)> {
    let wrap = |e: Error| match e {
        Error::Load { path, reason } => Error::Load {
            path,
            reason: format!("sample `{}`: {reason}", sample.sample_id),
        },
        other => other,
    };
    let image = util::read_rgb(&sample.image_path).map_err(wrap)?;
    let mask = util::read_mask(&sample.mask_path).map_err(wrap)?;
    let (h, w) = size;
    let image = if image.dimensions() == (w, h) {
        image
    } else {
        imageops::resize(&image, w, h, imageops::FilterType::Triangle)
    };
    let mask = if mask.dimensions() == (w, h) {
        mask
    } else {
        imageops::resize(&mask, w, h, imageops::FilterType::Nearest)
    };
    Ok((image, mask))
}

pub fn load_training_data(manifest: &DatasetManifest, image_size: (u32, u32)) -> Result<TrainingData> {
    let samples = manifest
        .samples
        .iter()
        .map(|s| {
            let (image, mask) = load_sample(s, image_size)?;
            Ok((image_to_tensor(&image), mask.into_raw()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainingData {
        height: image_size.0 as usize,
        width: image_size.1 as usize,
        samples,
    })
}

impl SegmentationModel for UNetLite {
    fn num_classes(&self) -> usize {
        UNetLite::num_classes(self)
    }

    fn fit(&mut self, data: &TrainingData, config: &TrainerConfig) -> Result<TrainingLog> {
        let mut log = TrainingLog::default();
        if config.epochs == 0 {
            return Ok(log);
        }
        if data.samples.is_empty() {
            return Err(Error::Argument("training set is empty".into()));
        }
        let mut optimizer = Adam::new(config.learning_rate);
        let mut rng = ChaCha8Rng::seed_from_u64(util::derive_seed(config.seed, "shuffle"));
        let pixels = (data.height * data.width) as f64;
        let mut order: Vec<usize> = (0..data.samples.len()).collect();
        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0f64;
            for batch in order.chunks(config.batch_size) {
                let normalizer = (batch.len() as f64 * pixels) as f32;
                for &i in batch {
                    let (input, labels) = &data.samples[i];
                    epoch_loss += self.accumulate_gradients(input, labels, normalizer);
                }
                self.step(&mut optimizer);
            }
            let mean = (epoch_loss / (data.samples.len() as f64 * pixels)) as f32;
            if !mean.is_finite() {
                return Err(Error::Divergence { epoch, loss: mean });
            }
            log::debug!("epoch {epoch}: loss {mean:.5}");
            log.epoch_losses.push(mean);
        }
        Ok(log)
    }

    fn predict(&self, image: &RgbImage) -> Result<GrayImage> {
        let (w, h) = image.dimensions();
        let f = DOWNSAMPLE_FACTOR as u32;
        if w % f != 0 || h % f != 0 || w == 0 || h == 0 {
            return Err(Error::Argument(format!(
                "image {w}x{h} is not a positive multiple of {f} in both dimensions"
            )));
        }
        let labels = nn::argmax_channels(&self.forward(&image_to_tensor(image)));
        Ok(GrayImage::from_raw(w, h, labels).expect("one label per pixel"))
    }

    fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(WEIGHTS_FILE);
        let tensors = self.clone().export_weights();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(WEIGHTS_MAGIC);
        bytes.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for t in &tensors {
            bytes.extend_from_slice(&(t.len() as u32).to_le_bytes());
            for v in t {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        file.write_all(&bytes).map_err(|e| Error::io(&path, e))
    }
}

const WEIGHTS_FILE: &str = "weights.bin";
const SIDECAR_FILE: &str = "checkpoint.json";
const WEIGHTS_MAGIC: &[u8; 8] = b"IRBSEGW1";

fn read_weights(path: &Path) -> Result<Vec<Vec<f32>>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = || Error::load(path, "truncated or malformed weight file");
    if bytes.len() < 12 || &bytes[..8] != WEIGHTS_MAGIC {
        return Err(Error::load(path, "not an irbseg weight file"));
    }
    let mut pos = 8;
    let take_u32 = |pos: &mut usize| -> Result<u32> {
        let chunk = bytes.get(*pos..*pos + 4).ok_or_else(bad)?;
        *pos += 4;
        Ok(u32::from_le_bytes(chunk.try_into().expect("4 bytes")))
    };
    let count = take_u32(&mut pos)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let len = take_u32(&mut pos)? as usize;
        let raw = bytes.get(pos..pos + 4 * len).ok_or_else(bad)?;
        pos += 4 * len;
        tensors.push(
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect(),
        );
    }
    if pos != bytes.len() {
        return Err(bad());
    }
    Ok(tensors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSidecar {
    pub format_version: u32,
    pub model_name: String,
    pub in_channels: usize,
    pub base_channels: usize,
    pub class_set: ClassSet,
    pub config: TrainerConfig,
    pub training_log: TrainingLog,
}

/// A checkpoint directory and its parsed sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub dir: PathBuf,
    pub sidecar: CheckpointSidecar,
}

impl Checkpoint {
    pub fn open(dir: &Path) -> Result<Self> {
        let sidecar: CheckpointSidecar = util::read_json(&dir.join(SIDECAR_FILE))?;
        if sidecar.model_name != REFERENCE_MODEL {
            return Err(Error::Contract(format!("unknown model `{}`", sidecar.model_name)));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            sidecar,
        })
    }

    pub fn class_set(&self) -> &ClassSet {
        &self.sidecar.class_set
    }

    pub fn load_model(&self) -> Result<LoadedModel> {
        let s = &self.sidecar;
        let mut net = UNetLite::new(s.in_channels, s.class_set.len(), s.base_channels, 0);
        let weights = read_weights(&self.dir.join(WEIGHTS_FILE))?;
        net.import_weights(&weights)
            .map_err(|e| Error::load(self.dir.join(WEIGHTS_FILE), e))?;
        Ok(LoadedModel {
            net,
            class_set: s.class_set.clone(),
            image_size: s.config.image_size,
        })
    }
}

/// Anything that can label a dataset sample.
pub trait MaskPredictor {
    fn class_set(&self) -> &ClassSet;

    /// Prediction at the sample mask's native resolution.
    fn predict_sample(&self, sample: &SampleRecord) -> Result<GrayImage>;
}

/// A network restored from a checkpoint.
pub struct LoadedModel {
    net: UNetLite,
    class_set: ClassSet,
    image_size: (u32, u32),
}

impl LoadedModel {
    pub fn network(&self) -> &UNetLite {
        &self.net
    }

    /// Predicts a label raster; with `resize` the image is brought to the
    /// training size first and the labels are mapped back (nearest neighbour).
    pub fn predict(&self, image: &RgbImage, resize: bool) -> Result<GrayImage> {
        let (w, h) = image.dimensions();
        let f = DOWNSAMPLE_FACTOR as u32;
        if !resize || (w % f == 0 && h % f == 0 && w > 0 && h > 0) {
            return self.net.predict(image);
        }
        let (th, tw) = self.image_size;
        let scaled = imageops::resize(image, tw, th, imageops::FilterType::Triangle);
        let labels = self.net.predict(&scaled)?;
        Ok(imageops::resize(&labels, w, h, imageops::FilterType::Nearest))
    }
}

impl MaskPredictor for LoadedModel {
    fn class_set(&self) -> &ClassSet {
        &self.class_set
    }

    fn predict_sample(&self, sample: &SampleRecord) -> Result<GrayImage> {
        let image = util::read_rgb(&sample.image_path)?;
        let (w, h) = image.dimensions();
        let (th, tw) = self.image_size;
        if (w, h) == (tw, th) {
            return self.net.predict(&image);
        }
        let scaled = imageops::resize(&image, tw, th, imageops::FilterType::Triangle);
        let labels = self.net.predict(&scaled)?;
        Ok(imageops::resize(&labels, w, h, imageops::FilterType::Nearest))
    }
}

/// Trains a freshly initialized reference model and writes its checkpoint to `out_dir`.
pub fn train_model(
    config: &TrainerConfig,
    trainset: &DatasetManifest,
    out_dir: &Path,
) -> Result<(Checkpoint, TrainingLog)> {
    config.validate()?;
    if trainset.is_empty() {
        return Err(Error::Argument(format!("trainset `{}` is empty", trainset.name)));
    }
    let data = load_training_data(trainset, config.image_size)?;
    let mut model = UNetLite::new(3, trainset.class_set.len(), config.base_channels, config.seed);
    let log = model.fit(&data, config)?;
    model.save(out_dir)?;
    let sidecar = CheckpointSidecar {
        format_version: 1,
        model_name: config.model_name.clone(),
        in_channels: 3,
        base_channels: config.base_channels,
        class_set: trainset.class_set.clone(),
        config: config.clone(),
        training_log: log.clone(),
    };
    util::write_json(&out_dir.join(SIDECAR_FILE), &sidecar)?;
    Ok((
        Checkpoint {
            dir: out_dir.to_path_buf(),
            sidecar,
        },
        log,
    ))
}

/// Pools every prediction on `eval_set` into one confusion matrix.
pub fn evaluate_with(predictor: &dyn MaskPredictor, eval_set: &DatasetManifest) -> Result<IoUReport> {
    if eval_set.is_empty() {
        return Err(Error::Argument(format!("evaluation set `{}` is empty", eval_set.name)));
    }
    if predictor.class_set() != &eval_set.class_set {
        return Err(Error::Contract(format!(
            "model classes do not match evaluation set `{}`",
            eval_set.name
        )));
    }
    let mut cm = ConfusionMatrix::zeros(&eval_set.class_set);
    for sample in &eval_set.samples {
        let gt = util::read_mask(&sample.mask_path)?;
        let pred = predictor.predict_sample(sample)?;
        if pred.dimensions() != gt.dimensions() {
            return Err(Error::Contract(format!(
                "prediction for `{}` is {:?}, mask is {:?}",
                sample.sample_id,
                pred.dimensions(),
                gt.dimensions()
            )));
        }
        cm.accumulate(gt.as_raw(), pred.as_raw())?;
    }
    IoUReport::from_confusion(&cm)
}

pub fn evaluate_model(checkpoint: &Checkpoint, eval_set: &DatasetManifest) -> Result<IoUReport> {
    if checkpoint.class_set() != &eval_set.class_set {
        return Err(Error::Contract(format!(
            "checkpoint {} was trained on a different class set than `{}`",
            checkpoint.dir.display(),
            eval_set.name
        )));
    }
    evaluate_with(&checkpoint.load_model()?, eval_set)
}

pub fn predict_mask(checkpoint: &Checkpoint, image: &RgbImage, resize: bool) -> Result<GrayImage> {
    checkpoint.load_model()?.predict(image, resize)
}

/// One mask per image, in input order.
pub fn predict_masks(checkpoint: &Checkpoint, images: &[RgbImage], resize: bool) -> Result<Vec<GrayImage>> {
    let model = checkpoint.load_model()?;
    images.iter().map(|img| model.predict(img, resize)).collect()
}

/// Trains and evaluates the reference model for each IRB round, one
/// checkpoint directory per round under `out_dir`.
pub struct ReferenceRunner {
    pub config: TrainerConfig,
    pub out_dir: PathBuf,
}

impl IterationRunner for ReferenceRunner {
    fn train_and_evaluate(
        &mut self,
        iteration: usize,
        trainset: &DatasetManifest,
        eval_set: &DatasetManifest,
    ) -> Result<IterationOutcome> {
        let dir = self.out_dir.join(format!("iter_{iteration:02}"));
        let (checkpoint, _) = train_model(&self.config, trainset, &dir)?;
        let report = evaluate_model(&checkpoint, eval_set)?;
        Ok(IterationOutcome {
            report,
            checkpoint: Some(dir),
        })
    }
}
