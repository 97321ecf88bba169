//! Supervised training of the mouth-state network.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::{apply_jitter, Augmentation};
use super::network::{softmax, FeatureMap, Network};
use super::preprocess::Preprocessing;
use super::spec::{build_network, NetworkOverrides};
use super::ModelArtifact;
use crate::error::{Error, Result};
use crate::label::MouthState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train_frac: f64,
    pub test_frac: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { train_frac: 0.8, test_frac: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub augmentation: Augmentation,
    pub split: SplitConfig,
    pub seed: u64,
    pub preprocessing: Preprocessing,
    pub network: Option<NetworkOverrides>,
    /// Train even when only one class is present (memorization runs).
    pub allow_single_class: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 8,
            batch_size: 32,
            learning_rate: 1e-3,
            augmentation: Augmentation::default(),
            split: SplitConfig::default(),
            seed: 42,
            preprocessing: Preprocessing::default(),
            network: None,
            allow_single_class: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be a positive number".into()));
        }
        let SplitConfig { train_frac, test_frac } = self.split;
        if !(0.0..=1.0).contains(&train_frac)
            || !(0.0..=1.0).contains(&test_frac)
            || (train_frac + test_frac - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!("train_frac + test_frac must equal 1 (got {train_frac} + {test_frac})")));
        }
        self.augmentation.validate()?;
        self.preprocessing.validate()
    }
}

#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub image: RgbImage,
    pub label: MouthState,
    pub source: String,
}

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp", "gif"];

/// Load `<dir>/yawn/*` and `<dir>/no_yawn/*` (`no-yawn` also accepted).
/// Grayscale images are replicated to RGB.
pub fn load_dataset(dir: &Path) -> Result<Vec<LabeledImage>> {
    let mut out = Vec::new();
    for (names, label) in [(&["yawn"][..], MouthState::Yawn), (&["no_yawn", "no-yawn"][..], MouthState::NoYawn)] {
        for name in names {
            let class_dir = dir.join(name);
            if !class_dir.is_dir() {
                continue;
            }
            let mut files: Vec<_> = fs::read_dir(&class_dir)
                .map_err(|e| Error::io(&class_dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.extension()
                        .and_then(|e| e.to_str())
                        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
                        .unwrap_or(false)
                })
                .collect();
            files.sort();
            for path in files {
                let image = image::open(&path).map_err(|e| Error::image(&path, e))?.to_rgb8();
                out.push(LabeledImage { image, label, source: path.to_string_lossy().into_owned() });
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Dataset(format!("no images under {}/yawn or {}/no_yawn", dir.display(), dir.display())));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: MouthState,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    /// Metrics on the test split (the train split when the test split is empty).
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[true][predicted]`, classes in `[yawn, no_yawn]` order.
    pub confusion: [[usize; 2]; 2],
    pub epoch_losses: Vec<f64>,
    pub train_size: usize,
    pub augmented_train_size: usize,
    pub test_size: usize,
    pub warnings: Vec<String>,
}

pub struct TrainOutput {
    pub model: ModelArtifact,
    pub metrics: MetricsReport,
}

/// Gradient accumulation happens over fixed-size chunks summed in order, so
/// results do not depend on the thread count.
const CHUNK: usize = 4;
const RMS_DECAY: f64 = 0.99;
const RMS_EPS: f64 = 1e-8;

struct Sample {
    input: FeatureMap,
    label: MouthState,
}

fn stratified_split(data: &[LabeledImage], split: &SplitConfig, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in MouthState::CLASSES {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data[i].label == class).collect();
        idx.shuffle(rng);
        let n_test = (idx.len() as f64 * split.test_frac).round() as usize;
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

fn evaluate(net: &Network, samples: &[Sample]) -> Result<Vec<usize>> {
    samples
        .par_iter()
        .map(|s| {
            let p = softmax(&net.logits(&s.input)?);
            Ok(if p[0] >= p[1] { 0 } else { 1 })
        })
        .collect()
}

fn confusion(samples: &[Sample], predicted: &[usize]) -> [[usize; 2]; 2] {
    let mut m = [[0; 2]; 2];
    for (s, &p) in samples.iter().zip(predicted) {
        m[s.label.index()][p] += 1;
    }
    m
}

fn accuracy(m: &[[usize; 2]; 2]) -> Option<f64> {
    let total: usize = m.iter().flatten().sum();
    (total > 0).then(|| (m[0][0] + m[1][1]) as f64 / total as f64)
}

fn per_class(m: &[[usize; 2]; 2]) -> Vec<ClassMetrics> {
    MouthState::CLASSES
        .iter()
        .map(|&class| {
            let k = class.index();
            let tp = m[k][k];
            let predicted: usize = (0..2).map(|t| m[t][k]).sum();
            let support: usize = m[k].iter().sum();
            ClassMetrics {
                class,
                precision: (predicted > 0).then(|| tp as f64 / predicted as f64),
                recall: (support > 0).then(|| tp as f64 / support as f64),
                support,
            }
        })
        .collect()
}

fn sample_rng(seed: u64, epoch: usize, position: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | position as u64);
    rng
}

/// Train with cross-entropy and RMSprop (no momentum).
///
/// The split is stratified and seeded; augmentation applies to the train
/// split only. Runs are reproducible for a fixed seed and platform.
pub fn train(dataset: &[LabeledImage], cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let spec = build_network(cfg.network.as_ref())?;
    let pre = &cfg.preprocessing;
    spec.trace_shapes((pre.input_height as usize, pre.input_width as usize))?;

    let mut warnings = Vec::new();
    let classes: BTreeSet<_> = dataset.iter().map(|d| d.label.index()).collect();
    if dataset.is_empty() {
        return Err(Error::Dataset("dataset is empty".into()));
    }
    if classes.len() < 2 {
        let only = MouthState::from_index(*classes.iter().next().unwrap()).unwrap();
        if !cfg.allow_single_class {
            return Err(Error::Dataset(format!(
                "only class `{only}` is present; training needs both yawn and no_yawn examples"
            )));
        }
        warnings.push(format!("single-class dataset (`{only}`): the model can only memorize"));
    }
    let distinct: BTreeSet<_> = dataset.iter().map(|d| d.image.as_raw().as_slice()).collect();
    if distinct.len() < dataset.len() {
        warnings.push(format!(
            "{} of {} images are exact duplicates; test accuracy may be optimistic",
            dataset.len() - distinct.len(),
            dataset.len()
        ));
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (train_idx, test_idx) = stratified_split(dataset, &cfg.split, &mut rng);

    let resized: Vec<RgbImage> = dataset.par_iter().map(|d| pre.resize(&d.image)).collect::<Result<_>>()?;

    let test: Vec<Sample> =
        test_idx.iter().map(|&i| Sample { input: pre.to_tensor(&resized[i]), label: dataset[i].label }).collect();
    let train_plain: Vec<Sample> =
        train_idx.iter().map(|&i| Sample { input: pre.to_tensor(&resized[i]), label: dataset[i].label }).collect();

    let aug = &cfg.augmentation;
    let mut train_set: Vec<Sample> = Vec::with_capacity(train_idx.len() * aug.multiplier);
    for copy in 1..aug.multiplier {
        let jitters: Vec<_> = train_idx.iter().map(|_| aug.sample(&mut rng)).collect();
        let extra: Vec<Sample> = train_idx
            .par_iter()
            .zip(jitters)
            .map(|(&i, jitter)| Sample {
                input: pre.to_tensor(&apply_jitter(&resized[i], jitter)),
                label: dataset[i].label,
            })
            .collect();
        debug_assert_eq!(extra.len(), train_idx.len(), "copy {copy}");
        train_set.extend(extra);
    }
    train_set.extend(train_plain.iter().map(|s| Sample { input: s.input.clone(), label: s.label }));

    let mut net = Network::new(&spec, &mut rng)?;
    let mut sq_avg: Vec<Vec<f64>> = net.params().iter().map(|p| vec![0.0; p.data.len()]).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut last_finite: Option<Vec<super::Param>> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let lr = cfg.learning_rate;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f32;
            let partials: Vec<(Vec<Vec<f32>>, f64)> = batch
                .par_chunks(CHUNK)
                .enumerate()
                .map(|(chunk_no, chunk)| {
                    let mut grads = net.zero_grads();
                    let mut loss = 0.0;
                    for (j, &idx) in chunk.iter().enumerate() {
                        let sample = &train_set[idx];
                        let mut drng = sample_rng(cfg.seed, epoch, step * cfg.batch_size + chunk_no * CHUNK + j);
                        let (logits, trace) = net.forward_train(&sample.input, &mut drng)?;
                        let p = softmax(&logits);
                        let target = sample.label.index();
                        loss -= p[target].max(f64::MIN_POSITIVE).ln();
                        let dlogits: Vec<f32> = p
                            .iter()
                            .enumerate()
                            .map(|(k, &pk)| (pk - if k == target { 1.0 } else { 0.0 }) as f32 * scale)
                            .collect();
                        net.backward(trace, &dlogits, &mut grads);
                    }
                    Ok((grads, loss))
                })
                .collect::<Result<_>>()?;

            let mut grads = net.zero_grads();
            let mut batch_loss = 0.0;
            for (g, loss) in partials {
                batch_loss += loss;
                for (acc, part) in grads.iter_mut().zip(g) {
                    acc.iter_mut().zip(part).for_each(|(a, b)| *a += b);
                }
            }
            let grads_finite = grads.iter().flatten().all(|g| g.is_finite());
            if !batch_loss.is_finite() || !grads_finite {
                let checkpoint = last_finite.take().map(|params| {
                    let network = Network::from_params(&spec, params).expect("same spec");
                    Box::new(ModelArtifact::new(network, pre.clone(), serde_json::json!({"checkpoint": "last_finite"})))
                });
                return Err(Error::NonFiniteLoss { epoch, step, checkpoint });
            }
            last_finite = Some(net.params().to_vec());
            epoch_loss += batch_loss;

            for ((param, grad), sq) in net.params_mut().iter_mut().zip(&grads).zip(&mut sq_avg) {
                for ((w, &g), s) in param.data.iter_mut().zip(grad).zip(sq.iter_mut()) {
                    let g = g as f64;
                    *s = RMS_DECAY * *s + (1.0 - RMS_DECAY) * g * g;
                    *w -= (lr * g / (s.sqrt() + RMS_EPS)) as f32;
                }
            }
        }
        let mean_loss = epoch_loss / train_set.len() as f64;
        log::info!("epoch {}/{}: loss {mean_loss:.4}", epoch + 1, cfg.epochs);
        epoch_losses.push(mean_loss);
    }

    let train_pred = evaluate(&net, &train_plain)?;
    let train_conf = confusion(&train_plain, &train_pred);
    let test_pred = evaluate(&net, &test)?;
    let test_conf = confusion(&test, &test_pred);
    let report_conf = if test.is_empty() { train_conf } else { test_conf };

    let metrics = MetricsReport {
        train_accuracy: accuracy(&train_conf).unwrap_or(0.0),
        test_accuracy: accuracy(&test_conf),
        per_class: per_class(&report_conf),
        confusion: report_conf,
        epoch_losses,
        train_size: train_plain.len(),
        augmented_train_size: train_set.len(),
        test_size: test.len(),
        warnings,
    };
    let info = serde_json::json!({
        "train_config": cfg,
        "train_accuracy": metrics.train_accuracy,
        "test_accuracy": metrics.test_accuracy,
    });
    Ok(TrainOutput { model: ModelArtifact::new(net, pre.clone(), info), metrics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 4,
            augmentation: Augmentation::none(),
            preprocessing: Preprocessing { input_width: 16, input_height: 16, ..Default::default() },
            network: Some(NetworkOverrides {
                conv_channels: Some(vec![4, 4, 4, 4]),
                hidden_units: Some(8),
                ..Default::default()
            }),
            ..Default::default()
        }
    }

    fn img(v: u8) -> RgbImage {
        RgbImage::from_pixel(16, 16, Rgb([v, v, v]))
    }

    #[test]
    fn single_class_refused_by_default() {
        let data: Vec<_> = (0..4)
            .map(|i| LabeledImage { image: img(i * 10), label: MouthState::Yawn, source: i.to_string() })
            .collect();
        let err = train(&data, &tiny_cfg()).err().unwrap();
        assert!(matches!(err, Error::Dataset(ref m) if m.contains("only class")), "{err}");
    }

    #[test]
    fn split_must_sum_to_one() {
        let cfg = TrainConfig { split: SplitConfig { train_frac: 0.7, test_frac: 0.2 }, ..tiny_cfg() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn stratified_split_keeps_class_ratio() {
        let data: Vec<_> = (0..50)
            .map(|i| LabeledImage {
                image: img(i as u8),
                label: if i < 10 { MouthState::Yawn } else { MouthState::NoYawn },
                source: i.to_string(),
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (train, test) = stratified_split(&data, &SplitConfig::default(), &mut rng);
        assert_eq!(test.len(), 10);
        assert_eq!(test.iter().filter(|&&i| i < 10).count(), 2);
        assert_eq!(train.len() + test.len(), 50);
    }

    #[test]
    fn augmented_size_is_base_times_multiplier() {
        let data: Vec<_> = (0..10)
            .map(|i| LabeledImage {
                image: img(i as u8 * 20),
                label: if i % 2 == 0 { MouthState::Yawn } else { MouthState::NoYawn },
                source: i.to_string(),
            })
            .collect();
        let cfg =
            TrainConfig { epochs: 1, augmentation: Augmentation { multiplier: 3, ..Default::default() }, ..tiny_cfg() };
        let out = train(&data, &cfg).unwrap();
        assert_eq!(out.metrics.augmented_train_size, out.metrics.train_size * 3);
        assert_eq!(out.metrics.train_size + out.metrics.test_size, 10);
    }

    #[test]
    fn exploding_learning_rate_aborts_with_checkpoint() {
        let data: Vec<_> = (0..16)
            .map(|i| LabeledImage {
                image: RgbImage::from_fn(16, 16, |x, y| Rgb([((x * y + i) % 255) as u8, i as u8 * 9, 3])),
                label: if i % 2 == 0 { MouthState::Yawn } else { MouthState::NoYawn },
                source: i.to_string(),
            })
            .collect();
        let cfg = TrainConfig { learning_rate: 1e30, epochs: 20, ..tiny_cfg() };
        match train(&data, &cfg) {
            Err(Error::NonFiniteLoss { checkpoint, .. }) => {
                let model = checkpoint.expect("a finite step happened first");
                assert!(model.network.params().iter().flat_map(|p| &p.data).all(|v| v.is_finite()));
            }
            Err(other) => panic!("unexpected error {other}"),
            Ok(_) => panic!("training with lr=1e30 should diverge"),
        }
    }
}
