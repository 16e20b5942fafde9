//! Gripper aperture labels: from tip annotations when a frame has them,
//! otherwise from a small dense regressor on a grayscale thumbnail.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::OBS_SIZE;
use crate::error::{Error, IoContext, Result};
use crate::optim::{Adam, AdamConfig};
use crate::recording::TipAnnotation;

/// The regressor sees a `32×32` grayscale thumbnail.
pub const APERTURE_INPUT_SIDE: usize = 32;
const INPUT_LEN: usize = APERTURE_INPUT_SIDE * APERTURE_INPUT_SIDE;
pub const MIN_APERTURE_SAMPLES: usize = 50;
const MODEL_FORMAT_VERSION: u32 = 1;

/// Area-average a 256×256 RGB frame down to a 32×32 luma thumbnail in `[0, 1]`.
pub fn downsample_gray(rgb: &[u8]) -> Vec<f64> {
    assert_eq!(rgb.len(), OBS_SIZE * OBS_SIZE * 3, "expected a 256x256 RGB frame");
    let block = OBS_SIZE / APERTURE_INPUT_SIDE;
    let norm = 1.0 / (255.0 * (block * block) as f64);
    let mut out = vec![0.0; INPUT_LEN];
    for y in 0..OBS_SIZE {
        let row = &rgb[y * OBS_SIZE * 3..(y + 1) * OBS_SIZE * 3];
        let out_row = &mut out[(y / block) * APERTURE_INPUT_SIDE..][..APERTURE_INPUT_SIDE];
        for (x, px) in row.chunks_exact(3).enumerate() {
            let luma = 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
            out_row[x / block] += luma * norm;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `[outputs, inputs]`
    pub shape: [usize; 2],
    /// Row-major, one row per output.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn init(outputs: usize, inputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        DenseLayer {
            shape: [outputs, inputs],
            weights: (0..outputs * inputs)
                .map(|_| rng.random_range(-bound..bound))
                .collect(),
            bias: (0..outputs).map(|_| rng.random_range(-bound..bound)).collect(),
        }
    }

    fn forward(&self, x: &[f64], out: &mut [f64]) {
        let [_, n_in] = self.shape;
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(n_in).zip(&self.bias))
        {
            *o = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    fn check(&self) -> bool {
        let [o, i] = self.shape;
        self.weights.len() == o * i
            && self.bias.len() == o
            && self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Thumbnail → ReLU hidden layer → sigmoid output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApertureModel {
    pub format_version: u32,
    /// Tip separation, in native pixels, that counts as fully open.
    pub max_tip_distance_px: f64,
    pub layers: [DenseLayer; 2],
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl ApertureModel {
    pub fn new(hidden: usize, max_tip_distance_px: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l1 = DenseLayer::init(hidden, INPUT_LEN, &mut rng);
        let l2 = DenseLayer::init(1, hidden, &mut rng);
        ApertureModel {
            format_version: MODEL_FORMAT_VERSION,
            max_tip_distance_px,
            layers: [l1, l2],
        }
    }

    fn hidden(&self) -> usize {
        self.layers[0].shape[0]
    }

    fn forward_thumb(&self, thumb: &[f64], hidden: &mut [f64]) -> f64 {
        self.layers[0].forward(thumb, hidden);
        hidden.iter_mut().for_each(|h| *h = h.max(0.0));
        let mut out = [0.0];
        self.layers[1].forward(hidden, &mut out);
        sigmoid(out[0])
    }

    /// Predicted aperture for a 256×256 RGB frame, in `[0, 1]`.
    pub fn predict(&self, rgb: &[u8]) -> f64 {
        let mut hidden = vec![0.0; self.hidden()];
        self.forward_thumb(&downsample_gray(rgb), &mut hidden)
            .clamp(0.0, 1.0)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        let model: ApertureModel = serde_json::from_str(&text)?;
        let [l1, l2] = &model.layers;
        let shapes_ok = l1.shape[1] == INPUT_LEN && l2.shape == [1, l1.shape[0]];
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::VersionUnsupported(model.format_version));
        }
        if !(shapes_ok && l1.check() && l2.check() && model.max_tip_distance_px > 0.0) {
            return Err(Error::MalformedSnapshot(format!(
                "aperture model {} has inconsistent layers",
                path.display()
            )));
        }
        Ok(model)
    }
}

/// Either source of gripper labels; annotations take priority.
#[derive(Debug, Clone)]
pub struct ApertureEstimator {
    pub max_tip_distance_px: f64,
    pub model: Option<ApertureModel>,
}

impl ApertureEstimator {
    pub fn estimate(&self, rgb: &[u8], annotation: Option<&TipAnnotation>) -> Result<f64> {
        estimate_aperture(rgb, annotation, self.model.as_ref(), self.max_tip_distance_px)
    }
}

/// Aperture in `[0, 1]` from a tip annotation (preferred) or a model.
/// `max_tip_distance_px` normalizes annotations.
pub fn estimate_aperture(
    rgb: &[u8],
    annotation: Option<&TipAnnotation>,
    model: Option<&ApertureModel>,
    max_tip_distance_px: f64,
) -> Result<f64> {
    match (annotation, model) {
        (Some(a), _) => {
            let v = a.separation() / max_tip_distance_px;
            // NaN from a zero calibration maps to closed
            Ok(if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
        }
        (None, Some(m)) => Ok(m.predict(rgb)),
        (None, None) => Err(Error::NoEstimatorAvailable),
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ApertureFitConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub max_tip_distance_px: f64,
}

impl Default for ApertureFitConfig {
    fn default() -> Self {
        ApertureFitConfig {
            hidden: 64,
            epochs: 150,
            learning_rate: 2e-3,
            batch_size: 32,
            seed: 0,
            max_tip_distance_px: 400.0,
        }
    }
}

fn mse(model: &ApertureModel, thumbs: &[Vec<f64>], labels: &[f64]) -> f64 {
    let mut hidden = vec![0.0; model.hidden()];
    let total: f64 = thumbs
        .iter()
        .zip(labels)
        .map(|(x, y)| (model.forward_thumb(x, &mut hidden) - y).powi(2))
        .sum();
    total / thumbs.len().max(1) as f64
}

/// Train the regressor on `(256×256 RGB, aperture)` pairs with minibatch Adam
/// on MSE. Returns the model and its MSE on the held-out `val_split` fraction.
pub fn fit_aperture_regressor(
    labeled: &[(Vec<u8>, f64)],
    val_split: f64,
    config: &ApertureFitConfig,
) -> Result<(ApertureModel, f64)> {
    if labeled.len() < MIN_APERTURE_SAMPLES {
        return Err(Error::TooFewSamples {
            found: labeled.len(),
            min: MIN_APERTURE_SAMPLES,
        });
    }
    if !(0.0..1.0).contains(&val_split) || config.batch_size == 0 || config.hidden == 0 {
        return Err(Error::InvalidConfig(format!(
            "val_split {val_split} / batch_size {} / hidden {}",
            config.batch_size, config.hidden
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((labeled.len() as f64) * val_split).round() as usize;
    let n_val = n_val.min(labeled.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);

    let prepare = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<f64>) {
        idx.iter()
            .map(|&i| (downsample_gray(&labeled[i].0), labeled[i].1.clamp(0.0, 1.0)))
            .unzip()
    };
    let (train_x, train_y) = prepare(train_idx);
    let (val_x, val_y) = prepare(val_idx);

    let mut model = ApertureModel::new(config.hidden, config.max_tip_distance_px, rng.random());
    let h = config.hidden;
    let mut adam = Adam::new(h * INPUT_LEN + h + h + 1, AdamConfig::default());
    let mut g_w1 = vec![0.0; h * INPUT_LEN];
    let mut g_b1 = vec![0.0; h];
    let mut g_w2 = vec![0.0; h];
    let mut g_b2 = vec![0.0; 1];
    let mut hidden = vec![0.0; h];
    let mut train_order: Vec<usize> = (0..train_x.len()).collect();

    for _ in 0..config.epochs {
        train_order.shuffle(&mut rng);
        for batch in train_order.chunks(config.batch_size) {
            g_w1.iter_mut().for_each(|g| *g = 0.0);
            g_b1.iter_mut().for_each(|g| *g = 0.0);
            g_w2.iter_mut().for_each(|g| *g = 0.0);
            g_b2[0] = 0.0;
            let scale = 2.0 / batch.len() as f64;
            for &i in batch {
                let x = &train_x[i];
                let out = model.forward_thumb(x, &mut hidden);
                // d(mse)/d(logit) through the sigmoid
                let d_logit = scale * (out - train_y[i]) * out * (1.0 - out);
                g_b2[0] += d_logit;
                let w2 = &model.layers[1].weights;
                for j in 0..h {
                    g_w2[j] += d_logit * hidden[j];
                    if hidden[j] > 0.0 {
                        let d_h = d_logit * w2[j];
                        g_b1[j] += d_h;
                        for (g, xv) in g_w1[j * INPUT_LEN..(j + 1) * INPUT_LEN].iter_mut().zip(x) {
                            *g += d_h * xv;
                        }
                    }
                }
            }
            let [l1, l2] = &mut model.layers;
            adam.step(
                &mut [&mut l1.weights, &mut l1.bias, &mut l2.weights, &mut l2.bias],
                &[&g_w1, &g_b1, &g_w2, &g_b2],
                config.learning_rate,
            );
        }
    }

    let val_mse = if val_x.is_empty() {
        mse(&model, &train_x, &train_y)
    } else {
        mse(&model, &val_x, &val_y)
    };
    Ok((model, val_mse))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn ann(ax: f64, ay: f64, bx: f64, by: f64) -> TipAnnotation {
        TipAnnotation {
            frame_index: 0,
            ax,
            ay,
            bx,
            by,
        }
    }

    fn gray(v: u8) -> Vec<u8> {
        vec![v; OBS_SIZE * OBS_SIZE * 3]
    }

    #[test]
    fn annotation_path() {
        let img = gray(0);
        let est = |a: &TipAnnotation| estimate_aperture(&img, Some(a), None, 200.0).unwrap();
        assert_eq!(est(&ann(10.0, 10.0, 10.0, 10.0)), 0.0);
        assert_eq!(est(&ann(0.0, 0.0, 120.0, 160.0)), 1.0);
        // 3-4-5 triangle scaled to 100 px: half of 200
        assert_eq!(est(&ann(0.0, 0.0, 60.0, 80.0)), 0.5);
        assert_eq!(est(&ann(0.0, 0.0, 600.0, 800.0)), 1.0);
    }

    #[test]
    fn needs_an_estimator() {
        assert!(matches!(
            estimate_aperture(&gray(0), None, None, 100.0),
            Err(Error::NoEstimatorAvailable)
        ));
    }

    #[test]
    fn annotation_wins_over_model() {
        let model = ApertureModel::new(4, 100.0, 1);
        let a = ann(0.0, 0.0, 25.0, 0.0);
        assert_eq!(estimate_aperture(&gray(3), Some(&a), Some(&model), 100.0).unwrap(), 0.25);
        let m = estimate_aperture(&gray(3), None, Some(&model), 100.0).unwrap();
        assert!((0.0..=1.0).contains(&m));
    }

    #[test]
    fn thumbnail_of_constant_frame() {
        let t = downsample_gray(&gray(255));
        assert_eq!(t.len(), 1024);
        assert!(t.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    fn noisy_frames(n: usize, seed: u64) -> Vec<Vec<u8>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..OBS_SIZE * OBS_SIZE * 3).map(|_| rng.random()).collect())
            .collect()
    }

    #[test]
    fn constant_labels_fit_constant() {
        let data: Vec<(Vec<u8>, f64)> = noisy_frames(60, 2).into_iter().map(|f| (f, 0.5)).collect();
        let cfg = ApertureFitConfig {
            epochs: 60,
            ..Default::default()
        };
        let (model, val) = fit_aperture_regressor(&data, 0.2, &cfg).unwrap();
        assert!(val < 1e-4, "val mse {val}");
        assert!((model.predict(&data[0].0) - 0.5).abs() < 1e-2);
    }

    #[test]
    fn fit_is_deterministic() {
        let data: Vec<(Vec<u8>, f64)> = noisy_frames(50, 5)
            .into_iter()
            .enumerate()
            .map(|(i, f)| (f, (i % 5) as f64 / 4.0))
            .collect();
        let cfg = ApertureFitConfig {
            epochs: 3,
            ..Default::default()
        };
        let a = fit_aperture_regressor(&data, 0.2, &cfg).unwrap();
        let b = fit_aperture_regressor(&data, 0.2, &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.to_bits(), b.1.to_bits());
    }

    #[test]
    fn too_few_samples() {
        let data: Vec<(Vec<u8>, f64)> = noisy_frames(49, 1).into_iter().map(|f| (f, 0.1)).collect();
        assert!(matches!(
            fit_aperture_regressor(&data, 0.2, &ApertureFitConfig::default()),
            Err(Error::TooFewSamples { found: 49, .. })
        ));
    }

    #[test]
    fn model_json_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("ap.json");
        let m = ApertureModel::new(8, 321.0, 9);
        m.save(&path).unwrap();
        assert_eq!(ApertureModel::load(&path).unwrap(), m);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn estimate_in_unit_interval(
            seed in any::<u64>(),
            pts in prop::array::uniform4(-5000.0f64..5000.0),
            cal in 0.0f64..1000.0,
            use_model in any::<bool>(),
        ) {
            let img = noisy_frames(1, seed).pop().unwrap();
            let model = ApertureModel::new(4, 100.0, seed);
            let a = ann(pts[0], pts[1], pts[2], pts[3]);
            let v = if use_model {
                estimate_aperture(&img, None, Some(&model), cal).unwrap()
            } else {
                estimate_aperture(&img, Some(&a), None, cal).unwrap()
            };
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
