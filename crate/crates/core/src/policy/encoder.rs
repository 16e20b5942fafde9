use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::{FEATURE_DIM, OBS_PIXELS, OBS_SIZE};
use crate::error::{Error, Result};

const PROJ_SIDE: usize = 32;
const PROJ_INPUT: usize = PROJ_SIDE * PROJ_SIDE * 3;
const FLAT_SIDE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    RandomProjection,
    DownsampleFlatten,
    ExternalFeatures,
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::RandomProjection => "random-projection",
            EncoderKind::DownsampleFlatten => "downsample-flatten",
            EncoderKind::ExternalFeatures => "external-features",
        })
    }
}

impl FromStr for EncoderKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.replace('_', "-").as_str() {
            "random-projection" => Ok(EncoderKind::RandomProjection),
            "downsample-flatten" => Ok(EncoderKind::DownsampleFlatten),
            "external-features" => Ok(EncoderKind::ExternalFeatures),
            _ => Err(format!("unknown encoder {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub seed: u64,
    pub output_dim: usize,
}

impl EncoderSpec {
    pub fn new(kind: EncoderKind, seed: u64) -> Self {
        EncoderSpec {
            kind,
            seed,
            output_dim: FEATURE_DIM,
        }
    }
}

/// A fixed image encoder. The random projection matrix is drawn once at
/// construction.
#[derive(Debug, Clone)]
pub struct Encoder {
    spec: EncoderSpec,
    projection: Vec<f64>,
}

/// Area-mean downsample of one `OBS_SIZE²` channel plane to `side²`.
fn area_downsample(plane: &[f32], side: usize, out: &mut [f64]) {
    let cell = OBS_SIZE / side;
    let norm = (cell * cell) as f64;
    for cy in 0..side {
        for cx in 0..side {
            let mut sum = 0.0f64;
            for y in cy * cell..(cy + 1) * cell {
                let row = &plane[y * OBS_SIZE + cx * cell..y * OBS_SIZE + (cx + 1) * cell];
                sum += row.iter().map(|&v| v as f64).sum::<f64>();
            }
            out[cy * side + cx] = sum / norm;
        }
    }
}

impl Encoder {
    pub fn new(spec: EncoderSpec) -> Result<Self> {
        if spec.output_dim != FEATURE_DIM {
            return Err(Error::InvalidConfig(format!(
                "encoder output_dim must be {FEATURE_DIM}, got {}",
                spec.output_dim
            )));
        }
        let projection = match spec.kind {
            EncoderKind::RandomProjection => {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                let scale = 1.0 / (PROJ_INPUT as f64).sqrt();
                (0..FEATURE_DIM * PROJ_INPUT)
                    .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
                    .collect()
            }
            _ => Vec::new(),
        };
        Ok(Encoder { spec, projection })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    /// Encode planar RGB (`3 × 256 × 256`, values in [0,1]) into `out`.
    /// `external` is only read by the external-features encoder.
    pub fn encode_into(&self, rgb: &[f32], external: Option<&[f64]>, out: &mut [f64]) -> Result<()> {
        debug_assert_eq!(out.len(), FEATURE_DIM);
        match self.spec.kind {
            EncoderKind::RandomProjection => {
                // 32×32×3, interleaved
                let mut planes = [[0.0f64; PROJ_SIDE * PROJ_SIDE]; 3];
                for (c, p) in planes.iter_mut().enumerate() {
                    area_downsample(&rgb[c * OBS_PIXELS..(c + 1) * OBS_PIXELS], PROJ_SIDE, p);
                }
                let x: Vec<f64> = (0..PROJ_SIDE * PROJ_SIDE)
                    .flat_map(|i| planes.iter().map(move |p| p[i]))
                    .collect();
                for (o, row) in out.iter_mut().zip(self.projection.chunks_exact(PROJ_INPUT)) {
                    *o = row.iter().zip(&x).map(|(w, v)| w * v).sum();
                }
            }
            EncoderKind::DownsampleFlatten => {
                out.fill(0.0);
                let green = &rgb[OBS_PIXELS..2 * OBS_PIXELS];
                area_downsample(green, FLAT_SIDE, &mut out[..FLAT_SIDE * FLAT_SIDE]);
            }
            EncoderKind::ExternalFeatures => {
                let f = external.unwrap_or(&[]);
                if f.len() != FEATURE_DIM {
                    return Err(Error::BadExternalFeatureDim {
                        expected: FEATURE_DIM,
                        found: f.len(),
                    });
                }
                out.copy_from_slice(f);
            }
        }
        Ok(())
    }

    pub fn encode_rgb(&self, rgb: &[f32], external: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut out = vec![0.0; FEATURE_DIM];
        self.encode_into(rgb, external, &mut out)?;
        Ok(out)
    }
}
