use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::IMAGE_FEATURE_DIM;

/// Anything that turns raw image bytes into a 512-vector. A pretrained
/// convolutional backbone fits here; the model itself only learns the
/// projection applied on top.
pub trait ImageEncoder {
    fn encode(&self, bytes: &[u8]) -> Vec<f64>;
}

/// Deterministic stand-in backbone: a normalised byte histogram pushed
/// through a fixed seeded Gaussian projection.
#[derive(Clone, Debug)]
pub struct ProjectionEncoder {
    projection: Vec<f64>,
}

impl ProjectionEncoder {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projection = (0..256 * IMAGE_FEATURE_DIM)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Self { projection }
    }
}

impl ImageEncoder for ProjectionEncoder {
    fn encode(&self, bytes: &[u8]) -> Vec<f64> {
        let mut hist = [0.0f64; 256];
        for &b in bytes {
            hist[b as usize] += 1.0;
        }
        let total = bytes.len().max(1) as f64;
        let mut out = vec![0.0; IMAGE_FEATURE_DIM];
        for (b, &h) in hist.iter().enumerate() {
            if h == 0.0 {
                continue;
            }
            let row = &self.projection[b * IMAGE_FEATURE_DIM..(b + 1) * IMAGE_FEATURE_DIM];
            for (o, w) in out.iter_mut().zip(row) {
                *o += h / total * w;
            }
        }
        out
    }
}
