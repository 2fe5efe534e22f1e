use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Generator handed to every stochastic op.
pub type MaskRng = ChaCha8Rng;

/// Identifies one independent random sequence: a seed plus a stream index.
///
/// ChaCha exposes a 64-bit stream selector separate from the key, so
/// different `stream_id`s under one seed never overlap and need no shared
/// state. Equal `(seed, stream_id)` pairs replay the same sequence bit for bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub const fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn generator(&self) -> MaskRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

pub fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    Ok(())
}

/// Samples an inverted-dropout multiplier per element: `0` with probability
/// `rate`, otherwise `1 / (1 - rate)`.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut MaskRng) -> Vec<f64> {
    let keep_scale = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| {
            if rng.gen::<f64>() < rate {
                0.0
            } else {
                keep_scale
            }
        })
        .collect()
}

/// Inverted dropout. Inactive mode and a zero rate return `x` untouched
/// without consuming randomness.
pub fn dropout(x: &Tensor, rate: f64, rng: &mut MaskRng, active: bool) -> Result<Tensor> {
    check_rate(rate)?;
    if !active || rate == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.numel(), rate, rng);
    let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Ok(Tensor::from_parts(x.shape().to_vec(), data))
}
