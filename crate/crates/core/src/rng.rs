//! Seeded random streams.
//!
//! All randomness comes from ChaCha8 (`rand_chacha`), a portable generator whose
//! output is identical on every platform. One scenario seed fans out into
//! independent substreams, one per purpose, selected through ChaCha's stream
//! counter, so adding a noise channel never perturbs the conversion excitation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    /// Gaussian input excitation for the transfer-matrix to ARX conversion.
    ConversionExcitation,
    /// Output measurement noise of closed-loop run `n`.
    MeasurementNoise(u32),
}

impl Purpose {
    fn stream_id(self) -> u64 {
        match self {
            Purpose::ConversionExcitation => 1,
            Purpose::MeasurementNoise(run) => 0x100 + u64::from(run),
        }
    }
}

pub fn stream(seed: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose.stream_id());
    rng
}
