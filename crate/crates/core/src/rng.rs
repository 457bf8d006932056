//! Keyed random substreams.
//!
//! Every random quantity draws from its own ChaCha stream keyed by
//! `(seed, imu, channel, axis)`, so results do not depend on the order in
//! which IMUs, sensors or axes are simulated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Channel {
    GyroNoise = 1,
    AccelNoise = 2,
    GyroBiasWalk = 3,
    AccelBiasWalk = 4,
    MasterOrientation = 5,
    MasterPosition = 6,
    Trajectory = 7,
    Jitter = 8,
}

pub fn substream(seed: u64, imu: u32, channel: Channel, axis: u8) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let key = ((imu as u64) << 16) | ((channel as u64) << 8) | axis as u64;
    rng.set_stream(key);
    rng
}

/// One independent stream per axis.
#[derive(Clone, Debug)]
pub struct AxisStreams([ChaCha8Rng; 3]);

impl AxisStreams {
    pub fn new(seed: u64, imu: u32, channel: Channel) -> Self {
        AxisStreams([
            substream(seed, imu, channel, 0),
            substream(seed, imu, channel, 1),
            substream(seed, imu, channel, 2),
        ])
    }

    /// Draws a standard-normal 3-vector, one component per axis stream.
    pub fn standard_normal(&mut self) -> nalgebra::Vector3<f64> {
        nalgebra::Vector3::new(
            StandardNormal.sample(&mut self.0[0]),
            StandardNormal.sample(&mut self.0[1]),
            StandardNormal.sample(&mut self.0[2]),
        )
    }
}
