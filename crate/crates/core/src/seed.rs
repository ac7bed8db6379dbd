//! Deterministic seed derivation: one master seed fans out into independent
//! per-component streams.

/// SplitMix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `stream` of `master`; distinct streams are decorrelated.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(stream.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Named seed streams used across an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Shuffle = 1,
    Init = 2,
    TrainNoise = 3,
    EvalNoise = 4,
    AttackerInit = 5,
    AttackerShuffle = 6,
    CollectNoise = 7,
    Baseline = 8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seeds {
    pub master: u64,
}

impl Seeds {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn get(self, stream: Stream) -> u64 {
        derive_seed(self.master, stream as u64)
    }
}
