//! Counter-based random streams.
//!
//! Every random draw in the simulator is addressed by
//! `(master seed, trajectory index, lane, step index)`. The first three pick a
//! ChaCha key, the step index picks the ChaCha stream, so a generator can be
//! rebuilt for any step without replaying earlier ones. Results therefore do
//! not depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent purposes that draw randomness for the same trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Lane {
    /// Measurement outcomes of the discrete protocol.
    Outcome = 0,
    /// Random tangent directions for Lyapunov shadows.
    Shadow = 1,
    /// Wiener increments of the continuous measurement record.
    Record = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    master: u64,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Streams {
    pub fn new(master_seed: u64) -> Self {
        Self {
            master: master_seed,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master
    }

    /// Generator for one `(trajectory, lane, step)` cell.
    pub fn rng(&self, trajectory: u64, lane: Lane, step: u64) -> ChaCha8Rng {
        let mut state = self.master;
        let mut key = [0u8; 32];
        let words = [
            splitmix64(&mut state),
            splitmix64(&mut state) ^ trajectory.wrapping_mul(0xD6E8_FEB8_6659_FD93),
            splitmix64(&mut state) ^ (lane as u64).wrapping_mul(0xA076_1D64_78BD_642F),
            splitmix64(&mut state),
        ];
        // second mixing pass so that nearby trajectory indices give unrelated keys
        let mut acc = words[1] ^ words[2].rotate_left(17);
        for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
            acc = acc.wrapping_add(w);
            chunk.copy_from_slice(&splitmix64(&mut acc).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(step);
        rng
    }
}
