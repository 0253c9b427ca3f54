use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::image::Domain;

/// Position of the sampler; enough to resume the exact index sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerState {
    pub epoch: [u64; 2],
    pub cursor: [usize; 2],
}

/// Walks each domain through its own seeded permutation, reshuffling at
/// every epoch boundary. The two domains never share a permutation.
#[derive(Clone, Debug)]
pub struct UnpairedSampler {
    seed: u64,
    sizes: [usize; 2],
    state: SamplerState,
    perms: [Vec<usize>; 2],
}

fn permutation(seed: u64, domain: usize, epoch: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << 56) ^ epoch);
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut rng);
    p
}

impl UnpairedSampler {
    pub fn new(seed: u64, size_x: usize, size_y: usize) -> Self {
        Self::with_state(seed, size_x, size_y, SamplerState::default())
    }

    pub fn with_state(seed: u64, size_x: usize, size_y: usize, state: SamplerState) -> Self {
        let sizes = [size_x, size_y];
        let perms = [0, 1].map(|d| permutation(seed, d, state.epoch[d], sizes[d]));
        Self {
            seed,
            sizes,
            state,
            perms,
        }
    }

    pub fn state(&self) -> SamplerState {
        self.state
    }

    pub fn next_index(&mut self, d: Domain) -> usize {
        let k = d.index();
        if self.state.cursor[k] >= self.sizes[k] {
            self.state.epoch[k] += 1;
            self.state.cursor[k] = 0;
            self.perms[k] = permutation(self.seed, k, self.state.epoch[k], self.sizes[k]);
        }
        let i = self.perms[k][self.state.cursor[k]];
        self.state.cursor[k] += 1;
        i
    }

    /// `n` indices from X, then `n` from Y.
    pub fn next_batch(&mut self, n: usize) -> (Vec<usize>, Vec<usize>) {
        let x = (0..n).map(|_| self.next_index(Domain::X)).collect();
        let y = (0..n).map(|_| self.next_index(Domain::Y)).collect();
        (x, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_epoch_visits_each_index_once() {
        let mut s = UnpairedSampler::new(4, 7, 3);
        for _ in 0..3 {
            let mut seen: Vec<usize> = (0..7).map(|_| s.next_index(Domain::X)).collect();
            seen.sort();
            assert_eq!(seen, (0..7).collect::<Vec<_>>());
        }
    }

    #[test]
    fn resuming_from_state_continues_the_sequence() {
        let mut a = UnpairedSampler::new(11, 5, 9);
        for _ in 0..13 {
            a.next_batch(1);
        }
        let mut b = UnpairedSampler::with_state(11, 5, 9, a.state());
        for _ in 0..20 {
            assert_eq!(a.next_batch(2), b.next_batch(2));
        }
    }
}
