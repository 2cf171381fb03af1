//! Counter-based random streams.
//!
//! A [`Stream`] is a key derived from a master seed and a path of labels.
//! Draw `k` of a stream is a ChaCha8 generator positioned at block `k << 16`,
//! so the numbers used for draw `k` never depend on how many other draws
//! were made, or in which order, or on which thread.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Stream {
    key: u64,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        let mut s = seed;
        Stream {
            key: splitmix64(&mut s),
        }
    }

    /// Independent sub-stream for a named purpose.
    pub fn child(&self, label: &str) -> Stream {
        let mut s = self.key ^ fnv1a(label);
        Stream {
            key: splitmix64(&mut s),
        }
    }

    /// Independent sub-stream for a numbered purpose (an iteration, a pass).
    pub fn index(&self, i: u64) -> Stream {
        let mut s = self.key ^ i.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        Stream {
            key: splitmix64(&mut s).wrapping_add(1),
        }
    }

    /// Generator for draw `k` of this stream.
    pub fn draw(&self, k: u64) -> ChaCha8Rng {
        let mut s = self.key;
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_word_pos((k as u128) << 16);
        rng
    }

    pub fn key(&self) -> u64 {
        self.key
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn draws_are_order_independent() {
        let s = Stream::new(7).child("weights");
        let forward: Vec<f64> = (0..5).map(|k| s.draw(k).random()).collect();
        let backward: Vec<f64> = (0..5).rev().map(|k| s.draw(k).random()).collect();
        let mut b = backward;
        b.reverse();
        assert_eq!(forward, b);
    }

    #[test]
    fn children_differ() {
        let s = Stream::new(1);
        let a: u64 = s.child("a").draw(0).random();
        let b: u64 = s.child("b").draw(0).random();
        let c: u64 = s.index(0).draw(0).random();
        let d: u64 = s.index(1).draw(0).random();
        assert_ne!(a, b);
        assert_ne!(c, d);
        assert_ne!(s.draw(0).random::<u64>(), s.draw(1).random::<u64>());
    }
}
