//! Randomized cropping: each signal is cut into N equal parts and one part is
//! served per draw, without replacement until all N have been used.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::signal::ComplexSignal;

/// Per-signal draw state. Permutations are derived from `(seed, key, cycle)`
/// only, so the parts served for a signal do not depend on the order in which
/// other signals are visited.
#[derive(Debug, Clone)]
pub struct CropScheduler {
    parts: usize,
    seed: u64,
    state: HashMap<u64, Cursor>,
}

#[derive(Debug, Clone)]
struct Cursor {
    cycle: u64,
    perm: Vec<usize>,
    pos: usize,
}

fn mix(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl CropScheduler {
    pub fn new(parts: usize, seed: u64) -> Result<Self> {
        if parts < 1 {
            return Err(Error::InvalidParameter("crop parts must be at least 1".into()));
        }
        Ok(Self {
            parts,
            seed,
            state: HashMap::new(),
        })
    }

    pub fn parts(&self) -> usize {
        self.parts
    }

    fn permutation(&self, key: u64, cycle: u64) -> Vec<usize> {
        let s = mix(self.seed ^ mix(key ^ mix(cycle.wrapping_add(0x9e37_79b9_7f4a_7c15))));
        let mut perm: Vec<usize> = (0..self.parts).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
        perm
    }

    /// Next part index for the signal identified by `key`.
    pub fn draw(&mut self, key: u64) -> usize {
        if !self.state.contains_key(&key) {
            let perm = self.permutation(key, 0);
            self.state.insert(key, Cursor { cycle: 0, perm, pos: 0 });
        }
        let needs_refill = self.state[&key].pos == self.parts;
        if needs_refill {
            let cycle = self.state[&key].cycle + 1;
            let perm = self.permutation(key, cycle);
            self.state.insert(key, Cursor { cycle, perm, pos: 0 });
        }
        let cur = self.state.get_mut(&key).expect("cursor present");
        let part = cur.perm[cur.pos];
        cur.pos += 1;
        part
    }
}

/// Length of each part: `floor(len / parts)`. Tail samples are never served.
pub fn crop_len(len: usize, parts: usize) -> usize {
    len / parts
}

/// Returns one contiguous part of `signal`, chosen by `scheduler` for `key`.
pub fn random_crop(
    signal: &ComplexSignal,
    scheduler: &mut CropScheduler,
    key: u64,
) -> Result<ComplexSignal> {
    let n = scheduler.parts();
    if n > signal.len() {
        return Err(Error::InvalidParameter(format!(
            "cannot cut {} samples into {n} parts",
            signal.len()
        )));
    }
    if n == 1 {
        return Ok(signal.clone());
    }
    let part = scheduler.draw(key);
    let len = crop_len(signal.len(), n);
    signal.slice(part * len, len)
}
