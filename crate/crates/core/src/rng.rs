//! Random-draw discipline shared by every component.
//!
//! All randomness comes from 64-bit words of one root generator
//! (xoshiro256++ seeded through SplitMix64). Derived values use only
//! correctly rounded IEEE operations so that a trace replays bit-exactly on
//! any platform:
//!
//! * coin: the top bit of one word (`0` or `1`);
//! * unit float: the top 53 bits of one word times 2^-53, in `[0, 1)`;
//! * direction: rejection sampling of two unit floats mapped to `[-1, 1)`,
//!   accepted when `1e-12 < r² <= 1`, then normalised with `sqrt`.

use std::cell::Cell;
use std::collections::VecDeque;

use rand_core::{impls, RngCore};
use serde::{Deserialize, Serialize};

use crate::geometry::Point;

/// The root generator type for simulations.
pub type SimRng = rand_xoshiro::Xoshiro256PlusPlus;

/// Outcome of the protocol's `Random()` function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Coin {
    Zero,
    One,
}

impl Coin {
    pub fn as_u8(self) -> u8 {
        match self {
            Coin::Zero => 0,
            Coin::One => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Coin> {
        match v {
            0 => Some(Coin::Zero),
            1 => Some(Coin::One),
            _ => None,
        }
    }

    /// A word whose draw yields this coin; for scripting tests.
    pub fn word(self) -> u64 {
        match self {
            Coin::Zero => 0,
            Coin::One => 1 << 63,
        }
    }
}

pub fn coin(rng: &mut dyn RngCore) -> Coin {
    if rng.next_u64() >> 63 == 0 {
        Coin::Zero
    } else {
        Coin::One
    }
}

pub fn unit_f64(rng: &mut dyn RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Bernoulli trial with success probability `p`.
pub fn bernoulli(rng: &mut dyn RngCore, p: f64) -> bool {
    unit_f64(rng) < p
}

/// Uniform integer in `0..n` by rejection, `n >= 1`.
pub fn below(rng: &mut dyn RngCore, n: u64) -> u64 {
    assert!(n > 0);
    let zone = u64::MAX - (u64::MAX % n);
    loop {
        let v = rng.next_u64();
        if v < zone {
            return v % n;
        }
    }
}

/// Unit vector with uniformly distributed angle.
pub fn unit_direction(rng: &mut dyn RngCore) -> Point {
    loop {
        let u = 2.0 * unit_f64(rng) - 1.0;
        let v = 2.0 * unit_f64(rng) - 1.0;
        let r2 = u * u + v * v;
        if r2 > 1e-12 && r2 <= 1.0 {
            let r = r2.sqrt();
            return Point::new(u / r, v / r);
        }
    }
}

/// Wraps a generator and counts the 64-bit words drawn from it. Draws of
/// 32-bit words and byte fills count as one draw each.
#[derive(Debug)]
pub struct CountingRng<R> {
    inner: R,
    draws: Cell<u64>,
}

impl<R> CountingRng<R> {
    pub fn new(inner: R) -> Self {
        CountingRng {
            inner,
            draws: Cell::new(0),
        }
    }

    pub fn draws(&self) -> u64 {
        self.draws.get()
    }

    pub fn into_inner(self) -> R {
        self.inner
    }

    fn bump(&self) {
        self.draws.set(self.draws.get() + 1);
    }
}

impl<R: RngCore> RngCore for CountingRng<R> {
    fn next_u32(&mut self) -> u32 {
        self.bump();
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.bump();
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.bump();
        self.inner.fill_bytes(dst)
    }
}

/// Replays a fixed script of words, then falls back to a seeded generator.
#[derive(Debug, Clone)]
pub struct ScriptedRng {
    script: VecDeque<u64>,
    fallback: SimRng,
}

impl ScriptedRng {
    pub fn new(script: impl IntoIterator<Item = u64>, fallback_seed: u64) -> Self {
        use rand_core::SeedableRng;
        ScriptedRng {
            script: script.into_iter().collect(),
            fallback: SimRng::seed_from_u64(fallback_seed),
        }
    }

    /// Script that starts with the given coin, then continues randomly.
    pub fn with_coin(c: Coin, fallback_seed: u64) -> Self {
        Self::new([c.word()], fallback_seed)
    }

    pub fn remaining(&self) -> usize {
        self.script.len()
    }
}

impl RngCore for ScriptedRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.script
            .pop_front()
            .unwrap_or_else(|| self.fallback.next_u64())
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        impls::fill_bytes_via_next(self, dst)
    }
}
