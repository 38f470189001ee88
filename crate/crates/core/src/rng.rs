//! Keyed, splittable random streams.
//!
//! Every random draw in the crate comes from an [`RngStream`] identified by
//! `(seed, t, index, purpose)`. The key is hashed into the seed of a
//! xoshiro256++ generator, so a given stream yields the same sequence no
//! matter in which order (or on which thread) streams are created.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

/// What a stream is used for. Distinct purposes give independent streams
/// for the same `(t, index)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Resample = 2,
    Propagate = 3,
    Backward = 4,
    SimulateState = 5,
    SimulateObservation = 6,
    InitialTheta = 7,
    ReplicateSeed = 8,
    Test = 9,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub t: u64,
    pub index: u64,
    pub purpose: Purpose,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a stream key into a 64-bit generator seed.
pub fn derive_key(seed: u64, id: StreamId) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ id.purpose as u64);
    h = splitmix64(h ^ id.t);
    splitmix64(h ^ id.index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

#[derive(Debug, Clone)]
pub struct RngStream {
    inner: Xoshiro256PlusPlus,
}

impl RngStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        RngStream { inner: Xoshiro256PlusPlus::seed_from_u64(derive_key(seed, id)) }
    }
}

impl RngCore for RngStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Stream factory bound to one base seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    seed: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Streams { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, t: usize, index: usize, purpose: Purpose) -> RngStream {
        RngStream::new(self.seed, StreamId { t: t as u64, index: index as u64, purpose })
    }

    /// A child seed, e.g. for replicate `r` of an experiment.
    pub fn child_seed(&self, index: usize) -> u64 {
        derive_key(self.seed, StreamId { t: 0, index: index as u64, purpose: Purpose::ReplicateSeed })
    }
}
