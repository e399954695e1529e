//! Splittable, reproducible random streams.
//!
//! A [`RngStream`] is an immutable address: a root seed plus a path of
//! `(label, index)` pairs. Any substream can be derived without touching its
//! siblings, so batch samples and trials can be evaluated in any order and
//! still see the same draws.

use std::borrow::Cow;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Generator handed out by [`RngStream::rng`].
pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    root_seed: u64,
    path: Vec<(Cow<'static, str>, u64)>,
    key: u64,
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// FNV-1a, stable across platforms and releases (unlike `DefaultHasher`).
fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl RngStream {
    pub fn new(root_seed: u64) -> Self {
        Self {
            root_seed,
            path: Vec::new(),
            key: mix(root_seed ^ 0x5eed_5eed_5eed_5eed),
        }
    }

    /// Child stream addressed by `(label, index)`.
    pub fn derive(&self, label: impl Into<Cow<'static, str>>, index: u64) -> Self {
        let label = label.into();
        let key = mix(mix(self.key ^ label_hash(&label)).wrapping_add(mix(index)));
        let mut path = Vec::with_capacity(self.path.len() + 1);
        path.extend(self.path.iter().cloned());
        path.push((label, index));
        Self {
            root_seed: self.root_seed,
            path,
            key,
        }
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn path(&self) -> &[(Cow<'static, str>, u64)] {
        &self.path
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.key)
    }
}

/// Free-function form of [`RngStream::derive`].
pub fn derive_stream(root: &RngStream, label: impl Into<Cow<'static, str>>, index: u64) -> RngStream {
    root.derive(label, index)
}

/// `dim` i.i.d. standard normal entries.
pub fn sample_gaussian<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Result<DVector<f64>> {
    if dim == 0 {
        return Err(Error::InvalidDimension(dim));
    }
    Ok(DVector::from_fn(dim, |_, _| rng.sample(StandardNormal)))
}
