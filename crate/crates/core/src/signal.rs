//! Numeric primitives shared by every module: the signal vector exchanged
//! between modules, the character codec for token channels, and a seeded,
//! platform-independent random stream.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{HicaError, Result};

/// A fixed-dimension real vector. Every inter-module message is one of these.
#[derive(Clone, PartialEq, Default)]
pub struct SignalVector(Vec<f64>);

impl SignalVector {
    /// Builds a vector, rejecting empty input and non-finite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(HicaError::InvalidArgument(
                "signal vectors need a positive dimension".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(HicaError::NonFinite("signal vector".into()));
        }
        Ok(SignalVector(values))
    }

    /// Wraps values produced internally by a unit. Finiteness is guarded
    /// at the parameter level, so this only asserts in debug builds.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        SignalVector(values)
    }

    pub fn zeros(dim: usize) -> Self {
        SignalVector(vec![0.0; dim])
    }

    pub fn one_hot(dim: usize, index: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[index] = 1.0;
        SignalVector(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    /// Index of the largest entry; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn dot(&self, other: &SignalVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Cosine similarity; zero when either side has zero norm.
    pub fn cosine(&self, other: &SignalVector) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            self.dot(other) / denom
        }
    }

    pub fn ensure_dim(&self, expected: usize, context: &str) -> Result<()> {
        if self.dim() == expected {
            Ok(())
        } else {
            Err(HicaError::dim(context, expected, self.dim()))
        }
    }

    /// Concatenates vectors in order.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a SignalVector>) -> SignalVector {
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(&p.0);
        }
        SignalVector(out)
    }

    /// Splits into `count` equal chunks.
    pub fn split(&self, count: usize) -> Vec<SignalVector> {
        let chunk = self.dim() / count;
        self.0
            .chunks(chunk)
            .map(|c| SignalVector(c.to_vec()))
            .collect()
    }
}

impl fmt::Debug for SignalVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

impl AsRef<[f64]> for SignalVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Maps characters to one-hot vectors and back. Indices follow code point
/// order so the same corpus always produces the same encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenCodec {
    alphabet: Vec<char>,
    index: BTreeMap<char, usize>,
}

impl TokenCodec {
    pub fn from_corpus(text: &str) -> Result<Self> {
        let mut chars: Vec<char> = text.chars().collect();
        chars.sort_unstable();
        chars.dedup();
        Self::from_alphabet(chars)
    }

    pub fn from_alphabet(mut alphabet: Vec<char>) -> Result<Self> {
        alphabet.sort_unstable();
        alphabet.dedup();
        if alphabet.is_empty() {
            return Err(HicaError::InvalidArgument("empty alphabet".into()));
        }
        let index = alphabet.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        Ok(TokenCodec { alphabet, index })
    }

    pub fn size(&self) -> usize {
        self.alphabet.len()
    }

    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    pub fn index_of(&self, c: char) -> Result<usize> {
        self.index.get(&c).copied().ok_or(HicaError::UnknownChar(c))
    }

    pub fn char_at(&self, index: usize) -> Option<char> {
        self.alphabet.get(index).copied()
    }

    pub fn one_hot(&self, c: char) -> Result<SignalVector> {
        Ok(SignalVector::one_hot(self.size(), self.index_of(c)?))
    }

    pub fn argmax_decode(&self, v: &SignalVector) -> Result<char> {
        v.ensure_dim(self.size(), "argmax_decode")?;
        Ok(self.alphabet[v.argmax()])
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for worker `index`: `splitmix64(parent ^ splitmix64(index))`.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    splitmix64(parent ^ splitmix64(index))
}

/// ChaCha8 stream keyed by a 64-bit seed. The stream position can be
/// captured and restored, which checkpoints rely on.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream for a worker or sub-module.
    pub fn child(&self, index: u64) -> SeededRng {
        SeededRng::new(derive_seed(self.seed, index))
    }

    pub fn word_pos(&self) -> u128 {
        self.inner.get_word_pos()
    }

    pub fn restore(seed: u64, word_pos: u128) -> Self {
        let mut rng = SeededRng::new(seed);
        rng.inner.set_word_pos(word_pos);
        rng
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.inner.random::<f64>() < p
    }

    pub fn gaussian(&mut self, sigma: f64) -> f64 {
        let z: f64 = self.inner.sample(StandardNormal);
        z * sigma
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
