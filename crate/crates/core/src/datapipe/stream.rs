//! Balanced multi-source resampling.
//!
//! One epoch lasts until the largest source has been seen once. Every smaller
//! source is cycled through, reshuffled at each wrap, until it has
//! contributed as many draws as the largest one. The pooled draws are then
//! shuffled together and cut into batches.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Manifest;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct BalancedStream {
    by_source: Vec<Vec<usize>>,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl BalancedStream {
    /// `source_of[i]` is the source index of item `i`.
    pub fn new(source_of: &[usize], num_sources: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        let mut by_source = vec![Vec::new(); num_sources];
        for (i, &s) in source_of.iter().enumerate() {
            by_source
                .get_mut(s)
                .ok_or_else(|| Error::Config(format!("item {i} has source {s} but only {num_sources} sources")))?
                .push(i);
        }
        if let Some(s) = by_source.iter().position(Vec::is_empty) {
            return Err(Error::Config(format!("source {s} has no examples")));
        }
        Ok(BalancedStream { by_source, batch_size, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn num_sources(&self) -> usize {
        self.by_source.len()
    }

    /// Size of the largest source; every source contributes this many draws per epoch.
    pub fn per_source(&self) -> usize {
        self.by_source.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn epoch_len(&self) -> usize {
        self.num_sources() * self.per_source()
    }

    /// Draws the next epoch's order.
    pub fn next_epoch(&mut self) -> Epoch {
        let m = self.per_source();
        let mut pool = Vec::with_capacity(self.epoch_len());
        for items in &self.by_source {
            let mut drawn = 0;
            while drawn < m {
                let mut wrap = items.clone();
                wrap.shuffle(&mut self.rng);
                let take = (m - drawn).min(wrap.len());
                pool.extend_from_slice(&wrap[..take]);
                drawn += take;
            }
        }
        pool.shuffle(&mut self.rng);
        Epoch { order: pool, batch_size: self.batch_size, pos: 0 }
    }
}

/// Batches of item indices for one epoch; the last batch may be short.
#[derive(Clone, Debug)]
pub struct Epoch {
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Epoch {
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for Epoch {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(batch)
    }
}

/// Balanced stream over a manifest's records.
pub fn balanced_stream(manifest: &Manifest, batch_size: usize, seed: u64) -> Result<BalancedStream> {
    BalancedStream::new(&manifest.source_of_records(), manifest.num_sources(), batch_size, seed)
}
