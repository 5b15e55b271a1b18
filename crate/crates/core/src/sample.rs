//! Exact-distribution samplers used by the counts-level chains.

use rand::Rng;
use rand_distr::{Binomial, Distribution};

/// One draw from `Binomial(trials, p)`.
///
/// Degenerate parameters are resolved without touching the generator, so
/// the stream position only depends on the non-trivial draws.
pub(crate) fn binomial<R: Rng + ?Sized>(rng: &mut R, trials: u64, p: f64) -> u64 {
    if trials == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return trials;
    }
    Binomial::new(trials, p)
        .expect("probability checked to lie in (0, 1)")
        .sample(rng)
}

/// Fenwick tree over class sizes; maps a vertex offset to its class.
#[derive(Clone, Debug)]
pub(crate) struct ClassIndex {
    tree: Vec<u64>,
    top: usize,
}

impl ClassIndex {
    pub(crate) fn new(sizes: &[u64]) -> Self {
        let len = sizes.len();
        let mut tree = vec![0u64; len + 1];
        for (i, &s) in sizes.iter().enumerate() {
            let mut j = i + 1;
            while j <= len {
                tree[j] += s;
                j += j & j.wrapping_neg();
            }
        }
        let top = if len == 0 {
            0
        } else {
            1usize << (usize::BITS - 1 - len.leading_zeros())
        };
        Self { tree, top }
    }

    pub(crate) fn add(&mut self, class: usize, delta: i64) {
        let mut j = class + 1;
        while j < self.tree.len() {
            self.tree[j] = (self.tree[j] as i64 + delta) as u64;
            j += j & j.wrapping_neg();
        }
    }

    /// Smallest class `c` whose inclusive prefix sum exceeds `offset`.
    pub(crate) fn find(&self, mut offset: u64) -> usize {
        let mut pos = 0usize;
        let mut step = self.top;
        while step > 0 {
            let next = pos + step;
            if next < self.tree.len() && self.tree[next] <= offset {
                pos = next;
                offset -= self.tree[next];
            }
            step >>= 1;
        }
        pos
    }
}
