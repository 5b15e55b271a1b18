use serde::{Deserialize, Serialize};

use crate::dynamics::OpinionCounts;
use crate::error::{Error, Result};

/// Default constant for [`InitSpec::LowerBound`].
pub const DEFAULT_LOWER_BOUND_C: f64 = 0.1;

/// Initial configuration recipes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitSpec {
    /// All vertices decided, counts as equal as possible.
    BalancedDecided {
        n: u64,
        k: usize,
    },
    /// `⌊n/2⌋` decided vertices split as equally as possible, the rest
    /// undecided.
    BalancedHalf {
        n: u64,
        k: usize,
    },
    /// The hard instance for the lower bound; see [`make_init`].
    LowerBound {
        n: u64,
        k: usize,
        c: f64,
    },
    Explicit {
        counts: Vec<u64>,
        undecided: u64,
    },
}

impl InitSpec {
    pub fn n(&self) -> u64 {
        match self {
            InitSpec::BalancedDecided { n, .. } | InitSpec::BalancedHalf { n, .. } | InitSpec::LowerBound { n, .. } => {
                *n
            }
            InitSpec::Explicit { counts, undecided } => counts.iter().sum::<u64>() + undecided,
        }
    }

    pub fn k(&self) -> usize {
        match self {
            InitSpec::BalancedDecided { k, .. } | InitSpec::BalancedHalf { k, .. } | InitSpec::LowerBound { k, .. } => {
                *k
            }
            InitSpec::Explicit { counts, .. } => counts.len(),
        }
    }
}

/// `total` split into `k` parts differing by at most one, larger parts first.
fn spread(total: u64, k: usize) -> Vec<u64> {
    let base = total / k as u64;
    let extra = (total % k as u64) as usize;
    (0..k).map(|i| base + u64::from(i < extra)).collect()
}

/// Threshold `k* = ⌈2√n / (c ln n)⌉` between the two lower-bound layouts.
pub fn lower_bound_k_star(n: u64, c: f64) -> u64 {
    let nf = n as f64;
    (2.0 * nf.sqrt() / (c * nf.ln())).ceil() as u64
}

fn check_k(n: u64, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InfeasibleInit("k must be at least 1".into()));
    }
    if n == 0 {
        return Err(Error::InfeasibleInit("n must be positive".into()));
    }
    Ok(())
}

fn balanced_half(n: u64, k: usize) -> Result<OpinionCounts> {
    check_k(n, k)?;
    if k as u64 > n / 2 {
        return Err(Error::InfeasibleInit(format!(
            "balanced-half needs k <= n/2 so every opinion is supported (n = {n}, k = {k})"
        )));
    }
    let decided = n / 2;
    OpinionCounts::with_n(n, spread(decided, k), n - decided)
}

/// Builds the initial state described by `spec`.
///
/// `LowerBound { n, k, c }` needs `0 < c < 1/2` and `k ≤ (1/2 − c)·n`. For
/// `k ≤ k*` it is the balanced-half layout. Above `k*`, opinions `1..=k*`
/// get `⌊n/(2k*) − (k − k*)/k*⌋` vertices each, the remaining opinions one
/// vertex each, and everyone else is undecided.
pub fn make_init(spec: &InitSpec) -> Result<OpinionCounts> {
    match spec {
        InitSpec::BalancedDecided { n, k } => {
            check_k(*n, *k)?;
            if *k as u64 > *n {
                return Err(Error::InfeasibleInit(format!("k = {k} exceeds n = {n}")));
            }
            OpinionCounts::with_n(*n, spread(*n, *k), 0)
        }
        InitSpec::BalancedHalf { n, k } => balanced_half(*n, *k),
        InitSpec::LowerBound { n, k, c } => {
            let (n, k, c) = (*n, *k, *c);
            check_k(n, k)?;
            if !(c > 0.0 && c < 0.5) {
                return Err(Error::InfeasibleInit(format!("c = {c} must lie in (0, 1/2)")));
            }
            if k as f64 > (0.5 - c) * n as f64 {
                return Err(Error::InfeasibleInit(format!(
                    "k = {k} exceeds (1/2 - c)·n = {}",
                    (0.5 - c) * n as f64
                )));
            }
            let k_star = lower_bound_k_star(n, c);
            if k as u64 <= k_star {
                return balanced_half(n, k);
            }
            let k64 = k as u64;
            // ⌊(n − 2(k − k*)) / (2k*)⌋, positive because k ≤ (1/2 − c)n.
            let big = (n - 2 * (k64 - k_star)) / (2 * k_star);
            let mut counts = vec![big; k_star as usize];
            counts.extend(std::iter::repeat_n(1, k - k_star as usize));
            let decided: u64 = counts.iter().sum();
            if big == 0 || decided > n {
                return Err(Error::InfeasibleInit(format!(
                    "lower-bound layout does not fit n = {n}, k = {k}"
                )));
            }
            OpinionCounts::with_n(n, counts, n - decided)
        }
        InitSpec::Explicit { counts, undecided } => {
            OpinionCounts::new(counts.clone(), *undecided).map_err(|e| Error::InfeasibleInit(e.to_string()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_layouts() {
        let s = make_init(&InitSpec::BalancedHalf { n: 8, k: 2 }).unwrap();
        assert_eq!((s.counts(), s.undecided()), (&[2, 2][..], 4));
        let s = make_init(&InitSpec::BalancedDecided { n: 4, k: 4 }).unwrap();
        assert_eq!(s.counts(), &[1, 1, 1, 1]);
        let s = make_init(&InitSpec::BalancedDecided { n: 10, k: 3 }).unwrap();
        assert_eq!(s.counts(), &[4, 3, 3]);
        let s = make_init(&InitSpec::BalancedHalf { n: 11, k: 2 }).unwrap();
        assert_eq!((s.counts(), s.undecided()), (&[3, 2][..], 6));
        assert!(make_init(&InitSpec::BalancedHalf { n: 8, k: 5 }).is_err());
        assert!(make_init(&InitSpec::BalancedDecided { n: 3, k: 4 }).is_err());
        assert!(make_init(&InitSpec::BalancedDecided { n: 3, k: 0 }).is_err());
    }

    #[test]
    fn lower_bound_small_k() {
        let s = make_init(&InitSpec::LowerBound {
            n: 10_000,
            k: 4,
            c: 0.1,
        })
        .unwrap();
        assert_eq!(s.counts(), &[1250, 1250, 1250, 1250]);
        assert_eq!(s.undecided(), 5000);
    }

    #[test]
    fn lower_bound_large_k() {
        let (n, c) = (10_000u64, 0.1);
        let k_star = lower_bound_k_star(n, c);
        assert_eq!(k_star, 218);
        let k = 1000;
        let s = make_init(&InitSpec::LowerBound { n, k, c }).unwrap();
        let big = (n - 2 * (k as u64 - k_star)) / (2 * k_star);
        assert_eq!(s.counts()[0], big);
        assert_eq!(s.counts()[k_star as usize - 1], big);
        assert_eq!(s.counts()[k_star as usize], 1);
        assert!(s.counts().iter().all(|&c| c >= 1));
        let beta = s.decided() as f64 / n as f64;
        assert!((beta - 0.5).abs() < 0.01, "beta = {beta}");
        assert!(make_init(&InitSpec::LowerBound { n, k: 4001, c }).is_err());
        assert!(make_init(&InitSpec::LowerBound { n, k: 4, c: 0.5 }).is_err());
    }

    #[test]
    fn explicit_validates() {
        let s = make_init(&InitSpec::Explicit {
            counts: vec![1, 1],
            undecided: 0,
        })
        .unwrap();
        assert_eq!(s.n(), 2);
        assert!(make_init(&InitSpec::Explicit {
            counts: vec![],
            undecided: 2
        })
        .is_err());
    }
}
