use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use super::field::Field;
use crate::dynamics::{classify_state, usd_update, Opinion, OpinionCounts, StateClass};
use crate::error::{Error, Result};

/// Largest `n` accepted by [`gossip_onestep_exhaustive`].
pub const MAX_EXHAUSTIVE_N: u64 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Provenance {
    GossipExhaustive,
    PpExact,
}

/// Exact one-step distribution: `entries[m].1 / denominator` is the
/// probability of `entries[m].0`. Entries are sorted by state.
#[derive(Clone, Debug, PartialEq)]
pub struct OneStepDistribution {
    pub provenance: Provenance,
    pub source: OpinionCounts,
    pub denominator: u128,
    pub entries: Vec<(OpinionCounts, u128)>,
}

impl OneStepDistribution {
    fn from_map(
        provenance: Provenance,
        source: &OpinionCounts,
        denominator: u128,
        map: HashMap<OpinionCounts, u128>,
    ) -> Self {
        let mut entries: Vec<_> = map.into_iter().filter(|(_, w)| *w > 0).collect();
        entries.sort();
        Self {
            provenance,
            source: source.clone(),
            denominator,
            entries,
        }
    }

    pub fn probability(&self, state: &OpinionCounts) -> f64 {
        self.entries
            .iter()
            .find(|(s, _)| s == state)
            .map_or(0.0, |(_, w)| *w as f64 / self.denominator as f64)
    }

    /// Sum of the weights over the denominator; exactly 1 by construction.
    pub fn total_mass(&self) -> f64 {
        let total: u128 = self.entries.iter().map(|(_, w)| w).sum();
        total as f64 / self.denominator as f64
    }

    /// Probability of landing in the all-⊥ state.
    pub fn all_undecided_mass(&self) -> f64 {
        self.entries
            .iter()
            .filter(|(s, _)| s.undecided() == s.n())
            .map(|(_, w)| *w as f64 / self.denominator as f64)
            .sum()
    }
}

/// Enumerates every joint pull choice of one gossip round.
///
/// Vertex `v` (in the canonical layout of `state`) pulls vertex `t`; each of
/// the `n^n` choice vectors has weight 1 and the result is aggregated by
/// next count vector.
pub fn gossip_onestep_exhaustive(state: &OpinionCounts) -> Result<OneStepDistribution> {
    let n = state.n();
    if n > MAX_EXHAUSTIVE_N {
        return Err(Error::EnumerationTooLarge {
            n,
            max: MAX_EXHAUSTIVE_N,
        });
    }
    let nu = n as usize;
    let opinions: Vec<Opinion> = (0..n).map(|v| state.opinion_at(v)).collect();

    // Only ⊥ and the opinions present can appear next round; give each a slot.
    let mut slots: Vec<Opinion> = vec![Opinion::Undecided];
    for &o in &opinions {
        if !slots.contains(&o) {
            slots.push(o);
        }
    }
    let radix = n + 1;
    let slot_code = |o: Opinion| -> u64 {
        let pos = slots.iter().position(|&s| s == o).expect("slot exists");
        radix.pow(pos as u32)
    };
    // contrib[v][t]: code of vertex v's next opinion when it pulls t.
    let contrib: Vec<Vec<u64>> = opinions
        .iter()
        .map(|&own| opinions.iter().map(|&seen| slot_code(usd_update(own, seen))).collect())
        .collect();

    // Split the outermost digit across threads; the tally is a pure sum.
    let tallies: Vec<HashMap<u64, u128>> = (0..nu)
        .into_par_iter()
        .map(|first| {
            let mut tally: HashMap<u64, u128> = HashMap::new();
            let mut digits = vec![0usize; nu];
            digits[0] = first;
            let mut code: u64 = (0..nu).map(|v| contrib[v][digits[v]]).sum();
            loop {
                *tally.entry(code).or_insert(0) += 1;
                // Odometer over vertices 1..n.
                let mut v = 1;
                loop {
                    if v == nu {
                        return tally;
                    }
                    code -= contrib[v][digits[v]];
                    digits[v] += 1;
                    if digits[v] == nu {
                        digits[v] = 0;
                        code += contrib[v][0];
                        v += 1;
                    } else {
                        code += contrib[v][digits[v]];
                        break;
                    }
                }
            }
        })
        .collect();

    let mut merged: HashMap<u64, u128> = HashMap::new();
    for tally in tallies {
        for (code, w) in tally {
            *merged.entry(code).or_insert(0) += w;
        }
    }
    let mut map = HashMap::new();
    for (code, w) in merged {
        let mut counts = vec![0u64; state.k()];
        let mut undecided = 0;
        let mut rest = code;
        for &slot in &slots {
            let m = rest % radix;
            rest /= radix;
            match slot {
                Opinion::Undecided => undecided = m,
                Opinion::Decided(i) => counts[i as usize - 1] = m,
            }
        }
        let next = OpinionCounts::with_n(n, counts, undecided)?;
        *map.entry(next).or_insert(0) += w;
    }
    Ok(OneStepDistribution::from_map(
        Provenance::GossipExhaustive,
        state,
        (n as u128).pow(n as u32),
        map,
    ))
}

/// Enumerates ordered (initiator class, responder class) pairs of one
/// population-protocol interaction, each with weight `c_a·c_b` over `n²`.
pub fn pp_onestep_exact(state: &OpinionCounts) -> OneStepDistribution {
    let n = state.n();
    let mut classes: Vec<(Opinion, u64)> = vec![(Opinion::Undecided, state.undecided())];
    classes.extend(
        state
            .counts()
            .iter()
            .enumerate()
            .map(|(i, &c)| (Opinion::Decided(i as u32 + 1), c)),
    );
    classes.retain(|&(_, c)| c > 0);

    let mut map: HashMap<OpinionCounts, u128> = HashMap::new();
    for &(a, ca) in &classes {
        for &(b, cb) in &classes {
            let next_opinion = usd_update(a, b);
            let mut next = state.clone();
            if next_opinion != a {
                next.move_vertex(a, next_opinion);
            }
            *map.entry(next).or_insert(0) += ca as u128 * cb as u128;
        }
    }
    OneStepDistribution::from_map(Provenance::PpExact, state, (n as u128) * (n as u128), map)
}

fn binom_u128(n: u64, k: u64) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// `P[Bin(trials, num/den) = hits]` in field `F`.
fn binom_pmf<F: Field>(trials: u64, hits: u64, num: u64, den: u64) -> F {
    if num == 0 {
        return if hits == 0 { F::one() } else { F::zero() };
    }
    if num == den {
        return if hits == trials { F::one() } else { F::zero() };
    }
    let p = F::from_ratio(num as u128, den as u128);
    let q = F::from_ratio((den - num) as u128, den as u128);
    F::from_ratio(binom_u128(trials, hits), 1)
        * num_traits::pow(p, hits as usize)
        * num_traits::pow(q, (trials - hits) as usize)
}

/// Gossip transition row built class by class: each decided class keeps
/// `Bin(c_i, (c_i + u)/n)` of its vertices, and the undecided vertices are
/// split multinomially (as conditional binomials) with weights `c_i/n` and
/// `u/n` for staying undecided.
pub fn gossip_transition_row<F: Field>(state: &OpinionCounts) -> Vec<(OpinionCounts, F)> {
    let n = state.n();
    if classify_state(state) != StateClass::Active {
        return vec![(state.clone(), F::one())];
    }
    let u = state.undecided();
    // Partial next counts plus remaining undecided pool -> probability.
    let mut layer: HashMap<(Vec<u64>, u64), F> = HashMap::new();
    layer.insert((Vec::with_capacity(state.k()), u), F::one());
    let mut mass_left = n;
    for &c in state.counts() {
        let mut next_layer: HashMap<(Vec<u64>, u64), F> = HashMap::new();
        for ((partial, pool), p) in layer {
            for stay in 0..=c {
                let p_stay = binom_pmf::<F>(c, stay, c + u, n);
                if p_stay.is_zero() {
                    continue;
                }
                for adopt in 0..=pool {
                    let p_adopt = binom_pmf::<F>(pool, adopt, c, mass_left);
                    if p_adopt.is_zero() {
                        continue;
                    }
                    let mut next = partial.clone();
                    next.push(stay + adopt);
                    let entry = next_layer.entry((next, pool - adopt)).or_insert_with(F::zero);
                    *entry = entry.clone() + p.clone() * p_stay.clone() * p_adopt;
                }
            }
        }
        layer = next_layer;
        mass_left -= c;
    }
    // Different leftover pools can end in the same count vector.
    let mut merged: HashMap<Vec<u64>, F> = HashMap::new();
    for ((counts, _), p) in layer {
        let entry = merged.entry(counts).or_insert_with(F::zero);
        *entry = entry.clone() + p;
    }
    let mut row: Vec<(OpinionCounts, F)> = merged
        .into_iter()
        .map(|(counts, p)| {
            let decided: u64 = counts.iter().sum();
            let next = OpinionCounts::with_n(n, counts, n - decided).expect("conserves n");
            (next, p)
        })
        .collect();
    row.sort_by(|a, b| a.0.cmp(&b.0));
    row
}

/// Population-protocol transition row, from [`pp_onestep_exact`].
pub fn pp_transition_row<F: Field>(state: &OpinionCounts) -> Vec<(OpinionCounts, F)> {
    let dist = pp_onestep_exact(state);
    dist.entries
        .into_iter()
        .map(|(s, w)| (s, F::from_ratio(w, dist.denominator)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;

    fn st(counts: &[u64], undecided: u64) -> OpinionCounts {
        OpinionCounts::new(counts.to_vec(), undecided).unwrap()
    }

    #[test]
    fn gossip_two_vertices() {
        let d = gossip_onestep_exhaustive(&st(&[1, 1], 0)).unwrap();
        assert_eq!(d.denominator, 4);
        assert_eq!(d.probability(&st(&[1, 1], 0)), 0.25);
        assert_eq!(d.probability(&st(&[1, 0], 1)), 0.25);
        assert_eq!(d.probability(&st(&[0, 1], 1)), 0.25);
        assert_eq!(d.probability(&st(&[0, 0], 2)), 0.25);
        assert_eq!(d.total_mass(), 1.0);
    }

    #[test]
    fn gossip_point_masses() {
        for s in [st(&[4, 0], 0), st(&[0, 0], 4)] {
            let d = gossip_onestep_exhaustive(&s).unwrap();
            assert_eq!(d.entries, vec![(s.clone(), 256)]);
        }
        assert!(gossip_onestep_exhaustive(&st(&[5, 4], 0)).is_err());
    }

    #[test]
    fn gossip_all_bot_mass() {
        let d = gossip_onestep_exhaustive(&st(&[2, 2], 0)).unwrap();
        assert_eq!(d.all_undecided_mass(), 1.0 / 16.0);
    }

    #[test]
    fn pp_two_vertices() {
        let d = pp_onestep_exact(&st(&[1, 1], 0));
        assert_eq!(d.probability(&st(&[1, 1], 0)), 0.5);
        assert_eq!(d.probability(&st(&[1, 0], 1)), 0.25);
        assert_eq!(d.probability(&st(&[0, 1], 1)), 0.25);
        let bot = st(&[0, 0], 3);
        assert_eq!(pp_onestep_exact(&bot).entries, vec![(bot.clone(), 9)]);
    }

    #[test]
    fn convolution_row_matches_enumeration() {
        for s in [st(&[2, 1], 1), st(&[2, 2], 0), st(&[1, 1, 1], 2), st(&[3, 0, 1], 2)] {
            let exhaustive = gossip_onestep_exhaustive(&s).unwrap();
            let row = gossip_transition_row::<f64>(&s);
            assert_eq!(row.len(), exhaustive.entries.len(), "{s}");
            for (next, p) in &row {
                assert!((p - exhaustive.probability(next)).abs() < 1e-15, "{s} -> {next}");
            }
            let exact = gossip_transition_row::<BigRational>(&s);
            for ((a, p), (b, w)) in exact.iter().zip(&exhaustive.entries) {
                assert_eq!(a, b);
                assert_eq!(*p, BigRational::from_ratio(*w, exhaustive.denominator));
            }
        }
    }
}
