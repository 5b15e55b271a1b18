use std::collections::{HashMap, VecDeque};

use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use super::enumerate::{gossip_transition_row, pp_transition_row};
use super::field::Field;
use crate::dynamics::{classify_state, Model, OpinionCounts, StateClass};
use crate::error::{Error, Result};

/// Default cap on the number of reachable states.
pub const DEFAULT_STATE_CAP: usize = 20_000;

/// Dense elimination is used up to this many transient states.
const DENSE_LIMIT: usize = 2_000;
/// Largest `n` accepted by the rational path.
const RATIONAL_MAX_N: u64 = 6;
const GS_MAX_SWEEPS: usize = 1_000_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Double,
    Rational,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "double" => Ok(Precision::Double),
            "rational" => Ok(Precision::Rational),
            other => Err(Error::Config(format!(
                "unknown precision '{other}' (expected double|rational)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    /// Start state is already absorbing.
    Trivial,
    DenseElimination,
    GaussSeidel,
    RationalElimination,
}

/// Exact decimal-free results of the rational path, as `p/q` strings.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RationalSolution {
    pub failure_probability: String,
    pub expected_steps: String,
    pub winner_probabilities: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AbsorptionSolution {
    pub model: Model,
    pub start: OpinionCounts,
    pub reachable_states: usize,
    pub transient_states: usize,
    pub method: SolveMethod,
    pub failure_probability: f64,
    pub success_probability: f64,
    /// Probability that opinion `i` wins, index `i - 1`.
    pub winner_probabilities: Vec<f64>,
    /// Expected rounds (gossip) or interactions (PP) until absorption.
    pub expected_steps: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rational: Option<RationalSolution>,
}

/// Reachable chain: transient rows plus absorbing-state targets.
struct Chain<F> {
    transient: Vec<OpinionCounts>,
    /// Row of each transient state: (transient index, prob) and the
    /// right-hand-side contributions (failure, winner 1..k).
    rows: Vec<TransientRow<F>>,
    reachable: usize,
}

struct TransientRow<F> {
    to_transient: Vec<(usize, F)>,
    rhs: Vec<F>,
}

fn build_chain<F: Field>(model: Model, start: &OpinionCounts, cap: usize) -> Result<Chain<F>> {
    let k = start.k();
    let mut index: HashMap<OpinionCounts, usize> = HashMap::new();
    let mut transient = Vec::new();
    let mut queue = VecDeque::new();
    let mut absorbing = 0usize;
    let mut seen_absorbing: HashMap<OpinionCounts, ()> = HashMap::new();
    index.insert(start.clone(), 0);
    transient.push(start.clone());
    queue.push_back(start.clone());
    let mut rows = Vec::new();
    while let Some(state) = queue.pop_front() {
        let raw = match model {
            Model::Gossip => gossip_transition_row::<F>(&state),
            Model::Pp => pp_transition_row::<F>(&state),
        };
        let mut to_transient = Vec::with_capacity(raw.len());
        let mut rhs = vec![F::zero(); k + 1];
        for (next, p) in raw {
            match classify_state(&next) {
                StateClass::Active => {
                    let id = match index.get(&next) {
                        Some(&id) => id,
                        None => {
                            let id = transient.len();
                            index.insert(next.clone(), id);
                            transient.push(next.clone());
                            queue.push_back(next);
                            id
                        }
                    };
                    to_transient.push((id, p));
                }
                StateClass::AllUndecided => {
                    if seen_absorbing.insert(next, ()).is_none() {
                        absorbing += 1;
                    }
                    rhs[0] = rhs[0].clone() + p;
                }
                StateClass::Consensus { winner } => {
                    if seen_absorbing.insert(next, ()).is_none() {
                        absorbing += 1;
                    }
                    rhs[winner] = rhs[winner].clone() + p;
                }
            }
        }
        rows.push(TransientRow { to_transient, rhs });
        if transient.len() + absorbing > cap {
            return Err(Error::StateSpaceTooLarge {
                states: transient.len() + absorbing,
                cap,
            });
        }
    }
    Ok(Chain {
        reachable: transient.len() + absorbing,
        transient,
        rows,
    })
}

/// Solves `(I − Q) X = B` where B has columns (failure, winner 1..k, steps).
/// Returns the solution row of state 0.
fn dense_solve<F: Field>(chain: &Chain<F>) -> Result<Vec<F>> {
    let t = chain.transient.len();
    let cols = chain.rows[0].rhs.len() + 1;
    let width = t + cols;
    let mut a: Vec<F> = vec![F::zero(); t * width];
    for (s, row) in chain.rows.iter().enumerate() {
        let base = s * width;
        a[base + s] = F::one();
        for (j, p) in &row.to_transient {
            a[base + j] = a[base + j].clone() - p.clone();
        }
        for (c, v) in row.rhs.iter().enumerate() {
            a[base + t + c] = v.clone();
        }
        a[base + t + cols - 1] = F::one();
    }
    for col in 0..t {
        let pivot = (col..t)
            .max_by(|&x, &y| {
                a[x * width + col]
                    .magnitude()
                    .partial_cmp(&a[y * width + col].magnitude())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .expect("nonempty range");
        if a[pivot * width + col].is_zero() {
            return Err(Error::Solver(format!("singular system at column {col}")));
        }
        if pivot != col {
            for c in 0..width {
                a.swap(pivot * width + c, col * width + c);
            }
        }
        let inv = F::one() / a[col * width + col].clone();
        for c in col..width {
            a[col * width + c] = a[col * width + c].clone() * inv.clone();
        }
        let pivot_row: Vec<F> = a[col * width + col..(col + 1) * width].to_vec();
        for r in 0..t {
            if r == col {
                continue;
            }
            let factor = a[r * width + col].clone();
            if factor.is_zero() {
                continue;
            }
            for (off, pv) in pivot_row.iter().enumerate() {
                let c = col + off;
                if pv.is_zero() {
                    continue;
                }
                a[r * width + c] = a[r * width + c].clone() - factor.clone() * pv.clone();
            }
        }
    }
    Ok(a[t..t + cols].to_vec())
}

fn gauss_seidel(chain: &Chain<f64>) -> Result<Vec<f64>> {
    let t = chain.transient.len();
    let cols = chain.rows[0].rhs.len() + 1;
    let mut x = vec![0.0f64; t * cols];
    let diag: Vec<f64> = chain
        .rows
        .iter()
        .enumerate()
        .map(|(s, row)| {
            let stay: f64 = row.to_transient.iter().filter(|(j, _)| *j == s).map(|(_, p)| p).sum();
            1.0 - stay
        })
        .collect();
    let mut acc = vec![0.0f64; cols];
    for _sweep in 0..GS_MAX_SWEEPS {
        let mut change = 0.0f64;
        let mut scale = 1.0f64;
        for (s, row) in chain.rows.iter().enumerate() {
            acc[..cols - 1].copy_from_slice(&row.rhs);
            acc[cols - 1] = 1.0;
            for &(j, p) in &row.to_transient {
                if j != s {
                    for c in 0..cols {
                        acc[c] += p * x[j * cols + c];
                    }
                }
            }
            for c in 0..cols {
                let v = acc[c] / diag[s];
                change = change.max((v - x[s * cols + c]).abs());
                scale = scale.max(v.abs());
                x[s * cols + c] = v;
            }
        }
        if change <= 1e-15 * scale {
            return Ok(x[..cols].to_vec());
        }
    }
    Err(Error::Solver(format!(
        "Gauss-Seidel did not converge in {GS_MAX_SWEEPS} sweeps"
    )))
}

fn trivial(model: Model, start: &OpinionCounts) -> AbsorptionSolution {
    let mut winners = vec![0.0; start.k()];
    let failure = match classify_state(start) {
        StateClass::Consensus { winner } => {
            winners[winner - 1] = 1.0;
            0.0
        }
        _ => 1.0,
    };
    AbsorptionSolution {
        model,
        start: start.clone(),
        reachable_states: 1,
        transient_states: 0,
        method: SolveMethod::Trivial,
        failure_probability: failure,
        success_probability: 1.0 - failure,
        winner_probabilities: winners,
        expected_steps: 0.0,
        rational: None,
    }
}

/// Solves the absorbing chain started at `start`: failure (all-⊥)
/// probability, per-opinion consensus probabilities and the expected number
/// of steps to absorption.
///
/// The chain is restricted to states reachable from `start`; more than
/// `state_cap` of them is an error. The rational path needs `n ≤ 6`.
pub fn exact_absorption(
    model: Model,
    start: &OpinionCounts,
    state_cap: usize,
    precision: Precision,
) -> Result<AbsorptionSolution> {
    if classify_state(start) != StateClass::Active {
        return Ok(trivial(model, start));
    }
    let k = start.k();
    match precision {
        Precision::Double => {
            let chain = build_chain::<f64>(model, start, state_cap)?;
            let (x, method) = if chain.transient.len() <= DENSE_LIMIT {
                (dense_solve(&chain)?, SolveMethod::DenseElimination)
            } else {
                (gauss_seidel(&chain)?, SolveMethod::GaussSeidel)
            };
            let winners = x[1..=k].to_vec();
            Ok(AbsorptionSolution {
                model,
                start: start.clone(),
                reachable_states: chain.reachable,
                transient_states: chain.transient.len(),
                method,
                failure_probability: x[0],
                success_probability: crate::numeric::csum(winners.iter().copied()),
                winner_probabilities: winners,
                expected_steps: x[k + 1],
                rational: None,
            })
        }
        Precision::Rational => {
            if start.n() > RATIONAL_MAX_N {
                return Err(Error::Config(format!(
                    "rational precision supports n <= {RATIONAL_MAX_N}, got n = {}",
                    start.n()
                )));
            }
            let chain = build_chain::<BigRational>(model, start, state_cap)?;
            let x = dense_solve(&chain)?;
            let success = x[1..=k]
                .iter()
                .fold(BigRational::from_ratio(0, 1), |acc, v| acc + v.clone());
            Ok(AbsorptionSolution {
                model,
                start: start.clone(),
                reachable_states: chain.reachable,
                transient_states: chain.transient.len(),
                method: SolveMethod::RationalElimination,
                failure_probability: Field::to_f64(&x[0]),
                success_probability: Field::to_f64(&success),
                winner_probabilities: x[1..=k].iter().map(Field::to_f64).collect(),
                expected_steps: Field::to_f64(&x[k + 1]),
                rational: Some(RationalSolution {
                    failure_probability: x[0].to_string(),
                    expected_steps: x[k + 1].to_string(),
                    winner_probabilities: x[1..=k].iter().map(|v| v.to_string()).collect(),
                }),
            })
        }
    }
}
