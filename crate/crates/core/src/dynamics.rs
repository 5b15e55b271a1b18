//! Counts-level USD chains for the gossip and population-protocol models.
//!
//! Vertices holding the same opinion are exchangeable under both models, so
//! the chain state is the vector of per-opinion counts plus the undecided
//! count. Opinions are numbered `1..=k` in every public API; `counts()[i - 1]`
//! holds opinion `i`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::{binomial, ClassIndex};

/// Largest supported vertex count. Keeps fourth power sums inside `u128`.
pub const MAX_VERTICES: u64 = 1 << 31;

/// Default round cap for gossip trials.
pub const GOSSIP_MAX_STEPS: u64 = 1_000_000;
/// Default interaction cap for population-protocol trials.
pub const PP_MAX_STEPS: u64 = 1_000_000_000;

/// A vertex opinion: a decided index in `1..=k` or undecided (⊥).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Opinion {
    Undecided,
    Decided(u32),
}

impl fmt::Display for Opinion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Opinion::Undecided => write!(f, "⊥"),
            Opinion::Decided(i) => write!(f, "{i}"),
        }
    }
}

/// The USD update rule: distinct decided opinions cancel to ⊥, an undecided
/// vertex adopts what it sees, and otherwise the vertex keeps its opinion.
pub fn usd_update(own: Opinion, seen: Opinion) -> Opinion {
    match (own, seen) {
        (Opinion::Decided(a), Opinion::Decided(b)) if a != b => Opinion::Undecided,
        (Opinion::Undecided, other) => other,
        (own, _) => own,
    }
}

/// Communication model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Gossip,
    Pp,
}

impl Model {
    pub fn as_str(self) -> &'static str {
        match self {
            Model::Gossip => "gossip",
            Model::Pp => "pp",
        }
    }

    pub fn default_max_steps(self) -> u64 {
        match self {
            Model::Gossip => GOSSIP_MAX_STEPS,
            Model::Pp => PP_MAX_STEPS,
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gossip" => Ok(Model::Gossip),
            "pp" => Ok(Model::Pp),
            other => Err(Error::Config(format!("unknown model '{other}' (expected gossip|pp)"))),
        }
    }
}

/// Terminal classification of a state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StateClass {
    /// Every vertex holds `winner` (1-based).
    Consensus {
        winner: usize,
    },
    /// Every vertex is undecided; absorbing failure.
    AllUndecided,
    Active,
}

/// Per-opinion vertex counts plus the undecided count.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "CountsRepr", into = "CountsRepr")]
pub struct OpinionCounts {
    n: u64,
    counts: Vec<u64>,
    undecided: u64,
}

/// Wire form: `{"n":int,"k":int,"counts":[int,...],"undecided":int}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct CountsRepr {
    n: u64,
    k: usize,
    counts: Vec<u64>,
    undecided: u64,
}

impl TryFrom<CountsRepr> for OpinionCounts {
    type Error = Error;

    fn try_from(r: CountsRepr) -> Result<Self> {
        if r.k != r.counts.len() {
            return Err(Error::InvalidState(format!(
                "k = {} but {} counts given",
                r.k,
                r.counts.len()
            )));
        }
        OpinionCounts::with_n(r.n, r.counts, r.undecided)
    }
}

impl From<OpinionCounts> for CountsRepr {
    fn from(s: OpinionCounts) -> Self {
        CountsRepr {
            n: s.n,
            k: s.counts.len(),
            counts: s.counts,
            undecided: s.undecided,
        }
    }
}

impl OpinionCounts {
    /// Builds a state with `n = sum(counts) + undecided`.
    pub fn new(counts: Vec<u64>, undecided: u64) -> Result<Self> {
        let decided = counts
            .iter()
            .try_fold(0u64, |acc, &c| acc.checked_add(c))
            .ok_or_else(|| Error::InvalidState("count overflow".into()))?;
        let n = decided
            .checked_add(undecided)
            .ok_or_else(|| Error::InvalidState("count overflow".into()))?;
        Self::with_n(n, counts, undecided)
    }

    /// Builds a state and checks `sum(counts) + undecided == n`.
    pub fn with_n(n: u64, counts: Vec<u64>, undecided: u64) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::InvalidState("k must be at least 1".into()));
        }
        if n == 0 {
            return Err(Error::InvalidState("n must be positive".into()));
        }
        if n > MAX_VERTICES {
            return Err(Error::InvalidState(format!("n = {n} exceeds {MAX_VERTICES}")));
        }
        let total = counts.iter().fold(undecided as u128, |acc, &c| acc + c as u128);
        if total != n as u128 {
            return Err(Error::InvalidState(format!("counts sum to {total} but n = {n}")));
        }
        Ok(Self { n, counts, undecided })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    /// Raw counts; index `i - 1` holds opinion `i`.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn undecided(&self) -> u64 {
        self.undecided
    }

    pub fn decided(&self) -> u64 {
        self.n - self.undecided
    }

    /// Count of opinion `i` (1-based).
    pub fn count(&self, i: usize) -> Result<u64> {
        self.check_index(i)?;
        Ok(self.counts[i - 1])
    }

    /// `α(i)`: fraction of vertices holding opinion `i` (1-based).
    pub fn alpha(&self, i: usize) -> Result<f64> {
        Ok(self.count(i)? as f64 / self.n as f64)
    }

    pub(crate) fn check_index(&self, i: usize) -> Result<()> {
        if i == 0 || i > self.counts.len() {
            Err(Error::IndexOutOfRange {
                index: i,
                k: self.counts.len(),
            })
        } else {
            Ok(())
        }
    }

    /// Opinion held by the vertex at `offset` under the canonical layout:
    /// undecided vertices first, then opinions in ascending order.
    pub fn opinion_at(&self, offset: u64) -> Opinion {
        debug_assert!(offset < self.n);
        if offset < self.undecided {
            return Opinion::Undecided;
        }
        let mut acc = self.undecided;
        for (i, &c) in self.counts.iter().enumerate() {
            acc += c;
            if offset < acc {
                return Opinion::Decided(i as u32 + 1);
            }
        }
        unreachable!("offset below n always lands in a class")
    }

    /// Moves one vertex from class `from` to class `to`.
    pub(crate) fn move_vertex(&mut self, from: Opinion, to: Opinion) {
        match from {
            Opinion::Undecided => self.undecided -= 1,
            Opinion::Decided(i) => self.counts[i as usize - 1] -= 1,
        }
        match to {
            Opinion::Undecided => self.undecided += 1,
            Opinion::Decided(i) => self.counts[i as usize - 1] += 1,
        }
    }

    pub fn class(&self) -> StateClass {
        classify_state(self)
    }
}

impl fmt::Display for OpinionCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.counts.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")+{}⊥", self.undecided)
    }
}

pub fn classify_state(state: &OpinionCounts) -> StateClass {
    if state.undecided == state.n {
        return StateClass::AllUndecided;
    }
    if state.undecided == 0 {
        if let Some(i) = state.counts.iter().position(|&c| c == state.n) {
            return StateClass::Consensus { winner: i + 1 };
        }
    }
    StateClass::Active
}

/// Deterministic random stream for one trial.
///
/// The generator is ChaCha8 seeded from `master_seed` with its 64-bit stream
/// selector set to `stream_id`, so every `(master_seed, stream_id)` pair
/// yields an independent, host-independent sequence.
#[derive(Clone, Debug)]
pub struct StepRandomness {
    master_seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl StepRandomness {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_id);
        Self {
            master_seed,
            stream_id,
            rng,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

impl RngCore for StepRandomness {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// One synchronous gossip round.
///
/// A vertex of opinion `i` keeps it with probability `α(i) + 1 − β` and
/// becomes ⊥ otherwise; an undecided vertex adopts `i` with probability
/// `α(i)` and stays ⊥ with probability `1 − β`. Draw order: one binomial per
/// decided class in ascending order, then the undecided multinomial as
/// conditional binomials in ascending order.
pub fn gossip_step<R: Rng + ?Sized>(state: &OpinionCounts, rng: &mut R) -> OpinionCounts {
    if state.class() != StateClass::Active {
        return state.clone();
    }
    let mut next = vec![0u64; state.k()];
    let undecided = gossip_round(&state.counts, state.undecided, state.n, rng, &mut next);
    OpinionCounts {
        n: state.n,
        counts: next,
        undecided,
    }
}

fn gossip_round<R: Rng + ?Sized>(counts: &[u64], undecided: u64, n: u64, rng: &mut R, next: &mut [u64]) -> u64 {
    let nf = n as f64;
    for (slot, &c) in next.iter_mut().zip(counts) {
        *slot = if c == 0 {
            0
        } else {
            binomial(rng, c, (c + undecided) as f64 / nf)
        };
    }
    let mut pool = undecided;
    let mut mass_left = n;
    for (slot, &c) in next.iter_mut().zip(counts) {
        if pool == 0 {
            break;
        }
        if c > 0 {
            let adopted = binomial(rng, pool, c as f64 / mass_left as f64);
            *slot += adopted;
            pool -= adopted;
        }
        mass_left -= c;
    }
    n - next.iter().sum::<u64>()
}

/// One population-protocol interaction: an initiator and a responder are
/// drawn uniformly (with replacement) and the initiator applies
/// [`usd_update`].
pub fn pp_step<R: Rng + ?Sized>(state: &OpinionCounts, rng: &mut R) -> OpinionCounts {
    let mut next = state.clone();
    if state.class() != StateClass::Active {
        return next;
    }
    let initiator = state.opinion_at(rng.random_range(0..state.n));
    let responder = state.opinion_at(rng.random_range(0..state.n));
    let updated = usd_update(initiator, responder);
    if updated != initiator {
        next.move_vertex(initiator, updated);
    }
    next
}

/// Result of one run of the chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrialOutcome {
    Consensus { winner: usize, steps: u64 },
    Failure { steps: u64 },
    Timeout { steps: u64 },
}

impl TrialOutcome {
    pub fn steps(&self) -> u64 {
        match *self {
            TrialOutcome::Consensus { steps, .. }
            | TrialOutcome::Failure { steps }
            | TrialOutcome::Timeout { steps } => steps,
        }
    }

    pub fn winner(&self) -> Option<usize> {
        match *self {
            TrialOutcome::Consensus { winner, .. } => Some(winner),
            _ => None,
        }
    }

    pub fn is_success(&self) -> bool {
        matches!(self, TrialOutcome::Consensus { .. })
    }
}

/// Callback invoked with `(step, state)` after every step.
pub type Observer<'a> = &'a mut dyn FnMut(u64, &OpinionCounts);

/// Runs the chosen chain from `init` until consensus, all-⊥, or `max_steps`
/// steps. Step `t = 0` is the initial configuration.
///
/// The trajectory is identical to repeatedly calling [`gossip_step`] or
/// [`pp_step`] with the same generator.
pub fn run_trial<R: Rng + ?Sized>(
    model: Model,
    init: &OpinionCounts,
    rng: &mut R,
    max_steps: u64,
    observer: Option<Observer<'_>>,
) -> TrialOutcome {
    match model {
        Model::Gossip => run_gossip(init, rng, max_steps, observer),
        Model::Pp => run_pp(init, rng, max_steps, observer),
    }
}

fn terminal(state: &OpinionCounts, steps: u64) -> Option<TrialOutcome> {
    match state.class() {
        StateClass::Consensus { winner } => Some(TrialOutcome::Consensus { winner, steps }),
        StateClass::AllUndecided => Some(TrialOutcome::Failure { steps }),
        StateClass::Active => None,
    }
}

fn run_gossip<R: Rng + ?Sized>(
    init: &OpinionCounts,
    rng: &mut R,
    max_steps: u64,
    mut observer: Option<Observer<'_>>,
) -> TrialOutcome {
    let mut state = init.clone();
    let mut next = vec![0u64; state.k()];
    let mut t = 0u64;
    loop {
        if let Some(done) = terminal(&state, t) {
            return done;
        }
        if t >= max_steps {
            return TrialOutcome::Timeout { steps: t };
        }
        state.undecided = gossip_round(&state.counts, state.undecided, state.n, rng, &mut next);
        std::mem::swap(&mut state.counts, &mut next);
        t += 1;
        if let Some(obs) = observer.as_mut() {
            obs(t, &state);
        }
    }
}

fn run_pp<R: Rng + ?Sized>(
    init: &OpinionCounts,
    rng: &mut R,
    max_steps: u64,
    mut observer: Option<Observer<'_>>,
) -> TrialOutcome {
    let mut state = init.clone();
    if let Some(done) = terminal(&state, 0) {
        return done;
    }
    let n = state.n;
    let mut index = ClassIndex::new(&state.counts);
    let class_of = |state: &OpinionCounts, index: &ClassIndex, offset: u64| {
        if offset < state.undecided {
            Opinion::Undecided
        } else {
            Opinion::Decided(index.find(offset - state.undecided) as u32 + 1)
        }
    };
    let mut t = 0u64;
    while t < max_steps {
        let initiator = class_of(&state, &index, rng.random_range(0..n));
        let responder = class_of(&state, &index, rng.random_range(0..n));
        let updated = usd_update(initiator, responder);
        t += 1;
        if updated != initiator {
            state.move_vertex(initiator, updated);
            if let Opinion::Decided(i) = initiator {
                index.add(i as usize - 1, -1);
            }
            if let Opinion::Decided(i) = updated {
                index.add(i as usize - 1, 1);
            }
        }
        if let Some(obs) = observer.as_mut() {
            obs(t, &state);
        }
        if updated != initiator {
            let absorbed = match updated {
                Opinion::Decided(i) => state.undecided == 0 && state.counts[i as usize - 1] == n,
                Opinion::Undecided => state.undecided == n,
            };
            if absorbed {
                return terminal(&state, t).expect("absorbing state");
            }
        }
    }
    TrialOutcome::Timeout { steps: t }
}
