//! Pivotal martingale samplers.
//!
//! Every procedure moves weight between undecided coordinates of a
//! [`ScaledState`] so that each coordinate's expected value never changes,
//! until every coordinate is 0 or 1. The sample is the set of ones.
//!
//! Randomness is consumed through [`BranchSelector`], which picks one outcome
//! from a list of outcome probabilities. [`RandomSource`] draws a single unit
//! variate per decision; the verifier replays every branch instead.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    is_decided, snap, CaseTag, ModelError, Procedure, SampleResult, ScaledState, SubsetSpec,
    Tolerances, TraceStep, TrajectoryTrace,
};

const SNAP: f64 = Tolerances::DEFAULT.snap;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplerError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("order is not a permutation of 0..{n}")]
    InvalidPermutation { n: usize },
    #[error("procedure {procedure} requires a deterministic order, not a random pair policy")]
    RandomPolicyNotAllowed { procedure: Procedure },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Seeded stream of unit-interval variates. Equal `(seed, stream)` pairs give
/// identical sequences; different streams are independent ChaCha8 streams.
#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RandomSource { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform variate in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform index in `0..len`.
    pub fn index(&mut self, len: usize) -> usize {
        self.rng.random_range(0..len)
    }
}

/// Source of branch decisions for the samplers.
pub trait BranchSelector {
    /// Chooses an index into `probs`, which are positive and sum to 1.
    fn select(&mut self, probs: &[f64]) -> usize;

    /// Chooses uniformly from `0..len`.
    fn pick_index(&mut self, len: usize) -> usize {
        let probs = vec![1.0 / len as f64; len];
        self.select(&probs)
    }
}

/// Index of the outcome whose cumulative-probability interval contains `u`.
pub fn select_by_variate(probs: &[f64], u: f64) -> usize {
    let mut cumulative = 0.0;
    for (idx, p) in probs.iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return idx;
        }
    }
    probs.len() - 1
}

impl BranchSelector for RandomSource {
    fn select(&mut self, probs: &[f64]) -> usize {
        let u = self.unit();
        select_by_variate(probs, u)
    }

    fn pick_index(&mut self, len: usize) -> usize {
        self.index(len)
    }
}

/// Both outcomes of a pivotal step on `(x[i], x[j])`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepBranches {
    pub case: CaseTag,
    /// `i` absorbs (transfer) or `i` saturates (saturate).
    pub first: (f64, f64),
    pub second: (f64, f64),
    pub first_prob: f64,
}

impl StepBranches {
    pub fn branch(&self, first: bool) -> ((f64, f64), f64) {
        if first {
            (self.first, self.first_prob)
        } else {
            (self.second, 1.0 - self.first_prob)
        }
    }

    /// Conditional variances of the increments of `x[i]`, `x[j]`, and of
    /// their sum restricted to a subset containing `i` and/or `j`.
    pub fn conditional_variances(&self, xi: f64, xj: f64, in_i: bool, in_j: bool) -> (f64, f64, f64) {
        let p = self.first_prob;
        let q = 1.0 - p;
        let (a, b) = (self.first, self.second);
        let var = |d1: f64, d2: f64| p * d1 * d1 + q * d2 * d2;
        let var_i = var(a.0 - xi, b.0 - xi);
        let var_j = var(a.1 - xj, b.1 - xj);
        let sub = |o: (f64, f64)| {
            let mut d = 0.0;
            if in_i {
                d += o.0 - xi;
            }
            if in_j {
                d += o.1 - xj;
            }
            d
        };
        (var_i, var_j, var(sub(a), sub(b)))
    }
}

/// Outcomes of one pivotal step. Requires both coordinates strictly inside (0, 1).
pub fn step_branches(xi: f64, xj: f64) -> Result<StepBranches, SamplerError> {
    if !(xi > 0.0 && xi < 1.0 && xj > 0.0 && xj < 1.0) {
        return Err(SamplerError::Domain(format!(
            "pivotal step needs undecided coordinates, got ({xi}, {xj})"
        )));
    }
    let s = xi + xj;
    // s == 1 is a saturate step
    if s < 1.0 {
        let s_snapped = snap(s, SNAP);
        Ok(StepBranches {
            case: CaseTag::Transfer,
            first: (s_snapped, 0.0),
            second: (0.0, s_snapped),
            first_prob: xi / s,
        })
    } else {
        let residual = snap(s - 1.0, SNAP);
        Ok(StepBranches {
            case: CaseTag::Saturate,
            first: (1.0, residual),
            second: (residual, 1.0),
            first_prob: (1.0 - xj) / (2.0 - s),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepOutcome {
    pub new_xi: f64,
    pub new_xj: f64,
    pub case: CaseTag,
    /// Probability of the branch that was taken.
    pub branch_prob: f64,
}

/// One pivotal step driven by the variate `u`: the first branch is taken
/// when `u` is below its probability.
pub fn pivotal_step(xi: f64, xj: f64, u: f64) -> Result<StepOutcome, SamplerError> {
    let branches = step_branches(xi, xj)?;
    let ((new_xi, new_xj), branch_prob) = branches.branch(u < branches.first_prob);
    Ok(StepOutcome {
        new_xi,
        new_xj,
        case: branches.case,
        branch_prob,
    })
}

/// Final outcome of a collapsed round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoundOutcome {
    /// Position within the prefix of the element that collected the prefix weight.
    pub winner: usize,
    /// Whether the winner (rather than the next element) ends at 1.
    pub winner_saturates: bool,
    /// Weight `ξ + x_next − 1` left on whichever of the two did not saturate.
    pub residual: f64,
}

/// All `2t` outcomes of a round over `prefix` followed by `next`, with their
/// probabilities. Outcomes alternate winner-saturates / next-saturates for
/// each prefix position in turn.
pub fn round_branches(prefix: &[f64], next: f64) -> Result<(Vec<f64>, Vec<RoundOutcome>), SamplerError> {
    if prefix.is_empty() {
        return Err(SamplerError::Domain("round needs a nonempty prefix".into()));
    }
    if let Some(bad) = prefix.iter().chain(std::iter::once(&next)).find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(SamplerError::Domain(format!(
            "round weights must lie strictly inside (0, 1), got {bad}"
        )));
    }
    let xi: f64 = prefix.iter().sum();
    if xi >= 1.0 || xi + next < 1.0 {
        return Err(SamplerError::Domain(format!(
            "round needs prefix sum < 1 <= prefix sum + next, got {xi} and {next}"
        )));
    }
    let denom = 2.0 - xi - next;
    let winner_sat = (1.0 - next) / denom;
    let next_sat = (1.0 - xi) / denom;
    let residual = snap(xi + next - 1.0, SNAP);

    let mut probs = Vec::with_capacity(2 * prefix.len());
    let mut outcomes = Vec::with_capacity(2 * prefix.len());
    for (r, w) in prefix.iter().enumerate() {
        let share = w / xi;
        for (winner_saturates, p) in [(true, winner_sat), (false, next_sat)] {
            probs.push(share * p);
            outcomes.push(RoundOutcome {
                winner: r,
                winner_saturates,
                residual,
            });
        }
    }
    Ok((probs, outcomes))
}

/// Resolves a whole round with the single variate `u`.
pub fn round_step(prefix: &[f64], next: f64, u: f64) -> Result<RoundOutcome, SamplerError> {
    let (probs, outcomes) = round_branches(prefix, next)?;
    Ok(outcomes[select_by_variate(&probs, u)])
}

/// How Procedure X picks its active pair.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairPolicy {
    /// The two smallest undecided indices.
    #[default]
    InOrder,
    /// A uniformly random unordered pair of undecided indices.
    RandomPair,
    /// The two earliest undecided indices under an explicit permutation.
    CustomOrder(Vec<usize>),
}

impl PairPolicy {
    pub fn is_deterministic(&self) -> bool {
        !matches!(self, PairPolicy::RandomPair)
    }
}

fn check_permutation(order: &[usize], n: usize) -> Result<(), SamplerError> {
    if order.len() != n {
        return Err(SamplerError::InvalidPermutation { n });
    }
    let mut seen = vec![false; n];
    for &i in order {
        if i >= n || seen[i] {
            return Err(SamplerError::InvalidPermutation { n });
        }
        seen[i] = true;
    }
    Ok(())
}

/// Raw outcome of a sampler run, before seed bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub x: Vec<f64>,
    pub steps: usize,
    pub rounds: usize,
    pub trace: Option<TrajectoryTrace>,
}

impl Run {
    pub fn sample(&self) -> Vec<usize> {
        self.x
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1.0)
            .map(|(i, _)| i)
            .collect()
    }
}

struct StepRecorder {
    mask: Vec<bool>,
    trace: TrajectoryTrace,
}

struct Engine {
    x: Vec<f64>,
    steps: usize,
    rounds: usize,
    recorder: Option<StepRecorder>,
}

impl Engine {
    fn new(x0: &ScaledState, track: Option<&SubsetSpec>) -> Result<Self, SamplerError> {
        let recorder = match track {
            Some(a) => {
                if let Some(&index) = a.members().last() {
                    if index >= x0.n() {
                        return Err(ModelError::IndexOutOfRange { index, n: x0.n() }.into());
                    }
                }
                Some(StepRecorder {
                    mask: a.mask(x0.n()),
                    trace: TrajectoryTrace {
                        tracked_subset: Some(a.clone()),
                        ..Default::default()
                    },
                })
            }
            None => None,
        };
        Ok(Engine {
            x: x0.clone().into_vec(),
            steps: 0,
            rounds: 0,
            recorder,
        })
    }

    fn step<S: BranchSelector + ?Sized>(&mut self, i: usize, j: usize, sel: &mut S) -> Result<(), SamplerError> {
        let (xi, xj) = (self.x[i], self.x[j]);
        let branches = step_branches(xi, xj)?;
        let first = sel.select(&[branches.first_prob, 1.0 - branches.first_prob]) == 0;
        let ((ni, nj), branch_prob) = branches.branch(first);
        self.x[i] = ni;
        self.x[j] = nj;
        self.steps += 1;
        let saturated = ni == 1.0 || nj == 1.0;
        if saturated {
            self.rounds += 1;
        }
        if let Some(rec) = &mut self.recorder {
            let (var_i, var_j, var_subset) =
                branches.conditional_variances(xi, xj, rec.mask[i], rec.mask[j]);
            rec.trace.steps.push(TraceStep {
                t: self.steps,
                i,
                j,
                case: branches.case,
                before: (xi, xj),
                after: (ni, nj),
                branch_prob,
                var_i,
                var_j,
                var_subset,
            });
            if saturated {
                rec.trace.round_boundaries.push(self.steps);
            }
        }
        Ok(())
    }

    /// A lone undecided coordinate can only carry accumulated rounding error;
    /// the integral sum fixes its value.
    fn settle(&mut self, i: usize) {
        self.x[i] = self.x[i].round();
        if self.x[i] == 1.0 {
            self.rounds += 1;
        }
    }

    fn finish(self) -> Run {
        Run {
            x: self.x,
            steps: self.steps,
            rounds: self.rounds,
            trace: self.recorder.map(|r| r.trace),
        }
    }
}

fn run_in_order<S: BranchSelector + ?Sized>(
    x0: &ScaledState,
    order: &[usize],
    sel: &mut S,
    track: Option<&SubsetSpec>,
) -> Result<Run, SamplerError> {
    let mut engine = Engine::new(x0, track)?;
    let mut current: Option<usize> = None;
    for &idx in order {
        if is_decided(engine.x[idx]) {
            continue;
        }
        let Some(c) = current else {
            current = Some(idx);
            continue;
        };
        engine.step(c, idx, sel)?;
        current = match (is_decided(engine.x[c]), is_decided(engine.x[idx])) {
            (false, _) => Some(c),
            (true, false) => Some(idx),
            (true, true) => None,
        };
    }
    if let Some(c) = current {
        engine.settle(c);
    }
    Ok(engine.finish())
}

fn run_random_pair<S: BranchSelector + ?Sized>(
    x0: &ScaledState,
    sel: &mut S,
    track: Option<&SubsetSpec>,
) -> Result<Run, SamplerError> {
    let mut engine = Engine::new(x0, track)?;
    let mut undecided: Vec<usize> = (0..x0.n()).filter(|&i| !x0.is_decided(i)).collect();
    while undecided.len() >= 2 {
        let a = sel.pick_index(undecided.len());
        let mut b = sel.pick_index(undecided.len() - 1);
        if b >= a {
            b += 1;
        }
        let (i, j) = (undecided[a], undecided[b]);
        engine.step(i, j, sel)?;
        // remove the higher position first so the lower one stays valid
        let (hi, lo) = if a > b { (a, b) } else { (b, a) };
        for pos in [hi, lo] {
            if is_decided(engine.x[undecided[pos]]) {
                undecided.swap_remove(pos);
            }
        }
    }
    if let Some(&c) = undecided.first() {
        engine.settle(c);
    }
    Ok(engine.finish())
}

fn run_rounds<S: BranchSelector + ?Sized>(
    x0: &ScaledState,
    order: &[usize],
    sel: &mut S,
) -> Result<Run, SamplerError> {
    let mut x = x0.clone().into_vec();
    let mut rounds = 0;
    let mut prefix: Vec<usize> = Vec::new();
    let mut prefix_sum = 0.0;
    for &idx in order {
        if is_decided(x[idx]) {
            continue;
        }
        if prefix.is_empty() || prefix_sum + x[idx] < 1.0 {
            prefix.push(idx);
            prefix_sum += x[idx];
            continue;
        }
        let weights: Vec<f64> = prefix.iter().map(|&i| x[i]).collect();
        let (probs, outcomes) = round_branches(&weights, x[idx])?;
        let outcome = outcomes[sel.select(&probs)];
        let winner = prefix[outcome.winner];
        for &i in &prefix {
            x[i] = 0.0;
        }
        let holder = if outcome.winner_saturates {
            x[winner] = 1.0;
            x[idx] = outcome.residual;
            idx
        } else {
            x[winner] = outcome.residual;
            x[idx] = 1.0;
            winner
        };
        rounds += 1;
        prefix.clear();
        prefix_sum = 0.0;
        if !is_decided(x[holder]) {
            prefix.push(holder);
            prefix_sum = x[holder];
        }
    }
    // Leftover prefix weight is rounding drift below the sum tolerance.
    match prefix.len() {
        0 => {}
        1 => x[prefix[0]] = x[prefix[0]].round(),
        _ => {
            let probs: Vec<f64> = prefix.iter().map(|&i| x[i] / prefix_sum).collect();
            let winner = prefix[sel.select(&probs)];
            for &i in &prefix {
                x[i] = 0.0;
            }
            x[winner] = prefix_sum.round();
        }
    }
    if prefix.iter().any(|&i| x[i] == 1.0) {
        rounds += 1;
    }
    Ok(Run {
        x,
        steps: rounds,
        rounds,
        trace: None,
    })
}

/// A configured sampling procedure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sampler {
    procedure: Procedure,
    policy: PairPolicy,
}

impl Sampler {
    /// Procedure X with the given pair policy.
    pub fn x(policy: PairPolicy) -> Self {
        Sampler {
            procedure: Procedure::X,
            policy,
        }
    }

    /// Procedure X*; `None` means the natural order.
    pub fn x_star(order: Option<Vec<usize>>) -> Self {
        Sampler {
            procedure: Procedure::XStar,
            policy: order.map_or(PairPolicy::InOrder, PairPolicy::CustomOrder),
        }
    }

    /// Procedure X**; `None` means the natural order.
    pub fn x_star_star(order: Option<Vec<usize>>) -> Self {
        Sampler {
            procedure: Procedure::XStarStar,
            policy: order.map_or(PairPolicy::InOrder, PairPolicy::CustomOrder),
        }
    }

    pub fn new(procedure: Procedure, policy: PairPolicy) -> Result<Self, SamplerError> {
        if procedure != Procedure::X && !policy.is_deterministic() {
            return Err(SamplerError::RandomPolicyNotAllowed { procedure });
        }
        Ok(Sampler { procedure, policy })
    }

    pub fn procedure(&self) -> Procedure {
        self.procedure
    }

    pub fn policy(&self) -> &PairPolicy {
        &self.policy
    }

    /// Runs the procedure with decisions from `sel`. Tracing is only
    /// available for the step-based procedures; X** ignores `track`.
    pub fn run<S: BranchSelector + ?Sized>(
        &self,
        x0: &ScaledState,
        sel: &mut S,
        track: Option<&SubsetSpec>,
    ) -> Result<Run, SamplerError> {
        let natural: Vec<usize>;
        let order: Option<&[usize]> = match &self.policy {
            PairPolicy::InOrder => {
                natural = (0..x0.n()).collect();
                Some(&natural)
            }
            PairPolicy::CustomOrder(perm) => {
                check_permutation(perm, x0.n())?;
                Some(perm)
            }
            PairPolicy::RandomPair => None,
        };
        match (self.procedure, order) {
            (Procedure::XStarStar, Some(order)) => run_rounds(x0, order, sel),
            (_, Some(order)) => run_in_order(x0, order, sel, track),
            (Procedure::X, None) => run_random_pair(x0, sel, track),
            (procedure, None) => Err(SamplerError::RandomPolicyNotAllowed { procedure }),
        }
    }

    pub fn sample(
        &self,
        x0: &ScaledState,
        rng: &mut RandomSource,
        track: Option<&SubsetSpec>,
    ) -> Result<SampleResult, SamplerError> {
        let run = self.run(x0, rng, track)?;
        Ok(SampleResult {
            sample: run.sample(),
            seed: rng.seed(),
            stream: rng.stream(),
            procedure: self.procedure,
            steps: run.steps,
            rounds: (self.procedure != Procedure::X).then_some(run.rounds),
            trace: run.trace,
        })
    }
}

/// Procedure X under `policy`.
pub fn run_procedure_x(
    x0: &ScaledState,
    policy: &PairPolicy,
    rng: &mut RandomSource,
    trace_subset: Option<&SubsetSpec>,
) -> Result<SampleResult, SamplerError> {
    Sampler::x(policy.clone()).sample(x0, rng, trace_subset)
}

/// Procedure X*: always pivot the two earliest undecided indices of `order`.
pub fn run_procedure_x_star(
    x0: &ScaledState,
    order: &[usize],
    rng: &mut RandomSource,
    trace_subset: Option<&SubsetSpec>,
) -> Result<SampleResult, SamplerError> {
    Sampler::x_star(Some(order.to_vec())).sample(x0, rng, trace_subset)
}

/// Procedure X**: one randomization per round of X*.
pub fn run_procedure_x_star_star(
    x0: &ScaledState,
    order: &[usize],
    rng: &mut RandomSource,
) -> Result<SampleResult, SamplerError> {
    Sampler::x_star_star(Some(order.to_vec())).sample(x0, rng, None)
}
