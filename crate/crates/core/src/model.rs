//! Validated domain types: relative weights, scaled states, subsets, traces
//! and sample results, plus the subset quantities `alpha` and `eta`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Numerical tolerances used when validating inputs and snapping coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Allowed absolute deviation of `Σw` from 1 (and of `Σx` from `k`).
    pub sum: f64,
    /// Allowed excess of a weight over `1/k`.
    pub bound: f64,
    /// Coordinates within this distance of 0 or 1 are snapped and decided.
    pub snap: f64,
}

impl Tolerances {
    pub const DEFAULT: Tolerances = Tolerances {
        sum: 1e-9,
        bound: 1e-12,
        snap: 1e-12,
    };
}

impl Default for Tolerances {
    fn default() -> Self {
        Self::DEFAULT
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("weight vector is empty")]
    EmptyWeights,
    #[error("sample size k must be at least 1")]
    ZeroK,
    #[error("weight at index {index} is not a finite nonnegative number ({value})")]
    NegativeWeight { index: usize, value: f64 },
    #[error("weights have no positive total (sum = {sum})")]
    NonPositiveTotal { sum: f64 },
    #[error("weight at index {index} is {value}, exceeding 1/k = {limit}")]
    WeightTooLarge { index: usize, value: f64, limit: f64 },
    #[error("population size n = {n} is smaller than k = {k}")]
    LengthBelowK { n: usize, k: usize },
    #[error("weights sum to {sum}, expected 1 (pass normalize to rescale)")]
    SumNotOne { sum: f64 },
    #[error("coordinate {index} = {value} lies outside [0, 1]")]
    CoordinateOutOfRange { index: usize, value: f64 },
    #[error("coordinates sum to {sum}, which is not a positive integer")]
    NonIntegralSum { sum: f64 },
    #[error("index {index} out of range for population of size {n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("{ids} ids supplied for {weights} weights")]
    LengthMismatch { ids: usize, weights: usize },
    #[error("unknown element id {0:?}")]
    UnknownId(String),
}

impl ModelError {
    /// Stable variant name, used in CLI diagnostics.
    pub fn name(&self) -> &'static str {
        match self {
            ModelError::EmptyWeights => "EmptyWeights",
            ModelError::ZeroK => "ZeroK",
            ModelError::NegativeWeight { .. } => "NegativeWeight",
            ModelError::NonPositiveTotal { .. } => "NonPositiveTotal",
            ModelError::WeightTooLarge { .. } => "WeightTooLarge",
            ModelError::LengthBelowK { .. } => "LengthBelowK",
            ModelError::SumNotOne { .. } => "SumNotOne",
            ModelError::CoordinateOutOfRange { .. } => "CoordinateOutOfRange",
            ModelError::NonIntegralSum { .. } => "NonIntegralSum",
            ModelError::IndexOutOfRange { .. } => "IndexOutOfRange",
            ModelError::LengthMismatch { .. } => "LengthMismatch",
            ModelError::UnknownId(_) => "UnknownId",
        }
    }
}

/// Relative weights `w` with `Σw = 1` and every `w[i] <= 1/k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightVector {
    weights: Vec<f64>,
    k: usize,
    ids: Option<Vec<String>>,
}

impl WeightVector {
    /// Validates already-normalized weights with the default tolerances.
    pub fn new(weights: Vec<f64>, k: usize) -> Result<Self, ModelError> {
        validate_weights(&weights, k, false, &Tolerances::DEFAULT)
    }

    /// Attaches element labels; one per weight.
    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self, ModelError> {
        if ids.len() != self.weights.len() {
            return Err(ModelError::LengthMismatch {
                ids: ids.len(),
                weights: self.weights.len(),
            });
        }
        self.ids = Some(ids);
        Ok(self)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    /// Label of element `i`: its id if present, else its index.
    pub fn label(&self, i: usize) -> String {
        match &self.ids {
            Some(ids) => ids[i].clone(),
            None => i.to_string(),
        }
    }

    /// Looks up an element by label, falling back to a numeric index.
    pub fn index_of(&self, label: &str) -> Result<usize, ModelError> {
        if let Some(ids) = &self.ids {
            if let Some(pos) = ids.iter().position(|id| id == label) {
                return Ok(pos);
            }
        }
        match label.parse::<usize>() {
            Ok(i) if i < self.n() => Ok(i),
            Ok(i) => Err(ModelError::IndexOutOfRange { index: i, n: self.n() }),
            Err(_) => Err(ModelError::UnknownId(label.to_string())),
        }
    }
}

/// Checks raw weights against the `WeightVector` invariants, optionally
/// dividing by their sum first.
pub fn validate_weights(
    raw: &[f64],
    k: usize,
    normalize: bool,
    tol: &Tolerances,
) -> Result<WeightVector, ModelError> {
    if raw.is_empty() {
        return Err(ModelError::EmptyWeights);
    }
    if k == 0 {
        return Err(ModelError::ZeroK);
    }
    if let Some((index, &value)) = raw
        .iter()
        .enumerate()
        .find(|(_, w)| !w.is_finite() || **w < 0.0)
    {
        return Err(ModelError::NegativeWeight { index, value });
    }
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(ModelError::NonPositiveTotal { sum: total });
    }
    if raw.len() < k {
        return Err(ModelError::LengthBelowK { n: raw.len(), k });
    }

    let weights: Vec<f64> = if normalize {
        raw.iter().map(|w| w / total).collect()
    } else {
        raw.to_vec()
    };

    let limit = 1.0 / k as f64;
    if let Some((index, &value)) = weights
        .iter()
        .enumerate()
        .find(|(_, w)| **w > limit + tol.bound)
    {
        return Err(ModelError::WeightTooLarge { index, value, limit });
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > tol.sum {
        return Err(ModelError::SumNotOne { sum });
    }

    Ok(WeightVector {
        weights,
        k,
        ids: None,
    })
}

/// Snaps `v` to 0 or 1 when it lies within `tol` of either, and clamps to [0, 1].
#[inline]
pub fn snap(v: f64, tol: f64) -> f64 {
    if v <= tol {
        0.0
    } else if v >= 1.0 - tol {
        1.0
    } else {
        v
    }
}

#[inline]
pub fn is_decided(v: f64) -> bool {
    v == 0.0 || v == 1.0
}

/// A point of `{x ∈ [0,1]^n : Σx = k}`, the state of the sampling martingale.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaledState {
    x: Vec<f64>,
    k: usize,
}

impl ScaledState {
    /// Builds a state from coordinates directly. `k` is the rounded sum.
    pub fn new(x: Vec<f64>) -> Result<Self, ModelError> {
        Self::with_tolerances(x, &Tolerances::DEFAULT)
    }

    pub fn with_tolerances(x: Vec<f64>, tol: &Tolerances) -> Result<Self, ModelError> {
        if x.is_empty() {
            return Err(ModelError::EmptyWeights);
        }
        let mut snapped = Vec::with_capacity(x.len());
        for (index, &value) in x.iter().enumerate() {
            if !value.is_finite() || value < -tol.snap || value > 1.0 + tol.snap {
                return Err(ModelError::CoordinateOutOfRange { index, value });
            }
            snapped.push(snap(value, tol.snap));
        }
        let sum: f64 = snapped.iter().sum();
        let k = sum.round();
        if k < 1.0 || (sum - k).abs() > tol.sum {
            return Err(ModelError::NonIntegralSum { sum });
        }
        Ok(ScaledState {
            x: snapped,
            k: k as usize,
        })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn sum(&self) -> f64 {
        self.x.iter().sum()
    }

    pub fn is_decided(&self, i: usize) -> bool {
        is_decided(self.x[i])
    }

    /// Indices whose coordinate is already 0 or 1.
    pub fn decided_mask(&self) -> Vec<bool> {
        self.x.iter().map(|&v| is_decided(v)).collect()
    }

    /// Number of coordinates that start at exactly 1.
    pub fn certain_count(&self) -> usize {
        self.x.iter().filter(|&&v| v == 1.0).count()
    }

    /// Rounds an X* or X** run must take: `k` minus the certain members.
    pub fn expected_rounds(&self) -> usize {
        self.k - self.certain_count()
    }

    pub(crate) fn into_vec(self) -> Vec<f64> {
        self.x
    }
}

/// `x = k·w`, with coordinates snapped to {0, 1} where within tolerance.
pub fn scale_weights(wv: &WeightVector) -> ScaledState {
    let k = wv.k as f64;
    let x = wv
        .weights
        .iter()
        .map(|w| snap(k * w, Tolerances::DEFAULT.snap).min(1.0))
        .collect();
    ScaledState { x, k: wv.k }
}

/// A set of population indices, stored sorted and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SubsetSpec {
    members: Vec<usize>,
}

impl SubsetSpec {
    pub fn new(mut members: Vec<usize>, n: usize) -> Result<Self, ModelError> {
        if let Some(&index) = members.iter().find(|&&i| i >= n) {
            return Err(ModelError::IndexOutOfRange { index, n });
        }
        members.sort_unstable();
        members.dedup();
        Ok(SubsetSpec { members })
    }

    pub fn empty() -> Self {
        SubsetSpec::default()
    }

    pub fn full(n: usize) -> Self {
        SubsetSpec {
            members: (0..n).collect(),
        }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.members.binary_search(&i).is_ok()
    }

    /// Membership as a dense mask of length `n`.
    pub fn mask(&self, n: usize) -> Vec<bool> {
        let mut mask = vec![false; n];
        for &i in &self.members {
            if i < n {
                mask[i] = true;
            }
        }
        mask
    }

    pub fn complement(&self, n: usize) -> SubsetSpec {
        let mask = self.mask(n);
        SubsetSpec {
            members: (0..n).filter(|&i| !mask[i]).collect(),
        }
    }

    fn check_range(&self, n: usize) -> Result<(), ModelError> {
        match self.members.last() {
            Some(&index) if index >= n => Err(ModelError::IndexOutOfRange { index, n }),
            _ => Ok(()),
        }
    }
}

/// Relative weight of `a`: `Σ_{i∈A} w[i]`.
pub fn subset_alpha(wv: &WeightVector, a: &SubsetSpec) -> Result<f64, ModelError> {
    a.check_range(wv.n())?;
    Ok(a.members.iter().map(|&i| wv.weights[i]).sum())
}

/// Variance proxy `η = α − k·Σ_{i∈A} w[i]²`, clamped below at 0.
pub fn eta_exact(wv: &WeightVector, a: &SubsetSpec) -> Result<f64, ModelError> {
    let alpha = subset_alpha(wv, a)?;
    let squares: f64 = a.members.iter().map(|&i| wv.weights[i] * wv.weights[i]).sum();
    Ok((alpha - wv.k as f64 * squares).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseTag {
    /// `x[i] + x[j] < 1`: one coordinate absorbs the other's weight.
    Transfer,
    /// `x[i] + x[j] >= 1`: one coordinate is raised to exactly 1.
    Saturate,
}

/// One pivotal step as recorded in a trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceStep {
    /// 1-based step number.
    pub t: usize,
    pub i: usize,
    pub j: usize,
    pub case: CaseTag,
    pub before: (f64, f64),
    pub after: (f64, f64),
    /// Probability of the branch that was taken.
    pub branch_prob: f64,
    /// Conditional variances of the two active coordinates' increments.
    pub var_i: f64,
    pub var_j: f64,
    /// Conditional variance of the tracked subset's increment.
    pub var_subset: f64,
}

/// Step-by-step record of one run of Procedure X or X*.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct TrajectoryTrace {
    pub steps: Vec<TraceStep>,
    /// Step numbers `T_1 < … < T_k1` at which some coordinate reached 1.
    pub round_boundaries: Vec<usize>,
    pub tracked_subset: Option<SubsetSpec>,
}

impl TrajectoryTrace {
    /// Accumulated conditional variance `V_T` of the tracked subset.
    pub fn accumulated_variance(&self) -> f64 {
        self.steps.iter().map(|s| s.var_subset).sum()
    }

    /// Per-coordinate accumulated conditional variance, length `n`.
    pub fn coordinate_variances(&self, n: usize) -> Vec<f64> {
        let mut acc = vec![0.0; n];
        for s in &self.steps {
            acc[s.i] += s.var_i;
            acc[s.j] += s.var_j;
        }
        acc
    }

    /// Step ranges `(first, last)` (1-based, inclusive) of each round.
    fn round_ranges(&self) -> Vec<(usize, usize)> {
        let mut ranges = Vec::with_capacity(self.round_boundaries.len());
        let mut start = 1;
        for &end in &self.round_boundaries {
            ranges.push((start, end));
            start = end + 1;
        }
        ranges
    }

    /// Net change of every coordinate touched in each round, as `(index, delta)`.
    pub fn round_deltas(&self) -> Vec<Vec<(usize, f64)>> {
        self.round_ranges()
            .into_iter()
            .map(|(first, last)| {
                let mut net: Vec<(usize, f64, f64)> = Vec::new();
                for s in &self.steps[first - 1..last] {
                    for (idx, pre, post) in [(s.i, s.before.0, s.after.0), (s.j, s.before.1, s.after.1)] {
                        match net.iter_mut().find(|(c, _, _)| *c == idx) {
                            Some(entry) => entry.2 = post,
                            None => net.push((idx, pre, post)),
                        }
                    }
                }
                net.into_iter().map(|(c, pre, post)| (c, post - pre)).collect()
            })
            .collect()
    }

    /// Largest `|Z_ℓ^A − Z_{ℓ−1}^A|` over all subsets `A`, for each round.
    ///
    /// The maximizing subset takes every coordinate that moved in one
    /// direction, so this is the larger of the total gain and total loss.
    pub fn round_movements(&self) -> Vec<f64> {
        self.round_deltas()
            .into_iter()
            .map(|deltas| {
                let gain: f64 = deltas.iter().map(|(_, d)| d.max(0.0)).sum();
                let loss: f64 = deltas.iter().map(|(_, d)| (-d).max(0.0)).sum();
                gain.max(loss)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Procedure {
    #[serde(rename = "X")]
    X,
    #[serde(rename = "X*")]
    XStar,
    #[serde(rename = "X**")]
    XStarStar,
}

impl std::fmt::Display for Procedure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Procedure::X => "X",
            Procedure::XStar => "X*",
            Procedure::XStarStar => "X**",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleResult {
    /// Selected indices in increasing order; always `k` of them.
    pub sample: Vec<usize>,
    pub seed: u64,
    pub stream: u64,
    pub procedure: Procedure,
    /// Number of pivotal steps (X, X*) or round randomizations (X**).
    pub steps: usize,
    /// Number of rounds; recorded for X* and X**.
    pub rounds: Option<usize>,
    pub trace: Option<TrajectoryTrace>,
}
