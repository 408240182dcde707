//! Ground truth for the samplers.
//!
//! Small instances are checked by walking every branch of a procedure
//! ([`exact_distribution`]); the samplers are replayed with a scripted
//! [`BranchSelector`], so the enumeration exercises the same code that
//! produces real samples. Larger instances use seeded Monte Carlo
//! ([`mc_estimate`]).

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bounds::{chernoff_bound, fgl_pi_star, freedman_pi, BoundsError};
use crate::model::{
    eta_exact, scale_weights, subset_alpha, ModelError, Procedure, ScaledState, SubsetSpec,
    WeightVector,
};
use crate::sampler::{step_branches, BranchSelector, PairPolicy, RandomSource, Sampler, SamplerError};

/// Largest population the exhaustive enumeration accepts by default.
pub const MAX_EXACT_N: usize = 14;
/// Largest population for [`compare_procedures`].
pub const MAX_COMPARE_N: usize = 10;
/// Width of Monte Carlo acceptance bands, in standard errors.
pub const SIGMA_RADIUS: f64 = 4.0;
/// Slack for exact comparisons.
pub const EXACT_TOL: f64 = 1e-10;
/// Slack when deciding whether a count reaches a tail threshold.
const THRESHOLD_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("population of {n} exceeds the enumeration limit of {max}")]
    TooLarge { n: usize, max: usize },
    #[error("exact enumeration needs a deterministic pair policy")]
    PolicyNotDeterministic,
    #[error("Monte Carlo needs at least {min} trials, got {trials}")]
    TooFewTrials { trials: u64, min: u64 },
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Replays a fixed prefix of choices, then takes branch 0, recording the
/// arity of every decision so the caller can advance to the next leaf.
#[derive(Default)]
struct Replay {
    path: Vec<(usize, usize)>,
    pos: usize,
    prob: f64,
}

impl BranchSelector for Replay {
    fn select(&mut self, probs: &[f64]) -> usize {
        let choice = match self.path.get(self.pos) {
            Some(&(choice, _)) => choice,
            None => {
                self.path.push((0, probs.len()));
                0
            }
        };
        self.pos += 1;
        self.prob *= probs[choice];
        choice
    }
}

impl Replay {
    fn rewind(&mut self) {
        self.pos = 0;
        self.prob = 1.0;
    }

    /// Moves to the next unexplored leaf; false once the tree is exhausted.
    fn advance(&mut self) -> bool {
        self.path.truncate(self.pos);
        while let Some(last) = self.path.last_mut() {
            if last.0 + 1 < last.1 {
                last.0 += 1;
                return true;
            }
            self.path.pop();
        }
        false
    }
}

/// Variance bookkeeping gathered from step traces (X and X* only).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceSummary {
    /// `E[V_T]` for the tracked subset.
    pub expected_vt: f64,
    /// Largest `V_T` over all paths. Diagnostic only.
    pub max_path_vt: f64,
    /// `Σ_{i∈A} x0(1 − x0) = kη`.
    pub k_eta: f64,
    /// `E[Σ_t Var(Y_t^i | F_{t−1})]` for every coordinate.
    pub expected_coordinate_vt: Vec<f64>,
    /// Largest per-step excess of `Var(Y^A)` over `Σ_{i∈A} Var(Y^i)`.
    pub max_subadditivity_excess: f64,
    /// Largest per-round movement `max_A |Z_ℓ^A − Z_{ℓ−1}^A|` over all paths.
    pub max_round_movement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactDistribution {
    pub procedure: Procedure,
    pub inclusion_probs: Vec<f64>,
    /// `P[|S ∩ A| = j]` for `j = 0..=k`.
    pub subset_pmf: Vec<f64>,
    pub leaf_count: usize,
    pub min_rounds: usize,
    pub max_rounds: usize,
    pub variance: Option<VarianceSummary>,
    /// Probability of each sample, keyed by membership bitmask.
    #[serde(skip)]
    pub sample_pmf: BTreeMap<u32, f64>,
}

impl ExactDistribution {
    pub fn total_mass(&self) -> f64 {
        self.subset_pmf.iter().sum()
    }

    /// `P[|S ∩ A| >= k(α + δ)]`.
    pub fn upper_tail(&self, k: usize, alpha: f64, delta: f64) -> f64 {
        let threshold = k as f64 * (alpha + delta) - THRESHOLD_SLACK;
        self.subset_pmf
            .iter()
            .enumerate()
            .filter(|(j, _)| *j as f64 >= threshold)
            .map(|(_, p)| p)
            .sum()
    }

    /// `P[|S ∩ A| <= k(α − δ)]`.
    pub fn lower_tail(&self, k: usize, alpha: f64, delta: f64) -> f64 {
        let threshold = k as f64 * (alpha - delta) + THRESHOLD_SLACK;
        self.subset_pmf
            .iter()
            .enumerate()
            .filter(|(j, _)| (*j as f64) <= threshold)
            .map(|(_, p)| p)
            .sum()
    }

    pub fn max_inclusion_error(&self, x0: &ScaledState) -> f64 {
        self.inclusion_probs
            .iter()
            .zip(x0.x())
            .map(|(p, x)| (p - x).abs())
            .fold(0.0, f64::max)
    }
}

/// Total variation distance between two sample distributions.
pub fn total_variation(a: &ExactDistribution, b: &ExactDistribution) -> f64 {
    let mut keys: Vec<u32> = a.sample_pmf.keys().chain(b.sample_pmf.keys()).copied().collect();
    keys.sort_unstable();
    keys.dedup();
    0.5 * keys
        .iter()
        .map(|key| {
            let p = a.sample_pmf.get(key).copied().unwrap_or(0.0);
            let q = b.sample_pmf.get(key).copied().unwrap_or(0.0);
            (p - q).abs()
        })
        .sum::<f64>()
}

/// Walks every branch of `sampler` from `x0`, with the default size limit.
pub fn exact_distribution(
    x0: &ScaledState,
    sampler: &Sampler,
    a: &SubsetSpec,
) -> Result<ExactDistribution, VerifyError> {
    exact_distribution_with_limit(x0, sampler, a, MAX_EXACT_N)
}

pub fn exact_distribution_with_limit(
    x0: &ScaledState,
    sampler: &Sampler,
    a: &SubsetSpec,
    max_n: usize,
) -> Result<ExactDistribution, VerifyError> {
    let n = x0.n();
    if n > max_n {
        return Err(VerifyError::TooLarge { n, max: max_n });
    }
    if !sampler.policy().is_deterministic() {
        return Err(VerifyError::PolicyNotDeterministic);
    }
    let mask = a.mask(n);
    if a.members().iter().any(|&i| i >= n) {
        return Err(ModelError::IndexOutOfRange { index: *a.members().last().unwrap(), n }.into());
    }
    let traced = sampler.procedure() != Procedure::XStarStar;

    let k = x0.k();
    let mut inclusion = vec![0.0; n];
    let mut subset_pmf = vec![0.0; k + 1];
    let mut sample_pmf = BTreeMap::new();
    let mut leaf_count = 0;
    let mut min_rounds = usize::MAX;
    let mut max_rounds = 0;

    let mut expected_vt = 0.0;
    let mut max_path_vt: f64 = 0.0;
    let mut coord_vt = vec![0.0; n];
    let mut max_excess = f64::NEG_INFINITY;
    let mut max_movement: f64 = 0.0;

    let mut replay = Replay::default();
    loop {
        replay.rewind();
        let run = sampler.run(x0, &mut replay, traced.then_some(a))?;
        let p = replay.prob;
        leaf_count += 1;
        min_rounds = min_rounds.min(run.rounds);
        max_rounds = max_rounds.max(run.rounds);

        let mut key = 0u32;
        let mut hits = 0;
        for (i, &v) in run.x.iter().enumerate() {
            if v == 1.0 {
                inclusion[i] += p;
                key |= 1 << i;
                if mask[i] {
                    hits += 1;
                }
            }
        }
        subset_pmf[hits] += p;
        *sample_pmf.entry(key).or_insert(0.0) += p;

        if let Some(trace) = &run.trace {
            let vt = trace.accumulated_variance();
            expected_vt += p * vt;
            max_path_vt = max_path_vt.max(vt);
            for step in &trace.steps {
                coord_vt[step.i] += p * step.var_i;
                coord_vt[step.j] += p * step.var_j;
                let mut singles = 0.0;
                if mask[step.i] {
                    singles += step.var_i;
                }
                if mask[step.j] {
                    singles += step.var_j;
                }
                max_excess = max_excess.max(step.var_subset - singles);
            }
            for movement in trace.round_movements() {
                max_movement = max_movement.max(movement);
            }
        }

        if !replay.advance() {
            break;
        }
    }

    let variance = traced.then(|| VarianceSummary {
        expected_vt,
        max_path_vt,
        k_eta: a.members().iter().map(|&i| x0.x()[i] * (1.0 - x0.x()[i])).sum(),
        expected_coordinate_vt: coord_vt,
        max_subadditivity_excess: max_excess.max(0.0),
        max_round_movement: max_movement,
    });

    Ok(ExactDistribution {
        procedure: sampler.procedure(),
        inclusion_probs: inclusion,
        subset_pmf,
        leaf_count,
        min_rounds,
        max_rounds,
        variance,
        sample_pmf,
    })
}

/// Which tail bounds a procedure is guaranteed to satisfy.
pub fn guaranteed_bounds(sampler: &Sampler) -> (bool, bool) {
    let fgl = match sampler.procedure() {
        Procedure::X => sampler.policy().is_deterministic(),
        Procedure::XStar | Procedure::XStarStar => true,
    };
    (true, fgl)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailBounds {
    /// With-replacement reference; not a guarantee for these procedures.
    pub chernoff: f64,
    pub freedman: f64,
    pub fgl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailEntry {
    pub observed: f64,
    /// Standard error of the estimate (zero for exact values).
    pub radius: f64,
    pub bounds: TailBounds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailSummary {
    pub upper: TailEntry,
    pub lower: TailEntry,
}

fn tail_bounds(alpha: f64, eta: f64, delta: f64, k: u64, upper: bool) -> Result<TailBounds, BoundsError> {
    let target = if upper { alpha + delta } else { alpha - delta };
    if !(0.0..=1.0).contains(&target) {
        return Ok(TailBounds { chernoff: 0.0, freedman: 0.0, fgl: 0.0 });
    }
    let reference = if upper { alpha } else { 1.0 - alpha };
    let chernoff = if reference > 0.0 && reference < 1.0 {
        chernoff_bound(reference, delta, k)?
    } else if delta == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(TailBounds {
        chernoff,
        freedman: freedman_pi(eta, delta, k)?,
        fgl: fgl_pi_star(eta, delta, k)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub check: String,
    pub observed: f64,
    pub limit: f64,
    pub pass: bool,
}

impl Verdict {
    fn at_most(check: impl Into<String>, observed: f64, limit: f64) -> Self {
        Verdict {
            check: check.into(),
            observed,
            limit,
            pass: observed <= limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceSummary {
    pub n: usize,
    pub k: usize,
    pub subset_size: usize,
    pub alpha: f64,
    pub eta: f64,
    pub delta: f64,
}

impl InstanceSummary {
    fn new(wv: &WeightVector, a: &SubsetSpec, delta: f64) -> Result<Self, ModelError> {
        Ok(InstanceSummary {
            n: wv.n(),
            k: wv.k(),
            subset_size: a.len(),
            alpha: subset_alpha(wv, a)?,
            eta: eta_exact(wv, a)?,
            delta,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InclusionErrors {
    /// `|P̂[i ∈ S] − k·w[i]|` per index.
    pub per_index: Vec<f64>,
    pub max_abs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Exact,
    Mc,
}

/// Machine-readable outcome of a verification run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub instance: InstanceSummary,
    pub procedure: Procedure,
    pub policy: PairPolicy,
    pub mode: Mode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub inclusion_errors: InclusionErrors,
    pub tail: TailSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance: Option<VarianceSummary>,
    pub verdicts: Vec<Verdict>,
    pub pass: bool,
}

/// Exhaustive verification of inclusion probabilities, tail bounds and the
/// variance identities on one instance.
pub fn verify_exact(
    wv: &WeightVector,
    sampler: &Sampler,
    a: &SubsetSpec,
    delta: f64,
) -> Result<VerificationReport, VerifyError> {
    let x0 = scale_weights(wv);
    let dist = exact_distribution(&x0, sampler, a)?;
    let instance = InstanceSummary::new(wv, a, delta)?;
    let k = wv.k();
    let kf = k as u64;

    let per_index: Vec<f64> = dist
        .inclusion_probs
        .iter()
        .zip(x0.x())
        .map(|(p, x)| (p - x).abs())
        .collect();
    let max_abs = per_index.iter().copied().fold(0.0, f64::max);

    let upper = TailEntry {
        observed: dist.upper_tail(k, instance.alpha, delta),
        radius: 0.0,
        bounds: tail_bounds(instance.alpha, instance.eta, delta, kf, true)?,
    };
    let lower = TailEntry {
        observed: dist.lower_tail(k, instance.alpha, delta),
        radius: 0.0,
        bounds: tail_bounds(instance.alpha, instance.eta, delta, kf, false)?,
    };

    let mut verdicts = vec![
        Verdict::at_most("inclusion_max_abs_error", max_abs, EXACT_TOL),
        Verdict::at_most("pmf_total_mass_error", (dist.total_mass() - 1.0).abs(), EXACT_TOL),
    ];
    let (freedman, fgl) = guaranteed_bounds(sampler);
    for (name, entry) in [("upper", &upper), ("lower", &lower)] {
        if freedman {
            verdicts.push(Verdict::at_most(
                format!("{name}_tail_le_freedman"),
                entry.observed,
                entry.bounds.freedman + EXACT_TOL,
            ));
        }
        if fgl {
            verdicts.push(Verdict::at_most(
                format!("{name}_tail_le_fgl"),
                entry.observed,
                entry.bounds.fgl + EXACT_TOL,
            ));
        }
    }
    if sampler.procedure() != Procedure::X || sampler.policy().is_deterministic() {
        let expected = x0.expected_rounds();
        let spread = dist.min_rounds.abs_diff(expected).max(dist.max_rounds.abs_diff(expected));
        verdicts.push(Verdict::at_most("round_count_deviation", spread as f64, 0.0));
    }
    if let Some(var) = &dist.variance {
        verdicts.push(Verdict::at_most("expected_vt_le_k_eta", var.expected_vt, var.k_eta + EXACT_TOL));
        let singleton_err = var
            .expected_coordinate_vt
            .iter()
            .zip(x0.x())
            .map(|(v, x)| (v - x * (1.0 - x)).abs())
            .fold(0.0, f64::max);
        verdicts.push(Verdict::at_most("singleton_variance_identity_error", singleton_err, EXACT_TOL));
        verdicts.push(Verdict::at_most("subadditivity_excess", var.max_subadditivity_excess, 1e-12));
        verdicts.push(Verdict::at_most("round_movement", var.max_round_movement, 1.0 + 1e-12));
    }

    let pass = verdicts.iter().all(|v| v.pass);
    Ok(VerificationReport {
        instance,
        procedure: sampler.procedure(),
        policy: sampler.policy().clone(),
        mode: Mode::Exact,
        trials: None,
        seed: None,
        inclusion_errors: InclusionErrors { per_index, max_abs },
        tail: TailSummary { upper, lower },
        variance: dist.variance,
        verdicts,
        pass,
    })
}

/// Monte Carlo estimate with its standard-error radius `sqrt(p̂(1−p̂)/trials)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub estimate: f64,
    pub radius: f64,
}

impl Estimate {
    fn from_count(count: u64, trials: u64) -> Self {
        let p = count as f64 / trials as f64;
        Estimate {
            estimate: p,
            radius: (p * (1.0 - p) / trials as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub procedure: Procedure,
    pub trials: u64,
    pub seed: u64,
    pub instance: InstanceSummary,
    pub expected_inclusion: Vec<f64>,
    pub empirical_inclusion: Vec<Estimate>,
    pub upper_tail: Estimate,
    pub lower_tail: Estimate,
    pub upper_bounds: TailBounds,
    pub lower_bounds: TailBounds,
    pub verdicts: Vec<Verdict>,
    pub pass: bool,
}

/// Minimum replication count accepted by [`mc_estimate`].
pub const MIN_TRIALS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McConfig {
    pub trials: u64,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
}

#[derive(Clone)]
struct Counts {
    inclusion: Vec<u64>,
    upper: u64,
    lower: u64,
}

impl Counts {
    fn new(n: usize) -> Self {
        Counts { inclusion: vec![0; n], upper: 0, lower: 0 }
    }

    fn merge(mut self, other: Counts) -> Counts {
        for (a, b) in self.inclusion.iter_mut().zip(other.inclusion) {
            *a += b;
        }
        self.upper += other.upper;
        self.lower += other.lower;
        self
    }
}

/// Runs `trials` independent replications, replication `t` on stream `t`
/// of `seed`. Counts are integer sums, so the result is independent of the
/// worker count and scheduling.
pub fn mc_estimate(
    sampler: &Sampler,
    wv: &WeightVector,
    a: &SubsetSpec,
    delta: f64,
    config: McConfig,
) -> Result<McReport, VerifyError> {
    if config.trials < MIN_TRIALS {
        return Err(VerifyError::TooFewTrials { trials: config.trials, min: MIN_TRIALS });
    }
    let instance = InstanceSummary::new(wv, a, delta)?;
    let x0 = scale_weights(wv);
    let n = wv.n();
    let k = wv.k();
    let mask = a.mask(n);
    let upper_threshold = k as f64 * (instance.alpha + delta) - THRESHOLD_SLACK;
    let lower_threshold = k as f64 * (instance.alpha - delta) + THRESHOLD_SLACK;

    let replicate = |t: u64| -> Result<Counts, SamplerError> {
        let mut rng = RandomSource::new(config.seed, t);
        let run = sampler.run(&x0, &mut rng, None)?;
        let mut counts = Counts::new(n);
        let mut hits = 0usize;
        for (i, &v) in run.x.iter().enumerate() {
            if v == 1.0 {
                counts.inclusion[i] += 1;
                if mask[i] {
                    hits += 1;
                }
            }
        }
        counts.upper += (hits as f64 >= upper_threshold) as u64;
        counts.lower += (hits as f64 <= lower_threshold) as u64;
        Ok(counts)
    };
    let aggregate = || {
        (0..config.trials)
            .into_par_iter()
            .map(replicate)
            .try_reduce(|| Counts::new(n), |a, b| Ok(a.merge(b)))
    };
    let counts = match config.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| SamplerError::Domain(e.to_string()))?
            .install(aggregate)?,
        None => aggregate()?,
    };

    let trials = config.trials;
    let kf = k as u64;
    let empirical_inclusion: Vec<Estimate> = counts
        .inclusion
        .iter()
        .map(|&c| Estimate::from_count(c, trials))
        .collect();
    let upper_tail = Estimate::from_count(counts.upper, trials);
    let lower_tail = Estimate::from_count(counts.lower, trials);
    let upper_bounds = tail_bounds(instance.alpha, instance.eta, delta, kf, true)?;
    let lower_bounds = tail_bounds(instance.alpha, instance.eta, delta, kf, false)?;

    let mut verdicts = Vec::new();
    // inclusion bands use the standard error implied by the target probability
    let worst = empirical_inclusion
        .iter()
        .zip(x0.x())
        .map(|(est, &p)| {
            let sigma = (p * (1.0 - p) / trials as f64).sqrt();
            (est.estimate - p).abs() - SIGMA_RADIUS * sigma
        })
        .fold(f64::NEG_INFINITY, f64::max);
    verdicts.push(Verdict::at_most("inclusion_excess_over_4_sigma", worst, 1e-12));
    let (freedman, fgl) = guaranteed_bounds(sampler);
    for (name, est, bounds) in [("upper", upper_tail, upper_bounds), ("lower", lower_tail, lower_bounds)] {
        if freedman {
            verdicts.push(Verdict::at_most(
                format!("{name}_tail_le_freedman"),
                est.estimate,
                bounds.freedman + SIGMA_RADIUS * est.radius,
            ));
        }
        if fgl {
            verdicts.push(Verdict::at_most(
                format!("{name}_tail_le_fgl"),
                est.estimate,
                bounds.fgl + SIGMA_RADIUS * est.radius,
            ));
        }
    }
    let pass = verdicts.iter().all(|v| v.pass);

    Ok(McReport {
        procedure: sampler.procedure(),
        trials,
        seed: config.seed,
        instance,
        expected_inclusion: x0.x().to_vec(),
        empirical_inclusion,
        upper_tail,
        lower_tail,
        upper_bounds,
        lower_bounds,
        verdicts,
        pass,
    })
}

impl McReport {
    pub fn into_report(self, policy: PairPolicy) -> VerificationReport {
        let per_index: Vec<f64> = self
            .empirical_inclusion
            .iter()
            .zip(&self.expected_inclusion)
            .map(|(e, p)| (e.estimate - p).abs())
            .collect();
        let max_abs = per_index.iter().copied().fold(0.0, f64::max);
        VerificationReport {
            instance: self.instance,
            procedure: self.procedure,
            policy,
            mode: Mode::Mc,
            trials: Some(self.trials),
            seed: Some(self.seed),
            inclusion_errors: InclusionErrors { per_index, max_abs },
            tail: TailSummary {
                upper: TailEntry {
                    observed: self.upper_tail.estimate,
                    radius: self.upper_tail.radius,
                    bounds: self.upper_bounds,
                },
                lower: TailEntry {
                    observed: self.lower_tail.estimate,
                    radius: self.lower_tail.radius,
                    bounds: self.lower_bounds,
                },
            },
            variance: None,
            verdicts: self.verdicts,
            pass: self.pass,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MartingaleCheck {
    pub samples: u64,
    pub transfer_steps: u64,
    pub saturate_steps: u64,
    /// Largest `|E[new_xi] − xi|` and `|E[new_xj] − xj|` seen.
    pub max_error: f64,
    pub pass: bool,
}

/// Checks the one-step martingale condition on `samples` random pairs:
/// the branch-weighted mean of each new coordinate equals the old one.
pub fn check_martingale_step(samples: u64, seed: u64) -> MartingaleCheck {
    let mut rng = RandomSource::new(seed, 0);
    let mut transfer_steps = 0;
    let mut saturate_steps = 0;
    let mut max_error: f64 = 0.0;
    let mut drawn = 0;
    while drawn < samples {
        let (xi, xj) = (rng.unit(), rng.unit());
        let Ok(b) = step_branches(xi, xj) else { continue };
        drawn += 1;
        match b.case {
            crate::model::CaseTag::Transfer => transfer_steps += 1,
            crate::model::CaseTag::Saturate => saturate_steps += 1,
        }
        let p = b.first_prob;
        let mean_i = p * b.first.0 + (1.0 - p) * b.second.0;
        let mean_j = p * b.first.1 + (1.0 - p) * b.second.1;
        max_error = max_error.max((mean_i - xi).abs()).max((mean_j - xj).abs());
    }
    MartingaleCheck {
        samples,
        transfer_steps,
        saturate_steps,
        max_error,
        pass: max_error <= 1e-12,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProcedureComparison {
    pub tv_star_vs_star_star: f64,
    pub tv_x_vs_star: f64,
    pub expected_rounds: usize,
    pub star_rounds: (usize, usize),
    pub star_star_rounds: (usize, usize),
    pub pass: bool,
}

/// Exact comparison of X (in the given order), X* and X** on one instance.
pub fn compare_procedures(
    x0: &ScaledState,
    order: &[usize],
    a: &SubsetSpec,
) -> Result<ProcedureComparison, VerifyError> {
    if x0.n() > MAX_COMPARE_N {
        return Err(VerifyError::TooLarge { n: x0.n(), max: MAX_COMPARE_N });
    }
    let x = exact_distribution(x0, &Sampler::x(PairPolicy::CustomOrder(order.to_vec())), a)?;
    let star = exact_distribution(x0, &Sampler::x_star(Some(order.to_vec())), a)?;
    let star_star = exact_distribution(x0, &Sampler::x_star_star(Some(order.to_vec())), a)?;
    let tv_star_vs_star_star = total_variation(&star, &star_star);
    let tv_x_vs_star = total_variation(&x, &star);
    let expected_rounds = x0.expected_rounds();
    let rounds_ok = |d: &ExactDistribution| d.min_rounds == expected_rounds && d.max_rounds == expected_rounds;
    let pass = tv_star_vs_star_star <= EXACT_TOL
        && tv_x_vs_star <= EXACT_TOL
        && rounds_ok(&star)
        && rounds_ok(&star_star);
    Ok(ProcedureComparison {
        tv_star_vs_star_star,
        tv_x_vs_star,
        expected_rounds,
        star_rounds: (star.min_rounds, star.max_rounds),
        star_star_rounds: (star_star.min_rounds, star_star.max_rounds),
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(x: &[f64]) -> ScaledState {
        ScaledState::new(x.to_vec()).unwrap()
    }

    #[test]
    fn two_element_instance() {
        let x0 = state(&[0.3, 0.7]);
        let a = SubsetSpec::new(vec![0], 2).unwrap();
        let d = exact_distribution(&x0, &Sampler::x(PairPolicy::InOrder), &a).unwrap();
        assert_eq!(d.leaf_count, 2);
        assert!((d.inclusion_probs[0] - 0.3).abs() < 1e-15);
        assert!((d.inclusion_probs[1] - 0.7).abs() < 1e-15);
        assert!((d.subset_pmf[1] - 0.3).abs() < 1e-15);
        let v = d.variance.unwrap();
        assert!((v.expected_vt - 0.21).abs() < 1e-15);
    }

    #[test]
    fn all_ones_is_degenerate() {
        let x0 = state(&[1.0, 1.0, 1.0]);
        let a = SubsetSpec::new(vec![0, 2], 3).unwrap();
        for sampler in [Sampler::x_star(None), Sampler::x_star_star(None)] {
            let d = exact_distribution(&x0, &sampler, &a).unwrap();
            assert_eq!(d.leaf_count, 1);
            assert_eq!(d.inclusion_probs, vec![1.0; 3]);
            assert_eq!(d.subset_pmf, vec![0.0, 0.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn uniform_four_of_two() {
        let x0 = state(&[0.5; 4]);
        let a = SubsetSpec::new(vec![0, 1], 4).unwrap();
        let d = exact_distribution(&x0, &Sampler::x(PairPolicy::InOrder), &a).unwrap();
        for p in &d.inclusion_probs {
            assert!((p - 0.5).abs() < 1e-15);
        }
        let v = d.variance.unwrap();
        // kη = Σ_{i∈A} x(1−x) = 0.5
        assert!((v.k_eta - 0.5).abs() < 1e-15);
        assert!(v.expected_vt <= v.k_eta + 1e-12);
    }

    #[test]
    fn enumeration_limits() {
        let x0 = state(&[0.5; 16]);
        assert!(matches!(
            exact_distribution(&x0, &Sampler::x_star(None), &SubsetSpec::empty()),
            Err(VerifyError::TooLarge { n: 16, max: 14 })
        ));
        let x0 = state(&[0.5, 0.5]);
        assert!(matches!(
            exact_distribution(&x0, &Sampler::x(PairPolicy::RandomPair), &SubsetSpec::empty()),
            Err(VerifyError::PolicyNotDeterministic)
        ));
        let x0 = state(&[0.5; 12]);
        assert!(compare_procedures(&x0, &(0..12).collect::<Vec<_>>(), &SubsetSpec::empty()).is_err());
    }

    #[test]
    fn martingale_check_passes() {
        let c = check_martingale_step(10_000, 3);
        assert!(c.pass, "{c:?}");
        assert!(c.transfer_steps > 0 && c.saturate_steps > 0);
    }

    #[test]
    fn uniform_full_subset_has_no_tails() {
        let wv = WeightVector::new(vec![0.1; 10], 3).unwrap();
        let a = SubsetSpec::full(10);
        let r = mc_estimate(
            &Sampler::x_star(None),
            &wv,
            &a,
            0.1,
            McConfig { trials: 1000, seed: 5, jobs: Some(2) },
        )
        .unwrap();
        assert_eq!(r.upper_tail.estimate, 0.0);
        assert_eq!(r.lower_tail.estimate, 0.0);
        assert!(r.pass);
    }

    #[test]
    fn mc_rejects_few_trials() {
        let wv = WeightVector::new(vec![0.5, 0.5], 1).unwrap();
        let err = mc_estimate(
            &Sampler::x_star(None),
            &wv,
            &SubsetSpec::empty(),
            0.1,
            McConfig { trials: 10, seed: 0, jobs: None },
        )
        .unwrap_err();
        assert!(matches!(err, VerifyError::TooFewTrials { .. }));
    }
}
