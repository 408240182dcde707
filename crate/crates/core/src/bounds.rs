//! Tail-probability bounds for `|S ∩ A| / k` deviating from `α`.
//!
//! Sampling-specific forms take the normalized arguments `(η, δ, k)`; the
//! general martingale forms take `(v, c, T)`. Everything is evaluated as a
//! log-probability and exponentiated once, so large `k` underflows to a clean
//! zero instead of NaN.

use serde::Serialize;
use thiserror::Error;

use crate::model::{eta_exact, ModelError, SubsetSpec, WeightVector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn domain<T>(msg: impl Into<String>) -> Result<T, BoundsError> {
    Err(BoundsError::Domain(msg.into()))
}

fn check_nonneg(name: &str, v: f64) -> Result<(), BoundsError> {
    if v.is_nan() || v < 0.0 {
        return domain(format!("{name} must be nonnegative, got {v}"));
    }
    Ok(())
}

/// `x·ln(x/y)` with the convention `0·ln 0 = 0`.
fn xlogxy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (x / y).ln()
    }
}

/// Probability from a log-probability, clamped to `[0, 1]`.
fn from_log(log_p: f64) -> f64 {
    if log_p >= 0.0 {
        1.0
    } else {
        log_p.exp()
    }
}

/// Kullback–Leibler divergence `D(q‖p)` between Bernoulli(q) and Bernoulli(p).
pub fn kl_divergence(q: f64, p: f64) -> Result<f64, BoundsError> {
    if !(0.0..=1.0).contains(&q) {
        return domain(format!("q must lie in [0, 1], got {q}"));
    }
    if !(p > 0.0 && p < 1.0) {
        return domain(format!("p must lie in (0, 1), got {p}"));
    }
    Ok((xlogxy(q, p) + xlogxy(1.0 - q, 1.0 - p)).max(0.0))
}

/// With-replacement (binomial) upper tail `exp(−D(α+δ‖α)·k)`.
pub fn chernoff_bound(alpha: f64, delta: f64, k: u64) -> Result<f64, BoundsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return domain(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    check_nonneg("delta", delta)?;
    let q = alpha + delta;
    if q > 1.0 {
        // empty tail
        return Ok(0.0);
    }
    let d = kl_divergence(q.min(1.0), alpha)?;
    Ok(from_log(-d * k as f64))
}

/// `exp(−2δ²k)`.
pub fn hoeffding_simple(delta: f64, k: u64) -> f64 {
    from_log(-2.0 * delta * delta * k as f64)
}

/// `exp(−δ²k/2)`: Azuma–Hoeffding over `k` rounds with increments bounded by 1.
pub fn azuma_bound(delta: f64, k: u64) -> Result<f64, BoundsError> {
    check_nonneg("delta", delta)?;
    Ok(azuma_general(delta * k as f64, k))
}

/// `exp(−(c²/2)/T)`.
pub fn azuma_general(c: f64, t: u64) -> f64 {
    from_log(-(c * c / 2.0) / t as f64)
}

/// Freedman bound for Procedure X: `[(η/(η+δ))^{η+δ}·e^δ]^k`.
pub fn freedman_pi(eta: f64, delta: f64, k: u64) -> Result<f64, BoundsError> {
    check_nonneg("eta", eta)?;
    check_nonneg("delta", delta)?;
    freedman_general(eta * k as f64, delta * k as f64)
}

/// `exp(−(δ²/2)/(η+δ/3)·k)`, the relaxed form of [`freedman_pi`].
pub fn freedman_pi_simplified(eta: f64, delta: f64, k: u64) -> Result<f64, BoundsError> {
    check_nonneg("eta", eta)?;
    check_nonneg("delta", delta)?;
    freedman_general_simplified(eta * k as f64, delta * k as f64)
}

/// Freedman's inequality `(v/(v+c))^{v+c}·e^c` for a variance bound `v`.
/// `v = 0` gives the degenerate limit (1 at `c = 0`, else 0).
pub fn freedman_general(v: f64, c: f64) -> Result<f64, BoundsError> {
    check_nonneg("v", v)?;
    check_nonneg("c", c)?;
    if c == 0.0 {
        return Ok(1.0);
    }
    if v == 0.0 {
        return Ok(0.0);
    }
    let log_p = (v + c) * (v / (v + c)).ln() + c;
    Ok(from_log(log_p))
}

/// `exp(−(c²/2)/(v+c/3))`.
pub fn freedman_general_simplified(v: f64, c: f64) -> Result<f64, BoundsError> {
    check_nonneg("v", v)?;
    check_nonneg("c", c)?;
    if c == 0.0 {
        return Ok(1.0);
    }
    Ok(from_log(-(c * c / 2.0) / (v + c / 3.0)))
}

/// Fan–Grama–Liu bound for Procedure X*: `exp(−D((η+δ)/(1+η) ‖ η/(1+η))·k)`.
pub fn fgl_pi_star(eta: f64, delta: f64, k: u64) -> Result<f64, BoundsError> {
    check_nonneg("eta", eta)?;
    check_nonneg("delta", delta)?;
    if k == 0 {
        return domain("k must be positive");
    }
    fgl_general(eta * k as f64, delta * k as f64, k)
}

/// Fan–Grama–Liu inequality `exp(−D((v+c)/(v+T) ‖ v/(v+T))·T)` for
/// increments bounded above by 1. For `c >= T` the divergence is taken at its
/// `q = 1` limit.
pub fn fgl_general(v: f64, c: f64, t: u64) -> Result<f64, BoundsError> {
    check_nonneg("v", v)?;
    check_nonneg("c", c)?;
    if t == 0 {
        return domain("T must be positive");
    }
    if c == 0.0 {
        return Ok(1.0);
    }
    if v == 0.0 {
        return Ok(0.0);
    }
    let tf = t as f64;
    let p = v / (v + tf);
    let q = ((v + c) / (v + tf)).min(1.0);
    Ok(from_log(-kl_divergence(q, p)? * tf))
}

/// The product form `[(v/(v+c))^{v+c}·(T/(T−c))^{T−c}]^{T/(v+T)}` of
/// [`fgl_general`]; requires `c <= T`.
pub fn fgl_general_product(v: f64, c: f64, t: u64) -> Result<f64, BoundsError> {
    check_nonneg("v", v)?;
    check_nonneg("c", c)?;
    let tf = t as f64;
    if t == 0 || c > tf {
        return domain(format!("product form needs 0 < T and c <= T, got c={c}, T={t}"));
    }
    if c == 0.0 {
        return Ok(1.0);
    }
    if v == 0.0 {
        return Ok(0.0);
    }
    let first = (v + c) * (v / (v + c)).ln();
    let second = if c == tf { 0.0 } else { (tf - c) * (tf / (tf - c)).ln() };
    Ok(from_log((first + second) * tf / (v + tf)))
}

/// Maximum size of a subset, or no limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum SubsetSize {
    Finite(u64),
    #[serde(serialize_with = "serialize_inf")]
    Unbounded,
}

fn serialize_inf<S: serde::Serializer>(s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str("inf")
}

impl std::fmt::Display for SubsetSize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SubsetSize::Finite(m) => write!(f, "{m}"),
            SubsetSize::Unbounded => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for SubsetSize {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if matches!(s.to_ascii_lowercase().as_str(), "inf" | "infinity" | "∞") {
            return Ok(SubsetSize::Unbounded);
        }
        match s.parse::<u64>() {
            Ok(0) => Err("subset size must be positive".into()),
            Ok(m) => Ok(SubsetSize::Finite(m)),
            Err(_) => Err(format!("invalid subset size {s:?}")),
        }
    }
}

/// `η̄ = α − (k/m)·α²`, an upper bound on `η` for any `A` with at most `m`
/// elements; `m = ∞` gives `α`. Clamped at 0.
pub fn eta_upper_bound(alpha: f64, m: SubsetSize, k: u64) -> Result<f64, BoundsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return domain(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    match m {
        SubsetSize::Unbounded => Ok(alpha),
        SubsetSize::Finite(m) => Ok((alpha - (k as f64 / m as f64) * alpha * alpha).max(0.0)),
    }
}

/// Largest possible `|A|`: `n − ⌈k(1−α)⌉`, since the complement needs at
/// least that many elements of weight at most `1/k`.
pub fn m_upper_bound(n: u64, k: u64, alpha: f64) -> u64 {
    // absorb representation error such as 100·(1−0.2) = 80.000…01
    let need = (k as f64 * (1.0 - alpha) - 1e-9).ceil().max(0.0) as u64;
    n.saturating_sub(need)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Freedman,
    Fgl,
}

impl BoundKind {
    pub fn eval(self, eta: f64, delta: f64, k: u64) -> Result<f64, BoundsError> {
        match self {
            BoundKind::Freedman => freedman_pi(eta, delta, k),
            BoundKind::Fgl => fgl_pi_star(eta, delta, k),
        }
    }
}

/// Bound evaluated at `min(η^A, η^B)` where `B` is the complement of `A`.
pub fn best_of_complement(
    wv: &WeightVector,
    a: &SubsetSpec,
    delta: f64,
    bound: BoundKind,
) -> Result<f64, BoundsError> {
    let eta_a = eta_exact(wv, a)?;
    let eta_b = eta_exact(wv, &a.complement(wv.n()))?;
    bound.eval(eta_a.min(eta_b), delta, wv.k() as u64)
}

/// `4·ln 2 / 3`, the refined constant `(2/3)²·C(1/3)`.
pub const REFINED_UNIFORM_CONSTANT: f64 = 4.0 * std::f64::consts::LN_2 / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniformBound {
    /// `π*(1/2, δ, k)`.
    pub value: f64,
    /// `exp(−(8/9)·δ²k)`.
    pub pinsker: f64,
    /// `exp(−γ·δ²k)` with `γ = 4 ln 2 / 3`.
    pub refined: f64,
}

/// Bound valid for every subset, since `min(η^A, η^B) <= 1/2`.
pub fn uniform_bound(delta: f64, k: u64) -> Result<UniformBound, BoundsError> {
    check_nonneg("delta", delta)?;
    let value = fgl_pi_star(0.5, delta, k)?;
    let d2k = delta * delta * k as f64;
    Ok(UniformBound {
        value,
        pinsker: from_log(-8.0 / 9.0 * d2k),
        refined: from_log(-REFINED_UNIFORM_CONSTANT * d2k),
    })
}

/// `C(p) = D(1−p‖p)/(1−2p)² = ln((1−p)/p)/(1−2p)`, the best constant in
/// `D(q‖p) >= C(p)(q−p)²`. Written as `2·atanh(e)/e` with `e = 1−2p`, which
/// tends to 2 at `p = 1/2`.
pub fn pinsker_constant(p: f64) -> Result<f64, BoundsError> {
    if !(p > 0.0 && p < 1.0) {
        return domain(format!("p must lie in (0, 1), got {p}"));
    }
    let e = 1.0 - 2.0 * p;
    if e.abs() < 1e-8 {
        // 2 + (2/3)e² + O(e⁴)
        return Ok(2.0 + 2.0 * e * e / 3.0);
    }
    Ok(2.0 * e.atanh() / e)
}

/// Where `η` came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EtaProvenance {
    Exact,
    EtaBar { m: SubsetSize },
    WorstCaseAlpha,
    /// `1/2`, valid for every subset via the complement.
    Half,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundInputs {
    pub alpha: f64,
    pub delta: f64,
    pub k: u64,
    pub eta: f64,
    pub provenance: EtaProvenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TailSide {
    Upper,
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport {
    pub side: TailSide,
    /// Set when the requested tail cannot occur.
    pub empty_tail: bool,
    pub chernoff: f64,
    pub hoeffding_simple: f64,
    pub azuma: f64,
    pub freedman: f64,
    pub freedman_simplified: f64,
    pub fgl: f64,
}

impl BoundInputs {
    pub fn new(alpha: f64, delta: f64, k: u64, eta: f64, provenance: EtaProvenance) -> Result<Self, BoundsError> {
        if !(0.0..=1.0).contains(&alpha) {
            return domain(format!("alpha must lie in [0, 1], got {alpha}"));
        }
        check_nonneg("delta", delta)?;
        check_nonneg("eta", eta)?;
        if k == 0 {
            return domain("k must be positive");
        }
        if eta > alpha + 1e-12 {
            return domain(format!("eta = {eta} exceeds alpha = {alpha}"));
        }
        Ok(BoundInputs {
            alpha,
            delta,
            k,
            eta,
            provenance,
        })
    }

    /// Evaluates every bound for one tail. The martingale bounds are the same
    /// for both tails; the binomial reference uses the complement for the
    /// lower tail.
    pub fn report(&self, side: TailSide) -> Result<BoundReport, BoundsError> {
        let (alpha, delta, k) = (self.alpha, self.delta, self.k);
        let target = match side {
            TailSide::Upper => alpha + delta,
            TailSide::Lower => alpha - delta,
        };
        let empty_tail = !(0.0..=1.0).contains(&target);
        if empty_tail {
            return Ok(BoundReport {
                side,
                empty_tail,
                chernoff: 0.0,
                hoeffding_simple: 0.0,
                azuma: 0.0,
                freedman: 0.0,
                freedman_simplified: 0.0,
                fgl: 0.0,
            });
        }
        let reference_alpha = match side {
            TailSide::Upper => alpha,
            TailSide::Lower => 1.0 - alpha,
        };
        let chernoff = if reference_alpha <= 0.0 || reference_alpha >= 1.0 {
            // binomial with p in {0, 1} is deterministic
            if delta == 0.0 { 1.0 } else { 0.0 }
        } else {
            chernoff_bound(reference_alpha, delta, k)?
        };
        Ok(BoundReport {
            side,
            empty_tail,
            chernoff,
            hoeffding_simple: hoeffding_simple(delta, k),
            azuma: azuma_bound(delta, k)?,
            freedman: freedman_pi(self.eta, delta, k)?,
            freedman_simplified: freedman_pi_simplified(self.eta, delta, k)?,
            fgl: fgl_pi_star(self.eta, delta, k)?,
        })
    }
}
