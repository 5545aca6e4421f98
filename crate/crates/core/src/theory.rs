//! Closed-form constants of the averaging-bias and generalization bounds.
//!
//! All quantities are plain `f64` evaluations of the published formulas;
//! nothing here is tightened or re-derived.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::valley_models::GradientBounds;

/// Upper limit on the number of doublings tried when choosing `tau`.
pub const MAX_TAU_ITERATIONS: usize = 64;

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(invalid("eta", "learning rate must be positive"))
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(invalid("tau", "must be positive"))
    }
}

/// `sqrt(log(2 tau))`, the Azuma deviation factor.
fn log_factor(tau: f64) -> f64 {
    (2.0 * tau).ln().max(0.0).sqrt()
}

/// Bounds on the first flat-side iterate of every round:
/// `p_min = -eta (a_- + a_+ + 2 nu)`, `p_max = -eta (b_- - nu)`.
pub fn compute_p_bounds(bounds: &GradientBounds, eta: f64) -> Result<(f64, f64)> {
    bounds.validate()?;
    check_eta(eta)?;
    let p_min = -eta * (bounds.a_minus + bounds.a_plus + 2.0 * bounds.nu);
    let p_max = -eta * (bounds.b_minus - bounds.nu);
    Ok((p_min, p_max))
}

/// Positive root in `sqrt(t)` of `slope t + sqrt(2t) nu L + offset = 0`,
/// squared.
fn dwell_root(slope: f64, offset: f64, nu: f64, tau: f64) -> Option<f64> {
    let lin = std::f64::consts::SQRT_2 * nu * log_factor(tau);
    let radicand = 2.0 * nu * nu * (2.0 * tau).ln().max(0.0) - 4.0 * slope * offset;
    if radicand < 0.0 {
        return None;
    }
    let root = (-lin + radicand.sqrt()) / (2.0 * slope);
    Some(root * root)
}

/// Lower bound on the flat-side dwell of a round.
pub fn compute_t_min(bounds: &GradientBounds, tau: f64) -> Result<f64> {
    bounds.validate()?;
    check_tau(tau)?;
    let offset = bounds.a_minus + bounds.a_plus + 2.0 * bounds.nu;
    if offset >= 0.0 {
        return Err(Error::Infeasible(format!(
            "a_- + a_+ + 2 nu = {offset} must be negative for a positive first iterate"
        )));
    }
    dwell_root(bounds.a_plus, offset, bounds.nu, tau)
        .ok_or_else(|| Error::Infeasible("negative radicand in t_min".into()))
}

/// Upper bound on the length of a round.
pub fn compute_t_max(bounds: &GradientBounds, tau: f64) -> Result<f64> {
    bounds.validate()?;
    check_tau(tau)?;
    let offset = bounds.b_minus - bounds.nu;
    let t_max = dwell_root(bounds.b_plus, offset, bounds.nu, tau)
        .ok_or_else(|| Error::Infeasible("negative radicand in t_max".into()))?;
    debug_assert!(t_max <= t_max_remark_bound(bounds) * (1.0 + 1e-12));
    Ok(t_max)
}

/// `-(b_- - nu) / b_+`, which always dominates `t_max`.
pub fn t_max_remark_bound(bounds: &GradientBounds) -> f64 {
    -(bounds.b_minus - bounds.nu) / bounds.b_plus
}

/// `p_min - t eta a_+ - sqrt(2t) eta nu sqrt(log 2tau)`; non-negative for
/// every `t <= t_min`.
pub fn t_min_lemma_margin(bounds: &GradientBounds, eta: f64, tau: f64, t: f64) -> Result<f64> {
    let (p_min, _) = compute_p_bounds(bounds, eta)?;
    Ok(p_min - t * eta * bounds.a_plus - (2.0 * t).sqrt() * eta * bounds.nu * log_factor(tau))
}

/// `p_max - t eta b_+ - sqrt(2t) eta nu sqrt(log 2tau)`; zero at `t_max`,
/// negative beyond.
pub fn t_max_lemma_margin(bounds: &GradientBounds, eta: f64, tau: f64, t: f64) -> Result<f64> {
    let (_, p_max) = compute_p_bounds(bounds, eta)?;
    Ok(p_max - t * eta * bounds.b_plus - (2.0 * t).sqrt() * eta * bounds.nu * log_factor(tau))
}

/// Largest `tau` for which `t_min >= 2` by the feasibility remark,
/// `exp(((c - 3) a_+ / (2 nu) - 1)^2) / 2`. Infinite when `nu = 0`.
pub fn tau_upper_for_t_min_two(bounds: &GradientBounds) -> f64 {
    if bounds.nu == 0.0 {
        return f64::INFINITY;
    }
    let c = bounds.asymmetry_ratio();
    let e = (c - 3.0) * bounds.a_plus / (2.0 * bounds.nu) - 1.0;
    (e * e).exp() / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C0Result {
    pub c_0: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub tau: f64,
    /// `(t_min + t_max) / tau <= 1/2`
    pub tau_feasible: bool,
}

/// `c_0 = t_min^2 / (2 t_max) * eta * a_+`.
pub fn compute_c0(bounds: &GradientBounds, eta: f64, tau: f64) -> Result<C0Result> {
    check_eta(eta)?;
    let t_min = compute_t_min(bounds, tau)?;
    let t_max = compute_t_max(bounds, tau)?;
    let c_0 = t_min * t_min / (2.0 * t_max) * eta * bounds.a_plus;
    Ok(C0Result {
        c_0,
        t_min,
        t_max,
        tau,
        tau_feasible: (t_min + t_max) / tau <= 0.5,
    })
}

/// Smallest power of two `tau` with `2 (t_min(tau) + t_max(tau)) <= tau`.
///
/// Both dwell bounds shrink as `tau` grows, so the condition is monotone and
/// the first power of two meeting it is the fixpoint.
pub fn auto_tau(bounds: &GradientBounds) -> Result<f64> {
    let mut tau = 1.0f64;
    for _ in 0..MAX_TAU_ITERATIONS {
        let need = 2.0 * (compute_t_min(bounds, tau)? + compute_t_max(bounds, tau)?);
        if need <= tau {
            return Ok(tau);
        }
        tau *= 2.0;
    }
    Err(Error::NoTauFixpoint(MAX_TAU_ITERATIONS))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremTwoConstants {
    pub p_min: f64,
    pub p_max: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub c_0: f64,
    pub tau: f64,
    pub eta: f64,
    pub tau_feasible: bool,
    /// The `t_min >= 2` ceiling on `tau`, reported alongside.
    pub tau_ceiling_t_min_two: f64,
}

/// All constants at once; `tau = None` picks it with [`auto_tau`].
pub fn theorem_two_constants(bounds: &GradientBounds, eta: f64, tau: Option<f64>) -> Result<TheoremTwoConstants> {
    let tau = match tau {
        Some(t) => t,
        None => auto_tau(bounds)?,
    };
    let (p_min, p_max) = compute_p_bounds(bounds, eta)?;
    let c0 = compute_c0(bounds, eta, tau)?;
    Ok(TheoremTwoConstants {
        p_min,
        p_max,
        t_min: c0.t_min,
        t_max: c0.t_max,
        c_0: c0.c_0,
        tau,
        eta,
        tau_feasible: c0.tau_feasible,
        tau_ceiling_t_min_two: tau_upper_for_t_min_two(bounds),
    })
}

/// Per-condition report of the averaging theorem's hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    /// `-a_- / a_+`
    pub c: f64,
    /// `-(b_- - nu) / b_+`
    pub c_prime: f64,
    /// `e^{c/3} / 6`
    pub c_prime_limit: f64,
    pub asymmetric: bool,
    pub c_prime_ok: bool,
    pub nu_ok: bool,
    /// `a_- + a_+ + 2 nu < 0`, i.e. one sharp step always lands on the flat side.
    pub single_sharp_step: bool,
}

impl HypothesisReport {
    pub fn all_hold(&self) -> bool {
        self.asymmetric && self.c_prime_ok && self.nu_ok && self.single_sharp_step
    }
}

pub fn theorem_two_hypothesis_check(bounds: &GradientBounds) -> Result<HypothesisReport> {
    bounds.validate()?;
    let c = bounds.asymmetry_ratio();
    let c_prime = t_max_remark_bound(bounds);
    let c_prime_limit = (c / 3.0).exp() / 6.0;
    Ok(HypothesisReport {
        c,
        c_prime,
        c_prime_limit,
        asymmetric: c > 1.0,
        c_prime_ok: c_prime < c_prime_limit,
        nu_ok: bounds.nu <= bounds.a_plus,
        single_sharp_step: bounds.a_minus + bounds.a_plus + 2.0 * bounds.nu < 0.0,
    })
}

/// One asymmetric direction in the generalization bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasedDirection {
    pub c: f64,
    pub p: f64,
    /// Bias length along the direction.
    pub l: f64,
    /// Shift magnitude; only used for the feasibility flags.
    #[serde(default)]
    pub delta_bar: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremOneInput {
    pub directions: Vec<BiasedDirection>,
    pub xi: f64,
    #[serde(default)]
    pub r: Option<f64>,
    #[serde(default)]
    pub zeta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionFeasibility {
    /// `l > 4 xi / ((c - 1) p)`
    pub above_noise_floor: bool,
    /// `l <= max{r - delta_bar, delta_bar - zeta}`, as the bound is stated.
    pub within_stated_range: Option<bool>,
    /// `l <= min{r - delta_bar, delta_bar - zeta}`, what the pairing
    /// argument actually uses.
    pub within_pairing_range: Option<bool>,
}

impl DirectionFeasibility {
    pub fn feasible(&self) -> bool {
        self.above_noise_floor && self.within_pairing_range.unwrap_or(true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremOneBound {
    pub k: usize,
    pub xi: f64,
    pub bound_value: f64,
    pub per_direction: Vec<DirectionFeasibility>,
    pub feasible: bool,
}

/// `sum_i (c_i - 1) l_i p_i / 2 - 2 k xi` with per-direction side conditions.
pub fn theorem_one_lower_bound(input: &TheoremOneInput) -> Result<TheoremOneBound> {
    let k = input.directions.len();
    if k == 0 {
        return Err(invalid("directions", "need k >= 1"));
    }
    if !(input.xi >= 0.0) {
        return Err(invalid("xi", "must be non-negative"));
    }
    let mut sum = 0.0;
    let mut per_direction = Vec::with_capacity(k);
    for d in &input.directions {
        if !(d.c > 1.0) || !(d.p > 0.0) {
            return Err(invalid("directions", "need c > 1 and p > 0"));
        }
        sum += (d.c - 1.0) * d.l * d.p / 2.0;
        let above_noise_floor = d.l > 4.0 * input.xi / ((d.c - 1.0) * d.p);
        let ranges = match (input.r, input.zeta, d.delta_bar) {
            (Some(r), Some(zeta), Some(db)) => Some((r - db, db - zeta)),
            _ => None,
        };
        per_direction.push(DirectionFeasibility {
            above_noise_floor,
            within_stated_range: ranges.map(|(a, b)| d.l <= a.max(b)),
            within_pairing_range: ranges.map(|(a, b)| d.l <= a.min(b)),
        });
    }
    let bound_value = sum - 2.0 * k as f64 * input.xi;
    let feasible = per_direction.iter().all(DirectionFeasibility::feasible);
    Ok(TheoremOneBound {
        k,
        xi: input.xi,
        bound_value,
        per_direction,
        feasible,
    })
}
