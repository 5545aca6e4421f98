//! Population/empirical loss pairs related by a random sign-pattern shift.
//!
//! A [`ShiftModel`] fixes a separable population loss and, for every sign
//! pattern `s` in `{-1, +1}^k`, an empirical loss
//! `L_s(x) = L(x + delta_s) + P_s(x)` where `P_s` is a non-negative bump sum
//! whose sup-norm is certified to be at most `xi`. The expected population
//! loss at the empirical minimizer, with and without a bias along the
//! asymmetric directions, is then an exact average over all `2^k` patterns.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::landscape::{norm, Landscape};
use crate::rng;
use crate::stats::MeanEstimate;
use crate::theory::{theorem_one_lower_bound, BiasedDirection, TheoremOneBound, TheoremOneInput};
use crate::valley_models::{AxisLoss, SeparableValleyND};

/// Largest `k` handled by exact enumeration.
pub const MAX_ENUMERATION_K: usize = 20;

/// Offsets `v` at which a shift gap is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub offsets: Vec<Vec<f64>>,
    pub description: String,
}

impl SamplingPlan {
    /// `steps` evenly spaced offsets `t u`, `t` in `[-radius, radius]`.
    pub fn line(u: &[f64], radius: f64, steps: usize) -> Self {
        let steps = steps.max(1);
        let offsets = (0..steps)
            .map(|i| {
                let t = if steps == 1 {
                    0.0
                } else {
                    -radius + 2.0 * radius * i as f64 / (steps - 1) as f64
                };
                u.iter().map(|x| t * x).collect()
            })
            .collect();
        Self {
            offsets,
            description: format!("line: {steps} points on [-{radius}, {radius}] along a unit direction"),
        }
    }

    /// The origin plus `n` points uniform in the `d`-ball of `radius`.
    pub fn ball(dim: usize, radius: f64, n: usize, seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let mut offsets = vec![vec![0.0; dim]];
        for _ in 0..n {
            offsets.push(sample_in_ball(dim, radius, &mut rng));
        }
        Self {
            offsets,
            description: format!("ball: origin + {n} uniform samples, radius {radius}, seed {seed}"),
        }
    }

    pub fn union(mut self, other: SamplingPlan) -> Self {
        self.offsets.extend(other.offsets);
        self.description = format!("{} + {}", self.description, other.description);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

pub(crate) fn sample_in_ball(dim: usize, radius: f64, rng: &mut rng::Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = norm(&v).max(f64::MIN_POSITIVE);
    let scale = radius * rng.random::<f64>().powf(1.0 / dim as f64) / n;
    v.iter_mut().for_each(|x| *x *= scale);
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MinMethod {
    /// Both minima known in closed form.
    Exact,
    /// Minima estimated over the evaluated grid points.
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftGapResult {
    pub delta: Vec<f64>,
    /// Maximum over the grid; a lower bound on the true supremum.
    pub gap: f64,
    pub grid: String,
    pub points_used: usize,
    pub min_method: MinMethod,
    /// `gap / gap(delta = 0)`, filled by [`scan_shift`].
    pub ratio: Option<f64>,
}

/// `max_v |L'(w + v + delta) - L_hat(w + v)|` over plan offsets with
/// `|v| <= radius`, with `L' = L - min L + min L_hat`.
pub fn shift_gap<P: Landscape + ?Sized, E: Landscape + ?Sized>(
    population: &P,
    empirical: &E,
    w: &[f64],
    delta: &[f64],
    radius: f64,
    plan: &SamplingPlan,
) -> Result<ShiftGapResult> {
    if plan.is_empty() {
        return Err(invalid("plan", "sampling plan is empty"));
    }
    if !(radius >= 0.0) {
        return Err(invalid("radius", "must be non-negative"));
    }
    let pairs: Vec<(f64, f64)> = plan
        .offsets
        .par_iter()
        .filter(|v| norm(v) <= radius * (1.0 + 1e-12))
        .map(|v| {
            let x: Vec<f64> = w.iter().zip(v.iter()).map(|(a, b)| a + b).collect();
            let shifted: Vec<f64> = x.iter().zip(delta).map(|(a, b)| a + b).collect();
            (population.loss(&shifted), empirical.loss(&x))
        })
        .collect();
    if pairs.is_empty() {
        return Err(invalid("plan", "no plan offsets inside the ball"));
    }
    let (min_pop, min_emp, method) = match (population.known_min(), empirical.known_min()) {
        (Some(a), Some(b)) => (a, b, MinMethod::Exact),
        _ => (
            pairs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min),
            pairs.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
            MinMethod::Grid,
        ),
    };
    let gap = pairs
        .iter()
        .map(|(lp, le)| (lp - min_pop + min_emp - le).abs())
        .fold(0.0, f64::max);
    Ok(ShiftGapResult {
        delta: delta.to_vec(),
        gap,
        grid: plan.description.clone(),
        points_used: pairs.len(),
        min_method: method,
        ratio: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftScan {
    pub shifts: Vec<f64>,
    pub gaps: Vec<f64>,
    pub xi_0: f64,
    /// `gaps / xi_0`; `None` when `xi_0 = 0`.
    pub ratios: Option<Vec<f64>>,
    pub degenerate_denominator: bool,
    pub argmin_shift: f64,
    pub min_gap: f64,
}

/// Shift gaps for `delta = t u`, `t` over `range` in `steps` points.
#[allow(clippy::too_many_arguments)]
pub fn scan_shift<P: Landscape + ?Sized, E: Landscape + ?Sized>(
    population: &P,
    empirical: &E,
    w: &[f64],
    u: &[f64],
    range: (f64, f64),
    steps: usize,
    radius: f64,
    plan: &SamplingPlan,
) -> Result<ShiftScan> {
    if steps < 2 || !(range.1 > range.0) {
        return Err(invalid("range", "need steps >= 2 over a non-empty interval"));
    }
    let shifts: Vec<f64> = (0..steps)
        .map(|i| range.0 + (range.1 - range.0) * i as f64 / (steps - 1) as f64)
        .collect();
    let gaps = shifts
        .iter()
        .map(|&t| {
            let delta: Vec<f64> = u.iter().map(|x| t * x).collect();
            shift_gap(population, empirical, w, &delta, radius, plan).map(|g| g.gap)
        })
        .collect::<Result<Vec<_>>>()?;
    let zero = vec![0.0; u.len()];
    let xi_0 = shift_gap(population, empirical, w, &zero, radius, plan)?.gap;
    let (arg, min_gap) = gaps
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &g)| if g < acc.1 { (i, g) } else { acc });
    let degenerate = xi_0 == 0.0;
    Ok(ShiftScan {
        ratios: (!degenerate).then(|| gaps.iter().map(|g| g / xi_0).collect()),
        argmin_shift: shifts[arg],
        shifts,
        gaps,
        xi_0,
        degenerate_denominator: degenerate,
        min_gap,
    })
}

/// `inner(x + shift) + offset`.
#[derive(Debug, Clone)]
pub struct ShiftedLandscape<L> {
    pub inner: L,
    pub shift: Vec<f64>,
    pub offset: f64,
}

impl<L: Landscape> Landscape for ShiftedLandscape<L> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn loss(&self, x: &[f64]) -> f64 {
        let y: Vec<f64> = x.iter().zip(&self.shift).map(|(a, b)| a + b).collect();
        self.inner.loss(&y) + self.offset
    }
    fn known_min(&self) -> Option<f64> {
        self.inner.known_min().map(|m| m + self.offset)
    }
}

/// Compactly supported smooth bump `amplitude * exp(1 - 1/(1 - s^2))`,
/// `s = |t - center| / radius`; its maximum is `amplitude` at the centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: Vec<f64>,
    pub radius: f64,
    pub amplitude: f64,
}

impl Bump {
    fn value(&self, t: &[f64]) -> f64 {
        let s2 = t
            .iter()
            .zip(&self.center)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / (self.radius * self.radius);
        if s2 >= 1.0 {
            0.0
        } else {
            self.amplitude * (1.0 - 1.0 / (1.0 - s2)).exp()
        }
    }
}

/// Non-negative bump sum with `sup <= sum of amplitudes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Perturbation {
    pub bumps: Vec<Bump>,
}

impl Perturbation {
    pub fn value(&self, t: &[f64]) -> f64 {
        self.bumps.iter().map(|b| b.value(t)).sum()
    }

    /// Certified sup-norm.
    pub fn sup_bound(&self) -> f64 {
        self.bumps.iter().map(|b| b.amplitude).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BumpPlacement {
    /// Bumps never touch the empirical minimizer, which stays at `-delta_s`.
    AwayFromMinimizer,
    /// Bumps may cover the minimizer; it is then found by coordinate descent.
    Anywhere,
}

/// Number of bumps per sign pattern.
pub const BUMPS_PER_PATTERN: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftModel {
    pub population: SeparableValleyND,
    pub delta_bar: Vec<f64>,
    pub xi: f64,
    pub r: f64,
    pub zeta: f64,
    /// Comparison radius for the shift-gap invariant.
    pub radius: f64,
    pub seed: u64,
    pub placement: BumpPlacement,
}

/// Builds the shift model over `valley` with magnitudes `delta_bar`.
pub fn build_shift_pair(
    valley: SeparableValleyND,
    delta_bar: Vec<f64>,
    xi: f64,
    r: f64,
    zeta: f64,
    seed: u64,
) -> Result<ShiftModel> {
    if delta_bar.len() != valley.k() {
        return Err(invalid("delta_bar", "one magnitude per direction"));
    }
    if !(xi >= 0.0 && xi.is_finite()) {
        return Err(invalid("xi", "must be non-negative"));
    }
    if !(r > 0.0 && zeta >= 0.0 && zeta <= r) {
        return Err(invalid("r", "need 0 <= zeta <= r, r > 0"));
    }
    for &d in &delta_bar {
        if !(zeta <= d && d <= r) {
            return Err(invalid("delta_bar", format!("{d} outside [zeta, r] = [{zeta}, {r}]")));
        }
    }
    let radius = norm(&delta_bar) + r;
    Ok(ShiftModel {
        population: valley,
        delta_bar,
        xi,
        r,
        zeta,
        radius,
        seed,
        placement: BumpPlacement::AwayFromMinimizer,
    })
}

impl ShiftModel {
    pub fn with_placement(mut self, placement: BumpPlacement) -> Self {
        self.placement = placement;
        self
    }

    pub fn k(&self) -> usize {
        self.delta_bar.len()
    }

    /// Shift coordinates of a pattern: bit `i` set means `+delta_bar_i`.
    pub fn delta_coords(&self, pattern: u64) -> Vec<f64> {
        self.delta_bar
            .iter()
            .enumerate()
            .map(|(i, d)| if pattern >> i & 1 == 1 { *d } else { -*d })
            .collect()
    }

    fn bump_radius(&self) -> f64 {
        0.25 * self.r
    }

    /// The seeded perturbation of a pattern.
    pub fn perturbation(&self, pattern: u64) -> Perturbation {
        if self.xi == 0.0 {
            return Perturbation::default();
        }
        let mut rng = rng::substream(self.seed, pattern);
        let k = self.k();
        let rho = self.bump_radius();
        let minimizer: Vec<f64> = self.delta_coords(pattern).iter().map(|d| -d).collect();
        let weights: Vec<f64> = (0..BUMPS_PER_PATTERN).map(|_| 0.5 + rng.random::<f64>()).collect();
        let total: f64 = weights.iter().sum();
        weights
            .iter()
            .map(|w| {
                let center = loop {
                    let c: Vec<f64> = minimizer
                        .iter()
                        .map(|m| m + self.r * (2.0 * rng.random::<f64>() - 1.0))
                        .collect();
                    let dist = norm(&c.iter().zip(&minimizer).map(|(a, b)| a - b).collect::<Vec<_>>());
                    if self.placement == BumpPlacement::Anywhere || dist > rho * (1.0 + 1e-9) {
                        break c;
                    }
                };
                debug_assert_eq!(center.len(), k);
                Bump {
                    center,
                    radius: rho,
                    amplitude: self.xi * w / total,
                }
            })
            .collect::<Vec<_>>()
            .into()
    }

    /// Empirical loss of `pattern` at subspace coordinates `t`.
    pub fn empirical_at_coords(&self, pattern: u64, perturbation: &Perturbation, t: &[f64]) -> f64 {
        let shifted: Vec<f64> = t.iter().zip(self.delta_coords(pattern)).map(|(a, d)| a + d).collect();
        self.population.loss_at_coords(&shifted) + perturbation.value(t)
    }

    /// Empirical minimizer in subspace coordinates and its loss.
    pub fn empirical_minimizer(&self, pattern: u64) -> (Vec<f64>, f64) {
        let pert = self.perturbation(pattern);
        let start: Vec<f64> = self.delta_coords(pattern).iter().map(|d| -d).collect();
        let closed_form = self.population.axes.iter().all(min_at_origin)
            && (self.placement == BumpPlacement::AwayFromMinimizer || pert.bumps.is_empty());
        if closed_form {
            let v = self.empirical_at_coords(pattern, &pert, &start);
            return (start, v);
        }
        let f = |t: &[f64]| self.empirical_at_coords(pattern, &pert, t);
        coordinate_descent(&f, start, self.r.max(1e-3), 1e-10)
    }

    /// The empirical loss of `pattern` as a landscape on the full space.
    pub fn empirical(&self, pattern: u64) -> EmpiricalLoss<'_> {
        let perturbation = self.perturbation(pattern);
        let min = self.empirical_minimizer(pattern).1;
        EmpiricalLoss {
            model: self,
            pattern,
            perturbation,
            min,
        }
    }

    /// Worst shift gap over all (or the first `max_patterns`) patterns,
    /// sampled at `n_points` ball points around each empirical minimizer.
    pub fn max_pattern_gap(&self, n_points: usize, max_patterns: u64) -> f64 {
        let patterns = (1u64 << self.k().min(20)).min(max_patterns);
        (0..patterns)
            .into_par_iter()
            .map(|s| {
                let emp = self.empirical(s);
                let (w_star, _) = self.empirical_minimizer(s);
                let mut rng = rng::substream(rng::mix(self.seed, 77), s);
                let d = self.delta_coords(s);
                let mut worst = 0.0f64;
                for i in 0..n_points {
                    let v = if i == 0 {
                        vec![0.0; self.k()]
                    } else {
                        sample_in_ball(self.k(), self.radius, &mut rng)
                    };
                    let t: Vec<f64> = w_star.iter().zip(&v).map(|(a, b)| a + b).collect();
                    let shifted: Vec<f64> = t.iter().zip(&d).map(|(a, b)| a + b).collect();
                    let l_prime = self.population.loss_at_coords(&shifted) + emp.min;
                    let l_hat = self.empirical_at_coords(s, &emp.perturbation, &t);
                    worst = worst.max((l_prime - l_hat).abs());
                }
                worst
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold(0.0, f64::max)
    }

    fn pattern_losses(&self, pattern: u64, bias: &[f64]) -> (f64, f64) {
        let (w_star, _) = self.empirical_minimizer(pattern);
        let biased: Vec<f64> = w_star.iter().zip(bias).map(|(a, b)| a + b).collect();
        (
            self.population.loss_at_coords(&w_star),
            self.population.loss_at_coords(&biased),
        )
    }

    fn theorem_input(&self, bias: &[f64]) -> Result<TheoremOneInput> {
        let directions = self
            .population
            .axes
            .iter()
            .zip(bias)
            .zip(&self.delta_bar)
            .map(|((axis, &l), &db)| match axis {
                AxisLoss::Asymmetric(v) => Ok(BiasedDirection {
                    c: v.bounds.asymmetry_ratio(),
                    p: v.bounds.a_plus,
                    l,
                    delta_bar: Some(db),
                }),
                _ => Err(invalid("population", "theorem bound needs asymmetric axes")),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TheoremOneInput {
            directions,
            xi: self.xi,
            r: Some(self.r),
            zeta: Some(self.zeta),
        })
    }
}

fn min_at_origin(axis: &AxisLoss) -> bool {
    !matches!(axis, AxisLoss::DoubleWell { .. })
}

/// Cyclic coordinate descent: dense scan then golden-section refinement
/// on each coordinate, until a sweep moves no coordinate by more than `tol`.
pub fn coordinate_descent<F: Fn(&[f64]) -> f64>(f: &F, start: Vec<f64>, span: f64, tol: f64) -> (Vec<f64>, f64) {
    const SCAN: usize = 400;
    let mut t = start;
    let mut best = f(&t);
    for _ in 0..200 {
        let mut moved = 0.0f64;
        for i in 0..t.len() {
            let origin = t[i];
            let h = 2.0 * span / SCAN as f64;
            let mut probe = t.clone();
            let mut arg = origin;
            let mut val = best;
            for j in 0..=SCAN {
                probe[i] = origin - span + h * j as f64;
                let v = f(&probe);
                if v < val {
                    val = v;
                    arg = probe[i];
                }
            }
            // golden section on [arg - h, arg + h]
            let (mut a, mut b) = (arg - h, arg + h);
            let g = 0.5 * (5f64.sqrt() - 1.0);
            let eval = |x: f64, probe: &mut Vec<f64>| {
                probe[i] = x;
                f(probe)
            };
            while b - a > tol * 0.1 {
                let c = b - g * (b - a);
                let d = a + g * (b - a);
                if eval(c, &mut probe) < eval(d, &mut probe) {
                    b = d;
                } else {
                    a = c;
                }
            }
            let cand = 0.5 * (a + b);
            let cv = eval(cand, &mut probe);
            if cv < val {
                val = cv;
                arg = cand;
            }
            moved = moved.max((arg - origin).abs());
            t[i] = arg;
            best = val;
        }
        if moved <= tol {
            break;
        }
    }
    (t, best)
}

/// One pattern's empirical loss on the ambient space.
pub struct EmpiricalLoss<'a> {
    model: &'a ShiftModel,
    pattern: u64,
    pub perturbation: Perturbation,
    pub min: f64,
}

impl Landscape for EmpiricalLoss<'_> {
    fn dim(&self) -> usize {
        self.model.population.dim()
    }
    fn loss(&self, x: &[f64]) -> f64 {
        let t = self.model.population.coords(x);
        self.model.empirical_at_coords(self.pattern, &self.perturbation, &t)
    }
    fn known_min(&self) -> Option<f64> {
        Some(self.min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedLosses {
    /// `E_delta L(w*_delta)`
    pub at_minimizer: f64,
    /// `E_delta L(w*_delta + sum l_i u^i)`
    pub at_biased: f64,
    pub gap: f64,
    pub bound: TheoremOneBound,
    pub bound_holds: bool,
    pub patterns: u64,
}

/// Exact expectation over all `2^k` sign patterns.
pub fn enumerate_expected_losses(model: &ShiftModel, bias: &[f64]) -> Result<ExpectedLosses> {
    let k = model.k();
    if k > MAX_ENUMERATION_K {
        return Err(Error::BudgetExceeded {
            k,
            max: MAX_ENUMERATION_K,
        });
    }
    if bias.len() != k {
        return Err(invalid("bias", "one length per direction"));
    }
    let bound = theorem_one_lower_bound(&model.theorem_input(bias)?)?;
    let n = 1u64 << k;
    let per_pattern: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|s| model.pattern_losses(s, bias))
        .collect();
    let (sa, sb) = per_pattern
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let at_minimizer = sa / n as f64;
    let at_biased = sb / n as f64;
    let gap = at_minimizer - at_biased;
    Ok(ExpectedLosses {
        at_minimizer,
        at_biased,
        gap,
        bound_holds: gap >= bound.bound_value - BOUND_TOLERANCE * bound.bound_value.abs().max(1.0),
        bound,
        patterns: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloLosses {
    pub at_minimizer: MeanEstimate,
    pub at_biased: MeanEstimate,
    pub gap: MeanEstimate,
    pub bound: TheoremOneBound,
    pub samples: usize,
}

/// Relative slack when comparing an exact gap with the bound; the bound is
/// attained exactly by tight piecewise-linear axes.
pub const BOUND_TOLERANCE: f64 = 1e-12;

/// Minimum sample count for the Monte-Carlo estimate.
pub const MIN_MC_SAMPLES: usize = 100;

/// Unbiased estimate from `n_samples` uniformly drawn sign patterns.
pub fn monte_carlo_expected_losses(
    model: &ShiftModel,
    bias: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<MonteCarloLosses> {
    if n_samples < MIN_MC_SAMPLES {
        return Err(invalid("n_samples", format!("need at least {MIN_MC_SAMPLES}")));
    }
    let k = model.k();
    if k > 64 {
        return Err(invalid("delta_bar", "at most 64 directions"));
    }
    if bias.len() != k {
        return Err(invalid("bias", "one length per direction"));
    }
    let bound = theorem_one_lower_bound(&model.theorem_input(bias)?)?;
    let mask = if k == 64 { u64::MAX } else { (1u64 << k) - 1 };
    let samples: Vec<(f64, f64)> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let pattern = rng::substream(seed, i).random::<u64>() & mask;
            model.pattern_losses(pattern, bias)
        })
        .collect();
    let a: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let b: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let g: Vec<f64> = samples.iter().map(|s| s.0 - s.1).collect();
    Ok(MonteCarloLosses {
        at_minimizer: MeanEstimate::from_samples(&a),
        at_biased: MeanEstimate::from_samples(&b),
        gap: MeanEstimate::from_samples(&g),
        bound,
        samples: n_samples,
    })
}

impl From<Vec<Bump>> for Perturbation {
    fn from(bumps: Vec<Bump>) -> Self {
        Self { bumps }
    }
}

/// The `(c, p)` of an asymmetric axis, tight slopes assumed.
pub fn axis_constants(axis: &AxisLoss) -> Option<(f64, f64)> {
    match axis {
        AxisLoss::Asymmetric(v) => Some((v.bounds.asymmetry_ratio(), v.bounds.a_plus)),
        _ => None,
    }
}

/// Tight piecewise-linear axes with flat slope `p_i` and sharp slope
/// `-c_i p_i`.
pub fn tight_axes(c: &[f64], p: &[f64]) -> Result<Vec<AxisLoss>> {
    if c.len() != p.len() {
        return Err(invalid("c", "c and p must have equal length"));
    }
    c.iter()
        .zip(p)
        .map(|(&ci, &pi)| {
            crate::valley_models::PiecewiseValley1D::tight(pi, -ci * pi).map(AxisLoss::Asymmetric)
        })
        .collect()
}

/// Closed-form gap for tight piecewise-linear axes with `l_i <= delta_bar_i`:
/// `sum_i (c_i - 1) l_i p_i / 2`.
pub fn closed_form_gap(c: &[f64], p: &[f64], l: &[f64]) -> f64 {
    c.iter()
        .zip(p)
        .zip(l)
        .map(|((ci, pi), li)| (ci - 1.0) * li * pi / 2.0)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::valley_models::SeparableValleyND;

    fn one_dim_model(xi: f64) -> ShiftModel {
        let axes = tight_axes(&[5.0], &[0.1]).unwrap();
        let valley = SeparableValleyND::new(axes, 3, 1).unwrap();
        build_shift_pair(valley, vec![2.0], xi, 3.0, 0.0, 9).unwrap()
    }

    #[test]
    fn k1_enumeration_matches_closed_form() {
        let m = one_dim_model(0.0);
        let e = enumerate_expected_losses(&m, &[1.0]).unwrap();
        // oracle: half of [c p (dbar - l) + p (dbar + l)] against half of [c p dbar + p dbar]
        let (c, p, db, l) = (5.0, 0.1, 2.0, 1.0);
        let oracle = 0.5 * (c * p * db + p * db) - 0.5 * (c * p * (db - l) + p * (db + l));
        assert!((e.gap - oracle).abs() < 1e-12);
        assert!((e.gap - 0.2).abs() < 1e-10);
        assert!(e.bound_holds);
        let zero = enumerate_expected_losses(&m, &[0.0]).unwrap();
        assert_eq!(zero.gap, 0.0);
    }

    #[test]
    fn separable_copies_add() {
        let axes = tight_axes(&[5.0, 5.0], &[0.1, 0.1]).unwrap();
        let valley = SeparableValleyND::new(axes, 4, 2).unwrap();
        let m = build_shift_pair(valley, vec![2.0, 2.0], 0.0, 3.0, 0.0, 1).unwrap();
        let e = enumerate_expected_losses(&m, &[1.0, 1.0]).unwrap();
        assert!((e.gap - 0.4).abs() < 1e-10);
    }

    #[test]
    fn delta_outside_range_rejected() {
        let axes = tight_axes(&[5.0], &[0.1]).unwrap();
        let valley = SeparableValleyND::new(axes, 2, 1).unwrap();
        assert!(build_shift_pair(valley.clone(), vec![0.2], 0.0, 3.0, 0.5, 1).is_err());
        assert!(build_shift_pair(valley, vec![3.5], 0.0, 3.0, 0.5, 1).is_err());
    }

    #[test]
    fn budget_and_sample_preconditions() {
        let c = vec![3.0; 21];
        let p = vec![0.1; 21];
        let valley = SeparableValleyND::new(tight_axes(&c, &p).unwrap(), 21, 1).unwrap();
        let m = build_shift_pair(valley, vec![1.0; 21], 0.0, 2.0, 0.0, 1).unwrap();
        assert!(matches!(
            enumerate_expected_losses(&m, &[0.5; 21]),
            Err(Error::BudgetExceeded { .. })
        ));
        assert!(monte_carlo_expected_losses(&one_dim_model(0.0), &[1.0], 0, 1).is_err());
    }

    #[test]
    fn zero_xi_pair_is_exact_translation() {
        let m = one_dim_model(0.0);
        for s in 0..2 {
            let emp = m.empirical(s);
            let d = m.delta_coords(s);
            for i in 0..50 {
                let t = [-3.0 + 0.12 * i as f64];
                let x = m.population.point(&t);
                let shifted = m.population.point(&[t[0] + d[0]]);
                assert!((emp.loss(&x) - m.population.loss(&shifted)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn perturbation_respects_xi() {
        let m = one_dim_model(0.01);
        for s in 0..2 {
            assert!(m.perturbation(s).sup_bound() <= 0.01 + 1e-15);
        }
        assert!(m.max_pattern_gap(1000, 2) <= 0.01 + 1e-12);
        let anywhere = m.clone().with_placement(BumpPlacement::Anywhere);
        assert!(anywhere.max_pattern_gap(1000, 2) <= 0.01 + 1e-12);
    }

    #[test]
    fn coordinate_descent_finds_quadratic_min() {
        let f = |t: &[f64]| (t[0] - 0.3).powi(2) + 2.0 * (t[1] + 0.7).powi(2);
        let (t, v) = coordinate_descent(&f, vec![0.0, 0.0], 1.0, 1e-10);
        assert!((t[0] - 0.3).abs() < 1e-6 && (t[1] + 0.7).abs() < 1e-6);
        assert!(v < 1e-10);
    }
}
