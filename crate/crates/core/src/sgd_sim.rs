//! One-dimensional SGD with bounded noise, split into oscillation rounds.
//!
//! A round starts at the first iterate on the flat side (`w >= 0`) after an
//! iterate on the sharp side, and ends just before the next such crossing.

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::stats::{MeanEstimate, Proportion, Z99};
use crate::theory::{self, HypothesisReport, TheoremTwoConstants};
use crate::valley_models::{Loss1D, PiecewiseValley1D};

/// Iterates beyond this magnitude abort the run.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Minimum number of rounds for round statistics.
pub const MIN_ROUNDS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    /// Uniform on the open interval `(-nu, nu)`.
    Uniform,
    /// Normal with standard deviation `nu / 2`, resampled until `|w| < nu`.
    ClippedGaussian,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub eta: f64,
    pub nu: f64,
    pub noise_kind: NoiseKind,
    pub steps: usize,
    pub seed: u64,
    pub w_init: f64,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(invalid("eta", "must be positive"));
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return Err(invalid("nu", "must be non-negative"));
        }
        if !self.w_init.is_finite() {
            return Err(Error::NonFinite("w_init"));
        }
        Ok(())
    }
}

struct NoiseSource {
    kind: NoiseKind,
    nu: f64,
    rng: rng::Rng,
}

impl NoiseSource {
    fn new(kind: NoiseKind, nu: f64, seed: u64) -> Self {
        Self {
            kind: if nu == 0.0 { NoiseKind::Zero } else { kind },
            nu,
            rng: rng::seeded(seed),
        }
    }

    fn draw(&mut self) -> f64 {
        match self.kind {
            NoiseKind::Zero => 0.0,
            NoiseKind::Uniform => loop {
                let w = self.nu * (2.0 * self.rng.random::<f64>() - 1.0);
                if w.abs() < self.nu {
                    return w;
                }
            },
            NoiseKind::ClippedGaussian => {
                let normal = Normal::new(0.0, 0.5 * self.nu).expect("positive sigma");
                loop {
                    let w: f64 = normal.sample(&mut self.rng);
                    if w.abs() < self.nu {
                        return w;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `steps + 1` iterates, starting at `w_init`.
    pub positions: Vec<f64>,
    /// Gradient used at each step.
    pub gradients: Vec<f64>,
    /// Noise used at each step.
    pub noises: Vec<f64>,
    pub seed: u64,
    pub config: SgdConfig,
}

/// `w_{t+1} = w_t - eta (grad(w_t) + omega_t)`.
pub fn run_sgd<L: Loss1D + ?Sized>(model: &L, config: &SgdConfig) -> Result<Trajectory> {
    config.validate()?;
    let mut noise = NoiseSource::new(config.noise_kind, config.nu, config.seed);
    let mut positions = Vec::with_capacity(config.steps + 1);
    let mut gradients = Vec::with_capacity(config.steps);
    let mut noises = Vec::with_capacity(config.steps);
    let mut w = config.w_init;
    positions.push(w);
    for step in 0..config.steps {
        let g = model.slope(w);
        let omega = noise.draw();
        w -= config.eta * (g + omega);
        if !(w.abs() <= DIVERGENCE_LIMIT) {
            return Err(Error::Diverged { step: step + 1, value: w });
        }
        gradients.push(g);
        noises.push(omega);
        positions.push(w);
    }
    Ok(Trajectory {
        positions,
        gradients,
        noises,
        seed: config.seed,
        config: *config,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundSegment {
    /// First iterate of the round (on the flat side, previous one sharp).
    pub start: usize,
    /// Last iterate of the round, inclusive.
    pub end: usize,
    pub length: usize,
    pub average: f64,
    pub flat_dwell: usize,
    pub sharp_dwell: usize,
    /// Leading run of flat-side iterates starting at `start`.
    pub first_flat_run: usize,
}

/// Indices `i` with `positions[i - 1] < 0 <= positions[i]`.
pub fn sharp_to_flat_crossings(positions: &[f64]) -> Vec<usize> {
    (1..positions.len())
        .filter(|&i| positions[i - 1] < 0.0 && positions[i] >= 0.0)
        .collect()
}

/// Rounds between consecutive sharp-to-flat crossings. Iterates before the
/// first crossing and from the last crossing on are not covered.
pub fn segment_rounds(traj: &Trajectory) -> Vec<RoundSegment> {
    segment_positions(&traj.positions)
}

pub fn segment_positions(positions: &[f64]) -> Vec<RoundSegment> {
    let crossings = sharp_to_flat_crossings(positions);
    crossings
        .windows(2)
        .map(|w| {
            let (start, next) = (w[0], w[1]);
            let slice = &positions[start..next];
            let flat_dwell = slice.iter().filter(|&&x| x >= 0.0).count();
            let first_flat_run = slice.iter().take_while(|&&x| x >= 0.0).count();
            RoundSegment {
                start,
                end: next - 1,
                length: slice.len(),
                average: slice.iter().sum::<f64>() / slice.len() as f64,
                flat_dwell,
                sharp_dwell: slice.len() - flat_dwell,
                first_flat_run,
            }
        })
        .collect()
}

/// Rounds whose first iterate falls outside `[p_min, p_max]` (with `tol`
/// slack), as `(round index, first iterate)`.
pub fn first_iterate_violations(
    positions: &[f64],
    segments: &[RoundSegment],
    p_bounds: (f64, f64),
    tol: f64,
) -> Vec<(usize, f64)> {
    segments
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let w0 = positions[s.start];
            (w0 < p_bounds.0 - tol || w0 > p_bounds.1 + tol).then_some((i, w0))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundStatistics {
    pub rounds: usize,
    pub round_average: MeanEstimate,
    /// Fraction of rounds whose flat dwell is at least `floor(t_min)`.
    pub flat_dwell_at_least_t_min: Proportion,
    /// Fraction of rounds no longer than `ceil(t_max)` iterates.
    pub length_at_most_t_max: Proportion,
    pub sharp_dwell_histogram: BTreeMap<usize, usize>,
    pub round_length: MeanEstimate,
}

pub fn round_statistics(segments: &[RoundSegment], t_min: f64, t_max: f64) -> Result<RoundStatistics> {
    if segments.len() < MIN_ROUNDS {
        return Err(Error::TooFewRounds {
            got: segments.len(),
            need: MIN_ROUNDS,
        });
    }
    let averages: Vec<f64> = segments.iter().map(|s| s.average).collect();
    let lengths: Vec<f64> = segments.iter().map(|s| s.length as f64).collect();
    let floor_t_min = t_min.floor() as usize;
    let ceil_t_max = t_max.ceil() as usize;
    let mut hist = BTreeMap::new();
    for s in segments {
        *hist.entry(s.sharp_dwell).or_insert(0) += 1;
    }
    Ok(RoundStatistics {
        rounds: segments.len(),
        round_average: MeanEstimate::from_samples(&averages),
        flat_dwell_at_least_t_min: Proportion::new(
            segments.iter().filter(|s| s.first_flat_run >= floor_t_min).count(),
            segments.len(),
        ),
        length_at_most_t_max: Proportion::new(
            segments.iter().filter(|s| s.length <= ceil_t_max).count(),
            segments.len(),
        ),
        sharp_dwell_histogram: hist,
        round_length: MeanEstimate::from_samples(&lengths),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateAverage {
    pub burn_in: usize,
    /// Running mean of `positions[burn_in..=t]` for each `t >= burn_in`.
    pub running: Vec<f64>,
    pub final_average: f64,
}

/// Mean of `positions[burn_in..]` with the running-average series.
pub fn average_iterates(traj: &Trajectory, burn_in: usize) -> Result<IterateAverage> {
    let n = traj.positions.len();
    if burn_in >= n {
        return Err(invalid("burn_in", format!("{burn_in} >= trajectory length {n}")));
    }
    let mut running = Vec::with_capacity(n - burn_in);
    let mut sum = 0.0;
    for (i, w) in traj.positions[burn_in..].iter().enumerate() {
        sum += w;
        running.push(sum / (i + 1) as f64);
    }
    let final_average = *running.last().expect("non-empty");
    Ok(IterateAverage {
        burn_in,
        running,
        final_average,
    })
}

/// Index of the first sharp-to-flat crossing, or 0 when there is none.
pub fn default_burn_in(traj: &Trajectory) -> usize {
    sharp_to_flat_crossings(&traj.positions)
        .first()
        .copied()
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    /// Not applicable or not asserted.
    RecordedOnly,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremTwoReport {
    pub hypotheses: HypothesisReport,
    pub hypotheses_overridden: bool,
    pub constants: TheoremTwoConstants,
    pub stats: RoundStatistics,
    pub ci99: (f64, f64),
    pub first_iterate_violations: usize,
    /// mean - 3 stderr > 0
    pub positive_bias: Verdict,
    /// mean - 3 stderr > c_0 (only asserted when the tau condition holds)
    pub above_c0: Verdict,
    /// Dwell probabilities within three binomial standard errors of the
    /// Azuma bounds.
    pub dwell_bounds: Verdict,
    pub dwell_t_min_required: f64,
    pub dwell_t_max_required: f64,
    pub steps_used: usize,
}

impl TheoremTwoReport {
    pub fn passed(&self) -> bool {
        [self.positive_bias, self.above_c0, self.dwell_bounds]
            .iter()
            .all(|v| *v != Verdict::Fail)
    }
}

/// Simulates until `n_rounds` complete rounds exist and checks the bias
/// bound and the dwell-time probabilities.
pub fn verify_theorem_two(
    model: &PiecewiseValley1D,
    config: &SgdConfig,
    n_rounds: usize,
    override_hypotheses: bool,
) -> Result<TheoremTwoReport> {
    config.validate()?;
    let bounds = model.bounds.with_nu(config.nu);
    let hypotheses = theory::theorem_two_hypothesis_check(&bounds)?;
    if !hypotheses.asymmetric {
        return Err(Error::Infeasible(format!(
            "valley is not asymmetric (c = {})",
            hypotheses.c
        )));
    }
    if !hypotheses.all_hold() && !override_hypotheses {
        return Err(Error::Infeasible(format!("hypotheses do not hold: {hypotheses:?}")));
    }
    let constants = theory::theorem_two_constants(&bounds, config.eta, None)?;

    // one round is at most the flat descent from p_max at slope b_+ plus a
    // sharp step, up to noise
    let per_round = (constants.p_max / (config.eta * bounds.b_plus)).ceil() as usize + 4;
    let mut steps = config.steps.max((n_rounds + 2) * per_round * 2);
    let (traj, segments) = loop {
        let cfg = SgdConfig { steps, ..*config };
        let traj = run_sgd(model, &cfg)?;
        let segments = segment_rounds(&traj);
        if segments.len() >= n_rounds || steps > 1 << 28 {
            break (traj, segments);
        }
        steps *= 2;
    };
    let segments = &segments[..segments.len().min(n_rounds)];
    let stats = round_statistics(segments, constants.t_min, constants.t_max)?;
    let violations = first_iterate_violations(&traj.positions, segments, (constants.p_min, constants.p_max), 1e-12);

    let lower3 = stats.round_average.mean - 3.0 * stats.round_average.stderr;
    let positive_bias = Verdict::from_bool(lower3 > 0.0);
    let above_c0 = if constants.tau_feasible {
        Verdict::from_bool(lower3 > constants.c_0)
    } else {
        Verdict::RecordedOnly
    };
    let need_min = 1.0 - constants.t_min / constants.tau;
    let need_max = 1.0 - constants.t_max / constants.tau;
    let p_min_ok = stats.flat_dwell_at_least_t_min.fraction
        >= need_min - 3.0 * stats.flat_dwell_at_least_t_min.stderr;
    let p_max_ok =
        stats.length_at_most_t_max.fraction >= need_max - 3.0 * stats.length_at_most_t_max.stderr;
    Ok(TheoremTwoReport {
        hypotheses,
        hypotheses_overridden: override_hypotheses && !hypotheses.all_hold(),
        constants,
        ci99: stats.round_average.interval(Z99),
        stats,
        first_iterate_violations: violations.len(),
        positive_bias,
        above_c0,
        dwell_bounds: Verdict::from_bool(p_min_ok && p_max_ok),
        dwell_t_min_required: need_min,
        dwell_t_max_required: need_max,
        steps_used: traj.positions.len() - 1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallLrScenario {
    pub flat_start: Trajectory,
    pub sharp_start: Trajectory,
    pub flat_average: f64,
    pub sharp_average: f64,
}

/// Two runs from `+start` and `-start` with a learning rate small enough
/// that the noiseless runs never cross the minimizer.
pub fn small_lr_scenarios<L: Loss1D + ?Sized>(model: &L, config: &SgdConfig, start: f64) -> Result<SmallLrScenario> {
    if !(start > 0.0) {
        return Err(invalid("start", "must be positive"));
    }
    for w_init in [start, -start] {
        let quiet = SgdConfig {
            nu: 0.0,
            noise_kind: NoiseKind::Zero,
            w_init,
            ..*config
        };
        let traj = run_sgd(model, &quiet)?;
        if let Some(step) = traj.positions.iter().position(|w| w.signum() != w_init.signum() && *w != 0.0) {
            return Err(Error::OscillationDetected { step });
        }
    }
    let flat_start = run_sgd(model, &SgdConfig { w_init: start, ..*config })?;
    let sharp_start = run_sgd(
        model,
        &SgdConfig {
            w_init: -start,
            seed: rng::mix(config.seed, 1),
            ..*config
        },
    )?;
    let flat_average = average_iterates(&flat_start, 0)?.final_average;
    let sharp_average = average_iterates(&sharp_start, 0)?.final_average;
    Ok(SmallLrScenario {
        flat_start,
        sharp_start,
        flat_average,
        sharp_average,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::valley_models::{build_valley_from_spec, AsymmetrySpec, GradientBounds};

    fn cfg(eta: f64, nu: f64, steps: usize, w_init: f64) -> SgdConfig {
        SgdConfig {
            eta,
            nu,
            noise_kind: NoiseKind::Uniform,
            steps,
            seed: 42,
            w_init,
        }
    }

    #[test]
    fn noiseless_flat_descent() {
        let v = PiecewiseValley1D::tight(0.1, -1.0).unwrap();
        let t = run_sgd(&v, &cfg(0.1, 0.0, 4, 0.05)).unwrap();
        for i in 0..4 {
            assert!((t.positions[i] - t.positions[i + 1] - 0.01).abs() < 1e-15);
        }
        assert_eq!(t.positions.len(), 5);
    }

    #[test]
    fn one_sharp_step() {
        let v = PiecewiseValley1D::tight(0.1, -1.0).unwrap();
        let t = run_sgd(&v, &cfg(0.1, 0.0, 1, -0.01)).unwrap();
        assert!((t.positions[1] - 0.09).abs() < 1e-15);
    }

    #[test]
    fn deterministic_given_seed() {
        let v = PiecewiseValley1D::tight(0.1, -1.0).unwrap();
        let c = cfg(0.1, 0.05, 500, 0.3);
        assert_eq!(run_sgd(&v, &c).unwrap(), run_sgd(&v, &c).unwrap());
    }

    #[test]
    fn divergence_guard() {
        let v = PiecewiseValley1D::tight(0.1, -1.0).unwrap();
        let err = run_sgd(&v, &cfg(0.1, 0.0, 10, 2e6)).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
    }

    #[test]
    fn crafted_segmentation() {
        let pos = [-0.1, 0.2, 0.1, 0.05, -0.02, 0.3, -0.1, 0.2];
        let segs = segment_positions(&pos);
        assert_eq!(segs.len(), 2);
        assert_eq!((segs[0].start, segs[0].end), (1, 4));
        assert_eq!(segs[0].flat_dwell, 3);
        assert_eq!(segs[0].sharp_dwell, 1);
        assert_eq!((segs[1].start, segs[1].end), (5, 6));
        assert!(segment_positions(&[0.1, 0.2, 0.0, 0.3]).is_empty());
    }

    #[test]
    fn too_few_rounds() {
        let pos = [-0.1, 0.2, -0.1, 0.2];
        let segs = segment_positions(&pos);
        assert!(matches!(round_statistics(&segs, 1.0, 2.0), Err(Error::TooFewRounds { .. })));
    }

    #[test]
    fn running_average() {
        let v = PiecewiseValley1D::tight(0.1, -1.0).unwrap();
        let mut t = run_sgd(&v, &cfg(0.1, 0.0, 2, 1.0)).unwrap();
        t.positions = vec![1.0, 2.0, 3.0];
        let a = average_iterates(&t, 0).unwrap();
        assert_eq!(a.final_average, 2.0);
        assert_eq!(a.running, vec![1.0, 1.5, 2.0]);
        assert!(average_iterates(&t, 3).is_err());
    }

    #[test]
    fn symmetric_valley_rejected_by_gate() {
        let v = PiecewiseValley1D::tight(0.5, -0.5).unwrap();
        let err = verify_theorem_two(&v, &cfg(0.1, 0.05, 1000, 0.1), 100, true).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }

    #[test]
    fn small_lr_scenario_has_flat_bias() {
        let spec = AsymmetrySpec::new(2.5, 0.2, 7.5, 1.2).unwrap();
        let v = build_valley_from_spec(&spec).unwrap();
        let s = small_lr_scenarios(&v, &cfg(0.05, 0.0, 400, 0.0), 2.0).unwrap();
        assert!(s.flat_average > 0.0);
        assert!(s.sharp_average.abs() < s.flat_average.abs());
    }

    #[test]
    fn small_lr_rejects_oscillation() {
        let v = PiecewiseValley1D::tight(0.1, -1.0).unwrap();
        let err = small_lr_scenarios(&v, &cfg(0.1, 0.0, 1000, 0.0), 0.5).unwrap_err();
        assert!(matches!(err, Error::OscillationDetected { .. }));
    }

    #[test]
    fn noise_is_strictly_bounded() {
        let b = GradientBounds::tight(0.05, -1.5, 0.05).unwrap();
        let v = PiecewiseValley1D::new(b, crate::valley_models::GradientProfile::Tight).unwrap();
        for kind in [NoiseKind::Uniform, NoiseKind::ClippedGaussian] {
            let c = SgdConfig { noise_kind: kind, ..cfg(0.1, 0.05, 5000, 0.1) };
            let t = run_sgd(&v, &c).unwrap();
            assert!(t.noises.iter().all(|w| w.abs() < 0.05));
        }
    }
}
