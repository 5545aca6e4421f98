//! Model-agnostic landscape probes: slices, asymmetry classification and
//! fitting, interpolation between solutions, random-ray profiles and
//! neighbourhood checks.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::landscape::{dot, norm, Landscape};
use crate::rng;
use crate::shiftgen::sample_in_ball;
use crate::stats::MeanEstimate;
use crate::valley_models::AsymmetrySpec;

/// Fitted asymmetry ratio above which a direction counts as asymmetric.
pub const ASYMMETRY_THRESHOLD: f64 = 2.0;
/// Minimum grid size for [`classify_direction`].
pub const MIN_CLASSIFY_POINTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Random01,
    RandomPm1,
    RandomGaussian,
    InterSolution,
    GroupMasked,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleKind {
    /// Entries uniform in `(0, 1)`.
    Random01,
    /// Entries uniform in `(-1, 1)`.
    RandomPm1,
    Gaussian,
}

/// A unit vector with a record of where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub vec: Vec<f64>,
    pub provenance: Provenance,
}

impl Direction {
    /// Normalizes `v`.
    pub fn new(v: Vec<f64>, provenance: Provenance) -> Result<Self> {
        let n = norm(&v);
        if !(n > 0.0 && n.is_finite()) {
            return Err(invalid("direction", "needs a non-zero finite vector"));
        }
        Ok(Self {
            vec: v.into_iter().map(|x| x / n).collect(),
            provenance,
        })
    }

    /// `(b - a) / |b - a|`.
    pub fn between(a: &[f64], b: &[f64]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::LayoutMismatch("endpoints differ in length".into()));
        }
        Self::new(b.iter().zip(a).map(|(x, y)| x - y).collect(), Provenance::InterSolution)
    }

    pub fn negated(&self) -> Self {
        Self {
            vec: self.vec.iter().map(|x| -x).collect(),
            provenance: self.provenance,
        }
    }
}

/// Seeded random direction; with a mask, entries outside it are zero.
pub fn sample_direction(kind: SampleKind, d: usize, seed: u64, mask: Option<&[bool]>) -> Result<Direction> {
    if d == 0 {
        return Err(invalid("d", "need d >= 1"));
    }
    if let Some(m) = mask {
        if m.len() != d {
            return Err(Error::LayoutMismatch("mask length differs from d".into()));
        }
        if !m.iter().any(|&b| b) {
            return Err(Error::EmptyMask);
        }
    }
    let mut rng = rng::seeded(seed);
    let raw: Vec<f64> = (0..d)
        .map(|_| match kind {
            // open interval: resample the measure-zero endpoint
            SampleKind::Random01 => loop {
                let x: f64 = rng.random();
                if x > 0.0 {
                    break x;
                }
            },
            SampleKind::RandomPm1 => loop {
                let x: f64 = rng.random_range(-1.0..1.0);
                if x != -1.0 {
                    break x;
                }
            },
            SampleKind::Gaussian => StandardNormal.sample(&mut rng),
        })
        .collect();
    let (v, provenance) = match mask {
        Some(m) => (
            raw.iter().zip(m).map(|(x, &keep)| if keep { *x } else { 0.0 }).collect(),
            Provenance::GroupMasked,
        ),
        None => (
            raw,
            match kind {
                SampleKind::Random01 => Provenance::Random01,
                SampleKind::RandomPm1 => Provenance::RandomPm1,
                SampleKind::Gaussian => Provenance::RandomGaussian,
            },
        ),
    };
    Direction::new(v, provenance)
}

/// Loss along `center + l u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceProfile {
    pub offsets: Vec<f64>,
    pub values: Vec<f64>,
    /// Optional second metric on the same grid (e.g. held-out loss).
    pub second: Option<Vec<f64>>,
    pub direction: Vec<f64>,
    pub center: Vec<f64>,
    /// Grid indices whose loss was not finite.
    pub non_finite: Vec<usize>,
}

impl SliceProfile {
    /// Values minus the value nearest `l = 0`.
    pub fn normalized(&self) -> Vec<f64> {
        let i0 = self
            .offsets
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, l)| if l.abs() < acc.1 { (i, l.abs()) } else { acc })
            .0;
        self.values.iter().map(|v| v - self.values[i0]).collect()
    }

    /// Largest absolute pointwise difference to another profile.
    pub fn sup_difference(&self, other: &SliceProfile) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn linspace(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    (0..steps)
        .map(|i| {
            if i + 1 == steps {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (steps - 1) as f64
            }
        })
        .collect()
}

fn check_dims<M: Landscape + ?Sized>(model: &M, center: &[f64], u: &[f64]) -> Result<()> {
    if center.len() != model.dim() || u.len() != model.dim() {
        return Err(Error::LayoutMismatch("point or direction length differs from the model".into()));
    }
    Ok(())
}

fn along(center: &[f64], u: &[f64], l: f64) -> Vec<f64> {
    center.iter().zip(u).map(|(c, x)| c + l * x).collect()
}

fn profile_on<M: Landscape + ?Sized>(model: &M, center: &[f64], u: &Direction, offsets: Vec<f64>) -> SliceProfile {
    let values: Vec<f64> = offsets
        .par_iter()
        .map(|&l| model.loss(&along(center, &u.vec, l)))
        .collect();
    let non_finite = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| (!v.is_finite()).then_some(i))
        .collect();
    SliceProfile {
        offsets,
        values,
        second: None,
        direction: u.vec.clone(),
        center: center.to_vec(),
        non_finite,
    }
}

/// Loss on `steps` evenly spaced offsets of `l_range`.
pub fn slice<M: Landscape + ?Sized>(
    model: &M,
    center: &[f64],
    u: &Direction,
    l_range: (f64, f64),
    steps: usize,
) -> Result<SliceProfile> {
    check_dims(model, center, &u.vec)?;
    if steps < 2 || !(l_range.1 > l_range.0) {
        return Err(invalid("steps", "need steps >= 2 over a non-empty range"));
    }
    Ok(profile_on(model, center, u, linspace(l_range.0, l_range.1, steps)))
}

/// Adds a second metric evaluated on the same grid.
pub fn with_second<M: Landscape + ?Sized>(mut profile: SliceProfile, model: &M) -> SliceProfile {
    let u = profile.direction.clone();
    let center = profile.center.clone();
    profile.second = Some(
        profile
            .offsets
            .par_iter()
            .map(|&l| model.loss(&along(&center, &u, l)))
            .collect(),
    );
    profile
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SlopeMethod {
    Exact,
    CentralDifference { h: f64 },
}

/// Outcome of testing one spec along one direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymmetryVerdict {
    pub spec: AsymmetrySpec,
    pub holds: bool,
    /// Largest slope on the flat side, `d/dl L(w + l u)`.
    pub flat_max_slope: f64,
    /// Smallest descent rate on the sharp side, `-<grad L(w - l u), u>`.
    pub sharp_min_magnitude: f64,
    pub method: SlopeMethod,
    pub grid_points: usize,
}

fn slope_at<M: Landscape + ?Sized>(model: &M, x: &[f64], u: &[f64], h: f64) -> (f64, SlopeMethod) {
    match model.directional_slope(x, u) {
        Some(s) => (s, SlopeMethod::Exact),
        None => {
            let plus = model.loss(&along(x, u, h));
            let minus = model.loss(&along(x, u, -h));
            ((plus - minus) / (2.0 * h), SlopeMethod::CentralDifference { h })
        }
    }
}

/// Flat and sharp slope extremes over `n` interior points of `(zeta, r)`.
fn measure<M: Landscape + ?Sized>(
    model: &M,
    center: &[f64],
    u: &[f64],
    r: f64,
    zeta: f64,
    n: usize,
) -> (f64, f64, SlopeMethod) {
    let spacing = (r - zeta) / (n + 1) as f64;
    let h = spacing.min(1e-3 * r);
    let samples: Vec<(f64, f64, SlopeMethod)> = (1..=n)
        .into_par_iter()
        .map(|j| {
            let l = zeta + spacing * j as f64;
            let (flat, m) = slope_at(model, &along(center, u, l), u, h);
            let (sharp, _) = slope_at(model, &along(center, u, -l), u, h);
            (flat, -sharp, m)
        })
        .collect();
    let flat = samples.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    let sharp = samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    (flat, sharp, samples[0].2)
}

/// Tests `spec` along `u` at `center` on `grid` interior points of
/// `(zeta, r)`.
pub fn classify_direction<M: Landscape + ?Sized>(
    model: &M,
    center: &[f64],
    u: &Direction,
    spec: &AsymmetrySpec,
    grid: usize,
) -> Result<AsymmetryVerdict> {
    check_dims(model, center, &u.vec)?;
    spec.validate()?;
    if grid < MIN_CLASSIFY_POINTS {
        return Err(invalid("grid", format!("need at least {MIN_CLASSIFY_POINTS} points")));
    }
    let (flat, sharp, method) = measure(model, center, &u.vec, spec.r, spec.zeta, grid);
    Ok(AsymmetryVerdict {
        spec: *spec,
        holds: flat < spec.p && sharp > spec.c * spec.p,
        flat_max_slope: flat,
        sharp_min_magnitude: sharp,
        method,
        grid_points: grid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LengthScale {
    /// `r` and `zeta` used as given.
    Absolute,
    /// `r` and `zeta` multiplied by the root-mean-square entry of the center.
    CenterRms,
}

/// How `r` and `zeta` are fixed when fitting a spec.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecPolicy {
    pub r: f64,
    pub zeta: f64,
    pub length_scale: LengthScale,
    pub grid: usize,
}

impl Default for SpecPolicy {
    fn default() -> Self {
        Self {
            r: 3.0,
            zeta: 0.5,
            length_scale: LengthScale::Absolute,
            grid: 32,
        }
    }
}

impl SpecPolicy {
    /// `(r, zeta, scale)` in parameter units at `center`.
    pub fn resolve(&self, center: &[f64]) -> (f64, f64, f64) {
        let scale = match self.length_scale {
            LengthScale::Absolute => 1.0,
            LengthScale::CenterRms => {
                let rms = norm(center) / (center.len().max(1) as f64).sqrt();
                if rms > 0.0 {
                    rms
                } else {
                    1.0
                }
            }
        };
        (self.r * scale, self.zeta * scale, scale)
    }
}

/// Relative slack separating a fitted spec from the measured extremes, so
/// the strict inequalities of the verdict hold.
pub const FIT_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedSpec {
    /// `None` when the flat side does not ascend or the sharp side does not
    /// descend, so no ratio is meaningful.
    pub spec: Option<AsymmetrySpec>,
    /// `sharp_min_magnitude / flat_max_slope`.
    pub c: Option<f64>,
    pub flat_max_slope: f64,
    pub sharp_min_magnitude: f64,
    pub length_scale: f64,
    pub method: SlopeMethod,
}

impl FittedSpec {
    pub fn is_asymmetric(&self) -> bool {
        self.c.is_some_and(|c| c > ASYMMETRY_THRESHOLD)
    }
}

/// Fits `p` to the flat-side maximum slope and `c` to the largest ratio the
/// sharp side supports, with `r` and `zeta` fixed by `policy`.
pub fn fit_spec<M: Landscape + ?Sized>(
    model: &M,
    center: &[f64],
    u: &Direction,
    policy: &SpecPolicy,
) -> Result<FittedSpec> {
    check_dims(model, center, &u.vec)?;
    let (r, zeta, scale) = policy.resolve(center);
    if !(r > 0.0 && zeta >= 0.0 && zeta < r) || policy.grid < MIN_CLASSIFY_POINTS {
        return Err(invalid("policy", "need 0 <= zeta < r and grid >= 16"));
    }
    let (flat, sharp, method) = measure(model, center, &u.vec, r, zeta, policy.grid);
    let (spec, c) = if flat > 0.0 && sharp > 0.0 && flat.is_finite() && sharp.is_finite() {
        let p = flat * (1.0 + FIT_SLACK);
        let c = sharp / p * (1.0 - FIT_SLACK);
        (AsymmetrySpec::new(r, p, c, zeta).ok(), Some(sharp / flat))
    } else {
        (None, None)
    };
    Ok(FittedSpec {
        spec,
        c,
        flat_max_slope: flat,
        sharp_min_magnitude: sharp,
        length_scale: scale,
        method,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    /// First direction with fitted `c > 2`, its verdict and fit.
    pub found: Option<(Direction, AsymmetryVerdict, FittedSpec)>,
    pub fits: Vec<FittedSpec>,
    pub hits: usize,
    pub trials: usize,
}

impl SearchResult {
    pub fn hit_rate(&self) -> f64 {
        self.hits as f64 / self.trials as f64
    }
}

/// Tries `trials` seeded random-0-1 directions (trial `i` is seeded with
/// `mix(seed, i)`) and returns the first whose fitted `c` exceeds 2.
pub fn find_asymmetric_direction<M: Landscape + ?Sized>(
    model: &M,
    center: &[f64],
    policy: &SpecPolicy,
    trials: usize,
    seed: u64,
) -> Result<SearchResult> {
    if trials == 0 {
        return Err(invalid("trials", "need trials >= 1"));
    }
    let d = model.dim();
    let results = (0..trials)
        .map(|i| {
            let u = sample_direction(SampleKind::Random01, d, rng::mix(seed, i as u64), None)?;
            let fit = fit_spec(model, center, &u, policy)?;
            Ok((u, fit))
        })
        .collect::<Result<Vec<_>>>()?;
    let hits = results.iter().filter(|(_, f)| f.is_asymmetric()).count();
    let found = match results.iter().find(|(_, f)| f.is_asymmetric()) {
        Some((u, fit)) => {
            let spec = fit.spec.expect("asymmetric fits carry a spec");
            let verdict = classify_direction(model, center, u, &spec, policy.grid)?;
            Some((u.clone(), verdict, fit.clone()))
        }
        None => None,
    };
    Ok(SearchResult {
        found,
        fits: results.into_iter().map(|r| r.1).collect(),
        hits,
        trials,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodReport {
    pub holds_fraction: f64,
    pub verdicts: Vec<AsymmetryVerdict>,
    pub offsets: Vec<f64>,
    pub mean_slice: Vec<f64>,
    /// Population variance of the raw slices at each offset.
    pub slice_variance: Vec<f64>,
    /// Variance after subtracting each slice's value at `l = 0`.
    pub shape_variance: Vec<f64>,
}

/// Checks `spec` at `center + v - <v, u> u` for `n_samples` points `v`
/// uniform in the ball of radius `radius` and summarizes the slices along
/// `u` over `[-r, r]`.
#[allow(clippy::too_many_arguments)]
pub fn verify_neighborhood_asymmetry<M: Landscape + ?Sized>(
    model: &M,
    center: &[f64],
    u: &Direction,
    spec: &AsymmetrySpec,
    radius: f64,
    n_samples: usize,
    seed: u64,
    grid: usize,
) -> Result<NeighborhoodReport> {
    check_dims(model, center, &u.vec)?;
    if n_samples < 10 {
        return Err(invalid("n_samples", "need at least 10"));
    }
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(invalid("radius", "must be non-negative"));
    }
    let mut rng = rng::seeded(seed);
    let points: Vec<Vec<f64>> = (0..n_samples)
        .map(|_| {
            let v = sample_in_ball(center.len(), radius, &mut rng);
            let proj = dot(&v, &u.vec);
            center
                .iter()
                .zip(&v)
                .zip(&u.vec)
                .map(|((c, vi), ui)| c + vi - proj * ui)
                .collect()
        })
        .collect();
    let verdicts = points
        .iter()
        .map(|p| classify_direction(model, p, u, spec, grid))
        .collect::<Result<Vec<_>>>()?;
    // odd step count keeps l = 0 on the grid
    let offsets = linspace(-spec.r, spec.r, 2 * grid + 1);
    let slices: Vec<SliceProfile> = points
        .iter()
        .map(|p| profile_on(model, p, u, offsets.clone()))
        .collect();
    let columns = |rows: &[Vec<f64>]| -> (Vec<f64>, Vec<f64>) {
        (0..offsets.len())
            .map(|j| {
                let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
                let m = col.iter().sum::<f64>() / col.len() as f64;
                let var = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / col.len() as f64;
                (m, var)
            })
            .unzip()
    };
    let raw: Vec<Vec<f64>> = slices.iter().map(|s| s.values.clone()).collect();
    let shapes: Vec<Vec<f64>> = slices.iter().map(SliceProfile::normalized).collect();
    let (mean_slice, slice_variance) = columns(&raw);
    let (_, shape_variance) = columns(&shapes);
    Ok(NeighborhoodReport {
        holds_fraction: verdicts.iter().filter(|v| v.holds).count() as f64 / n_samples as f64,
        verdicts,
        offsets,
        mean_slice,
        slice_variance,
        shape_variance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpReport {
    pub detected: bool,
    /// Location and excess of the highest interior maximum, if any.
    pub at: Option<f64>,
    pub excess: f64,
    pub tolerance: f64,
}

/// Relative bump tolerance: fraction of the profile's loss range.
pub const BUMP_TOLERANCE: f64 = 0.02;

/// Highest strict local maximum with `t` in `(0, 1)` against
/// `max(loss(0), loss(1))`.
pub fn detect_bump(profile: &SliceProfile, values: &[f64]) -> BumpReport {
    let t = &profile.offsets;
    let at = |x: f64| t.iter().position(|&v| v == x).map(|i| values[i]);
    let ends = at(0.0).unwrap_or(f64::NAN).max(at(1.0).unwrap_or(f64::NAN));
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tolerance = BUMP_TOLERANCE * (hi - lo);
    let mut best: Option<(f64, f64)> = None;
    for i in 1..values.len().saturating_sub(1) {
        if t[i] > 0.0 && t[i] < 1.0 && values[i] > values[i - 1] && values[i] >= values[i + 1] {
            let excess = values[i] - ends;
            if best.is_none_or(|b| excess > b.1) {
                best = Some((t[i], excess));
            }
        }
    }
    let excess = best.map_or(0.0, |b| b.1);
    BumpReport {
        detected: best.is_some() && excess > tolerance,
        at: best.map(|b| b.0),
        excess,
        tolerance,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interpolation {
    /// `offsets` hold `t`; values are the first model's loss.
    pub profile: SliceProfile,
    pub bump: BumpReport,
    pub second_bump: Option<BumpReport>,
}

/// Default interpolation range.
pub const INTERPOLATION_RANGE: (f64, f64) = (-0.5, 1.5);

/// Losses at `(1 - t) a + t b`; `t = 0` and `t = 1` are always on the grid
/// and evaluate exactly at the endpoints.
pub fn interpolate<M: Landscape + ?Sized, S: Landscape + ?Sized>(
    model: &M,
    params_a: &[f64],
    params_b: &[f64],
    t_range: (f64, f64),
    steps: usize,
    second: Option<&S>,
) -> Result<Interpolation> {
    if params_a.len() != params_b.len() || params_a.len() != model.dim() {
        return Err(Error::LayoutMismatch("interpolation endpoints differ in layout".into()));
    }
    if steps < 2 || !(t_range.1 > t_range.0) {
        return Err(invalid("steps", "need steps >= 2 over a non-empty range"));
    }
    let mut ts = linspace(t_range.0, t_range.1, steps);
    for anchor in [0.0, 1.0] {
        if let Some(x) = ts.iter_mut().find(|x| (**x - anchor).abs() < 1e-12) {
            *x = anchor;
        } else if anchor > t_range.0 && anchor < t_range.1 {
            ts.push(anchor);
        }
    }
    ts.sort_by(f64::total_cmp);
    let point = |t: f64| -> Vec<f64> {
        params_a
            .iter()
            .zip(params_b)
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect()
    };
    let values: Vec<f64> = ts.par_iter().map(|&t| model.loss(&point(t))).collect();
    let second_values: Option<Vec<f64>> =
        second.map(|s| ts.par_iter().map(|&t| s.loss(&point(t))).collect());
    let direction = Direction::between(params_a, params_b)
        .map(|d| d.vec)
        .unwrap_or_else(|_| vec![0.0; params_a.len()]);
    let non_finite = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| (!v.is_finite()).then_some(i))
        .collect();
    let profile = SliceProfile {
        offsets: ts,
        values,
        second: second_values,
        direction,
        center: params_a.to_vec(),
        non_finite,
    };
    let bump = detect_bump(&profile, &profile.values);
    let second_bump = profile.second.as_ref().map(|s| detect_bump(&profile, s));
    Ok(Interpolation {
        profile,
        bump,
        second_bump,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayProfile {
    pub radii: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_rays: usize,
}

/// Mean loss at `center + rho u` over `n_rays` unit Gaussian directions
/// (ray `i` from substream `i` of `seed`).
pub fn random_ray_profile<M: Landscape + ?Sized>(
    model: &M,
    center: &[f64],
    n_rays: usize,
    radii: &[f64],
    seed: u64,
) -> Result<RayProfile> {
    if n_rays < 2 {
        return Err(invalid("n_rays", "need at least 2 rays"));
    }
    if center.len() != model.dim() {
        return Err(Error::LayoutMismatch("center length differs from the model".into()));
    }
    let rows: Vec<Vec<f64>> = (0..n_rays as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::substream(seed, i);
            let v: Vec<f64> = (0..center.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let u = Direction::new(v, Provenance::RandomGaussian).expect("gaussian vector is non-zero");
            radii.iter().map(|&rho| model.loss(&along(center, &u.vec, rho))).collect()
        })
        .collect();
    let (mean, stderr) = (0..radii.len())
        .map(|j| {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let e = MeanEstimate::from_samples(&col);
            (e.mean, e.stderr)
        })
        .unzip();
    Ok(RayProfile {
        radii: radii.to_vec(),
        mean,
        stderr,
        n_rays,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub profiles: Vec<SliceProfile>,
    /// Max pairwise sup-difference over the later half of checkpoints.
    pub stability_index: f64,
    /// Same over the first half, for comparison.
    pub first_half_index: f64,
}

fn max_pairwise(profiles: &[SliceProfile]) -> f64 {
    let mut m = 0.0f64;
    for i in 0..profiles.len() {
        for j in i + 1..profiles.len() {
            m = m.max(profiles[i].sup_difference(&profiles[j]));
        }
    }
    m
}

/// Slices along a fixed `u` through each checkpoint.
pub fn projected_slice_stability<M: Landscape + ?Sized>(
    model: &M,
    checkpoints: &[Vec<f64>],
    u: &Direction,
    l_range: (f64, f64),
    steps: usize,
) -> Result<StabilityReport> {
    if checkpoints.len() < 2 {
        return Err(invalid("checkpoints", "need at least 2"));
    }
    let profiles = checkpoints
        .iter()
        .map(|c| slice(model, c, u, l_range, steps))
        .collect::<Result<Vec<_>>>()?;
    let half = checkpoints.len() / 2;
    Ok(StabilityReport {
        stability_index: max_pairwise(&profiles[half..]),
        first_half_index: max_pairwise(&profiles[..half.max(1)]),
        profiles,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnComparison {
    pub seed: u64,
    pub bn: FittedSpec,
    pub non_bn: FittedSpec,
}

/// Fits specs along a BN-masked and a non-BN-masked random-0-1 direction
/// drawn from the same seed.
pub fn bn_direction_comparison<M: Landscape + ?Sized>(
    model: &M,
    center: &[f64],
    bn_mask: &[bool],
    non_bn_mask: &[bool],
    seed: u64,
    policy: &SpecPolicy,
) -> Result<BnComparison> {
    let d = model.dim();
    let ub = sample_direction(SampleKind::Random01, d, seed, Some(bn_mask))?;
    let un = sample_direction(SampleKind::Random01, d, seed, Some(non_bn_mask))?;
    Ok(BnComparison {
        seed,
        bn: fit_spec(model, center, &ub, policy)?,
        non_bn: fit_spec(model, center, &un, policy)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::IsotropicQuadratic;

    #[test]
    fn directions_are_unit_and_masked() {
        let u = sample_direction(SampleKind::Random01, 10, 3, None).unwrap();
        assert!((norm(&u.vec) - 1.0).abs() < 1e-12);
        assert!(u.vec.iter().all(|&x| x > 0.0));
        let mask: Vec<bool> = (0..10).map(|i| i % 3 == 0).collect();
        let m = sample_direction(SampleKind::Gaussian, 10, 3, Some(&mask)).unwrap();
        assert!(m.vec.iter().zip(&mask).all(|(x, &k)| k || *x == 0.0));
        assert!(matches!(
            sample_direction(SampleKind::Gaussian, 3, 1, Some(&[false; 3])),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn quadratic_slice_is_symmetric() {
        let q = IsotropicQuadratic::unit(4);
        let u = sample_direction(SampleKind::Gaussian, 4, 1, None).unwrap();
        let s = slice(&q, &[0.0; 4], &u, (-2.0, 2.0), 41).unwrap();
        for i in 0..41 {
            assert!((s.values[i] - s.values[40 - i]).abs() < 1e-12);
        }
        assert!(s.values[20].abs() < 1e-15);
    }

    #[test]
    fn ray_profile_on_quadratic() {
        let q = IsotropicQuadratic::unit(6);
        let radii = [0.0, 0.5, 1.0, 2.0];
        let p = random_ray_profile(&q, &[0.0; 6], 8, &radii, 2).unwrap();
        for (j, r) in radii.iter().enumerate() {
            assert!((p.mean[j] - r * r / 2.0).abs() < 1e-12);
            assert!(p.stderr[j] < 1e-12);
        }
    }

    #[test]
    fn bump_detector_flags_interior_peak() {
        let q = IsotropicQuadratic::unit(1);
        let convex = interpolate::<_, IsotropicQuadratic>(&q, &[-1.0], &[2.0], INTERPOLATION_RANGE, 41, None).unwrap();
        assert!(!convex.bump.detected);
        assert_eq!(convex.profile.values[convex.profile.offsets.iter().position(|&t| t == 1.0).unwrap()], 2.0);
    }
}
