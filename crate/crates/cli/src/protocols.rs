//! Protocol parameters, the catalog and dispatch.

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use valley_core::sgd_sim::{
    self, average_iterates, run_sgd, segment_rounds, NoiseKind, SgdConfig, Verdict,
};
use valley_core::shiftgen::{
    self, build_shift_pair, scan_shift, tight_axes, BumpPlacement, SamplingPlan, ShiftedLandscape,
};
use valley_core::theory::{theorem_two_constants, theorem_two_hypothesis_check};
use valley_core::valley_models::{
    GradientBounds, GradientProfile, PiecewiseValley1D, SeparableValleyND, SymmetricFunction1D, SymmetricKind,
    ValleyDoc,
};
use valley_core::{nn, rng};

use crate::probe::{self, ProbeArgs};
use crate::report::{ExperimentConfig, Outcome};

pub struct CatalogEntry {
    pub id: &'static str,
    pub doc: &'static str,
    pub reproduces: &'static str,
}

/// Every protocol, sorted by id.
pub const CATALOG: &[CatalogEntry] = &[
    CatalogEntry {
        id: "oscillation-1d",
        doc: "Iterate averages on a symmetric sharp function and on an asymmetric valley, over seeds",
        reproduces: "averaging on symmetric vs asymmetric 1D functions with large learning rate",
    },
    CatalogEntry {
        id: "probe.bn-compare",
        doc: "Fitted asymmetry of BN-masked vs non-BN-masked random directions",
        reproduces: "BN parameters as the source of asymmetric directions",
    },
    CatalogEntry {
        id: "probe.classify",
        doc: "Test an (r, p, c, zeta) spec along one direction",
        reproduces: "asymmetric direction definition",
    },
    CatalogEntry {
        id: "probe.find-asym",
        doc: "Search random (0,1) directions for fitted asymmetry ratio above 2",
        reproduces: "asymmetric directions at local minima",
    },
    CatalogEntry {
        id: "probe.interpolate",
        doc: "Loss along the segment between two checkpoints, with bump detection",
        reproduces: "SWA solution vs SGD-after-SWA interpolation",
    },
    CatalogEntry {
        id: "probe.neighborhood",
        doc: "Spec check at sampled neighbours orthogonal to a direction",
        reproduces: "locally identical asymmetry around the empirical minimizer",
    },
    CatalogEntry {
        id: "probe.random-ray",
        doc: "Mean loss vs distance along random Gaussian directions",
        reproduces: "width profiles along random directions",
    },
    CatalogEntry {
        id: "probe.slice",
        doc: "Loss along center + l u",
        reproduces: "one-dimensional loss slices",
    },
    CatalogEntry {
        id: "probe.stability",
        doc: "Slices along a fixed direction through successive checkpoints",
        reproduces: "stability of projected loss surfaces during training",
    },
    CatalogEntry {
        id: "report-constants",
        doc: "p_min, p_max, T_min, T_max, c_0 and tau for gradient bounds",
        reproduces: "constants of the SGD bias theorem",
    },
    CatalogEntry {
        id: "shift-scan",
        doc: "Shift gap over a range of shifts for a translated pair",
        reproduces: "shift-gap recovery between population and empirical loss",
    },
    CatalogEntry {
        id: "simulate-1d",
        doc: "Noisy SGD on a 1D valley; trajectory and round CSVs",
        reproduces: "SGD dynamics on piecewise linear valleys",
    },
    CatalogEntry {
        id: "swa-direction",
        doc: "SWA vs continued small-LR SGD on a toy MLP with BN, over seeds",
        reproduces: "SWA vs SGD train/test loss direction",
    },
    CatalogEntry {
        id: "theorem1-verify",
        doc: "Expected population loss at the empirical minimizer vs a biased point",
        reproduces: "flat-side bias lower bound under random shift",
    },
    CatalogEntry {
        id: "theorem2-verify",
        doc: "Round averages of SGD on an asymmetric valley vs c_0, dwell times",
        reproduces: "SGD average biased to the flat side",
    },
    CatalogEntry {
        id: "train",
        doc: "Train a small MLP with optional BN and SWA; checkpoints and history",
        reproduces: "SWA, SWA-BN and SWA-Non-BN training",
    },
];

fn parse<T: DeserializeOwned>(params: &Value) -> Result<T> {
    serde_json::from_value(params.clone()).context("invalid protocol parameters")
}

/// Parses and runs `config`; nothing is written here.
pub fn run(config: &ExperimentConfig) -> Result<Outcome> {
    let seed = config.seed;
    let p = &config.params;
    match config.protocol.as_str() {
        "report-constants" => constants(&parse(p)?),
        "simulate-1d" => simulate(&parse(p)?, seed),
        "theorem1-verify" => theorem1(&parse(p)?, seed),
        "theorem2-verify" => theorem2(&parse(p)?, seed),
        "shift-scan" => shift_scan(&parse(p)?, seed),
        "oscillation-1d" => oscillation(&parse(p)?, seed),
        "train" => train(&parse(p)?, seed),
        "swa-direction" => swa_direction(&parse(p)?, seed),
        other => match other.strip_prefix("probe.") {
            Some(kind) => probe::run(kind, &parse::<ProbeArgs>(p)?, seed),
            None => bail!("unknown protocol `{other}`"),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Noise {
    Uniform,
    ClippedGaussian,
    Zero,
}

impl From<Noise> for NoiseKind {
    fn from(n: Noise) -> Self {
        match n {
            Noise::Uniform => NoiseKind::Uniform,
            Noise::ClippedGaussian => NoiseKind::ClippedGaussian,
            Noise::Zero => NoiseKind::Zero,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantsArgs {
    #[arg(long, default_value_t = 0.1, allow_hyphen_values = true)]
    pub a_plus: f64,
    #[arg(long, default_value_t = 0.1, allow_hyphen_values = true)]
    pub b_plus: f64,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    pub a_minus: f64,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    pub b_minus: f64,
    #[arg(long, default_value_t = 0.05)]
    pub nu: f64,
    #[arg(long, default_value_t = 0.1)]
    pub eta: f64,
    /// Probability horizon; smallest feasible power of two when omitted.
    #[arg(long)]
    pub tau: Option<f64>,
}

impl Default for ConstantsArgs {
    fn default() -> Self {
        Self {
            a_plus: 0.1,
            b_plus: 0.1,
            a_minus: -1.0,
            b_minus: -1.0,
            nu: 0.05,
            eta: 0.1,
            tau: None,
        }
    }
}

fn constants(a: &ConstantsArgs) -> Result<Outcome> {
    let bounds = GradientBounds::new(a.a_plus, a.b_plus, a.a_minus, a.b_minus, a.nu)?;
    let k = theorem_two_constants(&bounds, a.eta, a.tau)?;
    let h = theorem_two_hypothesis_check(&bounds)?;
    let metrics = json!({
        "p_min": k.p_min,
        "p_max": k.p_max,
        "t_min": k.t_min,
        "t_max": k.t_max,
        "c_0": k.c_0,
        "tau": k.tau,
        "feasible": {
            "tau_condition": k.tau_feasible,
            "hypotheses": h.all_hold(),
            "asymmetric": h.asymmetric,
            "c_prime_ok": h.c_prime_ok,
            "nu_ok": h.nu_ok,
        },
        "tau_ceiling_t_min_two": k.tau_ceiling_t_min_two,
        "hypothesis_report": h,
    });
    Ok(Outcome::new(metrics).verdict("constants", Verdict::RecordedOnly))
}

fn default_valley() -> ValleyDoc {
    ValleyDoc {
        kind: "tight".into(),
        bounds: Some(GradientBounds::tight(0.1, -1.0, 0.0).expect("valid bounds")),
        spec: None,
        seed: None,
    }
}

/// A valley given inline as JSON or as a path to a JSON file.
pub fn load_valley(arg: &str) -> Result<ValleyDoc> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        std::fs::read_to_string(arg).with_context(|| format!("reading valley file `{arg}`"))?
    };
    Ok(ValleyDoc::from_json(&text)?)
}

#[derive(Debug, Clone, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateArgs {
    /// Valley document (inline JSON or a file path) on the command line.
    #[arg(long = "model", value_parser = load_valley, default_value = r#"{"kind":"tight","bounds":{"a_plus":0.1,"b_plus":0.1,"a_minus":-1.0,"b_minus":-1.0,"nu":0.0}}"#)]
    pub model: ValleyDoc,
    #[arg(long, default_value_t = 0.1)]
    pub eta: f64,
    #[arg(long, default_value_t = 0.05)]
    pub nu: f64,
    #[arg(long, value_enum, default_value_t = Noise::Uniform)]
    pub noise: Noise,
    #[arg(long, default_value_t = 10_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub w_init: f64,
    /// Also segment the trajectory into rounds.
    #[arg(long)]
    pub rounds: bool,
}

impl Default for SimulateArgs {
    fn default() -> Self {
        Self {
            model: default_valley(),
            eta: 0.1,
            nu: 0.05,
            noise: Noise::Uniform,
            steps: 10_000,
            w_init: 0.0,
            rounds: false,
        }
    }
}

#[derive(Serialize)]
struct TrajectoryRow {
    t: usize,
    w: f64,
    grad: f64,
    noise: f64,
}

#[derive(Serialize)]
struct RoundRow {
    round: usize,
    start: usize,
    end: usize,
    length: usize,
    average: f64,
    sharp_dwell: usize,
}

fn round_rows(segments: &[sgd_sim::RoundSegment]) -> impl Iterator<Item = RoundRow> + '_ {
    segments.iter().enumerate().map(|(i, s)| RoundRow {
        round: i,
        start: s.start,
        end: s.end,
        length: s.length,
        average: s.average,
        sharp_dwell: s.sharp_dwell,
    })
}

fn simulate(a: &SimulateArgs, seed: u64) -> Result<Outcome> {
    let model = a.model.build()?;
    let cfg = SgdConfig {
        eta: a.eta,
        nu: a.nu,
        noise_kind: a.noise.into(),
        steps: a.steps,
        seed,
        w_init: a.w_init,
    };
    let traj = run_sgd(&model, &cfg)?;
    let avg = average_iterates(&traj, sgd_sim::default_burn_in(&traj))?;
    let segments = segment_rounds(&traj);
    let round_mean = if segments.is_empty() {
        None
    } else {
        Some(segments.iter().map(|s| s.average).sum::<f64>() / segments.len() as f64)
    };
    let mut out = Outcome::new(json!({
        "final_position": traj.positions.last(),
        "final_average": avg.final_average,
        "burn_in": avg.burn_in,
        "rounds": segments.len(),
        "mean_round_average": round_mean,
    }))
    .verdict("simulation", Verdict::RecordedOnly);
    out.csv(
        "trajectory.csv",
        (0..traj.positions.len()).map(|t| TrajectoryRow {
            t,
            w: traj.positions[t],
            grad: traj.gradients.get(t).copied().unwrap_or(f64::NAN),
            noise: traj.noises.get(t).copied().unwrap_or(f64::NAN),
        }),
    )?;
    if a.rounds {
        out.csv("rounds.csv", round_rows(&segments))?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Theorem1Mode {
    Enum,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    Away,
    Anywhere,
}

#[derive(Debug, Clone, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct Theorem1Args {
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Per-direction asymmetry ratios; one value is broadcast to all k.
    #[arg(long, value_delimiter = ',', default_values_t = [5.0])]
    pub c: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.1])]
    pub p: Vec<f64>,
    /// Bias lengths along each direction.
    #[arg(long, value_delimiter = ',', default_values_t = [1.0])]
    pub l: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [2.0])]
    pub delta_bar: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub xi: f64,
    #[arg(long, default_value_t = 3.0)]
    pub r: f64,
    #[arg(long, default_value_t = 0.0)]
    pub zeta: f64,
    /// Ambient dimension; defaults to k.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, value_enum, default_value_t = Theorem1Mode::Enum)]
    pub mode: Theorem1Mode,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, value_enum, default_value_t = Placement::Away)]
    pub placement: Placement,
}

impl Default for Theorem1Args {
    fn default() -> Self {
        Self {
            k: 1,
            c: vec![5.0],
            p: vec![0.1],
            l: vec![1.0],
            delta_bar: vec![2.0],
            xi: 0.0,
            r: 3.0,
            zeta: 0.0,
            dim: None,
            mode: Theorem1Mode::Enum,
            samples: 1000,
            placement: Placement::Away,
        }
    }
}

fn broadcast(name: &str, v: &[f64], k: usize) -> Result<Vec<f64>> {
    match v.len() {
        1 => Ok(vec![v[0]; k]),
        n if n == k => Ok(v.to_vec()),
        n => bail!("`{name}` has {n} values; expected 1 or k = {k}"),
    }
}

fn theorem1(a: &Theorem1Args, seed: u64) -> Result<Outcome> {
    if a.k == 0 {
        bail!("k must be at least 1");
    }
    let c = broadcast("c", &a.c, a.k)?;
    let p = broadcast("p", &a.p, a.k)?;
    let l = broadcast("l", &a.l, a.k)?;
    let delta_bar = broadcast("delta_bar", &a.delta_bar, a.k)?;
    let valley = SeparableValleyND::new(tight_axes(&c, &p)?, a.dim.unwrap_or(a.k), rng::mix(seed, 1))?;
    let model = build_shift_pair(valley, delta_bar, a.xi, a.r, a.zeta, rng::mix(seed, 2))?.with_placement(
        match a.placement {
            Placement::Away => BumpPlacement::AwayFromMinimizer,
            Placement::Anywhere => BumpPlacement::Anywhere,
        },
    );
    match a.mode {
        Theorem1Mode::Enum => {
            let e = shiftgen::enumerate_expected_losses(&model, &l)?;
            let verdict = if e.bound.feasible {
                Verdict::from_bool(e.bound_holds)
            } else {
                Verdict::RecordedOnly
            };
            Ok(Outcome::new(json!({
                "gap": e.gap,
                "at_minimizer": e.at_minimizer,
                "at_biased": e.at_biased,
                "bound": e.bound.bound_value,
                "feasible": e.bound.feasible,
                "per_direction": e.bound.per_direction,
                "patterns": e.patterns,
            }))
            .verdict("bound_holds", verdict))
        }
        Theorem1Mode::Mc => {
            let m = shiftgen::monte_carlo_expected_losses(&model, &l, a.samples, rng::mix(seed, 3))?;
            let ok = m.gap.mean + 4.0 * m.gap.stderr >= m.bound.bound_value;
            let verdict = if m.bound.feasible {
                Verdict::from_bool(ok)
            } else {
                Verdict::RecordedOnly
            };
            Ok(Outcome::new(json!({
                "gap": m.gap.mean,
                "gap_stderr": m.gap.stderr,
                "at_minimizer": m.at_minimizer,
                "at_biased": m.at_biased,
                "bound": m.bound.bound_value,
                "feasible": m.bound.feasible,
                "samples": m.samples,
            }))
            .verdict("bound_within_4_stderr", verdict))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Tight,
    Wobble,
}

#[derive(Debug, Clone, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct Theorem2Args {
    #[arg(long, default_value_t = 0.05)]
    pub a_plus: f64,
    #[arg(long, default_value_t = 0.025)]
    pub b_plus: f64,
    #[arg(long, default_value_t = -1.5, allow_hyphen_values = true)]
    pub a_minus: f64,
    #[arg(long, default_value_t = -1.6, allow_hyphen_values = true)]
    pub b_minus: f64,
    #[arg(long, default_value_t = 0.01)]
    pub nu: f64,
    #[arg(long, default_value_t = 0.1)]
    pub eta: f64,
    #[arg(long, default_value_t = 5000)]
    pub rounds: usize,
    #[arg(long, value_enum, default_value_t = Profile::Wobble)]
    pub profile: Profile,
    #[arg(long, value_enum, default_value_t = Noise::Uniform)]
    pub noise: Noise,
    /// Run even when the theorem's hypotheses fail.
    #[arg(long)]
    pub override_hypotheses: bool,
}

impl Default for Theorem2Args {
    fn default() -> Self {
        Self {
            a_plus: 0.05,
            b_plus: 0.025,
            a_minus: -1.5,
            b_minus: -1.6,
            nu: 0.01,
            eta: 0.1,
            rounds: 5000,
            profile: Profile::Wobble,
            noise: Noise::Uniform,
            override_hypotheses: false,
        }
    }
}

fn theorem2(a: &Theorem2Args, seed: u64) -> Result<Outcome> {
    let bounds = GradientBounds::new(a.a_plus, a.b_plus, a.a_minus, a.b_minus, a.nu)?;
    let model = match a.profile {
        Profile::Tight => PiecewiseValley1D::new(bounds, GradientProfile::Tight)?,
        Profile::Wobble => PiecewiseValley1D::wobble(bounds, rng::mix(seed, 1))?,
    };
    let cfg = SgdConfig {
        eta: a.eta,
        nu: a.nu,
        noise_kind: a.noise.into(),
        steps: 0,
        seed,
        w_init: 0.0,
    };
    let r = sgd_sim::verify_theorem_two(&model, &cfg, a.rounds, a.override_hypotheses)?;
    let traj = run_sgd(
        &model,
        &SgdConfig {
            steps: r.steps_used,
            ..cfg
        },
    )?;
    let segments = segment_rounds(&traj);
    let mut out = Outcome::new(json!({
        "constants": r.constants,
        "hypotheses": r.hypotheses,
        "hypotheses_overridden": r.hypotheses_overridden,
        "rounds": r.stats.rounds,
        "round_average_mean": r.stats.round_average.mean,
        "round_average_stderr": r.stats.round_average.stderr,
        "ci99": r.ci99,
        "flat_dwell_fraction": r.stats.flat_dwell_at_least_t_min.fraction,
        "flat_dwell_required": r.dwell_t_min_required,
        "length_fraction": r.stats.length_at_most_t_max.fraction,
        "length_required": r.dwell_t_max_required,
        "sharp_dwell_histogram": r.stats.sharp_dwell_histogram,
        "first_iterate_violations": r.first_iterate_violations,
        "steps": r.steps_used,
    }))
    .verdict("positive_bias", r.positive_bias)
    .verdict("above_c0", r.above_c0)
    .verdict("dwell_bounds", r.dwell_bounds);
    out.csv("rounds.csv", round_rows(&segments[..segments.len().min(a.rounds)]))?;
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftScanArgs {
    #[arg(long, default_value_t = 4)]
    pub dim: usize,
    /// True shift of the empirical loss along the valley direction.
    #[arg(long, default_value_t = 0.4, allow_hyphen_values = true)]
    pub shift: f64,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    pub from: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub to: f64,
    #[arg(long, default_value_t = 0.01)]
    pub resolution: f64,
    /// Comparison ball radius.
    #[arg(long, default_value_t = 2.0)]
    pub radius: f64,
    #[arg(long, default_value_t = 5.0)]
    pub c: f64,
    #[arg(long, default_value_t = 0.1)]
    pub p: f64,
}

impl Default for ShiftScanArgs {
    fn default() -> Self {
        Self {
            dim: 4,
            shift: 0.4,
            from: -1.0,
            to: 1.0,
            resolution: 0.01,
            radius: 2.0,
            c: 5.0,
            p: 0.1,
        }
    }
}

fn shift_scan(a: &ShiftScanArgs, seed: u64) -> Result<Outcome> {
    if !(a.resolution > 0.0) || !(a.to > a.from) {
        bail!("need resolution > 0 and to > from");
    }
    let valley = SeparableValleyND::new(tight_axes(&[a.c], &[a.p])?, a.dim, rng::mix(seed, 1))?;
    let u = valley.directions[0].clone();
    let empirical = ShiftedLandscape {
        inner: valley.clone(),
        shift: u.iter().map(|x| a.shift * x).collect(),
        offset: 0.0,
    };
    let plan = SamplingPlan::line(&u, a.radius, 401).union(SamplingPlan::ball(a.dim, a.radius, 600, rng::mix(seed, 2)));
    let steps = ((a.to - a.from) / a.resolution).round() as usize + 1;
    let w = valley.base.clone();
    let scan = scan_shift(&valley, &empirical, &w, &u, (a.from, a.to), steps, a.radius, &plan)?;
    let recovered = (scan.argmin_shift - a.shift).abs() <= a.resolution + 1e-12;
    let mut out = Outcome::new(json!({
        "argmin_shift": scan.argmin_shift,
        "gap_at_argmin": scan.min_gap,
        "xi_0": scan.xi_0,
        "ratio_at_argmin": if scan.degenerate_denominator { None } else { Some(scan.min_gap / scan.xi_0) },
        "degenerate_denominator": scan.degenerate_denominator,
        "grid": plan.description,
    }))
    .verdict("shift_recovered", Verdict::from_bool(recovered && scan.min_gap < 1e-9));
    out.table(
        "shift_scan.csv",
        &["shift", "gap", "ratio"],
        scan.shifts
            .iter()
            .zip(&scan.gaps)
            .map(|(s, g)| vec![*s, *g, if scan.xi_0 > 0.0 { g / scan.xi_0 } else { f64::NAN }]),
    )?;
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct OscillationArgs {
    #[arg(long, default_value_t = 10)]
    pub seeds: usize,
    #[arg(long, default_value_t = 10_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.1)]
    pub eta: f64,
    #[arg(long, default_value_t = 0.05)]
    pub nu: f64,
    /// Slope magnitude of the symmetric sharp function.
    #[arg(long, default_value_t = 1.0)]
    pub sharp_slope: f64,
    #[arg(long, default_value_t = 0.1)]
    pub a_plus: f64,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    pub a_minus: f64,
}

impl Default for OscillationArgs {
    fn default() -> Self {
        Self {
            seeds: 10,
            steps: 10_000,
            eta: 0.1,
            nu: 0.05,
            sharp_slope: 1.0,
            a_plus: 0.1,
            a_minus: -1.0,
        }
    }
}

/// Final averages on the symmetric sharp function and on the asymmetric
/// valley; one row per seed.
pub fn oscillation_rows(a: &OscillationArgs, seed: u64) -> Result<Vec<[f64; 3]>> {
    let sym = SymmetricFunction1D::new(SymmetricKind::SharpSided, a.sharp_slope)?;
    let asym = PiecewiseValley1D::tight(a.a_plus, a.a_minus)?;
    (0..a.seeds as u64)
        .map(|i| {
            let cfg = SgdConfig {
                eta: a.eta,
                nu: a.nu,
                noise_kind: NoiseKind::Uniform,
                steps: a.steps,
                seed: rng::mix(seed, i),
                w_init: 0.0,
            };
            let s = average_iterates(&run_sgd(&sym, &cfg)?, 0)?.final_average;
            let v = average_iterates(&run_sgd(&asym, &cfg)?, 0)?.final_average;
            Ok([i as f64, s, v])
        })
        .collect()
}

fn oscillation(a: &OscillationArgs, seed: u64) -> Result<Outcome> {
    let rows = oscillation_rows(a, seed)?;
    // one step on the sharp function moves the iterate by eta * slope
    let amplitude = a.eta * a.sharp_slope;
    let sym_ok = rows.iter().filter(|r| r[1].abs() < amplitude).count();
    let asym_ok = rows.iter().filter(|r| r[2] > 0.0).count();
    let mut out = Outcome::new(json!({
        "amplitude": amplitude,
        "symmetric_within_amplitude": sym_ok,
        "asymmetric_positive": asym_ok,
        "seeds": rows.len(),
    }))
    .verdict("symmetric_centered", Verdict::from_bool(sym_ok == rows.len()))
    .verdict("asymmetric_flat_biased", Verdict::from_bool(asym_ok == rows.len()));
    out.table(
        "oscillation.csv",
        &["seed", "symmetric_average", "asymmetric_average"],
        rows.iter().map(|r| r.to_vec()),
    )?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Data {
    TwoMoons,
    GaussianMixture,
}

impl From<Data> for nn::Generator {
    fn from(d: Data) -> Self {
        match d {
            Data::TwoMoons => nn::Generator::TwoMoons,
            Data::GaussianMixture => nn::Generator::GaussianMixture,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Group {
    All,
    Bn,
    NonBn,
}

impl From<Group> for nn::SwaGroup {
    fn from(g: Group) -> Self {
        match g {
            Group::All => nn::SwaGroup::All,
            Group::Bn => nn::SwaGroup::Bn,
            Group::NonBn => nn::SwaGroup::NonBn,
        }
    }
}

/// Synthetic dataset settings shared by training and probes.
#[derive(Debug, Clone, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct DataArgs {
    #[arg(long, value_enum, default_value_t = Data::TwoMoons)]
    pub data: Data,
    #[arg(long, default_value_t = 256)]
    pub n_train: usize,
    #[arg(long, default_value_t = 50_000)]
    pub n_heldout: usize,
    #[arg(long, default_value_t = 0.25)]
    pub data_noise: f64,
    /// Dataset seed; the run seed when omitted.
    #[arg(long)]
    pub data_seed: Option<u64>,
}

impl Default for DataArgs {
    fn default() -> Self {
        Self {
            data: Data::TwoMoons,
            n_train: 256,
            n_heldout: 50_000,
            data_noise: 0.25,
            data_seed: None,
        }
    }
}

impl DataArgs {
    pub fn dataset(&self, seed: u64) -> Result<nn::Dataset> {
        Ok(nn::Dataset::generate(nn::DatasetConfig {
            generator: self.data.into(),
            n_train: self.n_train,
            n_heldout: self.n_heldout,
            noise: self.data_noise,
            seed: self.data_seed.unwrap_or(seed),
        })?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct TrainArgs {
    /// Widths joined by '-', optional "+bn" suffix.
    #[arg(long, default_value = "2-16-16-2+bn")]
    pub arch: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.1)]
    pub eta: f64,
    /// Learning rate reached by the decay before averaging starts.
    #[arg(long)]
    pub eta_swa: Option<f64>,
    /// First averaged epoch; no averaging when omitted.
    #[arg(long)]
    pub swa_start: Option<usize>,
    #[arg(long, value_enum, default_value_t = Group::All)]
    pub swa_group: Group,
    #[arg(long, default_value_t = 1)]
    pub eval_every: usize,
    /// Save a checkpoint every n epochs under `snapshots/`.
    #[arg(long)]
    pub snapshot_every: Option<usize>,
}

impl Default for TrainArgs {
    fn default() -> Self {
        Self {
            arch: "2-16-16-2+bn".into(),
            data: DataArgs::default(),
            epochs: 200,
            batch: 32,
            eta: 0.1,
            eta_swa: None,
            swa_start: None,
            swa_group: Group::All,
            eval_every: 1,
            snapshot_every: None,
        }
    }
}

fn push_checkpoint(out: &mut Outcome, dir: &str, arch: &nn::Architecture, params: &nn::ParamVector, bn: &nn::BnState) -> Result<()> {
    let (header, bytes) = nn::encode_checkpoint(&nn::Checkpoint {
        arch: arch.clone(),
        params: params.clone(),
        bn: Some(bn.clone()),
    })?;
    out.file(format!("{dir}/{}", nn::HEADER_FILE), header);
    out.file(format!("{dir}/{}", nn::PARAMS_FILE), bytes);
    Ok(())
}

#[derive(Serialize)]
struct HistoryRow {
    epoch: usize,
    lr: f64,
    train_loss: f64,
    train_acc: f64,
    heldout_loss: f64,
    heldout_loss_stderr: f64,
    heldout_acc: f64,
    swa_train_loss: Option<f64>,
    swa_train_acc: Option<f64>,
    swa_heldout_loss: Option<f64>,
    swa_heldout_acc: Option<f64>,
}

fn train(a: &TrainArgs, seed: u64) -> Result<Outcome> {
    let arch = nn::Architecture::parse(&a.arch)?;
    let data = a.data.dataset(seed)?;
    let schedule = match (a.eta_swa, a.swa_start) {
        (Some(eta_swa), Some(start)) => nn::LrSchedule::SwaStyle {
            eta_max: a.eta,
            eta_swa,
            swa_start: start,
        },
        _ => nn::LrSchedule::Constant { eta: a.eta },
    };
    let cfg = nn::TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        schedule,
        seed,
        swa: a.swa_start.map(|start| nn::SwaConfig {
            start_epoch: start,
            group: a.swa_group.into(),
            mask_seed: rng::mix(seed, 5),
        }),
        eval_every: a.eval_every,
        snapshot_every: a.snapshot_every,
        ..Default::default()
    };
    let r = nn::train(&arch, &data, &cfg)?;
    let last = r.history.last();
    let mut out = Outcome::new(json!({
        "steps": r.steps,
        "params": r.params.len(),
        "final": last.map(|h| json!({"train": h.train, "heldout": h.heldout})),
        "swa": last.and_then(|h| h.swa_train.as_ref().map(|t| json!({"train": t, "heldout": h.swa_heldout}))),
        "bn_statistics": "running averages for SGD weights; recomputed on the training split for averaged weights",
    }))
    .verdict("training", Verdict::RecordedOnly);
    out.csv(
        "history.csv",
        r.history.iter().map(|h| HistoryRow {
            epoch: h.epoch,
            lr: h.lr,
            train_loss: h.train.loss,
            train_acc: h.train.accuracy,
            heldout_loss: h.heldout.loss,
            heldout_loss_stderr: h.heldout.loss_stderr,
            heldout_acc: h.heldout.accuracy,
            swa_train_loss: h.swa_train.as_ref().map(|m| m.loss),
            swa_train_acc: h.swa_train.as_ref().map(|m| m.accuracy),
            swa_heldout_loss: h.swa_heldout.as_ref().map(|m| m.loss),
            swa_heldout_acc: h.swa_heldout.as_ref().map(|m| m.accuracy),
        }),
    )?;
    push_checkpoint(&mut out, "final", &arch, &r.params, &r.bn)?;
    if let (Some(p), Some(bn)) = (&r.swa_params, &r.swa_bn) {
        push_checkpoint(&mut out, "swa", &arch, p, bn)?;
    }
    for (epoch, p) in &r.snapshots {
        let bn = nn::recompute_bn_stats(&arch, p, &data.train)?;
        push_checkpoint(&mut out, &format!("snapshots/epoch_{epoch:04}"), &arch, p, &bn)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct SwaDirectionArgs {
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    #[arg(long, default_value = "2-16-16-2+bn")]
    pub arch: String,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 126)]
    pub swa_start: usize,
    #[arg(long, default_value_t = 0.1)]
    pub eta: f64,
    #[arg(long, default_value_t = 0.02)]
    pub eta_swa: f64,
    #[arg(long, default_value_t = 50)]
    pub continue_epochs: usize,
    #[arg(long, default_value_t = 0.02)]
    pub continue_eta: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 256)]
    pub n_train: usize,
    #[arg(long, default_value_t = 10_000)]
    pub n_heldout: usize,
    #[arg(long, default_value_t = 0.25)]
    pub data_noise: f64,
    #[arg(long, default_value_t = 41)]
    pub interpolation_steps: usize,
}

impl Default for SwaDirectionArgs {
    fn default() -> Self {
        Self {
            seeds: 5,
            arch: "2-16-16-2+bn".into(),
            epochs: 200,
            swa_start: 126,
            eta: 0.1,
            eta_swa: 0.02,
            continue_epochs: 50,
            continue_eta: 0.02,
            batch: 32,
            n_train: 256,
            n_heldout: 10_000,
            data_noise: 0.25,
            interpolation_steps: 41,
        }
    }
}

/// Per-seed outcome of training to an SWA solution and continuing with
/// small-LR SGD from it.
#[derive(Debug, Clone, Serialize)]
pub struct SwaSeedResult {
    pub seed: u64,
    pub swa_train: f64,
    pub sgd_train: f64,
    pub swa_heldout: f64,
    pub sgd_heldout: f64,
    pub bump: bool,
    pub bump_excess: f64,
    pub bn_recomputes: usize,
}

impl SwaSeedResult {
    /// SWA has the higher training loss and the lower held-out loss.
    pub fn direction_matches(&self) -> bool {
        self.swa_train >= self.sgd_train && self.swa_heldout <= self.sgd_heldout
    }
}

pub fn swa_direction_seeds(a: &SwaDirectionArgs, seed: u64) -> Result<Vec<SwaSeedResult>> {
    let arch = nn::Architecture::parse(&a.arch)?;
    (0..a.seeds as u64)
        .map(|i| {
            let s = seed + i;
            let data = nn::Dataset::generate(nn::DatasetConfig {
                generator: nn::Generator::TwoMoons,
                n_train: a.n_train,
                n_heldout: a.n_heldout,
                noise: a.data_noise,
                seed: s,
            })?;
            let cfg = nn::TrainConfig {
                epochs: a.epochs,
                batch_size: a.batch,
                schedule: nn::LrSchedule::SwaStyle {
                    eta_max: a.eta,
                    eta_swa: a.eta_swa,
                    swa_start: a.swa_start,
                },
                seed: s,
                swa: Some(nn::SwaConfig {
                    start_epoch: a.swa_start,
                    group: nn::SwaGroup::All,
                    mask_seed: s,
                }),
                eval_every: a.epochs.max(1),
                ..Default::default()
            };
            let r = nn::train(&arch, &data, &cfg)?;
            let swa = r.swa_params.clone().context("averaging was enabled")?;
            let swa_bn = r.swa_bn.clone().context("averaging was enabled")?;
            let cont = nn::TrainConfig {
                epochs: a.continue_epochs,
                schedule: nn::LrSchedule::Constant { eta: a.continue_eta },
                swa: None,
                seed: s + 100,
                eval_every: a.continue_epochs.max(1),
                ..cfg
            };
            let sgd = nn::train_from(&arch, &data, &cont, Some((swa.clone(), swa_bn)))?.params;
            let train_loss = nn::NetLandscape::new(arch.clone(), &data, nn::Split::Train, &swa)?;
            let heldout = nn::NetLandscape::new(arch.clone(), &data, nn::Split::Heldout, &swa)?;
            let it = valley_core::probes::interpolate(
                &train_loss,
                &swa.values,
                &sgd.values,
                valley_core::probes::INTERPOLATION_RANGE,
                a.interpolation_steps,
                Some(&heldout),
            )?;
            Ok(SwaSeedResult {
                seed: s,
                swa_train: train_loss.try_loss(&swa.values)?,
                sgd_train: train_loss.try_loss(&sgd.values)?,
                swa_heldout: heldout.try_loss(&swa.values)?,
                sgd_heldout: heldout.try_loss(&sgd.values)?,
                bump: it.bump.detected,
                bump_excess: it.bump.excess,
                bn_recomputes: heldout.recompute_events(),
            })
        })
        .collect()
}

fn swa_direction(a: &SwaDirectionArgs, seed: u64) -> Result<Outcome> {
    let rows = swa_direction_seeds(a, seed)?;
    let matches = rows.iter().filter(|r| r.direction_matches()).count();
    let no_bump = rows.iter().filter(|r| !r.bump).count();
    let majority = rows.len() / 2 + 1;
    let mut out = Outcome::new(json!({
        "seeds": rows.len(),
        "direction_matches": matches,
        "no_bump": no_bump,
        "majority_direction": matches >= majority,
        "majority_no_bump": no_bump >= majority,
        "bn_statistics": "recomputed on the training split for every evaluated train point; reused from the SWA point for held-out points within a 1e-3 relative move",
    }))
    .verdict("swa_direction", Verdict::RecordedOnly)
    .verdict("no_bump", Verdict::RecordedOnly);
    out.csv("swa_direction.csv", rows)?;
    Ok(out)
}
