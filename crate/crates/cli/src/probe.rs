//! `probe.*` protocols: geometry measurements on a valley, a quadratic or a
//! trained checkpoint.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;
use valley_core::landscape::{IsotropicQuadratic, Landscape};
use valley_core::nn::{self, NetLandscape, Split};
use valley_core::probes::{
    self, Direction, LengthScale, SampleKind, SliceProfile, SpecPolicy, INTERPOLATION_RANGE,
};
use valley_core::sgd_sim::Verdict;
use valley_core::valley_models::{SeparableValleyND, ValleyDoc};
use valley_core::{rng, AsymmetrySpec};

use crate::protocols::{load_valley, DataArgs};
use crate::report::Outcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    /// A 1D valley embedded along one random direction of `R^dim`.
    Valley,
    /// `|x|^2 / 2` in `R^dim`.
    Quadratic,
    /// A saved network with a regenerated dataset.
    Checkpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionChoice {
    /// The embedded valley's own direction.
    Valley,
    Random01,
    RandomPm1,
    Gaussian,
    /// From the checkpoint towards `--other`.
    Between,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SplitArg {
    Train,
    Heldout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleArg {
    Absolute,
    CenterRms,
}

const DEFAULT_VALLEY: &str =
    r#"{"kind":"tight","bounds":{"a_plus":0.1,"b_plus":0.1,"a_minus":-1.0,"b_minus":-1.0,"nu":0.0}}"#;

#[derive(Debug, Clone, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeArgs {
    #[arg(long, value_enum, default_value_t = Source::Valley)]
    pub source: Source,
    /// Valley document (inline JSON or file) for `--source valley`.
    #[arg(long, value_parser = load_valley, default_value = DEFAULT_VALLEY)]
    pub valley: ValleyDoc,
    /// Ambient dimension for synthetic sources.
    #[arg(long, default_value_t = 10)]
    pub dim: usize,
    /// Checkpoint directory for `--source checkpoint`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Second checkpoint, for interpolation and `between` directions.
    #[arg(long)]
    pub other: Option<PathBuf>,
    /// Checkpoints in training order, for stability.
    #[arg(long, value_delimiter = ',')]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    pub split: SplitArg,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Defaults to `valley` on the valley source and `random01` elsewhere.
    #[arg(long, value_enum)]
    pub direction: Option<DirectionChoice>,
    #[arg(long)]
    pub direction_seed: Option<u64>,
    #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
    pub from: f64,
    #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
    pub to: f64,
    #[arg(long, default_value_t = 61)]
    pub steps: usize,
    /// `r,p,c,zeta` for classify and neighborhood.
    #[arg(long, value_delimiter = ',', num_args = 4, default_values_t = [3.0, 0.2, 4.0, 0.5])]
    pub spec: Vec<f64>,
    #[arg(long, default_value_t = 3.0)]
    pub fit_r: f64,
    #[arg(long, default_value_t = 0.5)]
    pub fit_zeta: f64,
    #[arg(long, value_enum, default_value_t = ScaleArg::Absolute)]
    pub length_scale: ScaleArg,
    #[arg(long, default_value_t = 32)]
    pub grid: usize,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Neighbourhood radius.
    #[arg(long, default_value_t = 0.5)]
    pub radius: f64,
    #[arg(long, default_value_t = 20)]
    pub samples: usize,
    #[arg(long, default_value_t = 20)]
    pub rays: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0])]
    pub radii: Vec<f64>,
    /// Distance to the second endpoint on synthetic sources.
    #[arg(long, default_value_t = 2.0)]
    pub interp_distance: f64,
    #[arg(long, default_value_t = 41)]
    pub interp_steps: usize,
    /// Synthetic checkpoints for stability on synthetic sources.
    #[arg(long, default_value_t = 8)]
    pub n_checkpoints: usize,
}

impl Default for ProbeArgs {
    fn default() -> Self {
        Self {
            source: Source::Valley,
            valley: ValleyDoc::from_json(DEFAULT_VALLEY).expect("valid default valley"),
            dim: 10,
            checkpoint: None,
            other: None,
            checkpoints: Vec::new(),
            split: SplitArg::Train,
            data: DataArgs::default(),
            direction: None,
            direction_seed: None,
            from: -3.0,
            to: 3.0,
            steps: 61,
            spec: vec![3.0, 0.2, 4.0, 0.5],
            fit_r: 3.0,
            fit_zeta: 0.5,
            length_scale: ScaleArg::Absolute,
            grid: 32,
            trials: 100,
            radius: 0.5,
            samples: 20,
            rays: 20,
            radii: vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0],
            interp_distance: 2.0,
            interp_steps: 41,
            n_checkpoints: 8,
        }
    }
}

impl ProbeArgs {
    fn policy(&self) -> SpecPolicy {
        SpecPolicy {
            r: self.fit_r,
            zeta: self.fit_zeta,
            length_scale: match self.length_scale {
                ScaleArg::Absolute => LengthScale::Absolute,
                ScaleArg::CenterRms => LengthScale::CenterRms,
            },
            grid: self.grid,
        }
    }

    fn spec(&self) -> Result<AsymmetrySpec> {
        let a: [f64; 4] = self.spec.as_slice().try_into().context("spec needs r,p,c,zeta")?;
        Ok(AsymmetrySpec::from_array(a)?)
    }
}

/// Everything a probe may need besides the loss itself.
struct Ctx<'a> {
    center: Vec<f64>,
    valley_dir: Option<Vec<f64>>,
    other: Option<Vec<f64>>,
    second: Option<&'a dyn Landscape>,
    checkpoints: Vec<Vec<f64>>,
    masks: Option<(Vec<bool>, Vec<bool>)>,
}

pub fn run(kind: &str, a: &ProbeArgs, seed: u64) -> Result<Outcome> {
    const KINDS: [&str; 8] = [
        "slice",
        "classify",
        "find-asym",
        "neighborhood",
        "interpolate",
        "random-ray",
        "stability",
        "bn-compare",
    ];
    if !KINDS.contains(&kind) {
        bail!("unknown probe `{kind}`");
    }
    match a.source {
        Source::Valley => {
            let axis = a.valley.build()?;
            let v = SeparableValleyND::new(vec![axis], a.dim, rng::mix(seed, 11))?;
            let ctx = synthetic_ctx(a, seed, v.base.clone(), Some(v.directions[0].clone()));
            dispatch(kind, a, seed, &v, ctx)
        }
        Source::Quadratic => {
            let q = IsotropicQuadratic::unit(a.dim);
            let ctx = synthetic_ctx(a, seed, q.center.clone(), None);
            dispatch(kind, a, seed, &q, ctx)
        }
        Source::Checkpoint => {
            let path = a.checkpoint.as_ref().context("--checkpoint is required for the checkpoint source")?;
            let ck = nn::load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
            let data = a.data.dataset(seed)?;
            let (split, other_split) = match a.split {
                SplitArg::Train => (Split::Train, Split::Heldout),
                SplitArg::Heldout => (Split::Heldout, Split::Train),
            };
            let model = NetLandscape::new(ck.arch.clone(), &data, split, &ck.params)?;
            let second = NetLandscape::new(ck.arch.clone(), &data, other_split, &ck.params)?;
            let load = |p: &PathBuf| -> Result<Vec<f64>> {
                let c = nn::load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?;
                ck.params.ensure_same_layout(&c.params)?;
                Ok(c.params.values)
            };
            let masks = ck.arch.has_bn().then(|| {
                let layout = ck.params.layout.clone();
                (nn::ParamGroupMask::bn(&layout).bits, nn::ParamGroupMask::non_bn(&layout).bits)
            });
            let ctx = Ctx {
                center: ck.params.values.clone(),
                valley_dir: None,
                other: a.other.as_ref().map(load).transpose()?,
                second: Some(&second),
                checkpoints: a.checkpoints.iter().map(load).collect::<Result<_>>()?,
                masks,
            };
            let mut out = dispatch(kind, a, seed, &model, ctx)?;
            if let Some(obj) = out.metrics.as_object_mut() {
                obj.insert("bn_recompute_events".into(), json!(model.recompute_events() + second.recompute_events()));
            }
            Ok(out)
        }
    }
}

/// Synthetic sources: the second endpoint sits `interp_distance` along the
/// probe direction and the checkpoints approach the center along a seeded
/// Gaussian offset.
fn synthetic_ctx<'a>(a: &ProbeArgs, seed: u64, center: Vec<f64>, valley_dir: Option<Vec<f64>>) -> Ctx<'a> {
    let n = a.n_checkpoints.max(2);
    let offset = probes::sample_direction(SampleKind::Gaussian, center.len(), rng::mix(seed, 12), None)
        .map(|d| d.vec)
        .unwrap_or_else(|_| vec![0.0; center.len()]);
    let checkpoints = (0..n)
        .map(|j| {
            let s = a.radius * (1.0 - j as f64 / (n - 1) as f64);
            center.iter().zip(&offset).map(|(c, o)| c + s * o).collect()
        })
        .collect();
    Ctx {
        center,
        valley_dir,
        other: None,
        second: None,
        checkpoints,
        masks: None,
    }
}

fn direction(a: &ProbeArgs, seed: u64, ctx: &Ctx) -> Result<Direction> {
    let d = ctx.center.len();
    let dseed = a.direction_seed.unwrap_or(rng::mix(seed, 13));
    let choice = a.direction.unwrap_or(if ctx.valley_dir.is_some() {
        DirectionChoice::Valley
    } else {
        DirectionChoice::Random01
    });
    Ok(match choice {
        DirectionChoice::Valley => {
            let v = ctx.valley_dir.clone().context("the valley direction needs --source valley")?;
            Direction::new(v, probes::Provenance::Custom)?
        }
        DirectionChoice::Random01 => probes::sample_direction(SampleKind::Random01, d, dseed, None)?,
        DirectionChoice::RandomPm1 => probes::sample_direction(SampleKind::RandomPm1, d, dseed, None)?,
        DirectionChoice::Gaussian => probes::sample_direction(SampleKind::Gaussian, d, dseed, None)?,
        DirectionChoice::Between => {
            let b = ctx.other.as_ref().context("a `between` direction needs --other")?;
            Direction::between(&ctx.center, b)?
        }
    })
}

fn profile_table(out: &mut Outcome, name: &str, p: &SliceProfile) -> Result<()> {
    let rows = p.offsets.iter().enumerate().map(|(i, l)| {
        let mut row = vec![*l, p.values[i]];
        if let Some(s) = &p.second {
            row.push(s[i]);
        }
        row
    });
    let header: &[&str] = if p.second.is_some() {
        &["l", "loss", "second"]
    } else {
        &["l", "loss"]
    };
    out.table(name, header, rows)
}

fn sidecar<T: Serialize>(out: &mut Outcome, name: &str, value: &T) -> Result<()> {
    out.file(name, serde_json::to_vec_pretty(value)?);
    Ok(())
}

fn dispatch(kind: &str, a: &ProbeArgs, seed: u64, model: &dyn Landscape, ctx: Ctx) -> Result<Outcome> {
    let center = &ctx.center;
    let mut out = match kind {
        "slice" => {
            let u = direction(a, seed, &ctx)?;
            let mut p = probes::slice(model, center, &u, (a.from, a.to), a.steps)?;
            if let Some(s) = ctx.second {
                p = probes::with_second(p, s);
            }
            let mut out = Outcome::new(json!({
                "points": p.offsets.len(),
                "non_finite": p.non_finite.len(),
                "min": p.values.iter().cloned().fold(f64::INFINITY, f64::min),
                "provenance": u.provenance,
            }));
            profile_table(&mut out, "slice.csv", &p)?;
            sidecar(&mut out, "slice.json", &p)?;
            out
        }
        "classify" => {
            let u = direction(a, seed, &ctx)?;
            let v = probes::classify_direction(model, center, &u, &a.spec()?, a.grid)?;
            let fit = probes::fit_spec(model, center, &u, &a.policy())?;
            let mut out = Outcome::new(json!({
                "holds": v.holds,
                "flat_max_slope": v.flat_max_slope,
                "sharp_min_magnitude": v.sharp_min_magnitude,
                "fitted_c": fit.c,
                "method": v.method,
            }));
            sidecar(&mut out, "classify.json", &json!({"verdict": v, "fit": fit}))?;
            out
        }
        "find-asym" => {
            let r = probes::find_asymmetric_direction(model, center, &a.policy(), a.trials, a.direction_seed.unwrap_or(seed))?;
            let mut out = Outcome::new(json!({
                "found": r.found.is_some(),
                "hits": r.hits,
                "trials": r.trials,
                "hit_rate": r.hit_rate(),
                "fitted_c": r.found.as_ref().and_then(|f| f.2.c),
            }));
            out.table(
                "fits.csv",
                &["trial", "c", "flat_max_slope", "sharp_min_magnitude"],
                r.fits.iter().enumerate().map(|(i, f)| {
                    vec![i as f64, f.c.unwrap_or(f64::NAN), f.flat_max_slope, f.sharp_min_magnitude]
                }),
            )?;
            sidecar(&mut out, "find_asym.json", &r.found)?;
            out
        }
        "neighborhood" => {
            let u = direction(a, seed, &ctx)?;
            let r = probes::verify_neighborhood_asymmetry(
                model,
                center,
                &u,
                &a.spec()?,
                a.radius,
                a.samples,
                rng::mix(seed, 14),
                a.grid,
            )?;
            let max = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
            let mut out = Outcome::new(json!({
                "holds_fraction": r.holds_fraction,
                "max_slice_variance": max(&r.slice_variance),
                "max_shape_variance": max(&r.shape_variance),
                "samples": r.verdicts.len(),
            }));
            out.table(
                "neighborhood.csv",
                &["l", "mean", "variance", "shape_variance"],
                (0..r.offsets.len()).map(|i| vec![r.offsets[i], r.mean_slice[i], r.slice_variance[i], r.shape_variance[i]]),
            )?;
            sidecar(&mut out, "neighborhood.json", &r)?;
            out
        }
        "interpolate" => {
            let b = match &ctx.other {
                Some(b) => b.clone(),
                None => {
                    let u = direction(a, seed, &ctx)?;
                    center.iter().zip(&u.vec).map(|(c, x)| c + a.interp_distance * x).collect()
                }
            };
            let it = probes::interpolate(model, center, &b, INTERPOLATION_RANGE, a.interp_steps, ctx.second)?;
            let mut out = Outcome::new(json!({
                "bump": it.bump.detected,
                "bump_at": it.bump.at,
                "bump_excess": it.bump.excess,
                "second_bump": it.second_bump.as_ref().map(|b| b.detected),
            }));
            profile_table(&mut out, "interpolation.csv", &it.profile)?;
            sidecar(&mut out, "interpolation.json", &it)?;
            out
        }
        "random-ray" => {
            let r = probes::random_ray_profile(model, center, a.rays, &a.radii, rng::mix(seed, 15))?;
            let mut out = Outcome::new(json!({"rays": r.n_rays, "mean_at_max_radius": r.mean.last()}));
            out.table(
                "random_ray.csv",
                &["radius", "mean", "stderr"],
                (0..r.radii.len()).map(|i| vec![r.radii[i], r.mean[i], r.stderr[i]]),
            )?;
            sidecar(&mut out, "random_ray.json", &r)?;
            out
        }
        "stability" => {
            if ctx.checkpoints.len() < 2 {
                bail!("stability needs at least two checkpoints (--checkpoints a,b,...)");
            }
            let u = direction(a, seed, &ctx)?;
            let r = probes::projected_slice_stability(model, &ctx.checkpoints, &u, (a.from, a.to), a.steps)?;
            let mut out = Outcome::new(json!({
                "stability_index": r.stability_index,
                "first_half_index": r.first_half_index,
                "checkpoints": r.profiles.len(),
            }));
            let mut header = vec!["l".to_string()];
            header.extend((0..r.profiles.len()).map(|j| format!("checkpoint_{j}")));
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            out.table(
                "stability.csv",
                &header,
                (0..r.profiles[0].offsets.len())
                    .map(|i| std::iter::once(r.profiles[0].offsets[i]).chain(r.profiles.iter().map(|p| p.values[i])).collect()),
            )?;
            sidecar(&mut out, "stability.json", &r)?;
            out
        }
        "bn-compare" => {
            let (bn, non_bn) = ctx.masks.as_ref().context("bn-compare needs a checkpoint with batch norm")?;
            let r = probes::bn_direction_comparison(model, center, bn, non_bn, a.direction_seed.unwrap_or(seed), &a.policy())?;
            let mut out = Outcome::new(json!({
                "bn_c": r.bn.c,
                "non_bn_c": r.non_bn.c,
                "bn_asymmetric": r.bn.is_asymmetric(),
                "non_bn_asymmetric": r.non_bn.is_asymmetric(),
            }));
            sidecar(&mut out, "bn_compare.json", &r)?;
            out
        }
        other => bail!("unknown probe `{other}`"),
    };
    out = out.verdict(kind, Verdict::RecordedOnly);
    Ok(out)
}
