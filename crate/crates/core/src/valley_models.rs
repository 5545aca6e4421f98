//! Synthetic loss functions with closed-form gradients and minimizers.
//!
//! Every function here has its theorem-relevant constants exact by
//! construction: the one-sided gradient bounds of an asymmetric valley, the
//! slope of a symmetric function, the orthonormal frame of a separable
//! valley. They are the ground truth the simulators and probes are checked
//! against.

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Error, Result};
use crate::landscape::{dot, Landscape};
use crate::rng;

/// The `(r, p, c, zeta)` tuple of an asymmetric direction.
///
/// Along the direction the slope stays below `p` on the flat side and below
/// `-c p` on the sharp side for every offset in `(zeta, r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymmetrySpec {
    pub r: f64,
    pub p: f64,
    pub c: f64,
    pub zeta: f64,
}

impl AsymmetrySpec {
    pub fn new(r: f64, p: f64, c: f64, zeta: f64) -> Result<Self> {
        let spec = Self { r, p, c, zeta };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (v, name) in [(self.r, "r"), (self.p, "p"), (self.c, "c"), (self.zeta, "zeta")] {
            if !v.is_finite() {
                return Err(invalid(name, "must be finite"));
            }
        }
        if self.zeta < 0.0 {
            return Err(invalid("zeta", "must be non-negative"));
        }
        if self.r <= self.zeta {
            return Err(invalid("r", format!("must exceed zeta ({})", self.zeta)));
        }
        if self.p <= 0.0 {
            return Err(invalid("p", "must be positive"));
        }
        if self.c <= 1.0 {
            return Err(invalid("c", "must exceed 1"));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.r, self.p, self.c, self.zeta]
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn with_p(self, p: f64) -> Self {
        Self { p, ..self }
    }

    pub fn with_c(self, c: f64) -> Self {
        Self { c, ..self }
    }
}

/// One-sided gradient bounds of a 1D valley with minimizer at 0, plus the
/// noise bound `nu` of the SGD run it is paired with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientBounds {
    pub a_plus: f64,
    pub b_plus: f64,
    pub a_minus: f64,
    pub b_minus: f64,
    pub nu: f64,
}

impl GradientBounds {
    /// Checks the ordering constraints. `nu <= a_plus` is a hypothesis of
    /// the averaging theorem and is reported by
    /// [`crate::theory::theorem_two_hypothesis_check`], not enforced here.
    pub fn new(a_plus: f64, b_plus: f64, a_minus: f64, b_minus: f64, nu: f64) -> Result<Self> {
        let b = Self {
            a_plus,
            b_plus,
            a_minus,
            b_minus,
            nu,
        };
        b.validate()?;
        Ok(b)
    }

    /// Constant slopes: `b_plus = a_plus`, `b_minus = a_minus`.
    pub fn tight(a_plus: f64, a_minus: f64, nu: f64) -> Result<Self> {
        Self::new(a_plus, a_plus, a_minus, a_minus, nu)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            (self.a_plus, "a_plus"),
            (self.b_plus, "b_plus"),
            (self.a_minus, "a_minus"),
            (self.b_minus, "b_minus"),
            (self.nu, "nu"),
        ];
        for (v, name) in fields {
            if !v.is_finite() {
                return Err(invalid(name, "must be finite"));
            }
        }
        if !(0.0 < self.b_plus && self.b_plus <= self.a_plus) {
            return Err(invalid("b_plus", "need 0 < b_plus <= a_plus"));
        }
        if !(self.b_minus <= self.a_minus && self.a_minus < 0.0) {
            return Err(invalid("a_minus", "need b_minus <= a_minus < 0"));
        }
        if self.nu < 0.0 {
            return Err(invalid("nu", "must be non-negative"));
        }
        Ok(())
    }

    /// `c = -a_minus / a_plus`.
    pub fn asymmetry_ratio(&self) -> f64 {
        -self.a_minus / self.a_plus
    }

    pub fn with_nu(self, nu: f64) -> Self {
        Self { nu, ..self }
    }

    /// Lipschitz constant of any loss whose gradient respects these bounds.
    pub fn lipschitz(&self) -> f64 {
        self.a_plus.max(-self.b_minus)
    }
}

/// Period of the wobble profile, in position units.
pub const WOBBLE_PERIOD: f64 = 0.05;

/// How the gradient varies inside the declared bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum GradientProfile {
    /// `a_plus` on `w >= 0`, `a_minus` on `w < 0`.
    Tight,
    /// Sinusoid spanning `[b, a]` on each side.
    Wobble { period: f64, phase: f64 },
    /// Tight slopes outside `|w| >= zeta`, linearly ramped gradient inside
    /// (a quadratic cap at the bottom of the valley).
    Capped { zeta: f64 },
}

/// A 1D loss with minimizer 0, flat on the positive side, sharp on the
/// negative side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseValley1D {
    pub bounds: GradientBounds,
    pub profile: GradientProfile,
}

/// Evaluation of a 1D loss and its derivative.
pub trait Loss1D: Sync {
    /// Loss at `w`. Callers are expected to pass finite values.
    fn value(&self, w: f64) -> f64;

    /// Derivative at `w`; at a kink the right derivative is returned.
    fn slope(&self, w: f64) -> f64;

    fn loss(&self, w: f64) -> Result<f64> {
        Ok(self.value(ensure_finite(w, "position")?))
    }

    fn grad(&self, w: f64) -> Result<f64> {
        Ok(self.slope(ensure_finite(w, "position")?))
    }
}

impl PiecewiseValley1D {
    pub fn new(bounds: GradientBounds, profile: GradientProfile) -> Result<Self> {
        bounds.validate()?;
        match profile {
            GradientProfile::Tight => {}
            GradientProfile::Wobble { period, phase } => {
                if !(period > 0.0 && period.is_finite()) || !phase.is_finite() {
                    return Err(invalid("period", "must be positive and finite"));
                }
            }
            GradientProfile::Capped { zeta } => {
                if !(zeta > 0.0 && zeta.is_finite()) {
                    return Err(invalid("zeta", "cap half-width must be positive"));
                }
            }
        }
        Ok(Self { bounds, profile })
    }

    /// Constant slopes equal to the tight bounds.
    pub fn tight(a_plus: f64, a_minus: f64) -> Result<Self> {
        Self::new(GradientBounds::tight(a_plus, a_minus, 0.0)?, GradientProfile::Tight)
    }

    /// Sinusoidal gradients inside `[b_plus, a_plus]` and `[b_minus, a_minus]`,
    /// phase drawn from `seed`.
    pub fn wobble(bounds: GradientBounds, seed: u64) -> Result<Self> {
        use rand::Rng as _;
        let phase = rng::seeded(seed).random_range(0.0..2.0 * PI);
        Self::new(
            bounds,
            GradientProfile::Wobble {
                period: WOBBLE_PERIOD,
                phase,
            },
        )
    }

    /// Closed-form flat/sharp split of the slope, `(mid, half)` for the side
    /// of `w`.
    fn side(&self, w: f64) -> (f64, f64) {
        let b = &self.bounds;
        if w >= 0.0 {
            (0.5 * (b.a_plus + b.b_plus), 0.5 * (b.a_plus - b.b_plus))
        } else {
            (0.5 * (b.a_minus + b.b_minus), 0.5 * (b.a_minus - b.b_minus))
        }
    }
}

impl Loss1D for PiecewiseValley1D {
    fn value(&self, w: f64) -> f64 {
        let b = &self.bounds;
        match self.profile {
            GradientProfile::Tight => {
                if w >= 0.0 {
                    b.a_plus * w
                } else {
                    b.a_minus * w
                }
            }
            GradientProfile::Wobble { period, phase } => {
                let (mid, half) = self.side(w);
                let k = 2.0 * PI / period;
                mid * w + half / k * (phase.cos() - (k * w + phase).cos())
            }
            GradientProfile::Capped { zeta } => {
                if w >= zeta {
                    b.a_plus * (0.5 * zeta + (w - zeta))
                } else if w >= 0.0 {
                    b.a_plus * w * w / (2.0 * zeta)
                } else if w > -zeta {
                    -b.a_minus * w * w / (2.0 * zeta)
                } else {
                    -b.a_minus * 0.5 * zeta + b.a_minus * (w + zeta)
                }
            }
        }
    }

    fn slope(&self, w: f64) -> f64 {
        let b = &self.bounds;
        match self.profile {
            GradientProfile::Tight => {
                if w >= 0.0 {
                    b.a_plus
                } else {
                    b.a_minus
                }
            }
            GradientProfile::Wobble { period, phase } => {
                let (mid, half) = self.side(w);
                mid + half * (2.0 * PI * w / period + phase).sin()
            }
            GradientProfile::Capped { zeta } => {
                if w >= zeta {
                    b.a_plus
                } else if w >= 0.0 {
                    b.a_plus * w / zeta
                } else if w > -zeta {
                    -b.a_minus * w / zeta
                } else {
                    b.a_minus
                }
            }
        }
    }
}

/// Flat-side slope of [`build_valley_from_spec`] as a fraction of `p`.
pub const SPEC_FLAT_FRACTION: f64 = 0.75;
/// Sharp-side slope magnitude of [`build_valley_from_spec`] in units of `c p`.
pub const SPEC_SHARP_FACTOR: f64 = 1.5;

/// A valley along which the positive axis is a `spec`-asymmetric direction.
///
/// Outside the dead zone the flat slope is `0.75 p` and the sharp slope is
/// `-1.5 c p`, so the spec holds with margin while halving `p` or doubling
/// `c` breaks it. Inside `|w| < zeta` the gradient ramps linearly to 0.
pub fn build_valley_from_spec(spec: &AsymmetrySpec) -> Result<PiecewiseValley1D> {
    spec.validate()?;
    let flat = SPEC_FLAT_FRACTION * spec.p;
    let sharp = -SPEC_SHARP_FACTOR * spec.c * spec.p;
    let bounds = GradientBounds::tight(flat, sharp, 0.0)?;
    let profile = if spec.zeta > 0.0 {
        GradientProfile::Capped { zeta: spec.zeta }
    } else {
        GradientProfile::Tight
    };
    PiecewiseValley1D::new(bounds, profile)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SymmetricKind {
    /// `slope * w^2 / 2`: gradients vanish toward the minimum.
    FlatSided,
    /// `slope * |w|`: constant gradient magnitude on both sides.
    SharpSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetricFunction1D {
    pub kind: SymmetricKind,
    pub slope: f64,
}

impl SymmetricFunction1D {
    pub fn new(kind: SymmetricKind, slope: f64) -> Result<Self> {
        if !(slope > 0.0 && slope.is_finite()) {
            return Err(invalid("slope", "must be positive"));
        }
        Ok(Self { kind, slope })
    }
}

impl Loss1D for SymmetricFunction1D {
    fn value(&self, w: f64) -> f64 {
        match self.kind {
            SymmetricKind::FlatSided => 0.5 * self.slope * w * w,
            SymmetricKind::SharpSided => self.slope * w.abs(),
        }
    }

    fn slope(&self, w: f64) -> f64 {
        match self.kind {
            SymmetricKind::FlatSided => self.slope * w,
            SymmetricKind::SharpSided => {
                if w >= 0.0 {
                    self.slope
                } else {
                    -self.slope
                }
            }
        }
    }
}

/// One coordinate of a separable valley.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", rename_all = "kebab-case")]
pub enum AxisLoss {
    Asymmetric(PiecewiseValley1D),
    Symmetric(SymmetricFunction1D),
    /// `height * ((w / half_gap)^2 - 1)^2`, minima at `+-half_gap`.
    DoubleWell { half_gap: f64, height: f64 },
}

impl Loss1D for AxisLoss {
    fn value(&self, w: f64) -> f64 {
        match self {
            AxisLoss::Asymmetric(v) => v.value(w),
            AxisLoss::Symmetric(s) => s.value(w),
            AxisLoss::DoubleWell { half_gap, height } => {
                let q = (w / half_gap).powi(2) - 1.0;
                height * q * q
            }
        }
    }

    fn slope(&self, w: f64) -> f64 {
        match self {
            AxisLoss::Asymmetric(v) => v.slope(w),
            AxisLoss::Symmetric(s) => s.slope(w),
            AxisLoss::DoubleWell { half_gap, height } => {
                let q = (w / half_gap).powi(2) - 1.0;
                height * 4.0 * q * w / (half_gap * half_gap)
            }
        }
    }
}

impl From<PiecewiseValley1D> for AxisLoss {
    fn from(v: PiecewiseValley1D) -> Self {
        AxisLoss::Asymmetric(v)
    }
}

impl From<SymmetricFunction1D> for AxisLoss {
    fn from(s: SymmetricFunction1D) -> Self {
        AxisLoss::Symmetric(s)
    }
}

/// Any 1D loss is a landscape over `R^1`.
impl Landscape for AxisLoss {
    fn dim(&self) -> usize {
        1
    }
    fn loss(&self, x: &[f64]) -> f64 {
        self.value(x[0])
    }
    fn directional_slope(&self, x: &[f64], u: &[f64]) -> Option<f64> {
        Some(self.slope(x[0]) * u[0])
    }
    fn known_min(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// Sum of 1D losses of the projections onto `k` orthonormal directions in
/// `R^d`, centred at `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparableValleyND {
    pub axes: Vec<AxisLoss>,
    pub directions: Vec<Vec<f64>>,
    pub base: Vec<f64>,
}

impl SeparableValleyND {
    /// Directions from Gram-Schmidt on seeded Gaussian vectors; base at 0.
    pub fn new(axes: Vec<AxisLoss>, dim: usize, seed: u64) -> Result<Self> {
        if axes.is_empty() {
            return Err(invalid("axes", "need at least one axis"));
        }
        if axes.len() > dim {
            return Err(invalid("axes", format!("{} axes do not fit in dimension {dim}", axes.len())));
        }
        let directions = orthonormal_frame(axes.len(), dim, seed);
        Ok(Self {
            axes,
            directions,
            base: vec![0.0; dim],
        })
    }

    /// Axis-aligned frame: direction `i` is the `i`-th unit vector.
    pub fn axis_aligned(axes: Vec<AxisLoss>, dim: usize) -> Result<Self> {
        if axes.is_empty() || axes.len() > dim {
            return Err(invalid("axes", "need 1..=dim axes"));
        }
        let directions = (0..axes.len())
            .map(|i| {
                let mut e = vec![0.0; dim];
                e[i] = 1.0;
                e
            })
            .collect();
        Ok(Self {
            axes,
            directions,
            base: vec![0.0; dim],
        })
    }

    pub fn with_directions(axes: Vec<AxisLoss>, directions: Vec<Vec<f64>>, base: Vec<f64>) -> Result<Self> {
        if axes.len() != directions.len() || axes.is_empty() {
            return Err(invalid("directions", "one direction per axis required"));
        }
        let d = base.len();
        for (i, u) in directions.iter().enumerate() {
            if u.len() != d {
                return Err(invalid("directions", "dimension mismatch"));
            }
            for (j, v) in directions.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot(u, v) - expect).abs() > 1e-10 {
                    return Err(invalid("directions", "not orthonormal"));
                }
            }
        }
        Ok(Self { axes, directions, base })
    }

    pub fn with_base(mut self, base: Vec<f64>) -> Result<Self> {
        if base.len() != self.base.len() {
            return Err(invalid("base", "dimension mismatch"));
        }
        self.base = base;
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.axes.len()
    }

    /// Coordinates `<x - base, u^i>`.
    pub fn coords(&self, x: &[f64]) -> Vec<f64> {
        self.directions
            .iter()
            .map(|u| {
                u.iter()
                    .zip(x)
                    .zip(&self.base)
                    .map(|((ui, xi), bi)| ui * (xi - bi))
                    .sum()
            })
            .collect()
    }

    /// `base + sum_i t_i u^i`
    pub fn point(&self, t: &[f64]) -> Vec<f64> {
        let mut x = self.base.clone();
        for (ti, u) in t.iter().zip(&self.directions) {
            for (xj, uj) in x.iter_mut().zip(u) {
                *xj += ti * uj;
            }
        }
        x
    }

    /// Loss at subspace coordinates `t`.
    pub fn loss_at_coords(&self, t: &[f64]) -> f64 {
        self.axes.iter().zip(t).map(|(a, ti)| a.value(*ti)).sum()
    }
}

impl Landscape for SeparableValleyND {
    fn dim(&self) -> usize {
        self.base.len()
    }

    fn loss(&self, x: &[f64]) -> f64 {
        self.loss_at_coords(&self.coords(x))
    }

    fn directional_slope(&self, x: &[f64], u: &[f64]) -> Option<f64> {
        let t = self.coords(x);
        Some(
            self.axes
                .iter()
                .zip(&t)
                .zip(&self.directions)
                .map(|((a, ti), ui)| a.slope(*ti) * dot(ui, u))
                .sum(),
        )
    }

    fn known_min(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// `k` orthonormal vectors in `R^d` by Gram-Schmidt on seeded Gaussians.
pub fn orthonormal_frame(k: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng::seeded(seed);
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(k);
    while frame.len() < k {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        // two passes keep the frame orthogonal to machine precision
        for _ in 0..2 {
            for u in &frame {
                let proj = dot(&v, u);
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= proj * ui;
                }
            }
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-8 {
            v.iter_mut().for_each(|vi| *vi /= n);
            frame.push(v);
        }
    }
    frame
}

/// External JSON description of a 1D valley.
///
/// `kind` selects the family; `bounds`, `spec` and `seed` are read as the
/// family requires:
/// * `tight`, `symmetric-flat`, `symmetric-sharp`: `bounds` (symmetric kinds
///   use `a_plus` as the slope),
/// * `wobble`: `bounds` and `seed` (phase),
/// * `from-spec`: `spec = [r, p, c, zeta]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValleyDoc {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<GradientBounds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ValleyDoc {
    pub fn build(&self) -> Result<AxisLoss> {
        let bounds = || self.bounds.ok_or_else(|| invalid("bounds", format!("required for kind `{}`", self.kind)));
        match self.kind.as_str() {
            "tight" => Ok(AxisLoss::Asymmetric(PiecewiseValley1D::new(bounds()?, GradientProfile::Tight)?)),
            "wobble" => Ok(AxisLoss::Asymmetric(PiecewiseValley1D::wobble(
                bounds()?,
                self.seed.unwrap_or(0),
            )?)),
            "from-spec" => {
                let spec = self.spec.ok_or_else(|| invalid("spec", "required for kind `from-spec`"))?;
                Ok(AxisLoss::Asymmetric(build_valley_from_spec(&AsymmetrySpec::from_array(spec)?)?))
            }
            "symmetric-flat" => Ok(AxisLoss::Symmetric(SymmetricFunction1D::new(
                SymmetricKind::FlatSided,
                bounds()?.a_plus,
            )?)),
            "symmetric-sharp" => Ok(AxisLoss::Symmetric(SymmetricFunction1D::new(
                SymmetricKind::SharpSided,
                bounds()?.a_plus,
            )?)),
            other => Err(invalid("kind", format!("unknown valley kind `{other}`"))),
        }
    }

    /// The bounds the valley's gradients respect, when it has them.
    pub fn gradient_bounds(&self) -> Option<GradientBounds> {
        match self.build().ok()? {
            AxisLoss::Asymmetric(v) => Some(v.bounds),
            _ => None,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl TryFrom<&ValleyDoc> for AxisLoss {
    type Error = Error;
    fn try_from(doc: &ValleyDoc) -> Result<Self> {
        doc.build()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_valley() -> PiecewiseValley1D {
        PiecewiseValley1D::tight(0.1, -1.0).unwrap()
    }

    #[test]
    fn tight_valley_values() {
        let v = default_valley();
        assert_eq!(v.loss(0.0).unwrap(), 0.0);
        assert!((v.loss(2.0).unwrap() - 0.2).abs() < 1e-15);
        assert!((v.loss(-2.0).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(v.grad(1.0).unwrap(), 0.1);
        assert_eq!(v.grad(-1.0).unwrap(), -1.0);
        // the flat-side rule applies at the minimizer itself
        assert_eq!(v.grad(0.0).unwrap(), 0.1);
    }

    #[test]
    fn non_finite_positions_rejected() {
        let v = default_valley();
        assert!(matches!(v.loss(f64::NAN), Err(Error::NonFinite(_))));
        assert!(matches!(v.grad(f64::INFINITY), Err(Error::NonFinite(_))));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(AsymmetrySpec::new(1.0, 0.1, 1.0, 0.0).is_err());
        assert!(AsymmetrySpec::new(1.0, 0.0, 2.0, 0.0).is_err());
        assert!(AsymmetrySpec::new(1.0, 0.1, 2.0, 1.0).is_err());
        assert!(AsymmetrySpec::new(1.0, 0.1, 2.0, -0.1).is_err());
        assert!(GradientBounds::new(0.1, 0.2, -1.0, -1.0, 0.0).is_err());
        assert!(GradientBounds::new(0.1, 0.1, -1.0, -0.5, 0.0).is_err());
        assert!(GradientBounds::new(0.1, 0.1, 0.5, -1.0, 0.0).is_err());
    }

    #[test]
    fn spec_valley_slopes() {
        let spec = AsymmetrySpec::new(2.5, 0.2, 7.5, 1.2).unwrap();
        let v = build_valley_from_spec(&spec).unwrap();
        for i in 1..100 {
            let l = spec.zeta + (spec.r - spec.zeta) * i as f64 / 100.0;
            assert!(v.slope(l) < 0.2);
            assert!(v.slope(-l) < -1.5);
        }
        // continuous at the cap boundary
        let z = spec.zeta;
        assert!((v.value(z + 1e-12) - v.value(z - 1e-12)).abs() < 1e-10);
        assert!((v.value(-z + 1e-12) - v.value(-z - 1e-12)).abs() < 1e-10);
        assert_eq!(v.value(0.0), 0.0);
    }

    #[test]
    fn wobble_stays_inside_bounds() {
        let b = GradientBounds::new(0.05, 0.03, -1.5, -1.6, 0.01).unwrap();
        let v = PiecewiseValley1D::wobble(b, 3).unwrap();
        for i in -2000..2000 {
            let w = i as f64 * 1e-3;
            let g = v.slope(w);
            if w >= 0.0 {
                assert!(b.b_plus <= g && g <= b.a_plus, "w={w} g={g}");
            } else {
                assert!(b.b_minus <= g && g <= b.a_minus, "w={w} g={g}");
            }
        }
        assert_eq!(v.value(0.0), 0.0);
    }

    #[test]
    fn symmetric_functions_are_even() {
        for kind in [SymmetricKind::FlatSided, SymmetricKind::SharpSided] {
            let s = SymmetricFunction1D::new(kind, 0.7).unwrap();
            for i in 0..50 {
                let w = 0.137 * i as f64;
                assert_eq!(s.value(w), s.value(-w));
            }
        }
    }

    #[test]
    fn orthonormal_frame_is_orthonormal() {
        let f = orthonormal_frame(5, 12, 11);
        for i in 0..5 {
            for j in 0..5 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((dot(&f[i], &f[j]) - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn separable_loss_is_sum_of_axes() {
        let axes: Vec<AxisLoss> = vec![
            default_valley().into(),
            SymmetricFunction1D::new(SymmetricKind::FlatSided, 2.0).unwrap().into(),
        ];
        let v = SeparableValleyND::new(axes.clone(), 6, 5).unwrap();
        let t = [0.3, -0.7];
        let x = v.point(&t);
        let expect = axes[0].value(0.3) + axes[1].value(-0.7);
        assert!((v.loss(&x) - expect).abs() < 1e-12);
    }

    #[test]
    fn valley_doc_round_trip() {
        let json = r#"{"kind": "from-spec", "spec": [2.5, 0.2, 7.5, 1.2], "seed": 4}"#;
        let doc = ValleyDoc::from_json(json).unwrap();
        let back = ValleyDoc::from_json(&doc.to_json().unwrap()).unwrap();
        assert_eq!(doc, back);
        assert!(matches!(doc.build().unwrap(), AxisLoss::Asymmetric(_)));

        let doc = ValleyDoc {
            kind: "tight".into(),
            bounds: Some(GradientBounds::tight(0.1, -1.0, 0.0).unwrap()),
            spec: None,
            seed: None,
        };
        let text = doc.to_json().unwrap();
        assert!(text.contains("\"a_plus\""));
        assert!(text.contains("\"kind\""));
        assert!(ValleyDoc::from_json(r#"{"kind": "rosenbrock"}"#).unwrap().build().is_err());
    }
}
