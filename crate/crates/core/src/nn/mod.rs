//! A small fully-connected classifier with optional batch normalization.
//!
//! Parameters live in one flat [`ParamVector`] whose [`Layout`] names every
//! tensor, so group masks (batch-norm vs the rest) are derived from names
//! rather than hand-written index ranges.

mod data;
mod io;
mod landscape;
mod net;
mod train;

pub use data::{Batch, Dataset, DatasetConfig, Generator};
pub use io::{encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, HEADER_FILE, PARAMS_FILE};
pub use landscape::{NetLandscape, Split};
pub use net::{
    backward, evaluate, forward, gradient_check, init_params, normalized_activations, recompute_bn_stats, BnState, EvalMetrics,
    ForwardOutput, GradientCheck, Mode, REL_ERROR_FLOOR,
};
pub use train::{
    average_params, train, train_from, EpochMetrics, LrSchedule, SwaConfig, SwaGroup, TrainConfig,
    TrainResult,
};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;

/// Default batch-norm variance floor.
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// Input width, hidden widths, class count.
    pub widths: Vec<usize>,
    /// One flag per hidden layer.
    pub batch_norm: Vec<bool>,
    pub bn_eps: f64,
    pub activation: Activation,
}

impl Architecture {
    pub fn new(widths: Vec<usize>, batch_norm: Vec<bool>) -> Result<Self> {
        let arch = Self {
            widths,
            batch_norm,
            bn_eps: BN_EPS,
            activation: Activation::Relu,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// `widths` with batch norm on every hidden layer.
    pub fn mlp(widths: &[usize], bn: bool) -> Result<Self> {
        let hidden = widths.len().saturating_sub(2);
        Self::new(widths.to_vec(), vec![bn; hidden])
    }

    /// Parses `"2-16-16-2"`, with an optional `+bn` suffix.
    pub fn parse(spec: &str) -> Result<Self> {
        let (body, bn) = match spec.strip_suffix("+bn") {
            Some(b) => (b, true),
            None => (spec, false),
        };
        let widths = body
            .split('-')
            .map(|w| w.trim().parse::<usize>().map_err(|_| invalid("arch", format!("bad width in `{spec}`"))))
            .collect::<Result<Vec<_>>>()?;
        Self::mlp(&widths, bn)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(invalid("arch", "need at least input and output widths"));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(invalid("arch", "widths must be positive"));
        }
        if *self.widths.last().unwrap() < 2 {
            return Err(invalid("arch", "need at least two classes"));
        }
        if self.batch_norm.len() != self.widths.len() - 2 {
            return Err(invalid("arch", "one batch-norm flag per hidden layer"));
        }
        if !(self.bn_eps > 0.0) {
            return Err(invalid("arch", "bn_eps must be positive"));
        }
        Ok(())
    }

    pub fn hidden_layers(&self) -> usize {
        self.widths.len() - 2
    }

    pub fn has_bn(&self) -> bool {
        self.batch_norm.iter().any(|&b| b)
    }

    /// Layers followed by batch norm carry no linear bias; the shift `beta`
    /// takes its place.
    pub fn layout(&self) -> Layout {
        let mut spans = Vec::new();
        let mut start = 0;
        let mut push = |name: String, kind: TensorKind, layer: usize, shape: (usize, usize)| {
            let len = shape.0 * shape.1;
            spans.push(Span {
                name,
                kind,
                layer,
                start,
                len,
                shape,
            });
            start += len;
        };
        let layers = self.widths.len() - 1;
        for l in 0..layers {
            let (fan_in, out) = (self.widths[l], self.widths[l + 1]);
            push(format!("layer{l}.weight"), TensorKind::Weight, l, (out, fan_in));
            let bn = l < self.hidden_layers() && self.batch_norm[l];
            if bn {
                push(format!("layer{l}.bn_scale"), TensorKind::BnScale, l, (1, out));
                push(format!("layer{l}.bn_shift"), TensorKind::BnShift, l, (1, out));
            } else {
                push(format!("layer{l}.bias"), TensorKind::Bias, l, (1, out));
            }
        }
        Layout { spans }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TensorKind {
    Weight,
    Bias,
    BnScale,
    BnShift,
}

impl TensorKind {
    pub fn is_bn(self) -> bool {
        matches!(self, TensorKind::BnScale | TensorKind::BnShift)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub name: String,
    pub kind: TensorKind,
    pub layer: usize,
    pub start: usize,
    pub len: usize,
    /// `(rows, cols)`; row-major.
    pub shape: (usize, usize),
}

impl Span {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Named, contiguous, disjoint tensor ranges covering the flat vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub spans: Vec<Span>,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.spans.last().map_or(0, |s| s.start + s.len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn span(&self, kind: TensorKind, layer: usize) -> Option<&Span> {
        self.spans.iter().find(|s| s.kind == kind && s.layer == layer)
    }

    /// Checks the spans tile `0..len` in order.
    pub fn validate(&self) -> Result<()> {
        let mut next = 0;
        for s in &self.spans {
            if s.start != next || s.len != s.shape.0 * s.shape.1 {
                return Err(Error::LayoutMismatch(format!("span `{}` is not contiguous", s.name)));
            }
            next += s.len;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub layout: Layout,
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn new(layout: Layout, values: Vec<f64>) -> Result<Self> {
        layout.validate()?;
        if values.len() != layout.len() {
            return Err(Error::LayoutMismatch(format!(
                "{} values for a layout of {}",
                values.len(),
                layout.len()
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn zeros(layout: Layout) -> Self {
        let n = layout.len();
        Self {
            layout,
            values: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tensor(&self, kind: TensorKind, layer: usize) -> Option<&[f64]> {
        self.layout.span(kind, layer).map(|s| &self.values[s.range()])
    }

    pub fn ensure_same_layout(&self, other: &ParamVector) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::LayoutMismatch("parameter vectors differ in layout".into()));
        }
        Ok(())
    }

    /// `self + t * direction`.
    pub fn moved(&self, direction: &[f64], t: f64) -> Self {
        let values = self.values.iter().zip(direction).map(|(a, b)| a + t * b).collect();
        Self {
            layout: self.layout.clone(),
            values,
        }
    }
}

/// Boolean selection over a layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamGroupMask {
    pub bits: Vec<bool>,
}

impl ParamGroupMask {
    pub fn full(layout: &Layout) -> Self {
        Self {
            bits: vec![true; layout.len()],
        }
    }

    fn by_kind(layout: &Layout, bn: bool) -> Self {
        let mut bits = vec![false; layout.len()];
        for s in layout.spans.iter().filter(|s| s.kind.is_bn() == bn) {
            bits[s.range()].iter_mut().for_each(|b| *b = true);
        }
        Self { bits }
    }

    /// Batch-norm scales and shifts.
    pub fn bn(layout: &Layout) -> Self {
        Self::by_kind(layout, true)
    }

    pub fn non_bn(layout: &Layout) -> Self {
        Self::by_kind(layout, false)
    }

    /// A seeded random subset of the non-BN coordinates with as many entries
    /// as the BN group.
    pub fn matched_non_bn(layout: &Layout, seed: u64) -> Result<Self> {
        let bn = Self::bn(layout).count();
        let pool: Vec<usize> = Self::non_bn(layout)
            .bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect();
        if bn == 0 {
            return Err(Error::EmptyMask);
        }
        if bn > pool.len() {
            return Err(invalid("mask", "BN group larger than the non-BN group"));
        }
        let mut bits = vec![false; layout.len()];
        let mut rng = rng::seeded(seed);
        for i in index::sample(&mut rng, pool.len(), bn) {
            bits[pool[i]] = true;
        }
        Ok(Self { bits })
    }

    pub fn complement(&self) -> Self {
        Self {
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_tiles_and_counts() {
        let arch = Architecture::parse("2-16-16-2+bn").unwrap();
        let layout = arch.layout();
        layout.validate().unwrap();
        // 2*16 + 2*16 + 16*16 + 2*16 + 16*2 + 2
        assert_eq!(layout.len(), 32 + 32 + 256 + 32 + 32 + 2);
        let plain = Architecture::parse("2-16-16-2").unwrap().layout();
        assert_eq!(plain.len(), 32 + 16 + 256 + 16 + 32 + 2);
    }

    #[test]
    fn masks_partition() {
        let layout = Architecture::parse("2-16-16-2+bn").unwrap().layout();
        let bn = ParamGroupMask::bn(&layout);
        let rest = ParamGroupMask::non_bn(&layout);
        assert_eq!(bn.count(), 64);
        assert_eq!(bn.count() + rest.count(), layout.len());
        assert!(bn.bits.iter().zip(&rest.bits).all(|(a, b)| a ^ b));
        assert_eq!(rest, bn.complement());
        let matched = ParamGroupMask::matched_non_bn(&layout, 3).unwrap();
        assert_eq!(matched.count(), 64);
        assert!(matched.bits.iter().zip(&bn.bits).all(|(m, b)| !(*m && *b)));
        assert_eq!(matched, ParamGroupMask::matched_non_bn(&layout, 3).unwrap());
        let plain = Architecture::parse("2-4-2").unwrap().layout();
        assert!(matches!(ParamGroupMask::matched_non_bn(&plain, 1), Err(Error::EmptyMask)));
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(Architecture::parse("2-x-2").is_err());
        assert!(Architecture::parse("2").is_err());
        assert!(Architecture::parse("2-0-2").is_err());
    }
}
