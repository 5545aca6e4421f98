use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::net::{backward, forward, recompute_bn_stats, BnState, Mode};
use super::{Architecture, Dataset, ParamGroupMask, ParamVector};
use crate::error::Result;
use crate::landscape::{dot, norm, Landscape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    /// The empirical loss: full training split in train mode, which equals
    /// eval mode with freshly recomputed statistics.
    Train,
    /// Held-out estimate of the population loss, eval mode.
    Heldout,
}

/// Relative parameter move beyond which held-out evaluation recomputes BN
/// statistics instead of reusing the anchor's.
pub const BN_RECOMPUTE_THRESHOLD: f64 = 1e-3;

/// A trained network viewed as a loss over its flat parameters.
pub struct NetLandscape<'a> {
    pub arch: Architecture,
    pub data: &'a Dataset,
    pub split: Split,
    anchor: Vec<f64>,
    anchor_bn: BnState,
    template: ParamVector,
    recomputes: AtomicUsize,
}

impl<'a> NetLandscape<'a> {
    /// `anchor` is the point whose statistics are reused nearby.
    pub fn new(arch: Architecture, data: &'a Dataset, split: Split, anchor: &ParamVector) -> Result<Self> {
        let anchor_bn = recompute_bn_stats(&arch, anchor, &data.train)?;
        Ok(Self {
            arch,
            data,
            split,
            anchor: anchor.values.clone(),
            anchor_bn,
            template: anchor.clone(),
            recomputes: AtomicUsize::new(0),
        })
    }

    /// Held-out evaluations that needed fresh statistics.
    pub fn recompute_events(&self) -> usize {
        self.recomputes.load(Ordering::Relaxed)
    }

    pub fn params(&self, x: &[f64]) -> ParamVector {
        ParamVector {
            layout: self.template.layout.clone(),
            values: x.to_vec(),
        }
    }

    pub fn bn_mask(&self) -> ParamGroupMask {
        ParamGroupMask::bn(&self.template.layout)
    }

    pub fn non_bn_mask(&self) -> ParamGroupMask {
        ParamGroupMask::non_bn(&self.template.layout)
    }

    fn stats_for(&self, p: &ParamVector) -> Result<BnState> {
        if !self.arch.has_bn() {
            return Ok(self.anchor_bn.clone());
        }
        let moved: Vec<f64> = p.values.iter().zip(&self.anchor).map(|(a, b)| a - b).collect();
        if norm(&moved) <= BN_RECOMPUTE_THRESHOLD * norm(&self.anchor).max(f64::MIN_POSITIVE) {
            Ok(self.anchor_bn.clone())
        } else {
            self.recomputes.fetch_add(1, Ordering::Relaxed);
            recompute_bn_stats(&self.arch, p, &self.data.train)
        }
    }

    pub fn try_loss(&self, x: &[f64]) -> Result<f64> {
        let p = self.params(x);
        match self.split {
            Split::Train if self.arch.has_bn() => Ok(forward(&self.arch, &p, &self.data.train, Mode::Train)?.loss),
            Split::Train => Ok(forward(&self.arch, &p, &self.data.train, Mode::Eval(&self.anchor_bn))?.loss),
            Split::Heldout => {
                let stats = self.stats_for(&p)?;
                Ok(forward(&self.arch, &p, &self.data.heldout, Mode::Eval(&stats))?.loss)
            }
        }
    }
}

impl Landscape for NetLandscape<'_> {
    fn dim(&self) -> usize {
        self.template.len()
    }

    /// Non-finite activations surface as `NaN`.
    fn loss(&self, x: &[f64]) -> f64 {
        self.try_loss(x).unwrap_or(f64::NAN)
    }

    fn directional_slope(&self, x: &[f64], u: &[f64]) -> Option<f64> {
        let p = self.params(x);
        let grad = match self.split {
            Split::Train if self.arch.has_bn() => backward(&self.arch, &p, &self.data.train, Mode::Train),
            Split::Train => backward(&self.arch, &p, &self.data.train, Mode::Eval(&self.anchor_bn)),
            // Recomputed statistics depend on x; no exact slope offered.
            Split::Heldout if self.arch.has_bn() => return None,
            Split::Heldout => backward(&self.arch, &p, &self.data.heldout, Mode::Eval(&self.anchor_bn)),
        };
        grad.ok().map(|(_, g)| dot(&g.values, u))
    }
}
