use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::net::{backward, evaluate, init_params, recompute_bn_stats, BnState, EvalMetrics, Mode};
use super::{Architecture, Dataset, ParamGroupMask, ParamVector};
use crate::error::{invalid, Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant { eta: f64 },
    /// `eta_max` for the first half of the pre-averaging epochs, linear decay
    /// to `eta_swa` by 90% of them, then `eta_swa`.
    SwaStyle { eta_max: f64, eta_swa: f64, swa_start: usize },
}

impl LrSchedule {
    /// Rate for 1-based `epoch`.
    pub fn at(&self, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Constant { eta } => eta,
            LrSchedule::SwaStyle {
                eta_max,
                eta_swa,
                swa_start,
            } => {
                let t = epoch.saturating_sub(1) as f64 / swa_start.max(1) as f64;
                if t <= 0.5 {
                    eta_max
                } else if t <= 0.9 {
                    eta_max + (eta_swa - eta_max) * (t - 0.5) / 0.4
                } else {
                    eta_swa
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            LrSchedule::Constant { eta } => eta > 0.0 && eta.is_finite(),
            LrSchedule::SwaStyle { eta_max, eta_swa, .. } => {
                eta_max > 0.0 && eta_swa > 0.0 && eta_max.is_finite() && eta_swa.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(invalid("eta", "learning rates must be positive and finite"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SwaGroup {
    All,
    Bn,
    /// Seeded non-BN subset with the BN group's size.
    NonBn,
}

impl std::str::FromStr for SwaGroup {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Self::All),
            "bn" => Ok(Self::Bn),
            "non-bn" => Ok(Self::NonBn),
            other => Err(invalid("swa_group", format!("unknown group `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwaConfig {
    /// First 1-based epoch whose end-of-epoch weights enter the average.
    pub start_epoch: usize,
    pub group: SwaGroup,
    pub mask_seed: u64,
}

impl SwaConfig {
    pub fn mask(&self, arch: &Architecture) -> Result<ParamGroupMask> {
        let layout = arch.layout();
        let mask = match self.group {
            SwaGroup::All => ParamGroupMask::full(&layout),
            SwaGroup::Bn => ParamGroupMask::bn(&layout),
            SwaGroup::NonBn => ParamGroupMask::matched_non_bn(&layout, self.mask_seed)?,
        };
        if mask.count() == 0 {
            return Err(Error::EmptyMask);
        }
        Ok(mask)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub seed: u64,
    pub swa: Option<SwaConfig>,
    pub bn_momentum: f64,
    /// Metrics are recorded every `eval_every` epochs and at the last one.
    pub eval_every: usize,
    /// Keep a copy of the weights every `snapshot_every` epochs.
    pub snapshot_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            schedule: LrSchedule::Constant { eta: 0.05 },
            seed: 0,
            swa: None,
            bn_momentum: 0.1,
            eval_every: 1,
            snapshot_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, data: &Dataset) -> Result<()> {
        self.schedule.validate()?;
        if self.batch_size == 0 || self.batch_size > data.train.len() {
            return Err(invalid("batch", "must be in 1..=n_train"));
        }
        if self.eval_every == 0 || self.snapshot_every == Some(0) {
            return Err(invalid("eval_every", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(invalid("bn_momentum", "must lie in [0, 1]"));
        }
        if let Some(swa) = &self.swa {
            if swa.start_epoch == 0 || swa.start_epoch >= self.epochs.max(1) {
                return Err(invalid("swa_start", "need 1 <= start < epochs"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train: EvalMetrics,
    pub heldout: EvalMetrics,
    pub swa_train: Option<EvalMetrics>,
    pub swa_heldout: Option<EvalMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub params: ParamVector,
    /// Running statistics maintained during training.
    pub bn: BnState,
    pub swa_params: Option<ParamVector>,
    /// Recomputed on the full training split.
    pub swa_bn: Option<BnState>,
    pub history: Vec<EpochMetrics>,
    pub snapshots: Vec<(usize, ParamVector)>,
    pub steps: usize,
}

/// Masked coordinates are the mean over `checkpoints`; the rest keep the
/// last checkpoint's values.
pub fn average_params(checkpoints: &[ParamVector], mask: &ParamGroupMask) -> Result<ParamVector> {
    let last = checkpoints
        .last()
        .ok_or_else(|| invalid("checkpoints", "need at least one"))?;
    if mask.bits.len() != last.len() {
        return Err(Error::LayoutMismatch("mask length differs from the layout".into()));
    }
    for c in checkpoints {
        c.ensure_same_layout(last)?;
    }
    let mut out = last.clone();
    let n = checkpoints.len() as f64;
    for (i, v) in out.values.iter_mut().enumerate() {
        if mask.bits[i] {
            *v = checkpoints.iter().fold(0.0, |s, c| s + c.values[i]) / n;
        }
    }
    Ok(out)
}

/// Mini-batch SGD from a seeded initialization.
pub fn train(arch: &Architecture, data: &Dataset, config: &TrainConfig) -> Result<TrainResult> {
    train_from(arch, data, config, None)
}

/// Mini-batch SGD (shuffled, incomplete last batch dropped) starting from
/// `init`, or from a seeded initialization.
pub fn train_from(
    arch: &Architecture,
    data: &Dataset,
    config: &TrainConfig,
    init: Option<(ParamVector, BnState)>,
) -> Result<TrainResult> {
    arch.validate()?;
    config.validate(data)?;
    let (mut params, mut bn) = match init {
        Some((p, b)) => {
            if p.layout != arch.layout() {
                return Err(Error::LayoutMismatch("initial parameters do not match the architecture".into()));
            }
            (p, b)
        }
        None => (init_params(arch, rng::mix(config.seed, 1)), BnState::initial(arch)),
    };
    let mask = config.swa.as_ref().map(|s| s.mask(arch)).transpose()?;
    let mut swa_sum: Option<Vec<f64>> = None;
    let mut swa_count = 0usize;
    let mut history = Vec::new();
    let mut snapshots = Vec::new();
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let batches = data.train.len() / config.batch_size;
    let mut step = 0;

    let swa_point = |params: &ParamVector, sum: &[f64], count: usize, mask: &ParamGroupMask| {
        let mut p = params.clone();
        for (i, v) in p.values.iter_mut().enumerate() {
            if mask.bits[i] {
                *v = sum[i] / count as f64;
            }
        }
        p
    };

    for epoch in 1..=config.epochs {
        let lr = config.schedule.at(epoch);
        order.shuffle(&mut rng::substream(rng::mix(config.seed, 2), epoch as u64));
        for b in 0..batches {
            let batch = data.train.select(&order[b * config.batch_size..(b + 1) * config.batch_size]);
            let (out, grad) = backward(arch, &params, &batch, Mode::Train).map_err(|e| match e {
                Error::NonFinite(_) => Error::Diverged { step, value: f64::NAN },
                other => other,
            })?;
            for (p, g) in params.values.iter_mut().zip(&grad.values) {
                *p -= lr * g;
            }
            if let Some(stats) = &out.batch_stats {
                bn.update(stats, config.bn_momentum);
            }
            if params.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { step, value: f64::INFINITY });
            }
            step += 1;
        }
        if let (Some(swa), Some(_)) = (&config.swa, &mask) {
            if epoch >= swa.start_epoch {
                let sum = swa_sum.get_or_insert_with(|| vec![0.0; params.len()]);
                sum.iter_mut().zip(&params.values).for_each(|(s, v)| *s += v);
                swa_count += 1;
            }
        }
        if let Some(every) = config.snapshot_every {
            if epoch % every == 0 {
                snapshots.push((epoch, params.clone()));
            }
        }
        if epoch % config.eval_every == 0 || epoch == config.epochs {
            let (swa_train, swa_heldout) = match (&swa_sum, &mask) {
                (Some(sum), Some(mask)) => {
                    let p = swa_point(&params, sum, swa_count, mask);
                    let stats = recompute_bn_stats(arch, &p, &data.train)?;
                    (
                        Some(evaluate(arch, &p, &stats, &data.train)?),
                        Some(evaluate(arch, &p, &stats, &data.heldout)?),
                    )
                }
                _ => (None, None),
            };
            history.push(EpochMetrics {
                epoch,
                lr,
                train: evaluate(arch, &params, &bn, &data.train)?,
                heldout: evaluate(arch, &params, &bn, &data.heldout)?,
                swa_train,
                swa_heldout,
            });
        }
    }
    let (swa_params, swa_bn) = match (&swa_sum, &mask) {
        (Some(sum), Some(mask)) => {
            let p = swa_point(&params, sum, swa_count, mask);
            let stats = recompute_bn_stats(arch, &p, &data.train)?;
            (Some(p), Some(stats))
        }
        _ => (None, None),
    };
    Ok(TrainResult {
        params,
        bn,
        swa_params,
        swa_bn,
        history,
        snapshots,
        steps: step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{DatasetConfig, Layout};

    fn vec_of(layout: &Layout, f: impl Fn(usize) -> f64) -> ParamVector {
        ParamVector {
            values: (0..layout.len()).map(f).collect(),
            layout: layout.clone(),
        }
    }

    #[test]
    fn averaging_identities() {
        let layout = Architecture::parse("2-4-2+bn").unwrap().layout();
        let v = vec_of(&layout, |i| i as f64 * 0.37 - 1.0);
        let neg = vec_of(&layout, |i| -(i as f64 * 0.37 - 1.0));
        let full = ParamGroupMask::full(&layout);
        assert_eq!(average_params(&[v.clone()], &full).unwrap(), v);
        assert!(average_params(&[v.clone(), neg.clone()], &full)
            .unwrap()
            .values
            .iter()
            .all(|&x| x == 0.0));
        let bn = ParamGroupMask::bn(&layout);
        let a = average_params(&[v.clone(), neg.clone()], &bn).unwrap();
        for i in 0..layout.len() {
            if !bn.bits[i] {
                assert_eq!(a.values[i], neg.values[i]);
            }
        }
        let other = Architecture::parse("2-5-2").unwrap().layout();
        assert!(average_params(&[v, ParamVector::zeros(other)], &full).is_err());
    }

    #[test]
    fn zero_epochs_is_identity_and_swa_window() {
        let arch = Architecture::parse("2-8-2+bn").unwrap();
        let data = Dataset::generate(DatasetConfig {
            n_train: 64,
            n_heldout: 64,
            ..Default::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let r = train(&arch, &data, &cfg).unwrap();
        assert_eq!(r.params, init_params(&arch, rng::mix(0, 1)));
        assert!(r.history.is_empty());

        let cfg = TrainConfig {
            epochs: 12,
            batch_size: 16,
            swa: Some(SwaConfig {
                start_epoch: 8,
                group: SwaGroup::All,
                mask_seed: 0,
            }),
            snapshot_every: Some(1),
            ..Default::default()
        };
        let r = train(&arch, &data, &cfg).unwrap();
        assert_eq!(r.history.len(), 12);
        assert!(r.history.iter().all(|h| h.swa_train.is_some() == (h.epoch >= 8)));
        let window: Vec<ParamVector> = r.snapshots.iter().filter(|s| s.0 >= 8).map(|s| s.1.clone()).collect();
        let expected = average_params(&window, &ParamGroupMask::full(&arch.layout())).unwrap();
        assert_eq!(r.swa_params.unwrap(), expected);
        let again = train(&arch, &data, &cfg).unwrap();
        assert_eq!(again.history, r.history);
    }

    #[test]
    fn schedule_shape() {
        let s = LrSchedule::SwaStyle {
            eta_max: 0.1,
            eta_swa: 0.01,
            swa_start: 100,
        };
        assert_eq!(s.at(1), 0.1);
        assert!((s.at(71) - 0.055).abs() < 1e-12);
        assert_eq!(s.at(150), 0.01);
    }
}
