use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Architecture, Batch, ParamVector, TensorKind};
use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::stats::MeanEstimate;

/// Per-hidden-layer batch-norm statistics; empty vectors for layers
/// without batch norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnState {
    pub mean: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
}

impl BnState {
    /// Zero mean, unit variance.
    pub fn initial(arch: &Architecture) -> Self {
        let (mut mean, mut var) = (Vec::new(), Vec::new());
        for l in 0..arch.hidden_layers() {
            let n = if arch.batch_norm[l] { arch.widths[l + 1] } else { 0 };
            mean.push(vec![0.0; n]);
            var.push(vec![1.0; n]);
        }
        Self { mean, var }
    }

    /// `self = (1 - momentum) self + momentum batch`.
    pub fn update(&mut self, batch: &BnState, momentum: f64) {
        for (run, new) in self.mean.iter_mut().zip(&batch.mean).chain(self.var.iter_mut().zip(&batch.var)) {
            for (r, b) in run.iter_mut().zip(new) {
                *r = (1.0 - momentum) * *r + momentum * b;
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Mode<'a> {
    /// Batch statistics; needs at least two examples when any layer has BN.
    Train,
    /// Fixed statistics.
    Eval(&'a BnState),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    pub per_example: Vec<f64>,
    /// Row-major `n x classes`.
    pub logits: Vec<f64>,
    /// Batch statistics (train mode only).
    pub batch_stats: Option<BnState>,
}

impl ForwardOutput {
    pub fn predictions(&self, classes: usize) -> Vec<usize> {
        self.logits
            .chunks(classes)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
                    .0
            })
            .collect()
    }
}

struct HiddenCache {
    input: Vec<f64>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    /// Pre-activation after the optional normalization.
    pre: Vec<f64>,
}

struct Tape {
    hidden: Vec<HiddenCache>,
    last_input: Vec<f64>,
}

impl Tape {
    fn relu_pattern(&self) -> Vec<bool> {
        self.hidden.iter().flat_map(|h| h.pre.iter().map(|&v| v > 0.0)).collect()
    }
}

/// Seeded uniform fan-in initialization: hidden weights in
/// `±sqrt(6 / fan_in)`, output weights in `±sqrt(1 / fan_in)`, zero biases
/// and shifts, unit scales.
pub fn init_params(arch: &Architecture, seed: u64) -> ParamVector {
    let layout = arch.layout();
    let mut values = vec![0.0; layout.len()];
    let mut rng = rng::seeded(seed);
    let last = arch.widths.len() - 2;
    for span in &layout.spans {
        match span.kind {
            TensorKind::Weight => {
                let fan_in = span.shape.1 as f64;
                let bound = if span.layer == last { (1.0 / fan_in).sqrt() } else { (6.0 / fan_in).sqrt() };
                for v in &mut values[span.range()] {
                    *v = bound * (2.0 * rng.random::<f64>() - 1.0);
                }
            }
            TensorKind::BnScale => values[span.range()].iter_mut().for_each(|v| *v = 1.0),
            TensorKind::Bias | TensorKind::BnShift => {}
        }
    }
    ParamVector { layout, values }
}

fn check_inputs(arch: &Architecture, params: &ParamVector, batch: &Batch, mode: Mode) -> Result<()> {
    if params.layout != arch.layout() {
        return Err(Error::LayoutMismatch("parameters do not match the architecture".into()));
    }
    if batch.is_empty() {
        return Err(invalid("batch", "must be non-empty"));
    }
    if batch.input_dim != arch.widths[0] {
        return Err(invalid("batch", "input width differs from the architecture"));
    }
    let classes = *arch.widths.last().unwrap();
    if batch.labels.iter().any(|&y| y >= classes) {
        return Err(invalid("batch", "label out of range"));
    }
    if matches!(mode, Mode::Train) && arch.has_bn() && batch.len() < 2 {
        return Err(Error::BatchTooSmall(batch.len()));
    }
    Ok(())
}

/// `out[i][o] = sum_k a[i][k] w[o][k] (+ b[o])`.
fn linear(a: &[f64], n: usize, fan_in: usize, w: &[f64], b: Option<&[f64]>, out_dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * out_dim];
    for i in 0..n {
        let row = &a[i * fan_in..(i + 1) * fan_in];
        for o in 0..out_dim {
            let wr = &w[o * fan_in..(o + 1) * fan_in];
            let mut s = b.map_or(0.0, |b| b[o]);
            for k in 0..fan_in {
                s += row[k] * wr[k];
            }
            out[i * out_dim + o] = s;
        }
    }
    out
}

fn forward_tape(arch: &Architecture, params: &ParamVector, batch: &Batch, mode: Mode) -> Result<(ForwardOutput, Tape)> {
    check_inputs(arch, params, batch, mode)?;
    let n = batch.len();
    let mut a = batch.inputs.clone();
    let mut hidden = Vec::with_capacity(arch.hidden_layers());
    let mut stats = BnState::initial(arch);
    for l in 0..arch.hidden_layers() {
        let (fan_in, out) = (arch.widths[l], arch.widths[l + 1]);
        let w = params.tensor(TensorKind::Weight, l).expect("layout checked");
        let bn = arch.batch_norm[l];
        let z = linear(&a, n, fan_in, w, params.tensor(TensorKind::Bias, l), out);
        let (xhat, inv_std, pre) = if bn {
            let (mean, var) = match mode {
                Mode::Train => {
                    let mut mean = vec![0.0; out];
                    let mut var = vec![0.0; out];
                    for i in 0..n {
                        for o in 0..out {
                            mean[o] += z[i * out + o];
                        }
                    }
                    mean.iter_mut().for_each(|m| *m /= n as f64);
                    for i in 0..n {
                        for o in 0..out {
                            let d = z[i * out + o] - mean[o];
                            var[o] += d * d;
                        }
                    }
                    var.iter_mut().for_each(|v| *v /= n as f64);
                    stats.mean[l] = mean.clone();
                    stats.var[l] = var.clone();
                    (mean, var)
                }
                Mode::Eval(state) => {
                    if state.mean.len() != arch.hidden_layers() || state.mean[l].len() != out {
                        return Err(Error::LayoutMismatch("BN statistics do not match the architecture".into()));
                    }
                    (state.mean[l].clone(), state.var[l].clone())
                }
            };
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + arch.bn_eps).sqrt()).collect();
            let gamma = params.tensor(TensorKind::BnScale, l).expect("layout checked");
            let beta = params.tensor(TensorKind::BnShift, l).expect("layout checked");
            let mut xhat = vec![0.0; n * out];
            let mut pre = vec![0.0; n * out];
            for i in 0..n {
                for o in 0..out {
                    let x = (z[i * out + o] - mean[o]) * inv_std[o];
                    xhat[i * out + o] = x;
                    pre[i * out + o] = gamma[o] * x + beta[o];
                }
            }
            (xhat, inv_std, pre)
        } else {
            (Vec::new(), Vec::new(), z)
        };
        let next: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
        hidden.push(HiddenCache {
            input: std::mem::replace(&mut a, next),
            xhat,
            inv_std,
            pre,
        });
    }
    let last = arch.widths.len() - 2;
    let (fan_in, classes) = (arch.widths[last], arch.widths[last + 1]);
    let logits = linear(
        &a,
        n,
        fan_in,
        params.tensor(TensorKind::Weight, last).expect("layout checked"),
        params.tensor(TensorKind::Bias, last),
        classes,
    );
    let per_example: Vec<f64> = logits
        .chunks(classes)
        .zip(&batch.labels)
        .map(|(row, &y)| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - row[y]
        })
        .collect();
    let loss = per_example.iter().sum::<f64>() / n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("activation"));
    }
    let out = ForwardOutput {
        loss,
        per_example,
        logits,
        batch_stats: matches!(mode, Mode::Train).then_some(stats),
    };
    Ok((out, Tape { hidden, last_input: a }))
}

/// Mean softmax cross-entropy and outputs.
pub fn forward(arch: &Architecture, params: &ParamVector, batch: &Batch, mode: Mode) -> Result<ForwardOutput> {
    forward_tape(arch, params, batch, mode).map(|r| r.0)
}

/// Exact reverse-mode gradient of the mean loss; in train mode the batch
/// statistics are differentiated through.
pub fn backward(
    arch: &Architecture,
    params: &ParamVector,
    batch: &Batch,
    mode: Mode,
) -> Result<(ForwardOutput, ParamVector)> {
    let (out, tape) = forward_tape(arch, params, batch, mode)?;
    let n = batch.len();
    let mut grad = ParamVector::zeros(params.layout.clone());
    let last = arch.widths.len() - 2;
    let classes = arch.widths[last + 1];
    let inv_n = 1.0 / n as f64;

    // d loss / d logits = (softmax - onehot) / n
    let mut delta = vec![0.0; n * classes];
    for (i, row) in out.logits.chunks(classes).enumerate() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
        for c in 0..classes {
            let p = (row[c] - m).exp() / s;
            delta[i * classes + c] = (p - if batch.labels[i] == c { 1.0 } else { 0.0 }) * inv_n;
        }
    }

    let mut input = &tape.last_input;
    let mut layer = last;
    let mut out_dim = classes;
    loop {
        let fan_in = arch.widths[layer];
        let wspan = params.layout.span(TensorKind::Weight, layer).expect("layout checked").clone();
        let w = &params.values[wspan.range()];
        {
            let gw = &mut grad.values[wspan.range()];
            for i in 0..n {
                for o in 0..out_dim {
                    let d = delta[i * out_dim + o];
                    if d != 0.0 {
                        for k in 0..fan_in {
                            gw[o * fan_in + k] += d * input[i * fan_in + k];
                        }
                    }
                }
            }
        }
        if let Some(bspan) = params.layout.span(TensorKind::Bias, layer) {
            let gb = &mut grad.values[bspan.range()];
            for i in 0..n {
                for o in 0..out_dim {
                    gb[o] += delta[i * out_dim + o];
                }
            }
        }
        if layer == 0 {
            break;
        }
        // back through the weights into the previous hidden layer
        let mut da = vec![0.0; n * fan_in];
        for i in 0..n {
            for o in 0..out_dim {
                let d = delta[i * out_dim + o];
                if d != 0.0 {
                    for k in 0..fan_in {
                        da[i * fan_in + k] += d * w[o * fan_in + k];
                    }
                }
            }
        }
        layer -= 1;
        out_dim = fan_in;
        let cache = &tape.hidden[layer];
        let mut dpre = da;
        for (d, &p) in dpre.iter_mut().zip(&cache.pre) {
            if p <= 0.0 {
                *d = 0.0;
            }
        }
        delta = if arch.batch_norm[layer] {
            let gamma = params.tensor(TensorKind::BnScale, layer).expect("layout checked");
            let sspan = params.layout.span(TensorKind::BnScale, layer).unwrap().range();
            let tspan = params.layout.span(TensorKind::BnShift, layer).unwrap().range();
            let mut dgamma = vec![0.0; out_dim];
            let mut dbeta = vec![0.0; out_dim];
            for i in 0..n {
                for o in 0..out_dim {
                    dgamma[o] += dpre[i * out_dim + o] * cache.xhat[i * out_dim + o];
                    dbeta[o] += dpre[i * out_dim + o];
                }
            }
            let mut dz = vec![0.0; n * out_dim];
            match mode {
                Mode::Train => {
                    // dz = inv_std / n * (n dxhat - sum dxhat - xhat sum(dxhat xhat))
                    for o in 0..out_dim {
                        let (sum_d, sum_dx) = (gamma[o] * dbeta[o], gamma[o] * dgamma[o]);
                        for i in 0..n {
                            let dx = gamma[o] * dpre[i * out_dim + o];
                            dz[i * out_dim + o] = cache.inv_std[o] * inv_n
                                * (n as f64 * dx - sum_d - cache.xhat[i * out_dim + o] * sum_dx);
                        }
                    }
                }
                Mode::Eval(_) => {
                    for i in 0..n {
                        for o in 0..out_dim {
                            dz[i * out_dim + o] = gamma[o] * dpre[i * out_dim + o] * cache.inv_std[o];
                        }
                    }
                }
            }
            grad.values[sspan].copy_from_slice(&dgamma);
            grad.values[tspan].copy_from_slice(&dbeta);
            dz
        } else {
            dpre
        };
        input = &cache.input;
    }
    Ok((out, grad))
}

/// Train-mode normalized activations (before scale and shift) of every
/// batch-norm layer, row-major `n x width`.
pub fn normalized_activations(arch: &Architecture, params: &ParamVector, batch: &Batch) -> Result<Vec<Vec<f64>>> {
    let (_, tape) = forward_tape(arch, params, batch, Mode::Train)?;
    Ok(tape
        .hidden
        .into_iter()
        .zip(&arch.batch_norm)
        .filter(|(_, &bn)| bn)
        .map(|(h, _)| h.xhat)
        .collect())
}

/// Full-batch statistics of `data`; identical to what a train-mode pass
/// over the whole set normalizes with.
pub fn recompute_bn_stats(arch: &Architecture, params: &ParamVector, data: &Batch) -> Result<BnState> {
    if !arch.has_bn() {
        return Ok(BnState::initial(arch));
    }
    Ok(forward(arch, params, data, Mode::Train)?
        .batch_stats
        .expect("train mode returns statistics"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub loss: f64,
    pub loss_stderr: f64,
    pub accuracy: f64,
}

/// Eval-mode loss and accuracy of `params` on `data`.
pub fn evaluate(arch: &Architecture, params: &ParamVector, bn: &BnState, data: &Batch) -> Result<EvalMetrics> {
    let out = forward(arch, params, data, Mode::Eval(bn))?;
    let classes = *arch.widths.last().unwrap();
    let correct = out
        .predictions(classes)
        .iter()
        .zip(&data.labels)
        .filter(|(p, y)| p == y)
        .count();
    let est = MeanEstimate::from_samples(&out.per_example);
    Ok(EvalMetrics {
        loss: est.mean,
        loss_stderr: est.stderr,
        accuracy: correct as f64 / data.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
    /// Coordinates skipped because a rectifier changed sign within `±h`.
    pub skipped_kinks: usize,
}

/// Denominator floor for relative errors of near-zero gradient entries.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

/// Compares [`backward`] with central differences, step
/// `1e-5 * max(1, |theta_i|)`, over every coordinate.
pub fn gradient_check(arch: &Architecture, params: &ParamVector, batch: &Batch, mode: Mode) -> Result<GradientCheck> {
    let (_, grad) = backward(arch, params, batch, mode)?;
    let base = forward_tape(arch, params, batch, mode)?.1.relu_pattern();
    let mut report = GradientCheck {
        max_rel_error: 0.0,
        worst_index: 0,
        checked: 0,
        skipped_kinks: 0,
    };
    let mut probe = params.clone();
    for i in 0..params.len() {
        let theta = params.values[i];
        let h = 1e-5 * theta.abs().max(1.0);
        probe.values[i] = theta + h;
        let (plus, tp) = forward_tape(arch, &probe, batch, mode)?;
        probe.values[i] = theta - h;
        let (minus, tm) = forward_tape(arch, &probe, batch, mode)?;
        probe.values[i] = theta;
        if tp.relu_pattern() != base || tm.relu_pattern() != base {
            report.skipped_kinks += 1;
            continue;
        }
        let fd = (plus.loss - minus.loss) / (2.0 * h);
        let g = grad.values[i];
        let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(REL_ERROR_FLOOR);
        report.checked += 1;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Dataset, DatasetConfig};

    fn small_batch(n: usize, seed: u64) -> Batch {
        let d = Dataset::generate(DatasetConfig {
            n_train: n.max(2),
            n_heldout: 1,
            seed,
            ..Default::default()
        })
        .unwrap();
        d.train.select(&(0..n).collect::<Vec<_>>())
    }

    #[test]
    fn zero_weights_give_log_two() {
        let arch = Architecture::parse("2-16-16-2+bn").unwrap();
        let p = ParamVector::zeros(arch.layout());
        let out = forward(&arch, &p, &small_batch(8, 1), Mode::Train).unwrap();
        for l in out.per_example {
            assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_inputs_pass_beta_through() {
        let arch = Architecture::parse("2-3-2+bn").unwrap();
        let mut p = init_params(&arch, 2);
        let shift = p.layout.span(TensorKind::BnShift, 0).unwrap().range();
        p.values[shift.clone()].copy_from_slice(&[0.3, -0.2, 0.7]);
        let batch = Batch::new(vec![0.5, -1.0, 0.5, -1.0, 0.5, -1.0], vec![0, 1, 0], 2).unwrap();
        let (_, tape) = forward_tape(&arch, &p, &batch, Mode::Train).unwrap();
        for i in 0..3 {
            for (o, beta) in [0.3, -0.2, 0.7].iter().enumerate() {
                assert!(tape.hidden[0].xhat[i * 3 + o].abs() < 1e-12);
                assert!((tape.hidden[0].pre[i * 3 + o] - beta).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bn_training_needs_two_examples() {
        let arch = Architecture::parse("2-4-2+bn").unwrap();
        let p = init_params(&arch, 0);
        let b = small_batch(1, 0);
        assert!(matches!(forward(&arch, &p, &b, Mode::Train), Err(Error::BatchTooSmall(1))));
        let plain = Architecture::parse("2-4-2").unwrap();
        assert!(forward(&plain, &init_params(&plain, 0), &b, Mode::Train).is_ok());
    }

    #[test]
    fn beta_gradient_is_upstream_mean() {
        // With a single BN layer feeding a linear head, d loss / d beta_o is
        // the batch sum of the already 1/n-scaled upstream gradient.
        let arch = Architecture::parse("2-4-2+bn").unwrap();
        let p = init_params(&arch, 5);
        let batch = small_batch(8, 5);
        let (out, g) = backward(&arch, &p, &batch, Mode::Train).unwrap();
        let (_, tape) = forward_tape(&arch, &p, &batch, Mode::Train).unwrap();
        let w = p.tensor(TensorKind::Weight, 1).unwrap();
        let dbeta = g.tensor(TensorKind::BnShift, 0).unwrap();
        for o in 0..4 {
            let mut upstream = 0.0;
            for i in 0..8 {
                if tape.hidden[0].pre[i * 4 + o] <= 0.0 {
                    continue;
                }
                let row = &out.logits[i * 2..i * 2 + 2];
                let m = row[0].max(row[1]);
                let s = (row[0] - m).exp() + (row[1] - m).exp();
                for c in 0..2 {
                    let prob = (row[c] - m).exp() / s;
                    let y = if batch.labels[i] == c { 1.0 } else { 0.0 };
                    upstream += (prob - y) / 8.0 * w[c * 4 + o];
                }
            }
            assert!((dbeta[o] - upstream).abs() < 1e-14, "{o}: {} vs {upstream}", dbeta[o]);
        }
    }

    #[test]
    fn small_gradient_check() {
        let arch = Architecture::parse("2-5-4-2+bn").unwrap();
        let p = init_params(&arch, 11);
        let r = gradient_check(&arch, &p, &small_batch(8, 11), Mode::Train).unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");
        let bn = BnState::initial(&arch);
        let r = gradient_check(&arch, &p, &small_batch(8, 12), Mode::Eval(&bn)).unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }

    #[test]
    fn recomputed_stats_match_full_batch_train_mode() {
        let arch = Architecture::parse("2-8-2+bn").unwrap();
        let p = init_params(&arch, 3);
        let data = small_batch(32, 3);
        let bn = recompute_bn_stats(&arch, &p, &data).unwrap();
        let train = forward(&arch, &p, &data, Mode::Train).unwrap().loss;
        let eval = forward(&arch, &p, &data, Mode::Eval(&bn)).unwrap().loss;
        assert!((train - eval).abs() < 1e-14);
    }
}
