//! The joint value + derivative objective, Adam, and the shared training loop.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::filters::{DerivativeUnits, FilterKind};
use crate::grid::Grid2D;
use crate::math;
use crate::network::{
    backward_trace, forward, forward_trace, ActivationKind, DualBatch, MlpParams,
};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchSize {
    /// Every training sample in every step.
    Full,
    Samples(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Weight of the derivative term.
    pub lambda: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: BatchSize,
    pub seed: u64,
    pub activation: ActivationKind,
    pub omega0: f64,
    pub use_positional_encoding: bool,
    /// When false no tangents are built at all.
    pub use_sobolev: bool,
    pub filter: FilterKind,
    pub units: DerivativeUnits,
    /// Log every this many iterations; 0 disables logging.
    pub log_interval: usize,
    /// Peak-to-peak signal range used for the logged PSNR.
    pub value_range: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1.0,
            learning_rate: 1e-4,
            iterations: 50_000,
            batch_size: BatchSize::Full,
            seed: 0,
            activation: ActivationKind::Sine,
            omega0: 30.0,
            use_positional_encoding: false,
            use_sobolev: true,
            filter: FilterKind::Sobel,
            units: DerivativeUnits::Normalized,
            log_interval: 100,
            value_range: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(
                "lambda must be a finite non-negative number",
            ));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(
                "learning rate must be a finite non-negative number",
            ));
        }
        if let BatchSize::Samples(0) = self.batch_size {
            return Err(Error::invalid("batch size must be positive"));
        }
        Ok(())
    }
}

/// Training triples `(x_i, g(x_i), D_x g(x_i))` plus the train/eval split.
///
/// `derivs` is `N x (D*C)`; column `d*C + c` is the partial of channel `c`
/// along coordinate axis `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    pub coords: Grid2D,
    pub values: Grid2D,
    pub derivs: Option<Grid2D>,
    pub train_mask: Vec<bool>,
}

impl SampledSignal {
    pub fn len(&self) -> usize {
        self.coords.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.coords.cols()
    }

    pub fn channels(&self) -> usize {
        self.values.cols()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.train_mask[i]).collect()
    }

    pub fn eval_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.train_mask[i]).collect()
    }

    pub fn validate(&self, need_derivs: bool) -> Result<()> {
        let n = self.len();
        let ok_vals = self.values.rows() == n && self.train_mask.len() == n;
        let ok_derivs = match &self.derivs {
            Some(d) => d.rows() == n && d.cols() == self.dim() * self.channels(),
            None => !need_derivs,
        };
        if !ok_vals || !ok_derivs {
            return Err(Error::invalid(
                "sampled signal: coords, values, derivs and mask must share N (derivs required for Sobolev training)",
            ));
        }
        Ok(())
    }

    /// Derivative targets of rows `idx`, split per axis as `batch x C` grids.
    pub fn deriv_targets(&self, idx: &[usize]) -> Option<Vec<Grid2D>> {
        let d = self.derivs.as_ref()?;
        let c = self.channels();
        Some(
            (0..self.dim())
                .map(|axis| {
                    let mut g = Grid2D::zeros(idx.len(), c, 1);
                    for (r, &i) in idx.iter().enumerate() {
                        g.row_mut(r)
                            .copy_from_slice(&d.row(i)[axis * c..(axis + 1) * c]);
                    }
                    g
                })
                .collect(),
        )
    }
}

/// Loss value and its adjoints with respect to the network outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SobolevLoss {
    pub loss: f64,
    pub value_loss: f64,
    pub deriv_loss: f64,
    pub value_residual: Grid2D,
    pub tangent_residuals: Vec<Grid2D>,
}

/// `mean_i |g_i - f_i|^2 + lambda * mean_i |Dg_i - Df_i|^2`, squared norms
/// summed over channels and (for the derivative term) over every partial.
/// Residuals are the exact derivatives of this loss, factor 2 included.
pub fn sobolev_loss(
    pred: &DualBatch,
    target_values: &Grid2D,
    target_derivs: &[Grid2D],
    lambda: f64,
) -> Result<SobolevLoss> {
    pred.primal
        .check_same("sobolev_loss values", target_values)?;
    if target_derivs.len() != pred.tangents.len() {
        return Err(Error::invalid(alloc::format!(
            "sobolev_loss: {} derivative targets for {} tangent directions",
            target_derivs.len(),
            pred.tangents.len()
        )));
    }
    let n = pred.batch();
    if n == 0 {
        return Err(Error::invalid("sobolev_loss: empty batch"));
    }
    let inv_n = 1.0 / n as f64;
    let mut value_residual = Grid2D::zeros(n, pred.primal.cols(), 1);
    let mut value_sum = 0.0;
    for ((r, &f), &g) in value_residual
        .data_mut()
        .iter_mut()
        .zip(pred.primal.data())
        .zip(target_values.data())
    {
        let e = f - g;
        value_sum += e * e;
        *r = 2.0 * e * inv_n;
    }
    let mut deriv_sum = 0.0;
    let mut tangent_residuals = Vec::with_capacity(target_derivs.len());
    for (t, target) in pred.tangents.iter().zip(target_derivs) {
        t.check_same("sobolev_loss derivatives", target)?;
        let mut res = Grid2D::zeros(n, t.cols(), 1);
        for ((r, &f), &g) in res.data_mut().iter_mut().zip(t.data()).zip(target.data()) {
            let e = f - g;
            deriv_sum += e * e;
            *r = 2.0 * lambda * e * inv_n;
        }
        tangent_residuals.push(res);
    }
    let value_loss = value_sum * inv_n;
    let deriv_loss = deriv_sum * inv_n;
    Ok(SobolevLoss {
        loss: value_loss + lambda * deriv_loss,
        value_loss,
        deriv_loss,
        value_residual,
        tangent_residuals,
    })
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().map(|t| vec![0.0; t.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpParams, lr: f64) -> Result<()> {
        if !params.same_shape(grads) || self.m.len() != params.tensors().count() {
            return Err(Error::invalid(
                "adam_step: gradient shape does not match parameters",
            ));
        }
        self.t += 1;
        let bc1 = 1.0 - math::powi(ADAM_BETA1, self.t as i32);
        let bc2 = 1.0 - math::powi(ADAM_BETA2, self.t as i32);
        for (((theta, g), m), v) in params
            .tensors_mut()
            .zip(grads.tensors())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for i in 0..theta.len() {
                let gi = g[i];
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] -= lr * m_hat / (math::sqrt(v_hat) + ADAM_EPS);
            }
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(
    state: &mut AdamState,
    params: &MlpParams,
    grads: &MlpParams,
    lr: f64,
) -> Result<MlpParams> {
    let mut next = params.clone();
    state.step(&mut next, grads, lr)?;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub iteration: usize,
    pub loss_val: f64,
    pub loss_der: f64,
    pub psnr_eval: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: MlpParams,
    pub log: Vec<LogEntry>,
    /// Value term on the full training split after the last update.
    pub final_value_loss: f64,
    /// Derivative term on the full training split after the last update
    /// (zero when Sobolev training is off).
    pub final_deriv_loss: f64,
}

/// PSNR over arbitrary samples for a signal of the given peak-to-peak range.
pub fn psnr_from_mse(mse: f64, range: f64) -> f64 {
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        10.0 * math::log10(range * range / mse)
    }
}

struct Batch {
    inputs: Grid2D,
    seeds: Vec<Grid2D>,
    values: Grid2D,
    derivs: Vec<Grid2D>,
}

fn make_batch(
    params: &MlpParams,
    data: &SampledSignal,
    idx: &[usize],
    sobolev: bool,
) -> Result<Batch> {
    let coords = data.coords.gather_rows(idx);
    let values = data.values.gather_rows(idx);
    if sobolev {
        let (inputs, seeds) = params.prepare_inputs(&coords)?;
        let derivs = data
            .deriv_targets(idx)
            .ok_or_else(|| Error::invalid("Sobolev training needs derivative targets"))?;
        Ok(Batch {
            inputs,
            seeds,
            values,
            derivs,
        })
    } else {
        Ok(Batch {
            inputs: params.prepare_values(&coords)?,
            seeds: Vec::new(),
            values,
            derivs: Vec::new(),
        })
    }
}

/// Loss on a prepared batch without a parameter update.
fn batch_loss(params: &MlpParams, batch: &Batch, lambda: f64) -> Result<SobolevLoss> {
    let (pred, _) = forward_trace(params, &batch.inputs, &batch.seeds)?;
    sobolev_loss(&pred, &batch.values, &batch.derivs, lambda)
}

fn eval_psnr(
    params: &MlpParams,
    data: &SampledSignal,
    eval_idx: &[usize],
    range: f64,
) -> Result<f64> {
    if eval_idx.is_empty() {
        return Ok(f64::NAN);
    }
    let inputs = params.prepare_values(&data.coords.gather_rows(eval_idx))?;
    let pred = forward(params, &inputs)?;
    let target = data.values.gather_rows(eval_idx);
    let mse = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / pred.len() as f64;
    Ok(psnr_from_mse(mse, range))
}

/// Reports a non-finite intermediate as divergence at `iteration`.
pub(crate) fn diverged_at(e: Error, iteration: usize) -> Error {
    match e {
        Error::NonFinite(_) => Error::Diverged {
            iteration,
            loss: f64::INFINITY,
        },
        e => e,
    }
}

/// Minimizes the joint loss over the training split with Adam.
pub fn train(
    config: &TrainConfig,
    data: &SampledSignal,
    params: MlpParams,
) -> Result<TrainOutcome> {
    config.validate()?;
    data.validate(config.use_sobolev)?;
    let train_idx = data.train_indices();
    if train_idx.is_empty() {
        return Err(Error::invalid("train: the training split is empty"));
    }
    let eval_idx = data.eval_indices();
    let sobolev = config.use_sobolev;
    let lambda = if sobolev { config.lambda } else { 0.0 };
    let mut params = params;
    let mut adam = AdamState::new(&params);
    let mut rng = Rng::new(config.seed);
    let mut log = Vec::new();

    let full = make_batch(&params, data, &train_idx, sobolev)?;
    let mut order = train_idx.clone();
    let mut cursor = order.len();

    for it in 1..=config.iterations {
        let owned;
        let batch = match config.batch_size {
            BatchSize::Full => &full,
            BatchSize::Samples(bs) if bs >= train_idx.len() => &full,
            BatchSize::Samples(bs) => {
                if cursor >= order.len() {
                    rng.shuffle(&mut order);
                    cursor = 0;
                }
                let end = (cursor + bs).min(order.len());
                owned = make_batch(&params, data, &order[cursor..end], sobolev)?;
                cursor = end;
                &owned
            }
        };
        let (pred, trace) =
            forward_trace(&params, &batch.inputs, &batch.seeds).map_err(|e| diverged_at(e, it))?;
        let loss = sobolev_loss(&pred, &batch.values, &batch.derivs, lambda)
            .map_err(|e| diverged_at(e, it))?;
        if !loss.loss.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                loss: loss.loss,
            });
        }
        let grad = backward_trace(
            &params,
            &trace,
            &batch.inputs,
            &batch.seeds,
            &loss.value_residual,
            &loss.tangent_residuals,
        )
        .map_err(|e| diverged_at(e, it))?;
        adam.step(&mut params, &grad, config.learning_rate)?;
        if !params.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                loss: loss.loss,
            });
        }
        if config.log_interval > 0 && it % config.log_interval == 0 {
            log.push(LogEntry {
                iteration: it,
                loss_val: loss.value_loss,
                loss_der: loss.deriv_loss,
                psnr_eval: eval_psnr(&params, data, &eval_idx, config.value_range)
                    .map_err(|e| diverged_at(e, it))?,
            });
        }
    }
    let last = batch_loss(&params, &full, lambda).map_err(|e| diverged_at(e, config.iterations))?;
    if !last.loss.is_finite() {
        return Err(Error::Diverged {
            iteration: config.iterations,
            loss: last.loss,
        });
    }
    Ok(TrainOutcome {
        params,
        log,
        final_value_loss: last.value_loss,
        final_deriv_loss: last.deriv_loss,
    })
}
