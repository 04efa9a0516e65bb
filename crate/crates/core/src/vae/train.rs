use super::model::{draw_noise, free_energy, free_energy_with_grad, init_params, FreeEnergyReport, ModelParams};
use super::optim::{anneal_temperature, Adam};
use super::ModelConfig;
use crate::data::{Dataset, Split};
use crate::error::{invalid, Error, Result};
use crate::sampling::Rng;

/// Items per forward pass during evaluation.
const EVAL_CHUNK: usize = 500;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Adam step size `γ`.
    pub lr: f64,
    pub batch: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Validate after every this many iterations (and after the last one).
    pub valid_every: usize,
    /// Noise draws per item when evaluating.
    pub eval_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch: 100,
            iterations: 2000,
            seed: 0,
            valid_every: 100,
            eval_samples: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch == 0 || self.valid_every == 0 || self.eval_samples == 0 {
            return Err(invalid("batch, validation cadence and evaluation samples must be at least 1"));
        }
        Ok(())
    }
}

/// One line of the training history. Train rows average the minibatch
/// reports since the previous checkpoint; valid rows come from [`evaluate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryRow {
    pub split: Split,
    pub report: FreeEnergyReport,
}

/// Where and why a run stopped early.
#[derive(Clone, Debug, PartialEq)]
pub struct Divergence {
    pub iteration: usize,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Parameters with the smallest validation free energy seen.
    pub best: ModelParams,
    pub best_valid: Option<f64>,
    pub history: Vec<HistoryRow>,
    /// Set when a non-finite value ended the run; the history is partial.
    pub divergence: Option<Divergence>,
}

/// Average free energy over `split` at `T = T_min`, with `n_mc` noise draws per item.
pub fn evaluate(
    cfg: &ModelConfig,
    params: &ModelParams,
    data: &Dataset,
    split: Split,
    rng: &Rng,
    n_mc: usize,
) -> Result<FreeEnergyReport> {
    evaluate_indices(cfg, params, data, &data.indices(split), rng, n_mc)
}

fn evaluate_indices(
    cfg: &ModelConfig,
    params: &ModelParams,
    data: &Dataset,
    indices: &[usize],
    rng: &Rng,
    n_mc: usize,
) -> Result<FreeEnergyReport> {
    if indices.is_empty() || n_mc == 0 {
        return Err(invalid("nothing to evaluate"));
    }
    let mut rng = rng.clone();
    let (mut t1, mut t2) = (0.0, 0.0);
    for _ in 0..n_mc {
        for chunk in indices.chunks(EVAL_CHUNK) {
            let batch = data.batch(chunk);
            let noise = draw_noise(cfg, chunk.len(), &mut rng);
            let r = free_energy(cfg, params, &batch, &noise, cfg.t_min)?;
            t1 += r.term1 * chunk.len() as f64;
            t2 += r.term2 * chunk.len() as f64;
        }
    }
    let n = (indices.len() * n_mc) as f64;
    Ok(FreeEnergyReport::new(t1 / n, t2 / n, cfg.t_min, 0))
}

fn diverged(e: &Error) -> bool {
    matches!(e, Error::NonFinite { .. })
}

/// Minibatch SGVB with Adam, annealing `T` from `T_max` to `T_min` over the
/// first half of the run and keeping the parameters that validate best.
///
/// If the dataset has no validation items the training items are used.
pub fn train(cfg: &ModelConfig, tc: &TrainConfig, data: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    tc.validate()?;
    if data.dim() != cfg.input_dim {
        return Err(invalid(format!("data dimension {} differs from the model's {}", data.dim(), cfg.input_dim)));
    }
    let root = Rng::new(tc.seed);
    let params = init_params(cfg, &mut root.split(0))?;
    let mut out = TrainOutcome {
        best: params.clone(),
        params,
        best_valid: None,
        history: Vec::new(),
        divergence: None,
    };
    if tc.iterations == 0 {
        return Ok(out);
    }
    let train_idx = data.indices(Split::Train);
    if train_idx.is_empty() {
        return Err(invalid("no training items"));
    }
    let mut valid_idx = data.indices(Split::Valid);
    if valid_idx.is_empty() {
        valid_idx = train_idx.clone();
    }
    let mut order_rng = root.split(1);
    let mut noise_rng = root.split(2);
    let eval_rng = root.split(3);

    let validate = |params: &ModelParams, iteration: usize| -> Result<FreeEnergyReport> {
        let mut r = evaluate_indices(cfg, params, data, &valid_idx, &eval_rng, tc.eval_samples)?;
        r.iteration = iteration;
        Ok(r)
    };
    match validate(&out.params, 0) {
        Ok(r) => {
            out.best_valid = Some(r.total);
            out.history.push(HistoryRow { split: Split::Valid, report: r });
        }
        Err(e) if diverged(&e) => {
            out.divergence = Some(Divergence { iteration: 0, detail: e.to_string() });
            return Ok(out);
        }
        Err(e) => return Err(e),
    }

    let batch_size = tc.batch.min(train_idx.len());
    let mut order = train_idx.clone();
    order_rng.shuffle(&mut order);
    let mut cursor = 0;
    let mut adam = Adam::new(tc.lr);
    let (mut acc1, mut acc2, mut acc_n) = (0.0, 0.0, 0usize);

    for t in 0..tc.iterations {
        let temperature = anneal_temperature(t, tc.iterations, cfg.t_max, cfg.t_min);
        if cursor + batch_size > order.len() {
            order_rng.shuffle(&mut order);
            cursor = 0;
        }
        let batch = data.batch(&order[cursor..cursor + batch_size]);
        cursor += batch_size;
        let noise = draw_noise(cfg, batch_size, &mut noise_rng);
        let step = free_energy_with_grad(cfg, &out.params, &batch, &noise, temperature)
            .and_then(|(r, grads)| adam.step(&mut out.params, &grads).map(|_| r));
        let r = match step {
            Ok(r) => r,
            Err(e) if diverged(&e) => {
                out.divergence = Some(Divergence { iteration: t, detail: e.to_string() });
                return Ok(out);
            }
            Err(e) => return Err(e),
        };
        acc1 += r.term1;
        acc2 += r.term2;
        acc_n += 1;

        let done = t + 1;
        if done % tc.valid_every == 0 || done == tc.iterations {
            let n = acc_n as f64;
            let report = FreeEnergyReport::new(acc1 / n, acc2 / n, temperature, done);
            out.history.push(HistoryRow { split: Split::Train, report });
            (acc1, acc2, acc_n) = (0.0, 0.0, 0);
            match validate(&out.params, done) {
                Ok(r) => {
                    out.history.push(HistoryRow { split: Split::Valid, report: r });
                    if out.best_valid.is_none_or(|b| r.total < b) {
                        out.best_valid = Some(r.total);
                        out.best = out.params.clone();
                    }
                }
                Err(e) if diverged(&e) => {
                    out.divergence = Some(Divergence { iteration: done, detail: e.to_string() });
                    return Ok(out);
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}
