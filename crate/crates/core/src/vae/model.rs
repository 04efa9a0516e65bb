use std::collections::BTreeMap;

use super::optim::xavier_init;
use super::{ModelConfig, ModelKind};
use crate::autodiff::{Graph, Inputs, NodeId, Tensor};
use crate::distributions::{concrete_node, make_grid};
use crate::divergence::kl_category_node;
use crate::error::{invalid, Result};
use crate::sampling::{sample_gaussian, sample_gumbel, Rng};

/// Named parameter tensors: `enc.w{i}`, `enc.b{i}`, `enc.out.w`, `enc.out.b`,
/// the same under `dec.`, and `prior.a` (`d×M`) for the CG-BPEF model.
pub type ModelParams = BTreeMap<String, Tensor>;

/// Per-datum free energy of one batch, in nats.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FreeEnergyReport {
    /// KL from the posterior to the prior.
    pub term1: f64,
    /// Expected negative reconstruction log-likelihood.
    pub term2: f64,
    /// `term1 + term2`.
    pub total: f64,
    pub temperature: f64,
    pub iteration: usize,
}

impl FreeEnergyReport {
    pub fn new(term1: f64, term2: f64, temperature: f64, iteration: usize) -> Self {
        Self {
            term1,
            term2,
            total: term1 + term2,
            temperature,
            iteration,
        }
    }
}

fn layer_widths(cfg: &ModelConfig) -> (Vec<usize>, Vec<usize>) {
    let mut enc = vec![cfg.input_dim];
    enc.extend(&cfg.hidden);
    enc.push(cfg.encoder_out());
    let mut dec = vec![cfg.decoder_in()];
    dec.extend(cfg.hidden.iter().rev());
    dec.push(cfg.input_dim);
    (enc, dec)
}

fn layer_name(prefix: &str, i: usize, last: bool, part: &str) -> String {
    if last {
        format!("{prefix}.out.{part}")
    } else {
        format!("{prefix}.{part}{i}")
    }
}

/// Xavier weights, zero biases, and a flat (all-zero) prior.
pub fn init_params(cfg: &ModelConfig, rng: &mut Rng) -> Result<ModelParams> {
    cfg.validate()?;
    let mut params = ModelParams::new();
    let (enc, dec) = layer_widths(cfg);
    for (prefix, widths) in [("enc", &enc), ("dec", &dec)] {
        let layers = widths.len() - 1;
        for i in 0..layers {
            let last = i + 1 == layers;
            params.insert(layer_name(prefix, i, last, "w"), xavier_init(widths[i], widths[i + 1], rng)?);
            params.insert(layer_name(prefix, i, last, "b"), Tensor::zeros(&[widths[i + 1]]));
        }
    }
    if let ModelKind::CgBpef { order, .. } = cfg.kind {
        params.insert("prior.a".into(), Tensor::zeros(&[cfg.latent, order]));
    }
    Ok(params)
}

/// Shape of the noise tensor consumed by one batch.
///
/// Gaussian: `(L·B)×d` standard normals. Categorical and CG-BPEF: one Gumbel
/// row per latent dimension and sample, `(L·B·d)×C` or `(L·B·d)×R`.
pub fn noise_shape(cfg: &ModelConfig, batch: usize) -> [usize; 2] {
    let rows = cfg.samples * batch;
    match cfg.kind {
        ModelKind::Gauss => [rows, cfg.latent],
        ModelKind::Cat { categories } => [rows * cfg.latent, categories],
        ModelKind::CgBpef { resolution, .. } => [rows * cfg.latent, resolution],
    }
}

pub fn draw_noise(cfg: &ModelConfig, batch: usize, rng: &mut Rng) -> Tensor {
    let shape = noise_shape(cfg, batch);
    match cfg.kind {
        ModelKind::Gauss => sample_gaussian(rng, &shape),
        _ => sample_gumbel(rng, &shape),
    }
}

struct Objective {
    graph: Graph,
    loss: NodeId,
}

fn dense_stack(g: &mut Graph, mut x: NodeId, prefix: &str, layers: usize) -> NodeId {
    for i in 0..layers {
        let last = i + 1 == layers;
        let w = g.input(&layer_name(prefix, i, last, "w"));
        let b = g.input(&layer_name(prefix, i, last, "b"));
        x = g.affine(x, w, b);
        if !last {
            x = g.relu(x);
        }
    }
    x
}

/// Records the free energy of a `batch`-row minibatch bound to the inputs
/// `x` and `noise`. Rows of the tiled tensors are ordered sample-major:
/// row `l·B + b` belongs to datum `b`.
fn build_objective(cfg: &ModelConfig, batch: usize, temperature: f64) -> Result<Objective> {
    cfg.validate()?;
    if batch == 0 {
        return Err(invalid("empty batch"));
    }
    if !(temperature > 0.0) {
        return Err(invalid(format!("temperature must be positive, got {temperature}")));
    }
    let (enc, dec) = layer_widths(cfg);
    let (d, l) = (cfg.latent, cfg.samples);
    let mut g = Graph::new();
    let x = g.input("x");
    let noise = g.input("noise");
    let h = dense_stack(&mut g, x, "enc", enc.len() - 1);

    let (z, kl_rows) = match cfg.kind {
        ModelKind::Gauss => {
            let mu = g.slice_cols(h, 0, d);
            let logvar = g.slice_cols(h, d, d);
            let half = g.scale(logvar, 0.5);
            let sd = g.exp(half);
            let mu_l = g.tile_rows(mu, l);
            let sd_l = g.tile_rows(sd, l);
            let spread = g.mul(sd_l, noise);
            let z = g.add(mu_l, spread);
            // KL(N(mu, e^lv) || N(0, 1)) = ½ Σ (mu² + e^lv − lv − 1)
            let mu2 = g.mul(mu, mu);
            let var = g.exp(logvar);
            let t = g.add(mu2, var);
            let t = g.sub(t, logvar);
            let t = g.add_scalar(t, -1.0);
            let t = g.scale(t, 0.5);
            (z, g.sum_rows(t))
        }
        ModelKind::Cat { categories } => {
            let logits = g.reshape(h, &[batch * d, categories]);
            let tiled = g.tile_rows(logits, l);
            let y = concrete_node(&mut g, tiled, noise, temperature);
            let z = g.reshape(y, &[l * batch, d * categories]);
            let flat = g.constant(Tensor::zeros(&[batch * d, categories]));
            (z, kl_category_node(&mut g, logits, flat))
        }
        ModelKind::CgBpef { order, resolution } => {
            let grid = make_grid(resolution)?;
            let powers = g.constant(grid.powers(order));
            let zeta = g.constant(grid.zeta_column());
            let coeffs = g.reshape(h, &[batch * d, order]);
            let beta = g.matmul(coeffs, powers);
            let tiled = g.tile_rows(beta, l);
            let y = concrete_node(&mut g, tiled, noise, temperature);
            let z = g.matmul(y, zeta);
            let z = g.reshape(z, &[l * batch, d]);
            let a = g.input("prior.a");
            let alpha = g.matmul(a, powers);
            let alpha = g.tile_rows(alpha, batch);
            (z, kl_category_node(&mut g, beta, alpha))
        }
    };

    let logits = dense_stack(&mut g, z, "dec", dec.len() - 1);
    let targets = g.tile_rows(x, l);
    let nll = g.bce_with_logits(logits, targets);
    let nll = g.sum(nll);
    let term2 = g.scale(nll, 1.0 / (batch * l) as f64);
    let kl = g.sum(kl_rows);
    let term1 = g.scale(kl, 1.0 / batch as f64);
    let loss = g.add(term1, term2);
    g.mark_output("term1", term1);
    g.mark_output("term2", term2);
    Ok(Objective { graph: g, loss })
}

fn bind(params: &ModelParams, batch: &Tensor, noise: &Tensor) -> Inputs {
    let mut inputs = params.clone();
    inputs.insert("x".into(), batch.clone());
    inputs.insert("noise".into(), noise.clone());
    inputs
}

fn check_batch(cfg: &ModelConfig, batch: &Tensor, noise: &Tensor) -> Result<usize> {
    let (b, dim) = batch
        .dims2()
        .ok_or_else(|| invalid("batch must be a matrix"))?;
    if dim != cfg.input_dim {
        return Err(invalid(format!("batch has dimension {dim}, model expects {}", cfg.input_dim)));
    }
    let want = noise_shape(cfg, b);
    if noise.dims2() != Some((want[0], want[1])) {
        return Err(invalid(format!("noise has shape {:?}, expected {:?}", noise.shape(), want)));
    }
    Ok(b)
}

fn run(
    cfg: &ModelConfig,
    params: &ModelParams,
    batch: &Tensor,
    noise: &Tensor,
    temperature: f64,
) -> Result<(Objective, FreeEnergyReport)> {
    let b = check_batch(cfg, batch, noise)?;
    let mut obj = build_objective(cfg, b, temperature)?;
    let out = obj.graph.forward(&bind(params, batch, noise))?;
    let report = FreeEnergyReport::new(out["term1"].data()[0], out["term2"].data()[0], temperature, 0);
    Ok((obj, report))
}

/// Free energy of `batch` (rows in `[0, 1]^D`) under the given noise draw.
pub fn free_energy(
    cfg: &ModelConfig,
    params: &ModelParams,
    batch: &Tensor,
    noise: &Tensor,
    temperature: f64,
) -> Result<FreeEnergyReport> {
    run(cfg, params, batch, noise, temperature).map(|(_, r)| r)
}

/// [`free_energy`] plus the gradient of `term1 + term2` with respect to every parameter.
pub fn free_energy_with_grad(
    cfg: &ModelConfig,
    params: &ModelParams,
    batch: &Tensor,
    noise: &Tensor,
    temperature: f64,
) -> Result<(FreeEnergyReport, ModelParams)> {
    let (mut obj, report) = run(cfg, params, batch, noise, temperature)?;
    let mut grads = obj.graph.backward(obj.loss, &Tensor::scalar(1.0))?;
    grads.retain(|k, _| params.contains_key(k));
    Ok((report, grads))
}

/// Compares the analytic gradient of the free energy with central finite
/// differences on `n_data` random items and one frozen noise draw.
///
/// Returns the largest per-coordinate error `|a - c| / max(|a|, |c|, 1)`
/// over all parameters. `corrupt` perturbs one analytic coordinate so that
/// callers can exercise the failure path.
pub fn model_grad_check(cfg: &ModelConfig, n_data: usize, seed: u64, corrupt: bool) -> Result<f64> {
    const STEP: f64 = 1e-6;
    let root = Rng::new(seed);
    let mut params = init_params(cfg, &mut root.split(0))?;
    // Move off the symmetric initialization so no gradient vanishes by construction.
    let mut jitter = root.split(1);
    for t in params.values_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += 0.1 * jitter.gaussian());
    }
    let mut data_rng = root.split(2);
    let data: Vec<f64> = (0..n_data * cfg.input_dim).map(|_| data_rng.uniform()).collect();
    let batch = Tensor::matrix(n_data, cfg.input_dim, data)?;
    let noise = draw_noise(cfg, n_data, &mut root.split(3));
    let temperature = cfg.t_min;

    let (_, mut grads) = free_energy_with_grad(cfg, &params, &batch, &noise, temperature)?;
    if corrupt {
        if let Some(g) = grads.values_mut().next() {
            g.data_mut()[0] += 0.5;
        }
    }
    let mut worst = 0.0f64;
    let names: Vec<String> = params.keys().cloned().collect();
    for name in names {
        for i in 0..params[&name].len() {
            let orig = params[&name].data()[i];
            params.get_mut(&name).unwrap().data_mut()[i] = orig + STEP;
            let up = free_energy(cfg, &params, &batch, &noise, temperature)?.total;
            params.get_mut(&name).unwrap().data_mut()[i] = orig - STEP;
            let down = free_energy(cfg, &params, &batch, &noise, temperature)?.total;
            params.get_mut(&name).unwrap().data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let analytic = grads[&name].data()[i];
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
