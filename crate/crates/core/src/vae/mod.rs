//! The three VAEs: Gaussian, categorical and coarse-grained BPEF.
//!
//! All three share a dense ReLU encoder and decoder and the same Bernoulli
//! reconstruction term; they differ in how the encoder output is turned into
//! a latent sample and in the KL term against the prior.

mod model;
mod optim;
mod snapshot;
mod train;

pub use model::{
    draw_noise, free_energy, free_energy_with_grad, init_params, model_grad_check, noise_shape, FreeEnergyReport,
    ModelParams,
};
pub use optim::{anneal_temperature, xavier_init, Adam};
pub use snapshot::{load_snapshot, read_snapshot, save_snapshot, write_snapshot};
pub use train::{evaluate, train, Divergence, HistoryRow, TrainConfig, TrainOutcome};

use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum ModelKind {
    Gauss,
    Cat { categories: usize },
    CgBpef { order: usize, resolution: usize },
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Gauss => "gauss",
            ModelKind::Cat { .. } => "cat",
            ModelKind::CgBpef { .. } => "cgbpef",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Widths of the hidden layers, input side first. The decoder mirrors them.
    pub hidden: Vec<usize>,
    /// Number of latent dimensions `d`.
    pub latent: usize,
    /// Latent samples `L` per datum.
    pub samples: usize,
    pub t_max: f64,
    pub t_min: f64,
    /// Data dimension `D`.
    pub input_dim: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent == 0 || self.samples == 0 || self.input_dim == 0 {
            return Err(invalid("d, L and the input dimension must be at least 1"));
        }
        if self.hidden.contains(&0) {
            return Err(invalid("hidden layer widths must be positive"));
        }
        match self.kind {
            ModelKind::Gauss => {}
            ModelKind::Cat { categories } if categories < 2 => {
                return Err(invalid(format!("need at least 2 categories, got {categories}")));
            }
            ModelKind::CgBpef { order, resolution } if order == 0 || order + 1 >= resolution => {
                return Err(invalid(format!("need 1 <= M < R - 1, got M = {order}, R = {resolution}")));
            }
            _ => {}
        }
        if !(self.t_min > 0.0 && self.t_max >= self.t_min && self.t_max.is_finite()) {
            return Err(invalid(format!("need T_max >= T_min > 0, got {} and {}", self.t_max, self.t_min)));
        }
        Ok(())
    }

    /// Width of the encoder output layer.
    pub fn encoder_out(&self) -> usize {
        match self.kind {
            ModelKind::Gauss => 2 * self.latent,
            ModelKind::Cat { categories } => self.latent * categories,
            ModelKind::CgBpef { order, .. } => self.latent * order,
        }
    }

    /// Width of the decoder input layer.
    pub fn decoder_in(&self) -> usize {
        match self.kind {
            ModelKind::Cat { categories } => self.latent * categories,
            _ => self.latent,
        }
    }

    /// `key=value` lines, one per field, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = format!("kind={}\n", self.kind.name());
        match self.kind {
            ModelKind::Gauss => {}
            ModelKind::Cat { categories } => s += &format!("C={categories}\n"),
            ModelKind::CgBpef { order, resolution } => s += &format!("M={order}\nR={resolution}\n"),
        }
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        s += &format!("hidden={}\n", hidden.join(","));
        s += &format!("d={}\nL={}\n", self.latent, self.samples);
        s += &format!("tmax={}\ntmin={}\n", self.t_max, self.t_min);
        s += &format!("input_dim={}\n", self.input_dim);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = std::collections::BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| invalid(format!("expected key=value, got `{line}`")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| map.get(k).ok_or_else(|| invalid(format!("missing key `{k}`")));
        let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| invalid(format!("bad value for `{k}`"))) };
        let real = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| invalid(format!("bad value for `{k}`"))) };
        let kind = match get("kind")?.as_str() {
            "gauss" => ModelKind::Gauss,
            "cat" => ModelKind::Cat { categories: num("C")? },
            "cgbpef" => ModelKind::CgBpef {
                order: num("M")?,
                resolution: num("R")?,
            },
            other => return Err(invalid(format!("unknown model kind `{other}`"))),
        };
        let hidden = get("hidden")?;
        let hidden = if hidden.is_empty() {
            Vec::new()
        } else {
            hidden
                .split(',')
                .map(|h| h.trim().parse().map_err(|_| invalid(format!("bad hidden width `{h}`"))))
                .collect::<Result<Vec<usize>>>()?
        };
        let cfg = Self {
            kind,
            hidden,
            latent: num("d")?,
            samples: num("L")?,
            t_max: real("tmax")?,
            t_min: real("tmin")?,
            input_dim: num("input_dim")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
