use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    Concat,
    Mean,
}

/// Component switches; each replaces one symbol by its neutral element.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    /// `e = 1` on every edge, no update, no pruning, no `L_r`.
    pub disable_edge_weights: bool,
    /// Drop the `r_v` block from the inter-sensor attention input.
    pub disable_receiver_r: bool,
    /// `p_t = 0`.
    pub disable_time_encoding: bool,
    /// `α = 1`, no renormalization.
    pub disable_intersensor_alpha: bool,
    /// Uniform `β = 1/T`.
    pub disable_temporal_attention: bool,
    /// `λ = 0`.
    pub disable_lr: bool,
}

impl Ablations {
    pub const FLAGS: [&'static str; 7] = [
        "disable_edge_weights",
        "disable_receiver_r",
        "disable_time_encoding",
        "disable_intersensor_alpha",
        "disable_temporal_attention",
        "mean_readout",
        "disable_Lr",
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_sensors: usize,
    pub n_classes: usize,
    pub t_max: usize,
    /// Static attribute width; 0 when samples carry none.
    pub attr_dim: usize,
    pub d_h: usize,
    pub d_t: usize,
    pub d_r: usize,
    pub d_k: usize,
    /// Static projection width; defaults to `n_sensors`.
    pub d_a: usize,
    pub layers: usize,
    /// Percentage of remaining off-diagonal edges pruned after layer 1.
    pub prune_percent: f64,
    pub lambda: f64,
    pub hidden: usize,
    pub readout: Readout,
    /// Feed `[x ‖ 1]` instead of `x` to the observation embedding.
    pub mask_concat: bool,
    pub ablations: Ablations,
}

impl ModelConfig {
    pub fn new(n_sensors: usize, n_classes: usize, t_max: usize, attr_dim: usize) -> Self {
        Self {
            n_sensors,
            n_classes,
            t_max,
            attr_dim,
            d_h: 4,
            d_t: 16,
            d_r: 16,
            d_k: 20,
            d_a: n_sensors,
            layers: 2,
            prune_percent: 50.0,
            lambda: 0.02,
            hidden: 128,
            readout: Readout::Concat,
            mask_concat: false,
            ablations: Ablations::default(),
        }
    }

    /// Width of `[h ‖ p]`, the temporal attention input and sensor embedding.
    pub fn d_z(&self) -> usize {
        self.d_h + self.d_t
    }

    pub fn readout_width(&self) -> usize {
        match self.readout {
            Readout::Concat => self.n_sensors * self.d_z(),
            Readout::Mean => self.d_z(),
        }
    }

    /// `λ` after ablations.
    pub fn effective_lambda(&self) -> f64 {
        if self.ablations.disable_lr || self.ablations.disable_edge_weights {
            0.0
        } else {
            self.lambda
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.n_sensors == 0 || self.n_classes < 2 || self.t_max == 0 {
            return bad(format!(
                "need M >= 1, C >= 2, T_max >= 1 (got {}, {}, {})",
                self.n_sensors, self.n_classes, self.t_max
            ));
        }
        if self.d_h == 0 || self.d_k == 0 || self.hidden == 0 {
            return bad("d_h, d_k and hidden must be positive".into());
        }
        if !self.d_t.is_multiple_of(2) {
            return bad(format!("time encoding width {} must be even", self.d_t));
        }
        if self.layers == 0 {
            return bad("at least one message-passing layer is required".into());
        }
        if !(0.0..100.0).contains(&self.prune_percent) {
            return bad(format!("pruning percentage {} outside [0, 100)", self.prune_percent));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be finite and non-negative", self.lambda));
        }
        Ok(())
    }

    /// Apply one named ablation switch.
    pub fn with_flag(mut self, flag: &str) -> Result<Self, ModelError> {
        let a = &mut self.ablations;
        match flag {
            "disable_edge_weights" => a.disable_edge_weights = true,
            "disable_receiver_r" => a.disable_receiver_r = true,
            "disable_time_encoding" => a.disable_time_encoding = true,
            "disable_intersensor_alpha" => a.disable_intersensor_alpha = true,
            "disable_temporal_attention" => a.disable_temporal_attention = true,
            "disable_Lr" | "disable_lr" => a.disable_lr = true,
            "mean_readout" => self.readout = Readout::Mean,
            other => return Err(ModelError::Config(format!("unknown ablation flag `{other}`"))),
        }
        Ok(self)
    }
}
