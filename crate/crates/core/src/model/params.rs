use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError};
use crate::rng::SplitMix64;
use crate::tensor::{seeded_init, InitScheme, Tape, Tensor, Var};

/// Positions of every parameter inside [`ModelParams::tensors`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    /// `R_u`, one row per sensor `[M × d_h]`.
    pub r: usize,
    /// Mask-indicator half of `R_u` (mask concatenation only).
    pub r_mask: Option<usize>,
    /// `R'_u` for layers 2..=L, each `[M × d_h²]`.
    pub r_layer: Vec<usize>,
    /// `D` `[d_h × (d_r + d_t)]`.
    pub d: usize,
    /// Receiver vectors `r_v` `[M × d_r]`.
    pub recv: usize,
    /// Sender weights `w_u` `[M × d_h]`.
    pub w_src: usize,
    /// Receiver weights `w_v` `[M × d_h]`.
    pub w_dst: usize,
    pub w_q: usize,
    pub w_k: usize,
    /// `s` `[T_max × 1]`.
    pub s: usize,
    /// `W` `[d_z × d_z]`.
    pub w: usize,
    /// Static projection `[attr_dim × d_a]` when attributes exist.
    pub a_proj: Option<usize>,
    pub fc1_w: usize,
    pub fc1_b: usize,
    pub fc2_w: usize,
    pub fc2_b: usize,
}

/// Name, shape and init scheme of every parameter, in storage order.
fn specs(c: &ModelConfig) -> Vec<(String, Vec<usize>, InitScheme)> {
    let g = InitScheme::UniformGlorot;
    let m = c.n_sensors;
    let mut out = vec![("R".to_string(), vec![m, c.d_h], g)];
    if c.mask_concat {
        out.push(("R_mask".into(), vec![m, c.d_h], g));
    }
    for l in 2..=c.layers {
        out.push((format!("R_layer{l}"), vec![m, c.d_h * c.d_h], g));
    }
    out.extend([
        ("D".into(), vec![c.d_h, c.d_r + c.d_t], g),
        ("r".into(), vec![m, c.d_r], g),
        ("w_src".into(), vec![m, c.d_h], g),
        ("w_dst".into(), vec![m, c.d_h], g),
        ("W_Q".into(), vec![c.d_z(), c.d_k], g),
        ("W_K".into(), vec![c.d_z(), c.d_k], g),
        ("s".into(), vec![c.t_max, 1], g),
        ("W".into(), vec![c.d_z(), c.d_z()], g),
    ]);
    if c.attr_dim > 0 {
        out.push(("A_proj".into(), vec![c.attr_dim, c.d_a], g));
    }
    // Without attributes `a` is a zero vector of width d_a.
    let fc_in = c.readout_width() + c.d_a;
    out.extend([
        ("fc1_w".into(), vec![fc_in, c.hidden], g),
        ("fc1_b".into(), vec![c.hidden], InitScheme::Zeros),
        ("fc2_w".into(), vec![c.hidden, c.n_classes], g),
        ("fc2_b".into(), vec![c.n_classes], InitScheme::Zeros),
    ]);
    out
}

fn layout(c: &ModelConfig, names: &[String]) -> Layout {
    let find = |n: &str| names.iter().position(|x| x == n);
    let req = |n: &str| find(n).expect("layout built from the same config");
    Layout {
        r: req("R"),
        r_mask: find("R_mask"),
        r_layer: (2..=c.layers).map(|l| req(&format!("R_layer{l}"))).collect(),
        d: req("D"),
        recv: req("r"),
        w_src: req("w_src"),
        w_dst: req("w_dst"),
        w_q: req("W_Q"),
        w_k: req("W_K"),
        s: req("s"),
        w: req("W"),
        a_proj: find("A_proj"),
        fc1_w: req("fc1_w"),
        fc1_b: req("fc1_b"),
        fc2_w: req("fc2_w"),
        fc2_b: req("fc2_b"),
    }
}

/// Every trainable tensor of the model, named.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub seed: u64,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
    #[serde(skip)]
    layout: Option<Layout>,
}

impl ModelParams {
    /// Glorot-uniform weights and zero biases, one SplitMix64 stream per tensor.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let specs = specs(config);
        let names: Vec<String> = specs.iter().map(|s| s.0.clone()).collect();
        let tensors = specs
            .iter()
            .enumerate()
            .map(|(i, (_, shape, scheme))| {
                let stream = SplitMix64::derive(seed, i as u64).next_u64();
                seeded_init(shape, *scheme, stream)
            })
            .collect();
        let layout = Some(layout(config, &names));
        Ok(Self {
            config: config.clone(),
            seed,
            names,
            tensors,
            layout,
        })
    }

    /// Rebuild from stored tensors, checking names and shapes against `config`.
    pub fn from_parts(config: ModelConfig, seed: u64, named: Vec<(String, Tensor)>) -> Result<Self, ModelError> {
        config.validate()?;
        let specs = specs(&config);
        if named.len() != specs.len() {
            return Err(ModelError::Checkpoint(format!(
                "{} tensors stored, config needs {}",
                named.len(),
                specs.len()
            )));
        }
        for ((name, t), (want, shape, _)) in named.iter().zip(&specs) {
            if name != want || t.shape() != shape.as_slice() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor `{name}` {:?} does not match expected `{want}` {shape:?}",
                    t.shape()
                )));
            }
            if !t.all_finite() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor `{name}` holds non-finite values"
                )));
            }
        }
        let (names, tensors): (Vec<_>, Vec<_>) = named.into_iter().unzip();
        let layout = Some(layout(&config, &names));
        Ok(Self {
            config,
            seed,
            names,
            tensors,
            layout,
        })
    }

    pub fn layout(&self) -> Layout {
        self.layout.clone().unwrap_or_else(|| layout(&self.config, &self.names))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.tensors[i])
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Global L2 norm over every parameter.
    pub fn norm(&self) -> f64 {
        self.tensors.iter().map(|t| t.norm().powi(2)).sum::<f64>().sqrt()
    }

    /// Place every tensor on `tape`, trainable or constant.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Bound {
            vars,
            layout: self.layout(),
        }
    }
}

/// Parameters placed on one tape.
#[derive(Debug, Clone)]
pub struct Bound {
    pub vars: Vec<Var>,
    pub layout: Layout,
}

impl Bound {
    pub fn var(&self, i: usize) -> Var {
        self.vars[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let c = ModelConfig::new(5, 2, 8, 2);
        let a = ModelParams::init(&c, 3).unwrap();
        let b = ModelParams::init(&c, 3).unwrap();
        let d = ModelParams::init(&c, 4).unwrap();
        assert_eq!(a.tensors, b.tensors);
        assert_ne!(a.tensors, d.tensors);
    }

    #[test]
    fn shapes_follow_config() {
        let c = ModelConfig::new(5, 3, 8, 2);
        let p = ModelParams::init(&c, 0).unwrap();
        assert_eq!(p.get("D").unwrap().shape(), &[4, 32]);
        assert_eq!(p.get("s").unwrap().shape(), &[8, 1]);
        assert_eq!(p.get("W").unwrap().shape(), &[20, 20]);
        assert_eq!(p.get("fc1_w").unwrap().shape(), &[100 + 5, 128]);
        assert_eq!(p.get("fc2_w").unwrap().shape(), &[128, 3]);
        assert_eq!(p.get("R_layer2").unwrap().shape(), &[5, 16]);
        assert!(p.get("fc1_b").unwrap().data().iter().all(|&x| x == 0.0));
        let b = InitScheme::glorot_bound(&[4, 32]);
        assert!(p.get("D").unwrap().data().iter().all(|x| x.abs() <= b));
    }

    #[test]
    fn no_attributes_no_projection() {
        let p = ModelParams::init(&ModelConfig::new(5, 2, 8, 0), 0).unwrap();
        assert!(p.get("A_proj").is_none());
        assert!(p.layout().a_proj.is_none());
    }

    #[test]
    fn from_parts_checks_shapes() {
        let c = ModelConfig::new(4, 2, 6, 0);
        let p = ModelParams::init(&c, 1).unwrap();
        let named: Vec<_> = p.names.iter().cloned().zip(p.tensors.iter().cloned()).collect();
        assert_eq!(
            ModelParams::from_parts(c.clone(), 1, named.clone()).unwrap().tensors,
            p.tensors
        );
        let mut bad = named;
        bad[0].1 = Tensor::zeros(&[3, 4]);
        assert!(ModelParams::from_parts(c, 1, bad).is_err());
    }
}
