use std::collections::BTreeMap;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal with standard deviation `gain / sqrt(fan_in)`.
    Normal {
        fan_in: usize,
        gain: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

struct SpecBuilder(Vec<ParamSpec>);

impl SpecBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) {
        self.0.push(ParamSpec { name, shape, init });
    }

    fn conv(&mut self, prefix: &str, cin: usize, cout: usize, k: usize, gain: f64) {
        let fan_in = cin * k * k;
        let init = if gain == 0.0 {
            Init::Zeros
        } else {
            Init::Normal { fan_in, gain }
        };
        self.push(format!("{prefix}.weight"), vec![cout, cin, k, k], init);
        self.push(format!("{prefix}.bias"), vec![cout], Init::Zeros);
    }

    fn linear(&mut self, prefix: &str, fin: usize, fout: usize) {
        self.push(
            format!("{prefix}.weight"),
            vec![fout, fin],
            Init::Normal { fan_in: fin, gain: 1.0 },
        );
        self.push(format!("{prefix}.bias"), vec![fout], Init::Zeros);
    }

    fn norm(&mut self, prefix: &str, c: usize) {
        self.push(format!("{prefix}.gamma"), vec![c], Init::Ones);
        self.push(format!("{prefix}.beta"), vec![c], Init::Zeros);
    }

    fn resblock(&mut self, prefix: &str, cin: usize, cout: usize, emb: usize) {
        self.norm(&format!("{prefix}.norm1"), cin);
        self.conv(&format!("{prefix}.conv1"), cin, cout, 3, 1.0);
        self.linear(&format!("{prefix}.emb"), emb, cout);
        self.norm(&format!("{prefix}.norm2"), cout);
        self.conv(&format!("{prefix}.conv2"), cout, cout, 3, 1.0);
        if cin != cout {
            self.conv(&format!("{prefix}.skip"), cin, cout, 1, 1.0);
        }
    }
}

/// Every parameter of both networks with its shape and initialiser, sorted by name.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut b = SpecBuilder(Vec::new());
    let d = cfg.data_channels();
    if cfg.use_init_predictor {
        let hid = cfg.predictor_hidden;
        let last = cfg.predictor_layers - 1;
        for i in 0..cfg.predictor_layers {
            let cin = if i == 0 { d } else { hid };
            let cout = if i == last { d } else { hid };
            // small final layer: g starts close to the identity map
            let gain = if i == last { 0.1 } else { 1.0 };
            b.conv(&format!("g.conv{i:02}"), cin, cout, 3, gain);
        }
    }
    let base = cfg.base_width;
    let emb = cfg.embed_dim();
    b.linear("f.emb.lin1", emb, 4 * emb);
    b.linear("f.emb.lin2", 4 * emb, emb);
    b.conv("f.conv_in", 2 * d, base, 3, 1.0);
    let mut skips = vec![base];
    let mut ch = base;
    for (l, &m) in cfg.channel_mults.iter().enumerate() {
        let out = base * m;
        for j in 0..cfg.n_blocks {
            b.resblock(&format!("f.down{l}.block{j}"), ch, out, emb);
            ch = out;
            skips.push(ch);
        }
        if l + 1 < cfg.levels() {
            b.conv(&format!("f.down{l}.resample"), ch, ch, 3, 1.0);
            skips.push(ch);
        }
    }
    for j in 0..2 {
        b.resblock(&format!("f.mid.block{j}"), ch, ch, emb);
    }
    for (l, &m) in cfg.channel_mults.iter().enumerate().rev() {
        let out = base * m;
        for j in 0..=cfg.n_blocks {
            let skip = skips.pop().expect("one skip per decoder block");
            b.resblock(&format!("f.up{l}.block{j}"), ch + skip, out, emb);
            ch = out;
        }
        if l > 0 {
            b.conv(&format!("f.up{l}.resample"), ch, ch, 3, 1.0);
        }
    }
    b.norm("f.out.norm", ch);
    b.conv("f.out.conv", ch, d, 3, 0.0);
    let mut specs = b.0;
    specs.sort_by(|a, b| a.name.cmp(&b.name));
    specs
}

/// Named parameters of both networks plus run metadata, iterated in sorted name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    /// Draws every parameter from a generator seeded by `seed`, in sorted name order.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for spec in param_specs(cfg) {
            let t = match spec.init {
                Init::Zeros => Tensor::zeros(&spec.shape),
                Init::Ones => Tensor::full(&spec.shape, 1.0),
                Init::Normal { fan_in, gain } => {
                    let std = gain / (fan_in as f64).sqrt();
                    Tensor::randn(&spec.shape, &mut rng).scale(std)
                }
            };
            tensors.insert(spec.name, t);
        }
        let params = Self { tensors };
        log::info!(
            "model: {} parameters (base width {}, multipliers {:?}, {} blocks, {} data channels)",
            params.num_parameters(),
            cfg.base_width,
            cfg.channel_mults,
            cfg.n_blocks,
            cfg.data_channels()
        );
        Ok(params)
    }

    pub fn from_map(tensors: BTreeMap<String, Tensor>) -> Self {
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Parameter count of `prefix.*` entries (e.g. `"g"` or `"f"`).
    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        let p = format!("{prefix}.");
        self.tensors
            .iter()
            .filter(|(k, _)| k.starts_with(&p))
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// Records every parameter on `tape` as a trainable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        self.bind_with(tape, |_| true)
    }

    /// Records parameters as trainable only where `trainable(name)` holds; the rest are constants.
    pub fn bind_with<'t>(&self, tape: &'t Tape, trainable: impl Fn(&str) -> bool) -> Bound<'t> {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let v = if trainable(k) {
                    tape.param(t.clone())
                } else {
                    tape.leaf(t.clone())
                };
                (k.clone(), v)
            })
            .collect();
        Bound { vars }
    }
}

/// Parameters recorded on one tape.
pub struct Bound<'t> {
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}")))
    }

    /// Replaces one binding, e.g. to route a finite-difference probe through it.
    pub fn set(&mut self, name: &str, var: Var<'t>) {
        self.vars.insert(name.to_string(), var);
    }

    /// Gradients of all trainable bindings after `backward`, keyed by name.
    pub fn grads(&self) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .filter_map(|(k, v)| v.grad().map(|g| (k.clone(), g)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_unique_and_sorted() {
        let specs = param_specs(&ModelConfig::desk());
        assert!(specs.windows(2).all(|w| w[0].name < w[1].name));
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::desk();
        let a = ModelParams::init(&cfg, 11).unwrap();
        let b = ModelParams::init(&cfg, 11).unwrap();
        assert_eq!(a, b);
        let c = ModelParams::init(&cfg, 12).unwrap();
        assert_ne!(a, c);
        let specs_total: usize = param_specs(&cfg).iter().map(ParamSpec::numel).sum();
        assert_eq!(a.num_parameters(), specs_total);
    }

    #[test]
    fn large_config_parameter_count() {
        let p = ModelParams::init(&ModelConfig::large_general_sr(), 0).unwrap();
        // 10 3x3 convs, 12 -> 32 -> ... -> 32 -> 12
        let conv = |cin: usize, cout: usize| cin * cout * 9 + cout;
        assert_eq!(p.count_with_prefix("g"), conv(12, 32) + 8 * conv(32, 32) + conv(32, 12));
        assert_eq!(p.num_parameters(), 9_056_424);
    }

    #[test]
    fn identity_predictor_has_no_g_params() {
        let cfg = ModelConfig {
            use_init_predictor: false,
            ..ModelConfig::desk()
        };
        let p = ModelParams::init(&cfg, 1).unwrap();
        assert_eq!(p.count_with_prefix("g"), 0);
        assert!(p.count_with_prefix("f") > 0);
    }
}
