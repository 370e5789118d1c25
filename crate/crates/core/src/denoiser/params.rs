use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DenoiserError;
use crate::autodiff::{Tape, Tensor, Var};
use crate::rng::keyed_rng;

/// Pseudo-encoder average-pool factor.
pub const POOL: usize = 8;
/// Latent patch size; with `POOL` the total downsampling is 16×.
pub const PATCH: usize = 2;
/// Pose-encoder channel multipliers.
pub const POSE_LADDER: [usize; 4] = [1, 2, 4, 4];
/// RGB plus six Plücker channels.
pub const POSE_INPUT_CHANNELS: usize = 9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    /// Channels per latent token.
    pub latent_channels: usize,
    pub width: usize,
    pub heads: usize,
    pub n_blocks: usize,
    pub text_dim: usize,
    pub max_text_tokens: usize,
    /// Base width of the pose encoder ladder.
    pub pose_base: usize,
    pub cross_view_bottleneck: bool,
    pub epipolar: bool,
    pub band_eps: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            latent_channels: 3 * PATCH * PATCH,
            width: 64,
            heads: 4,
            n_blocks: 2,
            text_dim: 16,
            max_text_tokens: 8,
            pose_base: 16,
            cross_view_bottleneck: true,
            epipolar: true,
            band_eps: crate::epiagg::DEFAULT_EPS,
        }
    }
}

impl DenoiserConfig {
    pub fn control_blocks(&self) -> usize {
        self.n_blocks.div_ceil(2)
    }

    pub fn pose_channels(&self) -> [usize; 4] {
        POSE_LADDER.map(|m| m * self.pose_base)
    }

    pub fn validate(&self) -> Result<(), DenoiserError> {
        let bad = |m: &str| Err(DenoiserError::InvalidConfig(m.to_string()));
        if self.latent_channels == 0 || self.width == 0 || self.text_dim == 0 || self.pose_base == 0 {
            return bad("dimensions must be positive");
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return bad("heads must divide width");
        }
        if self.width % 4 != 0 {
            return bad("width must be a multiple of 4 for the positional encoding");
        }
        if (POSE_LADDER[3] * self.pose_base) % self.heads != 0 {
            return bad("heads must divide the pose encoder bottleneck width");
        }
        Ok(())
    }
}

/// Named parameter tensors in a fixed registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserParams {
    pub config: DenoiserConfig,
    pub seed: u64,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
    zero_init: Vec<usize>,
}

pub(crate) fn block_names(prefix: &str) -> Vec<String> {
    [
        "self.wq", "self.wk", "self.wv", "self.wo", "row.wq", "row.wk", "row.wv", "row.wo", "cross.wq", "cross.wk",
        "cross.wv", "cross.wo", "mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2",
    ]
    .iter()
    .map(|s| format!("{prefix}.{s}"))
    .collect()
}

struct Builder {
    seed: u64,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    zero_init: Vec<usize>,
}

impl Builder {
    fn uniform(&mut self, name: String, rows: usize, cols: usize) {
        let mut rng = keyed_rng(self.seed, 0, &name);
        let b = 1.0 / (rows as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-b..b)).collect();
        self.names.push(name);
        self.tensors.push(Tensor::new(rows, cols, data));
    }

    fn zeros(&mut self, name: String, rows: usize, cols: usize, zero_init: bool) {
        if zero_init {
            self.zero_init.push(self.names.len());
        }
        self.names.push(name);
        self.tensors.push(Tensor::zeros(rows, cols));
    }

    fn block(&mut self, p: &str, c: usize, e: usize) {
        for n in ["self.wq", "self.wk", "self.wv", "self.wo", "row.wq", "row.wk", "row.wv"] {
            self.uniform(format!("{p}.{n}"), c, c);
        }
        self.zeros(format!("{p}.row.wo"), c, c, true);
        self.uniform(format!("{p}.cross.wq"), c, c);
        self.uniform(format!("{p}.cross.wk"), e, c);
        self.uniform(format!("{p}.cross.wv"), e, c);
        self.zeros(format!("{p}.cross.wo"), c, c, true);
        self.uniform(format!("{p}.mlp.w1"), c, 2 * c);
        self.zeros(format!("{p}.mlp.b1"), 1, 2 * c, false);
        self.uniform(format!("{p}.mlp.w2"), 2 * c, c);
        self.zeros(format!("{p}.mlp.b2"), 1, c, false);
    }
}

impl DenoiserParams {
    /// Seeded construction. Row-attention and cross-attention output maps
    /// and the control branch's entry and exit maps start at exactly zero;
    /// control blocks start as copies of the corresponding trunk blocks.
    pub fn init(config: DenoiserConfig, seed: u64) -> Result<Self, DenoiserError> {
        config.validate()?;
        let (c, d, e) = (config.width, config.latent_channels, config.text_dim);
        let mut b = Builder {
            seed,
            names: Vec::new(),
            tensors: Vec::new(),
            zero_init: Vec::new(),
        };
        let ladder = config.pose_channels();
        let mut cin = POSE_INPUT_CHANNELS;
        for (k, &cout) in ladder.iter().enumerate() {
            b.uniform(format!("pose.conv{k}.w"), 9 * cin, cout);
            b.zeros(format!("pose.conv{k}.b"), 1, cout, false);
            cin = cout;
        }
        for n in ["wq", "wk", "wv", "wo"] {
            b.uniform(format!("pose.xattn.{n}"), cin, cin);
        }
        b.uniform("pose.proj.w".into(), cin, c);
        b.zeros("pose.proj.b".into(), 1, c, false);
        b.uniform("in.w".into(), d, c);
        b.zeros("in.b".into(), 1, c, false);
        b.uniform("time.w".into(), c, c);
        b.zeros("time.b".into(), 1, c, false);
        for i in 0..config.n_blocks {
            b.block(&format!("blocks.{i}"), c, e);
        }
        b.zeros("ctrl.in".into(), c, c, true);
        for i in 0..config.control_blocks() {
            let trunk_start = b.names.iter().position(|n| n == &format!("blocks.{i}.self.wq")).expect("trunk block");
            for (k, name) in block_names(&format!("ctrl.{i}")).into_iter().enumerate() {
                let t = b.tensors[trunk_start + k].clone();
                if b.zero_init.contains(&(trunk_start + k)) {
                    b.zero_init.push(b.names.len());
                }
                b.names.push(name);
                b.tensors.push(t);
            }
            b.zeros(format!("ctrl.out.{i}"), c, c, true);
        }
        b.uniform("out.w".into(), c, d);
        b.zeros("out.b".into(), 1, d, false);
        let index = b.names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Ok(Self {
            config,
            seed,
            names: b.names,
            tensors: b.tensors,
            index,
            zero_init: b.zero_init,
        })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self.tensors[self.index[name]]
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Names of the layers that are zero at construction.
    pub fn zero_init_names(&self) -> Vec<&str> {
        self.zero_init.iter().map(|&i| self.names[i].as_str()).collect()
    }

    /// Fills the zero-initialized layers with seeded uniform values in
    /// `[−scale, scale]`, as after some training.
    pub fn randomize_zero_layers(&mut self, seed: u64, scale: f64) {
        for &i in &self.zero_init {
            let mut rng = keyed_rng(seed, 1, &self.names[i]);
            self.tensors[i].data.iter_mut().for_each(|v| *v = rng.gen_range(-scale..scale));
        }
    }

    /// Leaves on `tape`, one per tensor, in registration order.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t, '_> {
        Bound {
            vars: self.tensors.iter().map(|t| tape.leaf(t.clone())).collect(),
            index: &self.index,
        }
    }
}

pub struct Bound<'t, 'p> {
    pub vars: Vec<Var<'t>>,
    index: &'p HashMap<String, usize>,
}

impl<'t> Bound<'t, '_> {
    pub fn get(&self, name: &str) -> Var<'t> {
        self.vars[*self.index.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))]
    }
}
