use exo2ego_nn::layers::{Conv2d, ConvTranspose2d, GroupNorm};
use exo2ego_nn::{Graph, Init, ParamStore, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const INIT_STD: f64 = 0.02;
const LEAK: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub image_size: usize,
    /// Width of the first encoder level; doubles per level up to `max_width`.
    pub base: usize,
    pub max_width: usize,
    /// Number of stride-2 levels; `image_size` must be divisible by `2^depth`.
    pub depth: usize,
    /// Group normalization groups; 0 disables normalization.
    pub max_groups: usize,
    /// Start the output layer at zero, so every input maps to mid-gray.
    pub zero_tail: bool,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            image_size: 256,
            base: 64,
            max_width: 512,
            depth: 8,
            max_groups: 8,
            zero_tail: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub base: usize,
    /// Stride-2 layers before the two stride-1 layers; 3 gives a 70×70
    /// receptive field.
    pub layers: usize,
    pub max_groups: usize,
    pub seed: u64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            base: 64,
            layers: 3,
            max_groups: 8,
            seed: 1,
        }
    }
}

fn normal() -> Init {
    Init::Normal { std: INIT_STD }
}

fn norm(store: &mut ParamStore, name: &str, ch: usize, groups: usize, rng: &mut ChaCha8Rng) -> Option<GroupNorm> {
    (groups > 0).then(|| GroupNorm::new(store, name, ch, groups, rng))
}

fn apply(g: &mut Graph, n: &Option<GroupNorm>, x: Var) -> Var {
    match n {
        Some(n) => n.forward(g, x),
        None => x,
    }
}

#[derive(Clone, Debug)]
struct Down {
    conv: Conv2d,
    norm: Option<GroupNorm>,
}

#[derive(Clone, Debug)]
struct Up {
    conv: ConvTranspose2d,
    norm: Option<GroupNorm>,
}

/// Encoder–decoder with skip connections between mirrored levels; `tanh`
/// output in `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub store: ParamStore,
    downs: Vec<Down>,
    ups: Vec<Up>,
    tail: ConvTranspose2d,
}

impl Generator {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        let d = config.depth;
        if d == 0 || config.base == 0 || config.max_width == 0 {
            return Err(Error::Config("generator depth and widths must be positive".into()));
        }
        if d >= usize::BITS as usize || config.image_size == 0 || config.image_size % (1 << d) != 0 {
            return Err(Error::Config(format!(
                "image_size {} is not divisible by 2^{d}",
                config.image_size
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let width = |i: usize| (config.base << i.min(20)).min(config.max_width);
        let mut downs = Vec::with_capacity(d);
        let mut cin = 3;
        for i in 0..d {
            let w = width(i);
            let conv = Conv2d::new(&mut store, &format!("down{i}.conv"), cin, w, 4, 2, 1, true, &normal(), &mut rng);
            let n = if i == 0 || i == d - 1 {
                None
            } else {
                norm(&mut store, &format!("down{i}.norm"), w, config.max_groups, &mut rng)
            };
            downs.push(Down { conv, norm: n });
            cin = w;
        }
        let mut ups = Vec::with_capacity(d - 1);
        for j in (1..d).rev() {
            let cin = if j == d - 1 { width(d - 1) } else { 2 * width(j) };
            let cout = width(j - 1);
            let conv = ConvTranspose2d::new(&mut store, &format!("up{j}.conv"), cin, cout, 4, 2, 1, true, &normal(), &mut rng);
            let n = norm(&mut store, &format!("up{j}.norm"), cout, config.max_groups, &mut rng);
            ups.push(Up { conv, norm: n });
        }
        let tail_in = if d == 1 { width(0) } else { 2 * width(0) };
        let tail_init = if config.zero_tail { Init::Zeros } else { normal() };
        let tail = ConvTranspose2d::new(&mut store, "tail.conv", tail_in, 3, 4, 2, 1, true, &tail_init, &mut rng);
        Ok(Self {
            config,
            store,
            downs,
            ups,
            tail,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let mut skips = Vec::with_capacity(self.downs.len());
        let mut h = x;
        for d in &self.downs {
            h = d.conv.forward(g, h);
            h = apply(g, &d.norm, h);
            h = g.leaky_relu(h, LEAK);
            skips.push(h);
        }
        let mut u = skips.pop().expect("depth ≥ 1");
        for up in &self.ups {
            u = up.conv.forward(g, u);
            u = apply(g, &up.norm, u);
            u = g.relu(u);
            let skip = skips.pop().expect("one skip per level");
            u = g.concat(u, skip);
        }
        let out = self.tail.forward(g, u);
        g.tanh(out)
    }
}

/// Patch classifier over the channel stack of a conditioning image and a
/// candidate ego image; emits a grid of probabilities.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub store: ParamStore,
    layers: Vec<Down>,
    head: Conv2d,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig) -> Result<Self> {
        if config.base == 0 {
            return Err(Error::Config("discriminator base width must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let mut layers = Vec::new();
        let mut cin = 6;
        for i in 0..=config.layers {
            let w = config.base << i.min(3);
            let stride = if i < config.layers { 2 } else { 1 };
            let conv = Conv2d::new(&mut store, &format!("d{i}.conv"), cin, w, 4, stride, 1, true, &normal(), &mut rng);
            let n = if i == 0 {
                None
            } else {
                norm(&mut store, &format!("d{i}.norm"), w, config.max_groups, &mut rng)
            };
            layers.push(Down { conv, norm: n });
            cin = w;
        }
        let head = Conv2d::new(&mut store, "head.conv", cin, 1, 4, 1, 1, true, &normal(), &mut rng);
        Ok(Self {
            config,
            store,
            layers,
            head,
        })
    }

    /// Probabilities for a `[N, 6, H, W]` stack.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let mut h = x;
        for l in &self.layers {
            h = l.conv.forward(g, h);
            h = apply(g, &l.norm, h);
            h = g.leaky_relu(h, LEAK);
        }
        let logits = self.head.forward(g, h);
        g.sigmoid(logits)
    }

    /// Smallest input side that still leaves a non-empty patch grid.
    pub fn min_input(&self) -> usize {
        // Each stride-2 layer halves; the two k4 s1 p1 layers lose one each.
        3 << self.config.layers.min(20)
    }
}
