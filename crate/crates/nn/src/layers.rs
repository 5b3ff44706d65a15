//! Parameter-owning layer handles. Each layer registers its arrays in a
//! [`ParamStore`] under a name prefix and applies itself on a [`Graph`].

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::params::{Init, ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        init: &Init,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), &[cout, cin, kernel, kernel], init, rng);
        let bias = bias.then(|| store.add(format!("{name}.bias"), &[cout], &Init::Zeros, rng));
        Self {
            weight,
            bias,
            stride,
            pad,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        g.conv2d(x, self.weight, self.bias, self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        init: &Init,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), &[cin, cout, kernel, kernel], init, rng);
        let bias = bias.then(|| store.add(format!("{name}.bias"), &[cout], &Init::Zeros, rng));
        Self {
            weight,
            bias,
            stride,
            pad,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        g.conv_transpose2d(x, self.weight, self.bias, self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl GroupNorm {
    /// Uses the largest group count ≤ `max_groups` that divides `channels`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        max_groups: usize,
        rng: &mut R,
    ) -> Self {
        let groups = (1..=max_groups.min(channels).max(1))
            .rev()
            .find(|g| channels % g == 0)
            .unwrap_or(1);
        Self {
            gamma: store.add(format!("{name}.gamma"), &[channels], &Init::Constant(1.0), rng),
            beta: store.add(format!("{name}.beta"), &[channels], &Init::Zeros, rng),
            groups,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        g.group_norm(x, self.gamma, self.beta, self.groups)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        din: usize,
        dout: usize,
        init: &Init,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), &[dout, din], init, rng),
            bias: Some(store.add(format!("{name}.bias"), &[dout], &Init::Zeros, rng)),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        g.linear(x, self.weight, self.bias)
    }
}
