use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    name: String,
    value: Tensor,
    decay: bool,
}

/// Named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. `decay` controls whether the optimizer applies
    /// weight decay to it.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor, decay: bool) -> ParamId {
        self.entries.push(Entry {
            name: name.into(),
            value,
            decay,
        });
        ParamId(self.entries.len() - 1)
    }

    /// 3x3 kernel `(c_out, c_in, 3, 3)` drawn from U(-b, b) with
    /// `b = sqrt(3 / fan_in)`, plus a zero bias.
    pub fn add_conv(
        &mut self,
        name: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut impl Rng,
    ) -> (ParamId, ParamId) {
        self.add_conv_with_gain(name, c_in, c_out, 1.0, rng)
    }

    /// [`Self::add_conv`] with weight variance `gain / fan_in`; use 2 for
    /// convs followed by ReLU.
    pub fn add_conv_with_gain(
        &mut self,
        name: &str,
        c_in: usize,
        c_out: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> (ParamId, ParamId) {
        let fan_in = (c_in * 9) as f64;
        let bound = (3.0 * gain / fan_in).sqrt();
        let w = Tensor::from_fn(&[c_out, c_in, 3, 3], |_| rng.gen_range(-bound..bound));
        let wid = self.add(format!("{name}.weight"), w, true);
        let bid = self.add(
            format!("{name}.bias"),
            Tensor::full(&[c_out], if gain > 1.0 { 0.1 } else { 0.0 }),
            true,
        );
        (wid, bid)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn decays(&self, id: ParamId) -> bool {
        self.entries[id.0].decay
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (ParamId(i), e.name.as_str(), &e.value))
    }

    /// Order-sensitive 64-bit FNV-1a digest over every parameter bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for e in &self.entries {
            for v in e.value.data() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }
}

/// Gradient accumulator shaped like a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct GradBuffer {
    grads: Vec<Tensor>,
}

impl GradBuffer {
    pub fn zeros_like(store: &ParamStore) -> Self {
        GradBuffer {
            grads: store.entries.iter().map(|e| e.value.zeros_like()).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn add_scaled(&mut self, id: ParamId, g: &Tensor, scale: f64) {
        for (a, b) in self.grads[id.0].data_mut().iter_mut().zip(g.data()) {
            *a += scale * b;
        }
    }

    pub fn merge(&mut self, other: &GradBuffer) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(Tensor::is_finite)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.02,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient:
///
/// ```text
/// v <- momentum * v + g + weight_decay * p
/// p <- p - lr * v
/// ```
///
/// Parameters registered with `decay = false` skip the weight-decay term.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub config: SgdConfig,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(config: SgdConfig, store: &ParamStore) -> Self {
        Sgd {
            config,
            velocity: store.entries.iter().map(|e| e.value.zeros_like()).collect(),
        }
    }

    pub fn velocity(&self, id: ParamId) -> &Tensor {
        &self.velocity[id.0]
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &GradBuffer) {
        let SgdConfig {
            lr,
            momentum,
            weight_decay,
        } = self.config;
        for (i, entry) in store.entries.iter_mut().enumerate() {
            let wd = if entry.decay { weight_decay } else { 0.0 };
            let v = self.velocity[i].data_mut();
            let p = entry.value.data_mut();
            let g = grads.grads[i].data();
            for k in 0..p.len() {
                v[k] = momentum * v[k] + g[k] + wd * p[k];
                p[k] -= lr * v[k];
            }
        }
    }
}
