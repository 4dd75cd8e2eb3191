//! Layers built on the autodiff [`Graph`].

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Matrix;

/// `y = x·W + b`, `W` stored as `in × out`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let weight = store.add_uniform(&format!("{name}.weight"), input, output, input, rng);
        let bias = store.add_uniform(&format!("{name}.bias"), 1, output, input, rng);
        Self {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(x, w);
        g.add_bias(y, b)
    }

    pub fn param_count(&self) -> usize {
        self.input * self.output + self.output
    }

    pub fn zero(&self, store: &mut ParamStore) {
        store.value_mut(self.weight).data_mut().fill(0.0);
        store.value_mut(self.bias).data_mut().fill(0.0);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub width: usize,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Matrix::filled(1, width, 1.0));
        let beta = store.add(format!("{name}.beta"), Matrix::zeros(1, width));
        Self { gamma, beta, width }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta)
    }

    pub fn param_count(&self) -> usize {
        2 * self.width
    }
}

/// Multi-head attention with separate query/key/value/output projections.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize, rng: &mut impl Rng) -> Self {
        assert!(heads > 0 && width.is_multiple_of(heads), "width {width} not divisible by {heads} heads");
        Self {
            query: Linear::new(store, &format!("{name}.q"), width, width, rng),
            key: Linear::new(store, &format!("{name}.k"), width, width, rng),
            value: Linear::new(store, &format!("{name}.v"), width, width, rng),
            out: Linear::new(store, &format!("{name}.o"), width, width, rng),
            heads,
        }
    }

    /// `queries` is `(batch·sq) × d`; `context` is `(batch·sk) × d`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        queries: Var,
        context: Var,
        batch: usize,
        causal: bool,
    ) -> Var {
        let q = self.query.forward(g, store, queries);
        let k = self.key.forward(g, store, context);
        let v = self.value.forward(g, store, context);
        let a = g.attention(q, k, v, batch, self.heads, causal);
        self.out.forward(g, store, a)
    }

    pub fn param_count(&self) -> usize {
        self.query.param_count() + self.key.param_count() + self.value.param_count() + self.out.param_count()
    }
}

/// Post-norm transformer encoder layer:
/// `x ← LN(x + MHA(x))`, `x ← LN(x + W₂·GELU(W₁·x))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderLayer {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm2: LayerNorm,
}

impl EncoderLayer {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize, ff_width: usize, rng: &mut impl Rng) -> Self {
        Self {
            attention: MultiHeadAttention::new(store, &format!("{name}.attn"), width, heads, rng),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), width),
            ff1: Linear::new(store, &format!("{name}.ff1"), width, ff_width, rng),
            ff2: Linear::new(store, &format!("{name}.ff2"), ff_width, width, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), width),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, batch: usize, causal: bool) -> Var {
        let a = self.attention.forward(g, store, x, x, batch, causal);
        let r = g.add(x, a);
        let x1 = self.norm1.forward(g, store, r);
        let h = self.ff1.forward(g, store, x1);
        let h = g.gelu(h);
        let h = self.ff2.forward(g, store, h);
        let r = g.add(x1, h);
        self.norm2.forward(g, store, r)
    }

    pub fn param_count(&self) -> usize {
        self.attention.param_count()
            + self.norm1.param_count()
            + self.ff1.param_count()
            + self.ff2.param_count()
            + self.norm2.param_count()
    }
}

/// A stack of encoder layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub layers: Vec<EncoderLayer>,
}

impl Encoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        depth: usize,
        width: usize,
        heads: usize,
        ff_width: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..depth)
            .map(|i| EncoderLayer::new(store, &format!("{name}.layer{i}"), width, heads, ff_width, rng))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, mut x: Var, batch: usize, causal: bool) -> Var {
        for layer in &self.layers {
            x = layer.forward(g, store, x, batch, causal);
        }
        x
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(EncoderLayer::param_count).sum()
    }
}

/// Cross-attention fusion: `LN(q + MHA(q, context))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossAttention {
    pub attention: MultiHeadAttention,
    pub norm: LayerNorm,
}

impl CrossAttention {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize, rng: &mut impl Rng) -> Self {
        Self {
            attention: MultiHeadAttention::new(store, &format!("{name}.attn"), width, heads, rng),
            norm: LayerNorm::new(store, &format!("{name}.norm"), width),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, queries: Var, context: Var, batch: usize) -> Var {
        let a = self.attention.forward(g, store, queries, context, batch, false);
        let r = g.add(queries, a);
        self.norm.forward(g, store, r)
    }

    pub fn param_count(&self) -> usize {
        self.attention.param_count() + self.norm.param_count()
    }
}

/// Sinusoidal encoding of absolute position `pos`:
/// `sin(pos / 10000^(2i/d))` on even columns, `cos` on odd ones.
pub fn sinusoid(pos: f64, width: usize) -> Vec<f64> {
    (0..width)
        .map(|c| {
            let pair = (c / 2) as f64;
            let freq = libm::pow(10000.0, -2.0 * pair / width as f64);
            if c % 2 == 0 {
                libm::sin(pos * freq)
            } else {
                libm::cos(pos * freq)
            }
        })
        .collect()
}

/// Rows of [`sinusoid`] at the given positions.
pub fn sinusoid_table(positions: impl IntoIterator<Item = usize>, width: usize) -> Matrix {
    let mut data = Vec::new();
    let mut rows = 0;
    for p in positions {
        data.extend(sinusoid(p as f64, width));
        rows += 1;
    }
    Matrix::from_vec(rows, width, data)
}

/// Tiles `table` (one sequence) `batch` times.
pub fn tile_rows(table: &Matrix, batch: usize) -> Matrix {
    let mut data = Vec::with_capacity(table.len() * batch);
    for _ in 0..batch {
        data.extend_from_slice(table.data());
    }
    Matrix::from_vec(table.rows() * batch, table.cols(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn encoder_layer_param_count_matches_store() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = EncoderLayer::new(&mut store, "enc", 64, 8, 2048, &mut rng);
        assert_eq!(layer.param_count(), store.scalar_count());
        // 4·(64·64+64) + 2·128 + (64·2048+2048) + (2048·64+64)
        assert_eq!(layer.param_count(), 16_640 + 256 + 133_120 + 131_136);
    }

    #[test]
    fn sinusoid_first_columns() {
        let row = sinusoid(3.0, 8);
        assert!((row[0] - libm::sin(3.0)).abs() < 1e-15);
        assert!((row[1] - libm::cos(3.0)).abs() < 1e-15);
        assert!((row[2] - libm::sin(3.0 / 10.0)).abs() < 1e-15);
    }
}
