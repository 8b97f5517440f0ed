use rand::Rng;

use crate::error::{Error, Result};

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use super::init_bound;

/// A single-layer LSTM. Gate blocks are packed column-wise in the order
/// input, forget, candidate, output:
///
/// ```text
/// [i f g o] = x·W_in + h·W_hid + b
/// c' = σ(f)∘c + σ(i)∘tanh(g)
/// h' = σ(o)∘tanh(c')
/// ```
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmCell {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
}

impl LstmCell {
    /// Registers `{prefix}.w_input`, `{prefix}.w_hidden` and `{prefix}.bias`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut R,
    ) -> Self {
        let gates = 4 * hidden_size;
        let w_input = store.register(
            format!("{prefix}.w_input"),
            Tensor::uniform(input_size, gates, init_bound(input_size), rng),
        );
        let w_hidden = store.register(
            format!("{prefix}.w_hidden"),
            Tensor::uniform(hidden_size, gates, init_bound(hidden_size), rng),
        );
        let bias = store.register(format!("{prefix}.bias"), Tensor::zeros(1, gates));
        Self {
            input_size,
            hidden_size,
            w_input,
            w_hidden,
            bias,
        }
    }

    pub fn check_shapes(&self, store: &ParamStore) -> Result<()> {
        let gates = 4 * self.hidden_size;
        let expect = [
            (self.w_input, [self.input_size, gates]),
            (self.w_hidden, [self.hidden_size, gates]),
            (self.bias, [1, gates]),
        ];
        for (id, shape) in expect {
            if store.get(id).shape() != shape {
                return Err(Error::shape(
                    "lstm",
                    format!(
                        "{} has shape {:?}, expected {shape:?}",
                        store.name(id),
                        store.get(id).shape()
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Runs the recurrence over the rows of `inputs` (`n × input_size`)
    /// from zero initial state and returns the `n × hidden_size` matrix of
    /// hidden states.
    pub fn forward(&self, g: &mut Graph<'_>, inputs: Var) -> Result<Var> {
        let zero = Tensor::zeros(1, self.hidden_size);
        let h0 = g.constant(zero.clone());
        let c0 = g.constant(zero);
        self.forward_from(g, inputs, h0, c0)
    }

    pub fn forward_from(&self, g: &mut Graph<'_>, inputs: Var, h0: Var, c0: Var) -> Result<Var> {
        let [n, width] = g.shape(inputs);
        if width != self.input_size {
            return Err(Error::shape(
                "lstm_forward",
                format!("input width {width}, cell expects {}", self.input_size),
            ));
        }
        for (name, v) in [("h0", h0), ("c0", c0)] {
            if g.shape(v) != [1, self.hidden_size] {
                return Err(Error::shape(
                    "lstm_forward",
                    format!("{name} has shape {:?}", g.shape(v)),
                ));
            }
        }
        let hs = self.hidden_size;
        if n == 0 {
            return g.stack_rows(&[], hs);
        }
        let w_in = g.param(self.w_input);
        let w_hid = g.param(self.w_hidden);
        let bias = g.param(self.bias);
        // Input projections for every step at once.
        let xw = g.matmul(inputs, w_in)?;
        let xw = g.add_bias(xw, bias)?;

        let (mut h, mut c) = (h0, c0);
        let mut states = Vec::with_capacity(n);
        for t in 0..n {
            let x_t = g.row(xw, t)?;
            let h_t = g.matmul(h, w_hid)?;
            let gates = g.add(x_t, h_t)?;
            let i = g.slice_cols(gates, 0, hs)?;
            let f = g.slice_cols(gates, hs, hs)?;
            let cand = g.slice_cols(gates, 2 * hs, hs)?;
            let o = g.slice_cols(gates, 3 * hs, hs)?;
            let i = g.sigmoid(i);
            let f = g.sigmoid(f);
            let cand = g.tanh(cand);
            let o = g.sigmoid(o);
            let keep = g.mul(f, c)?;
            let write = g.mul(i, cand)?;
            c = g.add(keep, write)?;
            let tc = g.tanh(c);
            h = g.mul(o, tc)?;
            states.push(h);
        }
        g.stack_rows(&states, hs)
    }
}

/// Convenience wrapper: hidden states for a plain sequence of input vectors.
pub fn lstm_forward(
    store: &ParamStore,
    cell: &LstmCell,
    inputs: &[Vec<f64>],
    h0: &[f64],
    c0: &[f64],
) -> Result<Vec<Vec<f64>>> {
    for (t, x) in inputs.iter().enumerate() {
        if x.len() != cell.input_size {
            return Err(Error::shape(
                "lstm_forward",
                format!("input {t} has {} entries, expected {}", x.len(), cell.input_size),
            ));
        }
    }
    let mut g = Graph::new(store);
    let x = if inputs.is_empty() {
        g.constant(Tensor::zeros(0, cell.input_size))
    } else {
        g.constant(Tensor::from_rows(inputs)?)
    };
    let h0 = g.constant(Tensor::row_vector(h0.to_vec()));
    let c0 = g.constant(Tensor::row_vector(c0.to_vec()));
    let hs = cell.forward_from(&mut g, x, h0, c0)?;
    let out = g.value(hs);
    Ok((0..out.rows()).map(|r| out.row(r).to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    // Scalar re-statement of the recurrence, sharing nothing with the tape.
    fn scalar_lstm(store: &ParamStore, cell: &LstmCell, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let hs = cell.hidden_size;
        let wi = store.get(cell.w_input);
        let wh = store.get(cell.w_hidden);
        let b = store.get(cell.bias);
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut h = vec![0.0; hs];
        let mut c = vec![0.0; hs];
        let mut out = Vec::new();
        for x in xs {
            let mut z = vec![0.0; 4 * hs];
            for (k, zk) in z.iter_mut().enumerate() {
                let mut s = b.get(0, k);
                for (j, xj) in x.iter().enumerate() {
                    s += xj * wi.get(j, k);
                }
                for (j, hj) in h.iter().enumerate() {
                    s += hj * wh.get(j, k);
                }
                *zk = s;
            }
            for u in 0..hs {
                let i = sig(z[u]);
                let f = sig(z[hs + u]);
                let gg = z[2 * hs + u].tanh();
                let o = sig(z[3 * hs + u]);
                c[u] = f * c[u] + i * gg;
                h[u] = o * c[u].tanh();
            }
            out.push(h.clone());
        }
        out
    }

    #[test]
    fn zero_parameters_give_zero_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "l", 3, 4, &mut rng);
        store.zero_all();
        let xs = vec![vec![1.0, -2.0, 3.0], vec![0.5, 0.5, 0.5]];
        let hs = lstm_forward(&store, &cell, &xs, &[0.0; 4], &[0.0; 4]).unwrap();
        assert_eq!(hs.len(), 2);
        assert!(hs.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_sequence_gives_empty_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "l", 2, 2, &mut rng);
        let hs = lstm_forward(&store, &cell, &[], &[0.0; 2], &[0.0; 2]).unwrap();
        assert!(hs.is_empty());
    }

    #[test]
    fn matches_scalar_recurrence() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let cell = LstmCell::new(&mut store, "l", 3, 2, &mut rng);
            let b = store.get_mut(cell.bias);
            *b = Tensor::uniform(1, 8, 0.5, &mut rng);
            let xs: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let got = lstm_forward(&store, &cell, &xs, &[0.0; 2], &[0.0; 2]).unwrap();
            let want = scalar_lstm(&store, &cell, &xs);
            for (a, b) in got.iter().flatten().zip(want.iter().flatten()) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn rejects_wrong_input_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "l", 3, 2, &mut rng);
        let err = lstm_forward(&store, &cell, &[vec![1.0, 2.0]], &[0.0; 2], &[0.0; 2]);
        assert!(matches!(err, Err(Error::Shape { .. })));
    }
}
