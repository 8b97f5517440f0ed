//! Minimal numeric core: dense tensors, a reverse-mode tape, LSTM cells,
//! the Adam optimizer, gradient checking and named-tensor checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod lstm;
pub mod params;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use graph::{cross_entropy, sigmoid, softmax, Graph, Var, PROB_FLOOR};
pub use lstm::{lstm_forward, LstmCell};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;

/// Default global-norm gradient clip.
pub const CLIP_NORM: f64 = 5.0;

/// Half-width of the uniform initialisation range for a weight with the
/// given fan-in.
pub fn init_bound(fan_in: usize) -> f64 {
    if fan_in == 0 {
        0.0
    } else {
        1.0 / (fan_in as f64).sqrt()
    }
}

/// Registers a `rows × cols` weight initialised uniformly in
/// `±1/sqrt(rows)`.
pub fn init_weight<R: rand::Rng + ?Sized>(
    store: &mut ParamStore,
    name: impl Into<String>,
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> ParamId {
    store.register(name, Tensor::uniform(rows, cols, init_bound(rows), rng))
}

pub fn init_bias(store: &mut ParamStore, name: impl Into<String>, cols: usize) -> ParamId {
    store.register(name, Tensor::zeros(1, cols))
}

/// One optimizer step on the mean loss of `batch`.
///
/// Per-example gradients are computed in parallel and summed in batch
/// order, so results do not depend on thread scheduling. `adjust` runs on
/// the averaged gradient before clipping (e.g. to freeze rows). Returns the
/// mean loss and each example's auxiliary output.
pub fn minibatch_step<T, O, F, A>(
    store: &mut ParamStore,
    adam: &mut AdamState,
    batch: &[T],
    clip_norm: Option<f64>,
    example: F,
    adjust: A,
) -> crate::Result<(f64, Vec<O>)>
where
    T: Sync,
    O: Send,
    F: Fn(&ParamStore, &T) -> crate::Result<(f64, Gradients, O)> + Sync,
    A: FnOnce(&mut Gradients),
{
    use rayon::prelude::*;

    if batch.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let frozen: &ParamStore = store;
    let results: Vec<(f64, Gradients, O)> = batch
        .par_iter()
        .map(|item| example(frozen, item))
        .collect::<crate::Result<_>>()?;
    let mut total = Gradients::empty(store.len());
    let mut loss = 0.0;
    let mut outputs = Vec::with_capacity(results.len());
    for (l, g, o) in results {
        loss += l;
        total.add(&g);
        outputs.push(o);
    }
    let scale = 1.0 / batch.len() as f64;
    total.scale(scale);
    adjust(&mut total);
    if !total.all_finite() || !loss.is_finite() {
        return Err(crate::Error::NonFinite("minibatch loss or gradient".into()));
    }
    if let Some(max) = clip_norm {
        total.clip_global_norm(max);
    }
    adam_step(store, &total, adam)?;
    Ok((loss * scale, outputs))
}
