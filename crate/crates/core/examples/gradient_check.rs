//! Compare backpropagated LSTM gradients against central differences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use treehole::neural::gradcheck::check_gradients;
use treehole::neural::{init_bias, init_weight, Graph, LstmCell, ParamStore, Tensor};

fn main() -> treehole::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let cell = LstmCell::new(&mut store, "lstm", 4, 3, &mut rng);
    let w = init_weight(&mut store, "out.w", 3, 2, &mut rng);
    let b = init_bias(&mut store, "out.b", 2);
    let x = Tensor::uniform(5, 4, 1.0, &mut rng);

    let loss = |store: &ParamStore| -> treehole::Result<(f64, treehole::neural::Gradients)> {
        let mut g = Graph::new(store);
        let xs = g.constant(x.clone());
        let h = cell.forward(&mut g, xs)?;
        let last = g.row(h, 4)?;
        let (wv, bv) = (g.param(w), g.param(b));
        let logits = g.matmul(last, wv)?;
        let logits = g.add_bias(logits, bv)?;
        let p = g.softmax(logits)?;
        let l = g.cross_entropy(p, 1)?;
        Ok((g.value(l).data()[0], g.backward(l)?))
    };
    let (value, grads) = loss(&store)?;
    let ids: Vec<_> = store.ids().collect();
    let report = check_gradients(&mut store, &ids, 1e-5, 1e-8, |s| loss(s).map(|r| r.0), &grads)?;
    println!("loss {value:.6}");
    println!(
        "checked {} entries, worst relative error {:.2e} ({}[{}])",
        report.entries_checked, report.max_relative_error, report.worst_param, report.worst_index
    );
    Ok(())
}
