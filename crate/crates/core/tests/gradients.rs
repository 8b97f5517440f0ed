mod common;

use common::grad::{run_seed, shape, LAYERS, TOLERANCE};

#[test]
fn every_layer_matches_central_differences() {
    let mut worst = [0.0f64; 8];
    for seed in 0..48 {
        let errs = run_seed(seed);
        for (w, e) in worst.iter_mut().zip(errs) {
            *w = w.max(e);
        }
        for (layer, e) in LAYERS.iter().zip(errs) {
            assert!(e < TOLERANCE, "{layer}, seed {seed}, shape {:?}: relative error {e:.3e}", shape(seed));
        }
    }
    for (layer, e) in LAYERS.iter().zip(worst) {
        println!("{layer:<28} worst {e:.2e}");
    }
}

#[test]
fn grid_is_covered() {
    let shapes: std::collections::BTreeSet<_> = (0..24).map(shape).collect();
    assert_eq!(shapes.len(), 12);
}
