//! Regenerates the committed test fixtures under `tests/fixtures/`.
//!
//! `base/` holds three random layers (N = 64, D = 8); `rotated/` holds the
//! same layers times a dense random orthogonal matrix per layer. `labels/`
//! holds a 2-class task over the 64 tokens.
//!
//!     cargo run -p hrsa --example gen_fixtures

use std::path::PathBuf;

use hrsa::store::{
    corpus_fingerprint, write_activation_set, write_label_set, ActivationSet, LabelSet, Labels,
    SourceDtype, Splits,
};
use hrsa::synth;
use nalgebra::DMatrix;

const N: usize = 64;
const D: usize = 8;
const LAYERS: usize = 3;

fn main() -> hrsa::Result<()> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let token_ids: Vec<i64> = (0..N as i64).map(|t| 1000 + 7 * t).collect();
    let fp = corpus_fingerprint(&token_ids);
    let mut rng = synth::rng(20240611);

    let mut base = Vec::new();
    let mut rotated = Vec::new();
    for l in 0..LAYERS {
        // Anisotropic columns keep the dimension-wise statistics informative.
        let scale = DMatrix::from_fn(D, D, |i, j| {
            if i == j {
                1.0 + (i + l) as f64 * 0.5
            } else {
                0.0
            }
        });
        let x = synth::gaussian(&mut rng, N, D) * scale;
        let q = synth::orthogonal(&mut rng, D);
        rotated.push(&x * q);
        base.push(x);
    }
    let base = ActivationSet::from_matrices("toy-base", &fp, SourceDtype::F64, base)?;
    let rotated = ActivationSet::from_matrices("toy-rotated", &fp, SourceDtype::F64, rotated)?;
    write_activation_set(&base, &root.join("base"))?;
    write_activation_set(&rotated, &root.join("rotated"))?;

    // Label = sign of the first base coordinate at the last layer.
    let last = base.layers()[LAYERS - 1].data();
    let values: Vec<usize> = (0..N).map(|i| usize::from(last[(i, 0)] > 0.0)).collect();
    let splits = Splits {
        train: (0..40).collect(),
        dev: (40..52).collect(),
        test: (52..N).collect(),
    };
    let labels = LabelSet::new(
        Labels::Classes {
            values,
            num_classes: 2,
        },
        splits,
    )?;
    write_label_set(&labels, &root.join("labels"))?;
    println!("wrote fixtures to {}", root.display());
    Ok(())
}
