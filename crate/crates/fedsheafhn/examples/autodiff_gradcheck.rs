//! Builds a small network on the reverse-mode tape and validates every
//! gradient against central finite differences.
//!
//! cargo run --release --example autodiff_gradcheck

use fedsheafhn::autodiff::gradcheck::{central_diff, max_rel_err};
use fedsheafhn::autodiff::{Tape, Tensor};
use fedsheafhn::rng::{randn, stream};

fn main() {
    let mut rng = stream(11, &[1]);
    let x = randn(&[4, 3], 1.0, &mut rng);
    let w1 = randn(&[3, 5], 0.5, &mut rng);
    let b1 = randn(&[5], 0.1, &mut rng);
    let w2 = randn(&[5, 2], 0.5, &mut rng);
    let labels = vec![0usize, 1, 0, 1];
    let mask = vec![0usize, 1, 2, 3];

    // loss(w1, b1, w2) = masked cross-entropy of a two-layer tanh MLP.
    let forward = |flat: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let w1v = tape.leaf(Tensor::new(vec![3, 5], flat[..15].to_vec()).unwrap());
        let b1v = tape.leaf(Tensor::new(vec![5], flat[15..20].to_vec()).unwrap());
        let w2v = tape.leaf(Tensor::new(vec![5, 2], flat[20..].to_vec()).unwrap());
        let h = tape.matmul(xv, w1v).unwrap();
        let h = tape.add_row(h, b1v).unwrap();
        let h = tape.tanh(h).unwrap();
        let logits = tape.matmul(h, w2v).unwrap();
        let loss = tape.masked_cross_entropy(logits, &labels, &mask).unwrap();
        tape.value(loss).data()[0]
    };

    let mut flat: Vec<f64> = w1.data().to_vec();
    flat.extend_from_slice(b1.data());
    flat.extend_from_slice(w2.data());

    // Reverse-mode gradients from one tape.
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let w1v = tape.leaf(w1);
    let b1v = tape.leaf(b1);
    let w2v = tape.leaf(w2);
    let h = tape.matmul(xv, w1v).unwrap();
    let h = tape.add_row(h, b1v).unwrap();
    let h = tape.tanh(h).unwrap();
    let logits = tape.matmul(h, w2v).unwrap();
    let loss = tape.masked_cross_entropy(logits, &labels, &mask).unwrap();
    println!("loss = {:.6}", tape.value(loss).data()[0]);

    let grads = tape.backward(loss).expect("backward");
    let mut analytic = grads.wrt(w1v).into_data();
    analytic.extend(grads.wrt(b1v).into_data());
    analytic.extend(grads.wrt(w2v).into_data());

    let numeric = central_diff(forward, &flat, 1e-5);
    let err = max_rel_err(&analytic, &numeric);
    println!("checked {} parameters", flat.len());
    println!("max relative error reverse-mode vs central differences: {err:.2e}");
    assert!(err <= 1e-4);
    println!("gradcheck ok");
}
