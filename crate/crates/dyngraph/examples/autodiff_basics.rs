//! Tape-based reverse-mode differentiation from first principles: record a
//! small computation, backpropagate, and cross-check one gradient against a
//! central finite difference.

use dyngraph::params::ParamBank;
use dyngraph::tensor::check::finite_diff_grads;
use dyngraph::tensor::tape::Tape;
use dyngraph::tensor::Tensor;
use dyngraph::Result;

fn main() -> Result<()> {
    // Two named parameters: a 2x3 weight and a length-3 bias.
    let mut bank = ParamBank::<f64>::new();
    bank.insert("w", Tensor::from_vec(&[2, 3], vec![0.5, -1.0, 0.25, 2.0, 0.75, -0.5])?);
    bank.insert("b", Tensor::from_vec(&[3], vec![0.1, -0.2, 0.3])?);

    // loss(w, b) = mean(tanh(x·w + b)²), a pure function of the bank, so the
    // same closure drives both backpropagation and finite differences.
    let x = Tensor::from_vec(&[4, 2], vec![1.0, 2.0, -0.5, 0.25, 3.0, -1.0, 0.0, 1.5])?;
    let forward = |tape: &mut Tape<f64>, bank: &ParamBank<f64>| -> Result<_> {
        let w = bank.var(tape, "w")?;
        let b = bank.var(tape, "b")?;
        let xs = tape.constant(x.clone())?;
        let h = tape.matmul(xs, w)?; // (4, 3)
        let b_row = tape.reshape(b, &[1, 3])?;
        let h = tape.add(h, b_row)?; // bias broadcast over rows
        let t = tape.tanh(h)?;
        let sq = tape.mul(t, t)?;
        tape.mean_all(sq)
    };

    // One tape per forward pass; backward consumes the recorded graph.
    let mut tape = Tape::new();
    let loss = forward(&mut tape, &bank)?;
    println!("loss = {:.6}", tape.value(loss).item());
    let grads = tape.backward(loss)?;

    for name in ["w", "b"] {
        let g = grads.get(name).expect("every parameter gets a gradient");
        println!("d loss / d {name} = {:?}", g.data());
    }

    // The finite-difference probe replays the forward pass with nudged
    // parameters; agreement to ~1e-10 in f64 is what "correct" looks like.
    let fd = finite_diff_grads(&bank, 1e-5, &|bank| {
        let mut tape = Tape::new();
        let loss = forward(&mut tape, bank)?;
        Ok(tape.value(loss).item())
    })?;
    let auto_w = grads.get("w").unwrap();
    let mut worst = 0.0f64;
    for (i, &fd_i) in fd["w"].iter().enumerate() {
        let a = auto_w.data()[i];
        worst = worst.max((a - fd_i).abs() / a.abs().max(fd_i.abs()).max(1e-8));
    }
    println!("worst relative error vs finite differences on w: {worst:.3e}");
    assert!(worst < 1e-7, "autodiff should match finite differences");
    Ok(())
}
