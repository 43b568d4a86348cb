//! Reverse-mode autodiff in action: build a small expression, read exact
//! gradients, and verify them (and the full model objective) against
//! central finite differences.
//!
//!     cargo run --release --example autodiff_gradcheck

use lipvsr::data::Video;
use lipvsr::model::{ModelConfig, VsrModel};
use lipvsr::objective::HyperParams;
use lipvsr::rng::{salts, SplitRng};
use lipvsr::tensor::{finite_difference_check, Tensor};

fn main() -> lipvsr::Result<()> {
    // A scalar expression: loss = sum(relu(x W + b) * x W + b rows).
    let mut rng = SplitRng::new(7);
    let x = Tensor::param(&[3, 4], (0..12).map(|_| rng.uniform_in(-1.0, 1.0)).collect())?;
    let w = Tensor::param(&[4, 2], (0..8).map(|_| rng.uniform_in(-0.7, 0.7)).collect())?;
    let b = Tensor::param(&[2], vec![0.1, -0.2])?;
    let h = x.matmul(&w)?.add_rowvec(&b)?;
    let loss = h.relu()?.mul(&h)?.sum_all()?;
    loss.backward()?;
    println!("loss = {:.6}", loss.item());
    println!("dl/db = {:?}", b.grad_vec().unwrap());

    // The same gradients, checked numerically.
    let (xc, wc, bc) = (x.clone(), w.clone(), b.clone());
    let mut f = move || {
        let h = xc.matmul(&wc)?.add_rowvec(&bc)?;
        h.relu()?.mul(&h)?.sum_all()
    };
    let err = finite_difference_check(&mut f, &[x, w, b], 1e-5)?;
    println!("small-expression fd error: {err:.3e}");

    // And the full training objective of the micro recognizer, with
    // respect to every one of its parameters.
    let model = VsrModel::new(ModelConfig::micro(6), 42)?;
    let mut vrng = SplitRng::new(42).derive(salts::UTTERANCE, 0);
    let video = Video::new(
        (0..5 * 8 * 8).map(|_| vrng.uniform_in(-1.0, 1.0)).collect(),
        5,
        8,
        8,
        25.0,
    )?;
    let target = vec![3usize, 4];
    let tensors: Vec<Tensor> = model.params().into_iter().map(|(_, t)| t).collect();
    let total: usize = tensors.iter().map(|t| t.numel()).sum();
    let hp = HyperParams::default();
    let (m, v, t) = (&model, &video, &target);
    let mut f = move || {
        let (b, _) = m.forward_losses(v, t, &hp)?;
        Ok(b.total)
    };
    let err = finite_difference_check(&mut f, &tensors, 1e-5)?;
    println!("micro objective fd error over {total} parameters: {err:.3e}");
    Ok(())
}
