//! CTC from three angles on one tiny instance: the log-space dynamic
//! program against brute-force path enumeration, greedy best-path
//! decoding, and the incremental prefix scorer used by beam search.
//!
//!     cargo run --release --example ctc_forward_backward

use lipvsr::ctc::{collapse, ctc_loss, greedy_decode, reference, CtcPrefixScorer};
use lipvsr::rng::SplitRng;
use lipvsr::tensor::Tensor;

fn main() -> lipvsr::Result<()> {
    // The classic hand-checkable case: two frames, uniform rows over
    // {blank, a}; target "a" can align as a.a, a.-, -.a.
    let uniform = Tensor::from_vec(&[2, 2], vec![0.5f64.ln(); 4])?;
    let loss = ctc_loss(&uniform, &[1])?;
    println!(
        "uniform 2x2, target [a]: p = {:.4} (exact 0.75), loss = {:.6}",
        (-loss.value()).exp(),
        loss.value()
    );

    // A random instance: the DP must match summing all V^T paths.
    let mut rng = SplitRng::new(3);
    let logits: Vec<f64> = (0..5 * 3).map(|_| rng.uniform_in(-1.5, 1.5)).collect();
    let lp = Tensor::from_vec(&[5, 3], logits)?.log_softmax(1)?;
    let target = vec![1usize, 2];
    let dp = ctc_loss(&lp, &target)?.value();
    let brute = reference::nll_by_enumeration(&lp, &target);
    println!("random 5x3, target [1,2]: dp {dp:.12} vs enumeration {brute:.12}");

    // Gradient flows back to the (taped) log-probabilities.
    let taped = Tensor::param(&[5, 3], lp.data_vec())?;
    let loss = ctc_loss(&taped, &target)?.loss.unwrap();
    loss.backward()?;
    let g = taped.grad_vec().unwrap();
    println!("frame-0 gradient row: {:?}", &g[..3]);

    // Collapse and greedy decoding.
    println!("collapse([-, a, a, -, b]) = {:?}", collapse(&[0, 1, 1, 0, 2]));
    println!("greedy path = {:?}", greedy_decode(&lp)?);

    // Prefix scoring: chaining extensions reproduces the loss exactly.
    let scorer = CtcPrefixScorer::new(&lp)?;
    let mut state = scorer.initial();
    println!("psi(empty) = {:.6}, terminal = {:.6}", state.score(), state.terminal());
    for (i, &c) in target.iter().enumerate() {
        let (psi, next) = scorer.extend(&target[..i], c, &state)?;
        println!("psi after token {c}: {psi:.6}");
        state = next;
    }
    println!(
        "terminal({target:?}) = {:.12}, -loss = {:.12}",
        state.terminal(),
        -dp
    );
    Ok(())
}
