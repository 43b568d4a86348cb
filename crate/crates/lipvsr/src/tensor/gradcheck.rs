//! Central-difference verification of analytic gradients.

use super::Tensor;
use crate::error::{Error, Result};

/// Compares analytic gradients of a scalar-valued function against central
/// finite differences over every element of every parameter.
///
/// `f` must rebuild the forward pass from the parameters' *current* values
/// on each call and be deterministic. Returns the maximum over parameter
/// elements of `|analytic - central| / max(1, |analytic|)`.
pub fn finite_difference_check<F>(f: &mut F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: FnMut() -> Result<Tensor>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::contract(format!(
            "finite_difference_check eps {eps} outside [1e-7, 1e-3]"
        )));
    }
    let base_a = f()?.item();
    let base_b = f()?.item();
    if base_a.to_bits() != base_b.to_bits() {
        return Err(Error::Check(format!(
            "function is not deterministic: {base_a} vs {base_b}"
        )));
    }

    for p in params {
        p.zero_grad();
    }
    let loss = f()?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad_vec().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let mut max_err: f64 = 0.0;
    for (p, grads) in params.iter().zip(&analytic) {
        for i in 0..p.numel() {
            let orig = p.data()[i];
            p.with_data_mut(|d| d[i] = orig + eps);
            let up = f()?.item();
            p.with_data_mut(|d| d[i] = orig - eps);
            let down = f()?.item();
            p.with_data_mut(|d| d[i] = orig);
            let central = (up - down) / (2.0 * eps);
            let err = (grads[i] - central).abs() / grads[i].abs().max(1.0);
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitRng;

    #[test]
    fn quadratic_is_exact_up_to_rounding() {
        let x = Tensor::param(&[1], vec![3.0]).unwrap();
        let xc = x.clone();
        let mut f = move || xc.mul(&xc);
        let err = finite_difference_check(&mut f, &[x], 1e-5).unwrap();
        assert!(err <= 1e-6, "err {err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::param(&[2], vec![1.0, -1.0]).unwrap();
        let xc = x.clone();
        let mut f = move || xc.scale(0.0).and_then(|t| t.sum_all())?.add_scalar(4.0);
        let err = finite_difference_check(&mut f, &[x], 1e-4).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn eps_out_of_range_rejected() {
        let x = Tensor::param(&[1], vec![1.0]).unwrap();
        let xc = x.clone();
        let mut f = move || xc.mul(&xc);
        assert!(finite_difference_check(&mut f, &[x.clone()], 1e-2).is_err());
        assert!(finite_difference_check(&mut f, &[x], 1e-8).is_err());
    }

    #[test]
    fn nondeterministic_function_rejected() {
        let x = Tensor::param(&[1], vec![1.0]).unwrap();
        let mut rng = SplitRng::new(3);
        let xc = x.clone();
        let mut f = move || xc.scale(rng.uniform() + 0.5)?.sum_all();
        let err = finite_difference_check(&mut f, &[x], 1e-5);
        assert!(matches!(err, Err(Error::Check(_))));
    }

    /// Every primitive passes a finite-difference check on random small
    /// inputs, across 100 seeds.
    #[test]
    fn all_primitives_pass_fd_check() {
        #[allow(clippy::type_complexity)]
        let cases: Vec<(&str, Box<dyn Fn(&[Tensor]) -> crate::error::Result<Tensor>>, Vec<Vec<usize>>)> = vec![
            (
                "add",
                Box::new(|p: &[Tensor]| p[0].add(&p[1])?.sum_all()),
                vec![vec![3, 4], vec![3, 4]],
            ),
            (
                "sub",
                Box::new(|p: &[Tensor]| p[0].sub(&p[1])?.mul(&p[0])?.sum_all()),
                vec![vec![2, 5], vec![2, 5]],
            ),
            (
                "mul",
                Box::new(|p: &[Tensor]| p[0].mul(&p[1])?.sum_all()),
                vec![vec![4, 2], vec![4, 2]],
            ),
            (
                "scale_add_scalar",
                Box::new(|p: &[Tensor]| p[0].scale(1.7)?.add_scalar(0.3)?.mul(&p[0])?.sum_all()),
                vec![vec![6]],
            ),
            (
                "add_rowvec",
                Box::new(|p: &[Tensor]| p[0].add_rowvec(&p[1])?.mul(&p[0])?.sum_all()),
                vec![vec![3, 4], vec![4]],
            ),
            (
                "mul_rowvec",
                Box::new(|p: &[Tensor]| p[0].mul_rowvec(&p[1])?.sum_all()),
                vec![vec![3, 4], vec![4]],
            ),
            (
                "relu",
                Box::new(|p: &[Tensor]| p[0].relu()?.mul(&p[0])?.sum_all()),
                vec![vec![5, 3]],
            ),
            (
                "sigmoid",
                Box::new(|p: &[Tensor]| p[0].sigmoid()?.sum_all()),
                vec![vec![7]],
            ),
            (
                "tanh",
                Box::new(|p: &[Tensor]| p[0].tanh()?.mul(&p[0])?.sum_all()),
                vec![vec![4]],
            ),
            (
                "swish",
                Box::new(|p: &[Tensor]| p[0].swish()?.sum_all()),
                vec![vec![6]],
            ),
            (
                "exp",
                Box::new(|p: &[Tensor]| p[0].exp()?.sum_all()),
                vec![vec![5]],
            ),
            (
                "log",
                Box::new(|p: &[Tensor]| p[0].mul(&p[0])?.add_scalar(1.0)?.log()?.sum_all()),
                vec![vec![5]],
            ),
            (
                "matmul",
                Box::new(|p: &[Tensor]| p[0].matmul(&p[1])?.mul(&p[0].matmul(&p[1])?)?.sum_all()),
                vec![vec![3, 4], vec![4, 2]],
            ),
            (
                "transpose",
                Box::new(|p: &[Tensor]| p[0].transpose()?.matmul(&p[0])?.sum_all()),
                vec![vec![3, 4]],
            ),
            (
                "layer_norm",
                Box::new(|p: &[Tensor]| p[0].layer_norm(1e-5)?.mul(&p[0])?.sum_all()),
                vec![vec![2, 6]],
            ),
            (
                "softmax",
                Box::new(|p: &[Tensor]| p[0].softmax(1)?.mul(&p[0])?.sum_all()),
                vec![vec![3, 5]],
            ),
            (
                "log_softmax",
                Box::new(|p: &[Tensor]| p[0].log_softmax(1)?.mul(&p[0])?.sum_all()),
                vec![vec![3, 5]],
            ),
            (
                "softmax_causal",
                Box::new(|p: &[Tensor]| p[0].softmax_causal(4)?.mul(&p[0])?.sum_all()),
                vec![vec![8, 4]],
            ),
            (
                "lse_excluding",
                Box::new(|p: &[Tensor]| p[0].lse_excluding(0)?.sum_all()),
                vec![vec![3, 4]],
            ),
            (
                "gather",
                Box::new(|p: &[Tensor]| p[0].gather(&[0, 3, 3, 5])?.mul(&p[0].gather(&[1, 1, 2, 4])?)?.sum_all()),
                vec![vec![6]],
            ),
            (
                "gather_rows",
                Box::new(|p: &[Tensor]| p[0].gather_rows(&[1, 0, 1])?.mul_rowvec(&p[1])?.sum_all()),
                vec![vec![2, 3], vec![3]],
            ),
            (
                "mean_all",
                Box::new(|p: &[Tensor]| p[0].mul(&p[0])?.mean_all()),
                vec![vec![3, 3]],
            ),
            (
                "mean_last",
                Box::new(|p: &[Tensor]| p[0].mean_last()?.mul(&p[0].mean_last()?)?.sum_all()),
                vec![vec![4, 3]],
            ),
            (
                "reshape_narrow_concat",
                Box::new(|p: &[Tensor]| {
                    let a = p[0].narrow(1, 0, 2)?;
                    let b = p[0].narrow(1, 2, 2)?;
                    Tensor::concat(1, &[b, a])?.reshape(&[8])?.mul(&p[0].reshape(&[8])?)?.sum_all()
                }),
                vec![vec![2, 4]],
            ),
            (
                "pad_time_replicate",
                Box::new(|p: &[Tensor]| p[0].pad_time_replicate(2)?.mul_rowvec(&p[1])?.sum_all()),
                vec![vec![2, 3, 2, 2], vec![2]],
            ),
            (
                "conv3d",
                Box::new(|p: &[Tensor]| {
                    p[0].conv3d(&p[1], &p[2], (1, 2, 2), (1, 1, 1))?.sum_all()
                }),
                vec![vec![2, 3, 5, 5], vec![2, 2, 3, 3, 3], vec![2]],
            ),
            (
                "conv2d",
                Box::new(|p: &[Tensor]| p[0].conv2d(&p[1], &p[2], 2, 1)?.mul_rowvec(&p[3])?.sum_all()),
                vec![vec![2, 6, 6], vec![3, 2, 3, 3], vec![3], vec![3]],
            ),
            (
                "conv1d_depthwise",
                Box::new(|p: &[Tensor]| p[0].conv1d_depthwise(&p[1], &p[2])?.sum_all()),
                vec![vec![6, 3], vec![3, 3], vec![3]],
            ),
        ];

        for (name, build, shapes) in &cases {
            for seed in 0..100u64 {
                let mut rng = SplitRng::new(1000 + seed);
                let params: Vec<Tensor> = shapes
                    .iter()
                    .map(|s| {
                        let n: usize = s.iter().product();
                        let mut data: Vec<f64> =
                            (0..n).map(|_| rng.uniform_in(-1.5, 1.5)).collect();
                        if *name == "relu" {
                            // Keep inputs away from the kink so central
                            // differences see a one-sided slope.
                            for v in &mut data {
                                if v.abs() < 0.05 {
                                    *v += if *v >= 0.0 { 0.1 } else { -0.1 };
                                }
                            }
                        }
                        Tensor::param(s, data).unwrap()
                    })
                    .collect();
                let p2 = params.clone();
                let mut f = move || build(&p2);
                let err = finite_difference_check(&mut f, &params, 1e-5)
                    .unwrap_or_else(|e| panic!("{name} seed {seed}: {e}"));
                assert!(err <= 1e-5, "{name} seed {seed}: fd error {err}");
            }
        }
    }
}
