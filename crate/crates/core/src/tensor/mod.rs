//! Dense `f32` tensors and the reverse-mode autodiff graph built on them.
//!
//! Activations are NCHW, conv kernels are OIKhKw, biases are flat [O].
//! Everything is 32-bit; reductions accumulate in f64 and summation order is
//! fixed so repeated forward passes are bitwise identical.

mod graph;
mod ops;

pub use graph::{Graph, NodeId};
pub use ops::conv2d_reference;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::ShapeMismatch(format!(
                "tensor data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(value: f32) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f32 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same data, new shape with identical element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::from_vec(shape, self.data.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    /// Central finite differences of a scalar function of a flat buffer.
    fn numeric_grad(mut f: impl FnMut(&[f32]) -> f32, x: &[f32], h: f32) -> Vec<f32> {
        let mut xp = x.to_vec();
        let mut grad = vec![0.0f32; x.len()];
        for i in 0..x.len() {
            xp[i] = x[i] + h;
            let lp = f(&xp);
            xp[i] = x[i] - h;
            let lm = f(&xp);
            xp[i] = x[i];
            grad[i] = (lp - lm) / (2.0 * h);
        }
        grad
    }

    fn assert_grads_close(analytic: &[f32], numeric: &[f32], atol: f32, rtol: f32) {
        assert_eq!(analytic.len(), numeric.len());
        for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
            let tol = atol + rtol * n.abs().max(a.abs());
            assert!(
                (a - n).abs() <= tol,
                "grad[{i}]: analytic {a} vs numeric {n} (tol {tol})"
            );
        }
    }

    #[test]
    fn from_vec_checks_numel() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn conv_matches_bruteforce_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (n, ci, co, h, w, k) in [
            (2, 3, 4, 5, 4, 3),
            (1, 1, 1, 1, 1, 1),
            (1, 2, 3, 3, 7, 5),
            (3, 4, 2, 2, 2, 3),
        ] {
            let x = random_tensor(&mut rng, &[n, ci, h, w]);
            let kern = random_tensor(&mut rng, &[co, ci, k, k]);
            let b = random_tensor(&mut rng, &[co]);
            let fast = ops::conv2d_fwd(&x, &kern, &b).unwrap();
            let slow = conv2d_reference(&x, &kern, &b).unwrap();
            assert_eq!(fast.shape(), slow.shape());
            for (a, r) in fast.data().iter().zip(slow.data()) {
                assert!((a - r).abs() < 1e-5, "fast {a} vs reference {r}");
            }
        }
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let b = Tensor::zeros(&[3]);
        // even kernel
        assert!(ops::conv2d_fwd(&x, &Tensor::zeros(&[3, 2, 2, 2]), &b).is_err());
        // channel mismatch
        assert!(ops::conv2d_fwd(&x, &Tensor::zeros(&[3, 4, 3, 3]), &b).is_err());
        // bias length mismatch
        assert!(ops::conv2d_fwd(&x, &Tensor::zeros(&[4, 2, 3, 3]), &b).is_err());
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x0 = random_tensor(&mut rng, &[2, 2, 4, 3]);
        let k0 = random_tensor(&mut rng, &[3, 2, 3, 3]);
        let b0 = random_tensor(&mut rng, &[3]);
        let target = random_tensor(&mut rng, &[2, 3, 4, 3]);

        let mut g = Graph::new();
        let x = g.param(x0.clone());
        let k = g.param(k0.clone());
        let b = g.param(b0.clone());
        let y = g.conv2d(x, k, b).unwrap();
        let loss = g.l2_loss(y, target.clone()).unwrap();
        g.backward(loss).unwrap();

        let eval = |xd: &[f32], kd: &[f32], bd: &[f32]| {
            let mut g = Graph::new();
            let x = g.leaf(Tensor::from_vec(&[2, 2, 4, 3], xd.to_vec()).unwrap());
            let k = g.leaf(Tensor::from_vec(&[3, 2, 3, 3], kd.to_vec()).unwrap());
            let b = g.leaf(Tensor::from_vec(&[3], bd.to_vec()).unwrap());
            let y = g.conv2d(x, k, b).unwrap();
            let loss = g.l2_loss(y, target.clone()).unwrap();
            g.value(loss).item()
        };
        let h = 1e-2;
        let fd_x = numeric_grad(|v| eval(v, k0.data(), b0.data()), x0.data(), h);
        let fd_k = numeric_grad(|v| eval(x0.data(), v, b0.data()), k0.data(), h);
        let fd_b = numeric_grad(|v| eval(x0.data(), k0.data(), v), b0.data(), h);

        assert_grads_close(g.grad(x).unwrap().data(), &fd_x, 2e-3, 2e-2);
        assert_grads_close(g.grad(k).unwrap().data(), &fd_k, 2e-3, 2e-2);
        assert_grads_close(g.grad(b).unwrap().data(), &fd_b, 2e-3, 2e-2);
    }

    #[test]
    fn full_block_gradient_matches_finite_differences() {
        // conv -> relu -> conv -> add skip -> pixel shuffle -> l1 loss
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = random_tensor(&mut rng, &[1, 4, 3, 3]);
        let k0 = random_tensor(&mut rng, &[4, 4, 3, 3]);
        let k1 = random_tensor(&mut rng, &[4, 4, 3, 3]);
        let b0 = random_tensor(&mut rng, &[4]);
        let b1 = random_tensor(&mut rng, &[4]);
        let target = random_tensor(&mut rng, &[1, 1, 6, 6]);

        let run = |params: [&Tensor; 4], as_params: bool| {
            let mut g = Graph::new();
            let x = g.leaf(x0.clone());
            let mk = |g: &mut Graph, t: &Tensor| {
                if as_params {
                    g.param(t.clone())
                } else {
                    g.leaf(t.clone())
                }
            };
            let k0 = mk(&mut g, params[0]);
            let b0 = mk(&mut g, params[1]);
            let k1 = mk(&mut g, params[2]);
            let b1 = mk(&mut g, params[3]);
            let h1 = g.conv2d(x, k0, b0).unwrap();
            let h1 = g.relu(h1);
            let h2 = g.conv2d(h1, k1, b1).unwrap();
            let h2 = g.scale(h2, 0.5);
            let y = g.add(x, h2).unwrap();
            let y = g.pixel_shuffle(y, 2).unwrap();
            let loss = g.l1_loss(y, target.clone()).unwrap();
            (g, [k0, b0, k1, b1], loss)
        };

        let (mut g, ids, loss) = run([&k0, &b0, &k1, &b1], true);
        g.backward(loss).unwrap();

        let h = 1e-2;
        for (pi, p0) in [&k0, &b0, &k1, &b1].into_iter().enumerate() {
            let fd = numeric_grad(
                |v| {
                    let pt = Tensor::from_vec(p0.shape(), v.to_vec()).unwrap();
                    let mut slots: [&Tensor; 4] = [&k0, &b0, &k1, &b1];
                    slots[pi] = &pt;
                    let (g, _, loss) = run(slots, false);
                    g.value(loss).item()
                },
                p0.data(),
                h,
            );
            assert_grads_close(g.grad(ids[pi]).unwrap().data(), &fd, 2e-3, 3e-2);
        }
    }

    #[test]
    fn pixel_shuffle_layout_and_inverse() {
        // (1, 4, 1, 1) -> (1, 1, 2, 2); channel c lands at (dy, dx) = (c / s, c % s)
        let x = Tensor::from_vec(&[1, 4, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = ops::pixel_shuffle_fwd(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor(&mut rng, &[2, 12, 3, 4]);
        let y = ops::pixel_shuffle_fwd(&x, 2).unwrap();
        assert_eq!(y.shape(), &[2, 3, 6, 8]);
        let back = ops::pixel_shuffle_bwd(&y, 2, x.shape());
        assert_eq!(back, x, "backward must be the exact inverse permutation");

        assert!(
            ops::pixel_shuffle_fwd(&x, 5).is_err(),
            "12 not divisible by 25"
        );
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(&[4], vec![-1.0, 0.0, 0.5, 2.0]).unwrap());
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.5, 2.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn l1_subgradient_at_zero_is_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(&[3], vec![0.5, 0.25, -1.0]).unwrap());
        let loss = g
            .l1_loss(x, Tensor::from_vec(&[3], vec![0.5, 0.0, 0.0]).unwrap())
            .unwrap();
        let v = g.value(loss).item();
        assert!((v - (0.25 + 1.0) / 3.0).abs() < 1e-7);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 1.0 / 3.0, -1.0 / 3.0]);
    }

    #[test]
    fn l2_loss_value_and_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(&[3], vec![0.0, 1.0, 2.0]).unwrap());
        let loss = g.l2_loss(x, Tensor::zeros(&[3])).unwrap();
        assert!((g.value(loss).item() - 5.0 / 3.0).abs() < 1e-6);
        g.backward(loss).unwrap();
        let grad = g.grad(x).unwrap().data().to_vec();
        for (gv, expect) in grad.iter().zip([0.0, 2.0 / 3.0, 4.0 / 3.0]) {
            assert!((gv - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn fan_out_accumulates_gradients() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap());
        let y = g.add(x, x).unwrap();
        let z = g.scale(y, 3.0);
        let s = g.sum(z);
        assert!((g.value(s).item() - -6.0).abs() < 1e-6);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[6.0, 6.0]);
    }

    #[test]
    fn leaves_do_not_collect_gradients() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        let b = g.param(Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap());
        let y = g.add(a, b).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert!(g.grad(a).is_none());
        assert_eq!(g.grad(b).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn second_backward_requires_reset() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert!(g.backward(s).is_err());
        g.reset_grads();
        assert!(g.grad(x).is_none());
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn backward_root_must_be_scalar() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        assert!(g.backward(x).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn conv_agrees_with_reference_on_random_shapes(
            n in 1usize..3,
            ci in 1usize..4,
            co in 1usize..4,
            h in 1usize..6,
            w in 1usize..6,
            k in prop::sample::select(vec![1usize, 3, 5]),
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_tensor(&mut rng, &[n, ci, h, w]);
            let kern = random_tensor(&mut rng, &[co, ci, k, k]);
            let b = random_tensor(&mut rng, &[co]);
            let fast = ops::conv2d_fwd(&x, &kern, &b).unwrap();
            let slow = conv2d_reference(&x, &kern, &b).unwrap();
            for (a, r) in fast.data().iter().zip(slow.data()) {
                prop_assert!((a - r).abs() < 1e-5);
            }
        }
    }
}
