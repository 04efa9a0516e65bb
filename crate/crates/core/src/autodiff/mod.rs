//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records operations on named inputs. `forward` evaluates the
//! whole graph for one binding of the inputs and `backward` propagates a seed
//! from any node back to the input leaves.

mod graph;
mod tensor;

pub use graph::{logsumexp, sigmoid, softmax_into, softplus, Graph, Inputs, NodeId};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Largest relative disagreement between the analytic gradient of the scalar
/// `output` with respect to input `wrt` and central finite differences.
///
/// Each coordinate contributes `|a - c| / max(|a|, |c|, 1)`: relative for
/// gradients of magnitude above one, absolute below, so coordinates whose
/// true gradient is zero do not turn finite-difference roundoff into noise.
pub fn grad_check(graph: &mut Graph, output: NodeId, inputs: &Inputs, wrt: &str, step: f64) -> Result<f64> {
    let analytic = analytic_grad(graph, output, inputs, wrt)?;
    let numeric = numeric_grad(graph, output, inputs, wrt, step)?;
    Ok(max_relative_error(&analytic, &numeric))
}

pub fn analytic_grad(graph: &mut Graph, output: NodeId, inputs: &Inputs, wrt: &str) -> Result<Vec<f64>> {
    graph.forward(inputs)?;
    let grads = graph.backward(output, &Tensor::scalar(1.0))?;
    grads
        .get(wrt)
        .map(|t| t.data().to_vec())
        .ok_or_else(|| Error::MissingInput(wrt.to_string()))
}

/// Central-difference gradient of the scalar `output` with respect to `wrt`.
pub fn numeric_grad(graph: &mut Graph, output: NodeId, inputs: &Inputs, wrt: &str, step: f64) -> Result<Vec<f64>> {
    let mut probe = inputs.clone();
    let n = probe
        .get(wrt)
        .ok_or_else(|| Error::MissingInput(wrt.to_string()))?
        .len();
    let mut eval = |probe: &Inputs| -> Result<f64> {
        graph.forward(probe)?;
        Ok(graph.value(output).and_then(Tensor::item).unwrap_or(f64::NAN))
    };
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let x0 = probe[wrt].data()[k];
        probe.get_mut(wrt).unwrap().data_mut()[k] = x0 + step;
        let fp = eval(&probe)?;
        probe.get_mut(wrt).unwrap().data_mut()[k] = x0 - step;
        let fm = eval(&probe)?;
        probe.get_mut(wrt).unwrap().data_mut()[k] = x0;
        out.push((fp - fm) / (2.0 * step));
    }
    Ok(out)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, c)| (a - c).abs() / a.abs().max(c.abs()).max(1.0))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::Rng;

    fn bind(pairs: &[(&str, Tensor)]) -> Inputs {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    fn random_tensor(rng: &mut Rng, shape: &[usize], scale: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| scale * (2.0 * rng.uniform() - 1.0)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn identity_forward_and_backward() {
        let mut g = Graph::new();
        let x = g.input("x");
        g.mark_output("y", x);
        let out = g.forward(&bind(&[("x", Tensor::vector(vec![1.0, 2.0, 3.0]))])).unwrap();
        assert_eq!(out["y"].data(), &[1.0, 2.0, 3.0]);

        let mut g = Graph::new();
        let x = g.input("x");
        g.forward(&bind(&[("x", Tensor::scalar(5.0))])).unwrap();
        let grads = g.backward(x, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(grads["x"].data(), &[1.0]);
    }

    #[test]
    fn dense_identity_weights() {
        let mut g = Graph::new();
        let (x, w, b) = (g.input("x"), g.input("w"), g.input("b"));
        let y = g.affine(x, w, b);
        g.mark_output("y", y);
        let inputs = bind(&[
            ("x", Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap()),
            ("w", Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap()),
            ("b", Tensor::vector(vec![0.0, 0.0])),
        ]);
        assert_eq!(g.forward(&inputs).unwrap()["y"].data(), &[1.0, 2.0]);
    }

    #[test]
    fn relu_forward() {
        let mut g = Graph::new();
        let x = g.input("x");
        let y = g.relu(x);
        g.mark_output("y", y);
        let out = g.forward(&bind(&[("x", Tensor::vector(vec![-1.0, 0.0, 2.0]))])).unwrap();
        assert_eq!(out["y"].data(), &[0.0, 0.0, 2.0]);
        let grads = g.backward(y, &Tensor::vector(vec![1.0; 3])).unwrap();
        // subgradient at 0 is 0
        assert_eq!(grads["x"].data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let x = g.input("x");
        let sq = g.mul(x, x);
        let s = g.sum(sq);
        g.forward(&bind(&[("x", Tensor::vector(vec![1.0, 2.0, 3.0]))])).unwrap();
        let grads = g.backward(s, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(grads["x"].data(), &[2.0, 4.0, 6.0]);
        assert_eq!(g.grad("x"), Some(&[2.0, 4.0, 6.0][..]));
    }

    #[test]
    fn backward_requires_forward() {
        let mut g = Graph::new();
        let x = g.input("x");
        let s = g.sum(x);
        assert!(matches!(g.backward(s, &Tensor::scalar(1.0)), Err(Error::BackwardBeforeForward)));
    }

    #[test]
    fn forward_errors() {
        let mut g = Graph::new();
        let (a, b) = (g.input("a"), g.input("b"));
        g.add(a, b);
        let inputs = bind(&[("a", Tensor::vector(vec![1.0, 2.0])), ("b", Tensor::vector(vec![1.0]))]);
        assert!(matches!(g.forward(&inputs), Err(Error::Shape { .. })));
        assert!(matches!(g.forward(&bind(&[("a", Tensor::vector(vec![1.0]))])), Err(Error::MissingInput(_))));

        let mut g = Graph::new();
        let x = g.input("x");
        g.log(x);
        let err = g.forward(&bind(&[("x", Tensor::vector(vec![0.0]))])).unwrap_err();
        assert!(matches!(err, Error::NonFinite { op: "log", .. }));
    }

    #[test]
    fn linear_map_is_exact() {
        let mut rng = Rng::new(3);
        let mut g = Graph::new();
        let (x, w) = (g.input("x"), g.input("w"));
        let y = g.matmul(x, w);
        let s = g.sum(y);
        let inputs = bind(&[
            ("x", random_tensor(&mut rng, &[3, 4], 1.0)),
            ("w", random_tensor(&mut rng, &[4, 2], 1.0)),
        ]);
        let err = grad_check(&mut g, s, &inputs, "x", 1e-3).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn two_layer_mlp_matches_finite_differences() {
        let mut rng = Rng::new(11);
        let mut g = Graph::new();
        let (x, w1, b1, w2, b2) = (g.input("x"), g.input("w1"), g.input("b1"), g.input("w2"), g.input("b2"));
        let pre = g.affine(x, w1, b1);
        let h = g.relu(pre);
        let o = g.affine(h, w2, b2);
        let o = g.sigmoid(o);
        let s = g.sum(o);
        let inputs = bind(&[
            ("x", random_tensor(&mut rng, &[4, 5], 1.0)),
            ("w1", random_tensor(&mut rng, &[5, 6], 1.0)),
            ("b1", random_tensor(&mut rng, &[6], 0.5)),
            ("w2", random_tensor(&mut rng, &[6, 3], 1.0)),
            ("b2", random_tensor(&mut rng, &[3], 0.5)),
        ]);
        g.forward(&inputs).unwrap();
        let pre = g.value(pre).unwrap();
        assert!(pre.data().iter().all(|v| v.abs() > 1e-4), "too close to a ReLU kink");
        for name in ["x", "w1", "b1", "w2", "b2"] {
            let err = grad_check(&mut g, s, &inputs, name, 1e-6).unwrap();
            assert!(err < 1e-5, "{name}: {err}");
        }
    }

    #[test]
    fn softmax_with_temperature_composite() {
        let mut rng = Rng::new(5);
        let mut g = Graph::new();
        let (v, c) = (g.input("v"), g.input("c"));
        let y = g.softmax_rows(v, 0.3);
        let y = g.mul(y, c);
        let s = g.sum(y);
        let inputs = bind(&[
            ("v", random_tensor(&mut rng, &[3, 7], 2.0)),
            ("c", random_tensor(&mut rng, &[3, 7], 1.0)),
        ]);
        let err = grad_check(&mut g, s, &inputs, "v", 1e-6).unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn logsumexp_large_logits() {
        let mut rng = Rng::new(8);
        let mut g = Graph::new();
        let (v, c) = (g.input("v"), g.input("c"));
        let l = g.logsumexp_rows(v);
        let l = g.mul(l, c);
        let s = g.sum(l);
        let inputs = bind(&[
            ("v", random_tensor(&mut rng, &[4, 6], 50.0)),
            ("c", random_tensor(&mut rng, &[4, 1], 1.0)),
        ]);
        let err = grad_check(&mut g, s, &inputs, "v", 1e-6).unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn logsumexp_shift_identity() {
        let mut rng = Rng::new(9);
        for _ in 0..100 {
            let v: Vec<f64> = (0..10).map(|_| 1e3 * (2.0 * rng.uniform() - 1.0)).collect();
            let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let shifted: Vec<f64> = v.iter().map(|x| x - m).collect();
            let lhs = logsumexp(&v);
            assert!(lhs.is_finite());
            assert!((lhs - (logsumexp(&shifted) + m)).abs() <= 1e-12 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn softmax_is_a_distribution() {
        let mut rng = Rng::new(10);
        let mut out = vec![0.0; 12];
        for _ in 0..100 {
            let v: Vec<f64> = (0..12).map(|_| 300.0 * (2.0 * rng.uniform() - 1.0)).collect();
            softmax_into(&v, 0.7, &mut out);
            assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(out.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn repeated_passes_are_bit_identical() {
        let mut rng = Rng::new(12);
        let mut g = Graph::new();
        let (x, w, b) = (g.input("x"), g.input("w"), g.input("b"));
        let h = g.affine(x, w, b);
        let h = g.softplus(h);
        let l = g.logsumexp_rows(h);
        let s = g.mean(l);
        let inputs = bind(&[
            ("x", random_tensor(&mut rng, &[5, 3], 1.0)),
            ("w", random_tensor(&mut rng, &[3, 4], 1.0)),
            ("b", random_tensor(&mut rng, &[4], 1.0)),
        ]);
        g.forward(&inputs).unwrap();
        let first = g.backward(s, &Tensor::scalar(1.0)).unwrap();
        g.forward(&inputs).unwrap();
        let second = g.backward(s, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(first, second);
    }
}
