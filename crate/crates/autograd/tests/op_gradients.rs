//! Central-difference checks for every differentiable op.

use autograd::{ConvSpec, Graph, Tensor, Var};

struct Lcg(u64);

impl Lcg {
    fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((self.0 >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    fn tensor(&mut self, shape: &[usize], scale: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| self.next() * scale)
    }
}

/// Builds `sum(f(inputs) ⊙ probe)` and compares its input gradients against
/// central differences.
fn check<F>(inputs: Vec<Tensor<f64>>, f: F)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let mut rng = Lcg(99);
    let eval = |inputs: &[Tensor<f64>], probe: Option<&Tensor<f64>>| -> (f64, Tensor<f64>) {
        let mut g = Graph::<f64>::inference();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars);
        let value = g.value(out).clone();
        let total = match probe {
            Some(p) => value.data().iter().zip(p.data()).map(|(a, b)| a * b).sum(),
            None => 0.0,
        };
        (total, value)
    };
    let (_, shape_probe) = eval(&inputs, None);
    let probe = rng.tensor(shape_probe.shape(), 1.0);

    let mut g = Graph::<f64>::inference();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars);
    let p = g.constant(probe.clone());
    let prod = g.mul(out, p).unwrap();
    let loss = g.sum(prod);
    let grads = g.backward(loss).unwrap();

    let h = 1e-6;
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.input(*var).expect("gradient for input");
        for idx in 0..inputs[k].numel() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[idx] += h;
            let mut minus = inputs.clone();
            minus[k].data_mut()[idx] -= h;
            let numeric = (eval(&plus, Some(&probe)).0 - eval(&minus, Some(&probe)).0) / (2.0 * h);
            let a = analytic.data()[idx];
            let err = (a - numeric).abs() / (a.abs().max(numeric.abs()).max(1e-6));
            assert!(err < 1e-5, "input {k}[{idx}]: analytic {a} numeric {numeric}");
        }
    }
}

#[test]
fn conv2d_strided_padded() {
    let mut r = Lcg(1);
    check(
        vec![r.tensor(&[2, 2, 7, 6], 1.0), r.tensor(&[3, 2, 4, 4], 0.5), r.tensor(&[3], 0.5)],
        |g, v| g.conv2d(v[0], v[1], Some(v[2]), ConvSpec::new(2, 1)).unwrap(),
    );
    check(
        vec![r.tensor(&[1, 3, 5, 5], 1.0), r.tensor(&[2, 3, 3, 3], 0.5)],
        |g, v| g.conv2d(v[0], v[1], None, ConvSpec::new(1, 1)).unwrap(),
    );
}

#[test]
fn conv_transpose2d_strided() {
    let mut r = Lcg(2);
    check(
        vec![r.tensor(&[2, 3, 3, 4], 1.0), r.tensor(&[3, 2, 4, 4], 0.5), r.tensor(&[2], 0.5)],
        |g, v| g.conv_transpose2d(v[0], v[1], Some(v[2]), ConvSpec::new(2, 1)).unwrap(),
    );
    check(
        vec![r.tensor(&[1, 2, 4, 4], 1.0), r.tensor(&[2, 3, 3, 3], 0.5)],
        |g, v| g.conv_transpose2d(v[0], v[1], None, ConvSpec::new(1, 1)).unwrap(),
    );
}

#[test]
fn conv_transpose_shapes_double_resolution() {
    let mut g = Graph::<f64>::inference();
    let x = g.constant(Tensor::zeros(&[1, 4, 16, 16]));
    let w = g.constant(Tensor::zeros(&[4, 2, 4, 4]));
    let y = g.conv_transpose2d(x, w, None, ConvSpec::new(2, 1)).unwrap();
    assert_eq!(g.shape(y), &[1, 2, 32, 32]);
}

#[test]
fn normalization() {
    let mut r = Lcg(3);
    check(vec![r.tensor(&[2, 4, 3, 3], 2.0)], |g, v| g.group_norm(v[0], 4).unwrap());
    check(vec![r.tensor(&[2, 4, 3, 3], 2.0)], |g, v| g.group_norm(v[0], 1).unwrap());
}

#[test]
fn pointwise() {
    let mut r = Lcg(4);
    // keep away from kinks at 0
    let away = |t: Tensor<f64>| t.map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    check(vec![away(r.tensor(&[3, 4], 1.0))], |g, v| g.relu(v[0]));
    check(vec![away(r.tensor(&[3, 4], 1.0))], |g, v| g.leaky_relu(v[0], 0.2));
    check(vec![away(r.tensor(&[3, 4], 1.0))], |g, v| g.abs(v[0]));
    check(vec![r.tensor(&[3, 4], 2.0)], |g, v| g.tanh(v[0]));
    check(vec![r.tensor(&[3, 4], 3.0)], |g, v| g.sigmoid(v[0]));
    check(vec![r.tensor(&[3, 4], 1.0)], |g, v| g.exp(v[0]));
    check(vec![r.tensor(&[3, 4], 1.0).map(|v| v.abs() + 0.2)], |g, v| g.ln(v[0]));
    check(vec![r.tensor(&[3, 4], 1.0)], |g, v| g.affine(v[0], -1.5, 0.3));
    check(vec![away(r.tensor(&[3, 4], 1.0)).map(|v| v * 0.4)], |g, v| g.clamp(v[0], -0.25, 0.25));
}

#[test]
fn binary_and_reductions() {
    let mut r = Lcg(5);
    let (a, b) = (r.tensor(&[2, 3], 1.0), r.tensor(&[2, 3], 1.0));
    check(vec![a.clone(), b.clone()], |g, v| g.add(v[0], v[1]).unwrap());
    check(vec![a.clone(), b.clone()], |g, v| g.sub(v[0], v[1]).unwrap());
    check(vec![a.clone(), b], |g, v| g.mul(v[0], v[1]).unwrap());
    check(vec![a.clone()], |g, v| g.sum(v[0]));
    check(vec![a], |g, v| g.mean(v[0]));
    check(vec![r.tensor(&[2, 3, 2, 3], 1.0)], |g, v| g.mean_spatial(v[0]).unwrap());
    check(vec![r.tensor(&[2, 3, 2, 2], 1.0)], |g, v| g.reshape(v[0], &[2, 12]).unwrap());
}

#[test]
fn linear_and_tiling() {
    let mut r = Lcg(6);
    check(
        vec![r.tensor(&[3, 4], 1.0), r.tensor(&[2, 4], 1.0), r.tensor(&[2], 1.0)],
        |g, v| g.linear(v[0], v[1], Some(v[2])).unwrap(),
    );
    check(
        vec![r.tensor(&[2, 3, 2, 3], 1.0), r.tensor(&[2, 2], 1.0)],
        |g, v| g.concat_tile(v[0], v[1]).unwrap(),
    );
}

#[test]
fn softmax_cross_entropy() {
    let mut r = Lcg(7);
    check(vec![r.tensor(&[4, 5], 2.0)], |g, v| {
        g.softmax_cross_entropy(v[0], &[0, 4, 2, 2]).unwrap()
    });
}

#[test]
fn shared_leaf_accumulates() {
    let mut store = autograd::ParamStore::<f64>::new();
    let id = store.insert("w", Tensor::new(&[2], vec![2.0, 3.0]));
    let mut g = Graph::new([id]);
    let a = g.param(&store, id);
    let b = g.param(&store, id);
    assert_eq!(a, b);
    let prod = g.mul(a, b).unwrap();
    let loss = g.sum(prod);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.param(id).unwrap().data(), &[4.0, 6.0]);
}

#[test]
fn frozen_params_get_no_gradient() {
    let mut store = autograd::ParamStore::<f64>::new();
    let w = store.insert("w", Tensor::new(&[1], vec![2.0]));
    let f = store.insert("frozen", Tensor::new(&[1], vec![5.0]));
    let mut g = Graph::new([w]);
    let wv = g.param(&store, w);
    let fv = g.param(&store, f);
    let prod = g.mul(wv, fv).unwrap();
    let det = g.detach(prod);
    let both = g.add(prod, det).unwrap();
    let loss = g.sum(both);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.param(w).unwrap().data(), &[5.0]);
    assert!(grads.param(f).is_none());
}
