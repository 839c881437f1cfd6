//! Central finite differences as the independent oracle for every
//! differentiable op and for whole MLPs (parameter and input gradients).

use guidelab_core::graph::{Graph, Reduction, Var};
use guidelab_core::nn::{harvest_grads, Activation, Mlp, ParamSet};
use guidelab_core::rng;
use guidelab_core::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

fn rand_values(n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| r.gen::<f64>() * 2.0 - 1.0).collect()
}

/// Compare the input gradient of `f` (a scalar-valued graph builder) against
/// central finite differences at `x`.
fn check_input_grad(x: Tensor, f: impl Fn(&mut Graph, Var) -> Var, label: &str) {
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let loss = f(&mut g, xv);
    g.backward(loss).unwrap();
    let analytic = g.grad(xv).unwrap().to_vec();

    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.values_mut()[i] += FD_STEP;
        let mut minus = x.clone();
        minus.values_mut()[i] -= FD_STEP;

        let eval = |t: Tensor| -> f64 {
            let mut g = Graph::new();
            let xv = g.constant(t);
            let loss = f(&mut g, xv);
            g.value(loss)[0]
        };
        let fd = (eval(plus) - eval(minus)) / (2.0 * FD_STEP);
        let denom = fd.abs().max(analytic[i].abs()).max(1e-6);
        assert!(
            (analytic[i] - fd).abs() / denom < REL_TOL,
            "{label}: coord {i}: analytic {} vs fd {}",
            analytic[i],
            fd
        );
    }
}

/// Random-cotangent scalarization: loss = sum(out ⊙ w).
fn weighted_sum(g: &mut Graph, out: Var, seed: u64) -> Var {
    let mut r = rng::from_seed(seed);
    let n = g.tensor(out).len();
    let shape = g.shape(out).to_vec();
    let w = g.constant(Tensor::new(shape, rand_values(n, &mut r)).unwrap());
    let prod = g.mul(out, w).unwrap();
    g.sum(prod)
}

#[test]
fn fd_matmul_all_shapes() {
    let mut r = rng::from_seed(100);
    // lhs grad, [2,3]·[3,2]
    let b = Tensor::new(vec![3, 2], rand_values(6, &mut r)).unwrap();
    check_input_grad(
        Tensor::new(vec![2, 3], rand_values(6, &mut r)).unwrap(),
        move |g, x| {
            let bv = g.constant(b.clone());
            let out = g.matmul(x, bv).unwrap();
            weighted_sum(g, out, 1)
        },
        "matmul lhs 2d",
    );
    // rhs grad, [2,3]·[3,2]
    let a = Tensor::new(vec![2, 3], rand_values(6, &mut r)).unwrap();
    check_input_grad(
        Tensor::new(vec![3, 2], rand_values(6, &mut r)).unwrap(),
        move |g, x| {
            let av = g.constant(a.clone());
            let out = g.matmul(av, x).unwrap();
            weighted_sum(g, out, 2)
        },
        "matmul rhs 2d",
    );
    // matrix-vector
    let m = Tensor::new(vec![3, 4], rand_values(12, &mut r)).unwrap();
    check_input_grad(
        Tensor::from_vec(rand_values(4, &mut r)),
        move |g, x| {
            let mv = g.constant(m.clone());
            let out = g.matmul(mv, x).unwrap();
            weighted_sum(g, out, 3)
        },
        "matmul mat-vec",
    );
    // vector-matrix
    let m2 = Tensor::new(vec![4, 3], rand_values(12, &mut r)).unwrap();
    check_input_grad(
        Tensor::from_vec(rand_values(4, &mut r)),
        move |g, x| {
            let mv = g.constant(m2.clone());
            let out = g.matmul(x, mv).unwrap();
            weighted_sum(g, out, 4)
        },
        "matmul vec-mat",
    );
}

#[test]
fn fd_elementwise_and_bias() {
    let mut r = rng::from_seed(101);
    let other = Tensor::new(vec![3, 2], rand_values(6, &mut r)).unwrap();
    let o2 = other.clone();
    check_input_grad(
        Tensor::new(vec![3, 2], rand_values(6, &mut r)).unwrap(),
        move |g, x| {
            let ov = g.constant(o2.clone());
            let out = g.add(x, ov).unwrap();
            weighted_sum(g, out, 5)
        },
        "add equal shapes",
    );
    // bias broadcast: gradient w.r.t. the 1-D bias
    let lhs = Tensor::new(vec![4, 3], rand_values(12, &mut r)).unwrap();
    check_input_grad(
        Tensor::from_vec(rand_values(3, &mut r)),
        move |g, x| {
            let lv = g.constant(lhs.clone());
            let out = g.add(lv, x).unwrap();
            weighted_sum(g, out, 6)
        },
        "add bias broadcast",
    );
    let o3 = other.clone();
    check_input_grad(
        Tensor::new(vec![3, 2], rand_values(6, &mut r)).unwrap(),
        move |g, x| {
            let ov = g.constant(o3.clone());
            let out = g.sub(x, ov).unwrap();
            weighted_sum(g, out, 7)
        },
        "sub",
    );
    let o4 = other.clone();
    check_input_grad(
        Tensor::new(vec![3, 2], rand_values(6, &mut r)).unwrap(),
        move |g, x| {
            let ov = g.constant(o4.clone());
            let out = g.mul(x, ov).unwrap();
            weighted_sum(g, out, 8)
        },
        "mul",
    );
    check_input_grad(
        Tensor::new(vec![3, 2], rand_values(6, &mut r)).unwrap(),
        |g, x| {
            let out = g.scale(x, -1.7);
            weighted_sum(g, out, 9)
        },
        "scale",
    );
}

#[test]
fn fd_concat_both_ranks() {
    let mut r = rng::from_seed(102);
    let right = Tensor::new(vec![3, 2], rand_values(6, &mut r)).unwrap();
    check_input_grad(
        Tensor::new(vec![3, 4], rand_values(12, &mut r)).unwrap(),
        move |g, x| {
            let rv = g.constant(right.clone());
            let out = g.concat(x, rv).unwrap();
            weighted_sum(g, out, 10)
        },
        "concat 2d lhs",
    );
    let left = Tensor::from_vec(rand_values(3, &mut r));
    check_input_grad(
        Tensor::from_vec(rand_values(5, &mut r)),
        move |g, x| {
            let lv = g.constant(left.clone());
            let out = g.concat(lv, x).unwrap();
            weighted_sum(g, out, 11)
        },
        "concat 1d rhs",
    );
}

#[test]
fn fd_activations() {
    let mut r = rng::from_seed(103);
    // Keep ReLU inputs away from the kink.
    let vals: Vec<f64> = rand_values(8, &mut r)
        .into_iter()
        .map(|v| if v.abs() < 0.05 { v + 0.2 } else { v })
        .collect();
    check_input_grad(
        Tensor::new(vec![2, 4], vals).unwrap(),
        |g, x| {
            let out = g.relu(x);
            weighted_sum(g, out, 12)
        },
        "relu",
    );
    check_input_grad(
        Tensor::new(vec![2, 4], rand_values(8, &mut r)).unwrap(),
        |g, x| {
            let out = g.silu(x);
            weighted_sum(g, out, 13)
        },
        "silu",
    );
}

#[test]
fn fd_softmax_axes() {
    let mut r = rng::from_seed(104);
    check_input_grad(
        Tensor::from_vec(rand_values(5, &mut r)),
        |g, x| {
            let out = g.softmax(x, 0).unwrap();
            weighted_sum(g, out, 14)
        },
        "softmax 1d",
    );
    check_input_grad(
        Tensor::new(vec![3, 4], rand_values(12, &mut r)).unwrap(),
        |g, x| {
            let out = g.softmax(x, 1).unwrap();
            weighted_sum(g, out, 15)
        },
        "softmax rows",
    );
    check_input_grad(
        Tensor::new(vec![3, 4], rand_values(12, &mut r)).unwrap(),
        |g, x| {
            let out = g.softmax(x, 0).unwrap();
            weighted_sum(g, out, 16)
        },
        "softmax columns",
    );
}

#[test]
fn fd_losses_and_embedding() {
    let mut r = rng::from_seed(105);
    check_input_grad(
        Tensor::new(vec![3, 4], rand_values(12, &mut r)).unwrap(),
        |g, x| g.cross_entropy(x, &[1, 0, 3]).unwrap(),
        "cross entropy mean",
    );
    check_input_grad(
        Tensor::new(vec![3, 4], rand_values(12, &mut r)).unwrap(),
        |g, x| g.cross_entropy_with(x, &[2, 2, 1], Reduction::Sum).unwrap(),
        "cross entropy sum",
    );
    let target = Tensor::new(vec![3, 2], rand_values(6, &mut r)).unwrap();
    check_input_grad(
        Tensor::new(vec![3, 2], rand_values(6, &mut r)).unwrap(),
        move |g, x| {
            let tv = g.constant(target.clone());
            g.mse(x, tv).unwrap()
        },
        "mse",
    );
    check_input_grad(
        Tensor::new(vec![4, 3], rand_values(12, &mut r)).unwrap(),
        |g, x| {
            // Repeated index exercises scatter-add accumulation.
            let out = g.embedding(x, &[0, 2, 2, 1]).unwrap();
            weighted_sum(g, out, 17)
        },
        "embedding table",
    );
    check_input_grad(
        Tensor::new(vec![2, 3], rand_values(6, &mut r)).unwrap(),
        |g, x| g.sum(x),
        "sum",
    );
}

/// Whole-MLP check: every parameter gradient and the input gradient match
/// finite differences of the cross-entropy loss.
#[test]
fn fd_mlp_params_and_input() {
    for seed in [0u64, 1, 2] {
        let mut r = rng::from_seed(200 + seed);
        let dims = [3usize, 6, 5, 4];
        let act = if seed % 2 == 0 {
            Activation::Relu
        } else {
            Activation::Silu
        };
        let mlp = Mlp::new(&dims, act, "m", &mut r);
        let x = Tensor::new(vec![2, 3], rand_values(6, &mut r)).unwrap();
        let targets = [1usize, 3];

        let loss_with = |mlp: &Mlp| -> f64 {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let out = mlp.forward_frozen(&mut g, xv).unwrap();
            let loss = g.cross_entropy(out, &targets).unwrap();
            g.value(loss)[0]
        };

        // Analytic gradients.
        let mut model = mlp.clone();
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let (out, binding) = model.forward_train(&mut g, xv).unwrap();
        let loss = g.cross_entropy(out, &targets).unwrap();
        g.backward(loss).unwrap();
        let input_grad = g.grad(xv).unwrap().to_vec();
        harvest_grads(&mut model, &g, &binding).unwrap();

        // Parameter FDs.
        for pi in 0..model.params().len() {
            let n = model.params()[pi].tensor.len();
            for k in 0..n {
                let mut plus = mlp.clone();
                plus.params_mut()[pi].tensor.values_mut()[k] += FD_STEP;
                let mut minus = mlp.clone();
                minus.params_mut()[pi].tensor.values_mut()[k] -= FD_STEP;
                let fd = (loss_with(&plus) - loss_with(&minus)) / (2.0 * FD_STEP);
                let got = model.params()[pi].tensor.grad.as_ref().unwrap()[k];
                let denom = fd.abs().max(got.abs()).max(1e-6);
                assert!(
                    (got - fd).abs() / denom < REL_TOL,
                    "seed {seed} param {pi}[{k}]: {got} vs {fd}"
                );
            }
        }

        // Input FDs.
        for k in 0..x.len() {
            let mut plus = x.clone();
            plus.values_mut()[k] += FD_STEP;
            let mut minus = x.clone();
            minus.values_mut()[k] -= FD_STEP;
            let eval = |t: &Tensor| -> f64 {
                let mut g = Graph::new();
                let xv = g.constant(t.clone());
                let out = mlp.forward_frozen(&mut g, xv).unwrap();
                let loss = g.cross_entropy(out, &targets).unwrap();
                g.value(loss)[0]
            };
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            let denom = fd.abs().max(input_grad[k].abs()).max(1e-6);
            assert!(
                (input_grad[k] - fd).abs() / denom < REL_TOL,
                "seed {seed} input[{k}]: {} vs {fd}",
                input_grad[k]
            );
        }
    }
}

/// Identical seeds and inputs produce bit-identical losses and gradients.
#[test]
fn tape_replay_is_deterministic() {
    let run = || -> (u64, Vec<u64>) {
        let mut r = rng::from_seed(777);
        let mlp = Mlp::new(&[4, 8, 3], Activation::Silu, "m", &mut r);
        let x = Tensor::new(vec![5, 4], rand_values(20, &mut r)).unwrap();
        let mut g = Graph::new();
        let xv = g.input(x);
        let (out, _) = mlp.forward_train(&mut g, xv).unwrap();
        let loss = g.cross_entropy(out, &[0, 1, 2, 0, 1]).unwrap();
        g.backward(loss).unwrap();
        (
            g.value(loss)[0].to_bits(),
            g.grad(xv).unwrap().iter().map(|v| v.to_bits()).collect(),
        )
    };
    let (la, ga) = run();
    let (lb, gb) = run();
    assert_eq!(la, lb);
    assert_eq!(ga, gb);
}
