//! Primitive gradients against central finite differences, and algebraic
//! properties of the tape.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xinv::{Graph, Tensor, Var};
use xinv_oracles::{compare_gradients, fd_gradient};

type Build = dyn Fn(&mut Graph, &[Var]) -> Var;

/// Compares backward against finite differences for `sum(c ∘ op(inputs))`
/// with a random weighting `c`, at `points` random inputs drawn by `draw`.
fn check_primitive(name: &str, shapes: &[Vec<usize>], draw: &dyn Fn(&mut ChaCha8Rng, usize) -> f64, build: &Build) {
    let mut rng = ChaCha8Rng::seed_from_u64(name.bytes().map(u64::from).sum());
    let sizes: Vec<usize> = shapes.iter().map(|s| s.iter().product()).collect();
    for point in 0..100 {
        let mut theta = Vec::new();
        for (k, &n) in sizes.iter().enumerate() {
            theta.extend((0..n).map(|_| draw(&mut rng, k)));
        }
        let split = |t: &[f64]| -> Vec<Tensor> {
            let mut at = 0;
            shapes
                .iter()
                .zip(&sizes)
                .map(|(s, &n)| {
                    let v = Tensor::new(s.clone(), t[at..at + n].to_vec()).unwrap();
                    at += n;
                    v
                })
                .collect()
        };
        let weights: Vec<f64> = {
            let mut g = Graph::new();
            let vars: Vec<Var> = split(&theta).into_iter().map(|t| g.constant(t)).collect();
            let out = build(&mut g, &vars);
            (0..g.value(out).numel()).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        let loss = |g: &mut Graph, vars: &[Var]| -> Var {
            let out = build(g, vars);
            let c = g.constant(Tensor::new(g.value(out).shape().to_vec(), weights.clone()).unwrap());
            let prod = g.mul(out, c).unwrap();
            g.sum(prod)
        };

        let mut g = Graph::new();
        let vars: Vec<Var> = split(&theta).into_iter().map(|t| g.param(t)).collect();
        let l = loss(&mut g, &vars);
        g.backward(l).unwrap();
        let analytic: Vec<f64> = vars.iter().flat_map(|&v| g.grad(v).unwrap().to_vec()).collect();

        let numeric = fd_gradient(
            |t| {
                let mut g = Graph::new();
                let vars: Vec<Var> = split(t).into_iter().map(|t| g.constant(t)).collect();
                let l = loss(&mut g, &vars);
                g.value(l).item()
            },
            &theta,
            1e-4,
        );
        let r = compare_gradients(&analytic, &numeric, 1e-3, 1e-6);
        assert!(r.passed, "{name} at point {point}: {r}");
    }
}

fn uniform(rng: &mut ChaCha8Rng, _: usize) -> f64 {
    rng.random_range(-2.0..2.0)
}

/// Uniform draw that stays at least 1e-3 away from `kink`.
fn away_from(rng: &mut ChaCha8Rng, kink: f64) -> f64 {
    loop {
        let v: f64 = rng.random_range(-2.0..2.0);
        if (v - kink).abs() >= 1e-3 {
            return v;
        }
    }
}

#[test]
fn matmul_gradient() {
    check_primitive("matmul", &[vec![3, 4], vec![4, 2]], &uniform, &|g, v| g.matmul(v[0], v[1]).unwrap());
}

#[test]
fn bias_add_gradient() {
    check_primitive("bias_add", &[vec![3, 4], vec![4]], &uniform, &|g, v| g.bias_add(v[0], v[1]).unwrap());
}

#[test]
fn conv2d_gradient() {
    check_primitive("conv2d", &[vec![2, 2, 5, 4], vec![3, 2, 3, 3], vec![3]], &uniform, &|g, v| {
        g.conv2d(v[0], v[1], v[2]).unwrap()
    });
}

#[test]
fn relu_gradient_off_the_kink() {
    check_primitive("relu", &[vec![12]], &|r, _| away_from(r, 0.0), &|g, v| g.relu(v[0]));
}

#[test]
fn sigmoid_gradient() {
    check_primitive("sigmoid", &[vec![10]], &uniform, &|g, v| g.sigmoid(v[0]));
}

#[test]
fn log_gradient() {
    check_primitive("log", &[vec![10]], &|r, _| r.random_range(0.05..3.0), &|g, v| g.log(v[0]).unwrap());
}

#[test]
fn clamp_gradient_off_the_bounds() {
    check_primitive(
        "clamp",
        &[vec![10]],
        &|r, _| loop {
            let v = away_from(r, -0.5);
            if (v - 0.5).abs() >= 1e-3 {
                break v;
            }
        },
        &|g, v| g.clamp(v[0], -0.5, 0.5),
    );
}

#[test]
fn add_and_mul_gradients() {
    check_primitive("add", &[vec![2, 3], vec![2, 3]], &uniform, &|g, v| g.add(v[0], v[1]).unwrap());
    check_primitive("mul", &[vec![2, 3], vec![2, 3]], &uniform, &|g, v| g.mul(v[0], v[1]).unwrap());
}

#[test]
fn scalar_op_gradients() {
    check_primitive("scale", &[vec![7]], &uniform, &|g, v| g.scale(v[0], -1.7));
    check_primitive("add_scalar", &[vec![7]], &uniform, &|g, v| g.add_scalar(v[0], 0.3));
}

#[test]
fn pooling_gradients() {
    check_primitive("avg_pool2", &[vec![2, 3, 4, 6]], &uniform, &|g, v| g.avg_pool2(v[0]).unwrap());
    check_primitive("global_avg_pool", &[vec![2, 3, 3, 5]], &uniform, &|g, v| g.global_avg_pool(v[0]).unwrap());
}

#[test]
fn reductions_gradients() {
    check_primitive("sum", &[vec![3, 3]], &uniform, &|g, v| g.sum(v[0]));
    check_primitive("mean", &[vec![3, 3]], &uniform, &|g, v| g.mean(v[0]));
}

#[test]
fn two_layer_net_gradient() {
    check_primitive("two_layer", &[vec![4, 3], vec![3, 5], vec![5], vec![5, 1]], &uniform, &|g, v| {
        let h = g.matmul(v[0], v[1]).unwrap();
        let h = g.bias_add(h, v[2]).unwrap();
        let h = g.sigmoid(h);
        let z = g.matmul(h, v[3]).unwrap();
        g.sigmoid(z)
    });
}

fn finite_vec(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e6f64..1e6, 1..max_len)
}

proptest! {
    #[test]
    fn double_reversal_with_unit_lambda_is_gradient_identity(x in finite_vec(30), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c: Vec<f64> = x.iter().map(|_| rng.random_range(-10.0..10.0)).collect();
        let grad = |reversals: usize| {
            let mut g = Graph::new();
            let v = g.param(Tensor::vector(x.clone()));
            let mut h = v;
            for _ in 0..reversals {
                h = g.gradient_reversal(h, 1.0).unwrap();
            }
            let s = g.sigmoid(h);
            let w = g.constant(Tensor::vector(c.clone()));
            let p = g.mul(s, w).unwrap();
            let l = g.sum(p);
            g.backward(l).unwrap();
            g.grad(v).unwrap().to_vec()
        };
        prop_assert_eq!(grad(2), grad(0));
    }

    #[test]
    fn reversal_forward_is_bit_identical(x in finite_vec(30), lambda in 0.0f64..5.0) {
        let mut g = Graph::new();
        let v = g.param(Tensor::vector(x.clone()));
        let r = g.gradient_reversal(v, lambda).unwrap();
        let same = g.value(r).data().iter().zip(&x).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
    }

    #[test]
    fn fan_out_gradients_are_additive(x in finite_vec(20), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let path = |use_a: bool, use_b: bool| {
            let mut g = Graph::new();
            let v = g.param(Tensor::vector(x.clone()));
            let pa = g.scale(v, a);
            let pa = g.sum(pa);
            let pb = g.sigmoid(v);
            let pb = g.scale(pb, b);
            let pb = g.sum(pb);
            let l = match (use_a, use_b) {
                (true, true) => g.add(pa, pb).unwrap(),
                (true, false) => pa,
                _ => pb,
            };
            g.backward(l).unwrap();
            g.grad(v).unwrap().to_vec()
        };
        let both = path(true, true);
        let (ga, gb) = (path(true, false), path(false, true));
        for i in 0..x.len() {
            prop_assert_eq!(both[i], ga[i] + gb[i]);
        }
    }

    #[test]
    fn tensor_serialization_round_trips(x in finite_vec(40)) {
        let t = Tensor::new(vec![x.len()], x.clone()).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        prop_assert_eq!(&buf[..4], b"XTNS");
        prop_assert_eq!(Tensor::read_from(&mut buf.as_slice()).unwrap(), t);
    }
}
