//! Model forward passes against a loop-based reference, golden values,
//! translation covariance and checkpoints.

use std::path::PathBuf;

use xinv::model::{self, ModelParams, Trainable, CONV_WIDTHS, FEATURE_DIM, KERNEL};
use xinv::{Graph, Tensor};
use xinv_oracles::conv2d_direct;

fn input(n: usize, size: usize) -> Tensor {
    let data = (0..n * size * size).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
    Tensor::new(vec![n, 1, size, size], data).unwrap()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn affine(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (k, n) = (w.shape()[0], w.shape()[1]);
    (0..n).map(|j| b.data()[j] + (0..k).map(|i| x[i] * w.data()[i * n + j]).sum::<f64>()).collect()
}

/// Features, disease probability and source scores for one image, by plain loops.
fn reference_forward(p: &ModelParams, img: &[f64], size: usize) -> (Vec<f64>, f64, Vec<f64>) {
    let (mut a, mut c, mut h) = (img.to_vec(), 1, size);
    for (layer, &o) in p.extractor.convs.iter().zip(&CONV_WIDTHS) {
        let z = conv2d_direct(&a, (c, h, h), layer.weight.data(), (o, KERNEL), layer.bias.data());
        let half = h / 2;
        let mut pooled = vec![0.0; o * half * half];
        for ch in 0..o {
            for y in 0..half {
                for x in 0..half {
                    let at = |dy: usize, dx: usize| z[(ch * h + 2 * y + dy) * h + 2 * x + dx].max(0.0);
                    pooled[(ch * half + y) * half + x] = (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) / 4.0;
                }
            }
        }
        (a, c, h) = (pooled, o, half);
    }
    let plane = h * h;
    let f: Vec<f64> = a.chunks(plane).map(|ch| ch.iter().sum::<f64>() / plane as f64).collect();
    let prob = sigmoid(affine(&f, &p.classifier.fc.weight, &p.classifier.fc.bias)[0]);
    let d = p.discriminator.as_ref().unwrap();
    let hidden: Vec<f64> = affine(&f, &d.fc1.weight, &d.fc1.bias).into_iter().map(|v| v.max(0.0)).collect();
    let scores = affine(&hidden, &d.fc2.weight, &d.fc2.bias).into_iter().map(sigmoid).collect();
    (f, prob, scores)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn forward_matches_loop_reference() {
    let mut p = ModelParams::init(Some(3), 42).unwrap();
    for (i, (_, t)) in p.named_mut().into_iter().enumerate() {
        if t.shape().len() == 1 {
            t.data_mut().iter_mut().enumerate().for_each(|(j, v)| *v = 0.01 * ((i + j) % 7) as f64 - 0.03);
        }
    }
    let x = input(2, 16);
    let f = p.extract(&x).unwrap();
    let probs = p.classify(&f).unwrap();
    let scores = p.discriminate(&f).unwrap();
    for n in 0..2 {
        let (rf, rp, rs) = reference_forward(&p, &x.data()[n * 256..(n + 1) * 256], 16);
        for (a, b) in f.data()[n * FEATURE_DIM..(n + 1) * FEATURE_DIM].iter().zip(&rf) {
            assert!(close(*a, *b, 1e-12), "feature {a} vs {b}");
        }
        assert!(close(probs.data()[n], rp, 1e-12));
        for (a, b) in scores.data()[n * 3..(n + 1) * 3].iter().zip(&rs) {
            assert!(close(*a, *b, 1e-12));
        }
    }
}

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/forward_seed42.txt")
}

/// Regenerate with `XINV_BLESS=1 cargo test --test model`.
#[test]
fn forward_matches_golden_values() {
    let p = ModelParams::init(Some(3), 42).unwrap();
    let x = input(2, 32);
    let f = p.extract(&x).unwrap();
    let mut values: Vec<(String, f64)> = Vec::new();
    values.extend(f.data().iter().enumerate().map(|(i, v)| (format!("features[{i}]"), *v)));
    values.extend(p.classify(&f).unwrap().data().iter().enumerate().map(|(i, v)| (format!("classify[{i}]"), *v)));
    values.extend(
        p.discriminate(&f).unwrap().data().iter().enumerate().map(|(i, v)| (format!("discriminate[{i}]"), *v)),
    );
    let text: String = values.iter().map(|(k, v)| format!("{k} {v:e}\n")).collect();
    if std::env::var_os("XINV_BLESS").is_some() {
        std::fs::create_dir_all(golden_path().parent().unwrap()).unwrap();
        std::fs::write(golden_path(), &text).unwrap();
    }
    let golden = std::fs::read_to_string(golden_path()).expect("golden file present");
    let expected: Vec<(&str, f64)> = golden
        .lines()
        .map(|l| {
            let (k, v) = l.split_once(' ').unwrap();
            (k, v.parse().unwrap())
        })
        .collect();
    assert_eq!(expected.len(), values.len());
    for ((ek, ev), (k, v)) in expected.iter().zip(&values) {
        assert_eq!(ek, k);
        assert!(close(*ev, *v, 1e-10), "{k}: {v} vs golden {ev}");
    }
}

fn zero_biases(p: &mut ModelParams) {
    for (name, t) in p.named_mut() {
        if name.ends_with(".b") {
            t.data_mut().fill(0.0);
        }
    }
}

fn last_block(p: &ModelParams, x: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let b = p.bind(&mut g, Trainable::NONE);
    let xv = g.constant(x.clone());
    let ex = model::extract(&mut g, &b, xv).unwrap();
    g.value(ex.last_block).clone()
}

#[test]
fn shifting_by_eight_pixels_shifts_the_last_block_by_one_cell() {
    let mut p = ModelParams::init(None, 5).unwrap();
    zero_biases(&mut p);
    let size = 48;
    let place = |row: usize| {
        let mut img = vec![0.0; size * size];
        for y in 0..8 {
            for x in 0..8 {
                img[(row + y) * size + 16 + x] = ((y * 8 + x) * 13 % 17) as f64 / 17.0;
            }
        }
        Tensor::new(vec![1, 1, size, size], img).unwrap()
    };
    let (a, b) = (place(16), place(24));
    let (la, lb) = (last_block(&p, &a), last_block(&p, &b));
    let cells = size / 8;
    for c in 0..32 {
        for y in 0..cells {
            for x in 0..cells {
                let shifted = if y + 1 < cells { lb.data()[(c * cells + y + 1) * cells + x] } else { 0.0 };
                let orig = la.data()[(c * cells + y) * cells + x];
                assert!((shifted - orig).abs() <= 1e-9, "channel {c} cell ({y},{x})");
            }
        }
    }
    let (fa, fb) = (p.extract(&a).unwrap(), p.extract(&b).unwrap());
    for (u, v) in fa.data().iter().zip(fb.data()) {
        assert!((u - v).abs() <= 1e-9);
    }
}

#[test]
fn batch_rows_are_independent() {
    let p = ModelParams::init(Some(4), 9).unwrap();
    let x = input(3, 16);
    let mut swapped = x.data().to_vec();
    swapped[..256].copy_from_slice(&x.data()[512..]);
    swapped[512..].copy_from_slice(&x.data()[..256]);
    let xs = Tensor::new(vec![3, 1, 16, 16], swapped).unwrap();
    let (s, ss) = (
        p.discriminate(&p.extract(&x).unwrap()).unwrap(),
        p.discriminate(&p.extract(&xs).unwrap()).unwrap(),
    );
    assert_eq!(&s.data()[..4], &ss.data()[8..]);
    assert_eq!(&s.data()[4..8], &ss.data()[4..8]);

    let twins = Tensor::new(vec![2, 1, 16, 16], [&x.data()[..256], &x.data()[..256]].concat()).unwrap();
    let f = p.extract(&twins).unwrap();
    assert_eq!(&f.data()[..32], &f.data()[32..]);
}

#[test]
fn classifier_is_monotone_in_a_positive_weight_feature() {
    let mut p = ModelParams::init(None, 1).unwrap();
    p.classifier.fc.weight.data_mut().fill(0.0);
    p.classifier.fc.weight.data_mut()[4] = 0.8;
    let probs: Vec<f64> = (0..5)
        .map(|k| {
            let mut f = vec![0.1; FEATURE_DIM];
            f[4] = k as f64 * 0.5;
            p.classify(&Tensor::new(vec![1, FEATURE_DIM], f).unwrap()).unwrap().data()[0]
        })
        .collect();
    assert!(probs.windows(2).all(|w| w[0] < w[1]));
    assert!(probs.iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn checkpoints_round_trip_with_fixed_names() {
    let p = ModelParams::init(Some(3), 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    p.save(&path).unwrap();
    assert_eq!(ModelParams::load(&path).unwrap(), p);
    let names: Vec<String> = p.named().into_iter().map(|(n, _)| n).collect();
    assert_eq!(names.first().map(String::as_str), Some("e.conv1.w"));
    assert!(names.contains(&"c.fc.b".to_string()) && names.contains(&"d.fc2.w".to_string()));
    assert_eq!(p.param_count(), ModelParams::expected_param_count(Some(3)));
    assert_eq!(ModelParams::expected_param_count(None), 80 + 1168 + 4640 + 33);
}
