//! Grad-CAM shape, scaling and interpolation properties.

use proptest::prelude::*;

use xinv::attribution::{bilinear_upsample, grad_cam};
use xinv::datapipe::pgm::{read_pgm, GrayImage};
use xinv::model::{self, ModelParams, Trainable};
use xinv::{Graph, Tensor};

fn image(size: usize, seed: u64) -> Tensor {
    let data = (0..size * size)
        .map(|i| ((i as u64).wrapping_mul(2654435761).wrapping_add(seed.wrapping_mul(97)) % 1000) as f64 / 1000.0)
        .collect();
    Tensor::new(vec![1, size, size], data).unwrap()
}

fn without_biases(seed: u64) -> ModelParams {
    let mut p = ModelParams::init(None, seed).unwrap();
    for (name, t) in p.named_mut() {
        if name.ends_with(".b") {
            t.data_mut().fill(0.0);
        }
    }
    p
}

#[test]
fn uniform_channel_weights_give_the_channel_sum() {
    let mut p = ModelParams::init(None, 2).unwrap();
    p.classifier.fc.weight.data_mut().fill(0.3);
    let img = image(32, 1);
    let hm = grad_cam(&p, &img).unwrap();

    let mut g = Graph::new();
    let b = p.bind(&mut g, Trainable::NONE);
    let x = g.constant(img.clone().reshape(vec![1, 1, 32, 32]).unwrap());
    let last = model::extract(&mut g, &b, x).unwrap().last_block;
    let a = g.value(last).clone();
    let plane = 16;
    let summed: Vec<f64> = (0..plane).map(|i| (0..32).map(|k| a.data()[k * plane + i]).sum()).collect();
    let mut expected = bilinear_upsample(&summed, (4, 4), (32, 32));
    let max = expected.iter().copied().fold(0.0, f64::max);
    expected.iter_mut().for_each(|v| *v /= max);
    for (u, v) in hm.values.iter().zip(&expected) {
        assert!((u - v).abs() < 1e-12);
    }
}

#[test]
fn positive_scaling_keeps_the_peak_without_biases() {
    for seed in 0..5 {
        let p = without_biases(seed);
        let img = image(32, seed);
        let base = grad_cam(&p, &img).unwrap();
        for c in [0.25, 3.0] {
            let scaled = Tensor::new(img.shape().to_vec(), img.data().iter().map(|v| v * c).collect()).unwrap();
            let hm = grad_cam(&p, &scaled).unwrap();
            assert_eq!(hm.argmax(), base.argmax(), "seed {seed}, scale {c}");
            for (u, v) in hm.values.iter().zip(&base.values) {
                assert!((u - v).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn files_are_written_beside_the_heatmap() {
    let p = ModelParams::init(Some(3), 1).unwrap();
    let img = image(16, 2);
    let gray = GrayImage::from_unit(16, 16, img.data());
    let hm = grad_cam(&p, &gray.to_tensor()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cam.pgm");
    hm.write_all(&path, &gray).unwrap();
    let composite = read_pgm(dir.path().join("cam.composite.pgm")).unwrap();
    assert_eq!((composite.width, composite.height), (32, 16));
    assert_eq!(read_pgm(&path).unwrap(), hm.to_gray());
    let csv = std::fs::read_to_string(dir.path().join("cam.csv")).unwrap();
    assert_eq!(csv.lines().count(), 16);
    assert!(grad_cam(&p, &Tensor::zeros(&[1, 12, 12])).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn heatmaps_are_normalized_and_input_sized(seed in any::<u64>(), size in prop::sample::select(vec![8usize, 16, 32])) {
        let p = ModelParams::init(None, seed % 50).unwrap();
        let hm = grad_cam(&p, &image(size, seed)).unwrap();
        prop_assert_eq!((hm.height, hm.width), (size, size));
        prop_assert!(hm.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let max = hm.max();
        prop_assert!(max == 0.0 || max == 1.0);
    }

    #[test]
    fn upsampling_is_monotone_between_knots(grid in prop::collection::vec(-5.0f64..5.0, 16), out in 5usize..40) {
        let up = bilinear_upsample(&grid, (4, 4), (out, out));
        prop_assert_eq!(up[0], grid[0]);
        prop_assert_eq!(up[out - 1], grid[3]);
        prop_assert_eq!(up[(out - 1) * out], grid[12]);
        prop_assert_eq!(up[out * out - 1], grid[15]);
        // along a knot row the values move monotonically between neighbouring knots
        let row = &up[..out];
        for k in 0..3 {
            let (lo, hi) = (grid[k].min(grid[k + 1]), grid[k].max(grid[k + 1]));
            let rising = grid[k + 1] >= grid[k];
            let seg: Vec<f64> = (0..out)
                .filter(|&x| {
                    let t = x as f64 * 3.0 / (out - 1) as f64;
                    t >= k as f64 && t <= (k + 1) as f64
                })
                .map(|x| row[x])
                .collect();
            for w in seg.windows(2) {
                let ordered = if rising { w[1] >= w[0] - 1e-12 } else { w[1] <= w[0] + 1e-12 };
                prop_assert!(ordered);
            }
            prop_assert!(seg.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
        }
    }
}
