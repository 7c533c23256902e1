//! Balanced stream counting, PGM round trips, manifests and the generator.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use proptest::prelude::*;

use xinv::datapipe::pgm::{decode, encode, GrayImage};
use xinv::datapipe::synth::{causal_region, generate_items, watermark_region};
use xinv::datapipe::{balanced_stream, write_synth, BalancedStream, Dataset, Manifest, SynthSpec};
use xinv_oracles::check_balanced_epoch;

fn source_of(sizes: &[usize]) -> Vec<usize> {
    sizes.iter().enumerate().flat_map(|(s, &n)| vec![s; n]).collect()
}

fn as_pairs(sizes: &[usize], order: &[usize]) -> Vec<(usize, usize)> {
    let src = source_of(sizes);
    let start: Vec<usize> = (0..sizes.len()).map(|s| sizes[..s].iter().sum()).collect();
    order.iter().map(|&i| (src[i], i - start[src[i]])).collect()
}

#[test]
fn ten_thousand_example_epoch_is_exactly_balanced() {
    let sizes = [5000, 1234];
    let mut stream = BalancedStream::new(&source_of(&sizes), 2, 64, 3).unwrap();
    let epoch = stream.next_epoch();
    assert_eq!(epoch.order().len(), 10_000);
    let r = check_balanced_epoch(&sizes, &as_pairs(&sizes, epoch.order()));
    assert!(r.passed, "{r}");
    assert_eq!(r.reference, vec![5000.0, 5000.0]);
}

#[test]
fn three_equal_sources_are_each_seen_once() {
    let sizes = [3, 3, 3];
    let mut stream = BalancedStream::new(&source_of(&sizes), 3, 4, 0).unwrap();
    let mut order = stream.next_epoch().order().to_vec();
    order.sort_unstable();
    assert_eq!(order, (0..9).collect::<Vec<_>>());
}

#[test]
fn stream_over_a_manifest() {
    let m = Manifest::from_rows("/", [("a", 1u8, "A"), ("b", 0, "A"), ("c", 1, "A"), ("d", 0, "B")]).unwrap();
    let mut stream = balanced_stream(&m, 2, 1).unwrap();
    let batches: Vec<Vec<usize>> = stream.next_epoch().collect();
    assert_eq!(batches.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 2, 2]);
    assert_eq!(batches.concat().iter().filter(|&&i| i == 3).count(), 3);
}

proptest! {
    #[test]
    fn every_epoch_passes_the_counting_oracle(
        sizes in prop::collection::vec(1usize..25, 1..6),
        batch in 1usize..20,
        seed in any::<u64>(),
    ) {
        let mut stream = BalancedStream::new(&source_of(&sizes), sizes.len(), batch, seed).unwrap();
        for _ in 0..3 {
            let epoch = stream.next_epoch();
            let r = check_balanced_epoch(&sizes, &as_pairs(&sizes, epoch.order()));
            prop_assert!(r.passed, "{}", r);
            let batches: Vec<Vec<usize>> = epoch.collect();
            prop_assert!(batches.iter().rev().skip(1).all(|b| b.len() == batch));
        }
    }

    #[test]
    fn seeds_change_order_not_counts(sizes in prop::collection::vec(1usize..25, 2..5), seed in any::<u64>()) {
        let run = |seed: u64| BalancedStream::new(&source_of(&sizes), sizes.len(), 8, seed).unwrap().next_epoch();
        let (a, b) = (run(seed), run(seed));
        prop_assert_eq!(a.order(), b.order());
        let c = run(seed.wrapping_add(1));
        let mut x = a.order().to_vec();
        let mut y = c.order().to_vec();
        x.sort_unstable();
        y.sort_unstable();
        let count = |v: &[usize]| as_pairs(&sizes, v).iter().fold(vec![0; sizes.len()], |mut acc, &(s, _)| {
            acc[s] += 1;
            acc
        });
        prop_assert_eq!(count(&x), count(&y));
    }

    #[test]
    fn pgm_round_trips(width in 1usize..20, height in 1usize..20, seed in any::<u8>()) {
        let pixels = (0..width * height).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect();
        let img = GrayImage { width, height, pixels };
        prop_assert_eq!(decode(&encode(&img)).unwrap(), img);
    }
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn small_spec() -> SynthSpec {
    SynthSpec { n: 12, size: 16, ..SynthSpec::default() }
}

#[test]
fn generator_output_is_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_synth(&small_spec(), a.path()).unwrap();
    write_synth(&small_spec(), b.path()).unwrap();
    let (ta, tb) = (read_tree(a.path()), read_tree(b.path()));
    assert_eq!(ta.len(), 4 * 24 + 3);
    assert_eq!(ta, tb);

    let c = tempfile::tempdir().unwrap();
    write_synth(&SynthSpec { seed: 8, ..small_spec() }, c.path()).unwrap();
    assert_ne!(read_tree(c.path()), ta);
}

#[test]
fn written_dataset_loads_back_like_the_in_memory_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = write_synth(&small_spec(), dir.path()).unwrap();
    let loaded = Dataset::load(dir.path()).unwrap();
    let memory = xinv::datapipe::generate(&small_spec()).unwrap();
    assert_eq!(loaded.source_names, memory.source_names);
    assert_eq!(loaded.train, memory.train);
    assert_eq!(loaded.test, memory.test);
    assert_eq!(SynthSpec::load(&out.spec_file).unwrap(), small_spec());
    let m = Manifest::load(&out.train_manifest).unwrap();
    assert_eq!(m.len(), 48);
    assert_eq!(m.image_size().unwrap(), 16);
}

#[test]
fn planted_patterns_live_in_their_regions() {
    let spec = SynthSpec { sigma: 0.0, severity_min: 1.0, ..small_spec() };
    let blob = causal_region(spec.size);
    for it in generate_items(&spec).unwrap() {
        let mark = watermark_region(spec.size, spec.corner_of(it.source));
        for y in 0..spec.size {
            for x in 0..spec.size {
                let v = it.image.pixels[y * spec.size + x];
                let expected_lit = (it.label == 1 && blob.contains(y, x)) || (it.scene.watermark && mark.contains(y, x));
                assert_eq!(v > 0, expected_lit, "{} at ({y},{x})", it.path.display());
            }
        }
    }
}
