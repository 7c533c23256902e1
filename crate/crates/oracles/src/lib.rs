//! Brute-force reference computations for checking `xinv` in tests.
//!
//! Nothing here depends on `xinv`: every routine works on plain slices and
//! closures, so a bug in the library cannot leak into its own oracle.

use std::collections::BTreeMap;
use std::fmt;

/// Outcome of comparing an implementation against a reference.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    pub reference: Vec<f64>,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl OracleResult {
    fn check(reference: Vec<f64>, max_error: f64, tolerance: f64, detail: String) -> Self {
        let passed = max_error <= tolerance;
        OracleResult { reference, max_error, tolerance, passed, detail }
    }
}

impl fmt::Display for OracleResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (max error {:.3e}, tolerance {:.1e}){}",
            if self.passed { "pass" } else { "FAIL" },
            self.max_error,
            self.tolerance,
            if self.detail.is_empty() { String::new() } else { format!(": {}", self.detail) }
        )
    }
}

/// Central-difference gradient `(f(θ + h e_i) − f(θ − h e_i)) / 2h`.
pub fn fd_gradient(mut f: impl FnMut(&[f64]) -> f64, theta: &[f64], h: f64) -> Vec<f64> {
    assert!(h > 0.0, "step must be positive");
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|, floor)`; the floor keeps near-zero gradients from
/// turning rounding noise into huge relative errors.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares an analytic gradient against a finite-difference one.
pub fn compare_gradients(analytic: &[f64], numeric: &[f64], tolerance: f64, floor: f64) -> OracleResult {
    assert_eq!(analytic.len(), numeric.len());
    let (worst, idx) = analytic
        .iter()
        .zip(numeric)
        .enumerate()
        .map(|(i, (&a, &n))| (relative_error(a, n, floor), i))
        .fold((0.0, 0), |acc, x| if x.0 > acc.0 { x } else { acc });
    let detail = if analytic.is_empty() {
        String::new()
    } else {
        format!("worst at {idx}: analytic {} vs numeric {}", analytic[idx], numeric[idx])
    };
    OracleResult::check(numeric.to_vec(), worst, tolerance, detail)
}

/// All-pairs Mann–Whitney AUC: `(#{pos > neg} + ½·#{pos = neg}) / (P·N)`.
/// `None` when either class is absent.
pub fn auc_bruteforce(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    // Count in half-units so the numerator stays an exact integer.
    let mut halves: u64 = 0;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                halves += 2;
            } else if p == n {
                halves += 1;
            }
        }
    }
    Some(halves as f64 / 2.0 / (pos.len() as f64 * neg.len() as f64))
}

/// Area under the empirical ROC curve by the trapezoid rule, sweeping the
/// threshold down through every distinct score.
pub fn auc_trapezoid(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let p = labels.iter().filter(|&&l| l).count() as f64;
    let n = labels.len() as f64 - p;
    if p == 0.0 || n == 0.0 {
        return None;
    }
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).expect("scores must not be NaN"));
    thresholds.dedup();
    let mut area = 0.0;
    let (mut prev_fpr, mut prev_tpr) = (0.0, 0.0);
    for t in thresholds {
        let tp = scores.iter().zip(labels).filter(|(&s, &l)| l && s >= t).count() as f64;
        let fp = scores.iter().zip(labels).filter(|(&s, &l)| !l && s >= t).count() as f64;
        let (fpr, tpr) = (fp / n, tp / p);
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_fpr = fpr;
        prev_tpr = tpr;
    }
    Some(area)
}

/// Checks one epoch of a balanced multi-source stream.
///
/// `sizes[s]` is the number of distinct items in source `s`; `emitted` lists
/// `(source, item)` pairs in stream order. With `M = max(sizes)` the epoch
/// must hold exactly `S·M` entries, `M` per source, every item of a largest
/// source exactly once, and every item of a smaller source either `⌊M/n⌋`
/// or `⌈M/n⌉` times.
pub fn check_balanced_epoch(sizes: &[usize], emitted: &[(usize, usize)]) -> OracleResult {
    let m = sizes.iter().copied().max().unwrap_or(0);
    let mut problems = Vec::new();
    if emitted.len() != sizes.len() * m {
        problems.push(format!("epoch length {} != {}·{}", emitted.len(), sizes.len(), m));
    }
    let mut per_source = vec![0usize; sizes.len()];
    let mut per_item: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for &(s, i) in emitted {
        if s >= sizes.len() || i >= sizes[s] {
            problems.push(format!("item ({s},{i}) out of range"));
            continue;
        }
        per_source[s] += 1;
        *per_item.entry((s, i)).or_default() += 1;
    }
    for (s, &n) in sizes.iter().enumerate() {
        if per_source[s] != m {
            problems.push(format!("source {s} emitted {} times, expected {m}", per_source[s]));
        }
        let (lo, hi) = (m / n, m.div_ceil(n));
        for i in 0..n {
            let c = per_item.get(&(s, i)).copied().unwrap_or(0);
            if c < lo || c > hi {
                problems.push(format!("item ({s},{i}) seen {c} times, expected {lo}..={hi}"));
            }
        }
    }
    let counts = per_source.iter().map(|&c| c as f64).collect();
    let err = problems.len() as f64;
    OracleResult::check(counts, err, 0.0, problems.into_iter().take(5).collect::<Vec<_>>().join("; "))
}

/// Elementwise comparison of two parameter updates.
pub fn compare_updates(a: &[f64], b: &[f64], tolerance: f64) -> OracleResult {
    assert_eq!(a.len(), b.len(), "updates must cover the same parameters");
    let (worst, idx) = a
        .iter()
        .zip(b)
        .enumerate()
        .map(|(i, (x, y))| ((x - y).abs(), i))
        .fold((0.0, 0), |acc, x| if x.0 > acc.0 { x } else { acc });
    OracleResult::check(b.to_vec(), worst, tolerance, format!("worst at index {idx}"))
}

/// Direct-loop stride-1 "same" convolution of one `C×H×W` image with an
/// `O×C×k×k` kernel. Used to cross-check recorded model outputs.
pub fn conv2d_direct(
    img: &[f64],
    (c, h, w): (usize, usize, usize),
    kernel: &[f64],
    (o, k): (usize, usize),
    bias: &[f64],
) -> Vec<f64> {
    let p = (k / 2) as isize;
    let mut out = vec![0.0; o * h * w];
    for oc in 0..o {
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut acc = bias[oc];
                for ic in 0..c {
                    for ky in 0..k as isize {
                        for kx in 0..k as isize {
                            let (sy, sx) = (y + ky - p, x + kx - p);
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            let kv = kernel[((oc * c + ic) * k + ky as usize) * k + kx as usize];
                            acc += kv * img[(ic * h + sy as usize) * w + sx as usize];
                        }
                    }
                }
                out[(oc * h + y as usize) * w + x as usize] = acc;
            }
        }
    }
    out
}

/// One-sided sign test: `P(X ≥ wins)` for `X ~ Binomial(trials, ½)`.
pub fn sign_test_p(wins: usize, trials: usize) -> f64 {
    let mut p = 0.0;
    for k in wins..=trials {
        p += binomial(trials, k) * 0.5f64.powi(trials as i32);
    }
    p
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
