//! Grad-CAM heatmaps over the extractor's last block.
//!
//! Channel weights are the spatial means of the gradient of the pre-sigmoid
//! disease logit with respect to the last block's activations. The weighted
//! channel sum is rectified, upsampled bilinearly to the input size and
//! divided by its maximum when that is positive.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::autodiff::{Graph, Tensor};
use crate::datapipe::pgm::{quantize, write_pgm, GrayImage};
use crate::datapipe::synth::Region;
use crate::error::{Error, Result};
use crate::model::{self, ModelParams, Trainable};

/// Non-negative map with the input's height and width, values in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Row-major position of the largest value; the first wins ties.
    pub fn argmax(&self) -> (usize, usize) {
        let i = crate::eval::argmax(&self.values);
        (i / self.width, i % self.width)
    }

    /// Share of the total heat inside `region`; zero for an all-zero map.
    pub fn mass_fraction(&self, region: Region) -> f64 {
        let total: f64 = self.values.iter().sum();
        if total <= 0.0 {
            return 0.0;
        }
        let mut inside = 0.0;
        for y in region.y0..region.y1.min(self.height) {
            for x in region.x0..region.x1.min(self.width) {
                inside += self.get(y, x);
            }
        }
        inside / total
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_unit(self.width, self.height, &self.values)
    }

    /// Input on the left, input blended 50/50 with the heatmap on the right.
    pub fn composite(&self, input: &GrayImage) -> Result<GrayImage> {
        if (input.height, input.width) != (self.height, self.width) {
            return Err(Error::shape(
                "composite",
                format!("image {}×{} vs heatmap {}×{}", input.height, input.width, self.height, self.width),
            ));
        }
        let w = self.width;
        let mut pixels = Vec::with_capacity(2 * w * self.height);
        for y in 0..self.height {
            let row = &input.pixels[y * w..(y + 1) * w];
            pixels.extend_from_slice(row);
            pixels.extend(
                row.iter()
                    .zip(&self.values[y * w..(y + 1) * w])
                    .map(|(&p, &h)| quantize(0.5 * f64::from(p) / 255.0 + 0.5 * h)),
            );
        }
        Ok(GrayImage { width: 2 * w, height: self.height, pixels })
    }

    /// One CSV row per image row, full precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.values.chunks(self.width) {
            let cells: Vec<String> = row.iter().map(f64::to_string).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    /// Writes the heatmap to `path`, plus `<stem>.composite.pgm` and `<stem>.csv` beside it.
    pub fn write_all(&self, path: impl AsRef<Path>, input: &GrayImage) -> Result<()> {
        let path = path.as_ref();
        write_pgm(path, &self.to_gray())?;
        write_pgm(path.with_extension("composite.pgm"), &self.composite(input)?)?;
        let csv = path.with_extension("csv");
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))
    }
}

/// Bilinear resize of an `h×w` grid with corners aligned, so the four
/// corner values are reproduced exactly.
pub fn bilinear_upsample(src: &[f64], (h, w): (usize, usize), (out_h, out_w): (usize, usize)) -> Vec<f64> {
    assert_eq!(src.len(), h * w, "grid size");
    let coord = |i: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        if n_out <= 1 || n_in <= 1 {
            return (0, 0, 0.0);
        }
        let t = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = (t.floor() as usize).min(n_in - 2);
        (lo, lo + 1, t - lo as f64)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = coord(y, out_h, h);
        for x in 0..out_w {
            let (x0, x1, fx) = coord(x, out_w, w);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Grad-CAM of the disease logit for one `1×H×W` image.
pub fn grad_cam(params: &ModelParams, image: &Tensor) -> Result<Heatmap> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 1 {
        return Err(Error::shape("grad_cam", format!("expected a [1,H,W] image, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let x = image.clone().reshape(vec![1, 1, h, w])?;

    let mut g = Graph::new();
    let b = params.bind(&mut g, Trainable::NONE);
    let xv = g.constant(x);
    let last = model::extract(&mut g, &b, xv)?.last_block;
    let activations = g.value(last).clone();

    // second pass from the activations so their gradient lands on a leaf
    let mut g = Graph::new();
    let b = params.bind(&mut g, Trainable::NONE);
    let a = g.param(activations.clone());
    let f = g.global_avg_pool(a)?;
    let z = model::classify_logit(&mut g, &b, f)?;
    let z = g.sum(z);
    g.backward(z)?;
    let grad = g.grad(a).expect("activations are a parameter leaf");

    let shape = activations.shape();
    let (channels, ah, aw) = (shape[1], shape[2], shape[3]);
    let plane = ah * aw;
    let mut cam = vec![0.0; plane];
    for k in 0..channels {
        let gk = grad[k * plane..(k + 1) * plane].iter().sum::<f64>() / plane as f64;
        for (c, &v) in cam.iter_mut().zip(&activations.data()[k * plane..(k + 1) * plane]) {
            *c += gk * v;
        }
    }
    cam.iter_mut().for_each(|c| *c = c.max(0.0));
    let mut values = bilinear_upsample(&cam, (ah, aw), (h, w));
    let max = values.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        values.iter_mut().for_each(|v| *v /= max);
    }
    Ok(Heatmap { height: h, width: w, values })
}
