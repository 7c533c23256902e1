//! Feature extractor, disease classifier and source discriminator.
//!
//! The extractor is three blocks of `conv 3×3 → relu → 2×2 avg-pool` with
//! widths 8, 16, 32, followed by global average pooling, so every image maps
//! to a 32-dim feature vector regardless of its size (H and W divisible by 8).
//! The classifier is one affine map to a logit followed by a sigmoid. The
//! discriminator is `affine 32→16 → relu → affine 16→S` with one sigmoid per
//! source.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

pub const CONV_WIDTHS: [usize; 3] = [8, 16, 32];
pub const FEATURE_DIM: usize = 32;
pub const DISC_HIDDEN: usize = 16;
pub const KERNEL: usize = 3;
/// Input H and W must be multiples of this (three 2×2 poolings).
pub const SPATIAL_MULTIPLE: usize = 8;

const CKPT_MAGIC: &[u8; 4] = b"XCKP";

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Layer {
    fn conv(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize) -> Self {
        let k2 = KERNEL * KERNEL;
        let weight = glorot(rng, &[c_out, c_in, KERNEL, KERNEL], c_in * k2, c_out * k2);
        Layer { weight, bias: Tensor::zeros(&[c_out]) }
    }

    fn affine(rng: &mut ChaCha8Rng, n_in: usize, n_out: usize) -> Self {
        let weight = glorot(rng, &[n_in, n_out], n_in, n_out);
        Layer { weight, bias: Tensor::zeros(&[n_out]) }
    }

    fn bind(&self, g: &mut Graph, trainable: bool) -> BoundLayer {
        BoundLayer {
            weight: g.leaf(self.weight.clone().with_requires_grad(trainable)),
            bias: g.leaf(self.bias.clone().with_requires_grad(trainable)),
        }
    }

    fn pull_grads(&mut self, g: &Graph, b: &BoundLayer) {
        if let Some(gw) = g.grad(b.weight) {
            self.weight.accumulate_grad(gw);
        }
        if let Some(gb) = g.grad(b.bias) {
            self.bias.accumulate_grad(gb);
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }
}

/// Uniform(−a, a) with `a = sqrt(6 / (fan_in + fan_out))`.
fn glorot(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-a..a)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and length agree")
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    pub convs: [Layer; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub fc: Layer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub fc1: Layer,
    pub fc2: Layer,
}

impl Discriminator {
    pub fn num_sources(&self) -> usize {
        self.fc2.bias.numel()
    }
}

/// The three parameter sets. `discriminator` is `None` for baseline models.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub extractor: FeatureExtractor,
    pub classifier: Classifier,
    pub discriminator: Option<Discriminator>,
}

/// Which parameter groups take gradients in a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Trainable {
    pub extractor: bool,
    pub classifier: bool,
    pub discriminator: bool,
}

impl Trainable {
    pub const ALL: Trainable = Trainable { extractor: true, classifier: true, discriminator: true };
    pub const NONE: Trainable = Trainable { extractor: false, classifier: false, discriminator: false };
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLayer {
    pub weight: Var,
    pub bias: Var,
}

/// Graph handles for one bound copy of [`ModelParams`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub convs: [BoundLayer; 3],
    pub fc: BoundLayer,
    pub disc: Option<(BoundLayer, BoundLayer)>,
}

/// Outputs of the extractor, keeping the last block for Grad-CAM.
#[derive(Clone, Copy, Debug)]
pub struct Extraction {
    /// Output of the last conv block (post-relu, post-pool), `[N,32,H/8,W/8]`.
    pub last_block: Var,
    /// Global-average-pooled features, `[N,32]`.
    pub features: Var,
}

/// Deterministic sub-stream selectors so each component's initialization is
/// independent of whether the others are built.
const STREAM_EXTRACTOR: u64 = 1;
const STREAM_CLASSIFIER: u64 = 2;
const STREAM_DISCRIMINATOR: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl ModelParams {
    /// Fresh parameters. `num_sources = None` builds no discriminator.
    pub fn init(num_sources: Option<usize>, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, STREAM_EXTRACTOR);
        let [w1, w2, w3] = CONV_WIDTHS;
        let extractor = FeatureExtractor {
            convs: [
                Layer::conv(&mut rng, 1, w1),
                Layer::conv(&mut rng, w1, w2),
                Layer::conv(&mut rng, w2, w3),
            ],
        };
        let classifier = Classifier { fc: Layer::affine(&mut stream(seed, STREAM_CLASSIFIER), FEATURE_DIM, 1) };
        let discriminator = match num_sources {
            None => None,
            Some(0) => return Err(Error::Config("discriminator needs at least one source".into())),
            Some(s) => {
                let mut rng = stream(seed, STREAM_DISCRIMINATOR);
                Some(Discriminator {
                    fc1: Layer::affine(&mut rng, FEATURE_DIM, DISC_HIDDEN),
                    fc2: Layer::affine(&mut rng, DISC_HIDDEN, s),
                })
            }
        };
        Ok(ModelParams { extractor, classifier, discriminator })
    }

    pub fn num_sources(&self) -> Option<usize> {
        self.discriminator.as_ref().map(Discriminator::num_sources)
    }

    /// Expected parameter count for the fixed widths.
    pub fn expected_param_count(num_sources: Option<usize>) -> usize {
        let mut c_in = 1;
        let mut total = 0;
        for w in CONV_WIDTHS {
            total += (c_in * KERNEL * KERNEL + 1) * w;
            c_in = w;
        }
        total += FEATURE_DIM + 1;
        if let Some(s) = num_sources {
            total += (FEATURE_DIM + 1) * DISC_HIDDEN + (DISC_HIDDEN + 1) * s;
        }
        total
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    fn layers(&self) -> Vec<(&'static str, &Layer)> {
        let e = &self.extractor.convs;
        let mut v = vec![("e.conv1", &e[0]), ("e.conv2", &e[1]), ("e.conv3", &e[2]), ("c.fc", &self.classifier.fc)];
        if let Some(d) = &self.discriminator {
            v.push(("d.fc1", &d.fc1));
            v.push(("d.fc2", &d.fc2));
        }
        v
    }

    fn layers_mut(&mut self) -> Vec<(&'static str, &mut Layer)> {
        let [c1, c2, c3] = &mut self.extractor.convs;
        let mut v = vec![("e.conv1", c1), ("e.conv2", c2), ("e.conv3", c3), ("c.fc", &mut self.classifier.fc)];
        if let Some(d) = &mut self.discriminator {
            v.push(("d.fc1", &mut d.fc1));
            v.push(("d.fc2", &mut d.fc2));
        }
        v
    }

    /// Every tensor under its checkpoint name, in checkpoint order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        self.layers()
            .into_iter()
            .flat_map(|(n, l)| [(format!("{n}.w"), &l.weight), (format!("{n}.b"), &l.bias)])
            .collect()
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.layers_mut()
            .into_iter()
            .flat_map(|(n, l)| [(format!("{n}.w"), &mut l.weight), (format!("{n}.b"), &mut l.bias)])
            .collect()
    }

    /// Tensors of the selected groups, in checkpoint order.
    pub fn select_mut(&mut self, which: Trainable) -> Vec<(String, &mut Tensor)> {
        self.named_mut()
            .into_iter()
            .filter(|(n, _)| match n.as_bytes()[0] {
                b'e' => which.extractor,
                b'c' => which.classifier,
                _ => which.discriminator,
            })
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for (_, t) in self.named_mut() {
            t.zero_grad();
        }
    }

    /// Copies the parameters into `g` as leaves.
    pub fn bind(&self, g: &mut Graph, trainable: Trainable) -> BoundParams {
        let e = &self.extractor.convs;
        BoundParams {
            convs: [
                e[0].bind(g, trainable.extractor),
                e[1].bind(g, trainable.extractor),
                e[2].bind(g, trainable.extractor),
            ],
            fc: self.classifier.fc.bind(g, trainable.classifier),
            disc: self
                .discriminator
                .as_ref()
                .map(|d| (d.fc1.bind(g, trainable.discriminator), d.fc2.bind(g, trainable.discriminator))),
        }
    }

    /// Adds the gradients that backward left on the bound leaves into each
    /// parameter's own gradient slot.
    pub fn accumulate_grads(&mut self, g: &Graph, bound: &BoundParams) {
        let [c1, c2, c3] = &mut self.extractor.convs;
        c1.pull_grads(g, &bound.convs[0]);
        c2.pull_grads(g, &bound.convs[1]);
        c3.pull_grads(g, &bound.convs[2]);
        self.classifier.fc.pull_grads(g, &bound.fc);
        if let (Some(d), Some((b1, b2))) = (&mut self.discriminator, &bound.disc) {
            d.fc1.pull_grads(g, b1);
            d.fc2.pull_grads(g, b2);
        }
    }

    /// Features of an `N×1×H×W` batch, without recording gradients.
    pub fn extract(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, Trainable::NONE);
        let xv = g.constant(x.clone());
        let ex = extract(&mut g, &b, xv)?;
        Ok(g.value(ex.features).clone())
    }

    /// Disease probabilities `N×1` for an `N×32` feature matrix.
    pub fn classify(&self, f: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, Trainable::NONE);
        let fv = g.constant(f.clone());
        let p = classify(&mut g, &b, fv)?;
        Ok(g.value(p).clone())
    }

    /// Per-source scores `N×S` for an `N×32` feature matrix.
    pub fn discriminate(&self, f: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, Trainable::NONE);
        let fv = g.constant(f.clone());
        let s = discriminate(&mut g, &b, fv)?;
        Ok(g.value(s).clone())
    }

    /// `classify(extract(x))` flattened to one probability per image.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<f64>> {
        let f = self.extract(x)?;
        Ok(self.classify(&f)?.into_data())
    }

    /// Writes a checkpoint: `XCKP`, `u32` entry count, then per entry a
    /// `u32` name length, UTF-8 name and `u64` payload offset, followed by
    /// the `XTNS`-encoded tensors back to back.
    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let named = self.named();
        w.write_all(CKPT_MAGIC)?;
        w.write_all(&(named.len() as u32).to_le_bytes())?;
        let mut offset = 0u64;
        for (name, t) in &named {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&offset.to_le_bytes())?;
            offset += t.encoded_len() as u64;
        }
        for (_, t) in &named {
            t.write_to(w)?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Self> {
        let fmt = |msg: String| Error::Format { what: "checkpoint", msg };
        let mut buf = Vec::new();
        r.read_to_end(&mut buf).map_err(|e| fmt(e.to_string()))?;
        let mut cur = &buf[..];
        let take = |cur: &mut &[u8], n: usize| -> Result<Vec<u8>> {
            if cur.len() < n {
                return Err(fmt("truncated header".into()));
            }
            let (head, rest) = cur.split_at(n);
            *cur = rest;
            Ok(head.to_vec())
        };
        if take(&mut cur, 4)? != CKPT_MAGIC {
            return Err(fmt("bad magic".into()));
        }
        let count = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap()) as usize;
        if count > 64 {
            return Err(fmt(format!("{count} entries is implausible")));
        }
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let len = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(&mut cur, len)?).map_err(|e| fmt(e.to_string()))?;
            let offset = u64::from_le_bytes(take(&mut cur, 8)?.try_into().unwrap()) as usize;
            entries.push((name, offset));
        }
        let payload = cur;
        let mut tensors = BTreeMap::new();
        for (name, offset) in entries {
            let mut slice = payload
                .get(offset..)
                .ok_or_else(|| fmt(format!("{name}: offset {offset} past end")))?;
            tensors.insert(name, Tensor::read_from(&mut slice)?);
        }
        Self::from_named(tensors)
    }

    fn from_named(mut tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        let disc_sources = tensors.get("d.fc2.b").map(Tensor::numel);
        let mut layer = |name: &str, wshape: &[usize], bshape: &[usize]| -> Result<Layer> {
            let mut get = |suffix: &str, shape: &[usize]| -> Result<Tensor> {
                let key = format!("{name}.{suffix}");
                let t = tensors
                    .remove(&key)
                    .ok_or_else(|| Error::Format { what: "checkpoint", msg: format!("missing {key}") })?;
                if t.shape() != shape {
                    return Err(Error::Format {
                        what: "checkpoint",
                        msg: format!("{key} has shape {:?}, expected {shape:?}", t.shape()),
                    });
                }
                Ok(t)
            };
            Ok(Layer { weight: get("w", wshape)?, bias: get("b", bshape)? })
        };
        let [w1, w2, w3] = CONV_WIDTHS;
        let k = KERNEL;
        let extractor = FeatureExtractor {
            convs: [
                layer("e.conv1", &[w1, 1, k, k], &[w1])?,
                layer("e.conv2", &[w2, w1, k, k], &[w2])?,
                layer("e.conv3", &[w3, w2, k, k], &[w3])?,
            ],
        };
        let classifier = Classifier { fc: layer("c.fc", &[FEATURE_DIM, 1], &[1])? };
        let discriminator = match disc_sources {
            None => None,
            Some(s) => Some(Discriminator {
                fc1: layer("d.fc1", &[FEATURE_DIM, DISC_HIDDEN], &[DISC_HIDDEN])?,
                fc2: layer("d.fc2", &[DISC_HIDDEN, s], &[s])?,
            }),
        };
        drop(layer);
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Format { what: "checkpoint", msg: format!("unexpected tensor {extra}") });
        }
        Ok(ModelParams { extractor, classifier, discriminator })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_checkpoint(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(&mut BufReader::new(file))
    }
}

/// Runs the extractor on an `N×1×H×W` batch already in the graph.
pub fn extract(g: &mut Graph, b: &BoundParams, x: Var) -> Result<Extraction> {
    let s = g.value(x).shape();
    if s.len() != 4 || s[1] != 1 {
        return Err(Error::shape("extract", format!("expected [N,1,H,W], got {s:?}")));
    }
    if s[2] % SPATIAL_MULTIPLE != 0 || s[3] % SPATIAL_MULTIPLE != 0 {
        return Err(Error::shape(
            "extract",
            format!("H and W must be multiples of {SPATIAL_MULTIPLE}, got {}×{}", s[2], s[3]),
        ));
    }
    let mut h = x;
    for layer in &b.convs {
        let c = g.conv2d(h, layer.weight, layer.bias)?;
        let r = g.relu(c);
        h = g.avg_pool2(r)?;
    }
    let features = g.global_avg_pool(h)?;
    Ok(Extraction { last_block: h, features })
}

fn affine(g: &mut Graph, l: &BoundLayer, x: Var) -> Result<Var> {
    let m = g.matmul(x, l.weight)?;
    g.bias_add(m, l.bias)
}

/// Pre-sigmoid disease logit, `N×1`.
pub fn classify_logit(g: &mut Graph, b: &BoundParams, f: Var) -> Result<Var> {
    affine(g, &b.fc, f)
}

pub fn classify(g: &mut Graph, b: &BoundParams, f: Var) -> Result<Var> {
    let z = classify_logit(g, b, f)?;
    Ok(g.sigmoid(z))
}

/// Per-source sigmoid scores, `N×S`.
pub fn discriminate(g: &mut Graph, b: &BoundParams, f: Var) -> Result<Var> {
    let (l1, l2) = b
        .disc
        .as_ref()
        .ok_or_else(|| Error::Config("model has no discriminator".into()))?;
    let h = affine(g, l1, f)?;
    let h = g.relu(h);
    let z = affine(g, l2, h)?;
    Ok(g.sigmoid(z))
}
