//! Images, manifests, balanced sampling and the synthetic generator.

mod manifest;
pub mod pgm;
mod stream;
pub mod synth;

pub use manifest::{Manifest, Record};
pub use pgm::{decode_image, GrayImage};
pub use stream::{balanced_stream, BalancedStream, Epoch};
pub use synth::{generate, write_synth, SynthSpec};

use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// One image with its disease label and source index.
#[derive(Clone, Debug, PartialEq)]
pub struct SourcedExample {
    /// `1×H×W`, values in `[0,1]`.
    pub image: Tensor,
    pub label: u8,
    pub source: usize,
}

/// Stacks the selected examples into an `N×1×H×W` batch with labels and sources.
pub fn stack(examples: &[SourcedExample], idx: &[usize]) -> Result<(Tensor, Vec<f64>, Vec<usize>)> {
    let first = idx
        .first()
        .map(|&i| &examples[i])
        .ok_or_else(|| Error::Validation("cannot stack an empty batch".into()))?;
    let shape = first.image.shape().to_vec();
    let mut data = Vec::with_capacity(idx.len() * first.image.numel());
    let mut labels = Vec::with_capacity(idx.len());
    let mut sources = Vec::with_capacity(idx.len());
    for &i in idx {
        let ex = &examples[i];
        if ex.image.shape() != shape.as_slice() {
            return Err(Error::shape("stack", format!("image {i} is {:?}, expected {shape:?}", ex.image.shape())));
        }
        data.extend_from_slice(ex.image.data());
        labels.push(f64::from(ex.label));
        sources.push(ex.source);
    }
    let mut full = vec![idx.len()];
    full.extend(shape);
    Ok((Tensor::new(full, data)?, labels, sources))
}

/// Train and test splits over a shared set of named sources.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub source_names: Vec<String>,
    pub train: Vec<SourcedExample>,
    pub test: Vec<SourcedExample>,
}

impl Dataset {
    /// Reads `train.csv` and `test.csv` from `dir`. Source indices follow the
    /// train manifest; a test source absent from training is appended. All
    /// images must be square and share the size of the first one.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let train_m = Manifest::load(dir.join("train.csv"))?;
        let test_m = Manifest::load(dir.join("test.csv"))?;
        let size = train_m.image_size()?;
        let mut source_names = train_m.source_names().to_vec();
        let train = train_m.load_examples(size)?;
        let mut test = test_m.load_examples(size)?;
        for ex in &mut test {
            let name = &test_m.source_names()[ex.source];
            ex.source = match source_names.iter().position(|n| n == name) {
                Some(i) => i,
                None => {
                    source_names.push(name.clone());
                    source_names.len() - 1
                }
            };
        }
        Ok(Dataset { source_names, train, test })
    }

    pub fn num_sources(&self) -> usize {
        self.source_names.len()
    }

    pub fn source_index(&self, name: &str) -> Option<usize> {
        self.source_names.iter().position(|n| n == name)
    }
}
