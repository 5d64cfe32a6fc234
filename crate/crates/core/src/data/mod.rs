//! Image datasets: IDX ingestion, stratified sampling and synthetic
//! artifact corruption.

mod idx;
mod sampling;
mod square;

pub use idx::{load_idx, read_idx_images, read_idx_labels, IMAGE_MAGIC, LABEL_MAGIC};
pub use sampling::{stratified_indices, stratified_sample};
pub use square::{make_mnist_square, square_corner, SQUARE_CORNERS, SQUARE_SIDE};

use crate::error::{Error, Result};

/// A set of equally sized grayscale images with integer labels.
///
/// Pixels are stored row-major, one image after another, already scaled
/// into `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub class_count: usize,
    pixels: Vec<f32>,
    labels: Vec<usize>,
}

impl ImageDataset {
    pub fn new(
        name: impl Into<String>,
        height: usize,
        width: usize,
        class_count: usize,
        pixels: Vec<f32>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let dim = height * width;
        if dim == 0 {
            return Err(Error::arg("image dimensions must be non-zero"));
        }
        if pixels.len() != dim * labels.len() {
            return Err(Error::Consistency(format!(
                "{} pixels do not form {} images of {}x{}",
                pixels.len(),
                labels.len(),
                height,
                width
            )));
        }
        if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::arg(format!("pixel value {bad} outside [0,1]")));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Consistency(format!(
                "label {bad} not below class count {class_count}"
            )));
        }
        Ok(Self {
            name: name.into(),
            height,
            width,
            class_count,
            pixels,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Flattened feature count `H * W`.
    pub fn dim(&self) -> usize {
        self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let d = self.dim();
        &self.pixels[i * d..(i + 1) * d]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    /// Number of images per label.
    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.class_count];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// New dataset made of the given indices, in order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let d = self.dim();
        let mut pixels = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Self {
            name: self.name.clone(),
            height: self.height,
            width: self.width,
            class_count: self.class_count,
            pixels,
            labels,
        }
    }

    /// Split into the first `n` images and the rest.
    pub fn split_at(&self, n: usize) -> (Self, Self) {
        let n = n.min(self.len());
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        (self.subset(&head), self.subset(&tail))
    }

    pub(crate) fn image_mut(&mut self, i: usize) -> &mut [f32] {
        let d = self.dim();
        &mut self.pixels[i * d..(i + 1) * d]
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}
