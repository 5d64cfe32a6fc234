use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ImageDataset;
use crate::error::{Error, Result};

pub const SQUARE_SIDE: usize = 5;
/// Top-left corners of a 5x5 square kept 2 pixels from the border of a
/// 28x28 image.
pub const SQUARE_CORNERS: [(usize, usize); 4] = [(2, 2), (2, 21), (21, 2), (21, 21)];

/// Corner used for image `index` under `seed`.
pub fn square_corner(seed: u64, index: usize) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    SQUARE_CORNERS[rng.random_range(0..SQUARE_CORNERS.len())]
}

/// Stamps a saturated 5x5 square into one random corner of every image.
pub fn make_mnist_square(ds: &ImageDataset, seed: u64) -> Result<ImageDataset> {
    if ds.height != 28 || ds.width != 28 {
        return Err(Error::arg(format!(
            "square corruption needs 28x28 images, got {}x{}",
            ds.height, ds.width
        )));
    }
    let mut out = ds.clone().with_name(format!("{}-Square", ds.name));
    for i in 0..out.len() {
        let (r0, c0) = square_corner(seed, i);
        let img = out.image_mut(i);
        for r in r0..r0 + SQUARE_SIDE {
            img[r * 28 + c0..r * 28 + c0 + SQUARE_SIDE].fill(1.0);
        }
    }
    Ok(out)
}
