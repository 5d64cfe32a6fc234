use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ImageDataset;
use crate::error::{Error, Result};

/// Per-class quotas summing to `total`, as even as class sizes allow.
///
/// Classes that cannot fill their share hand the shortfall to the others.
/// Leftover units after an even split go to classes in `order`.
fn allocate(sizes: &[usize], total: usize, order: &[usize]) -> Vec<usize> {
    let mut alloc = vec![0usize; sizes.len()];
    let mut remaining = total;
    while remaining > 0 {
        let active: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&c| alloc[c] < sizes[c])
            .collect();
        if active.is_empty() {
            break;
        }
        let share = remaining / active.len();
        if share == 0 {
            for &c in active.iter().take(remaining) {
                alloc[c] += 1;
            }
            break;
        }
        for &c in &active {
            let take = share.min(sizes[c] - alloc[c]);
            alloc[c] += take;
            remaining -= take;
        }
    }
    alloc
}

/// Indices of a stratified random sample of `total` items drawn over
/// `labels`, returned in shuffled order.
pub fn stratified_indices(
    labels: &[usize],
    class_count: usize,
    total: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if total > labels.len() {
        return Err(Error::arg(format!(
            "requested {total} samples from a set of {}",
            labels.len()
        )));
    }
    let populated = {
        let mut seen = vec![false; class_count];
        labels.iter().for_each(|&l| seen[l] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if total < populated {
        return Err(Error::arg(format!(
            "sample of {total} cannot cover {populated} classes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); class_count];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let mut order: Vec<usize> = (0..class_count).collect();
    order.shuffle(&mut rng);
    let alloc = allocate(&sizes, total, &order);

    let mut picked = Vec::with_capacity(total);
    for (members, &k) in by_class.iter_mut().zip(&alloc) {
        members.shuffle(&mut rng);
        picked.extend_from_slice(&members[..k]);
    }
    picked.shuffle(&mut rng);
    Ok(picked)
}

/// Stratified sample over the dataset's own label space.
pub fn stratified_sample(ds: &ImageDataset, total: usize, seed: u64) -> Result<ImageDataset> {
    let idx = stratified_indices(ds.labels(), ds.class_count, total, seed)?;
    Ok(ds.subset(&idx))
}
