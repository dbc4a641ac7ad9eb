use super::DataError;
use crate::rng::SplitMix64;

/// Index batches for one epoch.
///
/// With `balanced` set and exactly two classes present, every batch holds
/// `batch_size / 2` samples of each class: the majority class is walked once
/// in shuffled order (the final chunk topped up by resampling), the minority
/// is drawn with replacement. Otherwise indices are shuffled and chunked.
pub fn balanced_batches(
    indices: &[usize],
    labels: &[usize],
    batch_size: usize,
    seed: u64,
    balanced: bool,
) -> Result<Vec<Vec<usize>>, DataError> {
    if batch_size == 0 {
        return Err(DataError::invalid("batch size must be positive"));
    }
    let mut rng = SplitMix64::new(seed);
    let mut classes: Vec<usize> = indices.iter().map(|&i| labels[i]).collect();
    classes.sort_unstable();
    classes.dedup();

    if !balanced || classes.len() != 2 {
        if balanced && classes.len() == 1 {
            log::warn!("balanced batching requested but only one class is present; using plain batches");
        }
        let mut order = indices.to_vec();
        rng.shuffle(&mut order);
        return Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect());
    }
    if !batch_size.is_multiple_of(2) {
        return Err(DataError::invalid(format!(
            "balanced batching needs an even batch size, got {batch_size}"
        )));
    }
    let half = batch_size / 2;
    let (a, b) = (classes[0], classes[1]);
    let mut pa: Vec<usize> = indices.iter().copied().filter(|&i| labels[i] == a).collect();
    let mut pb: Vec<usize> = indices.iter().copied().filter(|&i| labels[i] == b).collect();
    // ties make the lower label the majority
    let (major, minor) = if pb.len() > pa.len() {
        (&mut pb, &mut pa)
    } else {
        (&mut pa, &mut pb)
    };
    rng.shuffle(major);
    let mut batches = Vec::with_capacity(major.len().div_ceil(half));
    for chunk in major.chunks(half) {
        let mut batch = chunk.to_vec();
        while batch.len() < half {
            batch.push(major[rng.below(major.len())]);
        }
        for _ in 0..half {
            batch.push(minor[rng.below(minor.len())]);
        }
        rng.shuffle(&mut batch);
        batches.push(batch);
    }
    Ok(batches)
}
