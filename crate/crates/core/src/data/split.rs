use super::schema::N_CLASSES;
use super::DataError;
use crate::rng::{streams, RngState};

/// Per-class shuffled split: `floor(fraction * count)` rows of each class go to
/// train, the rest to test. Returns sorted index lists.
pub fn stratified_split(labels: &[usize], train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); N_CLASSES.max(labels.iter().max().map_or(0, |m| m + 1))];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut rng = RngState::stream(seed, streams::SPLIT);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut idx) in by_class.into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(DataError::Stratification { class, count: idx.len() });
        }
        rng.shuffle(&mut idx);
        let n_train = (train_fraction * idx.len() as f64).floor() as usize;
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
