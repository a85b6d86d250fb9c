use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::RiskError;

/// Per-class shuffle, then the first `round(ratio * class size)` rows of
/// each class go to training. Returns sorted `(train, test)` row indices.
pub fn stratified_split(labels: &[u8], ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), RiskError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [0u8, 1] {
        let mut rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if rows.len() < 2 {
            return Err(RiskError::ClassTooSmall {
                class,
                count: rows.len(),
            });
        }
        rows.shuffle(&mut rng);
        let k = ((ratio * rows.len() as f64).round() as usize).clamp(1, rows.len() - 1);
        train.extend_from_slice(&rows[..k]);
        test.extend_from_slice(&rows[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
