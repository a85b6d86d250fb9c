use std::collections::BTreeMap;

/// Shannon entropy (nats) of a count vector.
pub fn entropy(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Plug-in mutual information (nats) of two state-coded columns.
pub fn mutual_information(a: &[u32], b: &[u32], va: usize, vb: usize) -> f64 {
    assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    let mut joint = vec![0u64; va * vb];
    let mut ma = vec![0u64; va];
    let mut mb = vec![0u64; vb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x as usize * vb + y as usize] += 1;
        ma[x as usize] += 1;
        mb[y as usize] += 1;
    }
    let n = a.len() as f64;
    let mut mi = 0.0;
    for x in 0..va {
        for y in 0..vb {
            let c = joint[x * vb + y];
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (ma[x] as f64 * mb[y] as f64)).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Total-variation distance between the empirical distributions of two
/// samples.
pub fn total_variation<T: Ord>(a: impl IntoIterator<Item = T>, b: impl IntoIterator<Item = T>) -> f64 {
    let mut counts: BTreeMap<T, (u64, u64)> = BTreeMap::new();
    let (mut na, mut nb) = (0u64, 0u64);
    for x in a {
        counts.entry(x).or_default().0 += 1;
        na += 1;
    }
    for x in b {
        counts.entry(x).or_default().1 += 1;
        nb += 1;
    }
    match (na, nb) {
        (0, 0) => return 0.0,
        (0, _) | (_, 0) => return 1.0,
        _ => {}
    }
    // Exact in integers: sum |ca/na - cb/nb| = sum |ca*nb - cb*na| / (na*nb).
    let l1: u128 = counts
        .values()
        .map(|&(ca, cb)| (ca as u128 * nb as u128).abs_diff(cb as u128 * na as u128))
        .sum();
    (l1 as f64 / (2 * na as u128 * nb as u128) as f64).clamp(0.0, 1.0)
}
