use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::types::{DatasetManifest, Split};

/// Largest-remainder apportionment of `n` items over `ratios`.
///
/// Every bucket with a nonzero ratio receives at least one item; when the
/// plain apportionment leaves one empty, an item is moved over from the
/// currently largest bucket.
pub fn apportion(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be non-negative, got {ratios:?}"
        )));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios must sum to 1, got {sum}"
        )));
    }
    let nonzero = ratios.iter().filter(|r| **r > 0.0).count();
    if n < nonzero {
        return Err(Error::InvalidArgument(format!(
            "{n} scans cannot fill {nonzero} non-empty splits"
        )));
    }
    let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    // The epsilon absorbs products such as 0.7 * 10 = 6.999...
    let mut counts: [usize; 3] = [0; 3];
    for (c, q) in counts.iter_mut().zip(&quotas) {
        *c = (q + 1e-9).floor() as usize;
    }
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - counts[a] as f64;
        let rb = quotas[b] - counts[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if ratios[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    for i in 0..3 {
        if ratios[i] > 0.0 && counts[i] == 0 {
            let donor = (0..3).max_by_key(|&j| (counts[j], usize::MAX - j)).unwrap();
            counts[donor] -= 1;
            counts[i] += 1;
        }
    }
    Ok(counts)
}

/// Assigns every record to a split such that all slices of a scan share one split.
///
/// The result depends only on the sorted set of scan ids, the ratios and the
/// seed; record order is preserved.
pub fn grouped_split(
    manifest: &DatasetManifest,
    ratios: [f64; 3],
    seed: u64,
) -> Result<DatasetManifest> {
    let scans: BTreeSet<&str> = manifest.records.iter().map(|r| r.scan_id.as_str()).collect();
    let mut scans: Vec<&str> = scans.into_iter().collect();
    let counts = apportion(scans.len(), ratios)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    scans.shuffle(&mut rng);

    let mut assignment: BTreeMap<&str, Split> = BTreeMap::new();
    let mut it = scans.into_iter();
    for (split, count) in Split::ALL.into_iter().zip(counts) {
        for scan in it.by_ref().take(count) {
            assignment.insert(scan, split);
        }
    }

    let mut out = manifest.clone();
    out.seed = seed;
    for r in &mut out.records {
        r.split = Some(assignment[r.scan_id.as_str()]);
    }
    Ok(out)
}
