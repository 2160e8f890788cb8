//! Gray-value measures: normalized cross-correlation and normalized mutual
//! information.

use super::{Patch, SimilarityError};

pub const DEFAULT_NMI_BINS: usize = 64;

/// Pearson correlation with N−1 normalization, clamped to [−1, 1].
pub fn ncc(i: &Patch, j: &Patch) -> Result<f64, SimilarityError> {
    if i.size() != j.size() {
        return Err(SimilarityError::SizeMismatch(i.size(), j.size()));
    }
    let (a, b) = (i.samples(), j.samples());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(SimilarityError::ConstantPatch);
    }
    let nm1 = n - 1.0;
    let rho = (sab / nm1) / ((saa / nm1).sqrt() * (sbb / nm1).sqrt());
    Ok(rho.clamp(-1.0, 1.0))
}

fn bin_indices(p: &Patch, bins: usize) -> Result<Vec<usize>, SimilarityError> {
    let (lo, hi) = p.grid().min_max();
    if !(hi > lo) {
        return Err(SimilarityError::DegenerateHistogram);
    }
    let scale = bins as f64 / (hi - lo);
    Ok(p.samples()
        .iter()
        .map(|&v| (((v - lo) * scale) as usize).min(bins - 1))
        .collect())
}

/// Shannon entropy from counts. Counts are sorted first so that equal
/// multisets of counts give bit-identical entropies.
fn entropy(counts: impl Iterator<Item = u64>, total: f64) -> f64 {
    let mut c: Vec<u64> = counts.filter(|&c| c > 0).collect();
    c.sort_unstable();
    -c.into_iter()
        .map(|c| {
            let p = c as f64 / total;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Studholme normalized mutual information (H(I)+H(J))/H(I,J) on a
/// `bins`×`bins` joint histogram with per-patch min-max binning.
pub fn nmi(i: &Patch, j: &Patch, bins: usize) -> Result<f64, SimilarityError> {
    if i.size() != j.size() {
        return Err(SimilarityError::SizeMismatch(i.size(), j.size()));
    }
    let bins = bins.max(2);
    let bi = bin_indices(i, bins)?;
    let bj = bin_indices(j, bins)?;
    let mut joint = vec![0u64; bins * bins];
    let mut hi = vec![0u64; bins];
    let mut hj = vec![0u64; bins];
    for (&a, &b) in bi.iter().zip(&bj) {
        joint[a * bins + b] += 1;
        hi[a] += 1;
        hj[b] += 1;
    }
    let total = bi.len() as f64;
    let h_i = entropy(hi.into_iter(), total);
    let h_j = entropy(hj.into_iter(), total);
    let h_ij = entropy(joint.into_iter(), total);
    Ok(((h_i + h_j) / h_ij).clamp(1.0, 2.0))
}
