//! k-nearest-neighbor index tables over row vectors.

use ndarray::{Array2, NdFloat};

use super::EncoderError;

/// Row `i` of the result holds the indices of the `k` nearest rows to row
/// `i` by Euclidean distance, nearest first, excluding `i` itself. Distance
/// ties break toward the lower index.
pub fn knn_indices<F: NdFloat>(points: &Array2<F>, k: usize) -> Result<Array2<usize>, EncoderError> {
    let n = points.nrows();
    if k == 0 || k >= n {
        return Err(EncoderError::KOutOfRange { k, n });
    }
    let mut out = Array2::<usize>::zeros((n, k));
    let mut scratch: Vec<(F, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        scratch.clear();
        let pi = points.row(i);
        for j in 0..n {
            if j == i {
                continue;
            }
            let pj = points.row(j);
            let mut d2 = F::zero();
            for (a, b) in pi.iter().zip(pj.iter()) {
                let diff = *a - *b;
                d2 += diff * diff;
            }
            scratch.push((d2, j));
        }
        let cmp = |a: &(F, usize), b: &(F, usize)| {
            a.0.partial_cmp(&b.0)
                .expect("finite distances")
                .then(a.1.cmp(&b.1))
        };
        scratch.select_nth_unstable_by(k - 1, cmp);
        scratch[..k].sort_unstable_by(cmp);
        for (t, &(_, j)) in scratch[..k].iter().enumerate() {
            out[[i, t]] = j;
        }
    }
    Ok(out)
}
