//! Embedding-space diagnostics and retrieval metrics: alignment and
//! uniformity over embedding sets, plus rank statistics for cross-channel
//! retrieval. Uniformity is reported without the log by default; the log
//! variant is derived from the same mean.

use crate::error::{Error, Result};
use ndarray::{s, Array2};

/// Exponent weight in the uniformity kernel exp(-t * ||xi - xj||^2).
pub const UNIFORMITY_T: f64 = 2.0;

const GRAM_BLOCK: usize = 256;

/// Mean squared distance between paired rows.
pub fn alignment(x: &Array2<f64>, y: &Array2<f64>) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::Shape(format!(
            "alignment shape mismatch: {:?} vs {:?}",
            x.dim(),
            y.dim()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::InvalidInput("alignment needs at least one pair".into()));
    }
    let n = x.nrows() as f64;
    let mut total = 0.0;
    for (a, b) in x.rows().into_iter().zip(y.rows()) {
        total += a
            .iter()
            .zip(b.iter())
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>();
    }
    Ok(total / n)
}

/// Mean of exp(-2 ||xi - xj||^2) over ordered distinct pairs, computed in
/// row blocks so the full gram matrix is never materialized.
pub fn uniformity(x: &Array2<f64>) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "uniformity needs at least 2 embeddings, got {n}"
        )));
    }
    let sq: Vec<f64> = x
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v * v).sum())
        .collect();
    let mut total = 0.0;
    for start in (0..n).step_by(GRAM_BLOCK) {
        let end = (start + GRAM_BLOCK).min(n);
        let gram = x.slice(s![start..end, ..]).dot(&x.t());
        for (bi, i) in (start..end).enumerate() {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let d2 = (sq[i] + sq[j] - 2.0 * gram[[bi, j]]).max(0.0);
                total += (-UNIFORMITY_T * d2).exp();
            }
        }
    }
    Ok(total / (n * (n - 1)) as f64)
}

/// Log of the uniformity mean, the conventional form.
pub fn log_uniformity(x: &Array2<f64>) -> Result<f64> {
    Ok(uniformity(x)?.ln())
}

/// Cosine similarity rows-of-`a` against rows-of-`b` (inputs unit norm).
pub fn similarity_matrix(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::Shape(format!(
            "similarity dims differ: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    Ok(a.dot(&b.t()))
}

/// Rank of the diagonal entry in each row, ties counted pessimistically:
/// every off-diagonal entry >= the true score pushes the rank down.
pub fn ranks_from_similarity(sim: &Array2<f64>) -> Result<Vec<usize>> {
    let (n, m) = sim.dim();
    if n != m {
        return Err(Error::Shape(format!("rank matrix must be square, got {n}x{m}")));
    }
    if n == 0 {
        return Err(Error::InvalidInput("rank matrix is empty".into()));
    }
    let mut ranks = Vec::with_capacity(n);
    for i in 0..n {
        let truth = sim[[i, i]];
        let ahead = (0..n).filter(|&j| j != i && sim[[i, j]] >= truth).count();
        ranks.push(1 + ahead);
    }
    Ok(ranks)
}

/// Median with the even case averaged over the two central order
/// statistics.
pub fn median_rank(ranks: &[usize]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::InvalidInput("median of empty rank list".into()));
    }
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    Ok(if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    })
}

/// Fraction of queries whose true match ranks within the top k.
pub fn recall_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::InvalidInput("recall of empty rank list".into()));
    }
    if k == 0 {
        return Err(Error::InvalidInput("recall needs k >= 1".into()));
    }
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn unit_rows(mut a: Array2<f64>) -> Array2<f64> {
        for mut row in a.rows_mut() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.mapv_inplace(|v| v / norm);
        }
        a
    }

    #[test]
    fn alignment_exact_extremes() {
        let x = unit_rows(Array2::from_shape_fn((5, 3), |(i, j)| (i * 3 + j) as f64 + 1.0));
        assert_eq!(alignment(&x, &x).unwrap(), 0.0);
        let y = x.mapv(|v| -v);
        // Antipodal unit vectors sit at squared distance 4.
        assert!((alignment(&x, &y).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn uniformity_exact_extremes() {
        let same = Array2::from_shape_fn((4, 2), |(_, j)| if j == 0 { 1.0 } else { 0.0 });
        assert_eq!(uniformity(&same).unwrap(), 1.0);

        let anti = array![[1.0, 0.0], [-1.0, 0.0]];
        assert!((uniformity(&anti).unwrap() - (-8.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn blocked_uniformity_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // More rows than one gram block to exercise the block boundary.
        let n = 600;
        let x = unit_rows(Array2::from_shape_fn((n, 8), |_| StandardNormal.sample(&mut rng)));
        let blocked = uniformity(&x).unwrap();
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let d2: f64 = (0..8).map(|c| (x[[i, c]] - x[[j, c]]).powi(2)).sum();
                total += (-2.0 * d2).exp();
            }
        }
        let brute = total / (n * (n - 1)) as f64;
        assert!((blocked - brute).abs() < 1e-12);
        assert!((log_uniformity(&x).unwrap() - brute.ln()).abs() < 1e-12);
    }

    #[test]
    fn uniformity_matches_sphere_expectation_in_3d() {
        // For x, y independent uniform on the 2-sphere the inner product is
        // uniform on [-1, 1], so E exp(-2||x-y||^2) integrates to
        // (1 - e^-8) / 8.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 4000;
        let x = unit_rows(Array2::from_shape_fn((n, 3), |_| StandardNormal.sample(&mut rng)));
        let expected = (1.0 - (-8.0f64).exp()) / 8.0;
        let got = uniformity(&x).unwrap();
        assert!(
            (got - expected).abs() / expected < 0.01,
            "{got} vs {expected}"
        );
    }

    #[test]
    fn metrics_invariant_under_orthogonal_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = 6;
        let x = unit_rows(Array2::from_shape_fn((40, d), |_| StandardNormal.sample(&mut rng)));
        let y = unit_rows(Array2::from_shape_fn((40, d), |_| StandardNormal.sample(&mut rng)));
        // Householder reflection: exactly orthogonal.
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let vn: f64 = v.iter().map(|a| a * a).sum();
        let h = Array2::from_shape_fn((d, d), |(i, j)| {
            let delta = if i == j { 1.0 } else { 0.0 };
            delta - 2.0 * v[i] * v[j] / vn
        });
        let xr = x.dot(&h);
        let yr = y.dot(&h);

        assert!((alignment(&x, &y).unwrap() - alignment(&xr, &yr).unwrap()).abs() < 1e-9);
        assert!((uniformity(&x).unwrap() - uniformity(&xr).unwrap()).abs() < 1e-9);
        let r1 = ranks_from_similarity(&similarity_matrix(&x, &y).unwrap()).unwrap();
        let r2 = ranks_from_similarity(&similarity_matrix(&xr, &yr).unwrap()).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn rank_hand_cases_with_ties() {
        // Row 0: truth 0.5, one strictly better, one tied -> rank 3.
        // Row 1: truth highest -> rank 1.
        // Row 2: truth tied with both others -> rank 3.
        let sim = array![
            [0.5, 0.9, 0.5],
            [0.1, 0.8, 0.3],
            [0.2, 0.2, 0.2],
        ];
        assert_eq!(ranks_from_similarity(&sim).unwrap(), vec![3, 1, 3]);
    }

    #[test]
    fn ranks_match_sorting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..20 {
            let n = 3 + (trial % 8);
            // Coarse quantization forces frequent ties.
            let sim = Array2::from_shape_fn((n, n), |_| {
                ((rng.random::<f64>() * 5.0).floor()) / 5.0
            });
            let got = ranks_from_similarity(&sim).unwrap();
            for i in 0..n {
                let mut entries: Vec<(f64, bool)> =
                    (0..n).map(|j| (sim[[i, j]], j == i)).collect();
                entries.sort_by(|a, b| {
                    b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1))
                });
                let oracle = entries.iter().position(|e| e.1).unwrap() + 1;
                assert_eq!(got[i], oracle, "trial {trial} row {i}");
            }
        }
    }

    #[test]
    fn unrelated_embeddings_have_central_median_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 1000;
        let x = unit_rows(Array2::from_shape_fn((n, 16), |_| StandardNormal.sample(&mut rng)));
        let y = unit_rows(Array2::from_shape_fn((n, 16), |_| StandardNormal.sample(&mut rng)));
        let ranks = ranks_from_similarity(&similarity_matrix(&x, &y).unwrap()).unwrap();
        let med = median_rank(&ranks).unwrap();
        assert!((400.0..=600.0).contains(&med), "median {med}");
    }

    #[test]
    fn median_and_recall_hand_cases() {
        assert_eq!(median_rank(&[5, 1, 3]).unwrap(), 3.0);
        assert_eq!(median_rank(&[4, 1, 2, 8]).unwrap(), 3.0);
        assert_eq!(median_rank(&[7]).unwrap(), 7.0);

        let ranks = [1, 2, 6, 1, 10];
        assert!((recall_at_k(&ranks, 1).unwrap() - 0.4).abs() < 1e-15);
        assert!((recall_at_k(&ranks, 5).unwrap() - 0.6).abs() < 1e-15);
        assert!((recall_at_k(&ranks, 10).unwrap() - 1.0).abs() < 1e-15);
        assert!(recall_at_k(&ranks, 0).is_err());
        assert!(recall_at_k(&[], 1).is_err());
        assert!(median_rank(&[]).is_err());
    }

    #[test]
    fn perfect_retrieval_metrics() {
        let x = unit_rows(array![
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        ]);
        let ranks = ranks_from_similarity(&similarity_matrix(&x, &x).unwrap()).unwrap();
        assert_eq!(ranks, vec![1, 1, 1]);
        assert_eq!(median_rank(&ranks).unwrap(), 1.0);
        assert_eq!(recall_at_k(&ranks, 1).unwrap(), 1.0);
    }
}
