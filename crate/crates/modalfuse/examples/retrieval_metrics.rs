//! Uniformity, alignment, and cross-channel retrieval on toy embeddings:
//! a shared signal plus per-channel noise, swept over noise levels.

use modalfuse::metrics::{
    alignment, log_uniformity, median_rank, ranks_from_similarity, recall_at_k,
    similarity_matrix, uniformity,
};
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn unit_rows(mut m: Array2<f64>) -> Array2<f64> {
    for mut row in m.rows_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.mapv_inplace(|v| v / norm);
    }
    m
}

fn main() -> modalfuse::Result<()> {
    let n = 256;
    let d = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let shared = Array2::from_shape_fn((n, d), |_| StandardNormal.sample(&mut rng));

    println!("{:>6} {:>10} {:>10} {:>12} {:>8} {:>8}", "noise", "align", "uniform", "log_uniform", "medrank", "r@5");
    for noise in [0.1, 0.5, 1.0, 2.0] {
        let a = unit_rows(
            &shared + &Array2::from_shape_fn((n, d), |_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                v * noise
            }),
        );
        let b = unit_rows(
            &shared + &Array2::from_shape_fn((n, d), |_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                v * noise
            }),
        );
        let ranks = ranks_from_similarity(&similarity_matrix(&a, &b)?)?;
        println!(
            "{:>6} {:>10.4} {:>10.4} {:>12.4} {:>8} {:>8.3}",
            noise,
            alignment(&a, &b)?,
            uniformity(&a)?,
            log_uniformity(&a)?,
            median_rank(&ranks)?,
            recall_at_k(&ranks, 5)?,
        );
    }
    Ok(())
}
