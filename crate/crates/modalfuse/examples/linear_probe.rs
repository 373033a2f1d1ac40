//! Fits linear probes on frozen toy embeddings: a regression target read
//! through a noisy linear map, and a 3-class problem with one class
//! absent from the test labels.

use modalfuse::probe::{
    eval_classification, eval_regression, fit_probe, ProbeHyper, ProbeTargets, TargetScaler,
};
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> modalfuse::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 400;
    let d = 12;
    let x = Array2::from_shape_fn((n, d), |_| StandardNormal.sample(&mut rng));
    let w: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            let lin: f64 = (0..d).map(|j| x[[i, j]] * w[j]).sum();
            let noise: f64 = StandardNormal.sample(&mut rng);
            lin + 0.1 * noise
        })
        .collect();

    let train = x.slice(ndarray::s![..300, ..]).to_owned();
    let test = x.slice(ndarray::s![300.., ..]).to_owned();
    let scaler = TargetScaler::fit(&raw[..300])?;
    let scaled_train: Vec<f64> = raw[..300].iter().map(|&v| scaler.apply(v)).collect();
    let scaled_test: Vec<f64> = raw[300..].iter().map(|&v| scaler.apply(v)).collect();

    let hyper = ProbeHyper::default();
    let probe = fit_probe(&train, &ProbeTargets::Regression(scaled_train), &hyper)?;
    let reg = eval_regression(&probe, &test, &scaled_test)?;
    println!("regression: l1 {:.4}, pearson r {:?}", reg.l1, reg.pearson_r);

    let labels: Vec<usize> = (0..300).map(|i| if raw[i] < -0.5 { 0 } else if raw[i] < 0.5 { 1 } else { 2 }).collect();
    let probe = fit_probe(&train, &ProbeTargets::Classification { labels, classes: 3 }, &hyper)?;
    // Hold out class 2 at test time to show absent-class reporting.
    let test_labels: Vec<usize> = (300..n).map(|i| if raw[i] < -0.5 { 0 } else { 1 }).collect();
    let cls = eval_classification(&probe, &test, &test_labels)?;
    println!(
        "classification: ce {:.4}, macro aupr {:.4}, per-class {:?}, absent {:?}",
        cls.ce, cls.macro_aupr, cls.per_class_aupr, cls.absent_classes
    );
    Ok(())
}
