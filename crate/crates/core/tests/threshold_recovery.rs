use cumprobit::{estimate_thresholds, EbOptions, GaussianPrior, Method, OrdinalDataset, RngStream};
use ndarray::{Array1, Array2};

fn simulate(n: usize, beta: &[f64], alpha: &[f64], seed: u64) -> OrdinalDataset {
    let mut rng = RngStream::new(seed, 0);
    let p = beta.len();
    let x = Array2::from_shape_fn((n, p), |_| 0.5 * rng.standard_normal());
    let eta = x.dot(&Array1::from(beta.to_vec()));
    let y = eta
        .iter()
        .map(|e| {
            let z = e + rng.standard_normal();
            1 + alpha.iter().filter(|&&a| z > a).count() as i64
        })
        .collect();
    OrdinalDataset::new(x, y, alpha.len() + 1).unwrap()
}

#[test]
fn recovers_generating_cutpoints() {
    let alpha = [-0.8, 0.0, 0.9, 1.7];
    let d = simulate(5000, &[0.0, 1.0, 1.0, -1.0, -1.0], &alpha, 41);
    let prior = GaussianPrior::isotropic(5, 0.0, 2.0).unwrap();
    for method in Method::ALL {
        let eb = estimate_thresholds(&d, &prior, &EbOptions::new(method)).unwrap();
        assert!(eb.report.converged, "{method}: {:?}", eb.report);
        for (k, (got, want)) in eb.thresholds.as_slice().iter().zip(alpha).enumerate() {
            assert!((got - want).abs() < 0.1, "{method}: alpha_{} = {got}, generated with {want}", k + 1);
        }
    }
}

#[test]
fn mirrored_binary_data_put_the_cutpoint_at_zero() {
    let n = 400;
    let half = simulate(n / 2, &[1.0, -0.5], &[0.0], 43);
    let mut x = Array2::zeros((n, 2));
    let mut y = Vec::with_capacity(n);
    for i in 0..n / 2 {
        x.row_mut(2 * i).assign(&half.row(i));
        x.row_mut(2 * i + 1).assign(&(-&half.row(i)));
        let yi = half.y()[i] as i64;
        y.extend([yi, 3 - yi]);
    }
    let d = OrdinalDataset::new(x, y, 2).unwrap();
    assert_eq!(d.category_counts(), vec![n / 2, n / 2]);
    let prior = GaussianPrior::isotropic(2, 0.0, 2.0).unwrap();
    let se = (std::f64::consts::PI / 2.0).sqrt() / (n as f64).sqrt();
    for method in Method::ALL {
        let eb = estimate_thresholds(&d, &prior, &EbOptions::new(method)).unwrap();
        let a = eb.thresholds.as_slice()[0];
        assert!(a.abs() < 3.0 * se, "{method}: alpha = {a}, standard error {se}");
    }
}
