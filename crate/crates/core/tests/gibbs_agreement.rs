use cumprobit::simbench::{gen_dataset, SimConfig};
use cumprobit::{fit_ep, fit_mfvb, fit_pmf, gibbs_fit, EpOptions, GibbsOptions, MfvbOptions, PmfOptions, PosteriorSamples, RngStream};
use ndarray::Array1;

fn max_abs_diff(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

fn max_rel_diff(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x / y - 1.0).abs()))
}

#[test]
fn fitters_agree_with_long_gibbs_run() {
    let cfg = SimConfig::new(200, 2, 3);
    let mut rng = RngStream::new(2024, 0);
    let sim = gen_dataset(&cfg, &mut rng).unwrap();
    let (d, t) = (&sim.dataset, &sim.thresholds);
    let prior = cfg.prior().unwrap();
    let opts = GibbsOptions { iterations: 20_000, burn_in: 2_000 };
    let oracle: PosteriorSamples = gibbs_fit(d, &prior, t, &opts, &mut rng.split(1)).unwrap();
    let (mean, sd) = (oracle.mean(), oracle.sd());

    let mf = fit_mfvb(d, &prior, t, &MfvbOptions::default()).unwrap().posterior;
    assert!(max_abs_diff(&mf.mean, &mean) < 0.08, "MFVB mean {} vs {mean}", mf.mean);

    let pmf = fit_pmf(d, &prior, t, &PmfOptions { compute_moments: true, ..Default::default() }).unwrap();
    let moments = pmf.moments.unwrap();
    assert!(max_abs_diff(&moments.mean, &mean) < 0.08, "PMF mean {} vs {mean}", moments.mean);
    // q(z) factorizes, so PMF still understates the spread when n >> p; it sits
    // between the mean-field covariance and the exact posterior.
    let var = sd.mapv(|s| s * s);
    let pmf_var = moments.covariance.as_array().diag().to_owned();
    let mf_var = mf.covariance.as_array().diag().to_owned();
    for j in 0..2 {
        assert!(mf_var[j] < pmf_var[j], "coefficient {j}: PMF {} below MFVB {}", pmf_var[j], mf_var[j]);
        assert!(pmf_var[j] < 1.05 * var[j], "coefficient {j}: PMF {} above oracle {}", pmf_var[j], var[j]);
    }
    assert!(max_rel_diff(&pmf_var, &var) < max_rel_diff(&mf_var, &var), "PMF variances {pmf_var} no closer than MFVB {mf_var} to {var}");

    let ep = fit_ep(d, &prior, t, &EpOptions::default()).unwrap().posterior;
    assert!(max_abs_diff(&ep.mean, &mean) < 0.05, "EP mean {} vs {mean}", ep.mean);
    assert!(max_rel_diff(&ep.sd(), &sd) < 0.10, "EP sd {} vs {sd}", ep.sd());
}
