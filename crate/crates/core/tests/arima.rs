use popcast_core::forecasters::{arima_css, arima_fit, arima_forecast, arima_select_order, ArimaConfig, ArimaOrder, ArimaParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn gaussian(n: usize, sd: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise = Normal::new(0.0, sd).unwrap();
    (0..n).map(|_| noise.sample(rng)).collect()
}

fn ar1(phi: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let shocks = gaussian(n + 50, 1.0, rng);
    let mut x = 0.0;
    let mut out = Vec::new();
    for (t, e) in shocks.into_iter().enumerate() {
        x = phi * x + e;
        if t >= 50 {
            out.push(x);
        }
    }
    out
}

#[test]
fn trend_plus_noise_selects_differencing() {
    // unit-variance noise: AIC terms n_eff * ln(sigma^2) stay comparable across d
    let bounds = ArimaConfig::default();
    let mut hits = 0;
    for seed in 0..40 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = gaussian(27, 1.0, &mut rng);
        let series: Vec<f64> = noise.iter().enumerate().map(|(t, e)| 0.5 * t as f64 + e).collect();
        let chosen = arima_select_order(&series, &bounds).unwrap();
        if chosen.model.order().d >= 1 {
            hits += 1;
        }
    }
    assert!(hits >= 28, "differenced in {hits} of 40");
}

#[test]
fn white_noise_selection_is_stationary_and_flat() {
    let bounds = ArimaConfig::default();
    let mut undifferenced = 0;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let series = gaussian(300, 1.0, &mut rng);
        let chosen = arima_select_order(&series, &bounds).unwrap().model;
        let baseline = arima_fit(&series, ArimaOrder::new(0, 0, 0)).unwrap();
        assert!(chosen.aic() <= baseline.aic());
        if chosen.order().d == 0 {
            undifferenced += 1;
        }
        let mean = series.iter().sum::<f64>() / series.len() as f64;
        for f in arima_forecast(&chosen, 6) {
            assert!((f - mean).abs() < 1.0, "seed {seed}: forecast {f} vs mean {mean}");
        }
    }
    assert!(undifferenced >= 8, "d = 0 in {undifferenced} of 10");
}

#[test]
fn simplex_minimum_agrees_with_grid_search() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let phi = rng.random_range(-0.8..0.8);
        let series = ar1(phi, 200, &mut rng);
        let model = arima_fit(&series, ArimaOrder::new(1, 0, 0)).unwrap();
        let fitted = model.ar_coefficients()[0];

        let step = 1.9 / 39.0;
        let loss = |a: f64| {
            let params = ArimaParams {
                ar: vec![a],
                ma: vec![],
                intercept: model.intercept(),
            };
            arima_css(&params, &series).unwrap()
        };
        let best = (0..40)
            .map(|i| -0.95 + step * i as f64)
            .min_by(|a, b| loss(*a).total_cmp(&loss(*b)))
            .unwrap();
        assert!((best - fitted).abs() <= step, "grid {best} vs simplex {fitted}");
        assert!(loss(fitted) <= loss(phi), "fit worse than the true coefficient");
    }
}

#[test]
fn aic_matches_residuals() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let series = ar1(0.5, 60, &mut rng);
    for (p, d, q) in [(0, 0, 0), (1, 0, 1), (2, 1, 0), (0, 2, 3)] {
        let m = arima_fit(&series, ArimaOrder::new(p, d, q)).unwrap();
        let n = (series.len() - d - p.max(q)) as f64;
        let sse: f64 = m.residuals().iter().map(|e| e * e).sum();
        assert_eq!(m.effective_observations() as f64, n);
        let expected = n * (sse / n).ln() + 2.0 * (p + q + 1) as f64;
        assert!((m.aic() - expected).abs() < 1e-9 * expected.abs().max(1.0));
    }
}
