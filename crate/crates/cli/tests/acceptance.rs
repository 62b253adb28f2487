//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use popcast_cli::config::RunConfig;
use popcast_cli::run::cmd_run;
use popcast_core::eval::{build_leaderboard, percent_error, win_rate, ForecastResult, Leaderboard};
use popcast_core::forecasters::arima::{arima_fit, arima_select_order, difference, undifference, ArimaOrder};
use popcast_core::forecasters::{
    make_windows, patchify, training_examples, ArimaConfig, Forecaster, NormalizedSeries, PatchDecoder,
    PatchDecoderConfig, RecurrentConfig, RecurrentForecaster, RecurrentNet,
};
use popcast_core::ingest::{build_dataset, Source};
use popcast_core::numerics::{ols_fit, Graph, NodeId, Tensor};
use popcast_core::series::{make_series, temporal_split};
use popcast_core::{Race, SeriesKey, SplitSpec, State};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Check = fn() -> Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn main() {
    let criteria: [(u32, &str, Duration, Check); 11] = [
        (1, "win-rate golden", Duration::from_secs(1), win_rate_golden),
        (2, "percent-error golden", Duration::from_secs(1), percent_error_golden),
        (3, "split counts", Duration::from_secs(1), split_counts),
        (4, "OLS oracle equivalence", Duration::from_secs(1), ols_oracle),
        (5, "ARIMA recovery and order selection", Duration::from_secs(30), arima_recovery),
        (6, "differencing roundtrip", Duration::from_secs(1), differencing_roundtrip),
        (7, "gradient checks", Duration::from_secs(30), gradient_checks),
        (8, "learnability", Duration::from_secs(300), learnability),
        (9, "mask correctness", Duration::from_secs(10), mask_correctness),
        (10, "end-to-end determinism", Duration::from_secs(1200), end_to_end_determinism),
        (11, "ingest fixture", Duration::from_secs(5), ingest_fixture),
    ];
    let only: Vec<u32> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect())
        .unwrap_or_default();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, name, limit, check) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let outcome = outcome.and_then(|detail| {
            if start.elapsed() <= limit {
                Ok(detail)
            } else {
                Err(format!("{detail}; took {secs:.1}s, limit {}s", limit.as_secs()))
            }
        });
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name} [{secs:.2}s] {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name} [{secs:.2}s] {detail}");
            }
        }
    }
    let _ = panic::take_hook();
    if failed > 0 {
        println!("acceptance: {failed} criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}

// 1 -------------------------------------------------------------------------

fn win_rate_golden() -> Result<String, String> {
    use Race::*;
    use State::*;
    // columns: recurrent, ARIMA, linear, patch decoder
    let table: [(State, Race, [f64; 4]); 15] = [
        (NY, White, [7.877e11, 1.433e11, 1.433e11, 7.111e10]),
        (NY, Black, [3.051e10, 8.240e10, 1.185e10, 1.815e9]),
        (NY, Asian, [1.796e11, 8.908e9, 1.433e9, 2.272e8]),
        (NY, AmericanIndian, [3.683e9, 7.360e9, 9.842e8, 5.720e6]),
        (NY, Hawaiian, [4.779e7, 2.119e8, 2.252e7, 7.867e4]),
        (AL, White, [2.796e9, 5.341e9, 2.812e9, 3.658e8]),
        (AL, Black, [1.291e10, 3.451e8, 3.109e8, 6.374e9]),
        (AL, Asian, [6.606e8, 3.154e7, 7.992e6, 4.375e6]),
        (AL, AmericanIndian, [5.954e7, 5.735e7, 1.305e7, 1.302e7]),
        (AL, Hawaiian, [3.742e6, 6.094e6, 1.441e6, 2.104e4]),
        (WY, White, [5.940e8, 1.619e9, 5.940e8, 1.732e8]),
        (WY, Black, [1.892e7, 1.774e6, 8.789e6, 2.937e4]),
        (WY, Asian, [1.478e10, 1.423e9, 6.404e9, 9.102e4]),
        (WY, AmericanIndian, [8.325e6, 8.684e6, 2.283e6, 4.658e5]),
        (WY, Hawaiian, [2.141e4, 7.223e3, 1.554e3, 6.286e3]),
    ];
    let models = ["rnn", "arima", "lr", "patchtf"];
    // each MSE entered as a one-point forecast whose squared error is the value
    let mut results = Vec::new();
    for (state, race, row) in &table {
        for (m, v) in models.iter().zip(row) {
            results.push(ForecastResult {
                key: SeriesKey::new(*state, *race),
                model: m.to_string(),
                years: vec![2022],
                predicted: vec![v.sqrt()],
                actual: vec![0.0],
            });
        }
    }
    let board = build_leaderboard(&results, &models).map_err(|e| e.to_string())?;
    let direct = Leaderboard::from_rows(
        &models,
        table.iter().map(|(s, r, row)| (SeriesKey::new(*s, *r), row.to_vec())),
    )
    .map_err(|e| e.to_string())?;
    for key in direct.keys() {
        ensure(board.row_winner(key) == direct.row_winner(key), || {
            format!("{key}: winner differs between result path and direct entry")
        })?;
    }
    let w = win_rate(&board, "patchtf").map_err(|e| e.to_string())?;
    ensure(w.wins == 13 && w.total == 15, || format!("wins {}/{}", w.wins, w.total))?;
    ensure(w.percent() == 86.67, || format!("fraction {}", w.percent()))?;
    let total: usize = models.iter().map(|m| board.win_rate(m).unwrap().wins).sum();
    ensure(total == 15, || format!("win counts sum to {total}"))?;
    Ok(format!("patch decoder wins {}/{} = {:.2}%", w.wins, w.total, w.percent()))
}

// 2 -------------------------------------------------------------------------

fn percent_error_golden() -> Result<String, String> {
    let a = percent_error(360683.0, 360607.0).map_err(|e| e.to_string())?;
    let b = percent_error(388578.0, 394188.0).map_err(|e| e.to_string())?;
    ensure(a.to_string() == "+0.02%", || format!("first row displays {a}"))?;
    ensure(b.to_string() == "-1.42%", || format!("second row displays {b}"))?;
    // published value -1.43%, one unit in the last displayed digit
    ensure((b.value() - -1.43).abs() <= 0.01, || format!("unrounded {}", b.value()))?;
    Ok(format!("{a} and {b} (unrounded {:.4})", b.value()))
}

// 3 -------------------------------------------------------------------------

fn split_counts() -> Result<String, String> {
    let spec = SplitSpec::default_test();
    let mut out = Vec::new();
    for (start, race, expected) in [(1990, Race::White, (27, 6)), (2000, Race::Hawaiian, (17, 6))] {
        let len = (2022 - start + 1) as usize;
        let values: Vec<f64> = (0..len).map(|i| 1000.0 + i as f64).collect();
        let s = make_series(SeriesKey::new(State::HI, race), start, values).map_err(|e| e.to_string())?;
        let (train, test) = temporal_split(&s, &spec).map_err(|e| e.to_string())?;
        ensure((train.len(), test.len()) == expected, || {
            format!("{start}-2022: {} / {}", train.len(), test.len())
        })?;
        out.push(format!("{start}-2022 -> {}/{}", train.len(), test.len()));
    }
    Ok(out.join(", "))
}

// 4 -------------------------------------------------------------------------

/// Normal equations solved by Cramer's rule on raw sums.
fn normal_equations(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let det = n * sxx - sx * sx;
    ((n * sxy - sx * sy) / det, (sxx * sy - sx * sxy) / det)
}

fn ols_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(3..60);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
        let (slope, intercept) = (rng.random_range(-5.0..5.0), rng.random_range(-100.0..100.0));
        let y: Vec<f64> = x
            .iter()
            .map(|v| slope * v + intercept + rng.random_range(-3.0..3.0))
            .collect();
        let (s, i) = ols_fit(&x, &y).map_err(|e| e.to_string())?;
        let (os, oi) = normal_equations(&x, &y);
        for (got, want) in [(s, os), (i, oi)] {
            // relative error, measured against unit scale for near-zero coefficients
            let rel = (got - want).abs() / want.abs().max(1.0);
            worst = worst.max(rel);
        }
    }
    ensure(worst < 1e-10, || format!("worst relative difference {worst:e}"))?;
    Ok(format!("100 instances, worst relative difference {worst:.1e}"))
}

// 5 -------------------------------------------------------------------------

fn simulate_ar1(phi: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut x = 0.0;
    let mut out = Vec::with_capacity(n);
    for t in 0..n + 100 {
        x = phi * x + noise.sample(&mut rng);
        if t >= 100 {
            out.push(x);
        }
    }
    out
}

/// Exhaustive enumeration: refit every order, recompute each AIC from the
/// residuals, pick the lowest with ties to smaller p+q+d then (p, d, q).
fn enumerate_orders(series: &[f64], bounds: &ArimaConfig) -> Option<(ArimaOrder, f64)> {
    let mut best: Option<((f64, usize, usize, usize, usize), ArimaOrder)> = None;
    for p in 0..=bounds.max_p {
        for d in 0..=bounds.max_d {
            for q in 0..=bounds.max_q {
                let order = ArimaOrder::new(p, d, q);
                let Ok(model) = arima_fit(series, order) else { continue };
                let n_eff = series.len() - d - p.max(q);
                let sse: f64 = model.residuals().iter().map(|e| e * e).sum();
                let aic = n_eff as f64 * (sse / n_eff as f64).ln() + 2.0 * (p + q + 1) as f64;
                if aic.is_nan() {
                    continue;
                }
                let rank = (aic, p + q + d, p, d, q);
                if best.as_ref().is_none_or(|(b, _)| rank.partial_cmp(b) == Some(std::cmp::Ordering::Less)) {
                    best = Some((rank, order));
                }
            }
        }
    }
    best.map(|(rank, order)| (order, rank.0))
}

fn arima_recovery() -> Result<String, String> {
    let mut total = 0.0;
    for seed in 0..20 {
        let series = simulate_ar1(0.8, 500, 1000 + seed);
        let model = arima_fit(&series, ArimaOrder::new(1, 0, 0)).map_err(|e| e.to_string())?;
        total += (model.ar_coefficients()[0] - 0.8).abs();
    }
    let mean_err = total / 20.0;
    ensure(mean_err < 0.1, || format!("mean |phi - 0.8| = {mean_err}"))?;

    let bounds = ArimaConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for i in 0..10 {
        let n = 30 + 3 * i;
        let series: Vec<f64> = match i % 3 {
            0 => simulate_ar1(0.6, n, 200 + i as u64),
            1 => {
                let mut level = 0.0;
                (0..n)
                    .map(|_| {
                        level += 0.5 + rng.random_range(-1.0..1.0);
                        level
                    })
                    .collect()
            }
            _ => (0..n).map(|t| 0.03 * t as f64 + rng.random_range(-0.05..0.05)).collect(),
        };
        let selected = arima_select_order(&series, &bounds).map_err(|e| e.to_string())?;
        let (order, aic) = enumerate_orders(&series, &bounds).ok_or("no candidate")?;
        ensure(selected.model.order() == order && selected.aic == aic, || {
            format!(
                "series {i}: selected {} aic {} vs enumeration {order} aic {aic}",
                selected.model.order(),
                selected.aic
            )
        })?;
    }
    Ok(format!("mean |phi - 0.8| = {mean_err:.4} over 20 seeds; 10/10 selections match enumeration"))
}

// 6 -------------------------------------------------------------------------

fn differencing_roundtrip() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..1000 {
        let d = rng.random_range(0..=2usize);
        let n = rng.random_range(d + 1..40);
        // integer values keep every difference and running sum exact
        let series: Vec<f64> = (0..n).map(|_| rng.random_range(-1_000_000i64..1_000_000) as f64).collect();
        let diffed = difference(&series, d).map_err(|e| e.to_string())?;
        let mut seeds = Vec::new();
        let mut level = series.clone();
        for _ in 0..d {
            seeds.push(level[0]);
            level = (1..level.len()).map(|i| level[i] - level[i - 1]).collect();
        }
        ensure(diffed == level, || format!("case {case}: difference disagrees with oracle"))?;
        ensure(undifference(&diffed, &seeds) == series, || format!("case {case}: d={d} not inverted"))?;
    }
    Ok("1000 cases, d in {0,1,2}, exact".into())
}

// 7 -------------------------------------------------------------------------

const STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const COORDS: usize = 20;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Picks up to `COORDS` distinct (tensor, index) coordinates.
fn coordinates(params: &[Tensor], rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let flat: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(t, p)| (0..p.len()).map(move |i| (t, i)))
        .collect();
    let k = COORDS.min(flat.len());
    sample(rng, flat.len(), k).into_iter().map(|i| flat[i]).collect()
}

/// Central-difference check of a scalar function of `params`, with the
/// analytic gradient supplied by `analytic`.
fn check_gradient(
    params: &[Tensor],
    analytic: &[Tensor],
    loss: &dyn Fn(&[Tensor]) -> f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut worst: f64 = 0.0;
    for (t, i) in coordinates(params, rng) {
        let mut plus = params.to_vec();
        plus[t].data_mut()[i] += STEP;
        let mut minus = params.to_vec();
        minus[t].data_mut()[i] -= STEP;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * STEP);
        worst = worst.max(rel_err(analytic[t].data()[i], numeric));
    }
    worst
}

type Build = Box<dyn Fn(&mut Graph, &[NodeId]) -> NodeId>;

fn graph_case(name: &str, params: Vec<Tensor>, build: Build, rng: &mut ChaCha8Rng) -> (String, f64) {
    let eval = |p: &[Tensor]| {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = p.iter().map(|t| g.param(t.clone())).collect();
        let loss = build(&mut g, &ids);
        g.value(loss).item()
    };
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &ids);
    let grads = g.backward(loss).unwrap();
    let analytic: Vec<Tensor> = ids.iter().map(|id| grads.wrt_or_zeros(&g, *id)).collect();
    (name.to_string(), check_gradient(&params, &analytic, &eval, rng))
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero so relu has no kink within the step.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = random(shape, rng);
    for v in t.data_mut() {
        *v = v.signum() * (0.1 + v.abs());
    }
    t
}

/// Reduces a node to a scalar against a fixed random target.
fn reduce(g: &mut Graph, x: NodeId, seed: u64) -> NodeId {
    let shape = g.value(x).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = random(&shape, &mut rng);
    let weights = Tensor::new(&shape, (0..target.len()).map(|_| rng.random_range(0.5..1.5)).collect()).unwrap();
    g.mse(x, target, Some(weights)).unwrap()
}

fn gradient_checks() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cases: Vec<(String, f64)> = Vec::new();
    let r = &mut rng;
    let mut run = |name: &str, params: Vec<Tensor>, build: Build, r: &mut ChaCha8Rng| {
        cases.push(graph_case(name, params, build, r));
    };

    run("affine", vec![random(&[4, 3], r), random(&[3, 5], r), random(&[5], r)],
        Box::new(|g, p| { let y = g.affine(p[0], p[1], Some(p[2])).unwrap(); reduce(g, y, 1) }), r);
    run("matmul", vec![random(&[2, 3, 4], r), random(&[2, 4, 5], r)],
        Box::new(|g, p| { let y = g.matmul(p[0], p[1], false).unwrap(); reduce(g, y, 2) }), r);
    run("matmul transposed", vec![random(&[2, 3, 4], r), random(&[2, 5, 4], r)],
        Box::new(|g, p| { let y = g.matmul(p[0], p[1], true).unwrap(); reduce(g, y, 3) }), r);
    run("add", vec![random(&[3, 4], r), random(&[3, 4], r)],
        Box::new(|g, p| { let y = g.add(p[0], p[1]).unwrap(); reduce(g, y, 4) }), r);
    run("mul", vec![random(&[3, 4], r), random(&[3, 4], r)],
        Box::new(|g, p| { let y = g.mul(p[0], p[1]).unwrap(); reduce(g, y, 5) }), r);
    run("scale", vec![random(&[3, 4], r)],
        Box::new(|g, p| { let y = g.scale(p[0], -1.7); reduce(g, y, 6) }), r);
    run("tanh", vec![random(&[3, 4], r)],
        Box::new(|g, p| { let y = g.tanh(p[0]); reduce(g, y, 7) }), r);
    run("sigmoid", vec![random(&[3, 4], r)],
        Box::new(|g, p| { let y = g.sigmoid(p[0]); reduce(g, y, 8) }), r);
    run("relu", vec![away_from_zero(&[3, 4], r)],
        Box::new(|g, p| { let y = g.relu(p[0]); reduce(g, y, 9) }), r);
    run("softmax", vec![random(&[2, 3, 5], r)],
        Box::new(|g, p| { let y = g.softmax(p[0]); reduce(g, y, 10) }), r);
    run("concat", vec![random(&[3, 2], r), random(&[3, 4], r)],
        Box::new(|g, p| { let y = g.concat(&[p[0], p[1]]).unwrap(); reduce(g, y, 11) }), r);
    run("slice", vec![random(&[3, 4, 5], r)],
        Box::new(|g, p| {
            let a = g.slice(p[0], 0, 1, 3).unwrap();
            let b = g.slice(a, 1, 1, 4).unwrap();
            let c = g.slice(b, 2, 0, 2).unwrap();
            reduce(g, c, 12)
        }), r);
    run("reshape", vec![random(&[2, 6], r)],
        Box::new(|g, p| { let y = g.reshape(p[0], &[3, 4]).unwrap(); reduce(g, y, 13) }), r);
    run("layer_norm", vec![random(&[3, 6], r), random(&[6], r), random(&[6], r)],
        Box::new(|g, p| { let y = g.layer_norm(p[0], p[1], p[2]).unwrap(); reduce(g, y, 14) }), r);
    run("add_positional", vec![random(&[2, 4, 3], r), random(&[3, 3], r)],
        Box::new(|g, p| { let y = g.add_positional(p[0], p[1]).unwrap(); reduce(g, y, 15) }), r);
    run("lstm", vec![random(&[4, 3, 2], r), random(&[2 + 5, 20], r), random(&[20], r)],
        Box::new(|g, p| { let y = g.lstm(p[0], p[1], p[2]).unwrap(); reduce(g, y, 17) }), r);
    run("mse", vec![random(&[4, 3], r)],
        Box::new(|g, p| reduce(g, p[0], 16)), r);

    // recurrent network, full loss
    let rnn_cfg = RecurrentConfig { hidden_units: 6, window: 4, ..Default::default() };
    let net = RecurrentNet::new(rnn_cfg, 70).map_err(|e| e.to_string())?;
    let series: Vec<f64> = (0..14).map(|i| 0.5 + 0.4 * (i as f64 * 0.7).sin()).collect();
    let windows = make_windows(&series, 4).map_err(|e| e.to_string())?;
    let (_, analytic) = net.loss_and_gradients(&windows).map_err(|e| e.to_string())?;
    let eval = |p: &[Tensor]| {
        let mut n = net.clone();
        n.params_mut().clone_from_slice(p);
        n.loss(&windows).unwrap()
    };
    cases.push(("recurrent forecaster".into(), check_gradient(net.params(), &analytic, &eval, r)));

    // patch decoder, full loss over varied context lengths
    let pd_cfg = PatchDecoderConfig {
        context_length: 12,
        horizon: 3,
        input_patch: 4,
        output_patch: 8,
        model_dim: 8,
        attention_heads: 2,
        decoder_layers: 2,
        ..Default::default()
    };
    let model = PatchDecoder::new(pd_cfg, 71).map_err(|e| e.to_string())?;
    let set = vec![(0..16).map(|i| 0.2 + 0.05 * i as f64 + 0.03 * (i as f64).sin()).collect::<Vec<f64>>()];
    let examples = training_examples(&set, &pd_cfg);
    let (_, analytic) = model.loss_and_gradients(&examples).map_err(|e| e.to_string())?;
    let eval = |p: &[Tensor]| {
        let mut m = model.clone();
        m.params_mut().clone_from_slice(p);
        m.loss(&examples).unwrap()
    };
    cases.push(("patch decoder".into(), check_gradient(model.params(), &analytic, &eval, r)));

    let bad: Vec<String> = cases
        .iter()
        .filter(|(_, e)| !(*e < GRAD_TOL))
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect();
    ensure(bad.is_empty(), || format!("over tolerance: {}", bad.join(", ")))?;
    let worst = cases.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(format!("{} checks, worst relative error {worst:.1e}", cases.len()))
}

// 8 -------------------------------------------------------------------------

fn learnability() -> Result<String, String> {
    let ramp: Vec<f64> = (0..27).map(|i| i as f64 / 26.0).collect();
    let cfg = RecurrentConfig { hidden_units: 16, epochs: 500, ..Default::default() };
    let mut rnn = RecurrentForecaster::new(cfg, 8);
    rnn.fit(&NormalizedSeries::new(1990, ramp)).map_err(|e| e.to_string())?;
    let rnn_loss = rnn.training_loss().ok_or("no training loss")?;
    ensure(rnn_loss < 1e-3, || format!("recurrent training MSE {rnn_loss:e}"))?;

    // long enough that a full context is followed by a full target during training
    let n = 128;
    let line: Vec<f64> = (0..n + 6).map(|i| i as f64 / (n - 1) as f64).collect();
    let cfg = PatchDecoderConfig { model_dim: 32, epochs: 300, ..Default::default() };
    let (model, pd_loss) = PatchDecoder::fit(&[line[..n].to_vec()], cfg, 8).map_err(|e| e.to_string())?;
    ensure(pd_loss < 1e-3, || format!("patch decoder training MSE {pd_loss:e}"))?;
    let forecast = model.predict(&line[..n], 6).map_err(|e| e.to_string())?;
    let worst = forecast
        .iter()
        .zip(&line[n..])
        .map(|(p, t)| ((p - t) / t).abs())
        .fold(0.0, f64::max);
    ensure(worst <= 0.05, || format!("continuation off by {:.2}%", 100.0 * worst))?;
    Ok(format!(
        "recurrent MSE {rnn_loss:.1e}; patch decoder MSE {pd_loss:.1e}, continuation within {:.2}%",
        100.0 * worst
    ))
}

// 9 -------------------------------------------------------------------------

fn mask_correctness() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for m in 0..10 {
        let cfg = PatchDecoderConfig {
            model_dim: 16,
            attention_heads: [1, 2, 4][m % 3],
            decoder_layers: 1 + m % 2,
            ..Default::default()
        };
        let model = PatchDecoder::new(cfg, 900 + m as u64).map_err(|e| e.to_string())?;
        let len = rng.random_range(1..=cfg.context_length);
        let context: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..1.0)).collect();
        let patches = patchify(&context, cfg.input_patch).map_err(|e| e.to_string())?;
        let base = model.forward(&patches).map_err(|e| e.to_string())?;
        for extra in 1..=2 {
            let padded = model.forward(&patches.with_masked_prefix(extra)).map_err(|e| e.to_string())?;
            for (a, b) in base.iter().zip(&padded) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    ensure(worst <= 1e-9, || format!("max output change {worst:e}"))?;
    Ok(format!("10 models, max output change {worst:.1e}"))
}

// 10 ------------------------------------------------------------------------

fn end_to_end_determinism() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fx = common::write_fixture(dir.path(), None);
    let dataset_path = dir.path().join("dataset.json");
    let dataset = build_dataset(&fx.fred_dir, &fx.census_file).map_err(|e| e.to_string())?;
    fs::write(&dataset_path, dataset.to_json()).map_err(|e| e.to_string())?;

    let mut bytes = Vec::new();
    let mut times = Vec::new();
    for run in ["first", "second"] {
        let cfg = RunConfig {
            dataset: dataset_path.clone(),
            seed: 2024,
            out: dir.path().join(run),
            ..Default::default()
        };
        let start = Instant::now();
        let (results, path) = cmd_run(&cfg).map_err(|e| format!("{e:#}"))?;
        let elapsed = start.elapsed();
        ensure(elapsed < Duration::from_secs(600), || format!("{run} run took {elapsed:?}"))?;
        ensure(results.results.len() == 120, || {
            format!("{} results, {} failures", results.results.len(), results.failures.len())
        })?;
        times.push(elapsed.as_secs_f64());
        bytes.push(fs::read(path).map_err(|e| e.to_string())?);
    }
    ensure(bytes[0] == bytes[1], || "results files differ".to_string())?;
    Ok(format!(
        "120 cells twice, {} identical bytes; runs took {:.0}s and {:.0}s",
        bytes[0].len(),
        times[0],
        times[1]
    ))
}

// 11 ------------------------------------------------------------------------

fn ingest_fixture() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fx = common::write_fixture(dir.path(), None);
    let dataset = build_dataset(&fx.fred_dir, &fx.census_file).map_err(|e| e.to_string())?;
    let lengths: Vec<(SeriesKey, usize)> = dataset.series.iter().map(|(k, s)| (*k, s.len())).collect();
    let long = lengths.iter().filter(|(k, l)| k.race != Race::Hawaiian && *l == 33).count();
    let short = lengths.iter().filter(|(k, l)| k.race == Race::Hawaiian && *l == 23).count();
    // one Hawaiian series per state
    let hawaiian = State::ALL.len();
    ensure(dataset.len() == 30 && long == 30 - hawaiian && short == hawaiian, || {
        format!("{long} of length 33, {short} Hawaiian of length 23, {} total", dataset.len())
    })?;
    for (key, s) in &dataset.series {
        if key.race == Race::Hawaiian {
            ensure(s.start_year() == 2000, || format!("{key} starts {}", s.start_year()))?;
            ensure(!s.values().contains(&common::HAWAIIAN_PRE_2000_MARKER), || {
                format!("{key} retains a pre-2000 value")
            })?;
        } else {
            ensure(s.start_year() == 1990 && s.end_year() == 2022, || format!("{key} span"))?;
        }
        let sources = &dataset.provenance[key];
        let census = sources.iter().filter(|s| **s == Source::Census).count();
        ensure(census == 3 && sources.len() == s.len(), || format!("{key} provenance"))?;
        for year in s.years() {
            ensure(s.value_at(year) == Some(common::population(*key, year)), || {
                format!("{key} {year} value")
            })?;
        }
    }
    Ok(format!("30 series: {long} of length 33, {short} Hawaiian of length 23 starting 2000"))
}
