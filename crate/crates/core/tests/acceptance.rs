//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Set `PVCAST_ACCEPTANCE=1,7` to run a subset.

#[path = "acceptance/oracle.rs"]
mod oracle;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use chrono::{DateTime, Datelike, Duration, NaiveDate, TimeZone, Timelike, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pvcast::carbon::*;
use pvcast::data::*;
use pvcast::eval::{coastline_energy, metrics, persistence_predictions, traces_from, EvalReport, Metrics};
use pvcast::models::*;
use pvcast::solar::{solar_noon, solar_position, GeoPoint};
use pvcast::tensor::*;
use pvcast::train::*;
use pvcast::tune::{tune, tune_model, Grid, Strategy, TuneOptions};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

// ---- criterion 1 ------------------------------------------------------------

const EPS: f64 = 1e-3;
const CASES: usize = 50;

struct GradCase {
    inputs: Vec<(Vec<usize>, Vec<f32>)>,
    /// Scalar loss built on the engine from one leaf per input.
    engine: Box<dyn Fn(&mut Graph, &[Var]) -> pvcast::Result<Var>>,
    /// The same loss in f64.
    oracle: Box<dyn Fn(&[Vec<f64>]) -> f64>,
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest per-input relative error (vector 2-norm) between the engine's
/// gradient and central differences of the oracle.
fn grad_error(case: &GradCase) -> Result<f64, String> {
    let mut g = Graph::new();
    let vars: Vec<Var> = case
        .inputs
        .iter()
        .map(|(s, d)| g.leaf(&Tensor::new(s.clone(), d.clone()).unwrap().with_requires_grad(true)))
        .collect();
    let loss = ok((case.engine)(&mut g, &vars))?;
    ok(g.backward(loss))?;
    let base: Vec<Vec<f64>> = case.inputs.iter().map(|(_, d)| d.iter().map(|&v| v as f64).collect()).collect();
    let engine_loss = g.value(loss)[0] as f64;
    let oracle_loss = (case.oracle)(&base);
    ensure!(
        (engine_loss - oracle_loss).abs() <= 1e-5 * oracle_loss.abs().max(1.0),
        "loss mismatch {engine_loss} vs {oracle_loss}"
    );
    let mut worst = 0.0f64;
    for (i, v) in vars.iter().enumerate() {
        let analytic: Vec<f64> = g.grad(*v).ok_or("missing gradient")?.iter().map(|&x| x as f64).collect();
        let mut numeric = Vec::with_capacity(analytic.len());
        let mut probe = base.clone();
        for j in 0..probe[i].len() {
            let x0 = probe[i][j];
            probe[i][j] = x0 + EPS;
            let up = (case.oracle)(&probe);
            probe[i][j] = x0 - EPS;
            let down = (case.oracle)(&probe);
            probe[i][j] = x0;
            numeric.push((up - down) / (2.0 * EPS));
        }
        let diff = norm(analytic.iter().zip(&numeric).map(|(a, n)| a - n));
        let scale = norm(analytic.iter().copied()).max(norm(numeric.iter().copied()));
        let rel = if scale > 1e-12 { diff / scale } else { diff };
        worst = worst.max(rel);
    }
    Ok(worst)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], scale: f32) -> (Vec<usize>, Vec<f32>) {
    let n = oracle::numel(shape);
    (shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect())
}

fn targets(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn t64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn conv_case(rng: &mut ChaCha8Rng, dims: usize) -> GradCase {
    let b = rng.gen_range(1..=2);
    let c = rng.gen_range(1..=if dims == 3 { 2 } else { 3 });
    let f = rng.gen_range(1..=3);
    let spatial: Vec<usize> = (0..dims)
        .map(|a| if dims == 3 && a == 0 { rng.gen_range(2..=4) } else { rng.gen_range(3..=6) })
        .collect();
    let ks: Vec<usize> = (0..dims)
        .map(|a| {
            let choices: &[usize] = if dims == 3 { &[1, 3] } else { &[1, 3, 5] };
            let mut k = *choices.choose(rng).unwrap();
            if dims == 3 && a > 0 {
                k = k.min(3);
            }
            k
        })
        .collect();
    // all spatial kernel sides equal except the temporal one
    let ks: Vec<usize> = if dims == 3 { vec![ks[0], ks[1], ks[1]] } else { vec![ks[0]; dims] };
    let same = rng.gen_bool(0.5) || ks.iter().zip(&spatial).any(|(k, s)| k > s);
    let mut xs = vec![b, c];
    xs.extend(&spatial);
    let mut ws = vec![f, c];
    ws.extend(&ks);
    let x = uniform(rng, &xs, 1.0);
    let w = uniform(rng, &ws, 0.5);
    let bias = uniform(rng, &[f], 0.5);
    let (_, out_shape) = oracle::conv(&t64(&x.1), &xs, &t64(&w.1), &ws, None, same);
    let t = targets(rng, oracle::numel(&out_shape));
    let t_engine = Tensor::new(out_shape.clone(), t.clone()).unwrap();
    let (xs2, ws2) = (xs.clone(), ws.clone());
    let t64v = t64(&t);
    GradCase {
        inputs: vec![x, w, bias],
        engine: Box::new(move |g, v| {
            let pad = if same { Padding::Same } else { Padding::Valid };
            let y = if dims == 2 { g.conv2d(v[0], v[1], Some(v[2]), pad)? } else { g.conv3d(v[0], v[1], Some(v[2]), pad)? };
            let tc = g.constant(t_engine.clone());
            g.mse(y, tc)
        }),
        oracle: Box::new(move |p| {
            let (y, _) = oracle::conv(&p[0], &xs2, &p[1], &ws2, Some(&p[2]), same);
            oracle::mse(&y, &t64v)
        }),
    }
}

fn maxpool_case(rng: &mut ChaCha8Rng) -> GradCase {
    let shape = vec![rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(2..=5), rng.gen_range(2..=5)];
    let n = oracle::numel(&shape);
    // distinct values at least 0.04 apart, so no window holds a near-tie
    let mut vals: Vec<f32> = (0..n).map(|i| i as f32 * 0.05 - 0.5 * n as f32 * 0.05).collect();
    vals.shuffle(rng);
    for v in vals.iter_mut() {
        *v += rng.gen_range(-0.005..0.005);
    }
    let (_, out_shape) = oracle::maxpool(&t64(&vals), &shape);
    let t = targets(rng, oracle::numel(&out_shape));
    let te = Tensor::new(out_shape, t.clone()).unwrap();
    let s2 = shape.clone();
    let t64v = t64(&t);
    GradCase {
        inputs: vec![(shape, vals)],
        engine: Box::new(move |g, v| {
            let y = g.maxpool2(v[0])?;
            let tc = g.constant(te.clone());
            g.mse(y, tc)
        }),
        oracle: Box::new(move |p| oracle::mse(&oracle::maxpool(&p[0], &s2).0, &t64v)),
    }
}

fn dense_case(rng: &mut ChaCha8Rng) -> GradCase {
    let (b, n, m) = (rng.gen_range(1..=3), rng.gen_range(1..=6), rng.gen_range(1..=5));
    let t = targets(rng, b * m);
    let te = Tensor::new(vec![b, m], t.clone()).unwrap();
    let t64v = t64(&t);
    GradCase {
        inputs: vec![uniform(rng, &[b, n], 1.0), uniform(rng, &[m, n], 0.7), uniform(rng, &[m], 0.5)],
        engine: Box::new(move |g, v| {
            let y = g.linear(v[0], v[1], Some(v[2]))?;
            let tc = g.constant(te.clone());
            g.mse(y, tc)
        }),
        oracle: Box::new(move |p| oracle::mse(&oracle::dense(&p[0], b, &p[1], m, Some(&p[2])), &t64v)),
    }
}

fn two_output_loss(g: &mut Graph, h: Var, c: Var, th: &Tensor, tc: &Tensor) -> pvcast::Result<Var> {
    let a = g.constant(th.clone());
    let b = g.constant(tc.clone());
    let lh = g.mse(h, a)?;
    let lc = g.mse(c, b)?;
    g.add(lh, lc)
}

fn lstm_case(rng: &mut ChaCha8Rng) -> GradCase {
    let (b, n, m) = (rng.gen_range(1..=2), rng.gen_range(1..=4), rng.gen_range(1..=3));
    let th = targets(rng, b * m);
    let tc = targets(rng, b * m);
    let (the, tce) = (Tensor::new(vec![b, m], th.clone()).unwrap(), Tensor::new(vec![b, m], tc.clone()).unwrap());
    let (th64, tc64) = (t64(&th), t64(&tc));
    GradCase {
        inputs: vec![
            uniform(rng, &[b, n], 1.0),
            uniform(rng, &[b, m], 0.8),
            uniform(rng, &[b, m], 0.8),
            uniform(rng, &[4 * m, n], 0.7),
            uniform(rng, &[4 * m, m], 0.7),
            uniform(rng, &[4 * m], 0.5),
        ],
        engine: Box::new(move |g, v| {
            let p = LstmVars { w_ih: v[3], w_hh: v[4], bias: v[5] };
            let (h, c) = lstm_cell(g, v[0], v[1], v[2], &p)?;
            two_output_loss(g, h, c, &the, &tce)
        }),
        oracle: Box::new(move |p| {
            let (h, c) = oracle::lstm(&p[0], &p[1], &p[2], b, m, &p[3], &p[4], &p[5]);
            oracle::mse(&h, &th64) + oracle::mse(&c, &tc64)
        }),
    }
}

fn convlstm_case(rng: &mut ChaCha8Rng) -> GradCase {
    let (b, c, f) = (rng.gen_range(1..=2), rng.gen_range(1..=2), rng.gen_range(1..=2));
    let (h, w) = (rng.gen_range(2..=4), rng.gen_range(2..=4));
    let k = *[1usize, 3].choose(rng).unwrap();
    let xs = vec![b, c, h, w];
    let n = b * f * h * w;
    let th = targets(rng, n);
    let tc = targets(rng, n);
    let (the, tce) = (
        Tensor::new(vec![b, f, h, w], th.clone()).unwrap(),
        Tensor::new(vec![b, f, h, w], tc.clone()).unwrap(),
    );
    let (th64, tc64) = (t64(&th), t64(&tc));
    let xs2 = xs.clone();
    GradCase {
        inputs: vec![
            uniform(rng, &xs, 1.0),
            uniform(rng, &[b, f, h, w], 0.8),
            uniform(rng, &[b, f, h, w], 0.8),
            uniform(rng, &[4 * f, c, k, k], 0.5),
            uniform(rng, &[4 * f, f, k, k], 0.5),
            uniform(rng, &[4 * f], 0.5),
        ],
        engine: Box::new(move |g, v| {
            let p = ConvLstmVars { w_x: v[3], w_h: v[4], bias: v[5] };
            let (hn, cn) = convlstm_cell(g, v[0], v[1], v[2], &p)?;
            two_output_loss(g, hn, cn, &the, &tce)
        }),
        oracle: Box::new(move |p| {
            let (hn, cn) = oracle::convlstm(&p[0], &xs2, &p[1], &p[2], f, k, &p[3], &p[4], &p[5]);
            oracle::mse(&hn, &th64) + oracle::mse(&cn, &tc64)
        }),
    }
}

fn dropout_off_case(rng: &mut ChaCha8Rng) -> GradCase {
    let (b, n) = (rng.gen_range(1..=3), rng.gen_range(1..=8));
    let rate: f32 = rng.gen_range(0.05..0.5);
    // inference mode, or training with a zero rate
    let (rate, training) = if rng.gen_bool(0.5) { (rate, false) } else { (0.0, true) };
    let t = targets(rng, b * n);
    let te = Tensor::new(vec![b, n], t.clone()).unwrap();
    let t64v = t64(&t);
    let seed = rng.gen();
    GradCase {
        inputs: vec![uniform(rng, &[b, n], 1.0)],
        engine: Box::new(move |g, v| {
            let y = g.dropout(v[0], rate, training, &mut ChaCha8Rng::seed_from_u64(seed))?;
            let tc = g.constant(te.clone());
            g.mse(y, tc)
        }),
        oracle: Box::new(move |p| oracle::mse(&p[0], &t64v)),
    }
}

fn mse_case(rng: &mut ChaCha8Rng) -> GradCase {
    let shape = vec![rng.gen_range(1..=4), rng.gen_range(1..=6)];
    GradCase {
        inputs: vec![uniform(rng, &shape, 1.0), uniform(rng, &shape, 1.0)],
        engine: Box::new(|g, v| g.mse(v[0], v[1])),
        oracle: Box::new(|p| oracle::mse(&p[0], &p[1])),
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let ops: [(&str, fn(&mut ChaCha8Rng) -> GradCase); 8] = [
        ("conv2d", |r| conv_case(r, 2)),
        ("conv3d", |r| conv_case(r, 3)),
        ("maxpool", maxpool_case),
        ("dense", dense_case),
        ("lstm_cell", lstm_case),
        ("convlstm_cell", convlstm_case),
        ("dropout_off", dropout_off_case),
        ("mse", mse_case),
    ];
    let mut summary = Vec::new();
    for (i, (name, make)) in ops.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
        let mut worst = 0.0f64;
        for case in 0..CASES {
            let e = grad_error(&make(&mut rng)).map_err(|m| format!("{name} case {case}: {m}"))?;
            ensure!(e < 1e-3, "{name} case {case}: relative error {e:.2e}");
            worst = worst.max(e);
        }
        summary.push(format!("{name} {worst:.1e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 120.0, "gradient suite took {secs:.1}s");
    Ok(format!("{CASES} cases per op, worst relative error: {}", summary.join(", ")))
}

// ---- criterion 2 ------------------------------------------------------------

fn max_abs(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - y).abs()).fold(0.0, f64::max)
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2002);
    let mut worst = [0.0f64; 5];
    for _ in 0..CASES {
        // conv2d and conv3d on somewhat larger shapes than the gradient cases
        for (slot, dims) in [(0usize, 2usize), (1, 3)] {
            let b = rng.gen_range(1..=3);
            let c = rng.gen_range(1..=3);
            let f = rng.gen_range(1..=4);
            let spatial: Vec<usize> = (0..dims).map(|_| rng.gen_range(3..=9)).collect();
            let k = if dims == 2 { *[1usize, 3, 5].choose(&mut rng).unwrap() } else { *[1usize, 3].choose(&mut rng).unwrap() };
            let same = rng.gen_bool(0.5) || spatial.iter().any(|&s| s < k);
            let mut xs = vec![b, c];
            xs.extend(&spatial);
            let mut ws = vec![f, c];
            ws.extend(std::iter::repeat(k).take(dims));
            let x = uniform(&mut rng, &xs, 1.0);
            let w = uniform(&mut rng, &ws, 1.0);
            let bias = uniform(&mut rng, &[f], 1.0);
            let (want, shape) = oracle::conv(&t64(&x.1), &xs, &t64(&w.1), &ws, Some(&t64(&bias.1)), same);
            let mut g = Graph::new();
            let xv = g.constant(Tensor::new(xs.clone(), x.1).unwrap());
            let wv = g.constant(Tensor::new(ws.clone(), w.1).unwrap());
            let bv = g.constant(Tensor::new(vec![f], bias.1).unwrap());
            let pad = if same { Padding::Same } else { Padding::Valid };
            let y = ok(if dims == 2 { g.conv2d(xv, wv, Some(bv), pad) } else { g.conv3d(xv, wv, Some(bv), pad) })?;
            ensure!(g.shape(y) == shape.as_slice(), "conv{dims}d shape {:?} vs {shape:?}", g.shape(y));
            worst[slot] = worst[slot].max(max_abs(g.value(y), &want));
        }
        // maxpool
        let shape = vec![rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=9), rng.gen_range(1..=9)];
        let x = uniform(&mut rng, &shape, 1.0);
        let (want, oshape) = oracle::maxpool(&t64(&x.1), &shape);
        let mut g = Graph::new();
        let xv = g.constant(Tensor::new(shape, x.1).unwrap());
        let y = ok(g.maxpool2(xv))?;
        ensure!(g.shape(y) == oshape.as_slice(), "maxpool shape");
        worst[2] = worst[2].max(max_abs(g.value(y), &want));
        // lstm
        let (b, n, m) = (rng.gen_range(1..=4), rng.gen_range(1..=12), rng.gen_range(1..=8));
        let ins = [
            uniform(&mut rng, &[b, n], 1.0),
            uniform(&mut rng, &[b, m], 1.0),
            uniform(&mut rng, &[b, m], 1.0),
            uniform(&mut rng, &[4 * m, n], 1.0),
            uniform(&mut rng, &[4 * m, m], 1.0),
            uniform(&mut rng, &[4 * m], 1.0),
        ];
        let p64: Vec<Vec<f64>> = ins.iter().map(|i| t64(&i.1)).collect();
        let (wh, wc) = oracle::lstm(&p64[0], &p64[1], &p64[2], b, m, &p64[3], &p64[4], &p64[5]);
        let mut g = Graph::new();
        let v: Vec<Var> = ins.iter().map(|(s, d)| g.constant(Tensor::new(s.clone(), d.clone()).unwrap())).collect();
        let (h, c) = ok(lstm_cell(&mut g, v[0], v[1], v[2], &LstmVars { w_ih: v[3], w_hh: v[4], bias: v[5] }))?;
        worst[3] = worst[3].max(max_abs(g.value(h), &wh)).max(max_abs(g.value(c), &wc));
        // convlstm
        let (b, ch, f) = (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=4));
        let (hh, ww) = (rng.gen_range(2..=7), rng.gen_range(2..=7));
        let k = *[1usize, 3, 5].choose(&mut rng).unwrap();
        let xs = vec![b, ch, hh, ww];
        let ins = [
            uniform(&mut rng, &xs, 1.0),
            uniform(&mut rng, &[b, f, hh, ww], 1.0),
            uniform(&mut rng, &[b, f, hh, ww], 1.0),
            uniform(&mut rng, &[4 * f, ch, k, k], 0.5),
            uniform(&mut rng, &[4 * f, f, k, k], 0.5),
            uniform(&mut rng, &[4 * f], 1.0),
        ];
        let p64: Vec<Vec<f64>> = ins.iter().map(|i| t64(&i.1)).collect();
        let (wh, wc) = oracle::convlstm(&p64[0], &xs, &p64[1], &p64[2], f, k, &p64[3], &p64[4], &p64[5]);
        let mut g = Graph::new();
        let v: Vec<Var> = ins.iter().map(|(s, d)| g.constant(Tensor::new(s.clone(), d.clone()).unwrap())).collect();
        let (h, c) = ok(convlstm_cell(&mut g, v[0], v[1], v[2], &ConvLstmVars { w_x: v[3], w_h: v[4], bias: v[5] }))?;
        worst[4] = worst[4].max(max_abs(g.value(h), &wh)).max(max_abs(g.value(c), &wc));
    }
    let names = ["conv2d", "conv3d", "maxpool", "lstm", "convlstm"];
    for (n, w) in names.iter().zip(worst) {
        ensure!(w <= 1e-5, "{n}: max abs error {w:.2e}");
    }
    Ok(format!(
        "{CASES} cases each, max abs error: {}",
        names.iter().zip(worst).map(|(n, w)| format!("{n} {w:.1e}")).collect::<Vec<_>>().join(", ")
    ))
}

// ---- criteria 3 and 4 -------------------------------------------------------

fn fixture() -> Result<Dataset, String> {
    ok(generate_synthetic(&SynthConfig::new(7, 3)))
}

fn nrmse_of(preds: &[f32], samples: &[Sample]) -> Result<f64, String> {
    let l = samples[0].horizon();
    let t: Vec<f32> = samples.iter().flat_map(|s| s.y_pv.data().to_vec()).collect();
    let m = ok(metrics(
        &ok(Tensor::new(vec![samples.len(), l], preds.to_vec()))?,
        &ok(Tensor::new(vec![samples.len(), l], t))?,
    ))?;
    Ok(m.nrmse)
}

/// Epoch cap for the tuned runs; the full 200/10 schedule does not fit the
/// time budget on one CPU core.
const TUNED_RUN: TrainOptions = TrainOptions {
    max_epochs: 25,
    patience: 5,
    batch_size: 16,
    seed: 7,
};

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let ds = fixture()?;
    let mut lines = Vec::new();
    let mut losers = Vec::new();
    for minutes in [60u32, 240] {
        let l = ok(horizon_steps_for_minutes(minutes))?;
        let (train, val, test) = split(ok(ds.samples(l))?, &SplitSpec::default());
        let pers = nrmse_of(ok(persistence_predictions(&test))?.data(), &test)?;
        let mut row = format!("{minutes}min persistence {pers:.2}%");
        for family in Family::FORECASTERS {
            let opts = TuneOptions {
                budget: 8,
                init_random: 8,
                seed: 7,
                strategy: Strategy::Random,
                workers: 1,
            };
            let (tuned, trained) = ok(tune_model(family, l, &train, &val, &opts, &TUNED_RUN))?;
            let batch = ok(Batch::from_samples(&test, &tuned.best))?;
            let preds = ok(trained.final_model.predict(&batch))?;
            let score = nrmse_of(preds.data(), &test)?;
            if score >= pers {
                losers.push(format!("{family}@{minutes}min {score:.2}% >= {pers:.2}%"));
            }
            row.push_str(&format!(", {family} {score:.2}%"));
        }
        lines.push(row);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(losers.is_empty(), "not below persistence: {}; {}", losers.join(", "), lines.join("; "));
    ensure!(secs < 1800.0, "took {secs:.0}s; {}", lines.join("; "));
    Ok(format!("{} ({secs:.0}s)", lines.join("; ")))
}

fn criterion_4() -> Outcome {
    let ds = fixture()?;
    let mut scores = Vec::new();
    for l in HORIZON_STEPS {
        let (_, _, test) = split(ok(ds.samples(l))?, &SplitSpec::default());
        scores.push(nrmse_of(ok(persistence_predictions(&test))?.data(), &test)?);
    }
    let text = scores.iter().map(|s| format!("{s:.2}%")).collect::<Vec<_>>().join(" < ");
    ensure!(scores.windows(2).all(|w| w[0] < w[1]), "not increasing: {scores:?}");
    Ok(format!("persistence nrmse 60/120/180/240 min: {text}"))
}

// ---- criteria 5 and 6 -------------------------------------------------------

fn within(value: f64, target: f64, rel: f64) -> bool {
    (value - target).abs() <= rel * target.abs()
}

fn criterion_5() -> Outcome {
    let dep = DeploymentSpec::with_power(PowerPreset::PaperImplied);
    let n = forecasts_per_year(&dep);
    ensure!(n == 1_686_300, "forecasts per year {n}");
    let h3 = total_hours(CONV3D_REFERENCE.train_seconds, CONV3D_REFERENCE.inference_seconds, n);
    let hl = total_hours(CONVLSTM_REFERENCE.train_seconds, CONVLSTM_REFERENCE.inference_seconds, n);
    ensure!(within(h3, 75.2, 0.01) && within(h3, 75.0, 0.01), "conv3d hours {h3}");
    ensure!((hl - 1035.4).abs() < 0.05, "convlstm hours {hl}");
    let report = ok(carbon_report(
        &[("conv3d".into(), CONV3D_REFERENCE), ("convlstm".into(), CONVLSTM_REFERENCE)],
        &dep,
        &AvertedSpec::default(),
    ))?;
    let delta = report.models[1].hours_delta_percent.ok_or("convlstm delta not reported")?;
    let (g3, gl) = (
        report.models[0].emissions_generated_tonnes_co2eq,
        report.models[1].emissions_generated_tonnes_co2eq,
    );
    ensure!(within(g3, 0.0108, 0.03), "conv3d tonnes {g3}");
    ensure!(within(gl, 0.152, 0.03), "convlstm tonnes {gl}");
    Ok(format!(
        "{n} forecasts/yr; hours conv3d {h3:.1} (published 75), convlstm {hl:.1} vs published 1024 ({delta:+.2}%); \
         paper-implied tonnes {g3:.4} / {gl:.4} vs 0.0108 / 0.152"
    ))
}

fn criterion_6() -> Outcome {
    let chain = emissions_averted(&AvertedSpec::default());
    ensure!(within(chain.solar_tonnes, 44_813.0, 0.005), "solar tonnes {}", chain.solar_tonnes);
    ensure!(within(chain.averted_tonnes, 5_500.0, 0.02), "averted {}", chain.averted_tonnes);
    ensure!(within(chain.averted_tonnes, 5_490.0, 0.005), "averted {}", chain.averted_tonnes);
    let dep = DeploymentSpec::default();
    let n = forecasts_per_year(&dep);
    let mut ratios = Vec::new();
    for (name, t) in [("conv3d", CONV3D_REFERENCE), ("convlstm", CONVLSTM_REFERENCE)] {
        let gen = emissions_generated(total_hours(t.train_seconds, t.inference_seconds, n), &dep);
        let r = chain.averted_tonnes / gen;
        ensure!(r > 1e4, "{name} benefit ratio {r:.3e}");
        ratios.push(format!("{name} {r:.2e}"));
    }
    Ok(format!(
        "solar {:.0} t (published ~45,000), averted {:.0} t (published ~5500), benefit ratios {}",
        chain.solar_tonnes,
        chain.averted_tonnes,
        ratios.join(", ")
    ))
}

// ---- criterion 7 ------------------------------------------------------------

fn criterion_7() -> Outcome {
    let text = include_str!("fixtures/solar_oracle.csv");
    let mut worst = 0.0f64;
    let mut rows = 0;
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let t: DateTime<Utc> = ok(DateTime::parse_from_rfc3339(f[0]))?.with_timezone(&Utc);
        let loc = ok(GeoPoint::new(ok(f[1].parse())?, ok(f[2].parse())?))?;
        let want: f64 = ok(f[3].parse())?;
        let got = ok(solar_position(t, loc))?.altitude;
        worst = worst.max((got - want).abs());
        rows += 1;
    }
    ensure!(rows >= 100, "fixture has {rows} rows");
    ensure!(worst <= 0.5, "max altitude error {worst:.3} deg");
    // noon altitude is 90 - |lat - declination|
    let days = [(2021, 3, 20, 0.0), (2021, 6, 21, 23.44), (2021, 9, 22, 0.0), (2021, 12, 21, -23.44)];
    let places = [(50.7, -3.5), (0.0, 0.0), (23.44, 30.0), (-33.9, 151.2), (64.1, -21.9)];
    let mut noon_worst = 0.0f64;
    for (y, m, d, decl) in days {
        for (lat, lon) in places {
            let loc = ok(GeoPoint::new(lat, lon))?;
            let noon = ok(solar_noon(NaiveDate::from_ymd_opt(y, m, d).unwrap(), loc))?;
            let got = ok(solar_position(noon, loc))?.altitude;
            let want = 90.0 - (lat - decl).abs();
            let e = (got - want).abs();
            ensure!(e <= 1.0, "{y}-{m}-{d} at ({lat}, {lon}): {got:.2} vs {want:.2}");
            noon_worst = noon_worst.max(e);
        }
    }
    Ok(format!(
        "{rows} fixture timestamps, max error {worst:.3} deg; 20 equinox/solstice noons, max error {noon_worst:.2} deg"
    ))
}

// ---- criterion 8 ------------------------------------------------------------

fn tiny_sample(t0: DateTime<Utc>) -> Sample {
    Sample {
        t0,
        x_frames: Tensor::zeros(&[1]),
        x_pv: Tensor::zeros(&[INPUT_STEPS]),
        y_pv: Tensor::zeros(&[12]),
    }
}

/// Hand-written day rule: 1-20 train, 22-24 validation, 27-29 test.
fn expected_partition(day: u32) -> Option<Partition> {
    match day {
        1..=20 => Some(Partition::Train),
        22..=24 => Some(Partition::Val),
        27..=29 => Some(Partition::Test),
        _ => None,
    }
}

fn criterion_8() -> Outcome {
    let spec = SplitSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8008);
    let lo = Utc.with_ymd_and_hms(2015, 1, 1, 0, 0, 0).unwrap().timestamp();
    let hi = Utc.with_ymd_and_hms(2030, 12, 31, 23, 59, 59).unwrap().timestamp();
    let stamps: Vec<DateTime<Utc>> = (0..10_000)
        .map(|_| Utc.timestamp_opt(rng.gen_range(lo..=hi), 0).unwrap())
        .collect();
    let mut want = [0usize; 4];
    for t in &stamps {
        let e = expected_partition(t.day());
        ensure!(spec.partition_of(*t) == e, "{t}: {:?} vs {e:?}", spec.partition_of(*t));
        want[match e {
            Some(Partition::Train) => 0,
            Some(Partition::Val) => 1,
            Some(Partition::Test) => 2,
            None => 3,
        }] += 1;
    }
    let (train, val, test) = split(stamps.iter().map(|&t| tiny_sample(t)).collect(), &spec);
    ensure!(
        [train.len(), val.len(), test.len()] == [want[0], want[1], want[2]],
        "split sizes {:?} vs {want:?}",
        [train.len(), val.len(), test.len()]
    );
    for (set, part) in [(&train, Partition::Train), (&val, Partition::Val), (&test, Partition::Test)] {
        ensure!(set.iter().all(|s| expected_partition(s.t0.day()) == Some(part)), "{part:?} holds a foreign day");
    }
    let days = |set: &Vec<Sample>| set.iter().map(|s| s.t0.day()).collect::<std::collections::HashSet<_>>();
    let (dt, dv, de) = (days(&train), days(&val), days(&test));
    ensure!(dt.is_disjoint(&dv) && dt.is_disjoint(&de) && dv.is_disjoint(&de), "day sets overlap");
    // windows never reach into another day, so targets cannot leak across partitions
    let ds = fixture()?;
    let mut windows = 0;
    for l in HORIZON_STEPS {
        for s in ok(ds.samples(l))? {
            let last = *s.target_times().last().unwrap();
            ensure!(last.date_naive() == s.t0.date_naive(), "window {} runs to {last}", s.t0);
            windows += 1;
        }
    }
    Ok(format!(
        "10000 timestamps: train {} val {} test {} buffer {} discarded; {windows} fixture windows stay within one day",
        want[0], want[1], want[2], want[3]
    ))
}

// ---- criterion 9 ------------------------------------------------------------

fn criterion_9() -> Outcome {
    let l = 12;
    let mut rng = ChaCha8Rng::seed_from_u64(9009);
    let t0 = Utc.with_ymd_and_hms(2020, 6, 1, 9, 0, 0).unwrap();
    let mut extreme = 0.0f64;
    let mut checked = 0;
    for round in 0..2_000 {
        let mut samples = Vec::new();
        let mut preds = Vec::new();
        for k in 0..5 {
            let (p, t): (Vec<f32>, Vec<f32>) = match (round + k) % 4 {
                // opposite corners of the unit cube
                0 => {
                    let sign = rng.gen_bool(0.5);
                    (vec![sign as u8 as f32; l], vec![(!sign) as u8 as f32; l])
                }
                1 => (0..l).map(|_| (rng.gen_bool(0.5) as u8 as f32, rng.gen_bool(0.5) as u8 as f32)).unzip(),
                _ => (0..l).map(|_| (rng.gen::<f32>(), rng.gen::<f32>())).unzip(),
            };
            let mut s = tiny_sample(t0 + Duration::hours(k as i64));
            s.y_pv = Tensor::new(vec![l], t).unwrap();
            samples.push(s);
            preds.extend(p);
        }
        let traces = ok(traces_from(&samples, &ok(Tensor::new(vec![5, l], preds))?))?;
        for tr in traces {
            ensure!(tr.signed_error_sum.abs() <= l as f64, "sum {}", tr.signed_error_sum);
            extreme = extreme.max(tr.signed_error_sum.abs());
            checked += 1;
        }
    }
    ensure!(extreme == 12.0, "adversarial corners should reach 12, got {extreme}");
    Ok(format!("{checked} fuzzed sequences at L=12, largest |sum| {extreme}"))
}

// ---- criterion 10 -----------------------------------------------------------

fn criterion_10() -> Outcome {
    let ds = fixture()?;
    let mut cfg = ModelConfig::new(Family::SinglePeriod, 1);
    cfg.seed = 7;
    let (train_set, val_set, test_set) = ok(single_period_sets(&ds, &SplitSpec::default(), 1000, cfg.frame_pool, 7))?;
    ensure!(train_set.len() == 1000, "{} training frames", train_set.len());
    let opts = TrainOptions {
        max_epochs: 10,
        patience: 10,
        batch_size: 16,
        seed: 7,
    };
    let result = ok(train(ok(build(&cfg))?, &train_set, &val_set, &opts))?;
    ensure!(result.epochs_run == 10, "ran {} epochs", result.epochs_run);
    let test_mse = ok(mse(&result.final_model, &test_set))?;
    ensure!(test_mse <= 0.02, "test mse {test_mse:.4}");
    // fixture frame: cloudless sky nearest 12:00 UTC on 2 January
    let mut clear_cfg = SynthConfig::new(7, 2);
    clear_cfg.clouds = CloudMode::Clear;
    let clear = ok(generate_synthetic(&clear_cfg))?;
    let noon = Utc.with_ymd_and_hms(2020, 1, 2, 12, 0, 0).unwrap();
    let idx = (0..clear.frames.len())
        .min_by_key(|&i| (clear.frames.timestamps[i] - noon).num_seconds().abs())
        .unwrap();
    ensure!(clear.frames.timestamps[idx].hour() == 12, "no frame near noon");
    let frame = ok(Tensor::new(vec![GRID, GRID], clear.frames.frame(idx).to_vec()))?;
    let acts = ok(result.final_model.conv_activations(&frame))?;
    let (on, off) = ok(coastline_energy(&acts[0]))?;
    ensure!(on > off, "first-layer energy on the coastline {on:.3e} <= off-step {off:.3e}");
    Ok(format!(
        "test mse {test_mse:.4} after 10 epochs on 1000 frames; first-layer energy on coastline {on:.3e} vs off {off:.3e}"
    ))
}

// ---- criterion 11 -----------------------------------------------------------

fn files(dir: &std::path::Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut out: Vec<(String, Vec<u8>)> = ok(std::fs::read_dir(dir))?
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    Ok(out)
}

fn criterion_11() -> Outcome {
    let tmp = ok(tempfile::tempdir())?;
    let root = tmp.path();
    // dataset
    let ds = fixture()?;
    ok(write_dataset(&root.join("ds_a"), &ds))?;
    let back = ok(read_dataset(&root.join("ds_a")))?;
    ensure!(back == ds, "dataset differs after reading back");
    ok(write_dataset(&root.join("ds_b"), &back))?;
    ensure!(files(&root.join("ds_a"))? == files(&root.join("ds_b"))?, "dataset files differ on rewrite");
    ensure!(ok(generate_synthetic(&SynthConfig::new(7, 3)))? == ds, "regeneration differs");

    // identical seeds, identical histories
    let (train_s, val_s, _) = split(ok(ds.samples(12))?, &SplitSpec::default());
    let mut histories = Vec::new();
    for family in [Family::PvLstm, Family::Convlstm] {
        let mut cfg = ModelConfig::new(family, 12);
        cfg.seed = 11;
        let tr = ok(Batch::from_samples(&train_s[..64], &cfg))?;
        let va = ok(Batch::from_samples(&val_s, &cfg))?;
        let opts = TrainOptions {
            max_epochs: 3,
            patience: 3,
            batch_size: 16,
            seed: 11,
        };
        let a = ok(train(ok(build(&cfg))?, &tr, &va, &opts))?;
        let b = ok(train(ok(build(&cfg))?, &tr, &va, &opts))?;
        ensure!(a.history == b.history, "{family}: histories differ");
        ensure!(a.final_model == b.final_model, "{family}: parameters differ");
        histories.push(a);
    }
    let g = ok(Grid::for_family(Family::Conv3d, 12, 3))?;
    let replay = |seed| {
        tune(&g, &TuneOptions { budget: 12, init_random: 4, seed, strategy: Strategy::Bayesian, workers: 1 }, |c| {
            Ok(c.dropout as f64 + c.kernel_size as f64 * 0.01 - c.learning_rate as f64)
        })
        .map(|r| r.trials.iter().map(|t| (t.grid_index, t.best_val_mse)).collect::<Vec<_>>())
    };
    ensure!(ok(replay(5))? == ok(replay(5))?, "tuning replay differs");

    // checkpoint
    let model = &histories[1].final_model;
    ok(save_checkpoint(model, &root.join("ck_a")))?;
    let loaded = ok(load_checkpoint(&root.join("ck_a")))?;
    ensure!(&loaded == model, "checkpoint differs after loading");
    ok(save_checkpoint(&loaded, &root.join("ck_b")))?;
    ensure!(files(&root.join("ck_a"))? == files(&root.join("ck_b"))?, "checkpoint files differ on rewrite");

    // reports
    let report = ok(carbon_report(
        &[("conv3d".into(), CONV3D_REFERENCE), ("convlstm".into(), CONVLSTM_REFERENCE)],
        &DeploymentSpec::default(),
        &AvertedSpec::default(),
    ))?;
    ok(report.write(&root.join("carbon_a.json")))?;
    let read = ok(CarbonReport::read(&root.join("carbon_a.json")))?;
    ensure!(read == report, "carbon report differs after reading");
    ok(read.write(&root.join("carbon_b.json")))?;
    ensure!(
        ok(std::fs::read(root.join("carbon_a.json")))? == ok(std::fs::read(root.join("carbon_b.json")))?,
        "carbon.json differs on rewrite"
    );
    let eval = vec![EvalReport {
        horizon_minutes: 60,
        n_samples: 63,
        persistence: Metrics { nrmse: 7.6281234567891, nmae: 4.1 },
        models: vec![(Family::PvCnn, Some(Metrics { nrmse: 2.7, nmae: 1.0 / 3.0 })), (Family::Conv3d, None)],
    }];
    let text = ok(serde_json::to_string(&eval))?;
    let back: Vec<EvalReport> = ok(serde_json::from_str(&text))?;
    ensure!(back == eval && ok(serde_json::to_string(&back))? == text, "evaluation report round trip");
    Ok("dataset, checkpoint, carbon and evaluation reports round-trip bit-exact; seeded training and tuning replay identically".into())
}

// ---- runner -----------------------------------------------------------------

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 11] = [
        (1, "gradient correctness", criterion_1),
        (2, "forward kernels", criterion_2),
        (3, "beats persistence", criterion_3),
        (4, "persistence monotone in horizon", criterion_4),
        (5, "carbon arithmetic", criterion_5),
        (6, "averted-emissions chain", criterion_6),
        (7, "solar geometry", criterion_7),
        (8, "split exactness", criterion_8),
        (9, "signed-error bound", criterion_9),
        (10, "single-period model", criterion_10),
        (11, "determinism and round trips", criterion_11),
    ];
    let only: Option<Vec<u32>> = std::env::var("PVCAST_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    let mut ran = 0;
    for (n, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                println!("criterion {n:>2} FAIL  {name}: {detail} [{secs:.1}s]");
                failed.push(n);
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
