//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Run with `cargo test -p stabstop-core --test acceptance`.

mod common;

use std::f64::consts::E;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use stabstop_core::active::{read_trace, run_active_learning, ActiveLearningConfig, LearnerProfile, TraceRecord};
use stabstop_core::bayes_linear::{
    blr_laplace_posterior, brr_posterior, gaussian_kl, BrrHyper, GaussianPosterior, RbfBasis,
};
use stabstop_core::bdnn::{bdnn_kl_bound, bdnn_kl_bound_simplified, BdnnPosterior, DropoutLayerParams};
use stabstop_core::dataset::{normalize, split, Dataset, Task};
use stabstop_core::eval::{stop_summary, CorrelationReport};
use stabstop_core::experiment::{run_experiment, ExperimentConfig, TRACE_FILE};
use stabstop_core::gp::{gp_incremental_kl_backward, gp_incremental_kl_forward, GpHyper, GpState};
use stabstop_core::{
    lambert_w0, martingale_threshold, stability_radius, stability_radius_general, MartingaleParams,
    StoppingConfig, StoppingState,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn refs(xs: &[Vec<f64>]) -> Vec<&[f64]> {
    xs.iter().map(Vec::as_slice).collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn discrete_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / b).ln()).sum()
}

fn random_simplex(r: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    // Log-normal weights spread the instances from near-uniform to peaked.
    let w: Vec<f64> = (0..k).map(|_| (3.0 * r.sample::<f64, _>(rand_distr::StandardNormal)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

fn gap_bound() -> Outcome {
    const SLACK: f64 = 1e-9;
    let mut r = rng(1001);
    let mut tightest = f64::INFINITY;
    for i in 0..1000 {
        let k = r.random_range(1..=8);
        let p = random_simplex(&mut r, k);
        let q = random_simplex(&mut r, k);
        let loss: Vec<f64> = (0..k).map(|_| r.random_range(0.0..=1.0)).collect();
        let mean = |d: &[f64]| d.iter().zip(&loss).map(|(a, l)| a * l).sum::<f64>();
        let second = |d: &[f64]| d.iter().zip(&loss).map(|(a, l)| a * l * l).sum::<f64>();
        let gap = mean(&p) - mean(&q);
        let (kl_pq, kl_qp) = (discrete_kl(&p, &q), discrete_kl(&q, &p));

        let upper = stability_radius(kl_pq).unwrap();
        let lower = stability_radius(kl_qp).unwrap();
        ensure(gap <= upper + SLACK && -lower - SLACK <= gap, || {
            format!("instance {i}: gap {gap} outside [-{lower}, {upper}]")
        })?;
        if k > 1 {
            tightest = tightest.min((upper - gap).min(gap + lower));
        }

        // Second-moment form: v must dominate E[L^2] under the reference
        // posterior of each side, so take the larger of the two.
        let v = second(&p).max(second(&q));
        if v > 0.0 {
            let gu = stability_radius_general(kl_pq, v, 1.0).unwrap();
            let gl = stability_radius_general(kl_qp, v, 1.0).unwrap();
            ensure(gap <= gu + SLACK && -gl - SLACK <= gap, || {
                format!("instance {i}: gap {gap} outside second-moment bound [-{gl}, {gu}]")
            })?;
            ensure(gu <= upper + 1e-12 && gl <= lower + 1e-12, || {
                format!("instance {i}: second-moment bound [-{gl}, {gu}] looser than [-{lower}, {upper}]")
            })?;
        }
    }
    Ok(format!("1000 instances, smallest margin {tightest:.3e}"))
}

fn gp_kl_equivalence() -> Outcome {
    const TOL: f64 = 1e-6;
    let mut r = rng(1002);
    let mut worst: f64 = 0.0;
    let mut steps = 0;
    for seq in 0..100 {
        let dim = if seq % 2 == 0 { 1 } else { 3 };
        let n = r.random_range(2..=40);
        let l = r.random_range(0.3..1.5);
        let beta = r.random_range(0.5..50.0);
        // Pairwise distance >= 1.5 l keeps the dense f-space covariances
        // well conditioned enough for the LU oracle.
        let side = 1.5 * l * (n as f64).powf(1.0 / dim as f64) * 2.5;
        let xs = separated_points(&mut r, n, dim, side, 1.5 * l);
        let ys: Vec<f64> = xs.iter().map(|x| x.iter().map(|v| v.sin()).sum::<f64>() + 0.1 * r.random_range(-1.0..1.0)).collect();
        let mut state = GpState::empty(GpHyper::new(l, beta).unwrap(), dim);
        for t in 0..n {
            let eval = xs[..=t].to_vec();
            let (m0, c0) = gp_dense_posterior(&xs[..t], &ys[..t], &eval, l, beta);
            let (m1, c1) = gp_dense_posterior(&xs[..=t], &ys[..=t], &eval, l, beta);
            let fwd = gp_incremental_kl_forward(&state, &xs[t], ys[t]).unwrap();
            let bwd = gp_incremental_kl_backward(&state, &xs[t], ys[t]).unwrap();
            let ef = rel_err(fwd, dense_gaussian_kl(&m1, &c1, &m0, &c0));
            let eb = rel_err(bwd, dense_gaussian_kl(&m0, &c0, &m1, &c1));
            ensure(ef <= TOL && eb <= TOL, || {
                format!("sequence {seq} (dim {dim}) step {t}: relative errors {ef:.3e}, {eb:.3e}")
            })?;
            worst = worst.max(ef).max(eb);
            steps += 1;
            state = state.extend(&xs[t], ys[t]).unwrap();
        }
    }
    Ok(format!("100 sequences, {steps} steps, worst relative error {worst:.3e}"))
}

fn lambert_and_radius() -> Outcome {
    let n = 10_000;
    let lo = (1e-15f64).ln();
    let hi = (1e6 + 1.0 / E).ln();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let x = if i == 0 { -1.0 / E } else { -1.0 / E + (lo + (hi - lo) * (i - 1) as f64 / (n - 2) as f64).exp() };
        let w = lambert_w0(x).unwrap();
        let scaled = (w * w.exp() - x).abs() / x.abs().max(1.0);
        ensure(w >= -1.0 && scaled <= 1e-12, || format!("x = {x}: w = {w}, scaled residual {scaled:.3e}"))?;
        worst = worst.max(scaled);
    }
    let r1 = stability_radius(1.0).unwrap();
    ensure((r1 - (E - 1.0)).abs() <= 1e-12, || format!("radius(1) = {r1}"))?;
    let r0 = stability_radius(0.0).unwrap();
    ensure(r0 == 0.0, || format!("radius(0) = {r0}"))?;
    Ok(format!("{n} grid points, worst scaled residual {worst:.3e}"))
}

fn sine_data(seed: u64, n: usize) -> Dataset {
    let (xs, ys) = noisy_sine(&mut rng(seed), n, 0.1);
    normalize(&Dataset::new(xs, ys, Task::Regression).unwrap()).unwrap().0
}

fn moons(seed: u64, n: usize) -> Dataset {
    let mut r = rng(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 2) as f64;
        let a = r.random_range(0.0..std::f64::consts::PI);
        let (cx, cy) = if label == 0.0 { (a.cos(), a.sin()) } else { (1.0 - a.cos(), 0.5 - a.sin()) };
        xs.push(vec![cx + r.random_range(-0.2..0.2), cy + r.random_range(-0.2..0.2)]);
        ys.push(label);
    }
    normalize(&Dataset::new(xs, ys, Task::Classification).unwrap()).unwrap().0
}

fn run_trace(data: &Dataset, profile: LearnerProfile, n0: usize, test: usize, budget: usize, seed: u64) -> Vec<TraceRecord> {
    let mut pool = split(data, n0, test, seed).unwrap();
    let config = ActiveLearningConfig {
        thresholds: profile.default_thresholds(),
        budget,
        run_to_budget: true,
        ..ActiveLearningConfig::default()
    };
    run_active_learning(data, &mut pool, profile, &config).unwrap()
}

fn normalization_identity() -> Outcome {
    let m = 10;
    let mut traces: Vec<Vec<f64>> = Vec::new();
    let reg = sine_data(1004, 200);
    let cls = moons(1005, 200);
    for seed in 0..3 {
        for (data, profile) in [(&reg, LearnerProfile::Brr), (&reg, LearnerProfile::Gpr), (&cls, LearnerProfile::Blr)] {
            let trace = run_trace(data, profile, 10, 50, 40, seed);
            // The trace's own ratios must agree with a replay.
            let mut state = StoppingState::new(StoppingConfig::new(0.0, m, m).unwrap()).unwrap();
            for rec in &trace {
                let step = state.push_radius(rec.r_t).unwrap();
                ensure(step.lambda == rec.lambda_t, || format!("{profile} seed {seed} t = {}: lambda mismatch", rec.t))?;
            }
            traces.push(trace.iter().map(|r| r.r_t).collect());
        }
    }
    let mut r = rng(1006);
    for _ in 0..50 {
        let len = r.random_range(m..100);
        traces.push((0..len).map(|t| (-(t as f64) * r.random_range(0.0..0.2)).exp() * r.random_range(0.1..3.0)).collect());
    }
    for (i, radii) in traces.iter().enumerate() {
        let mut state = StoppingState::new(StoppingConfig::new(0.0, m, m).unwrap()).unwrap();
        for &x in radii {
            state.push_radius(x).unwrap();
        }
        let ratios = state.error_ratios().unwrap();
        let min = ratios[..m].iter().copied().fold(f64::INFINITY, f64::min);
        ensure(min == 1.0, || format!("trace {i}: min of first {m} ratios is {min}"))?;
    }
    Ok(format!("{} traces", traces.len()))
}

fn martingale_mapping() -> Outcome {
    let cases = [(0.05, 2.0 * (-2.0f64).exp()), (0.1, 2.0 * (-8.0f64).exp())];
    let mut got = Vec::new();
    for (eta, delta) in cases {
        let lambda = martingale_threshold(MartingaleParams::new(eta, delta).unwrap());
        ensure((lambda - 0.05).abs() <= 1e-15, || format!("eta {eta}, delta {delta}: {lambda}"))?;
        got.push(lambda);
    }
    Ok(format!("thresholds {got:?}"))
}

fn sine_correlation() -> Outcome {
    let mut values = Vec::new();
    for seed in 0..5u64 {
        let data = sine_data(2000 + seed, 810);
        let trace = run_trace(&data, LearnerProfile::Gpr, 10, 500, 150, seed);
        ensure(trace.len() == 150, || format!("seed {seed}: only {} steps", trace.len()))?;
        values.push(CorrelationReport::from_trace(&trace).unwrap().pearson);
    }
    let passing = values.iter().filter(|p| p.is_some_and(|v| v >= 0.8)).count();
    let shown: Vec<String> = values.iter().map(|p| p.map_or("n/a".into(), |v| format!("{v:.3}"))).collect();
    ensure(passing >= 4, || format!("correlation >= 0.8 in {passing} of 5 seeds: {}", shown.join(", ")))?;
    Ok(format!("correlations {}", shown.join(", ")))
}

fn scalar_layer(r: &mut ChaCha8Rng, out: usize, inp: usize) -> DropoutLayerParams {
    DropoutLayerParams::new(
        DMatrix::from_fn(out, inp, |_, _| r.random_range(-1.5..1.5)),
        DVector::from_fn(out, |_, _| r.random_range(-1.0..1.0)),
        r.random_range(0.2..1.5),
        r.random_range(0.1..0.9),
    )
    .unwrap()
}

fn bdnn_validity() -> Outcome {
    let mut r = rng(1007);
    let samples = 1_000_000;
    let mut min_margin = f64::INFINITY;
    for i in 0..50 {
        let (out, inp) = (r.random_range(1..=2), r.random_range(1..=2));
        let a = scalar_layer(&mut r, out, inp);
        let b = scalar_layer(&mut r, out, inp);
        let bound = bdnn_kl_bound(
            &BdnnPosterior::new(vec![a.clone()]).unwrap(),
            &BdnnPosterior::new(vec![b.clone()]).unwrap(),
        )
        .unwrap();
        // The layer distribution factorizes over columns and the bias, so its
        // KL is the sum of the per-factor KLs.
        let mut est = isotropic_gaussian_kl(a.bias_mean(), a.variance(), b.bias_mean(), b.variance());
        let mut var = 0.0;
        for h in 0..inp {
            let ma: DVector<f64> = a.means().column(h).into();
            let mb: DVector<f64> = b.means().column(h).into();
            let (k, se) = mc_mixture_kl(
                (&ma, a.variance(), a.keep_prob()),
                (&mb, b.variance(), b.keep_prob()),
                samples,
                &mut r,
            );
            est += k;
            var += se * se;
        }
        let se = var.sqrt();
        ensure(bound >= est - 3.0 * se, || format!("instance {i}: bound {bound} < estimate {est} - 3 x {se}"))?;
        min_margin = min_margin.min((bound - est) / se.max(f64::MIN_POSITIVE));
    }

    for i in 0..200 {
        let depth = r.random_range(1..=3);
        let widths: Vec<usize> = (0..=depth).map(|_| r.random_range(1..=4)).collect();
        let p = BdnnPosterior::new(widths.windows(2).map(|w| scalar_layer(&mut r, w[1], w[0])).collect()).unwrap();
        let kl = bdnn_kl_bound(&p, &p).unwrap();
        ensure(kl == 0.0, || format!("instance {i}: bound(p, p) = {kl}"))?;
    }

    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let depth = r.random_range(1..=3);
        let widths: Vec<usize> = (0..=depth).map(|_| r.random_range(1..=4)).collect();
        let mut pl = Vec::new();
        let mut ql = Vec::new();
        for w in widths.windows(2) {
            let a = scalar_layer(&mut r, w[1], w[0]);
            let b = scalar_layer(&mut r, w[1], w[0]);
            let b = DropoutLayerParams::new(b.means().clone(), b.bias_mean().clone(), a.variance(), a.keep_prob()).unwrap();
            pl.push(a);
            ql.push(b);
        }
        let (p, q) = (BdnnPosterior::new(pl).unwrap(), BdnnPosterior::new(ql).unwrap());
        let (full, simple) = (bdnn_kl_bound(&p, &q).unwrap(), bdnn_kl_bound_simplified(&p, &q).unwrap());
        let d = (full - simple).abs() / full.max(1.0);
        ensure(d <= 1e-12, || format!("instance {i}: full {full} vs simplified {simple}"))?;
        worst = worst.max(d);
    }
    Ok(format!("smallest margin {min_margin:.2} SE; self-bound zero on 200; simplified within {worst:.1e}"))
}

fn stop_monotonicity() -> Outcome {
    let mut r = rng(1008);
    let mut stops = 0;
    for i in 0..20 {
        let len = r.random_range(30..300);
        let rate = r.random_range(0.005..0.05);
        let trace: Vec<TraceRecord> = (0..len)
            .map(|t| {
                let r_t = (-(t as f64) * rate).exp() * r.random_range(0.2..5.0);
                TraceRecord {
                    t: t + 1,
                    acquired_index: t,
                    kl_forward: 0.0,
                    kl_backward: 0.0,
                    r_t,
                    lambda_t: None,
                    test_error: 0.0,
                    stopped_flags: Vec::new(),
                }
            })
            .collect();
        for profile in [LearnerProfile::Brr, LearnerProfile::Blr, LearnerProfile::Gpr] {
            let summary = stop_summary(&trace, &profile.default_thresholds(), 10, 10).unwrap();
            let steps: Vec<usize> = summary.iter().map(|s| s.stop_step.unwrap_or(usize::MAX)).collect();
            stops += steps.iter().filter(|&&s| s != usize::MAX).count();
            ensure(steps.windows(2).all(|w| w[0] <= w[1]), || {
                format!("trace {i}, {profile}: stop steps {steps:?} for thresholds {:?}", profile.default_thresholds())
            })?;
        }
    }
    Ok(format!("20 traces x 3 profiles, {stops} threshold stops observed"))
}

fn learner_correctness() -> Outcome {
    let mut r = rng(1009);
    let mut worst_res: f64 = 0.0;
    for _ in 0..20 {
        let dims = r.random_range(1..=3);
        let n = r.random_range(5..60);
        let basis = RbfBasis::equally_spaced(dims, 6, -2.0, 2.0).unwrap();
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..dims).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.iter().map(|v| v.sin()).sum::<f64>() + 0.1 * r.random_range(-1.0..1.0)).collect();
        let hyper = BrrHyper::new(r.random_range(0.01..10.0), r.random_range(0.1..100.0)).unwrap();
        let post = brr_posterior(&basis, hyper, &refs(&xs), &ys).unwrap();
        let feats: Vec<DVector<f64>> = xs.iter().map(|x| rbf_features(x, basis.centers(), basis.bandwidth())).collect();
        let j = basis.len();
        let mut lambda = DMatrix::identity(j, j) * hyper.alpha;
        let mut rhs = DVector::zeros(j);
        for (f, y) in feats.iter().zip(&ys) {
            lambda += f * f.transpose() * hyper.beta;
            rhs += f * (hyper.beta * y);
        }
        let res = (&lambda * post.mean() - &rhs).norm() / rhs.norm().max(1.0);
        ensure(res <= 1e-8, || format!("normal-equation residual {res:.3e}"))?;
        worst_res = worst_res.max(res);
    }

    let mut worst_h: f64 = 0.0;
    for _ in 0..10 {
        let basis = RbfBasis::equally_spaced(1, 5, -2.0, 2.0).unwrap();
        let alpha = r.random_range(0.1..5.0);
        let xs: Vec<Vec<f64>> = (0..30).map(|_| vec![r.random_range(-2.0..2.0)]).collect();
        let labels: Vec<f64> = xs.iter().map(|x| if x[0].sin() + r.random_range(-0.7..0.7) > 0.0 { 1.0 } else { 0.0 }).collect();
        let feats: Vec<DVector<f64>> = xs.iter().map(|x| rbf_features(x, basis.centers(), basis.bandwidth())).collect();
        let post = blr_laplace_posterior(&basis, alpha, &refs(&xs), &labels).unwrap();
        let fd = fd_hessian(|w| logistic_neg_log_posterior(w, &feats, &labels, alpha), post.mean(), 1e-4);
        let h = post.precision();
        let d = (h - &fd).amax() / h.amax();
        ensure(d <= 1e-4, || format!("Hessian differs from finite differences by {d:.3e}"))?;
        worst_h = worst_h.max(d);
    }

    let mut worst_z: f64 = 0.0;
    for i in 0..10 {
        let make = |r: &mut ChaCha8Rng| {
            let mean = DVector::from_fn(4, |_, _| r.random_range(-1.0..1.0));
            let cov = random_spd(r, 4, 0.3);
            (mean, cov)
        };
        let (mp, cp) = make(&mut r);
        let (mq, cq) = make(&mut r);
        let p = GaussianPosterior::from_precision(mp.clone(), cp.clone().try_inverse().unwrap()).unwrap();
        let q = GaussianPosterior::from_precision(mq.clone(), cq.clone().try_inverse().unwrap()).unwrap();
        let kl = gaussian_kl(&p, &q).unwrap();
        let (est, se) = mc_gaussian_kl(&Mvn::new(mp, cp), &Mvn::new(mq, cq), 1_000_000, &mut r);
        let z = (kl - est).abs() / se;
        ensure(z <= 3.0, || format!("pair {i}: closed form {kl} vs {est} +- {se}"))?;
        worst_z = worst_z.max(z);
    }
    Ok(format!(
        "ridge residual {worst_res:.1e}; Hessian rel diff {worst_h:.1e}; KL within {worst_z:.2} SE"
    ))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let reg = sine_data(1010, 150);
    let cls = moons(1011, 150);
    let write = |name: &str, data: &Dataset| {
        let path = dir.path().join(name);
        let mut text = String::from("a,b,y\n");
        for (row, y) in data.features.iter().zip(&data.targets) {
            let x1 = row.get(1).copied().unwrap_or(row[0] * 0.5);
            text.push_str(&format!("{:e},{:e},{}\n", row[0], x1, y));
        }
        std::fs::write(&path, text).unwrap();
        path
    };
    let reg_path = write("reg.csv", &reg);
    let cls_path = write("cls.csv", &cls);
    let mut sizes = Vec::new();
    for (path, task, profile) in [
        (&reg_path, Task::Regression, LearnerProfile::Brr),
        (&reg_path, Task::Regression, LearnerProfile::Gpr),
        (&cls_path, Task::Classification, LearnerProfile::Blr),
    ] {
        let bytes: Vec<Vec<u8>> = (0..2)
            .map(|k| {
                let out = dir.path().join(format!("{profile}-{k}"));
                let mut config = ExperimentConfig::new(path.clone(), task, profile, out.clone());
                config.budget = 40;
                config.seed = 3;
                config.run_to_budget = true;
                run_experiment(&config).unwrap();
                std::fs::read(out.join(TRACE_FILE)).unwrap()
            })
            .collect();
        ensure(bytes[0] == bytes[1], || format!("{profile}: traces differ between runs"))?;
        ensure(!read_trace(dir.path().join(format!("{profile}-0")).join(TRACE_FILE)).unwrap().is_empty(), || {
            format!("{profile}: empty trace")
        })?;
        sizes.push(format!("{profile} {} bytes", bytes[0].len()));
    }
    Ok(sizes.join(", "))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("gap bound on discrete posteriors", gap_bound),
        ("incremental GP KLs equal dense KLs", gp_kl_equivalence),
        ("Lambert W residual and radius values", lambert_and_radius),
        ("normalization identity", normalization_identity),
        ("martingale threshold mapping", martingale_mapping),
        ("noisy-sine GPR correlation", sine_correlation),
        ("dropout-network KL bound validity", bdnn_validity),
        ("stop-time monotonicity", stop_monotonicity),
        ("learner correctness", learner_correctness),
        ("determinism", determinism),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2}: PASS  {name} ({detail}; {secs:.1}s)", i + 1),
            Err(detail) => {
                failures += 1;
                println!("criterion {:>2}: FAIL  {name} ({detail}; {secs:.1}s)", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
