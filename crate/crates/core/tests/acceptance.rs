//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! `ACCEPTANCE_ONLY=4,7` restricts the run to the listed criteria.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use bipartite::bootstrap::{egocentric_bootstrap, BootstrapConfig};
use bipartite::data::{InterferenceMap, OutcomeFamily};
use bipartite::effects::{estimands, predict_surface, GridSpec};
use bipartite::exposure::{derive_exposures, derive_from_map, empirical_g_distribution, rescale_by_max};
use bipartite::frame::AnalysisFrame;
use bipartite::glm::{self, Family, GlmSpec};
use bipartite::linalg::Matrix;
use bipartite::pipeline::{run_pipeline, PipelineConfig, PipelineOutput};
use bipartite::propensity::{balance_table, fit_propensity, PropensitySettings};
use bipartite::synth::{true_estimands, SynthConfig};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

type Outcome = (bool, String);

fn grid() -> Vec<f64> {
    GridSpec::default().points().unwrap()
}

fn within(t: Instant, budget: Duration) -> (bool, String) {
    let e = t.elapsed();
    (e < budget, format!("{:.2}s of {}s", e.as_secs_f64(), budget.as_secs()))
}

fn eta(row: &[f64], beta: &[f64]) -> f64 {
    row.iter().zip(beta).map(|(a, b)| a * b).sum()
}

fn c1_glm_exactness() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut ls_err: f64 = 0.0;
    for _ in 0..50 {
        let p = rng.random_range(1..=10);
        let (design, rows) = random_design(&mut rng, 200, p);
        let beta = vec![0.5; p + 1];
        let y: Vec<f64> = rows
            .iter()
            .map(|r| {
                let e: f64 = StandardNormal.sample(&mut rng);
                eta(r, &beta) + e
            })
            .collect();
        let fit = glm::fit(&GlmSpec::new(Family::Normal, predictor_names(p)).unwrap(), &design, &y, None).unwrap();
        let ls = least_squares(&rows, &y);
        for (a, b) in fit.coefficients.iter().zip(&ls) {
            ls_err = ls_err.max((a - b).abs() / b.abs().max(1.0));
        }
    }

    let mut rate_err: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(5..300);
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(10.0..5000.0)).collect();
        let y: Vec<f64> = b.iter().map(|bi| Poisson::new(bi * 0.003).unwrap().sample(&mut rng)).collect();
        if y.iter().all(|v| *v == 0.0) {
            continue;
        }
        let offset: Vec<f64> = b.iter().map(|v| v.ln()).collect();
        let fit = glm::fit(&GlmSpec::new(Family::PoissonOffset, vec![]).unwrap(), &Matrix::zeros(n, 0), &y, Some(&offset)).unwrap();
        rate_err = rate_err.max((fit.intercept() - (y.iter().sum::<f64>() / b.iter().sum::<f64>()).ln()).abs());
    }

    let mut max_score: f64 = 0.0;
    for family in [Family::Logistic, Family::PoissonOffset] {
        for _ in 0..30 {
            let p = rng.random_range(1..=6);
            let (design, rows) = random_design(&mut rng, 300, p);
            let sds: Vec<f64> = (0..p).map(|c| 10f64.powi(c as i32 % 4 - 1)).collect();
            let mut beta = vec![0.0; p + 1];
            for c in 0..p {
                beta[c + 1] = rng.random_range(-0.6..0.6) / sds[c];
            }
            beta[0] = -rows.iter().map(|r| eta(r, &beta)).sum::<f64>() / rows.len() as f64;
            let offset: Vec<f64> = match family {
                Family::PoissonOffset => (0..rows.len()).map(|_| rng.random_range(100.0f64..2000.0).ln()).collect(),
                _ => vec![0.0; rows.len()],
            };
            let y: Vec<f64> = rows
                .iter()
                .zip(&offset)
                .map(|(r, o)| match family {
                    Family::Logistic => f64::from(u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-eta(r, &beta)).exp()))),
                    _ => Poisson::new((eta(r, &beta) + o + 0.01f64.ln()).exp()).unwrap().sample(&mut rng),
                })
                .collect();
            let off = (family == Family::PoissonOffset).then_some(offset.as_slice());
            let fit = glm::fit(&GlmSpec::new(family, predictor_names(p)).unwrap(), &design, &y, off).unwrap();
            if !fit.converged {
                return (false, format!("{family:?} fit did not converge"));
            }
            let s = score(family, &rows, &y, &offset, &fit.coefficients);
            max_score = s.iter().fold(max_score, |m, v| m.max(v.abs()));
        }
    }
    let (fast, time) = within(t, Duration::from_secs(10));
    let pass = ls_err <= 1e-8 && rate_err <= 1e-10 && max_score <= 1e-6 && fast;
    (pass, format!("ls rel err {ls_err:.1e} (<=1e-8), log-rate err {rate_err:.1e} (<=1e-10), max score {max_score:.1e} (<=1e-6), {time}"))
}

fn c2_exposure_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut mismatches = 0;
    let mut scale_key_z = 0;
    let mut scale_g: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=500);
        let j = rng.random_range(2..=50);
        let density = rng.random_range(0.02..0.6);
        let dense = random_sparse(&mut rng, n, j, density);
        let p = rng.random::<f64>();
        let s: Vec<bool> = (0..j).map(|_| rng.random::<f64>() < p).collect();
        let map = InterferenceMap::from_dense(&dense, j).unwrap();
        let (key, z, g) = derive_from_map(&map, &s).unwrap();
        let (okey, oz, og) = dense_exposures(&dense, &s);
        if key != okey || z != oz || g.iter().zip(&og).any(|(a, b)| a.to_bits() != b.to_bits()) {
            mismatches += 1;
        }
        let (g0, _) = rescale_by_max(&g);
        for c in [0.1, 3.0, 1e6] {
            let (k1, z1, gs) = derive_from_map(&map.scaled(c), &s).unwrap();
            if k1 != key || z1 != z {
                scale_key_z += 1;
            }
            let (g1, _) = rescale_by_max(&gs);
            scale_g = g0.iter().zip(&g1).fold(scale_g, |m, (a, b)| m.max((a - b).abs()));
        }
    }
    let (fast, time) = within(t, Duration::from_secs(5));
    let pass = mismatches == 0 && scale_key_z == 0 && scale_g <= 4.0 * f64::EPSILON && fast;
    (pass, format!("{mismatches} of 100 differ from the dense loop, {scale_key_z} (key, Z) changes under cT, max |dG| {scale_g:.1e}, {time}"))
}

fn c3_small_instance() -> Outcome {
    let mut worst: f64 = 0.0;
    for family in [OutcomeFamily::Normal, OutcomeFamily::PoissonOffset] {
        let oracle = small_oracle(family);
        let ds = small_dataset(family);
        let frame = AnalysisFrame::build(&ds, &derive_exposures(&ds).unwrap()).unwrap();
        let ps = fit_propensity(&frame, &PropensitySettings { strata: 2, ..Default::default() }).unwrap();
        let labels: Vec<usize> = ps.strata.labels.iter().map(|l| l.unwrap()).collect();
        if labels != oracle.labels {
            return (false, format!("{family:?}: stratum labels {labels:?} vs {:?}", oracle.labels));
        }
        let surface = predict_surface(&theta_fits(family), &ps, &frame, &oracle.grid).unwrap();
        let kept_g: Vec<f64> = (0..frame.len()).filter(|&i| ps.kept[i]).map(|i| frame.g[i]).collect();
        let est = estimands(&surface, &empirical_g_distribution(&kept_g).unwrap()).unwrap();
        let mut d = max_abs_diff(&ps.phi_hat, &oracle.phi);
        for k in 0..2 {
            for z in 0..2 {
                d = d.max(max_abs_diff(&surface.mu_strata[k][z], &oracle.mu_k[k][z]));
            }
        }
        for z in 0..2 {
            d = d.max(max_abs_diff(&surface.pooled[z], &oracle.pooled[z]));
            d = d.max(max_abs_diff(&est.delta[z], &oracle.delta[z]));
        }
        d = d.max(max_abs_diff(&est.tau_of_g, &oracle.tau_of_g));
        d = d.max(max_abs_diff(&[est.tau, est.delta0, est.delta1], &[oracle.tau, oracle.delta0, oracle.delta1]));
        worst = worst.max(d);
    }
    (worst <= 1e-10, format!("max abs diff {worst:.1e} over both families and all 51 grid points (<=1e-10)"))
}

/// Relative errors of (tau, Delta0, Delta1) against the truth over kept units.
fn relative_errors(n: usize, seed: u64) -> ([f64; 3], [f64; 3]) {
    let (out, frame) = synth_frame(&SynthConfig { n_outcome: n, seed, ..Default::default() });
    let fit = run_pipeline(&frame, &PipelineConfig::default()).unwrap();
    let t = true_estimands(&out.ground_truth, Some(&fit.propensity.kept), &grid()).unwrap();
    let e = &fit.estimates;
    let abs = [(e.tau - t.tau).abs(), (e.delta0 - t.delta0).abs(), (e.delta1 - t.delta1).abs()];
    ([abs[0] / t.tau.abs(), abs[1] / t.delta0.abs(), abs[2] / t.delta1.abs()], abs)
}

fn c4_consistency() -> Outcome {
    let t = Instant::now();
    let (rel, _) = relative_errors(5000, 1);
    let mut mae = Vec::new();
    for n in [500, 2000, 8000] {
        let mut acc = 0.0;
        for seed in 1..=3 {
            acc += relative_errors(n, seed).1.iter().sum::<f64>() / 3.0;
        }
        mae.push(acc / 3.0);
    }
    let (fast, time) = within(t, Duration::from_secs(120));
    let close = rel.iter().all(|r| *r <= 0.15);
    let monotone = mae.windows(2).all(|w| w[1] < w[0]);
    (
        close && monotone && fast,
        format!(
            "n=5000 rel err tau {:.3} Delta0 {:.3} Delta1 {:.3} (<=0.15); MAE n=500/2000/8000 {:.3}/{:.3}/{:.3}; {time}",
            rel[0], rel[1], rel[2], mae[0], mae[1], mae[2]
        ),
    )
}

fn workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(8)
}

fn c5_coverage() -> Outcome {
    let t = Instant::now();
    let runs = 200;
    let jobs = workers();
    let mut covered = 0;
    let mut failed = 0;
    for s in 0..runs as u64 {
        let (out, frame) = synth_frame(&SynthConfig { n_outcome: 1000, seed: 1000 + s, ..Default::default() });
        let cfg = BootstrapConfig { replicates: 200, seed: s, ci_level: 0.95, jobs, ..Default::default() };
        match egocentric_bootstrap(&frame, &PipelineConfig::default(), &cfg) {
            Ok((o, b)) => {
                let truth = true_estimands(&out.ground_truth, Some(&o.propensity.kept), &grid()).unwrap().tau;
                if b.tau.lo <= truth && truth <= b.tau.hi {
                    covered += 1;
                }
            }
            Err(_) => failed += 1,
        }
    }
    let rate = covered as f64 / runs as f64;
    let pass = (0.90..=1.0).contains(&rate);
    (
        pass,
        format!(
            "95% CI covers tau in {covered}/{runs} ({:.1}%, need 90-100%), {failed} runs failed to fit, {:.0}s on {jobs} worker(s)",
            100.0 * rate,
            t.elapsed().as_secs_f64()
        ),
    )
}

fn c6_balance() -> Outcome {
    let (_, frame) = synth_frame(&SynthConfig { n_outcome: 5000, seed: 1, ..Default::default() });
    let ps = fit_propensity(&frame, &PropensitySettings::default()).unwrap();
    let table = balance_table(&frame, &ps);
    let (raw, strat) = table.mean_abs(&frame.balance_names);
    let weighted_abs: f64 = table.rows.iter().map(|r| r.per_stratum.iter().zip(&ps.strata.weights).map(|(s, w)| w * s.abs()).sum::<f64>()).sum::<f64>()
        / table.rows.len() as f64;
    (
        strat < raw && weighted_abs < raw,
        format!("mean |SMD| unadjusted {raw:.4}, stratum-averaged {strat:.4}, stratum-weighted |SMD| {weighted_abs:.4}"),
    )
}

fn c7_pattern() -> Outcome {
    let cfg = SynthConfig { n_outcome: 5000, seed: 5, beta_z: -1.0, beta_z_modifier: 1.2, beta_g: 0.3, beta_g_modifier: -2.2, ..Default::default() };
    let (_, frame) = synth_frame(&cfg);
    let bc = BootstrapConfig { replicates: 200, seed: 5, ci_level: 0.95, jobs: workers(), ..Default::default() };
    let (o, b): (PipelineOutput, _) = egocentric_bootstrap(&frame, &PipelineConfig::default(), &bc).unwrap();
    let e = &o.estimates;
    let order = e.tau < 0.0 && e.delta0 < 0.0 && e.delta1 < e.delta0;
    let excl = b.delta0.hi < 0.0 && b.delta1.hi < 0.0;
    (
        order && excl,
        format!(
            "tau {:.2}, Delta0 {:.2} [{:.2}, {:.2}], Delta1 {:.2} [{:.2}, {:.2}]",
            e.tau, e.delta0, b.delta0.lo, b.delta0.hi, e.delta1, b.delta1.lo, b.delta1.hi
        ),
    )
}

fn c8_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_bipartite");
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim.json");
    std::fs::write(&sim, r#"{"synth": {"n_outcome": 2000}, "bootstrap": {"replicates": 50}, "jobs": 2}"#).unwrap();
    let data = dir.path().join("data");
    let ok = |args: &[&std::ffi::OsStr]| Command::new(bin).args(args).env("BIPARTITE_LOG", "error").output().unwrap().status.success();
    if !ok(&["simulate".as_ref(), "--config".as_ref(), sim.as_os_str(), "--out".as_ref(), data.as_os_str()]) {
        return (false, "simulate failed".into());
    }
    let cfg = data.join("run_config.json");
    let outs = [dir.path().join("a"), dir.path().join("b")];
    for o in &outs {
        if !ok(&["report".as_ref(), "--config".as_ref(), cfg.as_os_str(), "--out".as_ref(), o.as_os_str()]) {
            return (false, "report failed".into());
        }
    }
    let mut differ = Vec::new();
    for f in ["estimands.json", "curves_ci.csv", "manifest.json"] {
        if std::fs::read(outs[0].join(f)).unwrap() != std::fs::read(outs[1].join(f)).unwrap() {
            differ.push(f);
        }
    }
    (differ.is_empty(), if differ.is_empty() { "estimands.json, curves_ci.csv, manifest.json byte-identical".into() } else { format!("differ: {differ:?}") })
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("GLM exactness", c1_glm_exactness),
        ("exposure oracle", c2_exposure_oracle),
        ("small-instance pipeline oracle", c3_small_instance),
        ("estimator consistency", c4_consistency),
        ("bootstrap coverage", c5_coverage),
        ("balance improvement", c6_balance),
        ("qualitative sign pattern", c7_pattern),
        ("determinism", c8_determinism),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failures = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let id = k + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let (pass, detail) = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(r) => r,
            Err(p) => (false, format!("panicked: {}", p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())),
        };
        if !pass {
            failures += 1;
        }
        println!("criterion {id} {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
