//! Independent oracles shared by the integration tests. Nothing here calls
//! into the estimator except to build inputs.
#![allow(dead_code)]

use bipartite::data::{BipartiteDataset, CovariateSchema, InterferenceMap, InterventionalUnit, OutcomeFamily, OutcomeUnit};
use bipartite::exposure::derive_exposures;
use bipartite::frame::AnalysisFrame;
use bipartite::glm::{Family, GlmFit};
use bipartite::synth::{generate, SynthConfig, SynthOutput};
use nalgebra::{DMatrix, DVector};

/// Dense triple loop: argmax (first maximum wins), key treatment, and the
/// ascending-index sum of the other treated weights.
pub fn dense_exposures(t: &[Vec<f64>], s: &[bool]) -> (Vec<usize>, Vec<bool>, Vec<f64>) {
    let mut key = Vec::new();
    let mut z = Vec::new();
    let mut gstar = Vec::new();
    for row in t {
        let mut best = 0;
        for j in 1..row.len() {
            if row[j] > row[best] {
                best = j;
            }
        }
        let mut acc = 0.0;
        for j in 0..row.len() {
            if j != best && row[j] > 0.0 && s[j] {
                acc += row[j];
            }
        }
        key.push(best);
        z.push(s[best]);
        gstar.push(acc);
    }
    (key, z, gstar)
}

/// Least squares through an SVD solve. `x` rows include the intercept column.
pub fn least_squares(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let (n, k) = (x.len(), x[0].len());
    let m = DMatrix::from_fn(n, k, |r, c| x[r][c]);
    let b = DVector::from_column_slice(y);
    m.svd(true, true).solve(&b, 1e-14).unwrap().iter().copied().collect()
}

fn mean_of(family: Family, eta: f64) -> f64 {
    match family {
        Family::Logistic => 1.0 / (1.0 + (-eta).exp()),
        Family::PoissonOffset => eta.exp(),
        Family::Normal => eta,
    }
}

/// Log-likelihood up to constants. `x` rows include the intercept column.
pub fn log_likelihood(family: Family, x: &[Vec<f64>], y: &[f64], offset: &[f64], beta: &[f64]) -> f64 {
    let mut ll = 0.0;
    for ((row, &yi), &o) in x.iter().zip(y).zip(offset) {
        let eta: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() + o;
        ll += match family {
            Family::Logistic => yi * eta - (1.0 + eta.exp()).ln(),
            Family::PoissonOffset => yi * eta - eta.exp(),
            Family::Normal => -0.5 * (yi - eta).powi(2),
        };
    }
    ll
}

/// Analytic gradient `X'(y - mu)` on the raw design.
pub fn score(family: Family, x: &[Vec<f64>], y: &[f64], offset: &[f64], beta: &[f64]) -> Vec<f64> {
    let k = beta.len();
    let mut g = vec![0.0; k];
    for ((row, &yi), &o) in x.iter().zip(y).zip(offset) {
        let eta: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() + o;
        let r = yi - mean_of(family, eta);
        for c in 0..k {
            g[c] += row[c] * r;
        }
    }
    g
}

/// Plain Newton-Raphson on the raw design for logistic or Poisson models.
pub fn newton(family: Family, x: &[Vec<f64>], y: &[f64], offset: &[f64]) -> Vec<f64> {
    let (n, k) = (x.len(), x[0].len());
    let mut beta = DVector::zeros(k);
    for _ in 0..200 {
        let mut h = DMatrix::zeros(k, k);
        let mut g = DVector::zeros(k);
        for r in 0..n {
            let eta: f64 = (0..k).map(|c| x[r][c] * beta[c]).sum::<f64>() + offset[r];
            let mu = mean_of(family, eta);
            let w = match family {
                Family::Logistic => mu * (1.0 - mu),
                _ => mu,
            };
            for a in 0..k {
                g[a] += x[r][a] * (y[r] - mu);
                for b in 0..k {
                    h[(a, b)] += w * x[r][a] * x[r][b];
                }
            }
        }
        let step = h.cholesky().expect("information matrix not positive definite").solve(&g);
        beta += &step;
        if step.amax() < 1e-14 {
            break;
        }
    }
    beta.iter().copied().collect()
}

pub fn synth_frame(cfg: &SynthConfig) -> (SynthOutput, AnalysisFrame) {
    let out = generate(cfg).unwrap();
    let ex = derive_exposures(&out.dataset).unwrap();
    let frame = AnalysisFrame::build(&out.dataset, &ex).unwrap();
    (out, frame)
}

/// Hazen quantile written out longhand: `h = n p + 1/2`, 1-based.
pub fn hazen(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len() as f64;
    let h = (n * p + 0.5).clamp(1.0, n);
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if frac == 0.0 {
        v[lo - 1]
    } else {
        v[lo - 1] * (1.0 - frac) + v[lo] * frac
    }
}

// ---------------------------------------------------------------------------
// Six receptors, three sources, two strata.
//
// The key-associated propensity model uses only the receptor covariate x1.
// Treated and control receptors share the extreme x1 values, so min/max
// trimming keeps all six units and the treated median splits them 3/3 with
// both treatment levels on each side.

pub const SMALL_X1: [f64; 6] = [-1.0, -1.0, -0.2, 0.4, 1.0, 1.0];
pub const SMALL_KEYS: [usize; 6] = [0, 1, 1, 2, 0, 1];
pub const SMALL_TREATED: [bool; 3] = [true, false, true];
pub const SMALL_T: [[f64; 3]; 6] = [
    [0.9, 0.3, 0.2],
    [0.4, 0.8, 0.5],
    [0.1, 0.7, 0.6],
    [0.5, 0.2, 0.9],
    [0.6, 0.35, 0.45],
    [0.3, 0.75, 0.15],
];
pub const SMALL_Y_NORMAL: [f64; 6] = [2.0, 3.5, 1.2, 4.1, 2.7, 3.3];
pub const SMALL_Y_COUNTS: [f64; 6] = [3.0, 7.0, 2.0, 5.0, 4.0, 6.0];
pub const SMALL_PERSON_YEARS: [f64; 6] = [900.0, 1500.0, 700.0, 1100.0, 1000.0, 1300.0];

pub fn small_dataset(family: OutcomeFamily) -> BipartiteDataset {
    let ints = (0..3)
        .map(|j| InterventionalUnit { id: ["A", "B", "C"][j].to_string(), treated: SMALL_TREATED[j], covariates: vec![0.1 * j as f64] })
        .collect();
    let outs = (0..6)
        .map(|i| {
            let (outcome, offset_exposure) = match family {
                OutcomeFamily::Normal => (SMALL_Y_NORMAL[i], 1.0),
                OutcomeFamily::PoissonOffset => (SMALL_Y_COUNTS[i], SMALL_PERSON_YEARS[i]),
            };
            OutcomeUnit { id: format!("r{}", i + 1), outcome, offset_exposure, covariates: vec![SMALL_X1[i]] }
        })
        .collect();
    let mut triplets = Vec::new();
    for (i, row) in SMALL_T.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            triplets.push((i, j, w));
        }
    }
    let schema = CovariateSchema { x_out_z: vec!["x1".into()], x_out_outcome: vec!["x1".into()], family, ..Default::default() };
    let map = InterferenceMap::from_triplets(6, 3, triplets).unwrap();
    BipartiteDataset::new(vec!["u1".into()], vec!["x1".into()], ints, outs, map, schema).unwrap()
}

/// Injected outcome coefficients `[intercept, z, g, lambda, x1]` per stratum.
pub fn small_theta(family: OutcomeFamily) -> [[f64; 5]; 2] {
    match family {
        OutcomeFamily::Normal => [[1.0, -0.5, -2.0, 0.3, 0.2], [0.8, -0.7, -1.5, 0.1, -0.1]],
        OutcomeFamily::PoissonOffset => {
            let b0 = (50.0f64 / 10_000.0).ln();
            [[b0, -0.2, -0.9, 0.05, 0.1], [b0 + 0.1, -0.4, -0.6, -0.02, 0.2]]
        }
    }
}

pub fn theta_fits(family: OutcomeFamily) -> Vec<GlmFit> {
    let fam = match family {
        OutcomeFamily::Normal => Family::Normal,
        OutcomeFamily::PoissonOffset => Family::PoissonOffset,
    };
    small_theta(family)
        .iter()
        .map(|c| GlmFit {
            family: fam,
            predictors: ["z", "g", "lambda", "out:x1"].iter().map(|s| s.to_string()).collect(),
            coefficients: c.to_vec(),
            residual_variance: (fam == Family::Normal).then_some(1.0),
            converged: true,
            separation: false,
            iterations: 1,
            max_abs_score: 0.0,
            deviance: 0.0,
            n_obs: 3,
            design_column_means: vec![],
            design_column_sds: vec![],
        })
        .collect()
}

/// Everything the small instance should produce, recomputed step by step.
#[derive(Debug)]
pub struct SmallOracle {
    pub g: Vec<f64>,
    pub phi: Vec<f64>,
    pub labels: Vec<usize>,
    pub weights: [f64; 2],
    /// Upwind model `[intercept, z]` and residual variance per stratum.
    pub gps: [([f64; 2], f64); 2],
    pub grid: Vec<f64>,
    /// `mu_k[k][z][t]`
    pub mu_k: Vec<[Vec<f64>; 2]>,
    pub pooled: [Vec<f64>; 2],
    pub tau_of_g: Vec<f64>,
    pub delta: [Vec<f64>; 2],
    pub tau: f64,
    pub delta0: f64,
    pub delta1: f64,
}

pub fn small_oracle(family: OutcomeFamily) -> SmallOracle {
    // exposures
    let t: Vec<Vec<f64>> = SMALL_T.iter().map(|r| r.to_vec()).collect();
    let (key, z, gstar) = dense_exposures(&t, &SMALL_TREATED);
    assert_eq!(key, SMALL_KEYS.to_vec());
    let gmax = gstar.iter().cloned().fold(0.0, f64::max);
    let g: Vec<f64> = gstar.iter().map(|v| v / gmax).collect();

    // key-associated propensity, logistic in x1
    let x: Vec<Vec<f64>> = SMALL_X1.iter().map(|&v| vec![1.0, v]).collect();
    let zf: Vec<f64> = z.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let b = newton(Family::Logistic, &x, &zf, &[0.0; 6]);
    let phi: Vec<f64> = SMALL_X1.iter().map(|&v| 1.0 / (1.0 + (-(b[0] + b[1] * v)).exp())).collect();

    // min/max overlap: every unit must survive for this instance
    let group = |flag: bool| phi.iter().zip(&z).filter(|(_, &zz)| zz == flag).map(|(p, _)| *p).collect::<Vec<_>>();
    let (p0, p1) = (group(false), group(true));
    let lo = p0.iter().cloned().fold(f64::INFINITY, f64::min).max(p1.iter().cloned().fold(f64::INFINITY, f64::min));
    let hi = p0.iter().cloned().fold(f64::NEG_INFINITY, f64::max).min(p1.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    assert!(phi.iter().all(|&p| p >= lo - 1e-12 && p <= hi + 1e-12), "instance should keep every unit");

    // two strata at the treated median
    let cut = hazen(&p1, 0.5);
    let labels: Vec<usize> = phi.iter().map(|&p| usize::from(p >= cut)).collect();
    let weights = [labels.iter().filter(|&&l| l == 0).count() as f64 / 6.0, labels.iter().filter(|&&l| l == 1).count() as f64 / 6.0];

    // per-stratum normal regression of g on z, unbiased residual variance
    let mut gps = [([0.0; 2], 0.0); 2];
    for k in 0..2 {
        let m: Vec<usize> = (0..6).filter(|&i| labels[i] == k).collect();
        let xs: Vec<Vec<f64>> = m.iter().map(|&i| vec![1.0, zf[i]]).collect();
        let ys: Vec<f64> = m.iter().map(|&i| g[i]).collect();
        let c = least_squares(&xs, &ys);
        let rss: f64 = xs.iter().zip(&ys).map(|(r, y)| (y - c[0] * r[0] - c[1] * r[1]).powi(2)).sum();
        gps[k] = ([c[0], c[1]], rss / (m.len() - 2) as f64);
    }

    let grid: Vec<f64> = (0..=50).map(|t| t as f64 * 0.02).collect();
    let theta = small_theta(family);
    let predict = |i: usize, k: usize, zz: f64, gg: f64| -> f64 {
        let ([a, bz], var) = gps[k];
        let mean = a + bz * zz;
        let lambda = (-(gg - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
        let th = theta[k];
        let eta = th[0] + th[1] * zz + th[2] * gg + th[3] * lambda + th[4] * SMALL_X1[i];
        match family {
            OutcomeFamily::Normal => eta,
            OutcomeFamily::PoissonOffset => (eta + 10_000f64.ln()).exp(),
        }
    };
    let mut mu_k = Vec::new();
    for k in 0..2 {
        let m: Vec<usize> = (0..6).filter(|&i| labels[i] == k).collect();
        let curve = |zz: f64| grid.iter().map(|&gg| m.iter().map(|&i| predict(i, k, zz, gg)).sum::<f64>() / m.len() as f64).collect::<Vec<_>>();
        mu_k.push([curve(0.0), curve(1.0)]);
    }
    let pooled = [0, 1].map(|zz| (0..grid.len()).map(|t| weights[0] * mu_k[0][zz][t] + weights[1] * mu_k[1][zz][t]).collect::<Vec<f64>>());
    let tau_of_g: Vec<f64> = (0..grid.len()).map(|t| pooled[1][t] - pooled[0][t]).collect();
    let delta = [0, 1].map(|zz| pooled[zz].iter().map(|v| v - pooled[zz][0]).collect::<Vec<f64>>());

    // average over the six observed g values by linear interpolation
    let interp = |curve: &[f64], v: f64| -> f64 {
        let pos = v / 0.02;
        let lo = (pos.floor() as usize).min(49);
        let w = pos - lo as f64;
        if w.abs() < 1e-12 {
            curve[lo]
        } else {
            curve[lo] * (1.0 - w) + curve[lo + 1] * w
        }
    };
    let avg = |f: &dyn Fn(f64) -> f64| g.iter().map(|&v| f(v)).sum::<f64>() / 6.0;
    let tau = avg(&|v| interp(&pooled[1], v) - interp(&pooled[0], v));
    let delta0 = avg(&|v| interp(&pooled[0], v) - pooled[0][0]);
    let delta1 = avg(&|v| interp(&pooled[1], v) - pooled[1][0]);

    SmallOracle { g, phi, labels, weights, gps, grid, mu_k, pooled, tau_of_g, delta, tau, delta0, delta1 }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Random design with columns on deliberately different scales, plus the
/// same rows with a leading intercept column for the oracles.
pub fn random_design(rng: &mut impl rand::Rng, n: usize, p: usize) -> (bipartite::linalg::Matrix, Vec<Vec<f64>>) {
    use rand_distr::{Distribution, StandardNormal};
    let scales: Vec<(f64, f64)> = (0..p).map(|c| (rng.random_range(-5.0..5.0), 10f64.powi(c as i32 % 4 - 1))).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            scales
                .iter()
                .map(|&(m, s)| {
                    let e: f64 = StandardNormal.sample(rng);
                    m + s * e
                })
                .collect::<Vec<f64>>()
        })
        .collect();
    let with_intercept = rows.iter().map(|r| std::iter::once(1.0).chain(r.iter().copied()).collect()).collect();
    (bipartite::linalg::Matrix::from_rows(&rows), with_intercept)
}

pub fn predictor_names(p: usize) -> Vec<String> {
    (1..=p).map(|c| format!("x{c}")).collect()
}

/// Random sparse nonnegative matrix with every row nonempty. Weights are
/// drawn from a coarse lattice so that ties occur.
pub fn random_sparse(rng: &mut impl rand::Rng, n: usize, j: usize, density: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let mut row: Vec<f64> = (0..j)
                .map(|_| if rng.random::<f64>() < density { rng.random_range(1..=20) as f64 * 0.05 } else { 0.0 })
                .collect();
            if row.iter().all(|w| *w == 0.0) {
                let c = rng.random_range(0..j);
                row[c] = rng.random_range(1..=20) as f64 * 0.05;
            }
            row
        })
        .collect()
}
