//! Built-in oracle checks, runnable from the CLI without a test harness.
//! Each check compares an implementation path against an independent
//! computation and reports pass/fail with a short detail string.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aggregators::{cc_clip, mean_agg, rfa_agg, trimmed_mean_agg, weiszfeld_path, rfa_objective};
use crate::attacks::{alie_zmax, ipm, RoundKnowledge};
use crate::data::generate_blobs;
use crate::harness::{metrics::metrics_csv_bytes, run_experiment, ExperimentConfig};
use crate::model::ModelSpec;
use crate::vecmath::{cosine_similarity, inner, orthogonal_rejection, ParamVector};

pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> ParamVector {
    ParamVector::new((0..d).map(|_| rng.random_range(-scale..scale)).collect()).expect("finite")
}

fn vector_kernels() -> Result<String, String> {
    let pv = |v: &[f64]| ParamVector::new(v.to_vec()).expect("finite");
    let dot = inner(&pv(&[3.0, 4.0]), &pv(&[4.0, 3.0])).map_err(|e| e.to_string())?;
    ensure(dot == 24.0, || format!("inner gave {dot}"))?;
    let cos = cosine_similarity(&pv(&[3.0, 4.0]), &pv(&[4.0, 3.0])).map_err(|e| e.to_string())?;
    ensure((cos - 0.96).abs() < 1e-15, || format!("cosine gave {cos}"))?;
    let (proj, rej) = orthogonal_rejection(&pv(&[2.0, 3.0]), &pv(&[0.0, 5.0])).map_err(|e| e.to_string())?;
    ensure(proj == pv(&[0.0, 3.0]) && rej == pv(&[2.0, 0.0]), || "rejection of (2,3) on (0,5)".into())?;
    Ok("inner, cosine, rejection".into())
}

fn trimmed_mean_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..200 {
        let k = rng.random_range(1..=9);
        let d = rng.random_range(1..=5);
        let trim = rng.random_range(0..=(k - 1) / 2);
        let ms: Vec<_> = (0..k).map(|_| random_vec(&mut rng, d, 10.0)).collect();
        let got = trimmed_mean_agg(&ms, trim).map_err(|e| e.to_string())?.aggregate;
        for j in 0..d {
            let mut col: Vec<f64> = ms.iter().map(|m| m[j]).collect();
            col.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            let kept = &col[trim..k - trim];
            let expect = kept.iter().sum::<f64>() / kept.len() as f64;
            ensure(got[j].to_bits() == expect.to_bits(), || format!("case {case} coord {j}"))?;
        }
    }
    Ok("200 instances bitwise".into())
}

fn geometric_median() -> Result<String, String> {
    let pv = |v: &[f64]| ParamVector::new(v.to_vec()).expect("finite");
    let tri = [pv(&[0.0, 0.0]), pv(&[1.0, 0.0]), pv(&[0.0, 1.0])];
    let fermat = (3.0 - 3f64.sqrt()) / 6.0;
    let x = rfa_agg(&tri, 100, 1e-8).map_err(|e| e.to_string())?.aggregate;
    ensure((x[0] - fermat).abs() < 1e-4 && (x[1] - fermat).abs() < 1e-4, || format!("triangle gave {x:?}"))?;
    let line: Vec<_> = [0.0, 1.0, 10.0].iter().map(|&v| pv(&[v])).collect();
    let x = rfa_agg(&line, 100, 1e-8).map_err(|e| e.to_string())?.aggregate;
    ensure((x[0] - 1.0).abs() < 1e-4, || format!("1-d median gave {}", x[0]))?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..100 {
        let k = rng.random_range(2..=9);
        let ms: Vec<_> = (0..k).map(|_| random_vec(&mut rng, 4, 5.0)).collect();
        let path = weiszfeld_path(&ms, 100, 1e-10).map_err(|e| e.to_string())?;
        for w in path.windows(2) {
            let (a, b) = (rfa_objective(&w[0], &ms), rfa_objective(&w[1], &ms));
            ensure(b <= a * (1.0 + 1e-12) + 1e-12, || format!("case {case}: objective {a} -> {b}"))?;
        }
    }
    Ok(format!("fermat point {fermat:.5}, monotone on 100 instances"))
}

fn alie_quantile() -> Result<String, String> {
    // Simpson quadrature of the density as an erf-free CDF
    let cdf = |z: f64| {
        let n = 2000;
        let h = z / n as f64;
        let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = pdf(0.0) + pdf(z);
        for i in 1..n {
            s += pdf(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        0.5 + s * h / 3.0
    };
    let quantile = |q: f64| {
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    for (k, k_m, q) in [(25, 5, 0.6), (10, 4, 4.0 / 6.0)] {
        let z = alie_zmax(k, k_m).map_err(|e| e.to_string())?;
        let oracle = quantile(q);
        ensure((z - oracle).abs() < 1e-3, || format!("k={k} k_m={k_m}: {z} vs {oracle}"))?;
    }
    Ok("z-max matches quadrature quantiles".into())
}

fn clipping_containment() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..1000 {
        let d = rng.random_range(1..=6);
        let m = random_vec(&mut rng, d, 20.0);
        let c = random_vec(&mut rng, d, 20.0);
        let tau = rng.random_range(0.01..10.0);
        let (out, f) = cc_clip(&m, &c, tau);
        ensure(out.sub(&c).norm() <= tau + 1e-9 || f == 1.0, || format!("case {case} escapes the ball"))?;
    }
    Ok("1000 random clips inside the ball".into())
}

fn ipm_identity() -> Result<String, String> {
    let (k, k_m, eps) = (25, 5, 0.2);
    let mean = ParamVector::new(vec![0.7, -1.3, 2.9, 0.05]).expect("finite");
    let kn = RoundKnowledge {
        t: 1,
        benign_mean: mean.clone(),
        benign_std: ParamVector::zeros(4),
        prev_aggregate: None,
        eta: 0.1,
        k,
        k_m,
    };
    let mut subs = vec![mean.clone(); k - k_m];
    subs.extend(std::iter::repeat_n(ipm(&kn, eps), k_m));
    let agg = mean_agg(&subs).map_err(|e| e.to_string())?.aggregate;
    let factor = 1.0 - (k_m as f64 / k as f64) * (1.0 + eps);
    for j in 0..4 {
        ensure((agg[j] - factor * mean[j]).abs() <= 1e-12, || format!("coord {j}"))?;
    }
    Ok(format!("aggregate = {factor:.2} * benign mean"))
}

fn gradient_finite_difference() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..20 {
        let c = rng.random_range(2..=4);
        let f = rng.random_range(c..=6);
        let h = rng.random_range(2..=8);
        let ds = generate_blobs(c, 5, f, 0.7, case).map_err(|e| e.to_string())?;
        let spec = ModelSpec::mlp(f, h, c, case);
        let params = random_vec(&mut rng, spec.param_count(), 1.0);
        let batch: Vec<usize> = (0..6).map(|_| rng.random_range(0..ds.len())).collect();
        let g = spec.gradient(&params, &ds, &batch).map_err(|e| e.to_string())?;
        let step = 1e-5;
        for j in 0..params.dim() {
            let mut plus = params.clone();
            plus.as_mut_slice()[j] += step;
            let mut minus = params.clone();
            minus.as_mut_slice()[j] -= step;
            let lp = spec.forward_loss(&plus, &ds, &batch).map_err(|e| e.to_string())?;
            let lm = spec.forward_loss(&minus, &ds, &batch).map_err(|e| e.to_string())?;
            let fd = (lp - lm) / (2.0 * step);
            ensure((g[j] - fd).abs() <= 1e-4 * g[j].abs().max(1e-3), || {
                format!("case {case} coord {j}: analytic {} vs fd {fd}", g[j])
            })?;
        }
    }
    Ok("20 random mlp configurations".into())
}

fn determinism() -> Result<String, String> {
    let mut cfg = ExperimentConfig::new(6, 1, 8);
    cfg.blobs_per_class = 30;
    cfg.blobs_classes = 3;
    cfg.blobs_features = 4;
    cfg.blobs_test_per_class = 10;
    cfg.eval_every = 2;
    cfg.aggregator = crate::harness::AggregatorKind::Scc;
    cfg.attack = crate::attacks::AttackKind::Rop;
    let a = run_experiment(&cfg).map_err(|e| e.to_string())?;
    cfg.workers = 3;
    let b = run_experiment(&cfg).map_err(|e| e.to_string())?;
    let (a, b) = (
        metrics_csv_bytes(&a.metrics).map_err(|e| e.to_string())?,
        metrics_csv_bytes(&b.metrics).map_err(|e| e.to_string())?,
    );
    ensure(a == b, || "metrics differ between 1 and 3 workers".into())?;
    Ok(format!("{} identical CSV bytes", a.len()))
}

const CHECKS: [(&str, Check); 8] = [
    ("vector kernels", vector_kernels),
    ("trimmed mean vs sort-slice-mean", trimmed_mean_oracle),
    ("geometric median", geometric_median),
    ("alie z-max quantile", alie_quantile),
    ("centered clipping containment", clipping_containment),
    ("ipm aggregate identity", ipm_identity),
    ("gradient vs finite differences", gradient_finite_difference),
    ("run determinism across workers", determinism),
];

pub fn run_all() -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|(name, check)| {
            let (passed, detail) = match check() {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckResult { name, passed, detail }
        })
        .collect()
}
