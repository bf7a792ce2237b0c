//! Evaluation: reconstruction accuracy, prior validity / uniqueness /
//! novelty, predictor RMSE, and the principal-component latent sweep.

use std::collections::HashSet;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::Architecture;
use crate::encoder::standard_normal;
use crate::error::{Error, Result};
use crate::model::NasModel;
use crate::oracle::{Dataset, Labeled};
use crate::scalar::Real;
use crate::seeding::{stream, tags};

/// Sampling protocol for the decode-based metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Posterior samples per graph.
    pub n_latent: usize,
    /// Stochastic decodes per posterior sample.
    pub n_decode: usize,
    /// Prior samples for validity, uniqueness and novelty.
    pub prior_points: usize,
    /// Stochastic decodes per prior sample.
    pub prior_decodes: usize,
    /// Cap on graphs per split used for reconstruction accuracy (first N).
    pub max_recon_graphs: Option<usize>,
    pub seed: u64,
    /// Run on one thread. Results are identical either way.
    pub serial: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_latent: 5,
            n_decode: 5,
            prior_points: 1000,
            prior_decodes: 10,
            max_recon_graphs: None,
            seed: 0,
            serial: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub epoch: Option<usize>,
    /// Exact-match reconstruction rate on the training split.
    pub reconstruction_accuracy: f64,
    /// Exact-match reconstruction rate on the test split.
    pub reconstruction_accuracy_test: f64,
    pub validity: f64,
    pub uniqueness: f64,
    pub novelty: f64,
    pub rmse_perf_train: f64,
    pub rmse_perf_test: f64,
    pub rmse_comp_train: f64,
    pub rmse_comp_test: f64,
    pub counts: EvalCounts,
    pub protocol: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub recon_train_graphs: usize,
    pub recon_test_graphs: usize,
    pub prior_decodes: usize,
    pub prior_valid: usize,
    pub prior_unique: usize,
    pub prior_novel: usize,
    pub train_graphs: usize,
    pub test_graphs: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn par_map<I, O, F>(serial: bool, items: &[I], f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(usize, &I) -> O + Sync + Send,
{
    if serial {
        items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
    } else {
        items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
    }
}

/// Mean over graphs of the fraction of `n_latent * n_decode` stochastic
/// decodes that reproduce the graph exactly.
pub fn reconstruction_accuracy<T: Real>(
    model: &NasModel<T>,
    graphs: &[Architecture],
    n_latent: usize,
    n_decode: usize,
    seed: u64,
    serial: bool,
) -> Result<f64> {
    reconstruction_accuracy_tagged(model, graphs, n_latent, n_decode, seed, tags::RECON, serial)
}

fn reconstruction_accuracy_tagged<T: Real>(
    model: &NasModel<T>,
    graphs: &[Architecture],
    n_latent: usize,
    n_decode: usize,
    seed: u64,
    tag: u64,
    serial: bool,
) -> Result<f64> {
    if graphs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if n_latent == 0 || n_decode == 0 {
        return Err(Error::Config("reconstruction protocol needs positive sample counts".into()));
    }
    let scores = par_map(serial, graphs, |i, arch| -> Result<f64> {
        let mut rng = stream(seed, tag, i as u64);
        let post = model.posterior(arch)?;
        let mut hits = 0usize;
        for _ in 0..n_latent {
            let s = post.sample(&mut rng);
            for _ in 0..n_decode {
                if model.generate(&s, &mut rng)?.0 == *arch {
                    hits += 1;
                }
            }
        }
        Ok(hits as f64 / (n_latent * n_decode) as f64)
    });
    let scores = scores.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorMetrics {
    pub validity: f64,
    pub uniqueness: f64,
    pub novelty: f64,
    pub total: usize,
    pub valid: usize,
    pub unique: usize,
    pub novel: usize,
}

/// Decodes `n_points` prior samples `n_decode` times each.
pub fn prior_metrics<T: Real>(
    model: &NasModel<T>,
    n_points: usize,
    n_decode: usize,
    seed: u64,
    training_keys: &HashSet<String>,
    serial: bool,
) -> Result<PriorMetrics> {
    let points: Vec<usize> = (0..n_points).collect();
    let decoded = par_map(serial, &points, |i, _| -> Result<Vec<Architecture>> {
        let mut rng = stream(seed, tags::PRIOR, i as u64);
        let s: Vec<T> = standard_normal(&mut rng, model.latent_dim());
        (0..n_decode).map(|_| Ok(model.generate(&s, &mut rng)?.0)).collect()
    });
    let mut total = 0;
    let mut valid = 0;
    let mut keys = HashSet::new();
    for batch in decoded {
        for arch in batch? {
            total += 1;
            if arch.is_valid(model.config.max_nodes) {
                valid += 1;
                keys.insert(arch.identity_key());
            }
        }
    }
    let unique = keys.len();
    let novel = keys.iter().filter(|k| !training_keys.contains(*k)).count();
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(PriorMetrics {
        validity: frac(valid, total),
        uniqueness: frac(unique, valid),
        novelty: frac(novel, unique),
        total,
        valid,
        unique,
        novel,
    })
}

/// `(rmse_perf, rmse_comp)` with predictions taken at the posterior mean.
pub fn rmse<T: Real>(model: &NasModel<T>, set: &[Labeled]) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut se_perf = 0.0;
    let mut se_comp = 0.0;
    for r in set {
        let post = model.posterior(&r.arch)?;
        let (y, z) = model.predict(&post.mu)?;
        se_perf += (y.as_f64() - r.perf).powi(2);
        se_comp += (z.as_f64() - r.comp).powi(2);
    }
    let n = set.len() as f64;
    Ok(((se_perf / n).sqrt(), (se_comp / n).sqrt()))
}

pub fn evaluate<T: Real>(model: &NasModel<T>, dataset: &Dataset, cfg: &EvalConfig, epoch: Option<usize>) -> Result<EvalReport> {
    if dataset.train.is_empty() || dataset.test.is_empty() {
        return Err(Error::Config("evaluation needs non-empty train and test splits".into()));
    }
    let cap = |v: &[Labeled]| -> Vec<Architecture> {
        let n = cfg.max_recon_graphs.unwrap_or(v.len()).min(v.len()).max(1);
        v[..n].iter().map(|r| r.arch.clone()).collect()
    };
    let recon_train = cap(&dataset.train);
    let recon_test = cap(&dataset.test);
    let acc_train =
        reconstruction_accuracy_tagged(model, &recon_train, cfg.n_latent, cfg.n_decode, cfg.seed, tags::RECON, cfg.serial)?;
    let acc_test = reconstruction_accuracy_tagged(
        model,
        &recon_test,
        cfg.n_latent,
        cfg.n_decode,
        cfg.seed,
        tags::RECON_TEST,
        cfg.serial,
    )?;
    let prior = prior_metrics(model, cfg.prior_points, cfg.prior_decodes, cfg.seed, &dataset.train_keys(), cfg.serial)?;
    let (rp_train, rc_train) = rmse(model, &dataset.train)?;
    let (rp_test, rc_test) = rmse(model, &dataset.test)?;
    Ok(EvalReport {
        epoch,
        reconstruction_accuracy: acc_train,
        reconstruction_accuracy_test: acc_test,
        validity: prior.validity,
        uniqueness: prior.uniqueness,
        novelty: prior.novelty,
        rmse_perf_train: rp_train,
        rmse_perf_test: rp_test,
        rmse_comp_train: rc_train,
        rmse_comp_test: rc_test,
        counts: EvalCounts {
            recon_train_graphs: recon_train.len(),
            recon_test_graphs: recon_test.len(),
            prior_decodes: prior.total,
            prior_valid: prior.valid,
            prior_unique: prior.unique,
            prior_novel: prior.novel,
            train_graphs: dataset.train.len(),
            test_graphs: dataset.test.len(),
        },
        protocol: cfg.clone(),
    })
}

/// First two principal components of `codes` by power iteration with
/// deflation. Components are unit length, mutually orthogonal, and signed so
/// their largest-magnitude entry is positive.
pub fn top2_principal_components(codes: &[Vec<f64>]) -> Result<[Vec<f64>; 2]> {
    if codes.len() < 3 {
        return Err(Error::Degenerate(format!("need at least 3 codes, got {}", codes.len())));
    }
    let d = codes[0].len();
    if d < 2 || codes.iter().any(|c| c.len() != d) {
        return Err(Error::Degenerate("codes must share a dimension of at least 2".into()));
    }
    let n = codes.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| codes.iter().map(|c| c[j]).sum::<f64>() / n).collect();
    let mut cov = vec![0.0; d * d];
    for c in codes {
        for i in 0..d {
            let ci = c[i] - mean[i];
            for j in 0..d {
                cov[i * d + j] += ci * (c[j] - mean[j]) / (n - 1.0);
            }
        }
    }
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    if !(trace > 1e-12) || !trace.is_finite() {
        return Err(Error::Degenerate("latent codes have zero variance".into()));
    }

    let mut rng = stream(0, tags::PCA, d as u64);
    let start: Vec<f64> = (0..d).map(|_| rng.gen_range(0.5..1.5)).collect();
    let (first, lambda1) = power_iteration(&cov, d, &start, &[]);
    // deflate
    for i in 0..d {
        for j in 0..d {
            cov[i * d + j] -= lambda1 * first[i] * first[j];
        }
    }
    let (second, _) = power_iteration(&cov, d, &start, &[first.clone()]);
    Ok([canonical_sign(first), canonical_sign(second)])
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn orthogonalize(v: &mut [f64], against: &[Vec<f64>]) {
    for a in against {
        let dot: f64 = v.iter().zip(a).map(|(x, y)| x * y).sum();
        v.iter_mut().zip(a).for_each(|(x, y)| *x -= dot * y);
    }
}

fn power_iteration(m: &[f64], d: usize, start: &[f64], against: &[Vec<f64>]) -> (Vec<f64>, f64) {
    const MIN_ITERS: usize = 200;
    const MAX_ITERS: usize = 5000;
    let mut v = start.to_vec();
    orthogonalize(&mut v, against);
    normalize(&mut v);
    let mut lambda = 0.0;
    for it in 0..MAX_ITERS {
        let mut w: Vec<f64> = (0..d).map(|i| (0..d).map(|j| m[i * d + j] * v[j]).sum()).collect();
        orthogonalize(&mut w, against);
        let norm = normalize(&mut w);
        if norm <= 1e-14 {
            // remaining spectrum is numerically zero; any orthogonal direction will do
            let mut e = start.to_vec();
            orthogonalize(&mut e, against);
            normalize(&mut e);
            return (e, 0.0);
        }
        lambda = norm;
        let change = v.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = w;
        if it + 1 >= MIN_ITERS && change < 1e-10 {
            break;
        }
    }
    orthogonalize(&mut v, against);
    normalize(&mut v);
    (v, lambda)
}

fn canonical_sign(mut v: Vec<f64>) -> Vec<f64> {
    let k = v.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).map(|(i, _)| i).unwrap_or(0);
    if v[k] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub a: f64,
    pub b: f64,
    pub f_perf: f64,
}

/// `f_perf(center + a c1 + b c2)` on a `resolution x resolution` grid over
/// `[-half_width, half_width]^2`, rows ordered by `a` then `b`.
pub fn pca_sweep<T: Real>(
    model: &NasModel<T>,
    center: &[f64],
    components: &[Vec<f64>; 2],
    half_width: f64,
    resolution: usize,
) -> Result<Vec<SweepRow>> {
    if resolution < 2 {
        return Err(Error::Config("sweep resolution must be at least 2".into()));
    }
    let step = 2.0 * half_width / (resolution - 1) as f64;
    let mut rows = Vec::with_capacity(resolution * resolution);
    for i in 0..resolution {
        let a = -half_width + step * i as f64;
        for j in 0..resolution {
            let b = -half_width + step * j as f64;
            let s: Vec<T> = center
                .iter()
                .zip(&components[0])
                .zip(&components[1])
                .map(|((&c, &u), &w)| T::lit(c + a * u + b * w))
                .collect();
            let (y, _) = model.predict(&s)?;
            rows.push(SweepRow { a, b, f_perf: y.as_f64() });
        }
    }
    Ok(rows)
}

/// Fits the components on the posterior means of `archs` and sweeps around
/// their centroid.
pub fn latent_sweep<T: Real>(
    model: &NasModel<T>,
    archs: &[Architecture],
    half_width: f64,
    resolution: usize,
) -> Result<Vec<SweepRow>> {
    let codes = archs
        .iter()
        .map(|a| Ok(model.posterior(a)?.mu.iter().map(|x| x.as_f64()).collect()))
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let comps = top2_principal_components(&codes)?;
    let d = model.latent_dim();
    let n = codes.len() as f64;
    let center: Vec<f64> = (0..d).map(|j| codes.iter().map(|c| c[j]).sum::<f64>() / n).collect();
    pca_sweep(model, &center, &comps, half_width, resolution)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("a,b,f_perf\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.a, r.b, r.f_perf));
    }
    out
}

/// 99th percentile of `|f_perf|` differences between horizontally and
/// vertically adjacent grid cells.
pub fn adjacent_difference_p99(rows: &[SweepRow], resolution: usize) -> f64 {
    let at = |i: usize, j: usize| rows[i * resolution + j].f_perf;
    let mut diffs = Vec::new();
    for i in 0..resolution {
        for j in 0..resolution {
            if i + 1 < resolution {
                diffs.push((at(i + 1, j) - at(i, j)).abs());
            }
            if j + 1 < resolution {
                diffs.push((at(i, j + 1) - at(i, j)).abs());
            }
        }
    }
    percentile(&mut diffs, 0.99)
}

/// Nearest-rank percentile; sorts in place.
pub fn percentile(values: &mut [f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let rank = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len());
    values[rank - 1]
}
