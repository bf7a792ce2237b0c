//! Gradient ascent on the predictor surface and decoding of the optimized
//! codes into architectures.

use std::collections::HashSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::Architecture;
use crate::encoder::standard_normal;
use crate::error::{Error, Result};
use crate::model::NasModel;
use crate::oracle::OracleConfig;
use crate::scalar::Real;
use crate::seeding::{stream, tags};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    /// `k` stochastic decodes, keeping the one with the best predicted f.
    Stochastic(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub step_size: f64,
    pub iterations: usize,
    pub restarts: usize,
    pub decode: DecodeMode,
    /// Weight `w` in `f = f_perf - w * f_comp`.
    pub complexity_weight: f64,
    pub seed: u64,
    pub serial: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            step_size: 0.01,
            iterations: 100,
            restarts: 10,
            decode: DecodeMode::Greedy,
            complexity_weight: 1.0,
            seed: 0,
            serial: true,
        }
    }
}

impl SearchConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::Config(format!("step size must be positive, got {}", self.step_size)));
        }
        if self.iterations == 0 || self.restarts == 0 {
            return Err(Error::Config("iterations and restarts must be at least 1".into()));
        }
        if self.decode == DecodeMode::Stochastic(0) {
            return Err(Error::Config("stochastic decoding needs at least one sample".into()));
        }
        if !self.complexity_weight.is_finite() {
            return Err(Error::Config("complexity weight must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleScore {
    pub perf: f64,
    pub comp: f64,
    /// `perf - comp`.
    pub merit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub architecture: Architecture,
    pub restart: usize,
    /// Predictions at the optimized code `s^L`.
    pub predicted_perf: f64,
    pub predicted_comp: f64,
    pub predicted_f: f64,
    /// Predictions at the posterior mean of the decoded architecture.
    pub reencoded_perf: f64,
    pub reencoded_comp: f64,
    pub reencoded_f: f64,
    /// `f(s^l)` for `l = 0..=L`.
    pub trajectory: Vec<f64>,
    pub oracle: Option<OracleScore>,
}

/// Ranked by predicted f (descending, ties by identity key), one entry per
/// distinct architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub config: SearchConfig,
    pub hits: Vec<SearchHit>,
    /// Trajectories of every restart, including those whose architecture
    /// was a duplicate.
    pub trajectories: Vec<Vec<f64>>,
}

impl SearchResult {
    pub fn best(&self) -> Option<&SearchHit> {
        self.hits.first()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("search result serializes")
    }

    /// CSV with header `restart,step,f`.
    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from("restart,step,f\n");
        for (r, traj) in self.trajectories.iter().enumerate() {
            for (l, f) in traj.iter().enumerate() {
                let _ = writeln!(out, "{r},{l},{f}");
            }
        }
        out
    }
}

/// `L` steps of `s <- s + eta * grad f(s)`; returns the final code and
/// `f(s^l)` for `l = 0..=L`.
pub fn ascend<T: Real>(
    model: &NasModel<T>,
    s0: &[T],
    step_size: f64,
    iterations: usize,
    complexity_weight: f64,
) -> Result<(Vec<T>, Vec<f64>)> {
    let eta = T::lit(step_size);
    let mut s = s0.to_vec();
    let mut trajectory = Vec::with_capacity(iterations + 1);
    for _ in 0..iterations {
        let (f, g) = model.objective_with_grad(&s, complexity_weight)?;
        trajectory.push(f.as_f64());
        for (x, d) in s.iter_mut().zip(&g) {
            *x += eta * *d;
        }
    }
    trajectory.push(model.objective(&s, complexity_weight)?.as_f64());
    Ok((s, trajectory))
}

/// Predicted `(f_perf, f_comp, f)` at the posterior mean of `arch`.
pub fn predicted_scores<T: Real>(model: &NasModel<T>, arch: &Architecture, complexity_weight: f64) -> Result<(f64, f64, f64)> {
    let mu = model.posterior(arch)?.mu;
    let (y, z) = model.predict(&mu)?;
    let (y, z) = (y.as_f64(), z.as_f64());
    Ok((y, z, y - complexity_weight * z))
}

fn run_restart<T: Real>(
    model: &NasModel<T>,
    config: &SearchConfig,
    oracle: Option<&OracleConfig>,
    r: usize,
) -> Result<SearchHit> {
    let s0: Vec<T> = standard_normal(&mut stream(config.seed, tags::SEARCH, r as u64), model.latent_dim());
    let (s, trajectory) = ascend(model, &s0, config.step_size, config.iterations, config.complexity_weight)?;
    let candidates = match config.decode {
        DecodeMode::Greedy => vec![model.greedy_generate(&s)?],
        DecodeMode::Stochastic(k) => {
            let mut rng = stream(config.seed, tags::SEARCH_DECODE, r as u64);
            (0..k).map(|_| Ok(model.generate(&s, &mut rng)?.0)).collect::<Result<Vec<_>>>()?
        }
    };
    let mut best: Option<(Architecture, (f64, f64, f64))> = None;
    for arch in candidates {
        let scores = predicted_scores(model, &arch, config.complexity_weight)?;
        let better = match &best {
            None => true,
            Some((b, bs)) => scores.2 > bs.2 || (scores.2 == bs.2 && arch.identity_key() < b.identity_key()),
        };
        if better {
            best = Some((arch, scores));
        }
    }
    let (architecture, (py, pz, pf)) = best.expect("at least one candidate");
    let (code_y, code_z) = model.predict(&s)?;
    let oracle = match oracle {
        Some(o) => {
            let l = o.label(&architecture)?;
            Some(OracleScore { perf: l.perf, comp: l.comp, merit: l.perf - l.comp })
        }
        None => None,
    };
    Ok(SearchHit {
        architecture,
        restart: r,
        predicted_perf: code_y.as_f64(),
        predicted_comp: code_z.as_f64(),
        predicted_f: *trajectory.last().expect("trajectory is never empty"),
        reencoded_perf: py,
        reencoded_comp: pz,
        reencoded_f: pf,
        trajectory,
        oracle,
    })
}

/// Runs `R` independent restarts from the prior and returns the ranked,
/// deduplicated results. Passing an oracle attaches true labels.
pub fn search<T: Real>(model: &NasModel<T>, config: &SearchConfig, oracle: Option<&OracleConfig>) -> Result<SearchResult> {
    config.check()?;
    let restarts: Vec<usize> = (0..config.restarts).collect();
    let hits: Vec<SearchHit> = if config.serial {
        restarts.iter().map(|&r| run_restart(model, config, oracle, r)).collect::<Result<_>>()?
    } else {
        restarts.par_iter().map(|&r| run_restart(model, config, oracle, r)).collect::<Result<_>>()?
    };
    let trajectories = hits.iter().map(|h| h.trajectory.clone()).collect();
    let mut ranked: Vec<(String, SearchHit)> = hits.into_iter().map(|h| (h.architecture.identity_key(), h)).collect();
    ranked.sort_by(|a, b| b.1.predicted_f.total_cmp(&a.1.predicted_f).then_with(|| a.0.cmp(&b.0)).then(a.1.restart.cmp(&b.1.restart)));
    let mut seen = HashSet::new();
    let hits = ranked.into_iter().filter(|(k, _)| seen.insert(k.clone())).map(|(_, h)| h).collect();
    Ok(SearchResult { config: config.clone(), hits, trajectories })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn small() -> NasModel<f64> {
        NasModel::new(ModelConfig { hidden: 8, latent: 3, predictor_hidden: 8, max_nodes: 6 }, 4).unwrap()
    }

    #[test]
    fn zero_step_keeps_code() {
        let m = small();
        let s0 = vec![0.3, -1.2, 0.7];
        let (s, traj) = ascend(&m, &s0, 0.0, 5, 1.0).unwrap();
        assert_eq!(s, s0);
        assert_eq!(traj.len(), 6);
        assert!(traj.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn zero_predictors_give_flat_trajectory() {
        let mut m = small();
        for id in m.params.ids().collect::<Vec<_>>() {
            if m.params.name(id).starts_with("predictor.") {
                m.params.value_mut(id).fill(0.0);
            }
        }
        let s0 = vec![1.0, 2.0, -0.5];
        let (s, traj) = ascend(&m, &s0, 0.01, 10, 1.0).unwrap();
        assert_eq!(s, s0);
        assert_eq!(traj, vec![0.0; 11]);
    }

    #[test]
    fn deduplicated_sorted_and_valid() {
        let m = small();
        let cfg = SearchConfig { restarts: 6, iterations: 5, ..SearchConfig::default() };
        let res = search(&m, &cfg, Some(&OracleConfig::default())).unwrap();
        assert!(!res.hits.is_empty() && res.hits.len() <= 6);
        assert_eq!(res.trajectories.len(), 6);
        let keys: HashSet<_> = res.hits.iter().map(|h| h.architecture.identity_key()).collect();
        assert_eq!(keys.len(), res.hits.len());
        assert!(res.hits.windows(2).all(|w| w[0].predicted_f >= w[1].predicted_f));
        assert!(res.hits.iter().all(|h| h.architecture.is_valid(6) && h.oracle.is_some()));
    }

    #[test]
    fn deterministic_and_parallel_agrees() {
        let m = small();
        let cfg = SearchConfig { restarts: 3, iterations: 4, decode: DecodeMode::Stochastic(3), ..SearchConfig::default() };
        let a = search(&m, &cfg, None).unwrap();
        let b = search(&m, &cfg, None).unwrap();
        let c = search(&m, &SearchConfig { serial: false, ..cfg }, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hits, c.hits);
    }

    #[test]
    fn rejects_bad_config() {
        let m = small();
        for cfg in [
            SearchConfig { step_size: 0.0, ..SearchConfig::default() },
            SearchConfig { iterations: 0, ..SearchConfig::default() },
            SearchConfig { restarts: 0, ..SearchConfig::default() },
            SearchConfig { decode: DecodeMode::Stochastic(0), ..SearchConfig::default() },
        ] {
            assert!(search(&m, &cfg, None).is_err());
        }
    }
}
