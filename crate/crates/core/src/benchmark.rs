//! Seed sweeps of DE and IDE on the 30-dimensional integer sphere problem.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fitness::SphereEvaluator;
use crate::ide::{self, IdeConfig, Mode, SearchHistory};

/// Fitness of the known optimum.
pub const OPTIMUM: f64 = 0.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub best_fitness: f64,
    /// Generation at which the optimum was first recorded.
    pub first_hit: Option<usize>,
    pub history: SearchHistory,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: Mode,
    pub iterations: usize,
    pub seeds: usize,
    pub successes: usize,
    /// Median first-hit generation across all seeds, with failures ranked
    /// last; `None` when fewer than half the seeds succeed.
    pub median_first_hit: Option<f64>,
    pub mean_best_fitness: f64,
    pub runs: Vec<SeedResult>,
}

/// Runs one mode over `seeds`, overriding `base.seed` and `base.mode`.
pub fn run_mode(mode: Mode, seeds: &[u64], base: &IdeConfig) -> Result<ModeSummary> {
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let config = IdeConfig {
            seed,
            mode,
            ..base.clone()
        };
        let mut eval = SphereEvaluator::new();
        let space = eval.space();
        let out = ide::run(&space, &mut eval, &config)?;
        runs.push(SeedResult {
            seed,
            best_fitness: out.best.fitness.expect("scored").value(),
            first_hit: out.history.first_hit(OPTIMUM),
            history: out.history,
        });
    }
    let hits: Vec<Option<usize>> = runs.iter().map(|r| r.first_hit).collect();
    Ok(ModeSummary {
        mode,
        iterations: base.iterations,
        seeds: seeds.len(),
        successes: hits.iter().filter(|h| h.is_some()).count(),
        median_first_hit: median_with_failures(&hits),
        mean_best_fitness: runs.iter().map(|r| r.best_fitness).sum::<f64>()
            / runs.len().max(1) as f64,
        runs,
    })
}

/// Median where `None` counts as +infinity.
pub fn median_with_failures(hits: &[Option<usize>]) -> Option<f64> {
    if hits.is_empty() {
        return None;
    }
    let mut ranked: Vec<f64> = hits
        .iter()
        .map(|h| h.map_or(f64::INFINITY, |g| g as f64))
        .collect();
    ranked.sort_by(f64::total_cmp);
    let n = ranked.len();
    let m = if n % 2 == 1 {
        ranked[n / 2]
    } else {
        (ranked[n / 2 - 1] + ranked[n / 2]) / 2.0
    };
    m.is_finite().then_some(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_rules() {
        assert_eq!(
            median_with_failures(&[Some(3), Some(1), Some(2)]),
            Some(2.0)
        );
        assert_eq!(median_with_failures(&[Some(3), Some(1)]), Some(2.0));
        assert_eq!(median_with_failures(&[Some(3), None, None]), None);
        assert_eq!(median_with_failures(&[Some(3), Some(5), None]), Some(5.0));
        assert_eq!(median_with_failures(&[]), None);
    }

    #[test]
    fn single_generation_claims_nothing() {
        let cfg = IdeConfig {
            iterations: 1,
            ..Default::default()
        };
        let s = run_mode(Mode::Ide, &[1, 2], &cfg).unwrap();
        assert_eq!(s.successes, 0);
        assert!(s.runs.iter().all(|r| r.history.records.len() == 2));
        assert!(s.mean_best_fitness < 0.0);
    }
}
