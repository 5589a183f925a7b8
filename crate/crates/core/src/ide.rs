//! Differential evolution over a compressed integer space, with stagnation
//! reinitialization (IDE) or without it (plain DE).
//!
//! Each generation builds all `N` trial vectors from the current population
//! (DE/rand/1 mutation, binomial crossover, rescale), scores them as one
//! batch, applies greedy selection, and finally resamples every individual
//! that has survived unchanged for `stagnation_limit` generations.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, EvalError, Result};
use crate::fitness::{Evaluator, EvaluatorDescriptor, FitnessValue};
use crate::space::{CompressedSpace, StructureVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Ide,
    De,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Ide => "ide",
            Mode::De => "de",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ide" => Ok(Mode::Ide),
            "de" => Ok(Mode::De),
            _ => Err(Error::Config(format!("unknown mode `{s}` (ide|de)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdeConfig {
    pub population_size: usize,
    pub iterations: usize,
    pub differential_weight: f64,
    pub crossover_prob: f64,
    pub stagnation_limit: u32,
    pub seed: u64,
    pub mode: Mode,
    /// Canonical DE's guaranteed mutant gene (`j_rand`); off by default.
    pub force_mutant_gene: bool,
}

impl Default for IdeConfig {
    fn default() -> Self {
        Self {
            population_size: 10,
            iterations: 100,
            differential_weight: 0.5,
            crossover_prob: 0.8,
            stagnation_limit: 4,
            seed: 0,
            mode: Mode::Ide,
            force_mutant_gene: false,
        }
    }
}

impl IdeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 4 {
            return Err(Error::Config(format!(
                "population size {} is below 4; mutation needs three other members",
                self.population_size
            )));
        }
        if !(0.0..=2.0).contains(&self.differential_weight) {
            return Err(Error::Config(format!(
                "differential weight {} outside [0, 2]",
                self.differential_weight
            )));
        }
        if !(0.0..=1.0).contains(&self.crossover_prob) {
            return Err(Error::Config(format!(
                "crossover probability {} outside [0, 1]",
                self.crossover_prob
            )));
        }
        if self.stagnation_limit == 0 {
            return Err(Error::Config("stagnation limit must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub vector: StructureVector,
    pub fitness: Option<FitnessValue>,
    /// Consecutive generations this individual survived selection unchanged.
    pub stagnation: u32,
}

impl Individual {
    pub fn new(vector: StructureVector) -> Self {
        Self {
            vector,
            fitness: None,
            stagnation: 0,
        }
    }

    fn scored(vector: StructureVector, fitness: FitnessValue) -> Self {
        Self {
            vector,
            fitness: Some(fitness),
            stagnation: 0,
        }
    }

    fn fitness_or_err(&self) -> Result<FitnessValue> {
        self.fitness
            .ok_or_else(|| Error::Config(format!("individual {} was never evaluated", self.vector)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub individuals: Vec<Individual>,
    pub generation: usize,
}

impl Population {
    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    /// Highest-fitness evaluated member; the first one wins ties.
    pub fn best(&self) -> Option<&Individual> {
        self.individuals
            .iter()
            .filter(|i| i.fitness.is_some())
            .fold(None, |best: Option<&Individual>, i| match best {
                Some(b) if b.fitness >= i.fitness => Some(b),
                _ => Some(i),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub generation: usize,
    pub best_fitness: FitnessValue,
    pub best_vector: StructureVector,
    pub evaluations: u64,
    pub reinitializations: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchHistory {
    pub records: Vec<HistoryRecord>,
}

impl SearchHistory {
    /// First generation whose best-so-far reaches `target`.
    pub fn first_hit(&self, target: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.best_fitness.value() >= target)
            .map(|r| r.generation)
    }

    pub fn last(&self) -> Option<&HistoryRecord> {
        self.records.last()
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    /// Best individual ever evaluated (may have been evicted from the population).
    pub best: Individual,
    pub history: SearchHistory,
    pub final_population: Population,
}

/// A failed run together with the history recorded before the failure.
#[derive(Debug)]
pub struct Aborted {
    pub error: Error,
    pub history: SearchHistory,
}

impl fmt::Display for Aborted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (after {} recorded generations)",
            self.error,
            self.history.records.len()
        )
    }
}

impl std::error::Error for Aborted {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Aborted> for Error {
    fn from(a: Aborted) -> Self {
        a.error
    }
}

/// `N` independent uniform samples, each rescaled to feasibility, then scored.
pub fn initialize<E, R>(
    space: &CompressedSpace,
    evaluator: &mut E,
    config: &IdeConfig,
    rng: &mut R,
) -> Result<Population>
where
    E: Evaluator + ?Sized,
    R: Rng + ?Sized,
{
    let vectors = (0..config.population_size)
        .map(|_| {
            let raw = space.sample_uniform(rng);
            space.rescale(&raw, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let scores = evaluator.evaluate_batch(&vectors)?;
    Ok(Population {
        individuals: vectors
            .into_iter()
            .zip(scores)
            .map(|(v, f)| Individual::scored(v, f))
            .collect(),
        generation: 0,
    })
}

/// `x_p + F (x_q - x_r)` in real arithmetic, truncated toward zero.
pub fn de_mutant(
    xp: &StructureVector,
    xq: &StructureVector,
    xr: &StructureVector,
    weight: f64,
) -> StructureVector {
    StructureVector(
        xp.0.iter()
            .zip(&xq.0)
            .zip(&xr.0)
            .map(|((&p, &q), &r)| (p as f64 + weight * (q - r) as f64).trunc() as i64)
            .collect(),
    )
}

/// Three distinct indices in `0..n`, none equal to `exclude`.
fn pick_parents<R: Rng + ?Sized>(rng: &mut R, n: usize, exclude: usize) -> [usize; 3] {
    let picked = index::sample(rng, n - 1, 3);
    let shift = |i: usize| if i >= exclude { i + 1 } else { i };
    [
        shift(picked.index(0)),
        shift(picked.index(1)),
        shift(picked.index(2)),
    ]
}

/// DE/rand/1 mutant for individual `n`, rescaled into the feasible space.
pub fn mutate<R: Rng + ?Sized>(
    population: &Population,
    n: usize,
    config: &IdeConfig,
    space: &CompressedSpace,
    rng: &mut R,
) -> Result<StructureVector> {
    let size = population.len();
    if size < 4 {
        return Err(Error::Config(format!(
            "mutation needs at least 4 individuals, population has {size}"
        )));
    }
    let [p, q, r] = pick_parents(rng, size, n);
    let ind = &population.individuals;
    let raw = de_mutant(
        &ind[p].vector,
        &ind[q].vector,
        &ind[r].vector,
        config.differential_weight,
    );
    space.rescale(&raw, rng)
}

/// Binomial crossover: each gene comes from the mutant with probability `CR`.
pub fn crossover<R: Rng + ?Sized>(
    target: &StructureVector,
    mutant: &StructureVector,
    config: &IdeConfig,
    rng: &mut R,
) -> StructureVector {
    let forced = config
        .force_mutant_gene
        .then(|| rng.gen_range(0..target.len()));
    StructureVector(
        target
            .0
            .iter()
            .zip(&mutant.0)
            .enumerate()
            .map(|(j, (&t, &m))| {
                if rng.gen::<f64>() < config.crossover_prob || forced == Some(j) {
                    m
                } else {
                    t
                }
            })
            .collect(),
    )
}

/// Greedy replacement given an already-scored candidate.
pub fn select_scored(
    target: &Individual,
    candidate: StructureVector,
    fitness: FitnessValue,
) -> Result<Individual> {
    if fitness > target.fitness_or_err()? {
        Ok(Individual::scored(candidate, fitness))
    } else {
        let mut kept = target.clone();
        kept.stagnation += 1;
        Ok(kept)
    }
}

/// Scores `candidate` and keeps it only if strictly fitter than `target`.
pub fn select<E: Evaluator + ?Sized>(
    target: &Individual,
    candidate: StructureVector,
    evaluator: &mut E,
) -> Result<Individual> {
    let fitness = evaluator.evaluate(&candidate)?;
    select_scored(target, candidate, fitness)
}

/// Resamples every individual stagnant for at least `stagnation_limit`
/// generations. No-op in DE mode. Returns the fresh individuals' indices.
pub fn reinitialize_stagnant<E, R>(
    population: &mut Population,
    space: &CompressedSpace,
    evaluator: &mut E,
    config: &IdeConfig,
    rng: &mut R,
) -> Result<Vec<usize>>
where
    E: Evaluator + ?Sized,
    R: Rng + ?Sized,
{
    if config.mode == Mode::De {
        return Ok(Vec::new());
    }
    let stale: Vec<usize> = population
        .individuals
        .iter()
        .enumerate()
        .filter(|(_, i)| i.stagnation >= config.stagnation_limit)
        .map(|(n, _)| n)
        .collect();
    if stale.is_empty() {
        return Ok(stale);
    }
    let fresh = stale
        .iter()
        .map(|_| {
            let raw = space.sample_uniform(rng);
            space.rescale(&raw, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let scores = evaluator.evaluate_batch(&fresh)?;
    for ((&n, v), f) in stale.iter().zip(fresh).zip(scores) {
        population.individuals[n] = Individual::scored(v, f);
    }
    Ok(stale)
}

/// Counts requests passed to the wrapped evaluator.
struct Counted<'a, E: ?Sized> {
    inner: &'a mut E,
    requests: u64,
}

impl<E: Evaluator + ?Sized> Evaluator for Counted<'_, E> {
    fn descriptor(&self) -> &EvaluatorDescriptor {
        self.inner.descriptor()
    }

    fn evaluate(&mut self, s: &StructureVector) -> std::result::Result<FitnessValue, EvalError> {
        self.requests += 1;
        self.inner.evaluate(s)
    }

    fn evaluate_batch(
        &mut self,
        batch: &[StructureVector],
    ) -> std::result::Result<Vec<FitnessValue>, EvalError> {
        self.requests += batch.len() as u64;
        self.inner.evaluate_batch(batch)
    }
}

fn offer(best: &mut Option<Individual>, candidate: &Individual) {
    let better = match best {
        None => true,
        Some(b) => candidate.fitness > b.fitness,
    };
    if better {
        *best = Some(Individual {
            stagnation: 0,
            ..candidate.clone()
        });
    }
}

/// Full search: initialization, then `iterations` generations.
pub fn run<E: Evaluator + ?Sized>(
    space: &CompressedSpace,
    evaluator: &mut E,
    config: &IdeConfig,
) -> std::result::Result<SearchOutcome, Aborted> {
    let mut history = SearchHistory::default();
    match run_inner(space, evaluator, config, &mut history) {
        Ok((best, final_population)) => Ok(SearchOutcome {
            best,
            history,
            final_population,
        }),
        Err(error) => Err(Aborted { error, history }),
    }
}

fn run_inner<E: Evaluator + ?Sized>(
    space: &CompressedSpace,
    evaluator: &mut E,
    config: &IdeConfig,
    history: &mut SearchHistory,
) -> Result<(Individual, Population)> {
    config.validate()?;
    let expected = evaluator.descriptor().expected_vector_length;
    if expected != space.dim() {
        return Err(EvalError::LengthMismatch {
            expected: space.dim(),
            got: expected,
        }
        .into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut eval = Counted {
        inner: evaluator,
        requests: 0,
    };
    let mut reinits = 0u64;
    let mut best: Option<Individual> = None;

    let mut pop = initialize(space, &mut eval, config, &mut rng)?;
    for ind in &pop.individuals {
        offer(&mut best, ind);
    }
    let record = |pop: &Population, best: &Option<Individual>, evals, reinits| {
        let b = best.as_ref().expect("population is non-empty");
        HistoryRecord {
            generation: pop.generation,
            best_fitness: b.fitness.expect("best is scored"),
            best_vector: b.vector.clone(),
            evaluations: evals,
            reinitializations: reinits,
        }
    };
    history
        .records
        .push(record(&pop, &best, eval.requests, reinits));

    for t in 1..=config.iterations {
        let mut trials = Vec::with_capacity(pop.len());
        for n in 0..pop.len() {
            let mutant = mutate(&pop, n, config, space, &mut rng)?;
            let mixed = crossover(&pop.individuals[n].vector, &mutant, config, &mut rng);
            trials.push(space.rescale(&mixed, &mut rng)?);
        }
        let scores = eval.evaluate_batch(&trials)?;
        for (n, (trial, f)) in trials.into_iter().zip(scores).enumerate() {
            let next = select_scored(&pop.individuals[n], trial, f)?;
            offer(&mut best, &next);
            pop.individuals[n] = next;
        }
        let fresh = reinitialize_stagnant(&mut pop, space, &mut eval, config, &mut rng)?;
        reinits += fresh.len() as u64;
        for &n in &fresh {
            offer(&mut best, &pop.individuals[n]);
        }
        pop.generation = t;
        history
            .records
            .push(record(&pop, &best, eval.requests, reinits));
    }

    Ok((best.expect("population is non-empty"), pop))
}
