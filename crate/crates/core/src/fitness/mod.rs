//! Fitness evaluators. Every score is "higher is better".

pub mod remote;

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::arch::ArchitectureSpec;
use crate::error::EvalError;
use crate::space::{CompressedSpace, IntegerBox, StructureVector};

pub use remote::{RemoteEvaluator, RemoteOptions};

/// A finite fitness score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct FitnessValue(f64);

impl FitnessValue {
    pub fn new(value: f64) -> Result<Self, EvalError> {
        if value.is_finite() {
            // collapse -0.0 so equal scores print identically
            Ok(Self(value + 0.0))
        } else {
            Err(EvalError::NonFinite(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for FitnessValue {
    type Error = EvalError;

    fn try_from(v: f64) -> Result<Self, EvalError> {
        Self::new(v)
    }
}

impl From<FitnessValue> for f64 {
    fn from(v: FitnessValue) -> f64 {
        v.0
    }
}

impl Eq for FitnessValue {}

impl PartialOrd for FitnessValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for FitnessValue {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for FitnessValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// What an evaluator declares about itself; also the remote handshake payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorDescriptor {
    pub name: String,
    pub deterministic: bool,
    pub concurrent_safe: bool,
    pub expected_vector_length: usize,
    pub value_range: (f64, f64),
}

pub trait Evaluator {
    fn descriptor(&self) -> &EvaluatorDescriptor;

    fn evaluate(&mut self, s: &StructureVector) -> Result<FitnessValue, EvalError>;

    /// Scores a batch. Results are positionally aligned with `batch`.
    fn evaluate_batch(
        &mut self,
        batch: &[StructureVector],
    ) -> Result<Vec<FitnessValue>, EvalError> {
        batch.iter().map(|s| self.evaluate(s)).collect()
    }
}

impl<E: Evaluator + ?Sized> Evaluator for &mut E {
    fn descriptor(&self) -> &EvaluatorDescriptor {
        (**self).descriptor()
    }

    fn evaluate(&mut self, s: &StructureVector) -> Result<FitnessValue, EvalError> {
        (**self).evaluate(s)
    }

    fn evaluate_batch(
        &mut self,
        batch: &[StructureVector],
    ) -> Result<Vec<FitnessValue>, EvalError> {
        (**self).evaluate_batch(batch)
    }
}

impl<E: Evaluator + ?Sized> Evaluator for Box<E> {
    fn descriptor(&self) -> &EvaluatorDescriptor {
        (**self).descriptor()
    }

    fn evaluate(&mut self, s: &StructureVector) -> Result<FitnessValue, EvalError> {
        (**self).evaluate(s)
    }

    fn evaluate_batch(
        &mut self,
        batch: &[StructureVector],
    ) -> Result<Vec<FitnessValue>, EvalError> {
        (**self).evaluate_batch(batch)
    }
}

fn check_len(d: &EvaluatorDescriptor, s: &StructureVector) -> Result<(), EvalError> {
    if s.len() != d.expected_vector_length {
        return Err(EvalError::LengthMismatch {
            expected: d.expected_vector_length,
            got: s.len(),
        });
    }
    Ok(())
}

pub const SPHERE_DIMS: usize = 30;
pub const SPHERE_LO: i64 = -9;
pub const SPHERE_HI: i64 = 9;
pub const SPHERE_CENTER: i64 = 5;

/// Negated Euclidean distance to the all-fives vector over the integer box `[-9, 9]^d`.
#[derive(Debug, Clone)]
pub struct SphereEvaluator {
    descriptor: EvaluatorDescriptor,
}

impl SphereEvaluator {
    pub fn new() -> Self {
        Self::with_dims(SPHERE_DIMS)
    }

    pub fn with_dims(dims: usize) -> Self {
        let worst = ((SPHERE_CENTER - SPHERE_LO) as f64) * (dims as f64).sqrt();
        Self {
            descriptor: EvaluatorDescriptor {
                name: "sphere".into(),
                deterministic: true,
                concurrent_safe: true,
                expected_vector_length: dims,
                value_range: (-worst, 0.0),
            },
        }
    }

    /// The matching search box.
    pub fn space(&self) -> CompressedSpace {
        let dims = self.descriptor.expected_vector_length;
        CompressedSpace::from_box(
            IntegerBox::uniform(dims, SPHERE_LO, SPHERE_HI, 1).expect("non-empty box"),
        )
    }
}

impl Default for SphereEvaluator {
    fn default() -> Self {
        Self::new()
    }
}

impl Evaluator for SphereEvaluator {
    fn descriptor(&self) -> &EvaluatorDescriptor {
        &self.descriptor
    }

    fn evaluate(&mut self, s: &StructureVector) -> Result<FitnessValue, EvalError> {
        sphere_fitness(s, self.descriptor.expected_vector_length)
    }
}

/// `-||x - 5||_2` for an integer vector of length `dims` inside `[-9, 9]`.
pub fn sphere_fitness(x: &StructureVector, dims: usize) -> Result<FitnessValue, EvalError> {
    if x.len() != dims {
        return Err(EvalError::LengthMismatch {
            expected: dims,
            got: x.len(),
        });
    }
    if let Some(v) = x.0.iter().find(|v| !(SPHERE_LO..=SPHERE_HI).contains(*v)) {
        return Err(EvalError::Rejected(format!(
            "entry {v} outside [{SPHERE_LO}, {SPHERE_HI}]"
        )));
    }
    let sq: i64 = x.0.iter().map(|&v| (v - SPHERE_CENTER).pow(2)).sum();
    FitnessValue::new(-(sq as f64).sqrt())
}

/// Deterministic accuracy stand-in: `sum_i w_i (1 - exp(-3 s_i / c_i))`,
/// with `w_i` the variable's share of the base FLOPs.
#[derive(Debug, Clone)]
pub struct SurrogateEvaluator {
    spec: Arc<ArchitectureSpec>,
    weights: Vec<f64>,
    descriptor: EvaluatorDescriptor,
}

impl SurrogateEvaluator {
    pub fn new(spec: Arc<ArchitectureSpec>) -> Self {
        let weights = spec.flops_shares();
        let descriptor = EvaluatorDescriptor {
            name: format!("surrogate:{}", spec.name()),
            deterministic: true,
            concurrent_safe: true,
            expected_vector_length: spec.num_variables(),
            value_range: (0.0, 1.0),
        };
        Self {
            spec,
            weights,
            descriptor,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl Evaluator for SurrogateEvaluator {
    fn descriptor(&self) -> &EvaluatorDescriptor {
        &self.descriptor
    }

    fn evaluate(&mut self, s: &StructureVector) -> Result<FitnessValue, EvalError> {
        surrogate_fitness(&self.spec, &self.weights, s)
    }
}

pub fn surrogate_fitness(
    spec: &ArchitectureSpec,
    weights: &[f64],
    s: &StructureVector,
) -> Result<FitnessValue, EvalError> {
    spec.compute_cost(s)
        .map_err(|e| EvalError::Rejected(e.to_string()))?;
    let value =
        s.0.iter()
            .zip(&spec.base_structure().0)
            .zip(weights)
            .map(|((&si, &ci), &w)| w * (1.0 - (-3.0 * si as f64 / ci as f64).exp()))
            .sum();
    FitnessValue::new(value)
}

/// `-sum |s_i|`; the loopback function used to check the remote transport.
#[derive(Debug, Clone)]
pub struct NegL1Evaluator {
    descriptor: EvaluatorDescriptor,
}

impl NegL1Evaluator {
    pub fn new(dims: usize) -> Self {
        Self {
            descriptor: EvaluatorDescriptor {
                name: "neg-l1".into(),
                deterministic: true,
                concurrent_safe: true,
                expected_vector_length: dims,
                value_range: (f64::MIN, 0.0),
            },
        }
    }
}

impl Evaluator for NegL1Evaluator {
    fn descriptor(&self) -> &EvaluatorDescriptor {
        &self.descriptor
    }

    fn evaluate(&mut self, s: &StructureVector) -> Result<FitnessValue, EvalError> {
        check_len(&self.descriptor, s)?;
        FitnessValue::new(-(s.0.iter().map(|v| v.abs()).sum::<i64>() as f64))
    }
}

/// Memoizes a deterministic evaluator by vector content.
#[derive(Debug)]
pub struct Cached<E> {
    inner: E,
    memo: HashMap<StructureVector, FitnessValue>,
    requests: u64,
    hits: u64,
}

impl<E: Evaluator> Cached<E> {
    pub fn new(inner: E) -> Result<Self, EvalError> {
        if !inner.descriptor().deterministic {
            return Err(EvalError::NonDeterministic(inner.descriptor().name.clone()));
        }
        Ok(Self {
            inner,
            memo: HashMap::new(),
            requests: 0,
            hits: 0,
        })
    }

    pub fn requests(&self) -> u64 {
        self.requests
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    /// Evaluations forwarded to the wrapped evaluator.
    pub fn inner_evaluations(&self) -> u64 {
        self.requests - self.hits
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn into_inner(self) -> E {
        self.inner
    }
}

impl<E: Evaluator> Evaluator for Cached<E> {
    fn descriptor(&self) -> &EvaluatorDescriptor {
        self.inner.descriptor()
    }

    fn evaluate(&mut self, s: &StructureVector) -> Result<FitnessValue, EvalError> {
        self.requests += 1;
        if let Some(&f) = self.memo.get(s) {
            self.hits += 1;
            return Ok(f);
        }
        let f = self.inner.evaluate(s)?;
        self.memo.insert(s.clone(), f);
        Ok(f)
    }

    fn evaluate_batch(
        &mut self,
        batch: &[StructureVector],
    ) -> Result<Vec<FitnessValue>, EvalError> {
        let mut misses: Vec<StructureVector> = Vec::new();
        for s in batch {
            if !self.memo.contains_key(s) && !misses.contains(s) {
                misses.push(s.clone());
            }
        }
        if !misses.is_empty() {
            let scores = self.inner.evaluate_batch(&misses)?;
            for (s, f) in misses.iter().zip(scores) {
                self.memo.insert(s.clone(), f);
            }
        }
        self.requests += batch.len() as u64;
        self.hits += (batch.len() - misses.len()) as u64;
        Ok(batch.iter().map(|s| self.memo[s]).collect())
    }
}
