//! Compressed integer search spaces and the rescaling repair.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_bigint::BigUint;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{ArchitectureSpec, SparsityTargets};
use crate::error::{Error, Result};

/// Integer channel configuration, one entry per search variable.
///
/// Vectors produced by mutation may hold any integer (including negatives);
/// only vectors returned by [`CompressedSpace::snap_and_clamp`],
/// [`CompressedSpace::rescale`] or sampling are guaranteed admissible.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StructureVector(pub Vec<i64>);

impl StructureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[i64] {
        &self.0
    }
}

impl From<Vec<i64>> for StructureVector {
    fn from(v: Vec<i64>) -> Self {
        Self(v)
    }
}

impl fmt::Display for StructureVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl FromStr for StructureVector {
    type Err = Error;

    /// Parses `"c1,c2,..."`, tolerating whitespace and enclosing brackets.
    fn from_str(s: &str) -> Result<Self> {
        let body = s.trim().trim_start_matches('[').trim_end_matches(']');
        body.split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<i64>()
                    .map_err(|e| Error::Config(format!("bad structure entry `{t}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(StructureVector)
    }
}

/// Per-variable pruning granularity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StepVector(Vec<i64>);

impl StepVector {
    pub fn new(steps: Vec<i64>, base: &StructureVector) -> Result<Self> {
        if steps.len() != base.len() {
            return Err(Error::InvalidSteps(format!(
                "{} steps for {} variables",
                steps.len(),
                base.len()
            )));
        }
        for (i, (&e, &c)) in steps.iter().zip(&base.0).enumerate() {
            if e < 1 || e > c {
                return Err(Error::InvalidSteps(format!(
                    "step {e} at index {i} is outside 1..={c}"
                )));
            }
        }
        Ok(Self(steps))
    }

    /// `e_i = max(1, c_i / 8)`.
    pub fn eighth(base: &StructureVector) -> Self {
        Self(base.0.iter().map(|&c| (c / 8).max(1)).collect())
    }

    /// The same step `k` for every variable.
    pub fn uniform(k: i64, base: &StructureVector) -> Result<Self> {
        Self::new(vec![k; base.len()], base)
    }

    pub fn as_slice(&self) -> &[i64] {
        &self.0
    }
}

/// One dimension of an [`IntegerBox`]: the values `lo, lo+step, ...` not above `hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dim {
    pub lo: i64,
    pub hi: i64,
    pub step: i64,
}

impl Dim {
    pub fn new(lo: i64, hi: i64, step: i64) -> Result<Self> {
        if step < 1 || lo > hi {
            return Err(Error::Config(format!(
                "empty dimension lo={lo} hi={hi} step={step}"
            )));
        }
        Ok(Self { lo, hi, step })
    }

    /// Number of admissible values.
    pub fn count(&self) -> u64 {
        ((self.hi - self.lo) / self.step + 1) as u64
    }

    /// Largest admissible value.
    pub fn top(&self) -> i64 {
        self.lo + (self.hi - self.lo) / self.step * self.step
    }

    pub fn contains(&self, v: i64) -> bool {
        v >= self.lo && v <= self.hi && (v - self.lo) % self.step == 0
    }

    /// Floors onto the step lattice, then clamps into `[lo, top]`.
    pub fn snap(&self, v: i64) -> i64 {
        let snapped = self.lo + (v - self.lo).div_euclid(self.step) * self.step;
        snapped.clamp(self.lo, self.top())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegerBox {
    dims: Vec<Dim>,
}

impl IntegerBox {
    pub fn new(dims: Vec<Dim>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Config("search space has no dimensions".into()));
        }
        Ok(Self { dims })
    }

    /// `dims` copies of the same range.
    pub fn uniform(dims: usize, lo: i64, hi: i64, step: i64) -> Result<Self> {
        Self::new(vec![Dim::new(lo, hi, step)?; dims])
    }

    pub fn dims(&self) -> &[Dim] {
        &self.dims
    }
}

/// Architecture plus targets a rescaled vector must satisfy.
#[derive(Debug, Clone)]
pub struct SparsityConstraint {
    pub spec: Arc<ArchitectureSpec>,
    pub targets: SparsityTargets,
}

impl SparsityConstraint {
    pub fn rates(&self, s: &StructureVector) -> Result<(f64, f64)> {
        self.spec.pruning_rates(s)
    }

    pub fn is_met(&self, s: &StructureVector) -> Result<bool> {
        self.spec.is_feasible(s, &self.targets)
    }
}

/// The compressed domain searched by the optimizer, optionally linked to
/// sparsity constraints.
#[derive(Debug, Clone)]
pub struct CompressedSpace {
    bounds: IntegerBox,
    constraint: Option<SparsityConstraint>,
}

impl CompressedSpace {
    /// Pruning space `{e_i, 2e_i, ..., floor(c_i/e_i)e_i}` per variable, unconstrained.
    pub fn build(base: &StructureVector, steps: &StepVector) -> Result<Self> {
        let steps = StepVector::new(steps.0.clone(), base)?;
        let dims = base
            .0
            .iter()
            .zip(&steps.0)
            .map(|(&c, &e)| Dim::new(e, c, e))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            bounds: IntegerBox::new(dims)?,
            constraint: None,
        })
    }

    /// Pruning space over an architecture's base structure with sparsity targets attached.
    pub fn for_architecture(
        spec: Arc<ArchitectureSpec>,
        steps: &StepVector,
        targets: SparsityTargets,
    ) -> Result<Self> {
        let mut space = Self::build(spec.base_structure(), steps)?;
        space.constraint = Some(SparsityConstraint { spec, targets });
        Ok(space)
    }

    pub fn from_box(bounds: IntegerBox) -> Self {
        Self {
            bounds,
            constraint: None,
        }
    }

    pub fn bounds(&self) -> &IntegerBox {
        &self.bounds
    }

    pub fn constraint(&self) -> Option<&SparsityConstraint> {
        self.constraint.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.bounds.dims.len()
    }

    /// Exact number of admissible vectors.
    pub fn size(&self) -> BigUint {
        self.bounds
            .dims
            .iter()
            .fold(BigUint::from(1u32), |acc, d| acc * BigUint::from(d.count()))
    }

    /// The vector with every entry at its lower bound.
    pub fn minimum(&self) -> StructureVector {
        StructureVector(self.bounds.dims.iter().map(|d| d.lo).collect())
    }

    /// The vector with every entry at its largest admissible value.
    pub fn maximum(&self) -> StructureVector {
        StructureVector(self.bounds.dims.iter().map(|d| d.top()).collect())
    }

    /// Whether every entry lies on its dimension's lattice.
    pub fn contains(&self, v: &StructureVector) -> bool {
        v.len() == self.dim()
            && self
                .bounds
                .dims
                .iter()
                .zip(&v.0)
                .all(|(d, &x)| d.contains(x))
    }

    /// Whether `v` satisfies the attached sparsity targets (always true without any).
    pub fn is_feasible(&self, v: &StructureVector) -> Result<bool> {
        match &self.constraint {
            Some(c) => c.is_met(v),
            None => Ok(true),
        }
    }

    /// Independent uniform draw per dimension.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> StructureVector {
        StructureVector(
            self.bounds
                .dims
                .iter()
                .map(|d| d.lo + rng.gen_range(0..d.count() as i64) * d.step)
                .collect(),
        )
    }

    fn check_len(&self, v: &StructureVector) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::LengthMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Floor-snaps every entry to its step and clamps into bounds.
    pub fn snap_and_clamp(&self, v: &StructureVector) -> Result<StructureVector> {
        self.check_len(v)?;
        Ok(StructureVector(
            self.bounds
                .dims
                .iter()
                .zip(&v.0)
                .map(|(d, &x)| d.snap(x))
                .collect(),
        ))
    }

    /// Snap and clamp, then shrink randomly chosen entries one step at a time
    /// until the sparsity targets hold.
    pub fn rescale<R: Rng + ?Sized>(
        &self,
        v: &StructureVector,
        rng: &mut R,
    ) -> Result<StructureVector> {
        self.rescale_counted(v, rng).map(|(s, _)| s)
    }

    /// As [`rescale`](Self::rescale), also returning the number of repair iterations.
    pub fn rescale_counted<R: Rng + ?Sized>(
        &self,
        v: &StructureVector,
        rng: &mut R,
    ) -> Result<(StructureVector, usize)> {
        let mut out = self.snap_and_clamp(v)?;
        let Some(constraint) = &self.constraint else {
            return Ok((out, 0));
        };
        let dims = &self.bounds.dims;
        let mut iterations = 0;
        loop {
            let (r_f, r_p) = constraint.rates(&out)?;
            // Both targets must hold; the loop guard is a disjunction of failures.
            if constraint.targets.is_met(r_f, r_p) {
                return Ok((out, iterations));
            }
            if dims.iter().zip(&out.0).all(|(d, &x)| x <= d.lo) {
                return Err(Error::MinimumReached {
                    minimum: out.0,
                    r_f,
                    r_p,
                });
            }
            let idx = rng.gen_range(0..dims.len());
            if out.0[idx] > dims[idx].lo {
                out.0[idx] -= dims[idx].step;
            }
            iterations += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::bundled;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sv(v: &[i64]) -> StructureVector {
        StructureVector(v.to_vec())
    }

    fn space(c: &[i64], e: &[i64]) -> CompressedSpace {
        CompressedSpace::build(&sv(c), &StepVector::new(e.to_vec(), &sv(c)).unwrap()).unwrap()
    }

    #[test]
    fn build_and_size() {
        let s = space(&[64, 128], &[8, 16]);
        assert_eq!(s.size(), BigUint::from(64u32));
        assert_eq!(s.minimum(), sv(&[8, 16]));
        assert_eq!(s.maximum(), sv(&[64, 128]));
        assert_eq!(space(&[5], &[5]).size(), BigUint::from(1u32));
        assert_eq!(space(&[7, 9], &[7, 9]).size(), BigUint::from(1u32));
    }

    #[test]
    fn vgg16_eighth_steps_size() {
        let spec = ArchitectureSpec::parse(bundled("vgg16-cifar").unwrap()).unwrap();
        let steps = StepVector::eighth(spec.base_structure());
        assert_eq!(
            steps.as_slice(),
            &[8, 8, 16, 16, 32, 32, 32, 64, 64, 64, 64, 64, 64]
        );
        let s = CompressedSpace::build(spec.base_structure(), &steps).unwrap();
        assert_eq!(s.size(), BigUint::from(8u32).pow(13));
    }

    #[test]
    fn floor_steps_leave_gap_at_top() {
        // 20 / 8 -> {8, 16}
        let s = space(&[20], &[8]);
        assert_eq!(s.size(), BigUint::from(2u32));
        assert_eq!(s.maximum(), sv(&[16]));
        assert_eq!(s.snap_and_clamp(&sv(&[20])).unwrap(), sv(&[16]));
    }

    #[test]
    fn invalid_steps() {
        assert!(StepVector::new(vec![8], &sv(&[64, 128])).is_err());
        assert!(StepVector::new(vec![0, 16], &sv(&[64, 128])).is_err());
        assert!(StepVector::new(vec![8, 129], &sv(&[64, 128])).is_err());
        assert!(StepVector::uniform(8, &sv(&[4, 8])).is_err());
        assert_eq!(StepVector::eighth(&sv(&[4, 8])).as_slice(), &[1, 1]);
    }

    #[test]
    fn snap_examples() {
        let s = space(&[64, 128], &[8, 16]);
        assert_eq!(s.snap_and_clamp(&sv(&[13, 30])).unwrap(), sv(&[8, 16]));
        assert_eq!(s.snap_and_clamp(&sv(&[-5, 999])).unwrap(), sv(&[8, 128]));
        assert_eq!(s.snap_and_clamp(&sv(&[24, 64])).unwrap(), sv(&[24, 64]));
        assert!(matches!(
            s.snap_and_clamp(&sv(&[8])),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn generic_box_snap() {
        let s = CompressedSpace::from_box(IntegerBox::uniform(2, -9, 9, 1).unwrap());
        assert_eq!(s.snap_and_clamp(&sv(&[-20, 4])).unwrap(), sv(&[-9, 4]));
        assert_eq!(s.size(), BigUint::from(19u32 * 19));
        let odd = Dim::new(-3, 4, 3).unwrap(); // {-3, 0, 3}
        assert_eq!(odd.count(), 3);
        assert_eq!(odd.snap(-1), -3);
        assert_eq!(odd.snap(2), 0);
        assert_eq!(odd.snap(4), 3);
    }

    #[test]
    fn sample_single_point() {
        let s = space(&[5, 8], &[5, 8]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            assert_eq!(s.sample_uniform(&mut rng), sv(&[5, 8]));
        }
    }

    #[test]
    fn sample_marginals_uniform() {
        let s = space(&[16], &[8]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let eights = (0..n)
            .filter(|_| s.sample_uniform(&mut rng).0[0] == 8)
            .count();
        let freq = eights as f64 / n as f64;
        assert!((freq - 0.5).abs() <= 0.02, "{freq}");
    }

    #[test]
    fn sample_is_seed_deterministic() {
        let s = space(&[64, 128, 32], &[8, 16, 4]);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| s.sample_uniform(&mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(7), draw(7));
        assert_ne!(draw(7), draw(8));
    }

    fn t2_space(targets: SparsityTargets, steps: &[i64]) -> CompressedSpace {
        let spec = Arc::new(ArchitectureSpec::parse(bundled("t2").unwrap()).unwrap());
        let steps = StepVector::new(steps.to_vec(), spec.base_structure()).unwrap();
        CompressedSpace::for_architecture(spec, &steps, targets).unwrap()
    }

    #[test]
    fn rescale_feasible_input_needs_no_repair() {
        let s = t2_space(SparsityTargets::new(0.5, 0.0).unwrap(), &[1, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, iters) = s.rescale_counted(&sv(&[2, 8]), &mut rng).unwrap();
        assert_eq!((out, iters), (sv(&[2, 8]), 0));
    }

    #[test]
    fn rescale_repairs_t2() {
        let s = t2_space(SparsityTargets::new(0.5, 0.0).unwrap(), &[1, 1]);
        let spec = s.constraint().unwrap().spec.clone();
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = s.rescale(&sv(&[4, 8]), &mut rng).unwrap();
            assert!(s.contains(&out));
            let (rf, _) = spec.pruning_rates(&out).unwrap();
            assert!(rf >= 0.5, "{out} rf={rf}");
        }
    }

    #[test]
    fn rescale_minimum_reached() {
        let s = t2_space(SparsityTargets::new(0.999, 0.999).unwrap(), &[2, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        match s.rescale(&sv(&[4, 8]), &mut rng) {
            Err(Error::MinimumReached { minimum, r_f, .. }) => {
                assert_eq!(minimum, vec![2, 4]);
                assert!(r_f < 0.999);
            }
            other => panic!("expected MinimumReached, got {other:?}"),
        }
    }

    #[test]
    fn rescale_requires_both_targets() {
        // Under a literal conjunction guard, meeting only r_f would stop repair early.
        let text = r#"{"name":"lopsided","input_shape":[3,16,16],"layers":[
            {"id":"in","kind":"input"},
            {"id":"a","kind":"conv","kernel_h":3,"kernel_w":3,"base_out_channels":8},
            {"id":"fc","kind":"fc","base_out_channels":64,"searchable":true}]}"#;
        let spec = Arc::new(ArchitectureSpec::parse(text).unwrap());
        let steps = StepVector::new(vec![1, 1], spec.base_structure()).unwrap();
        let targets = SparsityTargets::new(0.3, 0.3).unwrap();
        let s = CompressedSpace::for_architecture(spec.clone(), &steps, targets).unwrap();
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = s.rescale(&sv(&[8, 64]), &mut rng).unwrap();
            assert!(spec.is_feasible(&out, &targets).unwrap(), "{out}");
        }
    }

    #[test]
    fn rescale_without_constraint_is_snap() {
        let s = space(&[64, 128], &[8, 16]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(s.rescale(&sv(&[13, 30]), &mut rng).unwrap(), sv(&[8, 16]));
    }

    #[test]
    fn structure_vector_text() {
        let v: StructureVector = "4, 8".parse().unwrap();
        assert_eq!(v, sv(&[4, 8]));
        assert_eq!(
            "[1,2,3]".parse::<StructureVector>().unwrap(),
            sv(&[1, 2, 3])
        );
        assert_eq!(sv(&[16, 32]).to_string(), "16,32");
        assert!("4,x".parse::<StructureVector>().is_err());
    }
}
