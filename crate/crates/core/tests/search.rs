use std::sync::Arc;

use chanprune::history::{write_history, RunMetadata};
use chanprune::ide::{self, IdeConfig, Mode};
use chanprune::{
    ArchitectureSpec, Cached, CompressedSpace, EvalError, Evaluator, EvaluatorDescriptor,
    FitnessValue, SparsityTargets, StepVector, StructureVector, SurrogateEvaluator,
};
use num_bigint::BigUint;
use proptest::prelude::*;

fn spec(name: &str) -> Arc<ArchitectureSpec> {
    Arc::new(ArchitectureSpec::load(name).unwrap())
}

fn vgg_space(rf: f64, rp: f64) -> (Arc<ArchitectureSpec>, CompressedSpace) {
    let spec = spec("vgg16-cifar");
    let steps = StepVector::eighth(spec.base_structure());
    let space = CompressedSpace::for_architecture(
        spec.clone(),
        &steps,
        SparsityTargets::new(rf, rp).unwrap(),
    )
    .unwrap();
    (spec, space)
}

/// Panics if it is ever asked to score a vector outside the feasible space.
struct Checking<'a, E> {
    inner: E,
    space: &'a CompressedSpace,
    seen: u64,
}

impl<E: Evaluator> Evaluator for Checking<'_, E> {
    fn descriptor(&self) -> &EvaluatorDescriptor {
        self.inner.descriptor()
    }

    fn evaluate(&mut self, s: &StructureVector) -> Result<FitnessValue, EvalError> {
        assert!(self.space.contains(s), "off-lattice {s}");
        assert!(self.space.is_feasible(s).unwrap(), "infeasible {s}");
        self.seen += 1;
        self.inner.evaluate(s)
    }
}

fn small_config(seed: u64) -> IdeConfig {
    IdeConfig {
        iterations: 30,
        seed,
        ..Default::default()
    }
}

#[test]
fn every_evaluated_vector_is_feasible() {
    for (rf, rp) in [(0.5, 0.0), (0.0, 0.5), (0.5, 0.5), (0.7, 0.3)] {
        let (spec, space) = vgg_space(rf, rp);
        for mode in [Mode::Ide, Mode::De] {
            let mut eval = Checking {
                inner: SurrogateEvaluator::new(spec.clone()),
                space: &space,
                seen: 0,
            };
            let cfg = IdeConfig {
                mode,
                ..small_config(3)
            };
            let out = ide::run(&space, &mut eval, &cfg).unwrap();
            let last = out.history.last().unwrap();
            assert_eq!(eval.seen, last.evaluations);
            assert_eq!(eval.seen, 10 * 31 + last.reinitializations);
            assert!(space.is_feasible(&out.best.vector).unwrap());
        }
    }
}

#[test]
fn memo_saves_inner_evaluations() {
    let spec = spec("t2");
    let steps = StepVector::uniform(1, spec.base_structure()).unwrap();
    let space = CompressedSpace::for_architecture(
        spec.clone(),
        &steps,
        SparsityTargets::new(0.3, 0.0).unwrap(),
    )
    .unwrap();
    let mut cached = Cached::new(SurrogateEvaluator::new(spec)).unwrap();
    let out = ide::run(&space, &mut cached, &small_config(1)).unwrap();
    assert_eq!(cached.requests(), out.history.last().unwrap().evaluations);
    assert!(cached.inner_evaluations() < cached.requests());
    assert_eq!(
        cached.inner_evaluations() + cached.hits(),
        cached.requests()
    );
}

fn history_bytes(seed: u64) -> Vec<u8> {
    let (spec, space) = vgg_space(0.5, 0.5);
    let mut eval = SurrogateEvaluator::new(spec);
    let cfg = small_config(seed);
    let out = ide::run(&space, &mut eval, &cfg).unwrap();
    let meta = RunMetadata {
        config: cfg,
        space_size: space.size().to_string(),
        evaluator: eval.descriptor().clone(),
        arch: Some("vgg16-cifar".into()),
        targets: Some(SparsityTargets::new(0.5, 0.5).unwrap()),
        steps: None,
    };
    let mut buf = Vec::new();
    write_history(&mut buf, &meta, &out.history).unwrap();
    buf
}

#[test]
fn seeded_runs_are_reproducible() {
    assert_eq!(history_bytes(5), history_bytes(5));
    assert_ne!(history_bytes(5), history_bytes(6));
}

#[test]
fn de_matches_ide_when_nothing_can_stagnate() {
    let (spec, space) = vgg_space(0.5, 0.0);
    let runs: Vec<_> = [Mode::Ide, Mode::De]
        .into_iter()
        .map(|mode| {
            let cfg = IdeConfig {
                mode,
                stagnation_limit: u32::MAX,
                ..small_config(9)
            };
            ide::run(&space, &mut SurrogateEvaluator::new(spec.clone()), &cfg).unwrap()
        })
        .collect();
    assert_eq!(runs[0].history, runs[1].history);
    assert_eq!(runs[0].final_population, runs[1].final_population);
}

#[test]
fn uniform_width_scaling_is_near_quadratic() {
    let spec = spec("vgg16-cifar");
    for k in 1..=8 {
        let alpha = k as f64 / 8.0;
        let s = StructureVector(spec.base_structure().0.iter().map(|c| c * k / 8).collect());
        let (r_f, r_p) = spec.pruning_rates(&s).unwrap();
        let quad = 1.0 - alpha * alpha;
        assert!((r_p - quad).abs() <= 0.1, "alpha {alpha}: r_p {r_p}");
        assert!((r_f - quad).abs() <= 0.1, "alpha {alpha}: r_f {r_f}");
    }
}

fn enumerate(dims: &[(i64, i64)]) -> u64 {
    // (step, base) per dimension, counted by brute force
    let mut count = 1u64;
    for &(e, c) in dims {
        let mut n = 0;
        let mut v = e;
        while v <= c {
            n += 1;
            v += e;
        }
        count *= n;
    }
    count
}

fn base_and_steps() -> impl Strategy<Value = Vec<(i64, i64)>> {
    prop::collection::vec((1i64..=64).prop_flat_map(|c| (1..=c, Just(c))), 1..6)
}

proptest! {
    #[test]
    fn space_size_matches_enumeration(dims in base_and_steps()) {
        let base = StructureVector(dims.iter().map(|d| d.1).collect());
        let steps = StepVector::new(dims.iter().map(|d| d.0).collect(), &base).unwrap();
        let space = CompressedSpace::build(&base, &steps).unwrap();
        prop_assert_eq!(space.size(), BigUint::from(enumerate(&dims)));
    }

    #[test]
    fn snap_is_idempotent_and_in_space(
        dims in base_and_steps(),
        raw in prop::collection::vec(-200i64..200, 6),
    ) {
        let base = StructureVector(dims.iter().map(|d| d.1).collect());
        let steps = StepVector::new(dims.iter().map(|d| d.0).collect(), &base).unwrap();
        let space = CompressedSpace::build(&base, &steps).unwrap();
        let v = StructureVector(raw[..dims.len()].to_vec());
        let once = space.snap_and_clamp(&v).unwrap();
        prop_assert!(space.contains(&once));
        prop_assert_eq!(space.snap_and_clamp(&once).unwrap(), once);
    }

    #[test]
    fn cost_is_monotone(
        a in prop::collection::vec(1i64..=8, 13),
        bump in prop::collection::vec(0i64..=8, 13),
    ) {
        let spec = spec("vgg16-cifar");
        let base = spec.base_structure();
        let lo: Vec<i64> = a.iter().zip(&base.0).map(|(k, c)| c * k / 8).collect();
        let hi: Vec<i64> = lo.iter().zip(&bump).zip(&base.0).map(|((l, b), c)| (l + b * c / 8).min(*c)).collect();
        let lo = spec.compute_cost(&StructureVector(lo)).unwrap();
        let hi = spec.compute_cost(&StructureVector(hi)).unwrap();
        prop_assert!(lo.flops <= hi.flops);
        prop_assert!(lo.params <= hi.params);
    }

    #[test]
    fn rescale_output_is_feasible_or_minimum_fails(
        raw in prop::collection::vec(-600i64..1200, 13),
        rf in 0.0f64..0.99,
        rp in 0.0f64..0.99,
        seed in any::<u64>(),
    ) {
        use rand::SeedableRng;
        let (spec, space) = vgg_space(rf, rp);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        match space.rescale(&StructureVector(raw), &mut rng) {
            Ok(s) => {
                prop_assert!(space.contains(&s));
                prop_assert!(space.is_feasible(&s).unwrap());
            }
            Err(chanprune::Error::MinimumReached { .. }) => {
                let t = SparsityTargets::new(rf, rp).unwrap();
                prop_assert!(!spec.is_feasible(&space.minimum(), &t).unwrap());
            }
            Err(e) => prop_assert!(false, "{e}"),
        }
    }
}
