//! Action-space algebra: the four fundamental space shapes and the values
//! that live in them.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::SpaceError;

/// A closed real interval `[low, high]` for one continuous dimension.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub low: f64,
    pub high: f64,
}

impl Bound {
    pub fn new(low: f64, high: f64) -> Result<Self, SpaceError> {
        if !(low.is_finite() && high.is_finite() && low < high) {
            return Err(SpaceError::InvalidBound { low, high });
        }
        Ok(Self { low, high })
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.low + self.high)
    }

    pub fn half_range(&self) -> f64 {
        0.5 * (self.high - self.low)
    }

    pub fn contains(&self, x: f64) -> bool {
        x.is_finite() && self.low <= x && x <= self.high
    }
}

/// Describes the set of legal actions.
///
/// Construct through the checked constructors; they enforce the arity and
/// bound invariants and flatten nested composites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpace", into = "RawSpace")]
pub enum ActionSpace {
    Discrete(usize),
    MultiDiscrete(Vec<usize>),
    Continuous(Vec<Bound>),
    Composite(Vec<ActionSpace>),
}

/// Number of distinct actions in a space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cardinality {
    Finite(u128),
    Infinite,
}

impl fmt::Display for Cardinality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cardinality::Finite(n) => write!(f, "{n}"),
            Cardinality::Infinite => f.write_str("infinite"),
        }
    }
}

/// A value drawn from an [`ActionSpace`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Action {
    Index(usize),
    Indices(Vec<usize>),
    Reals(Vec<f64>),
    Parts(Vec<Action>),
}

impl Action {
    pub fn as_index(&self) -> Option<usize> {
        match self {
            Action::Index(i) => Some(*i),
            _ => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Index(i) => write!(f, "{i}"),
            Action::Indices(v) => write!(f, "{v:?}"),
            Action::Reals(v) => write!(f, "{v:?}"),
            Action::Parts(parts) => {
                f.write_str("(")?;
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{p}")?;
                }
                f.write_str(")")
            }
        }
    }
}

impl ActionSpace {
    pub fn discrete(n: usize) -> Result<Self, SpaceError> {
        if n == 0 {
            return Err(SpaceError::EmptyDiscrete);
        }
        Ok(ActionSpace::Discrete(n))
    }

    pub fn multi_discrete(arities: Vec<usize>) -> Result<Self, SpaceError> {
        if arities.is_empty() {
            return Err(SpaceError::NoDimensions);
        }
        if let Some((dim, &arity)) = arities.iter().enumerate().find(|(_, &a)| a < 2) {
            return Err(SpaceError::ArityTooSmall { dim, arity });
        }
        Ok(ActionSpace::MultiDiscrete(arities))
    }

    pub fn continuous(bounds: Vec<Bound>) -> Result<Self, SpaceError> {
        if bounds.is_empty() {
            return Err(SpaceError::NoDimensions);
        }
        for b in &bounds {
            Bound::new(b.low, b.high)?;
        }
        Ok(ActionSpace::Continuous(bounds))
    }

    /// Builds a composite space, splicing the parts of any nested composite
    /// into the flat list.
    pub fn composite(parts: Vec<ActionSpace>) -> Result<Self, SpaceError> {
        let mut flat = Vec::with_capacity(parts.len());
        for part in parts {
            match part {
                ActionSpace::Composite(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        if flat.is_empty() {
            return Err(SpaceError::EmptyComposite);
        }
        Ok(ActionSpace::Composite(flat))
    }

    /// Re-checks all invariants; used on values built through the raw enum.
    pub fn validate(&self) -> Result<(), SpaceError> {
        match self {
            ActionSpace::Discrete(n) => Self::discrete(*n).map(drop),
            ActionSpace::MultiDiscrete(a) => Self::multi_discrete(a.clone()).map(drop),
            ActionSpace::Continuous(b) => Self::continuous(b.clone()).map(drop),
            ActionSpace::Composite(parts) => {
                if parts.is_empty() {
                    return Err(SpaceError::EmptyComposite);
                }
                for p in parts {
                    if matches!(p, ActionSpace::Composite(_)) {
                        return Err(SpaceError::NestedComposite);
                    }
                    p.validate()?;
                }
                Ok(())
            }
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ActionSpace::Discrete(_) => "discrete",
            ActionSpace::MultiDiscrete(_) => "multidiscrete",
            ActionSpace::Continuous(_) => "continuous",
            ActionSpace::Composite(_) => "composite",
        }
    }

    /// Number of independent sub-actions (a Discrete space counts as one).
    pub fn sub_action_count(&self) -> usize {
        match self {
            ActionSpace::Discrete(_) => 1,
            ActionSpace::MultiDiscrete(a) => a.len(),
            ActionSpace::Continuous(b) => b.len(),
            ActionSpace::Composite(parts) => parts.iter().map(Self::sub_action_count).sum(),
        }
    }

    pub fn contains(&self, action: &Action) -> bool {
        match (self, action) {
            (ActionSpace::Discrete(n), Action::Index(i)) => i < n,
            (ActionSpace::MultiDiscrete(arities), Action::Indices(idx)) => {
                idx.len() == arities.len() && idx.iter().zip(arities).all(|(i, n)| i < n)
            }
            (ActionSpace::Continuous(bounds), Action::Reals(x)) => {
                x.len() == bounds.len() && x.iter().zip(bounds).all(|(&v, b)| b.contains(v))
            }
            (ActionSpace::Composite(parts), Action::Parts(acts)) => {
                parts.len() == acts.len() && parts.iter().zip(acts).all(|(s, a)| s.contains(a))
            }
            _ => false,
        }
    }

    /// Like [`contains`](Self::contains) but only asks continuous values to
    /// be finite; environments wrap or clamp them themselves.
    pub fn admits(&self, action: &Action) -> bool {
        match (self, action) {
            (ActionSpace::Continuous(bounds), Action::Reals(x)) => {
                x.len() == bounds.len() && x.iter().all(|v| v.is_finite())
            }
            (ActionSpace::Composite(parts), Action::Parts(acts)) => {
                parts.len() == acts.len() && parts.iter().zip(acts).all(|(s, a)| s.admits(a))
            }
            _ => self.contains(action),
        }
    }

    pub fn cardinality(&self) -> Cardinality {
        match self {
            ActionSpace::Discrete(n) => Cardinality::Finite(*n as u128),
            ActionSpace::MultiDiscrete(arities) => Cardinality::Finite(
                arities
                    .iter()
                    .fold(1u128, |acc, &a| acc.saturating_mul(a as u128)),
            ),
            ActionSpace::Continuous(_) => Cardinality::Infinite,
            ActionSpace::Composite(parts) => {
                let mut total = 1u128;
                for p in parts {
                    match p.cardinality() {
                        Cardinality::Finite(n) => total = total.saturating_mul(n),
                        Cardinality::Infinite => return Cardinality::Infinite,
                    }
                }
                Cardinality::Finite(total)
            }
        }
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Action {
        match self {
            ActionSpace::Discrete(n) => Action::Index(rng.random_range(0..*n)),
            ActionSpace::MultiDiscrete(arities) => {
                Action::Indices(arities.iter().map(|&n| rng.random_range(0..n)).collect())
            }
            ActionSpace::Continuous(bounds) => Action::Reals(
                bounds
                    .iter()
                    .map(|b| rng.random_range(b.low..b.high))
                    .collect(),
            ),
            ActionSpace::Composite(parts) => {
                Action::Parts(parts.iter().map(|p| p.sample_uniform(rng)).collect())
            }
        }
    }
}

impl fmt::Display for ActionSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionSpace::Discrete(n) => write!(f, "Discrete({n})"),
            ActionSpace::MultiDiscrete(a) => {
                let list: Vec<String> = a.iter().map(|x| x.to_string()).collect();
                write!(f, "MultiDiscrete({})", list.join(", "))
            }
            ActionSpace::Continuous(b) => {
                let list: Vec<String> = b.iter().map(|b| format!("[{}, {}]", b.low, b.high)).collect();
                write!(f, "Continuous({}; {})", b.len(), list.join(", "))
            }
            ActionSpace::Composite(parts) => {
                let list: Vec<String> = parts.iter().map(|p| p.to_string()).collect();
                write!(f, "Composite({})", list.join(", "))
            }
        }
    }
}

/// JSON form: `{"type": "discrete", "n": 5}`, `{"type": "multidiscrete",
/// "arities": [2, 2]}`, `{"type": "continuous", "low": [0], "high": [360]}`,
/// `{"type": "composite", "parts": [...]}`.
#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum RawSpace {
    Discrete { n: usize },
    Multidiscrete { arities: Vec<usize> },
    Continuous { low: Vec<f64>, high: Vec<f64> },
    Composite { parts: Vec<ActionSpace> },
}

impl TryFrom<RawSpace> for ActionSpace {
    type Error = SpaceError;

    fn try_from(raw: RawSpace) -> Result<Self, Self::Error> {
        match raw {
            RawSpace::Discrete { n } => ActionSpace::discrete(n),
            RawSpace::Multidiscrete { arities } => ActionSpace::multi_discrete(arities),
            RawSpace::Continuous { low, high } => {
                if low.len() != high.len() {
                    return Err(SpaceError::BoundLengthMismatch {
                        low: low.len(),
                        high: high.len(),
                    });
                }
                let bounds = low
                    .into_iter()
                    .zip(high)
                    .map(|(l, h)| Bound::new(l, h))
                    .collect::<Result<Vec<_>, _>>()?;
                ActionSpace::continuous(bounds)
            }
            RawSpace::Composite { parts } => ActionSpace::composite(parts),
        }
    }
}

impl From<ActionSpace> for RawSpace {
    fn from(space: ActionSpace) -> Self {
        match space {
            ActionSpace::Discrete(n) => RawSpace::Discrete { n },
            ActionSpace::MultiDiscrete(arities) => RawSpace::Multidiscrete { arities },
            ActionSpace::Continuous(bounds) => RawSpace::Continuous {
                low: bounds.iter().map(|b| b.low).collect(),
                high: bounds.iter().map(|b| b.high).collect(),
            },
            ActionSpace::Composite(parts) => RawSpace::Composite { parts },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit() -> Bound {
        Bound::new(-1.0, 1.0).unwrap()
    }

    #[test]
    fn contains_examples() {
        assert!(ActionSpace::Discrete(4).contains(&Action::Index(3)));
        assert!(!ActionSpace::Discrete(4).contains(&Action::Index(4)));
        let md = ActionSpace::multi_discrete(vec![3, 3]).unwrap();
        assert!(md.contains(&Action::Indices(vec![2, 0])));
        assert!(!md.contains(&Action::Indices(vec![3, 0])));
        assert!(!md.contains(&Action::Indices(vec![0])));
        assert!(!md.contains(&Action::Index(0)));
        let c = ActionSpace::continuous(vec![unit()]).unwrap();
        assert!(c.contains(&Action::Reals(vec![1.0])));
        assert!(!c.contains(&Action::Reals(vec![1.5])));
        assert!(!c.contains(&Action::Reals(vec![f64::NAN])));
        assert!(c.admits(&Action::Reals(vec![7.5])));
        assert!(!c.admits(&Action::Reals(vec![f64::INFINITY])));
        assert!(!md.admits(&Action::Indices(vec![3, 0])));
    }

    #[test]
    fn cardinality_examples() {
        let md = ActionSpace::multi_discrete(vec![3, 3, 2, 3]).unwrap();
        assert_eq!(md.cardinality(), Cardinality::Finite(54));
        assert_eq!(ActionSpace::Discrete(1).cardinality(), Cardinality::Finite(1));
        let comp = ActionSpace::composite(vec![
            ActionSpace::Discrete(6),
            ActionSpace::continuous(vec![unit()]).unwrap(),
        ])
        .unwrap();
        assert_eq!(comp.cardinality(), Cardinality::Infinite);
    }

    #[test]
    fn constructor_invariants() {
        assert!(ActionSpace::discrete(0).is_err());
        assert!(ActionSpace::multi_discrete(vec![2, 1]).is_err());
        assert!(ActionSpace::multi_discrete(vec![]).is_err());
        assert!(Bound::new(1.0, 1.0).is_err());
        assert!(Bound::new(0.0, f64::INFINITY).is_err());
        assert!(ActionSpace::composite(vec![]).is_err());
    }

    #[test]
    fn composite_flattening_is_idempotent() {
        let a = ActionSpace::Discrete(3);
        let b = ActionSpace::multi_discrete(vec![2, 2]).unwrap();
        let c = ActionSpace::continuous(vec![unit()]).unwrap();
        let flat = ActionSpace::composite(vec![a.clone(), b.clone(), c.clone()]).unwrap();
        let nested = ActionSpace::composite(vec![
            a.clone(),
            ActionSpace::composite(vec![b, c]).unwrap(),
        ])
        .unwrap();
        assert_eq!(flat, nested);
        let again = ActionSpace::composite(vec![flat.clone()]).unwrap();
        assert_eq!(again, flat);
    }

    #[test]
    fn discrete_one_always_samples_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(ActionSpace::Discrete(1).sample_uniform(&mut rng), Action::Index(0));
        }
    }

    #[test]
    fn multi_discrete_samples_are_uniform() {
        let space = ActionSpace::multi_discrete(vec![2, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            let Action::Indices(v) = space.sample_uniform(&mut rng) else { unreachable!() };
            counts[v[0] * 2 + v[1]] += 1;
        }
        let expected = draws as f64 / 4.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 3 degrees of freedom, p = 0.001 critical value
        assert!(chi2 < 16.27, "chi2 = {chi2}");
        for &c in &counts {
            assert!((c as f64 / draws as f64 - 0.25).abs() < 0.02);
        }
    }

    #[test]
    fn continuous_samples_are_centred() {
        let space = ActionSpace::continuous(vec![unit()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000;
        let mut sum = 0.0;
        for _ in 0..draws {
            let Action::Reals(v) = space.sample_uniform(&mut rng) else { unreachable!() };
            sum += v[0];
        }
        assert!((sum / draws as f64).abs() < 0.01);
    }

    #[test]
    fn json_round_trip_and_rejection() {
        let space = ActionSpace::composite(vec![
            ActionSpace::multi_discrete(vec![2, 3]).unwrap(),
            ActionSpace::continuous(vec![Bound::new(0.0, 360.0).unwrap()]).unwrap(),
        ])
        .unwrap();
        let json = serde_json::to_string(&space).unwrap();
        assert!(json.contains("\"type\":\"composite\""));
        let back: ActionSpace = serde_json::from_str(&json).unwrap();
        assert_eq!(back, space);

        let parsed: ActionSpace = serde_json::from_str(r#"{"type":"discrete","n":5}"#).unwrap();
        assert_eq!(parsed, ActionSpace::Discrete(5));
        assert!(serde_json::from_str::<ActionSpace>(r#"{"type":"discrete","n":0}"#).is_err());
        assert!(
            serde_json::from_str::<ActionSpace>(r#"{"type":"multidiscrete","arities":[1]}"#).is_err()
        );
        assert!(serde_json::from_str::<ActionSpace>(r#"{"type":"discrete","n":2,"x":1}"#).is_err());
    }

    fn arb_simple_space() -> impl Strategy<Value = ActionSpace> {
        prop_oneof![
            (1usize..10).prop_map(ActionSpace::Discrete),
            prop::collection::vec(2usize..6, 1..6).prop_map(ActionSpace::MultiDiscrete),
            prop::collection::vec((-5.0f64..5.0, 0.1f64..4.0), 1..4).prop_map(|v| {
                ActionSpace::Continuous(v.into_iter().map(|(l, w)| Bound { low: l, high: l + w }).collect())
            }),
        ]
    }

    fn arb_space() -> impl Strategy<Value = ActionSpace> {
        prop_oneof![
            3 => arb_simple_space(),
            1 => prop::collection::vec(arb_simple_space(), 1..4)
                .prop_map(|parts| ActionSpace::composite(parts).unwrap()),
        ]
    }

    proptest! {
        #[test]
        fn samples_are_contained(space in arb_space(), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..20 {
                let a = space.sample_uniform(&mut rng);
                prop_assert!(space.contains(&a), "{a:?} not in {space}");
            }
        }

        #[test]
        fn multi_discrete_cardinality_matches_enumeration(
            arities in prop::collection::vec(2usize..5, 1..=8)
        ) {
            let space = ActionSpace::MultiDiscrete(arities.clone());
            // odometer enumeration of every joint index tuple
            let mut count = 0u128;
            let mut idx = vec![0usize; arities.len()];
            'outer: loop {
                count += 1;
                for d in (0..arities.len()).rev() {
                    idx[d] += 1;
                    if idx[d] < arities[d] {
                        continue 'outer;
                    }
                    idx[d] = 0;
                }
                break;
            }
            prop_assert_eq!(space.cardinality(), Cardinality::Finite(count));
        }

        #[test]
        fn json_round_trip(space in arb_space()) {
            let json = serde_json::to_string(&space).unwrap();
            let back: ActionSpace = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(back, space);
        }
    }
}
