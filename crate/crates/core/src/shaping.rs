//! Action-space transforms: remove actions, force ("always on") actions,
//! discretize continuous dimensions, flatten multi-discrete spaces, and mask.
//!
//! A [`TransformStack`] applies transforms left to right to an original
//! space and keeps enough bookkeeping to map an action of the shaped space
//! back onto the original space.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::ShapingError;
use crate::spaces::{Action, ActionSpace, Bound};

/// Largest shaped Discrete space `Flatten` is allowed to build.
pub const MAX_FLATTENED: usize = 1 << 22;

/// Limit on simultaneously pressed (non-default) sub-actions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MaxPressedRaw", into = "MaxPressedRaw")]
pub enum MaxPressed {
    All,
    Limit(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum MaxPressedRaw {
    Count(usize),
    Word(String),
}

impl TryFrom<MaxPressedRaw> for MaxPressed {
    type Error = String;

    fn try_from(raw: MaxPressedRaw) -> Result<Self, Self::Error> {
        match raw {
            MaxPressedRaw::Count(0) => Err("max_pressed must be positive".into()),
            MaxPressedRaw::Count(n) => Ok(MaxPressed::Limit(n)),
            MaxPressedRaw::Word(w) if w == "all" => Ok(MaxPressed::All),
            MaxPressedRaw::Word(w) => Err(format!("max_pressed must be a count or \"all\", got {w:?}")),
        }
    }
}

impl From<MaxPressed> for MaxPressedRaw {
    fn from(m: MaxPressed) -> Self {
        match m {
            MaxPressed::All => MaxPressedRaw::Word("all".into()),
            MaxPressed::Limit(n) => MaxPressedRaw::Count(n),
        }
    }
}

impl MaxPressed {
    fn allows(self, pressed: usize) -> bool {
        match self {
            MaxPressed::All => true,
            MaxPressed::Limit(n) => pressed <= n,
        }
    }
}

/// Per-step availability function over the shaped space's choices.
///
/// The returned vector is laid out like the policy head: `n` entries for a
/// Discrete space, and one block of `N_i` entries per dimension for a
/// MultiDiscrete space.
#[derive(Clone)]
pub struct MaskFn(pub Arc<dyn Fn(&[f64]) -> Vec<bool> + Send + Sync>);

impl fmt::Debug for MaskFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("MaskFn(..)")
    }
}

impl PartialEq for MaskFn {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaskSource {
    /// The same availability on every step.
    Static { available: Vec<bool> },
    /// Availability computed from the current observation.
    #[serde(skip)]
    Function(MaskFn),
}

impl MaskSource {
    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<bool> + Send + Sync + 'static,
    {
        MaskSource::Function(MaskFn(Arc::new(f)))
    }

    pub fn availability(&self, observation: &[f64]) -> Vec<bool> {
        match self {
            MaskSource::Static { available } => available.clone(),
            MaskSource::Function(f) => (f.0)(observation),
        }
    }
}

/// One shaping step, as written in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Transform {
    /// Drop `choices` from sub-action `target`. If a single choice survives
    /// in a multi-discrete dimension, that dimension is pinned to it.
    Remove { target: usize, choices: Vec<usize> },
    /// Remove sub-action `target` from the space and always send `choice`.
    Force { target: usize, choice: usize },
    /// Replace continuous sub-action `target` with `bins` equally spaced
    /// values `center + magnitude * (2b / (bins - 1) - 1)`.
    Discretize {
        target: usize,
        bins: usize,
        magnitude: f64,
        #[serde(default)]
        center: f64,
    },
    /// Replace a multi-discrete space with one discrete choice per allowed
    /// combination.
    Flatten { max_pressed: MaxPressed },
    /// Zero the probability of unavailable actions; must come last.
    Mask { source: MaskSource },
}

impl Transform {
    pub fn op_name(&self) -> &'static str {
        match self {
            Transform::Remove { .. } => "remove",
            Transform::Force { .. } => "force",
            Transform::Discretize { .. } => "discretize",
            Transform::Flatten { .. } => "flatten",
            Transform::Mask { .. } => "mask",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum StageKind {
    /// Discrete space with some choices removed; shaped i -> kept[i].
    Keep { kept: Vec<usize> },
    /// Multi-discrete dim with some choices removed.
    KeepInDim { dim: usize, kept: Vec<usize> },
    /// Multi-discrete dim removed and pinned.
    Pin { dim: usize, value: usize },
    /// Continuous dim replaced by a bin index.
    Bins { dim: usize, values: Vec<f64> },
    /// Multi-discrete space replaced by a combination index.
    Flatten { table: Vec<Vec<usize>> },
    /// A stage acting on one part of a composite; its output occupies
    /// `width` consecutive parts of the shaped composite.
    InPart { part: usize, width: usize, inner: Box<Stage> },
    /// A composite part removed and pinned to a constant action.
    DropPart { part: usize, value: Action },
}

#[derive(Clone, Debug, PartialEq)]
struct Stage {
    input: ActionSpace,
    output: ActionSpace,
    kind: StageKind,
}

impl Stage {
    fn decode(&self, action: Action) -> Action {
        match (&self.kind, action) {
            (StageKind::Keep { kept }, Action::Index(i)) => Action::Index(kept[i]),
            (StageKind::KeepInDim { dim, kept }, Action::Indices(mut v)) => {
                v[*dim] = kept[v[*dim]];
                Action::Indices(v)
            }
            (StageKind::Pin { dim, value }, Action::Indices(mut v)) => {
                v.insert(*dim, *value);
                Action::Indices(v)
            }
            (StageKind::Bins { dim, values }, action) => {
                // the shaped space is either Discrete(k) alone or a composite
                // [Continuous(before)?, Discrete(k), Continuous(after)?]
                let bin_value = |b: usize| values[b];
                match action {
                    Action::Index(b) => Action::Reals(vec![bin_value(b)]),
                    Action::Parts(parts) => {
                        let mut reals = Vec::new();
                        let mut seen_bin = false;
                        for p in parts {
                            match p {
                                Action::Reals(r) => reals.extend(r),
                                Action::Index(b) => {
                                    debug_assert_eq!(reals.len(), *dim);
                                    reals.push(bin_value(b));
                                    seen_bin = true;
                                }
                                _ => unreachable!("validated shaped action"),
                            }
                        }
                        debug_assert!(seen_bin);
                        Action::Reals(reals)
                    }
                    _ => unreachable!("validated shaped action"),
                }
            }
            (StageKind::Flatten { table }, Action::Index(i)) => Action::Indices(table[i].clone()),
            (StageKind::InPart { part, width, inner }, Action::Parts(mut parts)) => {
                let tail = parts.split_off(*part + *width);
                let mut mid = parts.split_off(*part);
                let inner_action = match inner.output {
                    ActionSpace::Composite(_) => Action::Parts(mid),
                    _ => mid.pop().expect("width 1"),
                };
                parts.push(inner.decode(inner_action));
                parts.extend(tail);
                Action::Parts(parts)
            }
            (StageKind::DropPart { part, value }, Action::Parts(mut parts)) => {
                parts.insert(*part, value.clone());
                Action::Parts(parts)
            }
            (kind, action) => unreachable!("stage {kind:?} cannot decode {action:?}"),
        }
    }
}

/// An original space, the transforms applied to it, and the shaped space
/// they produce.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformStack {
    original: ActionSpace,
    transforms: Vec<Transform>,
    shaped: ActionSpace,
    stages: Vec<Stage>,
    mask: Option<MaskSource>,
}

impl TransformStack {
    pub fn identity(original: ActionSpace) -> Self {
        Self {
            shaped: original.clone(),
            original,
            transforms: Vec::new(),
            stages: Vec::new(),
            mask: None,
        }
    }

    /// Applies `transforms` left to right. Fails on the first transform whose
    /// precondition does not hold against the space built so far.
    pub fn apply(original: ActionSpace, transforms: Vec<Transform>) -> Result<Self, ShapingError> {
        let mut current = original.clone();
        let mut stages = Vec::new();
        let mut mask = None;
        for (index, t) in transforms.iter().enumerate() {
            let fail = |reason: String| ShapingError::IncompatibleTransform { index, reason };
            if mask.is_some() {
                return Err(fail("mask must be the last transform".into()));
            }
            if let Transform::Mask { source } = t {
                check_mask(&current, source).map_err(fail)?;
                mask = Some(source.clone());
                continue;
            }
            let stage = build_stage(&current, t).map_err(fail)?;
            current = stage.output.clone();
            stages.push(stage);
        }
        Ok(Self {
            original,
            transforms,
            shaped: current,
            stages,
            mask,
        })
    }

    pub fn original(&self) -> &ActionSpace {
        &self.original
    }

    pub fn shaped(&self) -> &ActionSpace {
        &self.shaped
    }

    pub fn transforms(&self) -> &[Transform] {
        &self.transforms
    }

    pub fn mask(&self) -> Option<&MaskSource> {
        self.mask.as_ref()
    }

    /// Availability of shaped choices for this observation, if masked.
    pub fn availability(&self, observation: &[f64]) -> Option<Vec<bool>> {
        self.mask.as_ref().map(|m| m.availability(observation))
    }

    /// Maps a shaped action onto the original space.
    pub fn decode(&self, shaped_action: &Action) -> Result<Action, ShapingError> {
        if !self.shaped.contains(shaped_action) {
            return Err(ShapingError::OutOfRange {
                action: shaped_action.to_string(),
                space: self.shaped.to_string(),
            });
        }
        Ok(self
            .stages
            .iter()
            .rev()
            .fold(shaped_action.clone(), |a, stage| stage.decode(a)))
    }

    /// Decodes an action whose continuous values may lie outside their
    /// bounds (unbounded policy samples); discrete parts are still checked.
    pub fn decode_lenient(&self, shaped_action: &Action) -> Result<Action, ShapingError> {
        if !self.shaped.admits(shaped_action) {
            return Err(ShapingError::OutOfRange {
                action: shaped_action.to_string(),
                space: self.shaped.to_string(),
            });
        }
        Ok(self
            .stages
            .iter()
            .rev()
            .fold(shaped_action.clone(), |a, stage| stage.decode(a)))
    }

    /// The combination table of the last flatten stage, if any.
    pub fn combination_table(&self) -> Option<&[Vec<usize>]> {
        self.stages.iter().rev().find_map(|s| match &s.kind {
            StageKind::Flatten { table } => Some(table.as_slice()),
            _ => None,
        })
    }
}

fn check_mask(space: &ActionSpace, source: &MaskSource) -> Result<(), String> {
    let blocks: Vec<usize> = match space {
        ActionSpace::Discrete(n) => vec![*n],
        ActionSpace::MultiDiscrete(a) => a.clone(),
        other => return Err(format!("cannot mask a {} space", other.kind())),
    };
    if let MaskSource::Static { available } = source {
        let total: usize = blocks.iter().sum();
        if available.len() != total {
            return Err(format!(
                "mask has {} entries, shaped space {space} needs {total}",
                available.len()
            ));
        }
        let mut offset = 0;
        for (dim, &n) in blocks.iter().enumerate() {
            if !available[offset..offset + n].iter().any(|&a| a) {
                return Err(format!("mask leaves no choice in sub-action {dim}"));
            }
            offset += n;
        }
    }
    Ok(())
}

/// Locates flat sub-action `target` inside a composite: (part, local index).
fn locate(parts: &[ActionSpace], target: usize) -> Option<(usize, usize)> {
    let mut offset = 0;
    for (i, p) in parts.iter().enumerate() {
        let n = p.sub_action_count();
        if target < offset + n {
            return Some((i, target - offset));
        }
        offset += n;
    }
    None
}

fn retarget(t: &Transform, local: usize) -> Transform {
    let mut t = t.clone();
    match &mut t {
        Transform::Remove { target, .. }
        | Transform::Force { target, .. }
        | Transform::Discretize { target, .. } => *target = local,
        Transform::Flatten { .. } | Transform::Mask { .. } => {}
    }
    t
}

fn build_stage(space: &ActionSpace, t: &Transform) -> Result<Stage, String> {
    if let ActionSpace::Composite(parts) = space {
        return build_composite_stage(parts, space, t);
    }
    let stage = |output: ActionSpace, kind| Stage {
        input: space.clone(),
        output,
        kind,
    };
    match (t, space) {
        (Transform::Remove { target, choices }, ActionSpace::Discrete(n)) => {
            if *target != 0 {
                return Err(format!("discrete space has a single sub-action, got target {target}"));
            }
            let kept = kept_choices(*n, choices)?;
            Ok(stage(ActionSpace::Discrete(kept.len()), StageKind::Keep { kept }))
        }
        (Transform::Remove { target, choices }, ActionSpace::MultiDiscrete(arities)) => {
            let n = *arities
                .get(*target)
                .ok_or_else(|| format!("sub-action {target} out of range for {space}"))?;
            let kept = kept_choices(n, choices)?;
            if kept.len() == 1 {
                return pin_dim(space, arities, *target, kept[0]);
            }
            let mut out = arities.clone();
            out[*target] = kept.len();
            Ok(stage(
                ActionSpace::MultiDiscrete(out),
                StageKind::KeepInDim { dim: *target, kept },
            ))
        }
        (Transform::Force { target, choice }, ActionSpace::MultiDiscrete(arities)) => {
            let n = *arities
                .get(*target)
                .ok_or_else(|| format!("sub-action {target} out of range for {space}"))?;
            if *choice >= n {
                return Err(format!("forced choice {choice} out of range for arity {n}"));
            }
            pin_dim(space, arities, *target, *choice)
        }
        (Transform::Force { .. }, ActionSpace::Discrete(_)) => {
            Err("cannot force the only sub-action of a discrete space".into())
        }
        (
            Transform::Discretize {
                target,
                bins,
                magnitude,
                center,
            },
            ActionSpace::Continuous(bounds),
        ) => {
            let bound = *bounds
                .get(*target)
                .ok_or_else(|| format!("sub-action {target} out of range for {space}"))?;
            let values = bin_values(*bins, *magnitude, *center)?;
            if let Some(v) = values.iter().find(|&&v| !bound.contains(v)) {
                return Err(format!(
                    "bin value {v} lies outside [{}, {}]",
                    bound.low, bound.high
                ));
            }
            let before: Vec<Bound> = bounds[..*target].to_vec();
            let after: Vec<Bound> = bounds[*target + 1..].to_vec();
            let mut parts = Vec::new();
            if !before.is_empty() {
                parts.push(ActionSpace::Continuous(before));
            }
            parts.push(ActionSpace::Discrete(*bins));
            if !after.is_empty() {
                parts.push(ActionSpace::Continuous(after));
            }
            let output = if parts.len() == 1 {
                parts.pop().unwrap()
            } else {
                ActionSpace::Composite(parts)
            };
            Ok(stage(output, StageKind::Bins { dim: *target, values }))
        }
        (Transform::Flatten { max_pressed }, ActionSpace::MultiDiscrete(arities)) => {
            let table = enumerate_limited(arities, *max_pressed, MAX_FLATTENED)
                .ok_or_else(|| format!("flattening {space} exceeds {MAX_FLATTENED} combinations"))?;
            Ok(stage(ActionSpace::Discrete(table.len()), StageKind::Flatten { table }))
        }
        (t, space) => Err(format!("{} does not apply to a {} space", t.op_name(), space.kind())),
    }
}

fn build_composite_stage(
    parts: &[ActionSpace],
    space: &ActionSpace,
    t: &Transform,
) -> Result<Stage, String> {
    let target = match t {
        Transform::Remove { target, .. }
        | Transform::Force { target, .. }
        | Transform::Discretize { target, .. } => *target,
        _ => return Err(format!("{} does not apply to a composite space", t.op_name())),
    };
    let (part, local) =
        locate(parts, target).ok_or_else(|| format!("sub-action {target} out of range for {space}"))?;
    let part_space = &parts[part];

    // forcing the last sub-action of a part removes the whole part
    let drops_part = match (t, part_space) {
        (Transform::Force { choice, .. }, ActionSpace::Discrete(n)) => {
            if choice >= n {
                return Err(format!("forced choice {choice} out of range for arity {n}"));
            }
            Some(Action::Index(*choice))
        }
        (Transform::Force { choice, .. }, ActionSpace::MultiDiscrete(a)) if a.len() == 1 => {
            if *choice >= a[0] {
                return Err(format!("forced choice {choice} out of range for arity {}", a[0]));
            }
            Some(Action::Indices(vec![*choice]))
        }
        _ => None,
    };
    if let Some(value) = drops_part {
        if parts.len() == 1 {
            return Err("cannot remove the last sub-action of the space".into());
        }
        let mut rest = parts.to_vec();
        rest.remove(part);
        return Ok(Stage {
            input: space.clone(),
            output: ActionSpace::Composite(rest),
            kind: StageKind::DropPart { part, value },
        });
    }

    let inner = build_stage(part_space, &retarget(t, local))?;
    let replacement: Vec<ActionSpace> = match &inner.output {
        ActionSpace::Composite(p) => p.clone(),
        other => vec![other.clone()],
    };
    let width = replacement.len();
    let mut out = parts[..part].to_vec();
    out.extend(replacement);
    out.extend_from_slice(&parts[part + 1..]);
    Ok(Stage {
        input: space.clone(),
        output: ActionSpace::Composite(out),
        kind: StageKind::InPart {
            part,
            width,
            inner: Box::new(inner),
        },
    })
}

fn pin_dim(space: &ActionSpace, arities: &[usize], dim: usize, value: usize) -> Result<Stage, String> {
    if arities.len() == 1 {
        return Err("cannot remove the last sub-action of the space".into());
    }
    let mut out = arities.to_vec();
    out.remove(dim);
    Ok(Stage {
        input: space.clone(),
        output: ActionSpace::MultiDiscrete(out),
        kind: StageKind::Pin { dim, value },
    })
}

fn kept_choices(n: usize, removed: &[usize]) -> Result<Vec<usize>, String> {
    if let Some(&bad) = removed.iter().find(|&&c| c >= n) {
        return Err(format!("removed choice {bad} out of range for arity {n}"));
    }
    let kept: Vec<usize> = (0..n).filter(|c| !removed.contains(c)).collect();
    if kept.is_empty() {
        return Err("remove must leave at least one choice".into());
    }
    Ok(kept)
}

/// Equally spaced bin values including both endpoints `center ± magnitude`.
pub fn bin_values(bins: usize, magnitude: f64, center: f64) -> Result<Vec<f64>, String> {
    if bins == 0 || bins % 2 == 0 {
        return Err(format!("bin count must be odd and positive, got {bins}"));
    }
    if !(magnitude.is_finite() && magnitude > 0.0) || !center.is_finite() {
        return Err(format!("bad discretization magnitude {magnitude} / center {center}"));
    }
    if bins == 1 {
        return Ok(vec![center]);
    }
    let span = (bins - 1) as f64;
    Ok((0..bins)
        .map(|b| {
            // integer offset keeps mirrored bins exact negatives of each other
            let offset = 2.0 * b as f64 - span;
            if offset == 0.0 {
                center
            } else {
                center + magnitude * offset / span
            }
        })
        .collect())
}

/// Every joint index tuple with at most `max_pressed` non-zero entries, in
/// row-major order (last dimension fastest, all-zero tuple first).
pub fn enumerate_combinations(arities: &[usize], max_pressed: MaxPressed) -> Vec<Vec<usize>> {
    enumerate_limited(arities, max_pressed, usize::MAX).expect("unbounded enumeration")
}

fn enumerate_limited(arities: &[usize], max_pressed: MaxPressed, cap: usize) -> Option<Vec<Vec<usize>>> {
    fn walk(
        arities: &[usize],
        max_pressed: MaxPressed,
        cap: usize,
        prefix: &mut Vec<usize>,
        pressed: usize,
        out: &mut Vec<Vec<usize>>,
    ) -> bool {
        if prefix.len() == arities.len() {
            if out.len() == cap {
                return false;
            }
            out.push(prefix.clone());
            return true;
        }
        let arity = arities[prefix.len()];
        for choice in 0..arity {
            let now = pressed + usize::from(choice != 0);
            if !max_pressed.allows(now) {
                break;
            }
            prefix.push(choice);
            let ok = walk(arities, max_pressed, cap, prefix, now, out);
            prefix.pop();
            if !ok {
                return false;
            }
        }
        true
    }

    let mut out = Vec::new();
    let mut prefix = Vec::with_capacity(arities.len());
    walk(arities, max_pressed, cap, &mut prefix, 0, &mut out).then_some(out)
}

/// Zeroes unavailable entries and renormalizes the rest. If the available
/// entries carry no mass, returns the uniform distribution over them.
pub fn mask_probabilities(probs: &[f64], available: &[bool]) -> Result<Vec<f64>, ShapingError> {
    if probs.len() != available.len() {
        return Err(ShapingError::LengthMismatch {
            probs: probs.len(),
            available: available.len(),
        });
    }
    let count = available.iter().filter(|&&a| a).count();
    if count == 0 {
        return Err(ShapingError::AllMasked);
    }
    let mass: f64 = probs
        .iter()
        .zip(available)
        .filter(|(_, &a)| a)
        .map(|(p, _)| p)
        .sum();
    Ok(probs
        .iter()
        .zip(available)
        .map(|(&p, &a)| match (a, mass > 0.0) {
            (false, _) => 0.0,
            (true, true) => p / mass,
            (true, false) => 1.0 / count as f64,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn md(a: &[usize]) -> ActionSpace {
        ActionSpace::multi_discrete(a.to_vec()).unwrap()
    }

    fn unit(d: usize) -> ActionSpace {
        ActionSpace::continuous(vec![Bound::new(-1.0, 1.0).unwrap(); d]).unwrap()
    }

    fn flatten(max: MaxPressed) -> Transform {
        Transform::Flatten { max_pressed: max }
    }

    fn binom(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn apply_examples() {
        let s = TransformStack::apply(md(&[2, 2, 2, 2]), vec![flatten(MaxPressed::All)]).unwrap();
        assert_eq!(s.shaped(), &ActionSpace::Discrete(16));
        let s = TransformStack::apply(md(&[2, 2, 2, 2]), vec![flatten(MaxPressed::Limit(1))]).unwrap();
        assert_eq!(s.shaped(), &ActionSpace::Discrete(5));
        let s = TransformStack::apply(
            unit(1),
            vec![Transform::Discretize { target: 0, bins: 3, magnitude: 1.0, center: 0.0 }],
        )
        .unwrap();
        assert_eq!(s.shaped(), &ActionSpace::Discrete(3));
    }

    #[test]
    fn decode_examples() {
        let s = TransformStack::apply(md(&[2, 2]), vec![flatten(MaxPressed::All)]).unwrap();
        assert_eq!(s.decode(&Action::Index(3)).unwrap(), Action::Indices(vec![1, 1]));
        assert_eq!(s.decode(&Action::Index(1)).unwrap(), Action::Indices(vec![0, 1]));

        let s = TransformStack::apply(
            unit(1),
            vec![Transform::Discretize { target: 0, bins: 3, magnitude: 1.0, center: 0.0 }],
        )
        .unwrap();
        let vals: Vec<Action> = (0..3).map(|b| s.decode(&Action::Index(b)).unwrap()).collect();
        assert_eq!(
            vals,
            vec![Action::Reals(vec![-1.0]), Action::Reals(vec![0.0]), Action::Reals(vec![1.0])]
        );

        let s = TransformStack::apply(md(&[2, 2, 2]), vec![Transform::Force { target: 2, choice: 1 }])
            .unwrap();
        assert_eq!(s.shaped(), &md(&[2, 2]));
        assert_eq!(s.decode(&Action::Indices(vec![0, 1])).unwrap(), Action::Indices(vec![0, 1, 1]));
    }

    #[test]
    fn decode_rejects_out_of_range() {
        let s = TransformStack::apply(md(&[2, 2]), vec![flatten(MaxPressed::All)]).unwrap();
        assert!(matches!(
            s.decode(&Action::Index(4)),
            Err(ShapingError::OutOfRange { .. })
        ));
        assert!(s.decode(&Action::Indices(vec![0, 0])).is_err());
    }

    #[test]
    fn incompatible_transforms_report_their_index() {
        let err = TransformStack::apply(unit(1), vec![flatten(MaxPressed::All)]).unwrap_err();
        assert!(matches!(err, ShapingError::IncompatibleTransform { index: 0, .. }));

        let err = TransformStack::apply(
            md(&[2, 2]),
            vec![flatten(MaxPressed::All), flatten(MaxPressed::All)],
        )
        .unwrap_err();
        assert!(matches!(err, ShapingError::IncompatibleTransform { index: 1, .. }));

        let bad = [
            (md(&[3, 3]), Transform::Remove { target: 0, choices: vec![0, 1, 2] }),
            (md(&[3, 3]), Transform::Remove { target: 2, choices: vec![0] }),
            (md(&[3, 3]), Transform::Force { target: 0, choice: 3 }),
            (md(&[3]), Transform::Force { target: 0, choice: 1 }),
            (ActionSpace::Discrete(4), Transform::Force { target: 0, choice: 1 }),
            (unit(1), Transform::Discretize { target: 0, bins: 4, magnitude: 1.0, center: 0.0 }),
            (unit(1), Transform::Discretize { target: 0, bins: 3, magnitude: 2.0, center: 0.0 }),
            (unit(1), Transform::Discretize { target: 0, bins: 3, magnitude: -1.0, center: 0.0 }),
            (ActionSpace::Discrete(3), Transform::Mask { source: MaskSource::Static { available: vec![true] } }),
            (ActionSpace::Discrete(2), Transform::Mask { source: MaskSource::Static { available: vec![false, false] } }),
        ];
        for (space, t) in bad {
            assert!(
                TransformStack::apply(space.clone(), vec![t.clone()]).is_err(),
                "{t:?} on {space} should fail"
            );
        }

        let masked_then_more = TransformStack::apply(
            ActionSpace::Discrete(2),
            vec![
                Transform::Mask { source: MaskSource::Static { available: vec![true, true] } },
                Transform::Remove { target: 0, choices: vec![0] },
            ],
        );
        assert!(matches!(
            masked_then_more,
            Err(ShapingError::IncompatibleTransform { index: 1, .. })
        ));
    }

    #[test]
    fn remove_on_discrete_and_multidiscrete() {
        let s = TransformStack::apply(
            ActionSpace::Discrete(6),
            vec![Transform::Remove { target: 0, choices: vec![1, 4] }],
        )
        .unwrap();
        assert_eq!(s.shaped(), &ActionSpace::Discrete(4));
        let decoded: Vec<_> = (0..4).map(|i| s.decode(&Action::Index(i)).unwrap()).collect();
        assert_eq!(decoded, [0, 2, 3, 5].map(Action::Index).to_vec());

        let s = TransformStack::apply(md(&[3, 3]), vec![Transform::Remove { target: 0, choices: vec![2] }])
            .unwrap();
        assert_eq!(s.shaped(), &md(&[2, 3]));
        // removing all but one choice pins the dimension
        let s = TransformStack::apply(md(&[3, 3]), vec![Transform::Remove { target: 1, choices: vec![0, 2] }])
            .unwrap();
        assert_eq!(s.shaped(), &md(&[3]));
        assert_eq!(s.decode(&Action::Indices(vec![2])).unwrap(), Action::Indices(vec![2, 1]));
    }

    #[test]
    fn composite_pipeline() {
        // keyboard-plus-mouse style: three buttons and two camera axes
        let original = ActionSpace::composite(vec![md(&[2, 2, 2]), unit(2)]).unwrap();
        let s = TransformStack::apply(
            original.clone(),
            vec![
                Transform::Force { target: 2, choice: 1 },
                Transform::Discretize { target: 2, bins: 3, magnitude: 0.5, center: 0.0 },
                Transform::Remove { target: 2, choices: vec![1] },
            ],
        )
        .unwrap();
        assert_eq!(
            s.shaped(),
            &ActionSpace::Composite(vec![md(&[2, 2]), ActionSpace::Discrete(2), unit(1)])
        );
        let a = s
            .decode(&Action::Parts(vec![
                Action::Indices(vec![1, 0]),
                Action::Index(1),
                Action::Reals(vec![0.25]),
            ]))
            .unwrap();
        assert_eq!(
            a,
            Action::Parts(vec![Action::Indices(vec![1, 0, 1]), Action::Reals(vec![0.5, 0.25])])
        );
        assert!(original.contains(&a));

        // forcing a single-choice part drops it from the composite
        let s = TransformStack::apply(
            ActionSpace::composite(vec![ActionSpace::Discrete(3), unit(1)]).unwrap(),
            vec![Transform::Force { target: 0, choice: 2 }],
        )
        .unwrap();
        assert_eq!(s.shaped(), &ActionSpace::Composite(vec![unit(1)]));
        assert_eq!(
            s.decode(&Action::Parts(vec![Action::Reals(vec![0.0])])).unwrap(),
            Action::Parts(vec![Action::Index(2), Action::Reals(vec![0.0])])
        );
    }

    #[test]
    fn enumerate_examples() {
        assert_eq!(enumerate_combinations(&[2, 2, 2, 2], MaxPressed::Limit(2)).len(), 11);
        assert_eq!(enumerate_combinations(&[3, 3], MaxPressed::All).len(), 9);
        assert_eq!(
            enumerate_combinations(&[3, 3], MaxPressed::Limit(1)),
            vec![vec![0, 0], vec![0, 1], vec![0, 2], vec![1, 0], vec![2, 0]]
        );
    }

    #[test]
    fn enumeration_count_law() {
        for buttons in 1..=10 {
            let arities = vec![2; buttons];
            for n in 1..=buttons {
                let expected: usize = (0..=n).map(|j| binom(buttons, j)).sum();
                assert_eq!(enumerate_combinations(&arities, MaxPressed::Limit(n)).len(), expected);
            }
            assert_eq!(enumerate_combinations(&arities, MaxPressed::All).len(), 1 << buttons);
        }
    }

    #[test]
    fn mask_examples() {
        assert_eq!(mask_probabilities(&[0.5, 0.5], &[true, false]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(
            mask_probabilities(&[0.2, 0.3, 0.5], &[true, true, true]).unwrap(),
            vec![0.2, 0.3, 0.5]
        );
        assert_eq!(
            mask_probabilities(&[0.25; 4], &[false, false, true, true]).unwrap(),
            vec![0.0, 0.0, 0.5, 0.5]
        );
        assert_eq!(
            mask_probabilities(&[1.0, 0.0, 0.0], &[false, true, true]).unwrap(),
            vec![0.0, 0.5, 0.5]
        );
        assert_eq!(mask_probabilities(&[0.5, 0.5], &[false, false]), Err(ShapingError::AllMasked));
        assert!(matches!(
            mask_probabilities(&[1.0], &[true, false]),
            Err(ShapingError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn discretization_is_symmetric_with_single_zero() {
        for bins in (1..40).step_by(2) {
            let v = bin_values(bins, 2.5, 0.0).unwrap();
            assert_eq!(v.iter().filter(|&&x| x == 0.0).count(), 1);
            for (a, b) in v.iter().zip(v.iter().rev()) {
                assert_eq!(*a, -*b);
            }
            assert_eq!(v.first(), Some(&if bins == 1 { 0.0 } else { -2.5 }));
        }
    }

    #[test]
    fn transform_json() {
        let ts: Vec<Transform> = serde_json::from_str(
            r#"[{"op":"flatten","max_pressed":2},{"op":"flatten","max_pressed":"all"},
                {"op":"remove","target":1,"choices":[0]},{"op":"force","target":0,"choice":1},
                {"op":"discretize","target":0,"bins":5,"magnitude":1.0},
                {"op":"mask","source":{"kind":"static","available":[true,false]}}]"#,
        )
        .unwrap();
        assert_eq!(ts[0], flatten(MaxPressed::Limit(2)));
        assert_eq!(ts[1], flatten(MaxPressed::All));
        assert_eq!(ts[4], Transform::Discretize { target: 0, bins: 5, magnitude: 1.0, center: 0.0 });
        let back: Vec<Transform> = serde_json::from_str(&serde_json::to_string(&ts).unwrap()).unwrap();
        assert_eq!(back, ts);
        assert!(serde_json::from_str::<Transform>(r#"{"op":"flatten","max_pressed":0}"#).is_err());
        assert!(serde_json::from_str::<Transform>(r#"{"op":"flatten","max_pressed":"some"}"#).is_err());
        assert!(serde_json::from_str::<Transform>(r#"{"op":"flatten","max_presed":2}"#).is_err());
    }

    fn arb_transform() -> impl Strategy<Value = Transform> {
        prop_oneof![
            (0usize..6, prop::collection::vec(0usize..5, 0..3))
                .prop_map(|(target, choices)| Transform::Remove { target, choices }),
            (0usize..6, 0usize..4).prop_map(|(target, choice)| Transform::Force { target, choice }),
            (0usize..3, 0usize..4, 0.1f64..1.0)
                .prop_map(|(target, b, magnitude)| Transform::Discretize {
                    target,
                    bins: 2 * b + 1,
                    magnitude,
                    center: 0.0,
                }),
            (0usize..4).prop_map(|n| Transform::Flatten {
                max_pressed: if n == 0 { MaxPressed::All } else { MaxPressed::Limit(n) },
            }),
        ]
    }

    fn arb_original() -> impl Strategy<Value = ActionSpace> {
        prop_oneof![
            (1usize..8).prop_map(ActionSpace::Discrete),
            prop::collection::vec(2usize..5, 1..5).prop_map(ActionSpace::MultiDiscrete),
            (1usize..3).prop_map(unit),
            (prop::collection::vec(2usize..4, 1..4), 1usize..3)
                .prop_map(|(a, d)| ActionSpace::composite(vec![ActionSpace::MultiDiscrete(a), unit(d)]).unwrap()),
        ]
    }

    /// Every action of a finite-or-sampled shaped space.
    fn shaped_actions(space: &ActionSpace, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<Action> {
        match space {
            ActionSpace::Discrete(n) => (0..*n).map(Action::Index).collect(),
            ActionSpace::MultiDiscrete(a) => enumerate_combinations(a, MaxPressed::All)
                .into_iter()
                .map(Action::Indices)
                .collect(),
            _ => (0..64).map(|_| space.sample_uniform(rng)).collect(),
        }
    }

    proptest! {
        #[test]
        fn decode_is_total(original in arb_original(), ts in prop::collection::vec(arb_transform(), 0..4), seed in any::<u64>()) {
            use rand::SeedableRng;
            let Ok(stack) = TransformStack::apply(original.clone(), ts) else { return Ok(()); };
            stack.shaped().validate().unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for a in shaped_actions(stack.shaped(), &mut rng) {
                let decoded = stack.decode(&a).unwrap();
                prop_assert!(original.contains(&decoded), "{a:?} -> {decoded:?} not in {original}");
            }
        }

        #[test]
        fn flatten_is_a_bijection(arities in prop::collection::vec(2usize..=4, 1..=6), limit in 0usize..7) {
            let max = if limit == 0 { MaxPressed::All } else { MaxPressed::Limit(limit) };
            let stack = TransformStack::apply(ActionSpace::MultiDiscrete(arities.clone()), vec![flatten(max)]).unwrap();
            let ActionSpace::Discrete(n) = *stack.shaped() else { panic!() };
            let decoded: Vec<Action> = (0..n).map(|i| stack.decode(&Action::Index(i)).unwrap()).collect();
            let unique: HashSet<String> = decoded.iter().map(|a| a.to_string()).collect();
            prop_assert_eq!(unique.len(), n);

            // brute force: every tuple of the full product with few enough presses
            let full = enumerate_combinations(&arities, MaxPressed::All);
            let allowed: HashSet<String> = full
                .iter()
                .filter(|t| max.allows(t.iter().filter(|&&x| x != 0).count()))
                .map(|t| Action::Indices(t.clone()).to_string())
                .collect();
            prop_assert_eq!(unique, allowed);
            prop_assert_eq!(&decoded[0], &Action::Indices(vec![0; arities.len()]));
        }

        #[test]
        fn masked_probabilities_are_normalized(
            raw in prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..20)
        ) {
            let total: f64 = raw.iter().map(|(p, _)| p).sum();
            prop_assume!(total > 0.0);
            let probs: Vec<f64> = raw.iter().map(|(p, _)| p / total).collect();
            let avail: Vec<bool> = raw.iter().map(|(_, a)| *a).collect();
            match mask_probabilities(&probs, &avail) {
                Ok(out) => {
                    prop_assert!((out.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                    for (p, a) in out.iter().zip(&avail) {
                        if !a { prop_assert_eq!(p.to_bits(), 0u64); }
                    }
                }
                Err(e) => prop_assert_eq!(e, ShapingError::AllMasked),
            }
        }
    }
}
