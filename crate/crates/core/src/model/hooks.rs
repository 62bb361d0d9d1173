//! Capture and additive-injection hooks on the residual stream.
//!
//! The hook point is the output of each transformer block (after the MLP
//! residual add), i.e. the vector handed to the next block. Captured states
//! are read after injection, so they are exactly what the next layer sees.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{HiddenState, ModelError};

/// Per-layer map from absolute sequence position to an additive delta.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InjectionPlan {
    layers: BTreeMap<usize, BTreeMap<usize, HiddenState>>,
}

impl InjectionPlan {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `delta` at `(layer, position)`. A second insert at the same slot
    /// replaces the first.
    pub fn insert(&mut self, layer: usize, position: usize, delta: HiddenState) {
        self.layers
            .entry(layer)
            .or_default()
            .insert(position, delta);
    }

    pub fn is_empty(&self) -> bool {
        self.layers.values().all(BTreeMap::is_empty)
    }

    pub fn layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.layers.keys().copied()
    }

    pub fn positions(&self, layer: usize) -> impl Iterator<Item = usize> + '_ {
        self.layers
            .get(&layer)
            .into_iter()
            .flat_map(|m| m.keys().copied())
    }

    pub fn get(&self, layer: usize, position: usize) -> Option<&HiddenState> {
        self.layers.get(&layer)?.get(&position)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &HiddenState)> + '_ {
        self.layers
            .iter()
            .flat_map(|(&l, m)| m.iter().map(move |(&p, d)| (l, p, d)))
    }

    /// Number of `(layer, position)` slots.
    pub fn len(&self) -> usize {
        self.layers.values().map(BTreeMap::len).sum()
    }

    /// Smallest position touched at any layer.
    pub fn min_position(&self) -> Option<usize> {
        self.layers
            .values()
            .filter_map(|m| m.keys().next().copied())
            .min()
    }

    /// The same plan with every delta negated.
    pub fn negated(&self) -> Self {
        let mut out = Self::new();
        for (l, p, d) in self.iter() {
            out.insert(l, p, d.map(|x| -x));
        }
        out
    }

    /// The same plan with every delta multiplied by `factor`.
    pub fn scaled(&self, factor: f32) -> Self {
        let mut out = Self::new();
        for (l, p, d) in self.iter() {
            out.insert(l, p, d.map(|x| x * factor));
        }
        out
    }

    /// The same plan shifted by `offset` positions.
    pub fn offset(&self, offset: usize) -> Self {
        let mut out = Self::new();
        for (l, p, d) in self.iter() {
            out.insert(l, p + offset, d.clone());
        }
        out
    }
}

/// What a forward pass should record and modify.
///
/// Several plans may be attached; their deltas for one slot are summed
/// (in attachment order) before the single addition to the hidden state.
#[derive(Debug, Clone, Default)]
pub struct HookBus {
    capture: BTreeSet<usize>,
    plans: Vec<InjectionPlan>,
}

impl HookBus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn capturing(layers: impl IntoIterator<Item = usize>) -> Self {
        Self {
            capture: layers.into_iter().collect(),
            plans: Vec::new(),
        }
    }

    pub fn with_capture(mut self, layers: impl IntoIterator<Item = usize>) -> Self {
        self.capture.extend(layers);
        self
    }

    pub fn with_plan(mut self, plan: InjectionPlan) -> Self {
        self.plans.push(plan);
        self
    }

    pub fn add_plan(&mut self, plan: InjectionPlan) {
        self.plans.push(plan);
    }

    pub fn capture_layers(&self) -> &BTreeSet<usize> {
        &self.capture
    }

    pub fn plans(&self) -> &[InjectionPlan] {
        &self.plans
    }

    pub fn has_injections(&self) -> bool {
        self.plans.iter().any(|p| !p.is_empty())
    }

    /// Checks layer ids and that every injected position lies in
    /// `[start, end)`, the span about to be processed.
    pub fn validate(
        &self,
        n_layers: usize,
        d_model: usize,
        start: usize,
        end: usize,
    ) -> Result<(), ModelError> {
        if let Some(&l) = self.capture.iter().find(|&&l| l >= n_layers) {
            return Err(ModelError::LayerOutOfRange { layer: l, n_layers });
        }
        for plan in &self.plans {
            for (l, p, d) in plan.iter() {
                if l >= n_layers {
                    return Err(ModelError::LayerOutOfRange { layer: l, n_layers });
                }
                if p < start || p >= end {
                    return Err(ModelError::InjectionOutOfRange {
                        position: p,
                        start,
                        end,
                    });
                }
                if d.len() != d_model {
                    return Err(ModelError::WidthMismatch {
                        expected: d_model,
                        found: d.len(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Summed delta for one slot, or `None` when no plan touches it.
    pub(crate) fn delta_at(&self, layer: usize, position: usize) -> Option<Vec<f32>> {
        let mut acc: Option<Vec<f32>> = None;
        for d in self.plans.iter().filter_map(|p| p.get(layer, position)) {
            match acc.as_mut() {
                None => acc = Some(d.as_slice().to_vec()),
                Some(a) => a.iter_mut().zip(d.iter()).for_each(|(a, &x)| *a += x),
            }
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hs(v: &[f32]) -> HiddenState {
        HiddenState::new(v.to_vec())
    }

    #[test]
    fn plan_and_negation_sum_to_exact_zero() {
        let mut plan = InjectionPlan::new();
        plan.insert(1, 3, hs(&[0.1, -7.25, 3.3e-3]));
        let bus = HookBus::new()
            .with_plan(plan.clone())
            .with_plan(plan.negated());
        let d = bus.delta_at(1, 3).unwrap();
        assert!(d.iter().all(|&x| x == 0.0));
        assert!(bus.delta_at(0, 3).is_none());
    }

    #[test]
    fn validate_rejects_out_of_range() {
        let mut plan = InjectionPlan::new();
        plan.insert(5, 0, hs(&[0.0; 4]));
        let bus = HookBus::new().with_plan(plan);
        assert!(matches!(
            bus.validate(4, 4, 0, 10),
            Err(ModelError::LayerOutOfRange { .. })
        ));

        let mut plan = InjectionPlan::new();
        plan.insert(0, 10, hs(&[0.0; 4]));
        let bus = HookBus::new().with_plan(plan);
        assert!(matches!(
            bus.validate(4, 4, 0, 10),
            Err(ModelError::InjectionOutOfRange { .. })
        ));

        let bus = HookBus::capturing([4]);
        assert!(bus.validate(4, 4, 0, 10).is_err());
    }

    #[test]
    fn min_position_and_offset() {
        let mut plan = InjectionPlan::new();
        plan.insert(0, 7, hs(&[1.0]));
        plan.insert(2, 4, hs(&[1.0]));
        assert_eq!(plan.min_position(), Some(4));
        assert_eq!(plan.offset(10).min_position(), Some(14));
        assert_eq!(plan.len(), 2);
    }
}
