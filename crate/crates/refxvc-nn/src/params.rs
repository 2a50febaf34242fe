use std::collections::HashMap;

use ndarray::Array2;

use crate::tape::{NodeId, Tape};

/// Stable handle to a parameter in a [`ParamStore`]. Ids are dense indices
/// assigned in registration order, so iterating `0..store.len()` visits
/// parameters in a deterministic order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Flat, name-addressed collection of parameter matrices. Registration order
/// is the canonical order for optimizer state and serialization; the name map
/// exists only for lookup and never drives iteration.
#[derive(Debug, Default, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a new parameter. Panics on duplicate names — parameter
    /// layouts are static per model, so a duplicate is a construction bug.
    pub fn register(&mut self, name: &str, value: Array2<f64>) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name: {name}"
        );
        let id = self.values.len();
        self.names.push(name.to_string());
        self.values.push(value);
        self.by_name.insert(name.to_string(), id);
        ParamId(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    /// Parameters in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter())
    }

    /// Total scalar count across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Array2::len).sum()
    }
}

/// Per-tape cache mapping parameters to tape nodes, so each parameter enters
/// a given tape exactly once no matter how many modules reference it.
pub struct ParamNodes {
    nodes: Vec<Option<NodeId>>,
    trainable: bool,
}

impl ParamNodes {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            nodes: vec![None; store.len()],
            trainable: true,
        }
    }

    /// Like [`ParamNodes::new`], but parameters enter the tape as constants:
    /// gradient flows *through* computations using them without being
    /// accumulated *into* them. Used when one network's loss is evaluated
    /// through another network whose weights this optimizer must not touch.
    pub fn frozen(store: &ParamStore) -> Self {
        Self {
            nodes: vec![None; store.len()],
            trainable: false,
        }
    }

    /// Node for `id`, inserting the parameter on first use (as a
    /// differentiable leaf, or a constant when frozen).
    pub fn node(&mut self, tape: &mut Tape, store: &ParamStore, id: ParamId) -> NodeId {
        let trainable = self.trainable;
        *self.nodes[id.0].get_or_insert_with(|| {
            let v = store.value(id).clone();
            if trainable {
                tape.var(v)
            } else {
                tape.constant(v)
            }
        })
    }

    /// Dense gradient vector in parameter order after a backward sweep.
    /// Parameters that never entered the tape (or received no gradient) get
    /// zeros, which lets the optimizer treat every step uniformly.
    pub fn collect_grads(&self, tape: &Tape, store: &ParamStore) -> Vec<Array2<f64>> {
        (0..store.len())
            .map(|i| match self.nodes[i].and_then(|n| tape.grad(n)) {
                Some(g) => g.clone(),
                None => Array2::zeros(store.value(ParamId(i)).raw_dim()),
            })
            .collect()
    }
}
