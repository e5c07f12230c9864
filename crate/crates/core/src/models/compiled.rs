use std::sync::Arc;

use crate::diffengine::{Graph, GraphBuilder};

use super::{check_len, ModelError, ObservableModel};

/// How model parameters map onto graph parameter leaves.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamLayout {
    /// Every parameter is a leaf, index for index.
    Full,
    /// `map[i]` is the compact leaf of full parameter `i`, or `None` when it
    /// is pruned to exactly 0.
    Masked(Vec<Option<usize>>),
}

impl ParamLayout {
    pub fn from_active(active: &[bool]) -> Self {
        let mut next = 0;
        let map = active
            .iter()
            .map(|&a| {
                a.then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect();
        ParamLayout::Masked(map)
    }

    pub fn num_leaves(&self, full_len: usize) -> usize {
        match self {
            ParamLayout::Full => full_len,
            ParamLayout::Masked(map) => map.iter().flatten().count(),
        }
    }

    /// Picks the active entries of a full-length vector.
    pub fn compact(&self, full: &[f64]) -> Vec<f64> {
        match self {
            ParamLayout::Full => full.to_vec(),
            ParamLayout::Masked(map) => map.iter().zip(full).filter(|(m, _)| m.is_some()).map(|(_, &v)| v).collect(),
        }
    }

    pub fn compact_mask(&self, full: &[bool]) -> Vec<bool> {
        match self {
            ParamLayout::Full => full.to_vec(),
            ParamLayout::Masked(map) => map.iter().zip(full).filter(|(m, _)| m.is_some()).map(|(_, &v)| v).collect(),
        }
    }

    /// Scatters compact values back into a full-length vector of zeros.
    pub fn expand(&self, compact: &[f64], full_len: usize) -> Vec<f64> {
        match self {
            ParamLayout::Full => compact.to_vec(),
            ParamLayout::Masked(map) => {
                let mut out = vec![0.0; full_len];
                for (i, m) in map.iter().enumerate() {
                    if let Some(k) = m {
                        out[i] = compact[*k];
                    }
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outputs {
    Observables,
    Potential,
}

/// Scratch buffers for graph sweeps; one per thread.
#[derive(Debug, Default, Clone)]
pub struct Workspace {
    values: Vec<f64>,
    adjoint: Vec<f64>,
}

/// A model frozen into a per-record graph.
#[derive(Clone)]
pub struct CompiledModel {
    model: Arc<dyn ObservableModel>,
    graph: Graph,
    layout: ParamLayout,
    constrained: Vec<bool>,
}

impl std::fmt::Debug for CompiledModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CompiledModel")
            .field("nodes", &self.graph.len())
            .field("params", &self.num_params())
            .finish()
    }
}

impl CompiledModel {
    pub fn new(model: Arc<dyn ObservableModel>, layout: ParamLayout, outputs: Outputs) -> Self {
        let full = model.num_params();
        let mut b = GraphBuilder::new();
        b.declare_inputs(model.feature_width());
        b.declare_params(layout.num_leaves(full));
        let params: Vec<_> = match &layout {
            ParamLayout::Full => (0..full).map(|i| b.param(i)).collect(),
            ParamLayout::Masked(map) => {
                assert_eq!(map.len(), full, "layout length");
                map.iter()
                    .map(|m| match m {
                        Some(k) => b.param(*k),
                        None => b.zero(),
                    })
                    .collect()
            }
        };
        let nodes = model.emit(&mut b, &params);
        let graph = match outputs {
            Outputs::Observables => b.finish(&nodes.observables),
            Outputs::Potential => b.finish(&[nodes.potential]),
        };
        let constrained = layout.compact_mask(&model.constrained_mask());
        Self {
            model,
            graph,
            layout,
            constrained,
        }
    }

    pub fn full(model: Arc<dyn ObservableModel>, outputs: Outputs) -> Self {
        Self::new(model, ParamLayout::Full, outputs)
    }

    pub fn model(&self) -> &dyn ObservableModel {
        self.model.as_ref()
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    /// Number of graph parameter leaves.
    pub fn num_params(&self) -> usize {
        self.graph.num_params()
    }

    pub fn num_outputs(&self) -> usize {
        self.graph.num_outputs()
    }

    /// Non-negativity constraints in leaf order.
    pub fn constrained_mask(&self) -> &[bool] {
        &self.constrained
    }

    pub fn features(&self, raw: &[f64]) -> Result<Vec<f64>, ModelError> {
        check_len("raw inputs", self.model.input_width(), raw.len())?;
        let mut out = Vec::with_capacity(self.model.feature_width());
        self.model.features(raw, &mut out)?;
        Ok(out)
    }

    fn check_params(&self, params: &[f64]) -> Result<(), ModelError> {
        check_len("parameters", self.num_params(), params.len())
    }

    pub fn eval(&self, features: &[f64], params: &[f64], ws: &mut Workspace) -> Result<Vec<f64>, ModelError> {
        self.check_params(params)?;
        self.graph.forward(features, params, &mut ws.values)?;
        Ok(self.graph.outputs_from(&ws.values))
    }

    /// Evaluates the outputs, then adds `Σₖ seeds(outputs)ₖ · ∂outputₖ/∂θ`
    /// into `grad`. `seeds` receives the output values and returns the seed
    /// vector, so callers can form residual-dependent seeds in one pass.
    pub fn pullback<F>(
        &self,
        features: &[f64],
        params: &[f64],
        grad: &mut [f64],
        ws: &mut Workspace,
        seeds: F,
    ) -> Result<Vec<f64>, ModelError>
    where
        F: FnOnce(&[f64]) -> Vec<f64>,
    {
        self.check_params(params)?;
        check_len("gradient", self.num_params(), grad.len())?;
        self.graph.forward(features, params, &mut ws.values)?;
        let outputs = self.graph.outputs_from(&ws.values);
        let s = seeds(&outputs);
        self.graph.backward(&ws.values, &s, &mut ws.adjoint, grad, None);
        Ok(outputs)
    }

    /// Row `k` is the parameter gradient of output `k`.
    pub fn jacobian(&self, features: &[f64], params: &[f64], ws: &mut Workspace) -> Result<Vec<Vec<f64>>, ModelError> {
        self.check_params(params)?;
        self.graph.forward(features, params, &mut ws.values)?;
        let k = self.num_outputs();
        let mut rows = Vec::with_capacity(k);
        let mut seeds = vec![0.0; k];
        for o in 0..k {
            seeds.iter_mut().for_each(|s| *s = 0.0);
            seeds[o] = 1.0;
            let mut row = vec![0.0; self.num_params()];
            self.graph.backward(&ws.values, &seeds, &mut ws.adjoint, &mut row, None);
            rows.push(row);
        }
        Ok(rows)
    }
}
