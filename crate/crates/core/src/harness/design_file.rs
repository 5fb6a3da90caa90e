//! TOML description of a counterfactual design.
//!
//! ```toml
//! nodes = ["Z1", "Z2", "Z3"]      # or `q = 3` for Z1..Zq
//! observed = ["Z3"]
//! noise_var = [1.0, 1.0, 1.0]     # optional, default 1
//! noise_mean = [0.0, 0.0, 0.0]    # optional, default 0
//! edges = [{ from = "Z1", to = "Z2", weight = 0.8 }]
//!
//! [[actions]]
//! label = "drug_a"
//! do = { Z1 = 1.0 }
//! soft = [{ node = "Z2", parents = { Z1 = -0.5 }, noise_mean = 0.0, noise_var = 1.0 }]
//!
//! [[contexts]]
//! label = "cell_1"
//! values = { Z3 = 2.5 }
//! ```
//!
//! Edges must point from an earlier node to a later one in `nodes` order.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::scm_lab::{Context, CounterfactualDesign, Intervention, LinearGaussianScm, NodeReplacement};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeSpec {
    from: String,
    to: String,
    weight: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SoftSpec {
    node: String,
    #[serde(default)]
    parents: BTreeMap<String, f64>,
    #[serde(default)]
    noise_mean: f64,
    noise_var: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActionSpec {
    label: Option<String>,
    #[serde(default, rename = "do")]
    do_values: BTreeMap<String, f64>,
    #[serde(default)]
    soft: Vec<SoftSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContextSpec {
    label: Option<String>,
    #[serde(default)]
    values: BTreeMap<String, f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DesignSpec {
    q: Option<usize>,
    nodes: Option<Vec<String>>,
    observed: Vec<String>,
    noise_mean: Option<Vec<f64>>,
    noise_var: Option<Vec<f64>>,
    #[serde(default)]
    edges: Vec<EdgeSpec>,
    actions: Vec<ActionSpec>,
    contexts: Vec<ContextSpec>,
}

struct Names(Vec<String>);

impl Names {
    fn index(&self, name: &str) -> Result<usize> {
        self.0
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::InvalidModel(format!("unknown node `{name}`")))
    }
}

/// Parses a design document.
pub fn parse_design(text: &str) -> Result<CounterfactualDesign> {
    let spec: DesignSpec = toml::from_str(text)?;
    let names = match (&spec.nodes, spec.q) {
        (Some(n), None) => n.clone(),
        (None, Some(q)) => (1..=q).map(|k| format!("Z{k}")).collect(),
        (Some(n), Some(q)) if n.len() == q => n.clone(),
        (Some(n), Some(q)) => {
            return Err(Error::InvalidModel(format!("q = {q} but {} node names", n.len())));
        }
        (None, None) => return Err(Error::InvalidModel("give either `q` or `nodes`".into())),
    };
    let q = names.len();
    let names = Names(names);

    let mut weights = DMatrix::zeros(q, q);
    for e in &spec.edges {
        let (from, to) = (names.index(&e.from)?, names.index(&e.to)?);
        weights[(to, from)] = e.weight;
    }
    let noise_mean = DVector::from_vec(spec.noise_mean.clone().unwrap_or_else(|| vec![0.0; q]));
    let noise_var = DVector::from_vec(spec.noise_var.clone().unwrap_or_else(|| vec![1.0; q]));
    let scm = LinearGaussianScm::new(weights, noise_mean, noise_var)?.with_node_names(names.0.clone())?;

    let mut actions = Vec::new();
    let mut action_labels = Vec::new();
    for (i, a) in spec.actions.iter().enumerate() {
        let mut replacements = Vec::new();
        for (node, &value) in &a.do_values {
            replacements.push(NodeReplacement {
                node: names.index(node)?,
                row: vec![0.0; q],
                noise_mean: value,
                noise_var: 0.0,
            });
        }
        for s in &a.soft {
            let mut row = vec![0.0; q];
            for (parent, &w) in &s.parents {
                row[names.index(parent)?] = w;
            }
            replacements.push(NodeReplacement {
                node: names.index(&s.node)?,
                row,
                noise_mean: s.noise_mean,
                noise_var: s.noise_var,
            });
        }
        actions.push(Intervention::soft(replacements));
        action_labels.push(a.label.clone().unwrap_or_else(|| format!("a{}", i + 1)));
    }

    let mut contexts = Vec::new();
    let mut context_labels = Vec::new();
    for (j, c) in spec.contexts.iter().enumerate() {
        let mut nodes = Vec::new();
        let mut values = Vec::new();
        for (node, &v) in &c.values {
            nodes.push(names.index(node)?);
            values.push(v);
        }
        contexts.push(Context::new(nodes, values)?);
        context_labels.push(c.label.clone().unwrap_or_else(|| format!("c{}", j + 1)));
    }

    let observed = spec
        .observed
        .iter()
        .map(|n| names.index(n))
        .collect::<Result<Vec<_>>>()?;
    CounterfactualDesign::new(scm, actions, contexts, observed)?.with_labels(action_labels, context_labels)
}

pub fn load_design(path: impl AsRef<Path>) -> Result<CounterfactualDesign> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_design(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm_lab::expand_design;

    const CHAIN: &str = r#"
        q = 2
        observed = ["Z2"]
        edges = [{ from = "Z1", to = "Z2", weight = 1.0 }]

        [[actions]]
        label = "do1"
        do = { Z1 = 1.0 }

        [[actions]]
        soft = [{ node = "Z2", parents = { Z1 = 2.0 }, noise_mean = 0.5, noise_var = 1.0 }]

        [[contexts]]
        label = "low"
        values = { Z1 = 0.0 }

        [[contexts]]
        values = { Z1 = 3.0 }
    "#;

    #[test]
    fn chain_design_expands() {
        let d = parse_design(CHAIN).unwrap();
        assert_eq!(d.action_labels, ["do1", "a2"]);
        assert_eq!(d.context_labels, ["low", "c2"]);
        let l = expand_design(&d).unwrap();
        // do(Z1 = 1): Z2 = 1 + e2, and e2 keeps its prior mean 0
        assert!((l.fiber(0, 0)[0] - 1.0).abs() < 1e-12);
        assert!((l.fiber(0, 1)[0] - 1.0).abs() < 1e-12);
        // soft: Z2 = 2 Z1 + fresh(0.5), Z1 = e1 = context value
        assert!((l.fiber(1, 1)[0] - 6.5).abs() < 1e-12);
    }

    #[test]
    fn backward_edges_and_unknown_nodes_fail() {
        let bad = CHAIN.replace(r#"from = "Z1", to = "Z2""#, r#"from = "Z2", to = "Z1""#);
        assert!(matches!(parse_design(&bad), Err(Error::NotAcyclic { .. })));
        let bad = CHAIN.replace(r#"observed = ["Z2"]"#, r#"observed = ["Z9"]"#);
        assert!(parse_design(&bad).is_err());
    }
}
