use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use super::{ModelPipeline, OutPort, Source};
use crate::value::DType;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationIssue {
    pub node: Option<String>,
    pub reason: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.node {
            Some(n) => write!(f, "node '{n}': {}", self.reason),
            None => f.write_str(&self.reason),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn mentions(&self, needle: &str) -> bool {
        self.issues.iter().any(|i| i.reason.contains(needle))
    }

    fn push(&mut self, node: Option<&str>, reason: impl Into<String>) {
        self.issues.push(ValidationIssue {
            node: node.map(str::to_string),
            reason: reason.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.issues.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join("; "))
    }
}

/// Per-node output dtypes, keyed by node id then port.
pub type NodeTypes = HashMap<String, BTreeMap<OutPort, Vec<DType>>>;

/// Node indices in a dependency-respecting order (ties by declaration order),
/// or the ids of nodes left on a cycle.
pub fn topo_nodes(p: &ModelPipeline) -> Result<Vec<usize>, Vec<String>> {
    let index: HashMap<&str, usize> = p
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.as_str(), i))
        .collect();
    let mut indegree = vec![0usize; p.nodes.len()];
    let mut consumers: Vec<Vec<usize>> = vec![vec![]; p.nodes.len()];
    for e in &p.edges {
        let (Some(&to), Source::Node { node, .. }) = (index.get(e.to.as_str()), &e.from) else {
            continue;
        };
        if let Some(&from) = index.get(node.as_str()) {
            indegree[to] += 1;
            consumers[from].push(to);
        }
    }
    let mut ready: std::collections::BTreeSet<usize> =
        (0..p.nodes.len()).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(p.nodes.len());
    while let Some(&next) = ready.iter().next() {
        ready.remove(&next);
        order.push(next);
        for &c in &consumers[next] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() == p.nodes.len() {
        Ok(order)
    } else {
        Err((0..p.nodes.len())
            .filter(|&i| indegree[i] > 0)
            .map(|i| p.nodes[i].id.clone())
            .collect())
    }
}

/// Checks every structural invariant and returns one issue per violation.
pub fn validate(p: &ModelPipeline) -> ValidationReport {
    validate_with_types(p).0
}

pub(crate) fn validate_with_types(p: &ModelPipeline) -> (ValidationReport, NodeTypes) {
    let mut report = ValidationReport::default();
    let mut types = NodeTypes::new();

    let mut seen_inputs = HashSet::new();
    for input in &p.inputs {
        if !seen_inputs.insert(input.name.as_str()) {
            report.push(None, format!("duplicate pipeline input '{}'", input.name));
        }
    }
    let mut seen_nodes = HashSet::new();
    for n in &p.nodes {
        if !seen_nodes.insert(n.id.as_str()) {
            report.push(Some(&n.id), "duplicate node id");
        }
        for issue in n.op.check_params() {
            report.push(Some(&n.id), issue);
        }
    }

    let input_types: HashMap<&str, DType> =
        p.inputs.iter().map(|i| (i.name.as_str(), i.dtype)).collect();

    // Edge wiring: endpoints exist, ports exist, each port wired exactly once.
    let mut ports: HashMap<&str, Vec<usize>> = HashMap::new();
    for e in &p.edges {
        let Some(target) = p.node(&e.to) else {
            report.push(Some(&e.to), format!("dangling edge: target node '{}' does not exist", e.to));
            continue;
        };
        match &e.from {
            Source::Input { input } if !input_types.contains_key(input.as_str()) => {
                report.push(
                    Some(&target.id),
                    format!("dangling edge: undeclared pipeline input '{input}'"),
                );
            }
            Source::Node { node, port } => match p.node(node) {
                None => report.push(
                    Some(&target.id),
                    format!("dangling edge: undeclared node output '{node}'"),
                ),
                Some(src) if !src.op.output_ports().contains(port) => report.push(
                    Some(&target.id),
                    format!("dangling edge: node '{node}' has no '{port}' output"),
                ),
                _ => {}
            },
            _ => {}
        }
        ports.entry(target.id.as_str()).or_default().push(e.port);
    }
    for n in &p.nodes {
        let mut wired = ports.get(n.id.as_str()).cloned().unwrap_or_default();
        wired.sort_unstable();
        for w in wired.windows(2) {
            if w[0] == w[1] {
                report.push(Some(&n.id), format!("input port {} wired more than once", w[0]));
            }
        }
        wired.dedup();
        if let Some(gap) = (0..wired.len()).find(|i| wired[*i] != *i) {
            report.push(Some(&n.id), format!("input port {gap} is not wired"));
        }
        match &n.op {
            super::MlOperator::Constant { .. } if !wired.is_empty() => {
                report.push(Some(&n.id), "Constant takes no inputs")
            }
            super::MlOperator::Concat { arity } if wired.len() != *arity => report.push(
                Some(&n.id),
                format!("Concat declares arity {arity} but {} ports are wired", wired.len()),
            ),
            super::MlOperator::Constant { .. } | super::MlOperator::Concat { .. } => {}
            _ if wired.is_empty() => report.push(Some(&n.id), "node has no inputs"),
            _ => {}
        }
    }

    let order = match topo_nodes(p) {
        Ok(order) => order,
        Err(stuck) => {
            report.push(None, format!("cycle through nodes {}", stuck.join(", ")));
            return (report, types);
        }
    };

    if !report.is_empty() {
        return (report, types);
    }

    // Width and dtype propagation in dependency order.
    for idx in order {
        let node = &p.nodes[idx];
        let mut input = Vec::new();
        let mut ok = true;
        for src in p.node_inputs(&node.id) {
            match &src {
                Source::Input { input: name } => input.push(input_types[name.as_str()]),
                Source::Node { node: from, port } => match types.get(from).and_then(|t| t.get(port)) {
                    Some(t) => input.extend_from_slice(t),
                    None => ok = false,
                },
            }
        }
        if !ok {
            continue;
        }
        match node.op.output_types(&input) {
            Ok(outs) => {
                types.insert(node.id.clone(), outs.into_iter().collect());
            }
            Err(reason) => report.push(Some(&node.id), reason),
        }
    }

    let mut check_output = |name: &str, src: &Source| match src {
        Source::Input { .. } => report.push(None, format!("{name} output must reference a node")),
        Source::Node { node, port } => match types.get(node).and_then(|t| t.get(port)) {
            None if p.node(node).is_none() => {
                report.push(None, format!("{name} output references unknown node '{node}'"))
            }
            None => report.push(
                Some(node),
                format!("{name} output references missing port '{port}'"),
            ),
            Some(t) if t.len() != 1 || !t[0].is_numeric() => report.push(
                Some(node),
                format!("{name} output must be a single numeric value, got width {}", t.len()),
            ),
            Some(_) => {}
        },
    };
    check_output("label", &p.outputs.label);
    if let Some(score) = &p.outputs.score {
        check_output("score", score);
    }
    (report, types)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{MlOperator, PipelineBuilder};
    use crate::value::Value;

    fn trivial() -> ModelPipeline {
        PipelineBuilder::new("t")
            .input("x", DType::Float64)
            .node(
                "s",
                MlOperator::Scaler {
                    offsets: vec![0.0],
                    scales: vec![1.0],
                },
                vec![Source::input("x")],
            )
            .node(
                "m",
                MlOperator::LinearModel {
                    weights: vec![vec![1.0]],
                    intercepts: vec![0.0],
                    post: Default::default(),
                },
                vec![Source::node("s")],
            )
            .model_outputs("m")
            .build()
    }

    #[test]
    fn trivial_pipeline_is_valid() {
        assert!(validate(&trivial()).is_empty(), "{}", validate(&trivial()));
    }

    #[test]
    fn cycle_is_reported() {
        let mut p = trivial();
        p.edges[0].from = Source::node_port("m", OutPort::Label);
        let report = validate(&p);
        assert!(report.mentions("cycle"), "{report}");
    }

    #[test]
    fn duplicate_category_is_reported() {
        let p = PipelineBuilder::new("d")
            .input("c", DType::String)
            .node(
                "ohe",
                MlOperator::OneHotEncoder {
                    categories: vec![vec![Value::Str("A".into()), Value::Str("A".into())]],
                },
                vec![Source::input("c")],
            )
            .build();
        assert!(validate(&p).mentions("duplicate category"));
    }

    #[test]
    fn width_mismatch_is_reported() {
        let mut p = trivial();
        if let MlOperator::LinearModel { weights, .. } = &mut p.nodes[1].op {
            weights.push(vec![2.0]);
        }
        let report = validate(&p);
        assert!(report.mentions("weight rows"), "{report}");
    }

    #[test]
    fn port_wiring_must_be_exact() {
        let mut p = trivial();
        p.edges.push(p.edges[1].clone());
        assert!(validate(&p).mentions("wired more than once"));
    }
}
