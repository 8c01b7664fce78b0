//! The unified plan: one DAG holding relational operators and the inlined
//! model pipeline.
//!
//! Relational nodes produce tables. ML nodes produce one vector per output
//! port and read either single relational columns (`Port::Column`) or other
//! ML ports. All ML nodes of a plan are row-aligned with the model-input
//! projection they read from.

mod build;
mod explain;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::executor::Field;
use crate::frontend::CmpOp;
use crate::ml2dnn::TensorProgram;
use crate::ml2sql::SqlExpr;
use crate::pipeline::{
    MlOperator, ModelPipeline, OpKind, OutPort, PipelineInput, PipelineNode, PipelineOutputs,
    Source, Edge,
};
use crate::value::{DType, Value};

pub use build::build_ir;
pub use explain::{explain, to_dot};

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Output port of a plan node. Relational nodes expose `Out` (the whole
/// table) and `Column(name)` (one column, for ML consumers).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Port {
    Out,
    Label,
    Score,
    Column(String),
}

impl Port {
    pub fn from_out_port(p: OutPort) -> Port {
        match p {
            OutPort::Out => Port::Out,
            OutPort::Label => Port::Label,
            OutPort::Score => Port::Score,
        }
    }

    pub fn as_out_port(&self) -> Option<OutPort> {
        match self {
            Port::Out => Some(OutPort::Out),
            Port::Label => Some(OutPort::Label),
            Port::Score => Some(OutPort::Score),
            Port::Column(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PortRef {
    pub node: NodeId,
    pub port: Port,
}

impl PortRef {
    pub fn out(node: NodeId) -> PortRef {
        PortRef {
            node,
            port: Port::Out,
        }
    }

    pub fn column(node: NodeId, name: &str) -> PortRef {
        PortRef {
            node,
            port: Port::Column(name.into()),
        }
    }
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.port {
            Port::Out => write!(f, "{}", self.node),
            Port::Label => write!(f, "{}.label", self.node),
            Port::Score => write!(f, "{}.score", self.node),
            Port::Column(c) => write!(f, "{}[{c}]", self.node),
        }
    }
}

/// `column op literal` over a plan column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanPredicate {
    pub column: String,
    pub op: CmpOp,
    pub literal: Value,
}

impl fmt::Display for PlanPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.literal {
            Value::Str(s) => write!(f, "{} {} '{}'", self.column, self.op, s.replace('\'', "''")),
            v => write!(f, "{} {} {v}", self.column, self.op),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundOutput {
    pub name: String,
    pub port: OutPort,
}

/// A named expression appended to a table by `Compute`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binding {
    pub name: String,
    pub expr: SqlExpr,
    pub dtype: DType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum PlanOp {
    /// Reads `columns` (bare names) of `table`; output columns are `alias.name`.
    Scan {
        table: String,
        alias: String,
        columns: Vec<Field>,
    },
    Project {
        columns: Vec<String>,
    },
    /// Conjunction of predicates; an empty list keeps every row.
    Filter {
        predicates: Vec<PlanPredicate>,
    },
    /// Inner equi-join; inputs are `[left, right]`.
    Join {
        left: String,
        right: String,
    },
    Ml(MlOperator),
    /// A model compiled to a tensor program; outputs `label` and `score`.
    Tensor(TensorProgram),
    /// Attaches model outputs to the relation. Inputs: `[relation, label, score?]`.
    PredictBoundary {
        outputs: Vec<BoundOutput>,
    },
    Compute {
        bindings: Vec<Binding>,
    },
    /// A relation known to be empty, e.g. after contradictory predicates.
    Empty {
        columns: Vec<Field>,
    },
}

impl PlanOp {
    pub fn name(&self) -> &'static str {
        match self {
            PlanOp::Scan { .. } => "Scan",
            PlanOp::Project { .. } => "Project",
            PlanOp::Filter { .. } => "Filter",
            PlanOp::Join { .. } => "Join",
            PlanOp::Ml(op) => op.kind().name(),
            PlanOp::Tensor(_) => "Tensor",
            PlanOp::PredictBoundary { .. } => "PredictBoundary",
            PlanOp::Compute { .. } => "Compute",
            PlanOp::Empty { .. } => "Empty",
        }
    }

    pub fn is_relational(&self) -> bool {
        !matches!(self, PlanOp::Ml(_) | PlanOp::Tensor(_))
    }

    pub fn ml(&self) -> Option<&MlOperator> {
        match self {
            PlanOp::Ml(op) => Some(op),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanNode {
    pub op: PlanOp,
    pub inputs: Vec<PortRef>,
    /// Originating pipeline node id, kept for explain output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Pipeline input `input` is fed from relational column `column`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnBinding {
    pub input: String,
    pub column: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub nodes: BTreeMap<NodeId, PlanNode>,
    pub root: NodeId,
    pub column_map: Vec<ColumnBinding>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Output shape of a node.
#[derive(Debug, Clone, PartialEq)]
pub enum Schema {
    Relation(Vec<Field>),
    Vectors(Vec<(OutPort, Vec<DType>)>),
}

impl Schema {
    pub fn fields(&self) -> Option<&[Field]> {
        match self {
            Schema::Relation(f) => Some(f),
            Schema::Vectors(_) => None,
        }
    }

    pub fn port(&self, port: OutPort) -> Option<&[DType]> {
        match self {
            Schema::Vectors(ports) => ports.iter().find(|(p, _)| *p == port).map(|(_, d)| d.as_slice()),
            Schema::Relation(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IrError {
    #[error("bind error: {0}")]
    Bind(String),
    #[error("plan has a cycle through {0:?}")]
    Cycle(Vec<NodeId>),
    #[error("arity error: node has {expected} inputs, replacement takes {found}")]
    Arity { expected: usize, found: usize },
    #[error("schema error at {node}: {message}")]
    Schema { node: NodeId, message: String },
    #[error("no node {0}")]
    MissingNode(NodeId),
}

/// Replacement for a single node, see [`Plan::replace_node`].
#[derive(Debug, Clone, PartialEq)]
pub struct Subgraph {
    /// Number of inputs the subgraph consumes; must equal the old node's.
    pub arity: usize,
    pub nodes: Vec<SubNode>,
    pub output: SubRef,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubNode {
    pub op: PlanOp,
    pub inputs: Vec<SubRef>,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SubRef {
    /// The old node's input in slot `i`.
    Input(usize),
    /// Port of an earlier node of the subgraph.
    Local(usize, Port),
}

impl Plan {
    pub fn node(&self, id: NodeId) -> &PlanNode {
        &self.nodes[&id]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut PlanNode {
        self.nodes.get_mut(&id).expect("node exists")
    }

    fn fresh_id(&self) -> NodeId {
        NodeId(self.nodes.keys().next_back().map_or(0, |k| k.0 + 1))
    }

    pub fn add(&mut self, op: PlanOp, inputs: Vec<PortRef>, label: Option<String>) -> NodeId {
        let id = self.fresh_id();
        self.nodes.insert(id, PlanNode { op, inputs, label });
        id
    }

    /// Nodes reading any port of `id`, with the input slot they read it in.
    pub fn consumers(&self, id: NodeId) -> Vec<(NodeId, usize)> {
        let mut out = Vec::new();
        for (nid, n) in &self.nodes {
            for (slot, r) in n.inputs.iter().enumerate() {
                if r.node == id {
                    out.push((*nid, slot));
                }
            }
        }
        out
    }

    /// Makes every reader of `from` read `to` instead.
    pub fn redirect(&mut self, from: &PortRef, to: &PortRef) {
        for n in self.nodes.values_mut() {
            for r in n.inputs.iter_mut() {
                if r == from {
                    *r = to.clone();
                }
            }
        }
    }

    /// Drops nodes unreachable from the root and column bindings whose
    /// column no ML node reads any more.
    pub fn gc(&mut self) {
        let mut live = BTreeSet::new();
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            if live.insert(id) {
                if let Some(n) = self.nodes.get(&id) {
                    stack.extend(n.inputs.iter().map(|r| r.node));
                }
            }
        }
        self.nodes.retain(|id, _| live.contains(id));
        let read = self.model_input_columns();
        self.column_map.retain(|b| read.contains(&b.column));
    }

    /// Relational columns read by ML (or tensor) nodes.
    pub fn model_input_columns(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for n in self.nodes.values() {
            if !n.op.is_relational() {
                for r in &n.inputs {
                    if let Port::Column(c) = &r.port {
                        out.insert(c.clone());
                    }
                }
            }
        }
        out
    }

    /// The projection whose columns feed the model, if any ML node still
    /// reads relational columns.
    pub fn model_input_project(&self) -> Option<NodeId> {
        self.nodes.iter().find_map(|(_, n)| {
            if n.op.is_relational() {
                return None;
            }
            n.inputs.iter().find_map(|r| match r.port {
                Port::Column(_) if matches!(self.node(r.node).op, PlanOp::Project { .. }) => {
                    Some(r.node)
                }
                _ => None,
            })
        })
    }

    pub fn boundary(&self) -> Option<NodeId> {
        self.find(|op| matches!(op, PlanOp::PredictBoundary { .. }))
    }

    pub fn find(&self, pred: impl Fn(&PlanOp) -> bool) -> Option<NodeId> {
        self.nodes.iter().find(|(_, n)| pred(&n.op)).map(|(id, _)| *id)
    }

    /// ML and tensor nodes, in id order.
    pub fn ml_nodes(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|(_, n)| !n.op.is_relational())
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn count_kind(&self, kind: OpKind) -> usize {
        self.nodes
            .values()
            .filter(|n| n.op.ml().is_some_and(|op| op.kind() == kind))
            .count()
    }

    /// Reachable nodes over all trees of all ensembles.
    pub fn tree_node_count(&self) -> usize {
        self.nodes
            .values()
            .map(|n| match &n.op {
                PlanOp::Ml(MlOperator::TreeEnsemble { trees, .. }) => {
                    trees.iter().map(|t| t.node_count()).sum()
                }
                _ => 0,
            })
            .sum()
    }

    /// Total number of columns read by all scans.
    pub fn scanned_columns(&self) -> usize {
        self.nodes
            .values()
            .map(|n| match &n.op {
                PlanOp::Scan { columns, .. } => columns.len(),
                _ => 0,
            })
            .sum()
    }

    /// Qualified names of scanned columns, for diagnostics and tests.
    pub fn scanned_column_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for n in self.nodes.values() {
            if let PlanOp::Scan { alias, columns, .. } = &n.op {
                out.extend(columns.iter().map(|c| format!("{alias}.{}", c.name)));
            }
        }
        out
    }

    pub fn is_empty_result(&self) -> bool {
        matches!(self.node(self.root).op, PlanOp::Empty { .. })
    }

    /// Kahn's algorithm over reachable and unreachable nodes alike; among
    /// ready nodes the smallest id goes first.
    pub fn topo_order(&self) -> Result<Vec<NodeId>, IrError> {
        let mut indeg: BTreeMap<NodeId, usize> = self.nodes.keys().map(|k| (*k, 0)).collect();
        let mut readers: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for (id, n) in &self.nodes {
            let mut seen = BTreeSet::new();
            for r in &n.inputs {
                if !self.nodes.contains_key(&r.node) {
                    return Err(IrError::MissingNode(r.node));
                }
                if seen.insert(r.node) {
                    *indeg.get_mut(id).expect("node") += 1;
                    readers.entry(r.node).or_default().push(*id);
                }
            }
        }
        let mut ready: BTreeSet<NodeId> =
            indeg.iter().filter(|(_, d)| **d == 0).map(|(k, _)| *k).collect();
        let mut out = Vec::with_capacity(self.nodes.len());
        while let Some(id) = ready.pop_first() {
            out.push(id);
            for r in readers.get(&id).into_iter().flatten() {
                let d = indeg.get_mut(r).expect("node");
                *d -= 1;
                if *d == 0 {
                    ready.insert(*r);
                }
            }
        }
        if out.len() != self.nodes.len() {
            let stuck = indeg.into_iter().filter(|(_, d)| *d > 0).map(|(k, _)| k).collect();
            return Err(IrError::Cycle(stuck));
        }
        Ok(out)
    }

    /// Propagates schemas bottom-up, checking every node against its inputs.
    pub fn schemas(&self) -> Result<BTreeMap<NodeId, Schema>, IrError> {
        let order = self.topo_order()?;
        let mut out: BTreeMap<NodeId, Schema> = BTreeMap::new();
        for id in order {
            let n = self.node(id);
            let s = node_schema(id, n, &out)?;
            out.insert(id, s);
        }
        if !self.nodes.contains_key(&self.root) {
            return Err(IrError::MissingNode(self.root));
        }
        if out[&self.root].fields().is_none() {
            return Err(IrError::Schema {
                node: self.root,
                message: "root must produce a relation".into(),
            });
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), IrError> {
        self.schemas().map(|_| ())
    }

    pub fn output_fields(&self) -> Result<Vec<Field>, IrError> {
        let mut s = self.schemas()?;
        match s.remove(&self.root) {
            Some(Schema::Relation(f)) => Ok(f),
            _ => unreachable!("checked by schemas"),
        }
    }

    /// Replaces node `old` by `sub`. Readers of `old` read the subgraph's
    /// output instead (same port names), then the plan is revalidated.
    pub fn replace_node(&self, old: NodeId, sub: &Subgraph) -> Result<Plan, IrError> {
        let old_node = self.nodes.get(&old).ok_or(IrError::MissingNode(old))?.clone();
        if sub.arity != old_node.inputs.len() {
            return Err(IrError::Arity {
                expected: old_node.inputs.len(),
                found: sub.arity,
            });
        }
        let mut plan = self.clone();
        let mut ids: Vec<NodeId> = Vec::with_capacity(sub.nodes.len());
        let resolve = |r: &SubRef, ids: &[NodeId]| -> Result<PortRef, IrError> {
            match r {
                SubRef::Input(i) => old_node.inputs.get(*i).cloned().ok_or(IrError::Arity {
                    expected: old_node.inputs.len(),
                    found: i + 1,
                }),
                SubRef::Local(k, port) => match ids.get(*k) {
                    Some(id) => Ok(PortRef {
                        node: *id,
                        port: port.clone(),
                    }),
                    None => Err(IrError::Schema {
                        node: old,
                        message: format!("subgraph refers to node {k} before it exists"),
                    }),
                },
            }
        };
        for sn in &sub.nodes {
            let inputs = sn
                .inputs
                .iter()
                .map(|r| resolve(r, &ids))
                .collect::<Result<Vec<_>, _>>()?;
            ids.push(plan.add(sn.op.clone(), inputs, sn.label.clone()));
        }
        let target = resolve(&sub.output, &ids)?;
        for n in plan.nodes.values_mut() {
            for r in n.inputs.iter_mut() {
                if r.node == old {
                    r.node = target.node;
                    if target.port != Port::Out && r.port == Port::Out {
                        r.port = target.port.clone();
                    }
                }
            }
        }
        if plan.root == old {
            plan.root = target.node;
        }
        plan.nodes.remove(&old);
        plan.gc();
        plan.validate()?;
        Ok(plan)
    }

    /// Rebuilds the ML part of the plan as a stand-alone pipeline whose
    /// inputs are the relational columns it reads.
    pub fn ml_segment(&self) -> Option<ModelPipeline> {
        let boundary = self.boundary()?;
        let b = self.node(boundary);
        let schemas = self.schemas().ok()?;
        let order = self.topo_order().ok()?;
        let name_of = |id: NodeId| format!("n{}", id.0);
        let mut inputs: Vec<PipelineInput> = Vec::new();
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for id in order {
            let n = self.node(id);
            let PlanOp::Ml(op) = &n.op else { continue };
            for (port, r) in n.inputs.iter().enumerate() {
                let from = match &r.port {
                    Port::Column(c) => {
                        if !inputs.iter().any(|i| &i.name == c) {
                            let dtype = schemas[&r.node]
                                .fields()?
                                .iter()
                                .find(|f| &f.name == c)?
                                .dtype;
                            inputs.push(PipelineInput {
                                name: c.clone(),
                                dtype,
                            });
                        }
                        Source::input(c)
                    }
                    p => Source::node_port(&name_of(r.node), p.as_out_port()?),
                };
                edges.push(Edge {
                    from,
                    to: name_of(id),
                    port,
                });
            }
            nodes.push(PipelineNode {
                id: name_of(id),
                op: op.clone(),
            });
        }
        let src = |r: &PortRef| Source::node_port(&name_of(r.node), r.port.as_out_port().unwrap_or_default());
        Some(ModelPipeline {
            name: "segment".into(),
            inputs,
            nodes,
            edges,
            outputs: PipelineOutputs {
                label: src(b.inputs.get(1)?),
                score: b.inputs.get(2).map(src),
            },
        })
    }

    /// Column constraints from Filter nodes on the path from `from` down to
    /// the scans, in plan order.
    pub fn filters_below(&self, from: NodeId) -> Vec<PlanPredicate> {
        let mut out = Vec::new();
        let mut stack = vec![from];
        let mut seen = BTreeSet::new();
        while let Some(id) = stack.pop() {
            if !seen.insert(id) {
                continue;
            }
            let n = self.node(id);
            if !n.op.is_relational() {
                continue;
            }
            if let PlanOp::Filter { predicates } = &n.op {
                out.extend(predicates.iter().cloned());
            }
            if matches!(n.op, PlanOp::PredictBoundary { .. }) {
                stack.push(n.inputs[0].node);
            } else {
                stack.extend(n.inputs.iter().map(|r| r.node));
            }
        }
        out
    }
}

fn schema_err(node: NodeId, message: impl Into<String>) -> IrError {
    IrError::Schema {
        node,
        message: message.into(),
    }
}

fn relation_of<'a>(
    id: NodeId,
    r: &PortRef,
    done: &'a BTreeMap<NodeId, Schema>,
) -> Result<&'a [Field], IrError> {
    if r.port != Port::Out {
        return Err(schema_err(id, format!("relational input {r} must use the whole table")));
    }
    done[&r.node]
        .fields()
        .ok_or_else(|| schema_err(id, format!("input {r} is not a relation")))
}

fn vector_of(id: NodeId, r: &PortRef, done: &BTreeMap<NodeId, Schema>) -> Result<Vec<DType>, IrError> {
    let s = &done[&r.node];
    match (&r.port, s) {
        (Port::Column(c), Schema::Relation(fields)) => fields
            .iter()
            .find(|f| &f.name == c)
            .map(|f| vec![f.dtype])
            .ok_or_else(|| schema_err(id, format!("input {r}: no column '{c}'"))),
        (p, Schema::Vectors(_)) => p
            .as_out_port()
            .and_then(|op| s.port(op))
            .map(<[DType]>::to_vec)
            .ok_or_else(|| schema_err(id, format!("input {r}: no such port"))),
        _ => Err(schema_err(id, format!("input {r} does not carry a vector"))),
    }
}

fn check_unique(id: NodeId, fields: &[Field]) -> Result<(), IrError> {
    for (i, f) in fields.iter().enumerate() {
        if fields[..i].iter().any(|g| g.name == f.name) {
            return Err(schema_err(id, format!("duplicate column '{}'", f.name)));
        }
    }
    Ok(())
}

fn node_schema(id: NodeId, n: &PlanNode, done: &BTreeMap<NodeId, Schema>) -> Result<Schema, IrError> {
    let want_inputs = |k: usize| -> Result<(), IrError> {
        if n.inputs.len() != k {
            return Err(schema_err(
                id,
                format!("{} takes {k} inputs, has {}", n.op.name(), n.inputs.len()),
            ));
        }
        Ok(())
    };
    let find = |fields: &[Field], c: &str| -> Result<Field, IrError> {
        fields
            .iter()
            .find(|f| f.name == c)
            .cloned()
            .ok_or_else(|| schema_err(id, format!("no column '{c}'")))
    };
    match &n.op {
        PlanOp::Scan { alias, columns, .. } => {
            want_inputs(0)?;
            let fields: Vec<Field> = columns
                .iter()
                .map(|c| Field::new(format!("{alias}.{}", c.name), c.dtype))
                .collect();
            check_unique(id, &fields)?;
            Ok(Schema::Relation(fields))
        }
        PlanOp::Project { columns } => {
            want_inputs(1)?;
            let input = relation_of(id, &n.inputs[0], done)?;
            let fields = columns
                .iter()
                .map(|c| find(input, c))
                .collect::<Result<Vec<_>, _>>()?;
            check_unique(id, &fields)?;
            Ok(Schema::Relation(fields))
        }
        PlanOp::Filter { predicates } => {
            want_inputs(1)?;
            let input = relation_of(id, &n.inputs[0], done)?;
            for p in predicates {
                let f = find(input, &p.column)?;
                if !p.literal.compatible_with(f.dtype) {
                    return Err(schema_err(
                        id,
                        format!("predicate {p} compares {} with {}", f.dtype, p.literal.dtype()),
                    ));
                }
            }
            Ok(Schema::Relation(input.to_vec()))
        }
        PlanOp::Join { left, right } => {
            want_inputs(2)?;
            let l = relation_of(id, &n.inputs[0], done)?;
            let r = relation_of(id, &n.inputs[1], done)?;
            let lf = find(l, left)?;
            let rf = find(r, right)?;
            if lf.dtype.is_numeric() != rf.dtype.is_numeric() {
                return Err(schema_err(id, format!("join key types differ: {} vs {}", lf.dtype, rf.dtype)));
            }
            let fields: Vec<Field> = l.iter().chain(r).cloned().collect();
            check_unique(id, &fields)?;
            Ok(Schema::Relation(fields))
        }
        PlanOp::Ml(op) => {
            let mut widths = Vec::new();
            for r in &n.inputs {
                widths.extend(vector_of(id, r, done)?);
            }
            if let MlOperator::Concat { arity } = op {
                if *arity != n.inputs.len() {
                    return Err(schema_err(
                        id,
                        format!("Concat arity {arity} but {} inputs", n.inputs.len()),
                    ));
                }
            }
            if let MlOperator::Constant { .. } = op {
                want_inputs(0)?;
            }
            let issues = op.check_params();
            if let Some(i) = issues.first() {
                return Err(schema_err(id, i.clone()));
            }
            op.output_types(&widths)
                .map(Schema::Vectors)
                .map_err(|e| schema_err(id, e))
        }
        PlanOp::Tensor(prog) => {
            let mut widths = Vec::new();
            for r in &n.inputs {
                widths.extend(vector_of(id, r, done)?);
            }
            if widths.len() != prog.n_features {
                return Err(schema_err(
                    id,
                    format!("tensor program expects {} features, gets {}", prog.n_features, widths.len()),
                ));
            }
            if widths.iter().any(|d| !d.is_numeric()) {
                return Err(schema_err(id, "tensor program inputs must be numeric"));
            }
            Ok(Schema::Vectors(vec![
                (OutPort::Label, vec![DType::Float64]),
                (OutPort::Score, vec![DType::Float64]),
            ]))
        }
        PlanOp::PredictBoundary { outputs } => {
            if n.inputs.len() < 2 || n.inputs.len() > 3 {
                return Err(schema_err(id, "PredictBoundary takes a relation, a label and an optional score"));
            }
            let mut fields = relation_of(id, &n.inputs[0], done)?.to_vec();
            for (slot, what) in [(1, "label"), (2, "score")] {
                if let Some(r) = n.inputs.get(slot) {
                    let v = vector_of(id, r, done)?;
                    if v.len() != 1 || !v[0].is_numeric() {
                        return Err(schema_err(id, format!("{what} input must be one numeric value")));
                    }
                }
            }
            for o in outputs {
                let slot = match o.port {
                    OutPort::Label => 1,
                    OutPort::Score => 2,
                    OutPort::Out => return Err(schema_err(id, "outputs bind label or score")),
                };
                if n.inputs.len() <= slot {
                    return Err(schema_err(id, format!("output '{}' has no {} input", o.name, o.port)));
                }
                fields.push(Field::new(o.name.clone(), DType::Float64));
            }
            check_unique(id, &fields)?;
            Ok(Schema::Relation(fields))
        }
        PlanOp::Compute { bindings } => {
            want_inputs(1)?;
            let mut fields = relation_of(id, &n.inputs[0], done)?.to_vec();
            for b in bindings {
                let mut cols = Vec::new();
                b.expr.columns(&mut cols);
                for c in cols {
                    find(&fields, &c)?;
                }
                fields.push(Field::new(b.name.clone(), b.dtype));
            }
            check_unique(id, &fields)?;
            Ok(Schema::Relation(fields))
        }
        PlanOp::Empty { columns } => {
            want_inputs(0)?;
            Ok(Schema::Relation(columns.clone()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scan(plan: &mut Plan) -> NodeId {
        plan.add(
            PlanOp::Scan {
                table: "t".into(),
                alias: "t".into(),
                columns: vec![Field::new("a", DType::Int64), Field::new("b", DType::Float64)],
            },
            vec![],
            None,
        )
    }

    fn empty_plan() -> Plan {
        Plan {
            nodes: BTreeMap::new(),
            root: NodeId(0),
            column_map: vec![],
            notes: vec![],
        }
    }

    fn chain() -> Plan {
        let mut p = empty_plan();
        let s = scan(&mut p);
        let f = p.add(PlanOp::Filter { predicates: vec![] }, vec![PortRef::out(s)], None);
        let pr = p.add(
            PlanOp::Project {
                columns: vec!["t.a".into()],
            },
            vec![PortRef::out(f)],
            None,
        );
        p.root = pr;
        p
    }

    #[test]
    fn topo_order_of_chain_and_diamond() {
        let p = chain();
        assert_eq!(p.topo_order().unwrap(), vec![NodeId(0), NodeId(1), NodeId(2)]);

        let mut d = empty_plan();
        let s = scan(&mut d);
        let l = d.add(PlanOp::Filter { predicates: vec![] }, vec![PortRef::out(s)], None);
        let r = d.add(PlanOp::Filter { predicates: vec![] }, vec![PortRef::out(s)], None);
        let j = d.add(
            PlanOp::Project { columns: vec![] },
            vec![PortRef::out(l)],
            None,
        );
        let _ = r;
        d.root = j;
        let order = d.topo_order().unwrap();
        assert_eq!(order, vec![NodeId(0), NodeId(1), NodeId(2), NodeId(3)]);
        assert_eq!(d.topo_order().unwrap(), order);
    }

    #[test]
    fn injected_cycle_is_reported() {
        let mut p = chain();
        p.node_mut(NodeId(0)).inputs.push(PortRef::out(NodeId(2)));
        assert!(matches!(p.topo_order(), Err(IrError::Cycle(_))));
    }

    #[test]
    fn replace_true_filter_with_identity() {
        let p = chain();
        let sub = Subgraph {
            arity: 1,
            nodes: vec![],
            output: SubRef::Input(0),
        };
        let q = p.replace_node(NodeId(1), &sub).unwrap();
        assert_eq!(q.nodes.len(), 2);
        assert_eq!(q.node(NodeId(2)).inputs, vec![PortRef::out(NodeId(0))]);
        assert_eq!(q.output_fields().unwrap(), p.output_fields().unwrap());
    }

    #[test]
    fn replace_checks_arity_and_schema() {
        let p = chain();
        let bad = Subgraph {
            arity: 2,
            nodes: vec![],
            output: SubRef::Input(0),
        };
        assert!(matches!(
            p.replace_node(NodeId(1), &bad),
            Err(IrError::Arity { expected: 1, found: 2 })
        ));
        let wrong = Subgraph {
            arity: 1,
            nodes: vec![SubNode {
                op: PlanOp::Project {
                    columns: vec!["t.b".into()],
                },
                inputs: vec![SubRef::Input(0)],
                label: None,
            }],
            output: SubRef::Local(0, Port::Out),
        };
        assert!(matches!(
            p.replace_node(NodeId(1), &wrong),
            Err(IrError::Schema { .. })
        ));
    }

    #[test]
    fn schema_rejects_unknown_column() {
        let mut p = chain();
        if let PlanOp::Project { columns } = &mut p.node_mut(NodeId(2)).op {
            columns.push("t.zzz".into());
        }
        assert!(matches!(p.validate(), Err(IrError::Schema { .. })));
    }
}
