//! Binary decision trees stored as a flat arena.
//!
//! The arena form is what evaluation, pruning and compilation use. On disk a
//! tree is a nested object: internal nodes carry `feature`, `cmp`,
//! `threshold`, `true`, `false`; leaves carry `leaf`.

use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::value::format_number;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cmp {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "==")]
    Eq,
}

impl Cmp {
    pub fn eval(self, x: f64, threshold: f64) -> bool {
        match self {
            Cmp::Lt => x < threshold,
            Cmp::Le => x <= threshold,
            Cmp::Gt => x > threshold,
            Cmp::Ge => x >= threshold,
            Cmp::Eq => x == threshold,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Cmp::Lt => "<",
            Cmp::Le => "<=",
            Cmp::Gt => ">",
            Cmp::Ge => ">=",
            Cmp::Eq => "==",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Internal {
        feature: usize,
        cmp: Cmp,
        threshold: f64,
        true_child: usize,
        false_child: usize,
    },
    Leaf {
        value: Vec<f64>,
    },
}

/// A decision tree; node 0 is the root.
#[derive(Debug, Clone)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

impl PartialEq for DecisionTree {
    fn eq(&self, other: &Self) -> bool {
        // Compare by shape, not arena layout, and floats by bits.
        fn same(a: &DecisionTree, ia: usize, b: &DecisionTree, ib: usize) -> bool {
            match (&a.nodes[ia], &b.nodes[ib]) {
                (TreeNode::Leaf { value: va }, TreeNode::Leaf { value: vb }) => {
                    va.len() == vb.len()
                        && va.iter().zip(vb).all(|(x, y)| x.to_bits() == y.to_bits())
                }
                (
                    TreeNode::Internal {
                        feature: fa,
                        cmp: ca,
                        threshold: ta,
                        true_child: t1,
                        false_child: f1,
                    },
                    TreeNode::Internal {
                        feature: fb,
                        cmp: cb,
                        threshold: tb,
                        true_child: t2,
                        false_child: f2,
                    },
                ) => {
                    fa == fb
                        && ca == cb
                        && ta.to_bits() == tb.to_bits()
                        && same(a, *t1, b, *t2)
                        && same(a, *f1, b, *f2)
                }
                _ => false,
            }
        }
        if self.nodes.is_empty() || other.nodes.is_empty() {
            return self.nodes.is_empty() && other.nodes.is_empty();
        }
        same(self, 0, other, 0)
    }
}

impl DecisionTree {
    pub fn leaf(value: Vec<f64>) -> Self {
        DecisionTree {
            nodes: vec![TreeNode::Leaf { value }],
        }
    }

    /// Builds `if x[feature] cmp threshold then t else f` from two subtrees.
    pub fn split(feature: usize, cmp: Cmp, threshold: f64, t: DecisionTree, f: DecisionTree) -> Self {
        let mut nodes = Vec::with_capacity(1 + t.nodes.len() + f.nodes.len());
        nodes.push(TreeNode::Leaf { value: vec![] });
        let t_root = append(&mut nodes, &t, 0);
        let f_root = append(&mut nodes, &f, 0);
        nodes[0] = TreeNode::Internal {
            feature,
            cmp,
            threshold,
            true_child: t_root,
            false_child: f_root,
        };
        DecisionTree { nodes }
    }

    /// Walks the tree for one row and returns the reached leaf index.
    pub fn leaf_index(&self, row: impl Fn(usize) -> f64) -> usize {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf { .. } => return at,
                TreeNode::Internal {
                    feature,
                    cmp,
                    threshold,
                    true_child,
                    false_child,
                } => {
                    at = if cmp.eval(row(*feature), *threshold) {
                        *true_child
                    } else {
                        *false_child
                    }
                }
            }
        }
    }

    pub fn leaf_value(&self, idx: usize) -> &[f64] {
        match &self.nodes[idx] {
            TreeNode::Leaf { value } => value,
            TreeNode::Internal { .. } => panic!("node {idx} is not a leaf"),
        }
    }

    /// Leaf indices in depth-first (true branch first) order.
    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.visit_dfs(0, &mut |i, n| {
            if matches!(n, TreeNode::Leaf { .. }) {
                out.push(i)
            }
        });
        out
    }

    pub fn visit_dfs(&self, at: usize, f: &mut impl FnMut(usize, &TreeNode)) {
        let node = &self.nodes[at];
        f(at, node);
        if let TreeNode::Internal {
            true_child,
            false_child,
            ..
        } = node
        {
            self.visit_dfs(*true_child, f);
            self.visit_dfs(*false_child, f);
        }
    }

    /// Number of nodes reachable from the root.
    pub fn node_count(&self) -> usize {
        let mut n = 0;
        self.visit_dfs(0, &mut |_, _| n += 1);
        n
    }

    pub fn internal_count(&self) -> usize {
        let mut n = 0;
        self.visit_dfs(0, &mut |_, node| {
            if matches!(node, TreeNode::Internal { .. }) {
                n += 1
            }
        });
        n
    }

    /// Edges on the longest root-to-leaf path; a lone leaf has depth 0.
    pub fn depth(&self) -> usize {
        fn go(t: &DecisionTree, at: usize) -> usize {
            match &t.nodes[at] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Internal {
                    true_child,
                    false_child,
                    ..
                } => 1 + go(t, *true_child).max(go(t, *false_child)),
            }
        }
        go(self, 0)
    }

    /// Sorted, de-duplicated feature indices tested anywhere in the tree.
    pub fn used_features(&self) -> Vec<usize> {
        let mut feats = Vec::new();
        self.visit_dfs(0, &mut |_, n| {
            if let TreeNode::Internal { feature, .. } = n {
                feats.push(*feature)
            }
        });
        feats.sort_unstable();
        feats.dedup();
        feats
    }

    /// Rewrites feature indices through `map` (old index -> new index).
    pub fn remap_features(&self, map: impl Fn(usize) -> usize) -> DecisionTree {
        let nodes = self
            .nodes
            .iter()
            .map(|n| match n {
                TreeNode::Internal {
                    feature,
                    cmp,
                    threshold,
                    true_child,
                    false_child,
                } => TreeNode::Internal {
                    feature: map(*feature),
                    cmp: *cmp,
                    threshold: *threshold,
                    true_child: *true_child,
                    false_child: *false_child,
                },
                leaf => leaf.clone(),
            })
            .collect();
        DecisionTree { nodes }
    }

    /// Copies the subtree rooted at `at` into a fresh, compact arena.
    pub fn subtree(&self, at: usize) -> DecisionTree {
        let mut nodes = Vec::new();
        append(&mut nodes, self, at);
        DecisionTree { nodes }
    }

    /// Checks the arena is a strict binary tree rooted at 0: every node is
    /// reachable exactly once and child indices are in range.
    pub fn check_shape(&self) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("tree has no nodes".into());
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        while let Some(at) = stack.pop() {
            if at >= self.nodes.len() {
                return Err(format!("child index {at} out of range"));
            }
            if seen[at] {
                return Err(format!("node {at} is shared or part of a cycle"));
            }
            seen[at] = true;
            if let TreeNode::Internal {
                true_child,
                false_child,
                ..
            } = &self.nodes[at]
            {
                stack.push(*true_child);
                stack.push(*false_child);
            }
        }
        Ok(())
    }
}

fn append(nodes: &mut Vec<TreeNode>, src: &DecisionTree, at: usize) -> usize {
    let idx = nodes.len();
    match &src.nodes[at] {
        TreeNode::Leaf { value } => nodes.push(TreeNode::Leaf {
            value: value.clone(),
        }),
        TreeNode::Internal {
            feature,
            cmp,
            threshold,
            true_child,
            false_child,
        } => {
            nodes.push(TreeNode::Leaf { value: vec![] });
            let t = append(nodes, src, *true_child);
            let f = append(nodes, src, *false_child);
            nodes[idx] = TreeNode::Internal {
                feature: *feature,
                cmp: *cmp,
                threshold: *threshold,
                true_child: t,
                false_child: f,
            };
        }
    }
    idx
}

impl fmt::Display for DecisionTree {
    /// Compact one-line form: `(f0 > 60 ? [1] : [0])`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn go(t: &DecisionTree, at: usize, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            match &t.nodes[at] {
                TreeNode::Leaf { value } => {
                    let parts: Vec<String> = value.iter().map(|v| format_number(*v)).collect();
                    write!(f, "[{}]", parts.join(", "))
                }
                TreeNode::Internal {
                    feature,
                    cmp,
                    threshold,
                    true_child,
                    false_child,
                } => {
                    write!(f, "(f{feature} {} {} ? ", cmp.symbol(), format_number(*threshold))?;
                    go(t, *true_child, f)?;
                    f.write_str(" : ")?;
                    go(t, *false_child, f)?;
                    f.write_str(")")
                }
            }
        }
        if self.nodes.is_empty() {
            return f.write_str("<empty>");
        }
        go(self, 0, f)
    }
}

#[derive(Serialize, Deserialize)]
struct NestedNode {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    feature: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    cmp: Option<Cmp>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    threshold: Option<f64>,
    #[serde(rename = "true", skip_serializing_if = "Option::is_none", default)]
    true_child: Option<Box<NestedNode>>,
    #[serde(rename = "false", skip_serializing_if = "Option::is_none", default)]
    false_child: Option<Box<NestedNode>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    leaf: Option<Vec<f64>>,
}

fn to_nested(t: &DecisionTree, at: usize) -> NestedNode {
    match &t.nodes[at] {
        TreeNode::Leaf { value } => NestedNode {
            feature: None,
            cmp: None,
            threshold: None,
            true_child: None,
            false_child: None,
            leaf: Some(value.clone()),
        },
        TreeNode::Internal {
            feature,
            cmp,
            threshold,
            true_child,
            false_child,
        } => NestedNode {
            feature: Some(*feature),
            cmp: Some(*cmp),
            threshold: Some(*threshold),
            true_child: Some(Box::new(to_nested(t, *true_child))),
            false_child: Some(Box::new(to_nested(t, *false_child))),
            leaf: None,
        },
    }
}

fn from_nested(n: NestedNode, nodes: &mut Vec<TreeNode>) -> Result<usize, String> {
    let idx = nodes.len();
    match n {
        NestedNode {
            leaf: Some(value),
            feature: None,
            cmp: None,
            threshold: None,
            true_child: None,
            false_child: None,
        } => {
            nodes.push(TreeNode::Leaf { value });
            Ok(idx)
        }
        NestedNode {
            leaf: None,
            feature: Some(feature),
            cmp: Some(cmp),
            threshold: Some(threshold),
            true_child: Some(t),
            false_child: Some(f),
        } => {
            nodes.push(TreeNode::Leaf { value: vec![] });
            let t = from_nested(*t, nodes)?;
            let f = from_nested(*f, nodes)?;
            nodes[idx] = TreeNode::Internal {
                feature,
                cmp,
                threshold,
                true_child: t,
                false_child: f,
            };
            Ok(idx)
        }
        _ => Err(
            "tree node must be either {leaf} or {feature, cmp, threshold, true, false}".to_string(),
        ),
    }
}

impl Serialize for DecisionTree {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.nodes.is_empty() {
            return Err(serde::ser::Error::custom("cannot serialize an empty tree"));
        }
        to_nested(self, 0).serialize(s)
    }
}

impl<'de> Deserialize<'de> for DecisionTree {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let nested = NestedNode::deserialize(d)?;
        let mut nodes = Vec::new();
        from_nested(nested, &mut nodes).map_err(D::Error::custom)?;
        Ok(DecisionTree { nodes })
    }
}
