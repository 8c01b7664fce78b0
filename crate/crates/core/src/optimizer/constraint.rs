//! Value constraints on feature positions and their propagation through
//! featurizers.

use std::fmt;

use crate::frontend::CmpOp;
use crate::pipeline::{Cmp, DecisionTree, MlOperator, TreeNode};
use crate::value::{DType, Value};

/// What is known about one feature position.
#[derive(Debug, Clone, PartialEq)]
pub enum IntervalConstraint {
    Unknown,
    Const(Value),
    /// Numeric range; bounds may be infinite.
    Interval {
        lo: f64,
        hi: f64,
        lo_open: bool,
        hi_open: bool,
    },
    /// String value known to differ from every listed value.
    NotIn(Vec<Value>),
}

use IntervalConstraint as C;

impl fmt::Display for IntervalConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            C::Unknown => f.write_str("?"),
            C::Const(v) => write!(f, "= {v}"),
            C::Interval {
                lo,
                hi,
                lo_open,
                hi_open,
            } => write!(
                f,
                "{}{lo}, {hi}{}",
                if *lo_open { '(' } else { '[' },
                if *hi_open { ')' } else { ']' }
            ),
            C::NotIn(vs) => {
                let items: Vec<String> = vs.iter().map(ToString::to_string).collect();
                write!(f, "not in {{{}}}", items.join(", "))
            }
        }
    }
}

impl IntervalConstraint {
    pub fn closed(lo: f64, hi: f64) -> Self {
        C::Interval {
            lo,
            hi,
            lo_open: false,
            hi_open: false,
        }
    }

    fn interval(lo: f64, hi: f64, lo_open: bool, hi_open: bool) -> Option<Self> {
        if lo.is_nan() || hi.is_nan() {
            return Some(C::Unknown);
        }
        if lo > hi || (lo == hi && (lo_open || hi_open)) {
            return None;
        }
        Some(C::Interval {
            lo,
            hi,
            lo_open,
            hi_open,
        })
    }

    /// The constraint `column op literal` places on a column of `dtype`.
    /// Unrepresentable predicates give `Unknown`; an unsatisfiable one
    /// gives `None`.
    pub fn from_predicate(op: CmpOp, literal: &Value, dtype: DType) -> Option<Self> {
        if !literal.compatible_with(dtype) {
            // Mixed families never compare true.
            return None;
        }
        if dtype == DType::String {
            return Some(match op {
                CmpOp::Eq => C::Const(literal.clone()),
                CmpOp::Ne => C::NotIn(vec![literal.clone()]),
                _ => C::Unknown,
            });
        }
        let v = literal.as_f64()?;
        let inf = f64::INFINITY;
        match op {
            CmpOp::Eq => {
                if dtype == DType::Int64 && v.fract() != 0.0 {
                    return None;
                }
                Some(C::Const(literal.coerce_to(dtype)))
            }
            CmpOp::Ne => Some(C::Unknown),
            CmpOp::Lt => Self::interval(-inf, v, false, true),
            CmpOp::Le => Self::interval(-inf, v, false, false),
            CmpOp::Gt => Self::interval(v, inf, true, false),
            CmpOp::Ge => Self::interval(v, inf, false, false),
        }
    }

    fn contains(&self, v: &Value) -> bool {
        match self {
            C::Unknown => true,
            C::Const(c) => c.matches(v),
            C::Interval {
                lo,
                hi,
                lo_open,
                hi_open,
            } => match v.as_f64() {
                Some(x) => {
                    (if *lo_open { x > *lo } else { x >= *lo })
                        && (if *hi_open { x < *hi } else { x <= *hi })
                }
                None => false,
            },
            C::NotIn(vs) => !vs.iter().any(|e| e.matches(v)),
        }
    }

    /// Conjunction of two constraints; `None` when no value satisfies both.
    pub fn meet(&self, other: &Self) -> Option<Self> {
        match (self, other) {
            (C::Unknown, x) | (x, C::Unknown) => Some(x.clone()),
            (C::Const(a), b) | (b, C::Const(a)) => b.contains(a).then(|| C::Const(a.clone())),
            (
                C::Interval {
                    lo: l1,
                    hi: h1,
                    lo_open: lo1,
                    hi_open: ho1,
                },
                C::Interval {
                    lo: l2,
                    hi: h2,
                    lo_open: lo2,
                    hi_open: ho2,
                },
            ) => {
                let (lo, lo_open) = if l1 > l2 {
                    (*l1, *lo1)
                } else if l2 > l1 {
                    (*l2, *lo2)
                } else {
                    (*l1, *lo1 || *lo2)
                };
                let (hi, hi_open) = if h1 < h2 {
                    (*h1, *ho1)
                } else if h2 < h1 {
                    (*h2, *ho2)
                } else {
                    (*h1, *ho1 || *ho2)
                };
                Self::interval(lo, hi, lo_open, hi_open)
            }
            (C::NotIn(a), C::NotIn(b)) => {
                let mut all = a.clone();
                for v in b {
                    if !all.iter().any(|e| e.matches(v)) {
                        all.push(v.clone());
                    }
                }
                Some(C::NotIn(all))
            }
            // A numeric range against a string exclusion cannot both apply;
            // keep the range, which is the sound choice.
            (x @ C::Interval { .. }, C::NotIn(_)) | (C::NotIn(_), x @ C::Interval { .. }) => Some(x.clone()),
        }
    }

    /// Whether a tree test `x cmp threshold` is decided for every `x`
    /// satisfying the constraint.
    pub fn decide(&self, cmp: Cmp, t: f64) -> Option<bool> {
        match self {
            C::Const(v) => v.as_f64().map(|x| cmp.eval(x, t)),
            C::Interval {
                lo,
                hi,
                lo_open,
                hi_open,
            } => {
                let (lo, hi) = (*lo, *hi);
                let below = hi < t || (hi == t && *hi_open); // every x < t
                let at_most = hi <= t; // every x <= t
                let above = lo > t || (lo == t && *lo_open); // every x > t
                let at_least = lo >= t; // every x >= t
                match cmp {
                    Cmp::Lt => (if below { Some(true) } else { None }).or(at_least.then_some(false)),
                    Cmp::Le => (if at_most { Some(true) } else { None }).or(above.then_some(false)),
                    Cmp::Gt => (if above { Some(true) } else { None }).or(at_most.then_some(false)),
                    Cmp::Ge => (if at_least { Some(true) } else { None }).or(below.then_some(false)),
                    Cmp::Eq => {
                        if lo == t && hi == t && !*lo_open && !*hi_open {
                            Some(true)
                        } else if below || above {
                            Some(false)
                        } else {
                            None
                        }
                    }
                }
            }
            C::Unknown | C::NotIn(_) => None,
        }
    }
}

fn const_f64(v: f64) -> IntervalConstraint {
    C::Const(Value::Float(v))
}

/// Propagates per-position input constraints through one featurizer.
/// Operators without a rule (and models) yield `Unknown` everywhere.
pub fn push_constraint(op: &MlOperator, input: &[IntervalConstraint]) -> Vec<IntervalConstraint> {
    let unknown = |n: usize| vec![C::Unknown; n];
    match op {
        MlOperator::Scaler { offsets, scales } => input
            .iter()
            .zip(offsets.iter().zip(scales))
            .map(|(c, (o, s))| scale(c, *o, *s))
            .collect(),
        MlOperator::OneHotEncoder { categories } => {
            let mut out = Vec::new();
            for (c, cats) in input.iter().zip(categories) {
                for cat in cats {
                    out.push(match c {
                        C::Const(v) => const_f64(if v.matches(cat) { 1.0 } else { 0.0 }),
                        other if !other.contains(cat) => const_f64(0.0),
                        _ => C::Unknown,
                    });
                }
            }
            out
        }
        MlOperator::LabelEncoder { mapping, default } => match input {
            [C::Const(v)] => {
                let code = mapping.iter().find(|(k, _)| k.matches(v)).map_or(*default, |(_, c)| *c);
                vec![const_f64(code as f64)]
            }
            _ => unknown(1),
        },
        MlOperator::Concat { .. } => input.to_vec(),
        MlOperator::FeatureExtractor { indices } => indices
            .iter()
            .map(|&i| input.get(i).cloned().unwrap_or(C::Unknown))
            .collect(),
        MlOperator::Constant { values } => values.iter().cloned().map(C::Const).collect(),
        MlOperator::Normalizer { .. } => unknown(input.len()),
        MlOperator::LinearModel { .. } | MlOperator::TreeEnsemble { .. } => Vec::new(),
    }
}

fn scale(c: &IntervalConstraint, o: f64, s: f64) -> IntervalConstraint {
    let f = |x: f64| (x - o) * s;
    match c {
        C::Const(v) => match v.as_f64() {
            Some(x) => const_f64(f(x)),
            None => C::Unknown,
        },
        C::Interval {
            lo,
            hi,
            lo_open,
            hi_open,
        } if s != 0.0 => {
            // Rounding is monotone but may merge neighbours, so strict bounds
            // survive only through the exact identity map.
            let exact = o == 0.0 && s == 1.0;
            let (a, b) = (f(*lo), f(*hi));
            if a.is_nan() || b.is_nan() {
                return C::Unknown;
            }
            let (lo, hi, lo_open, hi_open) = if s > 0.0 {
                (a, b, *lo_open && exact, *hi_open && exact)
            } else {
                (b, a, false, false)
            };
            C::Interval {
                lo,
                hi,
                lo_open,
                hi_open,
            }
        }
        _ => C::Unknown,
    }
}

/// Removes every test of `tree` decided by `features`; the surviving child
/// replaces the test. Positions past the end of `features` are unknown.
pub fn prune_tree(tree: &DecisionTree, features: &[IntervalConstraint]) -> DecisionTree {
    fn go(t: &DecisionTree, at: usize, cs: &[IntervalConstraint]) -> DecisionTree {
        match &t.nodes[at] {
            TreeNode::Leaf { value } => DecisionTree::leaf(value.clone()),
            TreeNode::Internal {
                feature,
                cmp,
                threshold,
                true_child,
                false_child,
            } => match cs.get(*feature).and_then(|c| c.decide(*cmp, *threshold)) {
                Some(true) => go(t, *true_child, cs),
                Some(false) => go(t, *false_child, cs),
                None => DecisionTree::split(
                    *feature,
                    *cmp,
                    *threshold,
                    go(t, *true_child, cs),
                    go(t, *false_child, cs),
                ),
            },
        }
    }
    go(tree, 0, features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn scaler_maps_constants_and_intervals() {
        let op = MlOperator::Scaler {
            offsets: vec![10.0],
            scales: vec![2.0],
        };
        assert_eq!(push_constraint(&op, &[C::Const(Value::Int(60))]), vec![const_f64(100.0)]);
        let id = MlOperator::Scaler {
            offsets: vec![0.0],
            scales: vec![1.0],
        };
        let c = C::Interval {
            lo: 1.0,
            hi: 4.0,
            lo_open: true,
            hi_open: false,
        };
        assert_eq!(push_constraint(&id, &[c.clone()]), vec![c]);
        let flip = MlOperator::Scaler {
            offsets: vec![0.0],
            scales: vec![-1.0],
        };
        assert_eq!(push_constraint(&flip, &[C::closed(1.0, 4.0)]), vec![C::closed(-4.0, -1.0)]);
    }

    #[test]
    fn one_hot_of_a_constant() {
        let op = MlOperator::OneHotEncoder {
            categories: vec![vec![Value::Int(0), Value::Int(1)]],
        };
        assert_eq!(
            push_constraint(&op, &[C::Const(Value::Int(1))]),
            vec![const_f64(0.0), const_f64(1.0)]
        );
        let s = MlOperator::OneHotEncoder {
            categories: vec![vec![Value::Str("F".into()), Value::Str("M".into())]],
        };
        let ne = C::NotIn(vec![Value::Str("F".into())]);
        assert_eq!(push_constraint(&s, &[ne]), vec![const_f64(0.0), C::Unknown]);
    }

    #[test]
    fn meet_detects_conflicts() {
        let a = C::from_predicate(CmpOp::Eq, &Value::Int(1), DType::Int64).unwrap();
        let b = C::from_predicate(CmpOp::Eq, &Value::Int(2), DType::Int64).unwrap();
        assert_eq!(a.meet(&b), None);
        let gt = C::from_predicate(CmpOp::Gt, &Value::Int(5), DType::Float64).unwrap();
        let lt = C::from_predicate(CmpOp::Lt, &Value::Int(5), DType::Float64).unwrap();
        assert_eq!(gt.meet(&lt), None);
        let le = C::from_predicate(CmpOp::Le, &Value::Int(5), DType::Float64).unwrap();
        let ge = C::from_predicate(CmpOp::Ge, &Value::Int(5), DType::Float64).unwrap();
        assert_eq!(le.meet(&ge), Some(C::closed(5.0, 5.0)));
        assert_eq!(C::Unknown.meet(&a), Some(a.clone()));
    }

    #[test]
    fn decisions_respect_open_bounds() {
        let gt60 = C::Interval {
            lo: 60.0,
            hi: f64::INFINITY,
            lo_open: true,
            hi_open: false,
        };
        assert_eq!(gt60.decide(Cmp::Gt, 60.0), Some(true));
        assert_eq!(gt60.decide(Cmp::Le, 60.0), Some(false));
        assert_eq!(gt60.decide(Cmp::Gt, 61.0), None);
        let ge60 = C::closed(60.0, f64::INFINITY);
        assert_eq!(ge60.decide(Cmp::Gt, 60.0), None);
        assert_eq!(ge60.decide(Cmp::Ge, 60.0), Some(true));
        assert_eq!(C::closed(0.0, 1.0).decide(Cmp::Eq, 2.0), Some(false));
        assert_eq!(C::Unknown.decide(Cmp::Lt, 0.0), None);
    }

    #[test]
    fn running_example_tree_prunes_to_asthma_branch() {
        let mut cs = vec![C::Unknown; 6];
        cs[2] = const_f64(0.0);
        cs[3] = const_f64(1.0);
        let pruned = prune_tree(&fixtures::covid_tree(), &cs);
        assert_eq!(pruned.used_features(), vec![0, 4, 5]);
        assert_eq!(pruned.node_count(), 7);
    }

    #[test]
    fn unknown_constraints_leave_tree_alone() {
        let t = fixtures::covid_tree();
        assert_eq!(prune_tree(&t, &vec![C::Unknown; 6]), t);
        assert_eq!(prune_tree(&t, &[]), t);
    }
}
