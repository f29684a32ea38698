//! CART-style regression tree over binary attributes.

use serde::{Deserialize, Serialize};

use crate::attrspace::{AttributeVector, GroupBiasTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    /// Minimum number of groups in each leaf.
    pub min_samples_leaf: usize,
    /// `None` grows until leaves are pure or cannot be split.
    pub max_depth: Option<usize>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            min_samples_leaf: 1,
            max_depth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf {
        prediction: f64,
        /// Number of groups that reached this leaf.
        groups: usize,
        /// Total support count of those groups.
        weight: u64,
    },
    /// `children[b]` is followed when the attribute equals `b`.
    Split {
        attribute: usize,
        children: [usize; 2],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub dimension: usize,
    /// Arena of nodes; index 0 is the root.
    pub nodes: Vec<Node>,
    pub config: TreeConfig,
}

/// One root-to-leaf path.
#[derive(Debug, Clone, PartialEq)]
pub struct TreePath {
    /// `(attribute index, bit)` in the order tested from the root.
    pub assignments: Vec<(usize, u8)>,
    pub prediction: f64,
    pub complete: bool,
}

impl TreePath {
    pub fn unassigned(&self, dimension: usize) -> Vec<usize> {
        let mut assigned = vec![false; dimension];
        for &(i, _) in &self.assignments {
            assigned[i] = true;
        }
        (0..dimension).filter(|&i| !assigned[i]).collect()
    }

    /// The attribute vector of a complete path.
    pub fn to_attribute(&self, dimension: usize) -> Option<AttributeVector> {
        if !self.complete {
            return None;
        }
        let mut bits = vec![0u8; dimension];
        for &(i, b) in &self.assignments {
            bits[i] = b;
        }
        AttributeVector::new(bits).ok()
    }
}

struct Row<'a> {
    attribute: &'a AttributeVector,
    bias: f64,
    weight: f64,
}

fn weighted_sse(rows: &[&Row<'_>]) -> (f64, f64, f64) {
    let (mut w, mut s, mut s2) = (0.0, 0.0, 0.0);
    for r in rows {
        w += r.weight;
        s += r.weight * r.bias;
        s2 += r.weight * r.bias * r.bias;
    }
    let sse = if w > 0.0 {
        (s2 - s * s / w).max(0.0)
    } else {
        0.0
    };
    (w, s, sse)
}

pub fn fit_tree(table: &GroupBiasTable, config: &TreeConfig) -> Result<RegressionTree> {
    if table.is_empty() {
        return Err(Error::Empty("tree training table"));
    }
    if config.min_samples_leaf == 0 {
        return Err(Error::Config("min_samples_leaf must be ≥ 1".into()));
    }
    let rows: Vec<Row<'_>> = table
        .iter()
        .map(|(a, s)| Row {
            attribute: a,
            bias: s.bias,
            weight: s.count as f64,
        })
        .collect();
    let mut tree = RegressionTree {
        dimension: table.dimension(),
        nodes: Vec::new(),
        config: config.clone(),
    };
    let refs: Vec<&Row<'_>> = rows.iter().collect();
    tree.grow(&refs, &mut vec![false; table.dimension()], 0);
    Ok(tree)
}

impl RegressionTree {
    fn grow(&mut self, rows: &[&Row<'_>], used: &mut Vec<bool>, depth: usize) -> usize {
        let id = self.nodes.len();
        let (w, s, sse) = weighted_sse(rows);
        let weight: u64 = rows.iter().map(|r| r.weight as u64).sum();
        self.nodes.push(Node::Leaf {
            prediction: s / w,
            groups: rows.len(),
            weight,
        });
        if self.config.max_depth.is_some_and(|m| depth >= m)
            || rows.len() < 2 * self.config.min_samples_leaf
        {
            return id;
        }
        let mut best: Option<(usize, f64)> = None;
        for attr in (0..self.dimension).filter(|&i| !used[i]) {
            let (zeros, ones): (Vec<&Row<'_>>, Vec<&Row<'_>>) =
                rows.iter().partition(|r| r.attribute.bit(attr) == 0);
            if zeros.len() < self.config.min_samples_leaf
                || ones.len() < self.config.min_samples_leaf
            {
                continue;
            }
            let gain = sse - weighted_sse(&zeros).2 - weighted_sse(&ones).2;
            if gain > 1e-12 * sse.max(1.0) && best.is_none_or(|(_, g)| gain > g) {
                best = Some((attr, gain));
            }
        }
        let Some((attribute, _)) = best else {
            return id;
        };
        let (zeros, ones): (Vec<&Row<'_>>, Vec<&Row<'_>>) =
            rows.iter().partition(|r| r.attribute.bit(attribute) == 0);
        used[attribute] = true;
        let left = self.grow(&zeros, used, depth + 1);
        let right = self.grow(&ones, used, depth + 1);
        used[attribute] = false;
        self.nodes[id] = Node::Split {
            attribute,
            children: [left, right],
        };
        id
    }

    pub fn predict(&self, a: &AttributeVector) -> Result<f64> {
        a.check_dimension(self.dimension)?;
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf { prediction, .. } => return Ok(*prediction),
                Node::Split {
                    attribute,
                    children,
                } => id = children[a.bit(*attribute) as usize],
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    pub fn depth(&self) -> usize {
        self.paths()
            .iter()
            .map(|p| p.assignments.len())
            .max()
            .unwrap_or(0)
    }

    /// Every root-to-leaf path, by backtracking, bit 0 before bit 1.
    pub fn paths(&self) -> Vec<TreePath> {
        let mut out = Vec::new();
        let mut stack = Vec::new();
        self.walk(0, &mut stack, &mut out);
        out
    }

    fn walk(&self, id: usize, stack: &mut Vec<(usize, u8)>, out: &mut Vec<TreePath>) {
        match &self.nodes[id] {
            Node::Leaf { prediction, .. } => out.push(TreePath {
                assignments: stack.clone(),
                prediction: *prediction,
                complete: stack.len() == self.dimension,
            }),
            Node::Split {
                attribute,
                children,
            } => {
                for (bit, &child) in children.iter().enumerate() {
                    stack.push((*attribute, bit as u8));
                    self.walk(child, stack, out);
                    stack.pop();
                }
            }
        }
    }
}
