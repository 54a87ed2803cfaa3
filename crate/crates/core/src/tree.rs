//! Nested tree structures: time trees over lags whose terminal nodes each own
//! a univariate exposure tree with monotone increments.

use crate::config::HyperState;
use crate::error::{Error, Result};

/// Contiguous, inclusive interval of lags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LagSet {
    pub first: usize,
    pub last: usize,
}

impl LagSet {
    pub fn new(first: usize, last: usize) -> Self {
        debug_assert!(first <= last);
        Self { first, last }
    }

    pub fn len(&self) -> usize {
        self.last - self.first + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, lag: usize) -> bool {
        (self.first..=self.last).contains(&lag)
    }

    pub fn iter(&self) -> std::ops::RangeInclusive<usize> {
        self.first..=self.last
    }

    /// Split locations `s` with `first <= s < last`; lags `<= s` go left.
    pub fn split_locations(&self) -> std::ops::Range<usize> {
        self.first..self.last
    }
}

/// Half-open exposure bin `[lower, upper)`; the extreme bins are unbounded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bin {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExposureNode {
    Leaf,
    Split {
        value: f64,
        left: Box<ExposureNode>,
        right: Box<ExposureNode>,
    },
}

impl ExposureNode {
    pub fn split(value: f64, left: ExposureNode, right: ExposureNode) -> Self {
        ExposureNode::Split {
            value,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    fn leaf_count(&self) -> usize {
        match self {
            ExposureNode::Leaf => 1,
            ExposureNode::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    fn collect_splits(&self, out: &mut Vec<f64>) {
        if let ExposureNode::Split { value, left, right } = self {
            left.collect_splits(out);
            out.push(*value);
            right.collect_splits(out);
        }
    }

    fn valid_within(&self, lower: f64, upper: f64) -> bool {
        match self {
            ExposureNode::Leaf => true,
            ExposureNode::Split { value, left, right } => {
                value.is_finite()
                    && *value > lower
                    && *value < upper
                    && left.valid_within(lower, *value)
                    && right.valid_within(*value, upper)
            }
        }
    }

    fn depth(&self) -> usize {
        match self {
            ExposureNode::Leaf => 0,
            ExposureNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

/// Exposure-splitting tree with increments `theta` over its ordered bins.
///
/// `increments[0]` is the structural zero; the remaining `C - 1` entries are
/// the free, nonnegative parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureTree {
    root: ExposureNode,
    increments: Vec<f64>,
}

impl Default for ExposureTree {
    fn default() -> Self {
        Self::single()
    }
}

impl ExposureTree {
    pub fn single() -> Self {
        Self {
            root: ExposureNode::Leaf,
            increments: vec![0.0],
        }
    }

    /// Tree with the given structure and all increments zero.
    pub fn from_root(root: ExposureNode) -> Result<Self> {
        if !root.valid_within(f64::NEG_INFINITY, f64::INFINITY) {
            return Err(Error::Constraint(
                "exposure split values must be finite and nested within their parent bounds".into(),
            ));
        }
        let c = root.leaf_count();
        Ok(Self {
            root,
            increments: vec![0.0; c],
        })
    }

    pub fn with_increments(root: ExposureNode, increments: Vec<f64>) -> Result<Self> {
        let mut tree = Self::from_root(root)?;
        if increments.len() != tree.bin_count() {
            return Err(Error::param(format!(
                "expected {} increments, got {}",
                tree.bin_count(),
                increments.len()
            )));
        }
        if increments[0] != 0.0 {
            return Err(Error::Constraint("first increment must be exactly zero".into()));
        }
        tree.set_free_increments(&increments[1..])?;
        Ok(tree)
    }

    pub fn root(&self) -> &ExposureNode {
        &self.root
    }

    pub fn bin_count(&self) -> usize {
        self.increments.len()
    }

    pub fn is_split(&self) -> bool {
        self.bin_count() > 1
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    /// Split values in increasing order; entry `c` is the lower bound of bin `c + 1`.
    pub fn split_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.bin_count() - 1);
        self.root.collect_splits(&mut out);
        out
    }

    /// Terminal bins ordered by lower bound.
    pub fn ordered_bins(&self) -> Vec<Bin> {
        let splits = self.split_values();
        let mut bins = Vec::with_capacity(splits.len() + 1);
        let mut lower = f64::NEG_INFINITY;
        for &s in &splits {
            bins.push(Bin { lower, upper: s });
            lower = s;
        }
        bins.push(Bin {
            lower,
            upper: f64::INFINITY,
        });
        bins
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn free_increments(&self) -> &[f64] {
        &self.increments[1..]
    }

    pub fn set_free_increments(&mut self, free: &[f64]) -> Result<()> {
        if free.len() + 1 != self.increments.len() {
            return Err(Error::param(format!(
                "expected {} free increments, got {}",
                self.increments.len() - 1,
                free.len()
            )));
        }
        if let Some(bad) = free.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Constraint(format!(
                "increment {bad} is not a finite nonnegative value"
            )));
        }
        self.increments[1..].copy_from_slice(free);
        Ok(())
    }

    /// Bin levels `delta_c = sum_{c' <= c} theta_c'`.
    pub fn levels(&self) -> Vec<f64> {
        cumulative(&self.increments)
    }
}

fn cumulative(theta: &[f64]) -> Vec<f64> {
    theta
        .iter()
        .scan(0.0, |acc, t| {
            *acc += t;
            Some(*acc)
        })
        .collect()
}

/// Levels from increment blocks: the inverse of the first-difference map.
pub fn delta_from_theta(theta_blocks: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    theta_blocks
        .iter()
        .map(|block| {
            if let Some(first) = block.first() {
                if *first != 0.0 {
                    return Err(Error::Constraint("first increment of a block must be zero".into()));
                }
            }
            if let Some(bad) = block.iter().find(|v| !(**v >= 0.0)) {
                return Err(Error::Constraint(format!("negative increment {bad}")));
            }
            Ok(cumulative(block))
        })
        .collect()
}

/// Forward first differences of one level block (`theta = D delta`).
pub fn theta_from_delta(delta: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    delta
        .iter()
        .map(|&d| {
            let t = d - prev;
            prev = d;
            t
        })
        .collect()
}

/// The first-difference matrix `D` for a block of size `c` (row-major).
pub fn difference_matrix(c: usize) -> Vec<Vec<f64>> {
    (0..c)
        .map(|i| {
            (0..c)
                .map(|j| {
                    if i == j {
                        1.0
                    } else if j + 1 == i {
                        -1.0
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum TimeNode {
    Leaf(ExposureTree),
    Split {
        /// Lags `<= at` go left.
        at: usize,
        left: Box<TimeNode>,
        right: Box<TimeNode>,
    },
}

impl TimeNode {
    pub fn split(at: usize, left: TimeNode, right: TimeNode) -> Self {
        TimeNode::Split {
            at,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    fn valid_within(&self, lags: LagSet) -> bool {
        match self {
            TimeNode::Leaf(_) => true,
            TimeNode::Split { at, left, right } => {
                *at >= lags.first
                    && *at < lags.last
                    && left.valid_within(LagSet::new(lags.first, *at))
                    && right.valid_within(LagSet::new(at + 1, lags.last))
            }
        }
    }
}

/// Information about one internal time-tree node, in preorder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InternalNode {
    pub depth: usize,
    pub lags: LagSet,
    pub at: usize,
    /// Both children are terminal, so the node can be pruned.
    pub prunable: bool,
    /// Index (left-to-right) of the first terminal node below this one.
    pub first_leaf: usize,
}

/// Information about one terminal time-tree node, left to right.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalNode {
    pub depth: usize,
    pub lags: LagSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeTree {
    root: TimeNode,
    max_lag: usize,
}

impl TimeTree {
    pub fn new(root: TimeNode, max_lag: usize) -> Result<Self> {
        if !root.valid_within(LagSet::new(0, max_lag)) {
            return Err(Error::Constraint("time split leaves a child with no lags".into()));
        }
        Ok(Self { root, max_lag })
    }

    /// Root-only tree owning an unsplit exposure tree.
    pub fn single(max_lag: usize) -> Self {
        Self {
            root: TimeNode::Leaf(ExposureTree::single()),
            max_lag,
        }
    }

    /// Tree realising a given lag partition; `splits` are split locations
    /// (lags `<= s` on one side). Built by bisecting the sorted split list.
    pub fn from_splits(max_lag: usize, splits: &[usize]) -> Result<Self> {
        let mut s = splits.to_vec();
        s.sort_unstable();
        s.dedup();
        if s.iter().any(|&v| v >= max_lag) {
            return Err(Error::config(format!(
                "split locations must lie in 0..{max_lag}, got {splits:?}"
            )));
        }
        fn build(s: &[usize]) -> TimeNode {
            if s.is_empty() {
                return TimeNode::Leaf(ExposureTree::single());
            }
            let mid = s.len() / 2;
            TimeNode::split(s[mid], build(&s[..mid]), build(&s[mid + 1..]))
        }
        Self::new(build(&s), max_lag)
    }

    pub fn root(&self) -> &TimeNode {
        &self.root
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    pub fn full_lags(&self) -> LagSet {
        LagSet::new(0, self.max_lag)
    }

    pub fn terminal_lag_sets(&self) -> Vec<LagSet> {
        self.terminals().into_iter().map(|t| t.lags).collect()
    }

    pub fn terminals(&self) -> Vec<TerminalNode> {
        let mut out = Vec::new();
        fn walk(node: &TimeNode, depth: usize, lags: LagSet, out: &mut Vec<TerminalNode>) {
            match node {
                TimeNode::Leaf(_) => out.push(TerminalNode { depth, lags }),
                TimeNode::Split { at, left, right } => {
                    walk(left, depth + 1, LagSet::new(lags.first, *at), out);
                    walk(right, depth + 1, LagSet::new(at + 1, lags.last), out);
                }
            }
        }
        walk(&self.root, 0, self.full_lags(), &mut out);
        out
    }

    pub fn internal_nodes(&self) -> Vec<InternalNode> {
        let mut out = Vec::new();
        fn walk(node: &TimeNode, depth: usize, lags: LagSet, leaf: &mut usize, out: &mut Vec<InternalNode>) {
            match node {
                TimeNode::Leaf(_) => *leaf += 1,
                TimeNode::Split { at, left, right } => {
                    let prunable = matches!(**left, TimeNode::Leaf(_)) && matches!(**right, TimeNode::Leaf(_));
                    out.push(InternalNode {
                        depth,
                        lags,
                        at: *at,
                        prunable,
                        first_leaf: *leaf,
                    });
                    walk(left, depth + 1, LagSet::new(lags.first, *at), leaf, out);
                    walk(right, depth + 1, LagSet::new(at + 1, lags.last), leaf, out);
                }
            }
        }
        walk(&self.root, 0, self.full_lags(), &mut 0, &mut out);
        out
    }

    pub fn leaf_count(&self) -> usize {
        self.exposure_trees().len()
    }

    pub fn exposure_trees(&self) -> Vec<&ExposureTree> {
        let mut out = Vec::new();
        fn walk<'a>(node: &'a TimeNode, out: &mut Vec<&'a ExposureTree>) {
            match node {
                TimeNode::Leaf(e) => out.push(e),
                TimeNode::Split { left, right, .. } => {
                    walk(left, out);
                    walk(right, out);
                }
            }
        }
        walk(&self.root, &mut out);
        out
    }

    pub fn exposure_trees_mut(&mut self) -> Vec<&mut ExposureTree> {
        let mut out = Vec::new();
        fn walk<'a>(node: &'a mut TimeNode, out: &mut Vec<&'a mut ExposureTree>) {
            match node {
                TimeNode::Leaf(e) => out.push(e),
                TimeNode::Split { left, right, .. } => {
                    walk(left, out);
                    walk(right, out);
                }
            }
        }
        walk(&mut self.root, &mut out);
        out
    }

    pub fn exposure_tree_mut(&mut self, leaf: usize) -> &mut ExposureTree {
        self.exposure_trees_mut().swap_remove(leaf)
    }

    /// Replace terminal node `leaf` by a split at `at` with the two given
    /// exposure trees as children.
    pub fn grow(&self, leaf: usize, at: usize, left: ExposureTree, right: ExposureTree) -> Result<Self> {
        fn walk(node: &mut TimeNode, target: usize, counter: &mut usize, repl: &mut Option<TimeNode>) {
            match node {
                TimeNode::Leaf(_) => {
                    if *counter == target {
                        if let Some(r) = repl.take() {
                            *node = r;
                        }
                    }
                    *counter += 1;
                }
                TimeNode::Split { left, right, .. } => {
                    walk(left, target, counter, repl);
                    walk(right, target, counter, repl);
                }
            }
        }
        let mut root = self.root.clone();
        let mut repl = Some(TimeNode::split(at, TimeNode::Leaf(left), TimeNode::Leaf(right)));
        walk(&mut root, leaf, &mut 0, &mut repl);
        if repl.is_some() {
            return Err(Error::param(format!("no terminal node {leaf}")));
        }
        Self::new(root, self.max_lag)
    }

    /// Collapse the internal node with preorder index `internal` (whose
    /// children must both be terminal) into one terminal node.
    pub fn prune(&self, internal: usize, merged: ExposureTree) -> Result<Self> {
        let mut root = self.root.clone();
        let mut repl = Some(TimeNode::Leaf(merged));
        let mut ok = false;
        fn walk(node: &mut TimeNode, target: usize, counter: &mut usize, repl: &mut Option<TimeNode>, ok: &mut bool) {
            if let TimeNode::Split { left, right, .. } = node {
                if *counter == target {
                    if matches!(**left, TimeNode::Leaf(_)) && matches!(**right, TimeNode::Leaf(_)) {
                        *node = repl.take().expect("replacement consumed once");
                        *ok = true;
                    }
                    *counter += 1;
                    return;
                }
                *counter += 1;
                walk(left, target, counter, repl, ok);
                walk(right, target, counter, repl, ok);
            }
        }
        walk(&mut root, internal, &mut 0, &mut repl, &mut ok);
        if !ok {
            return Err(Error::param(format!("internal node {internal} is not prunable")));
        }
        Self::new(root, self.max_lag)
    }

    /// Move the split of internal node `internal` to `at`, keeping every
    /// exposure tree. `None` when the new location empties a descendant.
    pub fn change(&self, internal: usize, at: usize) -> Option<Self> {
        let mut root = self.root.clone();
        fn walk(node: &mut TimeNode, target: usize, counter: &mut usize, new_at: usize) {
            if let TimeNode::Split { at, left, right } = node {
                if *counter == target {
                    *at = new_at;
                    *counter += 1;
                    return;
                }
                *counter += 1;
                walk(left, target, counter, new_at);
                walk(right, target, counter, new_at);
            }
        }
        walk(&mut root, internal, &mut 0, at);
        Self::new(root, self.max_lag).ok()
    }
}

/// One time tree with its nested exposure trees.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedTreeUnit {
    pub index: usize,
    pub time_tree: TimeTree,
    /// Structure of the time tree is frozen (informative fixed partition).
    pub fixed: bool,
}

impl NestedTreeUnit {
    pub fn new(index: usize, time_tree: TimeTree) -> Self {
        Self {
            index,
            time_tree,
            fixed: false,
        }
    }

    /// Number of free increments across all nested trees.
    pub fn free_parameter_count(&self) -> usize {
        self.time_tree.exposure_trees().iter().map(|e| e.bin_count() - 1).sum()
    }

    /// Concatenated free increments, nested trees in left-to-right order.
    pub fn free_increments(&self) -> Vec<f64> {
        self.time_tree
            .exposure_trees()
            .iter()
            .flat_map(|e| e.free_increments().iter().copied())
            .collect()
    }

    pub fn set_free_increments(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.free_parameter_count() {
            return Err(Error::param(format!(
                "unit {} has {} free increments, got {}",
                self.index,
                self.free_parameter_count(),
                theta.len()
            )));
        }
        let mut offset = 0;
        for e in self.time_tree.exposure_trees_mut() {
            let k = e.bin_count() - 1;
            e.set_free_increments(&theta[offset..offset + k])?;
            offset += k;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub units: Vec<NestedTreeUnit>,
    pub hyper: HyperState,
}

impl Ensemble {
    pub fn max_lag(&self) -> usize {
        self.units.first().map_or(0, |u| u.time_tree.max_lag())
    }

    /// `E_l`: some exposure tree covering lag `l` has at least two bins.
    pub fn lag_effect_indicators(&self, max_lag: usize) -> Vec<bool> {
        let mut out = vec![false; max_lag + 1];
        for unit in &self.units {
            let sets = unit.time_tree.terminal_lag_sets();
            for (lags, tree) in sets.iter().zip(unit.time_tree.exposure_trees()) {
                if tree.is_split() {
                    for l in lags.iter() {
                        out[l] = true;
                    }
                }
            }
        }
        out
    }
}
