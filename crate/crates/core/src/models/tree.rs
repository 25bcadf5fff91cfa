//! CART trees with exact threshold search.
//!
//! Every feature is presorted once; nodes keep their samples in per-feature
//! sorted order and partition those lists on split, so finding the best
//! split at a node is one linear scan per candidate feature. Thresholds are
//! midpoints between consecutive distinct values and `x <= threshold` goes
//! left. Ties between equally good splits keep the first one found
//! (feature ascending, then threshold ascending).

use ndarray::ArrayView2;
use rand::seq::index;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    /// Root is `nodes[0]`.
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn stump(feature: usize, threshold: f64, left: f64, right: f64) -> Self {
        Tree {
            nodes: vec![
                Node::Split {
                    feature,
                    threshold,
                    left: 1,
                    right: 2,
                },
                Node::Leaf { value: left },
                Node::Leaf { value: right },
            ],
        }
    }

    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { .. } => return at,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(x)] {
            Node::Leaf { value } => value,
            Node::Split { .. } => unreachable!("leaf_index returns a leaf"),
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }

    /// Checks child indices point forward inside the node table.
    pub fn is_well_formed(&self) -> bool {
        !self.nodes.is_empty()
            && self.nodes.iter().enumerate().all(|(i, n)| match *n {
                Node::Leaf { value } => value.is_finite(),
                Node::Split {
                    left,
                    right,
                    threshold,
                    ..
                } => left > i && right > i && left < self.nodes.len() && right < self.nodes.len() && !threshold.is_nan(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    /// Weighted Gini impurity on 0/1 targets.
    Gini,
    /// Weighted squared error on real targets.
    SquaredError,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    /// Splits are allowed while `depth < max_depth`; the root has depth 0.
    pub max_depth: usize,
    /// Minimum node weight for a split to be attempted.
    pub min_samples_split: f64,
    /// Minimum weight on each side of a split.
    pub min_samples_leaf: f64,
    /// Features tried per node; 0 or >= width means all.
    pub max_features: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: usize::MAX,
            min_samples_split: 2.0,
            min_samples_leaf: 1.0,
            max_features: 0,
        }
    }
}

/// Column-major training matrix with each feature's ascending sample order.
pub struct Presorted {
    n: usize,
    d: usize,
    cols: Vec<f64>,
    order: Vec<u32>,
}

impl Presorted {
    pub fn new(x: ArrayView2<f64>) -> Self {
        let (n, d) = x.dim();
        let mut cols = Vec::with_capacity(n * d);
        for f in 0..d {
            cols.extend(x.column(f).iter().copied());
        }
        let mut order = Vec::with_capacity(n * d);
        for f in 0..d {
            let col = &cols[f * n..(f + 1) * n];
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            order.extend(idx);
        }
        Presorted { n, d, cols, order }
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    pub fn width(&self) -> usize {
        self.d
    }

    fn value(&self, feature: usize, sample: u32) -> f64 {
        self.cols[feature * self.n + sample as usize]
    }
}

/// A grown tree plus the leaf each training sample landed in
/// (`usize::MAX` for zero-weight samples).
pub struct Grown {
    pub tree: Tree,
    pub leaf_of: Vec<usize>,
}

#[derive(Clone, Copy, Default)]
struct Acc {
    w: f64,
    s: f64,
    s2: f64,
}

impl Acc {
    fn add(&mut self, w: f64, t: f64) {
        self.w += w;
        self.s += w * t;
        self.s2 += w * t * t;
    }

    fn minus(self, o: Acc) -> Acc {
        Acc {
            w: self.w - o.w,
            s: self.s - o.s,
            s2: self.s2 - o.s2,
        }
    }

    /// Node cost whose decrease is the split gain.
    fn cost(&self, criterion: Criterion) -> f64 {
        if self.w <= 0.0 {
            return 0.0;
        }
        match criterion {
            Criterion::Gini => {
                let w1 = self.s;
                let w0 = self.w - self.s;
                self.w - (w0 * w0 + w1 * w1) / self.w
            }
            Criterion::SquaredError => -self.s * self.s / self.w,
        }
    }

    /// Impurity left in the node; zero means pure.
    fn impurity(&self, criterion: Criterion) -> f64 {
        match criterion {
            Criterion::Gini => self.cost(criterion),
            Criterion::SquaredError => self.s2 + self.cost(criterion),
        }
    }
}

struct Builder<'a> {
    ps: &'a Presorted,
    targets: &'a [f64],
    weights: &'a [f64],
    criterion: Criterion,
    params: TreeParams,
    rng: &'a mut ChaCha8Rng,
    nodes: Vec<Node>,
    leaf_of: Vec<usize>,
    goes_left: Vec<bool>,
}

/// Grows one tree on the samples with positive weight.
pub fn grow(
    ps: &Presorted,
    targets: &[f64],
    weights: &[f64],
    criterion: Criterion,
    params: TreeParams,
    rng: &mut ChaCha8Rng,
) -> Grown {
    assert_eq!(targets.len(), ps.n);
    assert_eq!(weights.len(), ps.n);
    let mut root = Vec::new();
    for f in 0..ps.d {
        root.extend(
            ps.order[f * ps.n..(f + 1) * ps.n]
                .iter()
                .filter(|&&i| weights[i as usize] > 0.0),
        );
    }
    let m = root.len() / ps.d.max(1);
    let mut b = Builder {
        ps,
        targets,
        weights,
        criterion,
        params,
        rng,
        nodes: Vec::new(),
        leaf_of: vec![usize::MAX; ps.n],
        goes_left: vec![false; ps.n],
    };
    if m == 0 || ps.d == 0 {
        return Grown {
            tree: Tree::leaf(0.0),
            leaf_of: b.leaf_of,
        };
    }
    b.build(root, m, 0);
    Grown {
        tree: Tree { nodes: b.nodes },
        leaf_of: b.leaf_of,
    }
}

impl Builder<'_> {
    fn build(&mut self, lists: Vec<u32>, m: usize, depth: usize) -> usize {
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });
        let d = self.ps.d;

        let mut total = Acc::default();
        for &i in &lists[..m] {
            total.add(self.weights[i as usize], self.targets[i as usize]);
        }
        let tol = 1e-10 * (total.w + total.s2).max(1.0);
        let splittable = depth < self.params.max_depth
            && total.w >= self.params.min_samples_split
            && total.impurity(self.criterion) > tol
            && m >= 2;

        let split = if splittable { self.best_split(&lists, m, total, tol) } else { None };
        let Some((feature, threshold, n_left)) = split else {
            for &i in &lists[..m] {
                self.leaf_of[i as usize] = at;
            }
            self.nodes[at] = Node::Leaf {
                value: total.s / total.w,
            };
            return at;
        };

        for &i in &lists[feature * m..feature * m + n_left] {
            self.goes_left[i as usize] = true;
        }
        let n_right = m - n_left;
        let mut left = Vec::with_capacity(n_left * d);
        let mut right = Vec::with_capacity(n_right * d);
        for f in 0..d {
            for &i in &lists[f * m..(f + 1) * m] {
                if self.goes_left[i as usize] {
                    left.push(i);
                } else {
                    right.push(i);
                }
            }
        }
        for &i in &lists[..m] {
            self.goes_left[i as usize] = false;
        }
        drop(lists);

        let l = self.build(left, n_left, depth + 1);
        let r = self.build(right, n_right, depth + 1);
        self.nodes[at] = Node::Split {
            feature,
            threshold,
            left: l,
            right: r,
        };
        at
    }

    fn candidates(&mut self) -> Vec<usize> {
        let d = self.ps.d;
        let k = self.params.max_features;
        if k == 0 || k >= d {
            (0..d).collect()
        } else {
            let mut picked = index::sample(self.rng, d, k).into_vec();
            picked.sort_unstable();
            picked
        }
    }

    fn best_split(&mut self, lists: &[u32], m: usize, total: Acc, tol: f64) -> Option<(usize, f64, usize)> {
        let parent = total.cost(self.criterion);
        let min_leaf = self.params.min_samples_leaf;
        let mut best: Option<(usize, f64, usize)> = None;
        let mut best_gain = tol;
        for f in self.candidates() {
            let list = &lists[f * m..(f + 1) * m];
            let mut left = Acc::default();
            for k in 0..m - 1 {
                let i = list[k];
                left.add(self.weights[i as usize], self.targets[i as usize]);
                let v = self.ps.value(f, i);
                let next = self.ps.value(f, list[k + 1]);
                if v >= next {
                    continue;
                }
                let right = total.minus(left);
                if left.w < min_leaf || right.w < min_leaf {
                    continue;
                }
                let gain = parent - left.cost(self.criterion) - right.cost(self.criterion);
                if gain > best_gain + tol {
                    best_gain = gain;
                    best = Some((f, midpoint(v, next), k + 1));
                }
            }
        }
        best
    }
}

/// Midpoint of `lo < hi`, kept strictly below `hi`.
pub fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid < hi {
        mid
    } else {
        lo
    }
}
