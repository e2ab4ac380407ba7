//! Random forest classifier over the 0-3 scoring scale.
//!
//! Each tree is grown on a bootstrap sample. At every node the features are
//! visited in a fresh random order until `mtry` of them that are not
//! constant within the node have been scored, and the (feature, threshold)
//! pair with the lowest weighted Gini impurity is kept. Trees are grown
//! until nodes are pure, reach `min_node_size`, or no candidate lowers the
//! impurity.
//!
//! Split quality is compared in exact integer arithmetic, so ties are
//! resolved by position alone: smaller feature index first, then smaller
//! threshold.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{common_dimension, LabeledInstance, Score, NUM_CLASSES};
use crate::error::{self, Error, Result};
use crate::seed;

const MODEL_FORMAT: &str = "tmascore-forest";
const MODEL_VERSION: u32 = 1;

/// Number of candidate features per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mtry {
    /// `floor(sqrt(p))`
    Sqrt,
    /// `floor(2 * sqrt(p))`
    TwoSqrt,
    Fixed(usize),
}

impl Mtry {
    pub fn resolve(self, p: usize) -> Result<usize> {
        let m = match self {
            Mtry::Sqrt => (p as f64).sqrt().floor() as usize,
            Mtry::TwoSqrt => (2.0 * (p as f64).sqrt()).floor() as usize,
            Mtry::Fixed(m) => {
                if m == 0 || m > p {
                    return error::parameter(format!("mtry {m} must lie in 1..={p}"));
                }
                m
            }
        };
        Ok(m.clamp(1, p))
    }
}

impl fmt::Display for Mtry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mtry::Sqrt => f.write_str("sqrt"),
            Mtry::TwoSqrt => f.write_str("2sqrt"),
            Mtry::Fixed(m) => write!(f, "{m}"),
        }
    }
}

impl FromStr for Mtry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sqrt" => Ok(Mtry::Sqrt),
            "2sqrt" => Ok(Mtry::TwoSqrt),
            other => match other.parse::<usize>() {
                Ok(m) if m > 0 => Ok(Mtry::Fixed(m)),
                _ => error::parameter(format!("mtry must be `sqrt`, `2sqrt` or a positive integer; got `{other}`")),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub trees: usize,
    pub mtry: Mtry,
    pub seed: u64,
    pub min_node_size: usize,
    /// Train every tree on a bootstrap sample. Disabling this gives each
    /// tree the full training set.
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            trees: 100,
            mtry: Mtry::Sqrt,
            seed: 0,
            min_node_size: 1,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    pub fn with_seed(self, seed: u64) -> Self {
        ForestParams { seed, ..self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        label: Score,
    },
}

/// Binary tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

impl DecisionTree {
    /// Builds a tree from explicit nodes, checking that child links point
    /// forward and stay in bounds.
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Model("tree has no nodes".into()));
        }
        for (i, n) in nodes.iter().enumerate() {
            if let Node::Split { left, right, threshold, .. } = n {
                let ok = |c: u32| (c as usize) > i && (c as usize) < nodes.len();
                if !ok(*left) || !ok(*right) || left == right || !threshold.is_finite() {
                    return Err(Error::Model(format!("node {i} has invalid children or threshold")));
                }
            }
        }
        Ok(DecisionTree { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn predict(&self, x: &[f64]) -> Score {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                Node::Leaf { label } => return *label,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature as usize),
                Node::Leaf { .. } => None,
            })
            .max()
    }
}

/// Per-class vote counts for one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VoteTally {
    pub votes: [u32; NUM_CLASSES],
}

impl VoteTally {
    pub fn from_counts(votes: [u32; NUM_CLASSES]) -> Self {
        VoteTally { votes }
    }

    pub fn get(&self, class: Score) -> u32 {
        self.votes[class.index()]
    }

    pub fn total(&self) -> u32 {
        self.votes.iter().sum()
    }

    /// Class with the most votes; ties go to the smallest class.
    pub fn winner(&self) -> Score {
        let mut best = 0;
        for c in 1..NUM_CLASSES {
            if self.votes[c] > self.votes[best] {
                best = c;
            }
        }
        Score::new(best as i64).expect("class index within scale")
    }

    /// The two largest counts, largest first.
    pub fn top_two(&self) -> (u32, u32) {
        let mut v = self.votes;
        v.sort_unstable_by(|a, b| b.cmp(a));
        (v[0], v[1])
    }
}

/// Vote-margin confidence `(n1 - n2) / T` of the top two classes.
pub fn confidence(tally: &VoteTally, trees: usize) -> Result<f64> {
    if trees == 0 || tally.total() as usize != trees {
        return error::validation(format!(
            "tally holds {} votes but the forest has {trees} trees",
            tally.total()
        ));
    }
    let (n1, n2) = tally.top_two();
    Ok(f64::from(n1 - n2) / trees as f64)
}

/// Trained ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    params: ForestParams,
    mtry: usize,
    dimension: usize,
    classes: Vec<Score>,
    trees: Vec<DecisionTree>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    forest: Forest,
}

impl Forest {
    /// Assembles a forest from explicit trees over `dimension` features.
    pub fn from_parts(trees: Vec<DecisionTree>, dimension: usize) -> Result<Self> {
        if trees.is_empty() {
            return error::validation("a forest needs at least one tree");
        }
        if trees.iter().any(|t| t.max_feature().is_some_and(|m| m >= dimension)) {
            return error::validation("a split refers to a feature beyond the dimension");
        }
        let mut classes: Vec<Score> = trees
            .iter()
            .flat_map(|t| t.nodes.iter())
            .filter_map(|n| match n {
                Node::Leaf { label } => Some(*label),
                Node::Split { .. } => None,
            })
            .collect();
        classes.sort_unstable();
        classes.dedup();
        Ok(Forest {
            params: ForestParams {
                trees: trees.len(),
                mtry: Mtry::Fixed(dimension),
                bootstrap: false,
                ..ForestParams::default()
            },
            mtry: dimension,
            dimension,
            classes,
            trees,
        })
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    /// Resolved number of candidate features per split.
    pub fn mtry(&self) -> usize {
        self.mtry
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Distinct training labels in ascending order.
    pub fn classes(&self) -> &[Score] {
        &self.classes
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Trained on a single label, so every tree is one leaf.
    pub fn is_degenerate(&self) -> bool {
        self.classes.len() < 2
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dimension {
            return error::validation(format!(
                "instance has {} features, the model expects {}",
                x.len(),
                self.dimension
            ));
        }
        Ok(())
    }

    pub fn predict_votes(&self, x: &[f64]) -> Result<VoteTally> {
        self.check_dim(x)?;
        let mut tally = VoteTally::default();
        for t in &self.trees {
            tally.votes[t.predict(x).index()] += 1;
        }
        Ok(tally)
    }

    pub fn predict_label(&self, x: &[f64]) -> Result<Score> {
        Ok(self.predict_votes(x)?.winner())
    }

    /// Tallies for many instances, computed in parallel, in input order.
    pub fn predict_votes_batch(&self, xs: &[LabeledInstance]) -> Result<Vec<VoteTally>> {
        xs.par_iter().map(|x| self.predict_votes(&x.features)).collect()
    }

    pub fn predict_labels(&self, xs: &[LabeledInstance]) -> Result<Vec<Score>> {
        Ok(self
            .predict_votes_batch(xs)?
            .into_iter()
            .map(|t| t.winner())
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            forest: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
        }
        let header: Header = serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        if header.format != MODEL_FORMAT {
            return Err(Error::Model(format!("not a model file (format `{}`)", header.format)));
        }
        if header.version != MODEL_VERSION {
            return Err(Error::Model(format!(
                "model version {} is not supported (expected {MODEL_VERSION})",
                header.version
            )));
        }
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        let f = file.forest;
        if f.trees.is_empty() || f.trees.len() != f.params.trees {
            return Err(Error::Model("tree count does not match parameters".into()));
        }
        for t in &f.trees {
            let t = DecisionTree::from_nodes(t.nodes.clone())?;
            if t.max_feature().is_some_and(|m| m >= f.dimension) {
                return Err(Error::Model("split feature beyond model dimension".into()));
            }
        }
        Ok(f)
    }

    pub fn save_model(&self) -> Result<Vec<u8>> {
        Ok(self.to_json()?.into_bytes())
    }

    pub fn load_model(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::Model(e.to_string()))?;
        Self::from_json(text)
    }
}

pub fn train_forest(data: &[LabeledInstance], params: &ForestParams) -> Result<Forest> {
    let p = common_dimension(data)?;
    if params.trees == 0 {
        return error::parameter("a forest needs at least one tree");
    }
    let mtry = params.mtry.resolve(p)?;
    let rows: Vec<&[f64]> = data.iter().map(|x| &*x.features).collect();
    let labels: Vec<u8> = data.iter().map(|x| x.label.get()).collect();
    let mut classes: Vec<Score> = data.iter().map(|x| x.label).collect();
    classes.sort_unstable();
    classes.dedup();

    let builder = TreeBuilder {
        rows: &rows,
        labels: &labels,
        p,
        mtry,
        min_node_size: params.min_node_size.max(1),
    };
    let trees = (0..params.trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng(seed::derive(params.seed, t as u64));
            let n = rows.len();
            let sample: Vec<u32> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n) as u32).collect()
            } else {
                (0..n as u32).collect()
            };
            builder.grow(sample, &mut rng)
        })
        .collect();
    Ok(Forest {
        params: *params,
        mtry,
        dimension: p,
        classes,
        trees,
    })
}

type Counts = [u32; NUM_CLASSES];

/// Gini score of a partition as the exact fraction `num / den` of
/// `sum_left c^2 / n_left + sum_right c^2 / n_right`. Larger is purer.
#[derive(Debug, Clone, Copy)]
struct Purity {
    num: u128,
    den: u128,
}

impl Purity {
    fn of_split(left: &Counts, nl: u32, right: &Counts, nr: u32) -> Self {
        let (nl, nr) = (u128::from(nl), u128::from(nr));
        Purity {
            num: sum_sq(left) * nr + sum_sq(right) * nl,
            den: nl * nr,
        }
    }

    fn cmp(&self, other: &Purity) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

fn sum_sq(c: &Counts) -> u128 {
    c.iter().map(|&v| u128::from(v) * u128::from(v)).sum()
}

fn majority(c: &Counts) -> Score {
    VoteTally::from_counts(*c).winner()
}

/// Threshold between two consecutive distinct values; `a` goes left, `b`
/// goes right.
pub(crate) fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= b {
        a
    } else {
        m
    }
}

struct TreeBuilder<'a> {
    rows: &'a [&'a [f64]],
    labels: &'a [u8],
    p: usize,
    mtry: usize,
    min_node_size: usize,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    purity: Purity,
}

impl TreeBuilder<'_> {
    fn counts(&self, idx: &[u32]) -> Counts {
        let mut c = [0u32; NUM_CLASSES];
        for &i in idx {
            c[usize::from(self.labels[i as usize])] += 1;
        }
        c
    }

    fn grow(&self, sample: Vec<u32>, rng: &mut impl Rng) -> DecisionTree {
        let mut order: Vec<u32> = (0..self.p as u32).collect();
        let mut nodes = vec![Node::Leaf {
            label: Score::new(0).unwrap(),
        }];
        // (node slot, sample indices)
        let mut stack = vec![(0usize, sample)];
        let mut scratch = Vec::new();
        while let Some((slot, idx)) = stack.pop() {
            let counts = self.counts(&idx);
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            let split = if pure || idx.len() <= self.min_node_size {
                None
            } else {
                self.best_split(&idx, &counts, &mut order, &mut scratch, rng)
            };
            match split {
                None => {
                    nodes[slot] = Node::Leaf {
                        label: majority(&counts),
                    }
                }
                Some(c) => {
                    let (l, r): (Vec<u32>, Vec<u32>) = idx
                        .iter()
                        .partition(|&&i| self.rows[i as usize][c.feature] <= c.threshold);
                    let left = nodes.len();
                    nodes.push(Node::Leaf {
                        label: Score::new(0).unwrap(),
                    });
                    nodes.push(Node::Leaf {
                        label: Score::new(0).unwrap(),
                    });
                    nodes[slot] = Node::Split {
                        feature: c.feature as u32,
                        threshold: c.threshold,
                        left: left as u32,
                        right: left as u32 + 1,
                    };
                    stack.push((left + 1, r));
                    stack.push((left, l));
                }
            }
        }
        DecisionTree { nodes }
    }

    /// Scores features in random order until `mtry` non-constant ones have
    /// been seen.
    fn best_split(
        &self,
        idx: &[u32],
        counts: &Counts,
        order: &mut [u32],
        scratch: &mut Vec<(f64, u8)>,
        rng: &mut impl Rng,
    ) -> Option<Candidate> {
        let mut scored = 0;
        let mut best: Option<Candidate> = None;
        for k in 0..self.p {
            if scored == self.mtry {
                break;
            }
            let j = rng.random_range(k..self.p);
            order.swap(k, j);
            let f = order[k] as usize;
            scratch.clear();
            scratch.extend(idx.iter().map(|&i| (self.rows[i as usize][f], self.labels[i as usize])));
            scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            if scratch[0].0 == scratch[scratch.len() - 1].0 {
                continue;
            }
            scored += 1;
            if let Some(c) = best_threshold(scratch, counts, f) {
                let better = match &best {
                    None => true,
                    Some(b) => match c.purity.cmp(&b.purity) {
                        Ordering::Greater => true,
                        Ordering::Equal => f < b.feature,
                        Ordering::Less => false,
                    },
                };
                if better {
                    best = Some(c);
                }
            }
        }
        best
    }
}

/// Best threshold on one feature; `sorted` holds (value, label) ascending.
fn best_threshold(sorted: &[(f64, u8)], total: &Counts, feature: usize) -> Option<Candidate> {
    let n = sorted.len() as u32;
    let mut left = [0u32; NUM_CLASSES];
    let mut best: Option<Candidate> = None;
    for i in 0..sorted.len() - 1 {
        left[usize::from(sorted[i].1)] += 1;
        let (a, b) = (sorted[i].0, sorted[i + 1].0);
        if a == b {
            continue;
        }
        let nl = i as u32 + 1;
        let mut right = *total;
        for c in 0..NUM_CLASSES {
            right[c] -= left[c];
        }
        let purity = Purity::of_split(&left, nl, &right, n - nl);
        // Strictly better only, so the smallest threshold wins ties.
        if best.as_ref().is_none_or(|b| purity.cmp(&b.purity) == Ordering::Greater) {
            best = Some(Candidate {
                feature,
                threshold: midpoint(a, b),
                purity,
            });
        }
    }
    best
}
