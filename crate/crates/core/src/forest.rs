//! Random forest binary classifier built from CART trees with Gini impurity,
//! impurity-decrease feature importances and recursive feature elimination.
//!
//! Every tree draws its bootstrap sample and per-split feature subsets from
//! its own stream derived from `(seed, tree index)`, so a fitted forest is
//! bit-identical whatever the number of rayon workers.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::FeatureMatrix;
use crate::seed;
use crate::types::ClassLabel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForestError {
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("training set is empty")]
    Empty,
    #[error("{rows} rows but {labels} labels")]
    LabelCount { rows: usize, labels: usize },
    #[error("input is missing model feature `{0}`")]
    SchemaMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows trees until leaves are pure.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// `None` means floor(sqrt(d)).
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: None,
            min_leaf: 1,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn with_seed(&self, seed: u64) -> ForestParams {
        ForestParams { seed, ..self.clone() }
    }

    fn validate(&self) -> Result<(), ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::InvalidParam("n_trees must be >= 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(ForestParams::invalid("min_leaf must be >= 1"));
        }
        if self.features_per_split == Some(0) {
            return Err(ForestParams::invalid("features_per_split must be >= 1"));
        }
        if self.max_depth == Some(0) {
            return Err(ForestParams::invalid("max_depth must be >= 1"));
        }
        Ok(())
    }

    fn invalid(msg: &str) -> ForestError {
        ForestError::InvalidParam(msg.to_string())
    }

    /// Features examined per split for `d` columns, clamped to [1, d].
    pub fn mtry(&self, d: usize) -> usize {
        let m = self.features_per_split.unwrap_or_else(|| (d as f64).sqrt().floor() as usize);
        m.clamp(1, d.max(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { high_fraction: f64, n: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

impl DecisionTree {
    fn leaf_for(&self, value: impl Fn(usize) -> f64) -> (f64, usize) {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split { feature, threshold, left, right } => {
                    at = if value(*feature) <= *threshold { *left } else { *right };
                }
                Node::Leaf { high_fraction, n } => return (*high_fraction, *n),
            }
        }
    }

    fn votes_high(&self, value: impl Fn(usize) -> f64) -> bool {
        self.leaf_for(value).0 > 0.5
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Split thresholds in node order.
    pub fn thresholds(&self) -> Vec<(usize, f64)> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, threshold, .. } => Some((*feature, *threshold)),
                Node::Leaf { .. } => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    feature_names: Vec<String>,
    trees: Vec<DecisionTree>,
    importances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<ClassLabel>,
    /// Fraction of trees voting `high` for each row.
    pub high_fraction: Vec<f64>,
}

impl ForestModel {
    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    /// Mean impurity decrease per feature, normalized to sum to 1 (all zeros
    /// when no tree has a split).
    pub fn importances(&self) -> &[f64] {
        &self.importances
    }

    /// Majority vote over trees; an exact tie predicts `low`.
    ///
    /// Columns are matched by name, so `x` may order its columns differently
    /// or carry extra ones.
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Prediction, ForestError> {
        let lookup: HashMap<&str, usize> =
            x.names().iter().enumerate().map(|(j, n)| (n.as_str(), j)).collect();
        let mapping = self
            .feature_names
            .iter()
            .map(|n| lookup.get(n.as_str()).copied().ok_or_else(|| ForestError::SchemaMismatch(n.clone())))
            .collect::<Result<Vec<_>, _>>()?;

        let mut labels = Vec::with_capacity(x.n_rows());
        let mut fractions = Vec::with_capacity(x.n_rows());
        for row in 0..x.n_rows() {
            let value = |f: usize| x.value(row, mapping[f]);
            let high = self.trees.iter().filter(|t| t.votes_high(value)).count();
            labels.push(if 2 * high > self.trees.len() { ClassLabel::High } else { ClassLabel::Low });
            fractions.push(high as f64 / self.trees.len() as f64);
        }
        Ok(Prediction { labels, high_fraction: fractions })
    }

    /// Plain-text dump of every tree and the importances.
    pub fn export_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "forest trees={} features={}", self.trees.len(), self.feature_names.len());
        for (j, (name, imp)) in self.feature_names.iter().zip(&self.importances).enumerate() {
            let _ = writeln!(out, "feature {j} {name} importance={imp:.6}");
        }
        for (t, tree) in self.trees.iter().enumerate() {
            let _ = writeln!(out, "tree {t}");
            for (k, node) in tree.nodes.iter().enumerate() {
                match node {
                    Node::Split { feature, threshold, left, right } => {
                        let _ = writeln!(
                            out,
                            "  node {k} split feature={feature} threshold={threshold} left={left} right={right}"
                        );
                    }
                    Node::Leaf { high_fraction, n } => {
                        let _ = writeln!(out, "  node {k} leaf high_fraction={high_fraction:.6} n={n}");
                    }
                }
            }
        }
        out
    }
}

/// Dense ranks of a column's values, the sorted distinct values, and the
/// row order by rank.
struct RankedColumn {
    ranks: Vec<u32>,
    values: Vec<f64>,
    order: Vec<u32>,
}

impl RankedColumn {
    fn new(col: &[f64]) -> RankedColumn {
        let mut values = col.to_vec();
        values.sort_unstable_by(f64::total_cmp);
        values.dedup();
        let ranks: Vec<u32> = col.iter().map(|v| values.partition_point(|u| u < v) as u32).collect();
        let mut order: Vec<u32> = (0..col.len() as u32).collect();
        order.sort_by_key(|&r| ranks[r as usize]);
        RankedColumn { ranks, values, order }
    }
}

/// Samples sharing one distinct value at a node.
#[derive(Clone, Copy)]
struct Run {
    rank: u32,
    n: u32,
    high: u32,
}

struct TreeBuilder<'a> {
    columns: &'a [&'a RankedColumn],
    high: &'a [bool],
    /// Bootstrap multiplicity of each row.
    weight: Vec<u32>,
    min_leaf: usize,
    max_depth: Option<usize>,
    mtry: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    importance: Vec<f64>,
    order: Vec<usize>,
    mark: Vec<u32>,
    stamp: u32,
    keys: Vec<u64>,
    runs: Vec<Run>,
}

struct Split {
    feature: usize,
    threshold: f64,
    left_max_rank: u32,
    score: f64,
}

fn count_proxy(high: usize, n: usize) -> f64 {
    let h = high as f64;
    let l = (n - high) as f64;
    (h * h + l * l) / n as f64
}

impl<'a> TreeBuilder<'a> {
    /// `rows` holds distinct rows; each counts with its bootstrap weight.
    fn build(&mut self, rows: &mut [u32], depth: usize) -> usize {
        let mut n = 0usize;
        let mut n_high = 0usize;
        for &r in rows.iter() {
            let w = self.weight[r as usize] as usize;
            n += w;
            if self.high[r as usize] {
                n_high += w;
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { high_fraction: n_high as f64 / n as f64, n });

        let depth_capped = self.max_depth.is_some_and(|m| depth >= m);
        if n_high == 0 || n_high == n || depth_capped || n < 2 * self.min_leaf {
            return id;
        }
        let Some(split) = self.best_split(rows, n, n_high) else {
            return id;
        };

        // Weighted Gini decrease in sample-count units.
        let decrease = split.score - count_proxy(n_high, n);
        self.importance[split.feature] += decrease.max(0.0);

        let ranks = &self.columns[split.feature].ranks;
        let mut lo = 0;
        for k in 0..rows.len() {
            if ranks[rows[k] as usize] <= split.left_max_rank {
                rows.swap(lo, k);
                lo += 1;
            }
        }
        let (left_rows, right_rows) = rows.split_at_mut(lo);
        let left = self.build(left_rows, depth + 1);
        let right = self.build(right_rows, depth + 1);
        self.nodes[id] = Node::Split { feature: split.feature, threshold: split.threshold, left, right };
        id
    }

    /// Distinct-value runs of column `f` over `rows`, ascending.
    fn collect_runs(&mut self, f: usize, rows: &[u32], scan: bool) {
        let col = &self.columns[f];
        self.runs.clear();
        let push = |runs: &mut Vec<Run>, rank: u32, w: u32, h: bool| {
            let hw = if h { w } else { 0 };
            match runs.last_mut() {
                Some(last) if last.rank == rank => {
                    last.n += w;
                    last.high += hw;
                }
                _ => runs.push(Run { rank, n: w, high: hw }),
            }
        };
        if scan {
            for &r in &col.order {
                if self.mark[r as usize] == self.stamp {
                    push(&mut self.runs, col.ranks[r as usize], self.weight[r as usize], self.high[r as usize]);
                }
            }
        } else {
            self.keys.clear();
            self.keys.extend(rows.iter().map(|&r| (u64::from(col.ranks[r as usize]) << 32) | u64::from(r)));
            self.keys.sort_unstable();
            for &k in &self.keys {
                let r = (k & 0xffff_ffff) as usize;
                push(&mut self.runs, (k >> 32) as u32, self.weight[r], self.high[r]);
            }
        }
    }

    /// Examines features in random order until `mtry` non-constant ones have
    /// been scored; ties go to the feature visited first, then the lowest
    /// threshold.
    fn best_split(&mut self, rows: &[u32], n: usize, total_high: usize) -> Option<Split> {
        let d = self.columns.len();
        let n_total = self.weight.len();
        // Scanning the presorted order beats sorting for large nodes.
        let scan = rows.len() * 8 > n_total;
        if scan {
            self.stamp += 1;
            for &r in rows {
                self.mark[r as usize] = self.stamp;
            }
        }
        let mut best: Option<Split> = None;
        let mut scored = 0;
        for k in 0..d {
            let j = self.rng.random_range(k..d);
            self.order.swap(k, j);
            let f = self.order[k];
            self.collect_runs(f, rows, scan);
            if self.runs.len() < 2 {
                continue;
            }
            scored += 1;

            let col = &self.columns[f];
            let mut nl = 0usize;
            let mut left_high = 0usize;
            for s in 0..self.runs.len() - 1 {
                nl += self.runs[s].n as usize;
                left_high += self.runs[s].high as usize;
                let nr = n - nl;
                if nl < self.min_leaf || nr < self.min_leaf {
                    continue;
                }
                let score = count_proxy(left_high, nl) + count_proxy(total_high - left_high, nr);
                let better = match &best {
                    None => true,
                    Some(b) => score > b.score,
                };
                if better {
                    let (ra, rb) = (self.runs[s].rank, self.runs[s + 1].rank);
                    let (a, b) = (col.values[ra as usize], col.values[rb as usize]);
                    let mut threshold = a + (b - a) / 2.0;
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(Split { feature: f, threshold, left_max_rank: ra, score });
                }
            }
            if scored == self.mtry {
                break;
            }
        }
        best
    }
}

fn fit_tree(columns: &[&RankedColumn], high: &[bool], params: &ForestParams, tree_index: usize) -> (DecisionTree, Vec<f64>) {
    let n = high.len();
    let d = columns.len();
    let mut rng = seed::rng(params.seed, &[tree_index as u64]);
    let mut weight = vec![0u32; n];
    if params.bootstrap {
        for _ in 0..n {
            weight[rng.random_range(0..n)] += 1;
        }
    } else {
        weight.fill(1);
    }
    let mut rows: Vec<u32> = (0..n as u32).filter(|&r| weight[r as usize] > 0).collect();
    let mut builder = TreeBuilder {
        columns,
        high,
        weight,
        min_leaf: params.min_leaf,
        max_depth: params.max_depth,
        mtry: params.mtry(d),
        rng,
        nodes: Vec::new(),
        importance: vec![0.0; d],
        order: (0..d).collect(),
        mark: vec![0; n],
        stamp: 0,
        keys: Vec::with_capacity(n),
        runs: Vec::with_capacity(n),
    };
    builder.build(&mut rows, 0);
    (DecisionTree { nodes: builder.nodes }, builder.importance)
}

fn normalize(v: &mut [f64]) {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        v.iter_mut().for_each(|x| *x /= total);
    }
}

/// Fits `n_trees` CART trees on bootstrap samples.
pub fn fit(x: &FeatureMatrix, y: &[ClassLabel], params: &ForestParams) -> Result<ForestModel, ForestError> {
    params.validate()?;
    let high = check_labels(x, y)?;
    let columns: Vec<RankedColumn> = (0..x.n_cols()).map(|j| RankedColumn::new(x.column(j))).collect();
    let refs: Vec<&RankedColumn> = columns.iter().collect();
    Ok(fit_ranked(x.names().to_vec(), &refs, &high, params))
}

fn check_labels(x: &FeatureMatrix, y: &[ClassLabel]) -> Result<Vec<bool>, ForestError> {
    if x.n_rows() == 0 || x.n_cols() == 0 {
        return Err(ForestError::Empty);
    }
    if y.len() != x.n_rows() {
        return Err(ForestError::LabelCount { rows: x.n_rows(), labels: y.len() });
    }
    let high: Vec<bool> = y.iter().map(|&l| l == ClassLabel::High).collect();
    if high.iter().all(|&h| h) || high.iter().all(|&h| !h) {
        return Err(ForestError::SingleClass);
    }
    Ok(high)
}

fn fit_ranked(feature_names: Vec<String>, columns: &[&RankedColumn], high: &[bool], params: &ForestParams) -> ForestModel {
    let fitted: Vec<(DecisionTree, Vec<f64>)> =
        (0..params.n_trees).into_par_iter().map(|t| fit_tree(columns, high, params, t)).collect();

    let d = columns.len();
    let mut importances = vec![0.0; d];
    let mut trees = Vec::with_capacity(fitted.len());
    for (tree, mut imp) in fitted {
        normalize(&mut imp);
        for (acc, v) in importances.iter_mut().zip(&imp) {
            *acc += v;
        }
        trees.push(tree);
    }
    normalize(&mut importances);
    ForestModel { feature_names, trees, importances }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RfeParams {
    pub target_k: usize,
    pub drop_frac: f64,
}

impl Default for RfeParams {
    fn default() -> Self {
        RfeParams { target_k: 50, drop_frac: 0.10 }
    }
}

#[derive(Debug, Clone)]
pub struct RfeResult {
    /// Surviving column indices into the input matrix, ascending.
    pub selected: Vec<usize>,
    pub selected_names: Vec<String>,
    pub rounds: usize,
    /// Forest refit on the surviving columns.
    pub model: ForestModel,
}

impl RfeResult {
    /// Final-model importances scattered back onto the input columns
    /// (eliminated columns get 0).
    pub fn full_importances(&self, n_cols: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_cols];
        for (&j, &imp) in self.selected.iter().zip(self.model.importances()) {
            out[j] = imp;
        }
        out
    }
}

/// Recursive feature elimination: refit, then drop the
/// ceil(drop_frac * d) least important columns, until at most `target_k`
/// remain. A round never drops below `target_k`. Inputs with
/// `d <= target_k` pass through with zero rounds.
pub fn rfe(
    x: &FeatureMatrix,
    y: &[ClassLabel],
    params: &ForestParams,
    rfe_params: &RfeParams,
) -> Result<RfeResult, ForestError> {
    if !(rfe_params.drop_frac > 0.0 && rfe_params.drop_frac < 1.0) {
        return Err(ForestError::InvalidParam(format!(
            "drop_frac must be in (0, 1), got {}",
            rfe_params.drop_frac
        )));
    }
    if rfe_params.target_k == 0 {
        return Err(ForestError::InvalidParam("target_k must be >= 1".into()));
    }
    params.validate()?;
    let high = check_labels(x, y)?;
    let ranked: Vec<RankedColumn> = (0..x.n_cols()).map(|j| RankedColumn::new(x.column(j))).collect();
    let fit_subset = |selected: &[usize], rounds: usize| {
        let names = selected.iter().map(|&j| x.names()[j].clone()).collect();
        let cols: Vec<&RankedColumn> = selected.iter().map(|&j| &ranked[j]).collect();
        fit_ranked(names, &cols, &high, &params.with_seed(seed::derive(params.seed, &[rounds as u64])))
    };
    let mut selected: Vec<usize> = (0..x.n_cols()).collect();
    let mut rounds = 0;
    while selected.len() > rfe_params.target_k {
        let model = fit_subset(&selected, rounds);
        let d = selected.len();
        let n_drop = ((rfe_params.drop_frac * d as f64).ceil() as usize).clamp(1, d - rfe_params.target_k);
        let mut ranked: Vec<usize> = (0..d).collect();
        // Least important first; among equals the later column goes first.
        ranked.sort_by(|&a, &b| {
            model.importances()[a].total_cmp(&model.importances()[b]).then(b.cmp(&a))
        });
        let mut drop = vec![false; d];
        for &k in &ranked[..n_drop] {
            drop[k] = true;
        }
        selected = selected.iter().zip(&drop).filter(|(_, &dr)| !dr).map(|(&j, _)| j).collect();
        rounds += 1;
    }
    let model = fit_subset(&selected, rounds);
    Ok(RfeResult {
        selected_names: model.feature_names().to_vec(),
        selected,
        rounds,
        model,
    })
}
