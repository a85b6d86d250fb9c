use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::logistic::sigmoid;
use super::RiskError;

const MAX_THRESHOLDS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "kebab-case")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn d(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + d(t, *left).max(d(t, *right)),
            }
        }
        d(self, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    pub min_child_weight: f64,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            rounds: 100,
            max_depth: 4,
            learning_rate: 0.1,
            lambda: 1.0,
            min_child_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: f64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            trees: 100,
            max_depth: 8,
            min_leaf: 2.0,
        }
    }
}

/// Candidate split points per feature and each row's bin under them.
struct Binned {
    thresholds: Vec<Vec<f64>>,
    /// `bins[row][feature]`: number of thresholds strictly below the value.
    bins: Vec<Vec<u8>>,
}

impl Binned {
    fn new(x: &[Vec<f64>]) -> Binned {
        let d = x.first().map_or(0, Vec::len);
        let thresholds: Vec<Vec<f64>> = (0..d)
            .map(|f| {
                let mut vals: Vec<f64> = x.iter().map(|r| r[f]).collect();
                vals.sort_by(f64::total_cmp);
                vals.dedup();
                let mids: Vec<f64> = vals.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
                if mids.len() <= MAX_THRESHOLDS {
                    mids
                } else {
                    (1..=MAX_THRESHOLDS)
                        .map(|k| mids[k * mids.len() / (MAX_THRESHOLDS + 1)])
                        .collect()
                }
            })
            .collect();
        let bins = x
            .iter()
            .map(|r| {
                r.iter()
                    .zip(&thresholds)
                    .map(|(v, th)| th.partition_point(|t| t < v) as u8)
                    .collect()
            })
            .collect();
        Binned { thresholds, bins }
    }
}

struct Grower<'a> {
    binned: &'a Binned,
    g: &'a [f64],
    h: &'a [f64],
    lambda: f64,
    min_child_weight: f64,
    max_depth: usize,
    /// Leaf weights are `-scale * G / (H + lambda)`.
    scale: f64,
    features_per_split: Option<usize>,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.lambda)
    }

    fn grow(&mut self, rows: &[usize], depth: usize, rng: &mut Option<ChaCha8Rng>) -> usize {
        let g: f64 = rows.iter().map(|&r| self.g[r]).sum();
        let h: f64 = rows.iter().map(|&r| self.h[r]).sum();
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: -self.scale * g / (h + self.lambda),
        });
        if depth >= self.max_depth || rows.len() < 2 {
            return id;
        }

        let d = self.binned.thresholds.len();
        let features: Vec<usize> = match (self.features_per_split, rng.as_mut()) {
            (Some(k), Some(rng)) if k < d => {
                let mut f = sample_indices(rng, d, k).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        };
        let parent = self.score(g, h);
        let mut best: Option<(f64, usize, usize)> = None;
        for f in features {
            let nt = self.binned.thresholds[f].len();
            if nt == 0 {
                continue;
            }
            let mut hg = vec![0.0; nt + 1];
            let mut hh = vec![0.0; nt + 1];
            for &r in rows {
                let b = self.binned.bins[r][f] as usize;
                hg[b] += self.g[r];
                hh[b] += self.h[r];
            }
            let (mut gl, mut hl) = (0.0, 0.0);
            for k in 0..nt {
                gl += hg[k];
                hl += hh[k];
                let (gr, hr) = (g - gl, h - hl);
                if hl < self.min_child_weight || hr < self.min_child_weight {
                    continue;
                }
                let gain = self.score(gl, hl) + self.score(gr, hr) - parent;
                if gain > 1e-12 && best.is_none_or(|(b, _, _)| gain > b) {
                    best = Some((gain, f, k));
                }
            }
        }
        let Some((_, f, k)) = best else { return id };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&r| (self.binned.bins[r][f] as usize) <= k);
        let left = self.grow(&left_rows, depth + 1, rng);
        let right = self.grow(&right_rows, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: f,
            threshold: self.binned.thresholds[f][k],
            left,
            right,
        };
        id
    }
}

fn logloss(f: &[f64], y: &[u8]) -> f64 {
    f.iter()
        .zip(y)
        .map(|(&z, &t)| z.max(0.0) + (-z.abs()).exp().ln_1p() - t as f64 * z)
        .sum::<f64>()
        / y.len() as f64
}

/// Fitted boosting ensemble with its per-round training loss (entry 0 is
/// the loss of the constant base score).
pub struct Boosted {
    pub base_score: f64,
    pub trees: Vec<Tree>,
    pub loss_history: Vec<f64>,
}

/// Second-order boosting on the logistic loss, starting from the log-odds
/// of the base rate.
pub fn train_gbtree(x: &[Vec<f64>], y: &[u8], p: &BoostParams) -> Result<Boosted, RiskError> {
    let n = y.len();
    let rate = (y.iter().map(|&v| v as f64).sum::<f64>() / n as f64).clamp(1e-6, 1.0 - 1e-6);
    let base_score = (rate / (1.0 - rate)).ln();
    let binned = Binned::new(x);
    let mut f = vec![base_score; n];
    let mut history = vec![logloss(&f, y)];
    let mut trees = Vec::with_capacity(p.rounds);
    let rows: Vec<usize> = (0..n).collect();
    for round in 0..p.rounds {
        let (g, h): (Vec<f64>, Vec<f64>) = f
            .iter()
            .zip(y)
            .map(|(&z, &t)| {
                let q = sigmoid(z);
                (q - t as f64, q * (1.0 - q))
            })
            .unzip();
        let mut grower = Grower {
            binned: &binned,
            g: &g,
            h: &h,
            lambda: p.lambda,
            min_child_weight: p.min_child_weight,
            max_depth: p.max_depth,
            scale: p.learning_rate,
            features_per_split: None,
            nodes: Vec::new(),
        };
        grower.grow(&rows, 0, &mut None);
        let tree = Tree { nodes: grower.nodes };
        for (fi, row) in f.iter_mut().zip(x) {
            *fi += tree.predict(row);
        }
        let loss = logloss(&f, y);
        if !loss.is_finite() {
            return Err(RiskError::NonFiniteLoss { iteration: round });
        }
        history.push(loss);
        trees.push(tree);
    }
    Ok(Boosted {
        base_score,
        trees,
        loss_history: history,
    })
}

/// Bagged regression trees on the 0/1 label with `sqrt(d)` candidate
/// features per split; the forest probability is the mean leaf value.
pub fn train_forest(x: &[Vec<f64>], y: &[u8], p: &ForestParams, seed: u64) -> Vec<Tree> {
    let n = y.len();
    let d = x.first().map_or(0, Vec::len);
    let binned = Binned::new(x);
    let g: Vec<f64> = y.iter().map(|&t| -(t as f64)).collect();
    let h = vec![1.0; n];
    let k = ((d as f64).sqrt().ceil() as usize).max(1);
    (0..p.trees)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut grower = Grower {
                binned: &binned,
                g: &g,
                h: &h,
                lambda: 0.0,
                min_child_weight: p.min_leaf,
                max_depth: p.max_depth,
                scale: 1.0,
                features_per_split: Some(k),
                nodes: Vec::new(),
            };
            let mut rng = Some(rng);
            grower.grow(&rows, 0, &mut rng);
            Tree { nodes: grower.nodes }
        })
        .collect()
}
