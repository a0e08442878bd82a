use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::binning::{midpoint, BinnedMatrix};
use super::params::{SplitMode, TrainParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: u32,
        threshold: f64,
        /// Direction for NaN inputs.
        default_left: bool,
        left: u32,
        right: u32,
        gain: f64,
        cover: f64,
    },
    /// `weight` already includes the learning rate.
    Leaf { weight: f64, cover: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                Node::Leaf { weight, .. } => return *weight,
                Node::Split {
                    feature,
                    threshold,
                    default_left,
                    left,
                    right,
                    ..
                } => {
                    let x = row[*feature as usize];
                    let go_left = if x.is_nan() { *default_left } else { x < *threshold };
                    i = if go_left { *left } else { *right } as usize;
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
}

/// Regularised Newton leaf weight `−G / (H + λ)`.
pub fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    let denom = h + lambda;
    if denom <= 0.0 {
        0.0
    } else {
        -g / denom
    }
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    let denom = h + lambda;
    if denom <= 0.0 {
        0.0
    } else {
        g * g / denom
    }
}

/// `½[G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)] − γ`
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    0.5 * (score(gl, hl, lambda) + score(gr, hr, lambda) - score(gl + gr, hl + hr, lambda)) - gamma
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    /// Bin index (histogram) or position among sorted distinct values (exact).
    slot: usize,
    threshold: f64,
    gain: f64,
}

/// Gradient sum, hessian sum and row count per bin.
type Cell = (f64, f64, u32);
type Hist = Vec<Cell>;

pub(crate) struct Grower<'a> {
    pub binned: &'a BinnedMatrix,
    /// Raw row-major data, used by exact mode.
    pub raw: &'a [f64],
    pub n_features: usize,
    pub params: &'a TrainParams,
    pub grad: &'a [f64],
    pub hess: &'a [f64],
    /// Features this tree may split on, ascending.
    pub features: &'a [usize],
    pub nodes: Vec<Node>,
}

impl Grower<'_> {
    pub fn grow(mut self, rows: &mut [u32]) -> Tree {
        let hist = match self.params.split_mode {
            SplitMode::Histogram => Some(self.histograms(rows)),
            SplitMode::Exact => None,
        };
        self.node(rows, 0, hist);
        Tree { nodes: self.nodes }
    }

    fn totals(&self, rows: &[u32]) -> (f64, f64) {
        rows.iter().fold((0.0, 0.0), |(g, h), &i| (g + self.grad[i as usize], h + self.hess[i as usize]))
    }

    /// One histogram per candidate feature, in `self.features` order.
    fn histograms(&self, rows: &[u32]) -> Vec<Hist> {
        self.features
            .par_iter()
            .map(|&j| {
                let col = self.binned.column(j);
                let mut hist = vec![(0.0, 0.0, 0); self.binned.features[j].len()];
                for &i in rows {
                    let cell = &mut hist[col[i as usize] as usize];
                    cell.0 += self.grad[i as usize];
                    cell.1 += self.hess[i as usize];
                    cell.2 += 1;
                }
                hist
            })
            .collect()
    }

    /// Scans cuts between consecutive non-empty cells; `threshold(b, next)`
    /// places the cut between cell `b` and the next non-empty cell.
    fn scan(&self, feature: usize, cells: &[Cell], g: f64, h: f64, threshold: impl Fn(usize, usize) -> f64) -> Option<Candidate> {
        let p = self.params;
        let mut best: Option<Candidate> = None;
        let (mut gl, mut hl) = (0.0, 0.0);
        let occupied: Vec<usize> = (0..cells.len()).filter(|&b| cells[b].2 > 0).collect();
        for pair in occupied.windows(2) {
            let (slot, next) = (pair[0], pair[1]);
            gl += cells[slot].0;
            hl += cells[slot].1;
            let (gr, hr) = (g - gl, h - hl);
            if hl < p.min_child_weight || hr < p.min_child_weight {
                continue;
            }
            let gain = split_gain(gl, hl, gr, hr, p.lambda, p.gamma);
            if gain > 0.0 && best.is_none_or(|b| gain > b.gain) {
                best = Some(Candidate {
                    feature,
                    slot,
                    threshold: threshold(slot, next),
                    gain,
                });
            }
        }
        best
    }

    fn best_histogram(&self, hist: &[Hist], g: f64, h: f64) -> Option<Candidate> {
        let per_feature: Vec<Option<Candidate>> = self
            .features
            .par_iter()
            .zip(hist.par_iter())
            .map(|(&j, cells)| {
                let fb = &self.binned.features[j];
                self.scan(j, cells, g, h, |b, next| fb.threshold(b, next))
            })
            .collect();
        reduce(per_feature)
    }

    fn best_exact(&self, rows: &[u32], g: f64, h: f64) -> Option<Candidate> {
        let m = self.n_features;
        let per_feature: Vec<Option<Candidate>> = self
            .features
            .par_iter()
            .map(|&j| {
                let mut by_value: Vec<(f64, u32)> = rows.iter().map(|&i| (self.raw[i as usize * m + j], i)).collect();
                by_value.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let mut values: Vec<f64> = Vec::new();
                let mut cells: Vec<Cell> = Vec::new();
                for (v, i) in by_value {
                    if values.last() != Some(&v) {
                        values.push(v);
                        cells.push((0.0, 0.0, 0));
                    }
                    let c = cells.last_mut().expect("pushed");
                    c.0 += self.grad[i as usize];
                    c.1 += self.hess[i as usize];
                    c.2 += 1;
                }
                self.scan(j, &cells, g, h, |s, next| midpoint(values[s], values[next]))
            })
            .collect();
        reduce(per_feature)
    }

    fn leaf(&mut self, g: f64, h: f64) -> u32 {
        let p = self.params;
        self.nodes.push(Node::Leaf {
            weight: p.learning_rate * leaf_weight(g, h, p.lambda),
            cover: h,
        });
        (self.nodes.len() - 1) as u32
    }

    fn goes_left(&self, row: u32, c: &Candidate) -> bool {
        match self.params.split_mode {
            SplitMode::Histogram => (self.binned.column(c.feature)[row as usize] as usize) <= c.slot,
            SplitMode::Exact => self.raw[row as usize * self.n_features + c.feature] < c.threshold,
        }
    }

    fn node(&mut self, rows: &mut [u32], depth: usize, hist: Option<Vec<Hist>>) -> u32 {
        let (g, h) = self.totals(rows);
        if depth >= self.params.max_depth || rows.len() < 2 {
            return self.leaf(g, h);
        }
        let best = match &hist {
            Some(hs) => self.best_histogram(hs, g, h),
            None => self.best_exact(rows, g, h),
        };
        let Some(c) = best else {
            return self.leaf(g, h);
        };

        // stable partition: left rows first, original order kept on each side
        let (mut left, mut right): (Vec<u32>, Vec<u32>) = rows.iter().partition(|&&i| self.goes_left(i, &c));
        let n_left = left.len();
        rows[..n_left].copy_from_slice(&left);
        rows[n_left..].copy_from_slice(&right);
        left.clear();
        right.clear();

        let (hist_left, hist_right) = match hist {
            Some(parent) => {
                let (small, large_is_left) = if n_left <= rows.len() - n_left {
                    (&rows[..n_left], false)
                } else {
                    (&rows[n_left..], true)
                };
                let small_hist = self.histograms(small);
                let large_hist: Vec<Hist> = parent
                    .into_iter()
                    .zip(&small_hist)
                    .map(|(p, s)| p.into_iter().zip(s).map(|(a, b)| (a.0 - b.0, a.1 - b.1, a.2 - b.2)).collect())
                    .collect();
                if large_is_left {
                    (Some(large_hist), Some(small_hist))
                } else {
                    (Some(small_hist), Some(large_hist))
                }
            }
            None => (None, None),
        };

        let index = self.nodes.len();
        self.nodes.push(Node::Leaf { weight: 0.0, cover: h });
        let (lrows, rrows) = rows.split_at_mut(n_left);
        let left_id = self.node(lrows, depth + 1, hist_left);
        let right_id = self.node(rrows, depth + 1, hist_right);
        self.nodes[index] = Node::Split {
            feature: c.feature as u32,
            threshold: c.threshold,
            default_left: true,
            left: left_id,
            right: right_id,
            gain: c.gain,
            cover: h,
        };
        index as u32
    }
}

/// Highest gain wins; on equal gain the earlier feature (then bin) is kept.
fn reduce(per_feature: Vec<Option<Candidate>>) -> Option<Candidate> {
    per_feature.into_iter().flatten().fold(None, |best: Option<Candidate>, c| match best {
        Some(b) if b.gain >= c.gain => Some(b),
        _ => Some(c),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gain_formula() {
        // G_L=-2,H_L=2 ; G_R=2,H_R=2 ; λ=0 → ½[2 + 2 − 0] = 2
        assert_eq!(split_gain(-2.0, 2.0, 2.0, 2.0, 0.0, 0.0), 2.0);
        assert_eq!(split_gain(-2.0, 2.0, 2.0, 2.0, 0.0, 0.5), 1.5);
        assert_eq!(leaf_weight(-6.0, 2.0, 1.0), 2.0);
    }

    #[test]
    fn reduce_prefers_lower_feature_on_ties() {
        let c = |feature, gain| Some(Candidate { feature, slot: 0, threshold: 0.0, gain });
        assert_eq!(reduce(vec![c(0, 1.0), c(1, 1.0)]).unwrap().feature, 0);
        assert_eq!(reduce(vec![c(0, 1.0), c(1, 2.0), None]).unwrap().feature, 1);
        assert!(reduce(vec![None]).is_none());
    }

    #[test]
    fn traversal_and_default_direction() {
        let t = Tree {
            nodes: vec![
                Node::Split { feature: 0, threshold: 1.5, default_left: true, left: 1, right: 2, gain: 1.0, cover: 2.0 },
                Node::Leaf { weight: -1.0, cover: 1.0 },
                Node::Leaf { weight: 1.0, cover: 1.0 },
            ],
        };
        assert_eq!(t.predict(&[1.0]), -1.0);
        assert_eq!(t.predict(&[1.5]), 1.0);
        assert_eq!(t.predict(&[f64::NAN]), -1.0);
        assert_eq!(t.depth(), 1);
    }
}
