//! Regression trees grown on gradient/hessian statistics.

use serde::{Deserialize, Serialize};

use super::binning::{BinnedMatrix, MISSING_BIN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    /// Rows with `x[feature] < threshold` go left, NaN follows `default_left`.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        default_left: bool,
    },
    Leaf { weight: f64 },
}

/// Nodes in pre-order; index 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf(weight: f64) -> Self {
        Tree {
            nodes: vec![TreeNode::Leaf { weight }],
        }
    }

    /// Leaf weight reached by `row` (values in schema order).
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { weight } => return weight,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    default_left,
                } => {
                    let x = row[feature];
                    let go_left = if x.is_nan() { default_left } else { x < threshold };
                    i = if go_left { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Checks structure: children point forward, every node reachable once,
    /// feature indices within `n_features`.
    pub fn validate(&self, n_features: usize) -> Result<(), String> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if i >= self.nodes.len() {
                return Err(format!("node index {i} out of range"));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(format!("node {i} reached twice"));
            }
            if let TreeNode::Split {
                feature,
                threshold,
                left,
                right,
                ..
            } = self.nodes[i]
            {
                if feature >= n_features {
                    return Err(format!("feature {feature} outside schema of {n_features}"));
                }
                if !threshold.is_finite() {
                    return Err(format!("non-finite threshold at node {i}"));
                }
                if left <= i || right <= i {
                    return Err(format!("node {i} has a backward edge"));
                }
                stack.push(left);
                stack.push(right);
            }
        }
        if seen.iter().all(|s| *s) {
            Ok(())
        } else {
            Err("unreachable nodes".into())
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
}

pub(crate) fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    -g / (h + lambda)
}

#[inline]
fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

struct Candidate {
    gain: f64,
    feature: usize,
    /// Left = bins `0..=cut`.
    cut: usize,
    default_left: bool,
}

pub(crate) struct TreeGrower<'a> {
    pub binned: &'a BinnedMatrix,
    pub grad: &'a [f64],
    pub hess: &'a [f64],
    pub features: &'a [usize],
    pub params: GrowParams,
}

impl TreeGrower<'_> {
    pub fn grow(&self, rows: Vec<usize>) -> Tree {
        let mut nodes = Vec::new();
        self.grow_node(rows, 0, &mut nodes);
        Tree { nodes }
    }

    fn grow_node(&self, rows: Vec<usize>, depth: usize, nodes: &mut Vec<TreeNode>) -> usize {
        let (g, h) = rows
            .iter()
            .fold((0.0, 0.0), |(g, h), &r| (g + self.grad[r], h + self.hess[r]));
        let id = nodes.len();
        nodes.push(TreeNode::Leaf {
            weight: leaf_weight(g, h, self.params.lambda),
        });
        if depth >= self.params.max_depth || rows.len() < 2 {
            return id;
        }
        let Some(best) = self.best_split(&rows, g, h) else {
            return id;
        };

        let col = self.binned.column(best.feature);
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&r| {
            let b = col[r];
            if b == MISSING_BIN {
                best.default_left
            } else {
                (b as usize) <= best.cut
            }
        });
        let left = self.grow_node(left_rows, depth + 1, nodes);
        let right = self.grow_node(right_rows, depth + 1, nodes);
        nodes[id] = TreeNode::Split {
            feature: best.feature,
            threshold: self.binned.cuts[best.feature][best.cut],
            left,
            right,
            default_left: best.default_left,
        };
        id
    }

    fn best_split(&self, rows: &[usize], g: f64, h: f64) -> Option<Candidate> {
        let p = self.params;
        let parent = score(g, h, p.lambda);
        let mut best: Option<Candidate> = None;
        let mut hist_g = [0.0f64; 256];
        let mut hist_h = [0.0f64; 256];
        let mut hist_n = [0usize; 256];

        for &f in self.features {
            let n_cuts = self.binned.cuts[f].len();
            if n_cuts == 0 {
                continue;
            }
            hist_g[..=n_cuts].fill(0.0);
            hist_h[..=n_cuts].fill(0.0);
            hist_n[..=n_cuts].fill(0);
            let (mut mg, mut mh, mut mn) = (0.0, 0.0, 0usize);
            let col = self.binned.column(f);
            for &r in rows {
                let b = col[r];
                if b == MISSING_BIN {
                    mg += self.grad[r];
                    mh += self.hess[r];
                    mn += 1;
                } else {
                    let b = b as usize;
                    hist_g[b] += self.grad[r];
                    hist_h[b] += self.hess[r];
                    hist_n[b] += 1;
                }
            }

            let (mut lg, mut lh, mut ln) = (0.0, 0.0, 0usize);
            let present = rows.len() - mn;
            for cut in 0..n_cuts {
                lg += hist_g[cut];
                lh += hist_h[cut];
                ln += hist_n[cut];
                if ln == present && mn == 0 {
                    break;
                }
                // missing rows to the right first, then to the left
                let options = [(lg, lh, ln, false), (lg + mg, lh + mh, ln + mn, true)];
                for (gl, hl, nl, default_left) in options.into_iter().take(1 + usize::from(mn > 0)) {
                    let nr = rows.len() - nl;
                    let (gr, hr) = (g - gl, h - hl);
                    if nl == 0 || nr == 0 || hl < p.min_child_weight || hr < p.min_child_weight {
                        continue;
                    }
                    let gain =
                        0.5 * (score(gl, hl, p.lambda) + score(gr, hr, p.lambda) - parent) - p.gamma;
                    if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
                        // without training-time missing values, unseen NaN
                        // follows the heavier child
                        let default_left = if mn == 0 { hl >= hr } else { default_left };
                        best = Some(Candidate {
                            gain,
                            feature: f,
                            cut,
                            default_left,
                        });
                    }
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureMatrix, FeatureSchema};

    fn matrix(cols: &[&str], rows: &[&[f64]]) -> FeatureMatrix {
        FeatureMatrix::new(
            FeatureSchema::new(cols.iter().map(|s| s.to_string()).collect()),
            (0..rows.len()).map(|i| i.to_string()).collect(),
            rows.concat(),
        )
    }

    fn params(max_depth: usize) -> GrowParams {
        GrowParams {
            max_depth,
            lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 0.0,
        }
    }

    #[test]
    fn newton_stump_by_hand() {
        let x = matrix(&["x"], &[&[0.0], &[1.0]]);
        let b = BinnedMatrix::build(&x);
        let grad = [0.5, -0.5];
        let hess = [0.25, 0.25];
        let t = TreeGrower {
            binned: &b,
            grad: &grad,
            hess: &hess,
            features: &[0],
            params: params(1),
        }
        .grow(vec![0, 1]);
        assert_eq!(t.nodes.len(), 3);
        assert!((t.predict(&[0.0]) + 0.4).abs() < 1e-15);
        assert!((t.predict(&[1.0]) - 0.4).abs() < 1e-15);
        t.validate(1).unwrap();
    }

    #[test]
    fn gamma_blocks_weak_splits() {
        let x = matrix(&["x"], &[&[0.0], &[1.0]]);
        let b = BinnedMatrix::build(&x);
        let mut p = params(3);
        // the stump's gain is 0.2
        p.gamma = 0.25;
        let t = TreeGrower {
            binned: &b,
            grad: &[0.5, -0.5],
            hess: &[0.25, 0.25],
            features: &[0],
            params: p,
        }
        .grow(vec![0, 1]);
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.predict(&[5.0]), 0.0);
    }

    #[test]
    fn missing_values_learn_a_direction() {
        let nan = f64::NAN;
        let x = matrix(&["x"], &[&[0.0], &[1.0], &[nan], &[nan]]);
        let b = BinnedMatrix::build(&x);
        // the missing rows behave like the second row
        let t = TreeGrower {
            binned: &b,
            grad: &[0.5, -0.5, -0.5, -0.5],
            hess: &[0.25; 4],
            features: &[0],
            params: params(1),
        }
        .grow(vec![0, 1, 2, 3]);
        assert!(t.predict(&[nan]) > 0.0);
        assert!(t.predict(&[0.0]) < 0.0);
        match t.nodes[0] {
            TreeNode::Split { default_left, .. } => assert!(!default_left),
            _ => panic!("expected split"),
        }
    }

    #[test]
    fn depth_is_respected() {
        let rows: Vec<Vec<f64>> = (0..64).map(|i| vec![i as f64]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let x = matrix(&["x"], &refs);
        let b = BinnedMatrix::build(&x);
        let grad: Vec<f64> = (0..64).map(|i| if i % 2 == 0 { 0.5 } else { -0.5 }).collect();
        let hess = vec![0.25; 64];
        for d in 0..4 {
            let t = TreeGrower {
                binned: &b,
                grad: &grad,
                hess: &hess,
                features: &[0],
                params: params(d),
            }
            .grow((0..64).collect());
            assert!(t.depth() <= d);
            t.validate(1).unwrap();
        }
    }

    #[test]
    fn validate_catches_bad_trees() {
        let t = Tree {
            nodes: vec![TreeNode::Split {
                feature: 3,
                threshold: 0.0,
                left: 1,
                right: 2,
                default_left: true,
            }, TreeNode::Leaf { weight: 0.0 }, TreeNode::Leaf { weight: 0.0 }],
        };
        assert!(t.validate(2).is_err());
        assert!(t.validate(4).is_ok());
        let cyclic = Tree {
            nodes: vec![TreeNode::Split {
                feature: 0,
                threshold: 0.0,
                left: 0,
                right: 1,
                default_left: true,
            }, TreeNode::Leaf { weight: 0.0 }],
        };
        assert!(cyclic.validate(1).is_err());
    }
}
