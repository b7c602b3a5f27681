//! Sequential decoding by conditional expectation, followed by a deterministic
//! feasibility repair.
//!
//! Nodes are visited in descending probability (ties: lower index first). Each
//! visited node is fixed to whichever of `x_i = 1` / `x_i = 0` gives the smaller
//! expected penalized loss over the still-free nodes, preferring 1 on ties.
//! Because the losses are multilinear, the expectation is the loss evaluated at
//! the partial assignment with free nodes left at their probabilities, and the
//! difference between the two branches is the partial derivative in `x_i`, which
//! only involves the node's neighborhood and a running total.

use crate::error::{Error, Result};
use crate::gnn::NodeProbabilities;
use crate::graph::Graph;
use crate::objectives::{evaluate, McPenalty, Problem, ProblemKind, Solution};

/// Nodes fixed so far plus the probabilities of the free ones. `values[i]` is
/// `0.0`/`1.0` for fixed nodes and `p_i` for free ones.
#[derive(Debug, Clone)]
pub struct PartialAssignment {
    values: Vec<f64>,
    fixed: Vec<bool>,
    total: f64,
}

impl PartialAssignment {
    pub fn new(p: &[f64]) -> Self {
        Self {
            values: p.to_vec(),
            fixed: vec![false; p.len()],
            total: p.iter().sum(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_fixed(&self, i: usize) -> bool {
        self.fixed[i]
    }

    fn fix(&mut self, i: usize, one: bool) {
        let v = if one { 1.0 } else { 0.0 };
        self.total += v - self.values[i];
        self.values[i] = v;
        self.fixed[i] = true;
    }

    /// `E[loss | x_i = 1] - E[loss | x_i = 0]` under the current assignment.
    fn branch_gap(&self, problem: &Problem, g: &Graph, i: usize) -> f64 {
        let nbrs = g.neighbors(i);
        match problem.kind {
            ProblemKind::Mvc => {
                let uncovered: f64 = nbrs.iter().map(|&j| 1.0 - self.values[j]).sum();
                1.0 - problem.beta * uncovered
            }
            ProblemKind::Mc => {
                let nbr_mass: f64 = nbrs.iter().map(|&j| self.values[j]).sum();
                let others = self.total - self.values[i];
                let penalized = match problem.mc_penalty {
                    McPenalty::AllPairs => others,
                    McPenalty::NonEdges => others - nbr_mass,
                };
                -nbr_mass + problem.beta * penalized
            }
        }
    }
}

/// One fixing decision, with both branch values evaluated by full substitution.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeStep {
    pub node: usize,
    pub loss_if_one: f64,
    pub loss_if_zero: f64,
    pub chose_one: bool,
}

fn visit_order(p: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    order
}

fn decode_inner(
    problem: &Problem,
    g: &Graph,
    p: &NodeProbabilities,
    mut trace: Option<&mut Vec<DecodeStep>>,
) -> Result<Solution> {
    if p.len() != g.n() {
        return Err(Error::LengthMismatch {
            expected: g.n(),
            actual: p.len(),
        });
    }
    let mut state = PartialAssignment::new(p.as_slice());
    for i in visit_order(p.as_slice()) {
        let one = state.branch_gap(problem, g, i) <= 0.0;
        if let Some(steps) = trace.as_deref_mut() {
            let mut with = state.values.clone();
            with[i] = 1.0;
            let loss_if_one = problem.value(g, &with)?;
            with[i] = 0.0;
            let loss_if_zero = problem.value(g, &with)?;
            steps.push(DecodeStep {
                node: i,
                loss_if_one,
                loss_if_zero,
                chose_one: one,
            });
        }
        state.fix(i, one);
    }
    let mut x: Vec<bool> = state.values.iter().map(|&v| v == 1.0).collect();
    repair(problem.kind, g, &mut x);
    evaluate(problem.kind, g, &x)
}

/// Decodes `p` into a feasible solution.
pub fn decode(problem: &Problem, g: &Graph, p: &NodeProbabilities) -> Result<Solution> {
    decode_inner(problem, g, p, None)
}

/// [`decode`] that also records, for every fixing step, the expected loss of
/// both branches computed from scratch. Quadratic in `n`; meant for checks.
pub fn decode_traced(
    problem: &Problem,
    g: &Graph,
    p: &NodeProbabilities,
) -> Result<(Solution, Vec<DecodeStep>)> {
    let mut steps = Vec::with_capacity(g.n());
    let sol = decode_inner(problem, g, p, Some(&mut steps))?;
    Ok((sol, steps))
}

/// Makes `x` feasible in place.
///
/// MVC: while an edge is uncovered, add the node incident to the most uncovered
/// edges (ties: lower index). MC: while the selection is not a clique, drop the
/// selected node with the fewest selected neighbors (ties: higher index).
/// A feasible `x` is left untouched.
pub fn repair(kind: ProblemKind, g: &Graph, x: &mut [bool]) {
    match kind {
        ProblemKind::Mvc => repair_cover(g, x),
        ProblemKind::Mc => repair_clique(g, x),
    }
}

fn repair_cover(g: &Graph, x: &mut [bool]) {
    let mut uncovered = vec![0usize; g.n()];
    for &(i, j) in g.edges() {
        if !x[i] && !x[j] {
            uncovered[i] += 1;
            uncovered[j] += 1;
        }
    }
    loop {
        let (best, &count) = uncovered
            .iter()
            .enumerate()
            .rev()
            .max_by_key(|&(_, c)| c)
            .expect("n >= 1");
        if count == 0 {
            break;
        }
        x[best] = true;
        uncovered[best] = 0;
        for &j in g.neighbors(best) {
            if !x[j] {
                uncovered[j] -= 1;
            }
        }
    }
}

fn repair_clique(g: &Graph, x: &mut [bool]) {
    let mut size = x.iter().filter(|&&b| b).count();
    let mut inside = vec![0usize; g.n()];
    for &(i, j) in g.edges() {
        if x[i] && x[j] {
            inside[i] += 1;
            inside[j] += 1;
        }
    }
    loop {
        let worst = (0..g.n())
            .filter(|&i| x[i])
            .min_by_key(|&i| (inside[i], std::cmp::Reverse(i)));
        let Some(worst) = worst else { break };
        if inside[worst] + 1 >= size {
            break;
        }
        x[worst] = false;
        size -= 1;
        for &j in g.neighbors(worst) {
            if x[j] {
                inside[j] -= 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(p: &[f64]) -> NodeProbabilities {
        NodeProbabilities::new(p.to_vec()).unwrap()
    }

    #[test]
    fn mvc_triangle_branch_enumeration() {
        // Visit order 0, 1, 2 with beta = 0.5.
        // node 0: x0=1 -> 2.0 + .5*.09 = 2.045, x0=0 -> 1.0 + .5*1.09 = 1.545 -> 0
        // node 1: x1=1 -> 1.1 + .5*.9 = 1.55,   x1=0 -> 0.1 + .5*2.8 = 1.5   -> 0
        // node 2: x2=1 -> 1.0 + .5*1 = 1.5,     x2=0 -> 0.0 + .5*3 = 1.5     -> tie, 1
        // repair then covers edge (0, 1) with node 0.
        let g = Graph::complete(3).unwrap();
        let pr = Problem::mvc(0.5).unwrap();
        let (sol, steps) = decode_traced(&pr, &g, &probs(&[0.9, 0.9, 0.1])).unwrap();
        let expected = [
            (0, 2.045, 1.545, false),
            (1, 1.55, 1.5, false),
            (2, 1.5, 1.5, true),
        ];
        for (s, (node, one, zero, chose)) in steps.iter().zip(expected) {
            assert_eq!(s.node, node);
            assert!((s.loss_if_one - one).abs() < 1e-12);
            assert!((s.loss_if_zero - zero).abs() < 1e-12);
            assert_eq!(s.chose_one, chose);
        }
        assert_eq!(sol.x, vec![true, false, true]);
        assert_eq!(sol.objective, 2.0);
        assert!(sol.feasible);
        assert_eq!(decode(&pr, &g, &probs(&[0.9, 0.9, 0.1])).unwrap(), sol);
    }

    #[test]
    fn mc_single_edge() {
        let g = Graph::complete(2).unwrap();
        let pr = Problem::mc(4.0).unwrap();
        let sol = decode(&pr, &g, &probs(&[0.99, 0.99])).unwrap();
        assert!(sol.feasible);
        assert!(sol.objective >= 1.0);
        // First node: gap = -0.99 + 4 * 0.99 > 0 -> 0; second: gap = 0 -> 1 (tie).
        assert_eq!(sol.x, vec![false, true]);
    }

    #[test]
    fn empty_graph_mvc_selects_nothing() {
        let g = Graph::empty(4).unwrap();
        let pr = Problem::mvc(0.5).unwrap();
        let sol = decode(&pr, &g, &probs(&[0.9, 0.1, 0.5, 0.7])).unwrap();
        assert_eq!(sol.x, vec![false; 4]);
        assert_eq!(sol.objective, 0.0);
    }

    #[test]
    fn repair_examples() {
        let k3 = Graph::complete(3).unwrap();
        let mut x = vec![false; 3];
        repair(ProblemKind::Mvc, &k3, &mut x);
        // all uncovered degrees 2 -> node 0; then edge (1,2) -> node 1
        assert_eq!(x, vec![true, true, false]);

        let path = Graph::path(3).unwrap();
        let mut x = vec![true; 3];
        repair(ProblemKind::Mc, &path, &mut x);
        // inside degrees (1, 2, 1) -> drop node 2
        assert_eq!(x, vec![true, true, false]);

        let mut feasible = vec![false, true, false];
        repair(ProblemKind::Mvc, &path, &mut feasible);
        assert_eq!(feasible, vec![false, true, false]);
        let mut clique = vec![false, true, true];
        repair(ProblemKind::Mc, &path, &mut clique);
        assert_eq!(clique, vec![false, true, true]);
    }

    #[test]
    fn length_checked() {
        let g = Graph::complete(3).unwrap();
        assert!(decode(&Problem::mvc(0.5).unwrap(), &g, &probs(&[0.5])).is_err());
    }

    #[test]
    fn incremental_gap_matches_substitution() {
        let g = crate::graph::generate_er(12, 0.4, 5).unwrap();
        let p: Vec<f64> = (0..12).map(|i| ((i * 7 % 11) as f64) / 11.0).collect();
        for pr in [
            Problem::mvc(0.5).unwrap(),
            Problem::mc(4.0).unwrap(),
            Problem::mc(0.5)
                .unwrap()
                .with_mc_penalty(McPenalty::NonEdges),
        ] {
            let (_, steps) = decode_traced(&pr, &g, &probs(&p)).unwrap();
            for s in steps {
                if s.chose_one {
                    assert!(s.loss_if_one <= s.loss_if_zero + 1e-12);
                } else {
                    assert!(s.loss_if_zero < s.loss_if_one + 1e-12);
                }
            }
        }
    }
}
