//! Penalized probabilistic losses and discrete objectives for minimum vertex
//! cover (MVC) and maximum clique (MC).
//!
//! Pair sums are over unordered pairs without a `1/2` prefactor:
//!
//! * MVC: `sum_i p_i + beta * sum_{ij in E} (1 - p_i)(1 - p_j)`
//! * MC:  `-sum_{ij in E} p_i p_j + beta * sum_{i<j} p_i p_j`
//!
//! The MC penalty runs over all pairs by default ([`McPenalty::AllPairs`]);
//! [`McPenalty::NonEdges`] restricts it to non-adjacent pairs.
//! Both losses are multilinear in `p`, so their value at `p` is the expectation
//! of the same expression under independent Bernoulli(p) draws.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Mvc,
    Mc,
}

impl ProblemKind {
    pub fn minimizes(self) -> bool {
        matches!(self, ProblemKind::Mvc)
    }

    /// Whether objective `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        if self.minimizes() {
            a < b
        } else {
            a > b
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Mvc => "mvc",
            ProblemKind::Mc => "mc",
        }
    }
}

impl std::str::FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mvc" => Ok(ProblemKind::Mvc),
            "mc" => Ok(ProblemKind::Mc),
            other => Err(Error::InvalidParameter(format!(
                "unknown problem {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum McPenalty {
    #[default]
    AllPairs,
    NonEdges,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub kind: ProblemKind,
    pub beta: f64,
    #[serde(default)]
    pub mc_penalty: McPenalty,
}

impl Problem {
    pub fn new(kind: ProblemKind, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "beta must be > 0, got {beta}"
            )));
        }
        Ok(Self {
            kind,
            beta,
            mc_penalty: McPenalty::AllPairs,
        })
    }

    pub fn mvc(beta: f64) -> Result<Self> {
        Self::new(ProblemKind::Mvc, beta)
    }

    pub fn mc(beta: f64) -> Result<Self> {
        Self::new(ProblemKind::Mc, beta)
    }

    pub fn with_mc_penalty(mut self, penalty: McPenalty) -> Self {
        self.mc_penalty = penalty;
        self
    }

    /// Loss on the tape for the probability column `probs` (shape `[n, 1]` or `[n]`).
    pub fn loss<'g>(&self, tape: &mut Tape<'g>, g: &'g Graph, probs: Var) -> Result<Var> {
        let n = tape.value(probs).len();
        if n != g.n() {
            return Err(Error::LengthMismatch {
                expected: g.n(),
                actual: n,
            });
        }
        match self.kind {
            ProblemKind::Mvc => loss_mvc(tape, g, probs, self.beta),
            ProblemKind::Mc => loss_mc(tape, g, probs, self.beta, self.mc_penalty),
        }
    }

    /// The same loss evaluated directly on a probability (or binary) vector.
    pub fn value(&self, g: &Graph, x: &[f64]) -> Result<f64> {
        if x.len() != g.n() {
            return Err(Error::LengthMismatch {
                expected: g.n(),
                actual: x.len(),
            });
        }
        Ok(match self.kind {
            ProblemKind::Mvc => {
                let uncovered: f64 = g
                    .edges()
                    .iter()
                    .map(|&(i, j)| (1.0 - x[i]) * (1.0 - x[j]))
                    .sum();
                x.iter().sum::<f64>() + self.beta * uncovered
            }
            ProblemKind::Mc => {
                let edges: f64 = g.edges().iter().map(|&(i, j)| x[i] * x[j]).sum();
                let total: f64 = x.iter().sum();
                let squares: f64 = x.iter().map(|v| v * v).sum();
                let all_pairs = 0.5 * (total * total - squares);
                let penalized = match self.mc_penalty {
                    McPenalty::AllPairs => all_pairs,
                    McPenalty::NonEdges => all_pairs - edges,
                };
                -edges + self.beta * penalized
            }
        })
    }
}

fn loss_mvc<'g>(tape: &mut Tape<'g>, g: &'g Graph, p: Var, beta: f64) -> Result<Var> {
    let q = tape.affine(p, -1.0, 1.0)?;
    let nq = tape.neighbor_aggregate(q, g.adjacency())?;
    let pairs = tape.mul(q, nq)?;
    // each edge counted from both endpoints
    let twice_uncovered = tape.sum(pairs)?;
    let penalty = tape.affine(twice_uncovered, 0.5 * beta, 0.0)?;
    let size = tape.sum(p)?;
    tape.add(size, penalty)
}

fn loss_mc<'g>(
    tape: &mut Tape<'g>,
    g: &'g Graph,
    p: Var,
    beta: f64,
    penalty: McPenalty,
) -> Result<Var> {
    let np = tape.neighbor_aggregate(p, g.adjacency())?;
    let edge_prod = tape.mul(p, np)?;
    let twice_edges = tape.sum(edge_prod)?;
    let total = tape.sum(p)?;
    let total_sq = tape.mul(total, total)?;
    let sq = tape.mul(p, p)?;
    let sum_sq = tape.sum(sq)?;
    let diff = tape.sub(total_sq, sum_sq)?;
    let pairs = match penalty {
        McPenalty::AllPairs => diff,
        McPenalty::NonEdges => tape.sub(diff, twice_edges)?,
    };
    let reward = tape.affine(twice_edges, -0.5, 0.0)?;
    let penalty = tape.affine(pairs, 0.5 * beta, 0.0)?;
    tape.add(reward, penalty)
}

/// A binary assignment with its objective value and feasibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub x: Vec<bool>,
    pub objective: f64,
    pub feasible: bool,
}

impl Solution {
    pub fn selected(&self) -> impl Iterator<Item = usize> + '_ {
        self.x
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
    }
}

pub fn is_feasible(kind: ProblemKind, g: &Graph, x: &[bool]) -> bool {
    match kind {
        ProblemKind::Mvc => g.edges().iter().all(|&(i, j)| x[i] || x[j]),
        ProblemKind::Mc => {
            let sel: Vec<usize> = (0..x.len()).filter(|&i| x[i]).collect();
            sel.iter()
                .enumerate()
                .all(|(a, &i)| sel[a + 1..].iter().all(|&j| g.has_edge(i, j)))
        }
    }
}

/// Objective is the number of selected nodes for both problems.
pub fn evaluate(kind: ProblemKind, g: &Graph, x: &[bool]) -> Result<Solution> {
    if x.len() != g.n() {
        return Err(Error::LengthMismatch {
            expected: g.n(),
            actual: x.len(),
        });
    }
    Ok(Solution {
        x: x.to_vec(),
        objective: x.iter().filter(|&&b| b).count() as f64,
        feasible: is_feasible(kind, g, x),
    })
}

/// `f(x) / f(x*)`. An all-zero optimum (edgeless MVC) gives ratio 1 when matched.
pub fn approximation_ratio(objective: f64, optimum: f64) -> f64 {
    if optimum == 0.0 {
        if objective == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        objective / optimum
    }
}
