//! The bipartite clause/variable factor graph with directed-edge indexing.
//!
//! Message-passing state lives in flat arrays indexed by edge id, one slot
//! per direction. The graph itself is immutable; decimation works on a
//! [`Mask`] of fixed spins and dead clauses instead of rebuilding.

use std::collections::BTreeMap;

use crate::instance::CnfInstance;

/// Clause-side half edge: the variable it touches and the falsifying spin.
#[derive(Debug, Clone, Copy)]
pub struct ClauseEdge {
    pub var: usize,
    pub edge: usize,
    pub j_sign: i8,
}

/// Variable-side half edge: the clause it touches.
#[derive(Debug, Clone, Copy)]
pub struct VarEdge {
    pub clause: usize,
    pub edge: usize,
}

#[derive(Debug, Clone)]
pub struct FactorGraph {
    pub var_adj: Vec<Vec<VarEdge>>,
    pub clause_adj: Vec<Vec<ClauseEdge>>,
    pub n_edges: usize,
}

impl FactorGraph {
    /// Builds the adjacency of an instance. Edge ids are assigned in clause
    /// order, so clause a's literals occupy a contiguous id range.
    pub fn build(inst: &CnfInstance) -> Self {
        let mut var_adj = vec![Vec::new(); inst.n_vars];
        let mut clause_adj = Vec::with_capacity(inst.clauses.len());
        let mut edge = 0;
        for (a, cl) in inst.clauses.iter().enumerate() {
            let mut adj = Vec::with_capacity(cl.width());
            for lit in &cl.literals {
                adj.push(ClauseEdge { var: lit.var, edge, j_sign: lit.j_sign });
                var_adj[lit.var].push(VarEdge { clause: a, edge });
                edge += 1;
            }
            clause_adj.push(adj);
        }
        FactorGraph { var_adj, clause_adj, n_edges: edge }
    }

    pub fn n_vars(&self) -> usize {
        self.var_adj.len()
    }

    pub fn n_clauses(&self) -> usize {
        self.clause_adj.len()
    }

    /// Exact histogram of variable degrees.
    pub fn degree_histogram(&self) -> BTreeMap<usize, usize> {
        let mut hist = BTreeMap::new();
        for adj in &self.var_adj {
            *hist.entry(adj.len()).or_insert(0) += 1;
        }
        hist
    }

    /// Text dump of the directed-edge table, one `edge a i j_sign` line each.
    pub fn edge_list_dump(&self) -> String {
        let mut out = String::new();
        for (a, adj) in self.clause_adj.iter().enumerate() {
            for e in adj {
                out.push_str(&format!("{} {} {} {}\n", e.edge, a, e.var, e.j_sign));
            }
        }
        out
    }
}

/// A node of the bipartite graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Node {
    Var(usize),
    Clause(usize),
}

/// The induced subgraph of a BFS ball.
#[derive(Debug, Clone)]
pub struct Ball {
    pub nodes: Vec<Node>,
    /// Edge ids with both endpoints inside the ball.
    pub edges: Vec<usize>,
    pub is_tree: bool,
}

/// All nodes within graph distance `radius` of `center`, with the induced
/// edges. `is_tree` is true iff the induced subgraph contains no cycle.
pub fn bfs_ball(g: &FactorGraph, center: Node, radius: usize) -> Ball {
    match center {
        Node::Var(i) => assert!(i < g.n_vars(), "variable {i} out of range"),
        Node::Clause(a) => assert!(a < g.n_clauses(), "clause {a} out of range"),
    }
    let mut vars_in = vec![false; g.n_vars()];
    let mut clauses_in = vec![false; g.n_clauses()];
    let mut frontier = vec![center];
    let mut nodes = vec![center];
    match center {
        Node::Var(i) => vars_in[i] = true,
        Node::Clause(a) => clauses_in[a] = true,
    }
    for _ in 0..radius {
        let mut next = Vec::new();
        for node in frontier {
            match node {
                Node::Var(i) => {
                    for e in &g.var_adj[i] {
                        if !clauses_in[e.clause] {
                            clauses_in[e.clause] = true;
                            next.push(Node::Clause(e.clause));
                        }
                    }
                }
                Node::Clause(a) => {
                    for e in &g.clause_adj[a] {
                        if !vars_in[e.var] {
                            vars_in[e.var] = true;
                            next.push(Node::Var(e.var));
                        }
                    }
                }
            }
        }
        nodes.extend_from_slice(&next);
        frontier = next;
    }
    let mut edges = Vec::new();
    for (a, adj) in g.clause_adj.iter().enumerate() {
        if clauses_in[a] {
            for e in adj {
                if vars_in[e.var] {
                    edges.push(e.edge);
                }
            }
        }
    }
    // The ball is connected, so it is a tree iff |E| = |V| - 1.
    let is_tree = edges.len() == nodes.len().saturating_sub(1);
    Ball { nodes, edges, is_tree }
}

/// Decimation overlay: fixed spins plus per-clause liveness.
///
/// A clause dies when some fixed spin satisfies it; a contradiction is a
/// live clause whose free width reaches zero.
#[derive(Debug, Clone)]
pub struct Mask {
    /// 0 = free, otherwise the fixed spin.
    pub fixed: Vec<i8>,
    pub clause_alive: Vec<bool>,
    /// Number of unassigned variables in each live clause.
    pub free_width: Vec<usize>,
    n_free: usize,
}

impl Mask {
    pub fn all_free(g: &FactorGraph) -> Self {
        Mask {
            fixed: vec![0; g.n_vars()],
            clause_alive: vec![true; g.n_clauses()],
            free_width: g.clause_adj.iter().map(Vec::len).collect(),
            n_free: g.n_vars(),
        }
    }

    #[inline]
    pub fn is_free(&self, var: usize) -> bool {
        self.fixed[var] == 0
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    /// Fixes a free variable, updating clause liveness.
    pub fn fix(&mut self, g: &FactorGraph, var: usize, spin: i8) -> FixEffect {
        assert!(self.is_free(var), "variable {var} fixed twice");
        debug_assert!(spin == 1 || spin == -1);
        self.fixed[var] = spin;
        self.n_free -= 1;
        let mut effect = FixEffect::default();
        for ve in &g.var_adj[var] {
            let a = ve.clause;
            if !self.clause_alive[a] {
                continue;
            }
            let j = g.clause_adj[a].iter().find(|e| e.var == var).map(|e| e.j_sign).unwrap();
            if spin != j {
                self.clause_alive[a] = false;
                effect.satisfied.push(a);
            } else {
                self.free_width[a] -= 1;
                if self.free_width[a] == 0 {
                    effect.emptied.push(a);
                }
            }
        }
        effect
    }
}

/// Consequences of fixing one spin: clauses the fix satisfied (now dead)
/// and live clauses that ran out of free variables (contradictions).
#[derive(Debug, Clone, Default)]
pub struct FixEffect {
    pub satisfied: Vec<usize>,
    pub emptied: Vec<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{gen_uniform, Clause, CnfInstance, Literal};

    fn single_clause() -> CnfInstance {
        CnfInstance::new(
            3,
            3,
            vec![Clause::new(vec![
                Literal::new(0, -1),
                Literal::new(1, -1),
                Literal::new(2, 1),
            ])],
        )
    }

    #[test]
    fn build_single_clause() {
        let g = FactorGraph::build(&single_clause());
        assert_eq!(g.clause_adj[0].len(), 3);
        assert!(g.var_adj.iter().all(|adj| adj.len() == 1));
        assert_eq!(g.n_edges, 3);
    }

    #[test]
    fn empty_instance_has_no_edges() {
        let g = FactorGraph::build(&CnfInstance::new(5, 3, vec![]));
        assert_eq!(g.n_edges, 0);
        assert_eq!(g.degree_histogram(), BTreeMap::from([(0, 5)]));
    }

    #[test]
    fn handshake_identity() {
        let inst = gen_uniform(50, 120, 3, 4).unwrap();
        let g = FactorGraph::build(&inst);
        let clause_side: usize = g.clause_adj.iter().map(Vec::len).sum();
        let var_side: usize = g.var_adj.iter().map(Vec::len).sum();
        assert_eq!(clause_side, var_side);
        assert_eq!(clause_side, 120 * 3);
    }

    #[test]
    fn degree_histogram_single_clause() {
        let g = FactorGraph::build(&single_clause());
        assert_eq!(g.degree_histogram(), BTreeMap::from([(1, 3)]));
    }

    #[test]
    fn ball_radius_zero_is_single_node() {
        let inst = gen_uniform(30, 60, 3, 5).unwrap();
        let g = FactorGraph::build(&inst);
        let ball = bfs_ball(&g, Node::Var(0), 0);
        assert_eq!(ball.nodes, vec![Node::Var(0)]);
        assert!(ball.edges.is_empty());
        assert!(ball.is_tree);
    }

    #[test]
    fn star_ball_is_tree() {
        let g = FactorGraph::build(&single_clause());
        let ball = bfs_ball(&g, Node::Clause(0), 2);
        assert_eq!(ball.nodes.len(), 4);
        assert!(ball.is_tree);
    }

    #[test]
    fn balls_are_nested() {
        let inst = gen_uniform(200, 600, 3, 6).unwrap();
        let g = FactorGraph::build(&inst);
        for r in 0..3 {
            let mut small: Vec<Node> = bfs_ball(&g, Node::Var(17), r).nodes;
            let mut big: Vec<Node> = bfs_ball(&g, Node::Var(17), r + 1).nodes;
            small.sort();
            big.sort();
            assert!(small.iter().all(|n| big.binary_search(n).is_ok()));
        }
    }

    #[test]
    fn mask_tracks_liveness() {
        let inst = single_clause();
        let g = FactorGraph::build(&inst);
        let mut mask = Mask::all_free(&g);
        // Fixing var 2 to -1 satisfies its literal (j_sign = +1).
        assert_eq!(mask.fix(&g, 2, -1).satisfied, vec![0]);
        assert!(!mask.clause_alive[0]);

        let mut mask = Mask::all_free(&g);
        // Falsify all three literals: clause empties on the last fix.
        assert!(mask.fix(&g, 0, -1).emptied.is_empty());
        assert!(mask.fix(&g, 1, -1).emptied.is_empty());
        assert_eq!(mask.fix(&g, 2, 1).emptied, vec![0]);
    }
}
