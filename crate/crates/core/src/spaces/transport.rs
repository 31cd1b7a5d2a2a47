//! Exact minimum-cost transportation.
//!
//! The transportation problem between a supply vector and a demand vector is
//! solved as a min-cost flow on the bipartite network
//! `source -> supply_i -> demand_j -> sink` by successive shortest paths.
//! Residual shortest paths are found with Bellman-Ford, so the reverse arcs
//! with negative cost need no potentials. All quantities are exact, and the
//! number of augmentations is finite because every augmentation saturates an
//! arc of the equivalent integer problem obtained by clearing denominators.
//!
//! Infinite-cost cells are not arcs at all. If the remaining arcs cannot carry
//! the full mass, every coupling puts positive mass on an infinite cell and
//! the optimum is `inf`.

use crate::ext::ExtValue;
use crate::scalar::Scalar;

/// Optimal coupling and its cost.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportPlan<S> {
    pub cost: ExtValue<S>,
    /// Positive flows `(supply index, demand index, mass)`; empty when the
    /// cost is infinite.
    pub flows: Vec<(usize, usize, S)>,
}

#[derive(Debug, Clone)]
struct Arc<S> {
    to: usize,
    cap: S,
    cost: S,
    rev: usize,
}

struct Network<S> {
    adj: Vec<Vec<Arc<S>>>,
}

impl<S: Scalar> Network<S> {
    fn new(nodes: usize) -> Self {
        Network {
            adj: vec![Vec::new(); nodes],
        }
    }

    fn add_arc(&mut self, from: usize, to: usize, cap: S, cost: S) {
        let rev_from = self.adj[to].len();
        let rev_to = self.adj[from].len();
        self.adj[from].push(Arc {
            to,
            cap,
            cost: cost.clone(),
            rev: rev_from,
        });
        self.adj[to].push(Arc {
            to: from,
            cap: S::zero(),
            cost: -cost,
            rev: rev_to,
        });
    }

    /// Bellman-Ford over arcs with residual capacity. Returns the predecessor
    /// arc of every reached node.
    fn shortest_path_tree(&self, source: usize) -> Vec<Option<(usize, usize)>> {
        let n = self.adj.len();
        let mut dist: Vec<Option<S>> = vec![None; n];
        let mut pred = vec![None; n];
        dist[source] = Some(S::zero());
        for _ in 0..n {
            let mut changed = false;
            for u in 0..n {
                let Some(du) = dist[u].clone() else { continue };
                for (k, arc) in self.adj[u].iter().enumerate() {
                    if !arc.cap.is_positive() {
                        continue;
                    }
                    let cand = du.clone() + arc.cost.clone();
                    let better = match &dist[arc.to] {
                        None => true,
                        Some(dv) => cand < *dv,
                    };
                    if better {
                        dist[arc.to] = Some(cand);
                        pred[arc.to] = Some((u, k));
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        pred
    }
}

/// Solves `min sum_ij flow_ij * cost[i][j]` over couplings of `supply` and
/// `demand`. Both vectors must be nonnegative with equal totals; the caller
/// checks the totals.
pub fn min_cost_transport<S: Scalar>(
    supply: &[S],
    demand: &[S],
    cost: &[Vec<ExtValue<S>>],
) -> TransportPlan<S> {
    let m = supply.len();
    let n = demand.len();
    debug_assert_eq!(cost.len(), m);
    let total: S = supply.iter().cloned().fold(S::zero(), |a, b| a + b);
    debug_assert_eq!(
        total,
        demand.iter().cloned().fold(S::zero(), |a, b| a + b),
        "unbalanced transportation problem"
    );
    if total.is_zero() {
        return TransportPlan {
            cost: ExtValue::zero(),
            flows: Vec::new(),
        };
    }

    let source = 0;
    let sink = m + n + 1;
    let mut net = Network::new(m + n + 2);
    for (i, s) in supply.iter().enumerate() {
        if s.is_positive() {
            net.add_arc(source, 1 + i, s.clone(), S::zero());
        }
    }
    // (supply index, demand index, position of the arc in adj[1 + i])
    let mut cells = Vec::new();
    for (i, row) in cost.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            if let ExtValue::Fin(c) = cell {
                cells.push((i, j, net.adj[1 + i].len()));
                net.add_arc(1 + i, 1 + m + j, total.clone(), c.clone());
            }
        }
    }
    for (j, d) in demand.iter().enumerate() {
        if d.is_positive() {
            net.add_arc(1 + m + j, sink, d.clone(), S::zero());
        }
    }

    let mut shipped = S::zero();
    while shipped < total {
        let pred = net.shortest_path_tree(source);
        if pred[sink].is_none() {
            break;
        }
        let mut path = Vec::new();
        let mut v = sink;
        while v != source {
            let (u, k) = pred[v].expect("path reconstructs to the source");
            path.push((u, k));
            v = u;
        }
        let bottleneck = path
            .iter()
            .map(|&(u, k)| net.adj[u][k].cap.clone())
            .min()
            .expect("nonempty augmenting path");
        for &(u, k) in &path {
            let (to, rev) = {
                let arc = &mut net.adj[u][k];
                arc.cap = arc.cap.clone() - bottleneck.clone();
                (arc.to, arc.rev)
            };
            let back = &mut net.adj[to][rev];
            back.cap = back.cap.clone() + bottleneck.clone();
        }
        shipped = shipped + bottleneck;
    }

    if shipped < total {
        return TransportPlan {
            cost: ExtValue::Inf,
            flows: Vec::new(),
        };
    }

    let mut value = S::zero();
    let mut flows = Vec::new();
    for (i, j, k) in cells {
        let arc = &net.adj[1 + i][k];
        let flow = total.clone() - arc.cap.clone();
        if flow.is_positive() {
            value = value + flow.clone() * arc.cost.clone();
            flows.push((i, j, flow));
        }
    }
    TransportPlan {
        cost: ExtValue::fin(value),
        flows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;

    type Q = BigRational;
    type E = ExtValue<Q>;

    fn q(n: i64, d: i64) -> Q {
        Q::ratio(n, d)
    }

    #[test]
    fn two_to_one_transport() {
        // mu = {a: 1/2, b: 1/2}, nu = {b: 1}, d(a, b) = 1
        let plan = min_cost_transport(
            &[q(1, 2), q(1, 2)],
            &[q(1, 1)],
            &[vec![E::one()], vec![E::zero()]],
        );
        assert_eq!(plan.cost, E::ratio(1, 2));
        assert_eq!(plan.flows.len(), 2);
    }

    #[test]
    fn forbidden_cells_force_infinity() {
        let plan = min_cost_transport(&[q(1, 1)], &[q(1, 1)], &[vec![E::Inf]]);
        assert_eq!(plan.cost, E::Inf);
        assert!(plan.flows.is_empty());
    }

    #[test]
    fn forbidden_cells_are_avoided_when_possible() {
        // A cheap-looking greedy choice blocks the only finite completion.
        let cost = vec![vec![E::zero(), E::one()], vec![E::Inf, E::ratio(3, 1)]];
        let plan = min_cost_transport(&[q(1, 2), q(1, 2)], &[q(1, 2), q(1, 2)], &cost);
        // b must go to column 1 (cost 3), so a goes to column 0.
        assert_eq!(plan.cost, E::ratio(3, 2));
    }

    #[test]
    fn reroutes_through_reverse_arcs() {
        // Optimal plan needs to undo an earlier augmentation.
        let cost = vec![
            vec![E::ratio(1, 1), E::ratio(2, 1)],
            vec![E::ratio(1, 1), E::ratio(5, 1)],
        ];
        let plan = min_cost_transport(&[q(1, 2), q(1, 2)], &[q(1, 2), q(1, 2)], &cost);
        assert_eq!(plan.cost, E::ratio(3, 2));
    }
}
