//! Shortest delays and exact flow routing for a fixed placement.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{ArcFlow, MilpInstance, FEASIBILITY_TOLERANCE};
use crate::lp::{self, LinearProgram, LpOutcome, Sense};

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // Min-heap on (dist, node).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub(crate) fn out_arcs(instance: &MilpInstance) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); instance.node_count()];
    for arc in 0..instance.arc_count() {
        out[instance.arc_endpoints(arc).0].push(arc);
    }
    out
}

/// Dijkstra from `src`: distance and the arc used to reach each node.
pub(crate) fn dijkstra(
    instance: &MilpInstance,
    out: &[Vec<usize>],
    src: usize,
) -> (Vec<f64>, Vec<Option<usize>>) {
    let n = instance.node_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut via = vec![None; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[src] = 0.0;
    heap.push(Entry { dist: 0.0, node: src });
    while let Some(Entry { dist: d, node }) = heap.pop() {
        if done[node] {
            continue;
        }
        done[node] = true;
        for &arc in &out[node] {
            let (_, to) = instance.arc_endpoints(arc);
            let nd = d + instance.arc_delay(arc);
            if nd < dist[to] {
                dist[to] = nd;
                via[to] = Some(arc);
                heap.push(Entry { dist: nd, node: to });
            }
        }
    }
    (dist, via)
}

/// Shortest-delay matrix between server positions.
pub fn all_pairs_server_delays(instance: &MilpInstance) -> Vec<Vec<f64>> {
    let out = out_arcs(instance);
    instance
        .servers
        .iter()
        .map(|s| {
            let (dist, _) = dijkstra(instance, &out, s.node);
            instance.servers.iter().map(|t| dist[t.node]).collect()
        })
        .collect()
}

/// Minimum-delay unit flows for a complete placement (server positions per
/// VNF) that respect residual link bandwidth. Returns the flows and their
/// total delay, or `None` when no routing fits the links.
pub fn route_flows(instance: &MilpInstance, placement: &[usize]) -> Option<(Vec<Vec<ArcFlow>>, f64)> {
    let out = out_arcs(instance);
    let vlinks = &instance.slice.vlinks;
    let mut flows = vec![Vec::new(); vlinks.len()];
    let mut load = vec![0.0; instance.links.len()];
    let mut cost = 0.0;
    let mut trees: Vec<Option<Vec<Option<usize>>>> = vec![None; instance.servers.len()];
    for (l, vl) in vlinks.iter().enumerate() {
        let (s, t) = (placement[vl.src], placement[vl.dst]);
        if s == t {
            continue;
        }
        let via = trees[s].get_or_insert_with(|| dijkstra(instance, &out, instance.servers[s].node).1);
        let src = instance.servers[s].node;
        let mut node = instance.servers[t].node;
        let mut path = Vec::new();
        while node != src {
            let arc = via[node]?;
            path.push(arc);
            node = instance.arc_endpoints(arc).0;
        }
        path.reverse();
        for arc in path {
            load[arc / 2] += vl.bw_demand;
            cost += instance.arc_delay(arc);
            flows[l].push(ArcFlow { arc, amount: 1.0 });
        }
    }
    let fits = load
        .iter()
        .zip(&instance.links)
        .all(|(used, link)| *used <= link.residual + FEASIBILITY_TOLERANCE);
    if fits {
        Some((flows, cost))
    } else {
        route_flows_lp(instance, placement)
    }
}

/// Multi-commodity min-delay flow under joint link capacities, solved as an
/// LP on the graph with non-host leaves stripped.
fn route_flows_lp(instance: &MilpInstance, placement: &[usize]) -> Option<(Vec<Vec<ArcFlow>>, f64)> {
    let n = instance.node_count();
    let mut keep = vec![true; n];
    let mut degree = vec![0usize; n];
    for l in &instance.links {
        degree[l.a] += 1;
        degree[l.b] += 1;
    }
    let mut host = vec![false; n];
    for &s in placement {
        host[instance.servers[s].node] = true;
    }
    let mut stack: Vec<usize> = (0..n).filter(|&v| degree[v] <= 1 && !host[v]).collect();
    while let Some(v) = stack.pop() {
        if !keep[v] {
            continue;
        }
        keep[v] = false;
        for l in &instance.links {
            let other = if l.a == v {
                l.b
            } else if l.b == v {
                l.a
            } else {
                continue;
            };
            if keep[other] {
                degree[other] -= 1;
                if degree[other] <= 1 && !host[other] {
                    stack.push(other);
                }
            }
        }
    }
    let arcs: Vec<usize> = (0..instance.arc_count())
        .filter(|&arc| {
            let (a, b) = instance.arc_endpoints(arc);
            keep[a] && keep[b]
        })
        .collect();

    let vlinks = &instance.slice.vlinks;
    let active: Vec<usize> = (0..vlinks.len())
        .filter(|&l| placement[vlinks[l].src] != placement[vlinks[l].dst])
        .collect();
    let mut lp = LinearProgram::default();
    let mut col = vec![vec![usize::MAX; instance.arc_count()]; vlinks.len()];
    for &l in &active {
        for &arc in &arcs {
            col[l][arc] = lp.add_var(format!("y{l}_{arc}"), instance.arc_delay(arc), 0.0, f64::INFINITY);
        }
    }
    for &l in &active {
        let src = instance.servers[placement[vlinks[l].src]].node;
        let dst = instance.servers[placement[vlinks[l].dst]].node;
        for v in (0..n).filter(|&v| keep[v]) {
            let mut coeffs = Vec::new();
            for &arc in &arcs {
                let (a, b) = instance.arc_endpoints(arc);
                if a == v {
                    coeffs.push((col[l][arc], 1.0));
                } else if b == v {
                    coeffs.push((col[l][arc], -1.0));
                }
            }
            let rhs = f64::from(v == src) - f64::from(v == dst);
            lp.add_row(format!("flow{l}_{v}"), coeffs, Sense::Eq, rhs);
        }
    }
    for (li, link) in instance.links.iter().enumerate() {
        if !(keep[link.a] && keep[link.b]) {
            continue;
        }
        let coeffs: Vec<(usize, f64)> = active
            .iter()
            .flat_map(|&l| {
                let bw = vlinks[l].bw_demand;
                [(col[l][2 * li], bw), (col[l][2 * li + 1], bw)]
            })
            .collect();
        lp.add_row(format!("bw{li}"), coeffs, Sense::Le, link.residual);
    }
    match lp::solve(&lp, 1_000_000) {
        Ok(LpOutcome::Optimal { x, objective }) => {
            let mut flows = vec![Vec::new(); vlinks.len()];
            for &l in &active {
                for &arc in &arcs {
                    let v = x[col[l][arc]];
                    if v > 1e-12 {
                        flows[l].push(ArcFlow { arc, amount: v });
                    }
                }
            }
            Some((flows, objective))
        }
        _ => None,
    }
}
