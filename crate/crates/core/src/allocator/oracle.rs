//! Exhaustive reference solver for tiny instances.
//!
//! Enumerates every assignment of VNFs to servers, routes each virtual link
//! along a minimum-delay path (Floyd-Warshall, independent of the solvers'
//! Dijkstra), and keeps the cheapest placement that satisfies capacity,
//! isolation and delay. Paths are fixed per placement, so the result is
//! exact whenever link capacity never forces a detour (always true on trees).

use super::{
    ArcFlow, InfeasibleReason, MilpInstance, Solution, SolveStats, SolveStatus,
    FEASIBILITY_TOLERANCE,
};
use crate::error::{Error, Result};
use crate::slice::Plane;

pub const MAX_SERVERS: usize = 6;
pub const MAX_VNFS: usize = 4;

pub fn oracle_solve(inst: &MilpInstance) -> Result<Solution> {
    let n = inst.vnf_count();
    let s = inst.server_count();
    if s > MAX_SERVERS || n > MAX_VNFS {
        return Err(Error::InvalidArgument(format!(
            "oracle handles at most {MAX_SERVERS} servers and {MAX_VNFS} VNFs, got {s} and {n}"
        )));
    }
    let demand_total: f64 = inst.slice.vnfs.iter().map(|v| v.cpu_demand).sum();
    let residual_total: f64 = inst.servers.iter().map(|v| v.residual).sum();
    if demand_total > residual_total + FEASIBILITY_TOLERANCE {
        return Ok(Solution::infeasible(
            InfeasibleReason::SystemCpuBudget,
            SolveStats::default(),
        ));
    }

    // Floyd-Warshall with successor arcs.
    let v = inst.node_count();
    let mut dist = vec![vec![f64::INFINITY; v]; v];
    let mut next: Vec<Vec<Option<usize>>> = vec![vec![None; v]; v];
    for (a, row) in dist.iter_mut().enumerate() {
        row[a] = 0.0;
    }
    for arc in 0..inst.arc_count() {
        let (a, b) = inst.arc_endpoints(arc);
        let d = inst.arc_delay(arc);
        if d < dist[a][b] {
            dist[a][b] = d;
            next[a][b] = Some(arc);
        }
    }
    for m in 0..v {
        for a in 0..v {
            for b in 0..v {
                let via = dist[a][m] + dist[m][b];
                if via < dist[a][b] {
                    dist[a][b] = via;
                    next[a][b] = next[a][m];
                }
            }
        }
    }
    let path = |from: usize, to: usize| -> Vec<usize> {
        let mut arcs = Vec::new();
        let mut at = from;
        while at != to {
            let arc = next[at][to].expect("connected graph");
            arcs.push(arc);
            at = inst.arc_endpoints(arc).1;
        }
        arcs
    };

    let mut best: Option<(f64, Vec<usize>, Vec<Vec<ArcFlow>>, f64)> = None;
    let mut placement = vec![0usize; n];
    let total = s.pow(n as u32);
    for code in 0..total {
        let mut c = code;
        for slot in placement.iter_mut().rev() {
            *slot = c % s;
            c /= s;
        }

        let mut cpu = vec![0.0; s];
        let mut control = vec![0u32; s];
        let mut data = vec![0u32; s];
        for (i, &k) in placement.iter().enumerate() {
            let vnf = &inst.slice.vnfs[i];
            cpu[k] += vnf.cpu_demand;
            match vnf.plane {
                Plane::Control => control[k] += 1,
                Plane::Data => data[k] += 1,
            }
        }
        let ok = (0..s).all(|k| {
            cpu[k] <= inst.servers[k].residual + FEASIBILITY_TOLERANCE
                && control[k] <= inst.k_rel(Plane::Control)
                && data[k] <= inst.k_rel(Plane::Data)
        });
        if !ok {
            continue;
        }

        let mut load = vec![0.0; inst.links.len()];
        let mut flows = vec![Vec::new(); inst.slice.vlinks.len()];
        let mut link_delay = 0.0;
        for (l, vl) in inst.slice.vlinks.iter().enumerate() {
            let a = inst.servers[placement[vl.src]].node;
            let b = inst.servers[placement[vl.dst]].node;
            for arc in path(a, b) {
                load[arc / 2] += vl.bw_demand;
                link_delay += inst.arc_delay(arc);
                flows[l].push(ArcFlow { arc, amount: 1.0 });
            }
        }
        if load
            .iter()
            .zip(&inst.links)
            .any(|(used, link)| *used > link.residual + FEASIBILITY_TOLERANCE)
        {
            continue;
        }
        let host_delay: f64 = placement.iter().map(|&k| inst.servers[k].proc_delay).sum();
        let delay = link_delay + inst.vnf_delay_sum() + host_delay;
        if delay > inst.slice.delay_budget + FEASIBILITY_TOLERANCE {
            continue;
        }
        let objective = placement
            .iter()
            .zip(&inst.slice.vnfs)
            .map(|(&k, vnf)| inst.servers[k].load + vnf.cpu_demand)
            .sum::<f64>()
            + link_delay;
        if best.as_ref().is_none_or(|b| objective < b.0) {
            best = Some((objective, placement.clone(), flows, delay));
        }
    }

    let stats = SolveStats {
        nodes: total as u64,
        lp_solves: 0,
    };
    Ok(match best {
        Some((objective_value, placement, flows, realized_delay)) => Solution {
            status: SolveStatus::Optimal,
            placement,
            flows,
            objective_value,
            realized_delay,
            stats,
        },
        None => Solution::infeasible(InfeasibleReason::NoFeasibleEmbedding, stats),
    })
}
