//! Row/column model and LP-relaxation branch-and-bound.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{
    ArcFlow, Budget, InfeasibleReason, MilpInstance, Solution, SolveStats, SolveStatus,
    SolverOptions,
};
use crate::error::{Error, Result};
use crate::lp::{self, LinearProgram, LpOutcome, Sense};
use crate::slice::Plane;

/// Builds the full model. Columns: `u_i_k` for every VNF and server, then
/// `y_i_j_e_f` for every virtual link and arc.
pub(super) fn build_lp(inst: &MilpInstance) -> LinearProgram {
    let mut lp = LinearProgram::default();
    let vnf_name = |i: usize| inst.slice.vnfs[i].id;
    for (i, vnf) in inst.slice.vnfs.iter().enumerate() {
        for sv in &inst.servers {
            let idx = lp.add_var(
                format!("u_{}_{}", vnf_name(i), inst.node_ids[sv.node]),
                sv.load + vnf.cpu_demand,
                0.0,
                1.0,
            );
            lp.vars[idx].integer = true;
        }
    }
    for vl in &inst.slice.vlinks {
        for arc in 0..inst.arc_count() {
            let (e, f) = inst.arc_endpoints(arc);
            lp.add_var(
                format!(
                    "y_{}_{}_{}_{}",
                    vnf_name(vl.src),
                    vnf_name(vl.dst),
                    inst.node_ids[e],
                    inst.node_ids[f]
                ),
                inst.arc_delay(arc),
                0.0,
                f64::INFINITY,
            );
        }
    }

    let n = inst.vnf_count();
    let servers = inst.server_count();
    for i in 0..n {
        let coeffs = (0..servers).map(|k| (inst.u_index(i, k), 1.0)).collect();
        lp.add_row(format!("assign_{}", vnf_name(i)), coeffs, Sense::Eq, 1.0);
    }
    for (k, sv) in inst.servers.iter().enumerate() {
        let coeffs = (0..n)
            .map(|i| (inst.u_index(i, k), inst.slice.vnfs[i].cpu_demand))
            .collect();
        lp.add_row(format!("cpu_{}", inst.node_ids[sv.node]), coeffs, Sense::Le, sv.residual);
    }
    for (li, link) in inst.links.iter().enumerate() {
        let coeffs = inst
            .slice
            .vlinks
            .iter()
            .enumerate()
            .flat_map(|(l, vl)| {
                [
                    (inst.y_index(l, 2 * li), vl.bw_demand),
                    (inst.y_index(l, 2 * li + 1), vl.bw_demand),
                ]
            })
            .collect();
        lp.add_row(
            format!("bw_{}_{}", inst.node_ids[link.a], inst.node_ids[link.b]),
            coeffs,
            Sense::Le,
            link.residual,
        );
    }
    for (l, vl) in inst.slice.vlinks.iter().enumerate() {
        for e in 0..inst.node_count() {
            let mut coeffs = Vec::new();
            for arc in 0..inst.arc_count() {
                let (a, b) = inst.arc_endpoints(arc);
                if a == e {
                    coeffs.push((inst.y_index(l, arc), 1.0));
                } else if b == e {
                    coeffs.push((inst.y_index(l, arc), -1.0));
                }
            }
            if let Some(k) = inst.server_of[e] {
                coeffs.push((inst.u_index(vl.src, k), -1.0));
                coeffs.push((inst.u_index(vl.dst, k), 1.0));
            }
            lp.add_row(
                format!("flow_{}_{}_{}", vnf_name(vl.src), vnf_name(vl.dst), inst.node_ids[e]),
                coeffs,
                Sense::Eq,
                0.0,
            );
        }
    }
    for (plane, tag) in [(Plane::Control, "c"), (Plane::Data, "d")] {
        let members: Vec<usize> = (0..n).filter(|&i| inst.slice.vnfs[i].plane == plane).collect();
        if members.is_empty() {
            continue;
        }
        for (k, sv) in inst.servers.iter().enumerate() {
            let coeffs = members.iter().map(|&i| (inst.u_index(i, k), 1.0)).collect();
            lp.add_row(
                format!("iso_{tag}_{}", inst.node_ids[sv.node]),
                coeffs,
                Sense::Le,
                f64::from(inst.k_rel(plane)),
            );
        }
    }
    let mut delay = Vec::new();
    for l in 0..inst.slice.vlinks.len() {
        for arc in 0..inst.arc_count() {
            delay.push((inst.y_index(l, arc), inst.arc_delay(arc)));
        }
    }
    for i in 0..n {
        for (k, sv) in inst.servers.iter().enumerate() {
            if sv.proc_delay != 0.0 {
                delay.push((inst.u_index(i, k), sv.proc_delay));
            }
        }
    }
    lp.add_row(
        "delay",
        delay,
        Sense::Le,
        inst.slice.delay_budget - inst.vnf_delay_sum(),
    );
    lp
}

struct Node {
    bound: f64,
    seq: u64,
    fixings: Vec<(usize, f64)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl Ord for Node {
    // Best-first: smallest bound, then earliest insertion.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn relax(
    base: &LinearProgram,
    fixings: &[(usize, f64)],
    opts: &SolverOptions,
) -> Result<Option<(Vec<f64>, f64)>> {
    let mut lp = base.clone();
    for &(j, v) in fixings {
        lp.vars[j].lower = v;
        lp.vars[j].upper = v;
    }
    match lp::solve(&lp, opts.lp_iteration_limit) {
        Ok(LpOutcome::Optimal { x, objective }) => Ok(Some((x, objective))),
        Ok(LpOutcome::Infeasible) => Ok(None),
        Ok(LpOutcome::Unbounded) => unreachable!("objective is bounded below by zero"),
        Err(lp::IterationLimit(it)) => Err(Error::ResourceLimit {
            nodes: it as u64,
            reason: "LP iteration limit".into(),
        }),
    }
}

pub(super) fn solve(inst: &MilpInstance, opts: &SolverOptions) -> Result<Solution> {
    let base = build_lp(inst);
    let n_u = inst.assign_var_count();
    let tol = opts.integrality_tolerance;
    let mut budget = Budget::new(opts);
    let mut lp_solves = 0u64;
    let mut seq = 0u64;
    let mut incumbent: Option<(Vec<f64>, f64)> = None;
    let mut queue = BinaryHeap::new();
    queue.push(Node {
        bound: f64::NEG_INFINITY,
        seq,
        fixings: Vec::new(),
    });

    while let Some(node) = queue.pop() {
        if let Some((_, best)) = &incumbent {
            if node.bound >= best - opts.lp_tolerance {
                continue;
            }
        }
        budget.tick()?;
        lp_solves += 1;
        let Some((x, objective)) = relax(&base, &node.fixings, opts)? else {
            continue;
        };
        if let Some((_, best)) = &incumbent {
            if objective >= best - opts.lp_tolerance {
                continue;
            }
        }
        // Largest fractional part; the scan order breaks ties by (VNF, server).
        let mut branch: Option<(usize, f64)> = None;
        for (j, &v) in x.iter().enumerate().take(n_u) {
            let frac = v - v.floor();
            if frac > tol && frac < 1.0 - tol && branch.is_none_or(|(_, f)| frac > f) {
                branch = Some((j, frac));
            }
        }
        match branch {
            None => incumbent = Some((x, objective)),
            Some((j, _)) => {
                for value in [1.0, 0.0] {
                    seq += 1;
                    let mut fixings = node.fixings.clone();
                    fixings.push((j, value));
                    queue.push(Node {
                        bound: objective,
                        seq,
                        fixings,
                    });
                }
            }
        }
    }

    let stats = SolveStats {
        nodes: budget.nodes,
        lp_solves,
    };
    let Some((x, objective)) = incumbent else {
        return Ok(Solution::infeasible(InfeasibleReason::NoFeasibleEmbedding, stats));
    };
    let servers = inst.server_count();
    let placement: Vec<usize> = (0..inst.vnf_count())
        .map(|i| {
            (0..servers)
                .max_by(|&a, &b| {
                    x[inst.u_index(i, a)]
                        .total_cmp(&x[inst.u_index(i, b)])
                        .then(b.cmp(&a))
                })
                .expect("at least one server")
        })
        .collect();
    let flows: Vec<Vec<ArcFlow>> = (0..inst.slice.vlinks.len())
        .map(|l| {
            (0..inst.arc_count())
                .filter_map(|arc| {
                    let amount = x[inst.y_index(l, arc)];
                    (amount > 1e-9).then_some(ArcFlow { arc, amount })
                })
                .collect()
        })
        .collect();
    let realized_delay = inst.delay_of(&placement, &flows);
    Ok(Solution {
        status: SolveStatus::Optimal,
        placement,
        flows,
        objective_value: objective,
        realized_delay,
        stats,
    })
}
