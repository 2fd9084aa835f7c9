//! Slice embedding as a mixed-integer program.
//!
//! [`build_instance`] freezes the network state and a slice request into a
//! [`MilpInstance`]: binary assignment variables `u_i_k` (VNF `i` on server
//! `k`) and continuous unit-flow variables `y_i_j_e_f` (virtual link `i->j`
//! on arc `e->f`). The objective charges every VNF the current load of its
//! host plus its own demand, and every unit of flow the utilization-dependent
//! delay of the arc it crosses. Constraints cover assignment, server and link
//! capacity, the system CPU budget, flow conservation, per-plane isolation
//! and the end-to-end delay budget.
//!
//! Two exact solvers are provided, selected by [`Strategy`]:
//! * [`Strategy::TreeBound`] (default) branches on placements VNF by VNF and
//!   bounds each node with a dynamic program over a spanning tree of the
//!   slice graph (server loads plus shortest-path delays).
//! * [`Strategy::LpRelaxation`] is textbook branch-and-bound on the `u`
//!   variables with the LP relaxation as bound. It is exact but only
//!   practical for small instances.

mod lpfile;
pub mod oracle;
mod paths;
mod relaxation;
mod search;
mod validate;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LP_TOLERANCE};
use crate::slice::{Plane, SliceRequest};
use crate::topology::{link_delay, NetworkGraph};

pub use lpfile::write_lp;
pub use paths::{all_pairs_server_delays, route_flows};
pub use validate::{validate_solution, ConstraintFamily, FamilyCheck, ValidationReport};

/// Integrality tolerance for binary variables.
pub const INTEGRALITY_TOLERANCE: f64 = 1e-6;
/// Slack allowed on capacity and delay rows when accepting a placement.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-9;
/// Tolerance used by [`validate_solution`].
pub const VALIDATION_TOLERANCE: f64 = 1e-6;

pub(crate) fn quantize(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    TreeBound,
    LpRelaxation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BranchingRule {
    /// Fractional `u` with the largest fractional part; ties by (VNF, server).
    LargestFraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub strategy: Strategy,
    pub branching: BranchingRule,
    pub time_limit_secs: Option<f64>,
    pub node_limit: u64,
    pub lp_iteration_limit: usize,
    pub lp_tolerance: f64,
    pub integrality_tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            strategy: Strategy::TreeBound,
            branching: BranchingRule::LargestFraction,
            time_limit_secs: None,
            node_limit: 20_000_000,
            lp_iteration_limit: 200_000,
            lp_tolerance: LP_TOLERANCE,
            integrality_tolerance: INTEGRALITY_TOLERANCE,
        }
    }
}

impl SolverOptions {
    pub fn lp_relaxation() -> Self {
        SolverOptions {
            strategy: Strategy::LpRelaxation,
            ..Default::default()
        }
    }
}

/// Frozen view of one server.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerSnapshot {
    pub node: usize,
    pub load: f64,
    pub capacity: f64,
    pub residual: f64,
    pub proc_delay: f64,
}

/// Frozen view of one undirected link.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkSnapshot {
    pub a: usize,
    pub b: usize,
    pub residual: f64,
    pub delay: f64,
}

/// The decision problem for one slice against one network snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct MilpInstance {
    /// The request with demands rounded to the ledger's 1e-6 resolution.
    pub slice: SliceRequest,
    pub node_ids: Vec<String>,
    /// `server_of[node]` is the server position of a node, if it is a server.
    pub server_of: Vec<Option<usize>>,
    pub servers: Vec<ServerSnapshot>,
    pub links: Vec<LinkSnapshot>,
    /// Whether the slice's total CPU fits in the system's total residual.
    pub budget_ok: bool,
}

impl MilpInstance {
    pub fn vnf_count(&self) -> usize {
        self.slice.vnfs.len()
    }

    pub fn server_count(&self) -> usize {
        self.servers.len()
    }

    pub fn arc_count(&self) -> usize {
        2 * self.links.len()
    }

    pub fn assign_var_count(&self) -> usize {
        self.vnf_count() * self.server_count()
    }

    pub fn flow_var_count(&self) -> usize {
        self.slice.vlinks.len() * self.arc_count()
    }

    /// Column index of `u_i_k` for VNF `vnf` and server position `server`.
    pub fn u_index(&self, vnf: usize, server: usize) -> usize {
        vnf * self.server_count() + server
    }

    /// Column index of `y` for virtual link `vlink` on `arc`.
    pub fn y_index(&self, vlink: usize, arc: usize) -> usize {
        self.assign_var_count() + vlink * self.arc_count() + arc
    }

    pub fn arc_endpoints(&self, arc: usize) -> (usize, usize) {
        let l = &self.links[arc / 2];
        if arc % 2 == 0 {
            (l.a, l.b)
        } else {
            (l.b, l.a)
        }
    }

    pub fn arc_delay(&self, arc: usize) -> f64 {
        self.links[arc / 2].delay
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn total_cpu_demand(&self) -> f64 {
        self.slice.vnfs.iter().map(|v| v.cpu_demand).sum()
    }

    pub fn total_residual_cpu(&self) -> f64 {
        self.servers.iter().map(|s| s.residual).sum()
    }

    pub fn k_rel(&self, plane: Plane) -> u32 {
        self.slice.k_rel(plane)
    }

    /// VNF processing delays, which every placement pays.
    pub fn vnf_delay_sum(&self) -> f64 {
        self.slice.vnfs.iter().map(|v| v.proc_delay).sum()
    }

    /// Generic row/column form of the full model.
    pub fn to_linear_program(&self) -> LinearProgram {
        relaxation::build_lp(self)
    }

    /// Objective of a placement (server positions per VNF) plus unit flows.
    pub fn objective_of(&self, placement: &[usize], flows: &[Vec<ArcFlow>]) -> f64 {
        let place: f64 = placement
            .iter()
            .zip(&self.slice.vnfs)
            .map(|(&s, v)| self.servers[s].load + v.cpu_demand)
            .sum();
        place + self.link_delay_of(flows)
    }

    pub fn link_delay_of(&self, flows: &[Vec<ArcFlow>]) -> f64 {
        flows
            .iter()
            .flatten()
            .map(|f| self.arc_delay(f.arc) * f.amount)
            .sum()
    }

    /// End-to-end delay of a placement and its flows.
    pub fn delay_of(&self, placement: &[usize], flows: &[Vec<ArcFlow>]) -> f64 {
        let hosts: f64 = placement.iter().map(|&s| self.servers[s].proc_delay).sum();
        self.link_delay_of(flows) + self.vnf_delay_sum() + hosts
    }
}

/// Freezes `graph` (with its current allocations) and `slice` into an instance.
pub fn build_instance(graph: &NetworkGraph, slice: &SliceRequest) -> Result<MilpInstance> {
    slice.validate()?;
    let mut slice = slice.clone();
    for v in &mut slice.vnfs {
        v.cpu_demand = quantize(v.cpu_demand);
    }
    for l in &mut slice.vlinks {
        l.bw_demand = quantize(l.bw_demand);
    }

    let mut server_of = vec![None; graph.nodes().len()];
    let servers: Vec<ServerSnapshot> = graph
        .servers()
        .iter()
        .enumerate()
        .map(|(pos, &k)| {
            server_of[k] = Some(pos);
            let n = graph.node(k);
            ServerSnapshot {
                node: k,
                load: n.cpu_alloc,
                capacity: n.cpu_max,
                residual: n.cpu_max - n.cpu_alloc,
                proc_delay: n.proc_delay,
            }
        })
        .collect();
    let links = graph
        .links()
        .iter()
        .map(|l| LinkSnapshot {
            a: l.a,
            b: l.b,
            residual: l.residual(),
            delay: link_delay(l),
        })
        .collect();

    let mut instance = MilpInstance {
        slice,
        node_ids: graph.nodes().iter().map(|n| n.id.clone()).collect(),
        server_of,
        servers,
        links,
        budget_ok: true,
    };
    instance.budget_ok =
        instance.total_cpu_demand() <= instance.total_residual_cpu() + FEASIBILITY_TOLERANCE;
    Ok(instance)
}

/// Unit flow of one virtual link on one arc.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcFlow {
    pub arc: usize,
    pub amount: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfeasibleReason {
    /// Total slice CPU exceeds the total residual CPU of the system.
    SystemCpuBudget,
    /// No placement satisfies capacity, isolation and delay together.
    NoFeasibleEmbedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status", content = "reason")]
pub enum SolveStatus {
    Optimal,
    Infeasible(InfeasibleReason),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveStats {
    pub nodes: u64,
    pub lp_solves: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub status: SolveStatus,
    /// Server position (index into [`MilpInstance::servers`]) per VNF.
    pub placement: Vec<usize>,
    /// Unit flows per virtual link, in `slice.vlinks` order.
    pub flows: Vec<Vec<ArcFlow>>,
    pub objective_value: f64,
    pub realized_delay: f64,
    pub stats: SolveStats,
}

impl Solution {
    pub fn infeasible(reason: InfeasibleReason, stats: SolveStats) -> Self {
        Solution {
            status: SolveStatus::Infeasible(reason),
            placement: Vec::new(),
            flows: Vec::new(),
            objective_value: f64::INFINITY,
            realized_delay: f64::INFINITY,
            stats,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// Host node id per VNF.
    pub fn placement_ids<'a>(&self, instance: &'a MilpInstance) -> Vec<&'a str> {
        self.placement
            .iter()
            .map(|&s| instance.node_ids[instance.servers[s].node].as_str())
            .collect()
    }

    /// Host node index per VNF.
    pub fn placement_nodes(&self, instance: &MilpInstance) -> Vec<usize> {
        self.placement.iter().map(|&s| instance.servers[s].node).collect()
    }
}

pub(crate) struct Budget {
    started: Instant,
    time_limit: Option<f64>,
    node_limit: u64,
    pub nodes: u64,
}

impl Budget {
    pub fn new(opts: &SolverOptions) -> Self {
        Budget {
            started: Instant::now(),
            time_limit: opts.time_limit_secs,
            node_limit: opts.node_limit,
            nodes: 0,
        }
    }

    pub fn tick(&mut self) -> Result<()> {
        self.nodes += 1;
        if self.nodes > self.node_limit {
            return Err(Error::ResourceLimit {
                nodes: self.nodes,
                reason: "node limit".into(),
            });
        }
        if let Some(limit) = self.time_limit {
            if self.nodes % 256 == 0 && self.started.elapsed().as_secs_f64() > limit {
                return Err(Error::ResourceLimit {
                    nodes: self.nodes,
                    reason: "time limit".into(),
                });
            }
        }
        Ok(())
    }
}

/// Solves `instance` to proven optimality, or reports infeasibility.
/// Exhausting the node or time budget is an error, never a silent
/// suboptimal answer.
pub fn solve(instance: &MilpInstance, opts: &SolverOptions) -> Result<Solution> {
    if !instance.budget_ok {
        return Ok(Solution::infeasible(
            InfeasibleReason::SystemCpuBudget,
            SolveStats::default(),
        ));
    }
    match opts.strategy {
        Strategy::TreeBound => search::solve(instance, opts),
        Strategy::LpRelaxation => relaxation::solve(instance, opts),
    }
}

#[cfg(test)]
mod tests;
