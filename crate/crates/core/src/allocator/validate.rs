//! Independent re-check of a solution against every constraint family.

use std::fmt;

use serde::Serialize;

use super::{MilpInstance, Solution, VALIDATION_TOLERANCE};
use crate::slice::Plane;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintFamily {
    Assignment,
    NodeCapacity,
    LinkCapacity,
    SystemBudget,
    FlowConservation,
    BinaryPlacement,
    FlowDomain,
    ControlIsolation,
    DataIsolation,
    EndToEndDelay,
    Objective,
}

impl ConstraintFamily {
    pub const ALL: [ConstraintFamily; 11] = [
        ConstraintFamily::Assignment,
        ConstraintFamily::NodeCapacity,
        ConstraintFamily::LinkCapacity,
        ConstraintFamily::SystemBudget,
        ConstraintFamily::FlowConservation,
        ConstraintFamily::BinaryPlacement,
        ConstraintFamily::FlowDomain,
        ConstraintFamily::ControlIsolation,
        ConstraintFamily::DataIsolation,
        ConstraintFamily::EndToEndDelay,
        ConstraintFamily::Objective,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConstraintFamily::Assignment => "assignment",
            ConstraintFamily::NodeCapacity => "node-capacity",
            ConstraintFamily::LinkCapacity => "link-capacity",
            ConstraintFamily::SystemBudget => "system-budget",
            ConstraintFamily::FlowConservation => "flow-conservation",
            ConstraintFamily::BinaryPlacement => "binary-placement",
            ConstraintFamily::FlowDomain => "flow-domain",
            ConstraintFamily::ControlIsolation => "control-isolation",
            ConstraintFamily::DataIsolation => "data-isolation",
            ConstraintFamily::EndToEndDelay => "end-to-end-delay",
            ConstraintFamily::Objective => "objective",
        }
    }
}

impl fmt::Display for ConstraintFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyCheck {
    pub family: ConstraintFamily,
    pub passed: bool,
    /// Smallest `rhs - lhs` (inequalities) or `-|lhs - rhs|` (equalities).
    pub worst_slack: f64,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<FamilyCheck>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, family: ConstraintFamily) -> &FamilyCheck {
        self.checks
            .iter()
            .find(|c| c.family == family)
            .expect("every family is checked")
    }

    pub fn failures(&self) -> impl Iterator<Item = &FamilyCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

struct Tally {
    family: ConstraintFamily,
    worst: f64,
    violations: Vec<String>,
}

impl Tally {
    fn new(family: ConstraintFamily) -> Self {
        Tally {
            family,
            worst: f64::INFINITY,
            violations: Vec::new(),
        }
    }

    fn le(&mut self, what: impl FnOnce() -> String, lhs: f64, rhs: f64) {
        self.slack(what, rhs - lhs);
    }

    fn eq(&mut self, what: impl FnOnce() -> String, lhs: f64, rhs: f64) {
        self.slack(what, -(lhs - rhs).abs());
    }

    fn slack(&mut self, what: impl FnOnce() -> String, slack: f64) {
        self.worst = self.worst.min(slack);
        if !(slack >= -VALIDATION_TOLERANCE) {
            self.violations.push(format!("{} (slack {slack:.3e})", what()));
        }
    }

    fn finish(self) -> FamilyCheck {
        FamilyCheck {
            family: self.family,
            passed: self.violations.is_empty(),
            worst_slack: if self.worst.is_finite() { self.worst } else { 0.0 },
            violations: self.violations,
        }
    }
}

/// Re-derives `u` and `y` from the solution and evaluates every row.
pub fn validate_solution(inst: &MilpInstance, sol: &Solution) -> ValidationReport {
    use ConstraintFamily::*;
    let n = inst.vnf_count();
    let servers = inst.server_count();
    let vnfs = &inst.slice.vnfs;
    let vlinks = &inst.slice.vlinks;

    let mut assignment = Tally::new(Assignment);
    let mut binary = Tally::new(BinaryPlacement);
    let mut u = vec![vec![0.0; servers]; n];
    for i in 0..n {
        match sol.placement.get(i) {
            Some(&k) if k < servers => u[i][k] = 1.0,
            Some(&k) => binary.slack(|| format!("VNF {i} placed on non-server position {k}"), -1.0),
            None => {}
        }
        let total: f64 = u[i].iter().sum();
        assignment.eq(|| format!("VNF {i} assigned {total} times"), total, 1.0);
    }
    if sol.placement.len() > n {
        assignment.slack(|| "placement lists unknown VNFs".to_string(), -1.0);
    }

    let mut node_cap = Tally::new(NodeCapacity);
    for (k, sv) in inst.servers.iter().enumerate() {
        let lhs: f64 = (0..n).map(|i| vnfs[i].cpu_demand * u[i][k]).sum();
        node_cap.le(|| format!("server {}", inst.node_ids[sv.node]), lhs, sv.residual);
    }

    let mut budget = Tally::new(SystemBudget);
    budget.le(
        || "total slice CPU against total residual".to_string(),
        inst.total_cpu_demand(),
        inst.total_residual_cpu(),
    );

    let arcs = inst.arc_count();
    let mut domain = Tally::new(FlowDomain);
    let mut y = vec![vec![0.0; arcs]; vlinks.len()];
    if sol.flows.len() > vlinks.len() {
        domain.slack(|| "flows listed for unknown virtual links".to_string(), -1.0);
    }
    for (l, flows) in sol.flows.iter().enumerate().take(vlinks.len()) {
        for f in flows {
            if f.arc >= arcs {
                domain.slack(|| format!("virtual link {l} uses unknown arc {}", f.arc), -1.0);
                continue;
            }
            domain.slack(|| format!("negative flow on arc {}", f.arc), f.amount);
            if !f.amount.is_finite() {
                domain.slack(|| format!("non-finite flow on arc {}", f.arc), -1.0);
            }
            y[l][f.arc] += f.amount;
        }
    }

    let mut link_cap = Tally::new(LinkCapacity);
    for (li, link) in inst.links.iter().enumerate() {
        let lhs: f64 = vlinks
            .iter()
            .enumerate()
            .map(|(l, vl)| vl.bw_demand * (y[l][2 * li] + y[l][2 * li + 1]))
            .sum();
        link_cap.le(
            || format!("link {}-{}", inst.node_ids[link.a], inst.node_ids[link.b]),
            lhs,
            link.residual,
        );
    }

    let mut conservation = Tally::new(FlowConservation);
    for (l, vl) in vlinks.iter().enumerate() {
        let mut net = vec![0.0; inst.node_count()];
        for (arc, &v) in y[l].iter().enumerate() {
            if v != 0.0 {
                let (e, f) = inst.arc_endpoints(arc);
                net[e] += v;
                net[f] -= v;
            }
        }
        for (e, &out) in net.iter().enumerate() {
            let rhs = match inst.server_of[e] {
                Some(k) => u[vl.src][k] - u[vl.dst][k],
                None => 0.0,
            };
            conservation.eq(
                || format!("virtual link {}->{} at node {}", vl.src, vl.dst, inst.node_ids[e]),
                out,
                rhs,
            );
        }
    }

    let mut control = Tally::new(ControlIsolation);
    let mut data = Tally::new(DataIsolation);
    for (plane, tally) in [(Plane::Control, &mut control), (Plane::Data, &mut data)] {
        let k_rel = f64::from(inst.k_rel(plane));
        for (k, sv) in inst.servers.iter().enumerate() {
            let lhs: f64 = (0..n).filter(|&i| vnfs[i].plane == plane).map(|i| u[i][k]).sum();
            tally.le(|| format!("server {}", inst.node_ids[sv.node]), lhs, k_rel);
        }
    }

    let mut delay = Tally::new(EndToEndDelay);
    let link_part: f64 = y
        .iter()
        .flat_map(|row| row.iter().enumerate().map(|(arc, v)| inst.arc_delay(arc) * v))
        .sum();
    let node_part: f64 = (0..n)
        .map(|i| {
            vnfs[i].proc_delay
                + (0..servers).map(|k| inst.servers[k].proc_delay * u[i][k]).sum::<f64>()
        })
        .sum();
    delay.le(
        || "end-to-end delay".to_string(),
        link_part + node_part,
        inst.slice.delay_budget,
    );

    let mut objective = Tally::new(Objective);
    let recomputed: f64 = (0..n)
        .flat_map(|i| (0..servers).map(move |k| (i, k)))
        .map(|(i, k)| (inst.servers[k].load + vnfs[i].cpu_demand) * u[i][k])
        .sum::<f64>()
        + link_part;
    objective.eq(
        || format!("reported objective {} vs recomputed {recomputed}", sol.objective_value),
        sol.objective_value,
        recomputed,
    );

    ValidationReport {
        checks: vec![
            assignment.finish(),
            node_cap.finish(),
            link_cap.finish(),
            budget.finish(),
            conservation.finish(),
            binary.finish(),
            domain.finish(),
            control.finish(),
            data.finish(),
            delay.finish(),
            objective.finish(),
        ],
    }
}
