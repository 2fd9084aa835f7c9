//! Mutable network state: the ledger of active slices and their footprints.
//!
//! CPU and bandwidth are kept as integer micro-units (1e-6 GHz, 1e-6 Mbps).
//! The floating-point allocations on the graph are always re-derived from
//! those integers, so any apply/deallocate sequence that returns to the same
//! set of active slices returns to the same bits.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::allocator::{self, ArcFlow, MilpInstance, Solution};
use crate::error::{Error, Result};
use crate::slice::{SliceKind, SliceRequest};
use crate::topology::{average_cpu_utilization, NetworkGraph};

const UNITS_PER_ONE: f64 = 1e6;

fn to_units(x: f64) -> i64 {
    (x * UNITS_PER_ONE).round() as i64
}

fn from_units(u: i64) -> f64 {
    u as f64 / UNITS_PER_ONE
}

/// One allocated slice.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationRecord {
    pub slice: SliceRequest,
    /// Host node index per VNF.
    pub placement: Vec<usize>,
    /// Flows per virtual link, on graph arcs.
    pub flows: Vec<Vec<ArcFlow>>,
    pub realized_delay: f64,
    pub allocated_at: f64,
    cpu_charge: Vec<(usize, i64)>,
    bw_charge: Vec<(usize, i64)>,
}

impl AllocationRecord {
    /// Distinct host nodes, ascending.
    pub fn hosts(&self) -> BTreeSet<usize> {
        self.placement.iter().copied().collect()
    }

    pub fn cpu_total(&self) -> f64 {
        from_units(self.cpu_charge.iter().map(|c| c.1).sum())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    graph: NetworkGraph,
    cpu_cap: Vec<i64>,
    bw_cap: Vec<i64>,
    base_cpu: Vec<i64>,
    base_bw: Vec<i64>,
    cpu: Vec<i64>,
    bw: Vec<i64>,
    active: BTreeMap<u64, AllocationRecord>,
    protected: BTreeSet<u64>,
    clock: f64,
}

impl NetworkState {
    /// Allocations already present on `graph` become a fixed base load.
    pub fn new(graph: NetworkGraph) -> Self {
        let cpu_cap = graph.nodes().iter().map(|n| to_units(n.cpu_max)).collect();
        let bw_cap = graph.links().iter().map(|l| to_units(l.bw_max)).collect();
        let base_cpu: Vec<i64> = graph.nodes().iter().map(|n| to_units(n.cpu_alloc)).collect();
        let base_bw: Vec<i64> = graph.links().iter().map(|l| to_units(l.bw_alloc)).collect();
        let mut state = NetworkState {
            graph,
            cpu_cap,
            bw_cap,
            cpu: base_cpu.clone(),
            bw: base_bw.clone(),
            base_cpu,
            base_bw,
            active: BTreeMap::new(),
            protected: BTreeSet::new(),
            clock: 0.0,
        };
        state.sync_all();
        state
    }

    pub fn graph(&self) -> &NetworkGraph {
        &self.graph
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    /// Moves the simulated clock forward; it never runs backwards.
    pub fn advance_clock(&mut self, to: f64) {
        if to > self.clock {
            self.clock = to;
        }
    }

    pub fn acu(&self) -> f64 {
        average_cpu_utilization(&self.graph).unwrap_or(0.0)
    }

    pub fn active(&self) -> &BTreeMap<u64, AllocationRecord> {
        &self.active
    }

    pub fn record(&self, id: u64) -> Option<&AllocationRecord> {
        self.active.get(&id)
    }

    pub fn is_active(&self, id: u64) -> bool {
        self.active.contains_key(&id)
    }

    /// Ids of active slices of the given kind, ascending.
    pub fn ids_of_kind(&self, kind: SliceKind) -> Vec<u64> {
        self.active
            .iter()
            .filter(|(_, r)| r.slice.kind == kind)
            .map(|(&id, _)| id)
            .collect()
    }

    /// Marks an active slice as never-deallocate.
    pub fn protect(&mut self, id: u64) -> Result<()> {
        if !self.active.contains_key(&id) {
            return Err(Error::UnknownSlice(id));
        }
        self.protected.insert(id);
        Ok(())
    }

    pub fn is_protected(&self, id: u64) -> bool {
        self.protected.contains(&id)
    }

    pub fn build_instance(&self, slice: &SliceRequest) -> Result<MilpInstance> {
        allocator::build_instance(&self.graph, slice)
    }

    /// Commits `sol` for `slice`. Capacities are re-checked against the live
    /// ledger; on any violation nothing changes.
    pub fn apply(&mut self, slice: &SliceRequest, sol: &Solution) -> Result<&AllocationRecord> {
        if !sol.is_optimal() {
            return Err(Error::InvalidArgument(format!(
                "slice {} has no optimal solution to apply",
                slice.id
            )));
        }
        if self.active.contains_key(&slice.id) {
            return Err(Error::DuplicateSlice(slice.id));
        }
        slice.validate()?;
        let servers = self.graph.servers();
        if sol.placement.len() != slice.vnfs.len() || sol.flows.len() != slice.vlinks.len() {
            return Err(Error::InvalidArgument(format!(
                "solution shape does not match slice {}",
                slice.id
            )));
        }
        let mut placement = Vec::with_capacity(sol.placement.len());
        for &pos in &sol.placement {
            let node = *servers.get(pos).ok_or_else(|| {
                Error::InvalidArgument(format!("server position {pos} out of range"))
            })?;
            placement.push(node);
        }

        let mut cpu_delta: BTreeMap<usize, i64> = BTreeMap::new();
        for (vnf, &node) in slice.vnfs.iter().zip(&placement) {
            *cpu_delta.entry(node).or_default() += to_units(vnf.cpu_demand);
        }
        let arcs = self.graph.arc_count();
        let mut bw_load: BTreeMap<usize, f64> = BTreeMap::new();
        for (vl, flows) in slice.vlinks.iter().zip(&sol.flows) {
            let demand = allocator::quantize(vl.bw_demand);
            for f in flows {
                if f.arc >= arcs || !(f.amount >= 0.0) {
                    return Err(Error::InvalidArgument(format!("bad flow on arc {}", f.arc)));
                }
                *bw_load.entry(f.arc / 2).or_default() += demand * f.amount;
            }
        }
        let bw_delta: BTreeMap<usize, i64> = bw_load
            .into_iter()
            .map(|(l, v)| (l, to_units(v)))
            .filter(|&(_, u)| u != 0)
            .collect();

        for (&node, &d) in &cpu_delta {
            if self.cpu[node] + d > self.cpu_cap[node] {
                return Err(Error::StaleSnapshot {
                    slice: slice.id,
                    element: self.graph.node(node).id.clone(),
                });
            }
        }
        for (&link, &d) in &bw_delta {
            if self.bw[link] + d > self.bw_cap[link] {
                let l = self.graph.link(link);
                return Err(Error::StaleSnapshot {
                    slice: slice.id,
                    element: format!("{}-{}", self.graph.node(l.a).id, self.graph.node(l.b).id),
                });
            }
        }

        let record = AllocationRecord {
            slice: slice.clone(),
            placement,
            flows: sol.flows.clone(),
            realized_delay: sol.realized_delay,
            allocated_at: self.clock,
            cpu_charge: cpu_delta.into_iter().collect(),
            bw_charge: bw_delta.into_iter().collect(),
        };
        for &(node, d) in &record.cpu_charge {
            self.cpu[node] += d;
            self.graph.set_cpu_alloc(node, from_units(self.cpu[node]));
        }
        for &(link, d) in &record.bw_charge {
            self.bw[link] += d;
            self.graph.set_bw_alloc(link, from_units(self.bw[link]));
        }
        Ok(self.active.entry(slice.id).or_insert(record))
    }

    /// Removes a slice and all of its charges.
    pub fn deallocate(&mut self, id: u64) -> Result<AllocationRecord> {
        if self.protected.contains(&id) {
            return Err(Error::Protected(id));
        }
        let record = self.active.remove(&id).ok_or(Error::UnknownSlice(id))?;
        for &(node, d) in &record.cpu_charge {
            self.cpu[node] -= d;
            self.graph.set_cpu_alloc(node, from_units(self.cpu[node]));
        }
        for &(link, d) in &record.bw_charge {
            self.bw[link] -= d;
            self.graph.set_bw_alloc(link, from_units(self.bw[link]));
        }
        Ok(record)
    }

    /// Whether the host sets of two active slices intersect.
    pub fn co_resident(&self, a: u64, b: u64) -> Result<bool> {
        let ra = self.active.get(&a).ok_or(Error::UnknownSlice(a))?;
        let rb = self.active.get(&b).ok_or(Error::UnknownSlice(b))?;
        Ok(ra.placement.iter().any(|k| rb.placement.contains(k)))
    }

    /// Recomputes both ledgers from the records and compares them, and the
    /// graph's allocations, with the stored values.
    pub fn check_ledger(&self) -> Result<()> {
        let mut cpu = self.base_cpu.clone();
        let mut bw = self.base_bw.clone();
        for r in self.active.values() {
            for &(node, d) in &r.cpu_charge {
                cpu[node] += d;
            }
            for &(link, d) in &r.bw_charge {
                bw[link] += d;
            }
        }
        for (k, node) in self.graph.nodes().iter().enumerate() {
            if cpu[k] != self.cpu[k] || node.cpu_alloc != from_units(cpu[k]) {
                return Err(Error::Capacity {
                    element: node.id.clone(),
                    detail: "CPU ledger does not match active records".into(),
                });
            }
        }
        for (l, link) in self.graph.links().iter().enumerate() {
            if bw[l] != self.bw[l] || link.bw_alloc != from_units(bw[l]) {
                return Err(Error::Capacity {
                    element: format!("{}-{}", self.graph.node(link.a).id, self.graph.node(link.b).id),
                    detail: "bandwidth ledger does not match active records".into(),
                });
            }
        }
        Ok(())
    }

    fn sync_all(&mut self) {
        for k in 0..self.cpu.len() {
            self.graph.set_cpu_alloc(k, from_units(self.cpu[k]));
        }
        for l in 0..self.bw.len() {
            self.graph.set_bw_alloc(l, from_units(self.bw[l]));
        }
    }

    pub fn snapshot(&self) -> StateSnapshot {
        let g = &self.graph;
        StateSnapshot {
            clock_s: self.clock,
            acu: self.acu(),
            slices: self
                .active
                .values()
                .map(|r| SliceEntry {
                    id: r.slice.id,
                    kind: r.slice.kind,
                    protected: self.protected.contains(&r.slice.id),
                    placement: r.placement.iter().map(|&k| g.node(k).id.clone()).collect(),
                    cpu_ghz: r.cpu_total(),
                    realized_delay_ms: r.realized_delay,
                    allocated_at_s: r.allocated_at,
                })
                .collect(),
            servers: g
                .servers()
                .iter()
                .map(|&k| ServerEntry {
                    id: g.node(k).id.clone(),
                    cpu_alloc_ghz: g.node(k).cpu_alloc,
                    cpu_max_ghz: g.node(k).cpu_max,
                })
                .collect(),
            links: g
                .links()
                .iter()
                .filter(|l| l.bw_alloc != 0.0)
                .map(|l| LinkEntry {
                    a: g.node(l.a).id.clone(),
                    b: g.node(l.b).id.clone(),
                    bw_alloc_mbps: l.bw_alloc,
                    bw_max_mbps: l.bw_max,
                })
                .collect(),
        }
    }

    pub fn snapshot_json(&self) -> String {
        serde_json::to_string_pretty(&self.snapshot()).expect("snapshot serializes")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StateSnapshot {
    pub clock_s: f64,
    pub acu: f64,
    pub slices: Vec<SliceEntry>,
    pub servers: Vec<ServerEntry>,
    /// Links carrying traffic only.
    pub links: Vec<LinkEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SliceEntry {
    pub id: u64,
    pub kind: SliceKind,
    pub protected: bool,
    pub placement: Vec<String>,
    pub cpu_ghz: f64,
    pub realized_delay_ms: f64,
    pub allocated_at_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ServerEntry {
    pub id: String,
    pub cpu_alloc_ghz: f64,
    pub cpu_max_ghz: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LinkEntry {
    pub a: String,
    pub b: String,
    pub bw_alloc_mbps: f64,
    pub bw_max_mbps: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocator::{solve, SolverOptions};
    use crate::slice::{generate_slice, Plane, SliceGenParams, VirtualLink, Vnf};
    use crate::topology::{generate_topology, TopologyDefaults};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_graph() -> NetworkGraph {
        generate_topology(8, &[2, 2], &TopologyDefaults::default()).unwrap()
    }

    fn one_vnf(id: u64, cpu: f64) -> SliceRequest {
        SliceRequest {
            id,
            vnfs: vec![Vnf {
                id: 0,
                plane: Plane::Control,
                cpu_demand: cpu,
                proc_delay: 0.3,
            }],
            vlinks: Vec::new(),
            delay_budget: 15.0,
            k_rel_control: 1,
            k_rel_data: 1,
            kind: SliceKind::Legitimate,
        }
    }

    fn allocate(state: &mut NetworkState, slice: &SliceRequest) -> bool {
        let inst = state.build_instance(slice).unwrap();
        let sol = solve(&inst, &SolverOptions::default()).unwrap();
        if !sol.is_optimal() {
            return false;
        }
        state.apply(&inst.slice, &sol).unwrap();
        true
    }

    #[test]
    fn single_vnf_updates_sigma_and_acu() {
        let mut st = NetworkState::new(small_graph());
        assert!(allocate(&mut st, &one_vnf(1, 1.0)));
        let host = st.record(1).unwrap().placement[0];
        assert_eq!(st.graph().node(host).cpu_alloc, 1.0);
        assert_eq!(st.acu(), 1.0 / st.graph().total_cpu_capacity());
        st.check_ledger().unwrap();
    }

    #[test]
    fn apply_then_deallocate_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut st = NetworkState::new(small_graph());
        let before = st.clone();
        let s = generate_slice(&mut rng, &SliceGenParams::default(), 7).unwrap();
        assert!(allocate(&mut st, &s));
        assert_ne!(st, before);
        st.deallocate(7).unwrap();
        assert_eq!(st, before);
    }

    #[test]
    fn footprints_add_and_commute() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = SliceGenParams::default();
        let a = generate_slice(&mut rng, &params, 1).unwrap();
        let b = generate_slice(&mut rng, &params, 2).unwrap();

        let mut st = NetworkState::new(small_graph());
        assert!(allocate(&mut st, &a));
        let sol_b = {
            let inst = st.build_instance(&b).unwrap();
            (inst.slice.clone(), solve(&inst, &SolverOptions::default()).unwrap())
        };
        st.apply(&sol_b.0, &sol_b.1).unwrap();
        st.deallocate(1).unwrap();

        let mut only_b = NetworkState::new(small_graph());
        only_b.apply(&sol_b.0, &sol_b.1).unwrap();
        only_b.check_ledger().unwrap();
        assert_eq!(st.graph(), only_b.graph());
        st.check_ledger().unwrap();
    }

    #[test]
    fn unknown_and_protected() {
        let mut st = NetworkState::new(small_graph());
        assert!(matches!(st.deallocate(9), Err(Error::UnknownSlice(9))));
        assert!(allocate(&mut st, &one_vnf(1, 1.0)));
        st.protect(1).unwrap();
        assert!(matches!(st.deallocate(1), Err(Error::Protected(1))));
        assert!(st.is_active(1));
        assert!(matches!(st.co_resident(1, 4), Err(Error::UnknownSlice(4))));
    }

    #[test]
    fn co_residency_is_set_intersection() {
        let mut st = NetworkState::new(small_graph());
        assert!(allocate(&mut st, &one_vnf(1, 1.0)));
        assert!(st.co_resident(1, 1).unwrap());
        // Same least-loaded server is no longer least loaded.
        assert!(allocate(&mut st, &one_vnf(2, 1.0)));
        assert!(!st.co_resident(1, 2).unwrap());
        assert!(!st.co_resident(2, 1).unwrap());
    }

    #[test]
    fn stale_solution_is_rejected_atomically() {
        let mut st = NetworkState::new(small_graph());
        let big = one_vnf(1, 20.0);
        let inst = st.build_instance(&big).unwrap();
        let sol = solve(&inst, &SolverOptions::default()).unwrap();
        // Fill the same host before applying.
        let other = SliceRequest { id: 2, ..big.clone() };
        st.apply(&other, &sol).unwrap();
        let before = st.clone();
        let err = st.apply(&big, &sol).unwrap_err();
        assert!(matches!(err, Error::StaleSnapshot { slice: 1, .. }));
        assert_eq!(st, before);
    }

    #[test]
    fn flows_charge_both_orientations_of_a_link() {
        let mut st = NetworkState::new(small_graph());
        let mut s = one_vnf(1, 1.0);
        s.vnfs.push(Vnf { id: 1, ..s.vnfs[0].clone() });
        s.vlinks = vec![
            VirtualLink { src: 0, dst: 1, bw_demand: 50.0 },
            VirtualLink { src: 1, dst: 0, bw_demand: 50.0 },
        ];
        assert!(allocate(&mut st, &s));
        let used: Vec<f64> = st
            .graph()
            .links()
            .iter()
            .map(|l| l.bw_alloc)
            .filter(|&b| b > 0.0)
            .collect();
        assert!(!used.is_empty());
        assert!(used.iter().all(|&b| b == 100.0));
        st.check_ledger().unwrap();
    }

    #[test]
    fn snapshot_lists_records() {
        let mut st = NetworkState::new(small_graph());
        assert!(allocate(&mut st, &one_vnf(5, 2.5)));
        let json = st.snapshot_json();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["slices"][0]["id"], 5);
        assert_eq!(v["slices"][0]["cpu_ghz"], 2.5);
        assert_eq!(v["servers"].as_array().unwrap().len(), 8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn random_interleavings_keep_ledger_exact(seed in any::<u64>(), ops in prop::collection::vec(any::<bool>(), 1..30)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = SliceGenParams { vnf_count: 4, ..SliceGenParams::default() };
            let initial = NetworkState::new(small_graph());
            let mut st = initial.clone();
            let mut next = 0u64;
            for add in ops {
                let ids: Vec<u64> = st.active().keys().copied().collect();
                if add || ids.is_empty() {
                    let s = generate_slice(&mut rng, &params, next).unwrap();
                    next += 1;
                    allocate(&mut st, &s);
                } else {
                    let pick = ids[(seed as usize + next as usize) % ids.len()];
                    st.deallocate(pick).unwrap();
                }
                prop_assert!(st.check_ledger().is_ok());
            }
            let ids: Vec<u64> = st.active().keys().copied().collect();
            for id in ids {
                st.deallocate(id).unwrap();
            }
            prop_assert_eq!(st.graph(), initial.graph());
        }
    }
}
