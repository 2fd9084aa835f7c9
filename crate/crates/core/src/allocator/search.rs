//! Depth-first branch-and-bound over VNF placements.
//!
//! VNFs are placed in preorder of a spanning tree of the slice graph. Bounds
//! come from a dynamic program over that tree: each VNF pays a per-server
//! cost, each tree edge the shortest delay between hosts, and only
//! parent/child pairs are checked for co-location. Three tables are
//! tabulated once per solve:
//!
//! * plain: server load and link delay, the objective itself;
//! * priced: a Lagrangian relaxation of the per-server isolation rows and
//!   the delay row, with multipliers fitted at the root by subgradient
//!   ascent;
//! * delay: processing and link delay only, used to discard partial
//!   placements that cannot meet the delay budget.
//!
//! A slot bound (cheapest free isolation slots per plane) and a sibling
//! dominance rule on leaf servers prune further. Identical sibling servers
//! are opened in index order, and off-tree virtual links whose ends can
//! never share a server are charged their shortest possible delay.

use std::collections::BTreeMap;

use super::paths::route_flows;
use super::{
    all_pairs_server_delays, ArcFlow, Budget, InfeasibleReason, MilpInstance, Solution, SolveStats,
    SolveStatus, SolverOptions, FEASIBILITY_TOLERANCE,
};
use crate::error::Result;
use crate::slice::Plane;

const UNASSIGNED: usize = usize::MAX;
const PRUNE_EPS: f64 = 1e-9;
const SUBGRADIENT_ROUNDS: usize = 40;

const PLAIN: usize = 0;
const PRICED: usize = 1;
const DELAY: usize = 2;
const TABLES: usize = 3;

fn plane_index(p: Plane) -> usize {
    match p {
        Plane::Control => 0,
        Plane::Data => 1,
    }
}

#[derive(Clone, Default)]
struct Table {
    // node_cost[plane][k]: cost of putting a VNF of that plane on server k
    node_cost: [Vec<f64>; 2],
    link_weight: f64,
    // isolation prices and the servers carrying a positive one
    mu: [Vec<f64>; 2],
    priced: [Vec<usize>; 2],
    // delay multiplier
    lambda: f64,
    // subtree[v][k]: relaxed cost of v's subtree with v on server k
    subtree: Vec<Vec<f64>>,
    // hang[c][k]: relaxed cost of c's subtree given its parent on server k
    hang: Vec<Vec<f64>>,
}

struct Problem<'a> {
    inst: &'a MilpInstance,
    n: usize,
    s: usize,
    delays: Vec<Vec<f64>>,
    order: Vec<usize>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    // every slice neighbour of v, either direction
    neighbors: Vec<Vec<usize>>,
    tables: [Table; TABLES],
    // servers sorted by load, for the slot bound
    by_load: Vec<usize>,
    demand: Vec<f64>,
    plane: Vec<Plane>,
    k_rel: [u32; 2],
    // pending[d][p]: VNFs of plane p at order[d..]
    pending: Vec<[u32; 2]>,
    vnf_delay: f64,
    budget: f64,
    // dominators[k]: sibling leaf servers at least as good as k
    dominators: Vec<Vec<usize>>,
    // twins[k]: lower-indexed sibling leaf servers identical to k
    twins: Vec<Vec<usize>>,
    usable: Vec<bool>,
    // virtual links outside the spanning tree whose ends never share a server
    apart: Vec<(usize, usize)>,
    // nearest[k]: shortest delay from k to any other server
    nearest: Vec<f64>,
    nearest_any: f64,
}

impl<'a> Problem<'a> {
    fn new(inst: &'a MilpInstance) -> Self {
        let n = inst.vnf_count();
        let s = inst.server_count();
        let delays = all_pairs_server_delays(inst);

        let mut adj = vec![Vec::new(); n];
        for l in &inst.slice.vlinks {
            adj[l.src].push(l.dst);
            adj[l.dst].push(l.src);
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }

        // Spanning tree by DFS preorder from VNF 0.
        let mut parent: Vec<Option<usize>> = vec![None; n];
        let mut children = vec![Vec::new(); n];
        let mut order = Vec::with_capacity(n);
        let mut seen = vec![false; n];
        let mut stack: Vec<(usize, Option<usize>)> = vec![(0, None)];
        while let Some((v, p)) = stack.pop() {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            parent[v] = p;
            if let Some(p) = p {
                children[p].push(v);
            }
            order.push(v);
            for &w in adj[v].iter().rev() {
                if !seen[w] {
                    stack.push((w, Some(v)));
                }
            }
        }
        debug_assert_eq!(order.len(), n, "slice graph is connected");

        let demand: Vec<f64> = inst.slice.vnfs.iter().map(|v| v.cpu_demand).collect();
        let plane: Vec<Plane> = inst.slice.vnfs.iter().map(|v| v.plane).collect();
        let mut by_load: Vec<usize> = (0..s).collect();
        by_load.sort_by(|&a, &b| inst.servers[a].load.total_cmp(&inst.servers[b].load).then(a.cmp(&b)));
        let mut pending = vec![[0u32; 2]; n + 1];
        for d in (0..n).rev() {
            pending[d] = pending[d + 1];
            pending[d][plane_index(plane[order[d]])] += 1;
        }

        let mut p = Problem {
            inst,
            n,
            s,
            delays,
            order,
            parent,
            children,
            neighbors: adj,
            tables: Default::default(),
            by_load,
            demand,
            plane,
            k_rel: [inst.k_rel(Plane::Control), inst.k_rel(Plane::Data)],
            pending,
            vnf_delay: inst.vnf_delay_sum(),
            budget: inst.slice.delay_budget,
            dominators: Vec::new(),
            twins: Vec::new(),
            usable: Vec::new(),
            apart: Vec::new(),
            nearest: Vec::new(),
            nearest_any: 0.0,
        };
        p.find_apart_links();
        p.find_dominance();

        let loads: Vec<f64> = inst.servers.iter().map(|sv| sv.load).collect();
        let procs: Vec<f64> = inst.servers.iter().map(|sv| sv.proc_delay).collect();
        let zeros = vec![0.0; s];
        for t in [PLAIN, PRICED] {
            p.tables[t].node_cost = [loads.clone(), loads.clone()];
            p.tables[t].link_weight = 1.0;
            p.tables[t].mu = [zeros.clone(), zeros.clone()];
        }
        p.tables[DELAY].node_cost = [procs.clone(), procs];
        p.tables[DELAY].link_weight = 1.0;
        p.tables[DELAY].mu = [zeros.clone(), zeros];
        p.tabulate(PLAIN);
        p.tabulate(DELAY);
        p.tables[PRICED].subtree = p.tables[PLAIN].subtree.clone();
        p.tables[PRICED].hang = p.tables[PLAIN].hang.clone();
        if p.root_delay_floor() <= p.budget + FEASIBILITY_TOLERANCE {
            p.fit_multipliers();
        }
        p
    }

    fn fits(&self, v: usize, k: usize) -> bool {
        self.usable[k] && self.demand[v] <= self.inst.servers[k].residual + FEASIBILITY_TOLERANCE
    }

    /// Whether tree neighbours `p` and `c` may share server `k`.
    fn can_share(&self, p: usize, c: usize, k: usize) -> bool {
        let same_plane = self.plane[p] == self.plane[c];
        if same_plane && self.inst.k_rel(self.plane[p]) < 2 {
            return false;
        }
        self.demand[p] + self.demand[c] <= self.inst.servers[k].residual + FEASIBILITY_TOLERANCE
    }

    /// Leaf servers hanging off the same node are interchangeable up to
    /// their own attributes. If `a` is no worse than `b` in load, residual
    /// CPU, processing delay, uplink delay and uplink residual, moving
    /// everything from `b` to an unused `a` never hurts, so some optimum
    /// uses `b` only if it also uses `a`. Exact ties go to the lower index.
    fn find_dominance(&mut self) {
        let inst = self.inst;
        let mut degree = vec![0usize; inst.node_count()];
        let mut uplink = vec![None; inst.node_count()];
        for (li, l) in inst.links.iter().enumerate() {
            degree[l.a] += 1;
            degree[l.b] += 1;
            uplink[l.a] = Some((li, l.b));
            uplink[l.b] = Some((li, l.a));
        }
        let leaf = |k: usize| {
            let node = inst.servers[k].node;
            if degree[node] == 1 {
                uplink[node]
            } else {
                None
            }
        };
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for k in 0..self.s {
            if let Some((_, w)) = leaf(k) {
                groups.entry(w).or_default().push(k);
            }
        }
        self.dominators = vec![Vec::new(); self.s];
        self.twins = vec![Vec::new(); self.s];
        for members in groups.values() {
            for &b in members {
                let (lb, _) = leaf(b).expect("leaf");
                let (sb, linkb) = (&inst.servers[b], &inst.links[lb]);
                for &a in members {
                    if a == b {
                        continue;
                    }
                    let (la, _) = leaf(a).expect("leaf");
                    let (sa, linka) = (&inst.servers[a], &inst.links[la]);
                    let no_worse = sa.load <= sb.load
                        && sa.residual >= sb.residual
                        && sa.proc_delay <= sb.proc_delay
                        && linka.delay <= linkb.delay
                        && linka.residual >= linkb.residual;
                    let equal = sa.load == sb.load
                        && sa.residual == sb.residual
                        && sa.proc_delay == sb.proc_delay
                        && linka.delay == linkb.delay
                        && linka.residual == linkb.residual;
                    if no_worse && (!equal || a < b) {
                        self.dominators[b].push(a);
                    }
                    if equal && a < b {
                        self.twins[b].push(a);
                    }
                }
            }
        }
        // A slice opens at most n servers.
        self.usable = self.dominators.iter().map(|d| d.len() < self.n).collect();
    }

    /// Off-tree virtual links joining two VNFs of one plane at K_rel = 1
    /// cost at least the delay to the nearest other server, which the tree
    /// tables do not count.
    fn find_apart_links(&mut self) {
        let tree_edge = |a: usize, b: usize| self.parent[a] == Some(b) || self.parent[b] == Some(a);
        let mut apart: Vec<(usize, usize)> = self
            .inst
            .slice
            .vlinks
            .iter()
            .map(|l| (l.src.min(l.dst), l.src.max(l.dst)))
            .filter(|&(a, b)| {
                a != b && !tree_edge(a, b) && self.plane[a] == self.plane[b] && self.inst.k_rel(self.plane[a]) < 2
            })
            .collect();
        apart.sort_unstable();
        apart.dedup();
        self.apart = apart;
        self.nearest = (0..self.s)
            .map(|k| {
                (0..self.s)
                    .filter(|&k2| k2 != k)
                    .map(|k2| self.delays[k][k2])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        self.nearest_any = self.nearest.iter().copied().fold(f64::INFINITY, f64::min);
        if !self.nearest_any.is_finite() {
            self.nearest_any = 0.0;
        }
    }

    /// Lower bound on the delay of apart links not yet fully placed.
    fn apart_floor(&self, assign: &[usize]) -> f64 {
        let mut total = 0.0;
        for &(a, b) in &self.apart {
            total += match (assign[a], assign[b]) {
                (UNASSIGNED, UNASSIGNED) => self.nearest_any,
                (k, UNASSIGNED) | (UNASSIGNED, k) => self.nearest[k],
                _ => 0.0,
            };
        }
        total
    }

    fn tabulate(&mut self, t: usize) {
        let mut subtree = vec![vec![f64::INFINITY; self.s]; self.n];
        let mut hang = vec![vec![f64::INFINITY; self.s]; self.n];
        let table = &self.tables[t];
        let w = table.link_weight;
        for idx in (0..self.n).rev() {
            let v = self.order[idx];
            let node_cost = &table.node_cost[plane_index(self.plane[v])];
            for k in 0..self.s {
                if !self.fits(v, k) {
                    continue;
                }
                let mut cost = node_cost[k];
                for &c in &self.children[v] {
                    cost += hang[c][k];
                }
                subtree[v][k] = cost;
            }
            if let Some(p) = self.parent[v] {
                for k in 0..self.s {
                    let row = &self.delays[k];
                    let mut best = f64::INFINITY;
                    for (k2, &sub) in subtree[v].iter().enumerate() {
                        let c = if k2 == k {
                            if !self.can_share(p, v, k) {
                                continue;
                            }
                            sub
                        } else {
                            w * row[k2] + sub
                        };
                        if c < best {
                            best = c;
                        }
                    }
                    hang[v][k] = best;
                }
            }
        }
        self.tables[t].subtree = subtree;
        self.tables[t].hang = hang;
    }

    /// `mu` times the isolation slots still usable at `depth`.
    fn penalty(&self, t: usize, depth: usize, used: [&[u32]; 2]) -> f64 {
        let table = &self.tables[t];
        let mut total = 0.0;
        for p in 0..2 {
            let pending = self.pending[depth][p];
            for &k in &table.priced[p] {
                let free = self.k_rel[p].saturating_sub(used[p][k]).min(pending);
                total += table.mu[p][k] * f64::from(free);
            }
        }
        total
    }

    fn root_min(&self, t: usize) -> f64 {
        let root = self.order[0];
        self.tables[t].subtree[root].iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn root_bound(&self, t: usize) -> f64 {
        let zeros = vec![0u32; self.s];
        let table = &self.tables[t];
        let apart = table.link_weight * self.nearest_any * self.apart.len() as f64;
        self.root_min(t) + apart - self.penalty(t, 0, [&zeros, &zeros]) + table.lambda * (self.vnf_delay - self.budget)
    }

    fn root_delay_floor(&self) -> f64 {
        self.vnf_delay + self.root_min(DELAY) + self.nearest_any * self.apart.len() as f64
    }

    /// Server per VNF of the relaxed optimum of table `t`.
    fn relaxed_argmin(&self, t: usize) -> Option<Vec<usize>> {
        let table = &self.tables[t];
        let w = table.link_weight;
        let mut assign = vec![UNASSIGNED; self.n];
        for &v in &self.order {
            let pick = match self.parent[v] {
                None => (0..self.s).min_by(|&a, &b| table.subtree[v][a].total_cmp(&table.subtree[v][b])),
                Some(u) => {
                    let pk = assign[u];
                    let key = |k: usize| {
                        if k == pk {
                            if self.can_share(u, v, k) {
                                table.subtree[v][k]
                            } else {
                                f64::INFINITY
                            }
                        } else {
                            w * self.delays[pk][k] + table.subtree[v][k]
                        }
                    };
                    (0..self.s).min_by(|&a, &b| key(a).total_cmp(&key(b)))
                }
            }?;
            if !table.subtree[v][pick].is_finite() {
                return None;
            }
            assign[v] = pick;
        }
        Some(assign)
    }

    /// Cost of a greedy placement that respects capacity and isolation, used
    /// only to size subgradient steps.
    fn greedy_estimate(&self) -> Option<f64> {
        let mut assign = vec![UNASSIGNED; self.n];
        let mut used = vec![[0u32; 2]; self.s];
        let mut cpu = vec![0.0; self.s];
        let mut total = 0.0;
        for &v in &self.order {
            let p = plane_index(self.plane[v]);
            let mut best: Option<(f64, usize)> = None;
            for k in 0..self.s {
                if used[k][p] >= self.k_rel[p]
                    || self.demand[v] > self.inst.servers[k].residual - cpu[k] + FEASIBILITY_TOLERANCE
                {
                    continue;
                }
                let mut c = self.inst.servers[k].load;
                for &w in &self.neighbors[v] {
                    if assign[w] != UNASSIGNED && assign[w] != k {
                        c += self.delays[assign[w]][k];
                    }
                }
                if best.is_none_or(|b| c < b.0) {
                    best = Some((c, k));
                }
            }
            let (c, k) = best?;
            assign[v] = k;
            used[k][p] += 1;
            cpu[k] += self.demand[v];
            total += c;
        }
        total.is_finite().then_some(total)
    }

    fn set_priced(&mut self, mu: &[Vec<f64>; 2], lambda: f64) {
        let table = &mut self.tables[PRICED];
        for p in 0..2 {
            table.priced[p] = (0..self.s).filter(|&k| mu[p][k] > 0.0).collect();
            for k in 0..self.s {
                let sv = &self.inst.servers[k];
                table.node_cost[p][k] = sv.load + mu[p][k] + lambda * sv.proc_delay;
            }
        }
        table.mu = mu.clone();
        table.lambda = lambda;
        table.link_weight = 1.0 + lambda;
    }

    /// Projected subgradient ascent on the root bound of the priced table.
    fn fit_multipliers(&mut self) {
        let caps = [
            self.k_rel[0].min(self.pending[0][0]),
            self.k_rel[1].min(self.pending[0][1]),
        ];
        let base = self.root_bound(PLAIN);
        if !base.is_finite() {
            return;
        }
        let mut target = self.greedy_estimate().unwrap_or(f64::INFINITY);
        if !target.is_finite() || target <= base {
            target = base + 0.05 * base.abs() + 1.0;
        }

        let mut mu = [vec![0.0; self.s], vec![0.0; self.s]];
        let mut lambda = 0.0;
        let mut best = base;
        let mut best_mult: Option<([Vec<f64>; 2], f64)> = None;
        let mut bound = base;
        let mut scale = 1.0;
        let mut stall = 0;
        let mut t = PLAIN;
        for _ in 0..SUBGRADIENT_ROUNDS {
            let Some(assign) = self.relaxed_argmin(t) else {
                break;
            };
            let mut count = vec![[0u32; 2]; self.s];
            let mut delay = self.vnf_delay;
            for (v, &k) in assign.iter().enumerate() {
                count[k][plane_index(self.plane[v])] += 1;
                delay += self.inst.servers[k].proc_delay;
            }
            for l in &self.inst.slice.vlinks {
                let (a, b) = (assign[l.src], assign[l.dst]);
                if a != b {
                    delay += self.delays[a][b];
                }
            }

            let mut grad = vec![[0.0f64; 2]; self.s];
            let mut norm = 0.0;
            for k in 0..self.s {
                for p in 0..2 {
                    let g = f64::from(count[k][p]) - f64::from(caps[p]);
                    if g > 0.0 || mu[p][k] > 0.0 {
                        grad[k][p] = g;
                        norm += g * g;
                    }
                }
            }
            let g_lambda = delay - self.budget;
            let g_lambda = if g_lambda > 0.0 || lambda > 0.0 { g_lambda } else { 0.0 };
            norm += g_lambda * g_lambda;
            if norm == 0.0 {
                break;
            }

            let step = scale * (target - bound).max(1e-3) / norm;
            for k in 0..self.s {
                for p in 0..2 {
                    mu[p][k] = (mu[p][k] + step * grad[k][p]).max(0.0);
                }
            }
            lambda = (lambda + step * g_lambda).max(0.0);
            self.set_priced(&mu, lambda);
            self.tabulate(PRICED);
            t = PRICED;
            bound = self.root_bound(PRICED);
            if bound > best + PRUNE_EPS {
                best = bound;
                best_mult = Some((mu.clone(), lambda));
                stall = 0;
            } else {
                stall += 1;
                if stall >= 3 {
                    scale *= 0.5;
                    stall = 0;
                }
            }
        }
        let (mu, lambda) = best_mult.unwrap_or_else(|| ([vec![0.0; self.s], vec![0.0; self.s]], 0.0));
        self.set_priced(&mu, lambda);
        self.tabulate(PRICED);
    }
}

struct Search<'a> {
    p: &'a Problem<'a>,
    assign: Vec<usize>,
    used_cpu: Vec<f64>,
    hosted: Vec<u32>,
    used_control: Vec<u32>,
    used_data: Vec<u32>,
    best_cost: f64,
    best: Option<(Vec<usize>, Vec<Vec<ArcFlow>>, f64, f64)>,
    budget: Budget,
    demand_total: f64,
}

impl Search<'_> {
    fn used(&self, plane: Plane, k: usize) -> u32 {
        match plane {
            Plane::Control => self.used_control[k],
            Plane::Data => self.used_data[k],
        }
    }

    fn used_mut(&mut self, plane: Plane, k: usize) -> &mut u32 {
        match plane {
            Plane::Control => &mut self.used_control[k],
            Plane::Data => &mut self.used_data[k],
        }
    }

    /// Cheapest free isolation slots for the VNFs at `order[depth..]`.
    fn slot_bound(&self, depth: usize) -> f64 {
        let p = self.p;
        let mut total = 0.0;
        for plane in [Plane::Control, Plane::Data] {
            let mut need = p.pending[depth][plane_index(plane)];
            if need == 0 {
                continue;
            }
            let smallest = p.order[depth..]
                .iter()
                .filter(|&&v| p.plane[v] == plane)
                .map(|&v| p.demand[v])
                .fold(f64::INFINITY, f64::min);
            let k_rel = p.inst.k_rel(plane);
            for &k in &p.by_load {
                if !p.usable[k] {
                    continue;
                }
                let free_cpu = p.inst.servers[k].residual - self.used_cpu[k];
                if smallest > free_cpu + FEASIBILITY_TOLERANCE {
                    continue;
                }
                let slots = k_rel.saturating_sub(self.used(plane, k)).min(need);
                total += f64::from(slots) * p.inst.servers[k].load;
                need -= slots;
                if need == 0 {
                    break;
                }
            }
            if need > 0 {
                return f64::INFINITY;
            }
        }
        total
    }

    /// `cost` covers placed VNFs (loads) and virtual links between placed
    /// VNFs (shortest delays); `frontier[t]` is table t's bound of every
    /// unplaced subtree; `delay` is link plus host delay committed so far.
    fn dive(&mut self, depth: usize, cost: f64, frontier: [f64; TABLES], delay: f64) -> Result<()> {
        self.budget.tick()?;
        let p = self.p;
        if depth == p.n {
            return self.leaf();
        }
        let v = p.order[depth];
        let parent_server = p.parent[v].map(|u| self.assign[u]);
        let plain = &p.tables[PLAIN];

        let mut candidates: Vec<(f64, usize)> = (0..p.s)
            .filter_map(|k| {
                let sub = plain.subtree[v][k];
                if !sub.is_finite() {
                    return None;
                }
                let link = match (p.parent[v], parent_server) {
                    (Some(u), Some(pk)) if pk == k => {
                        if p.can_share(u, v, k) {
                            0.0
                        } else {
                            return None;
                        }
                    }
                    (Some(_), Some(pk)) => p.delays[pk][k],
                    _ => 0.0,
                };
                Some((link + sub, k))
            })
            .collect();
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut rest = frontier;
        if let Some(pk) = parent_server {
            for (t, r) in rest.iter_mut().enumerate() {
                *r -= p.tables[t].hang[v][pk];
            }
        }
        let plane = p.plane[v];
        let k_rel = p.inst.k_rel(plane);
        let remaining = p.n - depth - 1;
        let priced = &p.tables[PRICED];

        for (key, k) in candidates {
            // `key` dominates the plain bound of this child; later keys are larger.
            if cost + rest[PLAIN] + key >= self.best_cost - PRUNE_EPS {
                break;
            }
            if p.demand[v] > p.inst.servers[k].residual - self.used_cpu[k] + FEASIBILITY_TOLERANCE {
                continue;
            }
            if self.used(plane, k) >= k_rel {
                continue;
            }
            if self.hosted[k] == 0 {
                if p.twins[k].iter().any(|&a| self.hosted[a] == 0) {
                    continue;
                }
                let closed = p.dominators[k].iter().filter(|&&a| self.hosted[a] == 0).count();
                if closed > remaining {
                    continue;
                }
            }

            // Exact link delays to every already placed neighbour.
            let mut links = 0.0;
            for &w in &p.neighbors[v] {
                let wk = self.assign[w];
                if wk != UNASSIGNED && wk != k {
                    links += p.delays[wk][k];
                }
            }
            if !links.is_finite() {
                continue;
            }

            let mut child_frontier = rest;
            for (t, f) in child_frontier.iter_mut().enumerate() {
                for &c in &p.children[v] {
                    *f += p.tables[t].hang[c][k];
                }
            }
            self.assign[v] = k;
            let apart = if p.apart.is_empty() { 0.0 } else { p.apart_floor(&self.assign) };
            self.assign[v] = UNASSIGNED;
            let child_cost = cost + p.inst.servers[k].load + links;
            if child_cost + child_frontier[PLAIN] + apart >= self.best_cost - PRUNE_EPS {
                continue;
            }
            let child_delay = delay + links + p.inst.servers[k].proc_delay;
            if p.vnf_delay + child_delay + child_frontier[DELAY] + apart > p.budget + FEASIBILITY_TOLERANCE {
                continue;
            }

            self.assign[v] = k;
            self.used_cpu[k] += p.demand[v];
            self.hosted[k] += 1;
            *self.used_mut(plane, k) += 1;

            let lagrangian = child_cost + child_frontier[PRICED] + priced.link_weight * apart
                - p.penalty(PRICED, depth + 1, [&self.used_control, &self.used_data])
                + priced.lambda * (p.vnf_delay + child_delay - p.budget);
            let proceed = lagrangian < self.best_cost - PRUNE_EPS
                && child_cost + self.slot_bound(depth + 1) < self.best_cost - PRUNE_EPS;
            if proceed {
                self.dive(depth + 1, child_cost, child_frontier, child_delay)?;
            }

            *self.used_mut(plane, k) -= 1;
            self.hosted[k] -= 1;
            self.used_cpu[k] -= p.demand[v];
            self.assign[v] = UNASSIGNED;
        }
        Ok(())
    }

    fn leaf(&mut self) -> Result<()> {
        let p = self.p;
        let Some((flows, flow_cost)) = route_flows(p.inst, &self.assign) else {
            return Ok(());
        };
        let delay = p.inst.delay_of(&self.assign, &flows);
        if delay > p.budget + FEASIBILITY_TOLERANCE {
            return Ok(());
        }
        let loads: f64 = self.assign.iter().map(|&k| p.inst.servers[k].load).sum();
        let objective = self.demand_total + loads + flow_cost;
        let comparable = loads + flow_cost;
        if comparable < self.best_cost - PRUNE_EPS {
            self.best_cost = comparable;
            self.best = Some((self.assign.clone(), flows, objective, delay));
        }
        Ok(())
    }
}

pub(super) fn solve(inst: &MilpInstance, opts: &SolverOptions) -> Result<Solution> {
    let problem = Problem::new(inst);
    let mut search = Search {
        p: &problem,
        assign: vec![UNASSIGNED; problem.n],
        used_cpu: vec![0.0; problem.s],
        hosted: vec![0; problem.s],
        used_control: vec![0; problem.s],
        used_data: vec![0; problem.s],
        best_cost: f64::INFINITY,
        best: None,
        budget: Budget::new(opts),
        demand_total: inst.total_cpu_demand(),
    };
    let feasible_root = problem.root_bound(PLAIN).is_finite()
        && problem.root_delay_floor() <= problem.budget + FEASIBILITY_TOLERANCE;
    if feasible_root {
        search.dive(0, 0.0, [0.0; TABLES], 0.0)?;
    }
    let stats = SolveStats {
        nodes: search.budget.nodes,
        lp_solves: 0,
    };
    Ok(match search.best {
        Some((placement, flows, objective_value, realized_delay)) => Solution {
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
