//! Physical core network: servers, switches and the links between them.
//!
//! A [`NetworkGraph`] is undirected. Each link is also addressed as two
//! directed arcs: arc `2 * l` runs `a -> b` and arc `2 * l + 1` runs `b -> a`
//! for link index `l`. Flow variables live on arcs, capacities on links.

use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::digest;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Server,
    Switch,
}

/// A server or switch. CPU figures are in GHz, delays in ms.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalNode {
    pub id: String,
    pub kind: NodeKind,
    pub cpu_max: f64,
    pub cpu_alloc: f64,
    pub proc_delay: f64,
}

impl PhysicalNode {
    pub fn is_server(&self) -> bool {
        self.kind == NodeKind::Server
    }
}

/// An undirected link between node indices `a` and `b`. Bandwidth in Mbps,
/// delays in ms.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalLink {
    pub a: usize,
    pub b: usize,
    pub bw_max: f64,
    pub bw_alloc: f64,
    pub delay_init: f64,
    pub delay_slope: f64,
}

impl PhysicalLink {
    pub fn utilization(&self) -> f64 {
        self.bw_alloc / self.bw_max
    }

    pub fn residual(&self) -> f64 {
        self.bw_max - self.bw_alloc
    }
}

/// Utilization-dependent link delay: `bw_alloc / bw_max * delay_slope + delay_init`.
pub fn link_delay(link: &PhysicalLink) -> f64 {
    link.bw_alloc / link.bw_max * link.delay_slope + link.delay_init
}

/// Validated physical topology.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    nodes: Vec<PhysicalNode>,
    links: Vec<PhysicalLink>,
    index: HashMap<String, usize>,
    // node -> [(neighbor, link index)]
    adjacency: Vec<Vec<(usize, usize)>>,
    servers: Vec<usize>,
}

impl NetworkGraph {
    /// Builds a graph and checks every invariant: unique ids, no self-loops
    /// or parallel links, capacities within bounds, and connectivity.
    pub fn new(nodes: Vec<PhysicalNode>, links: Vec<PhysicalLink>) -> Result<Self> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            if index.insert(node.id.clone(), i).is_some() {
                return Err(Error::DuplicateNode(node.id.clone()));
            }
            validate_node(node)?;
        }

        let mut adjacency = vec![Vec::new(); nodes.len()];
        let mut seen = HashSet::with_capacity(links.len());
        for (l, link) in links.iter().enumerate() {
            for end in [link.a, link.b] {
                if end >= nodes.len() {
                    return Err(Error::UnknownNode(format!("#{end}")));
                }
            }
            if link.a == link.b {
                return Err(Error::SelfLoop(nodes[link.a].id.clone()));
            }
            let key = (link.a.min(link.b), link.a.max(link.b));
            if !seen.insert(key) {
                return Err(Error::DuplicateLink(
                    nodes[key.0].id.clone(),
                    nodes[key.1].id.clone(),
                ));
            }
            validate_link(link, &nodes)?;
            adjacency[link.a].push((link.b, l));
            adjacency[link.b].push((link.a, l));
        }

        let servers: Vec<usize> = (0..nodes.len()).filter(|&i| nodes[i].is_server()).collect();
        if servers.is_empty() {
            return Err(Error::NoServers);
        }

        let graph = NetworkGraph {
            nodes,
            links,
            index,
            adjacency,
            servers,
        };
        graph.check_connected()?;
        Ok(graph)
    }

    fn check_connected(&self) -> Result<()> {
        let mut visited = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([0usize]);
        visited[0] = true;
        while let Some(v) = queue.pop_front() {
            for &(w, _) in &self.adjacency[v] {
                if !visited[w] {
                    visited[w] = true;
                    queue.push_back(w);
                }
            }
        }
        match visited.iter().position(|v| !v) {
            Some(i) => Err(Error::Disconnected(self.nodes[i].id.clone())),
            None => Ok(()),
        }
    }

    pub fn nodes(&self) -> &[PhysicalNode] {
        &self.nodes
    }

    pub fn links(&self) -> &[PhysicalLink] {
        &self.links
    }

    pub fn node(&self, idx: usize) -> &PhysicalNode {
        &self.nodes[idx]
    }

    pub fn link(&self, idx: usize) -> &PhysicalLink {
        &self.links[idx]
    }

    /// Indices of server nodes, ascending.
    pub fn servers(&self) -> &[usize] {
        &self.servers
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// `(neighbor, link index)` pairs incident to `node`.
    pub fn neighbors(&self, node: usize) -> &[(usize, usize)] {
        &self.adjacency[node]
    }

    pub fn arc_count(&self) -> usize {
        2 * self.links.len()
    }

    /// `(from, to)` node indices of a directed arc.
    pub fn arc_endpoints(&self, arc: usize) -> (usize, usize) {
        let link = &self.links[arc / 2];
        if arc % 2 == 0 {
            (link.a, link.b)
        } else {
            (link.b, link.a)
        }
    }

    pub fn total_cpu_capacity(&self) -> f64 {
        self.servers.iter().map(|&k| self.nodes[k].cpu_max).sum()
    }

    pub(crate) fn set_cpu_alloc(&mut self, node: usize, value: f64) {
        self.nodes[node].cpu_alloc = value;
    }

    pub(crate) fn set_bw_alloc(&mut self, link: usize, value: f64) {
        self.links[link].bw_alloc = value;
    }

    /// SHA-256 of the canonical document form.
    pub fn digest(&self) -> String {
        digest::sha256_hex(save_topology(self).as_bytes())
    }
}

fn validate_node(node: &PhysicalNode) -> Result<()> {
    let bad = |detail: String| Error::Capacity {
        element: node.id.clone(),
        detail,
    };
    if !(node.cpu_max.is_finite() && node.cpu_alloc.is_finite() && node.proc_delay.is_finite()) {
        return Err(bad("non-finite value".into()));
    }
    if node.proc_delay < 0.0 {
        return Err(bad(format!("negative processing delay {}", node.proc_delay)));
    }
    match node.kind {
        NodeKind::Switch if node.cpu_max != 0.0 || node.cpu_alloc != 0.0 => {
            Err(bad("switches cannot carry CPU capacity".into()))
        }
        _ if node.cpu_alloc < 0.0 || node.cpu_alloc > node.cpu_max => Err(bad(format!(
            "cpu_alloc {} outside [0, {}]",
            node.cpu_alloc, node.cpu_max
        ))),
        _ => Ok(()),
    }
}

fn validate_link(link: &PhysicalLink, nodes: &[PhysicalNode]) -> Result<()> {
    let bad = |detail: String| Error::Capacity {
        element: format!("{}-{}", nodes[link.a].id, nodes[link.b].id),
        detail,
    };
    let values = [link.bw_max, link.bw_alloc, link.delay_init, link.delay_slope];
    if values.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite value".into()));
    }
    if link.bw_max <= 0.0 {
        return Err(bad(format!("bw_max {} must be positive", link.bw_max)));
    }
    if link.bw_alloc < 0.0 || link.bw_alloc > link.bw_max {
        return Err(bad(format!(
            "bw_alloc {} outside [0, {}]",
            link.bw_alloc, link.bw_max
        )));
    }
    if link.delay_init < 0.0 || link.delay_slope < 0.0 {
        return Err(bad("negative delay parameter".into()));
    }
    Ok(())
}

/// Ratio of allocated to total CPU over server nodes.
pub fn average_cpu_utilization(graph: &NetworkGraph) -> Result<f64> {
    let servers = graph.servers();
    if servers.is_empty() {
        return Err(Error::NoServers);
    }
    let (alloc, cap) = servers.iter().fold((0.0, 0.0), |(a, c), &k| {
        let n = graph.node(k);
        (a + n.cpu_alloc, c + n.cpu_max)
    });
    if cap <= 0.0 {
        return Err(Error::NoServers);
    }
    Ok(alloc / cap)
}

/// Capacities and delays applied by [`generate_topology`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopologyDefaults {
    pub server_cpu_max_ghz: f64,
    pub server_proc_delay_ms: f64,
    pub server_link_bw_mbps: f64,
    pub switch_link_bw_mbps: f64,
    pub delay_init_ms: f64,
    pub delay_slope_ms: f64,
}

impl Default for TopologyDefaults {
    fn default() -> Self {
        TopologyDefaults {
            server_cpu_max_ghz: 25.0,
            server_proc_delay_ms: 0.2,
            server_link_bw_mbps: 10_000.0,
            switch_link_bw_mbps: 40_000.0,
            delay_init_ms: 0.13,
            delay_slope_ms: 3.5,
        }
    }
}

pub const DEFAULT_SERVER_COUNT: usize = 200;
pub const DEFAULT_FANOUTS: [usize; 2] = [5, 4];

/// Builds a tree: one core switch, one switch tier per fanout entry, and
/// `server_count` servers spread evenly across the last (edge) tier.
///
/// With two fanouts the tiers are named `agg*` and `edge*`; servers are
/// `s0 .. s{n-1}`.
pub fn generate_topology(
    server_count: usize,
    fanouts: &[usize],
    defaults: &TopologyDefaults,
) -> Result<NetworkGraph> {
    if server_count == 0 {
        return Err(Error::InvalidArgument("server_count must be positive".into()));
    }
    if fanouts.is_empty() {
        return Err(Error::InvalidArgument("fanouts must not be empty".into()));
    }
    if fanouts.contains(&0) {
        return Err(Error::InvalidArgument("fanouts must be positive".into()));
    }
    let leaves: usize = fanouts.iter().product();
    if server_count % leaves != 0 {
        return Err(Error::InvalidArgument(format!(
            "{server_count} servers cannot be divided evenly across {leaves} edge switches"
        )));
    }
    let per_edge = server_count / leaves;

    let switch = |id: String| PhysicalNode {
        id,
        kind: NodeKind::Switch,
        cpu_max: 0.0,
        cpu_alloc: 0.0,
        proc_delay: 0.0,
    };
    let link = |a: usize, b: usize, bw: f64| PhysicalLink {
        a,
        b,
        bw_max: bw,
        bw_alloc: 0.0,
        delay_init: defaults.delay_init_ms,
        delay_slope: defaults.delay_slope_ms,
    };

    let mut nodes = vec![switch("core".to_string())];
    let mut links = Vec::new();
    let mut parents = vec![0usize];
    let tiers = fanouts.len();
    for (tier, &fanout) in fanouts.iter().enumerate() {
        let mut next = Vec::with_capacity(parents.len() * fanout);
        for &parent in &parents {
            for _ in 0..fanout {
                let i = next.len();
                let id = if tier + 1 == tiers {
                    format!("edge{i}")
                } else if tiers == 2 {
                    format!("agg{i}")
                } else {
                    format!("agg{}_{i}", tier + 1)
                };
                let idx = nodes.len();
                nodes.push(switch(id));
                links.push(link(parent, idx, defaults.switch_link_bw_mbps));
                next.push(idx);
            }
        }
        parents = next;
    }

    let mut s = 0;
    for &edge in &parents {
        for _ in 0..per_edge {
            let idx = nodes.len();
            nodes.push(PhysicalNode {
                id: format!("s{s}"),
                kind: NodeKind::Server,
                cpu_max: defaults.server_cpu_max_ghz,
                cpu_alloc: 0.0,
                proc_delay: defaults.server_proc_delay_ms,
            });
            links.push(link(edge, idx, defaults.server_link_bw_mbps));
            s += 1;
        }
    }

    NetworkGraph::new(nodes, links)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyDoc {
    nodes: Vec<NodeDoc>,
    links: Vec<LinkDoc>,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: String,
    kind: NodeKind,
    #[serde(default)]
    cpu_max_ghz: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    cpu_alloc_ghz: f64,
    #[serde(default)]
    proc_delay_ms: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkDoc {
    a: String,
    b: String,
    bw_max_mbps: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    bw_alloc_mbps: f64,
    delay_init_ms: f64,
    delay_slope_ms: f64,
}

/// Parses and validates a JSON topology document.
pub fn load_topology(source: &str) -> Result<NetworkGraph> {
    let doc: TopologyDoc =
        serde_json::from_str(source).map_err(|e| Error::Schema(e.to_string()))?;
    let mut index = HashMap::new();
    let mut nodes = Vec::with_capacity(doc.nodes.len());
    for n in doc.nodes {
        if index.insert(n.id.clone(), nodes.len()).is_some() {
            return Err(Error::DuplicateNode(n.id));
        }
        nodes.push(PhysicalNode {
            id: n.id,
            kind: n.kind,
            cpu_max: n.cpu_max_ghz,
            cpu_alloc: n.cpu_alloc_ghz,
            proc_delay: n.proc_delay_ms,
        });
    }
    let lookup = |id: &str| index.get(id).copied().ok_or_else(|| Error::UnknownNode(id.into()));
    let mut links = Vec::with_capacity(doc.links.len());
    for l in doc.links {
        links.push(PhysicalLink {
            a: lookup(&l.a)?,
            b: lookup(&l.b)?,
            bw_max: l.bw_max_mbps,
            bw_alloc: l.bw_alloc_mbps,
            delay_init: l.delay_init_ms,
            delay_slope: l.delay_slope_ms,
        });
    }
    NetworkGraph::new(nodes, links)
}

/// Serializes to the JSON topology document (pretty-printed, stable order).
pub fn save_topology(graph: &NetworkGraph) -> String {
    let doc = TopologyDoc {
        nodes: graph
            .nodes
            .iter()
            .map(|n| NodeDoc {
                id: n.id.clone(),
                kind: n.kind,
                cpu_max_ghz: n.cpu_max,
                cpu_alloc_ghz: n.cpu_alloc,
                proc_delay_ms: n.proc_delay,
            })
            .collect(),
        links: graph
            .links
            .iter()
            .map(|l| LinkDoc {
                a: graph.nodes[l.a].id.clone(),
                b: graph.nodes[l.b].id.clone(),
                bw_max_mbps: l.bw_max,
                bw_alloc_mbps: l.bw_alloc,
                delay_init_ms: l.delay_init,
                delay_slope_ms: l.delay_slope,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("topology document serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_link(alloc: f64) -> PhysicalLink {
        PhysicalLink {
            a: 0,
            b: 1,
            bw_max: 10_000.0,
            bw_alloc: alloc,
            delay_init: 0.13,
            delay_slope: 3.5,
        }
    }

    #[test]
    fn delay_at_zero_full_and_half_utilization() {
        assert_eq!(link_delay(&table_link(0.0)), 0.13);
        assert!((link_delay(&table_link(10_000.0)) - 3.63).abs() < 1e-12);
        assert!((link_delay(&table_link(5_000.0)) - 1.88).abs() < 1e-12);
    }

    #[test]
    fn default_tree_shape() {
        let g = generate_topology(200, &[5, 4], &TopologyDefaults::default()).unwrap();
        let count = |kind| g.nodes().iter().filter(|n| n.kind == kind).count();
        assert_eq!(count(NodeKind::Server), 200);
        assert_eq!(count(NodeKind::Switch), 26);
        assert_eq!(g.links().len(), 225);
        assert_eq!(g.nodes().len() - 1, g.links().len(), "tree");
        assert!(g.nodes().iter().all(|n| n.cpu_alloc == 0.0));
        assert!(g.links().iter().all(|l| l.bw_alloc == 0.0));
        assert_eq!(g.node_index("agg4"), Some(5));
        assert!(g.node_index("edge19").is_some());
        assert!(g.node_index("s199").is_some());
    }

    #[test]
    fn degenerate_tree() {
        let g = generate_topology(1, &[1, 1], &TopologyDefaults::default()).unwrap();
        assert_eq!(g.nodes().len(), 4);
        assert_eq!(g.links().len(), 3);
        assert_eq!(g.servers().len(), 1);
    }

    #[test]
    fn rejects_uneven_server_split_and_empty_fanouts() {
        let d = TopologyDefaults::default();
        assert!(matches!(
            generate_topology(7, &[2, 2], &d),
            Err(Error::InvalidArgument(_))
        ));
        assert!(generate_topology(8, &[], &d).is_err());
        assert!(generate_topology(0, &[1], &d).is_err());
    }

    #[test]
    fn acu_arithmetic() {
        let mut g = generate_topology(2, &[1, 1], &TopologyDefaults::default()).unwrap();
        assert_eq!(average_cpu_utilization(&g).unwrap(), 0.0);
        let s = g.servers().to_vec();
        g.set_cpu_alloc(s[0], 10.0);
        g.set_cpu_alloc(s[1], 15.0);
        assert_eq!(average_cpu_utilization(&g).unwrap(), 0.5);
        g.set_cpu_alloc(s[0], 25.0);
        g.set_cpu_alloc(s[1], 25.0);
        assert_eq!(average_cpu_utilization(&g).unwrap(), 1.0);
    }

    #[test]
    fn save_load_round_trip() {
        let g = generate_topology(200, &[5, 4], &TopologyDefaults::default()).unwrap();
        let text = save_topology(&g);
        let back = load_topology(&text).unwrap();
        assert_eq!(g, back);
        assert_eq!(g.digest(), back.digest());
    }

    #[test]
    fn load_reports_unknown_node() {
        let doc = r#"{"nodes":[{"id":"s1","kind":"server","cpu_max_ghz":25,"proc_delay_ms":0.2}],
            "links":[{"a":"s1","b":"s999","bw_max_mbps":10,"delay_init_ms":0.1,"delay_slope_ms":1}]}"#;
        let err = load_topology(doc).unwrap_err();
        assert!(err.to_string().contains("s999"), "{err}");
    }

    #[test]
    fn load_rejects_overallocated_link() {
        let doc = r#"{"nodes":[
              {"id":"a","kind":"server","cpu_max_ghz":25,"proc_delay_ms":0.2},
              {"id":"b","kind":"server","cpu_max_ghz":25,"proc_delay_ms":0.2}],
            "links":[{"a":"a","b":"b","bw_max_mbps":10,"bw_alloc_mbps":11,"delay_init_ms":0.1,"delay_slope_ms":1}]}"#;
        assert!(matches!(load_topology(doc), Err(Error::Capacity { .. })));
    }

    #[test]
    fn load_rejects_duplicate_link_and_disconnected() {
        let nodes = r#"[
              {"id":"a","kind":"server","cpu_max_ghz":25,"proc_delay_ms":0.2},
              {"id":"b","kind":"server","cpu_max_ghz":25,"proc_delay_ms":0.2},
              {"id":"c","kind":"switch"}]"#;
        let dup = format!(
            r#"{{"nodes":{nodes},"links":[
              {{"a":"a","b":"b","bw_max_mbps":10,"delay_init_ms":0.1,"delay_slope_ms":1}},
              {{"a":"b","b":"a","bw_max_mbps":10,"delay_init_ms":0.1,"delay_slope_ms":1}}]}}"#
        );
        assert!(matches!(load_topology(&dup), Err(Error::DuplicateLink(..))));
        let split = format!(
            r#"{{"nodes":{nodes},"links":[
              {{"a":"a","b":"b","bw_max_mbps":10,"delay_init_ms":0.1,"delay_slope_ms":1}}]}}"#
        );
        match load_topology(&split) {
            Err(Error::Disconnected(id)) => assert_eq!(id, "c"),
            other => panic!("expected disconnected, got {other:?}"),
        }
    }

    #[test]
    fn switch_with_cpu_is_rejected() {
        let doc = r#"{"nodes":[
              {"id":"a","kind":"server","cpu_max_ghz":25,"proc_delay_ms":0.2},
              {"id":"sw","kind":"switch","cpu_max_ghz":4}],
            "links":[{"a":"a","b":"sw","bw_max_mbps":10,"delay_init_ms":0.1,"delay_slope_ms":1}]}"#;
        assert!(matches!(load_topology(doc), Err(Error::Capacity { .. })));
    }
}
