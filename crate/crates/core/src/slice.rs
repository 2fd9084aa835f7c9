//! Slice requests: directed VNF graphs with CPU/bandwidth demands, an
//! end-to-end delay budget and per-plane isolation levels.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Control,
    Data,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vnf {
    pub id: usize,
    pub plane: Plane,
    #[serde(rename = "cpu_demand_ghz")]
    pub cpu_demand: f64,
    #[serde(rename = "proc_delay_ms")]
    pub proc_delay: f64,
}

/// Directed virtual link between two VNF ids of the same slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualLink {
    pub src: usize,
    pub dst: usize,
    #[serde(rename = "bw_demand_mbps")]
    pub bw_demand: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceKind {
    Legitimate,
    Target,
    Attacker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceRequest {
    pub id: u64,
    pub vnfs: Vec<Vnf>,
    pub vlinks: Vec<VirtualLink>,
    #[serde(rename = "delay_budget_ms")]
    pub delay_budget: f64,
    pub k_rel_control: u32,
    pub k_rel_data: u32,
    pub kind: SliceKind,
}

impl SliceRequest {
    /// Checks the structural invariants. VNF ids must equal their position.
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidSlice {
            slice: self.id,
            reason,
        };
        if self.vnfs.is_empty() {
            return Err(bad("slice has no VNFs".into()));
        }
        for (i, v) in self.vnfs.iter().enumerate() {
            if v.id != i {
                return Err(bad(format!("VNF at position {i} has id {}", v.id)));
            }
            if !(v.cpu_demand.is_finite() && v.cpu_demand > 0.0) {
                return Err(bad(format!("VNF {i} cpu demand must be positive")));
            }
            if !(v.proc_delay.is_finite() && v.proc_delay >= 0.0) {
                return Err(bad(format!("VNF {i} processing delay must be non-negative")));
            }
        }
        let n = self.vnfs.len();
        let mut seen = std::collections::HashSet::new();
        for l in &self.vlinks {
            if l.src >= n || l.dst >= n {
                return Err(bad(format!("virtual link {}->{} references unknown VNF", l.src, l.dst)));
            }
            if l.src == l.dst {
                return Err(bad(format!("virtual link {}->{} is a self-loop", l.src, l.dst)));
            }
            if !(l.bw_demand.is_finite() && l.bw_demand > 0.0) {
                return Err(bad(format!("virtual link {}->{} bandwidth must be positive", l.src, l.dst)));
            }
            if !seen.insert((l.src, l.dst)) {
                return Err(bad(format!("duplicate virtual link {}->{}", l.src, l.dst)));
            }
        }
        if self.k_rel_control == 0 || self.k_rel_data == 0 {
            return Err(bad("isolation levels must be at least 1".into()));
        }
        if !(self.delay_budget.is_finite() && self.delay_budget > 0.0) {
            return Err(bad("delay budget must be positive".into()));
        }
        if !self.is_weakly_connected() {
            return Err(bad("VNF graph is not weakly connected".into()));
        }
        Ok(())
    }

    pub fn is_weakly_connected(&self) -> bool {
        let n = self.vnfs.len();
        if n == 0 {
            return false;
        }
        let adj = self.undirected_adjacency();
        let mut visited = vec![false; n];
        let mut queue = VecDeque::from([0]);
        visited[0] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if !visited[w] {
                    visited[w] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count == n
    }

    pub(crate) fn undirected_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vnfs.len()];
        for l in &self.vlinks {
            adj[l.src].push(l.dst);
            adj[l.dst].push(l.src);
        }
        adj
    }

    pub fn k_rel(&self, plane: Plane) -> u32 {
        match plane {
            Plane::Control => self.k_rel_control,
            Plane::Data => self.k_rel_data,
        }
    }

    /// Sets both per-plane isolation levels.
    pub fn with_k_rel(mut self, k_rel: u32) -> Self {
        self.k_rel_control = k_rel;
        self.k_rel_data = k_rel;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("slice serializes")
    }

    pub fn from_json(source: &str) -> Result<Self> {
        let slice: SliceRequest = serde_json::from_str(source)?;
        slice.validate()?;
        Ok(slice)
    }
}

pub fn total_cpu_demand(slice: &SliceRequest) -> f64 {
    slice.vnfs.iter().map(|v| v.cpu_demand).sum()
}

/// Closed interval sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformRange {
    pub min: f64,
    pub max: f64,
}

impl UniformRange {
    pub const fn new(min: f64, max: f64) -> Self {
        UniformRange { min, max }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.min <= x && x <= self.max
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.gen_range(self.min..=self.max)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChainShape {
    /// VNF 0 -> VNF 1 -> ... -> VNF n-1.
    Chain,
    /// Random spanning tree oriented from lower to higher VNF index, plus
    /// each remaining forward pair with probability `extra_edge_prob`.
    RandomDag { extra_edge_prob: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SliceGenParams {
    pub vnf_count: usize,
    pub cpu_demand_ghz: UniformRange,
    pub bw_demand_mbps: UniformRange,
    pub proc_delay_ms: UniformRange,
    /// Number of leading VNFs in the control plane; `None` puts the first
    /// half (rounded up) there.
    pub control_count: Option<usize>,
    pub shape: ChainShape,
    pub delay_budget_ms: f64,
    pub k_rel_control: u32,
    pub k_rel_data: u32,
}

impl Default for SliceGenParams {
    fn default() -> Self {
        SliceGenParams {
            vnf_count: 10,
            cpu_demand_ghz: UniformRange::new(0.55, 1.6),
            bw_demand_mbps: UniformRange::new(40.0, 60.0),
            proc_delay_ms: UniformRange::new(0.2, 0.6),
            control_count: None,
            shape: ChainShape::Chain,
            delay_budget_ms: 15.0,
            k_rel_control: 1,
            k_rel_data: 1,
        }
    }
}

impl SliceGenParams {
    pub fn with_k_rel(mut self, k_rel: u32) -> Self {
        self.k_rel_control = k_rel;
        self.k_rel_data = k_rel;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.vnf_count == 0 {
            return bad("vnf_count must be positive");
        }
        for (name, r, positive) in [
            ("cpu demand", self.cpu_demand_ghz, true),
            ("bandwidth demand", self.bw_demand_mbps, true),
            ("processing delay", self.proc_delay_ms, false),
        ] {
            if !(r.min.is_finite() && r.max.is_finite()) || r.min > r.max {
                return Err(Error::InvalidArgument(format!("{name} range is empty")));
            }
            if (positive && r.min <= 0.0) || r.min < 0.0 {
                return Err(Error::InvalidArgument(format!("{name} range must be positive")));
            }
        }
        if matches!(self.control_count, Some(c) if c > self.vnf_count) {
            return bad("control_count exceeds vnf_count");
        }
        if let ChainShape::RandomDag { extra_edge_prob } = self.shape {
            if !(0.0..=1.0).contains(&extra_edge_prob) {
                return bad("extra_edge_prob must lie in [0, 1]");
            }
        }
        if !(self.delay_budget_ms.is_finite() && self.delay_budget_ms > 0.0) {
            return bad("delay budget must be positive");
        }
        if self.k_rel_control == 0 || self.k_rel_data == 0 {
            return bad("isolation levels must be at least 1");
        }
        Ok(())
    }
}

// Demands land on a 1e-6 grid so the integer resource ledger sees exactly
// the value written to slice files.
fn quantize(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Draws one legitimate slice request.
pub fn generate_slice<R: Rng + ?Sized>(
    rng: &mut R,
    params: &SliceGenParams,
    id: u64,
) -> Result<SliceRequest> {
    params.validate()?;
    let n = params.vnf_count;
    let control = params.control_count.unwrap_or(n.div_ceil(2));
    let vnfs: Vec<Vnf> = (0..n)
        .map(|i| Vnf {
            id: i,
            plane: if i < control { Plane::Control } else { Plane::Data },
            cpu_demand: quantize(params.cpu_demand_ghz.sample(rng)),
            proc_delay: quantize(params.proc_delay_ms.sample(rng)),
        })
        .collect();

    let mut edges: Vec<(usize, usize)> = match params.shape {
        ChainShape::Chain => (1..n).map(|j| (j - 1, j)).collect(),
        ChainShape::RandomDag { extra_edge_prob } => {
            let mut edges: Vec<(usize, usize)> =
                (1..n).map(|j| (rng.gen_range(0..j), j)).collect();
            for j in 1..n {
                for i in 0..j {
                    if !edges.contains(&(i, j)) && rng.gen_bool(extra_edge_prob) {
                        edges.push((i, j));
                    }
                }
            }
            edges.sort_unstable();
            edges
        }
    };
    edges.dedup();
    let vlinks = edges
        .into_iter()
        .map(|(src, dst)| VirtualLink {
            src,
            dst,
            bw_demand: quantize(params.bw_demand_mbps.sample(rng)),
        })
        .collect();

    let slice = SliceRequest {
        id,
        vnfs,
        vlinks,
        delay_budget: params.delay_budget_ms,
        k_rel_control: params.k_rel_control,
        k_rel_data: params.k_rel_data,
        kind: SliceKind::Legitimate,
    };
    debug_assert!(slice.validate().is_ok());
    Ok(slice)
}

/// Draws `count` attacker requests with ids `first_id ..`, statistically
/// identical to legitimate slices.
pub fn generate_attacker_batch<R: Rng + ?Sized>(
    rng: &mut R,
    count: usize,
    params: &SliceGenParams,
    first_id: u64,
) -> Result<Vec<SliceRequest>> {
    if count == 0 {
        return Err(Error::InvalidArgument("attacker count must be positive".into()));
    }
    (0..count)
        .map(|n| {
            let mut s = generate_slice(rng, params, first_id + n as u64)?;
            s.kind = SliceKind::Attacker;
            Ok(s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn within_ranges(s: &SliceRequest, p: &SliceGenParams) -> bool {
        s.vnfs.iter().all(|v| {
            p.cpu_demand_ghz.contains(v.cpu_demand) && p.proc_delay_ms.contains(v.proc_delay)
        }) && s.vlinks.iter().all(|l| p.bw_demand_mbps.contains(l.bw_demand))
    }

    #[test]
    fn default_slice_is_a_ten_vnf_chain() {
        let p = SliceGenParams::default();
        let s = generate_slice(&mut ChaCha8Rng::seed_from_u64(42), &p, 1).unwrap();
        assert_eq!(s.vnfs.len(), 10);
        assert_eq!(s.vlinks.len(), 9);
        assert!(within_ranges(&s, &p));
        let control = s.vnfs.iter().filter(|v| v.plane == Plane::Control).count();
        assert_eq!(control, 5);
        assert_eq!(s.delay_budget, 15.0);
        s.validate().unwrap();
    }

    #[test]
    fn single_vnf_slice() {
        let p = SliceGenParams {
            vnf_count: 1,
            ..Default::default()
        };
        let s = generate_slice(&mut ChaCha8Rng::seed_from_u64(1), &p, 1).unwrap();
        assert_eq!(s.vnfs.len(), 1);
        assert!(s.vlinks.is_empty());
        s.validate().unwrap();
    }

    #[test]
    fn rejects_bad_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let zero = SliceGenParams {
            vnf_count: 0,
            ..Default::default()
        };
        assert!(generate_slice(&mut rng, &zero, 1).is_err());
        let empty = SliceGenParams {
            cpu_demand_ghz: UniformRange::new(2.0, 1.0),
            ..Default::default()
        };
        assert!(generate_slice(&mut rng, &empty, 1).is_err());
    }

    #[test]
    fn same_seed_same_slice_and_batch() {
        let p = SliceGenParams::default();
        let a = generate_slice(&mut ChaCha8Rng::seed_from_u64(9), &p, 3).unwrap();
        let b = generate_slice(&mut ChaCha8Rng::seed_from_u64(9), &p, 3).unwrap();
        assert_eq!(a, b);
        let x = generate_attacker_batch(&mut ChaCha8Rng::seed_from_u64(5), 20, &p, 100).unwrap();
        let y = generate_attacker_batch(&mut ChaCha8Rng::seed_from_u64(5), 20, &p, 100).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn attacker_batch_of_500() {
        let p = SliceGenParams::default();
        let batch =
            generate_attacker_batch(&mut ChaCha8Rng::seed_from_u64(5), 500, &p, 1_000).unwrap();
        assert_eq!(batch.len(), 500);
        assert!(batch.iter().all(|s| s.kind == SliceKind::Attacker && within_ranges(s, &p)));
        assert_eq!(batch[499].id, 1_499);
        let one = generate_attacker_batch(&mut ChaCha8Rng::seed_from_u64(5), 1, &p, 0).unwrap();
        assert_eq!(one.len(), 1);
        assert!(generate_attacker_batch(&mut ChaCha8Rng::seed_from_u64(5), 0, &p, 0).is_err());
    }

    #[test]
    fn total_demand() {
        let p = SliceGenParams::default();
        let mut s = generate_slice(&mut ChaCha8Rng::seed_from_u64(2), &p, 1).unwrap();
        for v in &mut s.vnfs {
            v.cpu_demand = 1.0;
        }
        assert_eq!(total_cpu_demand(&s), 10.0);
        s.vnfs.truncate(1);
        s.vnfs[0].cpu_demand = 0.55;
        assert_eq!(total_cpu_demand(&s), 0.55);
    }

    #[test]
    fn mean_demand_matches_uniform_expectation() {
        let p = SliceGenParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 4000;
        let mean: f64 = (0..n)
            .map(|i| total_cpu_demand(&generate_slice(&mut rng, &p, i).unwrap()))
            .sum::<f64>()
            / n as f64;
        // 10 * (0.55 + 1.6) / 2; standard error of the mean is about 0.015.
        assert!((mean - 10.75).abs() < 0.06, "mean {mean}");
    }

    #[test]
    fn json_round_trip() {
        let s = generate_slice(&mut ChaCha8Rng::seed_from_u64(3), &SliceGenParams::default(), 8)
            .unwrap();
        assert_eq!(SliceRequest::from_json(&s.to_json()).unwrap(), s);
    }

    proptest! {
        #[test]
        fn generated_slices_respect_ranges_and_connectivity(
            seed in any::<u64>(),
            n in 1usize..14,
            dag in any::<bool>(),
            p_extra in 0.0f64..0.6,
        ) {
            let params = SliceGenParams {
                vnf_count: n,
                shape: if dag { ChainShape::RandomDag { extra_edge_prob: p_extra } } else { ChainShape::Chain },
                ..Default::default()
            };
            let s = generate_slice(&mut ChaCha8Rng::seed_from_u64(seed), &params, 1).unwrap();
            prop_assert!(within_ranges(&s, &params));
            prop_assert!(s.is_weakly_connected());
            prop_assert!(s.validate().is_ok());
            let again = generate_slice(&mut ChaCha8Rng::seed_from_u64(seed), &params, 1).unwrap();
            prop_assert_eq!(s, again);
        }
    }
}
