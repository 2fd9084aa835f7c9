//! Seeded co-residency experiment over a grid of isolation levels and CPU
//! utilization targets.
//!
//! Each cell fills a fresh network state with legitimate slices until the
//! average CPU utilization (ACU) sits inside the target band, designates one
//! of them as the victim, then alternates background churn with attacker
//! requests on a simulated clock. An attack succeeds when any attacker VNF
//! shares a server with any victim VNF.

use std::fmt::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocator::{solve, SolveStatus, SolverOptions};
use crate::digest::{derive_seed, sha256_hex};
use crate::error::{Error, Result};
use crate::slice::{generate_attacker_batch, generate_slice, total_cpu_demand, SliceGenParams, SliceKind, SliceRequest};
use crate::state::NetworkState;
use crate::topology::{generate_topology, NetworkGraph, TopologyDefaults, DEFAULT_FANOUTS, DEFAULT_SERVER_COUNT};

/// Attacker ids start here so they never collide with legitimate ids.
pub const ATTACKER_ID_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    pub servers: usize,
    pub fanouts: Vec<usize>,
    #[serde(flatten)]
    pub defaults: TopologyDefaults,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            servers: DEFAULT_SERVER_COUNT,
            fanouts: DEFAULT_FANOUTS.to_vec(),
            defaults: TopologyDefaults::default(),
        }
    }
}

impl TopologyConfig {
    pub fn build(&self) -> Result<NetworkGraph> {
        generate_topology(self.servers, &self.fanouts, &self.defaults)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub acu_targets: Vec<f64>,
    /// Half-width of the ACU band.
    pub acu_band: f64,
    pub k_rel_values: Vec<u32>,
    pub attacker_count: usize,
    pub churn_period_s: f64,
    pub attacker_period_s: f64,
    /// The legitimate slice allocated at this (1-based) position during
    /// warmup becomes the victim.
    pub background_slices_init: usize,
    /// Fresh draws tried when a churn replacement does not fit.
    pub churn_retries: usize,
    /// Consecutive rejected draws after which warmup or band correction
    /// gives up.
    pub max_rejections: usize,
    pub slice: SliceGenParams,
    pub solver: SolverOptions,
    pub topology: TopologyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 2020,
            acu_targets: vec![0.50, 0.75, 0.80, 0.85, 0.90, 0.95],
            acu_band: 0.005,
            k_rel_values: (1..=10).collect(),
            attacker_count: 500,
            churn_period_s: 60.0,
            attacker_period_s: 12.0,
            background_slices_init: 50,
            churn_retries: 20,
            max_rejections: 200,
            slice: SliceGenParams::default(),
            solver: SolverOptions::default(),
            topology: TopologyConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.acu_targets.is_empty() {
            return bad("acu_targets is empty".into());
        }
        if let Some(a) = self.acu_targets.iter().find(|&&a| !(a > 0.0 && a <= 1.0)) {
            return bad(format!("ACU target {a} outside (0, 1]"));
        }
        if !(self.acu_band > 0.0 && self.acu_band < 1.0) {
            return bad(format!("acu_band {} must lie in (0, 1)", self.acu_band));
        }
        if self.k_rel_values.is_empty() || self.k_rel_values.contains(&0) {
            return bad("k_rel_values must be non-empty and at least 1".into());
        }
        if self.attacker_count == 0 {
            return bad("attacker_count must be at least 1".into());
        }
        if !(self.churn_period_s > 0.0 && self.churn_period_s.is_finite()) {
            return bad("churn_period_s must be positive".into());
        }
        if !(self.attacker_period_s > 0.0 && self.attacker_period_s.is_finite()) {
            return bad("attacker_period_s must be positive".into());
        }
        if self.background_slices_init == 0 {
            return bad("background_slices_init must be at least 1".into());
        }
        if self.max_rejections == 0 {
            return bad("max_rejections must be at least 1".into());
        }
        self.slice.validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    /// Seed of the cell at (`k_rel`, `acu_target`).
    pub fn cell_seed(&self, k_rel: u32, acu_target: f64) -> u64 {
        derive_seed(self.seed, &["cell", &k_rel.to_string(), &format!("{acu_target}")])
    }

    /// Every (k_rel, acu_target) pair, K-major.
    pub fn cells(&self) -> Vec<(u32, f64)> {
        self.k_rel_values
            .iter()
            .flat_map(|&k| self.acu_targets.iter().map(move |&a| (k, a)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttemptOutcome {
    Success,
    Failure,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChurnOutcome {
    pub removed: Option<u64>,
    pub added: Option<u64>,
    /// Draws rejected before a replacement fit (or all of them).
    pub rejected: usize,
    pub corrections: usize,
    pub in_band: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmupReport {
    pub target_id: u64,
    pub slices_allocated: usize,
    pub background: usize,
    pub rejected: usize,
    pub acu: f64,
}

/// One cell's exclusively owned simulation.
pub struct Cell<'a> {
    config: &'a ExperimentConfig,
    pub k_rel: u32,
    pub acu_target: f64,
    pub state: NetworkState,
    params: SliceGenParams,
    rng: ChaCha8Rng,
    next_id: u64,
    target: Option<u64>,
}

impl<'a> Cell<'a> {
    pub fn new(config: &'a ExperimentConfig, graph: &NetworkGraph, k_rel: u32, acu_target: f64) -> Self {
        Cell {
            config,
            k_rel,
            acu_target,
            state: NetworkState::new(graph.clone()),
            params: config.slice.clone().with_k_rel(k_rel),
            rng: ChaCha8Rng::seed_from_u64(config.cell_seed(k_rel, acu_target)),
            next_id: 0,
            target: None,
        }
    }

    pub fn target(&self) -> Option<u64> {
        self.target
    }

    fn band(&self) -> (f64, f64) {
        (self.acu_target - self.config.acu_band, self.acu_target + self.config.acu_band)
    }

    fn in_band(&self) -> bool {
        let (lo, hi) = self.band();
        let acu = self.state.acu();
        lo <= acu && acu <= hi
    }

    /// Draws one legitimate slice and tries to allocate it. Slices that would
    /// push ACU above the band are rejected without solving.
    fn try_allocate(&mut self, kind: SliceKind) -> Result<Option<u64>> {
        let mut slice = generate_slice(&mut self.rng, &self.params, self.next_id)?;
        self.next_id += 1;
        slice.kind = kind;
        let capacity = self.state.graph().total_cpu_capacity();
        let (_, hi) = self.band();
        if self.state.acu() + total_cpu_demand(&slice) / capacity > hi {
            return Ok(None);
        }
        self.allocate(&slice)
    }

    fn allocate(&mut self, slice: &SliceRequest) -> Result<Option<u64>> {
        let inst = self.state.build_instance(slice)?;
        let sol = solve(&inst, &self.config.solver)?;
        if !sol.is_optimal() {
            return Ok(None);
        }
        self.state.apply(&inst.slice, &sol)?;
        Ok(Some(slice.id))
    }

    /// Fills the fresh state into the ACU band and designates the victim.
    pub fn warmup(&mut self) -> Result<WarmupReport> {
        let (lo, _) = self.band();
        let mut allocated = 0usize;
        let mut rejected_run = 0usize;
        let mut rejected = 0usize;
        let mut last = None;
        while self.state.acu() < lo {
            let kind = if self.target.is_none() && allocated + 1 == self.config.background_slices_init {
                SliceKind::Target
            } else {
                SliceKind::Legitimate
            };
            match self.try_allocate(kind)? {
                Some(id) => {
                    allocated += 1;
                    rejected_run = 0;
                    last = Some(id);
                    if kind == SliceKind::Target {
                        self.target = Some(id);
                    }
                }
                None => {
                    rejected += 1;
                    rejected_run += 1;
                    if rejected_run >= self.config.max_rejections {
                        return Err(Error::WarmupFailed {
                            target: self.acu_target,
                            achieved: self.state.acu(),
                            reason: format!("{rejected_run} consecutive slice requests rejected"),
                        });
                    }
                }
            }
        }
        if self.target.is_none() {
            // Fewer slices than the designated position fit; use the last.
            let id = last.ok_or_else(|| Error::WarmupFailed {
                target: self.acu_target,
                achieved: self.state.acu(),
                reason: "no slice allocated".into(),
            })?;
            self.relabel_target(id);
        }
        let target = self.target.expect("target designated");
        self.state.protect(target)?;
        let background = self.state.ids_of_kind(SliceKind::Legitimate).len();
        if background == 0 {
            return Err(Error::WarmupFailed {
                target: self.acu_target,
                achieved: self.state.acu(),
                reason: "no background slice besides the target".into(),
            });
        }
        Ok(WarmupReport {
            target_id: target,
            slices_allocated: allocated,
            background,
            rejected,
            acu: self.state.acu(),
        })
    }

    fn relabel_target(&mut self, id: u64) {
        let record = self.state.deallocate(id).expect("slice is active");
        let mut slice = record.slice.clone();
        slice.kind = SliceKind::Target;
        let sol = crate::allocator::Solution {
            status: SolveStatus::Optimal,
            placement: record
                .placement
                .iter()
                .map(|n| self.state.graph().servers().iter().position(|k| k == n).expect("host is a server"))
                .collect(),
            flows: record.flows.clone(),
            objective_value: 0.0,
            realized_delay: record.realized_delay,
            stats: Default::default(),
        };
        self.state.apply(&slice, &sol).expect("re-applying a just-removed footprint");
        self.target = Some(id);
    }

    /// Replaces one uniformly chosen background slice, then steers ACU back
    /// into the band if it drifted out.
    pub fn churn_step(&mut self) -> Result<ChurnOutcome> {
        let background = self.state.ids_of_kind(SliceKind::Legitimate);
        let &victim = background.choose(&mut self.rng).ok_or(Error::NoBackgroundSlice)?;
        self.state.deallocate(victim)?;
        let mut out = ChurnOutcome {
            removed: Some(victim),
            ..Default::default()
        };
        for _ in 0..=self.config.churn_retries {
            match self.try_allocate(SliceKind::Legitimate)? {
                Some(id) => {
                    out.added = Some(id);
                    break;
                }
                None => out.rejected += 1,
            }
        }
        out.corrections = self.correct_band()?;
        out.in_band = self.in_band();
        Ok(out)
    }

    /// Greedy corrective swaps: allocate below the band, remove a random
    /// background slice above it.
    fn correct_band(&mut self) -> Result<usize> {
        let (lo, hi) = self.band();
        let mut steps = 0;
        let mut rejected_run = 0;
        loop {
            let acu = self.state.acu();
            if acu < lo {
                match self.try_allocate(SliceKind::Legitimate)? {
                    Some(_) => rejected_run = 0,
                    None => {
                        rejected_run += 1;
                        if rejected_run >= self.config.max_rejections {
                            return Ok(steps);
                        }
                    }
                }
            } else if acu > hi {
                let background = self.state.ids_of_kind(SliceKind::Legitimate);
                let Some(&id) = background.choose(&mut self.rng) else {
                    return Ok(steps);
                };
                self.state.deallocate(id)?;
            } else {
                return Ok(steps);
            }
            steps += 1;
        }
    }

    /// Allocates the attacker, checks co-residency with the victim and
    /// removes the attacker again.
    pub fn attacker_attempt(&mut self, attacker: &SliceRequest) -> Result<AttemptOutcome> {
        let target = self.target.ok_or_else(|| Error::InvalidArgument("no target slice".into()))?;
        let mut attacker = attacker.clone();
        attacker.kind = SliceKind::Attacker;
        let Some(id) = self.allocate(&attacker)? else {
            return Ok(AttemptOutcome::Infeasible);
        };
        let hit = self.state.co_resident(id, target)?;
        self.state.deallocate(id)?;
        Ok(if hit {
            AttemptOutcome::Success
        } else {
            AttemptOutcome::Failure
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum CellStatus {
    Completed,
    Aborted { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub k_rel: u32,
    pub acu_target: f64,
    pub seed: u64,
    pub status: CellStatus,
    pub attempts: usize,
    pub successes: usize,
    pub failures: usize,
    pub infeasible: usize,
    pub success_rate: f64,
    /// Mean ACU observed just before each attacker request.
    pub acu_achieved_mean: f64,
    pub acu_min: f64,
    pub acu_max: f64,
    pub warmup: Option<WarmupReport>,
    pub churn_steps: usize,
    pub churn_failures: usize,
    pub corrections: usize,
    /// Attacker requests issued while ACU was outside the band.
    pub out_of_band_attempts: usize,
    #[serde(skip)]
    pub runtime_s: f64,
}

impl CellResult {
    fn empty(k_rel: u32, acu_target: f64, seed: u64) -> Self {
        CellResult {
            k_rel,
            acu_target,
            seed,
            status: CellStatus::Completed,
            attempts: 0,
            successes: 0,
            failures: 0,
            infeasible: 0,
            success_rate: 0.0,
            acu_achieved_mean: 0.0,
            acu_min: 0.0,
            acu_max: 0.0,
            warmup: None,
            churn_steps: 0,
            churn_failures: 0,
            corrections: 0,
            out_of_band_attempts: 0,
            runtime_s: 0.0,
        }
    }

    pub fn is_completed(&self) -> bool {
        self.status == CellStatus::Completed
    }
}

/// The attacker batch depends on the root seed only, so every cell faces
/// the same demands; only the isolation level follows the cell.
pub fn attacker_batch(config: &ExperimentConfig) -> Result<Vec<SliceRequest>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &["attackers"]));
    generate_attacker_batch(&mut rng, config.attacker_count, &config.slice, ATTACKER_ID_BASE)
}

/// Runs one cell to completion. Errors abort the cell and are reported in
/// its status.
pub fn run_cell(config: &ExperimentConfig, graph: &NetworkGraph, k_rel: u32, acu_target: f64) -> CellResult {
    let started = Instant::now();
    let seed = config.cell_seed(k_rel, acu_target);
    let mut result = CellResult::empty(k_rel, acu_target, seed);
    if let Err(e) = run_cell_inner(config, graph, k_rel, acu_target, &mut result) {
        result.status = CellStatus::Aborted { reason: e.to_string() };
    }
    result.runtime_s = started.elapsed().as_secs_f64();
    result
}

fn run_cell_inner(
    config: &ExperimentConfig,
    graph: &NetworkGraph,
    k_rel: u32,
    acu_target: f64,
    out: &mut CellResult,
) -> Result<()> {
    config.validate()?;
    let attackers = attacker_batch(config)?;
    let mut cell = Cell::new(config, graph, k_rel, acu_target);
    out.warmup = Some(cell.warmup()?);

    let mut acu_sum = 0.0;
    out.acu_min = f64::INFINITY;
    out.acu_max = f64::NEG_INFINITY;
    let mut churns = 1u64;
    for (n, attacker) in attackers.iter().enumerate() {
        let at = (n as f64 + 1.0) * config.attacker_period_s;
        // Churn due at or before this request happens first.
        loop {
            let churn_at = churns as f64 * config.churn_period_s;
            if churn_at > at {
                break;
            }
            cell.state.advance_clock(churn_at);
            let step = cell.churn_step()?;
            out.churn_steps += 1;
            out.corrections += step.corrections;
            if step.added.is_none() {
                out.churn_failures += 1;
            }
            churns += 1;
        }
        cell.state.advance_clock(at);
        let acu = cell.state.acu();
        acu_sum += acu;
        out.acu_min = out.acu_min.min(acu);
        out.acu_max = out.acu_max.max(acu);
        if !cell.in_band() {
            out.out_of_band_attempts += 1;
        }
        let attacker = attacker.clone().with_k_rel(k_rel);
        match cell.attacker_attempt(&attacker)? {
            AttemptOutcome::Success => out.successes += 1,
            AttemptOutcome::Failure => out.failures += 1,
            AttemptOutcome::Infeasible => out.infeasible += 1,
        }
        out.attempts += 1;
    }
    out.acu_achieved_mean = acu_sum / out.attempts as f64;
    out.success_rate = out.successes as f64 / out.attempts as f64;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub config_digest: String,
    pub topology_digest: String,
    pub tool_version: String,
    /// Digest of (config, topology, seed, version); embedded in every output.
    pub run_digest: String,
    /// Sorted by (k_rel, acu_target).
    pub cells: Vec<CellResult>,
}

pub fn run_digest(config_digest: &str, topology_digest: &str, seed: u64) -> String {
    sha256_hex(
        format!(
            "config={config_digest}\ntopology={topology_digest}\nseed={seed}\nversion={}\n",
            env!("CARGO_PKG_VERSION")
        )
        .as_bytes(),
    )
}

/// Runs every cell of the grid in parallel on the current rayon pool.
pub fn run_grid(config: &ExperimentConfig, graph: &NetworkGraph) -> Result<ExperimentResult> {
    config.validate()?;
    let mut cells: Vec<CellResult> = config
        .cells()
        .into_par_iter()
        .map(|(k, a)| run_cell(config, graph, k, a))
        .collect();
    cells.sort_by(|x, y| x.k_rel.cmp(&y.k_rel).then(x.acu_target.total_cmp(&y.acu_target)));
    let config_digest = config.digest();
    let topology_digest = graph.digest();
    Ok(ExperimentResult {
        run_digest: run_digest(&config_digest, &topology_digest, config.seed),
        config: config.clone(),
        config_digest,
        topology_digest,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        cells,
    })
}

impl ExperimentResult {
    pub fn aborted(&self) -> impl Iterator<Item = &CellResult> {
        self.cells.iter().filter(|c| !c.is_completed())
    }

    pub fn cell(&self, k_rel: u32, acu_target: f64) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.k_rel == k_rel && c.acu_target == acu_target)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# run_digest={}\n", self.run_digest);
        out.push_str("k_rel,acu_target,acu_achieved_mean,attempts,successes,infeasible,success_rate,seed\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{:.6},{},{},{},{:.6},{}",
                c.k_rel, c.acu_target, c.acu_achieved_mean, c.attempts, c.successes, c.infeasible, c.success_rate, c.seed
            );
        }
        out
    }

    /// Success percentage with one row per K_rel and one column per ACU
    /// target; aborted cells print `NA`.
    pub fn to_table(&self) -> String {
        let mut acus: Vec<f64> = self.cells.iter().map(|c| c.acu_target).collect();
        acus.sort_by(f64::total_cmp);
        acus.dedup();
        let mut ks: Vec<u32> = self.cells.iter().map(|c| c.k_rel).collect();
        ks.sort_unstable();
        ks.dedup();

        let mut out = format!("# run_digest={}\n# success rate (%) by K_rel and ACU target\nk_rel", self.run_digest);
        for a in &acus {
            let _ = write!(out, "\tacu_{:.0}", a * 100.0);
        }
        out.push('\n');
        for k in ks {
            let _ = write!(out, "{k}");
            for &a in &acus {
                match self.cell(k, a) {
                    Some(c) if c.is_completed() => {
                        let _ = write!(out, "\t{:.2}", c.success_rate * 100.0);
                    }
                    _ => out.push_str("\tNA"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }
}
