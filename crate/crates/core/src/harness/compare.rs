//! Side-by-side runs of the distributed and centralized solvers.

use serde::{Deserialize, Serialize};

use super::scenario::{Scenario, SolverKind};
use super::sim::{mean_std, run, RunOutput, RunSummary};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub label: String,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub samples: usize,
}

impl TimingRow {
    fn new(label: &str, seconds: &[f64]) -> Self {
        let ms: Vec<f64> = seconds.iter().map(|s| s * 1e3).collect();
        let (mean_ms, std_ms) = mean_std(&ms);
        Self { label: label.to_string(), mean_ms, std_ms, samples: ms.len() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub scenario: String,
    pub cycles: usize,
    /// Node-update QP, Edge-update QP, Total (ADMM), Total (Centralized).
    pub table: Vec<TimingRow>,
    /// Distributed work executed on one processor, per cycle.
    pub admm_sequential_ms_mean: f64,
    /// Mean distributed planning time over mean centralized planning time.
    pub time_ratio: f64,
    /// Closed-loop position gap between the two runs, per cycle (max over agents).
    pub deviation_per_cycle: Vec<f64>,
    pub max_deviation: f64,
    /// Closed-loop cost totals of both runs.
    pub objective_distributed: f64,
    pub objective_centralized: f64,
    /// `|J_dist − J_cent| / |J_cent|` on the closed-loop cost.
    pub objective_gap: f64,
    /// Same gap on the summed planned objectives.
    pub plan_objective_gap: f64,
    pub node_qps_per_iteration: Vec<usize>,
    pub edge_qps_per_iteration: Vec<usize>,
    pub distributed: RunSummary,
    pub centralized: RunSummary,
}

impl ComparisonReport {
    pub fn from_runs(dist: &RunOutput, cent: &RunOutput) -> Self {
        let node: Vec<f64> = dist.logs.iter().flat_map(|l| l.timings.node.iter().copied()).collect();
        let edge: Vec<f64> = dist.logs.iter().flat_map(|l| l.timings.edge.iter().copied()).collect();
        let admm: Vec<f64> = dist.logs.iter().map(|l| l.timings.planning).collect();
        let central: Vec<f64> = cent.logs.iter().map(|l| l.timings.planning).collect();
        let seq: Vec<f64> = dist.logs.iter().map(|l| l.timings.sequential * 1e3).collect();
        let table = vec![
            TimingRow::new("Node-update QP", &node),
            TimingRow::new("Edge-update QP", &edge),
            TimingRow::new("Total (ADMM)", &admm),
            TimingRow::new("Total (Centralized)", &central),
        ];
        let mut deviation_per_cycle: Vec<f64> = dist
            .logs
            .iter()
            .zip(&cent.logs)
            .map(|(a, b)| {
                a.agents.iter().zip(&b.agents).map(|(x, y)| x.state.distance_to(&y.state)).fold(0.0, f64::max)
            })
            .collect();
        deviation_per_cycle.push(
            dist.final_states.iter().zip(&cent.final_states).map(|(x, y)| x.distance_to(y)).fold(0.0, f64::max),
        );
        let j_d = dist.summary.closed_loop_cost_total;
        let j_c = cent.summary.closed_loop_cost_total;
        let (p_d, p_c) = (dist.summary.objective_total, cent.summary.objective_total);
        let first = dist.logs.first();
        Self {
            scenario: dist.scenario.name.clone(),
            cycles: dist.logs.len(),
            admm_sequential_ms_mean: mean_std(&seq).0,
            time_ratio: table[2].mean_ms / table[3].mean_ms.max(f64::MIN_POSITIVE),
            table,
            max_deviation: deviation_per_cycle.iter().copied().fold(0.0, f64::max),
            deviation_per_cycle,
            objective_distributed: j_d,
            objective_centralized: j_c,
            objective_gap: (j_d - j_c).abs() / j_c.abs().max(f64::MIN_POSITIVE),
            plan_objective_gap: (p_d - p_c).abs() / p_c.abs().max(f64::MIN_POSITIVE),
            node_qps_per_iteration: first.map(|l| l.node_qps.clone()).unwrap_or_default(),
            edge_qps_per_iteration: first.map(|l| l.edge_qps.clone()).unwrap_or_default(),
            distributed: dist.summary.clone(),
            centralized: cent.summary.clone(),
        }
    }

    /// Plain-text table in the layout of a timing-statistics table.
    pub fn table_text(&self) -> String {
        let mut s = format!("{:<22} {:>10} {:>10}\n", "QP computation (ms)", "avg", "std");
        for r in &self.table {
            s.push_str(&format!("{:<22} {:>10.3} {:>10.3}\n", r.label, r.mean_ms, r.std_ms));
        }
        s
    }
}

/// Runs `base` with the distributed and the centralized solver and compares.
pub fn compare(base: &Scenario) -> Result<(ComparisonReport, RunOutput, RunOutput)> {
    let dist = run(&Scenario { solver: SolverKind::Distributed, ..base.clone() })?;
    let cent = run(&Scenario { solver: SolverKind::Centralized, ..base.clone() })?;
    Ok((ComparisonReport::from_runs(&dist, &cent), dist, cent))
}
