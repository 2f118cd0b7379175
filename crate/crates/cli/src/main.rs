use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use swarm_dmpc::harness::{
    self, compare, parse_override, write_csv, write_jsonl, write_timings, RunOutput, RunSummary, Scenario, Simulation,
};
use swarm_dmpc::planner::{build_centralized_qp, build_edge_qp, build_edge_set, with_consensus_hessian};

#[derive(Parser)]
#[command(name = "swarm-dmpc", version, about = "Distributed CBF-MPC for unicycle teams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write its logs.
    Run(Common),
    /// Run a scenario with the distributed and the centralized solver.
    Compare(Common),
    /// Check a scenario against the schema and the initial-safety rules.
    Validate(Common),
    /// Write the first cycle's node, edge and centralized QPs.
    DumpQp(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario JSON file.
    scenario: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: out/<scenario name>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted-path override such as admm.rho=20; repeatable.
    #[arg(long = "override", value_name = "K=V")]
    overrides: Vec<String>,
    #[arg(long, value_parser = ["distributed", "centralized", "decoupled"])]
    solver: Option<String>,
    #[arg(long)]
    admm_iters: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

impl Common {
    fn overrides(&self) -> anyhow::Result<Vec<(String, String)>> {
        let mut out = self.overrides.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>, _>>()?;
        if let Some(s) = self.seed {
            out.push(("seed".into(), s.to_string()));
        }
        if let Some(s) = &self.solver {
            out.push(("solver".into(), format!("\"{s}\"")));
        }
        if let Some(k) = self.admm_iters {
            out.push(("admm.max_iter".into(), k.to_string()));
        }
        Ok(out)
    }

    fn load(&self) -> anyhow::Result<Scenario> {
        if !self.scenario.is_file() {
            bail!("scenario file {} does not exist", self.scenario.display());
        }
        Ok(Scenario::load(&self.scenario, &self.overrides()?)?)
    }

    fn out_dir(&self, sc: &Scenario) -> anyhow::Result<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| Path::new("out").join(&sc.name));
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }
}

fn echo_config(sc: &Scenario) {
    let radius = |r: Option<f64>| r.map_or("all".to_string(), |v| v.to_string());
    println!(
        "effective config: solver={} agents={} N={} ts={} rho={} admm_iters={} d_th={} alpha={} edge_cbf={} \
         obstacle_radius={} edge_radius={} qp_max_iter={} seed={}",
        sc.solver,
        sc.agents.len(),
        sc.horizon,
        sc.ts,
        sc.admm.rho,
        sc.admm.max_iter,
        sc.safety.d_th,
        sc.safety.alpha,
        serde_json::to_value(sc.edge_cbf).map(|v| v.as_str().unwrap_or_default().to_string()).unwrap_or_default(),
        radius(sc.obstacle_activation_radius),
        radius(sc.edge_activation_radius),
        sc.qp.max_iter,
        sc.seed,
    );
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".to_string(), |x| format!("{x:.4}"))
}

fn print_summary(s: &RunSummary) {
    println!("scenario        {} ({} solver)", s.name, s.solver);
    println!("cycles          {}", s.cycles);
    let arrivals: Vec<String> = s
        .arrivals
        .iter()
        .enumerate()
        .map(|(i, a)| format!("{i}:{}", a.map_or("no".to_string(), |c| c.to_string())))
        .collect();
    println!("arrivals        {}", arrivals.join(" "));
    println!("min h_obs       {}", fmt_opt(s.min_h_obs));
    println!("min h_edge      {}", fmt_opt(s.min_h_edge));
    println!("min distance    {}", fmt_opt(s.min_pair_distance));
    println!("planning ms     {:.3} mean, {:.3} std", s.planning_ms_mean, s.planning_ms_std);
    println!("degraded        {} cycles, {} agent-steps", s.degraded_cycles, s.degraded_agent_steps);
    for p in &s.pushes {
        println!(
            "push            agent {} cycles {}-{}: min h {}, {}",
            p.agent,
            p.start_cycle,
            p.end_cycle,
            fmt_opt(p.min_h),
            match p.recovery_cycles {
                Some(r) => format!("recovered {r} cycles after push end"),
                None => "not recovered".to_string(),
            }
        );
    }
    println!("safety          {}", if s.safety_ok { "ok" } else { "VIOLATED" });
}

fn write_run(dir: &Path, run: &RunOutput, prefix: &str) -> anyhow::Result<()> {
    write_jsonl(&dir.join(format!("{prefix}log.jsonl")), &run.logs)?;
    write_csv(&dir.join(format!("{prefix}trajectory.csv")), &run.logs)?;
    write_timings(&dir.join(format!("{prefix}timings.jsonl")), &run.logs)?;
    std::fs::write(dir.join(format!("{prefix}summary.json")), serde_json::to_string_pretty(&run.summary)?)?;
    Ok(())
}

fn cmd_run(c: &Common) -> anyhow::Result<ExitCode> {
    let sc = c.load()?;
    if !c.quiet {
        echo_config(&sc);
    }
    let dir = c.out_dir(&sc)?;
    let out = harness::run(&sc)?;
    std::fs::write(dir.join("scenario.json"), sc.to_json_pretty()?)?;
    write_run(&dir, &out, "")?;
    if !c.quiet {
        print_summary(&out.summary);
        println!("wrote           {}", dir.display());
    }
    Ok(if out.summary.safety_ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_compare(c: &Common) -> anyhow::Result<ExitCode> {
    let sc = c.load()?;
    if !c.quiet {
        echo_config(&sc);
    }
    let dir = c.out_dir(&sc)?;
    let (report, dist, cent) = compare(&sc)?;
    write_run(&dir, &dist, "distributed_")?;
    write_run(&dir, &cent, "centralized_")?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    if !c.quiet {
        print!("{}", report.table_text());
        println!("node QPs per iteration  {:?}", report.node_qps_per_iteration.first().copied().unwrap_or(0));
        println!("edge QPs per iteration  {:?}", report.edge_qps_per_iteration.first().copied().unwrap_or(0));
        println!("ADMM / centralized      {:.3}", report.time_ratio);
        println!("ADMM single-processor   {:.3} ms", report.admm_sequential_ms_mean);
        println!("trajectory deviation    {:.6} m (max over cycles)", report.max_deviation);
        println!(
            "closed-loop cost        {:.4} distributed, {:.4} centralized, gap {:.3}%",
            report.objective_distributed,
            report.objective_centralized,
            100.0 * report.objective_gap
        );
        println!("planned objective gap   {:.3}%", 100.0 * report.plan_objective_gap);
        println!("wrote                   {}", dir.display());
    }
    let ok = report.distributed.safety_ok && report.centralized.safety_ok;
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_validate(c: &Common) -> anyhow::Result<ExitCode> {
    let sc = c.load()?;
    if !c.quiet {
        println!(
            "ok: {} ({} agents, {} obstacles, {} cycles)",
            sc.name,
            sc.agents.len(),
            sc.resolved_obstacles()?.len(),
            sc.duration
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_dump_qp(c: &Common) -> anyhow::Result<ExitCode> {
    let sc = c.load()?;
    let dir = c.out_dir(&sc)?;
    let sim = Simulation::new(&sc)?;
    let prepared = sim.prepare()?;
    let cfg = sc.planner_config();
    let graph = sc.graph()?;
    let (refs, problems): (Vec<_>, Vec<_>) = prepared.into_iter().map(|(r, p, _)| (r, p)).unzip();

    let node = with_consensus_hessian(&problems[0].local.problem, sc.admm.rho, graph.neighbors(0).len())?;
    std::fs::write(dir.join("node_qp.json"), node.to_json()?)?;
    println!("node QP (agent 0): {} variables", node.dim());
    if let Some(&(i, j)) = graph.edges().first() {
        let set = build_edge_set(&problems[i].op, &problems[j].op, &cfg)?;
        let edge = build_edge_qp(&set, cfg.weights.phi, sc.admm.rho, &problems[i].op.xi(), &problems[j].op.xi())?;
        std::fs::write(dir.join("edge_qp.json"), edge.to_json()?)?;
        println!("edge QP ({i}-{j}): {} variables ({} slack)", edge.dim(), set.slack_dim);
    }
    let ops: Vec<_> = problems.iter().map(|p| p.op.clone()).collect();
    let cq = build_centralized_qp(&ops, &refs, sim.obstacles(), graph.edges(), &cfg)?;
    std::fs::write(dir.join("centralized_qp.json"), cq.problem.to_json()?)?;
    println!("centralized QP: {} variables", cq.problem.dim());
    println!("wrote {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("SWARM_DMPC_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().with_context(|| format!("SWARM_DMPC_THREADS={raw} is not a count"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Compare(c) => cmd_compare(c),
        Command::Validate(c) => cmd_validate(c),
        Command::DumpQp(c) => cmd_dump_qp(c),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
