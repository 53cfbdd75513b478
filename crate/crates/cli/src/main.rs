use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use heisenberg_core::allocator::{compare_strategies, LadderScore, PlanDocument};
use heisenberg_core::analysis::{heisenberg_limit, sql};
use heisenberg_core::campaign::{
    read_results, read_sidecar, run_campaign, CampaignConfig, CampaignOutput, RunOptions, StrategySpec,
};
use heisenberg_core::config::{documented_default, parse_strategy, strategy_id, Config, UpgradeMode};
use heisenberg_core::report::{analyze_campaign, summary_table, FitReport};
use heisenberg_core::Error;

/// Plan, simulate and analyze multi-stage phase-estimation campaigns.
#[derive(Debug, Parser)]
#[command(name = "hscale", version)]
struct Cli {
    /// JSON configuration file; defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimized photon allocations over the budget grid.
    Plan {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Budgets to plan; the configured grid when omitted.
        #[arg(long = "budget", value_delimiter = ',')]
        budgets: Vec<u64>,
        /// Comma-separated strategy ids, e.g. `s1-2` or `s1-only`.
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Run a Monte Carlo campaign into a fresh directory.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        strategy: Option<String>,
        /// Continue an interrupted campaign in `--out`.
        #[arg(long)]
        resume: bool,
        /// Place upgrade points by simulated RMSE instead of the error bound.
        #[arg(long)]
        simulated_upgrades: bool,
    },
    /// Fit report and summary table of a finished campaign.
    Analyze {
        dir: PathBuf,
        /// Report directory; `<dir>.analysis` when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Data behind a figure or the scaling table.
    Reproduce {
        #[arg(value_enum)]
        target: Target,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: bool,
    },
    /// Print the default configuration with inline notes.
    PrintDefaultConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Target {
    Fig3,
    Fig4,
    Table,
}

#[derive(Debug, Serialize)]
struct RunManifest {
    config_path: Option<PathBuf>,
    seed: Option<u64>,
    output_dir: PathBuf,
    subcommand: String,
    timestamp: String,
    artifact_version: String,
}

fn write_manifest(dir: &Path, cli: &Cli, subcommand: &str, seed: Option<u64>) -> anyhow::Result<()> {
    let manifest = RunManifest {
        config_path: cli.config.clone(),
        seed,
        output_dir: dir.to_path_buf(),
        subcommand: subcommand.to_string(),
        timestamp: chrono::Utc::now().to_rfc3339(),
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text + "\n").map_err(Error::from)?;
    Ok(())
}

fn load_config(cli: &Cli) -> anyhow::Result<Config> {
    let config = match &cli.config {
        Some(path) => {
            if !path.exists() {
                return Err(Error::Io(format!("{}: no such file", path.display())).into());
            }
            Config::load(path)?
        }
        None => Config::default(),
    };
    Ok(config)
}

fn apply_strategy(config: &mut Config, strategy: &Option<String>) -> anyhow::Result<()> {
    if let Some(list) = strategy {
        config.campaign.strategies = list
            .split(',')
            .map(|id| Ok(strategy_id(&parse_strategy(id.trim())?)))
            .collect::<Result<_, Error>>()?;
    }
    config.validate()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct PlanSet {
    ranking: Vec<LadderScore>,
    plans: Vec<StrategyPlans>,
}

#[derive(Debug, Serialize)]
struct StrategyPlans {
    strategy_id: String,
    upgrade_points: Vec<Option<u64>>,
    plans: Vec<PlanDocument>,
}

fn cmd_plan(cli: &Cli, out: &Option<PathBuf>, budgets: &[u64], strategy: &Option<String>) -> anyhow::Result<()> {
    let mut config = load_config(cli)?;
    apply_strategy(&mut config, strategy)?;
    let mut campaign = CampaignConfig::from_config(&config)?;
    if !budgets.is_empty() {
        let mut grid = budgets.to_vec();
        grid.sort_unstable();
        grid.dedup();
        campaign.grid = grid;
    }
    let prepared = heisenberg_core::campaign::prepare(&campaign)?;
    let mut plans = Vec::new();
    for s in &prepared {
        let docs = campaign
            .grid
            .iter()
            .map(|&n| Ok(s.catalog.plan(n)?.document()))
            .collect::<Result<Vec<_>, Error>>()?;
        plans.push(StrategyPlans {
            strategy_id: s.id.clone(),
            upgrade_points: s.catalog.upgrade_points.clone(),
            plans: docs,
        });
    }
    let vis = config.visibilities.clone();
    let ranking = compare_strategies(&config.ladder.multipliers, config.ladder.b, |s| vis.of(s))?;
    for s in &plans {
        println!("{}  upgrades {:?}", s.strategy_id, s.upgrade_points);
        for p in &s.plans {
            println!("  N {:>6}  s {:?}  n {:?}  bound {:.6e}", p.budget, p.s, p.n, p.bound);
        }
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(Error::from)?;
        write_json(&dir.join("plans.json"), &PlanSet { ranking, plans })?;
        write_manifest(dir, cli, "plan", None)?;
    }
    Ok(())
}

fn campaign_from(cli: &Cli, seed: Option<u64>, strategy: &Option<String>) -> anyhow::Result<(Config, CampaignConfig)> {
    let mut config = load_config(cli)?;
    if let Some(seed) = seed {
        config.campaign.seed = seed;
    }
    apply_strategy(&mut config, strategy)?;
    let campaign = CampaignConfig::from_config(&config)?;
    Ok((config, campaign))
}

fn execute(campaign: &CampaignConfig, dir: &Path, resume: bool) -> anyhow::Result<CampaignOutput> {
    let out = run_campaign(campaign, dir, RunOptions { resume, stop_after_blocks: None })?;
    Ok(out)
}

fn cmd_simulate(
    cli: &Cli,
    out: &Path,
    seed: Option<u64>,
    strategy: &Option<String>,
    resume: bool,
    simulated_upgrades: bool,
) -> anyhow::Result<()> {
    let (_, mut campaign) = campaign_from(cli, seed, strategy)?;
    if simulated_upgrades && campaign.upgrade == UpgradeMode::Bound {
        campaign.upgrade = UpgradeMode::Simulated { runs: 50, angles: 5 };
    }
    let result = execute(&campaign, out, resume)?;
    write_manifest(out, cli, "simulate", Some(campaign.seed))?;
    println!(
        "{} runs, {} rows written to {}",
        result.records.len(),
        result.rows.len(),
        out.display()
    );
    Ok(())
}

fn cmd_analyze(cli: &Cli, dir: &Path, out: &Option<PathBuf>) -> anyhow::Result<()> {
    let config = load_config(cli)?;
    let rows = read_results(&dir.join(heisenberg_core::campaign::RESULTS_FILE))?;
    let sidecar = read_sidecar(dir)?;
    let report = analyze_campaign(&rows, &sidecar, &config.analysis)?;
    let out = out.clone().unwrap_or_else(|| {
        let mut name = dir.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".analysis");
        dir.with_file_name(name)
    });
    fs::create_dir_all(&out).map_err(Error::from)?;
    write_json(&out.join("fit_report.json"), &report)?;
    let table = summary_table(&report);
    fs::write(out.join("summary.txt"), &table).map_err(Error::from)?;
    write_manifest(&out, cli, "analyze", Some(sidecar.seed))?;
    print!("{table}");
    Ok(())
}

fn cmd_reproduce(cli: &Cli, target: Target, seed: u64, out: &Path, resume: bool) -> anyhow::Result<()> {
    let mut config = load_config(cli)?;
    config.campaign.seed = seed;
    let full = strategy_id(&config.ladder.multipliers);
    config.campaign.strategies = match target {
        // one curve per ladder prefix: s1, s1-2, s1-2-11, ...
        Target::Fig3 => (1..=config.ladder.multipliers.len())
            .map(|k| strategy_id(&config.ladder.multipliers[..k]))
            .collect(),
        Target::Fig4 | Target::Table => vec![full.clone()],
    };
    config.validate()?;
    let campaign = CampaignConfig::from_config(&config)?;
    let campaign_dir = out.join("campaign");
    let result = execute(&campaign, &campaign_dir, resume)?;
    write_manifest(&campaign_dir, cli, "reproduce", Some(seed))?;
    let sidecar = read_sidecar(&campaign_dir)?;
    let report = analyze_campaign(&result.rows, &sidecar, &config.analysis)?;

    match target {
        Target::Fig3 => write_fig3(out, &campaign, &result, &report)?,
        Target::Fig4 => write_fig4(out, &result, &report, &full)?,
        Target::Table => write_table(out, &report)?,
    }
    write_json(&out.join("fit_report.json"), &report)?;
    write_manifest(out, cli, &format!("reproduce {}", serde_json::to_value(target)?.as_str().unwrap_or("")), Some(seed))?;
    print!("{}", summary_table(&report));
    Ok(())
}

fn csv_write(path: &Path, header: &[String], rows: &[Vec<String>]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
    w.write_record(header).map_err(Error::from)?;
    for r in rows {
        w.write_record(r).map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    Ok(())
}

fn write_fig3(out: &Path, campaign: &CampaignConfig, result: &CampaignOutput, report: &FitReport) -> anyhow::Result<()> {
    let ids: Vec<&StrategySpec> = campaign.strategies.iter().collect();
    let mut header = vec!["N".to_string(), "sql".into(), "hl".into()];
    for s in &ids {
        header.push(format!("rmse_{}", s.id));
        header.push(format!("error_bar_{}", s.id));
    }
    let curves: Vec<_> = ids.iter().map(|s| result.curve(&s.id)).collect();
    let rows: Vec<Vec<String>> = campaign
        .grid
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let mut row = vec![n.to_string(), sql(n as f64).to_string(), heisenberg_limit(n as f64).to_string()];
            for c in &curves {
                row.push(c[i].rmse.to_string());
                row.push(c[i].sigma.to_string());
            }
            row
        })
        .collect();
    csv_write(&out.join("fig3.csv"), &header, &rows)?;
    // cumulative exponent of the full ladder, as in the global scan
    if let Some(last) = report.strategies.last() {
        let header: Vec<String> = ["window_lo", "window_hi", "alpha", "alpha_sigma", "C", "r_squared"].map(String::from).to_vec();
        let rows: Vec<Vec<String>> = last
            .global_batches
            .iter()
            .map(|f| {
                vec![
                    f.window.0.to_string(),
                    f.window.1.to_string(),
                    f.alpha.to_string(),
                    f.alpha_sigma.to_string(),
                    f.c.to_string(),
                    f.r_squared.to_string(),
                ]
            })
            .collect();
        csv_write(&out.join("fig3_global_scan.csv"), &header, &rows)?;
    }
    Ok(())
}

fn write_fig4(out: &Path, result: &CampaignOutput, report: &FitReport, full: &str) -> anyhow::Result<()> {
    let strategy = &result.strategies[0];
    let header: Vec<String> = ["N", "prefix", "rmse", "error_bar", "db_below_sql", "sql", "hl"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = result
        .rows
        .iter()
        .filter(|r| r.strategy_id == full && r.angle_index.is_none())
        .map(|r| {
            vec![
                r.budget.to_string(),
                strategy.catalog.active_prefix(r.budget).unwrap_or(0).to_string(),
                r.rmse.to_string(),
                r.error_bar.to_string(),
                r.db_below_sql.to_string(),
                sql(r.budget as f64).to_string(),
                heisenberg_limit(r.budget as f64).to_string(),
            ]
        })
        .collect();
    csv_write(&out.join("fig4.csv"), &header, &rows)?;
    let header: Vec<String> = ["region_lo", "region_hi", "window_lo", "window_hi", "alpha", "alpha_sigma", "r_squared"]
        .map(String::from)
        .to_vec();
    let mut local = Vec::new();
    for region in &report.strategies[0].regions {
        for f in &region.batches {
            local.push(vec![
                region.region.0.to_string(),
                region.region.1.to_string(),
                f.window.0.to_string(),
                f.window.1.to_string(),
                f.alpha.to_string(),
                f.alpha_sigma.to_string(),
                f.r_squared.to_string(),
            ]);
        }
    }
    csv_write(&out.join("fig4_local_scan.csv"), &header, &local)?;
    Ok(())
}

fn write_table(out: &Path, report: &FitReport) -> anyhow::Result<()> {
    let header: Vec<String> = ["region_lo", "region_hi", "alpha", "alpha_sigma", "C", "r_squared", "points", "alpha_1_within_3sigma"]
        .map(String::from)
        .to_vec();
    let rows: Vec<Vec<String>> = report.strategies[0]
        .regions
        .iter()
        .map(|r| match &r.fit {
            Some(f) => vec![
                r.region.0.to_string(),
                r.region.1.to_string(),
                f.alpha.to_string(),
                f.alpha_sigma.to_string(),
                f.c.to_string(),
                f.r_squared.to_string(),
                f.points.to_string(),
                r.heisenberg_compatible.to_string(),
            ],
            None => vec![r.region.0.to_string(), r.region.1.to_string(), String::new(), String::new(), String::new(), String::new(), "0".into(), "false".into()],
        })
        .collect();
    csv_write(&out.join("table.csv"), &header, &rows)?;
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            bail!(Error::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring worker threads")?;
    }
    match &cli.command {
        Command::Plan { out, budgets, strategy } => cmd_plan(cli, out, budgets, strategy),
        Command::Simulate { out, seed, strategy, resume, simulated_upgrades } => {
            cmd_simulate(cli, out, *seed, strategy, *resume, *simulated_upgrades)
        }
        Command::Analyze { dir, out } => cmd_analyze(cli, dir, out),
        Command::Reproduce { target, seed, out, resume } => cmd_reproduce(cli, *target, *seed, out, *resume),
        Command::PrintDefaultConfig => {
            println!("{}", serde_json::to_string_pretty(&documented_default())?);
            Ok(())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Io(_) => 3,
                _ => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
