use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use squadmarket_core::auction::AuctionSetup;
use squadmarket_core::model_io::{load_coefficients, load_league_registry, load_player_table, load_scenario_config, Directives};
use squadmarket_core::solvers::{build_problem, compare_solvers, BenchInstance, Method};
use squadmarket_service::{default_fixtures_dir, router, run_auction, run_plan, AppState, AuctionRequest, ServiceConfig, DATA_DIR_ENV};

#[derive(Parser)]
#[command(name = "squadmarket", about = "Transfer planning and negotiation simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the REST API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Run and dataset storage; defaults to $SQUADMARKET_DATA_DIR or ./data.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        fixtures: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        workers: usize,
        #[arg(long, default_value_t = 16)]
        queue: usize,
    },
    /// Solve one planning scenario.
    Plan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        players: PathBuf,
        #[arg(long)]
        coeffs: PathBuf,
        /// Club and league metadata; defaults to the bundled league.
        #[arg(long)]
        clubs: Option<PathBuf>,
        /// Overrides the scenario's solver seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate negotiations for one auction setup.
    Auction {
        #[arg(long)]
        setup: PathBuf,
        #[arg(long, default_value_t = 1)]
        rounds: usize,
        #[arg(long, default_value_t = 2000)]
        nsim: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare search backends over a grid of quality weights.
    Bench {
        #[arg(long, default_value = "ga,sa,hc")]
        methods: String,
        /// `start:end:step` of λ3.
        #[arg(long, default_value = "0.1:0.9:0.1")]
        lambda_grid: String,
        /// Scenario, players, coefficients and clubs default to the bundled league.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        players: Option<PathBuf>,
        #[arg(long)]
        coeffs: Option<PathBuf>,
        #[arg(long)]
        clubs: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_grid(spec: &str) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<f64> = spec.split(':').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().context("grid must be start:end:step")?;
    let [start, end, step] = parts[..] else { bail!("grid must be start:end:step") };
    if !(step > 0.0) || end < start {
        bail!("grid needs step > 0 and end ≥ start");
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| ((start + k as f64 * step) * 1e9).round() / 1e9).collect())
}

fn emit(value: &impl serde::Serialize, out: Option<&Path>) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let fixtures = default_fixtures_dir();
    match cli.command {
        Command::Serve { addr, data_dir, fixtures: fx, workers, queue } => {
            let mut config = ServiceConfig::from_env();
            if let Some(d) = data_dir {
                config.data_dir = d;
            }
            if let Some(f) = fx {
                config.fixtures_dir = f;
            }
            config.workers = workers;
            config.queue_capacity = queue;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                eprintln!("data directory {} (override with --data-dir or {DATA_DIR_ENV})", config.data_dir.display());
                let state = AppState::start(config)?;
                let listener = tokio::net::TcpListener::bind(&addr).await?;
                eprintln!("listening on http://{addr}");
                axum::serve(listener, router(state)).await?;
                Ok(())
            })
        }
        Command::Plan { config, players, coeffs, clubs, seed, out } => {
            let mut cfg = load_scenario_config(&config)?;
            if let Some(s) = seed {
                cfg.solver.seed = s;
            }
            let players = load_player_table(&players)?;
            let registry = load_league_registry(clubs.unwrap_or_else(|| fixtures.join("league/clubs.json")))?;
            let coefficients = load_coefficients(&coeffs)?;
            let plan = run_plan(&players, &registry, &coefficients, &cfg, None)?;
            eprintln!(
                "{} buys, {} sales, cost {:.2} M€, feasible: {}",
                plan.buys.len(),
                plan.sells.len(),
                plan.breakdown.cost,
                plan.feasible
            );
            emit(&plan, out.as_deref())
        }
        Command::Auction { setup, rounds, nsim, seed, out } => {
            let text = std::fs::read_to_string(&setup).with_context(|| format!("reading {}", setup.display()))?;
            let setup: AuctionSetup = serde_json::from_str(&text)?;
            let stats = run_auction(&AuctionRequest { setup, n_sim: nsim, rounds, seed }, None)?;
            eprintln!("sale probability {:.1}%, mean price {:?}", 100.0 * stats.sale_probability, stats.prices.mean);
            emit(&stats, out.as_deref())
        }
        Command::Bench { methods, lambda_grid, config, players, coeffs, clubs, seed, out } => {
            let methods: Vec<Method> = methods.split(',').map(str::parse).collect::<Result<_, _>>().map_err(anyhow::Error::msg)?;
            let grid = parse_grid(&lambda_grid)?;
            let mut cfg = load_scenario_config(config.unwrap_or_else(|| fixtures.join("league/scenario.json")))?;
            if let Some(s) = seed {
                cfg.solver.seed = s;
            }
            let players = load_player_table(players.unwrap_or_else(|| fixtures.join("league/players.csv")))?;
            let registry = load_league_registry(clubs.unwrap_or_else(|| fixtures.join("league/clubs.json")))?;
            let coefficients = load_coefficients(coeffs.unwrap_or_else(|| fixtures.join("coefficients.json")))?;
            let problem = build_problem(&players, &registry, &coefficients, &cfg)?;
            let inst = BenchInstance { name: cfg.focal_club.clone(), problem, directives: Directives::default() };
            let report = compare_solvers(&[inst], &methods, &grid, &cfg.solver)?;
            for m in &methods {
                let feasible = report.records.iter().filter(|r| r.method == *m && r.feasible).count();
                eprintln!("{m}: feasible {feasible}/{}", grid.len());
            }
            emit(&report, out.as_deref())
        }
    }
}
