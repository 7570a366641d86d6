use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use dragstream_engine::fixtures::{self, Fixture, FixtureReport};
use dragstream_engine::server::{serve, Service};
use dragstream_engine::store::{export_session, import_session};
use dragstream_engine::EngineConfig;

#[derive(Parser)]
#[command(name = "engine", about = "Streaming drag manipulation engine")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Serve the JSON-lines API on a local TCP port.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 7878)]
        port: u16,
        /// Do not persist sessions under $DRAGSTREAM_STORE.
        #[arg(long)]
        no_store: bool,
    },
    /// Run a built-in fixture (or a fixture JSON file) and export its session.
    RunFixture {
        id: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every fixture JSON in a directory (built-ins if it has none) and
    /// print the metrics table.
    Bench {
        #[arg(long)]
        fixtures: PathBuf,
    },
    /// Write the built-in fixtures as JSON files.
    WriteFixtures {
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify an exported archive by replaying its command log.
    Replay { archive: PathBuf },
}

fn load_fixture(id: &str) -> anyhow::Result<Fixture> {
    let path = Path::new(id);
    if path.extension().is_some_and(|e| e == "json") && path.exists() {
        return Ok(Fixture::load(path)?);
    }
    Ok(fixtures::builtin(id)?)
}

fn print_report(report: &FixtureReport) {
    for p in &report.properties {
        let mark = if p.passed { "PASS" } else { "FAIL" };
        println!("{mark} {} {:?}: {}", report.fixture_id, p.property, p.detail);
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

fn main() -> anyhow::Result<()> {
    env_logger::init();
    match Cli::parse().command {
        Cmd::Serve { config, port, no_store } => {
            let cfg = match config {
                Some(p) => EngineConfig::load(&p)?,
                None => EngineConfig::default(),
            };
            let listener = TcpListener::bind(("127.0.0.1", port)).with_context(|| format!("binding port {port}"))?;
            log::info!("listening on {}", listener.local_addr()?);
            serve(Arc::new(Service::new(cfg, !no_store)), listener)?;
        }
        Cmd::RunFixture { id, out } => {
            let fixture = load_fixture(&id)?;
            let (report, run) = fixtures::run_fixture(&fixture)?;
            export_session(&run.session, &out)?;
            std::fs::write(out.join("report.json"), serde_json::to_vec_pretty(&report)?)?;
            print_report(&report);
            if !report.passed {
                bail!("fixture {} failed", report.fixture_id);
            }
        }
        Cmd::Bench { fixtures: dir } => {
            let mut list = Vec::new();
            for entry in std::fs::read_dir(&dir).with_context(|| format!("reading {}", dir.display()))? {
                let path = entry?.path();
                if path.extension().is_some_and(|e| e == "json") {
                    list.push(Fixture::load(&path)?);
                }
            }
            if list.is_empty() {
                for id in fixtures::builtin_ids() {
                    list.push(fixtures::builtin(&id)?);
                }
            }
            list.sort_by(|a, b| a.id.cmp(&b.id));
            println!("{:<24} {:>10} {:>10}  flags", "fixture_id", "objmc", "dai");
            let mut failed = 0;
            for f in &list {
                let (report, _) = fixtures::run_fixture(f)?;
                for row in &report.rows {
                    println!(
                        "{:<24} {:>10} {:>10}  {}",
                        row.fixture_id,
                        fmt_opt(row.objmc),
                        fmt_opt(row.dai),
                        row.flags.join(",")
                    );
                }
                print_report(&report);
                failed += usize::from(!report.passed);
            }
            if failed > 0 {
                bail!("{failed} fixture(s) failed");
            }
        }
        Cmd::WriteFixtures { out } => {
            std::fs::create_dir_all(&out)?;
            for id in fixtures::builtin_ids() {
                let f = fixtures::builtin(&id)?;
                std::fs::write(out.join(format!("{id}.json")), f.to_json())?;
            }
        }
        Cmd::Replay { archive } => {
            let session = import_session(&archive, "replay")?;
            println!("replayed {} commands, {} frames identical", session.log().len(), session.frames().len());
        }
    }
    Ok(())
}
