//! `cellmorph` command-line tool.
//!
//! Exit codes: 0 success, 1 failed run or check, 2 usage error.

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cellmorph::engine::{run_script, Design, EngineConfig, DEFAULT_BUDGET};
use cellmorph::io::{self, StructureFile};
use cellmorph::linalg::DEFAULT_RANK_TOL;
use cellmorph::par::Execution;
use cellmorph::placement::{placement_for, sample_surface, PlacementRequest, Region};
use cellmorph::structure::{audit, count_report};
use cellmorph::{Member, MemberRole, MorphoError, NodeId, Point3};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cellmorph", version, about = "Grow tensegrity structures from cells by adhesion and fusion")]
struct Cli {
    #[command(flatten)]
    opts: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalOpts {
    /// Relative singular-value threshold for rank decisions.
    #[arg(long, global = true, default_value_t = DEFAULT_RANK_TOL)]
    tol: f64,
    /// Candidate budget of the virtual-cell search.
    #[arg(long, global = true, default_value_t = DEFAULT_BUDGET)]
    budget: usize,
    /// Seed for surface sampling.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Run a script and write the resulting structure.
    Run {
        script: PathBuf,
        /// Output structure file (`.toml` or `.json`).
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Print the step log as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Count report and invariant audit of a structure file.
    Check { structure: PathBuf },
    /// Print the self-stress basis and typology.
    Stress { structure: PathBuf },
    /// Fusion surface for removing members of the newest cell, as JSON.
    Surface {
        structure: PathBuf,
        /// Members to remove, e.g. `2-4,3-5`.
        #[arg(long, value_delimiter = ',', required = true)]
        fuse: Vec<Member>,
        /// Node held in place when the members share a node.
        #[arg(long)]
        fix: Option<u32>,
        /// Number of surface points to sample.
        #[arg(long, default_value_t = 32)]
        count: usize,
    },
    /// Export a structure.
    Export {
        structure: PathBuf,
        #[arg(long, required = true)]
        obj: PathBuf,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long, env = "CELLMORPH_PORT", default_value_t = 8080)]
        port: u16,
        /// Listen on all interfaces instead of localhost.
        #[arg(long)]
        public: bool,
        /// Directory of static files served next to the API.
        #[arg(long)]
        assets: Option<PathBuf>,
    },
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<MorphoError> for Failure {
    fn from(e: MorphoError) -> Self {
        let code = if matches!(e.root(), MorphoError::Usage(_)) { 2 } else { 1 };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn failed(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_structure(path: &Path) -> Result<Design, Failure> {
    let text = read(path)?;
    let design = if path.extension().is_some_and(|e| e == "json") {
        let file: StructureFile =
            serde_json::from_str(&text).map_err(|e| failed(format!("{}: {e}", path.display())))?;
        file.into_design()
    } else {
        io::parse_structure(&text)
    };
    design.map_err(|e| failed(format!("{}: {e}", path.display())))
}

fn write_structure(design: &Design, path: &Path) -> Result<(), Failure> {
    let text = if path.extension().is_some_and(|e| e == "json") {
        serde_json::to_string_pretty(&StructureFile::from_design(design)).map_err(|e| failed(e.to_string()))?
    } else {
        io::structure_to_string(design)?
    };
    std::fs::write(path, text).map_err(|e| failed(format!("{}: {e}", path.display())))
}

fn config(opts: &GlobalOpts) -> Result<EngineConfig, Failure> {
    if !(opts.tol > 0.0 && opts.tol < 1.0) {
        return Err(usage("--tol must lie in (0, 1)"));
    }
    Ok(EngineConfig {
        rank_tol: opts.tol,
        budget: opts.budget,
        execution: if opts.sequential { Execution::Sequential } else { Execution::Parallel },
        ..EngineConfig::default()
    })
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = config(&cli.opts)?;
    match cli.command {
        Command::Run { script, output, json } => {
            let parsed = io::parse_script(&read(&script)?).map_err(|e| failed(format!("{}: {e}", script.display())))?;
            let result = run_script(&parsed, &cfg);
            let (run, error) = match result {
                Ok(run) => (run, None),
                Err(f) => (f.partial, Some(f.error)),
            };
            if json {
                println!("{}", serde_json::to_string_pretty(&run.log).map_err(|e| failed(e.to_string()))?);
            } else {
                println!("{:>4}  {:<7} {:>4} {:>4} {:>5} {:>5} {:>5} {:>5}  cells", "step", "op", "dE", "dV", "pred", "obs", "dimW", "mech");
                for l in &run.log {
                    let cells: Vec<String> =
                        l.cells_created.iter().map(|c| format!("{}:{}", c.id, format!("{:?}", c.kind).to_lowercase())).collect();
                    println!(
                        "{:>4}  {:<7} {:>4} {:>4} {:>+5} {:>+5} {:>5} {:>5}  {}{}",
                        l.index,
                        l.op,
                        l.delta_edges,
                        l.delta_nodes,
                        l.predicted_delta_dim,
                        l.observed_delta_dim,
                        l.dim_w,
                        l.mechanisms,
                        cells.join(" "),
                        if l.generic { "" } else { "  (non-generic)" }
                    );
                }
                let s = &run.design.state;
                println!("nodes {}  members {}  dim_W {}", s.nodes().len(), s.members().len(), s.dim_w());
            }
            if let Some(e) = error {
                return Err(failed(format!("{}: {e}", script.display())));
            }
            if let Some(out) = output {
                write_structure(&run.design, &out)?;
            }
            Ok(())
        }
        Command::Check { structure } => {
            let design = load_structure(&structure)?;
            let s = &design.state;
            let report = count_report(s, cfg.rank_tol)?;
            println!(
                "nodes {}  members {}  dim_W {}  rank(A) {}  mechanisms {}  laman bound {}",
                report.nodes, report.members, report.dim_w, report.rank_a, report.mechanisms, report.laman_bound
            );
            let mut problems = Vec::new();
            if report.dim_w != s.dim_w() as i64 {
                problems.push(format!("basis-completeness: file holds {} states, nullspace has {}", s.dim_w(), report.dim_w));
            }
            for v in audit(s, cfg.rank_tol)? {
                problems.push(format!("{}: {}", v.invariant, v.detail));
            }
            if let Err(e) = design.morpho.check() {
                problems.push(format!("morpho-graph: {e}"));
            }
            if problems.is_empty() {
                println!("ok");
                Ok(())
            } else {
                for p in &problems {
                    println!("violation {p}");
                }
                Err(failed(format!("{} invariant violation(s)", problems.len())))
            }
        }
        Command::Stress { structure } => {
            let design = load_structure(&structure)?;
            let s = &design.state;
            print!("{:<10} {:<8}", "member", "role");
            for k in s.origins() {
                print!(" {:>12}", k.to_string());
            }
            println!();
            for (i, (m, r)) in s.members().iter().zip(s.typology()).enumerate() {
                print!("{:<10} {:<8}", m.to_string(), r.as_str());
                for col in s.basis() {
                    print!(" {:>12.6}", col[i]);
                }
                println!();
            }
            let count = |r: MemberRole| s.typology().iter().filter(|t| **t == r).count();
            println!("struts {}  cables {}", count(MemberRole::Strut), count(MemberRole::Cable));
            Ok(())
        }
        Command::Surface { structure, fuse, fix, count } => {
            if count == 0 {
                return Err(usage("--count must be at least 1"));
            }
            let design = load_structure(&structure)?;
            let req = PlacementRequest {
                remove: fuse,
                fixed: fix.map(NodeId),
            };
            let placement = placement_for(&design, &req)?;
            let pts: Vec<Point3> = design.state.nodes().values().copied().collect();
            let region = Region::around(&pts, 0.5 * design.state.diameter());
            let samples = match placement.constraints.as_slice() {
                [one] => sample_surface(one, count, &region, cli.opts.seed, cfg.execution)?,
                _ => Vec::new(),
            };
            let out = serde_json::json!({
                "cell": placement.cell,
                "free_node": placement.free_node,
                "current": placement.current,
                "constraints": placement.constraints,
                "polynomials": placement.constraints.iter().map(|c| c.quadric_polynomial()).collect::<Vec<_>>(),
                "bilinear": placement.bilinear,
                "target": placement.target,
                "samples": samples,
            });
            println!("{}", serde_json::to_string_pretty(&out).map_err(|e| failed(e.to_string()))?);
            Ok(())
        }
        Command::Export { structure, obj } => {
            let design = load_structure(&structure)?;
            io::export_obj(&design.state, &obj)?;
            Ok(())
        }
        Command::Serve { port, public, assets } => {
            let ip = if public { IpAddr::V4(Ipv4Addr::UNSPECIFIED) } else { IpAddr::V4(Ipv4Addr::LOCALHOST) };
            let state = cellmorph_service::AppState::new(cfg);
            let rt = tokio::runtime::Runtime::new().map_err(|e| failed(e.to_string()))?;
            rt.block_on(cellmorph_service::serve(SocketAddr::new(ip, port), state, assets))
                .map_err(|e| failed(format!("serve: {e}")))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.opts.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
