use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use kinesis_core::lfd::execute::NoFeedback;
use kinesis_core::lfd::primitive::PrimitiveLibrary;
use kinesis_core::lfd::TaskProgram;
use kinesis_core::{BoardWorld, Pose};
use kinesis_session::bench::{self, AblationArm, AblationSetup};
use kinesis_session::demos::board_demonstrations;
use kinesis_session::server::{ServeOptions, Server};
use kinesis_session::{Session, TeachCommand};

#[derive(Parser)]
#[command(name = "kinesis", about = "Learning-from-demonstration manipulation workbench")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Built-in board demonstrations.
    Demo {
        #[command(subcommand)]
        cmd: DemoCmd,
    },
    /// Localize the board, then run a task program.
    Run {
        /// Program JSON; defaults to the built-in board program.
        #[arg(long)]
        program: Option<PathBuf>,
        /// Directory of primitive files; defaults to the built-in demonstrations.
        #[arg(long)]
        library: Option<PathBuf>,
        /// Bench pose name or `x,y,yaw_deg` offset from the reference pose.
        #[arg(long, default_value = "reference")]
        pose: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Skip localization and trust the reference estimate.
        #[arg(long)]
        no_localize: bool,
        /// Per-step results as CSV.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the localization pipeline once and print the estimates.
    Localize {
        #[arg(long, default_value = "reference")]
        pose: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        ablate_icp: bool,
        #[arg(long)]
        ablate_haptic: bool,
    },
    /// Batch experiments; each writes a CSV and prints a summary.
    Bench {
        #[command(subcommand)]
        cmd: BenchCmd,
    },
    /// WebSocket endpoint for teaching consoles.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8765")]
        addr: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Resume from a saved session instead of starting fresh.
        #[arg(long)]
        session: Option<PathBuf>,
        #[arg(long, default_value_t = 30.0)]
        broadcast_hz: f64,
        /// Run the control loop as fast as possible.
        #[arg(long)]
        fast: bool,
    },
}

#[derive(Subcommand)]
enum DemoCmd {
    /// Write the demonstrations as primitive files plus `program.json`.
    Record {
        #[arg(long, default_value = "demos")]
        out: PathBuf,
    },
    /// List the demonstrated primitives.
    List,
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Board subtasks across poses and trials.
    #[command(name = "tableI", alias = "table-i")]
    TableI {
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "tableI.csv")]
        out: PathBuf,
    },
    /// Visual-only versus haptic-refined insertion.
    #[command(name = "tableII", alias = "table-ii")]
    TableII {
        #[arg(long, default_value_t = 25)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "tableII.csv")]
        out: PathBuf,
    },
    /// Peg insertion from random lateral offsets.
    Spiral {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 8.0)]
        radius_mm: f64,
        #[arg(long, default_value = "spiral.csv")]
        out: PathBuf,
    },
    /// Localization accuracy over random board placements.
    Localization {
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 10.0)]
        max_shift_mm: f64,
        #[arg(long, default_value_t = 5.0)]
        max_yaw_deg: f64,
        #[arg(long, default_value = "localization.csv")]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Demo { cmd } => demo(cmd),
        Cmd::Run {
            program,
            library,
            pose,
            seed,
            no_localize,
            report,
        } => run(program, library, &pose, seed, no_localize, report),
        Cmd::Localize {
            pose,
            seed,
            ablate_icp,
            ablate_haptic,
        } => localize(&pose, seed, ablate_icp, ablate_haptic),
        Cmd::Bench { cmd } => bench_cmd(cmd),
        Cmd::Serve {
            addr,
            seed,
            session,
            broadcast_hz,
            fast,
        } => serve(&addr, seed, session, broadcast_hz, fast),
    }
}

fn builtin() -> Result<(PrimitiveLibrary, TaskProgram)> {
    board_demonstrations(&BoardWorld::task_board()).context("built-in demonstrations are unreachable")
}

fn demo(cmd: DemoCmd) -> Result<()> {
    let (library, program) = builtin()?;
    match cmd {
        DemoCmd::Record { out } => {
            library.save_dir(&out)?;
            program.save(&out.join("program.json"))?;
            println!("wrote {} primitives and program.json to {}", library.len(), out.display());
        }
        DemoCmd::List => {
            for p in library.primitives.values() {
                println!(
                    "{:<24} {:>5} samples  {:>6.2} s{}",
                    p.name,
                    p.samples.len(),
                    p.samples.duration(),
                    if p.insertion { "  insertion" } else { "" }
                );
            }
        }
    }
    Ok(())
}

fn posed_session(pose: &str, seed: u64) -> Result<Session> {
    let board = bench::parse_pose(pose).with_context(|| format!("unknown pose `{pose}`"))?;
    let mut session = Session::new(BoardWorld::task_board(), seed)?;
    session.set_board_pose(board)?;
    Ok(session)
}

fn run(
    program: Option<PathBuf>,
    library: Option<PathBuf>,
    pose: &str,
    seed: u64,
    no_localize: bool,
    report: Option<PathBuf>,
) -> Result<()> {
    let (builtin_lib, builtin_prog) = builtin()?;
    let library = match library {
        Some(p) => PrimitiveLibrary::load_dir(&p)?,
        None => builtin_lib,
    };
    let program: TaskProgram = match program {
        Some(p) => TaskProgram::load(&p).with_context(|| p.display().to_string())?,
        None => builtin_prog,
    };
    let mut session = posed_session(pose, seed)?;
    session.add_library(&library)?;
    let started = Instant::now();
    if !no_localize {
        let outcome = session.handle(
            TeachCommand::Localize {
                ablate_icp: false,
                ablate_haptic: false,
            },
            &mut NoFeedback,
        )?;
        println!("localized: {}", outcome.detail().unwrap_or_default());
    }
    let outcome = session.handle(TeachCommand::StartExecution { program }, &mut NoFeedback)?;
    let kinesis_session::Outcome::Program(result) = outcome else {
        bail!("execution returned no report")
    };
    for s in &result.steps {
        println!(
            "{:<24} {:<4} ticks {:>5}  spiral {:<3} {}",
            s.primitive,
            if s.success { "ok" } else { "FAIL" },
            s.ticks,
            if s.spiraled { "yes" } else { "no" },
            s.failure.as_deref().unwrap_or("")
        );
    }
    println!(
        "{} of {} steps succeeded in {:.2} s{}",
        result.steps.iter().filter(|s| s.success).count(),
        result.steps.len(),
        started.elapsed().as_secs_f64(),
        if result.halted { " (halted)" } else { "" }
    );
    if let Some(path) = report {
        bench::write_csv(&result.steps, &path)?;
    }
    Ok(())
}

fn localize(pose: &str, seed: u64, ablate_icp: bool, ablate_haptic: bool) -> Result<()> {
    let mut session = posed_session(pose, seed)?;
    let truth = session.world().board_pose;
    session.handle(TeachCommand::Localize { ablate_icp, ablate_haptic }, &mut NoFeedback)?;
    let est = session.estimates();
    let show = |label: &str, pose: Option<Pose>| match pose {
        Some(p) => {
            let pos_mm = (p.position - truth.position).xy().norm() * 1e3;
            let d = p.yaw() - truth.yaw();
            let yaw_deg = d.sin().atan2(d.cos()).to_degrees();
            println!("{label:<8} planar error {pos_mm:>7.3} mm  yaw error {yaw_deg:>7.3} deg");
        }
        None => println!("{label:<8} skipped"),
    };
    show("visual", est.visual.as_ref().map(|f| f.pose));
    show("haptic", est.haptic.as_ref().map(|f| f.pose));
    show("current", Some(est.current.pose));
    Ok(())
}

fn bench_cmd(cmd: BenchCmd) -> Result<()> {
    let started = Instant::now();
    match cmd {
        BenchCmd::TableI { trials, seed, out } => {
            let rows = bench::board_bench(&bench::bench_poses(), trials, seed)?;
            bench::write_csv(&rows, &out)?;
            for (name, _) in bench::bench_poses() {
                let mine: Vec<_> = rows.iter().filter(|r| r.pose == name).collect();
                let ok = mine.iter().filter(|r| r.success).count();
                println!("{name:<10} {ok:>3}/{:<3} subtasks succeeded", mine.len());
            }
            println!("wrote {} rows to {}", rows.len(), out.display());
        }
        BenchCmd::TableII { trials, seed, out } => {
            let rows = bench::ablation_trials(trials, seed, &AblationSetup::default());
            bench::write_csv(&rows, &out)?;
            for arm in [AblationArm::VisualOnly, AblationArm::Haptic] {
                let success = bench::rate(&rows, |r| r.arm == arm, |r| r.success);
                let spiral = bench::rate(&rows, |r| r.arm == arm, |r| r.spiraled);
                println!("{arm:?}: success {:.0}%  spiral activated {:.0}%", success * 100.0, spiral * 100.0);
            }
        }
        BenchCmd::Spiral {
            trials,
            seed,
            radius_mm,
            out,
        } => {
            let rows = bench::spiral_trials(trials, seed, radius_mm * 1e-3);
            bench::write_csv(&rows, &out)?;
            let success = bench::rate(&rows, |_| true, |r| r.success);
            let spiral = bench::rate(&rows, |_| true, |r| r.spiraled);
            println!("success {:.1}%  spiral activated {:.1}%", success * 100.0, spiral * 100.0);
        }
        BenchCmd::Localization {
            trials,
            seed,
            max_shift_mm,
            max_yaw_deg,
            out,
        } => {
            let rows = bench::localization_trials(trials, seed, max_shift_mm * 1e-3, max_yaw_deg.to_radians());
            bench::write_csv(&rows, &out)?;
            let mut pos: Vec<f64> = rows.iter().map(|r| r.refined_error_mm).collect();
            pos.sort_by(f64::total_cmp);
            let better = bench::rate(&rows, |_| true, |r| r.refined_beats_visual());
            println!(
                "refined error median {:.3} mm, max {:.3} mm; refined beats visual in {:.0}% of scenes",
                pos[pos.len() / 2],
                pos[pos.len() - 1],
                better * 100.0
            );
        }
    }
    println!("finished in {:.1} s", started.elapsed().as_secs_f64());
    Ok(())
}

fn serve(addr: &str, seed: u64, resume: Option<PathBuf>, broadcast_hz: f64, fast: bool) -> Result<()> {
    let session = match resume {
        Some(p) => Session::load(&p)?,
        None => {
            let mut s = Session::new(BoardWorld::task_board(), seed)?;
            s.add_library(&builtin()?.0)?;
            s
        }
    };
    let server = Server::bind(addr)?;
    println!("listening on ws://{}", server.local_addr()?);
    let opts = ServeOptions {
        broadcast_hz,
        realtime: !fast,
    };
    server.run(session, opts, Arc::new(AtomicBool::new(false)))?;
    Ok(())
}
