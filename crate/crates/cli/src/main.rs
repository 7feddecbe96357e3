mod args;
mod bench;
mod commands;
mod error;
mod manifest;

use std::path::Path;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command, ReplayArgs};
use error::CliError;
use manifest::RunManifest;

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn threads_of(cmd: &Command) -> Option<usize> {
    match cmd {
        Command::Simulate(a) => a.common.threads,
        Command::Wvm(a) => a.common.threads,
        Command::Icp(a) => a.common.threads,
        Command::Bench(a) => a.common.threads,
        Command::Replay(a) => Some(a.threads),
    }
}

fn dispatch(cmd: &Command, argv: &[String]) -> Result<String, CliError> {
    let threads = threads_of(cmd).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    pool.install(|| match cmd {
        Command::Simulate(a) => commands::cmd_simulate(a, argv),
        Command::Wvm(a) => commands::cmd_wvm(a, argv),
        Command::Icp(a) => commands::cmd_icp(a, argv),
        Command::Bench(a) => bench::cmd_bench(a, argv),
        Command::Replay(a) => replay(a),
    })
}

fn replay(a: &ReplayArgs) -> Result<String, CliError> {
    let m = RunManifest::read(&a.manifest)?;
    let out_dir = commands::absolute(a.out_dir.as_ref().unwrap_or(&m.out_dir));
    let argv: Vec<String> = std::iter::once("wvm".to_string()).chain(m.args.iter().cloned()).collect();
    let mut cli = Cli::try_parse_from(&argv)
        .map_err(|e| CliError::Data(format!("manifest arguments no longer parse: {e}")))?;
    match &mut cli.command {
        Command::Simulate(x) => x.common.out_dir = out_dir.clone(),
        Command::Wvm(x) => x.common.out_dir = out_dir.clone(),
        Command::Icp(x) => x.common.out_dir = out_dir.clone(),
        Command::Bench(x) => x.common.out_dir = out_dir.clone(),
        Command::Replay(_) => return Err(CliError::Usage("cannot replay a replay".into())),
    }
    // relative inputs in the recorded arguments refer to the recorded cwd
    std::env::set_current_dir(&m.cwd).map_err(|e| CliError::io(&m.cwd, e))?;
    let summary = match &cli.command {
        Command::Simulate(x) => commands::cmd_simulate(x, &m.args),
        Command::Wvm(x) => commands::cmd_wvm(x, &m.args),
        Command::Icp(x) => commands::cmd_icp(x, &m.args),
        Command::Bench(x) => bench::cmd_bench(x, &m.args),
        Command::Replay(_) => unreachable!(),
    }?;
    Ok(format!("replayed {} into {}\n{summary}", m.command, out_dir.display()))
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli.command, &argv) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
