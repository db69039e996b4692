use std::path::PathBuf;
use std::process::ExitCode;

use gradex::cli;

const USAGE: &str = "\
gradex — gradient extrapolation experiment runner

USAGE:
    gradex <run|sweep|bounds|validate> [--config <path>] [--set key=value]... [--out <dir>]

SUBCOMMANDS:
    run        execute the configured solver over all seeds; write traces
    sweep      communication-complexity table over the sweep grid
    bounds     print policy constants and write the bound curves
    validate   check the configuration and exit

OPTIONS:
    --config <path>    key = value configuration file
    --set key=value    override one configuration key (repeatable)
    --out <dir>        shorthand for --set output.dir=<dir>

Exit codes: 0 ok, 1 run failure, 2 configuration error.
";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.is_empty() || args[0] == "--help" || args[0] == "-h" {
        print!("{USAGE}");
        return ExitCode::from(if args.is_empty() { 2 } else { 0 });
    }
    let command = args[0].clone();
    if !matches!(command.as_str(), "run" | "sweep" | "bounds" | "validate") {
        eprintln!("unknown subcommand `{command}`\n{USAGE}");
        return ExitCode::from(2);
    }
    let mut config_path: Option<PathBuf> = None;
    let mut sets: Vec<String> = Vec::new();
    let mut i = 1;
    while i < args.len() {
        match args[i].as_str() {
            "--config" => {
                if i + 1 >= args.len() {
                    eprintln!("--config needs a path");
                    return ExitCode::from(2);
                }
                config_path = Some(PathBuf::from(&args[i + 1]));
                i += 2;
            }
            "--set" => {
                if i + 1 >= args.len() {
                    eprintln!("--set needs key=value");
                    return ExitCode::from(2);
                }
                sets.push(args[i + 1].clone());
                i += 2;
            }
            "--out" => {
                if i + 1 >= args.len() {
                    eprintln!("--out needs a directory");
                    return ExitCode::from(2);
                }
                sets.push(format!("output.dir={}", args[i + 1]));
                i += 2;
            }
            other => {
                eprintln!("unknown argument `{other}`\n{USAGE}");
                return ExitCode::from(2);
            }
        }
    }

    let cfg = match cli::load_from_path(config_path.as_deref(), &sets) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(cli::exit_code_for(&e) as u8);
        }
    };
    let result = match command.as_str() {
        "run" => cli::cmd_run(&cfg),
        "sweep" => cli::cmd_sweep(&cfg),
        "bounds" => cli::cmd_bounds(&cfg),
        _ => cli::cmd_validate(&cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code_for(&e) as u8)
        }
    }
}
