use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::process::ExitCode;

use wavelab_cli::{execute, parse_args, CliError, RunConfig};

fn init_workers() -> Result<(), CliError> {
    let Ok(v) = std::env::var("WAVELAB_WORKERS") else {
        return Ok(());
    };
    let n: usize = match v.trim().parse() {
        Ok(n) if n > 0 => n,
        _ => return Err(CliError::usage("WAVELAB_WORKERS", format!("expected a positive integer, got '{v}'"))),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::usage("WAVELAB_WORKERS", e.to_string()))
}

fn run(cfg: &RunConfig) -> Result<(), CliError> {
    let mut out: Box<dyn Write> = match &cfg.output {
        Some(path) => Box::new(BufWriter::new(File::create(path).map_err(|e| {
            CliError::usage("output", format!("cannot create {}: {e}", path.display()))
        })?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let result = execute(cfg, &mut *out);
    out.flush()?;
    result
}

fn main() -> ExitCode {
    let result = init_workers().and_then(|()| parse_args(std::env::args_os())).and_then(|cfg| run(&cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Clap(e)) => {
            let code = e.exit_code();
            let _ = e.print();
            ExitCode::from(code as u8)
        }
        Err(e) => {
            eprintln!("wavelab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
