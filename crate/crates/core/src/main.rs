use std::io;

use env_logger::{Env, Target};

fn main() {
    env_logger::Builder::new()
        .filter_level(log::LevelFilter::Off)
        .parse_env(Env::new().filter("CODIFF_LOG"))
        .target(Target::Stderr)
        .init();
    let code = codiff_core::cli::run(std::env::args_os(), &mut io::stdout().lock(), &mut io::stderr().lock());
    std::process::exit(code);
}
