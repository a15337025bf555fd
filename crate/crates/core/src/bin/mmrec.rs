use std::io::{stderr, stdout};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let code = mmrec::harness::run_command(std::env::args_os(), &mut stdout(), &mut stderr());
    std::process::exit(code);
}
