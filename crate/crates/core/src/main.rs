use fusesim::cli::run_cli;

fn main() {
    std::process::exit(run_cli(std::env::args_os()));
}
