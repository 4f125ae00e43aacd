fn main() {
    std::process::exit(colupdate_bench::cli::main_with(std::env::args_os()));
}
