fn main() {
    std::process::exit(graph_grpo::cli::run(std::env::args_os()));
}
