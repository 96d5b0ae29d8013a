fn main() {
    std::process::exit(convlstm_anomaly::cli::run(std::env::args_os()));
}
