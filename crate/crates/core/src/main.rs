fn main() {
    std::process::exit(ipl_core::cli::main_entry());
}
