fn main() {
    std::process::exit(invfold::commands::main_from_args(std::env::args_os()));
}
