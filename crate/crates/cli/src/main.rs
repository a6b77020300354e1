fn main() -> std::process::ExitCode {
    excirec::main()
}
