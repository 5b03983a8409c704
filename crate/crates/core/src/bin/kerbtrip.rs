use std::io::Write;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("KERBTRIP_LOG", "info")).init();
    let mut stdout = std::io::stdout().lock();
    let mut stderr = std::io::stderr();
    let code = kerbtrip::cli::run(std::env::args_os(), &mut stdout, &mut stderr);
    let _ = stdout.flush();
    std::process::exit(code);
}
