use std::io::{self, Write};

fn main() {
    if let Some(n) = std::env::var("SAFE_TEST_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let stdin = io::stdin();
    let mut stdout = io::stdout().lock();
    let code = safe2x2::cli::main_with(std::env::args_os(), &mut stdin.lock(), &mut stdout, &mut io::stderr());
    let _ = stdout.flush();
    std::process::exit(code);
}
