use clap::Parser;
use rvf_cli::Cli;

fn main() {
    let cli = Cli::parse();
    set_threads();
    std::process::exit(rvf_cli::run(cli));
}

#[cfg(feature = "parallel")]
fn set_threads() {
    let Ok(v) = std::env::var("RVF_THREADS") else { return };
    match v.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                eprintln!("warning: RVF_THREADS ignored: {e}");
            }
        }
        _ => eprintln!("warning: RVF_THREADS={v:?} is not a positive integer; ignored"),
    }
}

#[cfg(not(feature = "parallel"))]
fn set_threads() {}
