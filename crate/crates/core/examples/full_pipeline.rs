//! Every CLI stage in order, from teacher training to the SVG plot.
//!
//! ```text
//! cargo run --release --example full_pipeline -- [out_dir] [config.json]
//! ```
//!
//! Without a config file the CI-scale settings are used.

use sortrl::cli::{run_all, RunConfig};

fn main() -> sortrl::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "runs/example".into());
    let mut cfg = match args.next() {
        Some(path) => RunConfig::resolve(Some(std::path::Path::new(&path)), &[])?,
        None => RunConfig::ci(),
    };
    cfg.out_dir = out.into();
    let verdict = run_all(&cfg, &mut |line| println!("{line}"))?;
    for (check, ok) in &verdict.checks {
        println!("[{}] {check}", if *ok { "pass" } else { "FAIL" });
    }
    Ok(())
}
