//! Label-noise benchmark: baseline vs the three distillation modes on
//! Gaussian clusters, 5 seeds, noise at 0 / 10% / 20%.
//!
//! cargo run --example noise_benchmark [out_dir]

use scanner::tyt::{noise_benchmark, NoiseTask, TytMode};

fn main() -> scanner::Result<()> {
    let out = std::env::args().nth(1);
    let task = NoiseTask::default();
    let report = noise_benchmark(&task, &[0.0, 0.1, 0.2], &TytMode::ALL, &[1, 2, 3, 4, 5])?;
    println!("{:>6} {:>9} {:>8} {:>8}", "noise", "mode", "mean", "std");
    for s in &report.summary {
        println!("{:>6.2} {:>9} {:>8.4} {:>8.4}", s.noise_rate, s.mode, s.mean, s.std);
    }
    if let Some(dir) = out {
        let dir = std::path::Path::new(&dir);
        std::fs::create_dir_all(dir).map_err(|e| scanner::Error::io(dir, e))?;
        report.write_csv(&dir.join("noise_runs.csv"))?;
        report.write_summary_csv(&dir.join("noise_summary.csv"))?;
    }
    Ok(())
}
