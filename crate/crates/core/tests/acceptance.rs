//! Acceptance suite: one pass/fail line per criterion at full scale.
//!
//! `cargo test -p kdvlab-core --test acceptance -- 3 7` runs a subset;
//! `KDVLAB_LEVEL=fast` switches to the reduced battery.

use std::process::ExitCode;

use kdvlab::verify::{mutation_smoke, run_criterion, Level, CRITERIA};

fn main() -> ExitCode {
    let level = match std::env::var("KDVLAB_LEVEL") {
        Ok(s) => s.parse().expect("KDVLAB_LEVEL must be fast or full"),
        Err(_) => Level::Full,
    };
    let picked: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    println!("acceptance suite ({level})");
    for (id, _) in CRITERIA {
        if !picked.is_empty() && !picked.contains(&id) {
            continue;
        }
        let o = run_criterion(id, level);
        if !o.passed {
            failed += 1;
        }
        println!("{o}");
    }
    if picked.is_empty() {
        let (caught, msg) = mutation_smoke();
        println!("[{}] mutation smoke test: {msg}", if caught { "PASS" } else { "FAIL" });
        if !caught {
            failed += 1;
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} check(s) failed");
        ExitCode::FAILURE
    }
}
