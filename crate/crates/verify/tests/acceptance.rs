//! The full acceptance suite at its stated scale (about 15 minutes on one
//! core). Prints one line per criterion; fails if any criterion fails.

use irand_cli::acceptance::{run_suite, SuiteOptions};
use std::path::PathBuf;

#[test]
fn acceptance_criteria() {
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let opts = SuiteOptions { seed: 1, out: out.clone(), only: None };
    let r = run_suite(&opts, |c| {
        println!("[{}] {} {}", if c.pass { "PASS" } else { "FAIL" }, c.criterion.dir(), c.criterion.title);
        for k in &c.checks {
            println!("       {} {} = {} ({})", if k.pass { "ok " } else { "BAD" }, k.name, k.value, k.condition);
        }
    })
    .expect("suite runs");
    let failed: Vec<String> = r.results.iter().filter(|c| !c.pass).map(|c| c.criterion.dir()).collect();
    println!("{} of {} criteria pass; results in {}", r.results.len() - failed.len(), r.results.len(), out.display());
    assert!(failed.is_empty(), "failing criteria: {}", failed.join(", "));
}
