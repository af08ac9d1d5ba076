//! Kept in its own test binary so that no other test competes for the CPU
//! while the two runs are timed.

mod common;

use std::time::Instant;

use redatum_cli::pipeline::run;

#[test]
fn rerun_hits_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::small(dir.path());
    let cache = common::cache_in(dir.path());

    let t0 = Instant::now();
    let first = run(&cfg, &cache).unwrap();
    let cold = t0.elapsed().as_secs_f64();
    let report = std::fs::read(first.out_dir.join("report.json")).unwrap();

    let t1 = Instant::now();
    let second = run(&cfg, &cache).unwrap();
    let warm = t1.elapsed().as_secs_f64();

    assert!(second.cache_hits.iter().all(|(_, hit)| *hit));
    assert_eq!(std::fs::read(second.out_dir.join("report.json")).unwrap(), report);
    assert!(warm < 0.05 * cold, "cold {cold:.3} s, warm {warm:.3} s");
}
