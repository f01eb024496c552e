//! Full finite-difference sweep over every layer primitive: 100 random small
//! configurations per layer, central differences at step 1e-5 in double
//! precision, 1e-4 relative tolerance, kink points skipped.

use egomotion::gradcheck;
use std::time::Instant;

#[test]
fn every_layer_passes_100_random_gradient_checks() {
    let t0 = Instant::now();
    let reports = gradcheck::run_full_check(100, 20_240_817).unwrap();
    let elapsed = t0.elapsed();
    assert_eq!(reports.len(), 6);
    for r in &reports {
        assert_eq!(r.cases, 100, "{}", r.layer);
        assert!(
            r.elements_checked >= 100,
            "{}: only {} elements",
            r.layer,
            r.elements_checked
        );
        assert!(
            r.max_rel_err <= gradcheck::DEFAULT_TOL,
            "{}: max relative error {}",
            r.layer,
            r.max_rel_err
        );
        println!(
            "gradcheck {}: {} cases, {} elements, {} skipped, max rel {:.3e}",
            r.layer, r.cases, r.elements_checked, r.elements_skipped, r.max_rel_err
        );
    }
    println!("gradcheck wall time: {:.1?}", elapsed);
    assert!(
        elapsed.as_secs() < 60,
        "gradient sweep took {elapsed:?}, budget is one minute"
    );
}
