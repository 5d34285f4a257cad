mod common;

use common::gradcheck::{run_suite, TOL};

#[test]
fn every_parameter_class_matches_central_differences() {
    let outcome = run_suite();
    for (name, e) in &outcome.worst {
        println!("{name:>16}: worst relative error {e:.2e}");
    }
    println!("gradient suite took {:.1?}", outcome.elapsed);
    assert!(outcome.worst.len() >= 7);
    for (name, e) in &outcome.worst {
        assert!(*e <= TOL, "{name}: relative error {e:e}");
    }
    assert!(outcome.elapsed.as_secs_f64() <= 60.0, "gradient suite took {:?}", outcome.elapsed);
}
