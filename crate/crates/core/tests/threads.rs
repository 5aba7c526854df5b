// Kept in its own binary: it sets a process-wide environment variable.

use steinbench::distributions::Distribution;
use steinbench::verify::{sample_functional, SampleSpec, THREADS_ENV};

#[test]
fn samples_do_not_depend_on_thread_count() {
    let spec = SampleSpec::Sum(vec![Distribution::centered_gamma(1.5).unwrap(); 4]);
    std::env::set_var(THREADS_ENV, "1");
    let one = sample_functional(&spec, 5003, 21).unwrap();
    std::env::set_var(THREADS_ENV, "3");
    let three = sample_functional(&spec, 5003, 21).unwrap();
    std::env::remove_var(THREADS_ENV);
    let default = sample_functional(&spec, 5003, 21).unwrap();
    assert_eq!(one, three);
    assert_eq!(one, default);
}
