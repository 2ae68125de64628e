mod common;

use common::SuiteResult;

fn check(r: SuiteResult) {
    assert!(r.pass(), "{}: worst relative error {:.3e}", r.name, r.worst);
}

#[test]
fn cross_entropy_matches_fd() {
    check(common::ce());
}

#[test]
fn focal_matches_fd() {
    check(common::focal());
}

#[test]
fn balanced_softmax_matches_fd() {
    check(common::balanced_softmax());
}

#[test]
fn ifl_squared_matches_fd() {
    check(common::ifl_squared());
}

#[test]
fn ifl_l2_matches_fd() {
    check(common::ifl_l2());
}

#[test]
fn irm_penalty_matches_fd() {
    check(common::irm());
}

#[test]
fn relu_network_backward_matches_fd() {
    check(common::network_relu());
}

#[test]
fn tanh_network_backward_matches_fd() {
    check(common::network_tanh());
}
