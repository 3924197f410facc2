mod common;

use common::*;
use fatigue_core::{Network, Rng};

const SEEDS: u64 = 5;

#[test]
fn every_layer_matches_finite_differences() {
    for seed in 0..SEEDS {
        for (name, err) in layer_checks(seed) {
            assert!(
                err < TOLERANCE,
                "seed {seed}: {name} relative error {err:e}"
            );
        }
    }
}

fn check_network(build: fn(&mut Rng) -> Network, what: &str) {
    let (mut total, mut kinked) = (0, 0);
    for seed in 0..SEEDS {
        for c in network_check(build(&mut Rng::new(seed, 5)), seed, 4) {
            assert!(
                c.rel_err < TOLERANCE,
                "{what} seed {seed}: {} relative error {:e}",
                c.name,
                c.rel_err
            );
            assert!(
                c.analytic_norm > 0.0,
                "{what} seed {seed}: {} has a vanishing gradient",
                c.name
            );
            total += c.checked + c.kinked;
            kinked += c.kinked;
        }
    }
    assert!(
        kinked * 10 <= total,
        "{what}: {kinked} of {total} entries straddled a ReLU kink"
    );
}

#[test]
fn clone_8x8_matches_finite_differences() {
    check_network(clone_8x8, "8x8 clone");
}

#[test]
fn clone_10x10_matches_finite_differences() {
    check_network(clone_10x10, "10x10 clone");
}
