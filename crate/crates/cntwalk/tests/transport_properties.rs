//! Cross-setting properties of the exact transport pipeline: monotone
//! length effects, plateaus, chirality ordering, flavor ordering, and the
//! armchair flavor coincidence.

use cntwalk::graph::{build_nanotube, StateGraph, TubeSpec};
use cntwalk::transport::{transport_report, RegimeLabel, TransportReport};
use cntwalk::trapped::WalkFlavor;

fn tube(m: u32, n: u32, l: u32) -> StateGraph {
    build_nanotube(&TubeSpec::new(m, n, l).unwrap()).unwrap()
}

fn averaged(m: u32, n: u32, l: u32, label: RegimeLabel, flavor: WalkFlavor) -> f64 {
    transport_report(&tube(m, n, l), label, flavor).unwrap().averaged_atp
}

fn report(m: u32, n: u32, l: u32, label: RegimeLabel, flavor: WalkFlavor) -> TransportReport {
    transport_report(&tube(m, n, l), label, flavor).unwrap()
}

#[test]
fn percolated_atp_grows_with_length_toward_vertex_sinks() {
    for (m, n) in [(3u32, 0u32), (4, 0), (3, 3)] {
        for label in [RegimeLabel::VertexToVertex, RegimeLabel::LoopsToVertex] {
            let mut prev = -1.0f64;
            for l in 1..=6 {
                let q = averaged(m, n, l, label, WalkFlavor::Pcqw);
                assert!(
                    q >= prev - 1e-12,
                    "({m},{n}) {label}: ATP fell from {prev} to {q} at length {l}"
                );
                prev = q;
            }
        }
    }
}

#[test]
fn percolated_atp_plateaus_toward_loop_sinks() {
    // Successive length differences shrink and the value settles.
    for (m, n) in [(3u32, 0u32), (3, 3)] {
        for label in [RegimeLabel::VertexToLoops, RegimeLabel::LoopsToLoops] {
            let values: Vec<f64> =
                (1..=6).map(|l| averaged(m, n, l, label, WalkFlavor::Pcqw)).collect();
            let diffs: Vec<f64> =
                values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
            for (i, pair) in diffs.windows(2).enumerate() {
                assert!(
                    pair[1] <= pair[0] + 1e-9,
                    "({m},{n}) {label}: differences {diffs:?} grow at index {i}"
                );
            }
            assert!(
                diffs.last().unwrap() < &1e-3,
                "({m},{n}) {label}: still moving by {:?} at length 6",
                diffs.last()
            );
        }
    }
}

#[test]
fn zigzag_transports_better_than_armchair_at_matched_length() {
    for l in [2u32, 3] {
        for label in RegimeLabel::ALL {
            for (zm, zn) in [(3u32, 0u32), (4, 0)] {
                for (am, an) in [(2u32, 2u32), (3, 3)] {
                    let z = averaged(zm, zn, l, label, WalkFlavor::Pcqw);
                    let a = averaged(am, an, l, label, WalkFlavor::Pcqw);
                    assert!(
                        z > a,
                        "length {l} {label}: ({zm},{zn}) = {z} not above ({am},{an}) = {a}"
                    );
                }
            }
        }
    }
}

#[test]
fn thinnest_tube_of_each_family_transports_best() {
    let l = 2u32;
    for label in RegimeLabel::ALL {
        let thin_z = averaged(3, 0, l, label, WalkFlavor::Pcqw);
        for k in [4u32, 5, 6] {
            let q = averaged(k, 0, l, label, WalkFlavor::Pcqw);
            assert!(
                thin_z >= q - 1e-12,
                "{label}: (3,0) = {thin_z} below ({k},0) = {q}"
            );
        }
        let thin_a = averaged(2, 2, l, label, WalkFlavor::Pcqw);
        for k in [3u32, 4] {
            let q = averaged(k, k, l, label, WalkFlavor::Pcqw);
            assert!(
                thin_a >= q - 1e-12,
                "{label}: (2,2) = {thin_a} below ({k},{k}) = {q}"
            );
        }
    }
}

#[test]
fn percolation_never_hurts_transport() {
    for (m, n) in [(3u32, 0u32), (4, 0), (3, 3)] {
        for l in 1..=3u32 {
            for label in RegimeLabel::ALL {
                let c = averaged(m, n, l, label, WalkFlavor::Cqw);
                let p = averaged(m, n, l, label, WalkFlavor::Pcqw);
                assert!(
                    c <= p + 1e-10,
                    "({m},{n}) length {l} {label}: ideal {c} above percolated {p}"
                );
            }
        }
    }
}

#[test]
fn armchair_flavors_coincide_between_loop_sources_and_loop_sinks() {
    // Loops-to-loops on armchair tubes: the ideal walk's extra trapped
    // states all overlap either the loop source or the loop sink, so both
    // flavors land on the same averaged ATP.
    for (m, n) in [(2u32, 2u32), (3, 3), (4, 4)] {
        for l in 1..=3u32 {
            let c = averaged(m, n, l, RegimeLabel::LoopsToLoops, WalkFlavor::Cqw);
            let p = averaged(m, n, l, RegimeLabel::LoopsToLoops, WalkFlavor::Pcqw);
            assert!(
                (c - p).abs() < 1e-10,
                "({m},{n}) length {l}: ideal {c} vs percolated {p}"
            );
        }
    }
}

#[test]
fn reports_carry_consistent_dimensions_and_methods() {
    let r = report(3, 0, 2, RegimeLabel::LoopsToLoops, WalkFlavor::Pcqw);
    let g = tube(3, 0, 2);
    assert_eq!(r.trapped_dim, 2 * g.vertex_count() - g.edge_count());
    assert!(r.sr_dim <= r.trapped_dim);
    assert_eq!(format!("{}", r.method), "analytic");
    let rc = report(3, 0, 2, RegimeLabel::LoopsToLoops, WalkFlavor::Cqw);
    assert_eq!(format!("{}", rc.method), "oracle");
    assert!(rc.trapped_dim >= r.trapped_dim);
}
