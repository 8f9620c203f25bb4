mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use raildq::simcore::occupancy::Layout;
use raildq::simcore::{deadlock, SimOptions, SimState};

#[test]
fn detector_agrees_with_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (mut checked, mut dead, mut disagreements) = (0, 0, Vec::new());
    while checked < 2000 {
        let Some((net, inst)) = common::random_configuration(&mut rng) else { continue };
        checked += 1;
        let layout = Layout::from_instance(&net, &inst);
        let report = deadlock::detect(&net, &inst, &layout, SimOptions::default().search_budget);
        let possible = common::completable(&net, &inst);
        if report.deadlocked {
            dead += 1;
        }
        if report.deadlocked == possible {
            disagreements.push((
                serde_json::to_string(&net.to_doc()).unwrap(),
                serde_json::to_string(&inst.to_doc(&net)).unwrap(),
                report,
            ));
        }
    }
    assert!(dead > 20, "too few deadlocked draws: {dead}");
    assert!(disagreements.is_empty(), "{} disagreements, all: {:?}", disagreements.len(), disagreements);
}

#[test]
fn simulator_reports_the_detector_verdict() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    while checked < 100 {
        let Some((net, inst)) = common::random_configuration(&mut rng) else { continue };
        checked += 1;
        let mut sim = SimState::new(&net, &inst, SimOptions::default()).unwrap();
        let direct =
            deadlock::detect(&net, &inst, &Layout::from_instance(&net, &inst), SimOptions::default().search_budget);
        assert_eq!(sim.detect_deadlock(), direct);
    }
}
