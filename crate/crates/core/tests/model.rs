//! Topology checks and switching on the bundled models.

mod support;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::PathBuf;

use feedersim_core::model::{apply_switching, energized_edges, SwitchPosition};
use feedersim_core::solver::network_ordering;
use feedersim_core::{load_model, validate_radiality, NetworkModel};

fn synthetic() -> NetworkModel {
    load_model(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/synthetic_240.json")).unwrap()
}

/// Plain BFS over in-service segments, closed switches, and network transformers
/// and regulators.
fn reachable(m: &NetworkModel) -> BTreeSet<String> {
    let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut link = |a: &str, b: &str| {
        adj.entry(a.to_owned().leak()).or_default().push(b.to_owned().leak());
        adj.entry(b.to_owned().leak()).or_default().push(a.to_owned().leak());
    };
    for s in m.segments.iter().filter(|s| s.normally_energized) {
        link(&s.from_bus, &s.to_bus);
    }
    for s in m.switches.iter().filter(|s| s.current_state == SwitchPosition::Closed) {
        link(&s.from_bus, &s.to_bus);
    }
    for t in &m.transformers {
        if let (Some(f), Some(to)) = (&t.from_bus, &t.to_bus) {
            link(f, to);
        }
    }
    for r in &m.regulators {
        link(&r.from_bus, &r.to_bus);
    }
    let mut seen = BTreeSet::from([m.source.bus.clone()]);
    let mut queue = VecDeque::from([m.source.bus.as_str()]);
    while let Some(b) = queue.pop_front() {
        for &n in adj.get(b).into_iter().flatten() {
            if seen.insert(n.to_string()) {
                queue.push_back(n);
            }
        }
    }
    seen
}

#[test]
fn bundled_models_are_trees() {
    let mut models: Vec<NetworkModel> = support::CASES.iter().map(|c| support::load_case(c)).collect();
    models.push(synthetic());
    for m in &models {
        assert!(validate_radiality(m).is_empty(), "{}: {:?}", m.name, validate_radiality(m).entries());
        assert_eq!(energized_edges(m).len(), m.buses.len() - 1, "{}", m.name);
        assert_eq!(network_ordering(m).unwrap().len(), m.buses.len(), "{}", m.name);
        assert_eq!(reachable(m).len(), m.buses.len());
    }
}

#[test]
fn ordering_puts_parents_first() {
    let m = synthetic();
    let order = network_ordering(&m).unwrap();
    assert_eq!(order[0], m.source.bus);
    let pos: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, b)| (b.as_str(), i)).collect();
    // Every bus except the source has exactly one neighbour placed before it.
    for b in &order[1..] {
        let earlier = energized_edges(&m)
            .iter()
            .filter_map(|e| {
                let (f, t) = (&m.buses[e.from].id, &m.buses[e.to].id);
                if t == b { Some(f) } else if f == b { Some(t) } else { None }
            })
            .filter(|n| pos[n.as_str()] < pos[b.as_str()])
            .count();
        assert_eq!(earlier, 1, "{b}");
    }
}

#[test]
fn closing_each_tie_reports_one_cycle_and_leaves_model_unchanged() {
    let m = synthetic();
    let ties: Vec<_> = m.switches.iter().filter(|s| s.normal_state == SwitchPosition::Open).map(|s| s.id.clone()).collect();
    assert_eq!(ties.len(), 3);
    for tie in ties {
        let out = apply_switching(&m, &tie, SwitchPosition::Closed).unwrap();
        assert!(!out.applied);
        assert_eq!(out.report.cycles.len(), 1);
        assert_eq!(out.report.cycles[0].closing_element, tie);
        let cyc = &out.report.cycles[0].buses;
        let s = m.switches.iter().find(|s| s.id == tie).unwrap();
        assert!(cyc.contains(&s.from_bus) && cyc.contains(&s.to_bus));
        assert!(cyc.contains(&"bus1".to_string()));
        assert_eq!(out.model, m);
    }
}

#[test]
fn closing_a_closed_switch_is_identity() {
    let m = synthetic();
    for s in m.switches.iter().filter(|s| s.current_state == SwitchPosition::Closed) {
        let out = apply_switching(&m, &s.id, SwitchPosition::Closed).unwrap();
        assert!(out.applied && out.report.is_empty());
        assert_eq!(out.model, m);
    }
}

#[test]
fn opening_a_breaker_and_closing_its_tie_transfers_load() {
    let m = synthetic();
    let open = apply_switching(&m, "brk_B_mid", SwitchPosition::Open).unwrap();
    assert!(open.applied);
    assert!(!open.report.islands.is_empty());
    let expected: Vec<_> = m.buses.iter().map(|b| b.id.clone()).filter(|b| !reachable(&open.model).contains(b)).collect();
    assert_eq!(open.report.islands, expected);
    // Some tie must restore everything.
    let restored = m
        .switches
        .iter()
        .filter(|s| s.normal_state == SwitchPosition::Open)
        .map(|s| apply_switching(&open.model, &s.id, SwitchPosition::Closed).unwrap())
        .find(|o| o.applied && o.report.is_empty());
    assert!(restored.is_some());
}

#[test]
fn removing_a_segment_islands_exactly_the_downstream_buses() {
    let mut m = synthetic();
    let seg = m.segments.iter().position(|s| s.from_bus == "A001").unwrap();
    m.segments[seg].normally_energized = false;
    let report = validate_radiality(&m);
    assert!(report.cycles.is_empty());
    let oracle: Vec<_> = m.buses.iter().map(|b| b.id.clone()).filter(|b| !reachable(&m).contains(b)).collect();
    assert!(oracle.len() > 10);
    assert_eq!(report.islands, oracle);

    let mut two = support::load_case("two_bus");
    two.segments[0].normally_energized = false;
    assert_eq!(validate_radiality(&two).islands, vec!["b2".to_string()]);
}

#[test]
fn schema_lists_every_serialized_field() {
    let schema: serde_json::Value =
        serde_json::from_str(include_str!("../../../model.schema.json")).unwrap();
    let model: serde_json::Value = serde_json::from_str(&synthetic().to_json()).unwrap();
    let props = |v: &serde_json::Value| -> BTreeSet<String> { v["properties"].as_object().unwrap().keys().cloned().collect() };
    let required = |v: &serde_json::Value| -> BTreeSet<String> {
        v["required"].as_array().unwrap().iter().map(|s| s.as_str().unwrap().to_string()).collect()
    };
    let check = |def: &serde_json::Value, obj: &serde_json::Value, what: &str| {
        let keys: BTreeSet<String> = obj.as_object().unwrap().keys().cloned().collect();
        assert!(keys.is_subset(&props(def)), "{what}: {keys:?}");
        assert!(required(def).is_subset(&keys), "{what}: {keys:?}");
    };
    check(&schema, &model, "model");
    check(&schema["$defs"]["source"], &model["source"], "source");
    for (list, def) in [
        ("buses", "bus"),
        ("conductors", "conductor"),
        ("cables", "cable"),
        ("geometries", "geometry"),
        ("segments", "segment"),
        ("transformers", "transformer"),
        ("regulators", "regulator"),
        ("capacitors", "capacitor"),
        ("switches", "switch"),
        ("load_points", "load_point"),
    ] {
        let items = model[list].as_array().unwrap();
        assert!(!items.is_empty(), "{list}");
        for item in items {
            check(&schema["$defs"][def], item, list);
        }
    }
    assert_eq!(schema["properties"]["schema_version"]["const"], model["schema_version"]);
}
