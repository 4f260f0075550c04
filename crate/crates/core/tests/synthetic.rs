//! Structural and statistical checks on the generated three-feeder system.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::PathBuf;
use std::sync::OnceLock;

use feedersim_core::model::{parse_model, SwitchPosition, WindingConnection};
use feedersim_core::timeseries::{
    aggregate_to_transformer, clean_all, draw_power_factor, synth_feeder, CleanParams, MeterSeries, PfRange,
    Provenance, SampleFlag, SynthParams, SyntheticSystem, DISTRIBUTION_TRANSFORMER_TABLE, HOURS_PER_YEAR,
    SUBSTATION_KVA, TABLE_III_CONDUCTORS,
};
use feedersim_core::{load_model, validate_radiality};
use proptest::prelude::*;

fn system() -> &'static SyntheticSystem {
    static SYS: OnceLock<SyntheticSystem> = OnceLock::new();
    SYS.get_or_init(|| synth_feeder(&SynthParams::default()))
}

fn bundled_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/synthetic_240.json")
}

#[test]
fn bundled_model_matches_generator() {
    let text = system().model.to_json();
    if std::env::var_os("FEEDERSIM_BLESS").is_some() {
        std::fs::write(bundled_path(), &text).unwrap();
    }
    let bundled = load_model(bundled_path()).unwrap();
    assert_eq!(bundled, system().model);
    assert_eq!(std::fs::read_to_string(bundled_path()).unwrap(), text);
}

#[test]
fn regeneration_is_bit_identical() {
    let again = synth_feeder(&SynthParams::default());
    assert_eq!(again.model, system().model);
    for (a, b) in again.meters.iter().zip(&system().meters) {
        assert_eq!(a.meter_id, b.meter_id);
        assert!(a.kwh.iter().zip(&b.kwh).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let other = synth_feeder(&SynthParams { seed: 99, ..SynthParams::default() });
    assert_ne!(other.model, system().model);
}

#[test]
fn json_round_trip() {
    let m = &system().model;
    assert_eq!(&parse_model(&m.to_json()).unwrap(), m);
}

#[test]
fn radial_with_expected_counts() {
    let m = &system().model;
    assert!(validate_radiality(m).is_empty(), "{:?}", validate_radiality(m).entries());

    // Traversal oracle: walk closed elements from the source.
    let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut edge = |a: &'static str, b: &'static str| {
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
    };
    let leak = |s: &String| -> &'static str { Box::leak(s.clone().into_boxed_str()) };
    for s in &m.segments {
        edge(leak(&s.from_bus), leak(&s.to_bus));
    }
    for s in m.switches.iter().filter(|s| s.current_state == SwitchPosition::Closed) {
        edge(leak(&s.from_bus), leak(&s.to_bus));
    }
    for t in &m.transformers {
        if let (Some(f), Some(to)) = (&t.from_bus, &t.to_bus) {
            edge(leak(f), leak(to));
        }
    }
    for r in &m.regulators {
        edge(leak(&r.from_bus), leak(&r.to_bus));
    }
    let mut seen = BTreeSet::from([m.source.bus.as_str()]);
    let mut queue = VecDeque::from([m.source.bus.as_str()]);
    while let Some(b) = queue.pop_front() {
        for &n in adj.get(b).into_iter().flatten() {
            if seen.insert(n) {
                queue.push_back(n);
            }
        }
    }
    let primary: Vec<_> = m.buses.iter().filter(|b| seen.contains(b.id.as_str()) && b.nominal_ll_kv == 13.8).collect();
    assert_eq!(primary.len(), 240);
    assert_eq!(seen.len(), m.buses.len());

    let roots: BTreeSet<_> = m.switches.iter().filter(|s| s.from_bus == "bus1").map(|s| s.to_bus.as_str()).collect();
    assert_eq!(roots.len(), 3);
    assert_eq!(m.feeders(), vec!["A", "B", "C"]);

    let total_miles: f64 = m.segments.iter().map(|s| s.length_mi).sum();
    assert!((total_miles - 23.0).abs() < 1e-9);

    let closed = m.switches.iter().filter(|s| s.normal_state == SwitchPosition::Closed).count();
    assert_eq!((m.switches.len(), closed), (9, 6));

    let caps: Vec<_> = m.capacitors.iter().map(|c| (m.bus(&c.bus).unwrap().feeder.clone().unwrap(), c.kvar)).collect();
    assert_eq!(caps, vec![("B".to_string(), 50.0), ("C".to_string(), 50.0)]);

    let sub = m.transformer("sub_xfmr").unwrap();
    assert_eq!((sub.kva, sub.primary_kv, sub.secondary_kv, sub.connection), (10_000.0, 69.0, 13.8, WindingConnection::DeltaWye));
}

#[test]
fn library_values_come_from_the_tables() {
    let m = &system().model;
    for c in m.conductors.iter().filter(|c| c.id != "14_CU") {
        assert!(TABLE_III_CONDUCTORS
            .iter()
            .any(|t| t.2 == c.resistance_ohm_per_mile && t.3 == c.diameter_in && t.4 == c.gmr_ft));
    }
    for t in m.transformers.iter().filter(|t| t.from_bus.is_none()) {
        assert!(DISTRIBUTION_TRANSFORMER_TABLE
            .iter()
            .any(|d| d.0 == t.phase_count && d.1 == t.kva && d.2 == t.r_pct && d.3 == t.x_pct));
    }
}

#[test]
fn customers_and_single_phase_balance() {
    let m = &system().model;
    let ids: Vec<&String> = m.load_points.iter().flat_map(|l| &l.customer_ids).collect();
    assert_eq!(ids.len(), 1120);
    assert_eq!(system().meters.len(), 1120);
    for f in m.feeders() {
        let mut per_phase = [0usize; 3];
        for lp in m.load_points.iter().filter(|l| l.phases.len() == 1) {
            if m.bus(&lp.bus).unwrap().feeder.as_deref() == Some(f.as_str()) {
                per_phase[lp.phases.iter().next().unwrap().index()] += lp.customer_ids.len();
            }
        }
        let (lo, hi) = (per_phase.iter().min().unwrap(), per_phase.iter().max().unwrap());
        assert!(*hi as f64 <= *lo as f64 * 1.25 + 10.0, "feeder {f}: {per_phase:?}");
    }
}

#[test]
fn winter_and_summer_peaks() {
    let meters = &system().meters;
    let mut daily = vec![0.0; 365];
    for m in meters {
        for (h, v) in m.kwh.iter().enumerate().filter(|(_, v)| v.is_finite()) {
            daily[h / 24] += v;
        }
    }
    let month = |d0: usize, d1: usize| daily[d0..d1].iter().sum::<f64>() / (d1 - d0) as f64;
    let (jan, apr, jul, oct) = (month(0, 31), month(90, 120), month(181, 212), month(273, 304));
    assert!(jan > apr && jul > apr && jan > oct && jul > oct, "{jan} {apr} {jul} {oct}");
}

#[test]
fn cleaning_touches_few_samples_and_catches_injected_anomalies() {
    let meters = &system().meters;
    let missing: usize = meters.iter().map(|m| m.count(SampleFlag::Missing)).sum();
    assert!(missing > 0);
    let cleaned = clean_all(meters, &CleanParams::default()).unwrap();
    let repaired: usize = cleaned.iter().map(|m| m.count(SampleFlag::Repaired)).sum();
    assert!(repaired >= missing);
    assert!((repaired as f64) < 0.01 * (meters.len() * HOURS_PER_YEAR) as f64, "{repaired} repairs");
    assert!(cleaned.iter().all(|m| m.kwh.iter().all(|v| v.is_finite() && *v >= 0.0)));
}

#[test]
fn aggregation_matches_group_by() {
    let sys = system();
    let cleaned = clean_all(&sys.meters, &CleanParams::default()).unwrap();
    let profiles = aggregate_to_transformer(&cleaned, &sys.model, 5, PfRange::default(), Provenance::Synthetic).unwrap();
    let by_id: BTreeMap<&str, &MeterSeries> = cleaned.iter().map(|m| (m.meter_id.as_str(), m)).collect();
    for (lp, prof) in sys.model.load_points.iter().zip(&profiles) {
        assert_eq!(lp.id, prof.load_point);
        for h in [0, 4000, 8759] {
            let p: f64 = lp.customer_ids.iter().map(|c| by_id[c.as_str()].kwh[h]).sum();
            let q: f64 = lp
                .customer_ids
                .iter()
                .map(|c| {
                    let pf = draw_power_factor(5, c, PfRange::default());
                    by_id[c.as_str()].kwh[h] * (1.0 - pf * pf).sqrt() / pf
                })
                .sum();
            assert!((prof.p_kw[h] - p).abs() <= 1e-12 * p.max(1.0));
            assert!((prof.q_kvar[h] - q).abs() <= 1e-9 * q.max(1.0));
        }
    }
    let peak = (0..HOURS_PER_YEAR)
        .map(|h| profiles.iter().map(|p| p.p_kw[h].hypot(p.q_kvar[h])).sum::<f64>())
        .fold(0.0, f64::max);
    assert!((0.6..=1.0).contains(&(peak / SUBSTATION_KVA)), "peak {peak} kVA");
}

#[test]
fn forced_power_factor_and_additivity() {
    let m = &system().model;
    let lp = m.load_points.iter().find(|l| l.customer_ids.len() >= 2).unwrap();
    let kwh: Vec<f64> = (0..HOURS_PER_YEAR).map(|h| 1.0 + (h % 24) as f64 / 10.0).collect();
    let meters: Vec<MeterSeries> = lp.customer_ids[..2].iter().map(|c| MeterSeries::new(c.clone(), 2017, kwh.clone())).collect();
    let pf = PfRange { lo: 0.95, hi: 0.95 };
    let one = aggregate_to_transformer(&meters[..1], m, 1, pf, Provenance::AggregatedReal).unwrap();
    let two = aggregate_to_transformer(&meters, m, 1, pf, Provenance::AggregatedReal).unwrap();
    let i = m.load_points.iter().position(|l| l.id == lp.id).unwrap();
    for h in 0..48 {
        assert!((one[i].q_kvar[h] - one[i].p_kw[h] * 0.328_684_6).abs() < 1e-6 * one[i].p_kw[h]);
        assert_eq!(two[i].p_kw[h], 2.0 * one[i].p_kw[h]);
    }
}

proptest! {
    #[test]
    fn pf_draws_bounded(seed in any::<u64>(), id in "[A-Z][0-9]{1,5}") {
        let pf = draw_power_factor(seed, &id, PfRange::default());
        prop_assert!((0.90..=0.95).contains(&pf));
        let ratio = pf.acos().tan();
        prop_assert!((0.3286..=0.4844).contains(&ratio));
    }
}
