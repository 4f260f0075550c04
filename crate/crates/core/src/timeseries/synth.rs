//! Deterministic synthetic three-feeder system and customer meter data,
//! standing in for the utility dataset.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{substream, MeterSeries, SampleFlag, HOURS_PER_YEAR};
use crate::model::{
    Bus, CableSpec, CapacitorBank, CapacitorConnection, ConductorSpec, Construction, DeviceState, LineSegment,
    LoadPoint, Material, NetworkModel, RegulatorSpec, SourceSpec, SwitchPosition, SwitchState, TransformerSpec,
    WindingConnection, WireGeometry, SCHEMA_VERSION,
};
use crate::phase::{Phase, PhaseSet};

/// Conductor table: size, material, Ω/mile, diameter (in), GMR (ft), ampacity (A).
pub const TABLE_III_CONDUCTORS: [(&str, Material, f64, f64, f64, f64); 8] = [
    ("4/0", Material::Acsr, 0.592, 0.563, 0.00814, 340.0),
    ("1/0", Material::Acsr, 1.12, 0.355, 0.00446, 230.0),
    ("4", Material::Acsr, 2.55, 0.257, 0.00452, 140.0),
    ("2", Material::Acsr, 1.65, 0.316, 0.00504, 180.0),
    ("6", Material::Cu, 2.41, 0.201, 0.00568, 130.0),
    ("2", Material::Cu, 0.87, 0.3, 0.0083, 200.0),
    ("4/0", Material::Aa, 0.554, 0.512, 0.0167, 326.0),
    ("1/0", Material::Aa, 1.114, 0.362, 0.0111, 228.0),
];

/// Distribution transformers: phase count, kVA, R %, X %.
pub const DISTRIBUTION_TRANSFORMER_TABLE: [(u8, f64, f64, f64); 11] = [
    (3, 45.0, 2.52, 1.73),
    (3, 75.0, 2.27, 1.91),
    (3, 112.5, 2.43, 3.87),
    (3, 225.0, 1.15, 5.5),
    (3, 300.0, 1.8, 4.5),
    (3, 500.0, 1.6, 5.9),
    (1, 15.0, 1.6, 2.02),
    (1, 25.0, 1.4, 2.3),
    (1, 37.5, 3.6, 2.7),
    (1, 50.0, 3.1, 2.8),
    (1, 100.0, 2.12, 3.55),
];

pub const SUBSTATION_KVA: f64 = 10_000.0;
const PRIMARY_KV: f64 = 13.8;
const SUBTRANSMISSION_KV: f64 = 69.0;
/// Neutral strand wire for concentric-neutral cables (#14 copper).
const STRAND_ID: &str = "14_CU";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub seed: u64,
    pub feeders: usize,
    /// Buses at primary voltage, including the substation low side and Bus 1.
    pub primary_nodes: usize,
    pub customers: usize,
    pub year: i32,
    pub total_primary_miles: f64,
    /// Target coincident peak as a fraction of the substation rating.
    pub peak_loading: f64,
    pub source_pu: f64,
    /// Inject gaps and spikes into a few meters to exercise cleaning.
    pub anomalies: bool,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            seed: 2017,
            feeders: 3,
            primary_nodes: 240,
            customers: 1120,
            year: 2017,
            total_primary_miles: 23.0,
            peak_loading: 0.78,
            source_pu: 1.03,
            anomalies: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSystem {
    pub model: NetworkModel,
    pub meters: Vec<MeterSeries>,
}

fn conductor_id(size: &str, m: Material) -> String {
    let mat = match m {
        Material::Acsr => "ACSR",
        Material::Aa => "AA",
        Material::Cu => "CU",
    };
    format!("{size}_{mat}")
}

fn conductor_library() -> Vec<ConductorSpec> {
    let mut lib: Vec<ConductorSpec> = TABLE_III_CONDUCTORS
        .iter()
        .map(|&(size, material, r, d, gmr, amp)| ConductorSpec {
            id: conductor_id(size, material),
            size: size.to_string(),
            material,
            resistance_ohm_per_mile: r,
            diameter_in: d,
            gmr_ft: gmr,
            ampacity_a: amp,
        })
        .collect();
    lib.push(ConductorSpec {
        id: STRAND_ID.into(),
        size: "14".into(),
        material: Material::Cu,
        resistance_ohm_per_mile: 14.8722,
        diameter_in: 0.0641,
        gmr_ft: 0.00208,
        ampacity_a: 20.0,
    });
    lib
}

fn cable_library() -> Vec<CableSpec> {
    vec![
        CableSpec {
            id: "cn_4/0_AA".into(),
            phase_conductor: "4/0_AA".into(),
            strand_conductor: STRAND_ID.into(),
            strands: 13,
            neutral_circle_radius_in: 0.613,
            relative_permittivity: 2.3,
        },
        CableSpec {
            id: "cn_1/0_AA".into(),
            phase_conductor: "1/0_AA".into(),
            strand_conductor: STRAND_ID.into(),
            strands: 16,
            neutral_circle_radius_in: 0.498,
            relative_permittivity: 2.3,
        },
    ]
}

fn geometry_library() -> Vec<WireGeometry> {
    let g = |id: &str, p: &[[f64; 2]], note: &str| WireGeometry {
        id: id.into(),
        positions_ft: p.to_vec(),
        note: Some(note.into()),
    };
    let oh = "assumed typical pole-top spacing";
    let ug = "assumed trench spacing, cable centres 6 in apart";
    vec![
        g("oh_3ph", &[[0.0, 28.0], [2.5, 28.0], [7.0, 28.0], [4.0, 24.0]], oh),
        g("oh_2ph", &[[0.0, 28.0], [7.0, 28.0], [4.0, 24.0]], oh),
        g("oh_1ph", &[[0.0, 29.0], [0.0, 24.0]], oh),
        g("ug_3ph", &[[0.0, -4.0], [0.5, -4.0], [1.0, -4.0]], ug),
        g("ug_2ph", &[[0.0, -4.0], [0.5, -4.0]], ug),
        g("ug_1ph", &[[0.0, -4.0]], ug),
    ]
}

fn phases_of(s: &str) -> PhaseSet {
    s.parse().expect("static phase string")
}

struct FeederBus {
    idx: usize,
    phases: PhaseSet,
    pos: [f64; 2],
    dir: [f64; 2],
}

struct Builder {
    buses: Vec<Bus>,
    segments: Vec<LineSegment>,
    switches: Vec<SwitchState>,
}

impl Builder {
    #[allow(clippy::too_many_arguments)]
    fn segment(&mut self, id: String, from: usize, to: usize, len: f64, phases: PhaseSet, underground: bool, trunk: bool, rng: &mut ChaCha8Rng) {
        let np = phases.len();
        let (construction, phase_wires, neutral_wires, geom) = if underground {
            let cable = if trunk || np == 3 { "cn_4/0_AA" } else { "cn_1/0_AA" };
            (Construction::Underground, vec![cable.to_string(); np], vec![], format!("ug_{np}ph"))
        } else {
            let (p, n) = if trunk {
                ("4/0_ACSR", "1/0_ACSR")
            } else {
                let choices: &[(&str, &str)] = if np == 3 {
                    &[("1/0_ACSR", "1/0_ACSR"), ("4/0_AA", "1/0_AA"), ("2_CU", "2_CU")]
                } else {
                    &[("1/0_ACSR", "2_ACSR"), ("2_ACSR", "4_ACSR"), ("4_ACSR", "4_ACSR"), ("2_CU", "6_CU"), ("6_CU", "6_CU"), ("1/0_AA", "1/0_AA")]
                };
                choices[rng.random_range(0..choices.len())]
            };
            (Construction::Overhead, vec![p.to_string(); np], vec![n.to_string()], format!("oh_{np}ph"))
        };
        self.segments.push(LineSegment {
            id,
            from_bus: self.buses[from].id.clone(),
            to_bus: self.buses[to].id.clone(),
            length_mi: len,
            construction,
            phases,
            phase_wires,
            neutral_wires,
            geometry_id: geom,
            normally_energized: true,
        });
    }

    fn add_bus(&mut self, id: String, phases: PhaseSet, feeder: Option<String>, pos: [f64; 2]) -> usize {
        self.buses.push(Bus { id, phases, nominal_ll_kv: PRIMARY_KV, feeder, coordinates: Some(pos) });
        self.buses.len() - 1
    }
}

fn rotate(d: [f64; 2], deg: f64) -> [f64; 2] {
    let (s, c) = deg.to_radians().sin_cos();
    [d[0] * c - d[1] * s, d[0] * s + d[1] * c]
}

/// Splits `total` into parts proportional to `weights` (largest remainder).
fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut rem: Vec<(usize, f64)> = exact.iter().enumerate().map(|(i, x)| (i, x - x.floor())).collect();
    rem.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let short = total - out.iter().sum::<usize>();
    for (i, _) in rem.into_iter().take(short) {
        out[i] += 1;
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum CustomerClass {
    Residential,
    Commercial,
}

struct LpPlan {
    bus: usize,
    class: CustomerClass,
    phases: PhaseSet,
    customers: Vec<String>,
}

/// Builds the synthetic network and one year of hourly meter data.
pub fn synth_feeder(params: &SynthParams) -> SyntheticSystem {
    let mut topo_rng = substream(params.seed, "topology");
    let mut b = Builder { buses: Vec::new(), segments: Vec::new(), switches: Vec::new() };

    b.buses.push(Bus {
        id: "sourcebus".into(),
        phases: PhaseSet::ABC,
        nominal_ll_kv: SUBTRANSMISSION_KV,
        feeder: None,
        coordinates: Some([0.0, -0.4]),
    });
    b.add_bus("sub_lv".into(), PhaseSet::ABC, None, [0.0, -0.2]);
    b.add_bus("bus1".into(), PhaseSet::ABC, None, [0.0, 0.0]);

    let feeder_buses = params.primary_nodes.saturating_sub(2);
    let per_feeder = apportion(&vec![1.0; params.feeders], feeder_buses);
    let mut trunk_ends = Vec::new();
    let mut trunk_buses_by_feeder = Vec::new();
    let mut feeder_members: Vec<Vec<FeederBus>> = Vec::new();

    for (f, &n_f) in per_feeder.iter().enumerate() {
        let letter = (b'A' + f as u8) as char;
        let label = letter.to_string();
        let dir0 = rotate([0.0, 1.0], -60.0 + 120.0 * f as f64 / (params.feeders.max(2) - 1) as f64);
        let mut members: Vec<FeederBus> = Vec::new();
        let mut counter = 0usize;
        let mut next_name = || {
            counter += 1;
            format!("{letter}{counter:03}")
        };

        let trunk_len = ((n_f as f64 * 0.35).round() as usize).clamp(2.min(n_f), n_f);
        let mid = trunk_len / 2;
        let mut prev: Option<usize> = None;
        let mut trunk = Vec::new();
        for t in 0..trunk_len {
            let len = topo_rng.random_range(0.08..0.25);
            let pos = match prev {
                Some(p) => {
                    let pp = b.buses[p].coordinates.unwrap();
                    [pp[0] + dir0[0] * len, pp[1] + dir0[1] * len]
                }
                None => [dir0[0] * 0.1, dir0[1] * 0.1],
            };
            let idx = b.add_bus(next_name(), PhaseSet::ABC, Some(label.clone()), pos);
            match prev {
                None => b.switches.push(SwitchState {
                    id: format!("brk_{letter}_head"),
                    from_bus: "bus1".into(),
                    to_bus: b.buses[idx].id.clone(),
                    phases: PhaseSet::ABC,
                    normal_state: SwitchPosition::Closed,
                    current_state: SwitchPosition::Closed,
                }),
                Some(p) if t == mid => b.switches.push(SwitchState {
                    id: format!("brk_{letter}_mid"),
                    from_bus: b.buses[p].id.clone(),
                    to_bus: b.buses[idx].id.clone(),
                    phases: PhaseSet::ABC,
                    normal_state: SwitchPosition::Closed,
                    current_state: SwitchPosition::Closed,
                }),
                Some(p) => {
                    let ug = topo_rng.random_bool(0.12);
                    b.segment(format!("{letter}_seg{t:03}"), p, idx, len, PhaseSet::ABC, ug, true, &mut topo_rng);
                }
            }
            members.push(FeederBus { idx, phases: PhaseSet::ABC, pos, dir: dir0 });
            trunk.push(idx);
            prev = Some(idx);
        }
        trunk_ends.push(*trunk.last().expect("trunk nonempty"));
        trunk_buses_by_feeder.push(trunk.clone());

        let mut remaining = n_f - trunk_len;
        let mut single_phase_cycle = 0usize;
        let mut lateral_no = 0usize;
        let mut side = 1.0;
        while remaining > 0 {
            lateral_no += 1;
            let size = remaining.min(topo_rng.random_range(2..=7));
            remaining -= size;
            let attach = if topo_rng.random_bool(0.6) {
                trunk[topo_rng.random_range(0..trunk.len())]
            } else {
                members[topo_rng.random_range(0..members.len())].idx
            };
            let parent = members.iter().find(|m| m.idx == attach).expect("member");
            let (pphases, mut pos, pdir) = (parent.phases, parent.pos, parent.dir);
            let phases = match pphases.len() {
                3 => {
                    let r: f64 = topo_rng.random();
                    if r < 0.25 {
                        PhaseSet::ABC
                    } else if r < 0.4 {
                        let pairs = ["AB", "BC", "AC"];
                        phases_of(pairs[lateral_no % 3])
                    } else {
                        single_phase_cycle += 1;
                        PhaseSet::single(Phase::ALL[single_phase_cycle % 3])
                    }
                }
                _ => {
                    let options: Vec<Phase> = pphases.iter().collect();
                    if options.len() == 2 && topo_rng.random_bool(0.3) {
                        pphases
                    } else {
                        single_phase_cycle += 1;
                        PhaseSet::single(options[single_phase_cycle % options.len()])
                    }
                }
            };
            let underground = topo_rng.random_bool(0.3);
            side = -side;
            let dir = rotate(pdir, 90.0 * side);
            let mut from = attach;
            for k in 0..size {
                let len = topo_rng.random_range(0.04..0.16);
                pos = [pos[0] + dir[0] * len, pos[1] + dir[1] * len];
                let idx = b.add_bus(next_name(), phases, Some(label.clone()), pos);
                b.segment(format!("{letter}_lat{lateral_no:02}_{k}"), from, idx, len, phases, underground, false, &mut topo_rng);
                members.push(FeederBus { idx, phases, pos, dir });
                from = idx;
            }
        }
        feeder_members.push(members);
    }

    // Normal-open ties between neighbouring feeder ends.
    for f in 0..params.feeders {
        let g = (f + 1) % params.feeders;
        if params.feeders < 2 || (params.feeders == 2 && f == 1) {
            break;
        }
        let (a, c) = ((b'A' + f as u8) as char, (b'A' + g as u8) as char);
        b.switches.push(SwitchState {
            id: format!("tie_{a}{c}"),
            from_bus: b.buses[trunk_ends[f]].id.clone(),
            to_bus: b.buses[trunk_ends[g]].id.clone(),
            phases: PhaseSet::ABC,
            normal_state: SwitchPosition::Open,
            current_state: SwitchPosition::Open,
        });
    }

    // Scale lengths to the requested primary mileage.
    let total: f64 = b.segments.iter().map(|s| s.length_mi).sum();
    if total > 0.0 {
        let k = params.total_primary_miles / total;
        for s in &mut b.segments {
            s.length_mi *= k;
        }
    }

    // Capacitor banks on the trunks of feeders B and C.
    let mut capacitors = Vec::new();
    for (f, trunk) in trunk_buses_by_feeder.iter().enumerate().take(params.feeders.min(3)).skip(1) {
        let at = trunk[(trunk.len() * 2 / 3).min(trunk.len() - 1)];
        capacitors.push(CapacitorBank {
            id: format!("cap_{}", (b'A' + f as u8) as char),
            bus: b.buses[at].id.clone(),
            phases: PhaseSet::ABC,
            kvar: 50.0,
            connection: CapacitorConnection::GroundedWye,
            state: DeviceState::On,
        });
    }

    // Load points: commercial three-phase services on some three-phase buses,
    // residential single-phase services elsewhere.
    let mut lp_rng = substream(params.seed, "load-points");
    let mut plans: Vec<LpPlan> = Vec::new();
    for members in &feeder_members {
        for m in members {
            if lp_rng.random_bool(0.07) {
                continue;
            }
            let class = if m.phases.len() == 3 && lp_rng.random_bool(0.3) {
                CustomerClass::Commercial
            } else {
                CustomerClass::Residential
            };
            let phases = if class == CustomerClass::Commercial { PhaseSet::ABC } else { m.phases };
            plans.push(LpPlan { bus: m.idx, class, phases, customers: Vec::new() });
        }
    }
    let weights: Vec<f64> = plans
        .iter()
        .map(|p| match p.class {
            CustomerClass::Commercial => lp_rng.random_range(1..=4) as f64,
            CustomerClass::Residential => lp_rng.random_range(3..=8) as f64,
        })
        .collect();
    let counts = apportion(&weights, params.customers);
    let mut next_customer = 0usize;
    for (plan, &n) in plans.iter_mut().zip(&counts) {
        plan.customers = (0..n)
            .map(|_| {
                next_customer += 1;
                format!("M{next_customer:04}")
            })
            .collect();
    }
    // Most constrained services first, largest first, each onto the lightest
    // available phase of its feeder.
    let mut order: Vec<usize> = (0..plans.len()).filter(|&i| plans[i].class == CustomerClass::Residential).collect();
    order.sort_by_key(|&i| (plans[i].phases.len(), std::cmp::Reverse(counts[i]), i));
    let mut phase_load: std::collections::BTreeMap<(String, Phase), usize> = Default::default();
    for i in order {
        let plan = &mut plans[i];
        let feeder = b.buses[plan.bus].feeder.clone().unwrap_or_default();
        let phase = plan
            .phases
            .iter()
            .min_by_key(|p| (phase_load.get(&(feeder.clone(), *p)).copied().unwrap_or(0), p.index()))
            .expect("bus has a phase");
        *phase_load.entry((feeder, phase)).or_default() += counts[i];
        plan.phases = PhaseSet::single(phase);
    }

    let classes: Vec<(String, CustomerClass)> =
        plans.iter().flat_map(|p| p.customers.iter().map(move |c| (c.clone(), p.class))).collect();
    let mut meters = synth_loads(params, &classes);
    calibrate(&mut meters, params.peak_loading * SUBSTATION_KVA * 0.925);

    // Size each service transformer from its peak demand.
    let mut transformers = vec![TransformerSpec {
        id: "sub_xfmr".into(),
        phase_count: 3,
        kva: SUBSTATION_KVA,
        primary_kv: SUBTRANSMISSION_KV,
        secondary_kv: PRIMARY_KV,
        r_pct: 0.5,
        x_pct: 7.0,
        connection: WindingConnection::DeltaWye,
        from_bus: Some("sourcebus".into()),
        to_bus: Some("sub_lv".into()),
    }];
    let mut load_points = Vec::new();
    let mut meter_at = 0usize;
    for (i, plan) in plans.iter().enumerate() {
        let n = plan.customers.len();
        let peak_kw = (0..HOURS_PER_YEAR)
            .map(|h| meters[meter_at..meter_at + n].iter().map(|m| m.kwh[h].max(0.0)).sum::<f64>())
            .fold(0.0, f64::max);
        meter_at += n;
        let phase_count = if plan.phases.len() == 3 { 3 } else { 1 };
        let peak_kva = peak_kw / 0.9;
        let sizes: Vec<_> = DISTRIBUTION_TRANSFORMER_TABLE.iter().filter(|t| t.0 == phase_count).collect();
        let &&(_, kva, r, x) = sizes.iter().find(|t| t.1 * 1.2 >= peak_kva).unwrap_or(sizes.last().expect("table"));
        let tid = format!("T{:03}", i + 1);
        transformers.push(TransformerSpec {
            id: tid.clone(),
            phase_count,
            kva,
            primary_kv: if phase_count == 3 { PRIMARY_KV } else { PRIMARY_KV / 3f64.sqrt() },
            secondary_kv: 0.24,
            r_pct: r,
            x_pct: x,
            connection: WindingConnection::WyeWye,
            from_bus: None,
            to_bus: None,
        });
        load_points.push(LoadPoint {
            id: format!("LP{:03}", i + 1),
            bus: b.buses[plan.bus].id.clone(),
            phases: plan.phases,
            transformer_id: tid,
            customer_ids: plan.customers.clone(),
        });
    }

    if params.anomalies {
        inject_anomalies(params.seed, &mut meters);
    }

    let model = NetworkModel {
        schema_version: SCHEMA_VERSION.into(),
        name: format!("synthetic-{}-feeder-seed-{}", params.feeders, params.seed),
        frequency_hz: 60.0,
        source: SourceSpec {
            bus: "sourcebus".into(),
            nominal_ll_kv: SUBTRANSMISSION_KV,
            voltage_pu: params.source_pu,
            angle_deg: 0.0,
            r1: 4.5426,
            x1: 10.5274,
            r0: 7.3655,
            x0: 24.5046,
        },
        buses: b.buses,
        conductors: conductor_library(),
        cables: cable_library(),
        geometries: geometry_library(),
        segments: b.segments,
        transformers,
        regulators: vec![RegulatorSpec {
            id: "ltc".into(),
            from_bus: "sub_lv".into(),
            to_bus: "bus1".into(),
            phases: PhaseSet::ABC,
            winding_kv: 7.9674,
            kva: 3500.0,
            setpoint_v: 123.0,
            bandwidth_v: 2.0,
            vmax_v: 129.0,
            vmin_v: 110.0,
            max_tap: 16,
            step_pct: 0.625,
            pt_ratio: 7967.4 / 120.0,
            monitored_bus: "bus1".into(),
            initial_taps: [0, 0, 0],
        }],
        capacitors,
        switches: b.switches,
        load_points,
        profiles_ref: None,
        assumptions: vec![
            "wire spacings and trench geometry are typical values, not utility data".into(),
            "substation transformer impedance 0.5% + j7% on 10 MVA".into(),
            "#14 copper concentric-neutral strands".into(),
            "breaker placement: one at each feeder head, one mid-trunk, three normally-open ties".into(),
            "tap step 0.625% (0.75 V on 120 V), range -16..+16".into(),
        ],
    };
    SyntheticSystem { model, meters }
}

fn day_of_week(year: i32, hour: usize) -> u32 {
    use chrono::Datelike;
    let jan1 = chrono::NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year");
    (jan1.weekday().num_days_from_monday() + (hour / 24) as u32) % 7
}

/// Outdoor temperature (°C) for each hour: seasonal cycle, day-to-day weather
/// as an AR(1) process and a diurnal swing peaking mid-afternoon.
fn temperature(seed: u64) -> Vec<f64> {
    let mut rng = substream(seed, "weather");
    let noise = Normal::new(0.0, 3.0).expect("valid normal");
    let mut anomaly: f64 = 0.0;
    let mut out = Vec::with_capacity(HOURS_PER_YEAR);
    for d in 0..HOURS_PER_YEAR / 24 {
        anomaly = 0.7 * anomaly + noise.sample(&mut rng);
        let mean = 10.0 - 15.0 * (std::f64::consts::TAU * (d as f64 - 20.0) / 365.0).cos() + anomaly;
        for h in 0..24 {
            out.push(mean + 5.0 * (std::f64::consts::TAU * (h as f64 - 9.0) / 24.0).sin());
        }
    }
    out
}

fn synth_loads(params: &SynthParams, customers: &[(String, CustomerClass)]) -> Vec<MeterSeries> {
    let temp = temperature(params.seed);
    let dow: Vec<u32> = (0..HOURS_PER_YEAR).step_by(24).map(|h| day_of_week(params.year, h)).collect();
    customers
        .iter()
        .map(|(id, class)| {
            let mut rng = substream(params.seed, &format!("load/{id}"));
            let noise = Normal::<f64>::new(0.0, 1.0).expect("valid normal");
            let kwh: Vec<f64> = match class {
                CustomerClass::Residential => {
                    let base = rng.random_range(0.3..0.7);
                    let cool = rng.random_range(0.08..0.22);
                    let heat = rng.random_range(0.02..0.08);
                    let evening = rng.random_range(17.5..20.5);
                    (0..HOURS_PER_YEAR)
                        .map(|h| {
                            let hod = (h % 24) as f64;
                            let weekend = dow[h / 24] >= 5;
                            let morning = if weekend { 9.0 } else { 7.0 };
                            let shape = 0.6
                                + 0.5 * (-((hod - morning) / 1.5).powi(2)).exp()
                                + 0.9 * (-((hod - evening) / 2.5).powi(2)).exp();
                            let t = temp[h];
                            let kw = base * shape + cool * (t - 22.0).max(0.0) + heat * (12.0 - t).max(0.0);
                            (kw * (0.3 * noise.sample(&mut rng)).exp()).max(0.02)
                        })
                        .collect()
                }
                CustomerClass::Commercial => {
                    let base = rng.random_range(10.0..40.0);
                    let cool = base * rng.random_range(0.02..0.04);
                    (0..HOURS_PER_YEAR)
                        .map(|h| {
                            let hod = h % 24;
                            let weekend = dow[h / 24] >= 5;
                            let occupancy = match (weekend, hod) {
                                (false, 8..=17) => 1.0,
                                (false, 6..=7 | 18..=20) => 0.75,
                                (true, 8..=17) => 0.65,
                                _ => 0.5,
                            };
                            let kw = base * occupancy + cool * occupancy * (temp[h] - 18.0).max(0.0);
                            (kw * (0.1 * noise.sample(&mut rng)).exp()).max(0.1)
                        })
                        .collect()
                }
            };
            MeterSeries::new(id.clone(), params.year, kwh)
        })
        .collect()
}

/// Scales every meter so the coincident peak equals `target_kw`.
fn calibrate(meters: &mut [MeterSeries], target_kw: f64) {
    let peak = (0..HOURS_PER_YEAR).map(|h| meters.iter().map(|m| m.kwh[h]).sum::<f64>()).fold(0.0, f64::max);
    if peak <= 0.0 {
        return;
    }
    let k = target_kw / peak;
    for m in meters.iter_mut() {
        for v in &mut m.kwh {
            *v *= k;
        }
    }
}

/// Gaps and spikes in about 2% of meters.
fn inject_anomalies(seed: u64, meters: &mut [MeterSeries]) {
    let mut rng = substream(seed, "anomalies");
    let mut order: Vec<usize> = (0..meters.len()).collect();
    order.shuffle(&mut rng);
    let count = (meters.len() as f64 * 0.02).ceil() as usize;
    for (n, &i) in order.iter().take(count).enumerate() {
        let m = &mut meters[i];
        let start = rng.random_range(200..HOURS_PER_YEAR - 200);
        let gap = match n % 3 {
            0 => Some(2),
            1 => Some(30),
            _ => None,
        };
        match gap {
            Some(len) => {
                for h in start..start + len {
                    m.kwh[h] = f64::NAN;
                    m.flags[h] = SampleFlag::Missing;
                }
            }
            None => m.kwh[start] = m.kwh[start] * 40.0 + 20.0,
        }
    }
}
