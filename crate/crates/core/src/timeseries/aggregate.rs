//! Privacy aggregation: customer meters summed per distribution transformer,
//! with a seeded power factor per customer.

use rand::Rng;

use super::{substream, MeterSeries, SampleFlag, TimeseriesError, HOURS_PER_YEAR};
use crate::devices::LoadSnapshot;
use crate::model::NetworkModel;
use crate::phase::PhaseSet;

/// Closed interval power factors are drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfRange {
    pub lo: f64,
    pub hi: f64,
}

impl Default for PfRange {
    fn default() -> Self {
        PfRange { lo: 0.90, hi: 0.95 }
    }
}

/// Deterministic power factor for a meter, keyed by (seed, meter id).
pub fn draw_power_factor(seed: u64, meter_id: &str, range: PfRange) -> f64 {
    if range.lo >= range.hi {
        return range.lo;
    }
    let mut rng = substream(seed, &format!("pf/{meter_id}"));
    rng.random_range(range.lo..=range.hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    AggregatedReal,
    Synthetic,
}

/// Hourly demand of one load point. Totals are split evenly over `phases`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadProfile {
    pub load_point: String,
    pub phases: PhaseSet,
    pub p_kw: Vec<f64>,
    pub q_kvar: Vec<f64>,
    pub provenance: Provenance,
    /// Power factor drawn for each constituent customer.
    pub power_factors: Vec<(String, f64)>,
}

impl LoadProfile {
    pub fn hours(&self) -> usize {
        self.p_kw.len()
    }

    pub fn snapshot(&self, hour: usize) -> LoadSnapshot<f64> {
        LoadSnapshot::balanced(self.phases, self.p_kw[hour], self.q_kvar[hour])
    }
}

/// Sums cleaned meter energy per load point. Each hour's kWh is taken as the
/// average kW over that hour; reactive power is `P·tan(acos(pf))` per
/// customer before summation.
pub fn aggregate_to_transformer(
    meters: &[MeterSeries],
    model: &NetworkModel,
    pf_seed: u64,
    pf: PfRange,
    provenance: Provenance,
) -> Result<Vec<LoadProfile>, TimeseriesError> {
    let mapping = model.customer_map();
    let mut profiles: Vec<LoadProfile> = model
        .load_points
        .iter()
        .map(|lp| LoadProfile {
            load_point: lp.id.clone(),
            phases: lp.phases,
            p_kw: vec![0.0; HOURS_PER_YEAR],
            q_kvar: vec![0.0; HOURS_PER_YEAR],
            provenance,
            power_factors: Vec::new(),
        })
        .collect();
    for m in meters {
        let &lp = mapping.get(&m.meter_id).ok_or_else(|| TimeseriesError::UnmappedMeter(m.meter_id.clone()))?;
        let unrepaired = m.flags.iter().filter(|f| matches!(f, SampleFlag::Missing | SampleFlag::Outlier)).count();
        if unrepaired > 0 {
            return Err(TimeseriesError::Unclean { meter: m.meter_id.clone(), count: unrepaired });
        }
        if m.kwh.len() != HOURS_PER_YEAR {
            return Err(TimeseriesError::ProfileLength { id: m.meter_id.clone(), got: m.kwh.len(), want: HOURS_PER_YEAR });
        }
        let factor = draw_power_factor(pf_seed, &m.meter_id, pf);
        let q_ratio = factor.acos().tan();
        let prof = &mut profiles[lp];
        prof.power_factors.push((m.meter_id.clone(), factor));
        for (h, &e) in m.kwh.iter().enumerate() {
            prof.p_kw[h] += e;
            prof.q_kvar[h] += e * q_ratio;
        }
    }
    Ok(profiles)
}
