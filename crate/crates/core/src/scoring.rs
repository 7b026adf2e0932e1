//! Comfort and curtailment scores, and their assembly into discrete score
//! distributions under occupancy uncertainty.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chiller::{ChillerError, ChillerModel};
use crate::domain::{Appliance, ApplianceKind, ControlAlternative, Zone};

/// Score values are snapped to this grid so that equal scores compare equal.
pub const SCORE_GRID: f64 = 1e-4;

const PROB_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("non-finite input to {0}")]
    NonFinite(&'static str),
    #[error("comfort parameters: alpha must be > 1 and delta > 0 (alpha={alpha}, delta={delta})")]
    ComfortParams { alpha: f64, delta: f64 },
    #[error("power {power} W outside [0, {rated}] W")]
    PowerOutOfRange { power: f64, rated: f64 },
    #[error("plug power {power} W must be 0 or the rated {rated} W")]
    PlugIntermediate { power: f64, rated: f64 },
    #[error("rated power must be positive, got {0}")]
    RatedPower(f64),
    #[error("curtailment scale: {0}")]
    ScaleParams(String),
    #[error("invalid score distribution: {0}")]
    Distribution(String),
    #[error("appliance '{appliance}' has no setting {index}")]
    UnknownSetting { appliance: String, index: usize },
    #[error(transparent)]
    Chiller(#[from] ChillerError),
}

/// Snaps a score onto [`SCORE_GRID`].
pub fn quantize(value: f64) -> f64 {
    (value / SCORE_GRID).round() * SCORE_GRID
}

fn grid_ticks(value: f64) -> i64 {
    (value / SCORE_GRID).round() as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub value: f64,
    pub prob: f64,
}

impl Atom {
    /// Integer position on the score grid; equal ticks mean equal scores.
    pub fn ticks(&self) -> i64 {
        grid_ticks(self.value)
    }
}

/// Finite discrete distribution of a criterion score on `[0, 1]`.
///
/// Support values live on [`SCORE_GRID`], are unique and ascending, and the
/// probabilities sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Atom>", into = "Vec<Atom>")]
pub struct ScoreDistribution {
    atoms: Vec<Atom>,
}

impl ScoreDistribution {
    pub fn new<I>(atoms: I) -> Result<Self, ScoringError>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let mut merged: Vec<(i64, f64)> = Vec::new();
        for (value, prob) in atoms {
            if !value.is_finite() || !prob.is_finite() {
                return Err(ScoringError::Distribution("non-finite atom".into()));
            }
            if !(-PROB_TOL..=1.0 + PROB_TOL).contains(&value) {
                return Err(ScoringError::Distribution(format!(
                    "value {value} outside [0, 1]"
                )));
            }
            if prob < 0.0 || prob > 1.0 + PROB_TOL {
                return Err(ScoringError::Distribution(format!(
                    "probability {prob} outside [0, 1]"
                )));
            }
            if prob == 0.0 {
                continue;
            }
            let t = grid_ticks(value.clamp(0.0, 1.0));
            match merged.iter_mut().find(|(k, _)| *k == t) {
                Some((_, p)) => *p += prob,
                None => merged.push((t, prob)),
            }
        }
        if merged.is_empty() {
            return Err(ScoringError::Distribution("empty support".into()));
        }
        let total: f64 = merged.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(ScoringError::Distribution(format!(
                "probabilities sum to {total}"
            )));
        }
        merged.sort_by_key(|(t, _)| *t);
        Ok(Self {
            atoms: merged
                .into_iter()
                .map(|(t, prob)| Atom {
                    value: t as f64 * SCORE_GRID,
                    prob,
                })
                .collect(),
        })
    }

    /// Deterministic score.
    pub fn atom(value: f64) -> Result<Self, ScoringError> {
        Self::new([(value, 1.0)])
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn expected(&self) -> f64 {
        self.atoms.iter().map(|a| a.value * a.prob).sum()
    }

    pub fn min_value(&self) -> f64 {
        self.atoms[0].value
    }

    pub fn max_value(&self) -> f64 {
        self.atoms[self.atoms.len() - 1].value
    }
}

impl TryFrom<Vec<Atom>> for ScoreDistribution {
    type Error = ScoringError;

    fn try_from(atoms: Vec<Atom>) -> Result<Self, Self::Error> {
        Self::new(atoms.into_iter().map(|a| (a.value, a.prob)))
    }
}

impl From<ScoreDistribution> for Vec<Atom> {
    fn from(d: ScoreDistribution) -> Self {
        d.atoms
    }
}

/// Thermal comfort of holding a zone at `zone_temp_c` when `desired_temp_c`
/// is most comfortable. Equals 1 at the desired temperature and decays
/// symmetrically with the normalized deviation `(T - T_s) / delta`.
pub fn comfort_hvac(
    zone_temp_c: f64,
    desired_temp_c: f64,
    delta_c: f64,
    alpha: f64,
) -> Result<f64, ScoringError> {
    if ![zone_temp_c, desired_temp_c, delta_c, alpha]
        .iter()
        .all(|v| v.is_finite())
    {
        return Err(ScoringError::NonFinite("comfort_hvac"));
    }
    if alpha <= 1.0 || delta_c <= 0.0 {
        return Err(ScoringError::ComfortParams {
            alpha,
            delta: delta_c,
        });
    }
    let dt = (zone_temp_c - desired_temp_c) / delta_c;
    let base = alpha + 1.0 / alpha;
    // alpha^dt + alpha^-dt written as 2 cosh(dt ln alpha) keeps the symmetry exact.
    let spread = 2.0 * (dt * alpha.ln()).cosh();
    Ok((base + 2.0) / (base + spread))
}

/// Perceived brightness of a dimmed light: the square root of the power fraction.
pub fn comfort_light(power_w: f64, rated_power_w: f64) -> Result<f64, ScoringError> {
    if !power_w.is_finite() || !rated_power_w.is_finite() {
        return Err(ScoringError::NonFinite("comfort_light"));
    }
    if rated_power_w <= 0.0 {
        return Err(ScoringError::RatedPower(rated_power_w));
    }
    if power_w < 0.0 || power_w > rated_power_w {
        return Err(ScoringError::PowerOutOfRange {
            power: power_w,
            rated: rated_power_w,
        });
    }
    Ok((power_w / rated_power_w).sqrt())
}

/// Plug-load score `1 - P / P_rated`: 1 when off, 0 when on.
pub fn comfort_plug(power_w: f64, rated_power_w: f64) -> Result<f64, ScoringError> {
    if !power_w.is_finite() || !rated_power_w.is_finite() {
        return Err(ScoringError::NonFinite("comfort_plug"));
    }
    if rated_power_w <= 0.0 {
        return Err(ScoringError::RatedPower(rated_power_w));
    }
    if power_w != 0.0 && power_w != rated_power_w {
        return Err(ScoringError::PlugIntermediate {
            power: power_w,
            rated: rated_power_w,
        });
    }
    Ok(1.0 - power_w / rated_power_w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurtailmentScaleParams {
    pub alpha2: f64,
    /// Largest estimated reduction in the fleet, W.
    pub p_max_w: f64,
    /// Smallest (positive) estimated reduction in the fleet, W.
    pub p_min_w: f64,
}

impl CurtailmentScaleParams {
    pub fn new(alpha2: f64, p_max_w: f64, p_min_w: f64) -> Result<Self, ScoringError> {
        let p = Self {
            alpha2,
            p_max_w,
            p_min_w,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ScoringError> {
        if !(self.alpha2.is_finite() && self.alpha2 > 1.0) {
            return Err(ScoringError::ScaleParams(format!(
                "alpha2 must be > 1, got {}",
                self.alpha2
            )));
        }
        if !(self.p_min_w.is_finite() && self.p_min_w > 0.0 && self.p_max_w >= self.p_min_w) {
            return Err(ScoringError::ScaleParams(format!(
                "need p_max >= p_min > 0, got p_max={} p_min={}",
                self.p_max_w, self.p_min_w
            )));
        }
        Ok(())
    }

    /// Scale spanning the positive reductions of a fleet. With no positive
    /// reduction the scale is degenerate and every score is 1.
    pub fn from_reductions<I>(alpha2: f64, reductions: I) -> Result<Self, ScoringError>
    where
        I: IntoIterator<Item = f64>,
    {
        let (lo, hi) = reductions
            .into_iter()
            .filter(|r| r.is_finite() && *r > 0.0)
            .fold((f64::INFINITY, 0.0_f64), |(lo, hi), r| (lo.min(r), hi.max(r)));
        if hi == 0.0 {
            return Self::new(alpha2, 1.0, 1.0);
        }
        Self::new(alpha2, hi, lo)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurtailmentScore {
    pub value: f64,
    /// The reduction fell outside `[p_min, p_max]` and was clamped.
    pub clamped: bool,
}

/// Log-scaled curtailment score: 1 at `p_max`, `1/alpha2` at `p_min`.
pub fn curtailment_score(
    p_reduction_w: f64,
    params: &CurtailmentScaleParams,
) -> Result<CurtailmentScore, ScoringError> {
    if !p_reduction_w.is_finite() {
        return Err(ScoringError::NonFinite("curtailment_score"));
    }
    params.validate()?;
    let clamped = p_reduction_w < params.p_min_w || p_reduction_w > params.p_max_w;
    if params.p_max_w == params.p_min_w {
        return Ok(CurtailmentScore {
            value: 1.0,
            clamped,
        });
    }
    let p = p_reduction_w.clamp(params.p_min_w, params.p_max_w);
    let value = if p == params.p_max_w {
        1.0
    } else if p == params.p_min_w {
        1.0 / params.alpha2
    } else {
        (-params.alpha2.ln() * (params.p_max_w / p).ln() / (params.p_max_w / params.p_min_w).ln())
            .exp()
    };
    Ok(CurtailmentScore { value, clamped })
}

/// What the scorer needs to know about the knob behind an alternative.
#[derive(Debug, Clone, Copy)]
pub struct KnobContext<'a> {
    pub zone: &'a Zone,
    pub appliance: &'a Appliance,
    /// Power the appliance draws with no command in force, W. Ignored for HVAC.
    pub demand_power_w: f64,
    /// Forecast probability that the zone is occupied at the decision horizon.
    pub occupied_prob: f64,
}

/// Estimated building-load reduction of an alternative relative to the
/// uncommanded state of its knob, W. Never negative.
///
/// HVAC offsets earn `|beta_z * offset|` for upward offsets and nothing for
/// downward ones.
pub fn estimated_reduction(
    alt: &ControlAlternative,
    knob: &KnobContext<'_>,
    chiller: &ChillerModel,
) -> Result<f64, ScoringError> {
    let setting = knob
        .appliance
        .settings
        .get(alt.setting_index)
        .ok_or_else(|| ScoringError::UnknownSetting {
            appliance: knob.appliance.id.clone(),
            index: alt.setting_index,
        })?;
    let demand = knob.demand_power_w.max(0.0);
    let r = match knob.appliance.kind {
        ApplianceKind::HvacSetpoint => {
            if setting.value > 0.0 {
                chiller
                    .setpoint_power_delta(&knob.zone.id, setting.value)?
                    .abs()
            } else {
                0.0
            }
        }
        ApplianceKind::DimmableLight => {
            let commanded = setting.value * knob.appliance.rated_power_w;
            (demand - commanded.min(demand)).max(0.0)
        }
        ApplianceKind::PlugLoad => {
            if setting.value > 0.5 {
                0.0
            } else {
                demand
            }
        }
    };
    Ok(r)
}

/// Comfort score of an alternative in an occupied zone, at the post-action
/// steady state.
pub fn occupied_comfort(alt: &ControlAlternative, knob: &KnobContext<'_>) -> Result<f64, ScoringError> {
    let app = knob.appliance;
    let setting = app
        .settings
        .get(alt.setting_index)
        .ok_or_else(|| ScoringError::UnknownSetting {
            appliance: app.id.clone(),
            index: alt.setting_index,
        })?;
    let zone = knob.zone;
    match app.kind {
        ApplianceKind::HvacSetpoint => comfort_hvac(
            zone.desired_temp_c + setting.value,
            zone.desired_temp_c,
            zone.comfort_delta_c,
            zone.comfort_alpha,
        ),
        ApplianceKind::DimmableLight => {
            comfort_light(setting.value * app.rated_power_w, app.rated_power_w)
        }
        // An occupant who loses the device scores 0; the plug formula's
        // "off scores 1" only applies once the zone is empty.
        ApplianceKind::PlugLoad => {
            let power = if setting.value > 0.5 { app.rated_power_w } else { 0.0 };
            Ok(1.0 - comfort_plug(power, app.rated_power_w)?)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternativeScores {
    /// One distribution per criterion: `[comfort, curtailment]`.
    pub distributions: Vec<ScoreDistribution>,
    pub estimated_reduction_w: f64,
    pub occupied_prob: f64,
    pub occupied_comfort: f64,
    pub curtailment_clamped: bool,
}

/// Comfort and curtailment distributions of one alternative.
///
/// Comfort is a two-atom mixture: 1 with probability `1 - occupied_prob`
/// (nobody there to notice) and the occupied-case comfort otherwise.
/// Curtailment is deterministic.
pub fn score_alternative(
    alt: &ControlAlternative,
    knob: &KnobContext<'_>,
    chiller: &ChillerModel,
    scale: &CurtailmentScaleParams,
) -> Result<AlternativeScores, ScoringError> {
    if !knob.occupied_prob.is_finite() || !(0.0..=1.0).contains(&knob.occupied_prob) {
        return Err(ScoringError::Distribution(format!(
            "occupied probability {} outside [0, 1]",
            knob.occupied_prob
        )));
    }
    let occupied = occupied_comfort(alt, knob)?;
    let p = knob.occupied_prob;
    let comfort = ScoreDistribution::new([(1.0, 1.0 - p), (occupied, p)])?;
    let reduction = estimated_reduction(alt, knob, chiller)?;
    let curt = curtailment_score(reduction, scale)?;
    Ok(AlternativeScores {
        distributions: vec![comfort, ScoreDistribution::atom(curt.value)?],
        estimated_reduction_w: reduction,
        occupied_prob: p,
        occupied_comfort: occupied,
        curtailment_clamped: curt.clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Appliance, BaselinePolicy, Building, Floor};
    use proptest::prelude::*;

    const EPS: f64 = 1e-12;

    // Literal evaluation of the comfort formula, kept apart from the cosh form.
    fn comfort_direct(t: f64, ts: f64, delta: f64, alpha: f64) -> f64 {
        let dt = (t - ts) / delta;
        (alpha + 1.0 / alpha + 2.0) / (alpha + 1.0 / alpha + alpha.powf(dt) + alpha.powf(-dt))
    }

    #[test]
    fn hvac_comfort_examples() {
        assert!((comfort_hvac(22.0, 22.0, 3.0, 10.0).unwrap() - 1.0).abs() < EPS);
        let warm = comfort_hvac(25.0, 22.0, 3.0, 10.0).unwrap();
        assert!((warm - 12.1 / 20.2).abs() < 1e-12);
        assert!((warm - 0.59901).abs() < 1e-5);
        assert_eq!(warm, comfort_hvac(19.0, 22.0, 3.0, 10.0).unwrap());
        for t in [15.0, 20.5, 23.1, 27.0] {
            let a = comfort_hvac(t, 22.0, 3.0, 10.0).unwrap();
            assert!((a - comfort_direct(t, 22.0, 3.0, 10.0)).abs() < 1e-12);
        }
        assert!(comfort_hvac(f64::NAN, 22.0, 3.0, 10.0).is_err());
        assert!(comfort_hvac(22.0, 22.0, 3.0, 1.0).is_err());
    }

    #[test]
    fn hvac_comfort_decreases_above_setpoint() {
        let mut prev = comfort_hvac(22.0, 22.0, 3.0, 10.0).unwrap();
        for k in 1..=100 {
            let t = 22.0 + k as f64 * 0.1;
            let c = comfort_hvac(t, 22.0, 3.0, 10.0).unwrap();
            assert!(c < prev, "not decreasing at {t}");
            prev = c;
        }
    }

    #[test]
    fn light_and_plug_examples() {
        assert_eq!(comfort_light(100.0, 100.0).unwrap(), 1.0);
        assert_eq!(comfort_light(25.0, 100.0).unwrap(), 0.5);
        assert_eq!(comfort_light(0.0, 100.0).unwrap(), 0.0);
        assert!(comfort_light(120.0, 100.0).is_err());
        assert!(comfort_light(-1.0, 100.0).is_err());

        assert_eq!(comfort_plug(0.0, 60.0).unwrap(), 1.0);
        assert_eq!(comfort_plug(60.0, 60.0).unwrap(), 0.0);
        assert!(matches!(
            comfort_plug(30.0, 60.0),
            Err(ScoringError::PlugIntermediate { .. })
        ));
    }

    #[test]
    fn curtailment_examples() {
        let p = CurtailmentScaleParams::new(10.0, 1000.0, 10.0).unwrap();
        assert_eq!(curtailment_score(1000.0, &p).unwrap().value, 1.0);
        assert_eq!(curtailment_score(10.0, &p).unwrap().value, 0.1);
        let mid = curtailment_score(100.0, &p).unwrap();
        assert!((mid.value - 10f64.powf(-0.5)).abs() < 1e-12);
        assert!(!mid.clamped);

        let low = curtailment_score(1.0, &p).unwrap();
        assert_eq!(low.value, 0.1);
        assert!(low.clamped);
        let high = curtailment_score(5000.0, &p).unwrap();
        assert_eq!(high.value, 1.0);
        assert!(high.clamped);

        let flat = CurtailmentScaleParams::new(10.0, 60.0, 60.0).unwrap();
        assert_eq!(curtailment_score(60.0, &flat).unwrap().value, 1.0);
        assert!(CurtailmentScaleParams::new(1.0, 10.0, 1.0).is_err());
        assert!(CurtailmentScaleParams::new(10.0, 1.0, 10.0).is_err());
    }

    #[test]
    fn distribution_merges_and_sorts() {
        let d = ScoreDistribution::new([(0.8, 0.25), (0.2, 0.5), (0.80004, 0.25)]).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.atoms()[0].value, 0.2);
        assert!((d.atoms()[1].prob - 0.5).abs() < EPS);
        assert!(ScoreDistribution::new([(0.5, 0.6)]).is_err());
        assert!(ScoreDistribution::new([(1.5, 1.0)]).is_err());
        assert!(ScoreDistribution::new(Vec::<(f64, f64)>::new()).is_err());
        let json = serde_json::to_string(&d).unwrap();
        let back: ScoreDistribution = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
    }

    fn zone_with(appliance: Appliance) -> Zone {
        Zone {
            id: "z".into(),
            desired_temp_c: 22.0,
            comfort_alpha: 10.0,
            comfort_delta_c: 3.0,
            appliances: vec![appliance],
        }
    }

    fn alternatives(zone: &Zone) -> Vec<ControlAlternative> {
        let b = Building {
            id: "b".into(),
            floor_area_m2: 1.0,
            floors: vec![Floor {
                id: "f".into(),
                zones: vec![zone.clone()],
            }],
        };
        crate::domain::enumerate_alternatives(&b, BaselinePolicy::Include).unwrap()
    }

    fn chiller() -> ChillerModel {
        ChillerModel::new(vec!["z".into()], 5000.0, 200.0, vec![-150.0]).unwrap()
    }

    #[test]
    fn unoccupied_plug_off_scores_full_comfort() {
        let zone = zone_with(Appliance::plug_load("pc", 60.0));
        let alts = alternatives(&zone);
        let off = alts.iter().find(|a| a.value == 0.0).unwrap();
        let knob = KnobContext {
            zone: &zone,
            appliance: &zone.appliances[0],
            demand_power_w: 60.0,
            occupied_prob: 0.0,
        };
        let scale = CurtailmentScaleParams::new(10.0, 60.0, 60.0).unwrap();
        let s = score_alternative(off, &knob, &chiller(), &scale).unwrap();
        assert_eq!(s.distributions[0], ScoreDistribution::atom(1.0).unwrap());
        assert_eq!(s.estimated_reduction_w, 60.0);

        let knob = KnobContext {
            occupied_prob: 0.7,
            ..knob
        };
        let s = score_alternative(off, &knob, &chiller(), &scale).unwrap();
        let atoms = s.distributions[0].atoms();
        assert_eq!(atoms.len(), 2);
        assert_eq!((atoms[0].value, atoms[1].value), (0.0, 1.0));
        assert!((atoms[0].prob - 0.7).abs() < EPS);
        assert!((atoms[1].prob - 0.3).abs() < EPS);
    }

    #[test]
    fn hvac_offset_scores() {
        let zone = zone_with(Appliance::hvac("hvac"));
        let alts = alternatives(&zone);
        let plus2 = alts.iter().find(|a| a.value == 2.0).unwrap();
        let knob = KnobContext {
            zone: &zone,
            appliance: &zone.appliances[0],
            demand_power_w: 0.0,
            occupied_prob: 1.0,
        };
        let scale = CurtailmentScaleParams::new(10.0, 750.0, 150.0).unwrap();
        let s = score_alternative(plus2, &knob, &chiller(), &scale).unwrap();
        let expected = comfort_direct(24.0, 22.0, 3.0, 10.0);
        assert_eq!(
            s.distributions[0],
            ScoreDistribution::atom(expected).unwrap()
        );
        assert_eq!(s.estimated_reduction_w, 300.0);

        let minus2 = alts.iter().find(|a| a.value == -2.0).unwrap();
        let s = score_alternative(minus2, &knob, &chiller(), &scale).unwrap();
        assert_eq!(s.estimated_reduction_w, 0.0);
        assert!(s.curtailment_clamped);
    }

    #[test]
    fn light_reduction_follows_demand() {
        let zone = zone_with(Appliance::dimmable_light("l", 500.0));
        let alts = alternatives(&zone);
        let dim = alts.iter().find(|a| (a.value - 0.6).abs() < 1e-9).unwrap();
        let mut knob = KnobContext {
            zone: &zone,
            appliance: &zone.appliances[0],
            demand_power_w: 500.0,
            occupied_prob: 1.0,
        };
        assert!((estimated_reduction(dim, &knob, &chiller()).unwrap() - 200.0).abs() < 1e-9);
        knob.demand_power_w = 0.0;
        assert_eq!(estimated_reduction(dim, &knob, &chiller()).unwrap(), 0.0);
        assert!((occupied_comfort(dim, &knob).unwrap() - 0.6f64.sqrt()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn hvac_symmetry(ti in -640i32..3200, tsi in 960i32..1920, delta in 0.5f64..5.0, alpha in 1.01f64..50.0) {
            // Temperatures on a 1/64 grid so the reflection 2*ts - t is exact.
            let (t, ts) = (ti as f64 / 64.0, tsi as f64 / 64.0);
            let a = comfort_hvac(t, ts, delta, alpha).unwrap();
            let b = comfort_hvac(2.0 * ts - t, ts, delta, alpha).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!(a > 0.0 && a <= 1.0);
        }

        #[test]
        fn curtailment_monotone(alpha in 1.01f64..100.0, lo in 1.0f64..500.0, span in 1.0f64..100.0, u in 0.0f64..1.0, v in 0.0f64..1.0) {
            let hi = lo * span;
            let p = CurtailmentScaleParams::new(alpha, hi, lo).unwrap();
            let (a, b) = if u <= v { (u, v) } else { (v, u) };
            let pa = lo + a * (hi - lo);
            let pb = lo + b * (hi - lo);
            let sa = curtailment_score(pa, &p).unwrap().value;
            let sb = curtailment_score(pb, &p).unwrap().value;
            prop_assert!(sa <= sb + 1e-15);
            prop_assert!(sa >= 1.0 / alpha - 1e-12 && sb <= 1.0 + 1e-12);
        }

        #[test]
        fn mixture_is_valid_and_monotone_in_occupancy(p1 in 0.0f64..1.0, p2 in 0.0f64..1.0, idx in 0usize..11) {
            let zone = zone_with(Appliance::hvac("hvac"));
            let alts = alternatives(&zone);
            let alt = &alts[idx];
            let scale = CurtailmentScaleParams::new(10.0, 750.0, 150.0).unwrap();
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            let score = |p: f64| {
                let knob = KnobContext { zone: &zone, appliance: &zone.appliances[0], demand_power_w: 0.0, occupied_prob: p };
                score_alternative(alt, &knob, &chiller(), &scale).unwrap()
            };
            let a = score(lo);
            let b = score(hi);
            for d in a.distributions.iter().chain(b.distributions.iter()) {
                let total: f64 = d.atoms().iter().map(|x| x.prob).sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
                prop_assert!(d.atoms().windows(2).all(|w| w[0].value < w[1].value));
            }
            prop_assert!(b.distributions[0].expected() <= a.distributions[0].expected() + 1e-12);
        }
    }
}
