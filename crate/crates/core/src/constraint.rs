//! Per-parameter bounds and the saturating squash that enforces them.
//!
//! Bounds apply to the deltas stored in a [`ParamVector`]. For length-type
//! ids the absolute bone length is `rest + delta`, see
//! [`ConstraintTable::effective_bounds`].

use std::f64::consts::PI;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{default_topology, ParamKind, ParamVector, SkeletonTopology};

const SHIPPED_CONSTRAINTS: &str = include_str!("../data/constraints.toml");

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintTable {
    bounds: Vec<(f64, f64)>,
    kinds: Vec<ParamKind>,
    names: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundSide {
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub param: usize,
    pub value: f64,
    pub side: BoundSide,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

/// `min + (1 + tanh(raw)) · (max − min) / 2`.
///
/// Evaluated as an offset from the nearer bound, so the result only reaches
/// a bound once the exact gap is below that bound's f64 spacing.
#[inline]
pub fn squash_scalar(raw: f64, min: f64, max: f64) -> f64 {
    let w = max - min;
    if raw > 0.0 {
        max - w / (1.0 + (2.0 * raw).exp())
    } else {
        min + w / (1.0 + (-2.0 * raw).exp())
    }
}

/// Maps unbounded network outputs into the table's ranges.
pub fn squash_params(raw: &[f64], table: &ConstraintTable) -> Result<ParamVector> {
    if raw.len() != table.len() {
        return Err(Error::invalid(format!(
            "expected {} raw values, got {}",
            table.len(),
            raw.len()
        )));
    }
    if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("raw value {i} is not finite")));
    }
    Ok(ParamVector::from_vec(
        raw.iter()
            .zip(&table.bounds)
            .map(|(&r, &(lo, hi))| squash_scalar(r, lo, hi))
            .collect(),
    ))
}

/// Flags every parameter outside its closed `[min, max]` interval.
pub fn validate_params(params: &ParamVector, table: &ConstraintTable) -> ValidationReport {
    let mut violations = Vec::new();
    for (i, &(lo, hi)) in table.bounds.iter().enumerate() {
        let value = params.values.get(i).copied().unwrap_or(f64::NAN);
        if value >= lo && value <= hi {
            continue;
        }
        let (side, bound) = if value > hi {
            (BoundSide::Max, hi)
        } else {
            (BoundSide::Min, lo)
        };
        violations.push(Violation {
            param: i,
            value,
            side,
            bound,
        });
    }
    for i in table.len()..params.len() {
        violations.push(Violation {
            param: i,
            value: params.values[i],
            side: BoundSide::Max,
            bound: f64::NAN,
        });
    }
    ValidationReport {
        ok: violations.is_empty(),
        violations,
    }
}

pub fn default_constraint_table() -> ConstraintTable {
    static SHIPPED: OnceLock<ConstraintTable> = OnceLock::new();
    SHIPPED
        .get_or_init(|| {
            let table = ConstraintTable::from_toml_str(SHIPPED_CONSTRAINTS)
                .expect("shipped constraint table parses");
            table
                .check_against(&default_topology())
                .expect("shipped constraint table matches the shipped topology");
            table
        })
        .clone()
}

impl ConstraintTable {
    pub fn new(bounds: Vec<(f64, f64)>, kinds: Vec<ParamKind>) -> Result<Self> {
        if bounds.len() != kinds.len() {
            return Err(Error::invalid("bounds and kinds differ in length"));
        }
        for (i, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(format!(
                    "parameter {i}: bounds ({lo}, {hi}) need min < max"
                )));
            }
        }
        let names = (0..bounds.len()).map(|i| format!("param{i}")).collect();
        Ok(Self {
            bounds,
            kinds,
            names,
        })
    }

    pub fn len(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.is_empty()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn bound(&self, id: usize) -> (f64, f64) {
        self.bounds[id]
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn midpoint(&self) -> ParamVector {
        ParamVector::from_vec(
            self.bounds
                .iter()
                .map(|&(lo, hi)| squash_scalar(0.0, lo, hi))
                .collect(),
        )
    }

    /// Absolute bounds: unchanged for angles, `rest + delta` for lengths.
    pub fn effective_bounds(&self, topology: &SkeletonTopology, id: usize) -> (f64, f64) {
        let (lo, hi) = self.bounds[id];
        match topology.rest_length(id) {
            Some(rest) => (rest + lo, rest + hi),
            None => (lo, hi),
        }
    }

    /// Checks kinds against the topology and the knee range.
    pub fn check_against(&self, topology: &SkeletonTopology) -> Result<()> {
        if self.len() != topology.num_params() {
            return Err(Error::Data(format!(
                "constraint table has {} entries, topology has {} parameters",
                self.len(),
                topology.num_params()
            )));
        }
        for id in 0..self.len() {
            if self.kinds[id] != topology.param_kind(id) {
                return Err(Error::Data(format!(
                    "parameter {id}: constraint kind {:?} but topology kind {:?}",
                    self.kinds[id],
                    topology.param_kind(id)
                )));
            }
            if let Some(rest) = topology.rest_length(id) {
                if rest + self.bounds[id].0 <= 0.0 {
                    return Err(Error::Data(format!(
                        "parameter {id}: bone length can reach zero"
                    )));
                }
            }
        }
        for joint in ["l_knee", "r_knee"] {
            for id in topology.angle_params_of(joint) {
                let (lo, hi) = self.bounds[id];
                if lo < -PI - 1e-12 || hi > 1e-12 {
                    return Err(Error::Data(format!(
                        "knee parameter {id} bounds ({lo}, {hi}) leave [-pi, 0]"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ConstraintFile =
            toml::from_str(text).map_err(|e| Error::Data(format!("constraint table: {e}")))?;
        let n = file.bounds.len();
        let mut slots: Vec<Option<&BoundEntry>> = vec![None; n];
        for entry in &file.bounds {
            if entry.param >= n || slots[entry.param].is_some() {
                return Err(Error::Data(format!(
                    "constraint table: parameter ids must be 0..{n}"
                )));
            }
            slots[entry.param] = Some(entry);
        }
        let entries: Vec<&BoundEntry> = slots.into_iter().map(|e| e.unwrap()).collect();
        let bounds = entries
            .iter()
            .map(|e| match e.kind {
                ParamKind::Angle => (e.min.to_radians(), e.max.to_radians()),
                ParamKind::Length => (e.min, e.max),
            })
            .collect();
        let kinds = entries.iter().map(|e| e.kind).collect();
        let mut table = Self::new(bounds, kinds).map_err(|e| Error::Data(e.to_string()))?;
        table.names = entries.iter().map(|e| e.name.clone()).collect();
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        let file = ConstraintFile {
            bounds: (0..self.len())
                .map(|i| {
                    let (lo, hi) = self.bounds[i];
                    let (min, max) = match self.kinds[i] {
                        ParamKind::Angle => (lo.to_degrees(), hi.to_degrees()),
                        ParamKind::Length => (lo, hi),
                    };
                    BoundEntry {
                        param: i,
                        name: self.names[i].clone(),
                        kind: self.kinds[i],
                        min,
                        max,
                    }
                })
                .collect(),
        };
        toml::to_string(&file).expect("constraint table serializes")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ConstraintFile {
    bounds: Vec<BoundEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BoundEntry {
    param: usize,
    #[serde(default)]
    name: String,
    kind: ParamKind,
    min: f64,
    max: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn knee_ids() -> Vec<usize> {
        let topo = default_topology();
        let mut ids = topo.angle_params_of("l_knee");
        ids.extend(topo.angle_params_of("r_knee"));
        ids
    }

    #[test]
    fn midpoint_at_zero_raw() {
        let table = default_constraint_table();
        let out = squash_params(&vec![0.0; 48], &table).unwrap();
        for (v, &(lo, hi)) in out.values.iter().zip(table.bounds()) {
            assert!((v - 0.5 * (lo + hi)).abs() <= 1e-15 * (1.0 + hi.abs()));
        }
        for id in knee_ids() {
            assert_eq!(out.values[id], -PI / 2.0);
        }
    }

    #[test]
    fn saturation_reaches_bounds() {
        let table = default_constraint_table();
        let hi = squash_params(&vec![20.0; 48], &table).unwrap();
        let lo = squash_params(&vec![-20.0; 48], &table).unwrap();
        for i in 0..48 {
            let (bmin, bmax) = table.bound(i);
            assert!((hi.values[i] - bmax).abs() <= 1e-8);
            assert!((lo.values[i] - bmin).abs() <= 1e-8);
        }
    }

    #[test]
    fn shipped_table_ranges() {
        let topo = default_topology();
        let table = default_constraint_table();
        for id in knee_ids() {
            assert_eq!(table.bound(id), (-PI, 0.0));
        }
        for joint in ["l_elbow", "r_elbow"] {
            for id in topo.angle_params_of(joint) {
                let (lo, hi) = table.bound(id);
                assert_eq!(lo, 0.0);
                assert!((hi - 150f64.to_radians()).abs() < 1e-15);
            }
        }
        // Thigh: rest 0.45 m, effective range +-20%.
        let thigh = topo
            .length_param_ids()
            .into_iter()
            .find(|&id| topo.param_joint(id) == "l_knee")
            .unwrap();
        assert_eq!(topo.rest_length(thigh), Some(0.45));
        let (lo, hi) = table.effective_bounds(&topo, thigh);
        assert!((lo - 0.36).abs() < 1e-12 && (hi - 0.54).abs() < 1e-12);
        for id in topo.length_param_ids() {
            let rest = topo.rest_length(id).unwrap();
            let (lo, hi) = table.effective_bounds(&topo, id);
            assert!((lo - 0.8 * rest).abs() < 1e-12 && (hi - 1.2 * rest).abs() < 1e-12);
        }
    }

    #[test]
    fn rest_pose_is_valid_and_knee_extension_is_not() {
        let topo = default_topology();
        let table = default_constraint_table();
        assert!(validate_params(&ParamVector::zeros(), &table).ok);
        let knee = topo.angle_params_of("r_knee")[0];
        let mut p = ParamVector::zeros();
        p.values[knee] = 0.5;
        let report = validate_params(&p, &table);
        assert!(!report.ok);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].param, knee);
        assert_eq!(report.violations[0].side, BoundSide::Max);
    }

    #[test]
    fn exact_boundaries_pass_and_nan_fails() {
        let table = default_constraint_table();
        let lows = ParamVector::from_vec(table.bounds().iter().map(|b| b.0).collect());
        let highs = ParamVector::from_vec(table.bounds().iter().map(|b| b.1).collect());
        assert!(validate_params(&lows, &table).ok);
        assert!(validate_params(&highs, &table).ok);
        let mut p = ParamVector::zeros();
        p.values[5] = f64::NAN;
        assert!(!validate_params(&p, &table).ok);
    }

    #[test]
    fn non_finite_raw_is_rejected() {
        let table = default_constraint_table();
        let mut raw = vec![0.0; 48];
        raw[7] = f64::INFINITY;
        assert!(matches!(
            squash_params(&raw, &table),
            Err(Error::InvalidArgument(_))
        ));
        assert!(squash_params(&raw[..47], &table).is_err());
    }

    #[test]
    fn table_round_trips_and_rejects_inverted_bounds() {
        let table = default_constraint_table();
        let again = ConstraintTable::from_toml_str(&table.to_toml_string()).unwrap();
        for (a, b) in table.bounds().iter().zip(again.bounds()) {
            assert!((a.0 - b.0).abs() < 1e-15 && (a.1 - b.1).abs() < 1e-15);
        }
        assert!(ConstraintTable::new(vec![(1.0, 0.0)], vec![ParamKind::Angle]).is_err());
    }
}
