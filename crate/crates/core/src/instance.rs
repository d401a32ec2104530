//! Instance files: a path-loss map plus the quasi-metric and radius parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metric::{
    compute_metricity, metricity_violation, validate_bounded_independence, Embedding, IndependenceReport, PathLossMap,
    QuasiMetricSpace, RadiusSet, VALIDATOR_SLACK,
};

/// On-disk form. `losses` lists every ordered pair `[u, v, f(u,v)]` by node id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub nodes: Vec<u32>,
    pub power: f64,
    pub zeta: f64,
    pub losses: Vec<(u32, u32, f64)>,
    pub r_min: f64,
    pub lambda: f64,
    pub indep_const: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position_exponent: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub space: QuasiMetricSpace,
    pub radii: RadiusSet,
}

impl Instance {
    pub fn new(space: QuasiMetricSpace, radii: RadiusSet) -> Self {
        Self { space, radii }
    }

    pub fn n(&self) -> usize {
        self.space.n()
    }

    pub fn to_file(&self) -> InstanceFile {
        let map = self.space.map();
        InstanceFile {
            nodes: map.ids().to_vec(),
            power: map.power(),
            zeta: self.space.zeta(),
            losses: map.triples(),
            r_min: self.space.r_min,
            lambda: self.space.lambda,
            indep_const: self.space.indep_const,
            r: self.radii.r,
            epsilon: self.radii.epsilon,
            positions: map.embedding().map(|e| e.points.clone()),
            position_exponent: map.embedding().map(|e| e.exponent),
        }
    }

    pub fn from_file(file: InstanceFile) -> Result<Self> {
        let mut map = PathLossMap::from_triples(file.nodes, file.power, &file.losses)?;
        match (file.positions, file.position_exponent) {
            (Some(points), Some(exponent)) => {
                if points.len() != map.n() {
                    return Err(Error::config("positions", format!("expected {} points, got {}", map.n(), points.len())));
                }
                map.set_embedding(Some(Embedding { points, exponent }));
            }
            (None, None) => {}
            _ => return Err(Error::config("positions", "positions and position_exponent go together")),
        }
        let space = QuasiMetricSpace::new(map, file.zeta)?.with_independence(file.r_min, file.lambda, file.indep_const)?;
        let radii = RadiusSet::new(file.r, file.epsilon)?;
        Ok(Self { space, radii })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON.
    pub fn digest(&self) -> Result<String> {
        Ok(hex_digest(self.to_json()?.as_bytes()))
    }

    /// Metricity, independence and radius sanity checks.
    pub fn validate(&self, q_samples: &[f64]) -> InstanceReport {
        let s = &self.space;
        let zeta_violation = metricity_violation(s.map(), s.zeta(), VALIDATOR_SLACK);
        let metricity = compute_metricity(s.map(), VALIDATOR_SLACK).ok();
        let independence = (s.r_min > 0.0).then(|| validate_bounded_independence(s, q_samples));
        let mut warnings = Vec::new();
        if !(s.lambda < s.zeta()) {
            warnings.push(format!("lambda = {} is not below zeta = {}", s.lambda, s.zeta()));
        }
        if s.r_min > self.radii.r / 4.0 {
            warnings.push(format!("r_min = {} exceeds R/4 (local broadcast assumption)", s.r_min));
        }
        if s.r_min > self.radii.epsilon * self.radii.r / 4.0 {
            warnings.push(format!("r_min = {} exceeds eps R/4 (broadcast assumption)", s.r_min));
        }
        let pass = zeta_violation.is_none() && independence.as_ref().map_or(true, |r| r.pass);
        InstanceReport {
            pass,
            n: s.n(),
            zeta: s.zeta(),
            metricity,
            zeta_violation,
            independence,
            symmetry_factor: s.symmetry_factor(),
            warnings,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub pass: bool,
    pub n: usize,
    pub zeta: f64,
    /// Smallest feasible exponent, if one exists below the search cap.
    pub metricity: Option<f64>,
    /// Triplet violating the quasi-metric inequality at the configured zeta.
    pub zeta_violation: Option<(usize, usize, usize)>,
    pub independence: Option<IndependenceReport>,
    pub symmetry_factor: f64,
    pub warnings: Vec<String>,
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
