//! JSON scenario configuration: schema, validation, and conversion into an
//! extrapolation problem.
//!
//! Times may be given three ways (exactly one):
//! - `values`: raw floats. Sound for hard/average constraints; under a soft
//!   constraint the decay model is forced to `equal_diag` (with a warning),
//!   because congruence structure cannot be verified from floats.
//! - `lattice {step, indices, offset?}`: measurement times `offset + i*step`.
//!   The extrapolation time must lie on the same lattice; its index is
//!   derived automatically.
//! - `structure {generators, coeffs, offset?}`: one integer coefficient row
//!   per measurement time followed by a final row for the extrapolation time.

use serde::{Deserialize, Serialize};

use qextrap::cones::TimeStructure;
use qextrap::error::{Error, Result};
use qextrap::extrapolation::{ExtrapolationProblem, RelaxationChoice, TauTarget};
use qextrap::quantum::{Datapoint, Dataset, NoisyDataset, Scenario};
use qextrap::relaxations::SoftDecay;
use qextrap::solver::SolverTolerances;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioSection,
    pub times: TimesSection,
    pub data: DataSection,
    pub constraint: ConstraintSection,
    pub relaxation: RelaxationSection,
    pub target: TargetSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub settings: usize,
    pub outcomes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimesSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<LatticeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure: Option<StructureSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    pub step: f64,
    pub indices: Vec<i64>,
    #[serde(default)]
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureSection {
    pub generators: Vec<f64>,
    pub coeffs: Vec<Vec<i64>>,
    #[serde(default)]
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// `estimates[j][x][a]`: outcome distribution at time `t_j`.
    pub estimates: Vec<Vec<Vec<f64>>>,
    /// `delta[x][j]`: l1 error bar per setting and time.
    pub delta: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSection {
    /// "hard", "soft", or "average".
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(rename = "E_plus", default, skip_serializing_if = "Option::is_none")]
    pub e_plus: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(rename = "E_bar", default, skip_serializing_if = "Option::is_none")]
    pub e_bar: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelaxationSection {
    /// Energy-grid refinement: `m + 1` grid levels on `[0, E+]`.
    pub m: usize,
    /// Moment-hierarchy order (soft constraint with `decay_model: "moment"`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moment_order: Option<usize>,
    /// "auto" (default), "equal_diag", "toeplitz", or "moment".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay_model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    pub tau: f64,
    /// `objective[x][a]`: coefficient of `P(a|x, tau)`.
    pub objective: Vec<Vec<f64>>,
    /// "dataset" (default; sound outer bounds) or "model" (no slack at tau).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_target: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<ToleranceSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primal: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
}

/// The resolved time grid plus, when the config declares one, the structure
/// covering the measurement times and the extrapolation time (in that order).
pub struct ResolvedTimes {
    pub times: Vec<f64>,
    pub structure: Option<TimeStructure>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text)
            .map_err(|e| Error::Parse(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    #[allow(dead_code)] // exercised by the round-trip tests
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.times;
        let given =
            t.values.is_some() as u8 + t.lattice.is_some() as u8 + t.structure.is_some() as u8;
        if given != 1 {
            return Err(Error::Validation(format!(
                "times: exactly one of values/lattice/structure must be present, got {given}"
            )));
        }
        let resolved = self.resolve_times()?;
        let n_times = resolved.times.len();
        let (s, o) = (self.scenario.settings, self.scenario.outcomes);
        if self.data.estimates.len() != n_times {
            return Err(Error::Shape(format!(
                "data.estimates: {} entries for {} times",
                self.data.estimates.len(),
                n_times
            )));
        }
        for (j, point) in self.data.estimates.iter().enumerate() {
            if point.len() != s || point.iter().any(|col| col.len() != o) {
                return Err(Error::Shape(format!(
                    "data.estimates[{j}]: expected {s} settings x {o} outcomes"
                )));
            }
        }
        if self.data.delta.len() != s || self.data.delta.iter().any(|col| col.len() != n_times) {
            return Err(Error::Shape(format!(
                "data.delta: expected {s} settings x {n_times} times"
            )));
        }
        if self.target.objective.len() != s
            || self.target.objective.iter().any(|col| col.len() != o)
        {
            return Err(Error::Shape(format!(
                "target.objective: expected {s} settings x {o} outcomes"
            )));
        }
        match self.constraint.kind.as_str() {
            "hard" | "soft" | "average" => {}
            other => {
                return Err(Error::Validation(format!(
                    "constraint.type: unknown kind '{other}' (hard, soft, average)"
                )))
            }
        }
        if let Some(tt) = &self.target.tau_target {
            if tt != "dataset" && tt != "model" {
                return Err(Error::Validation(format!(
                    "target.tau_target: '{tt}' is not 'dataset' or 'model'"
                )));
            }
        }
        Ok(())
    }

    /// Resolve the measurement times and (if declared) the lattice/structure
    /// extended by the extrapolation time.
    pub fn resolve_times(&self) -> Result<ResolvedTimes> {
        let tau = self.target.tau;
        if let Some(values) = &self.times.values {
            return Ok(ResolvedTimes { times: values.clone(), structure: None });
        }
        if let Some(l) = &self.times.lattice {
            if l.step <= 0.0 {
                return Err(Error::Validation("times.lattice.step must be positive".into()));
            }
            let times: Vec<f64> =
                l.indices.iter().map(|&i| l.offset + i as f64 * l.step).collect();
            let tau_real = (tau - l.offset) / l.step;
            let tau_idx = tau_real.round();
            if (tau_real - tau_idx).abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "target.tau = {tau} does not lie on the declared lattice (index {tau_real})"
                )));
            }
            let mut indices = l.indices.clone();
            indices.push(tau_idx as i64);
            let structure = TimeStructure::lattice(l.step, &indices, l.offset)?;
            return Ok(ResolvedTimes { times, structure: Some(structure) });
        }
        let s = self.times.structure.as_ref().expect("one variant present");
        let structure =
            TimeStructure::new(s.generators.clone(), s.coeffs.clone(), s.offset)?;
        let all = structure.times();
        if all.len() < 2 {
            return Err(Error::Validation(
                "times.structure: need at least one measurement row plus the tau row".into(),
            ));
        }
        let (last, times) = all.split_last().expect("non-empty");
        if (last - tau).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "times.structure: last row encodes {last}, but target.tau = {tau}"
            )));
        }
        Ok(ResolvedTimes { times: times.to_vec(), structure: Some(structure) })
    }

    fn require(&self, field: Option<f64>, name: &str) -> Result<f64> {
        field.ok_or_else(|| {
            Error::Validation(format!(
                "constraint.{name} is required for type '{}'",
                self.constraint.kind
            ))
        })
    }

    /// The relaxation implied by the constraint and relaxation sections.
    /// Emits a warning line for the raw-float-times fallback when a warning
    /// sink is given.
    pub fn relaxation_choice(&self, warn: &mut dyn FnMut(&str)) -> Result<RelaxationChoice> {
        let m = self.relaxation.m;
        match self.constraint.kind.as_str() {
            "hard" => {
                let e_plus = self.require(self.constraint.e_plus, "E_plus")?;
                Ok(RelaxationChoice::HardGrid { e_plus, m })
            }
            "average" => {
                let e_bar = self.require(self.constraint.e_bar, "E_bar")?;
                Ok(RelaxationChoice::Average {
                    e_bar,
                    m,
                    e_plus_override: self.constraint.e_plus,
                })
            }
            "soft" => {
                let e_plus = self.require(self.constraint.e_plus, "E_plus")?;
                let epsilon = self.require(self.constraint.epsilon, "epsilon")?;
                let decay = self.decay_model(warn)?;
                Ok(RelaxationChoice::Soft { e_plus, epsilon, m, decay })
            }
            other => Err(Error::Validation(format!("unknown constraint type '{other}'"))),
        }
    }

    fn decay_model(&self, warn: &mut dyn FnMut(&str)) -> Result<SoftDecay> {
        let resolved = self.resolve_times()?;
        let name = self.relaxation.decay_model.as_deref().unwrap_or("auto");
        match (name, resolved.structure) {
            ("auto", Some(structure)) => Ok(SoftDecay::Toeplitz { lattice: structure }),
            ("auto", None) => {
                warn(
                    "times given as raw floats: congruence structure cannot be verified, \
                     falling back to the equal-diagonal decay model",
                );
                Ok(SoftDecay::EqualDiag)
            }
            ("equal_diag", _) => Ok(SoftDecay::EqualDiag),
            ("toeplitz", Some(structure)) => Ok(SoftDecay::Toeplitz { lattice: structure }),
            ("moment", Some(structure)) => Ok(SoftDecay::Moment {
                order: self.relaxation.moment_order.unwrap_or(2),
                structure,
            }),
            ("toeplitz", None) | ("moment", None) => Err(Error::Precondition(format!(
                "relaxation.decay_model '{name}' needs times.lattice or times.structure, \
                 not raw float values"
            ))),
            (other, _) => Err(Error::Validation(format!(
                "relaxation.decay_model: unknown model '{other}' \
                 (auto, equal_diag, toeplitz, moment)"
            ))),
        }
    }

    /// The solver tolerances, with `--tol` (if given) overriding all three.
    pub fn tolerances(&self, tol_flag: Option<f64>) -> SolverTolerances {
        let mut t = SolverTolerances::default();
        if let Some(section) = self.solver.as_ref().and_then(|s| s.tolerances.as_ref()) {
            if let Some(v) = section.primal {
                t.tol_primal = v;
            }
            if let Some(v) = section.dual {
                t.tol_dual = v;
            }
            if let Some(v) = section.gap {
                t.tol_gap = v;
            }
        }
        if let Some(v) = tol_flag {
            t = SolverTolerances { tol_primal: v, tol_dual: v, tol_gap: v };
        }
        t
    }

    /// Assemble the full extrapolation problem.
    pub fn build_problem(&self, warn: &mut dyn FnMut(&str)) -> Result<ExtrapolationProblem> {
        self.validate()?;
        let resolved = self.resolve_times()?;
        let scenario = Scenario {
            settings: self.scenario.settings,
            outcomes: self.scenario.outcomes,
            times: resolved.times.clone(),
            tau: self.target.tau,
        };
        let points = self
            .data
            .estimates
            .iter()
            .map(|probs| Datapoint { probs: probs.clone() })
            .collect();
        let noisy = NoisyDataset {
            dataset: Dataset { times: resolved.times, points },
            delta: self.data.delta.clone(),
        };
        let relaxation = self.relaxation_choice(warn)?;
        let mut problem =
            ExtrapolationProblem::new(noisy, scenario, self.target.objective.clone(), relaxation);
        if self.target.tau_target.as_deref() == Some("model") {
            problem.tau_target = TauTarget::Model;
        }
        Ok(problem)
    }
}
