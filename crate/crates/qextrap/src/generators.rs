//! Named dataset families and explicit model constructions.
//!
//! Each constructor returns either a bare noisy dataset or a [`NamedSuite`]
//! bundling the dataset with fitting realizations, a closed-form timeline
//! where one exists, the energy constraint the realizations obey, and
//! machine-checkable markers describing the expected extrapolation behavior
//! at specific future times.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::quantum::{
    identity, projector, realization_fits, validate_realization, CMat, CVec, Datapoint, Dataset,
    EnergyConstraint, NoisyDataset, Realization,
};

/// Closed-form timeline: time to outcome probabilities per setting
/// (`values[x][a]`).
pub type ClosedForm = Arc<dyn Fn(f64) -> Vec<Vec<f64>> + Send + Sync>;

/// Expected extrapolation behavior at a marked future time.
#[derive(Debug, Clone, PartialEq)]
pub enum BehaviorTag {
    /// Every probability at the marked time is achievable: the extrapolation
    /// intervals should span (essentially) [0, 1].
    Knightian,
    /// Exactly one datapoint is compatible with the data (`expected[x][a]`).
    FullCertainty { expected: Vec<Vec<f64>> },
    /// A specific datapoint is achievable by some fitting timeline
    /// (`expected[x][a]`); other values may be achievable too.
    InnerValue { expected: Vec<Vec<f64>> },
}

/// A future time paired with the behavior the data forces there.
#[derive(Debug, Clone, PartialEq)]
pub struct TauMarker {
    pub tau: f64,
    pub behavior: BehaviorTag,
}

/// A noisy dataset bundled with fitting realizations, an optional exact
/// timeline, an energy constraint, and expected-behavior markers.
#[derive(Clone)]
pub struct NamedSuite {
    pub label: String,
    pub noisy: NoisyDataset,
    pub realizations: Vec<Realization>,
    pub closed_form: Option<ClosedForm>,
    pub tau_markers: Vec<TauMarker>,
    pub constraint: EnergyConstraint,
}

impl std::fmt::Debug for NamedSuite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NamedSuite")
            .field("label", &self.label)
            .field("times", &self.noisy.dataset.times)
            .field("realizations", &self.realizations.len())
            .field("has_closed_form", &self.closed_form.is_some())
            .field("tau_markers", &self.tau_markers)
            .field("constraint", &self.constraint)
            .finish()
    }
}

impl NamedSuite {
    /// Verify the bundle's own invariants: the dataset is well formed and
    /// every bundled realization obeys the bundled energy constraint and fits
    /// the bundled noisy dataset.
    pub fn check(&self) -> Result<()> {
        self.noisy.validate(1e-9)?;
        for (i, r) in self.realizations.iter().enumerate() {
            let report = validate_realization(r, &self.constraint);
            if !report.passed() {
                return Err(Error::Validation(format!(
                    "suite '{}': realization {i} violates {:?}: {:?}",
                    self.label, self.constraint, report.checks
                )));
            }
            let fit = realization_fits(r, &self.noisy)?;
            if !fit.fits(1e-9) {
                return Err(Error::Validation(format!(
                    "suite '{}': realization {i} misses the data by {}",
                    self.label, fit.max_violation
                )));
            }
        }
        Ok(())
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k.min(n));
    let mut v = 1.0f64;
    for i in 0..k {
        v = v * (n - i) as f64 / (i + 1) as f64;
    }
    v
}

fn cvec_from_reals(v: &[f64]) -> CVec {
    CVec::from_iterator(v.len(), v.iter().map(|&x| Complex64::new(x, 0.0)))
}

/// Uniform-superposition vector `(1,...,1)/sqrt(n)`.
fn uniform_vector(n: usize) -> CVec {
    cvec_from_reals(&vec![1.0 / (n as f64).sqrt(); n])
}

/// Diagonal Hamiltonian with equally spaced levels `k e_plus/(n-1)`.
fn ladder_hamiltonian(n: usize, e_plus: f64) -> CMat {
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            Complex64::new(i as f64 * e_plus / (n - 1) as f64, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

/// `e^{-iHt} psi` for the ladder Hamiltonian above (diagonal, so phases only).
fn ladder_evolved(psi: &CVec, e_plus: f64, n: usize, t: f64) -> CVec {
    CVec::from_iterator(
        n,
        (0..n).map(|k| psi[k] * Complex64::from_polar(1.0, -(k as f64) * e_plus / (n - 1) as f64 * t)),
    )
}

/// Squared overlap `|<u|v>|^2`.
fn overlap2(u: &CVec, v: &CVec) -> f64 {
    u.dotc(v).norm_sqr()
}

// ---------------------------------------------------------------------------
// Uniform "coin flip" dataset
// ---------------------------------------------------------------------------

/// The maximally uninformative dataset: one two-outcome measurement with all
/// estimates 1/2 at times `t_j = j*t_total/n` for `j = 1..=n`, each with
/// error bar `delta`.
pub fn dataset_o(n: usize, t_total: f64, delta: f64) -> Result<NoisyDataset> {
    if n < 1 {
        return Err(Error::Precondition("need at least one time".into()));
    }
    if t_total <= 0.0 {
        return Err(Error::Precondition("time span must be positive".into()));
    }
    if delta < 0.0 {
        return Err(Error::Precondition("error bar must be >= 0".into()));
    }
    let times: Vec<f64> = (1..=n).map(|j| j as f64 * t_total / n as f64).collect();
    let points = times.iter().map(|_| Datapoint { probs: vec![vec![0.5, 0.5]] }).collect();
    Ok(NoisyDataset {
        dataset: Dataset { times: times.clone(), points },
        delta: vec![vec![delta; n]],
    })
}

// ---------------------------------------------------------------------------
// Cosine-mixture models
// ---------------------------------------------------------------------------

/// Build a `2m`-dimensional realization whose single two-outcome measurement
/// satisfies `P(1|t) - P(0|t) = sum_k c_k cos(e_k t) / sum_l |c_l|`.
///
/// The state mixes qubit states `(|0> + sign(c_k)|1>)/sqrt(2)` on register
/// `k` with weight `|c_k|`; the Hamiltonian acts as `e_k` on the `|1>` branch
/// of register `k`. If some `e_k` is negative, the whole Hamiltonian is
/// shifted so its spectrum is nonnegative; the timeline is unchanged by a
/// global energy offset.
pub fn realization_cosine_mixture(c: &[f64], e: &[f64]) -> Result<Realization> {
    if c.len() != e.len() {
        return Err(Error::Shape(format!(
            "{} coefficients but {} frequencies",
            c.len(),
            e.len()
        )));
    }
    if c.is_empty() {
        return Err(Error::Precondition("need at least one term".into()));
    }
    if c.iter().any(|&x| x == 0.0) {
        return Err(Error::Precondition("coefficients must be nonzero".into()));
    }
    let m = c.len();
    let dim = 2 * m;
    let total: f64 = c.iter().map(|x| x.abs()).sum();

    // Basis index (s, k) -> s*m + k, s in {0,1} the qubit branch.
    let mut state = CMat::zeros(dim, dim);
    for k in 0..m {
        let w = 0.5 * c[k].abs() / total;
        let sgn = c[k].signum();
        state[(k, k)] += Complex64::new(w, 0.0);
        state[(m + k, m + k)] += Complex64::new(w, 0.0);
        state[(k, m + k)] += Complex64::new(w * sgn, 0.0);
        state[(m + k, k)] += Complex64::new(w * sgn, 0.0);
    }

    let shift = -e.iter().cloned().fold(0.0f64, f64::min);
    let mut h = CMat::zeros(dim, dim);
    for k in 0..m {
        h[(k, k)] = Complex64::new(shift, 0.0);
        h[(m + k, m + k)] = Complex64::new(e[k] + shift, 0.0);
    }

    let mut a = CMat::zeros(dim, dim);
    for k in 0..m {
        a[(k, m + k)] = Complex64::new(1.0, 0.0);
        a[(m + k, k)] = Complex64::new(1.0, 0.0);
    }
    let id = identity(dim);
    let m0 = (&id - &a).scale(0.5);
    let m1 = (&id + &a).scale(0.5);

    Ok(Realization { dim, state, hamiltonian: h, povms: vec![vec![m0, m1]] })
}

/// Swap the two outcomes of every measurement of a realization.
pub fn swap_outcomes(r: &Realization) -> Realization {
    let mut out = r.clone();
    for povm in &mut out.povms {
        povm.reverse();
    }
    out
}

// ---------------------------------------------------------------------------
// Near-constant timelines with delayed spikes
// ---------------------------------------------------------------------------

/// A timeline that stays within `sin(1/n)^n` of the coin flip for all
/// `t in [0, t_scale]` yet reaches outcome bias `sin(t/(n*t_scale))^n` later.
///
/// Returns the suite bundling the realization, its outcome-swapped twin, the
/// coin-flip dataset on `n` times up to `t_scale` with error bar
/// `sin(1/n)^n`, the exact closed form, and markers at `tau = 2*t_scale`
/// recording the two achievable datapoints.
pub fn realization_problematic_sin(n: usize, t_scale: f64) -> Result<NamedSuite> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::Precondition("the exponent must be a positive even number".into()));
    }
    if t_scale <= 0.0 {
        return Err(Error::Precondition("time scale must be positive".into()));
    }
    let nt = n as f64 * t_scale;
    // sin(x)^n = 2^-n * (-1)^(n/2) * sum_k binom(n,k) (-1)^k cos((n-2k) x),
    // so the extra (-1)^(n/2) makes the bias exactly +sin(t/(n T))^n.
    let outer = if (n / 2) % 2 == 0 { 1.0 } else { -1.0 };
    let c: Vec<f64> = (0..=n)
        .map(|k| outer * binomial(n, k) * if k % 2 == 0 { 1.0 } else { -1.0 } / 2f64.powi(n as i32))
        .collect();
    let e: Vec<f64> = (0..=n).map(|k| (n as f64 - 2.0 * k as f64) / nt).collect();
    let main = realization_cosine_mixture(&c, &e)?;
    let twin = swap_outcomes(&main);

    let delta = (1.0 / n as f64).sin().powi(n as i32);
    let noisy = dataset_o(n, t_scale, delta)?;

    let bias = move |t: f64| (t / nt).sin().powi(n as i32);
    let closed: ClosedForm =
        Arc::new(move |t| vec![vec![0.5 * (1.0 - bias(t)), 0.5 * (1.0 + bias(t))]]);

    let tau = 2.0 * t_scale;
    let v = bias(tau);
    let tau_markers = vec![
        TauMarker {
            tau,
            behavior: BehaviorTag::InnerValue {
                expected: vec![vec![0.5 * (1.0 - v), 0.5 * (1.0 + v)]],
            },
        },
        TauMarker {
            tau,
            behavior: BehaviorTag::InnerValue {
                expected: vec![vec![0.5 * (1.0 + v), 0.5 * (1.0 - v)]],
            },
        },
    ];

    Ok(NamedSuite {
        label: "sin".into(),
        noisy,
        realizations: vec![main, twin],
        closed_form: Some(closed),
        tau_markers,
        constraint: EnergyConstraint::Hard { e_plus: 2.0 / t_scale },
    })
}

/// A timeline within `2/(2*lambda-1)^n` of the coin flip on `[0, t_scale]`
/// that becomes deterministic at `tau = pi*n*t_scale`.
///
/// The bias is `Re[(1-lambda+lambda e^{-it/(n t_scale)})^n] / (2 lambda-1)^n`,
/// which superoscillates like `cos(lambda t/t_scale)/(2 lambda-1)^n` for
/// small times and reaches `(-1)^n` at `tau`. Bundles the outcome-swapped
/// twin, which fits the same data and predicts the complementary outcome.
pub fn realization_superexp(lambda: f64, n: usize, t_scale: f64) -> Result<NamedSuite> {
    if lambda <= 1.0 {
        return Err(Error::Precondition("lambda must exceed 1".into()));
    }
    if n == 0 || t_scale <= 0.0 {
        return Err(Error::Precondition("need n >= 1 and a positive time scale".into()));
    }
    let nt = n as f64 * t_scale;
    let c: Vec<f64> = (0..=n)
        .map(|k| binomial(n, k) * (1.0 - lambda).powi((n - k) as i32) * lambda.powi(k as i32))
        .collect();
    let e: Vec<f64> = (0..=n).map(|k| k as f64 / nt).collect();
    let main = realization_cosine_mixture(&c, &e)?;
    let twin = swap_outcomes(&main);

    let denom = (2.0 * lambda - 1.0).powi(n as i32);
    let delta = 2.0 / denom;
    let noisy = dataset_o(n, t_scale, delta)?;

    let bias = move |t: f64| {
        let z = Complex64::new(1.0 - lambda, 0.0)
            + Complex64::from_polar(lambda, -t / nt);
        z.powi(n as i32).re / denom
    };
    let closed: ClosedForm =
        Arc::new(move |t| vec![vec![0.5 * (1.0 - bias(t)), 0.5 * (1.0 + bias(t))]]);

    let tau = PI * nt;
    // bias(tau) = (-1)^n exactly, so the datapoint there is deterministic.
    let v = if n % 2 == 0 { 1.0 } else { -1.0 };
    let tau_markers = vec![
        TauMarker {
            tau,
            behavior: BehaviorTag::InnerValue {
                expected: vec![vec![0.5 * (1.0 - v), 0.5 * (1.0 + v)]],
            },
        },
        TauMarker {
            tau,
            behavior: BehaviorTag::InnerValue {
                expected: vec![vec![0.5 * (1.0 + v), 0.5 * (1.0 - v)]],
            },
        },
    ];

    Ok(NamedSuite {
        label: "superexp".into(),
        noisy,
        realizations: vec![main, twin],
        closed_form: Some(closed),
        tau_markers,
        constraint: EnergyConstraint::Hard { e_plus: 1.0 / t_scale },
    })
}

// ---------------------------------------------------------------------------
// The rigid "return to start" dataset
// ---------------------------------------------------------------------------

/// The dataset with `P(0|t_0)=1` and `P(0|t_j)=0` at `t_j = 2 pi (n-1) j /
/// (n e_plus)`, which pins down its generating model uniquely (up to
/// isometries) under the hard constraint.
///
/// Bundles the unique model — uniform superposition over an `n`-level ladder
/// with the projector onto it as outcome 0 — its exact closed form
/// `P(0|t) = |<psi|psi(t)>|^2`, and a full-certainty marker one recurrence
/// period after `t_1`.
pub fn dataset_d(n: usize, e_plus: f64) -> Result<NamedSuite> {
    if n < 2 {
        return Err(Error::Precondition("need at least two levels".into()));
    }
    if e_plus <= 0.0 {
        return Err(Error::Precondition("energy cap must be positive".into()));
    }
    let times: Vec<f64> =
        (0..n).map(|j| 2.0 * PI * (n - 1) as f64 * j as f64 / (n as f64 * e_plus)).collect();
    let points = (0..n)
        .map(|j| Datapoint {
            probs: vec![if j == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] }],
        })
        .collect();
    let noisy = NoisyDataset {
        dataset: Dataset { times: times.clone(), points },
        delta: vec![vec![0.0; n]],
    };

    let psi = uniform_vector(n);
    let h = ladder_hamiltonian(n, e_plus);
    let m0 = projector(&psi);
    let m1 = identity(n) - &m0;
    let r = Realization::from_pure(psi.clone(), h, vec![vec![m0, m1]]);

    let nn = n;
    let closed: ClosedForm = Arc::new(move |t| {
        let psi0 = uniform_vector(nn);
        let psit = ladder_evolved(&psi0, e_plus, nn, t);
        let p0 = overlap2(&psi0, &psit);
        vec![vec![p0, 1.0 - p0]]
    });

    let period = 2.0 * PI * (n - 1) as f64 / e_plus;
    let tau = times[1] + period;
    let tau_markers = vec![TauMarker {
        tau,
        behavior: BehaviorTag::FullCertainty { expected: vec![vec![0.0, 1.0]] },
    }];

    Ok(NamedSuite {
        label: "D".into(),
        noisy,
        realizations: vec![r],
        closed_form: Some(closed),
        tau_markers,
        constraint: EnergyConstraint::Hard { e_plus },
    })
}

// ---------------------------------------------------------------------------
// Mutually clarifying dataset pairs
// ---------------------------------------------------------------------------

/// The collection of suites demonstrating that two datasets, each ambiguous
/// on its own, can jointly force full certainty.
#[derive(Debug, Clone)]
pub struct AhaSuites {
    /// First three-outcome-time dataset alone: ambiguous at `tau`.
    pub first: NamedSuite,
    /// Second dataset alone: ambiguous at `tau`.
    pub second: NamedSuite,
    /// Both datasets jointly: full certainty at `tau`.
    pub joint: NamedSuite,
    /// Two-level instance: a flat two-point dataset alone, ambiguous at
    /// `tau = 2 pi / e_plus`.
    pub two_level: NamedSuite,
    /// The flat dataset joined with the rigid two-level dataset: certainty.
    pub two_level_joint: NamedSuite,
}

/// Restrict a realization to a single measurement setting.
fn restrict_setting(r: &Realization, x: usize) -> Realization {
    Realization {
        dim: r.dim,
        state: r.state.clone(),
        hamiltonian: r.hamiltonian.clone(),
        povms: vec![r.povms[x].clone()],
    }
}

/// Build the mutually clarifying suites at energy cap `e_plus`.
///
/// Measurement times are `t_k = 4 pi k / (3 e_plus)`; the two datasets read
/// `(1, 1/3, 0)` and `(1, 0, 1)` for outcome 0. Each admits both a model
/// predicting `P(0|tau)=1` and one predicting `P(0|tau)=0` at
/// `tau = 4 pi / e_plus`, while the joint dataset forces the energy levels
/// onto `{0, e_plus/2, e_plus}` and hence state recurrence at `tau`.
pub fn aha_suite(e_plus: f64) -> Result<AhaSuites> {
    if e_plus <= 0.0 {
        return Err(Error::Precondition("energy cap must be positive".into()));
    }
    let t: Vec<f64> = (0..3).map(|k| 4.0 * PI * k as f64 / (3.0 * e_plus)).collect();
    let tau = 4.0 * PI / e_plus;

    // Joint model on three levels {0, e_plus/2, e_plus}.
    let psi_plus = uniform_vector(3);
    let h_plus = DMatrix::from_fn(3, 3, |i, j| {
        if i == j {
            Complex64::new([0.0, e_plus / 2.0, e_plus][i], 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let psi_plus_t1 = CVec::from_iterator(
        3,
        (0..3).map(|k| {
            psi_plus[k] * Complex64::from_polar(1.0, -[0.0, e_plus / 2.0, e_plus][k] * t[1])
        }),
    );
    let m_plus_01 = projector(&psi_plus) + projector(&psi_plus_t1).scale(1.0 / 3.0);
    let m_plus_02 = identity(3) - projector(&psi_plus_t1);
    let plus = Realization::from_pure(
        psi_plus,
        h_plus,
        vec![
            vec![m_plus_01.clone(), identity(3) - &m_plus_01],
            vec![m_plus_02.clone(), identity(3) - &m_plus_02],
        ],
    );

    // Four-level alternatives predicting outcome 0 with probability 0 at tau.
    let levels1 = [0.0, e_plus / 4.0, e_plus / 2.0, 3.0 * e_plus / 4.0];
    let s6 = 1.0 / 6f64.sqrt();
    let s3 = 1.0 / 3f64.sqrt();
    let psi_m1 = cvec_from_reals(&[s6, s3, s3, s6]);
    let h_m1 = DMatrix::from_fn(4, 4, |i, j| {
        if i == j { Complex64::new(levels1[i], 0.0) } else { Complex64::new(0.0, 0.0) }
    });
    let m1_0 = projector(&psi_m1);
    let minus1 = Realization::from_pure(
        psi_m1,
        h_m1,
        vec![vec![m1_0.clone(), identity(4) - &m1_0]],
    );

    let levels2 = [0.0, e_plus / 4.0, 3.0 * e_plus / 4.0, e_plus];
    let psi_m2 = cvec_from_reals(&[0.5, 0.5, 0.5, 0.5]);
    let alpha = cvec_from_reals(&[0.5, -0.5, 0.5, -0.5]);
    let h_m2 = DMatrix::from_fn(4, 4, |i, j| {
        if i == j { Complex64::new(levels2[i], 0.0) } else { Complex64::new(0.0, 0.0) }
    });
    let m2_0 = projector(&psi_m2) + projector(&alpha);
    let minus2 = Realization::from_pure(
        psi_m2,
        h_m2,
        vec![vec![m2_0.clone(), identity(4) - &m2_0]],
    );

    let single = |values: [f64; 3]| NoisyDataset {
        dataset: Dataset {
            times: t.clone(),
            points: values
                .iter()
                .map(|&p| Datapoint { probs: vec![vec![p, 1.0 - p]] })
                .collect(),
        },
        delta: vec![vec![0.0; 3]],
    };

    let first = NamedSuite {
        label: "aha-first".into(),
        noisy: single([1.0, 1.0 / 3.0, 0.0]),
        realizations: vec![restrict_setting(&plus, 0), minus1],
        closed_form: None,
        tau_markers: vec![
            TauMarker { tau, behavior: BehaviorTag::Knightian },
            TauMarker {
                tau,
                behavior: BehaviorTag::InnerValue { expected: vec![vec![1.0, 0.0]] },
            },
            TauMarker {
                tau,
                behavior: BehaviorTag::InnerValue { expected: vec![vec![0.0, 1.0]] },
            },
        ],
        constraint: EnergyConstraint::Hard { e_plus },
    };

    let second = NamedSuite {
        label: "aha-second".into(),
        noisy: single([1.0, 0.0, 1.0]),
        realizations: vec![restrict_setting(&plus, 1), minus2],
        closed_form: None,
        tau_markers: vec![
            TauMarker { tau, behavior: BehaviorTag::Knightian },
            TauMarker {
                tau,
                behavior: BehaviorTag::InnerValue { expected: vec![vec![1.0, 0.0]] },
            },
            TauMarker {
                tau,
                behavior: BehaviorTag::InnerValue { expected: vec![vec![0.0, 1.0]] },
            },
        ],
        constraint: EnergyConstraint::Hard { e_plus },
    };

    let joint_noisy = NoisyDataset {
        dataset: Dataset {
            times: t.clone(),
            points: [[1.0, 1.0], [1.0 / 3.0, 0.0], [0.0, 1.0]]
                .iter()
                .map(|&[p1, p2]| Datapoint {
                    probs: vec![vec![p1, 1.0 - p1], vec![p2, 1.0 - p2]],
                })
                .collect(),
        },
        delta: vec![vec![0.0; 3], vec![0.0; 3]],
    };
    let joint = NamedSuite {
        label: "aha-joint".into(),
        noisy: joint_noisy,
        realizations: vec![plus],
        closed_form: None,
        tau_markers: vec![TauMarker {
            tau,
            behavior: BehaviorTag::FullCertainty {
                expected: vec![vec![1.0, 0.0], vec![1.0, 0.0]],
            },
        }],
        constraint: EnergyConstraint::Hard { e_plus },
    };

    // Two-level instance: a flat two-point dataset whose ambiguity at
    // tau2 = 2 pi / e_plus is removed by the rigid two-level dataset.
    let tau2 = 2.0 * PI / e_plus;
    let t2 = vec![0.0, PI / e_plus];
    let flat = NoisyDataset {
        dataset: Dataset {
            times: t2.clone(),
            points: t2
                .iter()
                .map(|_| Datapoint { probs: vec![vec![0.5, 0.5]] })
                .collect(),
        },
        delta: vec![vec![0.0; 2]],
    };

    // Witness on three levels: project onto the evolved uniform state,
    // diluted so the timeline is flat on the data but peaks to 1 at tau2.
    let psi3 = uniform_vector(3);
    let h3 = ladder_hamiltonian(3, e_plus);
    let psi3_tau = ladder_evolved(&psi3, e_plus, 3, tau2);
    let m_bar0 = (identity(3).scale(7.0) + projector(&psi3_tau).scale(9.0)).scale(1.0 / 16.0);
    let witness = Realization::from_pure(
        psi3.clone(),
        h3,
        vec![vec![m_bar0.clone(), identity(3) - &m_bar0]],
    );
    let witness_twin = swap_outcomes(&witness);

    let e3 = e_plus;
    let two_level_closed: ClosedForm = Arc::new(move |t| {
        let psi0 = uniform_vector(3);
        let shifted = ladder_evolved(&psi0, e3, 3, t - 2.0 * PI / e3);
        let p0 = (7.0 + 9.0 * overlap2(&psi0, &shifted)) / 16.0;
        vec![vec![p0, 1.0 - p0]]
    });

    let two_level = NamedSuite {
        label: "aha-two-level".into(),
        noisy: flat.clone(),
        realizations: vec![witness, witness_twin],
        closed_form: Some(two_level_closed),
        tau_markers: vec![
            TauMarker { tau: tau2, behavior: BehaviorTag::Knightian },
            TauMarker {
                tau: tau2,
                behavior: BehaviorTag::InnerValue { expected: vec![vec![1.0, 0.0]] },
            },
            TauMarker {
                tau: tau2,
                behavior: BehaviorTag::InnerValue { expected: vec![vec![0.0, 1.0]] },
            },
        ],
        constraint: EnergyConstraint::Hard { e_plus },
    };

    // Joint with the rigid two-level dataset at the same times {0, pi/e+}.
    let joint2_noisy = NoisyDataset {
        dataset: Dataset {
            times: t2.clone(),
            points: vec![
                Datapoint { probs: vec![vec![0.5, 0.5], vec![1.0, 0.0]] },
                Datapoint { probs: vec![vec![0.5, 0.5], vec![0.0, 1.0]] },
            ],
        },
        delta: vec![vec![0.0; 2], vec![0.0; 2]],
    };
    let psi2 = uniform_vector(2);
    let h2 = ladder_hamiltonian(2, e_plus);
    let rigid0 = projector(&psi2);
    let joint2_model = Realization::from_pure(
        psi2,
        h2,
        vec![
            vec![identity(2).scale(0.5), identity(2).scale(0.5)],
            vec![rigid0.clone(), identity(2) - &rigid0],
        ],
    );
    let two_level_joint = NamedSuite {
        label: "aha-two-level-joint".into(),
        noisy: joint2_noisy,
        realizations: vec![joint2_model],
        closed_form: None,
        tau_markers: vec![TauMarker {
            tau: tau2,
            behavior: BehaviorTag::FullCertainty {
                expected: vec![vec![0.5, 0.5], vec![1.0, 0.0]],
            },
        }],
        constraint: EnergyConstraint::Hard { e_plus },
    };

    Ok(AhaSuites { first, second, joint, two_level, two_level_joint })
}

// ---------------------------------------------------------------------------
// Lost-and-regained certainty
// ---------------------------------------------------------------------------

/// A three-outcome dataset on times `{0, 3 pi/e+, 9 pi/(2 e+)}` (with the
/// grid point between the first two deliberately missing) that is completely
/// ambiguous at `tau_1 = 15 pi/(2 e+)` yet fully certain again at
/// `tau_2 = 9 pi/e+`.
///
/// The fitting family lives on a four-level ladder: outcome `a` projects
/// onto the state evolved to its data time plus `q(a)` times the projector
/// onto the state at the missing time, so the model predicts `P(a|tau_1) =
/// q(a)` for the free distribution `q`.
pub fn fogbank_suite(e_plus: f64, q: [f64; 3]) -> Result<NamedSuite> {
    if e_plus <= 0.0 {
        return Err(Error::Precondition("energy cap must be positive".into()));
    }
    let qsum: f64 = q.iter().sum();
    if q.iter().any(|&v| v < 0.0) || (qsum - 1.0).abs() > 1e-9 {
        return Err(Error::Precondition(format!(
            "q must be a probability distribution, got {q:?}"
        )));
    }
    let grid: Vec<f64> = (0..4).map(|k| 3.0 * k as f64 * PI / (2.0 * e_plus)).collect();
    let times = vec![grid[0], grid[2], grid[3]];
    let points = vec![
        Datapoint { probs: vec![vec![1.0, 0.0, 0.0]] },
        Datapoint { probs: vec![vec![0.0, 1.0, 0.0]] },
        Datapoint { probs: vec![vec![0.0, 0.0, 1.0]] },
    ];
    let noisy = NoisyDataset {
        dataset: Dataset { times, points },
        delta: vec![vec![0.0; 3]],
    };

    let psi = uniform_vector(4);
    let h = ladder_hamiltonian(4, e_plus);
    // The states at the four grid times are orthonormal, so these POVM
    // elements sum to the identity for any distribution q.
    let at = |k: usize| ladder_evolved(&psi, e_plus, 4, grid[k]);
    let povm = vec![
        projector(&at(0)) + projector(&at(1)).scale(q[0]),
        projector(&at(2)) + projector(&at(1)).scale(q[1]),
        projector(&at(3)) + projector(&at(1)).scale(q[2]),
    ];
    let r = Realization::from_pure(psi, h, vec![povm]);

    let closed: ClosedForm = Arc::new(move |t| {
        let psi0 = uniform_vector(4);
        let psit = ladder_evolved(&psi0, e_plus, 4, t);
        let g = |k: usize| {
            let ref_k = ladder_evolved(&psi0, e_plus, 4, 3.0 * k as f64 * PI / (2.0 * e_plus));
            overlap2(&ref_k, &psit)
        };
        let g1 = g(1);
        vec![vec![g(0) + q[0] * g1, g(2) + q[1] * g1, g(3) + q[2] * g1]]
    });

    let recurrence = 6.0 * PI / e_plus;
    let tau1 = grid[1] + recurrence;
    let tau2 = grid[2] + recurrence;
    let tau_markers = vec![
        TauMarker { tau: tau1, behavior: BehaviorTag::Knightian },
        TauMarker {
            tau: tau1,
            behavior: BehaviorTag::InnerValue { expected: vec![q.to_vec()] },
        },
        TauMarker {
            tau: tau2,
            behavior: BehaviorTag::FullCertainty { expected: vec![vec![0.0, 1.0, 0.0]] },
        },
    ];

    Ok(NamedSuite {
        label: "fogbank".into(),
        noisy,
        realizations: vec![r],
        closed_form: Some(closed),
        tau_markers,
        constraint: EnergyConstraint::Hard { e_plus },
    })
}

// ---------------------------------------------------------------------------
// Discontinuity of the extrapolation value in the data
// ---------------------------------------------------------------------------

/// A qubit family showing that the extrapolated value need not converge as
/// the dataset converges: member `m` has `H = (2m+1) pi/step |1><1|` and
/// timeline `P(0|t) = cos^2((2m+1) pi t/(2 step))`.
///
/// All members reproduce the same two-point dataset `P(0|0)=1, P(0|step)=0`,
/// yet member `m` predicts `P(0|tau_m)=0` at `tau_m = 2 step + step/(2m+1)`,
/// a time where the `m -> infinity` limit looks entirely different.
pub fn discontinuity_family(m: usize, step: f64) -> Result<NamedSuite> {
    if step <= 0.0 {
        return Err(Error::Precondition("time step must be positive".into()));
    }
    let omega = (2 * m + 1) as f64 * PI / step;
    let psi = cvec_from_reals(&[1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()]);
    let h = DMatrix::from_fn(2, 2, |i, j| {
        if i == 1 && j == 1 { Complex64::new(omega, 0.0) } else { Complex64::new(0.0, 0.0) }
    });
    let m0 = projector(&psi);
    let r = Realization::from_pure(psi, h, vec![vec![m0.clone(), identity(2) - &m0]]);

    let noisy = NoisyDataset {
        dataset: Dataset {
            times: vec![0.0, step],
            points: vec![
                Datapoint { probs: vec![vec![1.0, 0.0]] },
                Datapoint { probs: vec![vec![0.0, 1.0]] },
            ],
        },
        delta: vec![vec![0.0; 2]],
    };

    let closed: ClosedForm = Arc::new(move |t| {
        let p0 = (omega * t / 2.0).cos().powi(2);
        vec![vec![p0, 1.0 - p0]]
    });

    let tau = 2.0 * step + step / (2 * m + 1) as f64;
    let tau_markers = vec![TauMarker {
        tau,
        behavior: BehaviorTag::InnerValue { expected: vec![vec![0.0, 1.0]] },
    }];

    Ok(NamedSuite {
        label: "disc".into(),
        noisy,
        realizations: vec![r],
        closed_form: Some(closed),
        tau_markers,
        constraint: EnergyConstraint::Hard { e_plus: omega },
    })
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

/// Labels accepted by [`suites_by_label`].
pub const REGISTRY_LABELS: [&str; 7] = ["O", "D", "aha", "fogbank", "disc", "sin", "superexp"];

/// Build the suite(s) registered under a label with default parameters
/// (energy cap 1 where applicable).
pub fn suites_by_label(label: &str) -> Result<Vec<NamedSuite>> {
    match label {
        "O" => {
            let noisy = dataset_o(4, 1.0, 0.1)?;
            Ok(vec![NamedSuite {
                label: "O".into(),
                noisy,
                realizations: Vec::new(),
                closed_form: None,
                tau_markers: Vec::new(),
                constraint: EnergyConstraint::Hard { e_plus: 2.0 },
            }])
        }
        "D" => Ok(vec![dataset_d(3, 1.0)?]),
        "aha" => {
            let s = aha_suite(1.0)?;
            Ok(vec![s.first, s.second, s.joint, s.two_level, s.two_level_joint])
        }
        "fogbank" => Ok(vec![fogbank_suite(1.0, [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0])?]),
        "disc" => Ok(vec![discontinuity_family(1, 1.0)?]),
        "sin" => Ok(vec![realization_problematic_sin(4, 1.0)?]),
        "superexp" => Ok(vec![realization_superexp(2.0, 4, 1.0)?]),
        other => Err(Error::Unsupported(format!(
            "unknown suite label '{other}', known: {REGISTRY_LABELS:?}"
        ))),
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{simulate_at_times, simulate_datapoint};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn closed_vs_simulation(suite: &NamedSuite, r_index: usize, t_max: f64) {
        let cf = suite.closed_form.as_ref().expect("suite has a closed form");
        let r = &suite.realizations[r_index];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let t: f64 = rng.gen_range(0.0..t_max);
            let expected = cf(t);
            for (x, col) in expected.iter().enumerate() {
                let sim = simulate_datapoint(r, x, t).unwrap();
                for (a, &p) in col.iter().enumerate() {
                    assert_abs_diff_eq!(sim[a], p, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn coin_flip_dataset_grid() {
        let nd = dataset_o(2, 1.0, 0.1).unwrap();
        assert_eq!(nd.dataset.times, vec![0.5, 1.0]);
        for p in &nd.dataset.points {
            assert_eq!(p.probs, vec![vec![0.5, 0.5]]);
        }
        assert_eq!(nd.delta, vec![vec![0.1, 0.1]]);

        let single = dataset_o(1, 1.0, 0.0).unwrap();
        assert_eq!(single.dataset.times, vec![1.0]);

        let nd4 = dataset_o(4, 2.0, 0.01).unwrap();
        assert_eq!(nd4.dataset.times, vec![0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn cosine_mixture_single_term_is_a_cosine() {
        let omega = 1.3;
        let r = realization_cosine_mixture(&[1.0], &[omega]).unwrap();
        r.validate().unwrap();
        for j in 0..20 {
            let t = 0.37 * j as f64;
            let p = simulate_datapoint(&r, 0, t).unwrap();
            assert_abs_diff_eq!(p[1] - p[0], (omega * t).cos(), epsilon = 1e-9);
        }
    }

    #[test]
    fn cosine_mixture_zero_frequencies_constant() {
        let r = realization_cosine_mixture(&[1.0, 1.0], &[0.0, 0.0]).unwrap();
        for j in 0..5 {
            let p = simulate_datapoint(&r, 0, 1.7 * j as f64).unwrap();
            assert_abs_diff_eq!(p[1] - p[0], 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn cosine_mixture_rejects_zero_coefficients() {
        assert!(realization_cosine_mixture(&[1.0, 0.0], &[1.0, 2.0]).is_err());
        assert!(realization_cosine_mixture(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn sin_family_binomial_mixture_matches_power_of_sine() {
        // The n = 4 binomial mixture has bias exactly sin(t/4)^4.
        let n = 4;
        let suite = realization_problematic_sin(n, 1.0).unwrap();
        for j in 0..20 {
            let t = 0.9 * j as f64;
            let p = simulate_datapoint(&suite.realizations[0], 0, t).unwrap();
            assert_abs_diff_eq!(p[1] - p[0], (t / 4.0).sin().powi(4), epsilon = 1e-9);
        }
    }

    #[test]
    fn sin_suite_small_n() {
        let suite = realization_problematic_sin(2, 1.0).unwrap();
        suite.check().unwrap();
        // Error bar sin(1/2)^2.
        assert_abs_diff_eq!(suite.noisy.delta[0][0], 0.5f64.sin().powi(2), epsilon = 1e-12);
        let cf = suite.closed_form.as_ref().unwrap();
        let at = cf(1.4);
        assert_abs_diff_eq!(at[0][1] - at[0][0], (1.4f64 / 2.0).sin().powi(2), epsilon = 1e-12);
        // Bias vanishes at t = 0.
        let p = simulate_datapoint(&suite.realizations[0], 0, 0.0).unwrap();
        assert_abs_diff_eq!(p[1] - p[0], 0.0, epsilon = 1e-12);
        closed_vs_simulation(&suite, 0, 10.0);
    }

    #[test]
    fn sin_suite_marker_value() {
        let suite = realization_problematic_sin(4, 1.0).unwrap();
        suite.check().unwrap();
        // At tau = 2 the achievable bias away from 1/2 is sin(1/2)^4 / 2.
        let v = 0.5f64.sin().powi(4);
        match &suite.tau_markers[0].behavior {
            BehaviorTag::InnerValue { expected } => {
                assert_abs_diff_eq!(expected[0][1] - 0.5, 0.5 * v, epsilon = 1e-12);
            }
            other => panic!("unexpected marker {other:?}"),
        }
        assert_abs_diff_eq!(suite.tau_markers[0].tau, 2.0, epsilon = 1e-12);
        // The twin realizes the mirrored datapoint.
        let p = simulate_datapoint(&suite.realizations[1], 0, 2.0).unwrap();
        assert_abs_diff_eq!(p[0] - 0.5, 0.5 * v, epsilon = 1e-9);
    }

    #[test]
    fn sin_suite_rejects_odd_exponent() {
        assert!(realization_problematic_sin(3, 1.0).is_err());
    }

    #[test]
    fn superexp_suite_deterministic_at_tau() {
        let suite = realization_superexp(2.0, 2, 1.0).unwrap();
        suite.check().unwrap();
        let tau = PI * 2.0;
        let p = simulate_datapoint(&suite.realizations[0], 0, tau).unwrap();
        assert_abs_diff_eq!(p[1], 1.0, epsilon = 1e-9);
        // The swapped twin is deterministic on the other outcome.
        let q = simulate_datapoint(&suite.realizations[1], 0, tau).unwrap();
        assert_abs_diff_eq!(q[0], 1.0, epsilon = 1e-9);
        // Bias at t = 0 is (2 lambda - 1)^-n.
        let p0 = simulate_datapoint(&suite.realizations[0], 0, 0.0).unwrap();
        assert_abs_diff_eq!(p0[1] - p0[0], 1.0 / 9.0, epsilon = 1e-9);
        closed_vs_simulation(&suite, 0, 8.0);
    }

    #[test]
    fn superexp_rejects_small_lambda() {
        assert!(realization_superexp(1.0, 2, 1.0).is_err());
        assert!(realization_superexp(0.5, 2, 1.0).is_err());
    }

    #[test]
    fn rigid_dataset_two_levels() {
        let suite = dataset_d(2, 1.0).unwrap();
        suite.check().unwrap();
        assert_eq!(suite.noisy.dataset.times.len(), 2);
        assert_abs_diff_eq!(suite.noisy.dataset.times[1], PI, epsilon = 1e-12);
        assert_eq!(suite.noisy.dataset.points[0].probs[0], vec![1.0, 0.0]);
        assert_eq!(suite.noisy.dataset.points[1].probs[0], vec![0.0, 1.0]);
    }

    #[test]
    fn rigid_dataset_three_levels() {
        let suite = dataset_d(3, 1.0).unwrap();
        suite.check().unwrap();
        assert_abs_diff_eq!(suite.noisy.dataset.times[1], 4.0 * PI / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(suite.noisy.dataset.times[2], 8.0 * PI / 3.0, epsilon = 1e-12);
        // Overlap of the uniform ladder state with itself at t_1 vanishes.
        let cf = suite.closed_form.as_ref().unwrap();
        assert_abs_diff_eq!(cf(4.0 * PI / 3.0)[0][0], 0.0, epsilon = 1e-12);
        closed_vs_simulation(&suite, 0, 20.0);
    }

    #[test]
    fn rigid_dataset_state_overlaps_vanish_on_grid() {
        // The data force the evolved state orthogonal to the initial one at
        // every later measurement time.
        for n in 2..=5 {
            let suite = dataset_d(n, 1.0).unwrap();
            let psi0 = uniform_vector(n);
            for j in 1..n {
                let t = suite.noisy.dataset.times[j];
                let psit = ladder_evolved(&psi0, 1.0, n, t);
                assert!(psi0.dotc(&psit).norm() <= 1e-9, "n={n}, j={j}");
            }
        }
    }

    #[test]
    fn rigid_dataset_certainty_marker() {
        let suite = dataset_d(3, 1.0).unwrap();
        let marker = &suite.tau_markers[0];
        assert_abs_diff_eq!(marker.tau, 4.0 * PI / 3.0 + 4.0 * PI, epsilon = 1e-12);
        let p = simulate_datapoint(&suite.realizations[0], 0, marker.tau).unwrap();
        match &marker.behavior {
            BehaviorTag::FullCertainty { expected } => {
                assert_abs_diff_eq!(p[0], expected[0][0], epsilon = 1e-9);
                assert_abs_diff_eq!(p[1], expected[0][1], epsilon = 1e-9);
            }
            other => panic!("unexpected marker {other:?}"),
        }
    }

    #[test]
    fn mutually_clarifying_datasets() {
        let s = aha_suite(1.0).unwrap();
        s.first.check().unwrap();
        s.second.check().unwrap();
        s.joint.check().unwrap();
        s.two_level.check().unwrap();
        s.two_level_joint.check().unwrap();

        // The joint model reproduces both datasets exactly.
        let joint = &s.joint.realizations[0];
        let d = simulate_at_times(joint, &s.joint.noisy.dataset.times).unwrap();
        assert_abs_diff_eq!(d.points[0].probs[0][0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(d.points[1].probs[0][0], 1.0 / 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(d.points[2].probs[0][0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(d.points[0].probs[1][0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(d.points[1].probs[1][0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(d.points[2].probs[1][0], 1.0, epsilon = 1e-9);

        // At tau the joint model is certain; the alternatives predict the
        // opposite outcome for their single dataset.
        let tau = 4.0 * PI;
        assert_abs_diff_eq!(simulate_datapoint(joint, 0, tau).unwrap()[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(simulate_datapoint(joint, 1, tau).unwrap()[0], 1.0, epsilon = 1e-9);
        let alt1 = &s.first.realizations[1];
        let alt2 = &s.second.realizations[1];
        assert_abs_diff_eq!(simulate_datapoint(alt1, 0, tau).unwrap()[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(simulate_datapoint(alt2, 0, tau).unwrap()[0], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn two_level_instance_witness_values() {
        let s = aha_suite(1.0).unwrap();
        let w = &s.two_level.realizations[0];
        // Flat on the data, peaked at tau.
        assert_abs_diff_eq!(simulate_datapoint(w, 0, 0.0).unwrap()[0], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(simulate_datapoint(w, 0, PI).unwrap()[0], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(simulate_datapoint(w, 0, 2.0 * PI).unwrap()[0], 1.0, epsilon = 1e-9);
        closed_vs_simulation(&s.two_level, 0, 15.0);
    }

    #[test]
    fn fog_dataset_inner_values_follow_q() {
        let tau1 = 15.0 * PI / 2.0;
        let tau2 = 9.0 * PI;
        for q in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.2, 0.3, 0.5]] {
            let suite = fogbank_suite(1.0, q).unwrap();
            suite.check().unwrap();
            let p = simulate_datapoint(&suite.realizations[0], 0, tau1).unwrap();
            for a in 0..3 {
                assert_abs_diff_eq!(p[a], q[a], epsilon = 1e-9);
            }
            // Full certainty returns later regardless of q.
            let p2 = simulate_datapoint(&suite.realizations[0], 0, tau2).unwrap();
            assert_abs_diff_eq!(p2[1], 1.0, epsilon = 1e-9);
            closed_vs_simulation(&suite, 0, 30.0);
        }
    }

    #[test]
    fn fog_state_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let psi = uniform_vector(4);
        for _ in 0..20 {
            let t: f64 = rng.gen_range(0.0..40.0);
            let a = ladder_evolved(&psi, 1.0, 4, t);
            let b = ladder_evolved(&psi, 1.0, 4, t + 6.0 * PI);
            assert!((a - b).norm() <= 1e-9);
        }
    }

    #[test]
    fn fog_rejects_bad_distribution() {
        assert!(fogbank_suite(1.0, [0.5, 0.5, 0.5]).is_err());
        assert!(fogbank_suite(1.0, [1.5, -0.5, 0.0]).is_err());
    }

    #[test]
    fn discontinuity_members_agree_on_data_but_not_later() {
        let s0 = discontinuity_family(0, 1.0).unwrap();
        s0.check().unwrap();
        let p = simulate_datapoint(&s0.realizations[0], 0, 3.0).unwrap();
        assert_abs_diff_eq!(p[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(
            simulate_datapoint(&s0.realizations[0], 0, 0.0).unwrap()[0],
            1.0,
            epsilon = 1e-12
        );

        let s1 = discontinuity_family(1, 1.0).unwrap();
        s1.check().unwrap();
        assert_abs_diff_eq!(
            simulate_datapoint(&s1.realizations[0], 0, 2.0).unwrap()[0],
            1.0,
            epsilon = 1e-9
        );
        closed_vs_simulation(&s1, 0, 5.0);
    }

    #[test]
    fn registry_covers_all_labels_and_suites_check() {
        for label in REGISTRY_LABELS {
            let suites = suites_by_label(label).unwrap();
            assert!(!suites.is_empty());
            for s in &suites {
                s.check().unwrap();
            }
        }
        assert!(suites_by_label("nope").is_err());
    }
}
