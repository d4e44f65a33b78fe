//! TOML run configurations and their translation into library objects.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use avgbench::correlators::{InitialState, Observable, PauliNoiseModel, Scheme, Slot};
use avgbench::ensembles::{reflection_ensemble, reflection_ensemble_from_kak, su2_exp, twirl_3way, twirl_4way, Leg};
use avgbench::kak::{kak_compose, KakForm};
use avgbench::pauli::{pauli, Mat, PauliIndex, Superoperator, TwoQubitGate};
use avgbench::random::{haar_gate, stream_rng};
use avgbench::simulator::{SlotAssignment, TGateModel};
use avgbench::supermap::{lp_decompose, Decomposition, RescalingSupermap};
use avgbench::{Spec, C};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub rounds: Option<u64>,
    pub shots: Option<usize>,
    pub threads: Option<usize>,
    pub out: Option<String>,
    pub experiment: Experiment,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    Benchmark(BenchmarkConfig),
    PhiSweep(PhiSweepConfig),
    DepthSweep(DepthSweepConfig),
    Supermap(SupermapConfig),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub width: usize,
    pub depth: usize,
    #[serde(default)]
    pub init: InitConfig,
    pub gate: GateConfig,
    /// Overrides `gate` on layers `t = 2, 4, ...`.
    pub even_gate: Option<GateConfig>,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    pub noise: Option<NoiseConfig>,
    pub observables: Vec<ObservableConfig>,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum InitConfig {
    BellProduct,
    #[default]
    PlusBell,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GateConfig {
    /// Interaction angles with local rotations `exp(i(ασx + βσy + γσz))`.
    Kak {
        theta: [f64; 3],
        #[serde(default)]
        w_a: [f64; 3],
        #[serde(default)]
        w_b: [f64; 3],
        #[serde(default)]
        v_a: [f64; 3],
        #[serde(default)]
        v_b: [f64; 3],
    },
    /// Sixteen `[re, im]` pairs in row-major order.
    Matrix { entries: Vec<[f64; 2]> },
    /// Clifford+T family `n` with T-gate phase `phi`.
    TFamily {
        family: usize,
        #[serde(default = "quarter_pi")]
        phi: f64,
    },
    /// An independent Haar-random gate per slot.
    Haar { seed: u64 },
}

fn quarter_pi() -> f64 {
    FRAC_PI_4
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnsembleConfig {
    #[default]
    None,
    Reflection,
    Twirl4way {
        lambda: f64,
    },
    Twirl3way {
        #[serde(default)]
        leg: LegConfig,
    },
    /// Class table indexed by the nontrivial-Pauli bits `a1 a2 b1 b2`.
    CustomSupermap {
        table: [f64; 16],
    },
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum LegConfig {
    #[default]
    First,
    Second,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub px: f64,
    pub py: f64,
    pub pz: f64,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SchemeConfig {
    SingleSite,
    TwoBody,
    ThreeSite,
    KBody,
}

impl From<SchemeConfig> for Scheme {
    fn from(s: SchemeConfig) -> Self {
        match s {
            SchemeConfig::SingleSite => Scheme::SingleSite,
            SchemeConfig::TwoBody => Scheme::TwoBody,
            SchemeConfig::ThreeSite => Scheme::ThreeSite,
            SchemeConfig::KBody => Scheme::KBody,
        }
    }
}

/// One factor per site: a Pauli label or a Bloch vector `n` for `n·σ`.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableConfig {
    pub scheme: SchemeConfig,
    pub sites: Vec<usize>,
    pub paulis: Option<Vec<String>>,
    pub bloch: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiSweepConfig {
    pub families: Vec<usize>,
    pub points: usize,
    #[serde(default)]
    pub phi_min: f64,
    #[serde(default = "half_pi")]
    pub phi_max: f64,
    pub depth: usize,
    pub width: Option<usize>,
    #[serde(default = "yes")]
    pub oracle: bool,
}

fn half_pi() -> f64 {
    FRAC_PI_2
}

fn yes() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthSweepConfig {
    pub t_min: usize,
    pub t_max: usize,
    #[serde(default = "default_width_cap")]
    pub width_cap: usize,
    #[serde(default = "yes")]
    pub raw_samples: bool,
}

fn default_width_cap() -> usize {
    20
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SupermapMode {
    ThreeWay,
    FourWay,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupermapConfig {
    pub mode: SupermapMode,
    #[serde(default)]
    pub force_unit_transfer: bool,
    #[serde(default = "default_verify")]
    pub verify_samples: usize,
}

fn default_verify() -> usize {
    100
}

/// Input of the `check` subcommand: a gate (optionally averaged) or Kraus operators.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    pub tol: Option<f64>,
    pub gate: Option<GateConfig>,
    pub ensemble: Option<EnsembleConfig>,
    /// Two-qubit Kraus operators, sixteen `[re, im]` pairs each.
    pub kraus: Option<Vec<Vec<[f64; 2]>>>,
}

pub fn parse<T: for<'de> Deserialize<'de>>(text: &str, origin: &str) -> Result<T, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))
}

pub fn matrix4(entries: &[[f64; 2]], what: &str) -> Result<Mat<f64>, CliError> {
    if entries.len() != 16 {
        return Err(CliError::Config(format!("{what}: expected 16 [re, im] pairs, got {}", entries.len())));
    }
    Ok(Mat::from_row_iterator(4, 4, entries.iter().map(|&[re, im]| C::new(re, im))))
}

fn local(p: [f64; 3]) -> Mat<f64> {
    su2_exp(p[0], p[1], p[2])
}

impl GateConfig {
    fn kak(&self) -> Option<KakForm<f64>> {
        match *self {
            Self::Kak { theta, w_a, w_b, v_a, v_b } => Some(KakForm {
                w_a: local(w_a),
                w_b: local(w_b),
                v_a: local(v_a),
                v_b: local(v_b),
                theta,
                global_phase: 0.0,
            }),
            _ => None,
        }
    }

    /// Gate for the `index`-th slot.
    pub fn gate(&self, index: u64) -> Result<TwoQubitGate<f64>, CliError> {
        Ok(match self {
            Self::Kak { .. } => kak_compose(&self.kak().expect("kak variant")),
            Self::Matrix { entries } => TwoQubitGate::new(matrix4(entries, "gate.entries")?)?,
            Self::TFamily { family, phi } => TGateModel::new(*phi).gate(*family)?,
            Self::Haar { seed } => haar_gate(&mut stream_rng(*seed, index)),
        })
    }
}

impl EnsembleConfig {
    pub fn assign(&self, gate: &GateConfig, index: u64) -> Result<SlotAssignment<f64>, CliError> {
        let u = gate.gate(index)?;
        Ok(match self {
            Self::None => SlotAssignment::Gate(u),
            // Explicit KAK parameters are reflected verbatim.
            Self::Reflection => match gate.kak() {
                Some(k) => SlotAssignment::Ensemble(reflection_ensemble_from_kak(&k)),
                None => SlotAssignment::Ensemble(reflection_ensemble(&u)?),
            },
            Self::Twirl4way { lambda } => SlotAssignment::Ensemble(twirl_4way(&u, *lambda)?),
            Self::Twirl3way { leg } => SlotAssignment::Ensemble(twirl_3way(
                &u,
                match leg {
                    LegConfig::First => Leg::First,
                    LegConfig::Second => Leg::Second,
                },
            )),
            Self::CustomSupermap { table } => {
                let x = RescalingSupermap::from_class_table(table)?;
                match lp_decompose(&x)? {
                    Decomposition::Realizable(d) => SlotAssignment::Ensemble(d.ensemble(&u)?),
                    Decomposition::Infeasible(_) => {
                        return Err(CliError::Precondition(
                            "custom supermap table has no Pauli-dressing realization".into(),
                        ))
                    }
                }
            }
        })
    }
}

impl CheckConfig {
    pub fn channel(&self) -> Result<Superoperator<f64>, CliError> {
        match (&self.gate, &self.kraus) {
            (Some(g), None) => {
                let ens = self.ensemble.clone().unwrap_or_default();
                Ok(ens.assign(g, 0)?.channel())
            }
            (None, Some(ks)) => {
                if self.ensemble.is_some() {
                    return Err(CliError::Config("ensemble applies to gates, not Kraus channels".into()));
                }
                let mats = ks
                    .iter()
                    .enumerate()
                    .map(|(k, e)| matrix4(e, &format!("kraus[{k}]")))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(avgbench::pauli::kraus_superop(&mats)?)
            }
            _ => Err(CliError::Config("exactly one of `gate` or `kraus` must be given".into())),
        }
    }
}

fn factor(label: &str) -> Result<Mat<f64>, CliError> {
    let p = match label {
        "X" | "x" => PauliIndex::X,
        "Y" | "y" => PauliIndex::Y,
        "Z" | "z" => PauliIndex::Z,
        _ => return Err(CliError::Config(format!("unknown Pauli label `{label}`"))),
    };
    Ok(pauli(p))
}

fn bloch(n: [f64; 3]) -> Mat<f64> {
    let s = |p, w: f64| pauli::<f64>(p).map(|z| z * w);
    s(PauliIndex::X, n[0]) + s(PauliIndex::Y, n[1]) + s(PauliIndex::Z, n[2])
}

impl ObservableConfig {
    pub fn observable(&self) -> Result<Observable<f64>, CliError> {
        let factors: Vec<Mat<f64>> = match (&self.paulis, &self.bloch) {
            (Some(p), None) => p.iter().map(|s| factor(s)).collect::<Result<_, _>>()?,
            (None, Some(b)) => b.iter().map(|&n| bloch(n)).collect(),
            _ => return Err(CliError::Config("observable needs exactly one of `paulis` or `bloch`".into())),
        };
        Ok(Observable::product(self.sites.clone(), factors)?)
    }

    pub fn sites_label(&self) -> String {
        self.sites.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(";")
    }
}

impl BenchmarkConfig {
    pub fn spec(&self) -> Result<Spec, CliError> {
        let init = match self.init {
            InitConfig::BellProduct => InitialState::bell_product(self.width)?,
            InitConfig::PlusBell => InitialState::plus_bell(self.width)?,
        };
        if self.depth == 0 {
            return Err(CliError::Config("depth must be at least 1".into()));
        }
        let mut slots: Vec<Slot> = Vec::new();
        let probe = Spec::new(self.depth, init.clone(), |s| {
            slots.push(s);
            SlotAssignment::Gate(TwoQubitGate::identity())
        });
        drop(probe);
        let mut assigned = Vec::with_capacity(slots.len());
        for (k, s) in slots.iter().enumerate() {
            let g = match (&self.even_gate, s.layer % 2) {
                (Some(e), 0) => e,
                _ => &self.gate,
            };
            assigned.push(self.ensemble.assign(g, k as u64)?);
        }
        let mut it = assigned.into_iter();
        let spec = Spec::new(self.depth, init, |_| it.next().expect("one assignment per slot"));
        let noise = match self.noise {
            Some(n) => Some(PauliNoiseModel::uniform(n.px, n.py, n.pz)?),
            None => None,
        };
        Ok(spec.with_noise(noise))
    }
}
