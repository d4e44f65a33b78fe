//! Gate ensembles whose averages are space-time channels.

use crate::error::{input, Result};
use crate::kak::{kak_compose, kak_decompose, KakForm};
use crate::pauli::{pauli, unitary_superop, PauliIndex, Superoperator, TwoQubitGate};
use crate::scalar::Real;

/// `σ_post · U · σ_pre`, one Pauli per qubit on each side.
#[derive(Clone, Debug, PartialEq)]
pub struct DressedGate<R: Real> {
    pub pre: [PauliIndex; 2],
    pub gate: TwoQubitGate<R>,
    pub post: [PauliIndex; 2],
}

impl<R: Real> DressedGate<R> {
    pub fn bare(gate: TwoQubitGate<R>) -> Self {
        Self { pre: [PauliIndex::I; 2], gate, post: [PauliIndex::I; 2] }
    }

    /// The single two-qubit unitary that is executed.
    pub fn unitary(&self) -> TwoQubitGate<R> {
        self.gate.dressed(self.pre, self.post)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Member<R: Real> {
    Gate(TwoQubitGate<R>),
    Dressed(DressedGate<R>),
}

impl<R: Real> Member<R> {
    pub fn unitary(&self) -> TwoQubitGate<R> {
        match self {
            Self::Gate(g) => g.clone(),
            Self::Dressed(d) => d.unitary(),
        }
    }
}

/// Finite probability distribution over two-qubit gates.
#[derive(Clone, Debug, PartialEq)]
pub struct GateEnsemble<R: Real> {
    members: Vec<(R, Member<R>)>,
}

impl<R: Real> GateEnsemble<R> {
    pub fn new(members: Vec<(R, Member<R>)>) -> Result<Self> {
        if members.is_empty() {
            return input("ensemble has no members");
        }
        if members.iter().any(|(p, _)| *p < R::zero() || !p.is_finite()) {
            return input("ensemble probabilities must be finite and nonnegative");
        }
        let total = members.iter().fold(R::zero(), |s, (p, _)| s + *p);
        if (total - R::one()).abs() > R::lit(R::ROUND_TOL) {
            return input(format!("ensemble probabilities sum to {total}, not 1"));
        }
        for (_, m) in &members {
            if m.unitary().unitarity_residual() > R::lit(R::STRUCT_TOL) {
                return input("ensemble member is not unitary");
            }
        }
        Ok(Self { members })
    }

    /// One gate with probability 1.
    pub fn single(gate: TwoQubitGate<R>) -> Self {
        Self { members: vec![(R::one(), Member::Gate(gate))] }
    }

    pub fn members(&self) -> &[(R, Member<R>)] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Executed unitaries in member order.
    pub fn unitaries(&self) -> Vec<TwoQubitGate<R>> {
        self.members.iter().map(|(_, m)| m.unitary()).collect()
    }

    pub fn probabilities(&self) -> Vec<R> {
        self.members.iter().map(|(p, _)| *p).collect()
    }
}

/// `Σ p_α U_α ⊗ U_α*`.
pub fn average_channel<R: Real>(e: &GateEnsemble<R>) -> Superoperator<R> {
    let chans: Vec<(R, Superoperator<R>)> = e.members.iter().map(|(p, m)| (*p, unitary_superop(&m.unitary()))).collect();
    Superoperator::mixture(chans.iter().map(|(p, s)| (*p, s))).expect("ensembles are nonempty")
}

/// The four reflections `(π/4 ± δ_x, π/4 ± δ_y, θ_z)` of a KAK form, taken
/// verbatim without canonicalization. Order: `++, +−, −+, −−`.
pub fn reflection_ensemble_from_kak<R: Real>(k: &KakForm<R>) -> GateEnsemble<R> {
    let q = R::FRAC_PI_4();
    let (dx, dy) = (k.theta[0] - q, k.theta[1] - q);
    let quarter = R::lit(0.25);
    let members = [(R::one(), R::one()), (R::one(), -R::one()), (-R::one(), R::one()), (-R::one(), -R::one())]
        .into_iter()
        .map(|(sx, sy)| {
            let theta = [q + sx * dx, q + sy * dy, k.theta[2]];
            (quarter, Member::Gate(kak_compose(&k.with_theta(theta))))
        })
        .collect();
    GateEnsemble { members }
}

/// Reflection ensemble of an arbitrary gate; the first member reproduces `u`.
pub fn reflection_ensemble<R: Real>(u: &TwoQubitGate<R>) -> Result<GateEnsemble<R>> {
    Ok(reflection_ensemble_from_kak(&kak_decompose(u)?))
}

const NONTRIVIAL: [PauliIndex; 3] = [PauliIndex::X, PauliIndex::Y, PauliIndex::Z];

/// Pauli-dressing ensemble with weight 1/4 on the bare gate and, for each
/// dressing family, weight `w/9` spread over nine dressed copies.
/// At `λ = 1`: pre `(1, γ₂)`, post `(δ₁, 1)`. At `λ = 0`: pre `(γ₁, 1)`, post `(1, δ₂)`.
pub fn twirl_4way<R: Real>(u: &TwoQubitGate<R>, lambda: R) -> Result<GateEnsemble<R>> {
    if !(R::zero()..=R::one()).contains(&lambda) {
        return input(format!("lambda must lie in [0, 1], got {lambda}"));
    }
    let i = PauliIndex::I;
    let twelfth = R::one() / R::lit(12.0);
    let mut members = vec![(R::lit(0.25), Member::Gate(u.clone()))];
    for (w, right) in [(lambda, true), (R::one() - lambda, false)] {
        if w.is_zero() {
            continue;
        }
        for &g in &NONTRIVIAL {
            for &d in &NONTRIVIAL {
                let (pre, post) = if right { ([i, g], [d, i]) } else { ([g, i], [i, d]) };
                members.push((w * twelfth, Member::Dressed(DressedGate { pre, gate: u.clone(), post })));
            }
        }
    }
    Ok(GateEnsemble { members })
}

/// Output qubit that gets twirled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Leg {
    First,
    Second,
}

/// Uniform Pauli twirl of one output leg. Twirling the first output yields a
/// right-space-unital channel, twirling the second a left-space-unital one.
pub fn twirl_3way<R: Real>(u: &TwoQubitGate<R>, leg: Leg) -> GateEnsemble<R> {
    let i = PauliIndex::I;
    let members = PauliIndex::ALL
        .iter()
        .map(|&a| {
            let post = match leg {
                Leg::First => [a, i],
                Leg::Second => [i, a],
            };
            (R::lit(0.25), Member::Dressed(DressedGate { pre: [i, i], gate: u.clone(), post }))
        })
        .collect();
    GateEnsemble { members }
}

/// Single-qubit gate `exp(i(α σ_x + β σ_y + γ σ_z))`.
pub fn su2_exp<R: Real>(alpha: R, beta: R, gamma: R) -> crate::pauli::Mat<R> {
    let n = (alpha * alpha + beta * beta + gamma * gamma).sqrt();
    let id = crate::pauli::Mat::<R>::identity(2, 2);
    if n.is_zero() {
        return id;
    }
    let gen = pauli::<R>(PauliIndex::X).map(|z| z * alpha)
        + pauli::<R>(PauliIndex::Y).map(|z| z * beta)
        + pauli::<R>(PauliIndex::Z).map(|z| z * gamma);
    let (c, s) = (n.cos(), n.sin() / n);
    id.map(|z| z * c) + gen.map(|z| z * crate::scalar::C::new(R::zero(), s))
}
