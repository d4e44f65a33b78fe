#![allow(dead_code)]

use avgbench::correlators::{ChannelCircuit, InitialState, Observable};
use avgbench::ensembles::{average_channel, reflection_ensemble, twirl_3way, twirl_4way, GateEnsemble, Leg};
use avgbench::pauli::{Mat, TwoQubitGate};
use avgbench::random::{haar_gate, haar_unitary, stream_rng};
use avgbench::C;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Reflection,
    Twirl4,
    Twirl3,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Reflection, Strategy::Twirl4, Strategy::Twirl3];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Reflection => "reflection",
            Strategy::Twirl4 => "twirl_4way",
            Strategy::Twirl3 => "twirl_3way",
        }
    }

    pub fn ensemble(self, g: &TwoQubitGate<f64>, rng: &mut ChaCha12Rng) -> GateEnsemble<f64> {
        match self {
            Strategy::Reflection => reflection_ensemble(g).unwrap(),
            Strategy::Twirl4 => twirl_4way(g, rng.random::<f64>()).unwrap(),
            Strategy::Twirl3 => twirl_3way(g, Leg::First),
        }
    }

    pub fn is_four_way(self) -> bool {
        self != Strategy::Twirl3
    }
}

/// Brickwork of averaged Haar-random seed gates, one independent gate per slot.
pub fn random_circuit(t: usize, init: InitialState<f64>, strategy: Strategy, seed: u64) -> ChannelCircuit<f64> {
    let mut rng = stream_rng(seed, 0xc1c);
    ChannelCircuit::new(t, init, |_| {
        let g = haar_gate(&mut rng);
        average_channel(&strategy.ensemble(&g, &mut rng))
    })
    .unwrap()
}

/// Traceless Hermitian `d × d` operator with operator norm below 1.
pub fn random_traceless(d: usize, rng: &mut ChaCha12Rng) -> Mat<f64> {
    let m = haar_unitary::<f64, _>(d, rng);
    let herm: Mat<f64> = (&m + m.adjoint()).map(|z| z * 0.2);
    let shift = herm.trace() / d as f64;
    &herm - Mat::<f64>::identity(d, d).map(|z: C<f64>| z * shift)
}

pub fn random_single(site: usize, rng: &mut ChaCha12Rng) -> Observable<f64> {
    Observable::single(site, random_traceless(2, rng)).unwrap()
}

pub fn random_pair(i: usize, j: usize, rng: &mut ChaCha12Rng) -> Observable<f64> {
    Observable::product(vec![i, j], vec![random_traceless(2, rng), random_traceless(2, rng)]).unwrap()
}

pub fn random_joint(first: usize, k: usize, rng: &mut ChaCha12Rng) -> Observable<f64> {
    Observable::joint(first, random_traceless(1 << k, rng)).unwrap()
}

pub fn random_local(rng: &mut ChaCha12Rng) -> TwoQubitGate<f64> {
    TwoQubitGate::local(&haar_unitary(2, rng), &haar_unitary(2, rng)).unwrap()
}
