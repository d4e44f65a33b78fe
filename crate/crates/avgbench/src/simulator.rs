//! Exact quantum-side emulation of brickwork circuits.
//!
//! Averaged circuits are evolved as folded density matrices, single
//! realizations as state vectors. Both paths only touch the backward light
//! cone of the requested observables; everything outside it is traced out,
//! which is exact for trace-preserving channels.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;

use crate::correlators::{pair_starts, ChannelCircuit, InitialState, Observable, ObservableForm, PauliNoiseModel, Prep, Slot};
use crate::ensembles::{average_channel, reflection_ensemble_from_kak, su2_exp, twirl_3way, GateEnsemble, Leg};
use crate::error::{input, precondition, Error, Result};
use crate::kak::KakForm;
use crate::kernel::{flat, SiteTensor};
use crate::pauli::{pauli, tp_residual, unitary_superop, Mat, PauliIndex, Superoperator, TwoQubitGate};
use crate::random::stream_rng;
use crate::scalar::{c, cis, cr, Real, C};
use crate::spacetime::trace_covector;

/// Largest number of sites the light-cone density-matrix oracle tracks at once.
pub const ORACLE_SITE_CAP: usize = 12;
/// Largest chain evolved as a full density matrix.
pub const DENSE_WIDTH_CAP: usize = 12;
/// Largest state-vector register.
pub const STATEVECTOR_CAP: usize = 20;
/// Largest number of member combinations enumerated by [`exhaustive_average`].
pub const ENUMERATION_CAP: usize = 1 << 20;

/// `needed[t][s]`: site `s` after layer `t` influences the observable.
fn backward_cone<R: Real>(c: &ChannelCircuit<R>, support: &[usize]) -> Vec<Vec<bool>> {
    let (l, t) = (c.width(), c.depth());
    let mut needed = vec![vec![false; l]; t + 1];
    for &s in support {
        needed[t][s] = true;
    }
    for layer in (1..=t).rev() {
        let mut prev = needed[layer].clone();
        for s in c.starts(layer).collect::<Vec<_>>() {
            if needed[layer][s] || needed[layer][s + 1] {
                prev[s] = true;
                prev[s + 1] = true;
            }
        }
        needed[layer - 1] = prev;
    }
    needed
}

fn require_trace_preserving<R: Real>(c: &ChannelCircuit<R>) -> Result<()> {
    for (slot, ch) in c.slots() {
        let r = tp_residual(ch);
        if r > R::lit(R::STRUCT_TOL) {
            return precondition(format!("{slot} is not trace preserving (residual {r})"));
        }
    }
    Ok(())
}

fn check_support<R: Real>(l: usize, o: &Observable<R>) -> Result<()> {
    if o.sites().iter().any(|&s| s >= l) {
        return input(format!("observable on sites {:?} extends beyond a chain of width {l}", o.sites()));
    }
    Ok(())
}

/// Dense folded state over the sites currently in play, each at its own time.
struct Sweep<'a, R: Real> {
    c: &'a ChannelCircuit<R>,
    needed: &'a [Vec<bool>],
    rho: SiteTensor<R>,
    time: Vec<Option<usize>>,
    introduced: Vec<bool>,
    trace: Vec<C<R>>,
    peak: usize,
}

impl<R: Real> Sweep<'_, R> {
    fn grow(&mut self, extra: usize) -> Result<()> {
        let n = self.rho.sites.len() + extra;
        if n > ORACLE_SITE_CAP {
            return Err(Error::Resource(format!("oracle would track {n} sites (cap {ORACLE_SITE_CAP})")));
        }
        self.peak = self.peak.max(n);
        Ok(())
    }

    /// Brings `q` into play at time 0, together with its Bell partner when both are needed.
    fn ensure(&mut self, q: usize) -> Result<()> {
        if self.time[q].is_some() {
            return Ok(());
        }
        if self.introduced[q] {
            return Err(Error::Solver(format!("site {q} is needed again after being traced")));
        }
        let init = self.c.init();
        match init.prep(q) {
            Prep::PairFirst(p) | Prep::PairSecond(p) if self.needed[0][p] => {
                self.grow(2)?;
                self.rho.insert_block(q.min(p), &crate::correlators::bell_pair_folded::<R>());
                for x in [q, p] {
                    self.time[x] = Some(0);
                    self.introduced[x] = true;
                }
            }
            _ => {
                self.grow(1)?;
                let m = init.marginal(&[q]);
                self.rho.insert(q, &m.data);
                self.time[q] = Some(0);
                self.introduced[q] = true;
            }
        }
        Ok(())
    }

    fn noise(&mut self, q: usize) {
        if let Some(n) = self.c.noise_flat(q) {
            let pos = self.rho.position(q).expect("tracked");
            self.rho.apply_single(pos, &n);
        }
    }

    /// Moves `q` through layers where it is idle.
    fn advance(&mut self, q: usize, target: usize) -> Result<()> {
        while let Some(now) = self.time[q].filter(|&now| now < target) {
            if self.c.pair_of(now + 1, q).is_some() {
                return Err(Error::Solver(format!("site {q} skipped its gate in layer {}", now + 1)));
            }
            self.noise(q);
            self.time[q] = Some(now + 1);
        }
        Ok(())
    }

    fn drop_if_unneeded(&mut self, q: usize) {
        if let Some(now) = self.time[q] {
            if !self.needed[now][q] {
                let pos = self.rho.position(q).expect("tracked");
                self.rho.contract(pos, &self.trace);
                self.time[q] = None;
            }
        }
    }
}

/// Exact `Tr(O E_avg(ρ₀))` by dense folded evolution of the backward light cone.
///
/// Gates are applied in a causal order that sweeps the cone diagonally from
/// left to right, so a site is traced out as soon as it leaves the cone and
/// only a narrow frontier is ever held in memory.
pub fn oracle_expectation<R: Real>(c: &ChannelCircuit<R>, o: &Observable<R>) -> Result<R> {
    let (l, t) = (c.width(), c.depth());
    check_support(l, o)?;
    require_trace_preserving(c)?;
    let needed = backward_cone(c, o.sites());
    let mut gates: Vec<(usize, usize)> = (1..=t)
        .flat_map(|layer| {
            let row = &needed[layer];
            c.starts(layer).filter(move |&s| row[s] || row[s + 1]).map(move |s| (layer, s))
        })
        .collect();
    gates.sort_by_key(|&(layer, s)| (s + layer, layer));
    let mut sw = Sweep {
        c,
        needed: &needed,
        rho: SiteTensor::scalar(4),
        time: vec![None; l],
        introduced: vec![false; l],
        trace: trace_covector::<R>().iter().map(|x| cr(*x)).collect(),
        peak: 0,
    };
    for (layer, s) in gates {
        for q in [s, s + 1] {
            sw.ensure(q)?;
            sw.advance(q, layer - 1)?;
        }
        let pos = sw.rho.position(s).expect("tracked");
        sw.rho.apply_pair(pos, &flat(&c.channel(layer, s).expect("slot exists").folded()));
        for q in [s, s + 1] {
            sw.noise(q);
            sw.time[q] = Some(layer);
            sw.drop_if_unneeded(q);
        }
    }
    for &q in o.sites() {
        sw.ensure(q)?;
    }
    for q in sw.rho.sites.clone() {
        sw.advance(q, t)?;
        sw.drop_if_unneeded(q);
    }
    if sw.rho.sites != o.sites() {
        return Err(Error::Solver("oracle sweep ended on the wrong sites".into()));
    }
    Ok(o.expectation_folded(&sw.rho))
}

/// Full density matrix of a chain in folded form.
#[derive(Clone, Debug)]
pub struct DensityState<R: Real> {
    rho: SiteTensor<R>,
}

impl<R: Real> DensityState<R> {
    pub fn width(&self) -> usize {
        self.rho.sites.len()
    }

    pub fn trace(&self) -> R {
        let mut t = self.rho.clone();
        let cov: Vec<C<R>> = trace_covector::<R>().iter().map(|x| cr(*x)).collect();
        while !t.sites.is_empty() {
            t.contract(0, &cov);
        }
        t.data[0].re
    }

    /// `Tr ρ²`.
    pub fn purity(&self) -> R {
        self.rho.norm_sqr()
    }

    pub fn expectation(&self, o: &Observable<R>) -> Result<R> {
        check_support(self.width(), o)?;
        let cov: Vec<C<R>> = trace_covector::<R>().iter().map(|x| cr(*x)).collect();
        let mut t = self.rho.clone();
        let mut pos = 0;
        while pos < t.sites.len() {
            if o.sites().contains(&t.sites[pos]) {
                pos += 1;
            } else {
                t.contract(pos, &cov);
            }
        }
        Ok(o.expectation_folded(&t))
    }
}

/// Evolves the whole chain under the averaged channels and noise, `L ≤ 12`.
pub fn evolve_density<R: Real>(c: &ChannelCircuit<R>) -> Result<DensityState<R>> {
    let l = c.width();
    if l > DENSE_WIDTH_CAP {
        return Err(Error::Resource(format!("dense evolution is capped at L = {DENSE_WIDTH_CAP}, got {l}")));
    }
    let sites: Vec<usize> = (0..l).collect();
    let mut rho = c.init().marginal(&sites);
    for layer in 1..=c.depth() {
        for s in c.starts(layer).collect::<Vec<_>>() {
            rho.apply_pair(s, &flat(&c.channel(layer, s).expect("slot exists").folded()));
        }
        for s in 0..l {
            if let Some(n) = c.noise_flat(s) {
                rho.apply_single(s, &n);
            }
        }
    }
    Ok(DensityState { rho })
}

/// What occupies one gate slot of a brickwork.
#[derive(Clone, Debug, PartialEq)]
pub enum SlotAssignment<R: Real> {
    Gate(TwoQubitGate<R>),
    Ensemble(GateEnsemble<R>),
    /// A channel with no unitary decomposition; usable by exact evaluation only.
    Channel(Superoperator<R>),
}

impl<R: Real> SlotAssignment<R> {
    pub fn channel(&self) -> Superoperator<R> {
        match self {
            Self::Gate(g) => unitary_superop(g),
            Self::Ensemble(e) => average_channel(e),
            Self::Channel(c) => c.clone(),
        }
    }

    fn members(&self) -> Option<(Vec<f64>, Vec<Vec<C<R>>>)> {
        match self {
            Self::Gate(g) => Some((vec![1.0], vec![flat(g.matrix())])),
            Self::Ensemble(e) => Some((
                e.probabilities().iter().map(|p| p.to_f64_lossy()).collect(),
                e.unitaries().iter().map(|u| flat(u.matrix())).collect(),
            )),
            Self::Channel(_) => None,
        }
    }
}

/// Layout, gate assignment, initial state, noise and observables of one experiment.
#[derive(Clone, Debug)]
pub struct BrickworkSpec<R: Real> {
    t: usize,
    init: InitialState<R>,
    layers: Vec<Vec<SlotAssignment<R>>>,
    noise: Option<PauliNoiseModel<R>>,
    observables: Vec<Observable<R>>,
}

impl<R: Real> BrickworkSpec<R> {
    pub fn new(t: usize, init: InitialState<R>, mut f: impl FnMut(Slot) -> SlotAssignment<R>) -> Self {
        let (l, parity) = (init.width(), init.first_layer_parity());
        let layers = (1..=t)
            .map(|layer| pair_starts(l, parity, layer).map(|start| f(Slot { layer, start })).collect())
            .collect();
        Self { t, init, layers, noise: None, observables: Vec::new() }
    }

    pub fn uniform(t: usize, init: InitialState<R>, a: SlotAssignment<R>) -> Self {
        Self::new(t, init, |_| a.clone())
    }

    pub fn with_noise(mut self, noise: Option<PauliNoiseModel<R>>) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_observables(mut self, observables: Vec<Observable<R>>) -> Result<Self> {
        for o in &observables {
            check_support(self.width(), o)?;
        }
        self.observables = observables;
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.init.width()
    }

    pub fn depth(&self) -> usize {
        self.t
    }

    pub fn init(&self) -> &InitialState<R> {
        &self.init
    }

    pub fn noise(&self) -> Option<&PauliNoiseModel<R>> {
        self.noise.as_ref()
    }

    pub fn observables(&self) -> &[Observable<R>] {
        &self.observables
    }

    /// Slots in layer order, left to right.
    pub fn slots(&self) -> impl Iterator<Item = (Slot, &SlotAssignment<R>)> {
        let (l, parity) = (self.width(), self.init.first_layer_parity());
        self.layers.iter().enumerate().flat_map(move |(i, row)| {
            let layer = i + 1;
            pair_starts(l, parity, layer).zip(row.iter()).map(move |(start, a)| (Slot { layer, start }, a))
        })
    }

    /// The averaged circuit.
    pub fn channel_circuit(&self) -> Result<ChannelCircuit<R>> {
        let chans: Vec<Superoperator<R>> = self.slots().map(|(_, a)| a.channel()).collect();
        let mut it = chans.into_iter();
        Ok(ChannelCircuit::new(self.t, self.init.clone(), |_| it.next().expect("one channel per slot"))?
            .with_noise(self.noise.clone()))
    }
}

/// Exact averaged expectation of every observable (the oracle applied per observable).
pub fn evolve_exact_average<R: Real>(spec: &BrickworkSpec<R>) -> Result<Vec<R>> {
    let c = spec.channel_circuit()?;
    spec.observables.iter().map(|o| oracle_expectation(&c, o)).collect()
}

/// One sampled circuit realization.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundResult<R> {
    pub round: u64,
    pub seed: u64,
    /// Member index per slot, in [`BrickworkSpec::slots`] order.
    pub choices: Vec<usize>,
    /// Exact `⟨O⟩` of the realized pure state, one per observable.
    pub values: Vec<R>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Freedman–Diaconis binning; a single bin when the spread vanishes.
pub fn freedman_diaconis(samples: &[f64]) -> Histogram {
    if samples.is_empty() {
        return Histogram { edges: vec![], counts: vec![] };
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let (lo, hi) = (s[0], s[s.len() - 1]);
    let q = |p: f64| {
        let x = p * (s.len() - 1) as f64;
        let (i, f) = (x.floor() as usize, x.fract());
        if i + 1 < s.len() {
            s[i] * (1.0 - f) + s[i + 1] * f
        } else {
            s[i]
        }
    };
    let h = 2.0 * (q(0.75) - q(0.25)) / (s.len() as f64).cbrt();
    let bins = if h > 0.0 && hi > lo { (((hi - lo) / h).ceil() as usize).clamp(1, 10_000) } else { 1 };
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let edges: Vec<f64> = (0..=bins).map(|k| lo + width * k as f64).collect();
    let mut counts = vec![0; bins];
    for x in &s {
        let k = (((x - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    Histogram { edges, counts }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (`n − 1` normalization).
    pub std: f64,
    pub stderr: f64,
    pub histogram: Histogram,
}

impl Summary {
    pub fn of(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = if samples.len() > 1 { samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        let std = var.sqrt();
        Self { mean, std, stderr: std / n.sqrt(), histogram: freedman_diaconis(samples) }
    }
}

#[derive(Clone, Debug)]
pub struct SampleRun<R> {
    pub rounds: Vec<RoundResult<R>>,
    /// One summary per observable.
    pub summaries: Vec<Summary>,
}

/// Everything a state-vector realization needs, prepared once per spec.
struct Realizer<R: Real> {
    psi0: SiteTensor<R>,
    /// Per slot: selection weights, member matrices, whether it lies in the cone.
    slots: Vec<(Slot, Option<WeightedIndex<f64>>, Vec<Vec<C<R>>>, bool)>,
    noise: Option<Vec<(usize, WeightedIndex<f64>)>>,
    paulis: [Vec<C<R>>; 4],
    observables: Vec<Observable<R>>,
}

fn pure_register<R: Real>(init: &InitialState<R>, register: &[usize]) -> SiteTensor<R> {
    let h = R::FRAC_1_SQRT_2();
    let bell = [cr(h), cr(R::zero()), cr(R::zero()), cr(h)];
    let mut psi = SiteTensor::scalar(2);
    for &s in register {
        match init.prep(s) {
            Prep::PairFirst(_) => psi.insert_block(s, &bell),
            Prep::PairSecond(_) => {}
            Prep::Pure(v) => psi.insert(s, v.as_slice()),
        }
    }
    psi
}

impl<R: Real> Realizer<R> {
    fn new(spec: &BrickworkSpec<R>) -> Result<Self> {
        if spec.observables.is_empty() {
            return input("the spec has no observables");
        }
        let c = spec.channel_circuit()?;
        let l = spec.width();
        let mut in_cone = vec![vec![false; l]; spec.t + 1];
        for o in &spec.observables {
            for (acc, n) in in_cone.iter_mut().zip(backward_cone(&c, o.sites())) {
                for (a, b) in acc.iter_mut().zip(n) {
                    *a |= b;
                }
            }
        }
        let mut register: Vec<usize> = (0..l).filter(|&s| in_cone[0][s]).collect();
        for s in register.clone() {
            if let Some(p) = spec.init.bell_partner(s) {
                register.push(p);
            }
        }
        register.sort_unstable();
        register.dedup();
        if register.len() > STATEVECTOR_CAP {
            return Err(Error::Resource(format!(
                "state-vector register needs {} qubits (cap {STATEVECTOR_CAP})",
                register.len()
            )));
        }
        let mut slots = Vec::new();
        for (slot, a) in spec.slots() {
            let Some((w, mats)) = a.members() else {
                return Err(Error::Unsupported(format!("{slot} holds a bare channel and cannot be sampled")));
            };
            let pick = if w.len() > 1 {
                Some(WeightedIndex::new(&w).map_err(|e| Error::Input(format!("{slot}: {e}")))?)
            } else {
                None
            };
            let live = in_cone[slot.layer][slot.start] || in_cone[slot.layer][slot.start + 1];
            slots.push((slot, pick, mats, live));
        }
        let noise = match &spec.noise {
            Some(n) if !n.is_zero() => Some(
                register
                    .iter()
                    .map(|&s| {
                        let [x, y, z] = n.rates(s).map(|p| p.to_f64_lossy());
                        let w = [(1.0 - x - y - z).max(0.0), x, y, z];
                        WeightedIndex::new(w).map(|d| (s, d)).map_err(|e| Error::Input(format!("noise on site {s}: {e}")))
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
            _ => None,
        };
        Ok(Self {
            psi0: pure_register(&spec.init, &register),
            slots,
            noise,
            paulis: PauliIndex::ALL.map(|p| flat(&pauli::<R>(p))),
            observables: spec.observables.clone(),
        })
    }

    /// Samples member choices for every slot.
    fn choose(&self, rng: &mut impl Rng) -> Vec<usize> {
        self.slots.iter().map(|(_, pick, _, _)| pick.as_ref().map_or(0, |d| d.sample(rng))).collect()
    }

    fn evolve(&self, choices: &[usize], rng: &mut impl Rng) -> SiteTensor<R> {
        let mut psi = self.psi0.clone();
        let mut layer = 0;
        for (k, (slot, _, mats, live)) in self.slots.iter().enumerate() {
            if slot.layer != layer {
                if layer > 0 {
                    self.apply_noise(&mut psi, rng);
                }
                layer = slot.layer;
            }
            if *live {
                let pos = psi.position(slot.start).expect("cone gate inside register");
                psi.apply_pair(pos, &mats[choices[k]]);
            }
        }
        if layer > 0 {
            self.apply_noise(&mut psi, rng);
        }
        psi
    }

    fn apply_noise(&self, psi: &mut SiteTensor<R>, rng: &mut impl Rng) {
        if let Some(ds) = &self.noise {
            for (pos, (_, d)) in ds.iter().enumerate() {
                let p = d.sample(rng);
                if p != 0 {
                    psi.apply_single(pos, &self.paulis[p]);
                }
            }
        }
    }

    fn values(&self, psi: &SiteTensor<R>) -> Vec<R> {
        self.observables.iter().map(|o| pure_expectation(psi, o)).collect()
    }

    fn round(&self, seed: u64, round: u64) -> (RoundResult<R>, SiteTensor<R>) {
        let mut rng = stream_rng(seed, round);
        let choices = self.choose(&mut rng);
        let psi = self.evolve(&choices, &mut rng);
        let values = self.values(&psi);
        (RoundResult { round, seed, choices, values }, psi)
    }
}

/// `⟨ψ|O|ψ⟩` for a register containing the observable's sites.
fn pure_expectation<R: Real>(psi: &SiteTensor<R>, o: &Observable<R>) -> R {
    let mut phi = psi.clone();
    match o.form() {
        ObservableForm::Product(f) => {
            for (s, m) in o.sites().iter().zip(f) {
                phi.apply_single(psi.position(*s).expect("observable site in register"), &flat(m));
            }
        }
        ObservableForm::Joint(m) => {
            let pos = psi.position(o.sites()[0]).expect("observable site in register");
            phi.apply_block(pos, o.sites().len(), &flat(m));
        }
    }
    phi.overlap(&psi.data).re
}

/// Samples `rounds` independent realizations, each from `stream_rng(seed, r)`.
/// Rounds run in parallel; the output order and values do not depend on the
/// number of threads.
pub fn sample_rounds<R: Real>(spec: &BrickworkSpec<R>, rounds: u64, seed: u64) -> Result<SampleRun<R>> {
    let z = Realizer::new(spec)?;
    let results: Vec<RoundResult<R>> = (0..rounds).into_par_iter().map(|r| z.round(seed, r).0).collect();
    let summaries = (0..spec.observables.len())
        .map(|k| Summary::of(&results.iter().map(|r| r.values[k].to_f64_lossy()).collect::<Vec<_>>()))
        .collect();
    Ok(SampleRun { rounds: results, summaries })
}

/// Weighted mean over every combination of ensemble members in the light cone.
/// Noise is not supported here since it would need its own enumeration.
pub fn exhaustive_average<R: Real>(spec: &BrickworkSpec<R>) -> Result<Vec<R>> {
    if spec.noise.as_ref().is_some_and(|n| !n.is_zero()) {
        return Err(Error::Unsupported("exhaustive enumeration of noisy circuits".into()));
    }
    let z = Realizer::new(spec)?;
    let probs: Vec<Vec<R>> = spec
        .slots()
        .map(|(_, a)| match a {
            SlotAssignment::Ensemble(e) => e.probabilities(),
            _ => vec![R::one()],
        })
        .collect();
    let varying: Vec<usize> = (0..z.slots.len()).filter(|&k| z.slots[k].3 && probs[k].len() > 1).collect();
    let total = varying.iter().try_fold(1usize, |acc, &k| acc.checked_mul(probs[k].len()).filter(|&n| n <= ENUMERATION_CAP));
    let Some(total) = total else {
        return Err(Error::Resource(format!("more than {ENUMERATION_CAP} member combinations")));
    };
    let mut acc = vec![R::zero(); spec.observables.len()];
    let mut choices = vec![0usize; z.slots.len()];
    let mut rng = stream_rng(0, 0);
    for mut code in 0..total {
        let mut w = R::one();
        for &k in &varying {
            let n = probs[k].len();
            choices[k] = code % n;
            code /= n;
            w *= probs[k][choices[k]];
        }
        if w.is_zero() {
            continue;
        }
        let psi = z.evolve(&choices, &mut rng);
        for (a, v) in acc.iter_mut().zip(z.values(&psi)) {
            *a += w * v;
        }
    }
    Ok(acc)
}

/// Finite-shot estimate of one observable.
#[derive(Clone, Debug, PartialEq)]
pub struct ShotEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub shots: usize,
    /// Exact value of the realization the shots were drawn from.
    pub exact: f64,
}

/// Emulates `shots` projective measurements of every observable on the state of
/// `round`, each observable measured in the eigenbasis of its site factors.
pub fn shot_sample<R: Real>(spec: &BrickworkSpec<R>, round: u64, shots: usize, seed: u64) -> Result<Vec<ShotEstimate>> {
    if shots == 0 {
        return input("shots must be positive");
    }
    let z = Realizer::new(spec)?;
    let (res, psi) = z.round(seed, round);
    let mut rng = stream_rng(seed ^ 0x5eed_5407_5a3b_0b5e, round);
    spec.observables
        .iter()
        .zip(&res.values)
        .map(|(o, exact)| {
            let factors: Vec<Mat<R>> = match o.form() {
                ObservableForm::Product(f) => f.clone(),
                ObservableForm::Joint(m) if m.nrows() == 2 => vec![m.clone()],
                ObservableForm::Joint(_) => {
                    return Err(Error::Unsupported("shot sampling of joint multi-site observables".into()))
                }
            };
            let mut phi = psi.clone();
            let mut eigs = Vec::new();
            for (s, m) in o.sites().iter().zip(&factors) {
                let e = m.clone().symmetric_eigen();
                phi.apply_single(phi.position(*s).expect("site in register"), &flat(&e.eigenvectors.adjoint()));
                eigs.push([e.eigenvalues[0].to_f64_lossy(), e.eigenvalues[1].to_f64_lossy()]);
            }
            let positions: Vec<usize> = o.sites().iter().map(|s| phi.position(*s).expect("site in register")).collect();
            let n = phi.sites.len();
            let k = positions.len();
            let mut probs = vec![0.0f64; 1 << k];
            for (idx, a) in phi.data.iter().enumerate() {
                let outcome = positions.iter().fold(0, |acc, &p| (acc << 1) | ((idx >> (n - 1 - p)) & 1));
                probs[outcome] += a.norm_sqr().to_f64_lossy();
            }
            let value = |outcome: usize| (0..k).fold(1.0, |acc, q| acc * eigs[q][(outcome >> (k - 1 - q)) & 1]);
            let dist = WeightedIndex::new(&probs).map_err(|e| Error::Solver(format!("outcome distribution: {e}")))?;
            let samples: Vec<f64> = (0..shots).map(|_| value(dist.sample(&mut rng))).collect();
            let s = Summary::of(&samples);
            Ok(ShotEstimate { mean: s.mean, stderr: s.stderr, shots, exact: exact.to_f64_lossy() })
        })
        .collect()
}

/// Gates built from a possibly miscalibrated `T = diag(1, e^{iφ})`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TGateModel<R> {
    pub phi: R,
}

impl<R: Real> TGateModel<R> {
    pub fn new(phi: R) -> Self {
        Self { phi }
    }

    pub fn ideal() -> Self {
        Self { phi: R::FRAC_PI_4() }
    }

    pub fn t_gate(&self) -> Mat<R> {
        let mut m = Mat::<R>::identity(2, 2);
        m[(1, 1)] = cis(self.phi);
        m
    }

    fn hadamard() -> Mat<R> {
        let h = R::FRAC_1_SQRT_2();
        Mat::from_row_slice(2, 2, &[cr(h), cr(h), cr(h), cr(-h)])
    }

    /// `u₁ = H T² H T H`, `u₂ = H T² H T H T H`, `u₃ = H T² H T H T`.
    pub fn single(&self, n: usize) -> Result<Mat<R>> {
        let (h, t) = (Self::hadamard(), self.t_gate());
        let t2 = &t * &t;
        let core = &h * &t2 * &h * &t;
        match n {
            1 => Ok(core * &h),
            2 => Ok(core * &h * &t * &h),
            3 => Ok(core * &h * &t),
            _ => input(format!("gate family must be 1, 2 or 3, got {n}")),
        }
    }

    /// `CNOT₁₂ (u⊗u) CNOT₂₁ (u⊗u) CNOT₁₂ (u⊗u)`.
    pub fn gate(&self, n: usize) -> Result<TwoQubitGate<R>> {
        let u = self.single(n)?;
        let uu = u.kronecker(&u);
        let (a, b) = (TwoQubitGate::<R>::cnot12(), TwoQubitGate::<R>::cnot21());
        let m = a.matrix() * &uu * b.matrix() * &uu * a.matrix() * &uu;
        TwoQubitGate::new(m)
    }
}

/// Uniform brickwork of `U_(n)` averaged by the output-leg twirl, on the
/// `plus_bell` state, observing `σ_X` at site `T`.
pub fn build_fig1_circuit<R: Real>(n: usize, phi: R, t: usize, l: usize) -> Result<BrickworkSpec<R>> {
    if l < 2 * t + 1 {
        return input(format!("width {l} is below 2T+1 = {}", 2 * t + 1));
    }
    let g = TGateModel::new(phi).gate(n)?;
    let e = twirl_3way(&g, Leg::First);
    BrickworkSpec::uniform(t, InitialState::plus_bell(l)?, SlotAssignment::Ensemble(e))
        .with_observables(vec![Observable::pauli(t, PauliIndex::X)])
}

/// Local gate angles `(α, β, γ)` for `W_B, W_A` (first) and `W'_B, W'_A` (second layer type).
pub const FIG2_LOCALS: [[f64; 3]; 4] = [
    [1.64979, 0.48791, 0.20562],
    [1.54383, 1.80539, 0.17212],
    [0.45310, 1.11250, 1.60546],
    [1.53416, 0.20499, 1.04460],
];
pub const FIG2_THETA_Z: f64 = 0.6;
pub const FIG2_DELTA: f64 = 0.05;

/// `(0.57 X + 0.12 Y + 0.84 Z)` divided by its Hilbert–Schmidt norm.
pub fn fig2_observable<R: Real>(site: usize) -> Observable<R> {
    let (a, b, g) = (0.57, 0.12, 0.84);
    let hs = (2.0f64 * (a * a + b * b + g * g)).sqrt();
    let m = pauli::<R>(PauliIndex::X).map(|z| z * c::<R>(a / hs, 0.0))
        + pauli::<R>(PauliIndex::Y).map(|z| z * c::<R>(b / hs, 0.0))
        + pauli::<R>(PauliIndex::Z).map(|z| z * c::<R>(g / hs, 0.0));
    Observable::single(site, m).expect("norm below 1")
}

/// KAK form of the seed gate for a layer; odd layers `t = 1, 3, ...` use the first pair of locals.
pub fn fig2_kak<R: Real>(layer: usize) -> KakForm<R> {
    let w = |k: usize| su2_exp(R::lit(FIG2_LOCALS[k][0]), R::lit(FIG2_LOCALS[k][1]), R::lit(FIG2_LOCALS[k][2]));
    let (wb, wa) = if layer % 2 == 1 { (w(0), w(1)) } else { (w(2), w(3)) };
    let q = std::f64::consts::FRAC_PI_4 + FIG2_DELTA;
    KakForm {
        w_a: wa,
        w_b: wb,
        v_a: Mat::identity(2, 2),
        v_b: Mat::identity(2, 2),
        theta: [R::lit(q), R::lit(q), R::lit(FIG2_THETA_Z)],
        global_phase: R::zero(),
    }
}

/// Reflection-ensemble brickwork of the sample-complexity study, observing
/// the fixed operator at sites `T − 1` and `T`.
pub fn build_fig2_circuit<R: Real>(t: usize, l: usize) -> Result<BrickworkSpec<R>> {
    if t == 0 || l < 2 * t + 1 {
        return input(format!("need T >= 1 and width >= 2T+1, got T={t}, L={l}"));
    }
    let ens: Vec<GateEnsemble<R>> = (1..=2).map(|layer| reflection_ensemble_from_kak(&fig2_kak(layer))).collect();
    BrickworkSpec::new(t, InitialState::plus_bell(l)?, |slot| SlotAssignment::Ensemble(ens[(slot.layer + 1) % 2].clone()))
        .with_observables(vec![fig2_observable(t - 1), fig2_observable(t)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlators::avg_single_site;
    use crate::ensembles::{reflection_ensemble, twirl_4way};
    use crate::pauli::is_unitary;
    use crate::random::haar_gate;

    fn random_spec(t: usize, init: InitialState<f64>, seed: u64, make: impl Fn(TwoQubitGate<f64>) -> SlotAssignment<f64>) -> BrickworkSpec<f64> {
        let mut rng = stream_rng(seed, 11);
        BrickworkSpec::new(t, init, |_| make(haar_gate(&mut rng)))
    }

    fn reflect(g: TwoQubitGate<f64>) -> SlotAssignment<f64> {
        SlotAssignment::Ensemble(reflection_ensemble(&g).unwrap())
    }

    #[test]
    fn trimmed_oracle_equals_full_evolution() {
        let noise = PauliNoiseModel::uniform(0.01, 0.0, 0.02).unwrap();
        for (init, seed) in [(InitialState::bell_product(8).unwrap(), 1), (InitialState::plus_bell(7).unwrap(), 2)] {
            let spec = random_spec(3, init, seed, SlotAssignment::Gate).with_noise(Some(noise.clone()));
            let c = spec.channel_circuit().unwrap();
            let full = evolve_density(&c).unwrap();
            assert!((full.trace() - 1.0).abs() < 1e-12);
            for i in 0..c.width() - 1 {
                let o = Observable::product(vec![i, i + 1], vec![pauli(PauliIndex::X), pauli(PauliIndex::Y)]).unwrap();
                let a = oracle_expectation(&c, &o).unwrap();
                let b = full.expectation(&o).unwrap();
                assert!((a - b).abs() < 1e-12, "{i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn identity_circuit_keeps_bell_correlations() {
        let spec = BrickworkSpec::<f64>::uniform(2, InitialState::bell_product(6).unwrap(), SlotAssignment::Gate(TwoQubitGate::identity()))
            .with_observables(vec![Observable::product(vec![2, 3], vec![pauli(PauliIndex::Z), pauli(PauliIndex::Z)]).unwrap()])
            .unwrap();
        assert!((evolve_exact_average(&spec).unwrap()[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn dense_evolution_is_capped() {
        let c = ChannelCircuit::uniform(1, InitialState::<f64>::bell_product(14).unwrap(), &Superoperator::identity(2)).unwrap();
        assert!(matches!(evolve_density(&c), Err(Error::Resource(_))));
    }

    #[test]
    fn purity_never_increases_under_unital_channels() {
        let spec = random_spec(4, InitialState::bell_product(6).unwrap(), 3, reflect);
        let mut last = f64::INFINITY;
        for t in 0..=4 {
            let mut sub = spec.clone();
            sub.t = t;
            sub.layers.truncate(t);
            let p = evolve_density(&sub.channel_circuit().unwrap()).unwrap().purity();
            assert!(p <= last + 1e-12);
            last = p;
        }
    }

    #[test]
    fn exhaustive_average_equals_channel_evolution() {
        let obs = vec![
            Observable::pauli(2, PauliIndex::X),
            Observable::product(vec![1, 2], vec![pauli(PauliIndex::Z), pauli(PauliIndex::Y)]).unwrap(),
        ];
        let spec = random_spec(2, InitialState::plus_bell(5).unwrap(), 4, reflect).with_observables(obs).unwrap();
        let exact = evolve_exact_average(&spec).unwrap();
        let enumerated = exhaustive_average(&spec).unwrap();
        for (a, b) in exact.iter().zip(&enumerated) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn single_member_rounds_have_no_spread() {
        let spec = random_spec(2, InitialState::bell_product(6).unwrap(), 5, SlotAssignment::Gate)
            .with_observables(vec![Observable::pauli(3, PauliIndex::Z)])
            .unwrap();
        let run = sample_rounds(&spec, 20, 9).unwrap();
        let exact = evolve_exact_average(&spec).unwrap()[0];
        assert!(run.summaries[0].std < 1e-14);
        assert!((run.summaries[0].mean - exact).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_deterministic_and_unbiased() {
        let spec = random_spec(2, InitialState::plus_bell(6).unwrap(), 6, |g| SlotAssignment::Ensemble(twirl_4way(&g, 0.3).unwrap()))
            .with_noise(Some(PauliNoiseModel::depolarizing(0.05).unwrap()))
            .with_observables(vec![Observable::pauli(2, PauliIndex::X), Observable::pauli(1, PauliIndex::Z)])
            .unwrap();
        let a = sample_rounds(&spec, 4000, 17).unwrap();
        let b = sample_rounds(&spec, 4000, 17).unwrap();
        assert_eq!(a.rounds, b.rounds);
        let exact = evolve_exact_average(&spec).unwrap();
        for (s, e) in a.summaries.iter().zip(&exact) {
            assert!((s.mean - e).abs() <= 5.0 * s.stderr + 1e-12, "{} vs {e} (stderr {})", s.mean, s.stderr);
            assert_eq!(s.histogram.counts.iter().sum::<usize>(), 4000);
        }
    }

    #[test]
    fn realizations_preserve_norm() {
        let spec = random_spec(3, InitialState::bell_product(8).unwrap(), 7, reflect)
            .with_observables(vec![Observable::pauli(4, PauliIndex::X)])
            .unwrap();
        let z = Realizer::new(&spec).unwrap();
        for r in 0..5 {
            let (_, psi) = z.round(3, r);
            assert!((psi.norm_sqr() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shots_converge_and_are_reproducible() {
        let spec = random_spec(2, InitialState::plus_bell(6).unwrap(), 8, reflect)
            .with_observables(vec![Observable::pauli(2, PauliIndex::X), Observable::product(vec![1, 3], vec![pauli(PauliIndex::Z), pauli(PauliIndex::Y)]).unwrap()])
            .unwrap();
        let a = shot_sample(&spec, 3, 1_000_000, 5).unwrap();
        assert_eq!(a, shot_sample(&spec, 3, 1_000_000, 5).unwrap());
        for e in &a {
            let sigma = (1.0 - e.exact * e.exact).max(0.0).sqrt() / (e.shots as f64).sqrt();
            assert!((e.mean - e.exact).abs() <= 5.0 * sigma + 1e-12);
        }
        let eig = BrickworkSpec::<f64>::uniform(1, InitialState::plus_bell(3).unwrap(), SlotAssignment::Gate(TwoQubitGate::identity()))
            .with_observables(vec![Observable::pauli(0, PauliIndex::X)])
            .unwrap();
        let s = &shot_sample(&eig, 0, 100, 1).unwrap()[0];
        assert_eq!((s.mean, s.stderr), (1.0, 0.0));
    }

    #[test]
    fn freedman_diaconis_bins_cover_samples() {
        let xs: Vec<f64> = (0..1000).map(|k| (k as f64 * 0.37).sin()).collect();
        let h = freedman_diaconis(&xs);
        assert_eq!(h.counts.iter().sum::<usize>(), 1000);
        assert_eq!(h.edges.len(), h.counts.len() + 1);
        assert!(h.counts.len() > 5);
        assert_eq!(freedman_diaconis(&[2.0; 10]).counts, vec![10]);
    }

    #[test]
    fn t_gate_family() {
        let m = TGateModel::<f64>::ideal();
        let t = m.t_gate();
        let t8 = &t * &t * &t * &t * &t * &t * &t * &t;
        assert!((t8 - Mat::identity(2, 2)).norm() < 1e-14);
        for n in 1..=3 {
            assert!(is_unitary(m.gate(n).unwrap().matrix(), 1e-12));
        }
        assert!(m.gate(4).is_err());
    }

    #[test]
    fn fig1_depends_on_phi_and_matches_oracle() {
        for n in 1..=3 {
            let vals: Vec<f64> = [std::f64::consts::FRAC_PI_4, std::f64::consts::FRAC_PI_4 + 0.3]
                .iter()
                .map(|&phi| {
                    let spec = build_fig1_circuit(n, phi, 3, 8).unwrap();
                    let c = spec.channel_circuit().unwrap();
                    let v = avg_single_site(&c, &spec.observables()[0]).unwrap();
                    assert!((v - evolve_exact_average(&spec).unwrap()[0]).abs() < 1e-12);
                    v
                })
                .collect();
            assert!((vals[0] - vals[1]).abs() > 1e-6, "n={n}: {vals:?}");
        }
    }

    #[test]
    fn fig2_spec_is_four_way_and_consistent() {
        let spec = build_fig2_circuit::<f64>(3, 8).unwrap();
        let c = spec.channel_circuit().unwrap();
        for (_, ch) in c.slots() {
            assert!(crate::spacetime::classify(ch, 1e-10).is_four_way());
        }
        let exact = evolve_exact_average(&spec).unwrap();
        assert!(exact[0].abs() < 1e-12);
        assert!((exact[1] - avg_single_site(&c, &spec.observables()[1]).unwrap()).abs() < 1e-12);
        let o = fig2_observable::<f64>(0);
        let d = o.dense();
        assert!(((&d * &d).trace().re - 1.0).abs() < 1e-12);
    }
}
