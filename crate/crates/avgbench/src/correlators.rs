//! Classical evaluation of averaged correlators by light-cone contraction.
//!
//! Sites are numbered `0..L`. Layer `t = 1..=T` of a brickwork acts on pairs
//! `(s, s+1)`; the parity of `s` alternates between layers and is fixed by the
//! initial state so that state preparation plays the role of layer 0.

use std::fmt;

use num_traits::Zero;

use crate::error::{input, precondition, Error, Result};
use crate::kernel::{flat, SiteTensor};
use crate::pauli::{pauli, pauli_channel, vectorize, vectorize_folded, Mat, PauliIndex, Superoperator, Vector};
use crate::scalar::{cr, Real, C};
use crate::spacetime::{classify, e_l, m_r, mixed_vector, trace_covector, transfer, two_site_transfer, Side, SpaceTimeClass};

/// Largest number of simultaneously tracked sites in the band engine.
pub const BAND_WIDTH_CAP: usize = 10;
/// Largest observable support accepted by [`avg_k_body`].
pub const K_BODY_CAP: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub enum InitialKind<R: Real> {
    /// Bell pairs on `(0,1), (2,3), ...`.
    BellProduct,
    /// `|+⟩` on site 0, Bell pairs on `(1,2), (3,4), ...`, and `|+⟩` on a leftover last site.
    PlusBell,
    /// Arbitrary single-site pure states.
    ExplicitProduct(Vec<Vector<R>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitialState<R: Real> {
    kind: InitialKind<R>,
    l: usize,
}

/// How one site is prepared.
#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Prep<R: Real> {
    /// First site of a Bell pair with its partner.
    PairFirst(usize),
    /// Second site of a Bell pair.
    PairSecond(usize),
    Pure(Vector<R>),
}

fn plus_state<R: Real>() -> Vector<R> {
    let h = R::FRAC_1_SQRT_2();
    Vector::from_vec(vec![cr(h), cr(h)])
}

impl<R: Real> InitialState<R> {
    pub fn bell_product(l: usize) -> Result<Self> {
        if l < 2 || !l.is_multiple_of(2) {
            return input(format!("bell_product needs an even width >= 2, got {l}"));
        }
        Ok(Self { kind: InitialKind::BellProduct, l })
    }

    pub fn plus_bell(l: usize) -> Result<Self> {
        if l < 2 {
            return input("plus_bell needs at least two sites");
        }
        Ok(Self { kind: InitialKind::PlusBell, l })
    }

    pub fn explicit_product(states: Vec<Vector<R>>) -> Result<Self> {
        if states.len() < 2 {
            return input("explicit product needs at least two sites");
        }
        for s in &states {
            if s.len() != 2 || (s.norm() - R::one()).abs() > R::lit(R::STRUCT_TOL) {
                return input("explicit product states must be normalized qubit vectors");
            }
        }
        let l = states.len();
        Ok(Self { kind: InitialKind::ExplicitProduct(states), l })
    }

    pub fn kind(&self) -> &InitialKind<R> {
        &self.kind
    }

    pub fn width(&self) -> usize {
        self.l
    }

    /// Parity of the first site of every pair acted on by layer 1.
    pub fn first_layer_parity(&self) -> usize {
        match self.kind {
            InitialKind::BellProduct => 1,
            _ => 0,
        }
    }

    pub(crate) fn prep(&self, site: usize) -> Prep<R> {
        match &self.kind {
            InitialKind::BellProduct => {
                if site.is_multiple_of(2) {
                    Prep::PairFirst(site + 1)
                } else {
                    Prep::PairSecond(site - 1)
                }
            }
            InitialKind::PlusBell => {
                if site == 0 || (site == self.l - 1 && self.l.is_multiple_of(2)) {
                    Prep::Pure(plus_state())
                } else if site % 2 == 1 {
                    Prep::PairFirst(site + 1)
                } else {
                    Prep::PairSecond(site - 1)
                }
            }
            InitialKind::ExplicitProduct(v) => Prep::Pure(v[site].clone()),
        }
    }

    pub fn bell_partner(&self, site: usize) -> Option<usize> {
        match self.prep(site) {
            Prep::PairFirst(p) | Prep::PairSecond(p) => Some(p),
            Prep::Pure(_) => None,
        }
    }

    /// Folded marginal on a sorted list of sites.
    pub(crate) fn marginal(&self, sites: &[usize]) -> SiteTensor<R> {
        let mut t = SiteTensor::scalar(4);
        let contains = |s: usize| sites.binary_search(&s).is_ok();
        let mixed: Vec<C<R>> = mixed_vector::<R>().iter().map(|x| cr(*x)).collect();
        for &s in sites {
            match self.prep(s) {
                Prep::PairFirst(p) if contains(p) => t.insert_block(s, &bell_pair_folded::<R>()),
                Prep::PairSecond(p) if contains(p) => {}
                Prep::PairFirst(_) | Prep::PairSecond(_) => t.insert(s, &mixed),
                Prep::Pure(v) => {
                    let rho = &v * v.adjoint();
                    t.insert(s, vectorize(&rho).expect("2x2").as_slice());
                }
            }
        }
        t
    }
}

/// Folded `|Φ+⟩⟨Φ+|` on two sites.
pub(crate) fn bell_pair_folded<R: Real>() -> Vec<C<R>> {
    let h = R::FRAC_1_SQRT_2();
    let ket = Vector::<R>::from_vec(vec![cr(h), C::zero(), C::zero(), cr(h)]);
    let rho = &ket * ket.adjoint();
    vectorize_folded(&rho).expect("4x4").as_slice().to_vec()
}

#[derive(Clone, Debug, PartialEq)]
pub enum ObservableForm<R: Real> {
    /// One 2×2 factor per listed site.
    Product(Vec<Mat<R>>),
    /// A joint operator on consecutive sites.
    Joint(Mat<R>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observable<R: Real> {
    sites: Vec<usize>,
    form: ObservableForm<R>,
}

fn hermitian_and_bounded<R: Real>(m: &Mat<R>) -> Result<()> {
    let herm = (m - m.adjoint()).norm();
    if herm > R::lit(R::ROUND_TOL) {
        return input("observable is not Hermitian");
    }
    let ev = m.clone().symmetric_eigen().eigenvalues;
    let norm = ev.iter().fold(R::zero(), |a, e| a.max(e.abs()));
    if norm > R::one() + R::lit(R::ROUND_TOL) {
        return input(format!("observable norm {norm} exceeds 1"));
    }
    Ok(())
}

impl<R: Real> Observable<R> {
    pub fn single(site: usize, m: Mat<R>) -> Result<Self> {
        Self::product(vec![site], vec![m])
    }

    pub fn pauli(site: usize, p: PauliIndex) -> Self {
        Self { sites: vec![site], form: ObservableForm::Product(vec![pauli(p)]) }
    }

    pub fn product(sites: Vec<usize>, factors: Vec<Mat<R>>) -> Result<Self> {
        if sites.is_empty() || sites.len() != factors.len() {
            return input("one 2x2 factor per site is required");
        }
        if sites.windows(2).any(|w| w[0] >= w[1]) {
            return input("observable sites must be strictly increasing");
        }
        for f in &factors {
            if f.shape() != (2, 2) {
                return input("product factors must be 2x2");
            }
            hermitian_and_bounded(f)?;
        }
        Ok(Self { sites, form: ObservableForm::Product(factors) })
    }

    /// Joint operator on `first, first+1, ..., first+k-1`.
    pub fn joint(first: usize, m: Mat<R>) -> Result<Self> {
        let d = m.nrows();
        if !m.is_square() || !d.is_power_of_two() || d < 2 {
            return input("joint observable must be a square 2^k matrix");
        }
        hermitian_and_bounded(&m)?;
        let k = d.trailing_zeros() as usize;
        Ok(Self { sites: (first..first + k).collect(), form: ObservableForm::Joint(m) })
    }

    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    pub fn form(&self) -> &ObservableForm<R> {
        &self.form
    }

    pub fn is_contiguous(&self) -> bool {
        self.sites.windows(2).all(|w| w[1] == w[0] + 1)
    }

    /// Normalized trace of the operator, i.e. its identity component.
    pub fn identity_component(&self) -> R {
        match &self.form {
            ObservableForm::Product(f) => f.iter().fold(R::one(), |a, m| a * m.trace().re / R::lit(2.0)),
            ObservableForm::Joint(m) => m.trace().re / R::lit(m.nrows() as f64),
        }
    }

    /// Every factor (or the joint operator) has zero trace.
    pub fn is_traceless(&self, tol: R) -> bool {
        match &self.form {
            ObservableForm::Product(f) => f.iter().all(|m| m.trace().norm_sqr().sqrt() <= tol),
            ObservableForm::Joint(m) => m.trace().norm_sqr().sqrt() <= tol,
        }
    }

    /// Folded vectorization in site order.
    pub(crate) fn folded(&self) -> Vec<C<R>> {
        match &self.form {
            ObservableForm::Product(f) => {
                let mut t = SiteTensor::scalar(4);
                for (s, m) in self.sites.iter().zip(f) {
                    t.insert(*s, vectorize(m).expect("2x2").as_slice());
                }
                t.data
            }
            ObservableForm::Joint(m) => vectorize_folded(m).expect("2^k").as_slice().to_vec(),
        }
    }

    /// `Tr(O ρ)` for a folded tensor over exactly the observable's sites.
    pub(crate) fn expectation_folded(&self, rho: &SiteTensor<R>) -> R {
        debug_assert_eq!(rho.sites, self.sites);
        rho.overlap(&self.folded()).re
    }

    /// Dense operator on the observable's sites in site order.
    pub fn dense(&self) -> Mat<R> {
        match &self.form {
            ObservableForm::Product(f) => f.iter().skip(1).fold(f[0].clone(), |acc, m| acc.kronecker(m)),
            ObservableForm::Joint(m) => m.clone(),
        }
    }
}

/// Independent single-qubit Pauli errors after every layer.
#[derive(Clone, Debug, PartialEq)]
pub struct PauliNoiseModel<R: Real> {
    rates: NoiseRates<R>,
}

#[derive(Clone, Debug, PartialEq)]
enum NoiseRates<R> {
    Uniform([R; 3]),
    PerSite(Vec<[R; 3]>),
}

fn check_rates<R: Real>(p: &[R; 3]) -> Result<()> {
    let sum = p[0] + p[1] + p[2];
    if p.iter().any(|x| *x < R::zero() || !x.is_finite()) || sum > R::one() + R::lit(R::ROUND_TOL) {
        return input(format!("invalid Pauli error probabilities ({}, {}, {})", p[0], p[1], p[2]));
    }
    Ok(())
}

impl<R: Real> PauliNoiseModel<R> {
    pub fn uniform(px: R, py: R, pz: R) -> Result<Self> {
        let p = [px, py, pz];
        check_rates(&p)?;
        Ok(Self { rates: NoiseRates::Uniform(p) })
    }

    /// Depolarizing noise with total error probability `p`.
    pub fn depolarizing(p: R) -> Result<Self> {
        let third = p / R::lit(3.0);
        Self::uniform(third, third, third)
    }

    pub fn per_site(rates: Vec<[R; 3]>) -> Result<Self> {
        for p in &rates {
            check_rates(p)?;
        }
        Ok(Self { rates: NoiseRates::PerSite(rates) })
    }

    /// Marginal error probabilities of one site.
    pub fn rates(&self, site: usize) -> [R; 3] {
        match &self.rates {
            NoiseRates::Uniform(p) => *p,
            NoiseRates::PerSite(v) => v.get(site).copied().unwrap_or([R::zero(); 3]),
        }
    }

    /// Reduced single-site channel.
    pub fn channel(&self, site: usize) -> Superoperator<R> {
        let [x, y, z] = self.rates(site);
        pauli_channel(x, y, z)
    }

    pub fn is_zero(&self) -> bool {
        match &self.rates {
            NoiseRates::Uniform(p) => p.iter().all(|x| x.is_zero()),
            NoiseRates::PerSite(v) => v.iter().flatten().all(|x| x.is_zero()),
        }
    }
}

/// Averaged brickwork: one channel per gate slot.
#[derive(Clone, Debug)]
pub struct ChannelCircuit<R: Real> {
    l: usize,
    t: usize,
    init: InitialState<R>,
    layers: Vec<Vec<Superoperator<R>>>,
    noise: Option<PauliNoiseModel<R>>,
}

/// Position of a gate in the brickwork.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Slot {
    pub layer: usize,
    pub start: usize,
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "layer {} pair ({}, {})", self.layer, self.start, self.start + 1)
    }
}

/// First sites of the pairs acted on by `layer` in a chain of width `l`.
pub(crate) fn pair_starts(l: usize, parity1: usize, layer: usize) -> impl Iterator<Item = usize> {
    let p = (layer + 1 + parity1) % 2;
    (p..l.saturating_sub(1)).step_by(2)
}

impl<R: Real> ChannelCircuit<R> {
    /// Builds every slot with `f(slot)`.
    pub fn new(t: usize, init: InitialState<R>, mut f: impl FnMut(Slot) -> Superoperator<R>) -> Result<Self> {
        let l = init.width();
        let parity = init.first_layer_parity();
        let mut layers = Vec::with_capacity(t);
        for layer in 1..=t {
            let mut row = Vec::new();
            for start in pair_starts(l, parity, layer) {
                let ch = f(Slot { layer, start });
                if ch.n_qubits() != 2 {
                    return input(format!("slot {} needs a two-qubit channel", Slot { layer, start }));
                }
                row.push(ch);
            }
            layers.push(row);
        }
        Ok(Self { l, t, init, layers, noise: None })
    }

    pub fn uniform(t: usize, init: InitialState<R>, channel: &Superoperator<R>) -> Result<Self> {
        Self::new(t, init, |_| channel.clone())
    }

    pub fn with_noise(mut self, noise: Option<PauliNoiseModel<R>>) -> Self {
        self.noise = noise;
        self
    }

    pub fn width(&self) -> usize {
        self.l
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

    pub fn starts(&self, layer: usize) -> impl Iterator<Item = usize> {
        pair_starts(self.l, self.init.first_layer_parity(), layer)
    }

    /// Channel of the gate starting at `start` in `layer`, if that slot exists.
    pub fn channel(&self, layer: usize, start: usize) -> Option<&Superoperator<R>> {
        if layer == 0 || layer > self.t || start + 1 >= self.l {
            return None;
        }
        let p = (layer + 1 + self.init.first_layer_parity()) % 2;
        if start % 2 != p {
            return None;
        }
        self.layers[layer - 1].get((start - p) / 2)
    }

    /// First site of the pair containing `site` in `layer`, if it is not idle.
    pub fn pair_of(&self, layer: usize, site: usize) -> Option<usize> {
        let p = (layer + 1 + self.init.first_layer_parity()) % 2;
        let start = if site % 2 == p { site } else { site.checked_sub(1)? };
        self.channel(layer, start).map(|_| start)
    }

    pub fn slots(&self) -> impl Iterator<Item = (Slot, &Superoperator<R>)> {
        self.layers.iter().enumerate().flat_map(move |(i, row)| {
            let layer = i + 1;
            self.starts(layer).zip(row.iter()).map(move |(start, ch)| (Slot { layer, start }, ch))
        })
    }

    /// Single-site noise channel, if any, after a layer.
    pub(crate) fn noise_flat(&self, site: usize) -> Option<Vec<C<R>>> {
        self.noise.as_ref().filter(|n| !n.is_zero()).map(|n| flat(n.channel(site).matrix()))
    }

    fn noise_channel(&self, site: usize) -> Superoperator<R> {
        self.noise.as_ref().map_or_else(|| Superoperator::identity(1), |n| n.channel(site))
    }

    /// Fails with a precondition error naming the first slot that violates `ok`.
    fn require(&self, what: &str, tol: R, ok: impl Fn(&SpaceTimeClass<R>) -> bool) -> Result<()> {
        for (slot, ch) in self.slots() {
            let c = classify(ch, tol);
            if !ok(&c) {
                return precondition(format!("{slot} is not {what} (class {}, max residual {})", c.label(), c.max_residual()));
            }
        }
        Ok(())
    }
}

/// The correlator families with a transfer-matrix formula.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    SingleSite,
    TwoBody,
    ThreeSite,
    KBody,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SingleSite => "single_site",
            Self::TwoBody => "two_body",
            Self::ThreeSite => "three_site",
            Self::KBody => "k_body",
        })
    }
}

/// One evaluated correlator.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelatorRecord<R> {
    pub scheme: Scheme,
    pub sites: Vec<usize>,
    pub t: usize,
    pub value: R,
}

fn default_tol<R: Real>() -> R {
    R::lit(R::STRUCT_TOL)
}

fn require_traceless<R: Real>(o: &Observable<R>) -> Result<()> {
    if !o.is_traceless(R::lit(R::ROUND_TOL)) {
        return precondition("observable must be traceless on its support");
    }
    Ok(())
}

/// `Tr(O ρ₀)`.
fn initial_expectation<R: Real>(init: &InitialState<R>, o: &Observable<R>) -> R {
    o.expectation_folded(&init.marginal(o.sites()))
}

fn apply_map<R: Real>(m: &Mat<R>, v: &[C<R>]) -> Vec<C<R>> {
    (0..m.nrows()).map(|r| (0..m.ncols()).fold(C::zero(), |acc, c| acc + m[(r, c)] * v[c])).collect()
}

/// Single-site correlator on the `plus_bell` state. Nonzero only at `x = T`,
/// where it is `⟨O| Π_k N M+_k |+⟩` along the light ray leaving site 0.
pub fn avg_single_site<R: Real>(c: &ChannelCircuit<R>, o: &Observable<R>) -> Result<R> {
    if !matches!(c.init.kind, InitialKind::PlusBell) {
        return precondition("the single-site scheme needs the plus_bell initial state");
    }
    if o.sites().len() != 1 {
        return input("single-site scheme needs a one-site observable");
    }
    require_traceless(o)?;
    let (x, t) = (o.sites()[0], c.depth());
    if x >= c.width() {
        return input(format!("site {x} outside the chain"));
    }
    if t == 0 {
        return Ok(initial_expectation(&c.init, o));
    }
    if c.width() < 2 * t + 1 {
        return precondition(format!("width {} too small for depth {t}; need at least {}", c.width(), 2 * t + 1));
    }
    if c.width().is_multiple_of(2) && x + t + 1 >= c.width() {
        return precondition(format!(
            "site {x} lies in the forward light cone of the trailing |+> on site {}; need x + T + 1 < L",
            c.width() - 1
        ));
    }
    c.require("3-way right-unital", default_tol(), |s| s.is_right_three_way())?;
    if x != t {
        return Ok(R::zero());
    }
    let plus = plus_state::<R>();
    let mut v: Vec<C<R>> = vectorize(&(&plus * plus.adjoint())).expect("2x2").as_slice().to_vec();
    for k in 1..=t {
        let ch = c.channel(k, k - 1).expect("light-ray slot exists");
        let m = transfer(ch, Side::Plus);
        v = apply_map(m.matrix(), &v);
        v = apply_map(c.noise_channel(k).matrix(), &v);
    }
    let w = o.folded();
    Ok(w.iter().zip(&v).fold(C::<R>::zero(), |acc, (a, b)| acc + a.conj() * b).re)
}

/// Two-point correlator on the `bell_product` state, `⟨ab| Π_k N M−_k ⊗ N M+_k |ρ_Bell⟩`
/// for `j = i + 2T + 1`, and zero at every other separation.
pub fn avg_two_body<R: Real>(c: &ChannelCircuit<R>, a: &Observable<R>, b: &Observable<R>) -> Result<R> {
    if !matches!(c.init.kind, InitialKind::BellProduct) {
        return precondition("the two-body scheme needs the bell_product initial state");
    }
    if a.sites().len() != 1 || b.sites().len() != 1 {
        return input("two-body scheme needs two one-site observables");
    }
    require_traceless(a)?;
    require_traceless(b)?;
    let (i, j, t, l) = (a.sites()[0], b.sites()[0], c.depth(), c.width());
    if i >= j || j >= l {
        return input(format!("need 0 <= i < j < L, got i={i}, j={j}, L={l}"));
    }
    if i < t || j + t >= l {
        return precondition(format!(
            "light cones of (i={i}, j={j}) reach the open boundary at depth {t}; need i >= T and j + T < L"
        ));
    }
    c.require("4-way", default_tol(), |s| s.is_four_way())?;
    let centre = i + t;
    if j - i != 2 * t + 1 || centre % 2 == 1 {
        return Ok(R::zero());
    }
    let mut rho = SiteTensor { d: 4, sites: vec![centre, centre + 1], data: bell_pair_folded() };
    for k in 1..=t {
        let left = c.channel(k, centre - k).expect("left ray slot");
        let right = c.channel(k, centre + k).expect("right ray slot");
        rho.apply_single(0, &flat(transfer(left, Side::Minus).matrix()));
        rho.apply_single(1, &flat(transfer(right, Side::Plus).matrix()));
        if let Some(n) = c.noise_flat(centre - k) {
            rho.apply_single(0, &n);
        }
        if let Some(n) = c.noise_flat(centre + k + 1) {
            rho.apply_single(1, &n);
        }
        rho.sites = vec![centre - k, centre + k + 1];
    }
    let ab = Observable::product(vec![i, j], vec![a.dense(), b.dense()])?;
    Ok(ab.expectation_folded(&rho))
}

/// `(N_a ⊗ N_b) ∘ E`.
fn noisy_after<R: Real>(c: &ChannelCircuit<R>, e: &Superoperator<R>, a: usize, b: usize) -> Superoperator<R> {
    if c.noise.as_ref().is_none_or(|n| n.is_zero()) {
        return e.clone();
    }
    Superoperator::tensor(&c.noise_channel(a), &c.noise_channel(b)).after(e)
}

/// Three-site correlator on the `bell_product` state for `O` on `(i, i+1, i+2)`
/// with `i − T + 1` even: `⟨O| (1⊗E_L) Π_k M+²_k (M_R⊗1) |ρ_Bell⟩`.
pub fn avg_three_site<R: Real>(c: &ChannelCircuit<R>, o: &Observable<R>) -> Result<R> {
    if !matches!(c.init.kind, InitialKind::BellProduct) {
        return precondition("the three-site scheme needs the bell_product initial state");
    }
    if o.sites().len() != 3 || !o.is_contiguous() {
        return input("three-site scheme needs an observable on three consecutive sites");
    }
    if o.identity_component().abs() > R::lit(R::ROUND_TOL) {
        return precondition("observable must be traceless on its support");
    }
    let (i, t, l) = (o.sites()[0], c.depth(), c.width());
    if o.sites()[2] >= l {
        return input("observable extends beyond the chain");
    }
    if t == 0 {
        return Ok(initial_expectation(&c.init, o));
    }
    c.require("3-way right-unital", default_tol(), |s| s.is_right_three_way())?;
    let b = i as isize - t as isize + 1;
    if b < 0 || b % 2 != 0 || (b as usize) + 2 * t + 2 > l {
        return precondition(format!(
            "three-site window at i={i} is incompatible with depth {t} and width {l}; need i-T+1 even and >= 0, and L >= i+T+3"
        ));
    }
    let b = b as usize;
    // band (u, v) as a folded 16-vector
    let mut band: Vec<C<R>> = bell_pair_folded();
    let id1 = Superoperator::<R>::identity(1);
    let first = if b >= 1 { m_r(c.channel(1, b - 1).expect("first-layer slot")) } else { id1.clone() };
    let first = c.noise_channel(b).after(&first);
    let lift = Superoperator::tensor(&first, &id1).folded();
    band = apply_map(&lift, &band);
    for k in 1..t {
        let right = noisy_after(c, c.channel(k, b + k).expect("right slot"), b + k, b + k + 1);
        let left = c.channel(k + 1, b + k - 1).expect("left slot");
        let left = noisy_after(c, left, b + k - 1, b + k);
        band = apply_map(&two_site_transfer(&left, &right), &band);
    }
    let last = noisy_after(c, c.channel(t, b + t).expect("last slot"), b + t, b + t + 1);
    let cap = e_l(&last);
    // (1 ⊗ E_L) on the band: out[(u, o1, o2)] = Σ_v band[(u, v)] E_L[(o1 o2), v]
    let mut out = vec![C::<R>::zero(); 64];
    for u in 0..4 {
        for r in 0..16 {
            out[u * 16 + r] = (0..4).fold(C::zero(), |acc, v| acc + band[u * 4 + v] * cap[(r, v)]);
        }
    }
    let rho = SiteTensor { d: 4, sites: vec![i, i + 1, i + 2], data: out };
    Ok(o.expectation_folded(&rho))
}

/// Contiguous `k`-body correlator (`k ≤ 6`) via the band engine; `k = 3`
/// uses the explicit three-site formula.
pub fn avg_k_body<R: Real>(c: &ChannelCircuit<R>, o: &Observable<R>) -> Result<R> {
    let k = o.sites().len();
    if k > K_BODY_CAP {
        return Err(Error::Unsupported(format!("k-body correlators are capped at k = {K_BODY_CAP}, got {k}")));
    }
    if !o.is_contiguous() {
        return input("k-body observable must sit on consecutive sites");
    }
    if k == 3 {
        return avg_three_site(c, o);
    }
    if o.identity_component().abs() > R::lit(R::ROUND_TOL) {
        return precondition("observable must be traceless on its support");
    }
    c.require("3-way right-unital", default_tol(), |s| s.is_right_three_way())?;
    band_contract(c, o)
}

/// Dispatches to one scheme. `TwoBody` expects a two-site product observable.
pub fn evaluate<R: Real>(c: &ChannelCircuit<R>, scheme: Scheme, o: &Observable<R>) -> Result<R> {
    match scheme {
        Scheme::SingleSite => avg_single_site(c, o),
        Scheme::ThreeSite => avg_three_site(c, o),
        Scheme::KBody => avg_k_body(c, o),
        Scheme::TwoBody => match o.form() {
            ObservableForm::Product(f) if f.len() == 2 => {
                let a = Observable::single(o.sites()[0], f[0].clone())?;
                let b = Observable::single(o.sites()[1], f[1].clone())?;
                avg_two_body(c, &a, &b)
            }
            _ => input("two-body scheme needs a product observable on two sites"),
        },
    }
}

/// Same contraction as the noiseless scheme with the reduced single-site noise
/// channel inserted after each transfer step; the noise model is read from `c`.
pub fn noisy_avg<R: Real>(c: &ChannelCircuit<R>, scheme: Scheme, o: &Observable<R>) -> Result<R> {
    evaluate(c, scheme, o)
}

// ---------------------------------------------------------------------------
// Band engine

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mark {
    Needed,
    Mixed,
    Traced,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Rule {
    Skip,
    Unital,
    EmitRight,
    EmitLeft,
    Plus,
    Minus,
    Full,
}

/// Options in order of preference for a gate's output marks, given its class.
fn options(out: (Mark, Mark), cls: &SpaceTimeClass<f64>) -> Vec<Rule> {
    use Mark::*;
    let tpu = cls.tp && cls.unital;
    match out {
        (Traced, Traced) => vec![Rule::Skip],
        (Mixed, Mixed) => {
            if cls.unital {
                vec![Rule::Unital]
            } else {
                vec![]
            }
        }
        (Mixed, Traced) => {
            if tpu && cls.right_space_unital {
                vec![Rule::EmitRight]
            } else {
                vec![]
            }
        }
        (Traced, Mixed) => {
            if tpu && cls.left_space_unital {
                vec![Rule::EmitLeft]
            } else {
                vec![]
            }
        }
        (Needed, Traced) => {
            let mut v = Vec::new();
            if tpu && cls.right_space_unital {
                v.push(Rule::EmitRight);
            }
            if cls.tp {
                v.push(Rule::Minus);
            }
            v.push(Rule::Full);
            v
        }
        (Traced, Needed) => {
            let mut v = Vec::new();
            if tpu && cls.left_space_unital {
                v.push(Rule::EmitLeft);
            }
            if cls.tp {
                v.push(Rule::Plus);
            }
            v.push(Rule::Full);
            v
        }
        (Needed, Needed) => vec![Rule::Full],
        (Needed, Mixed) | (Mixed, Needed) => vec![],
    }
}

/// Input marks of a rule (the caller fills in origins).
fn inputs(rule: Rule) -> (Mark, Mark) {
    use Mark::*;
    match rule {
        Rule::Skip => (Traced, Traced),
        Rule::Unital => (Mixed, Mixed),
        Rule::EmitRight => (Traced, Mixed),
        Rule::EmitLeft => (Mixed, Traced),
        Rule::Plus => (Needed, Mixed),
        Rule::Minus => (Mixed, Needed),
        Rule::Full => (Needed, Needed),
    }
}

#[derive(Clone, Debug)]
struct Cell {
    mark: Mark,
    /// Gates whose choice relies on this site being maximally mixed.
    origins: Vec<(usize, usize)>,
}

struct Plan {
    /// `marks[t][site]` for `t = 0..=T`.
    marks: Vec<Vec<Mark>>,
    /// Rule per slot, indexed `[layer-1][start]`.
    rules: Vec<Vec<Option<Rule>>>,
}

fn class_f64<R: Real>(e: &Superoperator<R>) -> SpaceTimeClass<f64> {
    let c = classify(e, default_tol());
    SpaceTimeClass {
        tp: c.tp,
        unital: c.unital,
        left_space_unital: c.left_space_unital,
        right_space_unital: c.right_space_unital,
        residuals: c.residuals.map(|x| x.to_f64_lossy()),
    }
}

/// Backward marking with downgrades until every "maximally mixed" assumption
/// is backed by the channel it flows out of (or by the initial state).
fn plan<R: Real>(c: &ChannelCircuit<R>, support: &[usize]) -> Result<Plan> {
    let (l, t) = (c.width(), c.depth());
    let classes: Vec<Vec<Option<SpaceTimeClass<f64>>>> = (1..=t)
        .map(|layer| (0..l).map(|s| c.channel(layer, s).map(class_f64)).collect())
        .collect();
    let mut level = vec![vec![0usize; l]; t];
    let max_rounds = 4 * t * l + 8;
    for _ in 0..max_rounds {
        let mut failed: Vec<(usize, usize)> = Vec::new();
        let mut cells: Vec<Cell> = (0..l)
            .map(|s| Cell { mark: if support.contains(&s) { Mark::Needed } else { Mark::Traced }, origins: vec![] })
            .collect();
        let mut marks = vec![Vec::new(); t + 1];
        marks[t] = cells.iter().map(|x| x.mark).collect();
        let mut rules = vec![vec![None; l]; t];
        for layer in (1..=t).rev() {
            let mut next = cells.clone();
            for s in c.starts(layer).collect::<Vec<_>>() {
                let cls = classes[layer - 1][s].as_ref().expect("slot exists");
                let out = (cells[s].mark, cells[s + 1].mark);
                let opts = options(out, cls);
                let lv = level[layer - 1][s];
                let Some(&rule) = opts.get(lv) else {
                    // cannot honour a mixed-output promise: blame whoever asked for it
                    failed.extend(cells[s].origins.iter().chain(&cells[s + 1].origins));
                    rules[layer - 1][s] = Some(Rule::Full);
                    next[s] = Cell { mark: Mark::Needed, origins: vec![] };
                    next[s + 1] = Cell { mark: Mark::Needed, origins: vec![] };
                    continue;
                };
                rules[layer - 1][s] = Some(rule);
                let (m1, m2) = inputs(rule);
                let inherited: Vec<(usize, usize)> = cells[s].origins.iter().chain(&cells[s + 1].origins).copied().collect();
                let origin_for = |m: Mark| -> Vec<(usize, usize)> {
                    match (m, rule) {
                        (Mark::Mixed, Rule::Unital) => inherited.clone(),
                        (Mark::Mixed, _) => vec![(layer, s)],
                        _ => vec![],
                    }
                };
                next[s] = Cell { mark: m1, origins: origin_for(m1) };
                next[s + 1] = Cell { mark: m2, origins: origin_for(m2) };
            }
            cells = next;
            marks[layer - 1] = cells.iter().map(|x| x.mark).collect();
        }
        // initial state: a mixed site must be half of a Bell pair whose partner is traced
        for s in 0..l {
            if cells[s].mark != Mark::Mixed {
                continue;
            }
            let ok = c.init.bell_partner(s).is_some_and(|p| cells[p].mark == Mark::Traced);
            if !ok {
                failed.extend(cells[s].origins.iter().copied());
            }
        }
        if failed.is_empty() {
            return Ok(Plan { marks, rules });
        }
        failed.sort_unstable();
        failed.dedup();
        for (layer, s) in failed {
            level[layer - 1][s] += 1;
        }
    }
    Err(Error::Solver("band marking did not reach a fixed point".into()))
}

/// Exact averaged expectation value of `o` using only light-cone bands:
/// space-time unitality lets most gates be replaced by transfer maps, the rest
/// are contracted densely. Works for any initial state and channels; fails
/// with a resource error if the band grows beyond [`BAND_WIDTH_CAP`] sites.
pub fn band_contract<R: Real>(c: &ChannelCircuit<R>, o: &Observable<R>) -> Result<R> {
    let (l, t) = (c.width(), c.depth());
    if o.sites().iter().any(|&s| s >= l) {
        return input("observable extends beyond the chain");
    }
    let p = plan(c, o.sites())?;
    let needed_at = |time: usize| -> Vec<usize> { (0..l).filter(|&s| p.marks[time][s] == Mark::Needed).collect() };
    let start = needed_at(0);
    if start.len() > BAND_WIDTH_CAP {
        return Err(Error::Resource(format!("band needs {} sites at t=0 (cap {BAND_WIDTH_CAP})", start.len())));
    }
    let mut rho = c.init.marginal(&start);
    let mixed: Vec<C<R>> = mixed_vector::<R>().iter().map(|x| cr(*x)).collect();
    let trace: Vec<C<R>> = trace_covector::<R>().iter().map(|x| cr(*x)).collect();
    for layer in 1..=t {
        for s in c.starts(layer).collect::<Vec<_>>() {
            let ch = c.channel(layer, s).expect("slot exists");
            let out = (p.marks[layer][s], p.marks[layer][s + 1]);
            match p.rules[layer - 1][s].expect("planned") {
                Rule::Skip | Rule::Unital => {}
                Rule::EmitRight => {
                    if out.0 == Mark::Needed {
                        rho.insert(s, &mixed);
                    }
                }
                Rule::EmitLeft => {
                    if out.1 == Mark::Needed {
                        rho.insert(s + 1, &mixed);
                    }
                }
                Rule::Plus => {
                    let pos = rho.position(s).expect("ray input tracked");
                    rho.apply_single(pos, &flat(transfer(ch, Side::Plus).matrix()));
                    rho.relabel(pos, s + 1);
                }
                Rule::Minus => {
                    let pos = rho.position(s + 1).expect("ray input tracked");
                    rho.apply_single(pos, &flat(transfer(ch, Side::Minus).matrix()));
                    rho.relabel(pos, s);
                }
                Rule::Full => {
                    let pos = rho.position(s).expect("gate input tracked");
                    debug_assert_eq!(rho.position(s + 1), Some(pos + 1));
                    rho.apply_pair(pos, &flat(&ch.folded()));
                }
            }
        }
        if rho.sites.len() > BAND_WIDTH_CAP {
            return Err(Error::Resource(format!("band reached {} sites (cap {BAND_WIDTH_CAP})", rho.sites.len())));
        }
        for pos in 0..rho.sites.len() {
            if let Some(n) = c.noise_flat(rho.sites[pos]) {
                rho.apply_single(pos, &n);
            }
        }
        let mut pos = 0;
        while pos < rho.sites.len() {
            if p.marks[layer][rho.sites[pos]] == Mark::Needed {
                pos += 1;
            } else {
                rho.contract(pos, &trace);
            }
        }
    }
    if rho.sites != o.sites() {
        return Err(Error::Solver("band engine lost track of the observable support".into()));
    }
    Ok(o.expectation_folded(&rho))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::{average_channel, reflection_ensemble, twirl_3way, twirl_4way, Leg};
    use crate::pauli::{unitary_superop, TwoQubitGate};
    use crate::random::{haar_gate, stream_rng};
    use crate::simulator::oracle_expectation;
    use crate::spacetime::depolarizing;

    fn x() -> Mat<f64> {
        pauli(PauliIndex::X)
    }
    fn z() -> Mat<f64> {
        pauli(PauliIndex::Z)
    }

    fn random_circuit(
        t: usize,
        init: InitialState<f64>,
        seed: u64,
        make: impl Fn(&TwoQubitGate<f64>) -> Superoperator<f64>,
    ) -> ChannelCircuit<f64> {
        let mut rng = stream_rng(seed, 77);
        ChannelCircuit::new(t, init, |_| make(&haar_gate(&mut rng))).unwrap()
    }

    /// Traceless Hermitian operator with norm below 1.
    fn random_traceless(d: usize, rng: &mut rand_chacha::ChaCha12Rng) -> Mat<f64> {
        let m = crate::random::haar_unitary::<f64, _>(d, rng);
        let herm: Mat<f64> = (&m + m.adjoint()).map(|z| z * 0.2);
        let shift = herm.trace() / d as f64;
        &herm - Mat::<f64>::identity(d, d).map(|z: C<f64>| z * shift)
    }

    fn three_way(g: &TwoQubitGate<f64>) -> Superoperator<f64> {
        average_channel(&twirl_3way(g, Leg::First))
    }

    fn four_way(g: &TwoQubitGate<f64>) -> Superoperator<f64> {
        average_channel(&reflection_ensemble(g).unwrap())
    }

    #[test]
    fn layer_parity_and_pairs() {
        let c = ChannelCircuit::uniform(2, InitialState::<f64>::bell_product(6).unwrap(), &Superoperator::identity(2)).unwrap();
        assert_eq!(c.starts(1).collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(c.starts(2).collect::<Vec<_>>(), vec![0, 2, 4]);
        assert_eq!(c.pair_of(1, 0), None);
        assert_eq!(c.pair_of(1, 2), Some(1));
        let c = ChannelCircuit::uniform(2, InitialState::<f64>::plus_bell(5).unwrap(), &Superoperator::identity(2)).unwrap();
        assert_eq!(c.starts(1).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(c.starts(2).collect::<Vec<_>>(), vec![1, 3]);
    }

    #[test]
    fn observable_validation() {
        assert!(Observable::single(0, x().map(|z| z * 2.0)).is_err());
        let non_herm = Mat::<f64>::from_row_slice(2, 2, &[C::new(0.0, 0.0), C::new(1.0, 0.0), C::new(0.0, 0.0), C::new(0.0, 0.0)]);
        assert!(Observable::single(0, non_herm).is_err());
        assert!(Observable::product(vec![2, 1], vec![x(), x()]).is_err());
        let o = Observable::joint(3, x().kronecker(&z())).unwrap();
        assert_eq!(o.sites(), &[3, 4]);
    }

    #[test]
    fn noise_validation() {
        assert!(PauliNoiseModel::<f64>::uniform(-0.1, 0.0, 0.0).is_err());
        assert!(PauliNoiseModel::<f64>::uniform(0.5, 0.4, 0.2).is_err());
        assert!(PauliNoiseModel::<f64>::uniform(0.0, 0.0, 0.0).unwrap().is_zero());
    }

    #[test]
    fn swap_circuit_transports_plus_state() {
        let swap = unitary_superop(&TwoQubitGate::<f64>::swap());
        let c = ChannelCircuit::uniform(3, InitialState::plus_bell(8).unwrap(), &swap).unwrap();
        let v = avg_single_site(&c, &Observable::pauli(3, PauliIndex::X)).unwrap();
        assert!((v - 1.0).abs() < 1e-14);
        assert!((oracle_expectation(&c, &Observable::pauli(3, PauliIndex::X)).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(avg_single_site(&c, &Observable::pauli(2, PauliIndex::Z)).unwrap(), 0.0);
    }

    #[test]
    fn single_site_rejects_general_channels() {
        let g = haar_gate::<f64, _>(&mut stream_rng(1, 0));
        let c = ChannelCircuit::uniform(2, InitialState::plus_bell(6).unwrap(), &unitary_superop(&g)).unwrap();
        let err = avg_single_site(&c, &Observable::pauli(2, PauliIndex::X)).unwrap_err();
        assert!(matches!(err, Error::Precondition(ref m) if m.contains("layer 1")), "{err}");
    }

    #[test]
    fn depolarizing_channels_kill_everything() {
        let d = depolarizing::<f64>(2);
        let c = ChannelCircuit::uniform(2, InitialState::bell_product(12).unwrap(), &d).unwrap();
        let a = Observable::pauli(2, PauliIndex::X);
        let b = Observable::pauli(7, PauliIndex::Y);
        assert_eq!(avg_two_body(&c, &a, &b).unwrap().abs(), 0.0);
        let o = Observable::joint(3, x().kronecker(&z()).kronecker(&x())).unwrap();
        assert!(avg_three_site(&c, &o).unwrap().abs() < 1e-16);
    }

    #[test]
    fn single_site_matches_oracle() {
        for seed in 0..5 {
            for t in 1..=3 {
                let c = random_circuit(t, InitialState::plus_bell(2 * t + 2).unwrap(), seed, three_way);
                for site in 0..c.width() {
                    let o = Observable::single(site, x().map(|v| v * 0.6) + z().map(|v| v * 0.8)).unwrap();
                    let Ok(got) = avg_single_site(&c, &o) else {
                        assert!(site + t + 1 >= c.width());
                        continue;
                    };
                    let want = oracle_expectation(&c, &o).unwrap();
                    assert!((got - want).abs() < 1e-12, "seed {seed} t {t} site {site}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn two_body_matches_oracle() {
        for seed in 0..4 {
            for (t, l) in [(1, 6), (1, 8), (2, 10), (3, 14)] {
                let c = random_circuit(t, InitialState::bell_product(l).unwrap(), seed, four_way);
                for i in 0..l {
                    for j in i + 1..l {
                        let a = Observable::single(i, x()).unwrap();
                        let b = Observable::single(j, z()).unwrap();
                        let Ok(got) = avg_two_body(&c, &a, &b) else { continue };
                        let ab = Observable::product(vec![i, j], vec![x(), z()]).unwrap();
                        let want = oracle_expectation(&c, &ab).unwrap();
                        assert!((got - want).abs() < 1e-12, "t {t} l {l} ({i},{j}): {got} vs {want}");
                    }
                }
            }
        }
    }

    #[test]
    fn three_site_matches_oracle() {
        let mut rng = stream_rng(5, 0);
        for seed in 0..4 {
            for (t, l) in [(1, 4), (1, 6), (2, 6), (2, 8), (3, 8)] {
                let c = random_circuit(t, InitialState::bell_product(l).unwrap(), seed, three_way);
                for i in 0..l - 2 {
                    let o = Observable::joint(i, random_traceless(8, &mut rng)).unwrap();
                    let Ok(got) = avg_three_site(&c, &o) else { continue };
                    let want = oracle_expectation(&c, &o).unwrap();
                    assert!((got - want).abs() < 1e-12, "t {t} l {l} i {i}: {got} vs {want}");
                    let engine = band_contract(&c, &o).unwrap();
                    assert!((engine - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn noisy_schemes_match_oracle() {
        let noise = PauliNoiseModel::uniform(0.01, 0.02, 0.005).unwrap();
        let c = random_circuit(2, InitialState::bell_product(10).unwrap(), 3, four_way).with_noise(Some(noise.clone()));
        let a = Observable::single(2, x()).unwrap();
        let b = Observable::single(7, z()).unwrap();
        let ab = Observable::product(vec![2, 7], vec![x(), z()]).unwrap();
        let got = noisy_avg(&c, Scheme::TwoBody, &ab).unwrap();
        assert!((got - avg_two_body(&c, &a, &b).unwrap()).abs() < 1e-15);
        assert!((got - oracle_expectation(&c, &ab).unwrap()).abs() < 1e-12);

        let c = random_circuit(2, InitialState::bell_product(8).unwrap(), 4, three_way).with_noise(Some(noise.clone()));
        let o = Observable::joint(1, x().kronecker(&z()).kronecker(&x())).unwrap();
        assert!((avg_three_site(&c, &o).unwrap() - oracle_expectation(&c, &o).unwrap()).abs() < 1e-12);

        let c = random_circuit(3, InitialState::plus_bell(8).unwrap(), 5, three_way).with_noise(Some(noise));
        let o = Observable::pauli(3, PauliIndex::Y);
        assert!((avg_single_site(&c, &o).unwrap() - oracle_expectation(&c, &o).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn k_body_matches_oracle() {
        for seed in 0..3 {
            for k in [1usize, 2, 4, 5] {
                let c = random_circuit(2, InitialState::bell_product(10).unwrap(), seed, three_way);
                let mut rng = stream_rng(seed, 3);
                for i in 0..=10 - k {
                    let o = Observable::joint(i, random_traceless(1 << k, &mut rng)).unwrap();
                    let got = avg_k_body(&c, &o).unwrap();
                    let want = oracle_expectation(&c, &o).unwrap();
                    assert!((got - want).abs() < 1e-12, "k {k} i {i}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn k_body_caps_support() {
        let c = ChannelCircuit::uniform(1, InitialState::bell_product(8).unwrap(), &Superoperator::identity(2)).unwrap();
        let o = Observable::joint(0, Mat::<f64>::zeros(128, 128)).unwrap();
        assert!(matches!(avg_k_body(&c, &o), Err(Error::Unsupported(_))));
    }

    #[test]
    fn band_engine_agrees_with_single_site_scheme() {
        let c = random_circuit(3, InitialState::plus_bell(8).unwrap(), 9, three_way);
        let o = Observable::pauli(3, PauliIndex::X);
        assert!((band_contract(&c, &o).unwrap() - avg_single_site(&c, &o).unwrap()).abs() < 1e-13);
    }

    #[test]
    fn zero_noise_is_noiseless() {
        let c = random_circuit(1, InitialState::bell_product(8).unwrap(), 2, |g| average_channel(&twirl_4way(g, 0.5).unwrap()));
        let ab = Observable::product(vec![1, 4], vec![x(), z()]).unwrap();
        assert!(noisy_avg(&c, Scheme::TwoBody, &ab).unwrap().abs() > 1e-6);
        let clean = noisy_avg(&c, Scheme::TwoBody, &ab).unwrap();
        let c0 = c.clone().with_noise(Some(PauliNoiseModel::uniform(0.0, 0.0, 0.0).unwrap()));
        assert_eq!(noisy_avg(&c0, Scheme::TwoBody, &ab).unwrap(), clean);
    }
}
