//! Diagonal rescaling supermaps on two-qubit channels.
//!
//! A supermap of this family multiplies every Pauli coefficient of the input
//! channel by a factor `x_{a1 a2, b1 b2}` (inputs `a`, outputs `b`). Its Choi
//! operator `S = Σ x_P σ_Pᵀ ⊗ σ_P` is a sum of commuting terms, so positivity
//! reduces to 256 sign-pattern inequalities, and a positive `x` is exactly a
//! probability distribution over Pauli dressings `σ_δ U σ_γ` of the gate.
//! The optimal 3-way / 4-way searches are therefore linear programs.

pub mod simplex;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::ensembles::{average_channel, DressedGate, GateEnsemble, Member};
use crate::error::{input, Error, Result};
use crate::pauli::{pauli, ptm_to_superop, superop_to_ptm, unitary_superop, PauliIndex, Superoperator, TwoQubitGate};
use crate::random::{haar_gate, stream_rng};
use crate::scalar::{Real, C};
use crate::spacetime::{classify, SpaceTimeLabel};

pub use simplex::{FarkasCertificate, LinearProgram, LpOutcome, LpSolution};

/// Number of entries of `x`.
pub const DIM: usize = 256;

/// Class bit layout: `a1 a2 b1 b2`, a set bit marks a nontrivial Pauli.
pub const IN1_OUT2: usize = 0b1001;
pub const IN2_OUT1: usize = 0b0110;
/// Vanishes for right-space-unital outputs.
pub const IN1_OUT1: usize = 0b1010;
/// Vanishes for left-space-unital outputs.
pub const IN2_OUT2: usize = 0b0101;
/// Classes with nontrivial inputs and identity outputs.
pub const INPUT_ONLY: [usize; 3] = [0b1000, 0b0100, 0b1100];

/// Flat index of `x_{a1 a2, b1 b2}`; also used for dressings `(γ1 γ2, δ1 δ2)`.
pub fn entry_index(a: [PauliIndex; 2], b: [PauliIndex; 2]) -> usize {
    64 * a[0].value() + 16 * a[1].value() + 4 * b[0].value() + b[1].value()
}

/// Inverse of [`entry_index`]: `[a1, a2, b1, b2]`.
pub fn entry_digits(i: usize) -> [PauliIndex; 4] {
    let d = |s: usize| PauliIndex::new(((i >> s) & 3) as u8).expect("two bits");
    [d(6), d(4), d(2), d(0)]
}

pub fn class_of(i: usize) -> usize {
    entry_digits(i).iter().fold(0, |acc, p| 2 * acc + usize::from(!p.is_identity()))
}

pub fn class_members(class: usize) -> Vec<usize> {
    (0..DIM).filter(|&i| class_of(i) == class).collect()
}

fn chi(a: PauliIndex, b: PauliIndex) -> f64 {
    f64::from(a.character(b))
}

/// Rescaling factors of the dressing `σ_post · U · σ_pre`: each coefficient
/// picks up the commutation sign of every leg.
pub fn sign_tensor(pre: [PauliIndex; 2], post: [PauliIndex; 2]) -> Vec<f64> {
    (0..DIM)
        .map(|i| {
            let [a1, a2, b1, b2] = entry_digits(i);
            chi(pre[0], a1) * chi(pre[1], a2) * chi(post[0], b1) * chi(post[1], b2)
        })
        .collect()
}

/// `W[(v, P)] = x^{v}_P` for dressings `v` (rows) and entries `P` (columns).
pub fn character_matrix() -> DMatrix<f64> {
    let mut w = DMatrix::zeros(DIM, DIM);
    for v in 0..DIM {
        let [g1, g2, d1, d2] = entry_digits(v);
        w.set_row(v, &DVector::from_vec(sign_tensor([g1, g2], [d1, d2])).transpose());
    }
    w
}

/// The 256 factors `x_{a1 a2, b1 b2}`, normalized so `x_{11,11} = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct RescalingSupermap<R: Real> {
    x: Vec<R>,
}

impl<R: Real> RescalingSupermap<R> {
    pub fn new(x: Vec<R>) -> Result<Self> {
        if x.len() != DIM {
            return input(format!("supermap needs {DIM} entries, got {}", x.len()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return input("supermap entries must be finite");
        }
        if (x[0] - R::one()).abs() > R::lit(R::ROUND_TOL) {
            return input(format!("x_(11,11) must be 1, got {}", x[0]));
        }
        Ok(Self { x })
    }

    pub fn identity() -> Self {
        Self { x: vec![R::one(); DIM] }
    }

    /// Expands a per-class table indexed by the `a1 a2 b1 b2` flag bits.
    pub fn from_class_table(table: &[R; 16]) -> Result<Self> {
        Self::new((0..DIM).map(|i| table[class_of(i)]).collect())
    }

    pub fn entries(&self) -> &[R] {
        &self.x
    }

    pub fn get(&self, a: [PauliIndex; 2], b: [PauliIndex; 2]) -> R {
        self.x[entry_index(a, b)]
    }

    /// Class means.
    pub fn class_table(&self) -> [R; 16] {
        let mut sum = [R::zero(); 16];
        let mut count = [0u32; 16];
        for (i, &v) in self.x.iter().enumerate() {
            sum[class_of(i)] += v;
            count[class_of(i)] += 1;
        }
        std::array::from_fn(|c| sum[c] / R::lit(f64::from(count[c])))
    }

    /// Largest deviation of an entry from its class mean.
    pub fn class_spread(&self) -> R {
        let t = self.class_table();
        self.x.iter().enumerate().fold(R::zero(), |m, (i, &v)| m.max((v - t[class_of(i)]).abs()))
    }

    /// Averages over relabelings of X, Y, Z on each leg. Such relabelings are
    /// local unitary conjugations of `S`, so positivity and class-symmetric
    /// constraints survive.
    pub fn symmetrized(&self) -> Self {
        let t = self.class_table();
        Self { x: (0..DIM).map(|i| t[class_of(i)]).collect() }
    }

    /// Mask over a two-qubit PTM, rows outputs and columns inputs.
    pub fn ptm_mask(&self) -> DMatrix<R> {
        DMatrix::from_fn(16, 16, |out, inp| self.x[16 * inp + out])
    }

    /// Eigenvalues of `S / 256` in the joint Pauli eigenbasis, i.e. the weights
    /// of the dressing distribution realizing `x`.
    pub fn dressing_weights(&self) -> Vec<R> {
        (0..DIM)
            .map(|v| {
                let [g1, g2, d1, d2] = entry_digits(v);
                let s = sign_tensor([g1, g2], [d1, d2]);
                let total = self.x.iter().zip(&s).fold(R::zero(), |acc, (&x, &w)| acc + x * R::lit(w));
                total / R::lit(DIM as f64)
            })
            .collect()
    }

    /// Space-time label guaranteed for the image of any unitary.
    pub fn promised_label(&self, tol: R) -> SpaceTimeLabel {
        let vanishes = |class: usize| class_members(class).into_iter().all(|i| self.x[i].abs() <= tol);
        match (vanishes(IN2_OUT2), vanishes(IN1_OUT1)) {
            (true, true) => SpaceTimeLabel::FourWay,
            (false, true) => SpaceTimeLabel::ThreeWayRight,
            (true, false) => SpaceTimeLabel::ThreeWayLeft,
            (false, false) => SpaceTimeLabel::General,
        }
    }

    pub fn to_f64(&self) -> RescalingSupermap<f64> {
        RescalingSupermap { x: self.x.iter().map(|v| v.to_f64_lossy()).collect() }
    }

    /// Rescales a solver output so the normalization entry is exactly 1.
    fn normalized(x: Vec<R>) -> Result<Self> {
        if x.len() != DIM || !(x[0] > R::lit(0.5)) {
            return Err(Error::Solver("solver returned an unnormalized supermap".into()));
        }
        let s = x[0];
        Ok(Self { x: x.into_iter().map(|v| v / s).collect() })
    }
}

/// Elementwise action on the PTM of `u`.
pub fn apply_supermap<R: Real>(x: &RescalingSupermap<R>, u: &TwoQubitGate<R>) -> Superoperator<R> {
    let ptm = superop_to_ptm(&unitary_superop(u));
    ptm_to_superop(&ptm.hadamard(&x.ptm_mask()))
}

/// Table with `x = 1` wherever output 1 is trivial: the uniform twirl of
/// output leg 1, which keeps the whole `in1 → out2` block.
pub fn three_way_table() -> [f64; 16] {
    std::array::from_fn(|c| if c & 0b0010 == 0 { 1.0 } else { 0.0 })
}

/// Optimal 4-way family, `λ = 1` keeping `in1 → out2` and `λ = 0` keeping
/// `in2 → out1`. Obtained from the dressing weights `(1−λ)`·pre `(γ,1)` post
/// `(1,δ)` and `λ`·pre `(1,γ)` post `(δ,1)`, each with 1/4 on the bare gate.
pub fn four_way_table(lambda: f64) -> [f64; 16] {
    let l = lambda;
    let mut t = [0.0; 16];
    t[0b0000] = 1.0;
    t[0b0001] = l;
    t[0b0010] = 1.0 - l;
    t[0b0011] = 0.0;
    t[0b0100] = 1.0 - l;
    t[0b0101] = 0.0;
    t[0b0110] = 1.0 - 2.0 * l / 3.0;
    t[0b0111] = l / 3.0;
    t[0b1000] = l;
    t[0b1001] = (1.0 + 2.0 * l) / 3.0;
    t[0b1010] = 0.0;
    t[0b1011] = (1.0 - l) / 3.0;
    t[0b1100] = 0.0;
    t[0b1101] = (1.0 - l) / 3.0;
    t[0b1110] = l / 3.0;
    t[0b1111] = 1.0 / 3.0;
    t
}

/// Signed permutation `O e_i = phase[i] e_{perm[i]}`.
#[derive(Clone, Debug)]
struct Monomial {
    perm: Vec<usize>,
    phase: Vec<C<f64>>,
}

impl Monomial {
    fn from_dense(m: &DMatrix<C<f64>>) -> Result<Self> {
        let n = m.nrows();
        let mut perm = vec![0; n];
        let mut phase = vec![C::new(0.0, 0.0); n];
        for j in 0..n {
            let nz: Vec<usize> = (0..n).filter(|&i| m[(i, j)].norm() > 1e-14).collect();
            if nz.len() != 1 {
                return Err(Error::Solver("expansion operator is not monomial".into()));
            }
            perm[j] = nz[0];
            phase[j] = m[(nz[0], j)];
        }
        Ok(Self { perm, phase })
    }

    fn kron(&self, other: &Self) -> Self {
        let n = other.perm.len();
        let mut perm = Vec::with_capacity(self.perm.len() * n);
        let mut phase = Vec::with_capacity(self.perm.len() * n);
        for (j, &pj) in self.perm.iter().enumerate() {
            for (k, &pk) in other.perm.iter().enumerate() {
                perm.push(pj * n + pk);
                phase.push(self.phase[j] * other.phase[k]);
            }
        }
        Self { perm, phase }
    }

    /// `(self · other)` as a monomial.
    fn compose(&self, other: &Self) -> Self {
        let perm = other.perm.iter().map(|&p| self.perm[p]).collect();
        let phase = other.perm.iter().zip(&other.phase).map(|(&p, &f)| self.phase[p] * f).collect();
        Self { perm, phase }
    }

    fn distance(&self, other: &Self) -> f64 {
        (0..self.perm.len())
            .map(|j| {
                if self.perm[j] == other.perm[j] {
                    (self.phase[j] - other.phase[j]).norm()
                } else {
                    self.phase[j].norm() + other.phase[j].norm()
                }
            })
            .fold(0.0, f64::max)
    }

    fn expectation(&self, v: &DVector<C<f64>>) -> C<f64> {
        (0..v.len()).map(|j| v[self.perm[j]].conj() * self.phase[j] * v[j]).sum()
    }
}

/// The operators `σ_Pᵀ ⊗ σ_P` of the expansion of `S`, built numerically from
/// the Pauli matrices with the four legs as tensor factors.
fn expansion_operators() -> Result<Vec<Monomial>> {
    let legs = PauliIndex::ALL
        .iter()
        .map(|&p| {
            let s = pauli::<f64>(p);
            Monomial::from_dense(&s.transpose().kronecker(&s))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..DIM)
        .map(|i| {
            let d = entry_digits(i);
            legs[d[0].value()].kron(&legs[d[1].value()]).kron(&legs[d[2].value()]).kron(&legs[d[3].value()])
        })
        .collect())
}

/// Largest entry of `[O_P, O_Q]` over all pairs of expansion operators.
pub fn commutation_residual() -> Result<f64> {
    let ops = expansion_operators()?;
    let mut worst: f64 = 0.0;
    for p in 0..DIM {
        for q in p + 1..DIM {
            worst = worst.max(ops[p].compose(&ops[q]).distance(&ops[q].compose(&ops[p])));
        }
    }
    Ok(worst)
}

/// Spectrum of the assembled `S / 256` as a dense 256×256 Hermitian matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PositivityCertificate {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub trace: f64,
}

impl PositivityCertificate {
    pub fn is_positive(&self, tol: f64) -> bool {
        self.min_eigenvalue >= -tol
    }
}

pub fn certify(x: &RescalingSupermap<f64>) -> Result<PositivityCertificate> {
    let ops = expansion_operators()?;
    let mut s = DMatrix::<C<f64>>::zeros(DIM, DIM);
    for (xp, op) in x.entries().iter().zip(&ops) {
        if *xp == 0.0 {
            continue;
        }
        for j in 0..DIM {
            s[(op.perm[j], j)] += op.phase[j] * (*xp / DIM as f64);
        }
    }
    let trace = (0..DIM).map(|i| s[(i, i)].re).sum();
    let ev = s.symmetric_eigen().eigenvalues;
    Ok(PositivityCertificate { min_eigenvalue: ev.min(), max_eigenvalue: ev.max(), trace })
}

/// How the sign patterns of the joint eigenbasis are obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Route {
    /// From Pauli (anti)commutation.
    Analytic,
    /// From a dense eigendecomposition of a random combination of the
    /// expansion operators.
    Numerical,
}

/// Joint eigenbasis signs computed by diagonalizing `Σ r_P O_P`.
fn numerical_character_matrix(seed: u64) -> Result<DMatrix<f64>> {
    let ops = expansion_operators()?;
    for attempt in 0..8 {
        let mut rng = stream_rng(seed, attempt);
        let mut h = DMatrix::<C<f64>>::zeros(DIM, DIM);
        for op in &ops {
            let r: f64 = rng.random_range(-1.0..1.0);
            for j in 0..DIM {
                h[(op.perm[j], j)] += op.phase[j] * r;
            }
        }
        let eig = h.symmetric_eigen();
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        if ev.windows(2).any(|w| w[1] - w[0] < 1e-6) {
            continue;
        }
        let mut w = DMatrix::zeros(DIM, DIM);
        for v in 0..DIM {
            let vec = eig.eigenvectors.column(v).into_owned();
            for (p, op) in ops.iter().enumerate() {
                w[(v, p)] = op.expectation(&vec).re;
            }
        }
        return Ok(w);
    }
    Err(Error::Solver("random combination kept a degenerate spectrum".into()))
}

fn characters(route: Route) -> Result<DMatrix<f64>> {
    match route {
        Route::Analytic => Ok(character_matrix()),
        Route::Numerical => numerical_character_matrix(0x5eed),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SdpMode {
    /// Right-space-unital outputs, maximizing the `in1 → out2` block.
    ThreeWay,
    /// Both spatial conditions, maximizing the sum of both transfer blocks.
    FourWay,
}

/// Selection among optimal solutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TieBreak {
    /// Three-way: maximize the input-only classes. Four-way: same as `KeepRight`.
    Default,
    /// Maximize `in1 → out2` on the optimal face.
    KeepRight,
    /// Maximize `in2 → out1` on the optimal face.
    KeepLeft,
    /// Require equal transfer blocks.
    Balanced,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SdpOptions {
    pub mode: SdpMode,
    pub tie_break: TieBreak,
    /// Additionally demand both transfer blocks equal 1.
    pub force_unit_transfer: bool,
    pub route: Route,
}

impl SdpOptions {
    pub fn new(mode: SdpMode) -> Self {
        Self { mode, tie_break: TieBreak::Default, force_unit_transfer: false, route: Route::Analytic }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdpSolution {
    pub optimum: f64,
    /// Vertex returned by the simplex.
    pub raw: RescalingSupermap<f64>,
    /// Class-symmetrized solution.
    pub x: RescalingSupermap<f64>,
    pub certificate: PositivityCertificate,
    pub route: Route,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SdpOutcome {
    Optimal(SdpSolution),
    Infeasible(FarkasCertificate),
}

/// Linear functional on `x`, as `(entry, coefficient)` pairs.
type Functional = Vec<(usize, f64)>;

fn rep(class: usize) -> usize {
    class_members(class)[0]
}

fn zero_rows(class: usize) -> Vec<(Functional, f64)> {
    class_members(class).into_iter().map(|i| (vec![(i, 1.0)], 0.0)).collect()
}

fn uniform_rows(class: usize) -> Vec<(Functional, f64)> {
    let m = class_members(class);
    m[1..].iter().map(|&i| (vec![(i, 1.0), (m[0], -1.0)], 0.0)).collect()
}

/// LP in the dressing weights `q ≥ 0`, with `x = Wᵀ q`.
fn lp_in_weights(w: &DMatrix<f64>, rows: &[(Functional, f64)], objective: &Functional) -> Result<LinearProgram> {
    let lift = |f: &Functional| DVector::from_fn(DIM, |v, _| f.iter().map(|&(p, c)| c * w[(v, p)]).sum::<f64>());
    let mut a = DMatrix::zeros(rows.len(), DIM);
    for (r, (f, _)) in rows.iter().enumerate() {
        a.set_row(r, &lift(f).transpose());
    }
    let b = DVector::from_iterator(rows.len(), rows.iter().map(|(_, v)| *v));
    LinearProgram::new(a, b, -lift(objective))
}

/// Maximizes the transfer blocks over positive diagonal supermaps with the
/// requested spatial conditions, `x_{11,11} = 1`, and uniform transfer blocks.
pub fn solve_sdp(mode: SdpMode) -> Result<SdpOutcome> {
    solve_sdp_with(&SdpOptions::new(mode))
}

pub fn solve_sdp_with(opts: &SdpOptions) -> Result<SdpOutcome> {
    let w = characters(opts.route)?;
    let mut rows: Vec<(Functional, f64)> = vec![(vec![(0, 1.0)], 1.0)];
    rows.extend(zero_rows(IN1_OUT1));
    rows.extend(uniform_rows(IN1_OUT2));
    let mut objective: Functional = vec![(rep(IN1_OUT2), 1.0)];
    if opts.mode == SdpMode::FourWay {
        rows.extend(zero_rows(IN2_OUT2));
        rows.extend(uniform_rows(IN2_OUT1));
        objective.push((rep(IN2_OUT1), 1.0));
    }
    if opts.force_unit_transfer {
        rows.push((vec![(rep(IN1_OUT2), 1.0)], 1.0));
        if opts.mode == SdpMode::FourWay {
            rows.push((vec![(rep(IN2_OUT1), 1.0)], 1.0));
        }
    }
    if opts.tie_break == TieBreak::Balanced && opts.mode == SdpMode::FourWay {
        rows.push((vec![(rep(IN1_OUT2), 1.0), (rep(IN2_OUT1), -1.0)], 0.0));
    }

    let q = match lp_in_weights(&w, &rows, &objective)?.solve()? {
        LpOutcome::Infeasible(cert) => return Ok(SdpOutcome::Infeasible(cert)),
        LpOutcome::Unbounded => return Err(Error::Solver("supermap LP reported unbounded".into())),
        LpOutcome::Optimal(s) => s.x,
    };
    let optimum = objective.iter().map(|&(p, c)| c * w.column(p).dot(&q)).sum::<f64>();

    let secondary: Option<Functional> = match (opts.mode, opts.tie_break) {
        (SdpMode::ThreeWay, _) => {
            Some(INPUT_ONLY.iter().flat_map(|&c| class_members(c)).map(|i| (i, 1.0)).collect())
        }
        (SdpMode::FourWay, TieBreak::Default | TieBreak::KeepRight) => Some(vec![(rep(IN1_OUT2), 1.0)]),
        (SdpMode::FourWay, TieBreak::KeepLeft) => Some(vec![(rep(IN2_OUT1), 1.0)]),
        (SdpMode::FourWay, TieBreak::Balanced) => None,
    };
    let q = match secondary {
        None => q,
        Some(sec) => {
            rows.push((objective.clone(), optimum));
            match lp_in_weights(&w, &rows, &sec)?.solve()? {
                LpOutcome::Optimal(s) => s.x,
                _ => return Err(Error::Solver("tie-break LP lost the optimal face".into())),
            }
        }
    };

    let raw = RescalingSupermap::normalized((w.transpose() * &q).iter().copied().collect())?;
    let x = raw.symmetrized();
    let certificate = certify(&x)?;
    if !certificate.is_positive(1e-8) {
        return Err(Error::Solver(format!(
            "optimal supermap failed the eigenvalue check (min {:e})",
            certificate.min_eigenvalue
        )));
    }
    Ok(SdpOutcome::Optimal(SdpSolution { optimum, raw, x, certificate, route: opts.route }))
}

/// Probability distribution over dressings `σ_δ U σ_γ`, indexed like [`entry_index`]
/// with `γ` in place of the inputs and `δ` of the outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct PauliDressingDistribution {
    weights: Vec<f64>,
}

impl PauliDressingDistribution {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, pre: [PauliIndex; 2], post: [PauliIndex; 2]) -> f64 {
        self.weights[entry_index(pre, post)]
    }

    /// Dressings with weight above `tol`.
    pub fn support(&self, tol: f64) -> Vec<(f64, [PauliIndex; 2], [PauliIndex; 2])> {
        (0..DIM)
            .filter(|&v| self.weights[v] > tol)
            .map(|v| {
                let [g1, g2, d1, d2] = entry_digits(v);
                (self.weights[v], [g1, g2], [d1, d2])
            })
            .collect()
    }

    /// Realized factors `Σ p(γ,δ) x^{γδ}`.
    pub fn supermap(&self) -> Vec<f64> {
        let mut x = vec![0.0; DIM];
        for (p, pre, post) in self.support(0.0) {
            for (xi, s) in x.iter_mut().zip(sign_tensor(pre, post)) {
                *xi += p * s;
            }
        }
        x
    }

    pub fn ensemble<R: Real>(&self, u: &TwoQubitGate<R>) -> Result<GateEnsemble<R>> {
        let support = self.support(1e-12);
        let total: f64 = support.iter().map(|s| s.0).sum();
        GateEnsemble::new(
            support
                .into_iter()
                .map(|(p, pre, post)| {
                    (R::lit(p / total), Member::Dressed(DressedGate { pre, gate: u.clone(), post }))
                })
                .collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Decomposition {
    Realizable(PauliDressingDistribution),
    Infeasible(FarkasCertificate),
}

/// Finds `p ≥ 0`, `Σp = 1`, with `Σ p(γ,δ) x^{γδ} = x_target`, or a Farkas
/// certificate `y` with `Σ_P y_P x^{γδ}_P ≥ 0` for every dressing and `y·x < 0`.
pub fn lp_decompose(x: &RescalingSupermap<f64>) -> Result<Decomposition> {
    let w = character_matrix();
    let b = DVector::from_column_slice(x.entries());
    let lp = LinearProgram::new(w.transpose(), b, DVector::zeros(DIM))?;
    match lp.solve()? {
        LpOutcome::Optimal(s) => {
            let mut weights: Vec<f64> = s.x.iter().map(|&p| if p < 1e-13 { 0.0 } else { p }).collect();
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|p| *p /= total);
            Ok(Decomposition::Realizable(PauliDressingDistribution { weights }))
        }
        LpOutcome::Infeasible(cert) => Ok(Decomposition::Infeasible(cert)),
        LpOutcome::Unbounded => Err(Error::Solver("feasibility LP cannot be unbounded".into())),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerificationReport {
    pub samples: usize,
    pub promised: SpaceTimeLabel,
    /// Every sampled average carried the promised label.
    pub confirmed: bool,
    /// Max Frobenius distance between the ensemble average and `x ⊙ PTM(U)`.
    pub max_ptm_residual: f64,
    /// Max classification residual among the conditions the label promises.
    pub max_class_residual: f64,
    pub distribution: PauliDressingDistribution,
}

/// Realizes `x` as a dressing ensemble and checks it on Haar-random gates.
pub fn verify_supermap(x: &RescalingSupermap<f64>, n_samples: usize, seed: u64) -> Result<VerificationReport> {
    let distribution = match lp_decompose(x)? {
        Decomposition::Realizable(d) => d,
        Decomposition::Infeasible(_) => {
            return Err(Error::Precondition("supermap has no Pauli-dressing realization".into()))
        }
    };
    let promised = x.promised_label(1e-12);
    let mut confirmed = true;
    let (mut ptm_res, mut class_res) = (0.0f64, 0.0f64);
    for s in 0..n_samples {
        let u: TwoQubitGate<f64> = haar_gate(&mut stream_rng(seed, s as u64));
        let avg = average_channel(&distribution.ensemble(&u)?);
        let expected = apply_supermap(x, &u);
        ptm_res = ptm_res.max((avg.matrix() - expected.matrix()).norm());
        let class = classify(&avg, 1e-10);
        confirmed &= class.label() == promised;
        let r = class.residuals;
        let relevant = match promised {
            SpaceTimeLabel::FourWay => r[0].max(r[1]).max(r[2]).max(r[3]),
            SpaceTimeLabel::ThreeWayRight => r[0].max(r[1]).max(r[3]),
            SpaceTimeLabel::ThreeWayLeft => r[0].max(r[1]).max(r[2]),
            SpaceTimeLabel::General => r[0].max(r[1]),
        };
        class_res = class_res.max(relevant);
    }
    Ok(VerificationReport {
        samples: n_samples,
        promised,
        confirmed,
        max_ptm_residual: ptm_res,
        max_class_residual: class_res,
        distribution,
    })
}
