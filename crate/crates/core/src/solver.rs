//! The nonlinear construction: Fourier states, `k`-convolutions, the residual
//! `F`, its linearization, the frequency (Q) equations and the multiscale
//! Newton loop on the complement of the resonant set.

use std::collections::BTreeMap;
use std::path::Path;

use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{index_region, resonant_sites, sup_norm, Region, Sign, Site};
use crate::linalg::{LinearSolver, C64, DENSE_LIMIT};
use crate::linop::{assemble_h, ShortRangeOperator};
use crate::potential::{base_frequencies, ModelParams};

/// Coefficients over `k` at a fixed `n` and layer.
pub type KMap = BTreeMap<Vec<i64>, C64>;

/// Supports at or above this many modes are convolved through the FFT.
pub const FFT_THRESHOLD: usize = 256;

/// A finitely supported pair `(u_hat, v_hat)`; `v_hat(k,n)` is stored at
/// `(k, n, -)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierState {
    pub b: usize,
    pub d: usize,
    coeffs: BTreeMap<Site, C64>,
    pub support_radius: i64,
    /// Set by `symmetrize`; cleared by any write.
    pub symmetric: bool,
}

#[derive(Serialize, Deserialize)]
struct CoeffRecord {
    k: Vec<i64>,
    n: Vec<i64>,
    xi: Sign,
    re: f64,
    im: f64,
}

#[derive(Serialize, Deserialize)]
struct StateRecord {
    b: usize,
    d: usize,
    support_radius: i64,
    symmetric: bool,
    coeffs: Vec<CoeffRecord>,
}

impl Serialize for FourierState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        StateRecord {
            b: self.b,
            d: self.d,
            support_radius: self.support_radius,
            symmetric: self.symmetric,
            coeffs: self
                .coeffs
                .iter()
                .map(|(site, v)| CoeffRecord {
                    k: site.k.clone(),
                    n: site.n.clone(),
                    xi: site.xi,
                    re: v.re,
                    im: v.im,
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FourierState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = StateRecord::deserialize(d)?;
        let mut st = FourierState::new(r.b, r.d);
        for c in r.coeffs {
            if c.k.len() != r.b || c.n.len() != r.d {
                return Err(serde::de::Error::custom("coefficient dimension mismatch"));
            }
            st.set(Site::new(c.k, c.n, c.xi), C64::new(c.re, c.im));
        }
        st.support_radius = r.support_radius;
        st.symmetric = r.symmetric;
        Ok(st)
    }
}

impl FourierState {
    pub fn new(b: usize, d: usize) -> Self {
        FourierState {
            b,
            d,
            coeffs: BTreeMap::new(),
            support_radius: 1,
            symmetric: true,
        }
    }

    pub fn get(&self, site: &Site) -> C64 {
        self.coeffs.get(site).copied().unwrap_or_default()
    }

    /// Store `v`; exact zeros are removed from the support.
    pub fn set(&mut self, site: Site, v: C64) {
        self.symmetric = false;
        if v == C64::default() {
            self.coeffs.remove(&site);
            return;
        }
        self.support_radius = self.support_radius.max(site.norm());
        self.coeffs.insert(site, v);
    }

    pub fn coeffs(&self) -> &BTreeMap<Site, C64> {
        &self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// `(u_hat(., n), v_hat(., n))` for every `n` in the support.
    pub fn layers(&self) -> BTreeMap<Vec<i64>, (KMap, KMap)> {
        let mut out: BTreeMap<Vec<i64>, (KMap, KMap)> = BTreeMap::new();
        for (s, v) in &self.coeffs {
            let e = out.entry(s.n.clone()).or_default();
            match s.xi {
                Sign::Plus => e.0.insert(s.k.clone(), *v),
                Sign::Minus => e.1.insert(s.k.clone(), *v),
            };
        }
        out
    }

    /// `max |v_hat(k,n) - conj(u_hat(-k,n))|`.
    pub fn conjugacy_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for (s, v) in &self.coeffs {
            let partner = Site::new(neg(&s.k), s.n.clone(), s.xi.flip());
            worst = worst.max((v - self.get(&partner).conj()).norm());
        }
        worst
    }

    /// `max |coefficient|` outside the box `|(k,n)| <= r`.
    pub fn sup_outside(&self, r: i64) -> f64 {
        self.coeffs
            .iter()
            .filter(|(s, _)| s.norm() > r)
            .map(|(_, v)| v.norm())
            .fold(0.0, f64::max)
    }
}

fn neg(k: &[i64]) -> Vec<i64> {
    k.iter().map(|x| -x).collect()
}

fn unit(b: usize, l: usize, s: i64) -> Vec<i64> {
    let mut e = vec![0; b];
    e[l] = s;
    e
}

/// `a_l` at `(e_l, n_l, +)` and at `(-e_l, n_l, -)`.
pub fn initial_state(params: &ModelParams) -> FourierState {
    let b = params.b();
    let mut st = FourierState::new(b, params.d());
    for (l, n) in params.sites.iter().enumerate() {
        st.set(Site::new(unit(b, l, 1), n.clone(), Sign::Plus), C64::new(params.a[l], 0.0));
        st.set(Site::new(unit(b, l, -1), n.clone(), Sign::Minus), C64::new(params.a[l], 0.0));
    }
    st.support_radius = params.sites.iter().map(|n| sup_norm(n)).max().unwrap_or(0).max(1);
    st.symmetric = true;
    st
}

/// Convolution over `k`.
pub fn convolve(a: &KMap, b: &KMap) -> KMap {
    if a.is_empty() || b.is_empty() {
        return KMap::new();
    }
    if a.len().max(b.len()) < FFT_THRESHOLD {
        convolve_direct(a, b)
    } else {
        convolve_fft(a, b)
    }
}

pub fn convolve_direct(a: &KMap, b: &KMap) -> KMap {
    let mut out = KMap::new();
    for (ka, va) in a {
        for (kb, vb) in b {
            let k: Vec<i64> = ka.iter().zip(kb).map(|(x, y)| x + y).collect();
            *out.entry(k).or_default() += va * vb;
        }
    }
    out.retain(|_, v| *v != C64::default());
    out
}

fn bounds(m: &KMap) -> (Vec<i64>, Vec<i64>) {
    let dim = m.keys().next().map_or(0, Vec::len);
    let mut lo = vec![i64::MAX; dim];
    let mut hi = vec![i64::MIN; dim];
    for k in m.keys() {
        for j in 0..dim {
            lo[j] = lo[j].min(k[j]);
            hi[j] = hi[j].max(k[j]);
        }
    }
    (lo, hi)
}

/// Multi-dimensional linear convolution flattened onto one axis: each
/// coordinate is padded to the full output extent so indices never carry.
pub fn convolve_fft(a: &KMap, b: &KMap) -> KMap {
    let (alo, ahi) = bounds(a);
    let (blo, bhi) = bounds(b);
    let dim = alo.len();
    let ext: Vec<usize> = (0..dim).map(|j| ((ahi[j] - alo[j]) + (bhi[j] - blo[j]) + 1) as usize).collect();
    let total: usize = ext.iter().product();
    let flat = |k: &[i64], lo: &[i64]| {
        let mut idx = 0usize;
        let mut stride = 1usize;
        for j in 0..dim {
            idx += (k[j] - lo[j]) as usize * stride;
            stride *= ext[j];
        }
        idx
    };
    let mut fa = vec![C64::default(); total];
    let mut fb = vec![C64::default(); total];
    for (k, v) in a {
        fa[flat(k, &alo)] = *v;
    }
    for (k, v) in b {
        fb[flat(k, &blo)] = *v;
    }
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(total);
    let inv = planner.plan_fft_inverse(total);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    let scale = 1.0 / total as f64;
    let mut out = KMap::new();
    for (idx, v) in fa.into_iter().enumerate() {
        let mut rem = idx;
        let mut k = Vec::with_capacity(dim);
        for j in 0..dim {
            k.push((rem % ext[j]) as i64 + alo[j] + blo[j]);
            rem /= ext[j];
        }
        out.insert(k, v * scale);
    }
    out
}

fn delta0(b: usize) -> KMap {
    let mut m = KMap::new();
    m.insert(vec![0; b], C64::new(1.0, 0.0));
    m
}

/// `w^{*p}` with `w^{*0} = delta_0`.
pub fn convolution_power(w: &KMap, p: u32, b: usize) -> KMap {
    let mut out = delta0(b);
    for _ in 0..p {
        out = convolve(&out, w);
    }
    out
}

fn scale(m: &KMap, s: f64) -> KMap {
    m.iter().map(|(k, v)| (k.clone(), v * s)).collect()
}

/// `(u*v)^{*p} * u` on the `+` layer and `(u*v)^{*p} * v` on the `-` layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Nonlinearity {
    pub values: BTreeMap<Site, C64>,
    /// Sum of `|value|` over modes dropped beyond the `k` cap.
    pub tail_mass: f64,
    pub truncated: bool,
}

pub fn convolution_nonlinearity(state: &FourierState, p: u32, k_cap: Option<i64>) -> Nonlinearity {
    let mut values = BTreeMap::new();
    let mut tail = 0.0;
    let mut truncated = false;
    for (n, (u, v)) in state.layers() {
        if u.is_empty() && v.is_empty() {
            continue;
        }
        let wp = convolution_power(&convolve(&u, &v), p, state.b);
        for (xi, layer) in [(Sign::Plus, convolve(&wp, &u)), (Sign::Minus, convolve(&wp, &v))] {
            for (k, val) in layer {
                if k_cap.is_some_and(|c| sup_norm(&k) > c) {
                    tail += val.norm();
                    truncated = true;
                } else {
                    values.insert(Site::new(k, n.clone(), xi), val);
                }
            }
        }
    }
    Nonlinearity {
        values,
        tail_mass: tail,
        truncated,
    }
}

/// `F` on its natural support.
#[derive(Clone, Debug, PartialEq)]
pub struct Residual {
    pub values: BTreeMap<Site, C64>,
    /// `delta` times the nonlinear mass dropped beyond the `k` cap.
    pub tail_mass: f64,
}

impl Residual {
    pub fn get(&self, s: &Site) -> C64 {
        self.values.get(s).copied().unwrap_or_default()
    }

    /// Sup norm including the truncation tail.
    pub fn sup(&self) -> f64 {
        self.values.values().map(|v| v.norm()).fold(0.0, f64::max) + self.tail_mass
    }

    pub fn sup_on(&self, sites: &[Site]) -> f64 {
        sites.iter().map(|s| self.get(s).norm()).fold(0.0, f64::max)
    }
}

fn dot(k: &[i64], w: &[f64]) -> f64 {
    k.iter().zip(w).map(|(a, b)| *a as f64 * b).sum()
}

pub fn evaluate_f(state: &FourierState, omega: &[f64], params: &ModelParams) -> Result<Residual> {
    evaluate_f_capped(state, omega, params, None)
}

/// `F_+(k,n) = (-k.omega + mu_n) u + eps (Delta u) + delta [(u*v)^p * u]`,
/// mirrored on the `-` layer, evaluated on the state support, one Laplacian
/// halo and the nonlinear support.
pub fn evaluate_f_capped(state: &FourierState, omega: &[f64], params: &ModelParams, k_cap: Option<i64>) -> Result<Residual> {
    if omega.len() != state.b {
        return Err(Error::DimensionMismatch {
            expected: state.b,
            got: omega.len(),
        });
    }
    let mut values: BTreeMap<Site, C64> = BTreeMap::new();
    let mut mus: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
    for (s, v) in state.coeffs() {
        let mu = *mus.entry(s.n.clone()).or_insert_with(|| params.mu(&s.n));
        let kw = dot(&s.k, omega);
        let diag = match s.xi {
            Sign::Plus => -kw + mu,
            Sign::Minus => kw + mu,
        };
        *values.entry(s.clone()).or_default() += v * diag;
        if params.epsilon != 0.0 {
            for j in 0..state.d {
                for step in [-1, 1] {
                    let mut nb = s.clone();
                    nb.n[j] += step;
                    *values.entry(nb).or_default() += v * params.epsilon;
                }
            }
        }
    }
    let mut tail_mass = 0.0;
    if params.delta != 0.0 {
        let nl = convolution_nonlinearity(state, params.p, k_cap);
        for (s, v) in nl.values {
            *values.entry(s).or_default() += v * params.delta;
        }
        tail_mass = nl.tail_mass * params.delta;
    }
    Ok(Residual { values, tail_mass })
}

/// The Töplitz kernel of `T_u`: `(p+1)(u*v)^{*p}` on the diagonal blocks,
/// `p (u*v)^{*(p-1)} * u * u` in `(+,-)` and `p (u*v)^{*(p-1)} * v * v`
/// in `(-,+)`.
pub fn linearization_kernel(state: &FourierState, p: u32) -> ShortRangeOperator {
    let mut t = ShortRangeOperator::new(0.0, 0.0);
    let pf = p as f64;
    for (n, (u, v)) in state.layers() {
        let w = convolve(&u, &v);
        let wpm1 = convolution_power(&w, p - 1, state.b);
        let wp = convolve(&wpm1, &w);
        for (dk, val) in scale(&wp, pf + 1.0) {
            t.insert(dk.clone(), n.clone(), Sign::Plus, Sign::Plus, val);
            t.insert(dk, n.clone(), Sign::Minus, Sign::Minus, val);
        }
        for (dk, val) in scale(&convolve(&convolve(&wpm1, &u), &u), pf) {
            t.insert(dk, n.clone(), Sign::Plus, Sign::Minus, val);
        }
        for (dk, val) in scale(&convolve(&convolve(&wpm1, &v), &v), pf) {
            t.insert(dk, n.clone(), Sign::Minus, Sign::Plus, val);
        }
    }
    t
}

/// One Newton correction `-H_N(u)^{-1} F(u)` on `Lambda_N` minus the
/// resonant set. Returns the updated state and `sup |correction|`.
pub fn newton_step(
    state: &FourierState,
    omega: &[f64],
    params: &ModelParams,
    n_size: i64,
    exclude: Option<&[Site]>,
) -> Result<(FourierState, f64)> {
    let s_default = resonant_sites(&params.sites);
    let exclude = exclude.unwrap_or(&s_default);
    let region = Region::cube(&vec![0; state.b + state.d], n_size)?;
    let indexing = index_region(&region, state.b, Some(exclude))?;
    let f = evaluate_f(state, omega, params)?;
    let rhs: Vec<C64> = indexing.sites().iter().map(|s| -f.get(s)).collect();
    if rhs.iter().all(|v| *v == C64::default()) {
        return Ok((state.clone(), 0.0));
    }
    let kernel = linearization_kernel(state, params.p);
    let op = assemble_h(params, omega, &indexing, 0.0, Some(&kernel))?;
    let n = op.dim();
    let solver = if n <= DENSE_LIMIT {
        LinearSolver::dense(&op.dense())?
    } else {
        LinearSolver::sparse(n, op.entries())?
    };
    let delta = solver.solve(&rhs);
    let mut hx = vec![C64::default(); n];
    for &(i, j, v) in op.entries() {
        hx[i] += v * delta[j];
    }
    let scale = rhs.iter().chain(&delta).map(|v| v.norm()).fold(1.0, f64::max);
    let res = hx.iter().zip(&rhs).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    if !delta.iter().all(|v| v.re.is_finite() && v.im.is_finite()) || res > 1e-8 * scale {
        let diag = op.diagonal();
        let worst = (0..n).min_by(|&a, &b| diag[a].norm().total_cmp(&diag[b].norm()));
        return Err(Error::Singular {
            smallest_singular_value: solver.smallest_singular_value(),
            most_resonant: worst.map(|i| indexing.site(i).clone()),
        });
    }
    let mut next = state.clone();
    let mut norm = 0.0f64;
    for (i, s) in indexing.sites().iter().enumerate() {
        if delta[i] != C64::default() {
            norm = norm.max(delta[i].norm());
            next.set(s.clone(), state.get(s) + delta[i]);
        }
    }
    Ok((next, norm))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QSolution {
    pub omega: Vec<f64>,
    /// `max |Im(...)| / a_l`: the part of the resonant rows a real frequency
    /// cannot absorb.
    pub imag_defect: f64,
    pub iterations: usize,
}

pub const Q_TOL: f64 = 1e-13;
pub const Q_CAP: usize = 200;

/// Fixed point of
/// `omega_l = omega0_l + (eps (Delta u)(e_l,n_l) + delta [(u*v)^p*u](e_l,n_l)) / a_l`.
pub fn solve_q(state: &FourierState, params: &ModelParams, omega_guess: &[f64]) -> Result<QSolution> {
    let b = params.b();
    if omega_guess.len() != b {
        return Err(Error::DimensionMismatch {
            expected: b,
            got: omega_guess.len(),
        });
    }
    if params.a.iter().any(|a| *a == 0.0) {
        return Err(Error::Validation("amplitudes must be nonzero".into()));
    }
    let omega0 = base_frequencies(params)?;
    let layers = state.layers();
    let mut shift = vec![C64::default(); b];
    for (l, nl) in params.sites.iter().enumerate() {
        let e = unit(b, l, 1);
        let mut lap = C64::default();
        for j in 0..params.d() {
            for step in [-1, 1] {
                let mut nb = nl.clone();
                nb[j] += step;
                lap += state.get(&Site::new(e.clone(), nb, Sign::Plus));
            }
        }
        let mut nonlin = C64::default();
        if params.delta != 0.0 {
            if let Some((u, v)) = layers.get(nl) {
                let wp = convolution_power(&convolve(u, v), params.p, b);
                nonlin = convolve(&wp, u).get(&e).copied().unwrap_or_default();
            }
        }
        shift[l] = (lap * params.epsilon + nonlin * params.delta) / params.a[l];
    }
    let mut omega = omega_guess.to_vec();
    let mut previous = omega.clone();
    for it in 1..=Q_CAP {
        // The right-hand side does not depend on omega, so this settles at
        // the second pass; the loop keeps the general fixed-point contract.
        let next: Vec<f64> = (0..b).map(|l| omega0[l] + shift[l].re).collect();
        let change = next.iter().zip(&omega).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        previous = std::mem::replace(&mut omega, next);
        if change <= Q_TOL {
            return Ok(QSolution {
                omega,
                imag_defect: shift.iter().map(|z| z.im.abs()).fold(0.0, f64::max),
                iterations: it,
            });
        }
    }
    Err(Error::NonConvergence {
        what: "Q-equation",
        last: omega,
        previous,
    })
}

/// Projection onto `v_hat(k,n) = conj(u_hat(-k,n))` by averaging both
/// determinations. Returns the state and the defect before projection.
pub fn symmetrize(state: &FourierState) -> (FourierState, f64) {
    let defect = state.conjugacy_defect();
    let mut keys: Vec<(Vec<i64>, Vec<i64>)> = Vec::new();
    for s in state.coeffs().keys() {
        match s.xi {
            Sign::Plus => keys.push((s.k.clone(), s.n.clone())),
            Sign::Minus => keys.push((neg(&s.k), s.n.clone())),
        }
    }
    keys.sort();
    keys.dedup();
    let mut out = FourierState::new(state.b, state.d);
    for (k, n) in keys {
        let plus = Site::new(k.clone(), n.clone(), Sign::Plus);
        let minus = Site::new(neg(&k), n, Sign::Minus);
        let x = (state.get(&plus) + state.get(&minus).conj()) / 2.0;
        out.set(plus, x);
        out.set(minus, x.conj());
    }
    out.support_radius = state.support_radius;
    out.symmetric = true;
    (out, defect)
}

/// Where symmetrization sits relative to the Q-solve after each P-step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymmetryOrder {
    #[default]
    SymmetrizeThenQ,
    QThenSymmetrize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// Scale base: `N_r = min(M^{r+1}, N_cap)`.
    #[serde(rename = "M")]
    pub m: i64,
    pub r_max: usize,
    pub tol: f64,
    pub n_cap: i64,
    #[serde(default)]
    pub order: SymmetryOrder,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            m: 2,
            r_max: 12,
            tol: 1e-13,
            n_cap: 16,
            order: SymmetryOrder::default(),
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 || self.n_cap < 1 || !(self.tol > 0.0) {
            return Err(Error::Validation("schedule needs M >= 2, N_cap >= 1 and tol > 0".into()));
        }
        Ok(())
    }

    pub fn size(&self, r: usize, params: &ModelParams) -> i64 {
        let grown = (self.m as f64).powi(r as i32 + 1).min(self.n_cap as f64) as i64;
        let anchors = params.sites.iter().map(|n| sup_norm(n)).max().unwrap_or(0) + 1;
        grown.max(anchors)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonRecord {
    pub r: usize,
    pub n_size: i64,
    /// Sup norm of `F` after the step, over its full support.
    pub residual: f64,
    pub correction: f64,
    pub decay_fit: Option<f64>,
    pub omega: Vec<f64>,
    pub conjugacy_defect: f64,
    /// `max |coefficient - a_l|` over the resonant set.
    pub anchor_defect: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NewtonTrace {
    pub initial_residual: f64,
    pub records: Vec<NewtonRecord>,
}

impl NewtonTrace {
    /// Residuals including the one before the first step.
    pub fn residuals(&self) -> Vec<f64> {
        std::iter::once(self.initial_residual)
            .chain(self.records.iter().map(|r| r.residual))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificates {
    pub residual: f64,
    /// `sum_{(k,n) not in S+} |u_hat(k,n)| e^{|k|+|n|}`.
    pub decay_sum: f64,
    pub conjugacy_defect: f64,
    /// `max_l |omega_l - omega0_l|`.
    pub omega_shift: f64,
    pub q_imag_defect: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub params: ModelParams,
    pub omega: Vec<f64>,
    pub omega0: Vec<f64>,
    pub state: FourierState,
    pub certificates: Certificates,
    pub trace: NewtonTrace,
}

impl Solution {
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::harness::write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Recompute the certificates from the stored state.
    pub fn recompute_certificates(&self) -> Result<Certificates> {
        certificates(&self.state, &self.omega, &self.omega0, &self.params, self.certificates.q_imag_defect)
    }
}

pub fn anchor_defect(state: &FourierState, params: &ModelParams) -> f64 {
    resonant_sites(&params.sites)
        .iter()
        .zip(params.a.iter().flat_map(|a| [a, a]))
        .map(|(s, a)| (state.get(s) - C64::new(*a, 0.0)).norm())
        .fold(0.0, f64::max)
}

pub fn decay_sum(state: &FourierState, params: &ModelParams) -> f64 {
    let anchors: Vec<Site> = resonant_sites(&params.sites)
        .into_iter()
        .filter(|s| s.xi == Sign::Plus)
        .collect();
    state
        .coeffs()
        .iter()
        .filter(|(s, _)| s.xi == Sign::Plus && !anchors.contains(s))
        .map(|(s, v)| v.norm() * ((sup_norm(&s.k) + sup_norm(&s.n)) as f64).exp())
        .sum()
}

/// Least-squares decay rate of `log|u_hat(k,n)|` against `|k| + |n|` over
/// the off-anchor `+` layer.
pub fn decay_fit(state: &FourierState, params: &ModelParams) -> Option<f64> {
    let anchors = resonant_sites(&params.sites);
    let pts: Vec<(f64, f64)> = state
        .coeffs()
        .iter()
        .filter(|(s, v)| s.xi == Sign::Plus && !anchors.contains(s) && v.norm() > 0.0)
        .map(|(s, v)| ((sup_norm(&s.k) + sup_norm(&s.n)) as f64, v.norm().ln()))
        .collect();
    crate::diophantine::least_squares(&pts).map(|(slope, _)| -slope)
}

fn certificates(state: &FourierState, omega: &[f64], omega0: &[f64], params: &ModelParams, q_imag: f64) -> Result<Certificates> {
    Ok(Certificates {
        residual: evaluate_f(state, omega, params)?.sup(),
        decay_sum: decay_sum(state, params),
        conjugacy_defect: state.conjugacy_defect(),
        omega_shift: omega.iter().zip(omega0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
        q_imag_defect: q_imag,
    })
}

/// Alternate Q-solves and Newton P-steps over growing regions until the
/// residual drops below `schedule.tol` or `r_max` steps are taken.
pub fn run_solver(params: &ModelParams, schedule: &Schedule) -> Result<Solution> {
    params.validate()?;
    schedule.validate()?;
    let omega0 = base_frequencies(params)?;
    let mut state = initial_state(params);
    let mut q = solve_q(&state, params, &omega0)?;
    let mut trace = NewtonTrace {
        initial_residual: evaluate_f(&state, &q.omega, params)?.sup(),
        records: Vec::new(),
    };
    let mut residual = trace.initial_residual;
    let mut increases = 0;
    for r in 0..schedule.r_max {
        if residual < schedule.tol {
            break;
        }
        let n_size = schedule.size(r, params);
        let (next, correction) = newton_step(&state, &q.omega, params, n_size, None).map_err(|e| Error::NewtonSingular {
            step: r,
            source: Box::new(e),
        })?;
        state = next;
        match schedule.order {
            SymmetryOrder::SymmetrizeThenQ => {
                state = symmetrize(&state).0;
                q = solve_q(&state, params, &q.omega)?;
            }
            SymmetryOrder::QThenSymmetrize => {
                q = solve_q(&state, params, &q.omega)?;
                state = symmetrize(&state).0;
            }
        }
        let f = evaluate_f_capped(&state, &q.omega, params, Some(schedule.n_cap))?;
        let next_residual = f.sup();
        if !next_residual.is_finite() || !correction.is_finite() {
            return Err(Error::Diverged {
                step: r,
                residuals: trace.residuals(),
            });
        }
        trace.records.push(NewtonRecord {
            r,
            n_size,
            residual: next_residual,
            correction,
            decay_fit: decay_fit(&state, params),
            omega: q.omega.clone(),
            conjugacy_defect: state.conjugacy_defect(),
            anchor_defect: anchor_defect(&state, params),
        });
        increases = if next_residual > residual { increases + 1 } else { 0 };
        residual = next_residual;
        if increases >= 2 {
            return Err(Error::Diverged {
                step: r,
                residuals: trace.residuals(),
            });
        }
    }
    let certificates = certificates(&state, &q.omega, &omega0, params, q.imag_defect)?;
    Ok(Solution {
        params: params.clone(),
        omega: q.omega,
        omega0,
        state,
        certificates,
        trace,
    })
}
