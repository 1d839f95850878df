//! The operators `H(sigma) = D(sigma) + eps (Delta (+) Delta) + delta S` on
//! finite regions, their Green's functions, and the measurements made on them:
//! norms, off-diagonal decay, LDE classification, Schur-complement inversion,
//! sigma sweeps, Neumann-series stability and eigenvector decay.

use std::collections::{BTreeMap, HashMap};

use faer::{Mat, Side};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diophantine::least_squares;
use crate::error::{Error, Result};
use crate::lattice::{enumerate_elementary_regions, sup_dist, sup_norm, Indexing, Region, Sign, Site};
use crate::linalg::{checked_inverse, identity, max_abs_diff, operator_norm, CMat, C64};
use crate::potential::ModelParams;
use crate::rng::stream;

pub const INVERSE_RESIDUAL_TOL: f64 = 1e-10;

type KernelKey = (Vec<i64>, Vec<i64>, Sign, Sign);

/// A Töplitz-in-`k`, `n`-diagonal operator given by its kernel
/// `S((k,n,xi),(k',n,xi')) = kernel(k - k', n, xi, xi')`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ShortRangeOperator {
    kernel: BTreeMap<KernelKey, C64>,
    pub decay_const: f64,
    pub decay_rate: f64,
}

impl ShortRangeOperator {
    pub fn new(decay_const: f64, decay_rate: f64) -> Self {
        ShortRangeOperator {
            kernel: BTreeMap::new(),
            decay_const,
            decay_rate,
        }
    }

    pub fn insert(&mut self, dk: Vec<i64>, n: Vec<i64>, xi: Sign, xi2: Sign, value: C64) {
        self.kernel.insert((dk, n, xi, xi2), value);
    }

    /// Insert `value` and its adjoint partner.
    pub fn insert_hermitian(&mut self, dk: Vec<i64>, n: Vec<i64>, xi: Sign, xi2: Sign, value: C64) {
        let neg: Vec<i64> = dk.iter().map(|v| -v).collect();
        self.kernel.insert((neg, n.clone(), xi2, xi), value.conj());
        self.kernel.insert((dk, n, xi, xi2), value);
    }

    pub fn get(&self, dk: &[i64], n: &[i64], xi: Sign, xi2: Sign) -> C64 {
        self.kernel
            .get(&(dk.to_vec(), n.to_vec(), xi, xi2))
            .copied()
            .unwrap_or_default()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&KernelKey, &C64)> {
        self.kernel.iter()
    }

    pub fn len(&self) -> usize {
        self.kernel.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernel.is_empty()
    }

    /// `max |kernel(dk,n,xi,xi') - conj(kernel(-dk,n,xi',xi))|`.
    pub fn self_adjoint_defect(&self) -> f64 {
        self.kernel
            .iter()
            .map(|((dk, n, xi, xi2), v)| {
                let neg: Vec<i64> = dk.iter().map(|x| -x).collect();
                (v - self.get(&neg, n, *xi2, *xi).conj()).norm()
            })
            .fold(0.0, f64::max)
    }

    /// Largest ratio of `|kernel|` to `C2 (1+|dk|)^C2 e^{-gamma|dk| - gamma|n|}`.
    pub fn decay_bound_ratio(&self) -> f64 {
        self.kernel
            .iter()
            .map(|((dk, n, _, _), v)| {
                let a = sup_norm(dk) as f64;
                let bound = self.decay_const
                    * (1.0 + a).powf(self.decay_const)
                    * (-self.decay_rate * (a + sup_norm(n) as f64)).exp();
                v.norm() / bound
            })
            .fold(0.0, f64::max)
    }

    /// A seeded self-adjoint operator filling `|dk| <= dk_radius`,
    /// `|n| <= n_radius` with entries at `fill` times the decay envelope.
    pub fn random(b: usize, d: usize, decay_const: f64, decay_rate: f64, dk_radius: i64, n_radius: i64, fill: f64, seed: u64) -> Self {
        let mut s = ShortRangeOperator::new(decay_const, decay_rate);
        let dks = Region::cube(&vec![0; b], dk_radius).map(|r| r.points()).unwrap_or_default();
        let ns = Region::cube(&vec![0; d], n_radius).map(|r| r.points()).unwrap_or_default();
        let mut counter = 0u64;
        for n in &ns {
            for dk in &dks {
                for (xi, xi2) in [(Sign::Plus, Sign::Plus), (Sign::Plus, Sign::Minus), (Sign::Minus, Sign::Plus), (Sign::Minus, Sign::Minus)] {
                    let neg: Vec<i64> = dk.iter().map(|x| -x).collect();
                    if (neg.clone(), n.clone(), xi2, xi) < (dk.clone(), n.clone(), xi, xi2) {
                        continue;
                    }
                    let mut rng = stream(seed, counter);
                    counter += 1;
                    let a = sup_norm(dk) as f64;
                    let env = decay_const * (1.0 + a).powf(decay_const) * (-decay_rate * (a + sup_norm(n) as f64)).exp();
                    let mut v = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * (fill * env / 2f64.sqrt());
                    if neg == *dk && xi == xi2 {
                        v.im = 0.0;
                    }
                    s.insert_hermitian(dk.clone(), n.clone(), xi, xi2, v);
                }
            }
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorMeta {
    pub sigma: f64,
    pub epsilon: f64,
    pub delta: f64,
}

/// A matrix on an indexed region, stored as summed triplets.
#[derive(Clone, Debug)]
pub struct AssembledOperator {
    pub indexing: Indexing,
    pub omega: Vec<f64>,
    pub meta: OperatorMeta,
    entries: Vec<(usize, usize, C64)>,
}

impl AssembledOperator {
    pub fn dim(&self) -> usize {
        self.indexing.len()
    }

    pub fn entries(&self) -> &[(usize, usize, C64)] {
        &self.entries
    }

    pub fn dense(&self) -> CMat {
        let n = self.dim();
        let mut m = Mat::zeros(n, n);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
        }
        m
    }

    pub fn diagonal(&self) -> Vec<C64> {
        let mut d = vec![C64::default(); self.dim()];
        for &(i, j, v) in &self.entries {
            if i == j {
                d[i] += v;
            }
        }
        d
    }

    pub fn get(&self, a: &Site, b: &Site) -> C64 {
        match (self.indexing.index_of(a), self.indexing.index_of(b)) {
            (Some(i), Some(j)) => self
                .entries
                .iter()
                .filter(|e| e.0 == i && e.1 == j)
                .map(|e| e.2)
                .sum(),
            _ => C64::default(),
        }
    }

    /// `||H - H^*||_max / ||H||_max`.
    pub fn hermitian_defect(&self) -> f64 {
        let h = self.dense();
        let scale = crate::linalg::max_abs(&h).max(f64::MIN_POSITIVE);
        let hs = h.adjoint().to_owned();
        max_abs_diff(&h, &hs) / scale
    }
}

fn dot(k: &[i64], w: &[f64]) -> f64 {
    k.iter().zip(w).map(|(a, b)| *a as f64 * b).sum()
}

/// Diagonal value `xi(sigma + k.omega)`-shifted: `-sigma - k.omega + mu_n` on
/// `+`, `sigma + k.omega + mu_n` on `-`.
pub fn diagonal_entry(site: &Site, omega: &[f64], sigma: f64, mu_n: f64) -> f64 {
    let s = sigma + dot(&site.k, omega);
    match site.xi {
        Sign::Plus => -s + mu_n,
        Sign::Minus => s + mu_n,
    }
}

fn check_dims(params: &ModelParams, omega: &[f64], indexing: &Indexing) -> Result<()> {
    if omega.len() != params.b() {
        return Err(Error::DimensionMismatch {
            expected: params.b(),
            got: omega.len(),
        });
    }
    if let Some(s) = indexing.sites().first() {
        if s.k.len() != params.b() || s.n.len() != params.d() {
            return Err(Error::DimensionMismatch {
                expected: params.b() + params.d(),
                got: s.k.len() + s.n.len(),
            });
        }
    }
    Ok(())
}

fn mu_cache(params: &ModelParams, indexing: &Indexing) -> HashMap<Vec<i64>, f64> {
    let mut m = HashMap::new();
    for s in indexing.sites() {
        m.entry(s.n.clone()).or_insert_with(|| params.mu(&s.n));
    }
    m
}

/// The diagonal part `D(sigma)`.
pub fn assemble_d(params: &ModelParams, omega: &[f64], indexing: &Indexing, sigma: f64) -> Result<AssembledOperator> {
    check_dims(params, omega, indexing)?;
    let mus = mu_cache(params, indexing);
    let entries = indexing
        .sites()
        .iter()
        .enumerate()
        .map(|(i, s)| (i, i, C64::new(diagonal_entry(s, omega, sigma, mus[&s.n]), 0.0)))
        .collect();
    Ok(AssembledOperator {
        indexing: indexing.clone(),
        omega: omega.to_vec(),
        meta: OperatorMeta {
            sigma,
            epsilon: params.epsilon,
            delta: params.delta,
        },
        entries,
    })
}

/// `H(sigma) = D(sigma) + eps (Delta (+) Delta) + delta S` restricted to the
/// indexed sites.
pub fn assemble_h(
    params: &ModelParams,
    omega: &[f64],
    indexing: &Indexing,
    sigma: f64,
    s: Option<&ShortRangeOperator>,
) -> Result<AssembledOperator> {
    let mut op = assemble_d(params, omega, indexing, sigma)?;
    let eps = params.epsilon;
    if eps != 0.0 {
        for (i, site) in indexing.sites().iter().enumerate() {
            for j in 0..site.n.len() {
                for step in [-1, 1] {
                    let mut nb = site.clone();
                    nb.n[j] += step;
                    if let Some(t) = indexing.index_of(&nb) {
                        op.entries.push((i, t, C64::new(eps, 0.0)));
                    }
                }
            }
        }
    }
    if let (Some(s), true) = (s, params.delta != 0.0) {
        let mut by_n: BTreeMap<&[i64], Vec<usize>> = BTreeMap::new();
        for (i, site) in indexing.sites().iter().enumerate() {
            by_n.entry(site.n.as_slice()).or_default().push(i);
        }
        for (n, group) in by_n {
            for &i in &group {
                let a = indexing.site(i);
                for &j in &group {
                    let b = indexing.site(j);
                    let dk: Vec<i64> = a.k.iter().zip(&b.k).map(|(x, y)| x - y).collect();
                    let v = s.get(&dk, n, a.xi, b.xi);
                    if v != C64::default() {
                        op.entries.push((i, j, v * params.delta));
                    }
                }
            }
        }
    }
    Ok(op)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdeParams {
    pub rho: f64,
    pub gamma_target: f64,
    /// Per-scale drift allowances; informational only.
    #[serde(default)]
    pub drift: Vec<f64>,
}

impl Default for LdeParams {
    fn default() -> Self {
        LdeParams {
            rho: 1e-2,
            gamma_target: 0.5,
            drift: Vec::new(),
        }
    }
}

impl LdeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Validation("rho must lie in (0,1)".into()));
        }
        if !(self.gamma_target > 0.0) {
            return Err(Error::Validation("gamma_target must be positive".into()));
        }
        Ok(())
    }

    /// Bad-sigma floor `e^{-2 N^rho}`.
    pub fn floor(&self, n: f64) -> f64 {
        (-2.0 * n.powf(self.rho)).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenReport {
    pub norm: f64,
    /// Least-squares `gamma'` from `log|G|` against distance over far pairs.
    pub decay_rate_fit: Option<f64>,
    pub fit_residual: Option<f64>,
    /// Largest `gamma'` with `|G(x,x')| <= e^{-gamma'|x-x'|}` on all far pairs.
    pub certified_rate: Option<f64>,
    pub good: bool,
    pub diameter: i64,
    pub norm_bound: f64,
    pub far_distance: f64,
    pub far_pairs: usize,
    pub gamma_target: f64,
    pub inverse_residual: f64,
}

/// `G = H^{-1}` with norm, decay and LDE classification.
pub fn green(op: &AssembledOperator, lde: &LdeParams) -> Result<(GreenReport, CMat)> {
    let h = op.dense();
    let (g, norm, _) = checked_inverse(&h, INVERSE_RESIDUAL_TOL).map_err(|e| match e {
        Error::Singular {
            smallest_singular_value, ..
        } => Error::Singular {
            smallest_singular_value,
            most_resonant: most_resonant_site(op),
        },
        other => other,
    })?;
    let residual = max_abs_diff(&(&h * &g), &identity(op.dim()));
    let report = classify(&op.indexing, &g, norm, residual, lde);
    Ok((report, g))
}

fn most_resonant_site(op: &AssembledOperator) -> Option<Site> {
    let d = op.diagonal();
    (0..d.len())
        .min_by(|&a, &b| d[a].norm().total_cmp(&d[b].norm()))
        .map(|i| op.indexing.site(i).clone())
}

fn classify(indexing: &Indexing, g: &CMat, norm: f64, residual: f64, lde: &LdeParams) -> GreenReport {
    let m = indexing.diameter();
    let mf = m as f64;
    let far = mf.powf(8.0 / 9.0);
    let norm_bound = mf.powf(0.75).exp();
    let points: Vec<Vec<i64>> = indexing.sites().iter().map(Site::point).collect();
    let mut pts = Vec::new();
    let mut certified = f64::INFINITY;
    let mut far_pairs = 0;
    for i in 0..points.len() {
        for j in 0..points.len() {
            let dist = sup_dist(&points[i], &points[j]);
            if dist == 0 || (dist as f64) < far {
                continue;
            }
            far_pairs += 1;
            let v = g[(i, j)].norm();
            if v > 0.0 {
                let lv = v.ln();
                pts.push((dist as f64, lv));
                certified = certified.min(-lv / dist as f64);
            }
        }
    }
    let fit = least_squares(&pts);
    let fit_residual = fit.map(|(slope, icpt)| {
        (pts.iter().map(|(x, y)| (y - slope * x - icpt).powi(2)).sum::<f64>() / pts.len() as f64).sqrt()
    });
    let certified_rate = (far_pairs > 0).then_some(certified);
    let decay_ok = certified_rate.map_or(true, |r| r >= lde.gamma_target);
    GreenReport {
        norm,
        decay_rate_fit: fit.map(|(slope, _)| -slope),
        fit_residual,
        certified_rate,
        good: norm <= norm_bound && decay_ok,
        diameter: m,
        norm_bound,
        far_distance: far,
        far_pairs,
        gamma_target: lde.gamma_target,
        inverse_residual: residual,
    }
}

/// Inverse of `H` on the region from the Schur complement of `resonant`:
/// with `c` the complement, `S = H_BB - H_Bc G_c H_cB`.
pub fn schur_green(op: &AssembledOperator, resonant: &[Site]) -> Result<CMat> {
    let n = op.dim();
    let mut in_b = vec![false; n];
    for s in resonant {
        let i = op
            .indexing
            .index_of(s)
            .ok_or_else(|| Error::InvalidArgument(format!("resonant site {s} not in region")))?;
        in_b[i] = true;
    }
    let bi: Vec<usize> = (0..n).filter(|&i| in_b[i]).collect();
    let ci: Vec<usize> = (0..n).filter(|&i| !in_b[i]).collect();
    let h = op.dense();
    let block = |rows: &[usize], cols: &[usize]| Mat::from_fn(rows.len(), cols.len(), |i, j| h[(rows[i], cols[j])]);
    let singular = |block: &'static str| {
        move |e: Error| match e {
            Error::Singular {
                smallest_singular_value, ..
            } => Error::ComplementSingular {
                block,
                smallest_singular_value,
            },
            other => other,
        }
    };
    if bi.is_empty() || ci.is_empty() {
        let (g, _, _) = checked_inverse(&h, INVERSE_RESIDUAL_TOL).map_err(singular("full"))?;
        return Ok(g);
    }
    let hcc = block(&ci, &ci);
    let hbb = block(&bi, &bi);
    let hbc = block(&bi, &ci);
    let hcb = block(&ci, &bi);
    let (gc, _, _) = checked_inverse(&hcc, INVERSE_RESIDUAL_TOL).map_err(singular("complement"))?;
    let gc_hcb = &gc * &hcb;
    let schur = &hbb - &hbc * &gc_hcb;
    let (sinv, _, _) = checked_inverse(&schur, INVERSE_RESIDUAL_TOL).map_err(singular("schur"))?;
    let hbc_gc = &hbc * &gc;
    let gbb = sinv.clone();
    let gbc = -(&sinv * &hbc_gc);
    let gcb = -(&gc_hcb * &sinv);
    let gcc = &gc + &gc_hcb * &sinv * &hbc_gc;
    let mut g = Mat::zeros(n, n);
    for (a, &i) in bi.iter().enumerate() {
        for (b, &j) in bi.iter().enumerate() {
            g[(i, j)] = gbb[(a, b)];
        }
        for (b, &j) in ci.iter().enumerate() {
            g[(i, j)] = gbc[(a, b)];
        }
    }
    for (a, &i) in ci.iter().enumerate() {
        for (b, &j) in bi.iter().enumerate() {
            g[(i, j)] = gcb[(a, b)];
        }
        for (b, &j) in ci.iter().enumerate() {
            g[(i, j)] = gcc[(a, b)];
        }
    }
    Ok(g)
}

/// The LDE family `(0, n) + ER_0(N)` for `|n| <= 10N`.
pub fn lde_family(b: usize, d: usize, n_size: i64) -> Result<Vec<Region>> {
    let shapes = enumerate_elementary_regions(b + d, n_size)?;
    let centers = Region::cube(&vec![0; d], 10 * n_size)?.points();
    let mut out = Vec::with_capacity(shapes.len() * centers.len());
    for c in &centers {
        let mut shift = vec![0; b];
        shift.extend_from_slice(c);
        for s in &shapes {
            out.push(s.translate(&shift));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub region_id: usize,
    pub norm: f64,
    pub decay_fit: Option<f64>,
    pub good: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaRecord {
    pub sigma: f64,
    pub good: bool,
    /// Some diagonal entry lies within the floor `e^{-2N^rho}`.
    pub resonant: bool,
    pub green_good: bool,
    pub worst_region: Option<usize>,
    pub worst_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepStats {
    pub bad_fraction: f64,
    pub bad_fraction_floor: f64,
    pub bad_fraction_green: f64,
    pub bad_intervals: Vec<(f64, f64)>,
    pub floor: f64,
    pub per_sigma: Vec<SigmaRecord>,
    pub rows: Vec<SweepRow>,
}

/// Classify each `sigma` of the grid over every region of the family.
///
/// A `sigma` is bad when a diagonal entry of some region falls within the
/// floor `e^{-2N^rho}` (with `N` half the region diameter) or when some
/// Green's function fails the LDE bounds.
pub fn sigma_sweep(
    params: &ModelParams,
    omega: &[f64],
    family: &[Region],
    sigmas: &[f64],
    s: Option<&ShortRangeOperator>,
    lde: &LdeParams,
) -> Result<SweepStats> {
    let b = params.b();
    let indexings: Vec<Indexing> = family.iter().map(|r| crate::lattice::index_region(r, b, None)).collect::<Result<_>>()?;
    let floors: Vec<f64> = indexings
        .iter()
        .map(|ix| lde.floor(((ix.diameter() + 1) / 2) as f64))
        .collect();
    let floor = floors.iter().copied().fold(0.0, f64::max);
    let per: Vec<(SigmaRecord, Vec<SweepRow>)> = sigmas
        .par_iter()
        .map(|&sigma| {
            let mut rows = Vec::with_capacity(indexings.len());
            let mut resonant = false;
            let mut green_good = true;
            let mut worst: Option<(usize, f64)> = None;
            for (rid, ix) in indexings.iter().enumerate() {
                let op = assemble_h(params, omega, ix, sigma, s)?;
                let min_diag = op.diagonal().iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
                resonant |= min_diag <= floors[rid];
                let (norm, fit, good) = match green(&op, lde) {
                    Ok((r, _)) => (r.norm, r.decay_rate_fit, r.good),
                    Err(Error::Singular { .. }) | Err(Error::InverseResidual { .. }) => (f64::INFINITY, None, false),
                    Err(e) => return Err(e),
                };
                green_good &= good;
                if worst.map_or(true, |(_, w)| norm > w) {
                    worst = Some((rid, norm));
                }
                rows.push(SweepRow {
                    sigma,
                    region_id: rid,
                    norm,
                    decay_fit: fit,
                    good: good && min_diag > floors[rid],
                });
            }
            Ok((
                SigmaRecord {
                    sigma,
                    good: !resonant && green_good,
                    resonant,
                    green_good,
                    worst_region: worst.map(|w| w.0),
                    worst_norm: worst.map_or(0.0, |w| w.1),
                },
                rows,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let m = sigmas.len().max(1) as f64;
    let mut per_sigma = Vec::with_capacity(per.len());
    let mut rows = Vec::new();
    for (rec, r) in per {
        per_sigma.push(rec);
        rows.extend(r);
    }
    let bad = per_sigma.iter().filter(|r| !r.good).count() as f64;
    let bad_floor = per_sigma.iter().filter(|r| r.resonant).count() as f64;
    let bad_green = per_sigma.iter().filter(|r| !r.green_good).count() as f64;
    let mut bad_intervals = Vec::new();
    let mut run: Option<(f64, f64)> = None;
    for r in &per_sigma {
        if !r.good {
            run = Some(run.map_or((r.sigma, r.sigma), |(a, _)| (a, r.sigma)));
        } else if let Some(iv) = run.take() {
            bad_intervals.push(iv);
        }
    }
    bad_intervals.extend(run);
    Ok(SweepStats {
        bad_fraction: if sigmas.is_empty() { 0.0 } else { bad / m },
        bad_fraction_floor: if sigmas.is_empty() { 0.0 } else { bad_floor / m },
        bad_fraction_green: if sigmas.is_empty() { 0.0 } else { bad_green / m },
        bad_intervals,
        floor,
        per_sigma,
        rows,
    })
}

/// Constants of the perturbation lemma.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityBounds {
    /// Decay rate `c`.
    pub c: f64,
    /// Off-diagonal range `M` beyond which `A^{-1}` must decay.
    pub range: f64,
    /// Polynomial exponent `C2`.
    pub c2: f64,
    /// Prescribed `eps2`; the smallest admissible value is used when absent.
    pub epsilon2: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityStatus {
    Verified,
    ConclusionFailed,
    HypothesisNotMet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub status: StabilityStatus,
    pub reason: Option<String>,
    pub epsilon1: f64,
    pub epsilon2: f64,
    pub product: f64,
    pub norm_perturbed: Option<f64>,
    pub norm_bound: f64,
    /// `max |(A+B)^{-1} - A^{-1}| / (eps1^{-1} e^{-c|x-x'|})`.
    pub max_difference_ratio: Option<f64>,
}

/// `sum_{x in Z^r} e^{-c|x|}` with the sup norm.
pub fn lattice_exp_sum(r: usize, c: f64) -> f64 {
    let mut total = 1.0;
    for m in 1.. {
        let shell = (2.0 * m as f64 + 1.0).powi(r as i32) - (2.0 * m as f64 - 1.0).powi(r as i32);
        let term = shell * (-c * m as f64).exp();
        total += term;
        if term < 1e-17 * total {
            break;
        }
    }
    total
}

/// Neumann-series stability of `(A + B)^{-1}` on the index set `points`.
pub fn perturbation_stability(a: &CMat, b: &CMat, points: &[Vec<i64>], bounds: &StabilityBounds) -> Result<StabilityReport> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || b.ncols() != n || points.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: points.len() });
    }
    let (ainv, ainv_norm, _) = checked_inverse(a, INVERSE_RESIDUAL_TOL)?;
    let eps1 = 1.0 / ainv_norm;
    let dist = |i: usize, j: usize| sup_dist(&points[i], &points[j]) as f64;
    let mut report = StabilityReport {
        status: StabilityStatus::HypothesisNotMet,
        reason: None,
        epsilon1: eps1,
        epsilon2: 0.0,
        product: f64::INFINITY,
        norm_perturbed: None,
        norm_bound: 2.0 / eps1,
        max_difference_ratio: None,
    };
    for i in 0..n {
        for j in 0..n {
            let dd = dist(i, j);
            if dd > bounds.range && ainv[(i, j)].norm() > (-bounds.c * dd).exp() {
                report.reason = Some(format!("A^-1 decay fails at ({i},{j})"));
                return Ok(report);
            }
        }
    }
    let mut eps2_min = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let dd = dist(i, j);
            let env = (1.0 + dd).powf(bounds.c2) * (-bounds.c * dd).exp();
            eps2_min = eps2_min.max(b[(i, j)].norm() / env);
        }
    }
    let eps2 = match bounds.epsilon2 {
        Some(e) if e >= eps2_min => e,
        Some(e) => {
            report.epsilon2 = e;
            report.reason = Some(format!("B exceeds the prescribed envelope (needs eps2 >= {eps2_min:e})"));
            return Ok(report);
        }
        None => eps2_min,
    };
    report.epsilon2 = eps2;
    let diam = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| dist(i, j)).fold(0.0, f64::max);
    let r = points.first().map_or(0, Vec::len);
    let product = (n as f64).powi(2)
        * (2.0 * bounds.c * bounds.range).exp()
        * (1.0 + diam).powf(bounds.c2)
        * eps2
        / eps1
        * lattice_exp_sum(r, bounds.c);
    report.product = product;
    if product > 0.5 {
        report.reason = Some("smallness product exceeds 1/2".into());
        return Ok(report);
    }
    let sum = a + b;
    let (pinv, pnorm, _) = checked_inverse(&sum, INVERSE_RESIDUAL_TOL)?;
    let mut ratio = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let bound = (-bounds.c * dist(i, j)).exp() / eps1;
            ratio = ratio.max((pinv[(i, j)] - ainv[(i, j)]).norm() / bound);
        }
    }
    report.norm_perturbed = Some(pnorm);
    report.max_difference_ratio = Some(ratio);
    report.status = if pnorm <= 2.0 / eps1 * (1.0 + 1e-12) && ratio <= 1.0 {
        StabilityStatus::Verified
    } else {
        StabilityStatus::ConclusionFailed
    };
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenDecayReport {
    pub eigenvalues: Vec<f64>,
    /// Fitted decay rate per eigenvector; `+inf` when only the peak is above
    /// the noise floor.
    pub rates: Vec<f64>,
    pub peaks: Vec<Vec<i64>>,
    pub threshold: f64,
    pub fraction_above: f64,
}

impl EigenDecayReport {
    pub fn fraction_with_rate_at_least(&self, rate: f64) -> f64 {
        if self.rates.is_empty() {
            return 0.0;
        }
        self.rates.iter().filter(|r| **r >= rate).count() as f64 / self.rates.len() as f64
    }
}

/// Relative amplitude below which eigenvector entries are treated as noise.
pub const EIGEN_NOISE_FLOOR: f64 = 1e-12;

/// Eigen-decomposition of `eps Delta + V(n alpha + theta)` on the box
/// `center + [-radius, radius]^d` and exponential-decay fits from each peak.
pub fn linear_localization_diagnostic(params: &ModelParams, center: &[i64], radius: i64) -> Result<EigenDecayReport> {
    let d = params.d();
    if center.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: center.len() });
    }
    let pts = Region::cube(center, radius)?.points();
    let m = pts.len();
    let index: HashMap<&[i64], usize> = pts.iter().enumerate().map(|(i, p)| (p.as_slice(), i)).collect();
    let mut h = Mat::<f64>::zeros(m, m);
    for (i, p) in pts.iter().enumerate() {
        h[(i, i)] = params.mu(p);
        for j in 0..d {
            let mut q = p.clone();
            q[j] += 1;
            if let Some(&t) = index.get(q.as_slice()) {
                h[(i, t)] = params.epsilon;
                h[(t, i)] = params.epsilon;
            }
        }
    }
    let threshold = if params.epsilon > 0.0 {
        params.epsilon.ln().abs() / 4.0
    } else {
        f64::INFINITY
    };
    let (eigenvalues, rates, peaks) = if params.epsilon == 0.0 {
        let mut ev: Vec<(f64, usize)> = (0..m).map(|i| (h[(i, i)], i)).collect();
        ev.sort_by(|a, b| a.0.total_cmp(&b.0));
        (
            ev.iter().map(|e| e.0).collect(),
            vec![f64::INFINITY; m],
            ev.iter().map(|e| pts[e.1].clone()).collect(),
        )
    } else {
        let eig = h
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::InvalidArgument(format!("eigensolver failed: {e:?}")))?;
        let u = eig.U();
        let s = eig.S();
        let mut vals = Vec::with_capacity(m);
        let mut rates = Vec::with_capacity(m);
        let mut peaks = Vec::with_capacity(m);
        for c in 0..m {
            vals.push(s[c]);
            let peak = (0..m).max_by(|&a, &b| u[(a, c)].abs().total_cmp(&u[(b, c)].abs())).unwrap();
            let top = u[(peak, c)].abs();
            let fit: Vec<(f64, f64)> = (0..m)
                .filter(|&i| u[(i, c)].abs() >= EIGEN_NOISE_FLOOR * top)
                .map(|i| (sup_dist(&pts[i], &pts[peak]) as f64, (u[(i, c)].abs() / top).ln()))
                .collect();
            let rate = if fit.iter().all(|p| p.0 == 0.0) {
                f64::INFINITY
            } else {
                least_squares(&fit).map_or(f64::INFINITY, |(slope, _)| -slope)
            };
            rates.push(rate);
            peaks.push(pts[peak].clone());
        }
        (vals, rates, peaks)
    };
    let mut report = EigenDecayReport {
        eigenvalues,
        rates,
        peaks,
        threshold,
        fraction_above: 0.0,
    };
    report.fraction_above = report.fraction_with_rate_at_least(threshold);
    Ok(report)
}

/// Dense Hermitian test operator on `sites`: `D(sigma) + eps Delta + delta S`
/// with `S` random, used by the Schur and stability checks.
pub fn random_operator(params: &ModelParams, omega: &[f64], indexing: &Indexing, sigma: f64, seed: u64) -> Result<AssembledOperator> {
    let s = ShortRangeOperator::random(params.b(), params.d(), 1.0, 1.0, 2, 3, 1.0, seed);
    assemble_h(params, omega, indexing, sigma, Some(&s))
}

/// Operator norm of a dense matrix (power iteration).
pub fn norm(m: &CMat) -> f64 {
    operator_norm(m)
}

impl SweepStats {
    /// Rows `sigma,region_id,norm,decay_fit,good`; a missing fit is left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sigma,region_id,norm,decay_fit,good\n");
        for r in &self.rows {
            let fit = r.decay_fit.map_or(String::new(), |f| f.to_string());
            out.push_str(&format!("{},{},{},{},{}\n", r.sigma, r.region_id, r.norm, fit, r.good));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixDescriptor {
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    pub layout: String,
    pub endianness: String,
}

/// Dense dump: row-major, little-endian, each entry `re` then `im` as `f64`.
pub fn matrix_bytes(m: &CMat) -> (Vec<u8>, MatrixDescriptor) {
    let mut bytes = Vec::with_capacity(m.nrows() * m.ncols() * 16);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            bytes.extend_from_slice(&m[(i, j)].re.to_le_bytes());
            bytes.extend_from_slice(&m[(i, j)].im.to_le_bytes());
        }
    }
    let desc = MatrixDescriptor {
        rows: m.nrows(),
        cols: m.ncols(),
        dtype: "complex128".into(),
        layout: "row-major".into(),
        endianness: "little".into(),
    };
    (bytes, desc)
}

pub fn matrix_from_bytes(bytes: &[u8], desc: &MatrixDescriptor) -> Result<CMat> {
    if bytes.len() != desc.rows * desc.cols * 16 {
        return Err(Error::InvalidArgument("matrix dump length does not match its descriptor".into()));
    }
    let f = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    Ok(Mat::from_fn(desc.rows, desc.cols, |i, j| {
        let o = (i * desc.cols + j) * 16;
        C64::new(f(o), f(o + 8))
    }))
}
