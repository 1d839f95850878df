//! Sublevel-set measure bounds, the Wronskian determinant identity, the
//! determinant lower bound for integer families, Diophantine membership tests
//! and clustering counts for the diagonal `xi(sigma + k.omega0) + mu_n`.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use twofloat::TwoFloat;

use crate::error::{Error, Result};
use crate::lattice::{sup_norm, Region};
use crate::linalg::{det_dd, det_real};
use crate::potential::{base_frequencies, mu_unchecked, ModelParams, TrigPoly};
use crate::rng::stream;

/// Two-sided 97.5% normal quantile.
pub const WILSON_Z: f64 = 1.959963984540054;
/// Numeric values below this are reported as indeterminate rather than zero.
pub const INDETERMINATE_TOL: f64 = 1e-13;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiophParams {
    pub eta: f64,
    #[serde(rename = "C1_exp")]
    pub big_c1_exp: f64,
    pub c1_exp: f64,
    /// Exponent of `(eps + delta)` for the thresholds; `None` means `1/(8b)`.
    #[serde(default)]
    pub threshold_exp: Option<f64>,
    /// Absolute threshold overriding `threshold_exp`.
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(rename = "L")]
    pub l: i64,
}

impl Default for DiophParams {
    fn default() -> Self {
        DiophParams {
            eta: 0.01,
            big_c1_exp: 8.0,
            c1_exp: 1e-3,
            threshold_exp: None,
            threshold: None,
            l: 8,
        }
    }
}

impl DiophParams {
    pub fn validate(&self, b: usize) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Validation("eta must lie in (0,1)".into()));
        }
        if !(self.big_c1_exp > 0.0) {
            return Err(Error::Validation("C1_exp must be positive".into()));
        }
        if !(self.c1_exp > 0.0 && self.c1_exp < 1.0 / (100.0 * b as f64)) {
            return Err(Error::Validation("c1_exp must lie in (0, 1/(100b))".into()));
        }
        if matches!(self.threshold_exp, Some(t) if !(t > 0.0)) {
            return Err(Error::Validation("threshold_exp must be positive".into()));
        }
        if matches!(self.threshold, Some(t) if !(t > 0.0)) {
            return Err(Error::Validation("threshold must be positive".into()));
        }
        if self.l < 1 {
            return Err(Error::Validation("L must be at least 1".into()));
        }
        Ok(())
    }

    pub fn threshold_for(&self, b: usize, eps_plus_delta: f64) -> f64 {
        if let Some(t) = self.threshold {
            return t;
        }
        let e = self.threshold_exp.unwrap_or(1.0 / (8.0 * b as f64));
        eps_plus_delta.powf(e)
    }
}

/// `zeta_k = k (k+1) ((k+1)!)^{1/k}`.
pub fn km_zeta(k: u32) -> f64 {
    let fact: f64 = (1..=k + 1).map(|i| i as f64).product();
    (k * (k + 1)) as f64 * fact.powf(1.0 / k as f64)
}

/// `zeta_k (eps / A)^{1/k}`.
pub fn km_bound(k: u32, a: f64, eps: f64) -> f64 {
    km_zeta(k) * (eps / a).powf(1.0 / k as f64)
}

/// Measure of `{x in [lo, hi] : |f(x)| <= eps}` from `grid` samples, with the
/// level crossings inside each cell located by linear interpolation.
pub fn sublevel_measure_1d(
    f: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    eps: f64,
    grid: usize,
) -> Result<f64> {
    if grid < 1000 {
        return Err(Error::InvalidArgument(format!("grid {grid} < 1000 points")));
    }
    if !(hi > lo) {
        return Err(Error::InvalidArgument("empty interval".into()));
    }
    let h = (hi - lo) / (grid - 1) as f64;
    let mut g = Vec::with_capacity(grid);
    for i in 0..grid {
        let y = f(lo + i as f64 * h);
        if !y.is_finite() {
            return Err(Error::NonFinite(i));
        }
        g.push(y.abs() - eps);
    }
    let mut total = 0.0;
    for w in g.windows(2) {
        let (a, b) = (w[0], w[1]);
        total += match (a <= 0.0, b <= 0.0) {
            (true, true) => h,
            (false, false) => 0.0,
            (true, false) => h * (-a) / (b - a),
            (false, true) => h * (-b) / (a - b),
        };
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WronskianInput {
    #[serde(rename = "V")]
    pub potential: TrigPoly,
    pub alpha: Vec<f64>,
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub q: Vec<f64>,
    pub sites: Vec<Vec<i64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WronskianResult {
    pub size: usize,
    pub direct: f64,
    pub factored: f64,
}

pub const WRONSKIAN_CAP: usize = 12;

fn dd(x: f64) -> TwoFloat {
    TwoFloat::from(x)
}

/// `|det W|` for `W = [d_xi^{2j} V_{(s,l)}]` computed two ways: by LU of the
/// explicit matrix, and by the cosine x linear-form x Vandermonde product.
/// Both run in double-double arithmetic.
pub fn wronskian_det(input: &WronskianInput, cap: usize) -> Result<WronskianResult> {
    let d = input.potential.d;
    for v in [&input.alpha, &input.theta, &input.beta, &input.q] {
        if v.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: v.len() });
        }
    }
    if input.sites.is_empty() {
        return Err(Error::InvalidArgument("at least one site is required".into()));
    }
    for (i, s) in input.sites.iter().enumerate() {
        if s.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: s.len() });
        }
        if input.sites[..i].contains(s) {
            return Err(Error::InvalidArgument(format!("site {s:?} repeated")));
        }
    }
    let r = input.sites.len() * input.potential.terms.len();
    if r > cap {
        return Err(Error::SizeCap { size: r, cap });
    }
    let two_pi = twofloat::consts::PI * 2.0;
    let mut cosines = Vec::with_capacity(r);
    let mut lambdas = Vec::with_capacity(r);
    for s in &input.sites {
        for t in &input.potential.terms {
            let phase: f64 = (0..d)
                .map(|i| t.l[i] as f64 * (input.theta[i] + s[i] as f64 * input.alpha[i]))
                .sum();
            cosines.push(dd((2.0 * PI * phase + t.phase).cos()));
            let mut x = dd(0.0);
            for i in 0..d {
                x += dd((t.l[i] * s[i]) as f64) * dd(input.beta[i]);
                x += dd(t.l[i] as f64) * dd(input.q[i]);
            }
            let y = two_pi * x;
            lambdas.push(y * y);
        }
    }
    let mut w = vec![vec![dd(0.0); r]; r];
    for c in 0..r {
        let mut pow = dd(1.0);
        for row in w.iter_mut() {
            pow *= -lambdas[c];
            row[c] = pow * cosines[c];
        }
    }
    let direct = det_dd(w).abs();
    let mut factored = dd(1.0);
    for c in &cosines {
        factored *= c.abs();
    }
    for l in &lambdas {
        factored *= *l;
    }
    for i in 0..r {
        for j in i + 1..r {
            factored *= (lambdas[i] - lambdas[j]).abs();
        }
    }
    Ok(WronskianResult {
        size: r,
        direct: direct.hi(),
        factored: factored.hi(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BggResult {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `max_l |w.v_l| >= r^{-3/2} M^{1-r} |w|_2 |det V|` with `M = max_l |v_l|_1`.
pub fn bgg_check(vectors: &[Vec<f64>], w: &[f64]) -> Result<BggResult> {
    let r = vectors.len();
    if r == 0 {
        return Err(Error::InvalidArgument("empty family".into()));
    }
    if vectors.iter().any(|v| v.len() != r) || w.len() != r {
        return Err(Error::DimensionMismatch { expected: r, got: w.len() });
    }
    let integral = vectors.iter().flatten().all(|x| x.fract() == 0.0 && x.abs() < 1e6);
    let det = if integral {
        let m: Vec<Vec<i128>> = vectors.iter().map(|v| v.iter().map(|x| *x as i128).collect()).collect();
        bareiss_det(m) as f64
    } else {
        det_real(vectors)
    };
    let scale: f64 = vectors.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).product();
    if det == 0.0 || det.abs() <= 1e-12 * scale {
        return Err(Error::InvalidArgument("vectors are linearly dependent".into()));
    }
    let m = vectors
        .iter()
        .map(|v| v.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let lhs = vectors
        .iter()
        .map(|v| v.iter().zip(w).map(|(a, b)| a * b).sum::<f64>().abs())
        .fold(0.0, f64::max);
    let w2 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    let rhs = (r as f64).powf(-1.5) * m.powi(1 - r as i32) * w2 * det.abs();
    Ok(BggResult {
        lhs,
        rhs,
        holds: lhs >= rhs - 1e-12 * rhs.abs(),
    })
}

/// Exact integer determinant (fraction-free elimination).
pub fn bareiss_det(mut m: Vec<Vec<i128>>) -> i128 {
    let n = m.len();
    let mut sign = 1;
    let mut prev = 1i128;
    for c in 0..n {
        if m[c][c] == 0 {
            match (c + 1..n).find(|&r| m[r][c] != 0) {
                Some(r) => {
                    m.swap(r, c);
                    sign = -sign;
                }
                None => return 0,
            }
        }
        for i in c + 1..n {
            for j in c + 1..n {
                m[i][j] = (m[i][j] * m[c][c] - m[i][c] * m[c][j]) / prev;
            }
        }
        prev = m[c][c];
    }
    sign * m[n - 1][n - 1]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationStatus {
    Violation,
    Indeterminate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DcViolation {
    pub clause: String,
    pub k: Vec<i64>,
    pub n: Vec<i64>,
    pub n2: Vec<i64>,
    pub value: f64,
    pub bound: f64,
    pub status: ViolationStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClauseSummary {
    pub clause: String,
    pub checked: usize,
    pub violations: usize,
    pub identically_zero: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DcReport {
    pub threshold: f64,
    pub l_min: f64,
    pub passed: bool,
    pub clauses: Vec<ClauseSummary>,
    pub violations: Vec<DcViolation>,
}

impl DcReport {
    pub fn clause_passed(&self, clause: &str) -> bool {
        self.clauses.iter().any(|c| c.clause == clause && c.violations == 0)
    }
}

/// Budget for the number of tuples enumerated by [`check_dc_conditions`].
pub const DC_TUPLE_CAP: u128 = 50_000_000;

/// Coefficients `c_m` of `sum_l k_l mu_{n_l} + s1 mu_n1 + s2 mu_n2` as a
/// combination of the `mu_m`. Under the frequency-set condition the `mu_m`
/// are linearly independent, so the form vanishes identically iff all `c_m`
/// are zero.
fn identically_zero(anchors: &[Vec<i64>], k: &[i64], extra: &[(i64, &[i64])]) -> bool {
    let mut c: HashMap<&[i64], i64> = HashMap::new();
    for (l, n) in anchors.iter().enumerate() {
        *c.entry(n.as_slice()).or_insert(0) += k[l];
    }
    for (s, n) in extra {
        *c.entry(n).or_insert(0) += s;
    }
    c.values().all(|v| *v == 0)
}

fn points(dim: usize, radius: i64) -> Vec<Vec<i64>> {
    Region::cube(&vec![0; dim], radius).map(|r| r.points()).unwrap_or_default()
}

fn dot(k: &[i64], w: &[f64]) -> f64 {
    k.iter().zip(w).map(|(a, b)| *a as f64 * b).sum()
}

/// Exhaustive check of the four Diophantine clauses at scale `L`.
pub fn check_dc_conditions(params: &ModelParams, dioph: &DiophParams) -> Result<DcReport> {
    let b = params.b();
    let d = params.d();
    let l = dioph.l;
    let e = params.epsilon + params.delta;
    let threshold = dioph.threshold_for(b, e);
    let l_min = if e > 0.0 { (1.0 / e).ln() } else { 1.0 };
    let ks = points(b, 2 * l);
    let ns = points(d, l);
    let work = ks.len() as u128 * (ns.len() as u128).pow(2);
    if work > DC_TUPLE_CAP {
        return Err(Error::SizeCap {
            size: work as usize,
            cap: DC_TUPLE_CAP as usize,
        });
    }
    let omega0 = base_frequencies(params)?;
    let mu: Vec<f64> = ns
        .iter()
        .map(|n| mu_unchecked(&params.potential, &params.alpha, &params.theta, n))
        .collect();
    let kw: Vec<f64> = ks.iter().map(|k| dot(k, &omega0)).collect();
    let anchors = &params.sites;
    let zero_k = vec![0i64; b];
    let mut violations = Vec::new();
    let mut clauses = Vec::new();
    let record = |clause: &str,
                      k: &[i64],
                      n: &[i64],
                      n2: &[i64],
                      value: f64,
                      bound: f64,
                      out: &mut Vec<DcViolation>|
     -> bool {
        if value.abs() >= bound {
            return false;
        }
        let status = if value.abs() < INDETERMINATE_TOL {
            ViolationStatus::Indeterminate
        } else {
            ViolationStatus::Violation
        };
        out.push(DcViolation {
            clause: clause.to_string(),
            k: k.to_vec(),
            n: n.to_vec(),
            n2: n2.to_vec(),
            value,
            bound,
            status,
        });
        true
    };

    // (i)
    let mut s = ClauseSummary {
        clause: "i".into(),
        checked: 0,
        violations: 0,
        identically_zero: 0,
    };
    for i in 0..ns.len() {
        for j in i + 1..ns.len() {
            s.checked += 1;
            if record("i", &zero_k, &ns[i], &ns[j], mu[i] - mu[j], threshold, &mut violations) {
                s.violations += 1;
            }
        }
    }
    clauses.push(s);

    // (ii)
    let mut s = ClauseSummary {
        clause: "ii".into(),
        checked: 0,
        violations: 0,
        identically_zero: 0,
    };
    for (k, v) in ks.iter().zip(&kw) {
        if sup_norm(k) == 0 {
            continue;
        }
        s.checked += 1;
        if identically_zero(anchors, k, &[]) {
            s.identically_zero += 1;
            continue;
        }
        if record("ii", k, &[], &[], *v, threshold, &mut violations) {
            s.violations += 1;
        }
    }
    clauses.push(s);

    // (iii)
    let mut s = ClauseSummary {
        clause: "iii".into(),
        checked: 0,
        violations: 0,
        identically_zero: 0,
    };
    for (k, v) in ks.iter().zip(&kw) {
        if sup_norm(k) > l {
            continue;
        }
        for (n, m) in ns.iter().zip(&mu) {
            let in_s = anchors.iter().enumerate().any(|(idx, a)| {
                a == n && (0..b).all(|j| k[j].abs() == (j == idx) as i64) && k[idx] != 0
            });
            if in_s {
                continue;
            }
            s.checked += 1;
            let radius = sup_norm(k).max(sup_norm(n)) as f64;
            let bound = radius.max(l_min).powf(-dioph.big_c1_exp);
            let plus = v + m;
            let minus = -v + m;
            let zp = identically_zero(anchors, k, &[(1, n)]);
            let zm = identically_zero(anchors, k, &[(-1, n)]);
            if zp || zm {
                s.identically_zero += 1;
                continue;
            }
            let value = if plus.abs() <= minus.abs() { plus } else { minus };
            if record("iii", k, n, &[], value, bound, &mut violations) {
                s.violations += 1;
            }
        }
    }
    clauses.push(s);

    // (iv)
    let mut s = ClauseSummary {
        clause: "iv".into(),
        checked: 0,
        violations: 0,
        identically_zero: 0,
    };
    for (k, v) in ks.iter().zip(&kw) {
        for (i, n) in ns.iter().enumerate() {
            for (j, n2) in ns.iter().enumerate() {
                s.checked += 1;
                if identically_zero(anchors, k, &[(1, n), (-1, n2)]) {
                    s.identically_zero += 1;
                    continue;
                }
                if record("iv", k, n, n2, v + mu[i] - mu[j], threshold, &mut violations) {
                    s.violations += 1;
                }
            }
        }
    }
    clauses.push(s);

    Ok(DcReport {
        threshold,
        l_min,
        passed: clauses.iter().all(|c| c.violations == 0),
        clauses,
        violations,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Predicate {
    AlwaysTrue,
    /// Fails when `|V(theta)| <= eta`.
    Sublevel,
    DcI,
    DcIi,
    DcIii,
    DcIv,
    DcAll,
}

impl Predicate {
    pub fn parse(id: &str) -> Result<Self> {
        Ok(match id {
            "always-true" => Predicate::AlwaysTrue,
            "sublevel" => Predicate::Sublevel,
            "dc-i" => Predicate::DcI,
            "dc-ii" => Predicate::DcIi,
            "dc-iii" => Predicate::DcIii,
            "dc-iv" => Predicate::DcIv,
            "dc-all" => Predicate::DcAll,
            other => return Err(Error::UnknownPredicate(other.to_string())),
        })
    }

    pub fn id(&self) -> &'static str {
        match self {
            Predicate::AlwaysTrue => "always-true",
            Predicate::Sublevel => "sublevel",
            Predicate::DcI => "dc-i",
            Predicate::DcIi => "dc-ii",
            Predicate::DcIii => "dc-iii",
            Predicate::DcIv => "dc-iv",
            Predicate::DcAll => "dc-all",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureEstimate {
    pub condition: String,
    pub fraction: f64,
    pub interval: (f64, f64),
    pub seed: u64,
    pub n_samples: usize,
    pub failures: usize,
}

/// 95% Wilson score interval for `x` successes out of `n`.
pub fn wilson_interval(x: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = x as f64 / nf;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = WILSON_Z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    let lo = if x == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if x == n { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// The `(alpha, theta)` drawn for sample `index`.
pub fn sample_phases(d: usize, seed: u64, index: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = stream(seed, index);
    let alpha = (0..d).map(|_| rng.random::<f64>()).collect();
    let theta = (0..d).map(|_| rng.random::<f64>()).collect();
    (alpha, theta)
}

/// Whether `(alpha, theta)` lies in the excluded set of `predicate`.
pub fn predicate_fails(
    predicate: &Predicate,
    params: &ModelParams,
    dioph: &DiophParams,
) -> Result<bool> {
    Ok(match predicate {
        Predicate::AlwaysTrue => false,
        Predicate::Sublevel => params.potential.eval(&params.theta).abs() <= dioph.eta,
        Predicate::DcAll => !check_dc_conditions(params, dioph)?.passed,
        other => {
            let clause = match other {
                Predicate::DcI => "i",
                Predicate::DcIi => "ii",
                Predicate::DcIii => "iii",
                _ => "iv",
            };
            !check_dc_conditions(params, dioph)?.clause_passed(clause)
        }
    })
}

/// Monte-Carlo fraction of `(alpha, theta)` in `[0,1]^{2d}` failing the
/// predicate, with a 95% Wilson interval.
pub fn estimate_excluded_measure(
    condition: &str,
    template: &ModelParams,
    dioph: &DiophParams,
    n_samples: usize,
    seed: u64,
) -> Result<MeasureEstimate> {
    let predicate = Predicate::parse(condition)?;
    if n_samples < 1000 {
        return Err(Error::InvalidArgument(format!("n_samples {n_samples} < 1000")));
    }
    let d = template.d();
    let flags: Vec<bool> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let (alpha, theta) = sample_phases(d, seed, i);
            let mut p = template.clone();
            p.alpha = alpha;
            p.theta = theta;
            predicate_fails(&predicate, &p, dioph)
        })
        .collect::<Result<Vec<bool>>>()?;
    let failures = flags.iter().filter(|f| **f).count();
    Ok(MeasureEstimate {
        condition: predicate.id().to_string(),
        fraction: failures as f64 / n_samples as f64,
        interval: wilson_interval(failures, n_samples),
        seed,
        n_samples,
        failures,
    })
}

/// Least-squares fit `log fraction = log C + c log eta`; returns `(C, c)`.
pub fn fit_sublevel_exponent(etas: &[f64], fractions: &[f64]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = etas
        .iter()
        .zip(fractions)
        .filter(|(e, f)| **e > 0.0 && **f > 0.0)
        .map(|(e, f)| (e.ln(), f.ln()))
        .collect();
    let (slope, intercept) = least_squares(&pts)?;
    Some((intercept.exp(), slope))
}

pub(crate) fn least_squares(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterWitness {
    pub k: Vec<i64>,
    pub n: Vec<i64>,
    /// `+1` or `-1`: the sign attaining the minimum.
    pub xi: i8,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterCount {
    /// Sites with `min_xi |xi(sigma + k.omega0) + mu_n| < threshold`.
    pub count: usize,
    /// Counts for `xi = +1` and `xi = -1` separately.
    pub per_sign: [usize; 2],
    pub witnesses: Vec<ClusterWitness>,
}

struct Diagonal {
    k: Vec<i64>,
    n: Vec<i64>,
    kw: f64,
    mu: f64,
}

fn diagonal_table(params: &ModelParams, l: i64) -> Result<Vec<Diagonal>> {
    let omega0 = base_frequencies(params)?;
    let region = Region::cube(&vec![0; params.b() + params.d()], l)?;
    Ok(region
        .points()
        .into_iter()
        .map(|p| {
            let (k, n) = p.split_at(params.b());
            Diagonal {
                kw: dot(k, &omega0),
                mu: params.mu(n),
                k: k.to_vec(),
                n: n.to_vec(),
            }
        })
        .collect())
}

/// Resonant sites of `Lambda_L` at `sigma`.
pub fn clustering_count(params: &ModelParams, sigma: f64, l: i64, threshold: f64) -> Result<ClusterCount> {
    let table = diagonal_table(params, l)?;
    Ok(count_at(&table, sigma, threshold))
}

fn count_at(table: &[Diagonal], sigma: f64, threshold: f64) -> ClusterCount {
    let mut out = ClusterCount {
        count: 0,
        per_sign: [0, 0],
        witnesses: Vec::new(),
    };
    for e in table {
        let plus = sigma + e.kw + e.mu;
        let minus = -(sigma + e.kw) + e.mu;
        let hit_p = plus.abs() < threshold;
        let hit_m = minus.abs() < threshold;
        out.per_sign[0] += hit_p as usize;
        out.per_sign[1] += hit_m as usize;
        if hit_p || hit_m {
            out.count += 1;
            let (xi, value) = if plus.abs() <= minus.abs() { (1, plus) } else { (-1, minus) };
            out.witnesses.push(ClusterWitness {
                k: e.k.clone(),
                n: e.n.clone(),
                xi,
                value,
            });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSweep {
    pub max_count: usize,
    pub max_per_sign: [usize; 2],
    pub argmax_sigma: f64,
    pub witnesses: Vec<ClusterWitness>,
}

/// Maximum of [`clustering_count`] over a grid of `sigma`.
pub fn clustering_grid_max(params: &ModelParams, sigmas: &[f64], l: i64, threshold: f64) -> Result<ClusterSweep> {
    let table = diagonal_table(params, l)?;
    let mut best = ClusterSweep {
        max_count: 0,
        max_per_sign: [0, 0],
        argmax_sigma: sigmas.first().copied().unwrap_or(0.0),
        witnesses: Vec::new(),
    };
    for &s in sigmas {
        let c = count_at(&table, s, threshold);
        best.max_per_sign[0] = best.max_per_sign[0].max(c.per_sign[0]);
        best.max_per_sign[1] = best.max_per_sign[1].max(c.per_sign[1]);
        if c.count > best.max_count {
            best.max_count = c.count;
            best.argmax_sigma = s;
            best.witnesses = c.witnesses;
        }
    }
    Ok(best)
}

/// Exact `sup_sigma` of the per-sign counts, by sweeping the open resonance
/// intervals `|xi(sigma + k.omega0) + mu_n| < threshold`.
pub fn clustering_sup_per_sign(params: &ModelParams, l: i64, threshold: f64) -> Result<[usize; 2]> {
    let table = diagonal_table(params, l)?;
    let mut out = [0usize; 2];
    for (slot, sign) in [(0usize, 1.0f64), (1, -1.0)] {
        // xi = +1: sigma in (-kw - mu - t, -kw - mu + t); xi = -1: (mu - kw - t, mu - kw + t).
        let mut events: Vec<(f64, i32)> = Vec::with_capacity(2 * table.len());
        for e in &table {
            let c = -e.kw - sign * e.mu;
            events.push((c - threshold, 1));
            events.push((c + threshold, -1));
        }
        // Closing events sort first at ties since the intervals are open.
        events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut cur = 0i32;
        let mut best = 0i32;
        for (_, delta) in events {
            cur += delta;
            best = best.max(cur);
        }
        out[slot] = best.max(0) as usize;
    }
    Ok(out)
}

/// Uniform grid of `m` points on `[lo, hi]`.
pub fn uniform_grid(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![lo];
    }
    (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeta_values() {
        assert_eq!(km_zeta(1), 4.0);
        assert!((km_bound(1, 1.0, 0.01) - 0.04).abs() < 1e-15);
        assert!((km_zeta(2) - 14.696938456699069).abs() < 1e-12);
    }

    #[test]
    fn sublevel_of_identity_and_constant() {
        let m = sublevel_measure_1d(|x| x, 0.0, 1.0, 0.25, 1001).unwrap();
        assert!((m - 0.25).abs() < 1e-3);
        assert_eq!(sublevel_measure_1d(|_| 1.0, 0.0, 1.0, 0.5, 1001).unwrap(), 0.0);
        assert!(sublevel_measure_1d(|x| x, 0.0, 1.0, 0.5, 10).is_err());
        assert!(matches!(
            sublevel_measure_1d(|x| 1.0 / (x - 0.5), 0.0, 1.0, 0.5, 1001),
            Err(Error::NonFinite(500))
        ));
    }

    #[test]
    fn bgg_scalar_and_unit_cases() {
        let r = bgg_check(&[vec![3.0]], &[2.0]).unwrap();
        assert_eq!((r.lhs, r.rhs), (6.0, 6.0));
        assert!(r.holds);
        let r = bgg_check(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[1.0, 1.0]).unwrap();
        assert_eq!(r.lhs, 1.0);
        assert!((r.rhs - 0.5).abs() < 1e-15);
        assert!(bgg_check(&[vec![1.0, 2.0], vec![2.0, 4.0]], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn bareiss_matches_hand_value() {
        assert_eq!(bareiss_det(vec![vec![2, 1, 0], vec![1, 3, 1], vec![0, 1, 4]]), 18);
        assert_eq!(bareiss_det(vec![vec![0, 1], vec![1, 0]]), -1);
    }

    #[test]
    fn unknown_predicate() {
        let p = ModelParams::reference();
        assert!(matches!(
            estimate_excluded_measure("nope", &p, &DiophParams::default(), 1000, 1),
            Err(Error::UnknownPredicate(_))
        ));
    }

    #[test]
    fn wilson_contains_estimate() {
        let (lo, hi) = wilson_interval(30, 1000);
        assert!(lo < 0.03 && 0.03 < hi);
        assert_eq!(wilson_interval(0, 100).0, 0.0);
    }
}
