//! Time-domain check of constructed solutions: reconstruct `u(t,n)` from the
//! Fourier series and integrate the lattice NLS directly on a finite box.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Region, Sign};
use crate::linalg::C64;
use crate::potential::ModelParams;
use crate::solver::Solution;

/// Complex values on the box `[lo, hi]` of `Z^d`, lexicographic order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeField {
    pub lo: Vec<i64>,
    pub hi: Vec<i64>,
    pub values: Vec<C64>,
}

impl LatticeField {
    pub fn zeros(lo: Vec<i64>, hi: Vec<i64>) -> Result<Self> {
        let n = Region::rectangle(lo.clone(), hi.clone())?.len();
        Ok(LatticeField {
            lo,
            hi,
            values: vec![C64::default(); n],
        })
    }

    pub fn points(&self) -> Vec<Vec<i64>> {
        Region::rectangle(self.lo.clone(), self.hi.clone())
            .map(|r| r.points())
            .unwrap_or_default()
    }

    pub fn index_of(&self, n: &[i64]) -> Option<usize> {
        let mut idx = 0usize;
        for j in 0..self.lo.len() {
            if n[j] < self.lo[j] || n[j] > self.hi[j] {
                return None;
            }
            idx = idx * (self.hi[j] - self.lo[j] + 1) as usize + (n[j] - self.lo[j]) as usize;
        }
        Some(idx)
    }

    pub fn get(&self, n: &[i64]) -> C64 {
        self.index_of(n).map_or(C64::default(), |i| self.values[i])
    }

    pub fn norm2(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `sum_{|n| > r} |u(n)|^2`.
    pub fn tail_mass(&self, r: i64) -> f64 {
        self.points()
            .iter()
            .zip(&self.values)
            .filter(|(p, _)| p.iter().map(|x| x.abs()).max().unwrap_or(0) > r)
            .map(|(_, v)| v.norm_sqr())
            .fold(0.0, |a, b| a + b)
    }

    pub fn max_diff(&self, other: &LatticeField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Halos of zero padding around the solution support.
pub const BOX_HALOS: i64 = 2;

/// The integration box: the `n`-support of the solution plus two halos.
pub fn solution_box(solution: &Solution) -> (Vec<i64>, Vec<i64>) {
    let d = solution.params.d();
    let mut lo = vec![i64::MAX; d];
    let mut hi = vec![i64::MIN; d];
    for s in solution.state.coeffs().keys() {
        for j in 0..d {
            lo[j] = lo[j].min(s.n[j]);
            hi[j] = hi[j].max(s.n[j]);
        }
    }
    if solution.state.is_empty() {
        lo = vec![0; d];
        hi = vec![0; d];
    }
    (
        lo.into_iter().map(|x| x - BOX_HALOS).collect(),
        hi.into_iter().map(|x| x + BOX_HALOS).collect(),
    )
}

/// `u(t,n) = sum_k u_hat(k,n) e^{i k.omega t}` on the given box.
pub fn reconstruct_on(solution: &Solution, t: f64, lo: &[i64], hi: &[i64]) -> Result<LatticeField> {
    let mut f = LatticeField::zeros(lo.to_vec(), hi.to_vec())?;
    for (s, v) in solution.state.coeffs() {
        if s.xi != Sign::Plus {
            continue;
        }
        if let Some(i) = f.index_of(&s.n) {
            let phase: f64 = s.k.iter().zip(&solution.omega).map(|(k, w)| *k as f64 * w).sum::<f64>() * t;
            f.values[i] += v * C64::from_polar(1.0, phase);
        }
    }
    Ok(f)
}

pub fn reconstruct(solution: &Solution, t: f64) -> Result<LatticeField> {
    let (lo, hi) = solution_box(solution);
    reconstruct_on(solution, t, &lo, &hi)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Rk4,
    /// Gragg-Bulirsch-Stoer extrapolation over substeps 2, 4, 6, 8.
    Gbs8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<LatticeField>,
    pub method: Method,
    pub dt: f64,
    /// `| ||u(T)|| - ||u(0)|| | / ||u(0)||`.
    pub norm_drift: f64,
}

impl Trajectory {
    /// Rows `t, n_1..n_d, re, im`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let d = self.states.first().map_or(0, |s| s.lo.len());
        out.push('t');
        for j in 1..=d {
            let _ = write!(out, ",n{j}");
        }
        out.push_str(",re,im\n");
        for (t, s) in self.times.iter().zip(&self.states) {
            for (p, v) in s.points().iter().zip(&s.values) {
                let _ = write!(out, "{t:e}");
                for x in p {
                    let _ = write!(out, ",{x}");
                }
                let _ = writeln!(out, ",{:e},{:e}", v.re, v.im);
            }
        }
        out
    }
}

struct Rhs {
    potential: Vec<f64>,
    neighbors: Vec<Vec<usize>>,
    epsilon: f64,
    delta: f64,
    p: u32,
}

impl Rhs {
    fn new(field: &LatticeField, params: &ModelParams) -> Self {
        let pts = field.points();
        let index: HashMap<&[i64], usize> = pts.iter().enumerate().map(|(i, p)| (p.as_slice(), i)).collect();
        let neighbors = pts
            .iter()
            .map(|p| {
                let mut out = Vec::new();
                for j in 0..p.len() {
                    for step in [-1, 1] {
                        let mut q = p.clone();
                        q[j] += step;
                        if let Some(&i) = index.get(q.as_slice()) {
                            out.push(i);
                        }
                    }
                }
                out
            })
            .collect();
        Rhs {
            potential: pts.iter().map(|p| params.mu(p)).collect(),
            neighbors,
            epsilon: params.epsilon,
            delta: params.delta,
            p: params.p,
        }
    }

    /// `u' = i (eps Delta u + V u + delta |u|^{2p} u)`.
    fn eval(&self, u: &[C64], out: &mut [C64]) {
        let i = C64::new(0.0, 1.0);
        for s in 0..u.len() {
            let lap: C64 = self.neighbors[s].iter().map(|&j| u[j]).sum();
            let nl = u[s].norm_sqr().powi(self.p as i32);
            out[s] = i * (lap * self.epsilon + u[s] * (self.potential[s] + self.delta * nl));
        }
    }
}

fn axpy(y: &[C64], a: f64, x: &[C64]) -> Vec<C64> {
    y.iter().zip(x).map(|(y, x)| y + x * a).collect()
}

fn rk4_step(f: &Rhs, u: &mut Vec<C64>, h: f64, buf: &mut [Vec<C64>; 4]) {
    let [k1, k2, k3, k4] = buf;
    f.eval(u, k1);
    f.eval(&axpy(u, h / 2.0, k1), k2);
    f.eval(&axpy(u, h / 2.0, k2), k3);
    f.eval(&axpy(u, h, k3), k4);
    for s in 0..u.len() {
        u[s] += (k1[s] + k2[s] * 2.0 + k3[s] * 2.0 + k4[s]) * (h / 6.0);
    }
}

const GBS_SEQUENCE: [usize; 4] = [2, 4, 6, 8];

fn modified_midpoint(f: &Rhs, u: &[C64], h: f64, steps: usize) -> Vec<C64> {
    let sub = h / steps as f64;
    let mut k = vec![C64::default(); u.len()];
    f.eval(u, &mut k);
    let mut prev = u.to_vec();
    let mut cur = axpy(u, sub, &k);
    for _ in 1..steps {
        f.eval(&cur, &mut k);
        let next = axpy(&prev, 2.0 * sub, &k);
        prev = std::mem::replace(&mut cur, next);
    }
    f.eval(&cur, &mut k);
    (0..u.len()).map(|s| (prev[s] + cur[s] + k[s] * sub) * 0.5).collect()
}

fn gbs_step(f: &Rhs, u: &mut Vec<C64>, h: f64) {
    // Neville tableau in h^2; `prev[k]` is T_{j-1,k}.
    let mut prev: Vec<Vec<C64>> = Vec::new();
    for (j, &nj) in GBS_SEQUENCE.iter().enumerate() {
        let mut row = vec![modified_midpoint(f, u, h, nj)];
        for k in 1..=j {
            let ratio = (nj as f64 / GBS_SEQUENCE[j - k] as f64).powi(2) - 1.0;
            let next: Vec<C64> = row[k - 1].iter().zip(&prev[k - 1]).map(|(a, b)| a + (a - b) / ratio).collect();
            row.push(next);
        }
        prev = row;
    }
    *u = prev.pop().expect("non-empty tableau");
}

/// Integrate `i u' = -(eps Delta + V) u - delta |u|^{2p} u` on the box of `u0`
/// with zero padding outside. Records every `record_every` steps plus the
/// final time.
pub fn integrate(u0: &LatticeField, params: &ModelParams, t_end: f64, dt: f64, method: Method, record_every: usize) -> Result<Trajectory> {
    if !(dt > 0.0) || !(t_end >= 0.0) || record_every == 0 {
        return Err(Error::InvalidArgument("need dt > 0, T >= 0 and record_every >= 1".into()));
    }
    let f = Rhs::new(u0, params);
    let steps = (t_end / dt).round() as usize;
    let initial = u0.norm2();
    let mut u = u0.values.clone();
    let mut buf = [0, 1, 2, 3].map(|_| vec![C64::default(); u.len()]);
    let mut times = vec![0.0];
    let mut states = vec![u0.clone()];
    for step in 1..=steps {
        match method {
            Method::Rk4 => rk4_step(&f, &mut u, dt, &mut buf),
            Method::Gbs8 => gbs_step(&f, &mut u, dt),
        }
        let t = step as f64 * dt;
        let norm = u.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > 10.0 * initial.max(f64::MIN_POSITIVE) {
            return Err(Error::BlowUp { time: t, norm, initial });
        }
        if step % record_every == 0 || step == steps {
            times.push(t);
            states.push(LatticeField {
                lo: u0.lo.clone(),
                hi: u0.hi.clone(),
                values: u.clone(),
            });
        }
    }
    let final_norm = states.last().map_or(initial, LatticeField::norm2);
    Ok(Trajectory {
        times,
        states,
        method,
        dt,
        norm_drift: if initial > 0.0 { (final_norm - initial).abs() / initial } else { 0.0 },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub method: Method,
    /// Radius beyond which the tail mass is measured.
    pub tail_radius: i64,
    /// Number of recorded times compared against the series.
    pub samples: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            method: Method::Rk4,
            tail_radius: 8,
            samples: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    /// Always `"empirical"`: the budget is measured, not proved.
    pub label: String,
    pub deviation_sup: f64,
    /// `1e-6 + 10 T residual`.
    pub budget: f64,
    pub norm_drift: f64,
    pub tail_radius: i64,
    pub tail_mass_initial: f64,
    pub tail_mass_max: f64,
    pub box_lo: Vec<i64>,
    pub box_hi: Vec<i64>,
    pub within_budget: bool,
}

/// Integrate `reconstruct(solution, 0)` and compare with the series.
pub fn verify(solution: &Solution, t_end: f64, dt: f64, opts: &VerifyOptions) -> Result<VerifyReport> {
    let (lo, hi) = solution_box(solution);
    let u0 = reconstruct_on(solution, 0.0, &lo, &hi)?;
    let steps = (t_end / dt).round().max(1.0) as usize;
    let every = (steps / opts.samples.max(1)).max(1);
    let traj = integrate(&u0, &solution.params, t_end, dt, opts.method, every)?;
    let mut deviation = 0.0f64;
    let mut tail_max = 0.0f64;
    for (t, s) in traj.times.iter().zip(&traj.states) {
        let exact = reconstruct_on(solution, *t, &lo, &hi)?;
        deviation = deviation.max(s.max_diff(&exact));
        tail_max = tail_max.max(s.tail_mass(opts.tail_radius));
    }
    let budget = 1e-6 + 10.0 * t_end * solution.certificates.residual;
    Ok(VerifyReport {
        label: "empirical".into(),
        deviation_sup: deviation,
        budget,
        norm_drift: traj.norm_drift,
        tail_radius: opts.tail_radius,
        tail_mass_initial: u0.tail_mass(opts.tail_radius),
        tail_mass_max: tail_max,
        box_lo: lo,
        box_hi: hi,
        within_budget: deviation <= budget,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{Term, TrigPoly};

    fn decoupled() -> ModelParams {
        let mut p = ModelParams::reference();
        p.epsilon = 0.0;
        p.delta = 0.0;
        p
    }

    #[test]
    fn decoupled_matches_phase_rotation() {
        let p = decoupled();
        let mut u0 = LatticeField::zeros(vec![-3], vec![3]).unwrap();
        for (i, v) in u0.values.iter_mut().enumerate() {
            *v = C64::new(1.0 + i as f64, -0.5);
        }
        let traj = integrate(&u0, &p, 1.0, 1e-2, Method::Rk4, 100).unwrap();
        let last = traj.states.last().unwrap();
        for (pt, v) in u0.points().iter().zip(&u0.values) {
            let exact = v * C64::from_polar(1.0, p.mu(pt));
            assert!((last.get(pt) - exact).norm() < 1e-9);
        }
    }

    #[test]
    fn gbs_beats_rk4_at_coarse_step() {
        let mut p = ModelParams::reference();
        p.potential = TrigPoly::new(1, 1, vec![Term { l: vec![1], v: 0.0, phase: 0.0 }]);
        p.epsilon = 0.5;
        p.delta = 0.0;
        let mut u0 = LatticeField::zeros(vec![-20], vec![20]).unwrap();
        u0.values[20] = C64::new(1.0, 0.0);
        let fine = integrate(&u0, &p, 1.0, 1e-3, Method::Rk4, 1000).unwrap();
        let rk = integrate(&u0, &p, 1.0, 0.1, Method::Rk4, 10).unwrap();
        let gbs = integrate(&u0, &p, 1.0, 0.1, Method::Gbs8, 10).unwrap();
        let reference = fine.states.last().unwrap();
        let e_rk = rk.states.last().unwrap().max_diff(reference);
        let e_gbs = gbs.states.last().unwrap().max_diff(reference);
        assert!(e_gbs < e_rk / 100.0, "gbs {e_gbs:e} rk4 {e_rk:e}");
    }

    #[test]
    fn blow_up_is_reported() {
        let mut p = decoupled();
        p.delta = 0.9;
        p.p = 3;
        let mut u0 = LatticeField::zeros(vec![0], vec![0]).unwrap();
        u0.values[0] = C64::new(30.0, 0.0);
        // The modulus is conserved by the exact flow; a huge step destroys that.
        assert!(matches!(integrate(&u0, &p, 10.0, 0.5, Method::Rk4, 1), Err(Error::BlowUp { .. })));
    }
}
