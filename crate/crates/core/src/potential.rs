//! Trigonometric-polynomial potentials and the model parameters built on them.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TAU: f64 = 2.0 * PI;

/// One term `v cos(2 pi l.x + phase)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub l: Vec<i64>,
    pub v: f64,
    #[serde(default)]
    pub phase: f64,
}

/// `V(x) = sum_l v_l cos(2 pi l.x + phase_l)` on `T^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigPoly {
    pub d: usize,
    #[serde(rename = "K")]
    pub k_max: i64,
    pub terms: Vec<Term>,
}

impl TrigPoly {
    pub fn new(d: usize, k_max: i64, terms: Vec<Term>) -> Self {
        TrigPoly { d, k_max, terms }
    }

    /// `cos 2 pi x_1` on `T^1`.
    pub fn cosine() -> Self {
        TrigPoly::new(
            1,
            1,
            vec![Term {
                l: vec![1],
                v: 1.0,
                phase: 0.0,
            }],
        )
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| t.v * (TAU * dot_if(&t.l, x) + t.phase).cos())
            .sum()
    }

    pub fn coefficient_l1(&self) -> f64 {
        self.terms.iter().map(|t| t.v.abs()).sum()
    }
}

fn dot_if(l: &[i64], x: &[f64]) -> f64 {
    l.iter().zip(x).map(|(a, b)| *a as f64 * b).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationFailure {
    pub clause: String,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub failures: Vec<ValidationFailure>,
    /// Non-degeneracy is tested on a sample grid, not proved.
    pub nondegeneracy_is_proxy: bool,
}

const NONDEGEN_GRID: usize = 64;
const NONDEGEN_FROZEN: usize = 8;
const NONDEGEN_TOL: f64 = 1e-12;

/// Check the structural conditions on `V`.
pub fn validate(v: &TrigPoly) -> ValidationReport {
    let mut failures = Vec::new();
    fn push(out: &mut Vec<ValidationFailure>, clause: &str, detail: String) {
        out.push(ValidationFailure {
            clause: clause.to_string(),
            detail,
        })
    }
    if v.d == 0 {
        push(&mut failures, "dimension", "d must be at least 1".into());
    }
    if v.terms.is_empty() || v.terms.iter().all(|t| t.v == 0.0) {
        push(&mut failures, "all coefficients zero", "V has no nonzero term".into());
    }
    for t in &v.terms {
        if t.l.len() != v.d {
            push(&mut failures, 
                "dimension mismatch",
                format!("frequency {:?} has length {} != d = {}", t.l, t.l.len(), v.d),
            );
            continue;
        }
        if !t.v.is_finite() || !t.phase.is_finite() {
            push(&mut failures, "non-finite", format!("term {:?} has a non-finite value", t.l));
        }
        if t.l.iter().any(|c| c.abs() > v.k_max) {
            push(&mut failures, "frequency out of range", format!("{:?} exceeds K = {}", t.l, v.k_max));
        }
        if t.l.iter().any(|c| *c == 0) {
            push(&mut failures, "component zero", format!("frequency {:?} has a zero component", t.l));
        }
    }
    for (i, s) in v.terms.iter().enumerate() {
        for t in &v.terms[i + 1..] {
            if s.l.len() == t.l.len() && s.l.iter().zip(&t.l).all(|(a, b)| a + b == 0) {
                push(&mut failures, "opposite pair", format!("{:?} and {:?} sum to zero", s.l, t.l));
            }
            if s.l == t.l {
                push(&mut failures, "duplicate frequency", format!("{:?} appears twice", s.l));
            }
        }
    }
    if failures.is_empty() {
        for s in 0..v.d {
            if let Some(frozen) = degenerate_direction(v, s) {
                push(&mut failures, 
                    "degenerate",
                    format!("V is constant in theta_{s} at frozen point {frozen:?}"),
                );
            }
        }
    }
    ValidationReport {
        passed: failures.is_empty(),
        failures,
        nondegeneracy_is_proxy: true,
    }
}

fn degenerate_direction(v: &TrigPoly, s: usize) -> Option<Vec<f64>> {
    // Kronecker points for the frozen coordinates.
    let irrationals = [2f64.sqrt(), 3f64.sqrt(), 5f64.sqrt(), 7f64.sqrt(), 11f64.sqrt()];
    for j in 0..NONDEGEN_FROZEN {
        let mut x: Vec<f64> = (0..v.d)
            .map(|c| ((j as f64 + 0.5) * irrationals[c % irrationals.len()]).fract())
            .collect();
        let samples: Vec<f64> = (0..NONDEGEN_GRID)
            .map(|g| {
                x[s] = g as f64 / NONDEGEN_GRID as f64;
                v.eval(&x)
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var = samples.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / samples.len() as f64;
        if var <= NONDEGEN_TOL {
            x[s] = 0.0;
            return Some(x);
        }
    }
    None
}

/// `mu_n = V(theta + n * alpha)` (componentwise product).
pub fn mu(v: &TrigPoly, alpha: &[f64], theta: &[f64], n: &[i64]) -> Result<f64> {
    for len in [alpha.len(), theta.len(), n.len()] {
        if len != v.d {
            return Err(Error::DimensionMismatch { expected: v.d, got: len });
        }
    }
    Ok(mu_unchecked(v, alpha, theta, n))
}

pub(crate) fn mu_unchecked(v: &TrigPoly, alpha: &[f64], theta: &[f64], n: &[i64]) -> f64 {
    let x: Vec<f64> = (0..v.d).map(|s| theta[s] + n[s] as f64 * alpha[s]).collect();
    v.eval(&x)
}

/// Everything that defines the lattice equation and the ansatz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    #[serde(rename = "V")]
    pub potential: TrigPoly,
    pub alpha: Vec<f64>,
    pub theta: Vec<f64>,
    pub epsilon: f64,
    pub delta: f64,
    pub p: u32,
    /// The `b` distinct anchor sites `n_l`.
    pub sites: Vec<Vec<i64>>,
    /// Amplitudes `a_l`.
    pub a: Vec<f64>,
}

impl ModelParams {
    /// One anchor at `n_1 = 0` for `cos 2 pi theta` in `d = 1`.
    pub fn reference() -> Self {
        ModelParams {
            potential: TrigPoly::cosine(),
            alpha: vec![0.4142135623],
            theta: vec![0.17],
            epsilon: 1e-3,
            delta: 1e-3,
            p: 1,
            sites: vec![vec![0]],
            a: vec![1.5],
        }
    }

    pub fn b(&self) -> usize {
        self.sites.len()
    }

    pub fn d(&self) -> usize {
        self.potential.d
    }

    pub fn mu(&self, n: &[i64]) -> f64 {
        mu_unchecked(&self.potential, &self.alpha, &self.theta, n)
    }

    /// Full validation: potential, dimensions and parameter windows.
    pub fn validate(&self) -> Result<()> {
        let report = validate(&self.potential);
        if !report.passed {
            let msgs: Vec<String> = report
                .failures
                .iter()
                .map(|f| format!("{}: {}", f.clause, f.detail))
                .collect();
            return Err(Error::Validation(msgs.join("; ")));
        }
        let d = self.d();
        for (name, v) in [("alpha", &self.alpha), ("theta", &self.theta)] {
            if v.len() != d {
                return Err(Error::Validation(format!("{name} has length {} != d = {d}", v.len())));
            }
            if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::Validation(format!("{name} must lie in [0,1]^d")));
            }
        }
        if !(0.0..1.0).contains(&self.epsilon) || !(0.0..1.0).contains(&self.delta) {
            return Err(Error::Validation("epsilon and delta must lie in [0,1)".into()));
        }
        if self.p == 0 {
            return Err(Error::Validation("p must be a positive integer".into()));
        }
        if self.sites.is_empty() {
            return Err(Error::Validation("at least one anchor site is required".into()));
        }
        if self.a.len() != self.sites.len() {
            return Err(Error::Validation(format!(
                "{} amplitudes for {} sites",
                self.a.len(),
                self.sites.len()
            )));
        }
        if self.a.iter().any(|x| !(1.0..=2.0).contains(x)) {
            return Err(Error::Validation("amplitudes must lie in [1,2]".into()));
        }
        for (i, s) in self.sites.iter().enumerate() {
            if s.len() != d {
                return Err(Error::Validation(format!("site {s:?} has length != d = {d}")));
            }
            if self.sites[..i].contains(s) {
                return Err(Error::Validation(format!("site {s:?} is repeated")));
            }
        }
        Ok(())
    }
}

/// `omega^0_l = mu_{n_l}`.
pub fn base_frequencies(params: &ModelParams) -> Result<Vec<f64>> {
    params
        .sites
        .iter()
        .map(|n| mu(&params.potential, &params.alpha, &params.theta, n))
        .collect()
}
