//! The registration objective `H(v) = ∫‖Lv‖² dt + ‖T⋄h − D‖²` and a
//! finite-difference descent over a sine-series parameterization of `v`.

mod basis;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use basis::FourierBasis;

use crate::error::{Error, Result};
use crate::fields::{
    apply_l, f_norm_sq, probe_quotients, FieldView, GridSpec, LipschitzEstimate, TensorImage,
    ThirdJet, VelocityField,
};
use crate::flow::{build_h_and_inverse, flow_endpoints, flow_map, DeformationPair, FlowResult};
use crate::reorient::{fs_transform, ssd};

/// Time discretization and mode count of the velocity parameterization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisSpec {
    /// Sine modes per axis.
    pub modes: usize,
    /// Time samples of `v`.
    pub nt: usize,
    /// Flow horizon.
    pub tau: f64,
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self {
            modes: 3,
            nt: 2,
            tau: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArmijoParams {
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Step shrink factor per rejected trial.
    pub backtrack: f64,
    /// Length of the first trial step in coefficient units.
    pub initial_step: f64,
    pub max_backtracks: usize,
}

impl Default for ArmijoParams {
    fn default() -> Self {
        Self {
            c1: 1e-4,
            backtrack: 0.5,
            initial_step: 0.5,
            max_backtracks: 30,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    /// RK4 steps for each of the two flows.
    pub nsteps_flow: usize,
    pub coeff_basis: BasisSpec,
    pub max_iter: usize,
    pub armijo: ArmijoParams,
    /// Central-difference step per coefficient.
    pub grad_eps: f64,
    /// Stop once an accepted step lowers `H` by less than this. `None` means
    /// `1e-8 · H(0)`.
    pub stop_tol: Option<f64>,
    /// Multiplier on the regularizer.
    pub reg_weight: f64,
    /// Random pairs for the smoothness probe of the final deformation.
    pub probe_pairs: usize,
    pub seed: u64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            nsteps_flow: 4,
            coeff_basis: BasisSpec::default(),
            max_iter: 15,
            armijo: ArmijoParams::default(),
            grad_eps: 1e-4,
            stop_tol: None,
            reg_weight: 1.0,
            probe_pairs: 2000,
            seed: 0,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.armijo;
        let b = &self.coeff_basis;
        let checks: [(bool, &str); 10] = [
            (self.nsteps_flow >= 1, "nsteps_flow must be at least 1"),
            (b.modes >= 1, "coeff_basis.modes must be at least 1"),
            (b.nt >= 2, "coeff_basis.nt must be at least 2"),
            (
                b.tau > 0.0 && b.tau.is_finite(),
                "coeff_basis.tau must be positive",
            ),
            (a.c1 > 0.0 && a.c1 < 1.0, "armijo.c1 must lie in (0, 1)"),
            (
                a.backtrack > 0.0 && a.backtrack < 1.0,
                "armijo.backtrack must lie in (0, 1)",
            ),
            (
                a.initial_step > 0.0 && a.initial_step.is_finite(),
                "armijo.initial_step must be positive",
            ),
            (
                self.grad_eps > 0.0 && self.grad_eps.is_finite(),
                "grad_eps must be positive",
            ),
            (
                self.stop_tol.is_none_or(|t| t > 0.0 && t.is_finite()),
                "stop_tol must be positive",
            ),
            (
                self.reg_weight > 0.0 && self.reg_weight.is_finite(),
                "reg_weight must be positive",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::BadConfig(msg.into()));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::BadConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One objective evaluation.
#[derive(Clone, Debug)]
pub struct Evaluation {
    /// `‖v‖²_F`, unweighted.
    pub reg: f64,
    pub data: f64,
    /// `reg_weight · reg + data`.
    pub total: f64,
    pub min_det: f64,
    pub deformation: DeformationPair,
}

/// Evaluates `H(v)` for a velocity field on the image grid.
pub fn evaluate(
    v: &VelocityField,
    t: &TensorImage,
    d: &TensorImage,
    cfg: &ObjectiveConfig,
) -> Result<Evaluation> {
    if !t.grid().same_space(d.grid()) || !t.grid().same_space(v.grid()) {
        return Err(Error::GridMismatch);
    }
    let reg = f_norm_sq(v);
    let pair = build_h_and_inverse(v, cfg.nsteps_flow)?;
    let moved = fs_transform(t, &pair.h, pair.jacobian_field())?;
    let data = ssd(&moved, d)?;
    let total = if cfg.reg_weight == 1.0 {
        reg + data
    } else {
        cfg.reg_weight * reg + data
    };
    if !total.is_finite() {
        return Err(Error::NonFinite("objective"));
    }
    let min_det = pair.h.min_det().min(pair.h_inv.min_det());
    Ok(Evaluation {
        reg,
        data,
        total,
        min_det,
        deformation: pair,
    })
}

/// Why [`minimize`] stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    /// Decrease fell below `stop_tol`, the gradient vanished, or no step along
    /// the negative gradient passed the Armijo test.
    Converged,
    /// `max_iter` iterations without meeting the stopping rule.
    BudgetExhausted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub total: f64,
    pub reg: f64,
    pub data: f64,
    /// Accepted step length along `−g`; zero for the starting point.
    pub step: f64,
    /// Euclidean norm of the gradient evaluated at the previous iterate.
    pub grad_norm: f64,
    /// Smallest `det Θ` over both flows at this iterate.
    pub min_det: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub reg: f64,
    pub data: f64,
    pub total: f64,
    pub initial_total: f64,
    pub stop_tol: f64,
    pub status: Status,
    pub iterations: usize,
    pub evaluations: usize,
    pub trace: Vec<TraceEntry>,
    /// Continuity quotients of the displacement `h(x) − x`.
    pub displacement_probe: Option<LipschitzEstimate>,
    pub coefficients: Vec<f64>,
}

/// `‖v(c)‖²_F` as a quadratic form. The Gram matrix of the sine basis is block
/// diagonal over (time sample, component) with one shared scalar block.
struct RegularizerForm {
    block: Vec<f64>,
    weights: Vec<f64>,
    size: usize,
}

impl RegularizerForm {
    fn new(basis: &FourierBasis) -> Result<Self> {
        let g = basis.grid();
        let size = basis.modes_per_component();
        let jets: Vec<ThirdJet> = (0..size)
            .into_par_iter()
            .map(|k| apply_l(&basis.basis_field(k)?, 0))
            .collect::<Result<_>>()?;
        let scalar = |j: &ThirdJet, k: &ThirdJet| -> f64 {
            j.values
                .iter()
                .zip(&k.values)
                .enumerate()
                .map(|(idx, (a, b))| g.node_weight(idx) * dot10(&a[0], &b[0]))
                .sum()
        };
        let mut block = vec![0.0; size * size];
        for a in 0..size {
            for b in a..size {
                let s = scalar(&jets[a], &jets[b]);
                block[a * size + b] = s;
                block[b * size + a] = s;
            }
        }
        let dt = g.tau / (g.nt - 1) as f64;
        let vol = g.cell_volume();
        let weights = (0..g.nt)
            .map(|ti| {
                if ti == 0 || ti == g.nt - 1 {
                    0.5 * dt * vol
                } else {
                    dt * vol
                }
            })
            .collect();
        Ok(Self {
            block,
            weights,
            size,
        })
    }

    fn value(&self, c: &[f64]) -> f64 {
        let n = self.size;
        let mut total = 0.0;
        for (chunk_idx, chunk) in c.chunks_exact(n).enumerate() {
            let w = self.weights[chunk_idx / 3];
            let mut q = 0.0;
            for (a, ca) in chunk.iter().enumerate() {
                if *ca == 0.0 {
                    continue;
                }
                let row = &self.block[a * n..(a + 1) * n];
                q += ca * row.iter().zip(chunk).map(|(g, cb)| g * cb).sum::<f64>();
            }
            total += w * q;
        }
        total
    }
}

fn dot10(a: &[f64; 10], b: &[f64; 10]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A fixed registration problem: images, basis and configuration.
pub struct Problem<'a> {
    pub floating: &'a TensorImage,
    pub target: &'a TensorImage,
    pub basis: FourierBasis,
    pub cfg: ObjectiveConfig,
    reg_form: RegularizerForm,
}

impl<'a> Problem<'a> {
    pub fn new(
        floating: &'a TensorImage,
        target: &'a TensorImage,
        cfg: ObjectiveConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if !floating.grid().same_space(target.grid()) {
            return Err(Error::GridMismatch);
        }
        let b = cfg.coeff_basis;
        let grid = floating.grid().with_time(b.tau, b.nt)?;
        let basis = FourierBasis::new(grid, b.modes)?;
        let reg_form = RegularizerForm::new(&basis)?;
        Ok(Self {
            floating,
            target,
            basis,
            cfg,
            reg_form,
        })
    }

    pub fn n_coeffs(&self) -> usize {
        self.basis.n_coeffs()
    }

    pub fn grid(&self) -> &GridSpec {
        self.basis.grid()
    }

    pub fn velocity(&self, coeffs: &[f64]) -> Result<VelocityField> {
        self.basis.synthesize(coeffs)
    }

    pub fn evaluate(&self, coeffs: &[f64]) -> Result<Evaluation> {
        evaluate(
            &self.velocity(coeffs)?,
            self.floating,
            self.target,
            &self.cfg,
        )
    }

    /// `‖v(c)‖²_F` from the precomputed quadratic form. Agrees with
    /// [`f_norm_sq`] up to roundoff.
    pub fn regularizer(&self, coeffs: &[f64]) -> f64 {
        self.reg_form.value(coeffs)
    }

    /// The total of [`evaluate`](Self::evaluate) computed for gradient
    /// probes: the regularizer comes from the quadratic form and `h` is
    /// integrated without its Jacobian, which leaves its endpoints unchanged.
    /// `det Θ > 0` is still enforced for `h⁻¹`.
    pub fn total(&self, coeffs: &[f64]) -> Result<f64> {
        let v = self.velocity(coeffs)?;
        let g = v.grid();
        let n = self.cfg.nsteps_flow;
        let h_inv = flow_map(&v, 0.0, g.tau, n)?;
        h_inv.check_positive()?;
        let mut h = FlowResult::identity(*g);
        h.t_from = g.tau;
        h.endpoints = flow_endpoints(&v, g.tau, 0.0, n)?;
        let data = ssd(
            &fs_transform(self.floating, &h, &h_inv.jacobians)?,
            self.target,
        )?;
        let total = self.cfg.reg_weight * self.regularizer(coeffs) + data;
        if !total.is_finite() {
            return Err(Error::NonFinite("objective"));
        }
        Ok(total)
    }

    /// Central-difference gradient of the total with step `eps`.
    pub fn gradient(&self, coeffs: &[f64], eps: f64) -> Result<Vec<f64>> {
        fd_gradient(|c| self.total(c), coeffs, eps)
    }
}

/// `(f(c + ε eᵢ) − f(c − ε eᵢ)) / 2ε` for every coordinate, evaluated in
/// parallel.
pub fn fd_gradient<F>(f: F, c: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    (0..c.len())
        .into_par_iter()
        .map(|i| {
            let mut p = c.to_vec();
            p[i] = c[i] + eps;
            let fp = f(&p)?;
            p[i] = c[i] - eps;
            let fm = f(&p)?;
            Ok((fp - fm) / (2.0 * eps))
        })
        .collect()
}

/// Richardson self-consistency of the finite-difference gradient: the largest
/// change between steps `grad_eps` and `grad_eps / 2`, relative to the largest
/// gradient entry.
pub fn grad_check(problem: &Problem<'_>, coeffs: &[f64]) -> Result<f64> {
    let eps = problem.cfg.grad_eps;
    let g1 = problem.gradient(coeffs, eps)?;
    let g2 = problem.gradient(coeffs, 0.5 * eps)?;
    Ok(max_relative_gap(&g1, &g2))
}

/// `max |aᵢ − bᵢ| / max |aᵢ|`, or the raw gap when `a` vanishes.
pub fn max_relative_gap(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let gap = a
        .iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale > 0.0 {
        gap / scale
    } else {
        gap
    }
}

/// Matrix of `f_inner` between basis fields, so `‖v(c)‖²_F = cᵀ G c`.
///
/// Costs one third-order jet per basis field and time sample; meant for small
/// bases.
pub fn gram_matrix(basis: &FourierBasis) -> Result<Vec<Vec<f64>>> {
    let n = basis.n_coeffs();
    let g = basis.grid();
    let dt = g.tau / (g.nt - 1) as f64;
    let vol = g.cell_volume();
    let jets: Vec<Vec<ThirdJet>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let f = basis.basis_field(i)?;
            (0..g.nt).map(|ti| apply_l(&f, ti)).collect()
        })
        .collect::<Result<_>>()?;
    let mut gram = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let mut s = 0.0;
            for ti in 0..g.nt {
                let w = if ti == 0 || ti == g.nt - 1 {
                    0.5 * dt
                } else {
                    dt
                };
                s += w * vol * jets[i][ti].dot(&jets[j][ti]);
            }
            gram[i][j] = s;
            gram[j][i] = s;
        }
    }
    Ok(gram)
}

/// Continuity quotients of `h(x) − x` over random pairs in the domain.
pub fn displacement_probe(pair: &DeformationPair, npairs: usize, seed: u64) -> LipschitzEstimate {
    let g = pair.h.grid;
    let disp = pair.h.displacements();
    let view = FieldView::single(&g, &disp);
    probe_quotients(
        |x| view.value(x),
        |x| view.gradient(x),
        npairs,
        seed,
        g.origin,
        g.upper(),
    )
}

/// Gradient descent from `v = 0` with Armijo backtracking.
///
/// The first trial step has length `armijo.initial_step`; later trial steps
/// use the Barzilai–Borwein length `sᵀs / sᵀy` and backtrack from there.
/// Evaluations that fail (for instance a non-positive Jacobian) count as
/// rejected trials.
pub fn minimize(
    t: &TensorImage,
    d: &TensorImage,
    cfg: &ObjectiveConfig,
) -> Result<(VelocityField, ObjectiveReport)> {
    let problem = Problem::new(t, d, *cfg)?;
    minimize_problem(&problem)
}

pub fn minimize_problem(problem: &Problem<'_>) -> Result<(VelocityField, ObjectiveReport)> {
    let cfg = &problem.cfg;
    let n = problem.n_coeffs();
    let mut c = vec![0.0; n];
    let mut cur = problem.evaluate(&c)?;
    let mut evaluations = 1;
    let initial_total = cur.total;
    let stop_tol = cfg.stop_tol.unwrap_or(1e-8 * initial_total);
    let mut trace = vec![TraceEntry {
        iteration: 0,
        total: cur.total,
        reg: cur.reg,
        data: cur.data,
        step: 0.0,
        grad_norm: 0.0,
        min_det: cur.min_det,
    }];
    let mut status = Status::BudgetExhausted;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut iterations = 0;

    if initial_total == 0.0 {
        status = Status::Converged;
    }
    while status == Status::BudgetExhausted && iterations < cfg.max_iter {
        let g = problem.gradient(&c, cfg.grad_eps)?;
        evaluations += 2 * n;
        let gg: f64 = g.iter().map(|x| x * x).sum();
        let gnorm = gg.sqrt();
        if gnorm == 0.0 {
            status = Status::Converged;
            break;
        }
        let mut alpha = cfg.armijo.initial_step / gnorm;
        if let Some((pc, pg)) = &prev {
            let s: Vec<f64> = c.iter().zip(pc).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = g.iter().zip(pg).map(|(a, b)| a - b).collect();
            let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
            if sy > 0.0 {
                alpha = s.iter().map(|a| a * a).sum::<f64>() / sy;
            }
        }
        let mut accepted = None;
        for _ in 0..=cfg.armijo.max_backtracks {
            let trial: Vec<f64> = c.iter().zip(&g).map(|(ci, gi)| ci - alpha * gi).collect();
            evaluations += 1;
            if let Ok(e) = problem.evaluate(&trial) {
                if e.total <= cur.total - cfg.armijo.c1 * alpha * gg && e.total < cur.total {
                    accepted = Some((trial, e));
                    break;
                }
            }
            alpha *= cfg.armijo.backtrack;
        }
        let Some((next_c, next)) = accepted else {
            status = Status::Converged;
            break;
        };
        iterations += 1;
        let decrease = cur.total - next.total;
        trace.push(TraceEntry {
            iteration: iterations,
            total: next.total,
            reg: next.reg,
            data: next.data,
            step: alpha * gnorm,
            grad_norm: gnorm,
            min_det: next.min_det,
        });
        prev = Some((std::mem::replace(&mut c, next_c), g));
        cur = next;
        if decrease < stop_tol {
            status = Status::Converged;
        }
    }

    let probe = (cfg.probe_pairs > 0)
        .then(|| displacement_probe(&cur.deformation, cfg.probe_pairs, cfg.seed));
    let v = problem.velocity(&c)?;
    let report = ObjectiveReport {
        reg: cur.reg,
        data: cur.data,
        total: cur.total,
        initial_total,
        stop_tol,
        status,
        iterations,
        evaluations,
        trace,
        displacement_probe: probe,
        coefficients: c,
    };
    Ok((v, report))
}
