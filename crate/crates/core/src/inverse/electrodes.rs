//! Electrode angle reconstruction from the sampling formula for the
//! derivative of the measurements with respect to electrode end points.

use serde::{Deserialize, Serialize};

use crate::assembly::{electrode_quadrature, GroundMode, DEFAULT_EPSILON};
use crate::conductivity::AnalyticConductivity;
use crate::error::{Error, Result};
use crate::forward::{CurrentPatterns, ForwardProblem, ForwardSolution, Measurements};
use crate::geometry::{Admittivity, BoundaryShape, ElectrodeLayout};
use crate::inverse::{adjoint_currents, misfit};
use crate::mesh::CartesianMesh;
use crate::solve::SolverOptions;

/// Endpoint sign factors `[s(Θ¹), s(Θ²)]` of the sampling formula, fixed by
/// [`calibrate_endpoint_signs`] on the four-electrode disk: widening an
/// electrode at either end lowers `ĨᵀU` in proportion to the contact term.
pub const ENDPOINT_SIGNS: [f64; 2] = [1.0, -1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EndpointMode {
    /// Θ¹ and Θ² are independent parameters.
    Free,
    /// Θ¹ only; Θ² keeps each electrode's arc length.
    FixedLength,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum End {
    Start,
    Finish,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElectrodeSettings {
    /// Weight of `½‖Θ − Θ_★‖²`.
    pub regularization: f64,
    pub max_iterations: usize,
    /// First and largest trial step (radians along the unit gradient).
    pub initial_step: f64,
    pub min_step: f64,
    pub gradient_tol: f64,
    pub mode: EndpointMode,
    pub ground: GroundMode,
    pub epsilon: f64,
    pub solver: SolverOptions,
}

impl Default for ElectrodeSettings {
    fn default() -> Self {
        Self {
            regularization: 1e-6,
            max_iterations: 200,
            initial_step: 0.1,
            min_step: 1e-8,
            gradient_tol: 1e-6,
            mode: EndpointMode::Free,
            ground: GroundMode::FirstElectrode,
            epsilon: DEFAULT_EPSILON,
            solver: SolverOptions::default(),
        }
    }
}

/// Potential at an electrode end, interpolated linearly in arc length
/// between the boundary points on either side of it (extrapolated from the
/// nearest two when the end lies outside all of them). Points closer than
/// `h/10` in arc length are not used as a pair.
pub fn endpoint_potential(mesh: &CartesianMesh, sol: &ForwardSolution, m: usize, end: End) -> Result<f64> {
    let q = electrode_quadrature(mesh, m)?;
    let target = match end {
        End::Start => 0.0,
        End::Finish => q.length,
    };
    let gap = 0.1 * mesh.h();
    let mut pts: Vec<(f64, f64)> =
        q.points.iter().zip(&q.abscissae).map(|(&b, &s)| (s, sol.boundary_value(b))).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let below = pts.iter().rposition(|p| p.0 <= target);
    let above = pts.iter().position(|p| p.0 > target);
    let pair = match (below, above) {
        (Some(i), Some(j)) if pts[j].0 - pts[i].0 > gap => Some((i, j)),
        _ => None,
    };
    let (i, j) = match pair {
        Some(p) => p,
        None => {
            let i = below.or(above).ok_or(Error::ElectrodeUnresolved(m))?;
            let j = (0..pts.len())
                .filter(|&j| (pts[j].0 - pts[i].0).abs() > gap)
                .min_by(|&a, &b| (pts[a].0 - pts[i].0).abs().total_cmp(&(pts[b].0 - pts[i].0).abs()))
                .ok_or(Error::ElectrodeUnresolved(m))?;
            (i, j)
        }
    };
    let ((si, ui), (sj, uj)) = (pts[i], pts[j]);
    Ok(ui + (target - si) * (uj - ui) / (sj - si))
}

/// `∂Θ²_k/∂Θ¹_k = ρ(Θ¹_k)/ρ(Θ²_k)` for electrodes of fixed arc length.
pub fn fixed_length_jacobian(shape: &BoundaryShape, layout: &ElectrodeLayout) -> Vec<f64> {
    layout
        .theta1()
        .iter()
        .zip(layout.theta2())
        .map(|(&a, &b)| shape.rho(a) / shape.rho(b))
        .collect()
}

/// Forward state at one electrode layout.
#[derive(Debug)]
pub struct ElectrodeEvaluation {
    pub params: Vec<f64>,
    pub layout: ElectrodeLayout,
    pub value: f64,
    pub misfit: f64,
    pub measurements: Measurements,
    solutions: Vec<ForwardSolution>,
    problem: ForwardProblem,
}

impl ElectrodeEvaluation {
    pub fn problem(&self) -> &ForwardProblem {
        &self.problem
    }

    pub fn solutions(&self) -> &[ForwardSolution] {
        &self.solutions
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElectrodeIteration {
    pub n: usize,
    pub value: f64,
    pub gradient_norm: f64,
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElectrodeStop {
    SmallGradient,
    SmallStep,
    IterationLimit,
}

#[derive(Clone, Debug)]
pub struct ElectrodeOutcome {
    pub layout: ElectrodeLayout,
    pub value: f64,
    pub history: Vec<ElectrodeIteration>,
    pub stop: ElectrodeStop,
}

/// Result of comparing the unsigned sampling terms with finite differences.
#[derive(Clone, Debug, PartialEq)]
pub struct SignCalibration {
    /// Sign at `Θ¹` and `Θ²` that makes the formula agree with the
    /// differences on most components.
    pub signs: [f64; 2],
    /// Per endpoint parameter: `(unsigned term, finite difference)`.
    pub samples: Vec<(f64, f64)>,
    /// Components whose sign agreed with the majority.
    pub agreeing: usize,
    pub considered: usize,
}

#[derive(Debug)]
pub struct ElectrodeInversion {
    mesh: CartesianMesh,
    sigma: AnalyticConductivity,
    patterns: CurrentPatterns,
    measured: Measurements,
    admittivity: Vec<Admittivity>,
    lengths: Vec<f64>,
    prior: Vec<f64>,
    start: Vec<f64>,
    settings: ElectrodeSettings,
}

impl ElectrodeInversion {
    /// `mesh` supplies the grid (its layout is ignored); `start` gives the
    /// initial angles, which also serve as prior centres.
    pub fn new(
        mesh: &CartesianMesh,
        sigma: AnalyticConductivity,
        patterns: CurrentPatterns,
        measured: Measurements,
        start: &ElectrodeLayout,
        settings: ElectrodeSettings,
    ) -> Result<Self> {
        if start.admittivity().iter().any(|a| !matches!(a, Admittivity::Constant { .. })) {
            return Err(Error::Config(
                "electrode reconstruction needs constant contact admittivity (a vanishing admittivity has no end-point sensitivity)".into(),
            ));
        }
        if measured.electrodes() != start.len() || measured.patterns() != patterns.len() {
            return Err(Error::Dimension(format!(
                "measurements are {}x{}, expected {}x{}",
                measured.electrodes(),
                measured.patterns(),
                start.len(),
                patterns.len()
            )));
        }
        let shape = mesh.shape();
        let lengths = start.arcs(shape).iter().map(|a| a.length).collect();
        let mut inv = Self {
            mesh: mesh.with_layout(start),
            sigma,
            patterns,
            measured,
            admittivity: start.admittivity().to_vec(),
            lengths,
            prior: Vec::new(),
            start: Vec::new(),
            settings,
        };
        inv.start = inv.params_of(start);
        inv.prior = inv.start.clone();
        Ok(inv)
    }

    /// Replaces the prior centres (the start by default).
    pub fn with_prior(mut self, prior: &ElectrodeLayout) -> Result<Self> {
        if prior.len() != self.admittivity.len() {
            return Err(Error::Dimension(format!("prior has {} electrodes, expected {}", prior.len(), self.admittivity.len())));
        }
        self.prior = self.params_of(prior);
        Ok(self)
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn settings(&self) -> &ElectrodeSettings {
        &self.settings
    }

    pub fn start(&self) -> &[f64] {
        &self.start
    }

    pub fn params_of(&self, layout: &ElectrodeLayout) -> Vec<f64> {
        match self.settings.mode {
            EndpointMode::Free => layout.theta1().iter().chain(layout.theta2()).copied().collect(),
            EndpointMode::FixedLength => layout.theta1().to_vec(),
        }
    }

    pub fn layout_of(&self, params: &[f64]) -> Result<ElectrodeLayout> {
        let m = self.admittivity.len();
        match self.settings.mode {
            EndpointMode::Free => {
                if params.len() != 2 * m {
                    return Err(Error::Dimension(format!("expected {} angles, got {}", 2 * m, params.len())));
                }
                ElectrodeLayout::new(params[..m].to_vec(), params[m..].to_vec(), self.admittivity.clone())
            }
            EndpointMode::FixedLength => {
                if params.len() != m {
                    return Err(Error::Dimension(format!("expected {m} angles, got {}", params.len())));
                }
                ElectrodeLayout::with_lengths(self.mesh.shape(), params.to_vec(), &self.lengths, self.admittivity.clone())
            }
        }
    }

    fn penalty(&self, params: &[f64]) -> f64 {
        0.5 * self.settings.regularization * params.iter().zip(&self.prior).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    }

    pub fn evaluate(&self, params: &[f64]) -> Result<ElectrodeEvaluation> {
        let layout = self.layout_of(params)?;
        let mesh = self.mesh.with_layout(&layout);
        let problem = ForwardProblem::new(mesh, &self.sigma, self.settings.ground, self.settings.epsilon, self.settings.solver)?;
        let (measurements, solutions) = problem.solve_patterns(&self.patterns)?;
        let misfit = misfit(&measurements, &self.measured)?;
        Ok(ElectrodeEvaluation {
            params: params.to_vec(),
            layout,
            value: misfit + self.penalty(params),
            misfit,
            measurements,
            solutions,
            problem,
        })
    }

    pub fn objective(&self, params: &[f64]) -> Result<f64> {
        Ok(self.evaluate(params)?.value)
    }

    /// `Σ_p ρ ξ (U_m − u(x))(Ũ_m − ũ(x))` at every end point, without
    /// sign: `[start terms, finish terms]`.
    pub fn endpoint_terms(&self, eval: &ElectrodeEvaluation) -> Result<[Vec<f64>; 2]> {
        let currents = adjoint_currents(&eval.measurements, &self.measured)?;
        let (_, adjoint) = eval.problem.solve_patterns(&CurrentPatterns { columns: currents })?;
        let mesh = eval.problem.mesh();
        let shape = mesh.shape();
        let layout = &eval.layout;
        let m = layout.len();
        let mut terms = [vec![0.0; m], vec![0.0; m]];
        for k in 0..m {
            for (e, end) in [End::Start, End::Finish].into_iter().enumerate() {
                let theta = if e == 0 { layout.theta1()[k] } else { layout.theta2()[k] };
                let weight = shape.rho(theta) * layout.admittivity_at(k, theta)?;
                let mut sum = 0.0;
                for (u, w) in eval.solutions.iter().zip(&adjoint) {
                    let du = u.electrodes()[k] - endpoint_potential(mesh, u, k, end)?;
                    let dw = w.electrodes()[k] - endpoint_potential(mesh, w, k, end)?;
                    sum += du * dw;
                }
                terms[e][k] = weight * sum;
            }
        }
        Ok(terms)
    }

    /// Gradient of the objective in the parameters of the current mode.
    pub fn sampling_gradient(&self, eval: &ElectrodeEvaluation) -> Result<Vec<f64>> {
        let [start, finish] = self.endpoint_terms(eval)?;
        let d1: Vec<f64> = start.iter().map(|t| ENDPOINT_SIGNS[0] * t).collect();
        let d2: Vec<f64> = finish.iter().map(|t| ENDPOINT_SIGNS[1] * t).collect();
        let mut g: Vec<f64> = match self.settings.mode {
            EndpointMode::Free => d1.into_iter().chain(d2).collect(),
            EndpointMode::FixedLength => {
                let jac = fixed_length_jacobian(self.mesh.shape(), &eval.layout);
                d1.iter().zip(&d2).zip(&jac).map(|((a, b), j)| a + j * b).collect()
            }
        };
        for ((gk, p), q) in g.iter_mut().zip(&eval.params).zip(&self.prior) {
            *gk += self.settings.regularization * (p - q);
        }
        Ok(g)
    }

    /// Central differences of the objective in every parameter.
    pub fn finite_difference_gradient(&self, params: &[f64], step: f64) -> Result<Vec<f64>> {
        (0..params.len())
            .map(|k| {
                let mut p = params.to_vec();
                p[k] += step;
                let fp = self.objective(&p)?;
                p[k] -= 2.0 * step;
                let fm = self.objective(&p)?;
                Ok((fp - fm) / (2.0 * step))
            })
            .collect()
    }

    /// Backtracking descent along the sampling gradient.
    pub fn reconstruct(&self) -> Result<ElectrodeOutcome> {
        self.reconstruct_with(|_| {})
    }

    pub fn reconstruct_with(&self, mut observe: impl FnMut(&ElectrodeIteration)) -> Result<ElectrodeOutcome> {
        let s = &self.settings;
        let mut eval = self.evaluate(&self.start)?;
        let mut history = Vec::new();
        for n in 0..s.max_iterations {
            let g = self.sampling_gradient(&eval)?;
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            let rec = ElectrodeIteration {
                n,
                value: eval.value,
                gradient_norm: norm,
                theta1: eval.layout.theta1().to_vec(),
                theta2: eval.layout.theta2().to_vec(),
            };
            observe(&rec);
            history.push(rec);
            if norm < s.gradient_tol {
                return Ok(ElectrodeOutcome { layout: eval.layout, value: eval.value, history, stop: ElectrodeStop::SmallGradient });
            }
            let mut accepted = None;
            let mut step = s.initial_step;
            while step >= s.min_step {
                let trial: Vec<f64> = eval.params.iter().zip(&g).map(|(p, d)| p - step * d).collect();
                // trial layouts that break the ordering or leave an electrode
                // without boundary points count as failed steps
                match self.evaluate(&trial) {
                    Ok(e) if e.value < eval.value => {
                        accepted = Some(e);
                        break;
                    }
                    Ok(_) | Err(Error::Layout(_)) | Err(Error::ElectrodeUnresolved(_)) | Err(Error::NoRoot(_)) => {
                        step *= 0.5
                    }
                    Err(e) => return Err(e),
                }
            }
            match accepted {
                Some(e) => eval = e,
                None => {
                    return Ok(ElectrodeOutcome { layout: eval.layout, value: eval.value, history, stop: ElectrodeStop::SmallStep });
                }
            }
        }
        Ok(ElectrodeOutcome { layout: eval.layout, value: eval.value, history, stop: ElectrodeStop::IterationLimit })
    }
}

/// Compares the unsigned endpoint terms with central differences of the
/// misfit at `params` (free mode) and picks the sign per endpoint that
/// agrees with most components above `floor`.
pub fn calibrate_endpoint_signs(inv: &ElectrodeInversion, params: &[f64], step: f64, floor: f64) -> Result<SignCalibration> {
    if inv.settings.mode != EndpointMode::Free {
        return Err(Error::Config("sign calibration runs in free mode".into()));
    }
    let eval = inv.evaluate(params)?;
    let [start, finish] = inv.endpoint_terms(&eval)?;
    let misfit_at = |p: &[f64]| -> Result<f64> { Ok(inv.evaluate(p)?.misfit) };
    let m = start.len();
    let mut samples = Vec::with_capacity(2 * m);
    for k in 0..2 * m {
        let mut p = params.to_vec();
        p[k] += step;
        let fp = misfit_at(&p)?;
        p[k] -= 2.0 * step;
        let fm = misfit_at(&p)?;
        let term = if k < m { start[k] } else { finish[k - m] };
        samples.push((term, (fp - fm) / (2.0 * step)));
    }
    let mut signs = [1.0, 1.0];
    let (mut agreeing, mut considered) = (0, 0);
    for (e, sign) in signs.iter_mut().enumerate() {
        let (mut plus, mut minus) = (0, 0);
        for &(term, fd) in &samples[e * m..(e + 1) * m] {
            if term.abs() > floor && fd.abs() > floor {
                if term * fd > 0.0 {
                    plus += 1;
                } else {
                    minus += 1;
                }
            }
        }
        *sign = if minus > plus { -1.0 } else { 1.0 };
        agreeing += plus.max(minus);
        considered += plus + minus;
    }
    Ok(SignCalibration { signs, samples, agreeing, considered })
}
