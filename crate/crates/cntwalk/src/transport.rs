//! Asymptotic transport: how much of an initial state eventually reaches
//! the sink.
//!
//! The long-time limit is computed exactly: amplitude on sink-resistant
//! trapped states never leaves, everything else is eventually absorbed, so
//! the asymptotic transport probability (ATP) of an initial density matrix
//! is one minus its overlap with the sink-resistant trapped projector.
//! Time-domain simulation of the same quantity serves as an independent
//! validation route, never as the primary computation.

use crate::graph::{select_subspace, End, Family, StateGraph, Subspace, SubspaceKind, TubeSpec};
use crate::oracle::{cdot, orthonormalize, NULLSPACE_TOL};
use crate::trapped::{
    analytic_percolated_basis, basis_export, build_aprime_states, build_bottom_states,
    filter_sink_resistant, group_by_eigenvalue, spectral_oracle, AmplitudeExport, StateKind,
    TrappedBasis, TrappedState, WalkFlavor,
};
use crate::walk::{basis_state, C64, Walk};
use crate::{Error, Result};
use nalgebra::DMatrix;
use serde::Serialize;

/// Gram-matrix deviation beyond which a claimed orthonormal basis is
/// rejected.
const GRAM_TOL: f64 = 1e-8;

/// The four source/sink layouts: source on the bottom end, sink on the top
/// end, each either one vertex's states or all loop states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RegimeLabel {
    #[serde(rename = "vv")]
    VertexToVertex,
    #[serde(rename = "vl")]
    VertexToLoops,
    #[serde(rename = "lv")]
    LoopsToVertex,
    #[serde(rename = "ll")]
    LoopsToLoops,
}

impl RegimeLabel {
    pub const ALL: [RegimeLabel; 4] = [
        RegimeLabel::VertexToVertex,
        RegimeLabel::VertexToLoops,
        RegimeLabel::LoopsToVertex,
        RegimeLabel::LoopsToLoops,
    ];

    pub fn code(&self) -> &'static str {
        match self {
            RegimeLabel::VertexToVertex => "vv",
            RegimeLabel::VertexToLoops => "vl",
            RegimeLabel::LoopsToVertex => "lv",
            RegimeLabel::LoopsToLoops => "ll",
        }
    }

    fn kinds(&self) -> (SubspaceKind, SubspaceKind) {
        match self {
            RegimeLabel::VertexToVertex => (SubspaceKind::OneVertex, SubspaceKind::OneVertex),
            RegimeLabel::VertexToLoops => (SubspaceKind::OneVertex, SubspaceKind::Loops),
            RegimeLabel::LoopsToVertex => (SubspaceKind::Loops, SubspaceKind::OneVertex),
            RegimeLabel::LoopsToLoops => (SubspaceKind::Loops, SubspaceKind::Loops),
        }
    }
}

impl std::fmt::Display for RegimeLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.code())
    }
}

impl std::str::FromStr for RegimeLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vv" => Ok(RegimeLabel::VertexToVertex),
            "vl" => Ok(RegimeLabel::VertexToLoops),
            "lv" => Ok(RegimeLabel::LoopsToVertex),
            "ll" => Ok(RegimeLabel::LoopsToLoops),
            other => Err(Error::Transport(format!(
                "unknown regime '{other}' (expected vv, vl, lv or ll)"
            ))),
        }
    }
}

/// A concrete source subspace (bottom end) and sink subspace (top end).
#[derive(Debug, Clone)]
pub struct TransportRegime {
    pub label: RegimeLabel,
    pub source: Subspace,
    pub sink: Subspace,
}

/// Builds the regime's source and sink on a graph. Sources sit on the
/// bottom end, sinks on the top end, so the two index sets are disjoint.
pub fn make_regime(g: &StateGraph, label: RegimeLabel) -> Result<TransportRegime> {
    let (src_kind, sink_kind) = label.kinds();
    let source = select_subspace(g, End::Bottom, src_kind, None)?;
    let sink = select_subspace(g, End::Top, sink_kind, None)?;
    if source.states.iter().any(|s| sink.states.contains(s)) {
        return Err(Error::Transport(
            "source and sink subspaces overlap; tube too short for this regime".into(),
        ));
    }
    Ok(TransportRegime { label, source, sink })
}

/// An initial density matrix given as a finite pure-state ensemble.
#[derive(Debug, Clone)]
pub struct MixedState {
    /// (weight, normalized state) pairs; weights sum to one.
    pub components: Vec<(f64, Vec<C64>)>,
}

impl MixedState {
    pub fn pure(state: Vec<C64>) -> Self {
        MixedState { components: vec![(1.0, state)] }
    }

    /// Maximally mixed state over a set of basis states.
    pub fn uniform_over(g: &StateGraph, states: &[usize]) -> Self {
        let w = 1.0 / states.len() as f64;
        MixedState {
            components: states.iter().map(|&s| (w, basis_state(g, s))).collect(),
        }
    }

    /// The equal-amplitude superposition of a set of basis states, as a
    /// pure state.
    pub fn superposition_over(g: &StateGraph, states: &[usize]) -> Self {
        let dim = g.state_count();
        let amp = C64::new(1.0 / (states.len() as f64).sqrt(), 0.0);
        let mut v = vec![C64::new(0.0, 0.0); dim];
        for &s in states {
            v[s] = amp;
        }
        MixedState::pure(v)
    }
}

fn check_orthonormal(basis: &[Vec<C64>]) -> Result<()> {
    for (i, u) in basis.iter().enumerate() {
        for (j, v) in basis.iter().enumerate().skip(i) {
            let g = cdot(u, v);
            let target = if i == j { 1.0 } else { 0.0 };
            if (g - C64::new(target, 0.0)).norm() > GRAM_TOL {
                return Err(Error::Transport(format!(
                    "sink-resistant basis is not orthonormal: Gram[{i},{j}] = {g}"
                )));
            }
        }
    }
    Ok(())
}

/// Exact ATP of an initial mixed state against an orthonormal
/// sink-resistant basis: one minus the trapped weight.
pub fn atp_exact(initial: &MixedState, sr_basis: &[Vec<C64>]) -> Result<f64> {
    check_orthonormal(sr_basis)?;
    let mut trapped = 0.0;
    for phi in sr_basis {
        for (w, psi) in &initial.components {
            trapped += w * cdot(phi, psi).norm_sqr();
        }
    }
    Ok((1.0 - trapped).clamp(0.0, 1.0))
}

/// ATP of the maximally mixed state on the regime's source subspace:
/// `1 − (Σ_i ‖Π_source φ_i‖²) / dim(source)`.
pub fn averaged_atp(regime: &TransportRegime, sr_basis: &[Vec<C64>]) -> Result<f64> {
    check_orthonormal(sr_basis)?;
    let d = regime.source.dim() as f64;
    let mut trapped = 0.0;
    for phi in sr_basis {
        for &s in &regime.source.states {
            trapped += phi[s].norm_sqr() / d;
        }
    }
    Ok((1.0 - trapped).clamp(0.0, 1.0))
}

/// The worst-trapped direction of the source subspace: diagonalizes the
/// sink-resistant projector compressed to the source coordinates and
/// returns `1 − λ_min` together with the minimizing source state (the
/// initial pure state with the highest asymptotic transport).
pub fn max_atp(
    regime: &TransportRegime,
    sr_basis: &[Vec<C64>],
    dim: usize,
) -> Result<(f64, Vec<C64>)> {
    check_orthonormal(sr_basis)?;
    let src = &regime.source.states;
    let d = src.len();
    if sr_basis.is_empty() {
        // Nothing is trapped: every source state transports fully.
        return Ok((1.0, basis_state_raw(dim, src[0])));
    }
    let mut m = DMatrix::<C64>::zeros(d, d);
    for phi in sr_basis {
        for (a, &sa) in src.iter().enumerate() {
            for (b, &sb) in src.iter().enumerate() {
                m[(a, b)] += phi[sa] * phi[sb].conj();
            }
        }
    }
    let eig = m.symmetric_eigen();
    let (kmin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).expect("real eigenvalues"))
        .expect("source subspace is nonempty");
    let lambda_min = eig.eigenvalues[kmin].max(0.0);
    let mut state = vec![C64::new(0.0, 0.0); dim];
    for (a, &sa) in src.iter().enumerate() {
        state[sa] = eig.eigenvectors[(a, kmin)];
    }
    Ok(((1.0 - lambda_min).clamp(0.0, 1.0), state))
}

fn basis_state_raw(dim: usize, index: usize) -> Vec<C64> {
    let mut v = vec![C64::new(0.0, 0.0); dim];
    v[index] = C64::new(1.0, 0.0);
    v
}

/// Closed-form estimate of the loops-to-loops averaged ATP from the loop
/// overlap of the loop-pair states: zig-zag tubes lose 1/6 + 1/6 of the
/// source weight, armchair tubes 1/4 + 1/8.
pub fn chirality_estimate(spec: &TubeSpec, label: RegimeLabel) -> Result<f64> {
    if label != RegimeLabel::LoopsToLoops {
        return Err(Error::Transport(
            "the closed-form estimate covers the loops-to-loops regime only".into(),
        ));
    }
    match spec.family() {
        Some(Family::ZigZag(_)) => Ok(2.0 / 3.0),
        Some(Family::Armchair(_)) => Ok(5.0 / 8.0),
        None => Err(Error::Transport(format!(
            "no closed-form estimate for chirality ({},{})",
            spec.m, spec.n
        ))),
    }
}

/// How an ATP value was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Projection onto the analytically constructed trapped families.
    Analytic,
    /// Projection onto the dense spectral oracle's eigenbasis.
    Oracle,
    /// Time-domain simulation estimate.
    Simulation,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Analytic => write!(f, "analytic"),
            Method::Oracle => write!(f, "oracle"),
            Method::Simulation => write!(f, "simulation"),
        }
    }
}

/// Exact transport summary for one (tube, regime, flavor) setting.
#[derive(Debug, Clone, Serialize)]
pub struct TransportReport {
    pub m: u32,
    pub n: u32,
    pub length: u32,
    pub regime: RegimeLabel,
    pub flavor: WalkFlavor,
    #[serde(rename = "averagedATP")]
    pub averaged_atp: f64,
    #[serde(rename = "maxATP")]
    pub max_atp: f64,
    #[serde(rename = "maxState")]
    pub max_state: Vec<AmplitudeExport>,
    #[serde(rename = "trappedDim")]
    pub trapped_dim: usize,
    #[serde(rename = "srDim")]
    pub sr_dim: usize,
    pub method: Method,
}

/// Stable CSV header for sweep outputs.
pub const CSV_HEADER: &str =
    "m,n,length,regime,flavor,averagedATP,maxATP,trappedDim,srDim,method";

impl TransportReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.12},{:.12},{},{},{}",
            self.m,
            self.n,
            self.length,
            self.regime,
            self.flavor,
            self.averaged_atp,
            self.max_atp,
            self.trapped_dim,
            self.sr_dim,
            self.method
        )
    }
}

/// The trapped basis, sink-resistant orthonormal basis, dimensions, and
/// method tag for one flavor on one graph.
pub struct SinkResistantAnalysis {
    pub trapped_dim: usize,
    pub sr_dim: usize,
    pub method: Method,
    /// Orthonormal basis of the sink-resistant trapped subspace.
    pub sr_basis: Vec<Vec<C64>>,
}

/// Builds the sink-resistant subspace for a flavor.
///
/// The percolated flavor always uses the analytic families (their span is
/// proven against the oracle in the validation suite). The ideal flavor
/// uses the dense spectral oracle — extra trapped families beyond the
/// analytic ones exist for some tubes — and falls back to the analytic
/// families (A, C1, C2, circulations, boundary states) only when the
/// dimension exceeds the dense-oracle limit.
pub fn sink_resistant_analysis(
    g: &StateGraph,
    flavor: WalkFlavor,
    sink: &Subspace,
) -> Result<SinkResistantAnalysis> {
    match flavor {
        WalkFlavor::Pcqw => {
            let basis = analytic_percolated_basis(g, Some(sink))?;
            let trapped_dim = basis.len();
            let filtered = filter_sink_resistant(&basis, sink);
            let sr_basis = orthonormalize(&filtered.dense_states(), NULLSPACE_TOL);
            Ok(SinkResistantAnalysis {
                trapped_dim,
                sr_dim: sr_basis.len(),
                method: Method::Analytic,
                sr_basis,
            })
        }
        WalkFlavor::Cqw => match spectral_oracle(g, WalkFlavor::Cqw) {
            Ok(basis) => {
                let filtered = filter_sink_resistant(&basis, sink);
                // Count the trapped pool: every eigenvalue cluster that
                // retains a sink-resistant direction, excluding the
                // globally uniform +1 state, which is stationary but
                // overlaps every sink and is not counted as trapped.
                let cluster_sizes: Vec<(C64, usize)> = group_by_eigenvalue(&basis.states)
                    .iter()
                    .map(|(ev, members)| (*ev, members.len()))
                    .collect();
                let mut trapped_dim = 0;
                for (ev, _) in group_by_eigenvalue(&filtered.states) {
                    if let Some((_, size)) =
                        cluster_sizes.iter().find(|(cev, _)| (*cev - ev).norm() < 1e-8)
                    {
                        let uniform_here = (ev - C64::new(1.0, 0.0)).norm() < 1e-8;
                        trapped_dim += size - usize::from(uniform_here);
                    }
                }
                let sr_basis: Vec<Vec<C64>> = filtered.dense_states();
                Ok(SinkResistantAnalysis {
                    trapped_dim,
                    sr_dim: sr_basis.len(),
                    method: Method::Oracle,
                    sr_basis,
                })
            }
            Err(Error::OracleRefused(_)) => {
                let mut basis = analytic_percolated_basis(g, Some(sink))?;
                basis.flavor = WalkFlavor::Cqw;
                basis.states.extend(build_aprime_states(g));
                basis.states.extend(build_bottom_states(g)?);
                let trapped_dim = basis.len();
                let filtered = filter_sink_resistant(&basis, sink);
                // Orthonormalize per eigenvalue group to keep eigenspaces
                // intact while removing the analytic families' overlaps.
                let mut sr_basis = Vec::new();
                for (_, members) in group_by_eigenvalue(&filtered.states) {
                    let dense: Vec<Vec<C64>> =
                        members.iter().map(|st| st.to_dense(basis.dim)).collect();
                    sr_basis.extend(orthonormalize(&dense, NULLSPACE_TOL));
                }
                Ok(SinkResistantAnalysis {
                    trapped_dim,
                    sr_dim: sr_basis.len(),
                    method: Method::Analytic,
                    sr_basis,
                })
            }
            Err(e) => Err(e),
        },
    }
}

/// Exact transport report for one (tube, regime, flavor) setting.
pub fn transport_report(
    g: &StateGraph,
    label: RegimeLabel,
    flavor: WalkFlavor,
) -> Result<TransportReport> {
    let regime = make_regime(g, label)?;
    let analysis = sink_resistant_analysis(g, flavor, &regime.sink)?;
    let averaged = averaged_atp(&regime, &analysis.sr_basis)?;
    let (max_val, max_state) = max_atp(&regime, &analysis.sr_basis, g.state_count())?;
    debug_assert!(averaged <= max_val + 1e-12);
    Ok(TransportReport {
        m: g.spec.m,
        n: g.spec.n,
        length: g.spec.length,
        regime: label,
        flavor,
        averaged_atp: averaged,
        max_atp: max_val,
        max_state: max_state
            .iter()
            .enumerate()
            .filter(|(_, x)| x.norm() > 1e-12)
            .map(|(index, x)| AmplitudeExport { index, re: x.re, im: x.im })
            .collect(),
        trapped_dim: analysis.trapped_dim,
        sr_dim: analysis.sr_dim,
        method: analysis.method,
    })
}

/// Knobs for the time-domain validation estimate.
#[derive(Debug, Clone, Copy)]
pub struct SimulationOptions {
    /// Hard step limit.
    pub horizon: usize,
    /// Convergence window length in steps.
    pub window: usize,
    /// Maximum window-mean change accepted as converged.
    pub tolerance: f64,
    /// Edge-open probability for the percolated flavor.
    pub p: f64,
    /// Monte Carlo trajectory count for the percolated flavor.
    pub trajectories: usize,
    pub seed: u64,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions {
            horizon: 5000,
            window: 100,
            tolerance: 1e-3,
            p: 0.5,
            trajectories: 10_000,
            seed: 1,
        }
    }
}

/// Simulation-based ATP estimate.
#[derive(Debug, Clone, Copy)]
pub struct SimulatedAtp {
    pub atp: f64,
    /// Monte Carlo standard error; absent for exact (non-sampled) runs.
    pub stderr: Option<f64>,
    pub converged: bool,
    /// Steps actually evolved.
    pub steps: usize,
}

/// Splits a survival trace into consecutive windows and reports whether
/// the last two window means differ by less than the tolerance, together
/// with the final window mean.
fn window_convergence(trace: &[f64], window: usize, tolerance: f64) -> (f64, bool) {
    if trace.len() < 2 * window {
        let tail = &trace[trace.len().saturating_sub(window)..];
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        return (mean, false);
    }
    let last = &trace[trace.len() - window..];
    let prev = &trace[trace.len() - 2 * window..trace.len() - window];
    let m_last = last.iter().sum::<f64>() / window as f64;
    let m_prev = prev.iter().sum::<f64>() / window as f64;
    (m_last, (m_last - m_prev).abs() < tolerance)
}

/// Estimates the ATP of the maximally mixed source state by evolving in
/// time: ideal walks run until the survival drop over a window falls below
/// tolerance; percolated walks average Monte Carlo trajectories and carry
/// a standard error.
pub fn atp_via_simulation(
    g: &StateGraph,
    regime: &TransportRegime,
    flavor: WalkFlavor,
    opts: &SimulationOptions,
) -> Result<SimulatedAtp> {
    if opts.horizon < 1 {
        return Err(Error::Transport("simulation horizon must be at least 1".into()));
    }
    let walk = Walk::new(g, &regime.sink.states)?;
    let source_basis: Vec<Vec<C64>> = regime
        .source
        .states
        .iter()
        .map(|&s| basis_state(g, s))
        .collect();
    match flavor {
        WalkFlavor::Cqw => {
            // Evolve in window-sized chunks so convergence can stop early.
            let d = source_basis.len() as f64;
            let mut states = source_basis;
            let mut trace = vec![states.iter().map(|s| crate::walk::survival(s)).sum::<f64>() / d];
            let mut steps = 0;
            while steps < opts.horizon {
                let chunk = opts.window.min(opts.horizon - steps);
                for _ in 0..chunk {
                    for psi in states.iter_mut() {
                        walk.step_ideal(psi);
                    }
                    trace.push(states.iter().map(|s| crate::walk::survival(s)).sum::<f64>() / d);
                }
                steps += chunk;
                let (tail_mean, converged) =
                    window_convergence(&trace, opts.window, opts.tolerance);
                if converged {
                    return Ok(SimulatedAtp {
                        atp: 1.0 - tail_mean,
                        stderr: None,
                        converged: true,
                        steps,
                    });
                }
            }
            let (tail_mean, converged) = window_convergence(&trace, opts.window, opts.tolerance);
            Ok(SimulatedAtp { atp: 1.0 - tail_mean, stderr: None, converged, steps })
        }
        WalkFlavor::Pcqw => {
            if !(opts.p > 0.0 && opts.p < 1.0) {
                return Err(Error::WalkSetup(format!(
                    "percolation probability {} must lie strictly inside (0,1)",
                    opts.p
                )));
            }
            let (mean, err) = walk.percolated_survival_mc(
                &source_basis,
                opts.horizon,
                opts.p,
                opts.trajectories,
                opts.seed,
            )?;
            let final_surv = *mean.last().expect("trace nonempty");
            let final_err = *err.last().expect("trace nonempty");
            // Convergence check on the mean trace; Monte Carlo noise sets
            // the sharpest resolvable tolerance.
            let noise_floor = 3.0 * final_err;
            let (_, converged) =
                window_convergence(&mean, opts.window.min(mean.len() / 2), opts.tolerance.max(noise_floor));
            Ok(SimulatedAtp {
                atp: 1.0 - final_surv,
                stderr: Some(final_err),
                converged,
                steps: opts.horizon,
            })
        }
    }
}

/// Everything `validate` checks for one tube: span agreement between the
/// analytic percolated families and the oracle, eigen-equation residuals,
/// and the projection-vs-simulation ATP gap.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub m: u32,
    pub n: u32,
    pub length: u32,
    pub regime: RegimeLabel,
    pub flavor: WalkFlavor,
    /// Mutual projection residual between analytic and oracle percolated
    /// trapped spans.
    #[serde(rename = "spanResidual")]
    pub span_residual: f64,
    /// Worst eigen-equation residual among analytic trapped states.
    #[serde(rename = "eigenResidual")]
    pub eigen_residual: f64,
    #[serde(rename = "trappedDimCqw")]
    pub trapped_dim_cqw: usize,
    #[serde(rename = "trappedDimPcqw")]
    pub trapped_dim_pcqw: usize,
    #[serde(rename = "projectionATP")]
    pub projection_atp: f64,
    #[serde(rename = "simulationATP")]
    pub simulation_atp: f64,
    #[serde(rename = "simulationStderr")]
    pub simulation_stderr: Option<f64>,
    #[serde(rename = "atpGap")]
    pub atp_gap: f64,
    pub passed: bool,
}

/// Tolerance for the span and eigen residual checks in validation runs.
pub const VALIDATION_RESIDUAL_TOL: f64 = 1e-8;

/// Tolerance for projection-vs-simulation ATP agreement (ideal flavor);
/// the percolated flavor uses three standard errors instead.
pub const VALIDATION_ATP_TOL: f64 = 1e-2;

/// Runs the full validation bundle on one (tube, regime, flavor) setting.
pub fn validate(
    g: &StateGraph,
    label: RegimeLabel,
    flavor: WalkFlavor,
    opts: &SimulationOptions,
) -> Result<ValidationReport> {
    let regime = make_regime(g, label)?;
    // Span agreement between the analytic families and the oracle.
    let analytic = analytic_percolated_basis(g, Some(&regime.sink))?;
    let numeric = spectral_oracle(g, WalkFlavor::Pcqw)?;
    let span_residual =
        crate::trapped::span_residual(&analytic.states, &numeric.states, g.state_count());
    // Eigen-equation residuals of every analytic state (all eigenvalue −1,
    // checked against the dense ideal step).
    let u = crate::walk::dense_step_matrix(g, None);
    let dim = g.state_count();
    let mut eigen_residual = 0.0f64;
    for st in &analytic.states {
        let v = st.to_dense(dim);
        let mut acc = 0.0;
        for row in 0..dim {
            let mut uv = C64::new(0.0, 0.0);
            for col in 0..dim {
                if u[(row, col)] != 0.0 {
                    uv += u[(row, col)] * v[col];
                }
            }
            acc += (uv - st.eigenvalue * v[row]).norm_sqr();
        }
        eigen_residual = eigen_residual.max(acc.sqrt());
    }
    // Trapped dimensions of both flavors under this sink.
    let cqw = sink_resistant_analysis(g, WalkFlavor::Cqw, &regime.sink)?;
    let pcqw = sink_resistant_analysis(g, WalkFlavor::Pcqw, &regime.sink)?;
    // Projection vs simulation on the requested flavor.
    let analysis = match flavor {
        WalkFlavor::Cqw => &cqw,
        WalkFlavor::Pcqw => &pcqw,
    };
    let projection_atp = averaged_atp(&regime, &analysis.sr_basis)?;
    let sim = atp_via_simulation(g, &regime, flavor, opts)?;
    let atp_gap = (projection_atp - sim.atp).abs();
    let atp_ok = match sim.stderr {
        Some(se) => atp_gap <= 3.0 * se.max(1e-6),
        None => atp_gap <= VALIDATION_ATP_TOL,
    };
    let passed = span_residual < VALIDATION_RESIDUAL_TOL
        && eigen_residual < VALIDATION_RESIDUAL_TOL
        && atp_ok;
    Ok(ValidationReport {
        m: g.spec.m,
        n: g.spec.n,
        length: g.spec.length,
        regime: label,
        flavor,
        span_residual,
        eigen_residual,
        trapped_dim_cqw: cqw.trapped_dim,
        trapped_dim_pcqw: pcqw.trapped_dim,
        projection_atp,
        simulation_atp: sim.atp,
        simulation_stderr: sim.stderr,
        atp_gap,
        passed,
    })
}

/// Serializable basis snapshot for the export surface (keeps the trapped
/// module's JSON schema as the single source of truth).
pub fn export_trapped_basis(g: &StateGraph, basis: &TrappedBasis) -> crate::trapped::BasisExport {
    basis_export(g, basis)
}

/// Convenience: the sink-resistant trapped count grouped per eigenvalue,
/// used by validation output.
pub fn sr_dims_by_eigenvalue(states: &[TrappedState]) -> Vec<(C64, usize)> {
    group_by_eigenvalue(states)
        .iter()
        .map(|(ev, members)| (*ev, members.len()))
        .collect()
}

/// Marker so report consumers can tell which kinds appear in a filtered
/// basis (useful when checking which families survived a sink).
pub fn kinds_present(states: &[TrappedState]) -> Vec<StateKind> {
    let mut kinds = Vec::new();
    for st in states {
        if !kinds.contains(&st.kind) {
            kinds.push(st.kind);
        }
    }
    kinds
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_nanotube, TubeSpec};
    use approx::assert_abs_diff_eq;

    fn tube(m: u32, n: u32, l: u32) -> StateGraph {
        build_nanotube(&TubeSpec::new(m, n, l).unwrap()).unwrap()
    }

    fn report(g: &StateGraph, label: RegimeLabel, flavor: WalkFlavor) -> TransportReport {
        transport_report(g, label, flavor).unwrap()
    }

    #[test]
    fn closed_form_estimates_and_their_domain() {
        let z = TubeSpec::new(6, 0, 2).unwrap();
        let a = TubeSpec::new(3, 3, 2).unwrap();
        assert_abs_diff_eq!(
            chirality_estimate(&z, RegimeLabel::LoopsToLoops).unwrap(),
            2.0 / 3.0
        );
        assert_abs_diff_eq!(
            chirality_estimate(&a, RegimeLabel::LoopsToLoops).unwrap(),
            5.0 / 8.0
        );
        assert!(chirality_estimate(&z, RegimeLabel::VertexToVertex).is_err());
    }

    #[test]
    fn estimates_match_computed_plateaus() {
        // Loops-to-loops percolated ATP sits near the family estimate.
        let g = tube(6, 0, 2);
        let r = report(&g, RegimeLabel::LoopsToLoops, WalkFlavor::Pcqw);
        assert!((r.averaged_atp - 2.0 / 3.0).abs() < 0.05, "{}", r.averaged_atp);
        let g = tube(3, 3, 2);
        let r = report(&g, RegimeLabel::LoopsToLoops, WalkFlavor::Pcqw);
        assert!((r.averaged_atp - 5.0 / 8.0).abs() < 0.05, "{}", r.averaged_atp);
    }

    #[test]
    fn flavor_gap_on_even_zigzag_is_exactly_one_eighth() {
        let g = tube(4, 0, 2);
        let p = report(&g, RegimeLabel::LoopsToLoops, WalkFlavor::Pcqw);
        let c = report(&g, RegimeLabel::LoopsToLoops, WalkFlavor::Cqw);
        assert_abs_diff_eq!(p.averaged_atp - c.averaged_atp, 0.125, epsilon = 1e-10);
    }

    #[test]
    fn superposition_on_bottom_vertex_transports_fully() {
        let g = tube(3, 0, 2);
        for label in RegimeLabel::ALL {
            for flavor in [WalkFlavor::Pcqw, WalkFlavor::Cqw] {
                let regime = make_regime(&g, label).unwrap();
                let analysis = sink_resistant_analysis(&g, flavor, &regime.sink).unwrap();
                let bottom_vertex =
                    select_subspace(&g, End::Bottom, SubspaceKind::OneVertex, None).unwrap();
                let initial = MixedState::superposition_over(&g, &bottom_vertex.states);
                let atp = atp_exact(&initial, &analysis.sr_basis).unwrap();
                assert_abs_diff_eq!(atp, 1.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn trapped_initial_state_never_transports() {
        let g = tube(3, 0, 2);
        let regime = make_regime(&g, RegimeLabel::LoopsToLoops).unwrap();
        let analysis =
            sink_resistant_analysis(&g, WalkFlavor::Pcqw, &regime.sink).unwrap();
        let initial = MixedState::pure(analysis.sr_basis[0].clone());
        let atp = atp_exact(&initial, &analysis.sr_basis).unwrap();
        assert_abs_diff_eq!(atp, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_sr_basis_means_full_transport() {
        let g = tube(3, 0, 1);
        let regime = make_regime(&g, RegimeLabel::LoopsToLoops).unwrap();
        let avg = averaged_atp(&regime, &[]).unwrap();
        assert_abs_diff_eq!(avg, 1.0);
        let (mx, state) = max_atp(&regime, &[], g.state_count()).unwrap();
        assert_abs_diff_eq!(mx, 1.0);
        assert_abs_diff_eq!(crate::oracle::cnorm(&state), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn non_orthonormal_basis_is_rejected() {
        let g = tube(3, 0, 1);
        let regime = make_regime(&g, RegimeLabel::LoopsToLoops).unwrap();
        let analysis =
            sink_resistant_analysis(&g, WalkFlavor::Pcqw, &regime.sink).unwrap();
        let mut bad = analysis.sr_basis.clone();
        let dup = bad[0].clone();
        bad.push(dup);
        assert!(averaged_atp(&regime, &bad).is_err());
    }

    #[test]
    fn vertex_regimes_reach_full_maximal_transport() {
        let g = tube(3, 0, 2);
        for label in [RegimeLabel::VertexToVertex, RegimeLabel::VertexToLoops] {
            for flavor in [WalkFlavor::Pcqw, WalkFlavor::Cqw] {
                let r = report(&g, label, flavor);
                assert_abs_diff_eq!(r.max_atp, 1.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn report_invariants_hold_across_a_small_grid() {
        for (m, n) in [(3u32, 0u32), (4, 0), (3, 3)] {
            for l in 1..=2u32 {
                let g = tube(m, n, l);
                for label in RegimeLabel::ALL {
                    for flavor in [WalkFlavor::Pcqw, WalkFlavor::Cqw] {
                        let r = report(&g, label, flavor);
                        assert!(r.averaged_atp >= -1e-12 && r.averaged_atp <= 1.0 + 1e-12);
                        assert!(r.averaged_atp <= r.max_atp + 1e-10);
                        assert!(r.sr_dim <= r.trapped_dim);
                    }
                }
            }
        }
    }

    #[test]
    fn ideal_trapped_pool_exceeds_percolated_pool() {
        let g = tube(4, 0, 3);
        let regime = make_regime(&g, RegimeLabel::LoopsToLoops).unwrap();
        let cqw = sink_resistant_analysis(&g, WalkFlavor::Cqw, &regime.sink).unwrap();
        let pcqw = sink_resistant_analysis(&g, WalkFlavor::Pcqw, &regime.sink).unwrap();
        assert!(cqw.trapped_dim > pcqw.trapped_dim);
    }

    #[test]
    fn simulation_validates_projection_on_a_small_tube() {
        let g = tube(3, 0, 1);
        let opts = SimulationOptions {
            horizon: 2000,
            trajectories: 4000,
            seed: 11,
            ..SimulationOptions::default()
        };
        for label in [RegimeLabel::LoopsToLoops, RegimeLabel::VertexToVertex] {
            let regime = make_regime(&g, label).unwrap();
            // Ideal flavor: deterministic trace.
            let cqw = sink_resistant_analysis(&g, WalkFlavor::Cqw, &regime.sink).unwrap();
            let exact = averaged_atp(&regime, &cqw.sr_basis).unwrap();
            let sim = atp_via_simulation(&g, &regime, WalkFlavor::Cqw, &opts).unwrap();
            assert!(
                (exact - sim.atp).abs() < 1e-2,
                "{label}: exact {exact} vs simulated {}",
                sim.atp
            );
            // Percolated flavor: Monte Carlo with standard error.
            let pcqw = sink_resistant_analysis(&g, WalkFlavor::Pcqw, &regime.sink).unwrap();
            let exact_p = averaged_atp(&regime, &pcqw.sr_basis).unwrap();
            let sim_p = atp_via_simulation(&g, &regime, WalkFlavor::Pcqw, &opts).unwrap();
            let se = sim_p.stderr.unwrap().max(1e-6);
            assert!(
                (exact_p - sim_p.atp).abs() < 3.0 * se,
                "{label}: exact {exact_p} vs simulated {} (se {se})",
                sim_p.atp
            );
        }
    }

    #[test]
    fn percolation_probability_does_not_move_the_atp() {
        let g = tube(3, 0, 1);
        let regime = make_regime(&g, RegimeLabel::LoopsToLoops).unwrap();
        let pcqw = sink_resistant_analysis(&g, WalkFlavor::Pcqw, &regime.sink).unwrap();
        let exact = averaged_atp(&regime, &pcqw.sr_basis).unwrap();
        for p in [0.3, 0.5, 0.7] {
            let opts = SimulationOptions {
                horizon: 1500,
                trajectories: 4000,
                p,
                seed: 23,
                ..SimulationOptions::default()
            };
            let sim = atp_via_simulation(&g, &regime, WalkFlavor::Pcqw, &opts).unwrap();
            let se = sim.stderr.unwrap().max(1e-6);
            assert!(
                (exact - sim.atp).abs() < 3.0 * se,
                "p = {p}: exact {exact} vs simulated {} (se {se})",
                sim.atp
            );
        }
    }

    #[test]
    fn validation_bundle_passes_on_reference_tube() {
        let g = tube(3, 0, 2);
        let opts = SimulationOptions {
            horizon: 3000,
            trajectories: 4000,
            seed: 5,
            ..SimulationOptions::default()
        };
        let v = validate(&g, RegimeLabel::LoopsToLoops, WalkFlavor::Pcqw, &opts).unwrap();
        assert!(v.passed, "{v:?}");
        assert!(v.span_residual < VALIDATION_RESIDUAL_TOL);
        assert!(v.eigen_residual < VALIDATION_RESIDUAL_TOL);
        assert!(v.trapped_dim_cqw > v.trapped_dim_pcqw);
    }

    #[test]
    fn csv_row_schema_is_stable() {
        let g = tube(3, 0, 1);
        let r = report(&g, RegimeLabel::LoopsToLoops, WalkFlavor::Pcqw);
        let row = r.csv_row();
        assert_eq!(CSV_HEADER.split(',').count(), row.split(',').count());
        assert!(row.starts_with("3,0,1,ll,pcqw,"));
        assert!(row.ends_with(",analytic"));
    }
}
