//! Coined quantum walk dynamics, ideal and percolated.
//!
//! States live on the directed arcs and loops of a [`StateGraph`]. One step
//! applies the flip-flop shift (paired arcs swap amplitudes, loops and
//! closed edges hold theirs), then the three-dimensional Grover coin at
//! every vertex, then removes all amplitude on the sink states. Percolation
//! replaces the shift by a random masked shift: each edge is open
//! independently with probability `p`, and only open edges swap.
//!
//! Monte Carlo sampling of the percolated walk evolves every basis state of
//! a mixed source through the *same* edge-configuration sequence within a
//! trajectory, which makes each trajectory an unbiased sample of the
//! percolation channel. An exact channel evolution is also provided for
//! cross-checks: the per-edge percolation superoperators commute, so the
//! exact average over configurations factorizes edge by edge.

use crate::graph::StateGraph;
use crate::{Error, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub type C64 = Complex64;

/// Squared-norm survival probability of a (sub-normalized) state.
pub fn survival(psi: &[C64]) -> f64 {
    psi.iter().map(|a| a.norm_sqr()).sum()
}

/// The state with equal real amplitude on every arc and loop.
pub fn uniform_state(g: &StateGraph) -> Vec<C64> {
    let d = g.state_count();
    vec![C64::new(1.0 / (d as f64).sqrt(), 0.0); d]
}

/// A basis state concentrated on one arc or loop.
pub fn basis_state(g: &StateGraph, state: usize) -> Vec<C64> {
    let mut psi = vec![C64::new(0.0, 0.0); g.state_count()];
    psi[state] = C64::new(1.0, 0.0);
    psi
}

/// Walk operators bound to a graph and a sink subspace.
pub struct Walk<'g> {
    pub graph: &'g StateGraph,
    pub sink_states: Vec<usize>,
}

impl<'g> Walk<'g> {
    pub fn new(graph: &'g StateGraph, sink_states: &[usize]) -> Result<Self> {
        let d = graph.state_count();
        let mut seen = vec![false; d];
        for &s in sink_states {
            if s >= d {
                return Err(Error::WalkSetup(format!(
                    "sink state {s} out of range (dimension {d})"
                )));
            }
            if seen[s] {
                return Err(Error::WalkSetup(format!("sink state {s} listed twice")));
            }
            seen[s] = true;
        }
        Ok(Walk {
            graph,
            sink_states: sink_states.to_vec(),
        })
    }

    /// Grover coin at every vertex: within each vertex's three outgoing
    /// states, `x_i -> (2/3)(x_1 + x_2 + x_3) - x_i`.
    pub fn apply_coin(&self, psi: &mut [C64]) {
        for states in &self.graph.out_states {
            let sum = psi[states[0]] + psi[states[1]] + psi[states[2]];
            let avg = sum * (2.0 / 3.0);
            for &s in states {
                psi[s] = avg - psi[s];
            }
        }
    }

    /// Flip-flop shift: both arcs of every edge swap amplitudes; loops keep
    /// theirs.
    pub fn apply_shift(&self, psi: &mut [C64]) {
        for e in 0..self.graph.edge_count() {
            psi.swap(2 * e, 2 * e + 1);
        }
    }

    /// Masked flip-flop shift: only open edges swap.
    pub fn apply_shift_masked(&self, psi: &mut [C64], open: &[bool]) {
        debug_assert_eq!(open.len(), self.graph.edge_count());
        for (e, &o) in open.iter().enumerate() {
            if o {
                psi.swap(2 * e, 2 * e + 1);
            }
        }
    }

    /// Removes all amplitude on the sink states, returning the absorbed
    /// probability.
    pub fn absorb(&self, psi: &mut [C64]) -> f64 {
        let mut taken = 0.0;
        for &s in &self.sink_states {
            taken += psi[s].norm_sqr();
            psi[s] = C64::new(0.0, 0.0);
        }
        taken
    }

    /// One ideal step: shift, coin, absorb.
    pub fn step_ideal(&self, psi: &mut [C64]) {
        self.apply_shift(psi);
        self.apply_coin(psi);
        self.absorb(psi);
    }

    /// One percolated step under a fixed edge configuration.
    pub fn step_masked(&self, psi: &mut [C64], open: &[bool]) {
        self.apply_shift_masked(psi, open);
        self.apply_coin(psi);
        self.absorb(psi);
    }

    /// Survival trace of the ideal walk started in the uniform mixture of
    /// the given orthonormal source states. Entry `t` is the survival after
    /// `t` steps (entry 0 is 1 before any absorption).
    pub fn ideal_survival_trace(&self, source_basis: &[Vec<C64>], steps: usize) -> Vec<f64> {
        let d = source_basis.len() as f64;
        let mut states: Vec<Vec<C64>> = source_basis.to_vec();
        let mut out = Vec::with_capacity(steps + 1);
        out.push(states.iter().map(|s| survival(s)).sum::<f64>() / d);
        for _ in 0..steps {
            for psi in states.iter_mut() {
                self.step_ideal(psi);
            }
            out.push(states.iter().map(|s| survival(s)).sum::<f64>() / d);
        }
        out
    }

    /// Monte Carlo survival trace of the percolated walk.
    ///
    /// Each trajectory draws its own independent edge-configuration
    /// sequence from a counter-addressed stream of the base seed, so the
    /// result is deterministic in `(seed, trajectories)` and independent of
    /// thread scheduling. Returns `(mean, standard error)` per step.
    pub fn percolated_survival_mc(
        &self,
        source_basis: &[Vec<C64>],
        steps: usize,
        p: f64,
        trajectories: usize,
        seed: u64,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::WalkSetup(format!("percolation probability {p} not in [0,1]")));
        }
        if trajectories == 0 {
            return Err(Error::WalkSetup("need at least one trajectory".into()));
        }
        let ecount = self.graph.edge_count();
        let d = source_basis.len() as f64;
        let traces: Vec<Vec<f64>> = (0..trajectories)
            .into_par_iter()
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(k as u64);
                let mut states: Vec<Vec<C64>> = source_basis.to_vec();
                let mut open = vec![false; ecount];
                let mut trace = Vec::with_capacity(steps + 1);
                trace.push(states.iter().map(|s| survival(s)).sum::<f64>() / d);
                for _ in 0..steps {
                    for o in open.iter_mut() {
                        *o = rng.gen::<f64>() < p;
                    }
                    for psi in states.iter_mut() {
                        self.step_masked(psi, &open);
                    }
                    trace.push(states.iter().map(|s| survival(s)).sum::<f64>() / d);
                }
                trace
            })
            .collect();

        let n = trajectories as f64;
        let mut mean = vec![0.0; steps + 1];
        let mut sq = vec![0.0; steps + 1];
        for trace in &traces {
            for (t, &v) in trace.iter().enumerate() {
                mean[t] += v;
                sq[t] += v * v;
            }
        }
        let mut err = vec![0.0; steps + 1];
        for t in 0..=steps {
            mean[t] /= n;
            let var = (sq[t] / n - mean[t] * mean[t]).max(0.0);
            err[t] = if trajectories > 1 {
                (var / (n - 1.0)).sqrt()
            } else {
                0.0
            };
        }
        Ok((mean, err))
    }

    /// Exact survival trace of the percolated walk, evolving the density
    /// matrix through the averaged channel. The per-edge averages commute,
    /// so one channel step is `E` two-line mixes, one coin sandwich and the
    /// sink projection. Intended for modest dimensions (cross-checks).
    pub fn percolated_survival_exact(
        &self,
        source_basis: &[Vec<C64>],
        steps: usize,
        p: f64,
    ) -> Vec<f64> {
        let d = self.graph.state_count();
        let mut rho = DMatrix::<C64>::zeros(d, d);
        let w = C64::new(1.0 / source_basis.len() as f64, 0.0);
        for psi in source_basis {
            for i in 0..d {
                for j in 0..d {
                    rho[(i, j)] += w * psi[i] * psi[j].conj();
                }
            }
        }
        let mut out = Vec::with_capacity(steps + 1);
        out.push(rho.trace().re);
        for _ in 0..steps {
            self.channel_step(&mut rho, p);
            out.push(rho.trace().re);
        }
        out
    }

    /// One exact percolated channel step on a density matrix.
    pub fn channel_step(&self, rho: &mut DMatrix<C64>, p: f64) {
        let d = self.graph.state_count();
        // Per-edge shift average: rho <- (1-p) rho + p R_e rho R_e, where
        // R_e rho R_e swaps the two arc rows and the two arc columns
        // jointly. Rows of the corner block must not be mixed twice, so the
        // 2x2 corner is mapped directly.
        let q = 1.0 - p;
        for e in 0..self.graph.edge_count() {
            let (a, b) = (2 * e, 2 * e + 1);
            for j in 0..d {
                if j == a || j == b {
                    continue;
                }
                let (x, y) = (rho[(a, j)], rho[(b, j)]);
                rho[(a, j)] = q * x + p * y;
                rho[(b, j)] = q * y + p * x;
            }
            for i in 0..d {
                if i == a || i == b {
                    continue;
                }
                let (x, y) = (rho[(i, a)], rho[(i, b)]);
                rho[(i, a)] = q * x + p * y;
                rho[(i, b)] = q * y + p * x;
            }
            let (paa, pab, pba, pbb) = (rho[(a, a)], rho[(a, b)], rho[(b, a)], rho[(b, b)]);
            rho[(a, a)] = q * paa + p * pbb;
            rho[(a, b)] = q * pab + p * pba;
            rho[(b, a)] = q * pba + p * pab;
            rho[(b, b)] = q * pbb + p * paa;
        }
        // Coin sandwich: C rho C with the symmetric Grover blocks.
        let coin_rows = |rho: &mut DMatrix<C64>, g: &StateGraph| {
            for states in &g.out_states {
                for j in 0..d {
                    let sum = rho[(states[0], j)] + rho[(states[1], j)] + rho[(states[2], j)];
                    let avg = sum * (2.0 / 3.0);
                    for &s in states {
                        rho[(s, j)] = avg - rho[(s, j)];
                    }
                }
            }
        };
        let coin_cols = |rho: &mut DMatrix<C64>, g: &StateGraph| {
            for states in &g.out_states {
                for i in 0..d {
                    let sum = rho[(i, states[0])] + rho[(i, states[1])] + rho[(i, states[2])];
                    let avg = sum * (2.0 / 3.0);
                    for &s in states {
                        rho[(i, s)] = avg - rho[(i, s)];
                    }
                }
            }
        };
        coin_rows(rho, self.graph);
        coin_cols(rho, self.graph);
        // Sink projection on both sides.
        for &s in &self.sink_states {
            for j in 0..d {
                rho[(s, j)] = C64::new(0.0, 0.0);
            }
            for i in 0..d {
                rho[(i, s)] = C64::new(0.0, 0.0);
            }
        }
    }
}

/// Draws one open-edge configuration with independent probability `p`.
pub fn sample_configuration(ecount: usize, p: f64, rng: &mut impl Rng) -> Vec<bool> {
    (0..ecount).map(|_| rng.gen::<f64>() < p).collect()
}

/// Builds the dense matrix of one closed-system step (masked shift followed
/// by coin, no sink) by applying the matrix-free operators to unit vectors.
pub fn dense_step_matrix(g: &StateGraph, open: Option<&[bool]>) -> DMatrix<f64> {
    let d = g.state_count();
    let walk = Walk {
        graph: g,
        sink_states: Vec::new(),
    };
    let mut m = DMatrix::<f64>::zeros(d, d);
    for col in 0..d {
        let mut psi = basis_state(g, col);
        match open {
            Some(mask) => walk.apply_shift_masked(&mut psi, mask),
            None => walk.apply_shift(&mut psi),
        }
        walk.apply_coin(&mut psi);
        for row in 0..d {
            debug_assert!(psi[row].im.abs() < 1e-15);
            m[(row, col)] = psi[row].re;
        }
    }
    m
}
