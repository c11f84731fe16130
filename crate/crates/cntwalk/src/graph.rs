//! Nanotube structure graphs and their directed state spaces.
//!
//! A tube is a honeycomb-lattice strip wrapped along a chirality vector
//! `(m, n)` and cut to a number of basal length segments along the axis.
//! Construction is purely combinatorial: cells of the hexagonal lattice are
//! indexed by `(i, j)` with two sublattice sites per cell, the wrap
//! identifies `(i, j)` with `(i + m, j + n)`, and an integer height function
//! selects the finite window. After the cut, degree-1 vertices are removed
//! and every remaining degree-2 boundary vertex receives a self-loop, which
//! makes the graph effectively 3-regular: every vertex emits exactly three
//! directed states (two or three arcs, plus possibly one loop).
//!
//! The state space of the walk is the set of directed arcs plus loop states;
//! its dimension is `2·#edges + #loops = 3·#vertices`.

use crate::{Error, Result};
use std::collections::HashMap;

/// Chirality and length of a tube, the complete input of the constructor.
///
/// `(m, n)` is the wrap vector in lattice coordinates; `(k, 0)` tubes are
/// zig-zag, `(k, k)` tubes are armchair. `length` counts basal length
/// segments along the tube axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct TubeSpec {
    pub m: u32,
    pub n: u32,
    pub length: u32,
}

/// The two analytically supported chirality families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// `(k, 0)` with `k >= 3`.
    ZigZag(u32),
    /// `(k, k)` with `k >= 2`.
    Armchair(u32),
}

impl TubeSpec {
    /// Validates the chirality and length. `(0, 0)` is rejected outright,
    /// as are wraps too tight to produce a simple graph.
    pub fn new(m: u32, n: u32, length: u32) -> Result<Self> {
        if m == 0 && n == 0 {
            return Err(Error::InvalidSpec("chirality (0,0) has no wrap".into()));
        }
        if length == 0 {
            return Err(Error::InvalidSpec("length must be at least 1".into()));
        }
        let spec = TubeSpec { m, n, length };
        if let (k, 0) | (0, k) = (m, n) {
            if k < 3 {
                return Err(Error::DegenerateWrap(format!(
                    "({m},{n}) wraps a zig-zag tube onto itself; need k >= 3"
                )));
            }
        }
        if m == n && m < 2 {
            return Err(Error::DegenerateWrap(
                "(1,1) wraps an armchair tube onto itself; need k >= 2".into(),
            ));
        }
        Ok(spec)
    }

    /// The analytic family this spec belongs to, if any. Other chiralities
    /// are constructible but served by the numerical oracle only.
    pub fn family(&self) -> Option<Family> {
        match (self.m, self.n) {
            (k, 0) | (0, k) if k >= 3 => Some(Family::ZigZag(k)),
            (a, b) if a == b && a >= 2 => Some(Family::Armchair(a)),
            _ => None,
        }
    }
}

impl std::fmt::Display for TubeSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{}) length {}", self.m, self.n, self.length)
    }
}

/// Which open end of the tube a subspace or ring refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum End {
    Bottom,
    Top,
}

/// A finite nanotube structure graph together with its directed state space.
///
/// Vertices are numbered ring-major from the bottom end upward; within a
/// ring they follow the circumferential coordinate. Each edge `e` owns two
/// arcs, `2e` oriented from the lower-numbered endpoint and `2e + 1` back.
/// Loop states are numbered after all arcs, in vertex order, so the full
/// state space is `0 .. 2·edge_count + loop states`.
#[derive(Debug, Clone)]
pub struct StateGraph {
    pub spec: TubeSpec,
    /// Undirected edges as `[u, v]` with `u < v`, sorted lexicographically.
    pub edges: Vec<[usize; 2]>,
    /// `loops[i]` is the vertex carrying loop state `2·edge_count + i`,
    /// in increasing vertex order.
    pub loops: Vec<usize>,
    /// Loop state index per vertex, if the vertex carries one.
    pub loop_of_vertex: Vec<Option<usize>>,
    /// Per vertex: outgoing arcs in counterclockwise cyclic order on the
    /// unrolled tube surface (loops excluded).
    pub rotation: Vec<Vec<usize>>,
    /// Per vertex: its three outgoing states (arcs and possibly a loop),
    /// ascending. This is the coin block of the vertex.
    pub out_states: Vec<[usize; 3]>,
    /// Inner faces (bottom face first), each as a cyclic arc sequence.
    /// The face of the top open end plays the outer face and is excluded.
    pub faces: Vec<Vec<usize>>,
    /// Arc cycle of the top boundary face (the outer face of the embedding),
    /// kept for boundary walks along the top end.
    pub outer_cycle: Vec<usize>,
    /// Loop-bearing vertices of the bottom end in boundary-cycle order.
    pub bottom_ring: Vec<usize>,
    /// Loop-bearing vertices of the top end in boundary-cycle order.
    pub top_ring: Vec<usize>,
    /// Dense axial ring index per vertex, 0 at the bottom.
    pub vertex_ring: Vec<usize>,
    /// Sublattice of each vertex (false = A, true = B).
    pub sublattice: Vec<bool>,
    /// Integer axial height per vertex (construction coordinate).
    pub vertex_height: Vec<i64>,
    /// Integer circumferential coordinate per vertex (construction coordinate).
    pub vertex_circ: Vec<i64>,
    /// Per arc: source vertex.
    pub arc_src: Vec<usize>,
    /// Per arc: destination vertex.
    pub arc_dst: Vec<usize>,
}

impl StateGraph {
    pub fn vertex_count(&self) -> usize {
        self.out_states.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn loop_count(&self) -> usize {
        self.loops.len()
    }

    /// Dimension of the walk's state space: `2·#edges + #loops`.
    pub fn state_count(&self) -> usize {
        2 * self.edge_count() + self.loop_count()
    }

    pub fn arc_count(&self) -> usize {
        2 * self.edge_count()
    }

    /// The paired arc of `arc` (same edge, opposite direction).
    pub fn twin(&self, arc: usize) -> usize {
        arc ^ 1
    }

    pub fn edge_of_arc(&self, arc: usize) -> usize {
        arc >> 1
    }

    /// True if the state index refers to a self-loop rather than an arc.
    pub fn is_loop_state(&self, state: usize) -> bool {
        state >= self.arc_count()
    }

    /// The vertex a state belongs to (the source vertex of an arc, or the
    /// anchor vertex of a loop).
    pub fn vertex_of_state(&self, state: usize) -> usize {
        if self.is_loop_state(state) {
            self.loops[state - self.arc_count()]
        } else {
            self.arc_src[state]
        }
    }

    /// Loop-bearing vertices of an end, in boundary-cycle order.
    pub fn ring(&self, end: End) -> &[usize] {
        match end {
            End::Bottom => &self.bottom_ring,
            End::Top => &self.top_ring,
        }
    }

    /// Number of rings (distinct axial heights).
    pub fn ring_count(&self) -> usize {
        self.vertex_ring.iter().copied().max().map_or(0, |r| r + 1)
    }
}

/// Which kind of region a transport subspace covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum SubspaceKind {
    /// The three outgoing states of one loop-bearing boundary vertex.
    OneVertex,
    /// All loop states of one end.
    Loops,
}

/// A set of state indices used as a source or sink region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subspace {
    pub end: End,
    pub kind: SubspaceKind,
    pub states: Vec<usize>,
}

impl Subspace {
    pub fn dim(&self) -> usize {
        self.states.len()
    }
}

/// Selects a source/sink subspace on one end of the tube.
///
/// For [`SubspaceKind::OneVertex`], `vertex_choice` must name a loop-bearing
/// vertex of that end; by default the lowest-index one is taken. The
/// subspace consists of the vertex's two arcs and its loop. For
/// [`SubspaceKind::Loops`], the subspace is every loop state of the end.
pub fn select_subspace(
    graph: &StateGraph,
    end: End,
    kind: SubspaceKind,
    vertex_choice: Option<usize>,
) -> Result<Subspace> {
    let ring = graph.ring(end);
    match kind {
        SubspaceKind::Loops => {
            if vertex_choice.is_some() {
                return Err(Error::Subspace(
                    "vertex choice is only meaningful for one-vertex subspaces".into(),
                ));
            }
            let mut verts: Vec<usize> = ring.to_vec();
            verts.sort_unstable();
            let states = verts
                .iter()
                .map(|&v| {
                    graph.loop_of_vertex[v]
                        .ok_or_else(|| Error::Subspace(format!("ring vertex {v} has no loop")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Subspace { end, kind, states })
        }
        SubspaceKind::OneVertex => {
            let v = match vertex_choice {
                Some(v) => {
                    if !ring.contains(&v) {
                        return Err(Error::Subspace(format!(
                            "vertex {v} is not a loop-bearing vertex of the chosen end"
                        )));
                    }
                    v
                }
                None => *ring
                    .iter()
                    .min()
                    .ok_or_else(|| Error::Subspace("end has no loop-bearing vertices".into()))?,
            };
            if graph.loop_of_vertex[v].is_none() {
                return Err(Error::Subspace(format!("vertex {v} carries no loop")));
            }
            Ok(Subspace {
                end,
                kind,
                states: graph.out_states[v].to_vec(),
            })
        }
    }
}

/// Lattice cell key in canonical (wrap-reduced) coordinates.
type Cell = (i64, i64);

/// One site: canonical cell plus sublattice bit (0 = A, 1 = B).
type Site = (i64, i64, u8);

struct Builder {
    m: i64,
    n: i64,
}

impl Builder {
    /// Canonical representative of a cell under `(i, j) ~ (i + m, j + n)`.
    fn canon(&self, i: i64, j: i64) -> Cell {
        let t = if self.m > 0 {
            i.div_euclid(self.m)
        } else {
            j.div_euclid(self.n)
        };
        (i - t * self.m, j - t * self.n)
    }

    /// Integer axial height of a site. Grows monotonically along the tube
    /// axis; the scale is irrelevant, only order and spacing matter.
    fn height(&self, i: i64, j: i64, s: u8) -> i64 {
        3 * (self.m * j - self.n * i) + s as i64 * (2 * self.m + self.n)
    }

    /// Integer circumferential coordinate of a site (well defined on the
    /// canonical representative).
    fn circ(&self, i: i64, j: i64, s: u8) -> i64 {
        i * (2 * self.m + self.n) + j * (self.m + 2 * self.n) + s as i64 * self.n
    }

    /// The three bonds leaving an A site, as cell offsets of the partner B
    /// site together with the arc direction `(d_circ, d_height)` A -> B.
    fn bonds(&self) -> [((i64, i64), (i64, i64)); 3] {
        let (m, n) = (self.m, self.n);
        [
            ((0, 0), (n, 2 * m + n)),
            ((1, -1), (m, -(m + 2 * n))),
            ((0, -1), (-(m + n), n - m)),
        ]
    }
}

/// Builds the structure graph of a nanotube.
///
/// The construction cuts the wrapped honeycomb strip to an axial window of
/// `length` basal segments, removes degree-1 vertices, attaches a self-loop
/// to every remaining degree-2 vertex, and derives the planar embedding data
/// (rotation system, inner faces, boundary rings) that the analytic
/// trapped-state families are built from.
pub fn build_nanotube(spec: &TubeSpec) -> Result<StateGraph> {
    let b = Builder {
        m: spec.m as i64,
        n: spec.n as i64,
    };
    let (m, n) = (b.m, b.n);

    // Axial height of one basal segment: the primitive lattice vector
    // orthogonal to the wrap advances the height function by this much.
    let d = gcd(2 * m + n, 2 * n + m);
    let h_seg = 6 * (m * m + m * n + n * n) / d;
    let window = spec.length as i64 * h_seg;

    // Enumerate sites of the transversal whose height lies in [0, window].
    let mut site_ids: HashMap<Site, usize> = HashMap::new();
    let mut sites: Vec<Site> = Vec::new();
    {
        let mut push = |site: Site| {
            if !site_ids.contains_key(&site) {
                site_ids.insert(site, sites.len());
                sites.push(site);
            }
        };
        if m > 0 {
            for i in 0..m {
                for s in 0..2u8 {
                    // Solve 0 <= 3(mj - ni) + s(2m+n) <= window for j.
                    let off = s as i64 * (2 * m + n) - 3 * n * i;
                    let lo = div_ceil(-off, 3 * m);
                    let hi = div_floor(window - off, 3 * m);
                    for j in lo..=hi {
                        debug_assert!((0..=window).contains(&b.height(i, j, s)));
                        push((i, j, s));
                    }
                }
            }
        } else {
            for j in 0..n {
                for s in 0..2u8 {
                    // m == 0: solve 0 <= -3ni + sn <= window for i.
                    let off = s as i64 * n;
                    let lo = div_ceil(off - window, 3 * n);
                    let hi = div_floor(off, 3 * n);
                    for i in lo..=hi {
                        debug_assert!((0..=window).contains(&b.height(i, j, s)));
                        push((i, j, s));
                    }
                }
            }
        }
    }

    // Candidate bonds: every A site reaches up to three B sites.
    // `bond_arcs[k]` records the arc direction of bond k for the A -> B arc.
    let mut cand_edges: Vec<(usize, usize, (i64, i64))> = Vec::new();
    for (&(i, j, s), &a_id) in &site_ids {
        if s != 0 {
            continue;
        }
        for ((di, dj), delta) in b.bonds() {
            let cell = b.canon(i + di, j + dj);
            if let Some(&b_id) = site_ids.get(&(cell.0, cell.1, 1)) {
                cand_edges.push((a_id, b_id, delta));
            }
        }
    }

    // Iteratively prune degree-1 vertices (degree-0 fall out with them).
    let mut alive = vec![true; sites.len()];
    loop {
        let mut degree = vec![0usize; sites.len()];
        for &(a, bb, _) in &cand_edges {
            if alive[a] && alive[bb] {
                degree[a] += 1;
                degree[bb] += 1;
            }
        }
        let mut changed = false;
        for v in 0..sites.len() {
            if alive[v] && degree[v] <= 1 {
                alive[v] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    if !alive.iter().any(|&a| a) {
        return Err(Error::Embedding(format!(
            "tube {spec} is empty after pruning"
        )));
    }

    // Renumber surviving sites ring-major bottom-to-top, circumferential
    // order within a ring.
    let mut order: Vec<usize> = (0..sites.len()).filter(|&v| alive[v]).collect();
    order.sort_by_key(|&v| {
        let (i, j, s) = sites[v];
        (b.height(i, j, s), b.circ(i, j, s))
    });
    let mut new_id = vec![usize::MAX; sites.len()];
    for (id, &v) in order.iter().enumerate() {
        new_id[v] = id;
    }
    let vcount = order.len();
    let vertex_height: Vec<i64> = order
        .iter()
        .map(|&v| {
            let (i, j, s) = sites[v];
            b.height(i, j, s)
        })
        .collect();
    let vertex_circ: Vec<i64> = order
        .iter()
        .map(|&v| {
            let (i, j, s) = sites[v];
            b.circ(i, j, s)
        })
        .collect();
    let sublattice: Vec<bool> = order.iter().map(|&v| sites[v].2 == 1).collect();

    // Dense ring index per vertex.
    let mut heights: Vec<i64> = vertex_height.clone();
    heights.sort_unstable();
    heights.dedup();
    let vertex_ring: Vec<usize> = vertex_height
        .iter()
        .map(|h| heights.binary_search(h).expect("height present"))
        .collect();

    // Final edge list. Reject multi-edges: a wrap tight enough to bond the
    // same two vertices twice is not a simple tube.
    let mut edge_dirs: HashMap<[usize; 2], (i64, i64)> = HashMap::new();
    for &(a, bb, delta) in &cand_edges {
        if !(alive[a] && alive[bb]) {
            continue;
        }
        let (ai, bi) = (new_id[a], new_id[bb]);
        debug_assert_ne!(ai, bi, "bipartite bond cannot be a self-edge");
        // Key the direction to the lower-id endpoint: delta is A -> B.
        let (key, dir) = if ai < bi {
            ([ai, bi], delta)
        } else {
            ([bi, ai], (-delta.0, -delta.1))
        };
        if edge_dirs.insert(key, dir).is_some() {
            return Err(Error::DegenerateWrap(format!(
                "tube {spec} wraps two bonds onto the same vertex pair"
            )));
        }
    }
    let mut edges: Vec<[usize; 2]> = edge_dirs.keys().copied().collect();
    edges.sort_unstable();
    let ecount = edges.len();

    // Arcs: 2e from the lower endpoint, 2e+1 back.
    let mut arc_src = vec![0usize; 2 * ecount];
    let mut arc_dst = vec![0usize; 2 * ecount];
    let mut arc_delta = vec![(0i64, 0i64); 2 * ecount];
    for (e, &[u, v]) in edges.iter().enumerate() {
        let dir = edge_dirs[&[u, v]];
        arc_src[2 * e] = u;
        arc_dst[2 * e] = v;
        arc_delta[2 * e] = dir;
        arc_src[2 * e + 1] = v;
        arc_dst[2 * e + 1] = u;
        arc_delta[2 * e + 1] = (-dir.0, -dir.1);
    }

    // Degrees, connectivity, loop placement.
    let mut degree = vec![0usize; vcount];
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); vcount];
    for a in 0..2 * ecount {
        degree[arc_src[a]] += 1;
        incident[arc_src[a]].push(a);
    }
    for v in 0..vcount {
        if !(degree[v] == 2 || degree[v] == 3) {
            return Err(Error::Embedding(format!(
                "tube {spec}: vertex {v} has degree {} after pruning",
                degree[v]
            )));
        }
    }
    {
        let mut seen = vec![false; vcount];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut reached = 1;
        while let Some(v) = stack.pop() {
            for &a in &incident[v] {
                let w = arc_dst[a];
                if !seen[w] {
                    seen[w] = true;
                    reached += 1;
                    stack.push(w);
                }
            }
        }
        if reached != vcount {
            return Err(Error::Embedding(format!("tube {spec} is not connected")));
        }
    }

    let loops: Vec<usize> = (0..vcount).filter(|&v| degree[v] == 2).collect();
    let mut loop_of_vertex: Vec<Option<usize>> = vec![None; vcount];
    for (li, &v) in loops.iter().enumerate() {
        loop_of_vertex[v] = Some(2 * ecount + li);
    }

    // Rotation system: outgoing arcs in counterclockwise order by the exact
    // integer direction on the unrolled (circumference, height) plane.
    let mut rotation: Vec<Vec<usize>> = incident;
    for rot in rotation.iter_mut() {
        rot.sort_by(|&x, &y| ccw_order(arc_delta[x], arc_delta[y]));
    }
    let mut rot_pos = vec![0usize; 2 * ecount];
    for rot in rotation.iter() {
        for (p, &a) in rot.iter().enumerate() {
            rot_pos[a] = p;
        }
    }

    // Trace faces: successor-of-twin orbits cover every arc exactly once.
    let mut face_of_arc = vec![usize::MAX; 2 * ecount];
    let mut all_faces: Vec<Vec<usize>> = Vec::new();
    for start in 0..2 * ecount {
        if face_of_arc[start] != usize::MAX {
            continue;
        }
        let id = all_faces.len();
        let mut cycle = Vec::new();
        let mut a = start;
        loop {
            if face_of_arc[a] != usize::MAX {
                return Err(Error::Embedding(
                    "inconsistent rotation system: arc visited twice".into(),
                ));
            }
            face_of_arc[a] = id;
            cycle.push(a);
            let t = a ^ 1;
            let v = arc_src[t];
            let p = rot_pos[t];
            a = rotation[v][(p + 1) % rotation[v].len()];
            if a == start {
                break;
            }
        }
        all_faces.push(cycle);
    }
    let euler_faces = 2 + ecount as i64 - vcount as i64;
    if all_faces.len() as i64 != euler_faces {
        return Err(Error::Embedding(format!(
            "tube {spec}: traced {} faces, Euler expects {euler_faces}",
            all_faces.len()
        )));
    }
    for f in &all_faces {
        if f.len() % 2 != 0 {
            return Err(Error::Embedding(format!(
                "tube {spec}: odd face of size {}",
                f.len()
            )));
        }
    }

    // Boundary rings: loop vertices sit on the lowest and highest rings.
    let top_ring_idx = heights.len() - 1;
    let bottom_loops: Vec<usize> = loops
        .iter()
        .copied()
        .filter(|&v| vertex_ring[v] == 0)
        .collect();
    let top_loops: Vec<usize> = loops
        .iter()
        .copied()
        .filter(|&v| vertex_ring[v] == top_ring_idx)
        .collect();
    if bottom_loops.len() + top_loops.len() != loops.len() {
        return Err(Error::Embedding(format!(
            "tube {spec}: loop vertices away from the boundary rings"
        )));
    }

    // The unique face walking through every bottom (top) loop vertex is the
    // bottom (top) boundary face.
    let find_boundary_face = |ring: &[usize]| -> Result<usize> {
        let mut found = None;
        for (id, cycle) in all_faces.iter().enumerate() {
            let verts: Vec<usize> = cycle.iter().map(|&a| arc_src[a]).collect();
            if ring.iter().all(|v| verts.contains(v)) {
                if found.is_some() {
                    return Err(Error::Embedding(
                        "ambiguous boundary face for an end ring".into(),
                    ));
                }
                found = Some(id);
            }
        }
        found.ok_or_else(|| Error::Embedding("no face contains the whole end ring".into()))
    };
    let bottom_face = find_boundary_face(&bottom_loops)?;
    let top_face = find_boundary_face(&top_loops)?;
    if bottom_face == top_face {
        return Err(Error::Embedding(format!(
            "tube {spec} is too short: its two boundary faces coincide"
        )));
    }
    for (face, ring) in [(bottom_face, &bottom_loops), (top_face, &top_loops)] {
        if all_faces[face].len() != 2 * ring.len() {
            return Err(Error::Embedding(format!(
                "tube {spec}: boundary face size {} does not match {} loops",
                all_faces[face].len(),
                ring.len()
            )));
        }
    }

    // Boundary rings in cycle order, starting from the lowest vertex id.
    let ring_in_cycle_order = |face: usize, ring: &[usize]| -> Vec<usize> {
        let seq: Vec<usize> = all_faces[face]
            .iter()
            .map(|&a| arc_src[a])
            .filter(|v| ring.contains(v))
            .collect();
        let best = seq
            .iter()
            .enumerate()
            .min_by_key(|&(_, &v)| v)
            .map(|(p, _)| p)
            .unwrap_or(0);
        (0..seq.len()).map(|k| seq[(best + k) % seq.len()]).collect()
    };
    let bottom_ring = ring_in_cycle_order(bottom_face, &bottom_loops);
    let top_ring = ring_in_cycle_order(top_face, &top_loops);

    // Inner faces: everything except the top boundary face, which plays the
    // outer face of the planar embedding. Bottom face first, then by lowest
    // contained arc.
    let mut inner_ids: Vec<usize> = (0..all_faces.len()).filter(|&f| f != top_face).collect();
    inner_ids.sort_by_key(|&f| {
        let min_arc = *all_faces[f].iter().min().expect("face is nonempty");
        (f != bottom_face, min_arc)
    });
    // Start each cycle at its smallest arc for determinism.
    let normalize_cycle = |cycle: &Vec<usize>| -> Vec<usize> {
        let best = cycle
            .iter()
            .enumerate()
            .min_by_key(|&(_, &a)| a)
            .map(|(p, _)| p)
            .unwrap_or(0);
        (0..cycle.len()).map(|k| cycle[(best + k) % cycle.len()]).collect()
    };
    let faces: Vec<Vec<usize>> = inner_ids.into_iter().map(|f| normalize_cycle(&all_faces[f])).collect();
    let outer_cycle = normalize_cycle(&all_faces[top_face]);

    // Coin blocks: the three outgoing states of each vertex.
    let mut out_states = Vec::with_capacity(vcount);
    for v in 0..vcount {
        let mut states: Vec<usize> = rotation[v].clone();
        if let Some(l) = loop_of_vertex[v] {
            states.push(l);
        }
        states.sort_unstable();
        if states.len() != 3 {
            return Err(Error::Embedding(format!(
                "vertex {v} has {} outgoing states, expected 3",
                states.len()
            )));
        }
        out_states.push([states[0], states[1], states[2]]);
    }

    Ok(StateGraph {
        spec: *spec,
        edges,
        loops,
        loop_of_vertex,
        rotation,
        out_states,
        faces,
        outer_cycle,
        bottom_ring,
        top_ring,
        vertex_ring,
        sublattice,
        vertex_height,
        vertex_circ,
        arc_src,
        arc_dst,
    })
}

/// Counterclockwise angular order of exact integer directions, starting at
/// the positive circumference axis.
fn ccw_order(a: (i64, i64), b: (i64, i64)) -> std::cmp::Ordering {
    let half = |d: (i64, i64)| -> u8 {
        // 0 for angles in [0, pi), 1 for [pi, 2pi).
        if d.1 > 0 || (d.1 == 0 && d.0 > 0) {
            0
        } else {
            1
        }
    };
    half(a).cmp(&half(b)).then_with(|| {
        let cross = a.0 * b.1 - a.1 * b.0;
        cross.cmp(&0).reverse()
    })
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

fn div_floor(a: i64, b: i64) -> i64 {
    a.div_euclid(b)
}

fn div_ceil(a: i64, b: i64) -> i64 {
    -((-a).div_euclid(b))
}

/// Serializes the graph in the line-oriented text format documented in the
/// repository README. The output is deterministic for a given spec.
pub fn export_text(g: &StateGraph) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    writeln!(s, "# nanotube state graph v1").unwrap();
    writeln!(s, "spec {} {} {}", g.spec.m, g.spec.n, g.spec.length).unwrap();
    writeln!(
        s,
        "counts vertices={} edges={} loops={} innerfaces={} states={}",
        g.vertex_count(),
        g.edge_count(),
        g.loop_count(),
        g.faces.len(),
        g.state_count()
    )
    .unwrap();
    for v in 0..g.vertex_count() {
        let loop_field = match g.loop_of_vertex[v] {
            Some(l) => l.to_string(),
            None => "-".into(),
        };
        writeln!(
            s,
            "v {v} ring={} sub={} h={} c={} loop={loop_field}",
            g.vertex_ring[v],
            if g.sublattice[v] { 'B' } else { 'A' },
            g.vertex_height[v],
            g.vertex_circ[v]
        )
        .unwrap();
    }
    for (e, [u, v]) in g.edges.iter().enumerate() {
        writeln!(s, "e {e} {u} {v}").unwrap();
    }
    for (li, &v) in g.loops.iter().enumerate() {
        writeln!(s, "l {li} vertex={v} state={}", g.arc_count() + li).unwrap();
    }
    for (fi, face) in g.faces.iter().enumerate() {
        let kind = if fi == 0 { "bottom" } else { "inner" };
        let verts: Vec<String> = face.iter().map(|&a| g.arc_src[a].to_string()).collect();
        let edges: Vec<String> = face
            .iter()
            .map(|&a| g.edge_of_arc(a).to_string())
            .collect();
        writeln!(
            s,
            "f {fi} kind={kind} size={} vertices={} edges={}",
            face.len(),
            verts.join(","),
            edges.join(",")
        )
        .unwrap();
    }
    let fmt_ring = |ring: &[usize]| {
        ring.iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    writeln!(s, "ring bottom vertices={}", fmt_ring(&g.bottom_ring)).unwrap();
    writeln!(s, "ring top vertices={}", fmt_ring(&g.top_ring)).unwrap();
    s
}
