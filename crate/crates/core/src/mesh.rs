//! Discrete closed manifolds.
//!
//! A [`DiscreteManifold`] is a connected weighted graph with strictly positive
//! vertex masses (the volume element) and nonnegative edge conductances. The
//! Laplace–Beltrami surrogate is the generalized pencil `L x = λ M x` where `L`
//! is the graph stiffness matrix (`L·1 = 0`, nonpositive off-diagonals) and `M`
//! the diagonal mass matrix, so `−Δ = M⁻¹L` is self-adjoint in the mass inner
//! product `⟨u, v⟩ = Σ_x mass(x) u(x) v(x)`.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::spectral::SpectralDecomposition;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub conductance: f64,
    pub length: f64,
}

#[derive(Clone, Debug)]
pub struct DiscreteManifold {
    dim_hint: usize,
    mass: Vec<f64>,
    edges: Vec<Edge>,
    /// `(neighbor, edge index)` per vertex, sorted by neighbor.
    adjacency: Vec<Vec<(usize, usize)>>,
    grid: Option<Vec<usize>>,
}

impl DiscreteManifold {
    /// Validates and builds a manifold from raw parts. Parallel edges are
    /// rejected; every edge must have positive conductance and length.
    pub fn new(dim_hint: usize, mass: Vec<f64>, edges: Vec<Edge>) -> Result<Self> {
        let n = mass.len();
        if n < 2 {
            return Err(Error::InvalidManifold(format!("need at least 2 vertices, got {n}")));
        }
        if dim_hint == 0 {
            return Err(Error::InvalidManifold("dimension hint must be positive".into()));
        }
        if let Some((i, w)) = mass.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidManifold(format!("mass of vertex {i} is {w}, must be positive")));
        }
        let mut adjacency = vec![Vec::new(); n];
        for (k, e) in edges.iter().enumerate() {
            if e.a >= n || e.b >= n {
                return Err(Error::IndexOutOfRange { index: e.a.max(e.b), n });
            }
            if e.a == e.b {
                return Err(Error::InvalidManifold(format!("self loop at vertex {}", e.a)));
            }
            if !(e.conductance.is_finite() && e.conductance > 0.0) {
                return Err(Error::InvalidManifold(format!(
                    "edge ({}, {}) has conductance {}",
                    e.a, e.b, e.conductance
                )));
            }
            if !(e.length.is_finite() && e.length > 0.0) {
                return Err(Error::InvalidManifold(format!(
                    "edge ({}, {}) has length {}",
                    e.a, e.b, e.length
                )));
            }
            adjacency[e.a].push((e.b, k));
            adjacency[e.b].push((e.a, k));
        }
        for (v, list) in adjacency.iter_mut().enumerate() {
            list.sort_unstable();
            if list.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::InvalidManifold(format!("parallel edges at vertex {v}")));
            }
        }
        let m = Self { dim_hint, mass, edges, adjacency, grid: None };
        let hops = m.hop_distances(0);
        let unreachable: Vec<usize> = (0..n).filter(|&v| hops[v] == usize::MAX).collect();
        if !unreachable.is_empty() {
            return Err(Error::Disconnected { source_vertex: 0, unreachable });
        }
        Ok(m)
    }

    /// Product of cycles with unit mass and nearest-neighbor coupling.
    pub fn flat_torus(sides: &[usize], conductance: f64) -> Result<Self> {
        if sides.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "torus needs at least two side lengths, got {}",
                sides.len()
            )));
        }
        Self::grid_of_cycles(sides, conductance)
    }

    /// The cycle graph `C_n` (dimension hint 1).
    pub fn cycle(n: usize, conductance: f64) -> Result<Self> {
        Self::grid_of_cycles(&[n], conductance)
    }

    fn grid_of_cycles(sides: &[usize], conductance: f64) -> Result<Self> {
        if let Some(&s) = sides.iter().find(|&&s| s < 3) {
            return Err(Error::InvalidParameter(format!("side length {s} < 3 gives a degenerate cycle")));
        }
        if !(conductance.is_finite() && conductance > 0.0) {
            return Err(Error::InvalidParameter(format!("conductance {conductance} must be positive")));
        }
        let n: usize = sides.iter().product();
        let mut edges = Vec::with_capacity(n * sides.len());
        let mut coords = vec![0usize; sides.len()];
        for v in 0..n {
            decode(v, sides, &mut coords);
            for axis in 0..sides.len() {
                let mut next = coords.clone();
                next[axis] = (coords[axis] + 1) % sides[axis];
                let w = encode(&next, sides);
                edges.push(Edge { a: v.min(w), b: v.max(w), conductance, length: 1.0 });
            }
        }
        let mut m = Self::new(sides.len(), vec![1.0; n], edges)?;
        m.grid = Some(sides.to_vec());
        Ok(m)
    }

    /// A ring with random chords, random conductances in `[0.5, 1.5]` and
    /// random masses in `[0.5, 1.5]`. Connected by construction.
    pub fn random_graph(n: usize, extra_edges: usize, seed: u64) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidParameter(format!("random graph needs n >= 3, got {n}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut present = std::collections::BTreeSet::new();
        let mut edges = Vec::new();
        for v in 0..n {
            let w = (v + 1) % n;
            present.insert((v.min(w), v.max(w)));
            edges.push(Edge { a: v.min(w), b: v.max(w), conductance: rng.gen_range(0.5..1.5), length: 1.0 });
        }
        let max_edges = n * (n - 1) / 2;
        let mut added = 0;
        while added < extra_edges && present.len() < max_edges {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a == b || !present.insert((a.min(b), a.max(b))) {
                continue;
            }
            edges.push(Edge { a: a.min(b), b: a.max(b), conductance: rng.gen_range(0.5..1.5), length: 1.0 });
            added += 1;
        }
        let mass = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
        Self::new(2, mass, edges)
    }

    /// Scales masses and conductances by smooth positive fields `1 + a·s(x)`
    /// with `|s| ≤ 1`; conductances use the geometric mean of their endpoints.
    pub fn perturbed(&self, amplitude: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&amplitude) {
            return Err(Error::InvalidParameter(format!("perturbation amplitude {amplitude} not in [0, 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..self.n_vertices()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // one neighbor-averaging pass smooths the field
        let smooth: Vec<f64> = (0..self.n_vertices())
            .map(|v| {
                let nb = &self.adjacency[v];
                (raw[v] + nb.iter().map(|&(w, _)| raw[w]).sum::<f64>()) / (1 + nb.len()) as f64
            })
            .collect();
        let field: Vec<f64> = smooth.iter().map(|s| 1.0 + amplitude * s).collect();
        let mass = self.mass.iter().zip(&field).map(|(m, f)| m * f).collect();
        let edges = self
            .edges
            .iter()
            .map(|e| Edge { conductance: e.conductance * (field[e.a] * field[e.b]).sqrt(), ..e.clone() })
            .collect();
        let mut m = Self::new(self.dim_hint, mass, edges)?;
        m.grid = self.grid.clone();
        Ok(m)
    }

    pub fn n_vertices(&self) -> usize {
        self.mass.len()
    }

    pub fn dim_hint(&self) -> usize {
        self.dim_hint
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Neighbors of `v` with the index of the connecting edge.
    pub fn neighbors(&self, v: usize) -> &[(usize, usize)] {
        &self.adjacency[v]
    }

    pub fn edge_between(&self, a: usize, b: usize) -> Option<&Edge> {
        self.adjacency[a]
            .binary_search_by_key(&b, |&(w, _)| w)
            .ok()
            .map(|i| &self.edges[self.adjacency[a][i].1])
    }

    /// Side lengths when built as a torus or cycle.
    pub fn grid_sides(&self) -> Option<&[usize]> {
        self.grid.as_deref()
    }

    pub fn grid_vertex(&self, coords: &[usize]) -> Option<usize> {
        let sides = self.grid.as_ref()?;
        (coords.len() == sides.len()).then(|| {
            let wrapped: Vec<usize> = coords.iter().zip(sides).map(|(c, s)| c % s).collect();
            encode(&wrapped, sides)
        })
    }

    pub fn grid_coords(&self, v: usize) -> Option<Vec<usize>> {
        let sides = self.grid.as_ref()?;
        let mut c = vec![0; sides.len()];
        decode(v, sides, &mut c);
        Some(c)
    }

    /// Dense stiffness matrix `L` (row sums zero, off-diagonals `−c`).
    pub fn stiffness_matrix(&self) -> DMatrix<f64> {
        let n = self.n_vertices();
        let mut l = DMatrix::zeros(n, n);
        for e in &self.edges {
            l[(e.a, e.b)] -= e.conductance;
            l[(e.b, e.a)] -= e.conductance;
            l[(e.a, e.a)] += e.conductance;
            l[(e.b, e.b)] += e.conductance;
        }
        l
    }

    /// `(−Δ) f = M⁻¹ L f`, evaluated with the sparse stencil so that the
    /// output vanishes exactly away from the one-hop neighborhood of `supp f`.
    pub fn apply_neg_laplacian(&self, f: &[f64]) -> Vec<f64> {
        (0..self.n_vertices())
            .map(|v| {
                let acc: f64 = self.adjacency[v]
                    .iter()
                    .map(|&(w, k)| self.edges[k].conductance * (f[v] - f[w]))
                    .sum();
                acc / self.mass[v]
            })
            .collect()
    }

    /// Gershgorin bound on the spectrum of `M⁻¹L`.
    pub fn spectral_radius_bound(&self) -> f64 {
        (0..self.n_vertices())
            .map(|v| 2.0 * self.adjacency[v].iter().map(|&(_, k)| self.edges[k].conductance).sum::<f64>() / self.mass[v])
            .fold(0.0, f64::max)
    }

    /// Breadth-first hop counts from `source`; `usize::MAX` marks unreachable vertices.
    pub fn hop_distances(&self, source: usize) -> Vec<usize> {
        self.multi_source_hops(&[source])
    }

    pub fn multi_source_hops(&self, sources: &[usize]) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n_vertices()];
        let mut queue = VecDeque::new();
        for &s in sources {
            if dist[s] != 0 {
                dist[s] = 0;
                queue.push_back(s);
            }
        }
        while let Some(v) = queue.pop_front() {
            for &(w, _) in &self.adjacency[v] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// Serializes to the plain-text format
    /// `vertices N dim n` / `mass i w` / `edge i j c [len]`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "vertices {} dim {}", self.n_vertices(), self.dim_hint).unwrap();
        for (i, w) in self.mass.iter().enumerate() {
            writeln!(s, "mass {i} {w:?}").unwrap();
        }
        for e in &self.edges {
            if e.length == 1.0 {
                writeln!(s, "edge {} {} {:?}", e.a, e.b, e.conductance).unwrap();
            } else {
                writeln!(s, "edge {} {} {:?} {:?}", e.a, e.b, e.conductance, e.length).unwrap();
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut header: Option<(usize, usize)> = None;
        let mut mass: Vec<Option<f64>> = Vec::new();
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse { line: lineno + 1, message };
            let tok: Vec<&str> = line.split_whitespace().collect();
            let num = |i: usize| -> Result<f64> {
                tok.get(i)
                    .ok_or_else(|| err(format!("missing field {i}")))?
                    .parse::<f64>()
                    .map_err(|e| err(e.to_string()))
            };
            let idx = |i: usize| -> Result<usize> {
                tok.get(i)
                    .ok_or_else(|| err(format!("missing field {i}")))?
                    .parse::<usize>()
                    .map_err(|e| err(e.to_string()))
            };
            match tok[0] {
                "vertices" => {
                    if header.is_some() {
                        return Err(err("duplicate header".into()));
                    }
                    if tok.len() != 4 || tok[2] != "dim" {
                        return Err(err("expected `vertices N dim n`".into()));
                    }
                    let n = idx(1)?;
                    header = Some((n, idx(3)?));
                    mass = vec![None; n];
                }
                "mass" => {
                    let (n, _) = header.ok_or_else(|| err("mass before header".into()))?;
                    let i = idx(1)?;
                    if i >= n {
                        return Err(err(format!("vertex {i} out of range")));
                    }
                    mass[i] = Some(num(2)?);
                }
                "edge" => {
                    header.ok_or_else(|| err("edge before header".into()))?;
                    let (a, b) = (idx(1)?, idx(2)?);
                    let length = if tok.len() > 4 { num(4)? } else { 1.0 };
                    edges.push(Edge { a: a.min(b), b: a.max(b), conductance: num(3)?, length });
                }
                other => return Err(err(format!("unknown record `{other}`"))),
            }
        }
        let (_, dim) = header.ok_or(Error::Parse { line: 0, message: "missing header".into() })?;
        let mass = mass
            .into_iter()
            .enumerate()
            .map(|(i, w)| w.ok_or(Error::Parse { line: 0, message: format!("no mass for vertex {i}") }))
            .collect::<Result<Vec<_>>>()?;
        Self::new(dim, mass, edges)
    }

    /// Hex SHA-256 of the text serialization.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Relabels the manifold by `perm`: vertex `x` of the result carries the
    /// mass of `perm[x]`, and `x ~ y` with the conductance of `perm[x] ~ perm[y]`.
    pub fn pullback(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_vertices();
        let inv = invert_permutation(perm, n)?;
        let mass = (0..n).map(|x| self.mass[perm[x]]).collect();
        let edges = self
            .edges
            .iter()
            .map(|e| {
                let (a, b) = (inv[e.a], inv[e.b]);
                Edge { a: a.min(b), b: a.max(b), ..e.clone() }
            })
            .collect();
        let mut m = Self::new(self.dim_hint, mass, edges)?;
        m.grid = self.grid.clone();
        Ok(m)
    }
}

pub(crate) fn invert_permutation(perm: &[usize], n: usize) -> Result<Vec<usize>> {
    if perm.len() != n {
        return Err(Error::InvalidParameter(format!("permutation has length {}, expected {n}", perm.len())));
    }
    let mut inv = vec![usize::MAX; n];
    for (x, &y) in perm.iter().enumerate() {
        if y >= n || inv[y] != usize::MAX {
            return Err(Error::InvalidParameter(format!("not a permutation (entry {y} at {x})")));
        }
        inv[y] = x;
    }
    Ok(inv)
}

fn encode(coords: &[usize], sides: &[usize]) -> usize {
    coords.iter().zip(sides).fold(0, |acc, (c, s)| acc * s + c)
}

fn decode(mut v: usize, sides: &[usize], out: &mut [usize]) {
    for axis in (0..sides.len()).rev() {
        out[axis] = v % sides[axis];
        v /= sides[axis];
    }
}

/// A vertex subset with nonempty complement, kept sorted and deduplicated.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationSet {
    indices: Vec<usize>,
    n_vertices: usize,
}

impl ObservationSet {
    pub fn new(mut indices: Vec<usize>, n_vertices: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if indices.is_empty() {
            return Err(Error::InvalidObservationSet("empty".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n_vertices) {
            return Err(Error::IndexOutOfRange { index: bad, n: n_vertices });
        }
        if indices.len() == n_vertices {
            return Err(Error::InvalidObservationSet("complement is empty".into()));
        }
        Ok(Self { indices, n_vertices })
    }

    /// All vertices within `radius` hops of `center`.
    pub fn ball(m: &DiscreteManifold, center: usize, radius: usize) -> Result<Self> {
        if center >= m.n_vertices() {
            return Err(Error::IndexOutOfRange { index: center, n: m.n_vertices() });
        }
        let hops = m.hop_distances(center);
        Self::new((0..m.n_vertices()).filter(|&v| hops[v] <= radius).collect(), m.n_vertices())
    }

    /// Parses whitespace-separated indices.
    pub fn parse(text: &str, n_vertices: usize) -> Result<Self> {
        let indices = text
            .split_whitespace()
            .enumerate()
            .map(|(i, t)| t.parse::<usize>().map_err(|e| Error::Parse { line: 1, message: format!("token {i}: {e}") }))
            .collect::<Result<Vec<_>>>()?;
        Self::new(indices, n_vertices)
    }

    pub fn to_text(&self) -> String {
        let parts: Vec<String> = self.indices.iter().map(|i| i.to_string()).collect();
        parts.join(" ")
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn contains(&self, v: usize) -> bool {
        self.indices.binary_search(&v).is_ok()
    }

    pub fn complement(&self) -> Vec<usize> {
        (0..self.n_vertices).filter(|&v| !self.contains(v)).collect()
    }

    pub fn mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.n_vertices];
        for &i in &self.indices {
            mask[i] = true;
        }
        mask
    }
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem {
    dist: f64,
    vertex: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (dist, vertex)
        other.dist.total_cmp(&self.dist).then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source shortest path lengths using edge lengths.
pub fn dijkstra(m: &DiscreteManifold, source: usize) -> Result<Vec<f64>> {
    let n = m.n_vertices();
    if source >= n {
        return Err(Error::IndexOutOfRange { index: source, n });
    }
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(HeapItem { dist: 0.0, vertex: source });
    while let Some(HeapItem { dist: d, vertex: v }) = heap.pop() {
        if done[v] {
            continue;
        }
        done[v] = true;
        for &(w, k) in m.neighbors(v) {
            let cand = d + m.edges()[k].length;
            if cand < dist[w] {
                dist[w] = cand;
                heap.push(HeapItem { dist: cand, vertex: w });
            }
        }
    }
    let unreachable: Vec<usize> = (0..n).filter(|&v| !dist[v].is_finite()).collect();
    if !unreachable.is_empty() {
        return Err(Error::Disconnected { source_vertex: source, unreachable });
    }
    Ok(dist)
}

/// All-pairs shortest path matrix, one Dijkstra run per source vertex.
pub fn distance_matrix(m: &DiscreteManifold) -> Result<DMatrix<f64>> {
    let n = m.n_vertices();
    let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(|s| dijkstra(m, s)).collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn diameter(m: &DiscreteManifold) -> Result<f64> {
    Ok(distance_matrix(m)?.max())
}

/// Tie tolerance used when none is given: `1e-9 × diameter`.
pub fn default_tie_tolerance(m: &DiscreteManifold) -> Result<f64> {
    Ok(1e-9 * diameter(m)?)
}

/// Vertices at (near-)maximal distance from `p`.
pub fn antipodal_set(m: &DiscreteManifold, p: usize, tie_tolerance: f64) -> Result<Vec<usize>> {
    if !(tie_tolerance >= 0.0) {
        return Err(Error::InvalidParameter(format!("tie tolerance {tie_tolerance} must be nonnegative")));
    }
    let d = dijkstra(m, p)?;
    let far = d.iter().cloned().fold(0.0, f64::max);
    Ok((0..m.n_vertices()).filter(|&q| d[q] >= far - tie_tolerance).collect())
}

/// `S` together with every vertex within `hops` graph hops of it.
pub fn enlarge(m: &DiscreteManifold, set: &[usize], hops: usize) -> Vec<usize> {
    if set.is_empty() {
        return Vec::new();
    }
    let d = m.multi_source_hops(set);
    (0..m.n_vertices()).filter(|&v| d[v] <= hops).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AntipodalCheck {
    pub p: usize,
    pub antipodes: Vec<usize>,
    pub ok: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionHReport {
    /// One entry per candidate `p ∈ O`.
    pub candidates: Vec<AntipodalCheck>,
    /// `max_φ ‖φ‖_M / ‖φ‖_O` over all computed eigenvectors; `+∞` when some
    /// eigenvector is invisible on `O`.
    pub observability_constant: f64,
    /// Column index of the eigenvector attaining the constant.
    pub worst_eigen_index: Option<usize>,
    pub note: String,
}

impl ConditionHReport {
    pub fn any_antipodal_ok(&self) -> bool {
        self.candidates.iter().any(|c| c.ok)
    }
}

/// Floor below which `‖φ‖_O / ‖φ‖_M` counts as zero.
pub const OBSERVABILITY_FLOOR: f64 = 1e-12;

/// Antipodal inclusion for every `p ∈ O` plus the discrete observability
/// constant over the full computed spectrum. Nontrapping is not checked
/// geometrically; the observability constant stands in for it.
pub fn check_condition_h(
    m: &DiscreteManifold,
    obs: &ObservationSet,
    spec: &SpectralDecomposition,
    tie_tolerance: f64,
) -> Result<ConditionHReport> {
    let candidates = obs
        .indices()
        .par_iter()
        .map(|&p| {
            let antipodes = antipodal_set(m, p, tie_tolerance)?;
            let ok = antipodes.iter().all(|&q| obs.contains(q));
            Ok(AntipodalCheck { p, antipodes, ok })
        })
        .collect::<Result<Vec<_>>>()?;
    let (observability_constant, worst_eigen_index) = observability_constant(obs.indices(), spec);
    Ok(ConditionHReport {
        candidates,
        observability_constant,
        worst_eigen_index,
        note: "nontrapping not checked geometrically; observability constant used as its relaxation".into(),
    })
}

/// Takes a plain vertex list so that the full vertex set can be scanned too.
pub fn observability_constant(obs: &[usize], spec: &SpectralDecomposition) -> (f64, Option<usize>) {
    let mass = spec.mass();
    let phi = spec.vectors();
    let mut worst = (1.0, None);
    for j in 0..phi.ncols() {
        let col = phi.column(j);
        let full: f64 = col.iter().zip(mass).map(|(v, w)| w * v * v).sum::<f64>().sqrt();
        let on_o: f64 = obs.iter().map(|&i| mass[i] * col[i] * col[i]).sum::<f64>().sqrt();
        let ratio = if on_o <= OBSERVABILITY_FLOOR * full { f64::INFINITY } else { full / on_o };
        if ratio > worst.0 || worst.1.is_none() {
            worst = (ratio.max(worst.0), Some(j));
            if ratio.is_infinite() {
                return worst;
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torus_counts_and_kernel() {
        let m = DiscreteManifold::flat_torus(&[4, 4], 1.0).unwrap();
        assert_eq!(m.n_vertices(), 16);
        assert_eq!(m.edges().len(), 32);
        let l = m.stiffness_matrix();
        let ones = nalgebra::DVector::from_element(16, 1.0);
        assert!((l * ones).amax() == 0.0);
    }

    #[test]
    fn degenerate_sides_rejected() {
        assert!(DiscreteManifold::flat_torus(&[2, 4], 1.0).is_err());
        assert!(DiscreteManifold::flat_torus(&[5], 1.0).is_err());
    }

    #[test]
    fn disconnected_rejected() {
        let edges = vec![Edge { a: 0, b: 1, conductance: 1.0, length: 1.0 }, Edge { a: 2, b: 3, conductance: 1.0, length: 1.0 }];
        match DiscreteManifold::new(2, vec![1.0; 4], edges) {
            Err(Error::Disconnected { unreachable, .. }) => assert_eq!(unreachable, vec![2, 3]),
            other => panic!("expected disconnection error, got {other:?}"),
        }
    }

    #[test]
    fn cycle_distance_half_circumference() {
        let c8 = DiscreteManifold::cycle(8, 1.0).unwrap();
        let d = distance_matrix(&c8).unwrap();
        assert_eq!(d[(0, 4)], 4.0);
        assert!((0..8).all(|i| d[(i, i)] == 0.0));
    }

    #[test]
    fn torus_distance_matches_bfs() {
        let t = DiscreteManifold::flat_torus(&[4, 4], 1.0).unwrap();
        let d = distance_matrix(&t).unwrap();
        let a = t.grid_vertex(&[0, 0]).unwrap();
        let b = t.grid_vertex(&[2, 2]).unwrap();
        assert_eq!(d[(a, b)], 4.0);
        for s in 0..16 {
            let hops = t.hop_distances(s);
            for v in 0..16 {
                assert_eq!(d[(s, v)], hops[v] as f64);
            }
        }
    }

    #[test]
    fn antipodes_on_cycle_and_torus() {
        let c8 = DiscreteManifold::cycle(8, 1.0).unwrap();
        assert_eq!(antipodal_set(&c8, 0, 0.0).unwrap(), vec![4]);
        let t = DiscreteManifold::flat_torus(&[4, 4], 1.0).unwrap();
        let q = t.grid_vertex(&[2, 2]).unwrap();
        assert_eq!(antipodal_set(&t, 0, 0.0).unwrap(), vec![q]);
        assert_eq!(antipodal_set(&t, 0, 4.0).unwrap().len(), 16);
    }

    #[test]
    fn enlarge_examples() {
        let c8 = DiscreteManifold::cycle(8, 1.0).unwrap();
        assert_eq!(enlarge(&c8, &[0], 0), vec![0]);
        assert_eq!(enlarge(&c8, &[0], 2), vec![0, 1, 2, 6, 7]);
        assert_eq!(enlarge(&c8, &[3], 4).len(), 8);
    }

    #[test]
    fn observation_set_validation() {
        assert!(ObservationSet::new(vec![], 4).is_err());
        assert!(ObservationSet::new(vec![0, 1, 2, 3], 4).is_err());
        assert!(ObservationSet::new(vec![7], 4).is_err());
        let o = ObservationSet::new(vec![3, 1, 1], 4).unwrap();
        assert_eq!(o.indices(), &[1, 3]);
        assert_eq!(o.complement(), vec![0, 2]);
        assert_eq!(ObservationSet::parse(&o.to_text(), 4).unwrap(), o);
    }

    #[test]
    fn text_round_trip() {
        let m = DiscreteManifold::random_graph(9, 5, 3).unwrap().perturbed(0.3, 1).unwrap();
        let back = DiscreteManifold::from_text(&m.to_text()).unwrap();
        assert_eq!(back.mass(), m.mass());
        assert_eq!(back.edges(), m.edges());
        assert_eq!(back.content_hash(), m.content_hash());
    }

    #[test]
    fn text_parse_errors_carry_line() {
        let err = DiscreteManifold::from_text("vertices 2 dim 1\nmass 0 1\nmass 1 x\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn neg_laplacian_is_local() {
        let c = DiscreteManifold::cycle(16, 1.0).unwrap();
        let mut f = vec![0.0; 16];
        f[0] = 1.0;
        let g = c.apply_neg_laplacian(&f);
        assert_eq!(g[0], 2.0);
        assert_eq!(g[1], -1.0);
        assert_eq!(g[15], -1.0);
        assert!(g[2..15].iter().all(|&x| x == 0.0));
    }
}
