//! Cube-structured latent space, the chemistry generative process and the
//! deterministic transition algebra.
//!
//! Encoding conventions (stable, embedded in trace headers):
//!
//! * Latent vertex ids read the coordinates as a binary number with axis 0 as
//!   the most significant bit and `-1 -> 0`, so `(+1,+1,+1)` is id 7.
//! * Hues are indexed `red=0, green=1, orange=2, yellow=3, pink=4,
//!   turquoise=5`; the opposite of hue `h` is `h ^ 1` and its pair is `h / 2`.
//! * Perceptual dimensions are `0 = color (blue -1 / purple +1)`,
//!   `1 = size (small -1 / large +1)`, `2 = shape (round -1 / pointy +1)`.
//! * Edge `axis * 4 + (b << 1 | c)` joins the two vertices that differ only on
//!   `axis`, where `b` and `c` are the bits of the two remaining axes in
//!   ascending order.

use std::fmt;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const N_HUES: usize = 6;
pub const N_VERTICES: usize = 8;
pub const N_EDGES: usize = 12;
/// Fewest edges that can connect the 8 vertices of the cube.
pub const MIN_CONNECTED_EDGES: usize = 7;
pub const MAX_MISSING_EDGES: usize = N_EDGES - MIN_CONNECTED_EDGES;

/// The six permutations of `[0, 1, 2]` in lexicographic order.
pub const PERMUTATIONS: [[u8; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChemistryError {
    #[error("generator config infeasible: {0}")]
    Infeasible(String),
    #[error("invalid chemistry record: {0}")]
    BadRecord(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PotionColor {
    Red = 0,
    Green = 1,
    Orange = 2,
    Yellow = 3,
    Pink = 4,
    Turquoise = 5,
}

impl PotionColor {
    pub const ALL: [PotionColor; N_HUES] = [
        PotionColor::Red,
        PotionColor::Green,
        PotionColor::Orange,
        PotionColor::Yellow,
        PotionColor::Pink,
        PotionColor::Turquoise,
    ];

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn opposite(self) -> Self {
        Self::ALL[self.index() ^ 1]
    }

    /// Pair index: 0 = red/green, 1 = orange/yellow, 2 = pink/turquoise.
    pub fn pair(self) -> usize {
        self.index() / 2
    }

    pub fn name(self) -> &'static str {
        match self {
            PotionColor::Red => "red",
            PotionColor::Green => "green",
            PotionColor::Orange => "orange",
            PotionColor::Yellow => "yellow",
            PotionColor::Pink => "pink",
            PotionColor::Turquoise => "turquoise",
        }
    }
}

impl fmt::Display for PotionColor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[inline]
fn bit(c: i8) -> u8 {
    (c > 0) as u8
}

#[inline]
fn sign(b: bool) -> i8 {
    if b {
        1
    } else {
        -1
    }
}

/// A corner of the latent cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LatentVertex(u8);

impl LatentVertex {
    pub fn from_id(id: u8) -> Self {
        assert!(id < 8, "latent vertex id out of range: {id}");
        LatentVertex(id)
    }

    pub fn from_coords(coords: [i8; 3]) -> Self {
        LatentVertex(bit(coords[0]) << 2 | bit(coords[1]) << 1 | bit(coords[2]))
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn coord(self, axis: usize) -> i8 {
        sign(self.0 >> (2 - axis) & 1 == 1)
    }

    pub fn coords(self) -> [i8; 3] {
        [self.coord(0), self.coord(1), self.coord(2)]
    }

    pub fn flip(self, axis: usize) -> Self {
        LatentVertex(self.0 ^ (1 << (2 - axis)))
    }

    pub fn all() -> impl Iterator<Item = LatentVertex> {
        (0..8).map(LatentVertex)
    }
}

impl Serialize for LatentVertex {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.coords().serialize(s)
    }
}

impl<'de> Deserialize<'de> for LatentVertex {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let c = <[i8; 3]>::deserialize(d)?;
        if c.iter().any(|&x| x != 1 && x != -1) {
            return Err(serde::de::Error::custom("latent coordinates must be -1 or +1"));
        }
        Ok(LatentVertex::from_coords(c))
    }
}

impl Serialize for PerceptState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for PerceptState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let c = <[i8; 3]>::deserialize(d)?;
        if c.iter().any(|&x| x != 1 && x != -1) {
            return Err(serde::de::Error::custom("perceptual features must be -1 or +1"));
        }
        Ok(PerceptState(c))
    }
}

/// Reward of a latent vertex: the coordinate sum, with the top corner (+3)
/// promoted to +15.
pub fn reward_of(v: LatentVertex) -> i32 {
    let s: i32 = v.coords().iter().map(|&c| c as i32).sum();
    if s == 3 {
        15
    } else {
        s
    }
}

/// A stone's visible features, each stored as -1/+1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PerceptState([i8; 3]);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoneColor {
    Blue,
    Purple,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoneSize {
    Small,
    Large,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoneShape {
    Round,
    Pointy,
}

impl PerceptState {
    pub fn new(features: [i8; 3]) -> Self {
        PerceptState(features.map(|c| sign(c > 0)))
    }

    pub fn from_features(color: StoneColor, size: StoneSize, shape: StoneShape) -> Self {
        PerceptState([
            sign(color == StoneColor::Purple),
            sign(size == StoneSize::Large),
            sign(shape == StoneShape::Pointy),
        ])
    }

    /// Same binarisation as [`LatentVertex::id`].
    pub fn from_id(id: u8) -> Self {
        assert!(id < 8, "percept id out of range: {id}");
        PerceptState([
            sign(id >> 2 & 1 == 1),
            sign(id >> 1 & 1 == 1),
            sign(id & 1 == 1),
        ])
    }

    pub fn id(self) -> u8 {
        bit(self.0[0]) << 2 | bit(self.0[1]) << 1 | bit(self.0[2])
    }

    pub fn features(self) -> [i8; 3] {
        self.0
    }

    pub fn feature(self, dim: usize) -> i8 {
        self.0[dim]
    }

    pub fn color(self) -> StoneColor {
        if self.0[0] > 0 {
            StoneColor::Purple
        } else {
            StoneColor::Blue
        }
    }

    pub fn size(self) -> StoneSize {
        if self.0[1] > 0 {
            StoneSize::Large
        } else {
            StoneSize::Small
        }
    }

    pub fn shape(self) -> StoneShape {
        if self.0[2] > 0 {
            StoneShape::Pointy
        } else {
            StoneShape::Round
        }
    }

    pub fn all() -> impl Iterator<Item = PerceptState> {
        (0..8).map(PerceptState::from_id)
    }
}

/// Which latent axis each potion pair moves, and in which direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PotionMap {
    /// Permutation index into [`PERMUTATIONS`]: pair `p` moves axis `perm[p]`.
    perm: u8,
    /// Bit `p` set means the even hue of pair `p` moves its axis towards +1.
    signs: u8,
}

impl PotionMap {
    pub const COUNT: usize = 48;

    pub fn new(perm: u8, signs: u8) -> Self {
        assert!(perm < 6 && signs < 8);
        PotionMap { perm, signs }
    }

    pub fn from_index(i: usize) -> Self {
        PotionMap::new((i / 8) as u8, (i % 8) as u8)
    }

    pub fn index(self) -> usize {
        self.perm as usize * 8 + self.signs as usize
    }

    pub fn perm_index(self) -> u8 {
        self.perm
    }

    pub fn sign_bits(self) -> u8 {
        self.signs
    }

    pub fn axis_of_pair(self, pair: usize) -> usize {
        PERMUTATIONS[self.perm as usize][pair] as usize
    }

    pub fn axis_of(self, h: PotionColor) -> usize {
        self.axis_of_pair(h.pair())
    }

    pub fn direction_of(self, h: PotionColor) -> i8 {
        let even = sign(self.signs >> h.pair() & 1 == 1);
        if h.index() % 2 == 0 {
            even
        } else {
            -even
        }
    }

    /// The hue that moves `axis` towards `direction`.
    pub fn hue_for(self, axis: usize, direction: i8) -> PotionColor {
        let pair = PERMUTATIONS[self.perm as usize]
            .iter()
            .position(|&a| a as usize == axis)
            .expect("permutation covers every axis");
        let even = PotionColor::ALL[pair * 2];
        if self.direction_of(even) == direction {
            even
        } else {
            even.opposite()
        }
    }
}

/// Presence mask over the 12 cube edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeSet(u16);

impl EdgeSet {
    pub const FULL: EdgeSet = EdgeSet(0x0fff);

    pub fn from_mask(mask: u16) -> Self {
        EdgeSet(mask & 0x0fff)
    }

    pub fn mask(self) -> u16 {
        self.0
    }

    pub fn present(self, edge: usize) -> bool {
        self.0 >> edge & 1 == 1
    }

    pub fn n_present(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn n_missing(self) -> usize {
        N_EDGES - self.n_present()
    }

    pub fn without(self, edge: usize) -> Self {
        EdgeSet(self.0 & !(1 << edge))
    }

    /// Index of the edge joining `v` and `v.flip(axis)`.
    pub fn edge_index(v: LatentVertex, axis: usize) -> usize {
        let c = v.coords();
        let others: Vec<u8> = (0..3).filter(|&a| a != axis).map(|a| bit(c[a])).collect();
        axis * 4 + (others[0] << 1 | others[1]) as usize
    }

    /// The two endpoints of edge `edge`, lower id first.
    pub fn endpoints(edge: usize) -> (LatentVertex, LatentVertex) {
        let axis = edge / 4;
        let b = (edge >> 1 & 1) as u8;
        let c = (edge & 1) as u8;
        let mut coords = [-1i8; 3];
        let others: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
        coords[others[0]] = sign(b == 1);
        coords[others[1]] = sign(c == 1);
        let lo = LatentVertex::from_coords(coords);
        (lo, lo.flip(axis))
    }

    pub fn has_edge(self, v: LatentVertex, axis: usize) -> bool {
        self.present(Self::edge_index(v, axis))
    }

    /// Flood fill from vertex 0 over present edges.
    pub fn is_connected(self) -> bool {
        let mut seen = 1u8;
        let mut stack = vec![LatentVertex(0)];
        while let Some(v) = stack.pop() {
            for axis in 0..3 {
                let w = v.flip(axis);
                if self.has_edge(v, axis) && seen >> w.id() & 1 == 0 {
                    seen |= 1 << w.id();
                    stack.push(w);
                }
            }
        }
        seen == 0xff
    }
}

/// Axis-aligned map from latent axes to perceptual dimensions:
/// `percept[j] = polarity[j] * latent[perm[j]]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PerceptMap {
    perm: u8,
    /// Bit `j` set means polarity +1 on perceptual dimension `j`.
    polarity: u8,
}

impl PerceptMap {
    pub const COUNT: usize = 48;
    pub const IDENTITY: PerceptMap = PerceptMap { perm: 0, polarity: 0b111 };

    pub fn new(perm: u8, polarity: u8) -> Self {
        assert!(perm < 6 && polarity < 8);
        PerceptMap { perm, polarity }
    }

    pub fn from_index(i: usize) -> Self {
        PerceptMap::new((i / 8) as u8, (i % 8) as u8)
    }

    pub fn index(self) -> usize {
        self.perm as usize * 8 + self.polarity as usize
    }

    pub fn perm_index(self) -> u8 {
        self.perm
    }

    pub fn polarity_bits(self) -> u8 {
        self.polarity
    }

    pub fn polarity(self, dim: usize) -> i8 {
        sign(self.polarity >> dim & 1 == 1)
    }

    /// Latent axis shown on perceptual dimension `dim`.
    pub fn axis_of_dim(self, dim: usize) -> usize {
        PERMUTATIONS[self.perm as usize][dim] as usize
    }

    pub fn dim_of_axis(self, axis: usize) -> usize {
        PERMUTATIONS[self.perm as usize]
            .iter()
            .position(|&a| a as usize == axis)
            .expect("permutation covers every axis")
    }

    pub fn to_percept(self, v: LatentVertex) -> PerceptState {
        let c = v.coords();
        PerceptState([0, 1, 2].map(|j| self.polarity(j) * c[self.axis_of_dim(j)]))
    }

    pub fn to_latent(self, p: PerceptState) -> LatentVertex {
        let mut c = [0i8; 3];
        for j in 0..3 {
            c[self.axis_of_dim(j)] = self.polarity(j) * p.feature(j);
        }
        LatentVertex::from_coords(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullCause {
    None,
    AtEndpoint,
    MissingEdge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransitionOutcome {
    pub new_vertex: LatentVertex,
    pub null_cause: NullCause,
}

impl TransitionOutcome {
    pub fn is_null(&self) -> bool {
        self.null_cause != NullCause::None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Chemistry {
    pub potion_map: PotionMap,
    pub edges: EdgeSet,
    pub percept_map: PerceptMap,
}

impl Chemistry {
    pub fn new(potion_map: PotionMap, edges: EdgeSet, percept_map: PerceptMap) -> Self {
        Chemistry { potion_map, edges, percept_map }
    }

    pub fn apply_potion_latent(&self, v: LatentVertex, h: PotionColor) -> TransitionOutcome {
        let axis = self.potion_map.axis_of(h);
        let dir = self.potion_map.direction_of(h);
        if v.coord(axis) == dir {
            TransitionOutcome { new_vertex: v, null_cause: NullCause::AtEndpoint }
        } else if !self.edges.has_edge(v, axis) {
            TransitionOutcome { new_vertex: v, null_cause: NullCause::MissingEdge }
        } else {
            TransitionOutcome { new_vertex: v.flip(axis), null_cause: NullCause::None }
        }
    }

    pub fn latent_to_percept(&self, v: LatentVertex) -> PerceptState {
        self.percept_map.to_percept(v)
    }

    pub fn percept_to_latent(&self, p: PerceptState) -> LatentVertex {
        self.percept_map.to_latent(p)
    }

    /// Reward of the stone showing percept `p`.
    pub fn reward_of_percept(&self, p: PerceptState) -> i32 {
        reward_of(self.percept_to_latent(p))
    }

    /// Percept-space outcome of applying `h` to a stone showing `p`.
    pub fn apply_potion_percept(&self, p: PerceptState, h: PotionColor) -> (PerceptState, NullCause) {
        let out = self.apply_potion_latent(self.percept_to_latent(p), h);
        (self.latent_to_percept(out.new_vertex), out.null_cause)
    }

    /// Perceptual dimension moved by `h` and the value it moves it towards.
    pub fn percept_effect(&self, h: PotionColor) -> (usize, i8) {
        let axis = self.potion_map.axis_of(h);
        let dim = self.percept_map.dim_of_axis(axis);
        (dim, self.potion_map.direction_of(h) * self.percept_map.polarity(dim))
    }

    /// Edge present in perceptual coordinates, using the same indexing
    /// scheme as latent edges.
    pub fn percept_edge_present(&self, percept_edge: usize) -> bool {
        let (lo, _) = EdgeSet::endpoints(percept_edge);
        let p = PerceptState::from_id(lo.id());
        let dim = percept_edge / 4;
        let v = self.percept_to_latent(p);
        self.edges.has_edge(v, self.percept_map.axis_of_dim(dim))
    }

    /// Observationally equivalent chemistry whose percept map has the
    /// identity permutation. Latent axes are relabelled so that axis `j`
    /// is shown on perceptual dimension `j`; rewards are invariant under the
    /// relabelling because they only depend on the coordinate sum.
    pub fn canonical(&self) -> Chemistry {
        let pm = self.percept_map;
        // new axis j corresponds to old axis pm.axis_of_dim(j)
        let relabel = |v: LatentVertex| -> LatentVertex {
            let c = v.coords();
            LatentVertex::from_coords([0, 1, 2].map(|j| c[pm.axis_of_dim(j)]))
        };
        let new_axis_of_pair: [u8; 3] =
            [0, 1, 2].map(|p| pm.dim_of_axis(self.potion_map.axis_of_pair(p)) as u8);
        let perm = PERMUTATIONS
            .iter()
            .position(|q| *q == new_axis_of_pair)
            .expect("valid permutation") as u8;
        let potion_map = PotionMap::new(perm, self.potion_map.signs);
        let mut mask = 0u16;
        for e in 0..N_EDGES {
            if self.edges.present(e) {
                let (a, b) = EdgeSet::endpoints(e);
                let (a, b) = (relabel(a), relabel(b));
                let axis = (0..3).find(|&ax| a.flip(ax) == b).expect("edge endpoints are adjacent");
                mask |= 1 << EdgeSet::edge_index(a, axis);
            }
        }
        Chemistry {
            potion_map,
            edges: EdgeSet(mask),
            percept_map: PerceptMap::new(0, pm.polarity),
        }
    }

    pub fn record(&self) -> ChemistryRecord {
        ChemistryRecord {
            potion_perm: self.potion_map.perm,
            potion_signs: self.potion_map.signs,
            percept_perm: self.percept_map.perm,
            percept_polarity: self.percept_map.polarity,
            edge_mask: self.edges.0,
        }
    }

    pub fn from_record(r: &ChemistryRecord) -> Result<Self, ChemistryError> {
        if r.potion_perm > 5 || r.percept_perm > 5 {
            return Err(ChemistryError::BadRecord("permutation index must be 0..5".into()));
        }
        if r.potion_signs > 7 || r.percept_polarity > 7 {
            return Err(ChemistryError::BadRecord("sign bits must be 0..7".into()));
        }
        if r.edge_mask > 0x0fff {
            return Err(ChemistryError::BadRecord("edge mask exceeds 12 bits".into()));
        }
        Ok(Chemistry {
            potion_map: PotionMap::new(r.potion_perm, r.potion_signs),
            edges: EdgeSet(r.edge_mask),
            percept_map: PerceptMap::new(r.percept_perm, r.percept_polarity),
        })
    }

    /// Compact hypothesis id: `edge_mask << 12 | potion_index << 6 | percept_index`.
    pub fn hypothesis_id(&self) -> u32 {
        (self.edges.0 as u32) << 12 | (self.potion_map.index() as u32) << 6 | self.percept_map.index() as u32
    }

    pub fn from_hypothesis_id(id: u32) -> Self {
        Chemistry {
            potion_map: PotionMap::from_index((id >> 6 & 0x3f) as usize),
            edges: EdgeSet((id >> 12) as u16 & 0x0fff),
            percept_map: PerceptMap::from_index((id & 0x3f) as usize),
        }
    }
}

/// Canonical compact record of a chemistry, as stored in trace headers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChemistryRecord {
    pub potion_perm: u8,
    pub potion_signs: u8,
    pub percept_perm: u8,
    pub percept_polarity: u8,
    pub edge_mask: u16,
}

impl ChemistryRecord {
    pub fn missing_edges(&self) -> usize {
        N_EDGES - (self.edge_mask & 0x0fff).count_ones() as usize
    }
}

/// Distribution over chemistries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Unnormalised weight of each missing-edge count `m` (index = m).
    pub missing_edge_weights: Vec<f64>,
    /// Maximum edge-mask draws per chemistry before giving up.
    pub rejection_cap: u32,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { missing_edge_weights: vec![1.0; MAX_MISSING_EDGES + 1], rejection_cap: 10_000 }
    }
}

impl GenConfig {
    pub fn fixed_missing(m: usize) -> Self {
        let mut w = vec![0.0; m + 1];
        w[m] = 1.0;
        GenConfig { missing_edge_weights: w, ..GenConfig::default() }
    }

    /// Normalised probability for each `m`.
    pub fn missing_edge_probs(&self) -> Result<Vec<f64>, ChemistryError> {
        if self.missing_edge_weights.len() > N_EDGES + 1 {
            return Err(ChemistryError::Infeasible("more than 12 missing edges requested".into()));
        }
        if self.missing_edge_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ChemistryError::Infeasible("missing-edge weights must be finite and >= 0".into()));
        }
        let total: f64 = self.missing_edge_weights.iter().sum();
        if total <= 0.0 {
            return Err(ChemistryError::Infeasible("missing-edge weights sum to zero".into()));
        }
        Ok(self.missing_edge_weights.iter().map(|w| w / total).collect())
    }

    fn check_support(&self) -> Result<(), ChemistryError> {
        for (m, &w) in self.missing_edge_weights.iter().enumerate() {
            if w > 0.0 && connected_edge_sets(m).is_empty() {
                return Err(ChemistryError::Infeasible(format!(
                    "no connected edge set has {m} missing edges (at most {MAX_MISSING_EDGES} can be removed)"
                )));
            }
        }
        Ok(())
    }
}

struct EdgeTables {
    by_missing: Vec<Vec<EdgeSet>>,
}

fn edge_tables() -> &'static EdgeTables {
    static TABLES: OnceLock<EdgeTables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let mut by_missing = vec![Vec::new(); N_EDGES + 1];
        for mask in 0..(1u16 << N_EDGES) {
            let e = EdgeSet(mask);
            if e.is_connected() {
                by_missing[e.n_missing()].push(e);
            }
        }
        EdgeTables { by_missing }
    })
}

/// All connected edge sets with exactly `m` missing edges, by ascending mask.
pub fn connected_edge_sets(m: usize) -> &'static [EdgeSet] {
    edge_tables().by_missing.get(m).map(Vec::as_slice).unwrap_or(&[])
}

/// Draws a chemistry. The missing-edge count is drawn from `cfg`, then edge
/// masks with that many edges removed are drawn uniformly until one is
/// connected.
pub fn sample_chemistry(seed: u64, cfg: &GenConfig) -> Result<Chemistry, ChemistryError> {
    let probs = cfg.missing_edge_probs()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let potion_map = PotionMap::from_index(rng.gen_range(0..PotionMap::COUNT));
    let percept_map = PerceptMap::from_index(rng.gen_range(0..PerceptMap::COUNT));
    let u: f64 = rng.gen();
    let mut m = probs.len() - 1;
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc && *p > 0.0 {
            m = i;
            break;
        }
    }
    while probs[m] == 0.0 {
        m -= 1;
    }
    for _ in 0..cfg.rejection_cap {
        let mut mask = EdgeSet::FULL;
        let mut order: [usize; N_EDGES] = std::array::from_fn(|i| i);
        // partial Fisher-Yates: first m entries are the removed edges
        for i in 0..m {
            let j = rng.gen_range(i..N_EDGES);
            order.swap(i, j);
            mask = mask.without(order[i]);
        }
        if mask.is_connected() {
            return Ok(Chemistry { potion_map, edges: mask, percept_map });
        }
    }
    Err(ChemistryError::Infeasible(format!(
        "no connected edge set with {m} missing edges after {} draws",
        cfg.rejection_cap
    )))
}

/// Every chemistry with nonzero prior probability, with its prior weight.
pub fn enumerate_chemistries(
    cfg: &GenConfig,
) -> Result<impl Iterator<Item = (Chemistry, f64)>, ChemistryError> {
    let probs = cfg.missing_edge_probs()?;
    cfg.check_support()?;
    let per_map = (PotionMap::COUNT * PerceptMap::COUNT) as f64;
    Ok(probs.into_iter().enumerate().filter(|(_, p)| *p > 0.0).flat_map(move |(m, p)| {
        let sets = connected_edge_sets(m);
        let w = p / (sets.len() as f64 * per_map);
        sets.iter().flat_map(move |&edges| {
            (0..PotionMap::COUNT).flat_map(move |pi| {
                (0..PerceptMap::COUNT).map(move |ci| {
                    (
                        Chemistry::new(PotionMap::from_index(pi), edges, PerceptMap::from_index(ci)),
                        w,
                    )
                })
            })
        })
    }))
}

/// Prior weight of a single chemistry under `probs` (normalised missing-edge
/// probabilities).
pub fn prior_weight(chem: &Chemistry, probs: &[f64]) -> f64 {
    let m = chem.edges.n_missing();
    let p = probs.get(m).copied().unwrap_or(0.0);
    if p == 0.0 || !chem.edges.is_connected() {
        return 0.0;
    }
    p / (connected_edge_sets(m).len() as f64 * (PotionMap::COUNT * PerceptMap::COUNT) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_chem_sample(seed: u64) -> Chemistry {
        sample_chemistry(seed, &GenConfig::default()).unwrap()
    }

    #[test]
    fn opposite_is_involution_with_fixed_pairs() {
        for h in PotionColor::ALL {
            assert_eq!(h.opposite().opposite(), h);
        }
        assert_eq!(PotionColor::Red.opposite(), PotionColor::Green);
        assert_eq!(PotionColor::Yellow.opposite(), PotionColor::Orange);
        assert_eq!(PotionColor::Pink.opposite(), PotionColor::Turquoise);
    }

    #[test]
    fn vertex_ids_biject_with_coords() {
        let mut seen = std::collections::HashSet::new();
        for v in LatentVertex::all() {
            assert_eq!(LatentVertex::from_coords(v.coords()), v);
            seen.insert(v.coords());
        }
        assert_eq!(seen.len(), 8);
        assert_eq!(LatentVertex::from_coords([1, 1, 1]).id(), 7);
        assert_eq!(LatentVertex::from_coords([-1, -1, -1]).id(), 0);
    }

    #[test]
    fn reward_examples() {
        assert_eq!(reward_of(LatentVertex::from_coords([1, 1, 1])), 15);
        assert_eq!(reward_of(LatentVertex::from_coords([-1, -1, -1])), -3);
        assert_eq!(reward_of(LatentVertex::from_coords([1, 1, -1])), 1);
        let mut r: Vec<i32> = LatentVertex::all().map(reward_of).collect();
        r.sort();
        assert_eq!(r, vec![-3, -1, -1, -1, 1, 1, 1, 15]);
    }

    #[test]
    fn edges_have_unique_indices() {
        let mut seen = [0u8; N_EDGES];
        for v in LatentVertex::all() {
            for axis in 0..3 {
                let e = EdgeSet::edge_index(v, axis);
                assert_eq!(e, EdgeSet::edge_index(v.flip(axis), axis));
                seen[e] += 1;
                let (a, b) = EdgeSet::endpoints(e);
                assert!(a == v || b == v);
            }
        }
        assert!(seen.iter().all(|&c| c == 2));
    }

    #[test]
    fn endpoint_and_inverse_pair() {
        let chem = Chemistry::new(PotionMap::new(0, 0b111), EdgeSet::FULL, PerceptMap::IDENTITY);
        let top = LatentVertex::from_coords([1, 1, 1]);
        // red moves axis 0 towards +1
        let out = chem.apply_potion_latent(top, PotionColor::Red);
        assert_eq!(out.null_cause, NullCause::AtEndpoint);
        let v = LatentVertex::from_coords([-1, 1, -1]);
        let a = chem.apply_potion_latent(v, PotionColor::Red);
        assert_eq!(a.null_cause, NullCause::None);
        let b = chem.apply_potion_latent(a.new_vertex, PotionColor::Green);
        assert_eq!(b.new_vertex, v);
    }

    #[test]
    fn missing_edge_null() {
        let low = LatentVertex::from_coords([-1, -1, -1]);
        let e = EdgeSet::edge_index(low, 0);
        assert_eq!(e, 0);
        let chem = Chemistry::new(PotionMap::new(0, 0b111), EdgeSet::FULL.without(e), PerceptMap::IDENTITY);
        assert_eq!(chem.potion_map.axis_of(PotionColor::Red), 0);
        assert_eq!(chem.potion_map.direction_of(PotionColor::Red), 1);
        let out = chem.apply_potion_latent(low, PotionColor::Red);
        assert_eq!(out.null_cause, NullCause::MissingEdge);
        assert_eq!(out.new_vertex, low);
    }

    #[test]
    fn percept_encoding_table() {
        let top = LatentVertex::from_coords([1, 1, 1]);
        let p = PerceptMap::IDENTITY.to_percept(top);
        assert_eq!(p.color(), StoneColor::Purple);
        assert_eq!(p.size(), StoneSize::Large);
        assert_eq!(p.shape(), StoneShape::Pointy);
        let flipped = PerceptMap::new(0, 0b110);
        let q = flipped.to_percept(top);
        assert_eq!(
            q,
            PerceptState::from_features(StoneColor::Blue, StoneSize::Large, StoneShape::Pointy)
        );
        for i in 0..PerceptMap::COUNT {
            let m = PerceptMap::from_index(i);
            for v in LatentVertex::all() {
                assert_eq!(m.to_latent(m.to_percept(v)), v);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        assert_eq!(all_chem_sample(7), all_chem_sample(7));
    }

    #[test]
    fn zero_missing_gives_full_edges() {
        for seed in 0..50 {
            let c = sample_chemistry(seed, &GenConfig::fixed_missing(0)).unwrap();
            assert_eq!(c.edges, EdgeSet::FULL);
        }
    }

    #[test]
    fn infeasible_missing_count_is_an_error() {
        let err = sample_chemistry(1, &GenConfig::fixed_missing(6)).unwrap_err();
        assert!(matches!(err, ChemistryError::Infeasible(_)));
        assert!(enumerate_chemistries(&GenConfig::fixed_missing(6)).is_err());
    }

    #[test]
    fn max_missing_samples_are_connected() {
        let cfg = GenConfig::fixed_missing(MAX_MISSING_EDGES);
        for seed in 0..1000 {
            let c = sample_chemistry(seed, &cfg).unwrap();
            assert_eq!(c.edges.n_missing(), MAX_MISSING_EDGES);
            assert!(flood_fill_connected(c.edges));
        }
    }

    // independent connectivity check via union-find over explicit endpoints
    fn flood_fill_connected(e: EdgeSet) -> bool {
        let mut parent: Vec<usize> = (0..8).collect();
        fn find(p: &mut Vec<usize>, x: usize) -> usize {
            let mut x = x;
            while p[x] != x {
                x = p[x];
            }
            x
        }
        for i in 0..N_EDGES {
            if e.present(i) {
                let (a, b) = EdgeSet::endpoints(i);
                let (ra, rb) = (find(&mut parent, a.id() as usize), find(&mut parent, b.id() as usize));
                parent[ra] = rb;
            }
        }
        let r = find(&mut parent, 0);
        (0..8).all(|v| find(&mut parent, v) == r)
    }

    #[test]
    fn connected_counts_per_missing() {
        let counts: Vec<usize> = (0..=6).map(|m| connected_edge_sets(m).len()).collect();
        // independently enumerated with a union-find over all 4096 masks
        assert_eq!(counts, vec![1, 12, 66, 212, 408, 384, 0]);
    }

    #[test]
    fn enumeration_counts_and_weights() {
        let all: Vec<_> = enumerate_chemistries(&GenConfig::fixed_missing(0)).unwrap().collect();
        assert_eq!(all.len(), 6 * 8 * 6 * 8);
        let total: f64 = all.iter().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let total: f64 = enumerate_chemistries(&GenConfig::default()).unwrap().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn record_and_id_round_trip() {
        for seed in 0..200 {
            let c = all_chem_sample(seed);
            assert_eq!(Chemistry::from_record(&c.record()).unwrap(), c);
            assert_eq!(Chemistry::from_hypothesis_id(c.hypothesis_id()), c);
        }
        let bad = ChemistryRecord { potion_perm: 6, potion_signs: 0, percept_perm: 0, percept_polarity: 0, edge_mask: 0 };
        assert!(Chemistry::from_record(&bad).is_err());
    }

    #[test]
    fn canonical_relabel_is_observationally_equivalent() {
        for seed in 0..300 {
            let c = all_chem_sample(seed);
            let k = c.canonical();
            assert_eq!(k.percept_map.perm_index(), 0);
            assert_eq!(k.edges.n_missing(), c.edges.n_missing());
            assert!(k.edges.is_connected());
            for p in PerceptState::all() {
                assert_eq!(c.reward_of_percept(p), k.reward_of_percept(p));
                for h in PotionColor::ALL {
                    assert_eq!(c.apply_potion_percept(p, h), k.apply_potion_percept(p, h));
                }
            }
            for h in PotionColor::ALL {
                assert_eq!(c.percept_effect(h), k.percept_effect(h));
            }
        }
    }

    #[test]
    fn hue_for_inverts_axis_direction() {
        for i in 0..PotionMap::COUNT {
            let pm = PotionMap::from_index(i);
            for h in PotionColor::ALL {
                assert_eq!(pm.hue_for(pm.axis_of(h), pm.direction_of(h)), h);
                assert_eq!(pm.direction_of(h), -pm.direction_of(h.opposite()));
            }
        }
    }
}
