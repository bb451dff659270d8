//! Discretized area of interest, 3D building map and UAV motion.
//!
//! Cells are addressed by integer `(x, y)` grid coordinates; the flat index of
//! a cell is `x * ny + y`, matching the row-major `(l/d) x (w/d)` heights
//! matrix. Cell centres sit at `(i + 0.5) * d`, and altitude planes are
//! snapped to voxel centres in the same way.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

const INTEGRALITY_TOL: f64 = 1e-9;

/// A point in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(p: [f64; 3]) -> Self {
        Point3::new(p[0], p[1], p[2])
    }
}

impl From<Point3> for [f64; 3] {
    fn from(p: Point3) -> Self {
        [p.x, p.y, p.z]
    }
}

/// Horizontal grid cell. Coordinates are signed so that transitions may leave
/// the grid; [`GridSpec::contains`] decides membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[i32; 2]", into = "[i32; 2]")]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Cell { x, y }
    }

    pub fn l1(&self, other: &Cell) -> i32 {
        (self.x - other.x).abs() + (self.y - other.y).abs()
    }

    pub fn step(self, m: Move) -> Cell {
        let (dx, dy) = m.delta();
        Cell::new(self.x + dx, self.y + dy)
    }
}

impl From<[i32; 2]> for Cell {
    fn from(c: [i32; 2]) -> Self {
        Cell::new(c[0], c[1])
    }
}

impl From<Cell> for [i32; 2] {
    fn from(c: Cell) -> Self {
        [c.x, c.y]
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub length_m: f64,
    pub width_m: f64,
    pub height_m: f64,
    pub spacing_m: f64,
    pub pred_altitude_m: f64,
    pub uav_altitude_m: f64,
}

fn whole_cells(extent: f64, spacing: f64, what: &str) -> Result<usize> {
    let ratio = extent / spacing;
    let n = ratio.round();
    if !(n >= 1.0) || (ratio - n).abs() > INTEGRALITY_TOL * ratio.max(1.0) {
        return Err(Error::InvalidGrid(format!(
            "{what} {extent} m is not a positive multiple of spacing {spacing} m"
        )));
    }
    Ok(n as usize)
}

impl GridSpec {
    pub fn new(
        length_m: f64,
        width_m: f64,
        height_m: f64,
        spacing_m: f64,
        pred_altitude_m: f64,
        uav_altitude_m: f64,
    ) -> Result<Self> {
        let spec = GridSpec { length_m, width_m, height_m, spacing_m, pred_altitude_m, uav_altitude_m };
        spec.validate()?;
        Ok(spec)
    }

    /// Square grid of `n x n` cells.
    pub fn square(n: usize, spacing_m: f64, height_m: f64, altitude_m: f64) -> Result<Self> {
        let side = n as f64 * spacing_m;
        GridSpec::new(side, side, height_m, spacing_m, altitude_m, altitude_m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spacing_m > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing {} must be positive", self.spacing_m)));
        }
        whole_cells(self.length_m, self.spacing_m, "length")?;
        whole_cells(self.width_m, self.spacing_m, "width")?;
        whole_cells(self.height_m, self.spacing_m, "height")?;
        for (name, alt) in [("prediction", self.pred_altitude_m), ("UAV", self.uav_altitude_m)] {
            if !(alt > 0.0 && alt <= self.height_m) {
                return Err(Error::InvalidGrid(format!(
                    "{name} altitude {alt} m outside (0, {}]",
                    self.height_m
                )));
            }
        }
        Ok(())
    }

    pub fn nx(&self) -> usize {
        (self.length_m / self.spacing_m).round() as usize
    }

    pub fn ny(&self) -> usize {
        (self.width_m / self.spacing_m).round() as usize
    }

    pub fn nz(&self) -> usize {
        (self.height_m / self.spacing_m).round() as usize
    }

    pub fn n_cells(&self) -> usize {
        self.nx() * self.ny()
    }

    pub fn contains(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && (c.x as usize) < self.nx() && (c.y as usize) < self.ny()
    }

    pub fn index(&self, c: Cell) -> Option<usize> {
        self.contains(c).then(|| c.x as usize * self.ny() + c.y as usize)
    }

    pub fn cell(&self, index: usize) -> Cell {
        let ny = self.ny();
        Cell::new((index / ny) as i32, (index % ny) as i32)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.n_cells()).map(|i| self.cell(i))
    }

    /// Snap an altitude to the nearest voxel-centre plane.
    pub fn plane_z(&self, altitude_m: f64) -> f64 {
        let d = self.spacing_m;
        let k = (altitude_m / d - 0.5).round().clamp(0.0, (self.nz().max(1) - 1) as f64);
        (k + 0.5) * d
    }

    pub fn pred_z(&self) -> f64 {
        self.plane_z(self.pred_altitude_m)
    }

    pub fn uav_z(&self) -> f64 {
        self.plane_z(self.uav_altitude_m)
    }

    /// True when the prediction and flight planes are the same set of points.
    pub fn planes_coincide(&self) -> bool {
        self.pred_z() == self.uav_z()
    }

    pub fn point(&self, c: Cell, z: f64) -> Point3 {
        let d = self.spacing_m;
        Point3::new((c.x as f64 + 0.5) * d, (c.y as f64 + 0.5) * d, z)
    }

    pub fn pred_point(&self, c: Cell) -> Point3 {
        self.point(c, self.pred_z())
    }

    pub fn uav_point(&self, c: Cell) -> Point3 {
        self.point(c, self.uav_z())
    }
}

/// Building-height map over the grid plus optional no-fly cells.
#[derive(Debug, Clone, PartialEq)]
pub struct UrbanWorld {
    pub grid: GridSpec,
    /// Heights in meters, flat `x * ny + y`.
    pub heights: Vec<f64>,
    pub nofly: BTreeSet<Cell>,
    pub seed: Option<u64>,
    pub params: Option<GenParams>,
    /// Position of this world's cell (0, 0) in the world it was cropped from.
    pub offset: Cell,
}

impl UrbanWorld {
    pub fn new(grid: GridSpec, heights: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if heights.len() != grid.n_cells() {
            return Err(Error::InvalidGrid(format!(
                "heights has {} entries, grid has {} cells",
                heights.len(),
                grid.n_cells()
            )));
        }
        if let Some(h) = heights.iter().find(|h| !(**h >= 0.0 && **h <= grid.height_m)) {
            return Err(Error::InvalidGrid(format!("height {h} outside [0, {}]", grid.height_m)));
        }
        Ok(UrbanWorld {
            grid,
            heights,
            nofly: BTreeSet::new(),
            seed: None,
            params: None,
            offset: Cell::new(0, 0),
        })
    }

    /// World without buildings.
    pub fn open(grid: GridSpec) -> Result<Self> {
        let n = grid.n_cells();
        UrbanWorld::new(grid, vec![0.0; n])
    }

    pub fn with_nofly(mut self, cells: impl IntoIterator<Item = Cell>) -> Self {
        self.nofly.extend(cells);
        self
    }

    pub fn height(&self, c: Cell) -> Option<f64> {
        self.grid.index(c).map(|i| self.heights[i])
    }

    /// Building occupies `c` at altitude `z` (blocked iff height >= z).
    pub fn blocked_at(&self, c: Cell, z: f64) -> bool {
        self.height(c).is_some_and(|h| h > 0.0 && h >= z)
    }

    /// Cell is outdoor on the prediction plane (`z_j = 1`).
    pub fn is_outdoor(&self, c: Cell) -> bool {
        self.grid.contains(c) && !self.blocked_at(c, self.grid.pred_z())
    }

    /// UAV may occupy `c`.
    pub fn is_free(&self, c: Cell) -> bool {
        self.grid.contains(c) && !self.blocked_at(c, self.grid.uav_z()) && !self.nofly.contains(&c)
    }

    /// Outdoor indicator over the prediction plane, flat-indexed.
    pub fn outdoor_mask(&self) -> Vec<bool> {
        self.grid.cells().map(|c| self.is_outdoor(c)).collect()
    }

    pub fn outdoor_cells(&self) -> Vec<Cell> {
        self.grid.cells().filter(|c| self.is_outdoor(*c)).collect()
    }

    pub fn free_cells(&self) -> Vec<Cell> {
        self.grid.cells().filter(|c| self.is_free(*c)).collect()
    }

    pub fn indoor_fraction(&self) -> f64 {
        let n = self.grid.n_cells();
        let indoor = self.grid.cells().filter(|c| !self.is_outdoor(*c)).count();
        indoor as f64 / n as f64
    }

    pub fn side_cells(&self) -> (usize, usize) {
        (self.grid.nx(), self.grid.ny())
    }
}

/// One of the four unit displacements in the flight plane. `Hold` is not
/// part of the planners' action set; it only records a UAV that had no legal
/// move at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Move {
    PosX,
    NegX,
    PosY,
    NegY,
    Hold,
}

impl Move {
    pub const ALL: [Move; 4] = [Move::PosX, Move::NegX, Move::PosY, Move::NegY];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Move {
        Move::ALL[i]
    }

    pub fn delta(self) -> (i32, i32) {
        match self {
            Move::PosX => (1, 0),
            Move::NegX => (-1, 0),
            Move::PosY => (0, 1),
            Move::NegY => (0, -1),
            Move::Hold => (0, 0),
        }
    }

    pub fn inverse(self) -> Move {
        match self {
            Move::PosX => Move::NegX,
            Move::NegX => Move::PosX,
            Move::PosY => Move::NegY,
            Move::NegY => Move::PosY,
            Move::Hold => Move::Hold,
        }
    }
}

/// One displacement per UAV.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointAction(pub Vec<Move>);

impl JointAction {
    /// Number of joint actions for `n` UAVs.
    pub fn cardinality(n: usize) -> usize {
        Move::COUNT.pow(n as u32)
    }

    /// Decode a joint-action index; UAV 0 is the most significant digit so
    /// index order is lexicographic order over per-UAV moves.
    pub fn from_index(index: usize, n: usize) -> JointAction {
        let mut moves = vec![Move::PosX; n];
        let mut rest = index;
        for slot in moves.iter_mut().rev() {
            *slot = Move::from_index(rest % Move::COUNT);
            rest /= Move::COUNT;
        }
        JointAction(moves)
    }

    pub fn index(&self) -> usize {
        self.0.iter().fold(0, |acc, m| acc * Move::COUNT + m.index())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SwarmState {
    pub positions: Vec<Cell>,
    pub step: usize,
}

impl SwarmState {
    pub fn new(positions: Vec<Cell>) -> Self {
        SwarmState { positions, step: 0 }
    }

    pub fn n_uavs(&self) -> usize {
        self.positions.len()
    }

    pub fn is_legal(&self, world: &UrbanWorld) -> bool {
        self.positions.iter().all(|c| world.is_free(*c))
    }
}

/// Displace every UAV by one cell along its chosen axis. Legality is not
/// checked; see [`is_legal`].
pub fn transition(state: &SwarmState, action: &JointAction) -> SwarmState {
    assert_eq!(state.positions.len(), action.len(), "one move per UAV");
    SwarmState {
        positions: state.positions.iter().zip(&action.0).map(|(c, m)| c.step(*m)).collect(),
        step: state.step + 1,
    }
}

/// Every UAV's next cell is inside the area, below building height at the
/// flight altitude and outside no-fly cells.
pub fn is_legal(world: &UrbanWorld, state: &SwarmState, action: &JointAction) -> bool {
    state.positions.len() == action.len()
        && state.positions.iter().zip(&action.0).all(|(c, m)| world.is_free(c.step(*m)))
}

/// Legal moves for a single UAV at `c`.
pub fn legal_moves(world: &UrbanWorld, c: Cell) -> impl Iterator<Item = Move> + '_ {
    Move::ALL.into_iter().filter(move |m| world.is_free(c.step(*m)))
}

/// Procedural Manhattan-grid city parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    pub side_m: f64,
    pub spacing_m: f64,
    pub height_m: f64,
    pub blocks_per_dim: usize,
    pub street_m: f64,
    pub min_building_m: f64,
    pub max_building_m: f64,
    pub max_buildings_per_block: usize,
    pub min_height_m: f64,
    pub max_height_m: f64,
    pub open_space_prob: f64,
    pub pred_altitude_m: f64,
    pub uav_altitude_m: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            side_m: 486.0,
            spacing_m: 4.0,
            height_m: 60.0,
            blocks_per_dim: 5,
            street_m: 8.0,
            min_building_m: 12.0,
            max_building_m: 48.0,
            max_buildings_per_block: 4,
            min_height_m: 6.0,
            max_height_m: 45.0,
            open_space_prob: 0.2,
            pred_altitude_m: 10.0,
            uav_altitude_m: 10.0,
        }
    }
}

impl GenParams {
    /// Grid cells per side; a side that is not a whole number of cells is
    /// truncated (486 m at 4 m spacing gives 121 cells).
    pub fn cells_per_side(&self) -> usize {
        (self.side_m / self.spacing_m + INTEGRALITY_TOL).floor() as usize
    }

    fn cells(&self, meters: f64) -> usize {
        (meters / self.spacing_m).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.spacing_m > 0.0) || self.cells_per_side() == 0 {
            return bad(format!("side {} m / spacing {} m gives no cells", self.side_m, self.spacing_m));
        }
        if self.blocks_per_dim == 0 {
            return bad("blocks_per_dim must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.open_space_prob) {
            return bad(format!("open_space_prob {} outside [0, 1]", self.open_space_prob));
        }
        if !(self.min_building_m > 0.0 && self.min_building_m <= self.max_building_m) {
            return bad(format!(
                "building size range [{}, {}] is empty",
                self.min_building_m, self.max_building_m
            ));
        }
        if !(self.min_height_m >= 0.0
            && self.min_height_m <= self.max_height_m
            && self.max_height_m <= self.height_m)
        {
            return bad(format!(
                "building height range [{}, {}] must lie within [0, {}]",
                self.min_height_m, self.max_height_m, self.height_m
            ));
        }
        let block_m = self.side_m / self.blocks_per_dim as f64 - self.street_m;
        if self.min_building_m > block_m {
            return bad(format!(
                "minimum building size {} m exceeds block size {block_m:.1} m",
                self.min_building_m
            ));
        }
        if self.cells(self.min_building_m) == 0 {
            return bad("minimum building size is below one cell".into());
        }
        Ok(())
    }

    fn grid(&self) -> Result<GridSpec> {
        let n = self.cells_per_side();
        let side = n as f64 * self.spacing_m;
        GridSpec::new(side, side, self.height_m, self.spacing_m, self.pred_altitude_m, self.uav_altitude_m)
    }
}

/// Axis-aligned building footprint in cells, `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
    pub height_m: f64,
}

/// Block partition and buildings before rasterization.
#[derive(Debug, Clone, PartialEq)]
pub struct CityLayout {
    pub x_cuts: Vec<usize>,
    pub y_cuts: Vec<usize>,
    pub buildings: Vec<Building>,
    pub open_blocks: usize,
}

impl CityLayout {
    pub fn n_blocks(&self) -> usize {
        (self.x_cuts.len() + 1) * (self.y_cuts.len() + 1)
    }
}

/// Interior cut lines splitting `n` cells into `blocks` blocks whose inner
/// extent (after streets) fits the minimum building.
fn sample_cuts(rng: &mut StreamRng, n: usize, blocks: usize, street: usize, min_inner: usize) -> Vec<usize> {
    let k = blocks - 1;
    let fits = |cuts: &[usize]| {
        let mut bounds = Vec::with_capacity(k + 2);
        bounds.push(0);
        bounds.extend_from_slice(cuts);
        bounds.push(n);
        bounds.windows(2).all(|w| w[1] - w[0] >= min_inner + street)
    };
    if k == 0 {
        return Vec::new();
    }
    if n > k + 1 {
        for _ in 0..512 {
            let mut cuts: Vec<usize> = sample(rng, n - 1, k).into_iter().map(|i| i + 1).collect();
            cuts.sort_unstable();
            if fits(&cuts) {
                return cuts;
            }
        }
    }
    (1..=k).map(|i| i * n / blocks).collect()
}

/// Random block partition plus buildings, deterministic in `seed`.
pub fn generate_layout(seed: u64, params: &GenParams) -> Result<CityLayout> {
    params.validate()?;
    let mut rng = rng::substream(seed, rng::WORLD, 0);
    let n = params.cells_per_side();
    let street = params.cells(params.street_m);
    let min_b = params.cells(params.min_building_m).max(1);
    let max_b = params.cells(params.max_building_m).max(min_b);
    let x_cuts = sample_cuts(&mut rng, n, params.blocks_per_dim, street, min_b);
    let y_cuts = sample_cuts(&mut rng, n, params.blocks_per_dim, street, min_b);

    let bounds = |cuts: &[usize]| {
        let mut b = vec![0];
        b.extend_from_slice(cuts);
        b.push(n);
        b
    };
    let (xb, yb) = (bounds(&x_cuts), bounds(&y_cuts));
    let (lo_pad, hi_pad) = (street / 2, street - street / 2);

    let mut buildings = Vec::new();
    let mut open_blocks = 0;
    for xw in xb.windows(2) {
        for yw in yb.windows(2) {
            let (bx0, bx1) = (xw[0] + lo_pad, xw[1].saturating_sub(hi_pad));
            let (by0, by1) = (yw[0] + lo_pad, yw[1].saturating_sub(hi_pad));
            if rng.random::<f64>() < params.open_space_prob || bx1 < bx0 + min_b || by1 < by0 + min_b {
                open_blocks += 1;
                continue;
            }
            let count = rng.random_range(1..=params.max_buildings_per_block.max(1));
            for _ in 0..count {
                let w = rng.random_range(min_b..=max_b.min(bx1 - bx0));
                let l = rng.random_range(min_b..=max_b.min(by1 - by0));
                let x0 = rng.random_range(bx0..=bx1 - w);
                let y0 = rng.random_range(by0..=by1 - l);
                let height_m = if params.max_height_m > params.min_height_m {
                    rng.random_range(params.min_height_m..=params.max_height_m)
                } else {
                    params.min_height_m
                };
                buildings.push(Building { x0, x1: x0 + w, y0, y1: y0 + l, height_m });
            }
        }
    }
    Ok(CityLayout { x_cuts, y_cuts, buildings, open_blocks })
}

/// Rasterize a layout; overlapping buildings keep the taller height.
pub fn rasterize(layout: &CityLayout, grid: GridSpec) -> Result<UrbanWorld> {
    let ny = grid.ny();
    let mut heights = vec![0.0; grid.n_cells()];
    for b in &layout.buildings {
        for x in b.x0..b.x1.min(grid.nx()) {
            for y in b.y0..b.y1.min(ny) {
                let h = &mut heights[x * ny + y];
                *h = f64::max(*h, b.height_m);
            }
        }
    }
    UrbanWorld::new(grid, heights)
}

/// Manhattan-grid urban environment for `seed`.
pub fn generate_world(seed: u64, params: &GenParams) -> Result<UrbanWorld> {
    let layout = generate_layout(seed, params)?;
    let mut world = rasterize(&layout, params.grid()?)?;
    world.seed = Some(seed);
    world.params = Some(params.clone());
    Ok(world)
}

/// Square sub-world of side `side_m` at a random position inside `world`.
pub fn crop_world(world: &UrbanWorld, seed: u64, side_m: f64) -> Result<UrbanWorld> {
    let g = &world.grid;
    let n = whole_cells(side_m, g.spacing_m, "crop side")
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    if n > g.nx() || n > g.ny() {
        return Err(Error::InvalidParameter(format!(
            "crop side {side_m} m exceeds world {} m x {} m",
            g.length_m, g.width_m
        )));
    }
    let mut rng = rng::substream(seed, rng::CROP, 0);
    let ox = rng.random_range(0..=g.nx() - n);
    let oy = rng.random_range(0..=g.ny() - n);
    let side = n as f64 * g.spacing_m;
    let grid = GridSpec::new(side, side, g.height_m, g.spacing_m, g.pred_altitude_m, g.uav_altitude_m)?;
    let mut heights = Vec::with_capacity(n * n);
    for x in 0..n {
        for y in 0..n {
            heights.push(world.heights[(ox + x) * g.ny() + oy + y]);
        }
    }
    let mut out = UrbanWorld::new(grid, heights)?;
    let origin = Cell::new(ox as i32, oy as i32);
    out.nofly = world
        .nofly
        .iter()
        .map(|c| Cell::new(c.x - origin.x, c.y - origin.y))
        .filter(|c| grid.contains(*c))
        .collect();
    out.seed = world.seed;
    out.params = world.params.clone();
    out.offset = Cell::new(world.offset.x + origin.x, world.offset.y + origin.y);
    Ok(out)
}
