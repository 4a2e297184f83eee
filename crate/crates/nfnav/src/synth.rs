//! Seeded generator of synthetic scans: rooms on a strip, door openings,
//! jittered viewpoint scatter with k-nearest edges, objects with radius-based
//! visibility, and per-room occupancy grids for clearance raycasting.
//!
//! Generation is a pure function of [`SynthConfig`] — the same config always
//! produces the same scene and grids, byte for byte.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::rng_for;
use crate::scene::{
    Edge, ObjectInstance, Position, RoomId, SceneGraph, SceneError, Viewpoint, ViewpointId,
};

/// Inclusive count range for per-room sampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: u32,
    pub max: u32,
}

impl CountRange {
    pub fn new(min: u32, max: u32) -> Self {
        Self { min, max }
    }
}

/// Everything the generator needs. All sampling derives from `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_rooms: u32,
    pub viewpoints_per_room: CountRange,
    pub objects_per_room: CountRange,
    pub vocabulary: Vec<String>,
    /// Target number of nearest-neighbor edges per viewpoint inside a room.
    pub corridor_degree: u32,
    /// Side length of each (square) room in meters.
    pub room_extent: f64,
    /// Occupancy-grid cell size in meters.
    #[serde(default = "default_grid_cell")]
    pub grid_cell: f64,
    pub seed: u64,
    /// Rectangular obstacle blobs dropped per room to vary clearance.
    #[serde(default = "default_furniture")]
    pub furniture_per_room: u32,
    /// Visibility radius in meters; `None` derives 0.45 × room_extent.
    #[serde(default)]
    pub visibility_radius: Option<f64>,
}

fn default_grid_cell() -> f64 {
    0.1
}

fn default_furniture() -> u32 {
    2
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_rooms: 4,
            viewpoints_per_room: CountRange::new(5, 8),
            objects_per_room: CountRange::new(3, 6),
            vocabulary: default_vocabulary(),
            corridor_degree: 3,
            room_extent: 8.0,
            grid_cell: default_grid_cell(),
            seed: 0,
            furniture_per_room: default_furniture(),
            visibility_radius: None,
        }
    }
}

pub fn default_vocabulary() -> Vec<String> {
    [
        "armchair", "basket", "bathtub", "bed", "bench", "bookshelf", "cabinet", "chair",
        "clock", "couch", "cup", "desk", "dresser", "fireplace", "fridge", "lamp", "mirror",
        "nightstand", "ottoman", "oven", "painting", "piano", "plant", "plate", "rug", "shelf",
        "sink", "stool", "table", "television", "toilet", "towel", "vase", "wardrobe", "window",
    ]
    .into_iter()
    .map(str::to_owned)
    .collect()
}

/// Occupancy state of one grid cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cell {
    Free,
    Obstacle,
    Door,
}

impl Cell {
    pub fn code(self) -> char {
        match self {
            Cell::Free => 'F',
            Cell::Obstacle => 'O',
            Cell::Door => 'D',
        }
    }

    pub fn from_code(c: char) -> Option<Self> {
        match c {
            'F' => Some(Cell::Free),
            'O' => Some(Cell::Obstacle),
            'D' => Some(Cell::Door),
            _ => None,
        }
    }
}

/// Row-major occupancy grid anchored at `origin` (lower-left corner of cell
/// (0, 0)), x growing with column index and y with row index.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    pub origin: Position,
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
    cells: Vec<Cell>,
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid dimensions {width}x{height} do not match {n_cells} cells")]
    CellCountMismatch {
        width: usize,
        height: usize,
        n_cells: usize,
    },
    #[error("cell size must be positive and finite, got {0}")]
    BadCellSize(f64),
}

impl OccupancyGrid {
    pub fn new(
        origin: Position,
        cell_size: f64,
        width: usize,
        height: usize,
        cells: Vec<Cell>,
    ) -> Result<Self, GridError> {
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(GridError::BadCellSize(cell_size));
        }
        let expected = width.checked_mul(height);
        if expected != Some(cells.len()) {
            return Err(GridError::CellCountMismatch {
                width,
                height,
                n_cells: cells.len(),
            });
        }
        Ok(Self {
            origin,
            cell_size,
            width,
            height,
            cells,
        })
    }

    fn filled(origin: Position, cell_size: f64, width: usize, height: usize, fill: Cell) -> Self {
        Self {
            origin,
            cell_size,
            width,
            height,
            cells: vec![fill; width * height],
        }
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    /// Cell at column `ix`, row `iy`; `None` outside the grid.
    pub fn cell(&self, ix: i64, iy: i64) -> Option<Cell> {
        if ix < 0 || iy < 0 || ix as usize >= self.width || iy as usize >= self.height {
            return None;
        }
        Some(self.cells[iy as usize * self.width + ix as usize])
    }

    fn set(&mut self, ix: usize, iy: usize, cell: Cell) {
        self.cells[iy * self.width + ix] = cell;
    }

    /// Column/row of the cell containing the world point, even out of bounds.
    pub fn locate(&self, x: f64, y: f64) -> (i64, i64) {
        let ix = ((x - self.origin.x) / self.cell_size).floor() as i64;
        let iy = ((y - self.origin.y) / self.cell_size).floor() as i64;
        (ix, iy)
    }

    /// Cell under a world point; `None` outside the grid.
    pub fn cell_at(&self, x: f64, y: f64) -> Option<Cell> {
        let (ix, iy) = self.locate(x, y);
        self.cell(ix, iy)
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("generated scene failed validation: {0:?}")]
    Generation(Vec<crate::scene::Violation>),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("viewpoints `{0}` and `{1}` share a horizontal position")]
    CoincidentViewpoints(ViewpointId, ViewpointId),
}

impl SynthConfig {
    fn check(&self) -> Result<(), SynthError> {
        let fail = |msg: &str| Err(SynthError::InvalidConfig(msg.to_owned()));
        if self.n_rooms < 1 {
            return fail("n_rooms must be at least 1");
        }
        for (name, r) in [
            ("viewpoints_per_room", self.viewpoints_per_room),
            ("objects_per_room", self.objects_per_room),
        ] {
            if r.min < 1 || r.max < r.min {
                return Err(SynthError::InvalidConfig(format!(
                    "{name} must satisfy 1 <= min <= max, got [{}, {}]",
                    r.min, r.max
                )));
            }
        }
        if self.vocabulary.is_empty() {
            return fail("vocabulary must be non-empty");
        }
        if self.corridor_degree < 1 {
            return fail("corridor_degree must be at least 1");
        }
        if !(self.grid_cell.is_finite() && self.grid_cell > 0.0) {
            return fail("grid_cell must be positive");
        }
        // A room must fit walls, the viewpoint margin and at least one free cell.
        if !(self.room_extent.is_finite() && self.room_extent >= 10.0 * self.grid_cell) {
            return fail("room_extent must be at least 10 grid cells across");
        }
        Ok(())
    }

    fn vis_radius(&self) -> f64 {
        self.visibility_radius
            .unwrap_or(0.45 * self.room_extent)
    }
}

const ROOM_LABELS: &[&str] = &[
    "kitchen", "lounge", "bedroom", "office", "bathroom", "hallway", "dining room", "studio",
    "library", "laundry room",
];

const VIEWPOINT_Z: f64 = 1.4;

/// Generate a validated scene and one occupancy grid per room.
///
/// Rooms are unit squares of side `room_extent` laid out left to right; every
/// shared wall gets one door opening, viewpoints scatter on a jittered grid
/// with k-nearest in-room edges (repaired to connectivity), consecutive rooms
/// are linked through the door by their nearest viewpoints, and per-room
/// visibility is radius-based, patched so the room's viewpoints jointly see
/// every room object.
pub fn generate_scene(
    config: &SynthConfig,
) -> Result<(SceneGraph, BTreeMap<RoomId, OccupancyGrid>), SynthError> {
    config.check()?;
    let mut rng = rng_for(config.seed, &["scene-synth"]);
    let extent = config.room_extent;
    let cell = config.grid_cell;
    let margin = (0.15 * extent).max(2.0 * cell);
    let door_width = (0.12 * extent).max(3.0 * cell);

    let mut rooms = BTreeMap::new();
    let mut viewpoints: Vec<Viewpoint> = Vec::new();
    let mut objects: Vec<ObjectInstance> = Vec::new();
    let mut edges: Vec<Edge> = Vec::new();
    let mut edge_set: BTreeSet<(ViewpointId, ViewpointId)> = BTreeSet::new();
    let mut room_vp_ranges: Vec<(usize, usize)> = Vec::new();

    let add_edge = |edges: &mut Vec<Edge>,
                        edge_set: &mut BTreeSet<(ViewpointId, ViewpointId)>,
                        a: &ViewpointId,
                        b: &ViewpointId| {
        let key = if a <= b {
            (a.clone(), b.clone())
        } else {
            (b.clone(), a.clone())
        };
        if a != b && edge_set.insert(key) {
            edges.push(Edge {
                u: a.clone(),
                v: b.clone(),
                length: None,
            });
        }
    };

    for ri in 0..config.n_rooms as usize {
        let room_id = RoomId::new(format!("r{ri:02}"));
        let label = ROOM_LABELS[ri % ROOM_LABELS.len()];
        rooms.insert(room_id.clone(), label.to_owned());

        let x0 = ri as f64 * extent;
        let lo_x = x0 + margin;
        let hi_x = x0 + extent - margin;
        let lo_y = margin;
        let hi_y = extent - margin;

        // Jittered grid scatter.
        let n_vps = rng.gen_range(config.viewpoints_per_room.min..=config.viewpoints_per_room.max)
            as usize;
        let side = (n_vps as f64).sqrt().ceil() as usize;
        let spacing_x = (hi_x - lo_x) / side.max(1) as f64;
        let spacing_y = (hi_y - lo_y) / side.max(1) as f64;
        let jitter = (spacing_x.min(spacing_y) / 3.0).min(0.3);
        let first_vp = viewpoints.len();
        for k in 0..n_vps {
            let gx = (k % side) as f64;
            let gy = (k / side) as f64;
            let x = (lo_x + (gx + 0.5) * spacing_x + rng.gen_range(-jitter..=jitter))
                .clamp(lo_x, hi_x);
            let y = (lo_y + (gy + 0.5) * spacing_y + rng.gen_range(-jitter..=jitter))
                .clamp(lo_y, hi_y);
            viewpoints.push(Viewpoint {
                id: ViewpointId::new(format!("r{ri:02}-v{k:02}")),
                position: Position::new(x, y, VIEWPOINT_Z),
                room_id: room_id.clone(),
            });
        }
        room_vp_ranges.push((first_vp, viewpoints.len()));

        let n_objs =
            rng.gen_range(config.objects_per_room.min..=config.objects_per_room.max) as usize;
        for k in 0..n_objs {
            let cat = config.vocabulary[rng.gen_range(0..config.vocabulary.len())].clone();
            let x = rng.gen_range(lo_x..=hi_x);
            let y = rng.gen_range(lo_y..=hi_y);
            objects.push(ObjectInstance {
                id: crate::scene::ObjectId::new(format!("r{ri:02}-o{k:02}")),
                category: cat,
                room_id: room_id.clone(),
                position: Position::new(x, y, 0.5),
            });
        }
    }

    // In-room k-nearest edges plus connectivity repair.
    for &(lo, hi) in &room_vp_ranges {
        let ids: Vec<ViewpointId> = viewpoints[lo..hi].iter().map(|v| v.id.clone()).collect();
        let pos: Vec<Position> = viewpoints[lo..hi].iter().map(|v| v.position).collect();
        let n = ids.len();
        for i in 0..n {
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| {
                pos[i]
                    .distance(&pos[a])
                    .total_cmp(&pos[i].distance(&pos[b]))
                    .then_with(|| ids[a].cmp(&ids[b]))
            });
            for &j in order.iter().take(config.corridor_degree as usize) {
                add_edge(&mut edges, &mut edge_set, &ids[i], &ids[j]);
            }
        }
        // Union-find repair: link closest viewpoints across components.
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for e in &edges {
            if let (Some(i), Some(j)) = (
                ids.iter().position(|id| *id == e.u),
                ids.iter().position(|id| *id == e.v),
            ) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri] = rj;
            }
        }
        loop {
            let roots: BTreeSet<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
            if roots.len() <= 1 {
                break;
            }
            let mut best: Option<(f64, usize, usize)> = None;
            for i in 0..n {
                for j in (i + 1)..n {
                    if find(&mut parent, i) == find(&mut parent, j) {
                        continue;
                    }
                    let d = pos[i].distance(&pos[j]);
                    if best.map(|(bd, _, _)| d < bd).unwrap_or(true) {
                        best = Some((d, i, j));
                    }
                }
            }
            let (_, i, j) = best.expect("multiple components imply a crossing pair");
            add_edge(&mut edges, &mut edge_set, &ids[i], &ids[j]);
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            parent[ri] = rj;
        }
    }

    // One door per shared wall, linking the nearest viewpoints on both sides.
    let mut door_centers: Vec<f64> = Vec::new();
    for ri in 0..config.n_rooms.saturating_sub(1) as usize {
        let dy = rng.gen_range((margin + door_width / 2.0)..=(extent - margin - door_width / 2.0));
        door_centers.push(dy);
        let wall_x = (ri + 1) as f64 * extent;
        let door_pos = Position::new(wall_x, dy, VIEWPOINT_Z);
        let nearest = |range: (usize, usize)| -> ViewpointId {
            viewpoints[range.0..range.1]
                .iter()
                .min_by(|a, b| {
                    a.position
                        .distance(&door_pos)
                        .total_cmp(&b.position.distance(&door_pos))
                        .then_with(|| a.id.cmp(&b.id))
                })
                .expect("room has at least one viewpoint")
                .id
                .clone()
        };
        let left = nearest(room_vp_ranges[ri]);
        let right = nearest(room_vp_ranges[ri + 1]);
        add_edge(&mut edges, &mut edge_set, &left, &right);
    }

    // Radius visibility, then patch so each room's union covers its objects.
    let vis_radius = config.vis_radius();
    let mut visibility: BTreeMap<ViewpointId, BTreeSet<crate::scene::ObjectId>> = viewpoints
        .iter()
        .map(|v| (v.id.clone(), BTreeSet::new()))
        .collect();
    for obj in &objects {
        let mut seen = false;
        for vp in &viewpoints {
            if vp.room_id == obj.room_id
                && vp.position.horizontal_distance(&obj.position) <= vis_radius
            {
                visibility.get_mut(&vp.id).unwrap().insert(obj.id.clone());
                seen = true;
            }
        }
        if !seen {
            let nearest = viewpoints
                .iter()
                .filter(|vp| vp.room_id == obj.room_id)
                .min_by(|a, b| {
                    a.position
                        .horizontal_distance(&obj.position)
                        .total_cmp(&b.position.horizontal_distance(&obj.position))
                        .then_with(|| a.id.cmp(&b.id))
                })
                .expect("room has at least one viewpoint");
            visibility
                .get_mut(&nearest.id)
                .unwrap()
                .insert(obj.id.clone());
        }
    }

    // Per-room occupancy grids: wall border, door openings, furniture blobs.
    let cells_across = (extent / cell).round() as usize;
    let mut grids = BTreeMap::new();
    for ri in 0..config.n_rooms as usize {
        let room_id = RoomId::new(format!("r{ri:02}"));
        let x0 = ri as f64 * extent;
        let mut grid = OccupancyGrid::filled(
            Position::new(x0, 0.0, 0.0),
            cell,
            cells_across,
            cells_across,
            Cell::Free,
        );
        for i in 0..cells_across {
            grid.set(i, 0, Cell::Obstacle);
            grid.set(i, cells_across - 1, Cell::Obstacle);
            grid.set(0, i, Cell::Obstacle);
            grid.set(cells_across - 1, i, Cell::Obstacle);
        }
        let punch_door = |grid: &mut OccupancyGrid, col: usize, dy: f64| {
            let lo = (((dy - door_width / 2.0) / cell).floor() as i64).max(1);
            let hi = (((dy + door_width / 2.0) / cell).ceil() as i64)
                .min(cells_across as i64 - 2);
            for iy in lo..=hi {
                grid.set(col, iy as usize, Cell::Door);
            }
        };
        if ri > 0 {
            punch_door(&mut grid, 0, door_centers[ri - 1]);
        }
        if ri < door_centers.len() {
            punch_door(&mut grid, cells_across - 1, door_centers[ri]);
        }

        let (vlo, vhi) = room_vp_ranges[ri];
        let room_vps = &viewpoints[vlo..vhi];
        for _ in 0..config.furniture_per_room {
            let fx = rng.gen_range((x0 + margin)..=(x0 + extent - margin));
            let fy = rng.gen_range(margin..=(extent - margin));
            let half = rng.gen_range((2.0 * cell)..=(4.0 * cell));
            let clear_of_vps = room_vps.iter().all(|vp| {
                let dx = (vp.position.x - fx).abs();
                let dy = (vp.position.y - fy).abs();
                dx.max(dy) > half + 2.0 * cell
            });
            if !clear_of_vps {
                continue;
            }
            let (lo_ix, lo_iy) = grid.locate(fx - half, fy - half);
            let (hi_ix, hi_iy) = grid.locate(fx + half, fy + half);
            for iy in lo_iy.max(1)..=hi_iy.min(cells_across as i64 - 2) {
                for ix in lo_ix.max(1)..=hi_ix.min(cells_across as i64 - 2) {
                    grid.set(ix as usize, iy as usize, Cell::Obstacle);
                }
            }
        }
        debug_assert!(room_vps.iter().all(|vp| {
            grid.cell_at(vp.position.x, vp.position.y) == Some(Cell::Free)
        }));
        grids.insert(room_id, grid);
    }

    let scan_id = format!("synth-{:016x}", config.seed);
    let scene = SceneGraph::new(scan_id, viewpoints, edges, rooms, objects, visibility);
    let violations = scene.validate();
    if !violations.is_empty() {
        return Err(SynthError::Generation(violations));
    }
    Ok((scene, grids))
}

/// Heading toward each neighbor of `v`, in radians within (−π, π], measured
/// from the +x axis with counterclockwise positive.
pub fn derive_headings(
    scene: &SceneGraph,
    v: &ViewpointId,
) -> Result<BTreeMap<ViewpointId, f64>, SynthError> {
    let here = scene.viewpoint(v)?.position;
    let mut headings = BTreeMap::new();
    for (n, _) in scene.neighbors(v)? {
        let there = scene.viewpoint(n)?.position;
        let dx = there.x - here.x;
        let dy = there.y - here.y;
        if dx == 0.0 && dy == 0.0 {
            return Err(SynthError::CoincidentViewpoints(v.clone(), n.clone()));
        }
        let mut theta = dy.atan2(dx);
        if theta <= -std::f64::consts::PI {
            theta = std::f64::consts::PI;
        }
        headings.insert(n.clone(), theta);
    }
    Ok(headings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn small_config(seed: u64) -> SynthConfig {
        SynthConfig {
            n_rooms: 3,
            viewpoints_per_room: CountRange::new(4, 6),
            objects_per_room: CountRange::new(2, 4),
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_generates_identical_scenes() {
        let config = small_config(7);
        let (a, grids_a) = generate_scene(&config).unwrap();
        let (b, grids_b) = generate_scene(&config).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        assert_eq!(grids_a, grids_b);
    }

    #[test]
    fn different_seeds_differ() {
        let (a, _) = generate_scene(&small_config(1)).unwrap();
        let (b, _) = generate_scene(&small_config(2)).unwrap();
        assert_ne!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn single_room_single_object_is_visible() {
        let config = SynthConfig {
            n_rooms: 1,
            viewpoints_per_room: CountRange::new(1, 1),
            objects_per_room: CountRange::new(1, 1),
            seed: 3,
            ..SynthConfig::default()
        };
        let (scene, _) = generate_scene(&config).unwrap();
        let vp = &scene.viewpoints()[0];
        let obj = &scene.objects()[0];
        assert!(scene.objects_visible(&vp.id).unwrap().contains(&obj.id));
    }

    #[test]
    fn many_seeds_validate_clean() {
        for seed in 0..12 {
            let config = SynthConfig {
                n_rooms: 5,
                seed,
                ..SynthConfig::default()
            };
            let (scene, grids) = generate_scene(&config).unwrap();
            assert_eq!(scene.validate(), Vec::new(), "seed {seed}");
            assert_eq!(grids.len(), 5);
        }
    }

    #[test]
    fn room_visibility_unions_cover_room_objects() {
        for seed in 0..8 {
            let (scene, _) = generate_scene(&small_config(seed)).unwrap();
            for room in scene.rooms().keys() {
                let mut seen = BTreeSet::new();
                for vp in scene.viewpoints_in_room(room).unwrap() {
                    seen.extend(scene.objects_visible(vp).unwrap().iter().cloned());
                }
                for obj in scene.objects_in_room(room).unwrap() {
                    assert!(seen.contains(obj), "seed {seed}: object {obj} unseen");
                }
            }
        }
    }

    #[test]
    fn viewpoints_sit_on_free_cells() {
        for seed in 0..8 {
            let (scene, grids) = generate_scene(&small_config(seed)).unwrap();
            for vp in scene.viewpoints() {
                let grid = &grids[&vp.room_id];
                assert_eq!(
                    grid.cell_at(vp.position.x, vp.position.y),
                    Some(Cell::Free),
                    "seed {seed}, viewpoint {}",
                    vp.id
                );
            }
        }
    }

    #[test]
    fn grids_have_walls_and_doors() {
        let (_, grids) = generate_scene(&small_config(11)).unwrap();
        let first = grids.values().next().unwrap();
        assert_eq!(first.cell(0, 0), Some(Cell::Obstacle));
        // Middle room has doors on both sides.
        let mid = &grids[&RoomId::from("r01")];
        let left_wall: Vec<Cell> = (0..mid.height as i64)
            .filter_map(|iy| mid.cell(0, iy))
            .collect();
        assert!(left_wall.contains(&Cell::Door));
        let right_wall: Vec<Cell> = (0..mid.height as i64)
            .filter_map(|iy| mid.cell(mid.width as i64 - 1, iy))
            .collect();
        assert!(right_wall.contains(&Cell::Door));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad_rooms = SynthConfig {
            n_rooms: 0,
            ..SynthConfig::default()
        };
        assert!(matches!(
            generate_scene(&bad_rooms),
            Err(SynthError::InvalidConfig(_))
        ));
        let bad_range = SynthConfig {
            viewpoints_per_room: CountRange::new(3, 2),
            ..SynthConfig::default()
        };
        assert!(matches!(
            generate_scene(&bad_range),
            Err(SynthError::InvalidConfig(_))
        ));
        let zero_area = SynthConfig {
            room_extent: 0.0,
            ..SynthConfig::default()
        };
        assert!(matches!(
            generate_scene(&zero_area),
            Err(SynthError::InvalidConfig(_))
        ));
        let empty_vocab = SynthConfig {
            vocabulary: vec![],
            ..SynthConfig::default()
        };
        assert!(matches!(
            generate_scene(&empty_vocab),
            Err(SynthError::InvalidConfig(_))
        ));
    }

    fn heading_fixture() -> SceneGraph {
        let rooms = BTreeMap::from([(RoomId::from("r"), "room".to_owned())]);
        let vp = |id: &str, x: f64, y: f64| Viewpoint {
            id: id.into(),
            position: Position::new(x, y, VIEWPOINT_Z),
            room_id: "r".into(),
        };
        let edge = |u: &str, v: &str| Edge {
            u: u.into(),
            v: v.into(),
            length: Some(1.0),
        };
        SceneGraph::new(
            "headings",
            vec![
                vp("c", 0.0, 0.0),
                vp("east", 2.0, 0.0),
                vp("north", 0.0, 2.0),
                vp("west", -2.0, 0.0),
            ],
            vec![edge("c", "east"), edge("c", "north"), edge("c", "west")],
            rooms,
            vec![],
            BTreeMap::new(),
        )
    }

    #[test]
    fn headings_follow_atan2_convention() {
        let scene = heading_fixture();
        let headings = derive_headings(&scene, &"c".into()).unwrap();
        assert_eq!(headings[&ViewpointId::from("east")], 0.0);
        assert!((headings[&ViewpointId::from("north")] - PI / 2.0).abs() < 1e-12);
        // Opposite directions differ by exactly π and stay within (−π, π].
        let diff = headings[&ViewpointId::from("west")] - headings[&ViewpointId::from("east")];
        assert!((diff.abs() - PI).abs() < 1e-12);
        for h in headings.values() {
            assert!(*h > -PI && *h <= PI);
        }
    }

    #[test]
    fn coincident_horizontal_positions_error() {
        let rooms = BTreeMap::from([(RoomId::from("r"), "room".to_owned())]);
        let scene = SceneGraph::new(
            "coincident",
            vec![
                Viewpoint {
                    id: "a".into(),
                    position: Position::new(1.0, 1.0, 1.0),
                    room_id: "r".into(),
                },
                Viewpoint {
                    id: "b".into(),
                    position: Position::new(1.0, 1.0, 2.0),
                    room_id: "r".into(),
                },
            ],
            vec![Edge {
                u: "a".into(),
                v: "b".into(),
                length: Some(1.0),
            }],
            rooms,
            vec![],
            BTreeMap::new(),
        );
        assert!(matches!(
            derive_headings(&scene, &"a".into()),
            Err(SynthError::CoincidentViewpoints(_, _))
        ));
    }

    #[test]
    fn grid_rejects_mismatched_cell_count() {
        let err = OccupancyGrid::new(Position::new(0.0, 0.0, 0.0), 0.1, 4, 4, vec![Cell::Free; 15]);
        assert!(matches!(err, Err(GridError::CellCountMismatch { .. })));
        let err = OccupancyGrid::new(Position::new(0.0, 0.0, 0.0), 0.0, 2, 2, vec![Cell::Free; 4]);
        assert!(matches!(err, Err(GridError::BadCellSize(_))));
    }
}
