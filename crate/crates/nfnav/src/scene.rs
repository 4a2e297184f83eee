//! Immutable scan model: rooms, viewpoints, weighted traversability edges,
//! object instances and per-viewpoint visibility, plus the graph queries the
//! rest of the crate is built on.
//!
//! A [`SceneGraph`] is permissive on construction — it holds whatever records
//! it was given — and [`SceneGraph::validate`] reports invariant violations
//! instead of failing. Queries assume a scene that validates cleanly and
//! return [`SceneError`] for unknown identifiers.
//!
//! Shortest paths break length ties by the lexicographically smallest
//! viewpoint-id sequence so that replays and golden files are stable.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

macro_rules! id_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

id_newtype!(
    /// Opaque viewpoint identifier. Ordering is plain string order and is the
    /// tie-break order used everywhere.
    ViewpointId
);
id_newtype!(
    /// Opaque room identifier. Room identity is by id, not by label.
    RoomId
);
id_newtype!(
    /// Opaque object-instance identifier.
    ObjectId
);

/// World coordinates in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(&self, other: &Position) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    /// Horizontal (x, y) distance, ignoring z.
    pub fn horizontal_distance(&self, other: &Position) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }
}

/// A navigable panoramic node.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Viewpoint {
    pub id: ViewpointId,
    #[serde(flatten)]
    pub position: Position,
    pub room_id: RoomId,
}

/// An undirected traversable transition. `length` is optional on input;
/// when absent it resolves to the Euclidean distance between the endpoints.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Edge {
    pub u: ViewpointId,
    pub v: ViewpointId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
}

/// An annotated object instance inside a room.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub id: ObjectId,
    pub category: String,
    pub room_id: RoomId,
    #[serde(flatten)]
    pub position: Position,
}

/// Scan-level navigation graph with rooms, objects and visibility.
///
/// Immutable after construction; every query is pure and `&self`, so a scene
/// can be shared freely across evaluation workers.
#[derive(Clone, Debug)]
pub struct SceneGraph {
    scan_id: String,
    viewpoints: Vec<Viewpoint>,
    edges: Vec<Edge>,
    rooms: BTreeMap<RoomId, String>,
    objects: Vec<ObjectInstance>,
    visibility: BTreeMap<ViewpointId, BTreeSet<ObjectId>>,

    // Derived indexes. Dangling references are skipped here and surfaced by
    // `validate`.
    vp_index: BTreeMap<ViewpointId, usize>,
    obj_index: BTreeMap<ObjectId, usize>,
    adjacency: BTreeMap<ViewpointId, Vec<(ViewpointId, f64)>>,
    room_viewpoints: BTreeMap<RoomId, BTreeSet<ViewpointId>>,
    room_objects: BTreeMap<RoomId, BTreeSet<ObjectId>>,
    visible_from: BTreeMap<ObjectId, BTreeSet<ViewpointId>>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SceneError {
    #[error("unknown viewpoint `{0}`")]
    UnknownViewpoint(ViewpointId),
    #[error("unknown room `{0}`")]
    UnknownRoom(RoomId),
    #[error("unknown object `{0}`")]
    UnknownObject(ObjectId),
}

/// One invariant violation found by [`SceneGraph::validate`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub code: &'static str,
    pub detail: String,
}

impl Violation {
    fn new(code: &'static str, detail: impl Into<String>) -> Self {
        Self {
            code,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.detail)
    }
}

/// A shortest path and its total length in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub viewpoints: Vec<ViewpointId>,
    pub length: f64,
}

impl SceneGraph {
    pub fn new(
        scan_id: impl Into<String>,
        viewpoints: Vec<Viewpoint>,
        edges: Vec<Edge>,
        rooms: BTreeMap<RoomId, String>,
        objects: Vec<ObjectInstance>,
        visibility: BTreeMap<ViewpointId, BTreeSet<ObjectId>>,
    ) -> Self {
        let mut scene = SceneGraph {
            scan_id: scan_id.into(),
            viewpoints,
            edges,
            rooms,
            objects,
            visibility,
            vp_index: BTreeMap::new(),
            obj_index: BTreeMap::new(),
            adjacency: BTreeMap::new(),
            room_viewpoints: BTreeMap::new(),
            room_objects: BTreeMap::new(),
            visible_from: BTreeMap::new(),
        };
        scene.build_indexes();
        scene
    }

    fn build_indexes(&mut self) {
        for (i, vp) in self.viewpoints.iter().enumerate() {
            self.vp_index.entry(vp.id.clone()).or_insert(i);
            self.room_viewpoints
                .entry(vp.room_id.clone())
                .or_default()
                .insert(vp.id.clone());
            self.adjacency.entry(vp.id.clone()).or_default();
        }
        for (i, obj) in self.objects.iter().enumerate() {
            self.obj_index.entry(obj.id.clone()).or_insert(i);
            self.room_objects
                .entry(obj.room_id.clone())
                .or_default()
                .insert(obj.id.clone());
        }
        for edge in &self.edges {
            let (Some(&ui), Some(&vi)) = (self.vp_index.get(&edge.u), self.vp_index.get(&edge.v))
            else {
                continue;
            };
            let length = edge.length.unwrap_or_else(|| {
                self.viewpoints[ui]
                    .position
                    .distance(&self.viewpoints[vi].position)
            });
            self.adjacency
                .get_mut(&edge.u)
                .expect("endpoint indexed")
                .push((edge.v.clone(), length));
            self.adjacency
                .get_mut(&edge.v)
                .expect("endpoint indexed")
                .push((edge.u.clone(), length));
        }
        for neighbors in self.adjacency.values_mut() {
            neighbors.sort_by(|a, b| a.0.cmp(&b.0));
        }
        for (vp, objs) in &self.visibility {
            if !self.vp_index.contains_key(vp) {
                continue;
            }
            for obj in objs {
                if self.obj_index.contains_key(obj) {
                    self.visible_from
                        .entry(obj.clone())
                        .or_default()
                        .insert(vp.clone());
                }
            }
        }
        for obj in &self.objects {
            self.visible_from.entry(obj.id.clone()).or_default();
        }
    }

    pub fn scan_id(&self) -> &str {
        &self.scan_id
    }

    pub fn viewpoints(&self) -> &[Viewpoint] {
        &self.viewpoints
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn rooms(&self) -> &BTreeMap<RoomId, String> {
        &self.rooms
    }

    pub fn objects(&self) -> &[ObjectInstance] {
        &self.objects
    }

    pub fn visibility(&self) -> &BTreeMap<ViewpointId, BTreeSet<ObjectId>> {
        &self.visibility
    }

    pub fn viewpoint(&self, id: &ViewpointId) -> Result<&Viewpoint, SceneError> {
        self.vp_index
            .get(id)
            .map(|&i| &self.viewpoints[i])
            .ok_or_else(|| SceneError::UnknownViewpoint(id.clone()))
    }

    pub fn object(&self, id: &ObjectId) -> Result<&ObjectInstance, SceneError> {
        self.obj_index
            .get(id)
            .map(|&i| &self.objects[i])
            .ok_or_else(|| SceneError::UnknownObject(id.clone()))
    }

    pub fn contains_room(&self, id: &RoomId) -> bool {
        self.rooms.contains_key(id)
    }

    /// Neighbors of `v` with resolved edge lengths, sorted by neighbor id.
    pub fn neighbors(&self, v: &ViewpointId) -> Result<&[(ViewpointId, f64)], SceneError> {
        self.adjacency
            .get(v)
            .map(Vec::as_slice)
            .ok_or_else(|| SceneError::UnknownViewpoint(v.clone()))
    }

    pub fn is_edge(&self, u: &ViewpointId, v: &ViewpointId) -> bool {
        self.adjacency
            .get(u)
            .map(|ns| ns.iter().any(|(n, _)| n == v))
            .unwrap_or(false)
    }

    /// Resolved length of the `u`–`v` edge, if present.
    pub fn edge_length(&self, u: &ViewpointId, v: &ViewpointId) -> Option<f64> {
        self.adjacency
            .get(u)?
            .iter()
            .find(|(n, _)| n == v)
            .map(|(_, l)| *l)
    }

    /// Sum of edge lengths along a viewpoint sequence. `None` if a consecutive
    /// pair is not an edge.
    pub fn path_length(&self, path: &[ViewpointId]) -> Option<f64> {
        let mut total = 0.0;
        for pair in path.windows(2) {
            total += self.edge_length(&pair[0], &pair[1])?;
        }
        Some(total)
    }

    pub fn viewpoints_in_room(&self, room: &RoomId) -> Result<&BTreeSet<ViewpointId>, SceneError> {
        if !self.rooms.contains_key(room) {
            return Err(SceneError::UnknownRoom(room.clone()));
        }
        Ok(self
            .room_viewpoints
            .get(room)
            .unwrap_or(Self::empty_vp_set()))
    }

    pub fn objects_in_room(&self, room: &RoomId) -> Result<&BTreeSet<ObjectId>, SceneError> {
        if !self.rooms.contains_key(room) {
            return Err(SceneError::UnknownRoom(room.clone()));
        }
        Ok(self.room_objects.get(room).unwrap_or(Self::empty_obj_set()))
    }

    /// Stored visibility set of a viewpoint. May include objects of other
    /// rooms; callers intersect with room objects where required.
    pub fn objects_visible(&self, v: &ViewpointId) -> Result<&BTreeSet<ObjectId>, SceneError> {
        if !self.vp_index.contains_key(v) {
            return Err(SceneError::UnknownViewpoint(v.clone()));
        }
        Ok(self.visibility.get(v).unwrap_or(Self::empty_obj_set()))
    }

    /// Inverse of the visibility index: the viewpoints that see `obj`.
    pub fn visible_from(&self, obj: &ObjectId) -> Result<&BTreeSet<ViewpointId>, SceneError> {
        if !self.obj_index.contains_key(obj) {
            return Err(SceneError::UnknownObject(obj.clone()));
        }
        Ok(self.visible_from.get(obj).unwrap_or(Self::empty_vp_set()))
    }

    fn empty_vp_set() -> &'static BTreeSet<ViewpointId> {
        static EMPTY: std::sync::OnceLock<BTreeSet<ViewpointId>> = std::sync::OnceLock::new();
        EMPTY.get_or_init(BTreeSet::new)
    }

    fn empty_obj_set() -> &'static BTreeSet<ObjectId> {
        static EMPTY: std::sync::OnceLock<BTreeSet<ObjectId>> = std::sync::OnceLock::new();
        EMPTY.get_or_init(BTreeSet::new)
    }

    /// Checks every stored invariant and reports all violations found.
    /// Pure and idempotent; an empty report means the scene is well-formed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut report = Vec::new();

        let mut seen_vp = BTreeSet::new();
        for vp in &self.viewpoints {
            if !seen_vp.insert(&vp.id) {
                report.push(Violation::new(
                    "duplicate-viewpoint-id",
                    format!("viewpoint `{}` declared more than once", vp.id),
                ));
            }
            if !vp.position.is_finite() {
                report.push(Violation::new(
                    "non-finite-position",
                    format!("viewpoint `{}` has a non-finite position", vp.id),
                ));
            }
            if !self.rooms.contains_key(&vp.room_id) {
                report.push(Violation::new(
                    "viewpoint-without-room",
                    format!("viewpoint `{}` references unknown room `{}`", vp.id, vp.room_id),
                ));
            }
        }

        let mut seen_obj = BTreeSet::new();
        for obj in &self.objects {
            if !seen_obj.insert(&obj.id) {
                report.push(Violation::new(
                    "duplicate-object-id",
                    format!("object `{}` declared more than once", obj.id),
                ));
            }
            if obj.category.is_empty() {
                report.push(Violation::new(
                    "empty-object-category",
                    format!("object `{}` has an empty category", obj.id),
                ));
            }
            if !self.rooms.contains_key(&obj.room_id) {
                report.push(Violation::new(
                    "object-without-room",
                    format!("object `{}` references unknown room `{}`", obj.id, obj.room_id),
                ));
            }
            if !obj.position.is_finite() {
                report.push(Violation::new(
                    "non-finite-position",
                    format!("object `{}` has a non-finite position", obj.id),
                ));
            }
        }

        let mut seen_edges = BTreeSet::new();
        for edge in &self.edges {
            let u_ok = self.vp_index.contains_key(&edge.u);
            let v_ok = self.vp_index.contains_key(&edge.v);
            if !u_ok || !v_ok {
                report.push(Violation::new(
                    "edge-endpoint-missing",
                    format!("edge `{}`–`{}` references a missing viewpoint", edge.u, edge.v),
                ));
                continue;
            }
            if edge.u == edge.v {
                report.push(Violation::new(
                    "self-loop",
                    format!("edge `{}`–`{}` is a self loop", edge.u, edge.v),
                ));
            }
            let key = if edge.u <= edge.v {
                (edge.u.clone(), edge.v.clone())
            } else {
                (edge.v.clone(), edge.u.clone())
            };
            if !seen_edges.insert(key) {
                report.push(Violation::new(
                    "duplicate-edge",
                    format!("edge `{}`–`{}` stored more than once", edge.u, edge.v),
                ));
            }
            let length = edge
                .length
                .unwrap_or_else(|| self.edge_length(&edge.u, &edge.v).unwrap_or(f64::NAN));
            if !(length.is_finite() && length > 0.0) {
                report.push(Violation::new(
                    "non-positive-edge-length",
                    format!("edge `{}`–`{}` has length {length}", edge.u, edge.v),
                ));
            }
        }

        for (room, label) in &self.rooms {
            let occupied = self
                .room_viewpoints
                .get(room)
                .map(|s| !s.is_empty())
                .unwrap_or(false);
            if !occupied {
                report.push(Violation::new(
                    "empty-room",
                    format!("room `{room}` ({label}) has no viewpoint"),
                ));
            }
        }

        for (vp, objs) in &self.visibility {
            if !self.vp_index.contains_key(vp) {
                report.push(Violation::new(
                    "visibility-unknown-viewpoint",
                    format!("visibility entry for unknown viewpoint `{vp}`"),
                ));
            }
            for obj in objs {
                if !self.obj_index.contains_key(obj) {
                    report.push(Violation::new(
                        "visibility-unknown-object",
                        format!("viewpoint `{vp}` visibility references unknown object `{obj}`"),
                    ));
                }
            }
        }

        if !self.viewpoints.is_empty() && !self.is_connected() {
            report.push(Violation::new("disconnected-graph", "graph is not connected"));
        }

        report
    }

    fn is_connected(&self) -> bool {
        let Some(start) = self.viewpoints.first() else {
            return true;
        };
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::new();
        seen.insert(start.id.clone());
        queue.push_back(start.id.clone());
        while let Some(v) = queue.pop_front() {
            if let Some(neighbors) = self.adjacency.get(&v) {
                for (n, _) in neighbors {
                    if seen.insert(n.clone()) {
                        queue.push_back(n.clone());
                    }
                }
            }
        }
        seen.len() == self.vp_index.len()
    }

    /// Shortest path from `u` to `v`. `Ok(None)` when unreachable.
    ///
    /// Length ties are broken by the lexicographically smallest viewpoint-id
    /// sequence. With strictly positive edge lengths the (length, sequence)
    /// order is preserved under path extension, so the label-setting search
    /// below settles each node with its unique minimal label.
    pub fn shortest_path(
        &self,
        u: &ViewpointId,
        v: &ViewpointId,
    ) -> Result<Option<Path>, SceneError> {
        if !self.vp_index.contains_key(u) {
            return Err(SceneError::UnknownViewpoint(u.clone()));
        }
        if !self.vp_index.contains_key(v) {
            return Err(SceneError::UnknownViewpoint(v.clone()));
        }
        if u == v {
            return Ok(Some(Path {
                viewpoints: vec![u.clone()],
                length: 0.0,
            }));
        }

        struct Label {
            dist: f64,
            path: Vec<ViewpointId>,
        }
        impl PartialEq for Label {
            fn eq(&self, other: &Self) -> bool {
                self.cmp(other) == Ordering::Equal
            }
        }
        impl Eq for Label {}
        impl PartialOrd for Label {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }
        impl Ord for Label {
            fn cmp(&self, other: &Self) -> Ordering {
                // Reversed: BinaryHeap is a max-heap and we want the smallest
                // (dist, path) label on top.
                other
                    .dist
                    .total_cmp(&self.dist)
                    .then_with(|| other.path.cmp(&self.path))
            }
        }

        let mut settled: BTreeSet<ViewpointId> = BTreeSet::new();
        let mut heap = BinaryHeap::new();
        heap.push(Label {
            dist: 0.0,
            path: vec![u.clone()],
        });

        while let Some(Label { dist, path }) = heap.pop() {
            let node = path.last().expect("non-empty path").clone();
            if !settled.insert(node.clone()) {
                continue;
            }
            if &node == v {
                return Ok(Some(Path {
                    viewpoints: path,
                    length: dist,
                }));
            }
            for (n, w) in self.adjacency.get(&node).into_iter().flatten() {
                if settled.contains(n) || !(w.is_finite() && *w > 0.0) {
                    continue;
                }
                let mut next = path.clone();
                next.push(n.clone());
                heap.push(Label {
                    dist: dist + w,
                    path: next,
                });
            }
        }
        Ok(None)
    }

    /// Scene restricted to one room: its viewpoints, the edges with both
    /// endpoints inside, its objects, and visibility intersected with them.
    pub fn room_subgraph(&self, room: &RoomId) -> Result<SceneGraph, SceneError> {
        let vps = self.viewpoints_in_room(room)?.clone();
        let objs = self.objects_in_room(room)?.clone();
        let viewpoints = self
            .viewpoints
            .iter()
            .filter(|vp| vps.contains(&vp.id))
            .cloned()
            .collect();
        let edges = self
            .edges
            .iter()
            .filter(|e| vps.contains(&e.u) && vps.contains(&e.v))
            .cloned()
            .collect();
        let mut rooms = BTreeMap::new();
        rooms.insert(room.clone(), self.rooms[room].clone());
        let objects = self
            .objects
            .iter()
            .filter(|o| objs.contains(&o.id))
            .cloned()
            .collect();
        let visibility = self
            .visibility
            .iter()
            .filter(|(vp, _)| vps.contains(*vp))
            .map(|(vp, seen)| (vp.clone(), seen.intersection(&objs).cloned().collect()))
            .collect();
        Ok(SceneGraph::new(
            format!("{}#{}", self.scan_id, room),
            viewpoints,
            edges,
            rooms,
            objects,
            visibility,
        ))
    }
}
