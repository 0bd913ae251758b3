//! Procedural indoor scenes: a grid of rooms joined by doorways, furnished with
//! categorized boxes and vertical cylinders.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Rect, Vec3};

/// Rejection-sampling budget for each object.
pub const PLACEMENT_RETRIES: usize = 1_000;

const WALL_ALBEDO: [f64; 3] = [0.78, 0.76, 0.72];
const DOOR_CLEARANCE: f64 = 0.9;
/// Clearance kept between an object and walls or doorways.
const WALL_GAP: f64 = 0.1;
/// Clearance between objects, wide enough for the agent to pass.
const OBJECT_GAP: f64 = 0.5;

/// Base colors for object categories. Every pair differs by at least 0.4 in
/// some channel; per-object jitter stays within +-0.05.
const PALETTE: [[f64; 3]; 26] = [
    [0.90, 0.10, 0.10],
    [0.10, 0.50, 0.90],
    [0.90, 0.90, 0.10],
    [0.10, 0.90, 0.10],
    [0.50, 0.10, 0.90],
    [0.10, 0.10, 0.10],
    [0.90, 0.50, 0.10],
    [0.10, 0.90, 0.90],
    [0.90, 0.10, 0.90],
    [0.10, 0.10, 0.50],
    [0.50, 0.90, 0.10],
    [0.90, 0.10, 0.50],
    [0.10, 0.50, 0.10],
    [0.50, 0.10, 0.10],
    [0.90, 0.90, 0.90],
    [0.10, 0.90, 0.50],
    [0.50, 0.50, 0.10],
    [0.10, 0.50, 0.50],
    [0.50, 0.10, 0.50],
    [0.90, 0.50, 0.90],
    [0.50, 0.90, 0.90],
    [0.90, 0.90, 0.50],
    [0.10, 0.10, 0.90],
    [0.50, 0.90, 0.50],
    [0.90, 0.50, 0.50],
    [0.50, 0.50, 0.90],
];

pub const MAX_CATEGORIES: usize = PALETTE.len();
pub const ALBEDO_JITTER: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub rooms: usize,
    pub room_size: f64,
    pub wall_height: f64,
    pub wall_thickness: f64,
    pub door_width: f64,
    pub objects_min: usize,
    pub objects_max: usize,
    pub categories: usize,
    pub lighting_presets: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            rooms: 2,
            room_size: 6.0,
            wall_height: 2.5,
            wall_thickness: 0.1,
            door_width: 2.0,
            objects_min: 12,
            objects_max: 13,
            categories: 6,
            lighting_presets: 2,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("scene: {m}")));
        if self.categories < 2 {
            return bad("at least 2 categories are required");
        }
        if self.categories > MAX_CATEGORIES {
            return bad(&format!("at most {MAX_CATEGORIES} categories are supported"));
        }
        if self.objects_min > self.objects_max {
            return bad("objects_min exceeds objects_max");
        }
        if self.objects_min < self.categories {
            return bad("objects_min must cover every category at least once");
        }
        if self.rooms == 0 {
            return bad("rooms must be positive");
        }
        if !(self.room_size > 2.0 * self.door_width) {
            return bad("room_size must exceed twice the door width");
        }
        if !(self.wall_height > 0.0 && self.wall_thickness > 0.0 && self.door_width > 0.0) {
            return bad("wall dimensions must be positive");
        }
        if !(1..=LIGHTING_TABLE.len()).contains(&self.lighting_presets) {
            return bad(&format!(
                "lighting_presets must be in 1..={}",
                LIGHTING_TABLE.len()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Box,
    Cylinder,
}

/// A furnishing. `position` is the center of its bounding box and `size` the
/// full extents; cylinders are vertical with diameter `size.x == size.y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub category_id: u32,
    pub shape: Shape,
    pub position: Vec3,
    pub size: Vec3,
    pub albedo: [f64; 3],
}

impl ObjectInstance {
    pub fn footprint(&self) -> Rect {
        Rect::new(
            [
                self.position.x - 0.5 * self.size.x,
                self.position.y - 0.5 * self.size.y,
            ],
            [
                self.position.x + 0.5 * self.size.x,
                self.position.y + 0.5 * self.size.y,
            ],
        )
    }

    pub fn solid(&self) -> Solid {
        let half = self.size * 0.5;
        match self.shape {
            Shape::Box => Solid::Box {
                min: self.position - half,
                max: self.position + half,
            },
            Shape::Cylinder => Solid::Cylinder {
                center: [self.position.x, self.position.y],
                radius: half.x,
                z_min: self.position.z - half.z,
                z_max: self.position.z + half.z,
            },
        }
    }
}

/// Axis-aligned wall of the given thickness centered on the segment
/// `start..end`, standing on the floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallSegment {
    pub start: [f64; 2],
    pub end: [f64; 2],
    pub thickness: f64,
    pub height: f64,
}

impl WallSegment {
    pub fn solid(&self) -> Solid {
        let h = 0.5 * self.thickness;
        let (x0, x1) = min_max(self.start[0], self.end[0]);
        let (y0, y1) = min_max(self.start[1], self.end[1]);
        Solid::Box {
            min: Vec3::new(x0 - h, y0 - h, 0.0),
            max: Vec3::new(x1 + h, y1 + h, self.height),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightingPreset {
    pub id: u32,
    pub ambient: f64,
    /// Unit vector pointing toward the light.
    pub sun_direction: Vec3,
    pub sun_intensity: f64,
}

const LIGHTING_TABLE: [(f64, [f64; 3], f64); 3] = [
    (0.35, [0.4, 0.3, 0.866], 0.75),
    (0.22, [-0.6, 0.35, 0.5], 0.55),
    (0.60, [0.1, -0.2, 1.0], 0.30),
];

pub fn lighting_presets(n: usize) -> Vec<LightingPreset> {
    LIGHTING_TABLE
        .iter()
        .take(n)
        .enumerate()
        .map(|(id, &(ambient, dir, sun_intensity))| LightingPreset {
            id: id as u32,
            ambient,
            sun_direction: Vec3::from(dir).normalized(),
            sun_intensity,
        })
        .collect()
}

/// Solid primitive used for collision and ray queries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Solid {
    Box {
        min: Vec3,
        max: Vec3,
    },
    Cylinder {
        center: [f64; 2],
        radius: f64,
        z_min: f64,
        z_max: f64,
    },
}

impl Solid {
    pub fn contains(&self, p: Vec3) -> bool {
        match *self {
            Solid::Box { min, max } => {
                (min.x..=max.x).contains(&p.x)
                    && (min.y..=max.y).contains(&p.y)
                    && (min.z..=max.z).contains(&p.z)
            }
            Solid::Cylinder {
                center,
                radius,
                z_min,
                z_max,
            } => {
                let dx = p.x - center[0];
                let dy = p.y - center[1];
                dx * dx + dy * dy <= radius * radius && (z_min..=z_max).contains(&p.z)
            }
        }
    }

    /// Euclidean distance from `p` to the solid; zero inside.
    pub fn distance(&self, p: Vec3) -> f64 {
        match *self {
            Solid::Box { min, max } => {
                let dx = (min.x - p.x).max(0.0).max(p.x - max.x);
                let dy = (min.y - p.y).max(0.0).max(p.y - max.y);
                let dz = (min.z - p.z).max(0.0).max(p.z - max.z);
                (dx * dx + dy * dy + dz * dz).sqrt()
            }
            Solid::Cylinder {
                center,
                radius,
                z_min,
                z_max,
            } => {
                let radial = ((p.x - center[0]).powi(2) + (p.y - center[1]).powi(2)).sqrt();
                let dr = (radial - radius).max(0.0);
                let dz = (z_min - p.z).max(0.0).max(p.z - z_max);
                (dr * dr + dz * dz).sqrt()
            }
        }
    }
}

/// Which scene element a solid (or ray hit) belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrimitiveId {
    Floor,
    Wall(usize),
    Object(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub seed: u64,
    pub bounds: Rect,
    pub walls: Vec<WallSegment>,
    pub objects: Vec<ObjectInstance>,
    pub lighting_presets: Vec<LightingPreset>,
}

impl Scene {
    /// All solids with their owning element, walls first.
    pub fn solids(&self) -> impl Iterator<Item = (PrimitiveId, Solid)> + '_ {
        let walls = self
            .walls
            .iter()
            .enumerate()
            .map(|(i, w)| (PrimitiveId::Wall(i), w.solid()));
        let objects = self
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| (PrimitiveId::Object(i), o.solid()));
        walls.chain(objects)
    }

    pub fn wall_albedo(&self) -> [f64; 3] {
        WALL_ALBEDO
    }

    /// Floor tiles alternate between two tones on a 1 m checkerboard.
    pub fn floor_albedo(&self, x: f64, y: f64) -> [f64; 3] {
        if (x.floor() as i64 + y.floor() as i64).rem_euclid(2) == 0 {
            [0.52, 0.40, 0.28]
        } else {
            [0.44, 0.33, 0.22]
        }
    }

    pub fn lighting(&self, id: u32) -> Option<&LightingPreset> {
        self.lighting_presets.iter().find(|l| l.id == id)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Scene> {
        Ok(serde_json::from_str(s)?)
    }
}

/// True iff a sphere at `position` with `radius` stays strictly inside the
/// bounds, does not dip below the floor, and touches no wall or object.
pub fn is_free(scene: &Scene, position: Vec3, radius: f64) -> bool {
    let b = &scene.bounds;
    let inside = position.x - radius > b.min[0]
        && position.x + radius < b.max[0]
        && position.y - radius > b.min[1]
        && position.y + radius < b.max[1]
        && position.z - radius >= 0.0;
    if !inside {
        return false;
    }
    scene
        .solids()
        .all(|(_, solid)| solid.distance(position) > radius)
}

#[derive(Debug, Clone, Copy)]
struct CategoryStyle {
    base: [f64; 3],
    box_prob: f64,
    half_extent: (f64, f64),
    height: (f64, f64),
}

fn category_style(c: usize) -> CategoryStyle {
    const HEIGHTS: [(f64, f64); 4] = [(1.0, 1.4), (1.3, 1.8), (1.6, 2.1), (1.1, 1.6)];
    const EXTENTS: [(f64, f64); 2] = [(0.3, 0.45), (0.35, 0.55)];
    const BOX_PROB: [f64; 3] = [0.85, 0.15, 0.5];
    CategoryStyle {
        base: PALETTE[c],
        box_prob: BOX_PROB[c % 3],
        half_extent: EXTENTS[c % 2],
        height: HEIGHTS[c % 4],
    }
}

/// Base color of a category's albedo family.
pub fn category_base_albedo(category: u32) -> [f64; 3] {
    PALETTE[category as usize]
}

struct Layout {
    bounds: Rect,
    walls: Vec<WallSegment>,
    /// Zones kept clear of furniture so doorways stay passable.
    keep_clear: Vec<Rect>,
    rooms: Vec<Rect>,
}

fn layout(config: &SceneConfig) -> Layout {
    let cols = (config.rooms as f64).sqrt().ceil() as usize;
    let rows = config.rooms.div_ceil(cols);
    let s = config.room_size;
    let width = cols as f64 * s;
    let depth = rows as f64 * s;
    let bounds = Rect::new([0.0, 0.0], [width, depth]);
    let wall = |start: [f64; 2], end: [f64; 2]| WallSegment {
        start,
        end,
        thickness: config.wall_thickness,
        height: config.wall_height,
    };
    let mut walls = vec![
        wall([0.0, 0.0], [width, 0.0]),
        wall([width, 0.0], [width, depth]),
        wall([width, depth], [0.0, depth]),
        wall([0.0, depth], [0.0, 0.0]),
    ];
    let mut keep_clear = Vec::new();
    let half_door = 0.5 * config.door_width;

    let cells_in_row = |r: usize| {
        if r + 1 == rows {
            config.rooms - cols * (rows - 1)
        } else {
            cols
        }
    };

    let mut rooms = Vec::with_capacity(config.rooms);
    // Vertical partitions inside each row, one door per partition.
    for r in 0..rows {
        let n = cells_in_row(r);
        let cell_w = width / n as f64;
        let (y0, y1) = (r as f64 * s, (r + 1) as f64 * s);
        rooms.extend((0..n).map(|c| Rect::new([c as f64 * cell_w, y0], [(c + 1) as f64 * cell_w, y1])));
        let door_y = 0.5 * (y0 + y1);
        for c in 1..n {
            let x = c as f64 * cell_w;
            walls.push(wall([x, y0], [x, door_y - half_door]));
            walls.push(wall([x, door_y + half_door], [x, y1]));
            keep_clear.push(Rect::new(
                [x - DOOR_CLEARANCE, door_y - half_door],
                [x + DOOR_CLEARANCE, door_y + half_door],
            ));
        }
    }

    // Horizontal partitions between rows, one door per cell of the lower row.
    for r in 0..rows.saturating_sub(1) {
        let y = (r + 1) as f64 * s;
        let n = cells_in_row(r);
        let cell_w = width / n as f64;
        let mut x = 0.0;
        for c in 0..n {
            let door_x = (c as f64 + 0.5) * cell_w;
            walls.push(wall([x, y], [door_x - half_door, y]));
            keep_clear.push(Rect::new(
                [door_x - half_door, y - DOOR_CLEARANCE],
                [door_x + half_door, y + DOOR_CLEARANCE],
            ));
            x = door_x + half_door;
        }
        walls.push(wall([x, y], [width, y]));
    }

    Layout {
        bounds,
        walls,
        keep_clear,
        rooms,
    }
}

/// Room and category of every object. Objects are dealt to rooms in turn;
/// the first `C` cover every category once, later ones fill categories their
/// room still lacks before falling back to uniform draws.
fn assign_objects(rng: &mut ChaCha8Rng, count: usize, rooms: usize, categories: usize) -> Vec<(usize, usize)> {
    let mut present = vec![vec![false; categories]; rooms];
    (0..count)
        .map(|k| {
            let room = k % rooms;
            let category = if k < categories {
                k
            } else if let Some(c) = (0..categories).find(|&c| !present[room][c]) {
                c
            } else {
                rng.random_range(0..categories)
            };
            present[room][category] = true;
            (room, category)
        })
        .collect()
}

fn min_max(a: f64, b: f64) -> (f64, f64) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

fn wall_footprint(w: &WallSegment) -> Rect {
    let h = 0.5 * w.thickness;
    let (x0, x1) = min_max(w.start[0], w.end[0]);
    let (y0, y1) = min_max(w.start[1], w.end[1]);
    Rect::new([x0 - h, y0 - h], [x1 + h, y1 + h])
}

/// Build a scene. Pure in `(seed, config)`.
pub fn generate_scene(seed: u64, config: &SceneConfig) -> Result<Scene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let Layout {
        bounds,
        walls,
        keep_clear,
        rooms,
    } = layout(config);

    let count = rng.random_range(config.objects_min..=config.objects_max);
    let assignment = assign_objects(&mut rng, count, rooms.len(), config.categories);

    let mut blocked: Vec<Rect> = walls.iter().map(wall_footprint).collect();
    blocked.extend(keep_clear);
    let mut objects = Vec::with_capacity(count);
    for (index, &(room, category)) in assignment.iter().enumerate() {
        let object = place_object(&mut rng, category, &rooms[room], &blocked, &objects)
            .ok_or(Error::Placement {
                seed,
                object: index,
                retries: PLACEMENT_RETRIES,
            })?;
        objects.push(object);
    }

    Ok(Scene {
        seed,
        bounds,
        walls,
        objects,
        lighting_presets: lighting_presets(config.lighting_presets),
    })
}

fn place_object(
    rng: &mut ChaCha8Rng,
    category: usize,
    room: &Rect,
    blocked: &[Rect],
    placed: &[ObjectInstance],
) -> Option<ObjectInstance> {
    let style = category_style(category);
    for _ in 0..PLACEMENT_RETRIES {
        let shape = if rng.random_bool(style.box_prob) {
            Shape::Box
        } else {
            Shape::Cylinder
        };
        let hx = rng.random_range(style.half_extent.0..=style.half_extent.1);
        let hy = match shape {
            Shape::Box => rng.random_range(style.half_extent.0..=style.half_extent.1),
            Shape::Cylinder => hx,
        };
        let height = rng.random_range(style.height.0..=style.height.1);
        let x = rng.random_range(room.min[0]..room.max[0]);
        let y = rng.random_range(room.min[1]..room.max[1]);
        let mut albedo = style.base;
        for ch in &mut albedo {
            *ch = (*ch + rng.random_range(-ALBEDO_JITTER..=ALBEDO_JITTER)).clamp(0.0, 1.0);
        }
        let candidate = ObjectInstance {
            category_id: category as u32,
            shape,
            position: Vec3::new(x, y, 0.5 * height),
            size: Vec3::new(2.0 * hx, 2.0 * hy, height),
            albedo,
        };
        let fp = candidate.footprint();
        let near_wall = fp.expanded(WALL_GAP);
        let near_object = fp.expanded(OBJECT_GAP);
        let inside = fp.min[0] > room.min[0]
            && fp.min[1] > room.min[1]
            && fp.max[0] < room.max[0]
            && fp.max[1] < room.max[1];
        if inside
            && !blocked.iter().any(|r| r.overlaps(&near_wall))
            && !placed.iter().any(|o| o.footprint().overlaps(&near_object))
        {
            return Some(candidate);
        }
    }
    None
}
