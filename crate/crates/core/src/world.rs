//! Grid world: four objects around the learner and their one-hot rendering.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const GRID: usize = 3;
pub const CELLS: usize = GRID * GRID;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    North,
    South,
    East,
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::North, Direction::South, Direction::East, Direction::West];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn word(self) -> &'static str {
        match self {
            Direction::North => "north",
            Direction::South => "south",
            Direction::East => "east",
            Direction::West => "west",
        }
    }

    /// (row, col) in the 3×3 grid; the learner sits at (1, 1).
    pub fn cell(self) -> (usize, usize) {
        match self {
            Direction::North => (0, 1),
            Direction::South => (2, 1),
            Direction::West => (1, 0),
            Direction::East => (1, 2),
        }
    }

    /// Flat row-major cell index.
    pub fn cell_index(self) -> usize {
        let (r, c) = self.cell();
        r * GRID + c
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.word())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.word() == s)
            .ok_or_else(|| Error::Config(format!("unknown direction {s:?}")))
    }
}

/// Index into a [`Lexicon`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObjectId(pub usize);

pub const DEFAULT_OBJECTS: [&str; 8] =
    ["apple", "avocado", "banana", "cherry", "orange", "cucumber", "strawberry", "cabbage"];

/// Ordered object names; `ObjectId(i)` names `names[i]` and one-hot channel `i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    names: Vec<String>,
}

impl Default for Lexicon {
    fn default() -> Self {
        Self { names: DEFAULT_OBJECTS.iter().map(|s| s.to_string()).collect() }
    }
}

impl Lexicon {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let names: Vec<String> = names.iter().map(|s| s.as_ref().to_string()).collect();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::Config(format!("object {n:?} listed twice")));
            }
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: ObjectId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id(&self, name: &str) -> Option<ObjectId> {
        self.names.iter().position(|n| n == name).map(ObjectId)
    }

    pub fn ids(&self) -> Vec<ObjectId> {
        (0..self.names.len()).map(ObjectId).collect()
    }
}

/// Which object sits in each direction, indexed by `Direction::index`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WorldState {
    placement: [ObjectId; 4],
    pub episode_seed: u64,
}

impl WorldState {
    pub fn new(placement: [ObjectId; 4], episode_seed: u64) -> Result<Self> {
        for i in 0..4 {
            if placement[..i].contains(&placement[i]) {
                return Err(Error::Contract(format!("object {} placed twice", placement[i].0)));
            }
        }
        Ok(Self { placement, episode_seed })
    }

    /// Builds from `(direction, object name)` pairs covering all four directions.
    pub fn from_names(lexicon: &Lexicon, pairs: &[(Direction, &str)]) -> Result<Self> {
        let mut slots: [Option<ObjectId>; 4] = [None; 4];
        for &(d, name) in pairs {
            let id = lexicon.id(name).ok_or_else(|| Error::Config(format!("unknown object {name:?}")))?;
            slots[d.index()] = Some(id);
        }
        let mut placement = [ObjectId(0); 4];
        for d in Direction::ALL {
            placement[d.index()] = slots[d.index()].ok_or_else(|| Error::Config(format!("no object on the {d}")))?;
        }
        Self::new(placement, 0)
    }

    pub fn object_at(&self, d: Direction) -> ObjectId {
        self.placement[d.index()]
    }

    pub fn direction_of(&self, obj: ObjectId) -> Option<Direction> {
        Direction::ALL.into_iter().find(|d| self.placement[d.index()] == obj)
    }

    pub fn placements(&self) -> impl Iterator<Item = (ObjectId, Direction)> + '_ {
        Direction::ALL.into_iter().map(|d| (self.placement[d.index()], d))
    }

    pub fn describe(&self, lexicon: &Lexicon) -> String {
        Direction::ALL
            .iter()
            .map(|&d| format!("{}={}", d, lexicon.name(self.object_at(d))))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Draws four distinct objects uniformly and assigns them to the directions.
pub fn sample_world<R: Rng + ?Sized>(objects: &[ObjectId], rng: &mut R) -> Result<WorldState> {
    if objects.len() < 4 {
        return Err(Error::Config(format!("need at least 4 objects, got {}", objects.len())));
    }
    let mut pool = objects.to_vec();
    let (chosen, _) = pool.partial_shuffle(rng, 4);
    let placement = [chosen[0], chosen[1], chosen[2], chosen[3]];
    let episode_seed = rng.random();
    WorldState::new(placement, episode_seed)
}

/// One-hot object channels on the 3×3 grid, shape `[n_objects, 3, 3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    grid: Tensor,
}

impl Scene {
    /// Wraps an explicit `[channels, 3, 3]` grid.
    pub fn from_grid(grid: Tensor) -> Result<Self> {
        match grid.shape() {
            [c, GRID, GRID] if *c > 0 => Ok(Self { grid }),
            other => Err(Error::Contract(format!("scene grid must be [channels, 3, 3], got {other:?}"))),
        }
    }

    pub fn grid(&self) -> &Tensor {
        &self.grid
    }

    pub fn channels(&self) -> usize {
        self.grid.shape()[0]
    }

    /// Per-channel totals over the grid (which objects are present).
    pub fn object_counts(&self) -> Vec<f64> {
        self.grid.data().chunks(CELLS).map(|c| c.iter().sum()).collect()
    }
}

pub fn render_scene(world: &WorldState, n_objects: usize) -> Scene {
    let mut data = vec![0.0; n_objects * CELLS];
    for (obj, d) in world.placements() {
        assert!(obj.0 < n_objects, "object {} outside a {n_objects}-channel scene", obj.0);
        data[obj.0 * CELLS + d.cell_index()] = 1.0;
    }
    Scene { grid: Tensor::from_vec(&[n_objects, GRID, GRID], data).expect("valid grid shape") }
}
