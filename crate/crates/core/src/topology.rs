//! Node placement, random-waypoint mobility, and the range-based neighbor graph.

use alloc::vec::Vec;

use rand::Rng;

use crate::{Error, NodeId, Result};

/// Bounded rectangular surface the nodes move on, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arena {
    width: f64,
    height: f64,
}

impl Arena {
    pub fn new(width: f64, height: f64) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::invalid("arena width", "must be positive and finite"));
        }
        if !(height > 0.0 && height.is_finite()) {
            return Err(Error::invalid("arena height", "must be positive and finite"));
        }
        Ok(Self { width, height })
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn diagonal(&self) -> f64 {
        libm::hypot(self.width, self.height)
    }

    pub fn contains(&self, p: Position) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }

    pub fn random_position<R: Rng + ?Sized>(&self, rng: &mut R) -> Position {
        Position {
            x: rng.random_range(0.0..=self.width),
            y: rng.random_range(0.0..=self.height),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        libm::hypot(self.x - other.x, self.y - other.y)
    }
}

/// Speed range and pause for the random-waypoint model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilityConfig {
    /// m/s
    pub speed_min: f64,
    /// m/s
    pub speed_max: f64,
    /// Rounds a node rests after reaching a waypoint.
    pub pause_rounds: u32,
}

impl MobilityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.speed_min >= 0.0 && self.speed_min <= self.speed_max && self.speed_max.is_finite())
        {
            return Err(Error::invalid(
                "mobility speeds",
                "need 0 <= speed_min <= speed_max < inf",
            ));
        }
        Ok(())
    }

    fn draw_speed<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.speed_min == self.speed_max {
            self.speed_min
        } else {
            rng.random_range(self.speed_min..=self.speed_max)
        }
    }
}

impl Default for MobilityConfig {
    fn default() -> Self {
        Self {
            speed_min: 5.0,
            speed_max: 15.0,
            pause_rounds: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaypointState {
    pub target: Position,
    /// m/s
    pub speed: f64,
    pub pause_remaining: u32,
}

/// A node's kinematic state: where it is and where it is heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mover {
    pub position: Position,
    pub waypoint: WaypointState,
}

impl Mover {
    /// Uniform position, waypoint, and speed.
    pub fn random<R: Rng + ?Sized>(arena: &Arena, mobility: &MobilityConfig, rng: &mut R) -> Self {
        let position = arena.random_position(rng);
        let waypoint = WaypointState {
            target: arena.random_position(rng),
            speed: mobility.draw_speed(rng),
            pause_remaining: 0,
        };
        Self { position, waypoint }
    }

    /// A node parked at `position` with no motion planned.
    pub fn stationary(position: Position) -> Self {
        Self {
            position,
            waypoint: WaypointState {
                target: position,
                speed: 0.0,
                pause_remaining: u32::MAX,
            },
        }
    }
}

/// Advances every mover by `dt` seconds.
///
/// A paused node only counts its pause down. A node sitting on its waypoint
/// draws a new one and stays put for this call. Otherwise it moves
/// `speed * dt` toward the waypoint, stopping on it; on arrival it draws the
/// next waypoint and speed and starts its pause.
pub fn step_mobility<R: Rng + ?Sized>(
    movers: &mut [Mover],
    arena: &Arena,
    mobility: &MobilityConfig,
    dt: f64,
    rng: &mut R,
) {
    for m in movers.iter_mut() {
        let wp = &mut m.waypoint;
        if wp.pause_remaining > 0 {
            if wp.pause_remaining != u32::MAX {
                wp.pause_remaining -= 1;
            }
            continue;
        }
        let remaining = m.position.distance(&wp.target);
        if remaining == 0.0 {
            wp.target = arena.random_position(rng);
            wp.speed = mobility.draw_speed(rng);
            continue;
        }
        let travel = wp.speed * dt;
        if travel >= remaining {
            m.position = wp.target;
            wp.target = arena.random_position(rng);
            wp.speed = mobility.draw_speed(rng);
            wp.pause_remaining = mobility.pause_rounds;
        } else if travel > 0.0 {
            let f = travel / remaining;
            let next = Position {
                x: m.position.x + (wp.target.x - m.position.x) * f,
                y: m.position.y + (wp.target.y - m.position.y) * f,
            };
            // Both endpoints are inside the arena; clamp away rounding.
            m.position = Position {
                x: next.x.clamp(0.0, arena.width),
                y: next.y.clamp(0.0, arena.height),
            };
        }
    }
}

/// Undirected neighbor graph: `j` is a neighbor of `i` iff they are within range.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NeighborGraph {
    adjacency: Vec<Vec<NodeId>>,
}

impl NeighborGraph {
    pub fn num_nodes(&self) -> usize {
        self.adjacency.len()
    }

    /// Neighbors of `node`, ascending.
    pub fn neighbors(&self, node: NodeId) -> &[NodeId] {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: NodeId) -> usize {
        self.adjacency[node].len()
    }

    pub fn contains_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.adjacency[a].binary_search(&b).is_ok()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }
}

/// Connects every pair of nodes at distance `<= d_max`.
pub fn build_graph(positions: &[Position], d_max: f64) -> NeighborGraph {
    let mut adjacency = alloc::vec![Vec::new(); positions.len()];
    for i in 0..positions.len() {
        for j in (i + 1)..positions.len() {
            if positions[i].distance(&positions[j]) <= d_max {
                adjacency[i].push(j);
                adjacency[j].push(i);
            }
        }
    }
    NeighborGraph { adjacency }
}

/// Like [`build_graph`] with a per-node range; a link needs both ends in range
/// of each other, i.e. `d <= min(range_i, range_j)`.
pub fn build_graph_with_ranges(positions: &[Position], ranges: &[f64]) -> NeighborGraph {
    assert_eq!(positions.len(), ranges.len());
    let mut adjacency = alloc::vec![Vec::new(); positions.len()];
    for i in 0..positions.len() {
        for j in (i + 1)..positions.len() {
            if positions[i].distance(&positions[j]) <= ranges[i].min(ranges[j]) {
                adjacency[i].push(j);
                adjacency[j].push(i);
            }
        }
    }
    NeighborGraph { adjacency }
}
