//! Procedurally generated gridworld families (MultiRoom, KeyCorridor) with
//! an egocentric observation interface and a four-episode task protocol.
//!
//! A *task* is a fixed layout sampled from a family; the agent plays four
//! episodes on the same layout from the same start pose. Observations are
//! 7×7×3 egocentric crops (object-kind, color, and state channels, each
//! normalized to `[0,1]`); rewards are sparse — a single success reward of
//! `1 − 0.9·(t/H)` when the family goal is achieved at (1-based) step `t`.

mod layout;
pub mod solve;

pub use layout::generate_task;

use ndarray::{Array1, Array3};
use thiserror::Error;

/// Side length of the egocentric view.
pub const VIEW_SIZE: usize = 7;
/// Channels of the egocentric view.
pub const VIEW_CHANNELS: usize = 3;
/// Flattened observation length.
pub const OBS_LEN: usize = VIEW_SIZE * VIEW_SIZE * VIEW_CHANNELS;
/// Number of discrete actions.
pub const NUM_ACTIONS: usize = 7;
/// Episodes per task.
pub const EPISODES_PER_TASK: usize = 4;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid {field} for {family}: {msg}")]
    InvalidParams {
        family: &'static str,
        field: &'static str,
        msg: String,
    },
    #[error("episode index {0} outside the {EPISODES_PER_TASK}-episode task protocol")]
    EpisodeIndex(usize),
    #[error("step called after episode end; call reset first")]
    EpisodeOver,
    #[error("environment stepped before reset")]
    NotReset,
    #[error("unrecognized environment name `{0}` (expected e.g. MultiRoom-N2-S4 or KeyCorridorS3R1)")]
    Name(String),
    #[error("action index {0} out of range 0..{NUM_ACTIONS}")]
    Action(usize),
}

/// What occupies a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObjectKind {
    Empty,
    Wall,
    Door,
    Key,
    Ball,
    Goal,
}

impl ObjectKind {
    pub const MAX_ID: u8 = 5;

    pub fn id(self) -> u8 {
        match self {
            ObjectKind::Empty => 0,
            ObjectKind::Wall => 1,
            ObjectKind::Door => 2,
            ObjectKind::Key => 3,
            ObjectKind::Ball => 4,
            ObjectKind::Goal => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Color {
    Red,
    Green,
    Blue,
    Purple,
    Yellow,
    Grey,
}

impl Color {
    pub const MAX_ID: u8 = 5;
    pub const ALL: [Color; 6] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Purple,
        Color::Yellow,
        Color::Grey,
    ];

    pub fn id(self) -> u8 {
        match self {
            Color::Red => 0,
            Color::Green => 1,
            Color::Blue => 2,
            Color::Purple => 3,
            Color::Yellow => 4,
            Color::Grey => 5,
        }
    }
}

/// Door state; non-door cells carry `Open` (encodes to 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DoorState {
    Open,
    Closed,
    Locked,
}

impl DoorState {
    pub const MAX_ID: u8 = 2;

    pub fn id(self) -> u8 {
        match self {
            DoorState::Open => 0,
            DoorState::Closed => 1,
            DoorState::Locked => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub kind: ObjectKind,
    pub color: Color,
    pub state: DoorState,
}

impl Cell {
    pub const EMPTY: Cell = Cell {
        kind: ObjectKind::Empty,
        color: Color::Red,
        state: DoorState::Open,
    };
    pub const WALL: Cell = Cell {
        kind: ObjectKind::Wall,
        color: Color::Grey,
        state: DoorState::Open,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Up,
    Right,
    Down,
    Left,
}

impl Direction {
    /// Unit step in (x, y) with x rightward and y downward.
    pub fn delta(self) -> (i64, i64) {
        match self {
            Direction::Up => (0, -1),
            Direction::Right => (1, 0),
            Direction::Down => (0, 1),
            Direction::Left => (-1, 0),
        }
    }

    pub fn clockwise(self) -> Direction {
        match self {
            Direction::Up => Direction::Right,
            Direction::Right => Direction::Down,
            Direction::Down => Direction::Left,
            Direction::Left => Direction::Up,
        }
    }

    pub fn counterclockwise(self) -> Direction {
        self.clockwise().clockwise().clockwise()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    TurnLeft,
    TurnRight,
    Forward,
    Pickup,
    Drop,
    Toggle,
    Done,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::TurnLeft,
        Action::TurnRight,
        Action::Forward,
        Action::Pickup,
        Action::Drop,
        Action::Toggle,
        Action::Done,
    ];

    pub fn index(self) -> usize {
        match self {
            Action::TurnLeft => 0,
            Action::TurnRight => 1,
            Action::Forward => 2,
            Action::Pickup => 3,
            Action::Drop => 4,
            Action::Toggle => 5,
            Action::Done => 6,
        }
    }

    pub fn from_index(i: usize) -> Result<Action, EnvError> {
        Self::ALL.get(i).copied().ok_or(EnvError::Action(i))
    }
}

/// Rectangular grid of cells; `(x, y)` with `x` in `0..width`, `y` in `0..height`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    cells: Vec<Cell>,
}

impl Grid {
    pub fn filled(width: usize, height: usize, fill: Cell) -> Self {
        Self {
            width,
            height,
            cells: vec![fill; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> Cell {
        self.cells[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: Cell) {
        self.cells[y * self.width + x] = c;
    }

    fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    /// Cell lookup with wall padding outside the grid.
    pub fn get_padded(&self, x: i64, y: i64) -> Cell {
        if self.in_bounds(x, y) {
            self.get(x as usize, y as usize)
        } else {
            Cell::WALL
        }
    }

    pub fn iter_cells(&self) -> impl Iterator<Item = ((usize, usize), Cell)> + '_ {
        (0..self.height)
            .flat_map(move |y| (0..self.width).map(move |x| (x, y)))
            .map(move |(x, y)| ((x, y), self.get(x, y)))
    }
}

/// Environment family with its parameters, parseable from names such as
/// `MultiRoom-N2-S4` and `KeyCorridorS3R1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvSpec {
    MultiRoom { rooms: u32, max_room_size: u32 },
    KeyCorridor { room_size: u32, rows: u32 },
}

impl EnvSpec {
    pub fn family_name(&self) -> &'static str {
        match self {
            EnvSpec::MultiRoom { .. } => "MultiRoom",
            EnvSpec::KeyCorridor { .. } => "KeyCorridor",
        }
    }

    /// Episode horizon for this family.
    pub fn horizon(&self) -> usize {
        match *self {
            EnvSpec::MultiRoom { rooms, .. } => 20 * rooms as usize,
            EnvSpec::KeyCorridor { room_size, rows } => 30 * room_size as usize * rows as usize,
        }
    }

    /// Task horizon across all four episodes.
    pub fn task_horizon(&self) -> usize {
        EPISODES_PER_TASK * self.horizon()
    }

    pub fn parse(name: &str) -> Result<EnvSpec, EnvError> {
        let bad = || EnvError::Name(name.to_string());
        if let Some(rest) = name.strip_prefix("MultiRoom-N") {
            let (rooms, max_room_size) = match rest.split_once("-S") {
                Some((n, s)) => (
                    n.parse::<u32>().map_err(|_| bad())?,
                    s.parse::<u32>().map_err(|_| bad())?,
                ),
                None => (rest.parse::<u32>().map_err(|_| bad())?, 10),
            };
            return Ok(EnvSpec::MultiRoom {
                rooms,
                max_room_size,
            });
        }
        if let Some(rest) = name.strip_prefix("KeyCorridorS") {
            let (s, r) = rest.split_once('R').ok_or_else(bad)?;
            return Ok(EnvSpec::KeyCorridor {
                room_size: s.parse::<u32>().map_err(|_| bad())?,
                rows: r.parse::<u32>().map_err(|_| bad())?,
            });
        }
        Err(bad())
    }
}

impl std::fmt::Display for EnvSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            EnvSpec::MultiRoom {
                rooms,
                max_room_size,
            } => write!(f, "MultiRoom-N{rooms}-S{max_room_size}"),
            EnvSpec::KeyCorridor { room_size, rows } => {
                write!(f, "KeyCorridorS{room_size}R{rows}")
            }
        }
    }
}

/// A sampled task: layout plus start pose, fixed across its four episodes.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub spec: EnvSpec,
    pub seed: u64,
    pub grid: Grid,
    pub start_pos: (usize, usize),
    pub start_dir: Direction,
    /// Per-episode horizon H.
    pub horizon: usize,
}

impl TaskSpec {
    pub fn task_horizon(&self) -> usize {
        EPISODES_PER_TASK * self.horizon
    }
}

/// Egocentric 7×7×3 observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub grid: Array3<f64>,
}

impl Observation {
    pub fn flatten(&self) -> Array1<f64> {
        Array1::from_iter(self.grid.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: usize,
    pub reward: f64,
    pub episode_done: bool,
    pub task_done: bool,
}

/// One playable instance of a task.
#[derive(Debug, Clone)]
pub struct GridEnv {
    task: TaskSpec,
    grid: Grid,
    pos: (usize, usize),
    dir: Direction,
    carrying: Option<(ObjectKind, Color)>,
    t: usize,
    episode_index: usize,
    episode_done: bool,
    started: bool,
}

impl GridEnv {
    pub fn new(task: TaskSpec) -> Self {
        let grid = task.grid.clone();
        let pos = task.start_pos;
        let dir = task.start_dir;
        Self {
            task,
            grid,
            pos,
            dir,
            carrying: None,
            t: 0,
            episode_index: 0,
            episode_done: true,
            started: false,
        }
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn horizon(&self) -> usize {
        self.task.horizon
    }

    pub fn episode_index(&self) -> usize {
        self.episode_index
    }

    pub fn steps_taken(&self) -> usize {
        self.t
    }

    /// Start an episode of the task. The layout and start pose are identical
    /// for all four episodes.
    pub fn reset(&mut self, episode_index: usize) -> Result<Observation, EnvError> {
        if episode_index >= EPISODES_PER_TASK {
            return Err(EnvError::EpisodeIndex(episode_index));
        }
        self.grid = self.task.grid.clone();
        self.pos = self.task.start_pos;
        self.dir = self.task.start_dir;
        self.carrying = None;
        self.t = 0;
        self.episode_index = episode_index;
        self.episode_done = false;
        self.started = true;
        Ok(self.observe())
    }

    fn front(&self) -> (i64, i64) {
        let (dx, dy) = self.dir.delta();
        (self.pos.0 as i64 + dx, self.pos.1 as i64 + dy)
    }

    pub fn step(&mut self, action: Action) -> Result<Transition, EnvError> {
        if !self.started {
            return Err(EnvError::NotReset);
        }
        if self.episode_done {
            return Err(EnvError::EpisodeOver);
        }
        self.t += 1;
        let mut reward = 0.0;
        let mut success = false;

        match action {
            Action::TurnLeft => self.dir = self.dir.counterclockwise(),
            Action::TurnRight => self.dir = self.dir.clockwise(),
            Action::Forward => {
                let (fx, fy) = self.front();
                let target = self.grid.get_padded(fx, fy);
                let walkable = matches!(target.kind, ObjectKind::Empty | ObjectKind::Goal)
                    || (target.kind == ObjectKind::Door && target.state == DoorState::Open);
                if walkable {
                    self.pos = (fx as usize, fy as usize);
                    if target.kind == ObjectKind::Goal
                        && matches!(self.task.spec, EnvSpec::MultiRoom { .. })
                    {
                        success = true;
                    }
                }
            }
            Action::Pickup => {
                let (fx, fy) = self.front();
                let target = self.grid.get_padded(fx, fy);
                if self.carrying.is_none()
                    && matches!(target.kind, ObjectKind::Key | ObjectKind::Ball)
                {
                    self.carrying = Some((target.kind, target.color));
                    self.grid.set(fx as usize, fy as usize, Cell::EMPTY);
                    if target.kind == ObjectKind::Ball
                        && matches!(self.task.spec, EnvSpec::KeyCorridor { .. })
                    {
                        success = true;
                    }
                }
            }
            Action::Drop => {
                let (fx, fy) = self.front();
                if let Some((kind, color)) = self.carrying {
                    if self.grid.in_bounds(fx, fy)
                        && self.grid.get(fx as usize, fy as usize).kind == ObjectKind::Empty
                    {
                        self.grid.set(
                            fx as usize,
                            fy as usize,
                            Cell {
                                kind,
                                color,
                                state: DoorState::Open,
                            },
                        );
                        self.carrying = None;
                    }
                }
            }
            Action::Toggle => {
                let (fx, fy) = self.front();
                let target = self.grid.get_padded(fx, fy);
                if target.kind == ObjectKind::Door {
                    let next = match target.state {
                        DoorState::Open => Some(DoorState::Closed),
                        DoorState::Closed => Some(DoorState::Open),
                        DoorState::Locked => match self.carrying {
                            Some((ObjectKind::Key, c)) if c == target.color => {
                                Some(DoorState::Open)
                            }
                            _ => None,
                        },
                    };
                    if let Some(state) = next {
                        self.grid.set(
                            fx as usize,
                            fy as usize,
                            Cell {
                                state,
                                ..target
                            },
                        );
                    }
                }
            }
            Action::Done => {}
        }

        if success {
            reward = 1.0 - 0.9 * (self.t as f64 / self.task.horizon as f64);
        }
        let episode_done = success || self.t >= self.task.horizon;
        self.episode_done = episode_done;
        let task_done = episode_done && self.episode_index + 1 == EPISODES_PER_TASK;

        Ok(Transition {
            obs: self.observe(),
            action: action.index(),
            reward,
            episode_done,
            task_done,
        })
    }

    /// Egocentric view: the agent sits at view cell (3, 6) facing "up" in
    /// view coordinates; its own cell shows the carried object, if any.
    /// Cells outside the grid read as walls.
    pub fn observe(&self) -> Observation {
        let mut out = Array3::zeros((VIEW_SIZE, VIEW_SIZE, VIEW_CHANNELS));
        let (dx, dy) = self.dir.delta();
        let (rx, ry) = self.dir.clockwise().delta();
        for vy in 0..VIEW_SIZE {
            for vx in 0..VIEW_SIZE {
                let fwd = (VIEW_SIZE - 1 - vy) as i64;
                let right = vx as i64 - (VIEW_SIZE / 2) as i64;
                let wx = self.pos.0 as i64 + fwd * dx + right * rx;
                let wy = self.pos.1 as i64 + fwd * dy + right * ry;
                let cell = if (wx, wy) == (self.pos.0 as i64, self.pos.1 as i64) {
                    match self.carrying {
                        Some((kind, color)) => Cell {
                            kind,
                            color,
                            state: DoorState::Open,
                        },
                        None => Cell::EMPTY,
                    }
                } else {
                    self.grid.get_padded(wx, wy)
                };
                out[(vy, vx, 0)] = cell.kind.id() as f64 / ObjectKind::MAX_ID as f64;
                out[(vy, vx, 1)] = cell.color.id() as f64 / Color::MAX_ID as f64;
                out[(vy, vx, 2)] = cell.state.id() as f64 / DoorState::MAX_ID as f64;
            }
        }
        Observation { grid: out }
    }

    /// ASCII rendering of the full grid for debugging.
    pub fn ascii_dump(&self) -> String {
        let mut s = String::new();
        for y in 0..self.grid.height {
            for x in 0..self.grid.width {
                if (x, y) == self.pos {
                    s.push(match self.dir {
                        Direction::Up => '^',
                        Direction::Right => '>',
                        Direction::Down => 'v',
                        Direction::Left => '<',
                    });
                    continue;
                }
                let c = self.grid.get(x, y);
                s.push(match (c.kind, c.state) {
                    (ObjectKind::Empty, _) => '.',
                    (ObjectKind::Wall, _) => '#',
                    (ObjectKind::Door, DoorState::Open) => '/',
                    (ObjectKind::Door, DoorState::Closed) => '+',
                    (ObjectKind::Door, DoorState::Locked) => 'L',
                    (ObjectKind::Key, _) => 'k',
                    (ObjectKind::Ball, _) => 'o',
                    (ObjectKind::Goal, _) => 'G',
                });
            }
            s.push('\n');
        }
        s
    }

    /// Snapshot of mutable episode state, used by search helpers in tests.
    pub fn state_key(&self) -> (Vec<u8>, (usize, usize), Direction, Option<(ObjectKind, Color)>) {
        let cells: Vec<u8> = self
            .grid
            .iter_cells()
            .map(|(_, c)| c.kind.id() * 32 + c.color.id() * 4 + c.state.id())
            .collect();
        (cells, self.pos, self.dir, self.carrying)
    }
}
