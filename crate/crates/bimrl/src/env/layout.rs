//! Deterministic layout sampling for both families. The sampling order is
//! fixed, so a `(family, params, seed)` triple always yields the same grid.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Cell, Color, Direction, DoorState, EnvError, EnvSpec, Grid, ObjectKind, TaskSpec};

fn pick_color(rng: &mut ChaCha8Rng) -> Color {
    Color::ALL[rng.random_range(0..Color::ALL.len())]
}

fn pick_dir(rng: &mut ChaCha8Rng) -> Direction {
    [
        Direction::Up,
        Direction::Right,
        Direction::Down,
        Direction::Left,
    ][rng.random_range(0..4)]
}

/// Sample a task layout. Identical inputs produce identical layouts
/// cell-by-cell.
pub fn generate_task(spec: EnvSpec, seed: u64) -> Result<TaskSpec, EnvError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (grid, start_pos, start_dir) = match spec {
        EnvSpec::MultiRoom {
            rooms,
            max_room_size,
        } => {
            if rooms < 2 {
                return Err(EnvError::InvalidParams {
                    family: "MultiRoom",
                    field: "rooms",
                    msg: format!("need at least 2 rooms, got {rooms}"),
                });
            }
            if max_room_size < 4 {
                return Err(EnvError::InvalidParams {
                    family: "MultiRoom",
                    field: "max_room_size",
                    msg: format!("need room size of at least 4, got {max_room_size}"),
                });
            }
            multi_room(rooms as usize, max_room_size as usize, &mut rng)
        }
        EnvSpec::KeyCorridor { room_size, rows } => {
            if room_size < 3 {
                return Err(EnvError::InvalidParams {
                    family: "KeyCorridor",
                    field: "room_size",
                    msg: format!("need room size of at least 3, got {room_size}"),
                });
            }
            if rows < 1 {
                return Err(EnvError::InvalidParams {
                    family: "KeyCorridor",
                    field: "rows",
                    msg: format!("need at least 1 row of rooms, got {rows}"),
                });
            }
            key_corridor(room_size as usize, rows as usize, &mut rng)
        }
    };
    Ok(TaskSpec {
        spec,
        seed,
        grid,
        start_pos,
        start_dir,
        horizon: spec.horizon(),
    })
}

/// A horizontal chain of rooms with closed doors on the shared walls, the
/// goal in the last room, and the start pose in the first.
///
/// Room `i` spans `x ∈ [x0_i, x0_i+s_i−1]` with `x0_{i+1} = x0_i + s_i − 1`
/// (adjacent rooms share a wall column) and is vertically centered.
fn multi_room(
    rooms: usize,
    max_room_size: usize,
    rng: &mut ChaCha8Rng,
) -> (Grid, (usize, usize), Direction) {
    let sizes: Vec<usize> = (0..rooms).map(|_| rng.random_range(4..=max_room_size)).collect();
    let height = *sizes.iter().max().unwrap();
    let width = sizes.iter().sum::<usize>() - (rooms - 1);
    let mut grid = Grid::filled(width, height, Cell::WALL);

    let mut x0s = Vec::with_capacity(rooms);
    let mut tops = Vec::with_capacity(rooms);
    let mut x0 = 0usize;
    for &s in &sizes {
        x0s.push(x0);
        tops.push((height - s) / 2);
        x0 += s - 1;
    }
    for i in 0..rooms {
        let (s, x0, top) = (sizes[i], x0s[i], tops[i]);
        for y in top + 1..top + s - 1 {
            for x in x0 + 1..x0 + s - 1 {
                grid.set(x, y, Cell::EMPTY);
            }
        }
    }
    // doors on shared walls, within the vertical overlap of both interiors
    for i in 0..rooms - 1 {
        let xw = x0s[i + 1];
        let lo = tops[i].max(tops[i + 1]) + 1;
        let hi = (tops[i] + sizes[i] - 1).min(tops[i + 1] + sizes[i + 1] - 1) - 1;
        let y = rng.random_range(lo..=hi);
        let color = pick_color(rng);
        grid.set(
            xw,
            y,
            Cell {
                kind: ObjectKind::Door,
                color,
                state: DoorState::Closed,
            },
        );
    }
    // goal in the last room
    let last = rooms - 1;
    let gx = rng.random_range(x0s[last] + 1..=x0s[last] + sizes[last] - 2);
    let gy = rng.random_range(tops[last] + 1..=tops[last] + sizes[last] - 2);
    grid.set(
        gx,
        gy,
        Cell {
            kind: ObjectKind::Goal,
            color: Color::Green,
            state: DoorState::Open,
        },
    );
    // start pose in the first room
    let sx = rng.random_range(x0s[0] + 1..=x0s[0] + sizes[0] - 2);
    let sy = rng.random_range(tops[0] + 1..=tops[0] + sizes[0] - 2);
    let dir = pick_dir(rng);
    (grid, (sx, sy), dir)
}

/// A one-cell-wide vertical corridor with `rows` rooms on each side. One left
/// room holds a key; one right room is locked (same color as the key) and
/// holds the ball the agent must pick up. All other doors are closed but
/// unlocked.
fn key_corridor(
    room_size: usize,
    rows: usize,
    rng: &mut ChaCha8Rng,
) -> (Grid, (usize, usize), Direction) {
    let s = room_size;
    let width = 2 * s + 1;
    let height = rows * (s - 1) + 1;
    let mut grid = Grid::filled(width, height, Cell::WALL);

    // carve room interiors and corridor
    for r in 0..rows {
        let top = r * (s - 1);
        for y in top + 1..top + s - 1 {
            for x in 1..s - 1 {
                grid.set(x, y, Cell::EMPTY);
            }
            for x in s + 2..2 * s {
                grid.set(x, y, Cell::EMPTY);
            }
        }
    }
    for y in 1..height - 1 {
        grid.set(s, y, Cell::EMPTY);
    }

    let key_color = pick_color(rng);
    let locked_room = rng.random_range(0..rows);
    let key_room = rng.random_range(0..rows);

    let door_row = |r: usize| {
        let lo = r * (s - 1) + 1;
        let hi = r * (s - 1) + s - 2;
        (lo + hi) / 2
    };
    // left rooms open into the corridor through closed doors
    for r in 0..rows {
        let color = pick_color(rng);
        grid.set(
            s - 1,
            door_row(r),
            Cell {
                kind: ObjectKind::Door,
                color,
                state: DoorState::Closed,
            },
        );
    }
    // right rooms: one locked in the key color, the rest closed
    for r in 0..rows {
        let (color, state) = if r == locked_room {
            (key_color, DoorState::Locked)
        } else {
            (pick_color(rng), DoorState::Closed)
        };
        grid.set(
            s + 1,
            door_row(r),
            Cell {
                kind: ObjectKind::Door,
                color,
                state,
            },
        );
    }
    // key in its left room
    let key_top = key_room * (s - 1);
    let kx = rng.random_range(1..=s - 2);
    let ky = rng.random_range(key_top + 1..=key_top + s - 2);
    grid.set(
        kx,
        ky,
        Cell {
            kind: ObjectKind::Key,
            color: key_color,
            state: DoorState::Open,
        },
    );
    // ball in the locked right room
    let ball_color = pick_color(rng);
    let ball_top = locked_room * (s - 1);
    let bx = rng.random_range(s + 2..=2 * s - 1);
    let by = rng.random_range(ball_top + 1..=ball_top + s - 2);
    grid.set(
        bx,
        by,
        Cell {
            kind: ObjectKind::Ball,
            color: ball_color,
            state: DoorState::Open,
        },
    );
    // start in the corridor
    let sy = rng.random_range(1..=height - 2);
    let dir = pick_dir(rng);
    (grid, (s, sy), dir)
}
