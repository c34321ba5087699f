//! Discrete navigation to a fixed target on a walled 7×7 grid.
//!
//! Layout 0 is the training level; layout 1 moves the walls, the grid analog
//! of an unseen game level.

use crate::envs::{check_discrete, Env, EnvParams, Step};
use crate::error::Result;
use crate::math::rng::Rng;
use crate::space::{Action, ActionSpace};

pub const SIZE: usize = 7;
pub const HORIZON: usize = 50;
pub const STEP_COST: f64 = 0.01;
pub const TARGET: (usize, usize) = (5, 5);

/// Wall maps, row by row; `#` is a wall.
pub const LAYOUTS: [[&str; SIZE]; 2] = [
    [
        ".......",
        ".......",
        "..###..",
        "....#..",
        "....#..",
        ".......",
        ".......",
    ],
    [
        ".......",
        ".#.....",
        ".#..#..",
        ".#..#..",
        "....###",
        ".#.....",
        ".......",
    ],
];

/// Moves as `(dx, dy)`: up, down, left, right.
const MOVES: [(isize, isize); 4] = [(0, -1), (0, 1), (-1, 0), (1, 0)];

#[derive(Clone, Debug)]
pub struct GridChase {
    params: EnvParams,
    rng: Rng,
    pub pos: (usize, usize),
    pub t: usize,
}

impl GridChase {
    pub fn new(params: EnvParams, rng: Rng) -> Self {
        GridChase {
            params,
            rng,
            pos: (0, 0),
            t: 0,
        }
    }

    pub fn is_wall(&self, x: isize, y: isize) -> bool {
        if x < 0 || y < 0 || x >= SIZE as isize || y >= SIZE as isize {
            return true;
        }
        LAYOUTS[self.params.layout][y as usize].as_bytes()[x as usize] == b'#'
    }

    pub fn set_position(&mut self, pos: (usize, usize)) {
        self.pos = pos;
        self.t = 0;
    }

    pub fn observation(&self) -> Vec<f64> {
        let scale = (SIZE - 1) as f64;
        let (x, y) = (self.pos.0 as f64, self.pos.1 as f64);
        let mut obs = vec![
            x / scale,
            y / scale,
            (TARGET.0 as f64 - x) / scale,
            (TARGET.1 as f64 - y) / scale,
        ];
        for (dx, dy) in MOVES {
            let blocked = self.is_wall(self.pos.0 as isize + dx, self.pos.1 as isize + dy);
            obs.push(if blocked { 1.0 } else { 0.0 });
        }
        obs
    }
}

impl Env for GridChase {
    fn id(&self) -> &'static str {
        "gridchase"
    }

    fn obs_dim(&self) -> usize {
        8
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(4)
    }

    fn params(&self) -> &EnvParams {
        &self.params
    }

    /// Starts in a random free cell of the top-left 3×3 block.
    fn reset(&mut self) -> Vec<f64> {
        loop {
            let (x, y) = (self.rng.below(3), self.rng.below(3));
            if !self.is_wall(x as isize, y as isize) {
                self.pos = (x, y);
                break;
            }
        }
        self.t = 0;
        self.observation()
    }

    fn step(&mut self, action: &Action) -> Result<Step> {
        let (dx, dy) = MOVES[check_discrete(action, 4)?];
        let (nx, ny) = (self.pos.0 as isize + dx, self.pos.1 as isize + dy);
        if !self.is_wall(nx, ny) {
            self.pos = (nx as usize, ny as usize);
        }
        self.t += 1;
        if self.pos == TARGET {
            return Ok(Step {
                obs: self.observation(),
                reward: 1.0,
                done: true,
            });
        }
        Ok(Step {
            obs: self.observation(),
            reward: -STEP_COST,
            done: self.t >= HORIZON,
        })
    }
}
