//! Indoor occupancy grid, AP/RIS placement and dark-area geometry.

use std::f64::consts::PI;

use rand::{Rng, RngCore};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

/// Room layout: free/obstacle cells, user presence distribution and the
/// positions of the AP and every RIS.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    cell_size: f64,
    presence: Vec<f64>,
    obstacles: Vec<bool>,
    ap: Cell,
    ris: Vec<Cell>,
}

impl OccupancyGrid {
    /// `weights` and `obstacles` are row-major with `y` as the row index.
    /// Weights are renormalized over free cells.
    pub fn new(
        width: usize,
        height: usize,
        cell_size: f64,
        weights: Vec<f64>,
        obstacles: Vec<bool>,
        ap: Cell,
        ris: Vec<Cell>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidGrid("grid must be at least 1x1".into()));
        }
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(Error::InvalidGrid(format!("cell size must be > 0, got {cell_size}")));
        }
        let n = width * height;
        if weights.len() != n || obstacles.len() != n {
            return Err(Error::InvalidGrid(format!(
                "expected {n} weights and obstacle flags, got {} and {}",
                weights.len(),
                obstacles.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidGrid("presence weights must be finite and >= 0".into()));
        }
        let mut grid = Self {
            width,
            height,
            cell_size,
            presence: weights,
            obstacles,
            ap,
            ris,
        };
        for (name, cell) in std::iter::once(("AP", grid.ap)).chain(grid.ris.iter().map(|c| ("RIS", *c))) {
            if !grid.contains(cell) {
                return Err(Error::InvalidGrid(format!("{name} at {cell:?} is outside the grid")));
            }
            if grid.is_obstacle(cell) {
                return Err(Error::InvalidGrid(format!("{name} at {cell:?} is on an obstacle")));
            }
        }
        grid.normalize()?;
        Ok(grid)
    }

    fn normalize(&mut self) -> Result<()> {
        for (w, &blocked) in self.presence.iter_mut().zip(&self.obstacles) {
            if blocked {
                *w = 0.0;
            }
        }
        let total: f64 = self.presence.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidGrid("no presence mass on free cells".into()));
        }
        for w in &mut self.presence {
            *w /= total;
        }
        Ok(())
    }

    /// 7 x 5 office of 1 m cells with a three-cell wall in the middle, the AP
    /// on the left wall and two RISs on the top and bottom walls. Presence is
    /// concentrated behind the wall.
    pub fn office() -> Self {
        let (w, h) = (7, 5);
        let mut obstacles = vec![false; w * h];
        for y in 1..=3 {
            obstacles[y * w + 3] = true;
        }
        let ap = Cell::new(0, 2);
        let ris = vec![Cell::new(3, 4), Cell::new(3, 0)];
        let weights = office_weights(w, h, 5.0, 2.0, &[ap, ris[0], ris[1]]);
        Self::new(w, h, 1.0, weights, obstacles, ap, ris).expect("valid built-in office")
    }

    /// 12 x 12 variant of the office used for obstacle-robustness sweeps.
    pub fn office_large() -> Self {
        let (w, h) = (12, 12);
        let mut obstacles = vec![false; w * h];
        for y in 3..=8 {
            obstacles[y * w + 5] = true;
        }
        let ap = Cell::new(0, 6);
        let ris = vec![Cell::new(5, 11), Cell::new(5, 0)];
        let weights = office_weights(w, h, 8.5, 5.5, &[ap, ris[0], ris[1]]);
        Self::new(w, h, 1.0, weights, obstacles, ap, ris).expect("valid built-in office")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn ap(&self) -> Cell {
        self.ap
    }

    pub fn ris(&self) -> &[Cell] {
        &self.ris
    }

    pub fn presence_map(&self) -> &[f64] {
        &self.presence
    }

    pub fn obstacle_map(&self) -> &[bool] {
        &self.obstacles
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.x < self.width && cell.y < self.height
    }

    pub fn index(&self, cell: Cell) -> usize {
        cell.y * self.width + cell.x
    }

    pub fn cell(&self, index: usize) -> Cell {
        Cell::new(index % self.width, index / self.width)
    }

    pub fn is_obstacle(&self, cell: Cell) -> bool {
        self.obstacles[self.index(cell)]
    }

    pub fn presence(&self, cell: Cell) -> f64 {
        self.presence[self.index(cell)]
    }

    /// Cell center in meters.
    pub fn center(&self, cell: Cell) -> (f64, f64) {
        (
            (cell.x as f64 + 0.5) * self.cell_size,
            (cell.y as f64 + 0.5) * self.cell_size,
        )
    }

    /// Cell containing the point, clamped to the grid. The flag is true when
    /// clamping was needed.
    pub fn locate(&self, x: f64, y: f64) -> (Cell, bool) {
        let fx = (x / self.cell_size).floor();
        let fy = (y / self.cell_size).floor();
        let cx = fx.clamp(0.0, (self.width - 1) as f64) as usize;
        let cy = fy.clamp(0.0, (self.height - 1) as f64) as usize;
        let clamped = fx < 0.0 || fy < 0.0 || fx > (self.width - 1) as f64 || fy > (self.height - 1) as f64;
        (Cell::new(cx, cy), clamped)
    }

    /// Nearest free cell (breadth-first over 8-neighborhoods).
    pub fn nearest_free(&self, cell: Cell) -> Option<Cell> {
        let mut seen = vec![false; self.width * self.height];
        let mut queue = std::collections::VecDeque::from([cell]);
        seen[self.index(cell)] = true;
        while let Some(c) = queue.pop_front() {
            if !self.is_obstacle(c) {
                return Some(c);
            }
            for n in self.neighborhood(c) {
                let i = self.index(n);
                if !seen[i] {
                    seen[i] = true;
                    queue.push_back(n);
                }
            }
        }
        None
    }

    /// The 3x3 block around `cell` (including it) clipped to the grid, in
    /// row-major order.
    pub fn neighborhood(&self, cell: Cell) -> impl Iterator<Item = Cell> + '_ {
        (-1i64..=1).flat_map(move |dy| {
            (-1i64..=1).filter_map(move |dx| {
                let x = cell.x as i64 + dx;
                let y = cell.y as i64 + dy;
                (x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height)
                    .then(|| Cell::new(x as usize, y as usize))
            })
        })
    }

    /// Mounting axis of an array at `cell`: along the wall it sits on.
    pub fn wall_axis(&self, cell: Cell) -> f64 {
        if cell.x == 0 || cell.x + 1 == self.width {
            PI / 2.0
        } else {
            0.0
        }
    }

    /// Direction (radians, room frame) from the center of `from` to `to`.
    pub fn bearing(&self, from: Cell, to: Cell) -> f64 {
        let (x0, y0) = self.center(from);
        let (x1, y1) = self.center(to);
        (y1 - y0).atan2(x1 - x0)
    }

    pub fn distance(&self, from: Cell, to: Cell) -> f64 {
        let (x0, y0) = self.center(from);
        let (x1, y1) = self.center(to);
        (x1 - x0).hypot(y1 - y0)
    }

    /// Copy of the grid with `count` extra `size x size` obstacle blocks whose
    /// top-left corners are drawn uniformly among placements that keep the AP
    /// and RIS cells free.
    pub fn with_random_blocks(&self, count: usize, size: usize, rng: &mut dyn RngCore) -> Result<Self> {
        if size == 0 || size > self.width || size > self.height {
            return Err(Error::InvalidGrid(format!(
                "a {size}x{size} block does not fit a {}x{} grid",
                self.width, self.height
            )));
        }
        let mut grid = self.clone();
        let fixed: Vec<Cell> = std::iter::once(self.ap).chain(self.ris.iter().copied()).collect();
        for _ in 0..count {
            let placements: Vec<Cell> = (0..=self.height - size)
                .flat_map(|y| (0..=self.width - size).map(move |x| Cell::new(x, y)))
                .filter(|c| {
                    !fixed.iter().any(|f| {
                        f.x >= c.x && f.x < c.x + size && f.y >= c.y && f.y < c.y + size
                    })
                })
                .collect();
            if placements.is_empty() {
                return Err(Error::InvalidGrid("no room for another obstacle block".into()));
            }
            let corner = placements[rng.random_range(0..placements.len())];
            for y in corner.y..corner.y + size {
                for x in corner.x..corner.x + size {
                    let i = grid.index(Cell::new(x, y));
                    grid.obstacles[i] = true;
                }
            }
        }
        // Restore the original weights so renormalization sees the raw mass.
        grid.presence = self.presence.clone();
        grid.normalize()?;
        Ok(grid)
    }

    /// True when the straight segment between the two cell centers passes
    /// through the interior of an obstacle cell other than the endpoints.
    pub fn segment_blocked(&self, from: Cell, to: Cell) -> bool {
        traverse(from, to, |c| c != to && self.is_obstacle(c))
    }
}

fn office_weights(w: usize, h: usize, cx: f64, cy: f64, zero: &[Cell]) -> Vec<f64> {
    let mut weights = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            weights.push(1.0 + 4.0 * (-d2 / 2.0).exp());
        }
    }
    for c in zero {
        weights[c.y * w + c.x] = 0.0;
    }
    weights
}

/// Walk the cells crossed by the segment between two cell centers, starting
/// after `from`, until `visit` returns true or `to` is reached.
///
/// Crossings are compared in exact integer arithmetic; a segment through a
/// grid corner steps diagonally and does not touch the two side cells.
fn traverse(from: Cell, to: Cell, mut visit: impl FnMut(Cell) -> bool) -> bool {
    let dx = to.x as i64 - from.x as i64;
    let dy = to.y as i64 - from.y as i64;
    let (adx, ady) = (dx.abs(), dy.abs());
    let (sx, sy) = (dx.signum(), dy.signum());
    let (mut x, mut y) = (from.x as i64, from.y as i64);
    let (mut kx, mut ky) = (0i64, 0i64);
    while kx < adx || ky < ady {
        let step_x;
        let step_y;
        if kx < adx && ky < ady {
            // Next x boundary at t = (2kx+1)/(2|dx|), next y at (2ky+1)/(2|dy|).
            let tx = (2 * kx + 1) * ady;
            let ty = (2 * ky + 1) * adx;
            step_x = tx <= ty;
            step_y = ty <= tx;
        } else {
            step_x = kx < adx;
            step_y = ky < ady;
        }
        if step_x {
            x += sx;
            kx += 1;
        }
        if step_y {
            y += sy;
            ky += 1;
        }
        if visit(Cell::new(x as usize, y as usize)) {
            return true;
        }
    }
    false
}

/// Free cells whose straight line to the AP crosses an obstacle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DarkAreaMap {
    width: usize,
    dark: Vec<bool>,
}

impl DarkAreaMap {
    pub fn is_dark(&self, cell: Cell) -> bool {
        self.dark[cell.y * self.width + cell.x]
    }

    pub fn cells(&self) -> &[bool] {
        &self.dark
    }

    pub fn count(&self) -> usize {
        self.dark.iter().filter(|d| **d).count()
    }
}

pub fn compute_dark_areas(grid: &OccupancyGrid) -> DarkAreaMap {
    let dark = (0..grid.width * grid.height)
        .map(|i| {
            let c = grid.cell(i);
            !grid.is_obstacle(c) && grid.segment_blocked(grid.ap, c)
        })
        .collect();
    DarkAreaMap {
        width: grid.width,
        dark,
    }
}
