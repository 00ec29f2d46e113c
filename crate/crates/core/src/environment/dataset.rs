//! Trajectory CSV (`traj_id,t,x,y`) generation and ingestion.

use std::path::Path;

use rand::RngCore;

use super::grid::{Cell, OccupancyGrid};
use super::{mobility_step, sample_presence};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

pub const TRAJECTORY_HEADER: [&str; 4] = ["traj_id", "t", "x", "y"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub traj_id: u64,
    pub t: u64,
    /// meters
    pub x: f64,
    pub y: f64,
}

/// Rows sorted by `(traj_id, t)` with contiguous slots per trajectory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryTable {
    pub rows: Vec<TrajectoryRow>,
}

impl TrajectoryTable {
    /// Rows grouped by trajectory, in file order.
    pub fn trajectories(&self) -> Vec<&[TrajectoryRow]> {
        self.rows
            .chunk_by(|a, b| a.traj_id == b.traj_id)
            .collect()
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(TRAJECTORY_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.traj_id.to_string(),
                r.t.to_string(),
                format!("{:?}", r.x),
                format!("{:?}", r.y),
            ])?;
        }
        w.into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

/// Random-walk trajectories starting from the presence distribution; cells
/// are reported by their centers.
pub fn generate_trajectories(
    grid: &OccupancyGrid,
    n_trajectories: usize,
    length: usize,
    rng: &mut dyn RngCore,
) -> Result<TrajectoryTable> {
    if n_trajectories == 0 || length == 0 {
        return Err(Error::InvalidConfig(
            "trajectory count and length must be >= 1".into(),
        ));
    }
    let mut rows = Vec::with_capacity(n_trajectories * length);
    for id in 0..n_trajectories {
        let mut cell = sample_presence(grid, rng);
        for t in 0..length {
            if t > 0 {
                cell = mobility_step(grid, cell, rng);
            }
            let (x, y) = grid.center(cell);
            rows.push(TrajectoryRow {
                traj_id: id as u64,
                t: t as u64,
                x,
                y,
            });
        }
    }
    Ok(TrajectoryTable { rows })
}

pub fn write_trajectories(table: &TrajectoryTable, path: &Path) -> Result<()> {
    write_atomic(path, &table.to_csv()?)
}

/// Generate and write in one go.
pub fn generate_dataset(
    grid: &OccupancyGrid,
    n_trajectories: usize,
    length: usize,
    rng: &mut dyn RngCore,
    path: &Path,
) -> Result<TrajectoryTable> {
    let table = generate_trajectories(grid, n_trajectories, length, rng)?;
    write_trajectories(&table, path)?;
    Ok(table)
}

/// Parse and validate a trajectory CSV. Errors name the offending file line.
pub fn read_trajectories(path: &Path) -> Result<TrajectoryTable> {
    let bytes = std::fs::read(path)?;
    parse_trajectories(&bytes)
}

pub fn parse_trajectories(bytes: &[u8]) -> Result<TrajectoryTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(bytes);
    let header = reader
        .headers()
        .map_err(|e| Error::Dataset(format!("unreadable header: {e}")))?
        .clone();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(Error::Dataset("empty file".into()));
    }
    if header.iter().map(str::trim).ne(TRAJECTORY_HEADER) {
        return Err(Error::Dataset(format!(
            "line 1: expected header `traj_id,t,x,y`, got `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows: Vec<TrajectoryRow> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Dataset(format!("malformed row: {e}")))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 4 {
            return Err(Error::Dataset(format!(
                "line {line}: expected 4 fields, got {}",
                record.len()
            )));
        }
        let field = |i: usize| record[i].trim();
        let int = |i: usize| {
            field(i).parse::<u64>().map_err(|_| {
                Error::Dataset(format!(
                    "line {line}: `{}` must be a nonnegative integer, got `{}`",
                    TRAJECTORY_HEADER[i],
                    field(i)
                ))
            })
        };
        let float = |i: usize| {
            field(i)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    Error::Dataset(format!(
                        "line {line}: `{}` must be a finite number, got `{}`",
                        TRAJECTORY_HEADER[i],
                        field(i)
                    ))
                })
        };
        let row = TrajectoryRow {
            traj_id: int(0)?,
            t: int(1)?,
            x: float(2)?,
            y: float(3)?,
        };
        let expected_t = match rows.last() {
            Some(prev) if prev.traj_id == row.traj_id => prev.t + 1,
            Some(prev) if prev.traj_id > row.traj_id => {
                return Err(Error::Dataset(format!(
                    "line {line}: trajectory ids must be sorted ({} after {})",
                    row.traj_id, prev.traj_id
                )))
            }
            _ => 0,
        };
        if row.t != expected_t {
            return Err(Error::Dataset(format!(
                "line {line}: expected t = {expected_t} in trajectory {}, got {}",
                row.traj_id, row.t
            )));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Dataset("no data rows".into()));
    }
    Ok(TrajectoryTable { rows })
}

/// Trajectories mapped onto grid cells.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestedDataset {
    pub table: TrajectoryTable,
    pub trajectories: Vec<Vec<Cell>>,
    /// Points outside the grid that were clamped to the border.
    pub clamped: usize,
    /// Points that landed on an obstacle and were moved to the nearest free
    /// cell.
    pub relocated: usize,
}

pub fn ingest_dataset(path: &Path, grid: &OccupancyGrid) -> Result<IngestedDataset> {
    let table = read_trajectories(path)?;
    map_to_grid(table, grid)
}

pub fn map_to_grid(table: TrajectoryTable, grid: &OccupancyGrid) -> Result<IngestedDataset> {
    let mut clamped = 0;
    let mut relocated = 0;
    let mut trajectories = Vec::new();
    for traj in table.trajectories() {
        let mut cells = Vec::with_capacity(traj.len());
        for r in traj {
            let (mut cell, was_clamped) = grid.locate(r.x, r.y);
            clamped += was_clamped as usize;
            if grid.is_obstacle(cell) {
                cell = grid
                    .nearest_free(cell)
                    .ok_or_else(|| Error::InvalidGrid("grid has no free cell".into()))?;
                relocated += 1;
            }
            cells.push(cell);
        }
        trajectories.push(cells);
    }
    Ok(IngestedDataset {
        table,
        trajectories,
        clamped,
        relocated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("rislab-dataset-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn single_row_dataset() {
        let grid = OccupancyGrid::office();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = generate_trajectories(&grid, 1, 1, &mut rng).unwrap();
        assert_eq!(t.rows.len(), 1);
        let (cell, _) = grid.locate(t.rows[0].x, t.rows[0].y);
        assert!(grid.presence(cell) > 0.0);
    }

    #[test]
    fn omni_sized_dataset_shape() {
        let grid = OccupancyGrid::office();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = generate_trajectories(&grid, 1600, 56, &mut rng).unwrap();
        assert_eq!(t.rows.len(), 1600 * 56);
        assert_eq!(t.trajectories().len(), 1600);
    }

    #[test]
    fn fixed_seed_is_byte_identical_and_round_trips() {
        let grid = OccupancyGrid::office();
        let (a, b) = (tmp("a.csv"), tmp("b.csv"));
        let ta = generate_dataset(&grid, 5, 7, &mut ChaCha8Rng::seed_from_u64(3), &a).unwrap();
        generate_dataset(&grid, 5, 7, &mut ChaCha8Rng::seed_from_u64(3), &b).unwrap();
        let bytes = std::fs::read(&a).unwrap();
        assert_eq!(bytes, std::fs::read(&b).unwrap());
        assert!(bytes.starts_with(b"traj_id,t,x,y\n"));
        let ingested = ingest_dataset(&a, &grid).unwrap();
        assert_eq!(ingested.table, ta);
        assert_eq!(ingested.clamped, 0);
        assert_eq!(ingested.relocated, 0);
    }

    #[test]
    fn non_numeric_coordinate_names_the_row() {
        let err = parse_trajectories(b"traj_id,t,x,y\n0,0,1.5,2.5\n0,1,abc,2.5\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("`x`"), "{msg}");
    }

    #[test]
    fn schema_violations() {
        assert!(parse_trajectories(b"").is_err());
        assert!(parse_trajectories(b"traj_id,t,x,y\n").is_err());
        assert!(parse_trajectories(b"id,t,x,y\n0,0,1,1\n").is_err());
        assert!(parse_trajectories(b"traj_id,t,x,y\n0,1,1,1\n").is_err());
        assert!(parse_trajectories(b"traj_id,t,x,y\n1,0,1,1\n0,0,1,1\n").is_err());
        assert!(parse_trajectories(b"traj_id,t,x,y\n0,0,1\n").is_err());
    }

    #[test]
    fn out_of_grid_points_are_clamped_and_counted() {
        let grid = OccupancyGrid::office();
        let table = parse_trajectories(b"traj_id,t,x,y\n0,0,-3.0,2.5\n0,1,1.5,2.5\n0,2,9.0,7.0\n").unwrap();
        let ds = map_to_grid(table, &grid).unwrap();
        assert_eq!(ds.clamped, 2);
        assert_eq!(
            ds.trajectories,
            vec![vec![Cell::new(0, 2), Cell::new(1, 2), Cell::new(6, 4)]]
        );
    }

    #[test]
    fn points_on_obstacles_move_to_free_cells() {
        let grid = OccupancyGrid::office();
        let table = parse_trajectories(b"traj_id,t,x,y\n0,0,3.5,2.5\n").unwrap();
        let ds = map_to_grid(table, &grid).unwrap();
        assert_eq!(ds.relocated, 1);
        assert!(!grid.is_obstacle(ds.trajectories[0][0]));
    }
}
