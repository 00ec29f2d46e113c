//! Plain-text room description.
//!
//! ```text
//! # comment
//! version = 1
//! width = 7
//! height = 5
//! cell_size = 1.0
//! ap = 0 2
//! ris = 3 4
//! ris = 3 0
//! obstacles:
//! .......
//! ...#...
//! ...#...
//! ...#...
//! .......
//! presence:
//! 1 1 1 1 1 1 1
//! ...
//! ```
//!
//! Mask and presence rows run from the top row (largest `y`) down. `#` marks
//! an obstacle, `.` a free cell. The presence block is optional (uniform
//! when absent) and is renormalized over free cells.

use std::path::Path;

use super::grid::{Cell, OccupancyGrid};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

pub const SCENARIO_VERSION: u32 = 1;

fn err(line: usize, msg: impl Into<String>) -> Error {
    Error::Scenario {
        line,
        msg: msg.into(),
    }
}

fn parse_cell(line: usize, value: &str) -> Result<Cell> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    match parts.as_slice() {
        [x, y] => {
            let x = x.parse().map_err(|_| err(line, format!("bad x coordinate `{x}`")))?;
            let y = y.parse().map_err(|_| err(line, format!("bad y coordinate `{y}`")))?;
            Ok(Cell::new(x, y))
        }
        _ => Err(err(line, format!("expected `x y`, got `{value}`"))),
    }
}

pub fn parse_scenario(text: &str) -> Result<OccupancyGrid> {
    let mut version = None;
    let mut width: Option<usize> = None;
    let mut height: Option<usize> = None;
    let mut cell_size = None;
    let mut ap = None;
    let mut ris = Vec::new();
    let mut mask: Option<Vec<bool>> = None;
    let mut presence: Option<Vec<f64>> = None;

    let lines: Vec<&str> = text.lines().collect();
    let mut i = 0;
    while i < lines.len() {
        let lineno = i + 1;
        let line = lines[i].split('#').next().unwrap_or("").trim();
        // A comment marker would swallow mask rows, so mask blocks are read
        // raw below.
        i += 1;
        if line.is_empty() {
            continue;
        }
        if line == "obstacles:" || line == "presence:" {
            let (w, h) = match (width, height) {
                (Some(w), Some(h)) => (w, h),
                _ => return Err(err(lineno, "width and height must precede grid blocks")),
            };
            let is_mask = line == "obstacles:";
            if (is_mask && mask.is_some()) || (!is_mask && presence.is_some()) {
                return Err(err(lineno, format!("duplicate `{line}` block")));
            }
            let mut values = vec![Default::default(); w * h];
            let mut weights = vec![0.0; w * h];
            for row in 0..h {
                let Some(raw) = lines.get(i) else {
                    return Err(err(lines.len(), format!("`{line}` block needs {h} rows")));
                };
                let rowno = i + 1;
                i += 1;
                let y = h - 1 - row;
                if is_mask {
                    let cells: Vec<char> = raw.trim().chars().collect();
                    if cells.len() != w {
                        return Err(err(rowno, format!("expected {w} mask cells, got {}", cells.len())));
                    }
                    for (x, c) in cells.into_iter().enumerate() {
                        values[y * w + x] = match c {
                            '#' => true,
                            '.' => false,
                            other => return Err(err(rowno, format!("unknown mask symbol `{other}`"))),
                        };
                    }
                } else {
                    let nums: Vec<&str> = raw.split_whitespace().collect();
                    if nums.len() != w {
                        return Err(err(rowno, format!("expected {w} weights, got {}", nums.len())));
                    }
                    for (x, s) in nums.into_iter().enumerate() {
                        weights[y * w + x] = s
                            .parse::<f64>()
                            .ok()
                            .filter(|v| v.is_finite() && *v >= 0.0)
                            .ok_or_else(|| err(rowno, format!("bad weight `{s}`")))?;
                    }
                }
            }
            if is_mask {
                mask = Some(values);
            } else {
                presence = Some(weights);
            }
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(err(lineno, format!("expected `key = value`, got `{line}`")));
        };
        let (key, value) = (key.trim(), value.trim());
        let dup = |set: bool| {
            if set {
                Err(err(lineno, format!("duplicate key `{key}`")))
            } else {
                Ok(())
            }
        };
        match key {
            "version" => {
                dup(version.is_some())?;
                let v: u32 = value.parse().map_err(|_| err(lineno, "version must be an integer"))?;
                if v != SCENARIO_VERSION {
                    return Err(err(lineno, format!("unsupported version {v}")));
                }
                version = Some(v);
            }
            "width" | "height" => {
                let n: usize = value
                    .parse()
                    .ok()
                    .filter(|n| *n > 0)
                    .ok_or_else(|| err(lineno, format!("{key} must be a positive integer")))?;
                let slot = if key == "width" { &mut width } else { &mut height };
                dup(slot.is_some())?;
                *slot = Some(n);
            }
            "cell_size" => {
                dup(cell_size.is_some())?;
                cell_size = Some(
                    value
                        .parse::<f64>()
                        .map_err(|_| err(lineno, format!("bad cell_size `{value}`")))?,
                );
            }
            "ap" => {
                dup(ap.is_some())?;
                ap = Some(parse_cell(lineno, value)?);
            }
            "ris" => ris.push(parse_cell(lineno, value)?),
            other => return Err(err(lineno, format!("unknown key `{other}`"))),
        }
    }

    let end = lines.len();
    if version.is_none() {
        return Err(err(end, "missing `version`"));
    }
    let (w, h) = width.zip(height).ok_or_else(|| err(end, "missing width/height"))?;
    let ap = ap.ok_or_else(|| err(end, "missing `ap`"))?;
    let obstacles = mask.unwrap_or_else(|| vec![false; w * h]);
    let weights = presence.unwrap_or_else(|| vec![1.0; w * h]);
    OccupancyGrid::new(w, h, cell_size.unwrap_or(1.0), weights, obstacles, ap, ris)
        .map_err(|e| err(end, e.to_string()))
}

pub fn render_scenario(grid: &OccupancyGrid) -> String {
    let (w, h) = (grid.width(), grid.height());
    let mut out = String::new();
    out.push_str(&format!("version = {SCENARIO_VERSION}\n"));
    out.push_str(&format!("width = {w}\nheight = {h}\n"));
    out.push_str(&format!("cell_size = {:?}\n", grid.cell_size()));
    out.push_str(&format!("ap = {} {}\n", grid.ap().x, grid.ap().y));
    for r in grid.ris() {
        out.push_str(&format!("ris = {} {}\n", r.x, r.y));
    }
    out.push_str("obstacles:\n");
    for y in (0..h).rev() {
        for x in 0..w {
            out.push(if grid.is_obstacle(Cell::new(x, y)) { '#' } else { '.' });
        }
        out.push('\n');
    }
    out.push_str("presence:\n");
    for y in (0..h).rev() {
        let row: Vec<String> = (0..w)
            .map(|x| format!("{:?}", grid.presence(Cell::new(x, y))))
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_scenario(path: &Path) -> Result<OccupancyGrid> {
    parse_scenario(&std::fs::read_to_string(path)?)
}

pub fn write_scenario(grid: &OccupancyGrid, path: &Path) -> Result<()> {
    write_atomic(path, render_scenario(grid).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn office_round_trips() {
        let g = OccupancyGrid::office();
        let text = render_scenario(&g);
        let back = parse_scenario(&text).unwrap();
        assert_eq!(back.obstacle_map(), g.obstacle_map());
        assert_eq!(back.ap(), g.ap());
        assert_eq!(back.ris(), g.ris());
        for (a, b) in back.presence_map().iter().zip(g.presence_map()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn minimal_file_with_comments() {
        let text = "# room\nversion = 1\nwidth = 3\nheight = 2\nap = 0 0 # corner\nobstacles:\n..#\n...\n";
        let g = parse_scenario(text).unwrap();
        assert!(g.is_obstacle(Cell::new(2, 1)));
        assert!(!g.is_obstacle(Cell::new(2, 0)));
        assert!((g.presence(Cell::new(0, 0)) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse_scenario("version = 1\nwidht = 3\n").unwrap_err();
        assert!(matches!(e, Error::Scenario { line: 2, .. }), "{e}");
        let e = parse_scenario("version = 1\nwidth = 2\nheight = 1\nap = 0 0\nobstacles:\n.x\n").unwrap_err();
        assert!(matches!(e, Error::Scenario { line: 6, .. }), "{e}");
        let e = parse_scenario("version = 2\n").unwrap_err();
        assert!(matches!(e, Error::Scenario { line: 1, .. }), "{e}");
    }
}
