//! Output files, each written to a temporary sibling and renamed into place.

use crate::error::{HarnessError, Result};
use crate::run::RunRecord;
use crate::sweep::SweepRow;
use serde::Serialize;
use std::fs;
use std::io::Write;
use std::path::Path;
use vortexmf_core::euler_pde::VorticityGrid;

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io(format!("{}: {e}", path.display()))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let name = path.file_name().ok_or_else(|| io_err(path, "not a file path"))?.to_string_lossy();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_vec_pretty(value).map_err(|e| io_err(path, e))?;
    write_atomic(path, &text)
}

fn csv_bytes<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| io_err(path, e))?;
    }
    w.into_inner().map_err(|e| io_err(path, e))
}

#[derive(Serialize)]
struct EnergyRow {
    t: f64,
    realization: usize,
    #[serde(rename = "F_avg")]
    f_avg: f64,
    term_pp: f64,
    term_px: f64,
    term_xx: f64,
    hs: Option<f64>,
    close_pairs: Option<usize>,
    min_dist: f64,
}

/// `energy.csv`: one row per (N run, realization, sample).
pub fn write_energy_csv(path: &Path, record: &RunRecord) -> Result<()> {
    let rows = record.runs.iter().flat_map(|run| {
        run.realizations.iter().flat_map(|r| {
            r.series.iter().map(move |e| EnergyRow {
                t: e.t,
                realization: r.index,
                f_avg: e.f_avg,
                term_pp: e.term_pp,
                term_px: e.term_px,
                term_xx: e.term_xx,
                hs: e.hs_distance,
                close_pairs: e.close_pairs,
                min_dist: e.min_dist,
            })
        })
    });
    let bytes = csv_bytes(path, rows)?;
    write_atomic(path, &bytes)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let bytes = csv_bytes(path, rows)?;
    write_atomic(path, &bytes)
}

/// Little-endian `n: u64, half_len: f64, t: f64`, then `n²` values in row-major order.
pub fn grid_frame_bytes(grid: &VorticityGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * grid.values.len());
    out.extend_from_slice(&(grid.n as u64).to_le_bytes());
    out.extend_from_slice(&grid.half_len.to_le_bytes());
    out.extend_from_slice(&grid.time.to_le_bytes());
    for v in &grid.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_grid_frame(bytes: &[u8]) -> Option<VorticityGrid> {
    let word = |i: usize| -> Option<[u8; 8]> { bytes.get(8 * i..8 * i + 8)?.try_into().ok() };
    let n = u64::from_le_bytes(word(0)?) as usize;
    let half_len = f64::from_le_bytes(word(1)?);
    let time = f64::from_le_bytes(word(2)?);
    let values = (0..n * n).map(|i| word(3 + i).map(f64::from_le_bytes)).collect::<Option<Vec<_>>>()?;
    let mut grid = VorticityGrid::new(half_len, n, values).ok()?;
    grid.time = time;
    Some(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_leaves_no_temporaries() {
        let dir = std::env::temp_dir().join(format!("vortexmf-io-{}", std::process::id()));
        let path = dir.join("a.json");
        write_json(&path, &vec![1, 2, 3]).unwrap();
        write_json(&path, &vec![4]).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap().split_whitespace().collect::<String>(), "[4]");
        assert_eq!(fs::read_dir(&dir).unwrap().count(), 1);
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn grid_frames_round_trip() {
        let mut g = VorticityGrid::from_fn(2.0, 8, |p| p.x * 0.5 + p.y).unwrap();
        g.time = 0.375;
        let back = read_grid_frame(&grid_frame_bytes(&g)).unwrap();
        assert_eq!(back.values, g.values);
        assert_eq!((back.half_len, back.time, back.n), (g.half_len, g.time, g.n));
    }
}
