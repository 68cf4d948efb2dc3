//! CSV tables and the binary field dump.
//!
//! Dump layout, all little-endian:
//!
//! ```text
//! magic   8 bytes  "POPFIELD"
//! version u32      1
//! rank    u32
//! dims    rank x u64, slowest axis first
//! spacing rank x f64
//! values  prod(dims) x f64, row-major
//! ```
//!
//! A state is stored with axes `[age, size, x_1, .., x_d]`; a trajectory
//! prepends a time axis whose spacing is the snapshot interval.

use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::forward::Trajectory;
use crate::geometry::CoverageReport;
use crate::grid::{Grid, StateField};

pub const MAGIC: &[u8; 8] = b"POPFIELD";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Dump {
    pub dims: Vec<usize>,
    pub spacings: Vec<f64>,
    pub values: Vec<f64>,
}

impl Dump {
    pub fn state(field: &StateField, grid: &Grid) -> Self {
        let mut dims = vec![grid.na, grid.ns];
        dims.extend(&grid.nx);
        let mut spacings = vec![grid.h, grid.h];
        spacings.extend(&grid.dx);
        Self {
            dims,
            spacings,
            values: field.data.clone(),
        }
    }

    /// Stored snapshots of a trajectory; requires a uniform stride.
    pub fn trajectory(traj: &Trajectory, grid: &Grid) -> Result<Self> {
        let steps = &traj.snapshot_steps;
        let uniform = steps.windows(2).all(|w| w[1] - w[0] == traj.stride);
        if !uniform {
            return Err(Error::Shape(
                "snapshot spacing is not uniform; the final step is off the stride".into(),
            ));
        }
        Ok(Self::states(&traj.snapshots, grid, traj.stride as f64 * traj.h))
    }

    pub fn states(states: &[StateField], grid: &Grid, dt: f64) -> Self {
        let mut dims = vec![states.len(), grid.na, grid.ns];
        dims.extend(&grid.nx);
        let mut spacings = vec![dt, grid.h, grid.h];
        spacings.extend(&grid.dx);
        let values = states.iter().flat_map(|s| s.data.iter().copied()).collect();
        Self {
            dims,
            spacings,
            values,
        }
    }

    /// Reinterprets a rank `2 + d` dump as a state on `grid`.
    pub fn into_state(self, grid: &Grid) -> Result<StateField> {
        let mut dims = vec![grid.na, grid.ns];
        dims.extend(&grid.nx);
        if self.dims != dims {
            return Err(Error::Shape(format!("dump dims {:?}, grid needs {:?}", self.dims, dims)));
        }
        StateField::from_vec(grid, self.values)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        if self.dims.len() != self.spacings.len() {
            return Err(Error::Format("dims and spacings differ in length".into()));
        }
        let count: usize = self.dims.iter().product();
        if count != self.values.len() {
            return Err(Error::Format(format!(
                "dims hold {count} values, found {}",
                self.values.len()
            )));
        }
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &d in &self.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &s in &self.spacings {
            w.write_all(&s.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(8 * self.values.len());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(short)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let rank = read_u32(&mut r)? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Format(format!("rank {rank} out of range")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(short)?;
            dims.push(usize::try_from(u64::from_le_bytes(b)).map_err(|_| Error::Format("dimension overflow".into()))?);
        }
        let mut spacings = Vec::with_capacity(rank);
        for _ in 0..rank {
            spacings.push(read_f64(&mut r)?);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format("dimension product overflow".into()))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != 8 * count {
            return Err(Error::Format(format!(
                "expected {} value bytes, found {}",
                8 * count,
                bytes.len()
            )));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            dims,
            spacings,
            values,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn short(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated header".into())
    } else {
        Error::Io(e)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(short)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(short)?;
    Ok(f64::from_le_bytes(b))
}

/// Writes serializable rows as CSV with a header taken from the field names.
pub fn write_rows<T: Serialize>(w: impl Write, rows: &[T]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_rows(std::fs::File::create(path)?, rows)
}

#[derive(Serialize)]
struct FateRow<'a> {
    a: f64,
    s: f64,
    fate: &'a str,
    event_time: f64,
    renewals: usize,
}

/// Fate map with columns `a, s, fate, event_time, renewals`.
pub fn write_fate_map(w: impl Write, report: &CoverageReport) -> Result<()> {
    let rows: Vec<FateRow> = report
        .cells
        .iter()
        .map(|c| FateRow {
            a: c.a,
            s: c.s,
            fate: c.fate.as_str(),
            event_time: c.event_time,
            renewals: c.renewals,
        })
        .collect();
    write_rows(w, &rows)
}

/// Long-format trajectory with columns `t, x (one per dimension), a, s, y`.
pub fn write_trajectory(w: impl Write, traj: &Trajectory, grid: &Grid) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let dim = grid.nx.len();
    let mut header = vec!["t".to_string()];
    if dim == 1 {
        header.push("x".into());
    } else {
        header.extend((1..=dim).map(|d| format!("x{d}")));
    }
    header.extend(["a".into(), "s".into(), "y".into()]);
    out.write_record(&header)?;
    let np = grid.nspace();
    let xs: Vec<Vec<f64>> = (0..np).map(|p| grid.x(p)).collect();
    let mut rec: Vec<String> = Vec::with_capacity(header.len());
    for (state, &step) in traj.snapshots.iter().zip(&traj.snapshot_steps) {
        let t = step as f64 * grid.h;
        for i in 0..grid.na {
            for j in 0..grid.ns {
                for (p, x) in xs.iter().enumerate() {
                    rec.clear();
                    rec.push(t.to_string());
                    rec.extend(x.iter().map(f64::to_string));
                    rec.push(grid.age(i).to_string());
                    rec.push(grid.size(j).to_string());
                    rec.push(state.at(i, j, p).to_string());
                    out.write_record(&rec)?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}
