//! NSKF field snapshots and NSKS time series.
//!
//! An NSKF record is the magic `NSKF`, a `u16` version, `u16` dimension,
//! `u16` rank, `u32` points per axis, `f64` period per axis, then the grid
//! values of each component in grid order (last axis fastest). All numbers
//! are little endian. Complex fields are stored with the real and imaginary
//! parts of each component as consecutive components.
//!
//! An NSKS series is the magic `NSKS`, a `u16` version, a `u64` count and
//! then, per entry, an `f64` time followed by one NSKF record.

use std::io::{self, Read, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nsk_core::dynamics::ModeState;
use nsk_core::torus::{SpectralField, TorusGrid};
use nsk_core::C64;

pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub points: Vec<u32>,
    pub periods: Vec<f64>,
    /// One vector of grid values per component.
    pub values: Vec<Vec<f64>>,
}

fn bad(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

impl Snapshot {
    pub fn dim(&self) -> usize {
        self.points.len()
    }

    pub fn rank(&self) -> usize {
        self.values.len()
    }

    fn len(&self) -> usize {
        self.points.iter().map(|&n| n as usize).product()
    }

    /// Grid values of the components of `state` (real and imaginary parts
    /// when `real` is false).
    pub fn from_state(grid: &TorusGrid, state: &ModeState, real: bool) -> Self {
        let f = state.to_field(grid, 0..state.comps, false);
        let mut values = Vec::new();
        for comp in f.complex_values() {
            values.push(comp.iter().map(|z| z.re).collect());
            if !real {
                values.push(comp.iter().map(|z| z.im).collect());
            }
        }
        Snapshot {
            points: vec![grid.n() as u32; grid.dim()],
            periods: vec![grid.period(); grid.dim()],
            values,
        }
    }

    /// Inverse of [`Snapshot::from_state`].
    pub fn to_state(&self, grid: &TorusGrid, real: bool) -> io::Result<ModeState> {
        if self.points.iter().any(|&n| n as usize != grid.n())
            || self.dim() != grid.dim()
            || self.periods.iter().any(|&l| l != grid.period())
        {
            return Err(bad("snapshot grid does not match the scenario grid"));
        }
        let f = if real {
            SpectralField::from_values(grid, &self.values)
        } else {
            if self.rank() % 2 != 0 {
                return Err(bad("complex snapshot needs an even rank"));
            }
            let v: Vec<Vec<C64>> = self
                .values
                .chunks(2)
                .map(|p| p[0].iter().zip(p[1].iter()).map(|(&re, &im)| C64::new(re, im)).collect())
                .collect();
            SpectralField::from_complex_values(grid, &v)
        }
        .map_err(|e| bad(e.to_string()))?;
        ModeState::from_fields(&[&f]).map_err(|e| bad(e.to_string()))
    }

    pub fn write<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(b"NSKF")?;
        w.write_u16::<LE>(VERSION)?;
        w.write_u16::<LE>(self.dim() as u16)?;
        w.write_u16::<LE>(self.rank() as u16)?;
        for &n in &self.points {
            w.write_u32::<LE>(n)?;
        }
        for &l in &self.periods {
            w.write_f64::<LE>(l)?;
        }
        for comp in &self.values {
            for &v in comp {
                w.write_f64::<LE>(v)?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> io::Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"NSKF" {
            return Err(bad("not an NSKF record"));
        }
        let version = r.read_u16::<LE>()?;
        if version != VERSION {
            return Err(bad(format!("unsupported NSKF version {version}")));
        }
        let d = r.read_u16::<LE>()? as usize;
        let rank = r.read_u16::<LE>()? as usize;
        if !(1..=3).contains(&d) {
            return Err(bad(format!("dimension {d} out of range")));
        }
        let points = (0..d).map(|_| r.read_u32::<LE>()).collect::<io::Result<Vec<_>>>()?;
        let periods = (0..d).map(|_| r.read_f64::<LE>()).collect::<io::Result<Vec<_>>>()?;
        let mut s = Snapshot { points, periods, values: Vec::new() };
        let len = s.len();
        for _ in 0..rank {
            let mut comp = vec![0.0; len];
            r.read_f64_into::<LE>(&mut comp)?;
            s.values.push(comp);
        }
        Ok(s)
    }
}

/// Writes `(t, snapshot)` pairs as an NSKS series.
pub fn write_series<W: Write>(w: &mut W, entries: &[(f64, Snapshot)]) -> io::Result<()> {
    w.write_all(b"NSKS")?;
    w.write_u16::<LE>(VERSION)?;
    w.write_u64::<LE>(entries.len() as u64)?;
    for (t, s) in entries {
        w.write_f64::<LE>(*t)?;
        s.write(w)?;
    }
    Ok(())
}

pub fn read_series<R: Read>(r: &mut R) -> io::Result<Vec<(f64, Snapshot)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != b"NSKS" {
        return Err(bad("not an NSKS series"));
    }
    let version = r.read_u16::<LE>()?;
    if version != VERSION {
        return Err(bad(format!("unsupported NSKS version {version}")));
    }
    let count = r.read_u64::<LE>()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let t = r.read_f64::<LE>()?;
        out.push((t, Snapshot::read(r)?));
    }
    Ok(out)
}
