//! PHCF binary snapshots.
//!
//! Header (little-endian): magic "PHCF", version u32, dim u32, n u32,
//! m_theta u32, components u32, harmonics u32, time f64. The payload is
//! interleaved (re, im) f64 coefficients in row-major ξ order, component
//! after component, harmonic after harmonic for profiles. `harmonics` is 0
//! for plain spectral fields and K+1 for a profile with harmonics 0..=K.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{Grid, ProfileField, SpectralField, C64};

pub const MAGIC: &[u8; 4] = b"PHCF";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Header {
    pub version: u32,
    pub dim: u32,
    pub n: u32,
    pub m_theta: u32,
    pub components: u32,
    pub harmonics: u32,
    pub time: f64,
}

impl Header {
    fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        for v in [self.version, self.dim, self.n, self.m_theta, self.components, self.harmonics] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.time.to_le_bytes())?;
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Header> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| Error::Format("truncated header".into()))?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let mut u = [0u32; 6];
        for v in u.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| Error::Format("truncated header".into()))?;
            *v = u32::from_le_bytes(b);
        }
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(|_| Error::Format("truncated header".into()))?;
        let h = Header { version: u[0], dim: u[1], n: u[2], m_theta: u[3], components: u[4], harmonics: u[5], time: f64::from_le_bytes(b) };
        if h.version != VERSION {
            return Err(Error::Format(format!("unsupported version {}", h.version)));
        }
        Ok(h)
    }

    fn check(&self, grid: &Grid) -> Result<()> {
        if self.n as usize != grid.n || self.dim as usize != grid.dim {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }
}

fn write_coeffs<W: Write>(w: &mut W, v: &[C64]) -> Result<()> {
    for z in v {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    Ok(())
}

fn read_coeffs<R: Read>(r: &mut R, len: usize) -> Result<Vec<C64>> {
    let mut buf = vec![0u8; 16 * len];
    r.read_exact(&mut buf).map_err(|_| Error::Format("truncated payload".into()))?;
    Ok(buf
        .chunks_exact(16)
        .map(|c| C64::new(f64::from_le_bytes(c[..8].try_into().unwrap()), f64::from_le_bytes(c[8..].try_into().unwrap())))
        .collect())
}

pub fn write_spectral<W: Write>(w: &mut W, f: &SpectralField, time: f64) -> Result<()> {
    let g = &f.grid;
    Header { version: VERSION, dim: g.dim as u32, n: g.n as u32, m_theta: g.m_theta as u32, components: f.components() as u32, harmonics: 0, time }
        .write(w)?;
    for v in &f.coeffs {
        write_coeffs(w, v)?;
    }
    Ok(())
}

pub fn write_profile<W: Write>(w: &mut W, p: &ProfileField, time: f64) -> Result<()> {
    let g = &p.grid;
    Header {
        version: VERSION,
        dim: g.dim as u32,
        n: g.n as u32,
        m_theta: g.m_theta as u32,
        components: p.components as u32,
        harmonics: p.modes.len() as u32,
        time,
    }
    .write(w)?;
    for m in &p.modes {
        for v in m {
            write_coeffs(w, v)?;
        }
    }
    Ok(())
}

/// Reads a spectral field; `grid` supplies dt/t_end and must agree on dim and n.
pub fn read_spectral<R: Read>(r: &mut R, grid: &Grid) -> Result<(SpectralField, f64)> {
    let h = Header::read(r)?;
    h.check(grid)?;
    if h.harmonics != 0 {
        return Err(Error::Format("file holds a profile".into()));
    }
    let coeffs = (0..h.components).map(|_| read_coeffs(r, grid.points())).collect::<Result<_>>()?;
    Ok((SpectralField { grid: grid.clone(), coeffs }, h.time))
}

pub fn read_profile<R: Read>(r: &mut R, grid: &Grid) -> Result<(ProfileField, f64)> {
    let h = Header::read(r)?;
    h.check(grid)?;
    if h.harmonics == 0 {
        return Err(Error::Format("file holds a plain spectral field".into()));
    }
    let modes = (0..h.harmonics)
        .map(|_| (0..h.components).map(|_| read_coeffs(r, grid.points())).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    Ok((ProfileField { grid: grid.clone(), components: h.components as usize, modes }, h.time))
}

pub fn save_spectral(path: &Path, f: &SpectralField, time: f64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_spectral(&mut w, f, time)?;
    w.flush()?;
    Ok(())
}

pub fn save_profile(path: &Path, p: &ProfileField, time: f64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_profile(&mut w, p, time)?;
    w.flush()?;
    Ok(())
}

pub fn load_spectral(path: &Path, grid: &Grid) -> Result<(SpectralField, f64)> {
    read_spectral(&mut BufReader::new(File::open(path)?), grid)
}

pub fn load_profile(path: &Path, grid: &Grid) -> Result<(ProfileField, f64)> {
    read_profile(&mut BufReader::new(File::open(path)?), grid)
}
