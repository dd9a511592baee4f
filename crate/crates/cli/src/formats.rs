//! Little-endian binary files: point frames (`BEVM`) and motion fields
//! (`MFLD`).

use std::io::{Read, Write};

use anyhow::{bail, ensure, Context, Result};
use bevmotion::{Direction, GridSpec, MotionStack};

pub const POINTS_MAGIC: &[u8; 4] = b"BEVM";
pub const POINTS_VERSION: u16 = 1;
pub const MOTION_MAGIC: &[u8; 4] = b"MFLD";
pub const MOTION_VERSION: u16 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            bail!("{}: truncated at byte {} (need {n} more)", self.what, self.pos);
        };
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn finish(&self) -> Result<()> {
        ensure!(self.pos == self.buf.len(), "{}: {} trailing bytes", self.what, self.buf.len() - self.pos);
        Ok(())
    }
}

pub fn encode_points(points: &[[f32; 3]]) -> Vec<u8> {
    let mut out = Vec::with_capacity(14 + points.len() * 12);
    out.extend_from_slice(POINTS_MAGIC);
    out.extend_from_slice(&POINTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(points.len() as u64).to_le_bytes());
    for p in points {
        for v in p {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_points(buf: &[u8]) -> Result<Vec<[f32; 3]>> {
    let mut r = Reader { buf, pos: 0, what: "point file" };
    ensure!(&r.array::<4>()? == POINTS_MAGIC, "point file: bad magic");
    let version = r.u16()?;
    ensure!(version == POINTS_VERSION, "point file: unsupported version {version}");
    let n = r.u64()? as usize;
    ensure!(n.checked_mul(12).is_some_and(|b| b <= buf.len()), "point file: count {n} exceeds file size");
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        points.push([r.f32()?, r.f32()?, r.f32()?]);
    }
    r.finish()?;
    Ok(points)
}

pub fn write_points(w: &mut impl Write, points: &[[f32; 3]]) -> Result<()> {
    w.write_all(&encode_points(points))?;
    Ok(())
}

pub fn read_points(r: &mut impl Read) -> Result<Vec<[f32; 3]>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode_points(&buf)
}

fn direction_byte(d: Direction) -> u8 {
    match d {
        Direction::Forward => 0,
        Direction::Backward => 1,
    }
}

/// Header, grid echo, direction, step count, validity bitmask (row-major,
/// least significant bit first), then every step as dense row-major
/// `(dx, dy)` f32 pairs.
pub fn encode_motion(stack: &MotionStack<f32>) -> Vec<u8> {
    let g = stack.grid();
    let cells = g.num_cells();
    let mut out = Vec::with_capacity(80 + cells / 8 + stack.num_steps() * cells * 8);
    out.extend_from_slice(MOTION_MAGIC);
    out.extend_from_slice(&MOTION_VERSION.to_le_bytes());
    for v in [g.x_range(), g.y_range(), g.z_range()].iter().flatten().chain(&[g.voxel_xy(), g.voxel_z()]) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for n in [g.rows(), g.cols(), g.channels()] {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    out.push(direction_byte(stack.direction()));
    out.extend_from_slice(&(stack.num_steps() as u32).to_le_bytes());
    let mut mask = vec![0u8; cells.div_ceil(8)];
    for &c in stack.cells() {
        mask[c / 8] |= 1 << (c % 8);
    }
    out.extend_from_slice(&mask);
    for k in 0..stack.num_steps() {
        for v in stack.dense(k) {
            out.extend_from_slice(&v[0].to_le_bytes());
            out.extend_from_slice(&v[1].to_le_bytes());
        }
    }
    out
}

pub fn decode_motion(buf: &[u8]) -> Result<MotionStack<f32>> {
    let mut r = Reader { buf, pos: 0, what: "motion file" };
    ensure!(&r.array::<4>()? == MOTION_MAGIC, "motion file: bad magic");
    let version = r.u16()?;
    ensure!(version == MOTION_VERSION, "motion file: unsupported version {version}");
    let mut f = [0.0f64; 8];
    for v in &mut f {
        *v = r.f64()?;
    }
    let dims = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let grid = GridSpec::new([f[0], f[1]], [f[2], f[3]], [f[4], f[5]], f[6], f[7]).context("motion file grid")?;
    ensure!(
        dims == [grid.rows(), grid.cols(), grid.channels()],
        "motion file: grid dims {dims:?} disagree with ranges ({} x {} x {})",
        grid.rows(),
        grid.cols(),
        grid.channels()
    );
    let direction = match r.u8()? {
        0 => Direction::Forward,
        1 => Direction::Backward,
        b => bail!("motion file: bad direction byte {b}"),
    };
    let steps = r.u32()? as usize;
    let cells = grid.num_cells();
    let mask_bytes = r.take(cells.div_ceil(8))?;
    let mask: Vec<bool> = (0..cells).map(|c| mask_bytes[c / 8] >> (c % 8) & 1 == 1).collect();
    ensure!(
        mask_bytes.last().is_none_or(|&b| cells % 8 == 0 || b >> (cells % 8) == 0),
        "motion file: mask padding bits set"
    );
    ensure!(steps.checked_mul(cells * 8).is_some_and(|b| b <= buf.len()), "motion file: step count {steps} exceeds file size");
    let mut dense = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut field = Vec::with_capacity(cells);
        for _ in 0..cells {
            let v = [r.f32()?, r.f32()?];
            ensure!(v[0].is_finite() && v[1].is_finite(), "motion file: non-finite displacement");
            field.push(v);
        }
        dense.push(field);
    }
    r.finish()?;
    Ok(MotionStack::from_dense(grid, direction, &mask, &dense)?)
}

pub fn write_motion(w: &mut impl Write, stack: &MotionStack<f32>) -> Result<()> {
    w.write_all(&encode_motion(stack))?;
    Ok(())
}

pub fn read_motion(r: &mut impl Read) -> Result<MotionStack<f32>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode_motion(&buf)
}
