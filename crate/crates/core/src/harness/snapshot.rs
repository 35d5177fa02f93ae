//! Bit-exact binary snapshots.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"VPFP"
//! version u32 = 1
//! kind    u8: 0 phase-state, 1 density-grid, 2 kinetic-grid
//! d       u32                  (dimension / number of axes; 1 for kinetic)
//! counts  kind 0: N u64
//!         kind 1: one u64 per axis (cell counts)
//!         kind 2: nx u64, nv u64
//! time    f64
//! payload little-endian f64, row-major:
//!         kind 0: X (N x d) then V (N x d)
//!         kind 1: lower per axis, cell edge per axis, clipped mass,
//!                 then the mass tensor
//!         kind 2: x0 x1 v0 v1 sigma sign c1 outflow clipped pending,
//!                 then f (nx x nv)
//! crc     u32, CRC-32 (IEEE) of the payload bytes
//! ```

use std::io::Write;
use std::path::Path;

use crate::dynamics::PhaseState;
use crate::error::{Error, Result};
use crate::grid::DensityGrid;
use crate::kernels::Sign;
use crate::vp1d::KineticGrid1D;

const MAGIC: &[u8; 4] = b"VPFP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Snapshot {
    Phase(PhaseState),
    Density(DensityGrid),
    Kinetic(KineticGrid1D),
}

impl Snapshot {
    fn kind_byte(&self) -> u8 {
        match self {
            Snapshot::Phase(_) => 0,
            Snapshot::Density(_) => 1,
            Snapshot::Kinetic(_) => 2,
        }
    }
}

fn push_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    buf.reserve(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes a snapshot to bytes (exposed for tests; prefer
/// [`write_snapshot`]).
pub fn encode_snapshot(snap: &Snapshot) -> Vec<u8> {
    let mut head = Vec::with_capacity(64);
    head.extend_from_slice(MAGIC);
    head.extend_from_slice(&VERSION.to_le_bytes());
    head.push(snap.kind_byte());

    let mut payload: Vec<u8> = Vec::new();
    match snap {
        Snapshot::Phase(state) => {
            head.extend_from_slice(&(state.d() as u32).to_le_bytes());
            head.extend_from_slice(&(state.n() as u64).to_le_bytes());
            head.extend_from_slice(&state.t.to_le_bytes());
            push_f64s(&mut payload, &state.x);
            push_f64s(&mut payload, &state.v);
        }
        Snapshot::Density(grid) => {
            head.extend_from_slice(&(grid.axes() as u32).to_le_bytes());
            for &c in grid.shape() {
                head.extend_from_slice(&(c as u64).to_le_bytes());
            }
            head.extend_from_slice(&0.0f64.to_le_bytes()); // grids carry no time
            push_f64s(&mut payload, grid.lower());
            push_f64s(&mut payload, grid.cell_edges());
            push_f64s(&mut payload, &[grid.clipped_mass()]);
            push_f64s(&mut payload, grid.masses());
        }
        Snapshot::Kinetic(grid) => {
            head.extend_from_slice(&1u32.to_le_bytes());
            head.extend_from_slice(&(grid.nx as u64).to_le_bytes());
            head.extend_from_slice(&(grid.nv as u64).to_le_bytes());
            head.extend_from_slice(&grid.t.to_le_bytes());
            push_f64s(
                &mut payload,
                &[
                    grid.x0,
                    grid.x1,
                    grid.v0,
                    grid.v1,
                    grid.sigma,
                    grid.sign.factor(),
                    grid.c1,
                    grid.outflow,
                    grid.clipped_negative,
                    grid.pending_diffusion,
                ],
            );
            push_f64s(&mut payload, &grid.f);
        }
    }
    let crc = crc32fast::hash(&payload);
    let mut out = head;
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Writes atomically (temp file + rename).
pub fn write_snapshot(snap: &Snapshot, path: &Path) -> Result<()> {
    let bytes = encode_snapshot(snap);
    let tmp = path.with_extension("tmp");
    let mut file = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_snapshot(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::SnapshotFormat(format!(
                "truncated snapshot: wanted {} bytes at offset {}, file has {}",
                n,
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let raw = self.take(count * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<Snapshot> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4)?;
    if magic != MAGIC {
        return Err(Error::SnapshotFormat(format!(
            "bad magic {:02x?}, expected {:02x?}",
            magic, MAGIC
        )));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::SnapshotVersion {
            found: version,
            expected: VERSION,
        });
    }
    let kind = cur.take(1)?[0];
    let d = cur.u32()? as usize;
    if d == 0 || d > 16 {
        return Err(Error::SnapshotFormat(format!("implausible dimension {d}")));
    }

    let check_crc = |payload_start: usize, payload_len: usize| -> Result<()> {
        if payload_start + payload_len + 4 > bytes.len() {
            return Err(Error::SnapshotFormat(format!(
                "truncated snapshot: payload of {} bytes plus CRC does not fit in {}",
                payload_len,
                bytes.len()
            )));
        }
        let payload = &bytes[payload_start..payload_start + payload_len];
        let stored = u32::from_le_bytes(
            bytes[payload_start + payload_len..payload_start + payload_len + 4]
                .try_into()
                .unwrap(),
        );
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(Error::SnapshotCrc { stored, computed });
        }
        Ok(())
    };

    match kind {
        0 => {
            let n = cur.u64()? as usize;
            let t = cur.f64()?;
            check_crc(cur.pos, 2 * n * d * 8)?;
            let x = cur.f64s(n * d)?;
            let v = cur.f64s(n * d)?;
            Ok(Snapshot::Phase(PhaseState::new(t, d, x, v)?))
        }
        1 => {
            let mut shape = Vec::with_capacity(d);
            for _ in 0..d {
                shape.push(cur.u64()? as usize);
            }
            let _time = cur.f64()?;
            let cells: usize = shape.iter().product();
            check_crc(cur.pos, (2 * d + 1 + cells) * 8)?;
            let lower = cur.f64s(d)?;
            let cell = cur.f64s(d)?;
            let clipped = cur.f64()?;
            let mass = cur.f64s(cells)?;
            Ok(Snapshot::Density(DensityGrid::from_parts(
                lower, cell, shape, mass, clipped,
            )?))
        }
        2 => {
            let nx = cur.u64()? as usize;
            let nv = cur.u64()? as usize;
            let t = cur.f64()?;
            check_crc(cur.pos, (10 + nx * nv) * 8)?;
            let meta = cur.f64s(10)?;
            let f = cur.f64s(nx * nv)?;
            let sign = if meta[5] >= 0.0 {
                Sign::Repulsive
            } else {
                Sign::Attractive
            };
            Ok(Snapshot::Kinetic(KineticGrid1D {
                x0: meta[0],
                x1: meta[1],
                v0: meta[2],
                v1: meta[3],
                nx,
                nv,
                f,
                t,
                sigma: meta[4],
                sign,
                c1: meta[6],
                outflow: meta[7],
                clipped_negative: meta[8],
                pending_diffusion: meta[9],
            }))
        }
        other => Err(Error::SnapshotFormat(format!(
            "unknown payload kind {other}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phase() -> PhaseState {
        PhaseState::new(
            1.25,
            2,
            vec![0.1, -0.2, 0.3, 0.4, 1.0, -1.0],
            vec![0.5, 0.6, -0.7, 0.8, 0.0, 2.0],
        )
        .unwrap()
    }

    #[test]
    fn phase_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.vpfp");
        let original = phase();
        write_snapshot(&Snapshot::Phase(original.clone()), &path).unwrap();
        match read_snapshot(&path).unwrap() {
            Snapshot::Phase(readback) => {
                assert_eq!(readback.t.to_bits(), original.t.to_bits());
                for (a, b) in readback.x.iter().zip(&original.x) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
                for (a, b) in readback.v.iter().zip(&original.v) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
            other => panic!("wrong kind {other:?}"),
        }
    }

    #[test]
    fn density_round_trip() {
        let grid = DensityGrid::from_parts(
            vec![-1.0, 0.0],
            vec![0.5, 0.25],
            vec![3, 4],
            (0..12).map(|i| i as f64 / 66.0).collect(),
            0.01,
        )
        .unwrap();
        let bytes = encode_snapshot(&Snapshot::Density(grid.clone()));
        match decode_snapshot(&bytes).unwrap() {
            Snapshot::Density(g) => assert_eq!(g, grid),
            other => panic!("wrong kind {other:?}"),
        }
    }

    #[test]
    fn kinetic_round_trip() {
        let grid = KineticGrid1D::from_density_fn(
            |x, v| (-x * x - v * v).exp(),
            (-3.0, 3.0),
            (-2.0, 2.0),
            16,
            8,
            0.25,
            Sign::Attractive,
            0.5,
            true,
        )
        .unwrap();
        let bytes = encode_snapshot(&Snapshot::Kinetic(grid.clone()));
        match decode_snapshot(&bytes).unwrap() {
            Snapshot::Kinetic(g) => assert_eq!(g, grid),
            other => panic!("wrong kind {other:?}"),
        }
    }

    #[test]
    fn truncated_file_is_a_structured_error() {
        let bytes = encode_snapshot(&Snapshot::Phase(phase()));
        for cut in [3, 9, 13, bytes.len() - 5, bytes.len() - 1] {
            let err = decode_snapshot(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(err, Error::SnapshotFormat(_) | Error::SnapshotCrc { .. }),
                "cut at {cut}: unexpected {err:?}"
            );
        }
    }

    #[test]
    fn corrupted_payload_fails_crc() {
        let mut bytes = encode_snapshot(&Snapshot::Phase(phase()));
        let mid = bytes.len() - 12;
        bytes[mid] ^= 0xff;
        assert!(matches!(
            decode_snapshot(&bytes).unwrap_err(),
            Error::SnapshotCrc { .. }
        ));
    }

    #[test]
    fn unsupported_version_names_found_and_expected() {
        let mut bytes = encode_snapshot(&Snapshot::Phase(phase()));
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        match decode_snapshot(&bytes).unwrap_err() {
            Error::SnapshotVersion { found, expected } => {
                assert_eq!(found, 2);
                assert_eq!(expected, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = encode_snapshot(&Snapshot::Phase(phase()));
        bytes[0] = b'X';
        assert!(matches!(
            decode_snapshot(&bytes).unwrap_err(),
            Error::SnapshotFormat(_)
        ));
    }
}
