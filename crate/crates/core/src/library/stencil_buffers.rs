//! Offset tables for vectorized sliding-window buffering.
//!
//! For a set of relative accesses into a row-major grid, flattened against
//! the iteration order, the table lists every unique scalar offset a W-wide
//! compute stage touches, relative to the earliest access. Offsets split into
//! a major index (which vector) and a minor index (lane within the vector).
//! Each access's window start becomes an access point; consecutive access
//! points delimit the explicit buffers used when no shift-register storage is
//! available.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OffsetError {
    #[error("vector width must be >= 1")]
    ZeroWidth,
    #[error("no access points given")]
    NoAccesses,
    #[error("access {0:?} has {1} dimensions; expected {2}")]
    RankMismatch(Vec<i64>, usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OffsetEntry {
    /// Scalar offset relative to the earliest access.
    pub offset: i64,
    /// offset / W: which vector is read.
    pub major: i64,
    /// offset mod W: lane within the vector.
    pub minor: i64,
}

/// One explicit buffer: holds vectors `[major, major + size_vectors)` of the
/// sliding window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AccessPoint {
    pub major: i64,
    pub size_vectors: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccessInfo {
    /// The original per-dimension relative offsets.
    pub original: Vec<i64>,
    /// Flattened offset relative to the earliest access.
    pub rel: i64,
    /// Window start: rel / W.
    pub major: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OffsetTable {
    pub width: u32,
    /// Flattened offset of the earliest access (most negative), in scalars.
    pub min_flat: i64,
    /// Unique scalar offsets touched by all lanes, sorted ascending.
    pub offsets: Vec<OffsetEntry>,
    /// One entry per input access, in input order.
    pub accesses: Vec<AccessInfo>,
    /// Unique access-point majors with their buffer sizes (in vectors).
    pub access_points: Vec<AccessPoint>,
    /// Total vectors in the sliding window, wavefront included.
    pub span_vectors: i64,
}

impl OffsetTable {
    /// Scalar length of the full window: `max offset - min offset + W`.
    pub fn span_scalars(&self) -> i64 {
        self.span_vectors * self.width as i64
    }

    /// The buffer covering `major`, if any.
    pub fn buffer_of(&self, major: i64) -> Option<usize> {
        self.access_points
            .iter()
            .position(|ap| major >= ap.major && major < ap.major + ap.size_vectors)
    }
}

/// Row-major strides for grid dimensions (innermost stride 1).
pub fn row_major_strides(dims: &[u64]) -> Vec<i64> {
    let mut strides = vec![1i64; dims.len()];
    for d in (0..dims.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * dims[d + 1] as i64;
    }
    strides
}

/// Computes the offset table for `accesses` against row-major `strides` at
/// vector width `width`.
pub fn stencil_offsets(
    accesses: &[Vec<i64>],
    strides: &[i64],
    width: u32,
) -> Result<OffsetTable, OffsetError> {
    if width == 0 {
        return Err(OffsetError::ZeroWidth);
    }
    if accesses.is_empty() {
        return Err(OffsetError::NoAccesses);
    }
    let w = width as i64;
    let mut flat = Vec::with_capacity(accesses.len());
    for access in accesses {
        if access.len() != strides.len() {
            return Err(OffsetError::RankMismatch(
                access.clone(),
                access.len(),
                strides.len(),
            ));
        }
        flat.push(access.iter().zip(strides).map(|(o, s)| o * s).sum::<i64>());
    }
    let min_flat = *flat.iter().min().unwrap();

    let mut scalar_offsets: Vec<i64> = Vec::new();
    for f in &flat {
        let rel = f - min_flat;
        for lane in 0..w {
            scalar_offsets.push(rel + lane);
        }
    }
    scalar_offsets.sort_unstable();
    scalar_offsets.dedup();
    let offsets = scalar_offsets
        .iter()
        .map(|&offset| OffsetEntry {
            offset,
            major: offset / w,
            minor: offset % w,
        })
        .collect::<Vec<_>>();

    let accesses_info: Vec<AccessInfo> = accesses
        .iter()
        .zip(&flat)
        .map(|(original, f)| {
            let rel = f - min_flat;
            AccessInfo {
                original: original.clone(),
                rel,
                major: rel / w,
            }
        })
        .collect();

    let highest_major = offsets.last().unwrap().major;
    let mut majors: Vec<i64> = accesses_info.iter().map(|a| a.major).collect();
    majors.sort_unstable();
    majors.dedup();
    let mut access_points = Vec::with_capacity(majors.len());
    for (i, &major) in majors.iter().enumerate() {
        let size_vectors = match majors.get(i + 1) {
            Some(next) => next - major,
            None => highest_major - major + 1,
        };
        access_points.push(AccessPoint {
            major,
            size_vectors,
        });
    }

    Ok(OffsetTable {
        width,
        min_flat,
        offsets,
        accesses: accesses_info,
        access_points,
        span_vectors: highest_major + 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_point_stencil_wide_rows() {
        // {(-1,0), (0,-1), (0,+1), (+1,0)} against a 4096-wide row, W=4.
        let accesses = vec![vec![-1, 0], vec![0, -1], vec![0, 1], vec![1, 0]];
        let table = stencil_offsets(&accesses, &[4096, 1], 4).unwrap();
        assert_eq!(table.offsets.len(), 14);
        let majors: Vec<i64> = table.access_points.iter().map(|a| a.major).collect();
        assert_eq!(majors, vec![0, 1023, 1024, 2048]);
        let sizes: Vec<i64> = table.access_points.iter().map(|a| a.size_vectors).collect();
        assert_eq!(sizes, vec![1023, 1, 1024, 1]);
        assert_eq!(table.span_vectors, 2049);
    }

    #[test]
    fn single_access_scalar() {
        let table = stencil_offsets(&[vec![0, 0]], &[64, 1], 1).unwrap();
        assert_eq!(table.offsets.len(), 1);
        assert_eq!(table.offsets[0].major, 0);
        assert_eq!(table.offsets[0].minor, 0);
        assert_eq!(table.access_points.len(), 1);
        assert_eq!(table.span_vectors, 1);
    }

    #[test]
    fn five_point_matches_enumeration_oracle() {
        // Independent oracle: enumerate every (access, lane) scalar offset
        // over all window positions and deduplicate.
        let accesses = vec![
            vec![0, 0],
            vec![-1, 0],
            vec![1, 0],
            vec![0, -1],
            vec![0, 1],
        ];
        let strides = [64i64, 1];
        let w = 8u32;
        let mut oracle: Vec<i64> = Vec::new();
        let flats: Vec<i64> = accesses
            .iter()
            .map(|a| a.iter().zip(strides.iter()).map(|(o, s)| o * s).sum())
            .collect();
        let min = *flats.iter().min().unwrap();
        for f in &flats {
            for lane in 0..w as i64 {
                oracle.push(f - min + lane);
            }
        }
        oracle.sort_unstable();
        oracle.dedup();

        let table = stencil_offsets(&accesses, &strides, w).unwrap();
        let got: Vec<i64> = table.offsets.iter().map(|e| e.offset).collect();
        assert_eq!(got, oracle);
        assert_eq!(got.len(), 26);
        let majors: Vec<i64> = table.access_points.iter().map(|a| a.major).collect();
        assert_eq!(majors, vec![0, 7, 8, 16]);
        // Every unique major touched by any lane is covered by some buffer.
        for entry in &table.offsets {
            assert!(table.buffer_of(entry.major).is_some(), "major {} uncovered", entry.major);
        }
    }

    #[test]
    fn rank_mismatch_rejected() {
        assert!(matches!(
            stencil_offsets(&[vec![0]], &[64, 1], 4),
            Err(OffsetError::RankMismatch(..))
        ));
    }
}
