use std::path::Path;

use crate::data::{DataKind, Dataset};
use crate::error::{Error, Result};

const UBYTE: u8 = 0x08;

fn idx_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        location: path.display().to_string(),
        message: message.into(),
    }
}

/// Parses an unsigned-byte IDX file into its dimensions and payload.
pub fn parse_idx(bytes: &[u8], path: &Path) -> Result<(Vec<usize>, Vec<u8>)> {
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(idx_error(path, "missing IDX magic number"));
    }
    if bytes[2] != UBYTE {
        return Err(idx_error(
            path,
            format!("unsupported IDX element type 0x{:02x}", bytes[2]),
        ));
    }
    let rank = bytes[3] as usize;
    if rank == 0 {
        return Err(idx_error(path, "IDX rank is zero"));
    }
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(idx_error(path, "truncated IDX header"));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize)
        .collect();
    let n = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| idx_error(path, "IDX size overflows"))?;
    let payload = &bytes[header..];
    if payload.len() != n {
        return Err(idx_error(
            path,
            format!("payload has {} bytes, dimensions {dims:?} need {n}", payload.len()),
        ));
    }
    Ok((dims, payload.to_vec()))
}

/// Encodes an unsigned-byte IDX file.
pub fn idx_bytes(dims: &[usize], payload: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, UBYTE, dims.len() as u8];
    for &d in dims {
        out.extend((d as u32).to_be_bytes());
    }
    out.extend_from_slice(payload);
    out
}

/// Images from an IDX3 (`N × H × W`) or IDX4 (`N × H × W × 3`) file with an
/// optional IDX1 label file aligned by index. Images whose values are all 0
/// or 1 are read as binary images.
pub fn load_idx(images: &Path, labels: Option<&Path>) -> Result<Dataset> {
    let (dims, data) = parse_idx(&std::fs::read(images)?, images)?;
    let kind = match dims.as_slice() {
        [_, h, w] if data.iter().all(|&v| v <= 1) => DataKind::BinaryImage { height: *h, width: *w },
        [_, h, w] => DataKind::GrayImage { height: *h, width: *w },
        [_, h, w, 3] => DataKind::RgbImage { height: *h, width: *w },
        _ => {
            return Err(idx_error(
                images,
                format!("expected N×H×W or N×H×W×3 images, found {dims:?}"),
            ))
        }
    };
    let cols: usize = dims[1..].iter().product();
    if dims[0] == 0 || cols == 0 {
        return Err(idx_error(images, "IDX file holds no pixels"));
    }
    let labels = match labels {
        Some(p) => {
            let (ldims, l) = parse_idx(&std::fs::read(p)?, p)?;
            if ldims.len() != 1 || ldims[0] != dims[0] {
                return Err(idx_error(
                    p,
                    format!("labels {ldims:?} do not match {} images", dims[0]),
                ));
            }
            Some(l.into_iter().map(u32::from).collect())
        }
        None => None,
    };
    Dataset::new(kind, cols, data, labels)
}

/// Gray images thresholded to binary images.
pub fn binarize(d: &Dataset, threshold: u8) -> Result<Dataset> {
    let (h, w) = match d.kind {
        DataKind::GrayImage { height, width } | DataKind::BinaryImage { height, width } => (height, width),
        k => return Err(Error::Config(format!("cannot binarize {k:?}"))),
    };
    let values = d.values().iter().map(|&v| (v >= threshold) as u8).collect();
    Dataset::new(
        DataKind::BinaryImage { height: h, width: w },
        d.cols(),
        values,
        d.labels.clone(),
    )
}
