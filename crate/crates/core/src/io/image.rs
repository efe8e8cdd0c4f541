use crate::error::{Error, Result};

/// Channels per pixel of an image written to disk.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channels {
    Gray,
    Rgb,
}

impl Channels {
    fn count(self) -> usize {
        match self {
            Channels::Gray => 1,
            Channels::Rgb => 3,
        }
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PGM (`P5`) or PPM (`P6`) bytes of one image with values in
/// `[0, 1]`, channels interleaved per pixel.
pub fn netpbm_bytes(pixels: &[f64], height: usize, width: usize, channels: Channels) -> Result<Vec<u8>> {
    if pixels.len() != height * width * channels.count() || height == 0 || width == 0 {
        return Err(Error::invalid(format!(
            "{} values do not form a {height}x{width} image with {} channels",
            pixels.len(),
            channels.count()
        )));
    }
    let magic = if channels == Channels::Gray { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|&v| quantize(v)));
    Ok(out)
}

/// Tiles `count` images of `height x width` into a grid with `columns`
/// tiles per row and a one-pixel white gutter. Returns the grid and its
/// height and width.
pub fn tile_grid(
    images: &[f64],
    height: usize,
    width: usize,
    channels: Channels,
    columns: usize,
) -> Result<(Vec<f64>, usize, usize)> {
    let c = channels.count();
    let size = height * width * c;
    if size == 0 || columns == 0 || images.is_empty() || !images.len().is_multiple_of(size) {
        return Err(Error::invalid("sample grid needs whole, non-empty images"));
    }
    let count = images.len() / size;
    let cols = columns.min(count);
    let rows = count.div_ceil(cols);
    let gh = rows * (height + 1) + 1;
    let gw = cols * (width + 1) + 1;
    let mut grid = vec![1.0; gh * gw * c];
    for (k, img) in images.chunks(size).enumerate() {
        let (oy, ox) = ((k / cols) * (height + 1) + 1, (k % cols) * (width + 1) + 1);
        for y in 0..height {
            let src = &img[y * width * c..(y + 1) * width * c];
            let dst = ((oy + y) * gw + ox) * c;
            grid[dst..dst + width * c].copy_from_slice(src);
        }
    }
    Ok((grid, gh, gw))
}
