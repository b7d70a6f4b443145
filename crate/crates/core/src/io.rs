//! File formats: mask and heatmap PNGs, run-length mask text, box JSON and
//! `.npy` float matrices.
//!
//! Images are stored with row 0 = highest frequency; in memory, masks and
//! matrices keep row 0 = lowest frequency bin. The flip happens here and
//! nowhere else.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::blobseg::BinaryMask;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::BBox;

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Format(format!("png: {e}"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Encodes a mask as a 1-bit grayscale PNG (set pixels white).
pub fn encode_mask_png(mask: &BinaryMask) -> Result<Vec<u8>> {
    let (rows, cols) = mask.shape();
    let stride = cols.div_ceil(8);
    let mut packed = vec![0u8; stride * rows];
    for img_r in 0..rows {
        let r = rows - 1 - img_r;
        for c in 0..cols {
            if mask.get(r, c) {
                packed[img_r * stride + c / 8] |= 0x80 >> (c % 8);
            }
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, cols as u32, rows as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::One);
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&packed).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
    }
    Ok(out)
}

pub fn write_mask_png(path: impl AsRef<Path>, mask: &BinaryMask) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_mask_png(mask)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a grayscale PNG (1- or 8-bit) as a mask; any non-zero pixel is set.
pub fn read_mask_png(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_err("image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    if info.color_type != png::ColorType::Grayscale {
        return Err(png_err(format!("expected grayscale, got {:?}", info.color_type)));
    }
    let (rows, cols) = (info.height as usize, info.width as usize);
    let stride = info.line_size;
    let bit = |img_r: usize, c: usize| -> bool {
        let line = &buf[img_r * stride..];
        match info.bit_depth {
            png::BitDepth::One => line[c / 8] & (0x80 >> (c % 8)) != 0,
            png::BitDepth::Eight => line[c] != 0,
            png::BitDepth::Sixteen => line[2 * c] != 0 || line[2 * c + 1] != 0,
            png::BitDepth::Two => line[c / 4] & (0xC0 >> (2 * (c % 4))) != 0,
            png::BitDepth::Four => line[c / 2] & (0xF0 >> (4 * (c % 2))) != 0,
        }
    };
    Ok(BinaryMask::from_fn(rows, cols, |r, c| bit(rows - 1 - r, c)))
}

/// Writes values in `[0, 1]` as an 8-bit grayscale PNG.
pub fn write_heatmap_png(path: impl AsRef<Path>, values: &Matrix) -> Result<()> {
    let path = path.as_ref();
    let (rows, cols) = values.shape();
    let mut data = Vec::with_capacity(rows * cols);
    for img_r in 0..rows {
        let r = rows - 1 - img_r;
        for c in 0..cols {
            data.push((values.get(r, c).clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let mut enc = png::Encoder::new(create(path)?, cols as u32, rows as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(&data).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

/// Run-length text: a `rle <rows> <cols>` header, then one line per row
/// listing `start,len` runs of set pixels separated by spaces.
pub fn mask_to_rle(mask: &BinaryMask) -> String {
    let (rows, cols) = mask.shape();
    let mut out = format!("rle {rows} {cols}\n");
    for r in 0..rows {
        let mut runs = Vec::new();
        let mut c = 0;
        while c < cols {
            if mask.get(r, c) {
                let start = c;
                while c < cols && mask.get(r, c) {
                    c += 1;
                }
                runs.push(format!("{start},{}", c - start));
            } else {
                c += 1;
            }
        }
        out.push_str(&runs.join(" "));
        out.push('\n');
    }
    out
}

pub fn mask_from_rle(text: &str) -> Result<BinaryMask> {
    let bad = |m: &str| Error::Format(format!("rle: {m}"));
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| bad("missing header"))?
        .split_whitespace()
        .collect();
    let (rows, cols) = match header.as_slice() {
        ["rle", r, c] => (
            r.parse::<usize>().map_err(|_| bad("bad row count"))?,
            c.parse::<usize>().map_err(|_| bad("bad column count"))?,
        ),
        _ => return Err(bad("header must be `rle <rows> <cols>`")),
    };
    let mut mask = BinaryMask::new(rows, cols);
    for r in 0..rows {
        let line = lines.next().ok_or_else(|| bad("too few rows"))?;
        for run in line.split_whitespace() {
            let (s, l) = run.split_once(',').ok_or_else(|| bad("run must be start,len"))?;
            let s: usize = s.parse().map_err(|_| bad("bad run start"))?;
            let l: usize = l.parse().map_err(|_| bad("bad run length"))?;
            if s + l > cols {
                return Err(bad("run exceeds row"));
            }
            for c in s..s + l {
                mask.set(r, c, true);
            }
        }
    }
    Ok(mask)
}

pub fn write_boxes_json(path: impl AsRef<Path>, boxes: &[BBox]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, boxes)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_boxes_json(path: impl AsRef<Path>) -> Result<Vec<BBox>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let boxes: Vec<BBox> = serde_json::from_str(&text)?;
    for b in &boxes {
        BBox::new(b.t0, b.t1, b.f0, b.f1)?;
    }
    Ok(boxes)
}

/// Serializes a matrix as a NumPy `.npy` (version 1.0, little-endian f64,
/// C order).
pub fn encode_npy(m: &Matrix) -> Vec<u8> {
    let mut header = format!(
        "{{'descr': '<f8', 'fortran_order': False, 'shape': ({}, {}), }}",
        m.rows(),
        m.cols()
    );
    // magic(6) + version(2) + len(2) + header + '\n' padded to 64 bytes
    let total = 10 + header.len() + 1;
    header.push_str(&" ".repeat((64 - total % 64) % 64));
    header.push('\n');
    let mut out = Vec::with_capacity(10 + header.len() + 8 * m.as_slice().len());
    out.extend_from_slice(b"\x93NUMPY\x01\x00");
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_npy(bytes: &[u8]) -> Result<Matrix> {
    let bad = |m: &str| Error::Format(format!("npy: {m}"));
    if bytes.len() < 10 || &bytes[..8] != b"\x93NUMPY\x01\x00" {
        return Err(bad("not a version 1.0 npy file"));
    }
    let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let header = std::str::from_utf8(bytes.get(10..10 + hlen).ok_or_else(|| bad("truncated header"))?)
        .map_err(|_| bad("header not utf-8"))?;
    if !header.contains("'<f8'") || !header.contains("'fortran_order': False") {
        return Err(bad("only C-order little-endian f64 is supported"));
    }
    let shape = header
        .split_once("'shape': (")
        .and_then(|(_, rest)| rest.split_once(')'))
        .ok_or_else(|| bad("missing shape"))?
        .0;
    let dims: Vec<usize> = shape
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| bad("bad shape")))
        .collect::<Result<_>>()?;
    let [rows, cols] = dims[..] else {
        return Err(bad("expected a 2-d array"));
    };
    let data: Vec<f64> = bytes[10 + hlen..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn mask_png_and_rle_are_lossless(
            rows in 1usize..20,
            cols in 1usize..30,
            seed in proptest::collection::vec(any::<bool>(), 600),
        ) {
            let mask = BinaryMask::from_fn(rows, cols, |r, c| seed[r * cols + c]);
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.png");
            write_mask_png(&path, &mask).unwrap();
            prop_assert_eq!(read_mask_png(&path).unwrap(), mask.clone());
            prop_assert_eq!(mask_from_rle(&mask_to_rle(&mask)).unwrap(), mask);
        }
    }

    #[test]
    fn png_row_zero_is_highest_frequency() {
        let mut mask = BinaryMask::new(4, 3);
        mask.set(3, 0, true);
        let bytes = encode_mask_png(&mask).unwrap();
        let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
        decoder.set_transformations(png::Transformations::IDENTITY);
        let mut reader = decoder.read_info().unwrap();
        let mut buf = vec![0u8; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        assert_eq!(buf[0], 0x80);
        assert!(buf[info.line_size..].iter().all(|&b| b == 0));
    }

    #[test]
    fn npy_round_trip_and_alignment() {
        let m = Matrix::from_fn(3, 5, |r, c| r as f64 - 0.25 * c as f64);
        let bytes = encode_npy(&m);
        let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!((10 + hlen) % 64, 0);
        assert_eq!(decode_npy(&bytes).unwrap(), m);
    }

    #[test]
    fn boxes_json_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.json");
        let boxes = vec![BBox::new(1, 2, 3, 4).unwrap()];
        write_boxes_json(&path, &boxes).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "[{\"t0\":1,\"t1\":2,\"f0\":3,\"f1\":4}]\n");
        assert_eq!(read_boxes_json(&path).unwrap(), boxes);
        std::fs::write(&path, "[{\"t0\":5,\"t1\":2,\"f0\":3,\"f1\":4}]").unwrap();
        assert!(read_boxes_json(&path).is_err());
    }

    #[test]
    fn rle_rejects_garbage() {
        assert!(mask_from_rle("").is_err());
        assert!(mask_from_rle("rle 1 2\n0,3\n").is_err());
        assert!(mask_from_rle("mask 1 2\n").is_err());
    }
}
