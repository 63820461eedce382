mod common;

use ffn_core::imaging::{load_image, ImageTensor};
use ffn_core::Error;

/// A 24-bit uncompressed BMP assembled byte by byte: bottom-up rows of BGR
/// triples padded to four bytes.
fn bmp_bytes(width: usize, height: usize, rgb: &dyn Fn(usize, usize) -> [u8; 3]) -> Vec<u8> {
    let stride = (3 * width).div_ceil(4) * 4;
    let pixel_bytes = stride * height;
    let mut b = Vec::new();
    b.extend_from_slice(b"BM");
    b.extend_from_slice(&((54 + pixel_bytes) as u32).to_le_bytes());
    b.extend_from_slice(&[0; 4]);
    b.extend_from_slice(&54u32.to_le_bytes());
    b.extend_from_slice(&40u32.to_le_bytes());
    b.extend_from_slice(&(width as i32).to_le_bytes());
    b.extend_from_slice(&(height as i32).to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&24u16.to_le_bytes());
    b.extend_from_slice(&[0; 4]);
    b.extend_from_slice(&(pixel_bytes as u32).to_le_bytes());
    b.extend_from_slice(&[0; 16]);
    for row in (0..height).rev() {
        let start = b.len();
        for col in 0..width {
            let [r, g, bl] = rgb(row, col);
            b.extend_from_slice(&[bl, g, r]);
        }
        b.resize(start + stride, 0);
    }
    b
}

#[test]
fn hand_built_bmp_decodes_exactly() {
    let px = |row: usize, col: usize| {
        [
            (40 * row + 7 * col) as u8,
            (200 - 30 * col) as u8,
            (11 * (row + col)) as u8,
        ]
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.bmp");
    std::fs::write(&path, bmp_bytes(3, 2, &px)).unwrap();
    let img = load_image(&path).unwrap();
    assert_eq!((img.height(), img.width(), img.channels()), (2, 3, 3));
    for row in 0..2 {
        for col in 0..3 {
            let want = px(row, col);
            for c in 0..3 {
                assert_eq!(img.get(row, col, c), want[c] as f64 / 255.0);
            }
        }
    }
}

#[test]
fn png_round_trip_is_exact_on_8bit_values() {
    let img = ImageTensor::from_fn(5, 4, 3, |y, x, c| {
        ((y * 31 + x * 17 + c * 5) % 256) as f64 / 255.0
    });
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.png");
    common::save_png(&path, &img);
    assert_eq!(load_image(&path).unwrap(), img);
}

#[test]
fn other_formats_and_missing_files_fail() {
    let dir = tempfile::tempdir().unwrap();
    let gif = dir.path().join("x.gif");
    std::fs::write(&gif, b"GIF89a\x01\x00\x01\x00\x00\x00\x00;").unwrap();
    assert!(matches!(load_image(&gif), Err(Error::Format { .. })));
    assert!(matches!(
        load_image(dir.path().join("none.png")),
        Err(Error::Io { .. })
    ));
}
