//! Comparison grids: one row per edit, columns source, exemplar and result,
//! with bitmap-font column headers.

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

pub const HEADERS: [&str; 3] = ["SOURCE", "EXEMPLAR", "RESULT"];
/// Space between tiles and around the border, in pixels.
pub const GUTTER: u32 = 4;
/// Height of the header band above the first row.
pub const HEADER_HEIGHT: u32 = 12;

const GLYPH_W: u32 = 5;
const GLYPH_H: u32 = 7;
const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const INK: Rgb<u8> = Rgb([0, 0, 0]);

fn glyph(c: char) -> [u8; 7] {
    match c {
        'A' => [0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001],
        'C' => [0b01111, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b01111],
        'E' => [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111],
        'L' => [0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111],
        'M' => [0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001],
        'O' => [0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
        'P' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000],
        'R' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001],
        'S' => [0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110],
        'T' => [0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100],
        'U' => [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
        'X' => [0b10001, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b10001],
        _ => [0; 7],
    }
}

/// `(width, height)` of a grid with `rows` rows of `tile_w × tile_h` tiles.
pub fn grid_dimensions(rows: u32, tile_w: u32, tile_h: u32) -> (u32, u32) {
    (GUTTER + 3 * (tile_w + GUTTER), HEADER_HEIGHT + rows * (tile_h + GUTTER))
}

/// Top-left pixel of the tile at `(row, col)`.
pub fn tile_origin(row: u32, col: u32, tile_w: u32, tile_h: u32) -> (u32, u32) {
    (GUTTER + col * (tile_w + GUTTER), HEADER_HEIGHT + row * (tile_h + GUTTER))
}

fn draw_text(canvas: &mut RgbImage, text: &str, x0: u32, max_w: u32, y0: u32) {
    let advance = GLYPH_W + 1;
    let width = (text.len() as u32 * advance).saturating_sub(1);
    let start = x0 + max_w.saturating_sub(width) / 2;
    for (i, c) in text.chars().enumerate() {
        let gx = start + i as u32 * advance;
        let rows = glyph(c);
        for (dy, bits) in rows.iter().enumerate() {
            for dx in 0..GLYPH_W {
                let x = gx + dx;
                if bits >> (GLYPH_W - 1 - dx) & 1 == 1 && x < x0 + max_w {
                    canvas.put_pixel(x, y0 + dy as u32, INK);
                }
            }
        }
    }
}

/// Tiles `(source, exemplar, result)` triples into one labeled image.
pub fn make_grid(rows: &[[RgbImage; 3]]) -> Result<RgbImage> {
    let Some(first) = rows.first() else {
        return Err(Error::Usage("a grid needs at least one row".into()));
    };
    let (tw, th) = first[0].dimensions();
    if rows.iter().flatten().any(|t| t.dimensions() != (tw, th)) {
        return Err(exedit_core::Error::Validation("grid tiles must share one resolution".into()).into());
    }
    let (w, h) = grid_dimensions(rows.len() as u32, tw, th);
    let mut canvas = RgbImage::from_pixel(w, h, BACKGROUND);
    for (col, label) in HEADERS.iter().enumerate() {
        let (x, _) = tile_origin(0, col as u32, tw, th);
        draw_text(&mut canvas, label, x, tw, (HEADER_HEIGHT - GLYPH_H) / 2);
    }
    for (r, triple) in rows.iter().enumerate() {
        for (c, tile) in triple.iter().enumerate() {
            let (x, y) = tile_origin(r as u32, c as u32, tw, th);
            image::imageops::replace(&mut canvas, tile, x as i64, y as i64);
        }
    }
    Ok(canvas)
}
