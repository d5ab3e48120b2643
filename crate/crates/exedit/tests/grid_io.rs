use exedit::grid::{grid_dimensions, make_grid, tile_origin, GUTTER, HEADER_HEIGHT};
use exedit::imageio::{load_image, rgb_to_tensor, save_image, save_rgb, tensor_to_rgb};
use exedit::Error;
use exedit_core::Tensor;
use image::{Rgb, RgbImage};

fn solid(w: u32, h: u32, c: [u8; 3]) -> RgbImage {
    RgbImage::from_pixel(w, h, Rgb(c))
}

#[test]
fn grid_dimensions_for_three_rows_of_128() {
    let rows: Vec<[RgbImage; 3]> = (0..3)
        .map(|i| [solid(128, 128, [i * 40, 0, 0]), solid(128, 128, [0, i * 40, 0]), solid(128, 128, [0, 0, i * 40])])
        .collect();
    let grid = make_grid(&rows).unwrap();
    let (w, h) = grid_dimensions(3, 128, 128);
    assert_eq!((grid.width(), grid.height()), (w, h));
    assert_eq!(w, 3 * 128 + 4 * GUTTER);
    assert_eq!(h, HEADER_HEIGHT + 3 * (128 + GUTTER));
    for (r, row) in rows.iter().enumerate() {
        for (c, tile) in row.iter().enumerate() {
            let (x, y) = tile_origin(r as u32, c as u32, 128, 128);
            assert_eq!(grid.get_pixel(x + 5, y + 7), tile.get_pixel(5, 7));
            assert_eq!(grid.get_pixel(x + 127, y + 127), tile.get_pixel(127, 127));
        }
    }
    // The header band carries some dark glyph pixels on a light background.
    let header: Vec<_> = (0..w).flat_map(|x| (0..HEADER_HEIGHT).map(move |y| (x, y))).collect();
    let dark = header.iter().filter(|&&(x, y)| grid.get_pixel(x, y).0[0] < 128).count();
    assert!(dark > 0 && dark < header.len() / 2);
}

#[test]
fn single_row_grid() {
    let grid = make_grid(&[[solid(64, 64, [1, 2, 3]), solid(64, 64, [4, 5, 6]), solid(64, 64, [7, 8, 9])]]).unwrap();
    assert_eq!((grid.width(), grid.height()), grid_dimensions(1, 64, 64));
}

#[test]
fn grid_inputs_are_checked() {
    assert!(matches!(make_grid(&[]), Err(Error::Usage(_))));
    let mixed = [solid(64, 64, [0; 3]), solid(32, 32, [0; 3]), solid(64, 64, [0; 3])];
    assert!(make_grid(&[mixed]).is_err());
}

#[test]
fn png_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut img = RgbImage::new(37, 21);
    for (x, y, p) in img.enumerate_pixels_mut() {
        *p = Rgb([(x * 7) as u8, (y * 11) as u8, (x * y) as u8]);
    }
    let path = dir.path().join("grid.png");
    save_rgb(&path, &img).unwrap();
    assert_eq!(image::open(&path).unwrap().to_rgb8(), img);
    assert!(matches!(save_rgb(&dir.path().join("grid.jpg"), &img), Err(Error::Usage(_))));
}

#[test]
fn tensor_conversions_cover_the_byte_range() {
    let img = RgbImage::from_fn(16, 16, |x, y| Rgb([(x * 16 + y) as u8, 255 - (x * 16 + y) as u8, 0]));
    let t = rgb_to_tensor(&img);
    assert_eq!(t.shape(), &[3, 16, 16]);
    assert!(t.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    assert_eq!(tensor_to_rgb(&t).unwrap(), img);
    let clipped = tensor_to_rgb(&Tensor::full(&[3, 2, 2], 3.0f32)).unwrap();
    assert!(clipped.pixels().all(|p| p.0 == [255; 3]));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.png");
    save_image(&path, &t).unwrap();
    assert_eq!(load_image(&path, 16).unwrap(), t);
    // Non-square inputs are center-cropped before resizing.
    save_rgb(&path, &RgbImage::from_pixel(40, 20, Rgb([255, 0, 0]))).unwrap();
    let loaded = load_image(&path, 8).unwrap();
    assert_eq!(loaded.shape(), &[3, 8, 8]);
    assert!(matches!(load_image(&dir.path().join("none.png"), 8), Err(Error::Image { .. } | Error::Io { .. })));
}
