use rand::Rng;

use crate::imaging::GrayImage;

/// Textured random scene: two octaves of value noise under a few dozen
/// discs, rectangles and strokes, plus pixel grain.
pub fn procedural_image<R: Rng>(width: usize, height: usize, rng: &mut R) -> GrayImage {
    let mut buf = vec![rng.random_range(90.0..170.0f32); width * height];

    for (cells, amp) in [(4usize, 55.0f32), (11, 25.0)] {
        let grid: Vec<f32> = (0..(cells + 1) * (cells + 1)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = |i: usize, j: usize| grid[j * (cells + 1) + i];
        for y in 0..height {
            let fy = y as f32 / height as f32 * cells as f32;
            let (j, ty) = (fy as usize, fy.fract());
            for x in 0..width {
                let fx = x as f32 / width as f32 * cells as f32;
                let (i, tx) = (fx as usize, fx.fract());
                let top = g(i, j) * (1.0 - tx) + g(i + 1, j) * tx;
                let bottom = g(i, j + 1) * (1.0 - tx) + g(i + 1, j + 1) * tx;
                buf[y * width + x] += amp * (top * (1.0 - ty) + bottom * ty);
            }
        }
    }

    let side = width.min(height) as f32;
    let shapes = rng.random_range(30..60);
    for _ in 0..shapes {
        let value = rng.random_range(0.0..255.0f32);
        let alpha = rng.random_range(0.6..1.0f32);
        let cx = rng.random_range(0.0..width as f32);
        let cy = rng.random_range(0.0..height as f32);
        let (x0, y0, x1, y1, inside): (f32, f32, f32, f32, Box<dyn Fn(f32, f32) -> bool>) = match rng.random_range(0..3) {
            0 => {
                let r = rng.random_range(3.0..(side / 8.0).max(4.0));
                (cx - r, cy - r, cx + r, cy + r, Box::new(move |x, y| (x - cx).powi(2) + (y - cy).powi(2) <= r * r))
            }
            1 => {
                let hw = rng.random_range(2.0..(side / 8.0).max(3.0));
                let hh = rng.random_range(2.0..(side / 8.0).max(3.0));
                (cx - hw, cy - hh, cx + hw, cy + hh, Box::new(|_, _| true))
            }
            _ => {
                let len = rng.random_range(side / 10.0..side / 3.0);
                let ang = rng.random_range(0.0..std::f32::consts::PI);
                let (dx, dy) = (len * ang.cos(), len * ang.sin());
                let t = rng.random_range(1.0..3.0f32);
                let (ex, ey) = (cx + dx, cy + dy);
                let inside = move |x: f32, y: f32| {
                    let s = (((x - cx) * dx + (y - cy) * dy) / (len * len)).clamp(0.0, 1.0);
                    let (px, py) = (cx + s * dx, cy + s * dy);
                    (x - px).powi(2) + (y - py).powi(2) <= t * t
                };
                (cx.min(ex) - t, cy.min(ey) - t, cx.max(ex) + t, cy.max(ey) + t, Box::new(inside))
            }
        };
        let xs = x0.max(0.0) as usize..(x1.ceil().max(0.0) as usize).min(width);
        let ys = y0.max(0.0) as usize..(y1.ceil().max(0.0) as usize).min(height);
        for y in ys {
            for x in xs.clone() {
                if inside(x as f32, y as f32) {
                    let p = &mut buf[y * width + x];
                    *p = *p * (1.0 - alpha) + value * alpha;
                }
            }
        }
    }

    let data = buf
        .into_iter()
        .map(|v| (v + rng.random_range(-3.0..3.0f32)).round().clamp(0.0, 255.0) as u8)
        .collect();
    GrayImage::new(width, height, data).expect("non-empty canvas")
}
