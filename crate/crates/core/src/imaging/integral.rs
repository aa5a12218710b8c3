use super::GrayImage;
use crate::error::{Error, Result};

/// Summed-area table with a zero guard row and column.
///
/// `table[i * (width + 1) + j]` holds the sum of all pixels with row < i and
/// col < j.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    table: Vec<u64>,
}

impl IntegralImage {
    pub fn new(img: &GrayImage) -> Self {
        let (w, h) = (img.width(), img.height());
        let stride = w + 1;
        let mut table = vec![0u64; stride * (h + 1)];
        for y in 0..h {
            let mut row_sum = 0u64;
            for x in 0..w {
                row_sum += img.get(x, y) as u64;
                table[(y + 1) * stride + x + 1] = table[y * stride + x + 1] + row_sum;
            }
        }
        Self {
            width: w,
            height: h,
            table,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Table entry for `row` rows and `col` columns; both may equal the image size.
    #[inline]
    pub fn at(&self, row: usize, col: usize) -> u64 {
        self.table[row * (self.width + 1) + col]
    }

    /// Exact sum of the `w x h` rectangle whose top-left pixel is `(x, y)`.
    pub fn box_sum(&self, x: usize, y: usize, w: usize, h: usize) -> Result<f64> {
        if x + w > self.width || y + h > self.height {
            return Err(Error::OutOfBounds {
                x,
                y,
                w,
                h,
                width: self.width,
                height: self.height,
            });
        }
        Ok(self.rect_sum(x, y, x + w, y + h) as f64)
    }

    #[inline]
    fn rect_sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> u64 {
        self.at(y1, x1) + self.at(y0, x0) - self.at(y0, x1) - self.at(y1, x0)
    }

    /// Sum over the half-open rectangle `[x0, x1) x [y0, y1)` after clipping it
    /// to the image. Used by the box filters, which routinely straddle borders.
    #[inline]
    pub(crate) fn sum_clipped(&self, x0: i64, y0: i64, x1: i64, y1: i64) -> f64 {
        let cx0 = x0.clamp(0, self.width as i64) as usize;
        let cx1 = x1.clamp(0, self.width as i64) as usize;
        let cy0 = y0.clamp(0, self.height as i64) as usize;
        let cy1 = y1.clamp(0, self.height as i64) as usize;
        if cx0 >= cx1 || cy0 >= cy1 {
            return 0.0;
        }
        self.rect_sum(cx0, cy0, cx1, cy1) as f64
    }
}
