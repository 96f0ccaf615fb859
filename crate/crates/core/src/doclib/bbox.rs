use serde::{Deserialize, Serialize};

use super::DocError;

/// Upper bound of normalized layout coordinates.
pub const LAYOUT_MAX: u32 = 1000;

/// Axis-aligned box in normalized layout units `[0, 1000]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub const ZERO: BBox = BBox { x0: 0, y0: 0, x1: 0, y1: 0 };
    pub const FULL: BBox = BBox { x0: 0, y0: 0, x1: LAYOUT_MAX, y1: LAYOUT_MAX };

    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self, DocError> {
        if x0 > x1 || y0 > y1 {
            return Err(DocError::InvertedBox([x0, y0, x1, y1]));
        }
        if x1 > LAYOUT_MAX || y1 > LAYOUT_MAX {
            return Err(DocError::BoxOutOfRange([x0, y0, x1, y1]));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    /// Center in layout units (may be a half-integer).
    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) as f64 / 2.0, (self.y0 + self.y1) as f64 / 2.0)
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && other.x1 <= self.x1 && other.y1 <= self.y1
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    pub fn overlaps(&self, other: &BBox) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }

    pub fn to_array(self) -> [u32; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }

    /// Pixel rectangle `[x0, x1) × [y0, y1)` covering this box on a
    /// `size × size` raster. Degenerate boxes cover at least one pixel.
    pub fn pixel_span(&self, size: usize) -> (usize, usize, usize, usize) {
        let lo = |c: u32| (c as usize * size / LAYOUT_MAX as usize).min(size - 1);
        let hi = |c: u32, lo: usize| (c as usize * size).div_ceil(LAYOUT_MAX as usize).clamp(lo + 1, size);
        let (px0, py0) = (lo(self.x0), lo(self.y0));
        (px0, py0, hi(self.x1, px0), hi(self.y1, py0))
    }
}

impl TryFrom<[u32; 4]> for BBox {
    type Error = DocError;
    fn try_from(a: [u32; 4]) -> Result<Self, DocError> {
        BBox::new(a[0], a[1], a[2], a[3])
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

/// Maps a pixel-space box onto layout units with `floor(c·1000/dim)`,
/// clamped to `[0, 1000]`.
pub fn normalize_bbox(pixel_box: [u32; 4], page_w: u32, page_h: u32) -> Result<BBox, DocError> {
    let [x0, y0, x1, y1] = pixel_box;
    if page_w == 0 || page_h == 0 {
        return Err(DocError::EmptyPage(format!("page dimensions {page_w}x{page_h}")));
    }
    if x0 > x1 || y0 > y1 {
        return Err(DocError::InvertedBox(pixel_box));
    }
    if x1 > page_w || y1 > page_h {
        return Err(DocError::BoxOutOfRange(pixel_box));
    }
    let scale = |c: u32, dim: u32| ((c as u64 * LAYOUT_MAX as u64) / dim as u64).min(LAYOUT_MAX as u64) as u32;
    BBox::new(scale(x0, page_w), scale(y0, page_h), scale(x1, page_w), scale(y1, page_h))
}

/// Grid partition of the layout square, `rows × cols` cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridConfig {
    pub rows: usize,
    pub cols: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { rows: 7, cols: 7 }
    }
}

impl GridConfig {
    pub fn new(rows: usize, cols: usize) -> Result<Self, DocError> {
        if rows == 0 || cols == 0 || rows * cols < 2 {
            return Err(DocError::InvalidGrid { rows, cols });
        }
        Ok(Self { rows, cols })
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Layout box of cell `index` (row-major).
    pub fn cell_box(&self, index: usize) -> BBox {
        let (r, c) = (index / self.cols, index % self.cols);
        let m = LAYOUT_MAX as usize;
        BBox {
            x0: (c * m / self.cols) as u32,
            y0: (r * m / self.rows) as u32,
            x1: ((c + 1) * m / self.cols) as u32,
            y1: ((r + 1) * m / self.rows) as u32,
        }
    }
}

/// Grid cell of the box center: `row·cols + col`, with row and col computed
/// as `floor(c·n/1000)` and clamped to the last cell.
pub fn assign_grid(bbox: &BBox, grid: &GridConfig) -> usize {
    let (cx, cy) = bbox.center();
    let cell = |c: f64, n: usize| ((c * n as f64 / LAYOUT_MAX as f64).floor() as usize).min(n - 1);
    cell(cy, grid.rows) * grid.cols + cell(cx, grid.cols)
}
