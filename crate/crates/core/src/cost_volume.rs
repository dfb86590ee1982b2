//! Displacement-limited matching costs between consecutive feature frames.

use crate::error::{Error, Result};
use crate::grid::{Cell, Grid3D};
use crate::scalar::Scalar;

/// Square search window of per-axis radius `d_max`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DisplacementWindow {
    pub d_max: usize,
}

impl DisplacementWindow {
    pub const fn new(d_max: usize) -> Self {
        DisplacementWindow { d_max }
    }

    /// Side length `2 d_max + 1`.
    pub fn side(&self) -> usize {
        2 * self.d_max + 1
    }

    /// Number of displacement slots `(2 d_max + 1)^2`.
    pub fn len(&self) -> usize {
        self.side() * self.side()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Slot index of displacement `(dx, dy)`.
    #[inline]
    pub fn slot(&self, dx: isize, dy: isize) -> usize {
        let d = self.d_max as isize;
        debug_assert!(dx.abs() <= d && dy.abs() <= d);
        ((dy + d) as usize) * self.side() + (dx + d) as usize
    }

    /// Displacement stored at slot `k`.
    #[inline]
    pub fn displacement(&self, k: usize) -> (isize, isize) {
        let d = self.d_max as isize;
        let s = self.side();
        ((k % s) as isize - d, (k / s) as isize - d)
    }

    /// Slot of the negated displacement.
    #[inline]
    pub fn mirror(&self, k: usize) -> usize {
        self.len() - 1 - k
    }
}

/// Values indexed by (previous-frame cell, displacement) with a geometric
/// validity mask: `valid(r', d)` iff `r' + d` lies on the grid.
///
/// Storage keeps one contiguous slab of `window.len()` slots per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementVolume<T> {
    width: usize,
    height: usize,
    window: DisplacementWindow,
    values: Vec<T>,
    valid: Vec<bool>,
}

pub type CostVolume<T> = DisplacementVolume<T>;

impl<T: Scalar> DisplacementVolume<T> {
    /// Volume of zeros with the geometric mask filled in.
    pub fn zeros(width: usize, height: usize, window: DisplacementWindow) -> Self {
        let m = window.len();
        let mut valid = vec![false; width * height * m];
        for y in 0..height {
            for x in 0..width {
                let base = (y * width + x) * m;
                for (k, v) in valid[base..base + m].iter_mut().enumerate() {
                    let (dx, dy) = window.displacement(k);
                    *v = Cell::new(x, y).offset(dx, dy, width, height).is_some();
                }
            }
        }
        DisplacementVolume {
            width,
            height,
            window,
            values: vec![T::zero(); width * height * m],
            valid,
        }
    }

    /// Same geometry, fresh values.
    pub(crate) fn with_values(&self, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        DisplacementVolume {
            width: self.width,
            height: self.height,
            window: self.window,
            values,
            valid: self.valid.clone(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn window(&self) -> DisplacementWindow {
        self.window
    }

    #[inline]
    pub fn offset_of(&self, cell: Cell, slot: usize) -> usize {
        (cell.y * self.width + cell.x) * self.window.len() + slot
    }

    #[inline]
    pub fn get(&self, cell: Cell, slot: usize) -> T {
        self.values[self.offset_of(cell, slot)]
    }

    #[inline]
    pub fn is_valid(&self, cell: Cell, slot: usize) -> bool {
        self.valid[self.offset_of(cell, slot)]
    }

    /// Values of all slots for one cell.
    pub fn row(&self, cell: Cell) -> &[T] {
        let i = self.offset_of(cell, 0);
        &self.values[i..i + self.window.len()]
    }

    pub fn row_valid(&self, cell: Cell) -> &[bool] {
        let i = self.offset_of(cell, 0);
        &self.valid[i..i + self.window.len()]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[cfg(test)]
    pub(crate) fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    /// Largest absolute difference over entries valid in both volumes.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.valid, other.valid, "volumes differ in geometry");
        self.values
            .iter()
            .zip(&other.values)
            .zip(&self.valid)
            .filter(|(_, &v)| v)
            .map(|((&a, &b), _)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn cast<U: Scalar>(&self) -> DisplacementVolume<U> {
        DisplacementVolume {
            width: self.width,
            height: self.height,
            window: self.window,
            values: self.values.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
            valid: self.valid.clone(),
        }
    }
}

fn check_pair<T: Scalar>(a: &Grid3D<T>, b: &Grid3D<T>) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::shape(format!(
            "feature frames differ: {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    Ok(())
}

/// Correlation of the `3x3` windows around `r_prev` and `r_curr`, zero padded,
/// divided by `9 * D`.
pub fn window_correlation<T: Scalar>(
    x_prev: &Grid3D<T>,
    x_curr: &Grid3D<T>,
    r_prev: Cell,
    r_curr: Cell,
) -> Result<T> {
    check_pair(x_prev, x_curr)?;
    let (w, h) = (x_prev.width(), x_prev.height());
    if r_prev.x >= w || r_prev.y >= h || r_curr.x >= w || r_curr.y >= h {
        return Err(Error::shape("correlation cell outside the grid"));
    }
    let mut acc = T::zero();
    for oy in -1..=1 {
        for ox in -1..=1 {
            let (Some(a), Some(b)) = (r_prev.offset(ox, oy, w, h), r_curr.offset(ox, oy, w, h))
            else {
                continue;
            };
            acc += dot(x_prev.cell(a), x_curr.cell(b));
        }
    }
    Ok(acc / T::lit(9.0 * x_prev.channels() as f64))
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

/// Partial cost volume over the displacement window.
///
/// Computed per displacement: first the pointwise feature products, then a
/// `3x3` box sum over them, which equals the windowed correlation.
pub fn build_cost_volume<T: Scalar>(
    x_prev: &Grid3D<T>,
    x_curr: &Grid3D<T>,
    window: DisplacementWindow,
) -> Result<CostVolume<T>> {
    check_pair(x_prev, x_curr)?;
    let (w, h) = (x_prev.width(), x_prev.height());
    let m = window.len();
    let scale = T::one() / T::lit(9.0 * x_prev.channels() as f64);
    let mut cv = CostVolume::zeros(w, h, window);
    let mut products = vec![T::zero(); w * h];
    let mut rows = vec![T::zero(); w * h];
    for k in 0..m {
        let (dx, dy) = window.displacement(k);
        products.iter_mut().for_each(|p| *p = T::zero());
        for y in 0..h {
            for x in 0..w {
                let q = Cell::new(x, y);
                if let Some(t) = q.offset(dx, dy, w, h) {
                    products[y * w + x] = dot(x_prev.cell(q), x_curr.cell(t));
                }
            }
        }
        // separable box sum: horizontal then vertical
        for y in 0..h {
            for x in 0..w {
                let mut s = products[y * w + x];
                if x > 0 {
                    s += products[y * w + x - 1];
                }
                if x + 1 < w {
                    s += products[y * w + x + 1];
                }
                rows[y * w + x] = s;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let i = (y * w + x) * m + k;
                if !cv.valid[i] {
                    continue;
                }
                let mut s = rows[y * w + x];
                if y > 0 {
                    s += rows[(y - 1) * w + x];
                }
                if y + 1 < h {
                    s += rows[(y + 1) * w + x];
                }
                cv.values[i] = s * scale;
            }
        }
    }
    Ok(cv)
}

/// Literal quadruple-loop construction used as a reference.
pub fn cost_volume_oracle<T: Scalar>(
    x_prev: &Grid3D<T>,
    x_curr: &Grid3D<T>,
    window: DisplacementWindow,
) -> Result<CostVolume<T>> {
    check_pair(x_prev, x_curr)?;
    let (w, h) = (x_prev.width(), x_prev.height());
    let mut cv = CostVolume::zeros(w, h, window);
    let d = window.d_max as isize;
    for py in 0..h {
        for px in 0..w {
            for dy in -d..=d {
                for dx in -d..=d {
                    let cx = px as isize + dx;
                    let cy = py as isize + dy;
                    if cx < 0 || cy < 0 || cx >= w as isize || cy >= h as isize {
                        continue;
                    }
                    let mut acc = T::zero();
                    for oy in -1isize..=1 {
                        for ox in -1isize..=1 {
                            let (ax, ay) = (px as isize + ox, py as isize + oy);
                            let (bx, by) = (cx + ox, cy + oy);
                            let inside = |x: isize, y: isize| {
                                x >= 0 && y >= 0 && x < w as isize && y < h as isize
                            };
                            if !inside(ax, ay) || !inside(bx, by) {
                                continue;
                            }
                            for c in 0..x_prev.channels() {
                                acc += x_prev.get(Cell::new(ax as usize, ay as usize), c)
                                    * x_curr.get(Cell::new(bx as usize, by as usize), c);
                            }
                        }
                    }
                    let i = cv.offset_of(Cell::new(px, py), window.slot(dx, dy));
                    cv.values[i] = acc / T::lit(9.0 * x_prev.channels() as f64);
                }
            }
        }
    }
    Ok(cv)
}
