//! Dense grid primitives shared by every stage of the tracker.
//!
//! Layout conventions: cells are addressed `(x, y)` with `y` major, and
//! multi-channel grids store channels innermost, so the values of one cell
//! are a contiguous slice.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Integer grid cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Cell { x, y }
    }

    /// Chebyshev (L-infinity) distance.
    pub fn chebyshev(self, other: Cell) -> usize {
        self.x.abs_diff(other.x).max(self.y.abs_diff(other.y))
    }

    /// Continuous coordinates of the cell center.
    pub fn point<T: Scalar>(self) -> Point<T> {
        Point::new(T::lit(self.x as f64), T::lit(self.y as f64))
    }

    /// Cell displaced by `(dx, dy)` if the result lies inside `width x height`.
    #[inline]
    pub fn offset(self, dx: isize, dy: isize, width: usize, height: usize) -> Option<Cell> {
        let x = self.x as isize + dx;
        let y = self.y as isize + dy;
        (x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height)
            .then(|| Cell::new(x as usize, y as usize))
    }
}

/// Continuous grid coordinates; integer values coincide with cell centers.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Point<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point<T> {
    pub fn new(x: T, y: T) -> Self {
        Point { x, y }
    }

    pub fn dist2(self, other: Point<T>) -> T {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    /// Nearest cell, if inside the grid.
    pub fn nearest_cell(self, width: usize, height: usize) -> Option<Cell> {
        let x = self.x.round().to_f64_lossy();
        let y = self.y.round().to_f64_lossy();
        (x >= 0.0 && y >= 0.0 && x < width as f64 && y < height as f64)
            .then(|| Cell::new(x as usize, y as usize))
    }
}

fn check_finite<T: Scalar>(values: &[T], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("{what} at index {i}"))),
        None => Ok(()),
    }
}

/// Single-channel `W x H` field.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid2D<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Scalar> Grid2D<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::shape("grid dimensions must be positive"));
        }
        if data.len() != width * height {
            return Err(Error::shape(format!(
                "expected {} values for a {width}x{height} grid, got {}",
                width * height,
                data.len()
            )));
        }
        check_finite(&data, "grid value")?;
        Ok(Grid2D { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        assert!(width > 0 && height > 0, "grid dimensions must be positive");
        Grid2D {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, T::zero())
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(Cell) -> T) -> Self {
        assert!(width > 0 && height > 0, "grid dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(Cell::new(x, y)));
            }
        }
        Grid2D { width, height, data }
    }

    /// Wraps already-validated values produced inside the crate.
    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Grid2D { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, cell: Cell) -> usize {
        cell.y * self.width + cell.x
    }

    #[inline]
    pub fn cell_of(&self, index: usize) -> Cell {
        Cell::new(index % self.width, index / self.width)
    }

    #[inline]
    pub fn get(&self, cell: Cell) -> T {
        self.data[self.index(cell)]
    }

    #[inline]
    pub fn set(&mut self, cell: Cell, value: T) {
        let i = self.index(cell);
        self.data[i] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn same_shape(&self, other: &Grid2D<T>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn max(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn min(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn mean(&self) -> T {
        self.data.iter().copied().sum::<T>() / T::lit(self.data.len() as f64)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Grid2D::from_raw(self.width, self.height, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise product; panics on shape mismatch.
    pub fn hadamard(&self, other: &Grid2D<T>) -> Self {
        assert!(self.same_shape(other), "hadamard: shape mismatch");
        Grid2D::from_raw(
            self.width,
            self.height,
            self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).collect(),
        )
    }

    pub fn cast<U: Scalar>(&self) -> Grid2D<U> {
        Grid2D::from_raw(
            self.width,
            self.height,
            self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        )
    }
}

/// Multi-channel `W x H x C` field, channels innermost.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid3D<T> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> Grid3D<T> {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::shape("grid dimensions must be positive"));
        }
        if data.len() != width * height * channels {
            return Err(Error::shape(format!(
                "expected {} values for a {width}x{height}x{channels} grid, got {}",
                width * height * channels,
                data.len()
            )));
        }
        check_finite(&data, "grid value")?;
        Ok(Grid3D {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        assert!(width > 0 && height > 0 && channels > 0, "grid dimensions must be positive");
        Grid3D {
            width,
            height,
            channels,
            data: vec![T::zero(); width * height * channels],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(Cell, usize) -> T,
    ) -> Self {
        let mut g = Self::zeros(width, height, channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    let i = (y * width + x) * channels + c;
                    g.data[i] = f(Cell::new(x, y), c);
                }
            }
        }
        g
    }

    pub(crate) fn from_raw(width: usize, height: usize, channels: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), width * height * channels);
        Grid3D {
            width,
            height,
            channels,
            data,
        }
    }

    /// Stacks single-channel grids along the channel axis.
    pub fn stack(planes: &[&Grid2D<T>]) -> Result<Self> {
        let first = planes.first().ok_or_else(|| Error::shape("stack of zero planes"))?;
        if planes.iter().any(|p| !p.same_shape(first)) {
            return Err(Error::shape("stacked planes differ in size"));
        }
        let (w, h, c) = (first.width, first.height, planes.len());
        let mut data = Vec::with_capacity(w * h * c);
        for i in 0..w * h {
            data.extend(planes.iter().map(|p| p.data[i]));
        }
        Ok(Grid3D::from_raw(w, h, c, data))
    }

    /// Concatenates along the channel axis, in argument order.
    pub fn concat(parts: &[&Grid3D<T>]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::shape("concat of zero grids"))?;
        if parts
            .iter()
            .any(|p| p.width != first.width || p.height != first.height)
        {
            return Err(Error::shape("concatenated grids differ in size"));
        }
        let (w, h) = (first.width, first.height);
        let c: usize = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(w * h * c);
        for i in 0..w * h {
            for p in parts {
                data.extend_from_slice(&p.data[i * p.channels..(i + 1) * p.channels]);
            }
        }
        Ok(Grid3D::from_raw(w, h, c, data))
    }

    pub fn from_plane(plane: &Grid2D<T>) -> Self {
        Grid3D::from_raw(plane.width, plane.height, 1, plane.data.clone())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn same_shape(&self, other: &Grid3D<T>) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    #[inline]
    pub fn get(&self, cell: Cell, channel: usize) -> T {
        self.data[(cell.y * self.width + cell.x) * self.channels + channel]
    }

    #[inline]
    pub fn set(&mut self, cell: Cell, channel: usize, value: T) {
        let i = (cell.y * self.width + cell.x) * self.channels + channel;
        self.data[i] = value;
    }

    /// All channel values of one cell.
    #[inline]
    pub fn cell(&self, cell: Cell) -> &[T] {
        let i = (cell.y * self.width + cell.x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn cell_mut(&mut self, cell: Cell) -> &mut [T] {
        let i = (cell.y * self.width + cell.x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn channel(&self, c: usize) -> Grid2D<T> {
        assert!(c < self.channels, "channel out of range");
        Grid2D::from_raw(
            self.width,
            self.height,
            self.data.iter().skip(c).step_by(self.channels).copied().collect(),
        )
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Grid3D::from_raw(
            self.width,
            self.height,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn max_abs_diff(&self, other: &Grid3D<T>) -> T {
        assert!(self.same_shape(other), "max_abs_diff: shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn cast<U: Scalar>(&self) -> Grid3D<U> {
        Grid3D::from_raw(
            self.width,
            self.height,
            self.channels,
            self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::None => v,
            Activation::Relu => v.max(T::zero()),
            Activation::Sigmoid => sigmoid(v),
            Activation::Tanh => v.tanh(),
        }
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// Per-channel normalization applied between convolution and activation.
#[derive(Clone, Debug, PartialEq)]
pub enum Norm<T> {
    None,
    /// Inference-mode batch norm with folded statistics.
    Affine { scale: Vec<T>, shift: Vec<T> },
}

/// One `3x3` same-padded convolution, optional affine norm, then activation.
///
/// Kernel layout is `[ky][kx][c_in][c_out]`, so the output channels for one
/// tap and one input channel are contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlockParams<T> {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
    pub norm: Norm<T>,
}

impl<T: Scalar> ConvBlockParams<T> {
    pub fn zeros(c_in: usize, c_out: usize, activation: Activation) -> Self {
        ConvBlockParams {
            c_in,
            c_out,
            kernel: vec![T::zero(); 9 * c_in * c_out],
            bias: vec![T::zero(); c_out],
            activation,
            norm: Norm::None,
        }
    }

    /// Same as [`zeros`](Self::zeros) with an identity affine norm attached.
    pub fn zeros_with_affine(c_in: usize, c_out: usize, activation: Activation) -> Self {
        let mut p = Self::zeros(c_in, c_out, activation);
        p.norm = Norm::Affine {
            scale: vec![T::one(); c_out],
            shift: vec![T::zero(); c_out],
        };
        p
    }

    #[inline]
    pub fn kernel_index(&self, ky: usize, kx: usize, ci: usize, co: usize) -> usize {
        ((ky * 3 + kx) * self.c_in + ci) * self.c_out + co
    }

    pub fn weight(&self, ky: usize, kx: usize, ci: usize, co: usize) -> T {
        self.kernel[self.kernel_index(ky, kx, ci, co)]
    }

    pub fn set_weight(&mut self, ky: usize, kx: usize, ci: usize, co: usize, v: T) {
        let i = self.kernel_index(ky, kx, ci, co);
        self.kernel[i] = v;
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.c_out == 0 {
            return Err(Error::shape("conv block needs at least one channel"));
        }
        if self.kernel.len() != 9 * self.c_in * self.c_out {
            return Err(Error::shape(format!(
                "kernel has {} values, expected 3x3x{}x{}",
                self.kernel.len(),
                self.c_in,
                self.c_out
            )));
        }
        if self.bias.len() != self.c_out {
            return Err(Error::shape("bias length differs from output channels"));
        }
        check_finite(&self.kernel, "kernel")?;
        check_finite(&self.bias, "bias")?;
        if let Norm::Affine { scale, shift } = &self.norm {
            if scale.len() != self.c_out || shift.len() != self.c_out {
                return Err(Error::shape("affine norm length differs from output channels"));
            }
            check_finite(scale, "norm scale")?;
            check_finite(shift, "norm shift")?;
        }
        Ok(())
    }

    /// Number of scalar parameters, norm included.
    pub fn param_count(&self) -> usize {
        let norm = match &self.norm {
            Norm::None => 0,
            Norm::Affine { scale, shift } => scale.len() + shift.len(),
        };
        self.kernel.len() + self.bias.len() + norm
    }

    pub fn cast<U: Scalar>(&self) -> ConvBlockParams<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::lit(x.to_f64_lossy())).collect::<Vec<U>>();
        ConvBlockParams {
            c_in: self.c_in,
            c_out: self.c_out,
            kernel: c(&self.kernel),
            bias: c(&self.bias),
            activation: self.activation,
            norm: match &self.norm {
                Norm::None => Norm::None,
                Norm::Affine { scale, shift } => Norm::Affine {
                    scale: c(scale),
                    shift: c(shift),
                },
            },
        }
    }

    /// Applies norm and activation to one cell's raw convolution sums.
    #[inline]
    fn finish(&self, acc: &mut [T]) {
        if let Norm::Affine { scale, shift } = &self.norm {
            for ((a, &s), &b) in acc.iter_mut().zip(scale).zip(shift) {
                *a = *a * s + b;
            }
        }
        if self.activation != Activation::None {
            for a in acc.iter_mut() {
                *a = self.activation.apply(*a);
            }
        }
    }
}

/// Raw same-padded convolution over a channels-innermost buffer.
///
/// `input` holds `width * height * c_in` values, `out` receives
/// `width * height * c_out`. No shape checks beyond debug assertions.
pub(crate) fn conv3x3_into<T: Scalar>(
    input: &[T],
    width: usize,
    height: usize,
    p: &ConvBlockParams<T>,
    out: &mut [T],
) {
    let (cin, cout) = (p.c_in, p.c_out);
    debug_assert_eq!(input.len(), width * height * cin);
    debug_assert_eq!(out.len(), width * height * cout);
    for y in 0..height {
        for x in 0..width {
            let o = (y * width + x) * cout;
            let acc = &mut out[o..o + cout];
            acc.copy_from_slice(&p.bias);
            for ky in 0..3 {
                let sy = y + ky;
                if sy < 1 || sy > height {
                    continue;
                }
                let sy = sy - 1;
                for kx in 0..3 {
                    let sx = x + kx;
                    if sx < 1 || sx > width {
                        continue;
                    }
                    let sx = sx - 1;
                    let i = (sy * width + sx) * cin;
                    let cell = &input[i..i + cin];
                    let tap = (ky * 3 + kx) * cin * cout;
                    for (ci, &v) in cell.iter().enumerate() {
                        if v == T::zero() {
                            continue;
                        }
                        let w = &p.kernel[tap + ci * cout..tap + (ci + 1) * cout];
                        for (a, &k) in acc.iter_mut().zip(w) {
                            *a += v * k;
                        }
                    }
                }
            }
            p.finish(acc);
        }
    }
}

/// `3x3` convolution with zero padding, followed by norm and activation.
pub fn conv2d_same<T: Scalar>(input: &Grid3D<T>, params: &ConvBlockParams<T>) -> Result<Grid3D<T>> {
    params.validate()?;
    if input.channels() != params.c_in {
        return Err(Error::shape(format!(
            "conv expects {} input channels, got {}",
            params.c_in,
            input.channels()
        )));
    }
    let (w, h) = (input.width(), input.height());
    let mut out = vec![T::zero(); w * h * params.c_out];
    conv3x3_into(input.as_slice(), w, h, params, &mut out);
    Ok(Grid3D::from_raw(w, h, params.c_out, out))
}

/// Softmax over the entries with `support[i] == true`; the rest map to 0.
pub fn stable_softmax<T: Scalar>(values: &[T], support: &[bool]) -> Result<Vec<T>> {
    if values.len() != support.len() {
        return Err(Error::shape("softmax values and support differ in length"));
    }
    let mut out = values.to_vec();
    if !softmax_in_place(&mut out, support) {
        return Err(Error::EmptySupport);
    }
    Ok(out)
}

/// Max-subtracted softmax in place. Returns false when nothing is supported.
pub(crate) fn softmax_in_place<T: Scalar>(values: &mut [T], support: &[bool]) -> bool {
    let mut max = T::neg_infinity();
    for (&v, &s) in values.iter().zip(support) {
        if s && v > max {
            max = v;
        }
    }
    if max == T::neg_infinity() {
        return false;
    }
    let mut total = T::zero();
    for (v, &s) in values.iter_mut().zip(support) {
        if s {
            *v = (*v - max).exp();
            total += *v;
        } else {
            *v = T::zero();
        }
    }
    for (v, &s) in values.iter_mut().zip(support) {
        if s {
            *v /= total;
        }
    }
    true
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelConfig<T> {
    /// Gaussian standard deviation in cells.
    pub sigma: T,
    pub peak: T,
}

impl<T: Scalar> Default for LabelConfig<T> {
    fn default() -> Self {
        LabelConfig {
            sigma: T::lit(0.9),
            peak: T::one(),
        }
    }
}

impl<T: Scalar> LabelConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > T::zero()) || !self.sigma.is_finite() {
            return Err(Error::config("label sigma must be positive"));
        }
        Ok(())
    }
}

/// `peak * exp(-|r - center|^2 / (2 sigma^2))` at every cell.
pub fn gaussian_label_map<T: Scalar>(
    center: Point<T>,
    cfg: &LabelConfig<T>,
    width: usize,
    height: usize,
) -> Grid2D<T> {
    let denom = T::lit(2.0) * cfg.sigma * cfg.sigma;
    Grid2D::from_fn(width, height, |c| {
        cfg.peak * (-c.point::<T>().dist2(center) / denom).exp()
    })
}

/// Default lower bound of [`hann_window`].
pub const WINDOW_FLOOR: f64 = 0.05;

/// Separable raised-cosine prior centered at `center`, floored at `floor`.
///
/// The half-width along each axis is half the grid extent; beyond it the
/// profile is zero before flooring.
pub fn hann_window<T: Scalar>(width: usize, height: usize, center: Point<T>, floor: T) -> Grid2D<T> {
    let profile = |d: T, half: T| {
        let t = (d.abs() / half).min(T::one());
        T::lit(0.5) * (T::one() + (T::lit(std::f64::consts::PI) * t).cos())
    };
    let hx = T::lit(width as f64 / 2.0).max(T::one());
    let hy = T::lit(height as f64 / 2.0).max(T::one());
    Grid2D::from_fn(width, height, |c| {
        let p = c.point::<T>();
        let v = profile(p.x - center.x, hx) * profile(p.y - center.y, hy);
        v.max(floor).min(T::one())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> Grid3D<f64> {
        Grid3D::from_fn(w, h, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn random_block(rng: &mut ChaCha8Rng, cin: usize, cout: usize) -> ConvBlockParams<f64> {
        let mut p = ConvBlockParams::zeros(cin, cout, Activation::None);
        p.kernel.iter_mut().for_each(|k| *k = rng.gen_range(-1.0..1.0));
        p.bias.iter_mut().for_each(|b| *b = rng.gen_range(-1.0..1.0));
        p
    }

    /// Direct nested-loop convolution, independent of the kernel layout trick.
    fn direct_conv(input: &Grid3D<f64>, p: &ConvBlockParams<f64>) -> Grid3D<f64> {
        let (w, h) = (input.width() as isize, input.height() as isize);
        Grid3D::from_fn(input.width(), input.height(), p.c_out, |cell, co| {
            let mut s = p.bias[co];
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (sx, sy) = (cell.x as isize + dx, cell.y as isize + dy);
                    if sx < 0 || sy < 0 || sx >= w || sy >= h {
                        continue;
                    }
                    for ci in 0..p.c_in {
                        s += input.get(Cell::new(sx as usize, sy as usize), ci)
                            * p.weight((dy + 1) as usize, (dx + 1) as usize, ci, co);
                    }
                }
            }
            s
        })
    }

    #[test]
    fn centered_identity_kernel_reproduces_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_grid(&mut rng, 6, 5, 1);
        let mut p = ConvBlockParams::zeros(1, 1, Activation::None);
        p.set_weight(1, 1, 0, 0, 1.0);
        assert_eq!(conv2d_same(&x, &p).unwrap(), x);
    }

    #[test]
    fn zero_kernel_gives_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_grid(&mut rng, 4, 4, 2);
        let mut p = ConvBlockParams::zeros(2, 3, Activation::None);
        p.bias = vec![0.5, -1.0, 2.0];
        let y = conv2d_same(&x, &p).unwrap();
        for cell in (0..16).map(|i| Cell::new(i % 4, i / 4)) {
            assert_eq!(y.cell(cell), &[0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn conv_matches_direct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (w, h) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
            let (cin, cout) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
            let x = random_grid(&mut rng, w, h, cin);
            let p = random_block(&mut rng, cin, cout);
            let got = conv2d_same(&x, &p).unwrap();
            assert!(got.max_abs_diff(&direct_conv(&x, &p)) <= 1e-12);
        }
        let x = random_grid(&mut rng, 5, 5, 2);
        let p = random_block(&mut rng, 2, 3);
        assert!(conv2d_same(&x, &p).unwrap().max_abs_diff(&direct_conv(&x, &p)) <= 1e-6);
    }

    #[test]
    fn conv_applies_norm_then_activation() {
        let x = Grid3D::from_fn(3, 3, 1, |_, _| -2.0);
        let mut p = ConvBlockParams::zeros_with_affine(1, 1, Activation::Relu);
        p.set_weight(1, 1, 0, 0, 1.0);
        p.norm = Norm::Affine {
            scale: vec![-1.0],
            shift: vec![0.5],
        };
        let y = conv2d_same(&x, &p).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Grid3D::<f64>::zeros(3, 3, 2);
        let p = ConvBlockParams::zeros(3, 1, Activation::None);
        assert!(matches!(conv2d_same(&x, &p), Err(Error::Shape(_))));
    }

    #[test]
    fn softmax_closed_forms() {
        let s = stable_softmax(&[0.0, 3f64.ln()], &[true, true]).unwrap();
        assert!((s[0] - 0.25).abs() < 1e-12 && (s[1] - 0.75).abs() < 1e-12);

        let s = stable_softmax(&[1000.0, 1001.0], &[true, true]).unwrap();
        let e = std::f64::consts::E;
        assert!((s[0] - 1.0 / (1.0 + e)).abs() < 1e-12);
        assert!((s[1] - e / (1.0 + e)).abs() < 1e-12);

        let s = stable_softmax(&[2.0f64; 5], &[true, false, true, true, false]).unwrap();
        assert_eq!(s[1], 0.0);
        assert_eq!(s[4], 0.0);
        for i in [0, 2, 3] {
            assert!((s[i] - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_empty_support() {
        assert!(matches!(
            stable_softmax(&[1.0, 2.0], &[false, false]),
            Err(Error::EmptySupport)
        ));
    }

    #[test]
    fn label_map_peak_and_decay() {
        let cfg = LabelConfig { sigma: 1.5, peak: 1.0 };
        let z = gaussian_label_map(Point::new(4.0, 3.0), &cfg, 9, 7);
        assert_eq!(z.get(Cell::new(4, 3)), 1.0);
        let (argmax, _) = z
            .as_slice()
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
        assert_eq!(z.cell_of(argmax), Cell::new(4, 3));
        // a cell at distance sigma along an axis is not on the grid for 1.5,
        // so check the closed form directly
        let at = z.get(Cell::new(5, 3));
        assert!((at - (-1.0f64 / (2.0 * 2.25)).exp()).abs() < 1e-12);
        assert!((z.get(Cell::new(2, 1)) - z.get(Cell::new(6, 5))).abs() < 1e-15);

        let unit = LabelConfig { sigma: 1.0f64, peak: 1.0 };
        let z = gaussian_label_map(Point::new(2.0, 2.0), &unit, 5, 5);
        assert!((z.get(Cell::new(3, 2)) - 0.606_530_659_712_633_4).abs() < 1e-12);
    }

    #[test]
    fn hann_window_shape() {
        let w = hann_window(18, 18, Point::new(8.0, 9.0), 0.05);
        assert_eq!(w.get(Cell::new(8, 9)), 1.0);
        assert_eq!(w.get(Cell::new(17, 0)), 0.05);
        assert!(w.min() >= 0.05 && w.max() <= 1.0);
        for d in 1..8 {
            assert_eq!(w.get(Cell::new(8 + d, 9)), w.get(Cell::new(8 - d, 9)));
            assert_eq!(w.get(Cell::new(8, 9 + d)), w.get(Cell::new(8, 9 - d)));
        }
    }
}
