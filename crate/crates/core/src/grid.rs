//! Density grids: empirical-measure histograms, truncated-Gaussian
//! smoothing, and marginals. Grids cover either position space (d axes)
//! or phase space (2d axes); masses are nonnegative and sum to the stated
//! total, with mass falling outside the box tracked as a clipped-mass
//! diagnostic rather than silently dropped.

use crate::error::{Error, Result};
use crate::rng::CounterStream;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    lower: Vec<f64>,
    cell: Vec<f64>,
    shape: Vec<usize>,
    strides: Vec<usize>,
    mass: Vec<f64>,
    clipped: f64,
}

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for a in (0..shape.len().saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * shape[a + 1];
    }
    strides
}

impl DensityGrid {
    /// Builds a grid directly from geometry and a mass tensor.
    pub fn from_parts(
        lower: Vec<f64>,
        cell: Vec<f64>,
        shape: Vec<usize>,
        mass: Vec<f64>,
        clipped: f64,
    ) -> Result<Self> {
        let axes = shape.len();
        if lower.len() != axes || cell.len() != axes {
            return Err(Error::GeometryMismatch(
                "lower/cell/shape lengths differ".into(),
            ));
        }
        if cell.iter().any(|&c| !(c > 0.0)) {
            return Err(Error::InvalidSpec("cell edges must be positive".into()));
        }
        let cells: usize = shape.iter().product();
        if mass.len() != cells {
            return Err(Error::GeometryMismatch(format!(
                "mass tensor has {} entries, geometry implies {}",
                mass.len(),
                cells
            )));
        }
        if mass.iter().any(|&m| m < 0.0 || !m.is_finite()) {
            return Err(Error::InvalidSpec(
                "mass tensor must be nonnegative and finite".into(),
            ));
        }
        let strides = strides_of(&shape);
        Ok(DensityGrid {
            lower,
            cell,
            shape,
            strides,
            mass,
            clipped,
        })
    }

    /// Cell-count histogram of `points` (flattened, `axes` coordinates per
    /// point), normalized to probability mass. Points outside the box are
    /// accumulated into the clipped-mass diagnostic; it is an error if every
    /// point lands outside.
    pub fn histogram(
        points: &[f64],
        axes: usize,
        lower: &[f64],
        upper: &[f64],
        cells: &[usize],
    ) -> Result<Self> {
        if axes == 0 || points.len() % axes != 0 || points.is_empty() {
            return Err(Error::InvalidSpec(
                "histogram needs a nonempty flat point array".into(),
            ));
        }
        if lower.len() != axes || upper.len() != axes || cells.len() != axes {
            return Err(Error::GeometryMismatch("box/cells lengths differ".into()));
        }
        if cells.iter().any(|&c| c < 2) {
            return Err(Error::InvalidSpec("need at least 2 cells per axis".into()));
        }
        if lower.iter().zip(upper).any(|(l, u)| !(u > l)) {
            return Err(Error::InvalidSpec("box must have positive extent".into()));
        }
        let n_points = points.len() / axes;
        let shape = cells.to_vec();
        let strides = strides_of(&shape);
        let cell: Vec<f64> = lower
            .iter()
            .zip(upper)
            .zip(cells)
            .map(|((l, u), &c)| (u - l) / c as f64)
            .collect();
        let total_cells: usize = shape.iter().product();
        let mut counts = vec![0u64; total_cells];
        let mut outside = 0u64;
        'point: for p in points.chunks_exact(axes) {
            let mut flat = 0usize;
            for a in 0..axes {
                let rel = (p[a] - lower[a]) / cell[a];
                if rel < 0.0 || rel >= shape[a] as f64 {
                    // the upper box face belongs to the last cell
                    if p[a] == upper[a] {
                        flat += (shape[a] - 1) * strides[a];
                        continue;
                    }
                    outside += 1;
                    continue 'point;
                }
                flat += (rel as usize).min(shape[a] - 1) * strides[a];
            }
            counts[flat] += 1;
        }
        if outside as usize == n_points {
            return Err(Error::InvalidSpec(
                "all points fall outside the histogram box".into(),
            ));
        }
        let inv = 1.0 / n_points as f64;
        let mass: Vec<f64> = counts.iter().map(|&c| c as f64 * inv).collect();
        Ok(DensityGrid {
            lower: lower.to_vec(),
            cell,
            shape,
            strides,
            mass,
            clipped: outside as f64 * inv,
        })
    }

    /// Midpoint-rule quadrature grid of a pointwise density: mass of a cell
    /// is `f(center) * cell_volume`, optionally renormalized to total 1.
    pub fn from_density_fn<F: Fn(&[f64]) -> f64>(
        f: F,
        lower: &[f64],
        upper: &[f64],
        cells: &[usize],
        normalize: bool,
    ) -> Result<Self> {
        let axes = lower.len();
        if upper.len() != axes || cells.len() != axes || axes == 0 {
            return Err(Error::GeometryMismatch("box/cells lengths differ".into()));
        }
        let shape = cells.to_vec();
        let strides = strides_of(&shape);
        let cell: Vec<f64> = lower
            .iter()
            .zip(upper)
            .zip(cells)
            .map(|((l, u), &c)| (u - l) / c as f64)
            .collect();
        let vol: f64 = cell.iter().product();
        let total_cells: usize = shape.iter().product();
        let mut mass = vec![0.0; total_cells];
        let mut center = vec![0.0; axes];
        for (flat, m) in mass.iter_mut().enumerate() {
            decode_center(flat, &strides, &shape, &lower, &cell, &mut center);
            let v = f(&center);
            if v < 0.0 || !v.is_finite() {
                return Err(Error::InvalidSpec(
                    "density function returned a negative or non-finite value".into(),
                ));
            }
            *m = v * vol;
        }
        let mut grid = DensityGrid {
            lower: lower.to_vec(),
            cell,
            shape,
            strides,
            mass,
            clipped: 0.0,
        };
        if normalize {
            let t = grid.total_mass();
            if t <= 0.0 {
                return Err(Error::InvalidSpec("density integrates to zero".into()));
            }
            grid.scale(1.0 / t);
        }
        Ok(grid)
    }

    pub fn axes(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.cell)
            .zip(&self.shape)
            .map(|((l, c), &s)| l + c * s as f64)
            .collect()
    }

    pub fn cell_edges(&self) -> &[f64] {
        &self.cell
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell.iter().product()
    }

    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    pub fn clipped_mass(&self) -> f64 {
        self.clipped
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for m in &mut self.mass {
            *m *= factor;
        }
    }

    /// Renormalizes the mass tensor to the given total.
    pub fn normalize_to(&mut self, total: f64) {
        let t = self.total_mass();
        if t > 0.0 {
            self.scale(total / t);
        }
    }

    pub fn geometry_matches(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .lower
                .iter()
                .zip(&other.lower)
                .all(|(a, b)| (a - b).abs() < 1e-12)
            && self
                .cell
                .iter()
                .zip(&other.cell)
                .all(|(a, b)| (a - b).abs() < 1e-12)
    }

    pub fn cell_center(&self, flat: usize, out: &mut [f64]) {
        decode_center(flat, &self.strides, &self.shape, &self.lower, &self.cell, out);
    }

    /// Visits every cell with positive mass.
    pub fn for_each_nonzero<F: FnMut(&[f64], f64)>(&self, mut f: F) {
        let mut center = vec![0.0; self.axes()];
        for (flat, &m) in self.mass.iter().enumerate() {
            if m > 0.0 {
                self.cell_center(flat, &mut center);
                f(&center, m);
            }
        }
    }

    /// Discrete convolution with a normalized truncated-Gaussian stencil of
    /// radius `3h` (h in cell units), applied separably along every axis;
    /// total mass is preserved by renormalizing away boundary clipping.
    /// `h = 0` is the identity.
    pub fn kde_smooth(&self, h_cells: f64) -> Self {
        assert!(h_cells >= 0.0, "bandwidth must be nonnegative");
        if h_cells == 0.0 {
            return self.clone();
        }
        let radius = (3.0 * h_cells).ceil() as isize;
        let mut stencil = Vec::with_capacity((2 * radius + 1) as usize);
        for k in -radius..=radius {
            stencil.push((-0.5 * (k as f64 / h_cells).powi(2)).exp());
        }
        let s_total: f64 = stencil.iter().sum();
        for w in &mut stencil {
            *w /= s_total;
        }

        let before = self.total_mass();
        let mut current = self.mass.clone();
        let mut next = vec![0.0; current.len()];
        for axis in 0..self.axes() {
            convolve_axis(
                &current,
                &mut next,
                &self.shape,
                &self.strides,
                axis,
                &stencil,
                radius,
            );
            std::mem::swap(&mut current, &mut next);
        }
        let mut out = DensityGrid {
            lower: self.lower.clone(),
            cell: self.cell.clone(),
            shape: self.shape.clone(),
            strides: self.strides.clone(),
            mass: current,
            clipped: self.clipped,
        };
        out.normalize_to(before);
        out
    }

    /// Sums out every axis not listed in `keep` (strictly increasing axis
    /// indices); mass is preserved.
    pub fn marginal(&self, keep: &[usize]) -> Result<Self> {
        if keep.is_empty() {
            return Err(Error::InvalidSpec("marginal needs at least one axis".into()));
        }
        if keep.windows(2).any(|w| w[0] >= w[1]) || *keep.last().unwrap() >= self.axes() {
            return Err(Error::InvalidSpec(
                "marginal axes must be strictly increasing and in range".into(),
            ));
        }
        if keep.len() == self.axes() {
            return Ok(self.clone());
        }
        let out_shape: Vec<usize> = keep.iter().map(|&a| self.shape[a]).collect();
        let out_strides = strides_of(&out_shape);
        let mut out_mass = vec![0.0; out_shape.iter().product()];
        let mut idx = vec![0usize; self.axes()];
        for (flat, &m) in self.mass.iter().enumerate() {
            decode_index(flat, &self.strides, &mut idx);
            let mut out_flat = 0;
            for (k, &a) in keep.iter().enumerate() {
                out_flat += idx[a] * out_strides[k];
            }
            out_mass[out_flat] += m;
        }
        Ok(DensityGrid {
            lower: keep.iter().map(|&a| self.lower[a]).collect(),
            cell: keep.iter().map(|&a| self.cell[a]).collect(),
            shape: out_shape,
            strides: out_strides,
            mass: out_mass,
            clipped: self.clipped,
        })
    }

    /// Draws `n` i.i.d. points with law given by the (normalized) grid:
    /// a categorical draw over cells followed by a uniform position within
    /// the cell. Returns a flat array of `n * axes` coordinates.
    pub fn sample(&self, n: usize, stream: &mut CounterStream) -> Vec<f64> {
        let total = self.total_mass();
        assert!(total > 0.0, "cannot sample from an empty grid");
        let mut cdf = Vec::with_capacity(self.mass.len());
        let mut acc = 0.0;
        for &m in &self.mass {
            acc += m;
            cdf.push(acc);
        }
        let axes = self.axes();
        let mut out = vec![0.0; n * axes];
        let mut center = vec![0.0; axes];
        for p in 0..n {
            let u = stream.uniform() * total;
            let flat = match cdf.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
                Ok(i) | Err(i) => i.min(cdf.len() - 1),
            };
            self.cell_center(flat, &mut center);
            for a in 0..axes {
                out[p * axes + a] = center[a] + (stream.uniform() - 0.5) * self.cell[a];
            }
        }
        out
    }
}

fn decode_index(flat: usize, strides: &[usize], out: &mut [usize]) {
    let mut rem = flat;
    for (a, &s) in strides.iter().enumerate() {
        out[a] = rem / s;
        rem %= s;
    }
}

fn decode_center(
    flat: usize,
    strides: &[usize],
    _shape: &[usize],
    lower: &[f64],
    cell: &[f64],
    out: &mut [f64],
) {
    let mut rem = flat;
    for (a, &s) in strides.iter().enumerate() {
        let idx = rem / s;
        rem %= s;
        out[a] = lower[a] + (idx as f64 + 0.5) * cell[a];
    }
}

fn convolve_axis(
    input: &[f64],
    output: &mut [f64],
    shape: &[usize],
    strides: &[usize],
    axis: usize,
    stencil: &[f64],
    radius: isize,
) {
    output.iter_mut().for_each(|v| *v = 0.0);
    let n = shape[axis] as isize;
    let stride = strides[axis] as isize;
    // iterate lines along `axis`
    let line_count: usize = input.len() / shape[axis];
    let mut line_starts = Vec::with_capacity(line_count);
    collect_line_starts(shape, strides, axis, &mut line_starts);
    for &start in &line_starts {
        for i in 0..n {
            let src = input[(start as isize + i * stride) as usize];
            if src == 0.0 {
                continue;
            }
            let k_lo = (-radius).max(-i);
            let k_hi = radius.min(n - 1 - i);
            for k in k_lo..=k_hi {
                output[(start as isize + (i + k) * stride) as usize]
                    += src * stencil[(k + radius) as usize];
            }
        }
    }
}

fn collect_line_starts(shape: &[usize], strides: &[usize], axis: usize, out: &mut Vec<usize>) {
    out.clear();
    let axes = shape.len();
    let mut idx = vec![0usize; axes];
    loop {
        let flat: usize = idx
            .iter()
            .zip(strides)
            .enumerate()
            .filter(|(a, _)| *a != axis)
            .map(|(_, (&i, &s))| i * s)
            .sum();
        out.push(flat);
        // advance the multi-index over all axes except `axis`
        let mut a = axes;
        loop {
            if a == 0 {
                return;
            }
            a -= 1;
            if a == axis {
                continue;
            }
            idx[a] += 1;
            if idx[a] < shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
}

/// Per-axis bounding box of flat `points`, padded by `pad_sigmas` standard
/// deviations of the point cloud on each side (with a small floor so that
/// degenerate clouds still get a box of positive extent).
pub fn padded_box(points: &[f64], axes: usize, pad_sigmas: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(!points.is_empty() && points.len() % axes == 0);
    let n = points.len() / axes;
    let mut lo = vec![f64::INFINITY; axes];
    let mut hi = vec![f64::NEG_INFINITY; axes];
    let mut mean = vec![0.0; axes];
    for p in points.chunks_exact(axes) {
        for a in 0..axes {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
            mean[a] += p[a];
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; axes];
    for p in points.chunks_exact(axes) {
        for a in 0..axes {
            let d = p[a] - mean[a];
            var[a] += d * d;
        }
    }
    for a in 0..axes {
        let sd = (var[a] / n as f64).sqrt().max(1e-6);
        lo[a] -= pad_sigmas * sd;
        hi[a] += pad_sigmas * sd;
    }
    (lo, hi)
}
