//! Dense row-major 2-D array of `f64` used by the image-processing code.

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "grid size mismatch");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid::from_vec(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Square window of side `size` centered on `(row, col)`, or `None` if it
    /// does not fit.
    pub fn window(&self, row: i64, col: i64, size: usize) -> Option<Grid> {
        let half = (size / 2) as i64;
        let (r0, c0) = (row - half, col - half);
        if r0 < 0 || c0 < 0 || r0 as usize + size > self.rows || c0 as usize + size > self.cols {
            return None;
        }
        let (r0, c0) = (r0 as usize, c0 as usize);
        let mut data = Vec::with_capacity(size * size);
        for r in r0..r0 + size {
            data.extend_from_slice(&self.data[r * self.cols + c0..r * self.cols + c0 + size]);
        }
        Some(Grid::from_vec(size, size, data))
    }

    /// True when a window of side `size` centered on `(row, col)` lies inside.
    pub fn contains_window(&self, row: i64, col: i64, size: usize) -> bool {
        let half = (size / 2) as i64;
        row - half >= 0 && col - half >= 0 && row + half < self.rows as i64 && col + half < self.cols as i64
    }

    /// Bilinear sample at fractional coordinates; `None` outside.
    pub fn bilinear(&self, row: f64, col: f64) -> Option<f64> {
        if !(row >= 0.0 && col >= 0.0) || row > (self.rows - 1) as f64 || col > (self.cols - 1) as f64 {
            return None;
        }
        let r0 = (row.floor() as usize).min(self.rows.saturating_sub(2));
        let c0 = (col.floor() as usize).min(self.cols.saturating_sub(2));
        let fr = row - r0 as f64;
        let fc = col - c0 as f64;
        let r1 = (r0 + 1).min(self.rows - 1);
        let c1 = (c0 + 1).min(self.cols - 1);
        let top = self.get(r0, c0) * (1.0 - fc) + self.get(r0, c1) * fc;
        let bottom = self.get(r1, c0) * (1.0 - fc) + self.get(r1, c1) * fc;
        Some(top * (1.0 - fr) + bottom * fr)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Separable Gaussian blur with reflected borders.
pub fn gaussian_blur(g: &Grid, sigma: f64) -> Grid {
    if sigma <= 0.0 {
        return g.clone();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = {
        let k: Vec<f64> = (-radius..=radius)
            .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let s: f64 = k.iter().sum();
        k.into_iter().map(|v| v / s).collect()
    };
    let reflect = |i: i64, n: usize| -> usize {
        let n = n as i64;
        let mut i = i;
        while i < 0 || i >= n {
            i = if i < 0 { -i - 1 } else { 2 * n - i - 1 };
        }
        i as usize
    };
    let (rows, cols) = (g.rows(), g.cols());
    let mut tmp = Grid::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                acc += w * g.get(r, reflect(c as i64 + k as i64 - radius, cols));
            }
            tmp.set(r, c, acc);
        }
    }
    let mut out = Grid::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                acc += w * tmp.get(reflect(r as i64 + k as i64 - radius, rows), c);
            }
            out.set(r, c, acc);
        }
    }
    out
}
