//! Symmetric positive-definite solves for banded matrices, optionally with a
//! small dense border coupling to every band row ("arrowhead" systems).
//!
//! Spline control vertices only interact with a few neighbours, so the
//! normal matrix of the refinement is a narrow band plus the extrinsic and
//! clock-offset columns.

use nalgebra::{DMatrix, DVector};

/// Lower band of a symmetric matrix: `data[i * (bw + 1) + d] = A[i, i - d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedSym {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NotPositiveDefinite {
    pub row: usize,
}

impl BandedSym {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    /// Entry `(i, j)`; zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[i * (self.bw + 1) + (i - j)]
        }
    }

    /// Adds `v` to `(i, j)` (and implicitly `(j, i)`). Panics outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(i - j <= self.bw, "entry ({i}, {j}) outside bandwidth {}", self.bw);
        self.data[i * (self.bw + 1) + (i - j)] += v;
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.data[i * (self.bw + 1)]).collect()
    }

    pub fn add_diagonal(&mut self, i: usize, v: f64) {
        self.data[i * (self.bw + 1)] += v;
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// In-place Cholesky factorization `A = L Lᵀ`; the band keeps its shape.
    pub fn cholesky(mut self) -> Result<BandedCholesky, NotPositiveDefinite> {
        let w = self.bw + 1;
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..=i {
                let mut s = self.data[i * w + (i - j)];
                let klo = lo.max(j.saturating_sub(self.bw));
                for k in klo..j {
                    s -= self.data[i * w + (i - k)] * self.data[j * w + (j - k)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(NotPositiveDefinite { row: i });
                    }
                    self.data[i * w] = s.sqrt();
                } else {
                    self.data[i * w + (i - j)] = s / self.data[j * w];
                }
            }
        }
        Ok(BandedCholesky { l: self })
    }
}

#[derive(Debug, Clone)]
pub struct BandedCholesky {
    l: BandedSym,
}

impl BandedCholesky {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.l.n;
        let bw = self.l.bw;
        let w = bw + 1;
        let d = &self.l.data;
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(bw)..i {
                s -= d[i * w + (i - k)] * b[k];
            }
            b[i] = s / d[i * w];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n.min(i + bw + 1) {
                s -= d[k * w + (k - i)] * b[k];
            }
            b[i] = s / d[i * w];
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_in_place(x.as_mut_slice());
        x
    }
}

/// `[A B; Bᵀ C]` with `A` banded and a dense border of a few columns.
#[derive(Debug, Clone)]
pub struct ArrowSystem {
    pub band: BandedSym,
    pub border: DMatrix<f64>,
    pub corner: DMatrix<f64>,
}

impl ArrowSystem {
    pub fn zeros(n_band: usize, bw: usize, n_border: usize) -> Self {
        Self {
            band: BandedSym::zeros(n_band, bw),
            border: DMatrix::zeros(n_band, n_border),
            corner: DMatrix::zeros(n_border, n_border),
        }
    }

    pub fn dim(&self) -> usize {
        self.band.dim() + self.corner.nrows()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = self.band.diagonal();
        d.extend((0..self.corner.nrows()).map(|i| self.corner[(i, i)]));
        d
    }

    pub fn add_diagonal(&mut self, i: usize, v: f64) {
        let nb = self.band.dim();
        if i < nb {
            self.band.add_diagonal(i, v);
        } else {
            self.corner[(i - nb, i - nb)] += v;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let nb = self.band.dim();
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        m.view_mut((0, 0), (nb, nb)).copy_from(&self.band.to_dense());
        m.view_mut((0, nb), (nb, n - nb)).copy_from(&self.border);
        m.view_mut((nb, 0), (n - nb, nb)).copy_from(&self.border.transpose());
        m.view_mut((nb, nb), (n - nb, n - nb)).copy_from(&self.corner);
        m
    }

    /// Solves via the Schur complement of the band block.
    pub fn solve(self, rhs: &DVector<f64>) -> Result<DVector<f64>, NotPositiveDefinite> {
        let nb = self.band.dim();
        let nc = self.corner.nrows();
        let chol = self.band.cholesky()?;
        let g = rhs.rows(0, nb).into_owned();
        let h = rhs.rows(nb, nc).into_owned();

        // A⁻¹ B and A⁻¹ g
        let mut ainv_b = self.border.clone();
        for c in 0..nc {
            let mut col: Vec<f64> = ainv_b.column(c).iter().copied().collect();
            chol.solve_in_place(&mut col);
            ainv_b.set_column(c, &DVector::from_vec(col));
        }
        let ainv_g = chol.solve(&g);

        let schur = &self.corner - self.border.transpose() * &ainv_b;
        let schur_rhs = h - self.border.transpose() * &ainv_g;
        let y = if nc == 0 {
            DVector::zeros(0)
        } else {
            schur
                .cholesky()
                .ok_or(NotPositiveDefinite { row: nb })?
                .solve(&schur_rhs)
        };
        let x = ainv_g - ainv_b * &y;
        let mut out = DVector::zeros(nb + nc);
        out.rows_mut(0, nb).copy_from(&x);
        out.rows_mut(nb, nc).copy_from(&y);
        Ok(out)
    }
}
