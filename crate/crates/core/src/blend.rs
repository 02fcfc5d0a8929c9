//! Discrete Poisson blending.
//!
//! Given a generated image f*, an original image h and an unknown region Ω,
//! solve for f inside Ω:
//!
//!   |N_p|·f_p − Σ_{q∈N_p} f_q = Σ_{q∈N_p} (h_p − h_q)   for p ∈ Ω
//!   f_p = f*_p                                           on ∂Ω
//!
//! with N_p the 4-connected in-image neighbors of p. Pixels outside Ω are
//! returned bit-identical to f*. The guidance field is taken from the
//! original image h as written above; |N_p| counts only in-image neighbors,
//! so border pixels get diagonal entries of 2 or 3 and the system stays
//! symmetric positive definite whenever Ω has at least one known neighbor.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param("width", "image dimensions must be positive"));
        }
        if pixels.len() != width * height {
            return Err(Error::param("pixels", "pixel count must equal width*height"));
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(Error::param("pixels", "pixels must be finite"));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        GrayImage::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn transposed(&self) -> GrayImage {
        let mut t = GrayImage::constant(self.height, self.width, 0.0).unwrap();
        for y in 0..self.height {
            for x in 0..self.width {
                t.set(y, x, self.get(x, y));
            }
        }
        t
    }
}

/// f*, h and the unknown region Ω (true = solve for this pixel).
#[derive(Debug, Clone)]
pub struct BlendProblem {
    pub f_star: GrayImage,
    pub h: GrayImage,
    pub omega: Vec<bool>,
}

impl BlendProblem {
    pub fn new(f_star: GrayImage, h: GrayImage, omega: Vec<bool>) -> Result<Self> {
        if f_star.width != h.width || f_star.height != h.height {
            return Err(Error::param("h", "dimension mismatch with f_star"));
        }
        if omega.len() != f_star.pixels.len() {
            return Err(Error::param("omega", "mask size must match image"));
        }
        Ok(BlendProblem { f_star, h, omega })
    }

    fn neighbors(&self, x: usize, y: usize) -> impl Iterator<Item = (usize, usize)> {
        let (w, hgt) = (self.f_star.width as isize, self.f_star.height as isize);
        let (xi, yi) = (x as isize, y as isize);
        [(0, -1), (0, 1), (-1, 0), (1, 0)]
            .into_iter()
            .filter_map(move |(dx, dy)| {
                let (nx, ny) = (xi + dx, yi + dy);
                (nx >= 0 && nx < w && ny >= 0 && ny < hgt).then_some((nx as usize, ny as usize))
            })
    }
}

/// Sparse SPD system in compressed row form, one equation per Ω pixel.
#[derive(Debug, Clone)]
pub struct PoissonSystem {
    pub n_unknowns: usize,
    /// pixel index -> equation row (None outside Ω).
    pub index_of: Vec<Option<usize>>,
    /// equation row -> pixel index.
    pub pixel_of: Vec<usize>,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl PoissonSystem {
    pub fn mat_vec(&self, x: &[f64], out: &mut [f64]) {
        for row in 0..self.n_unknowns {
            let mut acc = 0.0;
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            out[row] = acc;
        }
    }

    /// Dense row-major copy of the matrix, for the oracle solver.
    fn to_dense(&self) -> Vec<f64> {
        let n = self.n_unknowns;
        let mut a = vec![0.0; n * n];
        for row in 0..n {
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                a[row * n + self.col_idx[k]] = self.values[k];
            }
        }
        a
    }
}

/// Assembles the discrete Poisson system for a blend problem. Ω must be
/// nonempty here; `poisson_blend` handles empty Ω as the identity.
pub fn build_poisson_system(problem: &BlendProblem) -> Result<PoissonSystem> {
    let (w, h) = (problem.f_star.width, problem.f_star.height);
    let mut index_of = vec![None; w * h];
    let mut pixel_of = Vec::new();
    for idx in 0..w * h {
        if problem.omega[idx] {
            index_of[idx] = Some(pixel_of.len());
            pixel_of.push(idx);
        }
    }
    let n = pixel_of.len();
    if n == 0 {
        return Err(Error::param("omega", "region is empty"));
    }

    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    let mut rhs = vec![0.0; n];
    row_ptr.push(0);
    for (row, &pidx) in pixel_of.iter().enumerate() {
        let (x, y) = (pidx % w, pidx / w);
        let mut degree = 0.0;
        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(4);
        for (nx, ny) in problem.neighbors(x, y) {
            degree += 1.0;
            let nidx = ny * w + nx;
            rhs[row] += problem.h.get(x, y) - problem.h.get(nx, ny);
            match index_of[nidx] {
                Some(col) => entries.push((col, -1.0)),
                // Known neighbor: its f* value moves to the right-hand side.
                None => rhs[row] += problem.f_star.get(nx, ny),
            }
        }
        entries.push((row, degree));
        entries.sort_by_key(|e| e.0);
        for (c, v) in entries {
            col_idx.push(c);
            values.push(v);
        }
        row_ptr.push(col_idx.len());
    }
    Ok(PoissonSystem {
        n_unknowns: n,
        index_of,
        pixel_of,
        row_ptr,
        col_idx,
        values,
        rhs,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct CgOutcome {
    pub solution_iterations: usize,
    pub residual: f64,
}

/// Conjugate gradient on the assembled system. Stops when the relative
/// residual ‖b−Ax‖/‖b‖ drops to `tol` (absolute when b = 0); errors if
/// `max_iter` is exhausted first.
pub fn solve_cg(
    system: &PoissonSystem,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, f64, usize)> {
    if !(tol > 0.0) {
        return Err(Error::param("tol", "tolerance must be positive"));
    }
    let n = system.n_unknowns;
    let b_norm = norm(&system.rhs);
    if b_norm == 0.0 {
        return Ok((vec![0.0; n], 0.0, 0));
    }
    let mut x = vec![0.0; n];
    let mut r = system.rhs.clone();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rs = dot(&r, &r);
    let mut iterations = 0;
    loop {
        let rel = rs.sqrt() / b_norm;
        if rel <= tol {
            return Ok((x, rel, iterations));
        }
        if iterations >= max_iter {
            return Err(Error::NoConvergence {
                residual: rel,
                iterations,
            });
        }
        system.mat_vec(&p, &mut ap);
        let alpha = rs / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new = dot(&r, &r);
        let beta = rs_new / rs;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_new;
        iterations += 1;
    }
}

/// Direct Cholesky solve, capped at 1024 unknowns. Brute-force verification
/// route, independent of the CG path.
pub fn solve_dense_oracle(system: &PoissonSystem) -> Result<Vec<f64>> {
    let n = system.n_unknowns;
    if n > 1024 {
        return Err(Error::param("system", "dense oracle capped at 1024 unknowns"));
    }
    let mut a = system.to_dense();
    // In-place lower Cholesky.
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= a[i * n + k] * a[j * n + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::NotPositiveDefinite { row: i });
                }
                a[i * n + j] = sum.sqrt();
            } else {
                a[i * n + j] = sum / a[j * n + j];
            }
        }
    }
    // Forward then backward substitution.
    let mut y = system.rhs.clone();
    for i in 0..n {
        for k in 0..i {
            y[i] -= a[i * n + k] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= a[k * n + i] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    Ok(y)
}

#[derive(Debug, Clone, Copy)]
pub enum Solver {
    Cg { tol: f64, max_iter: usize },
    Dense,
}

impl Solver {
    /// CG with tol 1e-8 and max_iter = 10x unknown count.
    pub fn default_cg(n_unknowns: usize) -> Solver {
        Solver::Cg {
            tol: 1e-8,
            max_iter: 10 * n_unknowns.max(1),
        }
    }
}

/// Solves the blend problem and composites: output equals f* outside Ω
/// bit-exactly and the system solution inside Ω. Values are not clamped;
/// clamping to [0,1] happens only at image export.
pub fn poisson_blend(problem: &BlendProblem, solver: Solver) -> Result<GrayImage> {
    if !problem.omega.iter().any(|&m| m) {
        return Ok(problem.f_star.clone());
    }
    let system = build_poisson_system(problem)?;
    let solution = match solver {
        Solver::Cg { tol, max_iter } => solve_cg(&system, tol, max_iter)?.0,
        Solver::Dense => solve_dense_oracle(&system)?,
    };
    let mut out = problem.f_star.clone();
    for (row, &pidx) in system.pixel_of.iter().enumerate() {
        out.pixels[pidx] = solution[row];
    }
    Ok(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
