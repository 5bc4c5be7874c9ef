//! Random problem instances: Gaussian measurement matrix with variance `1/N`
//! entries, Bernoulli–Gaussian signal, noise-free observations.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Default cap on the bytes an instance may occupy (3 GiB).
pub const DEFAULT_MEMORY_BUDGET: u64 = 3 << 30;

const MAGIC: &[u8; 8] = b"LSAMPINS";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemSpec {
    pub n: usize,
    pub alpha: f64,
    pub rho: f64,
    pub seed: u64,
}

impl ProblemSpec {
    pub fn new(n: usize, alpha: f64, rho: f64, seed: u64) -> Result<Self> {
        let spec = Self { n, alpha, rho, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("n must be positive".into()));
        }
        // alpha = 1 is admitted for the square-system end of benchmark sweeps
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "rho must lie in (0, 1), got {}",
                self.rho
            )));
        }
        if self.m() == 0 {
            return Err(Error::InvalidParameter(format!(
                "round(alpha * n) = 0 for alpha={}, n={}",
                self.alpha, self.n
            )));
        }
        Ok(())
    }

    /// Number of measurements `M = round(α N)`.
    pub fn m(&self) -> usize {
        (self.alpha * self.n as f64).round() as usize
    }

    /// Problem description for the `index`-th member of a seeded family (stream `seed ^ index`).
    pub fn instance(&self, index: u64) -> Self {
        Self {
            seed: self.seed ^ index,
            ..*self
        }
    }

    pub fn bytes_required(&self) -> u64 {
        let (n, m) = (self.n as u64, self.m() as u64);
        8 * (n * m + n + m)
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    /// `out = A x`.
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.cols);
        assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o = dot(row, x);
        }
    }

    /// `out = Aᵀ z`.
    pub fn mul_vec_t(&self, z: &[f64], out: &mut [f64]) {
        assert_eq!(z.len(), self.rows);
        assert_eq!(out.len(), self.cols);
        out.fill(0.0);
        for (&zm, row) in z.iter().zip(self.data.chunks_exact(self.cols)) {
            if zm == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(row) {
                *o += zm * a;
            }
        }
    }
}

/// Dot product with a fixed four-way summation order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let k = 4 * i;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut tail = 0.0;
    for k in 4 * chunks..a.len() {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub spec: ProblemSpec,
    pub a: DenseMatrix,
    pub x0: Vec<f64>,
    pub y: Vec<f64>,
}

impl ProblemInstance {
    pub fn n(&self) -> usize {
        self.a.cols()
    }

    pub fn m(&self) -> usize {
        self.a.rows()
    }

    /// Realized measurement rate `M / N`.
    pub fn alpha(&self) -> f64 {
        self.m() as f64 / self.n() as f64
    }

    /// Writes the instance in the little-endian binary container.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.n() as u64).to_le_bytes())?;
        w.write_all(&(self.m() as u64).to_le_bytes())?;
        w.write_all(&self.spec.alpha.to_le_bytes())?;
        w.write_all(&self.spec.rho.to_le_bytes())?;
        w.write_all(&self.spec.seed.to_le_bytes())?;
        let mut buf = Vec::with_capacity(8 * self.n());
        for chunk in [self.a.as_slice(), &self.x0, &self.y] {
            for row in chunk.chunks(self.n().max(1)) {
                buf.clear();
                for v in row {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
                w.write_all(&buf)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(read_array(&mut r)?);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let n = u64::from_le_bytes(read_array(&mut r)?) as usize;
        let m = u64::from_le_bytes(read_array(&mut r)?) as usize;
        let alpha = f64::from_le_bytes(read_array(&mut r)?);
        let rho = f64::from_le_bytes(read_array(&mut r)?);
        let seed = u64::from_le_bytes(read_array(&mut r)?);
        let spec = ProblemSpec::new(n, alpha, rho, seed).map_err(|e| Error::Format(e.to_string()))?;
        if spec.m() != m {
            return Err(Error::Format(format!(
                "header m={m} disagrees with round(alpha*n)={}",
                spec.m()
            )));
        }
        let a = read_f64s(&mut r, m * n)?;
        let x0 = read_f64s(&mut r, n)?;
        let y = read_f64s(&mut r, m)?;
        Ok(Self {
            spec,
            a: DenseMatrix::from_row_major(m, n, a)?,
            x0,
            y,
        })
    }
}

fn read_array<R: Read, const B: usize>(r: &mut R) -> Result<[u8; B]> {
    let mut b = [0u8; B];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_f64s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; 8 * count];
    r.read_exact(&mut bytes)
        .map_err(|e| Error::Format(format!("truncated payload: {e}")))?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn generate(spec: &ProblemSpec) -> Result<ProblemInstance> {
    generate_with_budget(spec, DEFAULT_MEMORY_BUDGET)
}

/// Draws `x⁰` (component-wise Bernoulli(ρ) × N(0,1)) then `A` row by row from
/// a ChaCha8 stream seeded with `spec.seed`, and sets `y = A x⁰`.
pub fn generate_with_budget(spec: &ProblemSpec, budget_bytes: u64) -> Result<ProblemInstance> {
    spec.validate()?;
    let requested = spec.bytes_required();
    if requested > budget_bytes {
        return Err(Error::Capacity {
            requested,
            budget: budget_bytes,
        });
    }
    let (n, m) = (spec.n, spec.m());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let x0: Vec<f64> = (0..n)
        .map(|_| {
            let active = rng.gen::<f64>() < spec.rho;
            let g: f64 = rng.sample(StandardNormal);
            if active {
                g
            } else {
                0.0
            }
        })
        .collect();
    let scale = 1.0 / (n as f64).sqrt();
    let data: Vec<f64> = (0..n * m)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let a = DenseMatrix::from_row_major(m, n, data)?;
    let mut y = vec![0.0; m];
    a.mul_vec(&x0, &mut y);
    Ok(ProblemInstance {
        spec: *spec,
        a,
        x0,
        y,
    })
}

/// Per-component mean squared error `‖x̂ - x⁰‖² / N`.
pub fn mse(x_hat: &[f64], x0: &[f64]) -> Result<f64> {
    if x_hat.len() != x0.len() {
        return Err(Error::Shape {
            expected: x0.len(),
            actual: x_hat.len(),
        });
    }
    if x0.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = x_hat.iter().zip(x0).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / x0.len() as f64)
}
