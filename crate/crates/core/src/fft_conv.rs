//! Jump summation `B v = T_out I~ C T_in v` through circulant embedding.
//!
//! The correlation of the input grid values with the weight matrix is
//! evaluated with two-dimensional transforms. Because a transform along
//! axis 1 commutes with interpolation along axis 2, only the source rows are
//! transformed along axis 1; each spectral column is then interpolated to the
//! full input length, transformed, multiplied by the kernel, transformed back
//! and reduced to the output rows before the final axis-1 inverse transforms.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

use crate::error::{PideError, Result};
use crate::grids::YGrids;
use crate::sparse::Csr;
use crate::spatial_ops::{BoundaryPolicy, TensorInterp};

const DENSE_LIMIT: usize = 4096;

struct Plans {
    row_forward: Arc<dyn RealToComplex<f64>>,
    row_inverse: Arc<dyn ComplexToReal<f64>>,
    col_forward: Arc<dyn Fft<f64>>,
    col_inverse: Arc<dyn Fft<f64>>,
}

impl Plans {
    fn new(n: usize) -> Self {
        let mut real = RealFftPlanner::<f64>::new();
        let mut complex = FftPlanner::<f64>::new();
        Plans {
            row_forward: real.plan_fft_forward(n),
            row_inverse: real.plan_fft_inverse(n),
            col_forward: complex.plan_fft_forward(n),
            col_inverse: complex.plan_fft_inverse(n),
        }
    }
}

/// Precomputed transform of the circulant's first row.
pub struct CirculantKernel {
    pub sharp_in: usize,
    pub sharp_out: usize,
    n_z: usize,
    omega: Vec<f64>,
    /// Conjugated, normalised spectrum stored column-major: `[k1][k2]`,
    /// `k1 < sharp_in / 2 + 1`.
    spectrum: Vec<Complex64>,
    plans: Plans,
}

impl std::fmt::Debug for CirculantKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CirculantKernel")
            .field("sharp_in", &self.sharp_in)
            .field("sharp_out", &self.sharp_out)
            .field("n_z", &self.n_z)
            .finish_non_exhaustive()
    }
}

/// Row combinations applied on each side of the column transforms.
struct ColumnMaps<'a> {
    /// `sharp_in x rows_in`: builds a full column from the source rows.
    expand: &'a Csr,
    /// `rows_out x sharp_in`: reduces a transformed column to output rows.
    reduce: &'a Csr,
}

impl CirculantKernel {
    fn half(&self) -> usize {
        self.sharp_in / 2 + 1
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    /// First row of the circulant: the weight matrix padded to
    /// `sharp_in x sharp_in` and vectorised with axis 1 fastest.
    pub fn first_row(&self) -> Vec<f64> {
        let s = self.sharp_in;
        let nz2 = 2 * self.n_z;
        let mut row = vec![0.0; s * s];
        for k2 in 0..nz2 {
            row[k2 * s..k2 * s + nz2].copy_from_slice(&self.omega[k2 * nz2..(k2 + 1) * nz2]);
        }
        row
    }

    /// Indices of the rows of the circulant kept by the output selection.
    pub fn selection_map(&self) -> Vec<usize> {
        let s = self.sharp_in;
        (0..self.sharp_out)
            .flat_map(|b2| (0..self.sharp_out).map(move |b1| b2 * s + b1))
            .collect()
    }

    /// Explicit circulant matrix; each row is the cyclic right shift of the previous.
    pub fn dense_circulant(&self) -> Result<Vec<Vec<f64>>> {
        let n = self.sharp_in * self.sharp_in;
        if n > DENSE_LIMIT {
            return Err(PideError::Unsupported(format!("dense circulant of size {n} exceeds {DENSE_LIMIT}")));
        }
        let c = self.first_row();
        Ok((0..n).map(|i| (0..n).map(|j| c[(j + n - i) % n]).collect()).collect())
    }

    /// Cross-correlation of a full `sharp_in x sharp_in` input with the
    /// weights, restricted to the `sharp_out x sharp_out` output block.
    pub fn correlate(&self, input: &[f64]) -> Result<Vec<f64>> {
        let s = self.sharp_in;
        if input.len() != s * s {
            return Err(PideError::DimensionMismatch(format!(
                "correlation input has {} entries, expected {}",
                input.len(),
                s * s
            )));
        }
        let expand = Csr::identity(s);
        let reduce = Csr::from_triplets(self.sharp_out, s, (0..self.sharp_out).map(|b| (b, b, 1.0)).collect())?;
        let maps = ColumnMaps {
            expand: &expand,
            reduce: &reduce,
        };
        let full = self.run(&maps, input, s)?.0;
        let mut out = Vec::with_capacity(self.sharp_out * self.sharp_out);
        for row in full.chunks_exact(s) {
            out.extend_from_slice(&row[..self.sharp_out]);
        }
        Ok(out)
    }

    /// Core pipeline. `rows` holds `rows_in` real rows of length `sharp_in`;
    /// returns `rows_out` real rows of length `sharp_in` and the largest
    /// imaginary part discarded at the final inverse transforms, relative to
    /// the result magnitude.
    fn run(&self, maps: &ColumnMaps, rows: &[f64], rows_in: usize) -> Result<(Vec<f64>, f64)> {
        let s = self.sharp_in;
        let h = self.half();
        let rows_out = maps.reduce.rows;
        debug_assert_eq!(maps.expand.rows, s);
        debug_assert_eq!(maps.expand.cols, rows_in);

        // axis-1 transforms of the source rows, stored column-major [k1][row]
        let mut src = vec![Complex64::new(0.0, 0.0); h * rows_in];
        {
            let mut buf = self.plans.row_forward.make_input_vec();
            let mut spec = self.plans.row_forward.make_output_vec();
            let mut scratch = self.plans.row_forward.make_scratch_vec();
            for (r, row) in rows.chunks_exact(s).enumerate() {
                if row.iter().all(|&v| v == 0.0) {
                    continue;
                }
                buf.copy_from_slice(row);
                self.plans
                    .row_forward
                    .process_with_scratch(&mut buf, &mut spec, &mut scratch)
                    .map_err(|e| PideError::Unsupported(e.to_string()))?;
                for (k1, v) in spec.iter().enumerate() {
                    src[k1 * rows_in + r] = *v;
                }
            }
        }

        // per spectral column: expand, transform, multiply, invert, reduce
        let mut reduced = vec![Complex64::new(0.0, 0.0); h * rows_out];
        let scratch_len = self
            .plans
            .col_forward
            .get_inplace_scratch_len()
            .max(self.plans.col_inverse.get_inplace_scratch_len());
        reduced
            .par_chunks_mut(rows_out)
            .zip(src.par_chunks(rows_in))
            .zip(self.spectrum.par_chunks(s))
            .for_each_init(
                || {
                    (
                        vec![Complex64::new(0.0, 0.0); s],
                        vec![Complex64::new(0.0, 0.0); scratch_len],
                    )
                },
                |(col, scratch), ((out, input), kernel)| {
                    if input.iter().all(|v| v.re == 0.0 && v.im == 0.0) {
                        out.fill(Complex64::new(0.0, 0.0));
                        return;
                    }
                    for (r, c) in col.iter_mut().enumerate() {
                        let (idx, val) = maps.expand.row(r);
                        *c = idx.iter().zip(val).map(|(&j, &w)| input[j] * w).sum();
                    }
                    self.plans.col_forward.process_with_scratch(col, scratch);
                    for (c, k) in col.iter_mut().zip(kernel) {
                        *c *= k;
                    }
                    self.plans.col_inverse.process_with_scratch(col, scratch);
                    for (r, o) in out.iter_mut().enumerate() {
                        let (idx, val) = maps.reduce.row(r);
                        *o = idx.iter().zip(val).map(|(&j, &w)| col[j] * w).sum();
                    }
                },
            );

        // axis-1 inverse transforms of the output rows
        let mut out = vec![0.0; rows_out * s];
        let mut residue = 0.0f64;
        let mut magnitude = 0.0f64;
        let mut spec = self.plans.row_inverse.make_input_vec();
        let mut buf = self.plans.row_inverse.make_output_vec();
        let mut scratch = self.plans.row_inverse.make_scratch_vec();
        for (r, dst) in out.chunks_exact_mut(s).enumerate() {
            for (k1, v) in spec.iter_mut().enumerate() {
                *v = reduced[k1 * rows_out + r];
            }
            residue = residue.max(spec[0].im.abs());
            spec[0].im = 0.0;
            if s % 2 == 0 {
                residue = residue.max(spec[h - 1].im.abs());
                spec[h - 1].im = 0.0;
            }
            self.plans
                .row_inverse
                .process_with_scratch(&mut spec, &mut buf, &mut scratch)
                .map_err(|e| PideError::Unsupported(e.to_string()))?;
            dst.copy_from_slice(&buf);
            magnitude = magnitude.max(buf.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        }
        // the discarded parts are spectral values; compare on the output scale
        let relative = if magnitude > 0.0 { residue / (s as f64 * magnitude) } else { residue };
        Ok((out, relative))
    }
}

/// Transforms the padded weight matrix once.
pub fn build_kernel(omega: &[f64], n_z: usize, ygrids: &YGrids) -> Result<CirculantKernel> {
    let nz2 = 2 * n_z;
    if omega.len() != nz2 * nz2 {
        return Err(PideError::DimensionMismatch(format!(
            "weight matrix has {} entries, expected {}",
            omega.len(),
            nz2 * nz2
        )));
    }
    if ygrids.n_z != n_z {
        return Err(PideError::DimensionMismatch("y-grids built for a different N_z".into()));
    }
    let s = ygrids.sharp_in();
    if s < nz2 {
        return Err(PideError::DimensionMismatch(format!("input length {s} below 2 N_z = {nz2}")));
    }
    let plans = Plans::new(s);
    let h = s / 2 + 1;
    let mut spectrum = vec![Complex64::new(0.0, 0.0); h * s];
    let mut buf = plans.row_forward.make_input_vec();
    let mut spec = plans.row_forward.make_output_vec();
    let mut scratch = plans.row_forward.make_scratch_vec();
    for k2 in 0..nz2 {
        buf.fill(0.0);
        buf[..nz2].copy_from_slice(&omega[k2 * nz2..(k2 + 1) * nz2]);
        plans
            .row_forward
            .process_with_scratch(&mut buf, &mut spec, &mut scratch)
            .map_err(|e| PideError::Unsupported(e.to_string()))?;
        for (k1, v) in spec.iter().enumerate() {
            spectrum[k1 * s + k2] = *v;
        }
    }
    let scale = 1.0 / (s as f64 * s as f64);
    let col_scratch_len = plans.col_forward.get_inplace_scratch_len();
    spectrum.par_chunks_mut(s).for_each_init(
        || vec![Complex64::new(0.0, 0.0); col_scratch_len],
        |scratch, col| {
            plans.col_forward.process_with_scratch(col, scratch);
            for c in col.iter_mut() {
                *c = c.conj() * scale;
            }
        },
    );
    Ok(CirculantKernel {
        sharp_in: s,
        sharp_out: ygrids.sharp_out(),
        n_z,
        omega: omega.to_vec(),
        spectrum,
        plans,
    })
}

/// Input (`x -> y_in`) and output (`y_out -> x`) interpolation pair.
pub fn build_transfer(nodes: &[f64], ygrids: &YGrids) -> Result<(TensorInterp, TensorInterp)> {
    let y_in = ygrids.y_in_nodes();
    let y_out = ygrids.y_out_nodes();
    let t_in = TensorInterp::new([nodes, nodes], [&y_in, &y_in], BoundaryPolicy::Zero)?;
    let t_out = TensorInterp::new([&y_out, &y_out], [nodes, nodes], BoundaryPolicy::LinearExtrapolation)?;
    Ok((t_in, t_out))
}

fn check_transfer(kernel: &CirculantKernel, t_in: &TensorInterp, t_out: &TensorInterp) -> Result<()> {
    let s = kernel.sharp_in;
    let o = kernel.sharp_out;
    if t_in.axis1.rows != s || t_in.axis2.rows != s || t_out.axis1.cols != o || t_out.axis2.cols != o {
        return Err(PideError::DimensionMismatch("interpolation operators do not match the kernel".into()));
    }
    Ok(())
}

/// `B v` and the relative imaginary residue discarded on the way.
pub fn apply_b_with_residue(
    kernel: &CirculantKernel,
    t_in: &TensorInterp,
    t_out: &TensorInterp,
    v: &[f64],
) -> Result<(Vec<f64>, f64)> {
    check_transfer(kernel, t_in, t_out)?;
    if v.len() != t_in.cols() {
        return Err(PideError::DimensionMismatch(format!(
            "vector has {} entries, expected {}",
            v.len(),
            t_in.cols()
        )));
    }
    let s = kernel.sharp_in;
    let n_src1 = t_in.axis1.cols;
    let rows_in = t_in.axis2.cols;
    // axis-1 interpolation of each source row
    let mut rows = vec![0.0; rows_in * s];
    for (src, dst) in v.chunks_exact(n_src1).zip(rows.chunks_exact_mut(s)) {
        t_in.axis1.mul_vec_into(src, dst);
    }
    // output reduction: y_out row b2 sits at correlation row b2 < sharp_out
    let reduce = Csr {
        rows: t_out.axis2.rows,
        cols: s,
        indptr: t_out.axis2.indptr.clone(),
        indices: t_out.axis2.indices.clone(),
        values: t_out.axis2.values.clone(),
    };
    let maps = ColumnMaps {
        expand: &t_in.axis2,
        reduce: &reduce,
    };
    let (corr, residue) = kernel.run(&maps, &rows, rows_in)?;
    let n_out1 = t_out.axis1.rows;
    let mut out = vec![0.0; t_out.axis2.rows * n_out1];
    for (src, dst) in corr.chunks_exact(s).zip(out.chunks_exact_mut(n_out1)) {
        t_out.axis1.mul_vec_into(&src[..kernel.sharp_out], dst);
    }
    Ok((out, residue))
}

pub fn apply_b(kernel: &CirculantKernel, t_in: &TensorInterp, t_out: &TensorInterp, v: &[f64]) -> Result<Vec<f64>> {
    Ok(apply_b_with_residue(kernel, t_in, t_out, v)?.0)
}

/// Explicit `T_out I~ C T_in` for small problems.
pub fn dense_reference(kernel: &CirculantKernel, t_in: &TensorInterp, t_out: &TensorInterp) -> Result<Vec<Vec<f64>>> {
    check_transfer(kernel, t_in, t_out)?;
    let c = kernel.dense_circulant()?;
    let sel = kernel.selection_map();
    let t_in = t_in.to_csr().to_dense();
    let t_out = t_out.to_csr().to_dense();
    let n_x = t_in[0].len();
    // I~ C T_in
    let ic_tin: Vec<Vec<f64>> = sel
        .iter()
        .map(|&r| {
            let mut row = vec![0.0; n_x];
            for (j, &cij) in c[r].iter().enumerate() {
                if cij != 0.0 {
                    for (acc, t) in row.iter_mut().zip(&t_in[j]) {
                        *acc += cij * t;
                    }
                }
            }
            row
        })
        .collect();
    Ok(t_out
        .iter()
        .map(|orow| {
            let mut row = vec![0.0; n_x];
            for (k, &w) in orow.iter().enumerate() {
                if w != 0.0 {
                    for (acc, v) in row.iter_mut().zip(&ic_tin[k]) {
                        *acc += w * v;
                    }
                }
            }
            row
        })
        .collect())
}
