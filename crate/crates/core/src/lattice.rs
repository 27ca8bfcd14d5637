//! Regular N-dimensional lattices and sampled fields on them.
//!
//! Densities, potentials and drift tables all live on lattices; the
//! operations here (FFT convolution, multilinear interpolation, discrete
//! gradients, grid norms) are the shared machinery behind the
//! `occupation`, `averaging` and `potential` modules.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    origin: Vec<f64>,
    spacing: Vec<f64>,
    counts: Vec<usize>,
    strides: Vec<usize>,
}

impl Lattice {
    /// Nodes `origin[i] + k * spacing[i]` for `k < counts[i]` on each axis.
    pub fn new(origin: Vec<f64>, spacing: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        let n = origin.len();
        if n == 0 || spacing.len() != n || counts.len() != n {
            return Err(Error::Contract("lattice axes must agree and be non-empty".into()));
        }
        if spacing.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(Error::Domain(format!("lattice spacing must be positive: {spacing:?}")));
        }
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::Domain("lattice needs at least one node per axis".into()));
        }
        let mut strides = vec![1; n];
        for i in (0..n.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * counts[i + 1];
        }
        Ok(Self { origin, spacing, counts, strides })
    }

    /// Symmetric 1-D-per-axis lattice on `[-radius, radius]^N` with nodes at
    /// odd multiples of `h / 2`, so no node sits at the origin.
    pub fn symmetric(dim: usize, radius: f64, h: f64) -> Result<Self> {
        let half = (radius / h).ceil().max(1.0) as usize;
        let origin = -(half as f64 - 0.5) * h;
        Self::new(vec![origin; dim], vec![h; dim], vec![2 * half; dim])
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Row-major strides (last axis fastest).
    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for i in (0..self.dim()).rev() {
            idx[i] = flat % self.counts[i];
            flat /= self.counts[i];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.counts).fold(0, |acc, (&i, &c)| acc * c + i)
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .enumerate()
            .map(|(a, &k)| self.origin[a] + k as f64 * self.spacing[a])
            .collect()
    }

    /// Upper node coordinate per axis.
    pub fn upper(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|a| self.origin[a] + (self.counts[a] - 1) as f64 * self.spacing[a])
            .collect()
    }

    pub fn same_spacing(&self, other: &Lattice) -> bool {
        self.dim() == other.dim()
            && self
                .spacing
                .iter()
                .zip(&other.spacing)
                .all(|(a, b)| (a - b).abs() <= 1e-9 * a.max(*b))
    }
}

/// A field with `components` values per lattice node, node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    lattice: Lattice,
    components: usize,
    data: Vec<f64>,
}

impl GridField {
    pub fn zeros(lattice: Lattice, components: usize) -> Self {
        let n = lattice.len() * components;
        Self { lattice, components, data: vec![0.0; n] }
    }

    pub fn from_data(lattice: Lattice, components: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != lattice.len() * components {
            return Err(Error::Contract(format!(
                "field data has {} entries, lattice needs {}",
                data.len(),
                lattice.len() * components
            )));
        }
        Ok(Self { lattice, components, data })
    }

    /// Samples `f(node) -> [components]` at every node.
    pub fn from_fn(
        lattice: Lattice,
        components: usize,
        mut f: impl FnMut(&[f64], &mut [f64]) -> Result<()>,
    ) -> Result<Self> {
        let mut field = Self::zeros(lattice, components);
        for k in 0..field.lattice.len() {
            let z = field.lattice.node(k);
            f(&z, &mut field.data[k * components..(k + 1) * components])?;
        }
        Ok(field)
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn value(&self, node: usize) -> &[f64] {
        &self.data[node * self.components..(node + 1) * self.components]
    }

    pub fn component(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(self.components).copied().collect()
    }

    /// Pointwise Euclidean magnitude across components.
    pub fn magnitude(&self) -> Vec<f64> {
        self.data
            .chunks(self.components)
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect()
    }

    /// Multilinear interpolation; nodes outside the lattice count as zero.
    pub fn interpolate(&self, z: &[f64], out: &mut [f64]) {
        let lat = &self.lattice;
        let dim = lat.dim();
        debug_assert_eq!(z.len(), dim);
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut base = [0i64; 3];
        let mut frac = [0.0f64; 3];
        assert!(dim <= 3, "interpolation supports up to three axes");
        for a in 0..dim {
            let x = (z[a] - lat.origin[a]) / lat.spacing[a];
            if !(x > -1.0 && x < lat.counts[a] as f64) {
                return;
            }
            let f = x.floor();
            base[a] = f as i64;
            frac[a] = x - f;
        }
        let strides = &lat.strides;
        for corner in 0..(1usize << dim) {
            let mut w = 1.0;
            let mut flat = 0usize;
            let mut inside = true;
            for a in 0..dim {
                let bit = (corner >> a) & 1;
                let k = base[a] + bit as i64;
                if k < 0 || k >= lat.counts[a] as i64 {
                    inside = false;
                    break;
                }
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                flat += k as usize * strides[a];
            }
            if !inside || w == 0.0 {
                continue;
            }
            let v = &self.data[flat * self.components..(flat + 1) * self.components];
            for (o, x) in out.iter_mut().zip(v) {
                *o += w * x;
            }
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.magnitude().into_iter().fold(0.0, f64::max)
    }

    /// `(sum |f|^p h^N)^{1/p}` of the pointwise magnitude; `p = inf` gives the sup.
    pub fn lp_norm(&self, p: f64) -> f64 {
        lp_norm(&self.magnitude(), self.lattice.cell_volume(), p)
    }

    /// Per-axis central-difference gradient of a scalar field, one-sided at
    /// the box edges. Returns `dim` values per node.
    pub fn gradient(&self) -> GridField {
        assert_eq!(self.components, 1, "gradient is defined for scalar fields");
        let lat = &self.lattice;
        let dim = lat.dim();
        let strides = lat.strides();
        let mut out = GridField::zeros(lat.clone(), dim);
        for k in 0..lat.len() {
            let idx = lat.multi_index(k);
            for a in 0..dim {
                let n = lat.counts[a];
                let h = lat.spacing[a];
                let i = idx[a];
                let g = if n == 1 {
                    0.0
                } else if i == 0 {
                    (self.data[k + strides[a]] - self.data[k]) / h
                } else if i == n - 1 {
                    (self.data[k] - self.data[k - strides[a]]) / h
                } else {
                    (self.data[k + strides[a]] - self.data[k - strides[a]]) / (2.0 * h)
                };
                out.data[k * dim + a] = g;
            }
        }
        out
    }

    /// `‖f‖_{L^ρ} + ‖∇f‖_{L^ρ}` on the lattice.
    pub fn sobolev_norm(&self, rho: f64) -> f64 {
        self.lp_norm(rho) + self.gradient().lp_norm(rho)
    }

    /// `self += scale * other` on identical lattices.
    pub fn add_scaled(&mut self, other: &GridField, scale: f64) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }
}

pub fn lp_norm(values: &[f64], volume: f64, p: f64) -> f64 {
    if p.is_infinite() {
        values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    } else {
        let mut acc = crate::numeric::CompensatedSum::new();
        for v in values {
            acc.add(v.abs().powf(p));
        }
        (acc.value() * volume).powf(1.0 / p)
    }
}

fn fast_size(n: usize) -> usize {
    let mut best = n.next_power_of_two();
    let mut p3 = 1usize;
    while p3 < best {
        let mut m = p3;
        while m < n {
            m *= 2;
        }
        best = best.min(m);
        p3 *= 3;
    }
    best
}

/// In-place N-dimensional FFT over a row-major complex array.
struct NdFft {
    shape: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl NdFft {
    fn new(shape: Vec<usize>) -> Self {
        let mut planner = FftPlanner::new();
        let forward = shape.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        Self { shape, forward, inverse }
    }

    fn len(&self) -> usize {
        self.shape.iter().product()
    }

    fn run(&self, data: &mut [Complex64], inverse: bool) {
        let dim = self.shape.len();
        let total = self.len();
        let mut stride = 1usize;
        for a in (0..dim).rev() {
            let n = self.shape[a];
            let plan = if inverse { &self.inverse[a] } else { &self.forward[a] };
            if n == 1 {
                stride *= n;
                continue;
            }
            if stride == 1 {
                plan.process(data);
            } else {
                let mut line = vec![Complex64::new(0.0, 0.0); n];
                let block = stride * n;
                for start in (0..total).step_by(block) {
                    for off in 0..stride {
                        let base = start + off;
                        for (i, l) in line.iter_mut().enumerate() {
                            *l = data[base + i * stride];
                        }
                        plan.process(&mut line);
                        for (i, l) in line.iter().enumerate() {
                            data[base + i * stride] = *l;
                        }
                    }
                }
            }
            stride *= n;
        }
    }
}

/// Linear (zero-padded) convolution of a multi-component kernel with scalar
/// densities on commensurate lattices, with the kernel spectrum cached.
///
/// The result of `apply(density)` is `sum_z kernel(u - z) density(z) h^N`
/// on the lattice with origin `o_kernel + o_density` and `n_k + n_d - 1`
/// nodes per axis.
pub struct Convolver {
    density_lattice: Lattice,
    output: Lattice,
    components: usize,
    fft: NdFft,
    spectra: Vec<Vec<Complex64>>,
}

impl Convolver {
    pub fn new(kernel: &GridField, density_lattice: &Lattice) -> Result<Self> {
        let kl = kernel.lattice();
        if !kl.same_spacing(density_lattice) {
            return Err(Error::Contract(format!(
                "grid spacing mismatch: kernel {:?} vs density {:?}",
                kl.spacing(),
                density_lattice.spacing()
            )));
        }
        let dim = kl.dim();
        let out_counts: Vec<usize> =
            (0..dim).map(|a| kl.counts()[a] + density_lattice.counts()[a] - 1).collect();
        let out_origin: Vec<f64> =
            (0..dim).map(|a| kl.origin()[a] + density_lattice.origin()[a]).collect();
        let output = Lattice::new(out_origin, kl.spacing().to_vec(), out_counts.clone())?;
        let shape: Vec<usize> = out_counts.iter().map(|&n| fast_size(n)).collect();
        let fft = NdFft::new(shape);
        let spectra = (0..kernel.components())
            .map(|c| {
                let mut buf = embed(&kernel.component(c), kl.counts(), &fft.shape);
                fft.run(&mut buf, false);
                buf
            })
            .collect();
        Ok(Self {
            density_lattice: density_lattice.clone(),
            output,
            components: kernel.components(),
            fft,
            spectra,
        })
    }

    pub fn output_lattice(&self) -> &Lattice {
        &self.output
    }

    pub fn apply(&self, density: &[f64]) -> GridField {
        assert_eq!(density.len(), self.density_lattice.len());
        let vol = self.density_lattice.cell_volume();
        let mut dens = embed(density, self.density_lattice.counts(), &self.fft.shape);
        self.fft.run(&mut dens, false);
        let norm = vol / self.fft.len() as f64;
        let mut out = GridField::zeros(self.output.clone(), self.components);
        let counts = self.output.counts();
        let dim = counts.len();
        let mut prod = vec![Complex64::new(0.0, 0.0); dens.len()];
        for (c, spec) in self.spectra.iter().enumerate() {
            for ((p, a), b) in prod.iter_mut().zip(spec).zip(&dens) {
                *p = a * b;
            }
            self.fft.run(&mut prod, true);
            let mut idx = [0usize; 3];
            for k in 0..self.output.len() {
                let src = (0..dim).fold(0, |acc, a| acc * self.fft.shape[a] + idx[a]);
                out.data[k * self.components + c] = prod[src].re * norm;
                for a in (0..dim).rev() {
                    idx[a] += 1;
                    if idx[a] < counts[a] {
                        break;
                    }
                    idx[a] = 0;
                }
            }
        }
        out
    }
}

fn embed(values: &[f64], counts: &[usize], shape: &[usize]) -> Vec<Complex64> {
    let total: usize = shape.iter().product();
    let mut buf = vec![Complex64::new(0.0, 0.0); total];
    let dim = counts.len();
    let mut idx = vec![0usize; dim];
    for &v in values {
        let dst = idx.iter().zip(shape).fold(0, |acc, (&i, &n)| acc * n + i);
        buf[dst] = Complex64::new(v, 0.0);
        for a in (0..dim).rev() {
            idx[a] += 1;
            if idx[a] < counts[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    buf
}

/// One-shot convolution of `kernel` (any number of components) with a scalar `density`.
pub fn convolve(kernel: &GridField, density: &GridField) -> Result<GridField> {
    if density.components() != 1 {
        return Err(Error::Contract("density must be scalar".into()));
    }
    Ok(Convolver::new(kernel, density.lattice())?.apply(density.data()))
}

/// Separable convolution of every component with a normalized, truncated
/// Gaussian of standard deviation `sigma` (value units) along each axis.
/// Zero padding at the box edges. `sigma = 0` is the identity.
pub fn gaussian_smooth(field: &GridField, sigma: f64) -> GridField {
    if sigma == 0.0 {
        return field.clone();
    }
    let lat = field.lattice().clone();
    let comps = field.components();
    let strides = lat.strides();
    let mut cur = field.data().to_vec();
    for a in 0..lat.dim() {
        let h = lat.spacing()[a];
        let reach = (4.0 * sigma / h).floor() as i64;
        let mut w: Vec<f64> =
            (-reach..=reach).map(|m| (-0.5 * (m as f64 * h / sigma).powi(2)).exp()).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        let n = lat.counts()[a] as i64;
        let mut next = vec![0.0; cur.len()];
        for k in 0..lat.len() {
            let i = lat.multi_index(k)[a] as i64;
            for (j, wj) in w.iter().enumerate() {
                let src = i + j as i64 - reach;
                if src < 0 || src >= n {
                    continue;
                }
                let kk = (k as i64 + (src - i) * strides[a] as i64) as usize;
                for c in 0..comps {
                    next[k * comps + c] += wj * cur[kk * comps + c];
                }
            }
        }
        cur = next;
    }
    GridField { lattice: lat, components: comps, data: cur }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn line(n: usize, h: f64, origin: f64) -> Lattice {
        Lattice::new(vec![origin], vec![h], vec![n]).unwrap()
    }

    #[test]
    fn indices_round_trip() {
        let lat = Lattice::new(vec![0.0, 1.0, 2.0], vec![0.5, 0.25, 1.0], vec![3, 4, 5]).unwrap();
        for k in 0..lat.len() {
            assert_eq!(lat.flat_index(&lat.multi_index(k)), k);
        }
        assert_eq!(lat.node(lat.flat_index(&[2, 3, 4])), vec![1.0, 1.75, 6.0]);
    }

    #[test]
    fn symmetric_lattice_avoids_origin() {
        let lat = Lattice::symmetric(1, 1.0, 0.1).unwrap();
        assert_eq!(lat.counts(), &[20]);
        assert!((0..lat.len()).all(|k| lat.node(k)[0].abs() > 0.04));
        assert_relative_eq!(lat.node(0)[0], -0.95, epsilon = 1e-12);
    }

    #[test]
    fn spike_convolution_reproduces_density() {
        let h = 0.1;
        let kernel_lat = line(5, h, -0.2);
        let mut kernel = GridField::zeros(kernel_lat, 1);
        kernel.data_mut()[2] = 1.0 / h; // unit mass at 0
        let dens_lat = line(7, h, 1.0);
        let dens = GridField::from_data(dens_lat, 1, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]).unwrap();
        let out = convolve(&kernel, &dens).unwrap();
        assert_eq!(out.lattice().counts(), &[11]);
        for k in 0..7 {
            let z = dens.lattice().node(k);
            let mut v = [0.0];
            out.interpolate(&z, &mut v);
            assert!((v[0] - dens.data()[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn convolution_matches_direct_sum_in_2d() {
        let a_lat = Lattice::new(vec![-0.3, 0.0], vec![0.1, 0.2], vec![4, 3]).unwrap();
        let b_lat = Lattice::new(vec![0.5, -0.4], vec![0.1, 0.2], vec![5, 6]).unwrap();
        let a = GridField::from_fn(a_lat, 2, |z, out| {
            out[0] = z[0] + 2.0 * z[1];
            out[1] = (z[0] * z[1]).sin();
            Ok(())
        })
        .unwrap();
        let b = GridField::from_fn(b_lat.clone(), 1, |z, out| {
            out[0] = 1.0 + z[0] * z[0] - z[1];
            Ok(())
        })
        .unwrap();
        let out = convolve(&a, &b).unwrap();
        let vol = b_lat.cell_volume();
        for k in 0..out.lattice().len() {
            let u = out.lattice().node(k);
            let mut direct = [0.0; 2];
            for j in 0..b_lat.len() {
                let z = b_lat.node(j);
                let arg = [u[0] - z[0], u[1] - z[1]];
                let mut av = [0.0; 2];
                a.interpolate(&arg, &mut av);
                direct[0] += av[0] * b.data()[j] * vol;
                direct[1] += av[1] * b.data()[j] * vol;
            }
            assert!((out.value(k)[0] - direct[0]).abs() < 1e-10);
            assert!((out.value(k)[1] - direct[1]).abs() < 1e-10);
        }
    }

    #[test]
    fn spacing_mismatch_is_rejected() {
        let a = GridField::zeros(line(4, 0.1, 0.0), 1);
        let b = GridField::zeros(line(4, 0.2, 0.0), 1);
        assert!(matches!(convolve(&a, &b), Err(Error::Contract(_))));
    }

    #[test]
    fn interpolation_is_exact_for_multilinear_functions() {
        let lat = Lattice::new(vec![0.0, 0.0], vec![0.5, 0.25], vec![5, 5]).unwrap();
        let f = GridField::from_fn(lat, 1, |z, o| {
            o[0] = 1.0 + 2.0 * z[0] - z[1] + 3.0 * z[0] * z[1];
            Ok(())
        })
        .unwrap();
        let mut v = [0.0];
        f.interpolate(&[0.8, 0.6], &mut v);
        assert_relative_eq!(v[0], 1.0 + 1.6 - 0.6 + 3.0 * 0.48, epsilon = 1e-12);
        f.interpolate(&[5.0, 0.0], &mut v);
        assert_eq!(v[0], 0.0);
    }

    #[test]
    fn smoothing_preserves_interior_mass() {
        let lat = line(200, 0.01, 0.0);
        let mut f = GridField::zeros(lat, 1);
        f.data_mut()[100] = 100.0;
        f.data_mut()[90] = 50.0;
        let g = gaussian_smooth(&f, 0.03);
        let m0: f64 = f.data().iter().sum();
        let m1: f64 = g.data().iter().sum();
        assert!((m0 - m1).abs() < 1e-12 * m0);
        assert!(g.data()[100] < 100.0 && g.data()[95] > 0.0);
    }

    #[test]
    fn hat_function_sobolev_parts() {
        let h = 1e-3;
        let lat = Lattice::new(vec![-1.5], vec![h], vec![3001]).unwrap();
        let f = GridField::from_fn(lat, 1, |z, o| {
            o[0] = (1.0 - z[0].abs()).max(0.0);
            Ok(())
        })
        .unwrap();
        assert!((f.lp_norm(1.0) - 1.0).abs() < 4.0 * h);
        assert!((f.gradient().lp_norm(1.0) - 2.0).abs() < 4.0 * h);
        assert!((f.sobolev_norm(1.0) - 3.0).abs() < 4.0 * h);
    }
}
