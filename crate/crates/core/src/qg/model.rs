use ndarray::{Array3, ArrayView2};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use super::fft::Fft2;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::rng::SeedTree;

pub const SECONDS_PER_DAY: f64 = 86_400.0;
pub const SECONDS_PER_YEAR: f64 = 365.0 * SECONDS_PER_DAY;

/// Physical parameters of the two-layer model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Upper/lower layer thickness ratio.
    pub delta: f64,
    /// Upper-layer zonal velocity, m/s.
    pub u1: f64,
    /// Lower-layer zonal velocity, m/s.
    pub u2: f64,
    /// Planetary vorticity gradient, 1/(m s).
    pub beta: f64,
    /// Bottom drag coefficient, 1/s.
    pub r_ek: f64,
    /// Deformation radius, m.
    pub rd: f64,
    /// Time step, s.
    pub dt: f64,
}

impl ModelParams {
    /// Default configuration for a grid of side `n`: the experiment's
    /// physical constants with a time step that scales with resolution
    /// (one hour at 128×128).
    pub fn for_grid(n: usize) -> Self {
        Self {
            delta: 0.05,
            u1: 0.025,
            u2: 0.0,
            beta: 5e-12,
            r_ek: 3.5e-8,
            rd: 15_000.0,
            dt: 3600.0 * 128.0 / n as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.rd > 0.0) {
            return Err(Error::config(format!("rd must be positive, got {}", self.rd)));
        }
        if !(self.r_ek >= 0.0) || !self.beta.is_finite() || !self.u1.is_finite() || !self.u2.is_finite() {
            return Err(Error::config("drag, beta and velocities must be finite (drag >= 0)"));
        }
        Ok(())
    }

    pub fn f1(&self) -> f64 {
        1.0 / (self.rd * self.rd * (1.0 + self.delta))
    }

    pub fn f2(&self) -> f64 {
        self.delta * self.f1()
    }

    /// Background PV gradients `(β₁, β₂)` including the mean-shear term.
    pub fn background_gradients(&self) -> (f64, f64) {
        let shear = self.u1 - self.u2;
        (self.beta + self.f1() * shear, self.beta - self.f2() * shear)
    }

    /// Steps per day; errors if `dt` does not divide a day.
    pub fn steps_per_day(&self) -> Result<usize> {
        let s = SECONDS_PER_DAY / self.dt;
        if (s - s.round()).abs() > 1e-9 || s < 1.0 {
            return Err(Error::config(format!("dt = {} s does not divide one day", self.dt)));
        }
        Ok(s.round() as usize)
    }
}

/// How the multistep scheme starts before two tendencies of history exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Startup {
    /// Forward Euler, then second-order Adams-Bashforth. Caps the global
    /// accuracy at second order.
    EulerAb2,
    /// Third-order strong-stability-preserving Runge-Kutta for the first
    /// two steps, which keeps the scheme third order overall.
    #[default]
    Rk3,
}

/// Switches for numerical experiments; the defaults are the production
/// configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Numerics {
    pub spectral_filter: bool,
    pub nonlinear: bool,
    pub startup: Startup,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            spectral_filter: true,
            nonlinear: true,
            startup: Startup::Rk3,
        }
    }
}

/// Two-layer PV in physical and spectral form, plus the tendency history of
/// the multistep scheme.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub(crate) q: Array3<f64>,
    pub(crate) qh: Vec<Complex64>,
    pub(crate) t: f64,
    history: Vec<Vec<Complex64>>,
}

/// Physical PV at one instant; the unit stored in trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub q: Array3<f64>,
}

impl Snapshot {
    pub fn n(&self) -> usize {
        self.q.shape()[1]
    }

    pub fn layer(&self, k: usize) -> ArrayView2<'_, f64> {
        self.q.index_axis(ndarray::Axis(0), k)
    }

    pub fn as_slice(&self) -> &[f64] {
        self.q.as_slice().expect("standard layout")
    }
}

impl ModelState {
    pub fn q(&self) -> &Array3<f64> {
        &self.q
    }

    pub fn qh(&self) -> &[Complex64] {
        &self.qh
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn n(&self) -> usize {
        self.q.shape()[1]
    }

    /// Flat `[layer][iy][ix]` view of the physical PV.
    pub fn as_slice(&self) -> &[f64] {
        self.q.as_slice().expect("standard layout")
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            time: self.t,
            q: self.q.clone(),
        }
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }
}

/// Pseudo-spectral two-layer quasi-geostrophic model on a doubly periodic
/// square.
#[derive(Debug, Clone)]
pub struct QgModel {
    grid: GridSpec,
    params: ModelParams,
    numerics: Numerics,
    fft: Fft2,
    /// Derivative wavenumbers (Nyquist zeroed).
    kx: Vec<f64>,
    ky: Vec<f64>,
    ksq: Vec<f64>,
    /// Rows of the inverse 2×2 inversion matrix per mode.
    inv: Vec<[f64; 4]>,
    filter: Vec<f64>,
    dealias: Vec<bool>,
}

impl QgModel {
    pub fn new(grid: GridSpec, params: ModelParams) -> Result<Self> {
        Self::with_numerics(grid, params, Numerics::default())
    }

    pub fn with_numerics(grid: GridSpec, params: ModelParams, numerics: Numerics) -> Result<Self> {
        params.validate()?;
        let n = grid.n();
        let dk = 2.0 * std::f64::consts::PI / grid.length();
        let wavenumber = |i: usize| -> isize {
            if i < n / 2 {
                i as isize
            } else {
                i as isize - n as isize
            }
        };
        let (f1, f2) = (params.f1(), params.f2());
        let dx = grid.dx();
        let cutoff = n as isize / 3;
        // Exponential filter acting beyond 0.65π of the grid wavenumber.
        let (filter_fac, cphi) = (23.6, 0.65 * std::f64::consts::PI);

        let mut kx = vec![0.0; n * n];
        let mut ky = vec![0.0; n * n];
        let mut ksq = vec![0.0; n * n];
        let mut inv = vec![[0.0; 4]; n * n];
        let mut filter = vec![1.0; n * n];
        let mut dealias = vec![false; n * n];
        for iy in 0..n {
            for ix in 0..n {
                let idx = iy * n + ix;
                let (my, mx) = (wavenumber(iy), wavenumber(ix));
                let (kxf, kyf) = (mx as f64 * dk, my as f64 * dk);
                kx[idx] = if 2 * ix == n { 0.0 } else { kxf };
                ky[idx] = if 2 * iy == n { 0.0 } else { kyf };
                let k2 = kxf * kxf + kyf * kyf;
                ksq[idx] = k2;
                if idx != 0 {
                    let det = k2 * k2 + k2 * (f1 + f2);
                    inv[idx] = [-(k2 + f2) / det, -f1 / det, -f2 / det, -(k2 + f1) / det];
                }
                let wv = ((kxf * dx).powi(2) + (kyf * dx).powi(2)).sqrt();
                if wv > cphi {
                    filter[idx] = (-filter_fac * (wv - cphi).powi(4)).exp();
                }
                dealias[idx] = mx.abs() <= cutoff && my.abs() <= cutoff;
            }
        }
        Ok(Self {
            grid,
            params,
            numerics,
            fft: Fft2::new(n),
            kx,
            ky,
            ksq,
            inv,
            filter,
            dealias,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn numerics(&self) -> &Numerics {
        &self.numerics
    }

    pub fn dt(&self) -> f64 {
        self.params.dt
    }

    /// Build a state from physical PV; the multistep history starts empty.
    pub fn state_from_physical(&self, q: Array3<f64>, t: f64) -> Result<ModelState> {
        let n = self.grid.n();
        if q.shape() != [2, n, n] {
            return Err(Error::config(format!(
                "state shape {:?} does not match a two-layer {n}×{n} grid",
                q.shape()
            )));
        }
        let q = q.as_standard_layout().into_owned();
        let qh = self.forward_layers(q.as_slice().unwrap());
        Ok(ModelState {
            q,
            qh,
            t,
            history: Vec::new(),
        })
    }

    pub fn state_from_slice(&self, q: &[f64], t: f64) -> Result<ModelState> {
        let n = self.grid.n();
        let arr = Array3::from_shape_vec((2, n, n), q.to_vec())
            .map_err(|e| Error::config(format!("state vector: {e}")))?;
        self.state_from_physical(arr, t)
    }

    pub fn state_from_snapshot(&self, snap: &Snapshot) -> Result<ModelState> {
        self.state_from_physical(snap.q.clone(), snap.time)
    }

    /// Build a state from spectral PV.
    pub fn state_from_spectral(&self, qh: Vec<Complex64>, t: f64) -> Result<ModelState> {
        let n = self.grid.n();
        if qh.len() != 2 * n * n {
            return Err(Error::config("spectral state has the wrong length"));
        }
        let q = self.inverse_layers(&qh);
        Ok(ModelState {
            q: Array3::from_shape_vec((2, n, n), q).unwrap(),
            qh,
            t,
            history: Vec::new(),
        })
    }

    pub fn rest_state(&self) -> ModelState {
        let n = self.grid.n();
        self.state_from_physical(Array3::zeros((2, n, n)), 0.0).unwrap()
    }

    /// Small random PV, band-limited to the lower half of the resolved
    /// wavenumbers; the seed for a spin-up run.
    pub fn random_state(&self, amplitude: f64, seed: u64) -> ModelState {
        let n = self.grid.n();
        let mut rng = SeedTree::new(seed).stream("qg-init", n as u64, 0);
        let mut q = Array3::<f64>::zeros((2, n, n));
        for v in q.iter_mut() {
            *v = amplitude * rng.sample::<f64, _>(StandardNormal);
        }
        let mut qh = self.forward_layers(q.as_slice().unwrap());
        let half = n as isize / 4;
        for layer in 0..2 {
            for idx in 0..n * n {
                let (iy, ix) = (idx / n, idx % n);
                let my = if iy < n / 2 { iy as isize } else { iy as isize - n as isize };
                let mx = if ix < n / 2 { ix as isize } else { ix as isize - n as isize };
                if idx == 0 || my.abs() > half || mx.abs() > half {
                    qh[layer * n * n + idx] = Complex64::new(0.0, 0.0);
                }
            }
        }
        self.state_from_spectral(qh, 0.0).unwrap()
    }

    /// Forward transform of both layers, packed into one complex FFT.
    pub fn forward_layers(&self, q: &[f64]) -> Vec<Complex64> {
        let np = self.grid.points();
        let mut buf: Vec<Complex64> = (0..np).map(|i| Complex64::new(q[i], q[np + i])).collect();
        let mut work = self.fft.scratch();
        self.fft.forward(&mut buf, &mut work);
        let mut out = vec![Complex64::new(0.0, 0.0); 2 * np];
        let n = self.grid.n();
        for idx in 0..np {
            let f = buf[idx];
            let g = buf[self.neg_index(idx, n)].conj();
            out[idx] = 0.5 * (f + g);
            out[np + idx] = Complex64::new(0.0, -0.5) * (f - g);
        }
        out
    }

    /// Inverse transform of both layers; the imaginary parts of each
    /// layer's inverse are discarded.
    pub fn inverse_layers(&self, qh: &[Complex64]) -> Vec<f64> {
        let np = self.grid.points();
        let i = Complex64::new(0.0, 1.0);
        let mut buf: Vec<Complex64> = (0..np).map(|k| qh[k] + i * qh[np + k]).collect();
        let mut work = self.fft.scratch();
        self.fft.inverse(&mut buf, &mut work);
        let mut out = vec![0.0; 2 * np];
        for k in 0..np {
            out[k] = buf[k].re;
            out[np + k] = buf[k].im;
        }
        out
    }

    /// Largest imaginary residue of the per-layer inverse transforms,
    /// relative to the field's RMS norm.
    pub fn reality_residue(&self, state: &ModelState) -> f64 {
        let np = self.grid.points();
        let mut work = self.fft.scratch();
        let mut worst: f64 = 0.0;
        for layer in 0..2 {
            let mut buf = state.qh[layer * np..(layer + 1) * np].to_vec();
            self.fft.inverse(&mut buf, &mut work);
            let norm = (buf.iter().map(|c| c.re * c.re).sum::<f64>() / np as f64).sqrt();
            let imag = buf.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
            if norm > 0.0 {
                worst = worst.max(imag / norm);
            }
        }
        worst
    }

    #[inline]
    fn neg_index(&self, idx: usize, n: usize) -> usize {
        let (iy, ix) = (idx / n, idx % n);
        ((n - iy) % n) * n + (n - ix) % n
    }

    /// Spectral streamfunction from spectral PV. Mode (0,0) is set to zero.
    pub fn invert_pv(&self, qh: &[Complex64]) -> Vec<Complex64> {
        let np = self.grid.points();
        let mut psih = vec![Complex64::new(0.0, 0.0); 2 * np];
        for idx in 1..np {
            let [a, b, c, d] = self.inv[idx];
            let (q1, q2) = (qh[idx], qh[np + idx]);
            psih[idx] = a * q1 + b * q2;
            psih[np + idx] = c * q1 + d * q2;
        }
        psih
    }

    /// Spectral PV tendency.
    pub fn tendency(&self, state: &ModelState) -> Result<Vec<Complex64>> {
        self.tendency_of(&state.qh, state.t)
    }

    fn tendency_of(&self, qh: &[Complex64], t: f64) -> Result<Vec<Complex64>> {
        if qh.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::Blowup {
                time: t,
                what: "non-finite spectral PV".into(),
            });
        }
        let n = self.grid.n();
        let np = n * n;
        let p = &self.params;
        let (beta1, beta2) = p.background_gradients();
        let psih = self.invert_pv(qh);
        let i = Complex64::new(0.0, 1.0);

        let mut out = vec![Complex64::new(0.0, 0.0); 2 * np];
        for idx in 0..np {
            let ikx = i * self.kx[idx];
            out[idx] = -ikx * (p.u1 * qh[idx] + beta1 * psih[idx]);
            out[np + idx] = -ikx * (p.u2 * qh[np + idx] + beta2 * psih[np + idx])
                + p.r_ek * self.ksq[idx] * psih[np + idx];
        }

        if self.numerics.nonlinear {
            let mut work = self.fft.scratch();
            // Physical q for both layers in one transform: q1 + i q2.
            let mut qphys: Vec<Complex64> = (0..np)
                .map(|k| {
                    if self.dealias[k] {
                        qh[k] + i * qh[np + k]
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                })
                .collect();
            self.fft.inverse(&mut qphys, &mut work);
            for layer in 0..2 {
                let off = layer * np;
                // u + i v, with u = -∂ψ/∂y and v = ∂ψ/∂x.
                let mut vel: Vec<Complex64> = (0..np)
                    .map(|k| {
                        if self.dealias[k] {
                            let ps = psih[off + k];
                            -i * self.ky[k] * ps + i * (i * self.kx[k] * ps)
                        } else {
                            Complex64::new(0.0, 0.0)
                        }
                    })
                    .collect();
                self.fft.inverse(&mut vel, &mut work);
                // Flux u q + i v q, transformed together.
                for (k, v) in vel.iter_mut().enumerate() {
                    let qv = if layer == 0 { qphys[k].re } else { qphys[k].im };
                    *v = Complex64::new(v.re * qv, v.im * qv);
                }
                self.fft.forward(&mut vel, &mut work);
                for k in 0..np {
                    if !self.dealias[k] {
                        continue;
                    }
                    let f = vel[k];
                    let g = vel[self.neg_index(k, n)].conj();
                    let uqh = 0.5 * (f + g);
                    let vqh = Complex64::new(0.0, -0.5) * (f - g);
                    let jac = i * self.kx[k] * uqh + i * self.ky[k] * vqh;
                    out[off + k] -= jac;
                }
            }
        }
        // Flux-form terms cannot change the domain mean.
        out[0] = Complex64::new(0.0, 0.0);
        out[np] = Complex64::new(0.0, 0.0);
        Ok(out)
    }

    /// Advance one time step in place.
    pub fn step(&self, state: &mut ModelState) -> Result<()> {
        let dt = self.params.dt;
        let len = state.qh.len();
        let t0 = self.tendency_of(&state.qh, state.t)?;
        let mut new = vec![Complex64::new(0.0, 0.0); len];
        match (state.history.len(), self.numerics.startup) {
            (0 | 1, Startup::Rk3) => {
                // SSP-RK3 (Shu-Osher form).
                let mut s1 = vec![Complex64::new(0.0, 0.0); len];
                for k in 0..len {
                    s1[k] = state.qh[k] + dt * t0[k];
                }
                let t1 = self.tendency_of(&s1, state.t + dt)?;
                let mut s2 = vec![Complex64::new(0.0, 0.0); len];
                for k in 0..len {
                    s2[k] = 0.75 * state.qh[k] + 0.25 * (s1[k] + dt * t1[k]);
                }
                let t2 = self.tendency_of(&s2, state.t + 0.5 * dt)?;
                for k in 0..len {
                    new[k] = state.qh[k] / 3.0 + 2.0 / 3.0 * (s2[k] + dt * t2[k]);
                }
            }
            (0, Startup::EulerAb2) => {
                for k in 0..len {
                    new[k] = state.qh[k] + dt * t0[k];
                }
            }
            (1, Startup::EulerAb2) => {
                let t1 = &state.history[0];
                for k in 0..len {
                    new[k] = state.qh[k] + dt * (1.5 * t0[k] - 0.5 * t1[k]);
                }
            }
            _ => {
                let (t1, t2) = (&state.history[0], &state.history[1]);
                for k in 0..len {
                    new[k] = state.qh[k]
                        + dt * (23.0 / 12.0 * t0[k] - 16.0 / 12.0 * t1[k] + 5.0 / 12.0 * t2[k]);
                }
            }
        }
        if self.numerics.spectral_filter {
            let np = self.grid.points();
            for (k, v) in new.iter_mut().enumerate() {
                *v *= self.filter[k % np];
            }
        }
        let t_new = state.t + dt;
        if new.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::Blowup {
                time: t_new,
                what: "non-finite spectral coefficient after step".into(),
            });
        }
        let q = self.inverse_layers(&new);
        state.q.as_slice_mut().unwrap().copy_from_slice(&q);
        state.qh = new;
        state.t = t_new;
        state.history.insert(0, t0);
        state.history.truncate(2);
        Ok(())
    }

    pub fn advance(&self, state: &mut ModelState, n_steps: usize) -> Result<()> {
        for _ in 0..n_steps {
            self.step(state)?;
        }
        Ok(())
    }

    /// Run freely for `n_steps`, keeping the initial state and every
    /// `snapshot_every`-th state after it.
    pub fn run_free(
        &self,
        initial: &ModelState,
        n_steps: usize,
        snapshot_every: usize,
    ) -> Result<Vec<Snapshot>> {
        if snapshot_every == 0 {
            return Err(Error::config("snapshot_every must be >= 1"));
        }
        let mut state = initial.clone();
        let mut out = vec![state.snapshot()];
        for s in 1..=n_steps {
            self.step(&mut state)?;
            if s % snapshot_every == 0 {
                out.push(state.snapshot());
            }
        }
        Ok(out)
    }

    /// Layer-weighted total energy (kinetic plus available potential).
    pub fn energy(&self, state: &ModelState) -> f64 {
        let np = self.grid.points();
        let psih = self.invert_pv(&state.qh);
        let d = self.params.delta;
        let (w1, w2) = (d / (1.0 + d), 1.0 / (1.0 + d));
        let f1 = self.params.f1();
        let mut e = 0.0;
        for k in 0..np {
            let (p1, p2) = (psih[k], psih[np + k]);
            e += self.ksq[k] * (w1 * p1.norm_sqr() + w2 * p2.norm_sqr()) + w1 * f1 * (p1 - p2).norm_sqr();
        }
        0.5 * e / (np as f64 * np as f64)
    }

    /// Layer-weighted enstrophy.
    pub fn enstrophy(&self, state: &ModelState) -> f64 {
        let np = self.grid.points();
        let d = self.params.delta;
        let (w1, w2) = (d / (1.0 + d), 1.0 / (1.0 + d));
        let mut z = 0.0;
        for k in 0..np {
            z += w1 * state.qh[k].norm_sqr() + w2 * state.qh[np + k].norm_sqr();
        }
        0.5 * z / (np as f64 * np as f64)
    }

    /// Domain-mean PV per layer.
    pub fn layer_means(&self, state: &ModelState) -> [f64; 2] {
        let np = self.grid.points() as f64;
        [state.qh[0].re / np, state.qh[self.grid.points()].re / np]
    }

    #[cfg(test)]
    pub(crate) fn ksq(&self) -> &[f64] {
        &self.ksq
    }
}
