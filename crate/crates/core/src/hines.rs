//! Per-neuron linear system and its linear-time Hines solve.
//!
//! For a compartment `i` with parent `p = parent(i)` the assembled matrix has
//! three kinds of nonzeros:
//!
//! ```text
//! M[i][i] = d[i]        diagonal
//! M[p][i] = a[i]        upper: row of the parent, column of the child
//! M[i][p] = b_off[i]    lower: row of the child, column of the parent
//! ```
//!
//! The textbook sweep names its vectors `(a, b, c)` for (upper, diagonal,
//! lower); here those are `(a, d, b_off)`.

use std::ops::{Div, Mul, Sub};

use crate::error::{Error, Result};
use crate::morphology::Morphology;

/// Spatially varying cable coefficients of one neuron.
#[derive(Clone, Debug, PartialEq)]
pub struct CableParams {
    /// Model function `f` sampled per compartment.
    pub f: Vec<f64>,
    /// `g` on the edge `(i, parent(i))`; entry 0 is unused.
    pub g_half: Vec<f64>,
    /// Capacitance per compartment.
    pub cap: Vec<f64>,
    pub dx: f64,
    pub dt: f64,
}

impl CableParams {
    pub fn uniform(n: usize, f: f64, g: f64, cap: f64, dx: f64, dt: f64) -> Self {
        Self { f: vec![f; n], g_half: vec![g; n], cap: vec![cap; n], dx, dt }
    }

    pub fn len(&self) -> usize {
        self.cap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cap.is_empty()
    }

    pub fn check(&self, n: usize) -> Result<()> {
        for (what, len) in [("f", self.f.len()), ("g_half", self.g_half.len()), ("cap", self.cap.len())] {
            if len != n {
                return Err(Error::Dimension { what, got: len, expected: n });
            }
        }
        if !(self.dx > 0.0) {
            return Err(Error::InvalidParam(format!("dx must be > 0, got {}", self.dx)));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidParam(format!("dt must be > 0, got {}", self.dt)));
        }
        if let Some(i) = self.cap.iter().position(|&c| !(c > 0.0)) {
            return Err(Error::InvalidParam(format!("cap[{i}] must be > 0")));
        }
        Ok(())
    }
}

/// The linear system of one neuron for the current time step.
#[derive(Clone, Debug)]
pub struct HinesSystem {
    parents: Vec<u32>,
    /// Upper coefficients, constant in time.
    pub a: Vec<f64>,
    /// Lower coefficients, constant in time.
    pub b_off: Vec<f64>,
    /// Diagonal, refreshed every step and consumed by the solve.
    pub d: Vec<f64>,
    /// Right-hand side; holds the solution after `solve`.
    pub rhs: Vec<f64>,
    ready: bool,
}

/// Arithmetic accounting for one solve.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SolveStats {
    pub flops: u64,
}

/// Exact floating-point operation count of a solve on `n` compartments.
pub const fn solve_flops(n: usize) -> u64 {
    8 * (n as u64 - 1) + 1
}

impl HinesSystem {
    /// Fill the time-constant off-diagonals from the cable parameters.
    pub fn assemble(m: &Morphology, p: &CableParams) -> Result<Self> {
        let n = m.len();
        p.check(n)?;
        let scale = 2.0 * p.dx * p.dx;
        let mut a = vec![0.0; n];
        let mut b_off = vec![0.0; n];
        for (k, &par) in m.parents().iter().enumerate() {
            let i = k + 1;
            let par = par as usize;
            a[i] = -p.f[par] * p.g_half[i] / scale;
            b_off[i] = -p.f[i] * p.g_half[i] / scale;
        }
        Ok(Self { parents: m.parents().to_vec(), a, b_off, d: vec![0.0; n], rhs: vec![0.0; n], ready: true })
    }

    /// Raw system with explicit coefficients; used by oracles and tests.
    pub fn from_coefficients(m: &Morphology, a: Vec<f64>, b_off: Vec<f64>, d: Vec<f64>, rhs: Vec<f64>) -> Result<Self> {
        let n = m.len();
        for (what, len) in [("a", a.len()), ("b_off", b_off.len()), ("d", d.len()), ("rhs", rhs.len())] {
            if len != n {
                return Err(Error::Dimension { what, got: len, expected: n });
            }
        }
        Ok(Self { parents: m.parents().to_vec(), a, b_off, d, rhs, ready: true })
    }

    /// A system whose coefficients have not been assembled yet.
    pub fn unassembled(m: &Morphology) -> Self {
        let n = m.len();
        Self { parents: m.parents().to_vec(), a: vec![0.0; n], b_off: vec![0.0; n], d: vec![0.0; n], rhs: vec![0.0; n], ready: false }
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    #[inline]
    pub fn parent(&self, i: usize) -> Option<usize> {
        (i > 0).then(|| self.parents[i - 1] as usize)
    }

    pub fn parents(&self) -> &[u32] {
        &self.parents
    }

    /// Refresh diagonal and right-hand side for voltage `v` and current `current`.
    ///
    /// Each row subtracts its own off-diagonal entries from `cap/dt`: the
    /// parent link `b_off[i]` plus `a[j]` for every child `j`. The explicit
    /// difference terms use the same row coefficients.
    pub fn update_step(&mut self, p: &CableParams, v: &[f64], current: &[f64]) -> Result<()> {
        if !self.ready {
            return Err(Error::Unassembled);
        }
        let n = self.len();
        if v.len() != n {
            return Err(Error::Dimension { what: "V", got: v.len(), expected: n });
        }
        if current.len() != n {
            return Err(Error::Dimension { what: "I", got: current.len(), expected: n });
        }
        if p.cap.len() != n {
            return Err(Error::Dimension { what: "cap", got: p.cap.len(), expected: n });
        }
        let inv_dt = 1.0 / p.dt;
        for i in 0..n {
            let c = p.cap[i] * inv_dt;
            self.d[i] = c;
            self.rhs[i] = c * v[i] - current[i];
        }
        for (k, &par) in self.parents.iter().enumerate() {
            let i = k + 1;
            let par = par as usize;
            let (a, b) = (self.a[i], self.b_off[i]);
            self.d[i] -= b;
            self.d[par] -= a;
            self.rhs[i] -= b * (v[par] - v[i]);
            self.rhs[par] -= a * (v[i] - v[par]);
        }
        Ok(())
    }

    /// Hines backward/forward sweep. Overwrites `rhs` with the solution and
    /// destroys `d`; both are rebuilt by the next `update_step`.
    pub fn solve(&mut self) -> Result<SolveStats> {
        if !self.ready {
            return Err(Error::Unassembled);
        }
        let mut storage = SliceStorage {
            parents: &self.parents,
            upper: &self.a,
            diag: &mut self.d,
            lower: &self.b_off,
            rhs: &mut self.rhs,
        };
        let flops = hines_sweep(&mut storage)?;
        Ok(SolveStats { flops })
    }

    pub fn solution(&self) -> &[f64] {
        &self.rhs
    }

    /// Dense copy of the matrix, row-major.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            m[i][i] = self.d[i];
        }
        for (k, &par) in self.parents.iter().enumerate() {
            let i = k + 1;
            let par = par as usize;
            m[par][i] = self.a[i];
            m[i][par] = self.b_off[i];
        }
        m
    }
}

/// Arithmetic the sweep needs; implemented by `f64` and by test-side
/// instrumented scalars.
pub trait Scalar: Copy + PartialEq + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> {
    fn zero() -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn zero() -> Self {
        0.0
    }
}

/// Element access for the sweep, addressed by compartment. `upper(i)` is
/// `M[parent(i)][i]` and `lower(i)` is `M[i][parent(i)]`.
pub trait SweepStorage {
    type T: Scalar;
    fn len(&self) -> usize;
    fn parent(&self, i: usize) -> usize;
    fn upper(&mut self, i: usize) -> Self::T;
    fn lower(&mut self, i: usize) -> Self::T;
    fn diag(&mut self, i: usize) -> Self::T;
    fn set_diag(&mut self, i: usize, v: Self::T);
    fn rhs(&mut self, i: usize) -> Self::T;
    fn set_rhs(&mut self, i: usize, v: Self::T);
}

struct SliceStorage<'a> {
    parents: &'a [u32],
    upper: &'a [f64],
    diag: &'a mut [f64],
    lower: &'a [f64],
    rhs: &'a mut [f64],
}

impl SweepStorage for SliceStorage<'_> {
    type T = f64;
    #[inline]
    fn len(&self) -> usize {
        self.diag.len()
    }
    #[inline]
    fn parent(&self, i: usize) -> usize {
        self.parents[i - 1] as usize
    }
    #[inline]
    fn upper(&mut self, i: usize) -> f64 {
        self.upper[i]
    }
    #[inline]
    fn lower(&mut self, i: usize) -> f64 {
        self.lower[i]
    }
    #[inline]
    fn diag(&mut self, i: usize) -> f64 {
        self.diag[i]
    }
    #[inline]
    fn set_diag(&mut self, i: usize, v: f64) {
        self.diag[i] = v;
    }
    #[inline]
    fn rhs(&mut self, i: usize) -> f64 {
        self.rhs[i]
    }
    #[inline]
    fn set_rhs(&mut self, i: usize, v: f64) {
        self.rhs[i] = v;
    }
}

/// The Hines sweep over any storage. Returns the number of floating-point
/// operations performed: 5 per non-root compartment eliminating, 3 per
/// non-root compartment substituting, 1 for the root.
pub fn hines_sweep<S: SweepStorage>(s: &mut S) -> Result<u64> {
    let n = s.len();
    let zero = S::T::zero();
    let mut flops = 0u64;
    for i in (1..n).rev() {
        let p = s.parent(i);
        let di = s.diag(i);
        if di == zero {
            return Err(Error::Singular { index: i });
        }
        let factor = s.upper(i) / di;
        let dp = s.diag(p) - factor * s.lower(i);
        s.set_diag(p, dp);
        let rp = s.rhs(p) - factor * s.rhs(i);
        s.set_rhs(p, rp);
        flops += 5;
    }
    let d0 = s.diag(0);
    if d0 == zero {
        return Err(Error::Singular { index: 0 });
    }
    let r0 = s.rhs(0) / d0;
    s.set_rhs(0, r0);
    flops += 1;
    for i in 1..n {
        let p = s.parent(i);
        let r = s.rhs(i) - s.lower(i) * s.rhs(p);
        let r = r / s.diag(i);
        s.set_rhs(i, r);
        flops += 3;
    }
    Ok(flops)
}

/// Reference solvers that share no code with the sweep.
pub mod oracle {
    use rand::Rng;

    use super::{CableParams, HinesSystem};
    use crate::error::{Error, Result};
    use crate::morphology::Morphology;

    /// Gaussian elimination with partial pivoting on the densified matrix.
    pub fn dense_solve(sys: &HinesSystem) -> Result<Vec<f64>> {
        let mut m = sys.to_dense();
        let mut r = sys.rhs.clone();
        gauss(&mut m, &mut r)?;
        Ok(r)
    }

    /// Solve `m x = r` in place (`r` becomes `x`).
    pub fn gauss(m: &mut [Vec<f64>], r: &mut [f64]) -> Result<()> {
        let n = r.len();
        for col in 0..n {
            let (piv, best) = (col..n)
                .map(|row| (row, m[row][col].abs()))
                .fold((col, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best == 0.0 {
                return Err(Error::Singular { index: col });
            }
            m.swap(col, piv);
            r.swap(col, piv);
            for row in col + 1..n {
                let f = m[row][col] / m[col][col];
                if f == 0.0 {
                    continue;
                }
                for k in col..n {
                    m[row][k] -= f * m[col][k];
                }
                r[row] -= f * r[col];
            }
        }
        for row in (0..n).rev() {
            let mut acc = r[row];
            for k in row + 1..n {
                acc -= m[row][k] * r[k];
            }
            r[row] = acc / m[row][row];
        }
        Ok(())
    }

    /// Textbook Thomas algorithm for `sub[i] x[i-1] + diag[i] x[i] + sup[i] x[i+1] = rhs[i]`
    /// (`sub[0]` and `sup[n-1]` unused).
    pub fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
        let n = diag.len();
        let mut c = vec![0.0; n];
        let mut x = vec![0.0; n];
        let mut denom = diag[0];
        if denom == 0.0 {
            return Err(Error::Singular { index: 0 });
        }
        c[0] = if n > 1 { sup[0] / denom } else { 0.0 };
        x[0] = rhs[0] / denom;
        for i in 1..n {
            denom = diag[i] - sub[i] * c[i - 1];
            if denom == 0.0 {
                return Err(Error::Singular { index: i });
            }
            if i + 1 < n {
                c[i] = sup[i] / denom;
            }
            x[i] = (rhs[i] - sub[i] * x[i - 1]) / denom;
        }
        for i in (0..n - 1).rev() {
            x[i] -= c[i] * x[i + 1];
        }
        Ok(x)
    }

    /// Thomas elimination run from the last row upward, then substituted
    /// downward. Same operation order as the Hines sweep on a chain.
    pub fn thomas_bottom_up(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
        let n = diag.len();
        let mut b = diag.to_vec();
        let mut x = rhs.to_vec();
        for i in (1..n).rev() {
            if b[i] == 0.0 {
                return Err(Error::Singular { index: i });
            }
            let factor = sup[i - 1] / b[i];
            b[i - 1] = b[i - 1] - factor * sub[i];
            x[i - 1] = x[i - 1] - factor * x[i];
        }
        if b[0] == 0.0 {
            return Err(Error::Singular { index: 0 });
        }
        x[0] = x[0] / b[0];
        for i in 1..n {
            x[i] = x[i] - sub[i] * x[i - 1];
            x[i] = x[i] / b[i];
        }
        Ok(x)
    }

    /// A diagonally dominant system on a random `n`-compartment tree with
    /// coefficients, voltages and currents drawn from `rng`. `branch_prob`
    /// 0 gives a chain.
    pub fn random_system<R: Rng + ?Sized>(n: usize, branch_prob: f64, rng: &mut R) -> Result<HinesSystem> {
        let m = Morphology::random(n, branch_prob, rng)?;
        let mut draw = |lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(lo..hi)).collect() };
        let mut p = CableParams::uniform(n, 1.0, 1.0, 1.0, 1.0, 1.0);
        p.f = draw(0.5, 2.0);
        p.g_half = draw(0.5, 2.0);
        p.cap = draw(0.5, 2.0);
        let v = draw(-1.0, 1.0);
        let current = draw(-1.0, 1.0);
        p.dx = rng.random_range(0.2..1.0);
        p.dt = rng.random_range(0.01..1.0);
        let mut sys = HinesSystem::assemble(&m, &p)?;
        sys.update_step(&p, &v, &current)?;
        Ok(sys)
    }

    /// Chain system as `(sub, diag, sup, rhs)` tridiagonal bands.
    pub fn chain_bands(sys: &HinesSystem) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = sys.len();
        let mut sup = vec![0.0; n];
        sup[..n.saturating_sub(1)].copy_from_slice(&sys.a[1..]);
        (sys.b_off.clone(), sys.d.clone(), sup, sys.rhs.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::oracle::{dense_solve, thomas, thomas_bottom_up, chain_bands};
    use super::*;
    use crate::seed::{rng_for, Stream};
    use rand::Rng;

    fn max_rel(x: &[f64], y: &[f64]) -> f64 {
        let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        x.iter().zip(y).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale
    }

    #[test]
    fn assemble_single_compartment() {
        let m = Morphology::chain(1).unwrap();
        let sys = HinesSystem::assemble(&m, &CableParams::uniform(1, 1.0, 1.0, 1.0, 1.0, 1.0)).unwrap();
        assert_eq!(sys.a, vec![0.0]);
        assert_eq!(sys.b_off, vec![0.0]);
    }

    #[test]
    fn assemble_chain_of_three() {
        let m = Morphology::chain(3).unwrap();
        let sys = HinesSystem::assemble(&m, &CableParams::uniform(3, 1.0, 1.0, 1.0, 1.0, 1.0)).unwrap();
        assert_eq!(sys.a, vec![0.0, -0.5, -0.5]);
        assert_eq!(sys.b_off, vec![0.0, -0.5, -0.5]);
    }

    #[test]
    fn assemble_uses_parent_f_for_upper() {
        let m = Morphology::branched(&[3, 2, 2], &[2, 2]).unwrap();
        let mut p = CableParams::uniform(7, 1.0, 1.0, 1.0, 0.5, 1.0);
        p.f = (1..=7).map(|x| x as f64).collect();
        p.g_half = vec![0.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        let sys = HinesSystem::assemble(&m, &p).unwrap();
        for i in 1..7 {
            let par = m.parent(i).unwrap();
            assert_eq!(sys.a[i], -p.f[par] * p.g_half[i] / 0.5);
            assert_eq!(sys.b_off[i], -p.f[i] * p.g_half[i] / 0.5);
        }
    }

    #[test]
    fn constant_f_gives_symmetric_coefficients() {
        let mut rng = rng_for(3, Stream::Morphology, 0);
        let m = Morphology::random(60, 0.3, &mut rng).unwrap();
        let mut p = CableParams::uniform(60, 0.7, 1.0, 1.0, 0.3, 0.1);
        p.g_half = (0..60).map(|_| rng.random_range(0.5..2.0)).collect();
        let sys = HinesSystem::assemble(&m, &p).unwrap();
        assert_eq!(sys.a, sys.b_off);
    }

    #[test]
    fn assemble_rejects_bad_params() {
        let m = Morphology::chain(3).unwrap();
        let mut p = CableParams::uniform(3, 1.0, 1.0, 1.0, 1.0, 1.0);
        p.f.pop();
        assert!(matches!(HinesSystem::assemble(&m, &p), Err(Error::Dimension { what: "f", .. })));
        let p = CableParams::uniform(3, 1.0, 1.0, 1.0, 0.0, 1.0);
        assert!(matches!(HinesSystem::assemble(&m, &p), Err(Error::InvalidParam(_))));
    }

    #[test]
    fn update_step_single_compartment() {
        let m = Morphology::chain(1).unwrap();
        let p = CableParams::uniform(1, 1.0, 1.0, 2.0, 1.0, 0.5);
        let mut sys = HinesSystem::assemble(&m, &p).unwrap();
        sys.update_step(&p, &[3.0], &[1.0]).unwrap();
        assert_eq!(sys.d, vec![4.0]);
        assert_eq!(sys.rhs, vec![11.0]);
    }

    #[test]
    fn update_step_constant_field() {
        let m = Morphology::chain(3).unwrap();
        let p = CableParams::uniform(3, 1.0, 1.0, 1.0, 1.0, 1.0);
        let mut sys = HinesSystem::assemble(&m, &p).unwrap();
        sys.update_step(&p, &[1.0; 3], &[0.0; 3]).unwrap();
        assert_eq!(sys.rhs, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn update_step_matches_literal_formula_for_constant_f() {
        // Literal row formula: rhs[i] = c V[i] - I[i] - a[i](V[p] - V[i]) - sum_j b_off[j](V[j] - V[i]).
        let mut rng = rng_for(11, Stream::Morphology, 0);
        let m = Morphology::random(40, 0.3, &mut rng).unwrap();
        let mut p = CableParams::uniform(40, 1.3, 1.0, 1.0, 0.7, 0.2);
        p.g_half = (0..40).map(|_| rng.random_range(0.5..2.0)).collect();
        p.cap = (0..40).map(|_| rng.random_range(0.5..2.0)).collect();
        let v: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cur: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut sys = HinesSystem::assemble(&m, &p).unwrap();
        sys.update_step(&p, &v, &cur).unwrap();
        for i in 0..40 {
            let mut want = p.cap[i] / p.dt * v[i] - cur[i];
            if let Some(par) = m.parent(i) {
                want -= sys.a[i] * (v[par] - v[i]);
            }
            for j in 1..40 {
                if m.parent(j) == Some(i) {
                    want -= sys.b_off[j] * (v[j] - v[i]);
                }
            }
            assert!((sys.rhs[i] - want).abs() <= 1e-12 * (1.0 + want.abs()), "row {i}");
        }
    }

    #[test]
    fn update_step_requires_assembly() {
        let m = Morphology::chain(2).unwrap();
        let p = CableParams::uniform(2, 1.0, 1.0, 1.0, 1.0, 1.0);
        let mut sys = HinesSystem::unassembled(&m);
        assert!(matches!(sys.update_step(&p, &[0.0; 2], &[0.0; 2]), Err(Error::Unassembled)));
        assert!(matches!(sys.solve(), Err(Error::Unassembled)));
    }

    #[test]
    fn update_then_dense_residual() {
        let mut rng = rng_for(20, Stream::Morphology, 1);
        let m = Morphology::random(20, 0.3, &mut rng).unwrap();
        let mut p = CableParams::uniform(20, 1.0, 1.0, 1.0, 0.5, 0.1);
        p.f = (0..20).map(|_| rng.random_range(0.5..2.0)).collect();
        p.g_half = (0..20).map(|_| rng.random_range(0.5..2.0)).collect();
        p.cap = (0..20).map(|_| rng.random_range(0.5..2.0)).collect();
        let v: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cur: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut sys = HinesSystem::assemble(&m, &p).unwrap();
        sys.update_step(&p, &v, &cur).unwrap();
        let dense = sys.to_dense();
        let x = dense_solve(&sys).unwrap();
        for i in 0..20 {
            let r: f64 = (0..20).map(|j| dense[i][j] * x[j]).sum::<f64>() - sys.rhs[i];
            assert!(r.abs() < 1e-12, "row {i} residual {r}");
        }
    }

    #[test]
    fn solve_scalar() {
        let m = Morphology::chain(1).unwrap();
        let mut sys = HinesSystem::from_coefficients(&m, vec![0.0], vec![0.0], vec![4.0], vec![11.0]).unwrap();
        let st = sys.solve().unwrap();
        assert_eq!(sys.solution(), &[2.75]);
        assert_eq!(st.flops, 1);
    }

    #[test]
    fn solve_flop_count_default_neuron() {
        let m = Morphology::chain(450).unwrap();
        let p = CableParams::uniform(450, 1.0, 1.0, 1.0, 1.0, 1.0);
        let mut sys = HinesSystem::assemble(&m, &p).unwrap();
        sys.update_step(&p, &vec![0.5; 450], &vec![0.0; 450]).unwrap();
        assert_eq!(sys.solve().unwrap().flops, 3593);
        assert_eq!(solve_flops(450), 3593);
    }

    #[test]
    fn solve_matches_dense_on_branched_example() {
        let m = Morphology::branched(&[3, 2, 2], &[2, 2]).unwrap();
        let mut rng = rng_for(5, Stream::Morphology, 9);
        for _ in 0..20 {
            let a: Vec<f64> = (0..7).map(|i| if i == 0 { 0.0 } else { rng.random_range(-1.0..0.0) }).collect();
            let b: Vec<f64> = (0..7).map(|i| if i == 0 { 0.0 } else { rng.random_range(-1.0..0.0) }).collect();
            let d: Vec<f64> = (0..7).map(|_| rng.random_range(4.0..6.0)).collect();
            let r: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut sys = HinesSystem::from_coefficients(&m, a, b, d, r).unwrap();
            let want = dense_solve(&sys).unwrap();
            sys.solve().unwrap();
            assert!(max_rel(sys.solution(), &want) <= 1e-10);
        }
    }

    #[test]
    fn branched_pattern_matches_parent_edges() {
        let m = Morphology::branched(&[3, 2, 2], &[2, 2]).unwrap();
        let sys = HinesSystem::from_coefficients(&m, vec![1.0; 7], vec![1.0; 7], vec![1.0; 7], vec![0.0; 7]).unwrap();
        let dense = sys.to_dense();
        let mut want = std::collections::BTreeSet::new();
        for i in 1..7 {
            let p = m.parent(i).unwrap();
            want.insert((i, p));
            want.insert((p, i));
        }
        let mut got = std::collections::BTreeSet::new();
        for i in 0..7 {
            for j in 0..7 {
                if i != j && dense[i][j] != 0.0 {
                    got.insert((i, j));
                }
            }
        }
        assert_eq!(got, want);
        assert!(want.contains(&(5, 2)) && want.contains(&(3, 2)));
    }

    #[test]
    fn zero_pivot_is_reported() {
        let m = Morphology::chain(3).unwrap();
        let mut sys = HinesSystem::from_coefficients(&m, vec![0.0, 1.0, 1.0], vec![0.0, 1.0, 1.0], vec![1.0, 1.0, 0.0], vec![1.0; 3]).unwrap();
        assert!(matches!(sys.solve(), Err(Error::Singular { index: 2 })));
        let m = Morphology::chain(2).unwrap();
        // Root pivot vanishes after elimination: 1 - (1/1)*1 = 0.
        let mut sys = HinesSystem::from_coefficients(&m, vec![0.0, 1.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![1.0; 2]).unwrap();
        assert!(matches!(sys.solve(), Err(Error::Singular { index: 0 })));
    }

    #[test]
    fn dense_identity() {
        let m = Morphology::chain(5).unwrap();
        let r = vec![1.0, -2.0, 3.0, 0.5, 7.0];
        let sys = HinesSystem::from_coefficients(&m, vec![0.0; 5], vec![0.0; 5], vec![1.0; 5], r.clone()).unwrap();
        assert_eq!(dense_solve(&sys).unwrap(), r);
    }

    #[test]
    fn chain_matches_thomas_and_bottom_up_bitwise() {
        let mut rng = rng_for(8, Stream::Morphology, 2);
        for n in [1usize, 2, 3, 17, 450] {
            let m = Morphology::chain(n).unwrap();
            let a: Vec<f64> = (0..n).map(|i| if i == 0 { 0.0 } else { rng.random_range(-1.0..0.0) }).collect();
            let b: Vec<f64> = (0..n).map(|i| if i == 0 { 0.0 } else { rng.random_range(-1.0..0.0) }).collect();
            let d: Vec<f64> = (0..n).map(|_| rng.random_range(2.5..4.0)).collect();
            let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut sys = HinesSystem::from_coefficients(&m, a, b, d, r).unwrap();
            let (sub, diag, sup, rhs) = chain_bands(&sys);
            let t = thomas(&sub, &diag, &sup, &rhs).unwrap();
            let bu = thomas_bottom_up(&sub, &diag, &sup, &rhs).unwrap();
            sys.solve().unwrap();
            assert!(max_rel(sys.solution(), &t) <= 1e-12);
            assert_eq!(sys.solution(), &bu[..]);
        }
    }
}
