//! Ewald sum matrix for a periodic cubic cell.
//!
//! For atoms `i ≠ j` with separation `r = r_i − r_j` (minimum image):
//!
//! ```text
//! x_sri  = Z_i Z_j Σ_L erfc(a|r+L|) / |r+L|
//! x_lri  = Z_i Z_j (4π/V) Σ_{G≠0} exp(−|G|²/4a²) / |G|² · cos(G·r)
//! x_self = −(Z_i² + Z_j²) a/√π − (Z_i + Z_j)² π / (2a²V)
//! ```
//!
//! with `L = cell_edge·n` over integer triples `‖n‖_∞ ≤ real_cutoff` and
//! `G = 2π n / cell_edge` over `0 < ‖n‖_∞ ≤ recip_cutoff`. Diagonal entries
//! are `½|Z_i|^2.4`, carried entirely by `x_self`.
//!
//! `x_sri + x_lri − Z_i Z_j π/(a²V)` is the pair Coulomb interaction and does
//! not depend on `a`; [`ewald_energy`] gives the total lattice energy.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EwaldSystem<T> {
    /// Charges; atomic numbers in the usual descriptor setting.
    #[serde(rename = "Z")]
    pub z: Vec<T>,
    /// Cartesian positions in the same length unit as `cell_edge`.
    pub positions: Vec<[T; 3]>,
    pub cell_edge: T,
    /// Splitting parameter (inverse length).
    pub a: T,
    pub real_cutoff: usize,
    pub recip_cutoff: usize,
}

impl<T: Scalar> EwaldSystem<T> {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn volume(&self) -> T {
        self.cell_edge * self.cell_edge * self.cell_edge
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Geometry(m));
        if self.z.is_empty() {
            return bad("system has no atoms".into());
        }
        if self.z.len() != self.positions.len() {
            return bad(format!("{} charges but {} positions", self.z.len(), self.positions.len()));
        }
        if !(self.cell_edge > T::zero()) || !self.cell_edge.is_finite() {
            return bad(format!("cell edge must be positive, got {}", self.cell_edge));
        }
        if !(self.a > T::zero()) || !self.a.is_finite() {
            return bad(format!("splitting parameter must be positive, got {}", self.a));
        }
        if self.real_cutoff < 1 || self.recip_cutoff < 1 {
            return bad("cutoffs must be >= 1".into());
        }
        if self.z.iter().any(|z| !z.is_finite()) || self.positions.iter().flatten().any(|p| !p.is_finite()) {
            return bad("non-finite charge or position".into());
        }
        Ok(())
    }

    /// Positions wrapped into `[0, cell_edge)³`.
    pub fn wrapped_positions(&self) -> Vec<[T; 3]> {
        let c = self.cell_edge;
        self.positions
            .iter()
            .map(|p| {
                p.map(|x| {
                    let w = x - (x / c).floor() * c;
                    if w >= c {
                        T::zero()
                    } else {
                        w
                    }
                })
            })
            .collect()
    }

    /// Minimum-image separation `r_i − r_j`.
    fn separation(&self, pos: &[[T; 3]], i: usize, j: usize) -> [T; 3] {
        let c = self.cell_edge;
        let mut d = [T::zero(); 3];
        for k in 0..3 {
            let x = pos[i][k] - pos[j][k];
            d[k] = x - (x / c).round() * c;
        }
        d
    }

    fn check_distinct(&self, pos: &[[T; 3]]) -> Result<()> {
        let tol = T::of(1e-12) * self.cell_edge;
        for i in 0..pos.len() {
            for j in 0..i {
                if norm(self.separation(pos, i, j)) < tol {
                    return Err(Error::Geometry(format!("atoms {j} and {i} coincide")));
                }
            }
        }
        Ok(())
    }
}

/// Per-term decomposition; `x = x_sri + x_lri + x_self` elementwise.
#[derive(Clone, Debug, PartialEq)]
pub struct EwaldMatrix<T> {
    pub x: Tensor<T>,
    pub x_sri: Tensor<T>,
    pub x_lri: Tensor<T>,
    pub x_self: Tensor<T>,
}

fn norm<T: Scalar>(v: [T; 3]) -> T {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn cube(cutoff: usize) -> impl Iterator<Item = [i64; 3]> {
    let c = cutoff as i64;
    (-c..=c).flat_map(move |x| (-c..=c).flat_map(move |y| (-c..=c).map(move |z| [x, y, z])))
}

fn lattice_vectors<T: Scalar>(cell: T, cutoff: usize) -> Vec<[T; 3]> {
    cube(cutoff).map(|n| n.map(|k| cell * T::of(k as f64))).collect()
}

/// Reciprocal vectors with their weights `(4π/V) exp(−|G|²/4a²)/|G|²`.
fn reciprocal_terms<T: Scalar>(sys: &EwaldSystem<T>) -> Vec<([T; 3], T)> {
    let unit = T::of(2.0 * PI) / sys.cell_edge;
    let pref = T::of(4.0 * PI) / sys.volume();
    let four_a2 = T::of(4.0) * sys.a * sys.a;
    cube(sys.recip_cutoff)
        .filter(|n| *n != [0, 0, 0])
        .map(|n| {
            let g = n.map(|k| unit * T::of(k as f64));
            let g2 = g[0] * g[0] + g[1] * g[1] + g[2] * g[2];
            (g, pref * (-g2 / four_a2).exp() / g2)
        })
        .collect()
}

fn real_space_sum<T: Scalar>(d: [T; 3], lattice: &[[T; 3]], a: T, skip_origin: bool) -> T {
    let mut s = T::zero();
    for l in lattice {
        let r = norm([d[0] + l[0], d[1] + l[1], d[2] + l[2]]);
        if skip_origin && r == T::zero() {
            continue;
        }
        s += (a * r).erfc() / r;
    }
    s
}

fn reciprocal_sum<T: Scalar>(d: [T; 3], recip: &[([T; 3], T)]) -> T {
    recip
        .iter()
        .map(|(g, w)| *w * (g[0] * d[0] + g[1] * d[1] + g[2] * d[2]).cos())
        .sum()
}

pub fn ewald_sum_matrix<T: Scalar>(sys: &EwaldSystem<T>) -> Result<EwaldMatrix<T>> {
    sys.validate()?;
    let pos = sys.wrapped_positions();
    sys.check_distinct(&pos)?;
    let n = sys.len();
    let lattice = lattice_vectors(sys.cell_edge, sys.real_cutoff);
    let recip = reciprocal_terms(sys);
    let sqrt_pi = T::of(PI.sqrt());
    let background = T::of(PI) / (T::of(2.0) * sys.a * sys.a * sys.volume());

    let mut x_sri = Tensor::zeros(&[n, n]);
    let mut x_lri = Tensor::zeros(&[n, n]);
    let mut x_self = Tensor::zeros(&[n, n]);
    for i in 0..n {
        let zi = sys.z[i];
        x_self.set(i, i, T::of(0.5) * zi.abs().powf(T::of(2.4)));
        for j in 0..i {
            let zj = sys.z[j];
            let d = sys.separation(&pos, i, j);
            let r = zi * zj * real_space_sum(d, &lattice, sys.a, false);
            let l = zi * zj * reciprocal_sum(d, &recip);
            let s = -(zi * zi + zj * zj) * sys.a / sqrt_pi - (zi + zj) * (zi + zj) * background;
            for (m, v) in [(&mut x_sri, r), (&mut x_lri, l), (&mut x_self, s)] {
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
    }
    let mut x = x_sri.clone();
    for ((o, l), s) in x.data_mut().iter_mut().zip(x_lri.data()).zip(x_self.data()) {
        *o = *o + *l + *s;
    }
    Ok(EwaldMatrix { x, x_sri, x_lri, x_self })
}

/// `Z_i Z_j φ(r_ij)` for `i ≠ j`, the `a`-independent pair interaction
/// `x_sri + x_lri − Z_i Z_j π/(a²V)`; zero diagonal.
pub fn pair_interaction<T: Scalar>(sys: &EwaldSystem<T>, m: &EwaldMatrix<T>) -> Tensor<T> {
    let n = sys.len();
    let c = T::of(PI) / (sys.a * sys.a * sys.volume());
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                out.set(i, j, m.x_sri.get(i, j) + m.x_lri.get(i, j) - sys.z[i] * sys.z[j] * c);
            }
        }
    }
    out
}

/// Electrostatic energy of the periodic system per cell (Gaussian units,
/// uniform neutralizing background when `ΣZ ≠ 0`).
pub fn ewald_energy<T: Scalar>(sys: &EwaldSystem<T>) -> Result<T> {
    let m = ewald_sum_matrix(sys)?;
    let n = sys.len();
    let lattice = lattice_vectors(sys.cell_edge, sys.real_cutoff);
    let recip = reciprocal_terms(sys);
    let zero = [T::zero(); 3];
    let image_self = real_space_sum(zero, &lattice, sys.a, true) + reciprocal_sum(zero, &recip);
    let v = sys.volume();
    let a = sys.a;
    let mut e = T::zero();
    for i in 0..n {
        for j in 0..i {
            e += m.x_sri.get(i, j) + m.x_lri.get(i, j);
        }
    }
    let z2: T = sys.z.iter().map(|&z| z * z).sum();
    let q: T = sys.z.iter().copied().sum();
    e += T::of(0.5) * z2 * image_self;
    e -= a / T::of(PI.sqrt()) * z2;
    e -= T::of(PI) / (T::of(2.0) * v * a * a) * q * q;
    Ok(e)
}

/// Plain image sum `Σ_L Z_i Z_j / |r_ij + L|` over `‖n‖_∞ ≤ shells`, the
/// `L = 0` term skipped on the diagonal. No splitting or damping.
pub fn direct_sum_oracle<T: Scalar>(sys: &EwaldSystem<T>, shells: usize) -> Result<Tensor<T>> {
    sys.validate()?;
    let pos = sys.wrapped_positions();
    sys.check_distinct(&pos)?;
    let n = sys.len();
    let lattice = lattice_vectors(sys.cell_edge, shells);
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..=i {
            let d = if i == j { [T::zero(); 3] } else { sys.separation(&pos, i, j) };
            let mut s = T::zero();
            for l in &lattice {
                let r = norm([d[0] + l[0], d[1] + l[1], d[2] + l[2]]);
                if r > T::zero() {
                    s += T::one() / r;
                }
            }
            let v = sys.z[i] * sys.z[j] * s;
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    Ok(out)
}

/// Upper bound on how much any off-diagonal `x_lri` entry can change when
/// reciprocal shells beyond `recip_cutoff` are added.
///
/// Shell `s` holds `24s² + 2` vectors, each with `|G| ≥ 2πs/cell_edge`.
pub fn reciprocal_tail_bound<T: Scalar>(sys: &EwaldSystem<T>) -> T {
    let mut zmax = T::zero();
    for i in 0..sys.len() {
        for j in 0..i {
            zmax = zmax.max((sys.z[i] * sys.z[j]).abs());
        }
    }
    let pref = 4.0 * PI / sys.volume().as_f64();
    let four_a2 = 4.0 * sys.a.as_f64().powi(2);
    let mut tail = 0.0;
    for s in sys.recip_cutoff + 1.. {
        let g = 2.0 * PI * s as f64 / sys.cell_edge.as_f64();
        let term = (24.0 * (s * s) as f64 + 2.0) * (-g * g / four_a2).exp() / (g * g);
        tail += term;
        if term < 1e-300 || term < tail * 1e-17 {
            break;
        }
    }
    zmax * T::of(pref * tail)
}

/// `|x_ij|` with entries below `threshold` set to zero.
pub fn thresholded<T: Scalar>(x: &Tensor<T>, threshold: T) -> Result<Tensor<T>> {
    if !(threshold >= T::zero()) {
        return Err(Error::InvalidArgument(format!("threshold must be >= 0, got {threshold}")));
    }
    Ok(x.map(|v| if v.abs() < threshold { T::zero() } else { v.abs() }))
}

pub fn write_heatmap<T: Scalar, W: Write>(mut out: W, x: &Tensor<T>, threshold: T) -> Result<()> {
    let t = thresholded(x, threshold)?;
    let (n, m) = t.matrix_dims("write_heatmap")?;
    write!(out, "atom")?;
    for j in 0..m {
        write!(out, ",{j}")?;
    }
    writeln!(out)?;
    for i in 0..n {
        write!(out, "{i}")?;
        for v in t.row(i) {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Heatmap CSV of `|x_ij|`; header row and first column hold atom indices.
pub fn interaction_heatmap<T: Scalar>(m: &EwaldMatrix<T>, threshold: T, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(crate::error::file_err(path))?;
    let mut w = std::io::BufWriter::new(file);
    write_heatmap(&mut w, &m.x, threshold)?;
    w.flush()?;
    Ok(())
}

pub fn load_system(path: &Path) -> Result<EwaldSystem<f64>> {
    let text = std::fs::read_to_string(path).map_err(crate::error::file_err(path))?;
    let sys: EwaldSystem<f64> = serde_json::from_str(&text)?;
    sys.validate()?;
    Ok(sys)
}
