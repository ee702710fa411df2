//! Shared numerical kernels: overflow-safe hyperbolic ratios, adaptive
//! Gauss-Kronrod quadrature (scalar and vector valued), central finite-difference
//! stencils and the seeded random-stream descriptor.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerances for [`integrate`] and [`integrate_vec`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-14,
            max_subdivisions: 1 << 15,
        }
    }
}

impl QuadratureSpec {
    pub fn new(rel_tol: f64, abs_tol: f64, max_subdivisions: usize) -> Result<Self> {
        let spec = Self {
            rel_tol,
            abs_tol,
            max_subdivisions,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) {
            return Err(Error::invalid("rel_tol", "must be > 0"));
        }
        if !(self.abs_tol > 0.0) {
            return Err(Error::invalid("abs_tol", "must be > 0"));
        }
        if self.max_subdivisions < 1 {
            return Err(Error::invalid("max_subdivisions", "must be >= 1"));
        }
        Ok(())
    }
}

/// `sinh(a) / cosh(b)` for `a <= b`, evaluated as
/// `e^(a-b) (1 - e^(-2a)) / (1 + e^(-2b))` so that it never overflows.
pub fn hyp_ratio_sinh_cosh(a: f64, b: f64) -> Result<f64> {
    if a > b {
        return Err(Error::Domain(format!(
            "hyp_ratio_sinh_cosh requires a <= b, got a = {a}, b = {b}"
        )));
    }
    Ok(sinh_over_cosh(a, b))
}

/// `cosh(a) / cosh(b)` for `a <= b`, evaluated as
/// `e^(a-b) (1 + e^(-2a)) / (1 + e^(-2b))`.
pub fn hyp_ratio_cosh_cosh(a: f64, b: f64) -> Result<f64> {
    if a > b {
        return Err(Error::Domain(format!(
            "hyp_ratio_cosh_cosh requires a <= b, got a = {a}, b = {b}"
        )));
    }
    Ok(cosh_over_cosh(a, b))
}

// Unchecked forms. Both are exact identities for any real a, b; they only
// overflow when |a| - |b| exceeds ~709.
#[inline]
pub(crate) fn sinh_over_cosh(a: f64, b: f64) -> f64 {
    let (aa, ab) = (a.abs(), b.abs());
    let mag = (aa - ab).exp() * -(-2.0 * aa).exp_m1() / (1.0 + (-2.0 * ab).exp());
    if a < 0.0 {
        -mag
    } else {
        mag
    }
}

#[inline]
pub(crate) fn cosh_over_cosh(a: f64, b: f64) -> f64 {
    let (aa, ab) = (a.abs(), b.abs());
    (aa - ab).exp() * (1.0 + (-2.0 * aa).exp()) / (1.0 + (-2.0 * ab).exp())
}

/// `ln cosh(x)` without overflow.
#[inline]
pub fn ln_cosh(x: f64) -> f64 {
    let ax = x.abs();
    ax + (-2.0 * ax).exp().ln_1p() - std::f64::consts::LN_2
}

/// `1 / cosh(x)` without overflow.
#[inline]
pub fn sech(x: f64) -> f64 {
    let ax = x.abs();
    2.0 * (-ax).exp() / (1.0 + (-2.0 * ax).exp())
}

const INITIAL_PANELS: usize = 8;
const MAX_DEPTH: u32 = 60;

// Kronrod 15-point nodes on [0, 1] (positive half, descending), the odd
// ones shared with the 7-point Gauss rule.
const XK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

type Panel = (f64, f64, u32, Vec<f64>, Vec<f64>);

/// Adaptive Gauss-Kronrod (7/15) quadrature of a vector-valued integrand.
///
/// `f(x, out)` writes the `dim` components of the integrand at `x` into
/// `out`. All components share one set of nodes, so a family of integrands
/// that depends smoothly on a parameter yields results that depend smoothly
/// on it too (the property finite-difference stencils over the result rely
/// on). A panel is accepted once every component meets
/// `|K15 - G7| <= max(abs_tol, rel_tol |I|) * width / (hi - lo)`.
pub fn integrate_vec<F>(
    f: F,
    dim: usize,
    lo: f64,
    hi: f64,
    spec: &QuadratureSpec,
) -> Result<Vec<f64>>
where
    F: FnMut(f64, &mut [f64]) -> Result<()>,
{
    integrate_vec_impl(f, dim, lo, hi, spec, false)
}

/// As [`integrate_vec`], but the relative tolerance refers to the coarse
/// estimate of `int |f|` instead of `|int f|`. Used for integrands that
/// cross zero, where a tolerance relative to a near-zero result would force
/// needless refinement.
pub(crate) fn integrate_vec_l1<F>(
    f: F,
    dim: usize,
    lo: f64,
    hi: f64,
    spec: &QuadratureSpec,
) -> Result<Vec<f64>>
where
    F: FnMut(f64, &mut [f64]) -> Result<()>,
{
    integrate_vec_impl(f, dim, lo, hi, spec, true)
}

fn integrate_vec_impl<F>(
    mut f: F,
    dim: usize,
    lo: f64,
    hi: f64,
    spec: &QuadratureSpec,
    l1_reference: bool,
) -> Result<Vec<f64>>
where
    F: FnMut(f64, &mut [f64]) -> Result<()>,
{
    if !(lo <= hi) {
        return Err(Error::Domain(format!(
            "integrate requires lo <= hi, got [{lo}, {hi}]"
        )));
    }
    let mut result = vec![0.0; dim];
    if lo == hi || dim == 0 {
        return Ok(result);
    }
    let width = hi - lo;
    let mut vals = vec![0.0; 15 * dim];
    let mut kron = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];
    let mut kabs = vec![0.0; dim];
    // Writes the K15 and G7 estimates of panel [a, b] into kron / gauss.
    let mut panel =
        |a: f64, b: f64, kron: &mut [f64], gauss: &mut [f64], kabs: &mut [f64]| -> Result<()> {
            let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
            for i in 0..15 {
                let x = if i < 7 {
                    c - h * XK[i]
                } else if i == 7 {
                    c
                } else {
                    c + h * XK[14 - i]
                };
                let out = &mut vals[i * dim..(i + 1) * dim];
                f(x, out)?;
                if out.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Domain(format!("integrand is not finite at x = {x}")));
                }
            }
            for k in 0..dim {
                let (mut sk, mut sg, mut sa) = (0.0, 0.0, 0.0);
                for i in 0..15 {
                    let j = if i < 8 { i } else { 14 - i };
                    let v = vals[i * dim + k];
                    sk += WK[j] * v;
                    sa += WK[j] * v.abs();
                    if j % 2 == 1 {
                        sg += WG[j / 2] * v;
                    }
                }
                kron[k] = h * sk;
                gauss[k] = h * sg;
                kabs[k] = h * sa;
            }
            Ok(())
        };

    // Coarse pass: gives the magnitude used by the relative tolerance.
    let step = width / INITIAL_PANELS as f64;
    // (a, b, depth, kronrod, gauss)
    let mut pending: Vec<Panel> = Vec::with_capacity(INITIAL_PANELS);
    let mut estimate = vec![0.0; dim];
    for i in 0..INITIAL_PANELS {
        let a = lo + step * i as f64;
        let b = if i + 1 == INITIAL_PANELS {
            hi
        } else {
            lo + step * (i + 1) as f64
        };
        panel(a, b, &mut kron, &mut gauss, &mut kabs)?;
        for k in 0..dim {
            estimate[k] += if l1_reference { kabs[k] } else { kron[k] };
        }
        pending.push((a, b, 0, kron.clone(), gauss.clone()));
    }
    let tol: Vec<f64> = estimate
        .iter()
        .map(|i| spec.abs_tol.max(spec.rel_tol * i.abs()))
        .collect();

    let mut stack: Vec<(f64, f64, u32)> = Vec::with_capacity(64);
    let accept = |kron: &[f64], gauss: &[f64], w: f64| {
        (0..dim).all(|k| (kron[k] - gauss[k]).abs() <= tol[k] * w / width)
    };
    for (a, b, depth, k, g) in pending.into_iter().rev() {
        if accept(&k, &g, b - a) {
            for (r, v) in result.iter_mut().zip(&k) {
                *r += v;
            }
        } else {
            stack.push((a, b, depth));
        }
    }
    let mut processed = 0usize;
    while let Some((a, b, depth)) = stack.pop() {
        // split first: the stored panel failed its test
        let m = 0.5 * (a + b);
        for (pa, pb) in [(m, b), (a, m)] {
            processed += 1;
            if processed > spec.max_subdivisions {
                return Err(Error::NonConvergence {
                    lo,
                    hi,
                    subdivisions: spec.max_subdivisions,
                });
            }
            panel(pa, pb, &mut kron, &mut gauss, &mut kabs)?;
            if accept(&kron, &gauss, pb - pa) {
                for (r, v) in result.iter_mut().zip(&kron) {
                    *r += v;
                }
            } else if depth + 1 >= MAX_DEPTH {
                return Err(Error::NonConvergence {
                    lo,
                    hi,
                    subdivisions: processed,
                });
            } else {
                stack.push((pa, pb, depth + 1));
            }
        }
    }
    Ok(result)
}

/// Adaptive Gauss-Kronrod quadrature of a scalar integrand on `[lo, hi]`.
pub fn integrate<F>(mut f: F, lo: f64, hi: f64, spec: &QuadratureSpec) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    integrate_vec(
        |x, out| {
            out[0] = f(x);
            Ok(())
        },
        1,
        lo,
        hi,
        spec,
    )
    .map(|v| v[0])
}

/// Fallible-integrand variant of [`integrate`].
pub fn try_integrate<F>(mut f: F, lo: f64, hi: f64, spec: &QuadratureSpec) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    integrate_vec(
        |x, out| {
            out[0] = f(x)?;
            Ok(())
        },
        1,
        lo,
        hi,
        spec,
    )
    .map(|v| v[0])
}

/// Derivative order supported by [`stencil_derivative`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    First,
    Second,
    Third,
}

impl Order {
    /// Default step: `1e-4 max(1, |x|)` for first and second derivatives,
    /// `1e-2 max(1, |x|)` for the third.
    pub fn default_step(self, x: f64) -> f64 {
        let scale = x.abs().max(1.0);
        match self {
            Order::First | Order::Second => 1e-4 * scale,
            Order::Third => 1e-2 * scale,
        }
    }
}

/// A central finite-difference stencil: offsets and weights, so callers that
/// evaluate many stencils at once can batch the function evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    pub offsets: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Stencil {
    pub fn new(order: Order, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::Domain(format!("stencil step must be > 0, got {h}")));
        }
        let (offsets, weights) = match order {
            // Richardson combination (4 D(h/2) - D(h)) / 3 of central differences
            Order::First => {
                let hh = 0.5 * h;
                (
                    vec![h, -h, hh, -hh],
                    vec![
                        -1.0 / (6.0 * h),
                        1.0 / (6.0 * h),
                        4.0 / (3.0 * h),
                        -4.0 / (3.0 * h),
                    ],
                )
            }
            Order::Second => (
                vec![h, 0.0, -h],
                vec![1.0 / (h * h), -2.0 / (h * h), 1.0 / (h * h)],
            ),
            Order::Third => {
                let d = 2.0 * h * h * h;
                (
                    vec![2.0 * h, h, -h, -2.0 * h],
                    vec![1.0 / d, -2.0 / d, 2.0 / d, -1.0 / d],
                )
            }
        };
        Ok(Self { offsets, weights })
    }

    /// Five-point one-sided stencil on offsets `0, h, .., 4h` (or their
    /// negatives), for points where a central stencil would cross a kink.
    pub fn one_sided(order: Order, h: f64, forward: bool) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::Domain(format!("stencil step must be > 0, got {h}")));
        }
        const P: usize = 5;
        let d = match order {
            Order::First => 1,
            Order::Second => 2,
            Order::Third => 3,
        };
        // Taylor conditions sum_i w_i i^m / m! = [m == d]
        let mut a = [[0.0f64; P + 1]; P];
        let mut fact = 1.0;
        for (m, row) in a.iter_mut().enumerate() {
            if m > 0 {
                fact *= m as f64;
            }
            for (i, v) in row.iter_mut().take(P).enumerate() {
                *v = (i as f64).powi(m as i32) / fact;
            }
            row[P] = if m == d { 1.0 } else { 0.0 };
        }
        for c in 0..P {
            let piv = (c..P)
                .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
                .unwrap();
            a.swap(c, piv);
            for r in 0..P {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..=P {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        let sign: f64 = if forward { 1.0 } else { -1.0 };
        let scale = sign.powi(d as i32) / h.powi(d as i32);
        let offsets = (0..P).map(|i| sign * i as f64 * h).collect();
        let weights = (0..P).map(|i| a[i][P] / a[i][i] * scale).collect();
        Ok(Self { offsets, weights })
    }

    /// Largest distance from the evaluation point to a node.
    pub fn reach(&self) -> f64 {
        self.offsets.iter().fold(0.0, |m, o| m.max(o.abs()))
    }

    pub fn apply(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

/// Central finite-difference derivative of `g` at `x`.
///
/// Order 1 uses one Richardson step over `(h, h/2)`; order 2 the three-point
/// formula; order 3 the five-point formula
/// `(g(x+2h) - 2g(x+h) + 2g(x-h) - g(x-2h)) / (2h^3)`.
pub fn stencil_derivative<G>(mut g: G, x: f64, order: Order, h: f64) -> Result<f64>
where
    G: FnMut(f64) -> Result<f64>,
{
    let stencil = Stencil::new(order, h)?;
    let values = stencil
        .offsets
        .iter()
        .map(|o| g(x + o))
        .collect::<Result<Vec<_>>>()?;
    Ok(stencil.apply(&values))
}

/// Reproducible random-stream descriptor. Equal `(seed, stream_id)` give
/// identical sequences; distinct `stream_id`s select independent ChaCha
/// streams of the same key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Descriptor for sub-stream `offset` relative to this one.
    pub fn substream(&self, offset: u64) -> Self {
        Self {
            seed: self.seed,
            stream_id: self.stream_id.wrapping_add(offset),
        }
    }

    /// Materialize a fresh generator positioned at the start of the stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}
