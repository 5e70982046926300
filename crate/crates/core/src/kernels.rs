//! Compactly supported symmetric kernels and their moment constants.

use std::fmt;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};

/// A kernel and its derivative on the real line.
pub trait KernelFunction: Send + Sync {
    fn eval(&self, u: f64) -> f64;
    fn deriv(&self, u: f64) -> f64;
}

/// Adapter turning a pair of closures into a [`KernelFunction`].
pub struct FnKernel<F, G> {
    pub eval: F,
    pub deriv: G,
}

impl<F, G> KernelFunction for FnKernel<F, G>
where
    F: Fn(f64) -> f64 + Send + Sync,
    G: Fn(f64) -> f64 + Send + Sync,
{
    fn eval(&self, u: f64) -> f64 {
        (self.eval)(u)
    }
    fn deriv(&self, u: f64) -> f64 {
        (self.deriv)(u)
    }
}

struct Epanechnikov;

impl KernelFunction for Epanechnikov {
    fn eval(&self, u: f64) -> f64 {
        if u.abs() <= 1.0 {
            0.75 * (1.0 - u * u)
        } else {
            0.0
        }
    }
    fn deriv(&self, u: f64) -> f64 {
        if u.abs() <= 1.0 {
            -1.5 * u
        } else {
            0.0
        }
    }
}

struct Uniform;

impl KernelFunction for Uniform {
    fn eval(&self, u: f64) -> f64 {
        if u.abs() <= 1.0 {
            0.5
        } else {
            0.0
        }
    }
    fn deriv(&self, _u: f64) -> f64 {
        0.0
    }
}

/// The integrals `μ_l = ∫ z^l K`, `ν_l = ∫ z^l K²` (l = 0, 1, 2) together with
/// `∫ (K')²` and `∫ z² (K')²`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct KernelMoments {
    pub mu: [f64; 3],
    pub nu: [f64; 3],
    pub int_dk_sq: f64,
    pub int_z2_dk_sq: f64,
}

/// A kernel with support `[-A, A]` and its cached constants.
#[derive(Clone)]
pub struct KernelSpec {
    name: String,
    func: Arc<dyn KernelFunction>,
    support: f64,
    boundary_value: f64,
    moments: KernelMoments,
}

impl fmt::Debug for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelSpec")
            .field("name", &self.name)
            .field("support", &self.support)
            .field("boundary_value", &self.boundary_value)
            .field("moments", &self.moments)
            .finish()
    }
}

/// `K(A)` values below this are treated as a kernel vanishing at its support
/// endpoint.
pub const BOUNDARY_ZERO_TOL: f64 = 1e-12;

impl KernelSpec {
    /// Wraps an arbitrary kernel; moments are integrated once here.
    pub fn new(name: impl Into<String>, func: Arc<dyn KernelFunction>, support: f64) -> Result<Self> {
        if !(support > 0.0) || !support.is_finite() {
            return Err(Error::InvalidConfig(format!("kernel support {support} must be positive")));
        }
        let moments = kernel_moments(func.as_ref(), support)?;
        let boundary_value = func.eval(support);
        Ok(Self { name: name.into(), func, support, boundary_value, moments })
    }

    /// Looks up a built-in kernel by its command-line name.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "epanechnikov" => Ok(epanechnikov()),
            "uniform" => Ok(uniform()),
            other => Err(Error::InvalidConfig(format!(
                "unknown kernel `{other}` (expected epanechnikov or uniform)"
            ))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, u: f64) -> f64 {
        if u.abs() > self.support {
            0.0
        } else {
            self.func.eval(u)
        }
    }

    pub fn deriv(&self, u: f64) -> f64 {
        if u.abs() > self.support {
            0.0
        } else {
            self.func.deriv(u)
        }
    }

    /// Support endpoint `A`.
    pub fn support(&self) -> f64 {
        self.support
    }

    /// `K(A)`.
    pub fn boundary_value(&self) -> f64 {
        self.boundary_value
    }

    /// True when `K(A) = 0`, the case in which the derivative band is defined.
    pub fn vanishes_at_boundary(&self) -> bool {
        self.boundary_value.abs() <= BOUNDARY_ZERO_TOL
    }

    pub fn moments(&self) -> &KernelMoments {
        &self.moments
    }

    pub fn mu2(&self) -> f64 {
        self.moments.mu[2]
    }

    pub fn nu0(&self) -> f64 {
        self.moments.nu[0]
    }

    pub fn nu2(&self) -> f64 {
        self.moments.nu[2]
    }
}

/// `K(z) = 0.75 (1 - z²)₊`.
pub fn epanechnikov() -> KernelSpec {
    static CACHE: OnceLock<KernelSpec> = OnceLock::new();
    CACHE
        .get_or_init(|| {
            KernelSpec::new("epanechnikov", Arc::new(Epanechnikov), 1.0)
                .expect("Epanechnikov kernel is a valid density")
        })
        .clone()
}

/// `K(z) = 1/2` on `[-1, 1]`.
pub fn uniform() -> KernelSpec {
    static CACHE: OnceLock<KernelSpec> = OnceLock::new();
    CACHE
        .get_or_init(|| {
            KernelSpec::new("uniform", Arc::new(Uniform), 1.0).expect("uniform kernel is a valid density")
        })
        .clone()
}

/// `K_h(u) = K(u/h)/h`.
pub fn scaled_kernel(k: &KernelSpec, h: f64, u: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::NonPositiveBandwidth(h));
    }
    Ok(k.eval(u / h) / h)
}

const GL_ORDER: usize = 20;
const PANELS: usize = 16;

/// Integrates all eight kernel constants over `[-A, A]` with composite
/// Gauss–Legendre quadrature (16 panels of 20 nodes).
pub fn kernel_moments(k: &dyn KernelFunction, support: f64) -> Result<KernelMoments> {
    let rule = gauss_legendre(GL_ORDER);
    let width = 2.0 * support / PANELS as f64;
    let mut acc = [0.0f64; 8];
    for panel in 0..PANELS {
        let a = -support + panel as f64 * width;
        let mid = a + 0.5 * width;
        for &(x, w) in rule.iter() {
            let z = mid + 0.5 * width * x;
            let wt = 0.5 * width * w;
            let kz = k.eval(z);
            let dk = k.deriv(z);
            let z2 = z * z;
            acc[0] += wt * kz;
            acc[1] += wt * z * kz;
            acc[2] += wt * z2 * kz;
            acc[3] += wt * kz * kz;
            acc[4] += wt * z * kz * kz;
            acc[5] += wt * z2 * kz * kz;
            acc[6] += wt * dk * dk;
            acc[7] += wt * z2 * dk * dk;
        }
    }
    if (acc[0] - 1.0).abs() > 1e-6 {
        return Err(Error::NotADensity(acc[0]));
    }
    if acc[1].abs() > 1e-8 {
        return Err(Error::Asymmetric(acc[1]));
    }
    Ok(KernelMoments {
        mu: [acc[0], acc[1], acc[2]],
        nu: [acc[3], acc[4], acc[5]],
        int_dk_sq: acc[6],
        int_z2_dk_sq: acc[7],
    })
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub(crate) fn gauss_legendre(order: usize) -> Vec<(f64, f64)> {
    let mut rule = Vec::with_capacity(order);
    let nf = order as f64;
    for i in 0..order {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(order, x);
            dp = d;
            let step = p / d;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(order, x);
        if d != 0.0 {
            dp = d;
        }
        rule.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    rule
}

/// Legendre polynomial `P_n(x)` and its derivative by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
