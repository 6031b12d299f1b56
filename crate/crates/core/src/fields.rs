//! Evaluable fields over the chart: scalars, vectors, matrices, and
//! velocity-dependent vectors.
//!
//! Fields come from three sources: constants, compiled expressions, or Rust
//! closures. Gradients use symbolic differentiation when the backing
//! expression is smooth and central finite differences otherwise
//! (step `1e-6 · max(1, |x|)` per coordinate).

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expr::{BoundExpr, EvalEnv, Slot};
use crate::geometry::SpacetimePoint;

const FD_STEP: f64 = 1e-6;

fn fd_step(v: f64) -> f64 {
    FD_STEP * v.abs().max(1.0)
}

type ScalarFn = Arc<dyn Fn(&SpacetimePoint) -> Result<f64> + Send + Sync>;
type GradFn = Arc<dyn Fn(&SpacetimePoint) -> Result<(f64, DVector<f64>)> + Send + Sync>;
type VectorFn = Arc<dyn Fn(&SpacetimePoint) -> Result<DVector<f64>> + Send + Sync>;
type MatrixFn = Arc<dyn Fn(&SpacetimePoint) -> Result<DMatrix<f64>> + Send + Sync>;
type VelocityFn =
    Arc<dyn Fn(&SpacetimePoint, &DVector<f64>) -> Result<DVector<f64>> + Send + Sync>;

fn env_at(pt: &SpacetimePoint) -> EvalEnv<'_> {
    EvalEnv {
        t: pt.t,
        x: pt.x.as_slice(),
        xdot: &[],
        extras: &[],
    }
}

// ---------------------------------------------------------------------------
// Scalar fields f(t, x)
// ---------------------------------------------------------------------------

/// Scalar function of a space-time point, with gradient access.
#[derive(Clone)]
pub struct ScalarField {
    imp: ScalarImpl,
}

#[derive(Clone)]
enum ScalarImpl {
    Expr {
        bound: BoundExpr,
        // (∂/∂t, ∂/∂xⁱ) when every partial differentiates symbolically
        grad: Option<(BoundExpr, Vec<BoundExpr>)>,
    },
    Fn {
        f: ScalarFn,
        grad: Option<GradFn>,
    },
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.imp {
            ScalarImpl::Expr { bound, .. } => write!(f, "ScalarField::Expr({:?})", bound.span),
            ScalarImpl::Fn { .. } => write!(f, "ScalarField::Fn"),
        }
    }
}

impl ScalarField {
    pub fn from_expr(bound: BoundExpr, dim: usize) -> Self {
        let dt = bound.derivative(Slot::Time);
        let dx: Option<Vec<_>> = (0..dim).map(|i| bound.derivative(Slot::Coord(i))).collect();
        let grad = match (dt, dx) {
            (Some(dt), Some(dx)) => Some((dt, dx)),
            _ => None,
        };
        ScalarField {
            imp: ScalarImpl::Expr { bound, grad },
        }
    }

    pub fn constant(value: f64) -> Self {
        ScalarField {
            imp: ScalarImpl::Fn {
                f: Arc::new(move |_| Ok(value)),
                grad: Some(Arc::new(move |pt| Ok((0.0, DVector::zeros(pt.x.len()))))),
            },
        }
    }

    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&SpacetimePoint) -> Result<f64> + Send + Sync + 'static,
    {
        ScalarField {
            imp: ScalarImpl::Fn {
                f: Arc::new(f),
                grad: None,
            },
        }
    }

    pub fn from_fn_with_gradient<F, G>(f: F, grad: G) -> Self
    where
        F: Fn(&SpacetimePoint) -> Result<f64> + Send + Sync + 'static,
        G: Fn(&SpacetimePoint) -> Result<(f64, DVector<f64>)> + Send + Sync + 'static,
    {
        ScalarField {
            imp: ScalarImpl::Fn {
                f: Arc::new(f),
                grad: Some(Arc::new(grad)),
            },
        }
    }

    pub fn value(&self, pt: &SpacetimePoint) -> Result<f64> {
        let v = match &self.imp {
            ScalarImpl::Expr { bound, .. } => bound.eval(&env_at(pt))?,
            ScalarImpl::Fn { f, .. } => f(pt)?,
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite {
                context: format!("scalar field at {pt}"),
            })
        }
    }

    /// `(∂f/∂t, ∂f/∂x)` at `pt`.
    pub fn gradient(&self, pt: &SpacetimePoint) -> Result<(f64, DVector<f64>)> {
        match &self.imp {
            ScalarImpl::Expr {
                grad: Some((dt, dx)),
                ..
            } => {
                let env = env_at(pt);
                let gt = dt.eval(&env)?;
                let gx = DVector::from_iterator(
                    dx.len(),
                    dx.iter()
                        .map(|d| d.eval(&env))
                        .collect::<std::result::Result<Vec<_>, _>>()?,
                );
                Ok((gt, gx))
            }
            ScalarImpl::Fn {
                grad: Some(grad), ..
            } => grad(pt),
            _ => self.fd_gradient(pt),
        }
    }

    fn fd_gradient(&self, pt: &SpacetimePoint) -> Result<(f64, DVector<f64>)> {
        let n = pt.x.len();
        let ht = fd_step(pt.t);
        let mut shifted = pt.clone();
        shifted.t = pt.t + ht;
        let fp = self.value(&shifted)?;
        shifted.t = pt.t - ht;
        let fm = self.value(&shifted)?;
        let gt = (fp - fm) / (2.0 * ht);
        let mut gx = DVector::zeros(n);
        for i in 0..n {
            let h = fd_step(pt.x[i]);
            let mut s = pt.clone();
            s.x[i] += h;
            let fp = self.value(&s)?;
            s.x[i] = pt.x[i] - h;
            let fm = self.value(&s)?;
            gx[i] = (fp - fm) / (2.0 * h);
        }
        Ok((gt, gx))
    }
}

// ---------------------------------------------------------------------------
// Vector fields V(t, x)
// ---------------------------------------------------------------------------

/// Vector-valued function of a space-time point (frame components,
/// kinetic-constraint row covectors, anisotropy directions).
#[derive(Clone)]
pub struct VectorField {
    imp: VectorImpl,
}

#[derive(Clone)]
enum VectorImpl {
    Constant(DVector<f64>),
    Exprs(Vec<BoundExpr>),
    Fn(VectorFn),
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.imp {
            VectorImpl::Constant(v) => write!(f, "VectorField::Constant({v:?})"),
            VectorImpl::Exprs(e) => write!(f, "VectorField::Exprs(len {})", e.len()),
            VectorImpl::Fn(_) => write!(f, "VectorField::Fn"),
        }
    }
}

impl VectorField {
    pub fn constant(v: DVector<f64>) -> Self {
        VectorField {
            imp: VectorImpl::Constant(v),
        }
    }

    pub fn from_exprs(comps: Vec<BoundExpr>) -> Self {
        VectorField {
            imp: VectorImpl::Exprs(comps),
        }
    }

    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&SpacetimePoint) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        VectorField {
            imp: VectorImpl::Fn(Arc::new(f)),
        }
    }

    pub fn value(&self, pt: &SpacetimePoint) -> Result<DVector<f64>> {
        let v = match &self.imp {
            VectorImpl::Constant(v) => v.clone(),
            VectorImpl::Exprs(comps) => {
                let env = env_at(pt);
                DVector::from_iterator(
                    comps.len(),
                    comps
                        .iter()
                        .map(|c| c.eval(&env))
                        .collect::<std::result::Result<Vec<_>, _>>()?,
                )
            }
            VectorImpl::Fn(f) => f(pt)?,
        };
        if v.iter().all(|c| c.is_finite()) {
            Ok(v)
        } else {
            Err(Error::NonFinite {
                context: format!("vector field at {pt}"),
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Matrix fields g(t, x)
// ---------------------------------------------------------------------------

/// Matrix-valued function of a space-time point (the mass matrix).
#[derive(Clone)]
pub struct MatrixField {
    imp: MatrixImpl,
}

#[derive(Clone)]
enum MatrixImpl {
    Constant(DMatrix<f64>),
    Exprs { entries: Vec<BoundExpr>, n: usize },
    Fn(MatrixFn),
}

impl fmt::Debug for MatrixField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.imp {
            MatrixImpl::Constant(m) => write!(f, "MatrixField::Constant({}x{})", m.nrows(), m.ncols()),
            MatrixImpl::Exprs { n, .. } => write!(f, "MatrixField::Exprs({n}x{n})"),
            MatrixImpl::Fn(_) => write!(f, "MatrixField::Fn"),
        }
    }
}

impl MatrixField {
    pub fn constant(m: DMatrix<f64>) -> Self {
        MatrixField {
            imp: MatrixImpl::Constant(m),
        }
    }

    /// Row-major n×n entry expressions.
    pub fn from_exprs(entries: Vec<BoundExpr>, n: usize) -> Self {
        assert_eq!(entries.len(), n * n);
        MatrixField {
            imp: MatrixImpl::Exprs { entries, n },
        }
    }

    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&SpacetimePoint) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    {
        MatrixField {
            imp: MatrixImpl::Fn(Arc::new(f)),
        }
    }

    pub fn value(&self, pt: &SpacetimePoint) -> Result<DMatrix<f64>> {
        let m = match &self.imp {
            MatrixImpl::Constant(m) => m.clone(),
            MatrixImpl::Exprs { entries, n } => {
                let env = env_at(pt);
                let vals = entries
                    .iter()
                    .map(|e| e.eval(&env))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                DMatrix::from_row_slice(*n, *n, &vals)
            }
            MatrixImpl::Fn(f) => f(pt)?,
        };
        if m.iter().all(|c| c.is_finite()) {
            Ok(m)
        } else {
            Err(Error::NonFinite {
                context: format!("matrix field at {pt}"),
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Velocity-dependent vector fields Z(t, x, ẋ)
// ---------------------------------------------------------------------------

/// Vector field over the velocity bundle (force sections).
#[derive(Clone)]
pub struct VelocityField {
    imp: VelocityImpl,
}

#[derive(Clone)]
enum VelocityImpl {
    Zero(usize),
    Exprs(Vec<BoundExpr>),
    Fn(VelocityFn),
}

impl fmt::Debug for VelocityField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.imp {
            VelocityImpl::Zero(n) => write!(f, "VelocityField::Zero({n})"),
            VelocityImpl::Exprs(e) => write!(f, "VelocityField::Exprs(len {})", e.len()),
            VelocityImpl::Fn(_) => write!(f, "VelocityField::Fn"),
        }
    }
}

impl VelocityField {
    pub fn zero(n: usize) -> Self {
        VelocityField {
            imp: VelocityImpl::Zero(n),
        }
    }

    pub fn from_exprs(comps: Vec<BoundExpr>) -> Self {
        VelocityField {
            imp: VelocityImpl::Exprs(comps),
        }
    }

    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&SpacetimePoint, &DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        VelocityField {
            imp: VelocityImpl::Fn(Arc::new(f)),
        }
    }

    pub fn value(&self, pt: &SpacetimePoint, xdot: &DVector<f64>) -> Result<DVector<f64>> {
        let v = match &self.imp {
            VelocityImpl::Zero(n) => DVector::zeros(*n),
            VelocityImpl::Exprs(comps) => {
                let env = EvalEnv {
                    t: pt.t,
                    x: pt.x.as_slice(),
                    xdot: xdot.as_slice(),
                    extras: &[],
                };
                DVector::from_iterator(
                    comps.len(),
                    comps
                        .iter()
                        .map(|c| c.eval(&env))
                        .collect::<std::result::Result<Vec<_>, _>>()?,
                )
            }
            VelocityImpl::Fn(f) => f(pt, xdot)?,
        };
        if v.iter().all(|c| c.is_finite()) {
            Ok(v)
        } else {
            Err(Error::NonFinite {
                context: format!("force section at {pt}"),
            })
        }
    }
}
