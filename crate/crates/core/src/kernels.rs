//! Symmetric `n`-input kernels.
//!
//! Catalog kernels are functions of the pairwise inner products of their
//! inputs. For three inputs `(x, y, z)` the Gram variables are
//! `u = <x,y>`, `v = <y,z>`, `t = <z,x>`.
//!
//! New kernels are built from old ones by lifting (sums or products over all
//! `m`-subsets of `n` slots), pinning slots at fixed points, the two-input
//! conditional-positive-definiteness shift, integrating slots against measures
//! (potentials), and pointwise sums, products and scalings.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use itertools::Itertools;

use crate::sphere::{dot, DiscreteMeasure, UnitVector};
use crate::{Error, Result};

/// Largest arity any kernel may have.
pub const MAX_ARITY: usize = 8;

/// Power series `f` for kernels of the form `f(uvt)`.
#[derive(Clone, Debug, PartialEq)]
pub enum Series {
    /// `sum_k c_k s^k`, all `c_k >= 0`.
    Poly(Vec<f64>),
    Exp,
}

impl Series {
    fn value(&self, s: f64) -> f64 {
        match self {
            Series::Poly(c) => c.iter().rev().fold(0.0, |acc, ck| acc * s + ck),
            Series::Exp => s.exp(),
        }
    }

    fn derivative(&self, s: f64) -> f64 {
        match self {
            Series::Poly(c) => c
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, ck)| acc * s + k as f64 * ck),
            Series::Exp => s.exp(),
        }
    }

    fn has_odd_terms(&self) -> bool {
        match self {
            Series::Poly(c) => c.iter().skip(1).step_by(2).any(|&ck| ck != 0.0),
            Series::Exp => true,
        }
    }
}

/// Named kernels on the sphere. All are rotation invariant.
#[derive(Clone, Debug, PartialEq)]
pub enum Catalog {
    /// `<x,y>`
    Inner,
    /// `|x - y|^s`, `s > 0`
    Riesz { s: f64 },
    /// `<x,y>^2`
    Frame2,
    /// `f(uvt)` for a nonnegative-coefficient series `f`
    ProdFUvt(Series),
    /// Squared volume of the parallelepiped spanned by `x, y, z`.
    Vol2,
    NegVol2,
    /// Squared area of the triangle with vertices `x, y, z`.
    Area2,
    NegArea2,
    /// `uv + vt + tu`
    S011,
    /// `(t - uv) + (u - vt) + (v - tu)`
    S100,
    /// `t^2 + u^2 + v^2 - a uvt`, plus `1/(1-a)` when `shift` is set.
    QuadA { a: f64, shift: bool },
}

impl Catalog {
    pub fn arity(&self) -> usize {
        match self {
            Catalog::Inner | Catalog::Riesz { .. } | Catalog::Frame2 => 2,
            _ => 3,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |reason: &str| {
            Err(Error::invalid(format!("{}: {reason}", self)))
        };
        match self {
            Catalog::Riesz { s } if !(*s > 0.0 && s.is_finite()) => bad("exponent must be positive"),
            Catalog::ProdFUvt(Series::Poly(c)) if c.is_empty() => bad("empty coefficient list"),
            Catalog::ProdFUvt(Series::Poly(c)) if c.iter().any(|ck| !(*ck >= 0.0 && ck.is_finite())) => {
                bad("coefficients must be finite and nonnegative")
            }
            Catalog::QuadA { a, .. } if !a.is_finite() => bad("parameter a must be finite"),
            Catalog::QuadA { a, shift: true } if *a == 1.0 => bad("shift 1/(1-a) undefined at a = 1"),
            _ => Ok(()),
        }
    }

    fn may_be_negative(&self) -> bool {
        match self {
            Catalog::Riesz { .. } | Catalog::Frame2 | Catalog::Vol2 | Catalog::Area2 => false,
            Catalog::ProdFUvt(f) => f.has_odd_terms() && !matches!(f, Series::Exp),
            _ => true,
        }
    }

    /// Two-input value as a function of `u = <x,y>`.
    #[inline]
    pub(crate) fn f2(&self, u: f64) -> f64 {
        match self {
            Catalog::Inner => u,
            Catalog::Riesz { s } => (2.0 - 2.0 * u).max(0.0).powf(0.5 * s),
            Catalog::Frame2 => u * u,
            _ => unreachable!("three-input catalog kernel evaluated with two inputs"),
        }
    }

    /// `df/du`; `None` where the kernel is not differentiable.
    pub(crate) fn df2(&self, u: f64) -> Option<f64> {
        match self {
            Catalog::Inner => Some(1.0),
            Catalog::Riesz { s } => {
                let r2 = (2.0 - 2.0 * u).max(0.0);
                if r2 < 1e-14 && *s < 2.0 {
                    None
                } else {
                    Some(-s * r2.powf(0.5 * s - 1.0))
                }
            }
            Catalog::Frame2 => Some(2.0 * u),
            _ => unreachable!(),
        }
    }

    /// Three-input value as a function of `(u, v, t)`.
    #[inline]
    pub(crate) fn f3(&self, u: f64, v: f64, t: f64) -> f64 {
        match self {
            Catalog::ProdFUvt(f) => f.value(u * v * t),
            Catalog::Vol2 => vol2(u, v, t),
            Catalog::NegVol2 => -vol2(u, v, t),
            Catalog::Area2 => area2(u, v, t),
            Catalog::NegArea2 => -area2(u, v, t),
            Catalog::S011 => s011(u, v, t),
            Catalog::S100 => s100(u, v, t),
            Catalog::QuadA { a, shift } => quad_a(*a, *shift, u, v, t),
            _ => unreachable!("two-input catalog kernel evaluated with three inputs"),
        }
    }

    /// Partial derivatives `(df/du, df/dv, df/dt)`.
    pub(crate) fn df3(&self, u: f64, v: f64, t: f64) -> (f64, f64, f64) {
        match self {
            Catalog::ProdFUvt(f) => {
                let d = f.derivative(u * v * t);
                (d * v * t, d * u * t, d * u * v)
            }
            Catalog::Vol2 => (2.0 * (v * t - u), 2.0 * (u * t - v), 2.0 * (u * v - t)),
            Catalog::NegVol2 => (-2.0 * (v * t - u), -2.0 * (u * t - v), -2.0 * (u * v - t)),
            Catalog::Area2 => area2_grad(u, v, t),
            Catalog::NegArea2 => {
                let (a, b, c) = area2_grad(u, v, t);
                (-a, -b, -c)
            }
            Catalog::S011 => (v + t, u + t, u + v),
            Catalog::S100 => (1.0 - v - t, 1.0 - u - t, 1.0 - u - v),
            Catalog::QuadA { a, .. } => (2.0 * u - a * v * t, 2.0 * v - a * u * t, 2.0 * t - a * u * v),
            _ => unreachable!(),
        }
    }
}

#[inline(always)]
pub(crate) fn vol2(u: f64, v: f64, t: f64) -> f64 {
    1.0 - u * u - v * v - t * t + 2.0 * u * v * t
}

#[inline(always)]
pub(crate) fn area2(u: f64, v: f64, t: f64) -> f64 {
    0.75 - 0.5 * (u + v + t) + 0.5 * (u * v + v * t + t * u) - 0.25 * (u * u + v * v + t * t)
}

fn area2_grad(u: f64, v: f64, t: f64) -> (f64, f64, f64) {
    (
        -0.5 + 0.5 * (v + t) - 0.5 * u,
        -0.5 + 0.5 * (u + t) - 0.5 * v,
        -0.5 + 0.5 * (u + v) - 0.5 * t,
    )
}

#[inline(always)]
pub(crate) fn s011(u: f64, v: f64, t: f64) -> f64 {
    u * v + v * t + t * u
}

#[inline(always)]
pub(crate) fn s100(u: f64, v: f64, t: f64) -> f64 {
    (t - u * v) + (u - v * t) + (v - t * u)
}

#[inline(always)]
pub(crate) fn quad_a(a: f64, shift: bool, u: f64, v: f64, t: f64) -> f64 {
    let base = t * t + u * u + v * v - a * u * v * t;
    if shift {
        base + 1.0 / (1.0 - a)
    } else {
        base
    }
}

impl fmt::Display for Catalog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Catalog::Inner => write!(f, "inner"),
            Catalog::Riesz { s } => write!(f, "riesz:s={s}"),
            Catalog::Frame2 => write!(f, "frame2"),
            Catalog::ProdFUvt(Series::Exp) => write!(f, "prod_f_uvt:f=exp"),
            Catalog::ProdFUvt(Series::Poly(c)) if c.as_slice() == [0.0, 1.0] => write!(f, "uvt"),
            Catalog::ProdFUvt(Series::Poly(c)) => {
                write!(f, "prod_f_uvt:coeffs={}", c.iter().map(|x| x.to_string()).join(","))
            }
            Catalog::Vol2 => write!(f, "vol2"),
            Catalog::NegVol2 => write!(f, "neg_vol2"),
            Catalog::Area2 => write!(f, "area2"),
            Catalog::NegArea2 => write!(f, "neg_area2"),
            Catalog::S011 => write!(f, "s011"),
            Catalog::S100 => write!(f, "s100"),
            Catalog::QuadA { a, shift } => write!(f, "quad_a:a={a},shift={shift}"),
        }
    }
}

#[derive(Debug)]
enum Node {
    Catalog(Catalog),
    SumLift { base: Kernel, arity: usize, subsets: Vec<Vec<usize>> },
    ProdLift { base: Kernel, arity: usize, subsets: Vec<Vec<usize>> },
    Pinned { base: Kernel, pins: Vec<UnitVector> },
    Shifted { base: Kernel, anchor: UnitVector, with_constant: bool },
    Potential { base: Kernel, measures: Vec<DiscreteMeasure> },
    Sum(Kernel, Kernel),
    Product(Kernel, Kernel),
    Scaled(f64, Kernel),
}

/// A symmetric continuous kernel of fixed arity. Cheap to clone.
#[derive(Clone, Debug)]
pub struct Kernel {
    node: Arc<Node>,
    arity: usize,
}

/// Output of [`Kernel::cpd_shift`].
#[derive(Clone, Debug)]
pub struct CpdShift {
    /// `G(x,y) + G(x0,x0) - G(x,x0) - G(x0,y)`
    pub phi: Kernel,
    /// `G(x,y) - G(x,x0) - G(x0,y)`, present when `G(x0,x0) <= 0`.
    pub phi0: Option<Kernel>,
}

impl Kernel {
    fn from_node(node: Node, arity: usize) -> Kernel {
        Kernel { node: Arc::new(node), arity }
    }

    pub fn catalog(kind: Catalog) -> Result<Kernel> {
        kind.validate()?;
        let arity = kind.arity();
        Ok(Kernel::from_node(Node::Catalog(kind), arity))
    }

    fn known(kind: Catalog) -> Kernel {
        Kernel::catalog(kind).expect("catalog constant is valid")
    }

    pub fn inner() -> Kernel {
        Kernel::known(Catalog::Inner)
    }
    pub fn riesz(s: f64) -> Result<Kernel> {
        Kernel::catalog(Catalog::Riesz { s })
    }
    pub fn frame2() -> Kernel {
        Kernel::known(Catalog::Frame2)
    }
    /// `uvt = <x,y><y,z><z,x>`.
    pub fn uvt() -> Kernel {
        Kernel::known(Catalog::ProdFUvt(Series::Poly(vec![0.0, 1.0])))
    }
    pub fn prod_f_uvt(f: Series) -> Result<Kernel> {
        Kernel::catalog(Catalog::ProdFUvt(f))
    }
    pub fn vol2() -> Kernel {
        Kernel::known(Catalog::Vol2)
    }
    pub fn neg_vol2() -> Kernel {
        Kernel::known(Catalog::NegVol2)
    }
    pub fn area2() -> Kernel {
        Kernel::known(Catalog::Area2)
    }
    pub fn neg_area2() -> Kernel {
        Kernel::known(Catalog::NegArea2)
    }
    pub fn s011() -> Kernel {
        Kernel::known(Catalog::S011)
    }
    pub fn s100() -> Kernel {
        Kernel::known(Catalog::S100)
    }
    pub fn quad_a(a: f64, shift: bool) -> Result<Kernel> {
        Kernel::catalog(Catalog::QuadA { a, shift })
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    /// True when the value depends only on the Gram matrix of the inputs.
    pub fn is_rotation_invariant(&self) -> bool {
        match &*self.node {
            Node::Catalog(_) => true,
            Node::SumLift { base, .. } | Node::ProdLift { base, .. } | Node::Scaled(_, base) => {
                base.is_rotation_invariant()
            }
            Node::Sum(a, b) | Node::Product(a, b) => a.is_rotation_invariant() && b.is_rotation_invariant(),
            Node::Pinned { .. } | Node::Shifted { .. } | Node::Potential { .. } => false,
        }
    }

    /// Conservative sign information: `false` only if the kernel is known to
    /// be nonnegative everywhere.
    pub fn may_be_negative(&self) -> bool {
        match &*self.node {
            Node::Catalog(c) => c.may_be_negative(),
            Node::Scaled(c, base) => *c < 0.0 || base.may_be_negative(),
            Node::ProdLift { base, .. } => base.may_be_negative(),
            Node::Sum(a, b) | Node::Product(a, b) => a.may_be_negative() || b.may_be_negative(),
            _ => true,
        }
    }

    /// Caveats about this construction, for callers to surface to users.
    /// Currently flags product lifts of a possibly negative base with
    /// `m < n - 1`, which need not be positive definite.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_warnings(&mut out);
        out
    }

    fn collect_warnings(&self, out: &mut Vec<String>) {
        match &*self.node {
            Node::Catalog(_) => {}
            Node::ProdLift { base, arity, .. } => {
                if base.may_be_negative() && base.arity + 1 < *arity {
                    out.push(format!(
                        "prod_lift of {base} to arity {arity}: the base may be negative and m < n-1, so positive definiteness is not inherited"
                    ));
                }
                base.collect_warnings(out);
            }
            Node::SumLift { base, .. }
            | Node::Pinned { base, .. }
            | Node::Shifted { base, .. }
            | Node::Potential { base, .. }
            | Node::Scaled(_, base) => base.collect_warnings(out),
            Node::Sum(a, b) | Node::Product(a, b) => {
                a.collect_warnings(out);
                b.collect_warnings(out);
            }
        }
    }

    /// The catalog entry and scale factor, if this kernel is a (scaled)
    /// catalog kernel.
    pub(crate) fn as_catalog(&self) -> Option<(&Catalog, f64)> {
        match &*self.node {
            Node::Catalog(c) => Some((c, 1.0)),
            Node::Scaled(s, base) => base.as_catalog().map(|(c, k)| (c, k * s)),
            _ => None,
        }
    }

    /// Evaluates the kernel on `arity` points of a common dimension.
    pub fn eval(&self, points: &[&UnitVector]) -> Result<f64> {
        self.check_points(points)?;
        let mut buf: [&[f64]; MAX_ARITY] = [&[]; MAX_ARITY];
        for (slot, p) in buf.iter_mut().zip(points) {
            *slot = p.coords();
        }
        Ok(self.eval_raw(&buf[..points.len()]))
    }

    /// Convenience wrapper over [`Kernel::eval`] for owned points.
    pub fn eval_owned(&self, points: &[UnitVector]) -> Result<f64> {
        let refs: Vec<&UnitVector> = points.iter().collect();
        self.eval(&refs)
    }

    fn check_points(&self, points: &[&UnitVector]) -> Result<()> {
        if points.len() != self.arity {
            return Err(Error::invalid(format!(
                "kernel {} takes {} points, got {}",
                self,
                self.arity,
                points.len()
            )));
        }
        if let Some(first) = points.first() {
            if points.iter().any(|p| p.dim() != first.dim()) {
                return Err(Error::invalid("points of mixed dimension"));
            }
            if let Some(d) = self.required_dim() {
                if d != first.dim() {
                    return Err(Error::invalid(format!(
                        "kernel is bound to dimension {d}, points have dimension {}",
                        first.dim()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Dimension fixed by pins, anchors or measures inside the kernel.
    pub fn required_dim(&self) -> Option<usize> {
        match &*self.node {
            Node::Catalog(_) => None,
            Node::Pinned { pins, .. } => pins.first().map(|p| p.dim()),
            Node::Shifted { anchor, .. } => Some(anchor.dim()),
            Node::Potential { measures, .. } => measures.first().map(|m| m.dim()),
            Node::SumLift { base, .. } | Node::ProdLift { base, .. } | Node::Scaled(_, base) => base.required_dim(),
            Node::Sum(a, b) | Node::Product(a, b) => a.required_dim().or(b.required_dim()),
        }
    }

    /// Unchecked evaluation on raw coordinate slices.
    pub(crate) fn eval_raw(&self, p: &[&[f64]]) -> f64 {
        debug_assert_eq!(p.len(), self.arity);
        match &*self.node {
            Node::Catalog(c) => match self.arity {
                2 => c.f2(dot(p[0], p[1])),
                _ => c.f3(dot(p[0], p[1]), dot(p[1], p[2]), dot(p[2], p[0])),
            },
            Node::SumLift { base, subsets, .. } => {
                let mut buf: [&[f64]; MAX_ARITY] = [&[]; MAX_ARITY];
                subsets
                    .iter()
                    .map(|s| {
                        gather(&mut buf, p, s);
                        base.eval_raw(&buf[..s.len()])
                    })
                    .sum()
            }
            Node::ProdLift { base, subsets, .. } => {
                let mut buf: [&[f64]; MAX_ARITY] = [&[]; MAX_ARITY];
                subsets
                    .iter()
                    .map(|s| {
                        gather(&mut buf, p, s);
                        base.eval_raw(&buf[..s.len()])
                    })
                    .product()
            }
            Node::Pinned { base, pins } => {
                let mut buf: [&[f64]; MAX_ARITY] = [&[]; MAX_ARITY];
                for (slot, pin) in buf.iter_mut().zip(pins) {
                    *slot = pin.coords();
                }
                buf[pins.len()..pins.len() + p.len()].copy_from_slice(p);
                base.eval_raw(&buf[..base.arity])
            }
            Node::Shifted { base, anchor, with_constant } => {
                let a = anchor.coords();
                let mut v = base.eval_raw(&[p[0], p[1]]) - base.eval_raw(&[p[0], a]) - base.eval_raw(&[a, p[1]]);
                if *with_constant {
                    v += base.eval_raw(&[a, a]);
                }
                v
            }
            Node::Potential { base, measures } => {
                let mut buf: [&[f64]; MAX_ARITY] = [&[]; MAX_ARITY];
                let j = measures.len();
                buf[j..j + p.len()].copy_from_slice(p);
                potential_sum(base, measures, &mut buf, 0, 1.0)
            }
            Node::Sum(a, b) => a.eval_raw(p) + b.eval_raw(p),
            Node::Product(a, b) => a.eval_raw(p) * b.eval_raw(p),
            Node::Scaled(c, base) => c * base.eval_raw(p),
        }
    }

    /// Euclidean gradient with respect to the first input, all other inputs
    /// held fixed. `None` where the kernel is not differentiable.
    pub(crate) fn grad_first_raw(&self, p: &[&[f64]]) -> Option<Vec<f64>> {
        let d = p[0].len();
        match &*self.node {
            Node::Catalog(c) => match self.arity {
                2 => {
                    let g = c.df2(dot(p[0], p[1]))?;
                    Some(p[1].iter().map(|y| g * y).collect())
                }
                _ => {
                    let (fu, _, ft) = c.df3(dot(p[0], p[1]), dot(p[1], p[2]), dot(p[2], p[0]));
                    Some(p[1].iter().zip(p[2]).map(|(y, z)| fu * y + ft * z).collect())
                }
            },
            Node::SumLift { base, subsets, .. } => {
                let mut out = vec![0.0; d];
                let mut buf: [&[f64]; MAX_ARITY] = [&[]; MAX_ARITY];
                for s in subsets.iter().filter(|s| s[0] == 0) {
                    gather(&mut buf, p, s);
                    axpy(&mut out, 1.0, &base.grad_first_raw(&buf[..s.len()])?);
                }
                Some(out)
            }
            Node::ProdLift { base, subsets, .. } => {
                let mut buf: [&[f64]; MAX_ARITY] = [&[]; MAX_ARITY];
                let values: Vec<f64> = subsets
                    .iter()
                    .map(|s| {
                        gather(&mut buf, p, s);
                        base.eval_raw(&buf[..s.len()])
                    })
                    .collect();
                let mut out = vec![0.0; d];
                for (k, s) in subsets.iter().enumerate().filter(|(_, s)| s[0] == 0) {
                    let others: f64 = values
                        .iter()
                        .enumerate()
                        .filter(|(l, _)| *l != k)
                        .map(|(_, v)| v)
                        .product();
                    gather(&mut buf, p, s);
                    axpy(&mut out, others, &base.grad_first_raw(&buf[..s.len()])?);
                }
                Some(out)
            }
            Node::Pinned { base, pins } => {
                let mut buf: [&[f64]; MAX_ARITY] = [&[]; MAX_ARITY];
                buf[0] = p[0];
                for (slot, pin) in buf[1..].iter_mut().zip(pins) {
                    *slot = pin.coords();
                }
                buf[1 + pins.len()..pins.len() + p.len()].copy_from_slice(&p[1..]);
                base.grad_first_raw(&buf[..base.arity])
            }
            Node::Shifted { base, anchor, .. } => {
                let mut g = base.grad_first_raw(&[p[0], p[1]])?;
                axpy(&mut g, -1.0, &base.grad_first_raw(&[p[0], anchor.coords()])?);
                Some(g)
            }
            Node::Potential { base, measures } => {
                let j = measures.len();
                let mut buf: [&[f64]; MAX_ARITY] = [&[]; MAX_ARITY];
                buf[0] = p[0];
                buf[j + 1..j + p.len()].copy_from_slice(&p[1..]);
                let mut out = vec![0.0; d];
                potential_grad(base, measures, &mut buf, 0, 1.0, &mut out)?;
                Some(out)
            }
            Node::Sum(a, b) => {
                let mut g = a.grad_first_raw(p)?;
                axpy(&mut g, 1.0, &b.grad_first_raw(p)?);
                Some(g)
            }
            Node::Product(a, b) => {
                let mut g = a.grad_first_raw(p)?;
                let (va, vb) = (a.eval_raw(p), b.eval_raw(p));
                g.iter_mut().for_each(|x| *x *= vb);
                axpy(&mut g, va, &b.grad_first_raw(p)?);
                Some(g)
            }
            Node::Scaled(c, base) => {
                let mut g = base.grad_first_raw(p)?;
                g.iter_mut().for_each(|x| *x *= c);
                Some(g)
            }
        }
    }

    /// `K(z_1..z_n) = sum over m-subsets of H`, where `m` is this kernel's arity.
    pub fn sum_lift(&self, n: usize) -> Result<Kernel> {
        let subsets = self.lift_subsets(n)?;
        Ok(Kernel::from_node(
            Node::SumLift { base: self.clone(), arity: n, subsets },
            n,
        ))
    }

    /// `K(z_1..z_n) = product over m-subsets of H`.
    ///
    /// `n`-positive definiteness of the result needs `H >= 0` or `m = n - 1`;
    /// [`Kernel::warnings`] reports when neither is known to hold.
    pub fn prod_lift(&self, n: usize) -> Result<Kernel> {
        let subsets = self.lift_subsets(n)?;
        Ok(Kernel::from_node(
            Node::ProdLift { base: self.clone(), arity: n, subsets },
            n,
        ))
    }

    fn lift_subsets(&self, n: usize) -> Result<Vec<Vec<usize>>> {
        let m = self.arity;
        if m < 2 || m >= n || n > MAX_ARITY {
            return Err(Error::invalid(format!(
                "cannot lift an arity-{m} kernel to arity {n} (need 2 <= m <= n-1, n <= {MAX_ARITY})"
            )));
        }
        Ok((0..n).combinations(m).collect())
    }

    /// Fixes the first `pins.len()` slots; `1 <= m <= n - 2`.
    pub fn pin(&self, pins: Vec<UnitVector>) -> Result<Kernel> {
        let m = pins.len();
        if m < 1 || m + 2 > self.arity {
            return Err(Error::invalid(format!(
                "cannot pin {m} slots of an arity-{} kernel (need 1 <= m <= n-2)",
                self.arity
            )));
        }
        let d = pins[0].dim();
        if pins.iter().any(|p| p.dim() != d) || self.required_dim().is_some_and(|rd| rd != d) {
            return Err(Error::invalid("pins of mismatched dimension"));
        }
        Ok(Kernel::from_node(
            Node::Pinned { base: self.clone(), pins },
            self.arity - m,
        ))
    }

    /// Kernels `phi` and (when `G(x0,x0) <= 0`) `phi0` of the classical
    /// equivalence: `phi` is positive definite iff `G` is conditionally
    /// positive definite.
    pub fn cpd_shift(&self, x0: UnitVector) -> Result<CpdShift> {
        if self.arity != 2 {
            return Err(Error::invalid("cpd_shift needs a two-input kernel"));
        }
        if self.required_dim().is_some_and(|d| d != x0.dim()) {
            return Err(Error::invalid("anchor of mismatched dimension"));
        }
        let g00 = self.eval_raw(&[x0.coords(), x0.coords()]);
        let phi = Kernel::from_node(
            Node::Shifted { base: self.clone(), anchor: x0.clone(), with_constant: true },
            2,
        );
        let phi0 = (g00 <= 0.0).then(|| {
            Kernel::from_node(
                Node::Shifted { base: self.clone(), anchor: x0, with_constant: false },
                2,
            )
        });
        Ok(CpdShift { phi, phi0 })
    }

    /// Integrates the first `measures.len()` slots: the potential
    /// `U^{mu_1..mu_j}` as a kernel of arity `n - j`.
    pub fn potential(&self, measures: Vec<DiscreteMeasure>) -> Result<Kernel> {
        let j = measures.len();
        if j < 1 || j >= self.arity {
            return Err(Error::invalid(format!(
                "potential of order {j} for an arity-{} kernel (need 1 <= j <= n-1)",
                self.arity
            )));
        }
        let d = measures[0].dim();
        if measures.iter().any(|m| m.dim() != d) || self.required_dim().is_some_and(|rd| rd != d) {
            return Err(Error::invalid("measures of mismatched dimension"));
        }
        Ok(Kernel::from_node(
            Node::Potential { base: self.clone(), measures },
            self.arity - j,
        ))
    }

    pub fn add(&self, other: &Kernel) -> Result<Kernel> {
        self.check_same_arity(other)?;
        Ok(Kernel::from_node(Node::Sum(self.clone(), other.clone()), self.arity))
    }

    pub fn mul(&self, other: &Kernel) -> Result<Kernel> {
        self.check_same_arity(other)?;
        Ok(Kernel::from_node(Node::Product(self.clone(), other.clone()), self.arity))
    }

    pub fn scale(&self, c: f64) -> Kernel {
        Kernel::from_node(Node::Scaled(c, self.clone()), self.arity)
    }

    fn check_same_arity(&self, other: &Kernel) -> Result<()> {
        if self.arity != other.arity {
            return Err(Error::invalid(format!(
                "arity mismatch: {} vs {}",
                self.arity, other.arity
            )));
        }
        Ok(())
    }

    /// Parses `name[:key=value,...]`.
    ///
    /// Catalog names: `inner`, `riesz:s=..`, `frame2`, `uvt`,
    /// `prod_f_uvt:coeffs=c0,c1,..` or `prod_f_uvt:f=exp`, `vol2`, `neg_vol2`,
    /// `area2`, `neg_area2`, `s011`, `s100`, `quad_a:a=..[,shift=true]`.
    /// Lifts: `sum_lift:base=<name>,n=<n>` and `prod_lift:base=<name>,n=<n>`.
    /// Every spec accepts `scale=<c>`.
    pub fn parse(spec: &str) -> Result<Kernel> {
        let err = |reason: String| Error::KernelSpec { spec: spec.to_string(), reason };
        let (name, rest) = match spec.split_once(':') {
            Some((n, r)) => (n.trim(), r),
            None => (spec.trim(), ""),
        };
        let params = parse_params(rest).map_err(err)?;
        let mut used = vec!["scale"];
        let num = |key: &str| -> Result<Option<f64>> {
            params
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| {
                    v.join(",")
                        .parse::<f64>()
                        .map_err(|e| err(format!("{key}: {e}")))
                })
                .transpose()
        };
        let text = |key: &str| params.iter().find(|(k, _)| k == key).map(|(_, v)| v.join(","));
        let required = |key: &str| num(key)?.ok_or_else(|| err(format!("missing parameter `{key}`")));

        let kernel = match name {
            "inner" => Kernel::inner(),
            "riesz" => {
                used.push("s");
                Kernel::riesz(required("s")?)?
            }
            "frame2" => Kernel::frame2(),
            "uvt" => Kernel::uvt(),
            "prod_f_uvt" => {
                used.extend(["coeffs", "f"]);
                match (text("f"), params.iter().find(|(k, _)| k == "coeffs")) {
                    (Some(f), None) if f == "exp" => Kernel::prod_f_uvt(Series::Exp)?,
                    (None, Some((_, vals))) => {
                        let coeffs = vals
                            .iter()
                            .map(|v| v.parse::<f64>())
                            .collect::<std::result::Result<Vec<_>, _>>()
                            .map_err(|e| err(format!("coeffs: {e}")))?;
                        Kernel::prod_f_uvt(Series::Poly(coeffs))?
                    }
                    _ => return Err(err("expected `coeffs=c0,c1,...` or `f=exp`".into())),
                }
            }
            "vol2" => Kernel::vol2(),
            "neg_vol2" => Kernel::neg_vol2(),
            "area2" => Kernel::area2(),
            "neg_area2" => Kernel::neg_area2(),
            "s011" => Kernel::s011(),
            "s100" => Kernel::s100(),
            "quad_a" => {
                used.extend(["a", "shift"]);
                let shift = match text("shift").as_deref() {
                    None | Some("false") | Some("0") => false,
                    Some("true") | Some("1") => true,
                    Some(other) => return Err(err(format!("shift: expected true/false, got `{other}`"))),
                };
                Kernel::quad_a(required("a")?, shift)?
            }
            "sum_lift" | "prod_lift" => {
                used.extend(["base", "n"]);
                let base = Kernel::parse(&text("base").ok_or_else(|| err("missing parameter `base`".into()))?)?;
                let n = required("n")?;
                if n.fract() != 0.0 || n < 0.0 {
                    return Err(err(format!("n must be a nonnegative integer, got {n}")));
                }
                if name == "sum_lift" {
                    base.sum_lift(n as usize)?
                } else {
                    base.prod_lift(n as usize)?
                }
            }
            other => return Err(err(format!("unknown kernel `{other}`"))),
        };
        if let Some((k, _)) = params.iter().find(|(k, _)| !used.contains(&k.as_str())) {
            return Err(err(format!("unexpected parameter `{k}`")));
        }
        Ok(match num("scale")? {
            Some(c) => kernel.scale(c),
            None => kernel,
        })
    }
}

impl FromStr for Kernel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Kernel> {
        Kernel::parse(s)
    }
}

/// Splits `k1=v1,k2=v2a,v2b` into keys with value lists; bare tokens extend
/// the previous key's list.
fn parse_params(rest: &str) -> std::result::Result<Vec<(String, Vec<String>)>, String> {
    let mut out: Vec<(String, Vec<String>)> = Vec::new();
    for token in rest.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match token.split_once('=') {
            Some((k, v)) => out.push((k.trim().to_string(), vec![v.trim().to_string()])),
            None => match out.last_mut() {
                Some((_, vals)) => vals.push(token.to_string()),
                None => return Err(format!("value `{token}` without a key")),
            },
        }
    }
    Ok(out)
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &*self.node {
            Node::Catalog(c) => write!(f, "{c}"),
            Node::SumLift { base, arity, .. } => write!(f, "sum_lift({base},{arity})"),
            Node::ProdLift { base, arity, .. } => write!(f, "prod_lift({base},{arity})"),
            Node::Pinned { base, pins } => write!(f, "pin({base};{} pts)", pins.len()),
            Node::Shifted { base, with_constant, .. } => {
                write!(f, "{}({base})", if *with_constant { "shift" } else { "shift0" })
            }
            Node::Potential { base, measures } => write!(f, "potential({base};{} measures)", measures.len()),
            Node::Sum(a, b) => write!(f, "({a} + {b})"),
            Node::Product(a, b) => write!(f, "({a} * {b})"),
            Node::Scaled(c, base) => write!(f, "{c}*{base}"),
        }
    }
}

fn gather<'a>(buf: &mut [&'a [f64]; MAX_ARITY], p: &[&'a [f64]], subset: &[usize]) {
    for (slot, &i) in buf.iter_mut().zip(subset) {
        *slot = p[i];
    }
}

fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, xi) in out.iter_mut().zip(x) {
        *o += a * xi;
    }
}

fn potential_sum<'a>(
    base: &Kernel,
    measures: &'a [DiscreteMeasure],
    buf: &mut [&'a [f64]; MAX_ARITY],
    level: usize,
    weight: f64,
) -> f64 {
    if level == measures.len() {
        return weight * base.eval_raw(&buf[..base.arity]);
    }
    let mut acc = 0.0;
    for (x, w) in measures[level].iter() {
        buf[level] = x.coords();
        acc += potential_sum(base, measures, buf, level + 1, weight * w);
    }
    acc
}

// Slot 0 holds the differentiated input, measures fill slots 1..=j.
fn potential_grad<'a>(
    base: &Kernel,
    measures: &'a [DiscreteMeasure],
    buf: &mut [&'a [f64]; MAX_ARITY],
    level: usize,
    weight: f64,
    out: &mut [f64],
) -> Option<()> {
    if level == measures.len() {
        axpy(out, weight, &base.grad_first_raw(&buf[..base.arity])?);
        return Some(());
    }
    for (x, w) in measures[level].iter() {
        buf[level + 1] = x.coords();
        potential_grad(base, measures, buf, level + 1, weight * w, out)?;
    }
    Some(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::sample_sphere;

    fn e(d: usize, k: usize) -> UnitVector {
        UnitVector::basis(d, k).unwrap()
    }

    fn ev(k: &Kernel, pts: &[&UnitVector]) -> f64 {
        k.eval(pts).unwrap()
    }

    #[test]
    fn catalog_examples() {
        let (e1, e2, e3) = (e(3, 0), e(3, 1), e(3, 2));
        assert_eq!(ev(&Kernel::vol2(), &[&e1, &e2, &e3]), 1.0);
        assert_eq!(ev(&Kernel::area2(), &[&e1, &e2, &e3]), 0.75);
        assert_eq!(ev(&Kernel::s011(), &[&e1, &e1, &e1]), 3.0);
        let pts = sample_sphere(3, 2, 4).unwrap().into_points();
        assert!(ev(&Kernel::vol2(), &[&pts[0], &pts[0], &pts[1]]).abs() < 1e-15);
    }

    #[test]
    fn arity_mismatch_is_rejected() {
        let e1 = e(3, 0);
        assert!(matches!(Kernel::vol2().eval(&[&e1, &e1]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn sum_lift_examples() {
        let k = Kernel::inner().sum_lift(3).unwrap();
        let p = sample_sphere(4, 3, 2).unwrap().into_points();
        let (u, v, t) = (p[0].dot(&p[1]), p[1].dot(&p[2]), p[2].dot(&p[0]));
        assert!((ev(&k, &[&p[0], &p[1], &p[2]]) - (u + v + t)).abs() < 1e-15);
        let e1 = e(3, 0);
        assert_eq!(ev(&k, &[&e1, &e1, &e1]), 3.0);
        assert!(Kernel::uvt().sum_lift(3).is_err());
        assert!(Kernel::inner().sum_lift(2).is_err());
    }

    #[test]
    fn prod_lift_examples() {
        let k = Kernel::inner().prod_lift(3).unwrap();
        let uvt = Kernel::uvt();
        for seed in 0..20 {
            let p = sample_sphere(3, 3, seed).unwrap().into_points();
            let r: Vec<&UnitVector> = p.iter().collect();
            assert!((ev(&k, &r) - ev(&uvt, &r)).abs() <= 1e-14);
        }
        let e1 = e(3, 0);
        assert_eq!(ev(&k, &[&e1, &e1, &e1]), 1.0);
        // diagonal: H(z,z)^C(n,m)
        let z = sample_sphere(3, 1, 8).unwrap().into_points().remove(0);
        let h = Kernel::riesz(1.0).unwrap().scale(-1.0).add(&Kernel::inner().scale(2.0)).unwrap();
        let k4 = h.prod_lift(4).unwrap();
        let hz = ev(&h, &[&z, &z]);
        assert!((ev(&k4, &[&z, &z, &z, &z]) - hz.powi(6)).abs() < 1e-14);
    }

    #[test]
    fn pin_examples() {
        let e1 = e(3, 0);
        let k = Kernel::neg_vol2().pin(vec![e1.clone()]).unwrap();
        for seed in 0..20 {
            let p = sample_sphere(3, 2, seed).unwrap().into_points();
            let (x, y) = (&p[0], &p[1]);
            let u = x.dot(y);
            let (x1, y1) = (x.coords()[0], y.coords()[0]);
            let expected = u * u + x1 * x1 + y1 * y1 - 2.0 * u * x1 * y1 - 1.0;
            assert!((ev(&k, &[x, y]) - expected).abs() <= 1e-14);
            assert_eq!(ev(&k, &[x, y]), ev(&Kernel::neg_vol2(), &[&e1, x, y]));
        }
        let s = Kernel::s011().pin(vec![e1.clone()]).unwrap();
        assert_eq!(ev(&s, &[&e(3, 1), &e1.antipode()]), 0.0);
        assert!(Kernel::vol2().pin(vec![e1.clone(), e1.clone()]).is_err());
        assert!(Kernel::inner().pin(vec![e1]).is_err());
    }

    #[test]
    fn cpd_shift_of_pinned_neg_vol2_is_identity() {
        let e1 = e(3, 0);
        let g = Kernel::neg_vol2().pin(vec![e1.clone()]).unwrap();
        let shift = g.cpd_shift(e1).unwrap();
        for seed in 0..20 {
            let p = sample_sphere(3, 2, 100 + seed).unwrap().into_points();
            let r = [&p[0], &p[1]];
            assert!((ev(&shift.phi, &r) - ev(&g, &r)).abs() <= 1e-14);
        }
    }

    #[test]
    fn cpd_shift_of_negative_squared_distance() {
        // -|x-y|^2 = 2<x,y> - 2, so phi0 = 2<x - e1, y - e1> after expansion.
        let g = Kernel::riesz(2.0).unwrap().scale(-1.0);
        let e1 = e(3, 0);
        let shift = g.cpd_shift(e1.clone()).unwrap();
        let phi0 = shift.phi0.expect("G(x0,x0) = 0");
        for seed in 0..20 {
            let p = sample_sphere(3, 2, 200 + seed).unwrap().into_points();
            let dx: Vec<f64> = p[0].coords().iter().zip(e1.coords()).map(|(a, b)| a - b).collect();
            let dy: Vec<f64> = p[1].coords().iter().zip(e1.coords()).map(|(a, b)| a - b).collect();
            let expected = 2.0 * dot(&dx, &dy);
            assert!((ev(&phi0, &[&p[0], &p[1]]) - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn cpd_shift_with_vanishing_cross_terms() {
        // Triangles with a repeated vertex have zero area, so G(x, e1) = 0.
        let e1 = e(3, 0);
        let g = Kernel::neg_area2().pin(vec![e1.clone()]).unwrap();
        let phi0 = g.cpd_shift(e1).unwrap().phi0.unwrap();
        for seed in 0..10 {
            let p = sample_sphere(3, 2, 300 + seed).unwrap().into_points();
            assert!((ev(&phi0, &[&p[0], &p[1]]) - ev(&g, &[&p[0], &p[1]])).abs() < 1e-14);
        }
    }

    #[test]
    fn parser_round_trips_catalog() {
        for spec in [
            "inner", "riesz:s=1.5", "frame2", "uvt", "prod_f_uvt:f=exp", "prod_f_uvt:coeffs=1,0,2",
            "vol2", "neg_vol2", "area2", "neg_area2", "s011", "s100", "quad_a:a=0.5,shift=true",
        ] {
            let k = Kernel::parse(spec).unwrap();
            assert_eq!(k.to_string(), spec);
        }
        assert_eq!(Kernel::parse("prod_f_uvt:coeffs=0,1").unwrap().to_string(), "uvt");
        let lifted = Kernel::parse("sum_lift:base=inner,n=3").unwrap();
        assert_eq!(lifted.arity(), 3);
        let neg = Kernel::parse("riesz:s=1,scale=-1").unwrap();
        let (e1, e2) = (e(2, 0), e(2, 1));
        assert!((ev(&neg, &[&e1, &e2]) + 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn parser_rejects_bad_specs() {
        for spec in [
            "nope", "riesz", "riesz:s=-1", "quad_a:a=1,shift=true", "quad_a", "prod_f_uvt",
            "prod_f_uvt:coeffs=-1,1", "inner:bogus=2", "sum_lift:base=uvt,n=3", "=3",
        ] {
            assert!(Kernel::parse(spec).is_err(), "{spec}");
        }
        assert!(Kernel::parse("quad_a:a=1").is_ok());
    }

    #[test]
    fn series_evaluation() {
        let p = Series::Poly(vec![1.0, 2.0, 3.0]);
        assert_eq!(p.value(2.0), 17.0);
        assert_eq!(p.derivative(2.0), 14.0);
        assert!(p.has_odd_terms());
        assert!(!Series::Poly(vec![1.0, 0.0, 1.0]).has_odd_terms());
    }

    #[test]
    fn rotation_invariance_flags() {
        let e1 = e(3, 0);
        assert!(Kernel::area2().is_rotation_invariant());
        assert!(Kernel::inner().sum_lift(3).unwrap().is_rotation_invariant());
        assert!(!Kernel::area2().pin(vec![e1]).unwrap().is_rotation_invariant());
    }

    #[test]
    fn prod_lift_warns_only_without_guarantee() {
        assert!(Kernel::inner().prod_lift(3).unwrap().warnings().is_empty());
        assert!(Kernel::frame2().prod_lift(4).unwrap().warnings().is_empty());
        assert_eq!(Kernel::inner().prod_lift(4).unwrap().warnings().len(), 1);
    }
}
