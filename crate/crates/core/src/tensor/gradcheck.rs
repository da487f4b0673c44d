use super::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::par;

/// Absolute differences at or below this count as agreement.
///
/// Central differences of a constant function return roundoff noise of this
/// order; without a floor the relative error of two near-zero gradients is
/// meaningless.
pub const ABS_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct GradCheck {
    /// `max_i |a_i - n_i| / (|n_i| + 1e-12)` over elements whose absolute
    /// difference exceeds [`ABS_FLOOR`].
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `|a - n|_2 / |n|_2`, with no floor.
    pub norm_rel_error: f64,
    pub analytic: Tensor,
    pub numeric: Tensor,
}

/// Finite-difference formula used for the numeric gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`, error O(h^2).
    Central,
    /// `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`, error O(h^4).
    FivePoint,
}

/// Compares the reverse-mode gradient of a scalar function against central
/// finite differences with step `eps`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, eps: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId> + Sync + Send,
{
    finite_diff_check_with(f, x, eps, Stencil::Central)
}

/// Like [`finite_diff_check`] with a chosen stencil.
///
/// `f` receives a fresh graph and the leaf holding `x`, and must return a
/// scalar node. It is evaluated twice at `x` to confirm determinism before any
/// perturbation.
pub fn finite_diff_check_with<F>(f: F, x: &Tensor, eps: f64, stencil: Stencil) -> Result<GradCheck>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId> + Sync + Send,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be in (0, 1e-2], got {eps}"
        )));
    }
    let eval = |x: Tensor, grad: bool| -> Result<(f64, Option<Tensor>)> {
        let mut g = Graph::new();
        let leaf = g.leaf(x, grad)?;
        let out = f(&mut g, leaf)?;
        let v = g.value(out);
        if !v.is_scalar() {
            return Err(Error::NotScalar(v.shape().to_vec()));
        }
        let value = v.item();
        let grad = if grad {
            let shape = g.shape(leaf).to_vec();
            Some(g.backward(out)?.get_or_zeros(leaf, &shape))
        } else {
            None
        };
        Ok((value, grad))
    };

    let (v1, analytic) = eval(x.clone(), true)?;
    let (v2, _) = eval(x.clone(), false)?;
    if v1.to_bits() != v2.to_bits() {
        return Err(Error::NonDeterministic);
    }
    let analytic = analytic.expect("gradient requested");

    let at = |i: usize, h: f64| -> Result<f64> {
        let mut y = x.clone();
        y.data_mut()[i] += h;
        Ok(eval(y, false)?.0)
    };
    let numeric = par::try_map(x.len(), |i| match stencil {
        Stencil::Central => Ok((at(i, eps)? - at(i, -eps)?) / (2.0 * eps)),
        Stencil::FivePoint => {
            let near = at(i, eps)? - at(i, -eps)?;
            let far = at(i, 2.0 * eps)? - at(i, -2.0 * eps)?;
            Ok((8.0 * near - far) / (12.0 * eps))
        }
    })?;
    let numeric = Tensor::new(x.shape().to_vec(), numeric)?;

    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let (mut d2, mut n2) = (0.0, 0.0);
    for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
        let diff = (a - n).abs();
        max_abs = max_abs.max(diff);
        d2 += diff * diff;
        n2 += n * n;
        if diff > ABS_FLOOR {
            max_rel = max_rel.max(diff / (n.abs() + 1e-12));
        }
    }
    Ok(GradCheck {
        max_rel_error: max_rel,
        max_abs_error: max_abs,
        norm_rel_error: if n2 > 0.0 { (d2 / n2).sqrt() } else { d2.sqrt() },
        analytic,
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn sum_of_squares_passes() {
        let x = Tensor::vector(vec![0.3, -1.7, 2.2, 0.0]);
        let r = finite_diff_check(
            |g, x| {
                let sq = g.mul(x, x)?;
                g.sum(sq)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn constant_function_sits_below_floor() {
        let x = Tensor::vector(vec![0.5, -0.2, 1.3]);
        let r = finite_diff_check(
            |g, x| {
                let s = g.softmax(x)?;
                g.sum(s)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(r.max_abs_error < ABS_FLOOR, "{r:?}");
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn rejects_bad_step() {
        let x = Tensor::vector(vec![1.0]);
        assert!(finite_diff_check(|g, x| g.sum(x), &x, 0.0).is_err());
        assert!(finite_diff_check(|g, x| g.sum(x), &x, 0.1).is_err());
    }

    #[test]
    fn rejects_nondeterministic_function() {
        let calls = AtomicUsize::new(0);
        let x = Tensor::vector(vec![1.0, 2.0]);
        let r = finite_diff_check(
            |g, x| {
                let n = calls.fetch_add(1, Ordering::SeqCst);
                let y = g.scale(x, 1.0 + n as f64)?;
                g.sum(y)
            },
            &x,
            1e-5,
        );
        assert!(matches!(r, Err(Error::NonDeterministic)));
    }
}
