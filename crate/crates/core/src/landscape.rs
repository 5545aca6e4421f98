//! The loss-surface abstraction every probe works against.

/// A scalar loss over a flat parameter vector.
///
/// Implementations must be pure: the same point always yields the same
/// value, so probes can evaluate grid points from several threads.
pub trait Landscape: Sync {
    fn dim(&self) -> usize;

    fn loss(&self, x: &[f64]) -> f64;

    /// Exact derivative of `t -> loss(x + t u)` at `t = 0`, when the model
    /// can supply one. Probes fall back to central differences otherwise.
    fn directional_slope(&self, _x: &[f64], _u: &[f64]) -> Option<f64> {
        None
    }

    /// Global minimum value, if known in closed form.
    fn known_min(&self) -> Option<f64> {
        None
    }
}

impl<T: Landscape + ?Sized> Landscape for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn loss(&self, x: &[f64]) -> f64 {
        (**self).loss(x)
    }
    fn directional_slope(&self, x: &[f64], u: &[f64]) -> Option<f64> {
        (**self).directional_slope(x, u)
    }
    fn known_min(&self) -> Option<f64> {
        (**self).known_min()
    }
}

/// `scale/2 * |x - center|^2`.
#[derive(Debug, Clone)]
pub struct IsotropicQuadratic {
    pub center: Vec<f64>,
    pub scale: f64,
}

impl IsotropicQuadratic {
    pub fn new(center: Vec<f64>, scale: f64) -> Self {
        Self { center, scale }
    }

    pub fn unit(dim: usize) -> Self {
        Self::new(vec![0.0; dim], 1.0)
    }
}

impl Landscape for IsotropicQuadratic {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn loss(&self, x: &[f64]) -> f64 {
        0.5 * self.scale
            * x.iter()
                .zip(&self.center)
                .map(|(a, c)| (a - c) * (a - c))
                .sum::<f64>()
    }

    fn directional_slope(&self, x: &[f64], u: &[f64]) -> Option<f64> {
        Some(
            self.scale
                * x.iter()
                    .zip(&self.center)
                    .zip(u)
                    .map(|((a, c), ui)| (a - c) * ui)
                    .sum::<f64>(),
        )
    }

    fn known_min(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// Adapts a closure into a [`Landscape`].
pub struct FnLandscape<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnLandscape<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> Landscape for FnLandscape<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn loss(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `x + t u`
pub fn along(x: &[f64], u: &[f64], t: f64) -> Vec<f64> {
    x.iter().zip(u).map(|(a, b)| a + t * b).collect()
}
