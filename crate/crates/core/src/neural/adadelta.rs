//! AdaDelta: per-weight steps from running averages of squared gradients
//! and squared updates, no global learning rate.

use super::matrix::Matrix;

#[derive(Debug, Clone)]
pub struct AdaDelta {
    pub rho: f64,
    pub eps: f64,
    sq_grad: Vec<Vec<f64>>,
    sq_update: Vec<Vec<f64>>,
}

impl AdaDelta {
    /// Accumulators sized like `params`.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Matrix>, rho: f64, eps: f64) -> Self {
        let sq_grad: Vec<Vec<f64>> = params
            .into_iter()
            .map(|m| vec![0.0; m.data.len()])
            .collect();
        AdaDelta {
            rho,
            eps,
            sq_update: sq_grad.clone(),
            sq_grad,
        }
    }

    /// Applies one update in place; `params` and `grads` must come in the
    /// order used at construction.
    pub fn step<'a, 'b>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Matrix>,
        grads: impl IntoIterator<Item = &'b Matrix>,
    ) {
        let (rho, eps) = (self.rho, self.eps);
        for (((p, g), eg), ex) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.sq_grad)
            .zip(&mut self.sq_update)
        {
            debug_assert_eq!(p.data.len(), g.data.len());
            for (((w, &gi), e_g), e_x) in p
                .data
                .iter_mut()
                .zip(&g.data)
                .zip(eg.iter_mut())
                .zip(ex.iter_mut())
            {
                *e_g = rho * *e_g + (1.0 - rho) * gi * gi;
                let dx = -((*e_x + eps).sqrt() / (*e_g + eps).sqrt()) * gi;
                *e_x = rho * *e_x + (1.0 - rho) * dx * dx;
                *w += dx;
            }
        }
    }

    pub fn squared_grad_average(&self) -> &[Vec<f64>] {
        &self.sq_grad
    }
}
