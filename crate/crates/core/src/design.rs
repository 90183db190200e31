//! Translation of the DC surrogates into convex-program atoms, shared by the
//! CAP and CBP optimizers.

use crate::error::Result;
use crate::geometry::ChannelRealization;
use crate::linalg::{self, CMat, LN_2};
use crate::solver::{Affine, ConvexExpr, ConvexProgram, LogDet, Solution, Var};

/// Quantization variance of one RU: optimized or held fixed.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Sigma {
    Var(Var),
    Fixed(f64),
}

/// Covariance variable of one MS with its embedding into the full transmit
/// dimension (`None` for MSs that receive nothing).
#[derive(Debug, Clone)]
pub(crate) struct Slot {
    pub var: usize,
    pub embedding: CMat,
}

#[derive(Debug, Clone)]
pub(crate) struct Builder {
    pub program: ConvexProgram,
    pub tx: Vec<usize>,
    pub slots: Vec<Option<Slot>>,
    pub sigma: Vec<Sigma>,
    pub rates: Vec<Option<Var>>,
    /// `D_i D_i^T` per RU.
    ru_projectors: Vec<CMat>,
}

impl Builder {
    /// `embeddings[j] = None` pins `V_j = 0`; `sigma[i] = Some(v)` pins the
    /// variance of RU `i` to `v`, `None` makes it a variable.
    pub fn new(
        tx: &[usize],
        embeddings: &[Option<CMat>],
        sigma: &[Option<f64>],
        sigma_floor: f64,
        with_rates: bool,
    ) -> Self {
        let mut program = ConvexProgram::new();
        let slots = embeddings
            .iter()
            .enumerate()
            .map(|(j, e)| {
                e.as_ref().filter(|e| e.ncols() > 0).map(|e| Slot {
                    var: program.add_psd(e.ncols(), format!("V{j}")),
                    embedding: e.clone(),
                })
            })
            .collect();
        let sigma = sigma
            .iter()
            .enumerate()
            .map(|(i, s)| match s {
                None => Sigma::Var(program.add_scalar(sigma_floor, format!("sigma{i}"))),
                Some(v) => Sigma::Fixed(*v),
            })
            .collect();
        let rates = embeddings
            .iter()
            .enumerate()
            .map(|(j, e)| (with_rates && e.as_ref().is_some_and(|e| e.ncols() > 0)).then(|| program.add_rate(format!("R{j}"))))
            .collect();
        let total: usize = tx.iter().sum();
        let mut off = 0;
        let ru_projectors = tx
            .iter()
            .map(|&n| {
                let d = linalg::selector(total, off, n);
                off += n;
                &d * d.transpose()
            })
            .collect();
        Builder {
            program,
            tx: tx.to_vec(),
            slots,
            sigma,
            rates,
            ru_projectors,
        }
    }

    fn num_rus(&self) -> usize {
        self.tx.len()
    }

    /// Concave lower bound of the rate of MS `j` on channel `h`, expanded at
    /// the embedded covariances `v0` and variances `sigma0`, scaled by
    /// `scale` (bits times `scale`).
    pub fn rate_surrogate(
        &self,
        h: &ChannelRealization,
        v0: &[CMat],
        sigma0: &[f64],
        j: usize,
        scale: f64,
    ) -> Result<(Affine, Option<LogDet>)> {
        if scale == 0.0 {
            return Ok((Affine::default(), None));
        }
        let hj = h.ms(j);
        let nr = hj.nrows();
        let identity = linalg::identity(nr);

        // expansion point of the interference term
        let mut interference0 = linalg::zeros(hj.ncols(), hj.ncols());
        for (k, v) in v0.iter().enumerate() {
            if k != j {
                interference0 += v;
            }
        }
        for i in 0..self.num_rus() {
            interference0 += &self.ru_projectors[i] * linalg::c(sigma0[i], 0.0);
        }
        let a0 = linalg::hermitian_part(&(&identity + hj * interference0 * hj.adjoint()));
        let a0_inv = linalg::inverse_pd(&a0)?;
        let g = linalg::hermitian_part(&(hj.adjoint() * &a0_inv * hj));

        let mut affine = Affine::constant(-linalg::log2_det_pd(&a0)? - (linalg::real_trace(&a0_inv) - nr as f64) / LN_2);
        let mut atom_const = identity.clone();
        let mut atom = LogDet::new(scale / LN_2, identity);
        for (k, slot) in self.slots.iter().enumerate() {
            let Some(slot) = slot else { continue };
            let he = hj * &slot.embedding;
            if k != j {
                let coeff = slot.embedding.adjoint() * &g * &slot.embedding;
                affine.add_trace(slot.var, linalg::hermitian_part(&coeff) * linalg::c(-1.0 / LN_2, 0.0));
            }
            atom = atom.with_congruence(slot.var, he);
        }
        for i in 0..self.num_rus() {
            let gi = linalg::hermitian_part(&(hj * &self.ru_projectors[i] * hj.adjoint()));
            let tr = linalg::trace_of_product(&g, &self.ru_projectors[i]);
            match self.sigma[i] {
                Sigma::Var(var) => {
                    affine.add_scalar(var, -tr / LN_2);
                    atom = atom.with_scalar(var, gi);
                }
                Sigma::Fixed(s) => {
                    affine.constant -= s * tr / LN_2;
                    atom_const += gi * linalg::c(s, 0.0);
                }
            }
        }
        atom.constant = atom_const;
        Ok((affine.scaled(scale), Some(atom)))
    }

    /// Convex upper bound of `scale * C_i`, linearized at `v0_total`
    /// (embedded sum covariance) and `sigma0_i`.
    pub fn fronthaul_surrogate(&self, v0_total: &CMat, sigma0_i: f64, i: usize, scale: f64) -> Result<ConvexExpr> {
        let n = self.tx[i];
        let off: usize = self.tx[..i].iter().sum();
        let block = v0_total.view((off, off), (n, n)).into_owned();
        let a0 = linalg::hermitian_part(&(block + linalg::scaled_identity(n, sigma0_i)));
        let a0_inv = linalg::inverse_pd(&a0)?;
        let mut full_inv = linalg::zeros(v0_total.nrows(), v0_total.nrows());
        full_inv.view_mut((off, off), (n, n)).copy_from(&a0_inv);

        let mut affine = Affine::constant(linalg::log2_det_pd(&a0)? - n as f64 / LN_2);
        for slot in self.slots.iter().flatten() {
            let coeff = linalg::hermitian_part(&(slot.embedding.adjoint() * &full_inv * &slot.embedding));
            if coeff.iter().any(|z| z.norm() > 0.0) {
                affine.add_trace(slot.var, coeff * linalg::c(1.0 / LN_2, 0.0));
            }
        }
        let tr = linalg::real_trace(&a0_inv) / LN_2;
        let neg_log_dets = match self.sigma[i] {
            Sigma::Var(sigma) => {
                affine.add_scalar(sigma, tr);
                vec![LogDet::new(scale * n as f64 / LN_2, linalg::zeros(1, 1)).with_scalar(sigma, linalg::identity(1))]
            }
            Sigma::Fixed(s) => {
                affine.constant += s * tr - n as f64 * s.log2();
                vec![]
            }
        };
        Ok(ConvexExpr {
            affine: affine.scaled(scale),
            neg_log_dets,
        })
    }

    /// Transmit power of RU `i` minus the contribution of a pinned variance.
    pub fn power(&self, i: usize) -> (Affine, f64) {
        let mut affine = Affine::default();
        for slot in self.slots.iter().flatten() {
            let coeff = linalg::hermitian_part(&(slot.embedding.adjoint() * &self.ru_projectors[i] * &slot.embedding));
            if coeff.iter().any(|z| z.norm() > 0.0) {
                affine.add_trace(slot.var, coeff);
            }
        }
        let fixed = match self.sigma[i] {
            Sigma::Var(var) => {
                affine.add_scalar(var, self.tx[i] as f64);
                0.0
            }
            Sigma::Fixed(s) => self.tx[i] as f64 * s,
        };
        (affine, fixed)
    }

    /// Embedded covariances, variances and rates of a solution.
    pub fn extract(&self, sol: &Solution) -> Extracted {
        let total: usize = self.tx.iter().sum();
        let mut embedded = Vec::with_capacity(self.slots.len());
        for slot in &self.slots {
            match slot {
                Some(s) => {
                    let v = linalg::hermitian_part(&sol.psd_values[s.var]);
                    embedded.push(&s.embedding * &v * s.embedding.adjoint());
                }
                None => {
                    embedded.push(linalg::zeros(total, total));
                }
            }
        }
        let sigma = self
            .sigma
            .iter()
            .map(|s| match s {
                Sigma::Var(v) => sol.value(*v),
                Sigma::Fixed(x) => *x,
            })
            .collect();
        let rates = self.rates.iter().map(|r| r.map_or(0.0, |v| sol.value(v))).collect();
        Extracted {
            embedded,
            sigma,
            rates,
        }
    }

    /// Warm-start point from embedded covariances (projected onto each
    /// slot's support) and variances.
    pub fn warm_point(&self, embedded: &[CMat], sigma: &[f64], rates: &[f64]) -> Solution {
        let psd_values = self
            .slots
            .iter()
            .zip(embedded)
            .filter_map(|(slot, v)| slot.as_ref().map(|s| s.embedding.adjoint() * v * &s.embedding))
            .collect();
        let scalar_values = self
            .sigma
            .iter()
            .zip(sigma)
            .filter_map(|(s, v)| matches!(s, Sigma::Var(_)).then_some(*v))
            .collect();
        let rate_values = self
            .rates
            .iter()
            .zip(rates)
            .filter_map(|(r, v)| r.map(|_| *v))
            .collect();
        Solution {
            psd_values,
            scalar_values,
            rate_values,
            objective_value: f64::NAN,
            kkt_residual: f64::NAN,
            status: crate::solver::SolveStatus::Optimal,
            newton_steps: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Extracted {
    pub embedded: Vec<CMat>,
    pub sigma: Vec<f64>,
    pub rates: Vec<f64>,
}
