//! Estimating-equation stacks for each estimator.

use nalgebra::{DMatrix, DVector};

use super::{EEStack, Target};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{
    dr_means, prediction_rhat, rhat_column, weights_and_signed, PropensityFit, RhatPrediction, WeightTreatment,
};
use crate::mle::{logistic_scores, CountLikelihood, OutcomeFit};

/// Fitted components of one estimator, ready to be stacked.
pub enum StackSpec<'a> {
    /// Hájek mean equations, with logistic scores for estimated weights.
    Iptw {
        data: &'a Dataset,
        prop: &'a PropensityFit,
        treatment: WeightTreatment,
        lambda: (f64, f64),
    },
    /// Outcome scores and prediction means.
    Pg {
        data: &'a Dataset,
        outcome: &'a OutcomeFit,
        lambda: (f64, f64),
    },
    /// Logistic scores (when fitted), outcome scores, augmented means.
    Dr {
        data: &'a Dataset,
        prop: &'a PropensityFit,
        outcome: &'a OutcomeFit,
        lambda: (f64, f64),
    },
    /// Logistic scores (estimated weights) and weighted heaped scores of the
    /// marginal model; the target is the exposure coefficient.
    IptwHeap {
        data: &'a Dataset,
        prop: &'a PropensityFit,
        outcome: &'a OutcomeFit,
        treatment: WeightTreatment,
    },
    /// Logistic scores, heaped outcome scores with `r̂` depending on the
    /// propensity coefficients, prediction means.
    DrHeap {
        data: &'a Dataset,
        prop: &'a PropensityFit,
        outcome: &'a OutcomeFit,
        mode: RhatPrediction,
        lambda: (f64, f64),
    },
}

/// Logistic block: design, exposure and coefficient estimates.
struct AlphaBlock {
    x: DMatrix<f64>,
    a: Vec<u8>,
    alpha: Vec<f64>,
    names: Vec<String>,
}

impl AlphaBlock {
    fn new(prop: &PropensityFit, data: &Dataset) -> Result<Self> {
        let fit = prop
            .fit
            .as_ref()
            .ok_or_else(|| Error::Estimation("estimated weights need a fitted propensity model".into()))?;
        let x = prop.x.clone().expect("fitted propensity keeps its design");
        if x.nrows() != data.n() {
            return Err(Error::Dimension("propensity design does not match the dataset".into()));
        }
        Ok(Self {
            x,
            a: data.exposure().to_vec(),
            alpha: fit.estimates.clone(),
            names: fit.names.iter().map(|n| format!("alpha:{n}")).collect(),
        })
    }

    fn dim(&self) -> usize {
        self.alpha.len()
    }

    fn scores(&self, alpha: &[f64]) -> DMatrix<f64> {
        logistic_scores(&self.x, &self.a, &DVector::from_column_slice(alpha))
    }
}

fn estimated_alpha(prop: &PropensityFit, data: &Dataset, treatment: WeightTreatment) -> Result<Option<AlphaBlock>> {
    match treatment {
        WeightTreatment::Estimated => AlphaBlock::new(prop, data).map(Some),
        WeightTreatment::Fixed => Ok(None),
        WeightTreatment::NotApplicable => Err(Error::Estimation("weighting stack needs a weight treatment".into())),
    }
}

fn propensities(prop: &PropensityFit, block: Option<&AlphaBlock>, theta: &[f64]) -> Vec<f64> {
    match block {
        Some(b) => prop.propensities_at(&theta[..b.dim()]),
        None => prop.e.clone(),
    }
}

fn check_rows(data: &Dataset, prop: Option<&PropensityFit>) -> Result<()> {
    if let Some(p) = prop {
        if p.e.len() != data.n() {
            return Err(Error::Dimension(format!("{} propensities for {} rows", p.e.len(), data.n())));
        }
    }
    Ok(())
}

/// Outcome block: likelihood and counterfactual designs.
struct OutcomeBlock {
    lik: CountLikelihood,
    gamma: Vec<f64>,
    names: Vec<String>,
    x1: (DMatrix<f64>, Option<DMatrix<f64>>),
    x0: (DMatrix<f64>, Option<DMatrix<f64>>),
}

impl OutcomeBlock {
    fn new(outcome: &OutcomeFit, data: &Dataset) -> Result<Self> {
        outcome.fit.require_converged()?;
        Ok(Self {
            lik: outcome.likelihood(data, None)?,
            gamma: outcome.fit.estimates.clone(),
            names: outcome.fit.names.iter().map(|n| format!("gamma:{n}")).collect(),
            x1: outcome.counterfactual_designs(data, 1)?,
            x0: outcome.counterfactual_designs(data, 0)?,
        })
    }

    fn dim(&self) -> usize {
        self.gamma.len()
    }

    fn means(&self, lik: &CountLikelihood, gamma: &[f64], x1: &DMatrix<f64>, x0: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
        (
            lik.mean_predictions(gamma, x1, self.x1.1.as_ref()),
            lik.mean_predictions(gamma, x0, self.x0.1.as_ref()),
        )
    }
}

fn lambda_names() -> [String; 2] {
    ["lambda1".to_string(), "lambda0".to_string()]
}

/// Horizontally joins per-observation blocks.
fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n = blocks[0].nrows();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, cols);
    let mut c = 0;
    for b in blocks {
        out.columns_mut(c, b.ncols()).copy_from(*b);
        c += b.ncols();
    }
    out
}

fn mean_equations(v1: &[f64], v0: &[f64], l1: f64, l0: f64) -> DMatrix<f64> {
    DMatrix::from_fn(v1.len(), 2, |i, j| if j == 0 { v1[i] - l1 } else { v0[i] - l0 })
}

/// Assembles the stacked estimating equations for a fitted estimator.
pub fn build_stack(spec: StackSpec<'_>) -> Result<EEStack<'_>> {
    match spec {
        StackSpec::Iptw {
            data,
            prop,
            treatment,
            lambda,
        } => {
            check_rows(data, Some(prop))?;
            let block = estimated_alpha(prop, data, treatment)?;
            let p = block.as_ref().map_or(0, AlphaBlock::dim);
            let mut theta = block.as_ref().map_or_else(Vec::new, |b| b.alpha.clone());
            theta.extend([lambda.0, lambda.1]);
            let mut names = block.as_ref().map_or_else(Vec::new, |b| b.names.clone());
            names.extend(lambda_names());
            let a = data.exposure().to_vec();
            let y: Vec<f64> = data.outcome().iter().map(|&v| v as f64).collect();
            EEStack::new(theta, names, Target::Ratio { i1: p, i0: p + 1 }, move |t| {
                let e = propensities(prop, block.as_ref(), t);
                let (w, _) = weights_and_signed(&a, &e);
                let (l1, l0) = (t[p], t[p + 1]);
                let means = DMatrix::from_fn(a.len(), 2, |i, j| {
                    let ai = a[i] as f64;
                    if j == 0 {
                        w[i] * ai * (y[i] - l1)
                    } else {
                        w[i] * (1.0 - ai) * (y[i] - l0)
                    }
                });
                match &block {
                    Some(b) => hstack(&[&b.scores(&t[..p]), &means]),
                    None => means,
                }
            })
        }
        StackSpec::Pg { data, outcome, lambda } => {
            let ob = OutcomeBlock::new(outcome, data)?;
            let q = ob.dim();
            let mut theta = ob.gamma.clone();
            theta.extend([lambda.0, lambda.1]);
            let mut names = ob.names.clone();
            names.extend(lambda_names());
            EEStack::new(theta, names, Target::Ratio { i1: q, i0: q + 1 }, move |t| {
                let gamma = &t[..q];
                let scores = ob.lik.obs_scores(gamma);
                let (m1, m0) = ob.means(&ob.lik, gamma, &ob.x1.0, &ob.x0.0);
                hstack(&[&scores, &mean_equations(&m1, &m0, t[q], t[q + 1])])
            })
        }
        StackSpec::Dr {
            data,
            prop,
            outcome,
            lambda,
        } => {
            check_rows(data, Some(prop))?;
            let treatment = if prop.fit.is_some() {
                WeightTreatment::Estimated
            } else {
                WeightTreatment::Fixed
            };
            let block = estimated_alpha(prop, data, treatment)?;
            let ob = OutcomeBlock::new(outcome, data)?;
            let p = block.as_ref().map_or(0, AlphaBlock::dim);
            let q = ob.dim();
            let mut theta = block.as_ref().map_or_else(Vec::new, |b| b.alpha.clone());
            theta.extend(ob.gamma.iter().copied());
            theta.extend([lambda.0, lambda.1]);
            let mut names = block.as_ref().map_or_else(Vec::new, |b| b.names.clone());
            names.extend(ob.names.iter().cloned());
            names.extend(lambda_names());
            let a = data.exposure().to_vec();
            let y = data.outcome().to_vec();
            let k = p + q;
            EEStack::new(theta, names, Target::Ratio { i1: k, i0: k + 1 }, move |t| {
                let e = propensities(prop, block.as_ref(), t);
                let gamma = &t[p..k];
                let scores = ob.lik.obs_scores(gamma);
                let (m1, m0) = ob.means(&ob.lik, gamma, &ob.x1.0, &ob.x0.0);
                // Per-observation terms whose means are the augmented estimators.
                let (t1, t0): (Vec<f64>, Vec<f64>) = (0..a.len())
                    .map(|i| dr_means(&a[i..=i], &y[i..=i], &e[i..=i], &m1[i..=i], &m0[i..=i]))
                    .unzip();
                let means = mean_equations(&t1, &t0, t[k], t[k + 1]);
                match &block {
                    Some(b) => hstack(&[&b.scores(&t[..p]), &scores, &means]),
                    None => hstack(&[&scores, &means]),
                }
            })
        }
        StackSpec::IptwHeap {
            data,
            prop,
            outcome,
            treatment,
        } => {
            check_rows(data, Some(prop))?;
            let block = estimated_alpha(prop, data, treatment)?;
            let ob = OutcomeBlock::new(outcome, data)?;
            if ob.names.get(1).map(String::as_str) != Some(&format!("gamma:{}", data.exposure_name())) {
                return Err(Error::Dimension("marginal model must be intercept and exposure".into()));
            }
            let p = block.as_ref().map_or(0, AlphaBlock::dim);
            let q = ob.dim();
            let mut theta = block.as_ref().map_or_else(Vec::new, |b| b.alpha.clone());
            theta.extend(ob.gamma.iter().copied());
            let mut names = block.as_ref().map_or_else(Vec::new, |b| b.names.clone());
            names.extend(ob.names.iter().cloned());
            let a = data.exposure().to_vec();
            EEStack::new(theta, names, Target::LogCoef { idx: p + 1 }, move |t| {
                let e = propensities(prop, block.as_ref(), t);
                let (w, _) = weights_and_signed(&a, &e);
                let mut scores = ob.lik.obs_scores(&t[p..p + q]);
                for (i, mut row) in scores.row_iter_mut().enumerate() {
                    row *= w[i];
                }
                match &block {
                    Some(b) => hstack(&[&b.scores(&t[..p]), &scores]),
                    None => scores,
                }
            })
        }
        StackSpec::DrHeap {
            data,
            prop,
            outcome,
            mode,
            lambda,
        } => {
            check_rows(data, Some(prop))?;
            let treatment = if prop.fit.is_some() {
                WeightTreatment::Estimated
            } else {
                WeightTreatment::Fixed
            };
            let block = estimated_alpha(prop, data, treatment)?;
            let ob = OutcomeBlock::new(outcome, data)?;
            let r_col = rhat_column(outcome, data)?;
            let p = block.as_ref().map_or(0, AlphaBlock::dim);
            let q = ob.dim();
            let k = p + q;
            let mut theta = block.as_ref().map_or_else(Vec::new, |b| b.alpha.clone());
            theta.extend(ob.gamma.iter().copied());
            theta.extend([lambda.0, lambda.1]);
            let mut names = block.as_ref().map_or_else(Vec::new, |b| b.names.clone());
            names.extend(ob.names.iter().cloned());
            names.extend(lambda_names());
            let a = data.exposure().to_vec();
            EEStack::new(theta, names, Target::Ratio { i1: k, i0: k + 1 }, move |t| {
                let e = propensities(prop, block.as_ref(), t);
                let (_, r) = weights_and_signed(&a, &e);
                let (r1, r0) = prediction_rhat(&e, &r, mode);
                let gamma = &t[p..k];
                let mut lik = ob.lik.clone();
                let mut x1 = ob.x1.0.clone();
                let mut x0 = ob.x0.0.clone();
                lik.x_count.column_mut(r_col).copy_from_slice(&r);
                x1.column_mut(r_col).copy_from_slice(&r1);
                x0.column_mut(r_col).copy_from_slice(&r0);
                let scores = lik.obs_scores(gamma);
                let (m1, m0) = ob.means(&lik, gamma, &x1, &x0);
                let means = mean_equations(&m1, &m0, t[k], t[k + 1]);
                match &block {
                    Some(b) => hstack(&[&b.scores(&t[..p]), &scores, &means]),
                    None => hstack(&[&scores, &means]),
                }
            })
        }
    }
}
