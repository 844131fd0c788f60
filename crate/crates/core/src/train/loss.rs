//! Semantic losses and their analytic gradients.
//!
//! Stop-gradient arguments are modelled by passing a separate "frozen" copy:
//! the loss reads its value from the frozen copy and the gradient treats it
//! as a constant. Passing the same slice twice gives the ordinary loss value.

use crate::error::{check_dim, Error, Result};

use super::TrainConfig;

/// Probabilities below this are floored before the log.
pub const PROB_FLOOR: f64 = 1e-12;

fn check_unit_interval(name: &str, values: &[f64]) -> Result<()> {
    match values.iter().find(|u| !(0.0..=1.0).contains(*u)) {
        Some(u) => Err(Error::invalid(format!("{name} value {u} outside [0,1]"))),
        None => Ok(()),
    }
}

/// Uncertainty-weighted cross entropy `mean((1 − u)·(−ln pred[target]))`.
pub fn loss_ce(pred: &[Vec<f64>], target: &[usize], u: &[f64]) -> Result<f64> {
    Ok(loss_ce_with_grad(pred, target, u)?.value)
}

#[derive(Debug, Clone)]
pub struct CeGrad {
    pub value: f64,
    pub grad_pred: Vec<Vec<f64>>,
    pub grad_u: Vec<f64>,
}

pub fn loss_ce_with_grad(pred: &[Vec<f64>], target: &[usize], u: &[f64]) -> Result<CeGrad> {
    check_dim(pred.len(), target.len())?;
    check_dim(pred.len(), u.len())?;
    if pred.is_empty() {
        return Err(Error::invalid("cross entropy over an empty batch"));
    }
    check_unit_interval("uncertainty", u)?;
    let n = pred.len() as f64;
    let mut value = 0.0;
    let mut grad_pred = Vec::with_capacity(pred.len());
    let mut grad_u = Vec::with_capacity(pred.len());
    for ((p, &t), &ui) in pred.iter().zip(target).zip(u) {
        if t >= p.len() {
            return Err(Error::invalid(format!("target {t} out of range for {} classes", p.len())));
        }
        let (nll, dnll) = floored_nll(p[t]);
        value += (1.0 - ui) * nll;
        let mut g = vec![0.0; p.len()];
        g[t] = (1.0 - ui) * dnll / n;
        grad_pred.push(g);
        grad_u.push(-nll / n);
    }
    Ok(CeGrad {
        value: value / n,
        grad_pred,
        grad_u,
    })
}

/// `(−ln max(p, floor), d/dp)`; the derivative vanishes below the floor.
pub(crate) fn floored_nll(p: f64) -> (f64, f64) {
    if p > PROB_FLOOR {
        (-p.ln(), -1.0 / p)
    } else {
        (-PROB_FLOOR.ln(), 0.0)
    }
}

/// `mean(u)`.
pub fn loss_uncertainty(u: &[f64]) -> Result<f64> {
    if u.is_empty() {
        return Err(Error::invalid("uncertainty loss over an empty set"));
    }
    check_unit_interval("uncertainty", u)?;
    Ok(u.iter().sum::<f64>() / u.len() as f64)
}

pub fn loss_uncertainty_grad(u: &[f64]) -> Vec<f64> {
    vec![1.0 / u.len() as f64; u.len()]
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Adaptive smoothing loss
/// `mean(‖s_mlp − s_g*‖² + max(u*, w_s)·‖s_mlp* − s_g‖²)`.
pub fn loss_smoothing(s_mlp: &[Vec<f64>], s_g: &[Vec<f64>], u_g: &[f64], w_s: f64) -> Result<f64> {
    Ok(smoothing_with_grad(s_mlp, s_mlp, s_g, s_g, u_g, w_s)?.value)
}

#[derive(Debug, Clone)]
pub struct SmoothingGrad {
    pub value: f64,
    /// Gradient of the first term only.
    pub grad_s_mlp: Vec<Vec<f64>>,
    /// Gradient of the second term only.
    pub grad_s_g: Vec<Vec<f64>>,
}

/// Smoothing loss with explicit frozen copies. Values read `s_mlp` and `s_g`
/// where they are live and `*_frozen` where the loss detaches them.
pub fn smoothing_with_grad(
    s_mlp: &[Vec<f64>],
    s_mlp_frozen: &[Vec<f64>],
    s_g: &[Vec<f64>],
    s_g_frozen: &[Vec<f64>],
    u_frozen: &[f64],
    w_s: f64,
) -> Result<SmoothingGrad> {
    let n = s_g.len();
    for len in [s_mlp.len(), s_mlp_frozen.len(), s_g_frozen.len(), u_frozen.len()] {
        check_dim(n, len)?;
    }
    if n == 0 {
        return Ok(SmoothingGrad {
            value: 0.0,
            grad_s_mlp: vec![],
            grad_s_g: vec![],
        });
    }
    let inv_n = 1.0 / n as f64;
    let mut value = 0.0;
    let mut grad_s_mlp = Vec::with_capacity(n);
    let mut grad_s_g = Vec::with_capacity(n);
    for i in 0..n {
        let d = s_g[i].len();
        for v in [&s_mlp[i], &s_mlp_frozen[i], &s_g_frozen[i]] {
            check_dim(d, v.len())?;
        }
        let weight = u_frozen[i].max(w_s);
        value += sq_dist(&s_mlp[i], &s_g_frozen[i]) + weight * sq_dist(&s_mlp_frozen[i], &s_g[i]);
        grad_s_mlp.push(
            s_mlp[i]
                .iter()
                .zip(&s_g_frozen[i])
                .map(|(m, g)| 2.0 * (m - g) * inv_n)
                .collect(),
        );
        grad_s_g.push(
            s_g[i]
                .iter()
                .zip(&s_mlp_frozen[i])
                .map(|(g, m)| 2.0 * weight * (g - m) * inv_n)
                .collect(),
        );
    }
    Ok(SmoothingGrad {
        value: value * inv_n,
        grad_s_mlp,
        grad_s_g,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub ce: f64,
    pub uncertainty: f64,
    pub smoothing: f64,
}

/// `λ_s (λ_CE L_CE + λ_u L_u) + λ_smo L_smo`.
pub fn total_loss(parts: &LossParts, cfg: &TrainConfig) -> f64 {
    cfg.lambda_s * (cfg.lambda_ce * parts.ce + cfg.lambda_u * parts.uncertainty) + cfg.lambda_smo * parts.smoothing
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ce_cases() {
        let onehot = vec![vec![0.0, 1.0, 0.0]];
        assert_eq!(loss_ce(&onehot, &[1], &[0.0]).unwrap(), 0.0);
        let uniform = vec![vec![0.25; 4]];
        assert!((loss_ce(&uniform, &[2], &[0.0]).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert_eq!(loss_ce(&uniform, &[2], &[1.0]).unwrap(), 0.0);
        // floor keeps the loss finite
        let zero = vec![vec![0.0, 1.0]];
        assert!((loss_ce(&zero, &[0], &[0.0]).unwrap() + 1e-12f64.ln()).abs() < 1e-9);
        assert!(loss_ce(&uniform, &[4], &[0.0]).is_err());
        assert!(loss_ce(&uniform, &[0], &[1.5]).is_err());
    }

    #[test]
    fn uncertainty_cases() {
        assert_eq!(loss_uncertainty(&[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(loss_uncertainty(&[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert!((loss_uncertainty(&[0.2, 0.4]).unwrap() - 0.3).abs() < 1e-15);
        assert!(loss_uncertainty(&[]).is_err());
    }

    #[test]
    fn smoothing_cases() {
        let s = vec![vec![0.3, -0.2]];
        for u in [0.0, 0.5, 1.0] {
            assert_eq!(loss_smoothing(&s, &s, &[u], 0.1).unwrap(), 0.0);
        }
        let m = vec![vec![1.0, 0.0]];
        let g = vec![vec![0.0, 0.0]];
        assert!((loss_smoothing(&m, &g, &[0.0], 0.1).unwrap() - 1.1).abs() < 1e-15);
        assert!((loss_smoothing(&m, &g, &[0.5], 0.1).unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn total_loss_weights() {
        let cfg = TrainConfig::default();
        assert_eq!(total_loss(&LossParts::default(), &cfg), 0.0);
        let parts = LossParts {
            ce: 1.0,
            uncertainty: 1.0,
            smoothing: 2.0,
        };
        assert!((total_loss(&parts, &cfg) - 0.3).abs() < 1e-15);
        let no_smo = TrainConfig {
            lambda_smo: 0.0,
            ..cfg
        };
        assert!((total_loss(&parts, &no_smo) - 0.5 * 0.2).abs() < 1e-15);
    }
}
