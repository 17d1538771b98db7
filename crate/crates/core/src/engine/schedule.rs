use super::tensor::Tensor;
use super::EngineError;

/// Linear beta schedule with its running products.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// `steps` betas spaced linearly from `beta_start` to `beta_end` inclusive.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule, EngineError> {
    if steps == 0 {
        return Err(EngineError::BadSchedule("need at least one step".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(EngineError::BadSchedule(format!("betas {beta_start}..{beta_end} outside 0 < start <= end < 1")));
    }
    let betas =
        (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
    NoiseSchedule::from_betas(betas)
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self, EngineError> {
        if betas.is_empty() || betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(EngineError::BadSchedule("every beta must lie in (0, 1)".into()));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self { betas, alphas, alpha_bar })
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    fn check(&self, t: usize) -> Result<f64, EngineError> {
        self.alpha_bar.get(t).copied().ok_or(EngineError::BadStep { t, steps: self.len() })
    }

    /// Evenly spaced sampling timesteps, descending, ending at 0.
    pub fn sampling_timesteps(&self, sample_steps: usize) -> Vec<usize> {
        let n = sample_steps.clamp(1, self.len());
        (0..n).rev().map(|i| i * self.len() / n).collect()
    }
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<(), EngineError> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(EngineError::shape(format!("{:?} vs {:?}", a.shape(), b.shape())))
    }
}

/// Forward process with an explicit cumulative alpha.
pub fn add_noise_ab(x0: &Tensor, eps: &Tensor, alpha_bar: f64) -> Result<Tensor, EngineError> {
    same_shape(x0, eps)?;
    let (a, s) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    Ok(x0.zip_map(eps, |x, e| a * x + s * e))
}

/// `x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps`.
pub fn add_noise(x0: &Tensor, eps: &Tensor, t: usize, schedule: &NoiseSchedule) -> Result<Tensor, EngineError> {
    add_noise_ab(x0, eps, schedule.check(t)?)
}

/// Deterministic DDIM update given cumulative alphas; `ab_prev = None`
/// returns the predicted clean sample.
pub fn ddim_update(x_t: &Tensor, eps_pred: &Tensor, ab_t: f64, ab_prev: Option<f64>) -> Result<Tensor, EngineError> {
    same_shape(x_t, eps_pred)?;
    let (sa, sn) = (ab_t.sqrt(), (1.0 - ab_t).sqrt());
    let x0_hat = x_t.zip_map(eps_pred, |x, e| (x - sn * e) / sa);
    Ok(match ab_prev {
        None => x0_hat,
        Some(p) => {
            let (pa, pn) = (p.sqrt(), (1.0 - p).sqrt());
            x0_hat.zip_map(eps_pred, |x, e| pa * x + pn * e)
        }
    })
}

/// One DDIM step from `t` to `t_prev` (`None` = final step, returns x0_hat).
pub fn ddim_step(
    x_t: &Tensor,
    eps_pred: &Tensor,
    t: usize,
    t_prev: Option<usize>,
    schedule: &NoiseSchedule,
) -> Result<Tensor, EngineError> {
    let ab_t = schedule.check(t)?;
    let ab_prev = match t_prev {
        Some(p) if p >= t => return Err(EngineError::BadStepOrder { t, t_prev: p }),
        Some(p) => Some(schedule.check(p)?),
        None => None,
    };
    ddim_update(x_t, eps_pred, ab_t, ab_prev)
}
