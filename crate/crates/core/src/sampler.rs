//! Reverse-diffusion samplers driven by [`combined_estimate`].

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::denoiser::Denoiser;
use crate::guidance::{combined_estimate, DiffusionError, MultiViewTask, SamplerKind, DIVERGENCE_LIMIT};
use crate::schedule::NoiseSchedule;
use crate::tensor::{seeded_rng, ImageTensor};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceStep {
    pub step: usize,
    pub t: usize,
    pub max_abs: f64,
}

#[derive(Debug, Clone)]
pub struct SampleResult {
    /// Final sample, clipped to `[-1, 1]` (unclipped when `steps = 0`).
    pub x0: ImageTensor,
    /// Final sample before clipping.
    pub x0_raw: ImageTensor,
    /// The initial noise `x_T`.
    pub x_init: ImageTensor,
    pub trace: Vec<TraceStep>,
}

/// Draws `x_T` from the task seed and runs the reverse process.
pub fn sample<D: Denoiser + ?Sized>(
    backend: &D,
    task: &MultiViewTask,
    schedule: &NoiseSchedule,
) -> Result<SampleResult, DiffusionError> {
    let dims = task.validate()?;
    let mut rng = seeded_rng(task.seed);
    let x_init = ImageTensor::randn(dims, &mut rng);
    run(backend, task, schedule, x_init, &mut rng)
}

/// Runs the reverse process from a given `x_T`. DDPM noise is drawn from the
/// task seed's stream after the `dims.len()` values `sample` would have used
/// for `x_T`, so `sample_from(sample(..).x_init)` reproduces `sample`.
pub fn sample_from<D: Denoiser + ?Sized>(
    backend: &D,
    task: &MultiViewTask,
    schedule: &NoiseSchedule,
    x_init: ImageTensor,
) -> Result<SampleResult, DiffusionError> {
    let dims = task.validate()?;
    x_init
        .ensure_dims(dims)
        .map_err(|e| DiffusionError::InvalidTask(format!("initial noise: {e}")))?;
    let mut rng = seeded_rng(task.seed);
    let _ = ImageTensor::randn(dims, &mut rng);
    run(backend, task, schedule, x_init, &mut rng)
}

fn run<D: Denoiser + ?Sized>(
    backend: &D,
    task: &MultiViewTask,
    schedule: &NoiseSchedule,
    x_init: ImageTensor,
    rng: &mut ChaCha8Rng,
) -> Result<SampleResult, DiffusionError> {
    let taus = schedule.timesteps(task.steps)?;
    if task.steps == 0 {
        return Ok(SampleResult { x0: x_init.clone(), x0_raw: x_init.clone(), x_init, trace: Vec::new() });
    }
    let mut x = x_init.clone();
    let mut trace = Vec::with_capacity(task.steps);
    for k in (1..=task.steps).rev() {
        let (t, t_prev) = (taus[k], taus[k - 1]);
        let est = combined_estimate(backend, task, &x, t, k)?;
        let (ab, ab_prev) = (schedule.alpha_bar(t), schedule.alpha_bar(t_prev));
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        let x0_hat = x.zip_map(&est.eps, |xv, e| (xv - b * e) / a).expect("same dims");
        x = match task.sampler {
            SamplerKind::Ddim => {
                let (a_prev, b_prev) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
                x0_hat.zip_map(&est.eps, |x0, e| a_prev * x0 + b_prev * e).expect("same dims")
            }
            SamplerKind::Ddpm => {
                let beta = 1.0 - ab / ab_prev;
                let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
                let ct = (ab / ab_prev).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
                let fixed_var = (1.0 - ab_prev) / (1.0 - ab) * beta;
                let mut next = x0_hat.zip_map(&x, |x0, xt| c0 * x0 + ct * xt).expect("same dims");
                if t_prev > 0 {
                    let lv = est.log_var.as_ref();
                    for (i, v) in next.data_mut().iter_mut().enumerate() {
                        let var = lv.map_or(fixed_var, |lv| lv.data()[i].exp());
                        let z: f64 = rng.sample(StandardNormal);
                        *v += var.sqrt() * z;
                    }
                }
                next
            }
        };
        let max_abs = x.data().iter().fold(0.0f64, |m, v| if v.is_nan() { f64::INFINITY } else { m.max(v.abs()) });
        if max_abs > DIVERGENCE_LIMIT {
            return Err(DiffusionError::Divergence { step: task.steps - k + 1, t, max_abs });
        }
        trace.push(TraceStep { step: task.steps - k + 1, t: t_prev, max_abs });
    }
    Ok(SampleResult { x0: x.clamp(-1.0, 1.0), x0_raw: x, x_init, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{BackendError, DenoiserOutput, PromptCondition};
    use crate::guidance::Reduction;
    use crate::tensor::Dims;
    use crate::view::View;

    /// The optimal denoiser for data `x_0 = 0`: ε̂ = x_t / b.
    struct Origin(NoiseSchedule);

    impl Denoiser for Origin {
        fn id(&self) -> String {
            "origin".into()
        }

        fn denoise(&self, x: &ImageTensor, t: usize, _c: Option<&str>) -> Result<DenoiserOutput, BackendError> {
            Ok(DenoiserOutput::new(x.scale(1.0 / self.0.w_noise(t))))
        }
    }

    /// Pushes ε̂ far from the truth to force divergence.
    struct Exploding;

    impl Denoiser for Exploding {
        fn id(&self) -> String {
            "exploding".into()
        }

        fn denoise(&self, x: &ImageTensor, _t: usize, _c: Option<&str>) -> Result<DenoiserOutput, BackendError> {
            Ok(DenoiserOutput::new(x.scale(-50.0)))
        }
    }

    fn task(sampler: SamplerKind, steps: usize) -> MultiViewTask {
        let d = Dims::new(1, 2, 2);
        MultiViewTask {
            views: vec![View::identity(d)],
            prompts: vec![PromptCondition::new("any")],
            guidance: 1.0,
            reduction: Reduction::Mean,
            sampler,
            steps,
            seed: 9,
        }
    }

    #[test]
    fn zero_steps_returns_initial_noise() {
        let s = NoiseSchedule::default();
        let r = sample(&Origin(s.clone()), &task(SamplerKind::Ddim, 0), &s).unwrap();
        assert!(r.x0.bit_eq(&r.x_init));
        assert!(r.x_init.bit_eq(&ImageTensor::randn_seeded(Dims::new(1, 2, 2), 9)));
    }

    #[test]
    fn point_mass_collapses() {
        let s = NoiseSchedule::default();
        for kind in [SamplerKind::Ddim, SamplerKind::Ddpm] {
            let r = sample(&Origin(s.clone()), &task(kind, 50), &s).unwrap();
            assert!(r.x0.max_abs() < 1e-9, "{kind}: {:?}", r.x0.data());
            assert_eq!(r.trace.len(), 50);
            assert_eq!(r.trace.last().unwrap().t, 0);
        }
    }

    #[test]
    fn replay_from_stored_noise() {
        let s = NoiseSchedule::default();
        for kind in [SamplerKind::Ddim, SamplerKind::Ddpm] {
            let t = task(kind, 20);
            let a = sample(&Exploding, &MultiViewTask { steps: 0, ..t.clone() }, &s).unwrap();
            let b = sample(&Origin(s.clone()), &t, &s).unwrap();
            let c = sample_from(&Origin(s.clone()), &t, &s, b.x_init.clone()).unwrap();
            assert!(b.x0_raw.bit_eq(&c.x0_raw));
            assert!(a.x_init.bit_eq(&b.x_init));
        }
    }

    #[test]
    fn divergence_names_step() {
        let s = NoiseSchedule::default();
        let err = sample(&Exploding, &task(SamplerKind::Ddim, 10), &s).unwrap_err();
        match err {
            DiffusionError::Divergence { step, max_abs, .. } => {
                assert!(step >= 1 && max_abs > DIVERGENCE_LIMIT);
                assert!(err.to_string().contains(&format!("step {step}")));
            }
            e => panic!("{e}"),
        }
    }
}
