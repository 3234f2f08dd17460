use anagram_core::analytic::{AnalyticDenoiser, Component, MixtureSpec};
use anagram_core::denoiser::{BackendError, Denoiser, DenoiserOutput, PromptCondition};
use anagram_core::guidance::{combined_estimate, DiffusionError, MultiViewTask, Reduction, SamplerKind};
use anagram_core::sampler::{sample, sample_from};
use anagram_core::schedule::NoiseSchedule;
use anagram_core::tensor::{Dims, ImageTensor};
use anagram_core::view::{BuildOptions, View, ViewSpec};
use std::collections::BTreeMap;

fn dims() -> Dims {
    Dims::new(1, 4, 4)
}

fn mixture() -> MixtureSpec {
    let d = dims();
    let comps: Vec<Component> = (0..4)
        .map(|k| Component { weight: 0.25, mean: ImageTensor::randn_seeded(d, 100 + k).scale(0.6), sigma: 0.15 })
        .collect();
    let mut cond = BTreeMap::new();
    cond.insert("a".to_string(), vec![0, 1]);
    cond.insert("b".to_string(), vec![2, 3]);
    cond.insert("neg_a".to_string(), vec![1]);
    MixtureSpec::new(comps, cond).unwrap()
}

fn view(spec: &str) -> View {
    spec.parse::<ViewSpec>().unwrap().build(dims(), &BuildOptions::default()).unwrap()
}

fn task(views: Vec<View>, prompts: &[&str], sampler: SamplerKind, guidance: f64) -> MultiViewTask {
    MultiViewTask {
        views,
        prompts: prompts.iter().map(|p| PromptCondition::new(*p)).collect(),
        guidance,
        reduction: Reduction::Mean,
        sampler,
        steps: 25,
        seed: 5,
    }
}

#[test]
fn single_view_equals_transformed_mixture() {
    let sched = NoiseSchedule::default();
    for spec in ["rotate:90", "flip:v", "pixel:seed=3", "negate", "rotate:90+negate", "ortho:5", "inner_rot:θ=45,r=1.5"] {
        let v = view(spec);
        for sampler in [SamplerKind::Ddim, SamplerKind::Ddpm] {
            let through_view = sample(&AnalyticDenoiser::new(mixture(), sched.clone()), &task(vec![v.clone()], &["a"], sampler, 3.0), &sched).unwrap();
            let moved = AnalyticDenoiser::new(mixture().transformed(&v.inverse_view()).unwrap(), sched.clone());
            let direct = sample(&moved, &task(vec![View::identity(dims())], &["a"], sampler, 3.0), &sched).unwrap();
            let err = through_view.x0_raw.max_abs_diff(&direct.x0_raw);
            // Stored dense matrices are orthogonal only up to f32 rounding.
            let tol = match v.dense_matrix() {
                Some(_) => 1e3 * v.orthogonality_residual(4096).unwrap(),
                None => 1e-8,
            };
            assert!(err < tol, "{spec} {sampler}: {err} (tolerance {tol})");
        }
    }
}

#[test]
fn ddim_is_equivariant_under_permutations() {
    let sched = NoiseSchedule::default();
    let den = AnalyticDenoiser::new(mixture(), sched.clone());
    let base = task(vec![View::identity(dims())], &["a"], SamplerKind::Ddim, 2.0);
    let x_t = ImageTensor::randn_seeded(dims(), 77);
    for spec in ["rotate:180", "skew:1", "patch:2,seed=1"] {
        let v = view(spec);
        let in_view = sample_from(&den, &task(vec![v.clone()], &["a"], SamplerKind::Ddim, 2.0), &sched, x_t.clone()).unwrap();
        let plain = sample_from(&den, &base, &sched, v.apply(&x_t).unwrap()).unwrap();
        let back = v.apply_inverse(&plain.x0_raw).unwrap();
        assert!(in_view.x0_raw.max_abs_diff(&back) < 1e-9, "{spec}");
    }
}

#[test]
fn agreeing_views_reduce_to_single_view() {
    let sched = NoiseSchedule::default();
    let mut mix = mixture();
    let negated = mix.transformed(&view("negate")).unwrap();
    let mut comps = mix.components().to_vec();
    comps.iter_mut().for_each(|c| c.weight /= 2.0);
    comps.extend(negated.components().iter().map(|c| Component { weight: c.weight / 2.0, ..c.clone() }));
    let mut cond = BTreeMap::new();
    cond.insert("a".to_string(), vec![0, 1]);
    cond.insert("minus_a".to_string(), vec![4, 5]);
    mix = MixtureSpec::new(comps, cond).unwrap();
    let den = AnalyticDenoiser::new(mix, sched.clone());
    for sampler in [SamplerKind::Ddim, SamplerKind::Ddpm] {
        let two = sample(&den, &task(vec![View::identity(dims()), view("negate")], &["a", "minus_a"], sampler, 1.0), &sched).unwrap();
        let one = sample(&den, &task(vec![View::identity(dims())], &["a"], sampler, 1.0), &sched).unwrap();
        assert!(two.x0_raw.max_abs_diff(&one.x0_raw) < 1e-9, "{sampler}");
    }
}

#[test]
fn repeated_identity_views_match_one_view() {
    let sched = NoiseSchedule::default();
    let den = AnalyticDenoiser::new(mixture(), sched.clone());
    let one = sample(&den, &task(vec![View::identity(dims())], &["b"], SamplerKind::Ddpm, 4.0), &sched).unwrap();
    for reduction in [Reduction::Mean, Reduction::Alternating] {
        let mut t = task(vec![View::identity(dims()); 3], &["b", "b", "b"], SamplerKind::Ddpm, 4.0);
        t.reduction = reduction;
        let three = sample(&den, &t, &sched).unwrap();
        assert!(three.x0_raw.max_abs_diff(&one.x0_raw) < 1e-12, "{reduction}");
    }
}

#[test]
fn generation_is_reproducible() {
    let sched = NoiseSchedule::default();
    let den = AnalyticDenoiser::new(mixture(), sched.clone());
    let t = task(vec![View::identity(dims()), view("rotate:90"), view("ortho:5")], &["a", "b", "a"], SamplerKind::Ddpm, 5.0);
    let first = sample(&den, &t, &sched).unwrap();
    for _ in 0..3 {
        let again = sample(&den, &t, &sched).unwrap();
        assert!(again.x0_raw.bit_eq(&first.x0_raw) && again.x0.bit_eq(&first.x0));
    }
    assert_eq!(first.trace.len(), 25);
    assert!(first.x0.data().iter().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn negative_prompt_replaces_null_condition() {
    let sched = NoiseSchedule::default();
    let den = AnalyticDenoiser::new(mixture(), sched.clone());
    let x = ImageTensor::randn_seeded(dims(), 3);
    let mut t = task(vec![View::identity(dims())], &["a"], SamplerKind::Ddim, 3.0);
    t.prompts[0] = PromptCondition::with_negative("a", "neg_a").unwrap();
    let est = combined_estimate(&den, &t, &x, 400, 1).unwrap().eps;
    let c = den.eps_at(Some("a"), &x, 400).unwrap();
    let u = den.eps_at(Some("neg_a"), &x, 400).unwrap();
    let expected = u.zip_map(&c, |u, c| u + 3.0 * (c - u)).unwrap();
    assert!(est.max_abs_diff(&expected) < 1e-14);
}

/// Returns ε̂ = 0 and a log-variance equal to the input, to expose how
/// log-variances are carried through views.
struct EchoVariance;

impl Denoiser for EchoVariance {
    fn id(&self) -> String {
        "echo-variance".into()
    }

    fn denoise(&self, x: &ImageTensor, _t: usize, _c: Option<&str>) -> Result<DenoiserOutput, BackendError> {
        Ok(DenoiserOutput::with_log_var(ImageTensor::zeros(x.dims()), x.clone()))
    }
}

#[test]
fn log_variance_follows_permutation_views() {
    let x = ImageTensor::randn_seeded(dims(), 8);
    let t = task(vec![view("rotate:90"), view("negate")], &["a", "b"], SamplerKind::Ddpm, 1.0);
    let out = combined_estimate(&EchoVariance, &t, &x, 10, 0).unwrap();
    let lv = out.log_var.unwrap();
    let rot = view("rotate:90");
    let from_rot = rot.apply_inverse(&rot.apply(&x).unwrap()).unwrap();
    let from_neg = x.map(|v| -v);
    let expected = from_rot.zip_map(&from_neg, |a, b| (a + b) / 2.0).unwrap();
    assert!(lv.max_abs_diff(&expected) < 1e-14);

    let dense = task(vec![view("ortho:5")], &["a"], SamplerKind::Ddpm, 1.0);
    assert!(matches!(combined_estimate(&EchoVariance, &dense, &x, 10, 0), Err(DiffusionError::View { index: 0, .. })));
}
