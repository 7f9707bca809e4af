//! Flow-matching path construction and a guided Euler sampler.
//!
//! Convention: t = 0 is data, t = 1 is noise. The training path is the
//! straight line `x_t = (1-t) x0 + t eps`, whose constant velocity
//! `eps - x0` is the regression target. Sampling starts from a standard
//! normal draw at t = 1 and integrates `x <- x - dt * v(x, t, c)` down to
//! t = 0 with uniform steps.
//!
//! The model consumes a packed row `[x_t | t | c_img | c_text | null_flag]`;
//! classifier-free guidance combines the velocities under the real condition
//! and the all-zeros null condition.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::adapters::AdapterStack;
use crate::error::{Error, Result};
use crate::numcore::{Matrix, RngStream};
use crate::world::ConditionPair;

/// One point on the linear noising path, with everything recomputable.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPoint {
    pub x_t: Vec<f64>,
    pub t: f64,
    pub eps: Vec<f64>,
    pub velocity_target: Vec<f64>,
}

pub fn interpolate(x0: &[f64], eps: &[f64], t: f64) -> Result<PathPoint> {
    if x0.len() != eps.len() {
        return Err(Error::shape(
            "interpolate",
            format!("eps of length {}", x0.len()),
            format!("{}", eps.len()),
        ));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Invalid {
            key: "interpolate.t".to_string(),
            reason: format!("t = {t} outside [0, 1]"),
        });
    }
    let x_t = x0
        .iter()
        .zip(eps)
        .map(|(x, e)| (1.0 - t) * x + t * e)
        .collect();
    let velocity_target = eps.iter().zip(x0).map(|(e, x)| e - x).collect();
    Ok(PathPoint {
        x_t,
        t,
        eps: eps.to_vec(),
        velocity_target,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub steps: usize,
    pub guidance_scale: f64,
    /// Training-time probability of replacing the condition with the null
    /// condition; unused at sampling time.
    pub cond_dropout_p: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            steps: 28,
            guidance_scale: 3.5,
            cond_dropout_p: 0.1,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("sampler.steps", "must be >= 1"));
        }
        if !(self.guidance_scale.is_finite() && self.guidance_scale >= 0.0) {
            return Err(Error::invalid("sampler.guidance_scale", "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.cond_dropout_p) {
            return Err(Error::invalid("sampler.cond_dropout_p", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Fixed packing of model inputs: `[x_t | t | c_img | c_text | null_flag]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CondLayout {
    pub data_dim: usize,
    pub img_dim: usize,
    pub text_dim: usize,
}

impl CondLayout {
    pub fn new(data_dim: usize, img_dim: usize, text_dim: usize) -> Self {
        CondLayout {
            data_dim,
            img_dim,
            text_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.data_dim + 1 + self.img_dim + self.text_dim + 1
    }

    pub fn null_condition(&self) -> ConditionPair {
        ConditionPair::null(self.img_dim, self.text_dim)
    }

    fn check_cond(&self, cond: &ConditionPair) -> Result<()> {
        if cond.c_img.len() != self.img_dim || cond.c_text.len() != self.text_dim {
            return Err(Error::shape(
                "condition",
                format!("c_img {}, c_text {}", self.img_dim, self.text_dim),
                format!("c_img {}, c_text {}", cond.c_img.len(), cond.c_text.len()),
            ));
        }
        Ok(())
    }

    /// Packs per-example states, times, and conditions into one input batch.
    pub fn pack(&self, xs: &[&[f64]], ts: &[f64], conds: &[&ConditionPair]) -> Result<Matrix> {
        if xs.len() != ts.len() || xs.len() != conds.len() {
            return Err(Error::shape(
                "pack",
                format!("{} rows in every column", xs.len()),
                format!("ts {}, conds {}", ts.len(), conds.len()),
            ));
        }
        let n = xs.len();
        let dim = self.input_dim();
        let mut out = Matrix::zeros(n, dim);
        for i in 0..n {
            if xs[i].len() != self.data_dim {
                return Err(Error::shape(
                    "pack.x",
                    format!("{}", self.data_dim),
                    format!("{}", xs[i].len()),
                ));
            }
            self.check_cond(conds[i])?;
            let row = out.row_mut(i);
            row[..self.data_dim].copy_from_slice(xs[i]);
            row[self.data_dim] = ts[i];
            let img_off = self.data_dim + 1;
            row[img_off..img_off + self.img_dim].copy_from_slice(&conds[i].c_img);
            let text_off = img_off + self.img_dim;
            row[text_off..text_off + self.text_dim].copy_from_slice(&conds[i].c_text);
            row[dim - 1] = f64::from(conds[i].null_flag);
        }
        Ok(out)
    }
}

/// A velocity model: an adapter stack viewed through a fixed enabled set and
/// input layout.
pub struct CondModel<'a> {
    pub stack: &'a AdapterStack,
    pub layout: CondLayout,
    pub enabled: &'a BTreeSet<String>,
}

impl CondModel<'_> {
    /// Velocity for a batch of states at a shared time under per-row
    /// conditions.
    pub fn velocity_batch(&self, xs: &[&[f64]], t: f64, conds: &[&ConditionPair]) -> Result<Matrix> {
        let ts = vec![t; xs.len()];
        let input = self.layout.pack(xs, &ts, conds)?;
        self.stack.forward_with(self.enabled, &input)
    }

    /// Classifier-free guided velocity for one state.
    pub fn cfg_velocity(&self, x_t: &[f64], t: f64, cond: &ConditionPair, scale: f64) -> Result<Vec<f64>> {
        let null = self.layout.null_condition();
        if scale == 1.0 {
            let v = self.velocity_batch(&[x_t], t, &[cond])?;
            return Ok(v.row(0).to_vec());
        }
        if scale == 0.0 {
            let v = self.velocity_batch(&[x_t], t, &[&null])?;
            return Ok(v.row(0).to_vec());
        }
        let v_cond = self.velocity_batch(&[x_t], t, &[cond])?;
        let v_null = self.velocity_batch(&[x_t], t, &[&null])?;
        Ok(guided_velocity(v_cond.row(0), v_null.row(0), scale))
    }
}

/// `v_null + scale * (v_cond - v_null)`.
pub fn guided_velocity(v_cond: &[f64], v_null: &[f64], scale: f64) -> Vec<f64> {
    v_cond
        .iter()
        .zip(v_null)
        .map(|(c, n)| n + scale * (c - n))
        .collect()
}

/// Integrates `x <- x - dt * vel(x, t)` from t = 1 to 0 over uniform steps.
/// Rows of `init` are independent trajectories.
pub fn euler_integrate(
    init: Matrix,
    steps: usize,
    mut vel: impl FnMut(&Matrix, f64) -> Result<Matrix>,
) -> Result<Matrix> {
    if steps == 0 {
        return Err(Error::invalid("euler.steps", "must be >= 1"));
    }
    let dt = 1.0 / steps as f64;
    let mut x = init;
    for i in 0..steps {
        let t = 1.0 - i as f64 * dt;
        let v = vel(&x, t)?;
        if v.rows() != x.rows() || v.cols() != x.cols() {
            return Err(Error::shape(
                "euler velocity",
                format!("{} x {}", x.rows(), x.cols()),
                format!("{} x {}", v.rows(), v.cols()),
            ));
        }
        x.add_scaled(&v, -dt);
        if let Some(bad) = x.data().iter().position(|v| !v.is_finite()) {
            let _ = bad;
            return Err(Error::SamplerDiverged { step: i });
        }
    }
    Ok(x)
}

/// Draws one sample: noise from `rng`, then guided Euler integration. The
/// sample is a pure function of the stream, the condition, and the model.
pub fn euler_sample(
    model: &CondModel,
    cond: &ConditionPair,
    config: &SamplerConfig,
    rng: RngStream,
) -> Result<Vec<f64>> {
    let out = euler_sample_batch(model, std::slice::from_ref(cond), config, |_| rng)?;
    Ok(out.into_iter().next().expect("one condition in, one sample out"))
}

/// Draws one sample per condition. `stream_for(i)` supplies the rng stream
/// for row i's initial noise, so results are a pure function of the streams
/// and identical to sampling each row alone.
pub fn euler_sample_batch(
    model: &CondModel,
    conds: &[ConditionPair],
    config: &SamplerConfig,
    stream_for: impl Fn(usize) -> RngStream,
) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    let d = model.layout.data_dim;
    let n = conds.len();
    let init = {
        let mut m = Matrix::zeros(n, d);
        for i in 0..n {
            let mut rng = stream_for(i);
            rng.fill_standard_normal(m.row_mut(i));
        }
        m
    };
    let null = model.layout.null_condition();
    let null_refs: Vec<&ConditionPair> = vec![&null; n];
    let cond_refs: Vec<&ConditionPair> = conds.iter().collect();
    let scale = config.guidance_scale;
    let out = euler_integrate(init, config.steps, |x, t| {
        let rows: Vec<&[f64]> = (0..n).map(|i| x.row(i)).collect();
        if scale == 1.0 {
            return model.velocity_batch(&rows, t, &cond_refs);
        }
        if scale == 0.0 {
            return model.velocity_batch(&rows, t, &null_refs);
        }
        let v_cond = model.velocity_batch(&rows, t, &cond_refs)?;
        let v_null = model.velocity_batch(&rows, t, &null_refs)?;
        let mut v = v_null.clone();
        let delta = {
            let mut d = v_cond;
            d.add_scaled(&v_null, -1.0);
            d
        };
        v.add_scaled(&delta, scale);
        Ok(v)
    })?;
    Ok((0..n).map(|i| out.row(i).to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{Activation, MlpSpec};

    #[test]
    fn interpolation_endpoints_are_exact() {
        let mut rng = RngStream::root(1).split(0);
        for _ in 0..1000 {
            let x0: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
            let eps: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
            let p0 = interpolate(&x0, &eps, 0.0).unwrap();
            assert_eq!(p0.x_t, x0);
            let p1 = interpolate(&x0, &eps, 1.0).unwrap();
            assert_eq!(p1.x_t, eps);
        }
    }

    #[test]
    fn interpolation_hand_case() {
        let p = interpolate(&[1.0, 0.0], &[0.0, 2.0], 0.25).unwrap();
        assert_eq!(p.x_t, vec![0.75, 0.5]);
        assert_eq!(p.velocity_target, vec![-1.0, 2.0]);
    }

    #[test]
    fn interpolation_is_linear_in_inputs() {
        let mut rng = RngStream::root(2).split(0);
        for _ in 0..100 {
            let x0: Vec<f64> = (0..4).map(|_| rng.standard_normal()).collect();
            let eps: Vec<f64> = (0..4).map(|_| rng.standard_normal()).collect();
            let t = rng.next_f64();
            let alpha = 1.5;
            let p = interpolate(&x0, &eps, t).unwrap();
            let sx: Vec<f64> = x0.iter().map(|v| alpha * v).collect();
            let se: Vec<f64> = eps.iter().map(|v| alpha * v).collect();
            let ps = interpolate(&sx, &se, t).unwrap();
            for (a, b) in ps.x_t.iter().zip(&p.x_t) {
                assert!((a - alpha * b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn interpolation_rejects_bad_inputs() {
        assert!(interpolate(&[1.0], &[1.0, 2.0], 0.5).is_err());
        assert!(interpolate(&[1.0], &[1.0], 1.5).is_err());
        assert!(interpolate(&[1.0], &[1.0], -0.1).is_err());
    }

    #[test]
    fn guided_velocity_hand_cases() {
        let v_cond = [1.0, 0.0];
        let v_null = [0.0, 0.0];
        assert_eq!(guided_velocity(&v_cond, &v_null, 0.0), vec![0.0, 0.0]);
        assert_eq!(guided_velocity(&v_cond, &v_null, 1.0), vec![1.0, 0.0]);
        assert_eq!(guided_velocity(&v_cond, &v_null, 3.5), vec![3.5, 0.0]);
    }

    #[test]
    fn guidance_is_affine_in_scale() {
        let mut rng = RngStream::root(3).split(0);
        let v_cond: Vec<f64> = (0..5).map(|_| rng.standard_normal()).collect();
        let v_null: Vec<f64> = (0..5).map(|_| rng.standard_normal()).collect();
        let at = |s: f64| guided_velocity(&v_cond, &v_null, s);
        let (a, b, c) = (at(0.5), at(2.0), at(3.5));
        // Equispaced scales: c - b == b - a for an affine map.
        for i in 0..5 {
            assert!(((c[i] - b[i]) - (b[i] - a[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_field_integrates_back_to_data() {
        let x0 = vec![0.7, -1.2, 3.0];
        let eps = vec![0.1, 0.4, -2.0];
        let v: Vec<f64> = eps.iter().zip(&x0).map(|(e, x)| e - x).collect();
        for steps in [1usize, 4, 7, 28] {
            let init = Matrix::from_vec(1, 3, eps.clone()).unwrap();
            let vmat = Matrix::from_vec(1, 3, v.clone()).unwrap();
            let out = euler_integrate(init, steps, |_, _| Ok(vmat.clone())).unwrap();
            for (got, want) in out.row(0).iter().zip(&x0) {
                assert!((got - want).abs() < 1e-12, "steps {steps}");
            }
        }
    }

    #[test]
    fn one_step_is_single_euler_update() {
        let init = Matrix::from_vec(1, 2, vec![0.5, -0.25]).unwrap();
        let out = euler_integrate(init.clone(), 1, |x, t| {
            assert_eq!(t, 1.0);
            let mut v = x.clone();
            v.scale(2.0);
            Ok(v)
        })
        .unwrap();
        // x - 1.0 * (2x) = -x.
        assert_eq!(out.row(0), &[-0.5, 0.25]);
    }

    #[test]
    fn divergence_reports_step_index() {
        let init = Matrix::from_vec(1, 1, vec![0.0]).unwrap();
        let err = euler_integrate(init, 10, |x, _| {
            let mut v = x.clone();
            v.set(0, 0, f64::NAN);
            Ok(v)
        })
        .unwrap_err();
        match err {
            Error::SamplerDiverged { step } => assert_eq!(step, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pack_layout_is_exact() {
        let layout = CondLayout::new(2, 2, 1);
        assert_eq!(layout.input_dim(), 7);
        let cond = ConditionPair::new(vec![0.5, -0.5], vec![2.0]);
        let x = [1.0, -1.0];
        let m = layout.pack(&[&x], &[0.25], &[&cond]).unwrap();
        assert_eq!(m.row(0), &[1.0, -1.0, 0.25, 0.5, -0.5, 2.0, 0.0]);
        let null = layout.null_condition();
        let m = layout.pack(&[&x], &[0.25], &[&null]).unwrap();
        assert_eq!(m.row(0), &[1.0, -1.0, 0.25, 0.0, 0.0, 0.0, 1.0]);
        // Wrong condition width is caught.
        let bad = ConditionPair::new(vec![0.5], vec![2.0]);
        assert!(layout.pack(&[&x], &[0.25], &[&bad]).is_err());
    }

    fn tiny_model_stack(seed: u64, layout: CondLayout) -> AdapterStack {
        let spec = MlpSpec::new(layout.input_dim(), vec![8], layout.data_dim, Activation::Tanh).unwrap();
        let mut rng = RngStream::root(seed).split(0);
        AdapterStack::init(spec, &mut rng).unwrap()
    }

    #[test]
    fn sampling_is_deterministic_and_batch_consistent() {
        let layout = CondLayout::new(2, 0, 1);
        let stack = tiny_model_stack(5, layout);
        let enabled = BTreeSet::new();
        let model = CondModel {
            stack: &stack,
            layout,
            enabled: &enabled,
        };
        let cond = ConditionPair::new(vec![], vec![1.0]);
        let config = SamplerConfig {
            steps: 8,
            guidance_scale: 2.0,
            cond_dropout_p: 0.1,
        };
        let base = RngStream::root(99).split(0);
        let one = euler_sample(&model, &cond, &config, base.split(3)).unwrap();
        let again = euler_sample(&model, &cond, &config, base.split(3)).unwrap();
        assert_eq!(one, again);
        // Batch of 4 bitwise matches per-sample calls on the same streams.
        let conds = vec![cond.clone(); 4];
        let batch = euler_sample_batch(&model, &conds, &config, |i| base.split(i as u64)).unwrap();
        for (i, row) in batch.iter().enumerate() {
            let single = euler_sample(&model, &cond, &config, base.split(i as u64)).unwrap();
            assert_eq!(row, &single);
        }
    }

    #[test]
    fn cfg_shortcut_matches_full_combination() {
        let layout = CondLayout::new(2, 1, 1);
        let stack = tiny_model_stack(7, layout);
        let enabled = BTreeSet::new();
        let model = CondModel {
            stack: &stack,
            layout,
            enabled: &enabled,
        };
        let cond = ConditionPair::new(vec![0.3], vec![-0.7]);
        let x = [0.2, -0.4];
        let v1 = model.cfg_velocity(&x, 0.5, &cond, 1.0).unwrap();
        let v_cond = model.velocity_batch(&[&x], 0.5, &[&cond]).unwrap();
        assert_eq!(v1, v_cond.row(0));
        let v0 = model.cfg_velocity(&x, 0.5, &cond, 0.0).unwrap();
        let null = layout.null_condition();
        let v_null = model.velocity_batch(&[&x], 0.5, &[&null]).unwrap();
        assert_eq!(v0, v_null.row(0));
        let v35 = model.cfg_velocity(&x, 0.5, &cond, 3.5).unwrap();
        for i in 0..2 {
            let want = v_null.row(0)[i] + 3.5 * (v_cond.row(0)[i] - v_null.row(0)[i]);
            assert!((v35[i] - want).abs() < 1e-12);
        }
    }
}
