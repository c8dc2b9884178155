//! Byzantine submission generators.
//!
//! The omniscient attacks (ALIE, IPM, ROP) see the current benign momenta
//! through [`RoundKnowledge`] and every Byzantine client submits the same
//! vector. Bit-flip and label-flip are local: each Byzantine client runs its
//! own (poisoned) momentum update.

use log::warn;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::client::{check_beta, ClientState, Role};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::vecmath::{orthogonal_rejection, ParamVector, NORM_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    None,
    Alie,
    Ipm,
    Rop,
    Bitflip,
    Labelflip,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Perturbation scale; `None` means 1.0. Pass `alie_zmax(k, k_m)` for
    /// the supporter-quantile scale.
    pub z: Option<f64>,
    /// ROP target interpolation between reference and benign mean.
    pub lambda: f64,
    /// ROP relocation weight on the reference point.
    pub rho: f64,
    pub angle_deg: f64,
    /// IPM inversion scale (written as delta in some derivations).
    pub epsilon: f64,
    /// Alternate the ALIE perturbation sign on odd rounds.
    pub alternate_sign: bool,
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self {
            kind: AttackKind::None,
            z: None,
            lambda: 0.9,
            rho: 1.0,
            angle_deg: 90.0,
            epsilon: 0.2,
            alternate_sign: false,
        }
    }
}

impl AttackSpec {
    pub fn of(kind: AttackKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.lambda) || !unit.contains(&self.rho) {
            return Err(Error::invalid("rop lambda and rho must lie in [0, 1]"));
        }
        if !(0.0..=360.0).contains(&self.angle_deg) {
            return Err(Error::invalid("rop angle must lie in [0, 360] degrees"));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("ipm epsilon must be finite and >= 0"));
        }
        if let Some(z) = self.z {
            if !z.is_finite() {
                return Err(Error::invalid("attack z must be finite"));
            }
        }
        Ok(())
    }
}

/// What the omniscient adversary knows at round `t`.
#[derive(Debug, Clone)]
pub struct RoundKnowledge {
    pub t: usize,
    pub benign_mean: ParamVector,
    pub benign_std: ParamVector,
    /// The server's previous aggregate, or `None` when the adversary has no
    /// estimate of it yet (ROP then uses the benign mean as reference).
    pub prev_aggregate: Option<ParamVector>,
    pub eta: f64,
    pub k: usize,
    pub k_m: usize,
}

fn standard_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Largest z with Phi(z) below the supporter quantile.
pub fn alie_zmax(k: usize, k_m: usize) -> Result<f64> {
    if k_m == 0 || k_m >= k {
        return Err(Error::invalid(format!("alie needs 1 <= k_m < k (k = {k}, k_m = {k_m})")));
    }
    let honest = (k - k_m) as f64;
    let supporters = (k / 2 + 1) as f64 - k_m as f64;
    let q = (honest - supporters) / honest;
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid(format!(
            "degenerate supporter count: s = {supporters}, quantile {q} outside (0, 1)"
        )));
    }
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if standard_normal_cdf(mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn alie(kn: &RoundKnowledge, z: f64, alternate: bool) -> ParamVector {
    let z_eff = if !alternate || kn.t.is_multiple_of(2) { z } else { -z };
    kn.benign_mean.combine(1.0, &kn.benign_std, -z_eff)
}

pub fn ipm(kn: &RoundKnowledge, epsilon: f64) -> ParamVector {
    kn.benign_mean.scaled(-epsilon)
}

/// Relocated orthogonal perturbation.
pub fn rop(kn: &RoundKnowledge, z: f64, lambda: f64, rho: f64, angle_deg: f64) -> Result<ParamVector> {
    let d = kn.benign_mean.dim();
    let reference = kn.prev_aggregate.as_ref().unwrap_or(&kn.benign_mean);
    let target = reference.combine(lambda, &kn.benign_mean, 1.0 - lambda);
    let ones = ParamVector::filled(d, 1.0);
    let direction = rop_direction(&ones, &target, angle_deg.to_radians())?;
    let mut out = reference.combine(rho, &kn.benign_mean, 1.0 - rho);
    out.axpy(z, &direction);
    Ok(out)
}

/// Unit attack direction at `angle` from `target`, rotating towards the part
/// of `p` orthogonal to `target`.
fn rop_direction(p: &ParamVector, target: &ParamVector, angle: f64) -> Result<ParamVector> {
    let target_norm = target.norm();
    if target_norm <= NORM_EPS {
        warn!("rop: target has zero norm, falling back to the all-ones direction");
        return Ok(p.scaled(1.0 / p.norm()));
    }
    let (_, mut orth) = orthogonal_rejection(p, target)?;
    if orth.norm() <= NORM_EPS {
        warn!("rop: target is parallel to the all-ones vector, rotating towards e1 instead");
        let (_, e1_orth) = orthogonal_rejection(&ParamVector::basis(p.dim(), 0), target)?;
        orth = e1_orth;
    }
    let orth_norm = orth.norm();
    let unit_target = target.scaled(1.0 / target_norm);
    if orth_norm <= NORM_EPS {
        // one-dimensional model: no orthogonal complement
        return Ok(unit_target.scaled(angle.cos()));
    }
    Ok(orth.combine(angle.sin() / orth_norm, &unit_target, angle.cos()))
}

/// Momentum update on the negated gradient.
pub fn bit_flip(own_gradient: &ParamVector, state: &mut ClientState, beta: f64) -> ParamVector {
    state.fold_gradient(&own_gradient.scaled(-1.0), beta)
}

/// Inputs Byzantine clients need to imitate an honest local step.
pub struct HonestContext<'a> {
    pub global: &'a ParamVector,
    pub beta: f64,
    pub batch_size: usize,
    pub model: &'a ModelSpec,
    pub data: &'a Dataset,
    /// Label-flipped copy of the training data (label-flip attack only).
    pub flipped: Option<&'a Dataset>,
}

/// One submission per Byzantine client, in the order of `byzantine`.
pub fn dispatch(
    spec: &AttackSpec,
    kn: &RoundKnowledge,
    byzantine: &mut [ClientState],
    ctx: &HonestContext<'_>,
) -> Result<Vec<ParamVector>> {
    if let Some(c) = byzantine.iter().find(|c| c.role() != Role::Byzantine) {
        return Err(Error::invalid(format!("client {} is not byzantine", c.id())));
    }
    check_beta(ctx.beta)?;
    let n = byzantine.len();
    let shared = |v: ParamVector| vec![v; n];
    match spec.kind {
        AttackKind::None => byzantine
            .iter_mut()
            .map(|c| c.honest_step(ctx.global, ctx.beta, ctx.batch_size, ctx.model, ctx.data))
            .collect(),
        AttackKind::Labelflip => {
            let flipped = ctx
                .flipped
                .ok_or_else(|| Error::invalid("label-flip attack needs the flipped dataset"))?;
            byzantine
                .iter_mut()
                .map(|c| c.honest_step(ctx.global, ctx.beta, ctx.batch_size, ctx.model, flipped))
                .collect()
        }
        AttackKind::Bitflip => byzantine
            .iter_mut()
            .map(|c| {
                let g = c.sample_gradient(ctx.global, ctx.batch_size, ctx.model, ctx.data)?;
                Ok(bit_flip(&g, c, ctx.beta))
            })
            .collect(),
        AttackKind::Alie => {
            Ok(shared(alie(kn, spec.z.unwrap_or(1.0), spec.alternate_sign)))
        }
        AttackKind::Ipm => Ok(shared(ipm(kn, spec.epsilon))),
        AttackKind::Rop => {
            let v = rop(kn, spec.z.unwrap_or(1.0), spec.lambda, spec.rho, spec.angle_deg)?;
            Ok(shared(v))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecmath::{cosine_similarity, index_stats};

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn knowledge(t: usize, mean: &[f64], std: &[f64], prev: &[f64]) -> RoundKnowledge {
        RoundKnowledge {
            t,
            benign_mean: pv(mean),
            benign_std: pv(std),
            prev_aggregate: Some(pv(prev)),
            eta: 0.1,
            k: 25,
            k_m: 5,
        }
    }

    fn close(a: &ParamVector, b: &[f64], tol: f64) -> bool {
        a.as_slice().iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    // Quantile oracle independent of erf: Simpson integration of the
    // normal density from 0 and bisection on the result.
    fn phi_by_quadrature(z: f64) -> f64 {
        let n = 2000;
        let h = z / n as f64;
        let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = pdf(0.0) + pdf(z);
        for i in 1..n {
            s += pdf(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        0.5 + s * h / 3.0
    }

    fn quantile_oracle(q: f64) -> f64 {
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if phi_by_quadrature(mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn zmax_matches_quadrature_oracle() {
        let oracle = quantile_oracle(0.6);
        assert!((oracle - 0.25335).abs() < 1e-4);
        assert!((alie_zmax(25, 5).unwrap() - oracle).abs() < 1e-9);

        let oracle = quantile_oracle(4.0 / 6.0);
        assert!((oracle - 0.43073).abs() < 1e-4);
        assert!((alie_zmax(10, 4).unwrap() - oracle).abs() < 1e-9);

        // k = 8, k_m = 2: s = 3, q = 3/6
        assert!(alie_zmax(8, 2).unwrap().abs() < 1e-12);
        let q = standard_normal_cdf(alie_zmax(25, 5).unwrap());
        assert!((q - 0.6).abs() <= 1e-10);
    }

    #[test]
    fn zmax_rejects_degenerate_counts() {
        assert!(alie_zmax(10, 0).is_err());
        assert!(alie_zmax(10, 10).is_err());
        // k = 4, k_m = 3: s = 0, q = 1
        assert!(alie_zmax(4, 3).is_err());
        // k = 3, k_m = 1: s = 1, q = 1/2 is fine
        assert!(alie_zmax(3, 1).is_ok());
    }

    #[test]
    fn alie_examples() {
        let kn = knowledge(2, &[0.0, 0.0], &[1.0, 2.0], &[0.0, 0.0]);
        assert_eq!(alie(&kn, 0.25, false), pv(&[-0.25, -0.5]));
        let kn = knowledge(2, &[0.3, -1.0], &[0.0, 0.0], &[0.0, 0.0]);
        assert_eq!(alie(&kn, 0.25, false), pv(&[0.3, -1.0]));

        let odd = knowledge(1, &[1.0, 1.0], &[1.0, 2.0], &[0.0, 0.0]);
        let even = knowledge(2, &[1.0, 1.0], &[1.0, 2.0], &[0.0, 0.0]);
        let d1 = alie(&odd, 0.5, true).sub(&odd.benign_mean);
        let d2 = alie(&even, 0.5, true).sub(&even.benign_mean);
        assert_eq!(d1, d2.scaled(-1.0));
    }

    #[test]
    fn ipm_examples() {
        let kn = knowledge(3, &[1.0, -2.0], &[0.0, 0.0], &[0.0, 0.0]);
        assert!(close(&ipm(&kn, 0.2), &[-0.2, 0.4], 1e-15));
        assert_eq!(ipm(&kn, 0.0), pv(&[-0.0, 0.0]));
        assert_eq!(ipm(&kn, 1.0), pv(&[-1.0, 2.0]));
    }

    #[test]
    fn rop_first_round_trace() {
        // no reference estimate at t = 1: the benign mean stands in
        let kn = RoundKnowledge {
            prev_aggregate: None,
            ..knowledge(1, &[1.0, 0.0], &[0.0, 0.0], &[0.0, 0.0])
        };
        let attack = rop(&kn, 1.0, 0.9, 1.0, 90.0).unwrap();
        assert!(close(&attack, &[1.0, 1.0], 1e-15));
        assert!((attack.sub(&kn.benign_mean).norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rop_half_turn_is_scaled_inversion() {
        let kn = knowledge(4, &[0.5, -0.2, 0.1], &[0.0; 3], &[2.0, 1.0, -2.0]);
        let attack = rop(&kn, 1.0, 1.0, 1.0, 180.0).unwrap();
        let m = kn.prev_aggregate.as_ref().unwrap();
        let expect = m.scaled(1.0 - 1.0 / m.norm());
        assert!(close(&attack, expect.as_slice(), 1e-12));
    }

    #[test]
    fn rop_right_angle_is_orthogonal_to_target() {
        let kn = knowledge(5, &[0.4, -0.3, 0.9, 0.2], &[0.0; 4], &[0.1, 0.7, -0.2, 0.3]);
        for (lambda, rho) in [(0.9, 1.0), (0.5, 0.3), (0.0, 0.0)] {
            let attack = rop(&kn, 1.7, lambda, rho, 90.0).unwrap();
            let prev = kn.prev_aggregate.as_ref().unwrap();
            let base = prev.combine(rho, &kn.benign_mean, 1.0 - rho);
            let target = prev.combine(lambda, &kn.benign_mean, 1.0 - lambda);
            let pert = attack.sub(&base);
            assert!(cosine_similarity(&pert, &target).unwrap().abs() < 1e-9);
            assert!((pert.norm() - 1.7).abs() < 1e-12);
        }
    }

    #[test]
    fn rop_degenerate_fallbacks() {
        // zero target: all-ones direction
        let kn = knowledge(2, &[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]);
        let attack = rop(&kn, 1.0, 0.9, 1.0, 90.0).unwrap();
        let r = 1.0 / 2f64.sqrt();
        assert!(close(&attack, &[r, r], 1e-15));

        // target parallel to ones: rotate towards e1's orthogonal part
        let kn = knowledge(2, &[1.0, 1.0], &[0.0, 0.0], &[1.0, 1.0]);
        let attack = rop(&kn, 1.0, 0.9, 1.0, 90.0).unwrap();
        assert!(close(&attack, &[1.0 + r, 1.0 - r], 1e-12));
        assert!(attack.is_finite());
    }

    fn blob_context() -> (ModelSpec, Dataset, ParamVector) {
        let ds = crate::data::generate_blobs(3, 20, 3, 0.4, 4).unwrap();
        let spec = ModelSpec::logreg(3, 3);
        (spec, ds, spec.init_params())
    }

    #[test]
    fn bit_flip_examples() {
        let mut c = ClientState::new(0, Role::Byzantine, 2, vec![0], 1);
        assert_eq!(bit_flip(&pv(&[1.0, -2.0]), &mut c, 0.0), pv(&[-1.0, 2.0]));
        let mut c = ClientState::new(0, Role::Byzantine, 2, vec![0], 1);
        assert!(close(&bit_flip(&pv(&[1.0, 0.0]), &mut c, 0.9), &[-0.1, 0.0], 1e-15));
    }

    #[test]
    fn bit_flip_twice_recovers_honest_step() {
        let (spec, ds, p) = blob_context();
        let mut honest = ClientState::new(2, Role::Benign, p.dim(), (0..60).collect(), 5);
        let mut flipper = ClientState::new(2, Role::Byzantine, p.dim(), (0..60).collect(), 5);
        let expect = honest.local_step(&p, 0.5, 10, &spec, &ds).unwrap();
        let g = flipper.sample_gradient(&p, 10, &spec, &ds).unwrap();
        let got = bit_flip(&g.scaled(-1.0), &mut flipper, 0.5);
        assert_eq!(got, expect);
    }

    fn byzantines(dim: usize, n: usize) -> Vec<ClientState> {
        (0..n)
            .map(|i| ClientState::new(20 + i, Role::Byzantine, dim, (i * 10..i * 10 + 10).collect(), 3))
            .collect()
    }

    #[test]
    fn dispatch_routes() {
        let (spec, ds, p) = blob_context();
        let ctx = HonestContext {
            global: &p,
            beta: 0.9,
            batch_size: 4,
            model: &spec,
            data: &ds,
            flipped: None,
        };
        let benign: Vec<ParamVector> = (0..4)
            .map(|i| pv(&(0..p.dim()).map(|j| ((i * 7 + j) % 5) as f64 - 2.0).collect::<Vec<_>>()))
            .collect();
        let (mean, std) = index_stats(&benign).unwrap();
        let kn = RoundKnowledge {
            t: 3,
            benign_mean: mean,
            benign_std: std,
            prev_aggregate: Some(ParamVector::filled(p.dim(), 0.05)),
            eta: 0.1,
            k: 6,
            k_m: 2,
        };

        // none: same as honest steps on clones
        let mut byz = byzantines(p.dim(), 2);
        let mut shadow = byz.clone();
        let subs = dispatch(&AttackSpec::of(AttackKind::None), &kn, &mut byz, &ctx).unwrap();
        for (s, c) in subs.iter().zip(shadow.iter_mut()) {
            assert_eq!(s, &c.honest_step(&p, 0.9, 4, &spec, &ds).unwrap());
        }

        let subs = dispatch(&AttackSpec::of(AttackKind::Alie), &kn, &mut byzantines(p.dim(), 2), &ctx).unwrap();
        assert_eq!(subs.len(), 2);
        assert_eq!(subs[0], subs[1]);
        assert_eq!(subs[0], alie(&kn, 1.0, false));

        let subs = dispatch(&AttackSpec::of(AttackKind::Rop), &kn, &mut byzantines(p.dim(), 2), &ctx).unwrap();
        assert_eq!(subs[0], rop(&kn, 1.0, 0.9, 1.0, 90.0).unwrap());

        let subs = dispatch(&AttackSpec::of(AttackKind::Ipm), &kn, &mut byzantines(p.dim(), 2), &ctx).unwrap();
        assert_eq!(subs[1], ipm(&kn, 0.2));

        // label flip without the flipped data is a configuration error
        assert!(dispatch(&AttackSpec::of(AttackKind::Labelflip), &kn, &mut byzantines(p.dim(), 2), &ctx).is_err());
        let flipped = crate::data::flip_labels(&ds);
        let ctx = HonestContext {
            flipped: Some(&flipped),
            ..ctx
        };
        let subs = dispatch(&AttackSpec::of(AttackKind::Labelflip), &kn, &mut byzantines(p.dim(), 2), &ctx).unwrap();
        let mut shadow = byzantines(p.dim(), 2);
        assert_eq!(subs[0], shadow[0].honest_step(&p, 0.9, 4, &spec, &flipped).unwrap());

        // benign clients cannot be dispatched
        let mut wrong = vec![ClientState::new(0, Role::Benign, p.dim(), vec![0], 1)];
        assert!(dispatch(&AttackSpec::of(AttackKind::Ipm), &kn, &mut wrong, &ctx).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(AttackSpec::default().validate().is_ok());
        let bad = AttackSpec {
            lambda: 1.5,
            ..AttackSpec::default()
        };
        assert!(bad.validate().is_err());
        let bad = AttackSpec {
            angle_deg: 400.0,
            ..AttackSpec::default()
        };
        assert!(bad.validate().is_err());
    }
}
