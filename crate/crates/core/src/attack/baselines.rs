//! Reference attacks that score each target directly, without an
//! out-distribution. All are oriented so that a higher score means member.

use super::{check_target_client, AttackContext, AttackMethod, TargetProfile};
use crate::error::{Error, Result};
use crate::fedsim::UpdateTrace;
use crate::model::LabeledSample;

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

fn score(method: AttackMethod, p: &TargetProfile, k: usize, rounds: usize) -> f64 {
    let last = rounds - 1;
    match method {
        AttackMethod::BlackboxLoss => -p.global_loss[rounds],
        AttackMethod::GradCosine => p.cosine.values[last][k],
        AttackMethod::GradNorm => -p.grad_norm.values[last][k],
        AttackMethod::LossSeries => -mean(p.global_loss[..rounds].iter().copied()),
        AttackMethod::AvgCosine => mean(p.cosine.values[..rounds].iter().map(|row| row[k])),
        AttackMethod::GradDiff => mean(p.grad_diff.values[..rounds].iter().map(|row| row[k])),
        AttackMethod::FedmiaI | AttackMethod::FedmiaIi => unreachable!("not a baseline"),
    }
}

/// Baseline scores computed from the first `rounds` rounds of each profile.
/// The "final" model of a prefix is the global model after its last round.
pub fn baseline_scores(
    method: AttackMethod,
    profiles: &[TargetProfile],
    target_client: usize,
    rounds: usize,
) -> Result<Vec<f64>> {
    if method.variant().is_some() {
        return Err(Error::param(format!("{} is not a baseline", method.label())));
    }
    let Some(first) = profiles.first() else {
        return Ok(Vec::new());
    };
    if rounds == 0 || rounds > first.num_rounds() {
        return Err(Error::param(format!("prefix of {rounds} rounds out of range")));
    }
    check_target_client(target_client, first.cosine.num_clients())?;
    Ok(profiles
        .iter()
        .map(|p| score(method, p, target_client, rounds))
        .collect())
}

/// All six baselines over the full trace, in [`AttackMethod::BASELINES`] order.
pub fn baselines(
    trace: &UpdateTrace,
    targets: &[LabeledSample],
    target_client: usize,
) -> Result<Vec<(AttackMethod, Vec<f64>)>> {
    check_target_client(target_client, trace.num_clients)?;
    let profiles = AttackContext::new(trace)?.profiles(targets)?;
    AttackMethod::BASELINES
        .iter()
        .map(|&m| Ok((m, baseline_scores(m, &profiles, target_client, trace.num_rounds())?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::tests::hand_trace;
    use super::*;
    use crate::model;

    fn two_round_trace() -> UpdateTrace {
        hand_trace(vec![
            vec![
                vec![0.3, -0.1, 0.2, 0.5],
                vec![-1.0, 2.0, 0.1, 0.0],
                vec![0.0, 0.4, 0.4, -0.9],
            ],
            vec![
                vec![1.3, 0.1, -0.2, 0.5],
                vec![0.2, 0.2, 0.1, 0.7],
                vec![-0.6, 0.4, 0.0, 0.3],
            ],
        ])
    }

    #[test]
    fn definitions_by_hand() {
        let trace = two_round_trace();
        let sample = LabeledSample::new(vec![0.5], 1);
        let out = baselines(&trace, std::slice::from_ref(&sample), 1).unwrap();
        let get = |m: AttackMethod| out.iter().find(|(x, _)| *x == m).unwrap().1[0];
        let spec = &trace.spec;
        let cos = super::super::measure(&trace, &sample, super::super::MeasurementKind::Cosine).unwrap();

        let final_loss = model::loss(spec, &trace.final_model, &sample).unwrap();
        assert_eq!(get(AttackMethod::BlackboxLoss), -final_loss);
        assert_eq!(get(AttackMethod::GradCosine), cos.values[1][1]);
        assert_eq!(get(AttackMethod::GradNorm), -trace.rounds[1].updates[1].norm());
        assert!((get(AttackMethod::AvgCosine) - (cos.values[0][1] + cos.values[1][1]) / 2.0).abs() < 1e-15);
        let l: Vec<f64> = trace
            .rounds
            .iter()
            .map(|r| model::loss(spec, &r.global_before, &sample).unwrap())
            .collect();
        assert!((get(AttackMethod::LossSeries) + (l[0] + l[1]) / 2.0).abs() < 1e-15);
        let diffs: Vec<f64> = trace
            .rounds
            .iter()
            .map(|r| {
                let g = model::grad_sample(spec, &r.global_before, &sample).unwrap();
                r.updates[1].iter().zip(g.iter()).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        assert!((get(AttackMethod::GradDiff) - (diffs[0] + diffs[1]) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_round_avg_cosine_is_grad_cosine() {
        let trace = two_round_trace().truncated(1).unwrap();
        let targets = vec![LabeledSample::new(vec![0.5], 1), LabeledSample::new(vec![-2.0], 0)];
        let out = baselines(&trace, &targets, 2).unwrap();
        let get = |m: AttackMethod| out.iter().find(|(x, _)| *x == m).unwrap().1.clone();
        assert_eq!(get(AttackMethod::AvgCosine), get(AttackMethod::GradCosine));
    }

    #[test]
    fn prefix_matches_truncated_trace() {
        let trace = two_round_trace();
        let targets = vec![LabeledSample::new(vec![0.5], 1), LabeledSample::new(vec![-2.0], 0)];
        let full = AttackContext::new(&trace).unwrap().profiles(&targets).unwrap();
        let short_trace = trace.truncated(1).unwrap();
        let short = AttackContext::new(&short_trace).unwrap().profiles(&targets).unwrap();
        for m in AttackMethod::BASELINES {
            assert_eq!(
                baseline_scores(m, &full, 0, 1).unwrap(),
                baseline_scores(m, &short, 0, 1).unwrap(),
                "{m}"
            );
        }
    }

    #[test]
    fn zero_loss_sample_tops_loss_series() {
        // a large class-0 bias rounds the loss of a class-0 sample to exactly 0
        let mut trace = two_round_trace();
        for r in &mut trace.rounds {
            r.global_before.0[2] = 40.0;
        }
        trace.final_model.0[2] = 40.0;
        let targets = vec![
            LabeledSample::new(vec![0.3], 1),
            LabeledSample::new(vec![0.1], 0),
            LabeledSample::new(vec![-0.4], 1),
        ];
        let profiles = AttackContext::new(&trace).unwrap().profiles(&targets).unwrap();
        let s = baseline_scores(AttackMethod::LossSeries, &profiles, 0, 2).unwrap();
        assert_eq!(s[1], 0.0);
        assert!(s.iter().all(|&v| v <= s[1]));
    }

    #[test]
    fn rejects_fedmia_and_bad_prefix() {
        let trace = two_round_trace();
        let profiles = AttackContext::new(&trace)
            .unwrap()
            .profiles(&[LabeledSample::new(vec![0.5], 1)])
            .unwrap();
        assert!(baseline_scores(AttackMethod::FedmiaIi, &profiles, 0, 2).is_err());
        assert!(baseline_scores(AttackMethod::GradNorm, &profiles, 0, 3).is_err());
        assert!(baseline_scores(AttackMethod::GradNorm, &profiles, 0, 0).is_err());
        assert!(baseline_scores(AttackMethod::GradNorm, &profiles, 5, 1).is_err());
    }
}
