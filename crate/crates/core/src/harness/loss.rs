use crate::calibration::SCORE_FLOOR;
use crate::distribution::ProposalGroup;

/// Mean over every proposal of every group of `-ln(score)`, scores floored.
pub fn cls_loss(groups: &[ProposalGroup]) -> f64 {
    let (sum, count) = groups
        .iter()
        .flat_map(|g| g.scores.iter())
        .fold((0.0, 0usize), |(s, n), &x| (s - x.max(SCORE_FLOOR).ln(), n + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// `l_cls + l_reg + γ·l_est + λ·l_aug`.
pub fn total_loss(l_cls: f64, l_reg: f64, l_est: f64, l_aug: f64, gamma: f64, lambda: f64) -> f64 {
    l_cls + l_reg + gamma * l_est + lambda * l_aug
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoxCorners;
    use approx::assert_relative_eq;

    fn group(scores: Vec<f64>) -> ProposalGroup {
        let b = BoxCorners::from_array([0., 0., 1., 1.]).unwrap();
        ProposalGroup::new(vec![b; scores.len()], vec![b; scores.len()], scores, 1, 0).unwrap()
    }

    #[test]
    fn cls_loss_examples() {
        assert_eq!(cls_loss(&[group(vec![1.0, 1.0])]), 0.0);
        let g = group(vec![1.0, (-1f64).exp()]);
        assert_relative_eq!(cls_loss(std::slice::from_ref(&g)), 0.5, max_relative = 1e-12);
        assert_relative_eq!(cls_loss(&[g.clone(), g]), 0.5, max_relative = 1e-12);
        assert!(cls_loss(&[group(vec![0.0])]).is_finite());
        assert_eq!(cls_loss(&[]), 0.0);
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(0., 0., 0., 0., 0.3, 0.1), 0.0);
        assert_relative_eq!(total_loss(1., 1., 1., 1., 0.3, 0.1), 2.4, max_relative = 1e-12);
        assert_eq!(total_loss(0.7, 0.2, 5.0, 9.0, 0.0, 0.0), 0.7 + 0.2);
    }
}
