use crate::geometry::BoxCorners;

/// Proposal-to-ground-truth assignment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment {
    /// Proposal indices per ground truth, in input order.
    pub members: Vec<Vec<usize>>,
    /// Proposals below the threshold for every ground truth.
    pub background: Vec<usize>,
}

impl Assignment {
    /// Group boxes for ground truth `gt`: the ground-truth box first, then its
    /// members. Members identical to the ground-truth box are not repeated.
    pub fn group_boxes(&self, gt: usize, proposals: &[BoxCorners], gts: &[BoxCorners]) -> Vec<BoxCorners> {
        std::iter::once(gts[gt])
            .chain(self.members[gt].iter().map(|&j| proposals[j]).filter(|p| *p != gts[gt]))
            .collect()
    }
}

/// Each proposal joins the ground truth it overlaps most, provided that IoU
/// reaches `iou_threshold`. Ties go to the lower ground-truth index.
pub fn assign_proposals(proposals: &[BoxCorners], gts: &[BoxCorners], iou_threshold: f64) -> Assignment {
    let mut out = Assignment {
        members: vec![Vec::new(); gts.len()],
        background: Vec::new(),
    };
    for (j, p) in proposals.iter().enumerate() {
        let best = gts.iter().enumerate().map(|(i, g)| (i, p.iou(g))).fold(
            None,
            |acc: Option<(usize, f64)>, (i, v)| match acc {
                Some((_, bv)) if bv >= v => acc,
                _ => Some((i, v)),
            },
        );
        match best {
            Some((i, v)) if v >= iou_threshold => out.members[i].push(j),
            _ => out.background.push(j),
        }
    }
    out
}
