use crate::model::{Decision, DecisionSource};

use super::DecoderParams;

/// SSVEP-first fusion with P300 as the fallback.
///
/// A confident SSVEP decision stands. Otherwise a confident P300 decision
/// replaces it. If neither is confident the SSVEP class is kept and flagged.
/// The fused decision carries the SSVEP scores and, when present, the P300
/// scores as `secondary_scores`.
pub fn fuse(ssvep: &Decision, p300: Option<&Decision>, params: &DecoderParams) -> Decision {
    let (class_id, margin, low_confidence) = if ssvep.margin >= params.fusion_margin_ssvep {
        (ssvep.class_id, ssvep.margin, false)
    } else {
        match p300 {
            Some(p) if p.margin >= params.fusion_margin_p300 => (p.class_id, p.margin, false),
            _ => (ssvep.class_id, ssvep.margin, true),
        }
    };
    Decision {
        class_id,
        scores: ssvep.scores.clone(),
        margin,
        source: DecisionSource::Fused,
        low_confidence,
        secondary_scores: p300.map(|p| p.scores.clone()),
    }
}
