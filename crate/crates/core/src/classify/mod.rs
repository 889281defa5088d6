//! Body/tail membership: the vote-based classifier, a spatial membership
//! surface for unobserved locations, and confusion-matrix metrics.

mod field;
mod metrics;
mod mh;

pub use field::{
    fit_membership_field, predict_membership, MembershipField, MembershipFieldConfig, MembershipPrior,
};
pub use metrics::{classification_metrics, ClassificationReport};
pub use mh::{
    classify_mh, classify_with_fits, empirical_quantile, ComponentFits, Membership, MembershipLabels,
};
