//! The three fusion mechanisms: feature enhancement on CNN feature maps
//! ([`Fem`]), token enhancement inside the transformer stage ([`Tem`]) and
//! attention-guided fusion of the two modality streams ([`Agf`]).
//!
//! Every block is a description of its architecture plus a parameter-name
//! prefix; the tensors themselves live in a [`crate::params::ParamStore`].
//! Forward passes record onto a [`crate::graph::Graph`] so they are
//! differentiable end to end.

mod agf;
mod attention;
mod fem;
mod tem;

pub use agf::{Agf, AgfOutput, Direction};
pub use attention::{multi_head_attention, AttentionOutput};
pub use fem::{Fem, FemMode};
pub use tem::{Tem, TemOutput};

/// The two sensor modalities. Infrared is `x`, visible is `y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    Ir,
    Vis,
}

impl Modality {
    pub fn tag(self) -> &'static str {
        match self {
            Modality::Ir => "x",
            Modality::Vis => "y",
        }
    }
}
