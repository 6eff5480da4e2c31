//! Layer stacks, parameter stores and the three networks: the
//! domain-conditioned generator, the domain-conditioned discriminator with
//! its feature tap, and the classifier head.

mod domain;
mod nets;
mod params;
mod spec;

pub use domain::{inject_domain, inject_domains, DomainVar, InjectKind, DOMAINS};
pub use nets::{
    ClassifierHead, DiscForward, DiscriminatorNet, GenForward, GeneratorNet, Mode, PairForward, Taps, BN_MOMENTUM,
    DISC_FEATURES, GEN_FIRST_LAYER,
};
pub use params::{Bound, GradMap, ParamStore};
pub use spec::{Activation, Block, ClassifierSpec, DiscriminatorSpec, GeneratorSpec, LayerKind, SampleShape, INIT_STD};
