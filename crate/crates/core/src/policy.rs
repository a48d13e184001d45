use crate::dataset::Transition;
use crate::env::{Action, Observation};

/// A controller that picks an MCS for each transmission.
///
/// `observe` is called with each transmission once its feedback time has
/// been reached, so a policy never sees an outcome earlier than a real
/// receiver would.
pub trait Policy {
    fn act(&mut self, obs: &Observation) -> Action;

    fn observe(&mut self, _tr: &Transition) {}
}

/// Stateless policy backed by a closure.
pub struct FnPolicy<F>(pub F);

impl<F: FnMut(&Observation) -> Action> Policy for FnPolicy<F> {
    fn act(&mut self, obs: &Observation) -> Action {
        (self.0)(obs)
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn act(&mut self, obs: &Observation) -> Action {
        (**self).act(obs)
    }

    fn observe(&mut self, tr: &Transition) {
        (**self).observe(tr)
    }
}
