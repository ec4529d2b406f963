use crate::model::{PlacementAction, SystemState};

/// Stationary placement rule mapping the joint state to an action.
///
/// Implementations write into `out`, which arrives sized to N and cleared.
pub trait PlacementPolicy {
    fn decide(&self, state: &SystemState, out: &mut PlacementAction);

    fn action(&self, state: &SystemState) -> PlacementAction {
        let mut out = PlacementAction::none(state.len());
        self.decide(state, &mut out);
        out
    }
}

impl<P: PlacementPolicy + ?Sized> PlacementPolicy for &P {
    fn decide(&self, state: &SystemState, out: &mut PlacementAction) {
        (**self).decide(state, out)
    }
}

impl<P: PlacementPolicy + ?Sized> PlacementPolicy for Box<P> {
    fn decide(&self, state: &SystemState, out: &mut PlacementAction) {
        (**self).decide(state, out)
    }
}

/// Adapts a closure returning the list of services to activate.
pub struct FnPolicy<F>(pub F);

impl<F> PlacementPolicy for FnPolicy<F>
where
    F: Fn(&SystemState) -> Vec<usize>,
{
    fn decide(&self, state: &SystemState, out: &mut PlacementAction) {
        for i in (self.0)(state) {
            out.set(i, true);
        }
    }
}

/// Activates every nonempty service whose queue exceeds its threshold,
/// ignoring capacity. Intended for single-service or uncoupled runs.
#[derive(Debug, Clone)]
pub struct ThresholdPlacement {
    thresholds: Vec<isize>,
}

impl ThresholdPlacement {
    pub fn new(thresholds: Vec<isize>) -> Self {
        ThresholdPlacement { thresholds }
    }
}

impl PlacementPolicy for ThresholdPlacement {
    fn decide(&self, state: &SystemState, out: &mut PlacementAction) {
        for (i, (&s, &r)) in state.queues().iter().zip(&self.thresholds).enumerate() {
            if s as isize > r {
                out.set(i, true);
            }
        }
    }
}
