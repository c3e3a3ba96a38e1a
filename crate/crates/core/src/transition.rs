/// One step `(s, a, r, s′)` of a behavior stream.
///
/// `terminal` marks an absorbing goal: no bootstrapping from `next_state`.
/// Episodes cut by a time limit are not terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<S> {
    pub state: S,
    pub action: usize,
    pub reward: f64,
    pub next_state: S,
    pub terminal: bool,
}
