//! TD, temporal-consistency and imitation losses, and the learner loop:
//! sample a mixed batch, step Adam on the summed loss, write back priorities,
//! refresh the target snapshot every `target_update_period` steps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{clip_global_norm, huber, huber_grad, AdamConfig, AdamState, Architecture, ForwardCache, Network, ParamSnapshot};
use crate::qtable::argmax;
use crate::replay::{sample_batch, SampledBatch, SharedBuffer, Source, Transition};
use crate::scalar::Scalar;
use crate::transform::{TransformParams, ValueTransform};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub batch_size: usize,
    pub target_update_period: u64,
    pub gamma: f64,
    /// Imitation margin `lambda`.
    pub margin: f64,
    pub max_grad_norm: f64,
    pub adam: AdamConfig,
    /// Pick the bootstrap action with the online network instead of the target.
    pub double_dqn: bool,
    pub transform: TransformParams,
    pub use_transform: bool,
    pub use_tc: bool,
    pub use_im: bool,
    pub use_expert_data: bool,
    /// Write back `huber(delta)` as the new priority; `|delta|` when off.
    pub priority_huber: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            target_update_period: 2500,
            gamma: 0.999,
            margin: 0.999f64.sqrt(),
            max_grad_norm: 40.0,
            adam: AdamConfig::default(),
            double_dqn: true,
            transform: TransformParams::default(),
            use_transform: true,
            use_tc: true,
            use_im: true,
            use_expert_data: true,
            priority_huber: true,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if self.use_expert_data && self.batch_size % 4 != 0 {
            return fail(format!("batch_size {} must be a multiple of 4 for the 75/25 mix", self.batch_size));
        }
        if self.target_update_period == 0 {
            return fail("target_update_period must be positive".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return fail(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return fail(format!("margin must be >= 0, got {}", self.margin));
        }
        if !(self.max_grad_norm > 0.0) {
            return fail(format!("max_grad_norm must be positive, got {}", self.max_grad_norm));
        }
        self.adam.validate()
    }

    pub fn value_transform(&self) -> ValueTransform {
        if self.use_transform {
            ValueTransform::Sqrt(self.transform)
        } else {
            ValueTransform::Identity
        }
    }
}

/// Loss components are summed over the batch in batch order; `total` is
/// `td + tc + im` in that order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub td: f64,
    pub tc: f64,
    pub im: f64,
    pub total: f64,
    /// `prediction - target` per batch item (empty when the TD term is off).
    pub td_errors: Vec<f64>,
    /// Largest `|Q(x_i, a)|` over the batch states and all actions.
    pub max_abs_q: f64,
}

/// Which loss terms to evaluate; switches in the config still apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossTerms {
    pub td: bool,
    pub tc: bool,
    pub im: bool,
}

impl LossTerms {
    pub const ALL: LossTerms = LossTerms { td: true, tc: true, im: true };
    pub const TD: LossTerms = LossTerms { td: true, tc: false, im: false };
    pub const TC: LossTerms = LossTerms { td: false, tc: true, im: false };
    pub const IM: LossTerms = LossTerms { td: false, tc: false, im: true };
}

pub(crate) fn one_hot_rows<T: Scalar>(states: impl Iterator<Item = usize>, n_states: usize) -> Vec<T> {
    let mut out = Vec::new();
    for s in states {
        let start = out.len();
        out.resize(start + n_states, T::zero());
        out[start + s] = T::one();
    }
    out
}

/// Distinct states of a batch in first-seen order.
pub(crate) struct UniqueRows {
    row_of: Vec<usize>,
    states: Vec<usize>,
}

impl UniqueRows {
    pub(crate) fn new(n_states: usize) -> Self {
        Self {
            row_of: vec![usize::MAX; n_states],
            states: Vec::new(),
        }
    }

    pub(crate) fn insert(&mut self, state: usize) {
        if self.row_of[state] == usize::MAX {
            self.row_of[state] = self.states.len();
            self.states.push(state);
        }
    }

    pub(crate) fn row(&self, state: usize) -> usize {
        self.row_of[state]
    }

    pub(crate) fn len(&self) -> usize {
        self.states.len()
    }

    pub(crate) fn features<T: Scalar>(&self) -> Vec<T> {
        one_hot_rows(self.states.iter().copied(), self.row_of.len())
    }
}

/// Bootstrap action `a'` and transformed n-step target for one transition.
pub(crate) fn bootstrap<T: Scalar>(
    t: &Transition,
    online_next: &[T],
    target_next: &[T],
    gamma: f64,
    double_dqn: bool,
    transform: &ValueTransform,
) -> Result<(usize, T)> {
    let a_next = if double_dqn { argmax(online_next) } else { argmax(target_next) };
    let reward = T::of(t.n_step_reward);
    let target = if t.terminal_within_horizon {
        transform.forward(reward)?
    } else {
        transform.target(reward, target_next[a_next], T::of(gamma.powi(t.steps as i32)))?
    };
    Ok((a_next, target))
}

/// Evaluates the selected loss terms on `batch`. When `grads` is given the
/// gradient of the summed terms with respect to the online parameters is
/// accumulated into it.
pub fn evaluate_losses<T: Scalar>(
    batch: &SampledBatch,
    online: &Network<T>,
    target: &Network<T>,
    cfg: &LearnerConfig,
    terms: LossTerms,
    grads: Option<&mut [T]>,
) -> Result<LossBreakdown> {
    let target = TargetPass::new(batch, target)?;
    losses_against(batch, online, &target, cfg, terms, grads)
}

/// Target-network Q-values at the distinct bootstrap states of a batch.
struct TargetPass<T> {
    rows: UniqueRows,
    q: ForwardCache<T>,
}

impl<T: Scalar> TargetPass<T> {
    fn new(batch: &SampledBatch, target: &Network<T>) -> Result<Self> {
        let n_states = target.architecture().input_dim;
        let mut rows = UniqueRows::new(n_states);
        for item in &batch.items {
            let s = item.transition.bootstrap_state;
            if s >= n_states {
                return Err(Error::invalid(format!("transition {:?} does not fit the network", item.transition)));
            }
            rows.insert(s);
        }
        let q = target.forward_batch(&rows.features::<T>(), rows.len())?;
        Ok(Self { rows, q })
    }
}

fn losses_against<T: Scalar>(
    batch: &SampledBatch,
    online: &Network<T>,
    target: &TargetPass<T>,
    cfg: &LearnerConfig,
    terms: LossTerms,
    grads: Option<&mut [T]>,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::invalid("loss of an empty batch"));
    }
    let n_states = online.architecture().input_dim;
    let n_actions = online.architecture().n_actions;
    if let Some(t) = batch
        .items
        .iter()
        .map(|i| &i.transition)
        .find(|t| t.state >= n_states || t.bootstrap_state >= n_states || t.action >= n_actions)
    {
        return Err(Error::invalid(format!("transition {t:?} does not fit the network")));
    }
    let transform = cfg.value_transform();
    let use_tc = terms.tc && cfg.use_tc;
    let use_im = terms.im && cfg.use_im;

    // one forward row per distinct state; x and x' share the online pass
    let mut online_rows = UniqueRows::new(n_states);
    for item in &batch.items {
        online_rows.insert(item.transition.state);
        online_rows.insert(item.transition.bootstrap_state);
    }
    let q_online = online.forward_batch(&online_rows.features::<T>(), online_rows.len())?;

    let mut dq = vec![T::zero(); online_rows.len() * n_actions];
    let (mut td, mut tc, mut im) = (T::zero(), T::zero(), T::zero());
    let mut td_errors = Vec::with_capacity(if terms.td { batch.len() } else { 0 });
    let mut max_abs_q = 0.0f64;
    let margin = T::of(cfg.margin);

    for item in &batch.items {
        let t = &item.transition;
        let w = T::of(item.weight);
        let row = online_rows.row(t.state);
        let next_row = online_rows.row(t.bootstrap_state);
        let q = q_online.q_row(row);
        let q_next = q_online.q_row(next_row);
        let q_next_target = target.q.q_row(target.rows.row(t.bootstrap_state));
        max_abs_q = q.iter().fold(max_abs_q, |m, v| m.max(v.as_f64().abs()));
        let pred = q[t.action];
        let (a_next, y) = bootstrap(t, q_next, q_next_target, cfg.gamma, cfg.double_dqn, &transform)?;
        if terms.td {
            let delta = pred - y;
            td_errors.push(delta.as_f64());
            td = td + w * huber(delta);
            let k = row * n_actions + t.action;
            dq[k] = dq[k] + w * huber_grad(delta);
        }
        if use_tc && !t.terminal_within_horizon {
            let d = q_next[a_next] - q_next_target[a_next];
            tc = tc + w * huber(d);
            let k = next_row * n_actions + a_next;
            dq[k] = dq[k] + w * huber_grad(d);
        }
        if use_im && t.is_best_episode {
            let mut best = (0, T::neg_infinity());
            for (a, &v) in q.iter().enumerate() {
                let v = if a == t.action { v } else { v + margin };
                if v > best.1 {
                    best = (a, v);
                }
            }
            im = im + w * (best.1 - pred);
            if best.0 != t.action {
                dq[row * n_actions + best.0] = dq[row * n_actions + best.0] + w;
                dq[row * n_actions + t.action] = dq[row * n_actions + t.action] - w;
            }
        }
    }

    if let Some(grads) = grads {
        online.backward(&q_online, &dq, grads)?;
    }
    let (td, tc, im) = (td.as_f64(), tc.as_f64(), im.as_f64());
    Ok(LossBreakdown {
        td,
        tc,
        im,
        total: td + tc + im,
        td_errors,
        max_abs_q,
    })
}

/// `L_TD` and the per-item TD errors.
pub fn td_loss<T: Scalar>(
    batch: &SampledBatch,
    online: &Network<T>,
    target: &Network<T>,
    cfg: &LearnerConfig,
) -> Result<(f64, Vec<f64>)> {
    let l = evaluate_losses(batch, online, target, cfg, LossTerms::TD, None)?;
    Ok((l.td, l.td_errors))
}

pub fn tc_loss<T: Scalar>(batch: &SampledBatch, online: &Network<T>, target: &Network<T>, cfg: &LearnerConfig) -> Result<f64> {
    Ok(evaluate_losses(batch, online, target, cfg, LossTerms::TC, None)?.tc)
}

pub fn imitation_loss<T: Scalar>(batch: &SampledBatch, online: &Network<T>, cfg: &LearnerConfig) -> Result<f64> {
    Ok(evaluate_losses(batch, online, online, cfg, LossTerms::IM, None)?.im)
}

/// New priority for a TD error: `huber(delta)` or `|delta|`.
pub fn priority_of(delta: f64, huber_priority: bool) -> f64 {
    if huber_priority {
        huber(delta)
    } else {
        delta.abs()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    /// Learner steps completed, including this one.
    pub step: u64,
    pub losses: LossBreakdown,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub snapshot_k: u64,
    pub batch_ids: Vec<(Source, u64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Hooks around each learner step. `before_step` is where the deterministic
/// scheduler runs its actors; `after_step` records metrics and may stop the run.
pub trait TrainObserver<T: Scalar> {
    fn before_step(&mut self, _learner: &Learner<T>) -> Result<()> {
        Ok(())
    }

    fn after_step(&mut self, _learner: &Learner<T>, _report: &StepReport) -> Result<Control> {
        Ok(Control::Continue)
    }

    /// Called when the buffers cannot yet supply a batch.
    fn starved(&mut self, _learner: &Learner<T>) -> Result<()> {
        std::thread::sleep(std::time::Duration::from_millis(1));
        Ok(())
    }
}

impl<T: Scalar> TrainObserver<T> for () {}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub steps: u64,
    pub snapshot_k: u64,
    pub stopped_early: bool,
    pub last: Option<StepReport>,
}

#[derive(Clone, Debug)]
pub struct Learner<T: Scalar> {
    config: LearnerConfig,
    online: Network<T>,
    target: ParamSnapshot<T>,
    adam: AdamState<T>,
    steps: u64,
    snapshot_k: u64,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Learner<T> {
    pub fn new(config: LearnerConfig, architecture: Architecture, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let online = Network::random(architecture, &mut rng)?;
        Self::with_network(config, online, rng)
    }

    pub fn with_network(config: LearnerConfig, online: Network<T>, rng: ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(config.adam, online.num_params())?;
        Ok(Self {
            target: online.snapshot(0),
            config,
            online,
            adam,
            steps: 0,
            snapshot_k: 0,
            rng,
        })
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn online(&self) -> &Network<T> {
        &self.online
    }

    pub fn target(&self) -> &ParamSnapshot<T> {
        &self.target
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn snapshot_k(&self) -> u64 {
        self.snapshot_k
    }

    pub fn adam(&self) -> &AdamState<T> {
        &self.adam
    }

    /// Frozen copy of the current online parameters, tagged with the step count.
    pub fn publish(&self) -> ParamSnapshot<T> {
        self.online.snapshot(self.steps)
    }

    fn sample(&mut self, actor: &SharedBuffer, expert: Option<&SharedBuffer>) -> Result<Option<SampledBatch>> {
        let expert = if self.config.use_expert_data { expert } else { None };
        let actor = actor.lock();
        if actor.is_empty() {
            return Ok(None);
        }
        match expert {
            Some(e) => {
                let e = e.lock();
                if e.is_empty() {
                    return Err(Error::InvalidState("expert data enabled but the expert buffer is empty".into()));
                }
                sample_batch(&actor, Some(&e), self.config.batch_size, &mut self.rng).map(Some)
            }
            None => sample_batch(&actor, None, self.config.batch_size, &mut self.rng).map(Some),
        }
    }

    /// One learner iteration. Returns `None` without touching any state when
    /// the actor buffer is still empty.
    pub fn step(&mut self, actor: &SharedBuffer, expert: Option<&SharedBuffer>) -> Result<Option<StepReport>> {
        let k = self.steps / self.config.target_update_period;
        if k != self.snapshot_k {
            self.snapshot_k = k;
            self.target = self.online.snapshot(k);
        }
        let Some(batch) = self.sample(actor, expert)? else {
            return Ok(None);
        };
        let ids: Vec<(Source, u64)> = batch.items.iter().map(|i| (i.source, i.id)).collect();
        let step = self.steps + 1;
        let diverged = |what: String, losses: Option<&LossBreakdown>| {
            Error::Divergence(format!("step {step}: {what}; losses {losses:?}; batch ids {ids:?}"))
        };

        let mut grads = self.online.zero_grads();
        let target = TargetPass::new(&batch, self.target.network()).map_err(|e| diverged(e.to_string(), None))?;
        let losses = losses_against(&batch, &self.online, &target, &self.config, LossTerms::ALL, Some(&mut grads))
            .map_err(|e| diverged(e.to_string(), None))?;
        if !losses.total.is_finite() {
            return Err(diverged("non-finite loss".into(), Some(&losses)));
        }
        let grad_norm = clip_global_norm(&mut grads, T::of(self.config.max_grad_norm))?.as_f64();
        let names = self.online.namer();
        self.adam
            .step(self.online.params_mut(), &grads, names)
            .map_err(|e| diverged(e.to_string(), Some(&losses)))?;
        if !self.online.is_finite() {
            return Err(diverged("non-finite parameters after update".into(), Some(&losses)));
        }

        // priorities from the updated parameters against the same target
        let deltas = losses_against(&batch, &self.online, &target, &self.config, LossTerms::TD, None)
            .map_err(|e| diverged(e.to_string(), Some(&losses)))?
            .td_errors;
        let mut actor_ids = Vec::new();
        let mut actor_p = Vec::new();
        let mut expert_ids = Vec::new();
        let mut expert_p = Vec::new();
        for (item, delta) in batch.items.iter().zip(&deltas) {
            let p = priority_of(*delta, self.config.priority_huber);
            match item.source {
                Source::Actor => {
                    actor_ids.push(item.id);
                    actor_p.push(p);
                }
                Source::Expert => {
                    expert_ids.push(item.id);
                    expert_p.push(p);
                }
            }
        }
        actor.update_priorities(&actor_ids, &actor_p)?;
        if let Some(e) = expert.filter(|_| !expert_ids.is_empty()) {
            e.update_priorities(&expert_ids, &expert_p)?;
        }

        self.steps = step;
        Ok(Some(StepReport {
            step,
            losses,
            grad_norm,
            snapshot_k: self.snapshot_k,
            batch_ids: ids,
        }))
    }

}

/// Runs learner steps until `max_steps` have completed or the observer stops.
pub fn train<T: Scalar>(
    learner: &mut Learner<T>,
    actor: &SharedBuffer,
    expert: Option<&SharedBuffer>,
    max_steps: u64,
    observer: &mut impl TrainObserver<T>,
) -> Result<TrainReport> {
    let mut report = TrainReport {
        steps: learner.steps(),
        snapshot_k: learner.snapshot_k(),
        ..TrainReport::default()
    };
    while learner.steps() < max_steps {
        observer.before_step(learner)?;
        let Some(step) = learner.step(actor, expert)? else {
            observer.starved(learner)?;
            continue;
        };
        let control = observer.after_step(learner, &step)?;
        report.last = Some(step);
        if control == Control::Stop {
            report.stopped_early = true;
            break;
        }
    }
    report.steps = learner.steps();
    report.snapshot_k = learner.snapshot_k();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{make_env, EnvSpec};
    use crate::replay::{BatchItem, PrioritizedBuffer, ReplayConfig};
    use crate::solver::{value_iterate, SolveOptions};
    use crate::transform::h;

    fn transition(state: usize, action: usize, reward: f64, next: usize, terminal: bool) -> Transition {
        Transition {
            state,
            action,
            n_step_reward: reward,
            bootstrap_state: next,
            horizon: 1,
            steps: 1,
            terminal_within_horizon: terminal,
            is_expert: false,
            is_best_episode: false,
            priority: 1.0,
        }
    }

    fn batch(ts: Vec<Transition>) -> SampledBatch {
        SampledBatch {
            items: ts
                .into_iter()
                .enumerate()
                .map(|(i, t)| BatchItem {
                    id: i as u64,
                    source: if t.is_expert { Source::Expert } else { Source::Actor },
                    transition: t,
                    probability: 1.0,
                    weight: 1.0,
                })
                .collect(),
        }
    }

    /// Linear net on one-hot input with `Q(s, a) = q[s][a]`.
    fn tabular(q: &[Vec<f64>]) -> Network<f64> {
        let (ns, na) = (q.len(), q[0].len());
        let arch = Architecture {
            input_dim: ns,
            hidden: vec![],
            n_actions: na,
            dueling: false,
        };
        let mut params = vec![0.0; (ns + 1) * na];
        for (s, row) in q.iter().enumerate() {
            for (a, v) in row.iter().enumerate() {
                params[s * na + a] = *v;
            }
        }
        Network::from_params(arch, params).unwrap()
    }

    fn cfg() -> LearnerConfig {
        LearnerConfig {
            batch_size: 4,
            ..LearnerConfig::default()
        }
    }

    #[test]
    fn terminal_td_error_is_minus_h_one() {
        let net = tabular(&[vec![0.0, 0.0], vec![0.0, 0.0]]);
        let b = batch(vec![transition(0, 1, 1.0, 1, true)]);
        let (loss, deltas) = td_loss(&b, &net, &net, &cfg()).unwrap();
        let h1 = h(1.0, &TransformParams::default()).unwrap();
        assert!((deltas[0] + 0.42421).abs() < 1e-5);
        assert_eq!(deltas[0], -h1);
        assert_eq!(loss, huber(h1));
    }

    #[test]
    fn zero_discount_target_ignores_next_state() {
        let net = tabular(&[vec![0.0], vec![5.0]]);
        let c = LearnerConfig { gamma: 0.0, ..cfg() };
        let (_, deltas) = td_loss(&batch(vec![transition(0, 0, 2.0, 1, false)]), &net, &net, &c).unwrap();
        assert_eq!(deltas[0], -h(2.0, &c.transform).unwrap());
    }

    #[test]
    fn fixed_point_has_zero_td_error() {
        let mdp = make_env(&EnvSpec::DelayedChain { length: 6 }).unwrap();
        let c = LearnerConfig { gamma: 0.9, ..cfg() };
        let sol = value_iterate::<f64>(&mdp, &SolveOptions::transformed(0.9, c.value_transform())).unwrap();
        let q: Vec<Vec<f64>> = (0..mdp.n_states()).map(|s| sol.q.row(s).to_vec()).collect();
        let net = tabular(&q);
        let mut ts = Vec::new();
        for s in 0..mdp.n_states() {
            if mdp.is_terminal(s) {
                continue;
            }
            for a in 0..mdp.n_actions() {
                let next = mdp.successors(s, a)[0].0;
                ts.push(transition(s, a, mdp.reward(s, a), next, mdp.is_terminal(next)));
            }
        }
        let (loss, deltas) = td_loss(&batch(ts), &net, &net, &c).unwrap();
        assert!(deltas.iter().all(|d| d.abs() < 1e-9), "{deltas:?}");
        assert!(loss < 1e-15);
    }

    #[test]
    fn tc_loss_examples() {
        let target = tabular(&[vec![0.0, 0.0], vec![1.0, 2.0]]);
        let b = batch(vec![transition(0, 0, 0.0, 1, false)]);
        assert_eq!(tc_loss(&b, &target, &target, &cfg()).unwrap(), 0.0);
        let online = tabular(&[vec![0.0, 0.0], vec![1.5, 2.5]]);
        assert_eq!(tc_loss(&b, &online, &target, &cfg()).unwrap(), 0.125);
        let terminal = batch(vec![transition(0, 0, 1.0, 1, true)]);
        assert_eq!(tc_loss(&terminal, &online, &target, &cfg()).unwrap(), 0.0);
        let off = LearnerConfig { use_tc: false, ..cfg() };
        assert_eq!(tc_loss(&b, &online, &target, &off).unwrap(), 0.0);
    }

    #[test]
    fn imitation_loss_examples() {
        let c = LearnerConfig { margin: 0.5, ..cfg() };
        let mut t = transition(0, 1, 0.0, 0, false);
        t.is_expert = true;
        assert_eq!(imitation_loss(&batch(vec![t.clone()]), &tabular(&[vec![1.0, 2.0]]), &c).unwrap(), 0.0);
        t.is_best_episode = true;
        assert_eq!(imitation_loss(&batch(vec![t.clone()]), &tabular(&[vec![1.0, 2.0]]), &c).unwrap(), 0.0);
        assert_eq!(imitation_loss(&batch(vec![t]), &tabular(&[vec![2.0, 1.0]]), &c).unwrap(), 1.5);
    }

    #[test]
    fn total_gradient_is_sum_of_component_gradients() {
        let arch = Architecture {
            input_dim: 4,
            hidden: vec![8],
            n_actions: 3,
            dueling: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let online = Network::<f64>::random(arch.clone(), &mut rng).unwrap();
        let target = Network::<f64>::random(arch, &mut rng).unwrap();
        let mut ts = vec![
            transition(0, 2, 0.5, 1, false),
            transition(1, 0, 1.0, 3, true),
            transition(2, 1, -0.3, 0, false),
        ];
        ts[2].is_expert = true;
        ts[2].is_best_episode = true;
        let b = batch(ts);
        let c = cfg();
        let mut total = online.zero_grads();
        evaluate_losses(&b, &online, &target, &c, LossTerms::ALL, Some(&mut total)).unwrap();
        let mut sum = online.zero_grads();
        for terms in [LossTerms::TD, LossTerms::TC, LossTerms::IM] {
            let mut g = online.zero_grads();
            evaluate_losses(&b, &online, &target, &c, terms, Some(&mut g)).unwrap();
            sum.iter_mut().zip(&g).for_each(|(s, v)| *s += v);
        }
        for (a, b) in total.iter().zip(&sum) {
            assert!((a - b).abs() < 1e-10);
        }
        let l = evaluate_losses(&b, &online, &target, &c, LossTerms::ALL, None).unwrap();
        assert_eq!(l.total, l.td + l.tc + l.im);
        assert!(l.td >= 0.0 && l.tc >= 0.0 && l.im >= 0.0);
    }

    fn chain_buffers() -> (SharedBuffer, SharedBuffer) {
        let mdp = make_env(&EnvSpec::DelayedChain { length: 5 }).unwrap();
        let mut actor = PrioritizedBuffer::actor(ReplayConfig::default()).unwrap();
        let mut expert = PrioritizedBuffer::expert(ReplayConfig::default()).unwrap();
        for s in 0..mdp.n_states() - 1 {
            for a in 0..2 {
                let next = mdp.successors(s, a)[0].0;
                let mut t = transition(s, a, mdp.reward(s, a), next, mdp.is_terminal(next));
                actor.insert(t.clone()).unwrap();
                if a == 1 {
                    t.is_expert = true;
                    t.is_best_episode = true;
                    expert.insert(t).unwrap();
                }
            }
        }
        expert.seal();
        (SharedBuffer::new(actor), SharedBuffer::new(expert))
    }

    fn small_learner(c: LearnerConfig) -> Learner<f64> {
        let arch = Architecture {
            input_dim: 5,
            hidden: vec![8],
            n_actions: 2,
            dueling: true,
        };
        Learner::new(c, arch, 11).unwrap()
    }

    #[test]
    fn zero_step_budget_changes_nothing() {
        let (actor, expert) = chain_buffers();
        let mut l = small_learner(cfg());
        let before = l.online().clone();
        let r = train(&mut l, &actor, Some(&expert), 0, &mut ()).unwrap();
        assert_eq!(r.steps, 0);
        assert_eq!(l.online(), &before);
    }

    #[test]
    fn deterministic_trajectories_are_bit_identical() {
        let run = || {
            let (actor, expert) = chain_buffers();
            let mut l = small_learner(LearnerConfig { target_update_period: 7, ..cfg() });
            train(&mut l, &actor, Some(&expert), 100, &mut ()).unwrap();
            l.online().params().iter().map(|p| p.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn target_refreshes_only_at_period_boundaries() {
        let (actor, expert) = chain_buffers();
        let mut l = small_learner(LearnerConfig { target_update_period: 5, ..cfg() });
        let mut prev = l.target().network().clone();
        for step in 1..=23u64 {
            l.step(&actor, Some(&expert)).unwrap().unwrap();
            assert_eq!(l.snapshot_k(), (step - 1) / 5);
            let now = l.target().network().clone();
            if now != prev {
                assert_eq!((step - 1) % 5, 0, "target changed before step {step}");
            }
            prev = now;
        }
    }

    #[test]
    fn priorities_are_unweighted_huber_of_updated_td_error() {
        let (actor, expert) = chain_buffers();
        let mut l = small_learner(cfg());
        let report = l.step(&actor, Some(&expert)).unwrap().unwrap();
        let target = l.target().network().clone();
        for (source, id) in &report.batch_ids {
            let buf = if *source == Source::Actor { &actor } else { &expert };
            let buf = buf.lock();
            let t = buf.get(*id).unwrap().clone();
            let (_, d) = td_loss(&batch(vec![t.clone()]), l.online(), &target, l.config()).unwrap();
            let expected = huber(d[0]).max(ReplayConfig::default().priority_floor);
            assert!((t.priority - expected).abs() < 1e-15, "{} vs {expected}", t.priority);
        }
    }

    #[test]
    fn divergence_is_reported_with_diagnostics() {
        let (actor, expert) = chain_buffers();
        let mut l = small_learner(cfg());
        l.online.params_mut()[0] = f64::NAN;
        let err = l.step(&actor, Some(&expert)).unwrap_err();
        assert!(matches!(err, Error::Divergence(_)));
        assert!(err.to_string().contains("batch ids"), "{err}");
    }

    #[test]
    fn starved_learner_does_nothing() {
        let actor = SharedBuffer::new(PrioritizedBuffer::actor(ReplayConfig::default()).unwrap());
        let mut l = small_learner(LearnerConfig { use_expert_data: false, ..cfg() });
        assert!(l.step(&actor, None).unwrap().is_none());
        assert_eq!(l.steps(), 0);
    }
}
