use crate::dist::Distribution;
use crate::error::{Error, Result};
use crate::lm::LanguageModel;
use crate::ngram::{BackoffAutomaton, StateId};
use crate::vocab::{Special, TokenId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpolationConfig {
    pub alpha: f64,
    pub oov_epsilon: f64,
}

impl Default for InterpolationConfig {
    fn default() -> Self {
        InterpolationConfig {
            alpha: 0.4,
            oov_epsilon: 1e-10,
        }
    }
}

impl InterpolationConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        let c = InterpolationConfig {
            alpha,
            ..Default::default()
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.oov_epsilon) {
            return Err(Error::invalid("oov_epsilon must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Extends `dist` to `len` tokens. When tokens are missing the known ones
/// are scaled by `1 - eps` and the missing ones share `eps`; otherwise the
/// distribution is returned unchanged.
pub fn pad_distribution(dist: Distribution, len: usize, eps: f64) -> Distribution {
    let known = dist.len();
    if known >= len {
        return dist;
    }
    let scale = (1.0 - eps).ln();
    let share = (eps / (len - known) as f64).ln();
    let mut v = dist.into_vec();
    for l in &mut v {
        *l += scale;
    }
    v.resize(len, share);
    Distribution::from_log_probs(v)
}

/// `alpha · personal + (1 - alpha) · global` over the union vocabulary.
/// The endpoints return the matching input unchanged; otherwise the result
/// is renormalized only if its mass is off by more than 1e-9.
pub fn blend(global: &Distribution, personal: &Distribution, cfg: &InterpolationConfig) -> Result<Distribution> {
    cfg.validate()?;
    if global.len() != personal.len() {
        return Err(Error::invalid(format!(
            "blend over different vocabularies ({} vs {})",
            global.len(),
            personal.len()
        )));
    }
    let a = cfg.alpha;
    if a == 0.0 {
        return Ok(global.clone());
    }
    if a == 1.0 {
        return Ok(personal.clone());
    }
    let v: Vec<f64> = global
        .as_slice()
        .iter()
        .zip(personal.as_slice())
        .map(|(&g, &p)| (a * p.exp() + (1.0 - a) * g.exp()).ln())
        .collect();
    let mut d = Distribution::from_log_probs(v);
    if (d.mass() - 1.0).abs() > 1e-9 {
        d.renormalize();
    }
    Ok(d)
}

/// The global model and one user's automaton, interpolated at every step.
/// Tokens the global vocabulary lacks reach the global model as `<UNK>`.
pub struct BlendedModel<'a, G> {
    pub global: G,
    pub personal: &'a BackoffAutomaton,
    pub cfg: InterpolationConfig,
}

impl<'a, G: LanguageModel> BlendedModel<'a, G> {
    pub fn new(global: G, personal: &'a BackoffAutomaton, cfg: InterpolationConfig) -> Result<Self> {
        cfg.validate()?;
        if personal.vocab_size() < global.vocab_size() {
            return Err(Error::invalid("personal model must cover the global vocabulary"));
        }
        Ok(BlendedModel { global, personal, cfg })
    }

    pub fn initial_state(&self, global: G::State) -> (G::State, StateId) {
        (global, self.personal.initial_state())
    }

    fn global_token(&self, t: TokenId) -> TokenId {
        if (t as usize) < self.global.vocab_size() {
            t
        } else {
            Special::Unk.id()
        }
    }

    fn combine(&self, g: Distribution, state: StateId) -> Distribution {
        let n = self.personal.vocab_size();
        let g = pad_distribution(g, n, self.cfg.oov_epsilon);
        let p = self.personal.full_distribution(state);
        blend(&g, &p, &self.cfg).expect("validated config and matching sizes")
    }
}

impl<'a, G: LanguageModel> LanguageModel for BlendedModel<'a, G> {
    type State = (G::State, StateId);

    fn vocab_size(&self) -> usize {
        self.personal.vocab_size()
    }

    fn advance(&self, state: &Self::State, token: TokenId) -> Self::State {
        (
            self.global.advance(&state.0, self.global_token(token)),
            self.personal.advance(state.1, token),
        )
    }

    fn output(&self, state: &Self::State) -> Distribution {
        self.combine(self.global.output(&state.0), state.1)
    }

    fn advance_batch(&self, items: &[(&Self::State, TokenId)]) -> Vec<Self::State> {
        let g: Vec<(&G::State, TokenId)> = items.iter().map(|(s, t)| (&s.0, self.global_token(*t))).collect();
        self.global
            .advance_batch(&g)
            .into_iter()
            .zip(items)
            .map(|(gs, (s, t))| (gs, self.personal.advance(s.1, *t)))
            .collect()
    }

    fn output_batch(&self, states: &[&Self::State]) -> Vec<Distribution> {
        let g: Vec<&G::State> = states.iter().map(|s| &s.0).collect();
        self.global
            .output_batch(&g)
            .into_iter()
            .zip(states)
            .map(|(d, s)| self.combine(d, s.1))
            .collect()
    }
}
