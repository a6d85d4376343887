//! Named, runtime-selectable strategies: how amending-pass primitives are
//! sampled during training, and how pass inputs are structured.

use std::collections::BTreeMap;
use std::fmt;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::linearize::{ContextMode, LayoutOptions, TokenToggles};
use crate::negsample::{corrupt, heuristic_swap, CorruptionPolicy, ValuePool};
use crate::state::{DialogueState, Schema};

type Factory<T, A> = Box<dyn Fn(&A) -> Result<Box<T>> + Send + Sync>;

/// Name → constructor table for one strategy family.
pub struct Registry<T: ?Sized, A> {
    family: &'static str,
    entries: BTreeMap<String, Factory<T, A>>,
}

impl<T: ?Sized, A> Registry<T, A> {
    pub fn new(family: &'static str) -> Self {
        Self {
            family,
            entries: BTreeMap::new(),
        }
    }

    /// Adds or replaces the constructor registered under `name`.
    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&A) -> Result<Box<T>> + Send + Sync + 'static,
    {
        self.entries.insert(name.to_string(), Box::new(factory));
    }

    pub fn create(&self, name: &str, args: &A) -> Result<Box<T>> {
        match self.entries.get(name) {
            Some(f) => f(args),
            None => Err(Error::config(format!(
                "unknown {} '{name}'; registered: {}",
                self.family,
                self.names().join(", ")
            ))),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }
}

impl<T: ?Sized, A> fmt::Debug for Registry<T, A> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry").field("family", &self.family).field("names", &self.names()).finish()
    }
}

/// Produces the primitive state the amending pass is trained to repair.
pub trait PrimitiveSampler: Send + Sync {
    fn name(&self) -> &'static str;

    fn sample(&self, gold_prev: &DialogueState, gold_curr: &DialogueState, schema: &Schema, rng: &mut dyn RngCore) -> Result<DialogueState>;
}

pub struct SamplerArgs {
    pub schema: Schema,
    pub policy: CorruptionPolicy,
    pub pool: ValuePool,
}

/// Clean primitives: the amending pass only ever sees the gold state.
pub struct NoSampling;

impl PrimitiveSampler for NoSampling {
    fn name(&self) -> &'static str {
        "off"
    }

    fn sample(&self, _: &DialogueState, gold_curr: &DialogueState, schema: &Schema, _: &mut dyn RngCore) -> Result<DialogueState> {
        gold_curr.check_schema(schema)?;
        Ok(gold_curr.clone())
    }
}

/// Random replacement of changed slots, optionally followed by correlated swaps.
pub struct Corrupting {
    policy: CorruptionPolicy,
    pool: ValuePool,
}

impl Corrupting {
    pub fn new(args: &SamplerArgs, heuristic_plus: bool) -> Result<Self> {
        let policy = CorruptionPolicy {
            heuristic_plus,
            ..args.policy.clone()
        };
        policy.validate(&args.schema)?;
        Ok(Self {
            policy,
            pool: args.pool.clone(),
        })
    }
}

impl PrimitiveSampler for Corrupting {
    fn name(&self) -> &'static str {
        if self.policy.heuristic_plus {
            "ns_plus"
        } else {
            "ns"
        }
    }

    fn sample(&self, gold_prev: &DialogueState, gold_curr: &DialogueState, schema: &Schema, rng: &mut dyn RngCore) -> Result<DialogueState> {
        let out = corrupt(gold_prev, gold_curr, schema, &self.policy, &self.pool, rng)?;
        if self.policy.heuristic_plus {
            heuristic_swap(&out, schema, &self.policy, rng)
        } else {
            Ok(out)
        }
    }
}

/// Registry with `off`, `ns` and `ns_plus`.
pub fn sampler_registry() -> Registry<dyn PrimitiveSampler, SamplerArgs> {
    let mut r: Registry<dyn PrimitiveSampler, SamplerArgs> = Registry::new("negative sampling strategy");
    r.register("off", |_| Ok(Box::new(NoSampling)));
    r.register("ns", |a| Ok(Box::new(Corrupting::new(a, false)?)));
    r.register("ns_plus", |a| Ok(Box::new(Corrupting::new(a, true)?)));
    r
}

/// Decides what context and state memory the pass inputs carry.
pub trait InputStructure: Send + Sync {
    fn name(&self) -> &'static str;

    fn layout(&self, toggles: TokenToggles, max_len: usize) -> LayoutOptions;
}

struct FixedStructure {
    name: &'static str,
    context_mode: ContextMode,
    state_memory: bool,
}

impl InputStructure for FixedStructure {
    fn name(&self) -> &'static str {
        self.name
    }

    fn layout(&self, toggles: TokenToggles, max_len: usize) -> LayoutOptions {
        LayoutOptions {
            context_mode: self.context_mode,
            state_memory: self.state_memory,
            toggles,
            max_len,
        }
    }
}

/// Registry with `current_turn` (current turn plus previous state),
/// `full_history` (all turns plus previous state) and `history_only`
/// (all turns, no previous state in the basic pass).
pub fn structure_registry() -> Registry<dyn InputStructure, ()> {
    let mut r: Registry<dyn InputStructure, ()> = Registry::new("input structure");
    for (name, context_mode, state_memory) in [
        ("current_turn", ContextMode::CurrentTurn, true),
        ("full_history", ContextMode::FullHistory, true),
        ("history_only", ContextMode::FullHistory, false),
    ] {
        r.register(name, move |_| {
            Ok(Box::new(FixedStructure {
                name,
                context_mode,
                state_memory,
            }))
        });
    }
    r
}
