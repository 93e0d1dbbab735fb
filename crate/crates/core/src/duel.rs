//! Two-persona duels: classify, pick a pair, generate both answers.

use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, SystemClock};
use crate::engine::{ChatRequest, EngineError, GenerationEngine};
use crate::ids::IdSource;
use crate::persona::{BiasDimension, PersonaSpec, Registry};
use crate::router::{classify, select_duel, Lexicon};

pub const DEFAULT_FALLBACK: &str =
    "This prompt does not match a supported bias category (age, gender, or race). Please try a different prompt.";

pub const SYNTHESIS_GUIDANCE: &str = "You are given answers to the same prompt from several perspectives. \
Merge them into one integrated answer that represents every perspective fairly and names where they disagree.";

#[derive(Debug, Error)]
pub enum DuelError {
    #[error("prompt must not be empty")]
    EmptyPrompt,
    #[error("fallback message must not be empty")]
    EmptyFallback,
    #[error("generation failed for {persona}: {source}")]
    Generation {
        persona: String,
        #[source]
        source: EngineError,
    },
    #[error("synthesis failed: {0}")]
    Synthesis(#[source] EngineError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaResponse {
    pub model_name: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuelResponse {
    pub duel_id: String,
    pub prompt: String,
    pub dimension: BiasDimension,
    /// Always two responses, in registry order.
    pub responses: Vec<PersonaResponse>,
    pub created_at: DateTime<Utc>,
}

impl DuelResponse {
    pub fn model_names(&self) -> Vec<String> {
        self.responses.iter().map(|r| r.model_name.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FallbackResult {
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DuelOutcome {
    Duel(DuelResponse),
    Fallback(FallbackResult),
}

/// Non-empty message returned when a prompt matches no dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FallbackMessage(String);

impl FallbackMessage {
    pub fn new(message: impl Into<String>) -> Result<Self, DuelError> {
        let message = message.into();
        if message.trim().is_empty() {
            return Err(DuelError::EmptyFallback);
        }
        Ok(Self(message))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Default for FallbackMessage {
    fn default() -> Self {
        Self(DEFAULT_FALLBACK.to_string())
    }
}

pub async fn generate(
    persona: &PersonaSpec,
    prompt: &str,
    engine: &dyn GenerationEngine,
) -> Result<PersonaResponse, DuelError> {
    if prompt.trim().is_empty() {
        return Err(DuelError::EmptyPrompt);
    }
    let request = ChatRequest {
        label: persona.variant.name().to_string(),
        model: persona.model_binding.clone(),
        system: persona.guidance_prompt.clone(),
        user: prompt.to_string(),
    };
    let text = engine
        .complete(&request)
        .await
        .map_err(|source| DuelError::Generation {
            persona: persona.display_name.clone(),
            source,
        })?;
    Ok(PersonaResponse {
        model_name: persona.display_name.clone(),
        text,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum SynthesisMode {
    /// Fixed layout listing each persona's answer.
    #[default]
    Template,
    /// Ask the engine to merge the answers, using `model`.
    Engine { model: Option<String> },
}

const TEMPLATE_HEADER: &str = "Integrated response";

/// Merges both perspectives of a duel into one text.
pub fn synthesize_template(duel: &DuelResponse) -> String {
    let mut out = format!("{TEMPLATE_HEADER} ({} perspectives)\n", duel.responses.len());
    for r in &duel.responses {
        out.push_str(&format!("\n[{}]\n{}\n", r.model_name, r.text));
    }
    out
}

/// The user message sent to the engine in engine mode: `<model>: <text>`
/// blocks separated by a blank line.
pub fn synthesis_input(duel: &DuelResponse) -> String {
    duel.responses
        .iter()
        .map(|r| format!("{}: {}", r.model_name, r.text))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub async fn synthesize(
    duel: &DuelResponse,
    engine: &dyn GenerationEngine,
    mode: &SynthesisMode,
) -> Result<String, DuelError> {
    match mode {
        SynthesisMode::Template => Ok(synthesize_template(duel)),
        SynthesisMode::Engine { model } => {
            let request = ChatRequest {
                label: "Synthesis".into(),
                model: model.clone(),
                system: SYNTHESIS_GUIDANCE.into(),
                user: synthesis_input(duel),
            };
            engine.complete(&request).await.map_err(DuelError::Synthesis)
        }
    }
}

/// Runs duels against one engine.
pub struct DuelRunner {
    engine: Arc<dyn GenerationEngine>,
    fallback: FallbackMessage,
    clock: Arc<dyn Clock>,
    ids: IdSource,
}

impl DuelRunner {
    pub fn new(engine: Arc<dyn GenerationEngine>) -> Self {
        Self {
            engine,
            fallback: FallbackMessage::default(),
            clock: Arc::new(SystemClock),
            ids: IdSource::new(),
        }
    }

    pub fn with_fallback(mut self, fallback: FallbackMessage) -> Self {
        self.fallback = fallback;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn engine(&self) -> &Arc<dyn GenerationEngine> {
        &self.engine
    }

    pub fn fallback_message(&self) -> &str {
        self.fallback.as_str()
    }

    pub async fn run(
        &self,
        prompt: &str,
        seed: u64,
        registry: &Registry,
        lexicon: &Lexicon,
    ) -> Result<DuelOutcome, DuelError> {
        if prompt.trim().is_empty() {
            return Err(DuelError::EmptyPrompt);
        }
        let classification = classify(prompt, lexicon);
        let Some(selection) = select_duel(&classification, registry, seed) else {
            return Ok(DuelOutcome::Fallback(FallbackResult {
                message: self.fallback.as_str().to_string(),
            }));
        };
        let engine = self.engine.as_ref();
        let (a, b) = tokio::join!(
            generate(&selection.persona_a, prompt, engine),
            generate(&selection.persona_b, prompt, engine)
        );
        Ok(DuelOutcome::Duel(DuelResponse {
            duel_id: self.ids.next().to_string(),
            prompt: prompt.to_string(),
            dimension: selection.dimension,
            responses: vec![a?, b?],
            created_at: self.clock.now(),
        }))
    }
}
